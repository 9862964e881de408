//! Oriented bounding boxes: PCA construction, exact intersection-over-union
//! via half-space clipping, and a seeded Monte-Carlo estimator used as the
//! reference oracle in tests.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Degeneracy floor for box half-extents, meters.
pub const MIN_HALF_EXTENT: f64 = 1e-3;

/// Box aligned to `axes` (columns, orthonormal, det +1) around `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct Obb {
    pub center: Vector3<f64>,
    pub axes: Matrix3<f64>,
    pub half_extents: Vector3<f64>,
}

/// Serialized form used in `instances.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObbRecord {
    pub center: [f64; 3],
    /// Row-major 3x3 axis matrix.
    pub axes: [f64; 9],
    pub half_extents: [f64; 3],
}

impl Obb {
    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let e = &self.half_extents;
        let mut out = [Vector3::zeros(); 8];
        for (i, corner) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *corner = self.center
                + self.axes * Vector3::new(sx * e.x, sy * e.y, sz * e.z);
        }
        out
    }

    pub fn contains(&self, p: &Vector3<f64>, slack: f64) -> bool {
        let local = self.axes.transpose() * (p - self.center);
        local.x.abs() <= self.half_extents.x + slack
            && local.y.abs() <= self.half_extents.y + slack
            && local.z.abs() <= self.half_extents.z + slack
    }

    pub fn to_record(&self) -> ObbRecord {
        ObbRecord {
            center: [self.center.x, self.center.y, self.center.z],
            axes: {
                let mut m = [0.0; 9];
                for r in 0..3 {
                    for c in 0..3 {
                        m[r * 3 + c] = self.axes[(r, c)];
                    }
                }
                m
            },
            half_extents: [
                self.half_extents.x,
                self.half_extents.y,
                self.half_extents.z,
            ],
        }
    }

    pub fn from_record(r: &ObbRecord) -> Obb {
        Obb {
            center: Vector3::from_column_slice(&r.center),
            axes: Matrix3::from_row_slice(&r.axes),
            half_extents: Vector3::from_column_slice(&r.half_extents),
        }
    }
}

/// PCA box: axes from the point covariance, extents from the min/max
/// projection onto each axis (floored at [`MIN_HALF_EXTENT`]), center at the
/// projection midpoint. Deterministic: eigenpairs sorted by eigenvalue
/// descending, each axis's dominant component made positive, determinant
/// fixed to +1 by flipping the last axis.
pub fn compute_obb(points: &[Vector3<f64>]) -> Obb {
    assert!(!points.is_empty(), "compute_obb needs at least one point");
    let n = points.len() as f64;
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;

    let eigen = nalgebra::SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let mut axes = Matrix3::zeros();
    for (slot, &src) in order.iter().enumerate() {
        let mut axis: Vector3<f64> = eigen.eigenvectors.column(src).into();
        if axis.norm() < 0.5 {
            axis = Matrix3::identity().column(slot).into();
        }
        let dominant = axis.iamax();
        if axis[dominant] < 0.0 {
            axis = -axis;
        }
        axes.set_column(slot, &axis);
    }
    if axes.determinant() < 0.0 {
        let flipped = -axes.column(2);
        axes.set_column(2, &flipped);
    }

    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        let local = axes.transpose() * (p - centroid);
        lo = lo.inf(&local);
        hi = hi.sup(&local);
    }
    let mid = (lo + hi) / 2.0;
    let half_extents = ((hi - lo) / 2.0).map(|e| e.max(MIN_HALF_EXTENT));
    Obb {
        center: centroid + axes * mid,
        axes,
        half_extents,
    }
}

// ---------------------------------------------------------------------------
// Exact intersection by half-space clipping
// ---------------------------------------------------------------------------

const PLANE_EPS: f64 = 1e-9;

type Face = Vec<Vector3<f64>>;

fn box_faces(obb: &Obb) -> Vec<Face> {
    let c = obb.corners();
    // Quad corner indices per face of the [-1,1]^3 corner numbering.
    const FACES: [[usize; 4]; 6] = [
        [0, 2, 6, 4], // -x
        [1, 5, 7, 3], // +x
        [0, 4, 5, 1], // -y
        [2, 3, 7, 6], // +y
        [0, 1, 3, 2], // -z
        [4, 6, 7, 5], // +z
    ];
    FACES
        .iter()
        .map(|ids| ids.iter().map(|&i| c[i]).collect())
        .collect()
}

/// Clips the faces against `n . x <= d`, appending a cap polygon across the
/// cut. Faces keep at least triangle size or are dropped.
fn clip_halfspace(faces: &[Face], n: &Vector3<f64>, d: f64) -> Vec<Face> {
    let mut out: Vec<Face> = Vec::with_capacity(faces.len() + 1);
    let mut crossings: Vec<Vector3<f64>> = Vec::new();
    for face in faces {
        let mut kept: Face = Vec::with_capacity(face.len() + 2);
        for i in 0..face.len() {
            let p = face[i];
            let q = face[(i + 1) % face.len()];
            let sp = n.dot(&p) - d;
            let sq = n.dot(&q) - d;
            let p_in = sp <= PLANE_EPS;
            let q_in = sq <= PLANE_EPS;
            if p_in {
                kept.push(p);
            }
            if p_in != q_in {
                let t = sp / (sp - sq);
                let x = p + (q - p) * t;
                kept.push(x);
                crossings.push(x);
            }
        }
        if kept.len() >= 3 {
            out.push(kept);
        }
    }
    if out.is_empty() {
        return out;
    }

    // Cap polygon: dedup crossing points, order by angle in the cut plane.
    let mut cap: Vec<Vector3<f64>> = Vec::new();
    for x in crossings {
        if cap.iter().all(|c| (c - x).norm() > 1e-9) {
            cap.push(x);
        }
    }
    if cap.len() >= 3 {
        let centroid: Vector3<f64> = cap.iter().sum::<Vector3<f64>>() / cap.len() as f64;
        let n_unit = n.normalize();
        let seed = if n_unit.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let u = n_unit.cross(&seed).normalize();
        let v = n_unit.cross(&u);
        cap.sort_by(|a, b| {
            let pa = a - centroid;
            let pb = b - centroid;
            let ta = pa.dot(&v).atan2(pa.dot(&u));
            let tb = pb.dot(&v).atan2(pb.dot(&u));
            ta.total_cmp(&tb)
        });
        out.push(cap);
    }
    out
}

/// Volume of a convex polyhedron given as face polygons, via pyramids from
/// the vertex centroid. Orientation-free: uses unsigned face areas and
/// plane distances.
fn polyhedron_volume(faces: &[Face]) -> f64 {
    let mut vertex_sum = Vector3::zeros();
    let mut count = 0usize;
    for face in faces {
        for p in face {
            vertex_sum += p;
            count += 1;
        }
    }
    if count == 0 {
        return 0.0;
    }
    let centroid = vertex_sum / count as f64;
    let mut volume = 0.0;
    for face in faces {
        // Newell area vector; valid for planar polygons.
        let mut area2 = Vector3::zeros();
        for i in 0..face.len() {
            area2 += face[i].cross(&face[(i + 1) % face.len()]);
        }
        let area = area2.norm() / 2.0;
        if area < 1e-16 {
            continue;
        }
        let normal = area2.normalize();
        let dist = (normal.dot(&(face[0] - centroid))).abs();
        volume += area * dist / 3.0;
    }
    volume
}

/// Exact intersection volume of two boxes: box `a`'s polytope clipped by
/// box `b`'s six half-spaces.
pub fn obb_intersection_volume(a: &Obb, b: &Obb) -> f64 {
    let mut faces = box_faces(a);
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let n: Vector3<f64> = b.axes.column(axis) * sign;
            let d = n.dot(&b.center) + b.half_extents[axis];
            faces = clip_halfspace(&faces, &n, d);
            if faces.is_empty() {
                return 0.0;
            }
        }
    }
    polyhedron_volume(&faces)
}

/// Exact IoU of two oriented boxes. Disjoint boxes give 0.
pub fn obb_iou(a: &Obb, b: &Obb) -> f64 {
    let inter = obb_intersection_volume(a, b).min(a.volume()).min(b.volume());
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Monte-Carlo IoU reference: uniform samples in `a`, membership test in
/// `b`. Chunked so the result is independent of thread count.
pub fn obb_iou_monte_carlo(a: &Obb, b: &Obb, samples: u64, seed: u64) -> f64 {
    const CHUNK: u64 = 1 << 16;
    let chunks = samples.div_ceil(CHUNK) as usize;
    let hits = crate::par::sum_range_u64(chunks, |chunk| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (chunk as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let n = CHUNK.min(samples - chunk as u64 * CHUNK);
        let mut hits = 0u64;
        for _ in 0..n {
            let u = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let p = a.center + a.axes * u.component_mul(&a.half_extents);
            if b.contains(&p, 0.0) {
                hits += 1;
            }
        }
        hits
    });
    let inter = a.volume() * hits as f64 / samples as f64;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
