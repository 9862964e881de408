//! Synthetic crop-plot scenes with exact ground truth: ellipsoid heads on
//! cylindrical stems over a ground plane, simulated multi-station spherical
//! scans with z-buffer occlusion, and oracle masks standing in for an
//! external 2D segmenter. Everything is deterministic per seed and emits the
//! same file formats as the real pipeline.

use crate::error::{Error, Result};
use crate::masks::{InstanceMask2D, MaskSet, Modality};
use crate::projection::SphericalImage;
use crate::scan_io::{ScanPoint, ScanStation};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const ORACLE_CLASS: &str = "head";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n_heads: usize,
    /// Ellipsoid half-axis range, meters.
    pub head_half_axes: [f64; 2],
    /// Stem height range, meters; zero disables stems.
    pub stem_height: [f64; 2],
    pub stem_radius: f64,
    /// Ground plane extent in x and y, meters; zero disables the ground.
    pub plot_extent: [f64; 2],
    /// Surface sampling density, points per square meter.
    pub surface_density: f64,
    /// Extra clutter patches per square meter of plot.
    pub occluder_density: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_heads: 50,
            head_half_axes: [0.015, 0.035],
            stem_height: [0.25, 0.45],
            stem_radius: 0.002,
            plot_extent: [1.2, 1.2],
            surface_density: 150_000.0,
            occluder_density: 0.0,
            seed: 7,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.head_half_axes[0] <= 0.0 || self.head_half_axes[1] < self.head_half_axes[0] {
            return Err(Error::Parameter("bad head_half_axes range".into()));
        }
        if self.stem_height[1] < self.stem_height[0] || self.stem_height[0] < 0.0 {
            return Err(Error::Parameter("bad stem_height range".into()));
        }
        if self.surface_density <= 0.0 {
            return Err(Error::Parameter("surface_density must be positive".into()));
        }
        if self.plot_extent[0] < 0.0 || self.plot_extent[1] < 0.0 {
            return Err(Error::Parameter("plot_extent must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadTruth {
    pub id: u32,
    pub centroid: [f64; 3],
    pub half_axes: [f64; 3],
    pub n_points: usize,
}

/// A generated scene: all points with per-point instance ids (-1 for
/// background) plus per-head truth records.
#[derive(Debug, Clone)]
pub struct OracleScene {
    pub points: Vec<ScanPoint>,
    pub instance_of: Vec<i32>,
    pub heads: Vec<HeadTruth>,
}

impl OracleScene {
    pub fn reference_set(&self) -> crate::eval::ReferenceSet {
        crate::eval::ReferenceSet {
            points: self
                .heads
                .iter()
                .map(|h| crate::eval::ReferencePoint {
                    id: h.id,
                    xyz: h.centroid,
                })
                .collect(),
        }
    }
}

/// Ellipsoid surface area by the Thomsen approximation (relative error
/// about 1%).
pub fn ellipsoid_area(a: f64, b: f64, c: f64) -> f64 {
    const P: f64 = 1.6075;
    let ap = a.powf(P);
    let bp = b.powf(P);
    let cp = c.powf(P);
    4.0 * std::f64::consts::PI * ((ap * bp + ap * cp + bp * cp) / 3.0).powf(1.0 / P)
}

/// Uniform point on an ellipsoid surface by rejection against the local
/// area distortion of the unit-sphere map.
fn sample_ellipsoid_surface(
    rng: &mut ChaCha8Rng,
    half: &Vector3<f64>,
) -> Vector3<f64> {
    let (a, b, c) = (half.x, half.y, half.z);
    let g_max = (b * c).max(a * c).max(a * b);
    loop {
        // Marsaglia direction.
        let mut u: Vector3<f64>;
        loop {
            u = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = u.norm_squared();
            if n > 1e-12 && n <= 1.0 {
                u /= n.sqrt();
                break;
            }
        }
        let g = ((b * c * u.x).powi(2) + (a * c * u.y).powi(2) + (a * b * u.z).powi(2)).sqrt();
        if rng.random_range(0.0..1.0) < g / g_max {
            return Vector3::new(a * u.x, b * u.y, c * u.z);
        }
    }
}

/// Generates the scene: heads (ellipsoids) with stems over a ground plane,
/// sampled at `surface_density`. Head centers keep a minimum spacing of
/// 2.2x the largest half-axis. Point counts are `round(density * area)`.
pub fn generate_scene(spec: &SceneSpec) -> Result<OracleScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let intensity = |rng: &mut ChaCha8Rng, base: f64| -> f32 {
        (base + noise.sample(rng)).clamp(0.0, 1.0) as f32
    };

    let mut points: Vec<ScanPoint> = Vec::new();
    let mut instance_of: Vec<i32> = Vec::new();
    let mut heads: Vec<HeadTruth> = Vec::new();

    // Head placement with minimum spacing, rejection sampled.
    let spacing = 2.2 * spec.head_half_axes[1];
    let mut centers_xy: Vec<(f64, f64)> = Vec::new();
    let mut guard = 0usize;
    while centers_xy.len() < spec.n_heads {
        let x = rng.random_range(-spec.plot_extent[0] / 2.0..=spec.plot_extent[0] / 2.0);
        let y = rng.random_range(-spec.plot_extent[1] / 2.0..=spec.plot_extent[1] / 2.0);
        let ok = centers_xy
            .iter()
            .all(|&(px, py)| ((px - x).powi(2) + (py - y).powi(2)).sqrt() >= spacing);
        if ok {
            centers_xy.push((x, y));
        }
        guard += 1;
        if guard > 100_000 {
            return Err(Error::Parameter(
                "cannot place heads: plot too small for n_heads at the minimum spacing".into(),
            ));
        }
    }

    for (id, &(x, y)) in centers_xy.iter().enumerate() {
        let half = Vector3::new(
            rng.random_range(spec.head_half_axes[0]..=spec.head_half_axes[1]),
            rng.random_range(spec.head_half_axes[0]..=spec.head_half_axes[1]),
            rng.random_range(spec.head_half_axes[0]..=spec.head_half_axes[1]),
        );
        let stem_h = if spec.stem_height[1] > 0.0 {
            rng.random_range(spec.stem_height[0]..=spec.stem_height[1])
        } else {
            0.0
        };
        let center = Vector3::new(x, y, stem_h + half.z);
        let n_pts = (spec.surface_density * ellipsoid_area(half.x, half.y, half.z)).round()
            as usize;

        for _ in 0..n_pts.max(1) {
            let p = center + sample_ellipsoid_surface(&mut rng, &half);
            points.push(ScanPoint {
                position: p,
                intensity: intensity(&mut rng, 0.75),
            });
            instance_of.push(id as i32);
        }
        heads.push(HeadTruth {
            id: id as u32,
            centroid: [center.x, center.y, center.z],
            half_axes: [half.x, half.y, half.z],
            n_points: n_pts.max(1),
        });

        // Stem: cylinder surface from the ground to the head underside.
        if stem_h > 0.0 && spec.stem_radius > 0.0 {
            let area = std::f64::consts::TAU * spec.stem_radius * stem_h;
            let n_stem = (spec.surface_density * area).round() as usize;
            for _ in 0..n_stem {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let z = rng.random_range(0.0..stem_h);
                points.push(ScanPoint {
                    position: Vector3::new(
                        x + spec.stem_radius * angle.cos(),
                        y + spec.stem_radius * angle.sin(),
                        z,
                    ),
                    intensity: intensity(&mut rng, 0.3),
                });
                instance_of.push(-1);
            }
        }
    }

    // Ground plane.
    let ground_area = spec.plot_extent[0] * spec.plot_extent[1];
    if ground_area > 0.0 {
        let n_ground = (spec.surface_density * ground_area).round() as usize;
        for _ in 0..n_ground {
            let x = rng.random_range(-spec.plot_extent[0] / 2.0..=spec.plot_extent[0] / 2.0);
            let y = rng.random_range(-spec.plot_extent[1] / 2.0..=spec.plot_extent[1] / 2.0);
            points.push(ScanPoint {
                position: Vector3::new(x, y, 0.0),
                intensity: intensity(&mut rng, 0.25),
            });
            instance_of.push(-1);
        }
    }

    // Occluders: small vertical blades of clutter.
    let n_occluders = (spec.occluder_density * ground_area).round() as usize;
    for _ in 0..n_occluders {
        let x = rng.random_range(-spec.plot_extent[0] / 2.0..=spec.plot_extent[0] / 2.0);
        let y = rng.random_range(-spec.plot_extent[1] / 2.0..=spec.plot_extent[1] / 2.0);
        let w = rng.random_range(0.005..0.02);
        let h = rng.random_range(0.05..0.3);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let n_pts = (spec.surface_density * w * h).round() as usize;
        for _ in 0..n_pts {
            let along = rng.random_range(-w / 2.0..w / 2.0);
            let up = rng.random_range(0.0..h);
            points.push(ScanPoint {
                position: Vector3::new(
                    x + along * angle.cos(),
                    y + along * angle.sin(),
                    up,
                ),
                intensity: intensity(&mut rng, 0.35),
            });
            instance_of.push(-1);
        }
    }

    Ok(OracleScene {
        points,
        instance_of,
        heads,
    })
}

/// Station pose for the simulator: position plus look-at orientation
/// (sensor +X toward `target`, +Z up-ish).
pub fn look_at_pose(origin: Vector3<f64>, target: Vector3<f64>) -> Result<Matrix3<f64>> {
    let forward = target - origin;
    if forward.norm() < 1e-9 {
        return Err(Error::Pose("station coincides with its target".into()));
    }
    let x = forward.normalize();
    let up = if x.z.abs() > 0.99 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let y = up.cross(&x).normalize();
    let z = x.cross(&y);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

/// Per-station point visibility ground truth.
#[derive(Debug, Clone)]
pub struct Visibility {
    /// Scene point index per station point.
    pub scene_index: Vec<u32>,
    /// Head id per station point (-1 = background).
    pub instance: Vec<i32>,
}

/// Simulates one scan: per angular cell of `beam_resolution`, only the
/// nearest scene point survives (z-buffer). The station must sit outside
/// the scene geometry. Station points keep their true coordinates.
pub fn simulate_scan(
    scene: &OracleScene,
    station_id: &str,
    origin: Vector3<f64>,
    orientation: Matrix3<f64>,
    beam_resolution: f64,
) -> Result<(ScanStation, Visibility)> {
    if !(beam_resolution > 0.0) {
        return Err(Error::Parameter("beam_resolution must be positive".into()));
    }
    for head in &scene.heads {
        let c = Vector3::from_column_slice(&head.centroid);
        let h = Vector3::from_column_slice(&head.half_axes);
        let local = origin - c;
        let q = (local.x / h.x).powi(2) + (local.y / h.y).powi(2) + (local.z / h.z).powi(2);
        if q <= 1.0 {
            return Err(Error::Pose(format!(
                "station {station_id} is inside head {}",
                head.id
            )));
        }
    }
    if origin.z <= 0.0 {
        return Err(Error::Pose(format!(
            "station {station_id} is at or below the ground plane"
        )));
    }

    // z-buffer keyed by angular cell.
    let mut cells: std::collections::HashMap<(i64, i64), (f64, u32)> =
        std::collections::HashMap::new();
    let rot_t = orientation.transpose();
    for (i, p) in scene.points.iter().enumerate() {
        let sensor = rot_t * (p.position - origin);
        let (az, el, r) = crate::projection::spherical_coords(&sensor);
        if r <= 0.0 {
            continue;
        }
        let key = (
            (az / beam_resolution).floor() as i64,
            (el / beam_resolution).floor() as i64,
        );
        let entry = cells.entry(key).or_insert((f64::INFINITY, u32::MAX));
        if r < entry.0 || (r == entry.0 && (i as u32) < entry.1) {
            *entry = (r, i as u32);
        }
    }

    let mut visible: Vec<u32> = cells.values().map(|&(_, i)| i).collect();
    visible.sort_unstable();

    let points: Vec<ScanPoint> = visible
        .iter()
        .map(|&i| scene.points[i as usize])
        .collect();
    let instance: Vec<i32> = visible
        .iter()
        .map(|&i| scene.instance_of[i as usize])
        .collect();

    Ok((
        ScanStation {
            station_id: station_id.to_string(),
            origin,
            orientation,
            points,
        },
        Visibility {
            scene_index: visible,
            instance,
        },
    ))
}

/// Corruption knobs for oracle masks: `pixel_dropout` thins mask pixels
/// i.i.d., `mask_dropout` removes whole masks, `spurious_rate` adds fake
/// masks per real one, `split_rate` cuts a mask in two through its pixel
/// centroid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CorruptionParams {
    pub pixel_dropout: f64,
    pub mask_dropout: f64,
    pub spurious_rate: f64,
    pub split_rate: f64,
    pub seed: u64,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        Self {
            pixel_dropout: 0.0,
            mask_dropout: 0.0,
            spurious_rate: 0.0,
            split_rate: 0.0,
            seed: 0,
        }
    }
}

/// Pure-ownership pixels per head: panorama pixels all of whose mapped
/// points belong to one head. Mixed and background pixels are skipped.
pub fn head_pixels(
    image: &SphericalImage,
    visibility: &Visibility,
) -> std::collections::BTreeMap<i32, Vec<u32>> {
    let mut pixels_per_head: std::collections::BTreeMap<i32, Vec<u32>> =
        std::collections::BTreeMap::new();
    for pix in 0..image.pixel_count() {
        let members = image.pixel_points(pix);
        if members.is_empty() {
            continue;
        }
        let first = visibility.instance[members[0] as usize];
        if first < 0 {
            continue;
        }
        if members
            .iter()
            .all(|&m| visibility.instance[m as usize] == first)
        {
            pixels_per_head.entry(first).or_default().push(pix as u32);
        }
    }
    pixels_per_head
}

/// Emits one binary mask per visible head and modality on the compressed
/// panorama, covering exactly the pixels whose mapped points all belong to
/// that head (mixed pixels stay unmasked). Confidence is 1.0. Corruption is
/// applied independently per modality.
pub fn emit_oracle_masks(
    image: &SphericalImage,
    visibility: &Visibility,
    corruption: &CorruptionParams,
) -> MaskSet {
    let pixels_per_head = head_pixels(image, visibility);

    let mut rng = ChaCha8Rng::seed_from_u64(corruption.seed);
    let mut masks: Vec<InstanceMask2D> = Vec::new();
    let mut next_id: u32 = 0;

    for modality in [Modality::Intensity, Modality::Range] {
        let mut real_count = 0usize;
        for pixels in pixels_per_head.values() {
            // Whole-mask dropout.
            if corruption.mask_dropout > 0.0 && rng.random_bool(corruption.mask_dropout.min(1.0))
            {
                continue;
            }
            // Pixel dropout.
            let kept: Vec<u32> = if corruption.pixel_dropout > 0.0 {
                pixels
                    .iter()
                    .copied()
                    .filter(|_| !rng.random_bool(corruption.pixel_dropout.min(1.0)))
                    .collect()
            } else {
                pixels.clone()
            };
            if kept.is_empty() {
                continue;
            }
            // Split through the pixel centroid, perpendicular to a random
            // direction in image space.
            let split = corruption.split_rate > 0.0
                && kept.len() >= 4
                && rng.random_bool(corruption.split_rate.min(1.0));
            let parts: Vec<Vec<u32>> = if split {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let (s, c) = angle.sin_cos();
                let coords: Vec<(f64, f64)> = kept
                    .iter()
                    .map(|&p| {
                        (
                            (p as usize % image.width) as f64,
                            (p as usize / image.width) as f64,
                        )
                    })
                    .collect();
                let cx = coords.iter().map(|c| c.0).sum::<f64>() / coords.len() as f64;
                let cy = coords.iter().map(|c| c.1).sum::<f64>() / coords.len() as f64;
                let (mut left, mut right) = (Vec::new(), Vec::new());
                for (&p, &(x, y)) in kept.iter().zip(&coords) {
                    if (x - cx) * c + (y - cy) * s >= 0.0 {
                        left.push(p);
                    } else {
                        right.push(p);
                    }
                }
                if left.is_empty() || right.is_empty() {
                    vec![kept]
                } else {
                    vec![left, right]
                }
            } else {
                vec![kept]
            };
            for pixels in parts {
                masks.push(InstanceMask2D {
                    station_id: image.station_id.clone(),
                    modality,
                    mask_id: next_id,
                    class_label: ORACLE_CLASS.to_string(),
                    confidence: 1.0,
                    width: image.width,
                    height: image.height,
                    pixels,
                });
                next_id += 1;
                real_count += 1;
            }
        }

        // Spurious masks: random blocks over non-empty pixels.
        let n_spurious = (corruption.spurious_rate * real_count as f64).round() as usize;
        let occupied: Vec<u32> = (0..image.pixel_count())
            .filter(|&p| !image.is_empty_pixel(p))
            .map(|p| p as u32)
            .collect();
        for _ in 0..n_spurious {
            if occupied.is_empty() {
                break;
            }
            let anchor = occupied[rng.random_range(0..occupied.len())] as usize;
            let (ax, ay) = (anchor % image.width, anchor / image.width);
            let half = rng.random_range(2..12usize);
            let mut pixels: Vec<u32> = Vec::new();
            for y in ay.saturating_sub(half)..(ay + half).min(image.height - 1) {
                for x in ax.saturating_sub(half)..(ax + half).min(image.width - 1) {
                    let p = y * image.width + x;
                    if !image.is_empty_pixel(p) {
                        pixels.push(p as u32);
                    }
                }
            }
            if !pixels.is_empty() {
                masks.push(InstanceMask2D {
                    station_id: image.station_id.clone(),
                    modality,
                    mask_id: next_id,
                    class_label: ORACLE_CLASS.to_string(),
                    confidence: 1.0,
                    width: image.width,
                    height: image.height,
                    pixels,
                });
                next_id += 1;
            }
        }
    }

    MaskSet { masks }
}
