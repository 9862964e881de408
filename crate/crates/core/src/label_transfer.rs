//! Pseudo-label interface between the projection stage and a downstream 3D
//! network: fused instance labels are transferred onto the merged target
//! cloud by nearest neighbor within the point spacing, refined by weighted
//! neighborhood voting and a strict per-instance majority rule, then
//! exported as overlapping sphere samples with optional augmentation.

use crate::error::{Error, Result};
use crate::fusion::InstanceSet;
use crate::scan_io::{bounds, PointCloud, ScanPoint};
use crate::spatial::PointGrid;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const NULL_SEMANTIC: u16 = 0;
pub const NULL_INSTANCE: i32 = -1;

/// Point cloud with per-point semantic class (0 = null) and instance id
/// (-1 = null). A non-null instance implies a non-null class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud: PointCloud,
    pub semantic: Vec<u16>,
    pub instance: Vec<i32>,
}

impl LabeledCloud {
    pub fn all_background(cloud: PointCloud) -> Self {
        let n = cloud.len();
        Self {
            cloud,
            semantic: vec![NULL_SEMANTIC; n],
            instance: vec![NULL_INSTANCE; n],
        }
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    /// Count of points violating `instance >= 0 => semantic != 0`.
    pub fn invariant_violations(&self) -> usize {
        self.instance
            .iter()
            .zip(&self.semantic)
            .filter(|(&inst, &sem)| inst >= 0 && sem == NULL_SEMANTIC)
            .count()
    }
}

/// Transfers instance labels onto `target`: each target point copies the
/// labels of its nearest instance point within `spacing`, or stays null.
/// Semantic ids come from the instance set's sorted class table (1-based).
pub fn transfer_labels(
    target: &PointCloud,
    instances: &InstanceSet,
    spacing: f64,
) -> Result<LabeledCloud> {
    if !(spacing > 0.0) {
        return Err(Error::Parameter("transfer radius must be positive".into()));
    }
    let classes = instances.class_table();
    let class_id = |label: &str| -> u16 {
        classes
            .iter()
            .position(|c| c == label)
            .map(|i| i as u16 + 1)
            .unwrap_or(NULL_SEMANTIC)
    };

    let mut query_positions: Vec<Vector3<f64>> = Vec::new();
    let mut query_labels: Vec<(u16, i32)> = Vec::new();
    for inst in &instances.instances {
        let sem = class_id(&inst.class_label);
        for p in &inst.points {
            query_positions.push(p.position);
            query_labels.push((sem, inst.instance_id as i32));
        }
    }
    if query_positions.is_empty() {
        return Ok(LabeledCloud::all_background(target.clone()));
    }
    let grid = PointGrid::build(query_positions, spacing);

    let labels: Vec<(u16, i32)> = crate::par::map_range(target.len(), |i| {
        match grid.nearest_within(&target.points[i].position, spacing) {
            Some((q, _)) => query_labels[q as usize],
            None => (NULL_SEMANTIC, NULL_INSTANCE),
        }
    });
    let (semantic, instance) = labels.into_iter().unzip();
    Ok(LabeledCloud {
        cloud: target.clone(),
        semantic,
        instance,
    })
}

/// Joint `(semantic, instance)` re-vote per point over the neighborhood of
/// radius `spacing * 1.2 * sqrt(3)`. Weights are inverse distance with a
/// `spacing / 10` softening floor (or uniform when `weighted` is false);
/// null labels vote like any other when `allow_null_votes` is set. A point
/// with no voting neighbors keeps its label.
pub fn refine_majority_vote(
    labeled: &LabeledCloud,
    spacing: f64,
    weighted: bool,
    allow_null_votes: bool,
) -> Result<LabeledCloud> {
    if !(spacing > 0.0) {
        return Err(Error::Parameter("vote radius must be positive".into()));
    }
    let radius = vote_radius(spacing);
    let positions = labeled.cloud.positions();
    let grid = PointGrid::build(positions.clone(), radius);
    let soften = spacing / 10.0;

    let labels: Vec<(u16, i32)> = crate::par::map_range(labeled.len(), |i| {
        let own = (labeled.semantic[i], labeled.instance[i]);
        let mut votes: BTreeMap<(u16, i32), f64> = BTreeMap::new();
        grid.for_each_within(&positions[i], radius, |j, dist| {
            let candidate = (labeled.semantic[j as usize], labeled.instance[j as usize]);
            if !allow_null_votes && candidate == (NULL_SEMANTIC, NULL_INSTANCE) {
                return;
            }
            let weight = if weighted { 1.0 / (dist + soften) } else { 1.0 };
            *votes.entry(candidate).or_insert(0.0) += weight;
        });
        let mut winner = own;
        let mut best = f64::NEG_INFINITY;
        for (&candidate, &weight) in &votes {
            if weight > best {
                best = weight;
                winner = candidate;
            }
        }
        winner
    });
    let (semantic, instance) = labels.into_iter().unzip();
    Ok(LabeledCloud {
        cloud: labeled.cloud.clone(),
        semantic,
        instance,
    })
}

/// Voting radius for a given point spacing: `spacing * 1.2 * sqrt(3)`,
/// voxel reachability with a 1.2 jitter margin.
pub fn vote_radius(spacing: f64) -> f64 {
    spacing * 1.2 * 3.0_f64.sqrt()
}

/// Strict per-instance consistency: when at least 80% of an instance's
/// points share one class, the whole instance takes it; otherwise the
/// instance resets to null labels. The 80% boundary is inclusive and
/// evaluated in integer arithmetic.
pub fn instance_majority_reset(labeled: &LabeledCloud) -> LabeledCloud {
    let mut members: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (i, &inst) in labeled.instance.iter().enumerate() {
        if inst >= 0 {
            members.entry(inst).or_default().push(i);
        }
    }

    let mut semantic = labeled.semantic.clone();
    let mut instance = labeled.instance.clone();
    for (_, idx) in members {
        let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
        for &i in &idx {
            *counts.entry(labeled.semantic[i]).or_insert(0) += 1;
        }
        let (&winner, &count) = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .unwrap();
        let keep = winner != NULL_SEMANTIC && count * 10 >= idx.len() * 8;
        for &i in &idx {
            if keep {
                semantic[i] = winner;
            } else {
                semantic[i] = NULL_SEMANTIC;
                instance[i] = NULL_INSTANCE;
            }
        }
    }
    LabeledCloud {
        cloud: labeled.cloud.clone(),
        semantic,
        instance,
    }
}

/// One exported training sample: the labeled points within `radius` of a
/// grid-placed center.
#[derive(Debug, Clone)]
pub struct SphereSample {
    pub id: u32,
    pub center: Vector3<f64>,
    pub radius: f64,
    /// Indices into the source cloud.
    pub indices: Vec<u32>,
    pub points: Vec<ScanPoint>,
    pub semantic: Vec<u16>,
    pub instance: Vec<i32>,
}

/// Samples overlapping spheres on a cubic center grid of pitch `stride`
/// over the cloud's bounding box; empty spheres are dropped. Every point is
/// covered when `stride <= radius * 2 / sqrt(3)`.
pub fn sample_spheres(
    labeled: &LabeledCloud,
    radius: f64,
    stride: f64,
) -> Result<Vec<SphereSample>> {
    if !(radius > 0.0) || !(stride > 0.0) {
        return Err(Error::Parameter(
            "sphere radius and stride must be positive".into(),
        ));
    }
    if labeled.is_empty() {
        return Ok(Vec::new());
    }
    let positions = labeled.cloud.positions();
    let (lo, hi) = bounds(&positions);
    let grid = PointGrid::build(positions, radius);

    let steps = |span: f64| ((span / stride).ceil() as usize).max(1);
    let (nx, ny, nz) = (steps(hi.x - lo.x), steps(hi.y - lo.y), steps(hi.z - lo.z));
    let mut centers = Vec::with_capacity(nx * ny * nz);
    for ix in 0..nx {
        for iy in 0..ny {
            for iz in 0..nz {
                centers.push(Vector3::new(
                    lo.x + (ix as f64 + 0.5) * stride,
                    lo.y + (iy as f64 + 0.5) * stride,
                    lo.z + (iz as f64 + 0.5) * stride,
                ));
            }
        }
    }

    let members: Vec<Vec<u32>> = crate::par::map_slice(&centers, |center| {
        let mut idx = grid.within(center, radius);
        idx.sort_unstable();
        idx
    });

    let mut samples = Vec::new();
    for (center, indices) in centers.into_iter().zip(members) {
        if indices.is_empty() {
            continue;
        }
        let points = indices
            .iter()
            .map(|&i| labeled.cloud.points[i as usize])
            .collect();
        let semantic = indices.iter().map(|&i| labeled.semantic[i as usize]).collect();
        let instance = indices.iter().map(|&i| labeled.instance[i as usize]).collect();
        samples.push(SphereSample {
            id: samples.len() as u32,
            center,
            radius,
            indices,
            points,
            semantic,
            instance,
        });
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Gaussian coordinate noise standard deviation, meters.
    pub noise_stdev: f64,
    /// Maximum rotation magnitude about the Z axis, radians.
    pub max_rotation: f64,
    /// Anisotropic per-axis scale range.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Probability of mirroring the X coordinate.
    pub flip_probability: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            noise_stdev: 0.0003,
            max_rotation: std::f64::consts::PI,
            scale_min: 0.9,
            scale_max: 1.1,
            flip_probability: 0.5,
        }
    }
}

/// The transform drawn for one augmented sphere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub seed: u64,
    pub rotation: f64,
    pub scale: [f64; 3],
    pub flip_x: bool,
    pub noise_stdev: f64,
}

/// Applies noise, a Z rotation, anisotropic scaling and an optional X flip,
/// in that order, about the sphere center. Labels are untouched; the draw
/// is fully determined by `seed`.
pub fn augment_sphere(
    sample: &SphereSample,
    params: &AugmentParams,
    seed: u64,
) -> (SphereSample, AugmentRecord) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotation = if params.max_rotation > 0.0 {
        rng.random_range(-params.max_rotation..params.max_rotation)
    } else {
        0.0
    };
    let scale = if params.scale_max > params.scale_min {
        [
            rng.random_range(params.scale_min..params.scale_max),
            rng.random_range(params.scale_min..params.scale_max),
            rng.random_range(params.scale_min..params.scale_max),
        ]
    } else {
        [params.scale_min; 3]
    };
    let flip_x = rng.random_bool(params.flip_probability);

    let (s, c) = rotation.sin_cos();
    let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    let noise = Normal::new(0.0, params.noise_stdev.max(f64::MIN_POSITIVE)).unwrap();

    let points: Vec<ScanPoint> = sample
        .points
        .iter()
        .map(|p| {
            let mut local = p.position - sample.center;
            if params.noise_stdev > 0.0 {
                local += Vector3::new(
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                    noise.sample(&mut rng),
                );
            }
            local = rot * local;
            local = Vector3::new(local.x * scale[0], local.y * scale[1], local.z * scale[2]);
            if flip_x {
                local.x = -local.x;
            }
            ScanPoint {
                position: sample.center + local,
                intensity: p.intensity,
            }
        })
        .collect();

    let record = AugmentRecord {
        seed,
        rotation,
        scale,
        flip_x,
        noise_stdev: params.noise_stdev,
    };
    (
        SphereSample {
            points,
            ..sample.clone()
        },
        record,
    )
}

// ---------------------------------------------------------------------------
// Sphere export
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct SphereFileRecord {
    pub id: u32,
    pub center: [f64; 3],
    pub point_count: usize,
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SphereIndex {
    pub radius: f64,
    pub stride: f64,
    pub seed: u64,
    pub spheres: Vec<SphereFileRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

/// Writes one labeled PLY per sphere plus `spheres.json` into `dir`.
pub fn export_spheres(
    dir: &Path,
    spheres: &[(SphereSample, Option<AugmentRecord>)],
    radius: f64,
    stride: f64,
    seed: u64,
    provenance: Option<serde_json::Value>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(spheres.len());
    for (i, (sample, augment)) in spheres.iter().enumerate() {
        let file = format!("sphere_{i:05}.ply");
        crate::scan_io::write_cloud(
            &dir.join(&file),
            &PointCloud::new(sample.points.clone()),
            Some(&sample.semantic),
            Some(&sample.instance),
            &[],
        )?;
        records.push(SphereFileRecord {
            id: sample.id,
            center: [sample.center.x, sample.center.y, sample.center.z],
            point_count: sample.points.len(),
            file,
            augment: augment.clone(),
        });
    }
    let index = SphereIndex {
        radius,
        stride,
        seed,
        spheres: records,
        provenance,
    };
    let path = dir.join("spheres.json");
    let json = serde_json::to_string_pretty(&index)
        .map_err(|e| Error::Format(format!("spheres.json: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
}
