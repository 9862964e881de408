//! Multi-view label fusion: partial instances from back-projected masks are
//! linked into a sparse graph — edges from k-nearest OBB centroids pruned by
//! OBB IoU, weighted by the number of supporter nodes adjacent to both
//! endpoints — and clustered with the highly-connected-subgraphs algorithm.
//! Each cluster's point union, downsampled to the target spacing, becomes
//! one merged 3D instance.

mod hcs;
mod obb;

pub use hcs::{hcs_cluster, stoer_wagner, HcsOutcome, HcsStep};
pub use obb::{
    compute_obb, obb_intersection_volume, obb_iou, obb_iou_monte_carlo, Obb, ObbRecord,
    MIN_HALF_EXTENT,
};

use crate::error::{Error, Result};
use crate::masks::Modality;
use crate::scan_io::{voxel_downsample, PointCloud, ScanPoint};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// One back-projected 2D mask as a 3D point subset: a partial view of an
/// object from a single station and modality.
#[derive(Debug, Clone)]
pub struct PartialInstance {
    pub points: Vec<ScanPoint>,
    pub class_label: String,
    pub confidence: f64,
    pub station_id: String,
    pub modality: Modality,
    pub mask_id: u32,
    pub obb: Obb,
}

/// Undirected fusion graph over partial-instance bounding boxes.
/// Edges are stored as `(i, j)` with `i < j`, lexicographically sorted;
/// `weights[e]` is the supporter (triangle) count of edge `e`.
#[derive(Debug, Clone, Default)]
pub struct FusionGraph {
    pub node_count: usize,
    pub edges: Vec<(u32, u32)>,
    pub weights: Vec<u32>,
}

impl FusionGraph {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Builds the pruned, weighted graph: candidate pairs from symmetrized
/// (union) k-nearest-neighbor search over OBB centroids, kept when
/// `IoU(B_i, B_j) >= tau`, weighted by common-neighbor counts. Fewer than
/// two instances give an empty graph.
pub fn build_graph(instances: &[PartialInstance], k: usize, tau: f64) -> Result<FusionGraph> {
    if k == 0 {
        return Err(Error::Parameter("build_graph needs k >= 1".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Parameter(format!("tau {tau} outside [0, 1]")));
    }
    let n = instances.len();
    if n < 2 {
        return Ok(FusionGraph {
            node_count: n,
            ..Default::default()
        });
    }

    let centers: Vec<Vector3<f64>> = instances.iter().map(|p| p.obb.center).collect();
    let knn: Vec<Vec<u32>> = crate::par::map_range(n, |i| {
        let mut dist: Vec<(f64, u32)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((centers[j] - centers[i]).norm(), j as u32))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dist.truncate(k);
        dist.into_iter().map(|(_, j)| j).collect()
    });

    let mut candidates: Vec<(u32, u32)> = Vec::new();
    for (i, neighbors) in knn.iter().enumerate() {
        for &j in neighbors {
            let (a, b) = if (i as u32) < j { (i as u32, j) } else { (j, i as u32) };
            candidates.push((a, b));
        }
    }
    candidates.sort_unstable();
    candidates.dedup();

    let kept: Vec<Option<(u32, u32)>> = crate::par::map_slice(&candidates, |&(a, b)| {
        let iou = obb_iou(&instances[a as usize].obb, &instances[b as usize].obb);
        (iou >= tau).then_some((a, b))
    });
    let edges: Vec<(u32, u32)> = kept.into_iter().flatten().collect();

    let weights = supporter_weights(n, &edges);
    Ok(FusionGraph {
        node_count: n,
        edges,
        weights,
    })
}

/// Supporter count per edge: the number of nodes adjacent to both
/// endpoints, i.e. the triangle count through that edge.
pub fn supporter_weights(node_count: usize, edges: &[(u32, u32)]) -> Vec<u32> {
    let mut neighbors: Vec<Vec<u32>> = vec![Vec::new(); node_count];
    for &(a, b) in edges {
        neighbors[a as usize].push(b);
        neighbors[b as usize].push(a);
    }
    for list in &mut neighbors {
        list.sort_unstable();
    }
    crate::par::map_slice(edges, |&(a, b)| {
        common_count(&neighbors[a as usize], &neighbors[b as usize])
    })
}

fn common_count(a: &[u32], b: &[u32]) -> u32 {
    let (mut i, mut j, mut count) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// One merged 3D instance.
#[derive(Debug, Clone)]
pub struct FusedInstance {
    pub instance_id: u32,
    pub class_label: String,
    pub points: Vec<ScanPoint>,
    /// Number of partial observations merged into this instance.
    pub support_count: u32,
    pub obb: Obb,
}

#[derive(Debug, Clone, Default)]
pub struct InstanceSet {
    pub instances: Vec<FusedInstance>,
}

impl InstanceSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Sorted unique class labels; semantic id = position + 1 (0 is null).
    pub fn class_table(&self) -> Vec<String> {
        let mut classes: Vec<String> = self
            .instances
            .iter()
            .map(|i| i.class_label.clone())
            .collect();
        classes.sort();
        classes.dedup();
        classes
    }
}

/// Unites each cluster's member instances, downsamples the union to
/// `spacing`, and assigns the majority class (ties: highest summed
/// confidence, then lexicographic order).
pub fn merge_cluster_instances(
    clusters: &[Vec<u32>],
    instances: &[PartialInstance],
    spacing: f64,
) -> Result<InstanceSet> {
    let merged: Vec<Result<FusedInstance>> = crate::par::map_range(clusters.len(), |c| {
        let cluster = &clusters[c];
        let mut points: Vec<ScanPoint> = Vec::new();
        let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
        for &member in cluster {
            let inst = &instances[member as usize];
            points.extend_from_slice(&inst.points);
            let entry = votes.entry(inst.class_label.as_str()).or_insert((0, 0.0));
            entry.0 += 1;
            entry.1 += inst.confidence;
        }
        let class_label = votes
            .iter()
            .max_by(|(la, (ca, wa)), (lb, (cb, wb))| {
                ca.cmp(cb)
                    .then(wa.total_cmp(wb))
                    .then(lb.cmp(la)) // lexicographically smaller label wins ties
            })
            .map(|(label, _)| label.to_string())
            .unwrap_or_default();
        let cloud = voxel_downsample(&PointCloud::new(points), spacing)?;
        let positions = cloud.positions();
        Ok(FusedInstance {
            instance_id: c as u32,
            class_label,
            obb: compute_obb(&positions),
            points: cloud.points,
            support_count: cluster.len() as u32,
        })
    });
    let instances = merged.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(InstanceSet { instances })
}

// ---------------------------------------------------------------------------
// Instance set I/O: instances.json + a single labeled PLY
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct InstanceRecord {
    instance_id: u32,
    class: String,
    support_count: u32,
    point_count: usize,
    obb: ObbRecord,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceFile {
    classes: Vec<String>,
    instances: Vec<InstanceRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

/// Writes `instances.json` and `instances.ply` (per-vertex `semantic` and
/// `instance` properties) into `dir`.
pub fn save_instances(
    set: &InstanceSet,
    dir: &Path,
    provenance: Option<serde_json::Value>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let classes = set.class_table();
    let class_id = |label: &str| -> u16 {
        classes.iter().position(|c| c == label).map(|i| i as u16 + 1).unwrap_or(0)
    };

    let records: Vec<InstanceRecord> = set
        .instances
        .iter()
        .map(|inst| InstanceRecord {
            instance_id: inst.instance_id,
            class: inst.class_label.clone(),
            support_count: inst.support_count,
            point_count: inst.points.len(),
            obb: inst.obb.to_record(),
        })
        .collect();
    let file = InstanceFile {
        classes: classes.clone(),
        instances: records,
        provenance,
    };
    let json_path = dir.join("instances.json");
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::Format(format!("instances.json: {e}")))?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;

    let mut cloud = PointCloud::default();
    let mut semantic = Vec::new();
    let mut instance = Vec::new();
    for inst in &set.instances {
        let class = class_id(&inst.class_label);
        for p in &inst.points {
            cloud.points.push(*p);
            semantic.push(class);
            instance.push(inst.instance_id as i32);
        }
    }
    crate::scan_io::write_cloud(
        &dir.join("instances.ply"),
        &cloud,
        Some(&semantic),
        Some(&instance),
        &[],
    )
}

/// Rebuilds an instance set from a labeled cloud: points grouped by
/// non-negative instance id, class labels resolved through `classes`
/// (falling back to `class<id>` names). `support_count` is not recoverable
/// from a bare cloud and is reported as stored in `instances.json` when
/// available, else 0.
pub fn instances_from_labels(
    points: &[ScanPoint],
    semantic: &[u16],
    instance: &[i32],
    classes: &[String],
    support: &BTreeMap<u32, u32>,
) -> InstanceSet {
    let mut grouped: BTreeMap<u32, (Vec<ScanPoint>, u16)> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        if instance[i] >= 0 {
            let entry = grouped
                .entry(instance[i] as u32)
                .or_insert_with(|| (Vec::new(), semantic[i]));
            entry.0.push(*p);
        }
    }
    let instances = grouped
        .into_iter()
        .map(|(id, (points, class))| {
            let class_label = if class >= 1 && (class as usize) <= classes.len() {
                classes[class as usize - 1].clone()
            } else {
                format!("class{class}")
            };
            let positions: Vec<Vector3<f64>> = points.iter().map(|p| p.position).collect();
            FusedInstance {
                instance_id: id,
                class_label,
                obb: compute_obb(&positions),
                points,
                support_count: support.get(&id).copied().unwrap_or(0),
            }
        })
        .collect();
    InstanceSet { instances }
}

/// Loads an instance set from a labeled PLY, consulting a sibling
/// `instances.json` for class names and support counts when present.
pub fn load_instances(ply_path: &Path) -> Result<InstanceSet> {
    let cloud = crate::ply::read_ply(ply_path)?;
    let semantic = cloud
        .semantic
        .clone()
        .unwrap_or_else(|| vec![1; cloud.len()]);
    let instance = cloud.instance.clone().ok_or_else(|| {
        Error::Format(format!(
            "{}: missing field: vertex needs instance",
            ply_path.display()
        ))
    })?;
    let points: Vec<ScanPoint> = cloud
        .positions
        .iter()
        .zip(cloud.intensity.as_deref().unwrap_or(&[]).iter().chain(std::iter::repeat(&0.0)))
        .map(|(p, &i)| ScanPoint {
            position: *p,
            intensity: i,
        })
        .collect();

    let mut classes: Vec<String> = Vec::new();
    let mut support = BTreeMap::new();
    let sidecar = ply_path.with_file_name("instances.json");
    if sidecar.exists() {
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let file: InstanceFile = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", sidecar.display())))?;
        classes = file.classes;
        for record in file.instances {
            support.insert(record.instance_id, record.support_count);
        }
    }
    Ok(instances_from_labels(
        &points, &semantic, &instance, &classes, &support,
    ))
}
