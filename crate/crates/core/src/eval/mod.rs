//! Evaluation against sparse references: one annotated 3D point per object.
//!
//! Each predicted instance is scored by its minimum point distance to every
//! reference; pairs within the distance gate enter a one-to-one Hungarian
//! assignment (maximum matching, ties resolved toward minimum total
//! distance via a large-sentinel construction). Matched pairs are true
//! positives, leftover predictions false positives, leftover references
//! false negatives. Also provides the under-segmentation ratio at a stricter
//! gate and the greedy 3D-IoU NMS used to merge two prediction sets.

mod hungarian;

pub use hungarian::{solve as solve_assignment, total_cost as assignment_cost};

use crate::error::{Error, Result};
use crate::fusion::{obb_iou, FusedInstance, InstanceSet};
use crate::spatial::PointGrid;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Forbidden-entry sentinel; far above any admissible total distance.
pub const GATE_SENTINEL: f64 = 1e6;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub id: u32,
    pub xyz: [f64; 3],
}

impl ReferencePoint {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.xyz)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferenceSet {
    pub points: Vec<ReferencePoint>,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Reads references from JSON (`[{id, xyz: [x, y, z]}]`) or a whitespace
/// 3-column text file in meters (ids = line numbers).
pub fn load_references(path: &Path) -> Result<ReferenceSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: bad reference file: {e}", path.display())))
    } else {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cols: Vec<f64> = trimmed
                .split([' ', '\t', ','])
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| {
                    Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
            if cols.len() != 3 {
                return Err(Error::Format(format!(
                    "{}:{}: expected 3 columns, got {}",
                    path.display(),
                    lineno + 1,
                    cols.len()
                )));
            }
            points.push(ReferencePoint {
                id: points.len() as u32,
                xyz: [cols[0], cols[1], cols[2]],
            });
        }
        Ok(ReferenceSet { points })
    }
}

pub fn save_references(path: &Path, refs: &ReferenceSet) -> Result<()> {
    let json = serde_json::to_string_pretty(refs)
        .map_err(|e| Error::Format(format!("reference file: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatchPair {
    /// Index into the instance list.
    pub instance: usize,
    /// Index into the reference list.
    pub reference: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_instances: Vec<usize>,
    pub unmatched_references: Vec<usize>,
}

/// Min distance from each instance's point set to each reference, with
/// entries beyond `gate` replaced by [`GATE_SENTINEL`]. Rows are instances,
/// columns references.
pub fn distance_matrix(
    instances: &InstanceSet,
    refs: &ReferenceSet,
    gate: f64,
) -> Vec<Vec<f64>> {
    let n_inst = instances.len();
    if n_inst == 0 || refs.is_empty() {
        return vec![vec![GATE_SENTINEL; refs.len()]; n_inst];
    }
    // One grid over all instance points; each hit updates its instance's row.
    let mut owner: Vec<u32> = Vec::new();
    let mut positions: Vec<Vector3<f64>> = Vec::new();
    for (k, inst) in instances.instances.iter().enumerate() {
        for p in &inst.points {
            owner.push(k as u32);
            positions.push(p.position);
        }
    }
    let grid = PointGrid::build(positions, gate.max(1e-9));

    let columns: Vec<Vec<f64>> = crate::par::map_range(refs.len(), |j| {
        let mut column = vec![GATE_SENTINEL; n_inst];
        grid.for_each_within(&refs.points[j].position(), gate, |p, dist| {
            let k = owner[p as usize] as usize;
            if dist < column[k] {
                column[k] = dist;
            }
        });
        column
    });

    let mut matrix = vec![vec![GATE_SENTINEL; refs.len()]; n_inst];
    for (j, column) in columns.iter().enumerate() {
        for (k, &d) in column.iter().enumerate() {
            matrix[k][j] = d;
        }
    }
    matrix
}

/// One-to-one assignment between instances and references under the
/// distance gate `d_tau`: maximum matching over admissible pairs, minimum
/// total distance among those. Empty sides yield all-unmatched results.
pub fn match_instances(
    instances: &InstanceSet,
    refs: &ReferenceSet,
    d_tau: f64,
) -> Result<MatchResult> {
    if !(d_tau > 0.0) {
        return Err(Error::Parameter("d_tau must be positive".into()));
    }
    let matrix = distance_matrix(instances, refs, d_tau);
    Ok(match_from_matrix(&matrix, refs.len()))
}

/// Assignment on a prebuilt gated matrix (rows = instances). Entries at or
/// above [`GATE_SENTINEL`] are forbidden; dummy rows/columns pad the matrix
/// square at zero cost, so minimizing total cost maximizes matches first.
pub fn match_from_matrix(matrix: &[Vec<f64>], n_refs: usize) -> MatchResult {
    let n_inst = matrix.len();
    let n = n_inst.max(n_refs);
    if n == 0 {
        return MatchResult::default();
    }
    if n_inst == 0 || n_refs == 0 {
        return MatchResult {
            pairs: Vec::new(),
            unmatched_instances: (0..n_inst).collect(),
            unmatched_references: (0..n_refs).collect(),
        };
    }

    let mut cost = vec![vec![0.0f64; n]; n];
    for (k, row) in matrix.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            cost[k][j] = d.min(GATE_SENTINEL);
        }
    }
    let assignment = hungarian::solve(&cost);

    let mut result = MatchResult::default();
    let mut ref_matched = vec![false; n_refs];
    for (k, &j) in assignment.iter().enumerate().take(n_inst) {
        if j < n_refs && cost[k][j] < GATE_SENTINEL {
            result.pairs.push(MatchPair {
                instance: k,
                reference: j,
                distance: cost[k][j],
            });
            ref_matched[j] = true;
        } else {
            result.unmatched_instances.push(k);
        }
    }
    result.unmatched_references = ref_matched
        .iter()
        .enumerate()
        .filter(|(_, &m)| !m)
        .map(|(j, _)| j)
        .collect();
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "tp")]
    pub true_positives: u64,
    #[serde(rename = "fp")]
    pub false_positives: u64,
    #[serde(rename = "fn")]
    pub false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(rename = "ce")]
    pub counting_error: i64,
    #[serde(rename = "rce")]
    pub relative_counting_error: f64,
    #[serde(rename = "usr_percent", skip_serializing_if = "Option::is_none")]
    pub usr_percent: Option<f64>,
}

/// Detection metrics from raw counts. Zero denominators produce zeros.
pub fn metrics_from_counts(tp: u64, fp: u64, fn_: u64) -> EvalReport {
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let detections = (tp + fp) as i64;
    let references = (tp + fn_) as i64;
    let counting_error = detections - references;
    let relative_counting_error = if references == 0 {
        0.0
    } else {
        counting_error as f64 / references as f64
    };
    EvalReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision,
        recall,
        f1,
        counting_error,
        relative_counting_error,
        usr_percent: None,
    }
}

pub fn compute_metrics(matches: &MatchResult) -> EvalReport {
    metrics_from_counts(
        matches.pairs.len() as u64,
        matches.unmatched_instances.len() as u64,
        matches.unmatched_references.len() as u64,
    )
}

/// Under-segmentation ratio in percent: the share of instances whose point
/// set lies within `d_tau_strict` of two or more references.
pub fn compute_usr(instances: &InstanceSet, refs: &ReferenceSet, d_tau_strict: f64) -> Result<f64> {
    if !(d_tau_strict > 0.0) {
        return Err(Error::Parameter("d_tau_strict must be positive".into()));
    }
    if instances.is_empty() {
        log::warn!("USR undefined for zero instances; reporting 0");
        return Ok(0.0);
    }
    let matrix = distance_matrix(instances, refs, d_tau_strict);
    let under = matrix
        .iter()
        .filter(|row| row.iter().filter(|&&d| d < GATE_SENTINEL).count() >= 2)
        .count();
    Ok(100.0 * under as f64 / instances.len() as f64)
}

/// Greedy non-maximum suppression over two prediction sets: instances
/// ranked by point count (descending; ties favor set `a`, then lower id)
/// are kept when their OBB IoU with every already-kept instance stays below
/// `iou_threshold`. Kept instances are renumbered sequentially.
pub fn merge_predictions_nms(
    a: &InstanceSet,
    b: &InstanceSet,
    iou_threshold: f64,
) -> Result<InstanceSet> {
    if !(0.0 < iou_threshold && iou_threshold < 1.0) {
        return Err(Error::Parameter(format!(
            "nms iou threshold {iou_threshold} outside (0, 1)"
        )));
    }
    let mut ranked: Vec<(usize, &FusedInstance)> = a
        .instances
        .iter()
        .map(|i| (0usize, i))
        .chain(b.instances.iter().map(|i| (1usize, i)))
        .collect();
    ranked.sort_by(|(sa, ia), (sb, ib)| {
        ib.points
            .len()
            .cmp(&ia.points.len())
            .then(sa.cmp(sb))
            .then(ia.instance_id.cmp(&ib.instance_id))
    });

    let mut kept: Vec<FusedInstance> = Vec::new();
    for (_, candidate) in ranked {
        let suppressed = kept
            .iter()
            .any(|k| obb_iou(&k.obb, &candidate.obb) >= iou_threshold);
        if !suppressed {
            let mut inst = candidate.clone();
            inst.instance_id = kept.len() as u32;
            kept.push(inst);
        }
    }
    Ok(InstanceSet { instances: kept })
}

// ---------------------------------------------------------------------------
// Report file
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct MatchRecord {
    pub instance_id: u32,
    pub reference_id: u32,
    pub distance_m: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalFile {
    pub report: EvalReport,
    pub d_tau_m: f64,
    pub d_tau_strict_m: f64,
    pub matches: Vec<MatchRecord>,
    pub unmatched_instance_ids: Vec<u32>,
    pub unmatched_reference_ids: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

pub fn save_eval_file(path: &Path, file: &EvalFile) -> Result<()> {
    let json = serde_json::to_string_pretty(file)
        .map_err(|e| Error::Format(format!("eval report: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Renders the report as an aligned text block, one metric per row.
pub fn render_report(label: &str, report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("Metric  {label}\n"));
    out.push_str(&format!("TP      {}\n", report.true_positives));
    out.push_str(&format!("FP      {}\n", report.false_positives));
    out.push_str(&format!("FN      {}\n", report.false_negatives));
    out.push_str(&format!("P       {:.2}\n", report.precision));
    out.push_str(&format!("R       {:.2}\n", report.recall));
    out.push_str(&format!("F1      {:.2}\n", report.f1));
    out.push_str(&format!("CE      {}\n", report.counting_error));
    out.push_str(&format!("RCE     {:.2}\n", report.relative_counting_error));
    if let Some(usr) = report.usr_percent {
        out.push_str(&format!("USR     {usr:.1}%\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::compute_obb;
    use crate::scan_io::ScanPoint;

    fn instance_at(id: u32, points: &[[f64; 3]]) -> FusedInstance {
        let points: Vec<ScanPoint> = points
            .iter()
            .map(|p| ScanPoint {
                position: Vector3::from_column_slice(p),
                intensity: 0.5,
            })
            .collect();
        let positions: Vec<Vector3<f64>> = points.iter().map(|p| p.position).collect();
        FusedInstance {
            instance_id: id,
            class_label: "head".into(),
            obb: compute_obb(&positions),
            points,
            support_count: 3,
        }
    }

    fn refs(points: &[[f64; 3]]) -> ReferenceSet {
        ReferenceSet {
            points: points
                .iter()
                .enumerate()
                .map(|(i, p)| ReferencePoint {
                    id: i as u32,
                    xyz: *p,
                })
                .collect(),
        }
    }

    #[test]
    fn instance_within_gate_matches() {
        let set = InstanceSet {
            instances: vec![instance_at(0, &[[0.010, 0.0, 0.0], [0.02, 0.0, 0.0]])],
        };
        let r = refs(&[[0.0, 0.0, 0.0]]);
        let m = match_instances(&set, &r, 0.030).unwrap();
        assert_eq!(m.pairs.len(), 1);
        assert!((m.pairs[0].distance - 0.010).abs() < 1e-12);
    }

    #[test]
    fn instance_beyond_gate_is_fp_and_fn() {
        let set = InstanceSet {
            instances: vec![instance_at(0, &[[0.040, 0.0, 0.0]])],
        };
        let r = refs(&[[0.0, 0.0, 0.0]]);
        let m = match_instances(&set, &r, 0.030).unwrap();
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_instances, vec![0]);
        assert_eq!(m.unmatched_references, vec![0]);
        let report = compute_metrics(&m);
        assert_eq!(report.true_positives, 0);
        assert_eq!(report.false_positives, 1);
        assert_eq!(report.false_negatives, 1);
    }

    #[test]
    fn empty_sides_are_valid() {
        let empty = InstanceSet::default();
        let r = refs(&[[0.0, 0.0, 0.0]]);
        let m = match_instances(&empty, &r, 0.030).unwrap();
        assert_eq!(m.unmatched_references, vec![0]);
        let m = match_instances(&empty, &ReferenceSet::default(), 0.030).unwrap();
        assert!(m.pairs.is_empty());
    }

    // Brute-force oracle over all permutations with the same sentinel rule.
    fn brute_force_match(matrix: &[Vec<f64>], n_refs: usize) -> (usize, f64) {
        let n_inst = matrix.len();
        let n = n_inst.max(n_refs);
        let mut cols: Vec<usize> = (0..n).collect();
        let mut best_cost = f64::INFINITY;
        let mut best_pairs = 0usize;
        permute_all(&mut cols, 0, &mut |perm| {
            let mut total = 0.0;
            let mut pairs = 0usize;
            for (k, &j) in perm.iter().enumerate() {
                if k < n_inst && j < n_refs {
                    let d = matrix[k][j].min(GATE_SENTINEL);
                    total += d;
                    if d < GATE_SENTINEL {
                        pairs += 1;
                    }
                }
            }
            if total < best_cost - 1e-12 {
                best_cost = total;
                best_pairs = pairs;
            }
        });
        (best_pairs, best_cost)
    }

    fn permute_all(cols: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == cols.len() {
            visit(cols);
            return;
        }
        for i in k..cols.len() {
            cols.swap(k, i);
            permute_all(cols, k + 1, visit);
            cols.swap(k, i);
        }
    }

    #[test]
    fn gated_matching_matches_permutation_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7000);
        for trial in 0..50 {
            let n = 5;
            let matrix: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    (0..n)
                        .map(|_| {
                            let d: f64 = rng.random_range(0.0..0.06);
                            if d > 0.03 {
                                GATE_SENTINEL
                            } else {
                                d
                            }
                        })
                        .collect()
                })
                .collect();
            let got = match_from_matrix(&matrix, n);
            let (bf_pairs, bf_cost) = brute_force_match(&matrix, n);
            assert_eq!(got.pairs.len(), bf_pairs, "trial {trial}");
            let got_total: f64 = got.pairs.iter().map(|p| p.distance).sum::<f64>()
                + (n - got.pairs.len()) as f64 * GATE_SENTINEL;
            assert!(
                (got_total - bf_cost).abs() < 1e-6,
                "trial {trial}: {got_total} vs {bf_cost}"
            );
        }
    }

    #[test]
    fn table_fixture_stage_two() {
        let r = metrics_from_counts(296, 103, 162);
        assert!((r.precision - 0.742).abs() < 0.0005);
        assert!((r.recall - 0.646).abs() < 0.0005);
        assert!((r.f1 - 0.6908).abs() < 0.0005);
        assert!((r.f1 - 0.69).abs() <= 0.005, "published rounding");
        assert_eq!(r.counting_error, -59);
        assert!((r.relative_counting_error - -0.129).abs() < 0.0005);
    }

    #[test]
    fn table_fixture_baseline() {
        let r = metrics_from_counts(83, 228, 375);
        assert!((r.precision - 0.267).abs() < 0.0005);
        assert!((r.recall - 0.181).abs() < 0.0005);
        assert!((r.f1 - 0.216).abs() < 0.0005);
        assert_eq!(r.counting_error, -147);
        assert!((r.relative_counting_error - -0.321).abs() < 0.0005);
    }

    #[test]
    fn empty_prediction_conventions() {
        let r = metrics_from_counts(0, 0, 5);
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.counting_error, -5);
        assert_eq!(r.relative_counting_error, -1.0);
    }

    #[test]
    fn adding_predictions_never_decreases_tp() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(800);
        for _ in 0..30 {
            let mut make_instances = |n: usize, start_id: u32| -> Vec<FusedInstance> {
                (0..n)
                    .map(|i| {
                        let c = [
                            rng.random_range(-0.2..0.2),
                            rng.random_range(-0.2..0.2),
                            rng.random_range(-0.2..0.2),
                        ];
                        instance_at(start_id + i as u32, &[c])
                    })
                    .collect()
            };
            let base_instances = make_instances(5, 0);
            let extra = make_instances(2, 100);
            let r = refs(&(0..6)
                .map(|_| {
                    [
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                    ]
                })
                .collect::<Vec<_>>());
            let tp_base = match_instances(
                &InstanceSet {
                    instances: base_instances.clone(),
                },
                &r,
                0.05,
            )
            .unwrap()
            .pairs
            .len();
            let mut more = base_instances;
            more.extend(extra);
            let tp_more = match_instances(&InstanceSet { instances: more }, &r, 0.05)
                .unwrap()
                .pairs
                .len();
            assert!(tp_more >= tp_base);
        }
    }

    #[test]
    fn usr_counts_double_covered_instances() {
        let merged = instance_at(0, &[[0.0, 0.0, 0.0], [0.005, 0.0, 0.0], [0.05, 0.0, 0.0]]);
        let set = InstanceSet {
            instances: vec![merged],
        };
        // Two references within 5 mm of the instance's points.
        let r = refs(&[[0.001, 0.0, 0.0], [0.051, 0.0, 0.0]]);
        let usr = compute_usr(&set, &r, 0.010).unwrap();
        assert_eq!(usr, 100.0);
    }

    #[test]
    fn usr_zero_when_no_instance_spans_two() {
        let set = InstanceSet {
            instances: vec![
                instance_at(0, &[[0.0, 0.0, 0.0]]),
                instance_at(1, &[[1.0, 0.0, 0.0]]),
            ],
        };
        let r = refs(&[[0.0, 0.0, 0.001], [1.0, 0.0, 0.001]]);
        assert_eq!(compute_usr(&set, &r, 0.010).unwrap(), 0.0);
    }

    fn blob(id: u32, center: [f64; 3], half: f64, n: usize) -> FusedInstance {
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / n as f64 * std::f64::consts::TAU;
            points.push([
                center[0] + half * t.cos(),
                center[1] + half * t.sin(),
                center[2] + half * (2.0 * t).sin() * 0.5,
            ]);
        }
        instance_at(id, &points)
    }

    #[test]
    fn nms_of_identical_sets_returns_one_copy() {
        let a = InstanceSet {
            instances: vec![blob(0, [0.0; 3], 0.05, 30), blob(1, [1.0, 0.0, 0.0], 0.05, 20)],
        };
        let merged = merge_predictions_nms(&a, &a, 0.1).unwrap();
        assert_eq!(merged.len(), 2);
        let mut counts: Vec<usize> =
            merged.instances.iter().map(|i| i.points.len()).collect();
        counts.sort_unstable();
        assert_eq!(counts, vec![20, 30]);
    }

    #[test]
    fn nms_keeps_low_overlap_pairs() {
        let a = InstanceSet {
            instances: vec![blob(0, [0.0; 3], 0.05, 30)],
        };
        let b = InstanceSet {
            instances: vec![blob(0, [0.2, 0.0, 0.0], 0.05, 20)],
        };
        assert!(obb_iou(&a.instances[0].obb, &b.instances[0].obb) < 0.1);
        let merged = merge_predictions_nms(&a, &b, 0.1).unwrap();
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn nms_greedy_keeps_largest_of_overlapping_triple() {
        let a = InstanceSet {
            instances: vec![blob(0, [0.0; 3], 0.05, 100), blob(1, [0.0; 3], 0.05, 50)],
        };
        let b = InstanceSet {
            instances: vec![blob(0, [0.0; 3], 0.05, 10)],
        };
        let merged = merge_predictions_nms(&a, &b, 0.1).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged.instances[0].points.len(), 100);
    }

    #[test]
    fn nms_output_pairwise_iou_below_threshold() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(321);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, id: u32| {
            blob(
                id,
                [
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    0.0,
                ],
                rng.random_range(0.02..0.08),
                rng.random_range(5..40),
            )
        };
        let a = InstanceSet {
            instances: (0..10).map(|i| mk(&mut rng, i)).collect(),
        };
        let b = InstanceSet {
            instances: (0..10).map(|i| mk(&mut rng, i)).collect(),
        };
        let merged = merge_predictions_nms(&a, &b, 0.1).unwrap();
        for i in 0..merged.len() {
            for j in (i + 1)..merged.len() {
                let iou = obb_iou(&merged.instances[i].obb, &merged.instances[j].obb);
                assert!(iou < 0.1, "kept pair with iou {iou}");
            }
        }
    }

    #[test]
    fn reference_file_round_trip_and_text_form() {
        let dir = tempfile::tempdir().unwrap();
        let json_path = dir.path().join("refs.json");
        let set = refs(&[[0.1, 0.2, 0.3], [4.0, 5.0, 6.0]]);
        save_references(&json_path, &set).unwrap();
        let loaded = load_references(&json_path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.points[1].xyz, [4.0, 5.0, 6.0]);

        let txt_path = dir.path().join("refs.txt");
        std::fs::write(&txt_path, "# heads\n0.1 0.2 0.3\n4,5,6\n").unwrap();
        let loaded = load_references(&txt_path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded.points[1].xyz, [4.0, 5.0, 6.0]);
    }
}
