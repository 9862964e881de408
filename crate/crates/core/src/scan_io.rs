//! Registered scan-station loading, voxel downsampling and cloud merging.
//!
//! Input scans are PLY files with `x y z intensity` vertices already
//! expressed in the shared local coordinate system; a JSON pose manifest
//! supplies each station's sensor origin and orientation for the later
//! spherical projection. Intensity is min-max normalized per station since
//! scanner gain control differs between setups.

use crate::error::{Error, Result};
use crate::ply::{self, PlyCloud};
use crate::spatial::{cell_of, PointGrid};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub position: Vector3<f64>,
    /// Normalized reflectance in [0, 1].
    pub intensity: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<ScanPoint>,
}

impl PointCloud {
    pub fn new(points: Vec<ScanPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }
}

/// One registered scan station: sensor pose plus its points in the LCS.
#[derive(Debug, Clone)]
pub struct ScanStation {
    pub station_id: String,
    /// Sensor position in the LCS.
    pub origin: Vector3<f64>,
    /// Rotation mapping sensor-frame vectors into the LCS.
    pub orientation: Matrix3<f64>,
    pub points: Vec<ScanPoint>,
}

impl ScanStation {
    /// Point position expressed in the sensor frame.
    pub fn to_sensor_frame(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.transpose() * (p - self.origin)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationPose {
    pub origin: [f64; 3],
    /// Row-major 3x3 rotation, sensor frame to LCS.
    pub rotation: [f64; 9],
}

pub type PoseManifest = BTreeMap<String, StationPose>;

impl StationPose {
    pub fn origin_vec(&self) -> Vector3<f64> {
        Vector3::from_column_slice(&self.origin)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.rotation)
    }
}

const ROTATION_TOL: f64 = 1e-6;

pub fn validate_rotation(r: &Matrix3<f64>, station_id: &str) -> Result<()> {
    let gram = r.transpose() * r - Matrix3::identity();
    let max_dev = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_dev > ROTATION_TOL {
        return Err(Error::Pose(format!(
            "station {station_id}: rotation not orthonormal (max deviation {max_dev:.2e})"
        )));
    }
    if (r.determinant() - 1.0).abs() > ROTATION_TOL {
        return Err(Error::Pose(format!(
            "station {station_id}: rotation determinant {} is not +1",
            r.determinant()
        )));
    }
    Ok(())
}

pub fn load_pose_manifest(path: &Path) -> Result<PoseManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: bad pose manifest: {e}", path.display())))
}

/// Loads one station: PLY vertices plus the manifest pose for `station_id`
/// (the file stem). Intensity is min-max normalized into [0, 1]; a constant
/// intensity channel maps to 0.5.
pub fn load_station(path: &Path, poses: &PoseManifest) -> Result<ScanStation> {
    let station_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Format(format!("{}: unusable file name", path.display())))?
        .to_string();
    let pose = poses.get(&station_id).ok_or_else(|| {
        Error::Pose(format!("station {station_id}: missing from pose manifest"))
    })?;
    let orientation = pose.rotation_matrix();
    validate_rotation(&orientation, &station_id)?;
    let origin = pose.origin_vec();

    let cloud = ply::read_ply(path)?;
    let raw_intensity = cloud.intensity.as_ref().ok_or_else(|| {
        Error::Format(format!(
            "{}: missing field: vertex needs intensity",
            path.display()
        ))
    })?;
    for p in &cloud.positions {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(Error::Format(format!(
                "{}: non-finite coordinate",
                path.display()
            )));
        }
        if (p - origin).norm_squared() == 0.0 {
            return Err(Error::Pose(format!(
                "station {station_id}: point coincides with the sensor origin"
            )));
        }
    }

    let (lo, hi) = raw_intensity
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let points = cloud
        .positions
        .iter()
        .zip(raw_intensity)
        .map(|(p, &raw)| ScanPoint {
            position: *p,
            intensity: if span > 0.0 { (raw - lo) / span } else { 0.5 },
        })
        .collect();

    Ok(ScanStation {
        station_id,
        origin,
        orientation,
        points,
    })
}

pub fn load_scans(paths: &[std::path::PathBuf], poses: &PoseManifest) -> Result<Vec<ScanStation>> {
    let stations = crate::par::map_slice(paths, |path| load_station(path, poses));
    stations.into_iter().collect()
}

/// Collapses the cloud to at most one point per cubic voxel of edge
/// `spacing`; the survivor is the centroid of the voxel members. Members are
/// averaged in coordinate order, which makes the result independent of the
/// input point order.
pub fn voxel_downsample(cloud: &PointCloud, spacing: f64) -> Result<PointCloud> {
    if !(spacing > 0.0) {
        return Err(Error::Parameter(format!(
            "voxel spacing must be positive, got {spacing}"
        )));
    }
    let mut keyed: Vec<((i64, i64, i64), usize)> = cloud
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| (cell_of(&p.position, spacing), i))
        .collect();
    keyed.sort_by(|a, b| {
        let pa = &cloud.points[a.1];
        let pb = &cloud.points[b.1];
        a.0.cmp(&b.0).then_with(|| point_sort_key(pa).cmp(&point_sort_key(pb)))
    });

    let mut out = Vec::new();
    let mut i = 0;
    while i < keyed.len() {
        let key = keyed[i].0;
        let mut sum = Vector3::zeros();
        let mut intensity_sum = 0.0f64;
        let mut n = 0usize;
        while i < keyed.len() && keyed[i].0 == key {
            let p = &cloud.points[keyed[i].1];
            sum += p.position;
            intensity_sum += p.intensity as f64;
            n += 1;
            i += 1;
        }
        out.push(ScanPoint {
            position: sum / n as f64,
            intensity: (intensity_sum / n as f64) as f32,
        });
    }
    Ok(PointCloud::new(out))
}

fn point_sort_key(p: &ScanPoint) -> (u64, u64, u64, u32) {
    (
        p.position.x.to_bits(),
        p.position.y.to_bits(),
        p.position.z.to_bits(),
        p.intensity.to_bits(),
    )
}

/// Concatenates all stations and voxel-downsamples to `spacing`, producing
/// the merged target cloud.
pub fn merge_clouds(stations: &[ScanStation], spacing: f64) -> Result<PointCloud> {
    if stations.is_empty() {
        return Err(Error::Parameter("merge_clouds needs at least one station".into()));
    }
    let points: Vec<ScanPoint> = stations
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .collect();
    voxel_downsample(&PointCloud::new(points), spacing)
}

/// Removes points whose mean distance to their `k_nn` nearest neighbors
/// exceeds the global mean by more than `stdev_mult` standard deviations.
pub fn statistical_outlier_filter(
    cloud: &PointCloud,
    k_nn: usize,
    stdev_mult: f64,
) -> Result<PointCloud> {
    if k_nn == 0 {
        return Err(Error::Parameter("outlier filter needs k_nn >= 1".into()));
    }
    let n = cloud.len();
    if n < k_nn + 1 {
        log::warn!("outlier filter skipped: cloud of {n} points is smaller than k_nn + 1");
        return Ok(cloud.clone());
    }

    let positions = cloud.positions();
    // Cell edge from the mean spacing estimate so ring expansion terminates
    // quickly on both dense and sparse clouds.
    let (lo, hi) = bounds(&positions);
    let extent = (hi - lo).norm().max(1e-9);
    let cell = (extent / (n as f64).cbrt()).max(1e-9);
    let grid = PointGrid::build(positions.clone(), cell);

    let mean_knn: Vec<f64> = crate::par::map_range(n, |i| {
        let neighbors = grid.k_nearest(&positions[i], k_nn, Some(i as u32));
        neighbors.iter().map(|(_, d)| *d).sum::<f64>() / neighbors.len() as f64
    });

    let mean = mean_knn.iter().sum::<f64>() / n as f64;
    let var = mean_knn.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    let threshold = mean + stdev_mult * var.sqrt();

    let kept: Vec<ScanPoint> = cloud
        .points
        .iter()
        .zip(&mean_knn)
        .filter(|(_, &d)| d <= threshold)
        .map(|(p, _)| *p)
        .collect();
    Ok(PointCloud::new(kept))
}

pub fn bounds(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

/// Writes a cloud (optionally labeled) as binary PLY.
pub fn write_cloud(
    path: &Path,
    cloud: &PointCloud,
    semantic: Option<&[u16]>,
    instance: Option<&[i32]>,
    comments: &[String],
) -> Result<()> {
    let ply_cloud = PlyCloud {
        positions: cloud.points.iter().map(|p| p.position).collect(),
        intensity: Some(cloud.points.iter().map(|p| p.intensity).collect()),
        semantic: semantic.map(<[u16]>::to_vec),
        instance: instance.map(<[i32]>::to_vec),
    };
    ply::write_ply(path, &ply_cloud, comments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: f64, y: f64, z: f64) -> ScanPoint {
        ScanPoint {
            position: Vector3::new(x, y, z),
            intensity: 0.0,
        }
    }

    fn write_station(dir: &Path, id: &str, rows: &[[f64; 4]]) -> std::path::PathBuf {
        let mut body = String::from(
            "ply\nformat ascii 1.0\nelement vertex N\nproperty float x\nproperty float y\n\
             property float z\nproperty float intensity\nend_header\n",
        );
        body = body.replace('N', &rows.len().to_string());
        for r in rows {
            body.push_str(&format!("{} {} {} {}\n", r[0], r[1], r[2], r[3]));
        }
        let path = dir.join(format!("{id}.ply"));
        std::fs::write(&path, body).unwrap();
        path
    }

    fn identity_pose() -> StationPose {
        StationPose {
            origin: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        }
    }

    #[test]
    fn loads_single_point_station_with_identity_pose() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_station(dir.path(), "s1", &[[1.0, 2.0, 3.0, 0.5]]);
        let poses = PoseManifest::from([("s1".to_string(), identity_pose())]);
        let stations = load_scans(&[path], &poses).unwrap();
        assert_eq!(stations.len(), 1);
        assert_eq!(stations[0].points[0].position, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn intensity_normalizes_to_min_max_endpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_station(
            dir.path(),
            "s1",
            &[[1.0, 0.0, 0.0, 100.0], [2.0, 0.0, 0.0, 300.0]],
        );
        let poses = PoseManifest::from([("s1".to_string(), identity_pose())]);
        let station = load_station(&path, &poses).unwrap();
        assert_eq!(station.points[0].intensity, 0.0);
        assert_eq!(station.points[1].intensity, 1.0);
    }

    #[test]
    fn nineteen_station_files_load_as_nineteen_stations() {
        let dir = tempfile::tempdir().unwrap();
        let mut poses = PoseManifest::new();
        let mut paths = Vec::new();
        for i in 0..19 {
            let id = format!("st{i:02}");
            paths.push(write_station(dir.path(), &id, &[[1.0, 0.0, i as f64, 0.5]]));
            poses.insert(id, identity_pose());
        }
        let stations = load_scans(&paths, &poses).unwrap();
        assert_eq!(stations.len(), 19);
    }

    #[test]
    fn missing_intensity_names_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1.ply");
        std::fs::write(
            &path,
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
             property float z\nend_header\n1 2 3\n",
        )
        .unwrap();
        let poses = PoseManifest::from([("s1".to_string(), identity_pose())]);
        let err = load_station(&path, &poses).unwrap_err();
        assert!(matches!(err, Error::Format(msg) if msg.contains("intensity")));
    }

    #[test]
    fn non_orthonormal_rotation_is_pose_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_station(dir.path(), "s1", &[[1.0, 0.0, 0.0, 0.5]]);
        let mut pose = identity_pose();
        pose.rotation[0] = 1.001;
        let poses = PoseManifest::from([("s1".to_string(), pose)]);
        let err = load_station(&path, &poses).unwrap_err();
        assert!(matches!(err, Error::Pose(_)));
    }

    #[test]
    fn downsample_empty_cloud() {
        let out = voxel_downsample(&PointCloud::default(), 0.003).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn downsample_collapses_one_voxel_to_centroid() {
        let cloud = PointCloud::new(vec![
            pt(0.0001, 0.0001, 0.0001),
            pt(0.0005, 0.0004, 0.0002),
            pt(0.0010, 0.0020, 0.0005),
            pt(0.0015, 0.0010, 0.0025),
            pt(0.0020, 0.0025, 0.0010),
        ]);
        let out = voxel_downsample(&cloud, 0.003).unwrap();
        assert_eq!(out.len(), 1);
        let centroid: Vector3<f64> =
            cloud.points.iter().map(|p| p.position).sum::<Vector3<f64>>() / 5.0;
        assert!((out.points[0].position - centroid).norm() < 1e-12);
    }

    #[test]
    fn downsample_keeps_separated_points() {
        // 100 points with min pairwise distance >= 10 mm; the voxel diagonal
        // at 3 mm spacing is ~5.2 mm, so no two can share a voxel.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut pts: Vec<ScanPoint> = Vec::new();
        while pts.len() < 100 {
            let cand = pt(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            if pts
                .iter()
                .all(|p| (p.position - cand.position).norm() >= 0.010)
            {
                pts.push(cand);
            }
        }
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                assert!((pts[i].position - pts[j].position).norm() >= 0.010);
            }
        }
        let out = voxel_downsample(&PointCloud::new(pts), 0.003).unwrap();
        assert_eq!(out.len(), 100);
    }

    #[test]
    fn downsample_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = PointCloud::new(
            (0..500)
                .map(|_| {
                    pt(
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                        rng.random_range(-0.1..0.1),
                    )
                })
                .collect(),
        );
        let once = voxel_downsample(&cloud, 0.007).unwrap();
        let twice = voxel_downsample(&once, 0.007).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn downsample_output_stays_near_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cloud = PointCloud::new(
            (0..300)
                .map(|_| {
                    pt(
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                        rng.random_range(-0.2..0.2),
                    )
                })
                .collect(),
        );
        let spacing = 0.01;
        let out = voxel_downsample(&cloud, spacing).unwrap();
        let limit = spacing * 3.0f64.sqrt() / 2.0 + 1e-12;
        for o in &out.points {
            let nearest = cloud
                .points
                .iter()
                .map(|p| (p.position - o.position).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= limit, "output point {nearest} m from any input");
        }
    }

    #[test]
    fn merge_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let station = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ScanStation {
                station_id: format!("s{seed}"),
                origin: Vector3::zeros(),
                orientation: Matrix3::identity(),
                points: (0..200)
                    .map(|_| {
                        pt(
                            rng.random_range(-0.1..0.1),
                            rng.random_range(-0.1..0.1),
                            rng.random_range(-0.1..0.1),
                        )
                    })
                    .collect(),
            }
        };
        let mut stations: Vec<ScanStation> = (0..4).map(station).collect();
        let a = merge_clouds(&stations, 0.004).unwrap();
        // shuffle
        for i in (1..stations.len()).rev() {
            stations.swap(i, rng.random_range(0..=i));
        }
        let b = merge_clouds(&stations, 0.004).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn merge_collapses_duplicates_across_stations() {
        let mk = |id: &str| ScanStation {
            station_id: id.into(),
            origin: Vector3::zeros(),
            orientation: Matrix3::identity(),
            points: vec![pt(0.05, 0.05, 0.05), pt(0.25, 0.25, 0.25)],
        };
        let merged = merge_clouds(&[mk("a"), mk("b")], 0.01).unwrap();
        assert_eq!(merged.len(), 2);
    }

    #[test]
    fn merge_single_station_below_min_spacing_is_identity_sized() {
        let station = ScanStation {
            station_id: "a".into(),
            origin: Vector3::zeros(),
            orientation: Matrix3::identity(),
            points: vec![pt(0.0, 0.0, 0.0), pt(0.1, 0.0, 0.0), pt(0.0, 0.1, 0.0)],
        };
        let merged = merge_clouds(std::slice::from_ref(&station), 0.003).unwrap();
        assert_eq!(merged.len(), 3);
    }

    #[test]
    fn merge_matches_independent_voxel_count() {
        // Independent oracle: count distinct voxel keys with a hash set.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let stations: Vec<ScanStation> = (0..6)
            .map(|s| ScanStation {
                station_id: format!("s{s}"),
                origin: Vector3::zeros(),
                orientation: Matrix3::identity(),
                points: (0..500)
                    .map(|_| {
                        pt(
                            rng.random_range(-0.3..0.3),
                            rng.random_range(-0.3..0.3),
                            rng.random_range(-0.3..0.3),
                        )
                    })
                    .collect(),
            })
            .collect();
        let spacing = 0.02;
        let mut keys = std::collections::HashSet::new();
        for st in &stations {
            for p in &st.points {
                keys.insert((
                    (p.position.x / spacing).floor() as i64,
                    (p.position.y / spacing).floor() as i64,
                    (p.position.z / spacing).floor() as i64,
                ));
            }
        }
        let merged = merge_clouds(&stations, spacing).unwrap();
        assert_eq!(merged.len(), keys.len());
    }

    #[test]
    fn merge_empty_station_list_is_parameter_error() {
        assert!(matches!(
            merge_clouds(&[], 0.003),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn outlier_filter_removes_displaced_point() {
        // Uniform 5x5x5 grid with 2 mm pitch plus one point 100 pitches away.
        let mut pts = Vec::new();
        for x in 0..5 {
            for y in 0..5 {
                for z in 0..5 {
                    pts.push(pt(x as f64 * 0.002, y as f64 * 0.002, z as f64 * 0.002));
                }
            }
        }
        pts.push(pt(0.2, 0.2, 0.2));
        let cloud = PointCloud::new(pts.clone());
        let filtered = statistical_outlier_filter(&cloud, 8, 3.0).unwrap();

        // Brute-force oracle for the same rule.
        let knn_mean = |i: usize| {
            let mut d: Vec<f64> = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| (pts[i].position - pts[j].position).norm())
                .collect();
            d.sort_by(f64::total_cmp);
            d[..8].iter().sum::<f64>() / 8.0
        };
        let means: Vec<f64> = (0..pts.len()).map(knn_mean).collect();
        let mean = means.iter().sum::<f64>() / means.len() as f64;
        let sd =
            (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / means.len() as f64).sqrt();
        let expect: Vec<&ScanPoint> = pts
            .iter()
            .zip(&means)
            .filter(|(_, &m)| m <= mean + 3.0 * sd)
            .map(|(p, _)| p)
            .collect();
        assert_eq!(filtered.len(), expect.len());
        assert_eq!(filtered.len(), 125, "displaced point removed");
    }

    #[test]
    fn outlier_filter_keeps_uniform_geometry() {
        let mut pts = Vec::new();
        for x in 0..4 {
            for y in 0..4 {
                for z in 0..4 {
                    pts.push(pt(x as f64, y as f64, z as f64));
                }
            }
        }
        let cloud = PointCloud::new(pts);
        let filtered = statistical_outlier_filter(&cloud, 6, 3.0).unwrap();
        assert_eq!(filtered.len(), 64);
    }

    #[test]
    fn outlier_filter_infinite_threshold_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cloud = PointCloud::new(
            (0..100)
                .map(|_| {
                    pt(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect(),
        );
        let filtered = statistical_outlier_filter(&cloud, 8, f64::INFINITY).unwrap();
        assert_eq!(filtered, cloud);
    }

    #[test]
    fn outlier_filter_small_cloud_unchanged() {
        let cloud = PointCloud::new(vec![pt(0.0, 0.0, 0.0), pt(1.0, 0.0, 0.0)]);
        let filtered = statistical_outlier_filter(&cloud, 8, 3.0).unwrap();
        assert_eq!(filtered, cloud);
    }
}
