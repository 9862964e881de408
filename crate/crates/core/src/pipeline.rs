//! File-based batch commands: synthetic dataset generation, projection,
//! fusion, label transfer, evaluation and prediction merging. Each command
//! is deterministic given its config, inputs and seeds, and writes a
//! `run_manifest.json` with input hashes next to its outputs.

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{self, EvalFile, MatchRecord, ReferenceSet};
use crate::fusion::{self, InstanceSet, PartialInstance};
use crate::label_transfer::{self, AugmentRecord, SphereSample};
use crate::masks::{self, MaskSet};
use crate::projection::{self, PanoramaGeometry, SphericalImage};
use crate::provenance::RunManifest;
use crate::scan_io::{self, PoseManifest, ScanStation, StationPose};
use crate::synth;
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1000.0
}

/// Sorted `*.ply` files directly inside `dir`.
pub fn list_scan_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ply"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Parameter(format!(
            "no .ply scans found in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn load_stations(config: &PipelineConfig, scans_dir: &Path, poses: &Path) -> Result<Vec<ScanStation>> {
    let start = Instant::now();
    let manifest = scan_io::load_pose_manifest(poses)?;
    let files = list_scan_files(scans_dir)?;
    let mut stations = scan_io::load_scans(&files, &manifest)?;
    if config.filter.outlier_enabled {
        for station in &mut stations {
            let cloud = scan_io::PointCloud::new(std::mem::take(&mut station.points));
            let filtered = scan_io::statistical_outlier_filter(
                &cloud,
                config.filter.outlier_knn,
                config.filter.outlier_stdev_mult,
            )?;
            station.points = filtered.points;
        }
    }
    log::info!(
        "scan_io: loaded {} stations ({} points) in {:.1} ms",
        stations.len(),
        stations.iter().map(|s| s.points.len()).sum::<usize>(),
        elapsed_ms(start)
    );
    Ok(stations)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub n_heads: usize,
    pub n_stations: usize,
    pub n_masks: usize,
    pub scans_dir: PathBuf,
    pub poses_path: PathBuf,
    pub masks_manifest: PathBuf,
    pub refs_path: PathBuf,
}

/// Generates a synthetic dataset in the real pipeline's formats: station
/// PLYs + pose manifest, oracle masks on the compressed panoramas, and the
/// reference annotations.
pub fn run_synth(config: &PipelineConfig, out_dir: &Path) -> Result<SynthSummary> {
    let start = Instant::now();
    let seed = config.pipeline.seed;
    let spec = config.synth.scene_spec(seed);
    let scene = synth::generate_scene(&spec)?;
    log::info!(
        "synth: scene with {} heads, {} points in {:.1} ms",
        scene.heads.len(),
        scene.points.len(),
        elapsed_ms(start)
    );

    let scans_dir = out_dir.join("scans");
    let masks_dir = out_dir.join("masks");
    let truth_dir = out_dir.join("truth");
    for dir in [&scans_dir, &masks_dir, &truth_dir] {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.as_path(), e))?;
    }

    let params = config.projection_params();
    let beam = config
        .synth
        .beam_resolution
        .or(config.projection.native_resolution)
        .unwrap_or_else(|| params.target_resolution());

    let target_z = ((config.synth.stem_height[0] + config.synth.stem_height[1]) / 2.0).max(0.05);
    let n_stations = config.synth.n_stations.max(1);
    let mut poses = PoseManifest::new();
    let mut all_masks: Vec<crate::masks::InstanceMask2D> = Vec::new();
    let mut seen_by: BTreeMap<u32, std::collections::BTreeSet<String>> = BTreeMap::new();
    // Stations where a head yields at least one pure panorama pixel, i.e. an
    // uncorrupted oracle mask.
    let mut mask_views: BTreeMap<u32, std::collections::BTreeSet<String>> = BTreeMap::new();

    for i in 0..n_stations {
        let station_id = format!("st{i:02}");
        let angle = i as f64 / n_stations as f64 * std::f64::consts::TAU;
        let origin = Vector3::new(
            config.synth.station_radius * angle.cos(),
            config.synth.station_radius * angle.sin(),
            config.synth.station_heights[i % 2],
        );
        let orientation = synth::look_at_pose(origin, Vector3::new(0.0, 0.0, target_z))?;
        let (station, visibility) =
            synth::simulate_scan(&scene, &station_id, origin, orientation, beam)?;
        for &inst in &visibility.instance {
            if inst >= 0 {
                seen_by
                    .entry(inst as u32)
                    .or_default()
                    .insert(station_id.clone());
            }
        }

        scan_io::write_cloud(
            &scans_dir.join(format!("{station_id}.ply")),
            &scan_io::PointCloud::new(station.points.clone()),
            None,
            None,
            &[],
        )?;
        let mut rotation = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                rotation[r * 3 + c] = orientation[(r, c)];
            }
        }
        poses.insert(
            station_id.clone(),
            StationPose {
                origin: [origin.x, origin.y, origin.z],
                rotation,
            },
        );

        // Re-read the written scan so mask geometry matches what the
        // projection command will later see (PLY stores f32 coordinates).
        let reloaded = scan_io::load_station(
            &scans_dir.join(format!("{station_id}.ply")),
            &poses,
        )?;
        let mut sim_params = params;
        sim_params.native_resolution = Some(beam);
        let full = projection::project_station(&reloaded, &sim_params)?;
        let compressed = projection::lanczos_resample(&full, &sim_params)?;
        for &head in synth::head_pixels(&compressed, &visibility).keys() {
            mask_views
                .entry(head as u32)
                .or_default()
                .insert(station_id.clone());
        }
        let corruption = config
            .synth
            .corruption(seed.wrapping_add(0xC0FFEE).wrapping_add(i as u64));
        let station_masks = synth::emit_oracle_masks(&compressed, &visibility, &corruption);
        all_masks.extend(station_masks.masks);
    }

    let poses_path = scans_dir.join("poses.json");
    let poses_json = serde_json::to_string_pretty(&poses)
        .map_err(|e| Error::Format(format!("poses.json: {e}")))?;
    std::fs::write(&poses_path, poses_json).map_err(|e| Error::io(&poses_path, e))?;

    let mask_set = MaskSet { masks: all_masks };
    let masks_manifest = masks::save_masks(&mask_set, &masks_dir)?;

    let refs = scene.reference_set();
    let refs_path = truth_dir.join("refs.json");
    eval::save_references(&refs_path, &refs)?;
    let truth = serde_json::json!({
        "seed": seed,
        "beam_resolution": beam,
        "n_heads": scene.heads.len(),
        "heads": scene.heads,
        "stations_seeing_head": seen_by,
        "stations_masking_head": mask_views,
    });
    let truth_path = truth_dir.join("scene_truth.json");
    std::fs::write(
        &truth_path,
        serde_json::to_string_pretty(&truth).unwrap(),
    )
    .map_err(|e| Error::io(&truth_path, e))?;

    let mut manifest = RunManifest::new("synth", config);
    manifest.record_output("scans");
    manifest.record_output("masks");
    manifest.record_output("truth");
    manifest.write(out_dir)?;

    log::info!(
        "synth: {} stations, {} masks in {:.1} ms total",
        n_stations,
        mask_set.len(),
        elapsed_ms(start)
    );
    Ok(SynthSummary {
        n_heads: scene.heads.len(),
        n_stations,
        n_masks: mask_set.len(),
        scans_dir,
        poses_path,
        masks_manifest,
        refs_path,
    })
}

// ---------------------------------------------------------------------------
// project
// ---------------------------------------------------------------------------

/// Projects every station to its compressed panorama pair plus sidecars.
pub fn run_project(
    config: &PipelineConfig,
    scans_dir: &Path,
    poses: &Path,
    out_dir: &Path,
) -> Result<Vec<PanoramaGeometry>> {
    let stations = load_stations(config, scans_dir, poses)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let params = config.projection_params();

    let mut geometries = Vec::with_capacity(stations.len());
    for station in &stations {
        let start = Instant::now();
        let full = projection::project_station(station, &params)?;
        let compressed = projection::lanczos_resample(&full, &params)?;
        let geometry = projection::export_panoramas(out_dir, &compressed, &full)?;
        log::info!(
            "projection: {} {}x{} -> {}x{} in {:.1} ms",
            station.station_id,
            full.width,
            full.height,
            compressed.width,
            compressed.height,
            elapsed_ms(start)
        );
        geometries.push(geometry);
    }

    let mut manifest = RunManifest::new("project", config);
    manifest.record_input(poses)?;
    for file in list_scan_files(scans_dir)? {
        manifest.record_input(&file)?;
    }
    for g in &geometries {
        manifest.record_output(format!("{}_intensity.png", g.station_id));
        manifest.record_output(format!("{}_range.png", g.station_id));
        manifest.record_output(format!("{}_geom.json", g.station_id));
        manifest.record_output(format!("{}_pixmap.bin", g.station_id));
    }
    manifest.write(out_dir)?;
    Ok(geometries)
}

// ---------------------------------------------------------------------------
// fuse
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FuseSummary {
    pub n_partial: usize,
    pub n_edges: usize,
    pub n_instances: usize,
    pub n_discarded_nodes: usize,
}

/// Back-projects the masks, builds the fusion graph, clusters it, and
/// writes the merged instances.
pub fn run_fuse(
    config: &PipelineConfig,
    scans_dir: &Path,
    poses: &Path,
    panoramas_dir: &Path,
    masks_manifest: &Path,
    out_dir: &Path,
) -> Result<(InstanceSet, FuseSummary)> {
    let stations = load_stations(config, scans_dir, poses)?;
    let mask_set = masks::load_masks(masks_manifest)?;
    let classes: std::collections::BTreeSet<String> =
        config.filter.classes.iter().cloned().collect();
    let filtered = masks::filter_masks(&mask_set, config.filter.min_confidence, &classes);
    if filtered.is_empty() {
        log::warn!("fuse: empty mask set after filtering; writing empty output");
        let set = InstanceSet::default();
        fusion::save_instances(&set, out_dir, None)?;
        return Ok((
            set,
            FuseSummary {
                n_partial: 0,
                n_edges: 0,
                n_instances: 0,
                n_discarded_nodes: 0,
            },
        ));
    }

    // Panorama + station lookup per referenced station id.
    let mut context: BTreeMap<String, (ScanStation, SphericalImage)> = BTreeMap::new();
    for station in stations.iter() {
        let referenced = filtered
            .masks
            .iter()
            .any(|m| m.station_id == station.station_id);
        if referenced {
            let image = projection::load_panorama(panoramas_dir, &station.station_id)?;
            context.insert(station.station_id.clone(), (station.clone(), image));
        }
    }
    masks::validate_against_geometry(&filtered, |id| {
        context.get(id).map(|(_, img)| (img.width, img.height))
    })?;

    let start = Instant::now();
    let projected: Vec<Result<Option<PartialInstance>>> =
        crate::par::map_slice(&filtered.masks, |mask| {
            let (station, image) = &context[&mask.station_id];
            projection::backproject_mask(image, mask, station)
        });
    let mut partials: Vec<PartialInstance> = Vec::with_capacity(filtered.len());
    let mut empty = 0usize;
    for p in projected {
        match p? {
            Some(inst) => partials.push(inst),
            None => empty += 1,
        }
    }
    if empty > 0 {
        log::warn!("fuse: {empty} masks back-projected to no points and were skipped");
    }
    log::info!(
        "fuse: {} partial instances in {:.1} ms",
        partials.len(),
        elapsed_ms(start)
    );

    let start = Instant::now();
    let k = config.pipeline.knn.unwrap_or(stations.len().max(1));
    let graph = fusion::build_graph(&partials, k, config.pipeline.iou_threshold)?;
    let outcome = fusion::hcs_cluster(
        &graph,
        config.pipeline.min_edge_support,
        config.pipeline.min_support,
    );
    let set = fusion::merge_cluster_instances(
        &outcome.clusters,
        &partials,
        config.pipeline.point_spacing,
    )?;
    log::info!(
        "fuse: graph {} nodes / {} edges -> {} instances ({} nodes discarded) in {:.1} ms",
        graph.node_count,
        graph.edge_count(),
        set.len(),
        outcome.discarded.len(),
        elapsed_ms(start)
    );

    let mut manifest = RunManifest::new("fuse", config);
    manifest.record_input(masks_manifest)?;
    manifest.record_input(poses)?;
    manifest.record_output("instances.json");
    manifest.record_output("instances.ply");
    fusion::save_instances(&set, out_dir, Some(manifest.stamp()))?;
    manifest.write(out_dir)?;

    let summary = FuseSummary {
        n_partial: partials.len(),
        n_edges: graph.edge_count(),
        n_instances: set.len(),
        n_discarded_nodes: outcome.discarded.len(),
    };
    Ok((set, summary))
}

// ---------------------------------------------------------------------------
// transfer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TransferSummary {
    pub n_target_points: usize,
    pub n_labeled_points: usize,
    pub n_spheres: usize,
    pub labeled_path: PathBuf,
}

/// Builds the merged target cloud, transfers and refines instance labels,
/// and exports the sphere samples.
pub fn run_transfer(
    config: &PipelineConfig,
    scans_dir: &Path,
    poses: &Path,
    instances_ply: &Path,
    out_dir: &Path,
) -> Result<TransferSummary> {
    let stations = load_stations(config, scans_dir, poses)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let spacing = config.pipeline.point_spacing;

    let start = Instant::now();
    let target = scan_io::merge_clouds(&stations, spacing)?;
    log::info!(
        "transfer: merged target cloud {} points in {:.1} ms",
        target.len(),
        elapsed_ms(start)
    );

    let instances = fusion::load_instances(instances_ply)?;
    let start = Instant::now();
    let labeled = label_transfer::transfer_labels(&target, &instances, spacing)?;
    let refined = label_transfer::refine_majority_vote(
        &labeled,
        spacing,
        config.vote.weighted,
        config.vote.allow_null_votes,
    )?;
    let reset = label_transfer::instance_majority_reset(&refined);
    debug_assert_eq!(reset.invariant_violations(), 0);
    let n_labeled = reset.instance.iter().filter(|&&i| i >= 0).count();
    log::info!(
        "transfer: {} / {} points labeled in {:.1} ms",
        n_labeled,
        reset.len(),
        elapsed_ms(start)
    );

    let labeled_path = out_dir.join("P_t_labeled.ply");
    scan_io::write_cloud(
        &labeled_path,
        &reset.cloud,
        Some(&reset.semantic),
        Some(&reset.instance),
        &[],
    )?;

    let start = Instant::now();
    let radius = config.pipeline.sphere_radius;
    let stride = config.sphere_stride();
    let spheres = label_transfer::sample_spheres(&reset, radius, stride)?;
    let mut export: Vec<(SphereSample, Option<AugmentRecord>)> = spheres
        .iter()
        .map(|s| (s.clone(), None))
        .collect();
    if config.augment.enabled {
        let params = config.augment.params();
        for sphere in &spheres {
            for copy in 0..config.augment.copies.max(1) {
                let seed = config
                    .pipeline
                    .seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add(sphere.id as u64 * 97 + copy as u64);
                let (augmented, record) =
                    label_transfer::augment_sphere(sphere, &params, seed);
                export.push((augmented, Some(record)));
            }
        }
    }
    let mut manifest = RunManifest::new("transfer", config);
    manifest.record_input(instances_ply)?;
    manifest.record_input(poses)?;
    manifest.record_output("P_t_labeled.ply");
    manifest.record_output("spheres");
    label_transfer::export_spheres(
        &out_dir.join("spheres"),
        &export,
        radius,
        stride,
        config.pipeline.seed,
        Some(manifest.stamp()),
    )?;
    manifest.write(out_dir)?;
    log::info!(
        "transfer: {} spheres ({} files) in {:.1} ms",
        spheres.len(),
        export.len(),
        elapsed_ms(start)
    );

    Ok(TransferSummary {
        n_target_points: target.len(),
        n_labeled_points: n_labeled,
        n_spheres: spheres.len(),
        labeled_path,
    })
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Matches a prediction cloud against sparse references and writes
/// `eval.json`.
pub fn run_eval(
    config: &PipelineConfig,
    predictions_ply: &Path,
    refs_path: &Path,
    out_path: &Path,
) -> Result<EvalFile> {
    let instances = fusion::load_instances(predictions_ply)?;
    let refs: ReferenceSet = eval::load_references(refs_path)?;
    let start = Instant::now();
    let matches = eval::match_instances(&instances, &refs, config.pipeline.match_distance)?;
    let mut report = eval::compute_metrics(&matches);
    report.usr_percent = Some(eval::compute_usr(
        &instances,
        &refs,
        config.pipeline.undersegmentation_distance,
    )?);
    log::info!(
        "eval: matched {} / {} predictions to {} references in {:.1} ms",
        matches.pairs.len(),
        instances.len(),
        refs.len(),
        elapsed_ms(start)
    );

    let id_of = |k: usize| instances.instances[k].instance_id;
    let mut manifest = RunManifest::new("eval", config);
    manifest.record_input(predictions_ply)?;
    manifest.record_input(refs_path)?;
    let file = EvalFile {
        report,
        d_tau_m: config.pipeline.match_distance,
        d_tau_strict_m: config.pipeline.undersegmentation_distance,
        matches: matches
            .pairs
            .iter()
            .map(|p| MatchRecord {
                instance_id: id_of(p.instance),
                reference_id: refs.points[p.reference].id,
                distance_m: p.distance,
            })
            .collect(),
        unmatched_instance_ids: matches.unmatched_instances.iter().map(|&k| id_of(k)).collect(),
        unmatched_reference_ids: matches
            .unmatched_references
            .iter()
            .map(|&j| refs.points[j].id)
            .collect(),
        provenance: Some(manifest.stamp()),
    };
    if let Some(dir) = out_path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    eval::save_eval_file(out_path, &file)?;
    if let Some(dir) = out_path.parent() {
        if !dir.as_os_str().is_empty() {
            manifest.record_output(
                out_path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            );
            manifest.write(dir)?;
        }
    }
    Ok(file)
}

// ---------------------------------------------------------------------------
// merge
// ---------------------------------------------------------------------------

/// NMS-merges two prediction sets and writes the result as a new instance
/// directory.
pub fn run_merge(
    config: &PipelineConfig,
    a_ply: &Path,
    b_ply: &Path,
    out_dir: &Path,
) -> Result<InstanceSet> {
    let a = fusion::load_instances(a_ply)?;
    let b = fusion::load_instances(b_ply)?;
    let start = Instant::now();
    let merged = eval::merge_predictions_nms(&a, &b, config.pipeline.nms_iou)?;
    log::info!(
        "merge: {} + {} -> {} instances in {:.1} ms",
        a.len(),
        b.len(),
        merged.len(),
        elapsed_ms(start)
    );
    let mut manifest = RunManifest::new("merge", config);
    manifest.record_input(a_ply)?;
    manifest.record_input(b_ply)?;
    manifest.record_output("instances.json");
    manifest.record_output("instances.ply");
    fusion::save_instances(&merged, out_dir, Some(manifest.stamp()))?;
    manifest.write(out_dir)?;
    Ok(merged)
}
