//! Pipeline configuration: one TOML file drives every subcommand. All
//! defaults are the production values used throughout the crate's tests.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub pipeline: PipelineSection,
    pub projection: ProjectionSection,
    pub filter: FilterSection,
    pub vote: VoteSection,
    pub augment: AugmentSection,
    pub synth: SynthSection,
    pub paths: PathsSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineSection::default(),
            projection: ProjectionSection::default(),
            filter: FilterSection::default(),
            vote: VoteSection::default(),
            augment: AugmentSection::default(),
            synth: SynthSection::default(),
            paths: PathsSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    /// Target point spacing d_p, meters.
    pub point_spacing: f64,
    /// Maximum range of interest, meters.
    pub max_range: f64,
    /// OBB IoU edge-pruning threshold.
    pub iou_threshold: f64,
    /// Fusion kNN count; defaults to the number of stations when absent.
    pub knn: Option<usize>,
    /// Minimum supporter count for an edge to survive binarization.
    pub min_edge_support: u32,
    /// Minimum cluster size (independent observations) for a fused instance.
    pub min_support: usize,
    /// Training sphere radius, meters.
    pub sphere_radius: f64,
    /// Sphere center grid pitch, meters; defaults to the radius.
    pub sphere_stride: Option<f64>,
    /// Matching gate for evaluation, meters.
    pub match_distance: f64,
    /// Stricter gate for the under-segmentation ratio, meters.
    pub undersegmentation_distance: f64,
    /// 3D IoU threshold for merging two prediction sets.
    pub nms_iou: f64,
    /// Lanczos kernel support.
    pub lanczos_support: u32,
    pub seed: u64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            point_spacing: 0.003,
            max_range: 6.0,
            iou_threshold: 0.15,
            knn: None,
            min_edge_support: 1,
            min_support: 3,
            sphere_radius: 0.12,
            sphere_stride: None,
            match_distance: 0.030,
            undersegmentation_distance: 0.010,
            nms_iou: 0.10,
            lanczos_support: 3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionSection {
    /// Native angular resolution override, rad/pixel. Estimated from the
    /// azimuth distribution when absent.
    pub native_resolution: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    /// Statistical outlier removal on loaded stations (off by default).
    pub outlier_enabled: bool,
    pub outlier_knn: usize,
    pub outlier_stdev_mult: f64,
    /// Mask confidence floor.
    pub min_confidence: f64,
    /// Mask class allowlist; empty keeps all classes.
    pub classes: Vec<String>,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            outlier_enabled: false,
            outlier_knn: 8,
            outlier_stdev_mult: 3.0,
            min_confidence: 0.0,
            classes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoteSection {
    /// Inverse-distance weighting for the refinement vote; uniform when off.
    pub weighted: bool,
    /// Whether null labels may win the neighborhood vote.
    pub allow_null_votes: bool,
}

impl Default for VoteSection {
    fn default() -> Self {
        Self {
            weighted: true,
            allow_null_votes: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: bool,
    /// Augmented copies exported per sphere.
    pub copies: usize,
    pub noise_stdev: f64,
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_probability: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        Self {
            enabled: false,
            copies: 1,
            noise_stdev: 0.0003,
            max_rotation_deg: 180.0,
            scale_min: 0.9,
            scale_max: 1.1,
            flip_probability: 0.5,
        }
    }
}

impl AugmentSection {
    pub fn params(&self) -> crate::label_transfer::AugmentParams {
        crate::label_transfer::AugmentParams {
            noise_stdev: self.noise_stdev,
            max_rotation: self.max_rotation_deg.to_radians(),
            scale_min: self.scale_min,
            scale_max: self.scale_max,
            flip_probability: self.flip_probability,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_heads: usize,
    pub head_half_axes: [f64; 2],
    pub stem_height: [f64; 2],
    pub stem_radius: f64,
    pub plot_extent: [f64; 2],
    pub surface_density: f64,
    pub occluder_density: f64,
    pub n_stations: usize,
    pub station_radius: f64,
    pub station_heights: [f64; 2],
    /// Simulated beam pitch, rad; defaults to the target resolution.
    pub beam_resolution: Option<f64>,
    pub pixel_dropout: f64,
    pub mask_dropout: f64,
    pub spurious_rate: f64,
    pub split_rate: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let scene = crate::synth::SceneSpec::default();
        Self {
            n_heads: scene.n_heads,
            head_half_axes: scene.head_half_axes,
            stem_height: scene.stem_height,
            stem_radius: scene.stem_radius,
            plot_extent: scene.plot_extent,
            surface_density: scene.surface_density,
            occluder_density: scene.occluder_density,
            n_stations: 6,
            station_radius: 1.6,
            station_heights: [0.9, 1.5],
            beam_resolution: None,
            pixel_dropout: 0.0,
            mask_dropout: 0.0,
            spurious_rate: 0.0,
            split_rate: 0.0,
        }
    }
}

impl SynthSection {
    pub fn scene_spec(&self, seed: u64) -> crate::synth::SceneSpec {
        crate::synth::SceneSpec {
            n_heads: self.n_heads,
            head_half_axes: self.head_half_axes,
            stem_height: self.stem_height,
            stem_radius: self.stem_radius,
            plot_extent: self.plot_extent,
            surface_density: self.surface_density,
            occluder_density: self.occluder_density,
            seed,
        }
    }

    pub fn corruption(&self, seed: u64) -> crate::synth::CorruptionParams {
        crate::synth::CorruptionParams {
            pixel_dropout: self.pixel_dropout,
            mask_dropout: self.mask_dropout,
            spurious_rate: self.spurious_rate,
            split_rate: self.split_rate,
            seed,
        }
    }
}

/// Directory layout. Relative paths resolve against the config file's
/// directory (or the working directory when no file was given).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub workdir: PathBuf,
    pub scans: PathBuf,
    pub poses: PathBuf,
    pub panoramas: PathBuf,
    pub masks_manifest: PathBuf,
    pub fused: PathBuf,
    pub transfer: PathBuf,
    pub truth: PathBuf,
    pub eval: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("."),
            scans: PathBuf::from("scans"),
            poses: PathBuf::from("scans/poses.json"),
            panoramas: PathBuf::from("panoramas"),
            masks_manifest: PathBuf::from("masks/masks_manifest.json"),
            fused: PathBuf::from("fused"),
            transfer: PathBuf::from("transfer"),
            truth: PathBuf::from("truth"),
            eval: PathBuf::from("eval"),
        }
    }
}

impl PathsSection {
    /// Resolves a section path against `base` and the workdir.
    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        let root = if self.workdir.is_absolute() {
            self.workdir.clone()
        } else {
            base.join(&self.workdir)
        };
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            root.join(p)
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Parameter(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        for (name, value) in [
            ("point_spacing", p.point_spacing),
            ("max_range", p.max_range),
            ("sphere_radius", p.sphere_radius),
            ("match_distance", p.match_distance),
            ("undersegmentation_distance", p.undersegmentation_distance),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive, got {value}")));
            }
        }
        if !(0.0 < p.iou_threshold && p.iou_threshold < 1.0) {
            return Err(Error::Parameter(format!(
                "iou_threshold {} outside (0, 1)",
                p.iou_threshold
            )));
        }
        if !(0.0 < p.nms_iou && p.nms_iou < 1.0) {
            return Err(Error::Parameter(format!("nms_iou {} outside (0, 1)", p.nms_iou)));
        }
        if p.knn == Some(0) {
            return Err(Error::Parameter("knn must be >= 1".into()));
        }
        if p.min_support == 0 {
            return Err(Error::Parameter("min_support must be >= 1".into()));
        }
        if let Some(stride) = p.sphere_stride {
            if !(stride > 0.0) {
                return Err(Error::Parameter("sphere_stride must be positive".into()));
            }
        }
        if p.lanczos_support == 0 {
            return Err(Error::Parameter("lanczos_support must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.filter.min_confidence) {
            return Err(Error::Parameter("min_confidence outside [0, 1]".into()));
        }
        for (name, rate) in [
            ("pixel_dropout", self.synth.pixel_dropout),
            ("mask_dropout", self.synth.mask_dropout),
            ("split_rate", self.synth.split_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Parameter(format!("{name} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn projection_params(&self) -> crate::projection::ProjectionParams {
        crate::projection::ProjectionParams {
            point_spacing: self.pipeline.point_spacing,
            max_range: self.pipeline.max_range,
            lanczos_support: self.pipeline.lanczos_support,
            native_resolution: self.projection.native_resolution,
        }
    }

    pub fn sphere_stride(&self) -> f64 {
        self.pipeline
            .sphere_stride
            .unwrap_or(self.pipeline.sphere_radius)
    }
}
