//! 2D instance-mask exchange format.
//!
//! This is the only contract an external segmenter has to satisfy: a JSON
//! manifest listing `{station_id, modality, mask_id, class, confidence,
//! png_path}` entries, each pointing at an 8-bit binary PNG (values > 127
//! are set) with the dimensions of the corresponding compressed panorama.
//! Masks may overlap; intensity-derived and range-derived masks are kept as
//! independent observations and never fused in 2D.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Intensity,
    Range,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Intensity => f.write_str("intensity"),
            Modality::Range => f.write_str("range"),
        }
    }
}

/// One binary instance mask on a station's compressed panorama.
/// `pixels` holds row-major pixel indices, sorted ascending.
#[derive(Debug, Clone)]
pub struct InstanceMask2D {
    pub station_id: String,
    pub modality: Modality,
    pub mask_id: u32,
    pub class_label: String,
    pub confidence: f64,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u32>,
}

#[derive(Debug, Clone, Default)]
pub struct MaskSet {
    pub masks: Vec<InstanceMask2D>,
}

impl MaskSet {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskManifestEntry {
    pub station_id: String,
    pub modality: Modality,
    pub mask_id: u32,
    pub class: String,
    pub confidence: f64,
    pub png_path: String,
}

/// Loads and validates a mask set. PNG paths are resolved relative to the
/// manifest's directory. Duplicate `(station_id, modality, mask_id)` keys,
/// confidences outside [0, 1], empty rasters and dimension disagreements
/// within one panorama are format errors.
pub fn load_masks(manifest_path: &Path) -> Result<MaskSet> {
    let text =
        std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let entries: Vec<MaskManifestEntry> = serde_json::from_str(&text).map_err(|e| {
        Error::Format(format!("{}: bad mask manifest: {e}", manifest_path.display()))
    })?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut seen = BTreeSet::new();
    let mut dims: HashMap<(String, Modality), (usize, usize)> = HashMap::new();
    let mut masks = Vec::with_capacity(entries.len());
    for entry in entries {
        let key = (entry.station_id.clone(), entry.modality, entry.mask_id);
        if !seen.insert(key) {
            return Err(Error::Format(format!(
                "duplicate mask key ({}, {}, {})",
                entry.station_id, entry.modality, entry.mask_id
            )));
        }
        if !(0.0..=1.0).contains(&entry.confidence) {
            return Err(Error::Format(format!(
                "mask ({}, {}, {}): confidence {} outside [0, 1]",
                entry.station_id, entry.modality, entry.mask_id, entry.confidence
            )));
        }
        let png_path = base.join(&entry.png_path);
        let img = image::open(&png_path)
            .map_err(|e| Error::Format(format!("{}: png decode: {e}", png_path.display())))?
            .into_luma8();
        let (width, height) = (img.width() as usize, img.height() as usize);
        match dims.entry((entry.station_id.clone(), entry.modality)) {
            std::collections::hash_map::Entry::Occupied(prev) => {
                if *prev.get() != (width, height) {
                    return Err(Error::Format(format!(
                        "mask ({}, {}, {}): {}x{} disagrees with earlier masks {}x{}",
                        entry.station_id,
                        entry.modality,
                        entry.mask_id,
                        width,
                        height,
                        prev.get().0,
                        prev.get().1
                    )));
                }
            }
            std::collections::hash_map::Entry::Vacant(slot) => {
                slot.insert((width, height));
            }
        }
        let pixels: Vec<u32> = img
            .as_raw()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 127)
            .map(|(i, _)| i as u32)
            .collect();
        if pixels.is_empty() {
            return Err(Error::Format(format!(
                "mask ({}, {}, {}): empty raster",
                entry.station_id, entry.modality, entry.mask_id
            )));
        }
        masks.push(InstanceMask2D {
            station_id: entry.station_id,
            modality: entry.modality,
            mask_id: entry.mask_id,
            class_label: entry.class,
            confidence: entry.confidence,
            width,
            height,
            pixels,
        });
    }
    Ok(MaskSet { masks })
}

/// Writes the set as per-mask PNGs plus `masks_manifest.json` in `dir`.
pub fn save_masks(set: &MaskSet, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(set.masks.len());
    for mask in &set.masks {
        let name = format!(
            "{}_{}_{:04}.png",
            mask.station_id, mask.modality, mask.mask_id
        );
        let mut raster = vec![0u8; mask.width * mask.height];
        for &pix in &mask.pixels {
            raster[pix as usize] = 255;
        }
        let img: image::GrayImage =
            image::ImageBuffer::from_raw(mask.width as u32, mask.height as u32, raster)
                .ok_or_else(|| Error::Format(format!("mask {name}: raster size mismatch")))?;
        let path = dir.join(&name);
        img.save(&path)
            .map_err(|e| Error::Format(format!("{}: png encode: {e}", path.display())))?;
        entries.push(MaskManifestEntry {
            station_id: mask.station_id.clone(),
            modality: mask.modality,
            mask_id: mask.mask_id,
            class: mask.class_label.clone(),
            confidence: mask.confidence,
            png_path: name,
        });
    }
    let manifest = dir.join("masks_manifest.json");
    let json = serde_json::to_string_pretty(&entries)
        .map_err(|e| Error::Format(format!("mask manifest: {e}")))?;
    std::fs::write(&manifest, json).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

/// Keeps masks with `confidence >= min_confidence` and, when `classes` is
/// non-empty, `class_label` in `classes`.
pub fn filter_masks(set: &MaskSet, min_confidence: f64, classes: &BTreeSet<String>) -> MaskSet {
    MaskSet {
        masks: set
            .masks
            .iter()
            .filter(|m| m.confidence >= min_confidence)
            .filter(|m| classes.is_empty() || classes.contains(&m.class_label))
            .cloned()
            .collect(),
    }
}

/// Checks every mask's raster dimensions against the panorama geometry
/// reported by `lookup` (station_id -> (width, height)).
pub fn validate_against_geometry<F>(set: &MaskSet, lookup: F) -> Result<()>
where
    F: Fn(&str) -> Option<(usize, usize)>,
{
    for mask in &set.masks {
        let Some((w, h)) = lookup(&mask.station_id) else {
            return Err(Error::Format(format!(
                "mask ({}, {}, {}): no panorama geometry for this station",
                mask.station_id, mask.modality, mask.mask_id
            )));
        };
        if (mask.width, mask.height) != (w, h) {
            return Err(Error::Format(format!(
                "mask ({}, {}, {}): raster {}x{} but panorama is {w}x{h}",
                mask.station_id, mask.modality, mask.mask_id, mask.width, mask.height
            )));
        }
    }
    Ok(())
}
