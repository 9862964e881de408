//! Per-station spherical projection, Lanczos compression and mask
//! back-projection.
//!
//! A station is first rendered losslessly into a range/intensity panorama at
//! the native scan resolution (estimated from the data unless overridden),
//! with an exact pixel-to-point correspondence map. The panorama is then
//! compressed with a separable Lanczos kernel to the target ground sampling
//! distance `point_spacing / max_range`, propagating the correspondence map
//! through the kernel footprint. 2D instance masks drawn on the compressed
//! panorama are back-projected into 3D via that map.

use crate::error::{Error, Result};
use crate::fusion::{compute_obb, PartialInstance};
use crate::masks::InstanceMask2D;
use crate::scan_io::ScanStation;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy)]
pub struct ProjectionParams {
    /// Target point spacing of the output cloud, meters.
    pub point_spacing: f64,
    /// Maximum range of interest, meters; points beyond it are dropped.
    pub max_range: f64,
    /// Lanczos kernel support `a`.
    pub lanczos_support: u32,
    /// Native angular resolution override, rad/pixel. Estimated from the
    /// azimuth distribution when absent.
    pub native_resolution: Option<f64>,
}

impl ProjectionParams {
    pub fn new(point_spacing: f64, max_range: f64) -> Self {
        Self {
            point_spacing,
            max_range,
            lanczos_support: 3,
            native_resolution: None,
        }
    }

    /// Angular resolution that yields `point_spacing` ground sampling at
    /// `max_range`, rad/pixel.
    pub fn target_resolution(&self) -> f64 {
        self.point_spacing / self.max_range
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.point_spacing > 0.0) {
            return Err(Error::Parameter("point_spacing must be positive".into()));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::Parameter("max_range must be positive".into()));
        }
        if self.lanczos_support == 0 {
            return Err(Error::Parameter("lanczos_support must be >= 1".into()));
        }
        if let Some(theta) = self.native_resolution {
            if !(theta > 0.0) {
                return Err(Error::Parameter("native_resolution must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Panoramic range/intensity raster with an exact pixel-to-point map.
/// Image x is azimuth (increasing), y is elevation (top row = highest).
/// `range[i] == 0` marks an empty pixel.
#[derive(Debug, Clone)]
pub struct SphericalImage {
    pub station_id: String,
    pub width: usize,
    pub height: usize,
    /// Angular resolution, rad/pixel.
    pub theta: f64,
    pub az_min: f64,
    pub az_max: f64,
    pub el_min: f64,
    pub el_max: f64,
    pub max_range: f64,
    /// Per-pixel range in meters of the nearest mapped point; 0 = empty.
    pub range: Vec<f32>,
    /// Per-pixel intensity of the nearest mapped point.
    pub intensity: Vec<f32>,
    /// CSR offsets into `map_indices`, length `width * height + 1`.
    pub map_offsets: Vec<u32>,
    /// Station point indices, grouped per pixel, ascending within a pixel.
    pub map_indices: Vec<u32>,
}

impl SphericalImage {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Station point indices mapped to pixel `i` (row-major).
    pub fn pixel_points(&self, i: usize) -> &[u32] {
        let lo = self.map_offsets[i] as usize;
        let hi = self.map_offsets[i + 1] as usize;
        &self.map_indices[lo..hi]
    }

    pub fn is_empty_pixel(&self, i: usize) -> bool {
        self.map_offsets[i] == self.map_offsets[i + 1]
    }
}

/// Azimuth/elevation/range of a sensor-frame point. Elevation uses the
/// horizontal radius, so poles map to the extreme rows instead of dividing
/// by zero.
pub fn spherical_coords(sensor_point: &nalgebra::Vector3<f64>) -> (f64, f64, f64) {
    let range = sensor_point.norm();
    let azimuth = sensor_point.y.atan2(sensor_point.x);
    let horizontal = (sensor_point.x * sensor_point.x + sensor_point.y * sensor_point.y).sqrt();
    let elevation = sensor_point.z.atan2(horizontal);
    (azimuth, elevation, range)
}

/// Median positive gap between sorted azimuth samples; the native scanner
/// column pitch for beam-organized data. Falls back to `fallback` when the
/// data has fewer than two distinct columns.
pub fn estimate_native_resolution(azimuths: &mut [f64], fallback: f64) -> f64 {
    azimuths.sort_by(f64::total_cmp);
    let mut gaps: Vec<f64> = azimuths
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|g| *g > 1e-7)
        .collect();
    if gaps.is_empty() {
        return fallback;
    }
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2]
}

fn span_to_pixels(span: f64, theta: f64) -> usize {
    ((span / theta - 1e-9).ceil().max(1.0)) as usize
}

/// Losslessly projects a station into a full-resolution panorama. Points
/// beyond `max_range` are dropped; every retained point lands in exactly one
/// pixel. Pixels hit by several points keep the nearest point's range and
/// intensity while the pixel map retains all of them.
pub fn project_station(station: &ScanStation, params: &ProjectionParams) -> Result<SphericalImage> {
    params.validate()?;
    if station.points.is_empty() {
        return Err(Error::Parameter(format!(
            "station {}: no points to project",
            station.station_id
        )));
    }

    // (original index, azimuth, elevation, range) for retained points.
    let coords: Vec<Option<(u32, f64, f64, f64)>> =
        crate::par::map_range(station.points.len(), |i| {
            let sensor = station.to_sensor_frame(&station.points[i].position);
            let (az, el, r) = spherical_coords(&sensor);
            (r > 0.0 && r <= params.max_range).then_some((i as u32, az, el, r))
        });
    let retained: Vec<(u32, f64, f64, f64)> = coords.into_iter().flatten().collect();
    if retained.is_empty() {
        return Err(Error::Parameter(format!(
            "station {}: empty image, all points beyond max_range {}",
            station.station_id, params.max_range
        )));
    }

    let theta = match params.native_resolution {
        Some(t) => t,
        None => {
            let mut az: Vec<f64> = retained.iter().map(|r| r.1).collect();
            estimate_native_resolution(&mut az, params.target_resolution())
        }
    };

    let (mut az_min, mut az_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut el_min, mut el_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(_, az, el, _) in &retained {
        az_min = az_min.min(az);
        az_max = az_max.max(az);
        el_min = el_min.min(el);
        el_max = el_max.max(el);
    }
    let width = span_to_pixels(az_max - az_min, theta);
    let height = span_to_pixels(el_max - el_min, theta);

    let pixel_of = |az: f64, el: f64| -> usize {
        let px = (((az - az_min) / theta) as usize).min(width - 1);
        let py = (((el_max - el) / theta) as usize).min(height - 1);
        py * width + px
    };

    // CSR map in two passes: counts then scatter, ascending point index per
    // pixel because retained is in index order.
    let n_pixels = width * height;
    let mut counts = vec![0u32; n_pixels];
    for &(_, az, el, _) in &retained {
        counts[pixel_of(az, el)] += 1;
    }
    let mut map_offsets = vec![0u32; n_pixels + 1];
    for i in 0..n_pixels {
        map_offsets[i + 1] = map_offsets[i] + counts[i];
    }
    let mut cursor = map_offsets[..n_pixels].to_vec();
    let mut map_indices = vec![0u32; retained.len()];
    let mut range = vec![0.0f32; n_pixels];
    let mut intensity = vec![0.0f32; n_pixels];
    let mut nearest = vec![f64::INFINITY; n_pixels];
    for &(idx, az, el, r) in &retained {
        let pix = pixel_of(az, el);
        map_indices[cursor[pix] as usize] = idx;
        cursor[pix] += 1;
        if r < nearest[pix] {
            nearest[pix] = r;
            range[pix] = r as f32;
            intensity[pix] = station.points[idx as usize].intensity;
        }
    }

    Ok(SphericalImage {
        station_id: station.station_id.clone(),
        width,
        height,
        theta,
        az_min,
        az_max,
        el_min,
        el_max,
        max_range: params.max_range,
        range,
        intensity,
        map_offsets,
        map_indices,
    })
}

/// Normalized Lanczos kernel value `sinc(x) * sinc(x / a)` on `|x| < a`.
fn lanczos_kernel(x: f64, a: f64) -> f64 {
    if x.abs() >= a {
        return 0.0;
    }
    if x == 0.0 {
        return 1.0;
    }
    let sinc = |t: f64| {
        let pt = std::f64::consts::PI * t;
        pt.sin() / pt
    };
    let w = sinc(x) * sinc(x / a);
    // Snap float dust from sin(pi * integer) so integer-aligned taps drop
    // out exactly (keeps the scale-1 path an identity).
    if w.abs() < 1e-12 {
        0.0
    } else {
        w
    }
}

/// Taps and kernel weights for one output coordinate at scale `s` (input
/// pixels per output pixel).
fn kernel_taps(out_coord: usize, s: f64, a: f64, len: usize) -> Vec<(usize, f64)> {
    let u = (out_coord as f64 + 0.5) * s - 0.5;
    let lo = (u - a * s).ceil() as i64;
    let hi = (u + a * s).floor() as i64;
    (lo..=hi)
        .filter(|j| *j >= 0 && (*j as usize) < len)
        .filter_map(|j| {
            let w = lanczos_kernel((j as f64 - u) / s, a);
            (w != 0.0).then_some((j as usize, w))
        })
        .collect()
}

/// Downscales a panorama to the target resolution with a separable,
/// empty-pixel-aware Lanczos kernel. The output pixel map is the union of
/// the input maps under positive kernel weight. Only downscaling (scale
/// factor >= 1) is supported; a factor of exactly 1 is the identity.
pub fn lanczos_resample(image: &SphericalImage, params: &ProjectionParams) -> Result<SphericalImage> {
    params.validate()?;
    let target = params.target_resolution();
    let scale = target / image.theta;
    if scale < 1.0 - 1e-9 {
        return Err(Error::Parameter(format!(
            "lanczos_resample can only downscale: native {} rad/px is coarser than target {} rad/px",
            image.theta, target
        )));
    }
    let scale = scale.max(1.0);
    let a = params.lanczos_support as f64;

    let out_w = span_to_pixels(image.az_max - image.az_min, target);
    let out_h = span_to_pixels(image.el_max - image.el_min, target);

    let taps_x: Vec<Vec<(usize, f64)>> =
        (0..out_w).map(|x| kernel_taps(x, scale, a, image.width)).collect();
    let taps_y: Vec<Vec<(usize, f64)>> =
        (0..out_h).map(|y| kernel_taps(y, scale, a, image.height)).collect();

    // Horizontal pass: per input row, masked sums over x taps.
    let horizontal: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = crate::par::map_range(image.height, |y| {
        let mut val_r = vec![0.0f64; out_w];
        let mut val_i = vec![0.0f64; out_w];
        let mut wsum = vec![0.0f64; out_w];
        for (x_out, taps) in taps_x.iter().enumerate() {
            for &(j, w) in taps {
                let pix = y * image.width + j;
                if image.is_empty_pixel(pix) {
                    continue;
                }
                val_r[x_out] += w * image.range[pix] as f64;
                val_i[x_out] += w * image.intensity[pix] as f64;
                wsum[x_out] += w;
            }
        }
        (val_r, val_i, wsum)
    });

    // Vertical pass.
    let rows: Vec<(Vec<f32>, Vec<f32>)> = crate::par::map_range(out_h, |y_out| {
        let mut range_row = vec![0.0f32; out_w];
        let mut intensity_row = vec![0.0f32; out_w];
        for x_out in 0..out_w {
            let mut num_r = 0.0;
            let mut num_i = 0.0;
            let mut den = 0.0;
            for &(i, wy) in &taps_y[y_out] {
                let (val_r, val_i, wsum) = &horizontal[i];
                num_r += wy * val_r[x_out];
                num_i += wy * val_i[x_out];
                den += wy * wsum[x_out];
            }
            if den > 1e-6 {
                range_row[x_out] = (num_r / den).max(0.0) as f32;
                intensity_row[x_out] = (num_i / den).clamp(0.0, 1.0) as f32;
            }
        }
        (range_row, intensity_row)
    });

    let mut range = Vec::with_capacity(out_w * out_h);
    let mut intensity = Vec::with_capacity(out_w * out_h);
    for (r, i) in rows {
        range.extend(r);
        intensity.extend(i);
    }

    // Correspondence map: union of input maps where the 2D weight is
    // positive (same-sign x and y weights).
    let maps: Vec<Vec<u32>> = crate::par::map_range(out_h * out_w, |out_pix| {
        let y_out = out_pix / out_w;
        let x_out = out_pix % out_w;
        let mut indices: Vec<u32> = Vec::new();
        for &(i, wy) in &taps_y[y_out] {
            for &(j, wx) in &taps_x[x_out] {
                if wx * wy <= 0.0 {
                    continue;
                }
                let pix = i * image.width + j;
                indices.extend_from_slice(image.pixel_points(pix));
            }
        }
        indices.sort_unstable();
        indices.dedup();
        indices
    });

    let mut map_offsets = Vec::with_capacity(out_w * out_h + 1);
    map_offsets.push(0u32);
    let mut map_indices = Vec::new();
    for m in &maps {
        map_indices.extend_from_slice(m);
        map_offsets.push(map_indices.len() as u32);
    }

    Ok(SphericalImage {
        station_id: image.station_id.clone(),
        width: out_w,
        height: out_h,
        theta: target,
        az_min: image.az_min,
        az_max: image.az_max,
        el_min: image.el_min,
        el_max: image.el_max,
        max_range: image.max_range,
        range,
        intensity,
        map_offsets,
        map_indices,
    })
}

/// Back-projects a 2D mask into the station's 3D points via the pixel map.
/// Returns `None` when the mask covers no mapped points.
pub fn backproject_mask(
    image: &SphericalImage,
    mask: &InstanceMask2D,
    station: &ScanStation,
) -> Result<Option<PartialInstance>> {
    if mask.width != image.width || mask.height != image.height {
        return Err(Error::Format(format!(
            "mask {}/{}/{} is {}x{} but panorama is {}x{}",
            mask.station_id,
            mask.modality,
            mask.mask_id,
            mask.width,
            mask.height,
            image.width,
            image.height
        )));
    }
    let mut indices: Vec<u32> = Vec::new();
    for &pix in &mask.pixels {
        indices.extend_from_slice(image.pixel_points(pix as usize));
    }
    indices.sort_unstable();
    indices.dedup();
    if indices.is_empty() {
        return Ok(None);
    }
    let points: Vec<crate::scan_io::ScanPoint> = indices
        .iter()
        .map(|&i| station.points[i as usize])
        .collect();
    let positions: Vec<nalgebra::Vector3<f64>> = points.iter().map(|p| p.position).collect();
    let obb = compute_obb(&positions);
    Ok(Some(PartialInstance {
        points,
        class_label: mask.class_label.clone(),
        confidence: mask.confidence,
        station_id: mask.station_id.clone(),
        modality: mask.modality,
        mask_id: mask.mask_id,
        obb,
    }))
}

// ---------------------------------------------------------------------------
// Panorama export / import
// ---------------------------------------------------------------------------

/// Geometry sidecar for one station's panorama pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanoramaGeometry {
    pub station_id: String,
    pub width: usize,
    pub height: usize,
    pub theta: f64,
    pub az_min: f64,
    pub az_max: f64,
    pub el_min: f64,
    pub el_max: f64,
    pub max_range: f64,
    pub native_theta: f64,
    pub native_width: usize,
    pub native_height: usize,
}

pub fn panorama_paths(dir: &Path, station_id: &str) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{station_id}_intensity.png")),
        dir.join(format!("{station_id}_range.png")),
        dir.join(format!("{station_id}_geom.json")),
        dir.join(format!("{station_id}_pixmap.bin")),
    )
}

/// Writes the compressed panorama pair: 16-bit PNGs (intensity scaled to
/// 0..65535, range at 1 mm/unit), the geometry sidecar, and the CSR pixel
/// map (`u32` offsets then `u32` indices, little-endian).
pub fn export_panoramas(
    dir: &Path,
    compressed: &SphericalImage,
    native: &SphericalImage,
) -> Result<PanoramaGeometry> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (intensity_png, range_png, geom_json, pixmap_bin) =
        panorama_paths(dir, &compressed.station_id);

    let w = compressed.width as u32;
    let h = compressed.height as u32;
    let intensity: Vec<u16> = compressed
        .intensity
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let range: Vec<u16> = compressed
        .range
        .iter()
        .map(|&r| ((r as f64) * 1000.0).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let save = |path: &Path, data: Vec<u16>| -> Result<()> {
        let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(w, h, data)
                .ok_or_else(|| Error::Format("panorama buffer size mismatch".into()))?;
        img.save(path)
            .map_err(|e| Error::Format(format!("{}: png encode: {e}", path.display())))
    };
    save(&intensity_png, intensity)?;
    save(&range_png, range)?;

    let geometry = PanoramaGeometry {
        station_id: compressed.station_id.clone(),
        width: compressed.width,
        height: compressed.height,
        theta: compressed.theta,
        az_min: compressed.az_min,
        az_max: compressed.az_max,
        el_min: compressed.el_min,
        el_max: compressed.el_max,
        max_range: compressed.max_range,
        native_theta: native.theta,
        native_width: native.width,
        native_height: native.height,
    };
    let json = serde_json::to_string_pretty(&geometry)
        .map_err(|e| Error::Format(format!("geometry sidecar: {e}")))?;
    std::fs::write(&geom_json, json).map_err(|e| Error::io(&geom_json, e))?;

    let mut bytes =
        Vec::with_capacity(4 * (compressed.map_offsets.len() + compressed.map_indices.len()));
    for v in compressed.map_offsets.iter().chain(&compressed.map_indices) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&pixmap_bin, bytes).map_err(|e| Error::io(&pixmap_bin, e))?;
    Ok(geometry)
}

pub fn load_geometry(dir: &Path, station_id: &str) -> Result<PanoramaGeometry> {
    let path = dir.join(format!("{station_id}_geom.json"));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: bad geometry sidecar: {e}", path.display())))
}

/// Restores a compressed panorama from its exported files. Channel values
/// go through the 16-bit quantization; the pixel map is exact.
pub fn load_panorama(dir: &Path, station_id: &str) -> Result<SphericalImage> {
    let geometry = load_geometry(dir, station_id)?;
    let (intensity_png, range_png, _, pixmap_bin) = panorama_paths(dir, station_id);

    let load_png = |path: &Path| -> Result<Vec<u16>> {
        let img = image::open(path)
            .map_err(|e| Error::Format(format!("{}: png decode: {e}", path.display())))?
            .into_luma16();
        if img.width() as usize != geometry.width || img.height() as usize != geometry.height {
            return Err(Error::Format(format!(
                "{}: dimensions {}x{} disagree with geometry sidecar {}x{}",
                path.display(),
                img.width(),
                img.height(),
                geometry.width,
                geometry.height
            )));
        }
        Ok(img.into_raw())
    };
    let intensity: Vec<f32> = load_png(&intensity_png)?
        .into_iter()
        .map(|v| v as f32 / 65535.0)
        .collect();
    let range: Vec<f32> = load_png(&range_png)?
        .into_iter()
        .map(|v| v as f32 / 1000.0)
        .collect();

    let bytes = std::fs::read(&pixmap_bin).map_err(|e| Error::io(&pixmap_bin, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "{}: length not a multiple of 4",
            pixmap_bin.display()
        )));
    }
    let words: Vec<u32> = bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let n_offsets = geometry.width * geometry.height + 1;
    if words.len() < n_offsets {
        return Err(Error::Format(format!(
            "{}: truncated offset table",
            pixmap_bin.display()
        )));
    }
    let map_offsets = words[..n_offsets].to_vec();
    let map_indices = words[n_offsets..].to_vec();
    if map_offsets.windows(2).any(|w| w[0] > w[1])
        || *map_offsets.last().unwrap() as usize != map_indices.len()
    {
        return Err(Error::Format(format!(
            "{}: inconsistent CSR offsets",
            pixmap_bin.display()
        )));
    }

    Ok(SphericalImage {
        station_id: geometry.station_id.clone(),
        width: geometry.width,
        height: geometry.height,
        theta: geometry.theta,
        az_min: geometry.az_min,
        az_max: geometry.az_max,
        el_min: geometry.el_min,
        el_max: geometry.el_max,
        max_range: geometry.max_range,
        range,
        intensity,
        map_offsets,
        map_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::Modality;
    use crate::scan_io::ScanPoint;
    use nalgebra::{Matrix3, Vector3};

    fn station(points: Vec<(f64, f64, f64)>) -> ScanStation {
        ScanStation {
            station_id: "t".into(),
            origin: Vector3::zeros(),
            orientation: Matrix3::identity(),
            points: points
                .into_iter()
                .map(|(x, y, z)| ScanPoint {
                    position: Vector3::new(x, y, z),
                    intensity: 0.5,
                })
                .collect(),
        }
    }

    fn params(native: f64) -> ProjectionParams {
        ProjectionParams {
            point_spacing: 0.003,
            max_range: 6.0,
            lanczos_support: 3,
            native_resolution: Some(native),
        }
    }

    #[test]
    fn single_axis_point_lands_at_origin_pixel() {
        let st = station(vec![(2.0, 0.0, 0.0)]);
        let img = project_station(&st, &params(0.001)).unwrap();
        assert_eq!((img.width, img.height), (1, 1));
        assert_eq!(img.range[0], 2.0);
        assert_eq!(img.pixel_points(0), &[0]);
    }

    #[test]
    fn nearest_point_wins_shared_pixel() {
        let st = station(vec![(4.0, 0.0, 0.0), (2.0, 0.00001, 0.0)]);
        let img = project_station(&st, &params(0.01)).unwrap();
        assert_eq!(img.pixel_count(), 1);
        assert_eq!(img.range[0], 2.0);
        assert_eq!(img.pixel_points(0), &[0, 1]);
    }

    #[test]
    fn point_beyond_max_range_is_excluded() {
        let st = station(vec![(7.0, 0.0, 0.0), (2.0, 0.1, 0.0)]);
        let img = project_station(&st, &params(0.001)).unwrap();
        let mapped: usize = (0..img.pixel_count()).map(|i| img.pixel_points(i).len()).sum();
        assert_eq!(mapped, 1);
        assert_eq!(img.pixel_points(0), &[1]);
    }

    #[test]
    fn all_points_beyond_max_range_is_an_error() {
        let st = station(vec![(7.0, 0.0, 0.0), (8.0, 1.0, 0.0)]);
        assert!(matches!(
            project_station(&st, &params(0.001)),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn native_resolution_estimate_recovers_column_pitch() {
        let pitch = 2e-4;
        let mut az: Vec<f64> = (0..50)
            .flat_map(|c| (0..3).map(move |r| c as f64 * pitch + r as f64 * 1e-9))
            .collect();
        let got = estimate_native_resolution(&mut az, 1.0);
        assert!((got - pitch).abs() < 1e-8, "estimated {got}");
    }

    #[test]
    fn full_resolution_round_trip_is_exact() {
        // Every retained point appears in exactly one pixel, and the union
        // of all pixel maps is the retained set.
        let mut rng_state = 88172645463325252u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state as f64 / u64::MAX as f64) * 2.0 - 1.0
        };
        let pts: Vec<(f64, f64, f64)> = (0..5000)
            .map(|_| (2.0 + next(), next(), next() * 0.5))
            .collect();
        let st = station(pts);
        let img = project_station(&st, &params(0.002)).unwrap();
        let mut seen = vec![0u8; st.points.len()];
        for i in 0..img.pixel_count() {
            for &idx in img.pixel_points(i) {
                seen[idx as usize] += 1;
            }
        }
        let retained: Vec<bool> = st
            .points
            .iter()
            .map(|p| p.position.norm() <= 6.0)
            .collect();
        for (i, &count) in seen.iter().enumerate() {
            assert_eq!(count, u8::from(retained[i]), "point {i}");
        }
    }

    #[test]
    fn nearest_wins_matches_brute_force() {
        let mut rng_state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            rng_state as f64 / u64::MAX as f64
        };
        let pts: Vec<(f64, f64, f64)> = (0..2000)
            .map(|_| (1.0 + next() * 2.0, next() - 0.5, next() - 0.5))
            .collect();
        let st = station(pts);
        let img = project_station(&st, &params(0.02)).unwrap();
        for pix in 0..img.pixel_count() {
            let members = img.pixel_points(pix);
            if members.is_empty() {
                assert_eq!(img.range[pix], 0.0);
                continue;
            }
            let min_range = members
                .iter()
                .map(|&i| st.points[i as usize].position.norm())
                .fold(f64::INFINITY, f64::min);
            assert!((img.range[pix] as f64 - min_range).abs() < 1e-6);
        }
    }

    #[test]
    fn lanczos_preserves_constant_image() {
        let pts: Vec<(f64, f64, f64)> = (0..40)
            .flat_map(|i| {
                (0..40).map(move |j| {
                    let az = (i as f64 - 20.0) * 0.002;
                    let el = (j as f64 - 20.0) * 0.002;
                    (3.0 * az.cos() * el.cos(), 3.0 * az.sin() * el.cos(), 3.0 * el.sin())
                })
            })
            .collect();
        let st = station(pts);
        let mut p = params(0.002);
        p.point_spacing = 0.024; // 4x downscale at max_range 6
        let full = project_station(&st, &p).unwrap();
        let small = lanczos_resample(&full, &p).unwrap();
        for pix in 0..small.pixel_count() {
            if !small.is_empty_pixel(pix) {
                assert!(
                    (small.range[pix] - 3.0).abs() < 1e-5,
                    "pixel {pix}: {}",
                    small.range[pix]
                );
            }
        }
    }

    #[test]
    fn lanczos_scale_one_is_identity() {
        let st = station(vec![(2.0, 0.0, 0.0), (2.0, 0.01, 0.0), (2.0, 0.0, 0.01)]);
        let p = params(0.0005); // native == target: 0.003 / 6.0
        let full = project_station(&st, &p).unwrap();
        let out = lanczos_resample(&full, &p).unwrap();
        assert_eq!(out.width, full.width);
        assert_eq!(out.height, full.height);
        assert_eq!(out.range, full.range);
        assert_eq!(out.intensity, full.intensity);
        assert_eq!(out.map_offsets, full.map_offsets);
        assert_eq!(out.map_indices, full.map_indices);
    }

    #[test]
    fn lanczos_impulse_matches_direct_kernel_sum() {
        // Independent oracle: dense 2D evaluation of the masked kernel
        // formula, no separable passes.
        let n = 32usize;
        let pts: Vec<(f64, f64, f64)> = (0..n)
            .flat_map(|i| {
                (0..n).map(move |j| {
                    let az = i as f64 * 0.002 + 0.0005;
                    let el = j as f64 * 0.002 + 0.0005;
                    let r = if (i, j) == (16, 16) { 2.0 } else { 4.0 };
                    (r * az.cos() * el.cos(), r * az.sin() * el.cos(), r * el.sin())
                })
            })
            .collect();
        let st = station(pts);
        let mut p = params(0.002);
        p.point_spacing = 0.024; // scale 2: target 0.004 rad/px
        let full = project_station(&st, &p).unwrap();
        let small = lanczos_resample(&full, &p).unwrap();

        let s = p.target_resolution() / full.theta;
        assert!((s - 2.0).abs() < 1e-12);
        let a = 3.0;
        for y_out in 0..small.height {
            for x_out in 0..small.width {
                let mut num = 0.0;
                let mut den = 0.0;
                let u = (x_out as f64 + 0.5) * s - 0.5;
                let v = (y_out as f64 + 0.5) * s - 0.5;
                for y_in in 0..full.height {
                    for x_in in 0..full.width {
                        let pix = y_in * full.width + x_in;
                        if full.is_empty_pixel(pix) {
                            continue;
                        }
                        let w = lanczos_kernel((x_in as f64 - u) / s, a)
                            * lanczos_kernel((y_in as f64 - v) / s, a);
                        num += w * full.range[pix] as f64;
                        den += w;
                    }
                }
                let expect = if den > 1e-6 { (num / den).max(0.0) } else { 0.0 };
                let got = small.range[y_out * small.width + x_out] as f64;
                assert!(
                    (got - expect).abs() < 1e-5,
                    "({x_out},{y_out}): got {got}, expect {expect}"
                );
            }
        }
    }

    #[test]
    fn backproject_one_pixel_mask() {
        let st = station(vec![
            (4.0, 0.0, 0.0),
            (2.0, 0.00001, 0.0),
            (3.0, 0.00002, 0.0),
        ]);
        let img = project_station(&st, &params(0.01)).unwrap();
        assert_eq!(img.pixel_count(), 1);
        let mask = InstanceMask2D {
            station_id: "t".into(),
            modality: Modality::Intensity,
            mask_id: 0,
            class_label: "head".into(),
            confidence: 1.0,
            width: 1,
            height: 1,
            pixels: vec![0],
        };
        let inst = backproject_mask(&img, &mask, &st).unwrap().unwrap();
        assert_eq!(inst.points.len(), 3);
    }

    #[test]
    fn backproject_empty_mask_returns_none() {
        let st = station(vec![(2.0, 0.0, 0.0), (2.0, 0.3, 0.0)]);
        let img = project_station(&st, &params(0.01)).unwrap();
        let empty_pixel = (0..img.pixel_count())
            .find(|&i| img.is_empty_pixel(i))
            .expect("sparse image has empty pixels");
        let mask = InstanceMask2D {
            station_id: "t".into(),
            modality: Modality::Range,
            mask_id: 1,
            class_label: "head".into(),
            confidence: 1.0,
            width: img.width,
            height: img.height,
            pixels: vec![empty_pixel as u32],
        };
        assert!(backproject_mask(&img, &mask, &st).unwrap().is_none());
    }

    #[test]
    fn backproject_dimension_mismatch_is_format_error() {
        let st = station(vec![(2.0, 0.0, 0.0)]);
        let img = project_station(&st, &params(0.01)).unwrap();
        let mask = InstanceMask2D {
            station_id: "t".into(),
            modality: Modality::Range,
            mask_id: 1,
            class_label: "head".into(),
            confidence: 1.0,
            width: img.width + 1,
            height: img.height,
            pixels: vec![0],
        };
        assert!(matches!(
            backproject_mask(&img, &mask, &st),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn panorama_export_import_round_trip() {
        let pts: Vec<(f64, f64, f64)> = (0..20)
            .flat_map(|i| (0..20).map(move |j| (2.0, (i as f64 - 10.0) * 0.01, (j as f64 - 10.0) * 0.01)))
            .collect();
        let st = station(pts);
        let p = params(0.005);
        let full = project_station(&st, &p).unwrap();
        let mut p2 = p;
        p2.point_spacing = 0.06; // target 0.01 rad/px, scale 2
        let small = lanczos_resample(&full, &p2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_panoramas(dir.path(), &small, &full).unwrap();
        let loaded = load_panorama(dir.path(), "t").unwrap();
        assert_eq!(loaded.width, small.width);
        assert_eq!(loaded.map_offsets, small.map_offsets);
        assert_eq!(loaded.map_indices, small.map_indices);
        for (a, b) in loaded.range.iter().zip(&small.range) {
            assert!((a - b).abs() < 0.001); // 1 mm quantization
        }
    }
}
