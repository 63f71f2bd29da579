//! Tissue masking and patch-grid tiling.
//!
//! Masking pipeline: HSV-style thresholds (saturation high enough, grayscale
//! intensity below the white point), then a morphological closing to group
//! nearby regions, then an erosion to drop boundary noise. The closing clips
//! its neighborhood to the image (identity on interior shapes); the final
//! erosion treats out-of-bounds as empty, so it trims image borders too.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::util::seeded_rng;
use rand::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum TileError {
    #[error("image {width}x{height} smaller than patch size {patch}")]
    ImageTooSmall { width: u32, height: u32, patch: u32 },
    #[error("patch/stride overlap must be 32 px (got patch {patch}, stride {stride})")]
    BadOverlap { patch: u32, stride: u32 },
    #[error("manifest io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub saturation_threshold: f64,
    pub intensity_threshold: f64,
    pub closing_radius: u32,
    pub erosion_radius: u32,
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams {
            saturation_threshold: 0.07,
            intensity_threshold: 0.9,
            closing_radius: 4,
            erosion_radius: 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TissueMask {
    pub width: u32,
    pub height: u32,
    pub bitmap: Vec<bool>,
    pub params: MaskParams,
}

impl TissueMask {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bitmap[(y * self.width + x) as usize]
    }

    pub fn tissue_count(&self) -> usize {
        self.bitmap.iter().filter(|&&b| b).count()
    }
}

fn threshold_pixel(r: u8, g: u8, b: u8, p: &MaskParams) -> bool {
    let (rf, gf, bf) = (r as f64, g as f64, b as f64);
    let max = rf.max(gf).max(bf);
    let min = rf.min(gf).min(bf);
    let saturation = if max == 0.0 { 0.0 } else { (max - min) / max };
    let intensity = (rf + gf + bf) / (3.0 * 255.0);
    saturation >= p.saturation_threshold && intensity < p.intensity_threshold
}

/// Separable square-window count, clipped to bounds. Returns per-pixel counts
/// of true neighbors within Chebyshev radius `r` plus the clipped window area.
fn window_counts(src: &[bool], w: usize, h: usize, r: usize) -> (Vec<u32>, Vec<u32>) {
    let mut row_counts = vec![0u32; w * h];
    let mut row_sizes = vec![0u32; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let mut prefix = vec![0u32; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x] as u32;
        }
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            row_counts[y * w + x] = prefix[hi + 1] - prefix[lo];
            row_sizes[y * w + x] = (hi - lo + 1) as u32;
        }
    }
    let mut counts = vec![0u32; w * h];
    let mut sizes = vec![0u32; w * h];
    for x in 0..w {
        let mut prefix = vec![0u32; h + 1];
        let mut size_prefix = vec![0u32; h + 1];
        for y in 0..h {
            prefix[y + 1] = prefix[y] + row_counts[y * w + x];
            size_prefix[y + 1] = size_prefix[y] + row_sizes[y * w + x];
        }
        for y in 0..h {
            let lo = y.saturating_sub(r);
            let hi = (y + r).min(h - 1);
            counts[y * w + x] = prefix[hi + 1] - prefix[lo];
            sizes[y * w + x] = size_prefix[hi + 1] - size_prefix[lo];
        }
    }
    (counts, sizes)
}

fn dilate(src: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    let (counts, _) = window_counts(src, w, h, r);
    counts.into_iter().map(|c| c > 0).collect()
}

/// Erosion with the neighborhood clipped to bounds (borders survive).
fn erode_clipped(src: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    let (counts, sizes) = window_counts(src, w, h, r);
    counts.into_iter().zip(sizes).map(|(c, s)| c == s).collect()
}

/// Erosion treating out-of-bounds as empty (borders are trimmed).
fn erode_zero_padded(src: &[bool], w: usize, h: usize, r: usize) -> Vec<bool> {
    let full = ((2 * r + 1) * (2 * r + 1)) as u32;
    let (counts, _) = window_counts(src, w, h, r);
    counts.into_iter().map(|c| c == full).collect()
}

pub fn tissue_mask(image: &image::RgbImage, params: MaskParams) -> TissueMask {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let mut raw = vec![false; w * h];
    for (x, y, p) in image.enumerate_pixels() {
        raw[y as usize * w + x as usize] = threshold_pixel(p.0[0], p.0[1], p.0[2], &params);
    }
    let closed = erode_clipped(
        &dilate(&raw, w, h, params.closing_radius as usize),
        w,
        h,
        params.closing_radius as usize,
    );
    let bitmap = erode_zero_padded(&closed, w, h, params.erosion_radius as usize);
    TissueMask { width: w as u32, height: h as u32, bitmap, params }
}

pub const PATCH_PX: u32 = 224;
pub const STRIDE_PX: u32 = 192;
pub const PATCH_BUDGET: usize = 10_240;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileParams {
    pub patch_px: u32,
    pub stride_px: u32,
    pub min_tissue_fraction: f64,
    pub budget: usize,
}

impl Default for TileParams {
    fn default() -> Self {
        TileParams {
            patch_px: PATCH_PX,
            stride_px: STRIDE_PX,
            min_tissue_fraction: 0.05,
            budget: PATCH_BUDGET,
        }
    }
}

impl TileParams {
    /// The 32 px overlap between neighboring patches is a fixed property of
    /// the geometry; any other pairing is a configuration mistake.
    pub fn validate(&self) -> Result<(), TileError> {
        if self.patch_px - self.stride_px != 32 {
            return Err(TileError::BadOverlap { patch: self.patch_px, stride: self.stride_px });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchSet {
    pub slide_id: String,
    pub coords: Vec<(u32, u32)>,
    pub n_candidates: usize,
    pub patch_px: u32,
    pub stride_px: u32,
    pub budget: usize,
}

/// Emits grid coordinates whose window holds at least the tissue threshold.
/// A window must contain at least one tissue pixel regardless of the
/// configured fraction.
pub fn tile(mask: &TissueMask, params: &TileParams) -> Result<Vec<(u32, u32)>, TileError> {
    params.validate()?;
    let (w, h) = (mask.width, mask.height);
    let patch = params.patch_px;
    if w < patch || h < patch {
        return Err(TileError::ImageTooSmall { width: w, height: h, patch });
    }
    // Integral image over the mask; the brute-force oracle in the tests
    // re-counts every window directly.
    let (wi, hi) = (w as usize, h as usize);
    let mut integral = vec![0u64; (wi + 1) * (hi + 1)];
    for y in 0..hi {
        let mut row_acc = 0u64;
        for x in 0..wi {
            row_acc += mask.bitmap[y * wi + x] as u64;
            integral[(y + 1) * (wi + 1) + x + 1] = integral[y * (wi + 1) + x + 1] + row_acc;
        }
    }
    let window_sum = |x: usize, y: usize, size: usize| -> u64 {
        let (x1, y1) = (x + size, y + size);
        integral[y1 * (wi + 1) + x1] + integral[y * (wi + 1) + x]
            - integral[y * (wi + 1) + x1]
            - integral[y1 * (wi + 1) + x]
    };
    let area = (patch as f64) * (patch as f64);
    let needed = ((params.min_tissue_fraction * area).ceil() as u64).max(1);
    let mut coords = Vec::new();
    let mut y = 0u32;
    while y + patch <= h {
        let mut x = 0u32;
        while x + patch <= w {
            if window_sum(x as usize, y as usize, patch as usize) >= needed {
                coords.push((x, y));
            }
            x += params.stride_px;
        }
        y += params.stride_px;
    }
    Ok(coords)
}

/// Keeps all coordinates when within budget; otherwise a uniform sample
/// without replacement, deterministic under the seed, in original order.
pub fn sample_budget(coords: &[(u32, u32)], budget: usize, seed: u64) -> Vec<(u32, u32)> {
    if coords.len() <= budget {
        return coords.to_vec();
    }
    let mut indices: Vec<usize> = (0..coords.len()).collect();
    let mut rng = seeded_rng(seed, "patch-budget");
    // Partial Fisher-Yates: the first `budget` entries become the sample.
    for i in 0..budget {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    let mut picked = indices[..budget].to_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| coords[i]).collect()
}

// ---------------------------------------------------------------------------
// Patch manifest: text header with the mask parameters, then one binary
// record per slide (little-endian u32 pairs for coordinates).
// ---------------------------------------------------------------------------

const MANIFEST_HEADER_TAG: &str = "patchset v1";

pub fn write_patch_manifest(path: &Path, params: &MaskParams, sets: &[PatchSet]) -> Result<(), TileError> {
    let io_err = |e: std::io::Error| TileError::Io(e.to_string());
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    writeln!(
        w,
        "{MANIFEST_HEADER_TAG} saturation={} intensity={} closing={} erosion={}",
        params.saturation_threshold,
        params.intensity_threshold,
        params.closing_radius,
        params.erosion_radius
    )
    .map_err(io_err)?;
    for set in sets {
        let id = set.slide_id.as_bytes();
        w.write_all(&(id.len() as u16).to_le_bytes()).map_err(io_err)?;
        w.write_all(id).map_err(io_err)?;
        w.write_all(&(set.n_candidates as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(set.coords.len() as u32).to_le_bytes()).map_err(io_err)?;
        for &(x, y) in &set.coords {
            w.write_all(&x.to_le_bytes()).map_err(io_err)?;
            w.write_all(&y.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_patch_manifest(path: &Path) -> Result<(MaskParams, Vec<PatchSet>), TileError> {
    let io_err = |e: std::io::Error| TileError::Io(e.to_string());
    let mut r = BufReader::new(std::fs::File::open(path).map_err(io_err)?);
    let mut header = String::new();
    r.read_line(&mut header).map_err(io_err)?;
    let header = header.trim_end();
    if !header.starts_with(MANIFEST_HEADER_TAG) {
        return Err(TileError::Io(format!("bad manifest header: {header}")));
    }
    let mut params = MaskParams::default();
    for field in header.split_whitespace().skip(2) {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| TileError::Io(format!("bad header field {field}")))?;
        let parse = |v: &str| {
            v.parse::<f64>().map_err(|e| TileError::Io(format!("bad {key}: {e}")))
        };
        match key {
            "saturation" => params.saturation_threshold = parse(value)?,
            "intensity" => params.intensity_threshold = parse(value)?,
            "closing" => params.closing_radius = parse(value)? as u32,
            "erosion" => params.erosion_radius = parse(value)? as u32,
            _ => {}
        }
    }
    let mut sets = Vec::new();
    loop {
        let mut len2 = [0u8; 2];
        match r.read_exact(&mut len2) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(io_err(e)),
        }
        let id_len = u16::from_le_bytes(len2) as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(io_err)?;
        let mut n4 = [0u8; 4];
        r.read_exact(&mut n4).map_err(io_err)?;
        let n_candidates = u32::from_le_bytes(n4) as usize;
        r.read_exact(&mut n4).map_err(io_err)?;
        let n_sampled = u32::from_le_bytes(n4) as usize;
        let mut coords = Vec::with_capacity(n_sampled);
        for _ in 0..n_sampled {
            let mut xy = [0u8; 8];
            r.read_exact(&mut xy).map_err(io_err)?;
            coords.push((
                u32::from_le_bytes(xy[..4].try_into().unwrap()),
                u32::from_le_bytes(xy[4..].try_into().unwrap()),
            ));
        }
        sets.push(PatchSet {
            slide_id: String::from_utf8(id).map_err(|e| TileError::Io(e.to_string()))?,
            coords,
            n_candidates,
            patch_px: PATCH_PX,
            stride_px: STRIDE_PX,
            budget: PATCH_BUDGET,
        });
    }
    Ok((params, sets))
}
