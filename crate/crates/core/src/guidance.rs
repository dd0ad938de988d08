//! Sparse-hint guidance: flipped-Gaussian modulation of variance volumes.
//!
//! A valid hint `z*` at a pixel rescales every cost cell of that pixel by
//! `k * (1 - exp(-(z - z*)^2 / (2 c^2)))`, which is exactly zero at the
//! hinted depth and approaches `k` away from it. Unhinted pixels are left
//! untouched. Coarse-to-fine stages modulate with the hint map downsampled
//! to the stage resolution by nearest neighbor.

use rayon::prelude::*;
use thiserror::Error;

use crate::sweep::CostVolume;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("resolution mismatch: hints are {hints_w}x{hints_h}, volume is {vol_w}x{vol_h}")]
    ResolutionMismatch {
        hints_w: usize,
        hints_h: usize,
        vol_w: usize,
        vol_h: usize,
    },
    #[error("hint at ({x}, {y}) has non-positive depth {depth}")]
    NonPositiveHint { x: usize, y: usize, depth: f32 },
    #[error("scale {scale} maps {width}x{height} to a non-integral resolution")]
    NonIntegerResolution {
        scale: f64,
        width: usize,
        height: usize,
    },
    #[error("guidance parameters out of range: k={k}, c={c} (need k > 1, c > 0)")]
    InvalidParams { k: f64, c: f64 },
}

/// Per-pixel optional depth measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap {
    width: usize,
    height: usize,
    depth: Vec<f32>,
    mask: Vec<bool>,
}

impl SparseDepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            mask: vec![false; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn set_hint(&mut self, x: usize, y: usize, depth: f32) {
        let i = y * self.width + x;
        self.depth[i] = depth;
        self.mask[i] = true;
    }

    #[inline]
    pub fn clear_hint(&mut self, x: usize, y: usize) {
        let i = y * self.width + x;
        self.mask[i] = false;
        self.depth[i] = 0.0;
    }

    #[inline]
    pub fn is_hinted(&self, x: usize, y: usize) -> bool {
        self.mask[y * self.width + x]
    }

    /// Depth of the hint at a pixel, if there is one.
    #[inline]
    pub fn hint(&self, x: usize, y: usize) -> Option<f32> {
        let i = y * self.width + x;
        self.mask[i].then_some(self.depth[i])
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Fraction of hinted pixels.
    pub fn density(&self) -> f64 {
        self.count() as f64 / (self.width * self.height) as f64
    }

    pub fn iter_hints(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        (0..self.height).flat_map(move |y| {
            (0..self.width).filter_map(move |x| self.hint(x, y).map(|d| (x, y, d)))
        })
    }

    fn first_non_positive(&self) -> Option<(usize, usize, f32)> {
        self.iter_hints().find(|(_, _, d)| *d <= 0.0)
    }
}

/// Amplitude and width of the flipped Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceParams {
    k: f64,
    c: f64,
}

impl GuidanceParams {
    pub fn new(k: f64, c: f64) -> Result<Self, GuidanceError> {
        if !(k > 1.0 && c > 0.0) {
            return Err(GuidanceError::InvalidParams { k, c });
        }
        Ok(Self { k, c })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl Default for GuidanceParams {
    /// k = 10, c = 0.01 in scene depth units.
    fn default() -> Self {
        Self { k: 10.0, c: 0.01 }
    }
}

/// What to do with a hint whose depth falls outside a pixel's hypothesis
/// range (the Gaussian then has no minimum inside the range and only
/// inflates costs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutOfRangePolicy {
    /// Modulate anyway.
    #[default]
    Modulate,
    /// Treat the pixel as unhinted for this volume.
    Ignore,
}

/// Modulate a cost volume with sparse hints. Returns a fresh volume; the
/// input is left untouched so several guidance variants can share one build.
pub fn modulate_volume(
    volume: &CostVolume,
    hints: &SparseDepthMap,
    params: &GuidanceParams,
) -> Result<CostVolume, GuidanceError> {
    modulate_volume_with(volume, hints, params, OutOfRangePolicy::Modulate)
}

pub fn modulate_volume_with(
    volume: &CostVolume,
    hints: &SparseDepthMap,
    params: &GuidanceParams,
    policy: OutOfRangePolicy,
) -> Result<CostVolume, GuidanceError> {
    if hints.width() != volume.width() || hints.height() != volume.height() {
        return Err(GuidanceError::ResolutionMismatch {
            hints_w: hints.width(),
            hints_h: hints.height(),
            vol_w: volume.width(),
            vol_h: volume.height(),
        });
    }
    if let Some((x, y, depth)) = hints.first_non_positive() {
        return Err(GuidanceError::NonPositiveHint { x, y, depth });
    }
    let (w, d) = (volume.width(), volume.depth_count());
    let k = params.k;
    let inv_two_c2 = 1.0 / (2.0 * params.c * params.c);
    let mut costs = volume.costs().to_vec();
    costs
        .par_chunks_mut(w * d)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                let Some(hint) = hints.hint(x, y) else {
                    continue; // unhinted pixels stay bit-identical
                };
                let z_star = hint as f64;
                if policy == OutOfRangePolicy::Ignore {
                    let lo = volume.hypothesis_depth(x, y, 0);
                    let hi = volume.hypothesis_depth(x, y, d - 1);
                    if z_star < lo || z_star > hi {
                        continue;
                    }
                }
                for j in 0..d {
                    let z = volume.hypothesis_depth(x, y, j);
                    let dz = z - z_star;
                    let factor = k * (1.0 - (-dz * dz * inv_two_c2).exp());
                    let idx = x * d + j;
                    row[idx] = (factor * row[idx] as f64) as f32;
                }
            }
        });
    Ok(volume.with_costs(costs))
}

/// Nearest-neighbor downsampling of a hint map to resolution scale `s`:
/// low-res pixel `(x, y)` takes the hint state of full-res pixel
/// `(round(x/s), round(y/s))`.
pub fn downsample_hints(
    hints: &SparseDepthMap,
    scale: f64,
) -> Result<SparseDepthMap, GuidanceError> {
    let w = hints.width() as f64 * scale;
    let h = hints.height() as f64 * scale;
    let integral = |v: f64| (v - v.round()).abs() < 1e-9 && v.round() >= 1.0;
    if !(scale > 0.0 && scale <= 1.0 && integral(w) && integral(h)) {
        return Err(GuidanceError::NonIntegerResolution {
            scale,
            width: hints.width(),
            height: hints.height(),
        });
    }
    if scale == 1.0 {
        return Ok(hints.clone());
    }
    let (w, h) = (w.round() as usize, h.round() as usize);
    let mut out = SparseDepthMap::new(w, h);
    for y in 0..h {
        let sy = ((y as f64 / scale).round() as usize).min(hints.height() - 1);
        for x in 0..w {
            let sx = ((x as f64 / scale).round() as usize).min(hints.width() - 1);
            if let Some(d) = hints.hint(sx, sy) {
                out.set_hint(x, y, d);
            }
        }
    }
    Ok(out)
}

/// Stage modulation: downsample the full-resolution hints to the stage scale,
/// then modulate.
pub fn modulate_stage(
    volume: &CostVolume,
    full_hints: &SparseDepthMap,
    scale: f64,
    params: &GuidanceParams,
) -> Result<CostVolume, GuidanceError> {
    modulate_stage_with(volume, full_hints, scale, params, OutOfRangePolicy::Modulate)
}

pub fn modulate_stage_with(
    volume: &CostVolume,
    full_hints: &SparseDepthMap,
    scale: f64,
    params: &GuidanceParams,
    policy: OutOfRangePolicy,
) -> Result<CostVolume, GuidanceError> {
    let staged = downsample_hints(full_hints, scale)?;
    modulate_volume_with(volume, &staged, params, policy)
}
