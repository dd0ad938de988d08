//! Plane-sweep machinery: feature extraction, feature warping and
//! variance-based cost volumes.
//!
//! The volume cost at (pixel, hypothesis) is the per-channel variance of the
//! features gathered from every view that produced a valid sample there,
//! averaged over channels. The reference view always contributes its own
//! (unwarped) feature; source views contribute bilinear samples at the
//! plane-sweep warp location. Low variance means the views agree, so the
//! hypothesis is likely the correct depth.

use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{sweep_warp_coords, Camera, GeometryError};
use crate::grid::ImageBuf;

/// Cost stored where fewer than two views produced a valid sample. Treated
/// as "worst possible" by depth regression.
pub const NO_MATCH_COST: f32 = 1.0e30;

/// Threshold above which a cost cell is considered to carry no matching
/// evidence (covers sentinels that have been scaled by modulation).
pub const NO_DATA_THRESHOLD: f32 = 1.0e29;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("image is empty")]
    EmptyImage,
    #[error("resolution mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    ResolutionMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("feature maps in one sweep must share resolution and channel count")]
    MixedFeatureShapes,
    #[error("invalid hypothesis range: z_min={z_min}, z_max={z_max}, count={count}")]
    InvalidRange { z_min: f64, z_max: f64, count: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Multi-channel per-pixel features with a per-pixel validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
    validity: Vec<bool>,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            validity: vec![true; width * height],
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
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set_value(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    #[inline]
    pub fn valid(&self, x: usize, y: usize) -> bool {
        self.validity[y * self.width + x]
    }

    #[inline]
    pub fn set_valid(&mut self, x: usize, y: usize, v: bool) {
        self.validity[y * self.width + x] = v;
    }

    /// Bilinear sample of all channels at a continuous position. Returns
    /// false (and leaves `out` untouched) when the position is outside the
    /// sampleable hull or any contributing pixel is invalid.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64)
        {
            return false;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        if !(self.valid(x0, y0) && self.valid(x1, y0) && self.valid(x0, y1) && self.valid(x1, y1))
        {
            return false;
        }
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        for (c, slot) in out.iter_mut().enumerate().take(self.channels) {
            *slot = w00 * self.value(x0, y0, c) as f64
                + w10 * self.value(x1, y0, c) as f64
                + w01 * self.value(x0, y1, c) as f64
                + w11 * self.value(x1, y1, c) as f64;
        }
        true
    }
}

/// Hand-crafted 3-channel features: intensity plus horizontal and vertical
/// Sobel gradients (kernel divided by 8, borders replicated).
pub fn extract_features(image: &ImageBuf) -> Result<FeatureMap, SweepError> {
    let (w, h) = (image.width(), image.height());
    if w == 0 || h == 0 {
        return Err(SweepError::EmptyImage);
    }
    let mut features = FeatureMap::new(w, h, 3);
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    for y in 0..h {
        for x in 0..w {
            let p = |dx: i64, dy: i64| {
                image.luma(clamp(x as i64 + dx, w), clamp(y as i64 + dy, h)) as f64
            };
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1) - p(-1, -1) - 2.0 * p(-1, 0) - p(-1, 1))
                / 8.0;
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1) - p(-1, -1) - 2.0 * p(0, -1) - p(1, -1))
                / 8.0;
            features.set_value(x, y, 0, image.luma(x, y));
            features.set_value(x, y, 1, gx as f32);
            features.set_value(x, y, 2, gy as f32);
        }
    }
    Ok(features)
}

/// Warp source-view features onto the reference pixel grid for one depth
/// hypothesis. Output resolution is the reference camera's; validity is
/// false wherever the sample fell outside the source image or behind the
/// source camera.
pub fn warp_features(
    features: &FeatureMap,
    z: f64,
    reference: &Camera,
    source: &Camera,
) -> Result<FeatureMap, SweepError> {
    if features.width() != source.intrinsics.width || features.height() != source.intrinsics.height
    {
        return Err(SweepError::ResolutionMismatch {
            expected_w: source.intrinsics.width,
            expected_h: source.intrinsics.height,
            got_w: features.width(),
            got_h: features.height(),
        });
    }
    if reference == source {
        return Ok(features.clone());
    }
    let (w, h) = (reference.intrinsics.width, reference.intrinsics.height);
    let mut out = FeatureMap::new(w, h, features.channels());
    let mut sample = vec![0.0f64; features.channels()];
    for y in 0..h {
        for x in 0..w {
            let q = nalgebra::Vector2::new(x as f64, y as f64);
            let ok = match sweep_warp_coords(&q, z, reference, source) {
                Ok(src) => features.sample_bilinear(src.x, src.y, &mut sample),
                Err(_) => false,
            };
            if ok {
                for (c, v) in sample.iter().enumerate() {
                    out.set_value(x, y, c, *v as f32);
                }
            } else {
                out.set_valid(x, y, false);
            }
        }
    }
    Ok(out)
}

/// How depth hypotheses are spread over `[z_min, z_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypothesisSpacing {
    /// Uniform steps in depth.
    Depth,
    /// Uniform steps in 1/depth (uniform pixel-space parallax).
    InverseDepth,
}

/// A strictly increasing list of depth hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthHypotheses {
    values: Vec<f64>,
}

impl DepthHypotheses {
    pub fn from_values(values: Vec<f64>) -> Result<Self, SweepError> {
        if values.len() < 2
            || values[0] <= 0.0
            || values.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(SweepError::InvalidRange {
                z_min: values.first().copied().unwrap_or(0.0),
                z_max: values.last().copied().unwrap_or(0.0),
                count: values.len(),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn z_min(&self) -> f64 {
        self.values[0]
    }

    pub fn z_max(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// Local plane spacing around hypothesis `j` (distance to the next one).
    pub fn local_spacing(&self, j: usize) -> f64 {
        let j = j.min(self.values.len() - 2);
        self.values[j + 1] - self.values[j]
    }

    /// Mean plane spacing over the range.
    pub fn mean_spacing(&self) -> f64 {
        (self.z_max() - self.z_min()) / (self.values.len() - 1) as f64
    }
}

/// Build `count` hypotheses spanning `[z_min, z_max]` inclusive.
pub fn make_hypotheses(
    z_min: f64,
    z_max: f64,
    count: usize,
    spacing: HypothesisSpacing,
) -> Result<DepthHypotheses, SweepError> {
    if !(z_min > 0.0 && z_max > z_min) || count < 2 {
        return Err(SweepError::InvalidRange { z_min, z_max, count });
    }
    let n = (count - 1) as f64;
    let mut values: Vec<f64> = match spacing {
        HypothesisSpacing::Depth => (0..count)
            .map(|j| z_min + (z_max - z_min) * j as f64 / n)
            .collect(),
        HypothesisSpacing::InverseDepth => {
            let inv_min = 1.0 / z_max;
            let inv_max = 1.0 / z_min;
            (0..count)
                .map(|j| 1.0 / (inv_max + (inv_min - inv_max) * j as f64 / n))
                .collect()
        }
    };
    // the range is inclusive; pin the endpoints against rounding drift
    values[0] = z_min;
    values[count - 1] = z_max;
    DepthHypotheses::from_values(values)
}

/// Hypothesis depths of a volume: either one shared list or per-pixel values
/// (used by refined coarse-to-fine stages).
#[derive(Debug, Clone, PartialEq)]
pub enum HypothesisField {
    Shared(DepthHypotheses),
    PerPixel {
        count: usize,
        /// Row-major (y, x, j) depth values, length w*h*count.
        values: Vec<f64>,
    },
}

/// H x W x D variance scores over depth hypotheses, plus the number of views
/// that contributed a valid sample per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    depth_count: usize,
    hypotheses: HypothesisField,
    costs: Vec<f32>,
    support: Vec<u8>,
}

impl CostVolume {
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn depth_count(&self) -> usize {
        self.depth_count
    }

    pub fn hypotheses(&self) -> &HypothesisField {
        &self.hypotheses
    }

    /// Shared hypothesis list, if this volume has one.
    pub fn shared_hypotheses(&self) -> Option<&DepthHypotheses> {
        match &self.hypotheses {
            HypothesisField::Shared(h) => Some(h),
            HypothesisField::PerPixel { .. } => None,
        }
    }

    /// Depth value of hypothesis `j` at a pixel.
    #[inline]
    pub fn hypothesis_depth(&self, x: usize, y: usize, j: usize) -> f64 {
        match &self.hypotheses {
            HypothesisField::Shared(h) => h.values()[j],
            HypothesisField::PerPixel { count, values } => {
                values[(y * self.width + x) * count + j]
            }
        }
    }

    #[inline]
    pub fn cost(&self, x: usize, y: usize, j: usize) -> f32 {
        self.costs[(y * self.width + x) * self.depth_count + j]
    }

    #[inline]
    pub fn support(&self, x: usize, y: usize, j: usize) -> u8 {
        self.support[(y * self.width + x) * self.depth_count + j]
    }

    pub fn costs(&self) -> &[f32] {
        &self.costs
    }

    pub fn costs_mut(&mut self) -> &mut [f32] {
        &mut self.costs
    }

    pub fn support_slice(&self) -> &[u8] {
        &self.support
    }

    /// Same volume shell with freshly computed costs (used by modulation).
    pub(crate) fn with_costs(&self, costs: Vec<f32>) -> CostVolume {
        assert_eq!(costs.len(), self.costs.len());
        CostVolume {
            width: self.width,
            height: self.height,
            depth_count: self.depth_count,
            hypotheses: self.hypotheses.clone(),
            costs,
            support: self.support.clone(),
        }
    }
}

/// A feature map paired with the camera it was extracted from (already at
/// matching resolution).
#[derive(Debug, Clone, Copy)]
pub struct ViewFeatures<'a> {
    pub features: &'a FeatureMap,
    pub camera: &'a Camera,
}

fn check_shapes(reference: &ViewFeatures, sources: &[ViewFeatures]) -> Result<(), SweepError> {
    let r = reference.features;
    if r.width() != reference.camera.intrinsics.width
        || r.height() != reference.camera.intrinsics.height
    {
        return Err(SweepError::ResolutionMismatch {
            expected_w: reference.camera.intrinsics.width,
            expected_h: reference.camera.intrinsics.height,
            got_w: r.width(),
            got_h: r.height(),
        });
    }
    for s in sources {
        if s.features.channels() != r.channels() {
            return Err(SweepError::MixedFeatureShapes);
        }
        if s.features.width() != s.camera.intrinsics.width
            || s.features.height() != s.camera.intrinsics.height
        {
            return Err(SweepError::ResolutionMismatch {
                expected_w: s.camera.intrinsics.width,
                expected_h: s.camera.intrinsics.height,
                got_w: s.features.width(),
                got_h: s.features.height(),
            });
        }
    }
    if sources.is_empty() {
        return Err(SweepError::MixedFeatureShapes);
    }
    Ok(())
}

/// Build a variance cost volume over a shared hypothesis list.
pub fn build_variance_volume(
    reference: ViewFeatures,
    sources: &[ViewFeatures],
    hypotheses: &DepthHypotheses,
) -> Result<CostVolume, SweepError> {
    check_shapes(&reference, sources)?;
    let field = HypothesisField::Shared(hypotheses.clone());
    Ok(build_volume_impl(reference, sources, field))
}

/// Build a variance cost volume with per-pixel hypothesis depths
/// (`values[(y*w + x)*count + j]`), as used by refined stages.
pub fn build_variance_volume_per_pixel(
    reference: ViewFeatures,
    sources: &[ViewFeatures],
    count: usize,
    values: Vec<f64>,
) -> Result<CostVolume, SweepError> {
    check_shapes(&reference, sources)?;
    let r = reference.features;
    if count < 2 || values.len() != r.width() * r.height() * count {
        return Err(SweepError::InvalidRange {
            z_min: 0.0,
            z_max: 0.0,
            count,
        });
    }
    let field = HypothesisField::PerPixel { count, values };
    Ok(build_volume_impl(reference, sources, field))
}

fn build_volume_impl(
    reference: ViewFeatures,
    sources: &[ViewFeatures],
    hypotheses: HypothesisField,
) -> CostVolume {
    let r = reference.features;
    let (w, h, channels) = (r.width(), r.height(), r.channels());
    let depth_count = match &hypotheses {
        HypothesisField::Shared(hs) => hs.len(),
        HypothesisField::PerPixel { count, .. } => *count,
    };
    let mut costs = vec![0.0f32; w * h * depth_count];
    let mut support = vec![0u8; w * h * depth_count];

    let hyp_at = |x: usize, y: usize, j: usize| -> f64 {
        match &hypotheses {
            HypothesisField::Shared(hs) => hs.values()[j],
            HypothesisField::PerPixel { count, values } => values[(y * w + x) * count + j],
        }
    };

    costs
        .par_chunks_mut(w * depth_count)
        .zip(support.par_chunks_mut(w * depth_count))
        .enumerate()
        .for_each(|(y, (cost_row, support_row))| {
            // per-view per-channel scratch, reused across the row
            let mut samples = vec![0.0f64; (sources.len() + 1) * channels];
            let mut valid = vec![false; sources.len() + 1];
            let mut channel_vals = Vec::with_capacity(sources.len() + 1);
            for x in 0..w {
                for j in 0..depth_count {
                    let z = hyp_at(x, y, j);
                    // reference contributes its own feature, unwarped
                    valid[0] = r.valid(x, y);
                    if valid[0] {
                        for (c, slot) in samples.iter_mut().enumerate().take(channels) {
                            *slot = r.value(x, y, c) as f64;
                        }
                    }
                    for (v, src) in sources.iter().enumerate() {
                        let q = nalgebra::Vector2::new(x as f64, y as f64);
                        let slot = &mut samples[(v + 1) * channels..(v + 2) * channels];
                        valid[v + 1] =
                            match sweep_warp_coords(&q, z, reference.camera, src.camera) {
                                Ok(p) => src.features.sample_bilinear(p.x, p.y, slot),
                                Err(_) => false,
                            };
                    }
                    let contributing = valid.iter().filter(|v| **v).count();
                    let idx = x * depth_count + j;
                    support_row[idx] = contributing.min(u8::MAX as usize) as u8;
                    if contributing < 2 {
                        cost_row[idx] = NO_MATCH_COST;
                        continue;
                    }
                    // Per channel: variance over contributing views, with the
                    // divisor equal to the number of contributing views.
                    // Samples are summed in value order so that the result is
                    // independent of view ordering, bit for bit.
                    let mut acc = 0.0f64;
                    for c in 0..channels {
                        channel_vals.clear();
                        for (v, ok) in valid.iter().enumerate() {
                            if *ok {
                                channel_vals.push(samples[v * channels + c]);
                            }
                        }
                        channel_vals.sort_unstable_by(f64::total_cmp);
                        let mean: f64 =
                            channel_vals.iter().sum::<f64>() / contributing as f64;
                        let ss: f64 = channel_vals
                            .iter()
                            .map(|v| (v - mean) * (v - mean))
                            .sum();
                        acc += ss / contributing as f64;
                    }
                    cost_row[idx] = (acc / channels as f64) as f32;
                }
            }
        });

    CostVolume {
        width: w,
        height: h,
        depth_count,
        hypotheses,
        costs,
        support,
    }
}
