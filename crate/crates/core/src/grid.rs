//! Dense row-major buffers shared across the pipeline.

/// A 2-D grid of values stored row-major, indexed by `(x, y)` with
/// `x` as the column.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid2<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Self {
            width,
            height,
            data,
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
    pub fn get(&self, x: usize, y: usize) -> T {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
}

/// An interleaved floating-point image with 1 or 3 channels, values
/// nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "1 or 3 channels supported");
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * channels);
        assert!(channels == 1 || channels == 3);
        Self {
            width,
            height,
            channels,
            data,
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

    /// Luminance at a pixel: identity for 1-channel images, Rec.601 weights
    /// for 3-channel ones.
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> f32 {
        if self.channels == 1 {
            self.value(x, y, 0)
        } else {
            0.299 * self.value(x, y, 0) + 0.587 * self.value(x, y, 1) + 0.114 * self.value(x, y, 2)
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Resample to `new_w` x `new_h`. Pixel `(x, y)` of the result samples the
    /// source at `(x * w/new_w, y * h/new_h)`, the same origin-preserving map
    /// used when intrinsics are scaled. Integer reduction ratios get a
    /// centered box average (anti-aliasing); anything else is sampled
    /// bilinearly.
    pub fn resampled(&self, new_w: usize, new_h: usize) -> ImageBuf {
        assert!(new_w >= 1 && new_h >= 1);
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        if self.width.is_multiple_of(new_w) && self.height.is_multiple_of(new_h) {
            let rx = self.width / new_w;
            let ry = self.height / new_h;
            if rx == ry {
                return self.box_reduced(new_w, new_h, rx);
            }
        }
        let sx = self.width as f64 / new_w as f64;
        let sy = self.height as f64 / new_h as f64;
        let mut out = ImageBuf::new(new_w, new_h, self.channels);
        for y in 0..new_h {
            for x in 0..new_w {
                for c in 0..self.channels {
                    let v = self.sample_bilinear_clamped(x as f64 * sx, y as f64 * sy, c);
                    out.set_value(x, y, c, v as f32);
                }
            }
        }
        out
    }

    // Box average of width `r` centered on the sample position x*r. Even r
    // uses an (r+1)-tap window with half-weight endpoints so the window stays
    // centered; borders clamp.
    fn box_reduced(&self, new_w: usize, new_h: usize, r: usize) -> ImageBuf {
        let (taps, norm): (Vec<(i64, f64)>, f64) = if r % 2 == 1 {
            let h = (r / 2) as i64;
            ((-h..=h).map(|o| (o, 1.0)).collect(), r as f64)
        } else {
            let h = (r / 2) as i64;
            (
                (-h..=h)
                    .map(|o| (o, if o == -h || o == h { 0.5 } else { 1.0 }))
                    .collect(),
                r as f64,
            )
        };
        let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
        // horizontal pass at full height
        let mut tmp = ImageBuf::new(new_w, self.height, self.channels);
        for y in 0..self.height {
            for x in 0..new_w {
                let cx = (x * r) as i64;
                for c in 0..self.channels {
                    let mut acc = 0.0f64;
                    for &(o, w) in &taps {
                        acc += w * self.value(clamp(cx + o, self.width), y, c) as f64;
                    }
                    tmp.set_value(x, y, c, (acc / norm) as f32);
                }
            }
        }
        // vertical pass
        let mut out = ImageBuf::new(new_w, new_h, self.channels);
        for y in 0..new_h {
            let cy = (y * r) as i64;
            for x in 0..new_w {
                for c in 0..self.channels {
                    let mut acc = 0.0f64;
                    for &(o, w) in &taps {
                        acc += w * tmp.value(x, clamp(cy + o, self.height), c) as f64;
                    }
                    out.set_value(x, y, c, (acc / norm) as f32);
                }
            }
        }
        out
    }

    fn sample_bilinear_clamped(&self, x: f64, y: f64, c: usize) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let v00 = self.value(x0, y0, c) as f64;
        let v10 = self.value(x1, y0, c) as f64;
        let v01 = self.value(x0, y1, c) as f64;
        let v11 = self.value(x1, y1, c) as f64;
        (1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v10 + (1.0 - fx) * fy * v01 + fx * fy * v11
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_roundtrip() {
        let mut g = Grid2::filled(4, 3, 0i32);
        g.set(2, 1, 7);
        assert_eq!(g.get(2, 1), 7);
        assert_eq!(g.get(0, 0), 0);
        assert!(g.in_bounds(3, 2));
        assert!(!g.in_bounds(4, 0));
        assert!(!g.in_bounds(-1, 0));
    }

    #[test]
    fn constant_image_survives_downsampling() {
        let img = ImageBuf::from_vec(8, 8, 1, vec![0.5; 64]);
        let half = img.resampled(4, 4);
        for v in half.data() {
            assert!((v - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn box_reduction_stays_centered_on_ramp() {
        // a linear ramp must stay a ramp through the centered window,
        // sampled at x*2 exactly
        let mut img = ImageBuf::new(8, 4, 1);
        for y in 0..4 {
            for x in 0..8 {
                img.set_value(x, y, 0, x as f32);
            }
        }
        let half = img.resampled(4, 2);
        for y in 0..2 {
            for x in 1..3 {
                assert!(
                    (half.value(x, y, 0) - (2 * x) as f32).abs() < 1e-6,
                    "x={x} got {}",
                    half.value(x, y, 0)
                );
            }
        }
    }
}
