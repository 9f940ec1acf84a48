//! Small raster containers shared by the renderer, the geometric estimator and
//! the model input pipeline.
//!
//! Two storage flavours exist: [`Plane`] holds working `f32` values while a
//! view is being rendered or transformed, and [`Raster8`] is the quantized
//! `u8` form a finished sample is stored in. A [`Mask`] is a `Raster8`
//! restricted to {0, 1}.

use serde::{Deserialize, Serialize};

/// Row-major `f32` image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        let i = self.idx(x, y);
        self.data[i] = v;
    }

    /// Bilinear sample at a fractional pixel position. Positions outside the
    /// raster are clamped to the border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f32 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (xc - x0 as f64) as f32;
        let fy = (yc - y0 as f64) as f32;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    /// Nearest-neighbour sample; out-of-range positions clamp to the border.
    pub fn sample_nearest(&self, x: f64, y: f64) -> f32 {
        let xi = (x.round().clamp(0.0, (self.width - 1) as f64)) as usize;
        let yi = (y.round().clamp(0.0, (self.height - 1) as f64)) as usize;
        self.get(xi, yi)
    }

    /// Box-average downsample by an integer factor. Width and height must be
    /// divisible by the factor.
    pub fn downsample_box(&self, factor: usize) -> Plane {
        assert!(factor >= 1 && self.width % factor == 0 && self.height % factor == 0);
        let w = self.width / factor;
        let h = self.height / factor;
        let mut out = Plane::zeros(w, h);
        let inv = 1.0 / (factor * factor) as f32;
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = 0.0f32;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += self.get(ox * factor + dx, oy * factor + dy);
                    }
                }
                out.set(ox, oy, acc * inv);
            }
        }
        out
    }

    /// Separable Gaussian blur with standard deviation `sigma` (pixels).
    /// Kernel is truncated at three sigma; borders clamp.
    pub fn blur_gaussian(&self, sigma: f64) -> Plane {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
        let mut sum = 0.0f64;
        for k in -radius..=radius {
            let w = (-0.5 * (k as f64 / sigma).powi(2)).exp();
            kernel.push(w);
            sum += w;
        }
        for w in &mut kernel {
            *w /= sum;
        }
        let clamp_x = |x: i64| x.clamp(0, self.width as i64 - 1) as usize;
        let clamp_y = |y: i64| y.clamp(0, self.height as i64 - 1) as usize;

        let mut tmp = Plane::zeros(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0f64;
                for (ki, w) in kernel.iter().enumerate() {
                    let sx = clamp_x(x as i64 + ki as i64 - radius);
                    acc += *w * self.get(sx, y) as f64;
                }
                tmp.set(x, y, acc as f32);
            }
        }
        let mut out = Plane::zeros(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0f64;
                for (ki, w) in kernel.iter().enumerate() {
                    let sy = clamp_y(y as i64 + ki as i64 - radius);
                    acc += *w * tmp.get(x, sy) as f64;
                }
                out.set(x, y, acc as f32);
            }
        }
        out
    }

    /// Quantize to `u8` after scaling by `scale` (use 255.0 for [0,1] data,
    /// 1.0 for data already in [0,255]).
    pub fn quantize(&self, scale: f32) -> Raster8 {
        let data = self
            .data
            .iter()
            .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8)
            .collect();
        Raster8 { width: self.width, height: self.height, data }
    }
}

/// Row-major quantized plane; the on-disk form of image and depth channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Raster8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Raster8 {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        let i = y * self.width + x;
        self.data[i] = v;
    }

    /// Expand back to `f32`, dividing by `scale`.
    pub fn to_plane(&self, scale: f32) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f32 / scale).collect(),
        }
    }
}

/// Binary mask; values are strictly 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        let i = y * self.width + x;
        self.data[i] = on as u8;
    }

    /// Number of set pixels.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Centroid of set pixels (pixel-center coordinates), or `None` when empty.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut sx = 0.0f64;
        let mut sy = 0.0f64;
        let mut n = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1;
                }
            }
        }
        if n == 0 {
            None
        } else {
            Some((sx / n as f64, sy / n as f64))
        }
    }

    /// Inclusive bounding box `(x0, y0, x1, y1)` of set pixels, or `None`
    /// when empty.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0) = (usize::MAX, usize::MAX);
        let (mut x1, mut y1) = (0usize, 0usize);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then_some((x0, y0, x1, y1))
    }

    /// Morphological dilation with a disc of the given radius (pixels).
    pub fn dilate(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius as i64;
        let mut offsets = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy <= r * r {
                    offsets.push((dx, dy));
                }
            }
        }
        let mut out = Mask::zeros(self.width, self.height);
        for y in 0..self.height as i64 {
            for x in 0..self.width as i64 {
                if self.get(x as usize, y as usize) {
                    for &(dx, dy) in &offsets {
                        let nx = x + dx;
                        let ny = y + dy;
                        if nx >= 0 && ny >= 0 && nx < self.width as i64 && ny < self.height as i64 {
                            out.set(nx as usize, ny as usize, true);
                        }
                    }
                }
            }
        }
        out
    }

    /// True when every set pixel is reachable from every other through
    /// 8-connected set pixels.
    pub fn is_single_component(&self) -> bool {
        let total = self.area();
        if total == 0 {
            return false;
        }
        let start = self.data.iter().position(|&v| v != 0).unwrap();
        let mut seen = vec![false; self.data.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0usize;
        while let Some(i) = stack.pop() {
            count += 1;
            let x = (i % self.width) as i64;
            let y = (i / self.width) as i64;
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x + dx;
                    let ny = y + dy;
                    if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                        continue;
                    }
                    let ni = ny as usize * self.width + nx as usize;
                    if self.data[ni] != 0 && !seen[ni] {
                        seen[ni] = true;
                        stack.push(ni);
                    }
                }
            }
        }
        count == total
    }
}
