//! Layer primitives over dense f64 maps, each paired with its exact
//! reverse-mode backward pass.

/// Channel-major (CHW) dense map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        FeatureMap { c, h, w, data: vec![0.0; c * h * w] }
    }
}

/// Shape of a convolution; weights are laid out `[out_c][in_c][k][k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn n_weights(&self) -> usize {
        self.out_c * self.in_c * self.k * self.k
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }
}

pub fn conv_forward(shape: &ConvShape, w: &[f64], b: &[f64], x: &FeatureMap) -> FeatureMap {
    debug_assert_eq!(x.c, shape.in_c);
    let (oh, ow) = shape.out_hw(x.h, x.w);
    let mut out = FeatureMap::zeros(shape.out_c, oh, ow);
    let k = shape.k;
    for oc in 0..shape.out_c {
        let obase = oc * oh * ow;
        for v in &mut out.data[obase..obase + oh * ow] {
            *v = b[oc];
        }
        for ic in 0..shape.in_c {
            let wbase = (oc * shape.in_c + ic) * k * k;
            for oy in 0..oh {
                for ky in 0..k {
                    let iy = (oy * shape.stride + ky) as i64 - shape.pad as i64;
                    if iy < 0 || iy as usize >= x.h {
                        continue;
                    }
                    let xrow = (ic * x.h + iy as usize) * x.w;
                    let orow = obase + oy * ow;
                    for kx in 0..k {
                        let wv = w[wbase + ky * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * shape.stride + kx) as i64 - shape.pad as i64;
                            if ix < 0 || ix as usize >= x.w {
                                continue;
                            }
                            out.data[orow + ox] += wv * x.data[xrow + ix as usize];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients into `gw`/`gb` and returns the input
/// gradient.
pub fn conv_backward(
    shape: &ConvShape,
    w: &[f64],
    x: &FeatureMap,
    gout: &FeatureMap,
    gw: &mut [f64],
    gb: &mut [f64],
) -> FeatureMap {
    let (oh, ow) = (gout.h, gout.w);
    let mut gx = FeatureMap::zeros(x.c, x.h, x.w);
    let k = shape.k;
    for oc in 0..shape.out_c {
        let obase = oc * oh * ow;
        gb[oc] += gout.data[obase..obase + oh * ow].iter().sum::<f64>();
        for ic in 0..shape.in_c {
            let wbase = (oc * shape.in_c + ic) * k * k;
            for oy in 0..oh {
                let orow = obase + oy * ow;
                for ky in 0..k {
                    let iy = (oy * shape.stride + ky) as i64 - shape.pad as i64;
                    if iy < 0 || iy as usize >= x.h {
                        continue;
                    }
                    let xrow = (ic * x.h + iy as usize) * x.w;
                    for kx in 0..k {
                        let wv = w[wbase + ky * k + kx];
                        let mut gwv = 0.0;
                        for ox in 0..ow {
                            let ix = (ox * shape.stride + kx) as i64 - shape.pad as i64;
                            if ix < 0 || ix as usize >= x.w {
                                continue;
                            }
                            let g = gout.data[orow + ox];
                            gwv += g * x.data[xrow + ix as usize];
                            gx.data[xrow + ix as usize] += g * wv;
                        }
                        gw[wbase + ky * k + kx] += gwv;
                    }
                }
            }
        }
    }
    gx
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smooth swish nonlinearity x·σ(x), applied elementwise.
pub fn silu(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|&x| x * sigmoid(x)).collect()
}

pub fn silu_backward(xs: &[f64], gy: &[f64]) -> Vec<f64> {
    xs.iter()
        .zip(gy)
        .map(|(&x, &g)| {
            let s = sigmoid(x);
            g * (s + x * s * (1.0 - s))
        })
        .collect()
}

/// Global average pooling: one scalar per channel.
pub fn gap_forward(x: &FeatureMap) -> Vec<f64> {
    let n = (x.h * x.w) as f64;
    (0..x.c)
        .map(|c| x.data[c * x.h * x.w..(c + 1) * x.h * x.w].iter().sum::<f64>() / n)
        .collect()
}

pub fn gap_backward(c: usize, h: usize, w: usize, g: &[f64]) -> FeatureMap {
    let mut out = FeatureMap::zeros(c, h, w);
    let n = (h * w) as f64;
    for ci in 0..c {
        let v = g[ci] / n;
        for e in &mut out.data[ci * h * w..(ci + 1) * h * w] {
            *e = v;
        }
    }
    out
}

/// Dense affine layer; weights are `[n_out][n_in]`.
pub fn linear_forward(w: &[f64], b: &[f64], n_in: usize, n_out: usize, x: &[f64]) -> Vec<f64> {
    (0..n_out)
        .map(|o| {
            let row = &w[o * n_in..(o + 1) * n_in];
            b[o] + row.iter().zip(x).map(|(wv, xv)| wv * xv).sum::<f64>()
        })
        .collect()
}

pub fn linear_backward(
    w: &[f64],
    n_in: usize,
    n_out: usize,
    x: &[f64],
    gout: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let mut gx = vec![0.0; n_in];
    for o in 0..n_out {
        let g = gout[o];
        gb[o] += g;
        let row = &w[o * n_in..(o + 1) * n_in];
        let grow = &mut gw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            grow[i] += g * x[i];
            gx[i] += g * row[i];
        }
    }
    gx
}

/// Elementwise maximum across views; ties route to the lowest view index
/// (the recorded argmax), which keeps gradients deterministic.
pub fn max_views_forward(views: &[&[f64]]) -> (Vec<f64>, Vec<u8>) {
    let n = views[0].len();
    let mut out = views[0].to_vec();
    let mut argmax = vec![0u8; n];
    for (vi, view) in views.iter().enumerate().skip(1) {
        for i in 0..n {
            if view[i] > out[i] {
                out[i] = view[i];
                argmax[i] = vi as u8;
            }
        }
    }
    (out, argmax)
}

pub fn max_views_backward(argmax: &[u8], g: &[f64], n_views: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; g.len()]; n_views];
    for (i, (&a, &gv)) in argmax.iter().zip(g).enumerate() {
        out[a as usize][i] = gv;
    }
    out
}
