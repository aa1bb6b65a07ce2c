//! NHWC convolution and transposed convolution via im2col + GEMM.

use std::borrow::Cow;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array4, ArrayD, ArrayView2, ArrayViewMut2};
#[cfg(test)]
use ndarray::IxDyn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, Param};

/// Padding rule, with the usual `same` / `valid` semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// im2col rows above this many scalars are split into image chunks.
const CHUNK_SCALARS: usize = 1 << 20;

/// Geometry of a forward convolution from a (h, w, c) grid to (ho, wo).
#[derive(Debug, Clone, Copy)]
struct Geom {
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_t: usize,
    pad_l: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn kdim(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn rows_per_image(&self) -> usize {
        self.ho * self.wo
    }

    fn chunk_images(&self) -> usize {
        (CHUNK_SCALARS / (self.rows_per_image() * self.kdim()).max(1)).max(1)
    }
}

fn conv_axis(input: usize, k: usize, stride: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(input);
            (out, total / 2)
        }
        Padding::Valid => {
            assert!(input >= k, "valid convolution with kernel {k} larger than input {input}");
            ((input - k) / stride + 1, 0)
        }
    }
}

/// Output length of a transposed convolution along one axis.
pub fn transpose_axis(input: usize, k: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Same => input * stride,
        Padding::Valid => (input - 1) * stride + k,
    }
}

/// Output length of a convolution along one axis.
pub fn conv_out_len(input: usize, k: usize, stride: usize, padding: Padding) -> usize {
    conv_axis(input, k, stride, padding).0
}

fn geom(h: usize, w: usize, c: usize, kh: usize, kw: usize, stride: usize, padding: Padding) -> Geom {
    let (ho, pad_t) = conv_axis(h, kh, stride, padding);
    let (wo, pad_l) = conv_axis(w, kw, stride, padding);
    Geom { h, w, c, kh, kw, stride, pad_t, pad_l, ho, wo }
}

/// Copies the receptive fields of `images` (NHWC, contiguous) into rows.
fn im2col(images: &[f64], g: &Geom, count: usize, cols: &mut Vec<f64>) {
    let kdim = g.kdim();
    cols.clear();
    cols.resize(count * g.rows_per_image() * kdim, 0.0);
    let img_len = g.h * g.w * g.c;
    let mut row = 0;
    for img in 0..count {
        let src = &images[img * img_len..(img + 1) * img_len];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let dst = &mut cols[row * kdim..(row + 1) * kdim];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_t as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad_l as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let s = ((iy as usize) * g.w + ix as usize) * g.c;
                        let d = (ky * g.kw + kx) * g.c;
                        dst[d..d + g.c].copy_from_slice(&src[s..s + g.c]);
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds rows back onto the images.
fn col2im(cols: &[f64], g: &Geom, count: usize, images: &mut [f64]) {
    let kdim = g.kdim();
    let img_len = g.h * g.w * g.c;
    let mut row = 0;
    for img in 0..count {
        let dst = &mut images[img * img_len..(img + 1) * img_len];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let src = &cols[row * kdim..(row + 1) * kdim];
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.pad_t as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = (ox * g.stride + kx) as isize - g.pad_l as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let d = ((iy as usize) * g.w + ix as usize) * g.c;
                        let s = (ky * g.kw + kx) * g.c;
                        for (a, b) in dst[d..d + g.c].iter_mut().zip(&src[s..s + g.c]) {
                            *a += *b;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

fn dims4(x: &ArrayD<f64>) -> (usize, usize, usize, usize) {
    let s = x.shape();
    assert_eq!(s.len(), 4, "rank-4 NHWC tensor expected, got {s:?}");
    (s[0], s[1], s[2], s[3])
}

fn contiguous(x: &ArrayD<f64>) -> Cow<'_, [f64]> {
    match x.as_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(x.iter().copied().collect()),
    }
}

fn mat(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix view")
}

fn mat_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix view")
}

fn add_channel_bias(out: &mut [f64], bias: &[f64]) {
    for px in out.chunks_exact_mut(bias.len()) {
        for (v, b) in px.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

fn accumulate_channel_sums(dy: &[f64], grad: &mut [f64]) {
    for px in dy.chunks_exact(grad.len()) {
        for (g, v) in grad.iter_mut().zip(px) {
            *g += *v;
        }
    }
}

/// 2-D convolution; kernel laid out `[kh, kw, in, out]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2d {
    pub fn new<R: Rng>(rng: &mut R, kernel: usize, cin: usize, cout: usize, stride: usize, padding: Padding) -> Self {
        let fan_in = kernel * kernel * cin;
        let fan_out = kernel * kernel * cout;
        Self {
            weight: Param::new(glorot_uniform(rng, &[kernel, kernel, cin, cout], fan_in, fan_out)),
            bias: Param::zeros(&[cout]),
            stride,
            padding,
        }
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        let (kh, kw, _, cout) = self.dims();
        let g = geom(input[1], input[2], input[3], kh, kw, self.stride, self.padding);
        vec![input[0], g.ho, g.wo, cout]
    }

    pub fn forward(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let (n, h, w, c) = dims4(x);
        let xs = contiguous(x);
        let (kh, kw, cin, cout) = self.dims();
        assert_eq!(c, cin, "conv input channels");
        let g = geom(h, w, c, kh, kw, self.stride, self.padding);
        let mut out = Array4::<f64>::zeros((n, g.ho, g.wo, cout));
        let wmat = mat(self.weight.value.as_slice().expect("contiguous"), g.kdim(), cout);
        let out_s = out.as_slice_mut().expect("standard layout");
        let img_len = h * w * c;
        let out_len = g.rows_per_image() * cout;
        let mut cols = Vec::new();
        let step = g.chunk_images();
        let mut start = 0;
        while start < n {
            let count = step.min(n - start);
            im2col(&xs[start * img_len..(start + count) * img_len], &g, count, &mut cols);
            let rows = count * g.rows_per_image();
            let mut o = mat_mut(&mut out_s[start * out_len..(start + count) * out_len], rows, cout);
            general_mat_mul(1.0, &mat(&cols, rows, g.kdim()), &wmat, 0.0, &mut o);
            start += count;
        }
        add_channel_bias(out_s, self.bias.value.as_slice().expect("contiguous"));
        out.into_dyn()
    }

    /// Accumulates parameter gradients; returns the input gradient if asked.
    pub fn backward(&mut self, x: &ArrayD<f64>, dy: &ArrayD<f64>, need_input_grad: bool) -> Option<ArrayD<f64>> {
        let (n, h, w, c) = dims4(x);
        let xs = contiguous(x);
        let dys = contiguous(dy);
        let (kh, kw, _, cout) = self.dims();
        let g = geom(h, w, c, kh, kw, self.stride, self.padding);
        let kdim = g.kdim();
        accumulate_channel_sums(&dys, self.bias.grad.as_slice_mut().expect("contiguous"));

        let mut dx = need_input_grad.then(|| Array4::<f64>::zeros((n, h, w, c)));
        let wval = self.weight.value.as_slice().expect("contiguous").to_vec();
        let wmat = mat(&wval, kdim, cout);
        let mut dw = mat_mut(self.weight.grad.as_slice_mut().expect("contiguous"), kdim, cout);
        let img_len = h * w * c;
        let out_len = g.rows_per_image() * cout;
        let mut cols = Vec::new();
        let mut dcols = Vec::new();
        let step = g.chunk_images();
        let mut start = 0;
        while start < n {
            let count = step.min(n - start);
            let rows = count * g.rows_per_image();
            im2col(&xs[start * img_len..(start + count) * img_len], &g, count, &mut cols);
            let dyc = mat(&dys[start * out_len..(start + count) * out_len], rows, cout);
            general_mat_mul(1.0, &mat(&cols, rows, kdim).t(), &dyc, 1.0, &mut dw);
            if let Some(dx) = dx.as_mut() {
                dcols.clear();
                dcols.resize(rows * kdim, 0.0);
                general_mat_mul(1.0, &dyc, &wmat.t(), 0.0, &mut mat_mut(&mut dcols, rows, kdim));
                let dxs = dx.as_slice_mut().expect("standard layout");
                col2im(&dcols, &g, count, &mut dxs[start * img_len..(start + count) * img_len]);
            }
            start += count;
        }
        dx.map(|d| d.into_dyn())
    }
}

/// Transposed convolution; kernel laid out `[kh, kw, out, in]`. Exactly the
/// adjoint of a [`Conv2d`] mapping the output grid back to the input grid.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvTranspose2d {
    pub fn new<R: Rng>(rng: &mut R, kernel: usize, cin: usize, cout: usize, stride: usize, padding: Padding) -> Self {
        let fan_in = kernel * kernel * cin;
        let fan_out = kernel * kernel * cout;
        Self {
            weight: Param::new(glorot_uniform(rng, &[kernel, kernel, cout, cin], fan_in, fan_out)),
            bias: Param::zeros(&[cout]),
            stride,
            padding,
        }
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1], s[2], s[3])
    }

    /// Geometry of the adjoint convolution (big output grid → small input grid).
    fn adjoint_geom(&self, h: usize, w: usize) -> Geom {
        let (kh, kw, cout, _) = self.dims();
        let big_h = transpose_axis(h, kh, self.stride, self.padding);
        let big_w = transpose_axis(w, kw, self.stride, self.padding);
        let g = geom(big_h, big_w, cout, kh, kw, self.stride, self.padding);
        debug_assert_eq!((g.ho, g.wo), (h, w));
        g
    }

    pub fn output_shape(&self, input: &[usize]) -> Vec<usize> {
        let g = self.adjoint_geom(input[1], input[2]);
        vec![input[0], g.h, g.w, g.c]
    }

    pub fn forward(&self, x: &ArrayD<f64>) -> ArrayD<f64> {
        let (n, h, w, cin) = dims4(x);
        let xs = contiguous(x);
        let (_, _, cout, wcin) = self.dims();
        assert_eq!(cin, wcin, "transposed conv input channels");
        let g = self.adjoint_geom(h, w);
        let kdim = g.kdim();
        let mut out = Array4::<f64>::zeros((n, g.h, g.w, cout));
        let wmat = mat(self.weight.value.as_slice().expect("contiguous"), kdim, cin);
        let out_s = out.as_slice_mut().expect("standard layout");
        let in_len = h * w * cin;
        let out_len = g.h * g.w * cout;
        let mut cols = Vec::new();
        let step = g.chunk_images();
        let mut start = 0;
        while start < n {
            let count = step.min(n - start);
            let rows = count * h * w;
            cols.clear();
            cols.resize(rows * kdim, 0.0);
            let xin = mat(&xs[start * in_len..(start + count) * in_len], rows, cin);
            general_mat_mul(1.0, &xin, &wmat.t(), 0.0, &mut mat_mut(&mut cols, rows, kdim));
            col2im(&cols, &g, count, &mut out_s[start * out_len..(start + count) * out_len]);
            start += count;
        }
        add_channel_bias(out_s, self.bias.value.as_slice().expect("contiguous"));
        out.into_dyn()
    }

    pub fn backward(&mut self, x: &ArrayD<f64>, dy: &ArrayD<f64>, need_input_grad: bool) -> Option<ArrayD<f64>> {
        let (n, h, w, cin) = dims4(x);
        let xs = contiguous(x);
        let dys = contiguous(dy);
        let g = self.adjoint_geom(h, w);
        let kdim = g.kdim();
        accumulate_channel_sums(&dys, self.bias.grad.as_slice_mut().expect("contiguous"));

        let mut dx = need_input_grad.then(|| Array4::<f64>::zeros((n, h, w, cin)));
        let wval = self.weight.value.as_slice().expect("contiguous").to_vec();
        let wmat = mat(&wval, kdim, cin);
        let mut dw = mat_mut(self.weight.grad.as_slice_mut().expect("contiguous"), kdim, cin);
        let in_len = h * w * cin;
        let out_len = g.h * g.w * g.c;
        let mut dcols = Vec::new();
        let step = g.chunk_images();
        let mut start = 0;
        while start < n {
            let count = step.min(n - start);
            let rows = count * h * w;
            im2col(&dys[start * out_len..(start + count) * out_len], &g, count, &mut dcols);
            let dc = mat(&dcols, rows, kdim);
            let xin = mat(&xs[start * in_len..(start + count) * in_len], rows, cin);
            general_mat_mul(1.0, &dc.t(), &xin, 1.0, &mut dw);
            if let Some(dx) = dx.as_mut() {
                let dxs = dx.as_slice_mut().expect("standard layout");
                let mut dxm = mat_mut(&mut dxs[start * in_len..(start + count) * in_len], rows, cin);
                general_mat_mul(1.0, &dc, &wmat, 0.0, &mut dxm);
            }
            start += count;
        }
        dx.map(|d| d.into_dyn())
    }
}

/// Bias-free reference convolution used to cross-check the GEMM path.
#[cfg(test)]
pub(crate) fn naive_conv(x: &Array4<f64>, weight: &ArrayD<f64>, stride: usize, padding: Padding) -> Array4<f64> {
    let (n, h, w, c) = x.dim();
    let s = weight.shape();
    let (kh, kw, cout) = (s[0], s[1], s[3]);
    let g = geom(h, w, c, kh, kw, stride, padding);
    let mut out = Array4::zeros((n, g.ho, g.wo, cout));
    for b in 0..n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                for o in 0..cout {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - g.pad_t as isize;
                            let ix = (ox * stride + kx) as isize - g.pad_l as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..c {
                                acc += x[[b, iy as usize, ix as usize, ci]] * weight[IxDyn(&[ky, kx, ci, o])];
                            }
                        }
                    }
                    out[[b, oy, ox, o]] = acc;
                }
            }
        }
    }
    out
}
