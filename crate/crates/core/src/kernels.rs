//! Forward and backward kernels for the spatial operators used by the graph.
//! All image tensors are `[N, H, W, C]`; convolution weights are
//! `[KH, KW, C_in, C_out]`.

use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, pad: usize, dilation: usize) -> Self {
        Self { stride, pad, dilation }
    }

    pub fn out_len(&self, input: usize, kernel: usize) -> usize {
        let span = self.dilation * (kernel - 1) + 1;
        (input + 2 * self.pad).saturating_sub(span) / self.stride + 1
    }
}

/// Output rows/cols touched by one kernel tap, with the matching input offset.
#[derive(Clone, Copy, Debug)]
struct TapRange {
    out_lo: usize,
    out_hi: usize,
    // input index = out * stride + offset
    offset: isize,
}

fn tap_range(input: usize, output: usize, k: usize, spec: ConvSpec) -> Option<TapRange> {
    let offset = (k * spec.dilation) as isize - spec.pad as isize;
    let s = spec.stride as isize;
    // smallest o with o*s + offset >= 0
    let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
    // largest o with o*s + offset <= input - 1
    let hi_num = input as isize - 1 - offset;
    if hi_num < 0 {
        return None;
    }
    let hi = (hi_num / s).min(output as isize - 1);
    if lo > hi {
        return None;
    }
    Some(TapRange { out_lo: lo as usize, out_hi: hi as usize + 1, offset })
}

struct Rect {
    ys: TapRange,
    xs: TapRange,
}

impl Rect {
    fn rows(&self) -> usize {
        self.ys.out_hi - self.ys.out_lo
    }
    fn cols(&self) -> usize {
        self.xs.out_hi - self.xs.out_lo
    }
    fn full(&self, oh: usize, ow: usize) -> bool {
        self.ys.out_lo == 0 && self.ys.out_hi == oh && self.xs.out_lo == 0 && self.xs.out_hi == ow
    }
}

struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    oh: usize,
    ow: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    spec: ConvSpec,
}

impl ConvGeom {
    fn new<S: Real>(x: &Tensor<S>, weight: &Tensor<S>, spec: ConvSpec) -> Self {
        let (n, h, w, cin) = x.dims4().expect("conv input must be rank 4");
        let ws = weight.shape();
        assert_eq!(ws.len(), 4, "conv weight must be [KH, KW, Cin, Cout]");
        assert_eq!(ws[2], cin, "conv weight input channels");
        let (kh, kw, cout) = (ws[0], ws[1], ws[3]);
        let oh = spec.out_len(h, kh);
        let ow = spec.out_len(w, kw);
        Self { n, h, w, cin, oh, ow, cout, kh, kw, spec }
    }

    fn rect(&self, ky: usize, kx: usize) -> Option<Rect> {
        Some(Rect {
            ys: tap_range(self.h, self.oh, ky, self.spec)?,
            xs: tap_range(self.w, self.ow, kx, self.spec)?,
        })
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.spec.stride == 1 && self.spec.pad == 0
    }

    /// Calls `f(out_pixel_index, in_pixel_index)` for every pixel of the rect,
    /// in row-major output order.
    fn for_each_pixel(&self, r: &Rect, mut f: impl FnMut(usize, usize)) {
        let s = self.spec.stride as isize;
        for b in 0..self.n {
            for oy in r.ys.out_lo..r.ys.out_hi {
                let iy = (oy as isize * s + r.ys.offset) as usize;
                for ox in r.xs.out_lo..r.xs.out_hi {
                    let ix = (ox as isize * s + r.xs.offset) as usize;
                    f((b * self.oh + oy) * self.ow + ox, (b * self.h + iy) * self.w + ix);
                }
            }
        }
    }
}

fn gather_input<S: Real>(g: &ConvGeom, r: &Rect, x: &[S], buf: &mut Vec<S>) {
    buf.clear();
    let c = g.cin;
    g.for_each_pixel(r, |_, i| buf.extend_from_slice(&x[i * c..(i + 1) * c]));
}

fn gather_output<S: Real>(g: &ConvGeom, r: &Rect, y: &[S], buf: &mut Vec<S>) {
    buf.clear();
    let c = g.cout;
    g.for_each_pixel(r, |o, _| buf.extend_from_slice(&y[o * c..(o + 1) * c]));
}

pub fn conv2d_forward<S: Real>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: ConvSpec,
) -> Tensor<S> {
    let g = ConvGeom::new(x, weight, spec);
    let pixels = g.n * g.oh * g.ow;
    let mut out = Tensor::zeros(&[g.n, g.oh, g.ow, g.cout]);
    if let Some(b) = bias {
        assert_eq!(b.len(), g.cout, "conv bias length");
        for px in out.data_mut().chunks_exact_mut(g.cout) {
            px.copy_from_slice(b.data());
        }
    }
    let cin = g.cin as isize;
    let cout = g.cout as isize;
    if g.pointwise() {
        S::gemm(
            pixels, g.cin, g.cout, S::one(), x.data(), cin, 1, weight.data(), cout, 1, S::one(),
            out.data_mut(), cout, 1,
        );
        return out;
    }
    let mut buf = Vec::new();
    let mut tmp = Vec::new();
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let Some(r) = g.rect(ky, kx) else { continue };
            let m = g.n * r.rows() * r.cols();
            let wtap = &weight.data()[(ky * g.kw + kx) * g.cin * g.cout..][..g.cin * g.cout];
            gather_input(&g, &r, x.data(), &mut buf);
            if r.full(g.oh, g.ow) {
                S::gemm(m, g.cin, g.cout, S::one(), &buf, cin, 1, wtap, cout, 1, S::one(), out.data_mut(), cout, 1);
            } else {
                tmp.clear();
                tmp.resize(m * g.cout, S::zero());
                S::gemm(m, g.cin, g.cout, S::one(), &buf, cin, 1, wtap, cout, 1, S::zero(), &mut tmp, cout, 1);
                let od = out.data_mut();
                let mut row = 0;
                g.for_each_pixel(&r, |o, _| {
                    let dst = &mut od[o * g.cout..(o + 1) * g.cout];
                    for (d, &v) in dst.iter_mut().zip(&tmp[row * g.cout..(row + 1) * g.cout]) {
                        *d += v;
                    }
                    row += 1;
                });
            }
        }
    }
    out
}

/// Gradients of a convolution. Each output is computed only when requested.
pub struct ConvGrads<S> {
    pub input: Option<Tensor<S>>,
    pub weight: Option<Tensor<S>>,
    pub bias: Option<Tensor<S>>,
}

pub fn conv2d_backward<S: Real>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
    spec: ConvSpec,
    need: (bool, bool, bool),
) -> ConvGrads<S> {
    let g = ConvGeom::new(x, weight, spec);
    let (need_x, need_w, need_b) = need;
    let cin = g.cin as isize;
    let cout = g.cout as isize;
    let pixels = g.n * g.oh * g.ow;
    let dy = grad_out.data();

    let bias = need_b.then(|| {
        let mut db = Tensor::zeros(&[g.cout]);
        for px in dy.chunks_exact(g.cout) {
            for (d, &v) in db.data_mut().iter_mut().zip(px) {
                *d += v;
            }
        }
        db
    });
    let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_w.then(|| Tensor::zeros(weight.shape()));

    if g.pointwise() {
        if let Some(dw) = dw.as_mut() {
            // dW = X^T dY
            S::gemm(g.cin, pixels, g.cout, S::one(), x.data(), 1, cin, dy, cout, 1, S::zero(), dw.data_mut(), cout, 1);
        }
        if let Some(dx) = dx.as_mut() {
            // dX = dY W^T
            S::gemm(pixels, g.cout, g.cin, S::one(), dy, cout, 1, weight.data(), 1, cout, S::zero(), dx.data_mut(), cin, 1);
        }
        return ConvGrads { input: dx, weight: dw, bias };
    }

    let mut xbuf = Vec::new();
    let mut dybuf = Vec::new();
    let mut tmp = Vec::new();
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let Some(r) = g.rect(ky, kx) else { continue };
            let m = g.n * r.rows() * r.cols();
            let woff = (ky * g.kw + kx) * g.cin * g.cout;
            let full = r.full(g.oh, g.ow);
            let dy_tap: &[S] = if full {
                dy
            } else {
                gather_output(&g, &r, dy, &mut dybuf);
                &dybuf
            };
            if let Some(dw) = dw.as_mut() {
                gather_input(&g, &r, x.data(), &mut xbuf);
                let dwt = &mut dw.data_mut()[woff..woff + g.cin * g.cout];
                S::gemm(g.cin, m, g.cout, S::one(), &xbuf, 1, cin, dy_tap, cout, 1, S::one(), dwt, cout, 1);
            }
            if let Some(dx) = dx.as_mut() {
                let wtap = &weight.data()[woff..woff + g.cin * g.cout];
                tmp.clear();
                tmp.resize(m * g.cin, S::zero());
                S::gemm(m, g.cout, g.cin, S::one(), dy_tap, cout, 1, wtap, 1, cout, S::zero(), &mut tmp, cin, 1);
                let dxd = dx.data_mut();
                let mut row = 0;
                g.for_each_pixel(&r, |_, i| {
                    let dst = &mut dxd[i * g.cin..(i + 1) * g.cin];
                    for (d, &v) in dst.iter_mut().zip(&tmp[row * g.cin..(row + 1) * g.cin]) {
                        *d += v;
                    }
                    row += 1;
                });
            }
        }
    }
    ConvGrads { input: dx, weight: dw, bias }
}

/// Source taps of 1-D linear interpolation with half-pixel centers.
pub fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn bilinear_forward<S: Real>(x: &Tensor<S>, oh: usize, ow: usize) -> Tensor<S> {
    let (n, h, w, c) = x.dims4().expect("bilinear input must be rank 4");
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..n {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let o = ((b * oh + oy) * ow + ox) * c;
                let corners = [
                    (y0, x0, (1.0 - ly) * (1.0 - lx)),
                    (y0, x1, (1.0 - ly) * lx),
                    (y1, x0, ly * (1.0 - lx)),
                    (y1, x1, ly * lx),
                ];
                for (yy, xx, wgt) in corners {
                    if wgt == 0.0 {
                        continue;
                    }
                    let wgt = S::lit(wgt);
                    let i = ((b * h + yy) * w + xx) * c;
                    for k in 0..c {
                        od[o + k] += wgt * xd[i + k];
                    }
                }
            }
        }
    }
    out
}

pub fn bilinear_backward<S: Real>(input_shape: &[usize], grad_out: &Tensor<S>) -> Tensor<S> {
    let (n, h, w, c) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (_, oh, ow, _) = grad_out.dims4().expect("rank 4");
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut dx = Tensor::zeros(input_shape);
    let gd = grad_out.data();
    let dd = dx.data_mut();
    for b in 0..n {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let o = ((b * oh + oy) * ow + ox) * c;
                let corners = [
                    (y0, x0, (1.0 - ly) * (1.0 - lx)),
                    (y0, x1, (1.0 - ly) * lx),
                    (y1, x0, ly * (1.0 - lx)),
                    (y1, x1, ly * lx),
                ];
                for (yy, xx, wgt) in corners {
                    if wgt == 0.0 {
                        continue;
                    }
                    let wgt = S::lit(wgt);
                    let i = ((b * h + yy) * w + xx) * c;
                    for k in 0..c {
                        dd[i + k] += wgt * gd[o + k];
                    }
                }
            }
        }
    }
    dx
}

pub fn upsample_nearest_forward<S: Real>(x: &Tensor<S>, factor: usize) -> Tensor<S> {
    let (n, h, w, c) = x.dims4().expect("rank 4");
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = ((b * oh + oy) * ow + ox) * c;
                let i = ((b * h + oy / factor) * w + ox / factor) * c;
                od[o..o + c].copy_from_slice(&xd[i..i + c]);
            }
        }
    }
    out
}

pub fn upsample_nearest_backward<S: Real>(grad_out: &Tensor<S>, factor: usize) -> Tensor<S> {
    avg_pool_forward(grad_out, factor).map(|v| v * S::lit((factor * factor) as f64))
}

/// Non-overlapping `factor x factor` average pooling.
pub fn avg_pool_forward<S: Real>(x: &Tensor<S>, factor: usize) -> Tensor<S> {
    let (n, h, w, c) = x.dims4().expect("rank 4");
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Tensor::zeros(&[n, oh, ow, c]);
    let inv = S::lit(1.0 / (factor * factor) as f64);
    let xd = x.data();
    let od = out.data_mut();
    for b in 0..n {
        for y in 0..oh * factor {
            for xx in 0..ow * factor {
                let o = ((b * oh + y / factor) * ow + xx / factor) * c;
                let i = ((b * h + y) * w + xx) * c;
                for k in 0..c {
                    od[o + k] += xd[i + k] * inv;
                }
            }
        }
    }
    out
}

pub fn avg_pool_backward<S: Real>(input_shape: &[usize], grad_out: &Tensor<S>, factor: usize) -> Tensor<S> {
    let (n, h, w, c) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (_, oh, ow, _) = grad_out.dims4().expect("rank 4");
    let inv = S::lit(1.0 / (factor * factor) as f64);
    let mut dx = Tensor::zeros(input_shape);
    let gd = grad_out.data();
    let dd = dx.data_mut();
    for b in 0..n {
        for y in 0..oh * factor {
            for xx in 0..ow * factor {
                let o = ((b * oh + y / factor) * ow + xx / factor) * c;
                let i = ((b * h + y) * w + xx) * c;
                for k in 0..c {
                    dd[i + k] = gd[o + k] * inv;
                }
            }
        }
    }
    dx
}
