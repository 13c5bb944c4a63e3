//! Dense and depthwise 2-D cross-correlation plus affine maps.

use std::rc::Rc;

use super::gemm::{gemm, Layout};
use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(x: &Tensor, w_shape: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (n, cin, h, w) = x.dims4()?;
        let (cout, wcin, k) = match *w_shape {
            [co, ci, kh, kw] if kh == kw => (co, ci, kh),
            [co, ci] => (co, ci, 1),
            _ => {
                return Err(Error::dim(format!(
                    "conv weight must be Cout×Cin×k×k, got {w_shape:?}"
                )))
            }
        };
        if wcin != cin {
            return Err(Error::dim(format!(
                "input has {cin} channels but weight expects {wcin}"
            )));
        }
        if stride == 0 || k == 0 {
            return Err(Error::dim("stride and kernel size must be positive"));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::dim(format!(
                "{k}×{k} kernel does not fit {h}×{w} input with padding {pad}"
            )));
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            ho,
            wo,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn out_px(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output positions `o` in `0..n_out` whose source `o·stride + off − pad`
/// lies inside `0..n_in`.
fn valid_range(off: usize, pad: usize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
    let lo = if off >= pad {
        0
    } else {
        (pad - off).div_ceil(stride)
    };
    let hi = if n_in + pad > off {
        ((n_in + pad - off - 1) / stride + 1).min(n_out)
    } else {
        0
    };
    (lo.min(hi), hi)
}

fn im2col(g: &ConvGeom, x: &[f64], col: &mut [f64]) {
    let p = g.out_px();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (ylo, yhi) = valid_range(ky, g.pad, g.stride, g.h, g.ho);
            for kx in 0..g.k {
                let (xlo, xhi) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                let row = &mut col[((ci * g.k + ky) * g.k + kx) * p..][..p];
                row.fill(0.0);
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let start = xlo + kx - g.pad;
                        dst[xlo..xhi].copy_from_slice(&src[start..start + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            dst[ox] = src[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, col: &[f64], x: &mut [f64]) {
    let p = g.out_px();
    for ci in 0..g.cin {
        let plane = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            let (ylo, yhi) = valid_range(ky, g.pad, g.stride, g.h, g.ho);
            for kx in 0..g.k {
                let (xlo, xhi) = valid_range(kx, g.pad, g.stride, g.w, g.wo);
                let row = &col[((ci * g.k + ky) * g.k + kx) * p..][..p];
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let src = &row[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let start = xlo + kx - g.pad;
                        for (d, s) in dst[start..start + (xhi - xlo)]
                            .iter_mut()
                            .zip(&src[xlo..xhi])
                        {
                            *d += s;
                        }
                    } else {
                        for ox in xlo..xhi {
                            dst[ox * g.stride + kx - g.pad] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let p = g.out_px();
    let ck = g.col_rows();
    let mut out = vec![0.0; g.n * g.cout * p];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; ck * p]
    };
    for n in 0..g.n {
        let xn = &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
        let on = &mut out[n * g.cout * p..(n + 1) * g.cout * p];
        let cols: &[f64] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut col);
            &col
        };
        gemm(
            g.cout,
            ck,
            p,
            w,
            Layout::Normal,
            cols,
            Layout::Normal,
            0.0,
            on,
        );
        if let Some(b) = b {
            for (row, &bias) in on.chunks_mut(p).zip(b) {
                row.iter_mut().for_each(|v| *v += bias);
            }
        }
    }
    out
}

/// Dense cross-correlation. `w` is `Cout×Cin×k×k` (or `Cout×Cin` for 1×1).
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = ConvGeom::new(x, w.shape(), stride, pad)?;
    check_bias(b, g.cout)?;
    let out = conv_forward(&g, x.data(), w.data(), b.map(Tensor::data));
    Tensor::new(&[g.n, g.cout, g.ho, g.wo], out)
}

fn check_bias(b: Option<&Tensor>, cout: usize) -> Result<()> {
    match b {
        Some(b) if b.len() != cout => Err(Error::dim(format!(
            "bias has {} entries, expected {cout}",
            b.len()
        ))),
        _ => Ok(()),
    }
}

struct ConvBackward {
    geom: ConvGeom,
    x: Rc<Tensor>,
    w: Rc<Tensor>,
    has_bias: bool,
}

impl Backward for ConvBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let g = &self.geom;
        let p = g.out_px();
        let ck = g.col_rows();
        let x = self.x.data();
        let w = self.w.data();
        let gy = grad.data();
        let mut gx = needs[0].then(|| vec![0.0; x.len()]);
        let mut gw = needs[1].then(|| vec![0.0; w.len()]);
        let mut col = vec![0.0; if g.is_pointwise() { 0 } else { ck * p }];
        let mut gcol = vec![0.0; ck * p];
        for n in 0..g.n {
            let xn = &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
            let gyn = &gy[n * g.cout * p..(n + 1) * g.cout * p];
            if let Some(gw) = gw.as_mut() {
                let cols: &[f64] = if g.is_pointwise() {
                    xn
                } else {
                    im2col(g, xn, &mut col);
                    &col
                };
                gemm(
                    g.cout,
                    p,
                    ck,
                    gyn,
                    Layout::Normal,
                    cols,
                    Layout::Transposed,
                    1.0,
                    gw,
                );
            }
            if let Some(gx) = gx.as_mut() {
                let gxn = &mut gx[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
                if g.is_pointwise() {
                    gemm(
                        ck,
                        g.cout,
                        p,
                        w,
                        Layout::Transposed,
                        gyn,
                        Layout::Normal,
                        0.0,
                        gxn,
                    );
                } else {
                    gemm(
                        ck,
                        g.cout,
                        p,
                        w,
                        Layout::Transposed,
                        gyn,
                        Layout::Normal,
                        0.0,
                        &mut gcol,
                    );
                    col2im(g, &gcol, gxn);
                }
            }
        }
        let mut out = vec![
            gx.map(|d| Tensor::new(self.x.shape(), d)).transpose()?,
            gw.map(|d| Tensor::new(self.w.shape(), d)).transpose()?,
        ];
        if self.has_bias {
            out.push(needs[2].then(|| channel_sums(gy, g.n, g.cout, p)));
        }
        Ok(out)
    }
}

fn channel_sums(gy: &[f64], n: usize, c: usize, p: usize) -> Tensor {
    let mut gb = vec![0.0; c];
    for i in 0..n {
        for (co, acc) in gb.iter_mut().enumerate() {
            *acc += gy[(i * c + co) * p..(i * c + co + 1) * p]
                .iter()
                .sum::<f64>();
        }
    }
    Tensor::new(&[c], gb).expect("bias gradient shape")
}

/// Per-channel cross-correlation with odd `k×k` kernels and "same" padding.
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (c, k) = depthwise_geom(x, w)?;
    check_bias(b, c)?;
    let (n, _, h, wd) = x.dims4()?;
    let mut out = vec![0.0; x.len()];
    let pad = k / 2;
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * h * wd;
            let src = &x.data()[off..off + h * wd];
            let dst = &mut out[off..off + h * wd];
            let bias = b.map_or(0.0, |b| b.data()[ci]);
            dst.fill(bias);
            let kern = &w.data()[ci * k * k..(ci + 1) * k * k];
            for ky in 0..k {
                let (ylo, yhi) = valid_range(ky, pad, 1, h, h);
                for kx in 0..k {
                    let (xlo, xhi) = valid_range(kx, pad, 1, wd, wd);
                    let wv = kern[ky * k + kx];
                    for oy in ylo..yhi {
                        let iy = oy + ky - pad;
                        let s = &src[iy * wd + xlo + kx - pad..iy * wd + xhi + kx - pad];
                        let d = &mut dst[oy * wd + xlo..oy * wd + xhi];
                        for (d, s) in d.iter_mut().zip(s) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(x.shape(), out)
}

fn depthwise_geom(x: &Tensor, w: &Tensor) -> Result<(usize, usize)> {
    let (_, c, _, _) = x.dims4()?;
    match *w.shape() {
        [wc, 1, kh, kw] if wc == c && kh == kw && kh % 2 == 1 => Ok((c, kh)),
        _ => Err(Error::dim(format!(
            "depthwise weight {:?} does not match {c} channels (expected C×1×k×k, k odd)",
            w.shape()
        ))),
    }
}

struct DepthwiseBackward {
    x: Rc<Tensor>,
    w: Rc<Tensor>,
    has_bias: bool,
}

impl Backward for DepthwiseBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (n, c, h, wd) = self.x.dims4()?;
        let k = self.w.shape()[2];
        let pad = k / 2;
        let x = self.x.data();
        let gy = grad.data();
        let mut gx = needs[0].then(|| vec![0.0; x.len()]);
        let mut gw = needs[1].then(|| vec![0.0; self.w.len()]);
        for ni in 0..n {
            for ci in 0..c {
                let off = (ni * c + ci) * h * wd;
                let xs = &x[off..off + h * wd];
                let gs = &gy[off..off + h * wd];
                let kern = &self.w.data()[ci * k * k..(ci + 1) * k * k];
                for ky in 0..k {
                    let (ylo, yhi) = valid_range(ky, pad, 1, h, h);
                    for kx in 0..k {
                        let (xlo, xhi) = valid_range(kx, pad, 1, wd, wd);
                        let wv = kern[ky * k + kx];
                        let mut acc = 0.0;
                        for oy in ylo..yhi {
                            let iy = oy + ky - pad;
                            let src = iy * wd + kx + xlo - pad..iy * wd + kx + xhi - pad;
                            let g = &gs[oy * wd + xlo..oy * wd + xhi];
                            if gw.is_some() {
                                acc += g
                                    .iter()
                                    .zip(&xs[src.clone()])
                                    .map(|(a, b)| a * b)
                                    .sum::<f64>();
                            }
                            if let Some(gx) = gx.as_mut() {
                                for (d, gv) in gx[off..off + h * wd][src].iter_mut().zip(g) {
                                    *d += wv * gv;
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[ci * k * k + ky * k + kx] += acc;
                        }
                    }
                }
            }
        }
        let mut out = vec![
            gx.map(|d| Tensor::new(self.x.shape(), d)).transpose()?,
            gw.map(|d| Tensor::new(self.w.shape(), d)).transpose()?,
        ];
        if self.has_bias {
            out.push(needs[2].then(|| channel_sums(gy, n, c, h * wd)));
        }
        Ok(out)
    }
}

/// Affine map over the trailing dimension: `x[..., Cin] · wᵀ + b`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (rows, cin, cout) = linear_geom(x, w)?;
    check_bias(b, cout)?;
    let mut out = vec![0.0; rows * cout];
    gemm(
        rows,
        cin,
        cout,
        x.data(),
        Layout::Normal,
        w.data(),
        Layout::Transposed,
        0.0,
        &mut out,
    );
    if let Some(b) = b {
        for row in out.chunks_mut(cout) {
            row.iter_mut()
                .zip(b.data())
                .for_each(|(v, bias)| *v += bias);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("non-empty shape") = cout;
    Tensor::new(&shape, out)
}

fn linear_geom(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize)> {
    let &[cout, cin] = w.shape() else {
        return Err(Error::dim(format!(
            "linear weight must be Cout×Cin, got {:?}",
            w.shape()
        )));
    };
    match x.shape().last() {
        Some(&last) if last == cin => Ok((x.len() / cin.max(1), cin, cout)),
        _ => Err(Error::dim(format!(
            "trailing dimension of {:?} does not match weight input width {cin}",
            x.shape()
        ))),
    }
}

struct LinearBackward {
    x: Rc<Tensor>,
    w: Rc<Tensor>,
    has_bias: bool,
}

impl Backward for LinearBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (rows, cin, cout) = linear_geom(&self.x, &self.w)?;
        let gy = grad.data();
        let gx = needs[0]
            .then(|| {
                let mut gx = vec![0.0; rows * cin];
                gemm(
                    rows,
                    cout,
                    cin,
                    gy,
                    Layout::Normal,
                    self.w.data(),
                    Layout::Normal,
                    0.0,
                    &mut gx,
                );
                Tensor::new(self.x.shape(), gx)
            })
            .transpose()?;
        let gw = needs[1]
            .then(|| {
                let mut gw = vec![0.0; cout * cin];
                gemm(
                    cout,
                    rows,
                    cin,
                    gy,
                    Layout::Transposed,
                    self.x.data(),
                    Layout::Normal,
                    0.0,
                    &mut gw,
                );
                Tensor::new(self.w.shape(), gw)
            })
            .transpose()?;
        let mut out = vec![gx, gw];
        if self.has_bias {
            out.push(needs[2].then(|| {
                let mut gb = vec![0.0; cout];
                for row in gy.chunks(cout) {
                    gb.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                }
                Tensor::new(&[cout], gb).expect("bias shape")
            }));
        }
        Ok(out)
    }
}

fn inputs<'a>(x: &'a Var, w: &'a Var, b: Option<&'a Var>) -> Vec<&'a Var> {
    let mut v = vec![x, w];
    v.extend(b);
    v
}

impl Graph {
    pub fn conv2d(
        &self,
        x: &Var,
        w: &Var,
        b: Option<&Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(x.value(), w.shape(), stride, pad)?;
        check_bias(b.map(Var::value), geom.cout)?;
        let out = conv_forward(
            &geom,
            x.value().data(),
            w.value().data(),
            b.map(|b| b.value().data()),
        );
        let out = Tensor::new(&[geom.n, geom.cout, geom.ho, geom.wo], out)?;
        self.record("conv2d", &inputs(x, w, b), out, || ConvBackward {
            geom,
            x: x.shared(),
            w: w.shared(),
            has_bias: b.is_some(),
        })
    }

    /// Position-wise channel mixing on an `N×C×H×W` map with a `Cout×Cin`
    /// weight (a 1×1 convolution).
    pub fn channel_linear(&self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        if w.shape().len() != 2 {
            return Err(Error::dim(format!(
                "linear weight must be Cout×Cin, got {:?}",
                w.shape()
            )));
        }
        self.conv2d(x, w, b, 1, 0)
    }

    pub fn depthwise_conv2d(&self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let out = depthwise_conv2d(x.value(), w.value(), b.map(Var::value))?;
        self.record("depthwise_conv2d", &inputs(x, w, b), out, || {
            DepthwiseBackward {
                x: x.shared(),
                w: w.shared(),
                has_bias: b.is_some(),
            }
        })
    }

    pub fn linear(&self, x: &Var, w: &Var, b: Option<&Var>) -> Result<Var> {
        let out = linear(x.value(), w.value(), b.map(Var::value))?;
        self.record("linear", &inputs(x, w, b), out, || LinearBackward {
            x: x.shared(),
            w: w.shared(),
            has_bias: b.is_some(),
        })
    }
}
