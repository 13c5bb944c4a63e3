//! Direct loop implementations used as independent references.

use std::f64::consts::PI;

use sfmfusion::ops::pool::{downsample2x, upsample2x};
use sfmfusion::params::{ParamId, ParamStore};
use sfmfusion::ssm::SsmParams;
use sfmfusion::Tensor;

pub fn softplus(z: f64) -> f64 {
    (1.0 + z.exp()).ln()
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn idx(s: &[usize], n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * s[1] + c) * s[2] + y) * s[3] + x
}

/// Zero-padded cross-correlation, weight `[Cout,Cin,k,k]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, pad: usize) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    let (n, cin, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (cout, k) = (ws[0], ws[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let os = [n, cout, ho, wo];
    let mut out = vec![0.0; n * cout * ho * wo];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0, |b| b.data()[co]);
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let wv = w.data()[((co * cin + ci) * k + ky) * k + kx];
                                acc += wv * x.data()[idx(xs, ni, ci, iy as usize, ix as usize)];
                            }
                        }
                    }
                    out[idx(&os, ni, co, oy, ox)] = acc;
                }
            }
        }
    }
    Tensor::new(&os, out).unwrap()
}

/// Per-channel zero-padded correlation with weight `[C,1,k,k]`.
pub fn depthwise(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let s = x.shape();
    let k = w.shape()[2];
    let pad = (k / 2) as isize;
    let mut out = vec![0.0; x.len()];
    for ni in 0..s[0] {
        for c in 0..s[1] {
            for y in 0..s[2] {
                for xx in 0..s[3] {
                    let mut acc = b.map_or(0.0, |b| b.data()[c]);
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = y as isize + ky as isize - pad;
                            let ix = xx as isize + kx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= s[2] as isize || ix >= s[3] as isize {
                                continue;
                            }
                            acc += w.data()[(c * k + ky) * k + kx]
                                * x.data()[idx(s, ni, c, iy as usize, ix as usize)];
                        }
                    }
                    out[idx(s, ni, c, y, xx)] = acc;
                }
            }
        }
    }
    Tensor::new(s, out).unwrap()
}

/// Affine map over the trailing axis, weight `[Cout,Cin]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let (cout, cin) = (w.shape()[0], w.shape()[1]);
    let rows = x.len() / cin;
    let mut out = Vec::with_capacity(rows * cout);
    for r in 0..rows {
        for o in 0..cout {
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for i in 0..cin {
                acc += w.data()[o * cin + i] * x.data()[r * cin + i];
            }
            out.push(acc);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cout;
    Tensor::new(&shape, out).unwrap()
}

/// Per-position channel mixing on `[N,C,H,W]`, weight `[Cout,Cin]`.
pub fn pointwise(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let s = x.shape();
    let (cout, cin) = (w.shape()[0], w.shape()[1]);
    let os = [s[0], cout, s[2], s[3]];
    let mut out = vec![0.0; s[0] * cout * s[2] * s[3]];
    for n in 0..s[0] {
        for y in 0..s[2] {
            for xx in 0..s[3] {
                for o in 0..cout {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for i in 0..cin {
                        acc += w.data()[o * cin + i] * x.data()[idx(s, n, i, y, xx)];
                    }
                    out[idx(&os, n, o, y, xx)] = acc;
                }
            }
        }
    }
    Tensor::new(&os, out).unwrap()
}

/// Normalization over channels at every position, mean then variance.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Tensor {
    let s = x.shape();
    let c = s[1];
    let mut out = vec![0.0; x.len()];
    for n in 0..s[0] {
        for y in 0..s[2] {
            for xx in 0..s[3] {
                let vals: Vec<f64> = (0..c).map(|ci| x.data()[idx(s, n, ci, y, xx)]).collect();
                let mean = vals.iter().sum::<f64>() / c as f64;
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let sd = (var + eps).sqrt();
                for ci in 0..c {
                    out[idx(s, n, ci, y, xx)] =
                        (vals[ci] - mean) / sd * gamma.data()[ci] + beta.data()[ci];
                }
            }
        }
    }
    Tensor::new(s, out).unwrap()
}

pub fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_fn(x.shape(), |i| f(x.data()[i]))
}

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i])
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    Tensor::from_fn(a.shape(), |i| a.data()[i] * b.data()[i])
}

/// Input-dependent state-space recurrence over a `[C][L]` sequence.
pub fn scan_sequence(x: &[Vec<f64>], p: &SsmParams) -> Vec<Vec<f64>> {
    let c = x.len();
    let l = x[0].len();
    let ns = p.w_b.shape()[0];
    let at = |t: &Tensor, r: usize, col: usize, cols: usize| t.data()[r * cols + col];
    let mut h = vec![vec![0.0; ns]; c];
    let mut y = vec![vec![0.0; l]; c];
    for t in 0..l {
        let xt: Vec<f64> = (0..c).map(|ci| x[ci][t]).collect();
        let proj = |w: &Tensor, r: usize| (0..c).map(|j| at(w, r, j, c) * xt[j]).sum::<f64>();
        let bt: Vec<f64> = (0..ns).map(|k| proj(&p.w_b, k)).collect();
        let ct: Vec<f64> = (0..ns).map(|k| proj(&p.w_c, k)).collect();
        for ci in 0..c {
            let dt = softplus(proj(&p.w_dt, ci) + p.dt_bias.data()[ci]);
            let mut acc = 0.0;
            for k in 0..ns {
                let a = -at(&p.a_log, ci, k, ns).exp();
                let decay = (dt * a).exp();
                let gain = (decay - 1.0) / a;
                h[ci][k] = decay * h[ci][k] + gain * bt[k] * xt[ci];
                acc += ct[k] * h[ci][k];
            }
            y[ci][t] = acc;
        }
    }
    y
}

/// Pixel visiting orders: rows forward, rows backward, columns forward,
/// columns backward.
pub fn scan_orders(h: usize, w: usize) -> [Vec<(usize, usize)>; 4] {
    let rows: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect();
    let cols: Vec<(usize, usize)> = (0..w).flat_map(|x| (0..h).map(move |y| (y, x))).collect();
    let rev = |v: &Vec<(usize, usize)>| v.iter().rev().cloned().collect::<Vec<_>>();
    [rows.clone(), rev(&rows), cols.clone(), rev(&cols)]
}

/// Sum of four independent sequence scans, one per visiting order.
pub fn ss2d(x: &Tensor, params: &[SsmParams; 4]) -> Tensor {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = vec![0.0; x.len()];
    for (order, p) in scan_orders(h, w).iter().zip(params) {
        for ni in 0..n {
            let seq: Vec<Vec<f64>> = (0..c)
                .map(|ci| {
                    order
                        .iter()
                        .map(|&(y, xx)| x.data()[idx(s, ni, ci, y, xx)])
                        .collect()
                })
                .collect();
            let y = scan_sequence(&seq, p);
            for ci in 0..c {
                for (t, &(py, px)) in order.iter().enumerate() {
                    out[idx(s, ni, ci, py, px)] += y[ci][t];
                }
            }
        }
    }
    Tensor::new(s, out).unwrap()
}

/// Unnormalized 2D DFT of every plane, by the double sum.
pub fn dft2(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let mut re = vec![0.0; x.len()];
    let mut im = vec![0.0; x.len()];
    for (p, plane) in x.data().chunks(h * w).enumerate() {
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let ang =
                            -2.0 * PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        sr += plane[y * w + xx] * ang.cos();
                        si += plane[y * w + xx] * ang.sin();
                    }
                }
                re[p * h * w + u * w + v] = sr;
                im[p * h * w + u * w + v] = si;
            }
        }
    }
    (re, im)
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r as usize
}

/// `(Gx, Gy)` of one `h×w` plane with mirrored borders.
pub fn sobel(plane: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    const KX: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            for dy in 0..3 {
                for dx in 0..3 {
                    let v = plane[mirror(y as isize + dy as isize - 1, h) * w
                        + mirror(x as isize + dx as isize - 1, w)];
                    gx[y * w + x] += KX[dy][dx] * v;
                    gy[y * w + x] += KX[dx][dy] * v;
                }
            }
        }
    }
    (gx, gy)
}

/// `|Gx| + |Gy|` of every plane of a `[N,C,H,W]` tensor.
pub fn sobel_magnitude(x: &Tensor) -> Tensor {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let mut out = Vec::with_capacity(x.len());
    for plane in x.data().chunks(h * w) {
        let (gx, gy) = sobel(plane, h, w);
        out.extend(gx.iter().zip(&gy).map(|(a, b)| a.abs() + b.abs()));
    }
    Tensor::new(x.shape(), out).unwrap()
}

/// Parameter values of one scan direction.
pub fn ssm_values(store: &ParamStore, p: &SsmParams<ParamId>) -> SsmParams {
    p.map(|&id| store.get(id).clone())
}

pub fn ss2d_values(store: &ParamStore, dirs: &[SsmParams<ParamId>; 4]) -> [SsmParams; 4] {
    [
        ssm_values(store, &dirs[0]),
        ssm_values(store, &dirs[1]),
        ssm_values(store, &dirs[2]),
        ssm_values(store, &dirs[3]),
    ]
}

pub use sfmfusion::ops::norm::LAYER_NORM_EPS;

/// Mixed-scale scan block written out with the loop references.
pub fn mmb(store: &ParamStore, m: &sfmfusion::blocks::Mmb, x: &Tensor) -> Tensor {
    let v = |id: ParamId| store.get(id);
    let lin = |l: &sfmfusion::layers::Linear, x: &Tensor| pointwise(x, v(l.w), Some(v(l.b)));
    let dw = |d: &sfmfusion::layers::DwConv, x: &Tensor| depthwise(x, v(d.w), Some(v(d.b)));
    let ln = |n: &sfmfusion::layers::Norm, x: &Tensor| {
        layer_norm(x, v(n.gamma), v(n.beta), LAYER_NORM_EPS)
    };
    let scales = m.dw.len();
    let mut levels = vec![map(&dw(&m.dw[0], &lin(&m.lin_in, x)), silu)];
    for k in 1..scales {
        let down = downsample2x(&levels[k - 1]).unwrap();
        levels.push(map(&dw(&m.dw[k], &down), silu));
    }
    let mut refined: Option<Tensor> = None;
    for k in (0..scales).rev() {
        let mut r = ln(
            &m.norm[k],
            &ss2d(&levels[k], &ss2d_values(store, &m.ssm[k].dirs)),
        );
        if let Some(coarse) = refined {
            r = add(&r, &upsample2x(&coarse).unwrap());
        }
        refined = Some(r);
    }
    let gate = map(&lin(&m.gate, x), silu);
    add(&lin(&m.lin_out, &mul(&refined.unwrap(), &gate)), x)
}

/// Gated three-stream fusion block written out with the loop references.
/// Returns the output and the gate.
pub fn dfmb(
    store: &ParamStore,
    d: &sfmfusion::blocks::Dfmb,
    dv: &Tensor,
    df: &Tensor,
    di: &Tensor,
) -> (Tensor, Tensor) {
    let v = |id: ParamId| store.get(id);
    let lin = |l: &sfmfusion::layers::Linear, x: &Tensor| pointwise(x, v(l.w), Some(v(l.b)));
    let dw = |k: &sfmfusion::layers::DwConv, x: &Tensor| depthwise(x, v(k.w), Some(v(k.b)));
    let ln = |n: &sfmfusion::layers::Norm, x: &Tensor| {
        layer_norm(x, v(n.gamma), v(n.beta), LAYER_NORM_EPS)
    };
    let stream = |s: &sfmfusion::blocks::DfmbStream, x: &Tensor| {
        let h = map(&dw(&s.dw, &lin(&s.lin, x)), silu);
        ln(&s.norm, &ss2d(&h, &ss2d_values(store, &s.ssm.dirs)))
    };
    let (nv, nf, ni) = (ln(&d.norm_v, dv), ln(&d.norm_f, df), ln(&d.norm_i, di));
    let sv = stream(&d.stream_v, &nv);
    let si = stream(&d.stream_i, &ni);
    let w = map(
        &dw(&d.gate_dw, &lin(&d.gate_lin, &add(&add(&ni, &nf), &nv))),
        sigmoid,
    );
    let blend = add(&mul(&sv, &w), &mul(&si, &map(&w, |g| 1.0 - g)));
    let (s1, s2) = (v(d.s1).data()[0], v(d.s2).data()[0]);
    let skips = add(&map(dv, |t| s1 * t), &map(di, |t| s2 * t));
    (add(&lin(&d.lin_out, &blend), &skips), w)
}
