//! Layer normalization across the channel axis of each spatial position.

use std::rc::Rc;

use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-6;

struct Normalized {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn normalize(x: &Tensor, eps: f64) -> Result<Normalized> {
    let (n, c, h, w) = x.dims4()?;
    let hw = h * w;
    let data = x.data();
    let mut xhat = vec![0.0; data.len()];
    let mut inv_std = vec![0.0; n * hw];
    let mut mean = vec![0.0; hw];
    let mut var = vec![0.0; hw];
    for ni in 0..n {
        let base = ni * c * hw;
        mean.fill(0.0);
        var.fill(0.0);
        for ci in 0..c {
            let plane = &data[base + ci * hw..base + (ci + 1) * hw];
            mean.iter_mut().zip(plane).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= c as f64);
        for ci in 0..c {
            let plane = &data[base + ci * hw..base + (ci + 1) * hw];
            for ((s, v), m) in var.iter_mut().zip(plane).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let istd = &mut inv_std[ni * hw..(ni + 1) * hw];
        for (i, s) in istd.iter_mut().zip(&var) {
            *i = 1.0 / (s / c as f64 + eps).sqrt();
        }
        for ci in 0..c {
            let off = base + ci * hw;
            for p in 0..hw {
                xhat[off + p] = (data[off + p] - mean[p]) * istd[p];
            }
        }
    }
    Ok(Normalized { xhat, inv_std })
}

fn check_affine(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<usize> {
    let (_, c, _, _) = x.dims4()?;
    if gamma.len() != c || beta.len() != c {
        return Err(Error::dim(format!(
            "layer norm affine parameters {:?}/{:?} do not match {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(c)
}

fn apply_affine(x: &Tensor, xhat: &[f64], gamma: &[f64], beta: &[f64]) -> Result<Tensor> {
    let (_, c, h, w) = x.dims4()?;
    let hw = h * w;
    let mut out = xhat.to_vec();
    for (i, plane) in out.chunks_mut(hw).enumerate() {
        let (g, b) = (gamma[i % c], beta[i % c]);
        plane.iter_mut().for_each(|v| *v = *v * g + b);
    }
    Tensor::new(x.shape(), out)
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    check_affine(x, gamma, beta)?;
    let norm = normalize(x, eps)?;
    apply_affine(x, &norm.xhat, gamma.data(), beta.data())
}

struct LayerNormBackward {
    shape: Vec<usize>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    gamma: Rc<Tensor>,
}

impl Backward for LayerNormBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (n, c, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        let hw = h * w;
        let g = grad.data();
        let gamma = self.gamma.data();
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for (i, (gp, xp)) in g.chunks(hw).zip(self.xhat.chunks(hw)).enumerate() {
            let ci = i % c;
            gbeta[ci] += gp.iter().sum::<f64>();
            ggamma[ci] += gp.iter().zip(xp).map(|(a, b)| a * b).sum::<f64>();
        }
        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; g.len()];
            let mut mean_g = vec![0.0; hw];
            let mut mean_gx = vec![0.0; hw];
            for ni in 0..n {
                let base = ni * c * hw;
                mean_g.fill(0.0);
                mean_gx.fill(0.0);
                for ci in 0..c {
                    let off = base + ci * hw;
                    for p in 0..hw {
                        let gh = g[off + p] * gamma[ci];
                        mean_g[p] += gh;
                        mean_gx[p] += gh * self.xhat[off + p];
                    }
                }
                let inv_c = 1.0 / c as f64;
                let istd = &self.inv_std[ni * hw..(ni + 1) * hw];
                for ci in 0..c {
                    let off = base + ci * hw;
                    for p in 0..hw {
                        let gh = g[off + p] * gamma[ci];
                        gx[off + p] = istd[p]
                            * (gh - mean_g[p] * inv_c - self.xhat[off + p] * mean_gx[p] * inv_c);
                    }
                }
            }
            Tensor::new(&self.shape, gx)
        });
        Ok(vec![
            gx.transpose()?,
            needs[1].then(|| Tensor::new(&[c], ggamma)).transpose()?,
            needs[2].then(|| Tensor::new(&[c], gbeta)).transpose()?,
        ])
    }
}

impl Graph {
    pub fn layer_norm(&self, x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
        check_affine(x.value(), gamma.value(), beta.value())?;
        let norm = normalize(x.value(), eps)?;
        let out = apply_affine(
            x.value(),
            &norm.xhat,
            gamma.value().data(),
            beta.value().data(),
        )?;
        self.record("layer_norm", &[x, gamma, beta], out, move || {
            LayerNormBackward {
                shape: x.shape().to_vec(),
                xhat: norm.xhat,
                inv_std: norm.inv_std,
                gamma: gamma.shared(),
            }
        })
    }
}
