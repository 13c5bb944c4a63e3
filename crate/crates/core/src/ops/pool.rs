//! Global pooling and factor-two resampling.

use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn gap(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = (h * w) as f64;
    let data = x
        .data()
        .chunks(h * w)
        .map(|p| p.iter().sum::<f64>() / hw)
        .collect();
    Tensor::new(&[n, c, 1, 1], data)
}

fn argmax_planes(x: &Tensor) -> Result<Vec<usize>> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.data()
        .chunks(h * w)
        .map(|p| {
            let mut best = 0;
            for (i, &v) in p.iter().enumerate() {
                if v > p[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

pub fn gmp(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let idx = argmax_planes(x)?;
    let data = idx
        .iter()
        .enumerate()
        .map(|(i, &j)| x.data()[i * h * w + j])
        .collect();
    Tensor::new(&[n, c, 1, 1], data)
}

/// 2×2 mean pooling with stride 2. Requires even extents.
pub fn downsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!(
            "downsample2x needs even extents, got {h}×{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * ho * wo];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(ho * wo)) {
        for oy in 0..ho {
            let r0 = &src[2 * oy * w..(2 * oy + 1) * w];
            let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..wo {
                dst[oy * wo + ox] =
                    0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}

/// Source taps of bilinear ×2 upsampling along one axis, half-pixel centres
/// (corner alignment off), clamped at the borders.
fn upsample_taps(n_in: usize) -> Vec<[(usize, f64); 2]> {
    (0..2 * n_in)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = src - i0 as f64;
            [(i0, 1.0 - frac), (i1, frac)]
        })
        .collect()
}

/// Bilinear ×2 upsampling.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (ho, wo) = (2 * h, 2 * w);
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut out = vec![0.0; n * c * ho * wo];
    let mut rows = vec![0.0; h * wo];
    for (src, dst) in x.data().chunks(h * w).zip(out.chunks_mut(ho * wo)) {
        for y in 0..h {
            for (ox, taps) in tx.iter().enumerate() {
                rows[y * wo + ox] =
                    taps[0].1 * src[y * w + taps[0].0] + taps[1].1 * src[y * w + taps[1].0];
            }
        }
        for (oy, taps) in ty.iter().enumerate() {
            for ox in 0..wo {
                dst[oy * wo + ox] =
                    taps[0].1 * rows[taps[0].0 * wo + ox] + taps[1].1 * rows[taps[1].0 * wo + ox];
            }
        }
    }
    Tensor::new(&[n, c, ho, wo], out)
}

struct GapBackward {
    shape: Vec<usize>,
}

impl Backward for GapBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let hw = self.shape[2] * self.shape[3];
        let mut gx = Vec::with_capacity(grad.len() * hw);
        for &g in grad.data() {
            gx.extend(std::iter::repeat(g / hw as f64).take(hw));
        }
        Ok(vec![Some(Tensor::new(&self.shape, gx)?)])
    }
}

struct GmpBackward {
    shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl Backward for GmpBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let hw = self.shape[2] * self.shape[3];
        let mut gx = Tensor::zeros(&self.shape);
        for (i, (&g, &j)) in grad.data().iter().zip(&self.argmax).enumerate() {
            gx.data_mut()[i * hw + j] = g;
        }
        Ok(vec![Some(gx)])
    }
}

struct DownBackward {
    shape: Vec<usize>,
}

impl Backward for DownBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (h, w) = (self.shape[2], self.shape[3]);
        let (ho, wo) = (h / 2, w / 2);
        let mut gx = Tensor::zeros(&self.shape);
        for (g, dst) in grad
            .data()
            .chunks(ho * wo)
            .zip(gx.data_mut().chunks_mut(h * w))
        {
            for y in 0..h {
                for x in 0..w {
                    dst[y * w + x] = 0.25 * g[(y / 2) * wo + x / 2];
                }
            }
        }
        Ok(vec![Some(gx)])
    }
}

struct UpBackward {
    shape: Vec<usize>,
}

impl Backward for UpBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (h, w) = (self.shape[2], self.shape[3]);
        let (ho, wo) = (2 * h, 2 * w);
        let ty = upsample_taps(h);
        let tx = upsample_taps(w);
        let mut gx = Tensor::zeros(&self.shape);
        let mut rows = vec![0.0; h * wo];
        for (g, dst) in grad
            .data()
            .chunks(ho * wo)
            .zip(gx.data_mut().chunks_mut(h * w))
        {
            rows.fill(0.0);
            for (oy, taps) in ty.iter().enumerate() {
                for ox in 0..wo {
                    let v = g[oy * wo + ox];
                    rows[taps[0].0 * wo + ox] += taps[0].1 * v;
                    rows[taps[1].0 * wo + ox] += taps[1].1 * v;
                }
            }
            for y in 0..h {
                for (ox, taps) in tx.iter().enumerate() {
                    let v = rows[y * wo + ox];
                    dst[y * w + taps[0].0] += taps[0].1 * v;
                    dst[y * w + taps[1].0] += taps[1].1 * v;
                }
            }
        }
        Ok(vec![Some(gx)])
    }
}

impl Graph {
    pub fn gap(&self, x: &Var) -> Result<Var> {
        let out = gap(x.value())?;
        self.record("gap", &[x], out, || GapBackward {
            shape: x.shape().to_vec(),
        })
    }

    pub fn gmp(&self, x: &Var) -> Result<Var> {
        let argmax = argmax_planes(x.value())?;
        let out = gmp(x.value())?;
        self.record("gmp", &[x], out, || GmpBackward {
            shape: x.shape().to_vec(),
            argmax,
        })
    }

    pub fn downsample2x(&self, x: &Var) -> Result<Var> {
        let out = downsample2x(x.value())?;
        self.record("downsample2x", &[x], out, || DownBackward {
            shape: x.shape().to_vec(),
        })
    }

    pub fn upsample2x(&self, x: &Var) -> Result<Var> {
        let out = upsample2x(x.value())?;
        self.record("upsample2x", &[x], out, || UpBackward {
            shape: x.shape().to_vec(),
        })
    }
}
