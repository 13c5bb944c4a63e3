//! Sobel gradient magnitude `|Gx| + |Gy|` with mirror (reflect) borders.

use crate::autodiff::{Backward, Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Horizontal derivative kernel; the vertical kernel is its transpose.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Smoothing taps across the derivative direction. Differences are taken
/// before weighting so flat regions give exactly zero.
const SMOOTH: [f64; 3] = [1.0, 2.0, 1.0];

/// Mirror index without repeating the edge sample: `-1 → 1`, `n → n-2`.
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Signed responses `(Gx, Gy)` of every plane.
pub(crate) fn responses(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, _, h, w) = x.dims4()?;
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; x.len()];
    for (p, src) in x.data().chunks(h * w).enumerate() {
        let off = p * h * w;
        for y in 0..h {
            for xx in 0..w {
                let mut v = [[0.0; 3]; 3];
                for (dy, row) in v.iter_mut().enumerate() {
                    let yy = reflect(y as isize + dy as isize - 1, h);
                    for (dx, cell) in row.iter_mut().enumerate() {
                        *cell = src[yy * w + reflect(xx as isize + dx as isize - 1, w)];
                    }
                }
                let (mut sx, mut sy) = (0.0, 0.0);
                for k in 0..3 {
                    sx += SMOOTH[k] * (v[k][2] - v[k][0]);
                    sy += SMOOTH[k] * (v[2][k] - v[0][k]);
                }
                gx[off + y * w + xx] = sx;
                gy[off + y * w + xx] = sy;
            }
        }
    }
    Ok((gx, gy))
}

pub fn sobel_magnitude(x: &Tensor) -> Result<Tensor> {
    let (gx, gy) = responses(x)?;
    Tensor::new(
        x.shape(),
        gx.iter().zip(&gy).map(|(a, b)| a.abs() + b.abs()).collect(),
    )
}

struct SobelBackward {
    shape: Vec<usize>,
    sign_x: Vec<f64>,
    sign_y: Vec<f64>,
}

impl Backward for SobelBackward {
    fn backward(&self, grad: &Tensor, _needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (h, w) = (self.shape[2], self.shape[3]);
        let mut out = Tensor::zeros(&self.shape);
        let g = grad.data();
        for (p, dst) in out.data_mut().chunks_mut(h * w).enumerate() {
            let off = p * h * w;
            for y in 0..h {
                for xx in 0..w {
                    let i = off + y * w + xx;
                    let (cx, cy) = (g[i] * self.sign_x[i], g[i] * self.sign_y[i]);
                    if cx == 0.0 && cy == 0.0 {
                        continue;
                    }
                    for (dy, row) in SOBEL_X.iter().enumerate() {
                        let yy = reflect(y as isize + dy as isize - 1, h);
                        for (dx, &k) in row.iter().enumerate() {
                            let xs = reflect(xx as isize + dx as isize - 1, w);
                            dst[yy * w + xs] += cx * k + cy * SOBEL_X[dx][dy];
                        }
                    }
                }
            }
        }
        Ok(vec![Some(out)])
    }
}

impl Graph {
    pub fn sobel_magnitude(&self, x: &Var) -> Result<Var> {
        let (gx, gy) = responses(x.value())?;
        let out = Tensor::new(
            x.shape(),
            gx.iter().zip(&gy).map(|(a, b)| a.abs() + b.abs()).collect(),
        )?;
        self.record("sobel_magnitude", &[x], out, || SobelBackward {
            shape: x.shape().to_vec(),
            sign_x: gx.iter().map(|v| sign(*v)).collect(),
            sign_y: gy.iter().map(|v| sign(*v)).collect(),
        })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
