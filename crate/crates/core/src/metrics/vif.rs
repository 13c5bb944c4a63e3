//! Pixel-domain multi-scale visual information fidelity.

use crate::error::Result;

use super::GrayImage;

/// Variance of the additive visual noise model.
pub const VIF_NOISE_VARIANCE: f64 = 2.0;

/// Gaussian window size per scale, finest first. The standard deviation is size/5.
pub const VIF_WINDOWS: [usize; 4] = [9, 7, 5, 3];

const EPS: f64 = 1e-10;

/// Row-major plane used by the filtering pipeline.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn map2(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            v: self
                .v
                .iter()
                .zip(&other.v)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn decimate(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                v.push(self.v[2 * y * self.w + 2 * x]);
            }
        }
        Plane { h, w, v }
    }
}

fn gaussian(n: usize) -> Vec<f64> {
    let sigma = n as f64 / 5.0;
    let c = (n as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..n)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Valid-region correlation with the separable window `k ⊗ k`.
fn filter_valid(p: &Plane, k: &[f64]) -> Plane {
    let n = k.len();
    let (h, w) = (p.h + 1 - n, p.w + 1 - n);
    let mut rows = vec![0.0; p.h * w];
    for y in 0..p.h {
        for x in 0..w {
            rows[y * w + x] = (0..n).map(|j| k[j] * p.v[y * p.w + x + j]).sum();
        }
    }
    let mut v = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            v[y * w + x] = (0..n).map(|i| k[i] * rows[(y + i) * w + x]).sum();
        }
    }
    Plane { h, w, v }
}

/// Information captured by `dist` about `reference` relative to the
/// information in `reference` itself. Returns 1 when the reference carries
/// no information at any scale.
pub fn vif_single(reference: &GrayImage, dist: &GrayImage) -> Result<f64> {
    reference.expect_same_size(dist)?;
    let mut r = Plane {
        h: reference.height(),
        w: reference.width(),
        v: reference.data().to_vec(),
    };
    let mut d = Plane {
        h: dist.height(),
        w: dist.width(),
        v: dist.data().to_vec(),
    };
    let (mut num, mut den) = (0.0, 0.0);
    for (scale, &n) in VIF_WINDOWS.iter().enumerate() {
        let k = gaussian(n);
        if scale > 0 {
            if r.h < n || r.w < n {
                break;
            }
            r = filter_valid(&r, &k).decimate();
            d = filter_valid(&d, &k).decimate();
        }
        if r.h < n || r.w < n {
            break;
        }
        let mu1 = filter_valid(&r, &k);
        let mu2 = filter_valid(&d, &k);
        let s11 = filter_valid(&r.map2(&r, |a, b| a * b), &k);
        let s22 = filter_valid(&d.map2(&d, |a, b| a * b), &k);
        let s12 = filter_valid(&r.map2(&d, |a, b| a * b), &k);
        for i in 0..mu1.v.len() {
            let (m1, m2) = (mu1.v[i], mu2.v[i]);
            let mut sigma1 = (s11.v[i] - m1 * m1).max(0.0);
            let sigma2 = (s22.v[i] - m2 * m2).max(0.0);
            let sigma12 = s12.v[i] - m1 * m2;
            let mut g = sigma12 / (sigma1 + EPS);
            let mut sv = sigma2 - g * sigma12;
            if sigma1 < EPS {
                g = 0.0;
                sv = sigma2;
                sigma1 = 0.0;
            }
            if sigma2 < EPS {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = sigma2;
                g = 0.0;
            }
            sv = sv.max(EPS);
            num += (1.0 + g * g * sigma1 / (sv + VIF_NOISE_VARIANCE)).log10();
            den += (1.0 + sigma1 / VIF_NOISE_VARIANCE).log10();
        }
    }
    Ok(if den == 0.0 { 1.0 } else { num / den })
}

/// Mean of the per-source fidelities of `f` with respect to `a` and `b`.
pub fn vif_fusion(f: &GrayImage, a: &GrayImage, b: &GrayImage) -> Result<f64> {
    Ok((vif_single(a, f)? + vif_single(b, f)?) / 2.0)
}
