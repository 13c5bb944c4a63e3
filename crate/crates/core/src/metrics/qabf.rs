//! Edge-transfer quality `Q^AB/F`: how much Sobel edge strength and
//! orientation of each source survives in the fused image, weighted by the
//! source edge strength.

use std::f64::consts::FRAC_PI_2;

use crate::error::Result;
use crate::ops::sobel::responses;
use crate::tensor::Tensor;

use super::GrayImage;

/// Sigmoid parameters of the strength and orientation preservation scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QabfConstants {
    pub gamma_g: f64,
    pub kappa_g: f64,
    pub sigma_g: f64,
    pub gamma_a: f64,
    pub kappa_a: f64,
    pub sigma_a: f64,
}

impl Default for QabfConstants {
    fn default() -> Self {
        QabfConstants {
            gamma_g: 0.9994,
            kappa_g: -15.0,
            sigma_g: 0.5,
            gamma_a: 0.9879,
            kappa_a: -22.0,
            sigma_a: 0.8,
        }
    }
}

impl QabfConstants {
    /// Score of a pixel whose strength and orientation are transferred exactly.
    pub fn self_score(&self) -> f64 {
        self.strength_score(1.0) * self.orientation_score(1.0)
    }

    fn strength_score(&self, g: f64) -> f64 {
        self.gamma_g / (1.0 + (self.kappa_g * (g - self.sigma_g)).exp())
    }

    fn orientation_score(&self, a: f64) -> f64 {
        self.gamma_a / (1.0 + (self.kappa_a * (a - self.sigma_a)).exp())
    }
}

/// Edge strength and orientation in `(−π/2, π/2]` per pixel.
fn edges(img: &GrayImage) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = Tensor::new(&[1, 1, img.height(), img.width()], img.data().to_vec())?;
    let (gx, gy) = responses(&t)?;
    let strength = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
    let angle = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| if x == 0.0 { FRAC_PI_2 } else { (y / x).atan() })
        .collect();
    Ok((strength, angle))
}

/// Per-pixel preservation of one source's edges in the fused image.
fn preservation(
    c: &QabfConstants,
    src: &(Vec<f64>, Vec<f64>),
    fused: &(Vec<f64>, Vec<f64>),
) -> Vec<f64> {
    (0..src.0.len())
        .map(|k| {
            let (gs, gf) = (src.0[k], fused.0[k]);
            let g = if gs == gf {
                1.0
            } else {
                gs.min(gf) / gs.max(gf)
            };
            let a = 1.0 - (src.1[k] - fused.1[k]).abs() / FRAC_PI_2;
            c.strength_score(g) * c.orientation_score(a)
        })
        .collect()
}

/// Edge-strength-weighted preservation over both sources, with the default constants.
pub fn qabf(f: &GrayImage, a: &GrayImage, b: &GrayImage) -> Result<f64> {
    qabf_with(&QabfConstants::default(), f, a, b)
}

pub fn qabf_with(c: &QabfConstants, f: &GrayImage, a: &GrayImage, b: &GrayImage) -> Result<f64> {
    f.expect_same_size(a)?;
    f.expect_same_size(b)?;
    let (ef, ea, eb) = (edges(f)?, edges(a)?, edges(b)?);
    let (qa, qb) = (preservation(c, &ea, &ef), preservation(c, &eb, &ef));
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..qa.len() {
        num += qa[k] * ea.0[k] + qb[k] * eb.0[k];
        den += ea.0[k] + eb.0[k];
    }
    Ok(if den == 0.0 { 0.0 } else { num / den })
}
