//! Intensity and Sobel-gradient L1 losses for the fused image and both
//! reconstructions.

use crate::autodiff::{Graph, Var};
use crate::config::{value, Section};
use crate::error::{Error, Result};
use crate::ops::sobel::sobel_magnitude;
use crate::tensor::Tensor;

/// `total = L_f + α1·L_v + α2·L_i`, `L_f = int + α3·grad`, `L_v = int + α4·grad`
/// (likewise `L_i`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 0.5,
            alpha2: 0.5,
            alpha3: 1.0,
            alpha4: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha1, self.alpha2, self.alpha3, self.alpha4];
        if all.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and nonnegative, got {all:?}"
            )));
        }
        Ok(())
    }
}

impl Section for LossWeights {
    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("alpha1", self.alpha1.to_string()),
            ("alpha2", self.alpha2.to_string()),
            ("alpha3", self.alpha3.to_string()),
            ("alpha4", self.alpha4.to_string()),
        ]
    }

    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "alpha1" => self.alpha1 = value(key, v)?,
            "alpha2" => self.alpha2 = value(key, v)?,
            "alpha3" => self.alpha3 = value(key, v)?,
            "alpha4" => self.alpha4 = value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Scalar values of every loss term. Reconstruction terms are zero when the
/// model has no reconstruction branches.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub l_total: f64,
    pub l_f: f64,
    pub l_f_int: f64,
    pub l_f_grad: f64,
    pub l_v: f64,
    pub l_v_int: f64,
    pub l_v_grad: f64,
    pub l_i: f64,
    pub l_i_int: f64,
    pub l_i_grad: f64,
}

/// A weighted pair of intensity and gradient terms.
pub struct Term {
    pub loss: Var,
    pub int: Var,
    pub grad: Var,
}

fn scalar(v: &Var) -> f64 {
    v.value().data()[0]
}

/// Mean absolute difference between `x` and a fixed target.
fn l1_to(g: &Graph, x: &Var, target: Tensor) -> Result<Var> {
    let t = g.constant(target);
    g.mean(&g.abs(&g.sub(x, &t)?)?)
}

fn check_single_channel(x: &Tensor) -> Result<()> {
    let (_, c, _, _) = x.dims4()?;
    if c != 1 {
        return Err(Error::dim(format!(
            "loss expects single-channel images, got {c} channels"
        )));
    }
    Ok(())
}

/// Intensity target `max(I, V)` and gradient target `max(∇I, ∇V)`.
pub fn fusion_targets(v: &Tensor, i: &Tensor) -> Result<(Tensor, Tensor)> {
    v.expect_same_shape(i)?;
    check_single_channel(v)?;
    let int = v.zip_map(i, f64::max)?;
    let grad = sobel_magnitude(v)?.zip_map(&sobel_magnitude(i)?, f64::max)?;
    Ok((int, grad))
}

pub fn fusion_loss(g: &Graph, f: &Var, v: &Tensor, i: &Tensor, w: &LossWeights) -> Result<Term> {
    f.value().expect_same_shape(v)?;
    let (t_int, t_grad) = fusion_targets(v, i)?;
    let int = l1_to(g, f, t_int)?;
    let grad = l1_to(g, &g.sobel_magnitude(f)?, t_grad)?;
    let loss = g.add(&int, &g.scale(&grad, w.alpha3)?)?;
    Ok(Term { loss, int, grad })
}

pub fn recon_loss(g: &Graph, xhat: &Var, x: &Tensor, alpha4: f64) -> Result<Term> {
    xhat.value().expect_same_shape(x)?;
    check_single_channel(x)?;
    let int = l1_to(g, xhat, x.clone())?;
    let grad = l1_to(g, &g.sobel_magnitude(xhat)?, sobel_magnitude(x)?)?;
    let loss = g.add(&int, &g.scale(&grad, alpha4)?)?;
    Ok(Term { loss, int, grad })
}

/// Differentiable total loss and its decomposition. Pass `None` for both
/// reconstructions when the model has no reconstruction branches.
pub fn total_loss(
    g: &Graph,
    f: &Var,
    vhat: Option<&Var>,
    ihat: Option<&Var>,
    v: &Tensor,
    i: &Tensor,
    w: &LossWeights,
) -> Result<(Var, LossReport)> {
    w.validate()?;
    let fl = fusion_loss(g, f, v, i, w)?;
    let mut total = fl.loss.clone();
    let mut report = LossReport {
        l_f: scalar(&fl.loss),
        l_f_int: scalar(&fl.int),
        l_f_grad: scalar(&fl.grad),
        ..LossReport::default()
    };
    match (vhat, ihat) {
        (Some(vhat), Some(ihat)) => {
            let vl = recon_loss(g, vhat, v, w.alpha4)?;
            let il = recon_loss(g, ihat, i, w.alpha4)?;
            total = g.add(&total, &g.scale(&vl.loss, w.alpha1)?)?;
            total = g.add(&total, &g.scale(&il.loss, w.alpha2)?)?;
            report.l_v = scalar(&vl.loss);
            report.l_v_int = scalar(&vl.int);
            report.l_v_grad = scalar(&vl.grad);
            report.l_i = scalar(&il.loss);
            report.l_i_int = scalar(&il.int);
            report.l_i_grad = scalar(&il.grad);
        }
        (None, None) => {}
        _ => {
            return Err(Error::Usage(
                "both reconstructions or neither must be given".into(),
            ))
        }
    }
    report.l_total = scalar(&total);
    Ok((total, report))
}

/// Loss values for plain tensors, without recording gradients.
pub fn evaluate(
    f: &Tensor,
    vhat: Option<&Tensor>,
    ihat: Option<&Tensor>,
    v: &Tensor,
    i: &Tensor,
    w: &LossWeights,
) -> Result<LossReport> {
    let g = Graph::inference();
    let f = g.constant(f.clone());
    let vhat = vhat.map(|t| g.constant(t.clone()));
    let ihat = ihat.map(|t| g.constant(t.clone()));
    Ok(total_loss(&g, &f, vhat.as_ref(), ihat.as_ref(), v, i, w)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
        Tensor::from_fn(&[1, 1, h, w], |k| f(k / w, k % w))
    }

    #[test]
    fn unit_intensity_gap() {
        let zero = Tensor::zeros(&[1, 1, 2, 2]);
        let one = Tensor::ones(&[1, 1, 2, 2]);
        let g = Graph::inference();
        let term = fusion_loss(&g, &g.constant(zero), &one, &one, &LossWeights::default()).unwrap();
        assert_eq!(scalar(&term.int), 1.0);
        assert_eq!(scalar(&term.grad), 0.0);
    }

    #[test]
    fn constant_offset_only_costs_intensity() {
        let x = image(6, 5, |y, xx| ((y * 7 + xx * 3) % 5) as f64 / 5.0);
        let shifted = x.map(|v| v + 0.5);
        let g = Graph::inference();
        let term = recon_loss(&g, &g.constant(shifted), &x, 1.0).unwrap();
        assert!((scalar(&term.int) - 0.5).abs() < 1e-15);
        assert!(scalar(&term.grad).abs() < 1e-12);
    }

    #[test]
    fn perfect_outputs_cost_nothing() {
        let v = image(4, 4, |y, x| (y + x) as f64 / 8.0);
        let i = Tensor::full(&[1, 1, 4, 4], 0.25);
        let (target, _) = fusion_targets(&v, &i).unwrap();
        let r = evaluate(&target, Some(&v), Some(&i), &v, &i, &LossWeights::default()).unwrap();
        assert_eq!(r.l_f_int, 0.0);
        assert_eq!(r.l_v, 0.0);
        assert_eq!(r.l_i, 0.0);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let w = LossWeights {
            alpha2: -1.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
    }
}
