//! Central finite-difference verification of reverse-mode gradients.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Per-input comparison of analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, zero when both vanish.
    pub relative_errors: Vec<f64>,
    pub analytic_norms: Vec<f64>,
    /// Difference between central differences at `h` and `h/2`, relative to
    /// `max(‖numeric‖, 1e-3 · largest numeric norm over all inputs)`. Large
    /// values mean the stencil straddles a kink (ReLU, |·|, max) and the
    /// numeric gradient is not a valid reference at this point.
    pub stencil_spread: Vec<f64>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }

    /// True when every numeric gradient is stable under halving the step.
    pub fn is_smooth(&self, tol: f64) -> bool {
        self.stencil_spread.iter().all(|&s| s <= tol)
    }
}

pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares the gradient of the scalar `f(inputs)` with central differences
/// of step `h` for every element of every input. Each element is also
/// differenced at `h/2` to expose kinks inside the stencil.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(&loss)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let g = Graph::inference();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        Ok(f(&g, &vars)?.value().data()[0])
    };

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut analytic_norms = Vec::with_capacity(inputs.len());
    let mut stencil_spread = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let mut numeric = Tensor::zeros(inputs[i].shape());
        let mut half = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            for (step, out) in [(h, &mut numeric), (h / 2.0, &mut half)] {
                probe[i].data_mut()[j] = x0 + step;
                let up = eval(&probe)?;
                probe[i].data_mut()[j] = x0 - step;
                let down = eval(&probe)?;
                out.data_mut()[j] = (up - down) / (2.0 * step);
            }
            probe[i].data_mut()[j] = x0;
        }
        relative_errors.push(relative_error(&analytic, &numeric));
        analytic_norms.push(analytic.norm());
        let diff: f64 = numeric
            .data()
            .iter()
            .zip(half.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        stencil_spread.push((diff, numeric.norm()));
    }
    let largest = stencil_spread.iter().map(|s| s.1).fold(0.0, f64::max);
    let stencil_spread = stencil_spread
        .into_iter()
        .map(|(diff, norm)| {
            let scale = norm.max(1e-3 * largest);
            if scale == 0.0 {
                0.0
            } else {
                diff / scale
            }
        })
        .collect();
    Ok(GradReport {
        relative_errors,
        analytic_norms,
        stencil_spread,
    })
}
