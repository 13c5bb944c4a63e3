#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfmfusion::gradcheck::{self, GradReport};
use sfmfusion::params::{Bound, ParamStore};
use sfmfusion::{Graph, Result, Tensor, Var};

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi))
}

/// Mean absolute difference to a fixed target: a scalar with a generic
/// gradient pattern.
pub fn l1_to(g: &Graph, y: &Var, target: &Tensor) -> Result<Var> {
    let diff = g.sub(y, &Var::constant(target.clone()))?;
    g.mean(&g.abs(&diff)?)
}

/// Finite-difference check of `f(x, params)` with respect to `x` and every
/// parameter in `store`. Returns the report with `x` first.
pub fn check_with_params<F>(x: &Tensor, store: &ParamStore, f: F) -> GradReport
where
    F: Fn(&Graph, &Bound, &Var) -> Result<Var>,
{
    let mut inputs = vec![x.clone()];
    inputs.extend(store.iter().map(|(_, t)| t.clone()));
    gradcheck::check(&inputs, FD_STEP, |g, vars| {
        let p = Bound::from_vars(vars[1..].to_vec());
        f(g, &p, &vars[0])
    })
    .expect("gradient check runs")
}

/// A target at distance 0.5 to 1 from every element of `y`, with random
/// sign, so an L1 loss against it stays differentiable under small
/// perturbations.
pub fn offset_target(y: &Tensor, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(y.shape(), |i| {
        let d: f64 = r.gen_range(0.5..1.0);
        if r.gen_bool(0.5) {
            y.data()[i] + d
        } else {
            y.data()[i] - d
        }
    })
}

/// Finite-difference check of an L1 loss between `f(x, params)` and an
/// offset target.
pub fn check_l1<F>(x: &Tensor, store: &ParamStore, seed: u64, f: F) -> GradReport
where
    F: Fn(&Graph, &Bound, &Var) -> Result<Var>,
{
    let g = Graph::inference();
    let y0 = f(&g, &store.bind(&g), &Var::constant(x.clone())).expect("forward runs");
    let target = offset_target(y0.value(), seed);
    check_with_params(x, store, |g, p, x| l1_to(g, &f(g, p, x)?, &target))
}

/// Stencil spread below which the numeric gradient is a valid reference.
pub const SMOOTH_TOL: f64 = 1e-5;

/// Runs `case(seed)` for consecutive seeds from `first` until one yields a
/// stencil that does not straddle a kink. The acceptance decision is made
/// only on the smoothness of the numeric side, never on agreement.
pub fn first_smooth_case(
    first: u64,
    attempts: u64,
    mut case: impl FnMut(u64) -> GradReport,
) -> (u64, GradReport) {
    for seed in first..first + attempts {
        let report = case(seed);
        if report.is_smooth(SMOOTH_TOL) {
            return (seed, report);
        }
    }
    panic!("no smooth evaluation point among {attempts} seeds from {first}");
}

/// Names of inputs whose relative error exceeds the tolerance.
pub fn failures(report: &GradReport, store: &ParamStore) -> Vec<String> {
    let mut names = vec!["<input>".to_string()];
    names.extend(store.iter().map(|(n, _)| n.to_string()));
    report
        .relative_errors
        .iter()
        .zip(names)
        .filter(|(e, _)| **e > FD_TOL)
        .map(|(e, n)| format!("{n}: {e:.3e}"))
        .collect()
}
pub mod checks;
pub mod gradsuite;
pub mod oracles;
