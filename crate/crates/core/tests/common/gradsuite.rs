//! Finite-difference checks of every block and of the total loss on a C=4,
//! 4×4 configuration. Each returns the names of inputs out of tolerance.

use super::checks::{build, tiny_block};
use super::{check_l1, check_with_params, failures, first_smooth_case, uniform};
use sfmfusion::autodiff::{Graph, Var};
use sfmfusion::blocks::{Ceb, Dfmb, Feb, Mmb, Sfmb, Sfmg};
use sfmfusion::losses::{total_loss, LossWeights};
use sfmfusion::params::{Bound, Builder, ParamStore};
use sfmfusion::Result;

/// Checks a single-input block over the first smooth seed.
fn check_block<T>(
    in_channels: usize,
    make: impl Fn(&mut Builder) -> T,
    forward: impl Fn(&T, &Graph, &Bound, &Var) -> Result<Var>,
) -> std::result::Result<(), String> {
    let mut stores = Vec::new();
    let (seed, report) = first_smooth_case(0, 20, |seed| {
        let (store, block) = build(seed, &make);
        let x = uniform(&[1, in_channels, 4, 4], -1.0, 1.0, seed + 1000);
        let report = check_l1(&x, &store, seed + 2000, |g, p, x| forward(&block, g, p, x));
        stores.push(store);
        report
    });
    let store = stores.pop().unwrap();
    let bad = failures(&report, &store);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(format!("seed {seed}: {bad:?}"))
    }
}

pub fn mmb() -> std::result::Result<(), String> {
    check_block(
        4,
        |b| Mmb::new(b, "mmb", &tiny_block()).unwrap(),
        |m, g, p, x| m.forward(g, p, x),
    )
}

pub fn ceb() -> std::result::Result<(), String> {
    check_block(
        4,
        |b| Ceb::new(b, "ceb", &tiny_block()).unwrap(),
        |m, g, p, x| m.forward(g, p, x),
    )
}

pub fn feb() -> std::result::Result<(), String> {
    check_block(
        4,
        |b| Feb::new(b, "feb", &tiny_block()).unwrap(),
        |m, g, p, x| m.forward(g, p, x),
    )
}

pub fn sfmb() -> std::result::Result<(), String> {
    check_block(
        4,
        |b| Sfmb::new(b, "sfmb", &tiny_block()).unwrap(),
        |m, g, p, x| m.forward(g, p, x),
    )
}

pub fn sfmg() -> std::result::Result<(), String> {
    check_block(
        4,
        |b| Sfmg::new(b, "sfmg", &tiny_block(), 2).unwrap(),
        |m, g, p, x| m.forward(g, p, x),
    )
}

pub fn dfmb() -> std::result::Result<(), String> {
    check_block(
        12,
        |b| Dfmb::new(b, "dfmb", &tiny_block()).unwrap(),
        |m, g, p, x| {
            let dv = g.slice_channels(x, 0, 4)?;
            let df = g.slice_channels(x, 4, 4)?;
            let di = g.slice_channels(x, 8, 4)?;
            m.forward(g, p, &dv, &df, &di)
        },
    )
}

/// The total loss with respect to the fused image and both reconstructions,
/// stacked as the three channels of one input.
pub fn total() -> std::result::Result<(), String> {
    let weights = LossWeights::default();
    let empty = ParamStore::new();
    let (seed, report) = first_smooth_case(0, 20, |seed| {
        let v = uniform(&[1, 1, 4, 4], 0.0, 1.0, seed + 3000);
        let i = uniform(&[1, 1, 4, 4], 0.0, 1.0, seed + 3001);
        let x = uniform(&[1, 3, 4, 4], 0.0, 1.0, seed + 3002);
        check_with_params(&x, &empty, |g, _, x| {
            let f = g.slice_channels(x, 0, 1)?;
            let vh = g.slice_channels(x, 1, 1)?;
            let ih = g.slice_channels(x, 2, 1)?;
            Ok(total_loss(g, &f, Some(&vh), Some(&ih), &v, &i, &weights)?.0)
        })
    });
    let bad = failures(&report, &empty);
    if bad.is_empty() {
        Ok(())
    } else {
        Err(format!("seed {seed}: {bad:?}"))
    }
}
