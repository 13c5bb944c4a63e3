use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::params::{Bound, Builder};

use super::BlockConfig;

/// Split-channel squeeze-excitation with an average-pooled and a max-pooled
/// stream, interleaved by a two-group channel shuffle.
///
/// ```text
/// Sc = Conv3(S),  Sa | Sm = halves of Sc
/// Sa' = Sa ⊙ σ(Conv1(ReLU(Conv1(GAP(Sa)))))
/// Sm' = Sm ⊙ σ(Conv1(ReLU(Conv1(GMP(Sm)))))
/// out = Shuffle(Sa' | Sm') + S
/// ```
#[derive(Debug, Clone)]
pub struct Ceb {
    pub conv: Conv,
    pub avg: [Conv; 2],
    pub max: [Conv; 2],
}

impl Ceb {
    pub fn new(b: &mut Builder, name: &str, cfg: &BlockConfig) -> Result<Self> {
        if cfg.channels % 2 != 0 {
            return Err(Error::Config(format!(
                "channel enhancement needs an even channel count, got {}",
                cfg.channels
            )));
        }
        let mut s = b.scope(name);
        let half = cfg.channels / 2;
        let hidden = (half / 2).max(1);
        Ok(Ceb {
            conv: Conv::new(&mut s, "conv", cfg.channels, cfg.channels, 3)?,
            avg: [
                Conv::new(&mut s, "avg0", half, hidden, 1)?,
                Conv::new(&mut s, "avg1", hidden, half, 1)?,
            ],
            max: [
                Conv::new(&mut s, "max0", half, hidden, 1)?,
                Conv::new(&mut s, "max1", hidden, half, 1)?,
            ],
        })
    }

    fn excite(g: &Graph, p: &Bound, convs: &[Conv; 2], pooled: &Var) -> Result<Var> {
        let hidden = g.relu(&convs[0].forward(g, p, pooled)?)?;
        g.sigmoid(&convs[1].forward(g, p, &hidden)?)
    }

    pub fn forward(&self, g: &Graph, p: &Bound, s: &Var) -> Result<Var> {
        let sc = self.conv.forward(g, p, s)?;
        let half = sc.shape()[1] / 2;
        let sa = g.slice_channels(&sc, 0, half)?;
        let sm = g.slice_channels(&sc, half, half)?;
        let ga = Self::excite(g, p, &self.avg, &g.gap(&sa)?)?;
        let gm = Self::excite(g, p, &self.max, &g.gmp(&sm)?)?;
        let sa = g.mul_channel(&sa, &ga)?;
        let sm = g.mul_channel(&sm, &gm)?;
        let shuffled = g.channel_shuffle(&g.concat_channels(&[&sa, &sm])?, 2)?;
        g.add(&shuffled, s)
    }
}
