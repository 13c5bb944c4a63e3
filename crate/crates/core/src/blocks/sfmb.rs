use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::layers::Norm;
use crate::params::{Bound, Builder};

use super::{BlockConfig, Ceb, Feb, Mmb};

/// `X̄ = LN(X)`, `out = MMB(X̄) + CEB(X̄) + FEB(X̄)`. CEB and FEB can be
/// switched off through [`BlockConfig`].
#[derive(Debug, Clone)]
pub struct Sfmb {
    pub norm: Norm,
    pub mmb: Mmb,
    pub ceb: Option<Ceb>,
    pub feb: Option<Feb>,
}

impl Sfmb {
    pub fn new(b: &mut Builder, name: &str, cfg: &BlockConfig) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Sfmb {
            norm: Norm::new(&mut s, "norm", cfg.channels)?,
            mmb: Mmb::new(&mut s, "mmb", cfg)?,
            ceb: cfg
                .use_ceb
                .then(|| Ceb::new(&mut s, "ceb", cfg))
                .transpose()?,
            feb: cfg
                .use_feb
                .then(|| Feb::new(&mut s, "feb", cfg))
                .transpose()?,
        })
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Result<Var> {
        let xn = self.norm.forward(g, p, x)?;
        let mut out = self.mmb.forward(g, p, &xn)?;
        if let Some(ceb) = &self.ceb {
            out = g.add(&out, &ceb.forward(g, p, &xn)?)?;
        }
        if let Some(feb) = &self.feb {
            out = g.add(&out, &feb.forward(g, p, &xn)?)?;
        }
        Ok(out)
    }
}

/// Stacked blocks plus a group-level skip connection.
#[derive(Debug, Clone)]
pub struct Sfmg {
    pub blocks: Vec<Sfmb>,
}

impl Sfmg {
    pub fn new(b: &mut Builder, name: &str, cfg: &BlockConfig, blocks: usize) -> Result<Self> {
        if blocks == 0 {
            return Err(crate::error::Error::Config(
                "a group needs at least one block".into(),
            ));
        }
        let mut s = b.scope(name);
        Ok(Sfmg {
            blocks: (0..blocks)
                .map(|k| Sfmb::new(&mut s, &format!("block{k}"), cfg))
                .collect::<Result<_>>()?,
        })
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Result<Var> {
        let mut y = x.clone();
        for block in &self.blocks {
            y = block.forward(g, p, &y)?;
        }
        g.add(&y, x)
    }
}
