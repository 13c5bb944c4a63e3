use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::layers::{DwConv, Linear, Norm, Ss2d};
use crate::params::{Bound, Builder};

use super::{check_extent, BlockConfig};

/// Mixed-scale scan block.
///
/// ```text
/// M1 = SiLU(DW(Lin_in(M)))           Mk = SiLU(DW(Down(Mk-1)))
/// Mk' = LN(SS2D(Mk)) + Up(Mk+1')     (coarsest level has no Up term)
/// out = Lin_out(M1' ⊙ SiLU(Lin_gate(M))) + M
/// ```
#[derive(Debug, Clone)]
pub struct Mmb {
    pub lin_in: Linear,
    pub dw: Vec<DwConv>,
    pub ssm: Vec<Ss2d>,
    pub norm: Vec<Norm>,
    pub gate: Linear,
    pub lin_out: Linear,
}

impl Mmb {
    pub fn new(b: &mut Builder, name: &str, cfg: &BlockConfig) -> Result<Self> {
        cfg.validate()?;
        let mut s = b.scope(name);
        let (c, e) = (cfg.channels, cfg.expanded());
        let lin_in = Linear::new(&mut s, "lin_in", c, e)?;
        let mut dw = Vec::new();
        let mut ssm = Vec::new();
        let mut norm = Vec::new();
        for k in 0..cfg.scales {
            dw.push(DwConv::new(&mut s, &format!("dw{k}"), e)?);
            ssm.push(Ss2d::new(&mut s, &format!("ssm{k}"), e, cfg.nstate)?);
            norm.push(Norm::new(&mut s, &format!("norm{k}"), e)?);
        }
        Ok(Mmb {
            lin_in,
            dw,
            ssm,
            norm,
            gate: Linear::new(&mut s, "gate", c, e)?,
            lin_out: Linear::new(&mut s, "lin_out", e, c)?,
        })
    }

    pub fn scales(&self) -> usize {
        self.dw.len()
    }

    pub fn forward(&self, g: &Graph, p: &Bound, m: &Var) -> Result<Var> {
        check_extent(m.shape(), 1 << (self.scales() - 1))?;
        let mut levels = Vec::with_capacity(self.scales());
        let first = self.lin_in.forward(g, p, m)?;
        levels.push(g.silu(&self.dw[0].forward(g, p, &first)?)?);
        for k in 1..self.scales() {
            let down = g.downsample2x(&levels[k - 1])?;
            levels.push(g.silu(&self.dw[k].forward(g, p, &down)?)?);
        }
        let mut refined: Option<Var> = None;
        for k in (0..self.scales()).rev() {
            let scanned = self.ssm[k].forward(g, p, &levels[k])?;
            let mut r = self.norm[k].forward(g, p, &scanned)?;
            if let Some(coarse) = refined {
                r = g.add(&r, &g.upsample2x(&coarse)?)?;
            }
            refined = Some(r);
        }
        let refined = refined.expect("at least one scale");
        let gate = g.silu(&self.gate.forward(g, p, m)?)?;
        let mixed = self.lin_out.forward(g, p, &g.mul(&refined, &gate)?)?;
        g.add(&mixed, m)
    }
}
