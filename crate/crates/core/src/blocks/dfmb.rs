use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::layers::{DwConv, Linear, Norm, Ss2d};
use crate::params::{Bound, Builder, ParamId};

use super::BlockConfig;

/// One modality stream: `LN(SS2D(SiLU(DW(Lin(x)))))`.
#[derive(Debug, Clone)]
pub struct DfmbStream {
    pub lin: Linear,
    pub dw: DwConv,
    pub ssm: Ss2d,
    pub norm: Norm,
}

impl DfmbStream {
    fn new(b: &mut Builder, name: &str, cfg: &BlockConfig) -> Result<Self> {
        let mut s = b.scope(name);
        let c = cfg.channels;
        Ok(DfmbStream {
            lin: Linear::new(&mut s, "lin", c, c)?,
            dw: DwConv::new(&mut s, "dw", c)?,
            ssm: Ss2d::new(&mut s, "ssm", c, cfg.nstate)?,
            norm: Norm::new(&mut s, "norm", c)?,
        })
    }

    fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Result<Var> {
        let h = g.silu(&self.dw.forward(g, p, &self.lin.forward(g, p, x)?)?)?;
        self.norm.forward(g, p, &self.ssm.forward(g, p, &h)?)
    }
}

/// Gated fusion of the visible, fusion and infrared streams.
///
/// ```text
/// Dv', Di' = stream_v(LN(Dv)), stream_i(LN(Di))
/// W   = σ(DW(Lin(LN(Di) + LN(Df) + LN(Dv))))
/// out = Lin(Dv' ⊙ W + Di' ⊙ (1 − W)) + s1·Dv + s2·Di
/// ```
#[derive(Debug, Clone)]
pub struct Dfmb {
    pub norm_v: Norm,
    pub norm_f: Norm,
    pub norm_i: Norm,
    pub stream_v: DfmbStream,
    pub stream_i: DfmbStream,
    pub gate_lin: Linear,
    pub gate_dw: DwConv,
    pub lin_out: Linear,
    pub s1: ParamId,
    pub s2: ParamId,
}

impl Dfmb {
    pub fn new(b: &mut Builder, name: &str, cfg: &BlockConfig) -> Result<Self> {
        let mut s = b.scope(name);
        let c = cfg.channels;
        Ok(Dfmb {
            norm_v: Norm::new(&mut s, "norm_v", c)?,
            norm_f: Norm::new(&mut s, "norm_f", c)?,
            norm_i: Norm::new(&mut s, "norm_i", c)?,
            stream_v: DfmbStream::new(&mut s, "stream_v", cfg)?,
            stream_i: DfmbStream::new(&mut s, "stream_i", cfg)?,
            gate_lin: Linear::new(&mut s, "gate_lin", c, c)?,
            gate_dw: DwConv::new(&mut s, "gate_dw", c)?,
            lin_out: Linear::new(&mut s, "lin_out", c, c)?,
            s1: s.constant("s1", &[1], 1.0)?,
            s2: s.constant("s2", &[1], 1.0)?,
        })
    }

    /// Returns the block output and the gate `W`.
    pub fn forward_with_gate(
        &self,
        g: &Graph,
        p: &Bound,
        dv: &Var,
        df: &Var,
        di: &Var,
    ) -> Result<(Var, Var)> {
        dv.value().expect_same_shape(df.value())?;
        dv.value().expect_same_shape(di.value())?;
        let nv = self.norm_v.forward(g, p, dv)?;
        let nf = self.norm_f.forward(g, p, df)?;
        let ni = self.norm_i.forward(g, p, di)?;
        let v = self.stream_v.forward(g, p, &nv)?;
        let i = self.stream_i.forward(g, p, &ni)?;
        let sum = g.add(&g.add(&ni, &nf)?, &nv)?;
        let w = g.sigmoid(
            &self
                .gate_dw
                .forward(g, p, &self.gate_lin.forward(g, p, &sum)?)?,
        )?;
        let blend = g.add(&g.mul(&v, &w)?, &g.mul(&i, &g.affine(&w, -1.0, 1.0)?)?)?;
        let fused = self.lin_out.forward(g, p, &blend)?;
        let skips = g.add(
            &g.mul_scalar(dv, &p[self.s1])?,
            &g.mul_scalar(di, &p[self.s2])?,
        )?;
        Ok((g.add(&fused, &skips)?, w))
    }

    pub fn forward(&self, g: &Graph, p: &Bound, dv: &Var, df: &Var, di: &Var) -> Result<Var> {
        Ok(self.forward_with_gate(g, p, dv, df, di)?.0)
    }
}
