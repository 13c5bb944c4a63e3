//! Parameterized layers built from registry handles.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::ops::norm::LAYER_NORM_EPS;
use crate::params::{Bound, Builder, ParamId};
use crate::ssm::SsmParams;

/// Square convolution with stride 1 and size-preserving padding.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub pad: usize,
}

impl Conv {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize, k: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let fan_in = cin * k * k;
        Ok(Conv {
            w: s.uniform("weight", &[cout, cin, k, k], fan_in)?,
            b: s.uniform("bias", &[cout], fan_in)?,
            pad: k / 2,
        })
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Result<Var> {
        g.conv2d(x, &p[self.w], Some(&p[self.b]), 1, self.pad)
    }
}

/// Per-position affine map over channels.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(b: &mut Builder, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Linear {
            w: s.uniform("weight", &[cout, cin], cin)?,
            b: s.uniform("bias", &[cout], cin)?,
        })
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Result<Var> {
        g.channel_linear(x, &p[self.w], Some(&p[self.b]))
    }
}

/// 3×3 depthwise convolution.
#[derive(Debug, Clone)]
pub struct DwConv {
    pub w: ParamId,
    pub b: ParamId,
}

impl DwConv {
    pub fn new(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(DwConv {
            w: s.uniform("weight", &[channels, 1, 3, 3], 9)?,
            b: s.uniform("bias", &[channels], 9)?,
        })
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Result<Var> {
        g.depthwise_conv2d(x, &p[self.w], Some(&p[self.b]))
    }
}

/// Channel layer normalization with learned scale and shift.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(b: &mut Builder, name: &str, channels: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(Norm {
            gamma: s.constant("gamma", &[channels], 1.0)?,
            beta: s.constant("beta", &[channels], 0.0)?,
        })
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Result<Var> {
        g.layer_norm(x, &p[self.gamma], &p[self.beta], LAYER_NORM_EPS)
    }
}

/// Four-direction selective scan with one parameter set per direction.
#[derive(Debug, Clone)]
pub struct Ss2d {
    pub dirs: [SsmParams<ParamId>; 4],
}

impl Ss2d {
    pub const DIRECTION_NAMES: [&'static str; 4] = ["lr", "rl", "td", "bu"];

    pub fn new(b: &mut Builder, name: &str, channels: usize, nstate: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let mut make = |dir: &str| -> Result<SsmParams<ParamId>> {
            let init = SsmParams::init(channels, nstate, s.rng());
            let mut d = s.scope(dir);
            Ok(SsmParams {
                a_log: d.tensor("a_log", init.a_log)?,
                w_b: d.tensor("w_b", init.w_b)?,
                w_c: d.tensor("w_c", init.w_c)?,
                w_dt: d.tensor("w_dt", init.w_dt)?,
                dt_bias: d.tensor("dt_bias", init.dt_bias)?,
            })
        };
        Ok(Ss2d {
            dirs: [
                make(Self::DIRECTION_NAMES[0])?,
                make(Self::DIRECTION_NAMES[1])?,
                make(Self::DIRECTION_NAMES[2])?,
                make(Self::DIRECTION_NAMES[3])?,
            ],
        })
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Result<Var> {
        let bind = |d: &SsmParams<ParamId>| d.map(|&id| p[id].clone());
        let vars = [
            bind(&self.dirs[0]),
            bind(&self.dirs[1]),
            bind(&self.dirs[2]),
            bind(&self.dirs[3]),
        ];
        g.ss2d(x, &vars)
    }
}
