//! Three-branch fusion network: visible and infrared reconstruction branches
//! whose stage features feed the fusion branch through gated fusion blocks.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::blocks::{check_extent, BlockConfig, Dfmb, Sfmg};
use crate::config::{value, Section};
use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::params::{Bound, Builder, ParamStore};
use crate::tensor::Tensor;

/// Input extents must be divisible by this.
pub const SPATIAL_MULTIPLE: usize = 4;

/// How each fusion stage merges the reconstruction features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// Gated fusion block.
    Dfmb,
    /// `F + Dv + Di`.
    Add,
    /// 1×1 convolution over `[Dv, F, Di]`.
    Concat,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Dfmb => "dfmb",
            FusionMode::Add => "add",
            FusionMode::Concat => "concat",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dfmb" => Ok(FusionMode::Dfmb),
            "add" => Ok(FusionMode::Add),
            "concat" => Ok(FusionMode::Concat),
            _ => Err(Error::Config(format!("unknown fusion mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// Number of groups per branch.
    pub groups: usize,
    pub blocks_per_group: usize,
    pub block: BlockConfig,
    pub fusion: FusionMode,
    /// Build the two reconstruction branches. Without them every fusion stage
    /// is a plain group and only the fused image is produced.
    pub reconstruction: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            groups: 3,
            blocks_per_group: 2,
            block: BlockConfig::default(),
            fusion: FusionMode::Dfmb,
            reconstruction: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        if self.groups == 0 || self.blocks_per_group == 0 {
            return Err(Error::Config(
                "groups and blocks_per_group must be positive".into(),
            ));
        }
        Ok(())
    }
}

impl Section for ModelConfig {
    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("groups", self.groups.to_string()),
            ("blocks_per_group", self.blocks_per_group.to_string()),
            ("channels", self.block.channels.to_string()),
            ("expansion", self.block.expansion.to_string()),
            ("scales", self.block.scales.to_string()),
            ("nstate", self.block.nstate.to_string()),
            ("use_ceb", self.block.use_ceb.to_string()),
            ("use_feb", self.block.use_feb.to_string()),
            ("fusion", self.fusion.to_string()),
            ("reconstruction", self.reconstruction.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "groups" => self.groups = value(key, v)?,
            "blocks_per_group" => self.blocks_per_group = value(key, v)?,
            "channels" => self.block.channels = value(key, v)?,
            "expansion" => self.block.expansion = value(key, v)?,
            "scales" => self.block.scales = value(key, v)?,
            "nstate" => self.block.nstate = value(key, v)?,
            "use_ceb" => self.block.use_ceb = value(key, v)?,
            "use_feb" => self.block.use_feb = value(key, v)?,
            "fusion" => self.fusion = v.parse()?,
            "reconstruction" => self.reconstruction = value(key, v)?,
            "seed" => self.seed = value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Which reconstruction branch to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Visible,
    Infrared,
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "visible" => Ok(Branch::Visible),
            "infrared" => Ok(Branch::Infrared),
            _ => Err(Error::Usage(format!(
                "unknown branch {s:?}, expected visible or infrared"
            ))),
        }
    }
}

/// Two 3×3 convolutions with SiLU between.
#[derive(Debug, Clone)]
struct ConvPair {
    first: Conv,
    second: Conv,
}

impl ConvPair {
    fn new(b: &mut Builder, name: &str, cin: usize, mid: usize, cout: usize) -> Result<Self> {
        let mut s = b.scope(name);
        Ok(ConvPair {
            first: Conv::new(&mut s, "conv0", cin, mid, 3)?,
            second: Conv::new(&mut s, "conv1", mid, cout, 3)?,
        })
    }

    fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Result<Var> {
        let h = g.silu(&self.first.forward(g, p, x)?)?;
        self.second.forward(g, p, &h)
    }
}

/// Reconstruction branch: `X̂ = head(G_m(…G_1(X0)) + X0) + X`, `X0 = stem(X)`.
#[derive(Debug, Clone)]
pub struct ReconBranch {
    stem: ConvPair,
    groups: Vec<Sfmg>,
    head: ConvPair,
}

/// Reconstructed image and the output of every group.
pub struct ReconOutput {
    pub image: Var,
    pub stages: Vec<Var>,
}

impl ReconBranch {
    fn new(b: &mut Builder, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let mut s = b.scope(name);
        let c = cfg.block.channels;
        Ok(ReconBranch {
            stem: ConvPair::new(&mut s, "stem", 1, c, c)?,
            groups: (0..cfg.groups)
                .map(|k| {
                    Sfmg::new(
                        &mut s,
                        &format!("group{k}"),
                        &cfg.block,
                        cfg.blocks_per_group,
                    )
                })
                .collect::<Result<_>>()?,
            head: ConvPair::new(&mut s, "head", c, c, 1)?,
        })
    }

    pub fn forward(&self, g: &Graph, p: &Bound, x: &Var) -> Result<ReconOutput> {
        let x0 = self.stem.forward(g, p, x)?;
        let mut stages = Vec::with_capacity(self.groups.len());
        let mut h = x0.clone();
        for group in &self.groups {
            h = group.forward(g, p, &h)?;
            stages.push(h.clone());
        }
        let residual = self.head.forward(g, p, &g.add(&h, &x0)?)?;
        Ok(ReconOutput {
            image: g.add(&residual, x)?,
            stages,
        })
    }
}

#[derive(Debug, Clone)]
enum Merge {
    None,
    Dfmb(Box<Dfmb>),
    Add,
    Concat(Conv),
}

/// Fusion branch: per-modality stems, concatenation and 1×1 reduction, then
/// `F_k = merge_k(Dv_k, G_k(F_{k-1}), Di_k)` and `F = head(F_m + F0)`.
#[derive(Debug, Clone)]
pub struct FusionBranch {
    stem_v: Conv,
    stem_i: Conv,
    reduce: Conv,
    groups: Vec<Sfmg>,
    merges: Vec<Merge>,
    head: ConvPair,
}

impl FusionBranch {
    fn new(b: &mut Builder, name: &str, cfg: &ModelConfig) -> Result<Self> {
        let mut s = b.scope(name);
        let c = cfg.block.channels;
        let stem_v = Conv::new(&mut s, "stem_v", 1, c, 3)?;
        let stem_i = Conv::new(&mut s, "stem_i", 1, c, 3)?;
        let reduce = Conv::new(&mut s, "reduce", 2 * c, c, 1)?;
        let mut groups = Vec::with_capacity(cfg.groups);
        let mut merges = Vec::with_capacity(cfg.groups);
        for k in 0..cfg.groups {
            groups.push(Sfmg::new(
                &mut s,
                &format!("group{k}"),
                &cfg.block,
                cfg.blocks_per_group,
            )?);
            merges.push(match (cfg.reconstruction, cfg.fusion) {
                (false, _) => Merge::None,
                (true, FusionMode::Dfmb) => Merge::Dfmb(Box::new(Dfmb::new(
                    &mut s,
                    &format!("dfmb{k}"),
                    &cfg.block,
                )?)),
                (true, FusionMode::Add) => Merge::Add,
                (true, FusionMode::Concat) => {
                    Merge::Concat(Conv::new(&mut s, &format!("merge{k}"), 3 * c, c, 1)?)
                }
            });
        }
        Ok(FusionBranch {
            stem_v,
            stem_i,
            reduce,
            groups,
            merges,
            head: ConvPair::new(&mut s, "head", c, c, 1)?,
        })
    }

    fn forward(
        &self,
        g: &Graph,
        p: &Bound,
        v: &Var,
        i: &Var,
        taps: Option<(&[Var], &[Var])>,
    ) -> Result<Var> {
        let fv = g.silu(&self.stem_v.forward(g, p, v)?)?;
        let fi = g.silu(&self.stem_i.forward(g, p, i)?)?;
        let f0 = self
            .reduce
            .forward(g, p, &g.concat_channels(&[&fv, &fi])?)?;
        let mut f = f0.clone();
        for (k, (group, merge)) in self.groups.iter().zip(&self.merges).enumerate() {
            let df = group.forward(g, p, &f)?;
            f = match (merge, taps) {
                (Merge::None, _) => df,
                (merge, Some((dv, di))) => {
                    let (dv, di) = (&dv[k], &di[k]);
                    match merge {
                        Merge::Dfmb(block) => block.forward(g, p, dv, &df, di)?,
                        Merge::Add => g.add(&g.add(&df, dv)?, di)?,
                        Merge::Concat(conv) => {
                            conv.forward(g, p, &g.concat_channels(&[dv, &df, di])?)?
                        }
                        Merge::None => unreachable!(),
                    }
                }
                (_, None) => {
                    return Err(Error::Usage(
                        "fusion stages need reconstruction features".into(),
                    ))
                }
            };
        }
        self.head.forward(g, p, &g.add(&f, &f0)?)
    }
}

/// Network outputs for one forward pass.
pub struct ModelOutput {
    pub fused: Var,
    pub visible: Option<Var>,
    pub infrared: Option<Var>,
}

/// The complete network with its parameters.
#[derive(Debug, Clone)]
pub struct FusionModel {
    config: ModelConfig,
    params: ParamStore,
    visible: Option<ReconBranch>,
    infrared: Option<ReconBranch>,
    fusion: FusionBranch,
}

impl FusionModel {
    /// Builds the network and draws its parameters from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut b = Builder::new(&mut params, &mut rng);
        let (visible, infrared) = if config.reconstruction {
            (
                Some(ReconBranch::new(&mut b, "visible", &config)?),
                Some(ReconBranch::new(&mut b, "infrared", &config)?),
            )
        } else {
            (None, None)
        };
        let fusion = FusionBranch::new(&mut b, "fusion", &config)?;
        Ok(FusionModel {
            config,
            params,
            visible,
            infrared,
            fusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Checks that `x` is `[N,1,H,W]` with extents divisible by [`SPATIAL_MULTIPLE`].
    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, _, _) = x.dims4()?;
        if c != 1 {
            return Err(Error::dim(format!(
                "expected single-channel input, got {c} channels"
            )));
        }
        check_extent(
            x.shape(),
            SPATIAL_MULTIPLE.max(self.config.block.spatial_multiple()),
        )
    }

    /// Runs every branch with parameters bound in `g`.
    pub fn forward(&self, g: &Graph, p: &Bound, v: &Var, i: &Var) -> Result<ModelOutput> {
        self.check_input(v.value())?;
        self.check_input(i.value())?;
        v.value().expect_same_shape(i.value())?;
        match (&self.visible, &self.infrared) {
            (Some(vb), Some(ib)) => {
                let rv = vb.forward(g, p, v)?;
                let ri = ib.forward(g, p, i)?;
                let fused = self
                    .fusion
                    .forward(g, p, v, i, Some((&rv.stages, &ri.stages)))?;
                Ok(ModelOutput {
                    fused,
                    visible: Some(rv.image),
                    infrared: Some(ri.image),
                })
            }
            _ => Ok(ModelOutput {
                fused: self.fusion.forward(g, p, v, i, None)?,
                visible: None,
                infrared: None,
            }),
        }
    }

    /// Fused image and both reconstructions, without recording gradients.
    pub fn forward_all(
        &self,
        v: &Tensor,
        i: &Tensor,
    ) -> Result<(Tensor, Option<Tensor>, Option<Tensor>)> {
        let g = Graph::inference();
        let p = self.params.bind(&g);
        let out = self.forward(&g, &p, &g.constant(v.clone()), &g.constant(i.clone()))?;
        Ok((
            out.fused.into_tensor(),
            out.visible.map(Var::into_tensor),
            out.infrared.map(Var::into_tensor),
        ))
    }

    pub fn fuse_only(&self, v: &Tensor, i: &Tensor) -> Result<Tensor> {
        Ok(self.forward_all(v, i)?.0)
    }

    /// Runs one reconstruction branch on its own.
    pub fn reconstruct(&self, branch: Branch, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let net = match branch {
            Branch::Visible => self.visible.as_ref(),
            Branch::Infrared => self.infrared.as_ref(),
        }
        .ok_or_else(|| Error::Usage("model was built without reconstruction branches".into()))?;
        let g = Graph::inference();
        let p = self.params.bind(&g);
        Ok(net
            .forward(&g, &p, &g.constant(x.clone()))?
            .image
            .into_tensor())
    }
}
