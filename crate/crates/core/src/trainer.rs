//! AdamW optimization with linear warmup and per-epoch exponential decay.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Graph;
use crate::config::{value, Section};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossReport, LossWeights};
use crate::model::FusionModel;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_iters: usize,
    pub warmup_start_lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Learning-rate factor applied once per completed epoch after warmup.
    pub decay: f64,
    /// Training images are resized to `size × size`.
    pub size: usize,
    /// Stop after this many iterations; 0 means no limit.
    pub max_iters: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
    /// Seed of the batch order.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-2,
            warmup_iters: 800,
            warmup_start_lr: 1e-5,
            epochs: 30,
            batch: 20,
            decay: 0.92,
            size: 128,
            max_iters: 0,
            max_grad_norm: 0.0,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch and epochs must be positive".into()));
        }
        if !(self.warmup_start_lr <= self.lr) || self.lr <= 0.0 || self.warmup_start_lr < 0.0 {
            return Err(Error::Config(
                "need 0 ≤ warmup_start_lr ≤ lr and lr > 0".into(),
            ));
        }
        if self.weight_decay < 0.0 || self.decay <= 0.0 || self.max_grad_norm < 0.0 {
            return Err(Error::Config(
                "weight_decay, decay and max_grad_norm must be nonnegative".into(),
            ));
        }
        if self.size == 0 || self.size % 4 != 0 {
            return Err(Error::Config(format!(
                "size must be a positive multiple of 4, got {}",
                self.size
            )));
        }
        Ok(())
    }
}

impl Section for TrainConfig {
    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("warmup_iters", self.warmup_iters.to_string()),
            ("warmup_start_lr", self.warmup_start_lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch", self.batch.to_string()),
            ("decay", self.decay.to_string()),
            ("size", self.size.to_string()),
            ("max_iters", self.max_iters.to_string()),
            ("max_grad_norm", self.max_grad_norm.to_string()),
            ("shuffle_seed", self.shuffle_seed.to_string()),
        ]
    }

    fn set(&mut self, key: &str, v: &str) -> Result<bool> {
        match key {
            "lr" => self.lr = value(key, v)?,
            "weight_decay" => self.weight_decay = value(key, v)?,
            "warmup_iters" => self.warmup_iters = value(key, v)?,
            "warmup_start_lr" => self.warmup_start_lr = value(key, v)?,
            "epochs" => self.epochs = value(key, v)?,
            "batch" => self.batch = value(key, v)?,
            "decay" => self.decay = value(key, v)?,
            "size" => self.size = value(key, v)?,
            "max_iters" => self.max_iters = value(key, v)?,
            "max_grad_norm" => self.max_grad_norm = value(key, v)?,
            "shuffle_seed" => self.shuffle_seed = value(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Learning rate at global iteration `iter` during `epoch`: linear from
/// `warmup_start_lr` to `lr` over the warmup, then `lr · decay^epoch`.
pub fn lr_at(iter: usize, epoch: usize, cfg: &TrainConfig) -> f64 {
    if iter < cfg.warmup_iters {
        let t = iter as f64 / cfg.warmup_iters as f64;
        cfg.warmup_start_lr + (cfg.lr - cfg.warmup_start_lr) * t
    } else {
        cfg.lr * cfg.decay.powi(epoch as i32)
    }
}

/// AdamW moments and step count.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.shape()))
                .collect()
        };
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// One update with decoupled weight decay: `θ ← θ − lr·λ·θ`, then the
    /// bias-corrected Adam step.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &[Tensor],
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Usage(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id);
            let g = &grads[k];
            p.expect_same_shape(g)?;
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (j, theta) in p.data_mut().iter_mut().enumerate() {
                *theta -= lr * weight_decay * *theta;
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *theta -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One logged optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterLog {
    pub iter: usize,
    pub epoch: usize,
    pub lr: f64,
    pub report: LossReport,
}

pub const LOSS_CSV_HEADER: &str = "iter,epoch,lr,l_total,l_f,l_v,l_i";

pub fn loss_csv_line(log: &IterLog) -> String {
    let r = &log.report;
    format!(
        "{},{},{:e},{:.12e},{:.12e},{:.12e},{:.12e}",
        log.iter, log.epoch, log.lr, r.l_total, r.l_f, r.l_v, r.l_i
    )
}

pub fn loss_csv(logs: &[IterLog]) -> String {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for log in logs {
        let _ = writeln!(out, "{}", loss_csv_line(log));
    }
    out
}

/// Registered `(visible, infrared)` pairs, each `[1,1,H,W]` on `[0,1]`.
pub type Dataset = [(Tensor, Tensor)];

/// Forward, backward and one optimizer step on a batch; returns the loss
/// values before the update.
pub fn train_step(
    model: &mut FusionModel,
    opt: &mut AdamW,
    v: &Tensor,
    i: &Tensor,
    weights: &LossWeights,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let g = Graph::new();
    let p = model.params().bind(&g);
    let out = model.forward(&g, &p, &g.constant(v.clone()), &g.constant(i.clone()))?;
    let (loss, report) = total_loss(
        &g,
        &out.fused,
        out.visible.as_ref(),
        out.infrared.as_ref(),
        v,
        i,
        weights,
    )?;
    let mut grads = g.backward(&loss)?;
    let mut grads = p.gradients(&mut grads);
    drop(p);
    drop(g);
    if cfg.max_grad_norm > 0.0 {
        let norm = grads.iter().map(|t| t.norm().powi(2)).sum::<f64>().sqrt();
        if norm > cfg.max_grad_norm {
            let s = cfg.max_grad_norm / norm;
            for t in &mut grads {
                t.data_mut().iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    opt.step(model.params_mut(), &grads, lr, cfg.weight_decay)?;
    Ok(report)
}

/// Trains for `cfg.epochs` epochs (or until `cfg.max_iters`). `on_iter` sees
/// every step; `on_epoch` runs after each completed epoch with its index.
pub fn train(
    model: &mut FusionModel,
    data: &Dataset,
    cfg: &TrainConfig,
    weights: &LossWeights,
    mut on_iter: impl FnMut(&IterLog) -> Result<()>,
    mut on_epoch: impl FnMut(usize, &FusionModel) -> Result<()>,
) -> Result<Vec<IterLog>> {
    cfg.validate()?;
    weights.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let mut opt = AdamW::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::new();
    let mut iter = 0;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            if cfg.max_iters > 0 && iter >= cfg.max_iters {
                break 'epochs;
            }
            let v = Tensor::concat_batch(&chunk.iter().map(|&k| &data[k].0).collect::<Vec<_>>())?;
            let i = Tensor::concat_batch(&chunk.iter().map(|&k| &data[k].1).collect::<Vec<_>>())?;
            let lr = lr_at(iter, epoch, cfg);
            let report = train_step(model, &mut opt, &v, &i, weights, lr, cfg)?;
            if !report.l_total.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            let log = IterLog {
                iter,
                epoch,
                lr,
                report,
            };
            on_iter(&log)?;
            logs.push(log);
            iter += 1;
        }
        on_epoch(epoch, model)?;
    }
    Ok(logs)
}
