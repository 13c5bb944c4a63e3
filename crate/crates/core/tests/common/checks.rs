//! Reusable comparisons against the loop references. Each returns the
//! largest deviation observed.

use super::oracles;
use super::{rng, uniform};
use sfmfusion::autodiff::Graph;
use sfmfusion::blocks::{BlockConfig, Dfmb, Mmb};
use sfmfusion::ops::conv::{conv2d, depthwise_conv2d, linear};
use sfmfusion::ops::norm::{layer_norm, LAYER_NORM_EPS};
use sfmfusion::ops::spectral::fft2;
use sfmfusion::params::{Builder, ParamStore};
use sfmfusion::ssm::{selective_scan, ss2d, SsmParams};
use sfmfusion::{Tensor, Var};

pub fn random_ssm(c: usize, ns: usize, seed: u64) -> SsmParams {
    SsmParams {
        a_log: uniform(&[c, ns], -1.0, 1.0, seed),
        w_b: uniform(&[ns, c], -0.5, 0.5, seed + 1),
        w_c: uniform(&[ns, c], -0.5, 0.5, seed + 2),
        w_dt: uniform(&[c, c], -0.5, 0.5, seed + 3),
        dt_bias: uniform(&[c], -1.0, 1.0, seed + 4),
    }
}

pub fn random_ss2d(c: usize, ns: usize, seed: u64) -> [SsmParams; 4] {
    [
        random_ssm(c, ns, seed),
        random_ssm(c, ns, seed + 10),
        random_ssm(c, ns, seed + 20),
        random_ssm(c, ns, seed + 30),
    ]
}

pub fn conv() -> f64 {
    let mut worst: f64 = 0.0;
    for (k, (shape, cout, ksz, stride, pad)) in [
        ([2, 3, 5, 6], 4, 3, 1, 1),
        ([1, 2, 7, 7], 3, 3, 2, 1),
        ([2, 4, 4, 3], 5, 1, 1, 0),
        ([1, 3, 6, 5], 2, 3, 1, 0),
    ]
    .into_iter()
    .enumerate()
    {
        let seed = 100 * k as u64;
        let x = uniform(&shape, -1.0, 1.0, seed);
        let w = uniform(&[cout, shape[1], ksz, ksz], -1.0, 1.0, seed + 1);
        let b = uniform(&[cout], -1.0, 1.0, seed + 2);
        let got = conv2d(&x, &w, Some(&b), stride, pad).unwrap();
        worst = worst.max(got.max_abs_diff(&oracles::conv2d(&x, &w, Some(&b), stride, pad)));
        let got = conv2d(&x, &w, None, stride, pad).unwrap();
        worst = worst.max(got.max_abs_diff(&oracles::conv2d(&x, &w, None, stride, pad)));
    }
    worst
}

pub fn depthwise() -> f64 {
    let mut worst: f64 = 0.0;
    for (k, shape) in [[2, 3, 5, 6], [1, 4, 1, 7], [1, 2, 8, 8]]
        .into_iter()
        .enumerate()
    {
        let seed = 200 + 10 * k as u64;
        let x = uniform(&shape, -1.0, 1.0, seed);
        let w = uniform(&[shape[1], 1, 3, 3], -1.0, 1.0, seed + 1);
        let b = uniform(&[shape[1]], -1.0, 1.0, seed + 2);
        let got = depthwise_conv2d(&x, &w, Some(&b)).unwrap();
        worst = worst.max(got.max_abs_diff(&oracles::depthwise(&x, &w, Some(&b))));
    }
    worst
}

pub fn linear_layer() -> f64 {
    let x = uniform(&[3, 4, 5], -1.0, 1.0, 300);
    let w = uniform(&[6, 5], -1.0, 1.0, 301);
    let b = uniform(&[6], -1.0, 1.0, 302);
    let with_bias = linear(&x, &w, Some(&b))
        .unwrap()
        .max_abs_diff(&oracles::linear(&x, &w, Some(&b)));
    let without = linear(&x, &w, None)
        .unwrap()
        .max_abs_diff(&oracles::linear(&x, &w, None));
    with_bias.max(without)
}

pub fn norm() -> f64 {
    let x = uniform(&[2, 5, 3, 4], -3.0, 3.0, 400);
    let gamma = uniform(&[5], 0.5, 1.5, 401);
    let beta = uniform(&[5], -0.5, 0.5, 402);
    layer_norm(&x, &gamma, &beta, LAYER_NORM_EPS)
        .unwrap()
        .max_abs_diff(&oracles::layer_norm(&x, &gamma, &beta, LAYER_NORM_EPS))
}

pub fn scan() -> f64 {
    let mut worst: f64 = 0.0;
    for (k, (c, l, ns)) in [(3, 20, 4), (1, 1, 1), (4, 33, 8)].into_iter().enumerate() {
        let seed = 500 + 50 * k as u64;
        let x = uniform(&[c, l], -1.0, 1.0, seed);
        let p = random_ssm(c, ns, seed + 1);
        let got = selective_scan(&x, &p).unwrap();
        let seq: Vec<Vec<f64>> = x.data().chunks(l).map(|r| r.to_vec()).collect();
        let want: Vec<f64> = oracles::scan_sequence(&seq, &p).concat();
        let want = Tensor::new(&[c, l], want).unwrap();
        worst = worst.max(got.max_abs_diff(&want));
    }
    worst
}

pub fn scan2d() -> f64 {
    let mut worst: f64 = 0.0;
    for (k, shape) in [[2, 3, 4, 5], [1, 2, 6, 3], [1, 1, 1, 4]]
        .into_iter()
        .enumerate()
    {
        let seed = 700 + 50 * k as u64;
        let x = uniform(&shape, -1.0, 1.0, seed);
        let p = random_ss2d(shape[1], 3, seed + 1);
        worst = worst.max(ss2d(&x, &p).unwrap().max_abs_diff(&oracles::ss2d(&x, &p)));
    }
    worst
}

pub fn fft() -> f64 {
    let mut worst: f64 = 0.0;
    for (k, shape) in [
        [1, 2, 8, 8],
        [2, 1, 5, 7],
        [1, 1, 1, 1],
        [1, 1, 4, 6],
        [1, 1, 3, 1],
    ]
    .into_iter()
    .enumerate()
    {
        let x = uniform(&shape, -1.0, 1.0, 900 + k as u64);
        let got = fft2(&x).unwrap();
        let (re, im) = oracles::dft2(&x);
        for j in 0..x.len() {
            worst = worst
                .max((got.re()[j] - re[j]).abs())
                .max((got.im()[j] - im[j]).abs());
        }
    }
    worst
}

pub fn tiny_block() -> BlockConfig {
    BlockConfig {
        channels: 4,
        expansion: 2,
        scales: 3,
        nstate: 2,
        use_ceb: true,
        use_feb: true,
    }
}

pub fn build<T>(seed: u64, make: impl FnOnce(&mut Builder) -> T) -> (ParamStore, T) {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    let block = make(&mut Builder::new(&mut store, &mut r));
    (store, block)
}

/// Perturbs every parameter so that unit scales and zero shifts do not hide
/// wiring mistakes.
pub fn jitter(store: &mut ParamStore, seed: u64) {
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let t = store.get_mut(id);
        let noise = uniform(t.shape(), -0.2, 0.2, seed + k as u64);
        t.data_mut()
            .iter_mut()
            .zip(noise.data())
            .for_each(|(v, n)| *v += n);
    }
}

pub fn mmb_block() -> f64 {
    let (mut store, block) = build(11, |b| Mmb::new(b, "mmb", &tiny_block()).unwrap());
    jitter(&mut store, 1100);
    let x = uniform(&[2, 4, 4, 8], -1.0, 1.0, 1200);
    let g = Graph::inference();
    let got = block
        .forward(&g, &store.bind(&g), &Var::constant(x.clone()))
        .unwrap();
    got.value().max_abs_diff(&oracles::mmb(&store, &block, &x))
}

pub fn dfmb_block() -> f64 {
    let (mut store, block) = build(12, |b| Dfmb::new(b, "dfmb", &tiny_block()).unwrap());
    jitter(&mut store, 1300);
    let dv = uniform(&[2, 4, 4, 4], -1.0, 1.0, 1400);
    let df = uniform(&[2, 4, 4, 4], -1.0, 1.0, 1401);
    let di = uniform(&[2, 4, 4, 4], -1.0, 1.0, 1402);
    let g = Graph::inference();
    let c = |t: &Tensor| Var::constant(t.clone());
    let (out, w) = block
        .forward_with_gate(&g, &store.bind(&g), &c(&dv), &c(&df), &c(&di))
        .unwrap();
    let (want, want_w) = oracles::dfmb(&store, &block, &dv, &df, &di);
    out.value()
        .max_abs_diff(&want)
        .max(w.value().max_abs_diff(&want_w))
}

fn zero_except(store: &mut ParamStore, keep: &[&str]) {
    store.zero_where(|n| !keep.iter().any(|k| n.starts_with(k)));
}

fn unit_norm(x: &Tensor) -> Tensor {
    let c = x.shape()[1];
    layer_norm(x, &Tensor::ones(&[c]), &Tensor::zeros(&[c]), LAYER_NORM_EPS).unwrap()
}

fn run1<T>(
    store: &ParamStore,
    block: &T,
    x: &Tensor,
    f: impl Fn(&T, &Graph, &sfmfusion::params::Bound, &Var) -> sfmfusion::Result<Var>,
) -> Tensor {
    let g = Graph::inference();
    f(block, &g, &store.bind(&g), &Var::constant(x.clone()))
        .unwrap()
        .into_tensor()
}

/// Zero-weight SFMB against `3·LN(X)`.
pub fn sfmb_zero() -> f64 {
    use sfmfusion::blocks::Sfmb;
    let (mut store, block) = build(21, |b| Sfmb::new(b, "sfmb", &tiny_block()).unwrap());
    zero_except(&mut store, &["sfmb.norm."]);
    let x = uniform(&[2, 4, 4, 4], -2.0, 2.0, 2100);
    let out = run1(&store, &block, &x, |b, g, p, x| b.forward(g, p, x));
    out.max_abs_diff(&unit_norm(&x).map(|v| 3.0 * v))
}

/// Zero-weight SFMG against `X` plus `blocks` applications of `Y ↦ 3·LN(Y)`,
/// which is `3·LN(X) + X` for a single block.
pub fn sfmg_zero(blocks: usize) -> f64 {
    use sfmfusion::blocks::Sfmg;
    let (mut store, group) = build(22, |b| Sfmg::new(b, "sfmg", &tiny_block(), blocks).unwrap());
    let keep: Vec<String> = (0..blocks)
        .map(|k| format!("sfmg.block{k}.norm."))
        .collect();
    let keep: Vec<&str> = keep.iter().map(String::as_str).collect();
    zero_except(&mut store, &keep);
    let x = uniform(&[2, 4, 4, 4], -2.0, 2.0, 2200);
    let out = run1(&store, &group, &x, |b, g, p, x| b.forward(g, p, x));
    let mut y = x.clone();
    for _ in 0..blocks {
        y = unit_norm(&y).map(|v| 3.0 * v);
    }
    out.max_abs_diff(&Tensor::from_fn(x.shape(), |i| y.data()[i] + x.data()[i]))
}

/// Zero-weight CEB and FEB against the identity.
pub fn ceb_feb_zero() -> f64 {
    use sfmfusion::blocks::{Ceb, Feb};
    let x = uniform(&[2, 4, 4, 4], -2.0, 2.0, 2300);
    let (mut store, ceb) = build(23, |b| Ceb::new(b, "ceb", &tiny_block()).unwrap());
    zero_except(&mut store, &[]);
    let e1 = run1(&store, &ceb, &x, |b, g, p, x| b.forward(g, p, x)).max_abs_diff(&x);
    let (mut store, feb) = build(24, |b| Feb::new(b, "feb", &tiny_block()).unwrap());
    zero_except(&mut store, &[]);
    let e2 = run1(&store, &feb, &x, |b, g, p, x| b.forward(g, p, x)).max_abs_diff(&x);
    e1.max(e2)
}

fn dfmb_run(store: &ParamStore, block: &Dfmb, seed: u64) -> (Tensor, Tensor, Tensor, Tensor) {
    let dv = uniform(&[2, 4, 4, 4], -1.0, 1.0, seed);
    let df = uniform(&[2, 4, 4, 4], -1.0, 1.0, seed + 1);
    let di = uniform(&[2, 4, 4, 4], -1.0, 1.0, seed + 2);
    let g = Graph::inference();
    let c = |t: &Tensor| Var::constant(t.clone());
    let (out, w) = block
        .forward_with_gate(&g, &store.bind(&g), &c(&dv), &c(&df), &c(&di))
        .unwrap();
    (out.into_tensor(), w.into_tensor(), dv, di)
}

/// Largest `|W − 0.5|` with the gate path weights zeroed.
pub fn dfmb_gate_half() -> f64 {
    let (mut store, block) = build(25, |b| Dfmb::new(b, "dfmb", &tiny_block()).unwrap());
    jitter(&mut store, 2500);
    store.zero_where(|n| n.starts_with("dfmb.gate_"));
    let (_, w, _, _) = dfmb_run(&store, &block, 2600);
    w.data().iter().fold(0.0, |m, v| m.max((v - 0.5).abs()))
}

/// Zero-weight DFMB with unit skip scales against `Dv + Di`.
pub fn dfmb_skips() -> f64 {
    let (mut store, block) = build(26, |b| Dfmb::new(b, "dfmb", &tiny_block()).unwrap());
    zero_except(
        &mut store,
        &[
            "dfmb.s1",
            "dfmb.s2",
            "dfmb.norm_",
            "dfmb.stream_v.norm.",
            "dfmb.stream_i.norm.",
        ],
    );
    let (out, _, dv, di) = dfmb_run(&store, &block, 2700);
    out.max_abs_diff(&Tensor::from_fn(dv.shape(), |i| {
        dv.data()[i] + di.data()[i]
    }))
}

/// Distance between the reported total loss and its recomposition from
/// the reported terms and weights.
pub fn loss_recomposition() -> f64 {
    use sfmfusion::losses::{evaluate, LossWeights};
    let shape = [2, 1, 8, 8];
    let (f, vh, ih) = (
        uniform(&shape, 0.0, 1.0, 1),
        uniform(&shape, 0.0, 1.0, 2),
        uniform(&shape, 0.0, 1.0, 3),
    );
    let (v, i) = (uniform(&shape, 0.0, 1.0, 4), uniform(&shape, 0.0, 1.0, 5));
    let w = LossWeights {
        alpha1: 0.3,
        alpha2: 0.7,
        alpha3: 1.5,
        alpha4: 0.25,
    };
    let r = evaluate(&f, Some(&vh), Some(&ih), &v, &i, &w).unwrap();
    let parts = [
        r.l_f - (r.l_f_int + w.alpha3 * r.l_f_grad),
        r.l_v - (r.l_v_int + w.alpha4 * r.l_v_grad),
        r.l_i - (r.l_i_int + w.alpha4 * r.l_i_grad),
        r.l_total - (r.l_f + w.alpha1 * r.l_v + w.alpha2 * r.l_i),
    ];
    parts.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// One measured metric value against its closed-form expectation.
pub struct Truth {
    pub name: &'static str,
    pub got: f64,
    pub want: f64,
    pub tol: f64,
}

impl Truth {
    pub fn holds(&self) -> bool {
        (self.got - self.want).abs() <= self.tol
    }
}

pub fn texture(h: usize, w: usize, seed: u64) -> sfmfusion::metrics::GrayImage {
    sfmfusion::metrics::GrayImage::from_fn(h, w, |y, x| {
        let t = (y as f64 * 0.37 + seed as f64).sin() * (x as f64 * 0.23 + 0.5 * seed as f64).cos();
        (127.5 + 100.0 * t).round()
    })
    .unwrap()
}

/// Closed-form metric values on constant, two-level and textured images.
pub fn metric_truths() -> Vec<Truth> {
    use sfmfusion::metrics::*;
    let constant = GrayImage::from_fn(32, 32, |_, _| 91.0).unwrap();
    let half = GrayImage::from_fn(32, 32, |y, _| if y < 16 { 0.0 } else { 255.0 }).unwrap();
    let f = texture(48, 48, 1);
    let (a, b) = (texture(48, 48, 2), texture(48, 48, 3));
    let flat = GrayImage::from_fn(48, 48, |_, _| 128.0).unwrap();
    vec![
        Truth {
            name: "EN(constant)",
            got: entropy(&constant),
            want: 0.0,
            tol: 0.0,
        },
        Truth {
            name: "EN(half/half)",
            got: entropy(&half),
            want: 1.0,
            tol: 1e-12,
        },
        Truth {
            name: "SD(half/half)",
            got: std_dev(&half),
            want: 127.5,
            tol: 1e-12,
        },
        Truth {
            name: "SF(constant)",
            got: spatial_frequency(&constant),
            want: 0.0,
            tol: 0.0,
        },
        Truth {
            name: "MI(F,F,F) - 2·EN(F)",
            got: mutual_information(&f, &f, &f).unwrap() - 2.0 * entropy(&f),
            want: 0.0,
            tol: 1e-12,
        },
        Truth {
            name: "VIF(F,F,F)",
            got: vif_fusion(&f, &f, &f).unwrap(),
            want: 1.0,
            tol: 1e-6,
        },
        // A flat fused image keeps only the strength score at zero ratio,
        // Γ_g/(1+e^{−κ_g σ_g}) ≈ 5.5e-4, times an orientation score below one.
        Truth {
            name: "QABF(constant F)",
            got: qabf(&flat, &a, &b).unwrap(),
            want: 0.0,
            tol: 1e-3,
        },
    ]
}

/// Parameter count of a model, tallied layer by layer.
pub fn expected_parameters(cfg: &sfmfusion::model::ModelConfig) -> usize {
    let b = &cfg.block;
    let (c, e, ns) = (b.channels, b.expanded(), b.nstate);
    let linear = |i: usize, o: usize| o * i + o;
    let conv = |i: usize, o: usize, k: usize| o * i * k * k + o;
    let dw = |ch: usize| 9 * ch + ch;
    let norm = |ch: usize| 2 * ch;
    let scan = |ch: usize| 4 * (ch * ns + 2 * ns * ch + ch * ch + ch);
    let mmb = linear(c, e) + b.scales * (dw(e) + scan(e) + norm(e)) + linear(c, e) + linear(e, c);
    let half = c / 2;
    let hidden = (half / 2).max(1);
    let ceb = conv(c, c, 3) + 2 * (conv(half, hidden, 1) + conv(hidden, half, 1));
    let feb = 2 * conv(c, c, 1) + 2 * conv(c, c, 3);
    let sfmb = norm(c) + mmb + if b.use_ceb { ceb } else { 0 } + if b.use_feb { feb } else { 0 };
    let groups = cfg.groups * cfg.blocks_per_group * sfmb;
    let head = conv(c, c, 3) + conv(c, 1, 3);
    let recon = conv(1, c, 3) + conv(c, c, 3) + groups + head;
    let stream = linear(c, c) + dw(c) + scan(c) + norm(c);
    let dfmb = 3 * norm(c) + 2 * stream + linear(c, c) + dw(c) + linear(c, c) + 2;
    let merge = match (cfg.reconstruction, cfg.fusion) {
        (false, _) => 0,
        (true, sfmfusion::model::FusionMode::Dfmb) => dfmb,
        (true, sfmfusion::model::FusionMode::Add) => 0,
        (true, sfmfusion::model::FusionMode::Concat) => conv(3 * c, c, 1),
    };
    let fusion = 2 * conv(1, c, 3) + conv(2 * c, c, 1) + groups + cfg.groups * merge + head;
    fusion + if cfg.reconstruction { 2 * recon } else { 0 }
}

pub fn small_model() -> sfmfusion::model::ModelConfig {
    sfmfusion::model::ModelConfig {
        groups: 2,
        blocks_per_group: 1,
        block: BlockConfig {
            channels: 4,
            expansion: 2,
            scales: 3,
            nstate: 2,
            use_ceb: true,
            use_feb: true,
        },
        ..Default::default()
    }
}

/// The ablated wirings: no reconstruction branches, no CEB, no FEB, one
/// and two MMB scales, and additive or concatenating fusion.
pub fn ablations() -> Vec<(&'static str, sfmfusion::model::ModelConfig)> {
    use sfmfusion::model::FusionMode;
    let base = small_model();
    let with = |f: &dyn Fn(&mut sfmfusion::model::ModelConfig)| {
        let mut c = base;
        f(&mut c);
        c
    };
    vec![
        ("full", base),
        (
            "without reconstruction branches",
            with(&|c| c.reconstruction = false),
        ),
        ("without CEB", with(&|c| c.block.use_ceb = false)),
        ("without FEB", with(&|c| c.block.use_feb = false)),
        ("one-scale MMB", with(&|c| c.block.scales = 1)),
        ("two-scale MMB", with(&|c| c.block.scales = 2)),
        ("additive fusion", with(&|c| c.fusion = FusionMode::Add)),
        (
            "concatenating fusion",
            with(&|c| c.fusion = FusionMode::Concat),
        ),
    ]
}

/// Builds the model, runs forward and backward through the total loss and
/// checks output shapes and gradient coverage. Every scalar outside the
/// ReLU-gated subnets must get a nonzero gradient. Returns the fraction of
/// all parameter scalars with a nonzero gradient.
pub fn exercise(cfg: sfmfusion::model::ModelConfig) -> std::result::Result<f64, String> {
    use sfmfusion::losses::{total_loss, LossWeights};
    use sfmfusion::model::FusionModel;
    let model = FusionModel::new(cfg).map_err(|e| e.to_string())?;
    if model.num_parameters() != expected_parameters(&cfg) {
        return Err(format!(
            "{} parameters, expected {}",
            model.num_parameters(),
            expected_parameters(&cfg)
        ));
    }
    let v = uniform(&[2, 1, 8, 8], 0.0, 1.0, 31);
    let i = uniform(&[2, 1, 8, 8], 0.0, 1.0, 32);
    let g = Graph::new();
    let p = model.params().bind(&g);
    let out = model
        .forward(&g, &p, &g.constant(v.clone()), &g.constant(i.clone()))
        .map_err(|e| e.to_string())?;
    for t in [
        Some(&out.fused),
        out.visible.as_ref(),
        out.infrared.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        if t.shape() != v.shape() {
            return Err(format!("output shape {:?}", t.shape()));
        }
    }
    if out.visible.is_some() != cfg.reconstruction {
        return Err("reconstruction outputs do not match the configuration".into());
    }
    let (loss, _) = total_loss(
        &g,
        &out.fused,
        out.visible.as_ref(),
        out.infrared.as_ref(),
        &v,
        &i,
        &LossWeights::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut grads = g.backward(&loss).map_err(|e| e.to_string())?;
    let reached = p.reached(&grads);
    let missing: Vec<&str> = reached
        .iter()
        .zip(model.params().iter())
        .filter(|(r, _)| r.is_none())
        .map(|(_, (n, _))| n)
        .collect();
    if !missing.is_empty() {
        return Err(format!("no gradient reaches {missing:?}"));
    }
    let all = p.gradients(&mut grads);
    if !all.iter().all(|t| t.is_finite()) {
        return Err("non-finite gradient".into());
    }
    // Weights feeding a ReLU can legitimately see exact zeros from dead units.
    let gated = |n: &str| {
        [".ceb.avg", ".ceb.max", ".feb.amp", ".feb.phase"]
            .iter()
            .any(|k| n.contains(k))
    };
    let dead: Vec<&str> = model
        .params()
        .iter()
        .zip(&all)
        .filter(|((n, _), t)| !gated(n) && t.data().contains(&0.0))
        .map(|((n, _), _)| n)
        .collect();
    if !dead.is_empty() {
        return Err(format!("zero gradient entries in {dead:?}"));
    }
    let total: usize = all.iter().map(|t| t.len()).sum();
    let nonzero: usize = all
        .iter()
        .map(|t| t.data().iter().filter(|v| **v != 0.0).count())
        .sum();
    Ok(nonzero as f64 / total as f64)
}
