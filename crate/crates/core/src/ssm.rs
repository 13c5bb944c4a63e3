//! Selective state-space scans: zero-order-hold discretization, the 1D
//! input-dependent recurrence and its four-direction 2D arrangement.
//!
//! For channel `c` and state `k` at sequence position `t`:
//!
//! ```text
//! Δ_t   = softplus(W_Δ x_t + b_Δ)[c]
//! Ā     = exp(Δ_t A[c,k])
//! B̄     = expm1(Δ_t A[c,k]) / A[c,k] · B_t[k]
//! h_t   = Ā h_{t-1} + B̄ x_t[c]
//! y_t   = Σ_k C_t[k] h_t[k]
//! ```
//!
//! `A = -exp(a_log)` keeps every state strictly decaying. `B_t = W_B x_t` and
//! `C_t = W_C x_t` are shared by all channels of a position.

use rand::Rng;

use crate::autodiff::{Backward, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default number of hidden states per channel.
pub const DEFAULT_NSTATE: usize = 8;

/// Flattening order of a feature map into a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanDirection {
    /// Row-major, first pixel first.
    LeftRight,
    /// Row-major, last pixel first.
    RightLeft,
    /// Column-major, first pixel first.
    TopDown,
    /// Column-major, last pixel first.
    BottomUp,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::LeftRight,
        ScanDirection::RightLeft,
        ScanDirection::TopDown,
        ScanDirection::BottomUp,
    ];

    pub fn column_major(self) -> bool {
        matches!(self, ScanDirection::TopDown | ScanDirection::BottomUp)
    }

    pub fn reversed(self) -> bool {
        matches!(self, ScanDirection::RightLeft | ScanDirection::BottomUp)
    }

    /// The direction that visits a 180°-rotated map in the same order.
    pub fn opposite(self) -> Self {
        match self {
            ScanDirection::LeftRight => ScanDirection::RightLeft,
            ScanDirection::RightLeft => ScanDirection::LeftRight,
            ScanDirection::TopDown => ScanDirection::BottomUp,
            ScanDirection::BottomUp => ScanDirection::TopDown,
        }
    }

    /// Flat row-major pixel indices in visiting order.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        let mut order: Vec<usize> = if self.column_major() {
            (0..w)
                .flat_map(|x| (0..h).map(move |y| y * w + x))
                .collect()
        } else {
            (0..h * w).collect()
        };
        if self.reversed() {
            order.reverse();
        }
        order
    }
}

/// `expm1(Δ·a)/a`, the zero-order-hold input gain, with its `a → 0` limit.
pub fn zoh_gain(dt: f64, a: f64) -> f64 {
    if a == 0.0 {
        dt
    } else {
        (dt * a).exp_m1() / a
    }
}

/// Decay `exp(Δ·a)` and input gain `expm1(Δ·a)/a` from one transcendental call.
#[inline]
fn step_coeffs(dt: f64, a: f64) -> (f64, f64) {
    let em = (dt * a).exp_m1();
    let gain = if a == 0.0 { dt } else { em / a };
    (1.0 + em, gain)
}

/// Derivative of `expm1(z)/z` given `exp_z = exp(z)`, by series near zero.
fn phi1_prime(z: f64, exp_z: f64) -> f64 {
    if z.abs() < 0.1 {
        // Σ_{n≥1} n z^{n-1} / (n+1)!
        let mut term_pow = 1.0;
        let mut fact = 2.0;
        let mut sum = 0.0;
        for n in 1..=10 {
            sum += n as f64 * term_pow / fact;
            term_pow *= z;
            fact *= (n + 2) as f64;
        }
        sum
    } else {
        ((z - 1.0) * exp_z + 1.0) / (z * z)
    }
}

/// Discretizes diagonal `A [C,N]` with inputs `B [C,N]` and steps `Δ [C]`.
/// Returns `(Ā, B̄)`, both `[C,N]`.
pub fn discretize(a: &Tensor, b: &Tensor, dt: &Tensor) -> Result<(Tensor, Tensor)> {
    a.expect_same_shape(b)?;
    let (c, n) = match a.shape() {
        [c, n] => (*c, *n),
        s => return Err(Error::dim(format!("state matrix must be [C,N], got {s:?}"))),
    };
    if dt.len() != c {
        return Err(Error::dim(format!(
            "Δ has {} entries for {c} channels",
            dt.len()
        )));
    }
    let abar = Tensor::from_fn(&[c, n], |i| (dt.data()[i / n] * a.data()[i]).exp());
    let bbar = Tensor::from_fn(&[c, n], |i| {
        zoh_gain(dt.data()[i / n], a.data()[i]) * b.data()[i]
    });
    Ok((abar, bbar))
}

/// Parameters of one scan direction.
///
/// Shapes: `a_log [C,N]`, `w_b [N,C]`, `w_c [N,C]`, `w_dt [C,C]`, `dt_bias [C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams<T = Tensor> {
    pub a_log: T,
    pub w_b: T,
    pub w_c: T,
    pub w_dt: T,
    pub dt_bias: T,
}

impl<T> SsmParams<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> SsmParams<U> {
        SsmParams {
            a_log: f(&self.a_log),
            w_b: f(&self.w_b),
            w_c: f(&self.w_c),
            w_dt: f(&self.w_dt),
            dt_bias: f(&self.dt_bias),
        }
    }

    /// `(name, value)` pairs in a fixed order.
    pub fn named(&self) -> [(&'static str, &T); 5] {
        [
            ("a_log", &self.a_log),
            ("w_b", &self.w_b),
            ("w_c", &self.w_c),
            ("w_dt", &self.w_dt),
            ("dt_bias", &self.dt_bias),
        ]
    }
}

impl SsmParams<Tensor> {
    /// `A = -(1..=N)` per channel, projections uniform in `±1/√C`, and a
    /// step bias whose softplus is log-uniform in `[0.01, 0.1]`.
    pub fn init<R: Rng>(channels: usize, nstate: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (channels as f64).sqrt();
        let mut uniform =
            |shape: &[usize]| Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound));
        let w_b = uniform(&[nstate, channels]);
        let w_c = uniform(&[nstate, channels]);
        let w_dt = uniform(&[channels, channels]);
        let a_log = Tensor::from_fn(&[channels, nstate], |i| ((i % nstate) as f64 + 1.0).ln());
        let (lo, hi) = (0.01f64.ln(), 0.1f64.ln());
        let dt_bias = Tensor::from_fn(&[channels], |_| {
            let dt = rng.gen_range(lo..hi).exp();
            dt + (-(-dt).exp_m1()).ln()
        });
        SsmParams {
            a_log,
            w_b,
            w_c,
            w_dt,
            dt_bias,
        }
    }

    pub fn channels(&self) -> usize {
        self.w_dt.shape()[0]
    }

    pub fn nstate(&self) -> usize {
        self.w_b.shape()[0]
    }

    /// The continuous state matrix `-exp(a_log)`.
    pub fn a(&self) -> Tensor {
        self.a_log.map(|v| -v.exp())
    }

    fn vars(&self) -> SsmParams<Var> {
        self.map(|t| Var::constant(t.clone()))
    }
}

/// Selective scan of `x [C,L]` left to right.
pub fn selective_scan(x: &Tensor, params: &SsmParams) -> Result<Tensor> {
    let (c, l) = match x.shape() {
        [c, l] => (*c, *l),
        s => {
            return Err(Error::dim(format!(
                "sequence input must be [C,L], got {s:?}"
            )))
        }
    };
    let g = Graph::inference();
    let x4 = Var::constant(x.clone().reshape(&[1, c, 1, l])?);
    let y = g.scan_direction(&x4, &params.vars(), ScanDirection::LeftRight)?;
    y.into_tensor().reshape(&[c, l])
}

/// Four-direction scan of `x [N,C,H,W]`, directions in [`ScanDirection::ALL`] order.
pub fn ss2d(x: &Tensor, params: &[SsmParams; 4]) -> Result<Tensor> {
    let g = Graph::inference();
    let vars = [
        params[0].vars(),
        params[1].vars(),
        params[2].vars(),
        params[3].vars(),
    ];
    Ok(g.ss2d(&Var::constant(x.clone()), &vars)?.into_tensor())
}

struct ScanShape {
    n: usize,
    c: usize,
    ns: usize,
    l: usize,
}

/// `[N,K,L]` to `[N,L,K]`, so the states of one position are contiguous.
fn states_last(v: &[f64], n: usize, k: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for ni in 0..n {
        for ki in 0..k {
            for p in 0..l {
                out[(ni * l + p) * k + ki] = v[(ni * k + ki) * l + p];
            }
        }
    }
    out
}

fn check_scan_inputs(
    x: &Tensor,
    dt: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
) -> Result<ScanShape> {
    let (n, ch, h, w) = x.dims4()?;
    x.expect_same_shape(dt)?;
    b.expect_same_shape(c)?;
    let ns = match a.shape() {
        [ac, ns] if *ac == ch => *ns,
        s => {
            return Err(Error::dim(format!(
                "state matrix {s:?} does not match {ch} channels"
            )))
        }
    };
    if b.shape() != [n, ns, h, w] {
        return Err(Error::dim(format!(
            "input/output projections {:?} must be [{n},{ns},{h},{w}]",
            b.shape()
        )));
    }
    Ok(ScanShape {
        n,
        c: ch,
        ns,
        l: h * w,
    })
}

fn scan_forward(
    s: &ScanShape,
    x: &[f64],
    dt: &[f64],
    a: &[f64],
    bt: &[f64],
    ct: &[f64],
    order: &[usize],
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    let mut h = vec![0.0; s.ns];
    for ni in 0..s.n {
        for ci in 0..s.c {
            h.fill(0.0);
            let row = (ni * s.c + ci) * s.l;
            let ac = &a[ci * s.ns..(ci + 1) * s.ns];
            for &p in order {
                let (xv, d) = (x[row + p], dt[row + p]);
                let bp = &bt[(ni * s.l + p) * s.ns..(ni * s.l + p + 1) * s.ns];
                let cp = &ct[(ni * s.l + p) * s.ns..(ni * s.l + p + 1) * s.ns];
                let mut acc = 0.0;
                for k in 0..s.ns {
                    let (abar, gain) = step_coeffs(d, ac[k]);
                    h[k] = abar * h[k] + gain * bp[k] * xv;
                    acc += cp[k] * h[k];
                }
                y[row + p] = acc;
            }
        }
    }
    y
}

struct ScanBackward {
    shape: Vec<usize>,
    ns: usize,
    order: Vec<usize>,
    x: std::rc::Rc<Tensor>,
    dt: std::rc::Rc<Tensor>,
    a: std::rc::Rc<Tensor>,
    bt: Vec<f64>,
    ct: Vec<f64>,
}

impl Backward for ScanBackward {
    fn backward(&self, grad: &Tensor, needs: &[bool]) -> Result<Vec<Option<Tensor>>> {
        let (n, c, hh, ww) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        let (ns, l) = (self.ns, hh * ww);
        let (x, dt, a, gy) = (self.x.data(), self.dt.data(), self.a.data(), grad.data());
        let mut gx = vec![0.0; x.len()];
        let mut gdt = vec![0.0; x.len()];
        let mut ga = vec![0.0; c * ns];
        let mut gbt = vec![0.0; n * l * ns];
        let mut gct = vec![0.0; n * l * ns];
        let mut hist = vec![0.0; (l + 1) * ns];
        let mut gh = vec![0.0; ns];
        for ni in 0..n {
            for ci in 0..c {
                let row = (ni * c + ci) * l;
                let ac = &a[ci * ns..(ci + 1) * ns];
                for (t, &p) in self.order.iter().enumerate() {
                    let (xv, d) = (x[row + p], dt[row + p]);
                    let bp = &self.bt[(ni * l + p) * ns..(ni * l + p + 1) * ns];
                    let (prev, next) = hist.split_at_mut((t + 1) * ns);
                    let prev = &prev[t * ns..];
                    for k in 0..ns {
                        let (abar, gain) = step_coeffs(d, ac[k]);
                        next[k] = abar * prev[k] + gain * bp[k] * xv;
                    }
                }
                gh.fill(0.0);
                for (t, &p) in self.order.iter().enumerate().rev() {
                    let (xv, d, g) = (x[row + p], dt[row + p], gy[row + p]);
                    let pos = (ni * l + p) * ns;
                    let bp = &self.bt[pos..pos + ns];
                    let cp = &self.ct[pos..pos + ns];
                    let h_prev = &hist[t * ns..(t + 1) * ns];
                    let h_cur = &hist[(t + 1) * ns..(t + 2) * ns];
                    let (mut gxv, mut gd) = (0.0, 0.0);
                    for k in 0..ns {
                        gct[pos + k] += g * h_cur[k];
                        gh[k] += g * cp[k];
                        let z = d * ac[k];
                        let (abar, phi) = step_coeffs(d, ac[k]);
                        gxv += gh[k] * phi * bp[k];
                        let g_bbar = gh[k] * xv;
                        gbt[pos + k] += g_bbar * phi;
                        let g_phi = g_bbar * bp[k];
                        let g_abar = gh[k] * h_prev[k];
                        gd += g_abar * ac[k] * abar + g_phi * abar;
                        ga[ci * ns + k] += g_abar * d * abar + g_phi * d * d * phi1_prime(z, abar);
                        gh[k] *= abar;
                    }
                    gx[row + p] += gxv;
                    gdt[row + p] += gd;
                }
            }
        }
        let proj_shape = [n, ns, hh, ww];
        let restore = |v: Vec<f64>| -> Result<Tensor> {
            let mut out = vec![0.0; v.len()];
            for ni in 0..n {
                for p in 0..l {
                    for k in 0..ns {
                        out[(ni * ns + k) * l + p] = v[(ni * l + p) * ns + k];
                    }
                }
            }
            Tensor::new(&proj_shape, out)
        };
        Ok(vec![
            needs[0].then(|| Tensor::new(&self.shape, gx)).transpose()?,
            needs[1]
                .then(|| Tensor::new(&self.shape, gdt))
                .transpose()?,
            needs[2].then(|| Tensor::new(&[c, ns], ga)).transpose()?,
            needs[3].then(|| restore(gbt)).transpose()?,
            needs[4].then(|| restore(gct)).transpose()?,
        ])
    }
}

impl Graph {
    /// Raw recurrence given precomputed steps `dt [N,C,H,W]`, state matrix
    /// `a [C,K]` and per-position projections `b, c [N,K,H,W]`.
    pub fn scan_core(
        &self,
        x: &Var,
        dt: &Var,
        a: &Var,
        b: &Var,
        c: &Var,
        dir: ScanDirection,
    ) -> Result<Var> {
        let s = check_scan_inputs(x.value(), dt.value(), a.value(), b.value(), c.value())?;
        let (_, _, h, w) = x.value().dims4()?;
        let order = dir.order(h, w);
        let bt = states_last(b.value().data(), s.n, s.ns, s.l);
        let ct = states_last(c.value().data(), s.n, s.ns, s.l);
        let y = scan_forward(
            &s,
            x.value().data(),
            dt.value().data(),
            a.value().data(),
            &bt,
            &ct,
            &order,
        );
        let y = Tensor::new(x.shape(), y)?;
        self.record("selective_scan", &[x, dt, a, b, c], y, || ScanBackward {
            shape: x.shape().to_vec(),
            ns: s.ns,
            order,
            x: x.shared(),
            dt: dt.shared(),
            a: a.shared(),
            bt,
            ct,
        })
    }

    /// One selective scan in direction `dir`, projections included.
    pub fn scan_direction(&self, x: &Var, p: &SsmParams<Var>, dir: ScanDirection) -> Result<Var> {
        let dt = self.softplus(&self.channel_linear(x, &p.w_dt, Some(&p.dt_bias))?)?;
        let b = self.channel_linear(x, &p.w_b, None)?;
        let c = self.channel_linear(x, &p.w_c, None)?;
        let a = self.scale(&self.exp(&p.a_log)?, -1.0)?;
        self.scan_core(x, &dt, &a, &b, &c, dir)
    }

    /// Sum of the four directional scans.
    pub fn ss2d(&self, x: &Var, params: &[SsmParams<Var>; 4]) -> Result<Var> {
        let mut out: Option<Var> = None;
        for (dir, p) in ScanDirection::ALL.iter().zip(params) {
            let y = self.scan_direction(x, p, *dir)?;
            out = Some(match out {
                None => y,
                Some(acc) => self.add(&acc, &y)?,
            });
        }
        Ok(out.expect("four directions"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::elementwise::softplus_scalar;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn discretize_closed_form() {
        let a = Tensor::full(&[1, 1], -1.0);
        let b = Tensor::full(&[1, 1], 3.0);
        let dt = Tensor::full(&[1], 2f64.ln());
        let (abar, bbar) = discretize(&a, &b, &dt).unwrap();
        assert!((abar.data()[0] - 0.5).abs() < 1e-15);
        assert!((bbar.data()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn discretize_small_a_limit() {
        let a = Tensor::full(&[1, 1], -1e-12);
        let (_, bbar) = discretize(&a, &Tensor::ones(&[1, 1]), &Tensor::full(&[1], 0.1)).unwrap();
        assert!((bbar.data()[0] - 0.1).abs() < 1e-10);
        let (abar, bbar) = discretize(
            &Tensor::full(&[1, 1], -1.0),
            &Tensor::ones(&[1, 1]),
            &Tensor::full(&[1], 1e-300),
        )
        .unwrap();
        assert_eq!(abar.data()[0], 1.0);
        assert!(bbar.data()[0].abs() < 1e-299);
    }

    #[test]
    fn phi1_prime_series_and_closed_form_agree() {
        for z in [-0.0999, -0.05, 0.05, 0.0999] {
            let closed = ((z - 1.0) * f64::exp(z) + 1.0) / (z * z);
            assert!((phi1_prime(z, z.exp()) - closed).abs() < 1e-12, "{z}");
        }
        assert_eq!(phi1_prime(0.0, 1.0), 0.5);
    }

    #[test]
    fn direction_orders() {
        assert_eq!(ScanDirection::LeftRight.order(2, 3), vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(ScanDirection::RightLeft.order(2, 3), vec![5, 4, 3, 2, 1, 0]);
        assert_eq!(ScanDirection::TopDown.order(2, 3), vec![0, 3, 1, 4, 2, 5]);
        assert_eq!(ScanDirection::BottomUp.order(2, 3), vec![5, 2, 4, 1, 3, 0]);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = SsmParams::init(3, 4, &mut rng);
        let y = selective_scan(&Tensor::zeros(&[3, 7]), &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_steps_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = SsmParams::init(16, 8, &mut rng);
        for &b in p.dt_bias.data() {
            let dt = softplus_scalar(b);
            assert!((0.01 - 1e-12..=0.1 + 1e-12).contains(&dt));
        }
        assert!(p.a().data().iter().all(|&a| a < 0.0));
    }
}
