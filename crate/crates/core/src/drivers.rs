//! Coefficients of the backward equation and falsification checks for their
//! growth and monotonicity assumptions.
//!
//! A driver is split as `f = f1 + f2` plus the backward-noise coefficient `g`.
//! `f1` may be non-Lipschitz in `p` (controlled by a concave modulus `ρ`), `f2`
//! is Lipschitz, and all three are bounded in terms of a deterministic `μ(t)`.
//!
//! Argument layout: `p ∈ R^n`; `q ∈ R^{n×d}` row-major; `k` holds one `R^n`
//! block per mark (mark-major, length `n·r`); `g` writes `R^{n×l}` row-major.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{substream, MarkSpace};
use crate::quad;

/// Arguments of a coefficient evaluation. `x` is the forward state; drivers of
/// the abstract equation ignore it.
#[derive(Debug, Clone, Copy)]
pub struct DriverArgs<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub p: &'a [f64],
    pub q: &'a [f64],
    pub k: &'a [f64],
}

pub type CoefFn = Arc<dyn Fn(&DriverArgs<'_>, &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
/// Terminal functional of the stopped state `X_τ` and the stopping time `τ`.
pub type TerminalFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

pub fn zero_coef() -> CoefFn {
    Arc::new(|_, out: &mut [f64]| out.fill(0.0))
}

pub const LOG_MODULUS_THRESHOLD: f64 = 1.0 / std::f64::consts::E;

/// Concave modulus `ρ` with `ρ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ConcaveModulus {
    /// `ρ(u) = slope·u`.
    Linear { slope: f64 },
    /// `ρ(u) = u ln(1/u)` on `(0, e^{-1}]`, continued with matching value and
    /// slope (which is zero there) above.
    LogModulus,
}

impl ConcaveModulus {
    pub fn eval(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        match *self {
            ConcaveModulus::Linear { slope } => slope * u,
            ConcaveModulus::LogModulus => {
                let u = u.min(LOG_MODULUS_THRESHOLD);
                -u * u.ln()
            }
        }
    }

    /// Whether `ρ(u) <= C u` near zero, so that the driver is Lipschitz.
    pub fn is_lipschitz(&self) -> bool {
        matches!(self, ConcaveModulus::Linear { .. })
    }

    /// `∫_ε^1 du / ρ(u)`.
    pub fn divergence_integral(&self, eps: f64) -> f64 {
        match *self {
            ConcaveModulus::Linear { slope } => -eps.ln() / slope,
            ConcaveModulus::LogModulus => {
                // integrate in s = ln u so the 1/(u ln(1/u)) spike is tame,
                // split at the kink s = -1
                let lo = eps.ln();
                let kink = LOG_MODULUS_THRESHOLD.ln();
                let f = |s: f64| s.exp() / self.eval(s.exp());
                let head = if lo < kink {
                    quad::integrate(f, lo, kink, 200, 8)
                } else {
                    0.0
                };
                head + quad::integrate(f, lo.max(kink), 0.0, 16, 8)
            }
        }
    }
}

/// Coefficients `(f1, f2, g)` with their assumption parameters.
#[derive(Clone)]
pub struct DriverSpec {
    pub n: usize,
    pub d: usize,
    pub l: usize,
    /// Dimension of the forward state passed in `DriverArgs::x`.
    pub x_dim: usize,
    pub marks: MarkSpace,
    pub f1: CoefFn,
    pub f2: CoefFn,
    pub g: CoefFn,
    /// The time-dependent bound `μ(t)` of the growth conditions.
    pub mu_t: ScalarFn,
    /// `∫ μ(t)² dt` over `[t0, horizon]`.
    pub mu_bar: f64,
    /// The constant `μ > 0` of the monotonicity conditions.
    pub mu: f64,
    pub rho: ConcaveModulus,
    pub t0: f64,
    pub horizon: f64,
    /// Smoothing order when `f1` has been mollified.
    pub mollified_order: Option<u32>,
}

impl std::fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriverSpec")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("l", &self.l)
            .field("x_dim", &self.x_dim)
            .field("marks", &self.marks.len())
            .field("mu_bar", &self.mu_bar)
            .field("mu", &self.mu)
            .field("rho", &self.rho)
            .field("mollified_order", &self.mollified_order)
            .finish_non_exhaustive()
    }
}

impl DriverSpec {
    /// All-zero driver with `μ(t) ≡ 0`, `μ = 1` and linear `ρ`.
    pub fn zero(
        n: usize,
        d: usize,
        l: usize,
        x_dim: usize,
        marks: MarkSpace,
        t0: f64,
        horizon: f64,
    ) -> Self {
        Self {
            n,
            d,
            l,
            x_dim,
            marks,
            f1: zero_coef(),
            f2: zero_coef(),
            g: zero_coef(),
            mu_t: Arc::new(|_| 0.0),
            mu_bar: 0.0,
            mu: 1.0,
            rho: ConcaveModulus::Linear { slope: 1.0 },
            t0,
            horizon,
            mollified_order: None,
        }
    }

    pub fn with_f1(mut self, f1: CoefFn) -> Self {
        self.f1 = f1;
        self
    }

    pub fn with_f2(mut self, f2: CoefFn) -> Self {
        self.f2 = f2;
        self
    }

    pub fn with_g(mut self, g: CoefFn) -> Self {
        self.g = g;
        self
    }

    pub fn with_rho(mut self, rho: ConcaveModulus) -> Self {
        self.rho = rho;
        self
    }

    /// Set `μ(t)` and `μ`, recomputing `μ̄` by quadrature.
    pub fn with_bounds(mut self, mu_t: ScalarFn, mu: f64) -> Self {
        self.mu_bar = quad::integrate(|t| mu_t(t).powi(2), self.t0, self.horizon, 64, 8);
        self.mu_t = mu_t;
        self.mu = mu;
        self
    }

    pub fn r(&self) -> usize {
        self.marks.len()
    }

    pub fn q_len(&self) -> usize {
        self.n * self.d
    }

    pub fn k_len(&self) -> usize {
        self.n * self.r()
    }

    pub fn g_len(&self) -> usize {
        self.n * self.l
    }

    pub fn k_norm(&self, k: &[f64]) -> f64 {
        self.marks.k_norm(k, self.n)
    }

    /// `f = f1 + f2` into `out`; `scratch` must have length `n`.
    #[inline]
    pub fn eval_f(&self, args: &DriverArgs<'_>, out: &mut [f64], scratch: &mut [f64]) {
        (self.f1)(args, out);
        (self.f2)(args, scratch);
        out.iter_mut()
            .zip(scratch.iter())
            .for_each(|(a, b)| *a += b);
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Config(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if !self.mu_bar.is_finite() {
            return Err(Error::Config("mu_bar is not finite".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("state dimension n must be positive".into()));
        }
        Ok(())
    }

    /// Whether `g` reacts to its `k` argument at a few probe points.
    pub fn g_depends_on_k(&self) -> bool {
        let mut rng = substream(0x6b, 0, 0);
        let mut sampler = ArgSampler::new(self);
        let mut a = vec![0.0; self.g_len()];
        let mut b = vec![0.0; self.g_len()];
        (0..32).any(|_| {
            let s = sampler.draw(&mut rng);
            let k2: Vec<f64> = s.k.iter().map(|v| v + 1.0).collect();
            (self.g)(&s.args(), &mut a);
            (self.g)(&DriverArgs { k: &k2, ..s.args() }, &mut b);
            a.iter().zip(&b).any(|(x, y)| x != y)
        })
    }
}

/// Terminal condition `ξ`, evaluated on the stopped forward state.
#[derive(Clone)]
pub struct TerminalSpec {
    pub n: usize,
    pub xi: TerminalFn,
}

impl std::fmt::Debug for TerminalSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TerminalSpec")
            .field("n", &self.n)
            .finish_non_exhaustive()
    }
}

impl TerminalSpec {
    pub fn new(n: usize, xi: TerminalFn) -> Self {
        Self { n, xi }
    }

    pub fn constant(c: Vec<f64>) -> Self {
        Self {
            n: c.len(),
            xi: Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&c)),
        }
    }

    pub fn eval(&self, x: &[f64], tau: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        (self.xi)(x, tau, &mut out);
        out
    }
}

/// One sampled argument tuple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
}

impl SamplePoint {
    pub fn args(&self) -> DriverArgs<'_> {
        DriverArgs {
            t: self.t,
            x: &self.x,
            p: &self.p,
            q: &self.q,
            k: &self.k,
        }
    }
}

/// Draws argument tuples from a mixture of uniform, Gaussian, heavy-tailed and
/// tiny-scale components, and near-duplicate pairs.
pub struct ArgSampler {
    t0: f64,
    horizon: f64,
    dims: [usize; 4],
}

impl ArgSampler {
    pub fn new(spec: &DriverSpec) -> Self {
        Self {
            t0: spec.t0,
            horizon: spec.horizon,
            dims: [spec.x_dim, spec.n, spec.q_len(), spec.k_len()],
        }
    }

    fn scalar(rng: &mut ChaCha8Rng, component: u32) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match component {
            0 => rng.random_range(-1.0..1.0),
            1 => 3.0 * z,
            // ratio of normal to a small uniform: Cauchy-like tails
            2 => z / rng.random_range(1e-3..1.0f64).powi(2),
            _ => z * 10f64.powi(-rng.random_range(0..9)),
        }
    }

    fn vector(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
        let component = rng.random_range(0..4u32);
        (0..len).map(|_| Self::scalar(rng, component)).collect()
    }

    pub fn draw(&mut self, rng: &mut ChaCha8Rng) -> SamplePoint {
        let [xd, pd, qd, kd] = self.dims;
        SamplePoint {
            t: rng.random_range(self.t0..=self.horizon),
            x: Self::vector(rng, xd),
            p: Self::vector(rng, pd),
            q: Self::vector(rng, qd),
            k: Self::vector(rng, kd),
        }
    }

    /// A second point sharing `t` and `x` with `base`; half the time a
    /// perturbation of size down to `1e-8`, otherwise an independent draw.
    pub fn partner(&mut self, rng: &mut ChaCha8Rng, base: &SamplePoint) -> SamplePoint {
        let mut other = self.draw(rng);
        other.t = base.t;
        other.x = base.x.clone();
        if rng.random_bool(0.5) {
            let scale = 10f64.powf(-rng.random_range(0.0..8.0));
            let nudge = |v: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
                // each block moves or stays, so single-argument differences occur
                if rng.random_bool(0.25) {
                    v.to_vec()
                } else {
                    v.iter()
                        .map(|a| a + scale * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                }
            };
            other.p = nudge(&base.p, rng);
            other.q = nudge(&base.q, rng);
            other.k = nudge(&base.k, rng);
        }
        other
    }
}

/// A point where a sampled ratio exceeded one.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub condition: &'static str,
    pub ratio: f64,
    pub point: SamplePoint,
    pub other: Option<SamplePoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub samples: usize,
    /// Worst `|lhs| / bound` over all conditions and samples.
    pub max_violation: f64,
    pub per_condition: Vec<(&'static str, f64)>,
    pub witnesses: Vec<Witness>,
}

impl CheckReport {
    /// No ratio above `1 + 1e-12`.
    pub fn passed(&self) -> bool {
        self.max_violation <= 1.0 + 1e-12
    }
}

const MAX_WITNESSES: usize = 8;
const CHUNK: usize = 1024;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Ratio of a left side to its bound. `scale` is the magnitude of the values
/// whose difference formed `lhs`; rounding below that resolution is ignored.
fn ratio(lhs: f64, bound: f64, scale: f64) -> f64 {
    let lhs = lhs - 16.0 * f64::EPSILON * scale;
    if lhs <= 0.0 {
        0.0
    } else if bound <= 0.0 {
        f64::INFINITY
    } else {
        lhs / bound
    }
}

fn check_finite(what: &'static str, s: &SamplePoint, v: &[f64]) -> Result<()> {
    if v.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation {
            what,
            t: s.t,
            p: s.p.clone(),
        })
    }
}

type Condition = (&'static str, f64, Option<Witness>);

struct Accum {
    names: Vec<&'static str>,
    worst: Vec<f64>,
    witnesses: Vec<Witness>,
}

impl Accum {
    fn new(names: &[&'static str]) -> Self {
        Self {
            names: names.to_vec(),
            worst: vec![0.0; names.len()],
            witnesses: Vec::new(),
        }
    }

    fn push(&mut self, idx: usize, ratio: f64, witness: impl FnOnce() -> Witness) {
        if ratio > self.worst[idx] {
            self.worst[idx] = ratio;
        }
        if ratio > 1.0 + 1e-12 && self.witnesses.len() < MAX_WITNESSES {
            self.witnesses.push(witness());
        }
    }

    fn merge(mut self, other: Accum) -> Accum {
        for (a, b) in self.worst.iter_mut().zip(other.worst) {
            *a = a.max(b);
        }
        for w in other.witnesses {
            if self.witnesses.len() < MAX_WITNESSES {
                self.witnesses.push(w);
            }
        }
        self
    }

    fn report(self, samples: usize) -> CheckReport {
        let max_violation = self.worst.iter().cloned().fold(0.0, f64::max);
        CheckReport {
            samples,
            max_violation,
            per_condition: self.names.into_iter().zip(self.worst).collect(),
            witnesses: self.witnesses,
        }
    }
}

fn run_chunks<F>(
    spec: &DriverSpec,
    samples: usize,
    seed: u64,
    names: &[&'static str],
    body: F,
) -> Result<CheckReport>
where
    F: Fn(&mut ArgSampler, &mut ChaCha8Rng, &mut Accum) -> Result<()> + Sync,
{
    if samples == 0 {
        return Err(Error::Config("samples must be at least 1".into()));
    }
    let chunks = samples.div_ceil(CHUNK);
    let parts: Vec<Result<Accum>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = substream(seed, c as u64, 0x636b);
            let mut sampler = ArgSampler::new(spec);
            let mut acc = Accum::new(names);
            let count = CHUNK.min(samples - c * CHUNK);
            for _ in 0..count {
                body(&mut sampler, &mut rng, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Accum::new(names);
    for part in parts {
        total = total.merge(part?);
    }
    Ok(total.report(samples))
}

/// Sampled check of the growth bounds `|f1| ≤ μ(t)`,
/// `|f2| ≤ μ(t)(1 + |p| + |q| + ‖k‖)` and `|g| ≤ μ(t)`.
pub fn check_growth(spec: &DriverSpec, samples: usize, seed: u64) -> Result<CheckReport> {
    let names = ["f1-bound", "f2-growth", "g-bound"];
    run_chunks(spec, samples, seed, &names, |sampler, rng, acc| {
        let s = sampler.draw(rng);
        let args = s.args();
        let mu_t = (spec.mu_t)(s.t);
        let mut f1 = vec![0.0; spec.n];
        let mut f2 = vec![0.0; spec.n];
        let mut g = vec![0.0; spec.g_len()];
        (spec.f1)(&args, &mut f1);
        (spec.f2)(&args, &mut f2);
        (spec.g)(&args, &mut g);
        check_finite("f1", &s, &f1)?;
        check_finite("f2", &s, &f2)?;
        check_finite("g", &s, &g)?;

        let growth = mu_t * (1.0 + norm(&s.p) + norm(&s.q) + spec.k_norm(&s.k));
        let conds: [(f64, f64); 3] = [(norm(&f1), mu_t), (norm(&f2), growth), (norm(&g), mu_t)];
        for (idx, (lhs, bound)) in conds.into_iter().enumerate() {
            let r = ratio(lhs, bound, 0.0);
            acc.push(idx, r, || Witness {
                condition: names[idx],
                ratio: r,
                point: s.clone(),
                other: None,
            });
        }
        Ok(())
    })
}

/// Sampled check of the four monotonicity / continuity conditions on pairs of
/// points: the one-sided `ρ` condition on `f1`, Lipschitz `f1` in `k`,
/// Lipschitz `f2`, and the quadratic bound on `g` differences.
pub fn check_monotone(spec: &DriverSpec, samples: usize, seed: u64) -> Result<CheckReport> {
    let names = [
        "f1-monotone",
        "f1-k-lipschitz",
        "f2-lipschitz",
        "g-quadratic",
    ];
    let mu = spec.mu;
    run_chunks(spec, samples, seed, &names, |sampler, rng, acc| {
        let a = sampler.draw(rng);
        let b = sampler.partner(rng, &a);
        let n = spec.n;
        let mut fa = vec![0.0; n];
        let mut fb = vec![0.0; n];
        let mut ga = vec![0.0; spec.g_len()];
        let mut gb = vec![0.0; spec.g_len()];

        let dp = diff_norm(&a.p, &b.p);
        let dq = diff_norm(&a.q, &b.q);
        let dk = {
            let diff: Vec<f64> = a.k.iter().zip(&b.k).map(|(x, y)| x - y).collect();
            spec.k_norm(&diff)
        };
        let mut conds: Vec<Condition> = Vec::with_capacity(4);

        (spec.f1)(&a.args(), &mut fa);
        (spec.f1)(&b.args(), &mut fb);
        check_finite("f1", &a, &fa)?;
        check_finite("f1", &b, &fb)?;
        let inner: f64 =
            a.p.iter()
                .zip(&b.p)
                .zip(fa.iter().zip(&fb))
                .map(|((p1, p2), (f1, f2))| (p1 - p2) * (f1 - f2))
                .sum();
        let bound = mu * (spec.rho.eval(dp * dp) + dp * (dq + dk));
        conds.push((
            names[0],
            ratio(inner, bound, dp * (norm(&fa) + norm(&fb))),
            None,
        ));

        // same (t, p, q), k from the partner
        let mixed = SamplePoint {
            k: b.k.clone(),
            ..a.clone()
        };
        (spec.f1)(&mixed.args(), &mut fb);
        let lhs = diff_norm(&fa, &fb);
        conds.push((
            names[1],
            ratio(lhs, mu * dk, norm(&fa) + norm(&fb)),
            Some(Witness {
                condition: names[1],
                ratio: 0.0,
                point: a.clone(),
                other: Some(mixed),
            }),
        ));

        (spec.f2)(&a.args(), &mut fa);
        (spec.f2)(&b.args(), &mut fb);
        check_finite("f2", &a, &fa)?;
        check_finite("f2", &b, &fb)?;
        let lhs = diff_norm(&fa, &fb);
        conds.push((
            names[2],
            ratio(lhs, mu * (dp + dq + dk), norm(&fa) + norm(&fb)),
            None,
        ));

        (spec.g)(&a.args(), &mut ga);
        (spec.g)(&b.args(), &mut gb);
        check_finite("g", &a, &ga)?;
        check_finite("g", &b, &gb)?;
        let lhs = diff_norm(&ga, &gb).powi(2);
        let scale = (norm(&ga) + norm(&gb)).powi(2);
        conds.push((
            names[3],
            ratio(lhs, mu * (dp * dp + dp * (dq + dk)), scale),
            None,
        ));

        for (idx, (name, r, w)) in conds.into_iter().enumerate() {
            acc.push(idx, r, || {
                let mut w = w.unwrap_or(Witness {
                    condition: name,
                    ratio: r,
                    point: a.clone(),
                    other: Some(b.clone()),
                });
                w.ratio = r;
                w
            });
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_spec() -> DriverSpec {
        let marks = MarkSpace::scalar(&[1.0], &[1.0]).unwrap();
        DriverSpec::zero(1, 1, 1, 1, marks, 0.0, 1.0).with_bounds(Arc::new(|_| 1.0), 1.0)
    }

    fn linear_f(a: f64) -> CoefFn {
        Arc::new(move |args: &DriverArgs<'_>, out: &mut [f64]| out[0] = a * args.p[0])
    }

    #[test]
    fn modulus_basics() {
        let log = ConcaveModulus::LogModulus;
        assert_eq!(log.eval(0.0), 0.0);
        assert!((log.eval(LOG_MODULUS_THRESHOLD) - LOG_MODULUS_THRESHOLD).abs() < 1e-16);
        assert_eq!(log.eval(5.0), log.eval(LOG_MODULUS_THRESHOLD));
        assert!(log.eval(1e-300) > 0.0);
        let lin = ConcaveModulus::Linear { slope: 2.0 };
        assert_eq!(lin.eval(3.0), 6.0);
    }

    #[test]
    fn modulus_is_concave_and_nondecreasing() {
        for rho in [
            ConcaveModulus::LogModulus,
            ConcaveModulus::Linear { slope: 0.7 },
        ] {
            let us: Vec<f64> = (0..400).map(|i| 1e-6 + i as f64 * 0.005).collect();
            for w in us.windows(3) {
                let (u, v, x) = (w[0], w[1], w[2]);
                let interp = rho.eval(u) + (rho.eval(x) - rho.eval(u)) * (v - u) / (x - u);
                assert!(rho.eval(v) >= interp - 1e-12);
                assert!(rho.eval(x) >= rho.eval(v));
            }
        }
    }

    #[test]
    fn divergence_surrogate_grows() {
        for rho in [
            ConcaveModulus::LogModulus,
            ConcaveModulus::Linear { slope: 1.0 },
        ] {
            let vals: Vec<f64> = [1e-2, 1e-4, 1e-6, 1e-8]
                .iter()
                .map(|e| rho.divergence_integral(*e))
                .collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]), "{rho:?}: {vals:?}");
        }
        // closed form on the log branch plus the flat tail:
        // ln ln(1/eps) + e·(1 - 1/e)
        let eps: f64 = 1e-4;
        let want = (1.0 / eps).ln().ln() + std::f64::consts::E - 1.0;
        let got = ConcaveModulus::LogModulus.divergence_integral(eps);
        assert!((got - want).abs() < 1e-8, "{got} vs {want}");
    }

    #[test]
    fn growth_zero_driver() {
        let mut spec = scalar_spec();
        spec.mu_t = Arc::new(|_| 1.0);
        let r = check_growth(&spec, 2000, 1).unwrap();
        assert_eq!(r.max_violation, 0.0);
        assert!(r.witnesses.is_empty());
    }

    #[test]
    fn growth_detects_doubled_linear() {
        let spec = scalar_spec().with_f2(linear_f(2.0));
        let r = check_growth(&spec, 20_000, 3).unwrap();
        assert!(!r.passed());
        assert!(
            r.max_violation > 1.9 && r.max_violation < 2.0,
            "{}",
            r.max_violation
        );
        assert!(!r.witnesses.is_empty());
        assert_eq!(r.witnesses[0].condition, "f2-growth");
    }

    #[test]
    fn growth_accepts_unit_linear() {
        let spec = scalar_spec().with_f2(linear_f(1.0));
        let r = check_growth(&spec, 20_000, 3).unwrap();
        assert!(r.passed(), "{}", r.max_violation);
        assert!(r.max_violation < 1.0);
    }

    #[test]
    fn growth_reports_non_finite() {
        let spec = scalar_spec().with_f1(Arc::new(|_, out: &mut [f64]| out[0] = f64::NAN));
        assert!(matches!(
            check_growth(&spec, 10, 0),
            Err(Error::Evaluation { what: "f1", .. })
        ));
    }

    #[test]
    fn monotone_dissipative_passes() {
        let spec = scalar_spec()
            .with_f1(linear_f(-1.0))
            .with_rho(ConcaveModulus::LogModulus);
        let r = check_monotone(&spec, 20_000, 5).unwrap();
        assert!(r.passed(), "{:?}", r.per_condition);
    }

    #[test]
    fn monotone_detects_expanding_f1() {
        // <Δp, 2μΔp> / (μ|Δp|²) = 2
        let mu = 1.0;
        let spec = scalar_spec().with_f1(linear_f(2.0 * mu));
        let r = check_monotone(&spec, 20_000, 5).unwrap();
        let worst = r
            .per_condition
            .iter()
            .find(|c| c.0 == "f1-monotone")
            .unwrap()
            .1;
        assert!((worst - 2.0).abs() < 1e-6, "{worst}");
    }

    #[test]
    fn monotone_constant_g_passes() {
        let spec = scalar_spec().with_g(Arc::new(|_, out: &mut [f64]| out[0] = 0.5));
        let r = check_monotone(&spec, 5000, 2).unwrap();
        let g = r
            .per_condition
            .iter()
            .find(|c| c.0 == "g-quadratic")
            .unwrap()
            .1;
        assert_eq!(g, 0.0);
    }

    #[test]
    fn samples_must_be_positive() {
        assert!(check_growth(&scalar_spec(), 0, 0).is_err());
    }

    #[test]
    fn checks_are_deterministic() {
        let spec = scalar_spec().with_f2(linear_f(2.0));
        let a = check_growth(&spec, 3000, 11).unwrap();
        let b = check_growth(&spec, 3000, 11).unwrap();
        assert_eq!(a.max_violation, b.max_violation);
    }

    #[test]
    fn g_k_dependence_probe() {
        let spec = scalar_spec();
        assert!(!spec.g_depends_on_k());
        let spec = spec.with_g(Arc::new(|a: &DriverArgs<'_>, out: &mut [f64]| {
            out[0] = a.k[0].tanh()
        }));
        assert!(spec.g_depends_on_k());
    }
}
