//! Smoothing of a non-Lipschitz `f1` by convolution in `(p, q)` with the
//! product bump kernel `J(p, q) = J1(p) J2(q)`, scaled to radius `1/n`:
//!
//! ```text
//! f1ⁿ(t, p, q, k) = ∫ f1(t, p - p̄/n, q - q̄/n, k) J(p̄, q̄) dp̄ dq̄
//! ```
//!
//! Each factor is discretized on its own block: a tensor Gauss–Legendre rule on
//! `[-1, 1]^dim` with the kernel extended by zero outside the unit ball when
//! `dim <= 4`, and symmetric kernel samples otherwise. Node weights are
//! normalized to sum to one, and both rules are symmetric under `u -> -u`, so
//! affine functions are reproduced exactly.
//!
//! The discrete convolution is a finite sum of shifted copies of `f1`; it is a
//! Lipschitz approximant when the quadrature resolves the kernel, which is what
//! [`estimate_lipschitz`] probes.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drivers::{ArgSampler, DriverArgs, DriverSpec};
use crate::error::{Error, Result};
use crate::noise::substream;
use crate::quad;

/// Largest block dimension handled by tensor quadrature.
pub const TENSOR_DIM_CAP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MollifierConfig {
    /// Smoothing order; the kernel radius is `1/order`.
    pub order: u32,
    /// Gauss–Legendre nodes per axis.
    pub quad_nodes: usize,
    /// Kernel samples per block above [`TENSOR_DIM_CAP`] dimensions.
    pub mc_fallback_samples: usize,
}

impl Default for MollifierConfig {
    fn default() -> Self {
        Self {
            order: 8,
            quad_nodes: 12,
            mc_fallback_samples: 4096,
        }
    }
}

impl MollifierConfig {
    pub fn with_order(order: u32) -> Self {
        Self {
            order,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::Config("mollifier order must be >= 1".into()));
        }
        if self.quad_nodes < 3 {
            return Err(Error::Config("mollifier quad_nodes must be >= 3".into()));
        }
        if self.mc_fallback_samples < 2 {
            return Err(Error::Config(
                "mollifier mc_fallback_samples must be >= 2".into(),
            ));
        }
        Ok(())
    }
}

fn unnormalized_bump(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// `2 π^{k/2} / Γ(k/2)`, the area of the unit sphere in `R^k`.
fn sphere_area(k: usize) -> f64 {
    // Γ(k/2) by recurrence from Γ(1/2) or Γ(1)
    let mut gamma = if k.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    let mut s = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    while s < k as f64 / 2.0 - 1e-9 {
        gamma *= s;
        s += 1.0;
    }
    2.0 * PI.powf(k as f64 / 2.0) / gamma
}

/// `c_0` such that `c_0 ∫_{|x|<1} exp(-1/(1-|x|²)) dx = 1` in `R^dim`.
pub fn normalizing_constant(dim: usize) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<usize, f64>>> = OnceLock::new();
    if dim == 0 {
        return 1.0;
    }
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(c) = cache.lock().expect("cache poisoned").get(&dim) {
        return *c;
    }
    let radial = quad::integrate(
        |r| r.powi(dim as i32 - 1) * unnormalized_bump(r * r),
        0.0,
        1.0,
        64,
        16,
    );
    let c = 1.0 / (sphere_area(dim) * radial);
    cache.lock().expect("cache poisoned").insert(dim, c);
    c
}

/// The normalized bump `J(x) = c_0 exp(-1/(1-|x|²))` on the unit ball of
/// `R^dim`, zero outside.
pub fn bump_kernel(x: &[f64], dim: usize) -> f64 {
    debug_assert_eq!(x.len(), dim);
    let r2: f64 = x.iter().map(|v| v * v).sum();
    if r2 >= 1.0 {
        0.0
    } else {
        normalizing_constant(dim) * unnormalized_bump(r2)
    }
}

/// Discrete kernel for one block: offsets in the unit ball and weights.
#[derive(Debug, Clone)]
pub struct KernelRule {
    pub dim: usize,
    pub offsets: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Sum of the weights before normalization, i.e. the quadrature estimate
    /// of `∫ J`. Exactly one for the sampled rule.
    pub raw_mass: f64,
}

impl KernelRule {
    pub fn build(dim: usize, cfg: &MollifierConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if dim == 0 {
            return Ok(Self {
                dim,
                offsets: vec![Vec::new()],
                weights: vec![1.0],
                raw_mass: 1.0,
            });
        }
        let mut rule = if dim <= TENSOR_DIM_CAP {
            Self::tensor(dim, cfg.quad_nodes)
        } else {
            Self::sampled(
                dim,
                cfg.mc_fallback_samples,
                &mut substream(seed, dim as u64, 0x6d6f),
            )
        };
        if !(rule.raw_mass > f64::MIN_POSITIVE) {
            return Err(Error::Config(format!(
                "kernel quadrature has no mass in dimension {dim} with {} nodes",
                cfg.quad_nodes
            )));
        }
        let mass = rule.raw_mass;
        rule.weights.iter_mut().for_each(|w| *w /= mass);
        Ok(rule)
    }

    fn tensor(dim: usize, nodes: usize) -> Self {
        let (x, w) = quad::gauss_legendre(nodes);
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let mut raw_mass = 0.0;
        let mut idx = vec![0usize; dim];
        loop {
            let point: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let weight = idx.iter().map(|&i| w[i]).product::<f64>() * bump_kernel(&point, dim);
            if weight > 0.0 {
                raw_mass += weight;
                offsets.push(point);
                weights.push(weight);
            }
            // odometer increment
            let mut a = 0;
            loop {
                if a == dim {
                    return Self {
                        dim,
                        offsets,
                        weights,
                        raw_mass,
                    };
                }
                idx[a] += 1;
                if idx[a] < nodes {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
        }
    }

    /// Rejection samples from the kernel density, paired with their mirror
    /// images.
    fn sampled(dim: usize, samples: usize, rng: &mut ChaCha8Rng) -> Self {
        let pairs = samples.div_ceil(2);
        let mut offsets = Vec::with_capacity(2 * pairs);
        let peak = (-1.0f64).exp();
        while offsets.len() < 2 * pairs {
            let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r2: f64 = u.iter().map(|v| v * v).sum();
            if rng.random::<f64>() * peak < unnormalized_bump(r2) {
                offsets.push(u.iter().map(|v| -v).collect());
                offsets.push(u);
            }
        }
        let n = offsets.len();
        Self {
            dim,
            offsets,
            weights: vec![1.0; n],
            raw_mass: n as f64,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Quadrature estimate of `∫ J` over `R^dim` with `nodes` per axis, before
/// any normalization.
pub fn kernel_mass(dim: usize, nodes: usize) -> f64 {
    KernelRule::tensor(dim, nodes).raw_mass
}

struct JointRule {
    p_offsets: Vec<f64>,
    q_offsets: Vec<f64>,
    weights: Vec<f64>,
    dp: usize,
    dq: usize,
}

impl JointRule {
    fn new(p: &KernelRule, q: &KernelRule) -> Self {
        let mut rule = JointRule {
            p_offsets: Vec::new(),
            q_offsets: Vec::new(),
            weights: Vec::new(),
            dp: p.dim,
            dq: q.dim,
        };
        for (po, pw) in p.offsets.iter().zip(&p.weights) {
            for (qo, qw) in q.offsets.iter().zip(&q.weights) {
                rule.p_offsets.extend_from_slice(po);
                rule.q_offsets.extend_from_slice(qo);
                rule.weights.push(pw * qw);
            }
        }
        rule
    }
}

/// Replace `f1` by its mollification of order `cfg.order`; `f2` and `g` pass
/// through, and `k` is not smoothed.
pub fn mollify_driver(spec: &DriverSpec, cfg: &MollifierConfig) -> Result<DriverSpec> {
    let dp = spec.n;
    let dq = spec.q_len();
    let p_rule = KernelRule::build(dp, cfg, 0)?;
    let q_rule = KernelRule::build(dq, cfg, 1)?;
    let rule = Arc::new(JointRule::new(&p_rule, &q_rule));
    let radius = 1.0 / cfg.order as f64;
    let inner = spec.f1.clone();
    let n = spec.n;

    let f1 = Arc::new(move |args: &DriverArgs<'_>, out: &mut [f64]| {
        let mut p = vec![0.0; rule.dp];
        let mut q = vec![0.0; rule.dq];
        let mut val = vec![0.0; n];
        out.fill(0.0);
        for (i, w) in rule.weights.iter().enumerate() {
            let po = &rule.p_offsets[i * rule.dp..(i + 1) * rule.dp];
            let qo = &rule.q_offsets[i * rule.dq..(i + 1) * rule.dq];
            p.iter_mut()
                .zip(args.p.iter().zip(po))
                .for_each(|(d, (a, o))| *d = a - radius * o);
            q.iter_mut()
                .zip(args.q.iter().zip(qo))
                .for_each(|(d, (a, o))| *d = a - radius * o);
            inner(
                &DriverArgs {
                    p: &p,
                    q: &q,
                    ..*args
                },
                &mut val,
            );
            out.iter_mut().zip(&val).for_each(|(o, v)| *o += w * v);
        }
    });

    let mut smoothed = spec.clone().with_f1(f1);
    smoothed.mollified_order = Some(cfg.order);
    Ok(smoothed)
}

/// Largest sampled difference quotient
/// `|f(a) - f(b)| / (|Δp| + |Δq| + ‖Δk‖)` of `f = f1 + f2` over pairs sharing
/// `(t, x)`.
///
/// Pairs whose relative separation is below `1e-5` are skipped so rounding in
/// `f` does not masquerade as slope.
pub fn estimate_lipschitz(spec: &DriverSpec, samples: usize, seed: u64) -> f64 {
    let mut rng = substream(seed, 0, 0x6c69);
    let mut sampler = ArgSampler::new(spec);
    let n = spec.n;
    let mut fa = vec![0.0; n];
    let mut fb = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut worst: f64 = 0.0;
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    for _ in 0..samples {
        let a = sampler.draw(&mut rng);
        let b = sampler.partner(&mut rng, &a);
        let diff =
            |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x - y).collect() };
        let dp = norm(&diff(&a.p, &b.p));
        let dq = norm(&diff(&a.q, &b.q));
        let dk = spec.k_norm(&diff(&a.k, &b.k));
        let sep = dp + dq + dk;
        let size = norm(&a.p)
            + norm(&b.p)
            + norm(&a.q)
            + norm(&b.q)
            + spec.k_norm(&a.k)
            + spec.k_norm(&b.k);
        if sep == 0.0 || sep < 1e-5 * size {
            continue;
        }
        spec.eval_f(&a.args(), &mut fa, &mut scratch);
        spec.eval_f(&b.args(), &mut fb, &mut scratch);
        worst = worst.max(norm(&diff(&fa, &fb)) / sep);
    }
    worst
}
