//! Regression Monte Carlo for the stopped backward doubly stochastic equation
//!
//! ```text
//! P_t = ξ + ∫_{t∧τ}^τ f(s, P, Q, K) ds + ∫_{t∧τ}^τ g(s, P, Q, K) dB_s
//!         - ∫_{t∧τ}^τ Q dW_s - ∫_{t∧τ}^τ ∫_Z K(z) Ñ(dz ds).
//! ```
//!
//! The solution is a functional of the backward noise `B`, so a solve fixes one
//! realization of `B` (the outer bundle) and regresses over `innerPaths` inner
//! paths of `(W, N)`. Walking back from the terminal index, with `E_i` the
//! regression on `X_{t_i}` over paths still inside the domain:
//!
//! ```text
//! Y_i    = P_{i+1} + g_{i+1} ΔB_i                      (g at the right endpoint)
//! Q_i    = E_i[(Y_i - E_i Y_i) ΔW_iᵀ] / dt
//! K_i(j) = E_i[(Y_i - E_i Y_i) ΔÑ_{i,j}] / (λ_j dt)
//! P_i    = E_i[Y_i] + f(t_i, X_i, P_i, Q_i, K_i) dt     (Picard fixed point)
//! ```
//!
//! Centring `Y_i` before multiplying by the increments leaves `Q` and `K`
//! unchanged in expectation and removes most of their variance. Paths that
//! have left the domain keep `P = ξ` and `Q = K = 0`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drivers::{DriverArgs, DriverSpec, TerminalSpec};
use crate::error::{Error, Result};
use crate::forward::{simulate_forward, ForwardModel, ForwardPath};
use crate::mollify::{mollify_driver, MollifierConfig};
use crate::noise::{generate_bundle, substream, NoiseBundle, NoiseDims, TimeGrid};
use crate::regression::Regressor;
pub use crate::regression::{BasisSpec, StepTable};

/// Starting point of the per-step Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PicardInit {
    Zero,
    /// Standard normal draws, a deterministic function of `seed` and the step.
    Random {
        seed: u64,
    },
    /// The regressed continuation value `E_i[Y_i]`.
    Continuation,
}

/// Where the backward-noise coefficient is evaluated on each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GEndpoint {
    /// `g(t_{i+1}, P_{i+1}, Q_{i+1}, K_{i+1}) ΔB_i`, the backward Itô sum.
    Next,
    /// `g(t_i, P_i, Q_i, K_i) ΔB_i`, solved inside the Picard fixed point.
    /// Converges to a different equation whenever `g` depends on `p`.
    Current,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackwardConfig {
    pub inner_paths: usize,
    pub basis: BasisSpec,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Mollify `f1` at this order before solving. Drivers with a
    /// non-Lipschitz modulus are mollified at `mollifier.order` when unset.
    pub mollify_order: Option<u32>,
    /// Quadrature settings used when mollifying.
    pub mollifier: MollifierConfig,
    pub picard_init: PicardInit,
    pub g_endpoint: GEndpoint,
}

impl Default for BackwardConfig {
    fn default() -> Self {
        Self {
            inner_paths: 10_000,
            basis: BasisSpec::default(),
            picard_tol: 1e-12,
            picard_max_iter: 100,
            mollify_order: None,
            mollifier: MollifierConfig::default(),
            picard_init: PicardInit::Zero,
            g_endpoint: GEndpoint::Next,
        }
    }
}

impl BackwardConfig {
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        let basis = self.basis.size(state_dim);
        if self.inner_paths < 10 * basis {
            return Err(Error::Config(format!(
                "inner_paths = {} is below 10 x basis size ({basis})",
                self.inner_paths
            )));
        }
        if !(self.picard_tol > 0.0) {
            return Err(Error::Config("picard_tol must be positive".into()));
        }
        if self.picard_max_iter == 0 {
            return Err(Error::Config("picard_max_iter must be positive".into()));
        }
        self.mollifier.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub active_paths: usize,
    pub basis_len: usize,
    pub ridge: bool,
    pub picard_iterations: usize,
    pub residuals: Vec<f64>,
}

/// Grid functions `(P, Q, K)` on every inner path.
#[derive(Debug, Clone)]
pub struct BackwardSolution {
    grid: TimeGrid,
    n: usize,
    d: usize,
    r: usize,
    paths: usize,
    intensities: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    tau_index: Vec<usize>,
    tables: Vec<Option<StepTable>>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub mollified_order: Option<u32>,
    /// Set when `g` reacts to `k`: regression on `X_{t_i}` alone may then miss
    /// part of the conditioning.
    pub g_depends_on_k: bool,
}

/// Discrete `S²`, `M²` and `F²_N` norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolutionNorms {
    pub s_sq: f64,
    pub m_sq: f64,
    pub f_sq: f64,
}

impl SolutionNorms {
    pub fn total(&self) -> f64 {
        self.s_sq + self.m_sq + self.f_sq
    }
}

impl BackwardSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    /// `P` at grid index `i` on path `j`.
    pub fn p(&self, i: usize, j: usize) -> &[f64] {
        let at = (i * self.paths + j) * self.n;
        &self.p[at..at + self.n]
    }

    /// `Q` at step `i` on path `j`, `n × d` row-major.
    pub fn q(&self, i: usize, j: usize) -> &[f64] {
        let w = self.n * self.d;
        let at = (i * self.paths + j) * w;
        &self.q[at..at + w]
    }

    /// `K` at step `i` on path `j`, one `R^n` block per mark.
    pub fn k(&self, i: usize, j: usize) -> &[f64] {
        let w = self.n * self.r;
        let at = (i * self.paths + j) * w;
        &self.k[at..at + w]
    }

    pub fn tau_index(&self, j: usize) -> usize {
        self.tau_index[j]
    }

    /// Mean of `P_0` over inner paths (all paths share `X_0`).
    pub fn p0(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for j in 0..self.paths {
            out.iter_mut().zip(self.p(0, j)).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= self.paths as f64);
        out
    }

    /// Sample mean of `|ξ|²`.
    pub fn terminal_second_moment(&self) -> f64 {
        (0..self.paths)
            .map(|j| {
                self.p(self.grid.steps(), j)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / self.paths as f64
    }

    /// Sample standard error of the mean of the first component of `ξ`.
    pub fn terminal_stderr(&self) -> f64 {
        let vals: Vec<f64> = (0..self.paths)
            .map(|j| self.p(self.grid.steps(), j)[0])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var =
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len().max(2) - 1) as f64;
        (var / vals.len() as f64).sqrt()
    }

    /// Regressed `E_i[Y_i]` at state `x`; `None` when no path was active at `i`.
    pub fn continuation_at(&self, i: usize, x: &[f64]) -> Option<Vec<f64>> {
        self.tables.get(i)?.as_ref().map(|t| t.eval(0, x))
    }

    /// Regressed `Q_i` at state `x`.
    pub fn q_at(&self, i: usize, x: &[f64]) -> Option<Vec<f64>> {
        self.tables.get(i)?.as_ref().map(|t| t.eval(1, x))
    }

    /// Regressed `K_i` at state `x`.
    pub fn k_at(&self, i: usize, x: &[f64]) -> Option<Vec<f64>> {
        self.tables.get(i)?.as_ref().map(|t| t.eval(2, x))
    }

    pub fn norms(&self) -> SolutionNorms {
        solution_norms(self)
    }
}

/// `s_sq = E max_i |P_i|²`, `m_sq = E Σ_i |Q_i|² dt`,
/// `f_sq = E Σ_i Σ_j |K_i(z_j)|² λ_j dt`, averaged over inner paths.
pub fn solution_norms(sol: &BackwardSolution) -> SolutionNorms {
    let dt = sol.grid.dt();
    let steps = sol.grid.steps();
    let mut acc = SolutionNorms {
        s_sq: 0.0,
        m_sq: 0.0,
        f_sq: 0.0,
    };
    for j in 0..sol.paths {
        let sup = (0..=steps)
            .map(|i| sol.p(i, j).iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        let mut m = 0.0;
        let mut f = 0.0;
        for i in 0..steps {
            m += sol.q(i, j).iter().map(|v| v * v).sum::<f64>() * dt;
            f += sol
                .k(i, j)
                .chunks(sol.n)
                .zip(&sol.intensities)
                .map(|(kj, l)| l * kj.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
                * dt;
        }
        acc.s_sq += sup;
        acc.m_sq += m;
        acc.f_sq += f;
    }
    let n = sol.paths as f64;
    SolutionNorms {
        s_sq: acc.s_sq / n,
        m_sq: acc.m_sq / n,
        f_sq: acc.f_sq / n,
    }
}

/// Per-step data held fixed during Picard iteration, for the active paths.
pub struct PicardContext<'a> {
    pub spec: &'a DriverSpec,
    pub t: f64,
    pub dt: f64,
    /// States `X_{t_i}`, `paths × m`.
    pub x: &'a [f64],
    pub m: usize,
    /// `E_i[Y_i]`, `paths × n`.
    pub continuation: &'a [f64],
    pub q: &'a [f64],
    pub k: &'a [f64],
    /// `ΔB_i`; only used with [`GEndpoint::Current`].
    pub db: &'a [f64],
    pub endpoint: GEndpoint,
}

/// One application of `P ↦ E_i[Y_i] + f(t_i, X_i, P, Q_i, K_i) dt`
/// (plus `g(t_i, ·) ΔB_i` for [`GEndpoint::Current`]) to every path. `Q` and `K`
/// are fixed by the regression. Returns the next iterate and the max-norm
/// residual `|next - prev|`.
pub fn picard_step(ctx: &PicardContext<'_>, prev: &[f64]) -> (Vec<f64>, f64) {
    let spec = ctx.spec;
    let n = spec.n;
    let (qw, kw, gw) = (spec.q_len(), spec.k_len(), spec.g_len());
    let mut next = vec![0.0; prev.len()];
    let residual = next
        .par_chunks_mut(n)
        .enumerate()
        .map_init(
            || (vec![0.0; n], vec![0.0; gw]),
            |(scratch, g), (j, out)| {
                let args = DriverArgs {
                    t: ctx.t,
                    x: &ctx.x[j * ctx.m..(j + 1) * ctx.m],
                    p: &prev[j * n..(j + 1) * n],
                    q: &ctx.q[j * qw..(j + 1) * qw],
                    k: &ctx.k[j * kw..(j + 1) * kw],
                };
                spec.eval_f(&args, out, scratch);
                let cont = &ctx.continuation[j * n..(j + 1) * n];
                for a in 0..n {
                    out[a] = cont[a] + out[a] * ctx.dt;
                }
                if ctx.endpoint == GEndpoint::Current && spec.l > 0 {
                    (spec.g)(&args, g);
                    for a in 0..n {
                        out[a] += (0..spec.l)
                            .map(|c| g[a * spec.l + c] * ctx.db[c])
                            .sum::<f64>();
                    }
                }
                out.iter()
                    .zip(args.p)
                    .map(|(u, v)| (u - v).abs())
                    .fold(
                        0.0,
                        |acc: f64, r| if r.is_nan() { f64::NAN } else { acc.max(r) },
                    )
            },
        )
        .reduce(
            || 0.0,
            |a: f64, b: f64| {
                if a.is_nan() || b.is_nan() {
                    f64::NAN
                } else {
                    a.max(b)
                }
            },
        );
    (next, residual)
}

/// The outer realization of `B` used for run `run` under `seed`.
pub fn outer_bundle(grid: &TimeGrid, l: usize, seed: u64, run: u64) -> Result<NoiseBundle> {
    let marks = crate::noise::MarkSpace::scalar(&[0.0], &[1.0])?;
    generate_bundle(grid, NoiseDims { d: 0, l }, &marks, seed, run)
}

struct Inner {
    bundle: NoiseBundle,
    path: ForwardPath,
}

fn check_dims(
    model: &ForwardModel,
    spec: &DriverSpec,
    terminal: &TerminalSpec,
    outer: &NoiseBundle,
) -> Result<()> {
    let mismatch = |what: &str| Err(Error::Dimension(what.to_string()));
    if spec.d != model.d {
        return mismatch("driver d differs from forward model d");
    }
    if spec.x_dim != model.m {
        return mismatch("driver x_dim differs from forward state dimension");
    }
    if spec.marks != model.marks {
        return mismatch("driver and forward model use different mark spaces");
    }
    if terminal.n != spec.n {
        return mismatch("terminal dimension differs from driver n");
    }
    if outer.dims().l != spec.l {
        return mismatch("outer bundle backward dimension differs from driver l");
    }
    Ok(())
}

/// Solve on the grid of `outer_b`, using its backward increments as the fixed
/// `B` path and `seed` for the inner `(W, N)` paths.
pub fn solve_backward(
    model: &ForwardModel,
    spec: &DriverSpec,
    terminal: &TerminalSpec,
    cfg: &BackwardConfig,
    outer_b: &NoiseBundle,
    seed: u64,
) -> Result<BackwardSolution> {
    spec.validate()?;
    model.validate()?;
    cfg.validate(model.m)?;
    check_dims(model, spec, terminal, outer_b)?;
    let grid = *outer_b.grid();
    let dt = grid.dt();
    if spec.mu * dt >= 1.0 {
        return Err(Error::Config(format!(
            "mu * dt = {} must be below 1 for the per-step contraction",
            spec.mu * dt
        )));
    }

    // non-Lipschitz drivers are always smoothed, at the configured order
    let order = cfg.mollify_order.or_else(|| {
        (!spec.rho.is_lipschitz() && spec.mollified_order.is_none()).then_some(cfg.mollifier.order)
    });
    let smoothed;
    let spec = match order {
        Some(order) => {
            let mcfg = MollifierConfig {
                order,
                ..cfg.mollifier
            };
            smoothed = mollify_driver(spec, &mcfg)?;
            &smoothed
        }
        None => spec,
    };

    let (n, d, l, r, m) = (spec.n, spec.d, spec.l, spec.r(), model.m);
    let (qw, kw, gw) = (spec.q_len(), spec.k_len(), spec.g_len());
    let paths = cfg.inner_paths;
    let steps = grid.steps();
    let dims = NoiseDims { d, l: 0 };

    let inner: Vec<Inner> = (0..paths)
        .into_par_iter()
        .map(|j| {
            let bundle = generate_bundle(&grid, dims, &model.marks, seed, j as u64)?;
            let path = simulate_forward(model, &bundle)?;
            Ok(Inner { bundle, path })
        })
        .collect::<Result<_>>()?;

    let mut p = vec![0.0; (steps + 1) * paths * n];
    let mut q = vec![0.0; steps * paths * qw];
    let mut k = vec![0.0; steps * paths * kw];
    let tau_index: Vec<usize> = inner.iter().map(|s| s.path.exit_index()).collect();

    // terminal values, and P frozen from the exit index on
    let xi: Vec<f64> = inner
        .par_iter()
        .flat_map_iter(|s| terminal.eval(s.path.stopped_state(), s.path.exit_time()))
        .collect();
    if let Some(bad) = xi.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            what: "terminal",
            t: grid.horizon(),
            p: inner[bad / n].path.stopped_state().to_vec(),
        });
    }
    for (j, tau) in tau_index.iter().enumerate() {
        for i in *tau..=steps {
            let at = (i * paths + j) * n;
            p[at..at + n].copy_from_slice(&xi[j * n..(j + 1) * n]);
        }
    }

    // g at the right endpoint of the current step, per path
    let mut g_next = vec![0.0; paths * gw];
    if l > 0 {
        let zq = vec![0.0; qw];
        let zk = vec![0.0; kw];
        g_next.par_chunks_mut(gw).enumerate().for_each(|(j, out)| {
            let s = &inner[j].path;
            (spec.g)(
                &DriverArgs {
                    t: s.exit_time(),
                    x: s.stopped_state(),
                    p: &xi[j * n..(j + 1) * n],
                    q: &zq,
                    k: &zk,
                },
                out,
            );
        });
    }

    let mut tables: Vec<Option<StepTable>> = vec![None; steps];
    let mut diagnostics = Vec::with_capacity(steps);
    let lambdas = model.marks.intensities().to_vec();

    for i in (0..steps).rev() {
        let active: Vec<usize> = (0..paths).filter(|&j| i < tau_index[j]).collect();
        let na = active.len();
        if na == 0 {
            diagnostics.push(StepDiagnostics {
                step: i,
                active_paths: 0,
                basis_len: 0,
                ridge: false,
                picard_iterations: 0,
                residuals: Vec::new(),
            });
            continue;
        }
        let t = grid.time(i);
        let db = outer_b.db(i);

        let states: Vec<f64> = active
            .iter()
            .flat_map(|&j| inner[j].path.state(i).iter().copied())
            .collect();
        // shrink the basis while the active sample is too small for it
        let mut basis = cfg.basis;
        while basis.max_total > 0 && na < 10 * basis.size(m) {
            basis = basis.truncated(basis.max_total - 1);
        }
        let reg = Regressor::new(&states, m, &basis, i)?;

        let mut y = Vec::with_capacity(na * n);
        for &j in &active {
            let start = y.len();
            y.extend_from_slice(&p[((i + 1) * paths + j) * n..((i + 1) * paths + j + 1) * n]);
            if cfg.g_endpoint == GEndpoint::Next && l > 0 {
                let g = &g_next[j * gw..(j + 1) * gw];
                for (a, va) in y[start..].iter_mut().enumerate() {
                    *va += (0..l).map(|c| g[a * l + c] * db[c]).sum::<f64>();
                }
            }
        }
        let cont_fit = reg.fit(&y, n);
        let mut cont = vec![0.0; na * n];
        cont.par_chunks_mut(n)
            .enumerate()
            .for_each(|(row, out)| reg.fitted(&cont_fit, row, out));

        // martingale-part targets from the centred continuation
        let mut zq = vec![0.0; na * qw];
        let mut zk = vec![0.0; na * kw];
        let mut resid = vec![0.0; n];
        for (row, &j) in active.iter().enumerate() {
            for a in 0..n {
                resid[a] = y[row * n + a] - cont[row * n + a];
            }
            let dw = inner[j].bundle.dw(i);
            for a in 0..n {
                for c in 0..d {
                    zq[row * qw + a * d + c] = resid[a] * dw[c] / dt;
                }
            }
            for jm in 0..r {
                let dn = inner[j].bundle.compensated(i, jm) / (lambdas[jm] * dt);
                for a in 0..n {
                    zk[row * kw + jm * n + a] = resid[a] * dn;
                }
            }
        }
        let q_fit = reg.fit(&zq, qw);
        let k_fit = reg.fit(&zk, kw);
        let mut q_i = vec![0.0; na * qw];
        let mut k_i = vec![0.0; na * kw];
        if qw > 0 {
            q_i.par_chunks_mut(qw)
                .enumerate()
                .for_each(|(row, out)| reg.fitted(&q_fit, row, out));
        }
        if kw > 0 {
            k_i.par_chunks_mut(kw)
                .enumerate()
                .for_each(|(row, out)| reg.fitted(&k_fit, row, out));
        }

        let ctx = PicardContext {
            spec,
            t,
            dt,
            x: &states,
            m,
            continuation: &cont,
            q: &q_i,
            k: &k_i,
            db,
            endpoint: cfg.g_endpoint,
        };
        let mut current = match cfg.picard_init {
            PicardInit::Zero => vec![0.0; na * n],
            PicardInit::Continuation => cont.clone(),
            PicardInit::Random { seed } => {
                let mut rng = substream(seed, i as u64, 0x7069);
                (0..na * n)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        };
        let mut residuals = Vec::new();
        let mut converged = false;
        for _ in 0..cfg.picard_max_iter {
            let (next, res) = picard_step(&ctx, &current);
            residuals.push(res);
            let scale = 1.0 + next.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            current = next;
            if res.is_nan() || !scale.is_finite() {
                break;
            }
            if res <= cfg.picard_tol * scale {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::Divergence { step: i, residuals });
        }

        for (row, &j) in active.iter().enumerate() {
            let at = (i * paths + j) * n;
            p[at..at + n].copy_from_slice(&current[row * n..(row + 1) * n]);
            q[(i * paths + j) * qw..(i * paths + j + 1) * qw]
                .copy_from_slice(&q_i[row * qw..(row + 1) * qw]);
            k[(i * paths + j) * kw..(i * paths + j + 1) * kw]
                .copy_from_slice(&k_i[row * kw..(row + 1) * kw]);
        }
        if cfg.g_endpoint == GEndpoint::Next && l > 0 {
            for (row, &j) in active.iter().enumerate() {
                (spec.g)(
                    &DriverArgs {
                        t,
                        x: &states[row * m..(row + 1) * m],
                        p: &current[row * n..(row + 1) * n],
                        q: &q_i[row * qw..(row + 1) * qw],
                        k: &k_i[row * kw..(row + 1) * kw],
                    },
                    &mut g_next[j * gw..(j + 1) * gw],
                );
            }
        }

        diagnostics.push(StepDiagnostics {
            step: i,
            active_paths: na,
            basis_len: reg.basis_len(),
            ridge: reg.ridge,
            picard_iterations: residuals.len(),
            residuals,
        });
        tables[i] = Some(reg.table(vec![cont_fit, q_fit, k_fit]));
    }
    diagnostics.reverse();

    Ok(BackwardSolution {
        grid,
        n,
        d,
        r,
        paths,
        intensities: lambdas,
        p,
        q,
        k,
        tau_index,
        tables,
        diagnostics,
        mollified_order: order,
        g_depends_on_k: l > 0 && spec.g_depends_on_k(),
    })
}
