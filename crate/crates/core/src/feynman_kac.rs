//! `u(t, x) = P_t` for the backward equation started from `X_t = x`, with
//! `ξ = Φ(X_τ)` serving as both terminal and lateral boundary data.
//!
//! When `g ≡ 0` the field `u` is deterministic and solves
//!
//! ```text
//! u_t + L u + f(t, x, u, ∇u σ, u(t, x + h(·)) - u) = 0,
//! L u = b·∇u + ½ tr(σσᵀ ∇²u) + Σ_j λ_j (u(x + h(z_j)) - u(x) - h(z_j)·∇u),
//! ```
//!
//! which [`generator_residual`] checks by finite differences on an estimated
//! surface.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::{outer_bundle, solve_backward, BackwardConfig};
use crate::drivers::{DriverArgs, DriverSpec, TerminalSpec};
use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::noise::{derive_seed, MarkSpace, TimeGrid};

pub type PhiFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct FKProblem {
    pub name: String,
    pub forward: ForwardModel,
    pub spec: DriverSpec,
    /// Terminal and boundary data, `R^m -> R^n`.
    pub phi: PhiFn,
}

impl std::fmt::Debug for FKProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FKProblem")
            .field("name", &self.name)
            .field("forward", &self.forward)
            .field("spec", &self.spec)
            .finish_non_exhaustive()
    }
}

impl FKProblem {
    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    pub fn phi_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        (self.phi)(x, &mut out);
        out
    }
}

pub const FK_PROBLEMS: [&str; 2] = ["heat-quadratic", "jump-linear"];

/// Marks and intensities of the pure-jump problem.
pub const JUMP_LINEAR_MARKS: [f64; 3] = [-1.0, 0.5, 1.5];
pub const JUMP_LINEAR_INTENSITIES: [f64; 3] = [0.5, 1.0, 0.4];

/// `heat-quadratic`: `dX = dW`, `Φ(x) = |x|²`, `f = g = 0` on `[0, horizon]`.
/// `jump-linear`: `dX = ∫ z Ñ(dz dt)` over three marks, `Φ(x) = x`, `f = g = 0`.
pub fn fk_problem(name: &str, horizon: f64) -> Result<FKProblem> {
    match name {
        "heat-quadratic" => {
            let marks = MarkSpace::scalar(&[1.0], &[1.0])?;
            Ok(FKProblem {
                name: name.into(),
                forward: ForwardModel::brownian(1, 1.0, marks.clone(), vec![0.0]),
                spec: DriverSpec::zero(1, 1, 1, 1, marks, 0.0, horizon),
                phi: Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x.iter().map(|v| v * v).sum()),
            })
        }
        "jump-linear" => {
            let marks = MarkSpace::scalar(&JUMP_LINEAR_MARKS, &JUMP_LINEAR_INTENSITIES)?;
            let forward = ForwardModel::brownian(1, 0.0, marks.clone(), vec![0.0])
                .with_jumps(Arc::new(|_, _, z: &[f64], out: &mut [f64]| out[0] = z[0]));
            Ok(FKProblem {
                name: name.into(),
                forward,
                spec: DriverSpec::zero(1, 1, 1, 1, marks, 0.0, horizon),
                phi: Arc::new(|x: &[f64], out: &mut [f64]| out[0] = x[0]),
            })
        }
        other => Err(Error::UnknownName {
            name: other.into(),
            expected: FK_PROBLEMS.join(", "),
        }),
    }
}

/// Statistics of `P_t` over outer runs of the backward noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UEstimate {
    pub t: f64,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    /// Spread of `P_t` across outer runs.
    pub std: Vec<f64>,
    /// Standard error of `mean`: the larger of the between-run error and the
    /// inner Monte Carlo error of the terminal sample.
    pub stderr: Vec<f64>,
    pub steps: usize,
    pub outer_runs: u64,
}

/// Estimate `u(t, x)` from `outer_runs` independent solves on `steps` steps.
#[allow(clippy::too_many_arguments)]
pub fn estimate_u(
    problem: &FKProblem,
    t: f64,
    x: &[f64],
    steps: usize,
    cfg: &BackwardConfig,
    outer_runs: u64,
    seed: u64,
) -> Result<UEstimate> {
    let horizon = problem.horizon();
    let n = problem.n();
    if !(t >= problem.spec.t0 && t <= horizon) {
        return Err(Error::InvalidGrid(format!(
            "t = {t} is outside [{}, {horizon}]",
            problem.spec.t0
        )));
    }
    if x.len() != problem.forward.m {
        return Err(Error::Dimension(format!(
            "x has {} components, state has {}",
            x.len(),
            problem.forward.m
        )));
    }
    if !problem.forward.domain.contains(x) {
        return Err(Error::OutsideDomain { x: x.to_vec() });
    }
    if outer_runs == 0 {
        return Err(Error::Config("outer_runs must be positive".into()));
    }
    if horizon - t <= 1e-12 * (1.0 + horizon.abs()) {
        return Ok(UEstimate {
            t,
            x: x.to_vec(),
            mean: problem.phi_at(x),
            std: vec![0.0; n],
            stderr: vec![0.0; n],
            steps: 0,
            outer_runs,
        });
    }

    let forward = problem.forward.clone().starting_at(t, x.to_vec());
    let phi = problem.phi.clone();
    let terminal = TerminalSpec::new(
        n,
        Arc::new(move |x: &[f64], _, out: &mut [f64]| phi(x, out)),
    );
    let grid = TimeGrid::new(t, horizon, steps)?;

    let mut values = Vec::with_capacity(outer_runs as usize);
    let mut inner_var = vec![0.0; n];
    for run in 0..outer_runs {
        let outer = outer_bundle(&grid, problem.spec.l, seed, run)?;
        let sol = solve_backward(
            &forward,
            &problem.spec,
            &terminal,
            cfg,
            &outer,
            derive_seed(seed, run),
        )?;
        values.push(sol.p0());
        let paths = sol.paths() as f64;
        for (a, v) in inner_var.iter_mut().enumerate() {
            let xs: Vec<f64> = (0..sol.paths()).map(|j| sol.p(steps, j)[a]).collect();
            let mean = xs.iter().sum::<f64>() / paths;
            let var = xs.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (paths - 1.0);
            *v += var / paths;
        }
    }
    let runs = outer_runs as f64;
    let mean: Vec<f64> = (0..n)
        .map(|a| values.iter().map(|v| v[a]).sum::<f64>() / runs)
        .collect();
    let std: Vec<f64> = (0..n)
        .map(|a| {
            if outer_runs < 2 {
                0.0
            } else {
                (values.iter().map(|v| (v[a] - mean[a]).powi(2)).sum::<f64>() / (runs - 1.0)).sqrt()
            }
        })
        .collect();
    let stderr = (0..n)
        .map(|a| (std[a] / runs.sqrt()).max(inner_var[a].sqrt() / runs))
        .collect();
    Ok(UEstimate {
        t,
        x: x.to_vec(),
        mean,
        std,
        stderr,
        steps,
        outer_runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// Row-major over `(times, points)`.
    pub cells: Vec<UEstimate>,
}

impl Surface {
    pub fn cell(&self, i: usize, j: usize) -> &UEstimate {
        &self.cells[i * self.points.len() + j]
    }

    /// Columns `t, x0.., u_mean0.., u_std0.., u_stderr0..`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let (m, n) = match self.cells.first() {
            Some(c) => (c.x.len(), c.mean.len()),
            None => (0, 0),
        };
        let mut header = vec!["t".to_string()];
        header.extend((0..m).map(|a| format!("x{a}")));
        for prefix in ["u_mean", "u_std", "u_stderr"] {
            header.extend((0..n).map(|a| format!("{prefix}{a}")));
        }
        writeln!(w, "{}", header.join(","))?;
        for c in &self.cells {
            let mut row = vec![format!("{}", c.t)];
            row.extend(c.x.iter().map(|v| format!("{v}")));
            for col in [&c.mean, &c.std, &c.stderr] {
                row.extend(col.iter().map(|v| format!("{v:e}")));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// [`estimate_u`] on every `(t, x)` cell with a common seed. Cells starting
/// at `t` use `steps · (T - t) / (T - t0)` steps so the step size is shared.
#[allow(clippy::too_many_arguments)]
pub fn u_surface(
    problem: &FKProblem,
    times: &[f64],
    points: &[Vec<f64>],
    steps: usize,
    cfg: &BackwardConfig,
    outer_runs: u64,
    seed: u64,
) -> Result<Surface> {
    if times.is_empty() || points.is_empty() {
        return Err(Error::Config("surface grids must be nonempty".into()));
    }
    let span = problem.horizon() - problem.spec.t0;
    let cells: Vec<(f64, &Vec<f64>)> = times
        .iter()
        .flat_map(|&t| points.iter().map(move |x| (t, x)))
        .collect();
    let cells = cells
        .par_iter()
        .map(|&(t, x)| {
            let share = (problem.horizon() - t) / span;
            let cell_steps = ((steps as f64 * share).round() as usize).max(1);
            estimate_u(problem, t, x, cell_steps, cfg, outer_runs, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Surface {
        times: times.to_vec(),
        points: points.to_vec(),
        cells,
    })
}

/// `Σ_j λ_j (u(x + h(z_j)) - u(x) - h(z_j)·∇u(x))` for scalar `u`.
pub fn jump_term(
    model: &ForwardModel,
    t: f64,
    x: &[f64],
    u: &dyn Fn(&[f64]) -> f64,
    grad: &[f64],
) -> f64 {
    let mut h = vec![0.0; model.m];
    let ux = u(x);
    (0..model.marks.len())
        .map(|j| {
            (model.h)(t, x, model.marks.mark(j), &mut h);
            let shifted: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + b).collect();
            let linear: f64 = h.iter().zip(grad).map(|(a, b)| a * b).sum();
            model.marks.intensity(j) * (u(&shifted) - ux - linear)
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub t: f64,
    pub x: f64,
    pub residual: f64,
    /// Monte Carlo error of `residual`, propagated from the cell errors as if
    /// they were independent.
    pub stderr: f64,
}

/// Centered finite-difference residual of the equation for `u` at the interior
/// cells of a one-dimensional scalar surface with uniform grids. Jump targets
/// are interpolated linearly along `x`; cells whose jump targets leave the
/// grid are skipped.
pub fn generator_residual(problem: &FKProblem, surface: &Surface) -> Result<Vec<ResidualPoint>> {
    let model = &problem.forward;
    if model.m != 1 || problem.n() != 1 {
        return Err(Error::Dimension(
            "generator residual needs a scalar state and scalar u".into(),
        ));
    }
    let (nt, nx) = (surface.times.len(), surface.points.len());
    if nt < 3 || nx < 3 {
        return Err(Error::Config(
            "generator residual needs at least 3 times and 3 points".into(),
        ));
    }
    let xs: Vec<f64> = surface.points.iter().map(|p| p[0]).collect();
    let dx = xs[1] - xs[0];
    let uniform = |v: &[f64], h: f64| {
        v.windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() < 1e-9 * h.abs().max(1.0))
    };
    if !(dx > 0.0) || !uniform(&xs, dx) {
        return Err(Error::Config(
            "x grid must be increasing and uniform".into(),
        ));
    }
    let dt = surface.times[1] - surface.times[0];
    if !(dt > 0.0) || !uniform(&surface.times, dt) {
        return Err(Error::Config(
            "t grid must be increasing and uniform".into(),
        ));
    }

    // weights on (time index, point index) pairs for linear interpolation
    let interp = |y: f64| -> Option<[(usize, f64); 2]> {
        let s = (y - xs[0]) / dx;
        if s < -1e-12 || s > (nx - 1) as f64 + 1e-12 {
            return None;
        }
        let lo = (s.floor().max(0.0) as usize).min(nx - 2);
        let w = s - lo as f64;
        Some([(lo, 1.0 - w), (lo + 1, w)])
    };

    let mut out = Vec::new();
    let mut sig = vec![0.0; model.d];
    let mut drift = [0.0];
    let mut h = [0.0];
    for i in 1..nt - 1 {
        let t = surface.times[i];
        'cell: for (j, &x) in xs.iter().enumerate().take(nx - 1).skip(1) {
            let mut coef: Vec<((usize, usize), f64)> = Vec::new();
            coef.push(((i + 1, j), 1.0 / (2.0 * dt)));
            coef.push(((i - 1, j), -1.0 / (2.0 * dt)));

            (model.sigma)(t, &[x], &mut sig);
            (model.b)(t, &[x], &mut drift);
            let diff = 0.5 * sig.iter().map(|s| s * s).sum::<f64>();
            let mut ux_coef = drift[0];
            coef.push(((i, j + 1), diff / (dx * dx)));
            coef.push(((i, j), -2.0 * diff / (dx * dx)));
            coef.push(((i, j - 1), diff / (dx * dx)));

            let mut k = Vec::with_capacity(model.marks.len());
            for jm in 0..model.marks.len() {
                (model.h)(t, &[x], model.marks.mark(jm), &mut h);
                let lambda = model.marks.intensity(jm);
                let Some(w) = interp(x + h[0]) else {
                    continue 'cell;
                };
                for (idx, wt) in w {
                    coef.push(((i, idx), lambda * wt));
                }
                coef.push(((i, j), -lambda));
                ux_coef -= lambda * h[0];
                let shifted = w
                    .iter()
                    .map(|&(idx, wt)| wt * surface.cell(i, idx).mean[0])
                    .sum::<f64>();
                k.push(shifted - surface.cell(i, j).mean[0]);
            }
            coef.push(((i, j + 1), ux_coef / (2.0 * dx)));
            coef.push(((i, j - 1), -ux_coef / (2.0 * dx)));

            let linear: f64 = coef
                .iter()
                .map(|&((a, b), c)| c * surface.cell(a, b).mean[0])
                .sum();
            let u = surface.cell(i, j).mean[0];
            let ux = (surface.cell(i, j + 1).mean[0] - surface.cell(i, j - 1).mean[0]) / (2.0 * dx);
            let q: Vec<f64> = sig.iter().map(|s| ux * s).collect();
            let mut f = [0.0];
            let mut scratch = [0.0];
            problem.spec.eval_f(
                &DriverArgs {
                    t,
                    x: &[x],
                    p: &[u],
                    q: &q,
                    k: &k,
                },
                &mut f,
                &mut scratch,
            );

            // merge repeated cells before propagating errors
            let mut merged: Vec<((usize, usize), f64)> = Vec::new();
            for (cell, c) in coef {
                match merged.iter_mut().find(|(k, _)| *k == cell) {
                    Some(e) => e.1 += c,
                    None => merged.push((cell, c)),
                }
            }
            let stderr = merged
                .iter()
                .map(|&((a, b), c)| (c * surface.cell(a, b).stderr[0]).powi(2))
                .sum::<f64>()
                .sqrt();
            out.push(ResidualPoint {
                t,
                x,
                residual: linear + f[0],
                stderr,
            });
        }
    }
    Ok(out)
}
