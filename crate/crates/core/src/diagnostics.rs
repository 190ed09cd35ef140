//! Experiment runners for the stability results: the a priori energy bound,
//! uniqueness under different Picard starts, continuous dependence on the data
//! and the Bihari majorant used in both arguments.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backward::{outer_bundle, solve_backward, BackwardConfig, BackwardSolution, PicardInit};
use crate::catalog::{builtin_driver_with, CatalogParams, CatalogProblem};
use crate::drivers::{ConcaveModulus, DriverArgs};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, TimeGrid};
use crate::quad;

/// Safety factor applied to the proof constant of the a priori bound.
pub const APRIORI_SLACK: f64 = 4.0;

/// `4 (E|ξ|² + T + 2μ̄) exp(∫ (4μ(s) + 2μ(s)²) ds)` over the driver's horizon.
pub fn apriori_bound(spec: &crate::drivers::DriverSpec, terminal_second_moment: f64) -> f64 {
    let span = spec.horizon - spec.t0;
    let mu = &spec.mu_t;
    let exponent = if span > 0.0 {
        quad::integrate(
            |s| 4.0 * mu(s) + 2.0 * mu(s).powi(2),
            spec.t0,
            spec.horizon,
            64,
            8,
        )
    } else {
        0.0
    };
    APRIORI_SLACK * (terminal_second_moment + span + 2.0 * spec.mu_bar) * exponent.exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriRun {
    pub run: u64,
    pub norms_total: f64,
    pub terminal_second_moment: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    pub problem: String,
    pub runs: Vec<AprioriRun>,
    pub passed: bool,
}

fn grid_for(problem: &CatalogProblem, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(problem.driver.t0, problem.driver.horizon, steps)
}

fn solve_run(
    problem: &CatalogProblem,
    cfg: &BackwardConfig,
    grid: &TimeGrid,
    seed: u64,
    run: u64,
) -> Result<BackwardSolution> {
    let outer = outer_bundle(grid, problem.driver.l, seed, run)?;
    solve_backward(
        &problem.forward,
        &problem.driver,
        &problem.terminal,
        cfg,
        &outer,
        derive_seed(seed, run),
    )
}

/// Solve `runs` times with independent noise and compare each solution's
/// norms with the bound built from that run's sampled `E|ξ|²`.
pub fn apriori_check(
    problem: &CatalogProblem,
    cfg: &BackwardConfig,
    steps: usize,
    runs: u64,
    seed: u64,
) -> Result<AprioriReport> {
    let grid = grid_for(problem, steps)?;
    let runs: Vec<AprioriRun> = (0..runs)
        .map(|run| {
            let sol = solve_run(problem, cfg, &grid, seed, run)?;
            let e_xi = sol.terminal_second_moment();
            let total = sol.norms().total();
            let bound = apriori_bound(&problem.driver, e_xi);
            Ok(AprioriRun {
                run,
                norms_total: total,
                terminal_second_moment: e_xi,
                bound,
                passed: total <= bound,
            })
        })
        .collect::<Result<_>>()?;
    Ok(AprioriReport {
        problem: problem.name.clone(),
        passed: runs.iter().all(|r| r.passed),
        runs,
    })
}

/// Relative tolerance of the uniqueness probe.
pub const UNIQUENESS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub problem: String,
    /// `max |P¹ - P²|` over every grid node and path.
    pub max_gap: f64,
    /// `max |P¹|`, the scale the gap is measured against.
    pub scale: f64,
    pub relative_gap: f64,
    pub mollified_order: Option<u32>,
    pub passed: bool,
}

/// Solve twice on identical noise, once from a zero Picard start and once from
/// a random one, and report the largest difference in `P`.
pub fn uniqueness_probe(
    problem: &CatalogProblem,
    cfg: &BackwardConfig,
    steps: usize,
    seed: u64,
) -> Result<UniquenessReport> {
    let grid = grid_for(problem, steps)?;
    let zero = BackwardConfig {
        picard_init: PicardInit::Zero,
        ..cfg.clone()
    };
    let random = BackwardConfig {
        picard_init: PicardInit::Random {
            seed: derive_seed(seed, 0x756e),
        },
        ..cfg.clone()
    };
    let a = solve_run(problem, &zero, &grid, seed, 0)?;
    let b = solve_run(problem, &random, &grid, seed, 0)?;
    let mut max_gap: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..=grid.steps() {
        for j in 0..a.paths() {
            for (u, v) in a.p(i, j).iter().zip(b.p(i, j)) {
                max_gap = max_gap.max((u - v).abs());
                scale = scale.max(u.abs());
            }
        }
    }
    let relative_gap = max_gap / scale.max(1.0);
    Ok(UniquenessReport {
        problem: problem.name.clone(),
        max_gap,
        scale,
        relative_gap,
        mollified_order: a.mollified_order,
        passed: relative_gap < UNIQUENESS_TOL,
    })
}

/// Perturbed problem families `(f^m, g^m, ξ^m)` with `δ_m = 1/m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Every member equals the linear base problem.
    Unperturbed,
    /// Zero driver with `ξ^m = ξ⁰ + δ_m`.
    ConstantShift,
    /// Linear driver `f^m = a p + δ_m` with unchanged `ξ`.
    DriverShift,
    /// The jump-coupled problem with `f`, `g` and `ξ` all perturbed by
    /// state-dependent terms.
    JumpShift,
}

pub const FAMILIES: [Family; 4] = [
    Family::Unperturbed,
    Family::ConstantShift,
    Family::DriverShift,
    Family::JumpShift,
];

pub const LEVELS: [u32; 5] = [1, 2, 4, 8, 16];

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Unperturbed => "unperturbed",
            Family::ConstantShift => "constant-shift",
            Family::DriverShift => "driver-shift",
            Family::JumpShift => "jump-shift",
        }
    }

    /// Lipschitz constant of the base driver in `p` for the families where the
    /// gap obeys a scalar linear inequality; `None` otherwise.
    fn linear_rate(&self) -> Option<f64> {
        match self {
            Family::Unperturbed | Family::DriverShift => Some(CatalogParams::default().a.abs()),
            Family::ConstantShift => Some(0.0),
            Family::JumpShift => None,
        }
    }

    /// Member `m`; `None` is the unperturbed limit.
    pub fn member(&self, m: Option<u32>) -> Result<CatalogProblem> {
        let delta = match m {
            Some(0) => return Err(Error::Config("family levels start at 1".into())),
            Some(m) if *self != Family::Unperturbed => 1.0 / m as f64,
            _ => 0.0,
        };
        let params = CatalogParams::default();
        let mut problem = match self {
            Family::Unperturbed | Family::DriverShift => {
                builtin_driver_with("linear-scalar", &params)?
            }
            Family::ConstantShift => builtin_driver_with("zero", &params)?,
            Family::JumpShift => builtin_driver_with("jump-coupled", &params)?,
        };
        if delta == 0.0 {
            return Ok(problem);
        }
        match self {
            Family::Unperturbed => {}
            Family::ConstantShift => {
                let xi = problem.terminal.xi.clone();
                problem.terminal.xi = Arc::new(move |x: &[f64], tau, out: &mut [f64]| {
                    xi(x, tau, out);
                    out.iter_mut().for_each(|o| *o += delta);
                });
            }
            Family::DriverShift => {
                let f2 = problem.driver.f2.clone();
                problem.driver.f2 = Arc::new(move |args: &DriverArgs<'_>, out: &mut [f64]| {
                    f2(args, out);
                    out.iter_mut().for_each(|o| *o += delta);
                });
            }
            Family::JumpShift => {
                let f2 = problem.driver.f2.clone();
                problem.driver.f2 = Arc::new(move |args: &DriverArgs<'_>, out: &mut [f64]| {
                    f2(args, out);
                    out[0] += delta * 0.1 * args.x[0].sin();
                });
                let g = problem.driver.g.clone();
                problem.driver.g = Arc::new(move |args: &DriverArgs<'_>, out: &mut [f64]| {
                    g(args, out);
                    out[0] += delta * 0.05;
                });
                let xi = problem.terminal.xi.clone();
                problem.terminal.xi = Arc::new(move |x: &[f64], tau, out: &mut [f64]| {
                    xi(x, tau, out);
                    out[0] += delta * x[0].sin();
                });
            }
        }
        problem.name = format!("{}-m{}", self.name(), m.unwrap_or(0));
        Ok(problem)
    }

    /// `sup |f^m - f⁰|` over all arguments, for the envelope.
    fn driver_shift_sup(&self, delta: f64) -> f64 {
        match self {
            Family::DriverShift => delta,
            Family::JumpShift => 0.1 * delta,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceRow {
    pub m: u32,
    pub delta: f64,
    /// Sampled `E sup_t |P^m - P⁰|²`.
    pub sup_gap: f64,
    /// Sampled `E ∫ (|Q^m - Q⁰|² + ‖K^m - K⁰‖²) dt`.
    pub qk_gap: f64,
    /// `E|ξ^m - ξ⁰|² + T sup|f^m - f⁰|²`.
    pub input_gap: f64,
    /// Bihari majorant of `sup_gap` for the scalar linear families.
    pub envelope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceTable {
    pub family: Family,
    pub steps: usize,
    pub inner_paths: usize,
    pub outer_runs: u64,
    pub rows: Vec<DependenceRow>,
}

impl DependenceTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "m,delta,sup_gap,qk_gap,input_gap,envelope")?;
        for r in &self.rows {
            let env = r.envelope.map(|e| format!("{e:e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{}",
                r.m, r.delta, r.sup_gap, r.qk_gap, r.input_gap, env
            )?;
        }
        Ok(())
    }
}

struct Gaps {
    sup: f64,
    qk: f64,
    xi: f64,
}

fn gaps(a: &BackwardSolution, b: &BackwardSolution, intensities: &[f64]) -> Gaps {
    let steps = a.grid().steps();
    let dt = a.grid().dt();
    let n = a.n();
    let mut out = Gaps {
        sup: 0.0,
        qk: 0.0,
        xi: 0.0,
    };
    let sq = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    for j in 0..a.paths() {
        let sup = (0..=steps)
            .map(|i| sq(a.p(i, j), b.p(i, j)))
            .fold(0.0, f64::max);
        let mut qk = 0.0;
        for i in 0..steps {
            qk += sq(a.q(i, j), b.q(i, j)) * dt;
            qk += a
                .k(i, j)
                .chunks(n)
                .zip(b.k(i, j).chunks(n))
                .zip(intensities)
                .map(|((u, v), l)| l * sq(u, v))
                .sum::<f64>()
                * dt;
        }
        out.sup += sup;
        out.qk += qk;
        out.xi += sq(a.p(steps, j), b.p(steps, j));
    }
    let n = a.paths() as f64;
    Gaps {
        sup: out.sup / n,
        qk: out.qk / n,
        xi: out.xi / n,
    }
}

/// Run the family at each level in `levels` against its unperturbed limit,
/// with the same outer and inner noise at every level.
pub fn continuous_dependence(
    family: Family,
    levels: &[u32],
    steps: usize,
    cfg: &BackwardConfig,
    outer_runs: u64,
    seed: u64,
) -> Result<DependenceTable> {
    if outer_runs == 0 {
        return Err(Error::Config("outer_runs must be positive".into()));
    }
    let base = family.member(None)?;
    let grid = grid_for(&base, steps)?;
    let span = grid.duration();
    let intensities = base.driver.marks.intensities().to_vec();
    let base_solutions: Vec<BackwardSolution> = (0..outer_runs)
        .map(|run| solve_run(&base, cfg, &grid, seed, run))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(levels.len());
    for &m in levels {
        let member = family.member(Some(m))?;
        let delta = if family == Family::Unperturbed {
            0.0
        } else {
            1.0 / m as f64
        };
        let (mut sup, mut qk, mut xi) = (0.0, 0.0, 0.0);
        for (run, base_sol) in base_solutions.iter().enumerate() {
            let sol = solve_run(&member, cfg, &grid, seed, run as u64)?;
            let g = gaps(&sol, base_sol, &intensities);
            sup += g.sup;
            qk += g.qk;
            xi += g.xi;
        }
        let runs = outer_runs as f64;
        let (sup, qk, xi) = (sup / runs, qk / runs, xi / runs);
        let input_gap = xi + span * family.driver_shift_sup(delta).powi(2);
        let envelope = family
            .linear_rate()
            .map(|rate| bihari_bound(input_gap, &Rho1::linear(), span, 2.0 * rate + 1.0))
            .transpose()?;
        rows.push(DependenceRow {
            m,
            delta,
            sup_gap: sup,
            qk_gap: qk,
            input_gap,
            envelope,
        });
    }
    Ok(DependenceTable {
        family,
        steps,
        inner_paths: cfg.inner_paths,
        outer_runs,
        rows,
    })
}

/// `ρ1(u) = w_ρ ρ(u) + w_u u`, the right-hand side of the majorizing ODE.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rho1 {
    pub rho: ConcaveModulus,
    pub rho_weight: f64,
    pub linear_weight: f64,
}

impl Rho1 {
    /// `ρ(u) + u`.
    pub fn standard(rho: ConcaveModulus) -> Self {
        Self {
            rho,
            rho_weight: 1.0,
            linear_weight: 1.0,
        }
    }

    /// `2ρ(u) + 16u`, the form arising in the uniqueness argument.
    pub fn uniqueness(rho: ConcaveModulus) -> Self {
        Self {
            rho,
            rho_weight: 2.0,
            linear_weight: 16.0,
        }
    }

    /// `ρ1(u) = u`.
    pub fn linear() -> Self {
        Self {
            rho: ConcaveModulus::Linear { slope: 0.0 },
            rho_weight: 0.0,
            linear_weight: 1.0,
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        self.rho_weight * self.rho.eval(u) + self.linear_weight * u.max(0.0)
    }
}

/// Default RK4 step count of [`bihari_bound`].
pub const BIHARI_STEPS: usize = 8192;

/// `x(horizon)` for `x' = coeff ρ1(x)`, `x(0) = a`.
///
/// Every modulus available here satisfies `∫_{0+} du / ρ1(u) = ∞`, so `a = 0`
/// stays at zero.
pub fn bihari_bound(a: f64, rho1: &Rho1, horizon: f64, coeff: f64) -> Result<f64> {
    bihari_bound_steps(a, rho1, horizon, coeff, BIHARI_STEPS)
}

pub fn bihari_bound_steps(
    a: f64,
    rho1: &Rho1,
    horizon: f64,
    coeff: f64,
    steps: usize,
) -> Result<f64> {
    if !(a >= 0.0) || !(horizon >= 0.0) || steps == 0 {
        return Err(Error::Config(format!(
            "bihari bound needs a >= 0, horizon >= 0 and steps > 0 (a={a}, horizon={horizon})"
        )));
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    let h = horizon / steps as f64;
    let f = |x: f64| coeff * rho1.eval(x);
    let mut x = a;
    for _ in 0..steps {
        let k1 = f(x);
        let k2 = f(x + 0.5 * h * k1);
        let k3 = f(x + 0.5 * h * k2);
        let k4 = f(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::builtin_driver;
    use crate::drivers::DriverSpec;
    use crate::noise::MarkSpace;

    fn spec_with(mu: f64, horizon: f64) -> DriverSpec {
        DriverSpec::zero(
            1,
            1,
            1,
            1,
            MarkSpace::scalar(&[1.0], &[1.0]).unwrap(),
            0.0,
            horizon,
        )
        .with_bounds(Arc::new(move |_| mu), 1.0)
    }

    #[test]
    fn apriori_formula() {
        assert!((apriori_bound(&spec_with(0.0, 1.0), 1.0) - 8.0).abs() < 1e-12);
        assert_eq!(apriori_bound(&spec_with(1.0, 0.0), 0.0), 0.0);
        let expected = 4.0 * 3.0 * 6f64.exp();
        assert!((apriori_bound(&spec_with(1.0, 1.0), 0.0) - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn bihari_zero_is_preserved() {
        for rho in [
            ConcaveModulus::Linear { slope: 1.0 },
            ConcaveModulus::LogModulus,
        ] {
            for horizon in [0.0, 1.0, 10.0] {
                assert_eq!(
                    bihari_bound(0.0, &Rho1::standard(rho), horizon, 3.0).unwrap(),
                    0.0
                );
                assert_eq!(
                    bihari_bound(0.0, &Rho1::uniqueness(rho), horizon, 1.0).unwrap(),
                    0.0
                );
            }
        }
    }

    #[test]
    fn bihari_linear_is_exponential() {
        let x = bihari_bound(1.0, &Rho1::linear(), 1.0, 1.0).unwrap();
        assert!((x - std::f64::consts::E).abs() < 1e-8);
        let x = bihari_bound(
            0.5,
            &Rho1::standard(ConcaveModulus::Linear { slope: 1.0 }),
            2.0,
            0.25,
        )
        .unwrap();
        assert!((x - 0.5 * 1f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn bihari_log_modulus_self_refines() {
        let rho1 = Rho1::standard(ConcaveModulus::LogModulus);
        let coarse = bihari_bound(1e-6, &rho1, 1.0, 1.0).unwrap();
        let fine = bihari_bound_steps(1e-6, &rho1, 1.0, 1.0, 16 * BIHARI_STEPS).unwrap();
        assert!((coarse - fine).abs() < 1e-8, "{coarse} vs {fine}");
        assert!(coarse > 1e-6);
    }

    #[test]
    fn bihari_rejects_negative_start() {
        assert!(bihari_bound(-1.0, &Rho1::linear(), 1.0, 1.0).is_err());
    }

    fn small_cfg() -> BackwardConfig {
        BackwardConfig {
            inner_paths: 400,
            ..BackwardConfig::default()
        }
    }

    #[test]
    fn zero_driver_has_no_gap() {
        let r = uniqueness_probe(&builtin_driver("zero").unwrap(), &small_cfg(), 10, 3).unwrap();
        assert_eq!(r.max_gap, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn linear_driver_gap_is_tiny() {
        let r = uniqueness_probe(
            &builtin_driver("linear-scalar").unwrap(),
            &small_cfg(),
            20,
            3,
        )
        .unwrap();
        assert!(r.max_gap < 1e-10, "{r:?}");
    }

    #[test]
    fn unperturbed_family_has_zero_gaps() {
        let t =
            continuous_dependence(Family::Unperturbed, &[1, 4], 10, &small_cfg(), 1, 5).unwrap();
        for r in &t.rows {
            assert_eq!(r.sup_gap, 0.0);
            assert_eq!(r.qk_gap, 0.0);
        }
    }

    #[test]
    fn constant_shift_gap_is_inverse_square() {
        let t =
            continuous_dependence(Family::ConstantShift, &LEVELS, 10, &small_cfg(), 1, 5).unwrap();
        for r in &t.rows {
            let expected = 1.0 / (r.m as f64).powi(2);
            assert!((r.sup_gap - expected).abs() < 1e-12 * expected, "{r:?}");
            assert!(r.sup_gap <= r.envelope.unwrap());
        }
    }

    #[test]
    fn driver_shift_scales_quadratically() {
        let t =
            continuous_dependence(Family::DriverShift, &[1, 16], 20, &small_cfg(), 1, 5).unwrap();
        let (a, b) = (&t.rows[0], &t.rows[1]);
        assert!(b.sup_gap < a.sup_gap / 64.0);
        // the gap is deterministic: Δ_i = (Δ_{i+1} + dt) / (1 - dt) from Δ_N = 0
        let dt = 1.0 / 20.0;
        let gap = (0..20).fold(0.0, |g, _| (g + dt) / (1.0 - dt));
        assert!((a.sup_gap - gap * gap).abs() < 1e-10, "{a:?}");
        assert!(a.sup_gap <= a.envelope.unwrap());
    }

    #[test]
    fn apriori_holds_for_linear() {
        let r = apriori_check(
            &builtin_driver("linear-scalar").unwrap(),
            &small_cfg(),
            20,
            2,
            9,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn family_rejects_level_zero() {
        assert!(Family::DriverShift.member(Some(0)).is_err());
    }

    #[test]
    fn dependence_csv() {
        let t = continuous_dependence(Family::ConstantShift, &[2], 5, &small_cfg(), 1, 5).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("m,delta,sup_gap,qk_gap,input_gap,envelope\n2,"));
    }
}
