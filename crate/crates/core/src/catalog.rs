//! Named problems that satisfy the growth and monotonicity assumptions, each
//! bundled with the forward model it is solved along.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::drivers::{ConcaveModulus, DriverArgs, DriverSpec, TerminalSpec};
use crate::error::{Error, Result};
use crate::forward::{Domain, ForwardModel};
use crate::noise::MarkSpace;

pub const CATALOG: [&str; 4] = [
    "zero",
    "linear-scalar",
    "dissipative-sqrtlog",
    "jump-coupled",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogParams {
    /// Rate of the linear driver.
    pub a: f64,
    /// Terminal constant for `zero` and `linear-scalar`.
    pub c: f64,
    pub horizon: f64,
}

impl Default for CatalogParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            c: 1.0,
            horizon: 1.0,
        }
    }
}

/// Closed-form `P_t` when one exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Analytic {
    /// `P ≡ c`, `Q ≡ 0`, `K ≡ 0`.
    Constant { c: f64 },
    /// `P_t = c e^{a(T-t)}`, `Q ≡ 0`, `K ≡ 0`.
    Exponential { a: f64, c: f64, horizon: f64 },
}

impl Analytic {
    pub fn p(&self, t: f64) -> f64 {
        match *self {
            Analytic::Constant { c } => c,
            Analytic::Exponential { a, c, horizon } => c * (a * (horizon - t)).exp(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CatalogProblem {
    pub name: String,
    pub forward: ForwardModel,
    pub driver: DriverSpec,
    pub terminal: TerminalSpec,
    pub analytic: Option<Analytic>,
}

/// Odd, non-decreasing and bounded, with modulus `δ ln(1/δ)` at the origin.
pub fn signed_log_modulus(p: f64) -> f64 {
    p.signum() * ConcaveModulus::LogModulus.eval(p.abs())
}

pub fn builtin_driver(name: &str) -> Result<CatalogProblem> {
    builtin_driver_with(name, &CatalogParams::default())
}

pub fn builtin_driver_with(name: &str, params: &CatalogParams) -> Result<CatalogProblem> {
    let horizon = params.horizon;
    let unit_marks = MarkSpace::scalar(&[1.0], &[1.0])?;
    let brownian = |marks: MarkSpace| ForwardModel::brownian(1, 1.0, marks, vec![0.0]);
    let base = |marks: MarkSpace| DriverSpec::zero(1, 1, 1, 1, marks, 0.0, horizon);

    let problem = match name {
        "zero" => {
            let c = params.c;
            CatalogProblem {
                name: name.into(),
                forward: brownian(unit_marks.clone()),
                driver: base(unit_marks),
                terminal: TerminalSpec::constant(vec![c]),
                analytic: Some(Analytic::Constant { c }),
            }
        }
        "linear-scalar" => {
            let (a, c) = (params.a, params.c);
            let mu = if a == 0.0 { 1.0 } else { a.abs() };
            let driver = base(unit_marks.clone())
                .with_f2(Arc::new(move |args: &DriverArgs<'_>, out: &mut [f64]| {
                    out[0] = a * args.p[0]
                }))
                .with_bounds(Arc::new(move |_| a.abs()), mu);
            CatalogProblem {
                name: name.into(),
                forward: brownian(unit_marks),
                driver,
                terminal: TerminalSpec::constant(vec![c]),
                analytic: Some(Analytic::Exponential { a, c, horizon }),
            }
        }
        "dissipative-sqrtlog" => {
            // f1(p) = -sgn(p) |p| ln(1/|p|) near 0, flat at ∓1/e beyond e^{-1}
            let driver = base(unit_marks.clone())
                .with_f1(Arc::new(|args: &DriverArgs<'_>, out: &mut [f64]| {
                    out[0] = -signed_log_modulus(args.p[0])
                }))
                .with_g(Arc::new(|args: &DriverArgs<'_>, out: &mut [f64]| {
                    out[0] = 0.1 * args.p[0].sin()
                }))
                .with_rho(ConcaveModulus::LogModulus)
                .with_bounds(Arc::new(|_| 1.0), 1.0);
            CatalogProblem {
                name: name.into(),
                forward: brownian(unit_marks),
                driver,
                terminal: TerminalSpec::new(
                    1,
                    Arc::new(|x: &[f64], _, out: &mut [f64]| out[0] = 0.5 + 0.5 * x[0].sin()),
                ),
                analytic: None,
            }
        }
        "jump-coupled" => {
            let marks = MarkSpace::scalar(&[-0.5, 0.5], &[1.0, 1.0])?;
            let lambdas = [1.0, 1.0];
            let forward = ForwardModel::brownian(1, 0.5, marks.clone(), vec![0.0])
                .with_jumps(Arc::new(|_, _, z: &[f64], out: &mut [f64]| out[0] = z[0]))
                .with_domain(Domain::Box {
                    lo: vec![-1.5],
                    hi: vec![1.5],
                });
            let driver = base(marks)
                .with_f1(Arc::new(|args: &DriverArgs<'_>, out: &mut [f64]| {
                    out[0] = 0.2 * args.p[0].cos()
                }))
                .with_f2(Arc::new(move |args: &DriverArgs<'_>, out: &mut [f64]| {
                    let jump: f64 = args.k.iter().zip(&lambdas).map(|(k, l)| k * l).sum();
                    out[0] = -0.5 * args.p[0] + 0.25 * args.q[0] + 0.3 * jump
                }))
                .with_g(Arc::new(|args: &DriverArgs<'_>, out: &mut [f64]| {
                    out[0] = 0.2 * args.p[0].tanh()
                }))
                .with_bounds(Arc::new(|_| 1.0), 1.0);
            CatalogProblem {
                name: name.into(),
                forward,
                driver,
                terminal: TerminalSpec::new(
                    1,
                    Arc::new(|x: &[f64], _, out: &mut [f64]| out[0] = x[0] * x[0]),
                ),
                analytic: None,
            }
        }
        other => {
            return Err(Error::UnknownName {
                name: other.into(),
                expected: CATALOG.join(", "),
            })
        }
    };
    Ok(problem)
}
