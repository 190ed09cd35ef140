//! Reference values that do not go through the backward solver: closed forms
//! and brute-force nested Monte Carlo with its own Euler loop and generator.

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::ForwardModel;

/// `c e^{a(T-t)}`: the solution of the linear scalar equation with constant
/// terminal value, no backward noise and `τ = T`.
pub fn analytic_linear(a: f64, c: f64, horizon: f64, t: f64) -> f64 {
    c * (a * (horizon - t)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

/// Plain Monte Carlo estimate of `E[payoff(X_{τ∧T}) | X_t = x]`, re-simulating
/// the forward model from `(t, x)` on `steps` Euler steps up to `horizon`.
#[allow(clippy::too_many_arguments)]
pub fn nested_ce(
    model: &ForwardModel,
    payoff: &dyn Fn(&[f64]) -> f64,
    t: f64,
    x: &[f64],
    horizon: f64,
    steps: usize,
    inner_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    if inner_samples < 100 {
        return Err(Error::Config(
            "nested_ce needs at least 100 inner samples".into(),
        ));
    }
    if steps == 0 || horizon < t {
        return Err(Error::InvalidGrid(format!(
            "steps={steps}, t={t}, horizon={horizon}"
        )));
    }
    if x.len() != model.m {
        return Err(Error::Dimension(
            "starting point has the wrong dimension".into(),
        ));
    }
    let (m, d) = (model.m, model.d);
    let dt = (horizon - t) / steps as f64;
    let normal = Normal::new(0.0, dt.sqrt()).expect("dt is finite");
    let poissons: Vec<Poisson<f64>> = model
        .marks
        .intensities()
        .iter()
        .map(|l| Poisson::new(l * dt).map_err(|e| Error::InvalidMarks(e.to_string())))
        .collect::<Result<_>>()?;
    let mut rng = StdRng::seed_from_u64(seed);

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut drift = vec![0.0; m];
    let mut sig = vec![0.0; m * d];
    let mut jump = vec![0.0; m];
    let mut dw = vec![0.0; d];
    for _ in 0..inner_samples {
        let mut state = x.to_vec();
        for s in 0..steps {
            if !model.domain.contains(&state) {
                break;
            }
            let time = t + s as f64 * dt;
            (model.b)(time, &state, &mut drift);
            (model.sigma)(time, &state, &mut sig);
            dw.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
            let mut next = state.clone();
            for a in 0..m {
                next[a] += drift[a] * dt;
                for c in 0..d {
                    next[a] += sig[a * d + c] * dw[c];
                }
            }
            for (j, p) in poissons.iter().enumerate() {
                let count = p.sample(&mut rng);
                let compensated = count - model.marks.intensity(j) * dt;
                (model.h)(time, &state, model.marks.mark(j), &mut jump);
                for a in 0..m {
                    next[a] += jump[a] * compensated;
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp { step: s + 1 });
            }
            state = next;
        }
        let v = payoff(&state);
        sum += v;
        sum_sq += v * v;
    }
    let n = inner_samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(Estimate {
        mean,
        stderr: (var / n).sqrt(),
    })
}

pub const PIDE_REFERENCES: [&str; 2] = ["heat-quadratic", "jump-linear"];

/// Closed-form solutions of the deterministic (`g ≡ 0`, `f ≡ 0`) equation:
///
/// * `heat-quadratic`: `u = |x|² + m(T - t)` for `u_t + ½Δu = 0`, `u(T) = |x|²`,
/// * `jump-linear`: `u = x_0` for a compensated pure-jump generator with
///   `u(T) = x_0`.
pub fn pide_reference(name: &str, t: f64, x: &[f64], horizon: f64) -> Result<f64> {
    match name {
        "heat-quadratic" => {
            Ok(x.iter().map(|v| v * v).sum::<f64>() + x.len() as f64 * (horizon - t))
        }
        "jump-linear" => Ok(x[0]),
        other => Err(Error::UnknownName {
            name: other.into(),
            expected: PIDE_REFERENCES.join(", "),
        }),
    }
}
