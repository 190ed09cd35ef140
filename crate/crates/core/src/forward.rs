//! Euler scheme for the forward jump diffusion
//!
//! ```text
//! X_s = x + ∫ b(r, X_r) dr + ∫ σ(r, X_r) dW_r + ∫∫ h(r-, X_{r-}, z) Ñ(dz dr)
//! ```
//!
//! and its first exit time from an open box. Exits are detected at grid times
//! only; the path is held at its exit value afterwards.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{substream, MarkSpace, NoiseBundle, TimeGrid};

/// `(t, x) -> out`, used for both drift (`R^m`) and diffusion (`R^{m×d}`, row-major).
pub type StateFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, x, z) -> R^m`.
pub type JumpFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Domain {
    Whole,
    /// Open box `lo < x < hi` componentwise.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl Domain {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Whole => true,
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (a, b))| *a < *v && *v < *b),
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, Domain::Box { .. })
    }

    /// Box scaled about its centre; the whole space is unchanged.
    pub fn scaled(&self, factor: f64) -> Domain {
        match self {
            Domain::Whole => Domain::Whole,
            Domain::Box { lo, hi } => {
                let (lo, hi) = lo
                    .iter()
                    .zip(hi)
                    .map(|(a, b)| {
                        let c = 0.5 * (a + b);
                        let r = 0.5 * (b - a) * factor;
                        (c - r, c + r)
                    })
                    .unzip();
                Domain::Box { lo, hi }
            }
        }
    }
}

pub fn zero_state_fn() -> StateFn {
    Arc::new(|_, _, out: &mut [f64]| out.fill(0.0))
}

pub fn zero_jump_fn() -> JumpFn {
    Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0))
}

#[derive(Clone)]
pub struct ForwardModel {
    pub m: usize,
    pub d: usize,
    pub b: StateFn,
    pub sigma: StateFn,
    pub h: JumpFn,
    pub marks: MarkSpace,
    pub domain: Domain,
    pub x0: Vec<f64>,
    pub t_start: f64,
}

impl std::fmt::Debug for ForwardModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardModel")
            .field("m", &self.m)
            .field("d", &self.d)
            .field("marks", &self.marks)
            .field("domain", &self.domain)
            .field("x0", &self.x0)
            .field("t_start", &self.t_start)
            .finish_non_exhaustive()
    }
}

impl ForwardModel {
    /// `dX = σ dW` with constant scalar `σ` on every coordinate (`d = m`), no
    /// drift and no jumps.
    pub fn brownian(m: usize, vol: f64, marks: MarkSpace, x0: Vec<f64>) -> Self {
        Self {
            m,
            d: m,
            b: zero_state_fn(),
            sigma: Arc::new(move |_, _, out: &mut [f64]| {
                out.fill(0.0);
                for i in 0..m {
                    out[i * m + i] = vol;
                }
            }),
            h: zero_jump_fn(),
            marks,
            domain: Domain::Whole,
            x0,
            t_start: 0.0,
        }
    }

    pub fn with_drift(mut self, b: StateFn) -> Self {
        self.b = b;
        self
    }

    pub fn with_sigma(mut self, d: usize, sigma: StateFn) -> Self {
        self.d = d;
        self.sigma = sigma;
        self
    }

    pub fn with_jumps(mut self, h: JumpFn) -> Self {
        self.h = h;
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn starting_at(mut self, t: f64, x: Vec<f64>) -> Self {
        self.t_start = t;
        self.x0 = x;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.x0.len() != self.m {
            return Err(Error::Dimension(format!(
                "x0 has {} components, model dimension is {}",
                self.x0.len(),
                self.m
            )));
        }
        if let Domain::Box { lo, hi } = &self.domain {
            if lo.len() != self.m || hi.len() != self.m || lo.iter().zip(hi).any(|(a, b)| a >= b) {
                return Err(Error::Config(
                    "box bounds must satisfy lo < hi in every coordinate".into(),
                ));
            }
        }
        if !self.domain.contains(&self.x0) {
            return Err(Error::OutsideDomain { x: self.x0.clone() });
        }
        Ok(())
    }

    /// Largest difference quotient of `b`, `σ` and `h` over `samples` random
    /// pairs drawn in `[-scale, scale]^m` (times in `[t, t + 1]`).
    pub fn lipschitz_estimate(&self, samples: usize, scale: f64, seed: u64) -> f64 {
        let mut rng = substream(seed, 0, 0x6c70);
        let m = self.m;
        let mut worst: f64 = 0.0;
        let mut a = vec![0.0; m * self.d.max(1)];
        let mut b = vec![0.0; m * self.d.max(1)];
        for _ in 0..samples {
            let t = self.t_start + rng.random::<f64>();
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(-scale..scale)).collect();
            let step = 10f64.powf(-rng.random_range(0.0..6.0));
            let y: Vec<f64> = x
                .iter()
                .map(|v| v + step * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let dx = x
                .iter()
                .zip(&y)
                .map(|(u, v)| (u - v).powi(2))
                .sum::<f64>()
                .sqrt();
            if dx == 0.0 {
                continue;
            }
            let mut quotient = |len: usize, f: &dyn Fn(&[f64], &mut [f64])| {
                f(&x, &mut a[..len]);
                f(&y, &mut b[..len]);
                let df = a[..len]
                    .iter()
                    .zip(&b[..len])
                    .map(|(u, v)| (u - v).powi(2))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(df / dx);
            };
            quotient(m, &|x, o| (self.b)(t, x, o));
            quotient(m * self.d, &|x, o| (self.sigma)(t, x, o));
            for z in self.marks.marks() {
                quotient(m, &|x, o| (self.h)(t, x, z, o));
            }
        }
        worst
    }
}

/// A simulated trajectory on the bundle's grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPath {
    grid: TimeGrid,
    m: usize,
    states: Vec<f64>,
    exit_index: usize,
    jump_log: Vec<u32>,
}

impl ForwardPath {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    /// State at grid index `i`.
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.m..(i + 1) * self.m]
    }

    /// First grid index with `X ∉ D`, or `steps` when the path never leaves.
    pub fn exit_index(&self) -> usize {
        self.exit_index
    }

    /// Jump counts applied at each step, `steps × r` row-major.
    pub fn jump_log(&self) -> &[u32] {
        &self.jump_log
    }

    /// `X_τ`.
    pub fn stopped_state(&self) -> &[f64] {
        self.state(self.exit_index)
    }

    /// Grid time of the exit, `T` when the path stays inside.
    pub fn exit_time(&self) -> f64 {
        self.grid.time(self.exit_index)
    }

    /// CSV rows `t, x_0.., in_domain`.
    pub fn write_csv<W: Write>(&self, mut w: W, domain: &Domain) -> Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.m).map(|i| format!("x{i}")))
            .chain(std::iter::once("in_domain".to_string()))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..=self.grid.steps() {
            let x = self.state(i);
            let cols: Vec<String> = x.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(
                w,
                "{:.17e},{},{}",
                self.grid.time(i),
                cols.join(","),
                u8::from(domain.contains(x))
            )?;
        }
        Ok(())
    }
}

/// Grid time of the exit.
pub fn exit_time(path: &ForwardPath) -> f64 {
    path.exit_time()
}

/// One Euler path driven by `bundle`:
/// `X_{i+1} = X_i + b dt + σ ΔW_i + Σ_j h(z_j) ΔÑ_{i,j}`.
pub fn simulate_forward(model: &ForwardModel, bundle: &NoiseBundle) -> Result<ForwardPath> {
    model.validate()?;
    let grid = *bundle.grid();
    if (grid.t0() - model.t_start).abs() > 1e-12 * (1.0 + model.t_start.abs()) {
        return Err(Error::Dimension(format!(
            "bundle starts at {}, model at {}",
            grid.t0(),
            model.t_start
        )));
    }
    if bundle.dims().d != model.d {
        return Err(Error::Dimension(format!(
            "bundle has d={}, model needs d={}",
            bundle.dims().d,
            model.d
        )));
    }
    let r = model.marks.len();
    if bundle.n_marks() != r {
        return Err(Error::Dimension(format!(
            "bundle has {} marks, model has {r}",
            bundle.n_marks()
        )));
    }

    let (m, d, steps, dt) = (model.m, model.d, grid.steps(), grid.dt());
    let mut states = Vec::with_capacity((steps + 1) * m);
    states.extend_from_slice(&model.x0);
    let mut x = model.x0.clone();
    let mut drift = vec![0.0; m];
    let mut sig = vec![0.0; m * d];
    let mut jump = vec![0.0; m];
    let mut exit_index = steps;
    let mut jump_log = Vec::with_capacity(steps * r);

    for i in 0..steps {
        jump_log.extend_from_slice(bundle.jump_counts(i));
        if exit_index <= i {
            states.extend_from_slice(&x);
            continue;
        }
        let t = grid.time(i);
        (model.b)(t, &x, &mut drift);
        (model.sigma)(t, &x, &mut sig);
        let dw = bundle.dw(i);
        let mut next: Vec<f64> = (0..m)
            .map(|a| {
                let diffusion: f64 = (0..d).map(|c| sig[a * d + c] * dw[c]).sum();
                x[a] + drift[a] * dt + diffusion
            })
            .collect();
        for j in 0..r {
            let dn = bundle.compensated(i, j);
            (model.h)(t, &x, model.marks.mark(j), &mut jump);
            next.iter_mut().zip(&jump).for_each(|(v, h)| *v += h * dn);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: i + 1 });
        }
        x = next;
        states.extend_from_slice(&x);
        if !model.domain.contains(&x) {
            exit_index = i + 1;
        }
    }

    Ok(ForwardPath {
        grid,
        m,
        states,
        exit_index,
        jump_log,
    })
}
