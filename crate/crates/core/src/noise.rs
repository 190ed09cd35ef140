//! Seed-derived generation of the driving noise: a forward Brownian motion `W`,
//! a backward Brownian motion `B` and a finite-activity Poisson random measure
//! `N` on a finite mark set, all sampled on a shared uniform time grid.
//!
//! Every block of a bundle is drawn from its own counter-based ChaCha stream
//! keyed by `(seed, block)` and positioned by `stream_id`, so a bundle is a pure
//! function of its inputs and bundles can be produced in any order or thread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of `[t0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t0: f64, horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("zero steps".into()));
        }
        if !(t0.is_finite() && horizon.is_finite()) || t0 < 0.0 || horizon <= t0 {
            return Err(Error::InvalidGrid(format!(
                "need 0 <= t0 < horizon, got t0={t0}, horizon={horizon}"
            )));
        }
        Ok(Self {
            t0,
            horizon,
            steps,
            dt: (horizon - t0) / steps as f64,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Length of the interval, `horizon - t0`.
    pub fn duration(&self) -> f64 {
        self.horizon - self.t0
    }

    /// Grid time `t_i`; the last node is pinned to `horizon` exactly.
    pub fn time(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.horizon
        } else {
            self.t0 + i as f64 * self.dt
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |i| self.time(i))
    }

    /// Grid with `steps / factor` intervals over the same span.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::InvalidGrid(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        Self::new(self.t0, self.horizon, self.steps / factor)
    }
}

/// Finite mark set `{z_1..z_r}` with intensities `λ_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkSpace {
    marks: Vec<Vec<f64>>,
    intensities: Vec<f64>,
}

impl MarkSpace {
    pub fn new(marks: Vec<Vec<f64>>, intensities: Vec<f64>) -> Result<Self> {
        if marks.is_empty() {
            return Err(Error::InvalidMarks("at least one mark required".into()));
        }
        if marks.len() != intensities.len() {
            return Err(Error::InvalidMarks(format!(
                "{} marks but {} intensities",
                marks.len(),
                intensities.len()
            )));
        }
        if let Some(bad) = intensities.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidMarks(format!(
                "intensities must be finite and positive, got {bad}"
            )));
        }
        let width = marks[0].len();
        if marks.iter().any(|z| z.len() != width) {
            return Err(Error::InvalidMarks("marks of unequal dimension".into()));
        }
        Ok(Self { marks, intensities })
    }

    /// Scalar marks, one intensity each.
    pub fn scalar(marks: &[f64], intensities: &[f64]) -> Result<Self> {
        Self::new(
            marks.iter().map(|z| vec![*z]).collect(),
            intensities.to_vec(),
        )
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    pub fn mark(&self, j: usize) -> &[f64] {
        &self.marks[j]
    }

    pub fn marks(&self) -> &[Vec<f64>] {
        &self.marks
    }

    pub fn intensity(&self, j: usize) -> f64 {
        self.intensities[j]
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    /// `λ(Z)`.
    pub fn total(&self) -> f64 {
        self.intensities.iter().sum()
    }

    /// Discrete `L²_λ` norm, `(Σ_j |k_j|² λ_j)^{1/2}`, for `k` stored mark-major
    /// as `r` blocks of width `width`.
    pub fn k_norm(&self, k: &[f64], width: usize) -> f64 {
        self.k_norm_sq(k, width).sqrt()
    }

    pub fn k_norm_sq(&self, k: &[f64], width: usize) -> f64 {
        k.chunks(width.max(1))
            .zip(&self.intensities)
            .map(|(kj, l)| l * kj.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseDims {
    /// Forward Brownian dimension.
    pub d: usize,
    /// Backward Brownian dimension.
    pub l: usize,
}

/// One joint realization of `(W, B, N)` increments on a grid.
///
/// Matrices are stored row-major with one row per step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    grid: TimeGrid,
    dims: NoiseDims,
    intensities: Vec<f64>,
    dw: Vec<f64>,
    db: Vec<f64>,
    jumps: Vec<u32>,
}

const BLOCK_DW: u64 = 0;
const BLOCK_DB: u64 = 1;
const BLOCK_JUMPS: u64 = 2;

/// Counter-based generator for block `block` of stream `stream_id` under `seed`.
pub fn substream(seed: u64, stream_id: u64, block: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed ^ block.wrapping_mul(0xD1B5_4A32_D192_ED03);
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_id);
    rng
}

/// Derive an unrelated child seed, e.g. per outer run.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut state = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    splitmix64(&mut state)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn gaussian_block(rng: &mut ChaCha8Rng, len: usize, sd: f64) -> Vec<f64> {
    (0..len)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Draw the increments of `(W, B, N)` on `grid`.
pub fn generate_bundle(
    grid: &TimeGrid,
    dims: NoiseDims,
    marks: &MarkSpace,
    seed: u64,
    stream_id: u64,
) -> Result<NoiseBundle> {
    let steps = grid.steps();
    if steps == 0 {
        return Err(Error::InvalidGrid("zero steps".into()));
    }
    let sd = grid.dt().sqrt();
    let dw = gaussian_block(
        &mut substream(seed, stream_id, BLOCK_DW),
        steps * dims.d,
        sd,
    );
    let db = gaussian_block(
        &mut substream(seed, stream_id, BLOCK_DB),
        steps * dims.l,
        sd,
    );

    let poissons = marks
        .intensities()
        .iter()
        .map(|l| Poisson::new(l * grid.dt()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidMarks(e.to_string()))?;
    let mut rng = substream(seed, stream_id, BLOCK_JUMPS);
    let mut jumps = Vec::with_capacity(steps * marks.len());
    for _ in 0..steps {
        for p in &poissons {
            let count: f64 = p.sample(&mut rng);
            jumps.push(count as u32);
        }
    }

    Ok(NoiseBundle {
        grid: *grid,
        dims,
        intensities: marks.intensities().to_vec(),
        dw,
        db,
        jumps,
    })
}

impl NoiseBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dims(&self) -> NoiseDims {
        self.dims
    }

    pub fn n_marks(&self) -> usize {
        self.intensities.len()
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    /// Row `i` of the forward Brownian increments.
    pub fn dw(&self, i: usize) -> &[f64] {
        &self.dw[i * self.dims.d..(i + 1) * self.dims.d]
    }

    /// Row `i` of the backward Brownian increments.
    pub fn db(&self, i: usize) -> &[f64] {
        &self.db[i * self.dims.l..(i + 1) * self.dims.l]
    }

    pub fn jump_counts(&self, i: usize) -> &[u32] {
        let r = self.n_marks();
        &self.jumps[i * r..(i + 1) * r]
    }

    /// `ΔÑ_{i,j} = N_{i,j} - λ_j dt`.
    pub fn compensated_increment(&self, step: usize, mark: usize) -> Result<f64> {
        if step >= self.grid.steps() {
            return Err(Error::IndexOutOfRange {
                what: "step",
                index: step,
                limit: self.grid.steps(),
            });
        }
        if mark >= self.n_marks() {
            return Err(Error::IndexOutOfRange {
                what: "mark",
                index: mark,
                limit: self.n_marks(),
            });
        }
        Ok(self.compensated(step, mark))
    }

    #[inline]
    pub(crate) fn compensated(&self, step: usize, mark: usize) -> f64 {
        self.jumps[step * self.n_marks() + mark] as f64 - self.intensities[mark] * self.grid.dt()
    }

    /// Sum blocks of `factor` consecutive increments, giving the same noise
    /// realization on the coarser grid.
    pub fn coarsen(&self, factor: usize) -> Result<NoiseBundle> {
        let grid = self.grid.coarsen(factor)?;
        let sum_rows = |data: &[f64], width: usize| -> Vec<f64> {
            let mut out = vec![0.0; grid.steps() * width];
            for (i, row) in data
                .chunks(width.max(1))
                .enumerate()
                .take(self.grid.steps())
            {
                let dst = &mut out[(i / factor) * width..(i / factor + 1) * width];
                dst.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            out
        };
        let r = self.n_marks();
        let mut jumps = vec![0u32; grid.steps() * r];
        for i in 0..self.grid.steps() {
            for j in 0..r {
                jumps[(i / factor) * r + j] += self.jumps[i * r + j];
            }
        }
        Ok(NoiseBundle {
            grid,
            dims: self.dims,
            intensities: self.intensities.clone(),
            dw: if self.dims.d == 0 {
                Vec::new()
            } else {
                sum_rows(&self.dw, self.dims.d)
            },
            db: if self.dims.l == 0 {
                Vec::new()
            } else {
                sum_rows(&self.db, self.dims.l)
            },
            jumps,
        })
    }

    /// Replace the backward increments (`steps x l`, row-major), keeping `W`
    /// and `N`.
    pub fn with_db(&self, l: usize, db: Vec<f64>) -> Result<NoiseBundle> {
        if db.len() != l * self.grid.steps() {
            return Err(Error::Dimension(format!(
                "expected {} backward increments, got {}",
                l * self.grid.steps(),
                db.len()
            )));
        }
        Ok(NoiseBundle {
            grid: self.grid,
            dims: NoiseDims { d: self.dims.d, l },
            intensities: self.intensities.clone(),
            dw: self.dw.clone(),
            db,
            jumps: self.jumps.clone(),
        })
    }

    /// Raw backward increments, row-major `steps x l`.
    pub fn db_all(&self) -> &[f64] {
        &self.db
    }
}
