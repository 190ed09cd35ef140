//! Least-squares conditional expectations on a polynomial basis of the state.
//!
//! Coordinates are standardized per fit; coordinates with no spread across the
//! sample are dropped since they are collinear with the constant. The normal
//! equations are solved by Cholesky, falling back to a ridge penalty of
//! `1e-10 · trace` when the Gram matrix is numerically singular.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHUNK: usize = 1024;
const RIDGE: f64 = 1e-10;

/// Monomials with every exponent `<= degree` and total degree `<= max_total`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasisSpec {
    pub degree: u32,
    pub max_total: u32,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            degree: 2,
            max_total: 2,
        }
    }
}

impl BasisSpec {
    pub fn exponents(&self, dims: usize) -> Vec<Vec<u32>> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; dims];
        fn rec(
            spec: &BasisSpec,
            cur: &mut Vec<u32>,
            pos: usize,
            total: u32,
            out: &mut Vec<Vec<u32>>,
        ) {
            if pos == cur.len() {
                out.push(cur.clone());
                return;
            }
            for e in 0..=spec.degree.min(spec.max_total - total) {
                cur[pos] = e;
                rec(spec, cur, pos + 1, total + e, out);
            }
            cur[pos] = 0;
        }
        rec(self, &mut cur, 0, 0, &mut out);
        // constant first, then by total degree
        out.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
        out
    }

    pub fn size(&self, dims: usize) -> usize {
        self.exponents(dims).len()
    }

    /// Same spec with both limits capped at `total`.
    pub fn truncated(&self, total: u32) -> BasisSpec {
        BasisSpec {
            degree: self.degree.min(total),
            max_total: self.max_total.min(total),
        }
    }
}

/// Factorized normal equations for one sample of states.
pub(crate) struct Regressor {
    coords: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    exponents: Vec<Vec<u32>>,
    design: Vec<f64>,
    rows: usize,
    chol: Cholesky<f64, Dyn>,
    pub ridge: bool,
}

/// Coefficients for a block of targets, `basis × width` column-major.
pub(crate) struct Fit {
    coef: DMatrix<f64>,
}

impl Regressor {
    /// `states` is `rows × m` row-major.
    pub fn new(states: &[f64], m: usize, basis: &BasisSpec, step: usize) -> Result<Self> {
        let rows = states.len().checked_div(m).unwrap_or(0);
        if rows == 0 {
            return Err(Error::Basis { step });
        }
        let mut coords = Vec::new();
        let mut mean = Vec::new();
        let mut scale = Vec::new();
        for c in 0..m {
            let mu = states.iter().skip(c).step_by(m).sum::<f64>() / rows as f64;
            let var = states
                .iter()
                .skip(c)
                .step_by(m)
                .map(|v| (v - mu).powi(2))
                .sum::<f64>()
                / rows as f64;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + mu.abs()) {
                coords.push(c);
                mean.push(mu);
                scale.push(sd);
            }
        }
        let exponents = basis.exponents(coords.len());
        let b = exponents.len();

        let mut design = vec![0.0; rows * b];
        design
            .par_chunks_mut(b)
            .zip(states.par_chunks(m))
            .for_each_init(
                || vec![0.0; coords.len()],
                |z, (row, x)| {
                    for (zc, (&c, (mu, sd))) in
                        z.iter_mut().zip(coords.iter().zip(mean.iter().zip(&scale)))
                    {
                        *zc = (x[c] - mu) / sd;
                    }
                    for (slot, e) in row.iter_mut().zip(&exponents) {
                        *slot = e
                            .iter()
                            .zip(z.iter())
                            .map(|(&k, v)| v.powi(k as i32))
                            .product();
                    }
                },
            );

        let gram = chunked_sum(
            &design,
            b,
            |row, acc| {
                for i in 0..b {
                    for j in 0..=i {
                        acc[i * b + j] += row[i] * row[j];
                    }
                }
            },
            b * b,
        );
        let mut g = DMatrix::<f64>::zeros(b, b);
        for i in 0..b {
            for j in 0..=i {
                let v = gram[i * b + j] / rows as f64;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }

        let (chol, ridge) = match factor(&g) {
            Some(c) => (c, false),
            None => {
                let mut reg = g.clone();
                let penalty = RIDGE * g.trace();
                for i in 0..b {
                    reg[(i, i)] += penalty;
                }
                (Cholesky::new(reg).ok_or(Error::Basis { step })?, true)
            }
        };

        Ok(Self {
            coords,
            mean,
            scale,
            exponents,
            design,
            rows,
            chol,
            ridge,
        })
    }

    pub fn basis_len(&self) -> usize {
        self.exponents.len()
    }

    /// Least-squares coefficients for `targets` (`rows × width` row-major).
    pub fn fit(&self, targets: &[f64], width: usize) -> Fit {
        let b = self.basis_len();
        debug_assert_eq!(targets.len(), self.rows * width);
        let rhs = chunked_sum_pairs(&self.design, b, targets, width);
        let mut r = DMatrix::<f64>::zeros(b, width);
        for i in 0..b {
            for w in 0..width {
                r[(i, w)] = rhs[i * width + w] / self.rows as f64;
            }
        }
        Fit {
            coef: self.chol.solve(&r),
        }
    }

    /// Fitted values at row `row` of the training sample.
    pub fn fitted(&self, fit: &Fit, row: usize, out: &mut [f64]) {
        let b = self.basis_len();
        let phi = &self.design[row * b..(row + 1) * b];
        for (w, o) in out.iter_mut().enumerate() {
            *o = (0..b).map(|i| phi[i] * fit.coef[(i, w)]).sum();
        }
    }

    /// Snapshot for evaluation away from the training sample.
    pub fn table(&self, fits: Vec<Fit>) -> StepTable {
        StepTable {
            coords: self.coords.clone(),
            mean: self.mean.clone(),
            scale: self.scale.clone(),
            exponents: self.exponents.clone(),
            coefs: fits.into_iter().map(|f| f.coef).collect(),
        }
    }
}

fn factor(g: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let max_diag = (0..g.nrows()).map(|i| g[(i, i)]).fold(0.0, f64::max);
    let chol = Cholesky::new(g.clone())?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|v| v * v)
        .fold(f64::INFINITY, f64::min);
    if min_pivot > 1e-13 * max_diag {
        Some(chol)
    } else {
        None
    }
}

/// Sum of per-row contributions in fixed chunks, reduced in chunk order so
/// results do not depend on thread scheduling.
fn chunked_sum<F>(design: &[f64], b: usize, add: F, len: usize) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let parts: Vec<Vec<f64>> = design
        .par_chunks(b * CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; len];
            for row in chunk.chunks(b) {
                add(row, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; len];
    for p in parts {
        total.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    total
}

fn chunked_sum_pairs(design: &[f64], b: usize, targets: &[f64], width: usize) -> Vec<f64> {
    let parts: Vec<Vec<f64>> = design
        .par_chunks(b * CHUNK)
        .zip(targets.par_chunks(width * CHUNK))
        .map(|(d, t)| {
            let mut acc = vec![0.0; b * width];
            for (row, y) in d.chunks(b).zip(t.chunks(width)) {
                for (dst, ri) in acc.chunks_mut(width).zip(row) {
                    dst.iter_mut().zip(y).for_each(|(a, yv)| *a += ri * yv);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; b * width];
    for p in parts {
        total.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    total
}

/// Regression coefficients of one backward step, evaluable at any state.
#[derive(Debug, Clone)]
pub struct StepTable {
    coords: Vec<usize>,
    mean: Vec<f64>,
    scale: Vec<f64>,
    exponents: Vec<Vec<u32>>,
    coefs: Vec<DMatrix<f64>>,
}

impl StepTable {
    /// Evaluate fitted block `which` at state `x`.
    pub fn eval(&self, which: usize, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = self
            .coords
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&c, (mu, sd))| (x[c] - mu) / sd)
            .collect();
        let phi: Vec<f64> = self
            .exponents
            .iter()
            .map(|e| e.iter().zip(&z).map(|(&k, v)| v.powi(k as i32)).product())
            .collect();
        let coef = &self.coefs[which];
        (0..coef.ncols())
            .map(|w| phi.iter().enumerate().map(|(i, p)| p * coef[(i, w)]).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_enumeration() {
        let spec = BasisSpec {
            degree: 2,
            max_total: 2,
        };
        let e = spec.exponents(2);
        assert_eq!(e.len(), 6);
        assert_eq!(e[0], vec![0, 0]);
        let spec = BasisSpec {
            degree: 1,
            max_total: 2,
        };
        assert_eq!(spec.exponents(2).len(), 4);
        assert_eq!(spec.exponents(0), vec![Vec::<u32>::new()]);
    }

    #[test]
    fn recovers_quadratic() {
        let xs: Vec<f64> = (0..200).map(|i| -1.0 + i as f64 / 100.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x).collect();
        let reg = Regressor::new(&xs, 1, &BasisSpec::default(), 0).unwrap();
        let fit = reg.fit(&ys, 1);
        let mut out = [0.0];
        reg.fitted(&fit, 37, &mut out);
        assert!((out[0] - ys[37]).abs() < 1e-12);
        let table = reg.table(vec![fit]);
        let v = table.eval(0, &[0.25]);
        assert!((v[0] - (1.0 - 0.5 + 0.5 * 0.0625)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_states_reduce_to_mean() {
        let xs = vec![0.5; 50];
        let ys: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let reg = Regressor::new(&xs, 1, &BasisSpec::default(), 3).unwrap();
        assert_eq!(reg.basis_len(), 1);
        assert!(!reg.ridge);
        let fit = reg.fit(&ys, 1);
        let mut out = [0.0];
        reg.fitted(&fit, 0, &mut out);
        assert!((out[0] - 24.5).abs() < 1e-12);
    }

    #[test]
    fn collinear_columns_trigger_ridge() {
        // two coordinates that are exact copies of each other
        let xs: Vec<f64> = (0..100).flat_map(|i| [i as f64, i as f64]).collect();
        let ys: Vec<f64> = (0..100).map(|i| 3.0 * i as f64).collect();
        let reg = Regressor::new(
            &xs,
            2,
            &BasisSpec {
                degree: 1,
                max_total: 1,
            },
            0,
        )
        .unwrap();
        assert!(reg.ridge);
        let fit = reg.fit(&ys, 1);
        let mut out = [0.0];
        reg.fitted(&fit, 10, &mut out);
        assert!((out[0] - 30.0).abs() < 1e-6);
    }

    #[test]
    fn empty_sample_is_a_basis_error() {
        assert!(matches!(
            Regressor::new(&[], 1, &BasisSpec::default(), 7),
            Err(Error::Basis { step: 7 })
        ));
    }
}
