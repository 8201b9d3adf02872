//! Poisson-series route to the transition kernel:
//! `p_t(x) = sum_n e^{-rt} (rt)^n / n! * P{S_n = x}`.

use statrs::function::gamma::ln_gamma;

use super::WalkKernel;
use crate::error::{Result, SheError};

/// Upper limit on table cells, to keep the exact route from exhausting memory.
const MAX_TABLE_CELLS: usize = 40_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PoissonTruncation {
    /// `weights[n] = P{N = n}` for `n <= N`.
    pub weights: Vec<f64>,
    /// Certified bound on `P{N > N}`.
    pub tail_bound: f64,
}

/// Smallest `N` whose certified Poisson tail `P{N_mean > N}` is below `tol`.
///
/// The bound is `w_{N+1} / (1 - mean/(N+2))`, valid once `N + 2 > mean`.
pub fn poisson_truncation(mean: f64, tol: f64) -> PoissonTruncation {
    if mean == 0.0 {
        return PoissonTruncation {
            weights: vec![1.0],
            tail_bound: 0.0,
        };
    }
    let log_w = |n: usize| -mean + n as f64 * mean.ln() - ln_gamma(n as f64 + 1.0);
    let mut n = 0usize;
    loop {
        if (n + 2) as f64 > mean {
            let bound = log_w(n + 1).exp() / (1.0 - mean / (n + 2) as f64);
            if bound < tol {
                let weights = (0..=n).map(|k| log_w(k).exp()).collect();
                return PoissonTruncation {
                    weights,
                    tail_bound: bound,
                };
            }
        }
        n += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    /// Bound on the neglected Poisson tail.
    pub truncation_bound: f64,
    /// Number of series terms kept (`N + 1`).
    pub terms: usize,
}

/// Dense table of `p_t(x)` on the cube `[-radius, radius]^d`; zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    dim: usize,
    radius: i64,
    values: Vec<f64>,
    pub time: f64,
    pub truncation_bound: f64,
    pub terms: usize,
}

impl TransitionTable {
    fn side(&self) -> usize {
        (2 * self.radius + 1) as usize
    }

    fn index(&self, x: &[i64]) -> Option<usize> {
        let side = self.side();
        let mut idx = 0usize;
        for &c in x {
            if c.abs() > self.radius {
                return None;
            }
            idx = idx * side + (c + self.radius) as usize;
        }
        Some(idx)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn get(&self, x: &[i64]) -> f64 {
        assert_eq!(x.len(), self.dim, "point dimension");
        self.index(x).map_or(0.0, |i| self.values[i])
    }

    /// All `(x, p_t(x))` with nonzero mass, in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (Vec<i64>, f64)> + '_ {
        let side = self.side();
        let (d, r) = (self.dim, self.radius);
        self.values.iter().enumerate().filter(|(_, v)| **v != 0.0).map(move |(i, &v)| {
            let mut x = vec![0i64; d];
            let mut rest = i;
            for k in (0..d).rev() {
                x[k] = (rest % side) as i64 - r;
                rest /= side;
            }
            (x, v)
        })
    }

    pub fn total_mass(&self) -> f64 {
        crate::stats::pairwise_sum(&self.values)
    }

    /// `sum_x p_t(x)^2`: the lattice-sum route to the overlap probability.
    pub fn sum_of_squares(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        crate::stats::pairwise_sum(&sq)
    }
}

impl WalkKernel {
    /// `p_t` on its whole (truncated) support.
    pub fn transition_table(&self, t: f64, tol: f64) -> Result<TransitionTable> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(SheError::invalid(format!("time {t} must be finite and >= 0")));
        }
        let trunc = poisson_truncation(self.rate() * t, tol);
        let nmax = trunc.weights.len() - 1;
        let d = self.dim();
        let step = self.jumps().max_jump_norm() as i64;
        let radius = nmax as i64 * step;
        let side = (2 * radius + 1) as usize;
        let cells = side
            .checked_pow(d as u32)
            .filter(|&c| c <= MAX_TABLE_CELLS)
            .ok_or_else(|| {
                SheError::invalid(format!(
                    "series table of side {side} in d={d} exceeds {MAX_TABLE_CELLS} cells"
                ))
            })?;

        // jump offsets as flat-index shifts
        let mut strides = vec![1isize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * side as isize;
        }
        let shifts: Vec<(isize, f64)> = self
            .jumps()
            .jumps()
            .iter()
            .map(|j| {
                let s: isize = j.vec.iter().zip(&strides).map(|(&z, &st)| z as isize * st).sum();
                (s, j.p)
            })
            .collect();

        let centre: usize = strides.iter().map(|&s| s as usize * radius as usize).sum();
        let mut current = vec![0.0; cells];
        current[centre] = 1.0;
        let mut next = vec![0.0; cells];
        let mut acc = vec![0.0; cells];

        for (n, &w) in trunc.weights.iter().enumerate() {
            let reach = n as i64 * step;
            for_each_in_cube(d, side, radius, reach, |idx| {
                acc[idx] += w * current[idx];
            });
            if n == nmax {
                break;
            }
            for_each_in_cube(d, side, radius, reach, |idx| {
                let v = current[idx];
                if v != 0.0 {
                    for &(s, p) in &shifts {
                        next[(idx as isize + s) as usize] += p * v;
                    }
                }
            });
            for_each_in_cube(d, side, radius, reach, |idx| current[idx] = 0.0);
            std::mem::swap(&mut current, &mut next);
        }

        Ok(TransitionTable {
            dim: d,
            radius,
            values: acc,
            time: t,
            truncation_bound: trunc.tail_bound,
            terms: nmax + 1,
        })
    }

    /// `p_t(x) = P{X_t = x}` by the truncated Poisson series.
    pub fn transition_prob(&self, t: f64, x: &[i64], tol: f64) -> Result<SeriesValue> {
        if x.len() != self.dim() {
            return Err(SheError::invalid("point dimension does not match kernel"));
        }
        let table = self.transition_table(t, tol)?;
        Ok(SeriesValue {
            value: table.get(x),
            truncation_bound: table.truncation_bound,
            terms: table.terms,
        })
    }

    /// `P-bar(tau) = sum_x p_tau(x)^2` by the series route.
    pub fn pbar_lattice_sum(&self, tau: f64, tol: f64) -> Result<SeriesValue> {
        let table = self.transition_table(tau, tol)?;
        Ok(SeriesValue {
            value: table.sum_of_squares(),
            truncation_bound: 2.0 * table.truncation_bound,
            terms: table.terms,
        })
    }
}

/// Visits flat indices of the sub-cube `[-reach, reach]^d` of a table with
/// the given side and radius, in lexicographic order.
fn for_each_in_cube<F: FnMut(usize)>(d: usize, side: usize, radius: i64, reach: i64, mut f: F) {
    let lo = (radius - reach) as usize;
    let width = (2 * reach + 1) as usize;
    let mut coord = vec![0usize; d];
    loop {
        let idx = coord.iter().fold(0usize, |acc, &c| acc * side + lo + c);
        f(idx);
        let mut k = d;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            coord[k] += 1;
            if coord[k] < width {
                break;
            }
            coord[k] = 0;
        }
    }
}
