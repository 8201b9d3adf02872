//! The driving random walk: jump law, generator rate, characteristic
//! function, transition kernel, replica overlap and its Laplace transform.

mod fourier;
mod path;
mod series;

pub use fourier::{OverlapCurve, SpectralValue, UpsilonValue};
pub use path::{overlap_time, overlap_time_until, sample_walk_path, WalkPath, WalkSampler};
pub use series::{poisson_truncation, PoissonTruncation, SeriesValue, TransitionTable};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SheError};

/// Default truncation tolerance for Poisson series.
pub const DEFAULT_SERIES_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Jump {
    pub vec: Vec<i64>,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JumpFile {
    dim: usize,
    jumps: Vec<Jump>,
}

/// Law of a single jump `Z_1`: finitely many lattice vectors with masses.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpDistribution {
    dim: usize,
    jumps: Vec<Jump>,
    generating: bool,
}

impl JumpDistribution {
    pub fn new(dim: usize, jumps: Vec<Jump>) -> Result<Self> {
        if dim == 0 {
            return Err(SheError::invalid("dimension must be positive"));
        }
        if jumps.is_empty() {
            return Err(SheError::invalid("jump law needs at least one atom"));
        }
        for (i, j) in jumps.iter().enumerate() {
            if j.vec.len() != dim {
                return Err(SheError::invalid(format!(
                    "jump {i} has dimension {} (expected {dim})",
                    j.vec.len()
                )));
            }
            if !(j.p > 0.0 && j.p <= 1.0) {
                return Err(SheError::invalid(format!("jump {i} mass {} outside (0,1]", j.p)));
            }
        }
        for i in 0..jumps.len() {
            for k in i + 1..jumps.len() {
                if jumps[i].vec == jumps[k].vec {
                    return Err(SheError::invalid(format!(
                        "jump vector {:?} listed twice",
                        jumps[i].vec
                    )));
                }
            }
        }
        let total: f64 = jumps.iter().map(|j| j.p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(SheError::invalid(format!("masses sum to {total}, not 1")));
        }
        let generating = generates_lattice(dim, jumps.iter().map(|j| j.vec.as_slice()));
        Ok(Self {
            dim,
            jumps,
            generating,
        })
    }

    /// Nearest-neighbour walk: each of the `2d` unit vectors with mass `1/(2d)`.
    pub fn simple(dim: usize) -> Self {
        let p = 1.0 / (2 * dim) as f64;
        let jumps = (0..dim)
            .flat_map(|axis| {
                [1i64, -1].into_iter().map(move |s| {
                    let mut v = vec![0; dim];
                    v[axis] = s;
                    Jump { vec: v, p }
                })
            })
            .collect();
        Self::new(dim, jumps).expect("simple walk is valid")
    }

    /// Simple walk that stays put with probability `hold`.
    pub fn lazy_simple(dim: usize, hold: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&hold) {
            return Err(SheError::invalid("holding mass must lie in [0,1)"));
        }
        let mut jumps: Vec<Jump> = Self::simple(dim)
            .jumps
            .into_iter()
            .map(|j| Jump {
                p: j.p * (1.0 - hold),
                ..j
            })
            .collect();
        if hold > 0.0 {
            jumps.push(Jump {
                vec: vec![0; dim],
                p: hold,
            });
        }
        let total: f64 = jumps.iter().map(|j| j.p).sum();
        // absorb rounding into the holding mass
        if let Some(last) = jumps.last_mut() {
            last.p += 1.0 - total;
        }
        Self::new(dim, jumps)
    }

    /// Symmetric one-dimensional law with `P{Z = ±n} ∝ n^{-(1+alpha)}` for
    /// `1 <= n <= radius`: a finite-support surrogate of a stable-like walk.
    pub fn truncated_power_law(alpha: f64, radius: u32) -> Result<Self> {
        if !(alpha > 0.0) || radius == 0 {
            return Err(SheError::invalid("need alpha > 0 and radius >= 1"));
        }
        let raw: Vec<f64> = (1..=radius).map(|n| (n as f64).powf(-(1.0 + alpha))).collect();
        let norm = 2.0 * raw.iter().sum::<f64>();
        let mut jumps = Vec::with_capacity(2 * radius as usize);
        for (n, w) in (1..=radius as i64).zip(&raw) {
            jumps.push(Jump { vec: vec![n], p: w / norm });
            jumps.push(Jump { vec: vec![-n], p: w / norm });
        }
        let total: f64 = jumps.iter().map(|j| j.p).sum();
        jumps[0].p += 1.0 - total;
        Self::new(1, jumps)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: JumpFile = serde_json::from_str(text)
            .map_err(|e| SheError::invalid(format!("kernel JSON: {e}")))?;
        Self::new(file.dim, file.jumps)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&JumpFile {
            dim: self.dim,
            jumps: self.jumps.clone(),
        })
        .expect("jump law serializes")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// Whether the support (equivalently the symmetrized walk's support)
    /// generates `Z^d` as a group.
    pub fn generates_lattice(&self) -> bool {
        self.generating
    }

    /// Largest sup-norm of a jump vector.
    pub fn max_jump_norm(&self) -> u64 {
        self.jumps
            .iter()
            .flat_map(|j| j.vec.iter().map(|c| c.unsigned_abs()))
            .max()
            .unwrap_or(0)
    }

    /// Mass at the zero vector.
    pub fn hold_mass(&self) -> f64 {
        self.jumps
            .iter()
            .filter(|j| j.vec.iter().all(|&c| c == 0))
            .map(|j| j.p)
            .sum()
    }

    /// `E[Z Z^T]`, row-major.
    pub fn second_moment(&self) -> Vec<f64> {
        let d = self.dim;
        let mut m = vec![0.0; d * d];
        for j in &self.jumps {
            for a in 0..d {
                for b in 0..d {
                    m[a * d + b] += j.p * (j.vec[a] * j.vec[b]) as f64;
                }
            }
        }
        m
    }
}

/// Integer row reduction: does the set of vectors generate `Z^d`?
fn generates_lattice<'a>(dim: usize, vecs: impl Iterator<Item = &'a [i64]>) -> bool {
    let mut rows: Vec<Vec<i128>> = vecs
        .filter(|v| v.iter().any(|&c| c != 0))
        .map(|v| v.iter().map(|&c| c as i128).collect())
        .collect();
    let mut pivot_row = 0;
    for col in 0..dim {
        // Euclid on column `col` among rows pivot_row.. until one nonzero remains
        loop {
            let mut best: Option<usize> = None;
            for r in pivot_row..rows.len() {
                if rows[r][col] != 0
                    && best.is_none_or(|b| rows[r][col].abs() < rows[b][col].abs())
                {
                    best = Some(r);
                }
            }
            let Some(b) = best else {
                return false;
            };
            rows.swap(pivot_row, b);
            let mut done = true;
            for r in pivot_row + 1..rows.len() {
                if rows[r][col] != 0 {
                    let f = rows[r][col] / rows[pivot_row][col];
                    for c in col..dim {
                        rows[r][c] -= f * rows[pivot_row][c];
                    }
                    if rows[r][col] != 0 {
                        done = false;
                    }
                }
            }
            if done {
                break;
            }
        }
        if rows[pivot_row][col].abs() != 1 {
            return false;
        }
        pivot_row += 1;
    }
    true
}

/// Continuous-time random walk: jumps at the event times of a Poisson
/// clock of intensity `rate` (1 for the walk driving the equation).
#[derive(Debug, Clone, PartialEq)]
pub struct WalkKernel {
    jumps: JumpDistribution,
    rate: f64,
    transient_assertion: Option<bool>,
}

impl WalkKernel {
    pub fn new(jumps: JumpDistribution) -> Self {
        Self {
            jumps,
            rate: 1.0,
            transient_assertion: None,
        }
    }

    pub fn with_rate(mut self, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(SheError::invalid("rate must be positive"));
        }
        self.rate = rate;
        Ok(self)
    }

    /// Overrides the automatic transience classification of `X - X'`.
    pub fn assert_transient(mut self, transient: bool) -> Self {
        self.transient_assertion = Some(transient);
        self
    }

    pub fn simple(dim: usize) -> Self {
        Self::new(JumpDistribution::simple(dim))
    }

    pub fn jumps(&self) -> &JumpDistribution {
        &self.jumps
    }

    pub fn dim(&self) -> usize {
        self.jumps.dim
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Transience of the symmetrized walk `X - X'`, either asserted by the
    /// caller or inferred from `d >= 3` with a support generating `Z^d`.
    pub fn is_transient_symmetrized(&self) -> bool {
        self.transient_assertion
            .unwrap_or(self.dim() >= 3 && self.jumps.generating)
    }

    /// `phi(xi) = E exp(i xi . Z_1)`.
    pub fn char_function(&self, xi: &[f64]) -> Result<Complex64> {
        if xi.len() != self.dim() {
            return Err(SheError::invalid(format!(
                "xi has dimension {} (kernel dimension {})",
                xi.len(),
                self.dim()
            )));
        }
        Ok(self
            .jumps
            .jumps
            .iter()
            .map(|j| {
                let phase: f64 = j.vec.iter().zip(xi).map(|(&z, &x)| z as f64 * x).sum();
                Complex64::from_polar(j.p, phase)
            })
            .sum())
    }

    /// `1 - Re phi(xi)`, the symbol of `-L` up to the rate.
    #[inline]
    pub(crate) fn gap(&self, xi: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in &self.jumps.jumps {
            let mut phase = 0.0;
            for (&z, &x) in j.vec.iter().zip(xi) {
                phase += z as f64 * x;
            }
            s += j.p * (1.0 - phase.cos());
        }
        s
    }

    /// Escape proxy: the horizon beyond which a periodic box of the given
    /// smallest extent stops emulating the infinite lattice.
    pub fn wrap_safe_horizon(&self, min_extent: usize) -> f64 {
        let m = self.jumps.max_jump_norm().max(1) as f64;
        let r = min_extent as f64 / (2.0 * m);
        r * r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn char_function_at_origin_is_one() {
        for k in [WalkKernel::simple(1), WalkKernel::simple(3)] {
            let z = k.char_function(&vec![0.0; k.dim()]).unwrap();
            assert_abs_diff_eq!(z.re, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn simple_walk_char_function_values() {
        let k = WalkKernel::simple(1);
        // direct summation: (e^{i xi} + e^{-i xi}) / 2
        let direct = |xi: f64| {
            (Complex64::from_polar(1.0, xi) + Complex64::from_polar(1.0, -xi)) / 2.0
        };
        for xi in [PI, PI / 2.0] {
            let z = k.char_function(&[xi]).unwrap();
            assert_abs_diff_eq!(z.re, direct(xi).re, epsilon = 1e-15);
            assert_abs_diff_eq!(z.im, direct(xi).im, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(k.char_function(&[PI]).unwrap().re, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k.char_function(&[PI / 2.0]).unwrap().re, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn char_function_dimension_mismatch() {
        assert!(matches!(
            WalkKernel::simple(2).char_function(&[0.1]),
            Err(SheError::InvalidArgument(_))
        ));
    }

    #[test]
    fn rejects_bad_laws() {
        let j = |v: Vec<i64>, p| Jump { vec: v, p };
        assert!(JumpDistribution::new(1, vec![j(vec![1], 0.5), j(vec![-1], 0.4)]).is_err());
        assert!(JumpDistribution::new(1, vec![j(vec![1], 0.5), j(vec![1], 0.5)]).is_err());
        assert!(JumpDistribution::new(2, vec![j(vec![1], 1.0)]).is_err());
        assert!(JumpDistribution::new(1, vec![j(vec![1], 1.5), j(vec![-1], -0.5)]).is_err());
    }

    #[test]
    fn lattice_generation_flag() {
        assert!(JumpDistribution::simple(3).generates_lattice());
        let j = |v: Vec<i64>, p| Jump { vec: v, p };
        let even = JumpDistribution::new(1, vec![j(vec![2], 0.5), j(vec![-2], 0.5)]).unwrap();
        assert!(!even.generates_lattice());
        let coprime = JumpDistribution::new(1, vec![j(vec![2], 0.5), j(vec![3], 0.5)]).unwrap();
        assert!(coprime.generates_lattice());
        let flat =
            JumpDistribution::new(2, vec![j(vec![1, 0], 0.5), j(vec![-1, 0], 0.5)]).unwrap();
        assert!(!flat.generates_lattice());
        let diag =
            JumpDistribution::new(2, vec![j(vec![1, 1], 0.5), j(vec![1, -1], 0.5)]).unwrap();
        assert!(!diag.generates_lattice());
    }

    #[test]
    fn transience_classification() {
        assert!(WalkKernel::simple(3).is_transient_symmetrized());
        assert!(!WalkKernel::simple(1).is_transient_symmetrized());
        assert!(!WalkKernel::simple(2).is_transient_symmetrized());
        assert!(WalkKernel::simple(1).assert_transient(true).is_transient_symmetrized());
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{ "dim": 1, "jumps": [ { "vec": [1], "p": 0.5 }, { "vec": [-1], "p": 0.5 } ] }"#;
        let law = JumpDistribution::from_json(text).unwrap();
        assert_eq!(law, JumpDistribution::simple(1));
        assert_eq!(JumpDistribution::from_json(&law.to_json()).unwrap(), law);
        assert!(JumpDistribution::from_json(r#"{"dim":1,"jumps":[],"extra":1}"#).is_err());
    }

    #[test]
    fn power_law_is_normalized_and_symmetric() {
        let law = JumpDistribution::truncated_power_law(0.5, 20).unwrap();
        let total: f64 = law.jumps().iter().map(|j| j.p).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
        assert_eq!(law.max_jump_norm(), 20);
        let k = WalkKernel::new(law);
        assert_abs_diff_eq!(k.char_function(&[0.7]).unwrap().im, 0.0, epsilon = 1e-14);
    }
}
