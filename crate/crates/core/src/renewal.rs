//! Volterra renewal equations `f = g + h * f` on a uniform grid.

use serde::Serialize;

use crate::error::{Result, SheError};
use crate::walk_kernel::WalkKernel;

/// `f(t) = g(t) + int_0^t h(t - s) f(s) ds` sampled at `t_i = i * step`.
#[derive(Debug, Clone)]
pub struct RenewalProblem {
    step: f64,
    g: Vec<f64>,
    h: Vec<f64>,
    beta: f64,
}

impl RenewalProblem {
    pub fn new(step: f64, g: Vec<f64>, h: Vec<f64>, beta: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(SheError::invalid(format!("grid step {step} must be positive")));
        }
        if g.len() != h.len() || g.len() < 2 {
            return Err(SheError::invalid("g and h need equal length >= 2"));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(SheError::invalid(format!("beta {beta} must be finite and >= 0")));
        }
        for (name, v) in [("g", &g), ("h", &h)] {
            if let Some(i) = v.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(SheError::invalid(format!("{name}[{i}] = {} is not finite and >= 0", v[i])));
            }
        }
        Ok(Self { step, g, h, beta })
    }

    /// Samples `g`, `h` on `[0, horizon]` with `intervals` steps.
    pub fn from_fns<G, H>(horizon: f64, intervals: usize, g: G, h: H, beta: f64) -> Result<Self>
    where
        G: Fn(f64) -> f64,
        H: Fn(f64) -> f64,
    {
        if intervals == 0 {
            return Err(SheError::invalid("need at least one interval"));
        }
        let step = horizon / intervals as f64;
        let ts: Vec<f64> = (0..=intervals).map(|i| i as f64 * step).collect();
        Self::new(step, ts.iter().map(|&t| g(t)).collect(), ts.iter().map(|&t| h(t)).collect(), beta)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self> {
        Self::new(self.step, self.g.clone(), self.h.clone(), beta)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| i as f64 * self.step).collect()
    }

    pub fn horizon(&self) -> f64 {
        (self.len() - 1) as f64 * self.step
    }

    fn weight(&self, i: usize) -> f64 {
        (-self.beta * i as f64 * self.step).exp()
    }

    /// Trapezoid estimate of `int_0^T e^{-beta t} h(t) dt`.
    pub fn rho_hat(&self) -> f64 {
        let n = self.len() - 1;
        let inner: f64 = (1..n).map(|i| self.weight(i) * self.h[i]).sum();
        self.step * (0.5 * self.h[0] + inner + 0.5 * self.weight(n) * self.h[n])
    }

    /// `sup_t e^{-beta t} g(t)` on the grid.
    pub fn gamma_hat(&self) -> f64 {
        (0..self.len()).map(|i| self.weight(i) * self.g[i]).fold(0.0, f64::max)
    }

    /// Proxy for the neglected `int_T^inf e^{-beta t} h(t) dt`, valid when
    /// `h` is nonincreasing beyond the horizon: `h(T) e^{-beta T} / beta`.
    pub fn tail_proxy(&self) -> f64 {
        let n = self.len() - 1;
        if self.beta == 0.0 {
            if self.h[n] == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.h[n] * self.weight(n) / self.beta
        }
    }

    fn weighted_sup(&self, v: &[f64]) -> f64 {
        v.iter().enumerate().map(|(i, x)| self.weight(i) * x.abs()).fold(0.0, f64::max)
    }
}

/// Trapezoid approximation of `(h * f)(t_i) = int_0^{t_i} h(t_i - s) f(s) ds`.
pub fn convolve(h: &[f64], f: &[f64], step: f64) -> Result<Vec<f64>> {
    if h.len() != f.len() {
        return Err(SheError::invalid("convolve needs equal-length grids"));
    }
    let mut out = vec![0.0; f.len()];
    for i in 1..f.len() {
        let inner: f64 = (1..i).map(|j| h[i - j] * f[j]).sum();
        out[i] = step * (0.5 * h[i] * f[0] + inner + 0.5 * h[0] * f[i]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct RenewalSolution {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Weighted sup-norm change of the final sweep.
    pub last_change: f64,
    /// Ratio of the last two sweep changes.
    pub contraction: f64,
    pub rho_hat: f64,
    pub gamma_hat: f64,
    pub tail_proxy: f64,
}

impl RenewalSolution {
    /// `gamma e^{beta t} / (1 - rho)` on the grid.
    pub fn upper_bound(&self, beta: f64) -> Vec<f64> {
        self.times
            .iter()
            .map(|t| self.gamma_hat * (beta * t).exp() / (1.0 - self.rho_hat))
            .collect()
    }
}

/// Picard iteration `f <- g + h * f` from `f = g`, stopped when the
/// `e^{-beta t}`-weighted sup change drops below `tol`.
pub fn picard_solve(problem: &RenewalProblem, tol: f64, max_iter: usize) -> Result<RenewalSolution> {
    let rho = problem.rho_hat();
    if rho >= 1.0 {
        return Err(SheError::invalid(format!(
            "rho_hat = {rho} >= 1 at beta = {}; raise beta",
            problem.beta
        )));
    }
    let mut f = problem.g.clone();
    let mut prev_change = f64::NAN;
    let mut contraction = 0.0;
    for iteration in 1..=max_iter {
        let conv = convolve(&problem.h, &f, problem.step)?;
        let next: Vec<f64> = problem.g.iter().zip(&conv).map(|(g, c)| g + c).collect();
        let diff: Vec<f64> = next.iter().zip(&f).map(|(a, b)| a - b).collect();
        let change = problem.weighted_sup(&diff);
        if prev_change > 0.0 {
            contraction = change / prev_change;
        }
        f = next;
        if change < tol {
            return Ok(RenewalSolution {
                times: problem.times(),
                values: f,
                iterations: iteration,
                last_change: change,
                contraction,
                rho_hat: rho,
                gamma_hat: problem.gamma_hat(),
                tail_proxy: problem.tail_proxy(),
            });
        }
        prev_change = change;
    }
    Err(SheError::numeric(
        format!("renewal Picard iteration did not converge in {max_iter} sweeps (contraction {contraction:.3})"),
        prev_change,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Super,
    Sub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComparisonVerdict {
    /// The defining inequality and the ordering against `f` both hold.
    Holds,
    /// `F` is a super/sub-solution but the ordering failed (should not happen).
    OrderingFails,
    NotASuperSolution,
    NotASubSolution,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub direction: Direction,
    pub verdict: ComparisonVerdict,
    /// Largest amount by which `F` misses its defining inequality (<= 0 if it holds).
    pub defining_violation: f64,
    /// Largest amount by which `F` is on the wrong side of `f` (<= 0 if ordered).
    pub ordering_violation: f64,
}

/// Checks `F >= g + h * F` (super) or `F <= g + h * F` (sub), then the
/// ordering of `F` against the Picard solution. `tol` absorbs rounding and
/// the solver tolerance.
pub fn comparison_check(
    problem: &RenewalProblem,
    candidate: &[f64],
    direction: Direction,
    tol: f64,
) -> Result<ComparisonReport> {
    if candidate.len() != problem.len() {
        return Err(SheError::invalid("candidate grid length does not match problem"));
    }
    if candidate.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(SheError::invalid("candidate must be finite and >= 0"));
    }
    let conv = convolve(&problem.h, candidate, problem.step)?;
    let sign = match direction {
        Direction::Super => 1.0,
        Direction::Sub => -1.0,
    };
    let defining_violation = candidate
        .iter()
        .zip(problem.g.iter().zip(&conv))
        .map(|(big_f, (g, c))| sign * (g + c - big_f))
        .fold(f64::NEG_INFINITY, f64::max);
    let solution = picard_solve(problem, tol * 1e-3, 10_000)?;
    let ordering_violation = candidate
        .iter()
        .zip(&solution.values)
        .map(|(big_f, f)| sign * (f - big_f))
        .fold(f64::NEG_INFINITY, f64::max);
    let verdict = if defining_violation > tol {
        match direction {
            Direction::Super => ComparisonVerdict::NotASuperSolution,
            Direction::Sub => ComparisonVerdict::NotASubSolution,
        }
    } else if ordering_violation > tol {
        ComparisonVerdict::OrderingFails
    } else {
        ComparisonVerdict::Holds
    };
    Ok(ComparisonReport {
        direction,
        verdict,
        defining_violation,
        ordering_violation,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CriticalBeta {
    /// Root of `ell^2 Upsilon(beta) = 1`, or 0 when there is none.
    pub beta: f64,
    /// `ell^2 Upsilon(0)`, infinite for a recurrent symmetrized walk.
    pub strength_at_zero: f64,
    pub evaluations: usize,
}

impl CriticalBeta {
    pub fn is_sentinel(&self) -> bool {
        self.beta == 0.0
    }
}

/// Bisection for `ell^2 Upsilon(beta*) = 1` to `1e-8` relative width.
pub fn critical_beta(kernel: &WalkKernel, ell: f64) -> Result<CriticalBeta> {
    critical_beta_with(ell, |beta| Ok(kernel.upsilon(beta, 1e-11)?.value))
}

/// Same, against any decreasing transform `upsilon`.
pub fn critical_beta_with<U>(ell: f64, mut upsilon: U) -> Result<CriticalBeta>
where
    U: FnMut(f64) -> Result<f64>,
{
    if !(ell > 0.0 && ell.is_finite()) {
        return Err(SheError::invalid(format!("ell {ell} must be positive")));
    }
    let ell2 = ell * ell;
    let mut evaluations = 1;
    let at_zero = ell2 * upsilon(0.0)?;
    if at_zero <= 1.0 {
        return Ok(CriticalBeta {
            beta: 0.0,
            strength_at_zero: at_zero,
            evaluations,
        });
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    loop {
        evaluations += 1;
        if ell2 * upsilon(hi)? < 1.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(SheError::numeric("could not bracket the critical beta", hi));
        }
    }
    while hi - lo > 1e-8 * hi {
        let mid = 0.5 * (lo + hi);
        evaluations += 1;
        let v = ell2 * upsilon(mid)?;
        if v == 1.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if v > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalBeta {
        beta: 0.5 * (lo + hi),
        strength_at_zero: at_zero,
        evaluations,
    })
}

/// Smallest `beta` in `0, 1/8, 1/4, ...` that makes `rho_hat < target`.
pub fn auto_beta(problem: &RenewalProblem, target: f64) -> Result<RenewalProblem> {
    if problem.rho_hat() < target {
        return Ok(problem.clone());
    }
    let mut beta: f64 = 0.125;
    while beta < 1e9 {
        let p = problem.with_beta(beta)?;
        if p.rho_hat() < target {
            return Ok(p);
        }
        beta *= 2.0;
    }
    Err(SheError::numeric("no beta brings rho_hat below target", problem.rho_hat()))
}
