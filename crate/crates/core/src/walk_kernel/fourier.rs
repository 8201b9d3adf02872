//! Fourier route: `P-bar(tau) = (2pi)^{-d} int exp(-2 r tau (1 - Re phi))` and
//! `Upsilon(beta) = (2pi)^{-d} int dxi / (beta + 2 r (1 - Re phi))`.

use std::f64::consts::PI;

use super::WalkKernel;
use crate::error::{Result, SheError};
use crate::quadrature::Rule;

const PANEL_ORDER: usize = 16;
/// Largest spectral grid (points) tried before giving up.
const MAX_GRID_POINTS: usize = 4_500_000;
const MAX_SHELL_LEVELS: usize = 80;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralValue {
    pub value: f64,
    pub est_error: f64,
}

/// `Upsilon(beta)`; `value` is `+inf` for a recurrent symmetrized walk at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpsilonValue {
    pub value: f64,
    pub est_error: f64,
}

impl UpsilonValue {
    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

/// Tensor Gauss–Legendre grid on `[-pi, pi]^d` with `2^level` panels per axis,
/// holding the symbol `1 - Re phi` at every node.
#[derive(Debug, Clone)]
struct SpectralGrid {
    axis_nodes: Vec<f64>,
    weights: Vec<f64>,
    gaps: Vec<f64>,
}

impl SpectralGrid {
    fn points(d: usize, level: u32) -> usize {
        ((1usize << level) * PANEL_ORDER).saturating_pow(d as u32)
    }

    fn build(kernel: &WalkKernel, rule: &Rule, level: u32) -> Self {
        let d = kernel.dim();
        let (xs, ws) = rule.composite(-PI, PI, 1 << level);
        let p = xs.len();
        let total = p.pow(d as u32);
        let mut weights = Vec::with_capacity(total);
        let mut gaps = Vec::with_capacity(total);
        let mut idx = vec![0usize; d];
        let mut xi = vec![0.0; d];
        let norm = (2.0 * PI).powi(d as i32);
        for _ in 0..total {
            let mut w = 1.0 / norm;
            for k in 0..d {
                xi[k] = xs[idx[k]];
                w *= ws[idx[k]];
            }
            weights.push(w);
            gaps.push(kernel.gap(&xi));
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < p {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self {
            axis_nodes: xs,
            weights,
            gaps,
        }
    }

    fn overlap(&self, scale: f64, shift: Option<&[i64]>) -> f64 {
        match shift {
            None => {
                let mut s = 0.0;
                for (w, g) in self.weights.iter().zip(&self.gaps) {
                    s += w * (-scale * g).exp();
                }
                s
            }
            Some(w_vec) => {
                let d = w_vec.len();
                let p = self.axis_nodes.len();
                let mut idx = vec![0usize; d];
                let mut s = 0.0;
                for (w, g) in self.weights.iter().zip(&self.gaps) {
                    let phase: f64 = (0..d).map(|k| self.axis_nodes[idx[k]] * w_vec[k] as f64).sum();
                    s += w * phase.cos() * (-scale * g).exp();
                    for k in (0..d).rev() {
                        idx[k] += 1;
                        if idx[k] < p {
                            break;
                        }
                        idx[k] = 0;
                    }
                }
                s
            }
        }
    }
}

/// Replica-overlap values on a shared spectral grid, so that the computed
/// family is exactly nonincreasing in `tau`.
#[derive(Debug, Clone)]
pub struct OverlapCurve {
    pub taus: Vec<f64>,
    pub values: Vec<SpectralValue>,
    pub level: u32,
}

impl WalkKernel {
    /// Refines until the estimate at the largest `tau` stabilizes, then
    /// evaluates all `taus` on that grid.
    fn overlap_family(&self, taus: &[f64], shift: Option<&[i64]>, tol: f64) -> Result<OverlapCurve> {
        for &t in taus {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(SheError::invalid(format!("tau {t} must be finite and >= 0")));
            }
        }
        if let Some(w) = shift {
            if w.len() != self.dim() {
                return Err(SheError::invalid("shift dimension does not match kernel"));
            }
        }
        let d = self.dim();
        let rule = Rule::new(PANEL_ORDER);
        let tau_max = taus.iter().cloned().fold(0.0, f64::max);
        let scale = |t: f64| 2.0 * self.rate() * t;
        let mut level = 0u32;
        let mut prev = SpectralGrid::build(self, &rule, level);
        let mut prev_val = prev.overlap(scale(tau_max), shift);
        loop {
            level += 1;
            if SpectralGrid::points(d, level) > MAX_GRID_POINTS {
                let next_val = prev_val;
                return Err(SheError::numeric(
                    format!("overlap quadrature did not converge at tau={tau_max}"),
                    (next_val - prev.overlap(scale(tau_max), shift)).abs().max(tol),
                ));
            }
            let grid = SpectralGrid::build(self, &rule, level);
            let val = grid.overlap(scale(tau_max), shift);
            let err = (val - prev_val).abs();
            if err < tol {
                let values = taus
                    .iter()
                    .map(|&t| {
                        let v = grid.overlap(scale(t), shift);
                        let coarse = prev.overlap(scale(t), shift);
                        SpectralValue {
                            value: v,
                            est_error: (v - coarse).abs(),
                        }
                    })
                    .collect();
                return Ok(OverlapCurve {
                    taus: taus.to_vec(),
                    values,
                    level,
                });
            }
            prev = grid;
            prev_val = val;
        }
    }

    /// `P-bar(tau) = P{X_tau = X'_tau}` by quadrature of the Fourier form.
    pub fn pbar(&self, tau: f64, tol: f64) -> Result<SpectralValue> {
        Ok(self.overlap_family(&[tau], None, tol)?.values[0])
    }

    /// `P-bar` at many times on one shared grid.
    pub fn pbar_curve(&self, taus: &[f64], tol: f64) -> Result<OverlapCurve> {
        self.overlap_family(taus, None, tol)
    }

    /// `P{X_tau - X'_tau = w}` for independent copies `X, X'`.
    pub fn difference_prob_curve(&self, taus: &[f64], w: &[i64], tol: f64) -> Result<OverlapCurve> {
        self.overlap_family(taus, Some(w), tol)
    }

    /// Laplace transform of `P-bar` at `beta >= 0`.
    ///
    /// The cube is split into orthants with the origin at a corner; each is
    /// integrated shell by shell (`[0,h]^d \ [0,h/2]^d`) toward the origin.
    /// The remaining corner cube is handled by direct quadrature for
    /// `beta > 0` and, at `beta = 0`, by the exact scaling of the quadratic
    /// approximation `1 - Re phi ~ (xi . Z)^2 / 2`. Two rule orders are
    /// compared for the error estimate.
    pub fn upsilon(&self, beta: f64, tol: f64) -> Result<UpsilonValue> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(SheError::invalid(format!("beta {beta} must be finite and >= 0")));
        }
        if beta == 0.0 {
            if !self.is_transient_symmetrized() {
                return Ok(UpsilonValue {
                    value: f64::INFINITY,
                    est_error: 0.0,
                });
            }
            if self.dim() < 3 {
                return Err(SheError::invalid(
                    "walk asserted transient but the spectral integral at beta=0 diverges for d<3",
                ));
            }
            if !self.jumps().generates_lattice() {
                return Err(SheError::invalid(
                    "beta=0 quadrature needs a jump support generating Z^d",
                ));
            }
        }
        let low = self.upsilon_shells(beta, &Rule::new(12), tol)?;
        let high = self.upsilon_shells(beta, &Rule::new(20), tol)?;
        let est_error = (high - low).abs();
        if est_error > tol.max(1e-9 * high.abs()) {
            return Err(SheError::numeric(
                format!("Upsilon({beta}) quadrature orders disagree"),
                est_error,
            ));
        }
        Ok(UpsilonValue {
            value: high,
            est_error,
        })
    }

    fn upsilon_shells(&self, beta: f64, rule: &Rule, tol: f64) -> Result<f64> {
        let d = self.dim();
        let r2 = 2.0 * self.rate();
        let norm = (2.0 * PI).powi(d as i32);
        let quad_form = self.jumps().second_moment();
        let mut total = 0.0;
        for orthant in 0..(1usize << d) {
            let sign: Vec<f64> = (0..d)
                .map(|k| if orthant >> k & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            let mut xi = vec![0.0; d];
            let mut integrand = |p: &[f64]| {
                for k in 0..d {
                    xi[k] = sign[k] * p[k];
                }
                1.0 / (beta + r2 * self.gap(&xi))
            };

            // At beta = 0 the corner cube [0,h]^d contributes h^{d-2} K, where
            // K integrates 1/(r (s.xi)^T M (s.xi)) over the unit cube.
            let corner_constant = if beta == 0.0 {
                let mut q = |p: &[f64]| {
                    let mut s = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            s += sign[a] * p[a] * quad_form[a * d + b] * sign[b] * p[b];
                        }
                    }
                    1.0 / (self.rate() * s)
                };
                let shell = shell_integral(rule, d, 1.0, &mut q);
                shell / (1.0 - 0.5f64.powi(d as i32 - 2))
            } else {
                0.0
            };

            let mut h = PI;
            let mut shells = 0.0;
            let mut last: Option<f64> = None;
            let mut converged = false;
            for _ in 0..MAX_SHELL_LEVELS {
                shells += shell_integral(rule, d, h, &mut integrand);
                h *= 0.5;
                let corner = if beta == 0.0 {
                    h.powi(d as i32 - 2) * corner_constant
                } else {
                    rule.integrate_box(&vec![0.0; d], &vec![h; d], &mut integrand)
                };
                let estimate = shells + corner;
                if let Some(prev) = last {
                    if (estimate - prev).abs() < 0.01 * tol * norm && corner < tol * norm {
                        converged = true;
                        last = Some(estimate);
                        break;
                    }
                    if beta == 0.0 && (estimate - prev).abs() < 0.01 * tol * norm {
                        converged = true;
                        last = Some(estimate);
                        break;
                    }
                }
                last = Some(estimate);
            }
            if !converged {
                return Err(SheError::numeric(
                    format!("Upsilon({beta}) shell refinement did not settle"),
                    f64::NAN,
                ));
            }
            total += last.unwrap_or(0.0);
        }
        Ok(total / norm)
    }
}

/// Integral over `[0,h]^d \ [0,h/2]^d`, as `2^d - 1` cubes of side `h/2`.
fn shell_integral<F>(rule: &Rule, d: usize, h: f64, f: &mut F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let half = 0.5 * h;
    let mut sum = 0.0;
    for pattern in 1..(1usize << d) {
        let lo: Vec<f64> = (0..d)
            .map(|k| if pattern >> k & 1 == 1 { half } else { 0.0 })
            .collect();
        let hi: Vec<f64> = lo.iter().map(|a| a + half).collect();
        sum += rule.integrate_box(&lo, &hi, &mut *f);
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk_kernel::{Jump, JumpDistribution};
    use approx::assert_abs_diff_eq;

    /// e^{-x} I_0(x) via its power series.
    fn scaled_i0(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for m in 1..400 {
            term *= (x / 2.0) * (x / 2.0) / (m as f64 * m as f64);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        (-x).exp() * sum
    }

    #[test]
    fn pbar_at_zero_is_one() {
        for d in 1..=3 {
            let v = WalkKernel::simple(d).pbar(0.0, 1e-12).unwrap();
            assert_abs_diff_eq!(v.value, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn pbar_matches_lattice_sum_and_bessel() {
        let k = WalkKernel::simple(1);
        let v = k.pbar(0.5, 1e-13).unwrap().value;
        let lattice = k.pbar_lattice_sum(0.5, 1e-15).unwrap().value;
        assert_abs_diff_eq!(v, lattice, epsilon = 1e-12);
        assert_abs_diff_eq!(v, scaled_i0(1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(v, 0.4657596, epsilon = 1e-7);
    }

    #[test]
    fn pbar_local_clt() {
        let k = WalkKernel::simple(1);
        let tau = 200.0;
        let v = k.pbar(tau, 1e-13).unwrap().value;
        assert!((v * (4.0 * PI * tau).sqrt() - 1.0).abs() < 0.02);
    }

    #[test]
    fn pbar_curve_is_monotone() {
        let k = WalkKernel::simple(2);
        let taus: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let c = k.pbar_curve(&taus, 1e-12).unwrap();
        for w in c.values.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
    }

    #[test]
    fn difference_law_sums_to_one() {
        let k = WalkKernel::simple(1);
        let tau = 0.8;
        let total: f64 = (-25i64..=25)
            .map(|w| k.difference_prob_curve(&[tau], &[w], 1e-13).unwrap().values[0].value)
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
        let zero = k.difference_prob_curve(&[tau], &[0], 1e-13).unwrap().values[0].value;
        assert_abs_diff_eq!(zero, k.pbar(tau, 1e-13).unwrap().value, epsilon = 1e-13);
    }

    #[test]
    fn upsilon_one_dimensional_closed_form() {
        let k = WalkKernel::simple(1);
        for beta in [0.05, 0.5, 2.0, 7.0] {
            let v = k.upsilon(beta, 1e-10).unwrap().value;
            assert_abs_diff_eq!(v, 1.0 / (beta * beta + 4.0 * beta).sqrt(), epsilon = 1e-9);
        }
        assert_abs_diff_eq!(k.upsilon(2.0, 1e-10).unwrap().value, 1.0 / 12f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn upsilon_recurrent_sentinel() {
        assert!(WalkKernel::simple(1).upsilon(0.0, 1e-8).unwrap().is_infinite());
        assert!(WalkKernel::simple(2).upsilon(0.0, 1e-8).unwrap().is_infinite());
    }

    #[test]
    fn upsilon_watson_constant() {
        // Watson's integral for the simple walk on Z^3, halved for rate 2.
        let v = WalkKernel::simple(3).upsilon(0.0, 1e-8).unwrap();
        assert_abs_diff_eq!(v.value, 1.516_386_059_2 / 2.0, epsilon = 1e-6);
    }

    #[test]
    fn upsilon_bounds_and_monotonicity() {
        let law = JumpDistribution::new(
            2,
            vec![
                Jump { vec: vec![1, 0], p: 0.4 },
                Jump { vec: vec![-1, 1], p: 0.35 },
                Jump { vec: vec![0, -1], p: 0.25 },
            ],
        )
        .unwrap();
        let k = WalkKernel::new(law);
        let mut prev = f64::INFINITY;
        for beta in [0.1, 0.5, 1.0, 10.0, 1000.0] {
            let v = k.upsilon(beta, 1e-10).unwrap().value;
            assert!(v > 0.0 && v <= 1.0 / beta);
            assert!(v < prev);
            prev = v;
        }
        let big = k.upsilon(1000.0, 1e-12).unwrap().value;
        assert!((1000.0 * big - 1.0).abs() < 0.01);
    }
}
