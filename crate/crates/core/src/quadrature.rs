//! Tensor-product Gauss–Legendre rules.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// Gauss–Legendre rule on the reference interval [-1, 1].
#[derive(Debug, Clone)]
pub struct Rule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Rule {
    pub fn new(order: usize) -> Self {
        let gl = GaussLegendre::new(NonZeroUsize::new(order).expect("order >= 1"));
        let (nodes, weights) = gl.as_node_weight_pairs().iter().copied().unzip();
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights of the composite rule with `panels` equal panels on [a, b].
    pub fn composite(&self, a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
        let h = (b - a) / panels as f64;
        let mut xs = Vec::with_capacity(panels * self.order());
        let mut ws = Vec::with_capacity(panels * self.order());
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                xs.push(lo + 0.5 * h * (x + 1.0));
                ws.push(0.5 * h * w);
            }
        }
        (xs, ws)
    }

    /// `int_a^b f` with a single panel.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(mid + half * x);
        }
        half * s
    }

    /// Tensor-product integral over the box `prod_k [lo_k, hi_k]`.
    /// Evaluation order is fixed (last axis fastest).
    pub fn integrate_box<F>(&self, lo: &[f64], hi: &[f64], mut f: F) -> f64
    where
        F: FnMut(&[f64]) -> f64,
    {
        let d = lo.len();
        let n = self.order();
        let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let jac: f64 = half.iter().product();
        let mut idx = vec![0usize; d];
        let mut point = vec![0.0; d];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for k in 0..d {
                point[k] = mid[k] + half[k] * self.nodes[idx[k]];
                w *= self.weights[idx[k]];
            }
            total += w * f(&point);
            let mut k = d;
            loop {
                if k == 0 {
                    return jac * total;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

/// Adaptive Simpson quadrature to a relative tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // absolute target from a coarse magnitude estimate
    let coarse = Rule::new(8).integrate(a, b, f).abs().max(f64::MIN_POSITIVE);
    step(f, a, b, fa, fm, fb, whole, rel_tol * coarse, 48)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_for_polynomials() {
        let r = Rule::new(4);
        assert_relative_eq!(r.integrate(0.0, 2.0, |x| x.powi(7)), 32.0, max_relative = 1e-13);
        let v = r.integrate_box(&[0.0, 0.0], &[1.0, 2.0], |p| p[0] * p[1] * p[1]);
        assert_relative_eq!(v, 0.5 * 8.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn composite_weights_sum_to_length() {
        let (_, w) = Rule::new(5).composite(-1.0, 3.0, 8);
        assert_relative_eq!(w.iter().sum::<f64>(), 4.0, max_relative = 1e-13);
    }

    #[test]
    fn simpson_reaches_tolerance() {
        let v = adaptive_simpson(&|w: f64| (1.0 + w) / w, 1.0, 2.0, 1e-12);
        assert_relative_eq!(v, 1.0 + 2f64.ln(), max_relative = 1e-11);
    }
}
