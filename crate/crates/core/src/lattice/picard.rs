//! Discrete Picard iteration of the mild form
//! `u_t(x) = sum_y p_t(y-x) u_0(y) + sum_{s<t} sum_y p_{t-s}(y-x) sigma(u_s(y)) dB_s(y)`
//! on a periodic box, with left-point (Itô) evaluation of the stochastic sum.

use super::{LatticeBox, SimulationSpec};
use crate::error::{Result, SheError};
use crate::walk_kernel::WalkKernel;

const MAX_KERNEL_ENTRIES: usize = 20_000_000;

/// Torus-folded kernel `sum_k p_t(x + k L)`, indexed by box site.
pub fn periodized_kernel(kernel: &WalkKernel, lattice: &LatticeBox, t: f64, tol: f64) -> Result<Vec<f64>> {
    if !lattice.is_periodic() {
        return Err(SheError::invalid("periodized kernel needs a periodic box"));
    }
    lattice.validate_for(kernel)?;
    let table = kernel.transition_table(t, tol)?;
    let mut out = vec![0.0; lattice.sites()];
    for (x, v) in table.iter() {
        out[lattice.wrapped_site(&x)] += v;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardSolution {
    pub times: Vec<f64>,
    /// `values[i][site]` at `times[i]`.
    pub values: Vec<Vec<f64>>,
    pub iterations: usize,
    pub last_change: f64,
    /// Ratio of the last two successive sup-norm changes.
    pub contraction: f64,
}

/// Fixed point of the discrete mild form, driven by the same increments an
/// Euler run of `spec` at `replica` would use.
pub fn picard_mild_solve(spec: &SimulationSpec, replica: u64, tol: f64, max_iter: usize) -> Result<PicardSolution> {
    let lattice = &spec.lattice;
    if !lattice.is_periodic() {
        return Err(SheError::invalid("Picard oracle supports periodic boxes only"));
    }
    let dt = spec.solver.dt;
    let steps = spec.solver.steps()?;
    let n = lattice.sites();
    if (steps + 1) * n * n > MAX_KERNEL_ENTRIES {
        return Err(SheError::invalid("Picard oracle grid too large (oracle use only)"));
    }

    // mats[k][x * n + y] = p_{k dt}(y - x) on the torus
    let mut mats = Vec::with_capacity(steps + 1);
    let points: Vec<Vec<i64>> = (0..n).map(|s| lattice.point(s)).collect();
    let mut diff = vec![0i64; lattice.dim()];
    for k in 0..=steps {
        let folded = periodized_kernel(&spec.kernel, lattice, k as f64 * dt, 1e-15)?;
        let mut m = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                for c in 0..diff.len() {
                    diff[c] = points[y][c] - points[x][c];
                }
                m[x * n + y] = folded[lattice.wrapped_site(&diff)];
            }
        }
        mats.push(m);
    }

    let u0: Vec<f64> = points.iter().map(|p| spec.initial.value_at(p)).collect();
    let free: Vec<Vec<f64>> = mats
        .iter()
        .map(|m| {
            (0..n)
                .map(|x| (0..n).map(|y| m[x * n + y] * u0[y]).sum())
                .collect()
        })
        .collect();
    let db: Vec<Vec<f64>> = (0..steps)
        .map(|j| (0..n).map(|y| spec.noise.increment(replica, y, j, dt)).collect())
        .collect();

    let mut current = vec![u0.clone(); steps + 1];
    let mut prev_change = f64::NAN;
    let mut contraction = f64::NAN;
    for iteration in 1..=max_iter {
        let forcing: Vec<Vec<f64>> = (0..steps)
            .map(|j| (0..n).map(|y| spec.sigma.eval(current[j][y]) * db[j][y]).collect())
            .collect();
        let mut next = free.clone();
        for i in 1..=steps {
            for j in 0..i {
                let m = &mats[i - j];
                let f = &forcing[j];
                for x in 0..n {
                    let row = &m[x * n..(x + 1) * n];
                    let mut acc = 0.0;
                    for y in 0..n {
                        acc += row[y] * f[y];
                    }
                    next[i][x] += acc;
                }
            }
        }
        let change = next
            .iter()
            .zip(&current)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max);
        if prev_change.is_finite() && prev_change > 0.0 {
            contraction = change / prev_change;
        }
        prev_change = change;
        current = next;
        if change < tol {
            return Ok(PicardSolution {
                times: (0..=steps).map(|i| i as f64 * dt).collect(),
                values: current,
                iterations: iteration,
                last_change: change,
                contraction,
            });
        }
    }
    Err(SheError::numeric(
        format!("Picard iteration did not converge in {max_iter} steps (contraction {contraction:.3})"),
        prev_change,
    ))
}
