//! Moments of the field and Lyapunov exponents, three ways: direct Monte
//! Carlo on the simulated field, Feynman-Kac over independent walks (linear
//! sigma only), and the exact second-moment renewal identity.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SheError};
use crate::lattice::{InitialProfile, SimulationSpec, Simulator};
use crate::renewal::{auto_beta, picard_solve, RenewalProblem};
use crate::rng::KeyedStream;
use crate::stats::{bootstrap_interval, jackknife_mean_se, least_squares, pairwise_sum};
use crate::walk_kernel::{overlap_time_until, WalkKernel, WalkPath, WalkSampler};

/// Largest moment order the Feynman-Kac path bundle supports.
pub const MAX_FK_ORDER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMethod {
    FieldMc,
    FeynmanKac,
    Renewal,
}

impl MomentMethod {
    pub fn tag(self) -> &'static str {
        match self {
            MomentMethod::FieldMc => "field-mc",
            MomentMethod::FeynmanKac => "feynman-kac",
            MomentMethod::Renewal => "renewal",
        }
    }
}

/// Where a moment is taken: at one site, or summed over sites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentTarget {
    Site(Vec<i64>),
    /// `sum_x E|u_t(x)|^k` (over the box for field runs, over `Z^d` otherwise).
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub k: u32,
    pub t: f64,
    pub target: MomentTarget,
    pub estimate: f64,
    pub se: f64,
    pub replicas: u64,
    pub method: MomentMethod,
    /// False for field Monte Carlo with `k >= 3` past `t = 3`, where
    /// intermittency makes the sample mean heavy-tailed.
    pub reliable: bool,
}

impl MomentEstimate {
    pub fn log_estimate(&self) -> f64 {
        self.estimate.ln()
    }

    /// Delta-method standard error of the log estimate.
    pub fn log_se(&self) -> f64 {
        self.se / self.estimate
    }

    /// `|a - b| <= z * sqrt(se_a^2 + se_b^2)`.
    pub fn agrees_with(&self, other: &MomentEstimate, z: f64) -> bool {
        (self.estimate - other.estimate).abs() <= z * self.se.hypot(other.se)
    }
}

fn summarize(samples: &[f64], k: u32, t: f64, target: MomentTarget, method: MomentMethod) -> MomentEstimate {
    let n = samples.len();
    let estimate = pairwise_sum(samples) / n as f64;
    let se = if n > 1 { jackknife_mean_se(samples) } else { 0.0 };
    MomentEstimate {
        k,
        t,
        target,
        estimate,
        se,
        replicas: n as u64,
        method,
        reliable: !(method == MomentMethod::FieldMc && k >= 3 && t > 3.0),
    }
}

/// Field Monte Carlo for every `(t, k)` pair from one batch of replicas.
/// Each `t` must be a snapshot time of the spec's solver. Output is ordered
/// by `t`, then `k`.
pub fn field_moments(
    spec: &SimulationSpec,
    ks: &[u32],
    times: &[f64],
    target: &MomentTarget,
    replicas: u64,
) -> Result<Vec<MomentEstimate>> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(SheError::invalid("moment orders must be >= 1"));
    }
    if replicas == 0 {
        return Err(SheError::invalid("need at least one replica"));
    }
    for &t in times {
        let on_snapshot = spec
            .solver
            .snapshot_times
            .iter()
            .any(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0));
        if !on_snapshot {
            return Err(SheError::invalid(format!("t = {t} is not a snapshot time of the run")));
        }
    }
    let site = match target {
        MomentTarget::Site(x) => Some(
            spec.lattice
                .site(x)
                .ok_or_else(|| SheError::invalid(format!("site {x:?} is outside the box")))?,
        ),
        MomentTarget::Sum => None,
    };
    let sim = Simulator::new(spec)?;
    // per replica: samples[t][k]
    let per_replica: Vec<Vec<Vec<f64>>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let traj = sim.run(r)?;
            Ok(times
                .iter()
                .map(|&t| {
                    let snap = traj.snapshot(t).expect("validated snapshot time");
                    ks.iter()
                        .map(|&k| match site {
                            Some(s) => snap.values[s].abs().powi(k as i32),
                            None => pairwise_sum(
                                &snap.values.iter().map(|v| v.abs().powi(k as i32)).collect::<Vec<_>>(),
                            ),
                        })
                        .collect()
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(times.len() * ks.len());
    for (ti, &t) in times.iter().enumerate() {
        for (ki, &k) in ks.iter().enumerate() {
            let samples: Vec<f64> = per_replica.iter().map(|r| r[ti][ki]).collect();
            out.push(summarize(&samples, k, t, target.clone(), MomentMethod::FieldMc));
        }
    }
    Ok(out)
}

/// Sample mean of `|u_t(x)|^k` over `replicas` runs, jackknife SE.
pub fn estimate_field_moment(
    spec: &SimulationSpec,
    k: u32,
    t: f64,
    x: &[i64],
    replicas: u64,
) -> Result<MomentEstimate> {
    Ok(field_moments(spec, &[k], &[t], &MomentTarget::Site(x.to_vec()), replicas)?.remove(0))
}

/// `k` independent walk paths on `[0, horizon]` and their pairwise overlap times.
#[derive(Debug, Clone)]
pub struct CollisionRecord {
    pub horizon: f64,
    pub paths: Vec<WalkPath>,
}

impl CollisionRecord {
    /// Paths for `(seed, replica)`; path `j` uses its own keyed stream, so
    /// the first `k` paths do not depend on how many are drawn.
    pub fn sample(kernel: &WalkKernel, k: usize, horizon: f64, seed: u64, replica: u64) -> Result<Self> {
        if k == 0 || k > MAX_FK_ORDER {
            return Err(SheError::invalid(format!("moment order {k} outside 1..={MAX_FK_ORDER}")));
        }
        let sampler = WalkSampler::new(kernel);
        let paths = (0..k)
            .map(|j| sampler.sample(horizon, &mut KeyedStream::walk(seed, replica * MAX_FK_ORDER as u64 + j as u64)))
            .collect();
        Ok(Self { horizon, paths })
    }

    pub fn k(&self) -> usize {
        self.paths.len()
    }

    /// `int_0^t 1{X^i_s = X^j_s} ds`.
    pub fn overlap(&self, i: usize, j: usize, t: f64) -> f64 {
        overlap_time_until(&self.paths[i], &self.paths[j], t)
    }

    /// Overlaps of all pairs `i < j` among the first `k` paths, up to `t`.
    pub fn pair_overlaps(&self, k: usize, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(k * (k - 1) / 2);
        for i in 0..k {
            for j in i + 1..k {
                out.push(self.overlap(i, j, t));
            }
        }
        out
    }

    /// Collision local time `sum_{i<j} overlap_ij` of the first `k` paths.
    pub fn collision_time(&self, k: usize, t: f64) -> f64 {
        self.pair_overlaps(k, t).iter().sum()
    }
}

fn check_linear(q: f64) -> Result<()> {
    if !q.is_finite() {
        return Err(SheError::invalid(format!("q = {q} must be finite")));
    }
    Ok(())
}

/// One Feynman-Kac sample of `prod_j u0(x + X^j_t) exp(q^2 M_k(t))`,
/// summed over `x` for [`MomentTarget::Sum`].
fn fk_sample(rec: &CollisionRecord, q: f64, u0: &InitialProfile, k: usize, t: f64, target: &MomentTarget) -> f64 {
    let weight = (q * q * rec.collision_time(k, t)).exp();
    let product_at = |x: &[i64]| -> f64 {
        let mut prod = 1.0;
        let mut y = vec![0i64; x.len()];
        for path in &rec.paths[..k] {
            let end = path.position_at(t);
            for (c, (a, b)) in y.iter_mut().zip(x.iter().zip(end)) {
                *c = a + b;
            }
            prod *= u0.value_at(&y);
            if prod == 0.0 {
                break;
            }
        }
        prod
    };
    match target {
        MomentTarget::Site(x) => product_at(x) * weight,
        MomentTarget::Sum => {
            let support = u0.finite_support().expect("checked finite support");
            let first = rec.paths[0].position_at(t);
            // only x = s - X^1_t with s in the support can contribute
            let mut seen: Vec<Vec<i64>> = Vec::with_capacity(support.len());
            let mut total = 0.0;
            for (s, _) in &support {
                let x: Vec<i64> = s.iter().zip(first).map(|(a, b)| a - b).collect();
                if seen.contains(&x) {
                    continue;
                }
                total += product_at(&x);
                seen.push(x);
            }
            total * weight
        }
    }
}

/// Feynman-Kac estimates for linear `sigma(u) = q u`, for every `(t, k)`
/// pair, using path bundles of length `max(ks)` sampled once to `max(times)`.
/// Output is ordered by `t`, then `k`.
#[allow(clippy::too_many_arguments)]
pub fn fk_pam_moments(
    kernel: &WalkKernel,
    q: f64,
    u0: &InitialProfile,
    ks: &[u32],
    times: &[f64],
    target: &MomentTarget,
    replicas: u64,
    seed: u64,
) -> Result<Vec<MomentEstimate>> {
    check_linear(q)?;
    u0.check_dim(kernel.dim())?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(SheError::invalid("moment orders must be >= 1"));
    }
    if replicas == 0 {
        return Err(SheError::invalid("need at least one replica"));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(SheError::invalid("times must be finite and >= 0"));
    }
    if let MomentTarget::Site(x) = target {
        if x.len() != kernel.dim() {
            return Err(SheError::invalid("site dimension does not match kernel"));
        }
    }
    if *target == MomentTarget::Sum && u0.finite_support().is_none() {
        return Err(SheError::invalid("summed moments need finitely supported initial data"));
    }
    let kmax = *ks.iter().max().expect("nonempty") as usize;
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let per_replica: Vec<Vec<Vec<f64>>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let rec = CollisionRecord::sample(kernel, kmax, horizon, seed, r)?;
            Ok(times
                .iter()
                .map(|&t| ks.iter().map(|&k| fk_sample(&rec, q, u0, k as usize, t, target)).collect())
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(times.len() * ks.len());
    for (ti, &t) in times.iter().enumerate() {
        for (ki, &k) in ks.iter().enumerate() {
            let samples: Vec<f64> = per_replica.iter().map(|r| r[ti][ki]).collect();
            out.push(summarize(&samples, k, t, target.clone(), MomentMethod::FeynmanKac));
        }
    }
    Ok(out)
}

/// `E|v_t(x)|^k` for the parabolic Anderson model by Feynman-Kac.
#[allow(clippy::too_many_arguments)]
pub fn fk_pam_moment(
    kernel: &WalkKernel,
    q: f64,
    u0: &InitialProfile,
    k: u32,
    t: f64,
    x: &[i64],
    replicas: u64,
    seed: u64,
) -> Result<MomentEstimate> {
    Ok(fk_pam_moments(kernel, q, u0, &[k], &[t], &MomentTarget::Site(x.to_vec()), replicas, seed)?.remove(0))
}

/// The diagonal bound `u0(x)^k exp{[c k(k-1) q^2 - k] t}` obtained by
/// keeping only the event that all `k` walks sit still on `[0, t]`. With
/// `coefficient = 1` this is the bound as commonly quoted; for the Ito
/// equation with unit-variance noise the collision weight is `q^2`, which
/// gives `coefficient = 1/2`.
pub fn fk_diagonal_lower_bound(u0_at_x: f64, q: f64, k: u32, t: f64, coefficient: f64) -> f64 {
    let k = k as f64;
    u0_at_x.powf(k) * ((coefficient * k * (k - 1.0) * q * q - k) * t).exp()
}

/// Renewal-oracle curve `F(t) = E||u_t||^2` on a uniform grid.
#[derive(Debug, Clone, Serialize)]
pub struct SecondMomentCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Sup over the coarse grid of `|F_h - F_{h/2}|`.
    pub halving_error: f64,
    pub beta: f64,
    pub rho_hat: f64,
}

impl SecondMomentCurve {
    /// Value at a grid time.
    pub fn at(&self, t: f64) -> Option<f64> {
        let step = self.times[1] - self.times[0];
        let i = (t / step).round();
        if i < 0.0 || (i * step - t).abs() > 1e-9 * t.abs().max(1.0) {
            return None;
        }
        self.values.get(i as usize).copied()
    }

    pub fn estimate(&self, t: f64) -> Option<MomentEstimate> {
        Some(MomentEstimate {
            k: 2,
            t,
            target: MomentTarget::Sum,
            estimate: self.at(t)?,
            se: self.halving_error,
            replicas: 0,
            method: MomentMethod::Renewal,
            reliable: true,
        })
    }
}

/// `F(t) = ||p_t * u0||^2 + q^2 int_0^t Pbar(t - s) F(s) ds`, which is an
/// identity for `sigma(u) = q u`. Solved on `intervals` and `2 * intervals`
/// steps over `[0, horizon]`; the finer solution is returned with the
/// difference as its error estimate.
pub fn pam_second_moment_renewal(
    kernel: &WalkKernel,
    q: f64,
    u0: &InitialProfile,
    horizon: f64,
    intervals: usize,
    tol: f64,
) -> Result<SecondMomentCurve> {
    check_linear(q)?;
    u0.check_dim(kernel.dim())?;
    if !(horizon > 0.0 && horizon.is_finite()) || intervals == 0 {
        return Err(SheError::invalid("need a positive horizon and at least one interval"));
    }
    let support = u0
        .finite_support()
        .ok_or_else(|| SheError::invalid("renewal oracle needs finitely supported initial data"))?;
    let fine_n = 2 * intervals;
    let fine_step = horizon / fine_n as f64;
    let taus: Vec<f64> = (0..=fine_n).map(|i| i as f64 * fine_step).collect();

    // ||p_t * u0||^2 = sum_{a,b} u0(a) u0(b) P{X_t - X'_t = a - b}
    let mut by_shift: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for (a, ua) in &support {
        for (b, ub) in &support {
            let w: Vec<i64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            *by_shift.entry(w).or_insert(0.0) += ua * ub;
        }
    }
    let spectral_tol = 1e-13;
    let mut g = vec![0.0; taus.len()];
    for (w, c) in &by_shift {
        let curve = kernel.difference_prob_curve(&taus, w, spectral_tol)?;
        for (gi, v) in g.iter_mut().zip(&curve.values) {
            *gi += c * v.value.max(0.0);
        }
    }
    let pbar = kernel.pbar_curve(&taus, spectral_tol)?;
    let h: Vec<f64> = pbar.values.iter().map(|v| q * q * v.value.max(0.0)).collect();

    let solve = |stride: usize| -> Result<(Vec<f64>, f64, f64)> {
        let gs: Vec<f64> = g.iter().step_by(stride).cloned().collect();
        let hs: Vec<f64> = h.iter().step_by(stride).cloned().collect();
        let problem = auto_beta(&RenewalProblem::new(fine_step * stride as f64, gs, hs, 0.0)?, 0.5)?;
        let scale = problem.gamma_hat().max(f64::MIN_POSITIVE);
        let sol = picard_solve(&problem, 1e-14 * scale, 10_000)?;
        Ok((sol.values, problem.beta(), sol.rho_hat))
    };
    let (coarse, _, _) = solve(2)?;
    let (fine, beta, rho_hat) = solve(1)?;
    let halving_error = coarse
        .iter()
        .enumerate()
        .map(|(i, c)| (c - fine[2 * i]).abs())
        .fold(0.0, f64::max);
    if halving_error > tol {
        return Err(SheError::numeric(
            format!("renewal grid too coarse: halving error {halving_error:.3e} > {tol:.3e}"),
            halving_error,
        ));
    }
    Ok(SecondMomentCurve {
        times: taus,
        values: fine,
        halving_error,
        beta,
        rho_hat,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// Bootstrap percentile interval of the slope.
    pub ci: (f64, f64),
    pub window: (f64, f64),
    pub points: usize,
}

/// Least-squares slope of `log m(t)` against `t` over `window`, with a
/// 95% residual bootstrap that also perturbs each point by its own standard
/// error when `log_se` is given.
pub fn fit_lyapunov(
    times: &[f64],
    log_moments: &[f64],
    log_se: Option<&[f64]>,
    window: (f64, f64),
    seed: u64,
) -> Result<LyapunovFit> {
    if times.len() != log_moments.len() || log_se.is_some_and(|s| s.len() != times.len()) {
        return Err(SheError::invalid("series lengths differ"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SheError::invalid("times must be strictly increasing"));
    }
    let idx: Vec<usize> = (0..times.len())
        .filter(|&i| times[i] >= window.0 && times[i] <= window.1)
        .collect();
    if idx.len() < 4 {
        return Err(SheError::invalid(format!(
            "window [{}, {}] holds {} points, need >= 4",
            window.0,
            window.1,
            idx.len()
        )));
    }
    let x: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| log_moments[i]).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SheError::invalid("log moments must be finite"));
    }
    let se: Vec<f64> = idx.iter().map(|&i| log_se.map_or(0.0, |s| s[i])).collect();
    let fit = least_squares(&x, &y)?;
    let fitted: Vec<f64> = x.iter().map(|t| fit.intercept + fit.slope * t).collect();
    let resid: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let n = x.len();
    let ci = bootstrap_interval(seed, 2000, 0.95, |stream| {
        let yb: Vec<f64> = (0..n)
            .map(|i| {
                let r = resid[(stream.uniform() * n as f64) as usize % n];
                let z: f64 = StandardNormal.sample(stream);
                fitted[i] + r + se[i] * z
            })
            .collect();
        least_squares(&x, &yb).map(|f| f.slope).unwrap_or(fit.slope)
    });
    Ok(LyapunovFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_se: fit.slope_se,
        ci,
        window,
        points: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum K2Verdict {
    WithinBounds,
    ViolatesUpper,
    ViolatesLower,
    KBelowThreshold,
}

#[derive(Debug, Clone, Serialize)]
pub struct K2Check {
    pub k: u32,
    pub gamma: f64,
    pub ci: (f64, f64),
    /// `8 lip^2 k^2`.
    pub upper: f64,
    /// `(1 - eps) ell^2 k^2`; only asserted when `k >= threshold`.
    pub lower: f64,
    /// `1/eps + 1/(eps ell^2)`, infinite when `ell = 0`.
    pub threshold: f64,
    pub verdict: K2Verdict,
}

/// Compares fitted exponents with `8 lip^2 k^2` above and, once `k` clears
/// the threshold, `(1 - eps) ell^2 k^2` below. The upper bound is judged
/// against the top of the CI, the lower against its bottom. With `ell = 0`
/// there is no lower claim and an upper-compliant estimate is within bounds.
pub fn check_k2_bounds(fits: &[(u32, LyapunovFit)], lip: f64, ell: f64, eps: f64) -> Result<Vec<K2Check>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(SheError::invalid(format!("eps = {eps} must lie in (0, 1)")));
    }
    if !(lip >= 0.0 && ell >= 0.0 && ell <= lip) {
        return Err(SheError::invalid("need 0 <= ell <= lip"));
    }
    let threshold = if ell > 0.0 {
        1.0 / eps + 1.0 / (eps * ell * ell)
    } else {
        f64::INFINITY
    };
    Ok(fits
        .iter()
        .map(|(k, fit)| {
            let kf = *k as f64;
            let upper = 8.0 * lip * lip * kf * kf;
            let lower = (1.0 - eps) * ell * ell * kf * kf;
            let verdict = if fit.ci.1 > upper {
                K2Verdict::ViolatesUpper
            } else if ell == 0.0 {
                K2Verdict::WithinBounds
            } else if kf < threshold {
                K2Verdict::KBelowThreshold
            } else if fit.ci.0 < lower {
                K2Verdict::ViolatesLower
            } else {
                K2Verdict::WithinBounds
            };
            K2Check {
                k: *k,
                gamma: fit.slope,
                ci: fit.ci,
                upper,
                lower,
                threshold,
                verdict,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct JensenReport {
    pub ks: Vec<u32>,
    /// `(1/k) log E|u|^k`.
    pub normalized: Vec<f64>,
    pub normalized_se: Vec<f64>,
    /// Largest decrease between consecutive orders, in units of combined SE.
    pub worst_drop_z: f64,
    pub nondecreasing: bool,
}

/// `k -> (1/k) log E|u_t(x)|^k` must be nondecreasing; a drop is tolerated
/// up to `z` combined standard errors. Estimates must share `t` and target.
pub fn jensen_check(estimates: &[MomentEstimate], z: f64) -> Result<JensenReport> {
    if estimates.len() < 2 {
        return Err(SheError::invalid("need at least two moment orders"));
    }
    let first = &estimates[0];
    if estimates.iter().any(|e| e.t != first.t || e.target != first.target) {
        return Err(SheError::invalid("estimates must share t and target"));
    }
    if estimates.windows(2).any(|w| w[1].k <= w[0].k) {
        return Err(SheError::invalid("orders must be increasing"));
    }
    if estimates.iter().any(|e| e.estimate <= 0.0) {
        return Err(SheError::invalid("log moments need positive estimates"));
    }
    let normalized: Vec<f64> = estimates.iter().map(|e| e.log_estimate() / e.k as f64).collect();
    let normalized_se: Vec<f64> = estimates.iter().map(|e| e.log_se() / e.k as f64).collect();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..estimates.len() - 1 {
        let drop = normalized[i] - normalized[i + 1];
        let scale = normalized_se[i].hypot(normalized_se[i + 1]);
        let zed = if scale > 0.0 {
            drop / scale
        } else if drop > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        };
        worst = worst.max(zed);
    }
    Ok(JensenReport {
        ks: estimates.iter().map(|e| e.k).collect(),
        normalized,
        normalized_se,
        worst_drop_z: worst,
        nondecreasing: worst <= z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{LatticeBox, Nonlinearity, Scheme, SolverConfig};
    use crate::rng::NoisePlan;

    fn pam_spec(q: f64, sites: usize, dt: f64, snaps: Vec<f64>) -> SimulationSpec {
        let horizon = snaps.iter().cloned().fold(0.0, f64::max);
        SimulationSpec {
            kernel: WalkKernel::simple(1),
            lattice: LatticeBox::periodic(vec![sites]).unwrap(),
            sigma: Nonlinearity::linear(q),
            initial: InitialProfile::delta(1),
            solver: SolverConfig::new(dt, horizon).with_snapshots(snaps),
            noise: NoisePlan::new(77),
        }
    }

    #[test]
    fn noiseless_field_moment_is_the_kernel_power() {
        let mut spec = pam_spec(0.0, 33, 1e-3, vec![1.0]);
        spec.sigma = Nonlinearity::zero();
        let est = estimate_field_moment(&spec, 3, 1.0, &[1], 4).unwrap();
        let p = spec.kernel.transition_prob(1.0, &[-1], 1e-14).unwrap().value;
        assert_eq!(est.se, 0.0);
        assert!((est.estimate - p.powi(3)).abs() < 5e-3 * p.powi(3));
    }

    #[test]
    fn first_field_moment_is_the_mean_field() {
        let mut spec = pam_spec(1.0, 33, 2e-3, vec![1.0]);
        spec.sigma = Nonlinearity::tanh(1.0);
        spec.initial = InitialProfile::Table {
            entries: vec![(vec![0], 2.0)],
            background: 0.5,
        };
        let est = estimate_field_moment(&spec, 1, 1.0, &[0], 4000).unwrap();
        let p0 = spec.kernel.transition_prob(1.0, &[0], 1e-14).unwrap().value;
        let mean = 0.5 + 1.5 * p0;
        assert!((est.estimate - mean).abs() < 3.0 * est.se + 2e-3, "{} ± {} vs {mean}", est.estimate, est.se);
    }

    #[test]
    fn zero_data_has_zero_moments() {
        let mut spec = pam_spec(1.0, 9, 0.01, vec![0.5]);
        spec.initial = InitialProfile::Constant(0.0);
        let est = estimate_field_moment(&spec, 2, 0.5, &[0], 10).unwrap();
        assert_eq!((est.estimate, est.se), (0.0, 0.0));
    }

    #[test]
    fn field_moment_needs_a_snapshot() {
        let spec = pam_spec(1.0, 9, 0.01, vec![0.5]);
        assert!(matches!(estimate_field_moment(&spec, 2, 0.3, &[0], 10), Err(SheError::InvalidArgument(_))));
    }

    #[test]
    fn fk_first_moment_is_the_mean_field() {
        let k = WalkKernel::simple(1);
        let u0 = InitialProfile::delta(1);
        let est = fk_pam_moment(&k, 0.8, &u0, 1, 1.0, &[1], 40_000, 3).unwrap();
        let p = k.transition_prob(1.0, &[-1], 1e-14).unwrap().value;
        assert!((est.estimate - p).abs() < 3.0 * est.se);
    }

    #[test]
    fn fk_zero_variance_case() {
        let k = WalkKernel::simple(2);
        for order in 1..=4 {
            let est = fk_pam_moment(&k, 0.0, &InitialProfile::Constant(1.0), order, 2.0, &[0, 0], 500, 1).unwrap();
            assert_eq!(est.estimate, 1.0);
            assert_eq!(est.se, 0.0);
        }
    }

    #[test]
    fn fk_single_site_weight_is_ito() {
        // frozen walk: E u^k = exp(q^2 k(k-1)/2 t) for du = q u dB
        let frozen = WalkKernel::new(
            crate::walk_kernel::JumpDistribution::new(1, vec![crate::walk_kernel::Jump { vec: vec![0], p: 1.0 }]).unwrap(),
        )
        .with_rate(1e-12)
        .unwrap();
        let est = fk_pam_moment(&frozen, 0.7, &InitialProfile::Constant(1.0), 3, 1.5, &[0], 100, 0).unwrap();
        let exact = (0.49f64 * 3.0 * 1.5).exp();
        assert!((est.estimate - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn collision_record_invariants() {
        let rec = CollisionRecord::sample(&WalkKernel::simple(1), 4, 3.0, 5, 2).unwrap();
        let overlaps = rec.pair_overlaps(4, 3.0);
        assert_eq!(overlaps.len(), 6);
        assert!(overlaps.iter().all(|o| (0.0..=3.0).contains(o)));
        assert!((rec.overlap(1, 1, 3.0) - 3.0).abs() < 1e-12);
        let shorter = CollisionRecord::sample(&WalkKernel::simple(1), 2, 3.0, 5, 2).unwrap();
        assert_eq!(shorter.paths[..], rec.paths[..2]);
    }

    #[test]
    fn renewal_without_noise_is_pbar() {
        let k = WalkKernel::simple(1);
        let curve = pam_second_moment_renewal(&k, 0.0, &InitialProfile::delta(1), 2.0, 64, 1e-8).unwrap();
        assert!((curve.at(0.0).unwrap() - 1.0).abs() < 1e-12);
        for t in [0.5, 1.0, 2.0] {
            let exact = k.pbar_lattice_sum(t, 1e-14).unwrap().value;
            assert!((curve.at(t).unwrap() - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn renewal_starts_at_the_l2_norm() {
        let u0 = InitialProfile::Table {
            entries: vec![(vec![0], 1.0), (vec![2], 0.5)],
            background: 0.0,
        };
        let curve = pam_second_moment_renewal(&WalkKernel::simple(1), 0.5, &u0, 1.0, 64, 1e-5).unwrap();
        assert!(curve.halving_error > 0.0);
        assert!((curve.values[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn renewal_reports_coarse_grids() {
        let r = pam_second_moment_renewal(&WalkKernel::simple(1), 3.0, &InitialProfile::delta(1), 2.0, 4, 1e-10);
        assert!(matches!(r, Err(SheError::NumericFailure { .. })));
    }

    #[test]
    fn fk_sum_matches_renewal() {
        let k = WalkKernel::simple(1);
        let u0 = InitialProfile::delta(1);
        let curve = pam_second_moment_renewal(&k, 0.5, &u0, 1.0, 128, 1e-6).unwrap();
        let fk = fk_pam_moments(&k, 0.5, &u0, &[2], &[1.0], &MomentTarget::Sum, 40_000, 9).unwrap();
        let oracle = curve.at(1.0).unwrap();
        assert!((fk[0].estimate - oracle).abs() < 3.0 * fk[0].se, "{} ± {} vs {oracle}", fk[0].estimate, fk[0].se);
    }

    #[test]
    fn field_sum_matches_renewal() {
        let k = WalkKernel::simple(1);
        let curve = pam_second_moment_renewal(&k, 0.5, &InitialProfile::delta(1), 1.0, 128, 1e-6).unwrap();
        let mut spec = pam_spec(0.5, 33, 2e-3, vec![1.0]);
        spec.solver.scheme = Scheme::SplitExactLinear;
        let est = field_moments(&spec, &[2], &[1.0], &MomentTarget::Sum, 3000).unwrap();
        let oracle = curve.at(1.0).unwrap();
        assert!((est[0].estimate - oracle).abs() < 3.0 * est[0].se + 2e-3, "{} ± {} vs {oracle}", est[0].estimate, est[0].se);
    }

    #[test]
    fn lyapunov_fit_examples() {
        let t: Vec<f64> = (0..8).map(|i| 1.0 + 0.5 * i as f64).collect();
        let y: Vec<f64> = t.iter().map(|s| 3.0 * s).collect();
        let fit = fit_lyapunov(&t, &y, None, (0.0, 10.0), 1).unwrap();
        assert!((fit.slope - 3.0).abs() < 1e-12);
        assert!((fit.ci.0 - 3.0).abs() < 1e-9 && (fit.ci.1 - 3.0).abs() < 1e-9);
        let flat = fit_lyapunov(&t, &vec![2.0; 8], None, (0.0, 10.0), 1).unwrap();
        assert!(flat.slope.abs() < 1e-12);
        assert!(fit_lyapunov(&t, &y, None, (1.0, 2.0), 1).is_err());
        let noisy = fit_lyapunov(&t, &y, Some(&[0.1; 8]), (0.0, 10.0), 1).unwrap();
        assert!(noisy.ci.0 < 3.0 && noisy.ci.1 > 3.0);
    }

    fn fit_with(slope: f64, ci: (f64, f64)) -> LyapunovFit {
        LyapunovFit {
            slope,
            intercept: 0.0,
            slope_se: 0.0,
            ci,
            window: (1.0, 4.0),
            points: 4,
        }
    }

    #[test]
    fn k2_bound_verdicts() {
        let r = check_k2_bounds(&[(2, fit_with(0.4, (0.3, 0.5)))], 1.0, 0.0, 0.5).unwrap();
        assert_eq!(r[0].upper, 32.0);
        assert_eq!(r[0].verdict, K2Verdict::WithinBounds);
        let r = check_k2_bounds(&[(2, fit_with(0.4, (0.3, 0.5)))], 1.0, 1.0, 0.5).unwrap();
        assert_eq!(r[0].threshold, 4.0);
        assert_eq!(r[0].verdict, K2Verdict::KBelowThreshold);
        let r = check_k2_bounds(&[(2, fit_with(31.0, (30.0, 33.0)))], 1.0, 0.0, 0.5).unwrap();
        assert_eq!(r[0].verdict, K2Verdict::ViolatesUpper);
        let r = check_k2_bounds(&[(4, fit_with(1.0, (0.5, 1.5))), (5, fit_with(20.0, (19.0, 21.0)))], 1.0, 1.0, 0.5).unwrap();
        assert_eq!(r[0].verdict, K2Verdict::ViolatesLower);
        assert_eq!(r[1].verdict, K2Verdict::WithinBounds);
    }

    #[test]
    fn jensen_on_fk_moments() {
        let k = WalkKernel::simple(1);
        let est = fk_pam_moments(&k, 1.0, &InitialProfile::Constant(1.0), &[1, 2, 3, 4], &[1.0], &MomentTarget::Site(vec![0]), 20_000, 4).unwrap();
        let report = jensen_check(&est, 3.0).unwrap();
        assert!(report.nondecreasing, "{report:?}");
        assert_eq!(report.normalized[0], 0.0);
    }

    #[test]
    fn diagonal_bounds() {
        assert!((fk_diagonal_lower_bound(1.0, 1.0, 3, 1.0, 1.0) - 3f64.exp()).abs() < 1e-12);
        assert!((fk_diagonal_lower_bound(1.0, 1.0, 3, 1.0, 0.5) - 1.0).abs() < 1e-12);
        assert!((fk_diagonal_lower_bound(2.0, 0.0, 2, 1.0, 1.0) - 4.0 * (-2f64).exp()).abs() < 1e-12);
    }
}
