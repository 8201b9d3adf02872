//! Experiment drivers: scaled local increments, the local Radon-Nikodym
//! ratio, dissipation under weak disorder, and regime classification.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SheError};
use crate::lattice::{Nonlinearity, Observable, SigmaKind, SimulationSpec, Simulator, Trajectory};
use crate::quadrature::adaptive_simpson;
use crate::renewal::critical_beta;
use crate::stats::{correlation, ks_critical_5pct, ks_statistic, least_squares, mean_se, standard_normal_cdf};
use crate::walk_kernel::WalkKernel;

/// Relaxation applied to the asymptotic 5% KS critical value to budget the
/// finite-`tau` bias.
pub const KS_RELAXATION: f64 = 1.5;
/// Largest discarded-replica fraction for which a CLT test counts as valid.
pub const MAX_DISCARD_FRACTION: f64 = 0.01;
/// Tolerance of the Radon-Nikodym exceedance event.
pub const RN_ETA: f64 = 0.1;
/// Smallest Brownian increment used as a ratio denominator.
pub const RN_MIN_INCREMENT: f64 = 1e-12;
/// Shortest time excluded from decay fits as pre-asymptotic.
pub const DECAY_FIT_START: f64 = 10.0;

/// `S(z) = int_{z0}^z dw / sigma(w)` for `z > 0`.
#[derive(Debug, Clone)]
pub struct ScaleFunction {
    sigma: Nonlinearity,
    z0: f64,
}

impl ScaleFunction {
    pub fn new(sigma: Nonlinearity, z0: f64) -> Result<Self> {
        if !(z0 > 0.0 && z0.is_finite()) {
            return Err(SheError::Domain(format!("base point z0 = {z0} must be positive")));
        }
        Ok(Self { sigma, z0 })
    }

    pub fn base(&self) -> f64 {
        self.z0
    }

    pub fn sigma(&self) -> &Nonlinearity {
        &self.sigma
    }

    /// Closed form for linear sigma, adaptive Simpson to 1e-10 otherwise.
    pub fn eval(&self, z: f64) -> Result<f64> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(SheError::Domain(format!("scale function needs z > 0, got {z}")));
        }
        if z == self.z0 {
            return Ok(0.0);
        }
        if let SigmaKind::Linear { q } = self.sigma.kind() {
            if *q == 0.0 {
                return Err(SheError::SingularIntegrand("sigma is identically zero".into()));
            }
            return Ok((z / self.z0).ln() / q);
        }
        let (lo, hi) = if z < self.z0 { (z, self.z0) } else { (self.z0, z) };
        let n = 1000;
        let sign = self.sigma.eval(lo).signum();
        for i in 0..=n {
            let w = lo + (hi - lo) * i as f64 / n as f64;
            let s = self.sigma.eval(w);
            if !(s.is_finite() && s != 0.0 && s.signum() == sign) {
                return Err(SheError::SingularIntegrand(format!("sigma vanishes or changes sign near {w}")));
            }
        }
        let f = |w: f64| 1.0 / self.sigma.eval(w);
        Ok(adaptive_simpson(&f, self.z0, z, 1e-10))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CltVerdict {
    /// Discard fraction acceptable and at least one non-degenerate sample.
    Valid,
    /// Too many replicas hit `u <= 0`.
    TooManyDiscards,
    /// All increments vanish (e.g. `sigma = 0`).
    Degenerate,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltTauStats {
    pub tau: f64,
    pub samples: usize,
    pub ks_pooled: f64,
    pub ks_per_site: Vec<f64>,
    /// `(i, j, corr)` for site pairs `i < j`.
    pub correlations: Vec<(usize, usize, f64)>,
    pub max_abs_correlation: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub t: f64,
    pub points: Vec<Vec<i64>>,
    pub replicas: u64,
    pub discarded: u64,
    pub discard_fraction: f64,
    /// `1.36 / sqrt(n)` for the pooled sample, times [`KS_RELAXATION`].
    pub ks_threshold: f64,
    pub per_tau: Vec<CltTauStats>,
    pub verdict: CltVerdict,
}

impl CltReport {
    /// True when the pooled KS statistic strictly decreases as `tau` shrinks
    /// (ladder given in decreasing order).
    pub fn ks_decreasing(&self) -> bool {
        self.per_tau.windows(2).all(|w| w[1].ks_pooled < w[0].ks_pooled)
    }
}

fn probe_spec(base: &SimulationSpec, t: f64, taus: &[f64], observables: Vec<Observable>) -> Result<SimulationSpec> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(SheError::invalid(format!("t = {t} must be finite and >= 0")));
    }
    if taus.is_empty() || taus.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(SheError::invalid("taus must be positive"));
    }
    let mut spec = base.clone();
    let tau_max = taus.iter().cloned().fold(0.0, f64::max);
    spec.solver.horizon = t + tau_max;
    let mut times = vec![t];
    times.extend(taus.iter().map(|tau| t + tau));
    spec.solver.record_times = times;
    spec.solver.snapshot_times = Vec::new();
    spec.solver.observables = observables;
    Ok(spec)
}

fn run_all(spec: &SimulationSpec, replicas: u64) -> Result<Vec<Trajectory>> {
    let sim = Simulator::new(spec)?;
    (0..replicas).into_par_iter().map(|r| sim.run(r)).collect()
}

/// Kolmogorov-Smirnov tests of `eta_tau(x) = [S(u_{t+tau}(x)) - S(u_t(x))] / sqrt(tau)`
/// against the standard normal, pooled over `points` and per point, plus
/// cross-site sample correlations. Requires `dt <= tau / 20`. A replica is
/// discarded if `u <= 0` at any evaluation point.
pub fn clt_increment_test(
    spec: &SimulationSpec,
    scale: &ScaleFunction,
    t: f64,
    taus: &[f64],
    points: &[Vec<i64>],
    replicas: u64,
) -> Result<CltReport> {
    if points.is_empty() || replicas < 2 {
        return Err(SheError::invalid("need at least one site and two replicas"));
    }
    for &tau in taus {
        if spec.solver.dt > tau / 20.0 * (1.0 + 1e-12) {
            return Err(SheError::invalid(format!("dt = {} exceeds tau/20 for tau = {tau}", spec.solver.dt)));
        }
    }
    if !spec.initial.is_nonnegative() {
        return Err(SheError::invalid(
            "CLT tests are restricted to nonnegative initial data (a.s.-positive regime)",
        ));
    }
    let obs: Vec<Observable> = points.iter().map(|x| Observable::Site(x.clone())).collect();
    let probe = probe_spec(spec, t, taus, obs.clone())?;
    let runs = run_all(&probe, replicas)?;

    let mut kept: Vec<Vec<Vec<f64>>> = Vec::new(); // [replica][tau][site]
    let mut discarded = 0u64;
    'replica: for traj in &runs {
        let mut at_t = Vec::with_capacity(obs.len());
        for o in &obs {
            let v = traj.value(o, t).expect("recorded");
            if v <= 0.0 {
                discarded += 1;
                continue 'replica;
            }
            at_t.push(v);
        }
        let base: Vec<f64> = at_t.iter().map(|&v| scale.eval(v)).collect::<Result<_>>()?;
        let mut per_tau = Vec::with_capacity(taus.len());
        for &tau in taus {
            let mut etas = Vec::with_capacity(obs.len());
            for (j, o) in obs.iter().enumerate() {
                let v = traj.value(o, t + tau).expect("recorded");
                if v <= 0.0 {
                    discarded += 1;
                    continue 'replica;
                }
                etas.push((scale.eval(v)? - base[j]) / tau.sqrt());
            }
            per_tau.push(etas);
        }
        kept.push(per_tau);
    }
    let discard_fraction = discarded as f64 / replicas as f64;
    let pooled_n = kept.len() * points.len();
    let mut per_tau_stats = Vec::with_capacity(taus.len());
    let mut all_degenerate = true;
    for (ti, &tau) in taus.iter().enumerate() {
        let by_site: Vec<Vec<f64>> = (0..points.len())
            .map(|j| kept.iter().map(|r| r[ti][j]).collect())
            .collect();
        let pooled: Vec<f64> = by_site.iter().flatten().cloned().collect();
        let degenerate = pooled.iter().all(|&e| e == pooled.first().copied().unwrap_or(0.0));
        all_degenerate &= degenerate;
        let ks_pooled = if pooled.is_empty() { 1.0 } else { ks_statistic(&pooled, standard_normal_cdf) };
        let ks_per_site = by_site
            .iter()
            .map(|s| if s.is_empty() { 1.0 } else { ks_statistic(s, standard_normal_cdf) })
            .collect();
        let mut correlations = Vec::new();
        for i in 0..points.len() {
            for j in i + 1..points.len() {
                correlations.push((i, j, correlation(&by_site[i], &by_site[j])));
            }
        }
        let max_abs_correlation = correlations.iter().map(|c| c.2.abs()).fold(0.0, f64::max);
        per_tau_stats.push(CltTauStats {
            tau,
            samples: pooled.len(),
            ks_pooled,
            ks_per_site,
            correlations,
            max_abs_correlation,
            degenerate,
        });
    }
    let verdict = if discard_fraction >= MAX_DISCARD_FRACTION {
        CltVerdict::TooManyDiscards
    } else if all_degenerate {
        CltVerdict::Degenerate
    } else {
        CltVerdict::Valid
    };
    Ok(CltReport {
        t,
        points: points.to_vec(),
        replicas,
        discarded,
        discard_fraction,
        ks_threshold: KS_RELAXATION * ks_critical_5pct(pooled_n.max(1)),
        per_tau: per_tau_stats,
        verdict,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RnTauStats {
    pub tau: f64,
    pub exceedance: f64,
    pub se: f64,
    pub used: u64,
    pub discarded: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RnReport {
    pub t: f64,
    pub x: Vec<i64>,
    pub eta: f64,
    pub per_tau: Vec<RnTauStats>,
}

impl RnReport {
    /// Exceedance strictly decreasing along the (decreasing) `tau` ladder.
    pub fn strictly_decreasing(&self) -> bool {
        self.per_tau.windows(2).all(|w| w[1].exceedance < w[0].exceedance)
    }
}

/// Empirical `P{|R(tau) - sigma(u_t(x))| > eta (1 + |sigma(u_t(x))|)}` with
/// `R(tau) = [u_{t+tau}(x) - u_t(x)] / [B_{t+tau}(x) - B_t(x)]`.
pub fn rn_ratio_test(
    spec: &SimulationSpec,
    t: f64,
    taus: &[f64],
    x: &[i64],
    replicas: u64,
    eta: f64,
) -> Result<RnReport> {
    if replicas == 0 {
        return Err(SheError::invalid("need at least one replica"));
    }
    let site = Observable::Site(x.to_vec());
    let brownian = Observable::Brownian(x.to_vec());
    let probe = probe_spec(spec, t, taus, vec![site.clone(), brownian.clone()])?;
    let runs = run_all(&probe, replicas)?;
    let per_tau = taus
        .iter()
        .map(|&tau| {
            let mut hits = Vec::with_capacity(runs.len());
            let mut discarded = 0;
            for traj in &runs {
                let db = traj.value(&brownian, t + tau).expect("recorded") - traj.value(&brownian, t).expect("recorded");
                if db.abs() < RN_MIN_INCREMENT {
                    discarded += 1;
                    continue;
                }
                let u_t = traj.value(&site, t).expect("recorded");
                let du = traj.value(&site, t + tau).expect("recorded") - u_t;
                let s = spec.sigma.eval(u_t);
                hits.push(((du / db - s).abs() > eta * (1.0 + s.abs())) as u8 as f64);
            }
            let est = if hits.is_empty() { mean_se(&[0.0]) } else { mean_se(&hits) };
            RnTauStats {
                tau,
                exceedance: est.mean,
                se: est.se,
                used: hits.len() as u64,
                discarded,
            }
        })
        .collect();
    Ok(RnReport {
        t,
        x: x.to_vec(),
        eta,
        per_tau,
    })
}

/// Qualitative iterated-logarithm data: per `tau`, the median and maximum
/// over replicas of `|S(u_{t+tau}) - S(u_t)|` next to `sqrt(2 tau log log(1/tau))`.
#[derive(Debug, Clone, Serialize)]
pub struct LilRow {
    pub tau: f64,
    pub envelope: f64,
    pub median_increment: f64,
    pub max_increment: f64,
}

pub fn lil_envelope(
    spec: &SimulationSpec,
    scale: &ScaleFunction,
    t: f64,
    taus: &[f64],
    x: &[i64],
    replicas: u64,
) -> Result<Vec<LilRow>> {
    if taus.iter().any(|&tau| tau >= (-1.0f64).exp()) {
        return Err(SheError::invalid("LIL envelope needs tau < 1/e"));
    }
    let site = Observable::Site(x.to_vec());
    let probe = probe_spec(spec, t, taus, vec![site.clone()])?;
    let runs = run_all(&probe, replicas)?;
    taus.iter()
        .map(|&tau| {
            let mut incs = Vec::with_capacity(runs.len());
            for traj in &runs {
                let a = traj.value(&site, t).expect("recorded");
                let b = traj.value(&site, t + tau).expect("recorded");
                if a > 0.0 && b > 0.0 {
                    incs.push((scale.eval(b)? - scale.eval(a)?).abs());
                }
            }
            Ok(LilRow {
                tau,
                envelope: (2.0 * tau * (1.0 / tau).ln().ln()).sqrt(),
                median_increment: if incs.is_empty() { f64::NAN } else { crate::stats::median(&incs) },
                max_increment: incs.iter().cloned().fold(f64::NAN, f64::max),
            })
        })
        .collect()
}

/// Monte Carlo means of the field norms at each recorded time.
#[derive(Debug, Clone, Serialize)]
pub struct NormTrajectory {
    pub times: Vec<f64>,
    pub l1: Vec<f64>,
    pub l1_se: Vec<f64>,
    pub mass: Vec<f64>,
    pub mass_se: Vec<f64>,
    pub l2_squared: Vec<f64>,
    pub l2_squared_se: Vec<f64>,
    pub sup: Vec<f64>,
    pub sup_se: Vec<f64>,
    pub negative_fraction: Vec<f64>,
}

impl NormTrajectory {
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DissipationReport {
    pub norms: NormTrajectory,
    pub initial_l1: f64,
    /// Per recorded time, `(mean sum_x u - ||u0||_1) / se`; zero-variance
    /// times report 0 when equal.
    pub martingale_z: Vec<f64>,
    /// Recorded `(replica, time)` pairs breaking `sup^2 <= l2^2 <= sup * l1`.
    pub chain_violations: u64,
    pub fit_window: (f64, f64),
    pub fit_points: usize,
    pub decay_slope: f64,
    pub decay_slope_se: f64,
    /// `-d/2`, the decay exponent of `P-bar` for finite-variance walks.
    pub reference_slope: f64,
    /// Largest recorded sup-norm over all replicas and times.
    pub max_sup: f64,
    pub warnings: Vec<String>,
}

impl DissipationReport {
    /// Mean sup-norm at `t_late` divided by its value at `t_early`.
    pub fn sup_ratio(&self, t_early: f64, t_late: f64) -> Option<f64> {
        let a = self.norms.index_of(t_early)?;
        let b = self.norms.index_of(t_late)?;
        Some(self.norms.sup[b] / self.norms.sup[a])
    }
}

/// Runs `replicas` copies with the norm observables recorded at the spec's
/// record times, checks the norm chain and the `l1` martingale, and fits
/// `log E||u_t||^2` against `log t` over `fit_window` (times below
/// [`DECAY_FIT_START`] and past the wrap-safe horizon are dropped).
pub fn dissipation_experiment(spec: &SimulationSpec, replicas: u64, fit_window: (f64, f64)) -> Result<DissipationReport> {
    let support = spec
        .initial
        .finite_support()
        .ok_or_else(|| SheError::invalid("dissipation needs finitely supported (l1) initial data"))?;
    if !spec.kernel.is_transient_symmetrized() {
        return Err(SheError::invalid("dissipation experiment needs a transient kernel"));
    }
    if replicas < 2 {
        return Err(SheError::invalid("need at least two replicas"));
    }
    let mut probe = spec.clone();
    probe.solver.observables = vec![
        Observable::L1,
        Observable::Mass,
        Observable::L2Squared,
        Observable::Sup,
        Observable::NegativeFraction,
    ];
    probe.solver.snapshot_times = Vec::new();
    let runs = run_all(&probe, replicas)?;
    let first = &runs[0];
    let times = first.times.clone();
    let col = |o: &Observable| first.column(o).expect("recorded");
    let (c_l1, c_mass, c_l2, c_sup, c_neg) = (
        col(&Observable::L1),
        col(&Observable::Mass),
        col(&Observable::L2Squared),
        col(&Observable::Sup),
        col(&Observable::NegativeFraction),
    );
    let mut chain_violations = 0u64;
    let mut max_sup = 0.0f64;
    for traj in &runs {
        for row in &traj.rows {
            let (l1, l2, sup) = (row[c_l1], row[c_l2], row[c_sup]);
            // relative slack covers summation-order rounding only
            let slack = 1e-12 * (sup * l1).max(f64::MIN_POSITIVE);
            if sup * sup > l2 + slack || l2 > sup * l1 + slack {
                chain_violations += 1;
            }
            max_sup = max_sup.max(sup);
        }
    }
    let stat = |c: usize, i: usize| mean_se(&runs.iter().map(|r| r.rows[i][c]).collect::<Vec<_>>());
    let n = times.len();
    let mut norms = NormTrajectory {
        times: times.clone(),
        l1: Vec::with_capacity(n),
        l1_se: Vec::with_capacity(n),
        mass: Vec::with_capacity(n),
        mass_se: Vec::with_capacity(n),
        l2_squared: Vec::with_capacity(n),
        l2_squared_se: Vec::with_capacity(n),
        sup: Vec::with_capacity(n),
        sup_se: Vec::with_capacity(n),
        negative_fraction: Vec::with_capacity(n),
    };
    for i in 0..n {
        let s = stat(c_l1, i);
        norms.l1.push(s.mean);
        norms.l1_se.push(s.se);
        let s = stat(c_mass, i);
        norms.mass.push(s.mean);
        norms.mass_se.push(s.se);
        let s = stat(c_l2, i);
        norms.l2_squared.push(s.mean);
        norms.l2_squared_se.push(s.se);
        let s = stat(c_sup, i);
        norms.sup.push(s.mean);
        norms.sup_se.push(s.se);
        norms.negative_fraction.push(stat(c_neg, i).mean);
    }
    let initial_l1: f64 = support.iter().map(|(_, v)| v.abs()).sum();
    let initial_mass: f64 = support.iter().map(|(_, v)| v).sum();
    let martingale_z = (0..n)
        .map(|i| {
            let diff = norms.mass[i] - initial_mass;
            if norms.mass_se[i] > 0.0 {
                diff / norms.mass_se[i]
            } else if diff.abs() <= 1e-12 * initial_mass.abs().max(1.0) {
                0.0
            } else {
                diff.signum() * f64::INFINITY
            }
        })
        .collect();

    let mut warnings = first.diagnostics.warnings.clone();
    let safe = if spec.lattice.is_periodic() {
        spec.kernel.wrap_safe_horizon(spec.lattice.min_extent())
    } else {
        f64::INFINITY
    };
    let lo = fit_window.0.max(DECAY_FIT_START);
    let hi = fit_window.1.min(safe);
    if hi < fit_window.1 {
        warnings.push(format!("fit window clipped to the wrap-safe horizon {safe:.3}"));
    }
    let idx: Vec<usize> = (0..n).filter(|&i| times[i] >= lo && times[i] <= hi && times[i] > 0.0).collect();
    if idx.len() < 3 {
        return Err(SheError::invalid(format!(
            "decay fit window [{lo}, {hi}] holds {} recorded times, need >= 3",
            idx.len()
        )));
    }
    let lx: Vec<f64> = idx.iter().map(|&i| times[i].ln()).collect();
    let ly: Vec<f64> = idx.iter().map(|&i| norms.l2_squared[i].ln()).collect();
    let fit = least_squares(&lx, &ly)?;
    Ok(DissipationReport {
        norms,
        initial_l1,
        martingale_z,
        chain_violations,
        fit_window: (lo, hi),
        fit_points: idx.len(),
        decay_slope: fit.slope,
        decay_slope_se: fit.slope_se,
        reference_slope: -(spec.kernel.dim() as f64) / 2.0,
        max_sup,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    DissipativeBound,
    GrowthBound,
    Indeterminate,
    /// `Upsilon(0) = inf`: the symmetrized walk is recurrent.
    NoDissipationCriterion,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegimeReport {
    pub regime: Regime,
    pub upsilon_zero: f64,
    pub lip_strength: f64,
    pub ell_strength: f64,
    /// Root of `ell^2 Upsilon(beta) = 1` when `ell^2 Upsilon(0) > 1`.
    pub critical_beta: Option<f64>,
}

/// Compares `lip^2 Upsilon(0)` and `ell^2 Upsilon(0)` with 1.
pub fn regime_classify(lip: f64, ell: f64, kernel: &WalkKernel) -> Result<RegimeReport> {
    if !(lip >= 0.0 && ell >= 0.0 && ell <= lip && lip.is_finite()) {
        return Err(SheError::invalid("need 0 <= ell <= lip < inf"));
    }
    let ups = kernel.upsilon(0.0, 1e-9)?.value;
    let lip_strength = lip * lip * ups;
    let ell_strength = if ell == 0.0 { 0.0 } else { ell * ell * ups };
    let critical = if ell > 0.0 && ell_strength > 1.0 {
        Some(critical_beta(kernel, ell)?.beta)
    } else {
        None
    };
    let regime = if ups.is_infinite() {
        Regime::NoDissipationCriterion
    } else if lip_strength < 1.0 {
        Regime::DissipativeBound
    } else if ell_strength >= 1.0 {
        Regime::GrowthBound
    } else {
        Regime::Indeterminate
    };
    Ok(RegimeReport {
        regime,
        upsilon_zero: ups,
        lip_strength,
        ell_strength,
        critical_beta: critical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{InitialProfile, LatticeBox, Scheme, SolverConfig};
    use crate::rng::NoisePlan;
    use crate::walk_kernel::{Jump, JumpDistribution};

    #[test]
    fn scale_function_examples() {
        let lin = ScaleFunction::new(Nonlinearity::linear(1.0), 1.0).unwrap();
        assert_eq!(lin.eval(1.0).unwrap(), 0.0);
        assert!((lin.eval(std::f64::consts::E).unwrap() - 1.0).abs() < 1e-15);
        let sat = ScaleFunction::new(Nonlinearity::custom(|w| w / (1.0 + w.abs()), 1.0, 0.0).unwrap(), 1.0).unwrap();
        assert!((sat.eval(2.0).unwrap() - (1.0 + 2f64.ln())).abs() < 1e-9);
        assert!(sat.eval(0.5).unwrap() < 0.0);
        assert!(matches!(lin.eval(0.0), Err(SheError::Domain(_))));
        assert!(matches!(lin.eval(-1.0), Err(SheError::Domain(_))));
        let bump = ScaleFunction::new(Nonlinearity::custom(|w: f64| 0.5 * w.abs().min((w - 2.0).abs()), 0.5, 0.0).unwrap(), 1.0).unwrap();
        assert!(matches!(bump.eval(3.0), Err(SheError::SingularIntegrand(_))));
        let zero = ScaleFunction::new(Nonlinearity::zero(), 1.0).unwrap();
        assert!(matches!(zero.eval(2.0), Err(SheError::SingularIntegrand(_))));
    }

    #[test]
    fn scale_function_is_increasing_for_positive_sigma() {
        let s = ScaleFunction::new(Nonlinearity::tanh(1.0), 0.5).unwrap();
        let zs = [0.1, 0.3, 0.5, 1.0, 3.0, 10.0];
        let vals: Vec<f64> = zs.iter().map(|&z| s.eval(z).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    fn pam(q: f64, dt: f64) -> SimulationSpec {
        SimulationSpec {
            kernel: WalkKernel::simple(1),
            lattice: LatticeBox::periodic(vec![21]).unwrap(),
            sigma: Nonlinearity::linear(q),
            initial: InitialProfile::Constant(1.0),
            solver: SolverConfig::new(dt, 1.0).with_scheme(Scheme::SplitExactLinear),
            noise: NoisePlan::new(31),
        }
    }

    #[test]
    fn clt_degenerate_without_noise() {
        let mut spec = pam(0.0, 1e-3);
        spec.sigma = Nonlinearity::zero();
        let scale = ScaleFunction::new(Nonlinearity::linear(1.0), 1.0).unwrap();
        let r = clt_increment_test(&spec, &scale, 0.2, &[0.04], &[vec![0], vec![5]], 20).unwrap();
        assert_eq!(r.verdict, CltVerdict::Degenerate);
        assert_eq!(r.discarded, 0);
    }

    #[test]
    fn clt_rejects_coarse_dt() {
        let spec = pam(1.0, 0.01);
        let scale = ScaleFunction::new(Nonlinearity::linear(1.0), 1.0).unwrap();
        assert!(clt_increment_test(&spec, &scale, 0.2, &[0.04], &[vec![0]], 20).is_err());
    }

    #[test]
    fn clt_small_increments_are_gaussian() {
        let spec = pam(1.0, 5e-4);
        let scale = ScaleFunction::new(Nonlinearity::linear(1.0), 1.0).unwrap();
        let r = clt_increment_test(&spec, &scale, 0.5, &[0.04, 0.01], &[vec![0], vec![7]], 1000).unwrap();
        assert_eq!(r.verdict, CltVerdict::Valid);
        let last = r.per_tau.last().unwrap();
        assert!(last.ks_pooled < r.ks_threshold, "{} vs {}", last.ks_pooled, r.ks_threshold);
        assert!(last.max_abs_correlation < 0.15);
    }

    #[test]
    fn clt_scale_equivariance() {
        // doubling q with the matched scale function leaves eta unchanged
        // up to the drift, so the KS statistics nearly agree
        let scale1 = ScaleFunction::new(Nonlinearity::linear(0.5), 1.0).unwrap();
        let scale2 = ScaleFunction::new(Nonlinearity::linear(1.0), 1.0).unwrap();
        let r1 = clt_increment_test(&pam(0.5, 5e-4), &scale1, 0.5, &[0.01], &[vec![0]], 400).unwrap();
        let r2 = clt_increment_test(&pam(1.0, 5e-4), &scale2, 0.5, &[0.01], &[vec![0]], 400).unwrap();
        assert!((r1.per_tau[0].ks_pooled - r2.per_tau[0].ks_pooled).abs() < 0.03);
    }

    #[test]
    fn rn_ratio_single_site() {
        let frozen = WalkKernel::new(JumpDistribution::new(1, vec![Jump { vec: vec![0], p: 1.0 }]).unwrap());
        let spec = SimulationSpec {
            kernel: frozen,
            lattice: LatticeBox::periodic(vec![1]).unwrap(),
            sigma: Nonlinearity::linear(0.2),
            initial: InitialProfile::Constant(1.0),
            solver: SolverConfig::new(5e-4, 1.0),
            noise: NoisePlan::new(2),
        };
        // R - sigma(u_t) = q sum (u_s - u_t) dB_s / dB is O(q^2 sqrt(tau)) apart
        // from small denominators, so exceedance is small and shrinks with tau
        let r = rn_ratio_test(&spec, 0.5, &[0.01, 0.0025], &[0], 1000, RN_ETA).unwrap();
        for s in &r.per_tau {
            assert!(s.exceedance < 0.05, "{s:?}");
        }
        assert!(r.per_tau[1].exceedance <= r.per_tau[0].exceedance);
    }

    #[test]
    fn rn_ratio_without_noise_is_drift_only() {
        let mut spec = pam(0.0, 1e-3);
        spec.sigma = Nonlinearity::zero();
        spec.initial = InitialProfile::delta(1);
        let r = rn_ratio_test(&spec, 0.5, &[0.04, 0.01], &[0], 200, RN_ETA).unwrap();
        // du = O(tau) while dB = O(sqrt(tau)): the ratio shrinks with tau
        assert!(r.per_tau[1].exceedance <= r.per_tau[0].exceedance);
    }

    #[test]
    fn lil_rows_are_reported() {
        let spec = pam(1.0, 1e-3);
        let scale = ScaleFunction::new(Nonlinearity::linear(1.0), 1.0).unwrap();
        let rows = lil_envelope(&spec, &scale, 0.5, &[0.1, 0.02], &[0], 50).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.envelope > 0.0 && r.max_increment >= r.median_increment));
    }

    #[test]
    fn regime_examples() {
        let k3 = WalkKernel::simple(3);
        let r = regime_classify(0.5, 0.0, &k3).unwrap();
        assert_eq!(r.regime, Regime::DissipativeBound);
        assert!((r.lip_strength - 0.25 * 0.758193).abs() < 1e-3);
        let r = regime_classify(1.2, 1.2, &k3).unwrap();
        assert_eq!(r.regime, Regime::GrowthBound);
        assert!(r.critical_beta.unwrap() > 0.0);
        let r = regime_classify(1.0, 0.5, &WalkKernel::simple(1)).unwrap();
        assert_eq!(r.regime, Regime::NoDissipationCriterion);
        let r = regime_classify(1.2, 1.0, &k3).unwrap();
        assert_eq!(r.regime, Regime::Indeterminate);
    }

    #[test]
    fn noiseless_dissipation_follows_pbar() {
        let spec = SimulationSpec {
            kernel: WalkKernel::simple(3),
            lattice: LatticeBox::periodic(vec![12, 12, 12]).unwrap(),
            sigma: Nonlinearity::zero(),
            initial: InitialProfile::delta(3),
            solver: SolverConfig::new(0.05, 30.0).recording_every(1.0),
            noise: NoisePlan::new(0),
        };
        let r = dissipation_experiment(&spec, 2, (10.0, 30.0)).unwrap();
        assert_eq!(r.chain_violations, 0);
        assert!(r.martingale_z.iter().all(|z| *z == 0.0));
        assert!((r.decay_slope + 1.5).abs() < 0.2, "slope {}", r.decay_slope);
        let i = r.norms.index_of(20.0).unwrap();
        let pbar = spec.kernel.pbar(20.0, 1e-10).unwrap().value;
        assert!((r.norms.l2_squared[i] - pbar).abs() < 0.05 * pbar);
    }
}
