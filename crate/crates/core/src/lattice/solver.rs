//! Time stepping of the truncated system on a box.

use rayon::prelude::*;

use super::geometry::Stencil;
use super::{InitialProfile, LatticeBox, Nonlinearity};
use crate::error::{Result, SheError};
use crate::rng::NoisePlan;
use crate::walk_kernel::WalkKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Explicit Euler–Maruyama.
    Euler,
    /// Drift step followed by the exact geometric update; linear sigma only.
    SplitExactLinear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    /// `u_t(x)`.
    Site(Vec<i64>),
    /// `B_t(x)`, the running sum of the increments fed to site `x`.
    Brownian(Vec<i64>),
    /// `sum_x u_t(x)`.
    Mass,
    L1,
    L2Squared,
    Sup,
    NegativeFraction,
}

impl Observable {
    pub fn label(&self) -> String {
        let coords = |x: &[i64]| {
            x.iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(";")
        };
        match self {
            Self::Site(x) => format!("u[{}]", coords(x)),
            Self::Brownian(x) => format!("B[{}]", coords(x)),
            Self::Mass => "mass".into(),
            Self::L1 => "l1".into(),
            Self::L2Squared => "l2sq".into(),
            Self::Sup => "sup".into(),
            Self::NegativeFraction => "negfrac".into(),
        }
    }

    pub fn norms() -> Vec<Observable> {
        vec![Self::L1, Self::L2Squared, Self::Sup, Self::NegativeFraction]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    pub record_times: Vec<f64>,
    pub snapshot_times: Vec<f64>,
    pub observables: Vec<Observable>,
    /// Upper limit on `dt * Lip_sigma^2`.
    pub max_dt_lip2: f64,
    /// Scan for negative sites after every step, not only at record times.
    pub monitor_positivity: bool,
}

impl SolverConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            scheme: Scheme::Euler,
            record_times: vec![horizon],
            snapshot_times: Vec::new(),
            observables: Observable::norms(),
            max_dt_lip2: 0.1,
            monitor_positivity: false,
        }
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_record_times(mut self, times: Vec<f64>) -> Self {
        self.record_times = times;
        self
    }

    pub fn with_snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }

    pub fn with_observables(mut self, obs: Vec<Observable>) -> Self {
        self.observables = obs;
        self
    }

    /// Times `every, 2 every, ...` up to the horizon, plus 0.
    pub fn recording_every(mut self, every: f64) -> Self {
        let n = (self.horizon / every).round() as usize;
        self.record_times = (0..=n).map(|i| i as f64 * every).collect();
        self
    }

    fn to_step(&self, t: f64) -> Result<usize> {
        let s = t / self.dt;
        let n = s.round();
        if !(t >= 0.0) || (s - n).abs() > 1e-6 * s.max(1.0) || t > self.horizon * (1.0 + 1e-12) {
            return Err(SheError::invalid(format!(
                "time {t} is not a grid multiple of dt={} within [0, {}]",
                self.dt, self.horizon
            )));
        }
        Ok(n as usize)
    }

    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SheError::invalid(format!("dt = {} must be positive", self.dt)));
        }
        self.to_step(self.horizon)
    }
}

/// Everything needed to produce one replica.
#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub kernel: WalkKernel,
    pub lattice: LatticeBox,
    pub sigma: Nonlinearity,
    pub initial: InitialProfile,
    pub solver: SolverConfig,
    pub noise: NoisePlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunDiagnostics {
    /// Largest fraction of negative sites seen (every step when monitoring,
    /// else at record times).
    pub max_negative_fraction: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub replica: u64,
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: RunDiagnostics,
}

impl Trajectory {
    pub fn column(&self, obs: &Observable) -> Option<usize> {
        let label = obs.label();
        self.columns.iter().position(|c| *c == label)
    }

    pub fn series(&self, obs: &Observable) -> Option<Vec<f64>> {
        let c = self.column(obs)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn value(&self, obs: &Observable, time: f64) -> Option<f64> {
        let c = self.column(obs)?;
        let i = self
            .times
            .iter()
            .position(|&t| (t - time).abs() <= 1e-9 * time.abs().max(1.0))?;
        Some(self.rows[i][c])
    }

    pub fn snapshot(&self, time: f64) -> Option<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| (s.time - time).abs() <= 1e-9 * time.abs().max(1.0))
    }
}

/// Field on the box plus the frozen exterior slots.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    buf: Vec<f64>,
    sites: usize,
    pub time: f64,
    pub step: usize,
}

impl FieldState {
    pub fn values(&self) -> &[f64] {
        &self.buf[..self.sites]
    }
}

/// Norm summary of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldNorms {
    pub mass: f64,
    pub l1: f64,
    pub l2sq: f64,
    pub sup: f64,
    pub negative_fraction: f64,
}

pub fn field_norms(values: &[f64]) -> FieldNorms {
    let mut mass = 0.0;
    let mut l1 = 0.0;
    let mut l2sq = 0.0;
    let mut sup = 0.0f64;
    let mut neg = 0usize;
    for &v in values {
        mass += v;
        l1 += v.abs();
        l2sq += v * v;
        sup = sup.max(v.abs());
        neg += (v < 0.0) as usize;
    }
    FieldNorms {
        mass,
        l1,
        l2sq,
        sup,
        negative_fraction: neg as f64 / values.len().max(1) as f64,
    }
}

/// Prepared solver for one [`SimulationSpec`].
#[derive(Debug)]
pub struct Simulator<'a> {
    spec: &'a SimulationSpec,
    stencil: Stencil,
    steps: usize,
    record_steps: Vec<usize>,
    snapshot_steps: Vec<usize>,
    observed_sites: Vec<Option<usize>>,
    diag: f64,
    off: Vec<f64>,
    warnings: Vec<String>,
}

impl<'a> Simulator<'a> {
    pub fn new(spec: &'a SimulationSpec) -> Result<Self> {
        let cfg = &spec.solver;
        let steps = cfg.steps()?;
        let rate = spec.kernel.rate();
        if cfg.dt * rate > 1.0 {
            return Err(SheError::invalid(format!(
                "dt * rate = {} exceeds 1: drift stencil would lose monotonicity",
                cfg.dt * rate
            )));
        }
        let lip = spec.sigma.lip();
        if cfg.dt * lip * lip > cfg.max_dt_lip2 {
            return Err(SheError::invalid(format!(
                "dt * Lip^2 = {} exceeds the configured limit {}",
                cfg.dt * lip * lip,
                cfg.max_dt_lip2
            )));
        }
        if cfg.scheme == Scheme::SplitExactLinear && spec.sigma.linear_coefficient().is_none() {
            return Err(SheError::invalid("split-exact-linear scheme needs linear sigma"));
        }
        spec.initial.check_dim(spec.lattice.dim())?;
        let stencil = Stencil::build(&spec.lattice, &spec.kernel)?;

        let mut record_steps = cfg
            .record_times
            .iter()
            .map(|&t| cfg.to_step(t))
            .collect::<Result<Vec<_>>>()?;
        record_steps.sort_unstable();
        record_steps.dedup();
        let mut snapshot_steps = cfg
            .snapshot_times
            .iter()
            .map(|&t| cfg.to_step(t))
            .collect::<Result<Vec<_>>>()?;
        snapshot_steps.sort_unstable();
        snapshot_steps.dedup();

        let observed_sites = cfg
            .observables
            .iter()
            .map(|o| match o {
                Observable::Site(x) | Observable::Brownian(x) => spec
                    .lattice
                    .site(x)
                    .map(Some)
                    .ok_or_else(|| SheError::invalid(format!("observed point {x:?} outside box"))),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;

        let mut warnings = Vec::new();
        if spec.lattice.is_periodic() {
            let safe = spec.kernel.wrap_safe_horizon(spec.lattice.min_extent());
            if cfg.horizon > safe {
                warnings.push(format!(
                    "horizon {} exceeds wrap-safe horizon {safe:.3} of the periodic box",
                    cfg.horizon
                ));
            }
        }
        let (diag, off) = stencil.drift_weights(cfg.dt);
        Ok(Self {
            spec,
            stencil,
            steps,
            record_steps,
            snapshot_steps,
            observed_sites,
            diag,
            off,
            warnings,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn state(&self, profile: &InitialProfile) -> FieldState {
        FieldState {
            buf: self.stencil.buffer(&self.spec.lattice, profile),
            sites: self.stencil.sites,
            time: 0.0,
            step: 0,
        }
    }

    /// `u' = u + dt L u + sigma(u) dB`.
    pub fn em_step(&self, state: &mut FieldState, increments: &[f64], scratch: &mut Vec<f64>) -> Result<()> {
        self.check_increments(increments)?;
        let sigma = &self.spec.sigma;
        self.prepare(state, scratch);
        for x in 0..self.stencil.sites {
            let u = state.buf[x];
            scratch[x] = self.stencil.drift_at(&state.buf, x, self.diag, &self.off)
                + sigma.eval(u) * increments[x];
        }
        self.finish_step(state, scratch)
    }

    /// `u' = (u + dt L u) exp(q dB - q^2 dt / 2)`.
    pub fn split_step_linear(
        &self,
        state: &mut FieldState,
        increments: &[f64],
        scratch: &mut Vec<f64>,
    ) -> Result<()> {
        self.check_increments(increments)?;
        let q = self.spec.sigma.linear_coefficient().ok_or_else(|| {
            SheError::invalid("split step requires linear sigma")
        })?;
        let ito = 0.5 * q * q * self.spec.solver.dt;
        self.prepare(state, scratch);
        for x in 0..self.stencil.sites {
            let drift = self.stencil.drift_at(&state.buf, x, self.diag, &self.off);
            scratch[x] = drift * (q * increments[x] - ito).exp();
        }
        self.finish_step(state, scratch)
    }

    /// Sizes the scratch buffer and copies the frozen exterior into it.
    fn prepare(&self, state: &FieldState, scratch: &mut Vec<f64>) {
        let n = self.stencil.sites;
        scratch.resize(state.buf.len(), 0.0);
        scratch[n..].copy_from_slice(&state.buf[n..]);
    }

    fn check_increments(&self, increments: &[f64]) -> Result<()> {
        if increments.len() != self.stencil.sites {
            return Err(SheError::invalid("one increment per site is required"));
        }
        Ok(())
    }

    fn finish_step(&self, state: &mut FieldState, scratch: &mut Vec<f64>) -> Result<()> {
        let sum: f64 = scratch[..self.stencil.sites].iter().sum();
        if !sum.is_finite() {
            let site = scratch.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(SheError::NonFinite {
                site,
                step: state.step,
            });
        }
        std::mem::swap(&mut state.buf, scratch);
        state.step += 1;
        state.time = state.step as f64 * self.spec.solver.dt;
        Ok(())
    }

    fn step(&self, state: &mut FieldState, increments: &[f64], scratch: &mut Vec<f64>) -> Result<()> {
        match self.spec.solver.scheme {
            Scheme::Euler => self.em_step(state, increments, scratch),
            Scheme::SplitExactLinear => self.split_step_linear(state, increments, scratch),
        }
    }

    fn observe(&self, values: &[f64], brownian: &[f64]) -> Vec<f64> {
        let norms = field_norms(values);
        self.spec
            .solver
            .observables
            .iter()
            .zip(&self.observed_sites)
            .map(|(o, site)| match o {
                Observable::Site(_) => values[site.expect("resolved")],
                Observable::Brownian(_) => brownian[site.expect("resolved")],
                Observable::Mass => norms.mass,
                Observable::L1 => norms.l1,
                Observable::L2Squared => norms.l2sq,
                Observable::Sup => norms.sup,
                Observable::NegativeFraction => norms.negative_fraction,
            })
            .collect()
    }

    fn empty_trajectory(&self, replica: u64) -> Trajectory {
        Trajectory {
            replica,
            columns: self.spec.solver.observables.iter().map(|o| o.label()).collect(),
            times: Vec::with_capacity(self.record_steps.len()),
            rows: Vec::with_capacity(self.record_steps.len()),
            snapshots: Vec::new(),
            diagnostics: RunDiagnostics {
                max_negative_fraction: 0.0,
                warnings: self.warnings.clone(),
            },
        }
    }

    fn record(&self, traj: &mut Trajectory, state: &FieldState, brownian: &[f64], rec: &mut usize, snap: &mut usize) {
        let values = state.values();
        if self.record_steps.get(*rec) == Some(&state.step) {
            traj.times.push(state.time);
            traj.rows.push(self.observe(values, brownian));
            let nf = field_norms(values).negative_fraction;
            traj.diagnostics.max_negative_fraction = traj.diagnostics.max_negative_fraction.max(nf);
            *rec += 1;
        }
        if self.snapshot_steps.get(*snap) == Some(&state.step) {
            traj.snapshots.push(Snapshot {
                time: state.time,
                values: values.to_vec(),
            });
            *snap += 1;
        }
    }

    /// One replica from the spec's initial profile.
    pub fn run(&self, replica: u64) -> Result<Trajectory> {
        let dt = self.spec.solver.dt;
        let n = self.stencil.sites;
        let mut state = self.state(&self.spec.initial);
        let mut scratch = state.buf.clone();
        let mut increments = vec![0.0; n];
        let mut brownian = vec![0.0; n];
        let track_b = self
            .spec
            .solver
            .observables
            .iter()
            .any(|o| matches!(o, Observable::Brownian(_)));
        let mut traj = self.empty_trajectory(replica);
        let (mut rec, mut snap) = (0, 0);
        self.record(&mut traj, &state, &brownian, &mut rec, &mut snap);
        for step in 0..self.steps {
            self.spec.noise.fill_increments(replica, step, dt, &mut increments);
            if track_b {
                for (b, db) in brownian.iter_mut().zip(&increments) {
                    *b += db;
                }
            }
            self.step(&mut state, &increments, &mut scratch)?;
            if self.spec.solver.monitor_positivity {
                let nf = field_norms(state.values()).negative_fraction;
                traj.diagnostics.max_negative_fraction = traj.diagnostics.max_negative_fraction.max(nf);
            }
            self.record(&mut traj, &state, &brownian, &mut rec, &mut snap);
        }
        Ok(traj)
    }

    /// Two fields driven by the same increments, with ordering diagnostics.
    pub fn run_coupled(&self, u0: &InitialProfile, v0: &InitialProfile, replica: u64) -> Result<CoupledRun> {
        let dt = self.spec.solver.dt;
        let n = self.stencil.sites;
        let mut u = self.state(u0);
        let mut v = self.state(v0);
        if u.buf.iter().zip(&v.buf).any(|(a, b)| a < b) {
            return Err(SheError::invalid("coupled run needs u0 >= v0 on the box and its exterior"));
        }
        let mut scratch = u.buf.clone();
        let mut increments = vec![0.0; n];
        let brownian = vec![0.0; n];
        let mut tu = self.empty_trajectory(replica);
        let mut tv = self.empty_trajectory(replica);
        let (mut ru, mut su, mut rv, mut sv) = (0, 0, 0, 0);
        self.record(&mut tu, &u, &brownian, &mut ru, &mut su);
        self.record(&mut tv, &v, &brownian, &mut rv, &mut sv);
        let mut max_violation = Vec::with_capacity(self.steps + 1);
        let mut violating_fraction = Vec::with_capacity(self.steps + 1);
        let mut push = |u: &FieldState, v: &FieldState| {
            let mut worst = 0.0f64;
            let mut count = 0usize;
            for (a, b) in u.values().iter().zip(v.values()) {
                if b > a {
                    worst = worst.max(b - a);
                    count += 1;
                }
            }
            max_violation.push(worst);
            violating_fraction.push(count as f64 / n as f64);
        };
        push(&u, &v);
        for step in 0..self.steps {
            self.spec.noise.fill_increments(replica, step, dt, &mut increments);
            self.step(&mut u, &increments, &mut scratch)?;
            self.step(&mut v, &increments, &mut scratch)?;
            push(&u, &v);
            self.record(&mut tu, &u, &brownian, &mut ru, &mut su);
            self.record(&mut tv, &v, &brownian, &mut rv, &mut sv);
        }
        let worst_violation = max_violation.iter().cloned().fold(0.0, f64::max);
        Ok(CoupledRun {
            u: tu,
            v: tv,
            max_violation,
            violating_fraction,
            worst_violation,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRun {
    pub u: Trajectory,
    pub v: Trajectory,
    /// `max_x (v - u)_+` after each step (index 0 is the initial state).
    pub max_violation: Vec<f64>,
    pub violating_fraction: Vec<f64>,
    pub worst_violation: f64,
}

pub fn simulate(spec: &SimulationSpec, replica: u64) -> Result<Trajectory> {
    Simulator::new(spec)?.run(replica)
}

/// Replicas `0..replicas`, in replica order regardless of thread count.
pub fn simulate_replicas(spec: &SimulationSpec, replicas: u64) -> Result<Vec<Trajectory>> {
    let sim = Simulator::new(spec)?;
    (0..replicas).into_par_iter().map(|r| sim.run(r)).collect()
}

pub fn coupled_simulate(
    spec: &SimulationSpec,
    u0: &InitialProfile,
    v0: &InitialProfile,
    replica: u64,
) -> Result<CoupledRun> {
    Simulator::new(spec)?.run_coupled(u0, v0, replica)
}

pub fn coupled_replicas(
    spec: &SimulationSpec,
    u0: &InitialProfile,
    v0: &InitialProfile,
    replicas: u64,
) -> Result<Vec<CoupledRun>> {
    let sim = Simulator::new(spec)?;
    (0..replicas)
        .into_par_iter()
        .map(|r| sim.run_coupled(u0, v0, r))
        .collect()
}
