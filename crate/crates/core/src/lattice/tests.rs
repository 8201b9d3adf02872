use proptest::prelude::*;

use super::*;
use crate::rng::NoisePlan;
use crate::stats::mean_se;
use crate::walk_kernel::{Jump, JumpDistribution, WalkKernel};

fn spec_1d(sites: usize, sigma: Nonlinearity, initial: InitialProfile, solver: SolverConfig) -> SimulationSpec {
    SimulationSpec {
        kernel: WalkKernel::simple(1),
        lattice: LatticeBox::periodic(vec![sites]).unwrap(),
        sigma,
        initial,
        solver,
        noise: NoisePlan::new(2024),
    }
}

fn frozen_walk() -> WalkKernel {
    WalkKernel::new(JumpDistribution::new(1, vec![Jump { vec: vec![0], p: 1.0 }]).unwrap())
}

#[test]
fn deterministic_heat_step() {
    let dt = 0.01;
    let spec = spec_1d(9, Nonlinearity::zero(), InitialProfile::delta(1), SolverConfig::new(dt, dt));
    let sim = Simulator::new(&spec).unwrap();
    let mut state = sim.state(&spec.initial);
    let mut scratch = Vec::new();
    sim.em_step(&mut state, &[0.3; 9], &mut scratch).unwrap();
    let at = |x: i64| state.values()[spec.lattice.site(&[x]).unwrap()];
    assert!((at(0) - (1.0 - dt)).abs() < 1e-15);
    assert!((at(1) - dt / 2.0).abs() < 1e-15);
    assert!((at(-1) - dt / 2.0).abs() < 1e-15);
    assert_eq!(at(2), 0.0);
    assert_eq!(state.step, 1);
}

#[test]
fn constants_are_fixed_without_noise() {
    let spec = spec_1d(7, Nonlinearity::linear(0.8), InitialProfile::Constant(2.5), SolverConfig::new(0.01, 0.01));
    let sim = Simulator::new(&spec).unwrap();
    let mut state = sim.state(&spec.initial);
    let mut scratch = Vec::new();
    sim.em_step(&mut state, &[0.0; 7], &mut scratch).unwrap();
    assert!(state.values().iter().all(|&v| (v - 2.5).abs() < 1e-15));
}

#[test]
fn split_step_with_zero_q_is_pure_drift() {
    let mut base = spec_1d(9, Nonlinearity::zero(), InitialProfile::delta(1), SolverConfig::new(0.05, 0.05));
    let sim_em = Simulator::new(&base).unwrap();
    let mut a = sim_em.state(&base.initial);
    let mut scratch = Vec::new();
    sim_em.em_step(&mut a, &[0.7; 9], &mut scratch).unwrap();
    base.solver.scheme = Scheme::SplitExactLinear;
    let sim_split = Simulator::new(&base).unwrap();
    let mut b = sim_split.state(&base.initial);
    sim_split.split_step_linear(&mut b, &[0.7; 9], &mut scratch).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn split_step_rejects_nonlinear_sigma() {
    let spec = spec_1d(9, Nonlinearity::tanh(1.0), InitialProfile::delta(1), SolverConfig::new(0.01, 0.1).with_scheme(Scheme::SplitExactLinear));
    assert!(matches!(Simulator::new(&spec), Err(crate::SheError::InvalidArgument(_))));
}

#[test]
fn driftless_linear_sde_is_a_martingale() {
    for scheme in [Scheme::Euler, Scheme::SplitExactLinear] {
        let spec = SimulationSpec {
            kernel: frozen_walk(),
            lattice: LatticeBox::periodic(vec![1]).unwrap(),
            sigma: Nonlinearity::linear(0.8),
            initial: InitialProfile::Constant(1.5),
            solver: SolverConfig::new(0.01, 1.0)
                .with_scheme(scheme)
                .with_observables(vec![Observable::Site(vec![0])]),
            noise: NoisePlan::new(11),
        };
        let runs = simulate_replicas(&spec, 10_000).unwrap();
        let finals: Vec<f64> = runs.iter().map(|t| t.rows[0][0]).collect();
        let est = mean_se(&finals);
        assert!((est.mean - 1.5).abs() < 3.0 * est.se, "{scheme:?}: {} ± {}", est.mean, est.se);
    }
}

#[test]
fn split_scheme_preserves_nonnegativity() {
    let mut solver = SolverConfig::new(0.02, 2.0).with_scheme(Scheme::SplitExactLinear);
    solver.monitor_positivity = true;
    let spec = spec_1d(15, Nonlinearity::linear(2.0), InitialProfile::delta(1), solver);
    for r in 0..20 {
        let t = simulate(&spec, r).unwrap();
        assert_eq!(t.diagnostics.max_negative_fraction, 0.0);
    }
}

#[test]
fn euler_can_go_negative_and_is_reported() {
    let mut solver = SolverConfig::new(0.004, 1.0);
    solver.monitor_positivity = true;
    let spec = spec_1d(33, Nonlinearity::linear(5.0), InitialProfile::Constant(1.0), solver);
    let seen = (0..10).any(|r| simulate(&spec, r).unwrap().diagnostics.max_negative_fraction > 0.0);
    assert!(seen);
}

#[test]
fn noiseless_run_follows_the_transition_kernel() {
    let dt = 1e-3;
    let spec = spec_1d(
        65,
        Nonlinearity::zero(),
        InitialProfile::delta(1),
        SolverConfig::new(dt, 1.0).with_snapshots(vec![1.0]),
    );
    let t = simulate(&spec, 0).unwrap();
    let snap = t.snapshot(1.0).unwrap();
    let table = spec.kernel.transition_table(1.0, 1e-14).unwrap();
    let err = (0..65)
        .map(|s| {
            let x = spec.lattice.point(s);
            (snap.values[s] - table.get(&[-x[0]])).abs()
        })
        .fold(0.0, f64::max);
    assert!(err < 5.0 * dt, "sup error {err}");
}

#[test]
fn zero_initial_data_stays_zero() {
    for scheme in [Scheme::Euler, Scheme::SplitExactLinear] {
        let spec = spec_1d(
            11,
            Nonlinearity::linear(1.0),
            InitialProfile::Constant(0.0),
            SolverConfig::new(0.01, 0.5)
                .with_scheme(scheme)
                .with_snapshots(vec![0.25, 0.5]),
        );
        let t = simulate(&spec, 3).unwrap();
        assert!(t.snapshots.iter().all(|s| s.values.iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn noiseless_mass_is_conserved() {
    let spec = SimulationSpec {
        kernel: WalkKernel::simple(2),
        lattice: LatticeBox::periodic(vec![6, 7]).unwrap(),
        sigma: Nonlinearity::zero(),
        initial: InitialProfile::Table {
            entries: vec![(vec![0, 0], 3.0), (vec![1, -2], -1.0), (vec![2, 2], 0.5)],
            background: 0.1,
        },
        solver: SolverConfig::new(0.05, 3.0)
            .recording_every(0.05)
            .with_observables(vec![Observable::Mass]),
        noise: NoisePlan::new(1),
    };
    let t = simulate(&spec, 0).unwrap();
    let m0 = t.rows[0][0];
    for row in &t.rows {
        assert!((row[0] - m0).abs() < 1e-12 * m0.abs().max(1.0));
    }
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let spec = spec_1d(
        17,
        Nonlinearity::tanh(1.2),
        InitialProfile::Constant(1.0),
        SolverConfig::new(0.01, 0.5)
            .recording_every(0.1)
            .with_observables(vec![Observable::L1, Observable::Site(vec![3]), Observable::Brownian(vec![3])]),
    );
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_replicas(&spec, 12).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a, b);
    // recording extra observables does not perturb the field
    let mut wider = spec.clone();
    wider.solver.observables.insert(0, Observable::Sup);
    let c = simulate(&wider, 5).unwrap();
    let col = c.column(&Observable::Site(vec![3])).unwrap();
    let base_col = a[5].column(&Observable::Site(vec![3])).unwrap();
    for (r1, r2) in c.rows.iter().zip(&a[5].rows) {
        assert_eq!(r1[col].to_bits(), r2[base_col].to_bits());
    }
}

#[test]
fn brownian_observable_sums_the_increments() {
    let dt = 0.01;
    let spec = spec_1d(
        9,
        Nonlinearity::linear(1.0),
        InitialProfile::Constant(1.0),
        SolverConfig::new(dt, 0.05).with_observables(vec![Observable::Brownian(vec![2])]),
    );
    let t = simulate(&spec, 4).unwrap();
    let site = spec.lattice.site(&[2]).unwrap();
    let direct: f64 = (0..5).map(|n| spec.noise.increment(4, site, n, dt)).sum();
    assert!((t.rows[0][0] - direct).abs() < 1e-15);
}

#[test]
fn coupled_runs_with_zero_lower_field() {
    let spec = spec_1d(13, Nonlinearity::tanh(2.0), InitialProfile::delta(1), SolverConfig::new(0.01, 1.0).with_snapshots(vec![1.0]));
    let run = coupled_simulate(&spec, &InitialProfile::Constant(1.0), &InitialProfile::Constant(0.0), 0).unwrap();
    assert!(run.v.snapshots[0].values.iter().all(|&v| v == 0.0));
    assert_eq!(run.worst_violation, 0.0);
}

#[test]
fn split_scheme_keeps_scaled_data_ordered() {
    let spec = spec_1d(
        21,
        Nonlinearity::linear(1.5),
        InitialProfile::delta(1),
        SolverConfig::new(0.01, 2.0).with_scheme(Scheme::SplitExactLinear),
    );
    let v0 = InitialProfile::Table {
        entries: vec![(vec![0], 1.0), (vec![3], 0.5)],
        background: 0.2,
    };
    let u0 = v0.scaled(2.0);
    for r in 0..10 {
        let run = coupled_simulate(&spec, &u0, &v0, r).unwrap();
        assert_eq!(run.worst_violation, 0.0);
    }
}

#[test]
fn coupled_run_checks_initial_order() {
    let spec = spec_1d(9, Nonlinearity::linear(1.0), InitialProfile::delta(1), SolverConfig::new(0.01, 0.1));
    assert!(coupled_simulate(&spec, &InitialProfile::Constant(0.0), &InitialProfile::Constant(1.0), 0).is_err());
}

#[test]
fn overflow_aborts_with_site_and_step() {
    let mut solver = SolverConfig::new(0.1, 1.0);
    solver.max_dt_lip2 = 10.0;
    let spec = spec_1d(9, Nonlinearity::linear(3.0), InitialProfile::Constant(1e308), solver);
    assert!(matches!(simulate(&spec, 0), Err(crate::SheError::NonFinite { .. })));
}

#[test]
fn solver_config_validation() {
    let bad_dt = spec_1d(9, Nonlinearity::zero(), InitialProfile::delta(1), SolverConfig::new(1.5, 3.0));
    assert!(Simulator::new(&bad_dt).is_err());
    let stiff = spec_1d(9, Nonlinearity::linear(10.0), InitialProfile::delta(1), SolverConfig::new(0.01, 1.0));
    assert!(Simulator::new(&stiff).is_err());
    let off_grid = spec_1d(9, Nonlinearity::zero(), InitialProfile::delta(1), SolverConfig::new(0.1, 1.0).with_record_times(vec![0.25]));
    assert!(Simulator::new(&off_grid).is_err());
}

#[test]
fn wrap_warning_is_attached() {
    let spec = spec_1d(9, Nonlinearity::zero(), InitialProfile::delta(1), SolverConfig::new(0.1, 30.0));
    let t = simulate(&spec, 0).unwrap();
    assert_eq!(t.diagnostics.warnings.len(), 1);
}

#[test]
fn frozen_boundary_reads_the_exterior() {
    let lattice = LatticeBox::frozen(vec![5]).unwrap();
    let spec = SimulationSpec {
        kernel: WalkKernel::simple(1),
        lattice,
        sigma: Nonlinearity::zero(),
        initial: InitialProfile::Constant(1.0),
        solver: SolverConfig::new(0.1, 1.0).with_snapshots(vec![1.0]),
        noise: NoisePlan::new(0),
    };
    // constant data with the same exterior is stationary
    let t = simulate(&spec, 0).unwrap();
    assert!(t.snapshots[0].values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
}

#[test]
fn picard_without_noise_is_the_semigroup() {
    let spec = spec_1d(9, Nonlinearity::zero(), InitialProfile::delta(1), SolverConfig::new(1.0 / 32.0, 0.5));
    let sol = picard_mild_solve(&spec, 0, 1e-13, 50).unwrap();
    let last = sol.values.last().unwrap();
    let p = periodized_kernel(&spec.kernel, &spec.lattice, 0.5, 1e-15).unwrap();
    for s in 0..9 {
        let x = spec.lattice.point(s);
        let mirror = spec.lattice.wrapped_site(&[-x[0]]);
        assert!((last[s] - p[mirror]).abs() < 1e-14);
    }
    // one sweep produces the answer, a second confirms it
    assert_eq!(sol.iterations, 2);
}

#[test]
fn first_picard_iterate_is_explicit() {
    // with max_iter = 1 the iteration fails to converge, so rebuild u^(1) by hand
    let dt = 0.125;
    let spec = spec_1d(9, Nonlinearity::linear(0.7), InitialProfile::delta(1), SolverConfig::new(dt, 0.25));
    let err = picard_mild_solve(&spec, 2, 1e-300, 1).unwrap_err();
    assert!(matches!(err, crate::SheError::NumericFailure { .. }));

    let sol = picard_mild_solve(&spec, 2, 1e-14, 100).unwrap();
    // u(t_1) = P_{dt} u0 + P_{dt} (sigma(u0) dB_0), exact after one step
    let p = periodized_kernel(&spec.kernel, &spec.lattice, dt, 1e-15).unwrap();
    for x in 0..9 {
        let mut expect = 0.0;
        for y in 0..9 {
            let px = spec.lattice.point(x)[0];
            let py = spec.lattice.point(y)[0];
            let k = p[spec.lattice.wrapped_site(&[py - px])];
            let u0 = spec.initial.value_at(&[py]);
            expect += k * (u0 + 0.7 * u0 * spec.noise.increment(2, y, 0, dt));
        }
        assert!((sol.values[1][x] - expect).abs() < 1e-14);
    }
}

#[test]
fn picard_and_euler_agree_as_dt_shrinks() {
    let diff = |dt: f64| {
        let spec = spec_1d(
            9,
            Nonlinearity::linear(1.0),
            InitialProfile::delta(1),
            SolverConfig::new(dt, 0.5).with_snapshots(vec![0.5]),
        );
        let mut total = 0.0;
        for r in 0..8 {
            let sol = picard_mild_solve(&spec, r, 1e-13, 400).unwrap();
            let em = simulate(&spec, r).unwrap();
            let d = sol
                .values
                .last()
                .unwrap()
                .iter()
                .zip(&em.snapshots[0].values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            total += d;
        }
        total / 8.0
    };
    let coarse = diff(1.0 / 64.0);
    let fine = diff(1.0 / 256.0);
    assert!(fine < coarse, "{fine} !< {coarse}");
    assert!(fine < 0.05);
}

proptest! {
    #[test]
    fn generator_is_linear_and_conservative(
        f in proptest::collection::vec(-5.0f64..5.0, 12),
        g in proptest::collection::vec(-5.0f64..5.0, 12),
        a in -3.0f64..3.0,
    ) {
        let lattice = LatticeBox::periodic(vec![3, 4]).unwrap();
        let kernel = WalkKernel::new(JumpDistribution::new(2, vec![
            Jump { vec: vec![1, 0], p: 0.5 },
            Jump { vec: vec![0, -1], p: 0.3 },
            Jump { vec: vec![0, 0], p: 0.2 },
        ]).unwrap());
        let lf = generator_apply(&lattice, &kernel, &f).unwrap();
        let lg = generator_apply(&lattice, &kernel, &g).unwrap();
        let h: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + y).collect();
        let lh = generator_apply(&lattice, &kernel, &h).unwrap();
        for i in 0..12 {
            prop_assert!((lh[i] - (a * lf[i] + lg[i])).abs() < 1e-12);
        }
        prop_assert!(lf.iter().sum::<f64>().abs() < 1e-12);
    }
}
