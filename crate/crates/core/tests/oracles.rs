//! Cross-module checks: each quantity against an oracle assembled here
//! from a different part of the crate.

use she_core::lattice::InitialProfile;
use she_core::moments::{fk_pam_moment, pam_second_moment_renewal};
use she_core::renewal::critical_beta_with;
use she_core::walk_kernel::WalkKernel;

/// Composite Simpson on [0, T] plus an exponential tail bound, built from the
/// lattice-sum overlap rather than the spectral route.
fn upsilon_by_time_integral(k: &WalkKernel, beta: f64) -> f64 {
    let t_max = 40.0 / beta;
    let n = 4000;
    let h = t_max / n as f64;
    let f = |t: f64| (-beta * t).exp() * k.pbar_lattice_sum(t, 1e-14).unwrap().value;
    let mut s = f(0.0) + f(t_max);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn upsilon_matches_time_integral_of_overlap() {
    let k = WalkKernel::simple(1);
    for beta in [1.0, 2.0] {
        let spectral = k.upsilon(beta, 1e-11).unwrap().value;
        let direct = upsilon_by_time_integral(&k, beta);
        assert!((spectral - direct).abs() < 1e-7, "beta={beta}: {spectral} vs {direct}");
    }
    // closed form in d = 1: Upsilon(beta) = 1 / sqrt(beta (beta + 4))
    let v = k.upsilon(1.0, 1e-11).unwrap().value;
    assert!((v - 1.0 / 5f64.sqrt()).abs() < 1e-9);
}

#[test]
fn critical_beta_against_closed_form_transform() {
    // ell^2 / sqrt(b (b + 4)) = 1 has root b = -2 + sqrt(4 + ell^4)
    for ell in [1.5, 2.0, 3.0] {
        let root = critical_beta_with(ell, |b| Ok(1.0 / (b * (b + 4.0)).sqrt())).unwrap();
        let exact = -2.0 + (4.0 + ell.powi(4)).sqrt();
        assert!((root.beta - exact).abs() < 1e-6 * exact, "ell={ell}");
    }
}

#[test]
fn site_second_moment_from_renewal_and_feynman_kac() {
    // With u0 = delta the summed second moment at t splits over x; the
    // Feynman-Kac site estimates summed over a window must match it.
    let k = WalkKernel::simple(1);
    let q = 0.5;
    let t = 1.0;
    let curve = pam_second_moment_renewal(&k, q, &InitialProfile::delta(1), 1.0, 256, 1e-5).unwrap();
    let oracle = curve.at(t).unwrap();
    let mut total = 0.0;
    let mut var = 0.0;
    for x in -8..=8 {
        let e = fk_pam_moment(&k, q, &InitialProfile::delta(1), 2, t, &[x], 20_000, 5).unwrap();
        total += e.estimate;
        var += e.se * e.se;
    }
    let z = (total - oracle).abs() / var.sqrt();
    assert!(z < 4.0, "sum {total} vs renewal {oracle}, z = {z}");
}

#[test]
fn isolated_site_moments_are_lognormal() {
    // a walk that never moves: every path stays put, so
    // E u^k = exp(k (k - 1) q^2 t / 2) exactly, with zero variance
    use she_core::walk_kernel::{Jump, JumpDistribution};
    let frozen = WalkKernel::new(JumpDistribution::new(1, vec![Jump { vec: vec![0], p: 1.0 }]).unwrap());
    let q = 0.7;
    for k in 2..=4u32 {
        let e = fk_pam_moment(&frozen, q, &InitialProfile::Constant(1.0), k, 1.5, &[0], 16, 1).unwrap();
        let exact = (f64::from(k * (k - 1)) * q * q * 1.5 / 2.0).exp();
        assert!((e.estimate - exact).abs() < 1e-9 * exact, "k={k}");
        assert!(e.se <= 1e-9 * exact, "se {}", e.se);
    }
}
