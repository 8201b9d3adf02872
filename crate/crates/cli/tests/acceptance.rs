//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines are always shown.
//!
//! Criteria listed in `KNOWN_DEVIATIONS` are expected to fail for a reason
//! analysed in the printed notes; the test asserts that they still fail in
//! the documented way (so a silent change is noticed) and that every other
//! criterion passes.

use she_cli::verify::{run_criterion, CriterionReport, Suite, SUITE_SEED};

/// The diagonal lower bound for k = 3 exceeds the true third moment under
/// unit-variance Ito noise (see the notes printed with criterion 5).
const KNOWN_DEVIATIONS: &[u8] = &[5];

fn report(r: &CriterionReport) {
    println!("{}", r.line());
    for m in &r.metrics {
        let tag = match m.ok {
            Some(true) => "ok  ",
            Some(false) => "FAIL",
            None => "info",
        };
        println!("    {tag} {} = {} {}", m.name, m.value, m.bound);
    }
    for n in &r.notes {
        println!("    note: {n}");
    }
}

fn main() {
    let mut unexpected = Vec::new();
    for id in Suite::Acceptance.ids() {
        let r = run_criterion(Suite::Acceptance, id, SUITE_SEED).unwrap_or_else(|e| panic!("criterion {id} errored: {e}"));
        report(&r);
        let known = KNOWN_DEVIATIONS.contains(&id);
        if known {
            // only the k = 3 comparison with the stated bound may fail
            let failing: Vec<&str> = r.failures().iter().map(|m| m.name.as_str()).collect();
            if r.passed() {
                println!("    note: known deviation {id} passed this run");
            } else if failing.iter().any(|n| !n.contains("E u_1^3")) {
                unexpected.push(format!("{id}: unexpected failures {failing:?}"));
            }
            // the Ito-normalized bound must hold for every k
            for m in r.metrics.iter().filter(|m| m.name.contains("minus Ito-normalized bound")) {
                if m.value < 0.0 {
                    unexpected.push(format!("{id}: {} = {}", m.name, m.value));
                }
            }
        } else if !r.passed() {
            unexpected.push(format!("{id}: {}", r.line()));
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: all criteria as expected (known deviations: {KNOWN_DEVIATIONS:?})");
    } else {
        eprintln!("acceptance failures: {unexpected:#?}");
        std::process::exit(1);
    }
}
