//! Subcommand definitions and their drivers.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use she_core::experiments::{
    clt_increment_test, dissipation_experiment, regime_classify, rn_ratio_test, ScaleFunction,
};
use she_core::lattice::{simulate_replicas, InitialProfile, SimulationSpec};
use she_core::moments::{
    check_k2_bounds, field_moments, fit_lyapunov, fk_pam_moments, jensen_check, pam_second_moment_renewal,
    MomentEstimate, MomentTarget,
};
use she_core::renewal::{auto_beta, picard_solve, RenewalProblem};
use she_core::walk_kernel::{JumpDistribution, WalkKernel};

use crate::error::{CliError, CliResult};
use crate::manifest::{load, MethodSpec, ResolvedRun, RunManifest, TargetSpec};
use crate::output::{compare_dirs, fmt_f64, sha256_hex, Comparison, Stamp, Table};
use crate::verify::{run_suite, suite_hash, Suite, SUITE_SEED};

pub const SEED_ENV: &str = "SHE_SEED";

#[derive(Debug, Parser)]
#[command(name = "she", version, about = "Semi-discrete stochastic heat equation toolkit")]
pub struct Cli {
    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transition probabilities, replica overlap or its Laplace transform as CSV.
    Kernel(KernelArgs),
    /// Simulate replicas and write trajectories (and snapshots).
    Simulate(RunArgs),
    /// Moment estimates from the `experiments.moments` block.
    Moments(RunArgs),
    /// Lyapunov exponent fits from the `experiments.lyapunov` block.
    Lyapunov(RunArgs),
    /// Solve a renewal equation given as CSV grids or a built-in.
    Renewal(RenewalArgs),
    /// Scaled-increment normality test from the `experiments.clt` block.
    CltTest(RunArgs),
    /// Increment-ratio test from the `experiments.rn` block.
    RnTest(RunArgs),
    /// Norm trajectories and decay fit from the `experiments.dissipation` block.
    Dissipation(RunArgs),
    /// Classify the (sigma, kernel) pair by its overlap constants.
    Classify(RunArgs),
    /// Run the acceptance or smoke suite, or compare two output directories.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Path to the JSON run manifest.
    pub manifest: PathBuf,
    /// Output directory (overrides the manifest's `output_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    /// Simple-walk dimension, ignored with --kernel-file.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Jump-law JSON: {"dim": d, "jumps": [{"vec": [..], "p": ..}, ..]}.
    #[arg(long)]
    pub kernel_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    /// Replica overlap on [0, tmax].
    #[arg(long, group = "what")]
    pub pbar: bool,
    /// Laplace transform of the overlap on [0, bmax].
    #[arg(long, group = "what")]
    pub upsilon: bool,
    /// Transition table p_t(x) at this time.
    #[arg(long, group = "what")]
    pub table: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub tmax: f64,
    #[arg(long, default_value_t = 5.0)]
    pub bmax: f64,
    #[arg(long, default_value_t = 51)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Builtin {
    /// E||u_t||^2 for sigma(u) = q u from a point mass, on the simple walk.
    Pam,
}

#[derive(Debug, Args)]
pub struct RenewalArgs {
    /// CSV grid `t,value` for the forcing g (uniform, starting at 0).
    #[arg(long, requires = "h", conflicts_with = "builtin")]
    pub g: Option<PathBuf>,
    /// CSV grid `t,value` for the kernel h, on the same grid as g.
    #[arg(long, requires = "g")]
    pub h: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub builtin: Option<Builtin>,
    #[arg(long, default_value_t = 1.0)]
    pub q: f64,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 256)]
    pub intervals: usize,
    /// Weight exponent; chosen automatically when omitted.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SuiteArg {
    Acceptance,
    Smoke,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "acceptance")]
    pub suite: SuiteArg,
    /// Directory for per-criterion CSVs.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run only these criteria.
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<u8>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Byte-compare the CSVs of two output directories instead of running.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub compare: Option<Vec<PathBuf>>,
}

/// Runs a parsed command line, writing human-readable progress to `out`.
pub fn run(cli: Cli, out: &mut (dyn Write + Send)) -> CliResult<()> {
    match cli.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(cli.command, out))
        }
        None => dispatch(cli.command, out),
    }
}

fn dispatch(command: Command, out: &mut (dyn Write + Send)) -> CliResult<()> {
    match command {
        Command::Kernel(a) => kernel(&a, out),
        Command::Simulate(a) => with_run("simulate", &a, out, &[], simulate_cmd),
        Command::Moments(a) => {
            let times = load(&a.manifest)?.0.experiments.moments.map(|m| m.times).unwrap_or_default();
            with_run("moments", &a, out, &times, moments_cmd)
        }
        Command::Lyapunov(a) => {
            let times = load(&a.manifest)?.0.experiments.lyapunov.map(|m| m.times).unwrap_or_default();
            with_run("lyapunov", &a, out, &times, lyapunov_cmd)
        }
        Command::Renewal(a) => renewal(&a, out),
        Command::CltTest(a) => with_run("clt-test", &a, out, &[], clt_cmd),
        Command::RnTest(a) => with_run("rn-test", &a, out, &[], rn_cmd),
        Command::Dissipation(a) => with_run("dissipation", &a, out, &[], dissipation_cmd),
        Command::Classify(a) => with_run("classify", &a, out, &[], classify_cmd),
        Command::Verify(a) => verify(&a, out),
    }
}

/// `(seed, source)` after applying the environment override.
pub fn seed_override(manifest_seed: Option<u64>) -> CliResult<(u64, String)> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(|v| (v, SEED_ENV.to_string()))
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(match manifest_seed {
            Some(v) => (v, "manifest".into()),
            None => (SUITE_SEED, "default".into()),
        }),
    }
}

struct Ctx<'a> {
    run: ResolvedRun,
    dir: PathBuf,
    out: &'a mut (dyn Write + Send),
}

impl Ctx<'_> {
    fn manifest(&self) -> &RunManifest {
        &self.run.manifest
    }

    fn spec(&self) -> &SimulationSpec {
        &self.run.spec
    }

    fn write_csv(&mut self, name: &str, table: &Table, comments: &[String]) -> CliResult<()> {
        let path = self.dir.join(name);
        table.write(&path, &self.run.hash, comments)?;
        writeln!(self.out, "wrote {}", path.display())?;
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            manifest_hash: &'a str,
            report: &'a T,
        }
        let path = self.dir.join(name);
        let body = serde_json::to_string_pretty(&Wrapped {
            manifest_hash: &self.run.hash,
            report: value,
        })?;
        std::fs::write(&path, body + "\n")?;
        writeln!(self.out, "wrote {}", path.display())?;
        Ok(())
    }
}

fn with_run(
    command: &str,
    args: &RunArgs,
    out: &mut (dyn Write + Send),
    extra_snapshots: &[f64],
    body: fn(&mut Ctx) -> CliResult<()>,
) -> CliResult<()> {
    let (mut manifest, base) = load(&args.manifest)?;
    let (seed, source) = seed_override(Some(manifest.seed))?;
    manifest.seed = seed;
    let run = manifest.resolve(&base, extra_snapshots)?;
    let dir = args.out.clone().unwrap_or_else(|| manifest.output_dir.clone());
    std::fs::create_dir_all(&dir)?;
    Stamp {
        command: command.into(),
        manifest_hash: run.hash.clone(),
        seed,
        seed_source: source,
        version: env!("CARGO_PKG_VERSION").into(),
    }
    .write(&dir)?;
    std::fs::write(dir.join("resolved_manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let mut ctx = Ctx { run, dir, out };
    body(&mut ctx)
}

fn coords(x: &[i64]) -> String {
    x.iter().map(i64::to_string).collect::<Vec<_>>().join(";")
}

fn simulate_cmd(ctx: &mut Ctx) -> CliResult<()> {
    let trajectories = simulate_replicas(ctx.spec(), ctx.manifest().replicas)?;
    let Some(first) = trajectories.first() else {
        return Ok(());
    };
    let mut header = vec!["replica".to_string(), "t".to_string()];
    header.extend(first.columns.iter().cloned());
    let mut table = Table::new(header);
    let mut snaps = Table::new(["replica", "t", "x", "value"]);
    let mut warnings = Vec::new();
    for tr in &trajectories {
        for (t, row) in tr.times.iter().zip(&tr.rows) {
            let mut r = vec![tr.replica.to_string(), fmt_f64(*t)];
            r.extend(row.iter().map(|v| fmt_f64(*v)));
            table.push(r);
        }
        for s in &tr.snapshots {
            for (i, v) in s.values.iter().enumerate() {
                let x = ctx.spec().lattice.point(i);
                snaps.push(vec![tr.replica.to_string(), fmt_f64(s.time), coords(&x), fmt_f64(*v)]);
            }
        }
        warnings.extend(tr.diagnostics.warnings.iter().map(|w| format!("warning replica {}: {w}", tr.replica)));
    }
    ctx.write_csv("trajectories.csv", &table, &warnings)?;
    if !snaps.rows.is_empty() {
        ctx.write_csv("snapshots.csv", &snaps, &[])?;
    }
    Ok(())
}

fn linear_q(spec: &SimulationSpec, what: &str) -> CliResult<f64> {
    spec.sigma
        .linear_coefficient()
        .ok_or_else(|| CliError::Usage(format!("{what} needs sigma of kind linear")))
}

fn moment_rows(table: &mut Table, est: &[MomentEstimate]) {
    for e in est {
        table.push(vec![
            e.method.tag().into(),
            e.k.to_string(),
            fmt_f64(e.t),
            fmt_f64(e.estimate),
            fmt_f64(e.se),
            e.replicas.to_string(),
        ]);
    }
}

fn moments_table() -> Table {
    Table::new(["method", "k", "t", "estimate", "se", "replicas"])
}

fn estimate(ctx: &Ctx, method: MethodSpec, ks: &[u32], times: &[f64], target: &MomentTarget) -> CliResult<Vec<MomentEstimate>> {
    let spec = ctx.spec();
    let m = ctx.manifest();
    Ok(match method {
        MethodSpec::FieldMc => field_moments(spec, ks, times, target, m.replicas)?,
        MethodSpec::FeynmanKac => {
            let q = linear_q(spec, "feynman-kac")?;
            fk_pam_moments(&spec.kernel, q, &spec.initial, ks, times, target, m.replicas, m.seed)?
        }
        MethodSpec::Renewal => {
            let block = m.experiments.moments.as_ref();
            if ks != [2] || *target != MomentTarget::Sum {
                return Err(CliError::Usage("renewal gives only k = 2 with target sum".into()));
            }
            let q = linear_q(spec, "renewal")?;
            let horizon = times.iter().cloned().fold(0.0, f64::max);
            let curve = pam_second_moment_renewal(
                &spec.kernel,
                q,
                &spec.initial,
                horizon,
                block.map_or(512, |b| b.renewal_intervals),
                block.map_or(1e-6, |b| b.renewal_tol),
            )?;
            times
                .iter()
                .map(|&t| {
                    curve
                        .estimate(t)
                        .ok_or_else(|| CliError::Usage(format!("t = {t} is not on the renewal grid")))
                })
                .collect::<CliResult<_>>()?
        }
    })
}

fn target_of(spec: &TargetSpec) -> MomentTarget {
    match spec {
        TargetSpec::Sum => MomentTarget::Sum,
        TargetSpec::Site(x) => MomentTarget::Site(x.clone()),
    }
}

fn moments_cmd(ctx: &mut Ctx) -> CliResult<()> {
    let block = ctx
        .manifest()
        .experiments
        .moments
        .clone()
        .ok_or_else(|| CliError::Usage("manifest has no experiments.moments block".into()))?;
    let target = target_of(&block.target);
    let mut table = moments_table();
    for &method in &block.methods {
        let ks: Vec<u32> = if method == MethodSpec::Renewal { vec![2] } else { block.ks.clone() };
        moment_rows(&mut table, &estimate(ctx, method, &ks, &block.times, &target)?);
    }
    ctx.write_csv("moments.csv", &table, &[format!("target={:?}", block.target)])
}

fn lyapunov_cmd(ctx: &mut Ctx) -> CliResult<()> {
    let block = ctx
        .manifest()
        .experiments
        .lyapunov
        .clone()
        .ok_or_else(|| CliError::Usage("manifest has no experiments.lyapunov block".into()))?;
    let site = if block.site.is_empty() {
        vec![0; ctx.spec().kernel.dim()]
    } else {
        block.site.clone()
    };
    let est = estimate(ctx, block.method, &block.ks, &block.times, &MomentTarget::Site(site))?;
    let mut mt = moments_table();
    moment_rows(&mut mt, &est);
    ctx.write_csv("moments.csv", &mt, &[])?;

    let mut fits = Vec::new();
    for &k in &block.ks {
        let series: Vec<&MomentEstimate> = block
            .times
            .iter()
            .map(|&t| est.iter().find(|e| e.k == k && e.t == t).expect("estimated"))
            .collect();
        let y: Vec<f64> = series.iter().map(|e| e.log_estimate()).collect();
        let se: Vec<f64> = series.iter().map(|e| e.log_se()).collect();
        fits.push((k, fit_lyapunov(&block.times, &y, Some(&se), block.window, ctx.manifest().seed ^ k as u64)?));
    }
    let sigma = &ctx.spec().sigma;
    let checks = check_k2_bounds(&fits, sigma.lip(), sigma.ell(), block.eps)?;
    let mut t = Table::new([
        "k", "gamma", "slope_se", "ci_lo", "ci_hi", "window_lo", "window_hi", "points", "upper", "lower", "k_threshold", "verdict",
    ]);
    for ((_, f), c) in fits.iter().zip(&checks) {
        t.push(vec![
            c.k.to_string(),
            fmt_f64(f.slope),
            fmt_f64(f.slope_se),
            fmt_f64(f.ci.0),
            fmt_f64(f.ci.1),
            fmt_f64(f.window.0),
            fmt_f64(f.window.1),
            f.points.to_string(),
            fmt_f64(c.upper),
            fmt_f64(c.lower),
            fmt_f64(c.threshold),
            format!("{:?}", c.verdict),
        ]);
    }
    let t_last = *block.times.last().expect("validated nonempty");
    let at_last: Vec<MomentEstimate> = est.iter().filter(|e| e.t == t_last).cloned().collect();
    let jensen = jensen_check(&at_last, 3.0)?;
    let comments = vec![format!("eps={}", block.eps), format!("jensen_nondecreasing_at_t={t_last}:{}", jensen.nondecreasing)];
    ctx.write_csv("lyapunov.csv", &t, &comments)
}

fn clt_cmd(ctx: &mut Ctx) -> CliResult<()> {
    let block = ctx
        .manifest()
        .experiments
        .clt
        .clone()
        .ok_or_else(|| CliError::Usage("manifest has no experiments.clt block".into()))?;
    if !ctx.spec().initial.is_nonnegative() {
        return Err(CliError::Usage("scaled-increment tests need nonnegative initial data".into()));
    }
    let scale = ScaleFunction::new(ctx.spec().sigma.clone(), block.z0)?;
    let r = clt_increment_test(ctx.spec(), &scale, block.t, &block.taus, &block.points, ctx.manifest().replicas)?;
    let mut t = Table::new(["tau", "samples", "ks_pooled", "max_abs_correlation", "degenerate"]);
    for s in &r.per_tau {
        t.push(vec![
            fmt_f64(s.tau),
            s.samples.to_string(),
            fmt_f64(s.ks_pooled),
            fmt_f64(s.max_abs_correlation),
            s.degenerate.to_string(),
        ]);
    }
    let comments = vec![
        format!("discarded={}", r.discarded),
        format!("discard_fraction={}", fmt_f64(r.discard_fraction)),
        format!("ks_threshold={}", fmt_f64(r.ks_threshold)),
        format!("verdict={:?}", r.verdict),
    ];
    ctx.write_csv("clt.csv", &t, &comments)?;
    ctx.write_json("clt.json", &r)
}

fn rn_cmd(ctx: &mut Ctx) -> CliResult<()> {
    let block = ctx
        .manifest()
        .experiments
        .rn
        .clone()
        .ok_or_else(|| CliError::Usage("manifest has no experiments.rn block".into()))?;
    let r = rn_ratio_test(ctx.spec(), block.t, &block.taus, &block.x, ctx.manifest().replicas, block.eta)?;
    let mut t = Table::new(["tau", "exceedance", "se", "used", "discarded"]);
    for s in &r.per_tau {
        t.push(vec![
            fmt_f64(s.tau),
            fmt_f64(s.exceedance),
            fmt_f64(s.se),
            s.used.to_string(),
            s.discarded.to_string(),
        ]);
    }
    let comments = vec![
        format!("eta={}", fmt_f64(r.eta)),
        format!("strictly_decreasing={}", r.strictly_decreasing()),
    ];
    ctx.write_csv("rn.csv", &t, &comments)?;
    ctx.write_json("rn.json", &r)
}

fn dissipation_cmd(ctx: &mut Ctx) -> CliResult<()> {
    let block = ctx
        .manifest()
        .experiments
        .dissipation
        .clone()
        .ok_or_else(|| CliError::Usage("manifest has no experiments.dissipation block".into()))?;
    let r = dissipation_experiment(ctx.spec(), ctx.manifest().replicas, block.fit_window)?;
    let n = &r.norms;
    let mut t = Table::new([
        "t", "l1", "l1_se", "mass", "mass_se", "l2sq", "l2sq_se", "sup", "sup_se", "negfrac", "martingale_z",
    ]);
    for i in 0..n.times.len() {
        t.push(
            [
                n.times[i],
                n.l1[i],
                n.l1_se[i],
                n.mass[i],
                n.mass_se[i],
                n.l2_squared[i],
                n.l2_squared_se[i],
                n.sup[i],
                n.sup_se[i],
                n.negative_fraction[i],
                r.martingale_z[i],
            ]
            .iter()
            .map(|v| fmt_f64(*v))
            .collect(),
        );
    }
    let mut comments = vec![
        format!("fit_window={}..{}", fmt_f64(r.fit_window.0), fmt_f64(r.fit_window.1)),
        format!("fit_points={}", r.fit_points),
        format!("decay_slope={}", fmt_f64(r.decay_slope)),
        format!("decay_slope_se={}", fmt_f64(r.decay_slope_se)),
        format!("reference_slope={}", fmt_f64(r.reference_slope)),
        format!("chain_violations={}", r.chain_violations),
    ];
    comments.extend(r.warnings.iter().map(|w| format!("warning: {w}")));
    ctx.write_csv("norms.csv", &t, &comments)?;
    ctx.write_json("dissipation.json", &r)
}

fn classify_cmd(ctx: &mut Ctx) -> CliResult<()> {
    let s = &ctx.spec().sigma;
    let r = regime_classify(s.lip(), s.ell(), &ctx.spec().kernel)?;
    let mut t = Table::new(["regime", "upsilon_zero", "lip_strength", "ell_strength", "critical_beta"]);
    t.push(vec![
        serde_json::to_value(r.regime)?.as_str().unwrap_or_default().to_string(),
        fmt_f64(r.upsilon_zero),
        fmt_f64(r.lip_strength),
        fmt_f64(r.ell_strength),
        r.critical_beta.map(fmt_f64).unwrap_or_default(),
    ]);
    ctx.write_csv("classify.csv", &t, &[])?;
    ctx.write_json("classify.json", &r)
}

fn emit(path: Option<&Path>, bytes: &[u8], out: &mut (dyn Write + Send)) -> CliResult<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, bytes)?;
            writeln!(out, "wrote {}", p.display())?;
        }
        None => out.write_all(bytes)?,
    }
    Ok(())
}

fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lo];
    }
    (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
}

fn kernel(a: &KernelArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let law = match &a.kernel_file {
        Some(p) => JumpDistribution::from_json(&std::fs::read_to_string(p)?)?,
        None => {
            if !(1..=3).contains(&a.dim) {
                return Err(CliError::Usage(format!("--dim {} must be 1, 2 or 3", a.dim)));
            }
            JumpDistribution::simple(a.dim)
        }
    };
    let k = WalkKernel::new(law).with_rate(a.rate)?;
    let mut t = Table::new(["argument", "value", "est_error"]);
    let mode = if a.pbar {
        let taus = grid(0.0, a.tmax, a.points);
        let c = k.pbar_curve(&taus, a.tol)?;
        for (tau, v) in taus.iter().zip(&c.values) {
            t.push(vec![fmt_f64(*tau), fmt_f64(v.value), fmt_f64(v.est_error)]);
        }
        format!("pbar;tmax={};points={}", a.tmax, a.points)
    } else if a.upsilon {
        for beta in grid(0.0, a.bmax, a.points) {
            let v = k.upsilon(beta, a.tol)?;
            t.push(vec![fmt_f64(beta), fmt_f64(v.value), fmt_f64(v.est_error)]);
        }
        format!("upsilon;bmax={};points={}", a.bmax, a.points)
    } else if let Some(time) = a.table {
        let table = k.transition_table(time, a.tol)?;
        for (x, p) in table.iter() {
            t.push(vec![coords(&x), fmt_f64(p), fmt_f64(a.tol)]);
        }
        format!("table;t={time}")
    } else {
        return Err(CliError::Usage("choose one of --pbar, --upsilon or --table T".into()));
    };
    let hash = sha256_hex(format!("kernel;{};rate={};tol={};{mode}", k.jumps().to_json(), a.rate, a.tol).as_bytes());
    emit(a.out.as_deref(), &t.to_bytes(&hash, &[])?, out)
}

/// Reads a uniform `t,value` grid starting at 0.
fn read_grid(path: &Path) -> CliResult<(f64, Vec<f64>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut ts = Vec::new();
    let mut vs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> CliResult<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| CliError::Usage(format!("{}: bad row {:?}", path.display(), rec)))
        };
        ts.push(parse(0)?);
        vs.push(parse(1)?);
    }
    if ts.len() < 2 || ts[0] != 0.0 {
        return Err(CliError::Usage(format!("{}: need at least two rows starting at t = 0", path.display())));
    }
    let step = ts[1];
    if ts.iter().enumerate().any(|(i, t)| (t - i as f64 * step).abs() > 1e-9 * step.max(1.0) * (i as f64).max(1.0)) {
        return Err(CliError::Usage(format!("{}: grid is not uniform", path.display())));
    }
    Ok((step, vs))
}

fn renewal(a: &RenewalArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let (times, values, comments, hash_src) = match (&a.g, &a.h, a.builtin) {
        (Some(g), Some(h), None) => {
            let (sg, gv) = read_grid(g)?;
            let (sh, hv) = read_grid(h)?;
            if (sg - sh).abs() > 1e-12 * sg || gv.len() != hv.len() {
                return Err(CliError::Usage("g and h must share one grid".into()));
            }
            let problem = RenewalProblem::new(sg, gv.clone(), hv.clone(), a.beta.unwrap_or(0.0))?;
            let problem = match a.beta {
                Some(_) => problem,
                None => auto_beta(&problem, 0.5)?,
            };
            let sol = picard_solve(&problem, a.tol, 10_000)?;
            let comments = vec![
                format!("beta={}", fmt_f64(problem.beta())),
                format!("rho_hat={}", fmt_f64(sol.rho_hat)),
                format!("iterations={}", sol.iterations),
                format!("last_change={}", fmt_f64(sol.last_change)),
                format!("tail_proxy={}", fmt_f64(sol.tail_proxy)),
            ];
            let src = format!("renewal;g={:?};h={:?};beta={:?};tol={}", gv, hv, a.beta, a.tol);
            (sol.times, sol.values, comments, src)
        }
        (None, None, Some(Builtin::Pam)) => {
            let k = WalkKernel::simple(a.dim);
            let curve = pam_second_moment_renewal(&k, a.q, &InitialProfile::delta(a.dim), a.horizon, a.intervals, a.tol.max(1e-12))?;
            let comments = vec![
                format!("builtin=pam;q={};dim={}", a.q, a.dim),
                format!("halving_error={}", fmt_f64(curve.halving_error)),
                format!("beta={}", fmt_f64(curve.beta)),
                format!("rho_hat={}", fmt_f64(curve.rho_hat)),
            ];
            let src = format!("renewal;pam;q={};dim={};horizon={};intervals={};tol={}", a.q, a.dim, a.horizon, a.intervals, a.tol);
            (curve.times, curve.values, comments, src)
        }
        _ => return Err(CliError::Usage("give --g and --h, or --builtin".into())),
    };
    let mut t = Table::new(["t", "f"]);
    for (x, v) in times.iter().zip(&values) {
        t.push(vec![fmt_f64(*x), fmt_f64(*v)]);
    }
    emit(a.out.as_deref(), &t.to_bytes(&sha256_hex(hash_src.as_bytes()), &comments)?, out)
}

fn verify(a: &VerifyArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    if let Some(dirs) = &a.compare {
        return match compare_dirs(&dirs[0], &dirs[1])? {
            Comparison::Identical { files } => {
                writeln!(out, "identical: {files} CSV file(s)")?;
                Ok(())
            }
            Comparison::Differs { files } => Err(CliError::Acceptance(format!("outputs differ: {}", files.join(", ")))),
        };
    }
    let suite = match a.suite {
        SuiteArg::Acceptance => Suite::Acceptance,
        SuiteArg::Smoke => Suite::Smoke,
    };
    let (seed, source) = match a.seed {
        Some(s) => (s, "flag".to_string()),
        None => seed_override(None)?,
    };
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir)?;
        Stamp {
            command: format!("verify --suite {}", suite.name()),
            manifest_hash: suite_hash(suite, seed),
            seed,
            seed_source: source,
            version: env!("CARGO_PKG_VERSION").into(),
        }
        .write(dir)?;
    }
    let report = run_suite(suite, seed, a.only.as_deref(), a.out.as_deref(), |c| {
        let _ = writeln!(out, "{}", c.line());
    })?;
    let failed: Vec<String> = report
        .criteria
        .iter()
        .filter(|c| !c.passed())
        .map(|c| c.id.to_string())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Acceptance(format!("criteria {} failed", failed.join(", "))))
    }
}
