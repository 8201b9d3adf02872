//! Run manifests: JSON in, fully-resolved [`RunManifest`] out. Validation
//! walks the whole document and reports every violation with its path, so a
//! user fixes a manifest in one round trip. Unknown keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use she_core::experiments::{DECAY_FIT_START, RN_ETA};
use she_core::lattice::{
    Boundary, InitialProfile, LatticeBox, Nonlinearity, Observable, Scheme, SimulationSpec, SolverConfig,
};
use she_core::rng::NoisePlan;
use she_core::walk_kernel::{JumpDistribution, WalkKernel};

use crate::error::{CliError, CliResult};
use crate::output::sha256_hex;

pub const SCHEMA_VERSION: u64 = 1;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_HORIZON: f64 = 1.0;
pub const DEFAULT_REPLICAS: u64 = 1;
pub const DEFAULT_OUTPUT_DIR: &str = "she-out";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Simple { dim: usize },
    LazySimple { dim: usize, hold: f64 },
    PowerLaw { alpha: f64, radius: u32 },
    Jumps { dim: usize, jumps: Vec<(Vec<i64>, f64)> },
    /// Jump-law JSON file, relative to the manifest's directory.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelBlock {
    #[serde(flatten)]
    pub law: KernelSpec,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Periodic,
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxBlock {
    pub extents: Vec<usize>,
    pub boundary: BoundaryKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaSpec {
    Linear { q: f64 },
    Tanh { q: f64 },
    Saturating { q: f64 },
    /// Piecewise linear through `knots`; `lip` must be declared.
    Custom { knots: Vec<(f64, f64)>, lip: f64, ell: f64 },
}

impl SigmaSpec {
    pub fn build(&self) -> CliResult<Nonlinearity> {
        Ok(match self {
            SigmaSpec::Linear { q } => Nonlinearity::linear(*q),
            SigmaSpec::Tanh { q } => Nonlinearity::tanh(*q),
            SigmaSpec::Saturating { q } => Nonlinearity::saturating(*q),
            SigmaSpec::Custom { knots, lip, ell } => Nonlinearity::table(knots.clone(), *lip, *ell)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum U0Spec {
    Delta { at: Option<Vec<i64>>, mass: f64 },
    Constant { value: f64 },
    Table { entries: Vec<(Vec<i64>, f64)>, background: f64 },
}

impl U0Spec {
    pub fn build(&self, dim: usize) -> InitialProfile {
        match self {
            U0Spec::Delta { at, mass } => InitialProfile::Delta {
                at: at.clone().unwrap_or_else(|| vec![0; dim]),
                mass: *mass,
            },
            U0Spec::Constant { value } => InitialProfile::Constant(*value),
            U0Spec::Table { entries, background } => InitialProfile::Table {
                entries: entries.clone(),
                background: *background,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableSpec {
    Mass,
    L1,
    L2sq,
    Sup,
    Negfrac,
    Site(Vec<i64>),
    Brownian(Vec<i64>),
}

impl ObservableSpec {
    pub fn build(&self) -> Observable {
        match self {
            ObservableSpec::Mass => Observable::Mass,
            ObservableSpec::L1 => Observable::L1,
            ObservableSpec::L2sq => Observable::L2Squared,
            ObservableSpec::Sup => Observable::Sup,
            ObservableSpec::Negfrac => Observable::NegativeFraction,
            ObservableSpec::Site(x) => Observable::Site(x.clone()),
            ObservableSpec::Brownian(x) => Observable::Brownian(x.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeSpec {
    Euler,
    Split,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverBlock {
    pub dt: f64,
    pub horizon: f64,
    pub scheme: SchemeSpec,
    pub record_times: Vec<f64>,
    pub snapshot_times: Vec<f64>,
    pub observables: Vec<ObservableSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    Sum,
    Site(Vec<i64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodSpec {
    FieldMc,
    FeynmanKac,
    Renewal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentsBlock {
    pub ks: Vec<u32>,
    pub times: Vec<f64>,
    pub target: TargetSpec,
    pub methods: Vec<MethodSpec>,
    pub renewal_intervals: usize,
    pub renewal_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovBlock {
    pub ks: Vec<u32>,
    pub times: Vec<f64>,
    pub window: (f64, f64),
    pub site: Vec<i64>,
    pub method: MethodSpec,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltBlock {
    pub t: f64,
    pub taus: Vec<f64>,
    pub points: Vec<Vec<i64>>,
    pub z0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RnBlock {
    pub t: f64,
    pub taus: Vec<f64>,
    pub x: Vec<i64>,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationBlock {
    pub fit_window: (f64, f64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Experiments {
    pub moments: Option<MomentsBlock>,
    pub lyapunov: Option<LyapunovBlock>,
    pub clt: Option<CltBlock>,
    pub rn: Option<RnBlock>,
    pub dissipation: Option<DissipationBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub schema_version: u64,
    pub kernel: KernelBlock,
    #[serde(rename = "box")]
    pub lattice: BoxBlock,
    pub sigma: SigmaSpec,
    pub u0: U0Spec,
    pub solver: SolverBlock,
    pub seed: u64,
    pub replicas: u64,
    pub experiments: Experiments,
    pub output_dir: PathBuf,
}

/// A manifest turned into core objects.
#[derive(Debug, Clone)]
pub struct ResolvedRun {
    pub manifest: RunManifest,
    pub spec: SimulationSpec,
    /// sha256 of the resolved manifest plus the jump law actually loaded.
    pub hash: String,
}

impl RunManifest {
    pub fn dim(&self) -> Option<usize> {
        match &self.kernel.law {
            KernelSpec::Simple { dim } | KernelSpec::LazySimple { dim, .. } | KernelSpec::Jumps { dim, .. } => Some(*dim),
            KernelSpec::PowerLaw { .. } => Some(1),
            KernelSpec::File { .. } => None,
        }
    }

    pub fn kernel(&self, base: &Path) -> CliResult<WalkKernel> {
        let law = match &self.kernel.law {
            KernelSpec::Simple { dim } => JumpDistribution::simple(*dim),
            KernelSpec::LazySimple { dim, hold } => JumpDistribution::lazy_simple(*dim, *hold)?,
            KernelSpec::PowerLaw { alpha, radius } => JumpDistribution::truncated_power_law(*alpha, *radius)?,
            KernelSpec::Jumps { dim, jumps } => JumpDistribution::new(
                *dim,
                jumps
                    .iter()
                    .map(|(v, p)| she_core::walk_kernel::Jump { vec: v.clone(), p: *p })
                    .collect(),
            )?,
            KernelSpec::File { path } => JumpDistribution::from_json(&std::fs::read_to_string(base.join(path))?)?,
        };
        Ok(WalkKernel::new(law).with_rate(self.kernel.rate)?)
    }

    /// Builds the simulation spec. `extra_snapshots` are merged into the
    /// solver's snapshot times (moment estimation needs full fields).
    pub fn resolve(&self, base: &Path, extra_snapshots: &[f64]) -> CliResult<ResolvedRun> {
        let kernel = self.kernel(base)?;
        let dim = kernel.dim();
        let mut errors = Vec::new();
        if self.lattice.extents.len() != dim {
            errors.push(err("box.extents", format!("has {} entries but the kernel is {dim}-dimensional", self.lattice.extents.len())));
        }
        if let U0Spec::Delta { at: Some(at), .. } = &self.u0 {
            if at.len() != dim {
                errors.push(err("u0.at", format!("needs {dim} coordinates")));
            }
        }
        if !errors.is_empty() {
            return Err(CliError::Schema(errors));
        }
        let lattice = match self.lattice.boundary {
            BoundaryKind::Periodic => LatticeBox::new(self.lattice.extents.clone(), Boundary::Periodic)?,
            BoundaryKind::Frozen => LatticeBox::frozen(self.lattice.extents.clone())?,
        };
        let s = &self.solver;
        let mut snapshots = s.snapshot_times.clone();
        snapshots.extend_from_slice(extra_snapshots);
        snapshots.sort_by(f64::total_cmp);
        snapshots.dedup();
        let solver = SolverConfig::new(s.dt, s.horizon)
            .with_scheme(match s.scheme {
                SchemeSpec::Euler => Scheme::Euler,
                SchemeSpec::Split => Scheme::SplitExactLinear,
            })
            .with_record_times(s.record_times.clone())
            .with_snapshots(snapshots)
            .with_observables(s.observables.iter().map(ObservableSpec::build).collect());
        let spec = SimulationSpec {
            kernel: kernel.clone(),
            lattice,
            sigma: self.sigma.build()?,
            initial: self.u0.build(dim),
            solver,
            noise: NoisePlan::new(self.seed),
        };
        let mut bytes = serde_json::to_vec(self)?;
        bytes.extend_from_slice(kernel.jumps().to_json().as_bytes());
        Ok(ResolvedRun {
            manifest: self.clone(),
            spec,
            hash: sha256_hex(&bytes),
        })
    }
}

fn err(path: &str, message: impl Into<String>) -> ValidationError {
    ValidationError {
        path: path.into(),
        message: message.into(),
    }
}

/// Collects errors while reading typed fields out of JSON objects.
struct Walker {
    errors: Vec<ValidationError>,
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl Walker {
    fn fail(&mut self, path: &str, message: impl Into<String>) {
        self.errors.push(err(path, message));
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(obj) = v.as_object() else {
            self.fail(path, "expected an object");
            return None;
        };
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                self.fail(&join(path, key), "unknown key");
            }
        }
        Some(obj)
    }

    fn required<'a>(&mut self, obj: &'a Map<String, Value>, path: &str, key: &str) -> Option<&'a Value> {
        let v = obj.get(key);
        if v.is_none() {
            self.fail(&join(path, key), "required key missing");
        }
        v
    }

    fn f64_at(&mut self, v: &Value, path: &str) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.fail(path, "expected a finite number");
                None
            }
        }
    }

    fn u64_at(&mut self, v: &Value, path: &str) -> Option<u64> {
        let out = v.as_u64();
        if out.is_none() {
            self.fail(path, "expected a nonnegative integer");
        }
        out
    }

    fn i64_at(&mut self, v: &Value, path: &str) -> Option<i64> {
        let out = v.as_i64();
        if out.is_none() {
            self.fail(path, "expected an integer");
        }
        out
    }

    fn str_at<'a>(&mut self, v: &'a Value, path: &str) -> Option<&'a str> {
        let out = v.as_str();
        if out.is_none() {
            self.fail(path, "expected a string");
        }
        out
    }

    fn array<'a, T>(&mut self, v: &'a Value, path: &str, mut item: impl FnMut(&mut Self, &'a Value, &str) -> Option<T>) -> Option<Vec<T>> {
        let Some(arr) = v.as_array() else {
            self.fail(path, "expected an array");
            return None;
        };
        let mut out = Vec::with_capacity(arr.len());
        let mut ok = true;
        for (i, x) in arr.iter().enumerate() {
            match item(self, x, &format!("{path}[{i}]")) {
                Some(y) => out.push(y),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn point(&mut self, v: &Value, path: &str) -> Option<Vec<i64>> {
        self.array(v, path, |w, x, p| w.i64_at(x, p))
    }

    fn times(&mut self, v: &Value, path: &str) -> Option<Vec<f64>> {
        let ts = self.array(v, path, |w, x, p| w.f64_at(x, p))?;
        if ts.iter().any(|t| *t < 0.0) {
            self.fail(path, "times must be >= 0");
            return None;
        }
        Some(ts)
    }

    fn positive(&mut self, v: &Value, path: &str) -> Option<f64> {
        let x = self.f64_at(v, path)?;
        if x <= 0.0 {
            self.fail(path, format!("must be > 0, got {x}"));
            return None;
        }
        Some(x)
    }

    fn opt<T>(&mut self, obj: &Map<String, Value>, path: &str, key: &str, default: T, read: impl FnOnce(&mut Self, &Value, &str) -> Option<T>) -> Option<T> {
        match obj.get(key) {
            None => Some(default),
            Some(v) => read(self, v, &join(path, key)),
        }
    }

    fn window(&mut self, v: &Value, path: &str) -> Option<(f64, f64)> {
        let w = self.array(v, path, |w, x, p| w.f64_at(x, p))?;
        if w.len() != 2 || !(w[0] < w[1]) {
            self.fail(path, "expected [start, end] with start < end");
            return None;
        }
        Some((w[0], w[1]))
    }

    fn kernel(&mut self, v: &Value) -> Option<KernelBlock> {
        let path = "kernel";
        let obj = self.object(v, path, &["kind", "dim", "hold", "alpha", "radius", "jumps", "path", "rate"])?;
        let rate = self.opt(obj, path, "rate", 1.0, |w, x, p| w.positive(x, p));
        let kind = self.required(obj, path, "kind").and_then(|k| self.str_at(k, "kernel.kind"));
        let dim = |w: &mut Self| {
            w.opt(obj, path, "dim", 1, |w, x, p| {
                let d = w.u64_at(x, p)?;
                if !(1..=3).contains(&d) {
                    w.fail(p, "dimension must be 1, 2 or 3");
                    return None;
                }
                Some(d as usize)
            })
        };
        let law = match kind? {
            "simple" => KernelSpec::Simple { dim: dim(self)? },
            "lazy_simple" => {
                let d = dim(self);
                let hold = self.required(obj, path, "hold").and_then(|x| self.f64_at(x, "kernel.hold"));
                KernelSpec::LazySimple { dim: d?, hold: hold? }
            }
            "power_law" => {
                let alpha = self.required(obj, path, "alpha").and_then(|x| self.positive(x, "kernel.alpha"));
                let radius = self.required(obj, path, "radius").and_then(|x| self.u64_at(x, "kernel.radius"));
                KernelSpec::PowerLaw {
                    alpha: alpha?,
                    radius: radius? as u32,
                }
            }
            "jumps" => {
                let d = dim(self);
                let jumps = self.required(obj, path, "jumps").and_then(|x| {
                    self.array(x, "kernel.jumps", |w, j, p| {
                        let o = w.object(j, p, &["vec", "p"])?;
                        let vec = w.required(o, p, "vec").and_then(|x| w.point(x, &join(p, "vec")));
                        let prob = w.required(o, p, "p").and_then(|x| w.f64_at(x, &join(p, "p")));
                        Some((vec?, prob?))
                    })
                });
                KernelSpec::Jumps { dim: d?, jumps: jumps? }
            }
            "file" => {
                let p = self.required(obj, path, "path").and_then(|x| self.str_at(x, "kernel.path"));
                KernelSpec::File { path: PathBuf::from(p?) }
            }
            other => {
                self.fail("kernel.kind", format!("unknown kernel kind {other:?}; expected simple, lazy_simple, power_law, jumps or file"));
                return None;
            }
        };
        Some(KernelBlock { law, rate: rate? })
    }

    fn lattice(&mut self, v: &Value) -> Option<BoxBlock> {
        let obj = self.object(v, "box", &["extents", "boundary"])?;
        let extents = self.required(obj, "box", "extents").and_then(|x| {
            self.array(x, "box.extents", |w, e, p| {
                let n = w.u64_at(e, p)?;
                if n == 0 {
                    w.fail(p, "extent must be >= 1");
                    return None;
                }
                Some(n as usize)
            })
        });
        let boundary = self.opt(obj, "box", "boundary", BoundaryKind::Periodic, |w, x, p| match w.str_at(x, p)? {
            "periodic" => Some(BoundaryKind::Periodic),
            "frozen" => Some(BoundaryKind::Frozen),
            other => {
                w.fail(p, format!("unknown boundary {other:?}; expected periodic or frozen"));
                None
            }
        });
        Some(BoxBlock {
            extents: extents?,
            boundary: boundary?,
        })
    }

    fn sigma(&mut self, v: &Value) -> Option<SigmaSpec> {
        let path = "sigma";
        let obj = self.object(v, path, &["kind", "q", "knots", "lip", "ell"])?;
        let kind = self.required(obj, path, "kind").and_then(|k| self.str_at(k, "sigma.kind"))?;
        let q = |w: &mut Self| w.required(obj, path, "q").and_then(|x| w.f64_at(x, "sigma.q"));
        Some(match kind {
            "linear" => SigmaSpec::Linear { q: q(self)? },
            "tanh" => SigmaSpec::Tanh { q: q(self)? },
            "saturating" => SigmaSpec::Saturating { q: q(self)? },
            "custom" => {
                let knots = self.required(obj, path, "knots").and_then(|x| {
                    self.array(x, "sigma.knots", |w, k, p| {
                        let pair = w.array(k, p, |w, x, p| w.f64_at(x, p))?;
                        if pair.len() != 2 {
                            w.fail(p, "expected [u, sigma(u)]");
                            return None;
                        }
                        Some((pair[0], pair[1]))
                    })
                });
                // the Lipschitz constant cannot be read off a black box
                let lip = match obj.get("lip") {
                    None => {
                        self.fail("sigma.lip", "required for custom sigma: the Lipschitz constant must be declared");
                        None
                    }
                    Some(x) => self.f64_at(x, "sigma.lip"),
                };
                let ell = self.opt(obj, path, "ell", 0.0, |w, x, p| w.f64_at(x, p));
                SigmaSpec::Custom {
                    knots: knots?,
                    lip: lip?,
                    ell: ell?,
                }
            }
            other => {
                self.fail("sigma.kind", format!("unknown sigma kind {other:?}; expected linear, tanh, saturating or custom"));
                return None;
            }
        })
    }

    fn u0(&mut self, v: &Value) -> Option<U0Spec> {
        let path = "u0";
        let obj = self.object(v, path, &["kind", "at", "mass", "value", "entries", "background"])?;
        let kind = self.required(obj, path, "kind").and_then(|k| self.str_at(k, "u0.kind"))?;
        Some(match kind {
            "delta" => {
                let at = match obj.get("at") {
                    None => Some(None),
                    Some(x) => self.point(x, "u0.at").map(Some),
                };
                let mass = self.opt(obj, path, "mass", 1.0, |w, x, p| w.f64_at(x, p));
                U0Spec::Delta { at: at?, mass: mass? }
            }
            "constant" => U0Spec::Constant {
                value: self.required(obj, path, "value").and_then(|x| self.f64_at(x, "u0.value"))?,
            },
            "table" => {
                let entries = self.required(obj, path, "entries").and_then(|x| {
                    self.array(x, "u0.entries", |w, e, p| {
                        let o = w.object(e, p, &["at", "value"])?;
                        let at = w.required(o, p, "at").and_then(|x| w.point(x, &join(p, "at")));
                        let value = w.required(o, p, "value").and_then(|x| w.f64_at(x, &join(p, "value")));
                        Some((at?, value?))
                    })
                });
                let background = self.opt(obj, path, "background", 0.0, |w, x, p| w.f64_at(x, p));
                U0Spec::Table {
                    entries: entries?,
                    background: background?,
                }
            }
            other => {
                self.fail("u0.kind", format!("unknown u0 kind {other:?}; expected delta, constant or table"));
                return None;
            }
        })
    }

    fn observable(&mut self, v: &Value, path: &str) -> Option<ObservableSpec> {
        if let Some(s) = v.as_str() {
            return match s {
                "mass" => Some(ObservableSpec::Mass),
                "l1" => Some(ObservableSpec::L1),
                "l2sq" => Some(ObservableSpec::L2sq),
                "sup" => Some(ObservableSpec::Sup),
                "negfrac" => Some(ObservableSpec::Negfrac),
                other => {
                    self.fail(path, format!("unknown observable {other:?}"));
                    None
                }
            };
        }
        let obj = self.object(v, path, &["site", "brownian"])?;
        match (obj.get("site"), obj.get("brownian")) {
            (Some(x), None) => self.point(x, &join(path, "site")).map(ObservableSpec::Site),
            (None, Some(x)) => self.point(x, &join(path, "brownian")).map(ObservableSpec::Brownian),
            _ => {
                self.fail(path, "expected exactly one of site or brownian");
                None
            }
        }
    }

    fn solver(&mut self, v: Option<&Value>) -> Option<SolverBlock> {
        let empty = Value::Object(Map::new());
        let path = "solver";
        let obj = self.object(
            v.unwrap_or(&empty),
            path,
            &["dt", "horizon", "scheme", "record_every", "record_times", "snapshot_times", "observables"],
        )?;
        let dt = self.opt(obj, path, "dt", DEFAULT_DT, |w, x, p| w.positive(x, p));
        let horizon = self.opt(obj, path, "horizon", DEFAULT_HORIZON, |w, x, p| w.positive(x, p));
        let scheme = self.opt(obj, path, "scheme", SchemeSpec::Euler, |w, x, p| match w.str_at(x, p)? {
            "euler" => Some(SchemeSpec::Euler),
            "split" => Some(SchemeSpec::Split),
            other => {
                w.fail(p, format!("unknown scheme {other:?}; expected euler or split"));
                None
            }
        });
        let every = self.opt(obj, path, "record_every", None, |w, x, p| w.positive(x, p).map(Some));
        let listed = self.opt(obj, path, "record_times", None, |w, x, p| w.times(x, p).map(Some));
        if obj.contains_key("record_every") && obj.contains_key("record_times") {
            self.fail("solver.record_every", "give record_every or record_times, not both");
        }
        let snapshots = self.opt(obj, path, "snapshot_times", Vec::new(), |w, x, p| w.times(x, p));
        let observables = self.opt(obj, path, "observables", vec![ObservableSpec::L1, ObservableSpec::L2sq, ObservableSpec::Sup, ObservableSpec::Negfrac], |w, x, p| {
            w.array(x, p, |w, o, p| w.observable(o, p))
        });
        let (dt, horizon) = (dt?, horizon?);
        let record_times = match (every?, listed?) {
            (Some(e), _) => {
                let n = (horizon / e).round() as usize;
                (0..=n).map(|i| i as f64 * e).collect()
            }
            (None, Some(ts)) => ts,
            (None, None) => vec![horizon],
        };
        Some(SolverBlock {
            dt,
            horizon,
            scheme: scheme?,
            record_times,
            snapshot_times: snapshots?,
            observables: observables?,
        })
    }

    fn ks(&mut self, v: &Value, path: &str) -> Option<Vec<u32>> {
        self.array(v, path, |w, x, p| {
            let k = w.u64_at(x, p)?;
            if k == 0 || k > 64 {
                w.fail(p, "moment order must lie in 1..=64");
                return None;
            }
            Some(k as u32)
        })
    }

    fn method(&mut self, v: &Value, path: &str) -> Option<MethodSpec> {
        match self.str_at(v, path)? {
            "field-mc" => Some(MethodSpec::FieldMc),
            "feynman-kac" => Some(MethodSpec::FeynmanKac),
            "renewal" => Some(MethodSpec::Renewal),
            other => {
                self.fail(path, format!("unknown method {other:?}; expected field-mc, feynman-kac or renewal"));
                None
            }
        }
    }

    fn experiments(&mut self, v: Option<&Value>, horizon: f64) -> Option<Experiments> {
        let Some(v) = v else {
            return Some(Experiments::default());
        };
        let path = "experiments";
        let obj = self.object(v, path, &["moments", "lyapunov", "clt", "rn", "dissipation", "classify"])?;
        let mut out = Experiments::default();
        let mut ok = true;
        if let Some(m) = obj.get("moments") {
            let p = "experiments.moments";
            let block = self.object(m, p, &["ks", "times", "target", "methods", "renewal_intervals", "renewal_tol"]).and_then(|o| {
                let ks = self.required(o, p, "ks").and_then(|x| self.ks(x, "experiments.moments.ks"));
                let times = self.required(o, p, "times").and_then(|x| self.times(x, "experiments.moments.times"));
                let target = self.opt(o, p, "target", TargetSpec::Sum, |w, x, p| {
                    if x.as_str() == Some("sum") {
                        return Some(TargetSpec::Sum);
                    }
                    let t = w.object(x, p, &["site"])?;
                    w.required(t, p, "site").and_then(|s| w.point(s, &join(p, "site"))).map(TargetSpec::Site)
                });
                let methods = self.opt(o, p, "methods", vec![MethodSpec::FieldMc], |w, x, p| w.array(x, p, |w, m, p| w.method(m, p)));
                let intervals = self.opt(o, p, "renewal_intervals", 512, |w, x, p| w.u64_at(x, p).map(|n| n as usize));
                let tol = self.opt(o, p, "renewal_tol", 1e-6, |w, x, p| w.positive(x, p));
                Some(MomentsBlock {
                    ks: ks?,
                    times: times?,
                    target: target?,
                    methods: methods?,
                    renewal_intervals: intervals?,
                    renewal_tol: tol?,
                })
            });
            ok &= block.is_some();
            out.moments = block;
        }
        if let Some(m) = obj.get("lyapunov") {
            let p = "experiments.lyapunov";
            let block = self.object(m, p, &["ks", "times", "window", "site", "method", "eps"]).and_then(|o| {
                let ks = self.required(o, p, "ks").and_then(|x| self.ks(x, "experiments.lyapunov.ks"));
                let times = self.required(o, p, "times").and_then(|x| self.times(x, "experiments.lyapunov.times"));
                let window = self.required(o, p, "window").and_then(|x| self.window(x, "experiments.lyapunov.window"));
                let site = self.opt(o, p, "site", None, |w, x, p| w.point(x, p).map(Some));
                let method = self.opt(o, p, "method", MethodSpec::FeynmanKac, |w, x, p| w.method(x, p));
                let eps = self.opt(o, p, "eps", 0.5, |w, x, p| w.positive(x, p));
                let method = method?;
                if method == MethodSpec::Renewal {
                    self.fail("experiments.lyapunov.method", "renewal gives second moments only; use feynman-kac or field-mc");
                    return None;
                }
                Some(LyapunovBlock {
                    ks: ks?,
                    times: times?,
                    window: window?,
                    site: site?.unwrap_or_default(),
                    method,
                    eps: eps?,
                })
            });
            ok &= block.is_some();
            out.lyapunov = block;
        }
        if let Some(m) = obj.get("clt") {
            let p = "experiments.clt";
            let block = self.object(m, p, &["t", "taus", "points", "z0"]).and_then(|o| {
                let t = self.required(o, p, "t").and_then(|x| self.positive(x, "experiments.clt.t"));
                let taus = self.required(o, p, "taus").and_then(|x| self.times(x, "experiments.clt.taus"));
                let points = self.required(o, p, "points").and_then(|x| self.array(x, "experiments.clt.points", |w, x, p| w.point(x, p)));
                let z0 = self.opt(o, p, "z0", 1.0, |w, x, p| w.positive(x, p));
                Some(CltBlock {
                    t: t?,
                    taus: taus?,
                    points: points?,
                    z0: z0?,
                })
            });
            ok &= block.is_some();
            out.clt = block;
        }
        if let Some(m) = obj.get("rn") {
            let p = "experiments.rn";
            let block = self.object(m, p, &["t", "taus", "x", "eta"]).and_then(|o| {
                let t = self.required(o, p, "t").and_then(|x| self.positive(x, "experiments.rn.t"));
                let taus = self.required(o, p, "taus").and_then(|x| self.times(x, "experiments.rn.taus"));
                let x = self.required(o, p, "x").and_then(|x| self.point(x, "experiments.rn.x"));
                let eta = self.opt(o, p, "eta", RN_ETA, |w, x, p| w.positive(x, p));
                Some(RnBlock {
                    t: t?,
                    taus: taus?,
                    x: x?,
                    eta: eta?,
                })
            });
            ok &= block.is_some();
            out.rn = block;
        }
        if let Some(m) = obj.get("dissipation") {
            let p = "experiments.dissipation";
            let block = self.object(m, p, &["fit_window"]).and_then(|o| {
                let default = (DECAY_FIT_START.min(horizon / 4.0), horizon);
                let window = self.opt(o, p, "fit_window", default, |w, x, p| w.window(x, p));
                Some(DissipationBlock { fit_window: window? })
            });
            ok &= block.is_some();
            out.dissipation = block;
        }
        if let Some(m) = obj.get("classify") {
            // classification uses only sigma and the kernel
            ok &= self.object(m, "experiments.classify", &[]).is_some();
        }
        ok.then_some(out)
    }
}

/// Parses and validates manifest text, reporting every violation found.
pub fn parse_and_validate(text: &str) -> CliResult<RunManifest> {
    let root: Value = serde_json::from_str(text).map_err(|e| CliError::Schema(vec![err("", format!("invalid JSON: {e}"))]))?;
    let mut w = Walker { errors: Vec::new() };
    let Some(obj) = w.object(
        &root,
        "",
        &["schema_version", "kernel", "box", "sigma", "u0", "solver", "seed", "replicas", "experiments", "output_dir"],
    ) else {
        return Err(CliError::Schema(w.errors));
    };
    let version = w.opt(obj, "", "schema_version", SCHEMA_VERSION, |w, x, p| {
        let v = w.u64_at(x, p)?;
        if v != SCHEMA_VERSION {
            w.fail(p, format!("unsupported schema version {v}; this build reads {SCHEMA_VERSION}"));
            return None;
        }
        Some(v)
    });
    let kernel = w.required(obj, "", "kernel").and_then(|v| w.kernel(v));
    let lattice = w.required(obj, "", "box").and_then(|v| w.lattice(v));
    let sigma = w.required(obj, "", "sigma").and_then(|v| w.sigma(v));
    let u0 = w.required(obj, "", "u0").and_then(|v| w.u0(v));
    let solver = w.solver(obj.get("solver"));
    let seed = w.required(obj, "", "seed").and_then(|v| w.u64_at(v, "seed"));
    let replicas = w.opt(obj, "", "replicas", DEFAULT_REPLICAS, |w, x, p| {
        let n = w.u64_at(x, p)?;
        if n == 0 {
            w.fail(p, "need at least one replica");
            return None;
        }
        Some(n)
    });
    let horizon = solver.as_ref().map_or(DEFAULT_HORIZON, |s| s.horizon);
    let experiments = w.experiments(obj.get("experiments"), horizon);
    let output_dir = w.opt(obj, "", "output_dir", PathBuf::from(DEFAULT_OUTPUT_DIR), |w, x, p| w.str_at(x, p).map(PathBuf::from));

    if let (Some(s), Some(_)) = (&solver, &sigma) {
        if s.scheme == SchemeSpec::Split && !matches!(sigma, Some(SigmaSpec::Linear { .. })) {
            w.fail("solver.scheme", "split is exact only for linear sigma");
        }
    }
    if let (Some(m), Some(k)) = (&kernel, &lattice) {
        let d = match &m.law {
            KernelSpec::Simple { dim } | KernelSpec::LazySimple { dim, .. } | KernelSpec::Jumps { dim, .. } => Some(*dim),
            KernelSpec::PowerLaw { .. } => Some(1),
            KernelSpec::File { .. } => None,
        };
        if let Some(d) = d {
            if k.extents.len() != d {
                w.fail("box.extents", format!("has {} entries but the kernel is {d}-dimensional", k.extents.len()));
            }
        }
    }
    if !w.errors.is_empty() {
        return Err(CliError::Schema(w.errors));
    }
    Ok(RunManifest {
        schema_version: version.expect("checked"),
        kernel: kernel.expect("checked"),
        lattice: lattice.expect("checked"),
        sigma: sigma.expect("checked"),
        u0: u0.expect("checked"),
        solver: solver.expect("checked"),
        seed: seed.expect("checked"),
        replicas: replicas.expect("checked"),
        experiments: experiments.expect("checked"),
        output_dir: output_dir.expect("checked"),
    })
}

/// Reads a manifest from disk; the returned path is its directory, against
/// which file references resolve.
pub fn load(path: &Path) -> CliResult<(RunManifest, PathBuf)> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((parse_and_validate(&text)?, base))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "kernel": {"kind": "simple", "dim": 1},
        "box": {"extents": [33]},
        "sigma": {"kind": "linear", "q": 1.0},
        "u0": {"kind": "constant", "value": 1.0},
        "seed": 7
    }"#;

    fn schema_errors(text: &str) -> Vec<ValidationError> {
        match parse_and_validate(text) {
            Err(CliError::Schema(e)) => e,
            other => panic!("expected schema errors, got {other:?}"),
        }
    }

    fn with(patch: &str) -> String {
        let mut base: Value = serde_json::from_str(MINIMAL).unwrap();
        let p: Value = serde_json::from_str(patch).unwrap();
        for (k, v) in p.as_object().unwrap() {
            base[k] = v.clone();
        }
        base.to_string()
    }

    #[test]
    fn minimal_manifest_gets_defaults() {
        let m = parse_and_validate(MINIMAL).unwrap();
        assert_eq!(m.solver.dt, 1e-3);
        assert_eq!(m.solver.scheme, SchemeSpec::Euler);
        assert_eq!(m.solver.horizon, 1.0);
        assert_eq!(m.solver.record_times, vec![1.0]);
        assert_eq!(m.replicas, 1);
        assert_eq!(m.schema_version, SCHEMA_VERSION);
        assert_eq!(m.lattice.boundary, BoundaryKind::Periodic);
        assert_eq!(m.kernel.rate, 1.0);
        assert_eq!(m.output_dir, PathBuf::from(DEFAULT_OUTPUT_DIR));
    }

    #[test]
    fn negative_dt_reports_its_path() {
        let e = schema_errors(&with(r#"{"solver": {"dt": -0.1}}"#));
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].path, "solver.dt");
    }

    #[test]
    fn custom_sigma_needs_declared_lip() {
        let e = schema_errors(&with(r#"{"sigma": {"kind": "custom", "knots": [[0, 0], [1, 1]]}}"#));
        assert_eq!(e[0].path, "sigma.lip");
        let ok = parse_and_validate(&with(r#"{"sigma": {"kind": "custom", "knots": [[0, 0], [1, 1]], "lip": 1}}"#)).unwrap();
        assert!(matches!(ok.sigma, SigmaSpec::Custom { lip, .. } if lip == 1.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = schema_errors(&with(r#"{"colour": "blue", "box": {"extents": [9], "shape": "round"}}"#));
        let mut paths: Vec<&str> = e.iter().map(|e| e.path.as_str()).collect();
        paths.sort();
        assert_eq!(paths, ["box.shape", "colour"]);
    }

    #[test]
    fn every_violation_is_listed() {
        let text = r#"{
            "kernel": {"kind": "simple", "dim": 7},
            "box": {"extents": [0]},
            "sigma": {"kind": "quadratic"},
            "u0": {"kind": "constant"},
            "solver": {"dt": 0, "scheme": "rk4"}
        }"#;
        let mut paths: Vec<String> = schema_errors(text).into_iter().map(|e| e.path).collect();
        paths.sort();
        assert_eq!(
            paths,
            ["box.extents[0]", "kernel.dim", "seed", "sigma.kind", "solver.dt", "solver.scheme", "u0.value"]
        );
    }

    #[test]
    fn invalid_json_is_a_schema_error() {
        assert_eq!(schema_errors("{").len(), 1);
    }

    #[test]
    fn split_scheme_requires_linear_sigma() {
        let e = schema_errors(&with(r#"{"sigma": {"kind": "tanh", "q": 1}, "solver": {"scheme": "split"}}"#));
        assert_eq!(e[0].path, "solver.scheme");
    }

    #[test]
    fn dimension_mismatch_is_caught() {
        let e = schema_errors(&with(r#"{"box": {"extents": [8, 8]}}"#));
        assert_eq!(e[0].path, "box.extents");
    }

    #[test]
    fn record_every_expands_to_a_grid() {
        let m = parse_and_validate(&with(r#"{"solver": {"horizon": 2, "record_every": 0.5}}"#)).unwrap();
        assert_eq!(m.solver.record_times, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn experiment_blocks_materialize_defaults() {
        let m = parse_and_validate(&with(
            r#"{"solver": {"horizon": 40}, "experiments": {"moments": {"ks": [2], "times": [1]}, "rn": {"t": 1, "taus": [0.01], "x": [0]}, "dissipation": {}}}"#,
        ))
        .unwrap();
        let mo = m.experiments.moments.unwrap();
        assert_eq!(mo.target, TargetSpec::Sum);
        assert_eq!(mo.methods, vec![MethodSpec::FieldMc]);
        assert_eq!(m.experiments.rn.unwrap().eta, RN_ETA);
        assert_eq!(m.experiments.dissipation.unwrap().fit_window, (DECAY_FIT_START, 40.0));
    }

    #[test]
    fn resolution_hash_is_stable_and_seed_sensitive() {
        let m = parse_and_validate(MINIMAL).unwrap();
        let a = m.resolve(Path::new("."), &[]).unwrap();
        let b = m.resolve(Path::new("."), &[]).unwrap();
        assert_eq!(a.hash, b.hash);
        let mut other = m.clone();
        other.seed += 1;
        assert_ne!(other.resolve(Path::new("."), &[]).unwrap().hash, a.hash);
        assert_eq!(a.spec.lattice.sites(), 33);
    }
}
