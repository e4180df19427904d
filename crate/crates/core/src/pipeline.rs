//! End-to-end runs: load tables, estimate both priors, refine, expand,
//! evaluate, and write per-method outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, AnnealParams, Method};
use crate::conditional::run_chain;
use crate::copula::{estimate_p2, estimate_spec, integerize_targets, CopulaSpec};
use crate::distribution::TupleDistribution;
use crate::error::{Error, Result};
use crate::graph::{build_graph, order_variables, OrderMode};
use crate::maxent::{self, build_constraints, fuse_priors, threshold, ConstraintSet, LbfgsOptions, Solution};
use crate::metrics::{evaluate, MetricsReport};
use crate::schema::Schema;
use crate::synthesis::{expand, SyntheticPopulation};
use crate::tables::{normalize_auxiliary, AuxiliaryMatrix, ConditionalSet, MarginalSet};
use crate::truth::TARGET_LOCATION;

/// Default τ grid, as multiples of 1/N.
pub const DEFAULT_TAU_GRID: [f64; 4] = [10.0, 1.0, 0.1, 0.01];

/// Categories rarer than this share of D1 are tracked in τ sweeps by default.
pub const RARE_SHARE: f64 = 0.01;

fn default_iterations() -> usize {
    20
}

fn default_n_draw() -> usize {
    10_000
}

fn default_methods() -> Vec<String> {
    vec!["gensyn".into()]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Run configuration, read from TOML. Relative paths resolve against the
/// configuration file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: PathBuf,
    pub d1: PathBuf,
    pub d2: PathBuf,
    pub d3: PathBuf,
    /// Known joint distribution for KL and association scores.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    pub population: u64,
    /// Pruning threshold; 1/population when unset.
    #[serde(default)]
    pub tau: Option<f64>,
    /// τ values to sweep, as multiples of 1/population.
    #[serde(default)]
    pub tau_sweep: Option<Vec<f64>>,
    /// `var:category` labels whose recovery is reported in τ sweeps, in
    /// addition to every category below 1% of D1.
    #[serde(default)]
    pub track: Vec<String>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_n_draw")]
    pub n_draw: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// `entropy` or `declared`.
    #[serde(default)]
    pub order: Option<String>,
    #[serde(default)]
    pub anneal: AnnealParams,
}

impl RunConfig {
    pub fn new(schema: PathBuf, d1: PathBuf, d2: PathBuf, d3: PathBuf, population: u64) -> Self {
        RunConfig {
            schema,
            d1,
            d2,
            d3,
            reference: None,
            population,
            tau: None,
            tau_sweep: None,
            track: Vec::new(),
            iterations: default_iterations(),
            n_draw: default_n_draw(),
            seed: 0,
            methods: default_methods(),
            output: default_output(),
            order: None,
            anneal: AnnealParams::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.schema, &mut self.d1, &mut self.d2, &mut self.d3, &mut self.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(r) = &mut self.reference {
            if r.is_relative() {
                *r = base.join(&*r);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population == 0 {
            return Err(Error::Config("population must be at least 1".into()));
        }
        if let Some(t) = self.tau {
            if !(t >= 0.0) {
                return Err(Error::Config(format!("tau {t} must be nonnegative")));
            }
        }
        if let Some(grid) = &self.tau_sweep {
            if grid.is_empty() || grid.iter().any(|m| !(*m >= 0.0)) {
                return Err(Error::Config("tau sweep multipliers must be nonnegative and non-empty".into()));
            }
        }
        if self.iterations == 0 || self.n_draw == 0 {
            return Err(Error::Config("copula iterations and draws must be at least 1".into()));
        }
        self.method_list()?;
        self.order_mode()?;
        let mut paths = vec![&self.schema, &self.d1, &self.d2, &self.d3];
        paths.extend(&self.reference);
        for p in paths {
            if !p.exists() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Requested methods, deduplicated in canonical order; `all` selects every one.
    pub fn method_list(&self) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for m in &self.methods {
            if m.eq_ignore_ascii_case("all") {
                out.extend(Method::ALL);
            } else {
                out.push(m.parse()?);
            }
        }
        if out.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn order_mode(&self) -> Result<OrderMode> {
        self.order.as_deref().map_or(Ok(OrderMode::default()), str::parse)
    }

    pub fn tau_value(&self) -> f64 {
        self.tau.unwrap_or_else(|| maxent::default_tau(self.population))
    }
}

/// The three macro-data classes for one target location, plus an optional
/// reference distribution.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub schema: Schema,
    pub d1: MarginalSet,
    pub d2: ConditionalSet,
    pub d3: AuxiliaryMatrix,
    pub reference: Option<TupleDistribution>,
}

impl Inputs {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let schema = Schema::load(&cfg.schema)?;
        let d1 = MarginalSet::load(&cfg.d1, &schema, TARGET_LOCATION)?;
        let d2 = ConditionalSet::load(&cfg.d2, &schema)?;
        let d3 = AuxiliaryMatrix::load(&cfg.d3, &schema)?;
        let reference = cfg
            .reference
            .as_ref()
            .map(|p| TupleDistribution::load_csv(p, &schema))
            .transpose()?;
        Ok(Inputs {
            schema,
            d1,
            d2,
            d3,
            reference,
        })
    }
}

/// Generator settings shared by every method.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub population: u64,
    pub tau: f64,
    pub iterations: usize,
    pub n_draw: usize,
    pub seed: u64,
    pub order: OrderMode,
    pub lbfgs: LbfgsOptions,
    pub anneal: AnnealParams,
}

impl Settings {
    pub fn new(population: u64) -> Self {
        Settings {
            population,
            tau: maxent::default_tau(population),
            iterations: default_iterations(),
            n_draw: default_n_draw(),
            seed: 0,
            order: OrderMode::default(),
            lbfgs: LbfgsOptions::default(),
            anneal: AnnealParams::default(),
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(Settings {
            population: cfg.population,
            tau: cfg.tau_value(),
            iterations: cfg.iterations,
            n_draw: cfg.n_draw,
            seed: cfg.seed,
            order: cfg.order_mode()?,
            lbfgs: LbfgsOptions::default(),
            anneal: cfg.anneal,
        })
    }
}

/// Quantities estimated once and shared by the methods.
#[derive(Debug, Clone)]
pub struct Priors {
    /// Conditional chain estimate.
    pub p1: TupleDistribution,
    /// Copula estimate.
    pub p2: TupleDistribution,
    pub copula: CopulaSpec,
    pub constraints: ConstraintSet,
}

/// Builds p1 and p2, in parallel.
pub fn estimate_priors(inputs: &Inputs, settings: &Settings) -> Result<Priors> {
    let schema = &inputs.schema;
    let (p1, copula) = rayon::join(
        || -> Result<TupleDistribution> {
            let graph = build_graph(schema)?;
            let order = order_variables(&graph, &inputs.d1, settings.order)?;
            run_chain(schema, &graph, &order, &inputs.d1, &inputs.d2)
        },
        || -> Result<(CopulaSpec, TupleDistribution)> {
            let aux = normalize_auxiliary(schema, &inputs.d3)?;
            let spec = estimate_spec(schema, &aux, settings.iterations, settings.n_draw)?;
            let eta = integerize_targets(schema, &inputs.d1, settings.n_draw)?;
            let p2 = estimate_p2(schema, &spec, &eta, settings.seed)?;
            Ok((spec, p2))
        },
    );
    let (copula, p2) = copula?;
    Ok(Priors {
        p1: p1?,
        p2,
        copula,
        constraints: build_constraints(schema, &inputs.d1)?,
    })
}

/// Output of one method.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub population: SyntheticPopulation,
    /// Maxent solution for the optimization-based methods.
    pub solution: Option<Solution>,
    /// Pruned prior handed to the optimizer by GenSyn.
    pub prior: Option<TupleDistribution>,
    pub anneal: Option<baselines::AnnealTrace>,
}

impl MethodRun {
    fn plain(method: Method, population: SyntheticPopulation) -> Self {
        MethodRun {
            method,
            population,
            solution: None,
            prior: None,
            anneal: None,
        }
    }
}

/// Fused prior `threshold((p1 + p2) / 2, τ)`.
pub fn gensyn_prior(priors: &Priors, tau: f64) -> Result<TupleDistribution> {
    threshold(&fuse_priors(&priors.p1, &priors.p2)?, tau)
}

/// Minimum cross-entropy refinement of `prior` followed by expansion.
pub fn refine(prior: &TupleDistribution, priors: &Priors, settings: &Settings) -> Result<(Solution, SyntheticPopulation)> {
    let solution = maxent::solve(prior, &priors.constraints, &settings.lbfgs)?;
    let population = expand(&solution.weights, settings.population)?;
    Ok((solution, population))
}

pub fn run_method(method: Method, inputs: &Inputs, priors: &Priors, settings: &Settings) -> Result<MethodRun> {
    let schema = &inputs.schema;
    let n = settings.population;
    match method {
        Method::GenSyn => {
            let prior = gensyn_prior(priors, settings.tau)?;
            let (solution, population) = refine(&prior, priors, settings)?;
            Ok(MethodRun {
                method,
                population,
                solution: Some(solution),
                prior: Some(prior),
                anneal: None,
            })
        }
        Method::MaxEnt => {
            let solution = baselines::baseline_maxent(&priors.constraints, schema.tuple_space(), &settings.lbfgs)?;
            let population = expand(&solution.weights, n)?;
            Ok(MethodRun {
                solution: Some(solution),
                ..MethodRun::plain(method, population)
            })
        }
        Method::Syntropy => {
            let solution = baselines::baseline_syntropy(&priors.p1, &priors.constraints, settings.tau, &settings.lbfgs)?;
            let population = expand(&solution.weights, n)?;
            Ok(MethodRun {
                solution: Some(solution),
                ..MethodRun::plain(method, population)
            })
        }
        Method::Conditional => Ok(MethodRun::plain(
            method,
            baselines::baseline_conditional(&priors.p1, n, settings.seed)?,
        )),
        Method::Sync => {
            let eta = integerize_targets(schema, &inputs.d1, n as usize)?;
            Ok(MethodRun::plain(
                method,
                baselines::baseline_sync(schema, &priors.copula, &eta, n, settings.seed)?,
            ))
        }
        Method::SynthAcs => {
            let (population, trace) =
                baselines::baseline_synthacs(schema, &priors.p1, &inputs.d1, n, &settings.anneal, settings.seed)?;
            Ok(MethodRun {
                anneal: Some(trace),
                ..MethodRun::plain(method, population)
            })
        }
    }
}

/// Ablation: minimum cross-entropy with the pruned copula estimate as the only prior.
pub fn copula_only(priors: &Priors, settings: &Settings) -> Result<(Solution, SyntheticPopulation)> {
    refine(&threshold(&priors.p2, settings.tau)?, priors, settings)
}

/// Per-method entry of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStatus {
    pub method: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// True for configuration/input errors, false for numerical ones.
    #[serde(default)]
    pub input_error: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

/// One row of a τ sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub multiplier: f64,
    pub tau: f64,
    pub support: usize,
    pub ok: bool,
    pub tae: Option<f64>,
    pub kl: Option<f64>,
    pub frobenius: Option<f64>,
    /// Percentage difference between synthetic and D1 counts per tracked
    /// `var:category`; 100 means the category vanished.
    pub recovery_error: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub population: u64,
    pub tau: f64,
    pub seed: u64,
    pub methods: Vec<MethodStatus>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau_sweep: Vec<SweepPoint>,
}

impl RunReport {
    /// 0 when every method succeeded, 4 when some failed, otherwise 2 for
    /// input errors and 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        let failed: Vec<&MethodStatus> = self.methods.iter().filter(|m| !m.ok).collect();
        let sweep_failed = self.tau_sweep.iter().any(|p| !p.ok);
        if failed.is_empty() {
            if sweep_failed { 4 } else { 0 }
        } else if failed.len() < self.methods.len() {
            4
        } else if failed.iter().all(|m| m.input_error) {
            2
        } else {
            3
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

fn status_for_error(method: Method, e: &Error) -> MethodStatus {
    MethodStatus {
        method: method.name().into(),
        ok: false,
        error: Some(e.to_string()),
        input_error: e.is_input_error(),
        files: Vec::new(),
        metrics: None,
    }
}

fn write_method(out: &Path, inputs: &Inputs, priors: &Priors, run: &MethodRun) -> Result<MethodStatus> {
    let schema = &inputs.schema;
    let dir = out.join(run.method.name());
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = vec!["population.csv".to_string(), "metrics.json".to_string()];
    run.population.save_csv(dir.join("population.csv"), schema)?;
    let metrics = evaluate(schema, run.method.name(), &run.population, &inputs.d1, inputs.reference.as_ref())?;
    metrics.save(dir.join("metrics.json"))?;
    if let Some(sol) = &run.solution {
        sol.save_log(dir.join("convergence.csv"))?;
        files.push("convergence.csv".into());
    }
    if let Some(prior) = &run.prior {
        // fused prior with both sources and the final weight of every kept tuple
        let w = run.solution.as_ref().map(|s| &s.weights);
        prior.save_columns(dir.join("prior.csv"), schema, &["p1", "p2", "weight"], |t, _| {
            vec![priors.p1.get(t), priors.p2.get(t), w.map_or(0.0, |w| w.get(t))]
        })?;
        priors.copula.save_diagnostics(&dir, schema)?;
        files.extend(["prior.csv", "sigma.csv", "marginals.csv"].map(String::from));
    }
    if let Some(trace) = &run.anneal {
        let path = dir.join("anneal.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::parse(&path, e))?;
        w.write_record(["initial_tae", "attainable_tae", "best_tae", "proposals", "accepted"])
            .map_err(|e| Error::parse(&path, e))?;
        w.write_record([
            trace.initial_tae.to_string(),
            trace.attainable_tae.to_string(),
            trace.best_tae.to_string(),
            trace.proposals.to_string(),
            trace.accepted.to_string(),
        ])
        .map_err(|e| Error::parse(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push("anneal.csv".into());
    }
    Ok(MethodStatus {
        method: run.method.name().into(),
        ok: true,
        error: None,
        input_error: false,
        files: files.into_iter().map(|f| format!("{}/{f}", run.method.name())).collect(),
        metrics: Some(metrics),
    })
}

/// `var:category` labels tracked in τ sweeps.
pub fn tracked_categories(schema: &Schema, d1: &MarginalSet, extra: &[String]) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for k in 0..schema.len() {
        for (c, p) in d1.proportions(schema, k)?.into_iter().enumerate() {
            if p > 0.0 && p < RARE_SHARE {
                out.push((k, c));
            }
        }
    }
    for label in extra {
        let (var, cat) = label
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("tracked category `{label}` must be written var:category")))?;
        let k = schema
            .index_of(var)
            .ok_or_else(|| Error::Config(format!("tracked category names unknown variable `{var}`")))?;
        out.push((k, schema.resolve_category(k, cat)?));
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// |synthetic − expected| / expected × 100 for each tracked category.
pub fn recovery_error(
    schema: &Schema,
    population: &SyntheticPopulation,
    d1: &MarginalSet,
    tracked: &[(usize, usize)],
) -> Result<BTreeMap<String, f64>> {
    let counts = population.marginal_counts();
    let n = population.size() as f64;
    let mut out = BTreeMap::new();
    for &(k, c) in tracked {
        let expected = d1.proportions(schema, k)?[c] * n;
        if expected > 0.0 {
            let label = format!("{}:{}", schema.variable(k).name, schema.variable(k).categories[c]);
            out.insert(label, 100.0 * (counts[k][c] - expected).abs() / expected);
        }
    }
    Ok(out)
}

/// GenSyn at each τ = multiplier / population, reusing the priors.
pub fn tau_sweep(
    inputs: &Inputs,
    priors: &Priors,
    settings: &Settings,
    multipliers: &[f64],
    tracked: &[(usize, usize)],
) -> Vec<SweepPoint> {
    let schema = &inputs.schema;
    let fused = fuse_priors(&priors.p1, &priors.p2);
    multipliers
        .par_iter()
        .map(|&m| {
            let tau = m / settings.population as f64;
            let attempt = || -> Result<(usize, MetricsReport, BTreeMap<String, f64>)> {
                let fused = fused.as_ref().map_err(|e| Error::Numerical(e.to_string()))?;
                let prior = threshold(fused, tau)?;
                let (_, population) = refine(&prior, priors, settings)?;
                let metrics = evaluate(schema, "gensyn", &population, &inputs.d1, inputs.reference.as_ref())?;
                let rec = recovery_error(schema, &population, &inputs.d1, tracked)?;
                Ok((prior.support_len(), metrics, rec))
            };
            match attempt() {
                Ok((support, metrics, recovery_error)) => SweepPoint {
                    multiplier: m,
                    tau,
                    support,
                    ok: true,
                    tae: Some(metrics.tae),
                    kl: metrics.kl,
                    frobenius: metrics.frobenius,
                    recovery_error,
                },
                Err(_) => SweepPoint {
                    multiplier: m,
                    tau,
                    support: 0,
                    ok: false,
                    tae: None,
                    kl: None,
                    frobenius: None,
                    recovery_error: BTreeMap::new(),
                },
            }
        })
        .collect()
}

fn save_sweep(path: &Path, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    let labels: Vec<String> = points
        .iter()
        .flat_map(|p| p.recovery_error.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut header = vec!["multiplier", "tau", "support", "ok", "tae", "kl", "frobenius"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    header.extend(labels.iter().map(|l| format!("recovery_error:{l}")));
    w.write_record(&header).map_err(|e| Error::parse(path, e))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for p in points {
        let mut rec = vec![
            p.multiplier.to_string(),
            p.tau.to_string(),
            p.support.to_string(),
            p.ok.to_string(),
            opt(p.tae),
            opt(p.kl),
            opt(p.frobenius),
        ];
        rec.extend(labels.iter().map(|l| opt(p.recovery_error.get(l).copied())));
        w.write_record(&rec).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn save_summary(path: &Path, statuses: &[MethodStatus]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    w.write_record(["method", "ok", "tae", "kl", "frobenius"])
        .map_err(|e| Error::parse(path, e))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for s in statuses {
        let m = s.metrics.as_ref();
        w.write_record([
            s.method.clone(),
            s.ok.to_string(),
            opt(m.map(|m| m.tae)),
            opt(m.and_then(|m| m.kl)),
            opt(m.and_then(|m| m.frobenius)),
        ])
        .map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs every requested method (and the τ sweep, if configured) and writes
/// all outputs under `cfg.output`. Errors while loading inputs or
/// estimating the shared priors abort the run; a failing method is recorded
/// in the report and the others continue.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let settings = Settings::from_config(cfg)?;
    let methods = cfg.method_list()?;
    let out = &cfg.output;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let priors = estimate_priors(&inputs, &settings)?;
    let statuses: Vec<MethodStatus> = methods
        .par_iter()
        .map(|&m| {
            run_method(m, &inputs, &priors, &settings)
                .and_then(|r| write_method(out, &inputs, &priors, &r))
                .unwrap_or_else(|e| status_for_error(m, &e))
        })
        .collect();

    let sweep = match &cfg.tau_sweep {
        Some(grid) => {
            let tracked = tracked_categories(&inputs.schema, &inputs.d1, &cfg.track)?;
            let points = tau_sweep(&inputs, &priors, &settings, grid, &tracked);
            save_sweep(&out.join("tau_sweep.csv"), &points)?;
            points
        }
        None => Vec::new(),
    };
    save_summary(&out.join("summary.csv"), &statuses)?;
    let report = RunReport {
        population: settings.population,
        tau: settings.tau,
        seed: settings.seed,
        methods: statuses,
        tau_sweep: sweep,
    };
    report.save(out.join("report.json"))?;
    Ok(report)
}

/// Batch file listing one run configuration per location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(rename = "location")]
    pub locations: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub config: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.locations {
            if e.config.is_relative() {
                e.config = base.join(&e.config);
            }
        }
        Ok(m)
    }
}

/// Runs each location of a manifest independently; `adjust` may override
/// configuration fields (e.g. from the command line) before each run.
pub fn run_manifest(
    manifest: &Manifest,
    adjust: impl Fn(&mut RunConfig) + Sync,
) -> Vec<(String, Result<RunReport>)> {
    manifest
        .locations
        .par_iter()
        .map(|e| {
            let result = RunConfig::load(&e.config).and_then(|mut cfg| {
                adjust(&mut cfg);
                run(&cfg)
            });
            (e.name.clone(), result)
        })
        .collect()
}
