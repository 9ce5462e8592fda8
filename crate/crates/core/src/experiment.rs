//! Replication grids: generate, diagnose, estimate, sample and measure, with
//! one JSON line per replication and CSV summaries built from those lines.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::debias::{one_step, two_step_zz, DebiasOptions, EstimateReport, Method};
use crate::diagnostics::{diagnose, verify_lemma4, Certificate, KappaConfig};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::metrics::{self, coverage, credible_interval, distance_to_standard_normal, CoverageItem, CoverageReport};
use crate::model::{generate, BetaPattern, DesignKind, GeneratorSpec, RegressionInstance};
use crate::normal;
use crate::posterior::{run_chain, standardized_draws, summarize, MoveProbs, PosteriorConfig};
use crate::rng::derive_seed;
use crate::solver::{default_eta, PenaltySpec};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Zz,
    OneStep,
    Bayes,
}

impl MethodName {
    pub const ALL: [MethodName; 3] = [MethodName::Zz, MethodName::OneStep, MethodName::Bayes];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Zz => "zz",
            MethodName::OneStep => "one_step",
            MethodName::Bayes => "bayes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    pub p: usize,
    pub s_star: usize,
}

/// Posterior settings; `None` fields take their instance-dependent default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PosteriorSettings {
    pub d: f64,
    pub sigma_n_sq: Option<f64>,
    pub eta_n: Option<f64>,
    pub s_max: Option<usize>,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub move_probs: MoveProbs,
    pub proposal_scale: f64,
    pub enumeration_budget: u64,
    pub audit_every: usize,
    pub stuck_limit: usize,
    /// Start the chain at the one-step support.
    pub warm_start: bool,
}

impl Default for PosteriorSettings {
    fn default() -> Self {
        Self {
            d: 2.0,
            sigma_n_sq: None,
            eta_n: None,
            s_max: None,
            n_iter: 10_000,
            burn_in: 2_000,
            thin: 1,
            move_probs: MoveProbs::default(),
            proposal_scale: 1.0,
            enumeration_budget: 50_000,
            audit_every: 0,
            stuck_limit: 10_000,
            warm_start: true,
        }
    }
}

impl PosteriorSettings {
    pub fn resolve(
        &self,
        instance: &RegressionInstance,
        diagnostics: &crate::diagnostics::DesignDiagnostics,
        seed: u64,
    ) -> PosteriorConfig {
        let mut cfg = PosteriorConfig::defaults_for(instance, diagnostics);
        cfg.d = self.d;
        if let Some(v) = self.sigma_n_sq {
            cfg.sigma_n_sq = v;
        }
        if let Some(v) = self.eta_n {
            cfg.eta_n = v;
        }
        if let Some(v) = self.s_max {
            cfg.s_max = v.min(instance.p - 1);
        }
        cfg.chain.n_iter = self.n_iter;
        cfg.chain.burn_in = self.burn_in;
        cfg.chain.thin = self.thin;
        cfg.chain.seed = seed;
        cfg.move_probs = self.move_probs;
        cfg.proposal_scale = self.proposal_scale;
        cfg.enumeration_budget = self.enumeration_budget;
        cfg.audit_every = self.audit_every;
        cfg.stuck_limit = self.stuck_limit;
        cfg
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticSettings {
    pub c1: f64,
    pub compute_kappa: bool,
    pub kappa: KappaConfig,
}

impl Default for DiagnosticSettings {
    fn default() -> Self {
        Self {
            c1: 1.0,
            compute_kappa: false,
            kappa: KappaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub grid: Vec<GridPoint>,
    pub methods: Vec<MethodName>,
    pub reps: usize,
    pub base_seed: u64,
    pub beta_pattern: BetaPattern,
    pub design_kind: DesignKind,
    /// Penalty `eta = A n lambda_n` for both estimators.
    pub eta_multiple: f64,
    /// `z_quantile` is overwritten from `level`.
    pub debias: DebiasOptions,
    pub posterior: PosteriorSettings,
    pub diagnostics: DiagnosticSettings,
    /// Nominal level of both interval types.
    pub level: f64,
    /// Radius multiple for the posterior l1 mass outside `c3 s* lambda_n`.
    pub c3: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: Vec::new(),
            methods: vec![MethodName::Zz, MethodName::OneStep, MethodName::Bayes],
            reps: 1,
            base_seed: 0,
            beta_pattern: BetaPattern::EqualMagnitude { level: 1.0 },
            design_kind: DesignKind::IidStandardNormal,
            eta_multiple: 2.0,
            debias: DebiasOptions::default(),
            posterior: PosteriorSettings::default(),
            diagnostics: DiagnosticSettings::default(),
            level: 0.95,
            c3: 8.0,
            output_dir: PathBuf::from("debias-out"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if !(self.eta_multiple > 0.0) {
            return Err(Error::Config("eta_multiple must be positive".into()));
        }
        for g in &self.grid {
            self.spec_for(g, 0).validate()?;
        }
        let s = &self.posterior;
        if s.thin == 0 || !(s.d > 0.0) || !(s.proposal_scale > 0.0) {
            return Err(Error::Config("posterior settings need thin >= 1, D > 0, proposal_scale > 0".into()));
        }
        let probs = [s.move_probs.add, s.move_probs.remove, s.move_probs.swap, s.move_probs.within];
        if probs.iter().any(|v| !(*v >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config("move probabilities must be >= 0 and sum to 1".into()));
        }
        Ok(())
    }

    fn has(&self, m: MethodName) -> bool {
        self.methods.contains(&m)
    }

    fn spec_for(&self, g: &GridPoint, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            n: g.n,
            p: g.p,
            s_star: g.s_star,
            beta_pattern: self.beta_pattern.clone(),
            design_kind: self.design_kind.clone(),
            seed,
        }
    }
}

/// The replication seed, a pure function of the base seed, grid point and rep.
pub fn record_seed(base_seed: u64, point: &GridPoint, rep: usize) -> u64 {
    derive_seed(
        base_seed,
        &format!("rep/{}/{}/{}", point.n, point.p, point.s_star),
        rep as u64,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub beta1_hat: f64,
    pub remainder_scaled: Option<f64>,
    pub bias_term: Option<f64>,
    /// `|beta1_hat - beta_1 - oracle_term - bias_term|`.
    pub decomposition_residual: Option<f64>,
    pub interval: (f64, f64),
    pub covered: Option<bool>,
    pub l1_error: Option<f64>,
    pub l1_holds: Option<bool>,
    pub cone_condition: Option<bool>,
    pub eta: Option<f64>,
    pub solver_iterations: usize,
    pub solver_kkt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesRecord {
    /// The efficient estimator the draws are standardized around.
    pub center: MethodName,
    pub beta1_center: f64,
    pub posterior_mean_b1: f64,
    /// `sqrt(n) (posterior mean - beta_1 - oracle_term)`.
    pub remainder_scaled: Option<f64>,
    pub nu_mean: f64,
    pub nu_max_abs: f64,
    pub tau_n: f64,
    pub l1_contraction_mass: Option<f64>,
    pub w1: f64,
    pub ks: f64,
    pub bl_upper: f64,
    pub n_samples: usize,
    pub credible: (f64, f64),
    pub covered: Option<bool>,
    pub mean_model_size: f64,
    /// Acceptance rates for add, remove, swap, within.
    pub acceptance: [f64; 4],
    pub within_scale: f64,
    pub audit_max_residual: Option<f64>,
    pub support_counts_exact: bool,
    pub sigma_n_sq: f64,
    pub eta_n: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSummary {
    pub kappa0_x: f64,
    pub kappa0_x_exact: bool,
    pub kappa0_w: f64,
    pub kappa0_w_exact: bool,
    pub rec_estimate: f64,
    pub lemma4_slack: f64,
    pub sparsity_level_k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub lambda_n: f64,
    pub max_abs_gamma: f64,
    pub assumption1_margin: f64,
    pub dim_ratio: f64,
    pub kappa: Option<KappaSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub n: usize,
    pub p: usize,
    pub s_star: usize,
    pub rep: usize,
    pub seed: u64,
    pub status: RecordStatus,
    pub error: Option<String>,
    pub level: f64,
    pub beta1_true: Option<f64>,
    pub oracle_term: Option<f64>,
    pub x1_norm: Option<f64>,
    pub zz: Option<MethodRecord>,
    pub one_step: Option<MethodRecord>,
    pub bayes: Option<BayesRecord>,
    pub diagnostics: Option<DiagnosticsRecord>,
    pub wall_time_ms: f64,
}

impl ExperimentRecord {
    pub fn point(&self) -> GridPoint {
        GridPoint {
            n: self.n,
            p: self.p,
            s_star: self.s_star,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }

    pub fn method(&self, m: Method) -> Option<&MethodRecord> {
        match m {
            Method::TwoStepZz => self.zz.as_ref(),
            Method::OneStep => self.one_step.as_ref(),
        }
    }

    /// The record as JSON with the wall-time field zeroed.
    pub fn canonical_json(&self) -> String {
        let mut r = self.clone();
        r.wall_time_ms = 0.0;
        serde_json::to_string(&r).expect("records serialize")
    }

    fn empty(point: &GridPoint, rep: usize, seed: u64, level: f64) -> Self {
        Self {
            n: point.n,
            p: point.p,
            s_star: point.s_star,
            rep,
            seed,
            status: RecordStatus::Ok,
            error: None,
            level,
            beta1_true: None,
            oracle_term: None,
            x1_norm: None,
            zz: None,
            one_step: None,
            bayes: None,
            diagnostics: None,
            wall_time_ms: 0.0,
        }
    }
}

fn method_record(report: &EstimateReport, beta1: Option<f64>) -> MethodRecord {
    let decomposition_residual = match (beta1, report.oracle_term, report.bias_term) {
        (Some(b), Some(o), Some(t)) => Some((report.beta1_hat - b - o - t).abs()),
        _ => None,
    };
    MethodRecord {
        beta1_hat: report.beta1_hat,
        remainder_scaled: report.remainder_scaled,
        bias_term: report.bias_term,
        decomposition_residual,
        interval: report.interval_95,
        covered: beta1.map(|b| report.interval_95.0 <= b && b <= report.interval_95.1),
        l1_error: report.l1_control.map(|c| c.l1_error),
        l1_holds: report.l1_control.map(|c| c.holds),
        cone_condition: report.cone_condition,
        eta: report.eta,
        solver_iterations: report.solver_iterations,
        solver_kkt: report.solver_kkt,
    }
}

fn fill_record(config: &ExperimentConfig, rec: &mut ExperimentRecord) -> Result<()> {
    let point = rec.point();
    let seed = rec.seed;
    let instance = generate(&config.spec_for(&point, seed))?;
    let diag = diagnose(&instance, config.diagnostics.c1)?;
    let beta1 = instance.beta1_true();
    rec.beta1_true = beta1;
    rec.x1_norm = Some(diag.x1_norm);
    rec.oracle_term = instance
        .noise()
        .map(|e| dot(instance.column(0), e.as_slice()) / (diag.x1_norm * diag.x1_norm));

    let kappa = if config.diagnostics.compute_kappa {
        let mut kc = config.diagnostics.kappa;
        kc.compat.seed = derive_seed(seed, "kappa", 0);
        let k = verify_lemma4(&instance, &diag, &kc)?;
        Some(KappaSummary {
            kappa0_x: k.kappa0_x.value,
            kappa0_x_exact: k.kappa0_x.certificate == Certificate::ExactEnumeration,
            kappa0_w: k.kappa0_w.value,
            kappa0_w_exact: k.kappa0_w.certificate == Certificate::ExactEnumeration,
            rec_estimate: k.rec_estimate.value,
            lemma4_slack: k.lemma4_slack,
            sparsity_level_k: k.sparsity_level_k,
        })
    } else {
        None
    };
    rec.diagnostics = Some(DiagnosticsRecord {
        lambda_n: diag.lambda_n,
        max_abs_gamma: diag.max_abs_gamma(),
        assumption1_margin: diag.assumption1_margin,
        dim_ratio: diag.dim_ratio,
        kappa,
    });

    let mut opts = config.debias;
    opts.z_quantile = normal::quantile(0.5 + 0.5 * config.level);
    let eta = default_eta(instance.n, instance.p, config.eta_multiple);

    if config.has(MethodName::Zz) {
        let r = two_step_zz(&instance, &PenaltySpec::lasso(instance.p, eta), &opts)?;
        rec.zz = Some(method_record(&r, beta1));
    }
    let one = if config.has(MethodName::OneStep) || config.has(MethodName::Bayes) {
        Some(one_step(&instance, eta, &opts)?)
    } else {
        None
    };
    if config.has(MethodName::OneStep) {
        rec.one_step = one.as_ref().map(|r| method_record(r, beta1));
    }

    if config.has(MethodName::Bayes) {
        let est = one.expect("computed above");
        let mut pc = config.posterior.resolve(&instance, &diag, derive_seed(seed, "posterior", 0));
        if config.posterior.warm_start {
            let sol = est.solution.as_deref().expect("one-step carries its solution");
            let mut init: Vec<usize> = (1..instance.p).filter(|&j| sol[j] != 0.0).collect();
            init.truncate(pc.s_max);
            pc.init_support = Some(init);
        }
        let out = run_chain(&instance, &diag, &pc)?;
        let draws = standardized_draws(&out.samples, diag.x1_norm, est.beta1_hat);
        let dist = distance_to_standard_normal(&draws)?;
        let b1: Vec<f64> = out.samples.iter().map(|s| s.b1).collect();
        let credible = credible_interval(&b1, config.level)?;
        let summary = summarize(&out.samples, &instance, &diag, &est, &pc, config.c3)?;
        let mean_b1 = b1.iter().sum::<f64>() / b1.len() as f64;
        let mean_size = out.samples.iter().map(|s| s.support.len()).sum::<usize>() as f64 / out.samples.len() as f64;
        let acceptance = std::array::from_fn(|k| {
            if out.stats.proposed[k] == 0 {
                0.0
            } else {
                out.stats.accepted[k] as f64 / out.stats.proposed[k] as f64
            }
        });
        rec.bayes = Some(BayesRecord {
            center: MethodName::OneStep,
            beta1_center: est.beta1_hat,
            posterior_mean_b1: mean_b1,
            remainder_scaled: match (beta1, rec.oracle_term) {
                (Some(b), Some(o)) => Some((instance.n as f64).sqrt() * (mean_b1 - b - o)),
                _ => None,
            },
            nu_mean: summary.nu_mean(),
            nu_max_abs: summary.nu_max_abs(),
            tau_n: summary.tau_n,
            l1_contraction_mass: summary.l1_contraction_mass,
            w1: dist.w1,
            ks: dist.ks,
            bl_upper: dist.bl_upper,
            n_samples: dist.n_samples,
            credible,
            covered: beta1.map(|b| credible.0 <= b && b <= credible.1),
            mean_model_size: mean_size,
            acceptance,
            within_scale: out.within_scale,
            audit_max_residual: (!out.audit.is_empty()).then(|| out.max_audit_residual()),
            support_counts_exact: out.support_counts_exact,
            sigma_n_sq: pc.sigma_n_sq,
            eta_n: pc.eta_n,
            d: pc.d,
        });
    }
    Ok(())
}

/// Runs one replication. Failures, including panics, become error rows.
pub fn run_replication(config: &ExperimentConfig, point: &GridPoint, rep: usize) -> ExperimentRecord {
    let start = Instant::now();
    let seed = record_seed(config.base_seed, point, rep);
    let mut rec = ExperimentRecord::empty(point, rep, seed, config.level);
    let outcome = catch_unwind(AssertUnwindSafe(|| fill_record(config, &mut rec)));
    let message = match outcome {
        Ok(Ok(())) => None,
        Ok(Err(e)) => Some(e.to_string()),
        Err(panic) => Some(
            panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "replication panicked".into()),
        ),
    };
    if let Some(msg) = message {
        log::warn!("replication n={} p={} s={} rep={rep} failed: {msg}", point.n, point.p, point.s_star);
        rec = ExperimentRecord::empty(point, rep, seed, config.level);
        rec.status = RecordStatus::Error;
        rec.error = Some(msg);
    }
    rec.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    rec
}

pub fn records_path(dir: &Path) -> PathBuf {
    dir.join(RECORDS_FILE)
}

/// Reads every complete record line; a torn final line is ignored.
pub fn load_records(dir: &Path) -> Result<Vec<ExperimentRecord>> {
    let path = records_path(dir);
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(&path, e)),
    };
    let mut out = Vec::new();
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(&path, e))?;
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) if i == last => log::warn!("ignoring torn final record in {}: {e}", path.display()),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

/// Truncates a torn final line so appends start on a fresh line.
fn repair_tail(path: &Path) -> Result<()> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(Error::io(path, e)),
    };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
    f.set_len(keep as u64).map_err(|e| Error::io(path, e))
}

fn sort_records(records: &mut [ExperimentRecord], grid: &[GridPoint]) {
    let order = |g: GridPoint| grid.iter().position(|x| *x == g).unwrap_or(usize::MAX);
    records.sort_by_key(|r| (order(r.point()), r.point(), r.rep));
}

/// Runs every missing `(grid point, rep)` pair, appending records as they
/// finish, then writes the summary tables. Returns all records for the grid.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = records_path(dir);
    repair_tail(&path)?;
    let existing = load_records(dir)?;
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let cfg_path = dir.join(CONFIG_FILE);
    fs::write(&cfg_path, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(&cfg_path, e))?;

    let done: HashSet<(GridPoint, usize)> = existing.iter().map(|r| (r.point(), r.rep)).collect();
    let todo: Vec<(GridPoint, usize)> = config
        .grid
        .iter()
        .flat_map(|g| (0..config.reps).map(move |rep| (*g, rep)))
        .filter(|key| !done.contains(key))
        .collect();
    log::info!(
        "{} replications to run, {} already present in {}",
        todo.len(),
        done.len(),
        path.display()
    );

    let appender = Mutex::new(file);
    let fresh: Vec<ExperimentRecord> = todo
        .par_iter()
        .map(|(g, rep)| {
            let rec = run_replication(config, g, *rep);
            let mut line = serde_json::to_string(&rec)?;
            line.push('\n');
            let mut f = appender.lock().expect("appender lock");
            f.write_all(line.as_bytes())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(&path, e))?;
            Ok(rec)
        })
        .collect::<Result<_>>()?;

    let grid: HashSet<GridPoint> = config.grid.iter().copied().collect();
    let mut all: Vec<ExperimentRecord> = existing
        .into_iter()
        .filter(|r| grid.contains(&r.point()) && r.rep < config.reps)
        .chain(fresh)
        .collect();
    sort_records(&mut all, &config.grid);
    report(dir)?;
    Ok(all)
}

/// Coverage of the given estimator's interval, paired with the posterior
/// credible interval when every used record carries one. Error rows and
/// records without the method or without truth are skipped.
pub fn coverage_study(records: &[ExperimentRecord], level: f64, method: Method) -> CoverageReport {
    let items: Vec<CoverageItem> = records
        .iter()
        .filter(|r| r.is_ok())
        .filter_map(|r| {
            let m = r.method(method)?;
            Some(CoverageItem {
                truth: r.beta1_true?,
                freq: m.interval,
                bayes: r.bayes.as_ref().map(|b| b.credible),
            })
        })
        .collect();
    coverage(&items, level)
}

#[derive(Debug, Clone, Serialize)]
pub struct EfficiencyRow {
    pub n: usize,
    pub p: usize,
    pub s_star: usize,
    pub method: &'static str,
    pub count: usize,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub median_abs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormalityRow {
    pub n: usize,
    pub p: usize,
    pub s_star: usize,
    pub count: usize,
    pub w1_median: f64,
    pub w1_mean: f64,
    pub w1_max: f64,
    pub ks_median: f64,
    pub bl_upper_median: f64,
    pub nu_abs_mean: f64,
    pub tau_n_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoverageRow {
    pub n: usize,
    pub p: usize,
    pub s_star: usize,
    pub method: &'static str,
    pub nominal: f64,
    pub coverage: f64,
    pub n_reps: usize,
    pub avg_width: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsRow {
    pub n: usize,
    pub p: usize,
    pub s_star: usize,
    pub count: usize,
    pub lambda_n: f64,
    pub max_abs_gamma_median: f64,
    pub assumption1_margin_median: f64,
    pub assumption1_holds_frac: f64,
    pub kappa0_x_median: Option<f64>,
    pub kappa0_w_median: Option<f64>,
    pub lemma4_slack_min: Option<f64>,
    pub rec_estimate_median: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub p: usize,
    pub s_star: usize,
    pub method: &'static str,
    pub w1: Option<f64>,
    pub ks: Option<f64>,
    pub coverage: Option<f64>,
}

const EFFICIENCY_HEADER: &[&str] = &[
    "n", "p", "s_star", "method", "count", "q05", "q25", "median", "q75", "q95", "median_abs",
];
const NORMALITY_HEADER: &[&str] = &[
    "n",
    "p",
    "s_star",
    "count",
    "w1_median",
    "w1_mean",
    "w1_max",
    "ks_median",
    "bl_upper_median",
    "nu_abs_mean",
    "tau_n_mean",
];
const COVERAGE_HEADER: &[&str] = &["n", "p", "s_star", "method", "nominal", "coverage", "n_reps", "avg_width"];
const DIAGNOSTICS_HEADER: &[&str] = &[
    "n",
    "p",
    "s_star",
    "count",
    "lambda_n",
    "max_abs_gamma_median",
    "assumption1_margin_median",
    "assumption1_holds_frac",
    "kappa0_x_median",
    "kappa0_w_median",
    "lemma4_slack_min",
    "rec_estimate_median",
];
const SUMMARY_HEADER: &[&str] = &["n", "p", "s_star", "method", "w1", "ks", "coverage"];

#[derive(Debug, Clone)]
pub struct ReportTables {
    pub efficiency: Vec<EfficiencyRow>,
    pub normality: Vec<NormalityRow>,
    pub coverage: Vec<CoverageRow>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub summary: Vec<SummaryRow>,
    pub error_rows: usize,
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn median(v: Vec<f64>) -> f64 {
    metrics::quantile_sorted(&sorted(v), 0.5)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn opt_median(v: Vec<f64>) -> Option<f64> {
    (!v.is_empty()).then(|| median(v))
}

/// Methods present in the records, in canonical order.
fn methods_present(records: &[&ExperimentRecord]) -> Vec<MethodName> {
    MethodName::ALL
        .into_iter()
        .filter(|m| {
            records.iter().any(|r| match m {
                MethodName::Zz => r.zz.is_some(),
                MethodName::OneStep => r.one_step.is_some(),
                MethodName::Bayes => r.bayes.is_some(),
            })
        })
        .collect()
}

/// Builds all tables from the records in `dir` and writes them as CSV.
pub fn report(dir: &Path) -> Result<ReportTables> {
    let records = load_records(dir)?;
    if records.is_empty() {
        return Err(Error::EmptyInput(dir.to_path_buf()));
    }
    let error_rows = records.iter().filter(|r| !r.is_ok()).count();
    let mut by_point: BTreeMap<GridPoint, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in &records {
        by_point.entry(r.point()).or_default();
        if r.is_ok() {
            by_point.get_mut(&r.point()).expect("inserted").push(r);
        }
    }
    let all_ok: Vec<&ExperimentRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let methods = methods_present(&all_ok);

    let mut t = ReportTables {
        efficiency: Vec::new(),
        normality: Vec::new(),
        coverage: Vec::new(),
        diagnostics: Vec::new(),
        summary: Vec::new(),
        error_rows,
    };
    for (g, recs) in &by_point {
        let owned: Vec<ExperimentRecord> = recs.iter().map(|r| (*r).clone()).collect();
        let level = recs.first().map_or(0.95, |r| r.level);
        for &m in &methods {
            let remainders: Vec<f64> = recs
                .iter()
                .filter_map(|r| match m {
                    MethodName::Zz => r.zz.as_ref()?.remainder_scaled,
                    MethodName::OneStep => r.one_step.as_ref()?.remainder_scaled,
                    MethodName::Bayes => r.bayes.as_ref()?.remainder_scaled,
                })
                .collect();
            if !remainders.is_empty() {
                let s = sorted(remainders.clone());
                t.efficiency.push(EfficiencyRow {
                    n: g.n,
                    p: g.p,
                    s_star: g.s_star,
                    method: m.as_str(),
                    count: s.len(),
                    q05: metrics::quantile_sorted(&s, 0.05),
                    q25: metrics::quantile_sorted(&s, 0.25),
                    median: metrics::quantile_sorted(&s, 0.5),
                    q75: metrics::quantile_sorted(&s, 0.75),
                    q95: metrics::quantile_sorted(&s, 0.95),
                    median_abs: median(remainders.iter().map(|v| v.abs()).collect()),
                });
            }

            let cov: Option<(f64, usize, f64)> = match m {
                MethodName::Zz | MethodName::OneStep => {
                    let method = if m == MethodName::Zz { Method::TwoStepZz } else { Method::OneStep };
                    let c = coverage_study(&owned, level, method);
                    (c.n_reps > 0).then_some((c.empirical_freq, c.n_reps, c.avg_widths.0))
                }
                MethodName::Bayes => {
                    let items: Vec<CoverageItem> = recs
                        .iter()
                        .filter_map(|r| {
                            let b = r.bayes.as_ref()?;
                            Some(CoverageItem {
                                truth: r.beta1_true?,
                                freq: b.credible,
                                bayes: None,
                            })
                        })
                        .collect();
                    (!items.is_empty()).then(|| {
                        let c = coverage(&items, level);
                        (c.empirical_freq, c.n_reps, c.avg_widths.0)
                    })
                }
            };
            if let Some((c, k, w)) = cov {
                t.coverage.push(CoverageRow {
                    n: g.n,
                    p: g.p,
                    s_star: g.s_star,
                    method: m.as_str(),
                    nominal: level,
                    coverage: c,
                    n_reps: k,
                    avg_width: w,
                });
            }

            let (w1, ks) = match m {
                MethodName::Bayes => {
                    let b: Vec<&BayesRecord> = recs.iter().filter_map(|r| r.bayes.as_ref()).collect();
                    (
                        opt_median(b.iter().map(|b| b.w1).collect()),
                        opt_median(b.iter().map(|b| b.ks).collect()),
                    )
                }
                _ => {
                    let z: Vec<f64> = recs
                        .iter()
                        .filter_map(|r| {
                            let mr = if m == MethodName::Zz { r.zz.as_ref()? } else { r.one_step.as_ref()? };
                            Some(r.x1_norm? * (mr.beta1_hat - r.beta1_true?))
                        })
                        .collect();
                    match distance_to_standard_normal(&z) {
                        Ok(d) => (Some(d.w1), Some(d.ks)),
                        Err(_) => (None, None),
                    }
                }
            };
            t.summary.push(SummaryRow {
                n: g.n,
                p: g.p,
                s_star: g.s_star,
                method: m.as_str(),
                w1,
                ks,
                coverage: cov.map(|c| c.0),
            });
        }

        let bayes: Vec<&BayesRecord> = recs.iter().filter_map(|r| r.bayes.as_ref()).collect();
        if !bayes.is_empty() {
            let w1: Vec<f64> = bayes.iter().map(|b| b.w1).collect();
            t.normality.push(NormalityRow {
                n: g.n,
                p: g.p,
                s_star: g.s_star,
                count: bayes.len(),
                w1_median: median(w1.clone()),
                w1_mean: mean(&w1),
                w1_max: w1.iter().copied().fold(0.0, f64::max),
                ks_median: median(bayes.iter().map(|b| b.ks).collect()),
                bl_upper_median: median(bayes.iter().map(|b| b.bl_upper).collect()),
                nu_abs_mean: mean(&bayes.iter().map(|b| b.nu_mean.abs()).collect::<Vec<_>>()),
                tau_n_mean: mean(&bayes.iter().map(|b| b.tau_n).collect::<Vec<_>>()),
            });
        }

        let diags: Vec<&DiagnosticsRecord> = recs.iter().filter_map(|r| r.diagnostics.as_ref()).collect();
        if !diags.is_empty() {
            let kappas: Vec<&KappaSummary> = diags.iter().filter_map(|d| d.kappa.as_ref()).collect();
            t.diagnostics.push(DiagnosticsRow {
                n: g.n,
                p: g.p,
                s_star: g.s_star,
                count: diags.len(),
                lambda_n: diags[0].lambda_n,
                max_abs_gamma_median: median(diags.iter().map(|d| d.max_abs_gamma).collect()),
                assumption1_margin_median: median(diags.iter().map(|d| d.assumption1_margin).collect()),
                assumption1_holds_frac: diags.iter().filter(|d| d.assumption1_margin <= 0.0).count() as f64
                    / diags.len() as f64,
                kappa0_x_median: opt_median(kappas.iter().map(|k| k.kappa0_x).collect()),
                kappa0_w_median: opt_median(kappas.iter().map(|k| k.kappa0_w).collect()),
                lemma4_slack_min: kappas.iter().map(|k| k.lemma4_slack).reduce(f64::min),
                rec_estimate_median: opt_median(kappas.iter().map(|k| k.rec_estimate).collect()),
            });
        }
    }

    write_csv(&dir.join("efficiency.csv"), EFFICIENCY_HEADER, &t.efficiency)?;
    write_csv(&dir.join("normality.csv"), NORMALITY_HEADER, &t.normality)?;
    write_csv(&dir.join("coverage.csv"), COVERAGE_HEADER, &t.coverage)?;
    write_csv(&dir.join("diagnostics.csv"), DIAGNOSTICS_HEADER, &t.diagnostics)?;
    write_csv(&dir.join("summary.csv"), SUMMARY_HEADER, &t.summary)?;
    Ok(t)
}
