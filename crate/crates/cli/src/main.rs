use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use debias_core::debias::{one_step, two_step_zz, DebiasOptions, EstimateReport};
use debias_core::diagnostics::{diagnose, verify_lemma4, KappaConfig};
use debias_core::experiment::{self, ExperimentConfig, GridPoint, MethodName};
use debias_core::io::{load_instance, save_instance};
use debias_core::metrics::{credible_interval, distance_to_standard_normal, DistanceReport};
use debias_core::model::{generate, BetaPattern, DesignKind, GeneratorSpec, RegressionInstance};
use debias_core::normal;
use debias_core::posterior::{run_chain, standardized_draws, summarize, MoveStats, PosteriorConfig};
use debias_core::solver::{default_eta, PenaltySpec};

const OUTPUT_DIR_ENV: &str = "DEBIAS_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "debias", version, about = "De-biased and Bayesian inference for one regression coordinate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate an instance and save it as x.csv, y.csv and meta.json.
    Generate(GenerateArgs),
    /// Design diagnostics, optionally with compatibility and REC constants.
    Diagnose(DiagnoseArgs),
    /// De-biased estimate of the first coefficient.
    Estimate(EstimateArgs),
    /// Posterior samples (JSON lines) and a JSON summary.
    Posterior(PosteriorArgs),
    /// Run a replication grid.
    Experiment(ExperimentArgs),
    /// Rebuild the CSV tables from an output directory.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PatternArg {
    EqualMagnitude,
    Decaying,
    FixedValues,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignArg {
    Iid,
    IdentityScaled,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    s_star: usize,
    #[arg(long, value_enum, default_value = "equal-magnitude")]
    pattern: PatternArg,
    /// Signal level for equal-magnitude patterns.
    #[arg(long, default_value_t = 1.0)]
    level: f64,
    /// Comma-separated coefficients for fixed-values patterns.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long, value_enum, default_value = "iid")]
    design: DesignArg,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    /// Also compute compatibility and REC constants.
    #[arg(long)]
    kappa: bool,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 3.0)]
    c2: f64,
    #[arg(long, default_value_t = 200_000)]
    budget: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Zz,
    OneStep,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Penalty as a multiple of n * lambda_n.
    #[arg(long, default_value_t = 2.0)]
    eta_multiple: f64,
    /// Absolute penalty; overrides --eta-multiple.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PosteriorArgs {
    #[arg(long)]
    instance: PathBuf,
    /// JSON-lines file for the kept samples.
    #[arg(long)]
    samples: PathBuf,
    /// JSON file for the summary.
    #[arg(long)]
    summary: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    n_iter: usize,
    #[arg(long, default_value_t = 2_000)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    thin: usize,
    #[arg(long, default_value_t = 2.0)]
    d: f64,
    #[arg(long)]
    eta_n: Option<f64>,
    #[arg(long)]
    sigma_n_sq: Option<f64>,
    #[arg(long)]
    s_max: Option<usize>,
    /// Centering estimator for the standardized draws.
    #[arg(long, value_enum, default_value = "one-step")]
    center: MethodArg,
    #[arg(long, default_value_t = 2.0)]
    eta_multiple: f64,
    #[arg(long, default_value_t = 8.0)]
    c3: f64,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    audit_every: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML file; its keys override the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    /// Grid points as n,p,s triples separated by ';'.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<Grid>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    methods: Vec<MethodName>,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    compute_kappa: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: PathBuf,
}

#[derive(Clone)]
struct Grid(Vec<GridPoint>);

fn parse_grid(s: &str) -> std::result::Result<Grid, String> {
    s.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let v: Vec<usize> = t
                .split(',')
                .map(|x| x.trim().parse::<usize>().map_err(|e| format!("{t}: {e}")))
                .collect::<std::result::Result<_, _>>()?;
            match v.as_slice() {
                [n, p, s_star] => Ok(GridPoint {
                    n: *n,
                    p: *p,
                    s_star: *s_star,
                }),
                _ => Err(format!("grid point '{t}' is not an n,p,s triple")),
            }
        })
        .collect::<std::result::Result<_, _>>()
        .map(Grid)
}

fn parse_method(s: &str) -> std::result::Result<MethodName, String> {
    match s.trim().replace('-', "_").as_str() {
        "zz" => Ok(MethodName::Zz),
        "one_step" => Ok(MethodName::OneStep),
        "bayes" => Ok(MethodName::Bayes),
        other => Err(format!("unknown method '{other}' (zz, one_step, bayes)")),
    }
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load(dir: &Path) -> Result<RegressionInstance> {
    load_instance(dir).with_context(|| format!("loading instance from {}", dir.display()))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let beta_pattern = match a.pattern {
        PatternArg::EqualMagnitude => BetaPattern::EqualMagnitude { level: a.level },
        PatternArg::Decaying => BetaPattern::Decaying,
        PatternArg::FixedValues => BetaPattern::FixedValues { values: a.values },
    };
    let design_kind = match a.design {
        DesignArg::Iid => DesignKind::IidStandardNormal,
        DesignArg::IdentityScaled => DesignKind::IdentityScaled,
    };
    let instance = generate(&GeneratorSpec {
        n: a.n,
        p: a.p,
        s_star: a.s_star,
        beta_pattern,
        design_kind,
        seed: a.seed,
    })?;
    save_instance(&instance, &a.out)?;
    log::info!("wrote {}x{} instance to {}", a.n, a.p, a.out.display());
    Ok(())
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<()> {
    let instance = load(&a.instance)?;
    let diag = diagnose(&instance, a.c1)?;
    let kappa = if a.kappa {
        let mut cfg = KappaConfig {
            delta: a.delta,
            c2: a.c2,
            ..KappaConfig::default()
        };
        cfg.compat.budget = a.budget;
        cfg.compat.seed = a.seed;
        Some(verify_lemma4(&instance, &diag, &cfg)?)
    } else {
        None
    };
    write_json(&diag.report(&instance, kappa), a.out.as_deref())
}

fn estimate(instance: &RegressionInstance, method: MethodArg, eta: f64, level: f64) -> Result<EstimateReport> {
    let opts = DebiasOptions {
        z_quantile: normal::quantile(0.5 + 0.5 * level),
        ..DebiasOptions::default()
    };
    Ok(match method {
        MethodArg::Zz => two_step_zz(instance, &PenaltySpec::lasso(instance.p, eta), &opts)?,
        MethodArg::OneStep => one_step(instance, eta, &opts)?,
    })
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    if !(a.level > 0.0 && a.level < 1.0) {
        bail!("--level must lie in (0, 1)");
    }
    let instance = load(&a.instance)?;
    let eta = a.eta.unwrap_or_else(|| default_eta(instance.n, instance.p, a.eta_multiple));
    let report = estimate(&instance, a.method, eta, a.level)?;
    write_json(&report, a.out.as_deref())
}

#[derive(Serialize)]
struct PosteriorReport {
    config: PosteriorConfig,
    center_method: &'static str,
    beta1_center: f64,
    nu_mean: f64,
    nu_max_abs: f64,
    tau_n: f64,
    l1_contraction_mass: Option<f64>,
    c3: f64,
    distance: DistanceReport,
    credible_interval: (f64, f64),
    level: f64,
    stats: MoveStats,
    within_scale: f64,
    audit_max_residual: Option<f64>,
    support_counts_exact: bool,
}

fn cmd_posterior(a: PosteriorArgs) -> Result<()> {
    let instance = load(&a.instance)?;
    let diag = diagnose(&instance, 1.0)?;
    let eta = default_eta(instance.n, instance.p, a.eta_multiple);
    let est = estimate(&instance, a.center, eta, a.level)?;
    let mut cfg = PosteriorConfig::defaults_for(&instance, &diag);
    cfg.d = a.d;
    if let Some(v) = a.eta_n {
        cfg.eta_n = v;
    }
    if let Some(v) = a.sigma_n_sq {
        cfg.sigma_n_sq = v;
    }
    if let Some(v) = a.s_max {
        cfg.s_max = v;
    }
    cfg.chain.n_iter = a.n_iter;
    cfg.chain.burn_in = a.burn_in;
    cfg.chain.thin = a.thin;
    cfg.chain.seed = a.seed;
    cfg.audit_every = a.audit_every;
    if let Some(coefs) = est.coefficients() {
        let mut init: Vec<usize> = (1..instance.p).filter(|&j| coefs[j] != 0.0).collect();
        init.truncate(cfg.s_max);
        cfg.init_support = Some(init);
    }
    let out = run_chain(&instance, &diag, &cfg)?;

    let file = File::create(&a.samples).with_context(|| format!("creating {}", a.samples.display()))?;
    let mut w = BufWriter::new(file);
    for s in &out.samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let summary = summarize(&out.samples, &instance, &diag, &est, &cfg, a.c3)?;
    let draws = standardized_draws(&out.samples, diag.x1_norm, est.beta1_hat);
    let b1: Vec<f64> = out.samples.iter().map(|s| s.b1).collect();
    let report = PosteriorReport {
        center_method: est.method.as_str(),
        beta1_center: est.beta1_hat,
        nu_mean: summary.nu_mean(),
        nu_max_abs: summary.nu_max_abs(),
        tau_n: summary.tau_n,
        l1_contraction_mass: summary.l1_contraction_mass,
        c3: a.c3,
        distance: distance_to_standard_normal(&draws)?,
        credible_interval: credible_interval(&b1, a.level)?,
        level: a.level,
        stats: out.stats.clone(),
        within_scale: out.within_scale,
        audit_max_residual: (!out.audit.is_empty()).then(|| out.max_audit_residual()),
        support_counts_exact: out.support_counts_exact,
        config: cfg,
    };
    write_json(&report, Some(&a.summary))
}

/// Overlays `top` on `base`, recursing into objects.
fn merge_json(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig {
        base_seed: a.seed,
        reps: a.reps,
        level: a.level,
        ..ExperimentConfig::default()
    };
    if let Some(g) = &a.grid {
        cfg.grid = g.0.clone();
    }
    if !a.methods.is_empty() {
        cfg.methods = a.methods.clone();
    }
    if let Some(v) = a.n_iter {
        cfg.posterior.n_iter = v;
    }
    if let Some(v) = a.burn_in {
        cfg.posterior.burn_in = v;
    }
    cfg.diagnostics.compute_kappa = a.compute_kappa;
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
        let mut base = serde_json::to_value(&cfg)?;
        merge_json(&mut base, serde_json::to_value(file)?);
        cfg = serde_json::from_value(base).with_context(|| format!("invalid configuration in {}", path.display()))?;
    }
    Ok(cfg)
}

fn cmd_experiment(a: ExperimentArgs) -> Result<ExitCode> {
    let cfg = experiment_config(&a)?;
    let records = experiment::run_experiment(&cfg)?;
    let errors = records.iter().filter(|r| !r.is_ok()).count();
    eprintln!(
        "{} records in {} ({} errors)",
        records.len(),
        cfg.output_dir.display(),
        errors
    );
    Ok(if errors > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn cmd_report(a: ReportArgs) -> Result<ExitCode> {
    let t = experiment::report(&a.output_dir)?;
    eprintln!(
        "wrote tables to {}: {} efficiency, {} normality, {} coverage, {} diagnostics, {} summary rows",
        a.output_dir.display(),
        t.efficiency.len(),
        t.normality.len(),
        t.coverage.len(),
        t.diagnostics.len(),
        t.summary.len()
    );
    Ok(if t.error_rows > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a).map(|_| ExitCode::SUCCESS),
        Command::Diagnose(a) => cmd_diagnose(a).map(|_| ExitCode::SUCCESS),
        Command::Estimate(a) => cmd_estimate(a).map(|_| ExitCode::SUCCESS),
        Command::Posterior(a) => cmd_posterior(a).map(|_| ExitCode::SUCCESS),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
