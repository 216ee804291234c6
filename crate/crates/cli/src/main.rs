//! `robsq`: simulate, impute and report.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data or estimation error,
//! 3 simulation invalidated by too many failed replicates.

mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robsq::data::Design;
use robsq::estimators::{Estimator, EstimatorRegistry, FitContext, ModelSpec, PropensityMode, TwoPart};
use robsq::io::{self, Cell, Format, ResponseSource, Table};
use robsq::rng::RngStream;
use robsq::sim::{run_experiment, ExperimentSpec, RegimeTag, Scenario};
use robsq::uncertainty::{bootstrap_intervals, mi_interval, IntervalKind, Job, UncertaintyMethod};
use serde::Serialize;

use config::{pick, CommonFlags, FileConfig, Preset, UncertaintyChoice};

#[derive(Parser, Debug)]
#[command(name = "robsq", version, about = "Robust estimators of a mean with missing outcomes")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "ROBSQ_JOBS")]
    jobs: Option<usize>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a simulation grid and write its metrics table.
    Simulate(SimulateArgs),
    /// Estimate the outcome mean of a data file.
    Impute(ImputeArgs),
    /// Print a metrics table grouped by regime.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// TOML configuration file; command-line values take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output path, `-` for standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Comma-separated method names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// bootstrap, mi-mean, mi-draw or none.
    #[arg(long)]
    uncertainty: Option<UncertaintyChoice>,
    /// Bootstrap resamples or imputations (D).
    #[arg(long)]
    resamples: Option<usize>,
    /// Interval construction: t or percentile.
    #[arg(long, value_parser = parse_interval)]
    interval: Option<IntervalKind>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    knots: Option<usize>,
    /// Lower bound on AIPWT response probabilities.
    #[arg(long)]
    clip: Option<f64>,
    /// Propensity summary for point estimates: mean or draw.
    #[arg(long, value_parser = parse_mode)]
    propensity_mode: Option<PropensityMode>,
}

fn parse_interval(s: &str) -> Result<IntervalKind, String> {
    match s {
        "t" => Ok(IntervalKind::T),
        "percentile" => Ok(IntervalKind::Percentile),
        _ => Err(format!("unknown interval `{s}` (expected t or percentile)")),
    }
}

fn parse_mode(s: &str) -> Result<PropensityMode, String> {
    match s {
        "mean" => Ok(PropensityMode::Mean),
        "draw" => Ok(PropensityMode::Draw),
        _ => Err(format!("unknown propensity mode `{s}` (expected mean or draw)")),
    }
}

impl CommonArgs {
    fn flags(&self) -> CommonFlags {
        CommonFlags {
            seed: self.seed,
            output: self.output.clone(),
            format: self.format,
            preset: self.preset,
            methods: self.methods.clone(),
            uncertainty: self.uncertainty,
            resamples: self.resamples,
            interval: self.interval,
            trees: self.trees,
            burn_in: self.burn_in,
            draws: self.draws,
            knots: self.knots,
            clip: self.clip,
            propensity_mode: self.propensity_mode,
        }
    }

    fn file(&self) -> Result<FileConfig, Failure> {
        match &self.config {
            Some(p) => config::read_file(p).map_err(Failure::Config),
            None => Ok(FileConfig::default()),
        }
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// linear, quadratic or ks.
    #[arg(long)]
    scenario: Option<Scenario>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Comma-separated regimes (both-correct, prop-correct, mean-correct, both-wrong).
    #[arg(long, value_delimiter = ',')]
    regimes: Option<Vec<RegimeTag>>,
}

#[derive(Args, Debug)]
struct ImputeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Delimited data file with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Outcome column.
    #[arg(long)]
    outcome: Option<String>,
    /// 0/1 response column; by default rows with a missing outcome are unobserved.
    #[arg(long)]
    response: Option<String>,
    /// Wrap each method in the two-part Box-Cox pipeline for non-negative outcomes.
    #[arg(long)]
    pipeline: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Metrics table written by `simulate` (CSV or JSON).
    input: PathBuf,
    /// text, csv or json.
    #[arg(long, default_value = "text")]
    format: String,
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
}

enum Failure {
    Config(String),
    Data(String),
    Invalid,
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Invalid => 3,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn data_err(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn echo<T: Serialize>(resolved: &T) {
    match toml::to_string(resolved) {
        Ok(s) => log::info!("resolved configuration:\n{s}"),
        Err(e) => log::warn!("could not echo configuration: {e}"),
    }
}

#[derive(Serialize)]
struct SimulateEcho<'a> {
    command: &'static str,
    output: &'a PathBuf,
    format: Format,
    preset: Preset,
    experiment: &'a ExperimentSpec,
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let file = args.common.file()?;
    let registry = EstimatorRegistry::standard();
    let all: Vec<String> = registry.names().iter().map(|s| s.to_string()).collect();
    let common = config::resolve_common(args.common.flags(), &file, all).map_err(Failure::Config)?;
    for m in &common.methods {
        registry.get(m).map_err(config_err)?;
    }
    let spec = ExperimentSpec {
        scenario: pick("scenario", args.scenario, file.scenario)
            .ok_or_else(|| Failure::Config("`scenario` is required (flag --scenario or config key)".into()))?,
        n: pick("n", args.n, file.n).unwrap_or(1000),
        replicates: pick("replicates", args.replicates, file.replicates)
            .unwrap_or_else(|| config::preset_replicates(common.preset)),
        methods: common.methods.clone(),
        regimes: pick("regimes", args.regimes, file.regimes.clone()).unwrap_or_else(|| RegimeTag::ALL.to_vec()),
        uncertainty: common.uncertainty.clone(),
        estimator: common.estimator.clone(),
        seed: common.seed,
    };
    if spec.replicates < 2 || spec.n < 10 {
        return Err(Failure::Config("need replicates >= 2 and n >= 10".into()));
    }
    echo(&SimulateEcho {
        command: "simulate",
        output: &common.output,
        format: common.format,
        preset: common.preset,
        experiment: &spec,
    });
    let result = run_experiment(&spec, &registry).map_err(data_err)?;
    io::emit_results(&result.rows, common.format, &common.output).map_err(data_err)?;
    if result.invalid {
        return Err(Failure::Invalid);
    }
    Ok(())
}

#[derive(Serialize)]
struct ImputeEcho<'a> {
    command: &'static str,
    data: &'a PathBuf,
    outcome: &'a str,
    response: Option<&'a str>,
    pipeline: bool,
    model: &'a ModelSpec,
    #[serde(flatten)]
    common: &'a config::Common,
}

fn design(terms: &Option<Vec<String>>, default: &Design) -> Result<Design, Failure> {
    match terms {
        Some(t) => Design::parse(t).map_err(config_err),
        None => Ok(default.clone()),
    }
}

fn impute(args: ImputeArgs) -> Result<(), Failure> {
    let file = args.common.file()?;
    let registry = EstimatorRegistry::standard();
    let defaults: Vec<String> = registry.names().iter().filter(|n| **n != "bd").map(|s| s.to_string()).collect();
    let common = config::resolve_common(args.common.flags(), &file, defaults).map_err(Failure::Config)?;
    let methods: Vec<&dyn Estimator> =
        common.methods.iter().map(|m| registry.get(m)).collect::<robsq::Result<_>>().map_err(config_err)?;
    let data_path = pick("impute.data", args.data, file.impute.data.clone())
        .ok_or_else(|| Failure::Config("`data` is required (flag --data or [impute] data)".into()))?;
    let outcome = pick("impute.outcome", args.outcome, file.impute.outcome.clone())
        .ok_or_else(|| Failure::Config("`outcome` is required (flag --outcome or [impute] outcome)".into()))?;
    let response = pick("impute.response", args.response, file.impute.response.clone());
    let pipeline = args.pipeline || file.impute.pipeline.unwrap_or(false);

    let source = response.clone().map_or(ResponseSource::Auto, ResponseSource::Column);
    let loaded = io::load_dataset(&data_path, &outcome, &source).map_err(data_err)?;
    let data = loaded.data;
    log::info!(
        "{} rows, {} observed, covariates: {}",
        data.n(),
        data.observed_count(),
        data.names().join(", ")
    );

    let base = ModelSpec::main_effects(&data);
    let m = &file.impute.model;
    let spec = ModelSpec {
        propensity: design(&m.propensity, &base.propensity)?,
        mean: design(&m.mean, &base.mean)?,
        bart_propensity: m.bart_propensity.clone().unwrap_or(base.bart_propensity),
        bart_mean: m.bart_mean.clone().unwrap_or(base.bart_mean),
    };
    spec.validate(&data).map_err(config_err)?;
    echo(&ImputeEcho {
        command: "impute",
        data: &data_path,
        outcome: &outcome,
        response: response.as_deref(),
        pipeline,
        model: &spec,
        common: &common,
    });

    let wrapped: Vec<TwoPart<'_>> = if pipeline { methods.iter().map(|m| TwoPart::new(*m)).collect() } else { Vec::new() };
    let active: Vec<&dyn Estimator> =
        if pipeline { wrapped.iter().map(|w| w as &dyn Estimator).collect() } else { methods };

    let root = RngStream::new(common.seed, 1);
    let mut ctx = FitContext::new(&common.estimator, root.child_named("fit"));
    let points: Vec<Result<f64, String>> = active
        .iter()
        .map(|m| m.estimate(&data, &spec, &mut ctx).map(|e| e.mu_hat).map_err(|e| e.to_string()))
        .collect();

    let intervals: Vec<Option<Result<(f64, f64), String>>> = match &common.uncertainty {
        None => vec![None; active.len()],
        Some(u) if u.method == UncertaintyMethod::Bootstrap => {
            let jobs: Vec<Job<'_>> = active.iter().map(|m| (*m, &spec)).collect();
            bootstrap_intervals(&data, &jobs, &common.estimator, u, &root.child_named("bootstrap"))
                .into_iter()
                .map(|r| Some(r.map(|iv| (iv.lower, iv.upper)).map_err(|e| e.to_string())))
                .collect()
        }
        Some(u) => {
            let mode = if u.method == UncertaintyMethod::MiMean { PropensityMode::Mean } else { PropensityMode::Draw };
            active
                .iter()
                .map(|m| match mi_interval(&data, *m, &spec, &mut ctx, u.resamples, mode, u.interval) {
                    Ok(iv) => Some(Ok((iv.lower, iv.upper))),
                    Err(robsq::Error::Unsupported(msg)) => {
                        log::info!("{msg}");
                        None
                    }
                    Err(e) => Some(Err(e.to_string())),
                })
                .collect()
        }
    };

    let label = common.uncertainty.as_ref().map_or("none".to_string(), |u| u.method.to_string());
    let d = common.uncertainty.as_ref().map(|u| u.resamples);
    let mut table = Table {
        header: vec!["method", "mu_hat", "lower", "upper", "length", "uncertainty", "resamples"],
        rows: Vec::new(),
    };
    let mut ok = 0;
    for ((m, point), iv) in active.iter().zip(&points).zip(&intervals) {
        let mu = match point {
            Ok(v) => {
                ok += 1;
                Some(*v)
            }
            Err(e) => {
                log::error!("{}: {e}", m.name());
                None
            }
        };
        let bounds = match iv {
            Some(Ok(b)) => Some(*b),
            Some(Err(e)) => {
                log::error!("{} interval: {e}", m.name());
                None
            }
            None => None,
        };
        table.rows.push(vec![
            Cell::Text(m.name().to_string()),
            Cell::Num(mu),
            Cell::Num(bounds.map(|b| b.0)),
            Cell::Num(bounds.map(|b| b.1)),
            Cell::Num(bounds.map(|b| b.1 - b.0)),
            Cell::Text(if bounds.is_some() { label.clone() } else { "none".into() }),
            d.filter(|_| bounds.is_some()).map_or(Cell::Num(None), Cell::Int),
        ]);
    }
    io::emit_table(&table, common.format, &common.output).map_err(data_err)?;
    if ok == 0 {
        return Err(Failure::Data("every method failed".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .init();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Impute(a) => impute(a),
        Command::Report(a) => report::run(&a.input, &a.format, &a.output).map_err(|e| match e {
            report::ReportError::Usage(m) => Failure::Config(m),
            report::ReportError::Input(m) => Failure::Data(m),
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(m) => eprintln!("configuration error: {m}"),
                Failure::Data(m) => eprintln!("error: {m}"),
                Failure::Invalid => eprintln!("run invalidated: more than 10% of replicates failed in some cell"),
            }
            ExitCode::from(f.code())
        }
    }
}
