//! `edgeless`: fit, sweep, generate, evaluate and impute from the command line.
//!
//! Every run writes its outputs plus a `manifest.json` into `--output-dir`.
//! Exit codes: 0 success, 2 invalid input or configuration, 3 failed
//! computation. Failures print a JSON error object on stderr.

mod failure;
mod manifest;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use edgeless::evaluation::{self, EvaluationReport, HoldoutSpec, ImputeMode};
use edgeless::io::{self, IngestOptions};
use edgeless::model::{Dataset, FitResult, Hyperparameters, PosteriorState};
use edgeless::sweep::{run_sweep, SweepCell, SweepSpec};
use edgeless::synthesis::{self, GeneratorConfig, GroundTruth};
use edgeless::{fit, par, FitConfig};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use failure::Failure;
use manifest::Run;

#[derive(Parser)]
#[command(name = "edgeless", version, about = "Community detection among signals without observed edges")]
struct Cli {
    /// Overrides the seed in the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for restarts, grid cells and folds.
    #[arg(long, global = true, env = "LC_THREADS")]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic instance: data.csv and truth.json.
    Generate {
        /// Generator configuration (JSON); defaults to the five-community benchmark.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Hide this fraction of cells at random.
        #[arg(long, default_value_t = 0.0)]
        mask_fraction: f64,
    },
    /// Fit one model: labels.csv, posterior.json, elbo_trace.csv.
    Fit(DataArgs),
    /// Grid search over factors and prior precision: sweep.csv plus the best model's files.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        /// Sweep specification (JSON); overrides the `sweep` section of the config.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Score labels against a truth sidecar, or run the hold-out imputation protocol.
    Evaluate {
        /// labels.csv from a fit.
        #[arg(long, requires = "truth", conflicts_with_all = ["input", "config"])]
        labels: Option<PathBuf>,
        /// truth.json from `generate`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Data for the hold-out protocol.
        #[arg(long, requires = "config")]
        input: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fill the missing cells of a dataset from a fitted posterior.
    Impute {
        #[arg(long)]
        input: PathBuf,
        /// posterior.json from `fit` or `sweep`.
        #[arg(long)]
        posterior: PathBuf,
        /// Config whose `ingest` section is applied to the input.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Loadings)]
        mode: Mode,
    },
}

#[derive(Args)]
struct DataArgs {
    /// CSV with series in columns and a header row of series ids.
    #[arg(long)]
    input: PathBuf,
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Loadings,
    CommunityMean,
}

/// Contents of a run configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    /// In a sweep, `p` and `prior_precision` are replaced by the grid values.
    hyperparameters: Hyperparameters,
    #[serde(default)]
    fit: FitConfig,
    #[serde(default)]
    ingest: IngestOptions,
    #[serde(default)]
    sweep: Option<SweepSpec>,
    #[serde(default)]
    holdout: HoldoutSpec,
}

/// `posterior.json`.
#[derive(Debug, Serialize, Deserialize)]
struct PosteriorSummary {
    /// As used by the fit, after known-K adjustment.
    hyperparameters: Hyperparameters,
    elbo: f64,
    converged: bool,
    k_hat: usize,
    restart_index: usize,
    sweeps: usize,
    series_ids: Vec<String>,
    community_weights: Vec<f64>,
    state: PosteriorState,
}

/// `truth.json`. Labels inside `truth` are zero-based.
#[derive(Debug, Serialize, Deserialize)]
struct TruthSidecar {
    config: GeneratorConfig,
    series_ids: Vec<String>,
    truth: GroundTruth,
}

fn parse_json<T: DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<T, Failure> {
    serde_json::from_slice(bytes).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

fn load_config(run: &mut Run, path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let bytes = run.read_input(path)?;
    let mut config: RunConfig = parse_json(&bytes, path)?;
    if let Some(s) = seed {
        config.fit.seed = s;
    }
    config.hyperparameters.validate()?;
    config.fit.validate()?;
    run.manifest.seed = Some(config.fit.seed);
    run.manifest.config = serde_json::to_value(&config).map_err(Failure::runtime)?;
    Ok(config)
}

fn load_data(run: &mut Run, path: &Path, options: &IngestOptions) -> Result<Dataset, Failure> {
    let bytes = run.read_input(path)?;
    Ok(run.stage("ingest", || io::ingest_reader(bytes.as_slice(), options))?)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> edgeless::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut out = Vec::new();
    f(&mut out)?;
    Ok(out)
}

fn emit_fit(run: &mut Run, data: &Dataset, result: &FitResult, hyper: &Hyperparameters) -> Result<(), Failure> {
    let ids = data.series_ids();
    run.emit("labels.csv", csv_bytes(|w| io::write_labels(ids, &result.labels, w))?);
    run.emit("elbo_trace.csv", csv_bytes(|w| io::write_elbo_trace(&result.elbo_trace, w))?);
    let summary = PosteriorSummary {
        hyperparameters: hyper.clone(),
        elbo: result.elbo(),
        converged: result.converged,
        k_hat: result.k_hat,
        restart_index: result.restart_index,
        sweeps: result.sweeps(),
        series_ids: ids.to_vec(),
        community_weights: result.state.community_weights(),
        state: result.state.clone(),
    };
    run.emit_json("posterior.json", &summary)
}

fn cmd_generate(run: &mut Run, config: Option<&Path>, mask_fraction: f64, seed: Option<u64>) -> Result<(), Failure> {
    let mut config = match config {
        Some(path) => {
            let bytes = run.read_input(path)?;
            parse_json::<GeneratorConfig>(&bytes, path)?
        }
        None => GeneratorConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    run.manifest.seed = Some(config.seed);
    run.manifest.config = serde_json::json!({ "generator": &config, "mask_fraction": mask_fraction });
    let instance = run.stage("generate", || synthesis::generate(&config))?;
    let dataset = if mask_fraction > 0.0 {
        synthesis::mask_random(&instance.dataset, mask_fraction, config.seed)?
    } else {
        instance.dataset
    };
    run.emit("data.csv", csv_bytes(|w| io::write_dataset(&dataset, w))?);
    let sidecar = TruthSidecar { config, series_ids: dataset.series_ids().to_vec(), truth: instance.truth };
    run.emit_json("truth.json", &sidecar)
}

fn cmd_fit(run: &mut Run, args: &DataArgs, seed: Option<u64>) -> Result<(), Failure> {
    let config = load_config(run, &args.config, seed)?;
    let data = load_data(run, &args.input, &config.ingest)?;
    let result = run.stage("fit", || fit(&data, &config.hyperparameters, &config.fit))?;
    emit_fit(run, &data, &result, &config.fit.effective_hyper(&config.hyperparameters))
}

fn cmd_sweep(run: &mut Run, args: &DataArgs, spec: Option<&Path>, seed: Option<u64>) -> Result<(), Failure> {
    let mut config = load_config(run, &args.config, seed)?;
    if let Some(path) = spec {
        let bytes = run.read_input(path)?;
        config.sweep = Some(parse_json(&bytes, path)?);
        run.manifest.config = serde_json::to_value(&config).map_err(Failure::runtime)?;
    }
    let spec = config.sweep.clone().ok_or_else(|| Failure::validation("no sweep specification given"))?;
    spec.validate()?;
    let data = load_data(run, &args.input, &config.ingest)?;
    let outcome = run.stage("sweep", || run_sweep(&data, &config.hyperparameters, &spec, &config.fit))?;
    let table = csv_bytes(|w| {
        let mut csv = csv::Writer::from_writer(w);
        for cell in &outcome.cells {
            csv.serialize(cell).map_err(edgeless::Error::from)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    run.emit("sweep.csv", table);
    let best: &SweepCell = outcome.best_cell();
    let hyper = Hyperparameters { p: best.p, k_max: best.k_max, prior_precision: best.prior_precision, ..config.hyperparameters };
    emit_fit(run, &data, outcome.best_fit(), &config.fit.effective_hyper(&hyper))
}

fn cmd_evaluate_labels(run: &mut Run, labels: &Path, truth: &Path) -> Result<(), Failure> {
    let label_bytes = run.read_input(labels)?;
    let (ids, predicted) = io::read_labels(label_bytes.as_slice())?;
    let truth_bytes = run.read_input(truth)?;
    let sidecar: TruthSidecar = parse_json(&truth_bytes, truth)?;
    let position: HashMap<&str, usize> = ids.iter().enumerate().map(|(j, id)| (id.as_str(), j)).collect();
    if ids.len() != sidecar.series_ids.len() {
        return Err(Failure::validation(format!(
            "{} labelled series but the truth has {}",
            ids.len(),
            sidecar.series_ids.len()
        )));
    }
    let aligned = sidecar
        .series_ids
        .iter()
        .map(|id| {
            position.get(id.as_str()).map(|&j| predicted[j]).ok_or_else(|| Failure::validation(format!("series '{id}' is not labelled")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let score = run.stage("evaluate", || evaluation::nmi(&aligned, &sidecar.truth.labels))?;
    let mut distinct = aligned.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let k_error = distinct.len() as i64 - sidecar.truth.centers.nrows() as i64;
    run.emit_json("report.json", &EvaluationReport::from_labels(score, Some(k_error)))
}

fn cmd_evaluate_holdout(run: &mut Run, input: &Path, config: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let config = load_config(run, config, seed)?;
    let data = load_data(run, input, &config.ingest)?;
    let report = run.stage("holdout", || {
        evaluation::holdout_protocol(&data, &config.holdout, &config.hyperparameters, &config.fit, config.fit.seed)
    })?;
    run.emit_json("report.json", &report)
}

fn cmd_impute(run: &mut Run, input: &Path, posterior: &Path, config: Option<&Path>, mode: Mode) -> Result<(), Failure> {
    let options = match config {
        Some(path) => load_config(run, path, None)?.ingest,
        None => IngestOptions::default(),
    };
    let bytes = run.read_input(posterior)?;
    let summary: PosteriorSummary = parse_json(&bytes, posterior)?;
    summary.state.check()?;
    let data = load_data(run, input, &options)?;
    if (data.n_times(), data.n_series()) != (summary.state.n_times(), summary.state.n_series()) {
        return Err(Failure::validation(format!(
            "data is {}x{} but the posterior was fitted to {}x{}",
            data.n_times(),
            data.n_series(),
            summary.state.n_times(),
            summary.state.n_series()
        )));
    }
    if data.series_ids() != summary.series_ids.as_slice() {
        return Err(Failure::validation("series ids differ from those of the fit"));
    }
    let cells: Vec<(usize, usize)> =
        (0..data.n_series()).flat_map(|i| data.missing_in_series(i).iter().map(move |&t| (t, i))).collect();
    let mode = match mode {
        Mode::Loadings => ImputeMode::Loadings,
        Mode::CommunityMean => ImputeMode::CommunityMean,
    };
    let predicted = run.stage("impute", || evaluation::impute(&summary.state, &cells, mode))?;
    let mut values = data.filled().clone();
    for (&(t, i), v) in cells.iter().zip(&predicted) {
        values[(t, i)] = *v;
    }
    let full = DMatrix::from_element(data.n_times(), data.n_series(), true);
    let timestamps = data.timestamps().map(<[String]>::to_vec);
    let completed = Dataset::new(values, full, data.series_ids().to_vec(), timestamps)?;
    run.emit("imputed.csv", csv_bytes(|w| io::write_dataset(&completed, w))?);
    Ok(())
}

fn dispatch(cli: &Cli, run: &mut Run) -> Result<(), Failure> {
    match &cli.command {
        Command::Generate { config, mask_fraction } => cmd_generate(run, config.as_deref(), *mask_fraction, cli.seed),
        Command::Fit(args) => cmd_fit(run, args, cli.seed),
        Command::Sweep { data, spec } => cmd_sweep(run, data, spec.as_deref(), cli.seed),
        Command::Evaluate { labels, truth, input, config } => match (labels, truth, input, config) {
            (Some(l), Some(t), None, None) => cmd_evaluate_labels(run, l, t),
            (None, None, Some(i), Some(c)) => cmd_evaluate_holdout(run, i, c, cli.seed),
            _ => Err(Failure::validation("evaluate needs either --labels and --truth, or --input and --config")),
        },
        Command::Impute { input, posterior, config, mode } => cmd_impute(run, input, posterior, config.as_deref(), *mode),
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Generate { .. } => "generate",
        Command::Fit(_) => "fit",
        Command::Sweep { .. } => "sweep",
        Command::Evaluate { .. } => "evaluate",
        Command::Impute { .. } => "impute",
    }
}

fn report(failure: &Failure) -> ExitCode {
    eprintln!("{}", serde_json::json!({ "error": failure.to_json() }));
    ExitCode::from(failure.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return report(&Failure::validation(e.kind()));
        }
    };
    let mut run = Run::new(command_name(&cli.command), &cli.output_dir, cli.jobs);
    let outcome = par::with_jobs(cli.jobs, || dispatch(&cli, &mut run));
    let finished = match outcome {
        Ok(()) => run.finish(),
        Err(failure) => {
            let _ = run.fail(&failure);
            Err(failure)
        }
    };
    match finished {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => report(&failure),
    }
}
