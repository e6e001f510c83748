mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, ensure, Context, Result};
use clap::{Parser, Subcommand};
use pde_surrogate::analysis::{self, mean_std};
use pde_surrogate::nn::Checkpoint;
use pde_surrogate::sampler::{self, Dataset, LabelSettings, Sidecar, Task};
use pde_surrogate::theory;
use pde_surrogate::train;
use pde_surrogate::{Field, GridSpec};
use serde_json::json;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "pdesur", version, about = "Solve, sample, learn and verify parametric periodic PDEs")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Threads used to label samples.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample coefficient fields, label them and write PSD1 datasets.
    Generate,
    /// Solve one instance and print the target at full precision.
    Solve {
        /// Coefficient field: a PSD1 dataset or a CSV/whitespace list of values.
        file: PathBuf,
        /// Target to compute; defaults to the dataset's task for PSD1 input.
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        /// Spatial dimension of CSV input.
        #[arg(long, default_value_t = 2)]
        dim: usize,
        /// Record to solve when the input is a dataset.
        #[arg(long, default_value_t = 0)]
        record: usize,
    },
    /// Train a surrogate; writes a checkpoint and a metrics CSV.
    Train,
    /// Evaluate a checkpoint on a dataset; writes per-sample predictions.
    Eval,
    /// Run the noisy-descent verification sweep; writes a report CSV.
    Verify,
    /// Fit the stage-1 response of a 1D three-stage network by beta1/x + beta2.
    FitReciprocal,
}

/// Exit code 1: the run description is unusable. Exit code 2: the run
/// failed while computing.
enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
}

trait Classify<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn numerical(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }

    fn numerical(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Numerical(e.into()))
    }
}

fn parse_task(s: &str) -> Result<Task, String> {
    serde_json::from_value(json!(s)).map_err(|_| {
        format!("unknown task {s:?}; expected elliptic_conductance, nlse_ground_state or harmonic_mean1d")
    })
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
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config(anyhow!("--config is required")))?;
    RunConfig::load(path, cli.seed).config_err()
}

fn workers(cli: &Cli) -> usize {
    cli.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Generate => generate(&load(cli)?, workers(cli)),
        Command::Solve { file, task, dim, record } => solve(file, *task, *dim, *record).numerical(),
        Command::Train => train_cmd(&load(cli)?),
        Command::Eval => eval(&load(cli)?),
        Command::Verify => verify(&load(cli)?),
        Command::FitReciprocal => fit_reciprocal(&load(cli)?),
    }
}

fn write_csv(path: &Path, hash: &str, body: &str) -> Result<()> {
    fs::write(path, format!("# config_hash={hash}\n{body}")).with_context(|| format!("writing {}", path.display()))
}

fn generate(cfg: &RunConfig, workers: usize) -> Result<(), Failure> {
    let section = cfg.generate_section().config_err()?;
    for (k, split) in section.splits.iter().enumerate() {
        let spec = cfg.sampling_spec(k, split.count).config_err()?;
        let ds = sampler::generate_dataset(&spec, &cfg.labels, workers).numerical()?;
        sampler::write_dataset(&split.output, &ds).numerical()?;
        let mut side = serde_json::to_value(Sidecar::describe(&ds)).numerical()?;
        side["config_hash"] = json!(cfg.hash());
        let side_path = split.output.with_extension("json");
        fs::write(&side_path, serde_json::to_string_pretty(&side).numerical()? + "\n").numerical()?;
        let (m, s) = mean_std(&ds.targets);
        println!("{}: {} samples, target {m:.4} ± {s:.4}", split.output.display(), ds.len());
    }
    Ok(())
}

fn read_field(file: &Path, dim: usize, record: usize) -> Result<(Field, Option<Task>)> {
    let bytes = fs::read(file).with_context(|| format!("reading {}", file.display()))?;
    if bytes.starts_with(sampler::DATASET_MAGIC) {
        let ds = sampler::read_dataset(file)?;
        ensure!(record < ds.len(), "record {record} out of range for {} samples", ds.len());
        return Ok((ds.field(record), Some(ds.spec.task)));
    }
    let text = String::from_utf8(bytes).context("coefficient file is neither PSD1 nor text")?;
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().with_context(|| format!("bad value {t:?}")))
        .collect::<Result<Vec<_>>>()?;
    ensure!(dim >= 1, "dim must be positive");
    let n = (values.len() as f64).powf(1.0 / dim as f64).round() as usize;
    ensure!(
        n >= 2 && n.pow(dim as u32) == values.len(),
        "{} values do not form an n^{dim} grid",
        values.len()
    );
    Ok((Field::new(GridSpec::new(dim, n)?, values)?, None))
}

fn solve(file: &Path, task: Option<Task>, dim: usize, record: usize) -> Result<()> {
    let (a, stored) = read_field(file, dim, record)?;
    let task = task.or(stored).context("--task is required for text input")?;
    let value = sampler::label(task, &a, &LabelSettings::default())?;
    println!("{value}");
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    sampler::read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

fn train_cmd(cfg: &RunConfig) -> Result<(), Failure> {
    let section = cfg.train_section().config_err()?;
    let spec = cfg.network_spec(&section.architecture).config_err()?;
    let tr = read_dataset(&section.train_data).numerical()?;
    let va = read_dataset(&section.validation_data).numerical()?;
    let model = train::train(&tr, &va, &spec, &section.optimizer).numerical()?;
    let errors = |ds: &Dataset| -> Result<f64> {
        let p = train::predict(&spec, &model.params, model.whitening.as_ref(), &ds.inputs)?;
        Ok(train::relative_error(&p, &ds.targets)?)
    };
    let train_err = errors(&tr).numerical()?;
    let val_err = errors(&va).numerical()?;
    let ck = Checkpoint {
        spec: spec.clone(),
        whitening: model.whitening.clone(),
        config_hash: cfg.hash().to_string(),
        metadata: json!({
            "task": cfg.task,
            "optimizer": section.optimizer,
            "best_epoch": model.best_epoch + 1,
            "epochs": model.history.len(),
            "train_relative_error": train_err,
            "validation_relative_error": val_err,
        }),
        params: model.params.clone(),
    };
    ck.write(&section.checkpoint).numerical()?;
    write_csv(&section.metrics, cfg.hash(), &model.history.to_csv()).numerical()?;
    println!("best epoch {} of {}", model.best_epoch + 1, model.history.len());
    println!("train relative error {train_err:e}");
    println!("validation relative error {val_err:e}");
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<(), Failure> {
    let section = cfg.eval_section().config_err()?;
    let ck = Checkpoint::read(&section.checkpoint)
        .with_context(|| format!("reading {}", section.checkpoint.display()))
        .numerical()?;
    let ds = read_dataset(&section.dataset).numerical()?;
    let preds = train::predict(&ck.spec, &ck.params, ck.whitening.as_ref(), &ds.inputs).numerical()?;
    let err = train::relative_error(&preds, &ds.targets).numerical()?;
    let mut body = String::from("index,target,prediction\n");
    for (k, (t, p)) in ds.targets.iter().zip(&preds).enumerate() {
        writeln!(body, "{k},{t:e},{p:e}").unwrap();
    }
    write_csv(&section.predictions, cfg.hash(), &body).numerical()?;
    println!("relative error {err:e} over {} samples", ds.len());
    Ok(())
}

fn verify(cfg: &RunConfig) -> Result<(), Failure> {
    let section = cfg.verify_section().config_err()?;
    let s = &section.settings;
    let rows = theory::run_trials(s).numerical()?;
    write_csv(&section.report, cfg.hash(), &theory::report_csv(&rows, s.dt_fraction)).numerical()?;
    let violations: usize = rows.iter().map(|r| r.report.descent_violations).sum();
    let above_theorem = rows
        .iter()
        .filter(|r| {
            let rep = &r.report;
            rep.steps.iter().zip(&rep.gaps).any(|(&m, &g)| g > rep.c_theorem / m as f64)
        })
        .count();
    for &c in &s.c_values {
        let sub: Vec<_> = rows.iter().filter(|r| r.c == c).collect();
        let c_fit = sub.iter().map(|r| r.report.c_fit).fold(0.0, f64::max);
        let slope = sub.iter().map(|r| r.report.slope).fold(f64::NEG_INFINITY, f64::max);
        println!("c = {c}: {} trials, max C_fit {c_fit:.3e}, steepest-case slope {slope:.2}", sub.len());
    }
    println!("{violations} descent violations, {above_theorem} trials above the theorem bound");
    if violations > 0 || above_theorem > 0 {
        return Err(Failure::Numerical(anyhow!("verification failed")));
    }
    Ok(())
}

fn fit_reciprocal(cfg: &RunConfig) -> Result<(), Failure> {
    let section = cfg.fit_section().config_err()?;
    let ck = Checkpoint::read(&section.checkpoint)
        .with_context(|| format!("reading {}", section.checkpoint.display()))
        .numerical()?;
    let (xs, ys, fit) = analysis::fit_stage1_reciprocal(
        &ck.spec,
        &ck.params,
        ck.whitening.as_ref(),
        section.low,
        section.high,
        section.points,
    )
    .numerical()?;
    let mut body = String::from("x,response,fit\n");
    for (x, y) in xs.iter().zip(&ys) {
        writeln!(body, "{x:e},{y:e},{:e}", fit.beta1 / x + fit.beta2).unwrap();
    }
    write_csv(&section.curve, cfg.hash(), &body).numerical()?;
    println!("beta1 {}", fit.beta1);
    println!("beta2 {}", fit.beta2);
    println!("r_squared {}", fit.r_squared);
    if !fit.r_squared.is_finite() {
        return Err(Failure::Numerical(anyhow!("non-finite fit")));
    }
    Ok(())
}
