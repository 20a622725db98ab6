use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pren::checkpoint::{read_checkpoint, write_checkpoint};
use pren::config::TrainConfig;
use pren::data::{generate_synthetic, write_atomic, SyntheticSpec, Task, CONFIG_FILE};
use pren::error::{Error, Result};
use pren::experiment::{ablate, desk_config, evaluate_model, format_table, sweep, train_task, SweepParam};
use pren::label_embedding::ProjectionSet;
use pren::predictor::EvalMode;
use pren::progressive::projections_for;

const MODEL_FILE: &str = "model.ckpt";
const PROJECTIONS_FILE: &str = "projections.bin";
const HISTORY_FILE: &str = "history.tsv";
const RUN_INFO_FILE: &str = "run.info";
const METRICS_FILE: &str = "metrics.txt";

#[derive(Parser)]
#[command(name = "pren", version, about = "Progressive ensemble networks for zero-shot classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic zero-shot task directory.
    Synth(SynthArgs),
    /// Build the label-embedding projections for a task and save them.
    Project(ProjectArgs),
    /// Run progressive training and save checkpoint and history.
    Train(TrainArgs),
    /// Evaluate a trained run.
    Eval(EvalArgs),
    /// Train once per value of K or h and tabulate the results.
    Sweep(SweepArgs),
    /// Compare the full model with its single-classifier and no-projection variants.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 15)]
    classes: usize,
    #[arg(long, default_value_t = 10)]
    seen: usize,
    #[arg(long, default_value_t = 20)]
    attr_dim: usize,
    #[arg(long, default_value_t = 30)]
    feature_dim: usize,
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    /// Fraction of each seen class hidden for generalized evaluation.
    #[arg(long, default_value_t = 0.0)]
    seen_holdout: f64,
}

#[derive(Args)]
struct TaskConfig {
    /// Task directory.
    #[arg(long)]
    data: PathBuf,
    /// Config file; defaults to `config.cfg` in the task directory if present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set k=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    task: TaskConfig,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    task: TaskConfig,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Zsl,
    Gzsl,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    /// Task directory; defaults to the one the run was trained on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Defaults to the run's configured mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Metrics file; defaults to `metrics.txt` in the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    K,
    H,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    task: TaskConfig,
    #[arg(long, value_enum)]
    param: Param,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    task: TaskConfig,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Project(a) => project(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Ablate(a) => run_ablate(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    print!("{text}");
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => Ok(()),
    }
}

impl TaskConfig {
    fn load(&self) -> Result<(Task, TrainConfig)> {
        let task = Task::load(&self.data)?;
        let path = self.config.clone().or_else(|| {
            let p = self.data.join(CONFIG_FILE);
            p.exists().then_some(p)
        });
        let mut config = match path {
            Some(p) => TrainConfig::parse(&read_text(&p)?)?,
            None => TrainConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {kv:?} is not key=value")))?;
            config.set(k.trim(), v.trim())?;
        }
        config.validate()?;
        Ok((task, config))
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        classes: a.classes,
        seen_classes: a.seen,
        attribute_dim: a.attr_dim,
        feature_dim: a.feature_dim,
        instances_per_class: a.per_class,
        noise_sigma: a.sigma,
        attribute_density: a.density,
        seed: a.seed,
    };
    let (dataset, attributes, split) = generate_synthetic(&spec)?;
    let task = Task::from_full(dataset, attributes, split, a.seen_holdout, a.seed)?;
    task.save(&a.out)?;
    let mut config = desk_config(&spec);
    config.h = config.h.map(|h| h.min(spec.attribute_dim));
    config.gzsl_mode = a.seen_holdout > 0.0;
    write_atomic(&a.out.join(CONFIG_FILE), config.to_file_string().as_bytes())?;
    println!(
        "wrote {} instances ({} hidden) over {} classes to {}",
        task.dataset.len(),
        task.oracle.len(),
        spec.classes,
        a.out.display()
    );
    Ok(())
}

fn project(a: ProjectArgs) -> Result<()> {
    let (task, config) = a.task.load()?;
    let set = projections_for(&config, &task.attributes, &task.split)?;
    let mut buf = Vec::new();
    set.write_to(&mut buf).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    write_atomic(&a.out, &buf)?;
    println!("wrote {} projections of shape {}x{} to {}", set.k(), set.h(), set.m(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let (task, config) = a.task.load()?;
    let out = train_task(&config, &task)?;
    create_dir(&a.out)?;

    let mut buf = Vec::new();
    out.model.projections().write_to(&mut buf).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    write_atomic(&a.out.join(PROJECTIONS_FILE), &buf)?;
    buf.clear();
    write_checkpoint(&mut buf, &out.model, &out.optimizer).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    write_atomic(&a.out.join(MODEL_FILE), &buf)?;
    write_atomic(&a.out.join(HISTORY_FILE), out.history.to_tsv().as_bytes())?;
    write_atomic(&a.out.join(CONFIG_FILE), config.to_file_string().as_bytes())?;
    let data = fs::canonicalize(&a.task.data).unwrap_or_else(|_| a.task.data.clone());
    write_atomic(&a.out.join(RUN_INFO_FILE), format!("data={}\n", data.display()).as_bytes())?;

    if let Some(last) = out.history.records.last() {
        println!(
            "trained {} rounds: final loss {:.4}, {} pseudo-labeled instances",
            out.history.records.len(),
            last.mean_loss,
            last.pseudo_count
        );
    } else {
        println!("trained initial round only: loss {:.4}", out.history.init_loss);
    }
    println!("run written to {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let config = TrainConfig::parse(&read_text(&a.run.join(CONFIG_FILE))?)?;
    let data = match a.data {
        Some(d) => d,
        None => {
            let info = read_text(&a.run.join(RUN_INFO_FILE))?;
            let line = info
                .lines()
                .find_map(|l| l.strip_prefix("data="))
                .ok_or_else(|| Error::Data("run.info has no data= line".into()))?;
            PathBuf::from(line)
        }
    };
    let task = Task::load(&data)?;
    let proj_path = a.run.join(PROJECTIONS_FILE);
    let bytes = fs::read(&proj_path).map_err(|e| Error::Io { path: proj_path.clone(), source: e })?;
    let projections = ProjectionSet::read_from(&mut bytes.as_slice())?;
    let ckpt_path = a.run.join(MODEL_FILE);
    let bytes = fs::read(&ckpt_path).map_err(|e| Error::Io { path: ckpt_path.clone(), source: e })?;
    let (model, _) = read_checkpoint(&mut bytes.as_slice(), projections, task.attributes.clone())?;

    let mode = match a.mode {
        Some(Mode::Zsl) => EvalMode::Zsl,
        Some(Mode::Gzsl) => EvalMode::Gzsl,
        None if config.gzsl_mode => EvalMode::Gzsl,
        None => EvalMode::Zsl,
    };
    let report = evaluate_model(&model, &task, mode, config.seen_offset)?;
    print!("{}", report.to_text());
    let out = a.out.unwrap_or_else(|| a.run.join(METRICS_FILE));
    write_atomic(&out, report.to_key_values().as_bytes())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let (task, config) = a.task.load()?;
    let (param, name) = match a.param {
        Param::K => (SweepParam::K, "k"),
        Param::H => (SweepParam::H, "h"),
    };
    let rows = sweep(&config, &task, param, &a.values)?;
    emit(a.out.as_deref(), &format_table(name, &rows))
}

fn run_ablate(a: AblateArgs) -> Result<()> {
    let (task, config) = a.task.load()?;
    let rows = ablate(&config, &task)?;
    emit(a.out.as_deref(), &format_table("variant", &rows))
}
