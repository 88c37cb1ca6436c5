//! Subcommand implementations for the `entn` binary.
//!
//! Every command validates its flags before touching the input, writes its
//! data outputs to files and records the resolved configuration as
//! `run.toml` (or `<out>.spec.toml` for `gen`). `entn replay run.toml`
//! re-executes a recorded run.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use entn_core::denoise::{self, DEFAULT_QUANTILE};
use entn_core::eval::{self, PipelineConfig, SvmConfig, SweepGrid, Task, DEFAULT_TRAIN_FRACTION};
use entn_core::io::{
    read_checkpoint, write_checkpoint_binary, write_checkpoint_text, write_trace_csv,
};
use entn_core::seed::substream;
use entn_core::synth::{self, SceneSpec};
use entn_core::{
    bin_to_tensor, parse_events, solve, tensor_density, EventFormat, EventStream, EventTensor,
    FactorTriple, Geometry, SolverConfig,
};

pub const RUN_RECORD: &str = "run.toml";

#[derive(Debug, Parser)]
#[command(
    name = "entn",
    version,
    about = "Elastic-net tensor network toolkit for event streams"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "ENTN_THREADS")]
    pub threads: Option<usize>,

    /// Global seed; module seeds are derived from it by name.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate a labeled synthetic event stream.
    Gen(GenArgs),
    /// Bin an event stream into a binary tensor dump.
    Bin(BinArgs),
    /// Fit ENTN factors to an event stream.
    Decompose(DecomposeArgs),
    /// Train and test a linear SVM on factor features.
    Classify(ClassifyArgs),
    /// Drop events with low reconstruction scores.
    Denoise(DenoiseArgs),
    /// Run decompose + classify over a grid of (lambda1, lambda2).
    Sweep(SweepArgs),
    /// Re-run a recorded run.toml.
    #[serde(skip)]
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GenArgs {
    /// Scene description (TOML).
    #[arg(
        long,
        required_unless_present = "desk_noise",
        conflicts_with = "desk_noise"
    )]
    pub spec: Option<PathBuf>,
    /// Use the built-in 64x48x60 two-object scene with this noise fraction.
    #[arg(long)]
    pub desk_noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct InputArgs {
    /// Event CSV with header `t,i,j[,label]`.
    #[arg(long)]
    pub input: PathBuf,
    /// Sensor geometry as ROWSxCOLS.
    #[arg(long, default_value = "346x260")]
    pub geometry: String,
    /// Number of time bins N.
    #[arg(long, default_value_t = 60)]
    pub frames: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct BinArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 6)]
    pub f_max: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 1000)]
    pub s_max: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub grow_tol: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub conv_tol: f64,
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
    /// Re-impose observed events on X after every update.
    #[arg(long)]
    pub clamp_x: bool,
}

impl SolverArgs {
    pub fn config(&self, seed: u64) -> SolverConfig {
        SolverConfig {
            f_max: self.f_max,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            s_max: self.s_max,
            grow_tol: self.grow_tol,
            conv_tol: self.conv_tol,
            seed,
            init_scale: self.init_scale,
            clamp_x: self.clamp_x,
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DecomposeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Write the checkpoint in the binary format.
    #[arg(long)]
    pub binary: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// One object's events against another's.
    Objects,
    /// Object events against noise events.
    Signal,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TaskArgs {
    #[arg(long, value_enum, default_value_t = TaskKind::Objects)]
    pub task: TaskKind,
    /// Positive object label for the objects task.
    #[arg(long, default_value_t = 0)]
    pub positive: i64,
    /// Negative object label for the objects task.
    #[arg(long, default_value_t = 1)]
    pub negative: i64,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    pub svm_c: f64,
    #[arg(long, default_value_t = 50)]
    pub svm_epochs: usize,
}

impl TaskArgs {
    fn task(&self) -> Task {
        match self.task {
            TaskKind::Objects => Task::Objects {
                positive: self.positive,
                negative: self.negative,
            },
            TaskKind::Signal => Task::SignalVsNoise,
        }
    }

    fn svm(&self, seed: u64) -> SvmConfig {
        SvmConfig {
            c: self.svm_c,
            epochs: self.svm_epochs,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        ensure!(
            self.train_fraction > 0.0 && self.train_fraction < 1.0,
            "--train-fraction must lie in (0, 1), got {}",
            self.train_fraction
        );
        ensure!(self.svm_c > 0.0, "--svm-c must be positive");
        ensure!(self.svm_epochs > 0, "--svm-epochs must be positive");
        if self.task == TaskKind::Objects {
            ensure!(
                self.positive != self.negative,
                "--positive and --negative must differ"
            );
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ClassifyArgs {
    /// Labeled event CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Factor checkpoint from `decompose`; it fixes geometry and frames.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Absolute score threshold.
    #[arg(long, conflicts_with = "quantile")]
    pub tau: Option<f64>,
    /// Score quantile used as threshold when --tau is absent.
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Comma-separated lambda1 values.
    #[arg(
        long = "lambda1-grid",
        value_delimiter = ',',
        default_value = "0,0.2,0.4,0.6"
    )]
    pub lambda1_grid: Vec<f64>,
    /// Comma-separated lambda2 values.
    #[arg(
        long = "lambda2-grid",
        value_delimiter = ',',
        default_value = "0.2,0.4,0.6"
    )]
    pub lambda2_grid: Vec<f64>,
    /// Leave the wall-time column at zero.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, Args)]
pub struct ReplayArgs {
    /// A run.toml written by an earlier command.
    pub record: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// What a command writes next to its outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: Option<u64>,
    pub command: Command,
    #[serde(default)]
    pub resolved: toml::Table,
}

/// Seed for a named module: derived from the global seed when given,
/// otherwise `fallback`.
fn module_seed(global: Option<u64>, name: &str, fallback: u64) -> u64 {
    global.map_or(fallback, |s| substream(s, name))
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        ensure!(n > 0, "--threads must be positive");
        // a pool may already exist when called repeatedly in one process
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            warn!("thread pool already initialised: {e}");
        }
    }
    dispatch(cli.command, cli.seed)
}

fn dispatch(command: Command, seed: Option<u64>) -> Result<()> {
    match command {
        Command::Gen(a) => cmd_gen(&a, seed),
        Command::Bin(a) => cmd_bin(&a, seed),
        Command::Decompose(a) => cmd_decompose(&a, seed),
        Command::Classify(a) => cmd_classify(&a, seed),
        Command::Denoise(a) => cmd_denoise(&a, seed),
        Command::Sweep(a) => cmd_sweep(&a, seed),
        Command::Replay(a) => cmd_replay(&a),
    }
}

pub fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    let text = fs::read_to_string(&args.record)
        .with_context(|| format!("reading {}", args.record.display()))?;
    let record: RunRecord =
        toml::from_str(&text).with_context(|| format!("parsing {}", args.record.display()))?;
    let mut command = record.command;
    if let Some(dir) = &args.out_dir {
        match &mut command {
            Command::Gen(a) => {
                let name = a
                    .out
                    .file_name()
                    .context("recorded output has no file name")?;
                a.out = dir.join(name);
            }
            Command::Bin(a) => {
                let name = a
                    .out
                    .file_name()
                    .context("recorded output has no file name")?;
                a.out = dir.join(name);
            }
            Command::Decompose(a) => a.out_dir = dir.clone(),
            Command::Classify(a) => a.out_dir = dir.clone(),
            Command::Denoise(a) => a.out_dir = dir.clone(),
            Command::Sweep(a) => a.out_dir = dir.clone(),
            Command::Replay(_) => bail!("a replay record cannot contain a replay"),
        }
    }
    dispatch(command, record.seed)
}

fn write_record(
    path: &Path,
    seed: Option<u64>,
    command: Command,
    resolved: toml::Table,
) -> Result<()> {
    let record = RunRecord {
        seed,
        command,
        resolved,
    };
    let text = toml::to_string(&record).context("serialising run record")?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    Ok(toml::Table::try_from(value)?)
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parse_geometry(s: &str) -> Result<Geometry> {
    s.parse::<Geometry>()
        .map_err(|e| anyhow::anyhow!("--geometry {s:?}: {e}"))
}

fn read_stream(path: &Path, geometry: Geometry) -> Result<EventStream> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_events(BufReader::new(f), EventFormat::Csv, geometry)
        .with_context(|| format!("reading events from {}", path.display()))
}

fn read_factors(path: &Path) -> Result<FactorTriple> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_checkpoint(BufReader::new(f))
        .with_context(|| format!("reading checkpoint {}", path.display()))
}

/// Stream and tensor binned to match a checkpoint's `I x J x N`.
fn load_for_checkpoint(input: &Path, factors: &FactorTriple) -> Result<(EventStream, EventTensor)> {
    let [rows, cols, frames] = factors.dims();
    let stream = read_stream(input, Geometry::new(rows, cols))?;
    let tensor = bin_to_tensor(&stream, frames)?;
    Ok((stream, tensor))
}

fn spec_echo_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".spec.toml");
    out.with_file_name(name)
}

pub fn cmd_gen(args: &GenArgs, seed: Option<u64>) -> Result<()> {
    let mut spec = match (&args.spec, args.desk_noise) {
        (Some(path), None) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading scene spec {}", path.display()))?;
            SceneSpec::from_toml_str(&text)
                .with_context(|| format!("scene spec {}", path.display()))?
        }
        (None, Some(noise)) => {
            ensure!(
                (0.0..1.0).contains(&noise),
                "--desk-noise must lie in [0, 1), got {noise}"
            );
            SceneSpec::desk_replica(noise, 0)
        }
        _ => bail!("exactly one of --spec and --desk-noise is required"),
    };
    spec.seed = module_seed(seed, "synth", spec.seed);
    spec.validate()?;
    let summary = synth::describe(&spec);
    for k in &summary.clipped_objects {
        warn!("object {k} leaves the sensor and is clipped to the border");
    }
    let stream = synth::generate(&spec)?;
    let mut w = create_file(&args.out)?;
    stream.write_csv(&mut w)?;
    w.flush()?;

    let echo = spec_echo_path(&args.out);
    fs::write(&echo, spec.to_toml_string())
        .with_context(|| format!("writing {}", echo.display()))?;
    let frames_tensor = bin_to_tensor(&stream, spec.frames)?;
    println!(
        "wrote {} events ({} expected) to {}; density {:.4}%",
        stream.len(),
        summary.expected_events.round(),
        args.out.display(),
        100.0 * tensor_density(&frames_tensor)
    );
    Ok(())
}

pub fn cmd_bin(args: &BinArgs, _seed: Option<u64>) -> Result<()> {
    let geometry = parse_geometry(&args.input.geometry)?;
    ensure!(args.input.frames > 0, "--frames must be positive");
    let stream = read_stream(&args.input.input, geometry)?;
    let tensor = bin_to_tensor(&stream, args.input.frames)?;
    let mut w = create_file(&args.out)?;
    tensor.write_dump(&mut w)?;
    w.flush()?;
    println!(
        "{}x{}x{} tensor, {} ones, density {:.4}%",
        tensor.dims()[0],
        tensor.dims()[1],
        tensor.dims()[2],
        tensor.ones(),
        100.0 * tensor_density(&tensor)
    );
    Ok(())
}

/// `ENTN`, or `FCTN-ablation` when the L1 term is off.
pub fn model_label(cfg: &SolverConfig) -> &'static str {
    if cfg.lambda1 == 0.0 {
        "FCTN-ablation"
    } else {
        "ENTN"
    }
}

pub fn cmd_decompose(args: &DecomposeArgs, seed: Option<u64>) -> Result<()> {
    let geometry = parse_geometry(&args.input.geometry)?;
    ensure!(args.input.frames > 0, "--frames must be positive");
    let cfg = args.solver.config(module_seed(seed, "solver", 0));
    cfg.validate()?;
    prepare_dir(&args.out_dir)?;

    let stream = read_stream(&args.input.input, geometry)?;
    let tensor = bin_to_tensor(&stream, args.input.frames)?;
    info!(
        "{} events into {:?}, density {:.4}%",
        stream.len(),
        tensor.dims(),
        100.0 * tensor_density(&tensor)
    );
    let start = Instant::now();
    let (factors, state) = solve(&tensor.to_tensor(), &cfg)?;
    let secs = start.elapsed().as_secs_f64();

    let ckpt = args.out_dir.join("factors.ckpt");
    let mut w = create_file(&ckpt)?;
    if args.binary {
        write_checkpoint_binary(&factors, &mut w)?;
    } else {
        write_checkpoint_text(&factors, &mut w)?;
    }
    w.flush()?;

    let metadata = [
        ("model", model_label(&cfg).to_string()),
        ("lambda1", cfg.lambda1.to_string()),
        ("lambda2", cfg.lambda2.to_string()),
        ("f_max", cfg.f_max.to_string()),
        ("seed", cfg.seed.to_string()),
        ("converged", state.converged().to_string()),
    ];
    let mut w = create_file(&args.out_dir.join("trace.csv"))?;
    write_trace_csv(state.trace(), &metadata, &mut w)?;
    w.flush()?;

    let mut resolved = toml::Table::new();
    resolved.insert("solver".into(), toml::Value::Table(to_table(&cfg)?));
    resolved.insert("model".into(), model_label(&cfg).into());
    write_record(
        &args.out_dir.join(RUN_RECORD),
        seed,
        Command::Decompose(args.clone()),
        resolved,
    )?;

    let rel = state.trace().last().map_or(f64::NAN, |r| r.rel_change);
    println!(
        "{}: f={} iterations={} rel_change={:.3e} converged={} time={:.2}s",
        model_label(&cfg),
        state.rank(),
        state.iterations(),
        rel,
        state.converged(),
        secs
    );
    Ok(())
}

pub fn cmd_classify(args: &ClassifyArgs, seed: Option<u64>) -> Result<()> {
    args.task.validate()?;
    prepare_dir(&args.out_dir)?;
    let factors = read_factors(&args.checkpoint)?;
    let (stream, tensor) = load_for_checkpoint(&args.input, &factors)?;
    ensure!(
        stream.is_labeled(),
        "protocol error: {} has no label column; classification needs labels",
        args.input.display()
    );
    let task = args.task.task();
    let svm = args.task.svm(module_seed(seed, "svm", 0));
    let ev = eval::evaluate_factors(
        &stream,
        &tensor,
        &factors,
        task,
        &svm,
        args.task.train_fraction,
    )?;

    let mut w = create_file(&args.out_dir.join("model.txt"))?;
    ev.model.write(&mut w)?;
    w.flush()?;
    let report = format!(
        "auc {}\ntrain_rows {}\ntrain_positive {}\ntest_rows {}\ntest_positive {}\nrank {}\n",
        ev.auc,
        ev.train_rows,
        ev.train_positive,
        ev.test_rows,
        ev.test_positive,
        factors.rank()
    );
    fs::write(args.out_dir.join("report.txt"), &report)?;

    let mut resolved = toml::Table::new();
    resolved.insert("svm".into(), toml::Value::Table(to_table(&svm)?));
    write_record(
        &args.out_dir.join(RUN_RECORD),
        seed,
        Command::Classify(args.clone()),
        resolved,
    )?;
    println!(
        "AUC {:.4} (train {} / test {} events)",
        ev.auc, ev.train_rows, ev.test_rows
    );
    Ok(())
}

pub fn cmd_denoise(args: &DenoiseArgs, seed: Option<u64>) -> Result<()> {
    let q = args.quantile.unwrap_or(DEFAULT_QUANTILE);
    if args.tau.is_none() {
        ensure!(
            (0.0..=1.0).contains(&q),
            "--quantile must lie in [0, 1], got {q}"
        );
    }
    if let Some(t) = args.tau {
        ensure!(!t.is_nan(), "--tau must be a number");
    }
    prepare_dir(&args.out_dir)?;
    let factors = read_factors(&args.checkpoint)?;
    let (stream, tensor) = load_for_checkpoint(&args.input, &factors)?;
    let scores = denoise::score_events(&stream, &tensor, &factors)?;
    let tau = match args.tau {
        Some(t) => t,
        None => denoise::quantile(&scores, q)?,
    };
    let (kept, report) = denoise::filter(&stream, &scores, tau)?;

    let mut w = create_file(&args.out_dir.join("filtered.csv"))?;
    kept.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create_file(&args.out_dir.join("scores.csv"))?;
    report.write_csv(&stream, &mut w)?;
    w.flush()?;
    fs::write(args.out_dir.join("report.txt"), report.summary())?;

    let mut resolved = toml::Table::new();
    resolved.insert("threshold".into(), tau.into());
    if args.tau.is_none() {
        resolved.insert("quantile".into(), q.into());
    }
    write_record(
        &args.out_dir.join(RUN_RECORD),
        seed,
        Command::Denoise(args.clone()),
        resolved,
    )?;
    print!("{}", report.summary());
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs, seed: Option<u64>) -> Result<()> {
    let geometry = parse_geometry(&args.input.geometry)?;
    ensure!(args.input.frames > 0, "--frames must be positive");
    ensure!(
        !args.lambda1_grid.is_empty() && !args.lambda2_grid.is_empty(),
        "both lambda grids need at least one value"
    );
    args.task.validate()?;
    let base = PipelineConfig {
        solver: args.solver.config(module_seed(seed, "solver", 0)),
        svm: args.task.svm(module_seed(seed, "svm", 0)),
        task: args.task.task(),
        train_fraction: args.task.train_fraction,
    };
    let grid = SweepGrid {
        lambda1: args.lambda1_grid.clone(),
        lambda2: args.lambda2_grid.clone(),
    };
    for (l1, l2) in grid.cells() {
        let cfg = SolverConfig {
            lambda1: l1,
            lambda2: l2,
            ..base.solver.clone()
        };
        if let Err(e) = cfg.validate() {
            warn!("cell lambda1={l1} lambda2={l2} will fail: {e}");
        }
    }
    prepare_dir(&args.out_dir)?;
    let stream = read_stream(&args.input.input, geometry)?;
    ensure!(
        stream.is_labeled(),
        "protocol error: {} has no label column; the sweep needs labels",
        args.input.input.display()
    );
    let tensor = bin_to_tensor(&stream, args.input.frames)?;
    let report = eval::sweep_lambdas(&stream, &tensor, &grid, &base)?;
    let mut w = create_file(&args.out_dir.join("sweep.csv"))?;
    report.write_csv(&mut w, !args.no_timing)?;
    w.flush()?;

    let mut resolved = toml::Table::new();
    resolved.insert("pipeline".into(), toml::Value::Table(to_table(&base)?));
    write_record(
        &args.out_dir.join(RUN_RECORD),
        seed,
        Command::Sweep(args.clone()),
        resolved,
    )?;

    let ok = report.cells.iter().filter(|c| c.auc().is_some()).count();
    println!(
        "{} of {} cells succeeded; gap {:.3}",
        ok,
        report.cells.len(),
        report.overall_gap()
    );
    if let Some(best) = report.best() {
        println!(
            "best lambda1={} lambda2={} AUC {:.4}",
            best.lambda1,
            best.lambda2,
            best.auc().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
