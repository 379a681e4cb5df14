//! Command-line front end: `train`, `eval`, `prune`, `symbolify`, `report`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{ingest_csv, split_standardize, write_atomic, Splits, Stats, Windows};
use crate::error::Error;
use crate::interpretability::{generate_report, prune, PruneConfig, DEFAULT_TAU, DEFAULT_TOP_M};
use crate::metrics::{metrics, MetricSet};
use crate::model::{train, ForecastModel, Task};

#[derive(Parser, Debug)]
#[command(name = "itfkan", version, about = "Interpretable KAN forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and evaluate it on the test split.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Prune small edges and write the pruned checkpoint.
    Prune(PruneArgs),
    /// Fit symbolic formulas to the surviving edges.
    Symbolify(ReportArgs),
    /// Pruning status, symbolic formulas and the data-flow graph.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Overrides the dataset path stored in the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau: f64,
    #[arg(long = "top-m", default_value_t = DEFAULT_TOP_M)]
    top_m: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            e => Failure::Runtime(e),
        }
    }
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "configuration error: {m}"),
            Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Results go to `out`, diagnostics to stderr.
pub fn run<I, S>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let res = match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Prune(a) => cmd_prune(&a, out),
        Command::Symbolify(a) => cmd_report(&a, false, out),
        Command::Report(a) => cmd_report(&a, true, out),
    };
    match res {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.code()
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(Error::Data(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, text: &str) -> CmdResult {
    out.write_all(text.as_bytes())
        .map_err(|e| Failure::Runtime(Error::Io(e)))
}

/// Loads the dataset named by `run` and builds the three standardized splits.
pub fn load_splits(run: &RunConfig) -> Result<Splits<f64>, Failure> {
    let path = run.require_data()?;
    let ds = ingest_csv(path)?;
    let rule = run.split.rule(&ds.name);
    Ok(split_standardize(&ds, rule, run.model.lookback, run.model.horizon)?)
}

/// Test-split metrics: MSE and MAE on the standardized scale, sMAPE, MASE
/// and OWA on the original scale with each window's lookback as history.
pub fn test_metrics(model: &ForecastModel<f64>, test: &Windows<f64>, season: usize, task: Task) -> crate::Result<MetricSet> {
    let (l, f, n) = (test.lookback, test.horizon, test.variates());
    let mut z_fore = Vec::new();
    let mut z_act = Vec::new();
    let mut fore = Vec::new();
    let mut act = Vec::new();
    let mut hist = Vec::new();
    let idx: Vec<usize> = (0..test.len()).collect();
    for chunk in idx.chunks(model.cfg.batch_size) {
        let batch = test.batch(chunk);
        let pred = model.forward(&batch.inputs)?;
        for r in 0..chunk.len() * n {
            let (mu, sd) = (test.stats.mean[r % n], test.stats.std[r % n]);
            let raw = |v: &[f64]| v.iter().map(|x| x * sd + mu).collect::<Vec<_>>();
            let p = &pred.data()[r * f..(r + 1) * f];
            let y = &batch.targets.data()[r * f..(r + 1) * f];
            let h = &batch.inputs.data()[r * l..(r + 1) * l];
            fore.push(raw(p));
            act.push(raw(y));
            hist.push(raw(h));
            z_fore.push(p.to_vec());
            z_act.push(y.to_vec());
        }
    }
    let mut set = metrics(&fore, &act, &hist, season, task == Task::Short)?;
    set.mse = crate::metrics::mse(&z_fore, &z_act)?;
    set.mae = crate::metrics::mae(&z_fore, &z_act)?;
    Ok(set)
}

/// Training windows stacked into one `(windows, N, L)` tensor.
fn training_inputs(train: &Windows<f64>) -> crate::autodiff::Tensor<f64> {
    let starts: Vec<usize> = (0..train.len()).collect();
    train.batch(&starts).inputs
}

/// Paths written by `train`, removed again if the command fails.
struct Artifacts {
    written: Vec<PathBuf>,
    keep: bool,
}

impl Artifacts {
    fn write(&mut self, path: PathBuf, bytes: &[u8]) -> CmdResult {
        write_atomic(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }
}

impl Drop for Artifacts {
    fn drop(&mut self) {
        if !self.keep {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
    }
}

pub fn stats_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("stats")
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> CmdResult {
    let mut run = RunConfig::read(&args.config)?;
    if let Some(s) = args.seed {
        run.seed = s;
    }
    if let Some(o) = &args.out {
        run.out = o.clone();
    }
    run.require_data()?;
    emit(out, &format!("# resolved configuration\n{}\n", run.echo()))?;
    let splits = load_splits(&run)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut model = ForecastModel::from_inputs(&mut rng, run.model.clone(), &training_inputs(&splits.train))?;
    let history = train(&mut model, &splits.train, &splits.val, run.task, run.seed)?;
    for e in &history.epochs {
        eprintln!(
            "epoch {} train_pred={:.6} val_pred={:.6} reg={:.6}",
            e.epoch, e.train_pred, e.val_pred, e.reg
        );
    }
    let set = test_metrics(&model, &splits.test, run.season(), run.task)?;
    fs::create_dir_all(&run.out).map_err(|e| io_err(&run.out, e))?;
    let mut art = Artifacts { written: Vec::new(), keep: false };
    let ckpt = run.checkpoint_path();
    if let Some(dir) = ckpt.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    art.write(ckpt.clone(), &checkpoint::encode(&model, &run))?;
    art.write(stats_path(&ckpt), splits.stats.to_sidecar().as_bytes())?;
    art.write(run.out.join("history.tsv"), history.to_tsv().as_bytes())?;
    art.write(run.out.join("metrics.txt"), set.render().as_bytes())?;
    art.write(run.out.join("config.txt"), run.echo().as_bytes())?;
    emit(out, &set.render())?;
    art.keep = true;
    Ok(())
}

/// Every model field where `a` and `b` disagree.
fn config_mismatch(a: &RunConfig, b: &RunConfig) -> Option<String> {
    let (x, y) = (&a.model, &b.model);
    let fields = [
        ("lookback", x.lookback, y.lookback),
        ("horizon", x.horizon, y.horizon),
        ("width", x.width, y.width),
        ("kernel", x.kernel, y.kernel),
        ("trend_degree", x.trend_degree, y.trend_degree),
        ("top_k", x.top_k, y.top_k),
        ("patch_len", x.patch_len, y.patch_len),
        ("stride", x.stride, y.stride),
    ];
    fields
        .iter()
        .find(|(_, p, q)| p != q)
        .map(|(k, p, q)| format!("{k}: checkpoint has {p}, config has {q}"))
}

fn resolve(checkpoint_path: &Path, config: Option<&Path>) -> Result<(RunConfig, ForecastModel<f64>), Failure> {
    let (mut run, model) = checkpoint::load::<f64>(checkpoint_path)?;
    if let Some(c) = config {
        let other = RunConfig::read(c)?;
        if let Some(m) = config_mismatch(&run, &other) {
            return Err(Failure::Usage(m));
        }
        run.data = Some(other.require_data()?.to_path_buf());
        run.task = other.task;
        run.frequency = other.frequency;
        run.split = other.split;
    }
    Ok((run, model))
}

fn check_stats(checkpoint_path: &Path, stats: &Stats) -> CmdResult {
    let p = stats_path(checkpoint_path);
    if !p.exists() {
        return Ok(());
    }
    let saved = Stats::read_sidecar(&p)?;
    if saved.variates != stats.variates {
        return Err(Failure::Usage(format!(
            "variates: checkpoint trained on {:?}, dataset has {:?}",
            saved.variates, stats.variates
        )));
    }
    if saved != *stats {
        return Err(Failure::Runtime(Error::Data(
            "stored standardization statistics differ from the dataset's training split".into(),
        )));
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> CmdResult {
    let (run, model) = resolve(&args.checkpoint, args.config.as_deref())?;
    let splits = load_splits(&run)?;
    check_stats(&args.checkpoint, &splits.stats)?;
    let set = test_metrics(&model, &splits.test, run.season(), run.task)?;
    emit(out, &set.render())
}

fn out_dir(out: Option<&Path>, checkpoint: &Path) -> Result<PathBuf, Failure> {
    let dir = match out {
        Some(o) => o.to_path_buf(),
        None => checkpoint
            .parent()
            .filter(|d| !d.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn check_tau(tau: f64) -> CmdResult {
    PruneConfig::new(tau).map(|_| ()).map_err(|e| Failure::Usage(e.to_string()))
}

fn cmd_prune(args: &PruneArgs, out: &mut dyn Write) -> CmdResult {
    check_tau(args.tau)?;
    let (run, mut model) = checkpoint::load::<f64>(&args.checkpoint)?;
    let rep = prune(&mut model, PruneConfig::new(args.tau)?);
    let dir = out_dir(args.out.as_deref(), &args.checkpoint)?;
    let mut art = Artifacts { written: Vec::new(), keep: false };
    art.write(dir.join("pruned.ckpt"), &checkpoint::encode(&model, &run))?;
    art.write(dir.join("prune.tsv"), rep.render().as_bytes())?;
    emit(out, &rep.render())?;
    art.keep = true;
    Ok(())
}

fn cmd_report(args: &ReportArgs, full: bool, out: &mut dyn Write) -> CmdResult {
    check_tau(args.tau)?;
    let (run, model) = resolve(&args.checkpoint, args.config.as_deref())?;
    let splits = load_splits(&run)?;
    let rep = generate_report(&model, &splits.train, args.tau, args.top_m)?;
    let dir = out_dir(args.out.as_deref(), &args.checkpoint)?;
    let mut art = Artifacts { written: Vec::new(), keep: false };
    art.write(dir.join("symbolic.tsv"), rep.symbolic.to_tsv().as_bytes())?;
    art.write(dir.join("graph.tsv"), rep.symbolic.graph(&rep.model).as_bytes())?;
    if full {
        let text = rep.symbolic.render_text(&rep.prune);
        art.write(dir.join("prune.tsv"), rep.prune.render().as_bytes())?;
        art.write(dir.join("report.txt"), text.as_bytes())?;
        emit(out, &text)?;
    } else {
        emit(
            out,
            &format!(
                "{} edges fitted, {} preserved after pruning at tau={}\n",
                rep.symbolic.records.len(),
                rep.prune.preserved(),
                args.tau
            ),
        )?;
    }
    art.keep = true;
    Ok(())
}
