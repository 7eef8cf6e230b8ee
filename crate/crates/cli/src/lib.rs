//! Command-line driver: synthesize data, train VAE variants, evaluate the
//! GZSL/GFSL protocol and run parameter sweeps.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numeric or
//! runtime failure.

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use cadavae::checkpoint::Checkpoint;
use cadavae::classifier::{evaluate_fewshot, latent_training_set, EvalReport};
use cadavae::data::{assign_side_info, load_container, save_container, synth_generate, GzslDataset, SideInfoAssignment, SynthConfig};
use cadavae::trainer::{train, LossTrace};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{default_config_text, Resolved, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const REPORT_HEADER: &str = "dataset,variant,seed,shots,S,U,H";
pub const SWEEP_HEADER: &str = "sweep,value,dataset,variant,seed,shots,S,U,H,status";

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<cadavae::Error> for CliError {
    fn from(e: cadavae::Error) -> Self {
        use cadavae::Error as E;
        let code = match e {
            E::Io(_) | E::Format { .. } | E::Contract(_) => EXIT_USAGE,
            E::Dimension { .. } | E::Numeric(_) | E::State(_) => EXIT_RUNTIME,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "cadavae", version, about = "Aligned VAEs for generalized zero- and few-shot learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset container.
    Synth(SynthArgs),
    /// Train the modality VAEs and write `model.cvae` and `loss.csv`.
    Train(TrainArgs),
    /// Build latent sets, fit the classifier and report S, U and H.
    Eval(EvalArgs),
    /// Run the full pipeline over a grid of one parameter.
    Sweep(SweepArgs),
    /// Print a dataset summary.
    Summary {
        #[arg(long)]
        data: PathBuf,
    },
    /// Print the default configuration file.
    Config,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    seen: usize,
    #[arg(long, default_value_t = 5)]
    unseen: usize,
    #[arg(long, default_value_t = 64)]
    feat_dim: usize,
    #[arg(long, default_value_t = 16)]
    attr_dim: usize,
    /// Samples per class.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Standard deviation of the feature noise.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    /// Width of an additional sentence-like side-information table (0 = none).
    #[arg(long, default_value_t = 0)]
    sentence_dim: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Common {
    /// Dataset container (`.gzc`).
    #[arg(long)]
    data: PathBuf,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// vae | da | ca | cada
    #[arg(long)]
    variant: Option<String>,
    /// Override any configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    shots: Option<usize>,
    #[arg(long)]
    per_seen: Option<usize>,
    #[arg(long)]
    per_unseen: Option<usize>,
    #[arg(long)]
    dynamic: bool,
    /// Report CSV path; the report is always printed to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the fixed latent training set as CSV.
    #[arg(long)]
    dump_latent: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    LatentDim,
    Shots,
    Sideinfo,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::LatentDim => "latent-dim",
            SweepKind::Shots => "shots",
            SweepKind::Sideinfo => "sideinfo",
        }
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Swept parameter.
    #[arg(long = "sweep", value_enum)]
    kind: SweepKind,
    /// Comma-separated grid; `sideinfo` points are `xs:xu` percentages.
    #[arg(long)]
    values: String,
    /// Grid points evaluated concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Initializes logging from `CADA_LOG` (`quiet`, `info` or `debug`;
/// default `info`).
pub fn init_logging() {
    let level = match std::env::var("CADA_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Error,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Summary { data } => {
            print!("{}", load(&data)?.summary());
            Ok(())
        }
        Command::Config => {
            print!("{}", default_config_text());
            Ok(())
        }
    }
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        n_seen: a.seen,
        n_unseen: a.unseen,
        feat_dim: a.feat_dim,
        attr_dim: a.attr_dim,
        samples_per_class: a.samples,
        noise_sigma: a.sigma,
        sentence_dim: a.sentence_dim,
        seed: a.seed,
    };
    let ds = synth_generate(&cfg)?;
    save_container(&ds, &a.out)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn load(path: &Path) -> CliResult<GzslDataset> {
    load_container(path).map_err(|e| CliError::usage(format!("cannot load {}: {e}", path.display())))
}

/// Config file, then `--seed`/`--variant`, then `--set` and command flags.
fn run_config(common: &Common, extra: &[(&str, String)]) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path).map_err(CliError::usage)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string()).map_err(CliError::usage)?;
    }
    if let Some(v) = &common.variant {
        cfg.set("variant", v).map_err(CliError::usage)?;
    }
    for pair in &common.overrides {
        cfg.set_pair(pair).map_err(CliError::usage)?;
    }
    for (k, v) in extra {
        cfg.set(k, v).map_err(CliError::usage)?;
    }
    Ok(cfg)
}

fn resolve(cfg: &RunConfig) -> CliResult<Resolved> {
    let r = cfg.resolve().map_err(CliError::usage)?;
    log::info!("effective configuration:\n{}", cfg.describe().trim_end());
    Ok(r)
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
}

/// Side-information pairing: attributes unless sentence percentages are set.
pub fn assignment_for(ds: &GzslDataset, r: &Resolved) -> cadavae::Result<SideInfoAssignment> {
    if r.x_s == 0.0 && r.x_u == 0.0 {
        SideInfoAssignment::default_for(ds)
    } else {
        assign_side_info(ds, r.x_s, r.x_u, r.seed)
    }
}

/// Trains the VAEs described by `r`.
pub fn train_model(ds: &GzslDataset, r: &Resolved) -> cadavae::Result<(Checkpoint, LossTrace)> {
    let assignment = assignment_for(ds, r)?;
    let out = train(ds, &assignment, &r.train)?;
    Ok((Checkpoint::new(out.vaes)?, out.trace))
}

/// Runs the classifier stage for a trained model.
pub fn eval_model(model: &Checkpoint, ds: &GzslDataset, r: &Resolved) -> cadavae::Result<EvalReport> {
    let assignment = assignment_for(ds, r)?;
    evaluate_fewshot(model, ds, &assignment, &r.eval)
}

/// One report line (no header), accuracies with one decimal.
pub fn report_row(dataset: &str, variant: &str, seed: u64, shots: usize, report: &EvalReport) -> String {
    format!(
        "{dataset},{variant},{seed},{shots},{:.1},{:.1},{:.1}",
        report.s, report.u, report.h
    )
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let ds = load(&a.common.data)?;
    let r = resolve(&run_config(&a.common, &[])?)?;
    std::fs::create_dir_all(&a.out)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", a.out.display())))?;
    log::info!("training {} on {} with seed {}", r.variant, a.common.data.display(), r.seed);
    let (model, trace) = train_model(&ds, &r)?;
    model.save(a.out.join("model.cvae"))?;
    trace.write_csv(a.out.join("loss.csv"))?;
    if let Some(last) = trace.records.last() {
        log::info!("final epoch loss {:.4}", last.total);
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let ds = load(&a.common.data)?;
    let mut extra = Vec::new();
    if let Some(k) = a.shots {
        extra.push(("shots", k.to_string()));
    }
    if let Some(n) = a.per_seen {
        extra.push(("per_seen_class", n.to_string()));
    }
    if let Some(n) = a.per_unseen {
        extra.push(("per_unseen_class", n.to_string()));
    }
    if a.dynamic {
        extra.push(("dynamic", "true".into()));
    }
    let r = resolve(&run_config(&a.common, &extra)?)?;
    let model = Checkpoint::load(&a.model)
        .map_err(|e| CliError::usage(format!("cannot load {}: {e}", a.model.display())))?;
    if let Some(path) = &a.dump_latent {
        let set = latent_training_set(&model, &ds, &assignment_for(&ds, &r)?, &r.eval)?;
        set.write_csv(ds.classes(), path)?;
    }
    let report = eval_model(&model, &ds, &r)?;
    let csv = format!(
        "{REPORT_HEADER}\n{}\n",
        report_row(&dataset_name(&a.common.data), r.variant.name(), r.seed, r.eval.shots, &report)
    );
    print!("{csv}");
    if let Some(path) = &a.out {
        std::fs::write(path, &csv).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn parse_grid(kind: SweepKind, values: &str) -> CliResult<Vec<String>> {
    let grid: Vec<String> = values
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(str::to_owned)
        .collect();
    if grid.is_empty() {
        return Err(CliError::usage("empty sweep grid"));
    }
    for v in &grid {
        let ok = match kind {
            SweepKind::LatentDim | SweepKind::Shots => v.parse::<usize>().is_ok(),
            SweepKind::Sideinfo => v
                .split_once(':')
                .is_some_and(|(s, u)| s.parse::<f64>().is_ok() && u.parse::<f64>().is_ok()),
        };
        if !ok {
            return Err(CliError::usage(format!("invalid {} grid value `{v}`", kind.name())));
        }
    }
    Ok(grid)
}

fn sweep_overrides(kind: SweepKind, value: &str) -> Vec<(&'static str, String)> {
    match kind {
        SweepKind::LatentDim => vec![("latent_dim", value.to_owned())],
        SweepKind::Shots => vec![("shots", value.to_owned())],
        SweepKind::Sideinfo => {
            let (s, u) = value.split_once(':').expect("validated grid");
            vec![("x_s", s.to_owned()), ("x_u", u.to_owned())]
        }
    }
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let grid = parse_grid(a.kind, &a.values)?;
    let ds = load(&a.common.data)?;
    let name = dataset_name(&a.common.data);
    let base = resolve(&run_config(&a.common, &[])?)?;
    let configs = grid
        .iter()
        .map(|v| resolve(&run_config(&a.common, &sweep_overrides(a.kind, v))?))
        .collect::<CliResult<Vec<_>>>()?;

    // a shots sweep shares one trained model across grid points
    let shared = if a.kind == SweepKind::Shots {
        Some(train_model(&ds, &base).map(|m| m.0))
    } else {
        None
    };

    let point = |r: &Resolved| -> cadavae::Result<EvalReport> {
        match &shared {
            Some(Ok(model)) => eval_model(model, &ds, r),
            Some(Err(e)) => Err(cadavae::Error::State(format!("shared model failed to train: {e}"))),
            None => {
                let (model, _) = train_model(&ds, r)?;
                eval_model(&model, &ds, r)
            }
        }
    };

    let results: Vec<Mutex<Option<cadavae::Result<EvalReport>>>> = grid.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= grid.len() {
            break;
        }
        log::info!("sweep {} = {}", a.kind.name(), grid[i]);
        let res = point(&configs[i]);
        *results[i].lock().expect("result slot") = Some(res);
    };
    std::thread::scope(|s| {
        for _ in 1..a.jobs.clamp(1, grid.len()) {
            s.spawn(work);
        }
        work();
    });

    let mut csv = format!("{SWEEP_HEADER}\n");
    let mut successes = 0;
    for ((value, r), slot) in grid.iter().zip(&configs).zip(results) {
        let res = slot.into_inner().expect("result slot").expect("every grid point ran");
        let prefix = format!("{},{value},{name},{},{},{}", a.kind.name(), r.variant.name(), r.seed, r.eval.shots);
        match res {
            Ok(rep) => {
                successes += 1;
                let _ = writeln!(csv, "{prefix},{:.1},{:.1},{:.1},ok", rep.s, rep.u, rep.h);
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(csv, "{prefix},,,,error: {msg}");
            }
        }
    }
    print!("{csv}");
    if let Some(path) = &a.out {
        std::fs::write(path, &csv).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))?;
    }
    if successes == 0 {
        return Err(CliError {
            code: EXIT_RUNTIME,
            message: "every sweep point failed".into(),
        });
    }
    Ok(())
}
