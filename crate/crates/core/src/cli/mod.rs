//! Command-line front end. Every command reads its inputs from files and
//! writes its outputs under `--out`, listing each file in the run manifest.
//!
//! Options can also come from a `key=value` file given with `--config`; its
//! entries are applied first, so flags on the command line win.

mod commands;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::cnn::ArchKind;
use crate::ingest::{BandRolloff, ClassSpec};
use crate::Error;

pub const THREADS_ENV: &str = "SPECTRUM_DC_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "spectrum-dc", version, about = "Unsupervised feature learning for spectrum tiles")]
#[command(args_override_self = true, propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct GlobalArgs {
    /// Base seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long, global = true)]
    strict: bool,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Worker threads (0 = available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// key=value file with default options.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    Default,
    SixClass,
    EdgeBands,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic recording and its tiles.
    Synth(SynthArgs),
    /// Cut a PSD recording into normalized tiles.
    Segment(SegmentArgs),
    /// Flatten + PCA baseline with a k-means sweep.
    Baseline(BaselineArgs),
    /// Train a CNN on its own k-means pseudo-labels.
    Deepcluster(DeepClusterArgs),
    /// Score a trained checkpoint on a tile set.
    Evaluate(EvaluateArgs),
    /// Compare the baseline and DeepCluster outputs of the run directory.
    Report,
}

#[derive(Debug, Clone, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    /// Tile side length [default: 128].
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    tiles_per_class: Option<usize>,
    /// Tiles per sub-band for the edge-bands preset.
    #[arg(long)]
    windows_per_band: Option<usize>,
    /// Replaces the preset's classes: kind:snr_db:duty_cycle, comma separated.
    #[arg(long, value_delimiter = ',')]
    class: Vec<ClassSpec>,
    #[arg(long)]
    bands: Option<usize>,
    /// Replaces the preset's roll-offs: band:low|high:depth_db, comma separated.
    #[arg(long, value_delimiter = ',')]
    rolloff: Vec<BandRolloff>,
    #[arg(long)]
    noise_floor: Option<f64>,
    #[arg(long)]
    noise_std: Option<f64>,
}

#[derive(Debug, Clone, Args)]
struct SegmentArgs {
    #[arg(long)]
    psd: PathBuf,
    #[arg(long, default_value_t = 128)]
    window: usize,
}

#[derive(Debug, Clone, Args)]
struct SubsampleArgs {
    /// Samples drawn for the VAT/iVAT images.
    #[arg(long, default_value_t = crate::eval::DEFAULT_VAT_SUBSAMPLE)]
    subsample_vat: usize,
    /// Samples drawn for silhouette scores.
    #[arg(long, default_value_t = crate::eval::DEFAULT_SILHOUETTE_SUBSAMPLE)]
    subsample_sil: usize,
}

#[derive(Debug, Clone, Args)]
struct BaselineArgs {
    #[arg(long)]
    tiles: PathBuf,
    /// Ground-truth labels; enables NMI columns.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Principal components kept for clustering.
    #[arg(short = 'n', long, default_value_t = 2)]
    components: usize,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 30)]
    k_max: usize,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = 300)]
    max_iter: usize,
    /// Rows used to fit the PCA.
    #[arg(long, default_value_t = crate::pca::DEFAULT_FIT_ROW_CAP)]
    fit_rows: usize,
    #[command(flatten)]
    subsample: SubsampleArgs,
}

#[derive(Debug, Clone, Args)]
struct DeepClusterArgs {
    #[arg(long)]
    tiles: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(short = 'k', long, default_value_t = 10)]
    clusters: usize,
    #[arg(short = 'n', long, default_value_t = 32)]
    components: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value = "reduced")]
    arch: ArchKind,
    /// Pooled feature width (512 for resnet18).
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 1e-5)]
    weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    /// Sample batches uniformly instead of balancing pseudo-classes.
    #[arg(long)]
    no_balanced: bool,
    #[arg(long, default_value_t = crate::cnn::DEFAULT_BN_MOMENTUM)]
    bn_momentum: f64,
    #[arg(long)]
    whiten: bool,
    #[arg(long)]
    no_l2: bool,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    #[arg(long, default_value_t = crate::eval::DEFAULT_SILHOUETTE_SUBSAMPLE)]
    subsample_sil: usize,
}

#[derive(Debug, Clone, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    tiles: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[command(flatten)]
    subsample: SubsampleArgs,
}

/// Failure classes of a command, mapped onto exit codes.
#[derive(Debug)]
enum Failure {
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

type CmdResult<T = ()> = std::result::Result<T, Failure>;

/// Runs the tool on `args` (without the program name) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    match run_inner(args) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}\n\n{}", Cli::command().render_usage());
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn run_inner(args: Vec<OsString>) -> CmdResult {
    let cli = match parse(&args)? {
        Some(cli) => cli,
        None => return Ok(()),
    };
    let cli = match &cli.global.config {
        Some(path) => {
            let merged = with_config(&args, &cli, path)?;
            match parse(&merged)? {
                Some(c) => c,
                None => return Ok(()),
            }
        }
        None => cli,
    };
    let threads = thread_count(&cli.global)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| commands::dispatch(&cli))
}

/// `Ok(None)` when clap handled the request itself (help, version).
fn parse(args: &[OsString]) -> CmdResult<Option<Cli>> {
    let argv = std::iter::once(OsString::from("spectrum-dc")).chain(args.iter().cloned());
    match Cli::try_parse_from(argv) {
        Ok(cli) => Ok(Some(cli)),
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            eprint!("{}", e.render());
            Ok(None)
        }
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            eprint!("{}", e.render());
            Err(Failure::Usage("no command given".into()))
        }
        Err(e) => {
            let text = e.render().to_string();
            Err(Failure::Usage(text.trim_start_matches("error: ").trim_end().to_string()))
        }
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Synth(_) => "synth",
        Command::Segment(_) => "segment",
        Command::Baseline(_) => "baseline",
        Command::Deepcluster(_) => "deepcluster",
        Command::Evaluate(_) => "evaluate",
        Command::Report => "report",
    }
}

/// Rebuilds the argument list as `command <config options> <user options>`,
/// relying on later occurrences overriding earlier ones.
fn with_config(args: &[OsString], cli: &Cli, path: &Path) -> CmdResult<Vec<OsString>> {
    let name = command_name(&cli.command);
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let entries = crate::cnn::parse_kv(&text)?;

    let root = Cli::command();
    let sub = root.find_subcommand(name).expect("known subcommand");
    let find = |key: &str| {
        sub.get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key))
    };
    let mut from_file = Vec::new();
    for (key, value) in &entries {
        let key = key.replace('_', "-");
        if key == "config" {
            return Err(Failure::Usage("config files cannot include other config files".into()));
        }
        let arg = find(&key).ok_or_else(|| Failure::Usage(format!("unknown option '{key}' in {}", path.display())))?;
        if arg.get_action().takes_values() {
            from_file.push(OsString::from(format!("--{key}")));
            from_file.push(OsString::from(value));
        } else {
            match value.as_str() {
                "1" | "true" => from_file.push(OsString::from(format!("--{key}"))),
                "0" | "false" => {}
                v => return Err(Failure::Usage(format!("option '{key}' takes true or false, not '{v}'"))),
            }
        }
    }

    let at = subcommand_position(args, name);
    let mut out = vec![OsString::from(name)];
    out.extend(from_file);
    out.extend(args[..at].iter().cloned());
    out.extend(args[at + 1..].iter().cloned());
    Ok(out)
}

/// Index of the subcommand token, skipping values of global options.
fn subcommand_position(args: &[OsString], name: &str) -> usize {
    let takes_value = ["--seed", "--out", "--threads", "--config"];
    let mut i = 0;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == name {
            return i;
        }
        i += if takes_value.contains(&a.as_ref()) { 2 } else { 1 };
    }
    unreachable!("clap parsed subcommand '{name}' from these arguments")
}

/// Strict mode pins one thread; otherwise the environment variable, then
/// `--threads`, then the machine's parallelism.
fn thread_count(g: &GlobalArgs) -> CmdResult<usize> {
    if g.strict {
        return Ok(1);
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("{THREADS_ENV}='{v}' is not a thread count")));
    }
    Ok(g.threads.unwrap_or(0))
}
