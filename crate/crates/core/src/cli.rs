//! `cfaud` command-line front end.
//!
//! Every command writes a `<output>.manifest.json` next to its main output
//! recording the resolved configuration, seeds, paths and SHA-256 digests.
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or format
//! error, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::covdet::CdOptions;
use crate::error::{Error, Result};
use crate::evalkit::{calibrate, EvalReport};
use crate::pipeline::{baseline_scores, labels_of, reference_arch, train_config, Detector};
use crate::scenario::{Precision, SystemConfig};
use crate::store::{generate_dataset, read_dataset, DatasetHeader};

#[derive(Debug, Parser)]
#[command(name = "cfaud", version, about = "Grant-free activity detection for cell-free massive MIMO")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset.
    Generate(GenerateArgs),
    /// Train a detector network on a dataset.
    Train(TrainArgs),
    /// Recall and false-alarm rate of a trained network at one threshold.
    Eval(EvalArgs),
    /// Full ROC of the network or of the covariance baseline.
    Roc(RocArgs),
    /// Per-user covariance baseline scores for every sample.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Flat `key = value` configuration file; defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set num_aps=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub count: u64,
    /// Sample seed (default: the configuration's `rng_seed`). The AP layout
    /// and pilots always come from `rng_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset for the per-epoch loss trace.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Initialization and shuffling seed (default: the dataset's `rng_seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// `f64` or `f32` (default: the dataset configuration).
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Loss trace CSV (default: `<out-model>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Calibrate the threshold for this false-alarm rate.
    #[arg(long, conflicts_with = "threshold", required_unless_present = "threshold")]
    pub target_fa: Option<f64>,
    /// Use a fixed threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Dataset used for calibration (default: the evaluation data).
    #[arg(long)]
    pub calib: Option<PathBuf>,
    #[arg(long)]
    pub precision: Option<String>,
    /// Metrics CSV (default: `<model>.eval.csv`).
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    pub model: Option<PathBuf>,
    /// Sweep the covariance baseline instead of a network.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long)]
    pub data: PathBuf,
    /// Coordinate-descent sweeps for the baseline.
    #[arg(long, default_value_t = 15)]
    pub sweeps: usize,
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub out_csv: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub sweeps: usize,
    #[arg(long)]
    pub out_scores: PathBuf,
}

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    config: Option<SystemConfig>,
    seed: Option<u64>,
    inputs: Vec<Artifact>,
    outputs: Vec<Artifact>,
    wall_clock_s: f64,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut hex = String::with_capacity(64);
    for b in Sha256::digest(&bytes) {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

fn artifacts(paths: &[&Path]) -> Result<Vec<Artifact>> {
    paths
        .iter()
        .map(|p| {
            Ok(Artifact {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

/// `<path>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_os_string();
    s.push(".manifest.json");
    PathBuf::from(s)
}

struct Run {
    command: &'static str,
    args: Vec<String>,
    started: Instant,
}

impl Run {
    fn finish(
        self,
        config: Option<SystemConfig>,
        seed: Option<u64>,
        inputs: &[&Path],
        outputs: &[&Path],
    ) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            args: self.args,
            config,
            seed,
            inputs: artifacts(inputs)?,
            outputs: artifacts(outputs)?,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        let path = manifest_path(outputs[0]);
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Structural(format!("manifest serialization: {e}")))?;
        text.push('\n');
        write_text(&path, &text)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn precision_or(flag: &Option<String>, header: &DatasetHeader) -> Result<Precision> {
    match flag {
        Some(p) => Precision::parse(p),
        None => Ok(header.config().precision),
    }
}

fn load_set(path: &Path) -> Result<(DatasetHeader, crate::neuralnet::LabeledSet)> {
    read_dataset(path)?.load_labeled()
}

fn same_layout(a: &DatasetHeader, b: &DatasetHeader, what: &str) -> Result<()> {
    let (ca, cb) = (a.config(), b.config());
    if (ca.num_aps, ca.num_antennas, ca.num_users, ca.pilot_len, ca.feature_mode)
        != (cb.num_aps, cb.num_antennas, cb.num_users, cb.pilot_len, cb.feature_mode)
    {
        return Err(Error::Structural(format!("{what} dimensions differ from the training data")));
    }
    if a.layout.pilots != b.layout.pilots || a.layout.ap_positions != b.layout.ap_positions {
        log::warn!("{what} uses a different AP layout or pilot book");
    }
    Ok(())
}

fn cmd_generate(a: &GenerateArgs, run: Run) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => SystemConfig::from_file(p)?,
        None => SystemConfig::default(),
    };
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        config.set(k.trim(), v)?;
    }
    config.validate()?;
    let seed = a.seed.unwrap_or(config.rng_seed);
    let header = generate_dataset(&config, a.count, seed, &a.out)?;
    println!(
        "wrote {} samples (M={} N={} K={} tau={}, {} bytes per record) to {}",
        a.count,
        config.num_aps,
        config.num_antennas,
        config.num_users,
        config.pilot_len,
        header.record_len(),
        a.out.display()
    );
    let inputs: Vec<&Path> = a.config.iter().map(|p| p.as_path()).collect();
    run.finish(Some(config), Some(seed), &inputs, &[&a.out])
}

fn cmd_train(a: &TrainArgs, run: Run) -> Result<()> {
    let (header, data) = load_set(&a.data)?;
    let val = match &a.val {
        Some(p) => {
            let (vh, vs) = load_set(p)?;
            same_layout(&header, &vh, "validation data")?;
            Some(vs)
        }
        None => None,
    };
    let mut config = header.config().clone();
    config.precision = precision_or(&a.precision, &header)?;
    let mut cfg = train_config(&config);
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        cfg.learning_rate = lr;
    }
    config.num_epochs = cfg.epochs;
    config.batch_size = cfg.batch_size;
    config.learning_rate = cfg.learning_rate;
    let seed = a.seed.unwrap_or(config.rng_seed);
    let mut det = Detector::initialized(&config, seed)?;
    let trace = if data.is_empty() && cfg.epochs == 0 {
        Default::default()
    } else {
        det.train(&data, val.as_ref(), &cfg, seed)?
    };
    det.save(&a.out_model)?;
    let loss_csv = a.loss_csv.clone().unwrap_or_else(|| {
        let mut s = a.out_model.as_os_str().to_os_string();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    write_text(&loss_csv, &trace.to_csv())?;
    println!(
        "trained {} epochs on {} samples; model {}, loss trace {}",
        cfg.epochs,
        data.len(),
        a.out_model.display(),
        loss_csv.display()
    );
    let mut inputs = vec![a.data.as_path()];
    inputs.extend(a.val.iter().map(|p| p.as_path()));
    run.finish(Some(config), Some(seed), &inputs, &[&a.out_model, &loss_csv])
}

fn load_model(path: &Path, header: &DatasetHeader, precision: &Option<String>) -> Result<Detector> {
    let expected = reference_arch(header.config());
    Detector::load(path, Some(&expected), precision_or(precision, header)?)
}

fn cmd_eval(a: &EvalArgs, run: Run) -> Result<()> {
    let (header, data) = load_set(&a.data)?;
    let det = load_model(&a.model, &header, &a.precision)?;
    let scores = det.scores(&data)?;
    let labels = labels_of(&data);
    let (threshold, calibration) = match (a.threshold, a.target_fa) {
        (Some(t), _) => (t, None),
        (None, Some(target)) => {
            if !(0.0..=1.0).contains(&target) {
                return Err(Error::Config(format!("target false-alarm rate {target} outside [0, 1]")));
            }
            let cal = match &a.calib {
                Some(p) => {
                    let (ch, cs) = load_set(p)?;
                    same_layout(&header, &ch, "calibration data")?;
                    calibrate(&det.scores(&cs)?, &labels_of(&cs), target)?
                }
                None => calibrate(&scores, &labels, target)?,
            };
            (cal.threshold, Some(cal))
        }
        (None, None) => return Err(Error::Config("need --target-fa or --threshold".into())),
    };
    let report = EvalReport::new(&scores, &labels, threshold, calibration)?;
    print!("{}", report.to_text());
    let out = a.out_csv.clone().unwrap_or_else(|| {
        let mut s = a.model.as_os_str().to_os_string();
        s.push(".eval.csv");
        PathBuf::from(s)
    });
    write_text(&out, &report.to_csv())?;
    let mut inputs = vec![a.model.as_path(), a.data.as_path()];
    inputs.extend(a.calib.iter().map(|p| p.as_path()));
    run.finish(Some(header.config().clone()), None, &inputs, &[&out])
}

fn cd_options(sweeps: usize) -> Result<CdOptions> {
    if sweeps == 0 {
        return Err(Error::Config("--sweeps must be at least 1".into()));
    }
    Ok(CdOptions {
        max_sweeps: sweeps,
        ..CdOptions::default()
    })
}

/// Baseline scores with a check that regenerated frames reproduce the stored labels.
fn regenerate_baseline(path: &Path, sweeps: usize) -> Result<(DatasetHeader, Vec<f64>, Vec<bool>)> {
    let (header, data) = load_set(path)?;
    let (scores, labels) = baseline_scores(&header.layout, header.seed, 0..header.sample_count, &cd_options(sweeps)?)?;
    if labels != labels_of(&data) {
        return Err(Error::Format {
            offset: 0,
            message: "frames regenerated from the header do not reproduce the stored activity; \
                      the dataset cannot serve the baseline"
                .into(),
        });
    }
    Ok((header, scores, labels))
}

fn cmd_roc(a: &RocArgs, run: Run) -> Result<()> {
    let (header, scores, labels) = match &a.model {
        Some(model) => {
            let (header, data) = load_set(&a.data)?;
            let det = load_model(model, &header, &a.precision)?;
            (header, det.scores(&data)?, labels_of(&data))
        }
        None => regenerate_baseline(&a.data, a.sweeps)?,
    };
    let curve = crate::evalkit::roc_sweep(&scores, &labels)?;
    write_text(&a.out_csv, &curve.to_csv())?;
    println!("auc {} over {} decisions -> {}", curve.auc, labels.len(), a.out_csv.display());
    let mut inputs = vec![a.data.as_path()];
    inputs.extend(a.model.iter().map(|p| p.as_path()));
    run.finish(Some(header.config().clone()), Some(header.seed), &inputs, &[&a.out_csv])
}

fn cmd_baseline(a: &BaselineArgs, run: Run) -> Result<()> {
    let (header, scores, labels) = regenerate_baseline(&a.data, a.sweeps)?;
    let k = header.config().num_users;
    let mut csv = String::from("sample,user,score,active\n");
    for (i, (s, l)) in scores.iter().zip(&labels).enumerate() {
        let _ = writeln!(csv, "{},{},{},{}", i / k, i % k, s, u8::from(*l));
    }
    write_text(&a.out_scores, &csv)?;
    println!("{} baseline scores -> {}", scores.len(), a.out_scores.display());
    run.finish(Some(header.config().clone()), Some(header.seed), &[&a.data], &[&a.out_scores])
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) => 1,
        Error::Numerical(_) => 3,
        Error::Structural(_)
        | Error::DegeneratePilot(_)
        | Error::Calibration(_)
        | Error::Format { .. }
        | Error::Incompatible(_)
        | Error::Io { .. } => 2,
    }
}

pub fn execute(cli: &Cli, args: Vec<String>) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists (repeated in-process calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let run = |command| Run {
        command,
        args,
        started: Instant::now(),
    };
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, run("generate")),
        Command::Train(a) => cmd_train(a, run("train")),
        Command::Eval(a) => cmd_eval(a, run("eval")),
        Command::Roc(a) => cmd_roc(a, run("roc")),
        Command::Baseline(a) => cmd_baseline(a, run("baseline")),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let recorded = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
