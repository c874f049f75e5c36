//! The `tkad` command line: synth, train, detect, eval, loocv, bench, report.
//!
//! Every command writes `config.resolved.toml` next to its outputs. On
//! failure a single line `error kind=<kind> key=<key> msg=<message>` goes to
//! stderr and the exit code is 2 for configuration errors, 3 for missing
//! files and 1 otherwise.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{ConfigError, ExperimentConfig};
use crate::data::{load_image, load_manifest, synth_generate, validate_manifest, DataError, DatasetManifest};
use crate::detector::{forward_detect, load_model, save_model, train, write_log_csv, DetectorError, ManifestSource};
use crate::eval::dump::DumpRecord;
use crate::eval::{
    benchmark_latency, detect_manifest, detections_from_dump, emit_report, evaluate_frames, format_table,
    load_truths, loocv_run, read_dump, read_report, write_dump, EvalError, FrameDetections, LatencyStats,
};

pub const SNAPSHOT_FILE: &str = "config.resolved.toml";

#[derive(Debug, Parser)]
#[command(name = "tkad", version, about = "Two-stage surgical tool detector")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML experiment config layered over the profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in profile: paper, desk-easy, desk-cluttered.
    #[arg(long, global = true)]
    pub profile: Option<String>,
    /// Overrides the synthesis and training seeds.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "tkad-out")]
    pub out: PathBuf,
    /// Worker threads for cross-validation folds.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// All but the last `holdout_videos` videos.
    Train,
    /// The last `holdout_videos` videos.
    Test,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the synthetic dataset into --out.
    Synth,
    /// Train a model on a manifest split; writes model.tkad and train_log.csv.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Train)]
        split: Split,
    },
    /// Run a model over a manifest split (or image files); writes detections.jsonl.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Image files to run on instead of a manifest.
        images: Vec<PathBuf>,
    },
    /// Score a model or a detection dump against a manifest split.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, conflicts_with = "detections")]
        model: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Include wall-clock latency in the report (makes it non-reproducible).
        #[arg(long)]
        with_latency: bool,
    },
    /// Leave-one-video-out cross-validation over every video of a manifest.
    Loocv {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Time the detector on frames of a manifest split; writes latency.json.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Re-emit table, PR curves and confusion grid from a report.json.
    Report {
        #[arg(long)]
        report: PathBuf,
        /// latency.json from `bench` to merge into the report.
        #[arg(long)]
        latency: Option<PathBuf>,
    },
}

/// Error classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Config { key: String, message: String },
    NotFound { path: String, message: String },
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::NotFound { .. } => 3,
            Self::Other(_) => 1,
        }
    }

    /// One machine-parsable line.
    pub fn line(&self) -> String {
        let clean = |s: &str| s.replace('\n', " ");
        match self {
            Self::Config { key, message } => format!("error kind=config key={key} msg={}", clean(message)),
            Self::NotFound { path, message } => format!("error kind=not_found key={path} msg={}", clean(message)),
            Self::Other(m) => format!("error kind=runtime key= msg={}", clean(m)),
        }
    }
}

fn config_err(key: &str, message: impl ToString) -> CliError {
    CliError::Config {
        key: key.to_string(),
        message: message.to_string(),
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        config_err(&e.key, e.message)
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io {
                path,
                kind: std::io::ErrorKind::NotFound,
                message,
            } => CliError::NotFound { path, message },
            DataError::Config(m) => config_err("", m),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<DetectorError> for CliError {
    fn from(e: DetectorError) -> Self {
        match e {
            DetectorError::Io {
                path,
                kind: std::io::ErrorKind::NotFound,
                message,
            } => CliError::NotFound { path, message },
            DetectorError::Config(m) => config_err("", m),
            DetectorError::Data(d) => d.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io {
                path,
                kind: std::io::ErrorKind::NotFound,
                message,
            } => CliError::NotFound { path, message },
            EvalError::Config(m) => config_err("", m),
            EvalError::Detector(d) => d.into(),
            EvalError::Data(d) => d.into(),
            other => CliError::Other(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::NotFound {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    } else {
        CliError::Other(format!("{}: {e}", path.display()))
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn resolve_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let text = match &common.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| io_err(p, e))?),
        None => None,
    };
    let cfg = ExperimentConfig::resolve(text.as_deref(), common.profile.as_deref())?;
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn prepare_out(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_file(&out.join(SNAPSHOT_FILE), cfg.to_toml().as_bytes())
}

fn manifest_root(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads and validates a manifest and restricts it to a split.
fn load_split(path: &Path, split: Split, cfg: &ExperimentConfig) -> Result<(DatasetManifest, PathBuf)> {
    let manifest = load_manifest(path)?;
    let root = manifest_root(path);
    if let Some(issue) = validate_manifest(&manifest, &root).first() {
        return Err(CliError::Other(format!("{}: {issue}", path.display())));
    }
    let n = manifest.videos.len();
    let hold = cfg.holdout_videos.min(n.saturating_sub(1));
    let ids: Vec<String> = manifest.videos.iter().map(|v| v.video_id.clone()).collect();
    let chosen = match split {
        Split::Train => &ids[..n - hold],
        Split::Test => &ids[n - hold..],
        Split::All => &ids[..],
    };
    if chosen.is_empty() {
        return Err(config_err("holdout_videos", format!("split {split:?} selects no videos")));
    }
    Ok((manifest.subset(chosen), root))
}

fn log(verbose: bool, msg: impl AsRef<str>) {
    if verbose {
        eprintln!("{}", msg.as_ref());
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let out = cli.common.out.clone();
    let verbose = cli.common.verbose;
    match cli.command {
        Command::Synth => {
            prepare_out(&out, &cfg)?;
            let m = synth_generate(&cfg.synth, &out)?;
            println!("{}", out.join("manifest.json").display());
            log(verbose, format!("{} videos, {} frames", m.videos.len(), m.frame_count()));
        }
        Command::Train { manifest, split } => {
            let (m, root) = load_split(&manifest, split, &cfg)?;
            prepare_out(&out, &cfg)?;
            let bb = &cfg.model.backbone;
            let source = ManifestSource::new(m.clone(), &root, bb.input_w, bb.input_h);
            let ckpt_dir = out.join("checkpoints");
            if cfg.train.checkpoint_every > 0 {
                std::fs::create_dir_all(&ckpt_dir).map_err(|e| io_err(&ckpt_dir, e))?;
            }
            log(verbose, format!("training on {} frames", m.frame_count()));
            let outcome = train(
                &source,
                m.class_names.clone(),
                cfg.model.clone(),
                &cfg.train,
                (cfg.train.checkpoint_every > 0).then_some(ckpt_dir.as_path()),
            )?;
            let model_path = out.join("model.tkad");
            save_model(&outcome.model, &model_path)?;
            let mut csv = Vec::new();
            write_log_csv(&outcome.log, &mut csv).map_err(|e| CliError::Other(e.to_string()))?;
            write_file(&out.join("train_log.csv"), &csv)?;
            for chunk in outcome.log.chunks(100) {
                let mean = chunk.iter().map(|e| e.total).sum::<f64>() / chunk.len() as f64;
                log(verbose, format!("iter {:6} mean loss {mean:.4}", chunk[0].iteration));
            }
            println!("{}", model_path.display());
        }
        Command::Detect {
            model,
            manifest,
            split,
            images,
        } => {
            let model = load_model(&model)?;
            let frames = match manifest {
                Some(p) => {
                    let (m, root) = load_split(&p, split, &cfg)?;
                    detect_manifest(&model, &m, &root, &cfg.detect)?
                }
                None if !images.is_empty() => {
                    let mut frames = Vec::new();
                    for path in &images {
                        let image = load_image(path)?;
                        let (detections, latency_s) = forward_detect(&model, &image, &cfg.detect)?;
                        frames.push(FrameDetections {
                            video_id: String::new(),
                            frame: path.display().to_string(),
                            detections,
                            latency_s,
                        });
                    }
                    frames
                }
                None => return Err(config_err("manifest", "give --manifest or image files")),
            };
            prepare_out(&out, &cfg)?;
            let records = DumpRecord::from_frames(&frames, &model.class_names);
            let mut buf = Vec::new();
            write_dump(&records, &mut buf).map_err(|e| CliError::Other(e.to_string()))?;
            let path = out.join("detections.jsonl");
            write_file(&path, &buf)?;
            println!("{}", path.display());
        }
        Command::Eval {
            manifest,
            model,
            detections,
            split,
            with_latency,
        } => {
            let (m, root) = load_split(&manifest, split, &cfg)?;
            let truths = load_truths(&m, &root)?;
            let (dets, latencies) = match (model, detections) {
                (Some(mp), None) => {
                    let model = load_model(&mp)?;
                    let frames = detect_manifest(&model, &m, &root, &cfg.detect)?;
                    let lat = frames.iter().map(|f| f.latency_s).collect::<Vec<_>>();
                    (frames.into_iter().map(|f| f.detections).collect::<Vec<_>>(), lat)
                }
                (None, Some(dp)) => {
                    let text = std::fs::read_to_string(&dp).map_err(|e| io_err(&dp, e))?;
                    (detections_from_dump(&read_dump(&text)?, &m)?, Vec::new())
                }
                _ => return Err(config_err("model", "give exactly one of --model or --detections")),
            };
            let latencies = if with_latency { latencies } else { Vec::new() };
            let report = evaluate_frames(&m.class_names, &dets, &truths, &latencies, &cfg.eval)?;
            prepare_out(&out, &cfg)?;
            emit_report(&report, &out)?;
            print!("{}", format_table(&report));
        }
        Command::Loocv { manifest } => {
            let m = load_manifest(&manifest)?;
            let root = manifest_root(&manifest);
            if let Some(issue) = validate_manifest(&m, &root).first() {
                return Err(CliError::Other(format!("{}: {issue}", manifest.display())));
            }
            prepare_out(&out, &cfg)?;
            let report = loocv_run(
                &m,
                &root,
                &cfg.model,
                &cfg.train,
                &cfg.detect,
                &cfg.eval,
                cli.common.jobs,
                &|f| {
                    log(
                        verbose,
                        format!("fold {} ({}) mAP {:?}", f.fold, f.held_out_video, f.map_value),
                    )
                },
            )?;
            // latency varies run to run; keep the report reproducible
            let report = crate::eval::EvalReport {
                mean_latency_s: None,
                median_latency_s: None,
                ..report
            };
            emit_report(&report, &out)?;
            print!("{}", format_table(&report));
        }
        Command::Bench { model, manifest, split } => {
            let model = load_model(&model)?;
            let (m, root) = load_split(&manifest, split, &cfg)?;
            let mut frames = Vec::new();
            'outer: for v in &m.videos {
                for f in &v.frames {
                    if frames.len() == cfg.bench.warmup + cfg.bench.frames {
                        break 'outer;
                    }
                    frames.push(load_image(&root.join(&f.image))?);
                }
            }
            let stats = benchmark_latency(&model, &frames, cfg.bench.warmup, &cfg.detect)?;
            prepare_out(&out, &cfg)?;
            let path = out.join("latency.json");
            let json = serde_json::to_string_pretty(&stats).map_err(|e| CliError::Other(e.to_string()))?;
            write_file(&path, json.as_bytes())?;
            println!(
                "mean {:.4} s  median {:.4} s  over {} frames (published reference {} s)",
                stats.mean_s,
                stats.median_s,
                stats.samples.len(),
                crate::eval::bench::REFERENCE_LATENCY_S
            );
        }
        Command::Report { report, latency } => {
            let mut r = read_report(&report)?;
            if let Some(lp) = latency {
                let text = std::fs::read_to_string(&lp).map_err(|e| io_err(&lp, e))?;
                let stats: LatencyStats = serde_json::from_str(&text)
                    .map_err(|e| CliError::Other(format!("{}: {e}", lp.display())))?;
                r.mean_latency_s = Some(stats.mean_s);
                r.median_latency_s = Some(stats.median_s);
            }
            prepare_out(&out, &cfg)?;
            emit_report(&r, &out)?;
            print!("{}", format_table(&r));
        }
    }
    std::io::stdout().flush().ok();
    Ok(())
}

/// Parses arguments, runs, prints any error line; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
