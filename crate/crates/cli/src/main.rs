use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use maskfuse_core::pipeline::PipelineConfig;
use maskfuse_core::{OverlapOrder, SweepParameter, VoteScope};

mod commands;

#[derive(Parser, Debug)]
#[command(
    name = "maskfuse",
    version,
    about = "Masklet-based refinement and evaluation of video segmentation"
)]
struct Cli {
    /// Clip manifest or dataset index.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset tree.
    Synth(SynthArgs),
    /// Drop low-quality masklets and write the survivors as JSONL.
    Filter(FilterCmd),
    /// Relabel predictions by masklet majority vote.
    Refine(RefineCmd),
    /// Label masklets with a trained classifier and compose a segmentation.
    Classify(ClassifyCmd),
    /// Train the masklet classifier on pooled features.
    Train(TrainCmd),
    /// Score predictions against ground truth.
    Eval(EvalCmd),
    /// Refine and score raw and refined predictions side by side.
    Pipeline(PipelineCmd),
    /// Run the pipeline once per value of one parameter.
    Sweep(SweepCmd),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    clips: usize,
    #[arg(long, default_value_t = 40)]
    frames: usize,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    #[arg(long, default_value_t = 5)]
    objects: usize,
    #[arg(long, default_value_t = 124)]
    classes: usize,
    /// Boundary jitter radius of the simulated predictions.
    #[arg(long, default_value_t = 2)]
    jitter: usize,
    /// Per-pixel label noise rate.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Per object and frame class swap rate.
    #[arg(long, default_value_t = 0.0)]
    swap: f64,
    /// Feature dimension; 0 writes no feature maps.
    #[arg(long, default_value_t = 64)]
    feature_dim: usize,
    #[arg(long, default_value_t = 4)]
    stride: usize,
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
}

#[derive(Args, Debug, Default)]
struct FilterArgs {
    #[arg(long)]
    pred_iou: Option<f64>,
    #[arg(long)]
    stability: Option<f64>,
    #[arg(long)]
    stability_offset: Option<f64>,
    #[arg(long)]
    dedup_iou: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct TrackerArgs {
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    match_iou: Option<f64>,
    /// Link tracks across window boundaries.
    #[arg(long)]
    stitch: bool,
}

#[derive(Args, Debug, Default)]
struct RefineArgs {
    /// per_frame or per_track
    #[arg(long)]
    vote_scope: Option<VoteScope>,
    /// area_desc or pred_iou_asc
    #[arg(long)]
    overlap: Option<OverlapOrder>,
    #[arg(long)]
    min_vote: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct EvalArgs {
    /// Window sizes for video consistency, e.g. 8,16.
    #[arg(long, value_delimiter = ',')]
    vc: Option<Vec<usize>>,
    #[arg(long)]
    boundary_radius: Option<usize>,
}

#[derive(Args, Debug)]
struct FilterCmd {
    #[command(flatten)]
    filter: FilterArgs,
    /// Output directory for `<clip_id>.jsonl` files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RefineCmd {
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    tracker: TrackerArgs,
    #[command(flatten)]
    refine: RefineArgs,
    /// Output directory; gets one clip tree per clip and a dataset index.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum BaseFrom {
    Pred,
    None,
}

#[derive(Args, Debug)]
struct ClassifyCmd {
    #[arg(long)]
    model: PathBuf,
    /// Paint over the clip predictions instead of an all-ignore canvas.
    #[arg(long, value_enum, default_value_t = BaseFrom::None)]
    base_from: BaseFrom,
    #[command(flatten)]
    filter: FilterArgs,
    #[arg(long)]
    overlap: Option<OverlapOrder>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainCmd {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalCmd {
    #[command(flatten)]
    eval: EvalArgs,
    /// Only load and check every artifact.
    #[arg(long)]
    validate_only: bool,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-class IoU CSV; defaults to the report path with a `.csv` extension.
    #[arg(long)]
    per_class: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PipelineCmd {
    /// Start from the config embedded in an earlier report.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterArgs,
    #[command(flatten)]
    tracker: TrackerArgs,
    #[command(flatten)]
    refine: RefineArgs,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("axis").required(true).args(["window", "pred_iou", "stability", "grid_note"])))]
struct SweepCmd {
    #[arg(long, value_delimiter = ',')]
    window: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pred_iou: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    stability: Option<Vec<f64>>,
    /// Prompt grid sizes; recorded only.
    #[arg(long, value_delimiter = ',')]
    grid_note: Option<Vec<f64>>,

    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    stability_offset: Option<f64>,
    #[arg(long)]
    dedup_iou: Option<f64>,
    #[arg(long)]
    match_iou: Option<f64>,
    #[arg(long)]
    stitch: bool,
    #[command(flatten)]
    refine: RefineArgs,
    #[command(flatten)]
    eval: EvalArgs,
    /// CSV table path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full per-value reports as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl SweepCmd {
    fn axis(&self) -> (SweepParameter, Vec<f64>) {
        if let Some(v) = &self.window {
            (SweepParameter::Window, v.clone())
        } else if let Some(v) = &self.pred_iou {
            (SweepParameter::PredIou, v.clone())
        } else if let Some(v) = &self.stability {
            (SweepParameter::Stability, v.clone())
        } else {
            (SweepParameter::GridNote, self.grid_note.clone().unwrap_or_default())
        }
    }
}

impl FilterArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let f = &mut cfg.filter;
        if let Some(v) = self.pred_iou {
            f.pred_iou_thresh = v;
        }
        if let Some(v) = self.stability {
            f.stability_thresh = v;
        }
        if let Some(v) = self.stability_offset {
            f.stability_offset = v;
        }
        if self.dedup_iou.is_some() {
            f.dedup_iou = self.dedup_iou;
        }
    }
}

impl TrackerArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.window {
            cfg.tracker.window_size = v;
        }
        if let Some(v) = self.match_iou {
            cfg.tracker.match_iou_thresh = v;
        }
        cfg.stitch |= self.stitch;
    }
}

impl RefineArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let r = &mut cfg.refine;
        if let Some(v) = self.vote_scope {
            r.vote_scope = v;
        }
        if let Some(v) = self.overlap {
            r.overlap_order = v;
        }
        if let Some(v) = self.min_vote {
            r.min_vote_fraction = v;
        }
    }
}

impl EvalArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = &self.vc {
            cfg.eval.vc_windows = v.clone();
        }
        if let Some(v) = self.boundary_radius {
            cfg.eval.boundary_radius = v;
        }
    }
}

/// Config embedded in a report (`{"config": ...}`) or a bare config file.
fn load_config(path: &Path) -> anyhow::Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(inner) = value.get_mut("config") {
        value = inner.take();
    }
    serde_json::from_value(value).with_context(|| format!("{}: not a pipeline config", path.display()))
}

fn base_config(config: Option<&Path>) -> anyhow::Result<PipelineConfig> {
    match config {
        Some(p) => load_config(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn manifest(cli: &Cli) -> anyhow::Result<&Path> {
    match &cli.manifest {
        Some(p) => Ok(p),
        None => bail!(maskfuse_core::Error::Config("--manifest is required".into())),
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(a) => commands::synth(a, cli.seed),
        Command::Filter(a) => {
            let mut cfg = PipelineConfig::default();
            a.filter.apply(&mut cfg);
            commands::filter(manifest(cli)?, &cfg, &a.out)
        }
        Command::Refine(a) => {
            let mut cfg = PipelineConfig::default();
            a.filter.apply(&mut cfg);
            a.tracker.apply(&mut cfg);
            a.refine.apply(&mut cfg);
            commands::refine(manifest(cli)?, &cfg, &a.out, cli.jobs)
        }
        Command::Classify(a) => {
            let mut cfg = PipelineConfig::default();
            a.filter.apply(&mut cfg);
            if let Some(o) = a.overlap {
                cfg.refine.overlap_order = o;
            }
            commands::classify(
                manifest(cli)?,
                &cfg,
                &a.model,
                a.base_from == BaseFrom::Pred,
                &a.out,
                cli.jobs,
            )
        }
        Command::Train(a) => commands::train(manifest(cli)?, a, cli.seed),
        Command::Eval(a) => {
            let mut cfg = PipelineConfig::default();
            a.eval.apply(&mut cfg);
            if a.validate_only {
                commands::validate(manifest(cli)?)
            } else {
                commands::eval(
                    manifest(cli)?,
                    &cfg.eval,
                    a.report.as_deref(),
                    a.per_class.as_deref(),
                    cli.jobs,
                )
            }
        }
        Command::Pipeline(a) => {
            let mut cfg = base_config(a.config.as_deref())?;
            a.filter.apply(&mut cfg);
            a.tracker.apply(&mut cfg);
            a.refine.apply(&mut cfg);
            a.eval.apply(&mut cfg);
            commands::pipeline(manifest(cli)?, &cfg, a.report.as_deref(), cli.jobs)
        }
        Command::Sweep(a) => {
            let mut cfg = base_config(a.config.as_deref())?;
            FilterArgs {
                stability_offset: a.stability_offset,
                dedup_iou: a.dedup_iou,
                ..Default::default()
            }
            .apply(&mut cfg);
            TrackerArgs {
                match_iou: a.match_iou,
                stitch: a.stitch,
                ..Default::default()
            }
            .apply(&mut cfg);
            a.refine.apply(&mut cfg);
            a.eval.apply(&mut cfg);
            let (parameter, values) = a.axis();
            commands::sweep(
                manifest(cli)?,
                &cfg,
                &maskfuse_core::SweepSpec { parameter, values },
                a.out.as_deref(),
                a.report.as_deref(),
                cli.jobs,
            )
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MASKFUSE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = serde_json::json!({ "error": "usage", "message": e.render().to_string().trim_end() });
            let _ = writeln!(std::io::stderr(), "{msg}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<maskfuse_core::Error>())
                .map_or("cli", |c| c.kind());
            // core errors already embed their source in the message
            let mut message = String::new();
            for c in e.chain() {
                let part = c.to_string();
                if !message.contains(&part) {
                    if !message.is_empty() {
                        message.push_str(": ");
                    }
                    message.push_str(&part);
                }
            }
            let msg = serde_json::json!({ "error": kind, "message": message });
            let _ = writeln!(std::io::stderr(), "{msg}");
            ExitCode::FAILURE
        }
    }
}
