//! End-to-end runs: filter, track, refine, then score raw and refined
//! predictions with the same metric settings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{filter_masklets, FilterConfig};
use crate::io::ClipManifest;
use crate::mask::{LabelMap, MaskletSet};
use crate::metrics::{ClipEvaluator, ClipScores, EvalConfig, MetricsReport};
use crate::refine::{refine_clip, RefineConfig};
use crate::tracker::{build_tracks, stitch_windows, TrackerConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub filter: FilterConfig,
    pub tracker: TrackerConfig,
    /// Link tracks across window boundaries after windowed matching.
    #[serde(default)]
    pub stitch: bool,
    pub refine: RefineConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.tracker.validate()?;
        self.refine.validate()?;
        if self.eval.vc_windows.contains(&0) {
            return Err(Error::Config("vc window sizes must be positive".into()));
        }
        Ok(())
    }
}

/// One clip held in memory.
#[derive(Clone, Debug)]
pub struct ClipData {
    pub clip_id: String,
    pub num_classes: usize,
    pub gt: Vec<LabelMap>,
    pub pred: Vec<LabelMap>,
    pub masklets: Vec<MaskletSet>,
}

impl ClipData {
    pub fn load(m: &ClipManifest) -> Result<Self> {
        Ok(Self {
            clip_id: m.clip_id.clone(),
            num_classes: m.num_classes,
            gt: m.load_gt()?,
            pred: m.load_pred()?,
            masklets: m.load_masklets()?,
        })
    }
}

/// Filter, track and refine one clip's predictions.
pub fn refine_predictions(pred: &[LabelMap], masklets: &[MaskletSet], cfg: &PipelineConfig) -> Result<Vec<LabelMap>> {
    let kept: Vec<MaskletSet> = masklets.iter().map(|s| filter_masklets(s, &cfg.filter)).collect();
    let mut tracks = build_tracks(&kept, &cfg.tracker);
    if cfg.stitch {
        tracks = stitch_windows(&tracks, &kept, &cfg.tracker);
    }
    refine_clip(pred, &kept, &tracks, &cfg.refine)
}

#[derive(Clone, Debug)]
pub struct ClipOutcome {
    pub before: ClipScores,
    pub after: ClipScores,
    pub refined: Vec<LabelMap>,
}

pub fn process_clip(clip: &ClipData, cfg: &PipelineConfig) -> Result<ClipOutcome> {
    let eval = ClipEvaluator::new(&clip.gt, clip.num_classes, &cfg.eval);
    let refined = refine_predictions(&clip.pred, &clip.masklets, cfg)?;
    Ok(ClipOutcome {
        before: eval.score(&clip.pred)?,
        after: eval.score(&refined)?,
        refined,
    })
}

/// `after - before` for every headline metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsDelta {
    pub miou: f64,
    pub fwiou: f64,
    pub mbiou: Option<f64>,
    pub mvc: BTreeMap<usize, f64>,
}

impl MetricsDelta {
    pub fn between(before: &MetricsReport, after: &MetricsReport) -> Self {
        Self {
            miou: after.miou - before.miou,
            fwiou: after.fwiou - before.fwiou,
            mbiou: before.mbiou.zip(after.mbiou).map(|(b, a)| a - b),
            mvc: after
                .mvc
                .iter()
                .filter_map(|(n, a)| before.mvc.get(n).map(|b| (*n, a - b)))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub before: MetricsReport,
    pub after: MetricsReport,
    pub delta: MetricsDelta,
    pub clips: Vec<String>,
    pub skipped_clips: usize,
}

fn common_classes(clips: &[ClipManifest]) -> Result<usize> {
    let k = clips
        .first()
        .ok_or_else(|| Error::Validation("dataset has no clips".into()))?
        .num_classes;
    if let Some(c) = clips.iter().find(|c| c.num_classes != k) {
        return Err(Error::Validation(format!(
            "clip {} has {} classes, expected {k}",
            c.clip_id, c.num_classes
        )));
    }
    Ok(k)
}

/// Clips with ground truth and predictions on every frame; the rest are
/// skipped with a warning.
fn complete_clips(clips: &[ClipManifest]) -> (Vec<&ClipManifest>, usize) {
    let (ok, partial): (Vec<&ClipManifest>, Vec<&ClipManifest>) =
        clips.iter().partition(|c| !c.is_empty() && c.has_gt() && c.has_pred());
    for c in &partial {
        log::warn!("skipping clip {}: missing gt or pred frames", c.clip_id);
    }
    if !partial.is_empty() {
        log::warn!("{} partial clip(s) skipped", partial.len());
    }
    (ok, partial.len())
}

/// Run `f` on a pool of `jobs` threads (0 means rayon's default).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn report(
    cfg: &PipelineConfig,
    num_classes: usize,
    clips: Vec<String>,
    skipped: usize,
    before: &[ClipScores],
    after: &[ClipScores],
) -> Result<PipelineReport> {
    let before = MetricsReport::aggregate(before, num_classes, &cfg.eval)?;
    let after = MetricsReport::aggregate(after, num_classes, &cfg.eval)?;
    Ok(PipelineReport {
        config: cfg.clone(),
        delta: MetricsDelta::between(&before, &after),
        before,
        after,
        clips,
        skipped_clips: skipped,
    })
}

/// Pipeline over clips already in memory. Results do not depend on the
/// thread count.
pub fn run_pipeline_data(clips: &[ClipData], cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let k = clips
        .first()
        .ok_or_else(|| Error::Validation("dataset has no clips".into()))?
        .num_classes;
    let outcomes: Vec<ClipOutcome> = clips.par_iter().map(|c| process_clip(c, cfg)).collect::<Result<_>>()?;
    let (before, after): (Vec<_>, Vec<_>) = outcomes.into_iter().map(|o| (o.before, o.after)).unzip();
    let ids = clips.iter().map(|c| c.clip_id.clone()).collect();
    report(cfg, k, ids, 0, &before, &after)
}

/// Pipeline over a dataset on disk, using at most `jobs` threads.
pub fn run_pipeline(clips: &[ClipManifest], cfg: &PipelineConfig, jobs: usize) -> Result<PipelineReport> {
    cfg.validate()?;
    let k = common_classes(clips)?;
    let (ok, skipped) = complete_clips(clips);
    let outcomes: Vec<(ClipScores, ClipScores)> = with_jobs(jobs, || {
        ok.par_iter()
            .map(|m| {
                let clip = ClipData::load(m)?;
                let o = process_clip(&clip, cfg).map_err(|e| e.at(m.base_dir.join("manifest.json")))?;
                Ok((o.before, o.after))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let (before, after): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let ids = ok.iter().map(|c| c.clip_id.clone()).collect();
    report(cfg, k, ids, skipped, &before, &after)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Window,
    PredIou,
    Stability,
    /// Upstream prompt grid size: recorded per row, does not change the run.
    GridNote,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::Window => "window",
            SweepParameter::PredIou => "pred_iou",
            SweepParameter::Stability => "stability",
            SweepParameter::GridNote => "grid_note",
        }
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window" => Ok(SweepParameter::Window),
            "pred_iou" => Ok(SweepParameter::PredIou),
            "stability" => Ok(SweepParameter::Stability),
            "grid_note" => Ok(SweepParameter::GridNote),
            _ => Err(Error::Config(format!(
                "unknown sweep parameter {s:?}; expected window, pred_iou, stability or grid_note"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        if self.parameter == SweepParameter::Window
            && self
                .values
                .iter()
                .any(|&v| !(v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64))
        {
            return Err(Error::Config("window sizes must be positive integers".into()));
        }
        Ok(())
    }

    /// The base config with the swept parameter set to `value`.
    pub fn apply(&self, base: &PipelineConfig, value: f64) -> PipelineConfig {
        let mut cfg = base.clone();
        match self.parameter {
            SweepParameter::Window => cfg.tracker.window_size = value as usize,
            SweepParameter::PredIou => cfg.filter.pred_iou_thresh = value,
            SweepParameter::Stability => cfg.filter.stability_thresh = value,
            SweepParameter::GridNote => {}
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub report: PipelineReport,
}

/// One pipeline run per sweep value. Each clip is loaded once and scored
/// under every value.
pub fn run_sweep(
    clips: &[ClipManifest],
    sweep: &SweepSpec,
    base: &PipelineConfig,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    sweep.validate()?;
    let cfgs: Vec<PipelineConfig> = sweep.values.iter().map(|&v| sweep.apply(base, v)).collect();
    for c in &cfgs {
        c.validate()?;
    }
    let k = common_classes(clips)?;
    let (ok, skipped) = complete_clips(clips);
    let per_clip: Vec<(ClipScores, Vec<ClipScores>)> = with_jobs(jobs, || {
        ok.par_iter()
            .map(|m| {
                let clip = ClipData::load(m)?;
                sweep_clip(&clip, &cfgs).map_err(|e| e.at(m.base_dir.join("manifest.json")))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let ids: Vec<String> = ok.iter().map(|c| c.clip_id.clone()).collect();
    collect_rows(sweep, &cfgs, k, ids, skipped, per_clip)
}

/// [`run_sweep`] over clips already in memory.
pub fn run_sweep_data(clips: &[ClipData], sweep: &SweepSpec, base: &PipelineConfig) -> Result<Vec<SweepRow>> {
    sweep.validate()?;
    let cfgs: Vec<PipelineConfig> = sweep.values.iter().map(|&v| sweep.apply(base, v)).collect();
    for c in &cfgs {
        c.validate()?;
    }
    let k = clips
        .first()
        .ok_or_else(|| Error::Validation("dataset has no clips".into()))?
        .num_classes;
    let per_clip = clips
        .par_iter()
        .map(|c| sweep_clip(c, &cfgs))
        .collect::<Result<Vec<_>>>()?;
    let ids = clips.iter().map(|c| c.clip_id.clone()).collect();
    collect_rows(sweep, &cfgs, k, ids, 0, per_clip)
}

fn sweep_clip(clip: &ClipData, cfgs: &[PipelineConfig]) -> Result<(ClipScores, Vec<ClipScores>)> {
    // every config shares the eval settings of the base
    let eval = ClipEvaluator::new(&clip.gt, clip.num_classes, &cfgs[0].eval);
    let before = eval.score(&clip.pred)?;
    let after = cfgs
        .iter()
        .map(|cfg| eval.score(&refine_predictions(&clip.pred, &clip.masklets, cfg)?))
        .collect::<Result<_>>()?;
    Ok((before, after))
}

fn collect_rows(
    sweep: &SweepSpec,
    cfgs: &[PipelineConfig],
    k: usize,
    ids: Vec<String>,
    skipped: usize,
    per_clip: Vec<(ClipScores, Vec<ClipScores>)>,
) -> Result<Vec<SweepRow>> {
    let before: Vec<ClipScores> = per_clip.iter().map(|(b, _)| b.clone()).collect();
    cfgs.iter()
        .zip(&sweep.values)
        .enumerate()
        .map(|(i, (cfg, &value))| {
            let after: Vec<ClipScores> = per_clip.iter().map(|(_, a)| a[i].clone()).collect();
            Ok(SweepRow {
                value,
                report: report(cfg, k, ids.clone(), skipped, &before, &after)?,
            })
        })
        .collect()
}

/// Ablation table of the refined results: `<param>,mIoU,FWIoU,mVC<n>...`
/// with one `mVC` column per configured window. Undefined cells are empty.
pub fn sweep_csv(parameter: SweepParameter, rows: &[SweepRow], vc_windows: &[usize]) -> String {
    let mut s = String::from(parameter.name());
    s.push_str(",mIoU,FWIoU");
    for n in vc_windows {
        let _ = write!(s, ",mVC{n}");
    }
    s.push('\n');
    for row in rows {
        let r = &row.report.after;
        let _ = write!(s, "{},{},{}", row.value, r.miou, r.fwiou);
        for n in vc_windows {
            match r.mvc.get(n) {
                Some(v) => {
                    let _ = write!(s, ",{v}");
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_bundle, PerturbConfig, ScoreModel, SynthConfig};

    fn corpus(n: usize, jitter: usize) -> Vec<ClipData> {
        (0..n as u64)
            .map(|seed| {
                let cfg = SynthConfig {
                    seed,
                    width: 64,
                    height: 48,
                    frames: 12,
                    num_classes: 8,
                    perturb: PerturbConfig {
                        boundary_jitter_radius: jitter,
                        ..Default::default()
                    },
                    scores: ScoreModel::Fixed {
                        pred_iou: 0.9,
                        stability: 0.95,
                    },
                    ..Default::default()
                };
                let b = generate_bundle(&cfg).unwrap();
                ClipData {
                    clip_id: format!("c{seed}"),
                    num_classes: cfg.num_classes,
                    gt: b.clip.gt,
                    pred: b.pred,
                    masklets: b.masklets,
                }
            })
            .collect()
    }

    #[test]
    fn defaults_match_published_settings() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.tracker.window_size, 32);
        assert_eq!(
            (
                cfg.filter.pred_iou_thresh,
                cfg.filter.stability_thresh,
                cfg.filter.stability_offset
            ),
            (0.6, 0.8, 0.9)
        );
    }

    #[test]
    fn empty_masklets_leave_scores_unchanged() {
        let mut clips = corpus(2, 2);
        for c in &mut clips {
            c.masklets = (0..c.gt.len()).map(MaskletSet::empty).collect();
        }
        let r = run_pipeline_data(&clips, &PipelineConfig::default()).unwrap();
        assert_eq!(r.before, r.after);
    }

    #[test]
    fn oracle_masklets_do_not_hurt() {
        let r = run_pipeline_data(&corpus(4, 2), &PipelineConfig::default()).unwrap();
        assert!(r.after.miou >= r.before.miou);
        assert!(r.after.mbiou.unwrap() >= r.before.mbiou.unwrap());
    }

    #[test]
    fn singleton_sweep_equals_pipeline() {
        let clips = corpus(2, 1);
        let base = PipelineConfig::default();
        let sweep = SweepSpec {
            parameter: SweepParameter::Window,
            values: vec![32.0],
        };
        let rows = run_sweep_data(&clips, &sweep, &base).unwrap();
        assert_eq!(rows[0].report, run_pipeline_data(&clips, &base).unwrap());
    }

    #[test]
    fn sweep_csv_shape() {
        let clips = corpus(2, 1);
        let sweep = SweepSpec {
            parameter: SweepParameter::Window,
            values: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
        };
        let rows = run_sweep_data(&clips, &sweep, &PipelineConfig::default()).unwrap();
        let csv = sweep_csv(sweep.parameter, &rows, &[8, 16]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "window,mIoU,FWIoU,mVC8,mVC16");
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("1,"));
    }

    #[test]
    fn grid_note_rows_are_identical() {
        let clips = corpus(1, 1);
        let sweep = SweepSpec {
            parameter: SweepParameter::GridNote,
            values: vec![16.0, 32.0],
        };
        let rows = run_sweep_data(&clips, &sweep, &PipelineConfig::default()).unwrap();
        assert_eq!(rows[0].report, rows[1].report);
    }

    #[test]
    fn bad_sweeps_rejected() {
        let base = PipelineConfig::default();
        let clips = corpus(1, 0);
        for (parameter, values) in [
            (SweepParameter::Window, vec![]),
            (SweepParameter::Window, vec![0.0]),
            (SweepParameter::Window, vec![2.5]),
            (SweepParameter::PredIou, vec![1.5]),
        ] {
            let s = SweepSpec { parameter, values };
            assert!(run_sweep_data(&clips, &s, &base).is_err(), "{s:?}");
        }
        assert!("grid".parse::<SweepParameter>().is_err());
    }

    #[test]
    fn per_track_consistency_grows_with_window() {
        let clips = corpus(6, 2);
        let mut base = PipelineConfig::default();
        base.refine.vote_scope = crate::refine::VoteScope::PerTrack;
        let sweep = SweepSpec {
            parameter: SweepParameter::Window,
            values: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
        };
        let rows = run_sweep_data(&clips, &sweep, &base).unwrap();
        let vc8: Vec<f64> = rows.iter().map(|r| r.report.after.mvc[&8]).collect();
        assert!(vc8.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{vc8:?}");
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let clips = corpus(3, 2);
        let cfg = PipelineConfig::default();
        let a = with_jobs(1, || run_pipeline_data(&clips, &cfg)).unwrap().unwrap();
        let b = with_jobs(4, || run_pipeline_data(&clips, &cfg)).unwrap().unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
