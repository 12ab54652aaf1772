use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use maskfuse_core::classifier::{self, compose_segmentation, labeled_vectors, pool_features};
use maskfuse_core::filter::filter_masklets;
use maskfuse_core::io::{self, ClipManifest, DatasetIndex};
use maskfuse_core::metrics::{ClipEvaluator, ClipScores, EvalConfig, MetricsReport};
use maskfuse_core::pipeline::{self, refine_predictions, with_jobs, PipelineConfig};
use maskfuse_core::synth::{self, PerturbConfig, SynthConfig};
use maskfuse_core::{Error, LabelMap, Masklet, SweepSpec, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::{SynthArgs, TrainCmd};

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

pub fn synth(a: &SynthArgs, seed: u64) -> anyhow::Result<()> {
    let cfg = SynthConfig {
        seed,
        width: a.width,
        height: a.height,
        frames: a.frames,
        num_objects: a.objects,
        num_classes: a.classes,
        perturb: PerturbConfig {
            boundary_jitter_radius: a.jitter,
            label_noise_rate: a.noise,
            class_swap_rate: a.swap,
        },
        feature_dim: a.feature_dim,
        feature_stride: a.stride,
        feature_separation: a.separation,
        ..Default::default()
    };
    let index = synth::export_dataset(&cfg, a.clips, &a.out)?;
    println!("{}", serde_json::json!({ "dataset": index, "clips": a.clips }));
    Ok(())
}

pub fn filter(manifest: &Path, cfg: &PipelineConfig, out: &Path) -> anyhow::Result<()> {
    cfg.filter.validate()?;
    let clips = io::read_dataset(manifest)?;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let (mut total, mut kept) = (0, 0);
    for clip in &clips {
        let sets = clip.load_masklets()?;
        let filtered: Vec<_> = sets.iter().map(|s| filter_masklets(s, &cfg.filter)).collect();
        total += sets.iter().map(|s| s.len()).sum::<usize>();
        kept += filtered.iter().map(|s| s.len()).sum::<usize>();
        io::write_masklets(&out.join(format!("{}.jsonl", clip.clip_id)), &filtered)?;
    }
    println!(
        "{}",
        serde_json::json!({ "clips": clips.len(), "masklets": total, "kept": kept })
    );
    Ok(())
}

/// Write `maps` as the predictions of a copy of `clip` under `out/<clip_id>/`.
/// Other artifact paths of the copy point back at the originals.
fn write_clip_predictions(clip: &ClipManifest, maps: &[LabelMap], out: &Path) -> anyhow::Result<PathBuf> {
    let dir = out.join(&clip.clip_id);
    let pred_dir = dir.join("pred");
    fs::create_dir_all(&pred_dir).map_err(|e| Error::Io {
        path: pred_dir.clone(),
        source: e,
    })?;
    let abs = |p: &Option<PathBuf>| -> Option<PathBuf> {
        p.as_ref()
            .map(|p| clip.resolve(p))
            .map(|p| std::path::absolute(&p).unwrap_or(p))
    };
    let mut copy = clip.clone();
    copy.masklets = abs(&clip.masklets);
    for (f, map) in copy.frames.iter_mut().zip(maps) {
        let rel = PathBuf::from(format!("pred/{:05}.png", f.frame_index));
        io::write_labelmap(map, &dir.join(&rel))?;
        f.gt_path = abs(&f.gt_path);
        f.masklet_path = abs(&f.masklet_path);
        f.feature_path = abs(&f.feature_path);
        f.pred_path = Some(rel);
    }
    copy.base_dir = dir.clone();
    let path = dir.join("manifest.json");
    io::write_manifest(&copy, &path)?;
    Ok(PathBuf::from(&clip.clip_id).join("manifest.json"))
}

fn write_index(out: &Path, clips: Vec<PathBuf>) -> anyhow::Result<PathBuf> {
    let index = out.join("dataset.json");
    io::write_dataset_index(&DatasetIndex { clips }, &index)?;
    Ok(index)
}

pub fn refine(manifest: &Path, cfg: &PipelineConfig, out: &Path, jobs: usize) -> anyhow::Result<()> {
    cfg.validate()?;
    let clips = io::read_dataset(manifest)?;
    let written = with_jobs(jobs, || {
        clips
            .par_iter()
            .map(|clip| {
                let pred = clip.load_pred()?;
                let masklets = clip.load_masklets()?;
                let refined = refine_predictions(&pred, &masklets, cfg)?;
                write_clip_predictions(clip, &refined, out)
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })??;
    let index = write_index(out, written)?;
    println!("{}", serde_json::json!({ "dataset": index, "clips": clips.len() }));
    Ok(())
}

pub fn classify(
    manifest: &Path,
    cfg: &PipelineConfig,
    model_path: &Path,
    with_base: bool,
    out: &Path,
    jobs: usize,
) -> anyhow::Result<()> {
    cfg.filter.validate()?;
    let model = classifier::read_model(model_path)?;
    let clips = io::read_dataset(manifest)?;
    let written = with_jobs(jobs, || {
        clips
            .par_iter()
            .map(|clip| {
                let base = if with_base { Some(clip.load_pred()?) } else { None };
                let sets = clip.load_masklets()?;
                let mut maps = Vec::with_capacity(clip.len());
                for (f, set) in sets.iter().enumerate() {
                    let set = filter_masklets(set, &cfg.filter);
                    let features = if set.is_empty() {
                        None
                    } else {
                        Some(clip.load_feature(f)?)
                    };
                    let mut labeled: Vec<(&Masklet, u8)> = Vec::with_capacity(set.len());
                    for m in set.iter() {
                        let fm = features.as_ref().expect("loaded for nonempty sets");
                        let class = model.predict(&pool_features(m.mask(), fm)?)?;
                        let class = u8::try_from(class)
                            .map_err(|_| Error::Range(format!("predicted class {class} exceeds 255")))?;
                        labeled.push((m, class));
                    }
                    maps.push(compose_segmentation(
                        &labeled,
                        base.as_ref().map(|b| &b[f]),
                        clip.dims(),
                        clip.ignore_label,
                        cfg.refine.overlap_order,
                    )?);
                }
                write_clip_predictions(clip, &maps, out)
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })??;
    let index = write_index(out, written)?;
    println!("{}", serde_json::json!({ "dataset": index, "clips": clips.len() }));
    Ok(())
}

pub fn train(manifest: &Path, a: &TrainCmd, seed: u64) -> anyhow::Result<()> {
    let clips = io::read_dataset(manifest)?;
    let num_classes = clips.first().map_or(0, |c| c.num_classes);
    let mut dataset = Vec::new();
    for clip in &clips {
        if !clip.has_features() || !clip.has_gt() {
            log::warn!("skipping clip {}: training needs gt and features", clip.clip_id);
            continue;
        }
        let gt = clip.load_gt()?;
        for (f, set) in clip.load_masklets()?.iter().enumerate() {
            if set.is_empty() {
                continue;
            }
            let ms: Vec<&Masklet> = set.iter().collect();
            dataset.extend(labeled_vectors(&ms, &gt[f], &clip.load_feature(f)?)?);
        }
    }
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        seed,
        epochs: a.epochs.unwrap_or(d.epochs),
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        batch_size: a.batch_size.unwrap_or(d.batch_size),
        d_hidden: a.hidden.unwrap_or(d.d_hidden),
        ..d
    };
    let model = classifier::mlp_train(&dataset, num_classes, &cfg)?;
    classifier::write_model(&model, &a.out)?;
    println!(
        "{}",
        serde_json::json!({ "samples": dataset.len(), "final_loss": model.final_loss, "model": a.out })
    );
    Ok(())
}

#[derive(Serialize)]
struct ValidationSummary {
    clips: usize,
    frames: usize,
    masklets: usize,
    errors: Vec<String>,
}

pub fn validate(manifest: &Path) -> anyhow::Result<()> {
    let clips = io::read_dataset(manifest)?;
    let mut s = ValidationSummary {
        clips: clips.len(),
        frames: 0,
        masklets: 0,
        errors: Vec::new(),
    };
    for clip in &clips {
        s.frames += clip.len();
        if clip.has_gt() {
            if let Err(e) = clip.load_gt() {
                s.errors.push(e.to_string());
            }
        }
        if clip.has_pred() {
            if let Err(e) = clip.load_pred() {
                s.errors.push(e.to_string());
            }
        }
        match clip.load_masklets() {
            Ok(sets) => s.masklets += sets.iter().map(|m| m.len()).sum::<usize>(),
            Err(e) => s.errors.push(e.to_string()),
        }
        for f in 0..clip.len() {
            if clip.frames[f].feature_path.is_none() {
                continue;
            }
            match clip.load_feature(f) {
                Ok(fm) if clip.width % fm.width() != 0 || clip.height % fm.height() != 0 => s.errors.push(format!(
                    "clip {} frame {f}: {}x{} feature grid does not tile {}x{}",
                    clip.clip_id,
                    fm.width(),
                    fm.height(),
                    clip.width,
                    clip.height
                )),
                Ok(_) => {}
                Err(e) => s.errors.push(e.to_string()),
            }
        }
    }
    println!("{}", serde_json::to_string(&s).expect("summary serializes"));
    if !s.errors.is_empty() {
        return Err(Error::Validation(format!("{} invalid artifact(s)", s.errors.len())).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    config: &'a EvalConfig,
    #[serde(flatten)]
    metrics: MetricsReport,
    clips: Vec<String>,
    skipped_clips: usize,
}

pub fn eval(
    manifest: &Path,
    cfg: &EvalConfig,
    report: Option<&Path>,
    per_class: Option<&Path>,
    jobs: usize,
) -> anyhow::Result<()> {
    let clips = io::read_dataset(manifest)?;
    let num_classes = clips.first().map_or(0, |c| c.num_classes);
    if let Some(c) = clips.iter().find(|c| c.num_classes != num_classes) {
        return Err(Error::Validation(format!("clip {} has a different class count", c.clip_id)).into());
    }
    let (ok, partial): (Vec<&ClipManifest>, Vec<&ClipManifest>) =
        clips.iter().partition(|c| !c.is_empty() && c.has_gt() && c.has_pred());
    if !partial.is_empty() {
        log::warn!("{} partial clip(s) skipped", partial.len());
    }
    let scores: Vec<ClipScores> = with_jobs(jobs, || {
        ok.par_iter()
            .map(|c| {
                let gt = c.load_gt()?;
                ClipEvaluator::new(&gt, num_classes, cfg).score(&c.load_pred()?)
            })
            .collect::<maskfuse_core::Result<Vec<_>>>()
    })??;
    let metrics = MetricsReport::aggregate(&scores, num_classes, cfg)?;
    let csv = metrics.per_class_csv();
    let out = EvalReport {
        config: cfg,
        metrics,
        clips: ok.iter().map(|c| c.clip_id.clone()).collect(),
        skipped_clips: partial.len(),
    };
    match report {
        Some(p) => {
            write_text(p, &to_json(&out))?;
            let csv_path = per_class
                .map(Path::to_path_buf)
                .unwrap_or_else(|| p.with_extension("csv"));
            write_text(&csv_path, &csv)?;
        }
        None => {
            print!("{}", to_json(&out));
            if let Some(p) = per_class {
                write_text(p, &csv)?;
            }
        }
    }
    Ok(())
}

pub fn pipeline(manifest: &Path, cfg: &PipelineConfig, report: Option<&Path>, jobs: usize) -> anyhow::Result<()> {
    let clips = io::read_dataset(manifest)?;
    let r = pipeline::run_pipeline(&clips, cfg, jobs)?;
    let text = to_json(&r);
    match report {
        Some(p) => {
            write_text(p, &text).with_context(|| "writing report")?;
            println!("{}", serde_json::to_string(&r.delta).expect("delta serializes"));
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn sweep(
    manifest: &Path,
    cfg: &PipelineConfig,
    spec: &SweepSpec,
    out: Option<&Path>,
    report: Option<&Path>,
    jobs: usize,
) -> anyhow::Result<()> {
    let clips = io::read_dataset(manifest)?;
    let rows = pipeline::run_sweep(&clips, spec, cfg, jobs)?;
    let csv = pipeline::sweep_csv(spec.parameter, &rows, &cfg.eval.vc_windows);
    if let Some(p) = report {
        write_text(p, &to_json(&rows))?;
    }
    match out {
        Some(p) => write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
