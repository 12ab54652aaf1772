//! Seeded synthetic clips: moving shapes with ground truth, perturbed
//! predictions, oracle masklets and class-conditional features.
//!
//! Every generator takes an explicit seed; nothing reads a global RNG.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::classifier::{labeled_vectors, FeatureVector};
use crate::components::connected_components;
use crate::error::{Error, Result};
use crate::io::{self, ClipManifest, FeatureMap, FrameEntry};
use crate::mask::{BinaryMask, LabelMap, Masklet, MaskletSet, DEFAULT_IGNORE_LABEL};

/// Background class of every synthetic clip.
pub const BACKGROUND: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub boundary_jitter_radius: usize,
    pub label_noise_rate: f64,
    pub class_swap_rate: f64,
}

/// How synthetic masklet quality scores are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScoreModel {
    Fixed {
        pred_iou: f64,
        stability: f64,
    },
    Beta {
        pred_iou: (f64, f64),
        stability: (f64, f64),
    },
}

impl Default for ScoreModel {
    fn default() -> Self {
        ScoreModel::Beta {
            pred_iou: (8.0, 2.0),
            stability: (18.0, 2.0),
        }
    }
}

impl ScoreModel {
    fn sample(&self, rng: &mut impl Rng) -> Result<(f64, f64)> {
        match *self {
            ScoreModel::Fixed { pred_iou, stability } => Ok((pred_iou, stability)),
            ScoreModel::Beta { pred_iou, stability } => {
                let beta =
                    |(a, b): (f64, f64)| Beta::new(a, b).map_err(|e| Error::Config(format!("beta({a}, {b}): {e}")));
                Ok((beta(pred_iou)?.sample(rng), beta(stability)?.sample(rng)))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub num_objects: usize,
    pub num_classes: usize,
    /// Speed range in pixels per frame.
    pub velocity: (f64, f64),
    /// Half-extent range as a fraction of `min(width, height)`.
    pub size: (f64, f64),
    pub shape_kinds: Vec<ShapeKind>,
    pub perturb: PerturbConfig,
    pub scores: ScoreModel,
    pub feature_dim: usize,
    pub feature_separation: f64,
    pub feature_stride: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 128,
            height: 128,
            frames: 40,
            num_objects: 5,
            num_classes: 124,
            velocity: (0.5, 2.0),
            size: (0.08, 0.25),
            shape_kinds: vec![ShapeKind::Rectangle, ShapeKind::Ellipse],
            perturb: PerturbConfig::default(),
            scores: ScoreModel::default(),
            feature_dim: 64,
            feature_separation: 4.0,
            feature_stride: 4,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.perturb;
        for (name, v) in [
            ("label_noise_rate", p.label_noise_rate),
            ("class_swap_rate", p.class_swap_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
            }
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("frame size must be nonzero".into()));
        }
        if self.num_classes == 0 || self.num_classes > 254 {
            return Err(Error::Config("num_classes must lie in 1..=254".into()));
        }
        if self.num_objects > 0 && self.num_classes < 2 {
            return Err(Error::Config("objects need at least one non-background class".into()));
        }
        if self.num_objects >= u16::MAX as usize {
            return Err(Error::Config("too many objects".into()));
        }
        let (lo, hi) = self.size;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
            return Err(Error::Config(format!(
                "size range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 0.5"
            )));
        }
        if !(self.velocity.0 >= 0.0 && self.velocity.0 <= self.velocity.1) {
            return Err(Error::Config("velocity range must satisfy 0 <= lo <= hi".into()));
        }
        if self.shape_kinds.is_empty() {
            return Err(Error::Config("at least one shape kind is required".into()));
        }
        if self.feature_dim > 0
            && (self.feature_stride == 0
                || !self.width.is_multiple_of(self.feature_stride)
                || !self.height.is_multiple_of(self.feature_stride))
        {
            return Err(Error::Config(format!(
                "feature stride {} must divide {}x{}",
                self.feature_stride, self.width, self.height
            )));
        }
        if self.feature_separation.is_nan() || self.feature_separation < 0.0 {
            return Err(Error::Config("feature_separation must be non-negative".into()));
        }
        Ok(())
    }
}

/// Independent RNG stream for one purpose of one seed.
fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

const STREAM_SCENE: u64 = 1;
const STREAM_PERTURB: u64 = 2;
const STREAM_SCORES: u64 = 3;
const STREAM_CENTERS: u64 = 4;
const STREAM_FEATURES: u64 = 5;

/// Per-pixel object ids: 0 is background, `k + 1` is object `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceMap {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthClip {
    pub gt: Vec<LabelMap>,
    pub instances: Vec<InstanceMap>,
    /// Class of object `k` (instance id `k + 1`).
    pub object_classes: Vec<u8>,
}

#[derive(Clone, Copy, Debug)]
struct Shape {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    hx: f64,
    hy: f64,
    vx: f64,
    vy: f64,
}

impl Shape {
    fn contains(&self, px: f64, py: f64) -> bool {
        let (dx, dy) = ((px - self.cx) / self.hx, (py - self.cy) / self.hy);
        match self.kind {
            ShapeKind::Rectangle => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            ShapeKind::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }

    fn advance(&mut self, w: f64, h: f64) {
        fn reflect(c: &mut f64, v: &mut f64, half: f64, extent: f64) {
            *c += *v;
            let (lo, hi) = (half, extent - half);
            if hi <= lo {
                *c = extent / 2.0;
                return;
            }
            // fold back into [lo, hi]; loop covers speeds larger than the free range
            while *c < lo || *c > hi {
                if *c < lo {
                    *c = 2.0 * lo - *c;
                } else {
                    *c = 2.0 * hi - *c;
                }
                *v = -*v;
            }
        }
        reflect(&mut self.cx, &mut self.vx, self.hx, w);
        reflect(&mut self.cy, &mut self.vy, self.hy, h);
    }
}

/// Moving shapes with constant velocity, reflecting at the borders.
/// Later objects occlude earlier ones; background is class 0.
pub fn generate_clip(cfg: &SynthConfig) -> Result<SynthClip> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, STREAM_SCENE);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let base = w.min(h);
    let mut shapes = Vec::with_capacity(cfg.num_objects);
    let mut object_classes = Vec::with_capacity(cfg.num_objects);
    for _ in 0..cfg.num_objects {
        let kind = cfg.shape_kinds[rng.random_range(0..cfg.shape_kinds.len())];
        let hx = base * rng.random_range(cfg.size.0..=cfg.size.1);
        let hy = base * rng.random_range(cfg.size.0..=cfg.size.1);
        let cx = rng.random_range(hx..=(w - hx).max(hx));
        let cy = rng.random_range(hy..=(h - hy).max(hy));
        let speed = rng.random_range(cfg.velocity.0..=cfg.velocity.1);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        shapes.push(Shape {
            kind,
            cx,
            cy,
            hx,
            hy,
            vx: speed * angle.cos(),
            vy: speed * angle.sin(),
        });
        object_classes.push(rng.random_range(1..cfg.num_classes) as u8);
    }

    let mut gt = Vec::with_capacity(cfg.frames);
    let mut instances = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        if t > 0 {
            for s in &mut shapes {
                s.advance(w, h);
            }
        }
        let mut ids = vec![0u16; cfg.width * cfg.height];
        for (k, s) in shapes.iter().enumerate() {
            let x0 = (s.cx - s.hx).floor().max(0.0) as usize;
            let x1 = ((s.cx + s.hx).ceil() as usize).min(cfg.width);
            let y0 = (s.cy - s.hy).floor().max(0.0) as usize;
            let y1 = ((s.cy + s.hy).ceil() as usize).min(cfg.height);
            for y in y0..y1 {
                for x in x0..x1 {
                    if s.contains(x as f64 + 0.5, y as f64 + 0.5) {
                        ids[y * cfg.width + x] = k as u16 + 1;
                    }
                }
            }
        }
        let labels = ids
            .iter()
            .map(|&id| {
                if id == 0 {
                    BACKGROUND
                } else {
                    object_classes[id as usize - 1]
                }
            })
            .collect();
        gt.push(LabelMap::new(cfg.width, cfg.height, labels, DEFAULT_IGNORE_LABEL)?);
        instances.push(InstanceMap {
            width: cfg.width,
            height: cfg.height,
            ids,
        });
    }
    Ok(SynthClip {
        gt,
        instances,
        object_classes,
    })
}

/// Dilate a boolean grid by a square of the given radius, clipped at the
/// image border.
fn dilate(grid: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return grid.to_vec();
    }
    let mut rows = vec![false; grid.len()];
    for y in 0..h {
        // running count of set cells in the row window
        let row = &grid[y * w..(y + 1) * w];
        let mut prefix = vec![0u32; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + row[x] as u32;
        }
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius + 1).min(w);
            rows[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    let mut out = vec![false; grid.len()];
    for x in 0..w {
        let mut prefix = vec![0u32; h + 1];
        for y in 0..h {
            prefix[y + 1] = prefix[y] + rows[y * w + x] as u32;
        }
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius + 1).min(h);
            out[y * w + x] = prefix[hi] > prefix[lo];
        }
    }
    out
}

/// Simulate an imperfect segmentation model.
///
/// Per object and frame: a random dilation or erosion of up to
/// `boundary_jitter_radius` pixels, and with probability `class_swap_rate`
/// a wrong class for the whole object. Then every pixel independently
/// becomes a uniformly random class with probability `label_noise_rate`.
pub fn perturb_prediction(
    clip: &SynthClip,
    perturb: &PerturbConfig,
    num_classes: usize,
    seed: u64,
) -> Result<Vec<LabelMap>> {
    for (name, v) in [
        ("label_noise_rate", perturb.label_noise_rate),
        ("class_swap_rate", perturb.class_swap_rate),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Config(format!("{name} {v} outside [0, 1]")));
        }
    }
    let mut rng = stream(seed, STREAM_PERTURB);
    let r = perturb.boundary_jitter_radius as i64;
    let mut out = Vec::with_capacity(clip.gt.len());
    for (gt, inst) in clip.gt.iter().zip(&clip.instances) {
        let (w, h) = (inst.width, inst.height);
        let g = gt.labels();
        let mut pred = g.to_vec();
        for (k, &class) in clip.object_classes.iter().enumerate() {
            let id = k as u16 + 1;
            let jitter = if r > 0 { rng.random_range(-r..=r) } else { 0 };
            let swapped = num_classes > 2 && rng.random_bool(perturb.class_swap_rate);
            let pc = if swapped {
                // uniform over the other object classes
                let mut c = rng.random_range(1..num_classes - 1) as u8;
                if c >= class {
                    c += 1;
                }
                c
            } else {
                class
            };
            let Some((x0, y0, x1, y1)) = bbox(&inst.ids, w, id) else {
                continue;
            };
            let pad = jitter.unsigned_abs() as usize;
            let (bx0, by0) = (x0.saturating_sub(pad), y0.saturating_sub(pad));
            let (bx1, by1) = ((x1 + pad + 1).min(w), (y1 + pad + 1).min(h));
            let (bw, bh) = (bx1 - bx0, by1 - by0);
            let at = |x: usize, y: usize| (by0 + y) * w + bx0 + x;
            let mine: Vec<bool> = (0..bw * bh).map(|i| inst.ids[at(i % bw, i / bw)] == id).collect();
            if swapped {
                for (i, &m) in mine.iter().enumerate() {
                    if m {
                        pred[at(i % bw, i / bw)] = pc;
                    }
                }
            }
            if jitter > 0 {
                let grown = dilate(&mine, bw, bh, pad);
                for i in 0..bw * bh {
                    if grown[i] && !mine[i] {
                        pred[at(i % bw, i / bw)] = pc;
                    }
                }
            } else if jitter < 0 {
                // erode: pixels near another instance take that neighbor's gt label
                let others: Vec<bool> = mine.iter().map(|m| !m).collect();
                let near = dilate(&others, bw, bh, pad);
                for i in 0..bw * bh {
                    if !(mine[i] && near[i]) {
                        continue;
                    }
                    let (x, y) = ((i % bw) as i64, (i / bw) as i64);
                    if let Some(l) = nearest_other(&mine, bw, bh, x, y, pad as i64).map(|(qx, qy)| g[at(qx, qy)]) {
                        pred[at(x as usize, y as usize)] = l;
                    }
                }
            }
        }
        if perturb.label_noise_rate > 0.0 {
            for p in pred.iter_mut() {
                if rng.random_bool(perturb.label_noise_rate) {
                    *p = rng.random_range(0..num_classes) as u8;
                }
            }
        }
        out.push(LabelMap::new(w, h, pred, gt.ignore_label())?);
    }
    Ok(out)
}

fn bbox(ids: &[u16], w: usize, id: u16) -> Option<(usize, usize, usize, usize)> {
    let mut b: Option<(usize, usize, usize, usize)> = None;
    for (i, &v) in ids.iter().enumerate() {
        if v == id {
            let (x, y) = (i % w, i / w);
            b = Some(match b {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
    }
    b
}

/// Closest cell (Chebyshev rings, scan order within a ring) not in `mine`.
fn nearest_other(mine: &[bool], w: usize, h: usize, x: i64, y: i64, radius: i64) -> Option<(usize, usize)> {
    for d in 1..=radius {
        for dy in -d..=d {
            for dx in -d..=d {
                if dx.abs() != d && dy.abs() != d {
                    continue;
                }
                let (qx, qy) = (x + dx, y + dy);
                if qx < 0 || qy < 0 || qx >= w as i64 || qy >= h as i64 {
                    continue;
                }
                if !mine[qy as usize * w + qx as usize] {
                    return Some((qx as usize, qy as usize));
                }
            }
        }
    }
    None
}

/// Identity of one synthetic object across frames.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthTrack {
    /// Instance id (object index + 1).
    pub instance_id: u16,
    /// `(frame_index, masklet_id)`; several per frame if the object is split.
    pub members: Vec<(usize, u64)>,
}

/// One masklet per 4-connected component of every visible object, with
/// quality scores drawn from the score model. Masklet ids are unique
/// across the clip, assigned in frame then scan order.
pub fn oracle_masklets(
    instances: &[InstanceMap],
    scores: &ScoreModel,
    seed: u64,
) -> Result<(Vec<MaskletSet>, Vec<GroundTruthTrack>)> {
    let mut rng = stream(seed, STREAM_SCORES);
    let mut next_id = 0u64;
    let mut sets = Vec::with_capacity(instances.len());
    let mut tracks: std::collections::BTreeMap<u16, Vec<(usize, u64)>> = Default::default();
    for (f, inst) in instances.iter().enumerate() {
        let (w, h) = (inst.width, inst.height);
        let (labels, n) = connected_components(&inst.ids, w, h);
        let mut runs: Vec<Vec<std::ops::Range<usize>>> = vec![Vec::new(); n];
        let mut owner = vec![0u16; n];
        for (i, &c) in labels.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let c = c as usize - 1;
            owner[c] = inst.ids[i];
            match runs[c].last_mut() {
                Some(r) if r.end == i => r.end += 1,
                _ => runs[c].push(i..i + 1),
            }
        }
        let mut ms = Vec::with_capacity(n);
        for (c, rs) in runs.into_iter().enumerate() {
            let mask = BinaryMask::from_runs(w, h, rs);
            let (pred_iou, stability) = scores.sample(&mut rng)?;
            ms.push(Masklet::new(mask, f, next_id, pred_iou, stability)?);
            tracks.entry(owner[c]).or_default().push((f, next_id));
            next_id += 1;
        }
        sets.push(MaskletSet::new(f, ms)?);
    }
    let tracks = tracks
        .into_iter()
        .map(|(instance_id, members)| GroundTruthTrack { instance_id, members })
        .collect();
    Ok((sets, tracks))
}

/// Class centers: seeded random unit directions, scaled so the closest
/// pair is exactly `separation` apart. Zero separation puts every center
/// at the origin.
pub fn class_centers(num_classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if separation == 0.0 || num_classes < 2 {
        return Ok(vec![vec![0.0; dim]; num_classes]);
    }
    let mut rng = stream(seed, STREAM_CENTERS);
    let dirs: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut min_d = f64::INFINITY;
    for i in 0..num_classes {
        for j in i + 1..num_classes {
            let d = dirs[i]
                .iter()
                .zip(&dirs[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_d = min_d.min(d);
        }
    }
    if min_d.is_nan() || min_d <= 1e-9 {
        return Err(Error::Config(format!(
            "cannot separate {num_classes} class centers in {dim} dimensions"
        )));
    }
    let scale = separation / min_d;
    Ok(dirs
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * scale).collect())
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthFeatures {
    pub maps: Vec<FeatureMap>,
    /// Pooled masklet vectors labeled with their majority class.
    pub dataset: Vec<(FeatureVector, usize)>,
}

/// Feature maps on the strided grid: each cell holds the center of the
/// class under its center pixel plus standard Gaussian noise. Ignore cells
/// get pure noise.
pub fn generate_features(
    labels: &[LabelMap],
    masklets: &[MaskletSet],
    cfg: &SynthConfig,
    seed: u64,
) -> Result<SynthFeatures> {
    if cfg.feature_separation.is_nan() || cfg.feature_separation < 0.0 {
        return Err(Error::Config("feature_separation must be non-negative".into()));
    }
    let centers = class_centers(cfg.num_classes, cfg.feature_dim, cfg.feature_separation, cfg.seed)?;
    let mut rng = stream(seed, STREAM_FEATURES);
    let s = cfg.feature_stride.max(1);
    let mut maps = Vec::with_capacity(labels.len());
    for l in labels {
        let (w, h) = l.dims();
        if w % s != 0 || h % s != 0 {
            return Err(Error::Config(format!("feature stride {s} must divide {w}x{h}")));
        }
        let (fw, fh) = (w / s, h / s);
        let mut values = Vec::with_capacity(fw * fh * cfg.feature_dim);
        for fy in 0..fh {
            for fx in 0..fw {
                let c = l.get(fx * s + s / 2, fy * s + s / 2) as usize;
                let center = centers.get(c);
                for k in 0..cfg.feature_dim {
                    let mu = center.map_or(0.0, |v| v[k]);
                    let noise: f64 = rng.sample(StandardNormal);
                    values.push((mu + noise) as f32);
                }
            }
        }
        maps.push(FeatureMap::new(fw, fh, cfg.feature_dim, values)?);
    }
    let mut dataset = Vec::new();
    for set in masklets {
        let f = set.frame_index();
        let (Some(l), Some(fm)) = (labels.get(f), maps.get(f)) else {
            continue;
        };
        let ms: Vec<&Masklet> = set.iter().collect();
        dataset.extend(labeled_vectors(&ms, l, fm)?);
    }
    Ok(SynthFeatures { maps, dataset })
}

/// Everything generated for one clip.
#[derive(Clone, Debug)]
pub struct SynthBundle {
    pub clip: SynthClip,
    pub pred: Vec<LabelMap>,
    pub masklets: Vec<MaskletSet>,
    pub tracks: Vec<GroundTruthTrack>,
}

pub fn generate_bundle(cfg: &SynthConfig) -> Result<SynthBundle> {
    let clip = generate_clip(cfg)?;
    let pred = perturb_prediction(&clip, &cfg.perturb, cfg.num_classes, cfg.seed)?;
    let (masklets, tracks) = oracle_masklets(&clip.instances, &cfg.scores, cfg.seed)?;
    Ok(SynthBundle {
        clip,
        pred,
        masklets,
        tracks,
    })
}

/// Write one clip as `manifest.json`, `gt/`, `pred/`, `masklets.jsonl` and,
/// when `feature_dim > 0`, `features/`.
pub fn export_clip(cfg: &SynthConfig, clip_id: &str, dir: &Path) -> Result<PathBuf> {
    let bundle = generate_bundle(cfg)?;
    for sub in ["gt", "pred", "features"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let features = if cfg.feature_dim > 0 {
        Some(generate_features(&bundle.clip.gt, &[], cfg, cfg.seed)?.maps)
    } else {
        None
    };
    let mut frames = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let gt_rel = PathBuf::from(format!("gt/{t:05}.png"));
        let pred_rel = PathBuf::from(format!("pred/{t:05}.png"));
        io::write_labelmap(&bundle.clip.gt[t], &dir.join(&gt_rel))?;
        io::write_labelmap(&bundle.pred[t], &dir.join(&pred_rel))?;
        let feature_path = match &features {
            Some(maps) => {
                let rel = PathBuf::from(format!("features/{t:05}.mfea"));
                io::write_featuremap(&maps[t], &dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        frames.push(FrameEntry {
            frame_index: t,
            gt_path: Some(gt_rel),
            pred_path: Some(pred_rel),
            masklet_path: None,
            feature_path,
        });
    }
    io::write_masklets(&dir.join("masklets.jsonl"), &bundle.masklets)?;
    let manifest = ClipManifest {
        clip_id: clip_id.to_string(),
        width: cfg.width,
        height: cfg.height,
        num_classes: cfg.num_classes,
        ignore_label: DEFAULT_IGNORE_LABEL,
        masklets: Some(PathBuf::from("masklets.jsonl")),
        frames,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.json");
    io::write_manifest(&manifest, &path)?;
    Ok(path)
}

/// Seed of the `k`-th clip of a corpus.
pub fn clip_seed(base: u64, k: usize) -> u64 {
    base.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Write `clips` clips plus a `dataset.json` index under `out`.
pub fn export_dataset(cfg: &SynthConfig, clips: usize, out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut paths = Vec::with_capacity(clips);
    for k in 0..clips {
        let id = format!("clip_{k:04}");
        let clip_cfg = SynthConfig {
            seed: clip_seed(cfg.seed, k),
            ..cfg.clone()
        };
        export_clip(&clip_cfg, &id, &out.join(&id))?;
        paths.push(PathBuf::from(format!("{id}/manifest.json")));
    }
    let index = out.join("dataset.json");
    io::write_dataset_index(&io::DatasetIndex { clips: paths }, &index)?;
    Ok(index)
}
