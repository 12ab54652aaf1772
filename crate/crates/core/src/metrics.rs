//! Evaluation: confusion-matrix IoU scores, video consistency over sliding
//! windows, and boundary IoU over a morphological band around ground-truth
//! class boundaries.
//!
//! Label maps are compared as sets of `(pixel, label)` pairs, so the
//! "intersection" of two maps is the set of pixels where they agree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, LabelMap};

/// Pixel tallies with ground truth on rows and prediction on columns.
///
/// Column `num_classes` collects predictions that are not a valid class
/// (the ignore label or anything out of range) on valid ground truth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
    /// Valid ground-truth pixels predicted as the ignore label.
    rejected: u64,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * (num_classes + 1)],
            rejected: 0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Count at `(gt, pred)`; `pred == num_classes` is the invalid column.
    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * (self.num_classes + 1) + pred]
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, gt: &LabelMap, pred: &LabelMap) -> Result<()> {
        gt.check_same_dims(pred.dims())?;
        let k = self.num_classes;
        let ignore = gt.ignore_label();
        let pred_ignore = pred.ignore_label();
        for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
            if g == ignore {
                continue;
            }
            let g = g as usize;
            if g >= k {
                return Err(Error::Validation(format!("ground-truth label {g} outside {k} classes")));
            }
            let col = if p == pred_ignore || p as usize >= k {
                if p == pred_ignore {
                    self.rejected += 1;
                }
                k
            } else {
                p as usize
            };
            self.counts[g * (k + 1) + col] += 1;
        }
        Ok(())
    }

    /// Sum another shard into this one.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Config(format!(
                "cannot merge {}-class and {}-class matrices",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.rejected += other.rejected;
        Ok(())
    }

    fn gt_count(&self, c: usize) -> u64 {
        let w = self.num_classes + 1;
        self.counts[c * w..(c + 1) * w].iter().sum()
    }

    fn pred_count(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|g| self.get(g, c)).sum()
    }

    /// IoU per class; `None` for classes absent from both gt and prediction.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| {
                let tp = self.get(c, c);
                let union = self.gt_count(c) + self.pred_count(c) - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }
}

pub fn accumulate_confusion(gt: &LabelMap, pred: &LabelMap, mut cm: ConfusionMatrix) -> Result<ConfusionMatrix> {
    cm.accumulate(gt, pred)?;
    Ok(cm)
}

/// Mean IoU over classes with a nonzero union.
pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(Error::UndefinedMetric("mIoU of an empty confusion matrix".into()));
    }
    let ious: Vec<f64> = cm.per_class_iou().into_iter().flatten().collect();
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// IoU averaged with ground-truth pixel-frequency weights.
pub fn fwiou(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::UndefinedMetric("FWIoU of an empty confusion matrix".into()));
    }
    let ious = cm.per_class_iou();
    Ok((0..cm.num_classes())
        .filter_map(|c| {
            let n = cm.gt_count(c);
            (n > 0).then(|| n as f64 / total as f64 * ious[c].unwrap_or(0.0))
        })
        .sum())
}

/// Video consistency for several window lengths at once.
///
/// For each window of `n` consecutive frames, the stable set holds pixels
/// whose non-ignore gt label is identical across the window; the consistent
/// set holds stable pixels whose prediction equals that label throughout.
/// A clip's score is the mean ratio over windows with a nonempty stable
/// set. `None` marks a clip that is too short or has no stable pixels.
pub fn vc_many(gt: &[LabelMap], pred: &[LabelMap], ns: &[usize]) -> Result<Vec<Option<f64>>> {
    if gt.len() != pred.len() {
        return Err(Error::Validation(format!(
            "{} gt frames vs {} predicted frames",
            gt.len(),
            pred.len()
        )));
    }
    if ns.contains(&0) {
        return Err(Error::Config("window length n must be at least 1".into()));
    }
    let Some(first) = gt.first() else {
        return Ok(vec![None; ns.len()]);
    };
    for (g, p) in gt.iter().zip(pred) {
        first.check_same_dims(g.dims())?;
        first.check_same_dims(p.dims())?;
    }
    let px = first.len();
    let ignore = first.ignore_label();
    // run lengths of the stable and consistent chains ending at the current frame
    let mut stable = vec![0u32; px];
    let mut ok = vec![0u32; px];
    let mut sums = vec![0f64; ns.len()];
    let mut windows = vec![0usize; ns.len()];
    for t in 0..gt.len() {
        let g = gt[t].labels();
        let p = pred[t].labels();
        let prev = if t > 0 { Some(gt[t - 1].labels()) } else { None };
        for i in 0..px {
            let continues = prev.is_some_and(|pg| pg[i] == g[i]);
            if g[i] == ignore {
                stable[i] = 0;
                ok[i] = 0;
                continue;
            }
            stable[i] = if continues { stable[i] + 1 } else { 1 };
            ok[i] = if p[i] == g[i] {
                if continues {
                    ok[i] + 1
                } else {
                    1
                }
            } else {
                0
            };
        }
        for (k, &n) in ns.iter().enumerate() {
            if t + 1 < n {
                continue;
            }
            let n = n as u32;
            let (mut s_gt, mut s_ok) = (0u64, 0u64);
            for i in 0..px {
                s_gt += (stable[i] >= n) as u64;
                s_ok += (ok[i] >= n) as u64;
            }
            if s_gt > 0 {
                sums[k] += s_ok as f64 / s_gt as f64;
                windows[k] += 1;
            }
        }
    }
    Ok(sums
        .iter()
        .zip(&windows)
        .map(|(&s, &w)| (w > 0).then(|| s / w as f64))
        .collect())
}

pub fn vc_n(gt: &[LabelMap], pred: &[LabelMap], n: usize) -> Result<Option<f64>> {
    Ok(vc_many(gt, pred, &[n])?[0])
}

/// Unweighted mean of per-clip scores per window length. Lengths with no
/// eligible clip are omitted.
pub fn mvc_from_scores(per_clip: &[Vec<Option<f64>>], ns: &[usize]) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for (k, &n) in ns.iter().enumerate() {
        let scores: Vec<f64> = per_clip.iter().filter_map(|c| c.get(k).copied().flatten()).collect();
        if scores.is_empty() {
            log::warn!("mVC_{n}: no clip has at least {n} frames with stable ground truth; omitted");
            continue;
        }
        out.insert(n, scores.iter().sum::<f64>() / scores.len() as f64);
    }
    out
}

pub fn mvc(clips: &[(Vec<LabelMap>, Vec<LabelMap>)], ns: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let per_clip = clips
        .iter()
        .map(|(g, p)| vc_many(g, p, ns))
        .collect::<Result<Vec<_>>>()?;
    Ok(mvc_from_scores(&per_clip, ns))
}

/// Pixels near a ground-truth class boundary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryBand {
    pub mask: BinaryMask,
}

/// Dense band: pixel `p` is in the band iff some in-image pixel within
/// Chebyshev distance `radius` carries a different label. Ignore pixels are
/// never in the band (but do count as a different label for neighbors).
pub fn boundary_band_dense(gt: &LabelMap, radius: usize) -> Vec<bool> {
    let (w, h) = gt.dims();
    let labels = gt.labels();
    let ignore = gt.ignore_label();
    if radius == 0 || labels.is_empty() {
        return vec![false; labels.len()];
    }
    // separable min/max filters over the square window, clipped at the border
    let mut rmin = vec![0u8; labels.len()];
    let mut rmax = vec![0u8; labels.len()];
    for y in 0..h {
        let row = &labels[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            let win = &row[lo..=hi];
            rmin[y * w + x] = *win.iter().min().unwrap();
            rmax[y * w + x] = *win.iter().max().unwrap();
        }
    }
    let mut band = vec![false; labels.len()];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            let i = y * w + x;
            let l = labels[i];
            if l == ignore {
                continue;
            }
            let mut mn = u8::MAX;
            let mut mx = u8::MIN;
            for yy in lo..=hi {
                mn = mn.min(rmin[yy * w + x]);
                mx = mx.max(rmax[yy * w + x]);
            }
            band[i] = mn != l || mx != l;
        }
    }
    band
}

pub fn boundary_band(gt: &LabelMap, radius: usize) -> BoundaryBand {
    let dense = boundary_band_dense(gt, radius);
    BoundaryBand {
        mask: BinaryMask::from_fn(gt.width(), gt.height(), |i| dense[i]),
    }
}

/// Boundary IoU of one frame against a precomputed band; `None` if bandless.
///
/// With `A` the band pixels where prediction agrees with gt, the score is
/// `A / (2|B| - A)`, since both gt and prediction cover the whole band.
pub fn frame_boundary_iou(band: &[bool], gt: &LabelMap, pred: &LabelMap) -> Option<f64> {
    let mut b = 0u64;
    let mut a = 0u64;
    for ((&inb, &g), &p) in band.iter().zip(gt.labels()).zip(pred.labels()) {
        if inb {
            b += 1;
            a += (g == p) as u64;
        }
    }
    (b > 0).then(|| a as f64 / (2 * b - a) as f64)
}

/// Mean boundary IoU over frames that have a nonempty band.
pub fn mbiou(gt: &[LabelMap], pred: &[LabelMap], radius: usize) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(Error::Validation(format!(
            "{} gt frames vs {} predicted frames",
            gt.len(),
            pred.len()
        )));
    }
    let mut scores = Vec::new();
    for (g, p) in gt.iter().zip(pred) {
        g.check_same_dims(p.dims())?;
        if let Some(s) = frame_boundary_iou(&boundary_band_dense(g, radius), g, p) {
            scores.push(s);
        }
    }
    if scores.is_empty() {
        return Err(Error::UndefinedMetric("mBIoU: no frame has boundary pixels".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub vc_windows: Vec<usize>,
    pub boundary_radius: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            vc_windows: vec![8, 16],
            boundary_radius: 2,
        }
    }
}

/// Ground truth of one clip with its boundary bands precomputed, so several
/// predictions can be scored against it cheaply.
pub struct ClipEvaluator<'a> {
    gt: &'a [LabelMap],
    bands: Vec<Vec<bool>>,
    num_classes: usize,
    cfg: EvalConfig,
}

/// Mergeable per-clip partial results.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipScores {
    pub confusion: ConfusionMatrix,
    pub vc: Vec<Option<f64>>,
    pub boundary: Vec<f64>,
    pub frames: usize,
}

impl<'a> ClipEvaluator<'a> {
    pub fn new(gt: &'a [LabelMap], num_classes: usize, cfg: &EvalConfig) -> Self {
        let bands = gt.iter().map(|g| boundary_band_dense(g, cfg.boundary_radius)).collect();
        Self {
            gt,
            bands,
            num_classes,
            cfg: cfg.clone(),
        }
    }

    pub fn score(&self, pred: &[LabelMap]) -> Result<ClipScores> {
        if pred.len() != self.gt.len() {
            return Err(Error::Validation(format!(
                "{} gt frames vs {} predicted frames",
                self.gt.len(),
                pred.len()
            )));
        }
        let mut confusion = ConfusionMatrix::new(self.num_classes);
        let mut boundary = Vec::new();
        for ((g, p), band) in self.gt.iter().zip(pred).zip(&self.bands) {
            confusion.accumulate(g, p)?;
            if let Some(s) = frame_boundary_iou(band, g, p) {
                boundary.push(s);
            }
        }
        let vc = vc_many(self.gt, pred, &self.cfg.vc_windows)?;
        Ok(ClipScores {
            confusion,
            vc,
            boundary,
            frames: pred.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub miou: f64,
    pub fwiou: f64,
    /// `None` when no frame of the dataset has boundary pixels.
    pub mbiou: Option<f64>,
    pub mvc: BTreeMap<usize, f64>,
    pub per_class_iou: Vec<Option<f64>>,
    pub clip_count: usize,
    pub frame_count: usize,
}

impl MetricsReport {
    /// Combine per-clip scores in the given order.
    pub fn aggregate(clips: &[ClipScores], num_classes: usize, cfg: &EvalConfig) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(num_classes);
        let mut boundary = Vec::new();
        let mut frames = 0;
        for c in clips {
            cm.merge(&c.confusion)?;
            boundary.extend_from_slice(&c.boundary);
            frames += c.frames;
        }
        let vcs: Vec<Vec<Option<f64>>> = clips.iter().map(|c| c.vc.clone()).collect();
        let mbiou = if boundary.is_empty() {
            log::warn!("mBIoU undefined: no frame has boundary pixels");
            None
        } else {
            Some(boundary.iter().sum::<f64>() / boundary.len() as f64)
        };
        Ok(Self {
            miou: miou(&cm)?,
            fwiou: fwiou(&cm)?,
            mbiou,
            mvc: mvc_from_scores(&vcs, &cfg.vc_windows),
            per_class_iou: cm.per_class_iou(),
            clip_count: clips.len(),
            frame_count: frames,
        })
    }

    /// `class,iou` rows; absent classes have an empty IoU cell.
    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("class,iou\n");
        for (c, v) in self.per_class_iou.iter().enumerate() {
            match v {
                Some(v) => s.push_str(&format!("{c},{v}\n")),
                None => s.push_str(&format!("{c},\n")),
            }
        }
        s
    }
}
