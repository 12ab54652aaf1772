//! Mask data model and the uncompressed run-length codec.
//!
//! Run-length counts follow the COCO "uncompressed RLE" convention of
//! alternating background/foreground runs that start with a background run,
//! **but the scan order is row-major** (pixel `(x, y)` lives at index
//! `y * width + x`), not COCO's column-major order. Exporters converting
//! COCO masks must transpose first.
//!
//! Canonical counts never contain a zero except a single leading zero, which
//! appears exactly when the first pixel is foreground.

use std::ops::Range;

use crate::error::{Error, Result};

/// Default class id excluded from voting and from every metric.
pub const DEFAULT_IGNORE_LABEL: u8 = 255;

/// Dense per-frame semantic labels in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
    ignore_label: u8,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>, ignore_label: u8) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Format(format!(
                "label map of {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
            ignore_label,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8, ignore_label: u8) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
            ignore_label,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ignore_label(&self) -> u8 {
        self.ignore_label
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn into_labels(self) -> Vec<u8> {
        self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    /// Check that every label is a valid class or the ignore label.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|&(_, &l)| l != self.ignore_label && l as usize >= num_classes)
        {
            return Err(Error::Validation(format!(
                "label {l} at pixel {i} is neither < {num_classes} nor the ignore label {}",
                self.ignore_label
            )));
        }
        Ok(())
    }

    pub(crate) fn check_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::Dimension {
                expected: self.dims(),
                actual: other,
            });
        }
        Ok(())
    }
}

/// Binary mask stored as row-major uncompressed run-length counts.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    counts: Vec<u32>,
}

impl BinaryMask {
    /// Build a mask from raw counts, validating the run-length invariants.
    pub fn from_counts(width: usize, height: usize, counts: Vec<u32>) -> Result<Self> {
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != (width * height) as u64 {
            return Err(Error::Format(format!(
                "rle counts sum to {total}, expected {} for {width}x{height}",
                width * height
            )));
        }
        if let Some(pos) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(Error::Format(format!(
                "rle count at index {} is zero; only a leading zero is allowed",
                pos + 1
            )));
        }
        Ok(Self { width, height, counts })
    }

    /// Mask with no foreground pixels.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            counts: vec![(width * height) as u32],
        }
    }

    /// Build a mask from a per-pixel predicate over row-major indices.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize) -> bool) -> Self {
        let mut enc = RunEncoder::new();
        for i in 0..width * height {
            enc.push(f(i));
        }
        Self {
            width,
            height,
            counts: enc.finish(),
        }
    }

    /// Build a mask from sorted, non-overlapping foreground index ranges.
    pub fn from_runs(width: usize, height: usize, runs: impl IntoIterator<Item = Range<usize>>) -> Self {
        let n = width * height;
        let mut counts = Vec::new();
        let mut cursor = 0usize;
        for r in runs {
            if r.is_empty() {
                continue;
            }
            debug_assert!(r.start >= cursor && r.end <= n);
            if r.start == cursor && !counts.is_empty() {
                // adjacent to the previous run: extend it
                *counts.last_mut().unwrap() += r.len() as u32;
            } else {
                counts.push((r.start - cursor) as u32);
                counts.push(r.len() as u32);
            }
            cursor = r.end;
        }
        if cursor < n || counts.is_empty() {
            counts.push((n - cursor) as u32);
        }
        Self { width, height, counts }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Foreground pixel ranges in row-major index space, ascending.
    pub fn fg_runs(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        let mut pos = 0usize;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c as usize;
            (i % 2 == 1 && c > 0).then_some(start..pos)
        })
    }

    /// Foreground pixel indices, ascending.
    pub fn fg_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.fg_runs().flatten()
    }

    pub fn area(&self) -> u64 {
        mask_area(self)
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn complement(&self) -> Self {
        let counts = if self.counts.first() == Some(&0) {
            self.counts[1..].to_vec()
        } else {
            let mut c = Vec::with_capacity(self.counts.len() + 1);
            c.push(0);
            c.extend_from_slice(&self.counts);
            c
        };
        Self {
            width: self.width,
            height: self.height,
            counts,
        }
    }

    /// Number of pixels set in both masks. Dimensions are not checked.
    pub fn intersection_area(&self, other: &BinaryMask) -> u64 {
        let mut a = self.fg_runs().peekable();
        let mut b = other.fg_runs().peekable();
        let mut total = 0u64;
        while let (Some(ra), Some(rb)) = (a.peek(), b.peek()) {
            let lo = ra.start.max(rb.start);
            let hi = ra.end.min(rb.end);
            if hi > lo {
                total += (hi - lo) as u64;
            }
            if ra.end <= rb.end {
                a.next();
            } else {
                b.next();
            }
        }
        total
    }

    /// Mean `(x, y)` position of foreground pixels.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0f64, 0f64, 0u64);
        for i in self.fg_indices() {
            sx += (i % self.width) as f64;
            sy += (i / self.width) as f64;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    pub(crate) fn check_same_dims(&self, other: (usize, usize)) -> Result<()> {
        if self.dims() != other {
            return Err(Error::Dimension {
                expected: self.dims(),
                actual: other,
            });
        }
        Ok(())
    }
}

struct RunEncoder {
    counts: Vec<u32>,
    current: bool,
    run: u32,
}

impl RunEncoder {
    fn new() -> Self {
        Self {
            counts: Vec::new(),
            current: false,
            run: 0,
        }
    }

    #[inline]
    fn push(&mut self, v: bool) {
        if v != self.current {
            self.counts.push(self.run);
            self.run = 0;
            self.current = v;
        }
        self.run += 1;
    }

    fn finish(mut self) -> Vec<u32> {
        if self.run > 0 || self.counts.is_empty() {
            self.counts.push(self.run);
        }
        self.counts
    }
}

/// Encode a row-major boolean grid as canonical run-length counts.
pub fn rle_encode(dense: &[bool], width: usize, height: usize) -> Result<BinaryMask> {
    if dense.len() != width * height {
        return Err(Error::Format(format!(
            "dense grid has {} cells, expected {width}x{height}",
            dense.len()
        )));
    }
    let mut enc = RunEncoder::new();
    for &v in dense {
        enc.push(v);
    }
    Ok(BinaryMask {
        width,
        height,
        counts: enc.finish(),
    })
}

/// Expand a mask into a row-major boolean grid.
pub fn rle_decode(mask: &BinaryMask) -> Result<Vec<bool>> {
    let n = mask.width * mask.height;
    let total: u64 = mask.counts.iter().map(|&c| c as u64).sum();
    if total != n as u64 {
        return Err(Error::Format(format!("rle counts sum to {total}, expected {n}")));
    }
    let mut out = Vec::with_capacity(n);
    let mut v = false;
    for &c in &mask.counts {
        out.resize(out.len() + c as usize, v);
        v = !v;
    }
    Ok(out)
}

/// Intersection over union; two empty masks score 1.0.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.check_same_dims(b.dims())?;
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Foreground pixel count, summed over the odd-indexed runs.
pub fn mask_area(mask: &BinaryMask) -> u64 {
    mask.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
}

/// One class-agnostic object mask on one frame, with its quality scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Masklet {
    mask: BinaryMask,
    frame_index: usize,
    masklet_id: u64,
    pred_iou: f64,
    stability: f64,
    area: u64,
}

impl Masklet {
    pub fn new(mask: BinaryMask, frame_index: usize, masklet_id: u64, pred_iou: f64, stability: f64) -> Result<Self> {
        for (name, v) in [("pred_iou", pred_iou), ("stability", stability)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "masklet {masklet_id} on frame {frame_index}: {name} {v} outside [0, 1]"
                )));
            }
        }
        let area = mask.area();
        Ok(Self {
            mask,
            frame_index,
            masklet_id,
            pred_iou,
            stability,
            area,
        })
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn masklet_id(&self) -> u64 {
        self.masklet_id
    }

    pub fn pred_iou(&self) -> f64 {
        self.pred_iou
    }

    pub fn stability(&self) -> f64 {
        self.stability
    }

    pub fn area(&self) -> u64 {
        self.area
    }
}

/// All masklets detected on one frame, in detection order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MaskletSet {
    frame_index: usize,
    masklets: Vec<Masklet>,
}

impl MaskletSet {
    pub fn new(frame_index: usize, masklets: Vec<Masklet>) -> Result<Self> {
        if let Some(m) = masklets.iter().find(|m| m.frame_index != frame_index) {
            return Err(Error::Validation(format!(
                "masklet {} belongs to frame {}, not {frame_index}",
                m.masklet_id, m.frame_index
            )));
        }
        Ok(Self { frame_index, masklets })
    }

    pub fn empty(frame_index: usize) -> Self {
        Self {
            frame_index,
            masklets: Vec::new(),
        }
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn masklets(&self) -> &[Masklet] {
        &self.masklets
    }

    pub fn len(&self) -> usize {
        self.masklets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masklets.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Masklet> {
        self.masklets.iter()
    }

    pub(crate) fn retain(&mut self, keep: impl FnMut(&Masklet) -> bool) {
        self.masklets.retain(keep);
    }
}

impl<'a> IntoIterator for &'a MaskletSet {
    type Item = &'a Masklet;
    type IntoIter = std::slice::Iter<'a, Masklet>;

    fn into_iter(self) -> Self::IntoIter {
        self.masklets.iter()
    }
}
