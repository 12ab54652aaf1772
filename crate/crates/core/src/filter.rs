//! Quality gating of masklets by predicted IoU and stability.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{mask_iou, BinaryMask, Masklet, MaskletSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub pred_iou_thresh: f64,
    pub stability_thresh: f64,
    /// Logit-space offset used when stability is computed from probabilities.
    pub stability_offset: f64,
    pub dedup_iou: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            pred_iou_thresh: 0.6,
            stability_thresh: 0.8,
            stability_offset: 0.9,
            dedup_iou: None,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} {v} outside [0, 1]")))
            }
        };
        unit("pred_iou_thresh", self.pred_iou_thresh)?;
        unit("stability_thresh", self.stability_thresh)?;
        if let Some(d) = self.dedup_iou {
            unit("dedup_iou", d)?;
        }
        if !(self.stability_offset > 0.0 && self.stability_offset.is_finite()) {
            return Err(Error::Config(format!(
                "stability_offset {} must be positive",
                self.stability_offset
            )));
        }
        Ok(())
    }
}

/// Per-pixel foreground probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMask {
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

impl ProbMask {
    pub fn new(width: usize, height: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != width * height {
            return Err(Error::Format(format!(
                "probability mask {width}x{height} needs {} values, got {}",
                width * height,
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Range(format!("probability {p} outside [0, 1]")));
        }
        Ok(Self { width, height, probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn binarize(&self, level: f64) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |i| self.probs[i] >= level)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// IoU between the mask binarized at `σ(offset)` and at `σ(-offset)`.
pub fn stability_score(p: &ProbMask, offset: f64) -> f64 {
    stability_score_levels(p, sigmoid(offset), sigmoid(-offset))
}

/// Stability with explicit probability-space binarization levels.
pub fn stability_score_levels(p: &ProbMask, high: f64, low: f64) -> f64 {
    let (hi, lo) = (p.binarize(high), p.binarize(low));
    mask_iou(&hi, &lo).expect("same dimensions")
}

/// Keep masklets passing both thresholds (inclusive). With `dedup_iou`
/// set, masklets are visited by descending `pred_iou` and any masklet
/// overlapping an already kept one at or above the threshold is dropped.
/// Survivors keep their input order.
pub fn filter_masklets(set: &MaskletSet, cfg: &FilterConfig) -> MaskletSet {
    let mut out = set.clone();
    out.retain(|m| m.pred_iou() >= cfg.pred_iou_thresh && m.stability() >= cfg.stability_thresh);
    if let Some(thresh) = cfg.dedup_iou {
        let keep = dedup_keep(out.masklets(), thresh);
        let mut i = 0;
        out.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
    }
    out
}

fn dedup_keep(ms: &[Masklet], thresh: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..ms.len()).collect();
    // stable sort: equal scores keep input order
    order.sort_by(|&a, &b| ms[b].pred_iou().total_cmp(&ms[a].pred_iou()));
    let mut keep = vec![false; ms.len()];
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let dup = kept
            .iter()
            .any(|&k| mask_iou(ms[k].mask(), ms[i].mask()).unwrap_or(0.0) >= thresh);
        if !dup {
            keep[i] = true;
            kept.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn masklet(id: u64, pred_iou: f64, stability: f64) -> Masklet {
        let mask = BinaryMask::from_fn(4, 4, |i| i == id as usize % 16);
        Masklet::new(mask, 0, id, pred_iou, stability).unwrap()
    }

    #[test]
    fn stability_examples() {
        let full = ProbMask::new(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(stability_score(&full, 0.9), 1.0);
        assert_eq!(stability_score(&full, 3.0), 1.0);

        // below σ(-0.9) ≈ 0.289: both binarizations empty
        let low = ProbMask::new(2, 2, vec![0.2; 4]).unwrap();
        assert_eq!(stability_score(&low, 0.9), 1.0);

        // 0.5 - ε sits between the two levels: low mask full, high mask empty
        let mid = ProbMask::new(2, 2, vec![0.5 - 1e-9; 4]).unwrap();
        assert_eq!(stability_score(&mid, 0.9), 0.0);
    }

    #[test]
    fn stability_matches_dense_two_threshold_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (hi, lo) = (1.0 / (1.0 + (-0.9f64).exp()), 1.0 / (1.0 + 0.9f64.exp()));
        for _ in 0..500 {
            let (w, h) = (rng.random_range(1..10), rng.random_range(1..10));
            let probs: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
            let (mut inter, mut union) = (0usize, 0usize);
            for &p in &probs {
                let (a, b) = (p >= hi, p >= lo);
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
            let expected = if union == 0 { 1.0 } else { inter as f64 / union as f64 };
            let pm = ProbMask::new(w, h, probs).unwrap();
            assert_eq!(stability_score(&pm, 0.9), expected);
        }
    }

    #[test]
    fn default_thresholds() {
        let set = MaskletSet::new(
            0,
            vec![masklet(0, 0.59, 0.9), masklet(1, 0.6, 0.8), masklet(2, 0.9, 0.79)],
        )
        .unwrap();
        let out = filter_masklets(&set, &FilterConfig::default());
        let ids: Vec<u64> = out.iter().map(|m| m.masklet_id()).collect();
        assert_eq!(ids, vec![1]);
    }

    #[test]
    fn dedup_drops_lower_scored_duplicate() {
        let big = BinaryMask::from_fn(4, 4, |i| i < 8);
        let near = BinaryMask::from_fn(4, 4, |i| i < 7);
        let other = BinaryMask::from_fn(4, 4, |i| i >= 12);
        let set = MaskletSet::new(
            0,
            vec![
                Masklet::new(near, 0, 0, 0.7, 0.9).unwrap(),
                Masklet::new(other, 0, 1, 0.8, 0.9).unwrap(),
                Masklet::new(big, 0, 2, 0.95, 0.9).unwrap(),
            ],
        )
        .unwrap();
        let cfg = FilterConfig {
            dedup_iou: Some(0.8),
            ..Default::default()
        };
        let ids: Vec<u64> = filter_masklets(&set, &cfg).iter().map(|m| m.masklet_id()).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        let bad = FilterConfig {
            pred_iou_thresh: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn arb_set() -> impl Strategy<Value = MaskletSet> {
        prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0usize..16, 1usize..6), 0..12).prop_map(|v| {
            let ms = v
                .into_iter()
                .enumerate()
                .map(|(i, (p, s, start, len))| {
                    let mask = BinaryMask::from_fn(4, 4, |k| k >= start && k < start + len);
                    Masklet::new(mask, 0, i as u64, p, s).unwrap()
                })
                .collect();
            MaskletSet::new(0, ms).unwrap()
        })
    }

    proptest! {
        #[test]
        fn matches_predicate_oracle(set in arb_set(), t in 0.0f64..=1.0, s in 0.0f64..=1.0) {
            let cfg = FilterConfig { pred_iou_thresh: t, stability_thresh: s, ..Default::default() };
            let got: Vec<u64> = filter_masklets(&set, &cfg).iter().map(|m| m.masklet_id()).collect();
            let want: Vec<u64> = set.iter()
                .filter(|m| m.pred_iou() >= t && m.stability() >= s)
                .map(|m| m.masklet_id()).collect();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn idempotent_and_monotone(set in arb_set(), t in 0.0f64..=1.0, dt in 0.0f64..=0.5, dedup in prop::option::of(0.0f64..=1.0)) {
            let cfg = FilterConfig { pred_iou_thresh: t, dedup_iou: dedup, ..Default::default() };
            let once = filter_masklets(&set, &cfg);
            prop_assert_eq!(&filter_masklets(&once, &cfg), &once);
            let stricter = FilterConfig { pred_iou_thresh: (t + dt).min(1.0), dedup_iou: None, ..cfg };
            let loose = FilterConfig { dedup_iou: None, ..cfg };
            prop_assert!(filter_masklets(&set, &stricter).len() <= filter_masklets(&set, &loose).len());
            let st = FilterConfig { stability_thresh: 0.9, dedup_iou: None, ..cfg };
            prop_assert!(filter_masklets(&set, &st).len() <= filter_masklets(&set, &loose).len());
        }
    }
}
