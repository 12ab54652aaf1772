//! Majority-vote refinement: every masklet region of a semantic prediction
//! is overwritten with the class most frequent inside it.
//!
//! Overlaps are resolved by painting order (later writes win). Pixels whose
//! original label is the ignore label never vote and are never overwritten.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, LabelMap, Masklet, MaskletSet};
use crate::tracker::{track_index, MaskletTrack};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteScope {
    /// Majority over the masklet's own frame.
    #[default]
    PerFrame,
    /// Majority pooled over every member of the masklet's track.
    PerTrack,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapOrder {
    /// Largest masklets painted first, so smaller ones win overlaps.
    #[default]
    AreaDesc,
    /// Lowest predicted IoU painted first, so the most confident wins.
    PredIouAsc,
}

impl std::str::FromStr for VoteScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_frame" => Ok(Self::PerFrame),
            "per_track" => Ok(Self::PerTrack),
            other => Err(Error::Config(format!("unknown vote scope {other:?}"))),
        }
    }
}

impl std::str::FromStr for OverlapOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "area_desc" => Ok(Self::AreaDesc),
            "pred_iou_asc" => Ok(Self::PredIouAsc),
            other => Err(Error::Config(format!("unknown overlap order {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub vote_scope: VoteScope,
    pub overlap_order: OverlapOrder,
    pub min_vote_fraction: f64,
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_vote_fraction) {
            return Err(Error::Config(format!(
                "min_vote_fraction {} outside [0, 1]",
                self.min_vote_fraction
            )));
        }
        Ok(())
    }
}

/// Outcome of a majority vote.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vote {
    pub class: u8,
    /// Winner count over voting (non-ignore) pixels; 0 when nothing voted.
    pub fraction: f64,
}

/// Per-class pixel counts of `s` under the mask, ignore label excluded.
pub fn class_histogram(m: &BinaryMask, s: &LabelMap) -> Box<[u64; 256]> {
    let mut hist = Box::new([0u64; 256]);
    let labels = s.labels();
    for run in m.fg_runs() {
        for &l in &labels[run] {
            hist[l as usize] += 1;
        }
    }
    hist[s.ignore_label() as usize] = 0;
    hist
}

/// Argmax of a histogram; ties go to the smallest class id.
pub fn vote_from_histogram(hist: &[u64; 256], ignore_label: u8) -> Vote {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Vote {
            class: ignore_label,
            fraction: 0.0,
        };
    }
    let mut best = 0usize;
    for c in 1..256 {
        if hist[c] > hist[best] {
            best = c;
        }
    }
    Vote {
        class: best as u8,
        fraction: hist[best] as f64 / total as f64,
    }
}

/// Most frequent class of `s` inside the mask.
pub fn predominant_class(m: &BinaryMask, s: &LabelMap) -> Result<Vote> {
    s.check_same_dims(m.dims())?;
    if m.is_empty() {
        return Err(Error::Validation("predominant class of an empty mask".into()));
    }
    Ok(vote_from_histogram(&class_histogram(m, s), s.ignore_label()))
}

/// Track-level votes plus the masklet-to-track membership they apply to.
#[derive(Clone, Debug, Default)]
pub struct TrackVotes {
    pub classes: HashMap<u64, Vote>,
    pub membership: HashMap<u64, u64>,
}

impl TrackVotes {
    pub fn for_masklet(&self, masklet_id: u64) -> Option<Vote> {
        self.membership
            .get(&masklet_id)
            .and_then(|t| self.classes.get(t))
            .copied()
    }
}

/// Painting order for the masklets of one frame.
pub fn paint_order(masklets: &[&Masklet], order: OverlapOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..masklets.len()).collect();
    match order {
        OverlapOrder::AreaDesc => idx.sort_by(|&a, &b| masklets[b].area().cmp(&masklets[a].area())),
        OverlapOrder::PredIouAsc => idx.sort_by(|&a, &b| masklets[a].pred_iou().total_cmp(&masklets[b].pred_iou())),
    }
    idx
}

/// Paint `class` over the mask, skipping pixels that are ignore in `guard`.
pub(crate) fn paint(out: &mut [u8], m: &BinaryMask, class: u8, guard: &[u8], ignore: u8) {
    for run in m.fg_runs() {
        for (o, &g) in out[run.clone()].iter_mut().zip(&guard[run]) {
            if g != ignore {
                *o = class;
            }
        }
    }
}

/// Refine one frame. With `VoteScope::PerTrack`, masklets found in
/// `track_votes` use their track's vote; all others vote on their own frame.
pub fn refine_frame(
    s: &LabelMap,
    masklets: &MaskletSet,
    cfg: &RefineConfig,
    track_votes: Option<&TrackVotes>,
) -> Result<LabelMap> {
    let ms: Vec<&Masklet> = masklets.iter().collect();
    for m in &ms {
        s.check_same_dims(m.mask().dims())?;
    }
    let ignore = s.ignore_label();
    let mut out = s.clone();
    for i in paint_order(&ms, cfg.overlap_order) {
        let m = ms[i];
        if m.area() == 0 {
            continue;
        }
        let track_vote = match (cfg.vote_scope, track_votes) {
            (VoteScope::PerTrack, Some(tv)) => tv.for_masklet(m.masklet_id()),
            _ => None,
        };
        let vote = match track_vote {
            Some(v) => v,
            None => predominant_class(m.mask(), s)?,
        };
        if vote.fraction == 0.0 || vote.fraction < cfg.min_vote_fraction {
            continue;
        }
        paint(out.labels_mut(), m.mask(), vote.class, s.labels(), ignore);
    }
    Ok(out)
}

/// Pool per-class counts of every member masklet into one vote per track.
pub fn track_votes(s_frames: &[LabelMap], masklets: &[MaskletSet], tracks: &[MaskletTrack]) -> Result<TrackVotes> {
    let membership = track_index(tracks);
    let mut pooled: HashMap<u64, Box<[u64; 256]>> = HashMap::new();
    let mut ignore = crate::mask::DEFAULT_IGNORE_LABEL;
    for set in masklets {
        let s = s_frames
            .get(set.frame_index())
            .ok_or_else(|| Error::Validation(format!("masklets on frame {} beyond clip length", set.frame_index())))?;
        ignore = s.ignore_label();
        for m in set {
            let Some(&t) = membership.get(&m.masklet_id()) else {
                continue;
            };
            s.check_same_dims(m.mask().dims())?;
            let hist = class_histogram(m.mask(), s);
            let acc = pooled.entry(t).or_insert_with(|| Box::new([0u64; 256]));
            for (a, h) in acc.iter_mut().zip(hist.iter()) {
                *a += h;
            }
        }
    }
    let classes = pooled
        .into_iter()
        .map(|(t, h)| (t, vote_from_histogram(&h, ignore)))
        .collect();
    Ok(TrackVotes { classes, membership })
}

/// Refine every frame of a clip. `masklets[i]` must belong to frame `i`.
pub fn refine_clip(
    s_frames: &[LabelMap],
    masklets: &[MaskletSet],
    tracks: &[MaskletTrack],
    cfg: &RefineConfig,
) -> Result<Vec<LabelMap>> {
    if masklets.len() != s_frames.len() {
        return Err(Error::Validation(format!(
            "{} masklet sets for {} frames",
            masklets.len(),
            s_frames.len()
        )));
    }
    let votes = match cfg.vote_scope {
        VoteScope::PerTrack => Some(track_votes(s_frames, masklets, tracks)?),
        VoteScope::PerFrame => None,
    };
    s_frames
        .par_iter()
        .zip(masklets.par_iter())
        .map(|(s, set)| refine_frame(s, set, cfg, votes.as_ref()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::rle_decode;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn map(w: usize, h: usize, labels: &[u8]) -> LabelMap {
        LabelMap::new(w, h, labels.to_vec(), 255).unwrap()
    }

    #[test]
    fn majority_examples() {
        let s = map(3, 1, &[2, 2, 5]);
        let m = BinaryMask::from_fn(3, 1, |_| true);
        let v = predominant_class(&m, &s).unwrap();
        assert_eq!(v.class, 2);
        assert!((v.fraction - 2.0 / 3.0).abs() < 1e-15);

        let s = map(4, 1, &[3, 1, 3, 1]);
        let m = BinaryMask::from_fn(4, 1, |_| true);
        let v = predominant_class(&m, &s).unwrap();
        assert_eq!((v.class, v.fraction), (1, 0.5));
    }

    #[test]
    fn majority_ignores_ignore_label() {
        let s = map(4, 1, &[255, 255, 255, 7]);
        let v = predominant_class(&BinaryMask::from_fn(4, 1, |_| true), &s).unwrap();
        assert_eq!((v.class, v.fraction), (7, 1.0));
        let s = map(2, 1, &[255, 255]);
        let v = predominant_class(&BinaryMask::from_fn(2, 1, |_| true), &s).unwrap();
        assert_eq!((v.class, v.fraction), (255, 0.0));
        assert!(predominant_class(&BinaryMask::empty(2, 1), &s).is_err());
    }

    #[test]
    fn empty_set_is_identity() {
        let s = map(2, 2, &[1, 2, 3, 4]);
        let out = refine_frame(&s, &MaskletSet::empty(0), &RefineConfig::default(), None).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn ignore_pixels_survive() {
        let s = map(3, 1, &[1, 1, 255]);
        let m = Masklet::new(BinaryMask::from_fn(3, 1, |_| true), 0, 0, 1.0, 1.0).unwrap();
        let out = refine_frame(
            &s,
            &MaskletSet::new(0, vec![m]).unwrap(),
            &RefineConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(out.labels(), &[1, 1, 255]);
    }

    #[test]
    fn min_vote_fraction_skips_weak_majorities() {
        let s = map(4, 1, &[1, 1, 2, 3]);
        let m = Masklet::new(BinaryMask::from_fn(4, 1, |_| true), 0, 0, 1.0, 1.0).unwrap();
        let set = MaskletSet::new(0, vec![m]).unwrap();
        let cfg = RefineConfig {
            min_vote_fraction: 0.6,
            ..Default::default()
        };
        assert_eq!(refine_frame(&s, &set, &cfg, None).unwrap(), s);
        let cfg = RefineConfig {
            min_vote_fraction: 0.5,
            ..Default::default()
        };
        assert_eq!(refine_frame(&s, &set, &cfg, None).unwrap().labels(), &[1, 1, 1, 1]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let s = map(2, 2, &[0; 4]);
        let m = Masklet::new(BinaryMask::from_fn(3, 1, |_| true), 0, 0, 1.0, 1.0).unwrap();
        let set = MaskletSet::new(0, vec![m]).unwrap();
        assert!(refine_frame(&s, &set, &RefineConfig::default(), None).is_err());
    }

    #[test]
    fn per_track_pools_votes() {
        // object region = left half of 4x2; majorities per frame: 7,7,7,2
        let per_frame: [[u8; 4]; 4] = [[7, 7, 7, 2], [7, 7, 7, 2], [7, 7, 2, 7], [2, 2, 2, 7]];
        let mut s_frames = Vec::new();
        let mut sets = Vec::new();
        for (f, obj) in per_frame.iter().enumerate() {
            let labels = vec![obj[0], obj[1], 0, 0, obj[2], obj[3], 0, 0];
            s_frames.push(map(4, 2, &labels));
            let mask = BinaryMask::from_fn(4, 2, |i| i % 4 < 2);
            sets.push(MaskletSet::new(f, vec![Masklet::new(mask, f, f as u64, 1.0, 1.0).unwrap()]).unwrap());
        }
        let tracks = vec![MaskletTrack {
            track_id: 0,
            members: (0..4).map(|f| (f, f as u64)).collect(),
        }];
        let cfg = RefineConfig {
            vote_scope: VoteScope::PerTrack,
            ..Default::default()
        };
        let out = refine_clip(&s_frames, &sets, &tracks, &cfg).unwrap();
        for r in &out {
            assert_eq!(r.labels(), &[7, 7, 0, 0, 7, 7, 0, 0]);
        }
        let per_frame_out = refine_clip(&s_frames, &sets, &tracks, &RefineConfig::default()).unwrap();
        assert_eq!(per_frame_out[3].labels(), &[2, 2, 0, 0, 2, 2, 0, 0]);
    }

    #[test]
    fn single_frame_clip_matches_refine_frame() {
        let s = map(3, 2, &[1, 1, 2, 2, 2, 3]);
        let m = Masklet::new(BinaryMask::from_fn(3, 2, |i| i > 1), 0, 9, 0.7, 0.9).unwrap();
        let set = MaskletSet::new(0, vec![m]).unwrap();
        let tracks = vec![MaskletTrack {
            track_id: 0,
            members: vec![(0, 9)],
        }];
        for scope in [VoteScope::PerFrame, VoteScope::PerTrack] {
            let cfg = RefineConfig {
                vote_scope: scope,
                ..Default::default()
            };
            let clip = refine_clip(std::slice::from_ref(&s), std::slice::from_ref(&set), &tracks, &cfg).unwrap();
            assert_eq!(clip[0], refine_frame(&s, &set, &RefineConfig::default(), None).unwrap());
        }
    }

    /// Explicit sequential painting straight from the dense masks.
    fn oracle(s: &LabelMap, ms: &[Masklet], order: OverlapOrder) -> Vec<u8> {
        let mut idx: Vec<usize> = (0..ms.len()).collect();
        // insertion sort keeps ties in input order
        for i in 1..idx.len() {
            let mut j = i;
            while j > 0 {
                let (a, b) = (&ms[idx[j - 1]], &ms[idx[j]]);
                let swap = match order {
                    OverlapOrder::AreaDesc => a.area() < b.area(),
                    OverlapOrder::PredIouAsc => a.pred_iou() > b.pred_iou(),
                };
                if !swap {
                    break;
                }
                idx.swap(j - 1, j);
                j -= 1;
            }
        }
        let mut out = s.labels().to_vec();
        for i in idx {
            let dense = rle_decode(ms[i].mask()).unwrap();
            let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
            for (p, &inside) in dense.iter().enumerate() {
                if inside && s.labels()[p] != 255 {
                    *counts.entry(s.labels()[p]).or_default() += 1;
                }
            }
            let Some(best) = counts.iter().map(|(&c, &n)| (n, std::cmp::Reverse(c))).max() else {
                continue;
            };
            for (p, &inside) in dense.iter().enumerate() {
                if inside && s.labels()[p] != 255 {
                    out[p] = best.1 .0;
                }
            }
        }
        out
    }

    fn instance() -> impl Strategy<Value = (LabelMap, Vec<Masklet>)> {
        (1usize..7, 1usize..7).prop_flat_map(|(w, h)| {
            let labels = prop::collection::vec(prop_oneof![9 => 0u8..4, 1 => Just(255u8)], w * h);
            let masks = prop::collection::vec((prop::collection::vec(any::<bool>(), w * h), 0.0f64..=1.0), 0..5);
            (labels, masks).prop_map(move |(labels, masks)| {
                let s = LabelMap::new(w, h, labels, 255).unwrap();
                let ms = masks
                    .into_iter()
                    .enumerate()
                    .map(|(i, (d, p))| {
                        let mask = crate::mask::rle_encode(&d, w, h).unwrap();
                        Masklet::new(mask, 0, i as u64, p, 1.0).unwrap()
                    })
                    .collect();
                (s, ms)
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matches_sequential_paint_oracle((s, ms) in instance(), by_iou in any::<bool>()) {
            let order = if by_iou { OverlapOrder::PredIouAsc } else { OverlapOrder::AreaDesc };
            let cfg = RefineConfig { overlap_order: order, ..Default::default() };
            let set = MaskletSet::new(0, ms.clone()).unwrap();
            let got = refine_frame(&s, &set, &cfg, None).unwrap();
            prop_assert_eq!(got.labels(), &oracle(&s, &ms, order)[..]);

            // pixels outside every masklet are untouched
            let covered: Vec<bool> = (0..s.len())
                .map(|p| ms.iter().any(|m| m.mask().fg_indices().any(|q| q == p)))
                .collect();
            for p in 0..s.len() {
                if !covered[p] {
                    prop_assert_eq!(got.labels()[p], s.labels()[p]);
                }
            }
        }

        #[test]
        fn idempotent_without_overlap((s, ms) in instance()) {
            // carve the masks into disjoint pieces
            let mut taken = vec![false; s.len()];
            let disjoint: Vec<Masklet> = ms.iter().filter_map(|m| {
                let mine: Vec<bool> = (0..s.len()).map(|p| !taken[p] && m.mask().fg_indices().any(|q| q == p)).collect();
                for (t, &b) in taken.iter_mut().zip(&mine) { *t |= b; }
                let mask = crate::mask::rle_encode(&mine, s.width(), s.height()).unwrap();
                (mask.area() > 0).then(|| Masklet::new(mask, 0, m.masklet_id(), m.pred_iou(), 1.0).unwrap())
            }).collect();
            let set = MaskletSet::new(0, disjoint).unwrap();
            let cfg = RefineConfig::default();
            let r = refine_frame(&s, &set, &cfg, None).unwrap();
            prop_assert_eq!(&refine_frame(&r, &set, &cfg, None).unwrap(), &r);
        }

        #[test]
        fn uniform_map_unchanged((s, ms) in instance(), c in 0u8..4) {
            let u = LabelMap::filled(s.width(), s.height(), c, 255);
            let set = MaskletSet::new(0, ms).unwrap();
            prop_assert_eq!(&refine_frame(&u, &set, &RefineConfig::default(), None).unwrap(), &u);
        }

        #[test]
        fn vote_is_permutation_invariant(labels in prop::collection::vec(0u8..6, 1..40), seed in any::<u64>()) {
            let n = labels.len();
            let mut shuffled = labels.clone();
            let mut x = seed | 1;
            for i in (1..n).rev() {
                x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                shuffled.swap(i, (x % (i as u64 + 1)) as usize);
            }
            let full = BinaryMask::from_fn(n, 1, |_| true);
            let a = predominant_class(&full, &LabelMap::new(n, 1, labels, 255).unwrap()).unwrap();
            let b = predominant_class(&full, &LabelMap::new(n, 1, shuffled, 255).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
