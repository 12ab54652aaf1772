//! Identity linking of masklets inside fixed temporal windows.
//!
//! Windows are aligned to multiples of `window_size`: window `w` covers
//! frames `[w * window_size, (w + 1) * window_size)`. Identities restart at
//! every window boundary unless [`stitch_windows`] is applied afterwards.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{mask_iou, Masklet, MaskletSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub window_size: usize,
    pub match_iou_thresh: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            window_size: 32,
            match_iou_thresh: 0.5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 {
            return Err(Error::Config("window_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.match_iou_thresh) {
            return Err(Error::Config(format!(
                "match_iou_thresh {} outside [0, 1]",
                self.match_iou_thresh
            )));
        }
        Ok(())
    }

    fn window_of(&self, frame: usize) -> usize {
        frame / self.window_size
    }
}

/// Masklets sharing one identity, at most one per frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskletTrack {
    pub track_id: u64,
    /// `(frame_index, masklet_id)` in ascending frame order.
    pub members: Vec<(usize, u64)>,
}

impl MaskletTrack {
    pub fn first_frame(&self) -> usize {
        self.members.first().map(|m| m.0).unwrap_or(0)
    }

    pub fn last_frame(&self) -> usize {
        self.members.last().map(|m| m.0).unwrap_or(0)
    }

    pub fn span(&self) -> (usize, usize) {
        (self.first_frame(), self.last_frame())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Greedy one-to-one matching: highest IoU first, ties by ids ascending.
/// Returns `(left index, right index)` pairs.
fn greedy_match(left: &[&Masklet], right: &[&Masklet], thresh: f64) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    for (i, a) in left.iter().enumerate() {
        for (j, b) in right.iter().enumerate() {
            let iou = mask_iou(a.mask(), b.mask()).unwrap_or(0.0);
            // zero-overlap pairs never link, even at threshold 0
            if iou > 0.0 && iou >= thresh {
                cands.push((iou, a.masklet_id(), b.masklet_id(), i, j));
            }
        }
    }
    cands.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut used_l = vec![false; left.len()];
    let mut used_r = vec![false; right.len()];
    let mut out = Vec::new();
    for (_, _, _, i, j) in cands {
        if !used_l[i] && !used_r[j] {
            used_l[i] = true;
            used_r[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Link masklets on adjacent frames of the same window into tracks.
/// Track ids are assigned in creation order starting at 0.
pub fn build_tracks(frames: &[MaskletSet], cfg: &TrackerConfig) -> Vec<MaskletTrack> {
    let mut tracks: Vec<MaskletTrack> = Vec::new();
    // (track index, masklet) for tracks whose last member is on the previous set
    let mut active: Vec<(usize, &Masklet)> = Vec::new();
    let mut prev_frame: Option<usize> = None;

    for set in frames {
        let f = set.frame_index();
        let linkable = prev_frame.is_some_and(|p| p + 1 == f && cfg.window_of(p) == cfg.window_of(f));
        if !linkable {
            active.clear();
        }
        let current: Vec<&Masklet> = set.iter().collect();
        let left: Vec<&Masklet> = active.iter().map(|a| a.1).collect();
        let mut assigned: Vec<Option<usize>> = vec![None; current.len()];
        for (i, j) in greedy_match(&left, &current, cfg.match_iou_thresh) {
            assigned[j] = Some(active[i].0);
        }
        let mut next_active = Vec::with_capacity(current.len());
        for (j, m) in current.iter().enumerate() {
            let t = match assigned[j] {
                Some(t) => t,
                None => {
                    tracks.push(MaskletTrack {
                        track_id: tracks.len() as u64,
                        members: Vec::new(),
                    });
                    tracks.len() - 1
                }
            };
            tracks[t].members.push((f, m.masklet_id()));
            next_active.push((t, *m));
        }
        active = next_active;
        prev_frame = Some(f);
    }
    tracks
}

/// Merge tracks across window boundaries by matching the masks on the
/// last frame of one window against the first frame of the next. The
/// merged track keeps the earlier id. Output is ordered by track id.
pub fn stitch_windows(tracks: &[MaskletTrack], frames: &[MaskletSet], cfg: &TrackerConfig) -> Vec<MaskletTrack> {
    let lookup: HashMap<(usize, u64), &Masklet> = frames
        .iter()
        .flat_map(|s| s.iter().map(|m| ((m.frame_index(), m.masklet_id()), m)))
        .collect();
    let mut slots: Vec<Option<MaskletTrack>> = tracks.iter().cloned().map(Some).collect();
    slots.sort_by_key(|t| t.as_ref().map(|t| t.track_id));
    let last = tracks.iter().map(|t| t.last_frame()).max().unwrap_or(0);

    let mut boundary = cfg.window_size;
    while boundary <= last {
        let ending: Vec<usize> = (0..slots.len())
            .filter(|&i| {
                slots[i]
                    .as_ref()
                    .is_some_and(|t| !t.is_empty() && t.last_frame() + 1 == boundary)
            })
            .collect();
        let starting: Vec<usize> = (0..slots.len())
            .filter(|&i| {
                slots[i]
                    .as_ref()
                    .is_some_and(|t| !t.is_empty() && t.first_frame() == boundary)
            })
            .collect();
        let tail = |i: usize| {
            let t = slots[i].as_ref().unwrap();
            lookup.get(t.members.last().unwrap()).copied()
        };
        let head = |i: usize| {
            let t = slots[i].as_ref().unwrap();
            lookup.get(&t.members[0]).copied()
        };
        let ends: Vec<(usize, &Masklet)> = ending.iter().filter_map(|&i| tail(i).map(|m| (i, m))).collect();
        let starts: Vec<(usize, &Masklet)> = starting.iter().filter_map(|&i| head(i).map(|m| (i, m))).collect();
        let left: Vec<&Masklet> = ends.iter().map(|e| e.1).collect();
        let right: Vec<&Masklet> = starts.iter().map(|s| s.1).collect();
        for (i, j) in greedy_match(&left, &right, cfg.match_iou_thresh) {
            let (a, b) = (ends[i].0, starts[j].0);
            let later = slots[b].take().unwrap();
            slots[a].as_mut().unwrap().members.extend(later.members);
        }
        boundary += cfg.window_size;
    }
    let mut out: Vec<MaskletTrack> = slots.into_iter().flatten().collect();
    out.sort_by_key(|t| t.track_id);
    out
}

/// Map every `masklet_id` to the id of the track containing it.
pub fn track_index(tracks: &[MaskletTrack]) -> HashMap<u64, u64> {
    tracks
        .iter()
        .flat_map(|t| t.members.iter().map(move |&(_, m)| (m, t.track_id)))
        .collect()
}
