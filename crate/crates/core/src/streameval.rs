//! Offline and streaming CLEAR-MOT evaluation per segment.
//!
//! Offline scoring pairs every output with the ground truth of its own input
//! frame. Streaming scoring pairs it with the first ground-truth frame at or
//! after the moment the output became available; ground-truth frames that no
//! output reaches are scored against an empty prediction set.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bbox::{iou, BBox};
use crate::pipesim::{hungarian, paired_frame, TimedOutput, TrackBox};
use crate::scenegen::{FrameSequence, Segment};

/// Minimum IoU for a prediction to count as a true positive.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    Offline,
    Streaming,
}

/// One evaluated ground-truth frame and the output scored against it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pairing {
    pub gt_frame: usize,
    /// Index into the outputs slice; `None` means an empty prediction set.
    pub output: Option<usize>,
}

/// Pairs outputs with ground-truth frames. Offline yields one pairing per
/// output; streaming yields one pairing per ground-truth frame, keeping the
/// freshest output when several land on the same frame.
pub fn align(outputs: &[TimedOutput], frames: &FrameSequence, mode: AlignMode) -> Vec<Pairing> {
    match mode {
        AlignMode::Offline => outputs
            .iter()
            .enumerate()
            .map(|(i, o)| Pairing { gt_frame: o.input_frame, output: Some(i) })
            .collect(),
        AlignMode::Streaming => {
            let n = frames.len();
            let mut best: Vec<Option<usize>> = vec![None; n];
            for (i, o) in outputs.iter().enumerate() {
                let g = paired_frame(o.available_at, frames.frame_rate, n);
                let fresher = best[g].is_none_or(|j| outputs[j].input_frame < o.input_frame);
                if fresher {
                    best[g] = Some(i);
                }
            }
            best.into_iter()
                .enumerate()
                .map(|(gt_frame, output)| Pairing { gt_frame, output })
                .collect()
        }
    }
}

/// CLEAR-MOT counts and the derived percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MotStats {
    pub gt_count: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub idsw: usize,
    pub matches: usize,
    pub matched_iou_sum: f64,
    /// Percent; 0 when undefined.
    pub mota: f64,
    /// Percent; 0 when there are no matches.
    pub motp: f64,
    /// False when no ground-truth box was evaluated.
    pub defined: bool,
}

/// Frame-by-frame CLEAR-MOT accumulator.
#[derive(Debug, Clone)]
pub struct MotAccumulator {
    threshold: f64,
    last_match: HashMap<u64, u64>,
    gt_count: usize,
    fp: usize,
    fn_: usize,
    idsw: usize,
    matches: usize,
    iou_sum: f64,
}

impl MotAccumulator {
    pub fn new(iou_threshold: f64) -> Self {
        assert!(iou_threshold > 0.0 && iou_threshold < 1.0, "IoU threshold must be in (0, 1)");
        MotAccumulator {
            threshold: iou_threshold,
            last_match: HashMap::new(),
            gt_count: 0,
            fp: 0,
            fn_: 0,
            idsw: 0,
            matches: 0,
            iou_sum: 0.0,
        }
    }

    /// Scores one frame. Correspondences from earlier frames are kept when
    /// still above threshold; the rest are assigned by Hungarian on 1 - IoU.
    pub fn update(&mut self, gt: &[(u64, BBox)], preds: &[TrackBox]) {
        self.gt_count += gt.len();
        let mut gt_used = vec![false; gt.len()];
        let mut pred_used = vec![false; preds.len()];
        let mut matched = 0usize;

        for (gi, (gid, gb)) in gt.iter().enumerate() {
            let Some(&tid) = self.last_match.get(gid) else { continue };
            let Some(pi) = preds.iter().position(|p| p.id == tid) else { continue };
            if pred_used[pi] {
                continue;
            }
            let v = iou(gb, &preds[pi].bbox);
            if v >= self.threshold {
                gt_used[gi] = true;
                pred_used[pi] = true;
                matched += 1;
                self.iou_sum += v;
            }
        }

        let gi_free: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
        let pi_free: Vec<usize> = (0..preds.len()).filter(|&i| !pred_used[i]).collect();
        if !gi_free.is_empty() && !pi_free.is_empty() {
            let ious: Vec<Vec<f64>> = gi_free
                .iter()
                .map(|&g| pi_free.iter().map(|&p| iou(&gt[g].1, &preds[p].bbox)).collect())
                .collect();
            let cost: Vec<Vec<f64>> =
                ious.iter().map(|r| r.iter().map(|v| 1.0 - v).collect()).collect();
            for (r, c) in hungarian(&cost).pairs() {
                let v = ious[r][c];
                if v < self.threshold {
                    continue;
                }
                let (gid, _) = gt[gi_free[r]];
                let tid = preds[pi_free[c]].id;
                if self.last_match.get(&gid).is_some_and(|&prev| prev != tid) {
                    self.idsw += 1;
                }
                self.last_match.insert(gid, tid);
                gt_used[gi_free[r]] = true;
                pred_used[pi_free[c]] = true;
                matched += 1;
                self.iou_sum += v;
            }
        }

        self.matches += matched;
        self.fn_ += gt.len() - matched;
        self.fp += preds.len() - matched;
    }

    pub fn finish(&self) -> MotStats {
        let defined = self.gt_count > 0;
        let mota = if defined {
            100.0 * (1.0 - (self.fp + self.fn_ + self.idsw) as f64 / self.gt_count as f64)
        } else {
            0.0
        };
        let motp = if self.matches > 0 { 100.0 * self.iou_sum / self.matches as f64 } else { 0.0 };
        MotStats {
            gt_count: self.gt_count,
            fp: self.fp,
            fn_: self.fn_,
            idsw: self.idsw,
            matches: self.matches,
            matched_iou_sum: self.iou_sum,
            mota,
            motp,
            defined,
        }
    }
}

/// CLEAR-MOT over a sequence of pairings.
pub fn clearmot(
    pairings: &[Pairing],
    outputs: &[TimedOutput],
    frames: &FrameSequence,
    iou_threshold: f64,
) -> MotStats {
    let mut acc = MotAccumulator::new(iou_threshold);
    for p in pairings {
        let preds = p.output.map_or(&[][..], |i| outputs[i].tracks.as_slice());
        acc.update(&frames.frames[p.gt_frame], preds);
    }
    acc.finish()
}

/// Offline and streaming stats of one configuration on one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub scenario: String,
    pub tau: usize,
    pub config_index: usize,
    pub offline: MotStats,
    pub streaming: MotStats,
    /// Degradation: offline MOTA minus streaming MOTA.
    pub d: f64,
}

impl SegmentScore {
    /// A segment is defined when it contains at least one ground-truth box.
    pub fn defined(&self) -> bool {
        self.streaming.defined
    }

    pub fn record(&self) -> SegmentRecord {
        SegmentRecord {
            scenario: self.scenario.clone(),
            tau: self.tau,
            config_index: self.config_index,
            mota: self.offline.mota,
            smota: self.streaming.mota,
            d: self.d,
            fp: self.offline.fp,
            fn_: self.offline.fn_,
            idsw: self.offline.idsw,
            s_fp: self.streaming.fp,
            s_fn: self.streaming.fn_,
            s_idsw: self.streaming.idsw,
            motp: self.offline.motp,
            s_motp: self.streaming.motp,
            gt: self.offline.gt_count,
            s_gt: self.streaming.gt_count,
            s_matches: self.streaming.matches,
            defined: self.defined(),
        }
    }
}

/// Flat per-(segment, configuration) row as persisted in the dataset JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub scenario: String,
    pub tau: usize,
    pub config_index: usize,
    pub mota: f64,
    pub smota: f64,
    pub d: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub idsw: usize,
    pub s_fp: usize,
    pub s_fn: usize,
    pub s_idsw: usize,
    pub motp: f64,
    pub s_motp: f64,
    pub gt: usize,
    pub s_gt: usize,
    pub s_matches: usize,
    pub defined: bool,
}

/// Scores one segment. Offline pairings are selected by input frame,
/// streaming pairings by the ground-truth frame they were paired with.
pub fn score_segment(
    segment: &Segment,
    outputs: &[TimedOutput],
    frames: &FrameSequence,
    config_index: usize,
    iou_threshold: f64,
) -> SegmentScore {
    let offline = align(outputs, frames, AlignMode::Offline);
    let streaming = align(outputs, frames, AlignMode::Streaming);
    score_aligned(segment, &offline, &streaming, outputs, frames, config_index, iou_threshold)
}

/// Scores every segment of one pipeline run, aligning only once.
pub fn score_run(
    segments: &[Segment],
    outputs: &[TimedOutput],
    frames: &FrameSequence,
    config_index: usize,
    iou_threshold: f64,
) -> Vec<SegmentScore> {
    let offline = align(outputs, frames, AlignMode::Offline);
    let streaming = align(outputs, frames, AlignMode::Streaming);
    segments
        .iter()
        .map(|s| score_aligned(s, &offline, &streaming, outputs, frames, config_index, iou_threshold))
        .collect()
}

fn score_aligned(
    segment: &Segment,
    offline: &[Pairing],
    streaming: &[Pairing],
    outputs: &[TimedOutput],
    frames: &FrameSequence,
    config_index: usize,
    iou_threshold: f64,
) -> SegmentScore {
    let pick = |ps: &[Pairing]| -> Vec<Pairing> {
        ps.iter().copied().filter(|p| segment.contains(p.gt_frame)).collect()
    };
    let off = clearmot(&pick(offline), outputs, frames, iou_threshold);
    let on = clearmot(&pick(streaming), outputs, frames, iou_threshold);
    SegmentScore {
        scenario: segment.scenario_id.clone(),
        tau: segment.index,
        config_index,
        offline: off,
        streaming: on,
        d: off.mota - on.mota,
    }
}
