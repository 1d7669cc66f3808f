//! Environment features of a segment, computed from ground-truth boxes or
//! from pipeline outputs.
//!
//! Layout (version [`FEATURE_LAYOUT_VERSION`], [`FEATURE_DIM`] entries):
//!
//! | index    | content                                                                 |
//! |----------|-------------------------------------------------------------------------|
//! | 0..49    | per size bin (7 bins): speed p10/mean/p90, self-IoU p10/mean/p90, count |
//! | 49..52   | objects per frame p10/mean/p90                                          |
//! | 52..55   | track longevity (frames) p10/mean/p90                                   |
//! | 55..58   | ego speed (m/s) p10/mean/p90                                            |
//! | 58..61   | ego turn rate (rad/s) p10/mean/p90                                      |
//! | 61       | time of day (hour)                                                      |
//! | 62..69   | bin presence mask                                                       |

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbox::{iou, BBox};
use crate::error::{Error, Result};
use crate::pipesim::TimedOutput;
use crate::scenegen::{wrap_angle, EgoState, FrameSequence, Segment};

pub const FEATURE_LAYOUT_VERSION: u32 = 1;

/// Upper area bounds (px^2) of the finite size bins; the last bin is open.
pub const BIN_EDGES: [f64; 5] = [665.0, 1024.0, 1480.0, 2000.0, 2565.0];
pub const N_SIZE_BINS: usize = 6;
/// Size bins plus the ALL bin.
pub const N_BINS: usize = N_SIZE_BINS + 1;
pub const STATS_PER_BIN: usize = 7;
pub const N_EXTRA: usize = 13;
pub const FEATURE_DIM: usize = N_BINS * STATS_PER_BIN + N_EXTRA + N_BINS;

pub const BIN_LABELS: [&str; N_BINS] =
    ["0-665", "665-1024", "1024-1480", "1480-2000", "2000-2565", "2565-inf", "all"];

const MASK_OFFSET: usize = N_BINS * STATS_PER_BIN + N_EXTRA;

/// Size bin of a box area.
pub fn size_bin(area: f64) -> usize {
    BIN_EDGES.iter().position(|&e| area < e).unwrap_or(N_SIZE_BINS - 1)
}

pub fn feature_names() -> Vec<String> {
    let mut out = Vec::with_capacity(FEATURE_DIM);
    for b in BIN_LABELS {
        for stat in [
            "speed_p10", "speed_mean", "speed_p90", "self_iou_p10", "self_iou_mean", "self_iou_p90",
            "count_mean",
        ] {
            out.push(format!("bin_{b}_{stat}"));
        }
    }
    for group in ["num_objects", "longevity", "ego_speed", "ego_turn"] {
        for stat in ["p10", "mean", "p90"] {
            out.push(format!("{group}_{stat}"));
        }
    }
    out.push("time_of_day".into());
    for b in BIN_LABELS {
        out.push(format!("bin_{b}_present"));
    }
    out
}

/// Coarse feature group of every index, used to aggregate importances.
pub fn feature_group(index: usize) -> String {
    if index < N_BINS * STATS_PER_BIN {
        let bin = BIN_LABELS[index / STATS_PER_BIN];
        let kind = match index % STATS_PER_BIN {
            0..=2 => "speed",
            3..=5 => "self_iou",
            _ => "count",
        };
        format!("{kind}[{bin}]")
    } else if index < MASK_OFFSET {
        match (index - N_BINS * STATS_PER_BIN) / 3 {
            0 => "num_objects".into(),
            1 => "longevity".into(),
            2 => "ego_speed".into(),
            3 => "ego_turn".into(),
            _ => "time_of_day".into(),
        }
    } else {
        "bin_presence".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvFeatures {
    pub layout_version: u32,
    pub values: Vec<f64>,
}

impl EnvFeatures {
    pub fn zeros() -> Self {
        EnvFeatures { layout_version: FEATURE_LAYOUT_VERSION, values: vec![0.0; FEATURE_DIM] }
    }

    pub fn mask(&self) -> &[f64] {
        &self.values[MASK_OFFSET..]
    }

    pub fn check_layout(&self) -> Result<()> {
        if self.layout_version != FEATURE_LAYOUT_VERSION {
            return Err(Error::LayoutMismatch { expected: FEATURE_LAYOUT_VERSION, got: self.layout_version });
        }
        if self.values.len() != FEATURE_DIM {
            return Err(Error::WidthMismatch { expected: FEATURE_DIM, got: self.values.len() });
        }
        Ok(())
    }
}

/// Percentile with linear interpolation between order statistics; `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// (p10, mean, p90) of `xs`, or zeros when empty.
pub fn summarize(xs: &mut [f64]) -> [f64; 3] {
    if xs.is_empty() {
        return [0.0; 3];
    }
    xs.sort_by(f64::total_cmp);
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    [percentile(xs, 0.1), mean, percentile(xs, 0.9)]
}

/// Tracked boxes of the frames a source observed, in increasing frame order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackHistory {
    pub frames: Vec<(usize, Vec<(u64, BBox)>)>,
}

impl TrackHistory {
    /// Every ground-truth frame, including empty ones.
    pub fn from_ground_truth(frames: &FrameSequence) -> Self {
        TrackHistory { frames: frames.frames.iter().cloned().enumerate().collect() }
    }

    /// Processed frames of a pipeline run, in input-frame order.
    pub fn from_outputs(outputs: &[TimedOutput]) -> Self {
        let mut frames: Vec<(usize, Vec<(u64, BBox)>)> = outputs
            .iter()
            .map(|o| (o.input_frame, o.tracks.iter().map(|t| (t.id, t.bbox)).collect()))
            .collect();
        frames.sort_by_key(|(f, _)| *f);
        TrackHistory { frames }
    }
}

/// Scenario-level context needed next to the tracks.
#[derive(Debug, Clone, Copy)]
pub struct SceneContext<'a> {
    pub ego: &'a [EgoState],
    pub frame_rate: f64,
    pub time_of_day: f64,
}

/// Features of one segment.
pub fn extract(history: &TrackHistory, segment: &Segment, ctx: &SceneContext) -> EnvFeatures {
    extract_all(history, std::slice::from_ref(segment), ctx).pop().unwrap_or_else(EnvFeatures::zeros)
}

/// Features of several segments of the same run. Longevity counts frames
/// since an id's first appearance anywhere in the history.
pub fn extract_all(history: &TrackHistory, segments: &[Segment], ctx: &SceneContext) -> Vec<EnvFeatures> {
    let mut first_seen: HashMap<u64, usize> = HashMap::new();
    for (f, boxes) in &history.frames {
        for (id, _) in boxes {
            first_seen.entry(*id).or_insert(*f);
        }
    }
    segments
        .iter()
        .map(|seg| {
            let lo = history.frames.partition_point(|(f, _)| *f < seg.start);
            let hi = history.frames.partition_point(|(f, _)| *f < seg.end);
            extract_frames(&history.frames[lo..hi], seg, &first_seen, ctx)
        })
        .collect()
}

fn extract_frames(
    frames: &[(usize, Vec<(u64, BBox)>)],
    seg: &Segment,
    first_seen: &HashMap<u64, usize>,
    ctx: &SceneContext,
) -> EnvFeatures {
    if frames.len() < 2 {
        return EnvFeatures::zeros();
    }
    let mut speed: Vec<Vec<f64>> = vec![Vec::new(); N_BINS];
    let mut self_iou: Vec<Vec<f64>> = vec![Vec::new(); N_BINS];
    let mut counts = vec![0usize; N_BINS];
    let mut per_frame = Vec::with_capacity(frames.len());
    let mut longevity = Vec::new();

    for (k, (f, boxes)) in frames.iter().enumerate() {
        per_frame.push(boxes.len() as f64);
        for (id, b) in boxes {
            let bin = size_bin(b.area());
            counts[bin] += 1;
            counts[N_SIZE_BINS] += 1;
            longevity.push((f - first_seen.get(id).copied().unwrap_or(*f)) as f64);
        }
        if k == 0 {
            continue;
        }
        let (pf, prev) = &frames[k - 1];
        let gap = (f - pf) as f64;
        for (id, b) in boxes {
            let Some((_, pb)) = prev.iter().find(|(pid, _)| pid == id) else { continue };
            let v = b.center_distance(pb) / gap;
            let o = iou(b, pb);
            for bin in [size_bin(b.area()), N_SIZE_BINS] {
                speed[bin].push(v);
                self_iou[bin].push(o);
            }
        }
    }

    let mut values = vec![0.0; FEATURE_DIM];
    let n_frames = frames.len() as f64;
    for bin in 0..N_BINS {
        let base = bin * STATS_PER_BIN;
        values[base..base + 3].copy_from_slice(&summarize(&mut speed[bin]));
        values[base + 3..base + 6].copy_from_slice(&summarize(&mut self_iou[bin]));
        values[base + 6] = counts[bin] as f64 / n_frames;
        values[MASK_OFFSET + bin] = if counts[bin] > 0 { 1.0 } else { 0.0 };
    }

    let mut ego_speed: Vec<f64> = (seg.start..seg.end)
        .filter_map(|f| ctx.ego.get(f).map(|e| e.speed))
        .collect();
    let mut ego_turn: Vec<f64> = (seg.start.max(1)..seg.end)
        .filter_map(|f| {
            let (a, b) = (ctx.ego.get(f - 1)?, ctx.ego.get(f)?);
            Some(wrap_angle(b.heading - a.heading).abs() * ctx.frame_rate)
        })
        .collect();
    let e = N_BINS * STATS_PER_BIN;
    values[e..e + 3].copy_from_slice(&summarize(&mut per_frame));
    values[e + 3..e + 6].copy_from_slice(&summarize(&mut longevity));
    values[e + 6..e + 9].copy_from_slice(&summarize(&mut ego_speed));
    values[e + 9..e + 12].copy_from_slice(&summarize(&mut ego_turn));
    values[e + 12] = ctx.time_of_day;

    EnvFeatures { layout_version: FEATURE_LAYOUT_VERSION, values }
}

/// Where the features of a policy's decision come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Ground truth of the segment being decided (an oracle).
    GtCurrent,
    /// Ground truth of the previous segment.
    GtPrevious,
    /// Outputs of the configuration chosen for the previous segment.
    ClosedLoop,
}

impl EvalMode {
    pub const ALL: [EvalMode; 3] = [EvalMode::GtCurrent, EvalMode::GtPrevious, EvalMode::ClosedLoop];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::GtCurrent => "gt-current",
            EvalMode::GtPrevious => "gt-previous",
            EvalMode::ClosedLoop => "closed-loop",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown evaluation mode {s:?}")))
    }
}

/// Writes a feature matrix with a `scenario,tau,<feature names>` header.
pub fn write_features_csv(path: &Path, rows: &[(String, usize, &EnvFeatures)]) -> Result<()> {
    let mut header = vec!["scenario".to_string(), "tau".to_string()];
    header.extend(feature_names());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(s, tau, f)| {
            let mut r = vec![s.clone(), tau.to_string()];
            r.extend(f.values.iter().map(|v| format!("{v}")));
            r
        })
        .collect();
    crate::io::write_csv(path, &header, &body)
}
