use std::path::Path;

use serde::{Deserialize, Serialize};

use super::detector::Detector;
use super::profile::DetectorProfile;
use super::sort::SortTracker;
use super::PipelineConfig;
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::scenegen::FrameSequence;

/// Slack (in frames) when converting times to frame indices, so that values
/// like 0.3 * 10 land on frame 3.
const FRAME_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackBox {
    pub id: u64,
    pub bbox: BBox,
}

/// Tracker output for one processed input frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedOutput {
    pub input_frame: usize,
    /// Seconds since the scenario start at which the output is ready.
    pub available_at: f64,
    pub tracks: Vec<TrackBox>,
}

/// Frames between input and the first ground-truth frame at or after the
/// output is ready, for an output that starts processing on frame arrival.
pub fn streaming_gap(latency: f64, frame_rate: f64) -> usize {
    (latency * frame_rate - FRAME_EPS).ceil().max(0.0) as usize
}

/// Runs detector + SORT over `frames` in simulated real time.
///
/// The pipeline is busy for `latency * latency_scale` per detector frame.
/// When it becomes free it takes the newest frame that has arrived and was
/// not yet processed; older frames are dropped. Frames whose index is not a
/// multiple of `reinit_freq` skip the detector: SORT only extrapolates and
/// the step costs no time. Detector noise for frame `k` is drawn from the
/// stream `(seed, k)`, so configurations processing the same frame see the
/// same image-level randomness.
pub fn run_pipeline(
    frames: &FrameSequence,
    config: &PipelineConfig,
    profile: &DetectorProfile,
    latency_scale: f64,
    seed: u64,
) -> Result<Vec<TimedOutput>> {
    if !(latency_scale > 0.0 && latency_scale.is_finite()) {
        return Err(Error::invalid(format!("latency_scale must be positive, got {latency_scale}")));
    }
    if config.reinit_freq == 0 {
        return Err(Error::invalid("reinit_freq must be at least 1"));
    }
    let n = frames.len();
    let mut out = Vec::new();
    if n == 0 {
        return Ok(out);
    }
    let rate = frames.frame_rate;
    let model = profile.model(config.model);
    let busy = model.latency * latency_scale;
    let detector = Detector::new(model, &profile.false_positives, frames.image_size);
    let mut tracker = SortTracker::new(config.max_age, config.min_match_iou, profile.kalman.clone());

    let mut free_at = 0.0f64;
    let mut last: Option<usize> = None;
    loop {
        let arrived = ((free_at * rate + FRAME_EPS).floor() as usize).min(n - 1);
        let next = match last {
            Some(l) if arrived <= l => l + 1,
            _ => arrived,
        };
        if next >= n {
            break;
        }
        let start = free_at.max(frames.timestamp(next));
        let detector_ran = next % config.reinit_freq as usize == 0;
        let dt = last.map_or(1.0, |l| (next - l) as f64);
        let dets = if detector_ran {
            let gt: Vec<BBox> = frames.frames[next].iter().map(|(_, b)| *b).collect();
            let mut rng = stream(seed, &[next as u64]);
            detector.detect(&gt, config.conf_threshold, &mut rng)
        } else {
            Vec::new()
        };
        let tracks = tracker
            .step(&dets, detector_ran, dt)
            .into_iter()
            .map(|(id, bbox)| TrackBox { id, bbox })
            .collect();
        let done = start + if detector_ran { busy } else { 0.0 };
        out.push(TimedOutput { input_frame: next, available_at: done, tracks });
        free_at = done;
        last = Some(next);
    }
    Ok(out)
}

/// Index of the first ground-truth frame at or after `available_at`,
/// clamped to the last frame.
pub fn paired_frame(available_at: f64, frame_rate: f64, n_frames: usize) -> usize {
    let f = (available_at * frame_rate - FRAME_EPS).ceil().max(0.0) as usize;
    f.min(n_frames.saturating_sub(1))
}

pub fn write_outputs_jsonl(path: &Path, outputs: &[TimedOutput]) -> Result<()> {
    crate::io::write_jsonl(path, outputs)
}

pub fn read_outputs_jsonl(path: &Path) -> Result<Vec<TimedOutput>> {
    crate::io::read_jsonl(path)
}
