//! Synthetic driving scenarios.
//!
//! A [`Scenario`] is a timed sequence of ground-truth boxes with stable ids,
//! the ego vehicle state per frame and a time-of-day scalar. Scenes are
//! generated from an [`Archetype`] that plants a recognizable context
//! (stopped at an intersection with distant traffic, highway cruising, a fast
//! ego turn, an occlusion-heavy corridor, or a mix of phases).

mod corpus;
mod generate;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::bbox::BBox;
use crate::error::{Error, Result};

pub use corpus::{
    generate_corpus, read_corpus, write_corpus, Corpus, CorpusManifest, CorpusSpec, ManifestEntry,
    MixEntry, Split,
};
pub use generate::generate_scenario;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Scene family that decides ego motion and object population.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Archetype {
    IntersectionStop,
    HighwayCruise,
    EgoTurn,
    OcclusionCorridor,
    Mixed,
}

impl Archetype {
    pub const BASE: [Archetype; 4] = [
        Archetype::IntersectionStop,
        Archetype::HighwayCruise,
        Archetype::EgoTurn,
        Archetype::OcclusionCorridor,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Archetype::IntersectionStop => "intersection-stop",
            Archetype::HighwayCruise => "highway-cruise",
            Archetype::EgoTurn => "ego-turn",
            Archetype::OcclusionCorridor => "occlusion-corridor",
            Archetype::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "" => Err(Error::invalid("empty archetype")),
            "intersection-stop" => Ok(Archetype::IntersectionStop),
            "highway-cruise" => Ok(Archetype::HighwayCruise),
            "ego-turn" => Ok(Archetype::EgoTurn),
            "occlusion-corridor" => Ok(Archetype::OcclusionCorridor),
            "mixed" => Ok(Archetype::Mixed),
            other => Err(Error::invalid(format!("unknown archetype '{other}'"))),
        }
    }
}

/// Parameters for one generated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub archetype: Archetype,
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub frame_rate: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub image_width: u32,
    pub image_height: u32,
}

impl ScenarioSpec {
    pub fn new(id: impl Into<String>, archetype: Archetype) -> Self {
        ScenarioSpec {
            id: id.into(),
            archetype,
            duration: 20.0,
            frame_rate: 10.0,
            min_objects: 6,
            max_objects: 12,
            image_width: 1920,
            image_height: 1280,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("scenario id is empty"));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::invalid(format!("duration must be > 0, got {}", self.duration)));
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::invalid(format!(
                "frame_rate must be > 0, got {}",
                self.frame_rate
            )));
        }
        if self.frame_count() == 0 {
            return Err(Error::invalid("scenario has no frames"));
        }
        if self.min_objects > self.max_objects {
            return Err(Error::invalid(format!(
                "object count range {}..={} is empty",
                self.min_objects, self.max_objects
            )));
        }
        if self.image_width < 64 || self.image_height < 64 {
            return Err(Error::invalid("image plane must be at least 64x64"));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub frame: usize,
    pub bbox: BBox,
    /// `false` while the object is fully occluded; no ground-truth box is emitted.
    pub visible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub id: u64,
    pub trajectory: Vec<TrajectoryPoint>,
}

impl GtObject {
    /// Length of the longest run of consecutive occluded frames.
    pub fn longest_occlusion(&self) -> usize {
        let mut best = 0;
        let mut run = 0;
        for p in &self.trajectory {
            if p.visible {
                run = 0;
            } else {
                run += 1;
                best = best.max(run);
            }
        }
        best
    }
}

/// Ego state for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    /// m/s, non-negative.
    pub speed: f64,
    /// Radians in (-pi, pi].
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub id: String,
    pub archetype: Archetype,
    pub duration: f64,
    pub frame_rate: f64,
    /// (W, H) in pixels.
    pub image_size: (u32, u32),
    pub objects: Vec<GtObject>,
    pub ego: Vec<EgoState>,
    /// Hour in [0, 24).
    pub time_of_day: f64,
}

/// Visible ground-truth boxes of one frame, as `(object id, box)`.
pub type FrameBoxes = Vec<(u64, BBox)>;

/// Per-frame ground truth in the shape consumed by the pipeline and the metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frame_rate: f64,
    /// (W, H) in pixels.
    pub image_size: (f64, f64),
    pub frames: Vec<FrameBoxes>,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.frame_rate
    }
}

impl Scenario {
    pub fn frame_count(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.frame_rate
    }

    pub fn frame_sequence(&self) -> FrameSequence {
        let mut frames = vec![Vec::new(); self.frame_count()];
        for obj in &self.objects {
            for p in obj.trajectory.iter().filter(|p| p.visible) {
                if let Some(f) = frames.get_mut(p.frame) {
                    f.push((obj.id, p.bbox));
                }
            }
        }
        for f in &mut frames {
            f.sort_by_key(|(id, _)| *id);
        }
        FrameSequence {
            frame_rate: self.frame_rate,
            image_size: (self.image_size.0 as f64, self.image_size.1 as f64),
            frames,
        }
    }

    /// Checks the structural invariants of a loaded or generated scenario.
    pub fn validate(&self) -> Result<()> {
        let n = self.frame_count();
        if self.ego.len() != n {
            return Err(Error::invalid(format!(
                "scenario {}: {} ego states for {} frames",
                self.id,
                self.ego.len(),
                n
            )));
        }
        for obj in &self.objects {
            let mut last: Option<usize> = None;
            for p in &obj.trajectory {
                if p.frame >= n {
                    return Err(Error::invalid(format!(
                        "scenario {}: object {} frame {} out of range",
                        self.id, obj.id, p.frame
                    )));
                }
                if last.is_some_and(|l| p.frame <= l) {
                    return Err(Error::invalid(format!(
                        "scenario {}: object {} frames not strictly increasing",
                        self.id, obj.id
                    )));
                }
                if !(p.bbox.w > 0.0 && p.bbox.h > 0.0) {
                    return Err(Error::invalid(format!(
                        "scenario {}: object {} has a degenerate box",
                        self.id, obj.id
                    )));
                }
                last = Some(p.frame);
            }
        }
        for e in &self.ego {
            if e.speed < 0.0 || !(e.heading > -std::f64::consts::PI && e.heading <= std::f64::consts::PI) {
                return Err(Error::invalid(format!("scenario {}: invalid ego state", self.id)));
            }
        }
        Ok(())
    }
}

/// A half-open frame range `[start, end)` of one scenario.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub scenario_id: String,
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start && frame < self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Number of frames in a segment of `delta_tau` seconds.
pub fn segment_length(frame_rate: f64, delta_tau: f64) -> Result<usize> {
    if !(delta_tau.is_finite() && delta_tau > 0.0) {
        return Err(Error::invalid(format!("segment duration must be > 0, got {delta_tau}")));
    }
    let len = (delta_tau * frame_rate).round();
    if len < 2.0 {
        return Err(Error::invalid(format!(
            "segment of {delta_tau}s at {frame_rate}Hz spans fewer than 2 frames"
        )));
    }
    Ok(len as usize)
}

/// Cuts a scenario into consecutive segments of `delta_tau` seconds. Trailing
/// frames that do not fill a whole segment are dropped.
pub fn slice_segments(scenario: &Scenario, delta_tau: f64) -> Result<Vec<Segment>> {
    let len = segment_length(scenario.frame_rate, delta_tau)?;
    let count = scenario.frame_count() / len;
    Ok((0..count)
        .map(|i| Segment {
            scenario_id: scenario.id.clone(),
            index: i,
            start: i * len,
            end: (i + 1) * len,
        })
        .collect())
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}
