//! Perception pipeline simulation: a detector family with a latency/accuracy
//! tradeoff feeding a SORT tracker, scheduled in real time.

mod detector;
pub mod hungarian;
mod kalman;
mod pipeline;
mod profile;
mod sort;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use detector::{Detection, Detector};
pub use hungarian::{hungarian, Assignment};
pub use kalman::KalmanBoxFilter;
pub use pipeline::{
    paired_frame, read_outputs_jsonl, run_pipeline, streaming_gap, write_outputs_jsonl, TimedOutput, TrackBox,
};
pub use profile::{DetectorProfile, FalsePositiveProfile, KalmanParams, ModelProfile};
pub use sort::{SortTracker, TrackState};

/// Detector model, ordered from fastest/weakest to slowest/strongest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    D3,
    D4,
    D5,
    D6,
    D7,
    D7x,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::D3,
        ModelKind::D4,
        ModelKind::D5,
        ModelKind::D6,
        ModelKind::D7,
        ModelKind::D7x,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::D3 => "D3",
            ModelKind::D4 => "D4",
            ModelKind::D5 => "D5",
            ModelKind::D6 => "D6",
            ModelKind::D7 => "D7",
            ModelKind::D7x => "D7x",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const MAX_AGES: [u32; 3] = [1, 3, 7];
pub const CONF_THRESHOLDS: [f64; 3] = [0.4, 0.6, 0.7];
pub const MIN_MATCH_IOUS: [f64; 3] = [0.1, 0.2, 0.3];
pub const REINIT_FREQS: [u32; 3] = [1, 2, 3];

/// One point of the metaparameter grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub model: ModelKind,
    /// Steps a track survives without a matched detection.
    pub max_age: u32,
    pub conf_threshold: f64,
    pub min_match_iou: f64,
    /// Detector runs on frames whose index is a multiple of this value.
    pub reinit_freq: u32,
}

impl PipelineConfig {
    pub fn new(model: ModelKind, max_age: u32) -> Self {
        PipelineConfig {
            model,
            max_age,
            conf_threshold: CONF_THRESHOLDS[0],
            min_match_iou: MIN_MATCH_IOUS[0],
            reinit_freq: REINIT_FREQS[0],
        }
    }

    /// Short label such as `D4-1` (default grid) or `D4-1-c0.6-i0.2-r2`.
    pub fn label(&self) -> String {
        let base = format!("{}-{}", self.model, self.max_age);
        if self.conf_threshold == CONF_THRESHOLDS[0]
            && self.min_match_iou == MIN_MATCH_IOUS[0]
            && self.reinit_freq == REINIT_FREQS[0]
        {
            base
        } else {
            format!(
                "{base}-c{}-i{}-r{}",
                self.conf_threshold, self.min_match_iou, self.reinit_freq
            )
        }
    }

    /// Sort key used to break score ties: cheaper configurations first.
    pub fn cost_key(&self) -> (usize, u32, u32, usize, usize) {
        (
            self.model.index(),
            self.max_age,
            self.reinit_freq,
            Metaparameter::MinMatchIou.value_index(self),
            Metaparameter::ConfThreshold.value_index(self),
        )
    }
}

/// A pipeline knob that a policy may change per segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metaparameter {
    Model,
    MaxAge,
    ConfThreshold,
    MinMatchIou,
    ReinitFreq,
}

impl Metaparameter {
    pub const ALL: [Metaparameter; 5] = [
        Metaparameter::Model,
        Metaparameter::MaxAge,
        Metaparameter::ConfThreshold,
        Metaparameter::MinMatchIou,
        Metaparameter::ReinitFreq,
    ];

    /// Order in which metaparameters are released in the contribution table.
    pub const CONTRIBUTION_ORDER: [Metaparameter; 5] = [
        Metaparameter::Model,
        Metaparameter::MaxAge,
        Metaparameter::ReinitFreq,
        Metaparameter::MinMatchIou,
        Metaparameter::ConfThreshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metaparameter::Model => "detection-model",
            Metaparameter::MaxAge => "tracking-max-age",
            Metaparameter::ConfThreshold => "detection-confidence",
            Metaparameter::MinMatchIou => "tracking-min-iou",
            Metaparameter::ReinitFreq => "tracking-reinit-frequency",
        }
    }

    pub fn cardinality(self) -> usize {
        match self {
            Metaparameter::Model => ModelKind::ALL.len(),
            _ => 3,
        }
    }

    pub fn value_index(self, c: &PipelineConfig) -> usize {
        fn pos<T: PartialEq>(xs: &[T], x: &T) -> usize {
            xs.iter().position(|v| v == x).unwrap_or(0)
        }
        match self {
            Metaparameter::Model => c.model.index(),
            Metaparameter::MaxAge => pos(&MAX_AGES, &c.max_age),
            Metaparameter::ConfThreshold => pos(&CONF_THRESHOLDS, &c.conf_threshold),
            Metaparameter::MinMatchIou => pos(&MIN_MATCH_IOUS, &c.min_match_iou),
            Metaparameter::ReinitFreq => pos(&REINIT_FREQS, &c.reinit_freq),
        }
    }

    pub fn with_value_index(self, c: &PipelineConfig, idx: usize) -> PipelineConfig {
        let mut out = *c;
        match self {
            Metaparameter::Model => out.model = ModelKind::ALL[idx],
            Metaparameter::MaxAge => out.max_age = MAX_AGES[idx],
            Metaparameter::ConfThreshold => out.conf_threshold = CONF_THRESHOLDS[idx],
            Metaparameter::MinMatchIou => out.min_match_iou = MIN_MATCH_IOUS[idx],
            Metaparameter::ReinitFreq => out.reinit_freq = REINIT_FREQS[idx],
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    /// Detector model x max age, 18 configurations.
    Default,
    /// All five metaparameters, 486 configurations.
    Extended,
}

pub fn config_grid(kind: GridKind) -> Vec<PipelineConfig> {
    let mut out = Vec::new();
    for model in ModelKind::ALL {
        for max_age in MAX_AGES {
            match kind {
                GridKind::Default => out.push(PipelineConfig::new(model, max_age)),
                GridKind::Extended => {
                    for conf_threshold in CONF_THRESHOLDS {
                        for min_match_iou in MIN_MATCH_IOUS {
                            for reinit_freq in REINIT_FREQS {
                                out.push(PipelineConfig {
                                    model,
                                    max_age,
                                    conf_threshold,
                                    min_match_iou,
                                    reinit_freq,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Metaparameters that take more than one value in `grid`.
pub fn varying_metaparameters(grid: &[PipelineConfig]) -> Vec<Metaparameter> {
    Metaparameter::ALL
        .into_iter()
        .filter(|m| {
            let first = grid.first().map(|c| m.value_index(c));
            grid.iter().any(|c| Some(m.value_index(c)) != first)
        })
        .collect()
}

/// Index of `config` in `grid`.
pub fn grid_index(grid: &[PipelineConfig], config: &PipelineConfig) -> Option<usize> {
    grid.iter().position(|c| c == config)
}
