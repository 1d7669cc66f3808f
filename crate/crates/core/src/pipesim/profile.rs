use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelKind;
use crate::error::{Error, Result};

const DEFAULT_PROFILE: &str = include_str!("../../profiles/default.json");

/// Latency and detection-quality parameters of one detector model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model: ModelKind,
    /// Seconds per processed frame.
    pub latency: f64,
    /// Box area (px^2) below which detection probability is under 5%.
    pub min_detectable_area: f64,
    /// Area at which detection probability reaches half of `max_prob`.
    pub midpoint_area: f64,
    /// Logistic slope in log-area.
    pub slope: f64,
    pub max_prob: f64,
    /// Gaussian jitter (px) on box center and size.
    pub loc_noise_sigma: f64,
    /// Expected spurious detections per frame.
    pub fp_rate: f64,
    pub conf_base: f64,
    pub conf_gain: f64,
    pub conf_sigma: f64,
}

impl ModelProfile {
    /// Probability that a box of `area` px^2 is detected.
    pub fn detect_prob(&self, area: f64) -> f64 {
        if area <= 0.0 {
            return 0.0;
        }
        let z = self.slope * (area.ln() - self.midpoint_area.ln());
        self.max_prob / (1.0 + (-z).exp())
    }

    /// Idealized detector: always detects, no jitter, no false positives.
    pub fn noiseless(model: ModelKind, latency: f64) -> Self {
        ModelProfile {
            model,
            latency,
            min_detectable_area: 1e-9,
            midpoint_area: 1e-9,
            slope: 50.0,
            max_prob: 1.0,
            loc_noise_sigma: 0.0,
            fp_rate: 0.0,
            conf_base: 1.0,
            conf_gain: 0.0,
            conf_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsePositiveProfile {
    pub conf_lo: f64,
    pub conf_hi: f64,
    pub area_lo: f64,
    pub area_hi: f64,
}

/// SORT Kalman constants: diagonal noise and initial covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    /// (cx, cy, area, aspect)
    pub measurement_noise: [f64; 4],
    /// (cx, cy, area, aspect, v_cx, v_cy, v_area)
    pub process_noise: [f64; 7],
    pub initial_covariance: [f64; 7],
}

impl Default for KalmanParams {
    fn default() -> Self {
        KalmanParams {
            measurement_noise: [1.0, 1.0, 10.0, 10.0],
            process_noise: [1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4],
            initial_covariance: [10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4],
        }
    }
}

/// Detector family plus tracker constants, loaded from a JSON profile file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorProfile {
    pub schema_version: u32,
    pub models: Vec<ModelProfile>,
    pub false_positives: FalsePositiveProfile,
    pub kalman: KalmanParams,
}

impl DetectorProfile {
    /// The profile shipped in `profiles/default.json`.
    pub fn builtin() -> Self {
        let p: DetectorProfile =
            serde_json::from_str(DEFAULT_PROFILE).expect("built-in profile parses");
        p.validate().expect("built-in profile is valid");
        p
    }

    pub fn builtin_json() -> &'static str {
        DEFAULT_PROFILE
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: DetectorProfile = crate::io::read_json(path)?;
        p.validate()?;
        Ok(p)
    }

    /// Profile in which every model detects perfectly, keeping the
    /// built-in latencies.
    pub fn noiseless() -> Self {
        let mut p = Self::builtin();
        p.models = p
            .models
            .iter()
            .map(|m| ModelProfile::noiseless(m.model, m.latency))
            .collect();
        p
    }

    pub fn model(&self, kind: ModelKind) -> &ModelProfile {
        &self.models[kind.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.len() != ModelKind::ALL.len() {
            return Err(Error::invalid(format!(
                "profile lists {} models, expected {}",
                self.models.len(),
                ModelKind::ALL.len()
            )));
        }
        for (m, kind) in self.models.iter().zip(ModelKind::ALL) {
            if m.model != kind {
                return Err(Error::invalid(format!(
                    "profile model {} out of order (expected {kind})",
                    m.model
                )));
            }
            let finite = [
                m.latency,
                m.min_detectable_area,
                m.midpoint_area,
                m.slope,
                m.max_prob,
                m.loc_noise_sigma,
                m.fp_rate,
                m.conf_base,
                m.conf_gain,
                m.conf_sigma,
            ]
            .iter()
            .all(|x| x.is_finite());
            if !finite || m.latency <= 0.0 || m.midpoint_area <= 0.0 || m.slope <= 0.0 {
                return Err(Error::invalid(format!("profile {kind}: invalid parameters")));
            }
            if !(0.0..=1.0).contains(&m.max_prob) || m.loc_noise_sigma < 0.0 || m.fp_rate < 0.0 {
                return Err(Error::invalid(format!("profile {kind}: out-of-range parameters")));
            }
            if m.detect_prob(m.min_detectable_area) >= 0.05 {
                return Err(Error::invalid(format!(
                    "profile {kind}: detect_prob(min_detectable_area) must be < 0.05"
                )));
            }
        }
        for w in self.models.windows(2) {
            if w[1].latency <= w[0].latency {
                return Err(Error::invalid("model latencies must strictly increase"));
            }
            if w[1].min_detectable_area >= w[0].min_detectable_area {
                return Err(Error::invalid("min_detectable_area must strictly decrease"));
            }
        }
        let fp = &self.false_positives;
        if !(fp.conf_lo <= fp.conf_hi && fp.area_lo > 0.0 && fp.area_lo <= fp.area_hi) {
            return Err(Error::invalid("false-positive ranges are empty"));
        }
        Ok(())
    }
}
