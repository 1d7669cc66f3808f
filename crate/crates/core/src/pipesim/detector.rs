use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use super::profile::{FalsePositiveProfile, ModelProfile};
use crate::bbox::BBox;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
}

/// Simulated detector for one model on one image plane.
#[derive(Debug, Clone, Copy)]
pub struct Detector<'a> {
    pub model: &'a ModelProfile,
    pub false_positives: &'a FalsePositiveProfile,
    /// (W, H) in pixels.
    pub image_size: (f64, f64),
}

impl<'a> Detector<'a> {
    pub fn new(
        model: &'a ModelProfile,
        false_positives: &'a FalsePositiveProfile,
        image_size: (f64, f64),
    ) -> Self {
        Detector { model, false_positives, image_size }
    }

    /// Detects `gt` boxes independently, then adds Poisson false positives.
    ///
    /// Every GT box consumes the same six draws whether or not it is detected,
    /// so two models fed the same stream see coupled outcomes: a box missed by
    /// a strong model is also missed by a weaker one.
    pub fn detect(&self, gt: &[BBox], conf_threshold: f64, rng: &mut Rng) -> Vec<Detection> {
        let m = self.model;
        let mut out = Vec::with_capacity(gt.len() + 2);
        for b in gt {
            let u: f64 = rng.random();
            let n: [f64; 5] = std::array::from_fn(|_| StandardNormal.sample(rng));
            let p = m.detect_prob(b.area());
            if u >= p {
                continue;
            }
            let s = m.loc_noise_sigma;
            let bbox = BBox::new(
                b.cx + s * n[0],
                b.cy + s * n[1],
                (b.w + s * n[2]).max(1.0),
                (b.h + s * n[3]).max(1.0),
            );
            let confidence = (m.conf_base + m.conf_gain * p + m.conf_sigma * n[4]).clamp(0.0, 1.0);
            if confidence >= conf_threshold {
                out.push(Detection { bbox, confidence });
            }
        }
        if m.fp_rate > 0.0 {
            let fp = self.false_positives;
            let k = Poisson::new(m.fp_rate).map(|d| d.sample(rng) as usize).unwrap_or(0);
            for _ in 0..k {
                let area = rng.random_range(fp.area_lo..=fp.area_hi);
                let aspect: f64 = rng.random_range(0.5..=2.0);
                let w = (area * aspect).sqrt();
                let h = area / w;
                let cx = rng.random_range(0.0..=self.image_size.0);
                let cy = rng.random_range(0.0..=self.image_size.1);
                let confidence = rng.random_range(fp.conf_lo..=fp.conf_hi);
                let Some(bbox) = BBox::new(cx, cy, w, h).clip(self.image_size.0, self.image_size.1)
                else {
                    continue;
                };
                if confidence >= conf_threshold {
                    out.push(Detection { bbox, confidence });
                }
            }
        }
        out
    }
}
