use serde::{Deserialize, Serialize};

use super::detector::Detection;
use super::hungarian::hungarian;
use super::kalman::KalmanBoxFilter;
use super::profile::KalmanParams;
use crate::bbox::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub track_id: u64,
    pub kalman: KalmanBoxFilter,
    /// Detector steps since the last matched detection.
    pub time_since_update: u32,
    pub hits: u32,
}

/// SORT: Kalman prediction, Hungarian association on 1 - IoU, immediate track birth.
#[derive(Debug, Clone)]
pub struct SortTracker {
    pub tracks: Vec<TrackState>,
    next_id: u64,
    max_age: u32,
    min_match_iou: f64,
    params: KalmanParams,
}

impl SortTracker {
    pub fn new(max_age: u32, min_match_iou: f64, params: KalmanParams) -> Self {
        SortTracker { tracks: Vec::new(), next_id: 1, max_age, min_match_iou, params }
    }

    /// Advances every track by `dt` frames and, when the detector ran,
    /// associates `detections`. Frames where the detector was skipped only
    /// extrapolate and do not age tracks. Returns the live tracks.
    pub fn step(&mut self, detections: &[Detection], detector_ran: bool, dt: f64) -> Vec<(u64, BBox)> {
        for t in &mut self.tracks {
            t.kalman.predict(dt, &self.params);
        }
        if detector_ran {
            let mut det_matched = vec![false; detections.len()];
            let mut track_matched = vec![false; self.tracks.len()];
            if !self.tracks.is_empty() && !detections.is_empty() {
                let preds: Vec<BBox> = self.tracks.iter().map(|t| t.kalman.bbox()).collect();
                let cost: Vec<Vec<f64>> = preds
                    .iter()
                    .map(|p| detections.iter().map(|d| 1.0 - iou(p, &d.bbox)).collect())
                    .collect();
                for (ti, di) in hungarian(&cost).pairs() {
                    if 1.0 - cost[ti][di] < self.min_match_iou {
                        continue;
                    }
                    let t = &mut self.tracks[ti];
                    t.kalman.update(&detections[di].bbox, &self.params);
                    t.time_since_update = 0;
                    t.hits += 1;
                    track_matched[ti] = true;
                    det_matched[di] = true;
                }
            }
            for (t, matched) in self.tracks.iter_mut().zip(&track_matched) {
                if !matched {
                    t.time_since_update += 1;
                }
            }
            for (d, matched) in detections.iter().zip(&det_matched) {
                if !matched {
                    self.tracks.push(TrackState {
                        track_id: self.next_id,
                        kalman: KalmanBoxFilter::new(&d.bbox, &self.params),
                        time_since_update: 0,
                        hits: 1,
                    });
                    self.next_id += 1;
                }
            }
            let max_age = self.max_age;
            self.tracks.retain(|t| t.time_since_update <= max_age);
        }
        self.tracks.iter().map(|t| (t.track_id, t.kalman.bbox())).collect()
    }
}
