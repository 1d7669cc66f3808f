//! Hand-built datasets for oracle and property tests.
#![allow(dead_code)]

use streamperf_core::featext::{EnvFeatures, FEATURE_LAYOUT_VERSION};
use streamperf_core::pipesim::PipelineConfig;
use streamperf_core::scenegen::{Archetype, Split};
use streamperf_core::streameval::SegmentRecord;
use streamperf_core::sweep::{DatasetManifest, ManifestScenario, OctopusDataset, SegmentEntry, SweepOptions, DATASET_SCHEMA_VERSION};

/// One hand-specified segment: per-configuration (S-MOTA, D) and features.
pub struct ToySeg {
    pub scenario: String,
    pub archetype: Archetype,
    pub split: Split,
    pub smota: Vec<f64>,
    pub d: Vec<f64>,
    pub features: EnvFeatures,
    /// Per-configuration output features; empty to reuse `features`.
    pub config_features: Vec<EnvFeatures>,
}

impl ToySeg {
    pub fn new(scenario: &str, split: Split, smota: Vec<f64>, features: EnvFeatures) -> Self {
        let d = vec![0.0; smota.len()];
        ToySeg {
            scenario: scenario.to_string(),
            archetype: Archetype::Mixed,
            split,
            smota,
            d,
            features,
            config_features: Vec::new(),
        }
    }
}

pub fn features_with(pairs: &[(usize, f64)]) -> EnvFeatures {
    let mut f = EnvFeatures::zeros();
    for &(i, v) in pairs {
        f.values[i] = v;
    }
    f
}

fn record(scenario: &str, tau: usize, c: usize, smota: f64, d: f64) -> SegmentRecord {
    SegmentRecord {
        scenario: scenario.to_string(),
        tau,
        config_index: c,
        mota: smota + d,
        smota,
        d,
        fp: 0,
        fn_: 0,
        idsw: 0,
        s_fp: 0,
        s_fn: 0,
        s_idsw: 0,
        motp: 80.0,
        s_motp: 80.0,
        gt: 10,
        s_gt: 10,
        s_matches: 10,
        defined: true,
    }
}

/// Segments must be grouped by scenario; `tau` counts up within each scenario.
pub fn toy_dataset(grid: Vec<PipelineConfig>, segs: Vec<ToySeg>) -> OctopusDataset {
    let mut scenarios: Vec<ManifestScenario> = Vec::new();
    let mut segments = Vec::new();
    for s in segs {
        assert_eq!(s.smota.len(), grid.len());
        let tau = match scenarios.last_mut() {
            Some(m) if m.id == s.scenario => {
                m.segments += 1;
                m.segments - 1
            }
            _ => {
                scenarios.push(ManifestScenario {
                    id: s.scenario.clone(),
                    archetype: s.archetype,
                    split: s.split,
                    segments: 1,
                    time_of_day: 0.5,
                });
                0
            }
        };
        let records = (0..grid.len()).map(|c| record(&s.scenario, tau, c, s.smota[c], s.d[c])).collect();
        let config_features =
            if s.config_features.is_empty() { vec![s.features.clone(); grid.len()] } else { s.config_features };
        segments.push(SegmentEntry {
            scenario: s.scenario,
            archetype: s.archetype,
            tau,
            split: s.split,
            defined: true,
            records,
            gt_features: s.features,
            config_features,
        });
    }
    OctopusDataset {
        manifest: DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            options: SweepOptions::default(),
            grid,
            profile_sha256: String::new(),
            feature_layout_version: FEATURE_LAYOUT_VERSION,
            scenarios,
        },
        segments,
    }
}
