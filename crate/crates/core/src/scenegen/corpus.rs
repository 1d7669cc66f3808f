use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{generate_scenario, Archetype, Scenario, ScenarioSpec};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};
use crate::rng::{derive_seed, str_key};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub archetype: Archetype,
    pub count: usize,
}

/// How many scenarios of each archetype to generate and with which shared parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub mix: Vec<MixEntry>,
    pub duration: f64,
    pub frame_rate: f64,
    pub min_objects: usize,
    pub max_objects: usize,
    pub image_width: u32,
    pub image_height: u32,
    /// Fraction of each archetype's scenarios assigned to the test split.
    pub test_fraction: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            mix: vec![
                MixEntry { archetype: Archetype::IntersectionStop, count: 10 },
                MixEntry { archetype: Archetype::HighwayCruise, count: 10 },
                MixEntry { archetype: Archetype::EgoTurn, count: 10 },
                MixEntry { archetype: Archetype::OcclusionCorridor, count: 10 },
                MixEntry { archetype: Archetype::Mixed, count: 20 },
            ],
            duration: 20.0,
            frame_rate: 10.0,
            min_objects: 6,
            max_objects: 12,
            image_width: 1920,
            image_height: 1280,
            test_fraction: 0.25,
        }
    }
}

impl CorpusSpec {
    pub fn total(&self) -> usize {
        self.mix.iter().map(|m| m.count).sum()
    }

    /// Same shape with every archetype count replaced by `count`.
    pub fn with_uniform_count(mut self, count: usize) -> Self {
        for m in &mut self.mix {
            m.count = count;
        }
        self
    }

    pub fn scenario_specs(&self) -> Vec<ScenarioSpec> {
        let mut out = Vec::with_capacity(self.total());
        for m in &self.mix {
            for i in 0..m.count {
                out.push(ScenarioSpec {
                    id: format!("{}-{i:03}", m.archetype),
                    archetype: m.archetype,
                    duration: self.duration,
                    frame_rate: self.frame_rate,
                    min_objects: self.min_objects,
                    max_objects: self.max_objects,
                    image_width: self.image_width,
                    image_height: self.image_height,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub archetype: Archetype,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub spec: CorpusSpec,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.split)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub scenarios: Vec<Scenario>,
}

impl Corpus {
    pub fn split_of(&self, id: &str) -> Split {
        self.manifest.split_of(id).unwrap_or(Split::Train)
    }
}

/// Generates every scenario of `spec` and assigns train/test splits per
/// archetype, so each archetype appears in both splits when counts allow.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<Corpus> {
    if spec.total() == 0 {
        return Err(Error::invalid("corpus spec requests zero scenarios"));
    }
    if !(0.0..=1.0).contains(&spec.test_fraction) {
        return Err(Error::invalid("test_fraction must be in [0, 1]"));
    }
    let specs = spec.scenario_specs();
    let scenarios = specs
        .iter()
        .map(|s| generate_scenario(s, seed))
        .collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::with_capacity(specs.len());
    for m in &spec.mix {
        let mut ids: Vec<&ScenarioSpec> = specs.iter().filter(|s| s.archetype == m.archetype).collect();
        ids.sort_by_key(|s| derive_seed(seed, &[str_key(&s.id), 0x5717]));
        let n_test = (spec.test_fraction * ids.len() as f64).round() as usize;
        let test: Vec<&str> = ids.iter().take(n_test).map(|s| s.id.as_str()).collect();
        for s in specs.iter().filter(|s| s.archetype == m.archetype) {
            entries.push(ManifestEntry {
                id: s.id.clone(),
                archetype: s.archetype,
                split: if test.contains(&s.id.as_str()) { Split::Test } else { Split::Train },
            });
        }
    }
    Ok(Corpus {
        manifest: CorpusManifest {
            schema_version: super::SCENARIO_SCHEMA_VERSION,
            seed,
            spec: spec.clone(),
            entries,
        },
        scenarios,
    })
}

/// Writes `manifest.json` plus `scenarios/<id>.json`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    let scen_dir = dir.join("scenarios");
    fs::create_dir_all(&scen_dir).map_err(|e| Error::File { path: scen_dir.clone(), source: e })?;
    for s in &corpus.scenarios {
        write_json(&scen_dir.join(format!("{}.json", s.id)), s)?;
    }
    write_json(&dir.join("manifest.json"), &corpus.manifest)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let manifest: CorpusManifest = read_json(&dir.join("manifest.json"))?;
    let scenarios = manifest
        .entries
        .iter()
        .map(|e| {
            let s: Scenario = read_json(&dir.join("scenarios").join(format!("{}.json", e.id)))?;
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { manifest, scenarios })
}
