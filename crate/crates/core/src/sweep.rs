//! The configuration-score dataset: every configuration run on every
//! scenario, scored per segment, plus the static and dynamic baselines
//! derived from it.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featext::{extract_all, EnvFeatures, SceneContext, TrackHistory, FEATURE_LAYOUT_VERSION};
use crate::io::{fmt_f, read_json, read_jsonl, sha256_hex, write_csv, write_json, write_jsonl};
use crate::pipesim::{
    config_grid, run_pipeline, varying_metaparameters, DetectorProfile, GridKind, Metaparameter,
    PipelineConfig,
};
use crate::rng::{derive_seed, str_key};
use crate::scenegen::{slice_segments, Archetype, Corpus, Scenario, Segment, Split};
use crate::streameval::{score_run, SegmentRecord, DEFAULT_IOU_THRESHOLD};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub grid: GridKind,
    pub latency_scale: f64,
    pub seed: u64,
    /// Segment length in seconds.
    pub delta_tau: f64,
    pub iou_threshold: f64,
    /// Keep the environment features of every configuration's outputs
    /// (needed for training and closed-loop evaluation).
    pub config_features: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            grid: GridKind::Default,
            latency_scale: 1.0,
            seed: 0,
            delta_tau: 1.0,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            config_features: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScenario {
    pub id: String,
    pub archetype: Archetype,
    pub split: Split,
    pub segments: usize,
    pub time_of_day: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub options: SweepOptions,
    pub grid: Vec<PipelineConfig>,
    pub profile_sha256: String,
    pub feature_layout_version: u32,
    pub scenarios: Vec<ManifestScenario>,
}

/// All scores and features of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEntry {
    pub scenario: String,
    pub archetype: Archetype,
    pub tau: usize,
    pub split: Split,
    /// False when the segment has no ground-truth boxes.
    pub defined: bool,
    /// One record per grid configuration, in grid order.
    pub records: Vec<SegmentRecord>,
    pub gt_features: EnvFeatures,
    /// Features of each configuration's outputs, in grid order (may be empty).
    pub config_features: Vec<EnvFeatures>,
}

impl SegmentEntry {
    pub fn smota(&self, c: usize) -> f64 {
        self.records[c].smota
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OctopusDataset {
    pub manifest: DatasetManifest,
    /// Ordered by scenario (manifest order) then segment index.
    pub segments: Vec<SegmentEntry>,
}

impl OctopusDataset {
    pub fn grid(&self) -> &[PipelineConfig] {
        &self.manifest.grid
    }

    pub fn n_configs(&self) -> usize {
        self.manifest.grid.len()
    }

    /// Indices of defined segments, optionally restricted to one split.
    pub fn defined(&self, split: Option<Split>) -> Vec<usize> {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.defined && split.is_none_or(|sp| s.split == sp))
            .map(|(i, _)| i)
            .collect()
    }

    /// Index of the preceding segment of the same scenario.
    pub fn prev_segment(&self, i: usize) -> Option<usize> {
        let s = &self.segments[i];
        (i > 0 && s.tau > 0 && self.segments[i - 1].scenario == s.scenario).then(|| i - 1)
    }

    pub fn has_config_features(&self) -> bool {
        self.segments.iter().all(|s| s.config_features.len() == self.n_configs())
    }

    /// Configuration indices ordered cheapest first; used for tie-breaking.
    pub fn cost_order(&self) -> Vec<usize> {
        cost_order(self.grid())
    }
}

pub fn cost_order(grid: &[PipelineConfig]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..grid.len()).collect();
    idx.sort_by_key(|&i| grid[i].cost_key());
    idx
}

/// First index in `order` with the largest `score` (strict improvement needed to displace).
pub fn select_best(order: &[usize], score: impl Fn(usize) -> f64) -> usize {
    let mut best = order[0];
    let mut best_v = score(best);
    for &c in &order[1..] {
        let v = score(c);
        if v > best_v {
            best = c;
            best_v = v;
        }
    }
    best
}

/// Output of one (scenario, configuration) pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: String,
    pub config_index: usize,
    pub records: Vec<SegmentRecord>,
    pub features: Vec<EnvFeatures>,
}

pub fn scene_context(s: &Scenario) -> SceneContext<'_> {
    SceneContext { ego: &s.ego, frame_rate: s.frame_rate, time_of_day: s.time_of_day }
}

/// Seed of the detector noise stream for a scenario; shared by all configurations.
pub fn scenario_seed(seed: u64, scenario_id: &str) -> u64 {
    derive_seed(seed, &[str_key(scenario_id)])
}

pub fn run_one(
    scenario: &Scenario,
    segments: &[Segment],
    config: &PipelineConfig,
    config_index: usize,
    profile: &DetectorProfile,
    opts: &SweepOptions,
) -> Result<RunResult> {
    let frames = scenario.frame_sequence();
    let outputs = run_pipeline(&frames, config, profile, opts.latency_scale, scenario_seed(opts.seed, &scenario.id))?;
    let records = score_run(segments, &outputs, &frames, config_index, opts.iou_threshold)
        .iter()
        .map(|s| s.record())
        .collect();
    let features = if opts.config_features {
        extract_all(&TrackHistory::from_outputs(&outputs), segments, &scene_context(scenario))
    } else {
        Vec::new()
    };
    Ok(RunResult { scenario: scenario.id.clone(), config_index, records, features })
}

fn scenario_segments(corpus: &Corpus, opts: &SweepOptions) -> Result<Vec<Vec<Segment>>> {
    corpus
        .scenarios
        .iter()
        .map(|s| {
            let segs = slice_segments(s, opts.delta_tau)?;
            if segs.is_empty() {
                return Err(Error::invalid(format!("scenario {} has no complete segment", s.id)));
            }
            Ok(segs)
        })
        .collect()
}

fn manifest_for(corpus: &Corpus, segs: &[Vec<Segment>], profile: &DetectorProfile, opts: &SweepOptions) -> Result<DatasetManifest> {
    if corpus.scenarios.is_empty() {
        return Err(Error::invalid("corpus is empty"));
    }
    if !(opts.latency_scale > 0.0) {
        return Err(Error::invalid("latency_scale must be positive"));
    }
    let profile_json = serde_json::to_vec(profile)?;
    Ok(DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        options: opts.clone(),
        grid: config_grid(opts.grid),
        profile_sha256: sha256_hex(&profile_json),
        feature_layout_version: FEATURE_LAYOUT_VERSION,
        scenarios: corpus
            .scenarios
            .iter()
            .zip(segs)
            .map(|(s, sg)| ManifestScenario {
                id: s.id.clone(),
                archetype: s.archetype,
                split: corpus.split_of(&s.id),
                segments: sg.len(),
                time_of_day: s.time_of_day,
            })
            .collect(),
    })
}

/// Runs every grid configuration on every scenario.
pub fn build_dataset(corpus: &Corpus, profile: &DetectorProfile, opts: &SweepOptions) -> Result<OctopusDataset> {
    build_with(corpus, profile, opts, |s, segs, c, ci| run_one(s, segs, c, ci, profile, opts))
}

/// Like [`build_dataset`], but stores each finished (scenario, configuration)
/// run under `dir/parts` and reuses stored runs, so an interrupted sweep resumes.
pub fn build_dataset_resumable(
    corpus: &Corpus,
    profile: &DetectorProfile,
    opts: &SweepOptions,
    dir: &Path,
) -> Result<OctopusDataset> {
    let parts = dir.join("parts");
    fs::create_dir_all(&parts).map_err(|e| Error::File { path: parts.clone(), source: e })?;
    let ds = build_with(corpus, profile, opts, |s, segs, c, ci| {
        let path = parts.join(format!("{}__c{ci:03}.json", s.id));
        if path.exists() {
            if let Ok(r) = read_json::<RunResult>(&path) {
                if r.config_index == ci && r.records.len() == segs.len() {
                    return Ok(r);
                }
            }
        }
        let r = run_one(s, segs, c, ci, profile, opts)?;
        let tmp = path.with_extension("json.tmp");
        write_json(&tmp, &r)?;
        fs::rename(&tmp, &path).map_err(|e| Error::File { path: path.clone(), source: e })?;
        Ok(r)
    })?;
    save_dataset(dir, &ds)?;
    Ok(ds)
}

fn build_with<F>(corpus: &Corpus, profile: &DetectorProfile, opts: &SweepOptions, run: F) -> Result<OctopusDataset>
where
    F: Fn(&Scenario, &[Segment], &PipelineConfig, usize) -> Result<RunResult> + Sync,
{
    let segs = scenario_segments(corpus, opts)?;
    let manifest = manifest_for(corpus, &segs, profile, opts)?;
    let grid = manifest.grid.clone();
    let jobs: Vec<(usize, usize)> = (0..corpus.scenarios.len())
        .flat_map(|s| (0..grid.len()).map(move |c| (s, c)))
        .collect();
    let runs: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(s, c)| run(&corpus.scenarios[s], &segs[s], &grid[c], c))
        .collect::<Result<_>>()?;
    let gt_features: Vec<Vec<EnvFeatures>> = corpus
        .scenarios
        .par_iter()
        .zip(&segs)
        .map(|(s, sg)| extract_all(&TrackHistory::from_ground_truth(&s.frame_sequence()), sg, &scene_context(s)))
        .collect();
    Ok(assemble(manifest, runs, gt_features))
}

fn assemble(manifest: DatasetManifest, runs: Vec<RunResult>, gt_features: Vec<Vec<EnvFeatures>>) -> OctopusDataset {
    let n_cfg = manifest.grid.len();
    let mut segments = Vec::new();
    let mut runs = runs.into_iter();
    for (ms, gtf) in manifest.scenarios.iter().zip(gt_features) {
        let base = segments.len();
        for (tau, f) in gtf.into_iter().enumerate().take(ms.segments) {
            segments.push(SegmentEntry {
                scenario: ms.id.clone(),
                archetype: ms.archetype,
                tau,
                split: ms.split,
                defined: false,
                records: Vec::with_capacity(n_cfg),
                gt_features: f,
                config_features: Vec::new(),
            });
        }
        for _ in 0..n_cfg {
            let r = runs.next().expect("one run per (scenario, config)");
            let has_features = !r.features.is_empty();
            let mut feats = r.features.into_iter();
            for (tau, rec) in r.records.into_iter().enumerate() {
                let e = &mut segments[base + tau];
                e.defined = rec.defined;
                e.records.push(rec);
                if has_features {
                    e.config_features.push(feats.next().expect("features per segment"));
                }
            }
        }
    }
    OctopusDataset { manifest, segments }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureRow {
    scenario: String,
    tau: usize,
    /// `None` for ground truth, otherwise the configuration index.
    source: Option<usize>,
    values: Vec<f64>,
}

/// Writes `manifest.json`, `records.jsonl` and `features.jsonl`.
pub fn save_dataset(dir: &Path, ds: &OctopusDataset) -> Result<()> {
    write_json(&dir.join("manifest.json"), &ds.manifest)?;
    write_jsonl(&dir.join("records.jsonl"), ds.segments.iter().flat_map(|s| s.records.iter()))?;
    let mut rows = Vec::new();
    for s in &ds.segments {
        rows.push(FeatureRow { scenario: s.scenario.clone(), tau: s.tau, source: None, values: s.gt_features.values.clone() });
        for (c, f) in s.config_features.iter().enumerate() {
            rows.push(FeatureRow { scenario: s.scenario.clone(), tau: s.tau, source: Some(c), values: f.values.clone() });
        }
    }
    write_jsonl(&dir.join("features.jsonl"), &rows)
}

pub fn load_dataset(dir: &Path) -> Result<OctopusDataset> {
    let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.feature_layout_version != FEATURE_LAYOUT_VERSION {
        return Err(Error::LayoutMismatch { expected: FEATURE_LAYOUT_VERSION, got: manifest.feature_layout_version });
    }
    let records: Vec<SegmentRecord> = read_jsonl(&dir.join("records.jsonl"))?;
    let features: Vec<FeatureRow> = read_jsonl(&dir.join("features.jsonl"))?;
    let n_cfg = manifest.grid.len();

    let mut index: HashMap<(String, usize), usize> = HashMap::new();
    let mut segments = Vec::new();
    for ms in &manifest.scenarios {
        for tau in 0..ms.segments {
            index.insert((ms.id.clone(), tau), segments.len());
            segments.push(SegmentEntry {
                scenario: ms.id.clone(),
                archetype: ms.archetype,
                tau,
                split: ms.split,
                defined: false,
                records: Vec::new(),
                gt_features: EnvFeatures::zeros(),
                config_features: Vec::new(),
            });
        }
    }
    let lookup = |s: &str, tau: usize| -> Result<usize> {
        index
            .get(&(s.to_string(), tau))
            .copied()
            .ok_or_else(|| Error::invalid(format!("record for unknown segment {s}#{tau}")))
    };
    for r in records {
        let i = lookup(&r.scenario, r.tau)?;
        segments[i].defined = r.defined;
        segments[i].records.push(r);
    }
    for row in features {
        let i = lookup(&row.scenario, row.tau)?;
        let f = EnvFeatures { layout_version: manifest.feature_layout_version, values: row.values };
        match row.source {
            None => segments[i].gt_features = f,
            Some(_) => segments[i].config_features.push(f),
        }
    }
    for s in &mut segments {
        s.records.sort_by_key(|r| r.config_index);
        if s.records.len() != n_cfg {
            return Err(Error::invalid(format!(
                "segment {}#{} has {} records, expected {n_cfg}",
                s.scenario,
                s.tau,
                s.records.len()
            )));
        }
    }
    Ok(OctopusDataset { manifest, segments })
}

/// Mean of `f` over segments `idx`.
fn mean_over(idx: &[usize], f: impl Fn(usize) -> f64) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter().map(|&i| f(i)).sum::<f64>() / idx.len() as f64
}

/// Per-configuration mean of a record field over `idx`.
pub fn config_means(ds: &OctopusDataset, idx: &[usize], field: impl Fn(&SegmentRecord) -> f64) -> Vec<f64> {
    (0..ds.n_configs())
        .map(|c| mean_over(idx, |i| field(&ds.segments[i].records[c])))
        .collect()
}

/// Configuration with the highest mean S-MOTA over defined segments of `split`.
pub fn global_best(ds: &OctopusDataset, split: Split) -> Result<usize> {
    let idx = ds.defined(Some(split));
    if idx.is_empty() {
        return Err(Error::invalid(format!("no defined {split:?} segments")));
    }
    let means = config_means(ds, &idx, |r| r.smota);
    Ok(select_best(&ds.cost_order(), |c| means[c]))
}

/// Per-segment argmax of S-MOTA; `None` for undefined segments.
pub fn optimal_per_segment(ds: &OctopusDataset) -> Vec<Option<usize>> {
    let order = ds.cost_order();
    ds.segments
        .iter()
        .map(|s| s.defined.then(|| select_best(&order, |c| s.smota(c))))
        .collect()
}

/// Aggregate score of a policy: one chosen configuration per segment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyScore {
    pub segments: usize,
    pub smota: f64,
    pub smotp: f64,
    pub s_fp: usize,
    pub s_fn: usize,
    pub s_idsw: usize,
    pub mota: f64,
    pub motp: f64,
    pub fp: usize,
    pub fn_: usize,
    pub idsw: usize,
}

/// Scores `choices` of `(segment index, configuration index)`: means of the
/// percentages, sums of the counts.
pub fn score_choices(ds: &OctopusDataset, choices: &[(usize, usize)]) -> PolicyScore {
    let mut p = PolicyScore { segments: choices.len(), ..Default::default() };
    if choices.is_empty() {
        return p;
    }
    for &(i, c) in choices {
        let r = &ds.segments[i].records[c];
        p.smota += r.smota;
        p.smotp += r.s_motp;
        p.mota += r.mota;
        p.motp += r.motp;
        p.s_fp += r.s_fp;
        p.s_fn += r.s_fn;
        p.s_idsw += r.s_idsw;
        p.fp += r.fp;
        p.fn_ += r.fn_;
        p.idsw += r.idsw;
    }
    let n = choices.len() as f64;
    p.smota /= n;
    p.smotp /= n;
    p.mota /= n;
    p.motp /= n;
    p
}

/// Score of a static configuration on defined segments of `split`.
pub fn static_score(ds: &OctopusDataset, split: Split, c: usize) -> PolicyScore {
    let choices: Vec<(usize, usize)> = ds.defined(Some(split)).into_iter().map(|i| (i, c)).collect();
    score_choices(ds, &choices)
}

/// Score of the per-segment optimal policy on defined segments of `split`.
pub fn optimal_score(ds: &OctopusDataset, split: Split) -> PolicyScore {
    let opt = optimal_per_segment(ds);
    let choices: Vec<(usize, usize)> = ds
        .defined(Some(split))
        .into_iter()
        .map(|i| (i, opt[i].expect("defined")))
        .collect();
    score_choices(ds, &choices)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpportunityGap {
    pub global_best: usize,
    /// Streaming block: global best vs per-segment S-MOTA optimum, on test.
    pub global: PolicyScore,
    pub optimal: PolicyScore,
    pub gap: f64,
    /// Offline block: the same comparison when optimizing offline MOTA.
    pub offline_global_best: usize,
    pub offline_global: PolicyScore,
    pub offline_optimal: PolicyScore,
    pub offline_gap: f64,
}

pub fn opportunity_gap(ds: &OctopusDataset) -> Result<OpportunityGap> {
    let test = ds.defined(Some(Split::Test));
    if test.is_empty() {
        return Err(Error::invalid("no defined test segments"));
    }
    let g = global_best(ds, Split::Train)?;
    let global = static_score(ds, Split::Test, g);
    let optimal = optimal_score(ds, Split::Test);

    let order = ds.cost_order();
    let train = ds.defined(Some(Split::Train));
    let off_means = config_means(ds, &train, |r| r.mota);
    let og = select_best(&order, |c| off_means[c]);
    let offline_global = static_score(ds, Split::Test, og);
    let off_choices: Vec<(usize, usize)> = test
        .iter()
        .map(|&i| (i, select_best(&order, |c| ds.segments[i].records[c].mota)))
        .collect();
    let offline_optimal = score_choices(ds, &off_choices);
    Ok(OpportunityGap {
        global_best: g,
        gap: optimal.smota - global.smota,
        global,
        optimal,
        offline_global_best: og,
        offline_gap: offline_optimal.mota - offline_global.mota,
        offline_global,
        offline_optimal,
    })
}

/// Mean test S-MOTA of the four policies that pick `argmax_c (dS_c - dD_c)`
/// with each component either known per segment (`*`) or replaced by its
/// train mean (`bar`). `cells[row][col]`: row 0 = dS*, row 1 = dS-bar;
/// col 0 = dD*, col 1 = dD-bar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridTable {
    pub cells: [[f64; 2]; 2],
    pub global_best: usize,
}

pub fn hybrid_policy_table(ds: &OctopusDataset) -> Result<HybridTable> {
    let g = global_best(ds, Split::Train)?;
    let train = ds.defined(Some(Split::Train));
    let test = ds.defined(Some(Split::Test));
    if test.is_empty() {
        return Err(Error::invalid("no defined test segments"));
    }
    let s_bar = config_means(ds, &train, |r| r.mota);
    let d_bar = config_means(ds, &train, |r| r.d);
    let order = ds.cost_order();
    let mut cells = [[0.0; 2]; 2];
    for (row, s_true) in [true, false].into_iter().enumerate() {
        for (col, d_true) in [true, false].into_iter().enumerate() {
            let choices: Vec<(usize, usize)> = test
                .iter()
                .map(|&i| {
                    let r = &ds.segments[i].records;
                    let ds_ = |c: usize| if s_true { r[c].mota - r[g].mota } else { s_bar[c] - s_bar[g] };
                    let dd_ = |c: usize| if d_true { r[c].d - r[g].d } else { d_bar[c] - d_bar[g] };
                    (i, select_best(&order, |c| ds_(c) - dd_(c)))
                })
                .collect();
            cells[row][col] = score_choices(ds, &choices).smota;
        }
    }
    Ok(HybridTable { cells, global_best: g })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRow {
    /// `None` for the static baseline row.
    pub metaparameter: Option<Metaparameter>,
    pub score: f64,
    pub increase: f64,
}

/// Optimal-policy test S-MOTA as metaparameters are released one at a time;
/// metaparameters not yet released stay at their global-best values.
pub fn metaparameter_contribution(ds: &OctopusDataset) -> Result<Vec<ContributionRow>> {
    let varying = varying_metaparameters(ds.grid());
    if varying.len() < Metaparameter::ALL.len() {
        return Err(Error::invalid("metaparameter contribution needs an extended-grid dataset"));
    }
    let g = global_best(ds, Split::Train)?;
    let gcfg = ds.grid()[g];
    let test = ds.defined(Some(Split::Test));
    if test.is_empty() {
        return Err(Error::invalid("no defined test segments"));
    }
    let order = ds.cost_order();
    let mut rows = vec![ContributionRow { metaparameter: None, score: static_score(ds, Split::Test, g).smota, increase: 0.0 }];
    for k in 1..=Metaparameter::CONTRIBUTION_ORDER.len() {
        let pinned = &Metaparameter::CONTRIBUTION_ORDER[k..];
        let allowed: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&c| pinned.iter().all(|m| m.value_index(&ds.grid()[c]) == m.value_index(&gcfg)))
            .collect();
        let choices: Vec<(usize, usize)> = test
            .iter()
            .map(|&i| (i, select_best(&allowed, |c| ds.segments[i].smota(c))))
            .collect();
        let score = score_choices(ds, &choices).smota;
        let prev = rows.last().map_or(score, |r| r.score);
        rows.push(ContributionRow {
            metaparameter: Some(Metaparameter::CONTRIBUTION_ORDER[k - 1]),
            score,
            increase: score - prev,
        });
    }
    Ok(rows)
}

pub const TABLE_COLUMNS: [&str; 5] = ["S-MOTA", "S-MOTP", "S-FP", "S-FN", "S-IDsw"];

/// One `Method, S-MOTA, S-MOTP, S-FP, S-FN, S-IDsw` row.
pub fn streaming_row(name: &str, p: &PolicyScore) -> Vec<String> {
    vec![
        name.to_string(),
        fmt_f(p.smota, 2),
        fmt_f(p.smotp, 2),
        p.s_fp.to_string(),
        p.s_fn.to_string(),
        p.s_idsw.to_string(),
    ]
}

pub fn streaming_header() -> Vec<String> {
    std::iter::once("Method").chain(TABLE_COLUMNS).map(String::from).collect()
}

/// Opportunity-gap report with an offline block and a streaming block.
pub fn write_gap_csv(path: &Path, gap: &OpportunityGap) -> Result<()> {
    let header: Vec<String> = ["Block", "Method", "MOTA", "MOTP", "FP", "FN", "IDsw"].map(String::from).to_vec();
    let off = |name: &str, p: &PolicyScore| {
        vec!["offline".into(), name.into(), fmt_f(p.mota, 2), fmt_f(p.motp, 2), p.fp.to_string(), p.fn_.to_string(), p.idsw.to_string()]
    };
    let on = |name: &str, p: &PolicyScore| {
        vec!["streaming".into(), name.into(), fmt_f(p.smota, 2), fmt_f(p.smotp, 2), p.s_fp.to_string(), p.s_fn.to_string(), p.s_idsw.to_string()]
    };
    let rows = vec![
        off("Global best", &gap.offline_global),
        off("Optimal", &gap.offline_optimal),
        on("Global best", &gap.global),
        on("Optimal", &gap.optimal),
    ];
    write_csv(path, &header, &rows)
}

pub fn write_hybrid_csv(path: &Path, t: &HybridTable) -> Result<()> {
    let header: Vec<String> = ["", "dD*", "dD-mean"].map(String::from).to_vec();
    let rows = vec![
        vec!["dS*".into(), fmt_f(t.cells[0][0], 2), fmt_f(t.cells[0][1], 2)],
        vec!["dS-mean".into(), fmt_f(t.cells[1][0], 2), fmt_f(t.cells[1][1], 2)],
    ];
    write_csv(path, &header, &rows)
}

pub fn write_contribution_csv(path: &Path, rows: &[ContributionRow]) -> Result<()> {
    let header: Vec<String> = ["Dynamic metaparameters", "S-MOTA", "Increase"].map(String::from).to_vec();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| match r.metaparameter {
            None => vec!["none (global best)".into(), fmt_f(r.score, 2), "-".into()],
            Some(m) => vec![format!("+{}", m.name()), fmt_f(r.score, 2), fmt_f(r.increase, 2)],
        })
        .collect();
    write_csv(path, &header, &body)
}

/// Per-record CSV mirroring the JSONL dataset.
pub fn write_records_csv(path: &Path, ds: &OctopusDataset) -> Result<()> {
    let header: Vec<String> = [
        "scenario", "tau", "config_index", "config", "mota", "smota", "d", "fp", "fn", "idsw", "s_fp", "s_fn", "s_idsw",
        "motp", "s_motp", "defined",
    ]
    .map(String::from)
    .to_vec();
    let rows: Vec<Vec<String>> = ds
        .segments
        .iter()
        .flat_map(|s| s.records.iter())
        .map(|r| {
            vec![
                r.scenario.clone(),
                r.tau.to_string(),
                r.config_index.to_string(),
                ds.grid()[r.config_index].label(),
                format!("{}", r.mota),
                format!("{}", r.smota),
                format!("{}", r.d),
                r.fp.to_string(),
                r.fn_.to_string(),
                r.idsw.to_string(),
                r.s_fp.to_string(),
                r.s_fn.to_string(),
                r.s_idsw.to_string(),
                format!("{}", r.motp),
                format!("{}", r.s_motp),
                r.defined.to_string(),
            ]
        })
        .collect();
    write_csv(path, &header, &rows)
}
