//! The Octopus policy: regress the clipped S-MOTA improvement over the
//! global-best configuration from (configuration ⊕ environment features),
//! then pick the configuration with the highest prediction, one segment at
//! a time.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featext::{EnvFeatures, EvalMode, FEATURE_DIM, FEATURE_LAYOUT_VERSION};
use crate::forest::{Forest, ForestHyperparams};
use crate::io::{read_json, write_csv, write_json, write_jsonl};
use crate::pipesim::{grid_index, varying_metaparameters, Metaparameter, ModelKind, PipelineConfig};
use crate::scenegen::Split;
use crate::sweep::{
    cost_order, global_best, optimal_per_segment, score_choices, select_best, static_score, streaming_header,
    streaming_row, OctopusDataset, PolicyScore,
};

pub const POLICY_SCHEMA_VERSION: u32 = 1;

/// Config encoding: one-hot model (6), then max_age, conf_threshold,
/// min_match_iou, reinit_freq as raw numbers.
pub const CONFIG_ENCODING_DIM: usize = ModelKind::ALL.len() + 4;
pub const POLICY_INPUT_DIM: usize = CONFIG_ENCODING_DIM + FEATURE_DIM;
pub const DEFAULT_EPSILON: f64 = 100.0;

pub fn encode_config(c: &PipelineConfig, out: &mut [f64]) {
    out[..ModelKind::ALL.len()].fill(0.0);
    out[c.model.index()] = 1.0;
    let k = ModelKind::ALL.len();
    out[k] = c.max_age as f64;
    out[k + 1] = c.conf_threshold;
    out[k + 2] = c.min_match_iou;
    out[k + 3] = c.reinit_freq as f64;
}

pub fn config_encoding_names() -> Vec<String> {
    ModelKind::ALL
        .iter()
        .map(|m| format!("model={m}"))
        .chain(["max_age", "conf_threshold", "min_match_iou", "reinit_freq"].map(String::from))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    /// clip(s - s_global, ε)
    Relative,
    /// raw s (ablation without baseline subtraction)
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clipping {
    /// [-ε, ε]
    Symmetric,
    /// [-ε, ∞): lower bound only
    LowerOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub target: TargetKind,
    pub epsilon: f64,
    pub clipping: Clipping,
    pub hyperparams: ForestHyperparams,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            target: TargetKind::Relative,
            epsilon: DEFAULT_EPSILON,
            clipping: Clipping::Symmetric,
            hyperparams: ForestHyperparams::regression(),
        }
    }
}

pub fn clip_target(delta: f64, epsilon: f64, clipping: Clipping) -> f64 {
    match clipping {
        Clipping::Symmetric => delta.clamp(-epsilon, epsilon),
        Clipping::LowerOnly => delta.max(-epsilon),
    }
}

/// Regression rows: one per (defined train segment, configuration).
#[derive(Debug, Clone, Default)]
pub struct TrainingRows {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// (segment index, configuration index) of each row.
    pub keys: Vec<(usize, usize)>,
}

fn train_features(ds: &OctopusDataset, i: usize, h_global: usize) -> Result<&EnvFeatures> {
    let s = &ds.segments[i];
    let f = s
        .config_features
        .get(h_global)
        .ok_or_else(|| Error::MissingFeatures { scenario: s.scenario.clone(), tau: s.tau })?;
    f.check_layout()?;
    Ok(f)
}

/// Features always come from the global-best configuration's outputs on
/// the same segment, so the training distribution does not depend on the
/// configuration being scored.
pub fn make_targets(ds: &OctopusDataset, h_global: usize, opts: &TrainOptions) -> Result<TrainingRows> {
    if !(opts.epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let mut rows = TrainingRows::default();
    for i in ds.defined(Some(Split::Train)) {
        let f = train_features(ds, i, h_global)?;
        let s = &ds.segments[i];
        let s_global = s.smota(h_global);
        for (c, cfg) in ds.grid().iter().enumerate() {
            let mut x = vec![0.0; POLICY_INPUT_DIM];
            encode_config(cfg, &mut x);
            x[CONFIG_ENCODING_DIM..].copy_from_slice(&f.values);
            let y = match opts.target {
                TargetKind::Relative => clip_target(s.smota(c) - s_global, opts.epsilon, opts.clipping),
                TargetKind::Absolute => s.smota(c),
            };
            rows.x.push(x);
            rows.y.push(y);
            rows.keys.push((i, c));
        }
    }
    Ok(rows)
}

/// A per-segment choice with the predictions that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub chosen: usize,
    /// Predicted score per configuration (empty for classifier policies).
    pub rhat: Vec<f64>,
}

/// Decision order for ties: `h_global` first, then cheaper configurations.
pub fn tie_order(grid: &[PipelineConfig], h_global: usize) -> Vec<usize> {
    std::iter::once(h_global)
        .chain(cost_order(grid).into_iter().filter(|&c| c != h_global))
        .collect()
}

/// Argmax of `rhat` under [`tie_order`].
pub fn decide(rhat: &[f64], order: &[usize]) -> usize {
    select_best(order, |c| rhat[c])
}

pub trait Policy: Sync {
    fn h_global(&self) -> usize;
    fn decide(&self, features: &EnvFeatures) -> Result<Decision>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub schema_version: u32,
    pub options: TrainOptions,
    pub h_global: usize,
    pub grid: Vec<PipelineConfig>,
    pub feature_layout_version: u32,
    pub forest: Forest,
    #[serde(skip)]
    order: Vec<usize>,
    #[serde(skip)]
    encodings: Vec<[f64; CONFIG_ENCODING_DIM]>,
}

impl PolicyModel {
    fn new(options: TrainOptions, h_global: usize, grid: Vec<PipelineConfig>, forest: Forest) -> Self {
        let mut m = PolicyModel {
            schema_version: POLICY_SCHEMA_VERSION,
            options,
            h_global,
            grid,
            feature_layout_version: FEATURE_LAYOUT_VERSION,
            forest,
            order: Vec::new(),
            encodings: Vec::new(),
        };
        m.prepare();
        m
    }

    fn prepare(&mut self) {
        self.order = tie_order(&self.grid, self.h_global);
        self.encodings = self
            .grid
            .iter()
            .map(|c| {
                let mut e = [0.0; CONFIG_ENCODING_DIM];
                encode_config(c, &mut e);
                e
            })
            .collect();
    }

    /// Predicted score of every configuration for `features`.
    pub fn predict_all(&self, features: &EnvFeatures) -> Result<Vec<f64>> {
        if features.layout_version != self.feature_layout_version {
            return Err(Error::LayoutMismatch { expected: self.feature_layout_version, got: features.layout_version });
        }
        features.check_layout()?;
        let mut x = [0.0; POLICY_INPUT_DIM];
        x[CONFIG_ENCODING_DIM..].copy_from_slice(&features.values);
        Ok(self
            .encodings
            .iter()
            .map(|e| {
                x[..CONFIG_ENCODING_DIM].copy_from_slice(e);
                self.forest.predict_unchecked(&x)
            })
            .collect())
    }

    pub fn rank(&self, features: &EnvFeatures) -> Result<Decision> {
        let rhat = self.predict_all(features)?;
        Ok(Decision { chosen: decide(&rhat, &self.order), rhat })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut m: PolicyModel = read_json(path)?;
        m.check()?;
        m.prepare();
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        if self.feature_layout_version != FEATURE_LAYOUT_VERSION {
            return Err(Error::LayoutMismatch { expected: FEATURE_LAYOUT_VERSION, got: self.feature_layout_version });
        }
        if self.forest.n_features != POLICY_INPUT_DIM {
            return Err(Error::WidthMismatch { expected: POLICY_INPUT_DIM, got: self.forest.n_features });
        }
        if self.h_global >= self.grid.len() {
            return Err(Error::invalid("h_global outside grid"));
        }
        Ok(())
    }
}

impl Policy for PolicyModel {
    fn h_global(&self) -> usize {
        self.h_global
    }

    fn decide(&self, features: &EnvFeatures) -> Result<Decision> {
        self.rank(features)
    }
}

pub fn train(ds: &OctopusDataset, opts: &TrainOptions) -> Result<PolicyModel> {
    let h_global = global_best(ds, Split::Train)?;
    let rows = make_targets(ds, h_global, opts)?;
    if rows.y.is_empty() {
        return Err(Error::invalid("no training rows"));
    }
    let mut forest = Forest::fit(&rows.x, &rows.y, &opts.hyperparams)?;
    forest.feature_layout_version = Some(FEATURE_LAYOUT_VERSION);
    Ok(PolicyModel::new(opts.clone(), h_global, ds.grid().to_vec(), forest))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    /// One classifier per metaparameter, labels from the per-segment optimum.
    Joint,
    /// One classifier per metaparameter, labels from optimizing that
    /// metaparameter alone with the others pinned to the global best.
    Independent,
    /// A single classifier over whole configurations.
    JointSingle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    /// `None` for the single whole-configuration classifier.
    pub metaparameter: Option<Metaparameter>,
    pub forest: Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPolicy {
    pub schema_version: u32,
    pub kind: ClassifierKind,
    pub h_global: usize,
    pub grid: Vec<PipelineConfig>,
    pub feature_layout_version: u32,
    pub heads: Vec<ClassifierHead>,
}

impl Policy for ClassifierPolicy {
    fn h_global(&self) -> usize {
        self.h_global
    }

    fn decide(&self, features: &EnvFeatures) -> Result<Decision> {
        if features.layout_version != self.feature_layout_version {
            return Err(Error::LayoutMismatch { expected: self.feature_layout_version, got: features.layout_version });
        }
        features.check_layout()?;
        let mut cfg = self.grid[self.h_global];
        for h in &self.heads {
            let class = h.forest.predict_class(&features.values)?;
            match h.metaparameter {
                Some(m) => cfg = m.with_value_index(&cfg, class),
                None => cfg = self.grid[class],
            }
        }
        // grids are full products, so the assembled config is always present
        let chosen = grid_index(&self.grid, &cfg).unwrap_or(self.h_global);
        Ok(Decision { chosen, rhat: Vec::new() })
    }
}

/// Best value index of `m` with every other metaparameter pinned to `h_global`.
fn independent_label(ds: &OctopusDataset, i: usize, m: Metaparameter, h_global: usize, order: &[usize]) -> usize {
    let g = ds.grid()[h_global];
    let others: Vec<Metaparameter> = Metaparameter::ALL.into_iter().filter(|&o| o != m).collect();
    let allowed: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&c| others.iter().all(|o| o.value_index(&ds.grid()[c]) == o.value_index(&g)))
        .collect();
    let best = select_best(&allowed, |c| ds.segments[i].smota(c));
    m.value_index(&ds.grid()[best])
}

/// Classification ablations: predict the configuration directly instead of
/// regressing and ranking.
pub fn train_classifier(ds: &OctopusDataset, kind: ClassifierKind, hp: &ForestHyperparams) -> Result<ClassifierPolicy> {
    let h_global = global_best(ds, Split::Train)?;
    let idx = ds.defined(Some(Split::Train));
    if idx.is_empty() {
        return Err(Error::invalid("no training rows"));
    }
    let x: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| train_features(ds, i, h_global).map(|f| f.values.clone()))
        .collect::<Result<_>>()?;
    let opt = optimal_per_segment(ds);
    let order = tie_order(ds.grid(), h_global);

    let fit = |labels: Vec<usize>, n_classes: usize| -> Result<Forest> {
        let mut f = Forest::fit_classifier(&x, &labels, n_classes, hp)?;
        f.feature_layout_version = Some(FEATURE_LAYOUT_VERSION);
        Ok(f)
    };
    let heads = match kind {
        ClassifierKind::JointSingle => {
            let labels = idx.iter().map(|&i| opt[i].expect("defined")).collect();
            vec![ClassifierHead { metaparameter: None, forest: fit(labels, ds.n_configs())? }]
        }
        ClassifierKind::Joint | ClassifierKind::Independent => varying_metaparameters(ds.grid())
            .into_iter()
            .map(|m| {
                let labels = idx
                    .iter()
                    .map(|&i| match kind {
                        ClassifierKind::Joint => m.value_index(&ds.grid()[opt[i].expect("defined")]),
                        _ => independent_label(ds, i, m, h_global, &order),
                    })
                    .collect();
                Ok(ClassifierHead { metaparameter: Some(m), forest: fit(labels, m.cardinality())? })
            })
            .collect::<Result<_>>()?,
    };
    Ok(ClassifierPolicy {
        schema_version: POLICY_SCHEMA_VERSION,
        kind,
        h_global,
        grid: ds.grid().to_vec(),
        feature_layout_version: FEATURE_LAYOUT_VERSION,
        heads,
    })
}

/// Any trained policy, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum SavedPolicy {
    Regression(PolicyModel),
    Classifier(ClassifierPolicy),
}

impl SavedPolicy {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: SavedPolicy = read_json(path)?;
        Ok(match p {
            SavedPolicy::Regression(mut m) => {
                m.check()?;
                m.prepare();
                SavedPolicy::Regression(m)
            }
            SavedPolicy::Classifier(c) => {
                if c.feature_layout_version != FEATURE_LAYOUT_VERSION {
                    return Err(Error::LayoutMismatch { expected: FEATURE_LAYOUT_VERSION, got: c.feature_layout_version });
                }
                SavedPolicy::Classifier(c)
            }
        })
    }

    pub fn grid(&self) -> &[PipelineConfig] {
        match self {
            SavedPolicy::Regression(m) => &m.grid,
            SavedPolicy::Classifier(c) => &c.grid,
        }
    }
}

impl Policy for SavedPolicy {
    fn h_global(&self) -> usize {
        match self {
            SavedPolicy::Regression(m) => m.h_global,
            SavedPolicy::Classifier(c) => c.h_global,
        }
    }

    fn decide(&self, features: &EnvFeatures) -> Result<Decision> {
        match self {
            SavedPolicy::Regression(m) => m.decide(features),
            SavedPolicy::Classifier(c) => c.decide(features),
        }
    }
}

/// One row of the decisions log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub scenario: String,
    pub tau: usize,
    pub segment: usize,
    pub chosen_config: usize,
    /// True when the decision fell back to the global best.
    pub imputed: bool,
    /// Configuration whose outputs produced the features (closed loop only).
    pub feature_source: Option<usize>,
    pub rhat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mode: EvalMode,
    pub score: PolicyScore,
    pub decisions: Vec<DecisionRecord>,
}

/// Runs `policy` over every scenario of `split`, segment by segment.
pub fn evaluate(policy: &dyn Policy, ds: &OctopusDataset, mode: EvalMode, split: Split) -> Result<EvalResult> {
    evaluate_with(ds, mode, split, policy.h_global(), |_, f| policy.decide(f))
}

/// Like [`evaluate`] with an arbitrary decision function, which receives
/// the segment index and the mode's features.
///
/// The first segment of each scenario and undefined segments take
/// `h_global`. In closed-loop mode the features of segment τ are those of
/// the outputs of the configuration chosen at τ−1, taken from the sweep.
pub fn evaluate_with<F>(ds: &OctopusDataset, mode: EvalMode, split: Split, h_global: usize, decide_fn: F) -> Result<EvalResult>
where
    F: Fn(usize, &EnvFeatures) -> Result<Decision> + Sync,
{
    if mode == EvalMode::ClosedLoop && !ds.has_config_features() {
        let s = ds.segments.iter().find(|s| s.config_features.len() != ds.n_configs()).expect("some segment");
        return Err(Error::MissingFeatures { scenario: s.scenario.clone(), tau: s.tau });
    }
    // contiguous segment ranges per scenario
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=ds.segments.len() {
        if i == ds.segments.len() || ds.segments[i].scenario != ds.segments[start].scenario {
            if ds.segments[start].split == split {
                ranges.push(start..i);
            }
            start = i;
        }
    }
    let per_scenario: Vec<Vec<DecisionRecord>> = ranges
        .into_par_iter()
        .map(|range| {
            let mut out: Vec<DecisionRecord> = Vec::with_capacity(range.len());
            for i in range {
                let s = &ds.segments[i];
                let prev = out.last().map(|d| d.chosen_config);
                let (features, source) = match (mode, prev) {
                    (_, None) => (None, None),
                    (EvalMode::GtCurrent, Some(_)) => (Some(&s.gt_features), None),
                    (EvalMode::GtPrevious, Some(_)) => (Some(&ds.segments[i - 1].gt_features), None),
                    (EvalMode::ClosedLoop, Some(p)) => (Some(&ds.segments[i - 1].config_features[p]), Some(p)),
                };
                let rec = match features {
                    Some(f) if s.defined => {
                        let d = decide_fn(i, f)?;
                        DecisionRecord {
                            scenario: s.scenario.clone(),
                            tau: s.tau,
                            segment: i,
                            chosen_config: d.chosen,
                            imputed: false,
                            feature_source: source,
                            rhat: d.rhat,
                        }
                    }
                    _ => DecisionRecord {
                        scenario: s.scenario.clone(),
                        tau: s.tau,
                        segment: i,
                        chosen_config: h_global,
                        imputed: true,
                        feature_source: None,
                        rhat: Vec::new(),
                    },
                };
                out.push(rec);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let decisions: Vec<DecisionRecord> = per_scenario.into_iter().flatten().collect();
    let choices: Vec<(usize, usize)> = decisions
        .iter()
        .filter(|d| ds.segments[d.segment].defined)
        .map(|d| (d.segment, d.chosen_config))
        .collect();
    Ok(EvalResult { mode, score: score_choices(ds, &choices), decisions })
}

/// Per-segment optimum of the preceding segment (global best on first segments).
pub fn optimal_from_previous(ds: &OctopusDataset, split: Split, h_global: usize) -> PolicyScore {
    let opt = optimal_per_segment(ds);
    let choices: Vec<(usize, usize)> = ds
        .defined(Some(split))
        .into_iter()
        .map(|i| (i, ds.prev_segment(i).and_then(|p| opt[p]).unwrap_or(h_global)))
        .collect();
    score_choices(ds, &choices)
}

pub const TABLE_ROWS: [&str; 6] = [
    "Global best",
    "Optimal",
    "Optimal from the prev. segment",
    "Octopus with Ground truth from current segment",
    "Octopus with Ground truth from prev. segment",
    "Octopus with Prediction from prev. segment",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub h_global: usize,
    pub global_best: PolicyScore,
    pub optimal: PolicyScore,
    pub optimal_prev: PolicyScore,
    /// One entry per evaluated mode, in [`EvalMode::ALL`] order.
    pub octopus: Vec<EvalResult>,
}

impl PolicyReport {
    pub fn rows(&self) -> Vec<(&'static str, PolicyScore)> {
        let mut rows = vec![
            (TABLE_ROWS[0], self.global_best),
            (TABLE_ROWS[1], self.optimal),
            (TABLE_ROWS[2], self.optimal_prev),
        ];
        for r in &self.octopus {
            let k = EvalMode::ALL.iter().position(|m| *m == r.mode).expect("known mode");
            rows.push((TABLE_ROWS[3 + k], r.score));
        }
        rows
    }

    pub fn mode(&self, mode: EvalMode) -> &EvalResult {
        self.octopus.iter().find(|r| r.mode == mode).expect("mode evaluated")
    }

    /// Fraction of the optimal − global-best gap closed in `mode`.
    pub fn gap_closed(&self, mode: EvalMode) -> f64 {
        let gap = self.optimal.smota - self.global_best.smota;
        if gap <= 0.0 {
            return 0.0;
        }
        (self.mode(mode).score.smota - self.global_best.smota) / gap
    }
}

/// Evaluates baselines and `policy` in all three modes on the test split.
pub fn policy_report(policy: &dyn Policy, ds: &OctopusDataset) -> Result<PolicyReport> {
    policy_report_modes(policy, ds, &EvalMode::ALL)
}

/// Like [`policy_report`], restricted to `modes`.
pub fn policy_report_modes(policy: &dyn Policy, ds: &OctopusDataset, modes: &[EvalMode]) -> Result<PolicyReport> {
    let g = policy.h_global();
    let octopus = EvalMode::ALL
        .into_iter()
        .filter(|m| modes.contains(m))
        .map(|m| evaluate(policy, ds, m, Split::Test))
        .collect::<Result<_>>()?;
    Ok(PolicyReport {
        h_global: g,
        global_best: static_score(ds, Split::Test, g),
        optimal: crate::sweep::optimal_score(ds, Split::Test),
        optimal_prev: optimal_from_previous(ds, Split::Test, g),
        octopus,
    })
}

pub fn write_report_csv(path: &Path, report: &PolicyReport) -> Result<()> {
    let rows: Vec<Vec<String>> = report.rows().iter().map(|(n, p)| streaming_row(n, p)).collect();
    write_csv(path, &streaming_header(), &rows)
}

pub fn write_decisions_jsonl(path: &Path, decisions: &[DecisionRecord]) -> Result<()> {
    write_jsonl(path, decisions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub trials: usize,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
}

/// Wall-clock time to rank every configuration once, on the calling thread.
pub fn benchmark_inference(model: &PolicyModel, features: &EnvFeatures, trials: usize) -> Result<LatencyStats> {
    if trials == 0 {
        return Err(Error::invalid("trials must be positive"));
    }
    model.rank(features)?;
    let mut ms: Vec<f64> = (0..trials)
        .map(|_| {
            let t = Instant::now();
            let d = model.rank(features);
            std::hint::black_box(&d);
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    ms.sort_by(f64::total_cmp);
    let q = |p: f64| ms[((p * (trials - 1) as f64).round() as usize).min(trials - 1)];
    Ok(LatencyStats { trials, p50_ms: q(0.5), p99_ms: q(0.99), mean_ms: ms.iter().sum::<f64>() / trials as f64 })
}
