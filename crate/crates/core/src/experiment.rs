//! File-backed experiment runs: one resolved configuration drives corpus
//! generation, the sweep, training, evaluation, analysis and benchmarking.
//!
//! Layout under `output_dir`:
//!
//! ```text
//! corpus/    manifest.json, scenarios/<id>.json
//! dataset/   manifest.json, records.jsonl, features.jsonl, parts/
//! model/     policy.json, importance.csv
//! eval/      report.csv, gap.csv, hybrid.csv, decisions-<mode>.jsonl, ...
//! analysis/  score_space.csv, centroids.csv, heatmap-*.csv, pareto.csv, ...
//! bench/     latency.json
//! ```
//!
//! Every directory also gets `run.json`: the resolved config and the
//! SHA-256 of each input file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    action_heatmap, build_score_space, group_importances, importance_table, kmeans, latency_scaling_report,
    pareto_weighted_optimal, pareto_weights, write_centroids_csv, write_group_importance_csv, write_heatmap_csv,
    write_importance_csv, write_latency_scaling_csv, write_pareto_csv, write_score_space_csv, ImportanceRow,
    DEFAULT_K, DEFAULT_RESTARTS,
};
use crate::error::{Error, Result};
use crate::featext::{feature_group, feature_names, EvalMode};
use crate::forest::ForestHyperparams;
use crate::io::{fmt_f, read_json, sha256_file, sha256_hex, write_csv, write_json};
use crate::pipesim::{varying_metaparameters, DetectorProfile, GridKind, Metaparameter};
use crate::policy::{
    benchmark_inference, policy_report_modes, train, train_classifier, write_decisions_jsonl, write_report_csv,
    ClassifierKind, Clipping, LatencyStats, Policy, SavedPolicy, TargetKind, TrainOptions, DEFAULT_EPSILON,
};
use crate::scenegen::{generate_corpus, read_corpus, write_corpus, CorpusSpec, Split};
use crate::streameval::DEFAULT_IOU_THRESHOLD;
use crate::sweep::{
    build_dataset_resumable, hybrid_policy_table, load_dataset, metaparameter_contribution, optimal_per_segment,
    opportunity_gap, streaming_header, streaming_row, write_contribution_csv, write_gap_csv, write_hybrid_csv,
    OctopusDataset, SweepOptions,
};

/// Which learner `train` fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Regression on baseline-subtracted, clipped scores (the default).
    Relative,
    /// Regression on raw scores.
    Absolute,
    /// One classifier per metaparameter trained on the joint optimum.
    ClassifyJoint,
    /// One classifier per metaparameter trained on its own optimum.
    ClassifyIndependent,
    /// One classifier over whole configurations.
    ClassifyJointSingle,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Relative,
        Variant::Absolute,
        Variant::ClassifyJoint,
        Variant::ClassifyIndependent,
        Variant::ClassifyJointSingle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Relative => "relative",
            Variant::Absolute => "absolute",
            Variant::ClassifyJoint => "classify-joint",
            Variant::ClassifyIndependent => "classify-independent",
            Variant::ClassifyJointSingle => "classify-joint-single",
        }
    }

    /// Forest preset used when the config does not override it.
    pub fn default_hyperparams(self) -> ForestHyperparams {
        match self {
            Variant::Relative | Variant::Absolute => ForestHyperparams::regression(),
            Variant::ClassifyJoint | Variant::ClassifyJointSingle => ForestHyperparams::classification_joint(),
            Variant::ClassifyIndependent => ForestHyperparams::classification_independent(),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    pub k: usize,
    pub restarts: usize,
    /// Number of λ decrements on the S-MOTA/S-MOTP curve.
    pub pareto_steps: usize,
    /// Extra latency scales to rerun sweep + policy at (needs the corpus).
    pub latency_scales: Vec<f64>,
    /// Train every variant and record the ablation table.
    pub ablation: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { k: DEFAULT_K, restarts: DEFAULT_RESTARTS, pareto_steps: 10, latency_scales: Vec::new(), ablation: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub grid: GridKind,
    /// Detector profile JSON; the built-in profile when absent.
    pub profile: Option<PathBuf>,
    pub delta_tau: f64,
    pub iou_threshold: f64,
    pub latency_scale: f64,
    pub epsilon: f64,
    pub clipping: Clipping,
    pub variant: Variant,
    /// Forest hyperparameters; the variant's preset (seeded with `seed`) when absent.
    pub hyperparams: Option<ForestHyperparams>,
    pub modes: Vec<EvalMode>,
    pub analysis: AnalysisOptions,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            corpus: CorpusSpec::default(),
            grid: GridKind::Default,
            profile: None,
            delta_tau: 1.0,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            latency_scale: 1.0,
            epsilon: DEFAULT_EPSILON,
            clipping: Clipping::Symmetric,
            variant: Variant::Relative,
            hyperparams: None,
            modes: EvalMode::ALL.to_vec(),
            analysis: AnalysisOptions::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// What a run directory records about how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    /// Input file (relative to `output_dir` when inside it) → SHA-256.
    pub inputs: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.latency_scale > 0.0 && self.latency_scale.is_finite()) {
            return Err(Error::invalid(format!("latency_scale must be positive, got {}", self.latency_scale)));
        }
        if !(self.delta_tau > 0.0) {
            return Err(Error::invalid("delta_tau must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.modes.is_empty() {
            return Err(Error::invalid("at least one evaluation mode is required"));
        }
        if let Some(hp) = &self.hyperparams {
            hp.validate()?;
        }
        Ok(())
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.output_dir.join("corpus")
    }
    pub fn dataset_dir(&self) -> PathBuf {
        self.output_dir.join("dataset")
    }
    pub fn model_dir(&self) -> PathBuf {
        self.output_dir.join("model")
    }
    pub fn model_path(&self) -> PathBuf {
        self.model_dir().join("policy.json")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.output_dir.join("eval")
    }
    pub fn analysis_dir(&self) -> PathBuf {
        self.output_dir.join("analysis")
    }
    pub fn bench_dir(&self) -> PathBuf {
        self.output_dir.join("bench")
    }

    pub fn load_profile(&self) -> Result<DetectorProfile> {
        match &self.profile {
            Some(p) => DetectorProfile::load(p),
            None => Ok(DetectorProfile::builtin()),
        }
    }

    pub fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            grid: self.grid,
            latency_scale: self.latency_scale,
            seed: self.seed,
            delta_tau: self.delta_tau,
            iou_threshold: self.iou_threshold,
            config_features: true,
        }
    }

    pub fn hyperparams_for(&self, variant: Variant) -> ForestHyperparams {
        match &self.hyperparams {
            Some(hp) if variant == self.variant => hp.clone(),
            _ => variant.default_hyperparams().with_seed(self.seed),
        }
    }

    pub fn train_options(&self, target: TargetKind) -> TrainOptions {
        let variant = if target == TargetKind::Absolute { Variant::Absolute } else { Variant::Relative };
        TrainOptions { target, epsilon: self.epsilon, clipping: self.clipping, hyperparams: self.hyperparams_for(variant) }
    }

    fn sha(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }

    fn write_run_record(&self, dir: &Path, command: &str, inputs: &[PathBuf]) -> Result<()> {
        let mut map = BTreeMap::new();
        for p in inputs {
            let key = p.strip_prefix(&self.output_dir).unwrap_or(p).to_string_lossy().replace('\\', "/");
            map.insert(key, sha256_file(p)?);
        }
        let rec = RunRecord {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.clone(),
            config_sha256: self.sha()?,
            inputs: map,
        };
        write_json(&dir.join("run.json"), &rec)
    }

    fn dataset_files(&self) -> Vec<PathBuf> {
        let d = self.dataset_dir();
        vec![d.join("manifest.json"), d.join("records.jsonl"), d.join("features.jsonl")]
    }

    fn profile_inputs(&self) -> Vec<PathBuf> {
        self.profile.iter().cloned().collect()
    }
}

fn ensure_exists(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} not found at {} (run the previous step first)", path.display())))
    }
}

fn remove_dir(path: &Path) -> Result<()> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| Error::File { path: path.to_path_buf(), source: e })?;
    }
    Ok(())
}

/// Generates the corpus. Refuses to touch an existing corpus unless `force`.
pub fn cmd_gen(cfg: &ExperimentConfig, force: bool) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = cfg.corpus_dir();
    if dir.exists() && fs::read_dir(&dir).map(|mut d| d.next().is_some()).unwrap_or(true) {
        if !force {
            return Err(Error::invalid(format!("{} already exists; pass --force to overwrite", dir.display())));
        }
        remove_dir(&dir)?;
    }
    let corpus = generate_corpus(&cfg.corpus, cfg.seed)?;
    write_corpus(&dir, &corpus)?;
    cfg.write_run_record(&dir, "gen", &[])?;
    info!("generated {} scenarios into {}", corpus.scenarios.len(), dir.display());
    Ok(dir)
}

/// Key identifying which sweep produced the stored partial runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PartsKey {
    options: SweepOptions,
    profile_sha256: String,
    corpus_sha256: String,
}

/// Runs the sweep, resuming from stored partial runs of the same sweep.
pub fn cmd_sweep(cfg: &ExperimentConfig, force: bool) -> Result<OctopusDataset> {
    cfg.validate()?;
    let corpus_manifest = cfg.corpus_dir().join("manifest.json");
    ensure_exists(&corpus_manifest, "corpus")?;
    let profile = cfg.load_profile()?;
    let corpus = read_corpus(&cfg.corpus_dir())?;
    let dir = cfg.dataset_dir();
    let key = PartsKey {
        options: cfg.sweep_options(),
        profile_sha256: sha256_hex(&serde_json::to_vec(&profile)?),
        corpus_sha256: sha256_file(&corpus_manifest)?,
    };
    let key_path = dir.join("parts").join("key.json");
    let stale = match read_json::<PartsKey>(&key_path) {
        Ok(k) => k != key,
        Err(_) => true,
    };
    if force || stale {
        remove_dir(&dir.join("parts"))?;
    }
    write_json(&key_path, &key)?;
    let ds = build_dataset_resumable(&corpus, &profile, &cfg.sweep_options(), &dir)?;
    let mut inputs = vec![corpus_manifest];
    inputs.extend(cfg.profile_inputs());
    cfg.write_run_record(&dir, "sweep", &inputs)?;
    info!("swept {} configurations over {} segments", ds.n_configs(), ds.segments.len());
    Ok(ds)
}

fn load_checked_dataset(cfg: &ExperimentConfig) -> Result<OctopusDataset> {
    ensure_exists(&cfg.dataset_dir().join("manifest.json"), "dataset")?;
    load_dataset(&cfg.dataset_dir())
}

/// Fits `variant` on the train split.
pub fn train_variant(ds: &OctopusDataset, cfg: &ExperimentConfig, variant: Variant) -> Result<SavedPolicy> {
    let hp = cfg.hyperparams_for(variant);
    Ok(match variant {
        Variant::Relative | Variant::Absolute => {
            let target = if variant == Variant::Absolute { TargetKind::Absolute } else { TargetKind::Relative };
            let opts = TrainOptions { target, epsilon: cfg.epsilon, clipping: cfg.clipping, hyperparams: hp };
            SavedPolicy::Regression(train(ds, &opts)?)
        }
        Variant::ClassifyJoint => SavedPolicy::Classifier(train_classifier(ds, ClassifierKind::Joint, &hp)?),
        Variant::ClassifyIndependent => {
            SavedPolicy::Classifier(train_classifier(ds, ClassifierKind::Independent, &hp)?)
        }
        Variant::ClassifyJointSingle => {
            SavedPolicy::Classifier(train_classifier(ds, ClassifierKind::JointSingle, &hp)?)
        }
    })
}

/// Per-input importances of any saved policy. Classifier heads only see the
/// environment features; their importances are averaged over heads.
pub fn policy_importances(p: &SavedPolicy) -> Vec<ImportanceRow> {
    match p {
        SavedPolicy::Regression(m) => importance_table(m),
        SavedPolicy::Classifier(c) => {
            let n = c.heads.len().max(1) as f64;
            feature_names()
                .into_iter()
                .enumerate()
                .map(|(i, name)| ImportanceRow {
                    name,
                    group: feature_group(i),
                    importance: c.heads.iter().map(|h| h.forest.feature_importances()[i]).sum::<f64>() / n,
                })
                .collect()
        }
    }
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<SavedPolicy> {
    cfg.validate()?;
    let ds = load_checked_dataset(cfg)?;
    let policy = train_variant(&ds, cfg, cfg.variant)?;
    let dir = cfg.model_dir();
    policy.save(&cfg.model_path())?;
    let imp = policy_importances(&policy);
    write_importance_csv(&dir.join("importance.csv"), &imp)?;
    write_group_importance_csv(&dir.join("importance_groups.csv"), &group_importances(&imp))?;
    cfg.write_run_record(&dir, "train", &cfg.dataset_files())?;
    info!("trained {} policy (h_global = {})", cfg.variant.as_str(), policy.h_global());
    Ok(policy)
}

fn load_model_for(cfg: &ExperimentConfig, ds: &OctopusDataset) -> Result<SavedPolicy> {
    ensure_exists(&cfg.model_path(), "model")?;
    let policy = SavedPolicy::load(&cfg.model_path())?;
    if policy.grid() != ds.grid() {
        return Err(Error::invalid("model was trained on a different configuration grid"));
    }
    Ok(policy)
}

/// Writes the Table-1/2/3 style reports and the decisions logs.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<crate::policy::PolicyReport> {
    cfg.validate()?;
    let ds = load_checked_dataset(cfg)?;
    let policy = load_model_for(cfg, &ds)?;
    let dir = cfg.eval_dir();
    let report = policy_report_modes(&policy, &ds, &cfg.modes)?;
    write_report_csv(&dir.join("report.csv"), &report)?;
    write_json(&dir.join("report.json"), &report)?;
    for r in &report.octopus {
        write_decisions_jsonl(&dir.join(format!("decisions-{}.jsonl", r.mode.as_str())), &r.decisions)?;
    }
    write_gap_csv(&dir.join("gap.csv"), &opportunity_gap(&ds)?)?;
    write_hybrid_csv(&dir.join("hybrid.csv"), &hybrid_policy_table(&ds)?)?;
    if varying_metaparameters(ds.grid()).len() == Metaparameter::ALL.len() {
        write_contribution_csv(&dir.join("contribution.csv"), &metaparameter_contribution(&ds)?)?;
    }
    let mut inputs = cfg.dataset_files();
    inputs.push(cfg.model_path());
    cfg.write_run_record(&dir, "eval", &inputs)?;
    Ok(report)
}

/// One row of the variant ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub mode: EvalMode,
    pub score: crate::sweep::PolicyScore,
}

/// Trains every variant and evaluates each in `modes` on the test split.
pub fn ablation(ds: &OctopusDataset, cfg: &ExperimentConfig, modes: &[EvalMode]) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for v in Variant::ALL {
        let p = train_variant(ds, cfg, v)?;
        for m in modes {
            let r = crate::policy::evaluate(&p, ds, *m, Split::Test)?;
            rows.push(AblationRow { variant: v, mode: *m, score: r.score });
        }
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut header = vec!["Variant".to_string(), "Mode".into()];
    header.extend(streaming_header().into_iter().skip(1));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut out = vec![r.variant.as_str().to_string()];
            out.extend(streaming_row(r.mode.as_str(), &r.score));
            out
        })
        .collect();
    write_csv(path, &header, &body)
}

pub fn cmd_analyze(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let ds = load_checked_dataset(cfg)?;
    let policy = load_model_for(cfg, &ds)?;
    let dir = cfg.analysis_dir();
    let h = policy.h_global();

    let space = build_score_space(&ds, h);
    write_score_space_csv(&dir.join("score_space.csv"), &space, &ds)?;
    let (_, rows) = space.unflagged();
    if !rows.is_empty() {
        let km = kmeans(&rows, cfg.analysis.k.min(rows.len()), cfg.seed, cfg.analysis.restarts)?;
        write_centroids_csv(&dir.join("centroids.csv"), &space, &km)?;
    }

    let opt = optimal_per_segment(&ds);
    let test = ds.defined(Some(Split::Test));
    let opt_choices: Vec<usize> = test.iter().map(|&i| opt[i].expect("defined")).collect();
    if !opt_choices.is_empty() {
        write_heatmap_csv(&dir.join("heatmap-optimal.csv"), &action_heatmap(&opt_choices, ds.grid())?)?;
    }
    for &mode in &cfg.modes {
        let r = crate::policy::evaluate(&policy, &ds, mode, Split::Test)?;
        let choices: Vec<usize> =
            r.decisions.iter().filter(|d| ds.segments[d.segment].defined).map(|d| d.chosen_config).collect();
        if !choices.is_empty() {
            write_heatmap_csv(&dir.join(format!("heatmap-{}.csv", mode.as_str())), &action_heatmap(&choices, ds.grid())?)?;
        }
    }

    let pareto = pareto_weighted_optimal(&ds, Split::Test, &pareto_weights(cfg.analysis.pareto_steps))?;
    write_pareto_csv(&dir.join("pareto.csv"), &pareto)?;

    let imp = policy_importances(&policy);
    write_importance_csv(&dir.join("importance.csv"), &imp)?;
    write_group_importance_csv(&dir.join("importance_groups.csv"), &group_importances(&imp))?;

    let mut inputs = cfg.dataset_files();
    inputs.push(cfg.model_path());

    if !cfg.analysis.latency_scales.is_empty() {
        let corpus_manifest = cfg.corpus_dir().join("manifest.json");
        ensure_exists(&corpus_manifest, "corpus")?;
        let corpus = read_corpus(&cfg.corpus_dir())?;
        let profile = cfg.load_profile()?;
        for &scale in &cfg.analysis.latency_scales {
            let r = latency_scaling_report(&corpus, &profile, &cfg.sweep_options(), &cfg.train_options(TargetKind::Relative), scale)?;
            write_latency_scaling_csv(&dir.join(format!("latency-scale-{}.csv", fmt_f(scale, 3))), &r)?;
            info!("latency scale {scale}: gap delta {:+.3}", r.gap_delta);
        }
        inputs.push(corpus_manifest);
        inputs.extend(cfg.profile_inputs());
    }
    if cfg.analysis.ablation {
        write_ablation_csv(&dir.join("ablation.csv"), &ablation(&ds, cfg, &cfg.modes)?)?;
    }
    cfg.write_run_record(&dir, "analyze", &inputs)?;
    Ok(())
}

/// Times ranking all configurations for the first defined test segment.
pub fn cmd_bench(cfg: &ExperimentConfig, trials: usize) -> Result<LatencyStats> {
    cfg.validate()?;
    let ds = load_checked_dataset(cfg)?;
    let SavedPolicy::Regression(model) = load_model_for(cfg, &ds)? else {
        return Err(Error::invalid("bench needs a regression policy"));
    };
    let test = ds.defined(Some(Split::Test));
    let all = ds.defined(None);
    let seg = test
        .first()
        .or(all.first())
        .copied()
        .ok_or_else(|| Error::invalid("dataset has no defined segments"))?;
    let stats = benchmark_inference(&model, &ds.segments[seg].gt_features, trials)?;
    let dir = cfg.bench_dir();
    write_json(&dir.join("latency.json"), &stats)?;
    let mut inputs = cfg.dataset_files();
    inputs.push(cfg.model_path());
    cfg.write_run_record(&dir, "bench", &inputs)?;
    info!("ranking {} configs: p50 {:.3} ms, p99 {:.3} ms", model.grid.len(), stats.p50_ms, stats.p99_ms);
    Ok(stats)
}
