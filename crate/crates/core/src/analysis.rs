//! Explainability reports: score-space clustering, action heatmaps, the
//! S-MOTA/S-MOTP trade-off curve, latency scaling and grouped importances.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featext::{feature_group, feature_names};
use crate::io::{fmt_f, write_csv};
use crate::pipesim::{DetectorProfile, ModelKind, PipelineConfig};
use crate::policy::{config_encoding_names, policy_report, train, PolicyModel, PolicyReport, TrainOptions, CONFIG_ENCODING_DIM};
use crate::rng::{derive_seed, stream};
use crate::scenegen::{Corpus, Split};
use crate::sweep::{build_dataset, opportunity_gap, select_best, OctopusDataset, OpportunityGap, SweepOptions};

pub const DEFAULT_K: usize = 8;
pub const DEFAULT_RESTARTS: usize = 10;
const MAX_LLOYD_ITERS: usize = 300;

/// Per-segment score-space vectors.
///
/// Columns: `S[c]` = S-MOTA(c) − S-MOTA(h_global) for every grid index c,
/// then `D[c]` = D(c) − D(h_global) in the same order. Each row is z-scored
/// on its own; rows with zero variance keep their raw (all-zero) values and
/// are flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpaceMatrix {
    pub h_global: usize,
    pub columns: Vec<String>,
    /// Dataset segment index of each row (defined segments only).
    pub segments: Vec<usize>,
    pub rows: Vec<Vec<f64>>,
    pub flagged: Vec<bool>,
}

impl ScoreSpaceMatrix {
    /// Rows usable for clustering, with their segment indices.
    pub fn unflagged(&self) -> (Vec<usize>, Vec<Vec<f64>>) {
        self.rows
            .iter()
            .zip(&self.segments)
            .zip(&self.flagged)
            .filter(|(_, f)| !**f)
            .map(|((r, s), _)| (*s, r.clone()))
            .unzip()
    }
}

pub fn build_score_space(ds: &OctopusDataset, h_global: usize) -> ScoreSpaceMatrix {
    let n = ds.n_configs();
    let columns = (0..n).map(|c| format!("S[{c}]")).chain((0..n).map(|c| format!("D[{c}]"))).collect();
    let mut segments = Vec::new();
    let mut rows = Vec::new();
    let mut flagged = Vec::new();
    for i in ds.defined(None) {
        let recs = &ds.segments[i].records;
        let g = &recs[h_global];
        let mut row: Vec<f64> = recs.iter().map(|r| r.smota - g.smota).chain(recs.iter().map(|r| r.d - g.d)).collect();
        let m = row.len() as f64;
        let mean = row.iter().sum::<f64>() / m;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
        let flat = var <= 1e-18;
        if !flat {
            let sd = var.sqrt();
            for v in &mut row {
                *v = (*v - mean) / sd;
            }
        }
        segments.push(i);
        rows.push(row);
        flagged.push(flat);
    }
    ScoreSpaceMatrix { h_global, columns, segments, rows, flagged }
}

pub fn write_score_space_csv(path: &Path, m: &ScoreSpaceMatrix, ds: &OctopusDataset) -> Result<()> {
    let mut header = vec!["scenario".to_string(), "tau".into(), "flagged".into()];
    header.extend(m.columns.iter().cloned());
    let rows: Vec<Vec<String>> = m
        .rows
        .iter()
        .zip(&m.segments)
        .zip(&m.flagged)
        .map(|((r, &i), f)| {
            let s = &ds.segments[i];
            let mut out = vec![s.scenario.clone(), s.tau.to_string(), f.to_string()];
            out.extend(r.iter().map(|v| fmt_f(*v, 6)));
            out
        })
        .collect();
    write_csv(path, &header, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn kmeans_pp(data: &[Vec<f64>], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream(seed, &[]);
    let mut chosen = vec![rng.random_range(0..data.len())];
    let mut d2: Vec<f64> = data.iter().map(|x| sq_dist(x, &data[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if u < w {
                        break;
                    }
                    u -= w;
                }
            }
            pick.expect("positive total")
        } else {
            // every point coincides with a centre: take any unused row
            (0..data.len()).find(|i| !chosen.contains(i)).expect("k <= rows")
        };
        chosen.push(next);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(x, &data[next]));
        }
    }
    chosen.into_iter().map(|i| data[i].clone()).collect()
}

fn lloyd(data: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeansResult {
    let k = centroids.len();
    let dim = data[0].len();
    let mut assignments = vec![usize::MAX; data.len()];
    let mut history = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        let mut inertia = 0.0;
        let mut dists = vec![0.0; data.len()];
        for (i, x) in data.iter().enumerate() {
            let (j, d) = nearest(x, &centroids);
            changed |= assignments[i] != j;
            assignments[i] = j;
            dists[i] = d;
            inertia += d;
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &j) in data.iter().zip(&assignments) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(x) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // empty cluster: move it onto the worst-served point
                let far = (0..data.len()).max_by(|&a, &b| dists[a].total_cmp(&dists[b])).expect("rows");
                centroids[j] = data[far].clone();
                dists[far] = 0.0;
            }
        }
    }
    let inertia = *history.last().expect("at least one iteration");
    KMeansResult { centroids, assignments, inertia, history }
}

/// k-means++ seeded Lloyd iterations; the best of `restarts` runs by inertia.
pub fn kmeans(data: &[Vec<f64>], k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k == 0 || k > data.len() {
        return Err(Error::invalid(format!("k = {k} needs 1 <= k <= {} rows", data.len())));
    }
    if data.iter().any(|r| r.len() != data[0].len()) {
        return Err(Error::invalid("ragged k-means input"));
    }
    let runs: Vec<KMeansResult> = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| lloyd(data, kmeans_pp(data, k, derive_seed(seed, &[r]))))
        .collect();
    // first run wins ties, independent of thread scheduling
    let mut best = None::<KMeansResult>;
    for r in runs {
        if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn write_centroids_csv(path: &Path, m: &ScoreSpaceMatrix, km: &KMeansResult) -> Result<()> {
    let mut header = vec!["cluster".to_string(), "size".into()];
    header.extend(m.columns.iter().cloned());
    let rows: Vec<Vec<String>> = km
        .centroids
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let size = km.assignments.iter().filter(|&&a| a == j).count();
            let mut out = vec![j.to_string(), size.to_string()];
            out.extend(c.iter().map(|v| fmt_f(*v, 6)));
            out
        })
        .collect();
    write_csv(path, &header, &rows)
}

/// Choice frequency over (model, max_age) cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionHeatmap {
    pub models: Vec<ModelKind>,
    pub max_ages: Vec<u32>,
    /// `freq[model row][max_age column]`.
    pub freq: Vec<Vec<f64>>,
}

pub fn action_heatmap(choices: &[usize], grid: &[PipelineConfig]) -> Result<ActionHeatmap> {
    if choices.is_empty() {
        return Err(Error::invalid("no decisions for heatmap"));
    }
    let mut models: Vec<ModelKind> = grid.iter().map(|c| c.model).collect();
    models.sort();
    models.dedup();
    let mut max_ages: Vec<u32> = grid.iter().map(|c| c.max_age).collect();
    max_ages.sort();
    max_ages.dedup();
    let mut freq = vec![vec![0.0; max_ages.len()]; models.len()];
    for &c in choices {
        let cfg = grid.get(c).ok_or_else(|| Error::invalid(format!("config {c} outside grid")))?;
        let r = models.binary_search(&cfg.model).expect("model from grid");
        let a = max_ages.binary_search(&cfg.max_age).expect("max_age from grid");
        freq[r][a] += 1.0;
    }
    let n = choices.len() as f64;
    for v in freq.iter_mut().flatten() {
        *v /= n;
    }
    Ok(ActionHeatmap { models, max_ages, freq })
}

pub fn write_heatmap_csv(path: &Path, h: &ActionHeatmap) -> Result<()> {
    let mut header = vec!["model".to_string()];
    header.extend(h.max_ages.iter().map(|a| format!("max_age={a}")));
    let rows: Vec<Vec<String>> = h
        .models
        .iter()
        .zip(&h.freq)
        .map(|(m, r)| std::iter::once(m.to_string()).chain(r.iter().map(|v| fmt_f(*v, 6))).collect())
        .collect();
    write_csv(path, &header, &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub lambda: f64,
    pub smota: f64,
    pub smotp: f64,
}

/// Optimal policies for the scalarization λ·S-MOTA + (1−λ)·S-MOTP, scored on
/// the defined segments of `split`. Ties follow the cost order, as for the
/// plain optimum.
pub fn pareto_weighted_optimal(ds: &OctopusDataset, split: Split, weights: &[f64]) -> Result<Vec<ParetoPoint>> {
    let idx = ds.defined(Some(split));
    if idx.is_empty() {
        return Err(Error::invalid(format!("no defined {split:?} segments")));
    }
    let order = ds.cost_order();
    weights
        .iter()
        .map(|&lambda| {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::invalid(format!("weight {lambda} outside [0, 1]")));
            }
            let (mut a, mut b) = (0.0, 0.0);
            for &i in &idx {
                let recs = &ds.segments[i].records;
                let c = select_best(&order, |c| lambda * recs[c].smota + (1.0 - lambda) * recs[c].s_motp);
                a += recs[c].smota;
                b += recs[c].s_motp;
            }
            let n = idx.len() as f64;
            Ok(ParetoPoint { lambda, smota: a / n, smotp: b / n })
        })
        .collect()
}

/// λ from 1 down to 0 in `steps` equal decrements.
pub fn pareto_weights(steps: usize) -> Vec<f64> {
    let steps = steps.max(1);
    (0..=steps).map(|i| 1.0 - i as f64 / steps as f64).collect()
}

pub fn write_pareto_csv(path: &Path, pts: &[ParetoPoint]) -> Result<()> {
    let header = vec!["lambda".to_string(), "S-MOTA".into(), "S-MOTP".into()];
    let rows: Vec<Vec<String>> =
        pts.iter().map(|p| vec![fmt_f(p.lambda, 4), fmt_f(p.smota, 4), fmt_f(p.smotp, 4)]).collect();
    write_csv(path, &header, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledRun {
    pub latency_scale: f64,
    pub gap: OpportunityGap,
    pub report: PolicyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyScalingReport {
    pub baseline: ScaledRun,
    pub scaled: ScaledRun,
    /// Opportunity gap at `scaled` minus the gap at scale 1.
    pub gap_delta: f64,
    /// Closed-loop policy gain over the global best, scaled minus baseline.
    pub policy_gain_delta: f64,
}

fn scaled_run(corpus: &Corpus, profile: &DetectorProfile, sweep: &SweepOptions, train_opts: &TrainOptions) -> Result<ScaledRun> {
    let ds = build_dataset(corpus, profile, sweep)?;
    let gap = opportunity_gap(&ds)?;
    let model = train(&ds, train_opts)?;
    let report = policy_report(&model, &ds)?;
    Ok(ScaledRun { latency_scale: sweep.latency_scale, gap, report })
}

/// Reruns sweep, training and evaluation with every latency multiplied by
/// `scale`, next to the same pipeline at scale 1.
pub fn latency_scaling_report(
    corpus: &Corpus,
    profile: &DetectorProfile,
    sweep: &SweepOptions,
    train_opts: &TrainOptions,
    scale: f64,
) -> Result<LatencyScalingReport> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("latency scale must be positive, got {scale}")));
    }
    let baseline = scaled_run(corpus, profile, &SweepOptions { latency_scale: 1.0, ..sweep.clone() }, train_opts)?;
    let scaled = if scale == 1.0 {
        baseline.clone()
    } else {
        scaled_run(corpus, profile, &SweepOptions { latency_scale: scale, ..sweep.clone() }, train_opts)?
    };
    let gain = |r: &ScaledRun| r.report.mode(crate::featext::EvalMode::ClosedLoop).score.smota - r.report.global_best.smota;
    Ok(LatencyScalingReport {
        gap_delta: scaled.gap.gap - baseline.gap.gap,
        policy_gain_delta: gain(&scaled) - gain(&baseline),
        baseline,
        scaled,
    })
}

pub fn write_latency_scaling_csv(path: &Path, r: &LatencyScalingReport) -> Result<()> {
    let header: Vec<String> = ["latency_scale", "global_best", "optimal", "gap", "closed_loop", "gap_closed"]
        .map(String::from)
        .to_vec();
    let row = |s: &ScaledRun| {
        vec![
            fmt_f(s.latency_scale, 4),
            fmt_f(s.report.global_best.smota, 4),
            fmt_f(s.report.optimal.smota, 4),
            fmt_f(s.gap.gap, 4),
            fmt_f(s.report.mode(crate::featext::EvalMode::ClosedLoop).score.smota, 4),
            fmt_f(s.report.gap_closed(crate::featext::EvalMode::ClosedLoop), 4),
        ]
    };
    write_csv(path, &header, &[row(&r.baseline), row(&r.scaled)])
}

/// Name and coarse group of every policy input column.
pub fn policy_input_names() -> Vec<(String, String)> {
    config_encoding_names()
        .into_iter()
        .map(|n| (n, "configuration".to_string()))
        .chain(feature_names().into_iter().enumerate().map(|(i, n)| (n, feature_group(i))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub name: String,
    pub group: String,
    pub importance: f64,
}

/// Per-input importances of a regression policy, in input order.
pub fn importance_table(model: &PolicyModel) -> Vec<ImportanceRow> {
    policy_input_names()
        .into_iter()
        .zip(model.forest.feature_importances())
        .map(|((name, group), &importance)| ImportanceRow { name, group, importance })
        .collect()
}

/// Importances summed per group, largest first (name order on ties).
pub fn group_importances(rows: &[ImportanceRow]) -> Vec<(String, f64)> {
    let mut acc: BTreeMap<&str, f64> = BTreeMap::new();
    for r in rows {
        *acc.entry(&r.group).or_default() += r.importance;
    }
    let mut out: Vec<(String, f64)> = acc.into_iter().map(|(g, v)| (g.to_string(), v)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out
}

/// Importances of the environment features alone, renormalized to sum to 1.
pub fn feature_only_importances(rows: &[ImportanceRow]) -> Vec<ImportanceRow> {
    let env = &rows[CONFIG_ENCODING_DIM.min(rows.len())..];
    let total: f64 = env.iter().map(|r| r.importance).sum();
    env.iter()
        .map(|r| ImportanceRow { importance: if total > 0.0 { r.importance / total } else { 0.0 }, ..r.clone() })
        .collect()
}

pub fn write_importance_csv(path: &Path, rows: &[ImportanceRow]) -> Result<()> {
    let header = vec!["feature".to_string(), "group".into(), "importance".into()];
    let body: Vec<Vec<String>> =
        rows.iter().map(|r| vec![r.name.clone(), r.group.clone(), fmt_f(r.importance, 8)]).collect();
    write_csv(path, &header, &body)
}

pub fn write_group_importance_csv(path: &Path, groups: &[(String, f64)]) -> Result<()> {
    let header = vec!["group".to_string(), "importance".into()];
    let body: Vec<Vec<String>> = groups.iter().map(|(g, v)| vec![g.clone(), fmt_f(*v, 8)]).collect();
    write_csv(path, &header, &body)
}
