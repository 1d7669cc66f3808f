//! Property tests for the invariants of each module.

mod common;

use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use common::{toy_dataset, ToySeg};
use streamperf_core::analysis::{action_heatmap, build_score_space, kmeans};
use streamperf_core::featext::{
    extract_all, percentile, summarize, EnvFeatures, TrackHistory, FEATURE_DIM, FEATURE_LAYOUT_VERSION, N_BINS,
    STATS_PER_BIN,
};
use streamperf_core::forest::{Forest, ForestHyperparams};
use streamperf_core::pipesim::{
    config_grid, hungarian, run_pipeline, DetectorProfile, GridKind, ModelKind, PipelineConfig, TimedOutput,
};
use streamperf_core::policy::{decide, evaluate_with, tie_order, Decision};
use streamperf_core::scenegen::{generate_scenario, slice_segments, Archetype, FrameSequence, ScenarioSpec, Split};
use streamperf_core::streameval::{score_run, MotAccumulator};
use streamperf_core::sweep::{optimal_per_segment, scene_context, select_best};
use streamperf_core::{iou, BBox};

const ARCHETYPES: [Archetype; 5] = [
    Archetype::IntersectionStop,
    Archetype::HighwayCruise,
    Archetype::EgoTurn,
    Archetype::OcclusionCorridor,
    Archetype::Mixed,
];

fn short_spec(archetype: Archetype, duration: f64) -> ScenarioSpec {
    let mut spec = ScenarioSpec::new("p", archetype);
    spec.duration = duration;
    spec
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.0..200.0f64, 0.0..200.0f64, 5.0..80.0f64, 5.0..80.0f64).prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h))
}

/// Minimum total cost over all maximal matchings (rows <= cols).
fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[row][c] + go(cost, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    let cols = cost.first().map_or(0, Vec::len);
    if cost.len() <= cols {
        go(cost, 0, &mut vec![false; cols])
    } else {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| cost.iter().map(|r| r[j]).collect()).collect();
        go(&t, 0, &mut vec![false; cost.len()])
    }
}

/// Per-lane objects moving at constant velocity; lanes never overlap.
fn lane_sequence(n_frames: usize, objects: &[(f64, f64, f64, f64)]) -> FrameSequence {
    let frames = (0..n_frames)
        .map(|k| {
            objects
                .iter()
                .enumerate()
                .map(|(i, &(x0, vx, w, h))| (i as u64 + 1, BBox::new(x0 + vx * k as f64, 100.0 + 200.0 * i as f64, w, h)))
                .collect()
        })
        .collect();
    FrameSequence { frame_rate: 10.0, image_size: (1920.0, 1280.0), frames }
}

fn check_schedule(outputs: &[TimedOutput], strict_time: bool) {
    for w in outputs.windows(2) {
        assert!(w[1].input_frame > w[0].input_frame, "input frames not increasing");
        if strict_time {
            assert!(w[1].available_at > w[0].available_at, "available_at not strictly increasing");
        } else {
            assert!(w[1].available_at >= w[0].available_at, "available_at decreased");
        }
    }
}

/// A track id, once gone from the outputs, never comes back.
fn check_ids_not_reused(outputs: &[TimedOutput]) {
    let mut last_seen: HashMap<u64, usize> = HashMap::new();
    for (k, o) in outputs.iter().enumerate() {
        let ids: HashSet<u64> = o.tracks.iter().map(|t| t.id).collect();
        assert_eq!(ids.len(), o.tracks.len(), "duplicate id within one output");
        for id in ids {
            if let Some(&prev) = last_seen.get(&id) {
                assert_eq!(prev + 1, k, "track id {id} reappeared after a gap");
            }
            last_seen.insert(id, k);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    // ---- scenegen ----

    #[test]
    fn scenario_generation_is_deterministic(seed in any::<u64>(), a in 0usize..5) {
        let spec = short_spec(ARCHETYPES[a], 4.0);
        let x = serde_json::to_string(&generate_scenario(&spec, seed).unwrap()).unwrap();
        let y = serde_json::to_string(&generate_scenario(&spec, seed).unwrap()).unwrap();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn segments_partition_a_prefix(seed in 0u64..1000, dur in 1.0..12.0f64, rate_i in 0usize..3, dtau in 0.2..3.0f64) {
        let mut spec = short_spec(Archetype::Mixed, dur);
        spec.frame_rate = [10.0, 15.0, 30.0][rate_i];
        let s = generate_scenario(&spec, seed).unwrap();
        match slice_segments(&s, dtau) {
            Ok(segs) => {
                let len = (dtau * spec.frame_rate).round() as usize;
                let mut next = 0;
                for (i, g) in segs.iter().enumerate() {
                    prop_assert_eq!(g.index, i);
                    prop_assert_eq!(g.start, next);
                    prop_assert_eq!(g.len(), len);
                    next = g.end;
                }
                prop_assert!(next <= s.frame_count());
                prop_assert!(s.frame_count() - next < len);
            }
            Err(_) => prop_assert!((dtau * spec.frame_rate).round() < 2.0),
        }
    }

    // ---- pipesim ----

    #[test]
    fn pipeline_schedule_ids_and_determinism(seed in 0u64..10_000, a in 0usize..5, c in 0usize..486, scale in 0.2..3.0f64) {
        let s = generate_scenario(&short_spec(ARCHETYPES[a], 4.0), seed).unwrap();
        let frames = s.frame_sequence();
        let cfg = config_grid(GridKind::Extended)[c];
        let profile = DetectorProfile::builtin();
        let out = run_pipeline(&frames, &cfg, &profile, scale, seed).unwrap();
        check_schedule(&out, cfg.reinit_freq == 1);
        check_ids_not_reused(&out);
        let again = run_pipeline(&frames, &cfg, &profile, scale, seed).unwrap();
        prop_assert_eq!(out, again);
    }

    #[test]
    fn noiseless_pipeline_reproduces_ground_truth(
        objects in prop::collection::vec((200.0..1500.0f64, -8.0..8.0f64, 30.0..120.0f64, 30.0..90.0f64), 1..5),
        m in 0usize..6,
        max_age in 1u32..8,
    ) {
        let frames = lane_sequence(30, &objects);
        let mut profile = DetectorProfile::noiseless();
        // a near-zero measurement variance makes the posterior equal the detection
        profile.kalman.measurement_noise = [1e-12; 4];
        let cfg = PipelineConfig { model: ModelKind::ALL[m], max_age, conf_threshold: 0.4, min_match_iou: 0.1, reinit_freq: 1 };
        let out = run_pipeline(&frames, &cfg, &profile, 1.0, 3).unwrap();
        let mut bijection: HashMap<u64, u64> = HashMap::new();
        for o in &out {
            let gt = &frames.frames[o.input_frame];
            prop_assert_eq!(o.tracks.len(), gt.len());
            let cost: Vec<Vec<f64>> =
                gt.iter().map(|(_, g)| o.tracks.iter().map(|t| 1.0 - iou(g, &t.bbox)).collect()).collect();
            for (gi, ti) in hungarian(&cost).pairs() {
                let (g, t) = (&gt[gi].1, &o.tracks[ti].bbox);
                prop_assert!((g.cx - t.cx).abs() < 1e-6 && (g.cy - t.cy).abs() < 1e-6);
                prop_assert!((g.w - t.w).abs() < 1e-6 && (g.h - t.h).abs() < 1e-6);
                let prev = bijection.insert(gt[gi].0, o.tracks[ti].id);
                prop_assert!(prev.is_none_or(|p| p == o.tracks[ti].id), "id bijection changed");
            }
        }
        let ids: HashSet<u64> = bijection.values().copied().collect();
        prop_assert_eq!(ids.len(), bijection.len());
    }

    // ---- streameval ----

    #[test]
    fn metric_bounds_hold(seed in 0u64..10_000, a in 0usize..5, c in 0usize..18) {
        let s = generate_scenario(&short_spec(ARCHETYPES[a], 4.0), seed).unwrap();
        let frames = s.frame_sequence();
        let cfg = config_grid(GridKind::Default)[c];
        let out = run_pipeline(&frames, &cfg, &DetectorProfile::builtin(), 1.0, seed).unwrap();
        let segs = slice_segments(&s, 1.0).unwrap();
        for r in score_run(&segs, &out, &frames, c, 0.4).iter().map(|s| s.record()) {
            prop_assert!(r.mota <= 100.0 && r.smota <= 100.0);
            prop_assert!((0.0..=100.0).contains(&r.motp) && (0.0..=100.0).contains(&r.s_motp));
            prop_assert!((r.smota - (r.mota - r.d)).abs() < 1e-9);
            prop_assert!(r.s_matches <= r.s_gt);
        }
    }

    #[test]
    fn matching_is_optimal(gt in prop::collection::vec(arb_box(), 0..7), preds in prop::collection::vec(arb_box(), 0..7)) {
        let cost: Vec<Vec<f64>> = gt.iter().map(|g| preds.iter().map(|p| 1.0 - iou(g, p)).collect()).collect();
        let a = hungarian(&cost);
        let got: f64 = a.pairs().map(|(r, c)| cost[r][c]).sum();
        if !gt.is_empty() && !preds.is_empty() {
            prop_assert!((got - brute_force_min(&cost)).abs() < 1e-9);
            prop_assert!((a.cost - got).abs() < 1e-9);
            prop_assert_eq!(a.pairs().count(), gt.len().min(preds.len()));
        }
        // the accumulator counts exactly the optimal pairs above threshold
        let tracks: Vec<_> = preds
            .iter()
            .enumerate()
            .map(|(i, b)| streamperf_core::pipesim::TrackBox { id: i as u64, bbox: *b })
            .collect();
        let gt_ids: Vec<(u64, BBox)> = gt.iter().enumerate().map(|(i, b)| (i as u64, *b)).collect();
        let mut acc = MotAccumulator::new(0.4);
        acc.update(&gt_ids, &tracks);
        let st = acc.finish();
        prop_assert_eq!(st.fn_ + st.matches, gt.len());
        prop_assert_eq!(st.fp + st.matches, preds.len());
        prop_assert!(st.matches <= a.pairs().filter(|&(r, c)| 1.0 - cost[r][c] >= 0.4).count());
    }

    // ---- featext ----

    #[test]
    fn percentile_matches_sort_oracle(mut xs in prop::collection::vec(-1e3..1e3f64, 1..60), q in 0.0..=1.0f64) {
        xs.sort_by(f64::total_cmp);
        let got = percentile(&xs, q);
        // oracle: rank-weighted average of the two neighbouring order statistics
        let h = q * (xs.len() - 1) as f64;
        let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
        let want = xs[lo] * (1.0 - (h - lo as f64)) + xs[hi] * (h - lo as f64);
        prop_assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()));
        prop_assert!(got >= xs[0] - 1e-12 && got <= xs[xs.len() - 1] + 1e-12);
        let mut v = xs.clone();
        let [p10, mean, p90] = summarize(&mut v);
        prop_assert!(p10 <= p90 + 1e-12);
        prop_assert!((mean - xs.iter().sum::<f64>() / xs.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn features_round_trip(values in prop::collection::vec(-1e6..1e6f64, FEATURE_DIM)) {
        let f = EnvFeatures { layout_version: FEATURE_LAYOUT_VERSION, values };
        let back: EnvFeatures = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn mask_flags_match_empty_bins(seed in 0u64..10_000, a in 0usize..5, c in 0usize..18, use_gt in any::<bool>()) {
        let s = generate_scenario(&short_spec(ARCHETYPES[a], 4.0), seed).unwrap();
        let frames = s.frame_sequence();
        let history = if use_gt {
            TrackHistory::from_ground_truth(&frames)
        } else {
            let cfg = config_grid(GridKind::Default)[c];
            TrackHistory::from_outputs(&run_pipeline(&frames, &cfg, &DetectorProfile::builtin(), 1.0, seed).unwrap())
        };
        let segs = slice_segments(&s, 1.0).unwrap();
        for f in extract_all(&history, &segs, &scene_context(&s)) {
            prop_assert_eq!(f.values.len(), FEATURE_DIM);
            prop_assert!(f.values.iter().all(|v| v.is_finite()));
            for (bin, &flag) in f.mask().iter().enumerate() {
                prop_assert_eq!(f.mask().len(), N_BINS);
                let block = &f.values[bin * STATS_PER_BIN..(bin + 1) * STATS_PER_BIN];
                let empty = block.iter().all(|&v| v == 0.0);
                prop_assert_eq!(flag == 0.0, empty, "bin {} flag {} block {:?}", bin, flag, block);
            }
        }
    }

    // ---- forest ----

    #[test]
    fn forest_is_deterministic(seed in any::<u64>(), rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 10..40)) {
        let y: Vec<f64> = rows.iter().map(|r| r[0] * 2.0 - r[2]).collect();
        let hp = ForestHyperparams { max_depth: 6, max_features: 2, n_estimators: 8, min_impurity_decrease: 0.0, seed, bootstrap: true };
        let a = serde_json::to_string(&Forest::fit(&rows, &y, &hp).unwrap()).unwrap();
        let b = serde_json::to_string(&Forest::fit(&rows, &y, &hp).unwrap()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn deeper_tree_fits_no_worse(seed in any::<u64>(), rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 8..50)) {
        let y: Vec<f64> = rows.iter().map(|r| (r[0] * r[1]).sin() + r[2]).collect();
        let mse = |depth: usize| {
            let hp = ForestHyperparams { max_depth: depth, max_features: 3, n_estimators: 1, min_impurity_decrease: 0.0, seed, bootstrap: false };
            let f = Forest::fit(&rows, &y, &hp).unwrap();
            rows.iter().zip(&y).map(|(x, t)| (f.predict(x).unwrap() - t).powi(2)).sum::<f64>() / rows.len() as f64
        };
        let mut prev = mse(1);
        for d in 2..8 {
            let cur = mse(d);
            prop_assert!(cur <= prev + 1e-12, "depth {} mse {} > {}", d, cur, prev);
            prev = cur;
        }
    }

    #[test]
    fn every_split_partitions_its_samples(seed in any::<u64>(), rows in prop::collection::vec(prop::collection::vec(0i32..6, 3), 5..40)) {
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| (r[0] + 2 * r[1]) as f64).collect();
        let hp = ForestHyperparams { max_depth: 10, max_features: 2, n_estimators: 3, min_impurity_decrease: 0.0, seed, bootstrap: false };
        let f = Forest::fit(&x, &y, &hp).unwrap();
        for tree in &f.trees {
            let mut visits = vec![0usize; tree.nodes.len()];
            for row in &x {
                let mut i = 0usize;
                loop {
                    visits[i] += 1;
                    let n = &tree.nodes[i];
                    if n.is_leaf() {
                        break;
                    }
                    i = if row[n.0 as usize] <= n.1 { n.2 } else { n.3 } as usize;
                }
            }
            for n in tree.nodes.iter().filter(|n| !n.is_leaf()) {
                let (l, r) = (visits[n.2 as usize], visits[n.3 as usize]);
                prop_assert!(l > 0 && r > 0, "empty child");
            }
            prop_assert!(tree.depth() <= hp.max_depth);
        }
        let s: f64 = f.feature_importances().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-9 || s == 0.0);
    }

    // ---- policy ----

    #[test]
    fn ranking_is_shift_invariant(rhat in prop::collection::vec(-100.0..100.0f64, 18), h in 0usize..18, k in -1e3..1e3f64) {
        let grid = config_grid(GridKind::Default);
        let order = tie_order(&grid, h);
        let shifted: Vec<f64> = rhat.iter().map(|v| v + k).collect();
        prop_assert_eq!(decide(&rhat, &order), decide(&shifted, &order));
        let plus: Vec<f64> = rhat.iter().map(|v| v + 7.3).collect();
        prop_assert_eq!(decide(&rhat, &order), decide(&plus, &order));
    }

    #[test]
    fn first_and_undefined_segments_get_global_best(
        lens in prop::collection::vec(1usize..5, 1..5),
        undefined in prop::collection::vec(any::<bool>(), 20),
        h in 0usize..18,
        pick in 0usize..18,
    ) {
        let grid = config_grid(GridKind::Default);
        let mut segs = Vec::new();
        for (s, &len) in lens.iter().enumerate() {
            for _ in 0..len {
                segs.push(ToySeg::new(&format!("s{s}"), Split::Test, vec![50.0; 18], EnvFeatures::zeros()));
            }
        }
        let mut ds = toy_dataset(grid, segs);
        for (seg, &u) in ds.segments.iter_mut().zip(&undefined) {
            seg.defined = !u;
        }
        for mode in streamperf_core::featext::EvalMode::ALL {
            let r = evaluate_with(&ds, mode, Split::Test, h, |_, _| Ok(Decision { chosen: pick, rhat: Vec::new() })).unwrap();
            prop_assert_eq!(r.decisions.len(), ds.segments.len());
            for d in &r.decisions {
                let s = &ds.segments[d.segment];
                if s.tau == 0 || !s.defined {
                    prop_assert_eq!(d.chosen_config, h);
                    prop_assert!(d.imputed);
                } else {
                    prop_assert_eq!(d.chosen_config, pick);
                }
            }
        }
    }

    // ---- sweep ----

    #[test]
    fn optimal_dominates_every_static_choice(scores in prop::collection::vec(prop::collection::vec(-50.0..100.0f64, 18), 1..30)) {
        let grid = config_grid(GridKind::Default);
        let segs = scores.iter().map(|s| ToySeg::new("a", Split::Train, s.clone(), EnvFeatures::zeros())).collect();
        let ds = toy_dataset(grid, segs);
        let opt = optimal_per_segment(&ds);
        for (i, s) in ds.segments.iter().enumerate() {
            let o = opt[i].unwrap();
            for c in 0..18 {
                prop_assert!(s.smota(o) >= s.smota(c));
            }
        }
        let order = ds.cost_order();
        let means: Vec<f64> = (0..18).map(|c| scores.iter().map(|s| s[c]).sum::<f64>() / scores.len() as f64).collect();
        let g = select_best(&order, |c| means[c]);
        let opt_mean = scores.iter().enumerate().map(|(i, s)| s[opt[i].unwrap()]).sum::<f64>() / scores.len() as f64;
        prop_assert!(opt_mean >= means[g] - 1e-9);
    }

    // ---- analysis ----

    #[test]
    fn score_space_rows_are_standardized(scores in prop::collection::vec(prop::collection::vec(-50.0..100.0f64, 18), 1..20), h in 0usize..18) {
        let grid = config_grid(GridKind::Default);
        let segs = scores.iter().map(|s| ToySeg::new("a", Split::Train, s.clone(), EnvFeatures::zeros())).collect();
        let ds = toy_dataset(grid, segs);
        let m = build_score_space(&ds, h);
        for (row, &flag) in m.rows.iter().zip(&m.flagged) {
            if flag {
                continue;
            }
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kmeans_inertia_never_increases(points in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), 4..60), k in 1usize..5, seed in any::<u64>()) {
        prop_assume!(k <= points.len());
        let r = kmeans(&points, k, seed, 3).unwrap();
        for w in r.history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()), "{:?}", r.history);
        }
        prop_assert_eq!(r.assignments.len(), points.len());
    }

    #[test]
    fn heatmap_is_a_distribution(choices in prop::collection::vec(0usize..18, 1..100)) {
        let grid = config_grid(GridKind::Default);
        let h = action_heatmap(&choices, &grid).unwrap();
        let total: f64 = h.freq.iter().flatten().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(h.freq.iter().flatten().all(|&p| p >= 0.0));
    }
}
