use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::Rng;

use super::{
    wrap_angle, Archetype, EgoState, GtObject, Scenario, ScenarioSpec, TrajectoryPoint,
    SCENARIO_SCHEMA_VERSION,
};
use crate::bbox::BBox;
use crate::error::Result;
use crate::rng::{self, str_key};

/// Per-frame spawn probability while a phase is below its target population.
const SPAWN_PROB: f64 = 0.3;

#[derive(Debug, Clone)]
struct Phase {
    kind: Archetype,
    start: usize,
    end: usize,
    /// m/s at the first frame of the phase.
    speed: f64,
    /// Heading change in radians per frame.
    yaw_rate: f64,
    target: usize,
}

impl Phase {
    fn ego_speed(&self, frame: usize, frame_rate: f64) -> f64 {
        let t = (frame - self.start) as f64 / frame_rate;
        match self.kind {
            // Brakes to a full stop within 1.5 s.
            Archetype::IntersectionStop => self.speed * (1.0 - t / 1.5).max(0.0),
            Archetype::HighwayCruise => (self.speed + (0.5 * t).sin()).max(0.0),
            _ => self.speed,
        }
    }
}

#[derive(Debug, Clone)]
struct ObjectPlan {
    start: usize,
    end: usize,
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    w: f64,
    h: f64,
    growth: f64,
    velocity_change: Option<(usize, f64, f64)>,
    occlusions: Vec<(usize, usize)>,
}

struct Ctx<'a> {
    spec: &'a ScenarioSpec,
    width: f64,
    height: f64,
    /// Per-frame quantities are authored at 10 Hz and rescaled by this factor.
    rate_scale: f64,
}

impl Ctx<'_> {
    fn seconds_to_frames(&self, s: f64) -> usize {
        (s * self.spec.frame_rate).round().max(1.0) as usize
    }

    /// Horizontal image shift induced by the ego yaw rate (pinhole camera).
    fn ego_shift(&self, yaw_rate: f64) -> f64 {
        -yaw_rate * 0.55 * self.width
    }
}

/// Generates a scenario. Output depends only on `(spec, seed)`.
pub fn generate_scenario(spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    spec.validate()?;
    let mut rng = rng::stream(seed, &[str_key(&spec.id)]);
    let n = spec.frame_count();
    let ctx = Ctx {
        spec,
        width: spec.image_width as f64,
        height: spec.image_height as f64,
        rate_scale: 10.0 / spec.frame_rate,
    };

    let phases = plan_phases(&ctx, &mut rng, n);

    let mut heading = wrap_angle(rng.random_range(-PI..PI));
    let mut ego = Vec::with_capacity(n);
    for ph in &phases {
        for f in ph.start..ph.end {
            ego.push(EgoState {
                speed: ph.ego_speed(f, spec.frame_rate),
                heading,
            });
            heading = wrap_angle(heading + ph.yaw_rate);
        }
    }

    let mut objects = Vec::new();
    let mut next_id = 1u64;
    for ph in &phases {
        let mut phase_objects: Vec<GtObject> = Vec::new();
        for _ in 0..ph.target {
            let plan = plan_object(&ctx, &mut rng, ph, ph.start, true);
            if let Some(obj) = rasterize(&ctx, &plan, ph, next_id) {
                phase_objects.push(obj);
                next_id += 1;
            }
        }
        for f in ph.start + 1..ph.end {
            let live = phase_objects
                .iter()
                .filter(|o| {
                    o.trajectory.first().is_some_and(|p| p.frame <= f)
                        && o.trajectory.last().is_some_and(|p| p.frame >= f)
                })
                .count();
            if live < ph.target && rng.random::<f64>() < SPAWN_PROB {
                let plan = plan_object(&ctx, &mut rng, ph, f, false);
                if let Some(obj) = rasterize(&ctx, &plan, ph, next_id) {
                    phase_objects.push(obj);
                    next_id += 1;
                }
            }
        }
        if ph.kind == Archetype::OcclusionCorridor {
            plant_occlusion(&mut phase_objects);
        }
        objects.extend(phase_objects);
    }

    let time_of_day = match spec.archetype {
        Archetype::IntersectionStop => rng.random_range(7.0..21.0),
        Archetype::HighwayCruise => rng.random_range(5.0..22.0),
        Archetype::EgoTurn => rng.random_range(8.0..19.0),
        Archetype::OcclusionCorridor => (rng.random_range(19.0..29.0f64)) % 24.0,
        Archetype::Mixed => rng.random_range(0.0..24.0),
    };

    let scenario = Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        id: spec.id.clone(),
        archetype: spec.archetype,
        duration: n as f64 / spec.frame_rate,
        frame_rate: spec.frame_rate,
        image_size: (spec.image_width, spec.image_height),
        objects,
        ego,
        time_of_day,
    };
    debug_assert!(scenario.validate().is_ok());
    Ok(scenario)
}

fn plan_phases(ctx: &Ctx<'_>, rng: &mut rng::Rng, n: usize) -> Vec<Phase> {
    let mut kinds = Vec::new();
    if ctx.spec.archetype == Archetype::Mixed {
        let mut start = 0;
        let mut prev: Option<Archetype> = None;
        while start < n {
            let len = ctx.seconds_to_frames(rng.random_range(2.0..6.0));
            let choices: Vec<Archetype> = Archetype::BASE
                .iter()
                .copied()
                .filter(|k| Some(*k) != prev)
                .collect();
            let kind = *choices.choose(rng).expect("non-empty");
            let end = (start + len).min(n);
            kinds.push((kind, start, end));
            prev = Some(kind);
            start = end;
        }
    } else {
        kinds.push((ctx.spec.archetype, 0, n));
    }

    kinds
        .into_iter()
        .map(|(kind, start, end)| {
            let (speed, yaw_rate) = match kind {
                Archetype::IntersectionStop => (rng.random_range(6.0..10.0), 0.0),
                Archetype::HighwayCruise => (
                    rng.random_range(25.0..32.0),
                    rng.random_range(-0.0005..0.0005) * ctx.rate_scale,
                ),
                Archetype::EgoTurn => {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    (
                        rng.random_range(5.0..10.0),
                        sign * rng.random_range(0.02..0.04) * ctx.rate_scale,
                    )
                }
                Archetype::OcclusionCorridor => (
                    rng.random_range(6.0..12.0),
                    rng.random_range(-0.002..0.002) * ctx.rate_scale,
                ),
                Archetype::Mixed => unreachable!("mixed is expanded into base phases"),
            };
            let target = rng.random_range(ctx.spec.min_objects..=ctx.spec.max_objects);
            Phase {
                kind,
                start,
                end,
                speed,
                yaw_rate,
                target,
            }
        })
        .collect()
}

fn log_uniform(rng: &mut rng::Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn random_velocity(rng: &mut rng::Rng, lo: f64, hi: f64) -> (f64, f64) {
    let speed = rng.random_range(lo..hi);
    let dir = rng.random_range(-PI..PI);
    (speed * dir.cos(), speed * dir.sin())
}

fn size_from_area(rng: &mut rng::Rng, area: f64, aspect_lo: f64, aspect_hi: f64) -> (f64, f64) {
    let aspect = rng.random_range(aspect_lo..aspect_hi);
    let w = (area * aspect).sqrt();
    (w, area / w)
}

fn plan_object(
    ctx: &Ctx<'_>,
    rng: &mut rng::Rng,
    phase: &Phase,
    start: usize,
    initial: bool,
) -> ObjectPlan {
    let (w_img, h_img, k) = (ctx.width, ctx.height, ctx.rate_scale);
    let mut plan = match phase.kind {
        Archetype::IntersectionStop => {
            if rng.random::<f64>() < 0.85 {
                // Distant, nearly static traffic.
                let area = log_uniform(rng, 600.0, 2000.0);
                let (w, h) = size_from_area(rng, area, 0.8, 1.8);
                let (vx, vy) = random_velocity(rng, 0.0, 1.2);
                let life = rng.random_range(6.0..20.0);
                ObjectPlan {
                    start,
                    end: start + ctx.seconds_to_frames(life),
                    cx: rng.random_range(0.05 * w_img..0.95 * w_img),
                    cy: rng.random_range(0.38 * h_img..0.55 * h_img),
                    vx: vx * k,
                    vy: vy * k,
                    w,
                    h,
                    growth: 0.0,
                    velocity_change: None,
                    occlusions: vec![],
                }
            } else {
                // Cross traffic.
                let area = log_uniform(rng, 2500.0, 9000.0);
                let (w, h) = size_from_area(rng, area, 1.3, 2.2);
                let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let cx = if initial {
                    rng.random_range(0.1 * w_img..0.9 * w_img)
                } else if dir > 0.0 {
                    0.5 * w
                } else {
                    w_img - 0.5 * w
                };
                let life = rng.random_range(4.0..15.0);
                ObjectPlan {
                    start,
                    end: start + ctx.seconds_to_frames(life),
                    cx,
                    cy: rng.random_range(0.55 * h_img..0.75 * h_img),
                    vx: dir * rng.random_range(6.0..14.0) * k,
                    vy: rng.random_range(-0.5..0.5) * k,
                    w,
                    h,
                    growth: 0.0,
                    velocity_change: None,
                    occlusions: vec![],
                }
            }
        }
        Archetype::HighwayCruise => {
            let area = log_uniform(rng, 2000.0, 8000.0);
            let (w, h) = size_from_area(rng, area, 1.1, 1.8);
            let (vx, vy) = random_velocity(rng, 0.5, 4.0);
            let life = rng.random_range(5.0..20.0);
            ObjectPlan {
                start,
                end: start + ctx.seconds_to_frames(life),
                cx: rng.random_range(0.15 * w_img..0.85 * w_img),
                cy: rng.random_range(0.45 * h_img..0.7 * h_img),
                vx: vx * k,
                vy: vy * k,
                w,
                h,
                growth: rng.random_range(-0.015..0.015) * k,
                velocity_change: None,
                occlusions: vec![],
            }
        }
        Archetype::EgoTurn => {
            let area = log_uniform(rng, 4000.0, 30000.0);
            let (w, h) = size_from_area(rng, area, 1.1, 2.0);
            let (vx, vy) = random_velocity(rng, 0.0, 4.0);
            let shift = ctx.ego_shift(phase.yaw_rate);
            let cx = if initial {
                rng.random_range(0.1 * w_img..0.9 * w_img)
            } else if shift < 0.0 {
                w_img - 0.45 * w
            } else {
                0.45 * w
            };
            let life = rng.random_range(3.0..10.0);
            ObjectPlan {
                start,
                end: start + ctx.seconds_to_frames(life),
                cx,
                cy: rng.random_range(0.45 * h_img..0.75 * h_img),
                vx: vx * k,
                vy: vy * k,
                w,
                h,
                growth: 0.0,
                velocity_change: None,
                occlusions: vec![],
            }
        }
        Archetype::OcclusionCorridor => {
            let area = log_uniform(rng, 2500.0, 15000.0);
            let (w, h) = size_from_area(rng, area, 1.0, 2.0);
            let (vx, vy) = random_velocity(rng, 1.0, 6.0);
            let life = rng.random_range(5.0..15.0);
            ObjectPlan {
                start,
                end: start + ctx.seconds_to_frames(life),
                cx: rng.random_range(0.1 * w_img..0.9 * w_img),
                cy: rng.random_range(0.45 * h_img..0.75 * h_img),
                vx: vx * k,
                vy: vy * k,
                w,
                h,
                growth: rng.random_range(-0.005..0.005) * k,
                velocity_change: None,
                occlusions: vec![],
            }
        }
        Archetype::Mixed => unreachable!("mixed is expanded into base phases"),
    };
    plan.end = plan.end.min(phase.end);

    let life = plan.end.saturating_sub(plan.start);
    if life > 4 && rng.random::<f64>() < 0.3 {
        let at = rng.random_range(plan.start + 1..plan.end - 1);
        let angle: f64 = rng.random_range(-0.6..0.6);
        let scale: f64 = rng.random_range(0.6..1.4);
        let (c, s) = (angle.cos(), angle.sin());
        plan.velocity_change = Some((
            at,
            scale * (plan.vx * c - plan.vy * s),
            scale * (plan.vx * s + plan.vy * c),
        ));
    }

    let (prob, min_len, max_len) = match phase.kind {
        Archetype::OcclusionCorridor => (0.85, 3, 8),
        _ => (0.1, 1, 3),
    };
    if rng.random::<f64>() < prob {
        let spans = if phase.kind == Archetype::OcclusionCorridor {
            rng.random_range(1..=2)
        } else {
            1
        };
        for _ in 0..spans {
            let len = ((rng.random_range(min_len..=max_len) as f64) / k).round().max(1.0) as usize;
            if life > len + 4 {
                let s = rng.random_range(plan.start + 2..plan.end - len - 1);
                plan.occlusions.push((s, len));
            }
        }
    }
    plan
}

fn rasterize(ctx: &Ctx<'_>, plan: &ObjectPlan, phase: &Phase, id: u64) -> Option<GtObject> {
    let shift = ctx.ego_shift(phase.yaw_rate);
    let (mut cx, mut cy, mut vx, mut vy) = (plan.cx, plan.cy, plan.vx, plan.vy);
    let (mut w, mut h) = (plan.w, plan.h);
    let mut trajectory = Vec::new();
    for f in plan.start..plan.end {
        let Some(bbox) = BBox::new(cx, cy, w, h).clip(ctx.width, ctx.height) else {
            break;
        };
        let occluded = plan
            .occlusions
            .iter()
            .any(|&(s, len)| f >= s && f < s + len);
        trajectory.push(TrajectoryPoint {
            frame: f,
            bbox,
            visible: !occluded,
        });
        if let Some((at, nvx, nvy)) = plan.velocity_change {
            if f == at {
                vx = nvx;
                vy = nvy;
            }
        }
        cx += vx + shift;
        cy += vy;
        let g = 1.0 + plan.growth;
        if w * g <= 0.6 * ctx.width && h * g <= 0.6 * ctx.height && w * g >= 4.0 && h * g >= 4.0 {
            w *= g;
            h *= g;
        }
    }
    // An object needs at least two visible frames to matter for tracking.
    if trajectory.iter().filter(|p| p.visible).count() < 2 {
        return None;
    }
    while trajectory.last().is_some_and(|p| !p.visible) {
        trajectory.pop();
    }
    Some(GtObject { id, trajectory })
}

/// Guarantees at least one occlusion run of three frames in a corridor phase.
fn plant_occlusion(objects: &mut [GtObject]) {
    if objects.iter().any(|o| o.longest_occlusion() >= 3) {
        return;
    }
    if let Some(obj) = objects
        .iter_mut()
        .filter(|o| o.trajectory.len() >= 7)
        .max_by_key(|o| o.trajectory.len())
    {
        for p in &mut obj.trajectory[2..5] {
            p.visible = false;
        }
    }
}
