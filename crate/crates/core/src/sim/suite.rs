//! Seeded scenario suite for end-to-end and ablation runs.
//!
//! Five scene families rotate with the scene index:
//! stationary target under a pan, directional target under a pan,
//! occlusion relation under a pan, occlusion relation with a static camera,
//! and posture disambiguation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    CameraScript, ExpressionTemplate, ObjectScript, Perturbation, SceneSpec, Shape, Waypoint, POSTURE_VOCABULARY,
};

pub const WIDTH: u32 = 192;
pub const HEIGHT: u32 = 128;
pub const FRAMES: usize = 31;
const MARGIN: f64 = 4.0;

const ENTITIES: [&str; 5] = ["cat", "dog", "bird", "horse", "duck"];
const CONTEXTS: [&str; 4] = ["box", "ball", "chair", "bench"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    PanStationary,
    PanDirection,
    OcclusionPan,
    Occlusion,
    Posture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteScene {
    pub spec: SceneSpec,
    pub seed: u64,
    pub family: Family,
    pub pan: bool,
    pub occlusion: bool,
}

struct Role {
    vx: f64,
    category: String,
    size: [f64; 2],
    posture: String,
    depth: i32,
    target: bool,
}

fn role(vx: f64, category: &str, posture: &str, target: bool) -> Role {
    Role {
        vx,
        category: category.into(),
        size: [22.0, 16.0],
        posture: posture.into(),
        depth: 0,
        target,
    }
}

fn color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    [
        rng.random_range(60..=250),
        rng.random_range(60..=250),
        rng.random_range(60..=250),
    ]
}

/// Image-space start x keeping the whole path inside the frame.
fn start_x(rng: &mut ChaCha8Rng, v_img: f64, half_w: f64) -> f64 {
    let span = v_img * (FRAMES - 1) as f64;
    let lo = MARGIN + half_w - span.min(0.0);
    let hi = WIDTH as f64 - MARGIN - half_w - span.max(0.0);
    if hi <= lo {
        return ((lo + hi) / 2.0).round();
    }
    rng.random_range(lo..=hi).round()
}

fn other_postures(rng: &mut ChaCha8Rng, avoid: &str) -> String {
    let opts: Vec<&str> = POSTURE_VOCABULARY.iter().copied().filter(|p| *p != avoid).collect();
    opts[rng.random_range(0..opts.len())].to_string()
}

/// Lays roles out in horizontal bands, assigns shuffled ids and builds the
/// spec. Returns the spec and the ids in role order.
fn assemble(
    rng: &mut ChaCha8Rng,
    name: String,
    pan_x: f64,
    roles: &[Role],
    mut expression: ExpressionTemplate,
) -> (SceneSpec, Vec<u32>) {
    let n = roles.len();
    let mut ids: Vec<u32> = (1..=n as u32).collect();
    ids.shuffle(rng);
    let band = HEIGHT as f64 / n as f64;
    let mut objects = Vec::with_capacity(n);
    let mut band_order: Vec<usize> = (0..n).collect();
    band_order.shuffle(rng);
    for (ri, r) in roles.iter().enumerate() {
        let y = (band * (band_order[ri] as f64 + 0.5)).round();
        let x0 = start_x(rng, r.vx + pan_x, r.size[0] / 2.0);
        let last = (FRAMES - 1) as f64;
        objects.push(ObjectScript {
            id: ids[ri],
            category: r.category.clone(),
            shape: if rng.random_bool(0.5) {
                Shape::Rect
            } else {
                Shape::Ellipse
            },
            size: r.size,
            color: color(rng),
            waypoints: vec![
                Waypoint { frame: 0, x: x0, y },
                Waypoint {
                    frame: FRAMES - 1,
                    x: x0 + r.vx * last,
                    y,
                },
            ],
            depth: r.depth,
            posture: r.posture.clone(),
        });
    }
    expression.targets = roles
        .iter()
        .zip(&ids)
        .filter(|(r, _)| r.target)
        .map(|(_, id)| *id)
        .collect();
    expression.targets.sort_unstable();
    expression.cardinality = expression.targets.len() as u32;
    let spec = SceneSpec {
        name,
        width: WIDTH,
        height: HEIGHT,
        frame_count: FRAMES,
        tau: 15,
        objects,
        camera: CameraScript {
            pan: [pan_x, 0.0],
            zoom: 1.0,
        },
        expression,
        perturbation: Perturbation::default(),
        embedding_dim: 32,
    };
    (spec, ids)
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn direction_word(d: f64) -> &'static str {
    if d < 0.0 {
        "left"
    } else {
        "right"
    }
}

fn pan_stationary(rng: &mut ChaCha8Rng, name: String) -> SceneSpec {
    let entity = ENTITIES[rng.random_range(0..ENTITIES.len())];
    let pan = 2.0 * sign(rng);
    let shared = if rng.random_bool(0.33) { "standing" } else { "" };
    let n = rng.random_range(3..=5);
    let mut roles = vec![role(0.0, entity, shared, true), role(-pan, entity, shared, false)];
    while roles.len() < n {
        let v = loop {
            let v = rng.random_range(1.5..2.5) * sign(rng);
            if (v + pan).abs() >= 1.0 {
                break v;
            }
        };
        roles.push(role(v, entity, shared, false));
    }
    let motion = if rng.random_bool(0.5) {
        "motionless"
    } else {
        "stationary"
    };
    let expression = ExpressionTemplate {
        entity: entity.into(),
        motion: motion.into(),
        posture: shared.into(),
        ..Default::default()
    };
    assemble(rng, name, pan, &roles, expression).0
}

fn pan_direction(rng: &mut ChaCha8Rng, name: String, k: u32) -> SceneSpec {
    let entity = ENTITIES[rng.random_range(0..ENTITIES.len())];
    let d = sign(rng);
    let pan = -2.5 * d;
    let mut roles = vec![role(1.5 * d, entity, "", true)];
    if k == 2 {
        roles.push(role(1.2 * d, entity, "", true));
    }
    roles.push(role(0.0, entity, "", false));
    roles.push(role(-1.5 * d, entity, "", false));
    let n = rng.random_range(roles.len()..=5);
    while roles.len() < n {
        let v = if rng.random_bool(0.5) {
            0.0
        } else {
            -rng.random_range(1.0..2.0) * d
        };
        roles.push(role(v, entity, "", false));
    }
    let expression = ExpressionTemplate {
        entity: entity.into(),
        motion: format!("moving {}", direction_word(d)),
        ..Default::default()
    };
    assemble(rng, name, pan, &roles, expression).0
}

/// Target and distractors walk in parallel; only the target passes in front
/// of (or behind) a static context object at the middle keyframe.
fn occlusion(rng: &mut ChaCha8Rng, name: String, pan: f64) -> SceneSpec {
    let entity = ENTITIES[rng.random_range(0..ENTITIES.len())];
    let ctx = CONTEXTS[rng.random_range(0..CONTEXTS.len())];
    let in_front = rng.random_bool(0.5);
    let d = sign(rng);
    let v = 2.0 * d;
    let n_same = rng.random_range(2..=3);
    let decoy = rng.random_bool(0.5);
    let mut roles: Vec<Role> = (0..n_same).map(|i| role(v, entity, "", i == 0)).collect();
    for r in &mut roles {
        r.size = [22.0, 18.0];
    }
    let (n_ctx, target_depth) = (if decoy { 2 } else { 1 }, if in_front { 2 } else { 0 });
    roles[0].depth = target_depth;
    let expression = ExpressionTemplate {
        entity: entity.into(),
        motion: if in_front {
            "walking in front".into()
        } else {
            "walking behind".into()
        },
        context: ctx.into(),
        ..Default::default()
    };
    let (mut spec, ids) = assemble(rng, name, pan, &roles, expression);

    let mid = 15usize;
    let mut next_id = ids.len() as u32 + 1;
    let mut add_ctx = |spec: &mut SceneSpec, host: u32, host_in_front: bool, rng: &mut ChaCha8Rng| {
        let host_obj = spec.object(host).expect("host exists").clone();
        let (hx, hy) = host_obj.center_at(mid);
        let (size, dy, depth) = if host_in_front {
            ([16.0, 12.0], 8.0, host_obj.depth - 1)
        } else {
            ([20.0, 16.0], 4.0, host_obj.depth + 1)
        };
        spec.objects.push(ObjectScript {
            id: next_id,
            category: ctx.into(),
            shape: Shape::Rect,
            size,
            color: color(rng),
            waypoints: vec![Waypoint {
                frame: 0,
                x: hx,
                y: hy + dy,
            }],
            depth,
            posture: String::new(),
        });
        next_id += 1;
    };
    add_ctx(&mut spec, ids[0], in_front, rng);
    if n_ctx == 2 {
        // a distractor shows the opposite relation
        let host = ids[1];
        let host_depth = if in_front { 0 } else { 2 };
        spec.objects.iter_mut().find(|o| o.id == host).expect("host").depth = host_depth;
        add_ctx(&mut spec, host, !in_front, rng);
    }
    spec
}

fn posture(rng: &mut ChaCha8Rng, name: String, pan: f64) -> SceneSpec {
    let entity = ENTITIES[rng.random_range(0..ENTITIES.len())];
    let target_posture = POSTURE_VOCABULARY[rng.random_range(0..POSTURE_VOCABULARY.len())];
    let with_motion = rng.random_bool(0.6);
    let d = sign(rng);
    let n = rng.random_range(if with_motion { 3 } else { 2 }..=4);
    let mut roles = Vec::new();
    if with_motion {
        roles.push(role(1.5 * d, entity, target_posture, true));
        let p = other_postures(rng, target_posture);
        roles.push(role(1.5 * d, entity, &p, false));
        while roles.len() < n {
            let p = other_postures(rng, target_posture);
            let v = if rng.random_bool(0.5) { 0.0 } else { -1.5 * d };
            roles.push(role(v, entity, &p, false));
        }
    } else {
        roles.push(role(rng.random_range(-1.5..1.5), entity, target_posture, true));
        while roles.len() < n {
            let p = other_postures(rng, target_posture);
            roles.push(role(rng.random_range(-1.5..1.5), entity, &p, false));
        }
    }
    let expression = ExpressionTemplate {
        entity: entity.into(),
        motion: if with_motion {
            format!("moving {}", direction_word(d))
        } else {
            String::new()
        },
        posture: target_posture.into(),
        ..Default::default()
    };
    assemble(rng, name, pan, &roles, expression).0
}

/// One scene of the suite. Deterministic in `(index, seed)`.
pub fn suite_scene(index: usize, seed: u64) -> SuiteScene {
    let scene_seed = seed.wrapping_mul(1_000_003).wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    let name = format!("scene{index:03}");
    let (family, spec) = match index % 5 {
        0 => (Family::PanStationary, pan_stationary(&mut rng, name)),
        1 => {
            let k = if index % 10 == 1 { 2 } else { 1 };
            (Family::PanDirection, pan_direction(&mut rng, name, k))
        }
        2 => {
            let pan = 2.0 * sign(&mut rng);
            (Family::OcclusionPan, occlusion(&mut rng, name, pan))
        }
        3 => (Family::Occlusion, occlusion(&mut rng, name, 0.0)),
        _ => {
            let pan = if index % 2 == 1 { 2.0 * sign(&mut rng) } else { 0.0 };
            (Family::Posture, posture(&mut rng, name, pan))
        }
    };
    SuiteScene {
        pan: spec.camera.pan != [0.0, 0.0],
        occlusion: matches!(family, Family::OcclusionPan | Family::Occlusion),
        spec,
        seed: scene_seed,
        family,
    }
}

pub fn suite(count: usize, seed: u64) -> Vec<SuiteScene> {
    (0..count).map(|i| suite_scene(i, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_composition() {
        let s = suite(50, 0);
        assert!(s.iter().filter(|x| x.pan).count() >= 25);
        assert!(s.iter().filter(|x| x.occlusion).count() >= 15);
        for x in &s {
            x.spec.validate().unwrap();
            let n = x.spec.objects.len();
            assert!((2..=5).contains(&n), "{} has {n} objects", x.spec.name);
        }
        assert_eq!(suite(3, 7), suite(3, 7));
    }
}
