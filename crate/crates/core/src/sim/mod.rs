//! Synthetic scene generator.
//!
//! Renders textured objects moving along scripted waypoints under a scripted
//! camera, with depth-ordered occlusion. Emits a perception bundle built from
//! ground truth (detections at keyframes, propagations, embedding fixtures)
//! together with the ground truth itself and a templated query.

mod render;
pub mod suite;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::affine::AffineTransform;
use crate::error::{Error, Result};
use crate::geometry::Box2D;
use crate::mask::{BinaryMask, MaskSequence};
use crate::perception::{
    sample_keyframes, write_bundle, DetectionRecord, EmbeddingEntry, LoadOptions, PerceptionBundle, PropagationEntry,
    PropagationFile, VideoMeta, MASK_BOX_TOLERANCE_PX,
};
use crate::pose::{detection_key, text_key};
use crate::query::StructuredQuery;

pub use render::value_noise;
pub use suite::Family;

/// Posture words with embedding fixtures in every scene.
pub const POSTURE_VOCABULARY: [&str; 5] = ["standing", "sitting", "lying", "crouching", "kneeling"];

/// Visible pixels below which an object is not detected.
const MIN_DETECTABLE_PX: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub frame: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScript {
    pub id: u32,
    pub category: String,
    pub shape: Shape,
    /// Width and height in world pixels.
    pub size: [f64; 2],
    pub color: [u8; 3],
    /// World-space centre positions; linear in between, held outside.
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub depth: i32,
    #[serde(default)]
    pub posture: String,
}

impl ObjectScript {
    pub fn center_at(&self, frame: usize) -> (f64, f64) {
        let wp = &self.waypoints;
        if frame <= wp[0].frame {
            return (wp[0].x, wp[0].y);
        }
        for pair in wp.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if frame <= b.frame {
                let t = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
                return (a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t);
            }
        }
        let last = wp[wp.len() - 1];
        (last.x, last.y)
    }
}

/// Camera content motion per frame: the image of a static world point moves
/// by `pan` pixels per frame and scales by `zoom` per frame about the image
/// centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraScript {
    #[serde(default)]
    pub pan: [f64; 2],
    #[serde(default = "one")]
    pub zoom: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for CameraScript {
    fn default() -> Self {
        Self {
            pan: [0.0, 0.0],
            zoom: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpressionTemplate {
    pub entity: String,
    #[serde(default)]
    pub motion: String,
    #[serde(default)]
    pub posture: String,
    #[serde(default)]
    pub context: String,
    #[serde(default = "one_u32")]
    pub cardinality: u32,
    pub targets: Vec<u32>,
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Perturbation {
    /// Standard deviation of box corner noise, clipped to the mask-box slack.
    #[serde(default)]
    pub jitter_px: f64,
    #[serde(default)]
    pub dropout: f64,
}

fn default_tau() -> usize {
    15
}
fn default_dim() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    #[serde(default = "default_tau")]
    pub tau: usize,
    pub objects: Vec<ObjectScript>,
    #[serde(default)]
    pub camera: CameraScript,
    pub expression: ExpressionTemplate,
    #[serde(default)]
    pub perturbation: Perturbation,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
}

impl SceneSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s).map_err(|e| Error::Parse(format!("scene spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                let spec: Self = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
                spec.validate()?;
                Ok(spec)
            }
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |p: &str, m: String| Err(Error::validation(p, m));
        if self.width == 0 || self.height == 0 || self.frame_count == 0 || self.tau == 0 {
            return bad("size", "width, height, frame_count and tau must be positive".into());
        }
        if !(self.camera.zoom > 0.0) || !self.camera.pan.iter().all(|v| v.is_finite()) {
            return bad("camera", "zoom must be positive and pan finite".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if !ids.insert(o.id) {
                return bad(&format!("objects[{i}].id"), format!("duplicate id {}", o.id));
            }
            if !(o.size[0] > 0.0 && o.size[1] > 0.0) {
                return bad(&format!("objects[{i}].size"), "must be positive".into());
            }
            if o.waypoints.is_empty() || o.waypoints.windows(2).any(|w| w[0].frame >= w[1].frame) {
                return bad(
                    &format!("objects[{i}].waypoints"),
                    "need at least one, strictly increasing frames".into(),
                );
            }
            if o.category.trim().is_empty() {
                return bad(&format!("objects[{i}].category"), "empty".into());
            }
        }
        let e = &self.expression;
        if e.entity.trim().is_empty() {
            return bad("expression.entity", "empty".into());
        }
        if e.targets.is_empty() || e.targets.iter().any(|t| !ids.contains(t)) {
            return bad("expression.targets", "must name scripted objects".into());
        }
        if e.cardinality as usize != e.targets.len() {
            return bad(
                "expression.cardinality",
                format!("{} does not match {} targets", e.cardinality, e.targets.len()),
            );
        }
        if !(0.0..=1.0).contains(&self.perturbation.dropout) || !(self.perturbation.jitter_px >= 0.0) {
            return bad("perturbation", "dropout in [0, 1] and jitter non-negative".into());
        }
        if self.embedding_dim == 0 {
            return bad("embedding_dim", "must be positive".into());
        }
        Ok(())
    }

    /// World-to-image transform at `frame`.
    pub fn camera_at(&self, frame: usize) -> AffineTransform {
        let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
        let s = self.camera.zoom.powi(frame as i32);
        let f = frame as f64;
        AffineTransform::new(
            s,
            0.0,
            cx - s * cx + self.camera.pan[0] * f,
            0.0,
            s,
            cy - s * cy + self.camera.pan[1] * f,
        )
    }

    pub fn object(&self, id: u32) -> Option<&ObjectScript> {
        self.objects.iter().find(|o| o.id == id)
    }
}

fn plural(word: &str) -> String {
    if word.ends_with('s') || word.ends_with('x') || word.ends_with("ch") || word.ends_with("sh") {
        format!("{word}es")
    } else {
        format!("{word}s")
    }
}

fn count_word(k: u32) -> String {
    const WORDS: [&str; 10] = [
        "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS
        .get(k as usize - 1)
        .map_or_else(|| k.to_string(), |w| w.to_string())
}

/// Surface text for the expression template plus the decomposition the
/// heuristic parser must produce for it.
pub fn scripted_expression(spec: &SceneSpec) -> (String, StructuredQuery) {
    let e = &spec.expression;
    let k = e.cardinality.max(1);
    let mut parts = vec![if k == 1 {
        format!("the {}", e.entity)
    } else {
        format!("{} {}", count_word(k), plural(&e.entity))
    }];
    if !e.posture.is_empty() {
        parts.push(e.posture.clone());
    }
    if !e.motion.is_empty() {
        parts.push(e.motion.clone());
    }
    if !e.context.is_empty() {
        let relational = e.motion.ends_with("in front") || e.motion.ends_with("behind");
        parts.push(if e.motion.ends_with("in front") {
            format!("of the {}", e.context)
        } else if relational {
            format!("the {}", e.context)
        } else {
            format!("by the {}", e.context)
        });
    }
    let text = parts.join(" ");
    let expected = StructuredQuery {
        candidate_entities: vec![e.entity.clone()],
        context_entities: if e.context.is_empty() {
            vec![]
        } else {
            vec![e.context.clone()]
        },
        motion_descriptor: e.motion.clone(),
        posture_descriptor: e.posture.clone(),
        cardinality: k,
        raw_query: text.clone(),
    };
    (text, expected)
}

fn box_of(mask: &BinaryMask) -> Option<Box2D> {
    mask.bbox()
}

fn word_seed(word: &str) -> u64 {
    word.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Deterministic unit-scale direction for a posture word, shared by every
/// scene so text keys mean the same thing everywhere.
pub fn posture_vector(word: &str, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(word_seed(word));
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    pub target_ids: Vec<u32>,
    pub target: MaskSequence,
    /// Visible masks per object and frame.
    pub object_masks: BTreeMap<u32, Vec<BinaryMask>>,
    /// Visible-mask box per object and frame; absent when fully hidden.
    pub trajectories: BTreeMap<u32, Vec<Option<Box2D>>>,
    /// World-to-image transform per frame.
    pub camera: Vec<AffineTransform>,
    /// `(front, back)` pairs whose full shapes overlap, per frame.
    pub occlusion: Vec<Vec<(u32, u32)>>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

pub struct Scene {
    pub spec: SceneSpec,
    pub seed: u64,
    pub bundle: PerceptionBundle,
    pub ground_truth: GroundTruth,
    pub query: String,
    pub expected_query: StructuredQuery,
}

impl Scene {
    pub fn frames(&self) -> Vec<RgbImage> {
        (0..self.bundle.frame_count())
            .map(|i| self.bundle.frame(i).expect("in-memory frames").into_owned())
            .collect()
    }

    /// Bundle directory plus `ground_truth.json`, `query.txt` and `scene.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.write_tagged(dir, None)
    }

    /// As [`Scene::write`], recording the suite family in `scene.json`.
    pub fn write_tagged(&self, dir: &Path, family: Option<Family>) -> Result<()> {
        write_bundle(&self.bundle, dir)?;
        let gt_path = dir.join("ground_truth.json");
        let gt = serde_json::to_string(&self.ground_truth).map_err(|e| Error::json("ground truth", e))?;
        fs::write(&gt_path, gt).map_err(|e| Error::io(&gt_path, e))?;
        let q = dir.join("query.txt");
        fs::write(&q, format!("{}\n", self.query)).map_err(|e| Error::io(&q, e))?;
        let record = SceneRecord {
            seed: self.seed,
            family,
            spec: self.spec.clone(),
        };
        let s = dir.join("scene.json");
        let text = serde_json::to_string_pretty(&record).map_err(|e| Error::json("scene record", e))?;
        fs::write(&s, text + "\n").map_err(|e| Error::io(&s, e))?;
        Ok(())
    }

    /// Reads a directory written by [`Scene::write`].
    pub fn load(dir: &Path) -> Result<(Scene, Option<Family>)> {
        let s = dir.join("scene.json");
        let text = fs::read_to_string(&s).map_err(|e| Error::io(&s, e))?;
        let record: SceneRecord = serde_json::from_str(&text).map_err(|e| Error::json(s.display().to_string(), e))?;
        record.spec.validate()?;
        let q = dir.join("query.txt");
        let query = fs::read_to_string(&q).map_err(|e| Error::io(&q, e))?.trim().to_string();
        let ground_truth = GroundTruth::load(&dir.join("ground_truth.json"))?;
        let bundle = crate::perception::load_bundle(dir)?;
        let (_, expected_query) = scripted_expression(&record.spec);
        let scene = Scene {
            spec: record.spec,
            seed: record.seed,
            bundle,
            ground_truth,
            query,
            expected_query,
        };
        Ok((scene, record.family))
    }
}

/// Contents of `scene.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    pub spec: SceneSpec,
}

/// Forward propagation horizon: one keyframe interval plus the
/// association window.
const FORWARD_EXTRA: usize = 2;

pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let (w, h, n) = (spec.width, spec.height, spec.frame_count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture_seed: u64 = rng.random();

    let mut frames = Vec::with_capacity(n);
    let mut visible: Vec<Vec<BinaryMask>> = vec![Vec::with_capacity(n); spec.objects.len()];
    let mut occlusion = Vec::with_capacity(n);
    let mut cameras = Vec::with_capacity(n);
    for f in 0..n {
        let cam = spec.camera_at(f);
        let centers: Vec<(f64, f64)> = spec.objects.iter().map(|o| o.center_at(f)).collect();
        let r = render::render_frame(texture_seed, w, h, &cam, &spec.objects, &centers);
        let mut pairs = Vec::new();
        for i in 0..spec.objects.len() {
            for j in 0..spec.objects.len() {
                let (a, b) = (&spec.objects[i], &spec.objects[j]);
                let front = (a.depth, a.id) > (b.depth, b.id);
                if i != j && front && r.full[i].intersection_area(&r.full[j])? > 0 {
                    pairs.push((a.id, b.id));
                }
            }
        }
        pairs.sort_unstable();
        occlusion.push(pairs);
        for (i, m) in r.visible.into_iter().enumerate() {
            visible[i].push(m);
        }
        frames.push(r.image);
        cameras.push(cam);
    }

    let schedule = sample_keyframes(n, spec.tau);
    let key_of = |id: u32| format!("o{id}");
    let jitter = Normal::new(0.0, spec.perturbation.jitter_px.max(1e-12)).expect("valid sigma");
    let mut detections = Vec::new();
    let mut props = PropagationFile::default();
    let mut embeddings: Vec<EmbeddingEntry> = Vec::new();
    let dim = spec.embedding_dim;
    let noise = Normal::new(0.0, 0.5).expect("valid sigma");
    for &k in schedule.indices() {
        for (i, o) in spec.objects.iter().enumerate() {
            let m = &visible[i][k];
            if m.area() < MIN_DETECTABLE_PX {
                continue;
            }
            if spec.perturbation.dropout > 0.0 && rng.random_bool(spec.perturbation.dropout) {
                continue;
            }
            let tight = box_of(m).expect("nonempty mask has a box");
            let bbox = if spec.perturbation.jitter_px > 0.0 {
                let lim = MASK_BOX_TOLERANCE_PX;
                let mut c = tight.to_array();
                for v in &mut c {
                    *v += jitter.sample(&mut rng).clamp(-lim, lim);
                }
                let (wf, hf) = (w as f64, h as f64);
                let (x0, x1) = (c[0].min(c[2]).clamp(0.0, wf), c[0].max(c[2]).clamp(0.0, wf));
                let (y0, y1) = (c[1].min(c[3]).clamp(0.0, hf), c[1].max(c[3]).clamp(0.0, hf));
                Box2D::new(x0, y0, x1, y1)?
            } else {
                tight
            };
            let key = key_of(o.id);
            detections.push(DetectionRecord {
                frame_index: k,
                instance_key: key.clone(),
                category: o.category.clone(),
                score: 0.9,
                bbox,
                mask: m.clone(),
            });
            let base = posture_vector(if o.posture.is_empty() { "none" } else { &o.posture }, dim);
            embeddings.push(EmbeddingEntry {
                key: detection_key(k, &key),
                vector: base.iter().map(|v| v + noise.sample(&mut rng)).collect(),
            });
            let entry = |t: usize| {
                let vm = visible[i][t].clone();
                PropagationEntry {
                    source_frame: k,
                    instance_key: key.clone(),
                    target_frame: t,
                    bbox: box_of(&vm).unwrap_or_default(),
                    mask: vm,
                }
            };
            let fwd_end = (k + spec.tau + FORWARD_EXTRA).min(n - 1);
            props.forward.extend((k + 1..=fwd_end).map(entry));
            props.backward.extend((k.saturating_sub(spec.tau)..k).rev().map(entry));
        }
    }
    let mut words: Vec<&str> = POSTURE_VOCABULARY.to_vec();
    if !spec.expression.posture.is_empty() && !words.contains(&spec.expression.posture.as_str()) {
        words.push(&spec.expression.posture);
    }
    for word in words {
        embeddings.push(EmbeddingEntry {
            key: text_key(word),
            vector: posture_vector(word, dim),
        });
    }

    let meta = VideoMeta {
        id: spec.name.clone(),
        width: w,
        height: h,
        frame_count: n,
        keyframe_interval: spec.tau,
        frames: vec![],
    };
    let bundle = PerceptionBundle::from_parts(
        meta,
        detections,
        props,
        embeddings,
        Some(frames),
        &LoadOptions::default(),
    )?;

    let index: BTreeMap<u32, usize> = spec.objects.iter().enumerate().map(|(i, o)| (o.id, i)).collect();
    let mut target_frames = Vec::with_capacity(n);
    for f in 0..n {
        let mut m = BinaryMask::empty(w, h);
        for t in &spec.expression.targets {
            m = m.union(&visible[index[t]][f])?;
        }
        target_frames.push(m);
    }
    let trajectories = spec
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o.id, visible[i].iter().map(box_of).collect()))
        .collect();
    let object_masks = spec
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| (o.id, visible[i].clone()))
        .collect();
    let mut target_ids = spec.expression.targets.clone();
    target_ids.sort_unstable();
    let ground_truth = GroundTruth {
        width: w,
        height: h,
        frame_count: n,
        target_ids,
        target: MaskSequence::new(spec.name.clone(), target_frames)?,
        object_masks,
        trajectories,
        camera: cameras,
        occlusion,
    };
    let (query, expected_query) = scripted_expression(spec);
    Ok(Scene {
        spec: spec.clone(),
        seed,
        bundle,
        ground_truth,
        query,
        expected_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::heuristic_decompose;

    fn rect(id: u32, x: f64, y: f64) -> ObjectScript {
        ObjectScript {
            id,
            category: "cat".into(),
            shape: Shape::Rect,
            size: [20.0, 16.0],
            color: [200, 60, 60],
            waypoints: vec![Waypoint { frame: 0, x, y }],
            depth: 0,
            posture: String::new(),
        }
    }

    fn spec(objects: Vec<ObjectScript>, pan: [f64; 2]) -> SceneSpec {
        SceneSpec {
            name: "t".into(),
            width: 96,
            height: 64,
            frame_count: 16,
            tau: 15,
            objects,
            camera: CameraScript { pan, zoom: 1.0 },
            expression: ExpressionTemplate {
                entity: "cat".into(),
                targets: vec![1],
                cardinality: 1,
                ..Default::default()
            },
            perturbation: Perturbation::default(),
            embedding_dim: 8,
        }
    }

    #[test]
    fn static_scene_frames_identical() {
        let s = generate_scene(&spec(vec![rect(1, 40.0, 30.0)], [0.0, 0.0]), 1).unwrap();
        let frames = s.frames();
        assert!(frames.windows(2).all(|p| p[0] == p[1]));
        assert_eq!(s.bundle.detections_at(0).count(), 1);
        assert_eq!(s.bundle.detections_at(15).count(), 1);
        assert_eq!(s.ground_truth.object_masks[&1][0].area(), 320);
    }

    #[test]
    fn pan_shifts_background() {
        let s = generate_scene(&spec(vec![rect(1, 500.0, 500.0)], [2.0, 0.0]), 4).unwrap();
        let f = s.frames();
        for y in 0..64 {
            for x in 0..90 {
                assert_eq!(f[0].get_pixel(x, y), f[3].get_pixel(x + 6, y));
            }
        }
    }

    #[test]
    fn depth_decides_contested_pixels() {
        let mut a = rect(1, 40.0, 30.0);
        a.depth = 1;
        a.waypoints = vec![
            Waypoint {
                frame: 0,
                x: 20.0,
                y: 30.0,
            },
            Waypoint {
                frame: 15,
                x: 70.0,
                y: 30.0,
            },
        ];
        let b = rect(2, 45.0, 30.0);
        let s = generate_scene(&spec(vec![a, b], [0.0, 0.0]), 2).unwrap();
        let gt = &s.ground_truth;
        for f in 0..16 {
            let (ma, mb) = (&gt.object_masks[&1][f], &gt.object_masks[&2][f]);
            assert_eq!(ma.area(), 320, "front object unclipped");
            assert_eq!(ma.intersection_area(mb).unwrap(), 0);
            let overlapping = gt.occlusion[f].contains(&(1, 2));
            assert_eq!(overlapping, mb.area() < 320, "frame {f}");
        }
        assert!(gt.occlusion.iter().any(|p| !p.is_empty()));
    }

    #[test]
    fn deterministic_in_seed() {
        let sp = spec(vec![rect(1, 40.0, 30.0), rect(2, 70.0, 20.0)], [1.0, 0.0]);
        let a = generate_scene(&sp, 9).unwrap();
        let b = generate_scene(&sp, 9).unwrap();
        assert_eq!(a.frames(), b.frames());
        assert_eq!(a.bundle.detections(), b.bundle.detections());
        assert_eq!(a.bundle.embedding_entries(), b.bundle.embedding_entries());
        let c = generate_scene(&sp, 10).unwrap();
        assert_ne!(a.frames(), c.frames());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(vec![rect(1, 4.0, 4.0)], [0.0, 0.0]);
        s.expression.targets = vec![7];
        assert!(generate_scene(&s, 0).is_err());
        let mut s = spec(vec![rect(1, 4.0, 4.0)], [0.0, 0.0]);
        s.camera.zoom = 0.0;
        assert!(s.validate().is_err());
        let mut s = spec(vec![rect(1, 4.0, 4.0), rect(1, 9.0, 9.0)], [0.0, 0.0]);
        s.expression.cardinality = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn expression_templates() {
        let mut s = spec(vec![rect(1, 4.0, 4.0), rect(2, 30.0, 4.0)], [0.0, 0.0]);
        s.expression = ExpressionTemplate {
            entity: "cat".into(),
            motion: "motionless".into(),
            posture: "standing".into(),
            context: "green plate".into(),
            cardinality: 1,
            targets: vec![1],
        };
        let (text, q) = scripted_expression(&s);
        assert_eq!(text, "the cat standing motionless by the green plate");
        assert_eq!(heuristic_decompose(&text), q);

        s.expression.cardinality = 2;
        s.expression.targets = vec![1, 2];
        s.expression.posture.clear();
        let (text, q) = scripted_expression(&s);
        assert!(text.starts_with("two "));
        assert_eq!(q.cardinality, 2);
        assert_eq!(heuristic_decompose(&text), q);

        s.expression = ExpressionTemplate {
            entity: "dog".into(),
            motion: "moving left".into(),
            cardinality: 1,
            targets: vec![1],
            ..Default::default()
        };
        let (text, q) = scripted_expression(&s);
        assert_eq!(q.posture_descriptor, "");
        assert_eq!(heuristic_decompose(&text), q);
    }

    #[test]
    fn propagations_cover_window() {
        let s = generate_scene(&spec(vec![rect(1, 40.0, 30.0)], [1.0, 0.0]), 3).unwrap();
        let b = &s.bundle;
        assert!(b
            .propagation(crate::perception::Direction::Forward, 0, "o1", 15)
            .is_some());
        assert!(b
            .propagation(crate::perception::Direction::Backward, 15, "o1", 0)
            .is_some());
        let p = b
            .propagation(crate::perception::Direction::Forward, 0, "o1", 7)
            .unwrap();
        assert_eq!(p.mask, s.ground_truth.object_masks[&1][7]);
    }
}
