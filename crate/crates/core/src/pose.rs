//! Posture verification by embedding similarity.
//!
//! When motion reasoning leaves more candidates than targets and the query
//! carries a posture descriptor, each candidate's crop embeddings on the most
//! discriminative keyframes are averaged and compared with the text
//! embedding of the descriptor.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::box_iou;
use crate::perception::PerceptionBundle;
use crate::tracking::Trajectory;

pub const DEFAULT_DISCRIMINATIVE_FRAMES: usize = 3;

pub fn crop_key(track_id: u32, frame: usize) -> String {
    format!("crop/{track_id}/{frame}")
}

/// Crop key addressed by detection rather than track id, for producers that
/// do not know the ids assigned during tracking.
pub fn detection_key(frame: usize, instance_key: &str) -> String {
    format!("det/{frame}/{instance_key}")
}

/// `text/` plus the first 16 hex digits of the SHA-256 of the trimmed text.
pub fn text_key(text: &str) -> String {
    let digest = Sha256::digest(text.trim().as_bytes());
    format!("text/{}", &hex::encode(digest)[..16])
}

pub trait EmbeddingBackend {
    fn lookup(&self, key: &str) -> Option<Vec<f64>>;

    fn embedding(&self, key: &str) -> Result<Vec<f64>> {
        self.lookup(key)
            .ok_or_else(|| Error::Lookup(format!("no embedding for key `{key}`")))
    }
}

impl EmbeddingBackend for PerceptionBundle {
    fn lookup(&self, key: &str) -> Option<Vec<f64>> {
        PerceptionBundle::embedding(self, key).map(<[f64]>::to_vec)
    }
}

/// In-memory embeddings, mainly for tests and fixtures.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockEmbeddings {
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl MockEmbeddings {
    pub fn insert(&mut self, key: impl Into<String>, v: Vec<f64>) {
        self.vectors.insert(key.into(), v);
    }
}

impl EmbeddingBackend for MockEmbeddings {
    fn lookup(&self, key: &str) -> Option<Vec<f64>> {
        self.vectors.get(key).cloned()
    }
}

pub fn should_activate(subset_size: usize, k: u32, posture: &str) -> bool {
    subset_size > k as usize && !posture.trim().is_empty()
}

/// Keyframes shared by every candidate, least overlapping first.
///
/// Each common keyframe scores the maximum pairwise box IoU among the
/// candidates; the `k` lowest scores win, ties to the earlier frame. The
/// returned frames are sorted ascending. The flag is set when fewer than `k`
/// frames are common.
pub fn select_discriminative_keyframes(candidates: &[&Trajectory], k: usize) -> (Vec<usize>, bool) {
    let Some(first) = candidates.first() else {
        return (Vec::new(), true);
    };
    let common: BTreeSet<usize> = first
        .keyframe_states
        .keys()
        .copied()
        .filter(|f| candidates.iter().all(|c| c.keyframe_states.contains_key(f)))
        .collect();
    let mut scored: Vec<(f64, usize)> = common
        .iter()
        .map(|&f| {
            let mut worst = 0.0f64;
            for (i, a) in candidates.iter().enumerate() {
                for b in &candidates[i + 1..] {
                    worst = worst.max(box_iou(&a.keyframe_states[&f].bbox, &b.keyframe_states[&f].bbox));
                }
            }
            (worst, f)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let flagged = scored.len() < k;
    let mut frames: Vec<usize> = scored.into_iter().take(k).map(|(_, f)| f).collect();
    frames.sort_unstable();
    (frames, flagged)
}

/// Crop embedding of a track at a frame: the track-id key first, then the
/// detection key when the state came from a detection.
pub fn crop_embedding(track: &Trajectory, frame: usize, backend: &dyn EmbeddingBackend) -> Result<Vec<f64>> {
    let primary = crop_key(track.id, frame);
    if let Some(v) = backend.lookup(&primary) {
        return Ok(v);
    }
    if let Some(key) = track
        .keyframe_states
        .get(&frame)
        .and_then(|s| s.instance_key.as_deref())
    {
        if let Some(v) = backend.lookup(&detection_key(frame, key)) {
            return Ok(v);
        }
    }
    Err(Error::Lookup(format!("no embedding for key `{primary}`")))
}

pub fn mean_vector(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Input("no vectors to average".into()))?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(Error::Shape(format!("embedding length {} != {dim}", v.len())));
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

pub fn aggregate_visual_embedding(
    track: &Trajectory,
    frames: &[usize],
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<f64>> {
    let vs = frames
        .iter()
        .map(|&f| crop_embedding(track, f, backend))
        .collect::<Result<Vec<_>>>()?;
    mean_vector(&vs)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("embedding lengths {} and {}", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0) || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Numeric("zero-norm or non-finite embedding".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

/// Candidates ordered by cosine similarity to `text`, descending, ties to
/// the smaller id.
pub fn rank_by_similarity(visual: &[(u32, Vec<f64>)], text: &[f64]) -> Result<Vec<(u32, f64)>> {
    let mut out = visual
        .iter()
        .map(|(id, v)| Ok((*id, cosine(v, text)?)))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseOutcome {
    pub keyframes: Vec<usize>,
    pub keyframes_flagged: bool,
    pub text_key: String,
    pub similarities: Vec<(u32, f64)>,
    pub selected: Vec<u32>,
}

/// Full verification step over the coarse subset. Candidates with no
/// shared keyframes fall back to their own earliest `k_frames` states.
pub fn verify_pose(
    candidates: &[&Trajectory],
    posture: &str,
    k: u32,
    k_frames: usize,
    backend: &dyn EmbeddingBackend,
) -> Result<PoseOutcome> {
    let tkey = text_key(posture);
    let text = backend.embedding(&tkey)?;
    let (frames, mut flagged) = select_discriminative_keyframes(candidates, k_frames.max(1));
    let mut visual = Vec::with_capacity(candidates.len());
    for c in candidates {
        let own: Vec<usize>;
        let use_frames = if frames.is_empty() {
            flagged = true;
            own = c.keyframe_states.keys().copied().take(k_frames.max(1)).collect();
            &own
        } else {
            &frames
        };
        visual.push((c.id, aggregate_visual_embedding(c, use_frames, backend)?));
    }
    let similarities = rank_by_similarity(&visual, &text)?;
    let selected = similarities.iter().take(k.max(1) as usize).map(|(id, _)| *id).collect();
    Ok(PoseOutcome {
        keyframes: frames,
        keyframes_flagged: flagged,
        text_key: tkey,
        similarities,
        selected,
    })
}
