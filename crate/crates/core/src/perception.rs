//! Keyframe scheduling and the on-disk perception bundle.
//!
//! A bundle holds everything the detector, segmenter and image-text encoder
//! would have produced for one video: keyframe detections with masks,
//! optional forward/backward mask propagations, and optional embeddings.
//!
//! ```text
//! <bundle>/video.json          metadata
//! <bundle>/detections.json     [DetectionRecord]
//! <bundle>/propagations.json   {"forward": [...], "backward": [...]}   (optional)
//! <bundle>/embeddings.json     [{"key": ..., "vector": [...]}]          (optional)
//! <bundle>/frames/%06d.png
//! ```

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, round_half_away, Box2D};
use crate::mask::BinaryMask;

pub const BOX_THRESHOLD: f64 = 0.3;
pub const NMS_IOU_THRESHOLD: f64 = 0.4;
/// Slack allowed between a detection's mask extent and its box.
pub const MASK_BOX_TOLERANCE_PX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyframeSchedule {
    interval: usize,
    indices: Vec<usize>,
}

/// Multiples of `tau` below `frame_count`, plus the last frame.
pub fn sample_keyframes(frame_count: usize, tau: usize) -> KeyframeSchedule {
    let frame_count = frame_count.max(1);
    let tau = tau.max(1);
    let mut indices: Vec<usize> = (0..frame_count).step_by(tau).collect();
    if *indices.last().unwrap() != frame_count - 1 {
        indices.push(frame_count - 1);
    }
    KeyframeSchedule { interval: tau, indices }
}

impl KeyframeSchedule {
    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.indices.binary_search(&frame).is_ok()
    }

    pub fn position(&self, frame: usize) -> Option<usize> {
        self.indices.binary_search(&frame).ok()
    }

    /// Consecutive keyframe pairs `(t_k, t_{k+1})`.
    pub fn intervals(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.indices.windows(2).map(|w| (w[0], w[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_index: usize,
    pub instance_key: String,
    pub category: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: Box2D,
    pub mask: BinaryMask,
}

impl DetectionRecord {
    fn check(&self, path: &str, width: u32, height: u32) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::validation(
                format!("{path}.score"),
                format!("{} is outside [0, 1]", self.score),
            ));
        }
        self.bbox
            .validate()
            .map_err(|e| Error::validation(format!("{path}.box"), e.to_string()))?;
        if self.mask.width() != width || self.mask.height() != height {
            return Err(Error::validation(
                format!("{path}.mask.size"),
                format!(
                    "[{}, {}] does not match video [{height}, {width}]",
                    self.mask.height(),
                    self.mask.width()
                ),
            ));
        }
        if let Some(extent) = self.mask.bbox() {
            if !self.bbox.dilate(MASK_BOX_TOLERANCE_PX).contains_box(&extent) {
                return Err(Error::validation(
                    format!("{path}.mask"),
                    format!(
                        "mask extent {:?} exceeds box {:?}",
                        extent.to_array(),
                        self.bbox.to_array()
                    ),
                ));
            }
        }
        if self.instance_key.is_empty() {
            return Err(Error::validation(format!("{path}.instance_key"), "empty key"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    pub keyframe_interval: usize,
    /// Frame image paths relative to the bundle root.
    #[serde(default)]
    pub frames: Vec<String>,
}

impl VideoMeta {
    pub fn default_frame_path(index: usize) -> String {
        format!("frames/{index:06}.png")
    }

    fn check(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::validation("video.width", "frame dimensions must be positive"));
        }
        if self.frame_count == 0 {
            return Err(Error::validation("video.frame_count", "must be at least 1"));
        }
        if self.keyframe_interval == 0 {
            return Err(Error::validation("video.keyframe_interval", "must be at least 1"));
        }
        if !self.frames.is_empty() && self.frames.len() != self.frame_count {
            return Err(Error::validation(
                "video.frames",
                format!("{} paths for {} frames", self.frames.len(), self.frame_count),
            ));
        }
        Ok(())
    }
}

/// One propagated mask as stored in `propagations.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationEntry {
    pub source_frame: usize,
    pub instance_key: String,
    pub target_frame: usize,
    #[serde(rename = "box")]
    pub bbox: Box2D,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropagationFile {
    #[serde(default)]
    pub forward: Vec<PropagationEntry>,
    #[serde(default)]
    pub backward: Vec<PropagationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub key: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> i64 {
        match self {
            Direction::Forward => 1,
            Direction::Backward => -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagatedState {
    pub frame: usize,
    #[serde(rename = "box")]
    pub bbox: Box2D,
    pub mask: BinaryMask,
}

type PropagationKey = (usize, String, usize);

#[derive(Debug, Clone, PartialEq)]
enum FrameStore {
    Memory(Vec<RgbImage>),
    Disk(Vec<PathBuf>),
    Absent,
}

/// Thresholds applied when detections enter a bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub box_threshold: f64,
    pub nms_iou: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            box_threshold: BOX_THRESHOLD,
            nms_iou: NMS_IOU_THRESHOLD,
        }
    }
}

/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionBundle {
    meta: VideoMeta,
    schedule: KeyframeSchedule,
    detections: Vec<DetectionRecord>,
    forward: BTreeMap<PropagationKey, PropagatedState>,
    backward: BTreeMap<PropagationKey, PropagatedState>,
    embeddings: BTreeMap<String, Vec<f64>>,
    frames: FrameStore,
}

/// Score threshold, then greedy suppression within each (frame, category)
/// group. Output is sorted by frame, category, descending score, key.
pub fn filter_detections(mut dets: Vec<DetectionRecord>, opts: &LoadOptions) -> Vec<DetectionRecord> {
    dets.retain(|d| d.score >= opts.box_threshold);
    dets.sort_by(|a, b| {
        a.frame_index
            .cmp(&b.frame_index)
            .then_with(|| a.category.cmp(&b.category))
            .then_with(|| b.score.total_cmp(&a.score))
            .then_with(|| a.instance_key.cmp(&b.instance_key))
    });
    let mut kept: Vec<DetectionRecord> = Vec::with_capacity(dets.len());
    let mut group_start = 0;
    for d in dets {
        if kept
            .last()
            .is_some_and(|k| k.frame_index != d.frame_index || k.category != d.category)
        {
            group_start = kept.len();
        }
        let suppressed = kept[group_start..]
            .iter()
            .any(|k| box_iou(&k.bbox, &d.bbox) > opts.nms_iou);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

fn normalize(key: &str, v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation(
            format!("embeddings[{key}]"),
            "vector must be nonempty and finite",
        ));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::validation(format!("embeddings[{key}]"), "zero-norm vector"));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

impl PerceptionBundle {
    /// Builds and validates a bundle from in-memory parts, applying the
    /// detection threshold and suppression from `opts`.
    pub fn from_parts(
        meta: VideoMeta,
        detections: Vec<DetectionRecord>,
        propagations: PropagationFile,
        embeddings: Vec<EmbeddingEntry>,
        frames: Option<Vec<RgbImage>>,
        opts: &LoadOptions,
    ) -> Result<Self> {
        let store = match frames {
            Some(f) => {
                if f.len() != meta.frame_count {
                    return Err(Error::validation(
                        "frames",
                        format!("{} images for {} frames", f.len(), meta.frame_count),
                    ));
                }
                if let Some((i, _)) = f
                    .iter()
                    .enumerate()
                    .find(|(_, im)| im.width() != meta.width || im.height() != meta.height)
                {
                    return Err(Error::validation(
                        format!("frames[{i}]"),
                        "image size does not match video",
                    ));
                }
                FrameStore::Memory(f)
            }
            None => FrameStore::Absent,
        };
        Self::assemble(meta, detections, propagations, embeddings, store, opts)
    }

    fn assemble(
        meta: VideoMeta,
        detections: Vec<DetectionRecord>,
        propagations: PropagationFile,
        embeddings: Vec<EmbeddingEntry>,
        frames: FrameStore,
        opts: &LoadOptions,
    ) -> Result<Self> {
        meta.check()?;
        let schedule = sample_keyframes(meta.frame_count, meta.keyframe_interval);
        let mut seen = BTreeSet::new();
        for (i, d) in detections.iter().enumerate() {
            let path = format!("detections[{i}]");
            if d.frame_index >= meta.frame_count {
                return Err(Error::validation(
                    format!("{path}.frame_index"),
                    format!("{} is past the last frame {}", d.frame_index, meta.frame_count - 1),
                ));
            }
            if !schedule.contains(d.frame_index) {
                return Err(Error::validation(
                    format!("{path}.frame_index"),
                    format!(
                        "{} is not a keyframe for interval {}",
                        d.frame_index, meta.keyframe_interval
                    ),
                ));
            }
            d.check(&path, meta.width, meta.height)?;
            if !seen.insert((d.frame_index, d.instance_key.clone())) {
                return Err(Error::validation(
                    format!("{path}.instance_key"),
                    format!("duplicate key `{}` on frame {}", d.instance_key, d.frame_index),
                ));
            }
        }
        let detections = filter_detections(detections, opts);

        let mut forward = BTreeMap::new();
        let mut backward = BTreeMap::new();
        for (name, list, dir) in [
            ("forward", propagations.forward, Direction::Forward),
            ("backward", propagations.backward, Direction::Backward),
        ] {
            for (i, p) in list.into_iter().enumerate() {
                let path = format!("propagations.{name}[{i}]");
                let ordered = match dir {
                    Direction::Forward => p.target_frame > p.source_frame,
                    Direction::Backward => p.target_frame < p.source_frame,
                };
                if !ordered {
                    return Err(Error::validation(
                        format!("{path}.target_frame"),
                        format!("{} is on the wrong side of source {}", p.target_frame, p.source_frame),
                    ));
                }
                if p.source_frame >= meta.frame_count || p.target_frame >= meta.frame_count {
                    return Err(Error::validation(path, "frame index out of range"));
                }
                if p.mask.width() != meta.width || p.mask.height() != meta.height {
                    return Err(Error::validation(format!("{path}.mask.size"), "does not match video"));
                }
                p.bbox
                    .validate()
                    .map_err(|e| Error::validation(format!("{path}.box"), e.to_string()))?;
                let map = match dir {
                    Direction::Forward => &mut forward,
                    Direction::Backward => &mut backward,
                };
                map.insert(
                    (p.source_frame, p.instance_key, p.target_frame),
                    PropagatedState {
                        frame: p.target_frame,
                        bbox: p.bbox,
                        mask: p.mask,
                    },
                );
            }
        }

        let mut emb = BTreeMap::new();
        let mut dim = None;
        for e in embeddings {
            let v = normalize(&e.key, &e.vector)?;
            if *dim.get_or_insert(v.len()) != v.len() {
                return Err(Error::validation(
                    format!("embeddings[{}]", e.key),
                    format!("dimension {} differs from {}", v.len(), dim.unwrap()),
                ));
            }
            emb.insert(e.key, v);
        }

        Ok(Self {
            meta,
            schedule,
            detections,
            forward,
            backward,
            embeddings: emb,
            frames,
        })
    }

    pub fn meta(&self) -> &VideoMeta {
        &self.meta
    }

    pub fn video_id(&self) -> &str {
        &self.meta.id
    }

    pub fn width(&self) -> u32 {
        self.meta.width
    }

    pub fn height(&self) -> u32 {
        self.meta.height
    }

    pub fn frame_count(&self) -> usize {
        self.meta.frame_count
    }

    pub fn schedule(&self) -> &KeyframeSchedule {
        &self.schedule
    }

    pub fn detections(&self) -> &[DetectionRecord] {
        &self.detections
    }

    pub fn detections_at(&self, frame: usize) -> impl Iterator<Item = &DetectionRecord> {
        self.detections.iter().filter(move |d| d.frame_index == frame)
    }

    pub fn detection(&self, frame: usize, instance_key: &str) -> Option<&DetectionRecord> {
        self.detections
            .iter()
            .find(|d| d.frame_index == frame && d.instance_key == instance_key)
    }

    pub fn has_propagations(&self) -> bool {
        !(self.forward.is_empty() && self.backward.is_empty())
    }

    pub fn propagation(
        &self,
        dir: Direction,
        source: usize,
        instance_key: &str,
        target: usize,
    ) -> Option<&PropagatedState> {
        let key = (source, instance_key.to_string(), target);
        match dir {
            Direction::Forward => self.forward.get(&key),
            Direction::Backward => self.backward.get(&key),
        }
    }

    pub fn embeddings(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.embeddings
    }

    pub fn embedding(&self, key: &str) -> Option<&[f64]> {
        self.embeddings.get(key).map(Vec::as_slice)
    }

    pub fn has_frames(&self) -> bool {
        !matches!(self.frames, FrameStore::Absent)
    }

    pub fn frame(&self, index: usize) -> Result<Cow<'_, RgbImage>> {
        if index >= self.meta.frame_count {
            return Err(Error::Lookup(format!("frame {index} of {}", self.meta.frame_count)));
        }
        match &self.frames {
            FrameStore::Memory(v) => Ok(Cow::Borrowed(&v[index])),
            FrameStore::Disk(paths) => {
                let path = &paths[index];
                let img = image::open(path).map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                let img = img.to_rgb8();
                if img.width() != self.meta.width || img.height() != self.meta.height {
                    return Err(Error::Image {
                        path: path.clone(),
                        message: format!(
                            "{}x{} image in a {}x{} video",
                            img.width(),
                            img.height(),
                            self.meta.width,
                            self.meta.height
                        ),
                    });
                }
                Ok(Cow::Owned(img))
            }
            FrameStore::Absent => Err(Error::Lookup("bundle has no frame images".into())),
        }
    }

    /// Propagates a stored detection forward by up to `horizon` frames.
    /// Detections have no motion history, so the fallback is stationary.
    pub fn propagate_forward(
        &self,
        source_frame: usize,
        instance_key: &str,
        horizon: usize,
    ) -> Result<Vec<PropagatedState>> {
        let det = self
            .detection(source_frame, instance_key)
            .ok_or_else(|| Error::Lookup(format!("no detection `{instance_key}` on frame {source_frame}")))?;
        let state = InstanceState::from_detection(det);
        Ok(propagate(self, &state, horizon, Direction::Forward))
    }

    pub fn propagation_file(&self) -> PropagationFile {
        let to_entries = |m: &BTreeMap<PropagationKey, PropagatedState>| {
            m.iter()
                .map(|((s, k, t), p)| PropagationEntry {
                    source_frame: *s,
                    instance_key: k.clone(),
                    target_frame: *t,
                    bbox: p.bbox,
                    mask: p.mask.clone(),
                })
                .collect()
        };
        PropagationFile {
            forward: to_entries(&self.forward),
            backward: to_entries(&self.backward),
        }
    }

    pub fn embedding_entries(&self) -> Vec<EmbeddingEntry> {
        self.embeddings
            .iter()
            .map(|(k, v)| EmbeddingEntry {
                key: k.clone(),
                vector: v.clone(),
            })
            .collect()
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

fn read_optional_json<T: serde::de::DeserializeOwned + Default>(path: &Path) -> Result<T> {
    if path.exists() {
        read_json(path)
    } else {
        Ok(T::default())
    }
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<PerceptionBundle> {
    load_bundle_with(dir, &LoadOptions::default())
}

pub fn load_bundle_with(dir: impl AsRef<Path>, opts: &LoadOptions) -> Result<PerceptionBundle> {
    let dir = dir.as_ref();
    let mut meta: VideoMeta = read_json(&dir.join("video.json"))?;
    meta.check()?;
    if meta.frames.is_empty() {
        meta.frames = (0..meta.frame_count).map(VideoMeta::default_frame_path).collect();
    }
    let detections: Vec<DetectionRecord> = read_json(&dir.join("detections.json"))?;
    let propagations: PropagationFile = read_optional_json(&dir.join("propagations.json"))?;
    let embeddings: Vec<EmbeddingEntry> = read_optional_json(&dir.join("embeddings.json"))?;
    let paths: Vec<PathBuf> = meta.frames.iter().map(|p| dir.join(p)).collect();
    if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
        return Err(Error::io(
            missing,
            std::io::Error::new(std::io::ErrorKind::NotFound, "frame image missing"),
        ));
    }
    PerceptionBundle::assemble(
        meta,
        detections,
        propagations,
        embeddings,
        FrameStore::Disk(paths),
        opts,
    )
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the bundle layout. Frames are written as PNG when available.
pub fn write_bundle(bundle: &PerceptionBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("frames")).map_err(|e| Error::io(dir, e))?;
    let mut meta = bundle.meta.clone();
    meta.frames = (0..meta.frame_count).map(VideoMeta::default_frame_path).collect();
    write_json(&dir.join("video.json"), &meta)?;
    write_json(&dir.join("detections.json"), &bundle.detections)?;
    if bundle.has_propagations() {
        write_json(&dir.join("propagations.json"), &bundle.propagation_file())?;
    }
    if !bundle.embeddings.is_empty() {
        write_json(&dir.join("embeddings.json"), &bundle.embedding_entries())?;
    }
    if bundle.has_frames() {
        for (i, rel) in meta.frames.iter().enumerate() {
            let path = dir.join(rel);
            let img = bundle.frame(i)?;
            img.save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
    }
    Ok(())
}

/// A tracked object's state at one frame, the input to propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceState {
    pub frame: usize,
    /// Detection key when the state came from a bundle detection.
    pub instance_key: Option<String>,
    pub bbox: Box2D,
    pub mask: BinaryMask,
    /// Box displacement per frame, used when the bundle has no entry.
    pub velocity: (f64, f64),
}

impl InstanceState {
    pub fn from_detection(d: &DetectionRecord) -> Self {
        Self {
            frame: d.frame_index,
            instance_key: Some(d.instance_key.clone()),
            bbox: d.bbox,
            mask: d.mask.clone(),
            velocity: (0.0, 0.0),
        }
    }
}

fn clip_box(b: &Box2D, width: u32, height: u32) -> Box2D {
    let (w, h) = (width as f64, height as f64);
    Box2D::from_corners_unchecked(
        b.xmin.clamp(0.0, w),
        b.ymin.clamp(0.0, h),
        b.xmax.clamp(0.0, w),
        b.ymax.clamp(0.0, h),
    )
}

/// Propagates `state` up to `horizon` frames in `dir`, stopping at the
/// video bounds. Bundle entries are used where present; other frames
/// continue from the most recent known state at constant velocity.
pub fn propagate(
    bundle: &PerceptionBundle,
    state: &InstanceState,
    horizon: usize,
    dir: Direction,
) -> Vec<PropagatedState> {
    let mut out = Vec::with_capacity(horizon);
    let mut anchor_box = state.bbox;
    let mut anchor_mask = std::borrow::Cow::Borrowed(&state.mask);
    let mut anchor_step = 0i64;
    let sign = dir.sign();
    for step in 1..=horizon as i64 {
        let target = state.frame as i64 + sign * step;
        if target < 0 || target >= bundle.frame_count() as i64 {
            break;
        }
        let target = target as usize;
        let stored = state
            .instance_key
            .as_deref()
            .and_then(|k| bundle.propagation(dir, state.frame, k, target));
        if let Some(p) = stored {
            anchor_box = p.bbox;
            anchor_mask = std::borrow::Cow::Owned(p.mask.clone());
            anchor_step = step;
            out.push(p.clone());
            continue;
        }
        let n = (sign * (step - anchor_step)) as f64;
        let (dx, dy) = (state.velocity.0 * n, state.velocity.1 * n);
        let bbox = clip_box(&anchor_box.translate(dx, dy), bundle.width(), bundle.height());
        let mask = anchor_mask.translate(round_half_away(dx), round_half_away(dy));
        out.push(PropagatedState {
            frame: target,
            bbox,
            mask,
        });
    }
    out
}

pub fn propagate_state_forward(
    bundle: &PerceptionBundle,
    state: &InstanceState,
    horizon: usize,
) -> Vec<PropagatedState> {
    propagate(bundle, state, horizon, Direction::Forward)
}

pub fn propagate_state_backward(
    bundle: &PerceptionBundle,
    state: &InstanceState,
    horizon: usize,
) -> Vec<PropagatedState> {
    propagate(bundle, state, horizon, Direction::Backward)
}

/// Luma in `[0, 1]` using the 0.299/0.587/0.114 weights.
pub fn luma(img: &RgbImage) -> Vec<f32> {
    img.pixels()
        .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta(frames: usize, tau: usize) -> VideoMeta {
        VideoMeta {
            id: "v".into(),
            width: 40,
            height: 30,
            frame_count: frames,
            keyframe_interval: tau,
            frames: vec![],
        }
    }

    fn det(frame: usize, key: &str, score: f64, x0: i64, y0: i64, x1: i64, y1: i64) -> DetectionRecord {
        DetectionRecord {
            frame_index: frame,
            instance_key: key.into(),
            category: "cat".into(),
            score,
            bbox: Box2D::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64).unwrap(),
            mask: BinaryMask::from_rect(40, 30, x0, y0, x1, y1),
        }
    }

    fn bundle(dets: Vec<DetectionRecord>, props: PropagationFile) -> Result<PerceptionBundle> {
        PerceptionBundle::from_parts(meta(31, 15), dets, props, vec![], None, &LoadOptions::default())
    }

    #[test]
    fn keyframe_schedules() {
        assert_eq!(sample_keyframes(1, 15).indices(), &[0]);
        assert_eq!(sample_keyframes(31, 15).indices(), &[0, 15, 30]);
        assert_eq!(sample_keyframes(40, 15).indices(), &[0, 15, 30, 39]);
        assert_eq!(sample_keyframes(4, 1).indices(), &[0, 1, 2, 3]);
    }

    proptest! {
        #[test]
        fn schedule_covers_ends_with_bounded_gaps(t in 1usize..300, tau in 1usize..40) {
            let s = sample_keyframes(t, tau);
            prop_assert_eq!(s.indices()[0], 0);
            prop_assert_eq!(*s.indices().last().unwrap(), t - 1);
            for (a, b) in s.intervals() {
                prop_assert!(b > a && b - a <= tau);
            }
        }
    }

    #[test]
    fn low_score_dropped() {
        let b = bundle(
            vec![det(0, "a", 0.25, 0, 0, 5, 5), det(0, "b", 0.3, 10, 10, 15, 15)],
            Default::default(),
        )
        .unwrap();
        let keys: Vec<_> = b.detections().iter().map(|d| d.instance_key.as_str()).collect();
        assert_eq!(keys, vec!["b"]);
    }

    #[test]
    fn nms_keeps_higher_score() {
        // [0,0,10,10] vs [0,0,10,6]: inter 60, union 100 -> IoU 0.6
        let b = bundle(
            vec![det(0, "lo", 0.8, 0, 0, 10, 6), det(0, "hi", 0.9, 0, 0, 10, 10)],
            Default::default(),
        )
        .unwrap();
        assert_eq!(b.detections().len(), 1);
        assert_eq!(b.detections()[0].instance_key, "hi");
    }

    #[test]
    fn nms_is_per_category_and_frame() {
        let mut other = det(0, "dog", 0.8, 0, 0, 10, 10);
        other.category = "dog".into();
        let b = bundle(
            vec![det(0, "a", 0.9, 0, 0, 10, 10), other, det(15, "a", 0.9, 0, 0, 10, 10)],
            Default::default(),
        )
        .unwrap();
        assert_eq!(b.detections().len(), 3);
    }

    #[test]
    fn empty_detections_valid() {
        assert!(bundle(vec![], Default::default()).unwrap().detections().is_empty());
    }

    #[test]
    fn non_keyframe_detection_rejected_with_path() {
        let err = bundle(vec![det(7, "a", 0.9, 0, 0, 5, 5)], Default::default()).unwrap_err();
        match err {
            Error::Validation { path, .. } => assert_eq!(path, "detections[0].frame_index"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mask_outside_box_rejected() {
        let mut d = det(0, "a", 0.9, 0, 0, 5, 5);
        d.bbox = Box2D::new(0.0, 0.0, 2.0, 2.0).unwrap();
        assert!(matches!(
            bundle(vec![d], Default::default()),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn backward_entry_must_precede_source() {
        let d = det(15, "a", 0.9, 0, 0, 5, 5);
        let bad = PropagationFile {
            forward: vec![],
            backward: vec![PropagationEntry {
                source_frame: 15,
                instance_key: "a".into(),
                target_frame: 16,
                bbox: d.bbox,
                mask: d.mask.clone(),
            }],
        };
        assert!(bundle(vec![d], bad).is_err());
    }

    #[test]
    fn static_fallback_has_no_drift() {
        let b = bundle(vec![det(0, "a", 0.9, 3, 4, 9, 12)], Default::default()).unwrap();
        let out = b.propagate_forward(0, "a", 3).unwrap();
        assert_eq!(out.len(), 3);
        for (i, p) in out.iter().enumerate() {
            assert_eq!(p.frame, i + 1);
            assert_eq!(p.bbox, b.detections()[0].bbox);
            assert_eq!(p.mask, b.detections()[0].mask);
        }
        assert!(matches!(b.propagate_forward(0, "zz", 1), Err(Error::Lookup(_))));
    }

    #[test]
    fn constant_velocity_fallback() {
        let b = PerceptionBundle::from_parts(
            meta(31, 15),
            vec![],
            Default::default(),
            vec![],
            None,
            &Default::default(),
        )
        .unwrap();
        let mut w = meta(31, 15);
        w.width = 100;
        let wide =
            PerceptionBundle::from_parts(w, vec![], Default::default(), vec![], None, &Default::default()).unwrap();
        let state = InstanceState {
            frame: 0,
            instance_key: None,
            bbox: Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            mask: BinaryMask::from_rect(100, 30, 0, 0, 10, 10),
            velocity: (10.0, 0.0),
        };
        let out = propagate_state_forward(&wide, &state, 2);
        assert_eq!(out[0].bbox.to_array(), [10.0, 0.0, 20.0, 10.0]);
        assert_eq!(out[1].bbox.to_array(), [20.0, 0.0, 30.0, 10.0]);
        assert_eq!(out[1].mask, BinaryMask::from_rect(100, 30, 20, 0, 30, 10));
        // stops at the video start
        assert!(
            propagate_state_backward(
                &b,
                &InstanceState {
                    frame: 1,
                    ..state.clone()
                },
                5
            )
            .len()
                == 1
        );
    }

    #[test]
    fn stored_propagations_pass_through() {
        let d = det(0, "a", 0.9, 0, 0, 5, 5);
        let entries: Vec<PropagationEntry> = (1..=3)
            .map(|t| PropagationEntry {
                source_frame: 0,
                instance_key: "a".into(),
                target_frame: t,
                bbox: Box2D::new(t as f64, 0.0, t as f64 + 5.0, 5.0).unwrap(),
                mask: BinaryMask::from_rect(40, 30, t as i64, 0, t as i64 + 5, 5),
            })
            .collect();
        let b = bundle(
            vec![d],
            PropagationFile {
                forward: entries.clone(),
                backward: vec![],
            },
        )
        .unwrap();
        let out = b.propagate_forward(0, "a", 3).unwrap();
        let expected: Vec<PropagatedState> = entries
            .into_iter()
            .map(|e| PropagatedState {
                frame: e.target_frame,
                bbox: e.bbox,
                mask: e.mask,
            })
            .collect();
        assert_eq!(out, expected);
    }

    #[test]
    fn embeddings_normalized_and_checked() {
        let ok = PerceptionBundle::from_parts(
            meta(1, 15),
            vec![],
            Default::default(),
            vec![EmbeddingEntry {
                key: "text/x".into(),
                vector: vec![3.0, 4.0],
            }],
            None,
            &Default::default(),
        )
        .unwrap();
        assert_eq!(ok.embedding("text/x").unwrap(), &[0.6, 0.8]);
        let zero = PerceptionBundle::from_parts(
            meta(1, 15),
            vec![],
            Default::default(),
            vec![EmbeddingEntry {
                key: "k".into(),
                vector: vec![0.0, 0.0],
            }],
            None,
            &Default::default(),
        );
        assert!(zero.is_err());
    }

    #[test]
    fn write_then_load_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<RgbImage> = (0..31)
            .map(|i| RgbImage::from_pixel(40, 30, image::Rgb([i as u8, 0, 0])))
            .collect();
        let b = PerceptionBundle::from_parts(
            meta(31, 15),
            vec![det(0, "a", 0.9, 0, 0, 5, 5), det(15, "a", 0.2, 0, 0, 5, 5)],
            Default::default(),
            vec![],
            Some(frames),
            &Default::default(),
        )
        .unwrap();
        write_bundle(&b, dir.path()).unwrap();
        let l1 = load_bundle(dir.path()).unwrap();
        let l2 = load_bundle(dir.path()).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(l1.detections(), b.detections());
        assert_eq!(l1.frame(3).unwrap().get_pixel(0, 0)[0], 3);
    }

    #[test]
    fn missing_files_are_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Io { .. })));
        fs::write(
            dir.path().join("video.json"),
            serde_json::to_string(&meta(2, 1)).unwrap(),
        )
        .unwrap();
        fs::write(dir.path().join("detections.json"), "[]").unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn luma_weights() {
        let img = RgbImage::from_pixel(1, 1, image::Rgb([255, 0, 0]));
        assert!((luma(&img)[0] - 0.299).abs() < 1e-6);
    }
}
