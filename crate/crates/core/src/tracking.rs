//! Trajectory formation from keyframe detections.
//!
//! A track alive at keyframe `t` is compared with each same-category
//! detection at the next keyframe by propagating both onto the first `w`
//! frames starting at the new keyframe and averaging box IoU and centroid
//! distance over that window.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, round_half_away, Box2D};
use crate::mask::BinaryMask;
use crate::perception::{
    propagate_state_backward, propagate_state_forward, DetectionRecord, Direction, InstanceState, KeyframeSchedule,
    PerceptionBundle, PropagatedState,
};

pub const DEFAULT_THETA_IOU: f64 = 0.6;
pub const DEFAULT_THETA_DIST: f64 = 50.0;
pub const DEFAULT_WINDOW: usize = 3;
pub const DEFAULT_MAX_MISSES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationParams {
    pub theta_iou: f64,
    pub theta_dist: f64,
    pub window: usize,
    /// Consecutive unmatched keyframes after which a track stops matching.
    pub max_misses: u32,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            theta_iou: DEFAULT_THETA_IOU,
            theta_dist: DEFAULT_THETA_DIST,
            window: DEFAULT_WINDOW,
            max_misses: DEFAULT_MAX_MISSES,
        }
    }
}

impl AssociationParams {
    pub fn accepts(&self, avg_iou: f64, avg_centroid_dist: f64) -> bool {
        avg_iou >= self.theta_iou && avg_centroid_dist <= self.theta_dist
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeState {
    #[serde(rename = "box")]
    pub bbox: Box2D,
    pub mask: BinaryMask,
    pub score: f64,
    /// Bundle detection this state came from; `None` for backfilled states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u32,
    pub category: String,
    pub birth_frame: usize,
    pub last_frame: usize,
    pub keyframe_states: BTreeMap<usize, KeyframeState>,
    /// Backward-propagated states on frames before the first detection.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub retro_states: BTreeMap<usize, PropagatedState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_masks: Option<Vec<BinaryMask>>,
    #[serde(default)]
    pub misses: u32,
    #[serde(default)]
    pub frozen: bool,
}

impl Trajectory {
    pub fn spawn(id: u32, det: &DetectionRecord) -> Self {
        let mut keyframe_states = BTreeMap::new();
        keyframe_states.insert(det.frame_index, state_of(det));
        Self {
            id,
            category: det.category.clone(),
            birth_frame: det.frame_index,
            last_frame: det.frame_index,
            keyframe_states,
            retro_states: BTreeMap::new(),
            dense_masks: None,
            misses: 0,
            frozen: false,
        }
    }

    pub fn last_state(&self) -> (usize, &KeyframeState) {
        let (f, s) = self.keyframe_states.iter().next_back().expect("trajectory has states");
        (*f, s)
    }

    pub fn first_state(&self) -> (usize, &KeyframeState) {
        let (f, s) = self.keyframe_states.iter().next().expect("trajectory has states");
        (*f, s)
    }

    /// Box velocity from the last two keyframe states, zero for a single state.
    pub fn head_velocity(&self) -> (f64, f64) {
        let mut it = self.keyframe_states.iter().rev();
        match (it.next(), it.next()) {
            (Some((fb, b)), Some((fa, a))) => centroid_velocity(*fa, &a.bbox, *fb, &b.bbox),
            _ => (0.0, 0.0),
        }
    }

    /// Box velocity from the first two keyframe states.
    pub fn tail_velocity(&self) -> (f64, f64) {
        let mut it = self.keyframe_states.iter();
        match (it.next(), it.next()) {
            (Some((fa, a)), Some((fb, b))) => centroid_velocity(*fa, &a.bbox, *fb, &b.bbox),
            _ => (0.0, 0.0),
        }
    }

    /// Boxes at keyframes, in frame order.
    pub fn keyframe_boxes(&self) -> Vec<(usize, Box2D)> {
        self.keyframe_states.iter().map(|(f, s)| (*f, s.bbox)).collect()
    }

    pub fn mask_at(&self, frame: usize) -> Option<&BinaryMask> {
        if let Some(d) = &self.dense_masks {
            return d.get(frame);
        }
        self.keyframe_states.get(&frame).map(|s| &s.mask)
    }
}

fn state_of(det: &DetectionRecord) -> KeyframeState {
    KeyframeState {
        bbox: det.bbox,
        mask: det.mask.clone(),
        score: det.score,
        instance_key: Some(det.instance_key.clone()),
    }
}

fn centroid_velocity(fa: usize, a: &Box2D, fb: usize, b: &Box2D) -> (f64, f64) {
    let gap = (fb - fa) as f64;
    let (ca, cb) = (a.centroid(), b.centroid());
    ((cb.x - ca.x) / gap, (cb.y - ca.y) / gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchDecision {
    pub matched: bool,
    pub avg_iou: f64,
    pub avg_centroid_dist: f64,
    pub window: usize,
}

/// Compares a legacy track with a detection at a later keyframe.
pub fn predictive_association(
    legacy: &Trajectory,
    candidate: &DetectionRecord,
    params: &AssociationParams,
    bundle: &PerceptionBundle,
) -> Result<MatchDecision> {
    let (t, last) = legacy.last_state();
    let t_new = candidate.frame_index;
    if t_new <= t {
        return Err(Error::Input(format!(
            "candidate frame {t_new} does not follow track {} at frame {t}",
            legacy.id
        )));
    }
    let window = params.window.max(1);
    let end = (t_new + window - 1).min(bundle.frame_count() - 1);

    let legacy_state = InstanceState {
        frame: t,
        instance_key: last.instance_key.clone(),
        bbox: last.bbox,
        mask: last.mask.clone(),
        velocity: legacy.head_velocity(),
    };
    let legacy_path: BTreeMap<usize, Box2D> = propagate_state_forward(bundle, &legacy_state, end - t)
        .into_iter()
        .filter(|p| p.frame >= t_new)
        .map(|p| (p.frame, p.bbox))
        .collect();

    let mut cand_path = BTreeMap::new();
    cand_path.insert(t_new, candidate.bbox);
    let cand_state = InstanceState::from_detection(candidate);
    for p in propagate_state_forward(bundle, &cand_state, end - t_new) {
        cand_path.insert(p.frame, p.bbox);
    }

    let pairs: Vec<(Box2D, Box2D)> = (t_new..=end)
        .filter_map(|f| Some((*legacy_path.get(&f)?, *cand_path.get(&f)?)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::Model(format!(
            "no overlapping propagation for track {}",
            legacy.id
        )));
    }
    let n = pairs.len() as f64;
    let avg_iou = pairs.iter().map(|(a, b)| box_iou(a, b)).sum::<f64>() / n;
    let avg_centroid_dist = pairs
        .iter()
        .map(|(a, b)| a.centroid().distance(&b.centroid()))
        .sum::<f64>()
        / n;
    Ok(MatchDecision {
        matched: params.accepts(avg_iou, avg_centroid_dist),
        avg_iou,
        avg_centroid_dist,
        window: pairs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDecision {
    pub track_id: u32,
    pub instance_key: String,
    #[serde(flatten)]
    pub decision: MatchDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeAssociation {
    pub frame: usize,
    pub decisions: Vec<PairDecision>,
    pub matches: Vec<(u32, String)>,
    pub spawned: Vec<u32>,
    pub frozen: Vec<u32>,
}

/// Matches detections at one keyframe to alive tracks and spawns tracks for
/// the unmatched ones. `detections` must all lie on `frame`.
pub fn associate_keyframe(
    tracks: &mut Vec<Trajectory>,
    detections: &[&DetectionRecord],
    frame: usize,
    params: &AssociationParams,
    bundle: &PerceptionBundle,
    next_id: &mut u32,
) -> KeyframeAssociation {
    let mut decisions = Vec::new();
    let mut candidates: Vec<(f64, u32, usize, usize)> = Vec::new();
    for (ti, track) in tracks.iter().enumerate() {
        if track.frozen || track.last_state().0 >= frame {
            continue;
        }
        for (di, det) in detections.iter().enumerate() {
            if det.category != track.category {
                continue;
            }
            let Ok(decision) = predictive_association(track, det, params, bundle) else {
                continue;
            };
            if decision.matched {
                candidates.push((decision.avg_iou, track.id, ti, di));
            }
            decisions.push(PairDecision {
                track_id: track.id,
                instance_key: det.instance_key.clone(),
                decision,
            });
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.3.cmp(&b.3)));

    let mut track_used = vec![false; tracks.len()];
    let mut det_used = vec![false; detections.len()];
    let mut matches = Vec::new();
    for (_, id, ti, di) in candidates {
        if track_used[ti] || det_used[di] {
            continue;
        }
        track_used[ti] = true;
        det_used[di] = true;
        let track = &mut tracks[ti];
        track.keyframe_states.insert(frame, state_of(detections[di]));
        track.last_frame = frame;
        track.misses = 0;
        matches.push((id, detections[di].instance_key.clone()));
    }

    let mut frozen = Vec::new();
    for (ti, track) in tracks.iter_mut().enumerate() {
        if track_used[ti] || track.frozen || track.last_state().0 >= frame {
            continue;
        }
        track.misses += 1;
        if track.misses >= params.max_misses {
            track.frozen = true;
            frozen.push(track.id);
        }
    }

    let mut spawned = Vec::new();
    for (di, det) in detections.iter().enumerate() {
        if det_used[di] {
            continue;
        }
        tracks.push(Trajectory::spawn(*next_id, det));
        spawned.push(*next_id);
        *next_id += 1;
    }

    KeyframeAssociation {
        frame,
        decisions,
        matches,
        spawned,
        frozen,
    }
}

/// Extends a track born after frame 0 backwards, using stored backward
/// propagations or the reversed velocity of its first two states. Stops at
/// frame 0 or at the first empty propagated mask.
pub fn retroactive_fill(track: &Trajectory, bundle: &PerceptionBundle) -> Trajectory {
    let mut out = track.clone();
    let (t0, first) = track.first_state();
    if t0 == 0 {
        return out;
    }
    let state = InstanceState {
        frame: t0,
        instance_key: first.instance_key.clone(),
        bbox: first.bbox,
        mask: first.mask.clone(),
        velocity: track.tail_velocity(),
    };
    for p in propagate_state_backward(bundle, &state, t0) {
        if p.mask.is_empty() {
            break;
        }
        if bundle.schedule().contains(p.frame) {
            out.keyframe_states.insert(
                p.frame,
                KeyframeState {
                    bbox: p.bbox,
                    mask: p.mask.clone(),
                    score: first.score,
                    instance_key: None,
                },
            );
        }
        out.birth_frame = p.frame;
        out.retro_states.insert(p.frame, p);
    }
    out
}

/// Per-frame masks over the whole video. Frames outside `[birth, last]` are
/// empty; frames between keyframe states come from stored propagations
/// where available, otherwise from box interpolation.
pub fn densify_track(track: &Trajectory, schedule: &KeyframeSchedule, bundle: &PerceptionBundle) -> Trajectory {
    debug_assert!(track.keyframe_states.keys().all(|k| schedule.contains(*k)));
    let (w, h) = (bundle.width(), bundle.height());
    let states: Vec<(usize, &KeyframeState)> = track.keyframe_states.iter().map(|(f, s)| (*f, s)).collect();
    let mut dense = Vec::with_capacity(bundle.frame_count());
    for f in 0..bundle.frame_count() {
        if f < track.birth_frame || f > track.last_frame {
            dense.push(BinaryMask::empty(w, h));
            continue;
        }
        if let Some(s) = track.keyframe_states.get(&f) {
            dense.push(s.mask.clone());
            continue;
        }
        let after = states.partition_point(|(k, _)| *k < f);
        if after == 0 {
            let m = track
                .retro_states
                .get(&f)
                .map(|p| p.mask.clone())
                .unwrap_or_else(|| BinaryMask::empty(w, h));
            dense.push(m);
            continue;
        }
        let (ka, a) = states[after - 1];
        let Some(&(kb, b)) = states.get(after) else {
            dense.push(BinaryMask::empty(w, h));
            continue;
        };
        let stored = a
            .instance_key
            .as_deref()
            .and_then(|k| bundle.propagation(Direction::Forward, ka, k, f))
            .or_else(|| {
                b.instance_key
                    .as_deref()
                    .and_then(|k| bundle.propagation(Direction::Backward, kb, k, f))
            })
            .or_else(|| track.retro_states.get(&f));
        if let Some(p) = stored {
            dense.push(p.mask.clone());
            continue;
        }
        let t = (f - ka) as f64 / (kb - ka) as f64;
        let mid = a.bbox.lerp(&b.bbox, t);
        let (ca, cm) = (a.bbox.centroid(), mid.centroid());
        dense.push(
            a.mask
                .translate(round_half_away(cm.x - ca.x), round_half_away(cm.y - ca.y)),
        );
    }
    let mut out = track.clone();
    out.dense_masks = Some(dense);
    out
}

/// True when a detection category names the same thing as a query entity:
/// equal after case folding, or sharing the head (last) word.
pub fn category_matches(category: &str, entity: &str) -> bool {
    let c = category.trim().to_lowercase();
    let e = entity.trim().to_lowercase();
    if c == e {
        return true;
    }
    match (c.split_whitespace().last(), e.split_whitespace().last()) {
        (Some(a), Some(b)) => a == b,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingOutcome {
    pub tracks: Vec<Trajectory>,
    pub associations: Vec<KeyframeAssociation>,
}

/// Runs association over every keyframe, then retroactive fill and
/// densification. Only detections whose category matches one of
/// `entities` take part.
pub fn build_trajectories(
    bundle: &PerceptionBundle,
    entities: &[String],
    params: &AssociationParams,
) -> TrackingOutcome {
    let schedule = bundle.schedule().clone();
    let mut tracks = Vec::new();
    let mut associations = Vec::new();
    let mut next_id = 1u32;
    for &k in schedule.indices() {
        let dets: Vec<&DetectionRecord> = bundle
            .detections_at(k)
            .filter(|d| entities.iter().any(|e| category_matches(&d.category, e)))
            .collect();
        associations.push(associate_keyframe(&mut tracks, &dets, k, params, bundle, &mut next_id));
    }
    let tracks = tracks
        .iter()
        .map(|t| densify_track(&retroactive_fill(t, bundle), &schedule, bundle))
        .collect();
    TrackingOutcome { tracks, associations }
}

/// One line per track: header then the serialized keyframe boxes.
pub fn trajectory_dump(tracks: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in tracks {
        out.push_str(&format!(
            "id={} category={} birth={} last={} | {}\n",
            t.id,
            t.category,
            t.birth_frame,
            t.last_frame,
            crate::reasoner::serialize_trajectory(t)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{LoadOptions, PropagationEntry, PropagationFile, VideoMeta};
    use proptest::prelude::*;

    const W: u32 = 200;
    const H: u32 = 120;

    fn bundle_with(frames: usize, tau: usize, dets: Vec<DetectionRecord>, props: PropagationFile) -> PerceptionBundle {
        PerceptionBundle::from_parts(
            VideoMeta {
                id: "v".into(),
                width: W,
                height: H,
                frame_count: frames,
                keyframe_interval: tau,
                frames: vec![],
            },
            dets,
            props,
            vec![],
            None,
            &LoadOptions::default(),
        )
        .unwrap()
    }

    fn det(frame: usize, key: &str, x: f64, y: f64, s: f64) -> DetectionRecord {
        DetectionRecord {
            frame_index: frame,
            instance_key: key.into(),
            category: "cat".into(),
            score: 0.9,
            bbox: Box2D::new(x, y, x + s, y + s).unwrap(),
            mask: BinaryMask::from_rect(W, H, x as i64, y as i64, (x + s) as i64, (y + s) as i64),
        }
    }

    fn params() -> AssociationParams {
        AssociationParams::default()
    }

    #[test]
    fn threshold_semantics() {
        let p = params();
        assert!(p.accepts(0.6, 50.0));
        assert!(!p.accepts(0.55, 10.0));
        assert!(!p.accepts(0.7, 60.0));
    }

    proptest! {
        #[test]
        fn acceptance_is_monotone(iou in 0.0..1.0f64, dist in 0.0..100.0f64, d_iou in 0.0..0.5f64, d_dist in 0.0..50.0f64) {
            let p = params();
            if p.accepts(iou, dist) {
                prop_assert!(p.accepts((iou + d_iou).min(1.0), dist));
                prop_assert!(p.accepts(iou, (dist - d_dist).max(0.0)));
            }
            prop_assert_eq!(p.accepts(iou, dist), iou >= 0.6 && dist <= 50.0);
        }
    }

    #[test]
    fn static_object_matches_perfectly() {
        let b = bundle_with(
            31,
            15,
            vec![det(0, "a", 10.0, 10.0, 20.0), det(15, "a", 10.0, 10.0, 20.0)],
            Default::default(),
        );
        let track = Trajectory::spawn(1, &b.detections()[0]);
        let d = predictive_association(&track, &b.detections()[1], &params(), &b).unwrap();
        assert_eq!(
            (d.matched, d.avg_iou, d.avg_centroid_dist, d.window),
            (true, 1.0, 0.0, 3)
        );
    }

    #[test]
    fn window_truncated_at_video_end() {
        let b = bundle_with(
            16,
            15,
            vec![det(0, "a", 10.0, 10.0, 20.0), det(15, "a", 10.0, 10.0, 20.0)],
            Default::default(),
        );
        let track = Trajectory::spawn(1, &b.detections()[0]);
        let d = predictive_association(&track, &b.detections()[1], &params(), &b).unwrap();
        assert_eq!(d.window, 1);
    }

    #[test]
    fn association_uses_track_velocity() {
        // moving +2 px/frame: the legacy path lands on the new detection
        let dets = vec![
            det(0, "a", 0.0, 10.0, 20.0),
            det(15, "a", 30.0, 10.0, 20.0),
            det(30, "a", 60.0, 10.0, 20.0),
        ];
        let b = bundle_with(46, 15, dets, Default::default());
        let mut track = Trajectory::spawn(1, &b.detections()[0]);
        track.keyframe_states.insert(15, state_of(&b.detections()[1]));
        let d = predictive_association(&track, &b.detections()[2], &params(), &b).unwrap();
        // legacy at x = 60, 62, 64; candidate held at x = 60
        let expected_iou = (1.0 + 18.0 / 22.0 + 16.0 / 24.0) / 3.0;
        assert!(d.matched);
        assert!((d.avg_iou - expected_iou).abs() < 1e-12);
        assert!((d.avg_centroid_dist - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spawn_and_extend() {
        let b = bundle_with(
            31,
            15,
            vec![
                det(0, "a", 10.0, 10.0, 20.0),
                det(0, "b", 100.0, 60.0, 20.0),
                det(15, "x", 12.0, 10.0, 20.0),
            ],
            Default::default(),
        );
        let mut tracks = Vec::new();
        let mut next = 1;
        let d0: Vec<_> = b.detections_at(0).collect();
        let r = associate_keyframe(&mut tracks, &d0, 0, &params(), &b, &mut next);
        assert_eq!(r.spawned, vec![1, 2]);
        let d15: Vec<_> = b.detections_at(15).collect();
        let r = associate_keyframe(&mut tracks, &d15, 15, &params(), &b, &mut next);
        assert_eq!(r.matches, vec![(1, "x".to_string())]);
        assert!(r.spawned.is_empty());
        assert_eq!(tracks[0].last_frame, 15);
        assert_eq!(tracks[1].misses, 1);
    }

    /// Brute force over all one-to-one assignments for the crossed fixture.
    #[test]
    fn greedy_matches_crossed_fixture() {
        let iou = [[0.9, 0.7], [0.8, 0.65]];
        let mut order: Vec<(f64, usize, usize)> = vec![];
        for (a, row) in iou.iter().enumerate() {
            for (d, v) in row.iter().enumerate() {
                order.push((*v, a, d));
            }
        }
        order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let (mut ta, mut td, mut picks) = ([false; 2], [false; 2], vec![]);
        for (_, a, d) in order {
            if !ta[a] && !td[d] {
                ta[a] = true;
                td[d] = true;
                picks.push((a, d));
            }
        }
        assert_eq!(picks, vec![(0, 0), (1, 1)]);
        let brute_best = [
            (iou[0][0] + iou[1][1], [(0, 0), (1, 1)]),
            (iou[0][1] + iou[1][0], [(0, 1), (1, 0)]),
        ]
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap();
        assert_eq!(brute_best.1.to_vec(), picks);
    }

    #[test]
    fn one_detection_never_shared() {
        let b = bundle_with(
            31,
            15,
            vec![
                det(0, "a", 10.0, 10.0, 20.0),
                det(0, "b", 12.0, 10.0, 20.0),
                det(15, "x", 11.0, 10.0, 20.0),
            ],
            Default::default(),
        );
        let out = build_trajectories(&b, &["cat".into()], &params());
        // "b" overlaps "a" by IoU > 0.4, so NMS leaves a single track
        assert_eq!(out.tracks.len(), 1);
        let matched: Vec<_> = out.associations[1].matches.iter().map(|m| m.1.clone()).collect();
        assert_eq!(matched, vec!["x"]);
    }

    #[test]
    fn frozen_after_two_misses() {
        let b = bundle_with(46, 15, vec![det(0, "a", 10.0, 10.0, 20.0)], Default::default());
        let out = build_trajectories(&b, &["cat".into()], &params());
        let t = &out.tracks[0];
        assert!(t.frozen);
        assert_eq!((t.birth_frame, t.last_frame), (0, 0));
        assert_eq!(out.associations[2].frozen, vec![1]);
    }

    #[test]
    fn retro_fill_static_copies_state() {
        let b = bundle_with(31, 15, vec![det(15, "a", 10.0, 10.0, 20.0)], Default::default());
        let t = Trajectory::spawn(1, &b.detections()[0]);
        let filled = retroactive_fill(&t, &b);
        assert_eq!(filled.birth_frame, 0);
        assert_eq!(filled.keyframe_states[&0].bbox, t.keyframe_states[&15].bbox);
        assert_eq!(filled.keyframe_states[&0].mask, t.keyframe_states[&15].mask);
        let born_at_zero = Trajectory::spawn(2, &det(0, "z", 1.0, 1.0, 5.0));
        assert_eq!(retroactive_fill(&born_at_zero, &b), born_at_zero);
    }

    #[test]
    fn retro_fill_stops_when_object_leaves() {
        // enters from the left at 4 px/frame: x = 4f - 40, width 20
        let dets = vec![det(15, "a", 20.0, 10.0, 20.0), det(30, "a", 80.0, 10.0, 20.0)];
        let b = bundle_with(31, 15, dets, Default::default());
        let mut t = Trajectory::spawn(1, &b.detections()[0]);
        t.keyframe_states.insert(30, state_of(&b.detections()[1]));
        let filled = retroactive_fill(&t, &b);
        // right edge 4f - 20 > 0 until f = 5
        assert_eq!(filled.birth_frame, 6);
        assert!(!filled.keyframe_states.contains_key(&0));
        assert_eq!(filled.retro_states[&6].bbox.to_array(), [0.0, 10.0, 4.0, 30.0]);
    }

    #[test]
    fn densify_interpolates_linear_motion() {
        // 1 px/frame with an 80 px box keeps the unpropagated match above threshold
        let dets = vec![det(0, "a", 0.0, 10.0, 80.0), det(15, "a", 15.0, 10.0, 80.0)];
        let b = bundle_with(16, 15, dets, Default::default());
        let out = build_trajectories(&b, &["cat".into()], &params());
        assert_eq!(out.tracks.len(), 1);
        let t = &out.tracks[0];
        let dense = t.dense_masks.as_ref().unwrap();
        assert_eq!(dense.len(), 16);
        assert_eq!(dense[7].bbox().unwrap().to_array(), [7.0, 10.0, 87.0, 90.0]);
        assert_eq!(dense[15], b.detections()[1].mask);
    }

    #[test]
    fn densify_tau_one_equals_keyframes() {
        let dets: Vec<_> = (0..4).map(|f| det(f, "a", 10.0 + f as f64, 10.0, 20.0)).collect();
        let b = bundle_with(4, 1, dets, Default::default());
        let out = build_trajectories(&b, &["cat".into()], &params());
        let t = &out.tracks[0];
        for f in 0..4 {
            assert_eq!(t.dense_masks.as_ref().unwrap()[f], t.keyframe_states[&f].mask);
        }
    }

    #[test]
    fn densify_empty_outside_lifetime() {
        let b = bundle_with(46, 15, vec![det(15, "a", 10.0, 10.0, 20.0)], Default::default());
        let mut t = Trajectory::spawn(1, &b.detections()[0]);
        t.birth_frame = 15;
        let d = densify_track(&t, b.schedule(), &b);
        let dense = d.dense_masks.unwrap();
        assert!(dense[14].is_empty() && dense[16].is_empty() && !dense[15].is_empty());
    }

    #[test]
    fn densify_prefers_stored_propagation() {
        let a = det(0, "a", 10.0, 10.0, 20.0);
        let b15 = det(15, "a", 10.0, 10.0, 20.0);
        let odd = BinaryMask::from_rect(W, H, 10, 10, 30, 29);
        let props = PropagationFile {
            forward: vec![PropagationEntry {
                source_frame: 0,
                instance_key: "a".into(),
                target_frame: 5,
                bbox: Box2D::new(10.0, 10.0, 30.0, 30.0).unwrap(),
                mask: odd.clone(),
            }],
            backward: vec![],
        };
        let b = bundle_with(16, 15, vec![a, b15], props);
        let out = build_trajectories(&b, &["cat".into()], &params());
        assert_eq!(out.tracks[0].dense_masks.as_ref().unwrap()[5], odd);
    }

    #[test]
    fn category_gating() {
        let mut dog = det(15, "d", 10.0, 10.0, 20.0);
        dog.category = "dog".into();
        let b = bundle_with(31, 15, vec![det(0, "a", 10.0, 10.0, 20.0), dog], Default::default());
        let out = build_trajectories(&b, &["cat".into(), "dog".into()], &params());
        assert_eq!(out.tracks.len(), 2);
        assert!(category_matches("dog", "white dog"));
        assert!(!category_matches("dog", "cat"));
    }

    #[test]
    fn ids_only_grow() {
        let b = bundle_with(
            46,
            15,
            vec![
                det(0, "a", 10.0, 10.0, 20.0),
                det(15, "b", 150.0, 80.0, 20.0),
                det(30, "c", 80.0, 40.0, 20.0),
            ],
            Default::default(),
        );
        let out = build_trajectories(&b, &["cat".into()], &params());
        let ids: Vec<u32> = out.tracks.iter().map(|t| t.id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }
}
