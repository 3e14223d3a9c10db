//! Camera motion between keyframes and camera-compensated kinematics.
//!
//! Interval transform `A_(a,b)` maps frame-`a` pixel coordinates to frame
//! `b`. The cumulative transform at keyframe `k` maps frame-0 coordinates
//! to frame `k`; its inverse brings a box back into the frame-0 reference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::affine::{estimate_affine, AffineFit, AffineTransform, RansacParams};
use crate::error::{Error, Result};
use crate::flow::{track_pyramids, FlowParams, LumaImage, Pyramid};
use crate::geometry::{Box2D, Point2D};
use crate::perception::{KeyframeSchedule, PerceptionBundle};
use crate::tracking::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    /// Product of per-frame estimates.
    Chained,
    /// Single estimate between the two keyframes.
    Direct,
    /// Estimation failed; identity assumed.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub from: usize,
    pub to: usize,
    pub transform: AffineTransform,
    /// Smallest inlier count among the fits that make up the interval.
    pub inliers: usize,
    /// Largest RMS residual among those fits.
    pub residual_rms: f64,
    pub method: IntervalMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraMotionModel {
    pub intervals: Vec<IntervalEstimate>,
    pub cumulative: BTreeMap<usize, AffineTransform>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CameraParams {
    pub flow: FlowParams,
    pub ransac: RansacParams,
}

impl CameraMotionModel {
    /// Static camera over the given keyframes.
    pub fn identity(schedule: &KeyframeSchedule) -> Self {
        let intervals = schedule
            .intervals()
            .map(|(a, b)| IntervalEstimate {
                from: a,
                to: b,
                transform: AffineTransform::identity(),
                inliers: 0,
                residual_rms: 0.0,
                method: IntervalMethod::Identity,
                failure: None,
            })
            .collect();
        let cumulative = schedule
            .indices()
            .iter()
            .map(|&k| (k, AffineTransform::identity()))
            .collect();
        Self { intervals, cumulative }
    }

    /// Composes interval transforms from keyframe 0 onwards.
    pub fn from_intervals(first_keyframe: usize, intervals: Vec<IntervalEstimate>) -> Self {
        let mut cumulative = BTreeMap::new();
        let mut acc = AffineTransform::identity();
        cumulative.insert(first_keyframe, acc);
        for iv in &intervals {
            acc = iv.transform.compose(&acc);
            cumulative.insert(iv.to, acc);
        }
        Self { intervals, cumulative }
    }

    pub fn cumulative_at(&self, keyframe: usize) -> Result<&AffineTransform> {
        self.cumulative
            .get(&keyframe)
            .ok_or_else(|| Error::Lookup(format!("camera model has no keyframe {keyframe}")))
    }

    pub fn interval(&self, from: usize, to: usize) -> Option<&IntervalEstimate> {
        self.intervals.iter().find(|i| i.from == from && i.to == to)
    }

    pub fn flagged_intervals(&self) -> impl Iterator<Item = &IntervalEstimate> {
        self.intervals.iter().filter(|i| i.failure.is_some())
    }

    /// One JSON record per interval: coefficients, inliers, RMS residual.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for iv in &self.intervals {
            let rec = serde_json::json!({
                "from": iv.from,
                "to": iv.to,
                "coefficients": iv.transform.coefficients(),
                "inliers": iv.inliers,
                "residual_rms": iv.residual_rms,
                "method": iv.method,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }
}

fn fit_pair(a: &Pyramid, b: &Pyramid, params: &CameraParams) -> Result<AffineFit> {
    let corrs = track_pyramids(a, b, &params.flow)?;
    let fit = estimate_affine(&corrs, &params.ransac)?;
    if fit.transform.determinant().abs() < 1e-6 {
        return Err(Error::DegenerateGeometry("fitted transform is singular".into()));
    }
    Ok(fit)
}

fn estimate_interval(pyramids: &[Pyramid], from: usize, to: usize, params: &CameraParams) -> IntervalEstimate {
    let mut acc = AffineTransform::identity();
    let mut inliers = usize::MAX;
    let mut rms = 0.0f64;
    let mut chained_err = None;
    for f in from..to {
        match fit_pair(&pyramids[f], &pyramids[f + 1], params) {
            Ok(fit) => {
                acc = fit.transform.compose(&acc);
                inliers = inliers.min(fit.inliers);
                rms = rms.max(fit.residual_rms);
            }
            Err(e) => {
                chained_err = Some(format!("frame {f}->{}: {e}", f + 1));
                break;
            }
        }
    }
    let Some(chain_err) = chained_err else {
        return IntervalEstimate {
            from,
            to,
            transform: acc,
            inliers: if inliers == usize::MAX { 0 } else { inliers },
            residual_rms: rms,
            method: IntervalMethod::Chained,
            failure: None,
        };
    };
    match fit_pair(&pyramids[from], &pyramids[to], params) {
        Ok(fit) => IntervalEstimate {
            from,
            to,
            transform: fit.transform,
            inliers: fit.inliers,
            residual_rms: fit.residual_rms,
            method: IntervalMethod::Direct,
            failure: None,
        },
        Err(e) => IntervalEstimate {
            from,
            to,
            transform: AffineTransform::identity(),
            inliers: 0,
            residual_rms: 0.0,
            method: IntervalMethod::Identity,
            failure: Some(format!("chained: {chain_err}; direct: {e}")),
        },
    }
}

/// Estimates per-interval camera motion from the bundle frames and
/// composes it cumulatively. Intervals that cannot be estimated become
/// identity with `failure` set.
pub fn build_camera_model(
    bundle: &PerceptionBundle,
    schedule: &KeyframeSchedule,
    params: &CameraParams,
) -> Result<CameraMotionModel> {
    let mut pyramids = Vec::with_capacity(bundle.frame_count());
    for f in 0..bundle.frame_count() {
        let img = bundle.frame(f)?;
        pyramids.push(Pyramid::new(LumaImage::from_rgb(&img), params.flow.levels));
    }
    let intervals = schedule
        .intervals()
        .map(|(a, b)| estimate_interval(&pyramids, a, b, params))
        .collect();
    Ok(CameraMotionModel::from_intervals(schedule.indices()[0], intervals))
}

/// Maps each keyframe box into the frame-0 reference: corners through the
/// inverse cumulative transform, then re-axis-aligned.
pub fn compensate_trajectory(track: &Trajectory, camera: &CameraMotionModel) -> Result<Vec<(usize, Box2D)>> {
    track
        .keyframe_states
        .iter()
        .map(|(&f, s)| {
            let inv = camera.cumulative_at(f)?.inverse()?;
            let b = Box2D::enclosing(s.bbox.corners().iter().map(|&p| inv.apply(p))).expect("four corners");
            Ok((f, b))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Octant {
    Right,
    UpRight,
    Up,
    UpLeft,
    Left,
    DownLeft,
    Down,
    DownRight,
    None,
}

impl Octant {
    /// Octant of an image-space displacement (y grows downwards).
    pub fn of(dx: f64, dy: f64) -> Octant {
        if dx.hypot(dy) < 1e-9 {
            return Octant::None;
        }
        let angle = (-dy).atan2(dx).to_degrees().rem_euclid(360.0);
        const ORDER: [Octant; 8] = [
            Octant::Right,
            Octant::UpRight,
            Octant::Up,
            Octant::UpLeft,
            Octant::Left,
            Octant::DownLeft,
            Octant::Down,
            Octant::DownRight,
        ];
        ORDER[(((angle + 22.5) / 45.0).floor() as usize) % 8]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicSummary {
    /// Compensated centroid path length per frame.
    pub mean_speed: f64,
    pub direction: Octant,
    pub stationarity: f64,
    pub net_displacement: (f64, f64),
    pub path_length: f64,
    pub low_confidence: bool,
}

/// Motion statistics of compensated keyframe centroids.
pub fn kinematic_summary(
    track: &Trajectory,
    camera: &CameraMotionModel,
    width: u32,
    height: u32,
) -> Result<KinematicSummary> {
    let boxes = compensate_trajectory(track, camera)?;
    if boxes.len() < 2 {
        return Ok(KinematicSummary {
            mean_speed: 0.0,
            direction: Octant::None,
            stationarity: 1.0,
            net_displacement: (0.0, 0.0),
            path_length: 0.0,
            low_confidence: true,
        });
    }
    let cents: Vec<(usize, Point2D)> = boxes.iter().map(|(f, b)| (*f, b.centroid())).collect();
    let path_length: f64 = cents.windows(2).map(|w| w[0].1.distance(&w[1].1)).sum();
    let (f0, p0) = cents[0];
    let (f1, p1) = *cents.last().unwrap();
    let net = (p1.x - p0.x, p1.y - p0.y);
    let diag = (width as f64).hypot(height as f64);
    Ok(KinematicSummary {
        mean_speed: path_length / (f1 - f0) as f64,
        direction: Octant::of(net.0, net.1),
        stationarity: 1.0 / (1.0 + path_length / (diag * 0.01)),
        net_displacement: net,
        path_length,
        low_confidence: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::BinaryMask;
    use crate::perception::{sample_keyframes, DetectionRecord};

    fn track(boxes: &[(usize, [f64; 4])]) -> Trajectory {
        let mk = |f: usize, b: [f64; 4]| DetectionRecord {
            frame_index: f,
            instance_key: format!("k{f}"),
            category: "x".into(),
            score: 1.0,
            bbox: Box2D::try_from(b).unwrap(),
            mask: BinaryMask::empty(4, 4),
        };
        let mut t = Trajectory::spawn(1, &mk(boxes[0].0, boxes[0].1));
        for &(f, b) in &boxes[1..] {
            t.keyframe_states
                .insert(f, Trajectory::spawn(1, &mk(f, b)).keyframe_states[&f].clone());
            t.last_frame = f;
        }
        t
    }

    fn pan_model(dx_per_frame: f64, schedule: &KeyframeSchedule) -> CameraMotionModel {
        let intervals = schedule
            .intervals()
            .map(|(a, b)| IntervalEstimate {
                from: a,
                to: b,
                transform: AffineTransform::translation(dx_per_frame * (b - a) as f64, 0.0),
                inliers: 10,
                residual_rms: 0.0,
                method: IntervalMethod::Chained,
                failure: None,
            })
            .collect();
        CameraMotionModel::from_intervals(0, intervals)
    }

    #[test]
    fn cumulative_composition() {
        let s = sample_keyframes(46, 15);
        let m = pan_model(2.0, &s);
        assert_eq!(m.cumulative[&0], AffineTransform::identity());
        assert_eq!(m.cumulative[&45].translation_part(), (90.0, 0.0));
        for w in s.indices().windows(2) {
            let iv = m.interval(w[0], w[1]).unwrap();
            let lhs = m.cumulative[&w[1]];
            let rhs = iv.transform.compose(&m.cumulative[&w[0]]);
            assert!(lhs.max_abs_diff(&rhs) < 1e-9);
        }
        assert_eq!(
            CameraMotionModel::identity(&sample_keyframes(1, 15)).cumulative.len(),
            1
        );
    }

    #[test]
    fn identity_camera_leaves_boxes() {
        let t = track(&[(0, [1.0, 2.0, 5.0, 7.0]), (15, [3.0, 2.0, 8.0, 9.0])]);
        let s = sample_keyframes(16, 15);
        let c = compensate_trajectory(&t, &CameraMotionModel::identity(&s)).unwrap();
        assert_eq!(c, t.keyframe_boxes());
    }

    #[test]
    fn pan_compensation_recovers_world_motion() {
        // image content shifts +1 px/frame from the pan; the object moves
        // +1 px/frame in the world, so it appears to move +2 px/frame
        let s = sample_keyframes(31, 15);
        let cam = pan_model(1.0, &s);
        let t = track(&[
            (0, [0.0, 0.0, 10.0, 10.0]),
            (15, [30.0, 0.0, 40.0, 10.0]),
            (30, [60.0, 0.0, 70.0, 10.0]),
        ]);
        let k = kinematic_summary(&t, &cam, 200, 100).unwrap();
        assert!((k.net_displacement.0 - 30.0).abs() < 1e-9);
        assert!((k.mean_speed - 1.0).abs() < 1e-9);
        assert_eq!(k.direction, Octant::Right);
    }

    #[test]
    fn static_object_under_pan_is_stationary() {
        let s = sample_keyframes(31, 15);
        let cam = pan_model(2.0, &s);
        let t = track(&[
            (0, [10.0, 0.0, 20.0, 10.0]),
            (15, [40.0, 0.0, 50.0, 10.0]),
            (30, [70.0, 0.0, 80.0, 10.0]),
        ]);
        let k = kinematic_summary(&t, &cam, 200, 100).unwrap();
        assert!(k.path_length < 1e-9);
        assert!((k.stationarity - 1.0).abs() < 1e-12);
        let raw = kinematic_summary(&t, &CameraMotionModel::identity(&s), 200, 100).unwrap();
        assert!(raw.stationarity < 0.1);
    }

    #[test]
    fn single_state_is_low_confidence() {
        let t = track(&[(0, [0.0, 0.0, 1.0, 1.0])]);
        let k = kinematic_summary(&t, &CameraMotionModel::identity(&sample_keyframes(1, 15)), 10, 10).unwrap();
        assert!(k.low_confidence && k.mean_speed == 0.0);
    }

    #[test]
    fn octants() {
        assert_eq!(Octant::of(2.0, 0.0), Octant::Right);
        assert_eq!(Octant::of(-2.0, 0.1), Octant::Left);
        assert_eq!(Octant::of(0.0, -3.0), Octant::Up);
        assert_eq!(Octant::of(1.0, 1.0), Octant::DownRight);
        assert_eq!(Octant::of(0.0, 0.0), Octant::None);
    }

    #[test]
    fn dump_has_one_line_per_interval() {
        let s = sample_keyframes(46, 15);
        let d = pan_model(2.0, &s).debug_dump();
        assert_eq!(d.lines().count(), 3);
        let first: serde_json::Value = serde_json::from_str(d.lines().next().unwrap()).unwrap();
        assert_eq!(first["coefficients"][2], 30.0);
    }
}
