//! Front/back ordering of overlapping tracks at a keyframe.

use serde::{Deserialize, Serialize};

use crate::tracking::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionEvent {
    pub frame: usize,
    pub front_id: u32,
    pub back_id: u32,
    pub overlap_px: u64,
}

/// Pairs whose 1 px-dilated masks touch at `keyframe`. The track with more
/// mask pixels is in front; equal counts put the smaller id in front.
pub fn infer_occlusions(tracks: &[&Trajectory], keyframe: usize) -> Vec<OcclusionEvent> {
    let present: Vec<(u32, u64, crate::mask::BinaryMask)> = tracks
        .iter()
        .filter_map(|t| {
            let s = t.keyframe_states.get(&keyframe)?;
            (!s.mask.is_empty()).then(|| (t.id, s.mask.area(), s.mask.dilate(1)))
        })
        .collect();
    let mut events = Vec::new();
    for i in 0..present.len() {
        for j in i + 1..present.len() {
            let (ia, na, ma) = &present[i];
            let (ib, nb, mb) = &present[j];
            let Ok(overlap) = ma.intersection_area(mb) else {
                continue;
            };
            if overlap == 0 {
                continue;
            }
            let a_front = na > nb || (na == nb && ia < ib);
            let (front_id, back_id) = if a_front { (*ia, *ib) } else { (*ib, *ia) };
            events.push(OcclusionEvent {
                frame: keyframe,
                front_id,
                back_id,
                overlap_px: overlap,
            });
        }
    }
    events.sort_by_key(|e| (e.frame, e.front_id, e.back_id));
    events
}

/// Events at every keyframe, in frame order.
pub fn infer_all_occlusions(tracks: &[&Trajectory], keyframes: &[usize]) -> Vec<OcclusionEvent> {
    keyframes.iter().flat_map(|&k| infer_occlusions(tracks, k)).collect()
}

/// Number of events in which `id` is the front object.
pub fn front_count(events: &[OcclusionEvent], id: u32) -> usize {
    events.iter().filter(|e| e.front_id == id).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box2D;
    use crate::mask::BinaryMask;
    use crate::perception::DetectionRecord;

    fn track(id: u32, mask: BinaryMask) -> Trajectory {
        let bbox = mask.bbox().unwrap_or_default();
        Trajectory::spawn(
            id,
            &DetectionRecord {
                frame_index: 0,
                instance_key: format!("{id}"),
                category: "x".into(),
                score: 1.0,
                bbox: Box2D::new(bbox.xmin, bbox.ymin, bbox.xmax, bbox.ymax).unwrap(),
                mask,
            },
        )
    }

    #[test]
    fn disjoint_masks_have_no_events() {
        let a = track(1, BinaryMask::from_rect(40, 40, 0, 0, 5, 5));
        let b = track(2, BinaryMask::from_rect(40, 40, 20, 20, 25, 25));
        assert!(infer_occlusions(&[&a, &b], 0).is_empty());
    }

    #[test]
    fn larger_mask_in_front() {
        // 500 px vs 200 px, overlapping
        let big = track(7, BinaryMask::from_rect(60, 60, 0, 0, 25, 20));
        let small = track(3, BinaryMask::from_rect(60, 60, 20, 10, 40, 20));
        let ev = infer_occlusions(&[&small, &big], 0);
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].front_id, ev[0].back_id), (7, 3));
    }

    #[test]
    fn tie_goes_to_smaller_id() {
        let a = track(5, BinaryMask::from_rect(40, 40, 0, 0, 10, 10));
        let b = track(2, BinaryMask::from_rect(40, 40, 5, 5, 15, 15));
        let ev = infer_occlusions(&[&a, &b], 0);
        assert_eq!((ev[0].front_id, ev[0].back_id), (2, 5));
    }

    #[test]
    fn adjacent_masks_touch_after_dilation() {
        // back object's visible mask stops where the front one starts
        let front = track(1, BinaryMask::from_rect(40, 40, 10, 0, 30, 20));
        let back = track(2, BinaryMask::from_rect(40, 40, 0, 0, 10, 10));
        let ev = infer_occlusions(&[&front, &back], 0);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].front_id, 1);
        assert!(ev[0].overlap_px >= 1);
    }

    #[test]
    fn relation_is_asymmetric() {
        let a = track(1, BinaryMask::from_rect(40, 40, 0, 0, 12, 10));
        let b = track(2, BinaryMask::from_rect(40, 40, 5, 5, 15, 15));
        let ev = infer_occlusions(&[&a, &b], 0);
        assert!(ev.iter().all(|e| e.front_id != e.back_id));
        assert_eq!(ev, infer_occlusions(&[&b, &a], 0));
    }
}
