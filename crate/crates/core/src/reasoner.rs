//! Coarse motion reasoning over candidate trajectories.
//!
//! Candidates are serialized as timestamped box strings and sent to the
//! language model together with a camera summary and occlusion relations.
//! The reply is a ranked id list plus an ambiguity flag. Offline, or when
//! the endpoint keeps failing, a kinematic scorer produces the same verdict
//! shape.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::camera::{kinematic_summary, CameraMotionModel, KinematicSummary};
use crate::error::{Error, Result};
use crate::geometry::round_half_away;
use crate::llm::{complete_with_retries, Attempt, ChatBackend, ChatMessage, ReasonerConfig};
use crate::occlusion::{front_count, OcclusionEvent};
use crate::tracking::Trajectory;

/// Score gap below which the top-K boundary is reported as ambiguous.
pub const AMBIGUITY_GAP: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionVerdict {
    pub ranked_ids: Vec<u32>,
    pub ambiguous: bool,
    pub rationale: String,
}

/// `t=<frame+1>: [xmin, ymin, xmax, ymax]` per keyframe, joined by `; `.
pub fn serialize_trajectory(track: &Trajectory) -> String {
    track
        .keyframe_states
        .iter()
        .map(|(f, s)| {
            let b = s.bbox;
            format!(
                "t={}: [{}, {}, {}, {}]",
                f + 1,
                round_half_away(b.xmin),
                round_half_away(b.ymin),
                round_half_away(b.xmax),
                round_half_away(b.ymax)
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// What the reasoner may see besides the trajectories themselves.
#[derive(Debug, Clone, Copy)]
pub struct ReasoningContext<'a> {
    pub camera: Option<&'a CameraMotionModel>,
    pub occlusions: Option<&'a [OcclusionEvent]>,
    pub frame_size: (u32, u32),
}

pub fn camera_lines(camera: &CameraMotionModel) -> Vec<String> {
    camera
        .intervals
        .iter()
        .map(|iv| {
            let (dx, dy) = iv.transform.translation_part();
            format!(
                "camera t={}..{}: dx={:.2}, dy={:.2}, scale={:.3}, rot={:.2}deg",
                iv.from + 1,
                iv.to + 1,
                dx,
                dy,
                iv.transform.scale(),
                iv.transform.rotation_degrees()
            )
        })
        .collect()
}

pub fn occlusion_lines(events: &[OcclusionEvent]) -> Vec<String> {
    if events.is_empty() {
        return vec!["none observed".into()];
    }
    events
        .iter()
        .map(|e| format!("t={}: id {} in front of id {}", e.frame + 1, e.front_id, e.back_id))
        .collect()
}

pub fn build_motion_prompt(
    candidates: &[&Trajectory],
    motion_query: &str,
    ctx: &ReasoningContext<'_>,
    k: u32,
) -> Result<String> {
    if candidates.is_empty() {
        return Err(Error::Input("no candidate trajectories".into()));
    }
    if motion_query.trim().is_empty() {
        return Err(Error::Input("motion descriptor is empty".into()));
    }
    let mut p = String::new();
    p.push_str(
        "You are a motion analyst for video object tracking. Each candidate object is given as a sequence of \
         bounding boxes [xmin, ymin, xmax, ymax] in pixels at timestamps t (frame number, starting at 1). \
         Image x grows to the right and y grows downwards.\n",
    );
    p.push_str(&format!("Motion description: {}\n", motion_query.trim()));
    p.push_str(&format!("Number of target objects: {k}\n\n"));
    p.push_str("Candidate trajectories:\n");
    for t in candidates {
        p.push_str(&format!("id {} ({}): {}\n", t.id, t.category, serialize_trajectory(t)));
    }
    if let Some(cam) = ctx.camera {
        p.push_str(
            "\nCamera motion between timestamps (image content displacement; subtract it to get motion in the scene):\n",
        );
        for l in camera_lines(cam) {
            p.push_str(&l);
            p.push('\n');
        }
    }
    if let Some(ev) = ctx.occlusions {
        p.push_str("\nOcclusion relations (the object in front hides part of the other):\n");
        for l in occlusion_lines(ev) {
            p.push_str(&l);
            p.push('\n');
        }
    }
    p.push_str(
        "\nReason in five steps:\n\
         1. Describe each candidate's movement from its box sequence.\n\
         2. Remove the camera motion to get each candidate's motion in the scene.\n\
         3. Use the occlusion relations to judge which objects are in front of others.\n\
         4. Compare every candidate against the motion description.\n\
         5. Rank the candidates from best to worst match.\n\
         Finish with exactly these two lines:\n\
         RANKING: <candidate ids, best first, comma separated>\n\
         AMBIGUOUS: <yes if the top choices cannot be told apart from motion alone, otherwise no>\n",
    );
    Ok(p)
}

const ANSWER_LABELS: [&str; 5] = ["ranking", "ranked", "target", "answer", "ids"];

fn integers(s: &str) -> Vec<u32> {
    s.split(|c: char| !c.is_ascii_digit())
        .filter(|t| !t.is_empty())
        .filter_map(|t| t.parse().ok())
        .collect()
}

/// Text after the last `<label>:` occurrence, up to the end of its line or
/// the ambiguity flag.
fn labeled_answer(lower: &str) -> Option<&str> {
    let mut best: Option<usize> = None;
    for label in ANSWER_LABELS {
        let mut from = 0;
        while let Some(pos) = lower[from..].find(label) {
            let start = from + pos;
            let after = start + label.len();
            from = after;
            let before_ok = start == 0 || !lower.as_bytes()[start - 1].is_ascii_alphabetic();
            let rest = lower[after..].trim_start_matches(|c: char| c == ' ' || c == '*' || c == '_');
            if before_ok && rest.starts_with(':') {
                let colon = lower.len() - rest.len();
                if best.is_none_or(|b| colon > b) {
                    best = Some(colon);
                }
            }
        }
    }
    let colon = best?;
    let tail = &lower[colon + 1..];
    let end = tail
        .find('\n')
        .into_iter()
        .chain(tail.find("ambiguous"))
        .min()
        .unwrap_or(tail.len());
    Some(&tail[..end])
}

fn ambiguity_flag(lower: &str) -> bool {
    let Some(pos) = lower.rfind("ambiguous") else {
        return false;
    };
    let rest =
        lower[pos + "ambiguous".len()..].trim_start_matches(|c: char| c == ' ' || c == '*' || c == ':' || c == '_');
    rest.starts_with("yes") || rest.starts_with("true")
}

pub fn parse_motion_response(text: &str, candidate_ids: &[u32]) -> Result<MotionVerdict> {
    let lower = text.to_lowercase();
    let raw: Vec<u32> = match labeled_answer(&lower) {
        Some(section) => integers(section),
        None => {
            // unlabeled replies: ids written as "id 3" or "#3"
            let words: Vec<&str> = lower.split_whitespace().collect();
            let mut v = Vec::new();
            for (i, w) in words.iter().enumerate() {
                let w = w.trim_matches(|c: char| !c.is_alphanumeric() && c != '#');
                if let Some(n) = w.strip_prefix('#').and_then(|n| n.parse().ok()) {
                    v.push(n);
                } else if (w == "id" || w == "ids") && i + 1 < words.len() {
                    v.extend(integers(words[i + 1]).into_iter().take(1));
                }
            }
            v
        }
    };
    let valid: BTreeSet<u32> = candidate_ids.iter().copied().collect();
    let mut seen = BTreeSet::new();
    let ranked: Vec<u32> = raw
        .into_iter()
        .filter(|id| valid.contains(id) && seen.insert(*id))
        .collect();
    if ranked.is_empty() {
        return Err(Error::Parse("response names no valid candidate id".into()));
    }
    Ok(MotionVerdict {
        ranked_ids: ranked,
        ambiguous: ambiguity_flag(&lower),
        rationale: text.trim().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Term {
    Stationary,
    Moving,
    Direction(i8, i8),
    InFront,
    Behind,
    Fast,
    Slow,
}

fn motion_terms(q: &str) -> Vec<Term> {
    let lower = q.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| !w.is_empty())
        .collect();
    let mut terms = Vec::new();
    let mut push = |t: Term| {
        if !terms.contains(&t) {
            terms.push(t);
        }
    };
    let has_pair = |a: &str, b: &str| words.windows(2).any(|w| w[0] == a && w[1] == b);
    let negated_motion = has_pair("not", "moving") || has_pair("standing", "still");
    for w in &words {
        match *w {
            "stationary" | "motionless" | "motionlessly" | "still" | "static" | "staying" | "stays" | "unmoving"
            | "parked" => push(Term::Stationary),
            "moving" | "moves" | "move" | "walking" | "walks" | "running" | "runs" | "riding" | "rides" | "driving"
            | "drives" | "flying" | "flies" | "swimming" | "turning" | "turns" | "going" | "goes" | "crawling"
            | "rolling" | "jumping"
                if !negated_motion =>
            {
                push(Term::Moving)
            }
            "left" | "leftward" | "leftwards" => push(Term::Direction(-1, 0)),
            "right" | "rightward" | "rightwards" => push(Term::Direction(1, 0)),
            "up" | "upward" | "upwards" => push(Term::Direction(0, -1)),
            "down" | "downward" | "downwards" => push(Term::Direction(0, 1)),
            "behind" => push(Term::Behind),
            "fast" | "quickly" | "faster" | "fastest" | "rapidly" => push(Term::Fast),
            "slow" | "slowly" | "slower" | "slowest" => push(Term::Slow),
            _ => {}
        }
    }
    if negated_motion {
        push(Term::Stationary);
    }
    if has_pair("in", "front") {
        push(Term::InFront);
    }
    terms
}

fn identity_over(tracks: &[&Trajectory]) -> CameraMotionModel {
    let frames: BTreeSet<usize> = tracks.iter().flat_map(|t| t.keyframe_states.keys().copied()).collect();
    CameraMotionModel {
        intervals: Vec::new(),
        cumulative: frames
            .into_iter()
            .map(|f| (f, crate::affine::AffineTransform::identity()))
            .collect(),
    }
}

/// Average rank in `[0, 1]` of each value (0 = smallest); ties share a rank.
fn rank_fraction(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n <= 1 {
        return vec![1.0; n];
    }
    values
        .iter()
        .map(|v| {
            let below = values.iter().filter(|x| *x < v).count() as f64;
            let equal = values.iter().filter(|x| *x == v).count() as f64;
            (below + (equal - 1.0) / 2.0) / (n - 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub id: u32,
    pub score: f64,
    pub kinematics: KinematicSummary,
}

/// Kinematic scoring of each candidate against the motion descriptor.
/// Terms that do not apply (no keyword, or the needed context is absent)
/// are skipped; the composite is the mean of the remaining terms.
pub fn score_candidates(
    candidates: &[&Trajectory],
    motion_query: &str,
    ctx: &ReasoningContext<'_>,
) -> Result<Vec<CandidateScore>> {
    let ident;
    let camera = match ctx.camera {
        Some(c) => c,
        None => {
            ident = identity_over(candidates);
            &ident
        }
    };
    let (w, h) = ctx.frame_size;
    let diag = (w as f64).hypot(h as f64);
    let kin: Vec<KinematicSummary> = candidates
        .iter()
        .map(|t| kinematic_summary(t, camera, w, h))
        .collect::<Result<_>>()?;
    let speed_rank = rank_fraction(&kin.iter().map(|k| k.mean_speed).collect::<Vec<_>>());
    let fronts: Vec<f64> = candidates
        .iter()
        .map(|t| ctx.occlusions.map_or(0.0, |ev| front_count(ev, t.id) as f64))
        .collect();
    let backs: Vec<f64> = candidates
        .iter()
        .map(|t| {
            ctx.occlusions
                .map_or(0.0, |ev| ev.iter().filter(|e| e.back_id == t.id).count() as f64)
        })
        .collect();
    let max_front = fronts.iter().cloned().fold(0.0, f64::max);
    let max_back = backs.iter().cloned().fold(0.0, f64::max);

    let terms = motion_terms(motion_query);
    let mut out = Vec::with_capacity(candidates.len());
    for (i, t) in candidates.iter().enumerate() {
        let k = &kin[i];
        let mut parts = Vec::new();
        for term in &terms {
            match *term {
                Term::Stationary => parts.push(k.stationarity),
                Term::Moving => parts.push(1.0 - k.stationarity),
                Term::Direction(ux, uy) => {
                    let (dx, dy) = k.net_displacement;
                    let len = dx.hypot(dy);
                    let cos = if len < 0.01 * diag {
                        0.0
                    } else {
                        (dx * ux as f64 + dy * uy as f64) / len
                    };
                    parts.push(cos);
                }
                Term::InFront if ctx.occlusions.is_some() => {
                    parts.push(if max_front > 0.0 { fronts[i] / max_front } else { 0.0 })
                }
                Term::Behind if ctx.occlusions.is_some() => {
                    parts.push(if max_back > 0.0 { backs[i] / max_back } else { 0.0 })
                }
                Term::Fast => parts.push(speed_rank[i]),
                Term::Slow => parts.push(1.0 - speed_rank[i]),
                Term::InFront | Term::Behind => {}
            }
        }
        let score = if parts.is_empty() {
            0.0
        } else {
            parts.iter().sum::<f64>() / parts.len() as f64
        };
        out.push(CandidateScore {
            id: t.id,
            score,
            kinematics: *k,
        });
    }
    Ok(out)
}

fn ambiguous_at(sorted_scores: &[f64], k: usize) -> bool {
    k >= 1 && sorted_scores.len() > k && (sorted_scores[k - 1] - sorted_scores[k]) < AMBIGUITY_GAP
}

/// Deterministic offline reasoner: rank by composite score, ties to the
/// smaller id.
pub fn fallback_motion_reason(
    candidates: &[&Trajectory],
    motion_query: &str,
    ctx: &ReasoningContext<'_>,
    k: u32,
) -> Result<(MotionVerdict, Vec<CandidateScore>)> {
    if candidates.is_empty() {
        return Err(Error::Input("no candidate trajectories".into()));
    }
    let mut scores = score_candidates(candidates, motion_query, ctx)?;
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    let sorted: Vec<f64> = scores.iter().map(|s| s.score).collect();
    let ranked_ids = scores.iter().map(|s| s.id).collect();
    let rationale = scores
        .iter()
        .map(|s| format!("id {}: {:.3}", s.id, s.score))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((
        MotionVerdict {
            ranked_ids,
            ambiguous: ambiguous_at(&sorted, k as usize),
            rationale,
        },
        scores,
    ))
}

/// Size of the coarse subset for a verdict.
pub fn subset_size(k: u32, ambiguous: bool, n_candidates: usize) -> usize {
    let k = k.max(1) as usize;
    let want = if ambiguous { k + 2 } else { k };
    want.min(n_candidates).max(n_candidates.min(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseOutcome {
    /// C′, ordered by the verdict ranking.
    pub selected: Vec<u32>,
    /// Full ranking over all candidates.
    pub ranking: Vec<u32>,
    pub verdict: Option<MotionVerdict>,
    pub skipped: bool,
    pub used_fallback: bool,
    pub prompt: Option<String>,
    pub attempts: Vec<Attempt>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback_scores: Vec<CandidateScore>,
}

/// Filters the candidate set with the motion descriptor. An empty
/// descriptor keeps every candidate. Endpoint failures degrade to the
/// fallback reasoner. An endpoint ranking that omits candidates is
/// completed in fallback order.
pub fn coarse_filter(
    candidates: &[&Trajectory],
    motion_query: &str,
    ctx: &ReasoningContext<'_>,
    k: u32,
    config: &ReasonerConfig,
    backend: Option<&dyn ChatBackend>,
) -> Result<CoarseOutcome> {
    let ids: Vec<u32> = candidates.iter().map(|t| t.id).collect();
    if candidates.is_empty() || motion_query.trim().is_empty() {
        return Ok(CoarseOutcome {
            selected: ids.clone(),
            ranking: ids,
            verdict: None,
            skipped: true,
            used_fallback: false,
            prompt: None,
            attempts: Vec::new(),
            fallback_scores: Vec::new(),
        });
    }
    let (fallback, scores) = fallback_motion_reason(candidates, motion_query, ctx, k)?;
    let mut prompt = None;
    let mut attempts = Vec::new();
    let mut endpoint_verdict = None;
    if let Some(backend) = backend.filter(|_| !config.offline) {
        let p = build_motion_prompt(candidates, motion_query, ctx, k)?;
        let messages = [ChatMessage::user(p.clone())];
        let (v, a) = complete_with_retries(backend, &messages, &config.decoding(), config.retries, |text| {
            parse_motion_response(text, &ids)
        });
        prompt = Some(p);
        attempts = a;
        endpoint_verdict = v;
    }
    let used_fallback = endpoint_verdict.is_none();
    let verdict = match endpoint_verdict {
        Some(mut v) => {
            for id in &fallback.ranked_ids {
                if !v.ranked_ids.contains(id) {
                    v.ranked_ids.push(*id);
                }
            }
            v
        }
        None => fallback,
    };
    let n = subset_size(k, verdict.ambiguous, candidates.len());
    Ok(CoarseOutcome {
        selected: verdict.ranked_ids[..n].to_vec(),
        ranking: verdict.ranked_ids.clone(),
        verdict: Some(verdict),
        skipped: false,
        used_fallback,
        prompt,
        attempts,
        fallback_scores: if used_fallback { scores } else { Vec::new() },
    })
}

/// Per-id map from a score list, for trace output.
pub fn score_map(scores: &[CandidateScore]) -> BTreeMap<u32, f64> {
    scores.iter().map(|s| (s.id, s.score)).collect()
}
