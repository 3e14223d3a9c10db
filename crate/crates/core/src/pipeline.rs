//! End-to-end orchestration: query decomposition, trajectory building,
//! motion reasoning, posture verification and mask assembly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::affine::RansacParams;
use crate::camera::{build_camera_model, CameraMotionModel, CameraParams};
use crate::error::{Error, Result};
use crate::llm::{ChatBackend, ReasonerConfig};
use crate::mask::{BinaryMask, MaskSequence};
use crate::metrics::{evaluate, EvalReport};
use crate::occlusion::infer_all_occlusions;
use crate::perception::PerceptionBundle;
use crate::pose::{should_activate, verify_pose, EmbeddingBackend};
use crate::query::{decompose, StructuredQuery};
use crate::reasoner::{coarse_filter, ReasoningContext};
use crate::tracking::{build_trajectories, category_matches, AssociationParams, Trajectory};

fn default_tau() -> usize {
    15
}
fn default_theta_iou() -> f64 {
    0.6
}
fn default_theta_dist() -> f64 {
    50.0
}
fn default_window() -> usize {
    3
}
fn default_max_misses() -> u32 {
    2
}
fn default_k_frames() -> usize {
    3
}
fn default_true() -> bool {
    true
}
fn default_ransac_iterations() -> usize {
    200
}
fn default_ransac_inlier_px() -> f64 {
    2.0
}

/// Flat run configuration. Every field has a default, so an empty file is
/// a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_tau")]
    pub tau: usize,
    #[serde(default = "default_theta_iou")]
    pub theta_iou: f64,
    #[serde(default = "default_theta_dist")]
    pub theta_dist: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_max_misses")]
    pub max_misses: u32,
    #[serde(default = "default_k_frames")]
    pub k_frames: usize,
    /// Boundary tolerance in pixels; adaptive to the frame diagonal when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_radius: Option<u32>,
    #[serde(default = "default_true")]
    pub use_cmr: bool,
    #[serde(default = "default_true")]
    pub use_fpv: bool,
    #[serde(default = "default_true")]
    pub use_cmm: bool,
    #[serde(default = "default_true")]
    pub use_or: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ransac_iterations")]
    pub ransac_iterations: usize,
    #[serde(default = "default_ransac_inlier_px")]
    pub ransac_inlier_px: f64,
    #[serde(flatten)]
    pub reasoner: ReasonerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Parse(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, message: &str| Err(Error::validation(path, message));
        if self.tau == 0 {
            return bad("tau", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.theta_iou) {
            return bad("theta_iou", "must lie in [0, 1]");
        }
        if !(self.theta_dist >= 0.0) {
            return bad("theta_dist", "must be non-negative");
        }
        if self.window == 0 {
            return bad("window", "must be at least 1");
        }
        if self.k_frames == 0 {
            return bad("k_frames", "must be at least 1");
        }
        if self.ransac_iterations == 0 || !(self.ransac_inlier_px > 0.0) {
            return bad(
                "ransac_iterations",
                "RANSAC needs iterations and a positive inlier threshold",
            );
        }
        self.reasoner.validate()
    }

    pub fn association(&self) -> AssociationParams {
        AssociationParams {
            theta_iou: self.theta_iou,
            theta_dist: self.theta_dist,
            window: self.window,
            max_misses: self.max_misses,
        }
    }

    pub fn camera(&self) -> CameraParams {
        CameraParams {
            flow: Default::default(),
            ransac: RansacParams {
                iterations: self.ransac_iterations,
                inlier_px: self.ransac_inlier_px,
                seed: self.seed,
                ..RansacParams::default()
            },
        }
    }

    /// Short label of the enabled reasoning stages.
    pub fn variant_label(&self) -> String {
        let mut parts = Vec::new();
        if self.use_cmr {
            parts.push("cmr");
        }
        if self.use_fpv {
            parts.push("fpv");
        }
        if self.use_cmm {
            parts.push("cmm");
        }
        if self.use_or {
            parts.push("or");
        }
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: usize,
    pub stage: String,
    pub data: Value,
}

#[derive(Debug, Default)]
struct Trace(Vec<TraceRecord>);

impl Trace {
    fn push(&mut self, stage: &str, data: Value) {
        let seq = self.0.len();
        self.0.push(TraceRecord {
            seq,
            stage: stage.into(),
            data,
        });
    }
}

/// External services a run may use. Missing backends select the offline
/// paths; embeddings default to the bundle's own.
#[derive(Clone, Copy, Default)]
pub struct Backends<'a> {
    pub chat: Option<&'a dyn ChatBackend>,
    pub embeddings: Option<&'a dyn EmbeddingBackend>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub video_id: String,
    pub query: String,
    pub structured_query: StructuredQuery,
    pub masks: MaskSequence,
    pub per_id_masks: BTreeMap<u32, Vec<BinaryMask>>,
    pub selected_ids: Vec<u32>,
    pub candidate_count: usize,
    pub subset_size: usize,
    pub fpv_activated: bool,
    pub zero_candidates: bool,
    pub low_confidence: bool,
    pub trace: Vec<TraceRecord>,
}

fn random_pick(ids: &[u32], k: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ids.len();
    let mut picked: Vec<u32> = rand::seq::index::sample(&mut rng, n, k.min(n))
        .into_iter()
        .map(|i| ids[i])
        .collect();
    picked.sort_unstable();
    picked
}

fn track_summary(t: &Trajectory) -> Value {
    json!({
        "id": t.id,
        "category": t.category,
        "birth_frame": t.birth_frame,
        "last_frame": t.last_frame,
        "keyframes": t.keyframe_states.keys().collect::<Vec<_>>(),
        "frozen": t.frozen,
        "trajectory": crate::reasoner::serialize_trajectory(t),
    })
}

pub fn run_pipeline(
    bundle: &PerceptionBundle,
    query: &str,
    config: &PipelineConfig,
    backends: Backends<'_>,
) -> Result<RunResult> {
    config.validate()?;
    if config.tau != bundle.schedule().interval() {
        return Err(Error::Input(format!(
            "config tau {} differs from the bundle keyframe interval {}",
            config.tau,
            bundle.schedule().interval()
        )));
    }
    let chat = backends.chat.filter(|_| !config.reasoner.offline);
    let mut trace = Trace::default();
    let (w, h, n_frames) = (bundle.width(), bundle.height(), bundle.frame_count());

    let dec = decompose(query, chat, &config.reasoner)?;
    if dec.used_fallback && !dec.attempts.is_empty() {
        log::warn!(
            "decomposition fell back to the rule parser after {} attempts",
            dec.attempts.len()
        );
    }
    trace.push(
        "decompose",
        json!({
            "query": query,
            "structured": dec.query,
            "used_fallback": dec.used_fallback,
            "attempts": dec.attempts,
        }),
    );
    let sq = dec.query;
    let k = sq.cardinality.max(1);

    let vocabulary = sq.grounding_vocabulary();
    let tracking = build_trajectories(bundle, &vocabulary, &config.association());
    trace.push(
        "tracking",
        json!({
            "entities": vocabulary,
            "associations": tracking.associations,
            "tracks": tracking.tracks.iter().map(track_summary).collect::<Vec<_>>(),
        }),
    );
    let all_tracks = tracking.tracks;
    let (tracks, context_tracks): (Vec<&Trajectory>, Vec<&Trajectory>) = all_tracks
        .iter()
        .partition(|t| sq.candidate_entities.iter().any(|e| category_matches(&t.category, e)));
    let all_ids: Vec<u32> = tracks.iter().map(|t| t.id).collect();

    if tracks.is_empty() {
        trace.push("select", json!({ "zero_candidates": true, "selected": [] }));
        return Ok(RunResult {
            video_id: bundle.video_id().to_string(),
            query: query.to_string(),
            structured_query: sq,
            masks: MaskSequence::empty(bundle.video_id(), w, h, n_frames),
            per_id_masks: BTreeMap::new(),
            selected_ids: Vec::new(),
            candidate_count: 0,
            subset_size: 0,
            fpv_activated: false,
            zero_candidates: true,
            low_confidence: true,
            trace: trace.0,
        });
    }

    let by_id: BTreeMap<u32, &Trajectory> = tracks.iter().map(|t| (t.id, *t)).collect();
    let mut subset: Vec<u32> = all_ids.clone();
    let mut ranking: Option<Vec<u32>> = None;
    let mut low_confidence = false;

    if config.use_cmr && !sq.motion_descriptor.trim().is_empty() && tracks.len() > 1 {
        let camera: Option<CameraMotionModel> = if config.use_cmm {
            if bundle.has_frames() {
                let model = build_camera_model(bundle, bundle.schedule(), &config.camera())?;
                trace.push(
                    "camera",
                    json!({
                        "intervals": model.intervals,
                        "flagged": model.flagged_intervals().count(),
                    }),
                );
                Some(model)
            } else {
                trace.push("camera", json!({ "skipped": "bundle has no frames" }));
                None
            }
        } else {
            None
        };
        let refs: Vec<&Trajectory> = tracks.clone();
        let occlusions = config.use_or.then(|| {
            let scene: Vec<&Trajectory> = all_tracks.iter().collect();
            infer_all_occlusions(&scene, bundle.schedule().indices())
        });
        if let Some(ev) = &occlusions {
            trace.push("occlusion", json!({ "events": ev }));
        }
        let ctx = ReasoningContext {
            camera: camera.as_ref(),
            occlusions: occlusions.as_deref(),
            frame_size: (w, h),
        };
        let coarse = coarse_filter(&refs, &sq.motion_descriptor, &ctx, k, &config.reasoner, chat)?;
        if coarse.used_fallback && !coarse.attempts.is_empty() {
            log::warn!(
                "motion reasoning fell back to the offline ranker after {} attempts",
                coarse.attempts.len()
            );
        }
        trace.push(
            "coarse",
            serde_json::to_value(&coarse).map_err(|e| Error::json("coarse trace", e))?,
        );
        subset = coarse.selected.clone();
        ranking = Some(coarse.ranking);
    }

    let mut fpv_activated = false;
    let mut selected: Option<Vec<u32>> = None;
    if config.use_fpv && should_activate(subset.len(), k, &sq.posture_descriptor) {
        fpv_activated = true;
        let cands: Vec<&Trajectory> = subset.iter().map(|id| by_id[id]).collect();
        let emb: &dyn EmbeddingBackend = backends.embeddings.unwrap_or(bundle);
        match verify_pose(&cands, &sq.posture_descriptor, k, config.k_frames, emb) {
            Ok(out) => {
                if out.keyframes_flagged {
                    low_confidence = true;
                }
                trace.push(
                    "pose",
                    serde_json::to_value(&out).map_err(|e| Error::json("pose trace", e))?,
                );
                selected = Some(out.selected);
            }
            Err(e) => {
                log::warn!("pose verification failed: {e}");
                low_confidence = true;
                trace.push("pose", json!({ "error": e.to_string() }));
            }
        }
    }

    let k_us = k as usize;
    let selected = match selected {
        Some(s) => s,
        None if subset.len() <= k_us => subset.clone(),
        None => {
            let chosen = match &ranking {
                Some(r) => {
                    if config.use_fpv && sq.posture_descriptor.trim().is_empty() {
                        low_confidence = true;
                    }
                    r.iter().filter(|id| subset.contains(id)).take(k_us).copied().collect()
                }
                None => random_pick(&subset, k_us, config.seed),
            };
            chosen
        }
    };

    let per_id_masks: BTreeMap<u32, Vec<BinaryMask>> = selected
        .iter()
        .map(|id| {
            let t = by_id[id];
            let masks = (0..n_frames)
                .map(|f| t.mask_at(f).cloned().unwrap_or_else(|| BinaryMask::empty(w, h)))
                .collect();
            (*id, masks)
        })
        .collect();
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let mut m = BinaryMask::empty(w, h);
        for masks in per_id_masks.values() {
            m = m.union(&masks[f])?;
        }
        frames.push(m);
    }
    trace.push(
        "select",
        json!({
            "candidates": all_ids,
            "subset": subset,
            "context_tracks": context_tracks.iter().map(|t| t.id).collect::<Vec<_>>(),
            "selected": selected,
            "fpv_activated": fpv_activated,
            "low_confidence": low_confidence,
        }),
    );

    Ok(RunResult {
        video_id: bundle.video_id().to_string(),
        query: query.to_string(),
        structured_query: sq,
        masks: MaskSequence::new(bundle.video_id(), frames)?,
        per_id_masks,
        selected_ids: selected,
        candidate_count: tracks.len(),
        subset_size: subset.len(),
        fpv_activated,
        zero_candidates: false,
        low_confidence,
        trace: trace.0,
    })
}

pub fn evaluate_run(result: &RunResult, gt: &MaskSequence, radius: Option<u32>) -> Result<EvalReport> {
    evaluate(&result.masks, gt, radius)
}

/// Serialized form of `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub video_id: String,
    pub query: String,
    pub structured_query: StructuredQuery,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    pub selected_ids: Vec<u32>,
    pub candidate_count: usize,
    pub subset_size: usize,
    pub fpv_activated: bool,
    pub zero_candidates: bool,
    pub low_confidence: bool,
    pub masks: Vec<BinaryMask>,
    pub per_id_masks: BTreeMap<u32, Vec<BinaryMask>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<EvalSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

impl From<&EvalReport> for EvalSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            j: r.j_mean,
            f: r.f_mean,
            jf: r.jf_mean,
        }
    }
}

impl RunResult {
    pub fn results_file(&self) -> ResultsFile {
        let first = self.masks.frames.first();
        ResultsFile {
            video_id: self.video_id.clone(),
            query: self.query.clone(),
            structured_query: self.structured_query.clone(),
            width: first.map_or(0, |m| m.width()),
            height: first.map_or(0, |m| m.height()),
            frame_count: self.masks.len(),
            selected_ids: self.selected_ids.clone(),
            candidate_count: self.candidate_count,
            subset_size: self.subset_size,
            fpv_activated: self.fpv_activated,
            zero_candidates: self.zero_candidates,
            low_confidence: self.low_confidence,
            masks: self.masks.frames.clone(),
            per_id_masks: self.per_id_masks.clone(),
            evaluation: None,
        }
    }

    pub fn results_json(&self) -> String {
        serde_json::to_string_pretty(&self.results_file()).expect("results serialize") + "\n"
    }

    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace serializes") + "\n")
            .collect()
    }

    /// Writes `results.json` and `trace.jsonl` into `dir`.
    pub fn write(&self, dir: &Path, evaluation: Option<&EvalReport>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut rf = self.results_file();
        rf.evaluation = evaluation.map(EvalSummary::from);
        let results = dir.join("results.json");
        let text = serde_json::to_string_pretty(&rf).map_err(|e| Error::json("results.json", e))? + "\n";
        fs::write(&results, text).map_err(|e| Error::io(&results, e))?;
        let trace = dir.join("trace.jsonl");
        fs::write(&trace, self.trace_jsonl()).map_err(|e| Error::io(&trace, e))?;
        Ok(())
    }
}

impl ResultsFile {
    pub fn mask_sequence(&self) -> Result<MaskSequence> {
        MaskSequence::new(self.video_id.clone(), self.masks.clone())
    }
}

pub fn read_results(path: &Path) -> Result<ResultsFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rf: ResultsFile = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if rf.masks.len() != rf.frame_count {
        return Err(Error::validation(
            "masks",
            format!("{} masks for {} frames", rf.masks.len(), rf.frame_count),
        ));
    }
    Ok(rf)
}
