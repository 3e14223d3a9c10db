//! Component ablations over the synthetic suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::pipeline::{evaluate_run, run_pipeline, Backends, PipelineConfig};
use crate::sim::suite::{suite, Family};
use crate::sim::{generate_scene, Scene};

/// One evaluation scene with its subset tags.
pub struct SuiteEntry {
    pub name: String,
    pub family: Option<Family>,
    pub pan: bool,
    pub occlusion: bool,
    pub scene: Scene,
}

impl SuiteEntry {
    /// Tags derived from the scene itself: a nonzero pan, or any frame with
    /// overlapping shapes.
    pub fn from_scene(name: String, family: Option<Family>, scene: Scene) -> Self {
        let pan = scene.spec.camera.pan != [0.0, 0.0] || scene.spec.camera.zoom != 1.0;
        let occlusion = match family {
            Some(f) => matches!(f, Family::Occlusion | Family::OcclusionPan),
            None => scene.ground_truth.occlusion.iter().any(|f| !f.is_empty()),
        };
        Self {
            name,
            family,
            pan,
            occlusion,
            scene,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub use_cmr: bool,
    pub use_fpv: bool,
    pub use_cmm: bool,
    pub use_or: bool,
}

impl Variant {
    pub const fn new(use_cmr: bool, use_fpv: bool, use_cmm: bool, use_or: bool) -> Self {
        Self {
            use_cmr,
            use_fpv,
            use_cmm,
            use_or,
        }
    }

    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        PipelineConfig {
            use_cmr: self.use_cmr,
            use_fpv: self.use_fpv,
            use_cmm: self.use_cmm,
            use_or: self.use_or,
            ..base.clone()
        }
    }

    pub fn label(&self) -> String {
        self.apply(&PipelineConfig::default()).variant_label()
    }
}

/// Stage combinations crossed with reasoning contexts. Camera and occlusion
/// context only matter when motion reasoning runs, so those combinations
/// appear once each.
pub fn standard_variants() -> Vec<Variant> {
    vec![
        Variant::new(false, false, false, false),
        Variant::new(false, true, false, false),
        Variant::new(true, false, false, false),
        Variant::new(true, false, true, false),
        Variant::new(true, false, false, true),
        Variant::new(true, false, true, true),
        Variant::new(true, true, false, false),
        Variant::new(true, true, true, true),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScore {
    pub name: String,
    pub family: Option<Family>,
    pub pan: bool,
    pub occlusion: bool,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub selected_ids: Vec<u32>,
    /// Scripted object ids, not track ids.
    pub target_objects: Vec<u32>,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub variant: Variant,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub by_family: BTreeMap<String, f64>,
    pub pan_jf: Option<f64>,
    pub occlusion_jf: Option<f64>,
    pub seconds: f64,
    pub scenes: Vec<SceneScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub scene_count: usize,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table, one line per variant.
    pub fn to_table(&self) -> String {
        let families: Vec<&String> = self
            .rows
            .first()
            .map(|r| r.by_family.keys().collect())
            .unwrap_or_default();
        let mut out = format!(
            "{:<18} {:>6} {:>6} {:>6} {:>6} {:>6}",
            "variant", "J", "F", "J&F", "pan", "occl"
        );
        for fam in &families {
            let _ = write!(out, " {:>15}", fam);
        }
        out.push_str(&format!(" {:>8}\n", "seconds"));
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = write!(
                out,
                "{:<18} {:>6.3} {:>6.3} {:>6.3} {:>6} {:>6}",
                r.label,
                r.j,
                r.f,
                r.jf,
                opt(r.pan_jf),
                opt(r.occlusion_jf)
            );
            for fam in &families {
                let _ = write!(out, " {:>15.3}", r.by_family.get(*fam).copied().unwrap_or(f64::NAN));
            }
            let _ = writeln!(out, " {:>8.2}", r.seconds);
        }
        out
    }
}

fn family_name(f: Option<Family>) -> String {
    f.and_then(|f| serde_json::to_value(f).ok())
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_else(|| "other".into())
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Renders the suite scenes.
pub fn generate_suite(count: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    suite(count, seed)
        .into_iter()
        .map(|s| {
            let scene = generate_scene(&s.spec, s.seed)?;
            Ok(SuiteEntry::from_scene(s.spec.name.clone(), Some(s.family), scene))
        })
        .collect()
}

/// Loads every scene subdirectory of `dir`, in name order.
pub fn load_suite_dir(dir: &Path) -> Result<Vec<SuiteEntry>> {
    let mut subdirs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("scene.json").is_file())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::Input(format!("no scene directories under {}", dir.display())));
    }
    subdirs
        .iter()
        .map(|p| {
            let (scene, family) = Scene::load(p)?;
            let name = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(SuiteEntry::from_scene(name, family, scene))
        })
        .collect()
}

/// Writes each scene into `dir/<name>`.
pub fn write_suite(entries: &[SuiteEntry], dir: &Path) -> Result<()> {
    for e in entries {
        e.scene.write_tagged(&dir.join(&e.name), e.family)?;
    }
    Ok(())
}

/// Runs one configuration offline over every scene.
pub fn run_variant(scenes: &[SuiteEntry], config: &PipelineConfig) -> Result<AblationRow> {
    let start = Instant::now();
    let mut scores = Vec::with_capacity(scenes.len());
    let mut reports = Vec::with_capacity(scenes.len());
    for entry in scenes {
        let scene = &entry.scene;
        let result = run_pipeline(&scene.bundle, &scene.query, config, Backends::default())?;
        let report = evaluate_run(&result, &scene.ground_truth.target, config.boundary_radius)?;
        scores.push(SceneScore {
            name: entry.name.clone(),
            family: entry.family,
            pan: entry.pan,
            occlusion: entry.occlusion,
            j: report.j_mean,
            f: report.f_mean,
            jf: report.jf_mean,
            selected_ids: result.selected_ids.clone(),
            target_objects: scene.ground_truth.target_ids.clone(),
            low_confidence: result.low_confidence,
        });
        reports.push(report);
    }
    let seconds = start.elapsed().as_secs_f64();
    let overall = EvalReport::mean_of(&reports);
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in &scores {
        grouped.entry(family_name(s.family)).or_default().push(s.jf);
    }
    let by_family = grouped
        .into_iter()
        .map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    let pan_jf = mean(scores.iter().filter(|s| s.pan).map(|s| s.jf));
    let occlusion_jf = mean(scores.iter().filter(|s| s.occlusion).map(|s| s.jf));
    let (j, f, jf) = overall
        .map(|m| (m.j_mean, m.f_mean, m.jf_mean))
        .unwrap_or((0.0, 0.0, 0.0));
    Ok(AblationRow {
        label: config.variant_label(),
        variant: Variant::new(config.use_cmr, config.use_fpv, config.use_cmm, config.use_or),
        j,
        f,
        jf,
        by_family,
        pan_jf,
        occlusion_jf,
        seconds,
        scenes: scores,
    })
}

pub fn run_ablation(
    scenes: &[SuiteEntry],
    base: &PipelineConfig,
    variants: &[Variant],
    seed: u64,
) -> Result<AblationReport> {
    let rows = variants
        .iter()
        .map(|v| run_variant(scenes, &v.apply(base)))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        scene_count: scenes.len(),
        seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_distinct() {
        let labels: std::collections::BTreeSet<String> = standard_variants().iter().map(Variant::label).collect();
        assert_eq!(labels.len(), standard_variants().len());
        assert!(labels.contains("baseline"));
        assert!(labels.contains("cmr+fpv+cmm+or"));
    }

    #[test]
    fn small_ablation_runs() {
        let scenes = generate_suite(3, 1).unwrap();
        let report = run_ablation(&scenes, &PipelineConfig::default(), &standard_variants()[..2], 1).unwrap();
        assert_eq!(report.rows.len(), 2);
        for r in &report.rows {
            assert_eq!(r.scenes.len(), 3);
            assert!((0.0..=1.0).contains(&r.jf));
        }
        assert_eq!(report.to_table().lines().count(), 3);
    }

    #[test]
    fn written_suite_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let scenes = generate_suite(2, 5).unwrap();
        write_suite(&scenes, dir.path()).unwrap();
        let loaded = load_suite_dir(dir.path()).unwrap();
        assert_eq!(loaded.len(), 2);
        let config = PipelineConfig::default();
        let a = run_variant(&scenes, &config).unwrap();
        let b = run_variant(&loaded, &config).unwrap();
        for (x, y) in a.scenes.iter().zip(&b.scenes) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.family, y.family);
            assert_eq!(x.jf, y.jf);
            assert_eq!(x.selected_ids, y.selected_ids);
        }
        assert_eq!(loaded[0].scene.query, scenes[0].scene.query);
        assert_eq!(loaded[0].scene.ground_truth, scenes[0].scene.ground_truth);
    }

    #[test]
    fn empty_directory_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_suite_dir(dir.path()).is_err());
    }
}
