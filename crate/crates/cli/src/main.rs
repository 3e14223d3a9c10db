use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use rvos_core::ablation::{generate_suite, load_suite_dir, run_ablation, standard_variants, write_suite};
use rvos_core::llm::ChatBackend;
use rvos_core::mask::MaskSequence;
use rvos_core::metrics::{evaluate, EvalReport};
use rvos_core::overlay::render_overlays;
use rvos_core::perception::load_bundle;
use rvos_core::pipeline::{evaluate_run, read_results, run_pipeline, Backends, PipelineConfig, ResultsFile};
use rvos_core::sim::{generate_scene, GroundTruth, SceneSpec};

#[derive(Parser)]
#[command(
    name = "rvos",
    version,
    about = "Referring video object segmentation over perception bundles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment the objects a query refers to.
    Run(RunArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Run the component ablation over simulator scenes.
    Ablate(AblateArgs),
    /// Render synthetic scenes with ground truth.
    Simulate(SimulateArgs),
    /// Load a bundle and print a summary.
    Validate {
        #[arg(long)]
        bundle: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, conflicts_with = "queries", required_unless_present = "queries")]
    query: Option<String>,
    /// One query per line; each gets its own output subdirectory.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Use the rule-based parser and offline ranker only.
    #[arg(long)]
    offline: bool,
    #[arg(long)]
    overlay: bool,
    /// Ground truth to score a single query against.
    #[arg(long, conflicts_with = "queries")]
    gt: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run output directory or results.json.
    #[arg(long)]
    pred: PathBuf,
    /// Scene directory, ground_truth.json, mask sequence JSON or results.json.
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    radius: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Directory of scene subdirectories written by `simulate`.
    #[arg(long, conflicts_with = "suite")]
    scenes: Option<PathBuf>,
    /// Generate this many suite scenes in memory instead.
    #[arg(long, default_value_t = 50)]
    suite: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report path (JSON). A text table is printed to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene spec (TOML or JSON).
    #[arg(long, required_unless_present = "suite", conflicts_with = "suite")]
    spec: Option<PathBuf>,
    /// Write this many standard suite scenes instead of one spec.
    #[arg(long)]
    suite: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>, offline: bool) -> Result<PipelineConfig> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if offline {
        config.reasoner.offline = true;
    }
    Ok(config)
}

fn read_queries(args: &RunArgs) -> Result<Vec<String>> {
    if let Some(q) = &args.query {
        return Ok(vec![q.clone()]);
    }
    let path = args.queries.as_ref().expect("clap requires one of query/queries");
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let queries: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if queries.is_empty() {
        bail!("{} contains no queries", path.display());
    }
    Ok(queries)
}

/// Reads ground truth from any of the accepted layouts.
fn load_ground_truth(path: &Path) -> Result<MaskSequence> {
    let file = if path.is_dir() {
        ["ground_truth.json", "masks.json", "results.json"]
            .iter()
            .map(|n| path.join(n))
            .find(|p| p.is_file())
            .with_context(|| format!("no ground truth file in {}", path.display()))?
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    if let Ok(gt) = serde_json::from_str::<GroundTruth>(&text) {
        return Ok(gt.target);
    }
    if let Ok(seq) = serde_json::from_str::<MaskSequence>(&text) {
        seq.validate()?;
        return Ok(seq);
    }
    let rf: ResultsFile = serde_json::from_str(&text)
        .with_context(|| format!("{} is not ground truth, a mask sequence or results", file.display()))?;
    Ok(rf.mask_sequence()?)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let config = load_config(args.config.as_deref(), args.offline)?;
    let bundle = load_bundle(&args.bundle).with_context(|| format!("loading bundle {}", args.bundle.display()))?;
    let queries = read_queries(&args)?;
    let client = if config.reasoner.offline {
        None
    } else {
        config.reasoner.client()
    };
    let backends = Backends {
        chat: client.as_ref().map(|c| c as &dyn ChatBackend),
        embeddings: None,
    };
    let gt = args.gt.as_deref().map(load_ground_truth).transpose()?;

    let single = queries.len() == 1 && args.queries.is_none();
    let mut index = Vec::new();
    for (i, query) in queries.iter().enumerate() {
        let dir = if single {
            args.out.clone()
        } else {
            args.out.join(format!("q{i:03}"))
        };
        let result = run_pipeline(&bundle, query, &config, backends).with_context(|| format!("query {query:?}"))?;
        let report = gt
            .as_ref()
            .map(|g| evaluate_run(&result, g, config.boundary_radius))
            .transpose()?;
        result.write(&dir, report.as_ref())?;
        if args.overlay {
            render_overlays(&result, &bundle, &dir.join("overlays"))?;
        }
        let mut line = format!(
            "{}: selected {:?} of {} candidates",
            dir.display(),
            result.selected_ids,
            result.candidate_count
        );
        if let Some(r) = &report {
            line.push_str(&format!(", J&F {:.3}", r.jf_mean));
        }
        if result.zero_candidates {
            line.push_str(" (no candidates)");
        } else if result.low_confidence {
            line.push_str(" (low confidence)");
        }
        println!("{line}");
        index.push(json!({ "dir": dir.file_name().map(|n| n.to_string_lossy()), "query": query }));
    }
    if !single {
        let path = args.out.join("index.json");
        fs::write(&path, serde_json::to_string_pretty(&index)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn eval_report_json(r: &EvalReport) -> serde_json::Value {
    json!({ "j_mean": r.j_mean, "f_mean": r.f_mean, "jf_mean": r.jf_mean })
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let pred_path = if args.pred.is_dir() {
        args.pred.join("results.json")
    } else {
        args.pred.clone()
    };
    let pred = read_results(&pred_path)?.mask_sequence()?;
    let gt = load_ground_truth(&args.gt)?;
    let report = evaluate(&pred, &gt, args.radius)?;
    let text = serde_json::to_string_pretty(&eval_report_json(&report))? + "\n";
    print!("{text}");
    if let Some(out) = &args.out {
        fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref(), true)?;
    config.seed = args.seed;
    let scenes = match &args.scenes {
        Some(dir) => load_suite_dir(dir)?,
        None => generate_suite(args.suite, args.seed)?,
    };
    let report = run_ablation(&scenes, &config, &standard_variants(), args.seed)?;
    print!("{}", report.to_table());
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(out, report.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    if let Some(n) = args.suite {
        let scenes = generate_suite(n, args.seed)?;
        write_suite(&scenes, &args.out)?;
        println!("wrote {} scenes to {}", scenes.len(), args.out.display());
        return Ok(());
    }
    let path = args.spec.expect("clap requires spec or suite");
    let spec = SceneSpec::load(&path).with_context(|| format!("loading spec {}", path.display()))?;
    let scene = generate_scene(&spec, args.seed)?;
    scene.write(&args.out)?;
    println!("{}: {}", args.out.display(), scene.query);
    Ok(())
}

fn cmd_validate(dir: &Path) -> Result<()> {
    let bundle = load_bundle(dir)?;
    let categories: BTreeSet<&str> = bundle.detections().iter().map(|d| d.category.as_str()).collect();
    let summary = json!({
        "video_id": bundle.video_id(),
        "width": bundle.width(),
        "height": bundle.height(),
        "frame_count": bundle.frame_count(),
        "keyframes": bundle.schedule().indices(),
        "detections": bundle.detections().len(),
        "categories": categories,
        "propagations": bundle.has_propagations(),
        "embeddings": bundle.embeddings().len(),
        "frames": bundle.has_frames(),
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Validate { bundle } => cmd_validate(&bundle),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
