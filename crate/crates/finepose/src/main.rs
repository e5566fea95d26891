use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use finepose_core::field::DEFAULT_FIELD_SIZE;
use finepose_core::solver::SolveOptions;
use finepose_core::PoseSamplerConfig;
use finepose::batch::solve_directory;
use finepose::corpus::{generate_corpus, CorpusConfig, DirectorySink};
use finepose::evaluate::{evaluate, write_report};
use finepose::manifest::{load_mesh_dir, read_jsonl, write_jsonl, Prediction, TruthLine};

#[derive(Parser)]
#[command(name = "finepose", version, about = "Perspective pose toolkit for location fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a seeded synthetic corpus of location fields.
    GenerateSynthetic {
        #[arg(long)]
        meshes: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FIELD_SIZE)]
        field_size: usize,
        /// Square image size in pixels.
        #[arg(long, default_value_t = 512)]
        image_size: usize,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recover a pose for every field in a directory.
    Solve {
        #[arg(long)]
        fields: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        max_correspondences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Huber threshold in pixels; plain least squares when absent.
        #[arg(long)]
        huber: Option<f64>,
    },
    /// Score predictions against ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        meshes: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the annotation HTTP service.
    #[cfg(feature = "annotation")]
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: std::net::SocketAddr,
        #[arg(long)]
        data_root: PathBuf,
        /// Dataset manifest JSON; defaults to `manifest.json` under the data root.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        render_cache: usize,
        #[arg(long)]
        annotation_log: Option<PathBuf>,
    },
}

fn generate(meshes: &Path, count: usize, config: CorpusConfig, out: &Path) -> Result<()> {
    let meshes: Vec<_> = load_mesh_dir(meshes)?.into_values().collect();
    let sink = DirectorySink::create(out).with_context(|| format!("creating {}", out.display()))?;
    let entries = generate_corpus(&meshes, count, &config, &sink)?;
    sink.write_manifest(&entries)?;
    eprintln!("wrote {} samples to {}", entries.len(), out.display());
    Ok(())
}

fn solve(fields: &Path, out: &Path, opts: &SolveOptions) -> Result<bool> {
    if !fields.is_dir() {
        bail!("{} is not a directory", fields.display());
    }
    let preds = solve_directory(fields, opts)?;
    write_jsonl(out, &preds)?;
    let failed = preds.iter().filter(|p| p.error.is_some()).count();
    eprintln!("solved {} of {} fields", preds.len() - failed, preds.len());
    Ok(failed == 0)
}

fn run_evaluate(pred: &Path, gt: &Path, meshes: &Path, report_dir: &Path) -> Result<()> {
    let preds: Vec<Prediction> = read_jsonl(pred)?;
    let truth: Vec<TruthLine> = read_jsonl(gt)?;
    let meshes = load_mesh_dir(meshes)?;
    let report = evaluate(&preds, &truth, &meshes)?;
    write_report(&report, report_dir)?;
    let warnings = report.issues.warning_count();
    if warnings > 0 {
        eprintln!(
            "warning: {warnings} samples excluded ({} unmatched, {} missing, {} failed)",
            report.issues.unmatched.len(),
            report.issues.missing.len(),
            report.issues.failed.len()
        );
    }
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenerateSynthetic { meshes, count, seed, out, field_size, image_size, workers } => {
            let sampler = PoseSamplerConfig { image_width: image_size, image_height: image_size, ..Default::default() };
            generate(&meshes, count, CorpusConfig { sampler, field_size, seed, workers }, &out)?;
        }
        Command::Solve { fields, out, max_correspondences, seed, huber } => {
            let opts = SolveOptions { max_correspondences, seed, huber_px: huber, ..Default::default() };
            return solve(&fields, &out, &opts);
        }
        Command::Evaluate { pred, gt, meshes, report } => run_evaluate(&pred, &gt, &meshes, &report)?,
        #[cfg(feature = "annotation")]
        Command::Serve { listen, data_root, manifest, static_dir, render_cache, annotation_log } => {
            let config = finepose::service::ServiceConfig {
                listen,
                manifest: manifest.unwrap_or_else(|| data_root.join("manifest.json")),
                data_root,
                static_dir,
                render_cache,
                annotation_log,
            };
            tokio::runtime::Runtime::new()?.block_on(finepose::service::serve(config))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
