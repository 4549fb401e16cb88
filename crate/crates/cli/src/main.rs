//! One binary, five subcommands, mirroring the pipeline dataflow:
//! `synth` makes data, `train` fits a model, `detect` runs it, `eval`
//! measures it, `bench` times it.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{error::ErrorKind, Parser, Subcommand};

use pupilseg::dataset::{load_gray, Dataset, DirDataset};
use pupilseg::eval::{
    bench, cumulative_curve, curve_to_csv, default_error_thresholds, default_iou_thresholds,
    evaluate_frames, failure_rate, grid_map, FrameResult, Metric,
};
use pupilseg::synth::{make_dataset, AugmentConfig, SceneSampler};
use pupilseg::train::{train, TrainConfig};
use pupilseg::{detect, model_io, Detection, GrayImage, PupilModel};

#[derive(Parser)]
#[command(name = "pupilseg", version, about = "Statistically trained pupil segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with exact ground-truth annotations.
    Synth {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Frames per scene; variant 0 is the clean render, the rest are
        /// augmented.
        #[arg(long, default_value_t = 1)]
        variants: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on an annotated dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Optional training report path (key:value text).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Block-sum downscale factor.
        #[arg(long, default_value_t = 2)]
        factor: u32,
        /// Mean-shift bandwidth override, in summed-intensity units.
        #[arg(long)]
        bandwidth: Option<f64>,
        /// Drop shape entries seen fewer than this many times.
        #[arg(long, default_value_t = 1)]
        min_count: u64,
    },
    /// Detect pupils in image files; writes `filename cx cy a b theta score`
    /// lines.
    Detect {
        #[arg(long)]
        model: PathBuf,
        /// Image files or directories to scan.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Write lines here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report detections with a score above this as misses.
        #[arg(long)]
        max_score: Option<f64>,
        /// Worker threads for batch detection; output order is unaffected.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Evaluate a model against an annotated dataset; writes curves, grid
    /// maps and a summary.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Time single-core detection over a dataset.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        repetitions: usize,
        /// Write the timing report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            n,
            variants,
            seed,
        } => {
            let summary = make_dataset(
                &out,
                n,
                variants,
                &SceneSampler::default(),
                &AugmentConfig::default(),
                seed,
            )?;
            println!(
                "wrote {} frames ({} scenes x {} variants) to {}",
                summary.frames,
                summary.scenes,
                variants,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            out,
            report,
            factor,
            bandwidth,
            min_count,
        } => {
            let dataset = DirDataset::open(&data)?;
            let mut cfg = TrainConfig::for_factor(factor);
            if let Some(bw) = bandwidth {
                cfg.mean_shift_bandwidth = bw;
            }
            cfg.min_count = min_count;
            let (model, train_report) = train(&dataset, &cfg)?;
            model_io::save(&model, &out)?;
            if let Some(report_path) = report {
                fs::write(&report_path, train_report.to_text())
                    .with_context(|| report_path.display().to_string())?;
            }
            println!(
                "trained on {} frames: {} positions, {} entries, {} prototypes -> {}",
                train_report.samples,
                train_report.positions,
                train_report.entries,
                train_report.prototypes,
                out.display()
            );
            Ok(())
        }
        Command::Detect {
            model,
            inputs,
            out,
            max_score,
            threads,
        } => {
            let model = model_io::load(&model)?;
            let files = collect_image_files(&inputs)?;
            let lines = detect_batch(&model, &files, max_score, threads)?;
            let text = lines.join("\n") + "\n";
            match out {
                Some(path) => {
                    fs::write(&path, text).with_context(|| path.display().to_string())?
                }
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Eval {
            model,
            data,
            out_dir,
        } => {
            let model = model_io::load(&model)?;
            let dataset = DirDataset::open(&data)?;
            let (results, dims) = eval_dataset(&model, &dataset)?;
            write_eval_reports(&results, dims, &out_dir)?;
            println!(
                "evaluated {} frames -> {}",
                results.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::Bench {
            model,
            data,
            repetitions,
            out,
        } => {
            let model = model_io::load(&model)?;
            let dataset = DirDataset::open(&data)?;
            let mut frames = Vec::with_capacity(dataset.len());
            for (name, _) in dataset.entries() {
                frames.push(dataset.load_image(name)?);
            }
            let report = bench(&model, &frames, repetitions)?;
            let text = report.to_text();
            match out {
                Some(path) => {
                    fs::write(&path, text).with_context(|| path.display().to_string())?
                }
                None => print!("{text}"),
            }
            Ok(())
        }
    }
}

const IMAGE_EXTENSIONS: &[&str] = &["pgm", "png", "pnm", "bmp", "jpg", "jpeg", "tif", "tiff"];

fn collect_image_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut in_dir: Vec<PathBuf> = fs::read_dir(input)
                .with_context(|| input.display().to_string())?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map_or(false, |e| IMAGE_EXTENSIONS.contains(&e.to_lowercase().as_str()))
                })
                .collect();
            in_dir.sort();
            files.extend(in_dir);
        } else {
            files.push(input.clone());
        }
    }
    if files.is_empty() {
        bail!("no input images found");
    }
    Ok(files)
}

fn detection_line(path: &Path, det: Option<&Detection>) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    match det {
        Some(d) => {
            let e = &d.ellipse;
            format!("{name} {} {} {} {} {} {}", e.cx, e.cy, e.a, e.b, e.theta, d.score)
        }
        None => format!("{name} none"),
    }
}

fn detect_one(model: &PupilModel, path: &Path, max_score: Option<f64>) -> Result<String> {
    let img = load_gray(path)?;
    let det = detect(&img, model)?;
    let det = det.filter(|d| max_score.map_or(true, |cap| d.score <= cap));
    Ok(detection_line(path, det.as_ref()))
}

/// Runs detection over the files, parallel over frames only; results come
/// back in input order regardless of thread count.
fn detect_batch(
    model: &PupilModel,
    files: &[PathBuf],
    max_score: Option<f64>,
    threads: usize,
) -> Result<Vec<String>> {
    let threads = threads.clamp(1, files.len().max(1));
    if threads == 1 {
        return files
            .iter()
            .map(|p| detect_one(model, p, max_score))
            .collect();
    }
    let mut slots: Vec<Option<Result<String>>> = Vec::new();
    slots.resize_with(files.len(), || None);
    let chunk = files.len().div_ceil(threads);
    std::thread::scope(|scope| {
        for (file_chunk, slot_chunk) in files.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (path, slot) in file_chunk.iter().zip(slot_chunk.iter_mut()) {
                    *slot = Some(detect_one(model, path, max_score));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

fn eval_dataset(
    model: &PupilModel,
    dataset: &DirDataset,
) -> Result<(Vec<FrameResult>, (u32, u32))> {
    let mut frames: Vec<(String, GrayImage, pupilseg::Ellipse)> = Vec::new();
    for (name, truth) in dataset.entries() {
        frames.push((name.clone(), dataset.load_image(name)?, *truth));
    }
    let dims = frames
        .first()
        .map(|(_, img, _)| (img.width(), img.height()))
        .unwrap_or((192, 144));
    let results = evaluate_frames(
        model,
        frames.iter().map(|(name, img, truth)| (name.clone(), img, *truth)),
    )?;
    Ok((results, dims))
}

fn write_eval_reports(
    results: &[FrameResult],
    (width, height): (u32, u32),
    out_dir: &Path,
) -> Result<()> {
    fs::create_dir_all(out_dir).with_context(|| out_dir.display().to_string())?;

    let err_curve = cumulative_curve(results, Metric::CenterError, &default_error_thresholds())?;
    fs::write(out_dir.join("center_error_curve.csv"), curve_to_csv(&err_curve))?;
    let iou_curve = cumulative_curve(results, Metric::Iou, &default_iou_thresholds())?;
    fs::write(out_dir.join("iou_curve.csv"), curve_to_csv(&iou_curve))?;

    let err_grid = grid_map(results, Metric::CenterError, width, height)?;
    fs::write(out_dir.join("center_error_grid.csv"), err_grid.to_csv())?;
    let iou_grid = grid_map(results, Metric::Iou, width, height)?;
    fs::write(out_dir.join("iou_grid.csv"), iou_grid.to_csv())?;

    let detected: Vec<&FrameResult> = results.iter().filter(|r| r.detection.is_some()).collect();
    let mean_err = detected.iter().map(|r| r.center_error).sum::<f64>()
        / detected.len().max(1) as f64;
    let mean_iou = detected.iter().map(|r| r.iou).sum::<f64>() / detected.len().max(1) as f64;
    let mean_us = results.iter().map(|r| r.detect_time_us).sum::<u64>() as f64
        / results.len().max(1) as f64;
    let summary = format!(
        "frames: {}\ndetected: {}\nfailure_rate: {}\nmean_center_error_px: {}\nmean_iou: {}\nmean_detect_us: {:.1}\n",
        results.len(),
        detected.len(),
        failure_rate(results),
        mean_err,
        mean_iou,
        mean_us,
    );
    fs::write(out_dir.join("summary.txt"), summary)?;
    Ok(())
}
