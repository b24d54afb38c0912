//! Subcommand implementations. Each returns what it wrote so callers and
//! tests can inspect results without re-reading files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fernmatch_core::detect::DetectorParams;
use fernmatch_core::geometry::{collect_correspondences, ransac_homography, RansacFit, RansacParams};
use fernmatch_core::image::{load_pgm, save_pgm, GrayImage};
use fernmatch_core::model_io::{decode_header, load_model, save_model};
use fernmatch_core::train::{train_model, training_report, TrainedModel, TrainingReport};
use fernmatch_core::Correspondence;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::eval::{evaluate, EvalOutcome, EvalParams};

pub const MODEL_FILE_NAME: &str = "model.fern";
pub const REPORT_FILE_NAME: &str = "training_report.json";
pub const CORRESPONDENCE_CSV_HEADER: &str = "model_x,model_y,test_x,test_y,log_score,is_inlier";
pub const NO_MODEL: &str = "no-model";

#[derive(Debug)]
pub struct TrainOutput {
    pub model_path: PathBuf,
    pub report_path: PathBuf,
    pub model: TrainedModel,
    pub report: TrainingReport,
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainOutput, CliError> {
    let image = load_pgm(&config.model_image)?;
    let model = train_model(&image, &config.training)?;
    let report = training_report(&model);
    fs::create_dir_all(&config.out_dir)?;
    let model_path = config.out_dir.join(MODEL_FILE_NAME);
    let report_path = config.out_dir.join(REPORT_FILE_NAME);
    save_model(&model, &model_path)?;
    fs::write(&report_path, serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(TrainOutput {
        model_path,
        report_path,
        model,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct MatchOptions {
    pub min_log_score: f64,
    pub detector: DetectorParams,
    pub ransac: RansacParams,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            min_log_score: f64::NEG_INFINITY,
            detector: DetectorParams::default(),
            ransac: RansacParams::default(),
        }
    }
}

#[derive(Debug)]
pub struct MatchOutput {
    pub correspondences: Vec<Correspondence>,
    pub fit: Option<RansacFit>,
    pub annotated: GrayImage,
    pub csv: String,
    pub homography_record: String,
}

/// Inliers become 3x3 white squares, other correspondences single white pixels.
pub fn annotate(image: &GrayImage, correspondences: &[Correspondence], inliers: &[bool]) -> GrayImage {
    let mut out = image.clone();
    let (w, h) = (image.width() as i64, image.height() as i64);
    for (c, &is_inlier) in correspondences.iter().zip(inliers) {
        let (x, y) = (c.test_point.0.round() as i64, c.test_point.1.round() as i64);
        let r = i64::from(is_inlier);
        for yy in y - r..=y + r {
            for xx in x - r..=x + r {
                if (0..w).contains(&xx) && (0..h).contains(&yy) {
                    out.set(xx as usize, yy as usize, 255);
                }
            }
        }
    }
    out
}

pub fn correspondence_csv(correspondences: &[Correspondence], inliers: &[bool]) -> String {
    let mut s = String::from(CORRESPONDENCE_CSV_HEADER);
    s.push('\n');
    for (c, &inl) in correspondences.iter().zip(inliers) {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{}",
            c.model_point.0,
            c.model_point.1,
            c.test_point.0,
            c.test_point.1,
            c.log_score,
            u8::from(inl)
        );
    }
    s
}

pub fn homography_record(fit: Option<&RansacFit>) -> String {
    match fit {
        Some(f) => {
            let entries: Vec<String> = f.homography.entries().iter().map(|v| format!("{v:.12e}")).collect();
            entries.join(" ") + "\n"
        }
        None => format!("{NO_MODEL}\n"),
    }
}

pub fn match_model(model: &TrainedModel, test: &GrayImage, opts: &MatchOptions) -> Result<MatchOutput, CliError> {
    let correspondences = collect_correspondences(model, test, &opts.detector, opts.min_log_score)?;
    let fit = ransac_homography(&correspondences, &opts.ransac);
    let mut inliers = vec![false; correspondences.len()];
    if let Some(f) = &fit {
        for &i in &f.inliers {
            inliers[i] = true;
        }
    }
    Ok(MatchOutput {
        annotated: annotate(test, &correspondences, &inliers),
        csv: correspondence_csv(&correspondences, &inliers),
        homography_record: homography_record(fit.as_ref()),
        correspondences,
        fit,
    })
}

pub fn cmd_match(model_path: &Path, image_path: &Path, out_dir: &Path, opts: &MatchOptions) -> Result<MatchOutput, CliError> {
    let model = load_model(model_path)?;
    let test = load_pgm(image_path)?;
    let out = match_model(&model, &test, opts)?;
    fs::create_dir_all(out_dir)?;
    save_pgm(&out.annotated, out_dir.join("matches.pgm"))?;
    fs::write(out_dir.join("correspondences.csv"), &out.csv)?;
    fs::write(out_dir.join("homography.txt"), &out.homography_record)?;
    Ok(out)
}

#[derive(Debug)]
pub struct EvalOutput {
    pub outcome: EvalOutcome,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Loads `model_file` when configured, otherwise trains from the config.
pub fn model_for_eval(config: &RunConfig, image: &GrayImage) -> Result<TrainedModel, CliError> {
    let mut model = match &config.model_file {
        Some(path) => load_model(path)?,
        None => train_model(image, &config.training)?,
    };
    if model.reference_patches.is_none() {
        model.attach_reference_patches(image)?;
    }
    Ok(model)
}

pub fn eval_params(config: &RunConfig, num_test_warps: usize, split_seed: u64) -> EvalParams {
    EvalParams {
        ranges: config.training.ranges,
        num_test_warps,
        split_seed,
        detector: config.training.effective_detector(),
        ransac: config.ransac,
        min_log_score: config.min_log_score,
        recognition_radius: config.recognition_radius,
    }
}

pub fn cmd_eval(
    config: &RunConfig,
    num_test_warps: usize,
    split_seed: u64,
    out_dir: &Path,
) -> Result<EvalOutput, CliError> {
    let image = load_pgm(&config.model_image)?;
    let model = model_for_eval(config, &image)?;
    let outcome = evaluate(&model, &image, &eval_params(config, num_test_warps, split_seed))?;
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("eval.csv");
    let summary_path = out_dir.join("summary.json");
    fs::write(&csv_path, outcome.csv())?;
    fs::write(&summary_path, serde_json::to_string_pretty(&outcome.summary)? + "\n")?;
    Ok(EvalOutput {
        outcome,
        csv_path,
        summary_path,
    })
}

/// Header fields followed by the training report, as text.
pub fn cmd_inspect(model_path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(model_path)?;
    let header = decode_header(&bytes)?;
    let model = load_model(model_path)?;
    let report = training_report(&model);
    let mut s = String::new();
    let _ = writeln!(s, "magic = FERN");
    let _ = writeln!(s, "version = {}", header.version);
    let _ = writeln!(s, "patch_side = {}", header.patch_side);
    let _ = writeln!(s, "m = {}", header.m);
    let _ = writeln!(s, "s = {}", header.s);
    let _ = writeln!(s, "h = {}", header.h);
    let _ = writeln!(s, "n_r = {}", header.n_r);
    let _ = writeln!(s, "ensemble_seed = {}", header.ensemble_seed);
    let _ = writeln!(s, "file_bytes = {}", bytes.len());
    s.push_str(&serde_json::to_string_pretty(&report)?);
    s.push('\n');
    Ok(s)
}
