use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use fernmatch_cli::commands::{match_model, CORRESPONDENCE_CSV_HEADER, NO_MODEL};
use fernmatch_cli::eval::{evaluate_warps, EVAL_CSV_HEADER};
use fernmatch_cli::{cmd_eval, cmd_inspect, cmd_match, cmd_train, commands, MatchOptions, RunConfig};
use fernmatch_core::detect::detect_keypoints;
use fernmatch_core::image::{extract_patch, save_pgm, GrayImage};
use fernmatch_core::synth::textured_image;
use fernmatch_core::train::patch_source;
use fernmatch_core::WarpParams;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_fernmatch");

fn write_image(dir: &Path, name: &str, img: &GrayImage) -> PathBuf {
    let p = dir.join(name);
    save_pgm(img, &p).unwrap();
    p
}

fn small_config(dir: &Path, side: usize, classes: usize, warps: usize) -> RunConfig {
    let img = write_image(dir, "model.pgm", &textured_image(side, side, 5));
    let mut cfg = RunConfig::with_defaults(img, dir.join("out"));
    cfg.training.num_classes = classes;
    cfg.training.num_warps = warps;
    cfg.training.num_ferns = 15;
    cfg.training.bits_per_fern = 8;
    cfg
}

#[test]
fn train_smoke_on_tiny_image() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 64, 5, 10);
    let out = cmd_train(&cfg).unwrap();
    assert_eq!(out.model.num_classes(), 5);
    assert!(out.model_path.is_file());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out.report_path).unwrap()).unwrap();
    assert_eq!(report["classes"].as_array().unwrap().len(), 5);

    let text = cmd_inspect(&out.model_path).unwrap();
    assert!(text.starts_with("magic = FERN\nversion = 1\n"));
    assert!(text.contains("h = 5\n"));
}

#[test]
fn training_twice_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 96, 10, 30);
    let a = fs::read(cmd_train(&cfg).unwrap().model_path).unwrap();
    let b = fs::read(cmd_train(&cfg).unwrap().model_path).unwrap();
    assert_eq!(a, b);
}

#[test]
fn self_match_is_identity() {
    let dir = TempDir::new().unwrap();
    // h close to the detection budget, so the true matches are a sizable
    // fraction of all correspondences.
    let mut cfg = small_config(dir.path(), 256, 100, 200);
    cfg.training.num_ferns = 30;
    cfg.training.bits_per_fern = 11;
    let trained = cmd_train(&cfg).unwrap();
    let opts = MatchOptions::default();
    let out_dir = dir.path().join("match");
    let out = cmd_match(&trained.model_path, &cfg.model_image, &out_dir, &opts).unwrap();
    let fit = out.fit.as_ref().expect("a homography");
    assert!(fit.inliers.len() as f64 >= 0.7 * 100.0, "{}", fit.inliers.len());
    let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    for (a, b) in fit.homography.entries().iter().zip(id) {
        assert!((a - b).abs() < 1e-3, "{:?}", fit.homography.entries());
    }
    let csv = fs::read_to_string(out_dir.join("correspondences.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(CORRESPONDENCE_CSV_HEADER));
    assert_eq!(csv.lines().count(), out.correspondences.len() + 1);
    let record = fs::read_to_string(out_dir.join("homography.txt")).unwrap();
    assert_eq!(record.split_whitespace().count(), 9);
    assert!(out_dir.join("matches.pgm").is_file());
}

#[test]
fn blank_image_gives_no_model() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 96, 8, 20);
    let trained = cmd_train(&cfg).unwrap();
    let blank = write_image(dir.path(), "blank.pgm", &GrayImage::filled(96, 96, 128).unwrap());
    let out_dir = dir.path().join("blank");
    cmd_match(&trained.model_path, &blank, &out_dir, &MatchOptions::default()).unwrap();
    assert_eq!(
        fs::read_to_string(out_dir.join("correspondences.csv")).unwrap(),
        format!("{CORRESPONDENCE_CSV_HEADER}\n")
    );
    assert_eq!(fs::read_to_string(out_dir.join("homography.txt")).unwrap().trim(), NO_MODEL);
}

#[test]
fn golden_headers() {
    assert_eq!(CORRESPONDENCE_CSV_HEADER, "model_x,model_y,test_x,test_y,log_score,is_inlier");
    assert_eq!(
        EVAL_CSV_HEADER,
        "frame,method,num_keypoints,num_correspondences,num_inliers,num_visible,num_detected,num_recognized,recognition_rate,classify_us"
    );
}

#[test]
fn eval_with_zero_warps_is_header_only() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 96, 8, 20);
    let out = cmd_eval(&cfg, 0, 1, &dir.path().join("eval")).unwrap();
    assert_eq!(fs::read_to_string(&out.csv_path).unwrap(), format!("{EVAL_CSV_HEADER}\n"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out.summary_path).unwrap()).unwrap();
    assert_eq!(summary["frames"], 0);
}

#[test]
fn eval_counts_are_nested() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 160, 20, 100);
    let out = cmd_eval(&cfg, 6, 9, &dir.path().join("eval")).unwrap();
    assert_eq!(out.outcome.records.len(), 12);
    for r in &out.outcome.records {
        assert!(r.num_recognized <= r.num_detected);
        assert!(r.num_detected <= r.num_visible);
        assert!(r.num_visible <= 20);
        assert!(r.num_inliers <= r.num_correspondences);
        assert!(r.num_correspondences <= r.num_keypoints);
    }
}

#[test]
fn identity_warps_match_direct_self_classification() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(dir.path(), 160, 20, 100);
    let image = fernmatch_core::load_pgm(&cfg.model_image).unwrap();
    let model = commands::model_for_eval(&cfg, &image).unwrap();
    let params = commands::eval_params(&cfg, 0, 0);
    let outcome = evaluate_warps(&model, &image, &[WarpParams::identity(); 2], &params).unwrap();

    // Classify each class's own keypoint directly when it is re-detected.
    let det = fernmatch_core::geometry::detector_for_patches(&params.detector, model.patch_side());
    let keypoints = detect_keypoints(&image, &det).unwrap();
    let source = patch_source(&image).unwrap();
    let mut detected = 0;
    let mut recognized = 0;
    for c in &model.classes {
        let p = (c.model_point.0 as i64, c.model_point.1 as i64);
        let nearest = keypoints
            .iter()
            .filter(|k| ((k.x - p.0).pow(2) + (k.y - p.1).pow(2)) as f64 <= 9.0)
            .min_by_key(|k| (k.x - p.0).pow(2) + (k.y - p.1).pow(2));
        if let Some(k) = nearest {
            detected += 1;
            let patch = extract_patch(&source, (k.x, k.y), model.patch_side()).unwrap();
            recognized += usize::from(model.classify(&patch).unwrap().class_id == c.class_id);
        }
    }
    let ferns: Vec<_> = outcome
        .records
        .iter()
        .filter(|r| r.method == fernmatch_cli::eval::Method::Ferns)
        .collect();
    assert_eq!(ferns.len(), 2);
    for r in ferns {
        assert_eq!(r.num_visible, 20);
        assert_eq!(r.num_detected, detected);
        assert_eq!(r.num_recognized, recognized);
    }

    let direct = match_model(
        &model,
        &image,
        &MatchOptions {
            detector: det,
            ..MatchOptions::default()
        },
    )
    .unwrap();
    assert_eq!(direct.correspondences.len(), keypoints.len());
}

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(BIN).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn binary_exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();

    assert_eq!(run(&["bogus"]).0, 1);
    assert_eq!(run(&["train"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);

    // Missing config file.
    let (code, _, err) = run(&["train", "--config", d.join("none.cfg").to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error:"));

    // Not a model file.
    let junk = d.join("junk.fern");
    fs::write(&junk, b"not a model").unwrap();
    assert_eq!(run(&["inspect", "--model", junk.to_str().unwrap()]).0, 2);

    // More classes requested than the image has keypoints.
    write_image(d, "flat.pgm", &GrayImage::filled(64, 64, 90).unwrap());
    fs::write(d.join("flat.cfg"), "model_image = flat.pgm\nout_dir = out\nclasses = 10\nnum_warps = 5\n").unwrap();
    let (code, _, err) = run(&["train", "--config", d.join("flat.cfg").to_str().unwrap()]);
    assert_ne!(code, 0);
    assert!(err.contains("keypoints"), "{err}");

    // Round trip through the binary.
    write_image(d, "tex.pgm", &textured_image(96, 96, 3));
    fs::write(
        d.join("tex.cfg"),
        "model_image = tex.pgm\nout_dir = trained\nclasses = 8\nnum_warps = 20\nferns = 10\nbits = 8\n",
    )
    .unwrap();
    let (code, stdout, _) = run(&["train", "--config", d.join("tex.cfg").to_str().unwrap()]);
    assert_eq!(code, 0, "{stdout}");
    let model = d.join("trained").join(commands::MODEL_FILE_NAME);
    let (code, stdout, _) = run(&[
        "match",
        "--model",
        model.to_str().unwrap(),
        "--image",
        d.join("tex.pgm").to_str().unwrap(),
        "--out",
        d.join("m").to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("correspondences"));
    let (code, stdout, _) = run(&["inspect", "--model", model.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(stdout.contains("h = 8"));
}

#[test]
fn bundled_image_matches_generator() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/texture512.pgm");
    let bundled = fs::read(path).unwrap();
    assert_eq!(fernmatch_core::image::encode_pgm(&textured_image(512, 512, 2024)), bundled);
}

#[test]
fn bundled_config_is_the_default_desk_run() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/desk.cfg");
    let cfg = RunConfig::load(&path).unwrap();
    let defaults = RunConfig::with_defaults(cfg.model_image.clone(), cfg.out_dir.clone());
    assert_eq!(cfg.training, defaults.training);
    assert!(cfg.model_image.ends_with("texture512.pgm"));
}
