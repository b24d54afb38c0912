//! Flat `key = value` run configuration.
//!
//! One key per line; `#` starts a comment; blank lines are ignored. Ranges
//! are written `lo, hi`. Relative paths resolve against the directory of the
//! config file. Every key is optional except `model_image`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use fernmatch_core::detect::DetectorParams;
use fernmatch_core::geometry::RansacParams;
use fernmatch_core::train::{Seeds, TrainingConfig};
use fernmatch_core::warp::{Interval, WarpRanges};

/// Distance within which a detected keypoint counts as the ground-truth one.
pub const DEFAULT_RECOGNITION_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model_image: PathBuf,
    pub out_dir: PathBuf,
    /// When set, `eval` loads this model instead of training one.
    pub model_file: Option<PathBuf>,
    pub training: TrainingConfig,
    pub ransac: RansacParams,
    pub min_log_score: f64,
    pub recognition_radius: f64,
    pub eval_seed: u64,
}

impl RunConfig {
    pub fn with_defaults(model_image: PathBuf, out_dir: PathBuf) -> Self {
        Self {
            model_image,
            out_dir,
            model_file: None,
            training: TrainingConfig::default(),
            ransac: RansacParams::default(),
            min_log_score: f64::NEG_INFINITY,
            recognition_radius: DEFAULT_RECOGNITION_RADIUS,
            eval_seed: 4,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| err("<file>", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(&format!("line {}", lineno + 1), "expected `key = value`"))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(err(&key, "given more than once"));
            }
        }
        let mut fields = Fields { entries };

        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base_dir.join(p)
            }
        };
        let model_image = resolve(
            fields
                .take("model_image")
                .ok_or_else(|| err("model_image", "required"))?,
        );
        if !model_image.is_file() {
            return Err(err(
                "model_image",
                format!("{} does not exist", model_image.display()),
            ));
        }
        let out_dir = resolve(fields.take("out_dir").unwrap_or_else(|| "out".into()));
        let model_file = fields.take("model_file").map(resolve);
        if let Some(mf) = &model_file {
            if !mf.is_file() {
                return Err(err("model_file", format!("{} does not exist", mf.display())));
            }
        }

        let mut cfg = Self::with_defaults(model_image, out_dir);
        cfg.model_file = model_file;
        let t = &mut cfg.training;
        fields.usize("num_warps", &mut t.num_warps)?;
        fields.usize("classes", &mut t.num_classes)?;
        fields.usize("ferns", &mut t.num_ferns)?;
        fields.usize("bits", &mut t.bits_per_fern)?;
        fields.f64("regularizer", &mut t.regularizer)?;
        fields.usize("patch_side", &mut t.patch_side)?;

        let d: &mut DetectorParams = &mut t.detector;
        fields.usize("detector.max_count", &mut d.max_count)?;
        fields.f64("detector.min_score", &mut d.min_score)?;
        fields.usize("detector.nms_radius", &mut d.nms_radius)?;
        fields.usize("detector.border", &mut d.border)?;

        let r: &mut WarpRanges = &mut t.ranges;
        fields.interval("warp.theta", &mut r.theta)?;
        fields.interval("warp.phi", &mut r.phi)?;
        fields.interval("warp.lambda1", &mut r.lambda1)?;
        fields.interval("warp.lambda2", &mut r.lambda2)?;
        fields.interval("warp.tx", &mut r.tx)?;
        fields.interval("warp.ty", &mut r.ty)?;
        fields.interval("warp.noise_sigma", &mut r.noise_sigma)?;

        let s: &mut Seeds = &mut t.seeds;
        fields.u64("seed.selection", &mut s.selection)?;
        fields.u64("seed.training", &mut s.training)?;
        fields.u64("seed.ensemble", &mut s.ensemble)?;
        fields.u64("seed.eval", &mut cfg.eval_seed)?;
        fields.u64("seed.ransac", &mut cfg.ransac.seed)?;

        fields.usize("ransac.iterations", &mut cfg.ransac.iterations)?;
        fields.f64("ransac.tolerance", &mut cfg.ransac.inlier_tolerance)?;
        fields.f64("min_log_score", &mut cfg.min_log_score)?;
        fields.f64("recognition_radius", &mut cfg.recognition_radius)?;

        if let Some(unknown) = fields.entries.keys().next() {
            return Err(err(unknown, "unknown key"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.training;
        if t.num_classes == 0 {
            return Err(err("classes", "must be at least 1"));
        }
        if t.num_ferns == 0 {
            return Err(err("ferns", "must be at least 1"));
        }
        if !(1..=16).contains(&t.bits_per_fern) {
            return Err(err("bits", "must be in 1..=16"));
        }
        if !(t.regularizer > 0.0) {
            return Err(err("regularizer", "must be positive"));
        }
        if t.patch_side < 3 || t.patch_side.is_multiple_of(2) {
            return Err(err("patch_side", "must be odd and at least 3"));
        }
        if t.detector.max_count == 0 {
            return Err(err("detector.max_count", "must be at least 1"));
        }
        if !(t.detector.min_score >= 0.0) {
            return Err(err("detector.min_score", "must be non-negative"));
        }
        t.ranges
            .validate()
            .map_err(|e| err("warp", e.to_string()))?;
        if self.ransac.iterations == 0 {
            return Err(err("ransac.iterations", "must be at least 1"));
        }
        if !(self.ransac.inlier_tolerance > 0.0) {
            return Err(err("ransac.tolerance", "must be positive"));
        }
        if !(self.recognition_radius > 0.0) {
            return Err(err("recognition_radius", "must be positive"));
        }
        Ok(())
    }
}

struct Fields {
    entries: BTreeMap<String, String>,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), ConfigError> {
        if let Some(v) = self.take(key) {
            *slot = v
                .parse()
                .map_err(|_| err(key, format!("cannot parse `{v}`")))?;
        }
        Ok(())
    }

    fn usize(&mut self, key: &str, slot: &mut usize) -> Result<(), ConfigError> {
        self.parsed(key, slot)
    }

    fn u64(&mut self, key: &str, slot: &mut u64) -> Result<(), ConfigError> {
        self.parsed(key, slot)
    }

    fn f64(&mut self, key: &str, slot: &mut f64) -> Result<(), ConfigError> {
        self.parsed(key, slot)
    }

    fn interval(&mut self, key: &str, slot: &mut Interval) -> Result<(), ConfigError> {
        let Some(v) = self.take(key) else {
            return Ok(());
        };
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| err(key, format!("cannot parse `{s}` as a number")))
        };
        *slot = match parts.as_slice() {
            [single] => Interval::point(num(single)?),
            [lo, hi] => Interval::new(num(lo)?, num(hi)?),
            _ => return Err(err(key, "expected `lo, hi`")),
        };
        if !(slot.lo <= slot.hi) {
            return Err(err(key, "interval is empty"));
        }
        Ok(())
    }
}

/// Renders a configuration in the same format `parse` accepts.
pub fn render(cfg: &RunConfig) -> String {
    let t = &cfg.training;
    let r = &t.ranges;
    let iv = |i: &Interval| format!("{}, {}", i.lo, i.hi);
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    line("model_image", cfg.model_image.display().to_string());
    line("out_dir", cfg.out_dir.display().to_string());
    if let Some(mf) = &cfg.model_file {
        line("model_file", mf.display().to_string());
    }
    line("num_warps", t.num_warps.to_string());
    line("classes", t.num_classes.to_string());
    line("ferns", t.num_ferns.to_string());
    line("bits", t.bits_per_fern.to_string());
    line("regularizer", t.regularizer.to_string());
    line("patch_side", t.patch_side.to_string());
    line("detector.max_count", t.detector.max_count.to_string());
    line("detector.min_score", t.detector.min_score.to_string());
    line("detector.nms_radius", t.detector.nms_radius.to_string());
    line("detector.border", t.detector.border.to_string());
    line("warp.theta", iv(&r.theta));
    line("warp.phi", iv(&r.phi));
    line("warp.lambda1", iv(&r.lambda1));
    line("warp.lambda2", iv(&r.lambda2));
    line("warp.tx", iv(&r.tx));
    line("warp.ty", iv(&r.ty));
    line("warp.noise_sigma", iv(&r.noise_sigma));
    line("seed.selection", t.seeds.selection.to_string());
    line("seed.training", t.seeds.training.to_string());
    line("seed.ensemble", t.seeds.ensemble.to_string());
    line("seed.eval", cfg.eval_seed.to_string());
    line("seed.ransac", cfg.ransac.seed.to_string());
    line("ransac.iterations", cfg.ransac.iterations.to_string());
    line("ransac.tolerance", cfg.ransac.inlier_tolerance.to_string());
    line("min_log_score", cfg.min_log_score.to_string());
    line("recognition_radius", cfg.recognition_radius.to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use fernmatch_core::geometry::{DEFAULT_INLIER_TOLERANCE, DEFAULT_RANSAC_ITERATIONS};

    fn dir_with_image() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("model.pgm"), b"P5\n1 1\n255\n\x00").unwrap();
        dir
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let dir = dir_with_image();
        let cfg = RunConfig::parse("model_image = model.pgm\n", dir.path()).unwrap();
        assert_eq!(cfg.model_image, dir.path().join("model.pgm"));
        assert_eq!(cfg.training, TrainingConfig::default());
        assert_eq!(cfg.ransac.iterations, DEFAULT_RANSAC_ITERATIONS);
        assert_eq!(cfg.ransac.inlier_tolerance, DEFAULT_INLIER_TOLERANCE);
    }

    #[test]
    fn comments_ranges_and_points() {
        let dir = dir_with_image();
        let text = "# header\nmodel_image = model.pgm  # trailing\n\nwarp.theta = -1.5, 1.5\nwarp.noise_sigma = 0\nclasses=7\n";
        let cfg = RunConfig::parse(text, dir.path()).unwrap();
        assert_eq!(cfg.training.ranges.theta, Interval::new(-1.5, 1.5));
        assert_eq!(cfg.training.ranges.noise_sigma, Interval::point(0.0));
        assert_eq!(cfg.training.num_classes, 7);
    }

    #[test]
    fn errors_name_the_field() {
        let dir = dir_with_image();
        let cases = [
            ("model_image = model.pgm\nferns = many\n", "ferns"),
            ("model_image = model.pgm\nbogus = 1\n", "bogus"),
            ("model_image = missing.pgm\n", "model_image"),
            ("classes = 3\n", "model_image"),
            ("model_image = model.pgm\nbits = 17\n", "bits"),
            ("model_image = model.pgm\nwarp.lambda1 = 2, 1\n", "warp.lambda1"),
            ("model_image = model.pgm\nclasses = 1\nclasses = 2\n", "classes"),
        ];
        for (text, field) in cases {
            let e = RunConfig::parse(text, dir.path()).unwrap_err();
            assert_eq!(e.field, field, "{text}");
        }
    }

    #[test]
    fn render_parses_back() {
        let dir = dir_with_image();
        let mut cfg = RunConfig::parse("model_image = model.pgm\n", dir.path()).unwrap();
        cfg.training.num_ferns = 12;
        cfg.min_log_score = -250.5;
        let again = RunConfig::parse(&render(&cfg), dir.path()).unwrap();
        assert_eq!(again, cfg);
    }
}
