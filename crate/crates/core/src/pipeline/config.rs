//! Run configuration: every knob of the end-to-end system, with a versioned
//! key-value text form for config files and checkpoints.

use crate::network::Backbone;
use crate::scoring::FusionMethod;
use crate::{CoreError, Result};
use std::fmt;
use std::str::FromStr;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Mixture size for the colorization head: fixed, or chosen by the k-means
/// elbow on the training normals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KChoice {
    Auto { k_max: usize },
    Fixed(usize),
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KChoice::Auto { k_max } => write!(f, "auto:{k_max}"),
            KChoice::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for KChoice {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(KChoice::Auto { k_max: 5 });
        }
        if let Some(rest) = s.strip_prefix("auto:") {
            let k_max: usize = rest
                .parse()
                .map_err(|_| CoreError::Config(format!("bad k_max in {s:?}")))?;
            return Ok(KChoice::Auto { k_max });
        }
        let k: usize = s
            .parse()
            .map_err(|_| CoreError::Config(format!("k must be auto, auto:<max>, or an integer, got {s:?}")))?;
        Ok(KChoice::Fixed(k))
    }
}

/// Which score the puzzle heads produce. The tint score is always the
/// softmax-expected reconstruction error and the colorization score is
/// always the mixture NLL, so only the position classifier has a choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PuzzleOod {
    SoftmaxTruth,
    Mahalanobis,
}

impl PuzzleOod {
    pub fn as_str(&self) -> &'static str {
        match self {
            PuzzleOod::SoftmaxTruth => "softmax_truth",
            PuzzleOod::Mahalanobis => "mahalanobis",
        }
    }
}

impl fmt::Display for PuzzleOod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PuzzleOod {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax_truth" => Ok(PuzzleOod::SoftmaxTruth),
            "mahalanobis" => Ok(PuzzleOod::Mahalanobis),
            other => Err(CoreError::Config(format!("unknown ood method {other:?}"))),
        }
    }
}

pub fn backbone_as_str(b: Backbone) -> &'static str {
    match b {
        Backbone::Tiny => "tiny",
        Backbone::WideResnet16x4 => "wide16x4",
    }
}

pub fn backbone_from_str(s: &str) -> Result<Backbone> {
    match s {
        "tiny" => Ok(Backbone::Tiny),
        "wide16x4" => Ok(Backbone::WideResnet16x4),
        other => Err(CoreError::Config(format!("unknown backbone {other:?}"))),
    }
}

/// Full configuration of a training/scoring run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Puzzle grid: `n_w * n_h` pieces with a crop margin per cell.
    pub n_w: usize,
    pub n_h: usize,
    pub margin_fraction: f64,
    /// Number of discrete tint rotations.
    pub c: usize,
    /// Border width (pixels) given to the colorization branch.
    pub alpha: usize,
    /// Mixture components for the colorization head.
    pub k: KChoice,
    /// Fixed permutations scored per image at inference.
    pub n_sp: usize,
    pub backbone: Backbone,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub seed: u64,
    pub fusion: FusionMethod,
    pub puzzle_ood: PuzzleOod,
    /// Fraction of training normals held out for score calibration.
    pub calibration_fraction: f64,
    /// Side length images are resized to before any other processing.
    pub resize: usize,
    /// Cap on training normals (0 = use all); subsampled by seed.
    pub train_limit: usize,
    /// Weight of the attention-dispersion term in the discriminative loss.
    pub lambda_density: f64,
    /// Ablation switch: train and score with the position task alone.
    pub puzzle_only: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_w: 3,
            n_h: 3,
            margin_fraction: 0.5,
            c: 4,
            alpha: 2,
            k: KChoice::Auto { k_max: 5 },
            n_sp: 18,
            backbone: Backbone::WideResnet16x4,
            dropout: 0.3,
            batch_size: 32,
            epochs: 100,
            lr_max: 0.1,
            lr_min: 1e-4,
            momentum: 0.9,
            seed: 0,
            fusion: FusionMethod::Median,
            puzzle_ood: PuzzleOod::SoftmaxTruth,
            calibration_fraction: 0.1,
            resize: 32,
            train_limit: 0,
            lambda_density: 0.1,
            puzzle_only: false,
        }
    }
}

impl RunConfig {
    /// Small profile for fast CPU runs: shallow backbone, 9 inference
    /// permutations, 5 epochs.
    pub fn desk_scale() -> Self {
        RunConfig {
            backbone: Backbone::Tiny,
            n_sp: 9,
            epochs: 5,
            ..RunConfig::default()
        }
    }

    pub fn n(&self) -> usize {
        self.n_w * self.n_h
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CoreError::Config(msg));
        if self.n() < 2 {
            return fail(format!("grid {}x{} has fewer than 2 pieces", self.n_h, self.n_w));
        }
        if !(0.0..1.0).contains(&self.margin_fraction) {
            return fail(format!("margin_fraction {} outside [0, 1)", self.margin_fraction));
        }
        if self.c < 2 {
            return fail(format!("c = {} tint rotations cannot be classified", self.c));
        }
        if self.alpha == 0 {
            return fail("alpha must be at least 1 pixel".into());
        }
        match self.k {
            KChoice::Fixed(0) => return fail("k must be at least 1".into()),
            KChoice::Auto { k_max: 0 } => return fail("k_max must be at least 1".into()),
            _ => {}
        }
        if self.n_sp == 0 {
            return fail("n_sp must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be positive".into());
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return fail(format!("need 0 < lr_min <= lr_max, got {} / {}", self.lr_min, self.lr_max));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction <= 0.5) {
            return fail(format!(
                "calibration_fraction {} outside (0, 0.5]",
                self.calibration_fraction
            ));
        }
        if self.resize < 8 {
            return fail(format!("resize {} below the 8-pixel minimum", self.resize));
        }
        if 2 * self.alpha >= self.resize {
            return fail(format!(
                "border 2*{} leaves no interior in a {}px image",
                self.alpha, self.resize
            ));
        }
        if !(self.lambda_density >= 0.0 && self.lambda_density.is_finite()) {
            return fail(format!("lambda_density {} must be finite and >= 0", self.lambda_density));
        }
        Ok(())
    }

    /// Versioned key-value text form; [`RunConfig::parse`] inverts it.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push(' ');
            out.push_str(&v);
            out.push('\n');
        };
        kv("config_schema", CONFIG_SCHEMA_VERSION.to_string());
        kv("n_w", self.n_w.to_string());
        kv("n_h", self.n_h.to_string());
        kv("margin_fraction", self.margin_fraction.to_string());
        kv("c", self.c.to_string());
        kv("alpha", self.alpha.to_string());
        kv("k", self.k.to_string());
        kv("n_sp", self.n_sp.to_string());
        kv("backbone", backbone_as_str(self.backbone).to_string());
        kv("dropout", self.dropout.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("lr_max", self.lr_max.to_string());
        kv("lr_min", self.lr_min.to_string());
        kv("momentum", self.momentum.to_string());
        kv("seed", self.seed.to_string());
        kv("fusion", self.fusion.to_string());
        kv("puzzle_ood", self.puzzle_ood.to_string());
        kv("calibration_fraction", self.calibration_fraction.to_string());
        kv("resize", self.resize.to_string());
        kv("train_limit", self.train_limit.to_string());
        kv("lambda_density", self.lambda_density.to_string());
        kv("puzzle_only", self.puzzle_only.to_string());
        out
    }

    /// Parse the key-value text form. Every field must appear exactly once;
    /// unknown keys are rejected so typos cannot silently fall back to
    /// defaults. Blank lines and `#` comments are allowed.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut seen: Vec<(String, String)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| CoreError::Config(format!("line {}: expected `key value`", lineno + 1)))?;
            let key = key.trim();
            if seen.iter().any(|(k, _)| k == key) {
                return Err(CoreError::Config(format!("duplicate key {key:?}")));
            }
            seen.push((key.to_string(), value.trim().to_string()));
        }
        let mut take = |key: &str| -> Result<String> {
            let pos = seen
                .iter()
                .position(|(k, _)| k == key)
                .ok_or_else(|| CoreError::Config(format!("missing key {key:?}")))?;
            Ok(seen.remove(pos).1)
        };
        fn num<T: FromStr>(key: &str, raw: &str) -> Result<T> {
            raw.parse()
                .map_err(|_| CoreError::Config(format!("bad value for {key}: {raw:?}")))
        }
        let version: u32 = num("config_schema", &take("config_schema")?)?;
        if version != CONFIG_SCHEMA_VERSION {
            return Err(CoreError::Config(format!(
                "unsupported config schema {version} (expected {CONFIG_SCHEMA_VERSION})"
            )));
        }
        let config = RunConfig {
            n_w: num("n_w", &take("n_w")?)?,
            n_h: num("n_h", &take("n_h")?)?,
            margin_fraction: num("margin_fraction", &take("margin_fraction")?)?,
            c: num("c", &take("c")?)?,
            alpha: num("alpha", &take("alpha")?)?,
            k: take("k")?.parse()?,
            n_sp: num("n_sp", &take("n_sp")?)?,
            backbone: backbone_from_str(&take("backbone")?)?,
            dropout: num("dropout", &take("dropout")?)?,
            batch_size: num("batch_size", &take("batch_size")?)?,
            epochs: num("epochs", &take("epochs")?)?,
            lr_max: num("lr_max", &take("lr_max")?)?,
            lr_min: num("lr_min", &take("lr_min")?)?,
            momentum: num("momentum", &take("momentum")?)?,
            seed: num("seed", &take("seed")?)?,
            fusion: take("fusion")?.parse()?,
            puzzle_ood: take("puzzle_ood")?.parse()?,
            calibration_fraction: num("calibration_fraction", &take("calibration_fraction")?)?,
            resize: num("resize", &take("resize")?)?,
            train_limit: num("train_limit", &take("train_limit")?)?,
            lambda_density: num("lambda_density", &take("lambda_density")?)?,
            puzzle_only: num("puzzle_only", &take("puzzle_only")?)?,
        };
        if let Some((key, _)) = seen.first() {
            return Err(CoreError::Config(format!("unknown key {key:?}")));
        }
        config.validate()?;
        Ok(config)
    }

    /// FNV-1a hash of the serialized text; identifies the configuration in
    /// reports.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.serialize().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_documented_values() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.n_w, c.n_h, c.c, c.alpha, c.n_sp), (3, 3, 4, 2, 18));
        assert_eq!(c.margin_fraction, 0.5);
        assert_eq!(c.dropout, 0.3);
        assert_eq!(c.batch_size, 32);
        assert_eq!(c.fusion, FusionMethod::Median);
        assert_eq!(c.puzzle_ood, PuzzleOod::SoftmaxTruth);
        let d = RunConfig::desk_scale();
        d.validate().unwrap();
        assert_eq!((d.n_sp, d.epochs, d.backbone), (9, 5, Backbone::Tiny));
    }

    #[test]
    fn serialize_parse_is_identity_on_all_fields() {
        let mut c = RunConfig::desk_scale();
        c.margin_fraction = 0.25;
        c.k = KChoice::Fixed(3);
        c.lr_min = 3.5e-5;
        c.lr_max = 0.07;
        c.seed = 12345678901234567;
        c.fusion = FusionMethod::P25;
        c.puzzle_ood = PuzzleOod::Mahalanobis;
        c.train_limit = 777;
        c.puzzle_only = true;
        let parsed = RunConfig::parse(&c.serialize()).unwrap();
        assert_eq!(parsed, c);
        let auto = RunConfig::default();
        assert_eq!(RunConfig::parse(&auto.serialize()).unwrap(), auto);
    }

    #[test]
    fn parse_accepts_comments_and_rejects_malformed_input() {
        let base = RunConfig::default().serialize();
        let with_comment = format!("# run profile\n\n{base}");
        assert!(RunConfig::parse(&with_comment).is_ok());

        let unknown = format!("{base}extra_key 1\n");
        assert!(matches!(RunConfig::parse(&unknown), Err(CoreError::Config(_))));

        let dup = format!("{base}seed 9\n");
        assert!(matches!(RunConfig::parse(&dup), Err(CoreError::Config(_))));

        let missing = base.replace("momentum 0.9\n", "");
        assert!(matches!(RunConfig::parse(&missing), Err(CoreError::Config(_))));

        let old = base.replace("config_schema 1", "config_schema 99");
        assert!(matches!(RunConfig::parse(&old), Err(CoreError::Config(_))));
    }

    #[test]
    fn validate_rejects_out_of_range_fields() {
        let bad = |f: fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            assert!(c.validate().is_err(), "expected rejection");
        };
        bad(|c| c.n_w = 0);
        bad(|c| {
            c.n_w = 1;
            c.n_h = 1;
        });
        bad(|c| c.margin_fraction = 1.0);
        bad(|c| c.c = 1);
        bad(|c| c.alpha = 0);
        bad(|c| c.k = KChoice::Fixed(0));
        bad(|c| c.dropout = 1.0);
        bad(|c| c.lr_min = 0.0);
        bad(|c| c.lr_min = 0.2); // above lr_max
        bad(|c| c.momentum = 1.0);
        bad(|c| c.calibration_fraction = 0.6);
        bad(|c| c.resize = 4);
        bad(|c| c.alpha = 16); // border swallows the 32px interior
        bad(|c| c.lambda_density = f64::NAN);
    }

    #[test]
    fn hash_is_stable_and_field_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        let mut c = RunConfig::default();
        c.seed = 1;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
