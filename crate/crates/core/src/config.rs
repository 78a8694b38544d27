//! Flat `key = value` configuration shared by every command.
//!
//! Lines are `section.key = value`; `#` starts a comment. Every key is
//! optional. A key may also be set through the environment as
//! `CARDIOKIT_<SECTION>_<KEY>` (upper case, dots replaced by underscores),
//! which wins over the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentRanges;
use crate::diagnosis::{EnsembleConfig, VoteMode};
use crate::error::{Error, Result};
use crate::features::DEFAULT_MYO_DENSITY;
use crate::loss::LossConfig;
use crate::postprocess::PostprocessOptions;
use crate::roi::RoiConfig;

pub const ENV_PREFIX: &str = "CARDIOKIT_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub roi: RoiConfig,
    pub loss: LossConfig,
    pub weight_dilate_iters: usize,
    pub postproc: PostprocessOptions,
    pub myo_density: f64,
    pub ensemble: EnsembleConfig,
    pub augment: AugmentRanges,
    pub model: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            roi: RoiConfig::default(),
            loss: LossConfig::default(),
            weight_dilate_iters: 1,
            postproc: PostprocessOptions::default(),
            myo_density: DEFAULT_MYO_DENSITY,
            ensemble: EnsembleConfig::default(),
            augment: AugmentRanges::default(),
            model: None,
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("roi.radius_min", "smallest Hough radius in pixels"),
    ("roi.radius_max", "largest Hough radius in pixels"),
    ("roi.top_p", "circles kept per slice"),
    ("roi.vote_sigma", "Gaussian width of centre votes in pixels"),
    (
        "roi.h1_noise_frac",
        "H1 magnitudes below this fraction of the peak are zeroed",
    ),
    ("roi.canny_sigma", "Canny smoothing sigma"),
    ("roi.canny_low", "Canny low hysteresis threshold"),
    ("roi.canny_high", "Canny high hysteresis threshold"),
    ("roi.patch_size", "patch size as WxH"),
    ("loss.lambda", "cross-entropy weight"),
    ("loss.gamma", "Dice weight"),
    ("loss.eta", "L2 weight decay"),
    ("loss.epsilon", "Dice smoothing"),
    ("loss.dice_two_factor", "use 2*sum(pg) in the Dice numerator"),
    ("loss.dilate_iters", "contour dilation iterations for the weight map"),
    ("postproc.keep_3d", "keep the largest 3D component per class"),
    ("postproc.keep_2d", "keep the largest 2D component per class and slice"),
    ("postproc.fill", "fill holes per slice"),
    ("features.myo_density", "myocardial density in g/ml"),
    ("clf.seed", "classifier seed"),
    ("clf.folds", "cross-validation folds"),
    ("clf.threshold", "CV accuracy a classifier must exceed to be selected"),
    ("clf.vote_mode", "all or selected"),
    ("clf.rf_trees", "random forest size"),
    ("clf.baselines", "also cross-validate LR and KNN"),
    ("clf.model", "model file used by the pipeline command"),
    ("augment.flips", "sample random horizontal and vertical flips"),
    ("augment.max_elastic_mm", "bound on elastic control-point displacement"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

/// Parses `WxH` (or `W,H`).
pub fn parse_size(value: &str) -> Result<(usize, usize)> {
    let v = value.trim();
    let (a, b) = v
        .split_once(['x', 'X', ','])
        .ok_or_else(|| Error::Config(format!("expected WxH, got {v:?}")))?;
    Ok((parse("size", a)?, parse("size", b)?))
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_ascii_uppercase())
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.trim();
        match k {
            "roi.radius_min" => self.roi.radius_min = parse(k, value)?,
            "roi.radius_max" => self.roi.radius_max = parse(k, value)?,
            "roi.top_p" => self.roi.top_p = parse(k, value)?,
            "roi.vote_sigma" => self.roi.vote_sigma = parse(k, value)?,
            "roi.h1_noise_frac" => self.roi.h1_noise_frac = parse(k, value)?,
            "roi.canny_sigma" => self.roi.canny_sigma = parse(k, value)?,
            "roi.canny_low" => self.roi.canny_low = parse(k, value)?,
            "roi.canny_high" => self.roi.canny_high = parse(k, value)?,
            "roi.patch_size" => self.roi.patch_size = parse_size(value)?,
            "loss.lambda" => self.loss.lambda = parse(k, value)?,
            "loss.gamma" => self.loss.gamma = parse(k, value)?,
            "loss.eta" => self.loss.eta = parse(k, value)?,
            "loss.epsilon" => self.loss.epsilon = parse(k, value)?,
            "loss.dice_two_factor" => self.loss.dice_two_factor = parse_bool(k, value)?,
            "loss.dilate_iters" => self.weight_dilate_iters = parse(k, value)?,
            "postproc.keep_3d" => self.postproc.keep_3d = parse_bool(k, value)?,
            "postproc.keep_2d" => self.postproc.keep_2d = parse_bool(k, value)?,
            "postproc.fill" => self.postproc.fill = parse_bool(k, value)?,
            "features.myo_density" => self.myo_density = parse(k, value)?,
            "clf.seed" => self.ensemble.params.seed = parse(k, value)?,
            "clf.folds" => self.ensemble.folds = parse(k, value)?,
            "clf.threshold" => self.ensemble.threshold = parse(k, value)?,
            "clf.vote_mode" => {
                self.ensemble.mode = VoteMode::from_str(value).map_err(|e| Error::Config(format!("{k}: {e}")))?
            }
            "clf.rf_trees" => self.ensemble.params.rf_trees = parse(k, value)?,
            "clf.baselines" => self.ensemble.baselines = parse_bool(k, value)?,
            "clf.model" => self.model = Some(PathBuf::from(value.trim())),
            "augment.flips" => self.augment.flips = parse_bool(k, value)?,
            "augment.max_elastic_mm" => self.augment.max_elastic_mm = parse(k, value)?,
            _ => return Err(Error::Config(format!("unknown key {k:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(text)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Applies `CARDIOKIT_*` overrides from the given variables.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let vars: Vec<(K, V)> = vars.into_iter().collect();
        for (key, _) in KEYS {
            let name = env_name(key);
            if let Some((_, v)) = vars.iter().find(|(k, _)| k.as_ref() == name) {
                self.set(key, v.as_ref())
                    .map_err(|e| Error::Config(format!("{name}: {e}")))?;
            }
        }
        Ok(())
    }

    /// Defaults, then the optional file, then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply_str(&text)?;
        }
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.roi.validate().map_err(wrap)?;
        self.loss.validate().map_err(wrap)?;
        if !(self.myo_density > 0.0) {
            return Err(Error::Config("features.myo_density must be > 0".into()));
        }
        if self.ensemble.folds < 2 {
            return Err(Error::Config("clf.folds must be at least 2".into()));
        }
        if self.ensemble.params.rf_trees == 0 {
            return Err(Error::Config("clf.rf_trees must be at least 1".into()));
        }
        if !(self.augment.max_elastic_mm >= 0.0) {
            return Err(Error::Config("augment.max_elastic_mm must be >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(
            PipelineConfig::parse_str("# nothing\n\n").unwrap(),
            PipelineConfig::default()
        );
    }

    #[test]
    fn keys_are_applied() {
        let cfg = PipelineConfig::parse_str(
            "roi.patch_size = 96x64\nclf.seed = 7 # trailing comment\npostproc.fill = false\nclf.vote_mode = selected\n",
        )
        .unwrap();
        assert_eq!(cfg.roi.patch_size, (96, 64));
        assert_eq!(cfg.ensemble.params.seed, 7);
        assert!(!cfg.postproc.fill);
        assert_eq!(cfg.ensemble.mode, VoteMode::Selected);
    }

    #[test]
    fn unknown_and_malformed_keys_are_rejected() {
        let e = PipelineConfig::parse_str("roi.radius = 3").unwrap_err();
        assert!(e.to_string().contains("unknown key"), "{e}");
        assert!(e.to_string().contains("line 1"), "{e}");
        assert!(PipelineConfig::parse_str("roi.top_p 3").is_err());
        assert!(PipelineConfig::parse_str("roi.top_p = many").is_err());
        assert!(PipelineConfig::parse_str("postproc.fill = maybe").is_err());
    }

    #[test]
    fn every_listed_key_is_settable() {
        for (key, _) in KEYS {
            let mut cfg = PipelineConfig::default();
            let value = match *key {
                "roi.patch_size" => "64x64",
                "clf.vote_mode" => "all",
                "clf.model" => "m.bin",
                k if k.starts_with("postproc.")
                    || k.ends_with("flips")
                    || k.ends_with("factor")
                    || k.ends_with("baselines") =>
                {
                    "true"
                }
                _ => "3",
            };
            cfg.set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn environment_overrides_file() {
        let mut cfg = PipelineConfig::parse_str("clf.seed = 1").unwrap();
        cfg.apply_env([
            ("CARDIOKIT_CLF_SEED", "9"),
            ("CARDIOKIT_UNRELATED", "x"),
            ("PATH", "/bin"),
        ])
        .unwrap();
        assert_eq!(cfg.ensemble.params.seed, 9);
        assert_eq!(env_name("roi.patch_size"), "CARDIOKIT_ROI_PATCH_SIZE");
        assert!(cfg.apply_env([("CARDIOKIT_ROI_TOP_P", "x")]).is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let cfg = PipelineConfig::parse_str("roi.radius_min = 50").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(PipelineConfig::parse_str("clf.folds = 1").unwrap().validate().is_err());
    }
}
