//! Run configuration, read from a `key = value` file (`#` starts a comment)
//! and then overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use spnet_core::multiview::{Aggregation, ViewPreset, DEFAULT_TOP_M, FULL_VIEW_COUNT};
use spnet_core::nn::{TrainConfig, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use spnet_core::raycast::HitMode;
use spnet_core::render::DEFAULT_IMAGE_SIZE;
use spnet_core::retrieval::Metric;
use spnet_core::{ImageKind, ProjectionKind, RenderOptions};

use crate::error::{Error, IoContext, Result};

/// Which views the ensemble stage uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnsembleViews {
    /// The top-M views of the learned bank.
    Selected,
    Preset(ViewPreset),
}

impl EnsembleViews {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "selected" => Some(EnsembleViews::Selected),
            other => ViewPreset::from_name(other).map(EnsembleViews::Preset),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnsembleViews::Selected => "selected",
            EnsembleViews::Preset(p) => p.name(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub projection: ProjectionKind,
    pub image_size: usize,
    pub views: EnsembleViews,
    /// Size of the candidate bank for view selection.
    pub bank_size: usize,
    pub top_m: usize,
    pub aggregation: Aggregation,
    pub metric: Metric,
    pub seed: u64,
    pub hidden: usize,
    pub out: PathBuf,
    /// Backbone training.
    pub train: TrainConfig,
    /// Stop backbone training after an epoch whose training accuracy reaches
    /// this value.
    pub train_stop_accuracy: Option<f64>,
    pub select_epochs: usize,
    pub select_learning_rate: f64,
    pub ensemble_epochs: usize,
    pub ensemble_stop_accuracy: Option<f64>,
    /// Start the ensemble from a fresh backbone instead of the trained one.
    pub ensemble_from_scratch: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            projection: ProjectionKind::Uv,
            image_size: DEFAULT_IMAGE_SIZE,
            views: EnsembleViews::Selected,
            bank_size: FULL_VIEW_COUNT,
            top_m: DEFAULT_TOP_M,
            aggregation: Aggregation::Weighted,
            metric: Metric::L2,
            seed: 0,
            hidden: DEFAULT_HIDDEN,
            out: PathBuf::from("spnet-out"),
            train: TrainConfig { learning_rate: 0.01, batch_size: 8, epochs: 200, dropout_rate: DEFAULT_DROPOUT, seed: 0 },
            train_stop_accuracy: None,
            select_epochs: 100,
            select_learning_rate: 0.01,
            ensemble_epochs: 20,
            ensemble_stop_accuracy: None,
            ensemble_from_scratch: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("bad value {value:?} for {key}"))
}

fn parse_stop(key: &str, value: &str) -> std::result::Result<Option<f64>, String> {
    if value == "none" {
        return Ok(None);
    }
    parse_value(key, value).map(Some)
}

impl RunConfig {
    /// Applies one setting. Keys are the field names above, with `train.`
    /// fields flattened (`learning_rate`, `batch_size`, `epochs`, `dropout`).
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "projection" => {
                self.projection = ProjectionKind::ALL
                    .into_iter()
                    .find(|p| p.name() == value)
                    .ok_or_else(|| format!("unknown projection {value:?}"))?
            }
            "image_size" => self.image_size = parse_value(key, value)?,
            "views" => self.views = EnsembleViews::parse(value).ok_or_else(|| format!("unknown views {value:?}"))?,
            "bank_size" => self.bank_size = parse_value(key, value)?,
            "top_m" => self.top_m = parse_value(key, value)?,
            "aggregation" => {
                self.aggregation =
                    Aggregation::from_name(value).ok_or_else(|| format!("unknown aggregation {value:?}"))?
            }
            "metric" => self.metric = Metric::from_name(value).ok_or_else(|| format!("unknown metric {value:?}"))?,
            "seed" => self.seed = parse_value(key, value)?,
            "hidden" => self.hidden = parse_value(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "learning_rate" => self.train.learning_rate = parse_value(key, value)?,
            "batch_size" => self.train.batch_size = parse_value(key, value)?,
            "epochs" => self.train.epochs = parse_value(key, value)?,
            "dropout" => self.train.dropout_rate = parse_value(key, value)?,
            "train_stop_accuracy" => self.train_stop_accuracy = parse_stop(key, value)?,
            "select_epochs" => self.select_epochs = parse_value(key, value)?,
            "select_learning_rate" => self.select_learning_rate = parse_value(key, value)?,
            "ensemble_epochs" => self.ensemble_epochs = parse_value(key, value)?,
            "ensemble_stop_accuracy" => self.ensemble_stop_accuracy = parse_stop(key, value)?,
            "ensemble_from_scratch" => self.ensemble_from_scratch = parse_value(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config { path: path.to_path_buf(), line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            cfg.set(k.trim(), v.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&fs::read_to_string(path).at(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Setting(m.into()));
        if self.image_size == 0 || self.image_size % 8 != 0 || self.image_size > u16::MAX as usize {
            return bad("image_size must be a positive multiple of 8");
        }
        if self.bank_size == 0 || self.bank_size > FULL_VIEW_COUNT {
            return bad("bank_size must be between 1 and 64");
        }
        if self.top_m == 0 || self.top_m > self.bank_size {
            return bad("top_m must be between 1 and bank_size");
        }
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        self.train.validate().map_err(|e| Error::Setting(e.to_string()))?;
        if !(self.select_learning_rate > 0.0) {
            return bad("select_learning_rate must be positive");
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    pub fn image_kind(&self) -> ImageKind {
        self.projection.into()
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions { size: self.image_size, hit_mode: HitMode::Farthest }
    }

    /// Settings that affect results, as `key = value` lines.
    pub fn to_text(&self) -> String {
        let stop = |s: Option<f64>| s.map_or("none".to_string(), |v| v.to_string());
        format!(
            "projection = {}\nimage_size = {}\nviews = {}\nbank_size = {}\ntop_m = {}\naggregation = {}\n\
             metric = {}\nseed = {}\nhidden = {}\nlearning_rate = {}\nbatch_size = {}\nepochs = {}\n\
             dropout = {}\ntrain_stop_accuracy = {}\nselect_epochs = {}\nselect_learning_rate = {}\n\
             ensemble_epochs = {}\nensemble_stop_accuracy = {}\nensemble_from_scratch = {}\n",
            self.projection.name(),
            self.image_size,
            self.views.name(),
            self.bank_size,
            self.top_m,
            self.aggregation.name(),
            self.metric.name(),
            self.seed,
            self.hidden,
            self.train.learning_rate,
            self.train.batch_size,
            self.train.epochs,
            self.train.dropout_rate,
            stop(self.train_stop_accuracy),
            self.select_epochs,
            self.select_learning_rate,
            self.ensemble_epochs,
            stop(self.ensemble_stop_accuracy),
            self.ensemble_from_scratch,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_recommended_setup() {
        let c = RunConfig::default();
        assert_eq!(c.projection, ProjectionKind::Uv);
        assert_eq!((c.bank_size, c.top_m, c.aggregation), (64, 5, Aggregation::Weighted));
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.image_size, 128);
        c.validate().unwrap();
    }

    #[test]
    fn parses_and_round_trips() {
        let text = "# comment\nprojection = cassini\n top_m=3 # trailing\nviews = mvcnn12\n\ntrain_stop_accuracy = 0.95\n";
        let c = RunConfig::parse(text, Path::new("c.cfg")).unwrap();
        assert_eq!(c.projection, ProjectionKind::Cassini);
        assert_eq!(c.top_m, 3);
        assert_eq!(c.views, EnsembleViews::Preset(ViewPreset::Mvcnn12));
        assert_eq!(c.train_stop_accuracy, Some(0.95));
        assert_eq!(RunConfig::parse(&c.to_text(), Path::new("x")).unwrap(), RunConfig { out: c.out.clone(), ..c });
    }

    #[test]
    fn reports_line_numbers() {
        let err = RunConfig::parse("seed = 1\ncolour = blue\n", Path::new("c.cfg")).unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }), "{err}");
        assert!(RunConfig::parse("top_m\n", Path::new("c")).is_err());
        let mut c = RunConfig::default();
        c.top_m = 65;
        assert!(c.validate().is_err());
    }
}
