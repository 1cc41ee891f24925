//! Run configuration and its sectioned `key = value` text form.
//!
//! ```text
//! # comment
//! [run]
//! backbone = mdd
//! total_iterations = 3000
//! ```
//!
//! Parsing is strict: unknown sections, unknown keys, duplicates and
//! malformed values are all errors. Keys left out keep their defaults.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DomainSpec, Generator};
use crate::error::{Error, Result};
use crate::losses::MarginParams;
use crate::mixup::{EntropyFilter, MixMode, MixupPolicy};
use crate::nn::{Backbone, ModelDims};

/// Affine shift of one synthetic domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Shift {
    pub rotation_deg: f64,
    pub translation: [f64; 2],
    pub scale: f64,
}

impl Default for Shift {
    fn default() -> Self {
        Self {
            rotation_deg: 0.0,
            translation: [0.0, 0.0],
            scale: 1.0,
        }
    }
}

/// Where the two domains come from: a shared generator with per-domain
/// shifts, or labelled CSV files.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub generator: Generator,
    pub n_samples: usize,
    pub noise_sd: f64,
    pub seed: u64,
    pub source: Shift,
    pub target: Shift,
    pub source_csv: Option<PathBuf>,
    pub target_csv: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            generator: Generator::TwoMoons,
            n_samples: 400,
            noise_sd: 0.15,
            seed: 0,
            source: Shift::default(),
            target: Shift {
                rotation_deg: 35.0,
                ..Shift::default()
            },
            source_csv: None,
            target_csv: None,
        }
    }
}

impl DataConfig {
    pub fn domain_spec(&self, shift: &Shift) -> DomainSpec {
        DomainSpec {
            generator: self.generator,
            n_samples: self.n_samples,
            noise_sd: self.noise_sd,
            rotation_deg: shift.rotation_deg,
            translation: shift.translation,
            scale: shift.scale,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub backbone: Backbone,
    pub total_iterations: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub lambda_d_max: f64,
    pub lambda_m_max: f64,
    pub margin_gamma: f64,
    pub saf_enabled: bool,
    pub eval_every: usize,
    pub seed: u64,
    /// Margin threshold of the disparity diagnostic. Probability margins
    /// live in `[−½, ½]`, so this is kept apart from the training margin.
    pub eval_margin: f64,
    pub model: ModelDims,
    pub mixup: MixupPolicy,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Mdd,
            total_iterations: 3000,
            batch_size: 32,
            base_lr: 0.004,
            momentum: 0.9,
            lambda_d_max: 0.1,
            lambda_m_max: 0.1,
            margin_gamma: 4.0,
            saf_enabled: true,
            eval_every: 500,
            seed: 0,
            eval_margin: 0.1,
            model: ModelDims::default(),
            mixup: MixupPolicy::default(),
            data: DataConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.total_iterations < 1 {
            return bad("total_iterations must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if self.eval_every < 1 {
            return bad("eval_every must be at least 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        for (name, v) in [
            ("lambda_d_max", self.lambda_d_max),
            ("lambda_m_max", self.lambda_m_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} {v} must be non-negative"));
            }
        }
        if !(self.eval_margin > 0.0 && self.eval_margin <= 0.5) {
            return bad(format!("eval_margin {} outside (0, 0.5]", self.eval_margin));
        }
        MarginParams::from_gamma(self.margin_gamma)?;
        self.model.validate()?;
        self.mixup.validate()?;
        if self.data.source_csv.is_some() != self.data.target_csv.is_some() {
            return bad("source_csv and target_csv must be given together".into());
        }
        if self.data.source_csv.is_none() {
            self.data.domain_spec(&self.data.source).validate()?;
            self.data.domain_spec(&self.data.target).validate()?;
            if self.model.input_dim != 2 {
                return bad("synthetic domains are 2-D; set model.input_dim = 2".into());
            }
            let classes = match self.data.generator {
                Generator::TwoMoons => 2,
                Generator::GaussianBlobs => crate::data::DEFAULT_BLOB_CENTERS.len(),
            };
            if self.model.num_classes != classes {
                return bad(format!(
                    "generator `{}` has {classes} classes but model.num_classes = {}",
                    self.data.generator, self.model.num_classes
                ));
            }
        }
        Ok(())
    }

    pub fn margin_params(&self) -> Result<MarginParams> {
        MarginParams::from_gamma(self.margin_gamma)
    }

    /// Text form accepted by [`TrainConfig::parse`], with every key spelled out.
    pub fn render(&self) -> String {
        let mut o = String::new();
        let m = &self.model;
        let x = &self.mixup;
        let d = &self.data;
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        let _ = writeln!(o, "[run]");
        let _ = writeln!(o, "# dann | mdd");
        let _ = writeln!(o, "backbone = {}", self.backbone);
        let _ = writeln!(o, "total_iterations = {}", self.total_iterations);
        let _ = writeln!(o, "batch_size = {}", self.batch_size);
        let _ = writeln!(o, "# B, C and M use 10x this rate");
        let _ = writeln!(o, "base_lr = {:?}", self.base_lr);
        let _ = writeln!(o, "momentum = {:?}", self.momentum);
        let _ = writeln!(o, "# lambda_d(t) = lambda_d_max * tanh(10 t / T); lambda_m uses 5 t / T");
        let _ = writeln!(o, "lambda_d_max = {:?}", self.lambda_d_max);
        let _ = writeln!(o, "lambda_m_max = {:?}", self.lambda_m_max);
        let _ = writeln!(o, "# source weight of the mdd loss; margin = ln(gamma)");
        let _ = writeln!(o, "margin_gamma = {:?}", self.margin_gamma);
        let _ = writeln!(o, "saf_enabled = {}", self.saf_enabled);
        let _ = writeln!(o, "eval_every = {}", self.eval_every);
        let _ = writeln!(o, "seed = {}", self.seed);
        let _ = writeln!(o, "# margin threshold of the disparity diagnostic, in (0, 0.5]");
        let _ = writeln!(o, "eval_margin = {:?}", self.eval_margin);
        let _ = writeln!(o);
        let _ = writeln!(o, "[model]");
        let _ = writeln!(o, "input_dim = {}", m.input_dim);
        let _ = writeln!(o, "# comma-separated hidden widths of F");
        let _ = writeln!(o, "feature_hidden = {}", join(&m.feature_hidden));
        let _ = writeln!(o, "feature_dim = {}", m.feature_dim);
        let _ = writeln!(o, "bottleneck_dim = {}", m.bottleneck_dim);
        let _ = writeln!(o, "classifier_hidden = {}", m.classifier_hidden);
        let _ = writeln!(o, "num_classes = {}", m.num_classes);
        let _ = writeln!(o, "saf_dim = {}", m.saf_dim);
        let _ = writeln!(o, "saf_bottlenecks = {}", m.saf_bottlenecks);
        let _ = writeln!(o, "bottleneck_dropout = {:?}", m.bottleneck_dropout);
        let _ = writeln!(o, "classifier_dropout = {:?}", m.classifier_dropout);
        let _ = writeln!(o, "# mix bottleneck outputs instead of extractor outputs");
        let _ = writeln!(o, "saf_after_bottleneck = {}", m.saf_after_bottleneck);
        let _ = writeln!(o);
        let _ = writeln!(o, "[mixup]");
        let _ = writeln!(o, "# saf | beta | constant");
        let _ = writeln!(o, "mode = {}", x.mode);
        let _ = writeln!(o, "beta_alpha = {:?}", x.beta_alpha);
        let _ = writeln!(o, "constant_eta = {:?}", x.constant_eta);
        let _ = writeln!(o, "# none | only_uncertain | only_certain");
        let _ = writeln!(o, "entropy_filter = {}", x.entropy_filter);
        let _ = writeln!(o, "# auto = 0.5 ln K");
        let _ = writeln!(
            o,
            "entropy_threshold = {}",
            x.entropy_threshold.map_or("auto".to_string(), |t| format!("{t:?}"))
        );
        let _ = writeln!(o, "include_source = {}", x.include_source);
        let _ = writeln!(o);
        let _ = writeln!(o, "[data]");
        let _ = writeln!(o, "# moons | blobs");
        let _ = writeln!(o, "generator = {}", d.generator);
        let _ = writeln!(o, "n_samples = {}", d.n_samples);
        let _ = writeln!(o, "noise_sd = {:?}", d.noise_sd);
        let _ = writeln!(o, "seed = {}", d.seed);
        for (prefix, s) in [("source", &d.source), ("target", &d.target)] {
            let _ = writeln!(o, "{prefix}_rotation_deg = {:?}", s.rotation_deg);
            let _ = writeln!(o, "{prefix}_translation = {:?}, {:?}", s.translation[0], s.translation[1]);
            let _ = writeln!(o, "{prefix}_scale = {:?}", s.scale);
        }
        let _ = writeln!(o, "# labelled CSV files replace the generator when both are set");
        let _ = writeln!(o, "source_csv = {}", opt_path(&d.source_csv));
        let _ = writeln!(o, "target_csv = {}", opt_path(&d.target_csv));
        o
    }

    /// Parses text over the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut section = String::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let row = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["run", "model", "mixup", "data"].contains(&name) {
                    return Err(Error::Config(format!("unknown section `[{name}]` at line {row}")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {row}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if !seen.insert(full.clone()) {
                return Err(Error::Config(format!("duplicate key `{full}` at line {row}")));
            }
            cfg.set(&full, value)
                .map_err(|e| Error::Config(format!("line {row}: {e}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one dotted key (`section.key`) from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let x = &mut self.mixup;
        let d = &mut self.data;
        match key {
            "run.backbone" => self.backbone = value.parse()?,
            "run.total_iterations" => self.total_iterations = num(key, value)?,
            "run.batch_size" => self.batch_size = num(key, value)?,
            "run.base_lr" => self.base_lr = num(key, value)?,
            "run.momentum" => self.momentum = num(key, value)?,
            "run.lambda_d_max" => self.lambda_d_max = num(key, value)?,
            "run.lambda_m_max" => self.lambda_m_max = num(key, value)?,
            "run.margin_gamma" => self.margin_gamma = num(key, value)?,
            "run.saf_enabled" => self.saf_enabled = flag(key, value)?,
            "run.eval_every" => self.eval_every = num(key, value)?,
            "run.seed" => self.seed = num(key, value)?,
            "run.eval_margin" => self.eval_margin = num(key, value)?,
            "model.input_dim" => m.input_dim = num(key, value)?,
            "model.feature_hidden" => {
                m.feature_hidden = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|w| num(key, w.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "model.feature_dim" => m.feature_dim = num(key, value)?,
            "model.bottleneck_dim" => m.bottleneck_dim = num(key, value)?,
            "model.classifier_hidden" => m.classifier_hidden = num(key, value)?,
            "model.num_classes" => m.num_classes = num(key, value)?,
            "model.saf_dim" => m.saf_dim = num(key, value)?,
            "model.saf_bottlenecks" => m.saf_bottlenecks = num(key, value)?,
            "model.bottleneck_dropout" => m.bottleneck_dropout = num(key, value)?,
            "model.classifier_dropout" => m.classifier_dropout = num(key, value)?,
            "model.saf_after_bottleneck" => m.saf_after_bottleneck = flag(key, value)?,
            "mixup.mode" => x.mode = value.parse::<MixMode>()?,
            "mixup.beta_alpha" => x.beta_alpha = num(key, value)?,
            "mixup.constant_eta" => x.constant_eta = num(key, value)?,
            "mixup.entropy_filter" => x.entropy_filter = value.parse::<EntropyFilter>()?,
            "mixup.entropy_threshold" => {
                x.entropy_threshold = match value {
                    "auto" => None,
                    v => Some(num(key, v)?),
                }
            }
            "mixup.include_source" => x.include_source = flag(key, value)?,
            "data.generator" => d.generator = value.parse()?,
            "data.n_samples" => d.n_samples = num(key, value)?,
            "data.noise_sd" => d.noise_sd = num(key, value)?,
            "data.seed" => d.seed = num(key, value)?,
            "data.source_rotation_deg" => d.source.rotation_deg = num(key, value)?,
            "data.source_translation" => d.source.translation = pair(key, value)?,
            "data.source_scale" => d.source.scale = num(key, value)?,
            "data.target_rotation_deg" => d.target.rotation_deg = num(key, value)?,
            "data.target_translation" => d.target.translation = pair(key, value)?,
            "data.target_scale" => d.target.scale = num(key, value)?,
            "data.source_csv" => d.source_csv = path(value),
            "data.target_csv" => d.target_csv = path(value),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" => Ok(true),
        "false" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true/false, got `{value}`"))),
    }
}

fn pair(key: &str, value: &str) -> Result<[f64; 2]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([num(key, a)?, num(key, b)?]),
        _ => Err(Error::Config(format!("`{key}`: expected `x, y`, got `{value}`"))),
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}
