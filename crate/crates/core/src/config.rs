//! `key = value` run configuration with dotted keys and `#` comments.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::augment::{AugKind, AugSpec, ViewSpec};
use crate::data::DatasetSource;
use crate::encoder::EncoderConfig;
use crate::error::{GipError, Result};
use crate::objectives::{ObjectiveConfig, ObjectiveKind};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetSource,
    /// Seed of the synthetic generator; ignored for TU data.
    pub data_seed: u64,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Reuse the same shuffle and view draws every epoch.
    pub freeze_views: bool,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub gip_start_layer: usize,
    /// Feature width; filled from the dataset when absent.
    pub input_dim: Option<usize>,
    pub objective: ObjectiveConfig,
    pub view1: ViewSpec,
    pub view2: ViewSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let gip = ViewSpec::from(AugSpec::gip(0.5).expect("valid probability"));
        Self {
            dataset: DatasetSource::Synth2M,
            data_seed: 0,
            seed: 0,
            epochs: 100,
            batch_size: 32,
            lr: 5e-4,
            freeze_views: false,
            num_layers: 3,
            hidden_dim: 64,
            gip_start_layer: 0,
            input_dim: None,
            objective: ObjectiveConfig::new(ObjectiveKind::Grace),
            view1: gip.clone(),
            view2: gip,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| GipError::Config(format!("invalid value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(GipError::Config(format!("invalid value for {key}: {value:?}"))),
    }
}

fn parse_aug_list(key: &str, value: &str) -> Result<Vec<AugSpec>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("none"))
        .map(|item| {
            let (kind, p) = item
                .split_once(':')
                .ok_or_else(|| GipError::Config(format!("invalid value for {key}: {item:?} (want KIND:P)")))?;
            let kind: AugKind = kind.parse()?;
            if kind == AugKind::Gip {
                return Err(GipError::Config(format!("{key}: GIP can only be the main augmentation")));
            }
            AugSpec::new(kind, parse_value(key, p)?)
        })
        .collect()
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| GipError::Parse {
                line: i + 1,
                msg: format!("expected `key = value`, found {line:?}"),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses the single-line `key=value key=value` form.
    pub fn parse_line(line: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for item in line.split_whitespace() {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| GipError::Config(format!("malformed config item {item:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.parse()?,
            "data_seed" => self.data_seed = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "freeze_views" => self.freeze_views = parse_bool(key, value)?,
            "encoder.layers" => self.num_layers = parse_value(key, value)?,
            "encoder.hidden" => self.hidden_dim = parse_value(key, value)?,
            "encoder.start_layer" => self.gip_start_layer = parse_value(key, value)?,
            "encoder.input_dim" => {
                self.input_dim = match value {
                    "auto" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "objective.kind" => self.objective.kind = value.parse()?,
            "objective.tau" => self.objective.tau = parse_value(key, value)?,
            "objective.lambda" => {
                self.objective.lambda = match value {
                    "auto" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "objective.ema_decay" => self.objective.ema_decay = parse_value(key, value)?,
            "objective.symmetric" => self.objective.symmetric = parse_bool(key, value)?,
            "view1.kind" | "view2.kind" | "view1.p" | "view2.p" | "view1.pre" | "view2.pre" => {
                let view = if key.starts_with("view1") { &mut self.view1 } else { &mut self.view2 };
                match &key[6..] {
                    "kind" => view.main = AugSpec::new(value.parse()?, view.main.p())?,
                    "p" => view.main = AugSpec::new(view.main.kind(), parse_value(key, value)?)?,
                    _ => view.pre = parse_aug_list(key, value)?,
                }
            }
            _ => return Err(GipError::Config(format!("unknown config key: {key}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(GipError::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.lr > 0.0) {
            return Err(GipError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        self.objective.validate()?;
        EncoderConfig {
            num_layers: self.num_layers,
            hidden_dim: self.hidden_dim,
            input_dim: self.input_dim.unwrap_or(1),
            gip_start_layer: self.gip_start_layer,
        }
        .validate()
    }

    pub fn encoder_config(&self, input_dim: usize) -> Result<EncoderConfig> {
        if let Some(d) = self.input_dim {
            if d != input_dim {
                return Err(GipError::Compatibility(format!(
                    "config expects input dimension {d}, dataset has {input_dim}"
                )));
            }
        }
        EncoderConfig::new(self.num_layers, self.hidden_dim, input_dim)?.with_start_layer(self.gip_start_layer)
    }

    /// Keys and values in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let pre = |v: &ViewSpec| {
            if v.pre.is_empty() {
                "none".to_string()
            } else {
                v.pre
                    .iter()
                    .map(|a| format!("{}:{}", a.kind(), a.p()))
                    .collect::<Vec<_>>()
                    .join(",")
            }
        };
        vec![
            ("dataset", self.dataset.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("freeze_views", self.freeze_views.to_string()),
            ("encoder.layers", self.num_layers.to_string()),
            ("encoder.hidden", self.hidden_dim.to_string()),
            ("encoder.start_layer", self.gip_start_layer.to_string()),
            (
                "encoder.input_dim",
                self.input_dim.map_or("auto".to_string(), |d| d.to_string()),
            ),
            ("objective.kind", self.objective.kind.to_string()),
            ("objective.tau", self.objective.tau.to_string()),
            (
                "objective.lambda",
                self.objective.lambda.map_or("auto".to_string(), |l| l.to_string()),
            ),
            ("objective.ema_decay", self.objective.ema_decay.to_string()),
            ("objective.symmetric", self.objective.symmetric.to_string()),
            ("view1.kind", self.view1.main.kind().to_string()),
            ("view1.p", self.view1.main.p().to_string()),
            ("view1.pre", pre(&self.view1)),
            ("view2.kind", self.view2.main.kind().to_string()),
            ("view2.p", self.view2.main.p().to_string()),
            ("view2.pre", pre(&self.view2)),
        ]
    }

    pub fn to_line(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}
