//! Flat `key = value` run configuration covering every tunable of the
//! engine. Unknown keys are rejected; writing and re-parsing a config
//! reproduces it exactly.

use cobra_core::data::GenConfig;
use cobra_core::losses::LossKind;
use cobra_core::model::SnakeConfig;
use cobra_core::train::TrainConfig;
use cobra_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub snake: SnakeConfig,
    pub train: TrainConfig,
    pub gen: GenConfig,
}

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| Error::parse("config", format!("key `{key}`: {e} (value `{raw}`)")))
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| parse_value::<usize>(key, s.trim()))
        .collect()
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::parse(
            "config",
            format!("key `{key}`: expected true or false, got `{other}`"),
        )),
    }
}

fn list_to_string(xs: &[usize]) -> String {
    xs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn apply(&mut self, key: &str, raw: &str) -> Result<()> {
        let s = &mut self.snake;
        let t = &mut self.train;
        let g = &mut self.gen;
        match key {
            "snake.vertices" => s.vertices = parse_value(key, raw)?,
            "snake.iterations" => s.iterations = parse_value(key, raw)?,
            "snake.dilations" => s.dilations = parse_list(key, raw)?,
            "snake.head_width" => s.head_width = parse_value(key, raw)?,
            "snake.backbone_channels" => s.backbone_channels = parse_list(key, raw)?,
            "snake.feature_stride" => s.feature_stride = parse_value(key, raw)?,
            "snake.dropout_rate" => s.dropout_rate = parse_value(key, raw)?,
            "snake.use_coord_features" => s.use_coord_features = parse_bool(key, raw)?,
            "snake.gradient_stopping" => s.gradient_stopping = parse_bool(key, raw)?,
            "snake.shared_weights" => s.shared_weights = parse_bool(key, raw)?,
            "snake.deep_supervision" => s.deep_supervision = parse_bool(key, raw)?,
            "loss.kind" => s.loss.kind = parse_value::<LossKind>(key, raw)?,
            "loss.gamma" => s.loss.gamma = parse_value(key, raw)?,
            "train.epochs" => t.epochs = parse_value(key, raw)?,
            "train.lr_init" => t.lr_init = parse_value(key, raw)?,
            "train.lr_final" => t.lr_final = parse_value(key, raw)?,
            "train.beta1" => t.beta1 = parse_value(key, raw)?,
            "train.beta2" => t.beta2 = parse_value(key, raw)?,
            "train.eps" => t.eps = parse_value(key, raw)?,
            "train.batch_size" => t.batch_size = parse_value(key, raw)?,
            "train.seed" => t.seed = parse_value(key, raw)?,
            "train.checkpoint_every" => t.checkpoint_every = parse_value(key, raw)?,
            "train.polis_halved" => t.polis_halved = parse_bool(key, raw)?,
            "gen.size" => g.size = parse_value(key, raw)?,
            "gen.count" => g.count = parse_value(key, raw)?,
            "gen.seed" => g.seed = parse_value(key, raw)?,
            "gen.roughness" => g.roughness = parse_value(key, raw)?,
            "gen.contrast" => g.contrast = parse_value(key, raw)?,
            "gen.noise_sd" => g.noise_sd = parse_value(key, raw)?,
            "gen.speckle" => g.speckle = parse_bool(key, raw)?,
            other => {
                return Err(Error::parse(
                    "config",
                    format!("unknown key `{other}`"),
                ))
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(
                    "config",
                    format!("line {}: expected `key = value`, got `{line}`", lineno + 1),
                )
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::parse(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.snake.validate()?;
        self.train.validate()?;
        self.gen.validate()
    }

    pub fn to_text(&self) -> String {
        let s = &self.snake;
        let t = &self.train;
        let g = &self.gen;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("snake.vertices", s.vertices.to_string());
        kv("snake.iterations", s.iterations.to_string());
        kv("snake.dilations", list_to_string(&s.dilations));
        kv("snake.head_width", s.head_width.to_string());
        kv("snake.backbone_channels", list_to_string(&s.backbone_channels));
        kv("snake.feature_stride", s.feature_stride.to_string());
        kv("snake.dropout_rate", s.dropout_rate.to_string());
        kv("snake.use_coord_features", s.use_coord_features.to_string());
        kv("snake.gradient_stopping", s.gradient_stopping.to_string());
        kv("snake.shared_weights", s.shared_weights.to_string());
        kv("snake.deep_supervision", s.deep_supervision.to_string());
        kv("loss.kind", s.loss.kind.to_string());
        kv("loss.gamma", s.loss.gamma.to_string());
        kv("train.epochs", t.epochs.to_string());
        kv("train.lr_init", t.lr_init.to_string());
        kv("train.lr_final", t.lr_final.to_string());
        kv("train.beta1", t.beta1.to_string());
        kv("train.beta2", t.beta2.to_string());
        kv("train.eps", t.eps.to_string());
        kv("train.batch_size", t.batch_size.to_string());
        kv("train.seed", t.seed.to_string());
        kv("train.checkpoint_every", t.checkpoint_every.to_string());
        kv("train.polis_halved", t.polis_halved.to_string());
        kv("gen.size", g.size.to_string());
        kv("gen.count", g.count.to_string());
        kv("gen.seed", g.seed.to_string());
        kv("gen.roughness", g.roughness.to_string());
        kv("gen.contrast", g.contrast.to_string());
        kv("gen.noise_sd", g.noise_sd.to_string());
        kv("gen.speckle", g.speckle.to_string());
        out
    }
}
