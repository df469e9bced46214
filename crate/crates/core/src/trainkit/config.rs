use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::selector::{SamplingStrategy, SelectorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Retrieval,
    Qa,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Retrieval => "retrieval",
            Task::Qa => "qa",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrieval" => Ok(Task::Retrieval),
            "qa" => Ok(Task::Qa),
            other => Err(Error::invalid(format!("unknown task `{other}` (retrieval | qa)"))),
        }
    }
}

/// Everything a run needs: optimization, objective and model shape.
///
/// Read from TOML using these exact key names; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    pub strategy: SamplingStrategy,
    pub l1_weight: f64,
    pub tau: f64,
    pub tau_ds: f64,
    pub max_video_len: usize,
    pub max_text_len: usize,
    pub seed: u64,
    pub task: Task,

    pub feature_dim: usize,
    pub embed_dim: usize,
    pub proj_dim: usize,
    pub vocab_size: usize,
    pub selector_hidden: usize,
    pub init_scale: f64,
    pub video_context: bool,
    pub text_attention: bool,
    /// Lets the fine-grained loss update the encoders through the selector input.
    pub selector_grad_to_encoder: bool,
    /// Weight of each frame's projected similarity to the text, added to the
    /// selector logits; 0 leaves the selector a plain perceptron.
    pub selector_similarity: f64,
    pub num_answers: usize,
    pub qa_hidden: usize,
    /// Keep the parameters with the lowest validation loss instead of the last.
    pub select_on_validation: bool,
    pub validation_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        Self {
            lr: 5e-5,
            warmup_steps: 1000,
            total_steps: 5000,
            batch_size: 16,
            strategy: SamplingStrategy::FixedK(7),
            l1_weight: 1.0,
            tau: 0.07,
            tau_ds: 1.0,
            max_video_len: 32,
            max_text_len: 64,
            seed: 0,
            task: Task::Retrieval,
            feature_dim: enc.feature_dim,
            embed_dim: enc.embed_dim,
            proj_dim: enc.proj_dim,
            vocab_size: enc.vocab_size,
            selector_hidden: SelectorConfig::default().hidden,
            init_scale: enc.init_scale,
            video_context: false,
            text_attention: false,
            selector_grad_to_encoder: true,
            selector_similarity: 0.0,
            num_answers: 0,
            qa_hidden: 64,
            select_on_validation: false,
            validation_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Applies one `key=value` override; the value uses TOML syntax, bare
    /// words are read as strings.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("override `{assignment}` is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let mut table = toml::Table::try_from(&*self).expect("config serializes to a table");
        if !table.contains_key(key) {
            return Err(Error::invalid(format!("unknown config key `{key}`")));
        }
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let value = match (&table[key], value) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(key.to_string(), value);
        let updated: TrainConfig = table
            .try_into()
            .map_err(|e| Error::invalid(format!("override `{assignment}`: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("config: {m}")));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("lr {} must be >= 0", self.lr));
        }
        if self.total_steps == 0 || self.warmup_steps > self.total_steps {
            return fail(format!(
                "need 0 < total_steps and warmup_steps <= total_steps (got {} and {})",
                self.total_steps, self.warmup_steps
            ));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_video_len", self.max_video_len),
            ("max_text_len", self.max_text_len),
            ("feature_dim", self.feature_dim),
            ("embed_dim", self.embed_dim),
            ("proj_dim", self.proj_dim),
            ("vocab_size", self.vocab_size),
            ("selector_hidden", self.selector_hidden),
            ("validation_every", self.validation_every),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !(self.l1_weight >= 0.0 && self.l1_weight.is_finite()) {
            return fail(format!("l1_weight {} must be >= 0", self.l1_weight));
        }
        if !(self.tau > 0.0) || !(self.tau_ds > 0.0) {
            return fail("tau and tau_ds must be > 0".into());
        }
        if !(self.selector_similarity >= 0.0 && self.selector_similarity.is_finite()) {
            return fail("selector_similarity must be >= 0".into());
        }
        if !(self.init_scale > 0.0) {
            return fail("init_scale must be > 0".into());
        }
        if self.task == Task::Qa && (self.num_answers == 0 || self.qa_hidden == 0) {
            return fail("qa needs num_answers and qa_hidden > 0".into());
        }
        self.strategy.validate()
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            feature_dim: self.feature_dim,
            embed_dim: self.embed_dim,
            proj_dim: self.proj_dim,
            vocab_size: self.vocab_size,
            max_video_len: self.max_video_len,
            video_context: self.video_context,
            text_attention: self.text_attention,
            init_scale: self.init_scale,
        }
    }

    pub fn selector(&self) -> SelectorConfig {
        SelectorConfig {
            embed_dim: self.embed_dim,
            hidden: self.selector_hidden,
            init_scale: self.init_scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig {
            strategy: SamplingStrategy::Ratio(0.3),
            task: Task::Qa,
            num_answers: 4,
            ..TrainConfig::default()
        };
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = TrainConfig::from_toml("lr = 0.01\nstrategy = \"median\"\n").unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.strategy, SamplingStrategy::Median);
        assert_eq!(c.warmup_steps, 1000);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(TrainConfig::from_toml("learning_rate = 0.1").is_err());
        assert!(TrainConfig::default().set("learning_rate=0.1").is_err());
    }

    #[test]
    fn overrides() {
        let mut c = TrainConfig::default();
        c.set("lr=1").unwrap();
        assert_eq!(c.lr, 1.0);
        c.set("strategy=random:7:3").unwrap();
        assert_eq!(c.strategy, SamplingStrategy::Random { k: 7, seed: 3 });
        c.set("task = qa").unwrap_err();
        c.set("num_answers=3").unwrap();
        c.set("task=qa").unwrap();
        assert_eq!(c.task, Task::Qa);
        c.set("video_context=true").unwrap();
        assert!(c.video_context);
        assert!(c.set("warmup_steps=999999").is_err());
        assert!(c.set("nokey").is_err());
    }
}
