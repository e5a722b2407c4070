//! Sectioned `key = value` run configuration.
//!
//! The format is deliberately flat and diff-friendly: `[section]` headers,
//! one `key = value` per line, `#` comments, no nesting. Unknown sections and
//! keys are rejected with line numbers, and `parse(write(cfg)) == cfg` holds
//! exactly (floats are written in shortest round-trip form).

use kdream_core::crn::AttentionMode;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("bad override {0:?}: expected section.key=value")]
    BadOverride(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub seed: u64,
    /// Worker threads; 0 = available parallelism.
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgSection {
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KgeSection {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub negatives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSection {
    pub n: usize,
    pub layers: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub schedule_steps: usize,
    pub ood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrnSection {
    pub layers: usize,
    pub hidden: usize,
    pub tau: f64,
    pub attention: AttentionMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceSection {
    pub lambda_x: f64,
    pub lambda_e: f64,
    pub steps: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub top_fraction: f64,
    pub novelty_max: f64,
    pub qed_min: f64,
    pub sa_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run: RunSection,
    pub kg: KgSection,
    pub kge: KgeSection,
    pub diffusion: DiffusionSection,
    pub crn: CrnSection,
    pub guidance: GuidanceSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run: RunSection { seed: 0, jobs: 0 },
            kg: KgSection {
                valid_fraction: 0.1,
                test_fraction: 0.1,
            },
            kge: KgeSection {
                dim: 16,
                epochs: 100,
                learning_rate: 0.01,
                margin: 1.0,
                negatives: 1,
            },
            diffusion: DiffusionSection {
                n: 16,
                layers: 3,
                hidden: 64,
                epochs: 30,
                batch_size: 16,
                learning_rate: 1e-3,
                grad_clip: 5.0,
                beta_min: 0.1,
                beta_max: 10.0,
                schedule_steps: 200,
                ood: 0.0,
            },
            crn: CrnSection {
                layers: 3,
                hidden: 64,
                tau: 0.05,
                attention: AttentionMode::Masked,
                epochs: 30,
                batch_size: 16,
                learning_rate: 1e-3,
                grad_clip: 5.0,
            },
            guidance: GuidanceSection {
                lambda_x: 0.0,
                lambda_e: 0.0,
                steps: 200,
                count: 10,
            },
            eval: EvalSection {
                top_fraction: 0.05,
                novelty_max: 0.4,
                qed_min: 0.5,
                sa_min: 0.44,
            },
        }
    }
}

fn attention_name(mode: AttentionMode) -> &'static str {
    match mode {
        AttentionMode::Masked => "masked",
        AttentionMode::Dense => "dense",
    }
}

impl RunConfig {
    /// Canonical text form; every field appears, in a fixed order.
    pub fn write(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "seed = {}", self.run.seed);
        let _ = writeln!(s, "jobs = {}", self.run.jobs);
        let _ = writeln!(s, "\n[kg]");
        let _ = writeln!(s, "valid_fraction = {}", self.kg.valid_fraction);
        let _ = writeln!(s, "test_fraction = {}", self.kg.test_fraction);
        let _ = writeln!(s, "\n[kge]");
        let _ = writeln!(s, "dim = {}", self.kge.dim);
        let _ = writeln!(s, "epochs = {}", self.kge.epochs);
        let _ = writeln!(s, "learning_rate = {}", self.kge.learning_rate);
        let _ = writeln!(s, "margin = {}", self.kge.margin);
        let _ = writeln!(s, "negatives = {}", self.kge.negatives);
        let _ = writeln!(s, "\n[diffusion]");
        let _ = writeln!(s, "n = {}", self.diffusion.n);
        let _ = writeln!(s, "layers = {}", self.diffusion.layers);
        let _ = writeln!(s, "hidden = {}", self.diffusion.hidden);
        let _ = writeln!(s, "epochs = {}", self.diffusion.epochs);
        let _ = writeln!(s, "batch_size = {}", self.diffusion.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.diffusion.learning_rate);
        let _ = writeln!(s, "grad_clip = {}", self.diffusion.grad_clip);
        let _ = writeln!(s, "beta_min = {}", self.diffusion.beta_min);
        let _ = writeln!(s, "beta_max = {}", self.diffusion.beta_max);
        let _ = writeln!(s, "schedule_steps = {}", self.diffusion.schedule_steps);
        let _ = writeln!(s, "ood = {}", self.diffusion.ood);
        let _ = writeln!(s, "\n[crn]");
        let _ = writeln!(s, "layers = {}", self.crn.layers);
        let _ = writeln!(s, "hidden = {}", self.crn.hidden);
        let _ = writeln!(s, "tau = {}", self.crn.tau);
        let _ = writeln!(s, "attention = {}", attention_name(self.crn.attention));
        let _ = writeln!(s, "epochs = {}", self.crn.epochs);
        let _ = writeln!(s, "batch_size = {}", self.crn.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.crn.learning_rate);
        let _ = writeln!(s, "grad_clip = {}", self.crn.grad_clip);
        let _ = writeln!(s, "\n[guidance]");
        let _ = writeln!(s, "lambda_x = {}", self.guidance.lambda_x);
        let _ = writeln!(s, "lambda_e = {}", self.guidance.lambda_e);
        let _ = writeln!(s, "steps = {}", self.guidance.steps);
        let _ = writeln!(s, "count = {}", self.guidance.count);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "top_fraction = {}", self.eval.top_fraction);
        let _ = writeln!(s, "novelty_max = {}", self.eval.novelty_max);
        let _ = writeln!(s, "qed_min = {}", self.eval.qed_min);
        let _ = writeln!(s, "sa_min = {}", self.eval.sa_min);
        s
    }

    /// Parse config text, applying each `key = value` onto the defaults.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| ConfigError::Parse {
                origin: origin.to_string(),
                line,
                message,
            };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err("unterminated section header".into()))?;
                if !SECTIONS.contains(&name) {
                    return Err(err(format!(
                        "unknown section {name:?} (expected one of {SECTIONS:?})"
                    )));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let key = key.trim();
            let value = value.trim();
            let section = section
                .as_deref()
                .ok_or_else(|| err("key before any [section] header".into()))?;
            cfg.set(section, key, value).map_err(|message| err(message))?;
        }
        Ok(cfg)
    }

    /// Apply one `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadOverride(spec.to_string());
        let (path, value) = spec.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        self.set(section, key, value.trim())
            .map_err(|message| ConfigError::BadOverride(format!("{spec}: {message}")))
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("invalid value {value:?} for key {key:?}"))
        }
        let unknown = |section: &str, key: &str| -> Result<(), String> {
            Err(format!("unknown key {key:?} in section [{section}]"))
        };
        match section {
            "run" => match key {
                "seed" => self.run.seed = p(key, value)?,
                "jobs" => self.run.jobs = p(key, value)?,
                _ => return unknown(section, key),
            },
            "kg" => match key {
                "valid_fraction" => self.kg.valid_fraction = p(key, value)?,
                "test_fraction" => self.kg.test_fraction = p(key, value)?,
                _ => return unknown(section, key),
            },
            "kge" => match key {
                "dim" => self.kge.dim = p(key, value)?,
                "epochs" => self.kge.epochs = p(key, value)?,
                "learning_rate" => self.kge.learning_rate = p(key, value)?,
                "margin" => self.kge.margin = p(key, value)?,
                "negatives" => self.kge.negatives = p(key, value)?,
                _ => return unknown(section, key),
            },
            "diffusion" => match key {
                "n" => self.diffusion.n = p(key, value)?,
                "layers" => self.diffusion.layers = p(key, value)?,
                "hidden" => self.diffusion.hidden = p(key, value)?,
                "epochs" => self.diffusion.epochs = p(key, value)?,
                "batch_size" => self.diffusion.batch_size = p(key, value)?,
                "learning_rate" => self.diffusion.learning_rate = p(key, value)?,
                "grad_clip" => self.diffusion.grad_clip = p(key, value)?,
                "beta_min" => self.diffusion.beta_min = p(key, value)?,
                "beta_max" => self.diffusion.beta_max = p(key, value)?,
                "schedule_steps" => self.diffusion.schedule_steps = p(key, value)?,
                "ood" => self.diffusion.ood = p(key, value)?,
                _ => return unknown(section, key),
            },
            "crn" => match key {
                "layers" => self.crn.layers = p(key, value)?,
                "hidden" => self.crn.hidden = p(key, value)?,
                "tau" => self.crn.tau = p(key, value)?,
                "attention" => {
                    self.crn.attention = match value {
                        "masked" => AttentionMode::Masked,
                        "dense" => AttentionMode::Dense,
                        other => {
                            return Err(format!(
                                "invalid attention {other:?} (expected masked or dense)"
                            ))
                        }
                    }
                }
                "epochs" => self.crn.epochs = p(key, value)?,
                "batch_size" => self.crn.batch_size = p(key, value)?,
                "learning_rate" => self.crn.learning_rate = p(key, value)?,
                "grad_clip" => self.crn.grad_clip = p(key, value)?,
                _ => return unknown(section, key),
            },
            "guidance" => match key {
                "lambda_x" => self.guidance.lambda_x = p(key, value)?,
                "lambda_e" => self.guidance.lambda_e = p(key, value)?,
                "steps" => self.guidance.steps = p(key, value)?,
                "count" => self.guidance.count = p(key, value)?,
                _ => return unknown(section, key),
            },
            "eval" => match key {
                "top_fraction" => self.eval.top_fraction = p(key, value)?,
                "novelty_max" => self.eval.novelty_max = p(key, value)?,
                "qed_min" => self.eval.qed_min = p(key, value)?,
                "sa_min" => self.eval.sa_min = p(key, value)?,
                _ => return unknown(section, key),
            },
            _ => return Err(format!("unknown section [{section}]")),
        }
        Ok(())
    }
}

pub const SECTIONS: [&str; 7] = ["run", "kg", "kge", "diffusion", "crn", "guidance", "eval"];
