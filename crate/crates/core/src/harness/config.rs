use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::autonet::Placement;
use crate::datagen::Schedule;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub schedule: Schedule,
    /// Images per stage.
    pub n: usize,
    pub stages: usize,
    pub seed: u64,
    /// Load this container instead of generating.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub placement: Placement,
    pub epsilon: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub gamma: f64,
    /// Decay interval in epochs, counted across all stages.
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub deltas: Vec<f64>,
    pub dcor: bool,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetConfig {
                schedule: Schedule::BothShift,
                n: 1024,
                stages: Schedule::BothShift.default_stages(),
                seed: 0,
                path: None,
            },
            model: ModelConfig {
                placement: Placement::AfterEachConvAndPrelogits,
                epsilon: 1.0,
                lambda: 1e-4,
            },
            optim: OptimConfig {
                lr: 5e-4,
                gamma: 0.8,
                decay_every: 20,
                epochs: 100,
                batch_size: 128,
            },
            eval: EvalConfig {
                deltas: vec![0.0, 0.25, 0.5, 0.75, 1.0],
                dcor: true,
                batch_size: 256,
            },
            seeds: vec![0],
        }
    }
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.optim.epochs == 0 {
            return bad("optim.epochs must be >= 1".into());
        }
        if self.optim.batch_size == 0 || self.eval.batch_size == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if !(self.optim.lr > 0.0) || !(self.optim.gamma > 0.0) || self.optim.decay_every == 0 {
            return bad("optim.lr, optim.gamma and optim.decay_every must be positive".into());
        }
        if let Some(d) = self.eval.deltas.iter().find(|d| !(0.0..=1.0).contains(*d)) {
            return bad(format!("eval.deltas entry {d} outside [0, 1]"));
        }
        if self.eval.deltas.is_empty() {
            return bad("eval.deltas is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds list is empty".into());
        }
        if !(self.model.epsilon > 0.0) || !(self.model.lambda >= 0.0) {
            return bad("model.epsilon must be > 0 and model.lambda >= 0".into());
        }
        if self.dataset.path.is_none() && (self.dataset.n == 0 || self.dataset.n % 2 != 0) {
            return bad(format!("dataset.n must be even and positive, got {}", self.dataset.n));
        }
        Ok(())
    }

    /// Parses `key = value` lines. `#` starts a comment; unknown keys and
    /// malformed values are reported with 1-based line and column.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        let mut stages_set = false;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("");
            if line.trim().is_empty() {
                continue;
            }
            let err = |col: usize, msg: String| HarnessError::Parse {
                line: ln + 1,
                column: col + 1,
                message: msg,
            };
            let eq = line
                .find('=')
                .ok_or_else(|| err(line.len() - line.trim_start().len(), "expected `key = value`".into()))?;
            let key = line[..eq].trim();
            let val_start = eq + 1 + (line[eq + 1..].len() - line[eq + 1..].trim_start().len());
            let value = line[eq + 1..].trim();
            let key_col = line.len() - line.trim_start().len();
            let vbad = |what: &str| err(val_start, format!("invalid {what} {value:?} for {key}"));
            let num_f = || value.parse::<f64>().map_err(|_| vbad("number"));
            let num_u = || value.parse::<usize>().map_err(|_| vbad("integer"));
            let num_u64 = || value.parse::<u64>().map_err(|_| vbad("integer"));
            match key {
                "dataset.schedule" => {
                    cfg.dataset.schedule = Schedule::parse(value).map_err(|_| vbad("schedule"))?
                }
                "dataset.n" => cfg.dataset.n = num_u()?,
                "dataset.stages" => {
                    cfg.dataset.stages = num_u()?;
                    stages_set = true;
                }
                "dataset.seed" => cfg.dataset.seed = num_u64()?,
                "dataset.path" => {
                    cfg.dataset.path = (!value.is_empty()).then(|| PathBuf::from(value))
                }
                "model.placement" => {
                    cfg.model.placement = Placement::parse(value).ok_or_else(|| vbad("placement"))?
                }
                "model.epsilon" => cfg.model.epsilon = num_f()?,
                "model.lambda" => cfg.model.lambda = num_f()?,
                "optim.lr" => cfg.optim.lr = num_f()?,
                "optim.gamma" => cfg.optim.gamma = num_f()?,
                "optim.decay_every" => cfg.optim.decay_every = num_u()?,
                "optim.epochs" => cfg.optim.epochs = num_u()?,
                "optim.batch_size" => cfg.optim.batch_size = num_u()?,
                "eval.deltas" => {
                    cfg.eval.deltas = split_list(value)
                        .map(|s| s.parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| vbad("number list"))?
                }
                "eval.dcor" => {
                    cfg.eval.dcor = match value {
                        "true" | "on" | "1" => true,
                        "false" | "off" | "0" => false,
                        _ => return Err(vbad("boolean")),
                    }
                }
                "eval.batch_size" => cfg.eval.batch_size = num_u()?,
                "seeds" => {
                    cfg.seeds = split_list(value)
                        .map(|s| s.parse::<u64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| vbad("seed list"))?
                }
                _ => return Err(err(key_col, format!("unknown key {key:?}"))),
            }
        }
        if !stages_set {
            cfg.dataset.stages = cfg.dataset.schedule.default_stages();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let d = &self.dataset;
        let _ = writeln!(s, "dataset.schedule = {}", d.schedule.name());
        let _ = writeln!(s, "dataset.n = {}", d.n);
        let _ = writeln!(s, "dataset.stages = {}", d.stages);
        let _ = writeln!(s, "dataset.seed = {}", d.seed);
        if let Some(p) = &d.path {
            let _ = writeln!(s, "dataset.path = {}", p.display());
        }
        let _ = writeln!(s, "model.placement = {}", self.model.placement.name());
        let _ = writeln!(s, "model.epsilon = {}", self.model.epsilon);
        let _ = writeln!(s, "model.lambda = {}", self.model.lambda);
        let o = &self.optim;
        let _ = writeln!(s, "optim.lr = {}", o.lr);
        let _ = writeln!(s, "optim.gamma = {}", o.gamma);
        let _ = writeln!(s, "optim.decay_every = {}", o.decay_every);
        let _ = writeln!(s, "optim.epochs = {}", o.epochs);
        let _ = writeln!(s, "optim.batch_size = {}", o.batch_size);
        let _ = writeln!(s, "eval.deltas = {}", fmt_list(&self.eval.deltas));
        let _ = writeln!(s, "eval.dcor = {}", self.eval.dcor);
        let _ = writeln!(s, "eval.batch_size = {}", self.eval.batch_size);
        let _ = writeln!(s, "seeds = {}", fmt_list(&self.seeds));
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value
        .trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
}
