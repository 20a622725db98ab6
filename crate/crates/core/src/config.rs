//! Training configuration and its flat `key=value` file format.

use std::fmt::Write as _;

use crate::adam::AdamConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of ensemble members.
    pub k: usize,
    /// Projected dimension; `None` picks 70 or `⌈0.8·m⌉`.
    pub h: Option<usize>,
    pub max_iter: usize,
    pub batches_per_iter: usize,
    pub batch_size: usize,
    /// Rounds of `batches_per_iter` batches on the labeled data before the loop.
    pub init_epochs: usize,
    pub rho: f64,
    pub n_max: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub gzsl_mode: bool,
    /// Last iteration selecting unseen pseudo-labels only in generalized mode.
    pub t_unseen_only: usize,
    pub single_classifier: bool,
    pub no_projection: bool,
    /// Output widths of the extractor layers; empty means identity.
    pub extractor_widths: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub head_relu_last: bool,
    /// Subtracted from seen-class scores in generalized prediction.
    pub seen_offset: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 50,
            h: None,
            max_iter: 20,
            batches_per_iter: 100,
            batch_size: 64,
            init_epochs: 1,
            rho: 0.25,
            n_max: 20,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            gzsl_mode: false,
            t_unseen_only: 10,
            single_classifier: false,
            no_projection: false,
            extractor_widths: Vec::new(),
            head_hidden: vec![512, 512],
            head_relu_last: false,
            seen_offset: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.h == Some(0) {
            return bad("h must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho {} outside (0, 1]", self.rho));
        }
        if self.n_max == 0 {
            return bad("n_max must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("invalid Adam hyperparameters".into());
        }
        if self.single_classifier && self.no_projection {
            return bad("single_classifier and no_projection are separate ablations".into());
        }
        if self.extractor_widths.contains(&0) || self.head_hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if !self.seen_offset.is_finite() {
            return bad("seen_offset must be finite".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon }
    }

    /// Parses `key=value` lines. Blank lines and `#` comments are skipped;
    /// unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k" => self.k = num(key, value)?,
            "h" => self.h = auto(key, value)?,
            "max_iter" => self.max_iter = num(key, value)?,
            "batches_per_iter" => self.batches_per_iter = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "init_epochs" => self.init_epochs = num(key, value)?,
            "rho" => self.rho = num(key, value)?,
            "n_max" => self.n_max = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "epsilon" => self.epsilon = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "gzsl_mode" => self.gzsl_mode = flag(key, value)?,
            "t_unseen_only" => self.t_unseen_only = num(key, value)?,
            "single_classifier" => self.single_classifier = flag(key, value)?,
            "no_projection" => self.no_projection = flag(key, value)?,
            "extractor_widths" => self.extractor_widths = list(key, value)?,
            "head_hidden" => self.head_hidden = list(key, value)?,
            "head_relu_last" => self.head_relu_last = flag(key, value)?,
            "seen_offset" => self.seen_offset = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_file_string(&self) -> String {
        let opt = |v: Option<usize>| v.map_or_else(|| "auto".to_string(), |x| x.to_string());
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "k={}", self.k);
        let _ = writeln!(s, "h={}", opt(self.h));
        let _ = writeln!(s, "max_iter={}", self.max_iter);
        let _ = writeln!(s, "batches_per_iter={}", self.batches_per_iter);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "init_epochs={}", self.init_epochs);
        let _ = writeln!(s, "rho={}", self.rho);
        let _ = writeln!(s, "n_max={}", self.n_max);
        let _ = writeln!(s, "learning_rate={}", self.learning_rate);
        let _ = writeln!(s, "beta1={}", self.beta1);
        let _ = writeln!(s, "beta2={}", self.beta2);
        let _ = writeln!(s, "epsilon={}", self.epsilon);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "gzsl_mode={}", self.gzsl_mode);
        let _ = writeln!(s, "t_unseen_only={}", self.t_unseen_only);
        let _ = writeln!(s, "single_classifier={}", self.single_classifier);
        let _ = writeln!(s, "no_projection={}", self.no_projection);
        let _ = writeln!(s, "extractor_widths={}", list(&self.extractor_widths));
        let _ = writeln!(s, "head_hidden={}", list(&self.head_hidden));
        let _ = writeln!(s, "head_relu_last={}", self.head_relu_last);
        let _ = writeln!(s, "seen_offset={}", self.seen_offset);
        s
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn auto(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        num(key, value).map(Some)
    }
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| num(key, s)).collect()
}
