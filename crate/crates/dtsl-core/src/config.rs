//! Training configuration, plain-text round-tripping (key=value), and the
//! run manifest. A manifest is itself a loadable config file, so a run can
//! be reproduced from its output directory alone.

use std::collections::BTreeMap;
use std::path::Path;

use crate::divergence::ClgStrategy;
use crate::{Error, Result};

/// Training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Both groups, pace loss on labeled and unlabeled batches.
    SemiDtsl,
    /// Both groups, pace loss on labeled data only (no unlabeled pool).
    SupervisedDtsl,
    /// Both groups, supervised loss only.
    SupervisedPlain,
    /// Single group; pseudo-labels are the own teacher's argmax.
    VanillaMt,
    /// Both groups, consensus masking bypassed: pseudo-label is the argmax
    /// of the mean prediction at every pixel.
    PlainDtsl,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "semi" | "semidtsl" => Ok(TrainMode::SemiDtsl),
            "superviseddtsl" | "supdtsl" => Ok(TrainMode::SupervisedDtsl),
            "supervisedplain" | "supplain" | "supervised" => Ok(TrainMode::SupervisedPlain),
            "vanillamt" | "mt" => Ok(TrainMode::VanillaMt),
            "plaindtsl" | "plain" => Ok(TrainMode::PlainDtsl),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::SemiDtsl => "semi-dtsl",
            TrainMode::SupervisedDtsl => "supervised-dtsl",
            TrainMode::SupervisedPlain => "supervised-plain",
            TrainMode::VanillaMt => "vanilla-mt",
            TrainMode::PlainDtsl => "plain-dtsl",
        }
    }

    /// Whether the mode consumes an unlabeled batch each iteration.
    pub fn uses_unlabeled(&self) -> bool {
        matches!(
            self,
            TrainMode::SemiDtsl | TrainMode::VanillaMt | TrainMode::PlainDtsl
        )
    }

    /// Number of teacher-student groups.
    pub fn group_count(&self) -> usize {
        if *self == TrainMode::VanillaMt {
            1
        } else {
            2
        }
    }
}

/// Every knob of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub strategy: ClgStrategy,
    pub seed: u64,
    pub max_iter: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub eta0: f64,
    pub omega: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
    pub num_classes: usize,
    pub base_channels: usize,
    pub image_size: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub labeled_fraction: f64,
    pub noise_sigma: f64,
    pub snapshot_every: usize,
    pub probe_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::SemiDtsl,
            strategy: ClgStrategy::Default,
            seed: 1,
            max_iter: 3000,
            labeled_batch: 2,
            unlabeled_batch: 2,
            eta0: 1e-3,
            omega: 0.95,
            kappa: 0.05,
            alpha: 1.0,
            beta: 0.05,
            num_classes: 4,
            base_channels: 8,
            image_size: 64,
            train_count: 200,
            test_count: 50,
            labeled_fraction: 0.1,
            noise_sigma: 0.08,
            snapshot_every: 200,
            probe_count: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::Config(format!("kappa {} outside [0, 1]", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return Err(Error::Config(format!("omega {} outside [0, 1]", self.omega)));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config(format!(
                "alpha {} and beta {} must be non-negative",
                self.alpha, self.beta
            )));
        }
        if self.labeled_batch < 1 || (self.mode.uses_unlabeled() && self.unlabeled_batch < 1) {
            return Err(Error::Config("batch sizes must be at least 1".to_string()));
        }
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be at least 1".to_string()));
        }
        if self.image_size % 4 != 0 || self.image_size < 16 {
            return Err(Error::Config(format!(
                "image size {} must be at least 16 and divisible by 4",
                self.image_size
            )));
        }
        if !(2..=6).contains(&self.num_classes) {
            return Err(Error::Config(format!(
                "class count {} outside 2..=6",
                self.num_classes
            )));
        }
        if self.base_channels < 4 {
            return Err(Error::Config("base_channels must be at least 4".to_string()));
        }
        if !(0.0 < self.labeled_fraction && self.labeled_fraction < 1.0) {
            return Err(Error::Config(format!(
                "labeled fraction {} outside (0, 1)",
                self.labeled_fraction
            )));
        }
        if self.train_count < 4 || self.test_count < 1 {
            return Err(Error::Config("corpus too small".to_string()));
        }
        if self.snapshot_every < 1 {
            return Err(Error::Config("snapshot_every must be at least 1".to_string()));
        }
        if self.eta0 <= 0.0 {
            return Err(Error::Config(format!("eta0 {} must be positive", self.eta0)));
        }
        Ok(())
    }

    /// key=value lines, one per field, sorted.
    pub fn to_kv(&self) -> BTreeMap<&'static str, String> {
        let mut kv = BTreeMap::new();
        kv.insert("mode", self.mode.name().to_string());
        kv.insert("strategy", self.strategy.name().to_string());
        kv.insert("seed", self.seed.to_string());
        kv.insert("max_iter", self.max_iter.to_string());
        kv.insert("labeled_batch", self.labeled_batch.to_string());
        kv.insert("unlabeled_batch", self.unlabeled_batch.to_string());
        kv.insert("eta0", format!("{}", self.eta0));
        kv.insert("omega", format!("{}", self.omega));
        kv.insert("kappa", format!("{}", self.kappa));
        kv.insert("alpha", format!("{}", self.alpha));
        kv.insert("beta", format!("{}", self.beta));
        kv.insert("classes", self.num_classes.to_string());
        kv.insert("base_channels", self.base_channels.to_string());
        kv.insert("image_size", self.image_size.to_string());
        kv.insert("train_count", self.train_count.to_string());
        kv.insert("test_count", self.test_count.to_string());
        kv.insert("labeled_fraction", format!("{}", self.labeled_fraction));
        kv.insert("noise_sigma", format!("{}", self.noise_sigma));
        kv.insert("snapshot_every", self.snapshot_every.to_string());
        kv.insert("probe_count", self.probe_count.to_string());
        kv
    }

    /// Apply one key=value assignment.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value '{value}' for {what}"));
        match key {
            "mode" => self.mode = TrainMode::parse(value)?,
            "strategy" => self.strategy = ClgStrategy::parse(value)?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "max_iter" => self.max_iter = value.parse().map_err(|_| bad("max_iter"))?,
            "labeled_batch" => {
                self.labeled_batch = value.parse().map_err(|_| bad("labeled_batch"))?
            }
            "unlabeled_batch" => {
                self.unlabeled_batch = value.parse().map_err(|_| bad("unlabeled_batch"))?
            }
            "eta0" => self.eta0 = value.parse().map_err(|_| bad("eta0"))?,
            "omega" => self.omega = value.parse().map_err(|_| bad("omega"))?,
            "kappa" => self.kappa = value.parse().map_err(|_| bad("kappa"))?,
            "alpha" => self.alpha = value.parse().map_err(|_| bad("alpha"))?,
            "beta" => self.beta = value.parse().map_err(|_| bad("beta"))?,
            "classes" => self.num_classes = value.parse().map_err(|_| bad("classes"))?,
            "base_channels" => {
                self.base_channels = value.parse().map_err(|_| bad("base_channels"))?
            }
            "image_size" => self.image_size = value.parse().map_err(|_| bad("image_size"))?,
            "train_count" => self.train_count = value.parse().map_err(|_| bad("train_count"))?,
            "test_count" => self.test_count = value.parse().map_err(|_| bad("test_count"))?,
            "labeled_fraction" => {
                self.labeled_fraction = value.parse().map_err(|_| bad("labeled_fraction"))?
            }
            "noise_sigma" => self.noise_sigma = value.parse().map_err(|_| bad("noise_sigma"))?,
            "snapshot_every" => {
                self.snapshot_every = value.parse().map_err(|_| bad("snapshot_every"))?
            }
            "probe_count" => self.probe_count = value.parse().map_err(|_| bad("probe_count"))?,
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a key=value file ('#' comments, blank lines ignored) on top of
    /// the current values.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{}:{}: expected key=value, got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// The manifest written before training starts: tool version, output
    /// layout, and the fully resolved configuration as loadable key=value.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# dtsl run manifest (tool version {})\n", env!("CARGO_PKG_VERSION")));
        out.push_str("# outputs: losses.csv, probe.csv, metrics.csv, agreement_*.pgm, *.ckpt\n");
        out.push_str("# rerun: dtsl train --config manifest.txt --out-dir <dir>\n");
        for (k, v) in self.to_kv() {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }
}
