use std::fmt;
use std::str::FromStr;

use crate::clustering::InitMode;
use crate::error::{Error, Result};
use crate::inference::QueryMode;
use crate::neural::AdamConfig;
use crate::reinforce::{AlphaSchedule, RLConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AblationMode {
    Full,
    /// One centroid, no centroid optimization.
    NoClustering,
    /// A random partition instead of k-means, no centroid optimization.
    RandomClustering,
    /// k-means centroids kept as initialized.
    KmeansOnly,
}

impl AblationMode {
    pub fn runs_rl(self) -> bool {
        self == AblationMode::Full
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::Full => "full",
            AblationMode::NoClustering => "no_clustering",
            AblationMode::RandomClustering => "random_clustering",
            AblationMode::KmeansOnly => "kmeans_only",
        })
    }
}

impl FromStr for AblationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationMode::Full),
            "no_clustering" => Ok(AblationMode::NoClustering),
            "random_clustering" => Ok(AblationMode::RandomClustering),
            "kmeans_only" => Ok(AblationMode::KmeansOnly),
            other => Err(Error::Config(format!("unknown ablation mode `{other}`"))),
        }
    }
}

/// Every tunable of a training run. Text form: one `key = value` per line.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub k_clusters: usize,
    pub kmeans_init: InitMode,
    pub kmeans_standardize: bool,
    pub kmeans_restarts: usize,
    pub mapper_hidden: usize,
    pub mapper_epochs: usize,
    pub mapper_lr: f64,
    /// Hidden width of the x → φ network; `None` means `d_v`.
    pub psi_hidden: Option<usize>,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub classifier_hidden: usize,
    pub classifier_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Frobenius regularizer on every network weight.
    pub lambda: f64,
    /// Weight of the least-squares pull of φ toward the class projection.
    pub align_weight: f64,
    pub rl: RLConfig,
    /// Number of classifier → centroid rounds.
    pub alternations: usize,
    pub rectify_k: usize,
    /// Fixed gate threshold; `None` tunes it on held-out seen data.
    pub gate_tau: Option<f64>,
    pub gate_recall: f64,
    pub gate_holdout: f64,
    pub query_mode: QueryMode,
    pub seen_test_fraction: f64,
    pub seed: u64,
    pub ablation_mode: AblationMode,
    /// Expected feature / embedding widths; `None` accepts the data's.
    pub d_v: Option<usize>,
    pub d_s: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_clusters: 6,
            kmeans_init: InitMode::PlusPlus,
            kmeans_standardize: false,
            kmeans_restarts: 10,
            mapper_hidden: 32,
            mapper_epochs: 200,
            mapper_lr: 1e-3,
            psi_hidden: None,
            conv_channels: 4,
            conv_kernel: 3,
            classifier_hidden: 32,
            classifier_epochs: 60,
            batch_size: 32,
            adam: AdamConfig::default(),
            lambda: 1e-4,
            align_weight: 1.0,
            rl: RLConfig::default(),
            alternations: 1,
            rectify_k: 5,
            gate_tau: None,
            gate_recall: 0.9,
            gate_holdout: 0.1,
            query_mode: QueryMode::Hard,
            seen_test_fraction: 0.2,
            seed: 0,
            ablation_mode: AblationMode::Full,
            d_v: None,
            d_s: None,
        }
    }
}

/// Canonical key order for serialization.
pub const CONFIG_KEYS: &[&str] = &[
    "k_clusters",
    "kmeans.init",
    "kmeans.standardize",
    "kmeans.restarts",
    "mapper.hidden",
    "mapper.epochs",
    "mapper.lr",
    "psi.hidden",
    "classifier.conv_channels",
    "classifier.kernel",
    "classifier.hidden",
    "classifier.epochs",
    "batch_size",
    "adam.lr",
    "adam.beta1",
    "adam.beta2",
    "adam.eps",
    "adam.weight_decay",
    "lambda",
    "align_weight",
    "rl.total_iterations",
    "rl.schedule",
    "rl.alternations",
    "rectify_k",
    "gate.tau",
    "gate.recall",
    "gate.holdout",
    "query_mode",
    "seen_test_fraction",
    "seed",
    "ablation_mode",
    "d_v",
    "d_s",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn auto_text<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".to_string(), T::to_string)
}

impl PipelineConfig {
    /// Sets one key from its text value. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "k_clusters" => self.k_clusters = parse_num(key, v)?,
            "kmeans.init" => self.kmeans_init = v.parse()?,
            "kmeans.standardize" => self.kmeans_standardize = parse_num(key, v)?,
            "kmeans.restarts" => self.kmeans_restarts = parse_num(key, v)?,
            "mapper.hidden" => self.mapper_hidden = parse_num(key, v)?,
            "mapper.epochs" => self.mapper_epochs = parse_num(key, v)?,
            "mapper.lr" => self.mapper_lr = parse_num(key, v)?,
            "psi.hidden" => self.psi_hidden = parse_auto(key, v)?,
            "classifier.conv_channels" => self.conv_channels = parse_num(key, v)?,
            "classifier.kernel" => self.conv_kernel = parse_num(key, v)?,
            "classifier.hidden" => self.classifier_hidden = parse_num(key, v)?,
            "classifier.epochs" => self.classifier_epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "adam.lr" => self.adam.lr = parse_num(key, v)?,
            "adam.beta1" => self.adam.beta1 = parse_num(key, v)?,
            "adam.beta2" => self.adam.beta2 = parse_num(key, v)?,
            "adam.eps" => self.adam.eps = parse_num(key, v)?,
            "adam.weight_decay" => self.adam.weight_decay = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "align_weight" => self.align_weight = parse_num(key, v)?,
            "rl.total_iterations" => self.rl.total_iterations = parse_num(key, v)?,
            "rl.schedule" => self.rl.schedule = AlphaSchedule::parse(v)?,
            "rl.alternations" => self.alternations = parse_num(key, v)?,
            "rectify_k" => self.rectify_k = parse_num(key, v)?,
            "gate.tau" => self.gate_tau = parse_auto(key, v)?,
            "gate.recall" => self.gate_recall = parse_num(key, v)?,
            "gate.holdout" => self.gate_holdout = parse_num(key, v)?,
            "query_mode" => self.query_mode = v.parse()?,
            "seen_test_fraction" => self.seen_test_fraction = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "ablation_mode" => self.ablation_mode = v.parse()?,
            "d_v" => self.d_v = parse_auto(key, v)?,
            "d_s" => self.d_s = parse_auto(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "k_clusters" => self.k_clusters.to_string(),
            "kmeans.init" => self.kmeans_init.to_string(),
            "kmeans.standardize" => self.kmeans_standardize.to_string(),
            "kmeans.restarts" => self.kmeans_restarts.to_string(),
            "mapper.hidden" => self.mapper_hidden.to_string(),
            "mapper.epochs" => self.mapper_epochs.to_string(),
            "mapper.lr" => self.mapper_lr.to_string(),
            "psi.hidden" => auto_text(&self.psi_hidden),
            "classifier.conv_channels" => self.conv_channels.to_string(),
            "classifier.kernel" => self.conv_kernel.to_string(),
            "classifier.hidden" => self.classifier_hidden.to_string(),
            "classifier.epochs" => self.classifier_epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "adam.lr" => self.adam.lr.to_string(),
            "adam.beta1" => self.adam.beta1.to_string(),
            "adam.beta2" => self.adam.beta2.to_string(),
            "adam.eps" => self.adam.eps.to_string(),
            "adam.weight_decay" => self.adam.weight_decay.to_string(),
            "lambda" => self.lambda.to_string(),
            "align_weight" => self.align_weight.to_string(),
            "rl.total_iterations" => self.rl.total_iterations.to_string(),
            "rl.schedule" => self.rl.schedule.format(),
            "rl.alternations" => self.alternations.to_string(),
            "rectify_k" => self.rectify_k.to_string(),
            "gate.tau" => auto_text(&self.gate_tau),
            "gate.recall" => self.gate_recall.to_string(),
            "gate.holdout" => self.gate_holdout.to_string(),
            "query_mode" => self.query_mode.to_string(),
            "seen_test_fraction" => self.seen_test_fraction.to_string(),
            "seed" => self.seed.to_string(),
            "ablation_mode" => self.ablation_mode.to_string(),
            "d_v" => auto_text(&self.d_v),
            "d_s" => auto_text(&self.d_s),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        })
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        CONFIG_KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("canonical key")))
            .collect()
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` lacks `=`")))?;
        self.set(k, v)
    }

    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k_clusters == 0 {
            return bad("k_clusters must be at least 1");
        }
        if self.kmeans_restarts == 0 {
            return bad("kmeans.restarts must be at least 1");
        }
        if self.mapper_hidden == 0 || self.classifier_hidden == 0 || self.conv_channels == 0 {
            return bad("layer widths must be positive");
        }
        if self.psi_hidden == Some(0) {
            return bad("psi.hidden must be positive");
        }
        if self.conv_kernel % 2 == 0 {
            return bad("classifier.kernel must be odd");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lambda >= 0.0) || !(self.align_weight >= 0.0) {
            return bad("lambda and align_weight must be nonnegative");
        }
        if !(self.adam.lr > 0.0 && self.mapper_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam.eps > 0.0) || !(self.adam.weight_decay >= 0.0) {
            return bad("adam.eps must be positive and adam.weight_decay nonnegative");
        }
        if self.rl.total_iterations == 0 {
            return bad("rl.total_iterations must be at least 1");
        }
        if self.alternations == 0 {
            return bad("rl.alternations must be at least 1");
        }
        if self.rectify_k == 0 {
            return bad("rectify_k must be at least 1");
        }
        if let Some(t) = self.gate_tau {
            if !(t > 0.0 && t < 1.0) {
                return bad("gate.tau must lie in (0, 1)");
            }
        }
        if !(self.gate_recall > 0.0 && self.gate_recall <= 1.0) {
            return bad("gate.recall must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.gate_holdout) || !(0.0..1.0).contains(&self.seen_test_fraction) {
            return bad("holdout fractions must lie in [0, 1)");
        }
        Ok(())
    }

    /// Cluster count after the ablation rule.
    pub fn effective_k(&self) -> usize {
        if self.ablation_mode == AblationMode::NoClustering {
            1
        } else {
            self.k_clusters
        }
    }

    pub fn effective_init(&self) -> InitMode {
        if self.ablation_mode == AblationMode::RandomClustering {
            InitMode::RandomAssign
        } else {
            self.kmeans_init
        }
    }
}
