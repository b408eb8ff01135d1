//! Run configuration, presets and the config hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sldm::metrics::SsimConfig;
use sldm::phantom::PhantomSpec;
use sldm::saem::BilateralConfig;
use sldm::sde::ScheduleConfig;
use sldm::structure::{EdgeExtractorConfig, TheoremConfig};
use sldm_nn::{AlignmentConfig, ScoreNetConfig, TrainingConfig};

use crate::error::{usage, Result};

/// Seeds of the stochastic stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub data: u64,
    pub alignment: u64,
    pub training: u64,
    pub sampling: u64,
    pub verify: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { data: 1, alignment: 2, training: 3, sampling: 4, verify: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Extra phantoms generated only for alignment pretraining.
    pub alignment_pool: usize,
}

impl Default for DatasetCounts {
    fn default() -> Self {
        Self { train: 40, val: 5, test: 5, alignment_pool: 2048 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Condition the score network on descriptor embeddings.
    pub semantic: bool,
    /// Save the chain state every `T/10` steps.
    pub snapshots: bool,
    /// Chains pushed through the network at once.
    pub chunk: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { semantic: true, snapshots: false, chunk: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaemConfig {
    pub bilateral: BilateralConfig,
    pub lambdas: Vec<f64>,
    pub histogram_bins: usize,
}

impl Default for SaemConfig {
    fn default() -> Self {
        Self { bilateral: BilateralConfig::default(), lambdas: vec![1.0], histogram_bins: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub peak: f64,
    pub ssim: SsimConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { peak: 1.0, ssim: SsimConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    /// Monte-Carlo draws per time step for the marginal check.
    pub marginal_samples: usize,
    /// Random scalar instances for the reverse-step argmin check.
    pub reverse_instances: usize,
    pub theorem: TheoremConfig,
    /// Side length of the analytic-score sampling check.
    pub analytic_size: usize,
    /// Test pairs used for the bound estimate (0 uses all).
    pub bound_pairs: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { marginal_samples: 100_000, reverse_instances: 100, theorem: TheoremConfig::default(), analytic_size: 32, bound_pairs: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stages {
    pub gen_data: bool,
    pub pretrain_clip: bool,
    pub train: bool,
    pub sample: bool,
    pub saem: bool,
    pub eval: bool,
    pub verify: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self { gen_data: true, pretrain_clip: true, train: true, sample: true, saem: true, eval: true, verify: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Run directory. Not part of the config hash.
    pub out_dir: PathBuf,
    pub seeds: Seeds,
    pub schedule: ScheduleConfig,
    pub phantom: PhantomSpec,
    pub dataset: DatasetCounts,
    pub edges: EdgeExtractorConfig,
    pub alignment: AlignmentConfig,
    pub training: TrainingConfig,
    pub sampling: SamplingConfig,
    pub saem: SaemConfig,
    pub eval: EvalConfig,
    pub verify: VerifyConfig,
    pub stages: Stages,
}

/// Canny thresholds used throughout the phantom pipeline.
pub fn pipeline_edges() -> EdgeExtractorConfig {
    EdgeExtractorConfig { gaussian_sigma: 1.4, low_threshold: 0.04, high_threshold: 0.1 }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("run"),
            seeds: Seeds::default(),
            schedule: ScheduleConfig::default(),
            phantom: PhantomSpec::default(),
            dataset: DatasetCounts::default(),
            edges: pipeline_edges(),
            alignment: AlignmentConfig::default(),
            training: TrainingConfig::default(),
            sampling: SamplingConfig::default(),
            saem: SaemConfig::default(),
            eval: EvalConfig::default(),
            verify: VerifyConfig::default(),
            stages: Stages::default(),
        }
    }
}

pub const PRESETS: [&str; 3] = ["default", "desk", "tiny"];

impl RunConfig {
    /// CPU-sized run on 32×32 phantoms.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.phantom.size = 32;
        c.dataset = DatasetCounts { train: 64, val: 8, test: 16, ..DatasetCounts::default() };
        c.training = TrainingConfig {
            network: ScoreNetConfig::desk(),
            learning_rate: 2e-3,
            lr_halving_every: 500,
            iterations: 1500,
            ..TrainingConfig::default()
        };
        c
    }

    /// Smoke-test run: eight phantoms, 500 iterations, `T = 20`.
    pub fn tiny() -> Self {
        let mut c = Self::default();
        c.phantom.size = 32;
        c.dataset = DatasetCounts { train: 6, val: 1, test: 1, alignment_pool: 26 };
        c.schedule.steps = 20;
        c.alignment.iterations = 50;
        c.alignment.batch_size = 6;
        c.training = TrainingConfig {
            network: ScoreNetConfig { widths: vec![8, 16, 16], res_blocks: 1, time_dim: 16, attention_dim: 16, cross_attention: true },
            learning_rate: 2e-3,
            batch_size: 8,
            iterations: 500,
            ..TrainingConfig::default()
        };
        c.verify.marginal_samples = 20_000;
        c.verify.reverse_instances = 20;
        c.verify.theorem.trials = 100;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "desk" => Ok(Self::desk()),
            "tiny" => Ok(Self::tiny()),
            other => Err(usage(format!("unknown preset {other:?}; expected one of {PRESETS:?}"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// SHA-256 of the serialized config with the run directory blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    /// Short form of [`hash`](Self::hash) used in file headers.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dataset;
        if d.train == 0 || d.val == 0 || d.test == 0 {
            return Err(usage("every dataset split needs at least one pair"));
        }
        if self.saem.lambdas.iter().any(|&l| !(l >= 0.0)) || self.saem.histogram_bins < 2 {
            return Err(usage("SAEM weights must be non-negative and histograms need ≥ 2 bins"));
        }
        if self.sampling.chunk == 0 {
            return Err(usage("sampling chunk must be positive"));
        }
        self.phantom.validate().map_err(|e| usage(e.to_string()))?;
        self.edges.validate().map_err(|e| usage(e.to_string()))?;
        self.saem.bilateral.validate().map_err(|e| usage(e.to_string()))?;
        self.training.validate().map_err(|e| usage(e.to_string()))?;
        let m = self.training.network.size_multiple();
        if self.phantom.size % m != 0 {
            return Err(usage(format!("phantom size {} is not a multiple of {m}", self.phantom.size)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_hash() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            c.validate().unwrap();
            let back = RunConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
        let a = RunConfig::tiny();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seeds.training += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = RunConfig::from_toml("[seeds]\ntraining = 9\n[phantom]\nsize = 48\n").unwrap();
        assert_eq!(c.seeds.training, 9);
        assert_eq!(c.seeds.data, Seeds::default().data);
        assert_eq!(c.phantom.size, 48);
        assert_eq!(c.edges, pipeline_edges());
        assert!(RunConfig::from_toml("[seeds]\ntraining = \"x\"\n").is_err());
        assert!(RunConfig::preset("huge").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut c = RunConfig::tiny();
        c.saem.lambdas = vec![-1.0];
        assert!(c.validate().is_err());
        let mut c = RunConfig::tiny();
        c.phantom.size = 34;
        assert!(c.validate().is_err());
        let mut c = RunConfig::tiny();
        c.dataset.test = 0;
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }
}
