//! Experiment configuration: one TOML file drives every subcommand.
//!
//! All sections and fields are optional; unset values fall back to the
//! selected profile (`desk` by default). The `[scenario]` section uses the
//! schema of [`adlog_core::sim::ScenarioConfig`]; when omitted, the built-in
//! 16-node desk scenario is used.

use adlog_core::model::TrainConfig;
use adlog_core::sim::{FlowConfig, HiddenConfig, Protocol, ScenarioConfig};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Built-in parameter profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small sizes for fast runs: 64 hidden units, 2,000 iterations,
    /// learning rate 0.01 -> 0.001, 6-second scenario.
    Desk,
    /// Full-scale configuration: 256 hidden units, 70,000 iterations,
    /// learning rate 0.01 -> 0.0001, 50-second scenario.
    Paper,
}

impl Profile {
    pub fn train_defaults(self) -> TrainConfig {
        match self {
            Profile::Desk => TrainConfig {
                hidden_size: 64,
                iterations: 2_000,
                lr_start: 0.01,
                lr_end: 0.001,
                ..TrainConfig::default()
            },
            Profile::Paper => TrainConfig::default(),
        }
    }

    pub fn scenario_duration(self) -> f64 {
        match self {
            Profile::Desk => 6.0,
            Profile::Paper => 50.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

/// The default 16-node scenario: two gateways (node `i` belongs to gateway
/// `i % 2`), eight equal-rate UDP flows of 1500-byte packets at 1 Mbps, and
/// the collaborating pair (14, 15) spanning the gateways.
pub fn default_scenario(duration: f64) -> ScenarioConfig {
    let flow = |src: u32, dst: u32| FlowConfig {
        src,
        dst,
        protocol: Protocol::Udp,
        packet_size: 1500,
        rate: 1_000_000.0,
        start: 0.0,
        stop: None,
    };
    ScenarioConfig {
        nodes: 16,
        gateway_count: 2,
        gateways: None,
        duration,
        seed: 0,
        link_delay: 0.002,
        jitter: 0.01,
        control_handshake: true,
        hidden: Some(HiddenConfig {
            pair: (14, 15),
            coordination_rate_factor: 2.0,
            coordination_size: 64,
        }),
        flows: vec![
            flow(14, 2),
            flow(6, 15),
            flow(0, 12),
            flow(2, 11),
            flow(8, 9),
            flow(3, 2),
            flow(10, 7),
            flow(5, 13),
        ],
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Option<Profile>,
    pub out_dir: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub max_len: Option<usize>,
    /// Bucket sequence-number tokens as `seq % k`; 0 or absent keeps them raw.
    pub seq_bucket: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub hidden_size: Option<usize>,
    pub iterations: Option<usize>,
    pub lr_start: Option<f64>,
    pub lr_end: Option<f64>,
    pub teacher_forcing: Option<f64>,
    pub log_every: Option<usize>,
    pub clip_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub k: Option<usize>,
    pub test_fraction: Option<f64>,
}

/// Fully resolved settings, serialized verbatim into run manifests.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub profile: String,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub scenario: ScenarioConfig,
    pub max_len: usize,
    pub seq_bucket: Option<u32>,
    pub train: TrainConfig,
    pub k: usize,
    pub test_fraction: f64,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Applies profile defaults; `profile_override` (the `--profile` flag)
    /// wins over the file's `profile` key.
    pub fn resolve(&self, profile_override: Option<Profile>) -> Result<ResolvedConfig> {
        let profile = profile_override.or(self.profile).unwrap_or(Profile::Desk);
        let base = profile.train_defaults();
        let max_len = self.ingest.max_len.unwrap_or(base.max_len);
        let train = TrainConfig {
            hidden_size: self.train.hidden_size.unwrap_or(base.hidden_size),
            iterations: self.train.iterations.unwrap_or(base.iterations),
            lr_start: self.train.lr_start.unwrap_or(base.lr_start),
            lr_end: self.train.lr_end.unwrap_or(base.lr_end),
            teacher_forcing: self.train.teacher_forcing.unwrap_or(base.teacher_forcing),
            max_len,
            seed: 0,
            log_every: self.train.log_every.unwrap_or(base.log_every),
            clip_norm: self.train.clip_norm.unwrap_or(base.clip_norm),
        };
        train.validate().map_err(|e| anyhow::anyhow!("invalid [train] section: {e}"))?;
        let scenario = self
            .scenario
            .clone()
            .unwrap_or_else(|| default_scenario(profile.scenario_duration()));
        let seeds = match &self.seeds {
            Some(seeds) if !seeds.is_empty() => seeds.clone(),
            _ => vec![1],
        };
        let seq_bucket = match self.ingest.seq_bucket {
            Some(0) | None => None,
            Some(k) => Some(k),
        };
        Ok(ResolvedConfig {
            profile: profile.name().to_string(),
            out_dir: self.out_dir.clone().unwrap_or_else(|| PathBuf::from(".")),
            seeds,
            scenario,
            max_len,
            seq_bucket,
            train,
            k: self.eval.k.unwrap_or(5),
            test_fraction: self.eval.test_fraction.unwrap_or(0.1),
        })
    }
}

/// Ground-truth sidecar written next to simulated traces and consumed by
/// `detect` for the recall check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub attack_present: bool,
    pub hidden_pair: Option<(u32, u32)>,
    /// Gateway index per node.
    pub gateways: Vec<u32>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading sidecar {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing sidecar {}", path.display()))
    }
}
