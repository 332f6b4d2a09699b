//! Scenario configuration, loadable from a TOML file.
//!
//! Schema:
//!
//! ```toml
//! nodes = 16
//! gateway_count = 2        # node i belongs to gateway i % gateway_count
//! # gateways = [0, 1, ...] # explicit per-node assignment, overrides the above
//! duration = 6.0           # seconds
//! seed = 1
//! link_delay = 0.002       # seconds from send to receive
//! jitter = 0.01            # +/- fraction of the inter-packet gap
//! control_handshake = true # emit an arp request/reply at each flow start
//!
//! [hidden]                 # optional collaborating pair
//! pair = [14, 15]
//! coordination_rate_factor = 2.0
//! coordination_size = 64
//!
//! [[flows]]
//! src = 14
//! dst = 2
//! protocol = "udp"
//! packet_size = 1500       # bytes
//! rate = 1_000_000         # bits per second
//! start = 0.0
//! # stop defaults to `duration`
//! ```

use serde::{Deserialize, Serialize};

/// Protocol of a configured flow; also the `ptype` token in trace lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Udp,
    Tcp,
    Http,
}

impl Protocol {
    pub fn token(self) -> &'static str {
        match self {
            Protocol::Udp => "udp",
            Protocol::Tcp => "tcp",
            Protocol::Http => "http",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub nodes: u32,
    #[serde(default = "default_gateway_count")]
    pub gateway_count: u32,
    /// Explicit node-to-gateway assignment; defaults to `node % gateway_count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gateways: Option<Vec<u32>>,
    /// Simulated seconds.
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_link_delay")]
    pub link_delay: f64,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_true")]
    pub control_handshake: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<HiddenConfig>,
    #[serde(default)]
    pub flows: Vec<FlowConfig>,
}

/// A collaborating adversary pair connected by an out-of-band channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenConfig {
    pub pair: (u32, u32),
    /// Covert coordination packets per data packet of each redirected flow.
    #[serde(default = "default_coordination_rate_factor")]
    pub coordination_rate_factor: f64,
    /// Size in bytes of a coordination packet.
    #[serde(default = "default_coordination_size")]
    pub coordination_size: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub src: u32,
    pub dst: u32,
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
    /// Bytes per packet.
    pub packet_size: u32,
    /// Bits per second.
    pub rate: f64,
    #[serde(default)]
    pub start: f64,
    /// Defaults to the scenario duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
}

fn default_gateway_count() -> u32 {
    2
}

fn default_link_delay() -> f64 {
    0.002
}

fn default_jitter() -> f64 {
    0.01
}

fn default_true() -> bool {
    true
}

fn default_coordination_rate_factor() -> f64 {
    2.0
}

fn default_coordination_size() -> u32 {
    64
}

fn default_protocol() -> Protocol {
    Protocol::Udp
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(s)
    }

    /// The same scenario with the hidden channel removed.
    pub fn without_hidden(&self) -> Self {
        let mut cfg = self.clone();
        cfg.hidden = None;
        cfg
    }
}
