//! Scenario files: TOML with units spelled out in the key names.
//!
//! ```toml
//! [network]
//! user_density_per_m2 = 1e-2
//! arrival_rate_pkt_per_s = 1.5
//! mean_packet_length_bits = 1e5
//! sir_threshold_linear = 1.0
//! path_loss_exponent = 4.0
//!
//! [[tier]]
//! density_per_m2 = 1e-4
//! power_dbm = 46.0
//! bandwidth_hz = 1e7
//! bias_db = 0.0
//! ```
//!
//! Optional `[sim]` and `[sweep]` tables configure the simulator and the
//! sweep command. A bias of `-inf` dB excludes a tier from association.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{AnalyticError, NetworkParams, TierConfig};
use crate::geometry::Window;
use crate::simulator::SimConfig;
use crate::units::{db_to_linear, dbm_to_watts};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub user_density_per_m2: f64,
    pub arrival_rate_pkt_per_s: f64,
    pub mean_packet_length_bits: f64,
    pub sir_threshold_linear: f64,
    pub path_loss_exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierSection {
    pub density_per_m2: f64,
    pub power_dbm: f64,
    pub bandwidth_hz: f64,
    #[serde(default)]
    pub bias_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub window_width_m: f64,
    pub window_height_m: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub warmup_s: f64,
    #[serde(default = "one")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unstable_utilization_cutoff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sir_gate: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_events: Option<u64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    BiasDb,
    Gamma,
    BandwidthRatio,
    Tau,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::BiasDb => "bias_db",
            SweepVariable::Gamma => "gamma",
            SweepVariable::BandwidthRatio => "bandwidth_ratio",
            SweepVariable::Tau => "tau",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub variable: SweepVariable,
    /// 1-based tier the variable applies to (bias and bandwidth share);
    /// defaults to the last tier.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tier: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<f64>>,
    /// Total bandwidth shared out by a `bandwidth_ratio` sweep; defaults to
    /// the sum of the configured tier bandwidths.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_bandwidth_hz: Option<f64>,
}

/// The file as written, in I/O units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub network: NetworkSection,
    #[serde(rename = "tier", default)]
    pub tiers: Vec<TierSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// A resolved sweep: which knob, on which tier (0-based), and the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub tier: usize,
    pub values: Vec<f64>,
    pub total_bandwidth: f64,
}

/// A validated scenario: the file plus its values in linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub file: ConfigFile,
    pub params: NetworkParams,
    pub tiers: Vec<TierConfig>,
    pub sim: Option<SimConfig>,
    pub sweep: Option<SweepSpec>,
}

impl ScenarioConfig {
    pub fn from_file(file: ConfigFile) -> Result<Self, ConfigError> {
        let n = &file.network;
        let params = NetworkParams {
            user_intensity: n.user_density_per_m2,
            arrival_rate: n.arrival_rate_pkt_per_s,
            mean_packet_length: n.mean_packet_length_bits,
            sir_threshold: n.sir_threshold_linear,
            alpha: n.path_loss_exponent,
        };
        params.validate().map_err(|e| match e {
            AnalyticError::InvalidAlpha(a) => invalid(
                "network.path_loss_exponent",
                format!("must exceed 2 (interference diverges otherwise), got {a}"),
            ),
            AnalyticError::InvalidTau(t) => {
                invalid("network.sir_threshold_linear", format!("must be positive, got {t}"))
            }
            AnalyticError::InvalidParameter { name, value } => {
                invalid(format!("network ({name})"), format!("got {value}"))
            }
            other => invalid("network", other.to_string()),
        })?;
        if file.tiers.is_empty() {
            return Err(invalid("tier", "at least one [[tier]] block is required"));
        }
        let tiers = file
            .tiers
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let field = |f: &str| format!("tier[{}].{f}", i + 1);
                if !(t.power_dbm.is_finite()) {
                    return Err(invalid(field("power_dbm"), format!("must be finite, got {}", t.power_dbm)));
                }
                if t.bias_db.is_nan() || t.bias_db == f64::INFINITY {
                    return Err(invalid(field("bias_db"), format!("must be finite or -inf, got {}", t.bias_db)));
                }
                let tc = TierConfig {
                    lambda: t.density_per_m2,
                    power: dbm_to_watts(t.power_dbm),
                    bandwidth: t.bandwidth_hz,
                    bias: db_to_linear(t.bias_db),
                };
                tc.validate().map_err(|e| match e {
                    AnalyticError::InvalidParameter { name, value } => {
                        let key = match name {
                            "tier density" => "density_per_m2",
                            "tier bandwidth" => "bandwidth_hz",
                            "tier power" => "power_dbm",
                            _ => "bias_db",
                        };
                        invalid(field(key), format!("got {value}"))
                    }
                    other => invalid(format!("tier[{}]", i + 1), other.to_string()),
                })?;
                Ok(tc)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let sim = file.sim.as_ref().map(sim_config).transpose()?;
        let sweep = file
            .sweep
            .as_ref()
            .map(|s| sweep_spec(s, &file.tiers))
            .transpose()?;
        Ok(Self {
            file,
            params,
            tiers,
            sim,
            sweep,
        })
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    /// Serialises the file form; `parse_str(emit())` reproduces `self`.
    pub fn emit(&self) -> String {
        toml::to_string(&self.file).expect("config is always representable")
    }

    /// Overrides the simulation seed and replication count.
    pub fn with_overrides(mut self, seed: Option<u64>, replications: Option<usize>) -> Result<Self, ConfigError> {
        if seed.is_none() && replications.is_none() {
            return Ok(self);
        }
        let Some(sim) = self.file.sim.as_mut() else {
            return Err(invalid("sim", "--seed/--replications need a [sim] block"));
        };
        if let Some(s) = seed {
            sim.seed = s;
        }
        if let Some(r) = replications {
            sim.replications = r;
        }
        Self::from_file(self.file)
    }
}

fn sim_config(s: &SimSection) -> Result<SimConfig, ConfigError> {
    let window = Window::new(s.window_width_m, s.window_height_m).map_err(|e| invalid("sim.window_width_m/window_height_m", e.to_string()))?;
    let mut c = SimConfig::new(window, s.duration_s, s.warmup_s, s.replications, s.seed);
    if let Some(cut) = s.unstable_utilization_cutoff {
        c.unstable_utilization_cutoff = cut;
    }
    if let Some(g) = s.sir_gate {
        c.sir_gate = g;
    }
    if let Some(m) = s.max_events {
        c.max_events = m;
    }
    c.validate().map_err(|e| invalid("sim", e.to_string()))?;
    Ok(c)
}

fn sweep_spec(s: &SweepSection, tiers: &[TierSection]) -> Result<SweepSpec, ConfigError> {
    let tier = s.tier.unwrap_or(tiers.len());
    if tier == 0 || tier > tiers.len() {
        return Err(invalid("sweep.tier", format!("must be in 1..={}, got {tier}", tiers.len())));
    }
    let values = match (&s.points, s.start, s.stop, s.step) {
        (Some(p), None, None, None) => {
            if p.is_empty() {
                return Err(invalid("sweep.points", "must not be empty"));
            }
            p.clone()
        }
        (None, Some(a), Some(b), Some(h)) => {
            if !(h > 0.0 && a.is_finite() && b.is_finite() && b >= a) {
                return Err(invalid("sweep", "need start <= stop and step > 0"));
            }
            let n = ((b - a) / h + 1e-9).floor() as usize + 1;
            (0..n).map(|i| a + i as f64 * h).collect()
        }
        _ => return Err(invalid("sweep", "give either `points` or all of `start`, `stop`, `step`")),
    };
    let total_bandwidth = s
        .total_bandwidth_hz
        .unwrap_or_else(|| tiers.iter().map(|t| t.bandwidth_hz).sum());
    if s.variable == SweepVariable::BandwidthRatio {
        if !(total_bandwidth > 0.0) {
            return Err(invalid("sweep.total_bandwidth_hz", "must be positive"));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid("sweep", format!("bandwidth ratio {v} outside [0, 1]")));
        }
    }
    Ok(SweepSpec {
        variable: s.variable,
        tier: tier - 1,
        values,
        total_bandwidth,
    })
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScenarioConfig::parse_str(&text)
}
