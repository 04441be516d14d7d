//! Scenario file schema.
//!
//! A scenario is one JSON document with the top-level keys `rats`, `cells`,
//! `ues`, `bearers`, `traffic`, `duration_ms` and `seed`. The field names
//! below are the file format; `docs/scenario-format.md` in the repository
//! describes them for humans.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    BearerId, Capabilities, Cell, CellId, ChannelId, DispatchMode, QosProfile, RatId, RatProfile,
    RrcState, Ue, UeId,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub rats: Vec<RatProfile>,
    #[serde(default)]
    pub cells: Vec<Cell>,
    #[serde(default)]
    pub ues: Vec<UeEntry>,
    #[serde(default)]
    pub bearers: Vec<BearerSpec>,
    #[serde(default)]
    pub traffic: Vec<TrafficSpec>,
    pub duration_ms: u64,
    #[serde(default)]
    pub seed: u64,
}

/// A single UE or a grid of identical UEs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UeEntry {
    Grid { grid: GridLayout },
    Single(UeSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSpec {
    pub id: UeId,
    pub position: [f64; 2],
    #[serde(default)]
    pub velocity_mps: [f64; 2],
    pub capabilities: Capabilities,
}

/// `count` UEs numbered from `first_id`, laid out row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridLayout {
    pub first_id: u32,
    pub count: u32,
    pub origin: [f64; 2],
    pub spacing_m: f64,
    pub columns: u32,
    pub capabilities: Capabilities,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunnelSpec {
    pub cell: CellId,
    pub channel: ChannelId,
    /// Selects the scheduler entity `(cell, rat)` the channel binds to.
    pub rat: RatId,
}

/// A bearer pinned by configuration rather than planned by RRM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BearerSpec {
    pub id: BearerId,
    pub ue: UeId,
    pub qos: QosProfile,
    #[serde(default)]
    pub dispatch_mode: DispatchMode,
    pub tunnels: Vec<TunnelSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UeRange {
    pub first: u32,
    #[serde(default = "UeRange::one")]
    pub count: u32,
}

impl UeRange {
    fn one() -> u32 {
        1
    }

    pub fn ids(&self) -> impl Iterator<Item = UeId> {
        (self.first..self.first.saturating_add(self.count)).map(UeId)
    }
}

/// Who a traffic source feeds: a pinned bearer, or UEs whose bearers RRM
/// plans from `qos` when they connect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrafficTarget {
    Bearer { bearer: BearerId },
    Ues { ues: UeRange, qos: QosProfile },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficSpec {
    #[serde(flatten)]
    pub target: TrafficTarget,
    pub model: TrafficModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrafficModel {
    /// The bearer always has data queued.
    XmbbFullBuffer {
        #[serde(default = "default_sdu_bytes")]
        sdu_bytes: u32,
    },
    /// Poisson file arrivals with exponentially distributed sizes.
    XmbbFiles {
        files_per_s: f64,
        #[serde(default = "default_file_bytes")]
        mean_file_bytes: f64,
        #[serde(default = "default_sdu_bytes")]
        sdu_bytes: u32,
    },
    Mmtc {
        #[serde(default = "default_mmtc_rate")]
        packets_per_s: f64,
        #[serde(default = "default_mmtc_bytes")]
        packet_bytes: u32,
    },
    /// Periodic packets; the deadline equals the period.
    Urc {
        #[serde(default = "default_urc_period")]
        period_ms: f64,
        #[serde(default = "default_urc_bytes")]
        packet_bytes: u32,
    },
}

fn default_sdu_bytes() -> u32 {
    1500
}
fn default_file_bytes() -> f64 {
    1_000_000.0
}
fn default_mmtc_rate() -> f64 {
    1.0 / 60.0
}
fn default_mmtc_bytes() -> u32 {
    100
}
fn default_urc_period() -> f64 {
    10.0
}
fn default_urc_bytes() -> u32 {
    200
}

impl TrafficModel {
    pub fn service_type(&self) -> super::ServiceType {
        use super::ServiceType;
        match self {
            TrafficModel::XmbbFullBuffer { .. } | TrafficModel::XmbbFiles { .. } => {
                ServiceType::Xmbb
            }
            TrafficModel::Mmtc { .. } => ServiceType::Mmtc,
            TrafficModel::Urc { .. } => ServiceType::Urc,
        }
    }

    /// All numeric parameters strictly positive.
    pub fn parameters_valid(&self) -> bool {
        let pos = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            TrafficModel::XmbbFullBuffer { sdu_bytes } => sdu_bytes > 0,
            TrafficModel::XmbbFiles {
                files_per_s,
                mean_file_bytes,
                sdu_bytes,
            } => pos(files_per_s) && pos(mean_file_bytes) && sdu_bytes > 0,
            TrafficModel::Mmtc {
                packets_per_s,
                packet_bytes,
            } => pos(packets_per_s) && packet_bytes > 0,
            TrafficModel::Urc {
                period_ms,
                packet_bytes,
            } => pos(period_ms) && packet_bytes > 0,
        }
    }
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.fill_defaults();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Replace empty SE curves with the embedded default for the RAT kind.
    pub fn fill_defaults(&mut self) {
        for rat in &mut self.rats {
            if rat.se_curve.is_empty() {
                rat.se_curve = RatProfile::default_for(rat.kind, rat.id.0.clone()).se_curve;
            }
        }
    }

    /// SHA-256 over the canonical compact serialization, hex encoded.
    pub fn canonical_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scenario serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn rat(&self, id: &RatId) -> Option<&RatProfile> {
        self.rats.iter().find(|r| &r.id == id)
    }

    pub fn cell(&self, id: CellId) -> Option<&Cell> {
        self.cells.iter().find(|c| c.id == id)
    }

    /// Expand grid entries into individual idle UEs, in file order.
    pub fn expand_ues(&self) -> Vec<(Ue, [f64; 2])> {
        let mut out = Vec::new();
        for entry in &self.ues {
            match entry {
                UeEntry::Single(spec) => out.push((
                    Ue {
                        id: spec.id,
                        position: spec.position,
                        velocity_mps: spec.velocity_mps,
                        capabilities: spec.capabilities.clone(),
                        rrc_state: RrcState::Idle,
                        serving_cells: Vec::new(),
                        bearers: BTreeSet::new(),
                    },
                    spec.position,
                )),
                UeEntry::Grid { grid } => {
                    let cols = grid.columns.max(1);
                    for i in 0..grid.count {
                        let pos = [
                            grid.origin[0] + f64::from(i % cols) * grid.spacing_m,
                            grid.origin[1] + f64::from(i / cols) * grid.spacing_m,
                        ];
                        out.push((
                            Ue {
                                id: UeId(grid.first_id + i),
                                position: pos,
                                velocity_mps: [0.0, 0.0],
                                capabilities: grid.capabilities.clone(),
                                rrc_state: RrcState::Idle,
                                serving_cells: Vec::new(),
                                bearers: BTreeSet::new(),
                            },
                            pos,
                        ));
                    }
                }
            }
        }
        out
    }
}
