//! Per-(cell, RAT) control-plane entities. RATs without an RRC of their own
//! get a transparent entity that relays configuration and keeps no state.

use std::collections::BTreeMap;

use bytes::Bytes;
use sha2::{Digest, Sha256};

use crate::domain::{
    BearerId, Cell, CarrierId, CellId, RatId, RatKind, RatProfile, RrcState, SimTime, Ue, UeId,
};
use crate::pdcp::CipherKey;

pub const SIB_PERIOD_US: u64 = 80_000;
pub const DETECTION_THRESHOLD_DB: f64 = -6.0;
pub const DEFAULT_A3_OFFSET_DB: f64 = 3.0;
pub const DEFAULT_TIME_TO_TRIGGER_MS: f64 = 160.0;
pub const DEFAULT_REPORT_PERIOD_MS: f64 = 40.0;
/// One-way delay of the signalling channel.
pub const CONTROL_DELAY_US: u64 = 1_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RrcError {
    #[error("{ue}: {event} not allowed in state {state:?}")]
    InvalidTransition {
        ue: UeId,
        state: RrcState,
        event: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RrcMode {
    Full,
    Transparent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sib {
    pub cell: CellId,
    pub rat: RatId,
    pub carriers: Vec<CarrierId>,
    pub detection_threshold_db: f64,
    /// Opaque non-access-stratum information.
    pub nas_info: Bytes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementConfig {
    pub report_period_ms: f64,
    pub measured: Vec<(CellId, CarrierId)>,
    pub a3_offset_db: f64,
    pub time_to_trigger_ms: f64,
}

impl MeasurementConfig {
    pub fn new(measured: Vec<(CellId, CarrierId)>) -> Self {
        MeasurementConfig {
            report_period_ms: DEFAULT_REPORT_PERIOD_MS,
            measured,
            a3_offset_db: DEFAULT_A3_OFFSET_DB,
            time_to_trigger_ms: DEFAULT_TIME_TO_TRIGGER_MS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasEntry {
    pub cell: CellId,
    pub carrier: CarrierId,
    pub sinr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementReport {
    pub ue: UeId,
    pub entries: Vec<MeasEntry>,
    pub at: SimTime,
}

impl MeasurementReport {
    /// Keep only the carriers the UE was configured to measure.
    pub fn new(ue: UeId, at: SimTime, entries: Vec<MeasEntry>, config: &MeasurementConfig) -> Self {
        let entries = entries
            .into_iter()
            .filter(|e| config.measured.contains(&(e.cell, e.carrier)))
            .collect();
        MeasurementReport { ue, entries, at }
    }

    /// Best carrier SINR per cell.
    pub fn per_cell(&self) -> BTreeMap<CellId, f64> {
        let mut m: BTreeMap<CellId, f64> = BTreeMap::new();
        for e in &self.entries {
            let v = m.entry(e.cell).or_insert(f64::NEG_INFINITY);
            *v = v.max(e.sinr_db);
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandoverDecision {
    pub ue: UeId,
    pub source: CellId,
    pub target: CellId,
    pub at: SimTime,
}

/// Time-to-trigger state of one UE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct A3Tracker {
    candidate: Option<(CellId, SimTime)>,
}

impl A3Tracker {
    /// Feed one report. A decision is emitted once the same neighbour has
    /// stayed at least `a3_offset_db` above the serving cell for
    /// `time_to_trigger_ms`.
    pub fn observe(
        &mut self,
        serving: CellId,
        report: &MeasurementReport,
        config: &MeasurementConfig,
    ) -> Option<HandoverDecision> {
        let cells = report.per_cell();
        let Some(&serving_q) = cells.get(&serving) else {
            self.candidate = None;
            return None;
        };
        let mut best: Option<(CellId, f64)> = None;
        for (&c, &q) in &cells {
            if c != serving && best.is_none_or(|(_, bq)| q > bq) {
                best = Some((c, q));
            }
        }
        match best {
            Some((n, q)) if q >= serving_q + config.a3_offset_db => {
                let since = match self.candidate {
                    Some((c, t)) if c == n => t,
                    _ => {
                        self.candidate = Some((n, report.at));
                        report.at
                    }
                };
                let ttt = SimTime::from_ms(config.time_to_trigger_ms).as_us();
                if report.at.saturating_since(since) >= ttt {
                    self.candidate = None;
                    return Some(HandoverDecision {
                        ue: report.ue,
                        source: serving,
                        target: n,
                        at: report.at,
                    });
                }
                None
            }
            _ => {
                self.candidate = None;
                None
            }
        }
    }
}

/// Evaluate a time-ordered report series from scratch.
pub fn evaluate_mobility(
    serving: CellId,
    reports: &[MeasurementReport],
    config: &MeasurementConfig,
) -> Option<HandoverDecision> {
    let mut tracker = A3Tracker::default();
    reports.iter().find_map(|r| tracker.observe(serving, r, config))
}

/// Stub key derivation: SHA-256 of `ue ‖ cell ‖ nonce`, truncated.
pub fn derive_key(ue: UeId, cell: CellId, nonce: u64) -> CipherKey {
    let mut h = Sha256::new();
    h.update(ue.0.to_be_bytes());
    h.update(cell.0.to_be_bytes());
    h.update(nonce.to_be_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 16];
    key.copy_from_slice(&digest[..16]);
    key
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PageOutcome {
    Reached,
    Unreached,
    /// The UE was already connected.
    NoOp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeContext {
    pub key: CipherKey,
    pub measurement: MeasurementConfig,
}

#[derive(Debug, Clone)]
pub struct RrcEntity {
    pub cell: CellId,
    pub rat: RatId,
    pub mode: RrcMode,
    pub sib: Sib,
    connected: BTreeMap<UeId, UeContext>,
}

impl RrcEntity {
    pub fn new(cell: &Cell, rat: &RatProfile) -> Self {
        let mode = if rat.kind == RatKind::WifiLike {
            RrcMode::Transparent
        } else {
            RrcMode::Full
        };
        RrcEntity {
            cell: cell.id,
            rat: rat.id.clone(),
            mode,
            sib: Sib {
                cell: cell.id,
                rat: rat.id.clone(),
                carriers: cell
                    .carriers
                    .iter()
                    .filter(|c| c.rat == rat.id)
                    .map(|c| c.id)
                    .collect(),
                detection_threshold_db: DETECTION_THRESHOLD_DB,
                nas_info: Bytes::new(),
            },
            connected: BTreeMap::new(),
        }
    }

    /// UEs that pick up this broadcast: those whose best SINR on the cell
    /// clears the detection threshold. Transparent entities broadcast
    /// nothing.
    pub fn broadcast_sib(&self, ues: impl IntoIterator<Item = (UeId, f64)>) -> Vec<UeId> {
        if self.mode == RrcMode::Transparent {
            return Vec::new();
        }
        ues.into_iter()
            .filter(|&(_, s)| s >= self.sib.detection_threshold_db)
            .map(|(u, _)| u)
            .collect()
    }

    pub fn page(&self, ue: &Ue, best_sinr_db: f64) -> PageOutcome {
        if ue.rrc_state == RrcState::Connected {
            return PageOutcome::NoOp;
        }
        if best_sinr_db >= self.sib.detection_threshold_db {
            PageOutcome::Reached
        } else {
            PageOutcome::Unreached
        }
    }

    /// IDLE to CONNECTED on this cell. Returns the derived bearer key.
    pub fn establish(
        &mut self,
        ue: &mut Ue,
        nonce: u64,
        measurement: MeasurementConfig,
    ) -> Result<CipherKey, RrcError> {
        if ue.rrc_state != RrcState::Idle {
            return Err(RrcError::InvalidTransition {
                ue: ue.id,
                state: ue.rrc_state,
                event: "establish",
            });
        }
        let key = derive_key(ue.id, self.cell, nonce);
        ue.rrc_state = RrcState::Connected;
        ue.serving_cells = vec![self.cell];
        if self.mode == RrcMode::Full {
            self.connected.insert(ue.id, UeContext { key, measurement });
        }
        Ok(key)
    }

    /// CONNECTED to IDLE. Returns the bearers that must be torn down.
    pub fn release(&mut self, ue: &mut Ue) -> Result<Vec<BearerId>, RrcError> {
        if ue.rrc_state != RrcState::Connected {
            return Err(RrcError::InvalidTransition {
                ue: ue.id,
                state: ue.rrc_state,
                event: "release",
            });
        }
        self.connected.remove(&ue.id);
        ue.rrc_state = RrcState::Idle;
        ue.serving_cells.clear();
        Ok(std::mem::take(&mut ue.bearers).into_iter().collect())
    }

    /// Move a connected UE's context here from another entity.
    pub fn adopt(&mut self, ue: UeId, ctx: UeContext) {
        if self.mode == RrcMode::Full {
            self.connected.insert(ue, ctx);
        }
    }

    pub fn take_context(&mut self, ue: UeId) -> Option<UeContext> {
        self.connected.remove(&ue)
    }

    pub fn context(&self, ue: UeId) -> Option<&UeContext> {
        self.connected.get(&ue)
    }

    pub fn connected_count(&self) -> usize {
        self.connected.len()
    }

    /// Transparent forwarding of a configuration or data payload.
    pub fn relay(&self, payload: Bytes) -> Bytes {
        payload
    }
}
