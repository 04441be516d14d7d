//! Core domain types shared by every layer of the stack.
//!
//! Everything in here is plain data. The scenario file deserializes into
//! [`ScenarioConfig`], [`validate_scenario`] checks it, and the engine turns
//! it into live layer entities. Runtime mutation never happens on these
//! types directly; the engine owns copies inside its own state.

mod config;
mod validate;

use std::collections::BTreeSet;
use std::fmt;

use bytes::Bytes;
use serde::{Deserialize, Serialize};

pub use config::{
    BearerSpec, ConfigError, GridLayout, ScenarioConfig, TrafficModel, TrafficSpec, TrafficTarget,
    TunnelSpec, UeEntry, UeRange, UeSpec,
};
pub use validate::{
    check_bearer_shape, check_group, check_qos_priorities, check_ue_state, validate_scenario,
    Rule, ValidationResult, Violation,
};

/// PDCP sequence-number space (12-bit).
pub const PDCP_SN_MODULUS: u16 = 4096;
/// Reordering window: half the SN space.
pub const PDCP_WINDOW: u16 = 2048;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(CellId, "cell");
id_type!(
    /// Carrier ids are unique within their cell only.
    CarrierId,
    "carrier"
);
id_type!(UeId, "ue");
id_type!(BearerId, "bearer");
id_type!(ChannelId, "ch");
id_type!(GroupId, "group");

/// RAT identifier as written in the scenario file (e.g. `"lte"`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RatId(pub String);

impl RatId {
    pub fn new(id: impl Into<String>) -> Self {
        RatId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One MAC scheduler entity exists per (cell, RAT).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SchedulerId {
    pub cell: CellId,
    pub rat: RatId,
}

impl SchedulerId {
    pub fn new(cell: CellId, rat: RatId) -> Self {
        SchedulerId { cell, rat }
    }
}

impl fmt::Display for SchedulerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.cell, self.rat)
    }
}

/// Simulation time in microseconds.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_ms(ms: f64) -> Self {
        SimTime((ms * 1000.0).round().max(0.0) as u64)
    }

    pub fn from_us(us: u64) -> Self {
        SimTime(us)
    }

    pub fn as_us(self) -> u64 {
        self.0
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn plus_us(self, us: u64) -> Self {
        SimTime(self.0 + us)
    }

    pub fn saturating_since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RatKind {
    LteLike,
    WifiLike,
    FbmcLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BandRegime {
    Licensed,
    LightlyLicensed,
    Unlicensed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceType {
    Xmbb,
    Mmtc,
    Urc,
}

impl fmt::Display for ServiceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ServiceType::Xmbb => "XMBB",
            ServiceType::Mmtc => "MMTC",
            ServiceType::Urc => "URC",
        })
    }
}

/// Which service a carrier is configured for. `Any` carriers serve all.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServiceRole {
    Xmbb,
    Mmtc,
    Urc,
    #[default]
    Any,
}

impl ServiceRole {
    pub fn serves(self, service: ServiceType) -> bool {
        matches!(
            (self, service),
            (ServiceRole::Any, _)
                | (ServiceRole::Xmbb, ServiceType::Xmbb)
                | (ServiceRole::Mmtc, ServiceType::Mmtc)
                | (ServiceRole::Urc, ServiceType::Urc)
        )
    }

    /// True when the role names this service explicitly (not just `Any`).
    pub fn dedicated_to(self, service: ServiceType) -> bool {
        self != ServiceRole::Any && self.serves(service)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RrcState {
    #[default]
    Idle,
    Connected,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DispatchMode {
    #[default]
    Single,
    Split,
    Duplicate,
}

impl fmt::Display for DispatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DispatchMode::Single => "SINGLE",
            DispatchMode::Split => "SPLIT",
            DispatchMode::Duplicate => "DUPLICATE",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GroupPurpose {
    Aggregation,
    Comp,
}

/// Coarse frequency class driving the path-loss exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BandClass {
    /// Below 1 GHz.
    Low,
    /// 1 GHz to 6 GHz inclusive.
    Mid,
    /// Above 6 GHz.
    High,
}

pub const LOW_BAND_UPPER_MHZ: f64 = 1000.0;
pub const MID_BAND_UPPER_MHZ: f64 = 6000.0;

/// Classify a carrier frequency. 1000 MHz and 6000 MHz both fall in `Mid`.
pub fn freq_band_class(center_freq_mhz: f64) -> BandClass {
    if center_freq_mhz < LOW_BAND_UPPER_MHZ {
        BandClass::Low
    } else if center_freq_mhz <= MID_BAND_UPPER_MHZ {
        BandClass::Mid
    } else {
        BandClass::High
    }
}

/// One step of a spectral-efficiency table: at or above `sinr_db` the link
/// carries `bits_per_ru` bits per resource unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeStep {
    pub sinr_db: f64,
    pub bits_per_ru: f64,
}

impl SeStep {
    pub const fn new(sinr_db: f64, bits_per_ru: f64) -> Self {
        SeStep {
            sinr_db,
            bits_per_ru,
        }
    }
}

/// Block error rate parameters. Loss is `at_boundary` when the SINR sits on
/// the threshold of the SE step in use, and is multiplied by `decay_per_step`
/// for every full `step_db` above that threshold, never dropping below
/// `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlerParams {
    #[serde(default = "BlerParams::default_at_boundary")]
    pub at_boundary: f64,
    #[serde(default = "BlerParams::default_decay")]
    pub decay_per_step: f64,
    #[serde(default = "BlerParams::default_step_db")]
    pub step_db: f64,
    #[serde(default = "BlerParams::default_floor")]
    pub floor: f64,
}

impl BlerParams {
    fn default_at_boundary() -> f64 {
        0.5
    }
    fn default_decay() -> f64 {
        0.1
    }
    fn default_step_db() -> f64 {
        2.0
    }
    fn default_floor() -> f64 {
        1e-4
    }
}

impl Default for BlerParams {
    fn default() -> Self {
        BlerParams {
            at_boundary: Self::default_at_boundary(),
            decay_per_step: Self::default_decay(),
            step_db: Self::default_step_db(),
            floor: Self::default_floor(),
        }
    }
}

/// Static description of a radio access technology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatProfile {
    pub id: RatId,
    pub kind: RatKind,
    /// Transmission time interval in microseconds.
    pub tti_us: u32,
    pub has_rlc: bool,
    pub has_harq: bool,
    /// Resource units per TTI per MHz of carrier bandwidth.
    pub resource_units_per_tti: f64,
    /// Empty in the file means "use the embedded default for `kind`".
    #[serde(default)]
    pub se_curve: Vec<SeStep>,
    #[serde(default)]
    pub bler: BlerParams,
    /// Link adaptation backoff: the MAC picks its SE step at
    /// `sinr - la_margin_db`.
    #[serde(default = "RatProfile::default_la_margin")]
    pub la_margin_db: f64,
    #[serde(default = "RatProfile::default_max_tx")]
    pub harq_max_tx: u8,
}

impl RatProfile {
    fn default_la_margin() -> f64 {
        2.0
    }

    fn default_max_tx() -> u8 {
        4
    }

    /// Embedded default profile for a RAT family.
    pub fn default_for(kind: RatKind, id: impl Into<String>) -> Self {
        let (tti_us, has_rlc, has_harq, ru, curve): (u32, bool, bool, f64, &[(f64, f64)]) =
            match kind {
                // CQI-style efficiency table.
                RatKind::LteLike => (
                    1000,
                    true,
                    true,
                    840.0,
                    &[
                        (-10.0, 0.0),
                        (-6.7, 0.15),
                        (-4.7, 0.23),
                        (-2.3, 0.38),
                        (0.2, 0.6),
                        (2.4, 0.88),
                        (4.3, 1.18),
                        (5.9, 1.48),
                        (8.1, 1.91),
                        (10.3, 2.41),
                        (11.7, 2.73),
                        (14.1, 3.32),
                        (16.3, 3.9),
                        (18.7, 4.52),
                        (21.0, 5.12),
                        (22.7, 5.55),
                    ],
                ),
                RatKind::WifiLike => (
                    1000,
                    false,
                    false,
                    650.0,
                    &[
                        (-10.0, 0.0),
                        (2.0, 0.5),
                        (5.0, 1.0),
                        (9.0, 1.5),
                        (11.0, 2.0),
                        (15.0, 3.0),
                        (18.0, 4.0),
                        (20.0, 4.5),
                        (25.0, 5.0),
                    ],
                ),
                // No cyclic prefix: slightly denser resource grid than LTE.
                RatKind::FbmcLike => (
                    1000,
                    true,
                    true,
                    920.0,
                    &[
                        (-10.0, 0.0),
                        (-6.7, 0.15),
                        (-2.3, 0.38),
                        (2.4, 0.88),
                        (5.9, 1.48),
                        (10.3, 2.41),
                        (14.1, 3.32),
                        (18.7, 4.52),
                        (22.7, 5.55),
                    ],
                ),
            };
        RatProfile {
            id: RatId::new(id),
            kind,
            tti_us,
            has_rlc,
            has_harq,
            resource_units_per_tti: ru,
            se_curve: curve.iter().map(|&(s, b)| SeStep::new(s, b)).collect(),
            bler: BlerParams::default(),
            la_margin_db: Self::default_la_margin(),
            harq_max_tx: Self::default_max_tx(),
        }
    }

    pub fn tti(&self) -> u64 {
        u64::from(self.tti_us)
    }
}

/// Periodic incumbent activity on a lightly-licensed carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncumbentWindow {
    pub period_ms: f64,
    pub active_ms: f64,
    #[serde(default)]
    pub offset_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Carrier {
    pub id: CarrierId,
    pub center_freq_mhz: f64,
    pub bandwidth_mhz: f64,
    pub regime: BandRegime,
    pub rat: RatId,
    #[serde(default)]
    pub service_role: ServiceRole,
    /// Probability that an unlicensed carrier is externally occupied in a TTI.
    #[serde(default)]
    pub busy_prob: f64,
    /// Disables stochastic loss on this carrier.
    #[serde(default)]
    pub ideal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incumbent: Option<IncumbentWindow>,
}

impl Carrier {
    pub fn band_class(&self) -> BandClass {
        freq_band_class(self.center_freq_mhz)
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_mhz * 1e6
    }

    /// True if an incumbent occupies the carrier at `now`.
    pub fn incumbent_active(&self, now: SimTime) -> bool {
        match (self.regime, self.incumbent) {
            (BandRegime::LightlyLicensed, Some(w)) if w.period_ms > 0.0 => {
                let period = SimTime::from_ms(w.period_ms).as_us().max(1);
                let offset = SimTime::from_ms(w.offset_ms).as_us();
                let active = SimTime::from_ms(w.active_ms).as_us();
                let phase = (now.as_us() + period - offset % period) % period;
                phase < active
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRef {
    pub id: GroupId,
    pub purpose: GroupPurpose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    pub position: [f64; 2],
    pub tx_power_dbm: f64,
    pub carriers: Vec<Carrier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<GroupRef>,
    /// One-way delay between the forwarding layer and this cell.
    #[serde(default)]
    pub backhaul_delay_ms: f64,
}

impl Cell {
    pub fn carrier(&self, id: CarrierId) -> Option<&Carrier> {
        self.carriers.iter().find(|c| c.id == id)
    }

    pub fn hosts_rat(&self, rat: &RatId) -> bool {
        self.carriers.iter().any(|c| &c.rat == rat)
    }

    /// RATs hosted by this cell, in first-appearance order.
    pub fn rats(&self) -> Vec<RatId> {
        let mut out: Vec<RatId> = Vec::new();
        for c in &self.carriers {
            if !out.contains(&c.rat) {
                out.push(c.rat.clone());
            }
        }
        out
    }
}

/// What a UE can receive: RATs plus frequency ranges.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Capabilities {
    pub rats: BTreeSet<RatId>,
    /// Inclusive `[low, high]` MHz ranges. Empty means unrestricted.
    #[serde(default)]
    pub freq_ranges_mhz: Vec<[f64; 2]>,
}

impl Capabilities {
    pub fn supports(&self, carrier: &Carrier) -> bool {
        self.rats.contains(&carrier.rat)
            && (self.freq_ranges_mhz.is_empty()
                || self
                    .freq_ranges_mhz
                    .iter()
                    .any(|r| carrier.center_freq_mhz >= r[0] && carrier.center_freq_mhz <= r[1]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ue {
    pub id: UeId,
    pub position: [f64; 2],
    pub velocity_mps: [f64; 2],
    pub capabilities: Capabilities,
    pub rrc_state: RrcState,
    /// Primary cell first.
    pub serving_cells: Vec<CellId>,
    pub bearers: BTreeSet<BearerId>,
}

impl Ue {
    pub fn position_at(&self, origin: [f64; 2], t: SimTime) -> [f64; 2] {
        let s = t.as_secs();
        [
            origin[0] + self.velocity_mps[0] * s,
            origin[1] + self.velocity_mps[1] * s,
        ]
    }

    pub fn is_mobile(&self) -> bool {
        self.velocity_mps != [0.0, 0.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosProfile {
    pub service_type: ServiceType,
    /// Lower is more urgent.
    pub priority: u8,
    pub latency_budget_ms: f64,
    #[serde(default)]
    pub target_rate_bps: f64,
    pub reliability_target: f64,
}

impl QosProfile {
    pub fn urc() -> Self {
        QosProfile {
            service_type: ServiceType::Urc,
            priority: 1,
            latency_budget_ms: 10.0,
            target_rate_bps: 0.0,
            reliability_target: 0.99999,
        }
    }

    pub fn xmbb(target_rate_bps: f64) -> Self {
        QosProfile {
            service_type: ServiceType::Xmbb,
            priority: 5,
            latency_budget_ms: 100.0,
            target_rate_bps,
            reliability_target: 0.99,
        }
    }

    pub fn mmtc() -> Self {
        QosProfile {
            service_type: ServiceType::Mmtc,
            priority: 9,
            latency_budget_ms: 1000.0,
            target_rate_bps: 0.0,
            reliability_target: 0.99,
        }
    }
}

/// One leg of a bearer: a logical channel on a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tunnel {
    pub cell: CellId,
    pub channel: ChannelId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioBearer {
    pub id: BearerId,
    pub ue_id: UeId,
    pub qos: QosProfile,
    pub tunnels: Vec<Tunnel>,
    pub dispatch_mode: DispatchMode,
    pub group: Option<GroupId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogicalChannel {
    pub id: ChannelId,
    pub bearer_id: BearerId,
    pub cell_id: CellId,
    pub scheduler_id: SchedulerId,
    pub priority: u8,
    pub service: ServiceType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellGroup {
    pub id: GroupId,
    pub member_cells: BTreeSet<CellId>,
    pub purpose: GroupPurpose,
}

/// An upper-layer service data unit entering PDCP.
#[derive(Debug, Clone, PartialEq)]
pub struct Sdu {
    pub id: u64,
    pub bearer_id: BearerId,
    pub payload: Bytes,
    pub created_at: SimTime,
}

impl Sdu {
    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }
}

/// RLC segmentation info carried in the RLC header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentInfo {
    pub offset: u16,
    pub length: u16,
    pub last: bool,
}

/// A unit of data as seen at one layer. `payload` holds the layer's SDU
/// bytes (or a slice of them for RLC segments); headers of layers that run
/// in transparent mode are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPdu {
    pub pdcp_sn: Option<u16>,
    pub rlc_segment: Option<SegmentInfo>,
    pub mac_tb_id: Option<u64>,
    pub cipher_applied: bool,
    pub compressed: bool,
    pub payload: Bytes,
}

impl LayerPdu {
    pub fn raw(payload: Bytes) -> Self {
        LayerPdu {
            pdcp_sn: None,
            rlc_segment: None,
            mac_tb_id: None,
            cipher_applied: false,
            compressed: false,
            payload,
        }
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_class_thresholds() {
        assert_eq!(freq_band_class(800.0), BandClass::Low);
        assert_eq!(freq_band_class(2600.0), BandClass::Mid);
        assert_eq!(freq_band_class(28000.0), BandClass::High);
        assert_eq!(freq_band_class(999.9), BandClass::Low);
        assert_eq!(freq_band_class(1000.0), BandClass::Mid);
        assert_eq!(freq_band_class(6000.0), BandClass::Mid);
        assert_eq!(freq_band_class(6000.1), BandClass::High);
    }

    #[test]
    fn service_role_matching() {
        assert!(ServiceRole::Any.serves(ServiceType::Urc));
        assert!(ServiceRole::Mmtc.serves(ServiceType::Mmtc));
        assert!(!ServiceRole::Mmtc.serves(ServiceType::Xmbb));
        assert!(!ServiceRole::Any.dedicated_to(ServiceType::Xmbb));
        assert!(ServiceRole::Xmbb.dedicated_to(ServiceType::Xmbb));
    }

    #[test]
    fn incumbent_windows() {
        let c = Carrier {
            id: CarrierId(1),
            center_freq_mhz: 3600.0,
            bandwidth_mhz: 10.0,
            regime: BandRegime::LightlyLicensed,
            rat: RatId::new("lte"),
            service_role: ServiceRole::Any,
            busy_prob: 0.0,
            ideal: false,
            incumbent: Some(IncumbentWindow {
                period_ms: 100.0,
                active_ms: 20.0,
                offset_ms: 10.0,
            }),
        };
        assert!(!c.incumbent_active(SimTime::from_ms(0.0)));
        assert!(c.incumbent_active(SimTime::from_ms(10.0)));
        assert!(c.incumbent_active(SimTime::from_ms(29.9)));
        assert!(!c.incumbent_active(SimTime::from_ms(30.0)));
        assert!(c.incumbent_active(SimTime::from_ms(115.0)));
    }

    #[test]
    fn default_profiles_have_zero_first_step() {
        for kind in [RatKind::LteLike, RatKind::WifiLike, RatKind::FbmcLike] {
            let p = RatProfile::default_for(kind, "x");
            assert_eq!(p.se_curve[0].bits_per_ru, 0.0);
            assert!(p.se_curve.windows(2).all(|w| w[0].sinr_db < w[1].sinr_db
                && w[0].bits_per_ru <= w[1].bits_per_ru));
        }
        assert!(!RatProfile::default_for(RatKind::WifiLike, "w").has_rlc);
    }
}
