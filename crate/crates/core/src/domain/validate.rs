//! Structural validation of scenarios and of live stack state.
//!
//! Violations are data: every broken invariant produces one [`Violation`]
//! with a path to the offending element. The per-type checks are public so
//! the engine can re-run them against its runtime state after each
//! reconfiguration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{
    config::{ScenarioConfig, TrafficTarget},
    CellGroup, CellId, ChannelId, DispatchMode, QosProfile, RadioBearer, RatId, RatKind, RrcState,
    ServiceType, Ue,
};

/// Which invariant a violation breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    RatDuplicateId,
    RatTtiPositive,
    RatResourceUnitsPositive,
    RatSeCurveMonotone,
    RatSeCurveLowestZero,
    RatWifiWithRlc,
    RatBlerParameters,
    CellDuplicateId,
    CarrierDuplicateId,
    CarrierFreqPositive,
    CarrierBandwidthPositive,
    CarrierBusyProbRange,
    CarrierLicensedBusy,
    CarrierUnknownRat,
    GroupTooSmall,
    GroupPurposeConflict,
    UeDuplicateId,
    UeUnknownRat,
    UeServingState,
    QosUrcPriority,
    QosReliabilityRange,
    BearerDuplicateId,
    BearerUnknownUe,
    BearerNoTunnels,
    BearerTooFewTunnels,
    BearerUnknownCell,
    BearerNoScheduler,
    ChannelSharedBetweenSchedulers,
    ChannelSharedBetweenBearers,
    TrafficUnknownBearer,
    TrafficUnknownUe,
    TrafficParameters,
    TrafficServiceMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(rule: Rule, path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            rule,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "violations", rename_all = "lowercase")]
pub enum ValidationResult {
    Ok,
    Violations(Vec<Violation>),
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        matches!(self, ValidationResult::Ok)
    }

    pub fn violations(&self) -> &[Violation] {
        match self {
            ValidationResult::Ok => &[],
            ValidationResult::Violations(v) => v,
        }
    }

    fn from_list(list: Vec<Violation>) -> Self {
        if list.is_empty() {
            ValidationResult::Ok
        } else {
            ValidationResult::Violations(list)
        }
    }
}

/// Check every type invariant of a parsed scenario. Pure; the output order
/// follows the document order.
pub fn validate_scenario(config: &ScenarioConfig) -> ValidationResult {
    let mut out = Vec::new();
    check_rats(config, &mut out);
    check_cells(config, &mut out);
    let ue_ids = check_ues(config, &mut out);
    check_bearers(config, &ue_ids, &mut out);
    check_traffic(config, &ue_ids, &mut out);

    let qos = config
        .bearers
        .iter()
        .enumerate()
        .map(|(i, b)| (format!("bearers[{i}].qos"), b.qos))
        .chain(config.traffic.iter().enumerate().filter_map(|(i, t)| match &t.target {
            TrafficTarget::Ues { qos, .. } => Some((format!("traffic[{i}].qos"), *qos)),
            TrafficTarget::Bearer { .. } => None,
        }))
        .collect::<Vec<_>>();
    out.extend(check_qos_priorities(&qos));
    ValidationResult::from_list(out)
}

fn check_rats(config: &ScenarioConfig, out: &mut Vec<Violation>) {
    let mut seen = BTreeSet::new();
    for (i, rat) in config.rats.iter().enumerate() {
        let p = format!("rats[{i}]");
        if !seen.insert(rat.id.clone()) {
            out.push(Violation::new(
                Rule::RatDuplicateId,
                &p,
                format!("duplicate RAT id {}", rat.id),
            ));
        }
        if rat.tti_us == 0 {
            out.push(Violation::new(Rule::RatTtiPositive, format!("{p}.tti_us"), "tti_us must be > 0"));
        }
        if !(rat.resource_units_per_tti > 0.0) {
            out.push(Violation::new(
                Rule::RatResourceUnitsPositive,
                format!("{p}.resource_units_per_tti"),
                "resource_units_per_tti must be > 0",
            ));
        }
        let curve = &rat.se_curve;
        if curve.windows(2).any(|w| {
            !(w[0].sinr_db < w[1].sinr_db) || !(w[0].bits_per_ru <= w[1].bits_per_ru)
        }) || curve.iter().any(|s| !s.bits_per_ru.is_finite() || s.bits_per_ru < 0.0)
        {
            out.push(Violation::new(
                Rule::RatSeCurveMonotone,
                format!("{p}.se_curve"),
                "se_curve must have strictly increasing SINR and non-decreasing bits",
            ));
        }
        if curve.first().map_or(true, |s| s.bits_per_ru != 0.0) {
            out.push(Violation::new(
                Rule::RatSeCurveLowestZero,
                format!("{p}.se_curve"),
                "lowest se_curve step must map to 0 bits",
            ));
        }
        if rat.kind == RatKind::WifiLike && rat.has_rlc {
            out.push(Violation::new(
                Rule::RatWifiWithRlc,
                format!("{p}.has_rlc"),
                format!("WIFI_LIKE RAT {} cannot carry an RLC layer (must run transparent)", rat.id),
            ));
        }
        let b = rat.bler;
        let prob = |x: f64| (0.0..=1.0).contains(&x);
        if !(prob(b.at_boundary) && prob(b.decay_per_step) && prob(b.floor) && b.step_db > 0.0)
            || rat.harq_max_tx == 0
        {
            out.push(Violation::new(
                Rule::RatBlerParameters,
                format!("{p}.bler"),
                "BLER probabilities must lie in [0,1], step_db > 0 and harq_max_tx >= 1",
            ));
        }
    }
}

fn check_cells(config: &ScenarioConfig, out: &mut Vec<Violation>) {
    let rats: BTreeSet<&RatId> = config.rats.iter().map(|r| &r.id).collect();
    let mut cell_ids = BTreeSet::new();
    let mut groups: BTreeMap<u32, (super::GroupPurpose, Vec<CellId>)> = BTreeMap::new();
    for (i, cell) in config.cells.iter().enumerate() {
        let p = format!("cells[{i}]");
        if !cell_ids.insert(cell.id) {
            out.push(Violation::new(Rule::CellDuplicateId, &p, format!("duplicate cell id {}", cell.id.0)));
        }
        let mut carrier_ids = BTreeSet::new();
        for (j, c) in cell.carriers.iter().enumerate() {
            let cp = format!("{p}.carriers[{j}]");
            if !carrier_ids.insert(c.id) {
                out.push(Violation::new(
                    Rule::CarrierDuplicateId,
                    &cp,
                    format!("carrier id {} repeated within cell {}", c.id.0, cell.id.0),
                ));
            }
            if !(c.center_freq_mhz > 0.0) {
                out.push(Violation::new(Rule::CarrierFreqPositive, format!("{cp}.center_freq_mhz"), "center frequency must be > 0"));
            }
            if !(c.bandwidth_mhz > 0.0) {
                out.push(Violation::new(Rule::CarrierBandwidthPositive, format!("{cp}.bandwidth_mhz"), "bandwidth must be > 0"));
            }
            if !(0.0..=1.0).contains(&c.busy_prob) {
                out.push(Violation::new(Rule::CarrierBusyProbRange, format!("{cp}.busy_prob"), "busy_prob must lie in [0,1]"));
            } else if c.regime == super::BandRegime::Licensed && c.busy_prob != 0.0 {
                out.push(Violation::new(
                    Rule::CarrierLicensedBusy,
                    format!("{cp}.busy_prob"),
                    "licensed carriers cannot have a busy probability",
                ));
            }
            if !rats.contains(&c.rat) {
                out.push(Violation::new(Rule::CarrierUnknownRat, format!("{cp}.rat"), format!("unknown RAT {}", c.rat)));
            }
        }
        if let Some(g) = cell.group {
            let entry = groups.entry(g.id.0).or_insert((g.purpose, Vec::new()));
            if entry.0 != g.purpose {
                out.push(Violation::new(
                    Rule::GroupPurposeConflict,
                    format!("{p}.group"),
                    format!("group {} declared with conflicting purposes", g.id.0),
                ));
            }
            entry.1.push(cell.id);
        }
    }
    for (id, (purpose, members)) in groups {
        let group = CellGroup {
            id: super::GroupId(id),
            member_cells: members.into_iter().collect(),
            purpose,
        };
        out.extend(check_group(&group));
    }
}

fn check_ues(config: &ScenarioConfig, out: &mut Vec<Violation>) -> BTreeSet<u32> {
    let rats: BTreeSet<&RatId> = config.rats.iter().map(|r| &r.id).collect();
    let mut ids = BTreeSet::new();
    let mut flagged_rat = false;
    for (idx, (ue, _)) in config.expand_ues().iter().enumerate() {
        if !ids.insert(ue.id.0) {
            out.push(Violation::new(Rule::UeDuplicateId, format!("ues[#{idx}]"), format!("duplicate UE id {}", ue.id.0)));
        }
        if !flagged_rat {
            if let Some(r) = ue.capabilities.rats.iter().find(|r| !rats.contains(r)) {
                // Grids repeat the same capability set; report it once.
                flagged_rat = true;
                out.push(Violation::new(
                    Rule::UeUnknownRat,
                    format!("ues[#{idx}].capabilities"),
                    format!("UE {} lists unknown RAT {r}", ue.id.0),
                ));
            }
        }
    }
    ids
}

fn check_bearers(config: &ScenarioConfig, ue_ids: &BTreeSet<u32>, out: &mut Vec<Violation>) {
    let mut bearer_ids = BTreeSet::new();
    // channel -> (scheduler label, owning bearer, first path)
    let mut channels: BTreeMap<ChannelId, (String, u32, String)> = BTreeMap::new();
    for (i, b) in config.bearers.iter().enumerate() {
        let p = format!("bearers[{i}]");
        if !bearer_ids.insert(b.id) {
            out.push(Violation::new(Rule::BearerDuplicateId, &p, format!("duplicate bearer id {}", b.id.0)));
        }
        if !ue_ids.contains(&b.ue.0) {
            out.push(Violation::new(Rule::BearerUnknownUe, format!("{p}.ue"), format!("unknown UE {}", b.ue.0)));
        }
        out.extend(shape_violations(&p, b.tunnels.len(), b.dispatch_mode));
        for (j, t) in b.tunnels.iter().enumerate() {
            let tp = format!("{p}.tunnels[{j}]");
            match config.cell(t.cell) {
                None => out.push(Violation::new(Rule::BearerUnknownCell, format!("{tp}.cell"), format!("unknown cell {}", t.cell.0))),
                Some(cell) if !cell.hosts_rat(&t.rat) => out.push(Violation::new(
                    Rule::BearerNoScheduler,
                    format!("{tp}.rat"),
                    format!("cell {} has no {} scheduler for channel {}", t.cell.0, t.rat, t.channel.0),
                )),
                Some(_) => {}
            }
            let label = format!("cell{}/{}", t.cell.0, t.rat);
            match channels.get(&t.channel) {
                None => {
                    channels.insert(t.channel, (label, b.id.0, tp));
                }
                Some((other_label, owner, first)) => {
                    if *other_label != label {
                        out.push(Violation::new(
                            Rule::ChannelSharedBetweenSchedulers,
                            format!("{tp}.channel"),
                            format!(
                                "channel {} shared between schedulers {other_label} and {label} (first bound at {first})",
                                t.channel.0
                            ),
                        ));
                    } else if *owner != b.id.0 {
                        out.push(Violation::new(
                            Rule::ChannelSharedBetweenBearers,
                            format!("{tp}.channel"),
                            format!("channel {} used by bearers {owner} and {}", t.channel.0, b.id.0),
                        ));
                    }
                }
            }
        }
    }
}

fn check_traffic(config: &ScenarioConfig, ue_ids: &BTreeSet<u32>, out: &mut Vec<Violation>) {
    for (i, t) in config.traffic.iter().enumerate() {
        let p = format!("traffic[{i}]");
        if !t.model.parameters_valid() {
            out.push(Violation::new(Rule::TrafficParameters, format!("{p}.model"), "traffic parameters must be strictly positive"));
        }
        match &t.target {
            TrafficTarget::Bearer { bearer } => match config.bearers.iter().find(|b| b.id == *bearer) {
                None => out.push(Violation::new(Rule::TrafficUnknownBearer, format!("{p}.bearer"), format!("unknown bearer {}", bearer.0))),
                Some(b) if b.qos.service_type != t.model.service_type() => out.push(Violation::new(
                    Rule::TrafficServiceMismatch,
                    format!("{p}.model"),
                    format!("{} traffic on a {} bearer", t.model.service_type(), b.qos.service_type),
                )),
                Some(_) => {}
            },
            TrafficTarget::Ues { ues, qos } => {
                if let Some(missing) = ues.ids().find(|u| !ue_ids.contains(&u.0)) {
                    out.push(Violation::new(Rule::TrafficUnknownUe, format!("{p}.ues"), format!("unknown UE {}", missing.0)));
                }
                if qos.service_type != t.model.service_type() {
                    out.push(Violation::new(
                        Rule::TrafficServiceMismatch,
                        format!("{p}.model"),
                        format!("{} traffic with a {} QoS profile", t.model.service_type(), qos.service_type),
                    ));
                }
            }
        }
    }
}

fn shape_violations(path: &str, tunnels: usize, mode: DispatchMode) -> Vec<Violation> {
    let mut out = Vec::new();
    if tunnels == 0 {
        out.push(Violation::new(Rule::BearerNoTunnels, format!("{path}.tunnels"), "bearer needs at least one tunnel"));
    } else if mode != DispatchMode::Single && tunnels < 2 {
        out.push(Violation::new(
            Rule::BearerTooFewTunnels,
            format!("{path}.tunnels"),
            format!("{mode} dispatch needs at least two tunnels"),
        ));
    }
    out
}

/// Tunnel-count invariants of a live bearer.
pub fn check_bearer_shape(bearer: &RadioBearer) -> Vec<Violation> {
    shape_violations(&bearer.id.to_string(), bearer.tunnels.len(), bearer.dispatch_mode)
}

pub fn check_group(group: &CellGroup) -> Vec<Violation> {
    if group.member_cells.len() < 2 {
        vec![Violation::new(
            Rule::GroupTooSmall,
            group.id.to_string(),
            format!("group {} has {} member cell(s); at least 2 required", group.id.0, group.member_cells.len()),
        )]
    } else {
        Vec::new()
    }
}

/// `serving_cells` non-empty iff connected.
pub fn check_ue_state(ue: &Ue) -> Vec<Violation> {
    let connected = ue.rrc_state == RrcState::Connected;
    if connected == ue.serving_cells.is_empty() {
        vec![Violation::new(
            Rule::UeServingState,
            ue.id.to_string(),
            format!("UE {} is {:?} with {} serving cell(s)", ue.id.0, ue.rrc_state, ue.serving_cells.len()),
        )]
    } else {
        Vec::new()
    }
}

/// URC priorities must be strictly lower than every other priority, and
/// reliability targets must lie in (0, 1].
pub fn check_qos_priorities(profiles: &[(String, QosProfile)]) -> Vec<Violation> {
    let mut out = Vec::new();
    for (path, q) in profiles {
        if !(q.reliability_target > 0.0 && q.reliability_target <= 1.0) {
            out.push(Violation::new(
                Rule::QosReliabilityRange,
                format!("{path}.reliability_target"),
                "reliability_target must lie in (0, 1]",
            ));
        }
    }
    let min_other = profiles
        .iter()
        .filter(|(_, q)| q.service_type != ServiceType::Urc)
        .map(|(_, q)| q.priority)
        .min();
    if let Some(min_other) = min_other {
        for (path, q) in profiles {
            if q.service_type == ServiceType::Urc && q.priority >= min_other {
                out.push(Violation::new(
                    Rule::QosUrcPriority,
                    format!("{path}.priority"),
                    format!("URC priority {} is not below every non-URC priority (min {min_other})", q.priority),
                ));
            }
        }
    }
    out
}
