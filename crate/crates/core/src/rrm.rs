//! Radio resource management: the radio map, attachment, bearer planning,
//! cell groups and the periodic QoS loop.
//!
//! Everything here is a pure decision over a snapshot of state. The engine
//! owns the stack and applies the resulting commands.

use std::collections::{BTreeMap, BTreeSet};

use crate::domain::{
    BearerId, Cell, CarrierId, CellGroup, CellId, DispatchMode, GroupId, GroupPurpose, QosProfile,
    RatId, RatProfile, ServiceType, SimTime, Ue, UeId,
};
use crate::phy::{bler_for_step, link_budget};

/// QoS rounds run this often.
pub const QOS_PERIOD_US: u64 = 100_000;
/// xMBB bearers below this fraction of their target rate escalate.
pub const XMBB_SHORTFALL: f64 = 0.9;
/// Radio map entries older than this many report periods are stale.
pub const STALE_REPORT_PERIODS: u64 = 2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RrmError {
    #[error("no usable unit for UE {0}")]
    NoUsableUnit(UeId),
    #[error("group needs at least 2 cells, got {0}")]
    GroupTooSmall(usize),
    #[error("cell {cell} already belongs to group {group}")]
    CellAlreadyGrouped { cell: CellId, group: GroupId },
    #[error("group {group} is {existing:?}, requested {requested:?}")]
    GroupPurposeConflict {
        group: GroupId,
        existing: GroupPurpose,
        requested: GroupPurpose,
    },
    #[error("unknown group {0}")]
    UnknownGroup(GroupId),
    #[error("group {group} still referenced by bearers {bearers:?}")]
    GroupInUse { group: GroupId, bearers: Vec<BearerId> },
    #[error("target cell {target} has no RAT compatible with UE {ue}")]
    NoCompatibleRat { ue: UeId, target: CellId },
}

#[derive(Debug, Clone, PartialEq)]
struct UeRadio {
    at: SimTime,
    sinr: BTreeMap<(CellId, CarrierId), f64>,
}

/// Latest measured SINR per UE, cell and carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct RadioMap {
    report_period_us: u64,
    entries: BTreeMap<UeId, UeRadio>,
}

impl RadioMap {
    pub fn new(report_period_us: u64) -> Self {
        RadioMap {
            report_period_us: report_period_us.max(1),
            entries: BTreeMap::new(),
        }
    }

    /// Replace the UE's measurements.
    pub fn update(
        &mut self,
        ue: UeId,
        at: SimTime,
        sinr: impl IntoIterator<Item = ((CellId, CarrierId), f64)>,
    ) {
        self.entries.insert(
            ue,
            UeRadio {
                at,
                sinr: sinr.into_iter().collect(),
            },
        );
    }

    /// Refresh the timestamp without new values (static UEs).
    pub fn touch(&mut self, ue: UeId, at: SimTime) {
        if let Some(e) = self.entries.get_mut(&ue) {
            e.at = at;
        }
    }

    pub fn is_stale(&self, ue: UeId, now: SimTime) -> bool {
        match self.entries.get(&ue) {
            Some(e) => now.saturating_since(e.at) > STALE_REPORT_PERIODS * self.report_period_us,
            None => true,
        }
    }

    fn fresh(&self, ue: UeId, now: SimTime) -> Option<&UeRadio> {
        if self.is_stale(ue, now) {
            None
        } else {
            self.entries.get(&ue)
        }
    }

    pub fn sinr(&self, ue: UeId, cell: CellId, carrier: CarrierId, now: SimTime) -> Option<f64> {
        self.fresh(ue, now)?.sinr.get(&(cell, carrier)).copied()
    }

    /// Best carrier of `cell` for `ue`; ties go to the lowest carrier id.
    pub fn best_carrier(&self, ue: UeId, cell: CellId, now: SimTime) -> Option<(CarrierId, f64)> {
        let e = self.fresh(ue, now)?;
        let mut best: Option<(CarrierId, f64)> = None;
        for (&(c, k), &s) in e.sinr.range((cell, CarrierId(0))..=(cell, CarrierId(u32::MAX))) {
            debug_assert_eq!(c, cell);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        best
    }

    /// Best-carrier SINR per measured cell.
    pub fn cell_sinrs(&self, ue: UeId, now: SimTime) -> BTreeMap<CellId, f64> {
        let mut out = BTreeMap::new();
        if let Some(e) = self.fresh(ue, now) {
            for (&(cell, _), &s) in &e.sinr {
                let slot = out.entry(cell).or_insert(f64::NEG_INFINITY);
                if s > *slot {
                    *slot = s;
                }
            }
        }
        out
    }

    pub fn forget(&mut self, ue: UeId) {
        self.entries.remove(&ue);
    }
}

/// Cell with the highest best-carrier SINR. Ties go to the lowest cell id.
pub fn attach(map: &RadioMap, ue: UeId, now: SimTime) -> Option<CellId> {
    let mut best: Option<(CellId, f64)> = None;
    for (cell, s) in map.cell_sinrs(ue, now) {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((cell, s));
        }
    }
    best.map(|(c, _)| c)
}

/// One scheduler a bearer leg could be mapped onto: a RAT on a cell, with
/// its estimated capacity and per-packet reliability for this UE.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub cell: CellId,
    pub rat: RatId,
    pub capacity_bps: f64,
    pub reliability: f64,
    pub sinr_db: f64,
    /// At least one usable carrier is reserved for the service.
    pub dedicated: bool,
}

/// Every (cell, RAT) pair the UE can use for `service`, best first.
///
/// Carriers must be supported by the UE, have a service role that serves
/// `service`, and have a fresh SINR in the radio map.
pub fn candidate_units(
    ue: &Ue,
    service: ServiceType,
    cells: &[Cell],
    rats: &[RatProfile],
    map: &RadioMap,
    now: SimTime,
) -> Vec<Unit> {
    let mut out = Vec::new();
    for cell in cells {
        for rat_id in cell.rats() {
            let Some(rat) = rats.iter().find(|r| r.id == rat_id) else {
                continue;
            };
            let mut unit = Unit {
                cell: cell.id,
                rat: rat_id.clone(),
                capacity_bps: 0.0,
                reliability: 0.0,
                sinr_db: f64::NEG_INFINITY,
                dedicated: false,
            };
            for carrier in cell.carriers.iter().filter(|c| c.rat == rat_id) {
                if !ue.capabilities.supports(carrier) || !carrier.service_role.serves(service) {
                    continue;
                }
                let Some(sinr) = map.sinr(ue.id, cell.id, carrier.id, now) else {
                    continue;
                };
                let budget = link_budget(rat, carrier, sinr);
                if budget.capacity_bits == 0 {
                    continue;
                }
                let tti_s = rat.tti() as f64 * 1e-6;
                unit.capacity_bps += budget.capacity_bits as f64 / tti_s * (1.0 - carrier.busy_prob);
                let reliability = if carrier.ideal {
                    1.0
                } else {
                    let p = bler_for_step(rat, sinr, budget.step_threshold_db);
                    let attempts = if rat.has_harq { i32::from(rat.harq_max_tx.max(1)) } else { 1 };
                    1.0 - p.powi(attempts)
                };
                unit.reliability = unit.reliability.max(reliability);
                unit.sinr_db = unit.sinr_db.max(sinr);
                unit.dedicated |= carrier.service_role.dedicated_to(service);
            }
            if unit.capacity_bps > 0.0 {
                out.push(unit);
            }
        }
    }
    sort_units(&mut out, service);
    out
}

/// Dedicated units first, then by the metric that matters for the service.
fn sort_units(units: &mut [Unit], service: ServiceType) {
    units.sort_by(|a, b| {
        let key = |u: &Unit| match service {
            ServiceType::Urc => (u.reliability, u.sinr_db),
            _ => (u.capacity_bps, u.sinr_db),
        };
        let (ka, kb) = (key(a), key(b));
        b.dedicated
            .cmp(&a.dedicated)
            .then(kb.0.total_cmp(&ka.0))
            .then(kb.1.total_cmp(&ka.1))
            .then(a.cell.cmp(&b.cell))
            .then(a.rat.cmp(&b.rat))
    });
}

#[derive(Debug, Clone, PartialEq)]
pub struct BearerPlan {
    /// Legs in tunnel order; the first is the primary.
    pub units: Vec<Unit>,
    pub dispatch_mode: DispatchMode,
    /// Set when the legs span more than one cell.
    pub group_purpose: Option<GroupPurpose>,
    /// The requested QoS cannot be met with the available units.
    pub best_effort: bool,
}

fn distinct_cells(units: &[Unit]) -> usize {
    units.iter().map(|u| u.cell).collect::<BTreeSet<_>>().len()
}

/// Choose legs and dispatch mode for a new bearer. `units` must be sorted
/// best first, as returned by [`candidate_units`]; the primary leg is the
/// best unit on the serving cell, or the best overall if the serving cell
/// has none.
pub fn plan_bearer(
    ue: UeId,
    qos: &QosProfile,
    serving: CellId,
    units: &[Unit],
) -> Result<BearerPlan, RrmError> {
    let primary = units
        .iter()
        .find(|u| u.cell == serving)
        .or_else(|| units.first())
        .ok_or(RrmError::NoUsableUnit(ue))?
        .clone();
    let mut plan = BearerPlan {
        units: vec![primary.clone()],
        dispatch_mode: DispatchMode::Single,
        group_purpose: None,
        best_effort: false,
    };
    match qos.service_type {
        ServiceType::Urc => {
            if primary.reliability < qos.reliability_target {
                match units.iter().find(|u| u.cell != primary.cell) {
                    Some(second) => {
                        let combined = 1.0 - (1.0 - primary.reliability) * (1.0 - second.reliability);
                        plan.units.push(second.clone());
                        plan.dispatch_mode = DispatchMode::Duplicate;
                        plan.group_purpose = Some(GroupPurpose::Comp);
                        plan.best_effort = combined < qos.reliability_target;
                    }
                    None => plan.best_effort = true,
                }
            }
        }
        ServiceType::Xmbb => {
            let mut total = primary.capacity_bps;
            if qos.target_rate_bps > total {
                let mut rest: Vec<&Unit> = units.iter().filter(|u| **u != primary).collect();
                rest.sort_by(|a, b| b.capacity_bps.total_cmp(&a.capacity_bps));
                for u in rest {
                    if total >= qos.target_rate_bps {
                        break;
                    }
                    total += u.capacity_bps;
                    plan.units.push(u.clone());
                }
                if plan.units.len() > 1 {
                    plan.dispatch_mode = DispatchMode::Split;
                    if distinct_cells(&plan.units) > 1 {
                        plan.group_purpose = Some(GroupPurpose::Aggregation);
                    }
                }
                plan.best_effort = total < qos.target_rate_bps;
            }
        }
        ServiceType::Mmtc => {}
    }
    Ok(plan)
}

/// RAT to use on the handover target: the current one if the target hosts
/// it, otherwise the first target RAT the UE supports.
pub fn handover_rat(ue: &Ue, current: &RatId, target: &Cell) -> Result<RatId, RrmError> {
    let usable = |rat: &RatId| {
        ue.capabilities.rats.contains(rat)
            && target.carriers.iter().any(|c| &c.rat == rat && ue.capabilities.supports(c))
    };
    if usable(current) {
        return Ok(current.clone());
    }
    target
        .rats()
        .into_iter()
        .find(usable)
        .ok_or(RrmError::NoCompatibleRat {
            ue: ue.id,
            target: target.id,
        })
}

/// Cell groups. A cell belongs to at most one group.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupRegistry {
    next_id: u32,
    groups: BTreeMap<GroupId, CellGroup>,
    cell_group: BTreeMap<CellId, GroupId>,
}

impl GroupRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seed the registry from groups declared on cells.
    pub fn from_cells(cells: &[Cell]) -> Result<Self, RrmError> {
        let mut reg = GroupRegistry::new();
        let mut declared: BTreeMap<GroupId, (GroupPurpose, BTreeSet<CellId>)> = BTreeMap::new();
        for cell in cells {
            if let Some(g) = cell.group {
                let entry = declared.entry(g.id).or_insert((g.purpose, BTreeSet::new()));
                if entry.0 != g.purpose {
                    return Err(RrmError::GroupPurposeConflict {
                        group: g.id,
                        existing: entry.0,
                        requested: g.purpose,
                    });
                }
                entry.1.insert(cell.id);
            }
        }
        for (id, (purpose, members)) in declared {
            reg.insert(id, members, purpose)?;
            reg.next_id = reg.next_id.max(id.0 + 1);
        }
        Ok(reg)
    }

    fn insert(
        &mut self,
        id: GroupId,
        members: BTreeSet<CellId>,
        purpose: GroupPurpose,
    ) -> Result<(), RrmError> {
        if members.len() < 2 {
            return Err(RrmError::GroupTooSmall(members.len()));
        }
        if let Some((&cell, &group)) = members
            .iter()
            .find_map(|c| self.cell_group.get_key_value(c))
        {
            return Err(RrmError::CellAlreadyGrouped { cell, group });
        }
        for &c in &members {
            self.cell_group.insert(c, id);
        }
        self.groups.insert(
            id,
            CellGroup {
                id,
                member_cells: members,
                purpose,
            },
        );
        Ok(())
    }

    pub fn form_group(
        &mut self,
        members: BTreeSet<CellId>,
        purpose: GroupPurpose,
    ) -> Result<GroupId, RrmError> {
        let id = GroupId(self.next_id.max(1));
        self.insert(id, members, purpose)?;
        self.next_id = id.0 + 1;
        Ok(id)
    }

    /// A group of `purpose` covering `cells`: an existing one, an existing
    /// one extended with ungrouped cells, or a new one.
    pub fn find_or_form(
        &mut self,
        cells: &BTreeSet<CellId>,
        purpose: GroupPurpose,
    ) -> Result<GroupId, RrmError> {
        let existing: BTreeSet<GroupId> =
            cells.iter().filter_map(|c| self.cell_group.get(c)).copied().collect();
        match existing.len() {
            0 => self.form_group(cells.clone(), purpose),
            1 => {
                let id = *existing.first().expect("one element");
                let group = self.groups.get_mut(&id).expect("registry consistent");
                if group.purpose != purpose {
                    return Err(RrmError::GroupPurposeConflict {
                        group: id,
                        existing: group.purpose,
                        requested: purpose,
                    });
                }
                for &c in cells {
                    group.member_cells.insert(c);
                    self.cell_group.insert(c, id);
                }
                Ok(id)
            }
            _ => {
                let cell = *cells
                    .iter()
                    .find(|c| self.cell_group.get(c) != existing.first())
                    .expect("cells in more than one group");
                Err(RrmError::CellAlreadyGrouped {
                    cell,
                    group: self.cell_group[&cell],
                })
            }
        }
    }

    /// Remove a group. Fails, listing the blockers, while any bearer
    /// references it.
    pub fn dissolve_group(
        &mut self,
        id: GroupId,
        references: impl IntoIterator<Item = (BearerId, Option<GroupId>)>,
    ) -> Result<CellGroup, RrmError> {
        if !self.groups.contains_key(&id) {
            return Err(RrmError::UnknownGroup(id));
        }
        let blockers: Vec<BearerId> = references
            .into_iter()
            .filter(|(_, g)| *g == Some(id))
            .map(|(b, _)| b)
            .collect();
        if !blockers.is_empty() {
            return Err(RrmError::GroupInUse {
                group: id,
                bearers: blockers,
            });
        }
        let group = self.groups.remove(&id).expect("checked above");
        for c in &group.member_cells {
            self.cell_group.remove(c);
        }
        Ok(group)
    }

    pub fn group(&self, id: GroupId) -> Option<&CellGroup> {
        self.groups.get(&id)
    }

    pub fn group_of(&self, cell: CellId) -> Option<GroupId> {
        self.cell_group.get(&cell).copied()
    }

    pub fn groups(&self) -> impl Iterator<Item = &CellGroup> {
        self.groups.values()
    }
}

/// What one QoS round observed for a bearer.
#[derive(Debug, Clone, PartialEq)]
pub struct BearerWindow {
    pub bearer: BearerId,
    pub qos: QosProfile,
    pub mode: DispatchMode,
    pub cells: BTreeSet<CellId>,
    pub delivered_bps: f64,
    /// Offered load; an xMBB bearer offering less than the target is not
    /// in shortfall.
    pub offered_bps: f64,
    /// Resolved packets in the window and how many of them missed.
    pub resolved: u64,
    pub missed: u64,
}

impl BearerWindow {
    pub fn miss_ratio(&self) -> f64 {
        if self.resolved == 0 {
            0.0
        } else {
            self.missed as f64 / self.resolved as f64
        }
    }
}

/// A reconfiguration the engine applies at the next TTI boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct StackConfigCommand {
    pub bearer: BearerId,
    pub mode: DispatchMode,
    /// New legs appended to the bearer.
    pub add: Vec<Unit>,
    pub group_purpose: Option<GroupPurpose>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QosAction {
    None,
    Command(StackConfigCommand),
    /// Out of QoS and nothing left to escalate to.
    Flag(String),
}

/// One QoS decision for a bearer. `spare` lists units the bearer does not
/// use yet, best first.
pub fn enforce_qos(window: &BearerWindow, spare: &[Unit]) -> QosAction {
    let q = &window.qos;
    match q.service_type {
        ServiceType::Xmbb => {
            let floor = XMBB_SHORTFALL * q.target_rate_bps;
            if q.target_rate_bps <= 0.0
                || window.offered_bps < floor
                || window.delivered_bps >= floor
            {
                return QosAction::None;
            }
            let Some(best) = spare.iter().max_by(|a, b| {
                a.capacity_bps
                    .total_cmp(&b.capacity_bps)
                    .then(b.cell.cmp(&a.cell))
            }) else {
                return QosAction::Flag(format!(
                    "rate {:.0} below {:.0} and no spare capacity",
                    window.delivered_bps, floor
                ));
            };
            let mut cells = window.cells.clone();
            cells.insert(best.cell);
            QosAction::Command(StackConfigCommand {
                bearer: window.bearer,
                mode: DispatchMode::Split,
                add: vec![best.clone()],
                group_purpose: (cells.len() > 1).then_some(GroupPurpose::Aggregation),
            })
        }
        ServiceType::Urc => {
            if window.resolved == 0 || window.miss_ratio() <= 1.0 - q.reliability_target {
                return QosAction::None;
            }
            if window.mode != DispatchMode::Duplicate {
                if let Some(u) = spare.iter().find(|u| !window.cells.contains(&u.cell)) {
                    return QosAction::Command(StackConfigCommand {
                        bearer: window.bearer,
                        mode: DispatchMode::Duplicate,
                        add: vec![u.clone()],
                        group_purpose: Some(GroupPurpose::Comp),
                    });
                }
            }
            QosAction::Flag(format!(
                "miss ratio {:.6} above {:.6}",
                window.miss_ratio(),
                1.0 - q.reliability_target
            ))
        }
        ServiceType::Mmtc => {
            if window.resolved > 0 && window.miss_ratio() > 1.0 - q.reliability_target {
                QosAction::Flag(format!("miss ratio {:.4}", window.miss_ratio()))
            } else {
                QosAction::None
            }
        }
    }
}
