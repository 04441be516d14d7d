//! Discrete-event driver: one queue, one clock, every layer.
//!
//! Traffic flows downlink: SDUs enter the network side of a bearer, go
//! through PDCP, the multipath dispatcher, RLC and MAC of each tunnel, cross
//! the abstract PHY and are reassembled and reordered on the UE side. A run
//! is single-threaded and a pure function of the scenario and the seed.

pub mod event;
pub mod metrics;
pub mod rng;
pub mod trace;
pub mod traffic;

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use rand::RngCore;

use crate::domain::{
    check_bearer_shape, check_group, check_ue_state, validate_scenario, BearerSpec, ScenarioConfig,
    TrafficModel, TrafficTarget, Violation,
    BearerId, CarrierId, Cell, CellId, ChannelId, DispatchMode, GroupPurpose, LayerPdu, LogicalChannel,
    QosProfile, RadioBearer, RatId, RatProfile, RrcState, SchedulerId, Sdu, SimTime, Tunnel, Ue, UeId,
};
use crate::forwarding::{Confirmation, Dispatcher, Placement};
use crate::mac::{
    band_access, demux, mux, schedule_tti, AccessOutcome, ChannelDemand, HarqEntity, HarqVerdict, MacError,
    MacLayer, TbContent, TransportBlock, MAC_SUBHEADER_BYTES,
};
use crate::pdcp::{CipherKey, PdcpEntity, RxOutcome};
use crate::phy::{self, link_budget, LinkState, Transmitter, TxOutcome};
use crate::rlc::{map_channel, RlcEntity, RlcMode};
use crate::rrc::{
    A3Tracker, MeasEntry, MeasurementConfig, MeasurementReport, PageOutcome, RrcEntity, RrcMode,
    CONTROL_DELAY_US, DEFAULT_REPORT_PERIOD_MS, SIB_PERIOD_US,
};
use crate::rrm::{
    self, BearerWindow, GroupRegistry, QosAction, RadioMap, StackConfigCommand, Unit, QOS_PERIOD_US,
};

use event::{EventKind, EventQueue};
use metrics::{
    ratio, BearerMetrics, CarrierMetrics, CellMetrics, EventCounts, Fates, Latency, Totals, UeMetrics,
};
use rng::Streams;
use traffic::{arrival_sdus, Arrivals};

pub use metrics::MetricsReport;
pub use trace::{Trace, TraceKind};

/// Per-run overrides of scenario fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub duration_ms: Option<u64>,
    /// Record invariant violations in the report instead of aborting.
    pub keep_going: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("scenario has {} violation(s); run `validate` for details", .0.len())]
    Invalid(Vec<Violation>),
    #[error("cannot set up scenario: {0}")]
    Setup(String),
    #[error("invariant violated at {time}: {diagnostic}")]
    Aborted {
        time: SimTime,
        diagnostic: String,
        report: Box<MetricsReport>,
    },
    #[error("trace output failed: {0}")]
    Trace(#[from] std::io::Error),
}

/// Simulate `config` and report. Fails before the first event if the
/// scenario does not validate.
pub fn run(config: &ScenarioConfig, options: &RunOptions, trace: Trace) -> Result<MetricsReport, EngineError> {
    let mut cfg = config.clone();
    if let Some(seed) = options.seed {
        cfg.seed = seed;
    }
    if let Some(d) = options.duration_ms {
        cfg.duration_ms = d;
    }
    let checked = validate_scenario(&cfg);
    if !checked.is_ok() {
        return Err(EngineError::Invalid(checked.violations().to_vec()));
    }
    let mut sim = Sim::new(&cfg, options.keep_going, trace)?;
    let outcome = sim.run_loop();
    let report = sim.report();
    sim.trace.finish()?;
    match outcome {
        Ok(()) => Ok(report),
        Err(Abort(diagnostic)) => Err(EngineError::Aborted {
            time: sim.now,
            diagnostic,
            report: Box::new(report),
        }),
    }
}

/// An invariant broke and the run stops.
#[derive(Debug)]
struct Abort(String);

type Step = Result<(), Abort>;
type HarqKey = (UeId, CellId, CarrierId);

#[derive(Debug)]
enum Ev {
    Tick(usize),
    Arrival(BearerId),
    Placement { tunnel: Tunnel, pdu: LayerPdu },
    Feedback { key: HarqKey, epoch: u64, pid: u8, outcome: TxOutcome },
    Delivery { tb: TransportBlock, outcome: TxOutcome },
    PdcpTimer(BearerId),
    RlcTimer(ChannelId),
    Establish { ue: UeId, sched: SchedulerId },
    Handover { ue: UeId, source: CellId, target: CellId },
    SibRound,
    MeasRound,
    QosRound,
}

impl Ev {
    fn kind(&self) -> EventKind {
        match self {
            Ev::Tick(_) => EventKind::TtiTick,
            Ev::Arrival(_) | Ev::Placement { .. } => EventKind::TrafficArrival,
            Ev::Feedback { .. } | Ev::Delivery { .. } => EventKind::Confirmation,
            Ev::PdcpTimer(_) | Ev::RlcTimer(_) => EventKind::Timer,
            _ => EventKind::Control,
        }
    }
}

struct UeState {
    ue: Ue,
    origin: [f64; 2],
    links: BTreeMap<(CellId, CarrierId), f64>,
    a3: A3Tracker,
    attaching: bool,
    handover_pending: bool,
    key: Option<CipherKey>,
    /// RRC entity holding the UE context.
    anchor: Option<SchedulerId>,
    flows: Vec<BearerId>,
}

struct ChannelState {
    lc: LogicalChannel,
    rlc: RlcEntity,
    ue: UeId,
    lcid: u8,
    rlc_timer: Option<SimTime>,
}

struct SduRecord {
    created: SimTime,
    payload: Bytes,
    copies: u8,
    failed: Vec<ChannelId>,
}

#[derive(Default)]
struct Window {
    delivered_bytes: u64,
    offered_bytes: u64,
    resolved: u64,
    missed: u64,
}

struct Live {
    rb: RadioBearer,
    rats: Vec<RatId>,
    tx: PdcpEntity,
    rx: PdcpEntity,
    disp: Dispatcher,
    created: SimTime,
    pdcp_timer: Option<SimTime>,
}

struct BearerState {
    id: BearerId,
    ue: UeId,
    qos: QosProfile,
    deadline_us: u64,
    model: Option<TrafficModel>,
    pinned: Option<BearerSpec>,
    live: Option<Live>,
    pending: Vec<(SimTime, Bytes)>,
    next_sdu: u64,
    records: BTreeMap<u64, SduRecord>,
    fates: Fates,
    delivered_bytes: u64,
    latencies: Vec<u64>,
    late: u64,
    last_sn: Option<u16>,
    in_order_violations: u64,
    window: Window,
    escalations: u64,
    qos_flags: u64,
    empty_queue_ttis: u64,
    best_effort: bool,
    reconfigured_at: SimTime,
    bytes_since_reconfig: u64,
}

impl BearerState {
    fn full_buffer(&self) -> Option<u32> {
        match self.model {
            Some(TrafficModel::XmbbFullBuffer { sdu_bytes }) => Some(sdu_bytes),
            _ => None,
        }
    }

    /// Account one resolved SDU that was not delivered.
    fn lose(&mut self, count: u64, skipped: bool) {
        if self.records.remove(&count).is_some() {
            if skipped {
                self.fates.skipped += 1;
            } else {
                self.fates.dropped += 1;
            }
            self.window.resolved += 1;
            self.window.missed += 1;
            if let Some(live) = self.live.as_mut() {
                live.tx.discard_count(count);
            }
        }
    }
}

#[derive(Default)]
struct CarrierStats {
    attempts: u64,
    grants: u64,
    ru_used: f64,
    bits_sent: u64,
    tbs: u64,
    harq_retx: u64,
    harq_drops: u64,
    lost: u64,
}

struct SchedSlot {
    id: SchedulerId,
    cell: usize,
    carriers: Vec<usize>,
}

struct Sim {
    now: SimTime,
    end: SimTime,
    seed: u64,
    duration_ms: u64,
    scenario_hash: String,
    keep_going: bool,
    queue: EventQueue<Ev>,
    rng: Streams,
    trace: Trace,

    rats: Vec<RatProfile>,
    cells: Vec<Cell>,
    cell_index: BTreeMap<CellId, usize>,
    interferers: BTreeMap<(CellId, CarrierId), Vec<Transmitter>>,
    slots_by_rat: Vec<Vec<SchedSlot>>,

    ues: BTreeMap<UeId, UeState>,
    mobile: Vec<UeId>,
    bearers: BTreeMap<BearerId, BearerState>,
    full_buffer: Vec<BearerId>,
    /// Bearers whose dispatcher still holds PDUs.
    holding: BTreeSet<BearerId>,

    mac: MacLayer,
    rrc: BTreeMap<SchedulerId, RrcEntity>,
    channels: BTreeMap<ChannelId, ChannelState>,
    next_channel: u32,
    active: BTreeMap<SchedulerId, BTreeSet<ChannelId>>,
    harq: BTreeMap<HarqKey, (u64, HarqEntity)>,
    harq_epoch: u64,
    retx_pending: BTreeMap<(CellId, CarrierId), BTreeSet<UeId>>,
    next_tb: u64,

    radio: RadioMap,
    groups: GroupRegistry,
    pending_cmds: Vec<StackConfigCommand>,
    rounds_started: bool,
    last_topup: Option<SimTime>,

    carrier_stats: BTreeMap<(CellId, CarrierId), CarrierStats>,
    events: EventCounts,
    totals: Totals,
    violations: Vec<String>,
}

fn sched_label(id: &SchedulerId) -> String {
    id.to_string()
}

impl Sim {
    fn new(cfg: &ScenarioConfig, keep_going: bool, trace: Trace) -> Result<Self, EngineError> {
        let rats = cfg.rats.clone();
        let cells = cfg.cells.clone();
        let cell_index: BTreeMap<CellId, usize> = cells.iter().enumerate().map(|(i, c)| (c.id, i)).collect();

        let mut interferers = BTreeMap::new();
        for cell in &cells {
            for carrier in &cell.carriers {
                let list: Vec<Transmitter> = cells
                    .iter()
                    .filter(|o| o.id != cell.id && o.carriers.iter().any(|k| phy::is_co_channel(k, carrier)))
                    .map(|o| Transmitter {
                        position: o.position,
                        tx_power_dbm: o.tx_power_dbm,
                    })
                    .collect();
                interferers.insert((cell.id, carrier.id), list);
            }
        }

        let mut mac = MacLayer::new();
        let mut rrc = BTreeMap::new();
        let mut slots_by_rat: Vec<Vec<SchedSlot>> = rats.iter().map(|_| Vec::new()).collect();
        let mut carrier_stats = BTreeMap::new();
        for (ci, cell) in cells.iter().enumerate() {
            for rat_id in cell.rats() {
                let Some(ri) = rats.iter().position(|r| r.id == rat_id) else {
                    continue;
                };
                let id = SchedulerId::new(cell.id, rat_id.clone());
                let carriers: Vec<usize> = cell
                    .carriers
                    .iter()
                    .enumerate()
                    .filter(|(_, k)| k.rat == rat_id)
                    .map(|(i, _)| i)
                    .collect();
                mac.add_scheduler(id.clone(), carriers.iter().map(|&k| cell.carriers[k].id).collect())
                    .map_err(|e| EngineError::Setup(e.to_string()))?;
                rrc.insert(id.clone(), RrcEntity::new(cell, &rats[ri]));
                for &k in &carriers {
                    carrier_stats.insert((cell.id, cell.carriers[k].id), CarrierStats::default());
                }
                slots_by_rat[ri].push(SchedSlot { id, cell: ci, carriers });
            }
        }

        let groups = GroupRegistry::from_cells(&cells).map_err(|e| EngineError::Setup(e.to_string()))?;

        let mut sim = Sim {
            now: SimTime::ZERO,
            end: SimTime::from_ms(cfg.duration_ms as f64),
            seed: cfg.seed,
            duration_ms: cfg.duration_ms,
            scenario_hash: cfg.canonical_hash(),
            keep_going,
            queue: EventQueue::new(),
            rng: Streams::new(cfg.seed),
            trace,
            rats,
            cells,
            cell_index,
            interferers,
            slots_by_rat,
            ues: BTreeMap::new(),
            mobile: Vec::new(),
            bearers: BTreeMap::new(),
            full_buffer: Vec::new(),
            holding: BTreeSet::new(),
            mac,
            rrc,
            channels: BTreeMap::new(),
            next_channel: 1,
            active: BTreeMap::new(),
            harq: BTreeMap::new(),
            harq_epoch: 0,
            retx_pending: BTreeMap::new(),
            next_tb: 0,
            radio: RadioMap::new(SimTime::from_ms(DEFAULT_REPORT_PERIOD_MS).as_us()),
            groups,
            pending_cmds: Vec::new(),
            rounds_started: false,
            last_topup: None,
            carrier_stats,
            events: EventCounts::default(),
            totals: Totals::default(),
            violations: Vec::new(),
        };

        for (ue, origin) in cfg.expand_ues() {
            let links = sim.compute_links(&ue, origin);
            if ue.is_mobile() {
                sim.mobile.push(ue.id);
            }
            sim.ues.insert(
                ue.id,
                UeState {
                    ue,
                    origin,
                    links,
                    a3: A3Tracker::default(),
                    attaching: false,
                    handover_pending: false,
                    key: None,
                    anchor: None,
                    flows: Vec::new(),
                },
            );
        }

        let mut max_channel = 0;
        for spec in &cfg.bearers {
            for t in &spec.tunnels {
                max_channel = max_channel.max(t.channel.0);
            }
            sim.add_bearer(spec.id, spec.ue, spec.qos, None, Some(spec.clone()));
        }
        sim.next_channel = max_channel + 1;
        let mut next_bearer = cfg.bearers.iter().map(|b| b.id.0).max().unwrap_or(0) + 1;
        for t in &cfg.traffic {
            match &t.target {
                TrafficTarget::Bearer { bearer } => {
                    if let Some(b) = sim.bearers.get_mut(bearer) {
                        b.model = Some(t.model);
                        b.deadline_us = deadline_us(&b.qos, &t.model);
                    }
                }
                TrafficTarget::Ues { ues, qos } => {
                    for ue in ues.ids() {
                        if sim.ues.contains_key(&ue) {
                            sim.add_bearer(BearerId(next_bearer), ue, *qos, Some(t.model), None);
                            next_bearer += 1;
                        }
                    }
                }
            }
        }
        sim.full_buffer = sim
            .bearers
            .values()
            .filter(|b| b.full_buffer().is_some())
            .map(|b| b.id)
            .collect();
        sim.start()?;
        Ok(sim)
    }

    fn add_bearer(&mut self, id: BearerId, ue: UeId, qos: QosProfile, model: Option<TrafficModel>, pinned: Option<BearerSpec>) {
        let deadline = model.map_or(SimTime::from_ms(qos.latency_budget_ms).as_us(), |m| deadline_us(&qos, &m));
        self.bearers.insert(
            id,
            BearerState {
                id,
                ue,
                qos,
                deadline_us: deadline,
                model,
                pinned,
                live: None,
                pending: Vec::new(),
                next_sdu: 0,
                records: BTreeMap::new(),
                fates: Fates::default(),
                delivered_bytes: 0,
                latencies: Vec::new(),
                late: 0,
                last_sn: None,
                in_order_violations: 0,
                window: Window::default(),
                escalations: 0,
                qos_flags: 0,
                empty_queue_ttis: 0,
                best_effort: false,
                reconfigured_at: SimTime::ZERO,
                bytes_since_reconfig: 0,
            },
        );
        if let Some(u) = self.ues.get_mut(&ue) {
            u.flows.push(id);
        }
    }

    fn start(&mut self) -> Result<(), EngineError> {
        for ri in 0..self.rats.len() {
            self.schedule(SimTime::ZERO, Ev::Tick(ri)).map_err(|a| EngineError::Setup(a.0))?;
        }
        let mut pinned_ues: BTreeMap<UeId, SchedulerId> = BTreeMap::new();
        for b in self.bearers.values() {
            if let Some(spec) = &b.pinned {
                let t = &spec.tunnels[0];
                pinned_ues
                    .entry(b.ue)
                    .or_insert_with(|| SchedulerId::new(t.cell, t.rat.clone()));
            }
        }
        for (ue, sched) in pinned_ues {
            if let Some(u) = self.ues.get_mut(&ue) {
                u.attaching = true;
            }
            self.schedule(SimTime::ZERO, Ev::Establish { ue, sched })
                .map_err(|a| EngineError::Setup(a.0))?;
        }
        let ids: Vec<BearerId> = self.bearers.keys().copied().collect();
        for id in ids {
            let b = &self.bearers[&id];
            let Some(model) = b.model else { continue };
            let first = match Arrivals::for_model(&model) {
                Arrivals::FullBuffer => Some(SimTime::ZERO),
                a => a.first(SimTime::ZERO, &mut self.rng.traffic),
            };
            if let Some(t) = first.filter(|&t| t < self.end) {
                self.schedule(t, Ev::Arrival(id)).map_err(|a| EngineError::Setup(a.0))?;
            }
        }
        Ok(())
    }

    fn schedule(&mut self, at: SimTime, ev: Ev) -> Step {
        let kind = ev.kind();
        self.queue.schedule(at, kind, ev).map_err(|e| Abort(e.to_string()))
    }

    fn violation(&mut self, msg: String) -> Step {
        let line = format!("{} ms: {msg}", self.now.as_ms());
        if self.keep_going {
            self.violations.push(line);
            Ok(())
        } else {
            self.violations.push(line.clone());
            Err(Abort(msg))
        }
    }

    fn run_loop(&mut self) -> Step {
        while let Some(t) = self.queue.peek_time() {
            if t >= self.end {
                break;
            }
            let (t, kind, ev) = self.queue.pop().expect("peeked");
            self.now = t;
            match kind {
                EventKind::TtiTick => self.events.tti_tick += 1,
                EventKind::TrafficArrival => self.events.traffic_arrival += 1,
                EventKind::Control => self.events.control += 1,
                EventKind::Timer => self.events.timer += 1,
                EventKind::Confirmation => self.events.confirmation += 1,
            }
            self.handle(ev)?;
        }
        Ok(())
    }

    fn handle(&mut self, ev: Ev) -> Step {
        match ev {
            Ev::Tick(ri) => self.on_tick(ri),
            Ev::Arrival(b) => self.on_arrival(b),
            Ev::Placement { tunnel, pdu } => {
                self.enqueue_at_cell(tunnel, pdu);
                Ok(())
            }
            Ev::Feedback { key, epoch, pid, outcome } => self.on_feedback(key, epoch, pid, outcome),
            Ev::Delivery { tb, outcome } => match outcome {
                TxOutcome::Delivered => self.receive(tb),
                TxOutcome::Lost => {
                    if let Some(s) = self.carrier_stats.get_mut(&(tb.cell, tb.carrier)) {
                        s.lost += 1;
                    }
                    self.lose_tb(&tb);
                    Ok(())
                }
            },
            Ev::PdcpTimer(b) => self.on_pdcp_timer(b),
            Ev::RlcTimer(ch) => self.on_rlc_timer(ch),
            Ev::Establish { ue, sched } => self.on_establish(ue, sched),
            Ev::Handover { ue, source, target } => self.execute_handover(ue, source, target),
            Ev::SibRound => self.on_sib_round(),
            Ev::MeasRound => self.on_meas_round(),
            Ev::QosRound => self.on_qos_round(),
        }
    }

    // ---- radio ----

    fn compute_links(&self, ue: &Ue, position: [f64; 2]) -> BTreeMap<(CellId, CarrierId), f64> {
        let mut out = BTreeMap::new();
        for cell in &self.cells {
            let tx = Transmitter {
                position: cell.position,
                tx_power_dbm: cell.tx_power_dbm,
            };
            for carrier in &cell.carriers {
                if ue.capabilities.supports(carrier) {
                    let intf = &self.interferers[&(cell.id, carrier.id)];
                    out.insert((cell.id, carrier.id), phy::sinr_db(position, &tx, carrier, intf));
                }
            }
        }
        out
    }

    /// Recompute links of a mobile UE and publish them to the radio map.
    /// Static UEs only refresh the timestamp.
    fn refresh_radio(&mut self, ue: UeId) {
        let now = self.now;
        let Some(u) = self.ues.get(&ue) else { return };
        if u.ue.is_mobile() {
            let pos = u.ue.position_at(u.origin, now);
            let links = self.compute_links(&u.ue, pos);
            let u = self.ues.get_mut(&ue).expect("present");
            u.ue.position = pos;
            u.links = links;
        }
        let u = &self.ues[&ue];
        self.radio.update(ue, now, u.links.iter().map(|(&k, &v)| (k, v)));
    }

    fn cell(&self, id: CellId) -> &Cell {
        &self.cells[self.cell_index[&id]]
    }

    fn rat(&self, id: &RatId) -> &RatProfile {
        self.rats.iter().find(|r| &r.id == id).expect("validated RAT")
    }

    fn backhaul_us(&self, cell: CellId) -> u64 {
        SimTime::from_ms(self.cell(cell).backhaul_delay_ms).as_us()
    }

    fn ensure_rounds(&mut self) -> Step {
        if self.rounds_started {
            return Ok(());
        }
        self.rounds_started = true;
        let align = |now: SimTime, period: u64| SimTime(now.0.div_ceil(period) * period);
        let meas = SimTime::from_ms(DEFAULT_REPORT_PERIOD_MS).as_us();
        let first_sib = align(self.now, SIB_PERIOD_US);
        let first_meas = align(self.now, meas);
        let first_qos = align(self.now, QOS_PERIOD_US);
        if first_sib < self.end {
            self.schedule(first_sib, Ev::SibRound)?;
        }
        if first_meas < self.end {
            self.schedule(first_meas, Ev::MeasRound)?;
        }
        if first_qos < self.end {
            self.schedule(first_qos, Ev::QosRound)?;
        }
        Ok(())
    }

    // ---- traffic ----

    fn make_payload(&mut self, size: u32) -> Bytes {
        let mut buf = vec![0u8; size as usize];
        self.rng.payload.fill_bytes(&mut buf);
        Bytes::from(buf)
    }

    fn on_arrival(&mut self, id: BearerId) -> Step {
        let Some(model) = self.bearers.get(&id).and_then(|b| b.model) else {
            return Ok(());
        };
        let ue = self.bearers[&id].ue;
        if let TrafficModel::XmbbFullBuffer { .. } = model {
            return self.ensure_attached(ue, id);
        }
        let sizes = arrival_sdus(&model, &mut self.rng.traffic);
        if let Some(next) = Arrivals::for_model(&model).next(self.now, &mut self.rng.traffic) {
            if next < self.end {
                self.schedule(next, Ev::Arrival(id))?;
            }
        }
        for size in sizes {
            let payload = self.make_payload(size);
            self.offer_sdu(id, payload);
        }
        let live = self.bearers[&id].live.is_some();
        if live {
            self.drain_bearer(id)
        } else {
            self.ensure_attached(ue, id)
        }
    }

    /// Count a new SDU and push it into PDCP, or park it until the bearer
    /// exists.
    fn offer_sdu(&mut self, id: BearerId, payload: Bytes) {
        let now = self.now;
        let b = self.bearers.get_mut(&id).expect("bearer");
        b.fates.offered += 1;
        b.window.offered_bytes += payload.len() as u64;
        if b.live.is_none() {
            b.pending.push((now, payload));
            return;
        }
        submit(b, now, payload);
    }

    fn top_up(&mut self) -> Step {
        let ids = self.full_buffer.clone();
        for id in ids {
            let Some(size) = self.bearers[&id].full_buffer() else { continue };
            if self.bearers[&id].live.is_none() {
                continue;
            }
            for _ in 0..10_000 {
                let ready = self.bearers[&id].live.as_ref().is_some_and(|l| l.disp.ready());
                if !ready {
                    break;
                }
                let payload = self.make_payload(size);
                self.offer_sdu(id, payload);
                self.drain_bearer(id)?;
            }
        }
        let held: Vec<BearerId> = self.holding.iter().copied().collect();
        for id in held {
            self.drain_bearer(id)?;
        }
        for id in self.full_buffer.clone() {
            let empty = {
                let b = &self.bearers[&id];
                match &b.live {
                    Some(l) => {
                        l.disp.held_len() == 0
                            && l.rb.tunnels.iter().all(|t| {
                                self.channels.get(&t.channel).is_none_or(|c| c.rlc.is_tx_empty())
                            })
                    }
                    None => false,
                }
            };
            if empty {
                self.bearers.get_mut(&id).expect("bearer").empty_queue_ttis += 1;
            }
        }
        Ok(())
    }

    /// Place whatever the dispatcher will release now.
    fn drain_bearer(&mut self, id: BearerId) -> Step {
        let placements = {
            let b = self.bearers.get_mut(&id).expect("bearer");
            let Some(live) = b.live.as_mut() else { return Ok(()) };
            let p = live.disp.drain(&mut self.rng.forwarding);
            if live.disp.held_len() > 0 {
                self.holding.insert(id);
            } else {
                self.holding.remove(&id);
            }
            for pl in &p {
                if let Some(count) = pl.pdu.pdcp_sn.and_then(|sn| live.tx.tx_count_for(sn)) {
                    if let Some(r) = b.records.get_mut(&count) {
                        r.copies = r.copies.saturating_add(1);
                    }
                }
            }
            p
        };
        for Placement { tunnel, pdu, .. } in placements {
            let delay = self.backhaul_us(tunnel.cell);
            if delay == 0 {
                self.enqueue_at_cell(tunnel, pdu);
            } else {
                self.schedule(self.now.plus_us(delay), Ev::Placement { tunnel, pdu })?;
            }
        }
        Ok(())
    }

    fn enqueue_at_cell(&mut self, tunnel: Tunnel, pdu: LayerPdu) {
        let Some(ch) = self.channels.get_mut(&tunnel.channel) else {
            self.totals.released_discards += 1;
            return;
        };
        if ch.rlc.mode == RlcMode::Transparent {
            self.totals.transparent_bytes_in += pdu.len() as u64;
        }
        ch.rlc.enqueue(pdu.pdcp_sn.unwrap_or(0), pdu.payload);
        self.active
            .entry(ch.lc.scheduler_id.clone())
            .or_default()
            .insert(tunnel.channel);
    }

    // ---- attach and bearer setup ----

    fn ensure_attached(&mut self, ue: UeId, bearer: BearerId) -> Step {
        let Some(u) = self.ues.get(&ue) else { return Ok(()) };
        if u.ue.rrc_state == RrcState::Connected {
            if self.bearers[&bearer].live.is_none() && !u.attaching {
                self.build_bearer(bearer)?;
            }
            return Ok(());
        }
        if u.attaching {
            return Ok(());
        }
        self.ues.get_mut(&ue).expect("ue").attaching = true;
        self.refresh_radio(ue);
        let now = self.now;
        let Some(cell) = rrm::attach(&self.radio, ue, now) else {
            return self.paging_failed(ue, None);
        };
        let u = &self.ues[&ue];
        let rat = self
            .cell(cell)
            .carriers
            .iter()
            .find(|c| u.ue.capabilities.supports(c))
            .map(|c| c.rat.clone());
        let Some(rat) = rat else {
            return self.paging_failed(ue, Some(cell));
        };
        let sched = SchedulerId::new(cell, rat);
        let best = self.radio.cell_sinrs(ue, now).get(&cell).copied().unwrap_or(f64::NEG_INFINITY);
        let entity = &self.rrc[&sched];
        if entity.mode == RrcMode::Full {
            let outcome = entity.page(&u.ue, best);
            let detail = match outcome {
                PageOutcome::Reached => "REACHED",
                PageOutcome::Unreached => "UNREACHED",
                PageOutcome::NoOp => "NOOP",
            };
            self.trace.rrc(now, "page", ue.0, cell.0, detail);
            if outcome == PageOutcome::Unreached {
                return self.paging_failed(ue, Some(cell));
            }
        }
        self.trace.rrm(now, "attach", &ue.to_string(), &sched_label(&sched));
        self.schedule(now.plus_us(CONTROL_DELAY_US), Ev::Establish { ue, sched })
    }

    fn paging_failed(&mut self, ue: UeId, cell: Option<CellId>) -> Step {
        self.totals.paging_failures += 1;
        let detail = cell.map_or("no cell detected".to_string(), |c| format!("{c} unreachable"));
        self.trace.rrm(self.now, "attach_failed", &ue.to_string(), &detail);
        let u = self.ues.get_mut(&ue).expect("ue");
        u.attaching = false;
        for id in u.flows.clone() {
            let b = self.bearers.get_mut(&id).expect("bearer");
            let n = b.pending.len() as u64;
            b.pending.clear();
            b.fates.dropped += n;
            b.window.resolved += n;
            b.window.missed += n;
        }
        Ok(())
    }

    fn on_establish(&mut self, ue: UeId, sched: SchedulerId) -> Step {
        let now = self.now;
        let measured: Vec<(CellId, CarrierId)> = self.ues[&ue].links.keys().copied().collect();
        let nonce = self.seed ^ (u64::from(ue.0) << 32) ^ now.0;
        let entity = self.rrc.get_mut(&sched).expect("scheduler has RRC");
        let u = self.ues.get_mut(&ue).expect("ue");
        let key = match entity.establish(&mut u.ue, nonce, MeasurementConfig::new(measured)) {
            Ok(k) => k,
            Err(e) => return self.violation(e.to_string()),
        };
        u.key = Some(key);
        u.anchor = Some(sched.clone());
        u.attaching = false;
        if entity.mode == RrcMode::Full {
            self.trace.rrc(now, "establish", ue.0, sched.cell.0, &sched.rat.to_string());
        }
        self.ensure_rounds()?;
        self.refresh_radio(ue);
        for id in self.ues[&ue].flows.clone() {
            if self.bearers[&id].live.is_none() {
                self.build_bearer(id)?;
            }
        }
        Ok(())
    }

    /// Legs, mode, purpose and best-effort flag for a bearer that is about
    /// to be set up.
    fn bearer_layout(&mut self, id: BearerId) -> Option<(Vec<(CellId, RatId, Option<ChannelId>)>, DispatchMode, bool)> {
        let b = &self.bearers[&id];
        if let Some(spec) = &b.pinned {
            let legs = spec.tunnels.iter().map(|t| (t.cell, t.rat.clone(), Some(t.channel))).collect();
            return Some((legs, spec.dispatch_mode, false));
        }
        let (ue, qos) = (b.ue, b.qos);
        self.refresh_radio(ue);
        let u = &self.ues[&ue];
        let serving = u.ue.serving_cells.first().copied()?;
        let units = rrm::candidate_units(&u.ue, qos.service_type, &self.cells, &self.rats, &self.radio, self.now);
        match rrm::plan_bearer(ue, &qos, serving, &units) {
            Ok(plan) => {
                let legs = plan.units.iter().map(|u| (u.cell, u.rat.clone(), None)).collect();
                Some((legs, plan.dispatch_mode, plan.best_effort))
            }
            Err(e) => {
                self.trace.rrm(self.now, "plan_failed", &id.to_string(), &e.to_string());
                None
            }
        }
    }

    fn build_bearer(&mut self, id: BearerId) -> Step {
        let now = self.now;
        let Some((mut legs, mut mode, mut best_effort)) = self.bearer_layout(id) else {
            let b = self.bearers.get_mut(&id).expect("bearer");
            let n = b.pending.len() as u64;
            b.pending.clear();
            b.fates.dropped += n;
            b.window.resolved += n;
            b.window.missed += n;
            return Ok(());
        };
        let pinned = self.bearers[&id].pinned.is_some();
        let (ue, qos) = (self.bearers[&id].ue, self.bearers[&id].qos);
        let cells: BTreeSet<CellId> = legs.iter().map(|l| l.0).collect();
        let mut group = None;
        if cells.len() > 1 {
            let purpose = purpose_for(mode);
            match self.groups.find_or_form(&cells, purpose) {
                Ok(g) => group = Some(g),
                Err(e) if pinned => return self.violation(format!("{id}: {e}")),
                Err(e) => {
                    self.trace.rrm(now, "group_conflict", &id.to_string(), &e.to_string());
                    legs.truncate(1);
                    mode = DispatchMode::Single;
                    best_effort = true;
                }
            }
        }

        let mut tunnels = Vec::new();
        let mut rats = Vec::new();
        for (cell, rat, ch) in legs {
            let ch = ch.unwrap_or_else(|| {
                let c = ChannelId(self.next_channel);
                self.next_channel += 1;
                c
            });
            self.open_channel(ch, id, ue, &qos, cell, &rat)?;
            tunnels.push(Tunnel { cell, channel: ch });
            rats.push(rat);
        }
        let delays: Vec<(Tunnel, u64)> = tunnels.iter().map(|&t| (t, self.backhaul_us(t.cell))).collect();
        let key = self.ues[&ue].key.unwrap_or_default();
        let rb = RadioBearer {
            id,
            ue_id: ue,
            qos,
            tunnels: tunnels.clone(),
            dispatch_mode: mode,
            group,
        };
        let detail = format!(
            "{mode} {}{}",
            tunnels
                .iter()
                .zip(&rats)
                .map(|(t, r)| format!("{}/{r}", t.cell))
                .collect::<Vec<_>>()
                .join("+"),
            if best_effort { " best_effort" } else { "" }
        );
        self.trace.rrm(now, "plan", &id.to_string(), &detail);
        {
            let b = self.bearers.get_mut(&id).expect("bearer");
            b.best_effort = best_effort;
            b.reconfigured_at = now;
            b.bytes_since_reconfig = 0;
            b.live = Some(Live {
                rb,
                rats,
                tx: PdcpEntity::new(id, key),
                rx: PdcpEntity::new(id, key),
                disp: Dispatcher::new(mode, &delays, now),
                created: now,
                pdcp_timer: None,
            });
            let pending = std::mem::take(&mut b.pending);
            for (created, payload) in pending {
                submit(b, created, payload);
            }
        }
        self.ues.get_mut(&ue).expect("ue").ue.bearers.insert(id);
        self.update_serving(ue);
        self.check_state(ue, Some(id))?;
        self.drain_bearer(id)
    }

    fn open_channel(&mut self, ch: ChannelId, bearer: BearerId, ue: UeId, qos: &QosProfile, cell: CellId, rat: &RatId) -> Step {
        let cell_ref = self.cell(cell).clone();
        let rat_ref = self.rat(rat).clone();
        let (lc, rlc) = match map_channel(ch, bearer, qos.service_type, qos.priority, &cell_ref, &rat_ref) {
            Ok(x) => x,
            Err(e) => return self.violation(e.to_string()),
        };
        let lcid = match self.mac.bind_channel(ch, ue, &lc.scheduler_id) {
            Ok(l) => l,
            Err(e) => return self.violation(e.to_string()),
        };
        self.channels.insert(
            ch,
            ChannelState {
                lc,
                rlc,
                ue,
                lcid,
                rlc_timer: None,
            },
        );
        Ok(())
    }

    fn close_channel(&mut self, ch: ChannelId) {
        if let Some(mut c) = self.channels.remove(&ch) {
            c.rlc.drain_tx();
            if let Some(set) = self.active.get_mut(&c.lc.scheduler_id) {
                set.remove(&ch);
            }
        }
        let _ = self.mac.unbind_channel(ch);
    }

    /// Serving cells: the RRC anchor first, then every other cell that
    /// carries a tunnel of one of the UE's bearers.
    fn update_serving(&mut self, ue: UeId) {
        let u = &self.ues[&ue];
        if u.ue.rrc_state != RrcState::Connected {
            return;
        }
        let mut cells = Vec::new();
        if let Some(a) = &u.anchor {
            cells.push(a.cell);
        }
        let mut rest = BTreeSet::new();
        for id in &u.ue.bearers {
            if let Some(live) = self.bearers.get(id).and_then(|b| b.live.as_ref()) {
                for t in &live.rb.tunnels {
                    rest.insert(t.cell);
                }
            }
        }
        for c in rest {
            if !cells.contains(&c) {
                cells.push(c);
            }
        }
        self.ues.get_mut(&ue).expect("ue").ue.serving_cells = cells;
    }

    /// Re-check live structural invariants after a reconfiguration.
    fn check_state(&mut self, ue: UeId, bearer: Option<BearerId>) -> Step {
        let mut problems: Vec<String> = Vec::new();
        problems.extend(check_ue_state(&self.ues[&ue].ue).into_iter().map(|v| v.to_string()));
        if let Some(live) = bearer.and_then(|b| self.bearers.get(&b)).and_then(|b| b.live.as_ref()) {
            problems.extend(check_bearer_shape(&live.rb).into_iter().map(|v| v.to_string()));
            let cells: BTreeSet<CellId> = live.rb.tunnels.iter().map(|t| t.cell).collect();
            if cells.len() > 1 {
                let covered = live
                    .rb
                    .group
                    .and_then(|g| self.groups.group(g))
                    .is_some_and(|g| cells.is_subset(&g.member_cells));
                if !covered {
                    problems.push(format!("{} spans cells {cells:?} without a covering group", live.rb.id));
                }
            }
        }
        for g in self.groups.groups() {
            problems.extend(check_group(g).into_iter().map(|v| v.to_string()));
        }
        if let Err(e) = self.mac.check_exclusivity() {
            problems.push(e.to_string());
        }
        for p in problems {
            self.violation(p)?;
        }
        Ok(())
    }

    // ---- MAC and PHY ----

    fn on_tick(&mut self, ri: usize) -> Step {
        let cmds = std::mem::take(&mut self.pending_cmds);
        for cmd in cmds {
            self.apply_command(cmd)?;
        }
        if self.last_topup != Some(self.now) {
            self.last_topup = Some(self.now);
            self.top_up()?;
        }
        for si in 0..self.slots_by_rat[ri].len() {
            for ki in 0..self.slots_by_rat[ri][si].carriers.len() {
                self.schedule_carrier(ri, si, ki)?;
            }
        }
        let next = self.now.plus_us(self.rats[ri].tti());
        if next < self.end {
            self.schedule(next, Ev::Tick(ri))?;
        }
        Ok(())
    }

    fn link_of(&self, ue: UeId, cell: CellId, carrier: CarrierId) -> Option<f64> {
        self.ues.get(&ue)?.links.get(&(cell, carrier)).copied()
    }

    fn schedule_carrier(&mut self, ri: usize, si: usize, ki: usize) -> Step {
        let now = self.now;
        let slot = &self.slots_by_rat[ri][si];
        let sched = slot.id.clone();
        let cell_id = self.cells[slot.cell].id;
        let carrier = self.cells[slot.cell].carriers[slot.carriers[ki]].clone();
        let rat = self.rats[ri].clone();
        let skey = (cell_id, carrier.id);

        let access = band_access(&carrier, now, &mut self.rng.access);
        let stats = self.carrier_stats.get_mut(&skey).expect("carrier stats");
        stats.attempts += 1;
        if access == AccessOutcome::Deferred {
            return Ok(());
        }
        stats.grants += 1;

        let total_ru = phy::resource_units(&rat, &carrier) as f64;
        let mut ru_left = total_ru;
        let mut busy: BTreeSet<UeId> = BTreeSet::new();

        // Retransmissions go first and keep their UE out of new scheduling.
        let retx_ues: Vec<UeId> = self
            .retx_pending
            .get(&skey)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        for ue in retx_ues {
            busy.insert(ue);
            let hkey = (ue, cell_id, carrier.id);
            let sinr = self.link_of(ue, cell_id, carrier.id).unwrap_or(f64::NEG_INFINITY);
            let budget = link_budget(&rat, &carrier, sinr);
            let Some((epoch, h)) = self.harq.get_mut(&hkey) else { continue };
            let epoch = *epoch;
            let Some((pid, tb)) = h.peek_retransmission() else { continue };
            let bits = tb.bits();
            let need = if budget.bits_per_ru > 0.0 {
                (bits as f64 / budget.bits_per_ru).ceil()
            } else {
                total_ru
            };
            if need > ru_left {
                continue;
            }
            ru_left -= need;
            h.pop_retransmission();
            let still = h.has_retransmission();
            let outcome = if bits > budget.capacity_bits {
                TxOutcome::Lost
            } else {
                let link = LinkState {
                    ue,
                    cell: cell_id,
                    carrier: carrier.id,
                    sinr_db: sinr,
                    ideal: carrier.ideal,
                    updated_at: now,
                };
                phy::transmit(bits, &budget, &link, &rat, &mut self.rng.phy).unwrap_or(TxOutcome::Lost)
            };
            if !still {
                if let Some(s) = self.retx_pending.get_mut(&skey) {
                    s.remove(&ue);
                }
            }
            let st = self.carrier_stats.get_mut(&skey).expect("stats");
            st.harq_retx += 1;
            st.bits_sent += bits;
            st.ru_used += need;
            self.totals.harq_retransmissions += 1;
            self.schedule(now.plus_us(rat.tti()), Ev::Feedback { key: hkey, epoch, pid, outcome })?;
        }

        let Some(active) = self.active.get(&sched) else { return Ok(()) };
        let active: Vec<ChannelId> = active.iter().copied().collect();
        let mut demands = Vec::new();
        let mut bpr: BTreeMap<ChannelId, f64> = BTreeMap::new();
        for ch in active {
            let c = &self.channels[&ch];
            if busy.contains(&c.ue) || !carrier.service_role.serves(c.lc.service) {
                continue;
            }
            let Some(u) = self.ues.get(&c.ue) else { continue };
            if !u.ue.capabilities.supports(&carrier) {
                continue;
            }
            let Some(sinr) = u.links.get(&(cell_id, carrier.id)).copied() else { continue };
            let budget = link_budget(&rat, &carrier, sinr);
            if budget.bits_per_ru <= 0.0 {
                continue;
            }
            if rat.has_harq {
                if let Some((_, h)) = self.harq.get(&(c.ue, cell_id, carrier.id)) {
                    if h.free_process().is_none() {
                        continue;
                    }
                }
            }
            let pending_bits = c.rlc.buffer_status(MAC_SUBHEADER_BYTES) * 8;
            let whole_pdus = (c.rlc.mode == RlcMode::Transparent).then(|| {
                c.rlc
                    .head_pdu_sizes(MAC_SUBHEADER_BYTES, 64)
                    .into_iter()
                    .map(|b| b * 8)
                    .collect()
            });
            bpr.insert(ch, budget.bits_per_ru);
            demands.push(ChannelDemand {
                channel: ch,
                priority: c.lc.priority,
                pending_bits,
                bits_per_ru: budget.bits_per_ru,
                whole_pdus,
            });
        }
        if demands.is_empty() {
            return Ok(());
        }
        let pointers = &mut self.mac.scheduler_mut(&sched).expect("scheduler").pointers;
        let allocations = schedule_tti(pointers, ru_left, &demands);

        let tti_index = now.0 / rat.tti().max(1);
        let mut per_ue: BTreeMap<UeId, (Vec<(u8, Bytes)>, Vec<TbContent>)> = BTreeMap::new();
        let mut sent: Vec<(BearerId, Tunnel, usize)> = Vec::new();
        for a in allocations {
            let c = self.channels.get_mut(&a.channel).expect("active channel");
            let header = c.rlc.mode.header_bytes();
            let pulled = c.rlc.pull((a.bits / 8) as usize, MAC_SUBHEADER_BYTES);
            if c.rlc.is_tx_empty() {
                if let Some(set) = self.active.get_mut(&sched) {
                    set.remove(&a.channel);
                }
            }
            if pulled.is_empty() {
                continue;
            }
            let entry = per_ue.entry(c.ue).or_default();
            let mut payload_bytes = 0;
            for p in pulled {
                payload_bytes += p.bytes.len() - header;
                entry.1.push(TbContent {
                    channel: a.channel,
                    pdcp_sn: p.sn,
                    last_segment: p.last_segment,
                });
                entry.0.push((c.lcid, p.bytes));
            }
            sent.push((c.lc.bearer_id, Tunnel { cell: cell_id, channel: a.channel }, payload_bytes));
            self.trace.mac(tti_index, cell_id.0, carrier.id.0, a.channel.0, a.bits);
            let st = self.carrier_stats.get_mut(&skey).expect("stats");
            st.ru_used += a.bits as f64 / bpr[&a.channel];
        }
        for (bearer, tunnel, bytes) in sent {
            if let Some(live) = self.bearers.get_mut(&bearer).and_then(|b| b.live.as_mut()) {
                if let Some(leg) = live.disp.leg_of(tunnel) {
                    live.disp.on_sent(leg, bytes);
                }
            }
        }

        for (ue, (entries, contents)) in per_ue {
            let Some(data) = mux(&entries) else { continue };
            let sinr = self.link_of(ue, cell_id, carrier.id).unwrap_or(f64::NEG_INFINITY);
            let budget = link_budget(&rat, &carrier, sinr);
            let tb = TransportBlock {
                id: self.next_tb,
                ue,
                cell: cell_id,
                carrier: carrier.id,
                data,
                contents,
            };
            self.next_tb += 1;
            let link = LinkState {
                ue,
                cell: cell_id,
                carrier: carrier.id,
                sinr_db: sinr,
                ideal: carrier.ideal,
                updated_at: now,
            };
            let bits = tb.bits();
            let outcome = match phy::transmit(bits, &budget, &link, &rat, &mut self.rng.phy) {
                Ok(o) => o,
                Err(e) => return self.violation(e.to_string()),
            };
            let st = self.carrier_stats.get_mut(&skey).expect("stats");
            st.tbs += 1;
            st.bits_sent += bits;
            let due = now.plus_us(rat.tti());
            if rat.has_harq {
                let hkey = (ue, cell_id, carrier.id);
                if !self.harq.contains_key(&hkey) {
                    self.harq_epoch += 1;
                    self.harq.insert(hkey, (self.harq_epoch, HarqEntity::new(rat.harq_max_tx)));
                }
                let (epoch, h) = self.harq.get_mut(&hkey).expect("inserted");
                let epoch = *epoch;
                let pid = match h.start(tb) {
                    Ok(p) => p,
                    Err(e) => return self.violation(e.to_string()),
                };
                self.totals.harq_blocks += 1;
                self.schedule(due, Ev::Feedback { key: hkey, epoch, pid, outcome })?;
            } else {
                self.schedule(due, Ev::Delivery { tb, outcome })?;
            }
        }
        Ok(())
    }

    fn on_feedback(&mut self, key: HarqKey, epoch: u64, pid: u8, outcome: TxOutcome) -> Step {
        let Some((e, h)) = self.harq.get_mut(&key) else {
            self.totals.released_discards += 1;
            return Ok(());
        };
        if *e != epoch {
            self.totals.released_discards += 1;
            return Ok(());
        }
        let result = h.feedback(pid, outcome);
        match result {
            Ok((HarqVerdict::Done, Some(tb))) => self.receive(tb),
            Ok((HarqVerdict::Retransmit, _)) => {
                self.retx_pending.entry((key.1, key.2)).or_default().insert(key.0);
                Ok(())
            }
            Ok((HarqVerdict::Drop, Some(tb))) => {
                self.totals.harq_drops += 1;
                if let Some(s) = self.carrier_stats.get_mut(&(key.1, key.2)) {
                    s.harq_drops += 1;
                }
                self.lose_tb(&tb);
                Ok(())
            }
            Ok((v, None)) => self.violation(format!("HARQ {v:?} without a block on process {pid}")),
            Err(e @ MacError::FeedbackOnIdle { .. }) => self.violation(e.to_string()),
            Err(e) => self.violation(e.to_string()),
        }
    }

    /// A block is gone for good: every PDU copy it carried failed on its
    /// path, and upper layers learn it at once.
    fn lose_tb(&mut self, tb: &TransportBlock) {
        let now = self.now;
        if let Ok(entries) = demux(&tb.data, |_| true) {
            for (lcid, bytes) in entries {
                let tm = self
                    .mac
                    .channel_for(tb.ue, lcid)
                    .and_then(|ch| self.channels.get(&ch))
                    .is_some_and(|c| c.rlc.mode == RlcMode::Transparent);
                if tm {
                    self.totals.transparent_bytes_lost += bytes.len() as u64;
                }
            }
        }
        let mut seen: BTreeSet<(ChannelId, u16)> = BTreeSet::new();
        let mut lost_on: BTreeSet<ChannelId> = BTreeSet::new();
        for c in &tb.contents {
            if !seen.insert((c.channel, c.pdcp_sn)) {
                continue;
            }
            let Some(chs) = self.channels.get(&c.channel) else { continue };
            if chs.lc.cell_id != tb.cell {
                continue;
            }
            let bearer = chs.lc.bearer_id;
            lost_on.insert(c.channel);
            let Some(b) = self.bearers.get_mut(&bearer) else { continue };
            let Some(count) = b.live.as_ref().and_then(|l| l.tx.tx_count_for(c.pdcp_sn)) else {
                continue;
            };
            let gone = match b.records.get_mut(&count) {
                Some(r) if !r.failed.contains(&c.channel) => {
                    r.failed.push(c.channel);
                    r.failed.len() >= usize::from(r.copies)
                }
                _ => false,
            };
            if gone {
                b.lose(count, false);
            }
        }
        for ch in lost_on {
            let bearer = self.channels[&ch].lc.bearer_id;
            if let Some(live) = self.bearers.get_mut(&bearer).and_then(|b| b.live.as_mut()) {
                live.disp.confirm(Tunnel { cell: tb.cell, channel: ch }, 0, Confirmation::Lost, now);
            }
        }
    }

    fn receive(&mut self, tb: TransportBlock) -> Step {
        let now = self.now;
        let entries = match demux(&tb.data, |_| true) {
            Ok(e) => e,
            Err(_) => {
                self.mac.malformed_tbs += 1;
                return Ok(());
            }
        };
        for (lcid, bytes) in entries {
            let ch = match self.mac.channel_for(tb.ue, lcid) {
                Some(ch) if self.channels.get(&ch).is_some_and(|c| c.lc.cell_id == tb.cell) => ch,
                _ => {
                    self.totals.released_discards += 1;
                    continue;
                }
            };
            let c = self.channels.get_mut(&ch).expect("checked");
            let pdu = match c.rlc.decode(bytes) {
                Ok(p) => p,
                Err(_) => {
                    self.mac.malformed_tbs += 1;
                    continue;
                }
            };
            let out = c.rlc.rlc_rx(pdu, now);
            let mut arm = None;
            if c.rlc.has_partials() {
                if let Some(d) = c.rlc.next_deadline() {
                    if c.rlc_timer.is_none_or(|t| t > d || t < now) {
                        c.rlc_timer = Some(d);
                        arm = Some(d);
                    }
                }
            }
            let bearer = c.lc.bearer_id;
            let transparent = c.rlc.mode == RlcMode::Transparent;
            if let Some(d) = arm {
                self.schedule(d, Ev::RlcTimer(ch))?;
            }
            let Some(pdcp) = out else { continue };
            if transparent {
                self.totals.transparent_bytes_out += pdcp.len() as u64;
            }
            self.pdcp_receive(bearer, Tunnel { cell: tb.cell, channel: ch }, pdcp)?;
        }
        Ok(())
    }

    fn pdcp_receive(&mut self, id: BearerId, tunnel: Tunnel, bytes: Bytes) -> Step {
        let now = self.now;
        let Some(b) = self.bearers.get_mut(&id) else { return Ok(()) };
        let Some(live) = b.live.as_mut() else { return Ok(()) };
        if bytes.len() >= 2 {
            let sn = u16::from_be_bytes([bytes[0], bytes[1]]) & 0x0fff;
            let delay_ms = live
                .tx
                .tx_count_for(sn)
                .and_then(|c| b.records.get(&c))
                .map_or(0.0, |r| now.saturating_since(r.created) as f64 / 1000.0);
            live.tx.confirm(sn);
            live.disp.confirm(tunnel, bytes.len(), Confirmation::Delivered { delay_ms }, now);
        }
        let out = live.rx.pdcp_rx(bytes, now);
        self.apply_rx(id, out)?;
        self.arm_pdcp_timer(id)
    }

    fn apply_rx(&mut self, id: BearerId, out: RxOutcome) -> Step {
        let now = self.now;
        let mut problems = Vec::new();
        {
            let b = self.bearers.get_mut(&id).expect("bearer");
            for d in out.delivered {
                if let Some(last) = b.last_sn {
                    let step = (u32::from(d.sn) + 4096 - u32::from(last)) % 4096;
                    if !(1..2048).contains(&step) {
                        b.in_order_violations += 1;
                        problems.push(format!("{id}: SN {} delivered after {last}", d.sn));
                    }
                }
                b.last_sn = Some(d.sn);
                let Some(rec) = b.records.remove(&d.count) else {
                    problems.push(format!("{id}: COUNT {} delivered with no outstanding SDU", d.count));
                    continue;
                };
                if let Some(live) = b.live.as_mut() {
                    live.tx.discard_count(d.count);
                }
                if rec.payload != d.payload {
                    self.totals.payload_mismatches += 1;
                    problems.push(format!("{id}: payload of COUNT {} altered in transit", d.count));
                }
                let latency = now.saturating_since(rec.created);
                b.latencies.push(latency);
                if latency > b.deadline_us {
                    b.late += 1;
                    b.window.missed += 1;
                }
                b.fates.delivered += 1;
                b.delivered_bytes += d.payload.len() as u64;
                b.bytes_since_reconfig += d.payload.len() as u64;
                b.window.delivered_bytes += d.payload.len() as u64;
                b.window.resolved += 1;
            }
            for c in out.skipped {
                b.lose(c, true);
            }
        }
        for p in problems {
            self.violation(p)?;
        }
        Ok(())
    }

    fn arm_pdcp_timer(&mut self, id: BearerId) -> Step {
        let Some(live) = self.bearers.get_mut(&id).and_then(|b| b.live.as_mut()) else {
            return Ok(());
        };
        let Some(d) = live.rx.reordering_deadline() else {
            return Ok(());
        };
        if live.pdcp_timer == Some(d) {
            return Ok(());
        }
        live.pdcp_timer = Some(d);
        self.schedule(d, Ev::PdcpTimer(id))
    }

    fn on_pdcp_timer(&mut self, id: BearerId) -> Step {
        let now = self.now;
        let out = {
            let Some(live) = self.bearers.get_mut(&id).and_then(|b| b.live.as_mut()) else {
                return Ok(());
            };
            if live.pdcp_timer.is_some_and(|t| t <= now) {
                live.pdcp_timer = None;
            }
            live.rx.on_timer(now)
        };
        self.apply_rx(id, out)?;
        self.arm_pdcp_timer(id)
    }

    fn on_rlc_timer(&mut self, ch: ChannelId) -> Step {
        let now = self.now;
        let Some(c) = self.channels.get_mut(&ch) else { return Ok(()) };
        c.rlc.expire(now);
        c.rlc_timer = None;
        if let Some(d) = c.rlc.next_deadline() {
            c.rlc_timer = Some(d.max(now));
            self.schedule(d.max(now), Ev::RlcTimer(ch))?;
        }
        Ok(())
    }

    // ---- control rounds ----

    fn on_sib_round(&mut self) -> Step {
        if self.trace.rrc_enabled() {
            let now = self.now;
            let mut lines = Vec::new();
            for (sched, entity) in &self.rrc {
                if entity.mode != RrcMode::Full {
                    continue;
                }
                let heard = entity.broadcast_sib(self.ues.values().map(|u| {
                    let best = u
                        .links
                        .range((sched.cell, CarrierId(0))..=(sched.cell, CarrierId(u32::MAX)))
                        .filter(|((_, k), _)| entity.sib.carriers.contains(k))
                        .map(|(_, &s)| s)
                        .fold(f64::NEG_INFINITY, f64::max);
                    (u.ue.id, best)
                }));
                lines.push((sched.cell.0, format!("{} detected={}", sched.rat, heard.len())));
            }
            for (cell, detail) in lines {
                self.trace.rrc(now, "sib", 0, cell, &detail);
            }
        }
        let next = self.now.plus_us(SIB_PERIOD_US);
        if next < self.end {
            self.schedule(next, Ev::SibRound)?;
        }
        Ok(())
    }

    fn on_meas_round(&mut self) -> Step {
        let now = self.now;
        for ue in self.mobile.clone() {
            if self.ues[&ue].ue.rrc_state != RrcState::Connected {
                continue;
            }
            self.refresh_radio(ue);
            let u = &self.ues[&ue];
            if u.handover_pending {
                continue;
            }
            let Some(anchor) = u.anchor.clone() else { continue };
            let entity = &self.rrc[&anchor];
            let Some(ctx) = entity.context(ue) else { continue };
            let cfg = ctx.measurement.clone();
            let entries = u
                .links
                .iter()
                .map(|(&(cell, carrier), &sinr_db)| MeasEntry { cell, carrier, sinr_db })
                .collect();
            let report = MeasurementReport::new(ue, now, entries, &cfg);
            let u = self.ues.get_mut(&ue).expect("ue");
            let full = entity.mode == RrcMode::Full;
            if let Some(d) = u.a3.observe(anchor.cell, &report, &cfg) {
                u.handover_pending = true;
                if full {
                    self.trace.rrc(now, "a3_trigger", ue.0, d.source.0, &d.target.to_string());
                }
                self.schedule(
                    now.plus_us(CONTROL_DELAY_US),
                    Ev::Handover {
                        ue,
                        source: d.source,
                        target: d.target,
                    },
                )?;
            }
        }
        let next = now.plus_us(SimTime::from_ms(DEFAULT_REPORT_PERIOD_MS).as_us());
        if next < self.end {
            self.schedule(next, Ev::MeasRound)?;
        }
        Ok(())
    }

    fn on_qos_round(&mut self) -> Step {
        let now = self.now;
        let window_s = QOS_PERIOD_US as f64 / 1e6;
        let ids: Vec<BearerId> = self.bearers.keys().copied().collect();
        for id in ids {
            let w = {
                let b = self.bearers.get_mut(&id).expect("bearer");
                let Some(live) = b.live.as_ref() else {
                    b.window = Window::default();
                    continue;
                };
                let young = now.saturating_since(live.created) < QOS_PERIOD_US;
                let w = BearerWindow {
                    bearer: id,
                    qos: b.qos,
                    mode: live.rb.dispatch_mode,
                    cells: live.rb.tunnels.iter().map(|t| t.cell).collect(),
                    delivered_bps: b.window.delivered_bytes as f64 * 8.0 / window_s,
                    offered_bps: if b.full_buffer().is_some() {
                        f64::INFINITY
                    } else {
                        b.window.offered_bytes as f64 * 8.0 / window_s
                    },
                    resolved: b.window.resolved,
                    missed: b.window.missed,
                };
                b.window = Window::default();
                if young {
                    continue;
                }
                w
            };
            let mut action = rrm::enforce_qos(&w, &[]);
            if matches!(action, QosAction::Flag(_)) {
                let spare = self.spare_units(id);
                action = rrm::enforce_qos(&w, &spare);
            }
            match action {
                QosAction::None => {}
                QosAction::Command(cmd) => self.pending_cmds.push(cmd),
                QosAction::Flag(msg) => {
                    self.totals.qos_flags += 1;
                    self.bearers.get_mut(&id).expect("bearer").qos_flags += 1;
                    self.trace.rrm(now, "qos_flag", &id.to_string(), &msg);
                }
            }
        }
        let next = now.plus_us(QOS_PERIOD_US);
        if next < self.end {
            self.schedule(next, Ev::QosRound)?;
        }
        Ok(())
    }

    /// Units the bearer's UE could use that the bearer does not use yet.
    fn spare_units(&mut self, id: BearerId) -> Vec<Unit> {
        let b = &self.bearers[&id];
        let Some(live) = b.live.as_ref() else { return Vec::new() };
        let used: BTreeSet<(CellId, RatId)> = live
            .rb
            .tunnels
            .iter()
            .zip(&live.rats)
            .map(|(t, r)| (t.cell, r.clone()))
            .collect();
        let (ue, service) = (b.ue, b.qos.service_type);
        self.refresh_radio(ue);
        rrm::candidate_units(&self.ues[&ue].ue, service, &self.cells, &self.rats, &self.radio, self.now)
            .into_iter()
            .filter(|u| !used.contains(&(u.cell, u.rat.clone())))
            .collect()
    }

    fn apply_command(&mut self, cmd: StackConfigCommand) -> Step {
        let now = self.now;
        let id = cmd.bearer;
        let Some(b) = self.bearers.get(&id) else { return Ok(()) };
        let Some(live) = b.live.as_ref() else { return Ok(()) };
        let (ue, qos) = (b.ue, b.qos);
        let old_mode = live.rb.dispatch_mode;
        let mut cells: BTreeSet<CellId> = live.rb.tunnels.iter().map(|t| t.cell).collect();
        for u in &cmd.add {
            cells.insert(u.cell);
        }
        let mut group = live.rb.group;
        if cells.len() > 1 {
            let purpose = cmd.group_purpose.unwrap_or(purpose_for(cmd.mode));
            match self.groups.find_or_form(&cells, purpose) {
                Ok(g) => group = Some(g),
                Err(e) => {
                    self.trace.rrm(now, "command_rejected", &id.to_string(), &e.to_string());
                    return Ok(());
                }
            }
        }
        let mut added = Vec::new();
        for u in &cmd.add {
            let ch = ChannelId(self.next_channel);
            self.next_channel += 1;
            self.open_channel(ch, id, ue, &qos, u.cell, &u.rat)?;
            added.push((Tunnel { cell: u.cell, channel: ch }, u.rat.clone()));
        }
        let mut delays = Vec::new();
        {
            let live = self.bearers.get_mut(&id).and_then(|b| b.live.as_mut()).expect("live");
            for (t, r) in &added {
                live.rb.tunnels.push(*t);
                live.rats.push(r.clone());
            }
            live.rb.dispatch_mode = cmd.mode;
            live.rb.group = group;
            for t in &live.rb.tunnels {
                delays.push(*t);
            }
        }
        let delays: Vec<(Tunnel, u64)> = delays.into_iter().map(|t| (t, self.backhaul_us(t.cell))).collect();
        {
            let b = self.bearers.get_mut(&id).expect("bearer");
            let live = b.live.as_mut().expect("live");
            live.disp.reconfigure(cmd.mode, &delays, now);
            b.escalations += 1;
            b.reconfigured_at = now;
            b.bytes_since_reconfig = 0;
        }
        self.totals.rrm_commands += 1;
        let detail = format!(
            "{old_mode}->{} {}",
            cmd.mode,
            added
                .iter()
                .map(|(t, r)| format!("+{}/{r}", t.cell))
                .collect::<Vec<_>>()
                .join(" ")
        );
        self.trace.rrm(now, "escalate", &id.to_string(), &detail);
        self.update_serving(ue);
        self.check_state(ue, Some(id))?;
        self.drain_bearer(id)
    }

    // ---- mobility ----

    fn execute_handover(&mut self, ue: UeId, source: CellId, target: CellId) -> Step {
        let now = self.now;
        let Some(u) = self.ues.get_mut(&ue) else { return Ok(()) };
        u.handover_pending = false;
        u.a3 = A3Tracker::default();
        let Some(anchor) = u.anchor.clone() else { return Ok(()) };
        if u.ue.rrc_state != RrcState::Connected || anchor.cell != source {
            return Ok(());
        }
        let target_cell = self.cell(target).clone();
        let ue_snapshot = self.ues[&ue].ue.clone();

        // Decide every leg first so a failure leaves the stack untouched.
        let anchor_rat = match rrm::handover_rat(&ue_snapshot, &anchor.rat, &target_cell) {
            Ok(r) => r,
            Err(e) => return self.abort_handover(ue, source, target, e.to_string()),
        };
        let mut plans: Vec<(BearerId, Vec<Option<RatId>>)> = Vec::new();
        for id in ue_snapshot.bearers.iter().copied() {
            let Some(live) = self.bearers.get(&id).and_then(|b| b.live.as_ref()) else { continue };
            let mut per_leg = Vec::new();
            for (t, r) in live.rb.tunnels.iter().zip(&live.rats) {
                if t.cell == source {
                    match rrm::handover_rat(&ue_snapshot, r, &target_cell) {
                        Ok(nr) => per_leg.push(Some(nr)),
                        Err(e) => return self.abort_handover(ue, source, target, e.to_string()),
                    }
                } else {
                    per_leg.push(None);
                }
            }
            plans.push((id, per_leg));
        }

        // Drop HARQ state toward the source cell.
        let stale: Vec<HarqKey> = self.harq.keys().filter(|k| k.0 == ue && k.1 == source).copied().collect();
        for k in stale {
            self.harq.remove(&k);
            if let Some(s) = self.retx_pending.get_mut(&(k.1, k.2)) {
                s.remove(&ue);
            }
        }

        for (id, per_leg) in plans {
            self.move_bearer(id, ue, target, per_leg)?;
        }

        let ctx = self.rrc.get_mut(&anchor).and_then(|e| e.take_context(ue));
        let new_anchor = SchedulerId::new(target, anchor_rat);
        if let (Some(ctx), Some(e)) = (ctx, self.rrc.get_mut(&new_anchor)) {
            e.adopt(ue, ctx);
        }
        let source_full = self.rrc[&anchor].mode == RrcMode::Full;
        self.ues.get_mut(&ue).expect("ue").anchor = Some(new_anchor);
        self.update_serving(ue);
        self.totals.handovers += 1;
        if source_full {
            self.trace.rrc(now, "handover", ue.0, source.0, &target.to_string());
        }
        self.trace.rrm(now, "handover", &ue.to_string(), &format!("{source}->{target}"));
        let bearers: Vec<BearerId> = self.ues[&ue].ue.bearers.iter().copied().collect();
        self.check_state(ue, None)?;
        for id in bearers {
            self.check_state(ue, Some(id))?;
        }
        Ok(())
    }

    fn abort_handover(&mut self, ue: UeId, source: CellId, target: CellId, why: String) -> Step {
        self.totals.handover_aborts += 1;
        self.trace.rrm(self.now, "handover_abort", &ue.to_string(), &format!("{source}->{target}: {why}"));
        Ok(())
    }

    /// Re-home one bearer's source legs onto the target cell: new channels
    /// first, then every unconfirmed PDU is re-sent on the new tunnel set,
    /// then the old channels go.
    fn move_bearer(&mut self, id: BearerId, ue: UeId, target: CellId, per_leg: Vec<Option<RatId>>) -> Step {
        let now = self.now;
        let qos = self.bearers[&id].qos;
        let (old_tunnels, old_rats, mut mode) = {
            let live = self.bearers[&id].live.as_ref().expect("live");
            (live.rb.tunnels.clone(), live.rats.clone(), live.rb.dispatch_mode)
        };
        let has_target = old_tunnels.iter().any(|t| t.cell == target);
        let mut tunnels = Vec::new();
        let mut rats = Vec::new();
        let mut removed = Vec::new();
        let mut target_added = has_target;
        for ((t, r), nr) in old_tunnels.iter().zip(&old_rats).zip(per_leg) {
            match nr {
                None => {
                    tunnels.push(*t);
                    rats.push(r.clone());
                }
                Some(nr) => {
                    removed.push(t.channel);
                    if !target_added {
                        let ch = ChannelId(self.next_channel);
                        self.next_channel += 1;
                        self.open_channel(ch, id, ue, &qos, target, &nr)?;
                        tunnels.push(Tunnel { cell: target, channel: ch });
                        rats.push(nr);
                        target_added = true;
                    }
                }
            }
        }
        if mode != DispatchMode::Single && tunnels.len() < 2 {
            mode = DispatchMode::Single;
        }
        let cells: BTreeSet<CellId> = tunnels.iter().map(|t| t.cell).collect();
        let mut group = None;
        if cells.len() > 1 {
            match self.groups.find_or_form(&cells, purpose_for(mode)) {
                Ok(g) => group = Some(g),
                Err(e) => {
                    self.trace.rrm(now, "group_conflict", &id.to_string(), &e.to_string());
                    tunnels.truncate(1);
                    rats.truncate(1);
                    mode = DispatchMode::Single;
                }
            }
        }
        for (t, _) in old_tunnels.iter().zip(&old_rats) {
            if !tunnels.contains(t) && !removed.contains(&t.channel) {
                removed.push(t.channel);
            }
        }
        let delays: Vec<(Tunnel, u64)> = tunnels.iter().map(|&t| (t, self.backhaul_us(t.cell))).collect();
        {
            let b = self.bearers.get_mut(&id).expect("bearer");
            let live = b.live.as_mut().expect("live");
            let held = live.disp.clear_held();
            let mut resend: BTreeMap<u64, LayerPdu> = BTreeMap::new();
            for pdu in live.tx.handover_flush().into_iter().chain(held) {
                if let Some(c) = pdu.pdcp_sn.and_then(|sn| live.tx.tx_count_for(sn)) {
                    resend.entry(c).or_insert(pdu);
                }
            }
            live.rb.tunnels = tunnels;
            live.rats = rats;
            live.rb.dispatch_mode = mode;
            live.rb.group = group;
            live.disp.reconfigure(mode, &delays, now);
            let mut overflowed = Vec::new();
            for (count, pdu) in resend {
                if let Some(r) = b.records.get_mut(&count) {
                    r.copies = 0;
                    r.failed.clear();
                } else {
                    live.tx.discard_count(count);
                    continue;
                }
                if live.disp.offer(pdu).is_err() {
                    overflowed.push(count);
                }
            }
            for c in overflowed {
                if b.records.remove(&c).is_some() {
                    b.fates.overflowed += 1;
                    b.window.resolved += 1;
                    b.window.missed += 1;
                    live.tx.discard_count(c);
                }
            }
        }
        for ch in removed {
            self.close_channel(ch);
        }
        self.drain_bearer(id)
    }

    // ---- report ----

    fn report(&self) -> MetricsReport {
        let duration_s = (self.duration_ms as f64 / 1000.0).max(1e-9);
        let mut totals = self.totals.clone();
        totals.malformed_tbs = self.mac.malformed_tbs;
        totals.transparent_bytes_queued = self
            .channels
            .values()
            .filter(|c| c.rlc.mode == RlcMode::Transparent)
            .map(|c| c.rlc.buffer_status(0))
            .sum();
        let mut bearers = Vec::new();
        let mut per_ue_lat: BTreeMap<UeId, Vec<u64>> = BTreeMap::new();
        for b in self.bearers.values() {
            let mut fates = b.fates;
            fates.in_flight = (b.records.len() + b.pending.len()) as u64;
            totals.fates.add(&fates);
            let mut lat = b.latencies.clone();
            let latency = Latency::from_us(&mut lat);
            per_ue_lat.entry(b.ue).or_default().extend_from_slice(&b.latencies);
            let (mode, tunnels, dup, gaps, peak) = match &b.live {
                Some(l) => (
                    l.rb.dispatch_mode,
                    l.rb
                        .tunnels
                        .iter()
                        .zip(&l.rats)
                        .map(|(t, r)| format!("{}/{r}/{}", t.cell, t.channel))
                        .collect(),
                    l.rx.counters.duplicates_discarded,
                    l.rx.counters.gaps_skipped,
                    l.rx.counters.reorder_peak_depth,
                ),
                None => (DispatchMode::Single, Vec::new(), 0, 0, 0),
            };
            totals.in_order_violations += b.in_order_violations;
            totals.duplicates_discarded += dup;
            let resolved = fates.resolved();
            let missed = b.late + fates.dropped + fates.skipped + fates.overflowed;
            let since = self.end.saturating_since(b.reconfigured_at) as f64 / 1e6;
            bearers.push(BearerMetrics {
                bearer: b.id,
                ue: b.ue,
                service: b.qos.service_type,
                dispatch_mode: mode,
                tunnels,
                fates,
                delivered_bytes: b.delivered_bytes,
                throughput_bps: b.delivered_bytes as f64 * 8.0 / duration_s,
                throughput_since_reconfig_bps: if since > 0.0 {
                    b.bytes_since_reconfig as f64 * 8.0 / since
                } else {
                    0.0
                },
                latency,
                delivery_ratio: ratio(fates.delivered, resolved, 1.0),
                deadline_miss_ratio: ratio(missed, resolved, 0.0),
                in_order_violations: b.in_order_violations,
                duplicates_discarded: dup,
                gaps_skipped: gaps,
                reorder_peak_depth: peak,
                best_effort: b.best_effort,
                escalations: b.escalations,
                qos_flags: b.qos_flags,
                empty_queue_ttis: b.empty_queue_ttis,
            });
        }
        totals.conservation_ok = totals.fates.balanced();
        totals.delivery_ratio = ratio(totals.fates.delivered, totals.fates.resolved(), 1.0);
        totals.throughput_bps = bearers.iter().fold(0.0, |a, b| a + b.throughput_bps);

        let mut ues = Vec::new();
        for u in self.ues.values() {
            let mine: Vec<&BearerMetrics> = bearers.iter().filter(|b| b.ue == u.ue.id).collect();
            let mut lat = per_ue_lat.remove(&u.ue.id).unwrap_or_default();
            let delivered: u64 = mine.iter().map(|b| b.fates.delivered).sum();
            let resolved: u64 = mine.iter().map(|b| b.fates.resolved()).sum();
            let missed: u64 = mine
                .iter()
                .map(|b| (b.deadline_miss_ratio * b.fates.resolved() as f64).round() as u64)
                .sum();
            ues.push(UeMetrics {
                ue: u.ue.id,
                rrc_state: u.ue.rrc_state,
                serving_cells: u.ue.serving_cells.clone(),
                bearers: mine.iter().map(|b| b.bearer).collect(),
                throughput_bps: mine.iter().fold(0.0, |a, b| a + b.throughput_bps),
                latency: Latency::from_us(&mut lat),
                delivery_ratio: ratio(delivered, resolved, 1.0),
                deadline_miss_ratio: ratio(missed, resolved, 0.0),
                in_order_violations: mine.iter().map(|b| b.in_order_violations).sum(),
                duplicates_discarded: mine.iter().map(|b| b.duplicates_discarded).sum(),
            });
        }

        let mut cells = Vec::new();
        for cell in &self.cells {
            let mut carriers = Vec::new();
            let (mut used, mut avail) = (0.0, 0.0);
            for k in &cell.carriers {
                let Some(s) = self.carrier_stats.get(&(cell.id, k.id)) else { continue };
                let rat = self.rat(&k.rat);
                let capacity = phy::resource_units(rat, k) as f64 * s.attempts as f64;
                used += s.ru_used;
                avail += capacity;
                carriers.push(CarrierMetrics {
                    carrier: k.id,
                    rat: k.rat.clone(),
                    access_attempts: s.attempts,
                    grants: s.grants,
                    grant_rate: ratio(s.grants, s.attempts, 0.0),
                    utilization: if capacity > 0.0 { (s.ru_used / capacity).min(1.0) } else { 0.0 },
                    bits_sent: s.bits_sent,
                    transport_blocks: s.tbs,
                    harq_retransmissions: s.harq_retx,
                    harq_drops: s.harq_drops,
                    lost_blocks: s.lost,
                });
            }
            cells.push(CellMetrics {
                cell: cell.id,
                utilization: if avail > 0.0 { (used / avail).min(1.0) } else { 0.0 },
                carriers,
            });
        }

        MetricsReport {
            scenario_hash: self.scenario_hash.clone(),
            seed: self.seed,
            duration_ms: self.duration_ms,
            totals,
            events: self.events,
            violations: self.violations.clone(),
            cells,
            ues,
            bearers,
        }
    }
}

/// Push one SDU through PDCP and into the dispatcher.
fn submit(b: &mut BearerState, created: SimTime, payload: Bytes) {
    let live = b.live.as_mut().expect("live bearer");
    let sdu = Sdu {
        id: b.next_sdu,
        bearer_id: b.id,
        payload: payload.clone(),
        created_at: created,
    };
    b.next_sdu += 1;
    let count = live.tx.tx_next_count();
    let pdu = live.tx.pdcp_tx(&sdu);
    b.records.insert(
        count,
        SduRecord {
            created,
            payload,
            copies: 0,
            failed: Vec::new(),
        },
    );
    if live.disp.offer(pdu).is_err() {
        b.records.remove(&count);
        live.tx.discard_count(count);
        b.fates.overflowed += 1;
        b.window.resolved += 1;
        b.window.missed += 1;
    }
}

fn purpose_for(mode: DispatchMode) -> GroupPurpose {
    match mode {
        DispatchMode::Duplicate => GroupPurpose::Comp,
        _ => GroupPurpose::Aggregation,
    }
}

/// URC packets are due one period after they are generated; everything
/// else uses the bearer's latency budget.
fn deadline_us(qos: &QosProfile, model: &TrafficModel) -> u64 {
    match *model {
        TrafficModel::Urc { period_ms, .. } => SimTime::from_ms(period_ms.min(qos.latency_budget_ms)).as_us(),
        _ => SimTime::from_ms(qos.latency_budget_ms).as_us(),
    }
}
