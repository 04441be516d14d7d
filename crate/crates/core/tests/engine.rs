use std::io::{self, Write};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use airstack::domain::{DispatchMode, ScenarioConfig, ServiceType};
use airstack::engine::{run, EngineError, MetricsReport, RunOptions, Trace, TraceKind};
use proptest::prelude::*;

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    ScenarioConfig::load(path).unwrap()
}

fn simulate(cfg: &ScenarioConfig, seed: u64, duration_ms: Option<u64>) -> MetricsReport {
    let opts = RunOptions {
        seed: Some(seed),
        duration_ms,
        keep_going: false,
    };
    run(cfg, &opts, Trace::disabled()).unwrap()
}

#[derive(Clone, Default)]
struct Sink(Arc<Mutex<Vec<u8>>>);

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Sink {
    fn text(&self) -> String {
        String::from_utf8(self.0.lock().unwrap().clone()).unwrap()
    }
}

fn traced(cfg: &ScenarioConfig, kind: TraceKind, duration_ms: Option<u64>) -> (MetricsReport, String) {
    let sink = Sink::default();
    let opts = RunOptions {
        duration_ms,
        ..RunOptions::default()
    };
    let report = run(cfg, &opts, Trace::new(kind, Some(Box::new(sink.clone())))).unwrap();
    (report, sink.text())
}

#[test]
fn same_seed_same_report() {
    let cfg = scenario("urc-comp.json");
    let a = simulate(&cfg, 5, Some(2000)).to_json();
    let b = simulate(&cfg, 5, Some(2000)).to_json();
    assert_eq!(a, b);
    let c = simulate(&cfg, 6, Some(2000)).to_json();
    assert_ne!(a, c);
}

#[test]
fn zero_traffic_runs_only_ticks() {
    let r = simulate(&scenario("fixtures/idle.json"), 0, None);
    assert_eq!(r.totals.throughput_bps, 0.0);
    assert_eq!(r.totals.fates.offered, 0);
    assert!(r.ues.iter().all(|u| u.throughput_bps == 0.0));
    assert_eq!(r.events.tti_tick, 2000);
    assert_eq!(r.events.traffic_arrival + r.events.control + r.events.timer + r.events.confirmation, 0);
}

#[test]
fn single_carrier_goodput_matches_header_oracle() {
    // 5 MHz x 1000 RU/MHz x 1 bit/RU: 625 bytes per 1 ms TTI.
    let mut cfg = scenario("fixtures/split-ideal.json");
    cfg.bearers[0].dispatch_mode = DispatchMode::Single;
    cfg.bearers[0].tunnels.truncate(1);
    // Below capacity, so RRM leaves the bearer alone.
    cfg.bearers[0].qos.target_rate_bps = 4e6;
    let r = simulate(&cfg, 0, Some(5000));
    let (p, b) = (1500.0, 625.0);
    // Each TB spends 3 bytes of MAC subheader and 4 of RLC header on its
    // first segment; each SDU adds 6 bytes of PDCP overhead and, on
    // average, one more 7-byte segment boundary.
    let oracle = 5e6 * p * (b - 7.0) / (b * (p + 13.0));
    let got = r.bearers[0].throughput_bps;
    assert!((got - oracle).abs() / oracle < 0.01, "got {got}, oracle {oracle}");
}

#[test]
fn full_buffer_never_runs_dry() {
    let r = simulate(&scenario("xmbb-aggregation.json"), 1, Some(3000));
    for b in &r.bearers {
        assert_eq!(b.empty_queue_ttis, 0, "bearer {}", b.bearer);
    }
}

#[test]
fn shipped_scenarios_conserve_sdus() {
    for name in ["xmbb-aggregation.json", "urc-comp.json", "wifi-legacy.json"] {
        let r = simulate(&scenario(name), 3, Some(3000));
        assert!(r.totals.conservation_ok, "{name}: {:?}", r.totals.fates);
        assert!(r.totals.fates.offered > 0, "{name}");
        assert_eq!(r.totals.payload_mismatches, 0, "{name}");
        assert!(r.violations.is_empty(), "{name}: {:?}", r.violations);
    }
}

#[test]
fn transparent_entities_emit_no_rrc_events() {
    let (r, text) = traced(&scenario("wifi-legacy.json"), TraceKind::Rrc, Some(2000));
    assert!(r.totals.fates.delivered > 0);
    assert_eq!(text, "time,event,ue,cell,detail\n");
}

#[test]
fn full_rrc_traces_paging_and_establishment() {
    let (_, text) = traced(&scenario("urc-comp.json"), TraceKind::Rrc, Some(500));
    let events: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(events[0], "page");
    assert_eq!(events[1], "establish");
    assert!(events.contains(&"sib"));
}

#[test]
fn mac_trace_bits_sum_to_carrier_counters() {
    let (r, text) = traced(&scenario("fixtures/split-ideal.json"), TraceKind::Mac, Some(200));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("tti,cell,carrier,channel,bits"));
    let granted: u64 = lines.map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    let sent: u64 = r.cells.iter().flat_map(|c| &c.carriers).map(|k| k.bits_sent).sum();
    // A block never exceeds its grant; the slack is a few bytes of
    // segmentation waste per block.
    assert!(sent <= granted && granted - sent <= 8 * 7 * 400, "granted {granted}, sent {sent}");
}

#[test]
fn urc_keeps_deadlines_under_xmbb_congestion() {
    let r = simulate(&scenario("fixtures/urc-xmbb-mix.json"), 4, Some(3000));
    let urc = r.bearers.iter().find(|b| b.service == ServiceType::Urc).unwrap();
    assert!(urc.fates.delivered > 250);
    assert_eq!(urc.deadline_miss_ratio, 0.0);
    assert!(urc.latency.p99_ms <= 10.0);
}

#[test]
fn invalid_scenario_is_rejected_before_running() {
    let cfg = scenario("fixtures/shared-channel.json");
    match run(&cfg, &RunOptions::default(), Trace::disabled()) {
        Err(EngineError::Invalid(v)) => assert!(v[0].message.contains("channel 7")),
        other => panic!("expected rejection, got {other:?}"),
    }
}

#[test]
fn handover_moves_the_bearer_without_loss() {
    let r = simulate(&scenario("fixtures/handover.json"), 0, None);
    assert_eq!(r.totals.handovers, 1);
    let f = r.totals.fates;
    assert_eq!(f.dropped + f.skipped + f.overflowed, 0);
    assert_eq!(r.ues[0].serving_cells[0].0, 2);
}

#[test]
fn qos_shortfall_escalates_once() {
    let (r, text) = traced(&scenario("fixtures/qos-escalation.json"), TraceKind::Rrm, None);
    assert_eq!(text.lines().filter(|l| l.contains(",escalate,")).count(), 1);
    assert_eq!(r.bearers[0].dispatch_mode, DispatchMode::Split);
    assert_eq!(r.bearers[0].escalations, 1);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn random_seeds_keep_order_and_conservation(seed in any::<u64>(), d1 in 0.0f64..15.0, d2 in 0.0f64..15.0) {
        let mut cfg = scenario("urc-comp.json");
        cfg.cells[0].backhaul_delay_ms = d1;
        cfg.cells[1].backhaul_delay_ms = d2;
        let r = simulate(&cfg, seed, Some(1500));
        prop_assert!(r.totals.conservation_ok);
        prop_assert_eq!(r.totals.in_order_violations, 0);
        prop_assert!(r.violations.is_empty());
    }
}
