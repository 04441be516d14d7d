//! Acceptance criteria, one PASS/FAIL line each. Tolerances are pinned
//! here and nowhere else.

use std::io::{self, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use airstack::domain::{DispatchMode, ScenarioConfig, ServiceType, TrafficModel};
use airstack::engine::{run, MetricsReport, RunOptions, Trace, TraceKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHIPPED: [&str; 4] = ["xmbb-aggregation", "urc-comp", "mmtc-scale", "wifi-legacy"];

const TM_PAYLOADS: u64 = 10_000;
const ORDER_RUNS: usize = 100;
const MAX_PATH_DELAY_MS: f64 = 20.0;
const CA_TOLERANCE: f64 = 0.02;
const CA_WALL: Duration = Duration::from_secs(10);
const COMP_PACKETS: u64 = 100_000;
const COMP_LEG_LOSS: f64 = 0.1;
const COMP_DELIVERY_TOL: f64 = 0.005;
const HARQ_P: f64 = 0.5;
const HARQ_MAX_TX: i32 = 4;
const HARQ_TOL: f64 = 0.005;
const HARQ_MIN_BLOCKS: u64 = 100_000;
const LBT_BUSY: f64 = 0.3;
const LBT_TTIS: u64 = 100_000;
const LBT_TOL: f64 = 0.01;
const MMTC_UES: usize = 10_000;
const MMTC_WALL: Duration = Duration::from_secs(120);
const MMTC_MIN_DELIVERY: f64 = 0.99;
const QOS_TARGET_BPS: f64 = 8e6;
const QOS_TOL: f64 = 0.05;

type Verdict = Result<String, String>;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario_path(name: &str) -> PathBuf {
    root().join("scenarios").join(format!("{name}.json"))
}

fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(scenario_path(name)).expect("scenario loads")
}

fn simulate(cfg: &ScenarioConfig, seed: u64, duration_ms: Option<u64>) -> Result<MetricsReport, String> {
    let opts = RunOptions {
        seed: Some(seed),
        duration_ms,
        keep_going: false,
    };
    run(cfg, &opts, Trace::disabled()).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
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

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_airstack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn transparent_identity() -> Verdict {
    let cfg = scenario("wifi-legacy");
    let r = simulate(&cfg, 0, Some(15_000))?;
    let t = &r.totals;
    ensure(t.fates.delivered >= TM_PAYLOADS, || format!("only {} payloads delivered", t.fates.delivered))?;
    ensure(t.payload_mismatches == 0, || format!("{} payloads altered", t.payload_mismatches))?;
    let accounted = t.transparent_bytes_out + t.transparent_bytes_lost + t.transparent_bytes_queued;
    ensure(t.transparent_bytes_in == accounted, || {
        format!("TM bytes in {} != out+lost+queued {accounted}", t.transparent_bytes_in)
    })?;
    Ok(format!(
        "{} payloads byte-identical, TM bytes in {} = out {} + lost {} + queued {}",
        t.fates.delivered, t.transparent_bytes_in, t.transparent_bytes_out, t.transparent_bytes_lost, t.transparent_bytes_queued
    ))
}

fn in_sequence_delivery() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut runs = 0;
    let mut delivered = 0;
    for name in ["urc-comp", "xmbb-aggregation"] {
        let base = scenario(name);
        for _ in 0..ORDER_RUNS {
            let mut cfg = base.clone();
            for cell in &mut cfg.cells {
                cell.backhaul_delay_ms = rng.random_range(0.0..MAX_PATH_DELAY_MS);
            }
            let seed: u64 = rng.random();
            let r = simulate(&cfg, seed, None)?;
            ensure(r.totals.in_order_violations == 0, || {
                format!("{name} seed {seed}: {} in-order violations", r.totals.in_order_violations)
            })?;
            ensure(r.violations.is_empty(), || format!("{name} seed {seed}: {:?}", r.violations))?;
            runs += 1;
            delivered += r.totals.fates.delivered;
        }
    }
    Ok(format!("{runs} runs, {delivered} SDUs, 0 in-order violations"))
}

fn aggregation_goodput() -> Verdict {
    let cfg = scenario("fixtures/split-ideal");
    ensure(cfg.bearers[0].dispatch_mode == DispatchMode::Split, || "fixture is not SPLIT".into())?;
    let started = Instant::now();
    let r = simulate(&cfg, 0, None)?;
    let wall = started.elapsed();
    // Per carrier with B bytes per TTI and P-byte SDUs: each block loses 7
    // bytes to its first MAC+RLC header, each SDU costs 6 bytes of PDCP
    // overhead plus one more 7-byte segment boundary.
    let p = 1500.0;
    let payload_fraction = |bps: f64| {
        let b = bps / 8.0 / 1000.0;
        p * (b - 7.0) / (b * (p + 13.0))
    };
    let oracle = 5e6 * payload_fraction(5e6) + 3e6 * payload_fraction(3e6);
    let header_fraction = 1.0 - oracle / 8e6;
    let got = r.bearers[0].throughput_bps;
    let err = (got - oracle).abs() / oracle;
    ensure(err <= CA_TOLERANCE, || format!("goodput {got:.0} vs oracle {oracle:.0} ({:.2}%)", err * 100.0))?;
    ensure(wall < CA_WALL, || format!("took {wall:?}"))?;
    Ok(format!(
        "goodput {:.4} Mb/s vs 8 x (1 - {header_fraction:.4}) = {:.4} Mb/s, error {:.3}%, wall {wall:.2?}",
        got / 1e6,
        oracle / 1e6,
        err * 100.0
    ))
}

fn comp_reliability() -> Verdict {
    let mut cfg = scenario("urc-comp");
    ensure(cfg.rats.iter().all(|r| !r.has_harq), || "HARQ is on".into())?;
    ensure(cfg.rats.iter().all(|r| r.bler.at_boundary == COMP_LEG_LOSS), || "leg loss is not 0.1".into())?;
    let period_ms = 1.0;
    cfg.traffic[0].model = TrafficModel::Urc {
        period_ms,
        packet_bytes: 200,
    };
    let duration_ms = (COMP_PACKETS as f64 * period_ms) as u64;
    let r = simulate(&cfg, 0, Some(duration_ms))?;
    let b = &r.bearers[0];
    ensure(b.dispatch_mode == DispatchMode::Duplicate, || format!("planned {}", b.dispatch_mode))?;
    let n = b.fates.offered as f64;
    ensure(b.fates.offered >= COMP_PACKETS, || format!("only {} packets", b.fates.offered))?;
    let q = 1.0 - COMP_LEG_LOSS;
    let delivery_oracle = 1.0 - COMP_LEG_LOSS * COMP_LEG_LOSS;
    let dup_mean = n * q * q;
    let dup_sigma = (n * q * q * (1.0 - q * q)).sqrt();
    ensure((b.delivery_ratio - delivery_oracle).abs() <= COMP_DELIVERY_TOL, || {
        format!("delivery {:.5} vs {delivery_oracle}", b.delivery_ratio)
    })?;
    let dups = b.duplicates_discarded as f64;
    ensure((dups - dup_mean).abs() <= 3.0 * dup_sigma, || {
        format!("duplicates {dups} vs {dup_mean:.0} +/- {:.0}", 3.0 * dup_sigma)
    })?;
    Ok(format!(
        "{} packets: delivery {:.5} (oracle {delivery_oracle}), duplicates {dups} (oracle {dup_mean:.0} +/- {:.0})",
        b.fates.offered,
        b.delivery_ratio,
        3.0 * dup_sigma
    ))
}

fn harq_residual_loss() -> Verdict {
    let cfg = scenario("fixtures/harq-half");
    let rat = &cfg.rats[0];
    ensure(rat.has_harq && i32::from(rat.harq_max_tx) == HARQ_MAX_TX && rat.bler.at_boundary == HARQ_P, || {
        "fixture does not pin p=0.5, max_tx=4".into()
    })?;
    let r = simulate(&cfg, 0, None)?;
    let blocks = r.totals.harq_blocks;
    ensure(blocks >= HARQ_MIN_BLOCKS, || format!("only {blocks} blocks"))?;
    let rate = r.totals.harq_drops as f64 / blocks as f64;
    let oracle = HARQ_P.powi(HARQ_MAX_TX);
    ensure((rate - oracle).abs() <= HARQ_TOL, || format!("drop rate {rate:.5} vs {oracle}"))?;
    Ok(format!("{blocks} blocks, drop rate {rate:.5} (oracle {oracle})"))
}

fn exclusivity_and_priority() -> Verdict {
    for (fixture, channel) in [("shared-channel", "channel 7"), ("shared-scheduler", "channel 9")] {
        let path = scenario_path(&format!("fixtures/{fixture}"));
        let out = cli(&["validate", "--config", path.to_str().unwrap()]);
        let stderr = String::from_utf8_lossy(&out.stderr);
        ensure(out.status.code() == Some(2), || format!("{fixture}: exit {:?}", out.status.code()))?;
        ensure(stderr.contains(channel), || format!("{fixture}: stderr does not name {channel}: {stderr}"))?;
    }
    let cfg = scenario("fixtures/urc-xmbb-mix");
    let r = simulate(&cfg, 0, None)?;
    let urc = r
        .bearers
        .iter()
        .find(|b| b.service == ServiceType::Urc)
        .ok_or("no URC bearer")?;
    ensure(urc.fates.delivered > 0, || "URC delivered nothing".into())?;
    ensure(urc.deadline_miss_ratio == 0.0, || format!("URC deadline_miss {}", urc.deadline_miss_ratio))?;
    let starved = r
        .bearers
        .iter()
        .filter(|b| b.service == ServiceType::Xmbb)
        .all(|b| b.throughput_bps < 20e6);
    ensure(starved, || "xMBB was not congested".into())?;
    Ok(format!(
        "validator exits 2 on both shared-channel fixtures; URC {} packets, deadline_miss 0, p99 {} ms under xMBB congestion",
        urc.fates.delivered, urc.latency.p99_ms
    ))
}

fn lossless_handover() -> Verdict {
    let cfg = scenario("fixtures/handover");
    ensure(cfg.cells.iter().all(|c| c.carriers.iter().all(|k| k.ideal)), || "links are not ideal".into())?;
    let r = simulate(&cfg, 0, None)?;
    let t = &r.totals;
    ensure(t.handovers == 1, || format!("{} handovers", t.handovers))?;
    let f = t.fates;
    ensure(f.dropped + f.skipped + f.overflowed == 0, || format!("lost SDUs: {f:?}"))?;
    ensure(t.in_order_violations == 0, || format!("{} in-order violations", t.in_order_violations))?;
    ensure(t.payload_mismatches == 0 && r.violations.is_empty(), || format!("{:?}", r.violations))?;
    ensure(f.delivered + f.in_flight == f.offered, || format!("{f:?}"))?;
    Ok(format!(
        "1 handover, {} SDUs delivered once each, {} still in flight at end, 0 lost",
        f.delivered, f.in_flight
    ))
}

fn unlicensed_access() -> Verdict {
    let cfg = scenario("fixtures/lbt-busy");
    ensure(cfg.cells[0].carriers[0].busy_prob == LBT_BUSY, || "busy_prob is not 0.3".into())?;
    let r = simulate(&cfg, 0, None)?;
    let k = &r.cells[0].carriers[0];
    ensure(k.access_attempts == LBT_TTIS, || format!("{} attempts", k.access_attempts))?;
    let oracle = 1.0 - LBT_BUSY;
    ensure((k.grant_rate - oracle).abs() <= LBT_TOL, || format!("grant rate {}", k.grant_rate))?;
    Ok(format!("{} TTIs, grant rate {:.5} (oracle {oracle})", k.access_attempts, k.grant_rate))
}

fn mmtc_scale() -> Verdict {
    let cfg = scenario("mmtc-scale");
    let started = Instant::now();
    let r = simulate(&cfg, 0, None)?;
    let wall = started.elapsed();
    ensure(r.ues.len() == MMTC_UES, || format!("{} UEs", r.ues.len()))?;
    ensure(r.duration_ms == 60_000, || format!("{} ms", r.duration_ms))?;
    ensure(wall < MMTC_WALL, || format!("took {wall:?}"))?;
    ensure(r.totals.delivery_ratio >= MMTC_MIN_DELIVERY, || format!("delivery {}", r.totals.delivery_ratio))?;
    Ok(format!(
        "{} UEs, {} packets, delivery {:.5}, wall {wall:.2?}",
        r.ues.len(),
        r.totals.fates.offered,
        r.totals.delivery_ratio
    ))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for name in SHIPPED {
        let config = scenario_path(name);
        for k in 0..3u64 {
            let mut outputs = Vec::new();
            for attempt in 0..2 {
                let out = dir.path().join(format!("{name}-{k}-{attempt}.json"));
                let status = cli(&[
                    "run",
                    "--config",
                    config.to_str().unwrap(),
                    "--seed",
                    &k.to_string(),
                    "--out",
                    out.to_str().unwrap(),
                ]);
                ensure(status.status.success(), || {
                    format!("{name} seed {k}: {}", String::from_utf8_lossy(&status.stderr))
                })?;
                outputs.push(read(&out)?);
            }
            ensure(outputs[0] == outputs[1], || format!("{name} seed {k}: reports differ"))?;
            ensure(!outputs[0].is_empty(), || format!("{name} seed {k}: empty report"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} scenario/seed pairs byte-identical across repeated runs"))
}

fn read(p: &Path) -> Result<Vec<u8>, String> {
    std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()))
}

fn qos_escalation() -> Verdict {
    let cfg = scenario("fixtures/qos-escalation");
    let b = &cfg.bearers[0];
    ensure(b.dispatch_mode == DispatchMode::Single && b.qos.target_rate_bps == QOS_TARGET_BPS, || {
        "fixture is not a SINGLE bearer with an 8 Mb/s target".into()
    })?;
    let sink = Sink::default();
    let r = run(&cfg, &RunOptions::default(), Trace::new(TraceKind::Rrm, Some(Box::new(sink.clone()))))
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8(sink.0.lock().unwrap().clone()).map_err(|e| e.to_string())?;
    let escalations: Vec<&str> = text.lines().filter(|l| l.split(',').nth(1) == Some("escalate")).collect();
    ensure(escalations.len() == 1, || format!("{} escalations: {escalations:?}", escalations.len()))?;
    ensure(escalations[0].contains("SINGLE->SPLIT"), || escalations[0].to_string())?;
    let after = r.bearers[0].throughput_since_reconfig_bps;
    let err = (after - QOS_TARGET_BPS).abs() / QOS_TARGET_BPS;
    ensure(err <= QOS_TOL, || format!("post-escalation {after:.0} b/s, {:.2}% off target", err * 100.0))?;
    let at = escalations[0].split(',').next().unwrap_or("?");
    Ok(format!(
        "one SINGLE->SPLIT at {at} ms, then {:.4} Mb/s ({:.2}% from target)",
        after / 1e6,
        err * 100.0
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("transparent-mode identity", transparent_identity),
        ("in-sequence delivery", in_sequence_delivery),
        ("carrier aggregation goodput", aggregation_goodput),
        ("CoMP reliability", comp_reliability),
        ("HARQ residual loss", harq_residual_loss),
        ("scheduler exclusivity and priority", exclusivity_and_priority),
        ("lossless handover", lossless_handover),
        ("unlicensed band access", unlicensed_access),
        ("mMTC scale", mmtc_scale),
        ("determinism", determinism),
        ("QoS escalation", qos_escalation),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = started.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("PASS criterion {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {why} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
