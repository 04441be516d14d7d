//! Run report: per-bearer, per-UE, per-cell and global figures.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{BearerId, CarrierId, CellId, DispatchMode, RatId, RrcState, ServiceType, UeId};

/// Nearest-rank percentile of sorted samples, in the samples' unit.
pub fn percentile(sorted: &[u64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1] as f64
}

/// `num / den`, or `empty` when nothing was counted.
pub fn ratio(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// SDU fates of one bearer or of the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fates {
    pub offered: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub skipped: u64,
    pub overflowed: u64,
    pub in_flight: u64,
}

impl Fates {
    pub fn resolved(&self) -> u64 {
        self.delivered + self.dropped + self.skipped + self.overflowed
    }

    /// offered = delivered + dropped + skipped + overflowed + in-flight.
    pub fn balanced(&self) -> bool {
        self.offered == self.resolved() + self.in_flight
    }

    pub fn add(&mut self, o: &Fates) {
        self.offered += o.offered;
        self.delivered += o.delivered;
        self.dropped += o.dropped;
        self.skipped += o.skipped;
        self.overflowed += o.overflowed;
        self.in_flight += o.in_flight;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
}

impl Latency {
    /// From latency samples in microseconds; sorts in place.
    pub fn from_us(samples: &mut [u64]) -> Self {
        samples.sort_unstable();
        Latency {
            p50_ms: percentile(samples, 50.0) / 1000.0,
            p95_ms: percentile(samples, 95.0) / 1000.0,
            p99_ms: percentile(samples, 99.0) / 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BearerMetrics {
    pub bearer: BearerId,
    pub ue: UeId,
    pub service: ServiceType,
    pub dispatch_mode: DispatchMode,
    pub tunnels: Vec<String>,
    pub fates: Fates,
    pub delivered_bytes: u64,
    pub throughput_bps: f64,
    /// Goodput since the last reconfiguration (or since setup).
    pub throughput_since_reconfig_bps: f64,
    pub latency: Latency,
    pub delivery_ratio: f64,
    pub deadline_miss_ratio: f64,
    pub in_order_violations: u64,
    pub duplicates_discarded: u64,
    pub gaps_skipped: u64,
    pub reorder_peak_depth: u64,
    pub best_effort: bool,
    pub escalations: u64,
    pub qos_flags: u64,
    /// TTIs at which a full-buffer bearer had nothing queued anywhere.
    pub empty_queue_ttis: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeMetrics {
    pub ue: UeId,
    pub rrc_state: RrcState,
    pub serving_cells: Vec<CellId>,
    pub bearers: Vec<BearerId>,
    pub throughput_bps: f64,
    pub latency: Latency,
    pub delivery_ratio: f64,
    pub deadline_miss_ratio: f64,
    pub in_order_violations: u64,
    pub duplicates_discarded: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarrierMetrics {
    pub carrier: CarrierId,
    pub rat: RatId,
    pub access_attempts: u64,
    pub grants: u64,
    pub grant_rate: f64,
    pub utilization: f64,
    pub bits_sent: u64,
    pub transport_blocks: u64,
    pub harq_retransmissions: u64,
    pub harq_drops: u64,
    pub lost_blocks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub cell: CellId,
    pub utilization: f64,
    pub carriers: Vec<CarrierMetrics>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub tti_tick: u64,
    pub traffic_arrival: u64,
    pub control: u64,
    pub timer: u64,
    pub confirmation: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub fates: Fates,
    pub conservation_ok: bool,
    pub delivery_ratio: f64,
    pub throughput_bps: f64,
    pub in_order_violations: u64,
    pub payload_mismatches: u64,
    pub duplicates_discarded: u64,
    pub malformed_tbs: u64,
    pub released_discards: u64,
    /// Transport blocks that started HARQ, and how they ended.
    pub harq_blocks: u64,
    pub harq_retransmissions: u64,
    pub harq_drops: u64,
    pub handovers: u64,
    pub handover_aborts: u64,
    pub rrm_commands: u64,
    pub qos_flags: u64,
    pub paging_failures: u64,
    /// Bytes into and out of transparent-mode RLC entities, plus those lost
    /// over the air and those still queued when the run ended.
    pub transparent_bytes_in: u64,
    pub transparent_bytes_out: u64,
    pub transparent_bytes_lost: u64,
    pub transparent_bytes_queued: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario_hash: String,
    pub seed: u64,
    pub duration_ms: u64,
    pub totals: Totals,
    pub events: EventCounts,
    pub violations: Vec<String>,
    pub cells: Vec<CellMetrics>,
    pub ues: Vec<UeMetrics>,
    pub bearers: Vec<BearerMetrics>,
}

pub const CSV_HEADER: &str = "bearer,ue,service,dispatch_mode,offered,delivered,dropped,skipped,overflowed,in_flight,\
throughput_bps,latency_p50_ms,latency_p95_ms,latency_p99_ms,delivery_ratio,deadline_miss_ratio,\
in_order_violations,duplicates_discarded";

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per bearer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for b in &self.bearers {
            let f = &b.fates;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                b.bearer.0,
                b.ue.0,
                b.service,
                b.dispatch_mode,
                f.offered,
                f.delivered,
                f.dropped,
                f.skipped,
                f.overflowed,
                f.in_flight,
                b.throughput_bps,
                b.latency.p50_ms,
                b.latency.p95_ms,
                b.latency.p99_ms,
                b.delivery_ratio,
                b.deadline_miss_ratio,
                b.in_order_violations,
                b.duplicates_discarded
            );
        }
        out
    }

    pub fn bearer(&self, id: BearerId) -> Option<&BearerMetrics> {
        self.bearers.iter().find(|b| b.bearer == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&v, 95.0), 95.0);
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&[7], 99.0), 7.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn fates_balance() {
        let f = Fates {
            offered: 10,
            delivered: 5,
            dropped: 1,
            skipped: 1,
            overflowed: 1,
            in_flight: 2,
        };
        assert!(f.balanced());
        assert_eq!(f.resolved(), 8);
        assert_eq!(ratio(0, 0, 1.0), 1.0);
    }
}
