//! Per-bearer multipath dispatch of PDCP PDUs onto tunnels.

use std::collections::VecDeque;

use rand::Rng;

use crate::domain::{DispatchMode, LayerPdu, SimTime, Tunnel};

pub const EWMA_ALPHA: f64 = 0.2;
pub const HELD_QUEUE_LIMIT: usize = 10_000;
/// A tunnel always accepts while it holds less than this.
pub const BACKPRESSURE_FLOOR_BYTES: u64 = 4096;
/// Otherwise it accepts up to this much sim-time worth of its measured rate.
pub const BACKPRESSURE_HORIZON_US: u64 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Confirmation {
    Delivered { delay_ms: f64 },
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEstimate {
    pub tunnel: Tunnel,
    pub ewma_rate_bps: f64,
    pub ewma_delay_ms: f64,
    pub alpha: f64,
    last_sample: SimTime,
    pending_bits: u64,
}

impl PathEstimate {
    pub fn new(tunnel: Tunnel, now: SimTime) -> Self {
        PathEstimate {
            tunnel,
            ewma_rate_bps: 0.0,
            ewma_delay_ms: 0.0,
            alpha: EWMA_ALPHA,
            last_sample: now,
            pending_bits: 0,
        }
    }

    /// Fold one confirmation into the estimate. Deliveries accumulate until
    /// sim-time moves, then yield a rate sample of bits over elapsed time; a
    /// loss is a zero-rate sample.
    pub fn confirm(&mut self, bytes: usize, outcome: Confirmation, now: SimTime) {
        match outcome {
            Confirmation::Delivered { delay_ms } => {
                self.ewma_delay_ms += self.alpha * (delay_ms - self.ewma_delay_ms);
                self.pending_bits += bytes as u64 * 8;
                let elapsed = now.saturating_since(self.last_sample);
                if elapsed > 0 {
                    let sample = self.pending_bits as f64 * 1e6 / elapsed as f64;
                    self.ewma_rate_bps += self.alpha * (sample - self.ewma_rate_bps);
                    self.pending_bits = 0;
                    self.last_sample = now;
                }
            }
            Confirmation::Lost => {
                self.ewma_rate_bps *= 1.0 - self.alpha;
                if now > self.last_sample {
                    self.last_sample = now;
                }
            }
        }
    }
}

/// Rate-proportional weights; uniform when every rate is zero.
pub fn split_weights(estimates: &[PathEstimate]) -> Vec<f64> {
    let total: f64 = estimates.iter().map(|e| e.ewma_rate_bps.max(0.0)).sum();
    if total <= 0.0 {
        let n = estimates.len().max(1) as f64;
        return vec![1.0 / n; estimates.len()];
    }
    estimates
        .iter()
        .map(|e| e.ewma_rate_bps.max(0.0) / total)
        .collect()
}

fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..weights.len());
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Where one PDU goes. SPLIT draws exactly one number per PDU.
pub fn dispatch<R: Rng + ?Sized>(
    mode: DispatchMode,
    tunnels: &[Tunnel],
    weights: &[f64],
    rng: &mut R,
) -> Vec<Tunnel> {
    if tunnels.is_empty() {
        return Vec::new();
    }
    match mode {
        DispatchMode::Single => vec![tunnels[0]],
        DispatchMode::Split => vec![tunnels[sample_index(weights, rng)]],
        DispatchMode::Duplicate => tunnels.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct TunnelCounters {
    pub placements: u64,
    pub delivered_bytes: u64,
    pub lost: u64,
}

#[derive(Debug, Clone)]
struct Leg {
    estimate: PathEstimate,
    outstanding_bytes: u64,
    extra_delay_us: u64,
    counters: TunnelCounters,
}

impl Leg {
    fn limit(&self) -> u64 {
        let horizon = (BACKPRESSURE_HORIZON_US + self.extra_delay_us) as f64 / 1e6;
        BACKPRESSURE_FLOOR_BYTES.max((self.estimate.ewma_rate_bps * horizon / 8.0) as u64)
    }

    fn accepting(&self) -> bool {
        self.outstanding_bytes < self.limit()
    }
}

/// One placement decided by the dispatcher.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub leg: usize,
    pub tunnel: Tunnel,
    pub pdu: LayerPdu,
}

/// The per-bearer dispatcher. PDUs wait in a bounded FIFO while the chosen
/// tunnels are saturated, which keeps skew between legs, and so reordering
/// depth, bounded.
#[derive(Debug, Clone)]
pub struct Dispatcher {
    mode: DispatchMode,
    legs: Vec<Leg>,
    held: VecDeque<LayerPdu>,
    pub overflowed: u64,
}

impl Dispatcher {
    /// `tunnels` come with the one-way delay to reach them.
    pub fn new(mode: DispatchMode, tunnels: &[(Tunnel, u64)], now: SimTime) -> Self {
        let mut d = Dispatcher {
            mode,
            legs: Vec::new(),
            held: VecDeque::new(),
            overflowed: 0,
        };
        d.reconfigure(mode, tunnels, now);
        d
    }

    /// Change mode and tunnel set, keeping estimates of tunnels that stay.
    pub fn reconfigure(&mut self, mode: DispatchMode, tunnels: &[(Tunnel, u64)], now: SimTime) {
        let old = std::mem::take(&mut self.legs);
        self.mode = mode;
        for &(t, delay) in tunnels {
            let leg = old
                .iter()
                .find(|l| l.estimate.tunnel == t)
                .cloned()
                .unwrap_or(Leg {
                    estimate: PathEstimate::new(t, now),
                    outstanding_bytes: 0,
                    extra_delay_us: delay,
                    counters: TunnelCounters::default(),
                });
            self.legs.push(leg);
        }
    }

    pub fn mode(&self) -> DispatchMode {
        self.mode
    }

    pub fn tunnels(&self) -> Vec<Tunnel> {
        self.legs.iter().map(|l| l.estimate.tunnel).collect()
    }

    pub fn leg_of(&self, tunnel: Tunnel) -> Option<usize> {
        self.legs.iter().position(|l| l.estimate.tunnel == tunnel)
    }

    pub fn estimates(&self) -> Vec<&PathEstimate> {
        self.legs.iter().map(|l| &l.estimate).collect()
    }

    pub fn counters(&self) -> Vec<(Tunnel, TunnelCounters, f64)> {
        self.legs
            .iter()
            .map(|l| (l.estimate.tunnel, l.counters, l.estimate.ewma_rate_bps))
            .collect()
    }

    pub fn held_len(&self) -> usize {
        self.held.len()
    }

    pub fn outstanding_bytes(&self) -> u64 {
        self.legs.iter().map(|l| l.outstanding_bytes).sum()
    }

    /// Whether a new PDU offered now would be placed straight away.
    pub fn ready(&self) -> bool {
        if !self.held.is_empty() || self.legs.is_empty() {
            return false;
        }
        match self.mode {
            DispatchMode::Single => self.legs[0].accepting(),
            DispatchMode::Split => self.legs.iter().any(Leg::accepting),
            DispatchMode::Duplicate => self.legs.iter().all(Leg::accepting),
        }
    }

    /// Queue a PDU. Returns it back if the held queue is full.
    pub fn offer(&mut self, pdu: LayerPdu) -> Result<(), LayerPdu> {
        if self.held.len() >= HELD_QUEUE_LIMIT {
            self.overflowed += 1;
            return Err(pdu);
        }
        self.held.push_back(pdu);
        Ok(())
    }

    /// Place held PDUs in order for as long as the mode's tunnels accept.
    pub fn drain<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<Placement> {
        let mut out = Vec::new();
        while !self.held.is_empty() && !self.legs.is_empty() {
            let open: Vec<bool> = self.legs.iter().map(Leg::accepting).collect();
            let chosen: Vec<usize> = match self.mode {
                DispatchMode::Single if open[0] => vec![0],
                DispatchMode::Split if open.iter().any(|&o| o) => {
                    let est: Vec<PathEstimate> =
                        self.legs.iter().map(|l| l.estimate.clone()).collect();
                    let w: Vec<f64> = split_weights(&est)
                        .into_iter()
                        .zip(&open)
                        .map(|(w, &o)| if o { w } else { 0.0 })
                        .collect();
                    let w = if w.iter().sum::<f64>() > 0.0 {
                        w
                    } else {
                        open.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect()
                    };
                    vec![sample_index(&w, rng)]
                }
                DispatchMode::Duplicate if open.iter().all(|&o| o) => (0..self.legs.len()).collect(),
                _ => break,
            };
            let pdu = self.held.pop_front().expect("non-empty");
            for i in chosen {
                let leg = &mut self.legs[i];
                leg.outstanding_bytes += pdu.len() as u64;
                leg.counters.placements += 1;
                out.push(Placement {
                    leg: i,
                    tunnel: leg.estimate.tunnel,
                    pdu: pdu.clone(),
                });
            }
        }
        out
    }

    /// Bytes placed on `leg` have left for the air (or been discarded).
    pub fn on_sent(&mut self, leg: usize, bytes: usize) {
        if let Some(l) = self.legs.get_mut(leg) {
            l.outstanding_bytes = l.outstanding_bytes.saturating_sub(bytes as u64);
        }
    }

    pub fn confirm(&mut self, tunnel: Tunnel, bytes: usize, outcome: Confirmation, now: SimTime) {
        if let Some(i) = self.leg_of(tunnel) {
            let l = &mut self.legs[i];
            match outcome {
                Confirmation::Delivered { .. } => l.counters.delivered_bytes += bytes as u64,
                Confirmation::Lost => l.counters.lost += 1,
            }
            l.estimate.confirm(bytes, outcome, now);
        }
    }

    /// Drop everything still held. Returns the PDUs.
    pub fn clear_held(&mut self) -> Vec<LayerPdu> {
        self.held.drain(..).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CellId, ChannelId};
    use bytes::Bytes;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: u32) -> Tunnel {
        Tunnel {
            cell: CellId(i),
            channel: ChannelId(i),
        }
    }

    fn est(rate: f64) -> PathEstimate {
        let mut e = PathEstimate::new(t(1), SimTime::ZERO);
        e.ewma_rate_bps = rate;
        e
    }

    fn pdu(sn: u16) -> LayerPdu {
        LayerPdu {
            pdcp_sn: Some(sn),
            ..LayerPdu::raw(Bytes::from(vec![0u8; 100]))
        }
    }

    #[test]
    fn weights() {
        let w = split_weights(&[est(2e6), est(1e6)]);
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12 && (w[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(split_weights(&[est(5.0)]), vec![1.0]);
        assert_eq!(split_weights(&[est(0.0), est(0.0), est(0.0)]), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn dispatch_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ts = [t(1), t(2)];
        assert_eq!(dispatch(DispatchMode::Single, &ts, &[0.5, 0.5], &mut rng), vec![t(1)]);
        assert_eq!(dispatch(DispatchMode::Duplicate, &ts, &[0.5, 0.5], &mut rng), ts.to_vec());
        for _ in 0..1000 {
            assert_eq!(dispatch(DispatchMode::Split, &ts, &[1.0, 0.0], &mut rng), vec![t(1)]);
        }
    }

    #[test]
    fn split_shares_follow_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ts = [t(1), t(2)];
        let n = 100_000;
        let first = (0..n)
            .filter(|_| dispatch(DispatchMode::Split, &ts, &[0.5, 0.5], &mut rng)[0] == t(1))
            .count();
        assert!((first as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn ewma_converges_to_constant_rate() {
        let mut e = PathEstimate::new(t(1), SimTime::ZERO);
        // 125 bytes every millisecond is 1 Mb/s.
        for i in 1..=100 {
            e.confirm(125, Confirmation::Delivered { delay_ms: 1.0 }, SimTime::from_ms(i as f64));
        }
        assert!((e.ewma_rate_bps - 1e6).abs() / 1e6 < 0.01);
    }

    #[test]
    fn losses_decay_monotonically() {
        let mut e = est(1e6);
        let mut prev = e.ewma_rate_bps;
        for i in 1..50 {
            e.confirm(125, Confirmation::Lost, SimTime::from_ms(i as f64));
            assert!(e.ewma_rate_bps < prev);
            prev = e.ewma_rate_bps;
        }
    }

    #[test]
    fn alternating_outcomes_average_half() {
        let mut e = PathEstimate::new(t(1), SimTime::ZERO);
        let mut last_two = [0.0; 2];
        for i in 1..=400 {
            let outcome = if i % 2 == 1 {
                Confirmation::Delivered { delay_ms: 1.0 }
            } else {
                Confirmation::Lost
            };
            e.confirm(125, outcome, SimTime::from_ms(i as f64));
            last_two[i % 2] = e.ewma_rate_bps;
        }
        // Two-cycle fixed point of the EWMA: its mean is half the full rate.
        let mean = (last_two[0] + last_two[1]) / 2.0;
        assert!((mean - 0.5e6).abs() / 0.5e6 < 0.05, "mean {mean}");
    }

    #[test]
    fn duplicate_places_on_every_tunnel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = Dispatcher::new(DispatchMode::Duplicate, &[(t(1), 0), (t(2), 0)], SimTime::ZERO);
        d.offer(pdu(5)).unwrap();
        let p = d.drain(&mut rng);
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].pdu.pdcp_sn, p[1].pdu.pdcp_sn);
        assert_ne!(p[0].tunnel, p[1].tunnel);
    }

    #[test]
    fn backpressure_holds_and_releases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = Dispatcher::new(DispatchMode::Single, &[(t(1), 0)], SimTime::ZERO);
        for sn in 0..100 {
            d.offer(pdu(sn)).unwrap();
        }
        let placed = d.drain(&mut rng);
        assert_eq!(placed.len(), 41);
        assert!(!d.ready());
        d.on_sent(0, 4100);
        assert_eq!(d.drain(&mut rng).len(), 41);
        assert_eq!(d.held_len(), 18);
    }

    #[test]
    fn held_queue_is_bounded() {
        let mut d = Dispatcher::new(DispatchMode::Single, &[(t(1), 0)], SimTime::ZERO);
        for sn in 0..HELD_QUEUE_LIMIT {
            d.offer(pdu(sn as u16)).unwrap();
        }
        assert!(d.offer(pdu(0)).is_err());
        assert_eq!(d.overflowed, 1);
    }

    #[test]
    fn placement_count_per_pdu() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for mode in [DispatchMode::Single, DispatchMode::Split, DispatchMode::Duplicate] {
            let mut d = Dispatcher::new(mode, &[(t(1), 0), (t(2), 0), (t(3), 0)], SimTime::ZERO);
            d.offer(pdu(1)).unwrap();
            let n = d.drain(&mut rng).len();
            assert_eq!(n, if mode == DispatchMode::Duplicate { 3 } else { 1 });
        }
    }
}
