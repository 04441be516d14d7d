//! Traffic generation: arrival times and SDU sizes per model.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::domain::TrafficModel;
use crate::domain::SimTime;

/// Arrival process state of one source.
#[derive(Debug, Clone, PartialEq)]
pub enum Arrivals {
    /// Never schedules arrivals; the engine keeps the queue topped up.
    FullBuffer,
    Periodic { period_us: u64 },
    Poisson { rate_per_s: f64 },
}

impl Arrivals {
    pub fn for_model(model: &TrafficModel) -> Self {
        match *model {
            TrafficModel::XmbbFullBuffer { .. } => Arrivals::FullBuffer,
            TrafficModel::XmbbFiles { files_per_s, .. } => Arrivals::Poisson { rate_per_s: files_per_s },
            TrafficModel::Mmtc { packets_per_s, .. } => Arrivals::Poisson { rate_per_s: packets_per_s },
            TrafficModel::Urc { period_ms, .. } => Arrivals::Periodic {
                period_us: SimTime::from_ms(period_ms).as_us().max(1),
            },
        }
    }

    /// First arrival at or after `start`. Periodic sources draw their phase
    /// once, uniformly over one period.
    pub fn first<R: Rng + ?Sized>(&self, start: SimTime, rng: &mut R) -> Option<SimTime> {
        match *self {
            Arrivals::FullBuffer => None,
            Arrivals::Periodic { period_us } => Some(start.plus_us(rng.random_range(0..period_us))),
            Arrivals::Poisson { rate_per_s } => Some(start.plus_us(exp_gap_us(rate_per_s, rng))),
        }
    }

    pub fn next<R: Rng + ?Sized>(&self, prev: SimTime, rng: &mut R) -> Option<SimTime> {
        match *self {
            Arrivals::FullBuffer => None,
            Arrivals::Periodic { period_us } => Some(prev.plus_us(period_us)),
            Arrivals::Poisson { rate_per_s } => Some(prev.plus_us(exp_gap_us(rate_per_s, rng))),
        }
    }
}

fn exp_gap_us<R: Rng + ?Sized>(rate_per_s: f64, rng: &mut R) -> u64 {
    let exp = Exp::new(rate_per_s).expect("validated positive rate");
    (exp.sample(rng) * 1e6).round() as u64
}

/// SDU sizes produced by one arrival.
pub fn arrival_sdus<R: Rng + ?Sized>(model: &TrafficModel, rng: &mut R) -> Vec<u32> {
    match *model {
        TrafficModel::XmbbFullBuffer { sdu_bytes } => vec![sdu_bytes],
        TrafficModel::XmbbFiles {
            mean_file_bytes,
            sdu_bytes,
            ..
        } => {
            let exp = Exp::new(1.0 / mean_file_bytes).expect("validated positive size");
            let size: f64 = exp.sample(rng);
            let mut left = (size.round() as u64).max(1);
            let mut out = Vec::new();
            while left > 0 {
                let n = left.min(u64::from(sdu_bytes));
                out.push(n as u32);
                left -= n;
            }
            out
        }
        TrafficModel::Mmtc { packet_bytes, .. } => vec![packet_bytes],
        TrafficModel::Urc { packet_bytes, .. } => vec![packet_bytes],
    }
}

/// All arrival times of one source in `[0, horizon)`.
pub fn generate_traffic<R: Rng + ?Sized>(model: &TrafficModel, rng: &mut R, horizon: SimTime) -> Vec<SimTime> {
    let arrivals = Arrivals::for_model(model);
    let mut out = Vec::new();
    let mut t = arrivals.first(SimTime::ZERO, rng);
    while let Some(at) = t {
        if at >= horizon {
            break;
        }
        out.push(at);
        t = arrivals.next(at, rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::rng::{substream, Subsystem};
    use proptest::prelude::*;

    #[test]
    fn urc_ten_ms_gives_exactly_one_hundred_per_second() {
        let model = TrafficModel::Urc {
            period_ms: 10.0,
            packet_bytes: 200,
        };
        for seed in 0..20 {
            let mut rng = substream(seed, Subsystem::Traffic);
            assert_eq!(generate_traffic(&model, &mut rng, SimTime::from_ms(1000.0)).len(), 100);
        }
    }

    #[test]
    fn mmtc_population_count_matches_poisson_mean() {
        let model = TrafficModel::Mmtc {
            packets_per_s: 1.0 / 60.0,
            packet_bytes: 100,
        };
        let mut rng = substream(11, Subsystem::Traffic);
        let horizon = SimTime::from_ms(60_000.0);
        let total: usize = (0..10_000)
            .map(|_| generate_traffic(&model, &mut rng, horizon).len())
            .sum();
        // Mean 10^4, sd 100; 3 % is three standard deviations.
        assert!((total as f64 - 1e4).abs() <= 300.0, "got {total}");
    }

    #[test]
    fn full_buffer_schedules_nothing() {
        let mut rng = substream(0, Subsystem::Traffic);
        let model = TrafficModel::XmbbFullBuffer { sdu_bytes: 1500 };
        assert!(generate_traffic(&model, &mut rng, SimTime::from_ms(1000.0)).is_empty());
    }

    #[test]
    fn files_split_into_sdus() {
        let model = TrafficModel::XmbbFiles {
            files_per_s: 1.0,
            mean_file_bytes: 10_000.0,
            sdu_bytes: 1500,
        };
        let mut rng = substream(2, Subsystem::Traffic);
        let mut total = 0u64;
        let n = 2000;
        for _ in 0..n {
            let sdus = arrival_sdus(&model, &mut rng);
            assert!(sdus.iter().all(|&s| (1..=1500).contains(&s)));
            assert!(sdus[..sdus.len() - 1].iter().all(|&s| s == 1500));
            total += sdus.iter().map(|&s| u64::from(s)).sum::<u64>();
        }
        let mean = total as f64 / f64::from(n);
        // Exponential sd equals its mean; 4 standard errors.
        assert!((mean - 10_000.0).abs() < 4.0 * 10_000.0 / f64::from(n).sqrt(), "mean {mean}");
    }

    proptest! {
        #[test]
        fn arrivals_are_sorted_and_inside_horizon(seed in any::<u64>(), period in 0.5f64..50.0) {
            let model = TrafficModel::Urc { period_ms: period, packet_bytes: 10 };
            let mut rng = substream(seed, Subsystem::Traffic);
            let h = SimTime::from_ms(500.0);
            let v = generate_traffic(&model, &mut rng, h);
            prop_assert!(v.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(v.iter().all(|&t| t < h));
        }
    }
}
