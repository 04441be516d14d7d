use rand::Rng;

use crate::domain::{BandRegime, Carrier, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessOutcome {
    Granted,
    Deferred,
}

/// Per-TTI channel access decision for one carrier.
///
/// Unlicensed carriers always consume exactly one draw, so the stream stays
/// aligned regardless of `busy_prob`.
pub fn band_access<R: Rng + ?Sized>(carrier: &Carrier, now: SimTime, rng: &mut R) -> AccessOutcome {
    match carrier.regime {
        BandRegime::Licensed => AccessOutcome::Granted,
        BandRegime::LightlyLicensed => {
            if carrier.incumbent_active(now) {
                AccessOutcome::Deferred
            } else {
                AccessOutcome::Granted
            }
        }
        BandRegime::Unlicensed => {
            let draw: f64 = rng.random();
            if draw < carrier.busy_prob {
                AccessOutcome::Deferred
            } else {
                AccessOutcome::Granted
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CarrierId, IncumbentWindow, RatId, ServiceRole};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn carrier(regime: BandRegime, busy: f64) -> Carrier {
        Carrier {
            id: CarrierId(1),
            center_freq_mhz: 5200.0,
            bandwidth_mhz: 20.0,
            regime,
            rat: RatId::new("w"),
            service_role: ServiceRole::Any,
            busy_prob: busy,
            ideal: false,
            incumbent: None,
        }
    }

    #[test]
    fn licensed_always_granted() {
        let c = carrier(BandRegime::Licensed, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..1000).all(|t| band_access(&c, SimTime(t), &mut rng) == AccessOutcome::Granted));
    }

    #[test]
    fn fully_busy_unlicensed_never_granted() {
        let c = carrier(BandRegime::Unlicensed, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..1000).all(|t| band_access(&c, SimTime(t), &mut rng) == AccessOutcome::Deferred));
    }

    #[test]
    fn unlicensed_grant_rate() {
        let c = carrier(BandRegime::Unlicensed, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let granted = (0..n)
            .filter(|&t| band_access(&c, SimTime(t), &mut rng) == AccessOutcome::Granted)
            .count();
        let rate = granted as f64 / n as f64;
        assert!((rate - 0.7).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn lightly_licensed_defers_during_incumbent() {
        let mut c = carrier(BandRegime::LightlyLicensed, 0.0);
        c.incumbent = Some(IncumbentWindow {
            period_ms: 10.0,
            active_ms: 2.0,
            offset_ms: 0.0,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let granted = (0..100u64)
            .filter(|ms| band_access(&c, SimTime::from_ms(*ms as f64), &mut rng) == AccessOutcome::Granted)
            .count();
        assert_eq!(granted, 80);
    }
}
