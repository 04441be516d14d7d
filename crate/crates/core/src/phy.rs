//! Abstract per-RAT, per-carrier link models.
//!
//! Propagation is log-distance with a band-dependent exponent, interference
//! is static co-channel power, capacity comes from the RAT's SE step table
//! and transport-block loss from a stepwise BLER map. There is no fading.

use rand::Rng;

use crate::domain::{BandClass, Carrier, CarrierId, CellId, RatProfile, SeStep, SimTime, UeId};

/// Thermal noise density at room temperature.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;
pub const NOISE_FIGURE_DB: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum PhyError {
    #[error("transport block of {tb_bits} bits exceeds capacity {capacity_bits}")]
    OversizedTb { tb_bits: u64, capacity_bits: u64 },
}

/// Free-space loss at 1 m: `20 log10(f_MHz) - 27.55`.
pub fn fspl_1m_db(freq_mhz: f64) -> f64 {
    20.0 * freq_mhz.log10() - 27.55
}

pub fn path_loss_exponent(class: BandClass) -> f64 {
    match class {
        BandClass::Low => 2.7,
        BandClass::Mid => 3.0,
        BandClass::High => 3.5,
    }
}

/// Log-distance path loss in dB. Distances under 1 m clamp to 1 m.
pub fn path_loss_db(distance_m: f64, freq_mhz: f64, class: BandClass) -> f64 {
    let d = distance_m.max(1.0);
    fspl_1m_db(freq_mhz) + 10.0 * path_loss_exponent(class) * d.log10()
}

pub fn noise_floor_dbm(bandwidth_hz: f64) -> f64 {
    THERMAL_NOISE_DBM_PER_HZ + 10.0 * bandwidth_hz.log10() + NOISE_FIGURE_DB
}

pub fn distance_m(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// A radiating cell as seen from one UE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmitter {
    pub position: [f64; 2],
    pub tx_power_dbm: f64,
}

pub fn rx_power_dbm(tx: &Transmitter, ue_position: [f64; 2], carrier: &Carrier) -> f64 {
    let pl = path_loss_db(
        distance_m(tx.position, ue_position),
        carrier.center_freq_mhz,
        carrier.band_class(),
    );
    tx.tx_power_dbm - pl
}

/// SINR in dB: signal over noise plus the sum of interferer powers, all
/// combined in the linear domain.
pub fn sinr_db(
    ue_position: [f64; 2],
    serving: &Transmitter,
    carrier: &Carrier,
    interferers: &[Transmitter],
) -> f64 {
    let signal = dbm_to_mw(rx_power_dbm(serving, ue_position, carrier));
    let noise = dbm_to_mw(noise_floor_dbm(carrier.bandwidth_hz()));
    let interference: f64 = interferers
        .iter()
        .map(|i| dbm_to_mw(rx_power_dbm(i, ue_position, carrier)))
        .sum();
    mw_to_dbm(signal) - mw_to_dbm(noise + interference)
}

/// Two carriers interfere when their spectra overlap.
pub fn is_co_channel(a: &Carrier, b: &Carrier) -> bool {
    (a.center_freq_mhz - b.center_freq_mhz).abs() < (a.bandwidth_mhz + b.bandwidth_mhz) / 2.0
}

/// Highest step whose threshold is at or below `sinr_db`.
pub fn se_step(curve: &[SeStep], sinr_db: f64) -> Option<&SeStep> {
    curve.iter().rev().find(|s| s.sinr_db <= sinr_db)
}

pub fn se_bits_per_ru(curve: &[SeStep], sinr_db: f64) -> f64 {
    se_step(curve, sinr_db).map_or(0.0, |s| s.bits_per_ru)
}

/// Resource units available on a carrier in one TTI.
pub fn resource_units(rat: &RatProfile, carrier: &Carrier) -> u64 {
    (rat.resource_units_per_tti * carrier.bandwidth_mhz).floor() as u64
}

/// Bits one TTI of the whole carrier can carry at `sinr_db`.
pub fn tb_capacity_bits(rat: &RatProfile, carrier: &Carrier, sinr_db: f64) -> u64 {
    (resource_units(rat, carrier) as f64 * se_bits_per_ru(&rat.se_curve, sinr_db)).floor() as u64
}

/// Loss probability for a block sent on the step with threshold
/// `step_threshold_db` while the link runs at `sinr_db`.
pub fn bler_for_step(rat: &RatProfile, sinr_db: f64, step_threshold_db: f64) -> f64 {
    if sinr_db == f64::INFINITY {
        return 0.0;
    }
    let margin = sinr_db - step_threshold_db;
    if margin < 0.0 {
        return 1.0;
    }
    let p = &rat.bler;
    let steps = (margin / p.step_db).floor();
    (p.at_boundary * p.decay_per_step.powf(steps)).max(p.floor)
}

/// BLER when the block uses the SE step that `sinr_db` itself falls in.
pub fn bler(rat: &RatProfile, sinr_db: f64) -> f64 {
    match se_step(&rat.se_curve, sinr_db) {
        Some(step) if step.bits_per_ru > 0.0 => bler_for_step(rat, sinr_db, step.sinr_db),
        _ if sinr_db == f64::INFINITY => 0.0,
        _ => 1.0,
    }
}

/// The MCS a scheduler picks for a link: the SE step at
/// `sinr - la_margin_db`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub bits_per_ru: f64,
    pub capacity_bits: u64,
    pub step_threshold_db: f64,
}

pub fn link_budget(rat: &RatProfile, carrier: &Carrier, sinr_db: f64) -> LinkBudget {
    let effective = sinr_db - rat.la_margin_db;
    match se_step(&rat.se_curve, effective) {
        Some(step) if step.bits_per_ru > 0.0 => LinkBudget {
            bits_per_ru: step.bits_per_ru,
            capacity_bits: (resource_units(rat, carrier) as f64 * step.bits_per_ru).floor() as u64,
            step_threshold_db: step.sinr_db,
        },
        _ => LinkBudget {
            bits_per_ru: 0.0,
            capacity_bits: 0,
            step_threshold_db: f64::INFINITY,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub ue: UeId,
    pub cell: CellId,
    pub carrier: CarrierId,
    pub sinr_db: f64,
    /// Ideal links never lose a block.
    pub ideal: bool,
    pub updated_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxOutcome {
    Delivered,
    Lost,
}

/// Send one transport block over a link. Ideal links (or an infinite SINR)
/// never consume randomness.
pub fn transmit<R: Rng + ?Sized>(
    tb_bits: u64,
    budget: &LinkBudget,
    link: &LinkState,
    rat: &RatProfile,
    rng: &mut R,
) -> Result<TxOutcome, PhyError> {
    if tb_bits > budget.capacity_bits {
        return Err(PhyError::OversizedTb {
            tb_bits,
            capacity_bits: budget.capacity_bits,
        });
    }
    if link.ideal || link.sinr_db == f64::INFINITY {
        return Ok(TxOutcome::Delivered);
    }
    let p = bler_for_step(rat, link.sinr_db, budget.step_threshold_db);
    if rng.random::<f64>() < p {
        Ok(TxOutcome::Lost)
    } else {
        Ok(TxOutcome::Delivered)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BandRegime, RatId, RatKind, ServiceRole};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn carrier(freq: f64, bw: f64) -> Carrier {
        Carrier {
            id: CarrierId(1),
            center_freq_mhz: freq,
            bandwidth_mhz: bw,
            regime: BandRegime::Licensed,
            rat: RatId::new("t"),
            service_role: ServiceRole::Any,
            busy_prob: 0.0,
            ideal: false,
            incumbent: None,
        }
    }

    fn flat_rat(bits: f64, ru_per_mhz: f64) -> RatProfile {
        let mut r = RatProfile::default_for(RatKind::LteLike, "t");
        r.resource_units_per_tti = ru_per_mhz;
        r.se_curve = vec![SeStep::new(-10.0, 0.0), SeStep::new(0.0, bits)];
        r.la_margin_db = 0.0;
        r
    }

    fn link(sinr: f64, ideal: bool) -> LinkState {
        LinkState {
            ue: UeId(1),
            cell: CellId(1),
            carrier: CarrierId(1),
            sinr_db: sinr,
            ideal,
            updated_at: SimTime::ZERO,
        }
    }

    // Independent Friis reference: 20log10(d) + 20log10(f) - 27.55.
    fn friis(d: f64, f: f64) -> f64 {
        20.0 * d.log10() + 20.0 * f.log10() - 27.55
    }

    #[test]
    fn path_loss_reference_points() {
        assert!((path_loss_db(1.0, 1000.0, BandClass::Mid) - 32.45).abs() < 1e-9);
        assert!((path_loss_db(1.0, 1000.0, BandClass::Mid) - friis(1.0, 1000.0)).abs() < 1e-12);
        assert!((path_loss_db(10.0, 1000.0, BandClass::Mid) - 62.45).abs() < 1e-9);
        for class in [BandClass::Low, BandClass::Mid, BandClass::High] {
            assert_eq!(path_loss_db(1.0, 3500.0, class), fspl_1m_db(3500.0));
        }
    }

    #[test]
    fn short_distances_clamp() {
        assert_eq!(path_loss_db(0.2, 2000.0, BandClass::Mid), path_loss_db(1.0, 2000.0, BandClass::Mid));
    }

    #[test]
    fn snr_arithmetic() {
        // 2000 MHz at 100 m gives 98.47 dB; a 20 MHz carrier has a -94 dBm floor.
        let c = carrier(2000.0, 20.0);
        assert!((noise_floor_dbm(c.bandwidth_hz()) - (-94.0)).abs() < 0.02);
        let tx = Transmitter { position: [0.0, 0.0], tx_power_dbm: 30.0 };
        let pl = path_loss_db(100.0, 2000.0, BandClass::Mid);
        let expected = 30.0 - pl - noise_floor_dbm(c.bandwidth_hz());
        let got = sinr_db([100.0, 0.0], &tx, &c, &[]);
        assert!((got - expected).abs() < 1e-9);
        assert!((got - 25.54).abs() < 0.05, "got {got}");
    }

    #[test]
    fn equal_interferer_gives_just_under_zero() {
        let c = carrier(2000.0, 10.0);
        let a = Transmitter { position: [0.0, 0.0], tx_power_dbm: 40.0 };
        let b = Transmitter { position: [200.0, 0.0], tx_power_dbm: 40.0 };
        let s = sinr_db([100.0, 0.0], &a, &c, &[b]);
        // S/(S+N) with S >> N: slightly below 0 dB.
        let sig = 10f64.powf((40.0 - path_loss_db(100.0, 2000.0, BandClass::Mid)) / 10.0);
        let noise = 10f64.powf(noise_floor_dbm(10e6) / 10.0);
        let oracle = 10.0 * (sig / (sig + noise)).log10();
        assert!((s - oracle).abs() < 1e-9);
        assert!(s < 0.0 && s > -0.1);
    }

    #[test]
    fn capacity_examples() {
        let rat = flat_rat(100.0, 5.0);
        let c = carrier(2000.0, 10.0);
        assert_eq!(resource_units(&rat, &c), 50);
        assert_eq!(tb_capacity_bits(&rat, &c, 5.0), 5000);
        assert_eq!(tb_capacity_bits(&rat, &c, -20.0), 0);
        assert_eq!(tb_capacity_bits(&rat, &c, -5.0), 0);
        let wide = carrier(2000.0, 20.0);
        assert_eq!(tb_capacity_bits(&rat, &wide, 5.0), 2 * tb_capacity_bits(&rat, &c, 5.0));
    }

    #[test]
    fn bler_map() {
        let rat = flat_rat(10.0, 50.0);
        assert_eq!(bler(&rat, 0.0), 0.5);
        assert_eq!(bler(&rat, 1.99), 0.5);
        assert!((bler(&rat, 2.0) - 0.05).abs() < 1e-12);
        assert!((bler(&rat, 4.5) - 0.005).abs() < 1e-12);
        assert_eq!(bler(&rat, 40.0), 1e-4);
        assert_eq!(bler(&rat, -3.0), 1.0);
        assert_eq!(bler(&rat, f64::INFINITY), 0.0);
    }

    #[test]
    fn ideal_link_always_delivers() {
        let rat = flat_rat(10.0, 50.0);
        let c = carrier(2000.0, 10.0);
        let budget = link_budget(&rat, &c, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(transmit(100, &budget, &link(0.0, true), &rat, &mut rng), Ok(TxOutcome::Delivered));
            assert_eq!(
                transmit(100, &budget, &link(f64::INFINITY, false), &rat, &mut rng),
                Ok(TxOutcome::Delivered)
            );
        }
    }

    #[test]
    fn oversized_block_is_rejected() {
        let rat = flat_rat(10.0, 50.0);
        let c = carrier(2000.0, 10.0);
        let budget = link_budget(&rat, &c, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            transmit(budget.capacity_bits + 1, &budget, &link(0.0, false), &rat, &mut rng),
            Err(PhyError::OversizedTb { .. })
        ));
    }

    #[test]
    fn boundary_loss_rate_monte_carlo() {
        let rat = flat_rat(10.0, 50.0);
        let c = carrier(2000.0, 10.0);
        let budget = link_budget(&rat, &c, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let lost = (0..n)
            .filter(|_| transmit(8, &budget, &link(0.0, false), &rat, &mut rng) == Ok(TxOutcome::Lost))
            .count();
        let rate = lost as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn loss_rate_within_three_standard_errors() {
        let rat = flat_rat(10.0, 50.0);
        let c = carrier(2000.0, 10.0);
        for sinr in [0.0, 2.5, 4.1] {
            let budget = link_budget(&rat, &c, sinr);
            let p = bler_for_step(&rat, sinr, budget.step_threshold_db);
            let mut rng = ChaCha8Rng::seed_from_u64(sinr.to_bits());
            let n = 100_000;
            let lost = (0..n)
                .filter(|_| transmit(8, &budget, &link(sinr, false), &rat, &mut rng) == Ok(TxOutcome::Lost))
                .count() as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((lost / n as f64 - p).abs() <= 3.0 * se, "sinr {sinr}: {} vs {p}", lost / n as f64);
        }
    }

    #[test]
    fn same_seed_same_outcomes() {
        let rat = flat_rat(10.0, 50.0);
        let c = carrier(2000.0, 10.0);
        let budget = link_budget(&rat, &c, 0.0);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..500)
                .map(|_| transmit(8, &budget, &link(0.5, false), &rat, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn link_budget_applies_margin() {
        let mut rat = flat_rat(10.0, 50.0);
        rat.la_margin_db = 2.0;
        let c = carrier(2000.0, 10.0);
        assert_eq!(link_budget(&rat, &c, 1.0).capacity_bits, 0);
        let b = link_budget(&rat, &c, 2.0);
        assert_eq!(b.capacity_bits, 5000);
        assert!((bler_for_step(&rat, 2.0, b.step_threshold_db) - 0.05).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn path_loss_monotone(d1 in 0.5f64..5000.0, dd in 0.0f64..5000.0, f1 in 100.0f64..60000.0, df in 0.0f64..20000.0) {
            let class = crate::domain::freq_band_class(f1);
            prop_assert!(path_loss_db(d1 + dd, f1, class) >= path_loss_db(d1, f1, class));
            let f2 = f1 + df;
            prop_assert!(
                path_loss_db(d1, f2, crate::domain::freq_band_class(f2)) >= path_loss_db(d1, f1, class) - 1e-9
            );
        }

        #[test]
        fn capacity_monotone_in_sinr(s1 in -30.0f64..40.0, ds in 0.0f64..30.0) {
            let rat = RatProfile::default_for(RatKind::LteLike, "t");
            let c = carrier(2600.0, 10.0);
            prop_assert!(tb_capacity_bits(&rat, &c, s1 + ds) >= tb_capacity_bits(&rat, &c, s1));
        }
    }
}
