//! PRIORITY_RR: strict priority tiers, equal resource shares inside a tier.

use std::collections::BTreeMap;

use crate::domain::ChannelId;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum SchedulerPolicy {
    #[default]
    PriorityRr,
}

/// What one logical channel asks for in a TTI.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDemand {
    pub channel: ChannelId,
    pub priority: u8,
    /// Backlog including per-PDU header overhead.
    pub pending_bits: u64,
    /// Spectral efficiency of the owning UE's link on this carrier.
    pub bits_per_ru: f64,
    /// Set for channels that cannot segment: the sizes of the queued PDUs,
    /// head first, in bits including overhead. Grants are rounded down to
    /// whole PDUs.
    pub whole_pdus: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub channel: ChannelId,
    pub bits: u64,
}

/// Round-robin pointers, one per priority tier. Persist across TTIs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RrPointers {
    last_start: BTreeMap<u8, ChannelId>,
}

fn whole_prefix(sizes: &[u64], limit: u64) -> u64 {
    let mut used = 0u64;
    for &s in sizes {
        if used + s > limit {
            break;
        }
        used += s;
    }
    used
}

/// Allocate `available_ru` resource units among `demands`.
///
/// Tiers are served in ascending priority number; a tier only sees what the
/// tiers before it left over. Inside a tier the units are water-filled
/// equally, so a channel that needs less than its share returns the surplus
/// to the others. Anything left after rounding goes to unsatisfied channels
/// one at a time in round-robin order, starting after last TTI's start.
/// Channels with nothing pending (or a dead link) get no entry.
pub fn schedule_tti(
    pointers: &mut RrPointers,
    available_ru: f64,
    demands: &[ChannelDemand],
) -> Vec<Allocation> {
    let mut tiers: BTreeMap<u8, Vec<&ChannelDemand>> = BTreeMap::new();
    for d in demands {
        if d.pending_bits > 0 && d.bits_per_ru > 0.0 {
            tiers.entry(d.priority).or_default().push(d);
        }
    }
    let mut remaining = available_ru.max(0.0);
    let mut out = Vec::new();
    for (prio, mut tier) in tiers {
        if remaining <= 0.0 {
            break;
        }
        tier.sort_by_key(|d| d.channel);
        let start = match pointers.last_start.get(&prio) {
            Some(last) => tier.iter().position(|d| d.channel > *last).unwrap_or(0),
            None => 0,
        };
        tier.rotate_left(start);
        pointers.last_start.insert(prio, tier[0].channel);

        let n = tier.len();
        let need: Vec<f64> = tier
            .iter()
            .map(|d| d.pending_bits as f64 / d.bits_per_ru)
            .collect();
        let mut grant = vec![0.0f64; n];
        let mut active: Vec<usize> = (0..n).collect();

        // Unsegmentable channels go first and round their equal share up to
        // the next PDU boundary when the tier can afford it; rounding down
        // would starve any PDU larger than the share.
        let share = remaining / n as f64;
        for (i, d) in tier.iter().enumerate() {
            let Some(sizes) = &d.whole_pdus else { continue };
            let mut take = 0u64;
            for &s in sizes {
                if take as f64 >= share * d.bits_per_ru {
                    break;
                }
                if (take + s) as f64 / d.bits_per_ru > remaining + 1e-9 {
                    break;
                }
                take += s;
            }
            grant[i] = take as f64 / d.bits_per_ru;
            remaining = (remaining - grant[i]).max(0.0);
            active.retain(|&j| j != i);
        }

        while !active.is_empty() && remaining > 1e-12 {
            let share = remaining / active.len() as f64;
            let (done, open): (Vec<usize>, Vec<usize>) =
                active.iter().partition(|&&i| need[i] - grant[i] <= share);
            if done.is_empty() {
                for &i in &active {
                    grant[i] += share;
                }
                remaining = 0.0;
                break;
            }
            for &i in &done {
                remaining -= need[i] - grant[i];
                grant[i] = need[i];
            }
            active = open;
        }
        remaining = remaining.max(0.0);

        let mut bits = vec![0u64; n];
        for (i, d) in tier.iter().enumerate() {
            let raw = ((grant[i] * d.bits_per_ru) + 1e-9).floor() as u64;
            let capped = raw.min(d.pending_bits);
            bits[i] = match &d.whole_pdus {
                Some(sizes) => whole_prefix(sizes, capped),
                None => capped,
            };
            remaining += (grant[i] - bits[i] as f64 / d.bits_per_ru).max(0.0);
        }

        // Rounding leftovers, handed out sequentially.
        for (i, d) in tier.iter().enumerate() {
            if remaining <= 1e-12 {
                break;
            }
            if bits[i] >= d.pending_bits {
                continue;
            }
            let extra = ((remaining * d.bits_per_ru) + 1e-9).floor() as u64;
            let want = (bits[i] + extra).min(d.pending_bits);
            let new_bits = match &d.whole_pdus {
                Some(sizes) => whole_prefix(sizes, want),
                None => want,
            };
            if new_bits > bits[i] {
                remaining -= (new_bits - bits[i]) as f64 / d.bits_per_ru;
                remaining = remaining.max(0.0);
                bits[i] = new_bits;
            }
        }

        for (i, d) in tier.iter().enumerate() {
            if bits[i] > 0 {
                out.push(Allocation {
                    channel: d.channel,
                    bits: bits[i],
                });
            }
        }
    }
    out
}
