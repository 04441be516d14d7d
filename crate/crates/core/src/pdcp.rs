//! Common PDCP: one entity per bearer regardless of how many RATs or cells
//! carry it.
//!
//! PDU layout: 2-byte header (`D/C:1 | compressed:1 | reserved:2 | sn:12`)
//! followed by the ciphered region, which holds the 4-byte compressed upper
//! header and then the SDU payload.

use std::collections::{BTreeMap, BTreeSet};

use bytes::{BufMut, Bytes, BytesMut};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{BearerId, LayerPdu, Sdu, SimTime, PDCP_SN_MODULUS, PDCP_WINDOW};

pub const PDCP_HEADER_BYTES: usize = 2;
/// Size of the modelled upper-layer (IP/UDP/app) header.
pub const UPPER_HEADER_BYTES: usize = 40;
pub const COMPRESSED_HEADER_BYTES: usize = 4;
/// Bytes PDCP adds to every SDU payload on the air.
pub const PDCP_OVERHEAD_BYTES: usize = PDCP_HEADER_BYTES + COMPRESSED_HEADER_BYTES;
pub const T_REORDERING_US: u64 = 50_000;
const STATIC_CONTEXT_BYTES: usize = UPPER_HEADER_BYTES - 4;
const MODULUS: u64 = PDCP_SN_MODULUS as u64;
const WINDOW: u64 = PDCP_WINDOW as u64;

pub type CipherKey = [u8; 16];

/// XOR `data` with the keystream for `(key, sn)`. Applying it twice restores
/// the input.
pub fn apply_keystream(key: &CipherKey, sn: u16, data: &mut [u8]) {
    let mut seed = [0u8; 32];
    seed[..16].copy_from_slice(key);
    seed[16..18].copy_from_slice(&sn.to_be_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut ks = [0u8; 64];
    for chunk in data.chunks_mut(64) {
        rng.fill_bytes(&mut ks[..chunk.len()]);
        for (b, k) in chunk.iter_mut().zip(ks.iter()) {
            *b ^= k;
        }
    }
}

/// The per-bearer static part of the modelled upper header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeaderContext([u8; STATIC_CONTEXT_BYTES]);

impl HeaderContext {
    pub fn for_bearer(bearer: BearerId) -> Self {
        let mut ctx = [0u8; STATIC_CONTEXT_BYTES];
        ctx[0] = 0x45;
        for (i, b) in ctx.iter_mut().enumerate().skip(1) {
            *b = (bearer.0.wrapping_mul(13) as usize + i * 29) as u8;
        }
        ctx[12..16].copy_from_slice(&bearer.0.to_be_bytes());
        HeaderContext(ctx)
    }

    /// The full upper header for one packet.
    pub fn header(&self, seq: u32) -> [u8; UPPER_HEADER_BYTES] {
        let mut h = [0u8; UPPER_HEADER_BYTES];
        h[..STATIC_CONTEXT_BYTES].copy_from_slice(&self.0);
        h[STATIC_CONTEXT_BYTES..].copy_from_slice(&seq.to_be_bytes());
        h
    }

    /// Keep only the changing field. `None` if the header does not belong to
    /// this context.
    pub fn compress(&self, header: &[u8; UPPER_HEADER_BYTES]) -> Option<[u8; COMPRESSED_HEADER_BYTES]> {
        if header[..STATIC_CONTEXT_BYTES] != self.0 {
            return None;
        }
        let mut c = [0u8; COMPRESSED_HEADER_BYTES];
        c.copy_from_slice(&header[STATIC_CONTEXT_BYTES..]);
        Some(c)
    }

    pub fn decompress(&self, compressed: &[u8; COMPRESSED_HEADER_BYTES]) -> [u8; UPPER_HEADER_BYTES] {
        self.header(u32::from_be_bytes(*compressed))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct PdcpCounters {
    pub transmitted: u64,
    pub delivered: u64,
    pub duplicates_discarded: u64,
    pub gaps_skipped: u64,
    pub out_of_window: u64,
    pub malformed: u64,
    pub reorder_peak_depth: u64,
    pub retransmit_evicted: u64,
}

/// One SDU handed to the upper layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveredSdu {
    pub sn: u16,
    /// Extended sequence number (hyper-frame and SN).
    pub count: u64,
    pub upper_header: [u8; UPPER_HEADER_BYTES],
    pub payload: Bytes,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RxOutcome {
    pub delivered: Vec<DeliveredSdu>,
    /// COUNTs given up on by the reordering timer.
    pub skipped: Vec<u64>,
    /// Set when the PDU itself was a duplicate.
    pub duplicate: bool,
}

#[derive(Debug, Clone)]
pub struct PdcpEntity {
    pub bearer_id: BearerId,
    key: CipherKey,
    context: HeaderContext,
    tx_next: u64,
    retransmit: BTreeMap<u64, LayerPdu>,
    rx_deliv: u64,
    rx_next: u64,
    rx_reord: u64,
    t_reordering: Option<SimTime>,
    reorder: BTreeMap<u64, DeliveredSdu>,
    delivered_recent: BTreeSet<u64>,
    pub counters: PdcpCounters,
}

impl PdcpEntity {
    pub fn new(bearer_id: BearerId, key: CipherKey) -> Self {
        PdcpEntity {
            bearer_id,
            key,
            context: HeaderContext::for_bearer(bearer_id),
            tx_next: 0,
            retransmit: BTreeMap::new(),
            rx_deliv: 0,
            rx_next: 0,
            rx_reord: 0,
            t_reordering: None,
            reorder: BTreeMap::new(),
            delivered_recent: BTreeSet::new(),
            counters: PdcpCounters::default(),
        }
    }

    pub fn context(&self) -> &HeaderContext {
        &self.context
    }

    /// Next SN `pdcp_tx` will assign.
    pub fn tx_next_sn(&self) -> u16 {
        (self.tx_next % MODULUS) as u16
    }

    pub fn tx_next_count(&self) -> u64 {
        self.tx_next
    }

    /// Start numbering at an arbitrary COUNT. Used to exercise wraparound.
    pub fn set_tx_next(&mut self, count: u64) {
        self.tx_next = count;
    }

    pub fn set_rx_deliv(&mut self, count: u64) {
        self.rx_deliv = count;
        self.rx_next = count;
        self.rx_reord = count;
    }

    pub fn rx_deliv(&self) -> u64 {
        self.rx_deliv
    }

    /// Number, compress, cipher and remember one SDU.
    pub fn pdcp_tx(&mut self, sdu: &Sdu) -> LayerPdu {
        let count = self.tx_next;
        let sn = (count % MODULUS) as u16;
        self.tx_next += 1;

        let header = self.context.header(count as u32);
        let compressed = self.context.compress(&header).expect("own context");
        let mut body = BytesMut::with_capacity(COMPRESSED_HEADER_BYTES + sdu.payload.len());
        body.put_slice(&compressed);
        body.put_slice(&sdu.payload);
        apply_keystream(&self.key, sn, &mut body);

        let mut pdu = BytesMut::with_capacity(PDCP_HEADER_BYTES + body.len());
        pdu.put_u16(0x8000 | 0x4000 | sn);
        pdu.put_slice(&body);

        let out = LayerPdu {
            pdcp_sn: Some(sn),
            rlc_segment: None,
            mac_tb_id: None,
            cipher_applied: true,
            compressed: true,
            payload: pdu.freeze(),
        };
        self.retransmit.insert(count, out.clone());
        if self.retransmit.len() > PDCP_WINDOW as usize {
            self.retransmit.pop_first();
            self.counters.retransmit_evicted += 1;
        }
        self.counters.transmitted += 1;
        out
    }

    /// The most recent transmitted COUNT carrying `sn`.
    pub fn tx_count_for(&self, sn: u16) -> Option<u64> {
        let last = self.tx_next.checked_sub(1)?;
        let back = (last + MODULUS - u64::from(sn)) % MODULUS;
        last.checked_sub(back)
    }

    /// The receiving side confirmed `sn`; stop holding it for handover.
    pub fn confirm(&mut self, sn: u16) -> bool {
        match self.tx_count_for(sn) {
            Some(c) => self.retransmit.remove(&c).is_some(),
            None => false,
        }
    }

    /// Forget a PDU by COUNT, e.g. once it is known to be lost for good.
    pub fn discard_count(&mut self, count: u64) -> bool {
        self.retransmit.remove(&count).is_some()
    }

    /// The buffered PDU with this COUNT, if still unconfirmed.
    pub fn buffered(&self, count: u64) -> Option<&LayerPdu> {
        self.retransmit.get(&count)
    }

    pub fn unconfirmed(&self) -> usize {
        self.retransmit.len()
    }

    /// PDUs to re-send on the new tunnels after a serving-cell change, oldest
    /// first, original SNs kept. They stay buffered until confirmed.
    pub fn handover_flush(&self) -> Vec<LayerPdu> {
        self.retransmit.values().cloned().collect()
    }

    fn rcvd_count(&self, sn: u16) -> u64 {
        let sn = u64::from(sn);
        let deliv_sn = self.rx_deliv % MODULUS;
        let hfn = self.rx_deliv / MODULUS;
        let hfn = if sn + WINDOW < deliv_sn {
            hfn + 1
        } else if sn >= deliv_sn + WINDOW && hfn > 0 {
            hfn - 1
        } else {
            hfn
        };
        hfn * MODULUS + sn
    }

    /// Receive one PDU from any tunnel of the bearer.
    pub fn pdcp_rx(&mut self, pdu: Bytes, now: SimTime) -> RxOutcome {
        let mut out = RxOutcome::default();
        if pdu.len() < PDCP_HEADER_BYTES + COMPRESSED_HEADER_BYTES {
            self.counters.malformed += 1;
            return out;
        }
        let h = u16::from_be_bytes([pdu[0], pdu[1]]);
        if h & 0x8000 == 0 || h & 0x4000 == 0 {
            self.counters.malformed += 1;
            return out;
        }
        let sn = h & 0x0fff;
        let count = self.rcvd_count(sn);

        if count < self.rx_deliv {
            if self.delivered_recent.contains(&count) {
                self.counters.duplicates_discarded += 1;
                out.duplicate = true;
            } else {
                self.counters.out_of_window += 1;
            }
            return out;
        }
        if count >= self.rx_deliv + WINDOW {
            self.counters.out_of_window += 1;
            return out;
        }
        if self.reorder.contains_key(&count) {
            self.counters.duplicates_discarded += 1;
            out.duplicate = true;
            return out;
        }

        let mut body = pdu.slice(PDCP_HEADER_BYTES..).to_vec();
        apply_keystream(&self.key, sn, &mut body);
        let mut compressed = [0u8; COMPRESSED_HEADER_BYTES];
        compressed.copy_from_slice(&body[..COMPRESSED_HEADER_BYTES]);
        let upper_header = self.context.decompress(&compressed);
        let payload = Bytes::from(body).slice(COMPRESSED_HEADER_BYTES..);
        self.reorder.insert(
            count,
            DeliveredSdu {
                sn,
                count,
                upper_header,
                payload,
            },
        );
        self.counters.reorder_peak_depth = self.counters.reorder_peak_depth.max(self.reorder.len() as u64);

        if count >= self.rx_next {
            self.rx_next = count + 1;
        }
        if count == self.rx_deliv {
            self.deliver_in_order(&mut out);
        }
        if self.t_reordering.is_some() && self.rx_deliv >= self.rx_reord {
            self.t_reordering = None;
        }
        if self.t_reordering.is_none() && self.rx_deliv < self.rx_next {
            self.rx_reord = self.rx_next;
            self.t_reordering = Some(now.plus_us(T_REORDERING_US));
        }
        out
    }

    fn deliver_in_order(&mut self, out: &mut RxOutcome) {
        while let Some(sdu) = self.reorder.remove(&self.rx_deliv) {
            self.mark_delivered(sdu.count);
            out.delivered.push(sdu);
            self.rx_deliv += 1;
        }
    }

    fn mark_delivered(&mut self, count: u64) {
        self.counters.delivered += 1;
        self.delivered_recent.insert(count);
        let floor = count.saturating_sub(WINDOW);
        while let Some(&first) = self.delivered_recent.first() {
            if first >= floor {
                break;
            }
            self.delivered_recent.pop_first();
        }
    }

    pub fn reordering_deadline(&self) -> Option<SimTime> {
        self.t_reordering
    }

    /// Fire t_reordering if it is due: give up on the gap below `rx_reord`.
    pub fn on_timer(&mut self, now: SimTime) -> RxOutcome {
        let mut out = RxOutcome::default();
        match self.t_reordering {
            Some(t) if t <= now => {}
            _ => return out,
        }
        self.t_reordering = None;
        let below: Vec<u64> = self.reorder.range(..self.rx_reord).map(|(&c, _)| c).collect();
        for c in below {
            for gap in self.rx_deliv..c {
                out.skipped.push(gap);
            }
            let sdu = self.reorder.remove(&c).expect("listed");
            self.mark_delivered(c);
            out.delivered.push(sdu);
            self.rx_deliv = c + 1;
        }
        for gap in self.rx_deliv..self.rx_reord {
            out.skipped.push(gap);
        }
        self.rx_deliv = self.rx_deliv.max(self.rx_reord);
        self.deliver_in_order(&mut out);
        self.counters.gaps_skipped += out.skipped.len() as u64;
        if self.rx_deliv < self.rx_next {
            self.rx_reord = self.rx_next;
            self.t_reordering = Some(now.plus_us(T_REORDERING_US));
        }
        out
    }

    pub fn reorder_depth(&self) -> usize {
        self.reorder.len()
    }
}
