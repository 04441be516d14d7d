//! RLC / adaptation layer: one entity per logical channel, unacknowledged
//! mode with segmentation, or transparent mode for RATs without RLC.
//!
//! UM header (4 bytes): `last:1 | reserved:3 | sn:12`, then a 16-bit
//! segment offset. Segment length is implied by the MAC subheader.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use bytes::{BufMut, Bytes, BytesMut};

use crate::domain::{
    BearerId, Cell, ChannelId, LogicalChannel, RatId, RatProfile, SchedulerId, SegmentInfo,
    ServiceType, SimTime, LayerPdu,
};

pub const RLC_HEADER_BYTES: usize = 4;
pub const REASSEMBLY_TIMEOUT_US: u64 = 100_000;
const SN_MASK: u16 = 0x0fff;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RlcError {
    #[error("max_bytes {0} leaves no room after the {RLC_HEADER_BYTES}-byte header")]
    MaxBytesTooSmall(usize),
    #[error("PDU without a PDCP sequence number on an unacknowledged-mode entity")]
    MissingSn,
    #[error("PDU of {0} bytes exceeds the 16-bit offset space")]
    TooLarge(usize),
    #[error("segment shorter than the RLC header")]
    Truncated,
    #[error("cell {cell} has no carrier for RAT {rat}")]
    NoCarrierForRat { cell: String, rat: RatId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RlcMode {
    Transparent,
    Unacknowledged,
}

impl RlcMode {
    pub fn for_rat(rat: &RatProfile) -> Self {
        if rat.has_rlc {
            RlcMode::Unacknowledged
        } else {
            RlcMode::Transparent
        }
    }

    pub fn header_bytes(self) -> usize {
        match self {
            RlcMode::Transparent => 0,
            RlcMode::Unacknowledged => RLC_HEADER_BYTES,
        }
    }
}

/// Build the logical channel for one tunnel of a bearer. The caller binds it
/// in the MAC and creates the entity.
pub fn map_channel(
    id: ChannelId,
    bearer: BearerId,
    service: ServiceType,
    priority: u8,
    cell: &Cell,
    rat: &RatProfile,
) -> Result<(LogicalChannel, RlcEntity), RlcError> {
    if !cell.hosts_rat(&rat.id) {
        return Err(RlcError::NoCarrierForRat {
            cell: cell.id.to_string(),
            rat: rat.id.clone(),
        });
    }
    let lc = LogicalChannel {
        id,
        bearer_id: bearer,
        cell_id: cell.id,
        scheduler_id: SchedulerId::new(cell.id, rat.id.clone()),
        priority,
        service,
    };
    Ok((lc, RlcEntity::new(id, RlcMode::for_rat(rat))))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct RlcCounters {
    pub segments_sent: u64,
    pub pdus_reassembled: u64,
    pub reassembly_timeouts: u64,
    pub duplicate_segments: u64,
    pub inconsistent_discards: u64,
}

#[derive(Debug, Clone)]
struct TxItem {
    sn: u16,
    data: Bytes,
    offset: usize,
}

#[derive(Debug, Clone)]
struct Partial {
    first_seen: SimTime,
    parts: BTreeMap<usize, Bytes>,
    total: Option<usize>,
}

impl Partial {
    /// Insert a segment. `Err` means it contradicts bytes already held.
    fn insert(&mut self, info: SegmentInfo, data: Bytes) -> Result<bool, ()> {
        let start = info.offset as usize;
        let end = start + data.len();
        if info.last {
            match self.total {
                Some(t) if t != end => return Err(()),
                _ => self.total = Some(end),
            }
        }
        if let Some(t) = self.total {
            if end > t {
                return Err(());
            }
        }
        for (&o, p) in self.parts.range(..end) {
            let pe = o + p.len();
            if pe <= start {
                continue;
            }
            let lo = start.max(o);
            let hi = end.min(pe);
            if data[lo - start..hi - start] != p[lo - o..hi - o] {
                return Err(());
            }
        }
        if let Some(existing) = self.parts.get(&start) {
            if existing.len() >= data.len() {
                return Ok(false);
            }
        }
        self.parts.insert(start, data);
        Ok(true)
    }

    fn assemble(&self) -> Option<Bytes> {
        let total = self.total?;
        let mut covered = 0usize;
        for (&o, p) in &self.parts {
            if o > covered {
                return None;
            }
            covered = covered.max(o + p.len());
        }
        if covered < total {
            return None;
        }
        let mut buf = BytesMut::with_capacity(total);
        let mut pos = 0usize;
        for (&o, p) in &self.parts {
            let pe = o + p.len();
            if pe > pos {
                buf.put_slice(&p[pos - o..]);
                pos = pe;
            }
        }
        Some(buf.freeze())
    }
}

/// One PDU pulled for transmission, already encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct PulledPdu {
    pub sn: u16,
    pub last_segment: bool,
    pub bytes: Bytes,
}

#[derive(Debug, Clone)]
pub struct RlcEntity {
    pub channel: ChannelId,
    pub mode: RlcMode,
    tx: VecDeque<TxItem>,
    queued_bytes: usize,
    rx: BTreeMap<u16, Partial>,
    completed: VecDeque<(SimTime, u16)>,
    completed_set: BTreeSet<u16>,
    pub counters: RlcCounters,
}

impl RlcEntity {
    pub fn new(channel: ChannelId, mode: RlcMode) -> Self {
        RlcEntity {
            channel,
            mode,
            tx: VecDeque::new(),
            queued_bytes: 0,
            rx: BTreeMap::new(),
            completed: VecDeque::new(),
            completed_set: BTreeSet::new(),
            counters: RlcCounters::default(),
        }
    }

    /// Segment one PDCP PDU so each output, header included, fits in
    /// `max_bytes`. Transparent mode passes the PDU through untouched.
    pub fn rlc_tx(&self, pdu: &LayerPdu, max_bytes: usize) -> Result<Vec<LayerPdu>, RlcError> {
        match self.mode {
            RlcMode::Transparent => Ok(vec![LayerPdu {
                rlc_segment: None,
                ..pdu.clone()
            }]),
            RlcMode::Unacknowledged => {
                if max_bytes <= RLC_HEADER_BYTES {
                    return Err(RlcError::MaxBytesTooSmall(max_bytes));
                }
                if pdu.pdcp_sn.is_none() {
                    return Err(RlcError::MissingSn);
                }
                if pdu.len() > u16::MAX as usize {
                    return Err(RlcError::TooLarge(pdu.len()));
                }
                let chunk = max_bytes - RLC_HEADER_BYTES;
                let mut out = Vec::with_capacity(pdu.len().div_ceil(chunk).max(1));
                let mut offset = 0usize;
                loop {
                    let len = chunk.min(pdu.len() - offset);
                    let last = offset + len == pdu.len();
                    out.push(LayerPdu {
                        rlc_segment: Some(SegmentInfo {
                            offset: offset as u16,
                            length: len as u16,
                            last,
                        }),
                        payload: pdu.payload.slice(offset..offset + len),
                        ..pdu.clone()
                    });
                    offset += len;
                    if last {
                        break;
                    }
                }
                Ok(out)
            }
        }
    }

    /// Wire bytes for one RLC PDU.
    pub fn encode(&self, pdu: &LayerPdu) -> Bytes {
        match (self.mode, pdu.rlc_segment) {
            (RlcMode::Unacknowledged, Some(seg)) => {
                encode_um(pdu.pdcp_sn.unwrap_or(0), seg.last, seg.offset, &pdu.payload)
            }
            _ => pdu.payload.clone(),
        }
    }

    /// Parse wire bytes back into an RLC PDU.
    pub fn decode(&self, bytes: Bytes) -> Result<LayerPdu, RlcError> {
        match self.mode {
            RlcMode::Transparent => Ok(LayerPdu::raw(bytes)),
            RlcMode::Unacknowledged => {
                if bytes.len() <= RLC_HEADER_BYTES {
                    return Err(RlcError::Truncated);
                }
                let h = u16::from_be_bytes([bytes[0], bytes[1]]);
                let offset = u16::from_be_bytes([bytes[2], bytes[3]]);
                let payload = bytes.slice(RLC_HEADER_BYTES..);
                Ok(LayerPdu {
                    pdcp_sn: Some(h & SN_MASK),
                    rlc_segment: Some(SegmentInfo {
                        offset,
                        length: payload.len() as u16,
                        last: h & 0x8000 != 0,
                    }),
                    payload,
                    ..LayerPdu::raw(Bytes::new())
                })
            }
        }
    }

    /// Receive one RLC PDU; returns the PDCP PDU once it is complete.
    pub fn rlc_rx(&mut self, pdu: LayerPdu, now: SimTime) -> Option<Bytes> {
        self.prune_completed(now);
        let (sn, seg) = match (self.mode, pdu.pdcp_sn, pdu.rlc_segment) {
            (RlcMode::Unacknowledged, Some(sn), Some(seg)) => (sn & SN_MASK, seg),
            _ => return Some(pdu.payload),
        };
        if self.completed_set.contains(&sn) {
            self.counters.duplicate_segments += 1;
            return None;
        }
        let partial = self.rx.entry(sn).or_insert_with(|| Partial {
            first_seen: now,
            parts: BTreeMap::new(),
            total: None,
        });
        match partial.insert(seg, pdu.payload) {
            Err(()) => {
                self.rx.remove(&sn);
                self.counters.inconsistent_discards += 1;
                return None;
            }
            Ok(false) => {
                self.counters.duplicate_segments += 1;
                return None;
            }
            Ok(true) => {}
        }
        let done = partial.assemble()?;
        self.rx.remove(&sn);
        self.completed.push_back((now, sn));
        self.completed_set.insert(sn);
        self.counters.pdus_reassembled += 1;
        Some(done)
    }

    fn prune_completed(&mut self, now: SimTime) {
        while let Some(&(t, sn)) = self.completed.front() {
            if now.saturating_since(t) < REASSEMBLY_TIMEOUT_US {
                break;
            }
            self.completed.pop_front();
            self.completed_set.remove(&sn);
        }
    }

    /// Drop partial PDUs older than the reassembly timeout. Returns their
    /// SNs.
    pub fn expire(&mut self, now: SimTime) -> Vec<u16> {
        let stale: Vec<u16> = self
            .rx
            .iter()
            .filter(|(_, p)| now.saturating_since(p.first_seen) >= REASSEMBLY_TIMEOUT_US)
            .map(|(&sn, _)| sn)
            .collect();
        for sn in &stale {
            self.rx.remove(sn);
        }
        self.counters.reassembly_timeouts += stale.len() as u64;
        self.prune_completed(now);
        stale
    }

    /// When the oldest partial PDU times out.
    pub fn next_deadline(&self) -> Option<SimTime> {
        self.rx
            .values()
            .map(|p| p.first_seen.plus_us(REASSEMBLY_TIMEOUT_US))
            .min()
    }

    pub fn has_partials(&self) -> bool {
        !self.rx.is_empty()
    }

    /// Queue a PDCP PDU for transmission.
    pub fn enqueue(&mut self, sn: u16, data: Bytes) {
        self.queued_bytes += data.len();
        self.tx.push_back(TxItem {
            sn,
            data,
            offset: 0,
        });
    }

    pub fn is_tx_empty(&self) -> bool {
        self.tx.is_empty()
    }

    pub fn queued_pdus(&self) -> usize {
        self.tx.len()
    }

    pub fn queued_payload_bytes(&self) -> usize {
        self.queued_bytes
    }

    /// Bytes needed to drain the queue given `lower_overhead` extra bytes
    /// per PDU added below RLC.
    pub fn buffer_status(&self, lower_overhead: usize) -> u64 {
        (self.queued_bytes + self.tx.len() * (self.mode.header_bytes() + lower_overhead)) as u64
    }

    /// Sizes of queued PDUs with overhead, head first, capped at `limit`
    /// entries. Only meaningful in transparent mode.
    pub fn head_pdu_sizes(&self, lower_overhead: usize, limit: usize) -> Vec<u64> {
        self.tx
            .iter()
            .take(limit)
            .map(|t| (t.data.len() - t.offset + self.mode.header_bytes() + lower_overhead) as u64)
            .collect()
    }

    /// Take as much as fits in `budget` bytes, each PDU costing its header
    /// plus `lower_overhead`. Transparent mode only sends whole PDUs.
    pub fn pull(&mut self, mut budget: usize, lower_overhead: usize) -> Vec<PulledPdu> {
        let mut out = Vec::new();
        let per = self.mode.header_bytes() + lower_overhead;
        while let Some(head) = self.tx.front_mut() {
            let left = head.data.len() - head.offset;
            match self.mode {
                RlcMode::Transparent => {
                    if left + per > budget {
                        break;
                    }
                    budget -= left + per;
                    self.queued_bytes -= left;
                    let item = self.tx.pop_front().expect("head exists");
                    out.push(PulledPdu {
                        sn: item.sn,
                        last_segment: true,
                        bytes: item.data,
                    });
                }
                RlcMode::Unacknowledged => {
                    if budget <= per {
                        break;
                    }
                    let take = left.min(budget - per);
                    let last = take == left;
                    let bytes = encode_um(
                        head.sn,
                        last,
                        head.offset as u16,
                        &head.data[head.offset..head.offset + take],
                    );
                    budget -= take + per;
                    self.queued_bytes -= take;
                    head.offset += take;
                    out.push(PulledPdu {
                        sn: head.sn,
                        last_segment: last,
                        bytes,
                    });
                    if last {
                        self.tx.pop_front();
                    }
                }
            }
        }
        self.counters.segments_sent += out.len() as u64;
        out
    }

    /// Empty the transmit queue, returning the SNs that were waiting.
    pub fn drain_tx(&mut self) -> Vec<u16> {
        self.queued_bytes = 0;
        self.tx.drain(..).map(|t| t.sn).collect()
    }
}

fn encode_um(sn: u16, last: bool, offset: u16, data: &[u8]) -> Bytes {
    let mut buf = BytesMut::with_capacity(RLC_HEADER_BYTES + data.len());
    let h = (sn & SN_MASK) | if last { 0x8000 } else { 0 };
    buf.put_u16(h);
    buf.put_u16(offset);
    buf.put_slice(data);
    buf.freeze()
}
