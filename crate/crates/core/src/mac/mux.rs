//! Transport-block framing: a 3-byte subheader (LCID, big-endian length)
//! in front of every entry.

use bytes::{BufMut, Bytes, BytesMut};

pub const MAC_SUBHEADER_BYTES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MuxError {
    #[error("truncated subheader at byte {0}")]
    TruncatedHeader(usize),
    #[error("entry at byte {offset} claims {len} bytes, {available} left")]
    TruncatedEntry { offset: usize, len: usize, available: usize },
    #[error("entry at byte {0} is empty")]
    EmptyEntry(usize),
    #[error("unknown LCID {0}")]
    UnknownLcid(u8),
}

/// Frame `(lcid, pdu)` entries into one block. Nothing to send gives `None`.
///
/// # Panics
/// If a PDU is empty or longer than `u16::MAX` bytes; the RLC never
/// produces either.
pub fn mux(entries: &[(u8, Bytes)]) -> Option<Bytes> {
    if entries.is_empty() {
        return None;
    }
    let total: usize = entries.iter().map(|(_, p)| p.len() + MAC_SUBHEADER_BYTES).sum();
    let mut buf = BytesMut::with_capacity(total);
    for (lcid, pdu) in entries {
        assert!(!pdu.is_empty() && pdu.len() <= u16::MAX as usize);
        buf.put_u8(*lcid);
        buf.put_u16(pdu.len() as u16);
        buf.put_slice(pdu);
    }
    Some(buf.freeze())
}

/// Split a block back into entries in transmission order. `known` rejects
/// LCIDs the receiver has no channel for.
pub fn demux(tb: &Bytes, known: impl Fn(u8) -> bool) -> Result<Vec<(u8, Bytes)>, MuxError> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while pos < tb.len() {
        if tb.len() - pos < MAC_SUBHEADER_BYTES {
            return Err(MuxError::TruncatedHeader(pos));
        }
        let lcid = tb[pos];
        let len = u16::from_be_bytes([tb[pos + 1], tb[pos + 2]]) as usize;
        let start = pos + MAC_SUBHEADER_BYTES;
        if len == 0 {
            return Err(MuxError::EmptyEntry(pos));
        }
        if tb.len() - start < len {
            return Err(MuxError::TruncatedEntry {
                offset: pos,
                len,
                available: tb.len() - start,
            });
        }
        if !known(lcid) {
            return Err(MuxError::UnknownLcid(lcid));
        }
        out.push((lcid, tb.slice(start..start + len)));
        pos = start + len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    #[test]
    fn single_pdu_round_trip() {
        let pdu = Bytes::from_static(b"hello");
        let tb = mux(&[(1, pdu.clone())]).unwrap();
        assert_eq!(tb.len(), 5 + MAC_SUBHEADER_BYTES);
        assert_eq!(demux(&tb, |_| true).unwrap(), vec![(1, pdu)]);
    }

    #[test]
    fn empty_allocation_emits_nothing() {
        assert_eq!(mux(&[]), None);
    }

    #[test]
    fn malformed_blocks_are_rejected() {
        let tb = mux(&[(1, Bytes::from_static(b"abc"))]).unwrap();
        assert!(matches!(demux(&tb.slice(..4), |_| true), Err(MuxError::TruncatedEntry { .. })));
        assert!(matches!(demux(&tb.slice(..2), |_| true), Err(MuxError::TruncatedHeader(0))));
        assert_eq!(demux(&tb, |l| l != 1), Err(MuxError::UnknownLcid(1)));
        assert_eq!(demux(&Bytes::from_static(&[1, 0, 0]), |_| true), Err(MuxError::EmptyEntry(0)));
    }

    proptest! {
        #[test]
        fn demux_inverts_mux_per_channel(
            entries in proptest::collection::vec((1u8..6, proptest::collection::vec(any::<u8>(), 1..300)), 0..20)
        ) {
            let entries: Vec<(u8, Bytes)> = entries.into_iter().map(|(l, v)| (l, Bytes::from(v))).collect();
            match mux(&entries) {
                None => prop_assert!(entries.is_empty()),
                Some(tb) => {
                    let back = demux(&tb, |_| true).unwrap();
                    let per = |xs: &[(u8, Bytes)]| {
                        let mut m: BTreeMap<u8, Vec<Bytes>> = BTreeMap::new();
                        for (l, p) in xs {
                            m.entry(*l).or_default().push(p.clone());
                        }
                        m
                    };
                    prop_assert_eq!(per(&back), per(&entries));
                }
            }
        }
    }
}
