//! The common MAC structure: one scheduler entity per (cell, RAT), a single
//! channel-to-scheduler binding table, HARQ, band access and TB framing.

mod access;
mod harq;
mod mux;
mod scheduler;

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;

use crate::domain::{CarrierId, CellId, ChannelId, SchedulerId, UeId};

pub use access::{band_access, AccessOutcome};
pub use harq::{
    harq_feedback, HarqEntity, HarqProcess, HarqState, HarqVerdict, DEFAULT_MAX_TX, HARQ_PROCESSES,
};
pub use mux::{demux, mux, MuxError, MAC_SUBHEADER_BYTES};
pub use scheduler::{schedule_tti, Allocation, ChannelDemand, RrPointers, SchedulerPolicy};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MacError {
    #[error("no scheduler for {0}")]
    NoScheduler(SchedulerId),
    #[error("scheduler {0} already exists")]
    DuplicateScheduler(SchedulerId),
    #[error("{channel} already bound to {existing}, refused binding to {requested}")]
    AlreadyBound {
        channel: ChannelId,
        existing: SchedulerId,
        requested: SchedulerId,
    },
    #[error("{0} is not bound to any scheduler")]
    UnknownChannel(ChannelId),
    #[error("{0} has no free logical channel id")]
    LcidExhausted(UeId),
    #[error("feedback for HARQ process {process} which is not waiting for any")]
    FeedbackOnIdle { process: u8 },
    #[error("HARQ process {process} is busy")]
    HarqBusy { process: u8 },
    #[error("all HARQ processes busy")]
    NoFreeHarqProcess,
    #[error("exclusivity broken: {0}")]
    Exclusivity(String),
}

/// Which RLC PDU of which PDCP SN a TB entry carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TbContent {
    pub channel: ChannelId,
    pub pdcp_sn: u16,
    pub last_segment: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportBlock {
    pub id: u64,
    pub ue: UeId,
    pub cell: CellId,
    pub carrier: CarrierId,
    pub data: Bytes,
    pub contents: Vec<TbContent>,
}

impl TransportBlock {
    pub fn bits(&self) -> u64 {
        self.data.len() as u64 * 8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerEntity {
    pub id: SchedulerId,
    pub carriers: Vec<CarrierId>,
    pub bound_channels: BTreeSet<ChannelId>,
    pub policy: SchedulerPolicy,
    pub pointers: RrPointers,
}

/// The single configuration point for all schedulers.
#[derive(Debug, Clone, Default)]
pub struct MacLayer {
    schedulers: BTreeMap<SchedulerId, SchedulerEntity>,
    owner: BTreeMap<ChannelId, SchedulerId>,
    lcid_of: BTreeMap<ChannelId, (UeId, u8)>,
    by_lcid: BTreeMap<(UeId, u8), ChannelId>,
    pub malformed_tbs: u64,
}

impl MacLayer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_scheduler(&mut self, id: SchedulerId, carriers: Vec<CarrierId>) -> Result<(), MacError> {
        if self.schedulers.contains_key(&id) {
            return Err(MacError::DuplicateScheduler(id));
        }
        self.schedulers.insert(
            id.clone(),
            SchedulerEntity {
                id,
                carriers,
                bound_channels: BTreeSet::new(),
                policy: SchedulerPolicy::PriorityRr,
                pointers: RrPointers::default(),
            },
        );
        Ok(())
    }

    pub fn scheduler(&self, id: &SchedulerId) -> Option<&SchedulerEntity> {
        self.schedulers.get(id)
    }

    pub fn scheduler_mut(&mut self, id: &SchedulerId) -> Option<&mut SchedulerEntity> {
        self.schedulers.get_mut(id)
    }

    pub fn schedulers(&self) -> impl Iterator<Item = &SchedulerEntity> {
        self.schedulers.values()
    }

    /// Bind a channel to exactly one scheduler and give it a per-UE LCID.
    pub fn bind_channel(
        &mut self,
        channel: ChannelId,
        ue: UeId,
        scheduler: &SchedulerId,
    ) -> Result<u8, MacError> {
        if let Some(existing) = self.owner.get(&channel) {
            return Err(MacError::AlreadyBound {
                channel,
                existing: existing.clone(),
                requested: scheduler.clone(),
            });
        }
        let entity = self
            .schedulers
            .get_mut(scheduler)
            .ok_or_else(|| MacError::NoScheduler(scheduler.clone()))?;
        let lcid = (1..=u8::MAX)
            .find(|l| !self.by_lcid.contains_key(&(ue, *l)))
            .ok_or(MacError::LcidExhausted(ue))?;
        entity.bound_channels.insert(channel);
        self.owner.insert(channel, scheduler.clone());
        self.lcid_of.insert(channel, (ue, lcid));
        self.by_lcid.insert((ue, lcid), channel);
        Ok(lcid)
    }

    pub fn unbind_channel(&mut self, channel: ChannelId) -> Result<SchedulerId, MacError> {
        let sched = self
            .owner
            .remove(&channel)
            .ok_or(MacError::UnknownChannel(channel))?;
        if let Some(e) = self.schedulers.get_mut(&sched) {
            e.bound_channels.remove(&channel);
        }
        if let Some(key) = self.lcid_of.remove(&channel) {
            self.by_lcid.remove(&key);
        }
        Ok(sched)
    }

    pub fn owner_of(&self, channel: ChannelId) -> Option<&SchedulerId> {
        self.owner.get(&channel)
    }

    pub fn lcid(&self, channel: ChannelId) -> Option<u8> {
        self.lcid_of.get(&channel).map(|&(_, l)| l)
    }

    pub fn channel_for(&self, ue: UeId, lcid: u8) -> Option<ChannelId> {
        self.by_lcid.get(&(ue, lcid)).copied()
    }

    pub fn bound_count(&self) -> usize {
        self.owner.len()
    }

    /// The channel to scheduler relation must be a function, and agree with
    /// every scheduler's bound set.
    pub fn check_exclusivity(&self) -> Result<(), MacError> {
        let mut seen: BTreeMap<ChannelId, &SchedulerId> = BTreeMap::new();
        for e in self.schedulers.values() {
            for ch in &e.bound_channels {
                if let Some(prev) = seen.insert(*ch, &e.id) {
                    return Err(MacError::Exclusivity(format!(
                        "{ch} bound under {prev} and {}",
                        e.id
                    )));
                }
                if self.owner.get(ch) != Some(&e.id) {
                    return Err(MacError::Exclusivity(format!(
                        "{ch} listed under {} but owned by {:?}",
                        e.id,
                        self.owner.get(ch)
                    )));
                }
            }
        }
        if seen.len() != self.owner.len() {
            return Err(MacError::Exclusivity(
                "binding table lists channels no scheduler holds".into(),
            ));
        }
        Ok(())
    }
}
