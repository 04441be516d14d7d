use std::collections::VecDeque;

use crate::phy::TxOutcome;

use super::{MacError, TransportBlock};

pub const HARQ_PROCESSES: usize = 8;
pub const DEFAULT_MAX_TX: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HarqState {
    Idle,
    WaitingFeedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HarqVerdict {
    Done,
    Retransmit,
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarqProcess {
    pub process_id: u8,
    pub tb: Option<TransportBlock>,
    pub tx_count: u8,
    pub max_tx: u8,
    pub state: HarqState,
}

impl HarqProcess {
    pub fn new(process_id: u8, max_tx: u8) -> Self {
        HarqProcess {
            process_id,
            tb: None,
            tx_count: 0,
            max_tx,
            state: HarqState::Idle,
        }
    }

    /// First transmission of a new block on this process.
    pub fn start(&mut self, tb: TransportBlock) -> Result<(), MacError> {
        if self.state != HarqState::Idle {
            return Err(MacError::HarqBusy {
                process: self.process_id,
            });
        }
        self.tb = Some(tb);
        self.tx_count = 1;
        self.state = HarqState::WaitingFeedback;
        Ok(())
    }
}

/// Apply one feedback outcome. On `Retransmit` the block stays on the
/// process with `tx_count` already bumped for the next attempt; on `Done` or
/// `Drop` the process returns to idle and the caller gets the block back
/// through [`HarqProcess::tb`] beforehand if it needs it.
pub fn harq_feedback(process: &mut HarqProcess, outcome: TxOutcome) -> Result<HarqVerdict, MacError> {
    if process.state != HarqState::WaitingFeedback {
        return Err(MacError::FeedbackOnIdle {
            process: process.process_id,
        });
    }
    let verdict = match outcome {
        TxOutcome::Delivered => HarqVerdict::Done,
        TxOutcome::Lost if process.tx_count < process.max_tx => HarqVerdict::Retransmit,
        TxOutcome::Lost => HarqVerdict::Drop,
    };
    match verdict {
        HarqVerdict::Retransmit => process.tx_count += 1,
        HarqVerdict::Done | HarqVerdict::Drop => {
            process.state = HarqState::Idle;
            process.tx_count = 0;
        }
    }
    Ok(verdict)
}

/// The eight processes of one (UE, carrier) link plus the queue of
/// processes owed a retransmission.
#[derive(Debug, Clone, PartialEq)]
pub struct HarqEntity {
    processes: Vec<HarqProcess>,
    retx: VecDeque<u8>,
}

impl HarqEntity {
    pub fn new(max_tx: u8) -> Self {
        HarqEntity {
            processes: (0..HARQ_PROCESSES as u8)
                .map(|i| HarqProcess::new(i, max_tx))
                .collect(),
            retx: VecDeque::new(),
        }
    }

    pub fn process(&self, id: u8) -> &HarqProcess {
        &self.processes[id as usize]
    }

    /// Lowest idle process id, if any.
    pub fn free_process(&self) -> Option<u8> {
        self.processes
            .iter()
            .find(|p| p.state == HarqState::Idle)
            .map(|p| p.process_id)
    }

    pub fn start(&mut self, tb: TransportBlock) -> Result<u8, MacError> {
        let id = self.free_process().ok_or(MacError::NoFreeHarqProcess)?;
        self.processes[id as usize].start(tb)?;
        Ok(id)
    }

    /// Feed back an outcome. Returns the verdict and, for `Done` and `Drop`,
    /// the finished block.
    pub fn feedback(
        &mut self,
        id: u8,
        outcome: TxOutcome,
    ) -> Result<(HarqVerdict, Option<TransportBlock>), MacError> {
        let p = self
            .processes
            .get_mut(id as usize)
            .ok_or(MacError::FeedbackOnIdle { process: id })?;
        let verdict = harq_feedback(p, outcome)?;
        let tb = match verdict {
            HarqVerdict::Retransmit => {
                self.retx.push_back(id);
                None
            }
            HarqVerdict::Done | HarqVerdict::Drop => p.tb.take(),
        };
        Ok((verdict, tb))
    }

    pub fn has_retransmission(&self) -> bool {
        !self.retx.is_empty()
    }

    /// Next block owed a retransmission, without dequeuing it.
    pub fn peek_retransmission(&self) -> Option<(u8, &TransportBlock)> {
        let id = *self.retx.front()?;
        self.processes[id as usize].tb.as_ref().map(|tb| (id, tb))
    }

    pub fn pop_retransmission(&mut self) -> Option<u8> {
        self.retx.pop_front()
    }

    pub fn is_idle(&self) -> bool {
        self.retx.is_empty() && self.processes.iter().all(|p| p.state == HarqState::Idle)
    }

    /// Abandon everything, returning blocks still held.
    pub fn clear(&mut self) -> Vec<TransportBlock> {
        self.retx.clear();
        self.processes
            .iter_mut()
            .filter_map(|p| {
                p.state = HarqState::Idle;
                p.tx_count = 0;
                p.tb.take()
            })
            .collect()
    }
}
