use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::block::{BlockRef, NodeId};
use crate::pop::ValidationError;

/// Cumulative counters of one node at the end of one slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSlot {
    pub slot: u32,
    pub node: NodeId,
    /// Accounting size of the local chain.
    pub s_bits: u64,
    /// Accounting size of the trusted header cache.
    pub h_bits: u64,
    /// Digests announced to neighbors.
    pub construct_bits: u64,
    /// Child requests and replies transmitted.
    pub consensus_bits: u64,
    pub consensus_rx_bits: u64,
    /// Full blocks and block requests for initial retrievals, sent and
    /// received.
    pub retrieval_bits: u64,
    pub msgs_tx: u64,
    pub msgs_rx: u64,
    pub blocks: u64,
    pub validations_attempted: u64,
    pub validations_succeeded: u64,
    pub validations_failed: u64,
}

impl NodeSlot {
    pub fn storage_bits(&self) -> u64 {
        self.s_bits + self.h_bits
    }

    pub fn communication_bits(&self) -> u64 {
        self.construct_bits + self.consensus_bits
    }
}

/// Summary of one validation session.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub slot: u32,
    pub validator: NodeId,
    pub target: BlockRef,
    pub gamma: usize,
    pub error: Option<ValidationError>,
    /// Authors of the path blocks in path order (empty on failure).
    pub path_authors: Vec<NodeId>,
    pub distinct: usize,
    /// Messages the validator sent and received, initial retrieval excluded.
    pub messages: u64,
    pub retrieval_messages: u64,
    pub trusted_at_start: usize,
    pub trusted_steps: u64,
    pub timeouts: u64,
    pub rollbacks: u64,
    pub wait_slots: u64,
}

impl SessionRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub node_count: usize,
    pub slots: u32,
    /// Slot-major: entry `slot * node_count + node`.
    pub records: Vec<NodeSlot>,
    /// Network-wide blocks generated up to and including each slot.
    pub total_blocks: Vec<u64>,
    pub sessions: Vec<SessionRecord>,
    /// Successful sessions by slots spent waiting on timeouts.
    pub consensus_wait_histogram: BTreeMap<u64, u64>,
    /// Share of the validations run in a slot that failed (0 when none ran).
    pub failure_probability: Vec<f64>,
}

impl Metrics {
    pub fn new(node_count: usize) -> Metrics {
        Metrics { node_count, ..Default::default() }
    }

    pub fn record(&self, slot: u32, node: NodeId) -> &NodeSlot {
        &self.records[slot as usize * self.node_count + usize::from(node)]
    }

    pub fn slot_records(&self, slot: u32) -> &[NodeSlot] {
        let start = slot as usize * self.node_count;
        &self.records[start..start + self.node_count]
    }

    pub fn final_records(&self) -> &[NodeSlot] {
        if self.slots == 0 {
            &[]
        } else {
            self.slot_records(self.slots - 1)
        }
    }

    /// Mean over nodes of a per-node value at `slot`.
    pub fn mean_at(&self, slot: u32, f: impl Fn(&NodeSlot) -> u64) -> f64 {
        let recs = self.slot_records(slot);
        recs.iter().map(|r| f(r) as f64).sum::<f64>() / recs.len().max(1) as f64
    }

    /// True when every per-node counter is non-decreasing over slots.
    pub fn is_monotone(&self) -> bool {
        let n = self.node_count;
        self.records.iter().skip(n).zip(self.records.iter()).all(|(now, before)| {
            now.s_bits >= before.s_bits
                && now.h_bits >= before.h_bits
                && now.construct_bits >= before.construct_bits
                && now.consensus_bits >= before.consensus_bits
                && now.consensus_rx_bits >= before.consensus_rx_bits
                && now.retrieval_bits >= before.retrieval_bits
                && now.msgs_tx >= before.msgs_tx
                && now.msgs_rx >= before.msgs_rx
                && now.blocks >= before.blocks
                && now.validations_attempted >= before.validations_attempted
                && now.validations_succeeded >= before.validations_succeeded
                && now.validations_failed >= before.validations_failed
        })
    }
}
