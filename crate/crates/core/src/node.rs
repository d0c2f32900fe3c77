//! Per-node state: the local chain, the latest-digest table, the trusted
//! header cache and the digest exchange with neighbors.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{blacklist_update, Blacklist, BlacklistEvent};
use crate::block::{BlockHeader, BlockRef, Body, DataBlock, FieldSizes, NodeId};
use crate::crypto::{CryptoError, Difficulty, Digest256, KeyPair, KeyedDigest, SignatureScheme};

/// Protocol constants a node is configured with.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub version: u32,
    pub body_bits: u64,
    pub leaf_bits: u64,
    pub difficulty: Difficulty,
    pub sizes: FieldSizes,
    /// Blacklist counter assigned on misbehavior.
    pub blacklist_k: u32,
    /// Minimum slots between two digests from the same neighbor.
    pub min_digest_interval: u32,
    /// Storage capacity in accounting bits; `None` means unbounded.
    pub capacity_bits: Option<u64>,
}

impl Default for NodeParams {
    fn default() -> Self {
        NodeParams {
            version: 1,
            body_bits: 8 * 1024,
            leaf_bits: crate::crypto::DEFAULT_LEAF_BITS,
            difficulty: Difficulty::leading_zero_bits(8).expect("valid difficulty"),
            sizes: FieldSizes::default(),
            blacklist_k: 10,
            min_digest_interval: 1,
            capacity_bits: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NodeError {
    #[error("node {0} already has a genesis block")]
    GenesisExists(NodeId),
    #[error("node {0} has no genesis block yet")]
    GenesisMissing(NodeId),
    #[error("payload is {got} bits, expected {expected}")]
    BodySize { expected: u64, got: u64 },
    #[error("storing {needed} more bits exceeds capacity {capacity}")]
    CapacityExceeded { needed: u64, capacity: u64 },
    #[error("slot {slot} does not follow the previous block at slot {last}")]
    SlotNotIncreasing { slot: u32, last: u32 },
    #[error("block {0:?} is not stored here")]
    NotFound(BlockRef),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// A digest on its way to a neighbor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Announcement {
    pub from: NodeId,
    pub to: NodeId,
    pub digest: Digest256,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generated {
    pub reference: BlockRef,
    pub digest: Digest256,
    pub announcements: Vec<Announcement>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DigestOutcome {
    Accepted,
    NotNeighbor,
    /// Sender is blacklisted; the digest is dropped but counts as served.
    Blacklisted,
    /// Sender exceeded the digest rate and has been blacklisted.
    RateLimited,
}

/// A header another node vouched for during an earlier validation.
#[derive(Clone, Debug)]
pub struct TrustedHeader {
    pub author: NodeId,
    pub digest: Digest256,
    pub header: Arc<BlockHeader>,
}

/// Headers learned through successful validations, indexed by the parent
/// digests they contain.
#[derive(Clone, Debug, Default)]
pub struct TrustedHeaders {
    by_digest: HashMap<Digest256, TrustedHeader>,
    children: HashMap<Digest256, Vec<Digest256>>,
    bits: u64,
}

impl TrustedHeaders {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.by_digest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_digest.is_empty()
    }

    /// Accounting size of all cached headers.
    pub fn size_bits(&self) -> u64 {
        self.bits
    }

    pub fn contains(&self, d: &Digest256) -> bool {
        self.by_digest.contains_key(d)
    }

    pub fn get(&self, d: &Digest256) -> Option<&TrustedHeader> {
        self.by_digest.get(d)
    }

    /// Returns false when the header was already cached.
    pub fn insert(&mut self, entry: TrustedHeader, sizes: &FieldSizes) -> bool {
        if self.by_digest.contains_key(&entry.digest) {
            return false;
        }
        for (_, parent) in &entry.header.digests {
            self.children.entry(*parent).or_default().push(entry.digest);
        }
        self.bits += entry.header.size_bits(sizes);
        self.by_digest.insert(entry.digest, entry);
        true
    }

    /// Cached headers that contain `parent`.
    pub fn children_of<'a>(&'a self, parent: &Digest256) -> impl Iterator<Item = &'a TrustedHeader> + 'a {
        self.children
            .get(parent)
            .into_iter()
            .flatten()
            .filter_map(|d| self.by_digest.get(d))
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrustedHeader> {
        self.by_digest.values()
    }
}

#[derive(Clone, Debug)]
pub struct NodeState {
    pub id: NodeId,
    pub keys: KeyPair,
    neighbors: Vec<NodeId>,
    pub params: NodeParams,
    store: Vec<DataBlock>,
    /// Parent digest to the index of the oldest stored block containing it.
    child_index: HashMap<Digest256, usize>,
    latest: BTreeMap<NodeId, Digest256>,
    pub trusted: TrustedHeaders,
    pub blacklist: Blacklist,
    last_digest_slot: HashMap<NodeId, u32>,
    stored_bits: u64,
}

impl NodeState {
    pub fn new(id: NodeId, neighbors: &[NodeId], params: NodeParams, key_seed: &[u8]) -> NodeState {
        let mut neighbors = neighbors.to_vec();
        neighbors.sort_unstable();
        neighbors.dedup();
        NodeState {
            id,
            keys: KeyedDigest.keypair_from_seed(key_seed),
            neighbors,
            params,
            store: Vec::new(),
            child_index: HashMap::new(),
            latest: BTreeMap::new(),
            trusted: TrustedHeaders::new(),
            blacklist: Blacklist::new(params.blacklist_k),
            last_digest_slot: HashMap::new(),
            stored_bits: 0,
        }
    }

    pub fn neighbors(&self) -> &[NodeId] {
        &self.neighbors
    }

    pub fn is_neighbor(&self, v: NodeId) -> bool {
        self.neighbors.binary_search(&v).is_ok()
    }

    pub fn blocks(&self) -> &[DataBlock] {
        &self.store
    }

    /// Accounting size of the local chain.
    pub fn stored_bits(&self) -> u64 {
        self.stored_bits
    }

    /// The latest digest known per origin, own chain included.
    pub fn latest_digests(&self) -> &BTreeMap<NodeId, Digest256> {
        &self.latest
    }

    pub fn last_block(&self) -> Option<&DataBlock> {
        self.store.last()
    }

    /// Creates the first block of the chain. It carries no digests.
    pub fn init_genesis(&mut self, payload: Body, slot: u32) -> Result<Generated, NodeError> {
        if !self.store.is_empty() {
            return Err(NodeError::GenesisExists(self.id));
        }
        self.append(payload, slot, Vec::new())
    }

    /// Seals a new block over the current latest-digest table and queues its
    /// digest for every neighbor.
    pub fn generate_block(&mut self, payload: Body, slot: u32) -> Result<Generated, NodeError> {
        let last = self.store.last().ok_or(NodeError::GenesisMissing(self.id))?;
        if slot <= last.header().time {
            return Err(NodeError::SlotNotIncreasing { slot, last: last.header().time });
        }
        let digests: Vec<_> = self.latest.iter().map(|(k, v)| (*k, *v)).collect();
        self.append(payload, slot, digests)
    }

    fn append(
        &mut self,
        mut payload: Body,
        slot: u32,
        digests: Vec<(NodeId, Digest256)>,
    ) -> Result<Generated, NodeError> {
        let p = self.params;
        if payload.len_bits() != p.body_bits {
            return Err(NodeError::BodySize { expected: p.body_bits, got: payload.len_bits() });
        }
        let size = p.sizes.block_bits(digests.len(), p.body_bits);
        if let Some(cap) = p.capacity_bits {
            if self.stored_bits + size > cap {
                return Err(NodeError::CapacityExceeded { needed: size, capacity: cap });
            }
        }
        let root = payload.warm_root(p.leaf_bits)?;
        let header =
            BlockHeader::seal(p.version, slot, root, digests, &p.difficulty, &self.keys.secret)?;
        let reference = BlockRef::new(self.id, slot);
        let block = DataBlock::new(reference, header, payload);
        let digest = block.digest();
        let idx = self.store.len();
        for (_, parent) in &block.header().digests {
            self.child_index.entry(*parent).or_insert(idx);
        }
        self.store.push(block);
        self.stored_bits += size;
        self.latest.insert(self.id, digest);
        let announcements = self
            .neighbors
            .iter()
            .map(|&to| Announcement { from: self.id, to, digest })
            .collect();
        Ok(Generated { reference, digest, announcements })
    }

    /// Handles a digest announced by `from` at `slot`.
    pub fn on_digest(&mut self, from: NodeId, digest: Digest256, slot: u32) -> DigestOutcome {
        if !self.is_neighbor(from) {
            return DigestOutcome::NotNeighbor;
        }
        if self.blacklist.is_blacklisted(from) {
            blacklist_update(&mut self.blacklist, from, BlacklistEvent::ServedBlock);
            return DigestOutcome::Blacklisted;
        }
        if let Some(&prev) = self.last_digest_slot.get(&from) {
            if slot.saturating_sub(prev) < self.params.min_digest_interval {
                blacklist_update(&mut self.blacklist, from, BlacklistEvent::RateViolation);
                return DigestOutcome::RateLimited;
            }
        }
        self.last_digest_slot.insert(from, slot);
        self.latest.insert(from, digest);
        DigestOutcome::Accepted
    }

    /// Oldest stored block whose header contains `parent`.
    pub fn respond_child(&self, parent: &Digest256) -> Option<&DataBlock> {
        self.child_index.get(parent).map(|&i| &self.store[i])
    }

    /// Like [`respond_child`](Self::respond_child) but only sees blocks
    /// generated before `horizon`.
    pub fn respond_child_before(&self, parent: &Digest256, horizon: u32) -> Option<&DataBlock> {
        self.respond_child(parent).filter(|b| b.header().time < horizon)
    }

    pub fn retrieve_block(&self, r: BlockRef) -> Result<&DataBlock, NodeError> {
        if r.node != self.id {
            return Err(NodeError::NotFound(r));
        }
        self.store
            .binary_search_by_key(&r.seq, |b| b.reference.seq)
            .map(|i| &self.store[i])
            .map_err(|_| NodeError::NotFound(r))
    }

    pub(crate) fn block_mut(&mut self, r: BlockRef) -> Result<&mut DataBlock, NodeError> {
        let i = self
            .store
            .binary_search_by_key(&r.seq, |b| b.reference.seq)
            .map_err(|_| NodeError::NotFound(r))?;
        Ok(&mut self.store[i])
    }

    /// Recomputes the child index after stored headers changed.
    pub(crate) fn rebuild_child_index(&mut self) {
        self.child_index.clear();
        for (i, b) in self.store.iter().enumerate() {
            for (_, parent) in &b.header().digests {
                self.child_index.entry(*parent).or_insert(i);
            }
        }
    }

    /// Caches headers vouched for by a successful validation. Own headers
    /// are skipped since the chain already holds them.
    pub fn absorb_trusted(&mut self, entries: impl IntoIterator<Item = TrustedHeader>) {
        let sizes = self.params.sizes;
        for e in entries {
            if e.author != self.id {
                self.trusted.insert(e, &sizes);
            }
        }
    }
}
