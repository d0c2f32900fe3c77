//! Proof-of-Path validation.
//!
//! A validator checks a target block by growing a path of descendant
//! blocks, one child per step, until the path's blocks are authored by at
//! least `gamma + 1` distinct nodes. Children come for free from the trusted
//! header cache when possible (trust path selection) and otherwise from
//! child requests to the verifying block's neighbors, ordered by weighted
//! path selection.
//!
//! The search is a complete depth-first search over the replies: every
//! level remembers which responders it already tried, dead ends roll back one
//! level, and states proven hopeless are memoized, so a session fails only
//! when no qualifying path is reachable (or its work budget runs out).

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use num_rational::Ratio;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{BlacklistEvent, Blacklist};
use crate::block::{BlockHeader, BlockRef, DataBlock, FieldSizes, NodeId};
use crate::crypto::{Digest256, PublicKey};
use crate::node::{NodeState, TrustedHeader, TrustedHeaders};
use crate::nodeset::NodeSet;
use crate::topology::Topology;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageKind {
    DigestAnnounce = 0,
    ReqChild = 1,
    RpyChild = 2,
    NoChild = 3,
}

impl MessageKind {
    fn from_u8(b: u8) -> Option<MessageKind> {
        Some(match b {
            0 => MessageKind::DigestAnnounce,
            1 => MessageKind::ReqChild,
            2 => MessageKind::RpyChild,
            3 => MessageKind::NoChild,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("message shorter than its 13-byte envelope")]
    Truncated,
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("{kind:?} payload must be 32 bytes, got {len}")]
    BadPayload { kind: MessageKind, len: usize },
}

/// Protocol message. Wire form: `kind u8 | src u16 | dst u16 | nonce u64 |
/// payload`. Digest-carrying kinds hold a 32-byte digest; `RpyChild` holds
/// an encoded header. The nonce pairs a reply with its request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PopMessage {
    pub kind: MessageKind,
    pub src: NodeId,
    pub dst: NodeId,
    pub nonce: u64,
    pub payload: Vec<u8>,
}

impl PopMessage {
    pub fn digest_message(kind: MessageKind, src: NodeId, dst: NodeId, nonce: u64, d: &Digest256) -> Self {
        PopMessage { kind, src, dst, nonce, payload: d.0.to_vec() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.payload.len());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.src.to_be_bytes());
        out.extend_from_slice(&self.dst.to_be_bytes());
        out.extend_from_slice(&self.nonce.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<PopMessage, WireError> {
        if bytes.len() < 13 {
            return Err(WireError::Truncated);
        }
        let kind = MessageKind::from_u8(bytes[0]).ok_or(WireError::UnknownKind(bytes[0]))?;
        let src = u16::from_be_bytes([bytes[1], bytes[2]]);
        let dst = u16::from_be_bytes([bytes[3], bytes[4]]);
        let nonce = u64::from_be_bytes(bytes[5..13].try_into().expect("8 bytes"));
        let payload = bytes[13..].to_vec();
        if kind != MessageKind::RpyChild && payload.len() != 32 {
            return Err(WireError::BadPayload { kind, len: payload.len() });
        }
        Ok(PopMessage { kind, src, dst, nonce, payload })
    }

    /// The digest carried by non-reply kinds.
    pub fn digest(&self) -> Option<Digest256> {
        <[u8; 32]>::try_from(self.payload.as_slice()).ok().map(Digest256)
    }

    /// Accounting size: one hash for digest-carrying kinds, the header's
    /// accounting size for replies. Envelope bytes are not counted.
    pub fn accounting_bits(&self, sizes: &FieldSizes) -> u64 {
        match self.kind {
            MessageKind::RpyChild => {
                let entries = self.payload.len().saturating_sub(78) / 34;
                sizes.header_bits(entries)
            }
            _ => sizes.hash,
        }
    }
}

/// What an honest node answers to a child request: the header of its oldest
/// block (generated before `horizon`) that contains the requested digest,
/// or an explicit "no child".
pub fn honest_reply(node: &NodeState, request: &PopMessage, horizon: u32) -> Option<PopMessage> {
    if request.kind != MessageKind::ReqChild || request.dst != node.id {
        return None;
    }
    let parent = request.digest()?;
    Some(match node.respond_child_before(&parent, horizon) {
        Some(child) => PopMessage {
            kind: MessageKind::RpyChild,
            src: node.id,
            dst: request.src,
            nonce: request.nonce,
            payload: child.header().encode(),
        },
        None => PopMessage::digest_message(MessageKind::NoChild, node.id, request.src, request.nonce, &parent),
    })
}

/// The validator's view of the network during one session.
pub trait PopNetwork {
    fn topology(&self) -> &Topology;
    fn public_key(&self, v: NodeId) -> Option<PublicKey>;
    /// Blocks generated at or after this slot are invisible.
    fn horizon(&self) -> u32;
    /// Fetches a full block from its author.
    fn retrieve(&self, r: BlockRef) -> Option<&DataBlock>;
    /// Delivers a request and returns the reply, or `None` on timeout.
    fn exchange(&self, request: &PopMessage, rng: &mut ChaCha8Rng) -> Option<PopMessage>;
}

/// Share of `v`'s closed neighborhood already counted in `r`:
/// `|R ∩ N[v]| / (|N(v)| + 1)`.
pub fn node_weight(v: NodeId, r: &NodeSet, topology: &Topology) -> Ratio<u64> {
    let nbrs = topology.neighbors(v);
    let hits = nbrs.iter().filter(|u| r.contains(**u)).count() + usize::from(r.contains(v));
    Ratio::new(hits as u64, nbrs.len() as u64 + 1)
}

/// Weighted path selection: among `candidates`, take those of minimum
/// weight; prefer ones not yet in `r` and break remaining ties at random.
pub fn wps(r: &NodeSet, candidates: &[NodeId], topology: &Topology, rng: &mut impl Rng) -> Option<NodeId> {
    let weights: Vec<_> = candidates.iter().map(|&c| (c, node_weight(c, r, topology))).collect();
    let min = weights.iter().map(|w| w.1).min()?;
    let z: Vec<NodeId> = weights.iter().filter(|w| w.1 == min).map(|w| w.0).collect();
    let fresh: Vec<NodeId> = z.iter().copied().filter(|c| !r.contains(*c)).collect();
    let pool = if fresh.is_empty() { &z } else { &fresh };
    pool.choose(rng).copied()
}

/// Tunables of a validation session.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopSettings {
    /// Slots a validator waits before declaring a request unanswered.
    pub tau: u32,
    /// Maximum number of child lookups (network or cached) per session.
    pub query_budget: u32,
    /// Lower bound on the slot gap between a block and its child; zero
    /// disables the time-feasibility cut.
    pub min_hop_slots: u32,
    pub sizes: FieldSizes,
    pub leaf_bits: u64,
}

impl Default for PopSettings {
    fn default() -> Self {
        PopSettings {
            tau: 1,
            query_budget: 4096,
            min_hop_slots: 1,
            sizes: FieldSizes::default(),
            leaf_bits: crate::crypto::DEFAULT_LEAF_BITS,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ValidatorContext<'a> {
    pub validator: NodeId,
    pub trusted: &'a TrustedHeaders,
    pub blacklist: &'a Blacklist,
    pub settings: PopSettings,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationError {
    #[error("gamma + 1 exceeds the number of nodes")]
    GammaTooLarge,
    #[error("target block could not be retrieved")]
    RetrievalFailed,
    #[error("target body does not match its Merkle root")]
    MerkleMismatch,
    #[error("target header signature is invalid")]
    BadSignature,
    #[error("no path with enough distinct authors is reachable")]
    Exhausted,
    #[error("session work budget exhausted")]
    BudgetExhausted,
}

/// One block on the validator's path.
#[derive(Clone, Debug)]
pub struct PathStep {
    pub block: BlockRef,
    pub digest: Digest256,
    pub header: Arc<BlockHeader>,
    /// Came from the trusted cache rather than a request.
    pub trusted: bool,
    tried: NodeSet,
}

impl PathStep {
    fn new(block: BlockRef, digest: Digest256, header: Arc<BlockHeader>, trusted: bool) -> Self {
        PathStep { block, digest, header, trusted, tried: NodeSet::new() }
    }
}

/// Validator-side state of one validation.
#[derive(Clone, Debug)]
pub struct ValidatorSession {
    pub validator: NodeId,
    pub target: BlockRef,
    pub gamma: usize,
    pub path: Vec<PathStep>,
    /// Distinct authors on the path.
    pub r: NodeSet,
    multiplicity: HashMap<NodeId, u32>,
}

impl ValidatorSession {
    pub fn new(validator: NodeId, target: &DataBlock, gamma: usize) -> Self {
        let mut s = ValidatorSession {
            validator,
            target: target.reference,
            gamma,
            path: Vec::new(),
            r: NodeSet::new(),
            multiplicity: HashMap::new(),
        };
        s.push(PathStep::new(target.reference, target.digest(), target.header_arc(), false));
        s
    }

    pub fn verifying(&self) -> &PathStep {
        self.path.last().expect("path always holds the target")
    }

    fn push(&mut self, step: PathStep) {
        *self.multiplicity.entry(step.block.node).or_insert(0) += 1;
        self.r.insert(step.block.node);
        self.path.push(step);
    }

    fn pop(&mut self) -> PathStep {
        let step = self.path.pop().expect("non-empty path");
        let m = self.multiplicity.get_mut(&step.block.node).expect("counted author");
        *m -= 1;
        if *m == 0 {
            self.multiplicity.remove(&step.block.node);
            self.r.remove(step.block.node);
        }
        step
    }

    pub fn consensus_reached(&self) -> bool {
        consensus_reached(&self.r, self.gamma)
    }

    /// Each step's header records its predecessor's digest under the
    /// predecessor's author, and `r` is exactly the set of path authors.
    pub fn check_invariants(&self) -> bool {
        let linked = self.path.windows(2).all(|w| w[1].header.get_digest(w[0].block.node) == Some(w[0].digest));
        let authors: NodeSet = self.path.iter().map(|s| s.block.node).collect();
        linked && authors == self.r
    }

    /// Trusted child of the verifying block not yet tried at this level.
    fn next_trusted(&self, trusted: &TrustedHeaders) -> Option<TrustedHeader> {
        let top = self.verifying();
        trusted
            .children_of(&top.digest)
            .filter(|t| !top.tried.contains(t.author))
            .filter(|t| t.header.get_digest(top.block.node) == Some(top.digest))
            .min_by_key(|t| (t.header.time, t.author))
            .cloned()
    }

    fn push_trusted(&mut self, t: TrustedHeader) {
        self.path.last_mut().expect("non-empty").tried.insert(t.author);
        let r = BlockRef::new(t.author, t.header.time);
        self.push(PathStep::new(r, t.digest, t.header, true));
    }
}

/// Trust path selection: extends the path with cached children while any
/// exist and consensus is not yet reached. Returns how many steps it added.
pub fn tps(session: &mut ValidatorSession, trusted: &TrustedHeaders) -> usize {
    let mut added = 0;
    while !session.consensus_reached() {
        match session.next_trusted(trusted) {
            Some(t) => {
                session.push_trusted(t);
                added += 1;
            }
            None => break,
        }
    }
    added
}

pub fn consensus_reached(r: &NodeSet, gamma: usize) -> bool {
    r.len() > gamma
}

/// Bits and message counts attributed to one node by a session.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traffic {
    pub tx_bits: u64,
    pub rx_bits: u64,
    pub tx_msgs: u64,
    pub rx_msgs: u64,
    /// Full-block transfer for the initial retrieval, kept apart.
    pub retrieval_tx_bits: u64,
    pub retrieval_rx_bits: u64,
    pub retrieval_msgs: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    /// Child requests sent by the validator.
    pub requests: u64,
    /// Replies (child or no-child) received by the validator.
    pub replies: u64,
    pub retrieval_messages: u64,
    pub cache_hits: u64,
    pub timeouts: u64,
    pub rejected_replies: u64,
    pub rollbacks: u64,
    pub trusted_steps: u64,
    pub memo_skips: u64,
    pub wait_slots: u64,
}

impl SessionStats {
    /// Messages the validator sent or received, initial retrieval excluded.
    pub fn messages(&self) -> u64 {
        self.requests + self.replies
    }

    pub fn messages_with_retrieval(&self) -> u64 {
        self.messages() + self.retrieval_messages
    }
}

#[derive(Clone, Debug)]
pub struct ConsensusPath {
    pub steps: Vec<PathStep>,
    pub authors: NodeSet,
}

impl ConsensusPath {
    pub fn blocks(&self) -> Vec<BlockRef> {
        self.steps.iter().map(|s| s.block).collect()
    }

    /// Headers to add to the validator's trusted cache.
    pub fn trusted_headers(&self) -> Vec<TrustedHeader> {
        self.steps
            .iter()
            .map(|s| TrustedHeader { author: s.block.node, digest: s.digest, header: Arc::clone(&s.header) })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SessionReport {
    pub validator: NodeId,
    pub target: BlockRef,
    pub gamma: usize,
    pub outcome: Result<ConsensusPath, ValidationError>,
    pub stats: SessionStats,
    pub trusted_at_start: usize,
    /// Per-node traffic caused by this session, sorted by node.
    pub traffic: Vec<(NodeId, Traffic)>,
    pub blacklist_events: Vec<(NodeId, BlacklistEvent)>,
}

impl SessionReport {
    pub fn succeeded(&self) -> bool {
        self.outcome.is_ok()
    }
}

/// Cached answer of one responder for one parent digest.
#[derive(Clone)]
enum Answer {
    Child(PathStep),
    Nothing,
}

struct Search<'a, N: PopNetwork> {
    net: &'a N,
    ctx: ValidatorContext<'a>,
    session: ValidatorSession,
    stats: SessionStats,
    traffic: BTreeMap<NodeId, Traffic>,
    events: Vec<(NodeId, BlacklistEvent)>,
    banned: NodeSet,
    answers: HashMap<(Digest256, NodeId), Answer>,
    dead: HashMap<Digest256, Vec<NodeSet>>,
    work: u32,
    next_nonce: u64,
}

/// Runs one validation of `target` with threshold `gamma`.
pub fn validate<N: PopNetwork>(
    net: &N,
    ctx: ValidatorContext<'_>,
    target: BlockRef,
    gamma: usize,
    tiebreak: &mut ChaCha8Rng,
    adversary: &mut ChaCha8Rng,
) -> SessionReport {
    let mut traffic: BTreeMap<NodeId, Traffic> = BTreeMap::new();
    let mut stats = SessionStats::default();
    let fail = |e, stats, traffic: BTreeMap<NodeId, Traffic>| SessionReport {
        validator: ctx.validator,
        target,
        gamma,
        outcome: Err(e),
        stats,
        trusted_at_start: ctx.trusted.len(),
        traffic: traffic.into_iter().collect(),
        blacklist_events: Vec::new(),
    };
    if gamma + 1 > net.topology().node_count() {
        return fail(ValidationError::GammaTooLarge, stats, traffic);
    }

    // Initial retrieval: one request to the author and the full block back.
    let sizes = ctx.settings.sizes;
    stats.retrieval_messages += 1;
    traffic.entry(ctx.validator).or_default().retrieval_tx_bits += sizes.hash;
    traffic.entry(ctx.validator).or_default().retrieval_msgs += 1;
    let Some(block) = net.retrieve(target).filter(|b| b.reference.seq < net.horizon()) else {
        return fail(ValidationError::RetrievalFailed, stats, traffic);
    };
    stats.retrieval_messages += 1;
    let block_bits = block.size_bits(&sizes);
    traffic.entry(target.node).or_default().retrieval_tx_bits += block_bits;
    traffic.entry(target.node).or_default().retrieval_msgs += 1;
    traffic.entry(ctx.validator).or_default().retrieval_rx_bits += block_bits;

    match block.body.merkle_root(ctx.settings.leaf_bits) {
        Ok(root) if root == block.header().merkle_root => {}
        _ => return fail(ValidationError::MerkleMismatch, stats, traffic),
    }
    let signed = net.public_key(target.node).is_some_and(|pk| block.header().verify_signature(&pk));
    if !signed {
        return fail(ValidationError::BadSignature, stats, traffic);
    }

    let mut banned = NodeSet::new();
    for v in ctx.blacklist.blacklisted() {
        banned.insert(v);
    }
    let mut search = Search {
        net,
        ctx,
        session: ValidatorSession::new(ctx.validator, block, gamma),
        stats,
        traffic,
        events: Vec::new(),
        banned,
        answers: HashMap::new(),
        dead: HashMap::new(),
        work: 0,
        next_nonce: 0,
    };
    let outcome = search.run(tiebreak, adversary);
    SessionReport {
        validator: ctx.validator,
        target,
        gamma,
        outcome,
        stats: search.stats,
        trusted_at_start: ctx.trusted.len(),
        traffic: search.traffic.into_iter().collect(),
        blacklist_events: search.events,
    }
}

impl<N: PopNetwork> Search<'_, N> {
    fn run(&mut self, tiebreak: &mut ChaCha8Rng, adversary: &mut ChaCha8Rng) -> Result<ConsensusPath, ValidationError> {
        let topology = self.net.topology();
        let horizon = self.net.horizon();
        loop {
            if self.session.consensus_reached() {
                return Ok(ConsensusPath { steps: self.session.path.clone(), authors: self.session.r.clone() });
            }
            if self.work >= self.ctx.settings.query_budget {
                return Err(ValidationError::BudgetExhausted);
            }
            if !self.time_feasible(horizon) {
                if !self.backtrack() {
                    return Err(ValidationError::Exhausted);
                }
                continue;
            }

            if let Some(t) = self.session.next_trusted(self.ctx.trusted) {
                let prospective = self.with_author(t.author);
                self.session.push_trusted(t);
                self.stats.trusted_steps += 1;
                if self.is_dead(&self.session.verifying().digest, &prospective) {
                    self.session.pop();
                    self.stats.memo_skips += 1;
                }
                continue;
            }

            let top = self.session.verifying();
            let candidates: Vec<NodeId> = topology
                .neighbors(top.block.node)
                .iter()
                .copied()
                .filter(|c| !top.tried.contains(*c) && !self.banned.contains(*c))
                .collect();
            let Some(j) = wps(&self.session.r, &candidates, topology, tiebreak) else {
                if !self.backtrack() {
                    return Err(ValidationError::Exhausted);
                }
                continue;
            };
            self.session.path.last_mut().expect("non-empty").tried.insert(j);
            self.work += 1;
            if let Answer::Child(step) = self.ask(j, horizon, adversary) {
                let prospective = self.with_author(j);
                if self.is_dead(&step.digest, &prospective) {
                    self.stats.memo_skips += 1;
                } else {
                    self.session.push(step);
                }
            }
        }
    }

    fn with_author(&self, a: NodeId) -> NodeSet {
        let mut r = self.session.r.clone();
        r.insert(a);
        r
    }

    fn is_dead(&self, d: &Digest256, r: &NodeSet) -> bool {
        self.dead.get(d).is_some_and(|sets| sets.iter().any(|f| r.is_subset(f)))
    }

    /// A path needing `k` more authors needs `k` more hops, each at least
    /// `min_hop_slots` later than the previous one, before the horizon.
    fn time_feasible(&self, horizon: u32) -> bool {
        let hop = u64::from(self.ctx.settings.min_hop_slots);
        if hop == 0 {
            return true;
        }
        let needed = (self.session.gamma + 1).saturating_sub(self.session.r.len()) as u64;
        u64::from(self.session.verifying().header.time) + needed * hop < u64::from(horizon)
    }

    /// Abandons the verifying block. Returns false once the target itself
    /// is exhausted.
    fn backtrack(&mut self) -> bool {
        if self.session.path.len() == 1 {
            return false;
        }
        let r = self.session.r.clone();
        let step = self.session.pop();
        self.dead.entry(step.digest).or_default().push(r);
        self.stats.rollbacks += 1;
        true
    }

    /// Child of the verifying block according to responder `j`.
    fn ask(&mut self, j: NodeId, horizon: u32, adversary: &mut ChaCha8Rng) -> Answer {
        let top = self.session.verifying();
        let (parent, parent_author) = (top.digest, top.block.node);
        if let Some(a) = self.answers.get(&(parent, j)) {
            self.stats.cache_hits += 1;
            return a.clone();
        }
        let sizes = self.ctx.settings.sizes;
        let me = self.ctx.validator;
        let nonce = self.next_nonce;
        self.next_nonce += 1;
        let request = PopMessage::digest_message(MessageKind::ReqChild, me, j, nonce, &parent);
        let req_bits = request.accounting_bits(&sizes);
        self.stats.requests += 1;
        {
            let t = self.traffic.entry(me).or_default();
            t.tx_bits += req_bits;
            t.tx_msgs += 1;
        }
        {
            let t = self.traffic.entry(j).or_default();
            t.rx_bits += req_bits;
            t.rx_msgs += 1;
        }

        let answer = match self.net.exchange(&request, adversary) {
            None => {
                self.stats.timeouts += 1;
                self.stats.wait_slots += u64::from(self.ctx.settings.tau);
                self.banned.insert(j);
                self.events.push((j, BlacklistEvent::NoReply));
                Answer::Nothing
            }
            Some(reply) => {
                let bits = reply.accounting_bits(&sizes);
                self.stats.replies += 1;
                {
                    let t = self.traffic.entry(j).or_default();
                    t.tx_bits += bits;
                    t.tx_msgs += 1;
                }
                {
                    let t = self.traffic.entry(me).or_default();
                    t.rx_bits += bits;
                    t.rx_msgs += 1;
                }
                match self.check_reply(&reply, &request, parent, parent_author, j, horizon) {
                    Some(step) => Answer::Child(step),
                    None => {
                        if reply.kind != MessageKind::NoChild {
                            self.stats.rejected_replies += 1;
                        }
                        Answer::Nothing
                    }
                }
            }
        };
        self.answers.insert((parent, j), answer.clone());
        answer
    }

    /// Accepts a reply only if it is a correctly addressed child header that
    /// records `parent` under the parent's author and carries a valid
    /// signature of the responder.
    fn check_reply(
        &self,
        reply: &PopMessage,
        request: &PopMessage,
        parent: Digest256,
        parent_author: NodeId,
        j: NodeId,
        horizon: u32,
    ) -> Option<PathStep> {
        if reply.kind != MessageKind::RpyChild
            || reply.nonce != request.nonce
            || reply.src != j
            || reply.dst != request.src
        {
            return None;
        }
        let header = BlockHeader::decode(&reply.payload).ok()?;
        if header.get_digest(parent_author) != Some(parent) || header.time >= horizon {
            return None;
        }
        let pk = self.net.public_key(j)?;
        if !header.verify_signature(&pk) {
            return None;
        }
        let digest = header.digest();
        Some(PathStep::new(BlockRef::new(j, header.time), digest, Arc::new(header), false))
    }
}
