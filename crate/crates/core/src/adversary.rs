//! Misbehavior models, block tampering and the neighbor blacklist.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::block::{BlockRef, NodeId};
use crate::node::{NodeError, NodeState};
use crate::pop::{honest_reply, MessageKind, PopMessage};

/// How a node answers child requests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BehaviorProfile {
    Honest,
    /// Never answers.
    SilentMalicious,
    /// Answers with a header carrying `flips` random bit flips.
    CorruptingMalicious { flips: u32 },
    /// Answers honestly with probability `reply_prob`, otherwise stays silent.
    Selfish { reply_prob: f64 },
}

impl BehaviorProfile {
    pub fn is_honest(&self) -> bool {
        matches!(self, BehaviorProfile::Honest)
    }
}

/// Reply `responder` sends for `request`, or `None` for silence. Only blocks
/// generated before `horizon` are visible.
pub fn apply_behavior(
    profile: BehaviorProfile,
    request: &PopMessage,
    responder: &NodeState,
    horizon: u32,
    rng: &mut impl Rng,
) -> Option<PopMessage> {
    match profile {
        BehaviorProfile::Honest => honest_reply(responder, request, horizon),
        BehaviorProfile::SilentMalicious => None,
        BehaviorProfile::Selfish { reply_prob } => {
            if rng.random_bool(reply_prob.clamp(0.0, 1.0)) {
                honest_reply(responder, request, horizon)
            } else {
                None
            }
        }
        BehaviorProfile::CorruptingMalicious { flips } => {
            if request.kind != MessageKind::ReqChild {
                return None;
            }
            let honest = honest_reply(responder, request, horizon)?;
            // With no child to offer, pass off the latest own header instead.
            let mut bytes = if honest.kind == MessageKind::RpyChild {
                honest.payload
            } else {
                responder
                    .blocks()
                    .iter()
                    .rev()
                    .find(|b| b.header().time < horizon)?
                    .header()
                    .encode()
            };
            let total = bytes.len() * 8;
            let n = (flips as usize).clamp(1, total);
            for bit in sample(rng, total, n) {
                bytes[bit / 8] ^= 0x80 >> (bit % 8);
            }
            Some(PopMessage {
                kind: MessageKind::RpyChild,
                src: request.dst,
                dst: request.src,
                nonce: request.nonce,
                payload: bytes,
            })
        }
    }
}

/// Header field widths in the order bits are numbered by [`tamper_block`].
fn header_fields(entries: usize) -> Vec<u64> {
    let mut f = vec![32, 32, 256];
    for _ in 0..entries {
        f.push(16);
        f.push(256);
    }
    f.push(32);
    f.push(256);
    f
}

/// Which bits of a stored block were flipped.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TamperReport {
    pub body_bits: Vec<u64>,
    pub header_bits: Vec<u64>,
}

/// Flips `flips` distinct bits chosen uniformly over the block's body and
/// header fields (the digest count is derived and not flippable). Digest
/// entries are re-sorted by origin afterwards; duplicate origins may result
/// and are kept.
pub fn tamper_block(
    node: &mut NodeState,
    r: BlockRef,
    flips: usize,
    rng: &mut impl Rng,
) -> Result<TamperReport, NodeError> {
    let block = node.block_mut(r)?;
    let body_bits = block.body.len_bits();
    let fields = header_fields(block.header().digests.len());
    let header_bits: u64 = fields.iter().sum();
    let total = (body_bits + header_bits) as usize;
    let mut report = TamperReport::default();
    for pos in sample(rng, total, flips.min(total)) {
        let pos = pos as u64;
        if pos < body_bits {
            block.body.flip_bit(pos);
            report.body_bits.push(pos);
        } else {
            report.header_bits.push(pos - body_bits);
        }
    }
    if !report.header_bits.is_empty() {
        let positions = report.header_bits.clone();
        block.modify_header(|h| {
            for p in positions {
                flip_header_bit(h, &fields, p);
            }
            h.digests.sort_by_key(|e| e.0);
        });
    }
    report.body_bits.sort_unstable();
    report.header_bits.sort_unstable();
    node.rebuild_child_index();
    Ok(report)
}

fn flip_header_bit(h: &mut crate::block::BlockHeader, fields: &[u64], mut bit: u64) {
    let mut field = 0;
    while bit >= fields[field] {
        bit -= fields[field];
        field += 1;
    }
    let entries = h.digests.len();
    let flip_bytes = |bytes: &mut [u8], bit: u64| bytes[(bit / 8) as usize] ^= 0x80 >> (bit % 8);
    match field {
        0 => h.version ^= 1 << (31 - bit),
        1 => h.time ^= 1 << (31 - bit),
        2 => flip_bytes(&mut h.merkle_root.0, bit),
        f if f < 3 + 2 * entries => {
            let e = (f - 3) / 2;
            if (f - 3) % 2 == 0 {
                h.digests[e].0 ^= 1 << (15 - bit);
            } else {
                flip_bytes(&mut h.digests[e].1 .0, bit);
            }
        }
        f if f == 3 + 2 * entries => h.nonce ^= 1 << (31 - bit),
        _ => flip_bytes(&mut h.signature.0, bit),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlacklistEvent {
    /// A request timed out.
    NoReply,
    /// Digests arrived faster than the allowed rate.
    RateViolation,
    /// The offender delivered a block or digest.
    ServedBlock,
}

/// Per-neighbor counters. A neighbor is blacklisted while its counter is
/// positive; every block it serves meanwhile counts it down.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blacklist {
    pub k: u32,
    counters: BTreeMap<NodeId, u32>,
}

impl Blacklist {
    pub fn new(k: u32) -> Blacklist {
        Blacklist { k, counters: BTreeMap::new() }
    }

    pub fn counter(&self, v: NodeId) -> u32 {
        self.counters.get(&v).copied().unwrap_or(0)
    }

    pub fn is_blacklisted(&self, v: NodeId) -> bool {
        self.counter(v) > 0
    }

    pub fn blacklisted(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.counters.keys().copied()
    }
}

pub fn blacklist_update(list: &mut Blacklist, v: NodeId, event: BlacklistEvent) {
    match event {
        BlacklistEvent::NoReply | BlacklistEvent::RateViolation => {
            if list.k > 0 {
                list.counters.insert(v, list.k);
            }
        }
        BlacklistEvent::ServedBlock => {
            if let Some(c) = list.counters.get_mut(&v) {
                *c -= 1;
                if *c == 0 {
                    list.counters.remove(&v);
                }
            }
        }
    }
}
