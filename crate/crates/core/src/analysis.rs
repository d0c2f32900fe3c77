//! Closed-form storage and message bounds, the logical DAG over all stored
//! blocks, and cost models for fully replicated baselines.
//!
//! Rates are expressed in blocks per slot, with the body size `C` kept as a
//! separate factor. A rate given in bits per second converts as
//! `blocks_per_slot = bits_per_second * slot_seconds / C`.

use std::collections::HashMap;

use num_rational::Ratio;
use num_traits::Zero;
use petgraph::graphmap::DiGraphMap;
use petgraph::visit::{Bfs, Walker};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{BlockRef, DataBlock, FieldSizes, NodeId};

/// Exact rational used by every bound.
pub type Exact = Ratio<u128>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("rates must be positive")]
    NonPositiveRate,
    #[error("the loop set must be a non-empty strict subset of the nodes")]
    BadLoopSet,
    #[error("node {0} is not part of the rate profile")]
    UnknownNode(NodeId),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RateProfile {
    /// Blocks per slot, indexed by node id.
    pub rates: Vec<Exact>,
    pub body_bits: u64,
    pub sizes: FieldSizes,
}

impl RateProfile {
    pub fn new(rates: Vec<Exact>, body_bits: u64) -> Result<RateProfile, AnalysisError> {
        if rates.iter().any(|r| r.is_zero()) {
            return Err(AnalysisError::NonPositiveRate);
        }
        Ok(RateProfile { rates, body_bits, sizes: FieldSizes::default() })
    }

    /// Node `i` produces one block every `slots_per_block[i]` slots.
    pub fn from_slots_per_block(slots_per_block: &[u32], body_bits: u64) -> Result<RateProfile, AnalysisError> {
        if slots_per_block.contains(&0) {
            return Err(AnalysisError::NonPositiveRate);
        }
        let rates = slots_per_block.iter().map(|&k| Exact::new(1, u128::from(k))).collect();
        RateProfile::new(rates, body_bits)
    }

    /// Converts bit rates (bits per second) into blocks per slot.
    pub fn from_bit_rates(bits_per_second: &[u64], slot_seconds: u64, body_bits: u64) -> Result<RateProfile, AnalysisError> {
        let rates = bits_per_second
            .iter()
            .map(|&b| Exact::new(u128::from(b) * u128::from(slot_seconds), u128::from(body_bits)))
            .collect();
        RateProfile::new(rates, body_bits)
    }

    pub fn node_count(&self) -> usize {
        self.rates.len()
    }

    fn rate(&self, i: NodeId) -> Result<Exact, AnalysisError> {
        self.rates.get(usize::from(i)).copied().ok_or(AnalysisError::UnknownNode(i))
    }

    /// Worst-case header size: fixed part plus one digest per node.
    fn max_header_bits(&self) -> u128 {
        u128::from(self.sizes.fixed()) + u128::from(self.sizes.hash) * self.node_count() as u128
    }
}

/// Total blocks generated network-wide after `t` slots.
pub fn prop1_total_blocks(t: u64, rates: &RateProfile) -> u64 {
    rates.rates.iter().map(|r| (Exact::from(u128::from(t)) * r).floor().to_integer() as u64).sum()
}

/// Upper bound on the trusted header cache of node `i` after `t` slots.
pub fn prop2_header_cache_bound(t: u64, rates: &RateProfile, i: NodeId) -> Result<Exact, AnalysisError> {
    let own = rates.rate(i)?;
    let others: Exact = rates.rates.iter().copied().sum::<Exact>() - own;
    Ok(Exact::from(u128::from(t) * rates.max_header_bits()) * others)
}

/// Upper bound on the total storage (chain plus trusted cache) of node `i`.
pub fn prop3_storage_bound(t: u64, rates: &RateProfile, i: NodeId) -> Result<Exact, AnalysisError> {
    let own = rates.rate(i)?;
    let all: Exact = rates.rates.iter().copied().sum();
    let t = u128::from(t);
    Ok(Exact::from(t * u128::from(rates.body_bits)) * own + Exact::from(t * rates.max_header_bits()) * all)
}

/// Fewest messages a validator with no cached headers exchanges to
/// collect `gamma + 1` authors.
pub fn prop4_message_floor(gamma: usize) -> u64 {
    2 * (gamma as u64 + 1)
}

/// Most blocks a micro-loop over the nodes in `m` can contain.
pub fn prop5_microloop_bound(m: &[NodeId], rates: &RateProfile) -> Result<u64, AnalysisError> {
    let n = rates.node_count();
    let mut inside = vec![false; n];
    for &v in m {
        *inside.get_mut(usize::from(v)).ok_or(AnalysisError::UnknownNode(v))? = true;
    }
    let outside_min = rates
        .rates
        .iter()
        .enumerate()
        .filter(|(j, _)| !inside[*j])
        .map(|(_, r)| *r)
        .min();
    let Some(min) = outside_min.filter(|_| inside.iter().any(|x| *x)) else {
        return Err(AnalysisError::BadLoopSet);
    };
    Ok(inside
        .iter()
        .enumerate()
        .filter(|(_, x)| **x)
        .map(|(i, _)| (rates.rates[i] / min).floor().to_integer() as u64)
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prop6 {
    Bound(Exact),
    /// The `gamma`-th and `(gamma+1)`-th fastest rates are equal, so the
    /// bound's assumption does not hold.
    Inapplicable,
}

/// Upper bound on a validator's messages over a full session.
pub fn prop6_message_ceiling(rates: &RateProfile, gamma: usize) -> Prop6 {
    let mut sorted = rates.rates.clone();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let n = sorted.len();
    if n == 0 || gamma + 1 > n {
        return Prop6::Inapplicable;
    }
    if gamma >= 1 && sorted[gamma - 1] <= sorted[gamma] {
        return Prop6::Inapplicable;
    }
    let slowest = sorted[n - 1];
    let skew: Exact = sorted[..gamma].iter().map(|r| r / slowest).sum();
    let g = gamma as u128;
    Prop6::Bound(Exact::from(n as u128 + g) * (skew + Exact::from(g + 1)))
}

pub fn exact_to_f64(x: &Exact) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

/// Graph over all stored blocks; an edge runs from a block to every block
/// whose header lists its digest.
#[derive(Clone, Debug, Default)]
pub struct LogicalDag {
    pub graph: DiGraphMap<BlockRef, ()>,
}

impl LogicalDag {
    pub fn vertex_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    pub fn has_edge(&self, parent: BlockRef, child: BlockRef) -> bool {
        self.graph.contains_edge(parent, child)
    }

    pub fn is_acyclic(&self) -> bool {
        petgraph::algo::toposort(&self.graph, None).is_ok()
    }

    /// Blocks reachable from `x` by at least one edge.
    pub fn descendants(&self, x: BlockRef) -> Vec<BlockRef> {
        if !self.graph.contains_node(x) {
            return Vec::new();
        }
        Bfs::new(&self.graph, x).iter(&self.graph).filter(|b| *b != x).collect()
    }

    /// True when node `i` stores a descendant of `x`.
    pub fn points_to(&self, i: NodeId, x: BlockRef) -> bool {
        self.descendants(x).iter().any(|b| b.node == i)
    }
}

pub fn build_logical_dag<'a>(blocks: impl IntoIterator<Item = &'a DataBlock>) -> LogicalDag {
    let blocks: Vec<&DataBlock> = blocks.into_iter().collect();
    let mut graph = DiGraphMap::new();
    let mut by_digest = HashMap::with_capacity(blocks.len());
    for b in &blocks {
        graph.add_node(b.reference);
        by_digest.insert(b.digest(), b.reference);
    }
    for b in &blocks {
        for (_, d) in &b.header().digests {
            if let Some(&parent) = by_digest.get(d) {
                graph.add_edge(parent, b.reference, ());
            }
        }
    }
    LogicalDag { graph }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineModel {
    /// Leader-based replication with three-phase voting.
    Pbft,
    /// Tangle in which every transaction is flooded to all nodes.
    Iota,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineCost {
    pub storage_bits: f64,
    pub communication_bits: f64,
}

/// Size of one baseline block: the fixed header, its parent references and
/// the body. PBFT chains reference one parent, tangle transactions approve
/// two.
pub fn baseline_block_bits(model: BaselineModel, body_bits: u64, sizes: &FieldSizes) -> u64 {
    let parents = match model {
        BaselineModel::Pbft => 1,
        BaselineModel::Iota => 2,
    };
    sizes.fixed() + parents * sizes.hash + body_bits
}

/// Per-node storage and transmitted bits of a baseline after `t` slots.
///
/// Both baselines replicate every block on every node. PBFT additionally
/// sends the block from the leader to the other `|V|-1` nodes and runs
/// `2|V|^2` vote messages of one fixed header each; the tangle forwards
/// each block once per spanning-tree edge. Transmissions are averaged over
/// the nodes.
pub fn baseline_costs(model: BaselineModel, t: u64, rates: &RateProfile) -> BaselineCost {
    let n = rates.node_count() as f64;
    let blocks = prop1_total_blocks(t, rates) as f64;
    let block = baseline_block_bits(model, rates.body_bits, &rates.sizes) as f64;
    let per_block_tx = match model {
        BaselineModel::Pbft => (n - 1.0) * block + 2.0 * n * n * rates.sizes.fixed() as f64,
        BaselineModel::Iota => (n - 1.0) * block,
    };
    BaselineCost {
        storage_bits: blocks * block,
        communication_bits: if n > 0.0 { blocks * per_block_tx / n } else { 0.0 },
    }
}
