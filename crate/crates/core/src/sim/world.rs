use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{apply_behavior, blacklist_update, BehaviorProfile, BlacklistEvent};
use crate::block::{BlockRef, Body, DataBlock, NodeId};
use crate::crypto::{hash_concat, PublicKey};
use crate::node::{Announcement, DigestOutcome, Generated, NodeError, NodeParams, NodeState};
use crate::pop::{validate, PopMessage, PopNetwork, PopSettings, SessionReport, ValidatorContext};
use crate::topology::Topology;

use super::config::{AdversaryMix, SimConfig};

/// Independent deterministic stream for one purpose, derived from the
/// master seed, a label and a tuple of indices.
pub fn substream(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut idx = Vec::with_capacity(indices.len() * 8);
    for i in indices {
        idx.extend_from_slice(&i.to_be_bytes());
    }
    let key = hash_concat(&[b"2ldag/rng/", &seed.to_be_bytes(), label.as_bytes(), b"/", &idx]);
    ChaCha8Rng::from_seed(key.0)
}

/// All nodes plus the static facts every node knows: topology, keys,
/// generation rates and (for the simulator only) misbehavior profiles.
#[derive(Clone, Debug)]
pub struct World {
    pub topology: Topology,
    pub nodes: Vec<NodeState>,
    pub profiles: Vec<BehaviorProfile>,
    pub slots_per_block: Vec<u32>,
    pub pop: PopSettings,
    pub seed: u64,
}

impl World {
    pub fn new(
        topology: Topology,
        slots_per_block: Vec<u32>,
        profiles: Vec<BehaviorProfile>,
        params: NodeParams,
        pop: PopSettings,
        seed: u64,
    ) -> World {
        let n = topology.node_count();
        assert_eq!(slots_per_block.len(), n);
        assert_eq!(profiles.len(), n);
        let nodes = topology
            .nodes()
            .map(|v| {
                let key_seed = [seed.to_be_bytes().as_slice(), &v.to_be_bytes()].concat();
                NodeState::new(v, topology.neighbors(v), params, &key_seed)
            })
            .collect();
        World { topology, nodes, profiles, slots_per_block, pop, seed }
    }

    /// Topology, rates and adversary placement drawn from the config's
    /// named streams.
    pub fn from_config(config: &SimConfig) -> World {
        let mut rng = substream(config.seed, "topology", &[]);
        let topology = Topology::random_geometric(config.node_count, config.area_side, config.range, &mut rng)
            .expect("config checked");
        let mut rng = substream(config.seed, "rates", &[]);
        let rates = (0..config.node_count).map(|_| rng.random_range(config.rate_min..=config.rate_max)).collect();
        let profiles = place_adversaries(config, config.malicious_count(), &mut substream(config.seed, "adversary", &[]));
        World::new(topology, rates, profiles, config.node_params(), config.pop_settings(), config.seed)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, v: NodeId) -> &NodeState {
        &self.nodes[usize::from(v)]
    }

    pub fn node_mut(&mut self, v: NodeId) -> &mut NodeState {
        &mut self.nodes[usize::from(v)]
    }

    /// A node with period `k` generates at slots `k-1, 2k-1, ...`, so it has
    /// produced exactly `floor(t/k)` blocks once `t` slots have elapsed.
    pub fn is_due(&self, v: NodeId, slot: u32) -> bool {
        (slot + 1).is_multiple_of(self.slots_per_block[usize::from(v)])
    }

    /// Generates one block at `v` (its genesis if the chain is empty).
    pub fn generate(&mut self, v: NodeId, slot: u32) -> Result<Generated, NodeError> {
        let node = &mut self.nodes[usize::from(v)];
        let payload = Body::synthetic(self.seed, v, slot, node.params.body_bits);
        if node.blocks().is_empty() {
            node.init_genesis(payload, slot)
        } else {
            node.generate_block(payload, slot)
        }
    }

    pub fn deliver(&mut self, a: &Announcement, slot: u32) -> DigestOutcome {
        self.nodes[usize::from(a.to)].on_digest(a.from, a.digest, slot)
    }

    pub fn block(&self, r: BlockRef) -> Option<&DataBlock> {
        self.nodes.get(usize::from(r.node))?.retrieve_block(r).ok()
    }

    /// Everything visible to a validator running during `slot`.
    pub fn view(&self, horizon: u32) -> WorldView<'_> {
        WorldView { world: self, horizon }
    }

    /// One validation by `validator` seeing blocks generated before
    /// `horizon`, with its own trusted cache and blacklist. Streams are
    /// keyed by `(horizon, validator, target)`.
    pub fn validate(&self, validator: NodeId, target: BlockRef, gamma: usize, horizon: u32) -> SessionReport {
        let v = self.node(validator);
        let ctx = ValidatorContext {
            validator,
            trusted: &v.trusted,
            blacklist: &v.blacklist,
            settings: self.pop,
        };
        let ids = [u64::from(horizon), u64::from(validator), u64::from(target.node), u64::from(target.seq)];
        let mut tiebreak = substream(self.seed, "tiebreak", &ids);
        let mut adversary = substream(self.seed, "adversary-replies", &ids);
        validate(&self.view(horizon), ctx, target, gamma, &mut tiebreak, &mut adversary)
    }

    /// Merges a finished session into the validator's state.
    pub fn absorb(&mut self, report: &SessionReport) {
        let node = &mut self.nodes[usize::from(report.validator)];
        if let Ok(path) = &report.outcome {
            node.absorb_trusted(path.trusted_headers());
            // The target's author delivered its block.
            if node.blacklist.is_blacklisted(report.target.node) {
                blacklist_update(&mut node.blacklist, report.target.node, BlacklistEvent::ServedBlock);
            }
        }
        for &(v, e) in &report.blacklist_events {
            blacklist_update(&mut node.blacklist, v, e);
        }
    }
}

/// Chooses `count` malicious nodes uniformly and assigns profiles.
pub fn place_adversaries(config: &SimConfig, count: usize, rng: &mut impl Rng) -> Vec<BehaviorProfile> {
    let mut profiles = vec![BehaviorProfile::Honest; config.node_count];
    let mut chosen: Vec<usize> = sample(rng, config.node_count, count.min(config.node_count)).into_vec();
    chosen.sort_unstable();
    for (k, i) in chosen.into_iter().enumerate() {
        profiles[i] = match config.adversary {
            AdversaryMix::Silent => BehaviorProfile::SilentMalicious,
            AdversaryMix::Corrupting => BehaviorProfile::CorruptingMalicious { flips: config.corruption_flips },
            AdversaryMix::Selfish => BehaviorProfile::Selfish { reply_prob: config.selfish_reply_prob },
            AdversaryMix::Mixed if k % 2 == 0 => BehaviorProfile::SilentMalicious,
            AdversaryMix::Mixed => BehaviorProfile::CorruptingMalicious { flips: config.corruption_flips },
        };
    }
    profiles
}

/// A world as seen at a given horizon: blocks generated at or after it do
/// not exist yet.
#[derive(Clone, Copy)]
pub struct WorldView<'a> {
    pub world: &'a World,
    pub horizon: u32,
}

impl PopNetwork for WorldView<'_> {
    fn topology(&self) -> &Topology {
        &self.world.topology
    }

    fn public_key(&self, v: NodeId) -> Option<PublicKey> {
        self.world.nodes.get(usize::from(v)).map(|n| n.keys.public)
    }

    fn horizon(&self) -> u32 {
        self.horizon
    }

    fn retrieve(&self, r: BlockRef) -> Option<&DataBlock> {
        self.world.block(r).filter(|b| b.reference.seq < self.horizon)
    }

    fn exchange(&self, request: &PopMessage, rng: &mut ChaCha8Rng) -> Option<PopMessage> {
        let dst = usize::from(request.dst);
        let node = self.world.nodes.get(dst)?;
        apply_behavior(self.world.profiles[dst], request, node, self.horizon, rng)
    }
}
