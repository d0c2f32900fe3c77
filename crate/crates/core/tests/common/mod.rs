//! Hand-scripted worlds shared by several test files.
#![allow(dead_code)]

use twoldag::adversary::BehaviorProfile;
use twoldag::block::{BlockRef, NodeId};
use twoldag::crypto::Difficulty;
use twoldag::node::{Announcement, NodeParams};
use twoldag::pop::PopSettings;
use twoldag::sim::World;
use twoldag::topology::Topology;

pub const A: NodeId = 0;
pub const B: NodeId = 1;
pub const C: NodeId = 2;
pub const D: NodeId = 3;
pub const E: NodeId = 4;

pub fn small_params() -> NodeParams {
    NodeParams {
        body_bits: 512,
        difficulty: Difficulty::leading_zero_bits(4).unwrap(),
        ..NodeParams::default()
    }
}

/// A world whose generation slots are dictated by the test rather than by
/// rates. Digests announced in one scripted slot arrive at the next.
pub struct Script {
    pub world: World,
    pending: Vec<Announcement>,
    last_slot: Option<u32>,
}

impl Script {
    pub fn new(topology: Topology) -> Script {
        let n = topology.node_count();
        let world = World::new(
            topology,
            vec![1; n],
            vec![BehaviorProfile::Honest; n],
            small_params(),
            PopSettings { leaf_bits: 1024, ..PopSettings::default() },
            7,
        );
        Script { world, pending: Vec::new(), last_slot: None }
    }

    /// Delivers everything announced earlier, then lets `nodes` generate.
    pub fn slot(&mut self, slot: u32, nodes: &[NodeId]) -> &mut Self {
        assert!(self.last_slot.is_none_or(|l| slot > l));
        for a in std::mem::take(&mut self.pending) {
            self.world.deliver(&a, slot);
        }
        for &v in nodes {
            let g = self.world.generate(v, slot).unwrap();
            self.pending.extend(g.announcements);
        }
        self.last_slot = Some(slot);
        self
    }

    pub fn block(&self, node: NodeId, slot: u32) -> BlockRef {
        let r = BlockRef::new(node, slot);
        assert!(self.world.block(r).is_some(), "{r:?} was not generated");
        r
    }
}

/// Five nodes: A-B, B-C, B-D, C-D, D-E. B, C, D form a triangle; A hangs
/// off B and E off D.
pub fn hub_topology() -> Topology {
    Topology::from_edges(5, &[(A, B), (B, C), (B, D), (C, D), (D, E)]).unwrap()
}

/// Hub topology with a scripted history in which D and A extend B's block
/// of slot 1, E extends D's block and C never does. Named blocks:
/// `b1 = (B,1)`, `d1 = (D,2)`, `e2 = (E,3)`, `a2 = (A,2)`, `b2 = (B,3)`,
/// `c2 = (C,4)`.
pub fn hub_world() -> Script {
    let mut s = Script::new(hub_topology());
    s.slot(0, &[A, B, C, D, E])
        .slot(1, &[A, B, C, E])
        .slot(2, &[A, D])
        .slot(3, &[B, E])
        .slot(4, &[C]);
    s
}

/// Four nodes: A-B, B-C, B-D, C-D. Scripted so that B's second block
/// carries the digests of A's, C's and D's second blocks, and two later
/// blocks of A both contain that block's digest.
pub fn star_world() -> Script {
    let t = Topology::from_edges(4, &[(A, B), (B, C), (B, D), (C, D)]).unwrap();
    let mut s = Script::new(t);
    s.slot(0, &[A, B, C, D])
        .slot(1, &[A, D])
        .slot(2, &[C])
        .slot(3, &[B])
        .slot(4, &[A])
        .slot(5, &[A]);
    s
}

/// Path graph 0-1-...-(n-1) where everyone generates every slot.
pub fn line_world(n: usize, slots: u32) -> Script {
    let edges: Vec<(NodeId, NodeId)> = (1..n as NodeId).map(|i| (i - 1, i)).collect();
    let mut s = Script::new(Topology::from_edges(n, &edges).unwrap());
    let all: Vec<NodeId> = (0..n as NodeId).collect();
    for slot in 0..slots {
        s.slot(slot, &all);
    }
    s
}

/// Independent reachability check straight from the node stores: is there a
/// chain of oldest-child replies from `target` that collects `gamma + 1`
/// distinct authors, using only responders not marked in `mute`?
pub fn path_exists(world: &World, target: BlockRef, gamma: usize, horizon: u32, mute: &[bool]) -> bool {
    use std::collections::HashSet;
    fn child(world: &World, j: NodeId, parent: BlockRef, horizon: u32) -> Option<BlockRef> {
        let pd = world.block(parent)?.header().digest();
        let first = world.nodes[usize::from(j)]
            .blocks()
            .iter()
            .find(|b| b.header().digests.iter().any(|(_, d)| *d == pd))?;
        let ok = first.header().time < horizon
            && first.header().digests.iter().any(|(o, d)| *o == parent.node && *d == pd);
        ok.then_some(first.reference)
    }
    fn go(
        world: &World,
        at: BlockRef,
        seen: u64,
        gamma: usize,
        horizon: u32,
        mute: &[bool],
        dead: &mut HashSet<(BlockRef, u64)>,
    ) -> bool {
        if seen.count_ones() as usize > gamma {
            return true;
        }
        if dead.contains(&(at, seen)) {
            return false;
        }
        for &j in world.topology.neighbors(at.node) {
            if mute[usize::from(j)] {
                continue;
            }
            if let Some(c) = child(world, j, at, horizon) {
                if go(world, c, seen | 1 << j, gamma, horizon, mute, dead) {
                    return true;
                }
            }
        }
        dead.insert((at, seen));
        false
    }
    assert!(world.node_count() <= 64);
    if target.seq >= horizon || world.block(target).is_none() {
        return false;
    }
    go(world, target, 1 << target.node, gamma, horizon, mute, &mut HashSet::new())
}
