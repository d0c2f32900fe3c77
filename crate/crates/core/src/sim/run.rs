use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::block::{BlockRef, NodeId};
use crate::node::{Announcement, NodeError};
use crate::pop::SessionReport;

use super::config::{ConfigError, SimConfig};
use super::metrics::{Metrics, NodeSlot, SessionRecord};
use super::world::{substream, World};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("node {node} failed at slot {slot}: {source}")]
    Node { node: NodeId, slot: u32, source: NodeError },
}

/// Slot-by-slot driver.
///
/// Each slot: digests announced in the previous slot arrive; nodes due by
/// their rate generate and announce a block; every generating node then
/// validates a uniformly chosen block by another node that is at least
/// `|V|` slots old. Sessions of one slot run against the same snapshot and
/// are merged in node-id order.
pub struct Simulation {
    pub config: SimConfig,
    pub world: World,
    pub metrics: Metrics,
    pending: Vec<Announcement>,
    /// Every generated block in generation order.
    generated: Vec<BlockRef>,
    counters: Vec<NodeSlot>,
    slot: u32,
}

pub struct SimRun {
    pub metrics: Metrics,
    pub world: World,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Simulation, SimError> {
        config.check()?;
        let world = World::from_config(&config);
        Ok(Simulation::with_world(config, world))
    }

    /// Drives a prepared world (for hand-built topologies and rates).
    pub fn with_world(config: SimConfig, world: World) -> Simulation {
        let n = world.node_count();
        let counters = (0..n).map(|i| NodeSlot { node: i as NodeId, ..Default::default() }).collect();
        Simulation {
            metrics: Metrics::new(n),
            config,
            world,
            pending: Vec::new(),
            generated: Vec::new(),
            counters,
            slot: 0,
        }
    }

    pub fn slot(&self) -> u32 {
        self.slot
    }

    pub fn step(&mut self) -> Result<(), SimError> {
        let slot = self.slot;
        let n = self.world.node_count();

        for a in std::mem::take(&mut self.pending) {
            self.world.deliver(&a, slot);
            self.counters[usize::from(a.to)].msgs_rx += 1;
        }

        let mut generating = Vec::new();
        for v in 0..n as NodeId {
            if !self.world.is_due(v, slot) {
                continue;
            }
            let g = self.world.generate(v, slot).map_err(|source| SimError::Node { node: v, slot, source })?;
            let c = &mut self.counters[usize::from(v)];
            c.blocks += 1;
            c.construct_bits += self.world.node(v).params.sizes.hash * g.announcements.len() as u64;
            c.msgs_tx += g.announcements.len() as u64;
            self.pending.extend(g.announcements);
            self.generated.push(g.reference);
            generating.push(v);
        }

        let mut slot_attempts = 0u64;
        let mut slot_failures = 0u64;
        if self.config.validate {
            let jobs = self.pick_targets(slot, &generating);
            let world = &self.world;
            let gamma = self.config.gamma;
            let reports: Vec<SessionReport> =
                jobs.par_iter().map(|&(v, target)| world.validate(v, target, gamma, slot + 1)).collect();
            for report in &reports {
                self.world.absorb(report);
                self.account(report, slot);
                slot_attempts += 1;
                slot_failures += u64::from(!report.succeeded());
            }
        }

        let total = self.metrics.total_blocks.last().copied().unwrap_or(0) + generating.len() as u64;
        self.metrics.total_blocks.push(total);
        self.metrics.failure_probability.push(if slot_attempts == 0 {
            0.0
        } else {
            slot_failures as f64 / slot_attempts as f64
        });
        for v in 0..n {
            let node = &self.world.nodes[v];
            let mut rec = self.counters[v];
            rec.slot = slot;
            rec.s_bits = node.stored_bits();
            rec.h_bits = node.trusted.size_bits();
            self.metrics.records.push(rec);
        }
        self.slot += 1;
        self.metrics.slots = self.slot;
        Ok(())
    }

    /// One `(validator, target)` pair per generating node that has an
    /// eligible target.
    fn pick_targets(&self, slot: u32, generating: &[NodeId]) -> Vec<(NodeId, BlockRef)> {
        let age = self.world.node_count() as u32;
        let Some(cutoff) = slot.checked_sub(age) else {
            return Vec::new();
        };
        let eligible = self.generated.partition_point(|r| r.seq <= cutoff);
        let pool = &self.generated[..eligible];
        let mut jobs = Vec::new();
        for &v in generating {
            let own = pool.iter().filter(|r| r.node == v).count();
            if own == pool.len() {
                continue;
            }
            let mut rng = substream(self.config.seed, "schedule", &[u64::from(slot), u64::from(v)]);
            let mut k = rng.random_range(0..pool.len() - own);
            let target = pool
                .iter()
                .filter(|r| r.node != v)
                .find(|_| {
                    let hit = k == 0;
                    k = k.saturating_sub(1);
                    hit
                })
                .copied()
                .expect("index within the filtered pool");
            jobs.push((v, target));
        }
        jobs
    }

    fn account(&mut self, report: &SessionReport, slot: u32) {
        for (v, t) in &report.traffic {
            let c = &mut self.counters[usize::from(*v)];
            c.consensus_bits += t.tx_bits;
            c.consensus_rx_bits += t.rx_bits;
            c.msgs_tx += t.tx_msgs;
            c.msgs_rx += t.rx_msgs;
            c.retrieval_bits += t.retrieval_tx_bits + t.retrieval_rx_bits;
        }
        let c = &mut self.counters[usize::from(report.validator)];
        c.validations_attempted += 1;
        match &report.outcome {
            Ok(_) => c.validations_succeeded += 1,
            Err(_) => c.validations_failed += 1,
        }
        if report.succeeded() {
            *self.metrics.consensus_wait_histogram.entry(report.stats.wait_slots).or_insert(0) += 1;
        }
        self.metrics.sessions.push(session_record(report, slot));
    }

    pub fn run(mut self) -> Result<SimRun, SimError> {
        while self.slot < self.config.slots {
            self.step()?;
        }
        Ok(SimRun { metrics: self.metrics, world: self.world })
    }
}

pub fn session_record(report: &SessionReport, slot: u32) -> SessionRecord {
    let (path_authors, distinct) = match &report.outcome {
        Ok(p) => (p.steps.iter().map(|s| s.block.node).collect(), p.authors.len()),
        Err(_) => (Vec::new(), 0),
    };
    SessionRecord {
        slot,
        validator: report.validator,
        target: report.target,
        gamma: report.gamma,
        error: report.outcome.as_ref().err().copied(),
        path_authors,
        distinct,
        messages: report.stats.messages(),
        retrieval_messages: report.stats.retrieval_messages,
        trusted_at_start: report.trusted_at_start,
        trusted_steps: report.stats.trusted_steps,
        timeouts: report.stats.timeouts,
        rollbacks: report.stats.rollbacks,
        wait_slots: report.stats.wait_slots,
    }
}

/// Runs a configured simulation to completion.
pub fn run_simulation(config: &SimConfig) -> Result<Metrics, SimError> {
    Ok(Simulation::new(config.clone())?.run()?.metrics)
}
