use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::{BlockRef, NodeId};

use super::config::{ConfigError, SimConfig};
use super::run::{SimError, Simulation};
use super::world::{place_adversaries, substream, World};

/// Malicious share of one sweep point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Fraction {
    /// `share * gamma / |V|`.
    OfGamma(f64),
    Absolute(f64),
}

impl Fraction {
    pub fn resolve(&self, gamma: usize, nodes: usize) -> f64 {
        match *self {
            Fraction::OfGamma(s) => s * gamma as f64 / nodes as f64,
            Fraction::Absolute(f) => f,
        }
    }
}

/// The three levels used by default: none, half of gamma, gamma.
pub const DEFAULT_FRACTIONS: [Fraction; 3] = [Fraction::OfGamma(0.0), Fraction::OfGamma(0.5), Fraction::OfGamma(1.0)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma: usize,
    pub fraction: f64,
    pub malicious: usize,
    pub targets: usize,
    /// Targets never validated within the run.
    pub unresolved: usize,
    /// Share of targets not yet validated by the end of each slot.
    pub curve: Vec<f64>,
    /// Slots elapsed until every target was validated.
    pub slots_to_zero: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub slots: u32,
    pub repetitions: u32,
    pub points: Vec<SweepPoint>,
}

/// Builds the DAG of one repetition. Misbehavior only affects replies to
/// child requests, so a single honest construction serves every adversary
/// placement.
fn build_world(base: &SimConfig, rep: u32) -> Result<World, SimError> {
    let mut cfg = base.clone();
    cfg.seed = substream(base.seed, "sweep-run", &[u64::from(rep)]).random();
    cfg.validate = false;
    cfg.malicious_fraction = 0.0;
    cfg.gamma = 0;
    Ok(Simulation::new(cfg)?.run()?.world)
}

/// First slot at which `validator` reaches consensus on `target`, scanning
/// forward slot by slot.
fn first_success(world: &World, validator: NodeId, target: BlockRef, gamma: usize, slots: u32) -> Option<u32> {
    (target.seq..slots).find(|&s| world.validate(validator, target, gamma, s + 1).succeeded())
}

/// Consensus failure probability over time for blocks produced in the first
/// `gamma` slots, for every `(gamma, fraction)` pair.
pub fn attack_sweep(
    base: &SimConfig,
    gammas: &[usize],
    fractions: &[Fraction],
    repetitions: u32,
) -> Result<SweepResult, SimError> {
    base.check()?;
    let n = base.node_count;
    for &g in gammas {
        if g > (n - 1) / 2 {
            return Err(ConfigError::Invalid(format!("sweep gamma {g} exceeds (node_count-1)/2")).into());
        }
        for f in fractions {
            let frac = f.resolve(g, n);
            if frac > g as f64 / n as f64 + 1e-12 || frac < 0.0 {
                return Err(ConfigError::Invalid(format!("fraction {frac} exceeds gamma/|V| for gamma {g}")).into());
            }
        }
    }
    let slots = base.slots;
    let mut firsts: Vec<Vec<Option<u32>>> = vec![Vec::new(); gammas.len() * fractions.len()];
    let mut malicious_counts = vec![0; gammas.len() * fractions.len()];
    for rep in 0..repetitions {
        let mut world = build_world(base, rep)?;
        for (gi, &gamma) in gammas.iter().enumerate() {
            for (fi, f) in fractions.iter().enumerate() {
                let point = gi * fractions.len() + fi;
                let mut cfg = base.clone();
                cfg.malicious_fraction = f.resolve(gamma, n);
                let count = cfg.malicious_count();
                malicious_counts[point] = count;
                let ids = [u64::from(rep), gamma as u64, fi as u64];
                world.profiles = place_adversaries(&cfg, count, &mut substream(world.seed, "sweep-adversary", &ids));
                let honest: Vec<NodeId> = (0..n as NodeId).filter(|&v| world.profiles[usize::from(v)].is_honest()).collect();
                let candidates: Vec<BlockRef> = world
                    .nodes
                    .iter()
                    .filter(|node| world.profiles[usize::from(node.id)].is_honest())
                    .flat_map(|node| node.blocks().iter().map(|b| b.reference))
                    .filter(|r| (r.seq as usize) < gamma.max(1))
                    .collect();
                let mut rng = substream(world.seed, "sweep-targets", &ids);
                let picked: Vec<(NodeId, BlockRef)> = sample(&mut rng, candidates.len(), base.sweep_targets.min(candidates.len()))
                    .into_iter()
                    .map(|i| {
                        let target = candidates[i];
                        let others: Vec<NodeId> = honest.iter().copied().filter(|&v| v != target.node).collect();
                        (others[rng.random_range(0..others.len())], target)
                    })
                    .collect();
                let w = &world;
                let found: Vec<Option<u32>> =
                    picked.par_iter().map(|&(v, t)| first_success(w, v, t, gamma, slots)).collect();
                firsts[point].extend(found);
            }
        }
    }

    let mut points = Vec::new();
    for (gi, &gamma) in gammas.iter().enumerate() {
        for (fi, f) in fractions.iter().enumerate() {
            let point = gi * fractions.len() + fi;
            let results = &firsts[point];
            let total = results.len().max(1) as f64;
            let curve: Vec<f64> = (0..slots)
                .map(|s| results.iter().filter(|r| r.is_none_or(|x| x > s)).count() as f64 / total)
                .collect();
            let unresolved = results.iter().filter(|r| r.is_none()).count();
            let slots_to_zero = if unresolved > 0 {
                None
            } else {
                Some(results.iter().map(|r| r.expect("resolved") + 1).max().unwrap_or(0))
            };
            points.push(SweepPoint {
                gamma,
                fraction: f.resolve(gamma, n),
                malicious: malicious_counts[point],
                targets: results.len(),
                unresolved,
                curve,
                slots_to_zero,
            });
        }
    }
    Ok(SweepResult { slots, repetitions, points })
}
