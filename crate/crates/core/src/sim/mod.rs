//! Time-slotted simulator: configuration, world state, the slot scheduler,
//! metrics, attack sweeps and export.

pub mod config;
pub mod export;
pub mod metrics;
pub mod run;
pub mod sweep;
pub mod world;

pub use config::{AdversaryMix, ConfigError, SimConfig};
pub use metrics::{Metrics, NodeSlot, SessionRecord};
pub use run::{run_simulation, SimError, SimRun, Simulation};
pub use sweep::{attack_sweep, Fraction, SweepPoint, SweepResult, DEFAULT_FRACTIONS};
pub use world::{substream, World, WorldView};

use crate::analysis::{Exact, RateProfile};
use crate::topology::{Topology, TopologyError};

/// Random geometric topology drawn from the config's topology stream.
pub fn gen_topology(config: &SimConfig) -> Result<Topology, TopologyError> {
    let mut rng = substream(config.seed, "topology", &[]);
    Topology::random_geometric(config.node_count, config.area_side, config.range, &mut rng)
}

/// Rate profile of a world, in blocks per slot.
pub fn rate_profile(world: &World, body_bits: u64) -> RateProfile {
    let rates = world.slots_per_block.iter().map(|&k| Exact::new(1, u128::from(k))).collect();
    RateProfile::new(rates, body_bits).expect("periods are positive")
}
