//! Two-layer DAG ledger for IoT networks.
//!
//! Nodes keep their own hash-linked chain and exchange only header digests
//! with radio neighbors; the digests knit all chains into one logical DAG.
//! A block is accepted once a validator finds a path of descendants whose
//! blocks come from at least `gamma + 1` distinct nodes (Proof-of-Path).
//!
//! * [`crypto`]: SHA-256, Merkle roots, hash puzzle, signatures
//! * [`block`]: headers, bodies, codec and size accounting
//! * [`node`]: per-node chain, digest table and trusted header cache
//! * [`pop`]: path search, messages and weights
//! * [`adversary`]: misbehavior profiles, tampering, blacklist
//! * [`analysis`]: closed-form bounds, logical DAG, baseline cost models
//! * [`sim`]: topology generation, slot scheduler, metrics, sweeps, export

pub mod adversary;
pub mod analysis;
pub mod block;
pub mod crypto;
pub mod node;
pub mod nodeset;
pub mod pop;
pub mod sim;
pub mod topology;

pub use block::{BlockRef, NodeId};
pub use crypto::Digest256;
pub use nodeset::NodeSet;
