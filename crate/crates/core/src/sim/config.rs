use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Difficulty, DEFAULT_LEAF_BITS};
use crate::node::NodeParams;
use crate::pop::PopSettings;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Which misbehavior malicious nodes exhibit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdversaryMix {
    Silent,
    Corrupting,
    Selfish,
    /// Alternates silent and corrupting nodes.
    Mixed,
}

impl FromStr for AdversaryMix {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "silent" => Ok(AdversaryMix::Silent),
            "corrupting" => Ok(AdversaryMix::Corrupting),
            "selfish" => Ok(AdversaryMix::Selfish),
            "mixed" => Ok(AdversaryMix::Mixed),
            _ => Err("expected silent, corrupting, selfish or mixed".into()),
        }
    }
}

impl AdversaryMix {
    fn as_str(&self) -> &'static str {
        match self {
            AdversaryMix::Silent => "silent",
            AdversaryMix::Corrupting => "corrupting",
            AdversaryMix::Selfish => "selfish",
            AdversaryMix::Mixed => "mixed",
        }
    }
}

/// Experiment parameters. Every field is settable by its name through
/// [`SimConfig::set`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub node_count: usize,
    /// Side of the square deployment area, meters.
    pub area_side: f64,
    /// Radio range, meters.
    pub range: f64,
    pub slots: u32,
    /// Body size C in bits; a multiple of 8.
    pub body_bits: u64,
    /// Each node draws its slots-per-block uniformly from this range.
    pub rate_min: u32,
    pub rate_max: u32,
    pub gamma: usize,
    pub malicious_fraction: f64,
    pub adversary: AdversaryMix,
    pub corruption_flips: u32,
    pub selfish_reply_prob: f64,
    pub seed: u64,
    pub tau: u32,
    pub difficulty_bits: u32,
    pub blacklist_k: u32,
    pub min_digest_interval: u32,
    pub query_budget: u32,
    pub min_hop_slots: u32,
    pub leaf_bits: u64,
    /// Per-node storage capacity in bits; 0 means unbounded.
    pub capacity_bits: u64,
    /// Run a validation whenever a node generates a block.
    pub validate: bool,
    pub sweep_gammas: Vec<usize>,
    pub sweep_repetitions: u32,
    /// Targets sampled per sweep run.
    pub sweep_targets: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            node_count: 50,
            area_side: 100.0,
            range: 50.0,
            slots: 200,
            body_bits: 4_000_000,
            rate_min: 1,
            rate_max: 1,
            gamma: 16,
            malicious_fraction: 0.0,
            adversary: AdversaryMix::Silent,
            corruption_flips: 1,
            selfish_reply_prob: 0.5,
            seed: 1,
            tau: 1,
            difficulty_bits: 8,
            blacklist_k: 10,
            min_digest_interval: 1,
            query_budget: 4096,
            min_hop_slots: 1,
            leaf_bits: DEFAULT_LEAF_BITS,
            capacity_bits: 0,
            validate: true,
            sweep_gammas: vec![10, 15, 20, 24],
            sweep_repetitions: 20,
            sweep_targets: 10,
        }
    }
}

/// Keys accepted by [`SimConfig::set`], in manifest order, with help text.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("node_count", "number of nodes"),
    ("area_side", "side of the square deployment area in meters"),
    ("range", "radio range in meters"),
    ("slots", "number of simulated time slots"),
    ("body_bits", "block body size C in bits (multiple of 8)"),
    ("rate_min", "fewest slots between two blocks of a node"),
    ("rate_max", "most slots between two blocks of a node"),
    ("gamma", "tolerated malicious nodes; consensus needs gamma+1 authors"),
    ("malicious_fraction", "share of nodes that misbehave"),
    ("adversary", "misbehavior: silent, corrupting, selfish or mixed"),
    ("corruption_flips", "bits a corrupting node flips per reply"),
    ("selfish_reply_prob", "probability a selfish node answers"),
    ("seed", "master random seed"),
    ("tau", "slots waited before a request times out"),
    ("difficulty_bits", "leading zero bits required by the hash puzzle"),
    ("blacklist_k", "blacklist counter set on misbehavior"),
    ("min_digest_interval", "minimum slots between digests of one neighbor"),
    ("query_budget", "child lookups allowed per validation"),
    ("min_hop_slots", "minimum slot gap parent to child used to prune searches (0 disables)"),
    ("leaf_bits", "Merkle leaf width in bits"),
    ("capacity_bits", "per-node storage capacity in bits (0 = unbounded)"),
    ("validate", "validate a random old block whenever a node generates"),
    ("sweep_gammas", "gamma values of the attack sweep, comma separated"),
    ("sweep_repetitions", "seeds per attack sweep point"),
    ("sweep_targets", "target blocks sampled per attack sweep run"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl SimConfig {
    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim().trim_matches('"');
        match key {
            "node_count" => self.node_count = parse(key, v)?,
            "area_side" => self.area_side = parse(key, v)?,
            "range" => self.range = parse(key, v)?,
            "slots" => self.slots = parse(key, v)?,
            "body_bits" => self.body_bits = parse(key, v)?,
            "rate_min" => self.rate_min = parse(key, v)?,
            "rate_max" => self.rate_max = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "malicious_fraction" => self.malicious_fraction = parse(key, v)?,
            "adversary" => self.adversary = parse(key, v)?,
            "corruption_flips" => self.corruption_flips = parse(key, v)?,
            "selfish_reply_prob" => self.selfish_reply_prob = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "tau" => self.tau = parse(key, v)?,
            "difficulty_bits" => self.difficulty_bits = parse(key, v)?,
            "blacklist_k" => self.blacklist_k = parse(key, v)?,
            "min_digest_interval" => self.min_digest_interval = parse(key, v)?,
            "query_budget" => self.query_budget = parse(key, v)?,
            "min_hop_slots" => self.min_hop_slots = parse(key, v)?,
            "leaf_bits" => self.leaf_bits = parse(key, v)?,
            "capacity_bits" => self.capacity_bits = parse(key, v)?,
            "validate" => self.validate = parse(key, v)?,
            "sweep_gammas" => {
                self.sweep_gammas = v
                    .trim_matches(|c| c == '[' || c == ']')
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            "sweep_repetitions" => self.sweep_repetitions = parse(key, v)?,
            "sweep_targets" => self.sweep_targets = parse(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// All fields as `(key, value)` text pairs accepted back by
    /// [`set`](Self::set).
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let gammas = self.sweep_gammas.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(",");
        let values = [
            self.node_count.to_string(),
            format!("{:?}", self.area_side),
            format!("{:?}", self.range),
            self.slots.to_string(),
            self.body_bits.to_string(),
            self.rate_min.to_string(),
            self.rate_max.to_string(),
            self.gamma.to_string(),
            format!("{:?}", self.malicious_fraction),
            self.adversary.as_str().to_string(),
            self.corruption_flips.to_string(),
            format!("{:?}", self.selfish_reply_prob),
            self.seed.to_string(),
            self.tau.to_string(),
            self.difficulty_bits.to_string(),
            self.blacklist_k.to_string(),
            self.min_digest_interval.to_string(),
            self.query_budget.to_string(),
            self.min_hop_slots.to_string(),
            self.leaf_bits.to_string(),
            self.capacity_bits.to_string(),
            self.validate.to_string(),
            gammas,
            self.sweep_repetitions.to_string(),
            self.sweep_targets.to_string(),
        ];
        CONFIG_KEYS.iter().map(|(k, _)| *k).zip(values).collect()
    }

    /// Flat `key = value` text, one line per field.
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            let quoted = if k == "adversary" || k == "sweep_gammas" { format!("\"{v}\"") } else { v };
            let _ = writeln!(out, "{k} = {quoted}");
        }
        out
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.node_count == 0 || self.node_count > usize::from(u16::MAX) + 1 {
            return bad(format!("node_count {} out of range", self.node_count));
        }
        if self.gamma > (self.node_count - 1) / 2 {
            return bad(format!(
                "gamma {} exceeds (node_count-1)/2 = {}",
                self.gamma,
                (self.node_count - 1) / 2
            ));
        }
        if self.body_bits == 0 || !self.body_bits.is_multiple_of(8) {
            return bad(format!("body_bits {} must be a positive multiple of 8", self.body_bits));
        }
        if self.leaf_bits == 0 || !self.leaf_bits.is_multiple_of(8) {
            return bad(format!("leaf_bits {} must be a positive multiple of 8", self.leaf_bits));
        }
        if self.rate_min == 0 || self.rate_min > self.rate_max {
            return bad(format!("rate range {}..={} is empty or zero", self.rate_min, self.rate_max));
        }
        if !(0.0..=1.0).contains(&self.malicious_fraction) {
            return bad(format!("malicious_fraction {} outside [0, 1]", self.malicious_fraction));
        }
        if !(0.0..=1.0).contains(&self.selfish_reply_prob) {
            return bad(format!("selfish_reply_prob {} outside [0, 1]", self.selfish_reply_prob));
        }
        if !(self.area_side > 0.0 && self.range > 0.0) {
            return bad("area_side and range must be positive".into());
        }
        if self.difficulty_bits > 32 {
            return bad(format!("difficulty_bits {} would make nonce search infeasible", self.difficulty_bits));
        }
        if self.corruption_flips == 0 {
            return bad("corruption_flips must be at least 1".into());
        }
        Ok(())
    }

    pub fn node_params(&self) -> NodeParams {
        NodeParams {
            version: 1,
            body_bits: self.body_bits,
            leaf_bits: self.leaf_bits,
            difficulty: Difficulty::leading_zero_bits(self.difficulty_bits).expect("checked range"),
            sizes: Default::default(),
            blacklist_k: self.blacklist_k,
            min_digest_interval: self.min_digest_interval,
            capacity_bits: (self.capacity_bits > 0).then_some(self.capacity_bits),
        }
    }

    pub fn pop_settings(&self) -> PopSettings {
        PopSettings {
            tau: self.tau,
            query_budget: self.query_budget,
            min_hop_slots: self.min_hop_slots,
            sizes: Default::default(),
            leaf_bits: self.leaf_bits,
        }
    }

    /// Number of malicious nodes implied by the fraction, rounded down so
    /// that 33% and 49% of 50 nodes give 16 and 24.
    pub fn malicious_count(&self) -> usize {
        ((self.malicious_fraction * self.node_count as f64 + 1e-9).floor() as usize).min(self.node_count)
    }
}
