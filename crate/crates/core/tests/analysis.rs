mod common;

use std::collections::{BTreeSet, HashMap, VecDeque};

use common::*;
use proptest::prelude::*;
use twoldag::analysis::*;
use twoldag::block::{BlockRef, DataBlock, FieldSizes};
use twoldag::sim::{SimConfig, Simulation, World};

fn equal(n: usize) -> RateProfile {
    RateProfile::from_slots_per_block(&vec![1; n], 4_000_000).unwrap()
}

fn ints(rates: &[u128]) -> RateProfile {
    RateProfile::new(rates.iter().map(|&r| Exact::from(r)).collect(), 8).unwrap()
}

#[test]
fn total_blocks() {
    assert_eq!(prop1_total_blocks(200, &equal(50)), 10_000);
    assert_eq!(prop1_total_blocks(0, &equal(50)), 0);
    let mixed = RateProfile::from_slots_per_block(&[1, 2, 3], 8).unwrap();
    assert_eq!(prop1_total_blocks(7, &mixed), 7 + 3 + 2);
}

#[test]
fn header_cache_bound() {
    assert_eq!(prop2_header_cache_bound(200, &equal(50), 0).unwrap(), Exact::from(131_398_400));
    assert_eq!(prop2_header_cache_bound(200, &equal(1), 0).unwrap(), Exact::from(0));
    assert_eq!(prop2_header_cache_bound(1, &equal(2), 5), Err(AnalysisError::UnknownNode(5)));
}

#[test]
fn storage_bound() {
    let r = equal(50);
    assert_eq!(prop3_storage_bound(0, &r, 3).unwrap(), Exact::from(0));
    let expected = 200u128 * 4_000_000 + 200 * (608 + 256 * 50) * 50;
    assert_eq!(prop3_storage_bound(200, &r, 3).unwrap(), Exact::from(expected));
    let single = equal(1);
    assert_eq!(
        prop3_storage_bound(10, &single, 0).unwrap(),
        Exact::from(10u128 * 4_000_000 + 10 * (608 + 256))
    );
}

#[test]
fn message_floor() {
    assert_eq!(prop4_message_floor(0), 2);
    assert_eq!(prop4_message_floor(2), 6);
    assert_eq!(prop4_message_floor(24), 50);
}

#[test]
fn microloop_bound() {
    let r = ints(&[3, 3, 1]);
    assert_eq!(prop5_microloop_bound(&[A, B], &r), Ok(6));
    assert_eq!(prop5_microloop_bound(&[A, B, C, D], &equal(5)), Ok(4));
    assert_eq!(prop5_microloop_bound(&[A, B, C], &r), Err(AnalysisError::BadLoopSet));
    assert_eq!(prop5_microloop_bound(&[], &r), Err(AnalysisError::BadLoopSet));
    assert_eq!(prop5_microloop_bound(&[9], &r), Err(AnalysisError::UnknownNode(9)));
    let frac = RateProfile::from_slots_per_block(&[1, 3, 2], 8).unwrap();
    // 1 / (1/3) = 3 and (1/2) / (1/3) = 1.5 floored.
    assert_eq!(prop5_microloop_bound(&[0, 2], &frac), Ok(4));
}

#[test]
fn message_ceiling() {
    assert_eq!(prop6_message_ceiling(&ints(&[3, 3, 1, 1]), 2), Prop6::Bound(Exact::from(54)));
    assert_eq!(prop6_message_ceiling(&ints(&[1, 3, 1, 3]), 2), Prop6::Bound(Exact::from(54)));
    assert_eq!(prop6_message_ceiling(&ints(&[2, 2, 2, 2, 2]), 0), Prop6::Bound(Exact::from(5)));
    assert_eq!(prop6_message_ceiling(&ints(&[3, 3, 3, 1]), 2), Prop6::Inapplicable);
    assert_eq!(prop6_message_ceiling(&ints(&[3, 1]), 2), Prop6::Inapplicable);
}

#[test]
fn bit_rate_conversion() {
    let r = RateProfile::from_bit_rates(&[1000, 500], 2, 4000).unwrap();
    assert_eq!(r.rates, vec![Exact::new(1, 2), Exact::new(1, 4)]);
    assert_eq!(prop1_total_blocks(8, &r), 4 + 2);
    assert_eq!(RateProfile::from_slots_per_block(&[1, 0], 8), Err(AnalysisError::NonPositiveRate));
}

#[test]
fn star_world_dag_has_digest_edges() {
    let s = star_world();
    let dag = build_logical_dag(s.world.nodes.iter().flat_map(|n| n.blocks()));
    let (a1, b1, c1, d1) = (BlockRef::new(A, 1), BlockRef::new(B, 3), BlockRef::new(C, 2), BlockRef::new(D, 1));
    assert!(dag.has_edge(d1, c1));
    assert!(dag.has_edge(a1, b1));
    assert!(dag.has_edge(c1, b1));
    assert!(dag.has_edge(d1, b1));
    assert!(!dag.has_edge(b1, d1));
    assert!(dag.is_acyclic());
    assert_eq!(dag.vertex_count(), 10);
    assert!(dag.points_to(A, b1));
    assert!(!dag.points_to(C, b1));
    assert!(!dag.points_to(B, b1));
    assert!(dag.points_to(B, d1));
}

#[test]
fn empty_dag() {
    let dag = build_logical_dag(std::iter::empty::<&DataBlock>());
    assert_eq!((dag.vertex_count(), dag.edge_count()), (0, 0));
    assert!(dag.descendants(BlockRef::new(0, 0)).is_empty());
    assert!(!dag.points_to(0, BlockRef::new(0, 0)));
}

#[test]
fn pbft_model() {
    let r = equal(50);
    let c = baseline_costs(BaselineModel::Pbft, 200, &r);
    let block = (608 + 256 + 4_000_000) as f64;
    assert_eq!(baseline_block_bits(BaselineModel::Pbft, 4_000_000, &FieldSizes::default()), 608 + 256 + 4_000_000);
    assert_eq!(c.storage_bits, 10_000.0 * block);
    assert_eq!(c.communication_bits, 10_000.0 * (49.0 * block + 2.0 * 2500.0 * 608.0) / 50.0);
    let i = baseline_costs(BaselineModel::Iota, 200, &r);
    assert_eq!(i.storage_bits, 10_000.0 * (608.0 + 512.0 + 4e6));
    assert_eq!(i.communication_bits, 10_000.0 * 49.0 * (608.0 + 512.0 + 4e6) / 50.0);
    assert_eq!(baseline_costs(BaselineModel::Iota, 0, &r).storage_bits, 0.0);
}

/// Reachability computed straight from the stores: a block's children are
/// the blocks whose digest lists contain its digest.
fn brute_points_to(world: &World, i: u16, x: BlockRef) -> bool {
    let all: Vec<&DataBlock> = world.nodes.iter().flat_map(|n| n.blocks()).collect();
    let mut by_ref: HashMap<BlockRef, &DataBlock> = HashMap::new();
    for b in &all {
        by_ref.insert(b.reference, b);
    }
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([x]);
    while let Some(cur) = queue.pop_front() {
        let d = by_ref[&cur].header().digest();
        for b in &all {
            if b.header().digests.iter().any(|(_, e)| *e == d) && seen.insert(b.reference) {
                queue.push_back(b.reference);
            }
        }
    }
    seen.iter().any(|r| r.node == i)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn points_to_matches_brute_force(seed in any::<u64>(), nodes in 2usize..=6, slots in 2u32..=6) {
        let c = SimConfig {
            node_count: nodes,
            area_side: 30.0,
            range: 20.0,
            slots,
            body_bits: 64,
            rate_min: 1,
            rate_max: 3,
            gamma: 0,
            seed,
            difficulty_bits: 1,
            validate: false,
            ..SimConfig::default()
        };
        let run = Simulation::new(c).unwrap().run().unwrap();
        let w = &run.world;
        let blocks: Vec<&DataBlock> = w.nodes.iter().flat_map(|n| n.blocks()).collect();
        prop_assert!(blocks.len() <= 36);
        let dag = build_logical_dag(blocks.iter().copied());
        prop_assert!(dag.is_acyclic());
        prop_assert_eq!(dag.vertex_count(), blocks.len());
        for x in &blocks {
            for i in 0..nodes as u16 {
                prop_assert_eq!(dag.points_to(i, x.reference), brute_points_to(w, i, x.reference));
            }
        }
    }

    #[test]
    fn bounds_are_monotone_in_time(t in 0u64..1000, k in proptest::collection::vec(1u32..5, 2..10)) {
        let r = RateProfile::from_slots_per_block(&k, 800).unwrap();
        prop_assert!(prop1_total_blocks(t, &r) <= prop1_total_blocks(t + 1, &r));
        let i = 0;
        prop_assert!(prop2_header_cache_bound(t, &r, i).unwrap() <= prop2_header_cache_bound(t + 1, &r, i).unwrap());
        prop_assert!(prop3_storage_bound(t, &r, i).unwrap() >= prop2_header_cache_bound(t, &r, i).unwrap());
    }
}
