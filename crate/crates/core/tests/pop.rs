mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use twoldag::adversary::{blacklist_update, BehaviorProfile, BlacklistEvent};
use twoldag::block::{BlockRef, FieldSizes};
use twoldag::crypto::hash_bytes;
use twoldag::nodeset::NodeSet;
use twoldag::pop::*;
use twoldag::sim::{SimConfig, Simulation};

fn refs(report: &SessionReport) -> Vec<BlockRef> {
    report.outcome.as_ref().expect("consensus").blocks()
}

#[test]
fn node_weight_is_closed_neighborhood_share() {
    let t = hub_topology();
    let r: NodeSet = [B].into_iter().collect();
    assert_eq!(node_weight(A, &r, &t), num_rational::Ratio::new(1, 2));
    assert_eq!(node_weight(C, &r, &t), num_rational::Ratio::new(1, 3));
    assert_eq!(node_weight(D, &r, &t), num_rational::Ratio::new(1, 4));
    assert_eq!(node_weight(E, &r, &t), num_rational::Ratio::new(0, 1));
}

#[test]
fn wps_prefers_lightest_then_unseen() {
    let t = hub_topology();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r: NodeSet = [B].into_iter().collect();
    assert_eq!(wps(&r, &[A, C, D], &t, &mut rng), Some(D));
    // B and E tie at 1/2; B is already on the path.
    let r: NodeSet = [B, D].into_iter().collect();
    for _ in 0..20 {
        assert_eq!(wps(&r, &[B, C, E], &t, &mut rng), Some(E));
    }
    // When every minimum-weight candidate is already counted, one of them
    // is still chosen.
    let r: NodeSet = [A, B].into_iter().collect();
    assert_eq!(wps(&r, &[A], &t, &mut rng), Some(A));
    assert_eq!(wps(&r, &[], &t, &mut rng), None);
}

#[test]
fn wps_breaks_exact_ties_uniformly() {
    let t = twoldag::topology::Topology::from_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
    let r: NodeSet = [0].into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut counts = [0u32; 4];
    for _ in 0..3000 {
        counts[usize::from(wps(&r, &[1, 2, 3], &t, &mut rng).unwrap())] += 1;
    }
    for c in &counts[1..] {
        assert!((850..1150).contains(c), "{counts:?}");
    }
}

#[test]
fn hub_validation_follows_lightest_neighbors() {
    let s = hub_world();
    let rep = s.world.validate(C, s.block(B, 1), 2, 5);
    assert_eq!(refs(&rep), vec![BlockRef::new(B, 1), BlockRef::new(D, 2), BlockRef::new(E, 3)]);
    assert_eq!(rep.stats.requests, 2);
    assert_eq!(rep.stats.replies, 2);
    assert_eq!(rep.stats.messages(), 4);
    assert_eq!(rep.stats.messages_with_retrieval(), 6);
    assert_eq!(rep.stats.rollbacks, 0);
}

#[test]
fn hub_validation_detours_when_lightest_neighbor_is_banned() {
    let mut s = hub_world();
    blacklist_update(&mut s.world.node_mut(E).blacklist, D, BlacklistEvent::NoReply);
    let rep = s.world.validate(E, s.block(B, 1), 2, 5);
    assert_eq!(
        refs(&rep),
        vec![BlockRef::new(B, 1), BlockRef::new(A, 2), BlockRef::new(B, 3), BlockRef::new(C, 4)]
    );
    // C answered "no child" for the target before A was asked.
    assert_eq!(rep.stats.requests, 4);
}

#[test]
fn silent_neighbor_times_out_and_is_skipped() {
    let mut s = hub_world();
    s.world.profiles[usize::from(D)] = BehaviorProfile::SilentMalicious;
    let rep = s.world.validate(E, s.block(B, 1), 2, 5);
    assert_eq!(rep.stats.timeouts, 1);
    assert_eq!(rep.stats.wait_slots, 1);
    assert_eq!(rep.blacklist_events, vec![(D, BlacklistEvent::NoReply)]);
    assert_eq!(refs(&rep).last(), Some(&BlockRef::new(C, 4)));
}

#[test]
fn unreachable_threshold_exhausts_after_rollbacks() {
    let s = hub_world();
    let rep = s.world.validate(C, s.block(B, 1), 3, 5);
    assert_eq!(rep.outcome.as_ref().err(), Some(&ValidationError::Exhausted));
    assert!(rep.stats.rollbacks >= 2, "{:?}", rep.stats);
    let too_big = s.world.validate(C, s.block(B, 1), 5, 5);
    assert_eq!(too_big.outcome.err(), Some(ValidationError::GammaTooLarge));
}

#[test]
fn future_blocks_are_invisible() {
    let s = hub_world();
    // At horizon 3 neither E's second block nor any later one exists.
    let rep = s.world.validate(C, s.block(B, 1), 2, 3);
    assert!(!rep.succeeded());
    let early = s.world.validate(C, s.block(C, 4), 1, 4);
    assert_eq!(early.outcome.err(), Some(ValidationError::RetrievalFailed));
}

#[test]
fn three_hop_line_reaches_floor_with_retrieval() {
    // The validator sits off the path so every child costs a request.
    let s = line_world(4, 4);
    let rep = s.world.validate(3, BlockRef::new(0, 0), 2, 4);
    assert_eq!(refs(&rep), vec![BlockRef::new(0, 0), BlockRef::new(1, 1), BlockRef::new(2, 2)]);
    assert_eq!(rep.stats.messages(), 4);
    assert_eq!(rep.stats.messages_with_retrieval(), 6);
}

#[test]
fn trusted_headers_replace_requests() {
    let mut s = line_world(4, 4);
    let first = s.world.validate(3, BlockRef::new(0, 0), 2, 4);
    assert!(first.succeeded());
    s.world.absorb(&first);
    assert_eq!(s.world.node(3).trusted.len(), 3);
    let again = s.world.validate(3, BlockRef::new(0, 0), 2, 4);
    assert_eq!(refs(&again), refs(&first));
    assert_eq!(again.stats.requests, 0);
    assert_eq!(again.stats.trusted_steps, 2);
    assert_eq!(again.trusted_at_start, 3);
}

#[test]
fn tps_walks_cached_children_until_threshold() {
    let s = line_world(4, 5);
    let target = s.world.block(BlockRef::new(0, 0)).unwrap();
    let mut cache = twoldag::node::TrustedHeaders::new();
    for (v, slot) in [(1u16, 1u32), (2, 2), (3, 3)] {
        let b = s.world.block(BlockRef::new(v, slot)).unwrap();
        cache.insert(
            twoldag::node::TrustedHeader { author: v, digest: b.digest(), header: b.header_arc() },
            &FieldSizes::default(),
        );
    }
    let mut session = ValidatorSession::new(3, target, 2);
    assert_eq!(tps(&mut session, &cache), 2);
    assert!(session.consensus_reached());
    assert!(session.check_invariants());
    let mut session = ValidatorSession::new(3, target, 3);
    assert_eq!(tps(&mut session, &cache), 3);
    assert_eq!(session.r.len(), 4);
}

#[test]
fn honest_reply_reports_missing_child() {
    let s = hub_world();
    let b1 = s.world.block(s.block(B, 1)).unwrap().digest();
    let req = PopMessage::digest_message(MessageKind::ReqChild, E, C, 9, &b1);
    let reply = honest_reply(s.world.node(C), &req, 5).unwrap();
    assert_eq!(reply.kind, MessageKind::NoChild);
    assert_eq!((reply.src, reply.dst, reply.nonce), (C, E, 9));
    let req = PopMessage::digest_message(MessageKind::ReqChild, E, A, 3, &b1);
    let reply = honest_reply(s.world.node(A), &req, 5).unwrap();
    assert_eq!(reply.kind, MessageKind::RpyChild);
    let h = twoldag::block::BlockHeader::decode(&reply.payload).unwrap();
    assert_eq!(h.time, 2);
    assert_eq!(reply.accounting_bits(&FieldSizes::default()), 608 + 2 * 256);
    // Misaddressed requests get no reply.
    assert!(honest_reply(s.world.node(C), &PopMessage::digest_message(MessageKind::ReqChild, E, A, 3, &b1), 5).is_none());
}

#[test]
fn wire_errors() {
    assert_eq!(PopMessage::decode(&[1, 0, 0]), Err(WireError::Truncated));
    let mut m = PopMessage::digest_message(MessageKind::ReqChild, 1, 2, 3, &hash_bytes(b"x")).encode();
    m[0] = 9;
    assert_eq!(PopMessage::decode(&m), Err(WireError::UnknownKind(9)));
    let short = PopMessage { kind: MessageKind::NoChild, src: 0, dst: 1, nonce: 0, payload: vec![0; 5] }.encode();
    assert!(matches!(PopMessage::decode(&short), Err(WireError::BadPayload { len: 5, .. })));
    let req = PopMessage::digest_message(MessageKind::ReqChild, 1, 2, 3, &hash_bytes(b"x"));
    assert_eq!(req.accounting_bits(&FieldSizes::default()), 256);
    assert_eq!(req.encode().len(), 13 + 32);
}

fn arb_kind() -> impl Strategy<Value = MessageKind> {
    prop_oneof![
        Just(MessageKind::DigestAnnounce),
        Just(MessageKind::ReqChild),
        Just(MessageKind::RpyChild),
        Just(MessageKind::NoChild)
    ]
}

fn small_sim(seed: u64, nodes: usize, gamma: usize) -> Simulation {
    let mut c = SimConfig {
        node_count: nodes,
        area_side: 40.0,
        range: 25.0,
        slots: 30,
        body_bits: 512,
        rate_min: 1,
        rate_max: 3,
        gamma: gamma.min((nodes - 1) / 2),
        seed,
        difficulty_bits: 2,
        ..SimConfig::default()
    };
    c.validate = false;
    Simulation::new(c).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn wire_round_trip(kind in arb_kind(), src in any::<u16>(), dst in any::<u16>(), nonce in any::<u64>(), d in any::<[u8; 32]>()) {
        let payload = if kind == MessageKind::RpyChild { d[..(d[0] as usize % 32)].to_vec() } else { d.to_vec() };
        let m = PopMessage { kind, src, dst, nonce, payload };
        prop_assert_eq!(PopMessage::decode(&m.encode()).unwrap(), m);
    }

    #[test]
    fn successful_paths_are_linked_distinct_and_in_time(seed in 0u64..1000, gamma in 1usize..5) {
        let run = small_sim(seed, 8, gamma).run().unwrap();
        let w = &run.world;
        let horizon = 30;
        for node in &w.nodes {
            for b in node.blocks().iter().filter(|b| b.reference.seq < 6) {
                let validator = (node.id + 1) % 8;
                let rep = w.validate(validator, b.reference, gamma, horizon);
                let Ok(path) = &rep.outcome else { continue };
                let steps = &path.steps;
                prop_assert_eq!(steps[0].block, b.reference);
                prop_assert!(path.authors.len() > gamma);
                let authors: NodeSet = steps.iter().map(|s| s.block.node).collect();
                prop_assert_eq!(&authors, &path.authors);
                for pair in steps.windows(2) {
                    let (p, c) = (&pair[0], &pair[1]);
                    prop_assert_eq!(c.header.get_digest(p.block.node), Some(p.digest));
                    prop_assert!(c.header.time > p.header.time);
                    prop_assert!(c.header.time < horizon);
                    prop_assert!(w.topology.are_adjacent(p.block.node, c.block.node));
                    prop_assert_eq!(w.block(c.block).unwrap().digest(), c.digest);
                }
                let fetched = steps[1..].iter().filter(|s| !s.trusted).count() as u64;
                prop_assert!(rep.stats.messages() >= 2 * fetched);
            }
        }
    }
}
