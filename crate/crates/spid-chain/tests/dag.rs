mod common;

use std::collections::BTreeMap;

use num_rational::Ratio;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spid_chain::dag::{
    BlockStatus, ChainWeights, DagLedger, LedgerEpoch, NewBlock, OrphanageScope, GENESIS,
};

use common::{attach, brute_force_aw, omega, random_dag, second_epoch, two_epoch_example};

fn rank(s: BlockStatus) -> u8 {
    match s {
        BlockStatus::Tip => 0,
        BlockStatus::Unconfirmed => 1,
        BlockStatus::Confirmed => 2,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Weights, tips and statuses stay consistent while blocks arrive one by one.
    #[test]
    fn invariants_hold_during_growth(
        seed in any::<u64>(),
        stakes in prop::collection::vec(1u64..5, 2..8),
        eta_pct in 30u64..=100,
        blocks in 1usize..80,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = Ratio::new(eta_pct, 100);
        let mut dag = DagLedger::<()>::new(ChainWeights::from_stakes(stakes.clone()).unwrap(), eta).unwrap();
        let mut prev_aw: BTreeMap<u64, Ratio<u64>> = BTreeMap::new();
        let mut prev_status: BTreeMap<u64, BlockStatus> = BTreeMap::new();
        for t in 1..=blocks as u64 {
            use rand::Rng;
            let ids: Vec<u64> = dag.blocks().map(|b| b.id).collect();
            let parents: std::collections::BTreeSet<u64> = (0..rng.gen_range(1..=3)).map(|_| ids[rng.gen_range(0..ids.len())]).collect();
            attach(&mut dag, rng.gen_range(0..stakes.len()), &parents.into_iter().collect::<Vec<_>>(), t);
            dag.update_confirmations(t);
            for b in dag.blocks() {
                let aw = dag.aggregated_weight(b.id).unwrap();
                prop_assert!(aw > Ratio::from_integer(0) && aw <= Ratio::from_integer(1));
                if let Some(&p) = prev_aw.get(&b.id) {
                    prop_assert!(aw >= p);
                }
                if let Some(&s) = prev_status.get(&b.id) {
                    prop_assert!(rank(b.status) >= rank(s));
                }
                if b.status == BlockStatus::Confirmed {
                    prop_assert!(aw >= eta);
                } else {
                    prop_assert!(aw < eta);
                }
                let is_tip = b.id != GENESIS && dag.approvers(b.id).is_empty();
                prop_assert_eq!(dag.tips().contains(&b.id), is_tip);
                prop_assert_eq!(b.status == BlockStatus::Tip, is_tip && aw < eta);
                for &p in &b.parents {
                    prop_assert!(dag.get(p).unwrap().attach_time < b.attach_time);
                }
                prev_aw.insert(b.id, aw);
                prev_status.insert(b.id, b.status);
            }
        }
    }

    #[test]
    fn weights_match_reachability(seed in any::<u64>(), stakes in prop::collection::vec(1u64..4, 1..10), blocks in 1usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dag = random_dag(&mut rng, &stakes, blocks, Ratio::new(2, 3));
        for b in dag.blocks() {
            prop_assert_eq!(dag.aggregated_weight(b.id).unwrap(), brute_force_aw(&dag, &stakes, b.id));
        }
    }
}

#[test]
fn two_epoch_example_weights_and_statuses() {
    let (mut dag, mut z) = two_epoch_example();
    assert_eq!(
        dag.aggregated_weight(z[0]).unwrap(),
        omega(&[0, 1, 2, 3], 6)
    );
    for &id in &z[1..4] {
        assert_eq!(dag.aggregated_weight(id).unwrap(), Ratio::new(1, 6));
        assert_eq!(dag.get(id).unwrap().status, BlockStatus::Tip);
    }
    assert_eq!(dag.get(z[0]).unwrap().status, BlockStatus::Unconfirmed);

    second_epoch(&mut dag, &mut z);
    assert_eq!(dag.aggregated_weight(z[0]).unwrap(), Ratio::from_integer(1));
    assert_eq!(dag.get(z[0]).unwrap().status, BlockStatus::Confirmed);
    assert_eq!(dag.aggregated_weight(z[1]).unwrap(), omega(&[1, 4], 6));
    assert_eq!(dag.aggregated_weight(z[2]).unwrap(), omega(&[2, 4], 6));
    assert_eq!(dag.aggregated_weight(z[3]).unwrap(), omega(&[3, 5], 6));
    for &id in &z[1..4] {
        assert_eq!(dag.get(id).unwrap().status, BlockStatus::Unconfirmed);
    }
    assert_eq!(
        dag.tips().iter().copied().collect::<Vec<_>>(),
        vec![z[4], z[5]]
    );
}

#[test]
fn chain_of_three_blocks() {
    let mut dag =
        DagLedger::<()>::new(ChainWeights::equal(4).unwrap(), Ratio::new(67, 100)).unwrap();
    let a = attach(&mut dag, 0, &[GENESIS], 1);
    let b = attach(&mut dag, 1, &[a], 2);
    attach(&mut dag, 2, &[b], 3);
    assert_eq!(dag.aggregated_weight(a).unwrap(), Ratio::new(3, 4));
    assert_eq!(
        dag.aggregated_weight(a).unwrap(),
        brute_force_aw(&dag, &[1, 1, 1, 1], a)
    );
    assert_eq!(dag.update_confirmations(3), vec![a]);
    assert!(dag.update_confirmations(4).is_empty());
}

#[test]
fn rejected_attachment_leaves_ledger_unchanged() {
    let mut dag = DagLedger::<()>::new(ChainWeights::equal(2).unwrap(), Ratio::new(1, 2)).unwrap();
    let before = dag.snapshot();
    let err = dag.attach(NewBlock {
        id: 5,
        proposer: 0,
        epoch_issued: 1,
        payload: (),
        parents: vec![99],
        attach_time: 1,
    });
    assert!(err.is_err());
    assert_eq!(dag.snapshot(), before);
}

#[test]
fn honest_pairs_are_uniform() {
    let mut dag =
        DagLedger::<()>::new(ChainWeights::equal(10).unwrap(), Ratio::new(67, 100)).unwrap();
    for c in 0..10 {
        attach(&mut dag, c, &[GENESIS], 1);
    }
    assert_eq!(dag.tips().len(), 10);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trials = 10_000;
    let mut counts: BTreeMap<(u64, u64), u32> = BTreeMap::new();
    for _ in 0..trials {
        let mut s = dag.select_tips_honest(2, &mut rng);
        s.sort_unstable();
        *counts.entry((s[0], s[1])).or_default() += 1;
    }
    assert_eq!(counts.len(), 45);
    let p = 1.0 / 45.0;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    for (&pair, &c) in &counts {
        assert!(
            (c as f64 - trials as f64 * p).abs() <= 3.0 * sigma + 1.0,
            "pair {pair:?} drawn {c} times"
        );
    }
}

#[test]
fn selection_edge_cases() {
    let mut dag =
        DagLedger::<()>::new(ChainWeights::equal(3).unwrap(), Ratio::new(67, 100)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(dag.select_tips_honest(2, &mut rng), vec![GENESIS]);
    let a = attach(&mut dag, 0, &[GENESIS], 1);
    assert_eq!(dag.select_tips_honest(2, &mut rng), vec![a]);
}

#[test]
fn orphanage_on_tips() {
    let mut dag =
        DagLedger::<()>::new(ChainWeights::equal(3).unwrap(), Ratio::new(67, 100)).unwrap();
    let h1 = attach(&mut dag, 0, &[GENESIS], 1);
    let h2 = attach(&mut dag, 1, &[GENESIS], 1);
    assert_eq!(
        dag.select_tips_orphanage(2, 2, OrphanageScope::Tips),
        vec![h1, h2]
    );
    let a1 = attach(&mut dag, 2, &[GENESIS], 5);
    let a2 = attach(&mut dag, 2, &[GENESIS], 4);
    assert_eq!(
        dag.select_tips_orphanage(2, 2, OrphanageScope::Tips),
        vec![a2, a1]
    );
    assert_eq!(
        dag.select_tips_orphanage(3, 2, OrphanageScope::Tips),
        vec![a2, a1, h1]
    );
}

#[test]
fn superblock_draw_is_uniform_within_a_chain() {
    let mut dag = DagLedger::<()>::new(ChainWeights::equal(2).unwrap(), Ratio::new(1, 1)).unwrap();
    let mut mine = Vec::new();
    for t in 1..=3 {
        mine.push(attach(&mut dag, 0, &[GENESIS], t));
    }
    let solo = attach(&mut dag, 1, &mine, 4);
    attach(&mut dag, 0, &[solo], 5);
    dag.update_confirmations(10);
    let window = LedgerEpoch {
        index: 1,
        start: 0,
        end: 20,
    };
    let empty = LedgerEpoch {
        index: 2,
        start: 20,
        end: 40,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert!(dag
        .assemble_confirmed_superblock(empty, &mut rng)
        .is_empty());
    let trials = 10_000;
    let mut counts: BTreeMap<u64, u32> = BTreeMap::new();
    for _ in 0..trials {
        let sb = dag.assemble_confirmed_superblock(window, &mut rng);
        assert_eq!(sb[&1], solo);
        *counts.entry(sb[&0]).or_default() += 1;
    }
    assert_eq!(counts.keys().copied().collect::<Vec<_>>(), mine);
    let p = 1.0 / 3.0;
    let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
    for &c in counts.values() {
        assert!((c as f64 - trials as f64 * p).abs() <= 3.0 * sigma);
    }
}
