#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use rand::Rng;
use spid_chain::dag::{BlockId, ChainWeights, DagLedger, NewBlock, GENESIS};

/// Rank of the received Hadamard rows restricted to the data columns equals
/// the number of data blocks.
pub fn rank_decodable(size: usize, frozen: usize, received: &BTreeSet<usize>) -> bool {
    let data = size - frozen;
    let mut rows: Vec<Vec<Ratio<i64>>> = received
        .iter()
        .filter(|&&p| p < size)
        .map(|&p| {
            (0..data)
                .map(|k| Ratio::from_integer(if (p & k).count_ones() % 2 == 0 { 1 } else { -1 }))
                .collect()
        })
        .collect();
    let mut rank = 0;
    for col in 0..data {
        let Some(pivot) = (rank..rows.len()).find(|&r| rows[r][col] != Ratio::from_integer(0))
        else {
            continue;
        };
        rows.swap(rank, pivot);
        let p = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && row[col] != Ratio::from_integer(0) {
                let f = row[col] / p[col];
                for (v, &q) in row.iter_mut().zip(&p) {
                    *v -= f * q;
                }
            }
        }
        rank += 1;
    }
    rank == data
}

/// Chains whose blocks reach `id` through parent edges, plus its own chain.
pub fn brute_force_aw<P>(dag: &DagLedger<P>, stakes: &[u64], id: BlockId) -> Ratio<u64> {
    let total: u64 = stakes.iter().sum();
    if id == GENESIS {
        return Ratio::from_integer(1);
    }
    let mut chains = BTreeSet::new();
    for b in dag.blocks() {
        if b.id == GENESIS {
            continue;
        }
        let mut stack = vec![b.id];
        let mut seen = BTreeSet::new();
        while let Some(x) = stack.pop() {
            if x == id {
                chains.insert(b.proposer);
                break;
            }
            if seen.insert(x) {
                stack.extend(dag.get(x).unwrap().parents.iter().copied());
            }
        }
    }
    Ratio::new(chains.iter().map(|&c| stakes[c]).sum(), total)
}

pub fn naive_gini(x: &[u64]) -> Option<f64> {
    let total: u128 = x.iter().map(|&v| v as u128).sum();
    if total == 0 {
        return None;
    }
    let mut num: u128 = 0;
    for &a in x {
        for &b in x {
            num += a.abs_diff(b) as u128;
        }
    }
    Some(num as f64 / (2 * x.len() as u128 * total) as f64)
}

/// Random DAG over `chains` chains; every block picks 1..=3 earlier parents.
pub fn random_dag<R: Rng>(
    rng: &mut R,
    stakes: &[u64],
    blocks: usize,
    eta: Ratio<u64>,
) -> DagLedger<()> {
    let mut dag = DagLedger::new(ChainWeights::from_stakes(stakes.to_vec()).unwrap(), eta).unwrap();
    let mut ids = vec![GENESIS];
    for t in 1..=blocks as u64 {
        let k = rng.gen_range(1..=3usize.min(ids.len()));
        let mut parents = BTreeSet::new();
        while parents.len() < k {
            parents.insert(ids[rng.gen_range(0..ids.len())]);
        }
        let id = dag.next_id();
        dag.attach(NewBlock {
            id,
            proposer: rng.gen_range(0..stakes.len()),
            epoch_issued: t,
            payload: (),
            parents: parents.into_iter().collect(),
            attach_time: t,
        })
        .unwrap();
        dag.update_confirmations(t);
        ids.push(id);
    }
    dag
}

pub fn attach(dag: &mut DagLedger<()>, chain: usize, parents: &[BlockId], t: u64) -> BlockId {
    let id = dag.next_id();
    dag.attach(NewBlock {
        id,
        proposer: chain,
        epoch_issued: t,
        payload: (),
        parents: parents.to_vec(),
        attach_time: t,
    })
    .unwrap();
    id
}

/// Six equal-weight chains; `z[i]` is chain `i`'s block. Returns the ledger
/// after the first epoch and the block ids.
pub fn two_epoch_example() -> (DagLedger<()>, [BlockId; 6]) {
    let mut dag = DagLedger::new(ChainWeights::equal(6).unwrap(), Ratio::new(67, 100)).unwrap();
    let z1 = attach(&mut dag, 0, &[GENESIS], 1);
    let z2 = attach(&mut dag, 1, &[z1], 2);
    let z3 = attach(&mut dag, 2, &[z1], 2);
    let z4 = attach(&mut dag, 3, &[z1], 2);
    dag.update_confirmations(2);
    (dag, [z1, z2, z3, z4, 0, 0])
}

pub fn second_epoch(dag: &mut DagLedger<()>, z: &mut [BlockId; 6]) {
    z[4] = attach(dag, 4, &[z[1], z[2]], 3);
    z[5] = attach(dag, 5, &[z[3]], 3);
    dag.update_confirmations(3);
}

pub fn omega(chains: &[usize], n: u64) -> Ratio<u64> {
    Ratio::new(chains.len() as u64, n)
}

pub fn statuses(dag: &DagLedger<()>) -> BTreeMap<BlockId, spid_chain::dag::BlockStatus> {
    dag.blocks().map(|b| (b.id, b.status)).collect()
}

/// Aggregated weight of every block from one upward walk per block.
pub fn brute_force_all<P>(dag: &DagLedger<P>, stakes: &[u64]) -> BTreeMap<BlockId, Ratio<u64>> {
    let total: u64 = stakes.iter().sum();
    let mut chains: BTreeMap<BlockId, BTreeSet<usize>> = dag
        .blocks()
        .map(|b| (b.id, BTreeSet::from([b.proposer])))
        .collect();
    for b in dag.blocks() {
        let mut stack = b.parents.clone();
        let mut seen = BTreeSet::new();
        while let Some(x) = stack.pop() {
            if seen.insert(x) {
                chains.get_mut(&x).unwrap().insert(b.proposer);
                stack.extend(dag.get(x).unwrap().parents.iter().copied());
            }
        }
    }
    chains
        .into_iter()
        .map(|(id, set)| {
            let w = if id == GENESIS {
                total
            } else {
                set.iter().map(|&c| stakes[c]).sum()
            };
            (id, Ratio::new(w, total))
        })
        .collect()
}
