//! Shared DAG ledger with stake-weighted confirmation.
//!
//! A block's aggregated weight is the stake of its own chain plus that of
//! every distinct chain with a block approving it, directly or transitively.
//! Approver chains are cached per block as a bitset, so at most 64 chains.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::ChainId;

pub type BlockId = u64;
pub const GENESIS: BlockId = 0;
pub const MAX_CHAINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("unknown parent {0}")]
    UnknownParent(BlockId),
    #[error("block id {0} already present")]
    DuplicateId(BlockId),
    #[error("block {0} has no parents")]
    NoParents(BlockId),
    #[error("parent {parent} attached after block {block}")]
    ParentFromFuture { block: BlockId, parent: BlockId },
    #[error("chain {0} has no weight entry")]
    UnknownChain(ChainId),
    #[error("weights need 1..={MAX_CHAINS} positive stakes")]
    BadWeights,
    #[error("threshold must lie in (0, 1]")]
    BadThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockStatus {
    Tip,
    Unconfirmed,
    Confirmed,
}

/// Chain weights as integer stakes; `ω_j = stake_j / Σ stake`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainWeights {
    stakes: Vec<u64>,
    total: u64,
}

impl ChainWeights {
    pub fn equal(n: usize) -> Result<Self, DagError> {
        Self::from_stakes(vec![1; n])
    }

    pub fn from_stakes(stakes: Vec<u64>) -> Result<Self, DagError> {
        if stakes.is_empty() || stakes.len() > MAX_CHAINS || stakes.contains(&0) {
            return Err(DagError::BadWeights);
        }
        let total = stakes.iter().sum();
        Ok(ChainWeights { stakes, total })
    }

    pub fn len(&self) -> usize {
        self.stakes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stakes.is_empty()
    }

    pub fn weight(&self, chain: ChainId) -> Ratio<u64> {
        Ratio::new(self.stakes[chain], self.total)
    }

    fn stake_of_set(&self, bits: u64) -> u64 {
        (0..self.stakes.len())
            .filter(|&c| bits >> c & 1 == 1)
            .map(|c| self.stakes[c])
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct DagBlock<P> {
    pub id: BlockId,
    pub proposer: ChainId,
    pub epoch_issued: u64,
    pub payload: P,
    pub parents: Vec<BlockId>,
    pub status: BlockStatus,
    pub attach_time: u64,
    pub confirm_time: Option<u64>,
    /// Bit `c` set when chain `c` proposed or approves this block.
    pub approver_chains: u64,
    pub depth: u32,
}

/// A block about to be attached.
#[derive(Debug, Clone)]
pub struct NewBlock<P> {
    pub id: BlockId,
    pub proposer: ChainId,
    pub epoch_issued: u64,
    pub payload: P,
    pub parents: Vec<BlockId>,
    pub attach_time: u64,
}

/// Window of time, `[start, end)`, whose confirmations feed one super-block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerEpoch {
    pub index: u64,
    pub start: u64,
    pub end: u64,
}

/// Which candidates the orphanage strategy draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrphanageScope {
    Tips,
    Blocks,
}

#[derive(Debug, Clone)]
pub struct DagLedger<P> {
    blocks: BTreeMap<BlockId, DagBlock<P>>,
    children: BTreeMap<BlockId, Vec<BlockId>>,
    tips: BTreeSet<BlockId>,
    weights: ChainWeights,
    /// Confirmation needs `stake * eta_den >= total * eta_num`.
    eta: Ratio<u64>,
    by_chain: Vec<Vec<BlockId>>,
    candidates: BTreeSet<BlockId>,
    confirm_log: Vec<(u64, BlockId)>,
    next_id: BlockId,
}

impl<P: Default> DagLedger<P> {
    pub fn new(weights: ChainWeights, eta: Ratio<u64>) -> Result<Self, DagError> {
        if eta <= Ratio::from_integer(0) || eta > Ratio::from_integer(1) {
            return Err(DagError::BadThreshold);
        }
        let n = weights.len();
        let genesis = DagBlock {
            id: GENESIS,
            proposer: 0,
            epoch_issued: 0,
            payload: P::default(),
            parents: Vec::new(),
            status: BlockStatus::Confirmed,
            attach_time: 0,
            confirm_time: Some(0),
            approver_chains: if n == 64 { u64::MAX } else { (1u64 << n) - 1 },
            depth: 0,
        };
        Ok(DagLedger {
            blocks: BTreeMap::from([(GENESIS, genesis)]),
            children: BTreeMap::new(),
            tips: BTreeSet::new(),
            weights,
            eta,
            by_chain: vec![Vec::new(); n],
            candidates: BTreeSet::new(),
            confirm_log: Vec::new(),
            next_id: 1,
        })
    }
}

impl<P> DagLedger<P> {
    pub fn weights(&self) -> &ChainWeights {
        &self.weights
    }

    pub fn eta(&self) -> Ratio<u64> {
        self.eta
    }

    pub fn next_id(&mut self) -> BlockId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    pub fn get(&self, id: BlockId) -> Option<&DagBlock<P>> {
        self.blocks.get(&id)
    }

    pub fn get_mut_payload(&mut self, id: BlockId) -> Option<&mut P> {
        self.blocks.get_mut(&id).map(|b| &mut b.payload)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &DagBlock<P>> {
        self.blocks.values()
    }

    pub fn tips(&self) -> &BTreeSet<BlockId> {
        &self.tips
    }

    pub fn approvers(&self, id: BlockId) -> &[BlockId] {
        self.children.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn blocks_of(&self, chain: ChainId) -> &[BlockId] {
        &self.by_chain[chain]
    }

    pub fn confirm_log(&self) -> &[(u64, BlockId)] {
        &self.confirm_log
    }

    pub fn attach(&mut self, block: NewBlock<P>) -> Result<BlockId, DagError> {
        let id = block.id;
        if self.blocks.contains_key(&id) {
            return Err(DagError::DuplicateId(id));
        }
        if block.parents.is_empty() {
            return Err(DagError::NoParents(id));
        }
        if block.proposer >= self.weights.len() {
            return Err(DagError::UnknownChain(block.proposer));
        }
        let mut depth = 0;
        for &p in &block.parents {
            let parent = self.blocks.get(&p).ok_or(DagError::UnknownParent(p))?;
            if parent.attach_time > block.attach_time {
                return Err(DagError::ParentFromFuture {
                    block: id,
                    parent: p,
                });
            }
            depth = depth.max(parent.depth + 1);
        }
        let mut parents = block.parents;
        parents.sort_unstable();
        parents.dedup();
        let bit = 1u64 << block.proposer;

        for &p in &parents {
            self.children.entry(p).or_default().push(id);
            self.tips.remove(&p);
            let pb = self.blocks.get_mut(&p).expect("checked above");
            if pb.status == BlockStatus::Tip {
                pb.status = BlockStatus::Unconfirmed;
            }
        }
        // Spread the proposer's bit through the ancestry, stopping where it is already set.
        let mut stack = parents.clone();
        while let Some(x) = stack.pop() {
            let b = self.blocks.get_mut(&x).expect("ancestors exist");
            if b.approver_chains & bit != 0 {
                continue;
            }
            b.approver_chains |= bit;
            if b.status != BlockStatus::Confirmed {
                self.candidates.insert(x);
            }
            stack.extend_from_slice(&b.parents);
        }

        self.blocks.insert(
            id,
            DagBlock {
                id,
                proposer: block.proposer,
                epoch_issued: block.epoch_issued,
                payload: block.payload,
                parents,
                status: BlockStatus::Tip,
                attach_time: block.attach_time,
                confirm_time: None,
                approver_chains: bit,
                depth,
            },
        );
        self.tips.insert(id);
        self.candidates.insert(id);
        self.by_chain[block.proposer].push(id);
        self.next_id = self.next_id.max(id + 1);
        Ok(id)
    }

    pub fn aggregated_weight(&self, id: BlockId) -> Option<Ratio<u64>> {
        let b = self.blocks.get(&id)?;
        Some(Ratio::new(
            self.weights.stake_of_set(b.approver_chains),
            self.weights.total,
        ))
    }

    fn meets_eta(&self, bits: u64) -> bool {
        let stake = self.weights.stake_of_set(bits) as u128;
        stake * *self.eta.denom() as u128 >= self.weights.total as u128 * *self.eta.numer() as u128
    }

    /// Flips every block whose weight reached the threshold; returns them in id order.
    pub fn update_confirmations(&mut self, now: u64) -> Vec<BlockId> {
        let cands = std::mem::take(&mut self.candidates);
        let mut out = Vec::new();
        for id in cands {
            let bits = self.blocks[&id].approver_chains;
            if self.meets_eta(bits) {
                let b = self.blocks.get_mut(&id).expect("candidate exists");
                if b.status != BlockStatus::Confirmed {
                    b.status = BlockStatus::Confirmed;
                    b.confirm_time = Some(now);
                    self.confirm_log.push((now, id));
                    out.push(id);
                }
            }
        }
        out
    }

    /// Deepest confirmed block, lowest id on ties; the fallback parent.
    pub fn deepest_confirmed(&self) -> BlockId {
        self.confirm_log
            .iter()
            .map(|&(_, id)| id)
            .chain(std::iter::once(GENESIS))
            .max_by(|a, b| {
                self.blocks[a]
                    .depth
                    .cmp(&self.blocks[b].depth)
                    .then(b.cmp(a))
            })
            .expect("genesis always present")
    }

    /// Uniform sample of `min(K, |tips|)` tips.
    pub fn select_tips_honest<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<BlockId> {
        self.select_tips_filtered(k, rng, |_| true, false)
    }

    /// Uniform sample among tips passing `accept`, optionally at most one per proposer chain.
    pub fn select_tips_filtered<R: Rng, F: Fn(&DagBlock<P>) -> bool>(
        &self,
        k: usize,
        rng: &mut R,
        accept: F,
        one_per_chain: bool,
    ) -> Vec<BlockId> {
        let mut pool: Vec<BlockId> = self
            .tips
            .iter()
            .copied()
            .filter(|id| accept(&self.blocks[id]))
            .collect();
        if pool.is_empty() {
            return vec![self.deepest_confirmed()];
        }
        pool.shuffle(rng);
        let mut chosen = Vec::with_capacity(k);
        let mut chains = 0u64;
        for id in pool {
            if chosen.len() == k {
                break;
            }
            let bit = 1u64 << self.blocks[&id].proposer;
            if one_per_chain && chains & bit != 0 {
                continue;
            }
            chains |= bit;
            chosen.push(id);
        }
        chosen
    }

    /// Attacker's own candidates oldest first, then the globally oldest ones.
    pub fn select_tips_orphanage(
        &self,
        k: usize,
        attacker: ChainId,
        scope: OrphanageScope,
    ) -> Vec<BlockId> {
        let order = |a: &BlockId, b: &BlockId| {
            self.blocks[a]
                .attach_time
                .cmp(&self.blocks[b].attach_time)
                .then(a.cmp(b))
        };
        let mut chosen: Vec<BlockId> = Vec::with_capacity(k);
        match scope {
            OrphanageScope::Tips => {
                let mut own: Vec<BlockId> = self
                    .tips
                    .iter()
                    .copied()
                    .filter(|id| self.blocks[id].proposer == attacker)
                    .collect();
                own.sort_by(order);
                let mut rest: Vec<BlockId> = self
                    .tips
                    .iter()
                    .copied()
                    .filter(|id| self.blocks[id].proposer != attacker)
                    .collect();
                rest.sort_by(order);
                chosen.extend(own.into_iter().chain(rest).take(k));
                if chosen.is_empty() {
                    chosen.push(self.deepest_confirmed());
                }
            }
            OrphanageScope::Blocks => {
                // Per-chain lists and the id-ordered map are already oldest first.
                for &id in &self.by_chain[attacker] {
                    if chosen.len() == k {
                        break;
                    }
                    chosen.push(id);
                }
                let mut all: Vec<BlockId> = Vec::new();
                for (&id, b) in &self.blocks {
                    if all.len() >= k + chosen.len() {
                        break;
                    }
                    if b.proposer != attacker || id == GENESIS {
                        all.push(id);
                    }
                }
                all.sort_by(order);
                for id in all {
                    if chosen.len() == k {
                        break;
                    }
                    if !chosen.contains(&id) {
                        chosen.push(id);
                    }
                }
            }
        }
        chosen
    }

    /// One block per chain among those confirmed inside the window, drawn uniformly.
    pub fn assemble_confirmed_superblock<R: Rng>(
        &self,
        window: LedgerEpoch,
        rng: &mut R,
    ) -> BTreeMap<ChainId, BlockId> {
        let lo = self.confirm_log.partition_point(|&(t, _)| t < window.start);
        let hi = self.confirm_log.partition_point(|&(t, _)| t < window.end);
        let mut per_chain: BTreeMap<ChainId, Vec<BlockId>> = BTreeMap::new();
        for &(_, id) in &self.confirm_log[lo..hi] {
            if id != GENESIS {
                per_chain
                    .entry(self.blocks[&id].proposer)
                    .or_default()
                    .push(id);
            }
        }
        per_chain
            .into_iter()
            .map(|(c, mut ids)| {
                ids.sort_unstable();
                (c, ids[rng.gen_range(0..ids.len())])
            })
            .collect()
    }

    /// One line per block: id, proposer, epoch, parents, status, weight.
    pub fn snapshot(&self) -> String {
        let mut out = String::from("# id proposer epoch parents status aw\n");
        for b in self.blocks.values() {
            let parents = if b.parents.is_empty() {
                "-".to_string()
            } else {
                b.parents
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let aw = self.aggregated_weight(b.id).expect("block exists");
            let status = match b.status {
                BlockStatus::Tip => "tip",
                BlockStatus::Unconfirmed => "unconfirmed",
                BlockStatus::Confirmed => "confirmed",
            };
            writeln!(
                out,
                "{} {} {} {} {} {}",
                b.id, b.proposer, b.epoch_issued, parents, status, aw
            )
            .expect("writing to a string");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ledger(n: usize, eta: (u64, u64)) -> DagLedger<()> {
        DagLedger::new(ChainWeights::equal(n).unwrap(), Ratio::new(eta.0, eta.1)).unwrap()
    }

    fn add(l: &mut DagLedger<()>, chain: ChainId, parents: &[BlockId], t: u64) -> BlockId {
        let id = l.next_id();
        l.attach(NewBlock {
            id,
            proposer: chain,
            epoch_issued: 0,
            payload: (),
            parents: parents.to_vec(),
            attach_time: t,
        })
        .unwrap()
    }

    #[test]
    fn first_block_becomes_sole_tip() {
        let mut l = ledger(3, (67, 100));
        let a = add(&mut l, 1, &[GENESIS], 1);
        assert_eq!(l.get(GENESIS).unwrap().status, BlockStatus::Confirmed);
        assert_eq!(l.tips().iter().copied().collect::<Vec<_>>(), vec![a]);
        assert_eq!(l.aggregated_weight(a).unwrap(), Ratio::new(1, 3));
    }

    #[test]
    fn bad_attachments_leave_ledger_unchanged() {
        let mut l = ledger(3, (67, 100));
        let a = add(&mut l, 0, &[GENESIS], 5);
        let before = l.snapshot();
        let bad = NewBlock {
            id: 99,
            proposer: 1,
            epoch_issued: 0,
            payload: (),
            parents: vec![a, 42],
            attach_time: 6,
        };
        assert_eq!(l.attach(bad), Err(DagError::UnknownParent(42)));
        let dup = NewBlock {
            id: a,
            proposer: 1,
            epoch_issued: 0,
            payload: (),
            parents: vec![GENESIS],
            attach_time: 6,
        };
        assert_eq!(l.attach(dup), Err(DagError::DuplicateId(a)));
        assert_eq!(l.snapshot(), before);
    }

    #[test]
    fn approval_by_all_others_confirms() {
        let mut l = ledger(3, (67, 100));
        let a = add(&mut l, 0, &[GENESIS], 1);
        let b = add(&mut l, 1, &[a], 2);
        assert!(l.update_confirmations(2).is_empty());
        add(&mut l, 2, &[b], 3);
        assert_eq!(l.update_confirmations(3), vec![a]);
        assert!(l.update_confirmations(4).is_empty());
        assert_eq!(l.get(a).unwrap().confirm_time, Some(3));
    }

    #[test]
    fn same_chain_counts_once() {
        let mut l = ledger(4, (1, 2));
        let a = add(&mut l, 0, &[GENESIS], 1);
        let mut head = a;
        for t in 2..6 {
            head = add(&mut l, 1, &[head], t);
        }
        assert_eq!(l.aggregated_weight(a).unwrap(), Ratio::new(1, 2));
    }

    #[test]
    fn honest_sampling_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = ledger(2, (1, 1));
        assert_eq!(l.select_tips_honest(2, &mut rng), vec![GENESIS]);
        let a = add(&mut l, 0, &[GENESIS], 1);
        assert_eq!(l.select_tips_honest(2, &mut rng), vec![a]);
    }

    #[test]
    fn orphanage_on_tips() {
        let mut l = ledger(3, (1, 1));
        let a = add(&mut l, 0, &[GENESIS], 1);
        let b = add(&mut l, 1, &[GENESIS], 2);
        let c = add(&mut l, 2, &[GENESIS], 2);
        let d = add(&mut l, 2, &[GENESIS], 3);
        assert_eq!(
            l.select_tips_orphanage(2, 2, OrphanageScope::Tips),
            vec![c, d]
        );
        assert_eq!(
            l.select_tips_orphanage(2, 0, OrphanageScope::Tips),
            vec![a, b]
        );
        // b and c tie on time; lower id first.
        assert_eq!(
            l.select_tips_orphanage(3, 0, OrphanageScope::Tips),
            vec![a, b, c]
        );
    }

    #[test]
    fn orphanage_on_blocks_reaches_past_the_tips() {
        let mut l = ledger(3, (1, 1));
        let a = add(&mut l, 0, &[GENESIS], 1);
        let b = add(&mut l, 1, &[a], 2);
        let c = add(&mut l, 2, &[b], 3);
        assert_eq!(
            l.select_tips_orphanage(2, 2, OrphanageScope::Blocks),
            vec![c, GENESIS]
        );
        assert_eq!(
            l.select_tips_orphanage(3, 1, OrphanageScope::Blocks),
            vec![b, GENESIS, a]
        );
    }

    #[test]
    fn superblock_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = ledger(2, (1, 1));
        let w = LedgerEpoch {
            index: 0,
            start: 0,
            end: 10,
        };
        assert!(l.assemble_confirmed_superblock(w, &mut rng).is_empty());
        let a = add(&mut l, 0, &[GENESIS], 1);
        add(&mut l, 1, &[a], 2);
        l.update_confirmations(2);
        let sb = l.assemble_confirmed_superblock(w, &mut rng);
        assert_eq!(sb, BTreeMap::from([(0, a)]));
    }
}
