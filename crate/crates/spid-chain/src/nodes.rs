//! Behaviour of workers, honest transaction sources and spamming chains.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coding::{group_sizes, worker_update, ShardTriple, StoredShards, StragglerProfile};
use crate::dag::OrphanageScope;
use crate::ledger::ChainId;
use crate::{Amount, Transfers};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRole {
    CommitteeEligible,
    Worker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: u64,
    pub chain: ChainId,
    pub role: NodeRole,
    pub stake: u64,
    pub straggler_p: f64,
    pub honest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryPolicy {
    pub spam_rate: f64,
    pub parent_strategy: OrphanageScope,
    pub invalid_tx_fraction: f64,
}

impl Default for AdversaryPolicy {
    fn default() -> Self {
        AdversaryPolicy {
            spam_rate: 0.0,
            parent_strategy: OrphanageScope::Blocks,
            invalid_tx_fraction: 0.5,
        }
    }
}

/// Message timing: fixed latency plus size over bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkModel {
    pub latency_us: u64,
    pub bandwidth_bps: u64,
}

impl LinkModel {
    pub fn delay_us(&self, bytes: u64) -> u64 {
        self.latency_us + (bytes as u128 * 8 * 1_000_000 / self.bandwidth_bps.max(1) as u128) as u64
    }
}

/// Bytes of a matrix payload with `entries` entries.
pub fn payload_bytes(entries: u64) -> u64 {
    8 * entries
}

/// A delivered worker result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerReply {
    pub shards: StoredShards<Amount>,
    pub arrives_at: u64,
}

/// Timing inputs for one task round.
#[derive(Debug, Clone, Copy)]
pub struct TaskTiming {
    pub dispatched_at: u64,
    pub link: LinkModel,
    pub row_cost_us: u64,
}

/// Applies the task and schedules the reply; stragglers stay silent.
pub fn worker_respond(
    node: &NodeSpec,
    straggler: bool,
    stored: &StoredShards<Amount>,
    task: &ShardTriple<Amount>,
    timing: TaskTiming,
) -> Option<WorkerReply> {
    if straggler || node.role != NodeRole::Worker {
        return None;
    }
    let shards = worker_update(stored, task).ok()?;
    let rows = task.a.rows.rows() as u64;
    let cols = task.a.rows.cols() as u64;
    let t = timing.dispatched_at
        + timing.link.delay_us(payload_bytes(3 * rows * cols))
        + 3 * rows * timing.row_cost_us
        + timing.link.delay_us(payload_bytes(2 * rows * cols));
    Some(WorkerReply {
        shards,
        arrives_at: t,
    })
}

/// Chooses `round(λn)` stragglers, apportioned over the power-of-two groups by
/// largest remainder and drawn at random inside each group. Every group keeps
/// at least one responsive worker unless `λ = 1`.
pub fn assign_stragglers<R: Rng>(n: usize, lambda: f64, rng: &mut R) -> StragglerProfile {
    let sizes = group_sizes(n);
    let total = ((lambda * n as f64).round() as usize).min(n);
    let cap = |s: usize| if total == n { s } else { s - 1 };
    let exact: Vec<f64> = sizes.iter().map(|&s| lambda * s as f64).collect();
    let mut counts: Vec<usize> = exact
        .iter()
        .zip(&sizes)
        .map(|(&e, &s)| (e.floor() as usize).min(cap(s)))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra)
            .expect("finite")
            .then(sizes[b].cmp(&sizes[a]))
    });
    while counts.iter().sum::<usize>() < total {
        let before = counts.iter().sum::<usize>();
        for &g in &order {
            if counts.iter().sum::<usize>() == total {
                break;
            }
            if counts[g] < cap(sizes[g]) {
                counts[g] += 1;
            }
        }
        if counts.iter().sum::<usize>() == before {
            break;
        }
    }
    let mut stragglers = Vec::new();
    let mut first = 0;
    for (&s, &c) in sizes.iter().zip(&counts) {
        stragglers.extend(sample(rng, s, c).into_iter().map(|k| first + k));
        first += s;
    }
    stragglers.sort_unstable();
    StragglerProfile::from_set(n, &stragglers)
}

/// One transfer with its identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tx {
    pub id: u64,
    pub source_chain: ChainId,
    pub dest_chain: ChainId,
    pub from: usize,
    pub to: usize,
    pub amount: Amount,
}

/// Groups transfers into per-destination matrices.
pub fn matrices_from_txs(txs: &[Tx], accounts: usize, epoch: u64) -> Vec<Transfers> {
    let mut by_dest: BTreeMap<ChainId, Transfers> = BTreeMap::new();
    for tx in txs {
        by_dest
            .entry(tx.dest_chain)
            .or_insert_with(|| Transfers::new(tx.source_chain, tx.dest_chain, epoch, accounts))
            .transfer(tx.from, tx.to, tx.amount)
            .expect("generated amounts are non-negative");
    }
    by_dest.into_values().collect()
}

/// Draws distinct active accounts and a destination for each.
fn draw_transfers<R: Rng>(
    rng: &mut R,
    chain: ChainId,
    chains: usize,
    balances: &[Amount],
    count: usize,
    next_id: &mut u64,
) -> Vec<Tx> {
    let m = balances.len();
    let mut out = Vec::with_capacity(count);
    if chains < 2 || m == 0 {
        return out;
    }
    for from in sample(rng, m, count.min(m)).into_iter() {
        let mut dest = rng.gen_range(0..chains - 1);
        if dest >= chain {
            dest += 1;
        }
        let to = rng.gen_range(0..m);
        *next_id += 1;
        out.push(Tx {
            id: *next_id,
            source_chain: chain,
            dest_chain: dest,
            from,
            to,
            amount: 0,
        });
    }
    out
}

/// Honest transfers: each active account spends at most 2% of its balance.
pub fn make_honest_txs<R: Rng>(
    rng: &mut R,
    chain: ChainId,
    chains: usize,
    balances: &[Amount],
    count: usize,
    next_id: &mut u64,
) -> Vec<Tx> {
    let mut txs = draw_transfers(rng, chain, chains, balances, count, next_id);
    txs.retain_mut(|tx| {
        let cap = balances[tx.from] / 50;
        if cap < 1 {
            return false;
        }
        tx.amount = rng.gen_range(1..=cap);
        true
    });
    txs
}

/// Spam block: `floor(fraction × active)` of the active accounts overspend,
/// the rest send small valid amounts. Returns the transfers and the tampered accounts.
pub fn make_invalid_block<R: Rng>(
    rng: &mut R,
    chain: ChainId,
    chains: usize,
    policy: &AdversaryPolicy,
    balances: &[Amount],
    active: usize,
    next_id: &mut u64,
) -> (Vec<Tx>, Vec<usize>) {
    let mut txs = draw_transfers(rng, chain, chains, balances, active, next_id);
    let bad = (policy.invalid_tx_fraction * txs.len() as f64).floor() as usize;
    let mut tampered = Vec::with_capacity(bad);
    for (i, tx) in txs.iter_mut().enumerate() {
        let bal = balances[tx.from].max(0);
        if i < bad {
            tx.amount = bal + 1 + rng.gen_range(0..=bal);
            tampered.push(tx.from);
        } else {
            tx.amount = if bal >= 2 {
                rng.gen_range(1..=bal / 2)
            } else {
                0
            };
        }
    }
    txs.retain(|tx| tx.amount > 0);
    tampered.sort_unstable();
    (txs, tampered)
}

/// Issuance times per chain over `[0, duration_us)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IssuanceSchedule {
    pub per_chain: BTreeMap<ChainId, Vec<u64>>,
}

impl IssuanceSchedule {
    pub fn count(&self, chains: &[ChainId]) -> usize {
        chains
            .iter()
            .map(|c| self.per_chain.get(c).map_or(0, Vec::len))
            .sum()
    }
}

/// Evenly spaced slots at `rate_per_min` for a faction, dealt round-robin to its chains.
pub fn faction_slots(
    rate_per_min: f64,
    chains: &[ChainId],
    duration_us: u64,
    phase: f64,
) -> IssuanceSchedule {
    let mut sched = IssuanceSchedule::default();
    for &c in chains {
        sched.per_chain.insert(c, Vec::new());
    }
    if rate_per_min <= 0.0 || chains.is_empty() {
        return sched;
    }
    let gap = 60e6 / rate_per_min;
    let mut s = 0u64;
    loop {
        let t = ((s as f64 + phase) * gap) as u64;
        if t >= duration_us {
            break;
        }
        let c = chains[s as usize % chains.len()];
        sched.per_chain.get_mut(&c).expect("inserted").push(t);
        s += 1;
    }
    sched
}

/// Splits the network rate `gamma` into `(1-μ)γ` honest and `μγ` adversarial issuance.
/// `phases` offsets each faction's slot grid by a fraction of one gap.
pub fn schedule_issuance(
    gamma: f64,
    mu: f64,
    honest: &[ChainId],
    adversarial: &[ChainId],
    duration_us: u64,
    phases: [f64; 2],
) -> IssuanceSchedule {
    let mut h = faction_slots((1.0 - mu) * gamma, honest, duration_us, phases[0]);
    let a = faction_slots(mu * gamma, adversarial, duration_us, phases[1]);
    h.per_chain.extend(a.per_chain);
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ten_percent_of_a_hundred_is_ten() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = assign_stragglers(100, 0.1, &mut rng);
        assert_eq!(p.probabilities.iter().filter(|&&x| x == 1.0).count(), 10);
        let p = assign_stragglers(20, 0.3, &mut rng);
        assert_eq!(p.straggler_set().len(), 6);
        let p = assign_stragglers(8, 1.0, &mut rng);
        assert_eq!(p.straggler_set().len(), 8);
    }

    #[test]
    fn issuance_counts() {
        let all: Vec<ChainId> = (0..10).collect();
        let s = schedule_issuance(100.0, 0.0, &all, &[], 60_000_000, [0.5, 0.25]);
        assert_eq!(s.count(&all), 100);
        let s = schedule_issuance(100.0, 0.0, &all, &[], 300_000_000, [0.5, 0.25]);
        assert_eq!(s.count(&all), 500);
        let (h, a): (Vec<ChainId>, Vec<ChainId>) = ((0..8).collect(), vec![8, 9]);
        let s = schedule_issuance(100.0, 0.55, &h, &a, 60_000_000, [0.5, 0.25]);
        assert_eq!(s.count(&a), 55);
        assert_eq!(s.count(&h), 45);
    }

    #[test]
    fn spam_fraction_is_floored() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pol = AdversaryPolicy::default();
        let mut id = 0;
        let (txs, bad) = make_invalid_block(&mut rng, 0, 3, &pol, &[100; 20], 10, &mut id);
        assert_eq!(bad.len(), 5);
        assert_eq!(txs.len(), 10);
        let all = AdversaryPolicy {
            invalid_tx_fraction: 1.0,
            ..pol
        };
        let (txs, bad) = make_invalid_block(&mut rng, 0, 3, &all, &[100; 20], 10, &mut id);
        assert_eq!(bad.len(), 10);
        assert!(txs.iter().all(|t| t.amount > 100));
    }

    #[test]
    fn stragglers_never_reply() {
        let node = NodeSpec {
            id: 0,
            chain: 0,
            role: NodeRole::Worker,
            stake: 1,
            straggler_p: 1.0,
            honest: true,
        };
        let plan =
            crate::coding::plan_groups(1, 1, &StragglerProfile::uniform(1, 0.0).unwrap()).unwrap();
        let z = crate::TokenMatrix::zeros(1, 1);
        let task = crate::coding::encode_epoch(&z, &z, &z, &plan, 1).remove(0);
        let stored = StoredShards::empty_like(&task);
        let timing = TaskTiming {
            dispatched_at: 0,
            link: LinkModel {
                latency_us: 100_000,
                bandwidth_bps: 20_000_000,
            },
            row_cost_us: 10,
        };
        assert!(worker_respond(&node, true, &stored, &task, timing).is_none());
        let r = worker_respond(&node, false, &stored, &task, timing).unwrap();
        assert_eq!(r.arrives_at, 100_000 + 9 + 30 + 100_000 + 6);
    }
}
