use std::cmp::Reverse;
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet, VecDeque};

use num_rational::Ratio;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{ConfigError, ScenarioConfig};
use super::metrics::{gini, Conservation, Counters, DoubleSpendStats, MetricsReport};
use crate::coding::{plan_groups, Layout, Partition, ShardKind, StoredShards};
use crate::dag::{
    BlockId, ChainWeights, DagBlock, DagLedger, LedgerEpoch, NewBlock, OrphanageScope, GENESIS,
};
use crate::edsc::{
    committee_size, digest, digest_matrices, dispatch_contract, propose_and_vote, select_committee,
    tip_worker_result, CommitteeCandidate, CommitteeSelection, Contract, ContractCall,
    ContractEffect, EventContext, EventKind, EventPools, EventRecord, TipState, Vote,
};
use crate::ledger::{apply_flows, balances, validate_block, ChainId, FlowAggregates};
use crate::nodes::{
    assign_stragglers, make_honest_txs, make_invalid_block, matrices_from_txs, payload_bytes,
    schedule_issuance, worker_respond, AdversaryPolicy, LinkModel, NodeRole, NodeSpec, TaskTiming,
    Tx,
};
use crate::{Amount, State, TokenMatrix, Transfers};

/// Where a block came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Origin {
    #[default]
    Genesis,
    Honest,
    Adversarial,
    /// Injected filler block.
    Regular,
    /// First block of double-spend pair `i`.
    Original(usize),
    /// Second block of pair `i`, replaying one transfer of the first.
    Replica(usize),
}

impl Origin {
    pub fn injected(self) -> bool {
        matches!(
            self,
            Origin::Regular | Origin::Original(_) | Origin::Replica(_)
        )
    }
}

/// Injected blocks carry identifiers only; their matrices stay empty.
#[derive(Debug, Clone, Default)]
pub struct BlockPayload {
    pub origin: Origin,
    pub txs: Vec<Tx>,
    pub matrices: Vec<Transfers>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    WindowClose(u64),
    Sample,
    AdvIssue(ChainId),
    AdvAttach(ChainId),
    Inject(usize),
    EpochStart(ChainId),
    Stage2(ChainId),
    Attach(ChainId),
    Stage4(ChainId),
}

struct Work {
    epoch: u64,
    committee: CommitteeSelection,
    txs: Vec<Tx>,
    matrices: Vec<Transfers>,
    parents: Vec<BlockId>,
    labels: Vec<BlockId>,
    validated: bool,
}

struct Chain {
    honest: bool,
    genesis: Vec<Amount>,
    layout: Layout,
    workers: Vec<NodeSpec>,
    stragglers: Vec<bool>,
    stored: Vec<Option<StoredShards<Amount>>>,
    candidates: Vec<CommitteeCandidate>,
    state: State,
    /// Super-blocks folded into `state`.
    flowed: usize,
    /// Length of this chain's ledger, a prefix of the global super-block list.
    view: usize,
    known_bad: BTreeSet<BlockId>,
    pools: EventPools,
    epoch: u64,
    slots: VecDeque<u64>,
    rng: ChaCha8Rng,
    work: Option<Work>,
    outbox: VecDeque<NewBlock<BlockPayload>>,
}

struct Injection {
    time: u64,
    proposer: ChainId,
    origin: Origin,
}

/// Everything a run produces.
pub struct SimOutput {
    pub report: MetricsReport,
    pub events: Vec<EventRecord>,
    pub dag_snapshot: String,
}

/// Independent random stream for `(seed, tag, index)`.
pub fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.to_le_bytes());
    h.update(index.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

const TAG_CHAIN: u64 = 1;
const TAG_ADVERSARY: u64 = 2;
const TAG_STRAGGLER: u64 = 3;
const TAG_WINDOW: u64 = 4;
const TAG_INJECT: u64 = 5;
const TAG_ISSUANCE: u64 = 6;

struct RoundResult {
    done_at: u64,
    ok: bool,
    responders: Vec<usize>,
}

/// Deterministic discrete-event run of one scenario.
pub struct Simulation {
    cfg: ScenarioConfig,
    link: LinkModel,
    vote_us: u64,
    end: u64,
    window: u64,
    now: u64,
    queue: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    seq: u64,
    dag: DagLedger<BlockPayload>,
    chains: Vec<Chain>,
    honest: Vec<ChainId>,
    superblocks: Vec<BTreeMap<ChainId, BlockId>>,
    canon_in: Vec<TokenMatrix>,
    canon_out: Vec<TokenMatrix>,
    /// Labeled block and the block whose attachment published the label.
    labels: BTreeMap<BlockId, BlockId>,
    confirmed_txs: HashSet<u64>,
    next_tx: u64,
    policy: AdversaryPolicy,
    injections: Vec<Injection>,
    inject_rng: ChaCha8Rng,
    pair_blocks: Vec<(Option<BlockId>, Option<BlockId>)>,
    counters: Counters,
    validated_blocks: u64,
    tip_series: Vec<(u64, usize)>,
    gini_series: Vec<(u64, Option<f64>)>,
    event_log: Vec<EventRecord>,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let n_chains = cfg.chains;
        let n_adv = cfg.adversarial_chains();
        let honest: Vec<ChainId> = (0..n_chains - n_adv).collect();
        let adversarial: Vec<ChainId> = (n_chains - n_adv..n_chains).collect();
        let end = cfg.duration_us();
        let weights = match &cfg.stakes {
            Some(s) => ChainWeights::from_stakes(s.clone()),
            None => ChainWeights::equal(n_chains),
        }
        .map_err(|e| ConfigError {
            field: "stakes",
            message: e.to_string(),
        })?;
        let eta = Ratio::new((cfg.eta * 1e6).round() as u64, 1_000_000);
        let dag = DagLedger::new(weights, eta).map_err(|e| ConfigError {
            field: "eta",
            message: e.to_string(),
        })?;

        let mut order_rng = stream_rng(cfg.seed, TAG_ISSUANCE, 0);
        let mut honest_order = honest.clone();
        honest_order.shuffle(&mut order_rng);
        let mut adversarial_order = adversarial.clone();
        adversarial_order.shuffle(&mut order_rng);
        let phases = [order_rng.gen::<f64>(), order_rng.gen::<f64>()];
        let gamma = match cfg.incoming_rate {
            Some(rate) => rate * honest.len() as f64 / (1.0 - cfg.mu),
            None => cfg.gamma,
        };
        let issuance = schedule_issuance(
            gamma,
            cfg.mu,
            &honest_order,
            &adversarial_order,
            end,
            phases,
        );
        let genesis: Vec<Amount> = cfg.genesis().into_iter().map(Amount::from).collect();
        let m = cfg.accounts;
        let n = cfg.workers;
        let mut chains = Vec::with_capacity(n_chains);
        for j in 0..n_chains {
            let profile = assign_stragglers(
                n,
                cfg.lambda,
                &mut stream_rng(cfg.seed, TAG_STRAGGLER, j as u64),
            );
            let layout = if cfg.coding_enabled {
                Layout::Coded(plan_groups(n, m, &profile).expect("validated sizes"))
            } else {
                Layout::Plain(Partition::new(n, m).expect("validated sizes"))
            };
            let is_honest = j < honest.len();
            let workers = (0..n)
                .map(|k| NodeSpec {
                    id: (j * 2 * n + n + k) as u64,
                    chain: j,
                    role: NodeRole::Worker,
                    stake: 1,
                    straggler_p: profile.probabilities[k],
                    honest: is_honest,
                })
                .collect();
            let candidates = (0..n)
                .map(|k| {
                    let id = (j * 2 * n + k) as u64;
                    CommitteeCandidate {
                        id,
                        stake: 1 + (k as u64 % 3),
                        secret: [cfg.seed.to_le_bytes(), id.to_le_bytes()].concat(),
                    }
                })
                .collect();
            let tag = if is_honest { TAG_CHAIN } else { TAG_ADVERSARY };
            chains.push(Chain {
                honest: is_honest,
                genesis: genesis.clone(),
                layout,
                workers,
                stragglers: profile.probabilities.iter().map(|&p| p >= 1.0).collect(),
                stored: vec![None; n],
                candidates,
                state: State::new(genesis.clone()),
                flowed: 0,
                view: 0,
                known_bad: BTreeSet::new(),
                pools: EventPools::default(),
                epoch: 0,
                slots: issuance.per_chain[&j].iter().copied().collect(),
                rng: stream_rng(cfg.seed, tag, j as u64),
                work: None,
                outbox: VecDeque::new(),
            });
        }

        let mut sim = Simulation {
            link: cfg.link(),
            vote_us: 2 * cfg.link().latency_us,
            end,
            window: cfg.window_us(),
            now: 0,
            queue: BinaryHeap::new(),
            seq: 0,
            dag,
            chains,
            honest,
            superblocks: Vec::new(),
            canon_in: vec![TokenMatrix::zeros(m, m); n_chains],
            canon_out: vec![TokenMatrix::zeros(m, m); n_chains],
            labels: BTreeMap::new(),
            confirmed_txs: HashSet::new(),
            next_tx: 0,
            policy: AdversaryPolicy {
                spam_rate: cfg.mu,
                parent_strategy: OrphanageScope::Blocks,
                invalid_tx_fraction: cfg.invalid_tx_fraction,
            },
            injections: Vec::new(),
            inject_rng: stream_rng(cfg.seed, TAG_INJECT, 0),
            pair_blocks: Vec::new(),
            counters: Counters::default(),
            validated_blocks: 0,
            tip_series: Vec::new(),
            gini_series: Vec::new(),
            event_log: Vec::new(),
            cfg,
        };

        for j in 0..n_chains {
            if sim.chains[j].honest {
                if let Some(t) = sim.chains[j].slots.pop_front() {
                    sim.push(t, Ev::EpochStart(j));
                }
            } else {
                let times: Vec<u64> = sim.chains[j].slots.drain(..).collect();
                for t in times {
                    sim.push(t, Ev::AdvIssue(j));
                }
            }
        }
        let mut e = 1;
        while e * sim.window <= end {
            sim.push(e * sim.window, Ev::WindowClose(e));
            e += 1;
        }
        for s in 1..=end / 1_000_000 {
            sim.push(s * 1_000_000, Ev::Sample);
        }
        sim.plan_injections();
        Ok(sim)
    }

    fn push(&mut self, t: u64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Reverse((t, self.seq, ev)));
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn dag(&self) -> &DagLedger<BlockPayload> {
        &self.dag
    }

    /// Ledger super-blocks as seen by `chain`.
    pub fn ledger_of(&self, chain: ChainId) -> &[BTreeMap<ChainId, BlockId>] {
        &self.superblocks[..self.chains[chain].view]
    }

    pub fn side_ledger(&self, chain: ChainId) -> &BTreeMap<u64, Vec<EventRecord>> {
        &self.chains[chain].pools.side_ledger
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Processes events strictly before `t` (capped at the run length).
    pub fn run_until(&mut self, t: u64) {
        let stop = t.min(self.end);
        while let Some(Reverse((time, _, _))) = self.queue.peek() {
            if *time >= stop {
                break;
            }
            let Reverse((time, _, ev)) = self.queue.pop().expect("peeked");
            self.now = time;
            self.handle(ev);
        }
        self.now = self.now.max(stop);
    }

    pub fn run(mut self) -> SimOutput {
        self.run_until(self.end);
        self.finish()
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::WindowClose(e) => self.close_window(e),
            Ev::Sample => self
                .tip_series
                .push((self.now / 1_000_000, self.dag.tips().len())),
            Ev::AdvIssue(c) => self.adversary_issue(c),
            Ev::AdvAttach(c) => {
                let block = self.chains[c].outbox.pop_front().expect("queued block");
                self.attach(block);
                self.counters.adversarial_blocks += 1;
            }
            Ev::Inject(i) => self.inject(i),
            Ev::EpochStart(j) => self.stage1(j),
            Ev::Stage2(j) => self.stage2(j),
            Ev::Attach(j) => self.stage3(j),
            Ev::Stage4(j) => self.stage4(j),
        }
    }

    // ---- global ledger ----

    fn close_window(&mut self, e: u64) {
        let window = LedgerEpoch {
            index: e,
            start: (e - 1) * self.window,
            end: e * self.window,
        };
        let sb = self
            .dag
            .assemble_confirmed_superblock(window, &mut stream_rng(self.cfg.seed, TAG_WINDOW, e));
        for &id in sb.values() {
            for x in &self.dag.get(id).expect("confirmed block").payload.matrices {
                x.amounts.add_into(&mut self.canon_in[x.dest_chain]);
                x.amounts.add_into(&mut self.canon_out[x.source_chain]);
            }
        }
        self.superblocks.push(sb);
        let mut counts = vec![0u64; self.cfg.chains];
        for &(_, id) in self.dag.confirm_log() {
            if id != GENESIS {
                counts[self.dag.get(id).expect("logged").proposer] += 1;
            }
        }
        self.gini_series.push((e, gini(&counts)));
    }

    /// `(w_in, confirmed w_out)` of `chain` as recorded by the first `prefix` super-blocks.
    fn view_of(&self, chain: ChainId, prefix: usize) -> (TokenMatrix, TokenMatrix) {
        let mut w_in = self.canon_in[chain].clone();
        let mut w_out = self.canon_out[chain].clone();
        for sb in &self.superblocks[prefix..] {
            for &id in sb.values() {
                for x in &self.dag.get(id).expect("confirmed block").payload.matrices {
                    if x.dest_chain == chain {
                        x.amounts.sub_from(&mut w_in);
                    }
                    if x.source_chain == chain {
                        x.amounts.sub_from(&mut w_out);
                    }
                }
            }
        }
        (w_in, w_out)
    }

    fn attach(&mut self, block: NewBlock<BlockPayload>) -> BlockId {
        let id = self.dag.attach(block).expect("parents exist and precede");
        let confirmed = self.dag.update_confirmations(self.now);
        self.on_confirmed(&confirmed);
        id
    }

    fn on_confirmed(&mut self, ids: &[BlockId]) {
        for &id in ids {
            let b = self.dag.get(id).expect("confirmed block");
            self.confirmed_txs
                .extend(b.payload.txs.iter().map(|t| t.id));
        }
        self.counters.confirmed_blocks += ids.len() as u64;
    }

    // ---- adversaries ----

    fn adversary_issue(&mut self, c: ChainId) {
        let bal = balances(
            &self.chains[c].genesis,
            &self.canon_in[c],
            &self.canon_out[c],
        );
        let chains = self.cfg.chains;
        let active = self.cfg.txs_per_block;
        let ch = &mut self.chains[c];
        ch.epoch += 1;
        let (txs, _) = make_invalid_block(
            &mut ch.rng,
            c,
            chains,
            &self.policy,
            &bal,
            active,
            &mut self.next_tx,
        );
        let matrices = matrices_from_txs(&txs, self.cfg.accounts, ch.epoch);
        let parents = self
            .dag
            .select_tips_orphanage(self.cfg.tips, c, self.policy.parent_strategy);
        let id = self.dag.next_id();
        let epoch = self.chains[c].epoch;
        self.chains[c].outbox.push_back(NewBlock {
            id,
            proposer: c,
            epoch_issued: epoch,
            payload: BlockPayload {
                origin: Origin::Adversarial,
                txs,
                matrices,
            },
            parents,
            attach_time: self.now + self.link.latency_us,
        });
        self.push(self.now + self.link.latency_us, Ev::AdvAttach(c));
    }

    // ---- double-spend injection ----

    fn plan_injections(&mut self) {
        let Some(ds) = self.cfg.double_spend.clone() else {
            return;
        };
        let d = self.end as f64;
        let rng = &mut self.inject_rng;
        let h = self.honest.len();
        let mut plan = Vec::new();
        for _ in 0..ds.regular {
            let t = rng.gen_range(0.1 * d..0.8 * d) as u64;
            plan.push(Injection {
                time: t,
                proposer: self.honest[rng.gen_range(0..h)],
                origin: Origin::Regular,
            });
        }
        for i in 0..ds.pairs {
            let t1 = rng.gen_range(0.1 * d..0.4 * d);
            let t2 = t1 + rng.gen_range(0.2 * d..0.4 * d);
            for (t, origin) in [(t1, Origin::Original(i)), (t2, Origin::Replica(i))] {
                plan.push(Injection {
                    time: t as u64,
                    proposer: self.honest[rng.gen_range(0..h)],
                    origin,
                });
            }
        }
        self.pair_blocks = vec![(None, None); ds.pairs];
        for (i, inj) in plan.iter().enumerate() {
            self.seq += 1;
            self.queue
                .push(Reverse((inj.time, self.seq, Ev::Inject(i))));
        }
        self.injections = plan;
    }

    fn inject(&mut self, i: usize) {
        let Injection {
            proposer, origin, ..
        } = self.injections[i];
        let k = self.cfg.tips;
        let existing: Vec<BlockId> = self.dag.blocks().map(|b| b.id).collect();
        let rng = &mut self.inject_rng;
        let mut parents: Vec<BlockId> = sample(rng, existing.len(), k.min(existing.len()))
            .into_iter()
            .map(|x| existing[x])
            .collect();
        parents.sort_unstable();
        let bal = balances(
            &self.chains[proposer].genesis,
            &self.canon_in[proposer],
            &self.canon_out[proposer],
        );
        let mut txs = make_honest_txs(
            rng,
            proposer,
            self.cfg.chains,
            &bal,
            self.cfg.txs_per_block,
            &mut self.next_tx,
        );
        match origin {
            Origin::Replica(p) => {
                let original = self.pair_blocks[p].0.expect("original precedes replica");
                let shared = self.dag.get(original).expect("attached").payload.txs[0];
                txs.insert(0, shared);
            }
            Origin::Original(_) if txs.is_empty() => {
                self.next_tx += 1;
                txs.push(Tx {
                    id: self.next_tx,
                    source_chain: proposer,
                    dest_chain: proposer,
                    from: 0,
                    to: 0,
                    amount: 0,
                });
            }
            _ => {}
        }
        let id = self.dag.next_id();
        let id = self.attach(NewBlock {
            id,
            proposer,
            epoch_issued: self.chains[proposer].epoch,
            payload: BlockPayload {
                origin,
                txs,
                matrices: Vec::new(),
            },
            parents,
            attach_time: self.now,
        });
        match origin {
            Origin::Original(p) => self.pair_blocks[p].0 = Some(id),
            Origin::Replica(p) => self.pair_blocks[p].1 = Some(id),
            _ => {}
        }
        self.counters.injected_blocks += 1;
    }

    // ---- honest epochs ----

    /// Runs one committee vote; `None` when the round overruns the vote timeout.
    fn vote(
        &mut self,
        j: ChainId,
        kind: EventKind,
        payload: &[u8],
        at: u64,
    ) -> Option<EventRecord> {
        let ok = self.vote_us <= self.cfg.vote_timeout_us();
        let work = self.chains[j].work.as_ref().expect("epoch in progress");
        let ctx = EventContext {
            chain: j,
            epoch: work.epoch,
            time_us: at,
        };
        let (record, _) = propose_and_vote(
            kind,
            ctx,
            &work.committee,
            |_| payload.to_vec(),
            |_, _, p: &Vec<u8>| {
                if ok && p.as_slice() == payload {
                    Vote::Approve
                } else {
                    Vote::Reject
                }
            },
        )
        .expect("committee is non-empty");
        self.event_log.push(record.clone());
        if !record.is_active() {
            self.counters.vote_timeouts += 1;
            return None;
        }
        self.chains[j]
            .pools
            .push(record.clone())
            .expect("one active event per kind and epoch");
        Some(record)
    }

    fn vote_deadline(&self, t: u64) -> u64 {
        t + self.cfg.vote_timeout_us()
    }

    fn stage1(&mut self, j: ChainId) {
        let t0 = self.now;
        let m = self.cfg.accounts;
        let chains = self.cfg.chains;
        let (epoch, committee) = {
            let ch = &mut self.chains[j];
            ch.epoch += 1;
            let size = committee_size(ch.candidates.len());
            let committee =
                select_committee(&ch.candidates, &self.cfg.seed.to_le_bytes(), ch.epoch, size)
                    .expect("committee fits the candidates");
            (ch.epoch, committee)
        };
        self.counters.honest_epochs += 1;

        // Flows from super-blocks appended since the previous epoch.
        let mut a = TokenMatrix::zeros(m, m);
        let mut b = TokenMatrix::zeros(m, m);
        let (flowed, view) = (self.chains[j].flowed, self.chains[j].view);
        for sb in &self.superblocks[flowed..view] {
            for &id in sb.values() {
                for x in &self.dag.get(id).expect("confirmed block").payload.matrices {
                    if x.dest_chain == j {
                        x.amounts.add_into(&mut a);
                    }
                    if x.source_chain == j {
                        x.amounts.add_into(&mut b);
                    }
                }
            }
        }
        let ch = &mut self.chains[j];
        let settled = {
            let mut w_in = ch.state.w_in.clone();
            w_in.add_assign(&a).expect("square");
            let mut w_out = ch.state.confirmed_outflow();
            w_out.add_assign(&b).expect("square");
            balances(&ch.genesis, &w_in, &w_out)
        };
        let txs = make_honest_txs(
            &mut ch.rng,
            j,
            chains,
            &settled,
            self.cfg.txs_per_block,
            &mut self.next_tx,
        );
        let proposal = matrices_from_txs(&txs, m, epoch);
        ch.work = Some(Work {
            epoch,
            committee,
            txs,
            matrices: proposal.clone(),
            parents: Vec::new(),
            labels: Vec::new(),
            validated: false,
        });

        let Some(x1) = self.vote(
            j,
            EventKind::X1,
            digest_matrices(&proposal).as_bytes(),
            t0 + self.vote_us,
        ) else {
            self.counters.stage1_timeouts += 1;
            let t = self.vote_deadline(t0);
            self.push(t, Ev::Stage4(j));
            return;
        };

        let ch = &mut self.chains[j];
        let mut c = TokenMatrix::zeros(m, m);
        for x in &proposal {
            x.amounts.add_into(&mut c);
        }
        let delta_c = c.sub(&ch.state.last_proposed).expect("square");
        let flows = FlowAggregates {
            inflow: a.clone(),
            outflow_confirmed: b.clone(),
            outflow_proposed: c,
            epoch,
        };
        apply_flows(&mut ch.state, &flows).expect("epochs advance by one");
        ch.flowed = view;
        let central = validate_block(&proposal, &ch.state).expect("own outgoing matrices");

        let dispatch = t0 + self.vote_us;
        let tasks = match dispatch_contract::<BlockPayload, ChaCha8Rng>(
            Contract::C1,
            &x1,
            ContractCall::EncodeEpoch {
                layout: &ch.layout,
                a: &a,
                b: &b,
                delta_c: &delta_c,
                epoch,
            },
        ) {
            Ok(ContractEffect::Tasks(t)) => t,
            other => panic!("C1 produced {other:?}"),
        };
        let timing = TaskTiming {
            dispatched_at: dispatch,
            link: self.link,
            row_cost_us: self.cfg.row_cost_us,
        };
        let mut arrivals = Vec::new();
        for task in &tasks {
            let w = task.worker_index();
            let stored = ch.stored[w]
                .take()
                .unwrap_or_else(|| StoredShards::empty_like(task));
            match worker_respond(&ch.workers[w], ch.stragglers[w], &stored, task, timing) {
                Some(reply) => {
                    arrivals.push((reply.arrives_at, w));
                    ch.stored[w] = Some(reply.shards);
                }
                None => ch.stored[w] = Some(stored),
            }
        }
        let missing_rows = 3 * self.chains[j].layout.shard_rows(0) as u64;
        let round = self.round(j, &arrivals, dispatch, missing_rows);
        if !round.ok {
            self.counters.stage1_timeouts += 1;
            self.push(round.done_at, Ev::Stage4(j));
            return;
        }
        let ch = &self.chains[j];
        let results: Vec<StoredShards<Amount>> = match &ch.layout {
            Layout::Coded(_) => round
                .responders
                .iter()
                .map(|&w| ch.stored[w].clone().expect("responder stored"))
                .collect(),
            Layout::Plain(_) => {
                let w_in = ch.layout.encode(&ch.state.w_in, ShardKind::WIn, epoch);
                let w_out = ch.layout.encode(&ch.state.w_out, ShardKind::WOut, epoch);
                (0..self.cfg.workers)
                    .map(|w| match (&ch.stored[w], round.responders.contains(&w)) {
                        (Some(s), true) => s.clone(),
                        _ => StoredShards {
                            w_in: w_in[w].clone(),
                            w_out: w_out[w].clone(),
                        },
                    })
                    .collect()
            }
        };
        let x2_digest = digest(
            &round
                .responders
                .iter()
                .flat_map(|w| (*w as u64).to_le_bytes())
                .collect::<Vec<_>>(),
        );
        let Some(x2) = self.vote(
            j,
            EventKind::X2,
            x2_digest.as_bytes(),
            round.done_at + self.vote_us,
        ) else {
            self.counters.stage1_timeouts += 1;
            let t = self.vote_deadline(round.done_at);
            self.push(t, Ev::Stage4(j));
            return;
        };
        let ch = &self.chains[j];
        let validated = match dispatch_contract::<BlockPayload, ChaCha8Rng>(
            Contract::C2,
            &x2,
            ContractCall::DecodeAndValidate {
                layout: &ch.layout,
                results: &results,
                genesis: &ch.genesis,
                proposed: &proposal,
            },
        ) {
            Ok(ContractEffect::Validated(v)) => v,
            other => panic!("C2 produced {other:?}"),
        };
        if validated != central {
            self.counters.coded_mismatches += 1;
        }
        let kept: BTreeSet<(ChainId, usize)> = validated
            .iter()
            .flat_map(|x| {
                x.amounts
                    .nonzero_rows()
                    .into_iter()
                    .map(move |r| (x.dest_chain, r))
            })
            .collect();
        let work = self.chains[j].work.as_mut().expect("epoch in progress");
        work.txs
            .retain(|tx| kept.contains(&(tx.dest_chain, tx.from)));
        work.matrices = validated;
        work.validated = true;
        self.validated_blocks += 1;
        self.push(round.done_at + self.vote_us, Ev::Stage2(j));
    }

    /// Completion of a worker round. Coded rounds end once the replies are
    /// decodable; plain rounds wait for every worker or the timeout, then the
    /// committee computes the missing partitions itself.
    fn round(
        &self,
        j: ChainId,
        arrivals: &[(u64, usize)],
        dispatch: u64,
        rows_per_missing: u64,
    ) -> RoundResult {
        let deadline = dispatch + self.cfg.task_timeout_us();
        let layout = &self.chains[j].layout;
        let mut sorted: Vec<(u64, usize)> = arrivals
            .iter()
            .copied()
            .filter(|&(t, _)| t <= deadline)
            .collect();
        sorted.sort_unstable();
        match layout {
            Layout::Coded(_) => {
                for i in 0..sorted.len() {
                    if i + 1 < sorted.len() && sorted[i + 1].0 == sorted[i].0 {
                        continue;
                    }
                    let got: Vec<usize> = sorted[..=i].iter().map(|&(_, w)| w).collect();
                    if layout.recoverable(&got) {
                        return RoundResult {
                            done_at: sorted[i].0,
                            ok: true,
                            responders: got,
                        };
                    }
                }
                RoundResult {
                    done_at: deadline,
                    ok: false,
                    responders: Vec::new(),
                }
            }
            Layout::Plain(_) => {
                let got: Vec<usize> = sorted.iter().map(|&(_, w)| w).collect();
                let missing = (self.cfg.workers - got.len()) as u64;
                let done_at = if missing == 0 {
                    sorted.last().map_or(dispatch, |&(t, _)| t)
                } else {
                    deadline + missing * rows_per_missing * self.cfg.row_cost_us
                };
                RoundResult {
                    done_at,
                    ok: true,
                    responders: got,
                }
            }
        }
    }

    fn stage2(&mut self, j: ChainId) {
        let t1 = self.now;
        let k = self.cfg.tips;
        let (selected, fallback) = {
            let labels = &self.labels;
            let Chain { rng, known_bad, .. } = &mut self.chains[j];
            let known_bad = &*known_bad;
            let acceptable = |b: &DagBlock<BlockPayload>| {
                b.id != GENESIS
                    && b.proposer != j
                    && !labels.contains_key(&b.id)
                    && !known_bad.contains(&b.id)
            };
            let selected = self.dag.select_tips_filtered(k, rng, acceptable, true);
            let first = self.dag.get(selected[0]).expect("selected");
            let fallback = !(self.dag.tips().contains(&first.id) && acceptable(first));
            (selected, fallback)
        };
        // Double-spend screen: first sighting wins, confirmed history always wins.
        let mut flagged = Vec::new();
        let mut candidates = Vec::new();
        if !fallback {
            let mut seen: HashSet<u64> = HashSet::new();
            for &id in &selected {
                let txs = &self.dag.get(id).expect("selected").payload.txs;
                if txs
                    .iter()
                    .any(|t| self.confirmed_txs.contains(&t.id) || seen.contains(&t.id))
                {
                    flagged.push(id);
                } else {
                    seen.extend(txs.iter().map(|t| t.id));
                    candidates.push(id);
                }
            }
        }
        let view = self.chains[j].view;
        let tips: Vec<TipState> = candidates
            .iter()
            .map(|&id| {
                let b = self.dag.get(id).expect("selected");
                let (w_in, confirmed_out) = self.view_of(b.proposer, view);
                TipState {
                    source: b.proposer,
                    genesis: self.chains[b.proposer].genesis.clone(),
                    w_in,
                    confirmed_out,
                    payload: b.payload.matrices.clone(),
                }
            })
            .collect();

        let mut tip_bytes = Vec::new();
        for id in &candidates {
            tip_bytes.extend_from_slice(&id.to_le_bytes());
        }
        let Some(x3) = self.vote(
            j,
            EventKind::X3,
            digest(&tip_bytes).as_bytes(),
            t1 + self.vote_us,
        ) else {
            self.counters.stage2_timeouts += 1;
            self.finish_stage2(j, Vec::new(), flagged, self.vote_deadline(t1));
            return;
        };
        let dispatch = t1 + self.vote_us;
        let epoch = self.chains[j]
            .work
            .as_ref()
            .expect("epoch in progress")
            .epoch;
        let ch = &self.chains[j];
        let tasks = match dispatch_contract::<BlockPayload, ChaCha8Rng>(
            Contract::C3,
            &x3,
            ContractCall::EncodeTips {
                layout: &ch.layout,
                tips: &tips,
                epoch,
            },
        ) {
            Ok(ContractEffect::TipTasks(t)) => t,
            other => panic!("C3 produced {other:?}"),
        };
        if tips.is_empty() {
            // Nothing to hand out; the empty result set is voted on at once.
            if self
                .vote(j, EventKind::X4, digest(&[]).as_bytes(), dispatch)
                .is_none()
            {
                self.counters.stage2_timeouts += 1;
            }
            self.finish_stage2(j, Vec::new(), flagged, dispatch);
            return;
        }

        // One message per worker carrying every tip's triple.
        let slot_of: BTreeMap<usize, usize> = tasks[0]
            .iter()
            .enumerate()
            .map(|(s, t)| (t.worker_index(), s))
            .collect();
        let mut arrivals = Vec::new();
        let mut replies: BTreeMap<usize, Vec<StoredShards<Amount>>> = BTreeMap::new();
        for (&w, &slot) in &slot_of {
            if ch.stragglers[w] {
                continue;
            }
            let rows = ch.layout.shard_rows(w) as u64;
            let entries = rows * self.cfg.accounts as u64 * tips.len() as u64;
            let t = dispatch
                + self.link.delay_us(payload_bytes(3 * entries))
                + 3 * rows * tips.len() as u64 * self.cfg.row_cost_us
                + self.link.delay_us(payload_bytes(2 * entries));
            arrivals.push((t, w));
            let r: Vec<StoredShards<Amount>> = tasks
                .iter()
                .map(|per_tip| tip_worker_result(&per_tip[slot]).expect("well-formed task"))
                .collect();
            replies.insert(w, r);
        }
        let missing_rows = 3 * ch.layout.shard_rows(0) as u64 * tips.len() as u64;
        let round = self.round(j, &arrivals, dispatch, missing_rows);
        if !round.ok {
            self.counters.stage2_timeouts += 1;
            self.finish_stage2(j, Vec::new(), flagged, round.done_at);
            return;
        }
        let ch = &self.chains[j];
        let results: Vec<Vec<StoredShards<Amount>>> = (0..tips.len())
            .map(|i| match &ch.layout {
                Layout::Coded(_) => round
                    .responders
                    .iter()
                    .map(|w| replies[w][i].clone())
                    .collect(),
                Layout::Plain(_) => slot_of
                    .iter()
                    .map(|(w, &slot)| match replies.get(w) {
                        Some(r) if round.responders.contains(w) => r[i].clone(),
                        _ => tip_worker_result(&tasks[i][slot]).expect("well-formed task"),
                    })
                    .collect(),
            })
            .collect();
        let x4_digest = digest(
            &round
                .responders
                .iter()
                .flat_map(|w| (*w as u64).to_le_bytes())
                .collect::<Vec<_>>(),
        );
        let Some(x4) = self.vote(
            j,
            EventKind::X4,
            x4_digest.as_bytes(),
            round.done_at + self.vote_us,
        ) else {
            self.counters.stage2_timeouts += 1;
            self.finish_stage2(j, Vec::new(), flagged, self.vote_deadline(round.done_at));
            return;
        };
        let ch = &self.chains[j];
        let verdicts = match dispatch_contract::<BlockPayload, ChaCha8Rng>(
            Contract::C4,
            &x4,
            ContractCall::DecodeTips {
                layout: &ch.layout,
                tips: &tips,
                results: &results,
            },
        ) {
            Ok(ContractEffect::Verdicts(v)) => v,
            other => panic!("C4 produced {other:?}"),
        };
        let mut valid = Vec::new();
        for (&id, ok) in candidates.iter().zip(verdicts) {
            if ok {
                valid.push(id);
            } else {
                flagged.push(id);
            }
        }
        self.finish_stage2(j, valid, flagged, round.done_at + self.vote_us);
    }

    fn finish_stage2(&mut self, j: ChainId, valid: Vec<BlockId>, bad: Vec<BlockId>, at: u64) {
        let parents = if valid.is_empty() {
            vec![self.dag.deepest_confirmed()]
        } else {
            valid
        };
        let ch = &mut self.chains[j];
        ch.known_bad.extend(bad.iter().copied());
        let work = ch.work.as_mut().expect("epoch in progress");
        work.parents = parents;
        work.labels = bad;
        self.push(at + self.vote_us, Ev::Attach(j));
    }

    fn stage3(&mut self, j: ChainId) {
        let t = self.now;
        let work = self.chains[j].work.as_ref().expect("epoch in progress");
        let mut bytes = Vec::new();
        for p in &work.parents {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        bytes.extend_from_slice(digest_matrices(&work.matrices).as_bytes());
        let Some(x5) = self.vote(j, EventKind::X5, digest(&bytes).as_bytes(), t) else {
            self.push(self.vote_deadline(t - self.vote_us), Ev::Stage4(j));
            return;
        };
        let work = self.chains[j].work.as_mut().expect("epoch in progress");
        let block = NewBlock {
            id: self.dag.next_id(),
            proposer: j,
            epoch_issued: work.epoch,
            payload: BlockPayload {
                origin: Origin::Honest,
                txs: std::mem::take(&mut work.txs),
                matrices: std::mem::take(&mut work.matrices),
            },
            parents: work.parents.clone(),
            attach_time: t,
        };
        let labels = std::mem::take(&mut work.labels);
        let call: ContractCall<'_, BlockPayload, ChaCha8Rng> = ContractCall::Attach {
            ledger: &mut self.dag,
            block,
        };
        let (id, confirmed) = match dispatch_contract(Contract::C5, &x5, call) {
            Ok(ContractEffect::Attached { id, confirmed }) => (id, confirmed),
            other => panic!("C5 produced {other:?}"),
        };
        self.on_confirmed(&confirmed);
        self.counters.honest_blocks += 1;
        for l in labels {
            if let Entry::Vacant(e) = self.labels.entry(l) {
                e.insert(id);
                self.counters.labeled_blocks += 1;
            }
        }
        let aw = self.dag.aggregated_weight(id).expect("attached");
        let aw_bytes = [aw.numer().to_le_bytes(), aw.denom().to_le_bytes()].concat();
        if self
            .vote(
                j,
                EventKind::X6,
                digest(&aw_bytes).as_bytes(),
                t + self.vote_us,
            )
            .is_none()
        {
            self.push(self.vote_deadline(t), Ev::Stage4(j));
            return;
        }
        self.push(t + self.vote_us, Ev::Stage4(j));
    }

    fn stage4(&mut self, j: ChainId) {
        let t = self.now;
        let closed = self.superblocks.len();
        let view = self.chains[j].view;
        let mut bytes = Vec::new();
        for sb in &self.superblocks[view..closed] {
            for (&c, &id) in sb {
                bytes.extend_from_slice(&(c as u64).to_le_bytes());
                bytes.extend_from_slice(&id.to_le_bytes());
            }
        }
        let next_start = match self.vote(
            j,
            EventKind::X7,
            digest(&bytes).as_bytes(),
            t + self.vote_us,
        ) {
            Some(x7) => {
                for e in view..closed {
                    let index = e as u64 + 1;
                    let window = LedgerEpoch {
                        index,
                        start: e as u64 * self.window,
                        end: index * self.window,
                    };
                    let mut rng = stream_rng(self.cfg.seed, TAG_WINDOW, index);
                    let call = ContractCall::Assemble {
                        ledger: &self.dag,
                        window,
                        rng: &mut rng,
                    };
                    match dispatch_contract(Contract::C6, &x7, call) {
                        Ok(ContractEffect::SuperBlock(sb)) => {
                            if sb != self.superblocks[e] {
                                self.counters.superblock_mismatches += 1;
                            }
                        }
                        other => panic!("C6 produced {other:?}"),
                    }
                }
                self.chains[j].view = closed;
                t + self.vote_us
            }
            None => self.vote_deadline(t),
        };
        let ch = &mut self.chains[j];
        let epoch = ch.work.take().expect("epoch in progress").epoch;
        ch.pools.drain_pool(epoch).expect("each epoch drains once");
        if let Some(slot) = ch.slots.pop_front() {
            self.push(next_start.max(slot), Ev::EpochStart(j));
        }
    }

    // ---- report ----

    pub fn finish(mut self) -> SimOutput {
        self.now = self.end;
        self.tip_series.retain(|&(s, _)| s * 1_000_000 < self.end);
        self.tip_series
            .push((self.end / 1_000_000, self.dag.tips().len()));
        let minutes = self.cfg.duration;
        let honest_chains = self.honest.len().max(1) as f64;

        let mut finality = Vec::new();
        let mut per_minute: BTreeMap<u64, u64> = BTreeMap::new();
        let mut honest_confirmed = 0u64;
        for b in self.dag.blocks() {
            if b.id == GENESIS {
                continue;
            }
            if let Some(c) = b.confirm_time {
                finality.push((b.id, (c - b.attach_time) as f64 / 1e6));
                if b.payload.origin == Origin::Honest {
                    honest_confirmed += 1;
                    *per_minute.entry(c / 60_000_000).or_default() += 1;
                }
            }
        }
        let throughput_series: Vec<(u64, u64)> = (0..self.end.div_ceil(60_000_000))
            .map(|minute| (minute, per_minute.get(&minute).copied().unwrap_or(0)))
            .collect();
        let mean_finality_s = if finality.is_empty() {
            None
        } else {
            Some(finality.iter().map(|f| f.1).sum::<f64>() / finality.len() as f64)
        };

        let double_spend = self.cfg.double_spend.clone().map(|ds| {
            let confirmed_label = |id: BlockId| {
                self.labels
                    .get(&id)
                    .and_then(|&by| self.dag.get(by).expect("labeling block").confirm_time)
            };
            let mut detected = 0;
            let mut delays = Vec::new();
            for &(orig, rep) in &self.pair_blocks {
                let hit = [orig, rep]
                    .into_iter()
                    .flatten()
                    .filter_map(confirmed_label)
                    .min();
                if let (Some(at), Some(rep)) = (hit, rep) {
                    detected += 1;
                    let attached = self.dag.get(rep).expect("attached").attach_time;
                    delays.push(at.saturating_sub(attached) as f64 / 1e6);
                }
            }
            let false_alarms = self
                .dag
                .blocks()
                .filter(|b| b.payload.origin == Origin::Regular && self.labels.contains_key(&b.id))
                .count();
            DoubleSpendStats {
                pairs: ds.pairs,
                regular: ds.regular,
                detected,
                false_alarms,
                p_detect: detected as f64 / ds.pairs as f64,
                p_false_alarm: if ds.regular == 0 {
                    0.0
                } else {
                    false_alarms as f64 / ds.regular as f64
                },
                mean_delay_s: if delays.is_empty() {
                    None
                } else {
                    Some(delays.iter().sum::<f64>() / delays.len() as f64)
                },
            }
        });

        let genesis_total: Amount = self
            .chains
            .iter()
            .map(|c| c.genesis.iter().sum::<Amount>())
            .sum();
        let final_total: Amount = (0..self.cfg.chains)
            .map(|c| {
                balances(
                    &self.chains[c].genesis,
                    &self.canon_in[c],
                    &self.canon_out[c],
                )
                .into_iter()
                .sum::<Amount>()
            })
            .sum();

        let mut events = std::mem::take(&mut self.event_log);
        events.sort_by_key(|r| (r.time_us, r.chain, r.epoch, r.kind));
        let report = MetricsReport {
            seed: self.cfg.seed,
            mu_crit: self.cfg.mu_crit(),
            intra_throughput: self.validated_blocks as f64 / honest_chains / minutes,
            inter_throughput: honest_confirmed as f64 / minutes,
            gini: self.gini_series.iter().rev().find_map(|&(_, g)| g),
            gini_series: self.gini_series.clone(),
            final_tip_pool: self.dag.tips().len(),
            tip_pool_series: self.tip_series.clone(),
            finality_samples: finality,
            mean_finality_s,
            throughput_series,
            double_spend,
            counters: self.counters,
            conservation: Conservation {
                genesis_total: genesis_total.to_string(),
                final_total: final_total.to_string(),
                holds: genesis_total == final_total,
            },
            config: self.cfg.clone(),
        };
        SimOutput {
            report,
            events,
            dag_snapshot: self.dag.snapshot(),
        }
    }
}
