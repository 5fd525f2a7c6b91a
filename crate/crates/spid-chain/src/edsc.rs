//! Oracle events, committee voting and the contracts they trigger.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coding::{worker_update, CodingError, Layout, ShardTriple, StoredShards};
use crate::dag::{BlockId, DagError, DagLedger, LedgerEpoch, NewBlock};
use crate::ledger::{
    balances, payload_valid, total_spend, zero_failing_rows, ChainId, TransactionMatrix,
};
use crate::{Amount, TokenMatrix};

pub type NodeId = u64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EdscError {
    #[error("committee of {size} requested from {available} nodes")]
    CommitteeTooLarge { size: usize, available: usize },
    #[error("committee is empty")]
    EmptyCommittee,
    #[error("event {kind:?} is not active")]
    Inactive { kind: EventKind },
    #[error("contract {contract:?} does not subscribe to {kind:?}")]
    KindMismatch { contract: Contract, kind: EventKind },
    #[error("contract {0:?} was given another contract's inputs")]
    CallMismatch(Contract),
    #[error("event {kind:?} already active in epoch {epoch}")]
    DuplicateActive { kind: EventKind, epoch: u64 },
    #[error("epoch {0} already drained")]
    AlreadyDrained(u64),
    #[error("worker results not yet decodable")]
    NotDecodable,
    #[error(transparent)]
    Coding(#[from] CodingError),
    #[error(transparent)]
    Dag(#[from] DagError),
}

/// Oracle event kinds, one per step of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    /// Proposed block formed.
    X1,
    /// Worker results for the proposed block.
    X2,
    /// Tip super-block formed.
    X3,
    /// Worker results for the tips.
    X4,
    /// Block submitted to the DAG.
    X5,
    /// Aggregated weights updated.
    X6,
    /// Ledger super-block assembled.
    X7,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::X1,
        EventKind::X2,
        EventKind::X3,
        EventKind::X4,
        EventKind::X5,
        EventKind::X6,
        EventKind::X7,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    Approve,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pending,
    Active,
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub chain: ChainId,
    pub epoch: u64,
    pub kind: EventKind,
    pub proposer_node: NodeId,
    pub digest: String,
    pub votes: BTreeMap<NodeId, Vote>,
    pub outcome: Outcome,
    /// Proposers tried before this outcome.
    pub attempts: u32,
    pub time_us: u64,
}

impl EventRecord {
    pub fn approvals(&self) -> usize {
        self.votes.values().filter(|&&v| v == Vote::Approve).count()
    }

    pub fn is_active(&self) -> bool {
        self.outcome == Outcome::Active
    }
}

/// Short hex digest of arbitrary payload bytes.
pub fn digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Digest of a set of transfer matrices in canonical order.
pub fn digest_matrices(set: &[TransactionMatrix<Amount>]) -> String {
    let mut buf = Vec::new();
    for x in set {
        buf.extend_from_slice(&(x.source_chain as u64).to_le_bytes());
        buf.extend_from_slice(&(x.dest_chain as u64).to_le_bytes());
        for (r, c, v) in x.amounts.iter() {
            buf.extend_from_slice(&(r as u64).to_le_bytes());
            buf.extend_from_slice(&(c as u64).to_le_bytes());
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    digest(&buf)
}

/// Keyed-hash stand-in for a verifiable random function.
pub fn vrf_output(node_secret: &[u8], shared_seed: &[u8], epoch: u64) -> u64 {
    let mut h = Sha256::new();
    h.update((node_secret.len() as u64).to_le_bytes());
    h.update(node_secret);
    h.update(shared_seed);
    h.update(epoch.to_le_bytes());
    let out = h.finalize();
    u64::from_be_bytes(out[..8].try_into().expect("eight bytes"))
}

/// Recomputes the output and compares.
pub fn vrf_verify(node_secret: &[u8], shared_seed: &[u8], epoch: u64, claimed: u64) -> bool {
    vrf_output(node_secret, shared_seed, epoch) == claimed
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitteeCandidate {
    pub id: NodeId,
    pub stake: u64,
    pub secret: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitteeSelection {
    pub epoch: u64,
    /// Rank order, highest score first.
    pub members: Vec<NodeId>,
    pub vrf_outputs: BTreeMap<NodeId, u64>,
}

/// `n/10` rounded, at least one.
pub fn committee_size(n: usize) -> usize {
    ((n as f64 / 10.0).round() as usize).max(1)
}

/// Picks the top `size` nodes by `stake × vrf / 2^64`.
pub fn select_committee(
    nodes: &[CommitteeCandidate],
    shared_seed: &[u8],
    epoch: u64,
    size: usize,
) -> Result<CommitteeSelection, EdscError> {
    if size > nodes.len() {
        return Err(EdscError::CommitteeTooLarge {
            size,
            available: nodes.len(),
        });
    }
    let mut scored: Vec<(u128, NodeId, u64)> = nodes
        .iter()
        .map(|n| {
            let v = vrf_output(&n.secret, shared_seed, epoch);
            (n.stake as u128 * v as u128, n.id, v)
        })
        .collect();
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.truncate(size);
    Ok(CommitteeSelection {
        epoch,
        members: scored.iter().map(|s| s.1).collect(),
        vrf_outputs: scored.iter().map(|s| (s.1, s.2)).collect(),
    })
}

/// Where an event is published.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventContext {
    pub chain: ChainId,
    pub epoch: u64,
    pub time_us: u64,
}

/// Proposers are tried in rank order; the first payload approved by a strict
/// majority becomes active. Returns the record and the accepted payload.
pub fn propose_and_vote<P, F, V>(
    kind: EventKind,
    ctx: EventContext,
    committee: &CommitteeSelection,
    mut propose: F,
    mut verdict: V,
) -> Result<(EventRecord, Option<P>), EdscError>
where
    P: AsRef<[u8]>,
    F: FnMut(NodeId) -> P,
    V: FnMut(NodeId, NodeId, &P) -> Vote,
{
    if committee.members.is_empty() {
        return Err(EdscError::EmptyCommittee);
    }
    let mut last = None;
    for (i, &proposer) in committee.members.iter().enumerate() {
        let payload = propose(proposer);
        let votes: BTreeMap<NodeId, Vote> = committee
            .members
            .iter()
            .map(|&m| (m, verdict(m, proposer, &payload)))
            .collect();
        let approvals = votes.values().filter(|&&v| v == Vote::Approve).count();
        let active = 2 * approvals > committee.members.len();
        let record = EventRecord {
            chain: ctx.chain,
            epoch: ctx.epoch,
            kind,
            proposer_node: proposer,
            digest: digest(payload.as_ref()),
            votes,
            outcome: if active {
                Outcome::Active
            } else {
                Outcome::Discarded
            },
            attempts: i as u32 + 1,
            time_us: ctx.time_us,
        };
        if active {
            return Ok((record, Some(payload)));
        }
        last = Some(record);
    }
    Ok((last.expect("committee is non-empty"), None))
}

/// Per-epoch scratch pool and the side ledger it drains into.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventPools {
    pub temp_pool: Vec<EventRecord>,
    pub side_ledger: BTreeMap<u64, Vec<EventRecord>>,
}

impl EventPools {
    /// Adds an active event, refusing a second active event of the same kind and epoch.
    pub fn push(&mut self, record: EventRecord) -> Result<(), EdscError> {
        if !record.is_active() {
            return Err(EdscError::Inactive { kind: record.kind });
        }
        if self
            .temp_pool
            .iter()
            .any(|r| r.kind == record.kind && r.epoch == record.epoch)
        {
            return Err(EdscError::DuplicateActive {
                kind: record.kind,
                epoch: record.epoch,
            });
        }
        self.temp_pool.push(record);
        Ok(())
    }

    pub fn drain_pool(&mut self, epoch: u64) -> Result<&[EventRecord], EdscError> {
        if self.side_ledger.contains_key(&epoch) {
            return Err(EdscError::AlreadyDrained(epoch));
        }
        let drained = std::mem::take(&mut self.temp_pool);
        Ok(self.side_ledger.entry(epoch).or_insert(drained))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Contract {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
}

impl Contract {
    pub fn subscribes_to(self, kind: EventKind) -> bool {
        matches!(
            (self, kind),
            (Contract::C1, EventKind::X1)
                | (Contract::C2, EventKind::X2)
                | (Contract::C3, EventKind::X3)
                | (Contract::C4, EventKind::X4)
                | (Contract::C5, EventKind::X5 | EventKind::X6)
                | (Contract::C6, EventKind::X7)
        )
    }
}

/// Chain-side view of a peer used to check one tip.
#[derive(Debug, Clone)]
pub struct TipState {
    pub source: ChainId,
    pub genesis: Vec<Amount>,
    pub w_in: TokenMatrix,
    pub confirmed_out: TokenMatrix,
    pub payload: Vec<TransactionMatrix<Amount>>,
}

impl TipState {
    pub fn proposed_out(&self) -> TokenMatrix {
        let mut c = TokenMatrix::zeros(self.w_in.rows(), self.w_in.cols());
        for x in &self.payload {
            x.amounts.add_into(&mut c);
        }
        c
    }
}

/// Inputs for each contract.
pub enum ContractCall<'a, P, R> {
    /// Code this epoch's `(A, B, ΔC)` for the workers.
    EncodeEpoch {
        layout: &'a Layout,
        a: &'a TokenMatrix,
        b: &'a TokenMatrix,
        delta_c: &'a TokenMatrix,
        epoch: u64,
    },
    /// Recover the cumulative state from worker results and validate the proposal.
    DecodeAndValidate {
        layout: &'a Layout,
        results: &'a [StoredShards<Amount>],
        genesis: &'a [Amount],
        proposed: &'a [TransactionMatrix<Amount>],
    },
    /// Code each tip's source-chain state, proposal included.
    EncodeTips {
        layout: &'a Layout,
        tips: &'a [TipState],
        epoch: u64,
    },
    /// Recover each tip's state from worker results and judge it.
    DecodeTips {
        layout: &'a Layout,
        tips: &'a [TipState],
        results: &'a [Vec<StoredShards<Amount>>],
    },
    Attach {
        ledger: &'a mut DagLedger<P>,
        block: NewBlock<P>,
    },
    Assemble {
        ledger: &'a DagLedger<P>,
        window: LedgerEpoch,
        rng: &'a mut R,
    },
}

#[derive(Debug, Clone)]
pub enum ContractEffect {
    Tasks(Vec<ShardTriple<Amount>>),
    TipTasks(Vec<Vec<ShardTriple<Amount>>>),
    Validated(Vec<TransactionMatrix<Amount>>),
    Verdicts(Vec<bool>),
    Attached {
        id: BlockId,
        confirmed: Vec<BlockId>,
    },
    SuperBlock(BTreeMap<ChainId, BlockId>),
}

fn recover_state(
    layout: &Layout,
    results: &[StoredShards<Amount>],
    cols: usize,
) -> Result<(TokenMatrix, TokenMatrix), EdscError> {
    let workers: Vec<usize> = results.iter().map(|r| r.w_in.worker_index).collect();
    if !layout.recoverable(&workers) {
        return Err(EdscError::NotDecodable);
    }
    let w_in: Vec<_> = results.iter().map(|r| r.w_in.clone()).collect();
    let w_out: Vec<_> = results.iter().map(|r| r.w_out.clone()).collect();
    Ok((layout.recover(&w_in, cols)?, layout.recover(&w_out, cols)?))
}

/// What a worker returns for a tip task: the update applied to an empty store.
pub fn tip_worker_result(task: &ShardTriple<Amount>) -> Result<StoredShards<Amount>, CodingError> {
    worker_update(&StoredShards::empty_like(task), task)
}

/// Runs `contract` on an active event it subscribes to.
pub fn dispatch_contract<P, R: Rng>(
    contract: Contract,
    event: &EventRecord,
    call: ContractCall<'_, P, R>,
) -> Result<ContractEffect, EdscError> {
    if !event.is_active() {
        return Err(EdscError::Inactive { kind: event.kind });
    }
    if !contract.subscribes_to(event.kind) {
        return Err(EdscError::KindMismatch {
            contract,
            kind: event.kind,
        });
    }
    match (contract, call) {
        (
            Contract::C1,
            ContractCall::EncodeEpoch {
                layout,
                a,
                b,
                delta_c,
                epoch,
            },
        ) => Ok(ContractEffect::Tasks(
            layout.encode_triple(a, b, delta_c, epoch),
        )),
        (
            Contract::C2,
            ContractCall::DecodeAndValidate {
                layout,
                results,
                genesis,
                proposed,
            },
        ) => {
            let (w_in, w_out) = recover_state(layout, results, genesis.len())?;
            let after = balances(genesis, &w_in, &w_out);
            Ok(ContractEffect::Validated(zero_failing_rows(
                proposed, &after,
            )))
        }
        (
            Contract::C3,
            ContractCall::EncodeTips {
                layout,
                tips,
                epoch,
            },
        ) => Ok(ContractEffect::TipTasks(
            tips.iter()
                .map(|t| layout.encode_triple(&t.w_in, &t.confirmed_out, &t.proposed_out(), epoch))
                .collect(),
        )),
        (
            Contract::C4,
            ContractCall::DecodeTips {
                layout,
                tips,
                results,
            },
        ) => {
            let mut verdicts = Vec::with_capacity(tips.len());
            for (tip, res) in tips.iter().zip(results) {
                let (w_in, w_out) = recover_state(layout, res, tip.genesis.len())?;
                let after = balances(&tip.genesis, &w_in, &w_out);
                verdicts.push(payload_valid(&tip.payload, &after));
            }
            Ok(ContractEffect::Verdicts(verdicts))
        }
        (Contract::C5, ContractCall::Attach { ledger, block }) => {
            let now = block.attach_time;
            let id = ledger.attach(block)?;
            let confirmed = ledger.update_confirmations(now);
            Ok(ContractEffect::Attached { id, confirmed })
        }
        (
            Contract::C6,
            ContractCall::Assemble {
                ledger,
                window,
                rng,
            },
        ) => Ok(ContractEffect::SuperBlock(
            ledger.assemble_confirmed_superblock(window, rng),
        )),
        (c, _) => Err(EdscError::CallMismatch(c)),
    }
}

/// Net balances after charging a proposal, computed centrally.
pub fn central_balances_after(
    genesis: &[Amount],
    w_in: &TokenMatrix,
    confirmed_out: &TokenMatrix,
    proposal: &[TransactionMatrix<Amount>],
) -> Vec<Amount> {
    let spend = total_spend(genesis.len(), proposal);
    balances(genesis, w_in, confirmed_out)
        .into_iter()
        .zip(spend)
        .map(|(b, s)| b - s)
        .collect()
}
