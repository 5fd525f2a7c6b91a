//! Cross-chain balance accounting over exact integer matrices.
//!
//! Rows index sending accounts, columns receiving accounts. Genesis
//! balances act as epoch-0 inflow.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::matrix::{Matrix, Scalar, ShapeError, SparseMatrix};

pub type ChainId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("matrix dimension {found} does not match configured M={expected}")]
    Dimension { expected: usize, found: usize },
    #[error("intra-chain transfer on chain {0} is not supported")]
    IntraChain(ChainId),
    #[error("matrix {source_chain}->{dest_chain} does not belong to chain {chain} in this role")]
    WrongChain {
        chain: ChainId,
        source_chain: ChainId,
        dest_chain: ChainId,
    },
    #[error("negative amount {amount} at ({row}, {col})")]
    NegativeAmount {
        row: usize,
        col: usize,
        amount: String,
    },
    #[error("expected epoch {expected}, got {found}")]
    EpochGap { expected: u64, found: u64 },
    #[error("more than one tip from chain {0}")]
    DuplicateTipSource(ChainId),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Token transfers from accounts of one chain to accounts of another in one epoch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TransactionMatrix<T> {
    pub source_chain: ChainId,
    pub dest_chain: ChainId,
    pub epoch: u64,
    pub amounts: SparseMatrix<T>,
}

impl<T: Scalar> TransactionMatrix<T> {
    pub fn new(source_chain: ChainId, dest_chain: ChainId, epoch: u64, accounts: usize) -> Self {
        TransactionMatrix {
            source_chain,
            dest_chain,
            epoch,
            amounts: SparseMatrix::new(accounts),
        }
    }

    pub fn dim(&self) -> usize {
        self.amounts.dim()
    }

    /// Records `amount` from account `from` to account `to`.
    pub fn transfer(&mut self, from: usize, to: usize, amount: T) -> Result<(), LedgerError> {
        if amount < T::zero() {
            return Err(LedgerError::NegativeAmount {
                row: from,
                col: to,
                amount: format!("{amount:?}"),
            });
        }
        self.amounts.add(from, to, amount);
        Ok(())
    }

    fn check(&self, dim: usize) -> Result<(), LedgerError> {
        if self.dim() != dim {
            return Err(LedgerError::Dimension {
                expected: dim,
                found: self.dim(),
            });
        }
        if let Some((row, col, amount)) = self.amounts.iter().find(|e| e.2 < T::zero()) {
            return Err(LedgerError::NegativeAmount {
                row,
                col,
                amount: format!("{amount:?}"),
            });
        }
        if self.source_chain == self.dest_chain {
            return Err(LedgerError::IntraChain(self.source_chain));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowAggregates<T> {
    pub inflow: Matrix<T>,
    pub outflow_confirmed: Matrix<T>,
    pub outflow_proposed: Matrix<T>,
    pub epoch: u64,
}

impl<T: Scalar> FlowAggregates<T> {
    pub fn zeros(accounts: usize, epoch: u64) -> Self {
        FlowAggregates {
            inflow: Matrix::zeros(accounts, accounts),
            outflow_confirmed: Matrix::zeros(accounts, accounts),
            outflow_proposed: Matrix::zeros(accounts, accounts),
            epoch,
        }
    }
}

fn sum_into<T: Scalar>(
    acc: &mut Matrix<T>,
    set: &[TransactionMatrix<T>],
    chain: ChainId,
    inbound: bool,
) -> Result<(), LedgerError> {
    for x in set {
        x.check(acc.rows())?;
        let ok = if inbound {
            x.dest_chain == chain
        } else {
            x.source_chain == chain
        };
        if !ok {
            return Err(LedgerError::WrongChain {
                chain,
                source_chain: x.source_chain,
                dest_chain: x.dest_chain,
            });
        }
        x.amounts.add_into(acc);
    }
    Ok(())
}

/// Sums one epoch's confirmed inflow, confirmed outflow and proposed outflow of `chain`.
pub fn aggregate_flows<T: Scalar>(
    chain: ChainId,
    accounts: usize,
    epoch: u64,
    blocks_in: &[TransactionMatrix<T>],
    blocks_out: &[TransactionMatrix<T>],
    proposed: &[TransactionMatrix<T>],
) -> Result<FlowAggregates<T>, LedgerError> {
    let mut f = FlowAggregates::zeros(accounts, epoch);
    sum_into(&mut f.inflow, blocks_in, chain, true)?;
    sum_into(&mut f.outflow_confirmed, blocks_out, chain, false)?;
    sum_into(&mut f.outflow_proposed, proposed, chain, false)?;
    Ok(f)
}

/// Running totals kept by a chain about itself (or about a peer).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CumulativeState<T> {
    pub w_in: Matrix<T>,
    pub w_out: Matrix<T>,
    pub last_proposed: Matrix<T>,
    pub genesis: Vec<T>,
    pub epoch: u64,
}

impl<T: Scalar> CumulativeState<T> {
    pub fn new(genesis: Vec<T>) -> Self {
        let m = genesis.len();
        CumulativeState {
            w_in: Matrix::zeros(m, m),
            w_out: Matrix::zeros(m, m),
            last_proposed: Matrix::zeros(m, m),
            genesis,
            epoch: 0,
        }
    }

    pub fn accounts(&self) -> usize {
        self.genesis.len()
    }

    /// Outflow with the current proposal removed.
    pub fn confirmed_outflow(&self) -> Matrix<T> {
        self.w_out
            .sub(&self.last_proposed)
            .expect("state matrices share a shape")
    }

    /// Balances before any proposal is charged.
    pub fn settled_balances(&self) -> Vec<T> {
        balances(&self.genesis, &self.w_in, &self.confirmed_outflow())
    }
}

/// One recursive step: `w_in += A`, `w_out += B + (C - C_prev)`.
pub fn update_cumulative<T: Scalar>(
    state: &CumulativeState<T>,
    flows: &FlowAggregates<T>,
) -> Result<CumulativeState<T>, LedgerError> {
    let mut next = state.clone();
    apply_flows(&mut next, flows)?;
    Ok(next)
}

pub fn apply_flows<T: Scalar>(
    state: &mut CumulativeState<T>,
    flows: &FlowAggregates<T>,
) -> Result<(), LedgerError> {
    if flows.epoch != state.epoch + 1 {
        return Err(LedgerError::EpochGap {
            expected: state.epoch + 1,
            found: flows.epoch,
        });
    }
    state.w_in.add_assign(&flows.inflow)?;
    state.w_out.add_assign(&flows.outflow_confirmed)?;
    state.w_out.add_assign(&flows.outflow_proposed)?;
    state.w_out.sub_assign(&state.last_proposed)?;
    state.last_proposed = flows.outflow_proposed.clone();
    state.epoch = flows.epoch;
    Ok(())
}

/// `genesis[m] + Σ_m' w_in[m',m] - Σ_m' w_out[m,m']`.
pub fn balances<T: Scalar>(genesis: &[T], w_in: &Matrix<T>, w_out: &Matrix<T>) -> Vec<T> {
    let inflow = w_in.col_sums();
    let outflow = w_out.row_sums();
    genesis
        .iter()
        .zip(inflow)
        .zip(outflow)
        .map(|((&g, i), o)| g + i - o)
        .collect()
}

pub fn net_balances<T: Scalar>(state: &CumulativeState<T>) -> Vec<T> {
    balances(&state.genesis, &state.w_in, &state.w_out)
}

/// Per-account total spend over a set of outgoing matrices.
pub fn total_spend<T: Scalar>(accounts: usize, set: &[TransactionMatrix<T>]) -> Vec<T> {
    let mut spend = vec![T::zero(); accounts];
    for x in set {
        for (r, _, v) in x.amounts.iter() {
            spend[r] = spend[r] + v;
        }
    }
    spend
}

fn check_outgoing<T: Scalar>(
    set: &[TransactionMatrix<T>],
    accounts: usize,
) -> Result<Option<ChainId>, LedgerError> {
    let source = set.first().map(|x| x.source_chain);
    for x in set {
        x.check(accounts)?;
        if Some(x.source_chain) != source {
            return Err(LedgerError::WrongChain {
                chain: source.unwrap_or_default(),
                source_chain: x.source_chain,
                dest_chain: x.dest_chain,
            });
        }
    }
    Ok(source)
}

/// Zeroes every row whose account ends negative in `balances_after`,
/// which must already include the proposal's spend.
pub fn zero_failing_rows<T: Scalar>(
    proposed: &[TransactionMatrix<T>],
    balances_after: &[T],
) -> Vec<TransactionMatrix<T>> {
    proposed
        .iter()
        .map(|x| {
            let mut z = x.clone();
            for r in x.amounts.nonzero_rows() {
                if balances_after[r] < T::zero() {
                    z.amounts.clear_row(r);
                }
            }
            z
        })
        .collect()
}

/// Produces the validated payload: each account's whole proposed spend is
/// kept when its balance covers it, otherwise its rows are zeroed everywhere.
pub fn validate_block<T: Scalar>(
    proposed: &[TransactionMatrix<T>],
    state: &CumulativeState<T>,
) -> Result<Vec<TransactionMatrix<T>>, LedgerError> {
    let m = state.accounts();
    check_outgoing(proposed, m)?;
    let spend = total_spend(m, proposed);
    let after: Vec<T> = state
        .settled_balances()
        .into_iter()
        .zip(spend)
        .map(|(b, s)| b - s)
        .collect();
    Ok(zero_failing_rows(proposed, &after))
}

/// True when every spending account stays non-negative.
pub fn payload_valid<T: Scalar>(payload: &[TransactionMatrix<T>], balances_after: &[T]) -> bool {
    payload.iter().all(|x| {
        x.amounts
            .nonzero_rows()
            .into_iter()
            .all(|r| balances_after[r] >= T::zero())
    })
}

/// A tip to check: its source chain, its payload and the checker's view of the source's state.
pub struct TipCheck<'a, T> {
    pub source: ChainId,
    pub payload: &'a [TransactionMatrix<T>],
    pub state: &'a CumulativeState<T>,
}

pub fn validate_tip_payloads<T: Scalar>(
    tips: &[TipCheck<'_, T>],
) -> Result<Vec<bool>, LedgerError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(tips.len());
    for tip in tips {
        if !seen.insert(tip.source) {
            return Err(LedgerError::DuplicateTipSource(tip.source));
        }
        let m = tip.state.accounts();
        if let Some(src) = check_outgoing(tip.payload, m)? {
            if src != tip.source {
                return Err(LedgerError::WrongChain {
                    chain: tip.source,
                    source_chain: src,
                    dest_chain: tip.payload[0].dest_chain,
                });
            }
        }
        let spend = total_spend(m, tip.payload);
        let after: Vec<T> = tip
            .state
            .settled_balances()
            .into_iter()
            .zip(spend)
            .map(|(b, s)| b - s)
            .collect();
        out.push(payload_valid(tip.payload, &after));
    }
    Ok(out)
}
