use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CodingError, Group, GroupPlan};
use crate::matrix::{Matrix, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShardKind {
    A,
    B,
    DeltaC,
    WIn,
    WOut,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodedShard<T> {
    pub worker_index: usize,
    pub position: usize,
    pub group: usize,
    pub kind: ShardKind,
    pub epoch: u64,
    pub rows: Matrix<T>,
}

/// Splits a group's slice into `n_κ` row-blocks; frozen blocks are zero.
pub fn expand<T: Scalar>(slice: &Matrix<T>, group: &Group) -> Vec<Matrix<T>> {
    let b = group.block_rows;
    (0..group.size)
        .map(|pos| {
            if group.is_frozen(pos) {
                Matrix::zeros(b, slice.cols())
            } else {
                slice.row_slice(pos * b, b)
            }
        })
        .collect()
}

fn butterfly<T: Scalar>(data: &mut [Vec<T>]) {
    let n = data.len();
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (lo, hi) = data.split_at_mut(j + h);
                for (a, b) in lo[j].iter_mut().zip(hi[0].iter_mut()) {
                    let (x, y) = (*a, *b);
                    *a = x + y;
                    *b = x - y;
                }
            }
        }
        h *= 2;
    }
}

/// Unnormalized Sylvester-Hadamard transform over row-blocks.
pub fn hadamard<T: Scalar>(blocks: &[Matrix<T>]) -> Result<Vec<Matrix<T>>, CodingError> {
    let n = blocks.len();
    if !n.is_power_of_two() {
        return Err(CodingError::NotPowerOfTwo(n));
    }
    let shape = blocks[0].shape();
    if let Some(b) = blocks.iter().find(|b| b.shape() != shape) {
        return Err(crate::matrix::ShapeError {
            expected: shape,
            found: b.shape(),
        }
        .into());
    }
    let mut data: Vec<Vec<T>> = blocks.iter().map(|b| b.as_slice().to_vec()).collect();
    butterfly(&mut data);
    Ok(data
        .into_iter()
        .map(|d| Matrix::from_vec(shape.0, shape.1, d).expect("shape preserved"))
        .collect())
}

/// Codes `x` for every group; shards go only to data positions.
pub fn encode_matrix<T: Scalar>(
    x: &Matrix<T>,
    plan: &GroupPlan,
    kind: ShardKind,
    epoch: u64,
) -> Vec<CodedShard<T>> {
    let mut out = Vec::new();
    for g in &plan.groups {
        let slice = x.row_slice(g.row_offset, g.rows);
        let coded = hadamard(&expand(&slice, g)).expect("group sizes are powers of two");
        for (pos, rows) in coded.into_iter().enumerate().take(g.size - g.frozen) {
            out.push(CodedShard {
                worker_index: g.positions[pos],
                position: pos,
                group: g.index,
                kind,
                epoch,
                rows,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardTriple<T> {
    pub a: CodedShard<T>,
    pub b: CodedShard<T>,
    pub delta_c: CodedShard<T>,
}

impl<T> ShardTriple<T> {
    pub fn worker_index(&self) -> usize {
        self.a.worker_index
    }
}

/// Codes one epoch's `(A, B, ΔC)`, one triple per receiving worker.
pub fn encode_epoch<T: Scalar>(
    a: &Matrix<T>,
    b: &Matrix<T>,
    delta_c: &Matrix<T>,
    plan: &GroupPlan,
    epoch: u64,
) -> Vec<ShardTriple<T>> {
    let ea = encode_matrix(a, plan, ShardKind::A, epoch);
    let eb = encode_matrix(b, plan, ShardKind::B, epoch);
    let ec = encode_matrix(delta_c, plan, ShardKind::DeltaC, epoch);
    ea.into_iter()
        .zip(eb)
        .zip(ec)
        .map(|((a, b), delta_c)| ShardTriple { a, b, delta_c })
        .collect()
}

/// Coded cumulative state held by one worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredShards<T> {
    pub w_in: CodedShard<T>,
    pub w_out: CodedShard<T>,
}

impl<T: Scalar> StoredShards<T> {
    /// Zero state shaped like an incoming triple.
    pub fn empty_like(t: &ShardTriple<T>) -> Self {
        let zero = |kind| CodedShard {
            kind,
            epoch: 0,
            rows: Matrix::zeros(t.a.rows.rows(), t.a.rows.cols()),
            ..t.a.clone()
        };
        StoredShards {
            w_in: zero(ShardKind::WIn),
            w_out: zero(ShardKind::WOut),
        }
    }
}

/// `w̃_in += ã`, `w̃_out += b̃ + Δc̃`.
pub fn worker_update<T: Scalar>(
    stored: &StoredShards<T>,
    incoming: &ShardTriple<T>,
) -> Result<StoredShards<T>, CodingError> {
    let w = stored.w_in.worker_index;
    let same = |s: &CodedShard<T>| {
        s.worker_index == w && s.position == stored.w_in.position && s.group == stored.w_in.group
    };
    if !(same(&incoming.a) && same(&incoming.b) && same(&incoming.delta_c) && same(&stored.w_out)) {
        return Err(CodingError::ShardMismatch { worker: w });
    }
    let mut next = stored.clone();
    next.w_in.rows.add_assign(&incoming.a.rows)?;
    next.w_out.rows.add_assign(&incoming.b.rows)?;
    next.w_out.rows.add_assign(&incoming.delta_c.rows)?;
    next.w_in.epoch = incoming.a.epoch;
    next.w_out.epoch = incoming.a.epoch;
    Ok(next)
}

/// Plain row partition used when coding is off: worker `k` holds block `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub workers: usize,
    pub rows: usize,
    pub block_rows: usize,
}

impl Partition {
    pub fn new(workers: usize, rows: usize) -> Result<Self, CodingError> {
        if workers == 0 {
            return Err(CodingError::NoWorkers);
        }
        Ok(Partition {
            workers,
            rows,
            block_rows: rows.div_ceil(workers),
        })
    }

    pub fn split<T: Scalar>(&self, x: &Matrix<T>) -> Vec<Matrix<T>> {
        (0..self.workers)
            .map(|k| x.row_slice(k * self.block_rows, self.block_rows))
            .collect()
    }

    pub fn assemble<T: Scalar>(
        &self,
        parts: &BTreeMap<usize, Matrix<T>>,
    ) -> Result<Matrix<T>, CodingError> {
        let mut blocks = Vec::with_capacity(self.workers);
        for k in 0..self.workers {
            blocks.push(
                parts
                    .get(&k)
                    .ok_or(CodingError::MissingPartition(k))?
                    .clone(),
            );
        }
        Ok(Matrix::vstack(&blocks)?.row_slice(0, self.rows))
    }
}
