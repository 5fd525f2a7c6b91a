use std::collections::BTreeMap;

use super::{
    decode, encode_matrix, CodedShard, CodingError, GroupPlan, Partition, ShardKind, ShardTriple,
};
use crate::matrix::{Matrix, Scalar};

/// How a chain spreads row work across its workers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    Coded(GroupPlan),
    /// Plain partitions; every worker must answer.
    Plain(Partition),
}

impl Layout {
    pub fn rows(&self) -> usize {
        match self {
            Layout::Coded(p) => p.rows,
            Layout::Plain(p) => p.rows,
        }
    }

    /// Workers that are sent a task.
    pub fn recipients(&self) -> Vec<usize> {
        match self {
            Layout::Coded(p) => p.active_workers(),
            Layout::Plain(p) => (0..p.workers).collect(),
        }
    }

    /// Rows in the shard of `worker` (zero when it gets nothing).
    pub fn shard_rows(&self, worker: usize) -> usize {
        match self {
            Layout::Coded(p) => p
                .group_of(worker)
                .filter(|g| g.position_of(worker).is_some_and(|pos| !g.is_frozen(pos)))
                .map_or(0, |g| g.block_rows),
            Layout::Plain(p) => {
                if worker < p.workers {
                    p.block_rows
                } else {
                    0
                }
            }
        }
    }

    pub fn encode<T: Scalar>(
        &self,
        x: &Matrix<T>,
        kind: ShardKind,
        epoch: u64,
    ) -> Vec<CodedShard<T>> {
        match self {
            Layout::Coded(plan) => encode_matrix(x, plan, kind, epoch),
            Layout::Plain(p) => p
                .split(x)
                .into_iter()
                .enumerate()
                .map(|(k, rows)| CodedShard {
                    worker_index: k,
                    position: k,
                    group: 0,
                    kind,
                    epoch,
                    rows,
                })
                .collect(),
        }
    }

    pub fn encode_triple<T: Scalar>(
        &self,
        a: &Matrix<T>,
        b: &Matrix<T>,
        delta_c: &Matrix<T>,
        epoch: u64,
    ) -> Vec<ShardTriple<T>> {
        let ea = self.encode(a, ShardKind::A, epoch);
        let eb = self.encode(b, ShardKind::B, epoch);
        let ec = self.encode(delta_c, ShardKind::DeltaC, epoch);
        ea.into_iter()
            .zip(eb)
            .zip(ec)
            .map(|((a, b), delta_c)| ShardTriple { a, b, delta_c })
            .collect()
    }

    /// Whether the shards from `workers` suffice to recover the matrix.
    pub fn recoverable(&self, workers: &[usize]) -> bool {
        match self {
            Layout::Coded(plan) => plan.groups.iter().all(|g| {
                let got = workers.iter().filter_map(|&w| g.position_of(w)).collect();
                super::decodable(&got, g)
            }),
            Layout::Plain(p) => (0..p.workers).all(|k| workers.contains(&k)),
        }
    }

    pub fn recover<T: Scalar>(
        &self,
        shards: &[CodedShard<T>],
        cols: usize,
    ) -> Result<Matrix<T>, CodingError> {
        match self {
            Layout::Coded(plan) => decode(shards, plan, cols),
            Layout::Plain(p) => {
                let parts: BTreeMap<usize, Matrix<T>> = shards
                    .iter()
                    .map(|s| (s.position, s.rows.clone()))
                    .collect();
                p.assemble(&parts)
            }
        }
    }
}
