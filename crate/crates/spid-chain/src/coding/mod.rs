//! Hadamard-coded distribution of matrix updates over workers that may never answer.
//!
//! Each power-of-two worker group receives a slice of rows. The slice is cut
//! into `n_κ - |S_κ|` data blocks; the last `|S_κ|` positions of the group are
//! frozen to zero and assigned to the likeliest stragglers. Only data
//! positions receive shards.

mod decode;
mod layout;
mod plan;
mod transform;

pub use decode::{decodable, decode, decode_group};
pub use layout::Layout;
pub use plan::{group_sizes, plan_groups, Group, GroupPlan, StragglerProfile};
pub use transform::{
    encode_epoch, encode_matrix, expand, hadamard, worker_update, CodedShard, Partition, ShardKind,
    ShardTriple, StoredShards,
};

use thiserror::Error;

use crate::matrix::ShapeError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodingError {
    #[error("{0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("profile has {found} probabilities for {expected} workers")]
    ProfileLength { expected: usize, found: usize },
    #[error("straggler probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("group {group} cannot be decoded from the received positions")]
    NotDecodable { group: usize },
    #[error("inexact halving in group {group}: shard data is inconsistent")]
    InexactDivision { group: usize },
    #[error("shard for worker {worker} does not match the stored state")]
    ShardMismatch { worker: usize },
    #[error("missing partition {0}")]
    MissingPartition(usize),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}
