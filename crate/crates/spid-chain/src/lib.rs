//! Interoperating blockchains with coded balance verification and a shared
//! stake-weighted DAG ledger, plus a deterministic discrete-event simulator.
//!
//! Matrix and ledger code is generic over [`matrix::Scalar`]; the simulator
//! runs on [`Amount`].

pub mod coding;
pub mod dag;
pub mod edsc;
pub mod ledger;
pub mod matrix;
pub mod nodes;
pub mod sim;

pub use matrix::{Matrix, Scalar, SparseMatrix};

/// Token amount used throughout the simulator.
pub type Amount = i128;
pub type TokenMatrix = Matrix<Amount>;
pub type Transfers = ledger::TransactionMatrix<Amount>;
pub type State = ledger::CumulativeState<Amount>;
