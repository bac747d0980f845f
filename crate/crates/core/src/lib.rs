//! Simulator for decentralized federated learning with a learned unrolled
//! optimizer.
//!
//! A network of agents jointly fits a softmax classifier by exchanging
//! weight estimates over a communication graph. The classical route is
//! decentralized gradient descent (DGD) and its variants ([`baselines`]);
//! the learned route unfolds DGD into a fixed number of graph-filter +
//! perceptron layers ([`unroll`]) and meta-trains the layer parameters
//! over a distribution of downstream datasets with a primal-dual loop
//! that enforces per-layer descending gradient-norm constraints
//! ([`train`]).
//!
//! Modules follow the data flow:
//! - [`graph`]: topologies, graph shift operators, mixing matrices
//! - [`data`]: synthetic non-IID meta-datasets, batch sampling, CSV I/O
//! - [`task`]: the downstream softmax task and its analytic derivatives
//! - [`unroll`]: the unrolled architecture and its stochastic forward pass
//! - [`grad`]: reverse-mode differentiation of the constrained objective
//! - [`train`]: primal-dual meta-training with Adam and dual ascent
//! - [`baselines`]: DGD, DSGD, DFedAvgM, server-based FedAvg
//! - [`eval`]: meta-test reports, layer diagnostics, ablation, async study

pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod grad;
pub mod graph;
pub mod seed;
pub mod task;
pub mod train;
pub mod unroll;

pub use error::{Error, Result};
