//! Polytopic LPV observers for port-Hamiltonian systems whose input map
//! depends on the state.
//!
//! The pipeline is: [`model`] describes the plant, [`embedding`] turns an
//! operating domain into a vertex set, [`lmi`] and [`synthesis`] produce
//! observer gains with a certified decay rate, [`simulate`] runs plant and
//! observer together and [`metrics`] summarizes the error trajectories.

// Checks like `!(x > 0.0)` are written so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedding;
pub mod linalg;
pub mod lmi;
pub mod metrics;
pub mod model;
pub mod quadrature;
pub mod simulate;
pub mod synthesis;
