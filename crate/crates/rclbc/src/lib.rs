//! Rate-compatible linear block codes designed by gradient descent.
//!
//! The crate provides the building blocks for learning a parity-check matrix
//! jointly with a weighted belief-propagation decoder under an end-truncation
//! puncturing pattern, plus the classical machinery needed to evaluate the
//! result: exact GF(2) linear algebra, BCH baselines, alist I/O, and Monte
//! Carlo bit-error-rate simulation over a BPSK/AWGN channel.

pub mod alist;
pub mod autodiff;
pub mod bch;
pub mod channel;
pub mod code;
pub mod decoder;
pub mod gf2;
pub mod train;

pub use code::{CodeFamily, MatrixStructure};
pub use gf2::BitMatrix;
