//! Construct low-dimensional sections of a neural network's empirical loss
//! surface that reproduce an arbitrary target pattern.
//!
//! The pipeline has two constructions:
//!
//! - [`construction::train_independent`] zeroes the first-layer weights so the
//!   network output no longer depends on its input, then trains the remaining
//!   layers so the loss, seen as a function of the first `z` first-layer
//!   biases, matches the pattern up to a constant.
//! - [`construction::train_embedded`] keeps a random injective embedding of
//!   the input alive in the remaining first-layer columns, so that the
//!   pattern's minimum also becomes an approximate global minimum of the
//!   original task.
//!
//! [`surface`] evaluates the loss on the lattice spanned by the slice
//! directions and measures how well it matches the pattern.

pub mod cli;
pub mod construction;
pub mod data;
mod error;
pub mod losses;
pub mod nn;
pub mod patterns;
pub mod pnm;
pub mod surface;
pub mod verify;

pub use error::{Error, Result};
