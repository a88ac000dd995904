//! Core building blocks for a modular reinforcement-learning toolkit.
//!
//! Everything in this crate is `no_std` + `alloc`: the columnar [`batch`]
//! container, the built-in [`env`]ironments, segmented [`replay`] buffers with
//! episode-boundary navigation, partial-episode [`returns`] estimation and the
//! linear [`policy`] family. Threads, clocks and files live in the `rlforge`
//! companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod batch;
pub mod env;
pub mod policy;
pub mod replay;
pub mod returns;
pub mod rng;
pub mod wire;

pub use batch::{Array, Batch, BatchError, Entry, PadMode, ScalarKind};
pub use env::{Action, ActionSpace, Env, EnvError, EnvSpec, StepResult};
pub use rng::SplitMix64;
