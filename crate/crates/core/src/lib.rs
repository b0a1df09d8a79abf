//! Distributed robust exact differentiation of a leader signal over an
//! undirected follower network.
//!
//! Each follower runs an order-`m` observer fed only by its own state, its
//! neighbors' zeroth-order estimates and, for agents with leader access, a
//! noisy sample of the leader signal. All followers converge to the leader's
//! first `m` derivatives.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod graph;
pub mod numerics;
pub mod protocol;
pub mod selftest;
pub mod signals;
pub mod simulator;

pub use error::{Error, Result};
