//! Value-gated asynchronous federated learning.
//!
//! Clients train locally and report a scalar communication value each round;
//! the server fetches models only from clients at or above the mean value.
//! The crate holds the network, data handling, protocol, a deterministic
//! simulator, a TCP transport and comparison metrics. The guide in `book/`
//! walks through each part.

pub mod data;
pub mod fl;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sim;
pub mod wire;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/value.md")]
mod book_value {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/rounds.md")]
mod book_rounds {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/baselines.md")]
mod book_baselines {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/simulator.md")]
mod book_simulator {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/wire.md")]
mod book_wire {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/metrics.md")]
mod book_metrics {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/acceptance.md")]
mod book_acceptance {}
