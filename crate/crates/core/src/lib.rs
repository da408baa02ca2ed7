//! Core of a tiled linear algebra engine whose task graph is never materialized.
//!
//! Programs are written in a small single-assignment language ([`lang`]); the
//! dependencies of any dynamic task are recovered on demand by solving index
//! equations ([`analysis`]); numerical work happens only in the tile
//! [`kernels`]. Everything here is `no_std` + `alloc`: IO, queues, workers and
//! the CLI live in the companion `lambdapack` crate.

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod kernels;
pub mod lang;
pub mod policy;
pub mod programs;
pub mod tile;

pub use analysis::{Analyzer, Writer};
pub use kernels::Kernel;
pub use lang::{parse_program, Binding, NodeRef, Program, TileRef};
pub use tile::Tile;
