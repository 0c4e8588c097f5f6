//! Approximately bisimilar symbolic models of incrementally stable switched
//! systems, and safety controllers synthesized from them.

pub mod abstraction;
pub mod cli;
pub mod closedloop;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod export;
pub mod lattice;
pub mod lyapunov;
pub mod models;
pub mod synthesis;
pub mod transys;

pub use error::{Error, Result};
