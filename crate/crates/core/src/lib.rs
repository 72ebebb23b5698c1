//! Simulation and analysis toolkit for coherent spectroscopy of
//! rare-earth-ion-doped whispering-gallery-mode resonators.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bistability;
pub mod config;
pub mod constants;
pub mod cqed;
pub mod echo;
pub mod error;
pub mod exec;
pub mod fitkit;
pub mod io;
pub mod model;
pub mod roots;
pub mod scenario;
pub mod wgm;

pub use error::{Error, Result};
pub use exec::Execution;
