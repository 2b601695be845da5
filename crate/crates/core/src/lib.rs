//! Storage-structure advisor: picks a storage engine and a column-group
//! layout for a table partition from its workload, using a cost model
//! learned from benchmark runs, and applies the change atomically.
//!
//! Pipeline: [`bench`] generates training data against the engine
//! simulators in [`sim`], [`learn`] fits the cost model, [`layout`] proposes
//! column-group layouts, [`advisor`] ranks engine/layout candidates, and
//! [`convert`] swaps a partition to the chosen structure.

pub mod advisor;
pub mod bench;
pub mod config;
pub mod convert;
pub mod error;
pub mod features;
pub mod layout;
pub mod learn;
pub mod scenario;
pub mod schema;
pub mod sim;

pub use error::{Error, OpClass, Result};
