//! File formats: run configuration, checkpoints and CSV output.

pub mod checkpoint;
pub mod config;
pub mod csv;

pub use checkpoint::{checkpoint_to_string, read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{ModelKind, RunConfig};
pub use csv::CsvWriter;
