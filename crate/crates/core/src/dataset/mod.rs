//! Part taxonomy, benchmark tasks, the manifest-based loader and synthetic fixtures.

mod manifest;
pub mod synthetic;
mod tasks;
mod taxonomy;

use thiserror::Error;

pub use manifest::{
    hard_label_view, load_dataset, read_manifest, write_manifest, DatasetEntry, Manifest, ManifestEntry,
    MANIFEST_FILE,
};
pub use tasks::{find_reference, reference_tasks, task_pairs, Conventionality, ReferenceTask, TaskSpec};
pub use taxonomy::{label_components, label_order_key, merge_label, taxonomy, PartTaxonomy};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error("entry {entry}: {message}")]
    Entry { entry: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("synthetic fixture: {0}")]
    Synthetic(String),
}
