#![allow(dead_code)]

use std::path::Path;

use handover_core::config::PipelineConfig;
use handover_core::dataset::synthetic::write_suite;
use handover_core::dataset::{find_reference, Conventionality, load_dataset, DatasetEntry, TaskSpec};
use handover_core::partseg::BackendSpec;

/// Writes a fixture suite under `root` and loads it back.
pub fn suite(root: &Path, classes: &[&str], instances: usize, seed: u64) -> Vec<DatasetEntry> {
    write_suite(root, classes, instances, seed).expect("suite writes");
    load_dataset(root).expect("suite loads")
}

/// Default configuration reading fixture masks from `backend/<mode>` under `root`.
pub fn config(root: &Path, mode: &str) -> PipelineConfig {
    PipelineConfig {
        backend: BackendSpec::Fixture {
            dir: root.join("backend").join(mode),
        },
        ..PipelineConfig::default()
    }
}

/// The reference task for `text`, or a conventional one when none matches.
pub fn task(class: &str, text: &str) -> TaskSpec {
    find_reference(class, text).map(|r| r.spec).unwrap_or_else(|| TaskSpec {
        object_class: class.into(),
        task_text: text.into(),
        conventionality: Conventionality::ConventionalEasy,
    })
}
