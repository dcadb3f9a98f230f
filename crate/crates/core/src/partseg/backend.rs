//! Sources of candidate part masks.
//!
//! A backend reports `{label, mask, score}` records. The fixture backend reads
//! them from `<dir>/<rgb stem>.json`; the external backend runs a program:
//!
//! ```text
//! <program> [args..] --rgb <path> --crop <x0>,<y0>,<x1>,<y1> --width <w> --height <h> --out <dir>
//! ```
//!
//! which prints the JSON record list on stdout. Relative mask paths resolve
//! against the fixture directory or `--out` respectively. Masks are full-frame
//! 8-bit PNGs.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{PartHypothesis, PartsegError};
use crate::dataset::synthetic::FixtureMask;
use crate::geometry::{Mask2D, Region};

pub trait SegBackend: Send + Sync {
    /// Hypotheses for the image at `rgb`, in backend order.
    fn propose(&self, rgb: &Path, crop: Region, dims: (usize, usize)) -> Result<Vec<PartHypothesis>, PartsegError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Fixture { dir: PathBuf },
    External { program: PathBuf, args: Vec<String> },
}

impl BackendSpec {
    pub fn build(&self) -> Box<dyn SegBackend> {
        match self {
            BackendSpec::Fixture { dir } => Box::new(FixtureBackend::new(dir.clone())),
            BackendSpec::External { program, args } => Box::new(ExternalBackend {
                program: program.clone(),
                args: args.clone(),
            }),
        }
    }
}

fn load_records(records: Vec<FixtureMask>, base: &Path, dims: (usize, usize)) -> Result<Vec<PartHypothesis>, PartsegError> {
    let mut out = Vec::new();
    for r in records {
        let path = base.join(&r.mask);
        let mask = Mask2D::load_png(&path).map_err(|e| PartsegError::Backend(e.to_string()))?;
        if mask.dims() != dims {
            return Err(PartsegError::Backend(format!(
                "mask {} is {:?}, image is {:?}",
                path.display(),
                mask.dims(),
                dims
            )));
        }
        if let Some(s) = r.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(PartsegError::Backend(format!("score {s} for '{}' outside [0,1]", r.label)));
            }
        }
        if mask.is_empty() {
            log::debug!("backend mask '{}' is empty; skipped", r.label);
            continue;
        }
        out.push(PartHypothesis {
            label: r.label.trim().to_string(),
            mask,
            score: r.score,
        });
    }
    Ok(out)
}

/// Reads stored backend output from a directory.
#[derive(Clone, Debug)]
pub struct FixtureBackend {
    dir: PathBuf,
}

impl FixtureBackend {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn record_path(&self, rgb: &Path) -> PathBuf {
        let stem = rgb.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        self.dir.join(format!("{stem}.json"))
    }
}

impl SegBackend for FixtureBackend {
    fn propose(&self, rgb: &Path, _crop: Region, dims: (usize, usize)) -> Result<Vec<PartHypothesis>, PartsegError> {
        let path = self.record_path(rgb);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| PartsegError::Backend(format!("{}: {e}", path.display())))?;
        let records: Vec<FixtureMask> =
            serde_json::from_str(&text).map_err(|e| PartsegError::Backend(format!("{}: {e}", path.display())))?;
        load_records(records, &self.dir, dims)
    }
}

/// Runs an external segmentation program per image.
#[derive(Clone, Debug)]
pub struct ExternalBackend {
    pub program: PathBuf,
    pub args: Vec<String>,
}

static RUN_COUNTER: AtomicUsize = AtomicUsize::new(0);

impl SegBackend for ExternalBackend {
    fn propose(&self, rgb: &Path, crop: Region, dims: (usize, usize)) -> Result<Vec<PartHypothesis>, PartsegError> {
        let out_dir = std::env::temp_dir().join(format!(
            "handover-backend-{}-{}",
            std::process::id(),
            RUN_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&out_dir).map_err(|e| PartsegError::Backend(e.to_string()))?;
        let result = (|| {
            let output = Command::new(&self.program)
                .args(&self.args)
                .arg("--rgb")
                .arg(rgb)
                .arg("--crop")
                .arg(format!("{},{},{},{}", crop.x0, crop.y0, crop.x1, crop.y1))
                .arg("--width")
                .arg(dims.0.to_string())
                .arg("--height")
                .arg(dims.1.to_string())
                .arg("--out")
                .arg(&out_dir)
                .output()
                .map_err(|e| PartsegError::Backend(format!("{}: {e}", self.program.display())))?;
            if !output.status.success() {
                return Err(PartsegError::Backend(format!(
                    "{} exited with {}: {}",
                    self.program.display(),
                    output.status,
                    String::from_utf8_lossy(&output.stderr).trim()
                )));
            }
            let records: Vec<FixtureMask> = serde_json::from_slice(&output.stdout)
                .map_err(|e| PartsegError::Backend(format!("backend output: {e}")))?;
            load_records(records, &out_dir, dims)
        })();
        let _ = std::fs::remove_dir_all(&out_dir);
        result
    }
}

/// Fixed in-memory hypotheses.
#[derive(Clone, Debug, Default)]
pub struct StaticBackend(pub Vec<PartHypothesis>);

impl SegBackend for StaticBackend {
    fn propose(&self, _rgb: &Path, _crop: Region, _dims: (usize, usize)) -> Result<Vec<PartHypothesis>, PartsegError> {
        Ok(self.0.clone())
    }
}
