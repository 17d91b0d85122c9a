//! On-disk formats: datasets, model checkpoints and detection files.
//!
//! Every writer is deterministic (the same value always produces the same
//! bytes) and replaces its target atomically through a temporary file in the
//! same directory.

mod checkpoint;
mod dataset;
mod detections;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::types::RoadClass;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, read_classifier, write_checkpoint, write_classifier,
    write_training_logs, ManifestEntry, ModelKind, ModelManifest, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, MANIFEST_FILE,
    MANIFEST_VERSION,
};
pub use dataset::{
    cube_file_name, read_dataset, read_frame_records, write_dataset, Dataset, DatasetMeta, DatasetReader,
    DatasetWriter, FrameRecord, CUBE_DIR, DATASET_VERSION, FRAMES_FILE, META_FILE,
};
pub use detections::{
    decode_detections, encode_detections, read_detections, write_detections, DetectionRecord, Detections,
    FrameDetections, ProposalRecord, TargetRecord, DETECTIONS_VERSION,
};

pub(crate) fn class_names() -> Vec<String> {
    RoadClass::ALL.iter().map(|c| c.name().to_string()).collect()
}

pub(crate) fn check_class_order(path: &Path, names: &[String]) -> Result<()> {
    if names != class_names().as_slice() {
        return Err(Error::format(
            path,
            format!("class order {names:?} differs from {:?}", class_names()),
        ));
    }
    Ok(())
}

/// A file being written under a temporary name; it appears at its final
/// path only on [`PendingFile::commit`].
pub(crate) struct PendingFile {
    path: PathBuf,
    out: BufWriter<NamedTempFile>,
}

impl PendingFile {
    pub(crate) fn create(path: &Path) -> Result<Self> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let tmp = NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(tmp),
        })
    }

    pub(crate) fn write_all(&mut self, bytes: &[u8]) -> Result<()> {
        self.out.write_all(bytes).map_err(|e| Error::io(&self.path, e))
    }

    pub(crate) fn commit(self) -> Result<()> {
        let path = self.path;
        let tmp = self.out.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = PendingFile::create(path)?;
    file.write_all(bytes)?;
    file.commit()
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
