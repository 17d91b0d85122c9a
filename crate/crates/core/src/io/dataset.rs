use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_class_order, class_names, create_dir, read_file, write_atomic, PendingFile};
use crate::error::{Error, Result};
use crate::preprocess::NormalizationStats;
use crate::types::{validate_frame, Annotation, CubeGeometry, Frame, RadarCube, RadarTarget};

pub const DATASET_VERSION: u32 = 1;
pub const META_FILE: &str = "meta.toml";
pub const FRAMES_FILE: &str = "frames.jsonl";
pub const CUBE_DIR: &str = "cubes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub n_frames: u64,
    pub classes: Vec<String>,
    pub geometry: CubeGeometry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormalizationStats>,
}

impl DatasetMeta {
    pub fn new(geometry: CubeGeometry, normalization: Option<NormalizationStats>) -> Self {
        Self {
            format_version: DATASET_VERSION,
            n_frames: 0,
            classes: class_names(),
            geometry,
            normalization,
        }
    }
}

/// One line of the frame index. `cube` is relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub ego_speed_mps: f64,
    pub cube: String,
    pub targets: Vec<RadarTarget>,
    pub annotations: Vec<Annotation>,
}

impl FrameRecord {
    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            frame_id: frame.frame_id,
            ego_speed_mps: frame.ego_speed_mps,
            cube: cube_file_name(frame.frame_id),
            targets: frame.targets.clone(),
            annotations: frame.annotations.clone(),
        }
    }

    pub fn into_frame(self, cube: RadarCube) -> Frame {
        Frame {
            frame_id: self.frame_id,
            ego_speed_mps: self.ego_speed_mps,
            targets: self.targets,
            cube,
            annotations: self.annotations,
        }
    }
}

pub fn cube_file_name(frame_id: u64) -> String {
    format!("{CUBE_DIR}/frame_{frame_id:06}.bin")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub frames: Vec<Frame>,
}

fn check_frame_finite(frame: &Frame) -> Result<()> {
    let id = frame.frame_id;
    if !frame.ego_speed_mps.is_finite() {
        return Err(Error::NonFinite(format!("ego speed of frame {id}")));
    }
    for (i, t) in frame.targets.iter().enumerate() {
        if ![t.range_m, t.azimuth_rad, t.v_r_mps, t.rcs_dbsm]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite(format!("target {i} of frame {id}")));
        }
    }
    if let Some(off) = frame.cube.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("cube of frame {id} at cell {off}")));
    }
    Ok(())
}

/// Streams frames into a dataset directory. The frame index and metadata
/// only appear once [`DatasetWriter::finish`] succeeds.
pub struct DatasetWriter {
    dir: PathBuf,
    meta: DatasetMeta,
    index: PendingFile,
    seen: HashSet<u64>,
}

impl DatasetWriter {
    pub fn create(dir: &Path, geometry: CubeGeometry, normalization: Option<NormalizationStats>) -> Result<Self> {
        if let Some(msg) = geometry.validate().into_iter().next() {
            return Err(Error::Config(format!("cube geometry: {msg}")));
        }
        create_dir(&dir.join(CUBE_DIR))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta: DatasetMeta::new(geometry, normalization),
            index: PendingFile::create(&dir.join(FRAMES_FILE))?,
            seen: HashSet::new(),
        })
    }

    pub fn push(&mut self, frame: &Frame) -> Result<()> {
        if !frame.cube.geometry.same_as(&self.meta.geometry) {
            return Err(Error::GeometryMismatch);
        }
        check_frame_finite(frame)?;
        if let Some(issue) = validate_frame(frame).into_iter().next() {
            return Err(Error::Config(format!("frame {}: {issue}", frame.frame_id)));
        }
        if !self.seen.insert(frame.frame_id) {
            return Err(Error::Config(format!("duplicate frame id {}", frame.frame_id)));
        }
        let record = FrameRecord::from_frame(frame);
        let bytes: Vec<u8> = frame.cube.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_atomic(&self.dir.join(&record.cube), &bytes)?;
        let mut line = serde_json::to_vec(&record).map_err(|e| Error::format(&self.dir, e.to_string()))?;
        line.push(b'\n');
        self.index.write_all(&line)?;
        self.meta.n_frames += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<DatasetMeta> {
        self.index.commit()?;
        let meta_path = self.dir.join(META_FILE);
        let text = toml::to_string(&self.meta).map_err(|e| Error::format(&meta_path, e.to_string()))?;
        write_atomic(&meta_path, text.as_bytes())?;
        Ok(self.meta)
    }
}

pub fn write_dataset<'a>(
    dir: &Path,
    geometry: CubeGeometry,
    normalization: Option<NormalizationStats>,
    frames: impl IntoIterator<Item = &'a Frame>,
) -> Result<DatasetMeta> {
    let mut writer = DatasetWriter::create(dir, geometry, normalization)?;
    for frame in frames {
        writer.push(frame)?;
    }
    writer.finish()
}

fn read_meta(dir: &Path) -> Result<DatasetMeta> {
    let path = dir.join(META_FILE);
    let bytes = read_file(&path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::format(&path, e.to_string()))?;
    let version = table
        .get("format_version")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| Error::format(&path, "missing format_version"))?;
    if version != i64::from(DATASET_VERSION) {
        return Err(Error::UnsupportedVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: DATASET_VERSION,
        });
    }
    let meta: DatasetMeta = toml::from_str(text).map_err(|e| Error::format(&path, e.to_string()))?;
    check_class_order(&path, &meta.classes)?;
    if let Some(msg) = meta.geometry.validate().into_iter().next() {
        return Err(Error::format(&path, msg));
    }
    if let Some(stats) = &meta.normalization {
        stats.validate().map_err(|e| Error::format(&path, e.to_string()))?;
    }
    Ok(meta)
}

fn read_cube(dir: &Path, record: &FrameRecord, geometry: CubeGeometry) -> Result<RadarCube> {
    if record.cube != cube_file_name(record.frame_id) {
        return Err(Error::format(
            dir.join(FRAMES_FILE),
            format!(
                "frame {} references unexpected cube file {}",
                record.frame_id, record.cube
            ),
        ));
    }
    let path = dir.join(&record.cube);
    let bytes = read_file(&path)?;
    let expected = 4 * geometry.cell_count();
    if bytes.len() != expected {
        return Err(Error::CubeSizeMismatch {
            frame_id: record.frame_id,
            expected,
            actual: bytes.len(),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(off) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "cube of frame {} at cell {off}",
            record.frame_id
        )));
    }
    Ok(RadarCube { geometry, values })
}

/// Reads a dataset one frame at a time.
pub struct DatasetReader {
    dir: PathBuf,
    meta: DatasetMeta,
    lines: Lines<BufReader<File>>,
    read: u64,
    done: bool,
}

impl DatasetReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta = read_meta(dir)?;
        let path = dir.join(FRAMES_FILE);
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            lines: BufReader::new(file).lines(),
            read: 0,
            done: false,
        })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    /// Next frame record without loading its cube.
    pub fn next_record(&mut self) -> Option<Result<FrameRecord>> {
        if self.done {
            return None;
        }
        let path = self.dir.join(FRAMES_FILE);
        match self.lines.next() {
            None => {
                self.done = true;
                (self.read != self.meta.n_frames).then(|| {
                    Err(Error::format(
                        &path,
                        format!("index lists {} frames, meta declares {}", self.read, self.meta.n_frames),
                    ))
                })
            }
            Some(Err(e)) => {
                self.done = true;
                Some(Err(Error::io(path, e)))
            }
            Some(Ok(line)) => {
                self.read += 1;
                let parsed = serde_json::from_str::<FrameRecord>(&line)
                    .map_err(|e| Error::format(&path, format!("line {}: {e}", self.read)));
                if parsed.is_err() {
                    self.done = true;
                }
                Some(parsed)
            }
        }
    }

    fn load(&self, record: FrameRecord) -> Result<Frame> {
        let cube = read_cube(&self.dir, &record, self.meta.geometry)?;
        let frame = record.into_frame(cube);
        if let Some(issue) = validate_frame(&frame).into_iter().next() {
            return Err(Error::format(
                self.dir.join(FRAMES_FILE),
                format!("frame {}: {issue}", frame.frame_id),
            ));
        }
        Ok(frame)
    }
}

impl Iterator for DatasetReader {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Result<Frame>> {
        let record = self.next_record()?;
        let out = record.and_then(|r| self.load(r));
        if out.is_err() {
            self.done = true;
        }
        Some(out)
    }
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mut reader = DatasetReader::open(dir)?;
    let meta = reader.meta().clone();
    let frames = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(Dataset { meta, frames })
}

/// Metadata and frame index only; cubes are not touched.
pub fn read_frame_records(dir: &Path) -> Result<(DatasetMeta, Vec<FrameRecord>)> {
    let mut reader = DatasetReader::open(dir)?;
    let mut records = Vec::new();
    while let Some(r) = reader.next_record() {
        records.push(r?);
    }
    Ok((reader.meta, records))
}
