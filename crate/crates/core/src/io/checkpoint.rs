//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! "RTCK" | version u16 | tensor count u32
//! per tensor: name length u16 | name (UTF-8) | rank u8 | dims u32 * rank | f32 payload
//! sidecar length u32 | sidecar JSON
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_class_order, class_names, create_dir, read_file, write_atomic};
use crate::ensemble::{Classifier, EnsembleModel};
use crate::error::{Error, Result};
use crate::model::{LabelMapping, RtcNetModel, TrainConfig, TrainingLog, ACTIVATION};
use crate::net::{Architecture, Network};
use crate::preprocess::{CropConfig, NormalizationStats};
use crate::tensor::Tensor;
use crate::types::CubeGeometry;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RTCK";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    architecture: Architecture,
    activation: String,
    class_order: Vec<String>,
    mapping: LabelMapping,
    #[serde(default)]
    normalization: Option<NormalizationStats>,
    crop: CropConfig,
    geometry: Option<CubeGeometry>,
    train_config: TrainConfig,
    seed: u64,
}

pub fn encode_checkpoint(model: &RtcNetModel) -> Result<Vec<u8>> {
    let arch = *model.architecture();
    let specs = arch.param_specs();
    let params = model.network.params();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (spec, p) in specs.iter().zip(params) {
        if !p.all_finite() {
            return Err(Error::NonFinite(format!("parameter {}", spec.name)));
        }
        out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.push(p.shape().len() as u8);
        for &d in p.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sidecar = Sidecar {
        architecture: arch,
        activation: ACTIVATION.to_string(),
        class_order: class_names(),
        mapping: model.mapping,
        normalization: Some(model.normalization),
        crop: model.crop,
        geometry: model.geometry,
        train_config: model.train_config,
        seed: model.train_config.seed,
    };
    let json = serde_json::to_vec(&sidecar).map_err(|e| Error::NonFinite(format!("checkpoint sidecar: {e}")))?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// `path` is only used in error messages.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<RtcNetModel> {
    let mut c = Cursor { bytes, pos: 0, path };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic bytes"));
    }
    let version = c.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version.into(),
            expected: CHECKPOINT_VERSION.into(),
        });
    }
    let count = c.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "tensor name")?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = c.u8("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32("dims")? as usize);
        }
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(path, format!("tensor {name} is too large")))?;
        let data: Vec<f32> = c
            .take(n, &name)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {name}")));
        }
        tensors.push((name, Tensor::new(dims, data)?));
    }
    let len = c.u32("sidecar length")? as usize;
    let sidecar: Sidecar =
        serde_json::from_slice(c.take(len, "sidecar")?).map_err(|e| Error::format(path, format!("sidecar: {e}")))?;
    if c.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after sidecar"));
    }

    if sidecar.activation != ACTIVATION {
        return Err(Error::format(
            path,
            format!("unsupported activation {}", sidecar.activation),
        ));
    }
    check_class_order(path, &sidecar.class_order)?;
    let normalization = sidecar
        .normalization
        .ok_or_else(|| Error::format(path, "sidecar lacks normalization statistics"))?;
    normalization
        .validate()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let arch = sidecar.architecture;
    let arch =
        Architecture::new(arch.n_out, arch.ablation, arch.block).map_err(|e| Error::format(path, e.to_string()))?;
    if arch.n_out != sidecar.mapping.n_out() {
        return Err(Error::format(path, "output width does not match the label mapping"));
    }
    if sidecar.crop.block_shape() != arch.block || sidecar.train_config.ablation != arch.ablation {
        return Err(Error::format(path, "crop or ablation does not match the architecture"));
    }
    if sidecar.seed != sidecar.train_config.seed {
        return Err(Error::format(path, "seed does not match the training config"));
    }
    let specs = arch.param_specs();
    if specs.len() != tensors.len() {
        return Err(Error::format(
            path,
            format!("expected {} tensors, found {}", specs.len(), tensors.len()),
        ));
    }
    let mut params = Vec::with_capacity(tensors.len());
    for (spec, (name, t)) in specs.iter().zip(tensors) {
        if name != spec.name || t.shape() != spec.shape.as_slice() {
            return Err(Error::format(
                path,
                format!(
                    "tensor {name} {:?} where {} {:?} was expected",
                    t.shape(),
                    spec.name,
                    spec.shape
                ),
            ));
        }
        params.push(t);
    }
    Ok(RtcNetModel {
        network: Network::from_params(arch, params)?,
        mapping: sidecar.mapping,
        normalization,
        crop: sidecar.crop,
        geometry: sidecar.geometry,
        train_config: sidecar.train_config,
    })
}

pub fn write_checkpoint(model: &RtcNetModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn read_checkpoint(path: &Path) -> Result<RtcNetModel> {
    decode_checkpoint(&read_file(path)?, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ensemble,
    Multiclass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub mapping: LabelMapping,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    pub kind: ModelKind,
    pub members: Vec<ManifestEntry>,
}

/// Writes one checkpoint per member plus `manifest.json` into `dir`.
pub fn write_classifier(classifier: &Classifier, dir: &Path) -> Result<ModelManifest> {
    create_dir(dir)?;
    let (kind, members): (_, Vec<&RtcNetModel>) = match classifier {
        Classifier::Ensemble(e) => (ModelKind::Ensemble, e.members().iter().collect()),
        Classifier::MultiClass(m) => (ModelKind::Multiclass, vec![m]),
    };
    let mut entries = Vec::with_capacity(members.len());
    for m in members {
        let file = format!("{}.rtck", m.mapping.tag());
        write_checkpoint(m, &dir.join(&file))?;
        entries.push(ManifestEntry {
            mapping: m.mapping,
            file,
        });
    }
    let manifest = ModelManifest {
        format_version: MANIFEST_VERSION,
        kind,
        members: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::format(&path, e.to_string()))?;
    json.push(b'\n');
    write_atomic(&path, &json)?;
    Ok(manifest)
}

pub fn read_classifier(dir: &Path) -> Result<Classifier> {
    let path = dir.join(MANIFEST_FILE);
    let manifest: ModelManifest =
        serde_json::from_slice(&read_file(&path)?).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::UnsupportedVersion {
            found: manifest.format_version,
            expected: MANIFEST_VERSION,
        });
    }
    let mut members = Vec::with_capacity(manifest.members.len());
    for entry in &manifest.members {
        if entry.file.contains(['/', '\\']) {
            return Err(Error::format(
                &path,
                format!("member file {} is not a plain name", entry.file),
            ));
        }
        let m = read_checkpoint(&dir.join(&entry.file))?;
        if m.mapping != entry.mapping {
            return Err(Error::format(&path, format!("{} holds a different member", entry.file)));
        }
        members.push(m);
    }
    match manifest.kind {
        ModelKind::Ensemble => Ok(Classifier::Ensemble(EnsembleModel::from_members(members)?)),
        ModelKind::Multiclass => match <[RtcNetModel; 1]>::try_from(members) {
            Ok([m]) if m.mapping == LabelMapping::MultiClass => Ok(Classifier::MultiClass(m)),
            _ => Err(Error::format(
                &path,
                "multiclass model needs exactly one multiclass member",
            )),
        },
    }
}

/// One JSON record per epoch, tagged with the member it belongs to.
pub fn write_training_logs(logs: &[TrainingLog], path: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        member: String,
        #[serde(flatten)]
        record: &'a crate::model::EpochRecord,
        best: bool,
    }
    let mut out = Vec::new();
    for log in logs {
        for r in &log.epochs {
            let line = Line {
                member: log.mapping.tag(),
                record: r,
                best: r.epoch == log.best_epoch,
            };
            serde_json::to_writer(&mut out, &line).map_err(|e| Error::format(path, e.to_string()))?;
            out.push(b'\n');
        }
    }
    write_atomic(path, &out)
}
