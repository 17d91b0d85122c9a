use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_class_order, class_names, read_file, write_atomic};
use crate::ensemble::Prediction;
use crate::error::{Error, Result};
use crate::types::{ClassScores, ClassifiedTarget, ObjectProposal, RadarTarget, RoadClass, NUM_CLASSES};

pub const DETECTIONS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetRecord {
    pub frame_id: u64,
    pub index: usize,
    pub scores: [f64; NUM_CLASSES],
    pub predicted_class: RoadClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ova_scores: Option<[f64; NUM_CLASSES]>,
    pub degenerate: bool,
}

impl TargetRecord {
    pub fn from_prediction(frame_id: u64, p: &Prediction) -> Self {
        Self {
            frame_id,
            index: p.target.index,
            scores: p.target.scores.0,
            predicted_class: p.target.predicted_class,
            ova_scores: p.ova_scores,
            degenerate: p.degenerate,
        }
    }

    /// Rebuilds the classified target from its frame's targets.
    pub fn to_classified(&self, targets: &[RadarTarget], ego_speed_mps: f64) -> Result<ClassifiedTarget> {
        let t = targets.get(self.index).ok_or_else(|| {
            Error::Config(format!(
                "frame {}: target index {} out of bounds",
                self.frame_id, self.index
            ))
        })?;
        let mut c = ClassifiedTarget::new(self.index, *t, ego_speed_mps, ClassScores(self.scores));
        c.predicted_class = self.predicted_class;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalRecord {
    pub frame_id: u64,
    pub class_label: RoadClass,
    pub member_indices: Vec<usize>,
    pub mean_scores: [f64; NUM_CLASSES],
    pub centroid_xy_m: [f64; 2],
    pub mean_v_r_mps: f64,
}

impl ProposalRecord {
    pub fn from_proposal(frame_id: u64, p: &ObjectProposal) -> Self {
        Self {
            frame_id,
            class_label: p.class_label,
            member_indices: p.member_indices.clone(),
            mean_scores: p.mean_scores.0,
            centroid_xy_m: p.centroid_xy_m,
            mean_v_r_mps: p.mean_v_r_mps,
        }
    }

    pub fn to_proposal(&self) -> ObjectProposal {
        ObjectProposal {
            class_label: self.class_label,
            member_indices: self.member_indices.clone(),
            mean_scores: ClassScores(self.mean_scores),
            centroid_xy_m: self.centroid_xy_m,
            mean_v_r_mps: self.mean_v_r_mps,
        }
    }
}

/// One line of a detections file. The header comes first and lists every
/// frame, including frames without detections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum DetectionRecord {
    Header {
        format_version: u32,
        class_order: Vec<String>,
        clustered: bool,
        frame_ids: Vec<u64>,
    },
    Target(TargetRecord),
    Proposal(ProposalRecord),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameDetections {
    pub frame_id: u64,
    pub targets: Vec<TargetRecord>,
    pub proposals: Vec<ProposalRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Detections {
    /// Whether object proposals were produced; `false` for target-only runs.
    pub clustered: bool,
    pub frames: Vec<FrameDetections>,
}

impl Detections {
    pub fn record_count(&self) -> usize {
        1 + self
            .frames
            .iter()
            .map(|f| f.targets.len() + f.proposals.len())
            .sum::<usize>()
    }

    pub fn frame(&self, frame_id: u64) -> Option<&FrameDetections> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }
}

fn all_finite(values: impl IntoIterator<Item = f64>) -> bool {
    values.into_iter().all(f64::is_finite)
}

pub fn encode_detections(d: &Detections) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut push = |rec: &DetectionRecord| -> Result<()> {
        serde_json::to_writer(&mut out, rec).map_err(|e| Error::NonFinite(format!("detection record: {e}")))?;
        out.push(b'\n');
        Ok(())
    };
    push(&DetectionRecord::Header {
        format_version: DETECTIONS_VERSION,
        class_order: class_names(),
        clustered: d.clustered,
        frame_ids: d.frames.iter().map(|f| f.frame_id).collect(),
    })?;
    for f in &d.frames {
        for t in &f.targets {
            if t.frame_id != f.frame_id {
                return Err(Error::Config(format!(
                    "target record of frame {} filed under {}",
                    t.frame_id, f.frame_id
                )));
            }
            if !all_finite(t.scores.into_iter().chain(t.ova_scores.into_iter().flatten())) {
                return Err(Error::NonFinite(format!(
                    "scores of target {} in frame {}",
                    t.index, f.frame_id
                )));
            }
            push(&DetectionRecord::Target(t.clone()))?;
        }
        for p in &f.proposals {
            if p.frame_id != f.frame_id {
                return Err(Error::Config(format!(
                    "proposal of frame {} filed under {}",
                    p.frame_id, f.frame_id
                )));
            }
            if !all_finite(p.mean_scores.into_iter().chain(p.centroid_xy_m).chain([p.mean_v_r_mps])) {
                return Err(Error::NonFinite(format!("proposal in frame {}", f.frame_id)));
            }
            push(&DetectionRecord::Proposal(p.clone()))?;
        }
    }
    Ok(out)
}

/// `path` is only used in error messages.
pub fn decode_detections(bytes: &[u8], path: &Path) -> Result<Detections> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let mut lines = text.lines().enumerate();
    let Some((_, first)) = lines.next() else {
        return Err(Error::format(path, "missing header record"));
    };
    let header: DetectionRecord =
        serde_json::from_str(first).map_err(|e| Error::format(path, format!("line 1: {e}")))?;
    let DetectionRecord::Header {
        format_version,
        class_order,
        clustered,
        frame_ids,
    } = header
    else {
        return Err(Error::format(path, "first record is not a header"));
    };
    if format_version != DETECTIONS_VERSION {
        return Err(Error::UnsupportedVersion {
            found: format_version,
            expected: DETECTIONS_VERSION,
        });
    }
    check_class_order(path, &class_order)?;
    let mut slot = HashMap::with_capacity(frame_ids.len());
    let mut frames = Vec::with_capacity(frame_ids.len());
    for &id in &frame_ids {
        if slot.insert(id, frames.len()).is_some() {
            return Err(Error::format(path, format!("frame {id} listed twice")));
        }
        frames.push(FrameDetections {
            frame_id: id,
            ..Default::default()
        });
    }
    let mut last = 0;
    for (i, line) in lines {
        let rec: DetectionRecord =
            serde_json::from_str(line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        let frame_id = match &rec {
            DetectionRecord::Header { .. } => {
                return Err(Error::format(path, format!("line {}: second header", i + 1)))
            }
            DetectionRecord::Target(t) => t.frame_id,
            DetectionRecord::Proposal(p) => p.frame_id,
        };
        let &k = slot
            .get(&frame_id)
            .ok_or_else(|| Error::format(path, format!("line {}: frame {frame_id} not in header", i + 1)))?;
        if k < last {
            return Err(Error::format(
                path,
                format!("line {}: records out of frame order", i + 1),
            ));
        }
        last = k;
        match rec {
            DetectionRecord::Target(t) => {
                if !frames[k].proposals.is_empty() {
                    return Err(Error::format(path, format!("line {}: target after proposals", i + 1)));
                }
                frames[k].targets.push(t)
            }
            DetectionRecord::Proposal(p) => frames[k].proposals.push(p),
            DetectionRecord::Header { .. } => unreachable!(),
        }
    }
    if !clustered && frames.iter().any(|f| !f.proposals.is_empty()) {
        return Err(Error::format(path, "proposals in an unclustered file"));
    }
    Ok(Detections { clustered, frames })
}

pub fn write_detections(d: &Detections, path: &Path) -> Result<()> {
    write_atomic(path, &encode_detections(d)?)
}

pub fn read_detections(path: &Path) -> Result<Detections> {
    decode_detections(&read_file(path)?, path)
}
