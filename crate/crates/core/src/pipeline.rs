//! Frame-level glue: classify and cluster frames into detection records,
//! and score detection records against ground truth.

use std::collections::HashMap;

use crate::clustering::{cluster_by_class, merge_filter, ClusterParams, MergeParams};
use crate::ensemble::{classify_frame, Classifier};
use crate::error::{Error, Result};
use crate::io::{Detections, FrameDetections, FrameRecord, ProposalRecord, TargetRecord};
use crate::metrics::{
    object_detection_f1, range_binned_f1, roc_curve, target_f1, FrameObjects, ObjectReport, RangeBin, RocCurve,
    TargetReport,
};
use crate::types::{ClassifiedTarget, Frame, ObjectProposal, RoadClass};

/// Clustering stage settings; `None` in [`detect_frame`] skips clustering.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Clustering {
    pub params: ClusterParams,
    pub merge: MergeParams,
}

pub fn propose(targets: &[ClassifiedTarget], clustering: &Clustering) -> Vec<ObjectProposal> {
    merge_filter(&cluster_by_class(targets, &clustering.params), &clustering.merge)
}

pub fn detect_frame(
    classifier: &Classifier,
    frame: &Frame,
    static_threshold: f64,
    clustering: Option<&Clustering>,
) -> Result<FrameDetections> {
    let predictions = classify_frame(classifier, frame, static_threshold)?;
    let targets = predictions
        .iter()
        .map(|p| TargetRecord::from_prediction(frame.frame_id, p))
        .collect();
    let proposals = match clustering {
        Some(c) => {
            let classified: Vec<ClassifiedTarget> = predictions.into_iter().map(|p| p.target).collect();
            propose(&classified, c)
                .iter()
                .map(|p| ProposalRecord::from_proposal(frame.frame_id, p))
                .collect()
        }
        None => Vec::new(),
    };
    Ok(FrameDetections {
        frame_id: frame.frame_id,
        targets,
        proposals,
    })
}

/// Detection frames paired with their ground-truth records, in detection
/// order. The two frame sets must be identical.
pub fn align<'a>(det: &'a Detections, gt: &'a [FrameRecord]) -> Result<Vec<(&'a FrameDetections, &'a FrameRecord)>> {
    let by_id: HashMap<u64, &FrameRecord> = gt.iter().map(|r| (r.frame_id, r)).collect();
    let predicted: HashMap<u64, ()> = det.frames.iter().map(|f| (f.frame_id, ())).collect();
    let mut missing: Vec<u64> = gt
        .iter()
        .map(|r| r.frame_id)
        .filter(|id| !predicted.contains_key(id))
        .collect();
    let mut unexpected: Vec<u64> = det
        .frames
        .iter()
        .map(|f| f.frame_id)
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        missing.sort_unstable();
        unexpected.sort_unstable();
        return Err(Error::FrameSetMismatch { missing, unexpected });
    }
    Ok(det.frames.iter().map(|f| (f, by_id[&f.frame_id])).collect())
}

fn record_labels(record: &FrameRecord) -> Vec<RoadClass> {
    let mut labels = vec![RoadClass::Other; record.targets.len()];
    for a in &record.annotations {
        for &i in &a.target_indices {
            if let Some(l) = labels.get_mut(i) {
                *l = a.class_label;
            }
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetEvaluation {
    pub report: TargetReport,
    pub range_bins: Option<Vec<RangeBin>>,
    /// One curve per class when OvA member scores are present and the class
    /// has both positive and negative targets.
    pub roc: Vec<(RoadClass, RocCurve)>,
}

/// Target-wise scores over every classified target. `range_bin_m` enables
/// range-binned F1.
pub fn evaluate_targets(
    det: &Detections,
    gt: &[FrameRecord],
    range_bin_m: Option<f64>,
    roc_thresholds: usize,
) -> Result<TargetEvaluation> {
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    let mut ranges = Vec::new();
    let mut ova: Vec<[f64; 4]> = Vec::new();
    let mut all_ova = true;
    for (f, r) in align(det, gt)? {
        let labels = record_labels(r);
        for t in &f.targets {
            let label = *labels.get(t.index).ok_or_else(|| {
                Error::Config(format!("frame {}: target index {} out of bounds", f.frame_id, t.index))
            })?;
            predicted.push(t.predicted_class);
            truth.push(label);
            ranges.push(r.targets[t.index].range_m);
            match t.ova_scores {
                Some(s) => ova.push(s),
                None => all_ova = false,
            }
        }
    }
    let report = target_f1(&predicted, &truth)?;
    let range_bins = range_bin_m
        .map(|w| range_binned_f1(&predicted, &truth, &ranges, w))
        .transpose()?;
    let mut roc = Vec::new();
    if all_ova && !ova.is_empty() {
        for class in RoadClass::ALL {
            let labels: Vec<bool> = truth.iter().map(|&l| l == class).collect();
            if labels.iter().all(|&b| b) || !labels.iter().any(|&b| b) {
                continue;
            }
            let scores: Vec<f64> = ova.iter().map(|s| s[class.index()]).collect();
            roc.push((class, roc_curve(&scores, &labels, roc_thresholds)?));
        }
    }
    Ok(TargetEvaluation {
        report,
        range_bins,
        roc,
    })
}

pub fn evaluate_objects(det: &Detections, gt: &[FrameRecord]) -> Result<ObjectReport> {
    if !det.clustered {
        return Err(Error::Config("detections were produced without clustering".into()));
    }
    let pairs = align(det, gt)?;
    let proposals: Vec<Vec<ObjectProposal>> = pairs
        .iter()
        .map(|(f, _)| f.proposals.iter().map(ProposalRecord::to_proposal).collect())
        .collect();
    let frames: Vec<FrameObjects<'_>> = pairs
        .iter()
        .zip(&proposals)
        .map(|((_, r), p)| FrameObjects {
            proposals: p,
            annotations: &r.annotations,
        })
        .collect();
    Ok(object_detection_f1(&frames))
}

/// Re-runs clustering on the classified targets of `det`, leaving the
/// target records untouched.
pub fn recluster(det: &Detections, gt: &[FrameRecord], clustering: &Clustering) -> Result<Detections> {
    let mut frames = Vec::with_capacity(det.frames.len());
    for (f, r) in align(det, gt)? {
        let classified = f
            .targets
            .iter()
            .map(|t| t.to_classified(&r.targets, r.ego_speed_mps))
            .collect::<Result<Vec<_>>>()?;
        let proposals = propose(&classified, clustering)
            .iter()
            .map(|p| ProposalRecord::from_proposal(f.frame_id, p))
            .collect();
        frames.push(FrameDetections {
            frame_id: f.frame_id,
            targets: f.targets.clone(),
            proposals,
        });
    }
    Ok(Detections {
        clustered: true,
        frames,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterComparison {
    pub class_specific: ObjectReport,
    pub universal: ObjectReport,
}

impl ClusterComparison {
    pub fn difference(&self) -> f64 {
        self.class_specific.macro_f1 - self.universal.macro_f1
    }
}

/// Object-wise F1 of two clusterings over the same classified targets.
pub fn cluster_compare(
    det: &Detections,
    gt: &[FrameRecord],
    class_specific: &Clustering,
    universal: &Clustering,
) -> Result<ClusterComparison> {
    Ok(ClusterComparison {
        class_specific: evaluate_objects(&recluster(det, gt, class_specific)?, gt)?,
        universal: evaluate_objects(&recluster(det, gt, universal)?, gt)?,
    })
}
