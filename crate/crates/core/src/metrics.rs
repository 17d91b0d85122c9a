//! Target-wise and object-wise evaluation, confusion matrices and ROC
//! curves.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Annotation, ObjectProposal, RoadClass, NUM_CLASSES};

/// Per-class counts of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2 tp / (2 tp + fp + fn)`; zero when nothing was predicted or present.
    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// True when the class appears in the predictions or the ground truth.
    pub fn is_present(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    fn add(&mut self, other: &Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Unweighted mean F1 over classes `0..n_classes` that occur in either
/// input. Returns 0 for empty input.
pub fn macro_f1(predicted: &[usize], truth: &[usize], n_classes: usize) -> f64 {
    let mut counts = vec![Counts::default(); n_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            counts[p].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[t].fn_ += 1;
        }
    }
    mean_f1(counts.iter())
}

fn mean_f1<'a>(counts: impl Iterator<Item = &'a Counts>) -> f64 {
    let (sum, n) = counts
        .filter(|c| c.is_present())
        .fold((0.0, 0usize), |(s, n), c| (s + c.f1(), n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: RoadClass,
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of ground-truth items of the class.
    pub support: u64,
}

impl ClassMetrics {
    fn new(class: RoadClass, counts: Counts) -> Self {
        Self {
            class,
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            support: counts.tp + counts.fn_,
        }
    }
}

/// Rows are ground truth, columns predictions, both in class-index order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn counts(&self, class: RoadClass) -> Counts {
        let c = class.index();
        let tp = self.0[c][c];
        Counts {
            tp,
            fp: (0..NUM_CLASSES).map(|t| self.0[t][c]).sum::<u64>() - tp,
            fn_: self.0[c].iter().sum::<u64>() - tp,
        }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl TargetReport {
    pub fn class(&self, class: RoadClass) -> &ClassMetrics {
        &self.per_class[class.index()]
    }
}

pub fn target_f1(predicted: &[RoadClass], truth: &[RoadClass]) -> Result<TargetReport> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch(predicted.len(), truth.len()));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut confusion = ConfusionMatrix::default();
    for (p, t) in predicted.iter().zip(truth) {
        confusion.0[t.index()][p.index()] += 1;
    }
    let per_class: Vec<ClassMetrics> = RoadClass::ALL
        .iter()
        .map(|&c| ClassMetrics::new(c, confusion.counts(c)))
        .collect();
    Ok(TargetReport {
        macro_f1: mean_f1(per_class.iter().map(|m| &m.counts)),
        per_class,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBin {
    pub index: usize,
    pub range_lo_m: f64,
    pub range_hi_m: f64,
    pub count: usize,
    pub report: TargetReport,
}

/// Target-wise F1 per range bin `floor(range / bin_width)`. Bins without
/// targets are omitted.
pub fn range_binned_f1(
    predicted: &[RoadClass],
    truth: &[RoadClass],
    ranges_m: &[f64],
    bin_width_m: f64,
) -> Result<Vec<RangeBin>> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch(predicted.len(), truth.len()));
    }
    if ranges_m.len() != truth.len() {
        return Err(Error::LengthMismatch(ranges_m.len(), truth.len()));
    }
    if !(bin_width_m > 0.0) {
        return Err(Error::Config("range bin width must be positive".into()));
    }
    let mut bins: std::collections::BTreeMap<usize, (Vec<RoadClass>, Vec<RoadClass>)> = Default::default();
    for ((&p, &t), &r) in predicted.iter().zip(truth).zip(ranges_m) {
        let b = bins.entry((r / bin_width_m).floor().max(0.0) as usize).or_default();
        b.0.push(p);
        b.1.push(t);
    }
    bins.into_iter()
        .map(|(index, (p, t))| {
            Ok(RangeBin {
                index,
                range_lo_m: index as f64 * bin_width_m,
                range_hi_m: (index + 1) as f64 * bin_width_m,
                count: t.len(),
                report: target_f1(&p, &t)?,
            })
        })
        .collect()
}

/// Intersection and union sizes of two index sets.
pub fn intersection_union(a: &[usize], b: &[usize]) -> (usize, usize) {
    let a: HashSet<usize> = a.iter().copied().collect();
    let b: HashSet<usize> = b.iter().copied().collect();
    let inter = a.intersection(&b).count();
    (inter, a.len() + b.len() - inter)
}

/// IoU of at least one half, tested exactly.
pub fn iou_passes(intersection: usize, union: usize) -> bool {
    union > 0 && 2 * intersection >= union
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatch {
    pub frame: usize,
    pub proposal_id: usize,
    pub annotation_id: u64,
    pub class: RoadClass,
    pub intersection: usize,
    pub union: usize,
    pub iou: f64,
}

/// Proposals and ground-truth objects of one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameObjects<'a> {
    pub proposals: &'a [ObjectProposal],
    pub annotations: &'a [Annotation],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    /// Pedestrian, cyclist and car, in that order.
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub matches: Vec<DetectionMatch>,
}

impl ObjectReport {
    pub fn class(&self, class: RoadClass) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|m| m.class == class)
    }
}

/// Object-wise detection F1. A proposal and an annotation of the same class
/// match when their target-index IoU is at least 0.5; pairs are taken
/// greedily by descending IoU (ties by ascending proposal id, then
/// annotation position) and each side matches at most once. Annotations of
/// class "other" are not objects and are ignored.
pub fn object_detection_f1(frames: &[FrameObjects<'_>]) -> ObjectReport {
    let mut counts = [Counts::default(); 3];
    let mut matches = Vec::new();
    for (fi, frame) in frames.iter().enumerate() {
        for (ci, &class) in RoadClass::ROAD_USERS.iter().enumerate() {
            let props: Vec<(usize, &ObjectProposal)> = frame
                .proposals
                .iter()
                .enumerate()
                .filter(|(_, p)| p.class_label == class)
                .collect();
            let annos: Vec<(usize, &Annotation)> = frame
                .annotations
                .iter()
                .enumerate()
                .filter(|(_, a)| a.class_label == class)
                .collect();
            let mut pairs = Vec::new();
            for &(pi, p) in &props {
                for &(ai, a) in &annos {
                    let (inter, union) = intersection_union(&p.member_indices, &a.target_indices);
                    if iou_passes(inter, union) {
                        pairs.push((pi, ai, inter, union));
                    }
                }
            }
            pairs.sort_by(|x, y| {
                // x.iou > y.iou  <=>  x.inter * y.union > y.inter * x.union
                (y.2 * x.3).cmp(&(x.2 * y.3)).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1))
            });
            let mut used_p = HashSet::new();
            let mut used_a = HashSet::new();
            for (pi, ai, inter, union) in pairs {
                if used_p.contains(&pi) || used_a.contains(&ai) {
                    continue;
                }
                used_p.insert(pi);
                used_a.insert(ai);
                matches.push(DetectionMatch {
                    frame: fi,
                    proposal_id: pi,
                    annotation_id: frame.annotations[ai].object_id,
                    class,
                    intersection: inter,
                    union,
                    iou: inter as f64 / union as f64,
                });
            }
            let tp = used_p.len() as u64;
            counts[ci].add(&Counts {
                tp,
                fp: props.len() as u64 - tp,
                fn_: annos.len() as u64 - tp,
            });
        }
    }
    let per_class: Vec<ClassMetrics> = RoadClass::ROAD_USERS
        .iter()
        .zip(&counts)
        .map(|(&c, &n)| ClassMetrics::new(c, n))
        .collect();
    ObjectReport {
        macro_f1: mean_f1(per_class.iter().map(|m| &m.counts)),
        per_class,
        matches,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// From (0, 0) at an infinite threshold to (1, 1).
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC of "score >= threshold" decisions. The returned points sit at score
/// quantiles (every distinct score when `n_thresholds` is at least the
/// number of scores); the AUC always comes from the exact empirical curve.
pub fn roc_curve(scores: &[f64], labels: &[bool], n_thresholds: usize) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassLabels);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("ROC scores".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let sorted: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    let n = sorted.len();

    let sweep = |thresholds: &[f64]| {
        let mut points = vec![RocPoint {
            threshold: f64::INFINITY,
            fpr: 0.0,
            tpr: 0.0,
        }];
        let (mut tp, mut fp, mut pos) = (0usize, 0usize, 0usize);
        for &thr in thresholds {
            while pos < n && sorted[pos] >= thr {
                if labels[order[pos]] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                pos += 1;
            }
            points.push(RocPoint {
                threshold: thr,
                fpr: fp as f64 / n_neg as f64,
                tpr: tp as f64 / n_pos as f64,
            });
        }
        points
    };
    let mut all = sorted.clone();
    all.dedup();
    let exact = sweep(&all);
    let auc = exact
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    let points = if n_thresholds >= n || n_thresholds < 2 {
        exact
    } else {
        let mut q: Vec<f64> = (0..n_thresholds)
            .map(|k| sorted[((k as f64 / (n_thresholds - 1) as f64) * (n - 1) as f64).round() as usize])
            .collect();
        q.dedup();
        sweep(&q)
    };
    Ok(RocCurve { points, auc })
}

/// One line per class plus the macro average.
pub fn target_report_csv(report: &TargetReport) -> String {
    let mut s = String::from("class,tp,fp,fn,precision,recall,f1,support\n");
    for m in &report.per_class {
        push_class_row(&mut s, m);
    }
    let _ = writeln!(s, "macro,,,,,,{:.6},", report.macro_f1);
    s
}

pub fn object_report_csv(report: &ObjectReport) -> String {
    let mut s = String::from("class,tp,fp,fn,precision,recall,f1,support\n");
    for m in &report.per_class {
        push_class_row(&mut s, m);
    }
    let _ = writeln!(s, "macro,,,,,,{:.6},", report.macro_f1);
    s
}

fn push_class_row(s: &mut String, m: &ClassMetrics) {
    let _ = writeln!(
        s,
        "{},{},{},{},{:.6},{:.6},{:.6},{}",
        m.class, m.counts.tp, m.counts.fp, m.counts.fn_, m.precision, m.recall, m.f1, m.support
    );
}

pub fn confusion_csv(confusion: &ConfusionMatrix) -> String {
    let mut s = String::from("truth\\predicted");
    for c in RoadClass::ALL {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for t in RoadClass::ALL {
        let _ = write!(s, "{t}");
        for p in RoadClass::ALL {
            let _ = write!(s, ",{}", confusion.0[t.index()][p.index()]);
        }
        s.push('\n');
    }
    s
}

pub fn range_bins_csv(bins: &[RangeBin]) -> String {
    let mut s = String::from("range_lo_m,range_hi_m,count,class,support,f1\n");
    for b in bins {
        for m in &b.report.per_class {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:.6}",
                b.range_lo_m, b.range_hi_m, b.count, m.class, m.support, m.f1
            );
        }
    }
    s
}

pub fn roc_csv(curves: &[(RoadClass, RocCurve)]) -> String {
    let mut s = String::from("class,threshold,fpr,tpr\n");
    for (c, curve) in curves {
        for p in &curve.points {
            let _ = writeln!(s, "{c},{},{:.6},{:.6}", p.threshold, p.fpr, p.tpr);
        }
    }
    s
}

/// A minimal standalone SVG with one polyline per curve.
pub fn roc_svg(curves: &[(RoadClass, RocCurve)]) -> String {
    const SIZE: f64 = 400.0;
    const MARGIN: f64 = 40.0;
    const COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#7f7f7f"];
    let span = SIZE - 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{MARGIN}" y1="{}" x2="{}" y2="{MARGIN}" stroke="#bbbbbb" stroke-dasharray="4"/>"##,
        SIZE - MARGIN,
        SIZE - MARGIN
    );
    for (k, (class, curve)) in curves.iter().enumerate() {
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", MARGIN + p.fpr * span, SIZE - MARGIN - p.tpr * span))
            .collect();
        let color = COLORS[class.index()];
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{class} AUC {:.3}</text>"#,
            MARGIN + span - 120.0,
            SIZE - MARGIN - 10.0 - 15.0 * k as f64,
            curve.auc
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12">false positive rate</text>"#,
        SIZE / 2.0 - 50.0,
        SIZE - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})">true positive rate</text>"#,
        SIZE / 2.0 + 50.0,
        SIZE / 2.0 + 50.0
    );
    s.push_str("</svg>\n");
    s
}
