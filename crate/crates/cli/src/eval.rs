use std::path::Path;

use anyhow::{Context, Result};
use rtcnet::clustering::{ClusterParams, MergeParams};
use rtcnet::io::{create_dir, read_detections, read_frame_records, write_atomic, Detections, FrameRecord};
use rtcnet::metrics::{
    confusion_csv, object_report_csv, range_bins_csv, roc_csv, roc_svg, target_report_csv, ObjectReport, RangeBin,
    RocCurve, TargetReport,
};
use rtcnet::pipeline::{cluster_compare as compare, evaluate_objects, evaluate_targets, Clustering};
use rtcnet::RoadClass;
use serde::{Deserialize, Serialize};

use crate::config::{ClusterFile, RunConfig};
use crate::Level;

pub const REPORT_FILE: &str = "report.json";
pub const COMPARE_FILE: &str = "compare.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCurve {
    pub class: RoadClass,
    pub curve: RocCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "level", rename_all = "snake_case")]
pub enum EvalReport {
    Target {
        report: TargetReport,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        range_bins: Option<Vec<RangeBin>>,
        roc: Vec<ClassCurve>,
    },
    Object {
        report: ObjectReport,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringRun {
    pub params: ClusterParams,
    pub merge: MergeParams,
    pub report: ObjectReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub class_specific: ClusteringRun,
    pub universal: ClusteringRun,
    /// Class-specific minus universal object macro F1.
    pub difference: f64,
}

fn load(pred: &Path, gt: &Path) -> Result<(Detections, Vec<FrameRecord>)> {
    let det = read_detections(pred).with_context(|| format!("reading detections {}", pred.display()))?;
    let (_, records) = read_frame_records(gt).with_context(|| format!("reading ground truth {}", gt.display()))?;
    Ok((det, records))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    write_atomic(&dir.join(name), text.as_bytes())?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(dir, name, &text)
}

pub fn run(
    pred: &Path,
    gt: &Path,
    level: Level,
    out: &Path,
    range_bin_m: Option<f64>,
    config: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (det, records) = load(pred, gt)?;
    create_dir(out)?;
    let report = match level {
        Level::Target => {
            let e = evaluate_targets(&det, &records, range_bin_m, cfg.eval.roc_thresholds)?;
            write(out, "per_class.csv", &target_report_csv(&e.report))?;
            write(out, "confusion.csv", &confusion_csv(&e.report.confusion))?;
            if let Some(bins) = &e.range_bins {
                write(out, "range_bins.csv", &range_bins_csv(bins))?;
            }
            if !e.roc.is_empty() {
                write(out, "roc.csv", &roc_csv(&e.roc))?;
                write(out, "roc.svg", &roc_svg(&e.roc))?;
            }
            print_classes(&e.report.per_class, e.report.macro_f1);
            for (c, curve) in &e.roc {
                println!("{:<12} AUC {:.3}", c.name(), curve.auc);
            }
            EvalReport::Target {
                report: e.report,
                range_bins: e.range_bins,
                roc: e
                    .roc
                    .into_iter()
                    .map(|(class, curve)| ClassCurve { class, curve })
                    .collect(),
            }
        }
        Level::Object => {
            let r = evaluate_objects(&det, &records)?;
            write(out, "per_class.csv", &object_report_csv(&r))?;
            print_classes(&r.per_class, r.macro_f1);
            EvalReport::Object { report: r }
        }
    };
    write_json(out, REPORT_FILE, &report)?;
    println!("report written to {}", out.display());
    Ok(())
}

fn print_classes(per_class: &[rtcnet::metrics::ClassMetrics], macro_f1: f64) {
    println!(
        "{:<12}{:>10}{:>10}{:>10}{:>10}",
        "class", "precision", "recall", "F1", "support"
    );
    for m in per_class {
        println!(
            "{:<12}{:>10.3}{:>10.3}{:>10.3}{:>10}",
            m.class.name(),
            m.precision,
            m.recall,
            m.f1,
            m.support
        );
    }
    println!("{:<12}{:>30.3}", "macro", macro_f1);
}

pub fn cluster_compare(pred: &Path, gt: &Path, specific: &Path, universal: &Path, out: &Path) -> Result<()> {
    let specific = ClusterFile::load(specific)?;
    let universal = ClusterFile::load(universal)?;
    let (det, records) = load(pred, gt)?;
    let cmp = compare(&det, &records, &specific, &universal)?;
    let run = |c: &Clustering, report: ObjectReport| ClusteringRun {
        params: c.params,
        merge: c.merge,
        report,
    };
    let report = CompareReport {
        difference: cmp.difference(),
        class_specific: run(&specific, cmp.class_specific),
        universal: run(&universal, cmp.universal),
    };
    create_dir(out)?;
    write_json(out, COMPARE_FILE, &report)?;
    write(out, "compare.csv", &compare_csv(&report))?;
    print!("{}", compare_csv(&report).replace(',', "\t"));
    println!("report written to {}", out.display());
    Ok(())
}

fn compare_csv(r: &CompareReport) -> String {
    let mut s = String::from("class,class_specific_f1,universal_f1\n");
    for (a, b) in r
        .class_specific
        .report
        .per_class
        .iter()
        .zip(&r.universal.report.per_class)
    {
        s += &format!("{},{:.6},{:.6}\n", a.class, a.f1, b.f1);
    }
    s += &format!(
        "macro,{:.6},{:.6}\n",
        r.class_specific.report.macro_f1, r.universal.report.macro_f1
    );
    s
}
