//! Acceptance suite: one PASS/FAIL line per criterion. Run with
//! `cargo test -p rtcnet-cli --test acceptance`; criteria 6, 7 and 10 train
//! real models and take several minutes on one core.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rtcnet::clustering::{ClusterParams, MergeParams};
use rtcnet::ensemble::{member_mappings, train_ensemble, vote_from_probabilities, Classifier, MemberProbabilities};
use rtcnet::io::{Detections, FrameRecord};
use rtcnet::model::{train, LabelMapping, TrainConfig};
use rtcnet::net::{Ablation, Architecture, BlockShape, Network};
use rtcnet::pipeline::{cluster_compare, detect_frame, evaluate_targets, Clustering};
use rtcnet::preprocess::{
    extract_samples, CropConfig, NormalizationFit, NormalizationStats, Sample, STATIC_SPEED_THRESHOLD_MPS,
};
use rtcnet::sim::{generate_frames, SimConfig};
use rtcnet::RoadClass;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn shape_chain() -> Outcome {
    let arch = Architecture::new(4, Ablation::None, BlockShape::DEFAULT).map_err(|e| e.to_string())?;
    let net = Network::<f32>::init(arch, 1);
    let block = vec![0.5f32; BlockShape::DEFAULT.len()];
    let trace = net.forward(&block, &[0.1, 0.2, 0.3, 0.4]).map_err(|e| e.to_string())?;
    let p1 = trace.part1_shape().map(<[usize]>::to_vec);
    let p2 = trace.part2_shape().map(<[usize]>::to_vec);
    let width = trace.head_input_width();
    check(
        p1.as_deref() == Some(&[25, 1, 1, 32][..])
            && p2.as_deref() == Some(&[32, 4][..])
            && width == 132
            && trace.logits().len() == 4,
        format!("part I {p1:?}, part II {p2:?}, head input {width}"),
    )
}

fn gradients() -> Outcome {
    let arch = Architecture::new(4, Ablation::None, BlockShape::DEFAULT).map_err(|e| e.to_string())?;
    let g = support::network_gradient_sweep(arch, 11, 5, 60);
    check(
        g.max_rel_err < 1e-4 && g.checked > 0,
        format!(
            "5 samples, {} entries checked, {} skipped at kinks, max rel err {:.2e}",
            g.checked, g.skipped, g.max_rel_err
        ),
    )
}

fn kernels() -> Outcome {
    let worst = support::kernel_oracle_sweep(7, 150);
    check(worst < 1e-6, format!("150 random cases, max rel err {worst:.2e}"))
}

fn dbscan() -> Outcome {
    let bad = support::dbscan_oracle_sweep(5, 200);
    check(
        bad == 0,
        format!("{bad} of 200 instances differ from the closure oracle"),
    )
}

fn table(ova: [f64; 4], upper: [f64; 6]) -> MemberProbabilities {
    let mut ovo = [[0.0; 4]; 4];
    let mut k = 0;
    for c in 0..4 {
        for j in c + 1..4 {
            ovo[c][j] = upper[k];
            ovo[j][c] = 1.0 - upper[k];
            k += 1;
        }
    }
    MemberProbabilities { ova, ovo }
}

fn voting() -> Outcome {
    let members = member_mappings().len();
    let worst = support::vote_sweep(1, 1000);
    let symmetric = vote_from_probabilities(&table([0.5; 4], [0.5; 6])).scores.0 == [0.25; 4];
    let dominant = vote_from_probabilities(&table([0.0, 0.0, 1.0, 0.0], [0.5, 0.0, 0.5, 0.0, 0.5, 1.0]))
        .scores
        .0
        == [0.0, 0.0, 1.0, 0.0];
    check(
        members == 10 && worst < 1e-9 && symmetric && dominant,
        format!(
            "{members} members, max |diff| {worst:.1e} over 1000 tables, symmetry {symmetric}, dominance {dominant}"
        ),
    )
}

fn metric_suite() -> Outcome {
    let cases = support::metric_unit_cases();
    let failed: Vec<_> = cases.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    check(failed.is_empty(), format!("{} cases, failed: {failed:?}", cases.len()))
}

fn formats() -> Outcome {
    let t = Instant::now();
    support::format_round_trip_sweep(21, 100)?;
    Ok(format!(
        "100 cases of dataset, checkpoint and detections in {:.1} s",
        t.elapsed().as_secs_f64()
    ))
}

/// Frames turned into detections and ground-truth records.
fn detect(classifier: &Classifier, frames: &[rtcnet::Frame]) -> Result<(Detections, Vec<FrameRecord>), String> {
    let mut det = Detections {
        clustered: false,
        frames: Vec::new(),
    };
    for f in frames {
        det.frames
            .push(detect_frame(classifier, f, STATIC_SPEED_THRESHOLD_MPS, None).map_err(|e| e.to_string())?);
    }
    Ok((det, frames.iter().map(FrameRecord::from_frame).collect()))
}

fn target_macro_f1(classifier: &Classifier, frames: &[rtcnet::Frame]) -> Result<f64, String> {
    let (det, gt) = detect(classifier, frames)?;
    Ok(evaluate_targets(&det, &gt, None, 50)
        .map_err(|e| e.to_string())?
        .report
        .macro_f1)
}

fn frames(cfg: &SimConfig, n: usize) -> Result<Vec<rtcnet::Frame>, String> {
    generate_frames(cfg, n).map(|f| f.map_err(|e| e.to_string())).collect()
}

fn training_set(n: usize) -> Result<(Vec<Sample>, NormalizationStats), String> {
    let crop = CropConfig::default();
    let mut fit = NormalizationFit::new();
    let mut samples = Vec::new();
    for f in generate_frames(&SimConfig::separable(1), n) {
        let f = f.map_err(|e| e.to_string())?;
        fit.add_frame(&f, STATIC_SPEED_THRESHOLD_MPS);
        samples.extend(extract_samples(&f, &crop, STATIC_SPEED_THRESHOLD_MPS).map_err(|e| e.to_string())?);
    }
    Ok((samples, fit.finish().map_err(|e| e.to_string())?))
}

/// Trains the full ensemble plus the two ablations; the ensemble is kept for
/// the clustering criterion.
fn learnability(model: &mut Option<Classifier>) -> Outcome {
    let t = Instant::now();
    let crop = CropConfig::default();
    let (samples, stats) = training_set(2000)?;
    let test = frames(&SimConfig::separable(2), 500)?;
    let config = TrainConfig::default();

    let ensemble = Classifier::Ensemble(
        train_ensemble(&samples, &stats, crop, &config)
            .map_err(|e| e.to_string())?
            .model,
    );
    let full = target_macro_f1(&ensemble, &test)?;
    *model = Some(ensemble);

    let multiclass = train(&samples, &stats, crop, &config, LabelMapping::MultiClass).map_err(|e| e.to_string())?;
    let multi = target_macro_f1(&Classifier::MultiClass(multiclass.model), &test)?;

    let ablated = TrainConfig {
        ablation: Ablation::NoLowLevel,
        ..config
    };
    let no_low = train_ensemble(&samples, &stats, crop, &ablated)
        .map_err(|e| e.to_string())?
        .model;
    let no_low = target_macro_f1(&Classifier::Ensemble(no_low), &test)?;

    let minutes = t.elapsed().as_secs_f64() / 60.0;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    // The time budget is stated for a four-core machine; on fewer cores it
    // is reported but not enforced.
    let in_budget = cores < 4 || minutes <= 15.0;
    check(
        full >= 0.85 && no_low < full && multi.is_finite() && in_budget,
        format!(
            "{} training targets; macro F1 ensemble {full:.3}, multi-class {multi:.3}, no-low-level {no_low:.3}; {minutes:.1} min on {cores} core(s)",
            samples.len()
        ),
    )
}

fn clustering(model: &Option<Classifier>) -> Outcome {
    let classifier = model.as_ref().ok_or("needs the ensemble from criterion 6")?;
    let t = Instant::now();
    let hard = frames(&SimConfig::hard(3), 500)?;
    let (det, gt) = detect(classifier, &hard)?;
    let specific = Clustering::default();
    let universal = Clustering {
        params: ClusterParams::universal(ClusterParams::UNIVERSAL_DEFAULT),
        merge: MergeParams::default(),
    };
    let cmp = cluster_compare(&det, &gt, &specific, &universal).map_err(|e| e.to_string())?;
    let per_class = |r: &rtcnet::metrics::ObjectReport| {
        RoadClass::ROAD_USERS
            .iter()
            .map(|&c| format!("{:.2}", r.class(c).map_or(f64::NAN, |m| m.f1)))
            .collect::<Vec<_>>()
            .join("/")
    };
    check(
        cmp.difference() >= 0.05,
        format!(
            "object macro F1 class-specific {:.3} ({}) vs universal {:.3} ({}), difference {:.3}, {:.0} s",
            cmp.class_specific.macro_f1,
            per_class(&cmp.class_specific),
            cmp.universal.macro_f1,
            per_class(&cmp.universal),
            cmp.difference(),
            t.elapsed().as_secs_f64()
        ),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rtcnet"))
        .args(args)
        .env("RTC_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "rtcnet {args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn checkpoints(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("best")] {
        for e in std::fs::read_dir(&sub).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.extension().is_some_and(|x| x == "rtck") {
                let name = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((name, std::fs::read(&p).map_err(|e| e.to_string())?));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let t = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let data = tmp.path().join("data");
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sim-separable.toml");
    run_cli(&[
        "simulate",
        "--config",
        &s(&cfg),
        "--out",
        &s(&data),
        "--frames",
        "200",
        "--seed",
        "10",
    ])?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        run_cli(&[
            "train",
            "--data",
            &s(&data),
            "--out",
            &s(&out),
            "--mode",
            "ensemble",
            "--seed",
            "7",
        ])?;
        runs.push(checkpoints(&out)?);
    }
    let n = runs[0].len();
    check(
        n == 20 && runs[0] == runs[1],
        format!(
            "two single-threaded ensemble trainings, {n} checkpoints, identical: {}, {:.0} s",
            runs[0] == runs[1],
            t.elapsed().as_secs_f64()
        ),
    )
}

fn main() {
    let mut model = None;
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {n:>2} {name}: {detail} [{secs:.1} s]");
            }
        }
    };
    report(1, "shape chain", &mut shape_chain);
    report(2, "gradient check", &mut gradients);
    report(3, "kernel oracles", &mut kernels);
    report(4, "dbscan oracle", &mut dbscan);
    report(5, "ensemble vote", &mut voting);
    report(6, "synthetic learnability", &mut || learnability(&mut model));
    report(7, "class-specific clustering", &mut || clustering(&model));
    report(8, "metric unit suite", &mut metric_suite);
    report(9, "format round trips", &mut formats);
    report(10, "training determinism", &mut determinism);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
