use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rtcnet::ensemble::{train_ensemble, Classifier};
use rtcnet::io::{write_atomic, write_classifier, write_training_logs, DatasetReader};
use rtcnet::model::{train, LabelMapping, TrainingLog};
use rtcnet::net::Ablation;
use rtcnet::preprocess::{extract_samples, NormalizationFit, Sample};
use rtcnet::RoadClass;

use crate::config::RunConfig;
use crate::Mode;

pub struct Args {
    pub data: PathBuf,
    pub out: PathBuf,
    pub mode: Mode,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub ablation: Option<Ablation>,
    pub config: Option<PathBuf>,
}

pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const BEST_DIR: &str = "best";
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

pub fn run(args: &Args) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(a) = args.ablation {
        cfg.train.ablation = a;
    }
    cfg.train.validate()?;

    let t = Instant::now();
    let mut reader =
        DatasetReader::open(&args.data).with_context(|| format!("opening dataset {}", args.data.display()))?;
    let geometry = reader.meta().geometry;
    let stored_stats = reader.meta().normalization;
    let threshold = cfg.preprocess.static_threshold_mps;
    let mut fit = NormalizationFit::new();
    let mut samples: Vec<Sample> = Vec::new();
    for frame in &mut reader {
        let frame = frame?;
        fit.add_frame(&frame, threshold);
        samples.extend(extract_samples(&frame, &cfg.crop, threshold)?);
    }
    // Statistics stored with the dataset take precedence over a fresh fit.
    let stats = match stored_stats {
        Some(s) => s,
        None => fit.finish().context("fitting normalization statistics")?,
    };
    let mut counts = [0usize; 4];
    samples.iter().for_each(|s| counts[s.label.index()] += 1);
    println!(
        "loaded {} dynamic targets in {:.1} s ({})",
        samples.len(),
        t.elapsed().as_secs_f64(),
        RoadClass::ALL
            .iter()
            .map(|c| format!("{} {}", c.name(), counts[c.index()]))
            .collect::<Vec<_>>()
            .join(", ")
    );

    let t = Instant::now();
    let (mut last, mut best, logs) = match args.mode {
        Mode::Ensemble => {
            let out = train_ensemble(&samples, &stats, cfg.crop, &cfg.train)?;
            (
                Classifier::Ensemble(out.model),
                Classifier::Ensemble(out.best),
                out.logs,
            )
        }
        Mode::Multiclass => {
            let out = train(&samples, &stats, cfg.crop, &cfg.train, LabelMapping::MultiClass)?;
            (
                Classifier::MultiClass(out.model),
                Classifier::MultiClass(out.best),
                vec![out.log],
            )
        }
    };
    println!("trained in {:.1} s", t.elapsed().as_secs_f64());
    print_logs(&logs);

    last.set_geometry(Some(geometry));
    best.set_geometry(Some(geometry));
    write_outputs(&args.out, &last, &best, &logs, &cfg)?;
    println!("model written to {}", args.out.display());
    Ok(())
}

fn print_logs(logs: &[TrainingLog]) {
    println!(
        "{:<26}{:>8}{:>8}{:>12}{:>10}",
        "member", "train", "val", "final F1", "best"
    );
    for log in logs {
        let last = log.epochs.last();
        println!(
            "{:<26}{:>8}{:>8}{:>12.3}{:>10}",
            log.mapping.tag(),
            log.n_train,
            log.n_val,
            last.map_or(f64::NAN, |e| e.val_f1),
            log.best_epoch
        );
    }
}

fn write_outputs(
    out: &Path,
    last: &Classifier,
    best: &Classifier,
    logs: &[TrainingLog],
    cfg: &RunConfig,
) -> Result<()> {
    write_classifier(last, out).with_context(|| format!("writing model to {}", out.display()))?;
    write_classifier(best, &out.join(BEST_DIR))?;
    write_training_logs(logs, &out.join(TRAIN_LOG_FILE))?;
    write_atomic(&out.join(RUN_CONFIG_FILE), toml::to_string(cfg)?.as_bytes())?;
    Ok(())
}
