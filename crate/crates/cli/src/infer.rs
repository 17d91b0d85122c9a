use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use rtcnet::io::{read_classifier, write_detections, DatasetReader, Detections};
use rtcnet::pipeline::detect_frame;

use crate::config::RunConfig;

pub fn run(data: &Path, model: &Path, out: &Path, no_cluster: bool, config: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let classifier = read_classifier(model).with_context(|| format!("loading model {}", model.display()))?;
    let reader = DatasetReader::open(data).with_context(|| format!("opening dataset {}", data.display()))?;
    if let Some(g) = classifier.geometry() {
        if !g.same_as(&reader.meta().geometry) {
            return Err(rtcnet::Error::GeometryMismatch)
                .with_context(|| format!("model {} vs dataset {}", model.display(), data.display()));
        }
    }
    let clustering = (!no_cluster).then(|| cfg.clustering());
    let mut det = Detections {
        clustered: clustering.is_some(),
        frames: Vec::new(),
    };
    let mut busy = Duration::ZERO;
    let mut n_targets = 0;
    let mut n_proposals = 0;
    for frame in reader {
        let frame = frame?;
        let t = Instant::now();
        let f = detect_frame(
            &classifier,
            &frame,
            cfg.preprocess.static_threshold_mps,
            clustering.as_ref(),
        )
        .with_context(|| format!("frame {}", frame.frame_id))?;
        busy += t.elapsed();
        n_targets += f.targets.len();
        n_proposals += f.proposals.len();
        det.frames.push(f);
    }
    write_detections(&det, out).with_context(|| format!("writing {}", out.display()))?;
    let n = det.frames.len();
    println!(
        "{n} frames, {n_targets} dynamic targets classified{}",
        if det.clustered {
            format!(", {n_proposals} object proposals")
        } else {
            String::new()
        }
    );
    if n > 0 {
        println!(
            "mean latency {:.2} ms per frame ({} worker threads)",
            busy.as_secs_f64() * 1e3 / n as f64,
            rayon::current_num_threads()
        );
    }
    println!("detections written to {}", out.display());
    Ok(())
}
