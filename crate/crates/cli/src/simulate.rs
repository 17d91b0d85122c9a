use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use rtcnet::sim::{generate_dataset, SimConfig};
use rtcnet::RoadClass;

pub fn run(config: &Path, out: &Path, frames: usize, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg = SimConfig::from_toml(&text).with_context(|| format!("simulator config {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let t = Instant::now();
    let summary =
        generate_dataset(&cfg, frames, out).with_context(|| format!("writing dataset to {}", out.display()))?;
    println!(
        "wrote {} frames to {} in {:.1} s (seed {})",
        summary.n_frames,
        out.display(),
        t.elapsed().as_secs_f64(),
        cfg.seed
    );
    println!("{:<12}{:>10}{:>10}", "class", "objects", "targets");
    for c in RoadClass::ALL {
        println!(
            "{:<12}{:>10}{:>10}",
            c.name(),
            summary.objects[c.index()],
            summary.targets[c.index()]
        );
    }
    Ok(())
}
