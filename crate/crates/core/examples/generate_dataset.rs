//! Writes a synthetic train/test dataset to disk in the layout the `maf`
//! binary reads, then loads it back and summarises it.
//!
//! ```text
//! cargo run --release --example generate_dataset -- <out_dir> [count] [occlusion]
//! ```

use std::path::PathBuf;

use maf::dataset::{read_dataset, write_dataset};
use maf::synth::{generate_synthetic, mean_threshold_accuracy, SynthSpec};
use maf::MafConfig;

fn main() -> maf::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().expect("usage: generate_dataset <out_dir> [count] [occlusion]"));
    let count: usize = args.next().map_or(96, |s| s.parse().expect("count"));
    let occlusion: f64 = args.next().map_or(0.5, |s| s.parse().expect("occlusion"));

    let size = MafConfig::paper_analog().image_size;
    for (split, seed, n) in [("train", 1, count), ("test", 2, count / 2)] {
        let samples = generate_synthetic(&SynthSpec::new(size, n, seed).with_occlusion(occlusion))?;
        write_dataset(&out.join(split), &samples)?;
        let loaded = read_dataset(&out.join(split))?;
        let occluded = loaded.samples.iter().filter(|s| s.occluded).count();
        let drowsy = loaded.samples.iter().filter(|s| s.label == 1).count();
        println!(
            "{split}: {} samples, {drowsy} drowsy, {occluded} occluded, best mean-threshold acc {:.3}",
            loaded.samples.len(),
            mean_threshold_accuracy(&loaded.samples)
        );
    }
    Ok(())
}
