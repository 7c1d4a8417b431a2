//! Briefly trains the full model, then writes attention overlays for a
//! clean face and an occluded one as PPM images.
//!
//! ```text
//! cargo run --release --example visualize_attention -- [out_dir] [epochs]
//! ```

use std::path::PathBuf;

use maf::synth::{generate_synthetic, SynthSpec};
use maf::train::{train, TrainConfig};
use maf::visualize::attention_overlay;
use maf::{init_params, MafConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "attention".into()));
    let epochs: usize = args.next().map_or(10, |s| s.parse().expect("epochs"));

    let config = MafConfig::paper_analog();
    let data = generate_synthetic(&SynthSpec::new(config.image_size, 256, 1).with_occlusion(0.5))?;
    let tc = TrainConfig {
        epochs,
        ..TrainConfig::desk()
    };
    let (params, history) = train(&config, init_params(&config, 0)?, &data, &data[..64], &tc)?;
    if let Some(last) = history.last() {
        println!("trained {epochs} epochs, loss {:.4}", last.train_loss);
    }

    std::fs::create_dir_all(&out)?;
    let faces = generate_synthetic(&SynthSpec::new(config.image_size, 40, 9).with_occlusion(0.5))?;
    let clean = faces.iter().find(|s| !s.occluded).expect("a clean face");
    let occluded = faces.iter().find(|s| s.occluded).expect("an occluded face");
    for (name, sample) in [("clean", clean), ("occluded", occluded)] {
        let path = out.join(format!("{name}.ppm"));
        let rgb = attention_overlay(&params, &config, &sample.image)?;
        std::fs::write(&path, rgb.to_ppm())?;
        println!(
            "{name}: label {} region {:?} → {}",
            sample.label,
            sample.occluded_region,
            path.display()
        );
    }
    Ok(())
}
