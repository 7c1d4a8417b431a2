//! Saves a tensor and a model checkpoint, reloads both, and confirms the
//! reloaded model reproduces the logits bit for bit.
//!
//! ```text
//! cargo run --release --example checkpoint_io -- [dir]
//! ```

use std::path::PathBuf;

use maf::checkpoint::{load_checkpoint, save_checkpoint};
use maf::model::infer;
use maf::params::scalar_count;
use maf::synth::{generate_synthetic, SynthSpec};
use maf::tensor_file::{load_tensor, save_tensor};
use maf::{init_params, MafConfig};

fn main() -> maf::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().display().to_string()));
    let config = MafConfig::paper_analog();
    let params = init_params(&config, 3)?;
    let image = generate_synthetic(&SynthSpec::new(config.image_size, 1, 3))?.remove(0).image;

    let image_path = dir.join("face.maft");
    save_tensor(&image_path, &image)?;
    let reloaded = load_tensor(&image_path)?;
    println!("{}: shape {:?}, identical {}", image_path.display(), reloaded.shape(), reloaded.bit_eq(&image));

    let ckpt = dir.join("model.ckpt");
    save_checkpoint(&ckpt, &config, &params)?;
    let (config2, params2) = load_checkpoint(&ckpt)?;
    let (a, _) = infer(&params, &config, &image)?;
    let (b, _) = infer(&params2, &config2, &reloaded)?;
    println!(
        "{}: {} parameters, logits {:?}, identical {}",
        ckpt.display(),
        scalar_count(&params2),
        b.data(),
        a.bit_eq(&b)
    );
    Ok(())
}
