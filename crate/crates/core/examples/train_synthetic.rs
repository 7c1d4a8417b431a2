//! Trains the full model on the synthetic benchmark and reports test
//! accuracy on clean and half-occluded data.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [epochs] [train_count] [seed]
//! ```

use std::time::Instant;

use maf::synth::{generate_synthetic, SynthSpec};
use maf::train::{evaluate, train_with_progress, TrainConfig};
use maf::{init_params, MafConfig};

fn main() -> maf::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(Ok(50), |s| s.parse()).expect("epochs");
    let count: usize = args.next().map_or(Ok(1024), |s| s.parse()).expect("train count");
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse()).expect("seed");

    let config = MafConfig::paper_analog();
    let train_set = generate_synthetic(&SynthSpec::new(config.image_size, count, 1).with_occlusion(0.5))?;
    let test_clean = generate_synthetic(&SynthSpec::new(config.image_size, count / 2, 2))?;
    let test_occ = generate_synthetic(&SynthSpec::new(config.image_size, count / 2, 3).with_occlusion(0.5))?;

    let tc = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::desk()
    };
    let start = Instant::now();
    let params = init_params(&config, tc.seed)?;
    let (params, _) = train_with_progress(&config, params, &train_set, &test_occ, &tc, |r| {
        println!(
            "epoch {:>3}  lr {:.5}  loss {:.4}  train {:.3}  test {:.3}",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc
        );
    })?;
    let clean = evaluate(&params, &test_clean, &config)?;
    let occ = evaluate(&params, &test_occ, &config)?;
    println!("clean acc={:.4} f1={:.4}", clean.acc, clean.f1);
    println!("occluded acc={:.4} f1={:.4}", occ.acc, occ.f1);
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
