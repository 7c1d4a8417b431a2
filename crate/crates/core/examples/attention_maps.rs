//! Runs the multi-local attention block on one synthetic face and prints
//! each LANet map, the fused map, and what whole-map dropout does in
//! training mode.
//!
//! ```text
//! cargo run --release --example attention_maps -- [seed]
//! ```

use maf::mlfe::{attention_drop, AttentionStack};
use maf::model::infer;
use maf::synth::{generate_synthetic, SynthSpec};
use maf::{init_params, MafConfig, Mode, Rng};

fn print_map(title: &str, map: &[f64], w: usize) {
    println!("{title}");
    for row in map.chunks(w) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.2}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> maf::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let config = MafConfig::paper_analog();
    let params = init_params(&config, seed)?;
    let sample = generate_synthetic(&SynthSpec::new(config.image_size, 1, seed))?.remove(0);

    let (logits, diag) = infer(&params, &config, &sample.image)?;
    let (h, w) = config.feature_grid();
    let stack = diag.stack.expect("attention block enabled");
    for n in 0..stack.len() {
        print_map(&format!("LANet {n}"), stack.map(n), w);
    }
    print_map("fused (channel max)", diag.fused.expect("fused map").data(), w);
    println!("logits {:?}", logits.data());

    let mut rng = Rng::new(seed);
    let trials = 10_000;
    let mut dropped = vec![0usize; stack.len()];
    for _ in 0..trials {
        let s = AttentionStack {
            maps: stack.maps.clone(),
            dropped: None,
        };
        if let Some(i) = attention_drop(s, config.p_map, &mut rng, Mode::Train)?.dropped {
            dropped[i] += 1;
        }
    }
    let total: usize = dropped.iter().sum();
    println!(
        "p_map={} over {trials} draws: dropped {:.3} of the time, per map {:?} ({}×{} grid)",
        config.p_map,
        total as f64 / trials as f64,
        dropped,
        h,
        w
    );
    Ok(())
}
