//! Compares tape gradients of the toy model's loss against central
//! differences for every parameter, across several seeds and all four
//! module combinations.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use maf::gradcheck::check_gradients_multi;
use maf::params::{flatten, scalar_count, ParamTree};
use maf::synth::{generate_synthetic, SynthSpec};
use maf::{init_params, maf_forward, MafConfig, Mode, Rng, Tape, Var};

fn main() -> maf::Result<()> {
    for (use_mlfe, use_llfe) in [(true, true), (true, false), (false, true), (false, false)] {
        let config = MafConfig {
            use_mlfe,
            use_llfe,
            ..MafConfig::toy()
        };
        let mut worst: f64 = 0.0;
        for seed in 0..3 {
            let params = init_params(&config, seed)?;
            let sample = generate_synthetic(&SynthSpec::new(config.image_size, 1, seed))?.remove(0);
            let loss = |t: &mut Tape, v: &[Var]| {
                let p = params.rebuild(v.to_vec());
                let x = t.constant(sample.image.clone());
                // a fixed rng stream replays the same drop on every evaluation
                let out = maf_forward(t, x, &p, &config, &mut Rng::new(seed), Mode::Train)?;
                t.cross_entropy(out.logits, sample.label)
            };
            worst = worst.max(check_gradients_multi(&loss, &flatten(&params), 1e-6)?);
        }
        println!(
            "mlfe={use_mlfe:<5} llfe={use_llfe:<5} params={:>5}  max rel error {worst:.2e}",
            scalar_count(&init_params(&config, 0)?)
        );
    }
    Ok(())
}
