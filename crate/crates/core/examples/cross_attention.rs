//! Exercises the learnable-patch encoder/decoder on random features and
//! shows that permuting the pixel rows permutes the output the same way.
//!
//! ```text
//! cargo run --release --example cross_attention
//! ```

use maf::llfe::llfe_forward;
use maf::params::bind_frozen;
use maf::{init_params, MafConfig, Mode, Rng, Tape, Tensor};

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let c = t.shape()[1];
    let data = perm.iter().flat_map(|&r| t.data()[r * c..(r + 1) * c].to_vec()).collect();
    Tensor::new(&[perm.len(), c], data).expect("same size")
}

fn main() -> maf::Result<()> {
    let config = MafConfig::paper_analog();
    let params = init_params(&config, 0)?;
    let llfe = params.llfe.as_ref().expect("llfe enabled");
    let (h, w) = config.feature_grid();
    let (hw, c) = (h * w, config.channels);

    let mut rng = Rng::new(1);
    let x = Tensor::new(&[hw, c], (0..hw * c).map(|_| rng.normal(0.0, 1.0)).collect())?;
    let mut perm: Vec<usize> = (0..hw).collect();
    rng.shuffle(&mut perm);
    let permuted = permute_rows(&x, &perm);

    let run = |input: &Tensor| -> maf::Result<Tensor> {
        let mut t = Tape::new();
        let p = bind_frozen(llfe, &mut t);
        let xv = t.constant(input.clone());
        let out = llfe_forward(&mut t, xv, p.patches, &p.units, config.p_head, &mut Rng::new(0), Mode::Eval)?;
        Ok(t.value(out).clone())
    };
    let y = run(&x)?;
    let y_perm = run(&permuted)?;
    let expected = permute_rows(&y, &perm);
    let err = y_perm
        .data()
        .iter()
        .zip(expected.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("features {hw}×{c}, {} patches, {} units, {} heads", config.num_lanets, config.units, config.heads);
    println!("max |f(Px) − P·f(x)| = {err:.2e}");
    let row = &y.data()[..8];
    println!("first output row (8 of {c}): {row:.4?}");
    Ok(())
}
