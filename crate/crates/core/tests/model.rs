mod common;

use common::{assert_close, naive_matmul, randn, uniform};
use maf::gradcheck::check_gradients_multi;
use maf::model::{argmax, backbone_forward, classify, embed, infer, LinearParams};
use maf::params::{bind, bind_frozen, flatten, scalar_count, ParamTree};
use maf::{init_params, maf_forward, MafConfig, MafError, Mode, Rng, Tape, Tensor, Var};
use proptest::prelude::*;

#[test]
fn backbone_shapes_and_zero_image() {
    let config = MafConfig::paper_analog();
    let params = init_params(&config, 0).unwrap();
    let mut t = Tape::new();
    let pv = bind_frozen(&params, &mut t);
    let img = t.constant(Tensor::zeros(&[1, 48, 48]));
    let y = backbone_forward(&mut t, img, &pv.backbone).unwrap();
    assert_eq!(t.shape(y), &[32, 6, 6]);
    assert!(t.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn wrong_image_size_is_dimension_error() {
    let config = MafConfig::toy();
    let params = init_params(&config, 0).unwrap();
    let r = infer(&params, &config, &Tensor::zeros(&[1, 10, 12]));
    assert!(matches!(r, Err(MafError::Dimension { .. })));
}

#[test]
fn backbone_gradient_check_on_toy_image() {
    let config = MafConfig::toy();
    for seed in 0..3 {
        let params = init_params(&config, seed).unwrap();
        let mut rng = Rng::new(seed);
        let mut inputs = flatten(&params.backbone);
        inputs.push(uniform(&[1, 12, 12], &mut rng, 0.0, 1.0));
        let n = params.backbone.leaf_count();
        let f = |t: &mut Tape, v: &[Var]| {
            let convs = params.backbone.rebuild(v[..n].to_vec());
            let y = backbone_forward(t, v[n], &convs)?;
            let w = Tensor::new(t.shape(y), (0..t.value(y).numel()).map(|i| 1.0 + 0.1 * i as f64).collect())?;
            let y = t.mul_const(y, w)?;
            Ok(t.sum(y))
        };
        let e = check_gradients_multi(&f, &inputs, 1e-6).unwrap();
        assert!(e < 1e-4, "seed {seed}: {e:e}");
    }
}

fn embed_values(x: &Tensor, w: Tensor, b: Tensor) -> Tensor {
    let mut t = Tape::new();
    let p = bind_frozen(&LinearParams { w, b }, &mut t);
    let xv = t.constant(x.clone());
    let y = embed(&mut t, xv, &p).unwrap();
    t.value(y).clone()
}

#[test]
fn embed_identity_is_pixel_major_reshape() {
    let x = randn(&[3, 2, 4], &mut Rng::new(1), 1.0);
    let rows = embed_values(&x, Tensor::eye(3), Tensor::zeros(&[3]));
    assert_eq!(rows.shape(), &[8, 3]);
    for c in 0..3 {
        for h in 0..2 {
            for w in 0..4 {
                assert_eq!(rows.at(&[h * 4 + w, c]), x.at(&[c, h, w]));
            }
        }
    }
}

#[test]
fn embed_single_pixel_and_random_oracle() {
    let x = Tensor::new(&[2, 1, 1], vec![0.5, -2.0]).unwrap();
    let w = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let b = Tensor::new(&[2], vec![0.1, 0.2]).unwrap();
    let y = embed_values(&x, w, b);
    // row · w + b with row = [0.5, −2]
    assert_eq!(y.data(), &[0.5 - 6.0 + 0.1, 1.0 - 8.0 + 0.2]);

    let mut rng = Rng::new(2);
    let x = randn(&[4, 3, 3], &mut rng, 1.0);
    let w = randn(&[4, 4], &mut rng, 1.0);
    let b = randn(&[4], &mut rng, 1.0);
    let got = embed_values(&x, w.clone(), b.clone());
    let mut rows = Tensor::zeros(&[9, 4]);
    for p in 0..9 {
        for c in 0..4 {
            rows.set(&[p, c], x.data()[c * 9 + p]);
        }
    }
    let mut expected = naive_matmul(&rows, &w);
    for p in 0..9 {
        for c in 0..4 {
            expected.set(&[p, c], expected.at(&[p, c]) + b.data()[c]);
        }
    }
    assert_close(&got, &expected, 1e-12);
}

fn classify_values(x: &Tensor, w: Tensor, b: Tensor) -> Tensor {
    let mut t = Tape::new();
    let p = bind_frozen(&LinearParams { w, b }, &mut t);
    let xv = t.constant(x.clone());
    let y = classify(&mut t, xv, &p).unwrap();
    t.value(y).clone()
}

#[test]
fn classify_examples() {
    let mut rng = Rng::new(3);
    let x = randn(&[9, 4], &mut rng, 1.0);
    let b = Tensor::new(&[2], vec![0.3, -0.7]).unwrap();
    assert!(classify_values(&x, Tensor::zeros(&[4, 2]), b.clone()).bit_eq(&b));

    let row = [0.25, -1.0, 2.0, 0.5];
    let constant = Tensor::new(&[5, 4], row.repeat(5)).unwrap();
    let w = randn(&[4, 2], &mut rng, 1.0);
    let expected = naive_matmul(&Tensor::from_rows(&[&row]), &w);
    let got = classify_values(&constant, w.clone(), Tensor::zeros(&[2]));
    assert_close(&got, &expected.reshape(&[2]).unwrap(), 1e-12);

    let mut mean = vec![0.0; 4];
    for r in 0..9 {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += x.at(&[r, c]) / 9.0;
        }
    }
    let expected = naive_matmul(&Tensor::from_rows(&[&mean]), &w).reshape(&[2]).unwrap();
    let expected = expected.zip_map(&b, |a, c| a + c).unwrap();
    assert_close(&classify_values(&x, w, b), &expected, 1e-12);
}

fn forward_logits(params: &maf::MafParams, config: &MafConfig, image: &Tensor, seed: u64, mode: Mode) -> Tensor {
    let mut t = Tape::new();
    let pv = bind(params, &mut t);
    let img = t.constant(image.clone());
    let out = maf_forward(&mut t, img, &pv, config, &mut Rng::new(seed), mode).unwrap();
    t.value(out.logits).clone()
}

#[test]
fn eval_is_deterministic_and_zero_probability_train_matches_eval() {
    let config = MafConfig {
        p_map: 0.0,
        p_head: 0.0,
        ..MafConfig::toy()
    };
    let params = init_params(&config, 4).unwrap();
    let img = uniform(&[1, 12, 12], &mut Rng::new(5), 0.0, 1.0);
    let eval = forward_logits(&params, &config, &img, 0, Mode::Eval);
    assert!(eval.bit_eq(&forward_logits(&params, &config, &img, 1, Mode::Eval)));
    for seed in 0..5 {
        assert!(eval.bit_eq(&forward_logits(&params, &config, &img, seed, Mode::Train)));
    }
}

#[test]
fn forward_diagnostics_carry_the_attention_maps() {
    let config = MafConfig::toy();
    let params = init_params(&config, 6).unwrap();
    let img = uniform(&[1, 12, 12], &mut Rng::new(6), 0.0, 1.0);
    let (_, diag) = infer(&params, &config, &img).unwrap();
    let stack = diag.stack.unwrap();
    assert_eq!(stack.maps.shape(), &[2, 2, 2]);
    assert_eq!(diag.fused.unwrap().shape(), &[1, 2, 2]);
    assert_eq!(diag.dropped_map, None);
}

#[test]
fn end_to_end_gradient_check_for_every_variant() {
    for (use_mlfe, use_llfe) in [(true, true), (false, true), (true, false), (false, false)] {
        let config = MafConfig {
            use_mlfe,
            use_llfe,
            ..MafConfig::toy()
        };
        let params = init_params(&config, 7).unwrap();
        let img = uniform(&[1, 12, 12], &mut Rng::new(7), 0.0, 1.0);
        let f = |t: &mut Tape, v: &[Var]| {
            let p = params.rebuild(v.to_vec());
            let x = t.constant(img.clone());
            let out = maf_forward(t, x, &p, &config, &mut Rng::new(0), Mode::Eval)?;
            t.cross_entropy(out.logits, 1)
        };
        let e = check_gradients_multi(&f, &flatten(&params), 1e-6).unwrap();
        assert!(e < 1e-4, "mlfe={use_mlfe} llfe={use_llfe}: {e:e}");
    }
}

#[test]
fn init_is_deterministic_with_documented_statistics() {
    let config = MafConfig::paper_analog();
    let a = init_params(&config, 11).unwrap();
    assert_eq!(a, init_params(&config, 11).unwrap());
    assert_ne!(a, init_params(&config, 12).unwrap());
    let llfe = a.llfe.as_ref().unwrap();
    for u in &llfe.units {
        for coder in [&u.encoder, &u.decoder] {
            for g in [&coder.norm1_gamma, &coder.norm2_gamma] {
                assert!(g.data().iter().all(|&v| v == 1.0));
            }
            for b in [&coder.norm1_beta, &coder.norm2_beta, &coder.ffn_b1, &coder.ffn_b2] {
                assert!(b.data().iter().all(|&v| v == 0.0));
            }
            // He-normal, fan-in C = 32 for W1 (32×128) and 4C = 128 for W2.
            for (w, fan_in) in [(&coder.ffn_w1, 32.0), (&coder.ffn_w2, 128.0)] {
                assert!(w.numel() >= 1024);
                let var = w.data().iter().map(|v| v * v).sum::<f64>() / w.numel() as f64;
                let target = 2.0 / fan_in;
                assert!((var / target - 1.0).abs() < 0.2, "variance {var} vs {target}");
            }
        }
    }
    let patches = &llfe.patches;
    assert_eq!(patches.shape(), &[2, 32]);
    assert!(patches.data().iter().all(|v| v.abs() < 0.02 * 6.0));
}

#[test]
fn parameter_count_matches_closed_form() {
    for config in [
        MafConfig::paper_analog(),
        MafConfig::toy(),
        MafConfig {
            num_lanets: 4,
            units: 3,
            heads: 4,
            ..MafConfig::paper_analog()
        },
        MafConfig {
            use_mlfe: false,
            use_llfe: false,
            ..MafConfig::toy()
        },
    ] {
        assert_eq!(scalar_count(&init_params(&config, 0).unwrap()), config.parameter_count());
    }
    // Backbone 72+8 + 1152+16 + 4608+32, MLFE 2·(256+8+8+1),
    // LLFE 1056 + 64 + 2·2·(12·1024 + 288), head 66.
    assert_eq!(MafConfig::paper_analog().parameter_count(), 5888 + 546 + 1120 + 50_304 + 66);
}

#[test]
fn invalid_config_names_the_invariant() {
    let cases = [
        (MafConfig { heads: 3, ..MafConfig::toy() }, "heads (3) must divide channels (8)"),
        (MafConfig { reduction: 3, ..MafConfig::toy() }, "divisible by reduction"),
        (MafConfig { num_lanets: 0, ..MafConfig::toy() }, "num_lanets"),
        (MafConfig { units: 0, ..MafConfig::toy() }, "units"),
        (MafConfig { p_map: 1.5, ..MafConfig::toy() }, "p_map"),
    ];
    for (config, needle) in cases {
        let err = init_params(&config, 0).unwrap_err();
        assert!(matches!(err, MafError::Config(_)));
        assert!(err.to_string().contains(needle), "{err}");
    }
}

proptest! {
    #[test]
    fn argmax_ignores_a_common_shift(a in -50.0f64..50.0, b in -50.0f64..50.0, shift in -1e3f64..1e3) {
        prop_assume!((a - b).abs() > 1e-9);
        prop_assert_eq!(argmax(&[a, b]), argmax(&[a + shift, b + shift]));
    }
}

#[test]
fn argmax_ties_go_to_class_zero() {
    assert_eq!(argmax(&[0.3, 0.3]), 0);
    assert_eq!(argmax(&[0.1, 0.3]), 1);
}
