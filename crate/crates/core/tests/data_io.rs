mod common;

use std::collections::HashMap;

use maf::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use maf::dataset::{read_dataset, read_manifest, write_dataset, MANIFEST};
use maf::metrics::{accuracy, f1_score};
use maf::model::infer;
use maf::synth::{generate_synthetic, mean_threshold_accuracy, FaceRegion, SynthSpec, OCCLUDER_VALUE};
use maf::tensor_file::{decode, encode, encoded_len, load_tensor, save_tensor};
use maf::{init_params, MafConfig, MafError, Rng, Tensor};
use proptest::prelude::*;

#[test]
fn synthetic_generation_is_deterministic() {
    let spec = SynthSpec::new((48, 48), 16, 7).with_occlusion(0.5);
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(a, b);
    let c = generate_synthetic(&SynthSpec { seed: 8, ..spec }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn samples_respect_the_data_contract() {
    let samples = generate_synthetic(&SynthSpec::new((48, 48), 200, 1).with_occlusion(0.5)).unwrap();
    for s in &samples {
        assert_eq!(s.image.shape(), &[1, 48, 48]);
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(s.occluded, s.occluded_region.is_some());
    }
    let positives = samples.iter().filter(|s| s.label == 1).count();
    assert_eq!(positives, 100);
}

#[test]
fn zero_occlusion_never_occludes() {
    let samples = generate_synthetic(&SynthSpec::new((48, 48), 500, 2)).unwrap();
    assert!(samples.iter().all(|s| !s.occluded && s.occluded_region.is_none()));
}

#[test]
fn occluded_region_is_flat_grey() {
    let spec = SynthSpec::new((48, 48), 50, 3).with_occlusion(1.0);
    for s in generate_synthetic(&spec).unwrap() {
        let r = spec.region(s.occluded_region.unwrap());
        for y in r.top..r.top + r.height {
            for x in r.left..r.left + r.width {
                assert_eq!(s.image.at(&[0, y, x]), OCCLUDER_VALUE);
            }
        }
    }
}

#[test]
fn full_occlusion_picks_regions_uniformly() {
    let samples = generate_synthetic(&SynthSpec::new((12, 12), 10_000, 4).with_occlusion(1.0)).unwrap();
    assert!(samples.iter().all(|s| s.occluded));
    let mut counts: HashMap<FaceRegion, usize> = HashMap::new();
    for s in &samples {
        *counts.entry(s.occluded_region.unwrap()).or_default() += 1;
    }
    let eyes = counts[&FaceRegion::Eyes] as f64 / 10_000.0;
    assert!((eyes - 0.5).abs() < 0.03, "eye fraction {eyes}");
}

#[test]
fn mean_intensity_alone_does_not_separate_classes() {
    for (p, seed) in [(0.0, 5), (0.5, 6)] {
        let samples = generate_synthetic(&SynthSpec::new((48, 48), 1_000, seed).with_occlusion(p)).unwrap();
        let best = mean_threshold_accuracy(&samples);
        assert!(best < 0.7, "mean threshold reaches {best} at occlusion {p}");
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        SynthSpec::new((48, 48), 10, 0).with_occlusion(1.5),
        SynthSpec::new((48, 48), 10, 0).with_noise(-1.0),
        SynthSpec::new((4, 4), 10, 0),
    ];
    for spec in bad {
        assert!(matches!(generate_synthetic(&spec), Err(MafError::Spec(_))), "{spec:?}");
    }
}

#[test]
fn maft_round_trip_is_bit_exact() {
    let mut rng = Rng::new(9);
    let t = common::randn(&[3, 4, 5], &mut rng, 1.0);
    let bytes = encode(&t).unwrap();
    assert_eq!(bytes.len(), 7 + 12 + 8 * 60);
    let (back, used) = decode(&bytes).unwrap();
    assert!(back.bit_eq(&t));
    assert_eq!(used, bytes.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.maft");
    save_tensor(&path, &t).unwrap();
    assert!(load_tensor(&path).unwrap().bit_eq(&t));
}

#[test]
fn maft_layout_is_little_endian() {
    let t = Tensor::new(&[2, 2], vec![1.0, -2.0, 0.5, 3.25]).unwrap();
    let bytes = encode(&t).unwrap();
    assert_eq!(bytes.len(), 47);
    assert_eq!(encoded_len(&[2, 2]), 47);
    let mut expected = b"MAFT".to_vec();
    expected.extend([1, 1, 2]);
    expected.extend(2u32.to_le_bytes());
    expected.extend(2u32.to_le_bytes());
    for v in [1.0f64, -2.0, 0.5, 3.25] {
        expected.extend(v.to_le_bytes());
    }
    assert_eq!(bytes, expected);
}

#[test]
fn maft_rejects_bad_magic() {
    let mut bytes = encode(&Tensor::ones(&[2, 2])).unwrap();
    bytes[0] = b'X';
    let err = decode(&bytes).unwrap_err();
    assert!(matches!(err, MafError::Format(ref m) if m.contains("magic")), "{err}");
}

#[test]
fn maft_truncation_reports_byte_counts() {
    let bytes = encode(&Tensor::ones(&[2, 2])).unwrap();
    let err = decode(&bytes[..40]).unwrap_err();
    match err {
        MafError::Format(m) => assert!(m.contains("40") && m.contains("47"), "{m}"),
        other => panic!("unexpected {other}"),
    }
    assert!(matches!(decode(&bytes[..3]), Err(MafError::Format(_))));
}

proptest! {
    #[test]
    fn maft_round_trips_any_values(
        shape in prop::collection::vec(1usize..5, 1..4),
        seed in any::<u64>(),
    ) {
        let n: usize = shape.iter().product();
        let mut rng = Rng::new(seed);
        let data: Vec<f64> = (0..n).map(|_| f64::from_bits(rng.next_u64())).collect();
        let t = Tensor::new(&shape, data).unwrap();
        let bytes = encode(&t).unwrap();
        prop_assert_eq!(bytes.len(), encoded_len(&shape));
        let (back, _) = decode(&bytes).unwrap();
        prop_assert!(back.bit_eq(&t));
    }
}

#[test]
fn metric_examples() {
    assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
    // TP=1, FP=1, FN=0 → P=0.5, R=1, F1=2/3
    assert!((f1_score(&[0, 1, 1, 0], &[0, 1, 0, 0], 1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(f1_score(&[0, 0, 0], &[1, 1, 0], 1).unwrap(), 0.0);
    assert!(matches!(accuracy(&[0], &[0, 1]), Err(MafError::Contract(_))));
    assert!(matches!(accuracy(&[], &[]), Err(MafError::Contract(_))));
}

#[test]
fn f1_is_asymmetric_in_the_positive_class() {
    let preds = [1, 1, 1, 0];
    let labels = [1, 1, 0, 0];
    let f1_pos = f1_score(&preds, &labels, 1).unwrap();
    let f1_neg = f1_score(&preds, &labels, 0).unwrap();
    assert!((f1_pos - 0.8).abs() < 1e-15);
    assert!((f1_neg - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn metrics_match_brute_force_on_random_cases() {
    let mut rng = Rng::new(12);
    for _ in 0..1_000 {
        let n = 1 + rng.below(30);
        let preds: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
        assert_eq!(accuracy(&preds, &labels).unwrap(), correct as f64 / n as f64);

        let tp = preds.iter().zip(&labels).filter(|&(&p, &l)| p == 1 && l == 1).count() as f64;
        let predicted = preds.iter().filter(|&&p| p == 1).count() as f64;
        let actual = labels.iter().filter(|&&l| l == 1).count() as f64;
        let expected = if tp == 0.0 {
            0.0
        } else {
            let (p, r) = (tp / predicted, tp / actual);
            2.0 * p * r / (p + r)
        };
        assert!((f1_score(&preds, &labels, 1).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_preserves_logits() {
    let config = MafConfig::toy();
    let params = init_params(&config, 13).unwrap();
    let bytes = encode_checkpoint(&config, &params).unwrap();
    let (c2, p2) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(c2, config);
    assert_eq!(p2, params);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &config, &params).unwrap();
    let (c3, p3) = load_checkpoint(&path).unwrap();
    let image = generate_synthetic(&SynthSpec::new((12, 12), 1, 13)).unwrap().remove(0).image;
    let (a, _) = infer(&params, &config, &image).unwrap();
    let (b, _) = infer(&p3, &c3, &image).unwrap();
    assert!(a.bit_eq(&b));
}

#[test]
fn checkpoint_rejects_corruption() {
    let config = MafConfig::toy();
    let params = init_params(&config, 14).unwrap();
    let bytes = encode_checkpoint(&config, &params).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(MafError::Format(_))));
    assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(MafError::Format(_))));
    let mut extra = bytes;
    extra.push(0);
    assert!(matches!(decode_checkpoint(&extra), Err(MafError::Format(_))));
}

#[test]
fn dataset_directory_round_trip() {
    let samples = generate_synthetic(&SynthSpec::new((12, 12), 6, 15).with_occlusion(0.5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let entries = write_dataset(dir.path(), &samples).unwrap();
    assert_eq!(entries.len(), 6);
    assert_eq!(read_manifest(&dir.path().join(MANIFEST)).unwrap(), entries);
    let loaded = read_dataset(dir.path()).unwrap();
    for (a, b) in loaded.samples.iter().zip(&samples) {
        assert!(a.image.bit_eq(&b.image));
        assert_eq!((a.label, a.occluded), (b.label, b.occluded));
    }
}

#[test]
fn malformed_manifest_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join(MANIFEST);
    for body in ["wrong,header\n", "path,label,occluded\nimages/a.maft,2,false\n", "path,label,occluded\nx\n"] {
        std::fs::write(&path, body).unwrap();
        assert!(matches!(read_manifest(&path), Err(MafError::Format(_))), "{body:?}");
    }
}
