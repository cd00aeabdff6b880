mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use zonalseg::architectures::{
    build_model, load_checkpoint, save_checkpoint, se_block_forward, ForwardOptions, ModelSpec, SeWeights, Variant,
};
use zonalseg::array::{conv2d, dense, global_avg_pool, max_pool_2x2, upsample_block};
use zonalseg::{DenseArray, Error, Padding, Tape};

fn tiny(variant: Variant) -> ModelSpec {
    ModelSpec {
        variant,
        depth: 2,
        base_width: 4,
        se_reduction: 4,
        in_channels: 1,
    }
}

#[test]
fn conv_matches_direct_loops() {
    for seed in 0..20 {
        let mut rng = rng(seed);
        let (n, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..5));
        let (h, w) = (rng.random_range(3..9), rng.random_range(3..9));
        let x = uniform(&[n, cin, h, w], -1.0, 1.0, &mut rng);
        let k = uniform(&[cout, cin, 3, 3], -1.0, 1.0, &mut rng);
        let b = uniform(&[cout], -1.0, 1.0, &mut rng);
        for pad in [Padding::Same, Padding::Valid] {
            let got = conv2d(&x, &k, &b, pad).unwrap();
            let want = naive_conv(&x, &k, &b, pad);
            assert_eq!(got.shape(), want.shape());
            assert!(got.max_abs_diff(&want) < 1e-12, "{pad:?}: {}", got.max_abs_diff(&want));
        }
    }
}

#[test]
fn upsample_matches_direct_loops() {
    for seed in 0..20 {
        let mut rng = rng(100 + seed);
        let (n, cin, cout) = (rng.random_range(1..3), rng.random_range(1..5), rng.random_range(1..4));
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let x = uniform(&[n, cin, h, w], -1.0, 1.0, &mut rng);
        let k = uniform(&[cin, cout, 2, 2], -1.0, 1.0, &mut rng);
        let b = uniform(&[cout], -1.0, 1.0, &mut rng);
        let got = upsample_block(&x, &k, &b).unwrap();
        assert!(got.max_abs_diff(&naive_upsample(&x, &k, &b)) < 1e-12);
    }
}

#[test]
fn pool_gap_and_dense_match_loops() {
    let mut rng = rng(9);
    let x = uniform(&[2, 3, 6, 4], -1.0, 1.0, &mut rng);
    assert_eq!(max_pool_2x2(&x).unwrap().0, naive_pool(&x));
    let gap = global_avg_pool(&x).unwrap();
    for b in 0..2 {
        for c in 0..3 {
            let s: f64 = (0..24).map(|i| x.data()[(b * 3 + c) * 24 + i]).sum();
            assert!((gap.data()[b * 3 + c] - s / 24.0).abs() < 1e-15);
        }
    }
    let a = uniform(&[3, 5], -1.0, 1.0, &mut rng);
    let m = uniform(&[5, 2], -1.0, 1.0, &mut rng);
    let out = dense(&a, &m).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let want: f64 = (0..5).map(|k| a.data()[i * 5 + k] * m.data()[k * 2 + j]).sum();
            assert!((out.data()[i * 2 + j] - want).abs() < 1e-14);
        }
    }
    assert!(max_pool_2x2(&DenseArray::zeros(&[1, 1, 3, 4])).is_err());
}

#[test]
fn se_matches_loop_oracle_and_zero_weights_halve() {
    for seed in 0..100u64 {
        let mut rng = rng(seed);
        let f = 8 * rng.random_range(1..4);
        let hid = f / 8;
        let u = uniform(&[2, f, 3, 5], -2.0, 2.0, &mut rng);
        let w1: Vec<Vec<f64>> = (0..hid).map(|_| (0..f).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let w2: Vec<Vec<f64>> = (0..f).map(|_| (0..hid).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let weights = SeWeights {
            squeeze: DenseArray::from_vec(&[f, hid], (0..f * hid).map(|i| w1[i % hid][i / hid]).collect()).unwrap(),
            excite: DenseArray::from_vec(&[hid, f], (0..hid * f).map(|i| w2[i % f][i / f]).collect()).unwrap(),
        };
        assert!(se_block_forward(&u, &weights).unwrap().max_abs_diff(&se_loop(&u, &w1, &w2)) < 1e-12);
    }
    let u = uniform(&[1, 8, 4, 4], -1.0, 1.0, &mut rng(3));
    let zero = SeWeights {
        squeeze: DenseArray::zeros(&[8, 1]),
        excite: DenseArray::zeros(&[1, 8]),
    };
    assert_eq!(se_block_forward(&u, &zero).unwrap(), u.scaled(0.5));
}

#[test]
fn se_counts_and_parameter_deltas() {
    let count = |v| build_model(&ModelSpec::desk(v), 0).unwrap();
    let (u, e, ed) = (count(Variant::Unet), count(Variant::EncUse), count(Variant::EncDecUse));
    assert_eq!((u.se_site_count(), e.se_site_count(), ed.se_site_count()), (0, 4, 9));
    assert_eq!(e.param_count() - u.param_count(), 16 + 64 + 256 + 1024);
    assert_eq!(ed.param_count() - u.param_count(), 2 * 1360 + 2 * 128 * 128 / 8);
}

#[test]
fn indivisible_width_names_the_site() {
    let spec = ModelSpec {
        se_reduction: 3,
        ..ModelSpec::desk(Variant::EncUse)
    };
    match build_model(&spec, 0) {
        Err(Error::InvalidSpec(msg)) => assert!(msg.contains("enc1"), "{msg}"),
        other => panic!("expected InvalidSpec, got {other:?}"),
    }
}

#[test]
fn bypassed_enc_use_equals_unet() {
    let x = uniform(&[2, 1, 16, 16], 0.0, 1.0, &mut rng(5));
    let unet = build_model(&tiny(Variant::Unet), 21).unwrap();
    for v in [Variant::EncUse, Variant::EncDecUse] {
        let se = build_model(&tiny(v), 21).unwrap();
        let a = unet.forward(&x).unwrap();
        let b = se.forward_with(&x, ForwardOptions { bypass_se: true }).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12, "{v}");
        assert!(a.max_abs_diff(&se.forward(&x).unwrap()) > 1e-6);
    }
}

#[test]
fn gates_stay_in_unit_interval() {
    let model = build_model(&tiny(Variant::EncDecUse), 2).unwrap();
    let x = uniform(&[1, 1, 16, 16], -3.0, 3.0, &mut rng(6));
    let mut tape = Tape::new();
    let weights = model.bind(&mut tape);
    let input = tape.leaf(x);
    let trace = model.forward_tape(&mut tape, &weights, input, ForwardOptions::default()).unwrap();
    assert_eq!(trace.se_gates.len(), 5);
    for g in trace.se_gates {
        assert!(tape.value(g).data().iter().all(|s| (0.0..=1.0).contains(s)));
    }
    assert!(tape.value(trace.output).data().iter().all(|p| *p > 0.0 && *p < 1.0));
}

#[test]
fn output_shape_and_spatial_check() {
    let model = build_model(&tiny(Variant::EncUse), 0).unwrap();
    let out = model.forward(&DenseArray::zeros(&[3, 1, 8, 12])).unwrap();
    assert_eq!(out.shape(), &[3, 1, 8, 12]);
    assert!(model.forward(&DenseArray::zeros(&[1, 1, 6, 8])).is_err());
}

#[test]
fn zero_head_gives_half() {
    let mut model = build_model(&tiny(Variant::Unet), 0).unwrap();
    model.param_mut("head.weight").unwrap().data_mut().fill(0.0);
    model.param_mut("head.bias").unwrap().data_mut().fill(0.0);
    let out = model.forward(&DenseArray::zeros(&[1, 1, 8, 8])).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.5));
}

#[test]
fn build_is_deterministic_and_checkpoint_round_trips() {
    let a = build_model(&ModelSpec::desk(Variant::EncDecUse), 99).unwrap();
    let b = build_model(&ModelSpec::desk(Variant::EncDecUse), 99).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    assert_ne!(a.checksum(), build_model(&ModelSpec::desk(Variant::EncDecUse), 98).unwrap().checksum());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&a, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.spec(), a.spec());
    assert_eq!(back.seed(), 99);
    for (x, y) in a.params().iter().zip(back.params()) {
        assert_eq!(x.name, y.name);
        assert!(x.value.data().iter().zip(y.value.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_same_preserves_shape(h in 1usize..7, w in 1usize..7, cin in 1usize..3, cout in 1usize..3, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = uniform(&[1, cin, h, w], -1.0, 1.0, &mut r);
        let k = uniform(&[cout, cin, 3, 3], -1.0, 1.0, &mut r);
        let b = DenseArray::zeros(&[cout]);
        let got = conv2d(&x, &k, &b, Padding::Same).unwrap();
        prop_assert_eq!(got.shape(), &[1, cout, h, w]);
        prop_assert!(got.max_abs_diff(&naive_conv(&x, &k, &b, Padding::Same)) < 1e-12);
    }
}
