use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::Arch;
use super::*;
use crate::autodiff::fdcheck::{max_rel_error, random_tensor};

fn toy(variant: Variant) -> ModelConfig {
    ModelConfig { variant, ..ModelConfig::toy() }
}

fn batch(rows: usize, d: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = random_tensor(&mut rng, &[rows, d], -2.0, 2.0);
    Tensor::from_f64([rows, d], t.data()).unwrap()
}

fn dense(i: usize, o: usize) -> usize {
    i * o + o
}

#[test]
fn internal_world_forward_shape_and_range() {
    let m = Model::<f32>::new(&ModelConfig::default()).unwrap();
    let mut g = Graph::new();
    let x = g.constant(batch(32, 276, 0));
    let p = m.forward(&mut g, x, &mut Phase::Eval).unwrap();
    assert_eq!(g.shape(p), &[32]);
    assert!(g.value(p).iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn internal_world_audit_matches_layer_dimensions() {
    let m = Model::<f32>::new(&ModelConfig::default()).unwrap();
    let a = m.audit();
    let h = 1152;
    assert_eq!(a.block("branches").unwrap().dense(), 4 * (dense(69, 144) + dense(144, 288)));
    assert_eq!(a.block("branches").unwrap().dense(), 207_360);
    assert_eq!(a.block("branches").unwrap().norm, 4 * 2 * (144 + 288));
    assert_eq!(a.block("cross_ffn").unwrap().dense(), 3 * dense(h, h));
    assert_eq!(a.block("cross_ffn").unwrap().weights, 3 * h * h);
    assert_eq!(a.block("cross_ffn").unwrap().weights, 3_981_312);
    assert_eq!(a.block("projection").unwrap().dense(), 1_328_256);
    assert_eq!(a.block("classifier").unwrap().dense(), dense(h, 256) + dense(256, 64) + dense(64, 1));
    assert_eq!(a.block("classifier").unwrap().dense(), 311_681);
    assert_eq!(a.frozen, 14_607_360);
    let slice = a.per_block.iter().find(|b| b.block == "slice").unwrap();
    assert!(!slice.trainable);
    assert_eq!(a.notes.len(), 3);
}

#[test]
fn baseline_totals_match_results_table() {
    let ffn = Model::<f32>::new(&ModelConfig::for_variant(Variant::Ffn3l)).unwrap().audit();
    let bn = 2 * (256 + 128 + 64);
    assert_eq!(ffn.total(), dense(276, 256) + dense(256, 128) + dense(128, 64) + dense(64, 1) + bn);
    assert_eq!(ffn.total(), 113_025);
    assert_eq!(ffn.buffers, bn);

    let cnn = Model::<f32>::new(&ModelConfig::for_variant(Variant::Cnn1d)).unwrap().audit();
    let convs = (32 * 3 + 32) + (64 * 32 * 3 + 64);
    assert_eq!(cnn.total(), convs + 2 * (32 + 64) + dense(17_664, 128) + 2 * 128 + dense(128, 1));
    assert_eq!(cnn.total(), 2_268_033);
    assert!(cnn.notes.iter().any(|n| n.contains("matches")));
}

#[test]
fn pe_mlp_and_entropy_totals() {
    let pe = Model::<f32>::new(&ModelConfig::for_variant(Variant::PeMlp)).unwrap().audit();
    assert_eq!(pe.total(), 2 * 276 * 32 + 276 * 32 + 2 * 32 + dense(8832, 1));

    let ph = Model::<f32>::new(&ModelConfig::for_variant(Variant::PhysEntropy)).unwrap().audit();
    let trunk = dense(276, 512) + 2 * 512 + dense(512, 256) + 2 * 256;
    let branch = dense(276, 256) + dense(256, 128);
    let residual = dense(129, 128) + 2 * dense(128, 128);
    assert_eq!(ph.total(), trunk + 257 + branch + residual + dense(384, 1));
}

#[test]
fn flatten_and_final_widths() {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let widths = |v: Variant, store: &mut ParamStore<f32>, rng: &mut ChaCha8Rng| match Arch::build(
        store,
        &ModelConfig::for_variant(v),
        rng,
    )
    .unwrap()
    {
        Arch::Cnn1d(m) => m.flatten_width(),
        Arch::PeMlp(m) => m.flatten_width(),
        Arch::PhysEntropy(m) => m.final_width(),
        _ => unreachable!(),
    };
    assert_eq!(widths(Variant::Cnn1d, &mut store, &mut rng), 17_664);
    let mut store = ParamStore::<f32>::new();
    assert_eq!(widths(Variant::PeMlp, &mut store, &mut rng), 8_832);
    let mut store = ParamStore::<f32>::new();
    assert_eq!(widths(Variant::PhysEntropy, &mut store, &mut rng), 384);
}

#[test]
fn partition_identity_holds_for_every_variant() {
    for v in Variant::ALL {
        let m = Model::<f32>::new(&toy(v)).unwrap();
        let a = m.audit();
        let all: usize =
            m.store().count(|p| p.kind == crate::ParamKind::Weight) + m.slice().map_or(0, |s| s.parameter_count());
        assert_eq!(a.trainable + a.frozen, all, "{v}");
        assert_eq!(a.per_block.iter().map(BlockAudit::total).sum::<usize>(), all, "{v}");
        let archive = m.to_archive().unwrap();
        assert_eq!(archive.scalar_count(), all + a.buffers, "{v}");
    }
}

#[test]
fn init_follows_conventions() {
    let m = Model::<f64>::new(&ModelConfig { variant: Variant::PhysEntropy, ..Default::default() }).unwrap();
    for (_, p) in m.store().iter() {
        let n = &p.name;
        if n.ends_with(".bias") || n.ends_with("running_mean") {
            assert!(p.values().iter().all(|&v| v == 0.0), "{n}");
        } else if n.contains(".bn") && n.ends_with(".weight") || n.ends_with("running_var") || n.ends_with(".alpha") {
            assert!(p.values().iter().all(|&v| v == 1.0), "{n}");
        } else if n.ends_with(".k") {
            assert!((0.8..1.2).contains(&p.values()[0]));
        }
    }
    let w = m.store().by_name("trunk.fc1.weight").unwrap().values();
    let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    let want = 0.49 * 2.0 / (276.0 + 512.0);
    assert!((var / want - 1.0).abs() < 0.05);
}

#[test]
fn eval_forward_is_bitwise_repeatable() {
    for v in Variant::ALL {
        let m = Model::<f32>::new(&toy(v)).unwrap();
        let x = batch(6, 8, 1);
        let run = || {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let p = m.forward(&mut g, xv, &mut Phase::Eval).unwrap();
            g.value(p).to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), "{v}");
    }
}

#[test]
fn wrong_input_width_is_dimension_error() {
    let m = Model::<f32>::new(&toy(Variant::InternalWorld)).unwrap();
    let mut g = Graph::new();
    let x = g.constant(batch(2, 9, 0));
    assert!(matches!(m.forward(&mut g, x, &mut Phase::Eval), Err(Error::Dimension(_))));
}

#[test]
fn input_gradients_match_finite_differences_in_both_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for v in Variant::ALL {
        let m = Model::<f64>::new(&toy(v)).unwrap();
        let x = random_tensor(&mut rng, &[4, 8], -1.5, 1.5);
        let eval = max_rel_error(std::slice::from_ref(&x), 2, |g, xs| m.logits(g, xs[0], &mut Phase::Eval));
        assert!(eval < 1e-4, "{v} eval: {eval}");
        let train = max_rel_error(&[x], 2, |g, xs| {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            m.logits(g, xs[0], &mut Phase::Train(&mut r))
        });
        assert!(train < 1e-4, "{v} train: {train}");
    }
}

#[test]
fn every_trainable_parameter_receives_gradient() {
    for v in Variant::ALL {
        let mut m = Model::<f64>::new(&toy(v)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, &[16, 8], -2.0, 2.0);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let p = {
            let mut drop_rng = ChaCha8Rng::seed_from_u64(4);
            m.forward(&mut g, xv, &mut Phase::Train(&mut drop_rng)).unwrap()
        };
        let l = g.mean(p);
        g.backward(l, m.store_mut()).unwrap();
        for (_, prm) in m.store().iter().filter(|(_, p)| p.requires_grad()) {
            let gnorm: f64 = prm.grad().unwrap().iter().map(|g| g.abs()).sum();
            assert!(gnorm > 0.0, "{v}: {} has no gradient", prm.name);
        }
        if let Some(s) = m.slice() {
            assert!(s.is_frozen());
        }
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    for v in Variant::ALL {
        let m = Model::<f32>::new(&ModelConfig { seed: 7, ..toy(v) }).unwrap();
        let path = dir.path().join(format!("{v}.nta"));
        m.save(&path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = Model::<f32>::load(&path).unwrap();
        assert_eq!(back.config(), m.config());
        let x = batch(5, 8, 2);
        assert_eq!(m.predict(&x, 5).unwrap(), back.predict(&x, 5).unwrap(), "{v}");
    }
}

#[test]
fn checkpoint_with_wrong_config_rejected() {
    let m = Model::<f32>::new(&toy(Variant::Ffn3l)).unwrap();
    let archive = m.to_archive().unwrap();
    let other = ModelConfig { ffn3l_widths: vec![8, 6, 5], ..toy(Variant::Ffn3l) };
    assert!(matches!(Model::<f32>::from_archive(&other, &archive), Err(Error::Dimension(_))));
    let iw = ModelConfig::toy();
    assert!(matches!(Model::<f32>::from_archive(&iw, &archive), Err(Error::Manifest(_))));
}

#[test]
fn chunked_prediction_matches_whole_batch() {
    let m = Model::<f32>::new(&toy(Variant::InternalWorld)).unwrap();
    let x = batch(37, 8, 4);
    let whole = m.predict(&x, 64).unwrap();
    let chunked = m.predict(&x, 5).unwrap();
    assert_eq!(whole.len(), 37);
    for (a, b) in whole.iter().zip(&chunked) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn classifier_group_membership() {
    assert!(Model::<f32>::is_classifier("classifier.fc1.weight"));
    assert!(!Model::<f32>::is_classifier("projection.dense.weight"));
    for v in Variant::ALL {
        let m = Model::<f32>::new(&toy(v)).unwrap();
        let names = m.store().names();
        assert!(names.iter().any(|n| Model::<f32>::is_classifier(n)), "{v}");
        assert!(names.iter().any(|n| !Model::<f32>::is_classifier(n)), "{v}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn probabilities_lie_strictly_inside_unit_interval(
        vi in 0usize..5,
        seed in 0u64..1000,
        scale in prop_oneof![Just(1.0f64), Just(100.0), Just(1e6)],
    ) {
        let m = Model::<f32>::new(&toy(Variant::ALL[vi])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, &[4, 8], -scale, scale);
        let x = Tensor::from_f64([4, 8], x.data()).unwrap();
        for p in m.predict(&x, 4).unwrap() {
            prop_assert!(p > 0.0 && p < 1.0, "{p}");
        }
    }
}
