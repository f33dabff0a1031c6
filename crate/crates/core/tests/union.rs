use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spun_core::spectral::{offset_encode, BoundaryCondition, Spectrum};
use spun_core::union::*;
use spun_nn::{Mode, Tape, Tensor};

fn random_spectrum(rng: &mut impl Rng, k: usize, scale: f64) -> Spectrum {
    let mut acc = 0.0;
    let values = (0..k)
        .map(|_| {
            acc += rng.random_range(0.0..scale);
            acc
        })
        .collect();
    Spectrum::new(values, BoundaryCondition::Dirichlet).unwrap()
}

fn model(seed: u64) -> UnionModel {
    UnionModel::new(UnionArch::default(), seed).unwrap()
}

/// Union target with a simple learnable structure: the elementwise minimum
/// pulled down by a constant fraction.
fn toy_examples(n: usize, seed: u64) -> Vec<UnionExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a = random_spectrum(&mut rng, 20, 2.0);
            let b = random_spectrum(&mut rng, 20, 2.0);
            let u: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| 0.8 * x.min(*y)).collect();
            UnionExample::new(&a, &b, &Spectrum::new(u, BoundaryCondition::Dirichlet).unwrap())
        })
        .collect()
}

#[test]
fn embedding_rows_hold_position_scaled_offset_and_offset() {
    let m = model(3);
    let theta_a = m.store.value("union.theta_a").unwrap().clone();
    let theta_b = m.store.value("union.theta_b").unwrap().clone();
    let s = random_spectrum(&mut ChaCha8Rng::seed_from_u64(1), 20, 1.5);
    let off = offset_encode(&s);
    let e = embed(&off, &m).unwrap();
    assert_eq!(e.shape(), &[20, 32]);
    for i in 0..20 {
        let row = e.row_slice(i);
        assert_eq!(&row[..16], theta_a.row_slice(i));
        for j in 0..15 {
            assert_eq!(row[16 + j], off.offsets[i] * theta_b.data()[j]);
        }
        assert_eq!(row[31], off.offsets[i]);
    }
}

#[test]
fn zero_offsets_leave_only_positional_codes() {
    let m = model(4);
    let zero = spun_core::spectral::OffsetSeq { offsets: vec![0.0; 20] };
    let e = embed(&zero, &m).unwrap();
    for i in 0..20 {
        assert!(e.row_slice(i)[16..].iter().all(|&v| v == 0.0));
    }
    // Equal offsets at distinct positions still give distinct rows.
    assert_ne!(e.row_slice(0), e.row_slice(1));
}

#[test]
fn scaling_offsets_scales_only_the_value_columns() {
    let m = model(5);
    let off = offset_encode(&random_spectrum(&mut ChaCha8Rng::seed_from_u64(2), 20, 1.0));
    let scaled = spun_core::spectral::OffsetSeq { offsets: off.offsets.iter().map(|o| 3.0 * o).collect() };
    let (e, f) = (embed(&off, &m).unwrap(), embed(&scaled, &m).unwrap());
    for i in 0..20 {
        let (a, b) = (e.row_slice(i), f.row_slice(i));
        assert_eq!(&a[..16], &b[..16]);
        for j in 16..32 {
            assert!((b[j] - 3.0 * a[j]).abs() <= 1e-15 * a[j].abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn union_is_commutative_bitwise(seed in 0u64..1000, wseed in 0u64..4, scale in 0.05f64..20.0) {
        let m = model(wseed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spectrum(&mut rng, 20, scale);
        let b = random_spectrum(&mut rng, 20, scale);
        let ab = union_forward(&a, &b, &m, Mode::Eval).unwrap();
        let ba = union_forward(&b, &a, &m, Mode::Eval).unwrap();
        prop_assert_eq!(
            ab.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            ba.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn predictions_are_nonnegative_and_sorted(seed in 0u64..1000, wseed in 0u64..4, scale in 0.05f64..20.0) {
        let m = model(wseed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spectrum(&mut rng, 20, scale);
        let b = random_spectrum(&mut rng, 20, scale);
        let u = union_forward(&a, &b, &m, Mode::Eval).unwrap();
        prop_assert!(u.values()[0] >= 0.0);
        prop_assert!(u.values().windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn batched_prediction_matches_single_pairs() {
    let m = model(6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let spectra: Vec<Spectrum> = (0..6).map(|_| random_spectrum(&mut rng, 20, 1.0)).collect();
    let pairs: Vec<(&Spectrum, &Spectrum)> = spectra.chunks(2).map(|c| (&c[0], &c[1])).collect();
    let batched = m.predict_batch(&pairs, Mode::Eval).unwrap();
    for ((a, b), u) in pairs.iter().zip(&batched) {
        assert_eq!(union_forward(a, b, &m, Mode::Eval).unwrap().values(), u.values());
    }
}

#[test]
fn one_step_reaches_every_stage() {
    let mut m = model(7);
    let ex = &toy_examples(1, 3)[0];
    let grads = {
        let tape = Tape::with_store(&m.store, Mode::Train).with_dropout_seed(1);
        let pred = m.forward_batch(&tape, &[&ex.a], &[&ex.b]).unwrap();
        let t = tape.constant(Tensor::matrix(1, 20, ex.target.clone()).unwrap()).unwrap();
        let loss = tape.mse(pred, t).unwrap();
        tape.backward(loss).unwrap()
    };
    m.store.accumulate(grads.params(), 1.0).unwrap();
    let mut checked = vec!["union.theta_a".to_string(), "union.theta_b".into(), "union.rho.weight".into()];
    checked.extend(
        m.store
            .names()
            .filter(|n| n.contains("attn.") && n.ends_with(".weight"))
            .map(String::from),
    );
    assert!(checked.len() > 3 + 4 * 6);
    for name in &checked {
        assert!(m.store.grad_norm(name).unwrap() > 0.0, "no gradient reached {name}");
    }
}

#[test]
fn training_lowers_the_loss_within_the_first_cycle() {
    let data = toy_examples(60, 11);
    let cfg = TrainConfig { epochs: 10, ..Default::default() };
    let (_, history) = train_union(&data, &[], &cfg).unwrap();
    assert_eq!(history.len(), 10);
    assert!(history[9].train_loss < history[0].train_loss, "{history:?}");
    assert!(history.iter().all(|h| h.val_loss.is_finite()));
}

#[test]
fn fixed_seed_reproduces_training_exactly() {
    let data = toy_examples(40, 12);
    let cfg = TrainConfig { epochs: 3, seed: 5, ..Default::default() };
    let (m1, h1) = train_union(&data, &[], &cfg).unwrap();
    let (m2, h2) = train_union(&data, &[], &cfg).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(m1.store.fingerprint(), m2.store.fingerprint());
}

#[test]
fn learning_rate_trace_follows_the_schedule() {
    let data = toy_examples(20, 13);
    let cfg = TrainConfig { epochs: 12, ..Default::default() };
    let (_, history) = train_union(&data, &[], &cfg).unwrap();
    let schedule = cfg.schedule();
    for h in &history {
        assert_eq!(h.lr, schedule.lr_at(h.epoch));
    }
    assert_eq!(history[0].lr, 2e-4);
    assert_eq!(history[10].lr, 2e-4);
}

#[test]
fn error_metrics_on_known_offsets() {
    let t = [1.0, 2.0, 3.0];
    let perfect = spectrum_errors([(&t[..], &t[..])]);
    assert_eq!((perfect.mse, perfect.mae), (0.0, 0.0));
    let shifted = [2.0, 3.0, 4.0];
    let off = spectrum_errors([(&shifted[..], &t[..])]);
    assert_eq!((off.mse, off.mae), (1.0, 1.0));
}

#[test]
fn elementwise_min_baseline() {
    let s = |v: Vec<f64>| Spectrum::new(v, BoundaryCondition::Dirichlet).unwrap();
    let ex = UnionExample::new(&s(vec![1.0, 4.0]), &s(vec![2.0, 3.0]), &s(vec![0.0, 3.0]));
    let m = min_baseline(&[ex]);
    assert!((m.mse - 0.5).abs() < 1e-12 && (m.mae - 0.5).abs() < 1e-12, "{m:?}");
}

#[test]
fn composition_folds_pairwise_unions() {
    let m = model(8);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let s: Vec<Spectrum> = (0..3).map(|_| random_spectrum(&mut rng, 20, 1.0)).collect();
    let two = union_compose(&s[..2], &m).unwrap();
    assert_eq!(two, union_forward(&s[0], &s[1], &m, Mode::Eval).unwrap());
    let three = union_compose(&s, &m).unwrap();
    assert_eq!(three, union_forward(&two, &s[2], &m, Mode::Eval).unwrap());
    let right = union_compose_right(&s, &m).unwrap();
    let inner = union_forward(&s[1], &s[2], &m, Mode::Eval).unwrap();
    assert_eq!(right, union_forward(&s[0], &inner, &m, Mode::Eval).unwrap());
    assert!(union_compose(&s[..1], &m).is_err());
}

#[test]
fn mismatched_lengths_are_rejected() {
    let m = model(9);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let a = random_spectrum(&mut rng, 20, 1.0);
    let b = random_spectrum(&mut rng, 12, 1.0);
    assert!(union_forward(&a, &b, &m, Mode::Eval).is_err());
}

#[test]
fn checkpoint_roundtrip_predicts_identically() {
    let m = model(10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("union.ckpt");
    m.save(&path).unwrap();
    let back = UnionModel::load(&path, 8).unwrap();
    assert_eq!(back.arch, m.arch);
    assert_eq!(back.store.fingerprint(), m.store.fingerprint());
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (a, b) = (random_spectrum(&mut rng, 20, 1.0), random_spectrum(&mut rng, 20, 1.0));
    assert_eq!(
        union_forward(&a, &b, &back, Mode::Eval).unwrap(),
        union_forward(&a, &b, &m, Mode::Eval).unwrap()
    );
    // 32 channels do not split into 5 heads.
    assert!(UnionModel::load(&path, 5).is_err());
}
