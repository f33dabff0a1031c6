use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spun_core::downstream::*;
use spun_core::geometry::{square_grid, RegionMask};
use spun_core::spectral::{shape_dna, BoundaryCondition, Signature, Spectrum};
use spun_core::union::{UnionArch, UnionModel};
use spun_nn::Mode;

fn mask(bits: &[u8]) -> RegionMask {
    RegionMask::new(bits.iter().map(|&b| b == 1).collect()).unwrap()
}

fn spec(v: &[f64]) -> Spectrum {
    Spectrum::new(v.to_vec(), BoundaryCondition::Dirichlet).unwrap()
}

/// Mirror map of a 1-D strip of `n` vertices.
fn reversal(n: usize) -> Vec<usize> {
    (0..n).rev().collect()
}

#[test]
fn symmetric_loss_ignores_the_mirror_image() {
    let gt = mask(&[1, 1, 0, 0]);
    let sym = reversal(4);
    assert_eq!(sym_loss(&[1.0, 1.0, 0.0, 0.0], &gt, &sym).unwrap(), 0.0);
    assert_eq!(sym_loss(&[0.0, 0.0, 1.0, 1.0], &gt, &sym).unwrap(), 0.0);
    assert_eq!(sym_loss(&[0.5; 4], &gt, &sym).unwrap(), 0.25);
    // Halfway between the mask and its mirror, both errors equal 0.25.
    assert_eq!(sym_loss(&[0.5, 1.0, 0.5, 0.0], &gt, &sym).unwrap(), 0.125);
    assert!(sym_loss(&[0.0; 3], &gt, &sym).is_err());
}

#[test]
fn metrics_of_exact_mirrored_and_inverted_predictions() {
    let gt = mask(&[1, 1, 1, 0, 0, 0]);
    let sym = reversal(6);
    let exact = region_metrics(&[vec![0.9, 0.8, 0.7, 0.1, 0.2, 0.0]], &[&gt], &sym).unwrap();
    assert_eq!((exact.iou, exact.accuracy), (1.0, 1.0));
    let mirrored = region_metrics(&[vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]], &[&gt], &sym).unwrap();
    assert_eq!((mirrored.iou, mirrored.accuracy), (1.0, 1.0));

    // Without a nontrivial symmetry the complement misses everything.
    let id: Vec<usize> = (0..6).collect();
    let inverted = region_metrics(&[vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]], &[&gt], &id).unwrap();
    assert_eq!((inverted.iou, inverted.accuracy), (0.0, 0.0));
    let full = RegionMask::full(6);
    let empty_pred = region_metrics(&[vec![0.0; 6]], &[&full], &id).unwrap();
    assert_eq!((empty_pred.iou, empty_pred.accuracy), (0.0, 0.0));

    // One extra vertex: IoU 3/4, accuracy 5/6.
    let m = region_metrics(&[vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]], &[&gt], &id).unwrap();
    assert!((m.iou - 0.75).abs() < 1e-15 && (m.accuracy - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn width_ladder_at_full_body_resolution() {
    assert_eq!(layer_widths(6890), [1300, 2600, 3900, 5200, 6890]);
    assert_eq!(layer_widths(500), [94, 189, 283, 377, 500]);
    assert_eq!(layer_widths(1), [1, 1, 1, 1, 1]);
}

#[test]
fn region_outputs_are_probabilities_and_eval_is_deterministic() {
    let model = RegionModel::new(6, 40, 3).unwrap();
    let s = spec(&[0.5, 1.0, 2.0, 2.5, 4.0, 9.0]);
    let p = region_forward(&s, &model, Mode::Eval).unwrap();
    assert_eq!(p.len(), 40);
    assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(p, region_forward(&s, &model, Mode::Eval).unwrap());
    assert!(region_forward(&spec(&[1.0, 2.0]), &model, Mode::Eval).is_err());
}

#[test]
fn region_checkpoint_keeps_input_statistics() {
    let mut model = RegionModel::new(3, 12, 4).unwrap();
    let a = [1.0, 2.0, 3.0];
    let b = [3.0, 5.0, 9.0];
    model.fit_input(&[&a, &b]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("region.ckpt");
    model.save(&path).unwrap();
    let back = RegionModel::load(&path).unwrap();
    assert_eq!((back.k, back.vertices), (3, 12));
    assert_eq!(back.store.fingerprint(), model.store.fingerprint());
    assert!(back.store.get("region.input_shift").unwrap().frozen);
    let s = spec(&a);
    assert_eq!(region_forward(&s, &back, Mode::Eval).unwrap(), region_forward(&s, &model, Mode::Eval).unwrap());
}

const STRIP: usize = 40;

/// Three strip regions, each with its own spectrum pattern.
fn toy_region_set(n: usize, seed: u64) -> Vec<RegionExample> {
    let strip = |lo: usize, hi: usize| RegionMask::new((0..STRIP).map(|i| (lo..hi).contains(&i)).collect()).unwrap();
    let masks = [strip(0, 12), strip(12, 28), strip(0, STRIP)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let c = i % 3;
            let base = [1.0 + c as f64, 2.0 + 2.0 * c as f64, 4.5 + c as f64, 6.0 + 3.0 * c as f64];
            let spectrum = base.iter().map(|v| v * (1.0 + 0.02 * rng.random::<f64>())).collect();
            RegionExample { spectrum, mask: masks[c].clone() }
        })
        .collect()
}

#[test]
fn region_training_follows_its_schedule_and_improves() {
    let data = toy_region_set(60, 1);
    let sym = reversal(STRIP);
    let cfg = RegionTrainConfig { epochs: 150, lr: 1e-3, patience: 150, ..Default::default() };
    let (model, history) = train_region(&data, &[], &sym, &cfg).unwrap();
    let schedule = cfg.schedule();
    for h in &history {
        assert_eq!(h.lr, schedule.lr_at(h.epoch));
    }
    assert!(history.last().unwrap().train_loss < history[0].train_loss);
    let best = history.iter().map(|h| h.val_iou).fold(f64::NEG_INFINITY, f64::max);
    assert!(best >= history[0].val_iou);
    let m = eval_region(&model, &toy_region_set(30, 2), &sym).unwrap();
    assert!(m.iou > 0.9, "{m:?}");
}

#[test]
fn early_stopping_waits_exactly_the_patience() {
    let data = toy_region_set(30, 3);
    let sym = reversal(STRIP);
    let cfg = RegionTrainConfig { epochs: 200, patience: 3, ..Default::default() };
    let (_, history) = train_region(&data, &[], &sym, &cfg).unwrap();
    let mut best = (f64::NEG_INFINITY, 0);
    for h in &history {
        if h.val_iou > best.0 {
            best = (h.val_iou, h.epoch);
        }
    }
    let last = history.last().unwrap().epoch;
    assert!(last + 1 == cfg.epochs || last - best.1 == cfg.patience, "best {best:?} last {last}");
}

#[test]
fn region_training_leaves_the_union_model_untouched() {
    let union = UnionModel::new(UnionArch { k: 4, ..Default::default() }, 2).unwrap();
    let before = union.store.fingerprint();
    let truth = toy_region_set(12, 4);
    let predicted: Vec<RegionExample> = truth
        .iter()
        .map(|e| {
            let s = spec(&e.spectrum);
            let u = union.predict(&s, &s, Mode::Eval).unwrap();
            RegionExample { spectrum: u.values().to_vec(), mask: e.mask.clone() }
        })
        .collect();
    let cfg = RegionTrainConfig { epochs: 3, ..Default::default() };
    train_region(&truth, &predicted, &reversal(STRIP), &cfg).unwrap();
    assert_eq!(union.store.fingerprint(), before);
}

fn random_index(n: usize, len: usize, rng: &mut impl Rng) -> Vec<IndexEntry> {
    (0..n)
        .map(|i| IndexEntry {
            shape_id: i,
            identity: i / 5,
            signature: Signature {
                values: (0..len).map(|_| rng.random_range(0.0..10.0)).collect(),
                provenance: spun_core::spectral::Provenance::Computed,
            },
        })
        .collect()
}

#[test]
fn index_query_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let entries = random_index(40, 20, &mut rng);
    let index = index_build(entries.clone()).unwrap();
    for _ in 0..200 {
        let q = Signature {
            values: (0..20).map(|_| rng.random_range(0.0..10.0)).collect(),
            provenance: spun_core::spectral::Provenance::Predicted,
        };
        let mut oracle: Vec<(f64, usize)> = entries
            .iter()
            .map(|e| {
                let d = e.signature.values.iter().zip(&q.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                (d.sqrt(), e.shape_id)
            })
            .collect();
        oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let got = query_topk(&index, &q, 10).unwrap();
        let expected: Vec<Ranked> = oracle[..10].iter().map(|&(distance, shape_id)| Ranked { shape_id, distance }).collect();
        assert_eq!(got, expected);
    }
}

#[test]
fn self_queries_rank_first_and_large_k_returns_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let entries = random_index(15, 8, &mut rng);
    let index = index_build(entries.clone()).unwrap();
    for e in &entries {
        let r = query_topk(&index, &e.signature, 3).unwrap();
        assert_eq!((r[0].shape_id, r[0].distance), (e.shape_id, 0.0));
    }
    assert_eq!(query_topk(&index, &entries[0].signature, 100).unwrap().len(), 15);
    let queries: Vec<(usize, Signature)> = entries.iter().map(|e| (e.identity, e.signature.clone())).collect();
    let rates = eval_retrieval(&index, &queries, &[1, 5, 10]).unwrap();
    assert!(rates.iter().all(|r| r.rate == 1.0));
}

#[test]
fn ties_go_to_the_lower_id() {
    let s = shape_dna(&spec(&[1.0, 2.0]));
    let entries = vec![
        IndexEntry { shape_id: 7, identity: 0, signature: s.clone() },
        IndexEntry { shape_id: 3, identity: 1, signature: s.clone() },
    ];
    let index = index_build(entries).unwrap();
    let r = query_topk(&index, &s, 2).unwrap();
    assert_eq!(r.iter().map(|x| x.shape_id).collect::<Vec<_>>(), vec![3, 7]);
}

#[test]
fn malformed_indices_are_rejected() {
    assert!(matches!(index_build(vec![]), Err(spun_core::error::CoreError::EmptyIndex)));
    let a = shape_dna(&spec(&[1.0, 2.0]));
    let b = shape_dna(&spec(&[1.0, 2.0, 3.0]));
    let dup = vec![
        IndexEntry { shape_id: 1, identity: 0, signature: a.clone() },
        IndexEntry { shape_id: 1, identity: 0, signature: a.clone() },
    ];
    assert!(index_build(dup).is_err());
    let ragged = vec![
        IndexEntry { shape_id: 1, identity: 0, signature: a },
        IndexEntry { shape_id: 2, identity: 0, signature: b },
    ];
    assert!(index_build(ragged).is_err());
}

#[test]
fn interpolation_endpoints_midpoint_and_monotonicity() {
    let a = spec(&[0.0, 2.0, 4.0]);
    let b = spec(&[2.0, 4.0, 6.0]);
    assert_eq!(interpolate_spectra(&a, &b, 0.0).unwrap().values(), a.values());
    assert_eq!(interpolate_spectra(&a, &b, 1.0).unwrap().values(), b.values());
    assert_eq!(interpolate_spectra(&a, &b, 0.5).unwrap().values(), &[1.0, 3.0, 5.0]);
    let mut prev = a.values().to_vec();
    for step in 1..=20 {
        let s = interpolate_spectra(&a, &b, step as f64 / 20.0).unwrap();
        assert!(s.values().iter().zip(&prev).all(|(x, p)| x >= p));
        prev = s.values().to_vec();
    }
    assert!(interpolate_spectra(&a, &b, 1.5).is_err());
    assert!(interpolate_spectra(&a, &spec(&[1.0]), 0.5).is_err());
}

#[test]
fn mask_export_writes_json_and_off() {
    let mesh = square_grid(3);
    let values: Vec<f64> = (0..mesh.num_vertices()).map(|i| i as f64 / 10.0).collect();
    let dir = tempfile::tempdir().unwrap();
    let (json, off) = (dir.path().join("mask.json"), dir.path().join("mask.off"));
    export_mask(&values, &json, Some((&mesh, off.as_path()))).unwrap();
    let back: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(back, values);
    assert!(std::fs::read_to_string(&off).unwrap().contains("OFF"));
}
