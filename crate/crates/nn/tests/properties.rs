use proptest::prelude::*;
use spun_nn::ckpt::{from_bytes, to_bytes};
use spun_nn::{LrSchedule, Mode, ParamStore, Tape, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-50.0f64..50.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(x in (1usize..6, 1usize..9).prop_flat_map(|(r, c)| matrix(r, c))) {
        let tape = Tape::new(Mode::Eval);
        let v = tape.input(x).unwrap();
        let s = tape.softmax(v).unwrap();
        let out = tape.value(s);
        for r in 0..out.rows() {
            let row = out.row_slice(r);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cumsum_of_relu_is_nondecreasing(x in (1usize..5, 1usize..20).prop_flat_map(|(r, c)| matrix(r, c))) {
        let tape = Tape::new(Mode::Eval);
        let v = tape.input(x).unwrap();
        let r = tape.relu(v).unwrap();
        let c = tape.cumsum(r).unwrap();
        let out = tape.value(c);
        for r in 0..out.rows() {
            prop_assert!(out.row_slice(r).windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn checkpoint_roundtrip(values in prop::collection::vec(prop::num::f64::NORMAL, 1..40), split in 0usize..40) {
        let split = split.min(values.len());
        let mut store = ParamStore::new();
        store.insert("head", Tensor::new(vec![split], values[..split].to_vec()).unwrap()).unwrap();
        store.insert("tail", Tensor::row(values[split..].to_vec())).unwrap();
        let back = from_bytes(&to_bytes(&store)).unwrap();
        prop_assert_eq!(store.fingerprint(), back.fingerprint());
        prop_assert_eq!(store, back);
    }

    #[test]
    fn schedule_stays_in_bounds(base in 1e-6f64..1.0, epoch in 0usize..10_000) {
        let s = LrSchedule::new(base);
        let lr = s.lr_at(epoch);
        prop_assert!(lr >= 0.0 && lr <= base);
        let (cur, len) = s.cycle_position(epoch);
        prop_assert!(cur < len);
    }
}
