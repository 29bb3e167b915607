use fedattn::federated::protocol::{read_frame, write_frame};
use fedattn::federated::{aggregation_weights, deserialize_params, serialize_params, AggregationMode};
use fedattn::model::{attend, encode, ModelDims, ModelParams};
use fedattn::tensor::Tensor;
use proptest::prelude::*;

fn dims() -> ModelDims {
    ModelDims::new(9, 6, 3, 4)
}

proptest! {
    #[test]
    fn weights_are_a_distribution(counts in prop::collection::vec(1usize..5000, 1..12), uniform in any::<bool>()) {
        let mode = if uniform { AggregationMode::Uniform } else { AggregationMode::Weighted };
        let w = aggregation_weights(&counts, mode).unwrap();
        prop_assert_eq!(w.len(), counts.len());
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let total: usize = counts.iter().sum();
        for (wk, &n) in w.iter().zip(&counts) {
            let expected = if uniform { 1.0 / counts.len() as f64 } else { n as f64 / total as f64 };
            prop_assert!((wk - expected).abs() <= 1e-15);
        }
    }

    #[test]
    fn params_round_trip_any_bit_pattern(seed in any::<u64>(), bits in prop::collection::vec(any::<u64>(), 8)) {
        let mut p = ModelParams::init(dims(), seed).unwrap();
        for (t, b) in p.tensors_mut().into_iter().zip(&bits) {
            t.data_mut()[0] = f64::from_bits(*b);
        }
        let q = deserialize_params(&serialize_params(&p)).unwrap();
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            let a: Vec<u64> = a.data().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = b.data().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_params_never_decode(seed in 0u64..50, cut in 0usize..1000) {
        let bytes = serialize_params(&ModelParams::init(dims(), seed).unwrap());
        let cut = cut % bytes.len();
        prop_assert!(deserialize_params(&bytes[..cut]).is_err());
    }

    #[test]
    fn frames_round_trip(bodies in prop::collection::vec(prop::collection::vec(any::<u8>(), 1..300), 1..5)) {
        let mut wire = Vec::new();
        for b in &bodies {
            write_frame(&mut wire, b).unwrap();
        }
        let mut r = wire.as_slice();
        for b in &bodies {
            prop_assert_eq!(read_frame(&mut r).unwrap(), Some(b.clone()));
        }
        prop_assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn attention_weights_sum_to_one(
        seed in any::<u64>(),
        input in prop::collection::vec(0usize..9, 1..8),
        h in prop::collection::vec(-1.0f64..1.0, 4),
    ) {
        let p = ModelParams::init(dims(), seed).unwrap();
        let enc = encode(&p, &input).unwrap();
        let out = attend(&p, &Tensor::new(vec![4], h).unwrap(), &enc).unwrap();
        let w = out.weights.data();
        prop_assert_eq!(w.len(), input.len());
        prop_assert!(w.iter().all(|&a| (0.0..=1.0).contains(&a)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(out.attn_vector.data().iter().all(|x| x.abs() < 1.0));
    }
}
