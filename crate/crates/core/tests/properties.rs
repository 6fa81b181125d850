use niaque::data::{ingest_table, FeatureRegistry, IngestOptions, RawTable};
use niaque::loss::{coverage, crps_sample, pinball};
use niaque::{FeatureRow, NiaqueConfig, NiaqueModel, QuantileGrid, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model() -> NiaqueModel {
    let config = NiaqueConfig {
        latent_dim: 8,
        hidden_width: 8,
        input_embed_dim: 4,
        feature_vocab_capacity: 12,
        ..NiaqueConfig::default()
    };
    NiaqueModel::new(config, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
}

fn row_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    proptest::sample::subsequence((0..12usize).collect::<Vec<_>>(), 1..=12)
        .prop_shuffle()
        .prop_flat_map(|ids| {
            let n = ids.len();
            (Just(ids), proptest::collection::vec(-1e3f64..1e3, n))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prediction_ignores_feature_order((ids, vals) in row_strategy(), q in 0.01f64..0.99) {
        let m = model();
        let a = FeatureRow::new(ids.clone(), vals.clone(), None).unwrap();
        let mut pairs: Vec<(usize, f64)> = ids.into_iter().zip(vals).collect();
        pairs.reverse();
        let (rid, rval) = pairs.into_iter().unzip();
        let b = FeatureRow::new(rid, rval, None).unwrap();
        let grid = QuantileGrid::shared(&[q], 1).unwrap();
        let ya = m.forward(&[a.clone()], &grid).unwrap().values.data()[0];
        let yb = m.forward(&[b], &grid).unwrap().values.data()[0];
        let yc = m.forward(&[a.canonicalized()], &grid).unwrap().values.data()[0];
        prop_assert!((ya - yb).abs() <= 1e-9 * ya.abs().max(1.0));
        prop_assert!((ya - yc).abs() <= 1e-9 * ya.abs().max(1.0));
    }

    #[test]
    fn batch_rows_are_independent((ids, vals) in row_strategy(), (ids2, vals2) in row_strategy()) {
        let m = model();
        let a = FeatureRow::new(ids, vals, None).unwrap();
        let b = FeatureRow::new(ids2, vals2, None).unwrap();
        let levels = [0.2, 0.8];
        let alone = m.forward(&[a.clone()], &QuantileGrid::shared(&levels, 1).unwrap()).unwrap();
        let both = m.forward(&[b, a], &QuantileGrid::shared(&levels, 2).unwrap()).unwrap();
        for j in 0..2 {
            prop_assert!((alone.values.at(0, j) - both.values.at(1, j)).abs() <= 1e-12 * alone.values.at(0, j).abs().max(1.0));
        }
    }

    #[test]
    fn pinball_is_nonnegative_and_zero_on_target(y in -1e3f64..1e3, yhat in -1e3f64..1e3, q in 0.001f64..0.999) {
        prop_assert!(pinball(y, yhat, q).unwrap() >= 0.0);
        prop_assert_eq!(pinball(y, y, q).unwrap(), 0.0);
    }

    #[test]
    fn coverage_is_a_percentage(v in proptest::collection::vec((-5f64..5.0, -5f64..5.0, 0f64..3.0), 1..50)) {
        let y: Vec<f64> = v.iter().map(|t| t.0).collect();
        let lo: Vec<f64> = v.iter().map(|t| t.1).collect();
        let hi: Vec<f64> = v.iter().map(|t| t.1 + t.2).collect();
        let c = coverage(&y, &lo, &hi);
        prop_assert!((0.0..=100.0).contains(&c));
    }

    #[test]
    fn crps_of_exact_constant_is_zero(y in proptest::collection::vec(-10f64..10.0, 1..20), q in proptest::collection::vec(0.01f64..0.99, 1..10)) {
        let data: Vec<f64> = y.iter().flat_map(|&v| std::iter::repeat_n(v, q.len())).collect();
        let t = Tensor::matrix(y.len(), q.len(), data).unwrap();
        prop_assert_eq!(crps_sample(&y, &t, &q).unwrap(), 0.0);
    }

    #[test]
    fn normalisation_round_trips(ys in proptest::collection::vec(-1e4f64..1e4, 10..40)) {
        prop_assume!(ys.iter().any(|&v| v != ys[0]));
        let table = RawTable {
            headers: vec!["a".into(), "y".into()],
            rows: ys.iter().enumerate().map(|(i, y)| vec![Some(i.to_string()), Some(y.to_string())]).collect(),
        };
        let ds = ingest_table("p", "mem", &table, "y", &mut FeatureRegistry::new(), &IngestOptions::default()).unwrap();
        for r in ds.all_rows() {
            let t = r.target().unwrap();
            prop_assert!((-1e-9..=10.0 + 1e-9).contains(&t));
            let back = ds.meta.denormalize(t);
            prop_assert!(ys.iter().any(|&y| (y - back).abs() <= 1e-9 * y.abs().max(1.0)));
        }
    }
}
