//! Central finite differences against the reverse pass on hand-built instances.

use niaque::gradcheck::{compare, run, GradcheckOptions, Instance};
use niaque::{FeatureRow, NiaqueConfig, NiaqueModel, QuantileGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn jittered(config: NiaqueConfig, seed: u64) -> NiaqueModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = NiaqueModel::new(config, &mut rng).unwrap();
    let noise = Normal::new(0.0, 0.25).unwrap();
    let ids: Vec<_> = m.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        for v in m.params_mut().value_mut(id) {
            *v += noise.sample(&mut rng);
        }
    }
    m
}

#[test]
fn single_feature_rows_and_shared_levels() {
    let config = NiaqueConfig {
        blocks: 2,
        layers_per_block: 2,
        latent_dim: 6,
        input_embed_dim: 3,
        hidden_width: 5,
        feature_vocab_capacity: 4,
        ..NiaqueConfig::default()
    };
    let opts = GradcheckOptions::default();
    let mut checked_any = false;
    for seed in 0..40 {
        let mut model = jittered(config.clone(), seed);
        let rows = vec![
            FeatureRow::new(vec![2], vec![0.7], None).unwrap(),
            FeatureRow::new(vec![0, 3, 1], vec![-1.5, 2.0, 0.1], None).unwrap(),
        ];
        let levels = [0.1, 0.5, 0.93];
        let inst = Instance {
            rows,
            grid: QuantileGrid::shared(&levels, 2).unwrap(),
            targets: vec![0.3, -0.2, 1.1, 0.0, 0.4, -0.9],
        };
        let (_, margin) = inst.loss(&model).unwrap();
        if margin < opts.margin {
            continue;
        }
        let (err, worst, n) = compare(&mut model, &inst, &opts).unwrap();
        assert_eq!(n, config.param_count());
        assert!(err <= opts.tolerance, "{worst}: {err:e}");
        checked_any = true;
    }
    assert!(checked_any, "no instance cleared the kink margin");
}

#[test]
fn random_suite_with_another_seed() {
    let report = run(&GradcheckOptions {
        configs: 8,
        seed: 99,
        ..GradcheckOptions::default()
    })
    .unwrap();
    assert!(report.passed(), "max relative error {:e}", report.max_rel_err);
    assert_eq!(report.cases.len(), 8);
}
