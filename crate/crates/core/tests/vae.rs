mod common;

use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use tabgen::dataio::{preprocess, Matrix};
use tabgen::datasets::{gaussian_mixture, mixed_six};
use tabgen::numerics::{Graph, Tensor};
use tabgen::vae::{
    build_model, kl_divergence, train, train_on, CategoricalSampling, ModelConfig, ModelVariant, TrainConfig,
    VaeModel,
};
use tabgen::Error;

fn toy_model(variant: ModelVariant, seed: u64) -> (VaeModel<f32>, tabgen::dataio::PreprocessedDataset) {
    let ds = preprocess(&mixed_six(300, 1), 1).unwrap();
    let cfg = ModelConfig { variant, ..ModelConfig::default() };
    (build_model(&ds.schema, &cfg, seed).unwrap(), ds)
}

fn assert_one_hot(model: &VaeModel<f32>, m: &Matrix) {
    for r in 0..m.rows() {
        let row = m.row(r);
        let mut start = model.spec.num_numerical;
        for &c in &model.spec.category_sizes {
            let block = &row[start..start + c];
            assert_eq!(block.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(block.iter().filter(|&&v| v == 0.0).count(), c - 1);
            start += c;
        }
    }
}

#[test]
fn eld_name_sets_all_flags() {
    let v: ModelVariant = "ELD-VAE".parse().unwrap();
    assert!(v.enc && v.lat && v.dec);
}

#[test]
fn stacks_present_iff_flag_set() {
    for v in ModelVariant::ALL {
        let (m, _) = toy_model(v, 3);
        for (prefix, flag) in [("tf_enc.", v.enc), ("tf_lat.", v.lat), ("tf_dec.", v.dec)] {
            assert_eq!(m.params.names().any(|n| n.starts_with(prefix)), flag, "{v} {prefix}");
        }
    }
    let (plain, _) = toy_model(ModelVariant::VAE, 3);
    assert!(plain.params.names().all(|n| !n.starts_with("tf_")));
}

#[test]
fn shared_components_start_identical() {
    let (el, _) = toy_model(ModelVariant::EL_VAE, 7);
    let (eld, _) = toy_model(ModelVariant::ELD_VAE, 7);
    let mut shared = 0;
    for (name, p) in el.params.iter() {
        let q = eld.params.get(name).expect("EL-VAE names are a subset of ELD-VAE names");
        assert_eq!(p.value.data(), q.data(), "{name}");
        shared += name.starts_with("tf_enc.") as usize;
    }
    assert!(shared > 0);
    let (other, _) = toy_model(ModelVariant::EL_VAE, 8);
    assert_ne!(other.params.get("tf_enc.b0.attn.wq").unwrap().data(), el.params.get("tf_enc.b0.attn.wq").unwrap().data());
}

#[test]
fn identity_stacks_reproduce_the_plain_vae() {
    let gap = common::identity_stack_gap(64, 5);
    assert!(gap < 1e-5, "gap {gap}");
}

#[test]
fn kl_is_zero_at_the_prior() {
    let mut g = Graph::<f64>::new();
    let mu = g.constant(Tensor::zeros(&[3, 8]));
    let lv = g.constant(Tensor::zeros(&[3, 8]));
    let kl = kl_divergence(&mut g, mu, lv, 3).unwrap();
    assert_eq!(g.value(kl).data()[0], 0.0);
}

#[test]
fn zero_epochs_leave_weights_untouched() {
    let (mut m, ds) = toy_model(ModelVariant::VAE, 1);
    let before = m.params.flat_values();
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let report = train(&mut m, &ds, &cfg, 1).unwrap();
    assert!(report.epochs.is_empty());
    assert_eq!(m.params.flat_values(), before);
}

#[test]
fn default_epochs_are_five_hundred() {
    assert_eq!(TrainConfig::default().epochs, 500);
}

#[test]
fn training_rejects_a_foreign_schema() {
    let (mut m, _) = toy_model(ModelVariant::VAE, 1);
    let other = preprocess(&gaussian_mixture(200, 1), 1).unwrap();
    let err = train(&mut m, &other, &TrainConfig { epochs: 1, ..Default::default() }, 1).unwrap_err();
    assert!(matches!(err, Error::Schema(_)));
}

#[test]
fn non_finite_loss_reports_its_location() {
    let (mut m, ds) = toy_model(ModelVariant::VAE, 1);
    m.params.get_mut("enc.logvar.b").unwrap().data_mut()[0] = f32::INFINITY;
    let err = train(&mut m, &ds, &TrainConfig { epochs: 1, ..Default::default() }, 1).unwrap_err();
    match err {
        Error::NonFinite { term, context } => {
            assert!(!term.is_empty());
            assert!(context.contains("epoch 1"), "{context}");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn training_is_deterministic_and_records_every_epoch() {
    let run = || {
        let (mut m, ds) = toy_model(ModelVariant::D_VAE, 2);
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let mut seen = Vec::new();
        let r = train_on(&mut m, &ds.train_x(), Some(&ds.val_x()), &cfg, 4, |e| seen.push(e.epoch)).unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
        assert!(r.epochs.iter().all(|e| e.val.is_some() && e.train.total.is_finite()));
        (r.epochs, m.params.flat_values())
    };
    let (a, wa) = run();
    let (b, wb) = run();
    assert_eq!(a, b);
    assert_eq!(wa, wb);
}

#[test]
fn samples_are_seeded_one_hot_rows() {
    let (m, _) = toy_model(ModelVariant::LD_VAE, 4);
    let a = m.sample(50, 9).unwrap();
    assert_eq!((a.rows(), a.cols()), (50, m.width()));
    assert_eq!(a, m.sample(50, 9).unwrap());
    assert_ne!(a, m.sample(50, 10).unwrap());
    assert_one_hot(&m, &a);
    assert_eq!(m.sample(0, 9).unwrap().rows(), 0);

    let mut multi = m.clone();
    multi.config.categorical_sampling = CategoricalSampling::Multinomial;
    let s = multi.sample(50, 9).unwrap();
    assert_one_hot(&multi, &s);
    assert_eq!(s, multi.sample(50, 9).unwrap());
}

#[test]
fn reconstruction_shapes_and_deterministic_mode() {
    let (m, ds) = toy_model(ModelVariant::E_VAE, 4);
    let x = ds.test_x();
    let a = m.reconstruct(&x, 1, true).unwrap();
    assert_eq!((a.rows(), a.cols()), (x.rows(), x.cols()));
    assert_eq!(a, m.reconstruct(&x, 2, true).unwrap());
    assert_one_hot(&m, &a);
    let bad = Matrix::zeros(3, x.cols() + 1);
    assert!(m.reconstruct(&bad, 1, false).is_err());
}

#[test]
fn reconstruction_with_capture_fills_each_placement() {
    let (m, ds) = toy_model(ModelVariant::ELD_VAE, 4);
    let x = ds.test_x();
    let (plain, caps) = m.reconstruct_with_capture(&x, 3, true).unwrap();
    assert_eq!(plain, m.reconstruct(&x, 3, true).unwrap());
    for c in [&caps.enc, &caps.lat, &caps.dec] {
        assert_eq!(c.as_ref().unwrap().len(), 28);
    }
    let shape = caps.lat.as_ref().unwrap().records[0].tensor.shape().to_vec();
    assert_eq!(shape, vec![x.rows(), 64, 4]);
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let (m, _) = toy_model(ModelVariant::EL_VAE, 6);
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = VaeModel::<f32>::load(dir.path()).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.schema_hash, m.schema_hash);
    assert_eq!(back.params.flat_values(), m.params.flat_values());
    assert_eq!(back.sample(20, 1).unwrap(), m.sample(20, 1).unwrap());
}

#[test]
fn trained_reconstruction_beats_prior_samples() {
    let ds = preprocess(&gaussian_mixture(1000, 3), 3).unwrap();
    let mut m = build_model::<f32>(&ds.schema, &ModelConfig::default(), 3).unwrap();
    train(&mut m, &ds, &TrainConfig { epochs: 30, ..Default::default() }, 3).unwrap();
    let x = ds.test_x();
    let rec = m.reconstruct(&x, 1, false).unwrap();
    let prior = m.sample(x.rows(), 1).unwrap();
    let sq = |a: &Matrix| a.data().iter().zip(x.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / x.rows() as f64;
    assert!(sq(&rec) < sq(&prior), "{} vs {}", sq(&rec), sq(&prior));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_non_negative(seed in any::<u64>(), scale in 0.0f64..3.0) {
        let mut r = tabgen::numerics::rng(seed);
        let draw = |r: &mut tabgen::numerics::Rng| -> Vec<f64> {
            (0..12).map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, r)).collect::<Vec<f64>>()
        };
        let mut g = Graph::<f64>::new();
        let mu = g.constant(Tensor::from_f64(&[2, 6], &draw(&mut r)).unwrap());
        let lv = g.constant(Tensor::from_f64(&[2, 6], &draw(&mut r)).unwrap());
        let kl = kl_divergence(&mut g, mu, lv, 2).unwrap();
        prop_assert!(g.value(kl).data()[0] >= 0.0);
    }
}
