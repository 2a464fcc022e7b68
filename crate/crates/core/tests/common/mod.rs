#![allow(dead_code)]

use tabgen::dataio::{preprocess, Matrix, Schema};
use tabgen::datasets::mixed_six;
use tabgen::numerics::{check_gradients, rng, GradCheck, GradCheckReport, ParamStore, Scalar, Tensor};
use tabgen::vae::{build_model, ModelConfig, ModelVariant, Pass, VaeModel};

use rand_distr::{Distribution, StandardNormal};

pub mod oracles;

/// Schema and the first `rows` preprocessed training rows of the six-feature toy table.
pub fn mixed_six_rows(rows: usize, seed: u64) -> (Schema, Matrix) {
    let ds = preprocess(&mixed_six(200, seed), seed).unwrap();
    let x = ds.train_x().select_rows(&(0..rows).collect::<Vec<_>>());
    (ds.schema, x)
}

pub fn model_for<T: Scalar>(variant: ModelVariant, seed: u64) -> (VaeModel<T>, Matrix) {
    let (schema, x) = mixed_six_rows(6, seed);
    let cfg = ModelConfig { variant, ..ModelConfig::default() };
    (build_model::<T>(&schema, &cfg, seed).unwrap(), x)
}

/// Directional finite-difference check of the ELBO of one variant.
pub fn elbo_gradcheck<T: Scalar>(variant: ModelVariant, check: &GradCheck, seed: u64) -> GradCheckReport {
    let (mut model, x) = model_for::<T>(variant, seed);
    let rows = x.rows();
    let mut r = rng(seed ^ 0x5eed);
    let lw = model.latent_width();
    let noise: Vec<f64> = (0..rows * lw).map(|_| StandardNormal.sample(&mut r)).collect();
    let noise = Tensor::<T>::from_f64(&[rows, lw], &noise).unwrap();
    let mut params = std::mem::replace(&mut model.params, ParamStore::new(0));
    let report = check_gradients(&mut params, check, seed, |g, p| {
        let l = model.loss_on_tape(g, p, x.data(), rows, noise.clone(), &mut Pass::default())?;
        Ok(l.total)
    })
    .unwrap();
    model.params = params;
    report
}

/// Zero every attention and feed-forward weight, leaving unit layer norms, so
/// each stack computes the identity.
pub fn zero_stacks<T: Scalar>(model: &mut VaeModel<T>) {
    for (name, p) in model.params.iter_mut() {
        if name.starts_with("tf_") && (name.contains(".attn.") || name.contains(".ffn.")) {
            p.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Latent means, log-variances and soft decoder outputs for `x` with `z = mu`.
pub fn soft_forward<T: Scalar>(model: &VaeModel<T>, x: &Matrix) -> Vec<f64> {
    let mut g = tabgen::numerics::Graph::new();
    let p = model.params.bind_frozen(&mut g);
    let (mu, lv) = model.encode(&mut g, &p, x.data(), x.rows(), &mut Pass::default()).unwrap();
    let out = model.decode(&mut g, &p, mu, &mut Pass::default()).unwrap();
    let mut v = g.value(mu).to_f64_vec();
    v.extend(g.value(lv).to_f64_vec());
    v.extend(out.to_matrix(&mut g).unwrap());
    v
}

/// Largest absolute gap between a plain VAE and an ELD-VAE with identity
/// stacks built from the same seed, over `rows` toy rows.
pub fn identity_stack_gap(rows: usize, seed: u64) -> f64 {
    let ds = preprocess(&mixed_six(rows * 2, seed), seed).unwrap();
    let x = ds.x.select_rows(&(0..rows).collect::<Vec<_>>());
    let cfg = ModelConfig::default();
    let vae = build_model::<f32>(&ds.schema, &cfg, seed).unwrap();
    let eld_cfg = ModelConfig { variant: ModelVariant::ELD_VAE, ..cfg };
    let mut eld = build_model::<f32>(&ds.schema, &eld_cfg, seed).unwrap();
    zero_stacks(&mut eld);
    let a = soft_forward(&vae, &x);
    let b = soft_forward(&eld, &x);
    assert_eq!(a.len(), b.len());
    a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Zero every attention parameter so each block's attention branch is the
/// zero function.
pub fn zero_attention<T: Scalar>(model: &mut VaeModel<T>) {
    for (name, p) in model.params.iter_mut() {
        if name.starts_with("tf_") && name.contains(".attn.") {
            p.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}
