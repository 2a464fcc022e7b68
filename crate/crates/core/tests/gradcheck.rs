mod common;

use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use tabgen::numerics::{
    check_gradients, rng, Bound, GradCheck, Graph, InitScheme, ParamStore, Scalar, Tensor, Var,
};
use tabgen::vae::ModelVariant;
use tabgen::Result;

fn randn(shape: &[usize], seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let n: usize = shape.iter().product();
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

fn store<T: Scalar>(shapes: &[(&str, &[usize])], seed: u64) -> ParamStore<T> {
    let mut p = ParamStore::new(seed);
    for (name, shape) in shapes {
        p.init(name, shape, InitScheme::Normal { std: 1.0 }).unwrap();
    }
    p
}

/// Reduce `y` to a scalar with fixed random weights so no direction is trivially flat.
fn weigh<T: Scalar>(g: &mut Graph<T>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = g.constant(Tensor::from_f64(&shape, &randn(&shape, seed))?);
    let m = g.mul(y, w)?;
    Ok(g.sum(m))
}

fn check<T: Scalar, F>(shapes: &[(&str, &[usize])], cfg: &GradCheck, f: F)
where
    F: Fn(&mut Graph<T>, &Bound) -> Result<Var>,
{
    let mut p = store::<T>(shapes, 11);
    let report = check_gradients(&mut p, cfg, 3, |g, b| {
        let y = f(g, b)?;
        weigh(g, y, 99)
    })
    .unwrap();
    assert!(report.passed(cfg), "max rel error {} worst {:?}", report.max_rel_error, report.worst);
}

fn each_op<T: Scalar>(cfg: &GradCheck) {
    let ab: &[(&str, &[usize])] = &[("a", &[3, 4]), ("b", &[3, 4])];
    check::<T, _>(ab, cfg, |g, p| g.add(p.get("a")?, p.get("b")?));
    check::<T, _>(ab, cfg, |g, p| g.sub(p.get("a")?, p.get("b")?));
    check::<T, _>(ab, cfg, |g, p| g.mul(p.get("a")?, p.get("b")?));
    let bc: &[(&str, &[usize])] = &[("a", &[2, 3, 4]), ("b", &[4])];
    check::<T, _>(bc, cfg, |g, p| g.add(p.get("a")?, p.get("b")?));
    check::<T, _>(bc, cfg, |g, p| g.mul(p.get("a")?, p.get("b")?));
    check::<T, _>(&[("b", &[4])], cfg, |g, p| g.broadcast_to(p.get("b")?, &[3, 4]));
    check::<T, _>(&[("a", &[2, 3, 4]), ("w", &[4, 5])], cfg, |g, p| {
        g.matmul(p.get("a")?, p.get("w")?)
    });
    for (ta, tb) in [(false, false), (false, true), (true, false), (true, true)] {
        let sa: &[usize] = if ta { &[2, 4, 3] } else { &[2, 3, 4] };
        let sb: &[usize] = if tb { &[2, 5, 4] } else { &[2, 4, 5] };
        check::<T, _>(&[("a", sa), ("b", sb)], cfg, |g, p| g.bmm(p.get("a")?, p.get("b")?, ta, tb));
    }
    check::<T, _>(&[("a", &[2, 3, 4])], cfg, |g, p| {
        let r = g.reshape(p.get("a")?, &[6, 4])?;
        g.flatten(r)
    });
    check::<T, _>(&[("a", &[2, 3]), ("b", &[2, 2])], cfg, |g, p| g.concat(&[p.get("a")?, p.get("b")?], 1));
    check::<T, _>(&[("a", &[3, 5])], cfg, |g, p| g.slice(p.get("a")?, 1, 1, 3));
    check::<T, _>(&[("a", &[3, 5])], cfg, |g, p| g.softmax(p.get("a")?));
    check::<T, _>(&[("a", &[3, 5])], cfg, |g, p| g.log_softmax(p.get("a")?));
    check::<T, _>(&[("x", &[2, 3, 4]), ("g", &[4]), ("b", &[4])], cfg, |g, p| {
        g.layer_norm(p.get("x")?, p.get("g")?, p.get("b")?)
    });
    check::<T, _>(&[("a", &[3, 4])], cfg, |g, p| Ok(g.silu(p.get("a")?)));
    check::<T, _>(&[("a", &[3, 4])], cfg, |g, p| Ok(g.exp(p.get("a")?)));
    check::<T, _>(&[("a", &[3, 4])], cfg, |g, p| {
        let e = g.exp(p.get("a")?);
        Ok(g.log(e))
    });
    check::<T, _>(&[("a", &[3, 4])], cfg, |g, p| Ok(g.square(p.get("a")?)));
    check::<T, _>(&[("a", &[3, 4])], cfg, |g, p| Ok(g.scale(p.get("a")?, -2.5)));
    check::<T, _>(&[("a", &[3, 4])], cfg, |g, p| {
        let s = g.square(p.get("a")?);
        Ok(g.mean(s))
    });
    check::<T, _>(&[("a", &[2, 3, 4])], cfg, |g, p| g.sum_last(p.get("a")?));
    check::<T, _>(&[("t", &[5, 3])], cfg, |g, p| g.gather(p.get("t")?, &[4, 0, 4, 2]));
    check::<T, _>(&[("m", &[3, 4]), ("s", &[3, 4])], cfg, |g, p| {
        let noise = Tensor::from_f64(&[3, 4], &randn(&[3, 4], 5))?;
        let s = g.exp(p.get("s")?);
        g.gaussian_sample(p.get("m")?, s, noise)
    });
}

#[test]
fn every_op_matches_finite_differences_in_f64() {
    each_op::<f64>(&GradCheck::f64_default());
}

#[test]
fn every_op_matches_finite_differences_in_f32() {
    each_op::<f32>(&GradCheck::f32_default());
}

#[test]
fn silu_slope_at_zero_is_one_half() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.silu(x);
    let grads = g.backward(y).unwrap();
    let analytic = grads.get(x).unwrap().data()[0];
    let h = 1e-4;
    let silu = |v: f64| v / (1.0 + (-v).exp());
    let numeric = (silu(h) - silu(-h)) / (2.0 * h);
    assert!((analytic - 0.5).abs() < 1e-12);
    assert!((analytic - numeric).abs() < 1e-8);
}

#[test]
fn gaussian_sample_is_affine_with_identity_mu_gradient() {
    let mut g = Graph::<f64>::new();
    let mu = g.param(Tensor::from_f64(&[4], &[0.5, -1.0, 2.0, 0.0]).unwrap());
    let sigma = g.param(Tensor::from_f64(&[4], &[1.0, 0.5, 2.0, 3.0]).unwrap());
    let eps = [0.1, -0.2, 0.3, 1.5];
    let z = g.gaussian_sample(mu, sigma, Tensor::from_f64(&[4], &eps).unwrap()).unwrap();
    let expected = [0.6, -1.1, 2.6, 4.5];
    for (a, b) in g.value(z).data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
    let s = g.sum(z);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(mu).unwrap().data(), &[1.0; 4]);
    assert_eq!(grads.get(sigma).unwrap().data(), &eps);
}

#[test]
fn elbo_gradients_match_for_every_variant() {
    let cfg = GradCheck::f64_default();
    for v in ModelVariant::ALL {
        let report = common::elbo_gradcheck::<f64>(v, &cfg, 21);
        assert!(report.probes >= 20);
        assert!(report.passed(&cfg), "{v}: {} {:?}", report.max_rel_error, report.worst);
    }
}

#[test]
fn elbo_gradients_hold_in_f32() {
    // Encoder-side stacks start with a KL near 1e12 on this table, beyond what
    // f32 differences at h = 1e-3 can resolve, so those are left to the f64 check.
    let cfg = GradCheck::f32_default();
    for v in [ModelVariant::VAE, ModelVariant::LD_VAE, ModelVariant::D_VAE] {
        let report = common::elbo_gradcheck::<f32>(v, &cfg, 4);
        assert!(report.passed(&cfg), "{v}: {} {:?}", report.max_rel_error, report.worst);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..9, shift in -50.0f64..50.0) {
        let mut g = Graph::<f32>::new();
        let vals: Vec<f64> = randn(&[rows, cols], seed).iter().map(|v| v * 10.0 + shift).collect();
        let x = g.constant(Tensor::from_f64(&[rows, cols], &vals).unwrap());
        let s = g.softmax(x).unwrap();
        for r in 0..rows {
            let row = &g.value(s).data()[r * cols..(r + 1) * cols];
            let total: f64 = row.iter().map(|v| *v as f64).sum();
            prop_assert!((total - 1.0).abs() < 1e-5);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn layer_norm_has_zero_mean_unit_variance(seed in any::<u64>(), scale in 0.1f64..100.0) {
        let d = 8;
        let mut g = Graph::<f64>::new();
        let vals: Vec<f64> = randn(&[5, d], seed).iter().map(|v| v * scale + 3.0).collect();
        let x = g.constant(Tensor::from_f64(&[5, d], &vals).unwrap());
        let gain = g.constant(Tensor::full(&[d], 1.0));
        let bias = g.constant(Tensor::zeros(&[d]));
        let y = g.layer_norm(x, gain, bias).unwrap();
        for r in 0..5 {
            let row = &g.value(y).data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let raw = &vals[r * d..(r + 1) * d];
            let rm = raw.iter().sum::<f64>() / d as f64;
            let rv = raw.iter().map(|v| (v - rm).powi(2)).sum::<f64>() / d as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - rv / (rv + 1e-5)).abs() < 1e-9);
        }
    }

    #[test]
    fn matmul_gradient_is_exact_for_random_shapes(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let seed2 = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut p = store::<f64>(&[("a", &[m, k]), ("b", &[k, n])], seed2);
        let cfg = GradCheck::f64_default();
        let report = check_gradients(&mut p, &cfg, seed, |g, b| {
            let y = g.matmul(b.get("a")?, b.get("b")?)?;
            weigh(g, y, seed2)
        }).unwrap();
        prop_assert!(report.passed(&cfg));
    }
}
