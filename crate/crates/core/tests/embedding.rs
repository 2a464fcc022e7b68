use proptest::prelude::*;
use tabgen::embedding::{detokenize, init_detokenizer, init_tokenizer, tokenize, Detokenized, FeatureSpec};
use tabgen::numerics::{check_gradients, GradCheck, Graph, ParamStore, Tensor};
use tabgen::vae::{reconstruction_loss, ModelConfig};

fn store(spec: &FeatureSpec, seed: u64) -> ParamStore<f64> {
    let mut s = ParamStore::new(seed);
    init_tokenizer(&mut s, spec, "tok").unwrap();
    init_detokenizer(&mut s, spec, "detok").unwrap();
    s
}

fn row(num: &[f64], cats: &[(usize, usize)]) -> Vec<f64> {
    let mut r = num.to_vec();
    for &(size, hot) in cats {
        r.extend((0..size).map(|k| if k == hot { 1.0 } else { 0.0 }));
    }
    r
}

#[test]
fn default_token_width_is_four() {
    assert_eq!(ModelConfig::default().d, 4);
}

#[test]
fn tokens_follow_feature_order() {
    let spec = FeatureSpec::new(2, vec![3, 2], 4).unwrap();
    let s = store(&spec, 5);
    let mut g = Graph::new();
    let p = s.bind_frozen(&mut g);
    let x = row(&[0.5, -2.0], &[(3, 1), (2, 0)]);
    let e = tokenize(&mut g, &p, "tok", &spec, &x, 1).unwrap();
    let t = g.value(e).data();
    let v = |n: &str| s.get(n).unwrap().data().to_vec();
    for k in 0..4 {
        assert_eq!(t[k], 0.5 * v("tok.num0.w")[k] + v("tok.num0.b")[k]);
        assert_eq!(t[4 + k], -2.0 * v("tok.num1.w")[k] + v("tok.num1.b")[k]);
        assert_eq!(t[8 + k], v("tok.cat0.W")[4 + k] + v("tok.cat0.b")[k]);
        assert_eq!(t[12 + k], v("tok.cat1.W")[k] + v("tok.cat1.b")[k]);
    }
}

#[test]
fn detokenize_rejects_wrong_token_count() {
    let spec = FeatureSpec::new(1, vec![2], 4).unwrap();
    let s = store(&spec, 1);
    let mut g = Graph::new();
    let p = s.bind_frozen(&mut g);
    let e = g.constant(Tensor::zeros(&[3, 3, 4]));
    assert!(detokenize(&mut g, &p, "detok", &spec, e).is_err());
}

#[test]
fn uniform_probabilities_over_four_categories_cost_ln_four() {
    let spec = FeatureSpec::new(0, vec![4], 4).unwrap();
    let mut g = Graph::<f64>::new();
    let rows = 3;
    let logits = g.constant(Tensor::zeros(&[rows, 4]));
    let out = Detokenized { numeric: None, logits: vec![logits] };
    let x: Vec<f64> = (0..rows).flat_map(|r| row(&[], &[(4, r)])).collect();
    let l = reconstruction_loss(&mut g, &spec, &out, &x, rows).unwrap();
    assert!((g.value(l).data()[0] - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn perfect_numeric_reconstruction_costs_nothing() {
    let spec = FeatureSpec::new(2, vec![], 4).unwrap();
    let mut g = Graph::<f64>::new();
    let x = [0.3, -1.0, 2.0, 0.5];
    let num = g.constant(Tensor::from_f64(&[2, 2], &x).unwrap());
    let out = Detokenized { numeric: Some(num), logits: vec![] };
    let l = reconstruction_loss(&mut g, &spec, &out, &x, 2).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);
}

/// Solve the normal equations of `A c = y` for small dense systems.
fn least_squares(a: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let k = a[0].len();
    let mut m = vec![vec![0.0; k + 1]; k];
    for (r, &t) in a.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                m[i][j] += r[i] * r[j];
            }
            m[i][k] += r[i] * t;
        }
    }
    for c in 0..k {
        let piv = (c..k).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, piv);
        for r in 0..k {
            if r != c && m[c][c].abs() > 0.0 {
                let f = m[r][c] / m[c][c];
                for j in c..=k {
                    m[r][j] -= f * m[c][j];
                }
            }
        }
    }
    (0..k).map(|i| if m[i][i] == 0.0 { 0.0 } else { m[i][k] / m[i][i] }).collect()
}

#[test]
fn least_squares_detokenizer_recovers_numeric_feature() {
    let spec = FeatureSpec::new(1, vec![], 4).unwrap();
    let mut s = ParamStore::<f32>::new(3);
    init_tokenizer(&mut s, &spec, "tok").unwrap();
    init_detokenizer(&mut s, &spec, "detok").unwrap();
    let xs: Vec<f64> = (0..100).map(|i| -3.0 + 6.0 * i as f64 / 99.0).collect();
    let mut g = Graph::new();
    let p = s.bind_frozen(&mut g);
    let e = tokenize(&mut g, &p, "tok", &spec, &xs, 100).unwrap();
    let tokens = g.value(e).to_f64_vec();
    // Tokens are an affine image of x, so the normal equations are singular;
    // the solver zeroes the degenerate directions and still fits exactly.
    let design: Vec<Vec<f64>> = tokens.chunks(4).map(|t| t.iter().copied().chain([1.0]).collect()).collect();
    let coef = least_squares(&design, &xs);
    *s.get_mut("detok.num0.w").unwrap() = Tensor::from_f64(&[4], &coef[..4]).unwrap();
    *s.get_mut("detok.num0.b").unwrap() = Tensor::from_f64(&[1], &coef[4..]).unwrap();
    let mut g = Graph::new();
    let p = s.bind_frozen(&mut g);
    let e = g.constant(Tensor::from_f64(&[100, 1, 4], &tokens).unwrap());
    let out = detokenize(&mut g, &p, "detok", &spec, e).unwrap();
    let rec = g.value(out.numeric.unwrap()).to_f64_vec();
    let rms = (rec.iter().zip(&xs).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 100.0).sqrt();
    assert!(rms < 1e-4, "rms {rms}");
}

#[test]
fn detokenize_then_loss_gradients_match_for_tokenizer_params() {
    let spec = FeatureSpec::new(2, vec![3, 2], 4).unwrap();
    let mut s = store(&spec, 8);
    let x: Vec<f64> = [row(&[0.4, -1.2], &[(3, 2), (2, 0)]), row(&[1.1, 0.3], &[(3, 0), (2, 1)])].concat();
    let cfg = GradCheck::f64_default();
    let report = check_gradients(&mut s, &cfg, 2, |g, p| {
        let e = tokenize(g, p, "tok", &spec, &x, 2)?;
        let e = g.silu(e);
        let out = detokenize(g, p, "detok", &spec, e)?;
        reconstruction_loss(g, &spec, &out, &x, 2)
    })
    .unwrap();
    assert!(report.passed(&cfg), "{report:?}");
}

proptest! {
    #[test]
    fn numeric_tokens_are_affine(x in -5.0f64..5.0, y in -5.0f64..5.0, a in 0.0f64..1.0, seed in any::<u64>()) {
        let spec = FeatureSpec::new(1, vec![2], 4).unwrap();
        let s = store(&spec, seed);
        let mut g = Graph::new();
        let p = s.bind_frozen(&mut g);
        let mix = a * x + (1.0 - a) * y;
        let input = [row(&[x], &[(2, 0)]), row(&[y], &[(2, 0)]), row(&[mix], &[(2, 0)])].concat();
        let e = tokenize(&mut g, &p, "tok", &spec, &input, 3).unwrap();
        let t = g.value(e).data();
        for k in 0..4 {
            let lhs = t[16 + k];
            let rhs = a * t[k] + (1.0 - a) * t[8 + k];
            prop_assert!((lhs - rhs).abs() < 1e-6);
        }
    }

    #[test]
    fn category_probabilities_sum_to_one(seed in any::<u64>(), scale in 0.1f64..30.0) {
        let spec = FeatureSpec::new(1, vec![3, 5], 4).unwrap();
        let s = store(&spec, seed);
        let mut g = Graph::<f64>::new();
        let p = s.bind_frozen(&mut g);
        let vals: Vec<f64> = (0..2 * 3 * 4).map(|i| ((i as f64 * 0.37 + seed as f64 % 7.0).sin()) * scale).collect();
        let e = g.constant(Tensor::from_f64(&[2, 3, 4], &vals).unwrap());
        let out = detokenize(&mut g, &p, "detok", &spec, e).unwrap();
        for pr in out.probabilities(&mut g).unwrap() {
            let w = g.shape(pr)[1];
            for r in g.value(pr).data().chunks(w) {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }
}
