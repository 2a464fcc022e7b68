//! Feature tokenizer and detokenizer: rows in model-matrix layout to and from
//! `[batch, M, d]` token tensors, one token per column in layout order.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::numerics::{Bound, Graph, InitScheme, ParamStore, Scalar, Tensor, Var};

/// Feature shapes shared by the tokenizer and detokenizer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub num_numerical: usize,
    pub category_sizes: Vec<usize>,
    pub d: usize,
}

impl FeatureSpec {
    pub fn new(num_numerical: usize, category_sizes: Vec<usize>, d: usize) -> Result<Self> {
        if d == 0 {
            bail!(InvalidArgument, "token width must be at least 1");
        }
        if num_numerical + category_sizes.len() == 0 {
            bail!(InvalidArgument, "no features");
        }
        if let Some(c) = category_sizes.iter().find(|&&c| c < 2) {
            bail!(InvalidArgument, "categorical feature with {} categories", c);
        }
        Ok(FeatureSpec {
            num_numerical,
            category_sizes,
            d,
        })
    }

    /// Token count `M`.
    pub fn num_tokens(&self) -> usize {
        self.num_numerical + self.category_sizes.len()
    }

    /// Row width `M'` of the model matrix.
    pub fn width(&self) -> usize {
        self.num_numerical + self.category_sizes.iter().sum::<usize>()
    }

    fn block_starts(&self) -> Vec<usize> {
        let mut s = self.num_numerical;
        self.category_sizes
            .iter()
            .map(|&c| {
                let start = s;
                s += c;
                start
            })
            .collect()
    }
}

/// Register tokenizer parameters under `prefix`.
pub fn init_tokenizer<T: Scalar>(store: &mut ParamStore<T>, spec: &FeatureSpec, prefix: &str) -> Result<()> {
    let d = spec.d;
    for i in 0..spec.num_numerical {
        store.init(&format!("{prefix}.num{i}.w"), &[d], InitScheme::KaimingUniform { fan_in: 1 })?;
        store.init(&format!("{prefix}.num{i}.b"), &[d], InitScheme::Normal { std: 0.01 })?;
    }
    for (j, &c) in spec.category_sizes.iter().enumerate() {
        store.init(&format!("{prefix}.cat{j}.W"), &[c, d], InitScheme::Normal { std: 0.01 })?;
        store.init(&format!("{prefix}.cat{j}.b"), &[d], InitScheme::Normal { std: 0.01 })?;
    }
    Ok(())
}

/// Register detokenizer parameters under `prefix`.
pub fn init_detokenizer<T: Scalar>(store: &mut ParamStore<T>, spec: &FeatureSpec, prefix: &str) -> Result<()> {
    let d = spec.d;
    for i in 0..spec.num_numerical {
        store.init(&format!("{prefix}.num{i}.w"), &[d], InitScheme::KaimingUniform { fan_in: d })?;
        store.init(&format!("{prefix}.num{i}.b"), &[1], InitScheme::Zeros)?;
    }
    for (j, &c) in spec.category_sizes.iter().enumerate() {
        store.init(&format!("{prefix}.cat{j}.W"), &[d, c], InitScheme::KaimingUniform { fan_in: d })?;
        store.init(&format!("{prefix}.cat{j}.b"), &[c], InitScheme::Zeros)?;
    }
    Ok(())
}

/// Category index per categorical block for each row, validating that every
/// block is exactly one-hot.
pub fn category_indices(x: &[f64], rows: usize, spec: &FeatureSpec) -> Result<Vec<Vec<usize>>> {
    let w = spec.width();
    if x.len() != rows * w {
        bail!(Shape, "batch of {} values for {} rows of width {}", x.len(), rows, w);
    }
    let starts = spec.block_starts();
    let mut out = vec![Vec::with_capacity(rows); spec.category_sizes.len()];
    for r in 0..rows {
        let row = &x[r * w..(r + 1) * w];
        for (j, (&s, &c)) in starts.iter().zip(&spec.category_sizes).enumerate() {
            let block = &row[s..s + c];
            let hot: Vec<usize> = (0..c).filter(|&k| block[k] != 0.0).collect();
            if hot.len() != 1 || block[hot[0]] != 1.0 {
                bail!(Data, "row {}: categorical block {} is not one-hot: {:?}", r, j, block);
            }
            out[j].push(hot[0]);
        }
    }
    Ok(out)
}

/// Map a `[rows, M']` batch to `[rows, M, d]` tokens. Numerical token
/// `x * w + b`; categorical token `W[c] + b` for the selected category `c`.
pub fn tokenize<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    spec: &FeatureSpec,
    x: &[f64],
    rows: usize,
) -> Result<Var> {
    let cats = category_indices(x, rows, spec)?;
    let w = spec.width();
    let d = spec.d;
    let mut parts = Vec::with_capacity(2);
    if spec.num_numerical > 0 {
        let mn = spec.num_numerical;
        let vals: Vec<f64> = (0..rows)
            .flat_map(|r| x[r * w..r * w + mn].iter().copied())
            .collect();
        let xv = g.constant(Tensor::from_f64(&[rows, mn, 1], &vals)?);
        let ws: Vec<Var> = (0..mn)
            .map(|i| p.get(&format!("{prefix}.num{i}.w")))
            .collect::<Result<_>>()?;
        let bs: Vec<Var> = (0..mn)
            .map(|i| p.get(&format!("{prefix}.num{i}.b")))
            .collect::<Result<_>>()?;
        let wm = stack_vectors(g, &ws, d)?;
        let bm = stack_vectors(g, &bs, d)?;
        let t = g.mul(xv, wm)?;
        parts.push(g.add(t, bm)?);
    }
    if !spec.category_sizes.is_empty() {
        let mc = spec.category_sizes.len();
        let tables: Vec<Var> = (0..mc)
            .map(|j| p.get(&format!("{prefix}.cat{j}.W")))
            .collect::<Result<_>>()?;
        let table = if mc == 1 { tables[0] } else { g.concat(&tables, 0)? };
        let mut offsets = Vec::with_capacity(mc);
        let mut off = 0;
        for &c in &spec.category_sizes {
            offsets.push(off);
            off += c;
        }
        let idx: Vec<usize> = (0..rows)
            .flat_map(|r| (0..mc).map(move |j| (r, j)))
            .map(|(r, j)| offsets[j] + cats[j][r])
            .collect();
        let looked = g.gather(table, &idx)?;
        let looked = g.reshape(looked, &[rows, mc, d])?;
        let bs: Vec<Var> = (0..mc)
            .map(|j| p.get(&format!("{prefix}.cat{j}.b")))
            .collect::<Result<_>>()?;
        let bm = stack_vectors(g, &bs, d)?;
        parts.push(g.add(looked, bm)?);
    }
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        g.concat(&parts, 1)
    }
}

/// `[d]` vectors stacked into an `[n, d]` matrix.
fn stack_vectors<T: Scalar>(g: &mut Graph<T>, vs: &[Var], d: usize) -> Result<Var> {
    let cat = if vs.len() == 1 { vs[0] } else { g.concat(vs, 0)? };
    g.reshape(cat, &[vs.len(), d])
}

/// Output of [`detokenize`].
pub struct Detokenized {
    /// `[rows, M_n]` numerical reconstructions, absent without numericals.
    pub numeric: Option<Var>,
    /// One `[rows, |C_j|]` logit tensor per categorical feature.
    pub logits: Vec<Var>,
}

impl Detokenized {
    /// Per-feature probability vectors (softmax of the logits).
    pub fn probabilities<T: Scalar>(&self, g: &mut Graph<T>) -> Result<Vec<Var>> {
        self.logits.iter().map(|&l| g.softmax(l)).collect()
    }

    /// Assemble a `[rows, M']` matrix of numeric outputs and category probabilities.
    pub fn to_matrix<T: Scalar>(&self, g: &mut Graph<T>) -> Result<Vec<f64>> {
        let probs = self.probabilities(g)?;
        let parts: Vec<&Tensor<T>> = self
            .numeric
            .iter()
            .chain(&probs)
            .map(|&v| g.value(v))
            .collect();
        let rows = parts[0].shape()[0];
        let widths: Vec<usize> = parts.iter().map(|t| t.shape()[1]).collect();
        let mut out = Vec::with_capacity(rows * widths.iter().sum::<usize>());
        for r in 0..rows {
            for (t, &w) in parts.iter().zip(&widths) {
                out.extend(t.data()[r * w..(r + 1) * w].iter().map(|v| v.f64()));
            }
        }
        Ok(out)
    }
}

/// Project `[rows, M, d]` tokens back to feature space: numerical
/// `e . w + b` (scalar per feature), categorical logits `e W + b`.
pub fn detokenize<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    spec: &FeatureSpec,
    e: Var,
) -> Result<Detokenized> {
    let s = g.shape(e).to_vec();
    if s.len() != 3 || s[1] != spec.num_tokens() || s[2] != spec.d {
        bail!(Shape, "detokenize expects [rows, {}, {}], got {:?}", spec.num_tokens(), spec.d, s);
    }
    let rows = s[0];
    let d = spec.d;
    let mn = spec.num_numerical;
    let numeric = if mn > 0 {
        let tokens = g.slice(e, 1, 0, mn)?;
        let ws: Vec<Var> = (0..mn)
            .map(|i| p.get(&format!("{prefix}.num{i}.w")))
            .collect::<Result<_>>()?;
        let bs: Vec<Var> = (0..mn)
            .map(|i| p.get(&format!("{prefix}.num{i}.b")))
            .collect::<Result<_>>()?;
        let wm = stack_vectors(g, &ws, d)?;
        let bv = if mn == 1 { bs[0] } else { g.concat(&bs, 0)? };
        let prod = g.mul(tokens, wm)?;
        let dot = g.sum_last(prod)?;
        let dot = g.reshape(dot, &[rows, mn])?;
        Some(g.add(dot, bv)?)
    } else {
        None
    };
    let mut logits = Vec::with_capacity(spec.category_sizes.len());
    for j in 0..spec.category_sizes.len() {
        let tok = g.slice(e, 1, mn + j, 1)?;
        let tok = g.reshape(tok, &[rows, d])?;
        let wj = p.get(&format!("{prefix}.cat{j}.W"))?;
        let bj = p.get(&format!("{prefix}.cat{j}.b"))?;
        let l = g.matmul(tok, wj)?;
        logits.push(g.add(l, bj)?);
    }
    Ok(Detokenized { numeric, logits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (FeatureSpec, ParamStore<f64>) {
        let spec = FeatureSpec::new(2, vec![3, 2], 4).unwrap();
        let mut s = ParamStore::new(11);
        init_tokenizer(&mut s, &spec, "tok").unwrap();
        init_detokenizer(&mut s, &spec, "detok").unwrap();
        (spec, s)
    }

    #[test]
    fn zero_numeric_gives_bias_and_lookup_adds_bias() {
        let (spec, s) = setup();
        let mut g = Graph::new();
        let p = s.bind(&mut g);
        let x = [0.0, 1.5, 0.0, 0.0, 1.0, 1.0, 0.0];
        let e = tokenize(&mut g, &p, "tok", &spec, &x, 1).unwrap();
        let t = g.value(e);
        assert_eq!(t.shape(), &[1, 4, 4]);
        assert_eq!(&t.data()[0..4], s.get("tok.num0.b").unwrap().data());
        let table = s.get("tok.cat0.W").unwrap();
        let b = s.get("tok.cat0.b").unwrap();
        for k in 0..4 {
            assert_eq!(t.data()[8 + k], table.data()[2 * 4 + k] + b.data()[k]);
        }
    }

    #[test]
    fn non_one_hot_rejected() {
        let (spec, s) = setup();
        let mut g = Graph::new();
        let p = s.bind(&mut g);
        let x = [0.0, 1.5, 0.2, 0.7, 0.1, 1.0, 0.0];
        assert!(tokenize(&mut g, &p, "tok", &spec, &x, 1).is_err());
    }

    #[test]
    fn zero_tokens_detokenize_to_biases() {
        let (spec, s) = setup();
        let mut g = Graph::new();
        let p = s.bind(&mut g);
        let e = g.constant(Tensor::zeros(&[2, 4, 4]));
        let out = detokenize(&mut g, &p, "detok", &spec, e).unwrap();
        let m = out.to_matrix(&mut g).unwrap();
        assert_eq!(m.len(), 2 * 7);
        assert_eq!(m[0], 0.0);
        assert!((m[2] - 1.0 / 3.0).abs() < 1e-12);
        assert!((m[5] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(FeatureSpec::new(1, vec![], 0).is_err());
        assert!(FeatureSpec::new(1, vec![1], 4).is_err());
    }
}
