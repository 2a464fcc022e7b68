use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataio::Matrix;
use crate::error::{bail, Result};
use crate::numerics::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum hessian mass in each child of a split.
    pub min_child_weight: f64,
    /// Fraction of rows drawn (without replacement) for each round.
    pub subsample: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            rounds: 500,
            learning_rate: 0.01,
            max_depth: 3,
            lambda: 1.0,
            min_child_weight: 1.0,
            subsample: 1.0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            bail!(InvalidArgument, "classifier needs at least one round");
        }
        if self.learning_rate <= 0.0 || self.lambda < 0.0 || self.min_child_weight < 0.0 {
            bail!(InvalidArgument, "learning_rate must be positive, lambda and min_child_weight non-negative");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            bail!(InvalidArgument, "subsample {} outside (0, 1]", self.subsample);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    /// Rows with `x[feature] < threshold` go left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(w) => return w,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] < threshold { left } else { right };
                }
            }
        }
    }
}

/// Gradient-boosted trees with logistic loss for two classes and softmax
/// loss otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gbt {
    pub n_classes: usize,
    pub n_features: usize,
    /// `rounds x outputs` trees; one output for two classes.
    pub trees: Vec<Vec<Tree>>,
}

impl Gbt {
    fn outputs(&self) -> usize {
        outputs(self.n_classes)
    }

    /// Raw margins, `rows x outputs`.
    pub fn margins(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features {
            bail!(Shape, "classifier expects {} features, got {}", self.n_features, x.cols());
        }
        if !x.all_finite() {
            bail!(Data, "non-finite classifier features");
        }
        let k = self.outputs();
        let mut m = vec![0.0; x.rows() * k];
        for r in 0..x.rows() {
            let row = x.row(r);
            for round in &self.trees {
                for (o, t) in round.iter().enumerate() {
                    m[r * k + o] += t.predict_row(row);
                }
            }
        }
        Ok(m)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let m = self.margins(x)?;
        let k = self.outputs();
        Ok(m.chunks(k)
            .map(|c| {
                if k == 1 {
                    usize::from(c[0] > 0.0)
                } else {
                    crate::dataio::preprocess::argmax(c)
                }
            })
            .collect())
    }
}

fn outputs(n_classes: usize) -> usize {
    if n_classes <= 2 {
        1
    } else {
        n_classes
    }
}

struct Grower<'a> {
    x: &'a Matrix,
    /// Per feature, row indices sorted by value.
    sorted: &'a [Vec<usize>],
    cfg: &'a ClassifierConfig,
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    /// Grow one tree on rows with `active[i]`, level by level.
    fn grow(&self, g: &[f64], h: &[f64], active: &[bool]) -> Tree {
        let n = self.x.rows();
        let lambda = self.cfg.lambda;
        let mut nodes = vec![Node::Leaf(0.0)];
        // Node of each active row at the current level; usize::MAX when inactive.
        let mut at: Vec<usize> = (0..n).map(|i| if active[i] { 0 } else { usize::MAX }).collect();
        let mut frontier = vec![0usize];
        let mut sums = vec![(0.0, 0.0)];
        for i in 0..n {
            if active[i] {
                sums[0].0 += g[i];
                sums[0].1 += h[i];
            }
        }
        for _depth in 0..self.cfg.max_depth {
            // Position of each frontier node in `frontier`.
            let mut slot = vec![usize::MAX; nodes.len()];
            for (s, &nid) in frontier.iter().enumerate() {
                slot[nid] = s;
            }
            let mut best: Vec<Option<Best>> = vec![None; frontier.len()];
            for (f, order) in self.sorted.iter().enumerate() {
                let mut left = vec![(0.0, 0.0); frontier.len()];
                let mut last = vec![f64::NAN; frontier.len()];
                for &i in order {
                    let nid = at[i];
                    if nid == usize::MAX || slot[nid] == usize::MAX {
                        continue;
                    }
                    let s = slot[nid];
                    let v = self.x.get(i, f);
                    let (gl, hl) = left[s];
                    if !last[s].is_nan() && v > last[s] {
                        let (gt, ht) = sums[s];
                        let (gr, hr) = (gt - gl, ht - hl);
                        if hl >= self.cfg.min_child_weight && hr >= self.cfg.min_child_weight {
                            let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - gt * gt / (ht + lambda);
                            if gain > 1e-12 && best[s].is_none_or(|b| gain > b.gain) {
                                best[s] = Some(Best { gain, feature: f, threshold: 0.5 * (last[s] + v) });
                            }
                        }
                    }
                    left[s] = (gl + g[i], hl + h[i]);
                    last[s] = v;
                }
            }
            let mut next = Vec::new();
            let mut next_sums = Vec::new();
            let mut child_of = vec![(usize::MAX, usize::MAX); frontier.len()];
            for (s, &nid) in frontier.iter().enumerate() {
                let Some(b) = best[s] else {
                    let (gt, ht) = sums[s];
                    nodes[nid] = Node::Leaf(-gt / (ht + lambda) * self.cfg.learning_rate);
                    continue;
                };
                let l = nodes.len();
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                nodes[nid] = Node::Split { feature: b.feature, threshold: b.threshold, left: l, right: l + 1 };
                child_of[s] = (l, l + 1);
                next.extend([l, l + 1]);
                next_sums.extend([(0.0, 0.0), (0.0, 0.0)]);
            }
            if next.is_empty() {
                break;
            }
            let mut next_slot = vec![usize::MAX; nodes.len()];
            for (s, &nid) in next.iter().enumerate() {
                next_slot[nid] = s;
            }
            for i in 0..n {
                let nid = at[i];
                if nid == usize::MAX || slot[nid] == usize::MAX {
                    continue;
                }
                let s = slot[nid];
                let Node::Split { feature, threshold, .. } = nodes[nid] else {
                    at[i] = usize::MAX;
                    continue;
                };
                let (l, r) = child_of[s];
                let c = if self.x.get(i, feature) < threshold { l } else { r };
                at[i] = c;
                let cs = next_slot[c];
                next_sums[cs].0 += g[i];
                next_sums[cs].1 += h[i];
            }
            frontier = next;
            sums = next_sums;
        }
        for (s, &nid) in frontier.iter().enumerate() {
            let (gt, ht) = sums[s];
            nodes[nid] = Node::Leaf(-gt / (ht + lambda) * self.cfg.learning_rate);
        }
        Tree { nodes }
    }
}

/// Fit boosted trees to `labels` in `0..n_classes`.
pub fn gbt_train(x: &Matrix, labels: &[usize], n_classes: usize, cfg: &ClassifierConfig, seed: u64) -> Result<Gbt> {
    cfg.validate()?;
    let n = x.rows();
    if labels.len() != n {
        bail!(Shape, "{} labels for {} rows", labels.len(), n);
    }
    if n == 0 {
        bail!(InvalidArgument, "no training rows");
    }
    if n_classes < 2 {
        bail!(InvalidArgument, "need at least two classes, got {}", n_classes);
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= n_classes) {
        bail!(InvalidArgument, "label {} outside 0..{}", l, n_classes);
    }
    if !x.all_finite() {
        bail!(Data, "non-finite classifier features");
    }
    let sorted: Vec<Vec<usize>> = (0..x.cols())
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
            idx
        })
        .collect();
    let grower = Grower { x, sorted: &sorted, cfg };
    let k = outputs(n_classes);
    let mut margins = vec![0.0f64; n * k];
    let mut model = Gbt { n_classes, n_features: x.cols(), trees: Vec::with_capacity(cfg.rounds) };
    let mut r = rng(seed);
    let mut active = vec![true; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut probs = vec![0.0; k];
    let mut grads = vec![(0.0, 0.0); n * k];
    for _ in 0..cfg.rounds {
        if cfg.subsample < 1.0 {
            active.iter_mut().for_each(|a| *a = r.random::<f64>() < cfg.subsample);
        }
        for i in 0..n {
            let m = &margins[i * k..(i + 1) * k];
            if k == 1 {
                let p = 1.0 / (1.0 + (-m[0]).exp());
                let y = (labels[i] == 1) as u8 as f64;
                grads[i] = (p - y, (p * (1.0 - p)).max(1e-16));
            } else {
                let mx = m.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for (p, v) in probs.iter_mut().zip(m) {
                    *p = (v - mx).exp();
                    z += *p;
                }
                for (o, &p) in probs.iter().enumerate() {
                    let p = p / z;
                    let y = (labels[i] == o) as u8 as f64;
                    grads[i * k + o] = (p - y, (2.0 * p * (1.0 - p)).max(1e-16));
                }
            }
        }
        let mut round = Vec::with_capacity(k);
        for o in 0..k {
            for i in 0..n {
                g[i] = grads[i * k + o].0;
                h[i] = grads[i * k + o].1;
            }
            let t = grower.grow(&g, &h, &active);
            for i in 0..n {
                margins[i * k + o] += t.predict_row(x.row(i));
            }
            round.push(t);
        }
        model.trees.push(round);
    }
    Ok(model)
}
