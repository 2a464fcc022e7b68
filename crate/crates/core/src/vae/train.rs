use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{batch_size_rule, TrainConfig};
use super::model::{loss_values, schema_hash, LossParts, Pass, VaeModel};
use crate::dataio::{Matrix, PreprocessedDataset};
use crate::error::{bail, Result};
use crate::numerics::{adam_step, derive_seed, rng, AdamState, Graph, Rng, Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub train: LossParts,
    pub val: Option<LossParts>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: String,
    pub epochs: Vec<EpochRecord>,
    pub batch_size: usize,
    pub steps: u64,
    pub seconds: f64,
    /// Set by callers that persist the trained model.
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

pub(crate) fn gaussian_noise<T: Scalar>(r: &mut Rng, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of(StandardNormal.sample(r)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches length")
}

/// Train on the dataset's train split, scoring the validation split each epoch.
pub fn train<T: Scalar>(
    model: &mut VaeModel<T>,
    ds: &PreprocessedDataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    if model.schema_hash != schema_hash(&ds.schema) {
        bail!(Schema, "model was built for a different schema");
    }
    let val = ds.val_x();
    let val = (val.rows() > 0).then_some(val);
    train_on(model, &ds.train_x(), val.as_ref(), cfg, seed, |_| {})
}

/// Mini-batch Adam on the negative ELBO with a seeded shuffle and fresh
/// reparameterization noise on every step.
pub fn train_on<T: Scalar>(
    model: &mut VaeModel<T>,
    train: &Matrix,
    val: Option<&Matrix>,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    if train.cols() != model.width() {
        bail!(Shape, "training matrix has {} columns, model expects {}", train.cols(), model.width());
    }
    if let Some(v) = val {
        if v.cols() != model.width() {
            bail!(Shape, "validation matrix has {} columns, model expects {}", v.cols(), model.width());
        }
    }
    let n = train.rows();
    let batch = cfg.batch_size.unwrap_or_else(|| batch_size_rule(n)).max(1);
    let mut report = TrainReport {
        variant: model.variant().name().to_string(),
        batch_size: batch,
        ..TrainReport::default()
    };
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if n == 0 {
        bail!(InvalidArgument, "no training rows");
    }
    let start = Instant::now();
    let mut shuffle_rng = rng(derive_seed(seed, "train/shuffle"));
    let mut noise_rng = rng(derive_seed(seed, "train/noise"));
    let mut dropout_rng = rng(derive_seed(seed, "train/dropout"));
    let use_dropout = model.config.transformer.dropout > 0.0;
    let lw = model.latent_width();
    let w = train.cols();
    let mut adam = AdamState::new(cfg.adam.clone());
    let mut order: Vec<usize> = (0..n).collect();
    let mut xb = Vec::with_capacity(batch * w);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut acc = LossParts::default();
        for (bi, chunk) in order.chunks(batch).enumerate() {
            xb.clear();
            for &r in chunk {
                xb.extend_from_slice(train.row(r));
            }
            let rows = chunk.len();
            let noise = gaussian_noise::<T>(&mut noise_rng, &[rows, lw]);
            let mut g = Graph::new();
            let p = model.params.bind(&mut g);
            let mut pass = Pass {
                captures: None,
                dropout_rng: use_dropout.then_some(&mut dropout_rng),
            };
            let l = model.loss_on_tape(&mut g, &p, &xb, rows, noise, &mut pass)?;
            let v = loss_values(&g, &l, || format!("epoch {epoch}, batch {bi}"))?;
            let mut grads = g.backward(l.total)?;
            model.params.accumulate_grads(&p, &mut grads);
            adam_step(&mut model.params, &mut adam)?;
            let f = rows as f64 / n as f64;
            acc.total += v.total * f;
            acc.recon += v.recon * f;
            acc.kl += v.kl * f;
        }
        let val_loss = match val {
            Some(v) => Some(evaluate_loss(model, v, derive_seed(seed, &format!("val/{epoch}")))?),
            None => None,
        };
        let rec = EpochRecord {
            epoch,
            train: acc,
            val: val_loss,
        };
        on_epoch(&rec);
        report.epochs.push(rec);
    }
    report.steps = adam.t;
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Batch-mean ELBO terms over all rows of `x`, without updating weights.
pub fn evaluate_loss<T: Scalar>(model: &VaeModel<T>, x: &Matrix, seed: u64) -> Result<LossParts> {
    if x.rows() == 0 {
        bail!(InvalidArgument, "no rows to evaluate");
    }
    if x.cols() != model.width() {
        bail!(Shape, "matrix has {} columns, model expects {}", x.cols(), model.width());
    }
    let mut noise_rng = rng(seed);
    let mut acc = LossParts::default();
    let n = x.rows();
    let chunk = 1024;
    for start in (0..n).step_by(chunk) {
        let rows = chunk.min(n - start);
        let xb = &x.data()[start * x.cols()..(start + rows) * x.cols()];
        let noise = gaussian_noise::<T>(&mut noise_rng, &[rows, model.latent_width()]);
        let mut g = Graph::new();
        let p = model.params.bind_frozen(&mut g);
        let l = model.loss_on_tape(&mut g, &p, xb, rows, noise, &mut Pass::default())?;
        let v = loss_values(&g, &l, || format!("evaluation rows {start}..{}", start + rows))?;
        let f = rows as f64 / n as f64;
        acc.total += v.total * f;
        acc.recon += v.recon * f;
        acc.kl += v.kl * f;
    }
    Ok(acc)
}
