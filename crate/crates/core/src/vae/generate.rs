use rand::Rng as _;

use super::config::CategoricalSampling;
use super::model::{Captures, Pass, VaeModel};
use super::train::gaussian_noise;
use crate::dataio::Matrix;
use crate::error::{bail, Result};
use crate::numerics::{rng, Graph, Rng, Scalar, Tensor};

const CHUNK: usize = 1024;

impl<T: Scalar> VaeModel<T> {
    /// Draw `n` rows by decoding `z ~ N(0, I)`. Categorical blocks come out
    /// one-hot.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix> {
        let w = self.width();
        let mut out = Vec::with_capacity(n * w);
        let mut r = rng(seed);
        let mut pick = rng(seed ^ 0x5a5a_5a5a);
        for start in (0..n).step_by(CHUNK) {
            let rows = CHUNK.min(n - start);
            let z = gaussian_noise::<T>(&mut r, &[rows, self.latent_width()]);
            let mut g = Graph::new();
            let p = self.params.bind_frozen(&mut g);
            let zv = g.constant(z);
            let dec = self.decode(&mut g, &p, zv, &mut Pass::default())?;
            let soft = dec.to_matrix(&mut g)?;
            out.extend(self.harden(&soft, rows, &mut pick));
        }
        Matrix::new(n, w, out)
    }

    /// Encode, draw `z = mu + sigma * eps` with seeded `eps` (or `z = mu`
    /// when `deterministic`), decode and harden.
    pub fn reconstruct(&self, x: &Matrix, seed: u64, deterministic: bool) -> Result<Matrix> {
        self.reconstruct_inner(x, seed, deterministic, None)
    }

    /// As [`reconstruct`](Self::reconstruct) in a single pass that records
    /// every Transformer representation.
    pub fn reconstruct_with_capture(
        &self,
        x: &Matrix,
        seed: u64,
        deterministic: bool,
    ) -> Result<(Matrix, Captures)> {
        let mut caps = Captures::default();
        let m = self.reconstruct_inner(x, seed, deterministic, Some(&mut caps))?;
        Ok((m, caps))
    }

    fn reconstruct_inner(
        &self,
        x: &Matrix,
        seed: u64,
        deterministic: bool,
        mut caps: Option<&mut Captures>,
    ) -> Result<Matrix> {
        let w = self.width();
        if x.cols() != w {
            bail!(Shape, "matrix has {} columns, model expects {}", x.cols(), w);
        }
        let n = x.rows();
        let mut out = Vec::with_capacity(n * w);
        let mut r = rng(seed);
        let mut pick = rng(seed ^ 0x5a5a_5a5a);
        // Captures need every row in one pass.
        let chunk = if caps.is_some() { n.max(1) } else { CHUNK };
        for start in (0..n).step_by(chunk) {
            let rows = chunk.min(n - start);
            let xb = &x.data()[start * w..(start + rows) * w];
            let mut g = Graph::new();
            let p = self.params.bind_frozen(&mut g);
            let mut pass = Pass {
                captures: caps.as_deref_mut(),
                dropout_rng: None,
            };
            let (mu, logvar) = self.encode(&mut g, &p, xb, rows, &mut pass)?;
            let z = if deterministic {
                mu
            } else {
                let half = g.scale(logvar, 0.5);
                let sigma = g.exp(half);
                let eps = gaussian_noise::<T>(&mut r, &[rows, self.latent_width()]);
                g.gaussian_sample(mu, sigma, eps)?
            };
            let dec = self.decode(&mut g, &p, z, &mut pass)?;
            let soft = dec.to_matrix(&mut g)?;
            out.extend(self.harden(&soft, rows, &mut pick));
        }
        Matrix::new(n, w, out)
    }

    /// Latent means for `x`, `[rows, L * d]`.
    pub fn encode_mean(&self, x: &Matrix) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let (mu, _) = self.encode(&mut g, &p, x.data(), x.rows(), &mut Pass::default())?;
        Ok(g.value(mu).clone())
    }

    fn harden(&self, soft: &[f64], rows: usize, r: &mut Rng) -> Vec<f64> {
        let w = self.width();
        let mut out = soft.to_vec();
        for row in 0..rows {
            let mut start = self.spec.num_numerical;
            for &c in &self.spec.category_sizes {
                let block = &mut out[row * w + start..row * w + start + c];
                let k = match self.config.categorical_sampling {
                    CategoricalSampling::Argmax => crate::dataio::preprocess::argmax(block),
                    CategoricalSampling::Multinomial => {
                        let u: f64 = r.random();
                        let mut acc = 0.0;
                        let mut k = c - 1;
                        for (i, &p) in block.iter().enumerate() {
                            acc += p;
                            if u < acc {
                                k = i;
                                break;
                            }
                        }
                        k
                    }
                };
                block.fill(0.0);
                block[k] = 1.0;
                start += c;
            }
        }
        out
    }
}
