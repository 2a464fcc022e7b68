use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::variant::{Component, ModelVariant};
use crate::dataio::{Layout, Schema};
use crate::embedding::{detokenize, init_detokenizer, init_tokenizer, tokenize, Detokenized, FeatureSpec};
use crate::error::{bail, Error, Result};
use crate::numerics::{Bound, Graph, InitScheme, ParamStore, Rng, Scalar, Tensor, Var};
use crate::transformer::{init_stack, stack_forward, CaptureTrace, PassCtx};

/// A VAE over tokenized rows with Transformer stacks at the positions named
/// by its variant. All weights live in `params`.
#[derive(Clone, Debug)]
pub struct VaeModel<T> {
    pub config: ModelConfig,
    pub spec: FeatureSpec,
    pub params: ParamStore<T>,
    pub schema_hash: String,
    pub seed: u64,
}

/// Representations captured per Transformer position during one pass.
#[derive(Clone, Debug, Default)]
pub struct Captures {
    pub enc: Option<CaptureTrace>,
    pub lat: Option<CaptureTrace>,
    pub dec: Option<CaptureTrace>,
}

impl Captures {
    pub fn get(&self, c: Component) -> Option<&CaptureTrace> {
        match c {
            Component::Enc => self.enc.as_ref(),
            Component::Lat => self.lat.as_ref(),
            Component::Dec => self.dec.as_ref(),
        }
    }
}

/// Loss terms on a tape: `total = recon + kl`, each a batch mean.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub kl: Var,
}

/// Loss terms as numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

pub fn schema_hash(schema: &Schema) -> String {
    let json = serde_json::to_vec(schema).expect("schema serializes");
    let digest = Sha256::digest(&json);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Tokenizer, detokenizer, hidden and latent layers, plus the stacks the
/// variant asks for. Parameter seeds depend only on `(seed, name)`, so any
/// sub-component two variants share starts from identical weights.
pub fn build_model<T: Scalar>(schema: &Schema, config: &ModelConfig, seed: u64) -> Result<VaeModel<T>> {
    config.validate()?;
    let layout = Layout::from_schema(schema)?;
    let spec = FeatureSpec::new(layout.num_numerical(), layout.category_sizes(), config.d)?;
    let mut p = ParamStore::new(seed);
    let d = config.d;
    let m = spec.num_tokens() * d;
    let h = config.hidden_tokens * d;
    let l = config.latent_tokens * d;
    init_tokenizer(&mut p, &spec, "tok")?;
    init_detokenizer(&mut p, &spec, "detok")?;
    dense(&mut p, "enc.fc", m, h)?;
    dense(&mut p, "enc.mu", h, l)?;
    dense(&mut p, "enc.logvar", h, l)?;
    dense(&mut p, "dec.fc1", l, h)?;
    dense(&mut p, "dec.fc2", h, m)?;
    for c in Component::ALL {
        if config.variant.has(c) {
            init_stack(&mut p, c.prefix(), d, &config.transformer)?;
        }
    }
    Ok(VaeModel {
        config: config.clone(),
        spec,
        params: p,
        schema_hash: schema_hash(schema),
        seed,
    })
}

fn dense<T: Scalar>(p: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    p.init(&format!("{name}.w"), &[fan_in, fan_out], InitScheme::KaimingUniform { fan_in })?;
    p.init(&format!("{name}.b"), &[fan_out], InitScheme::Zeros)
}

fn linear<T: Scalar>(g: &mut Graph<T>, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, p.get(&format!("{name}.w"))?)?;
    g.add(y, p.get(&format!("{name}.b"))?)
}

/// Per-pass state threaded through encode/decode.
#[derive(Default)]
pub struct Pass<'a> {
    pub captures: Option<&'a mut Captures>,
    pub dropout_rng: Option<&'a mut Rng>,
}

impl<T: Scalar> VaeModel<T> {
    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    /// Width of the latent vector per row, `L * d`.
    pub fn latent_width(&self) -> usize {
        self.config.latent_tokens * self.config.d
    }

    pub fn width(&self) -> usize {
        self.spec.width()
    }

    fn stack(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        c: Component,
        x: Var,
        pass: &mut Pass,
    ) -> Result<Var> {
        if !self.config.variant.has(c) {
            return Ok(x);
        }
        let mut trace = pass.captures.is_some().then(CaptureTrace::new);
        let mut ctx = PassCtx {
            capture: trace.as_mut(),
            dropout_rng: pass.dropout_rng.as_deref_mut(),
        };
        let y = stack_forward(g, p, c.prefix(), &self.config.transformer, x, &mut ctx)?;
        if let (Some(caps), Some(t)) = (pass.captures.as_deref_mut(), trace) {
            match c {
                Component::Enc => caps.enc = Some(t),
                Component::Lat => caps.lat = Some(t),
                Component::Dec => caps.dec = Some(t),
            }
        }
        Ok(y)
    }

    /// Rows in model layout to `(mu, logvar)`, each `[rows, L * d]`.
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: &[f64],
        rows: usize,
        pass: &mut Pass,
    ) -> Result<(Var, Var)> {
        let e = tokenize(g, p, "tok", &self.spec, x, rows)?;
        let e = self.stack(g, p, Component::Enc, e, pass)?;
        let flat = g.flatten(e)?;
        let h = linear(g, p, "enc.fc", flat)?;
        let h = g.silu(h);
        let mu = linear(g, p, "enc.mu", h)?;
        let logvar = linear(g, p, "enc.logvar", h)?;
        Ok((mu, logvar))
    }

    /// `[rows, L * d]` latents to detokenized outputs.
    pub fn decode(&self, g: &mut Graph<T>, p: &Bound, z: Var, pass: &mut Pass) -> Result<Detokenized> {
        let rows = g.shape(z)[0];
        let d = self.config.d;
        let zt = g.reshape(z, &[rows, self.config.latent_tokens, d])?;
        let zt = self.stack(g, p, Component::Lat, zt, pass)?;
        let flat = g.flatten(zt)?;
        let h = linear(g, p, "dec.fc1", flat)?;
        let h = g.silu(h);
        let e = linear(g, p, "dec.fc2", h)?;
        let e = g.reshape(e, &[rows, self.spec.num_tokens(), d])?;
        let e = self.stack(g, p, Component::Dec, e, pass)?;
        detokenize(g, p, "detok", &self.spec, e)
    }

    /// ELBO terms for a batch, with `noise` as the fixed reparameterization draw.
    pub fn loss_on_tape(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: &[f64],
        rows: usize,
        noise: Tensor<T>,
        pass: &mut Pass,
    ) -> Result<LossVars> {
        if rows == 0 {
            bail!(InvalidArgument, "empty batch");
        }
        let (mu, logvar) = self.encode(g, p, x, rows, pass)?;
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let z = g.gaussian_sample(mu, sigma, noise)?;
        let out = self.decode(g, p, z, pass)?;
        let recon = reconstruction_loss(g, &self.spec, &out, x, rows)?;
        let kl = kl_divergence(g, mu, logvar, rows)?;
        let total = g.add(recon, kl)?;
        Ok(LossVars { total, recon, kl })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.params.save(dir)?;
        let meta = ModelMeta {
            config: self.config.clone(),
            variant: self.config.variant,
            spec: self.spec.clone(),
            schema_hash: self.schema_hash.clone(),
            seed: self.seed,
        };
        let path = dir.join("model.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(path.display(), e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display(), e))?;
        let meta: ModelMeta = serde_json::from_str(&text)?;
        let params = ParamStore::load(dir)?;
        let model = VaeModel {
            config: meta.config,
            spec: meta.spec,
            params,
            schema_hash: meta.schema_hash,
            seed: meta.seed,
        };
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    variant: ModelVariant,
    spec: FeatureSpec,
    schema_hash: String,
    seed: u64,
}

/// Per-row sum of squared errors on numericals and cross-entropies on
/// categorical blocks, averaged over rows.
pub fn reconstruction_loss<T: Scalar>(
    g: &mut Graph<T>,
    spec: &FeatureSpec,
    out: &Detokenized,
    x: &[f64],
    rows: usize,
) -> Result<Var> {
    let w = spec.width();
    let mut terms = Vec::new();
    if let Some(num) = out.numeric {
        let mn = spec.num_numerical;
        let target: Vec<f64> = (0..rows).flat_map(|r| x[r * w..r * w + mn].iter().copied()).collect();
        let t = g.constant(Tensor::from_f64(&[rows, mn], &target)?);
        let diff = g.sub(num, t)?;
        let sq = g.square(diff);
        terms.push(g.sum(sq));
    }
    let mut start = spec.num_numerical;
    for (&logits, &c) in out.logits.iter().zip(&spec.category_sizes) {
        let onehot: Vec<f64> = (0..rows)
            .flat_map(|r| x[r * w + start..r * w + start + c].iter().copied())
            .collect();
        let t = g.constant(Tensor::from_f64(&[rows, c], &onehot)?);
        let lp = g.log_softmax(logits)?;
        let picked = g.mul(lp, t)?;
        let s = g.sum(picked);
        terms.push(g.scale(s, -1.0));
        start += c;
    }
    let total = if terms.len() == 1 {
        terms[0]
    } else {
        let all = g.concat(&terms, 0)?;
        g.sum(all)
    };
    Ok(g.scale(total, 1.0 / rows as f64))
}

/// `0.5 * sum(mu^2 + exp(logvar) - 1 - logvar)` per row, averaged over rows.
pub fn kl_divergence<T: Scalar>(g: &mut Graph<T>, mu: Var, logvar: Var, rows: usize) -> Result<Var> {
    let n = g.value(mu).len() as f64;
    let m2 = g.square(mu);
    let ev = g.exp(logvar);
    let a = g.add(m2, ev)?;
    let b = g.sub(a, logvar)?;
    let s = g.sum(b);
    let c = g.constant(Tensor::scalar(T::of(-n)));
    let s = g.add(s, c)?;
    Ok(g.scale(s, 0.5 / rows as f64))
}

pub(crate) fn loss_values<T: Scalar>(g: &Graph<T>, l: &LossVars, context: impl Fn() -> String) -> Result<LossParts> {
    let get = |v: Var| g.value(v).data()[0].f64();
    let parts = LossParts {
        total: get(l.total),
        recon: get(l.recon),
        kl: get(l.kl),
    };
    for (name, v) in [("reconstruction loss", parts.recon), ("kl loss", parts.kl), ("total loss", parts.total)] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: name.to_string(),
                context: context(),
            });
        }
    }
    Ok(parts)
}
