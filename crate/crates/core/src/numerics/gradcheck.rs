use rand_distr::{Distribution, StandardNormal};

use super::graph::{Graph, Var};
use super::params::{Bound, ParamStore};
use super::rng::rng;
use super::scalar::Scalar;
use crate::error::{bail, Result};

/// Settings for a directional central-difference check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub probes: usize,
    pub step: f64,
    pub rel_tol: f64,
    /// Directional derivatives smaller than this are compared absolutely.
    pub floor: f64,
    /// Add the normalized analytic gradient to each random direction. In high
    /// dimension this keeps the directional derivative above f32 rounding noise.
    pub align: bool,
}

impl GradCheck {
    pub fn f64_default() -> Self {
        GradCheck { probes: 20, step: 1e-5, rel_tol: 1e-4, floor: 1e-6, align: false }
    }

    pub fn f32_default() -> Self {
        GradCheck { probes: 20, step: 1e-3, rel_tol: 2e-2, floor: 1e-1, align: true }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_error: f64,
    /// `(analytic, numeric)` for the worst probe.
    pub worst: (f64, f64),
}

impl GradCheckReport {
    pub fn passed(&self, cfg: &GradCheck) -> bool {
        self.max_rel_error <= cfg.rel_tol
    }
}

fn loss_value<T: Scalar, F>(params: &ParamStore<T>, loss: &mut F) -> Result<f64>
where
    F: FnMut(&mut Graph<T>, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = params.bind_frozen(&mut g);
    let v = loss(&mut g, &bound)?;
    if g.value(v).len() != 1 {
        bail!(Shape, "loss must be a scalar, got {:?}", g.shape(v));
    }
    Ok(g.value(v).data()[0].f64())
}

fn unit(u: &mut [f64]) {
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    u.iter_mut().for_each(|v| *v /= norm);
}

/// Compare the reverse-mode gradient of `loss` against central differences
/// along `cfg.probes` random unit directions in parameter space. Parameter
/// values are restored before returning.
pub fn check_gradients<T: Scalar, F>(
    params: &mut ParamStore<T>,
    cfg: &GradCheck,
    seed: u64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<T>, &Bound) -> Result<Var>,
{
    if cfg.probes == 0 || cfg.step <= 0.0 {
        bail!(InvalidArgument, "gradient check needs probes > 0 and step > 0");
    }
    let base = params.flat_values();
    params.zero_grads();
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let out = loss(&mut g, &bound)?;
    let mut grads = g.backward(out)?;
    params.accumulate_grads(&bound, &mut grads);
    let analytic_grad: Vec<f64> = params
        .flat_grads()
        .unwrap_or_default()
        .iter()
        .map(|v| v.f64())
        .collect();
    params.zero_grads();

    let gnorm = analytic_grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut r = rng(seed);
    let n = base.len();
    let mut report = GradCheckReport { probes: cfg.probes, max_rel_error: 0.0, worst: (0.0, 0.0) };
    let result = (|| {
        for _ in 0..cfg.probes {
            let mut u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
            unit(&mut u);
            if cfg.align && gnorm > 0.0 {
                u.iter_mut().zip(&analytic_grad).for_each(|(v, g)| *v += g / gnorm);
                unit(&mut u);
            }
            let analytic: f64 = u.iter().zip(&analytic_grad).map(|(a, b)| a * b).sum();
            let shifted = |sign: f64| -> Vec<T> {
                base.iter()
                    .zip(&u)
                    .map(|(w, d)| T::of(w.f64() + sign * cfg.step * d))
                    .collect()
            };
            params.set_flat_values(&shifted(1.0))?;
            let plus = loss_value(params, &mut loss)?;
            params.set_flat_values(&shifted(-1.0))?;
            let minus = loss_value(params, &mut loss)?;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
            if !err.is_finite() || err > report.max_rel_error {
                report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst = (analytic, numeric);
            }
        }
        Ok(())
    })();
    params.set_flat_values(&base)?;
    result.map(|()| report)
}
