//! Central finite-difference checks of reverse-mode gradients.

use rand::seq::index::sample;
use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Real;

/// Worst coordinate found by a gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: Real,
    pub worst_param: String,
    pub worst_index: usize,
    pub worst_analytic: Real,
    pub worst_numeric: Real,
    pub checked: usize,
}

/// Compares analytic gradients of `loss_fn` with central differences for
/// every parameter coordinate; returns the maximum relative error
/// `|a − fd| / max(|a|, |fd|, 1e-12)`.
pub fn grad_check<F>(params: &mut ParameterSet, loss_fn: F, eps: Real) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParameterSet) -> Result<Var>,
{
    grad_check_inner(
        params,
        loss_fn,
        eps,
        1e-12,
        None::<(&mut rand::rngs::ThreadRng, usize)>,
    )
}

/// Like [`grad_check`] but probes at most `per_tensor` random coordinates
/// of each parameter tensor.
pub fn grad_check_sampled<F, R>(
    params: &mut ParameterSet,
    loss_fn: F,
    eps: Real,
    per_tensor: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParameterSet) -> Result<Var>,
    R: Rng,
{
    grad_check_inner(params, loss_fn, eps, 1e-12, Some((rng, per_tensor)))
}

/// Sampled check whose relative error uses `max(|a|, |fd|, floor)` as the
/// denominator, so coordinates whose gradient is below the finite-difference
/// noise level are judged on absolute error instead.
pub fn grad_check_sampled_with_floor<F, R>(
    params: &mut ParameterSet,
    loss_fn: F,
    eps: Real,
    per_tensor: usize,
    floor: Real,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParameterSet) -> Result<Var>,
    R: Rng,
{
    grad_check_inner(params, loss_fn, eps, floor, Some((rng, per_tensor)))
}

fn grad_check_inner<F, R>(
    params: &mut ParameterSet,
    mut loss_fn: F,
    eps: Real,
    floor: Real,
    mut sampling: Option<(&mut R, usize)>,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &ParameterSet) -> Result<Var>,
    R: Rng,
{
    if !(1e-7..=1e-3).contains(&(eps as f64)) {
        return Err(Error::invalid(format!(
            "eps must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    params.zero_grad();
    let mut g = Graph::new();
    let loss = loss_fn(&mut g, params)?;
    g.backward(loss, params)?;

    let mut eval = |params: &ParameterSet| -> Result<Real> {
        let mut g = Graph::new();
        let l = loss_fn(&mut g, params)?;
        Ok(g.value(l).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let n = params.value(id).len();
        let coords: Vec<usize> = match sampling.as_mut() {
            Some((rng, k)) if *k < n => sample(*rng, n, *k).into_vec(),
            _ => (0..n).collect(),
        };
        for i in coords {
            let orig = params.value(id).data()[i];
            params.value_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(params)?;
            params.value_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(params)?;
            params.value_mut(id).data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let analytic = params.grad(id).data()[i];
            let denom = analytic.abs().max(fd.abs()).max(floor);
            let rel = (analytic - fd).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params.name(id).to_string();
                report.worst_index = i;
                report.worst_analytic = analytic;
                report.worst_numeric = fd;
            }
        }
    }
    params.zero_grad();
    Ok(report)
}
