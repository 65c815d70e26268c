//! Central-difference gradient checking in `f64`.

use super::tape::{Grads, ParamId, ParamStore, Tape, Var};
use super::TensorError;

/// Worst per-parameter relative error between analytic and numeric
/// gradients. The error of a parameter tensor is
/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)` over its elements.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    /// Element of `worst_param` with the largest absolute discrepancy.
    pub worst_index: usize,
    /// Number of scalar elements compared.
    pub checked: usize,
    /// Elements whose perturbation crossed a ReLU or max-pool kink; the
    /// function is not differentiable across the stencil there, so they are
    /// left out of the comparison.
    pub kinks: usize,
}

pub const DEFAULT_STEP: f64 = 1e-5;

fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / norm(a).max(norm(n)).max(1e-8)
}

fn eval<F, E>(params: &ParamStore<f64>, f: &F) -> Result<(f64, u64), E>
where
    F: Fn(&mut Tape<f64>) -> Result<Var, E>,
{
    let mut tape = Tape::new(params);
    let out = f(&mut tape)?;
    Ok((tape.scalar(out), tape.branch_signature()))
}

/// Gradients of the scalar built by `f`, computed by the tape.
pub fn analytic_gradients<F, E>(params: &ParamStore<f64>, f: &F) -> Result<Grads<f64>, E>
where
    F: Fn(&mut Tape<f64>) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new(params);
    let out = f(&mut tape)?;
    let mut grads = Grads::zeros_like(params);
    tape.backward(out, &mut grads)?;
    Ok(grads)
}

/// Compares the tape's gradients of `f` against central differences over
/// every parameter element.
pub fn grad_check<F, E>(params: &mut ParamStore<f64>, f: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape<f64>) -> Result<Var, E>,
    E: From<TensorError>,
{
    let analytic = analytic_gradients(params, &f)?;
    if let Some(id) = params.ids().find(|&id| !analytic.get(id).all_finite()) {
        return Err(TensorError::NonFiniteGradient(params.name(id).to_string()).into());
    }
    compare_gradients(params, f, &analytic, DEFAULT_STEP)
}

/// Compares supplied `analytic` gradients against central differences of
/// `f` with perturbation `step`.
pub fn compare_gradients<F, E>(
    params: &mut ParamStore<f64>,
    f: F,
    analytic: &Grads<f64>,
    step: f64,
) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape<f64>) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        checked: 0,
        kinks: 0,
    };
    let (_, base) = eval(params, &f)?;
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let a_all = analytic.get(id).data();
        let (mut a, mut numeric) = (Vec::new(), Vec::new());
        let mut index = Vec::new();
        for k in 0..params.get(id).len() {
            let orig = params.get(id).data()[k];
            params.get_mut(id).data_mut()[k] = orig + step;
            let up = eval(params, &f);
            params.get_mut(id).data_mut()[k] = orig - step;
            let down = eval(params, &f);
            params.get_mut(id).data_mut()[k] = orig;
            let ((up, su), (down, sd)) = (up?, down?);
            let n = (up - down) / (2.0 * step);
            if !n.is_finite() {
                return Err(TensorError::NonFiniteGradient(params.name(id).to_string()).into());
            }
            if su != base || sd != base {
                report.kinks += 1;
                continue;
            }
            a.push(a_all[k]);
            numeric.push(n);
            index.push(k);
        }
        let err = relative_error(&a, &numeric);
        report.checked += numeric.len();
        if err > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = err;
            report.worst_param = params.name(id).to_string();
            report.worst_index = a
                .iter()
                .zip(&numeric)
                .map(|(x, y)| (x - y).abs())
                .enumerate()
                .fold(
                    (0, -1.0),
                    |best, (i, d)| if d > best.1 { (index[i], d) } else { best },
                )
                .0;
        }
    }
    Ok(report)
}
