use super::param::Module;
use super::tape::{Tape, Var};
use crate::error::Result;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to round-off are compared absolutely.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-5,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
    /// Set when the loss itself could not be evaluated to a finite value.
    pub failure: Option<String>,
}

impl GradCheckReport {
    fn failed(msg: String) -> Self {
        Self {
            params: Vec::new(),
            max_rel_error: f64::INFINITY,
            passed: false,
            failure: Some(msg),
        }
    }
}

fn eval_loss<T, M, F>(model: &M, loss_fn: &F) -> Result<T>
where
    T: Real,
    M: Module<T>,
    F: for<'t> Fn(&M, &'t Tape<T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let loss = loss_fn(model, &tape)?;
    Ok(loss.item())
}

/// Compares backpropagated gradients of `loss_fn` against central
/// differences for every value of every parameter of `model`.
///
/// `loss_fn` must be deterministic given the model. Parameter values are
/// restored before returning.
pub fn grad_check<T, M, F>(model: &mut M, loss_fn: F, cfg: GradCheckConfig) -> GradCheckReport
where
    T: Real,
    M: Module<T>,
    F: for<'t> Fn(&M, &'t Tape<T>) -> Result<Var<'t, T>>,
{
    let tape = Tape::new();
    let analytic = match loss_fn(model, &tape) {
        Ok(loss) if loss.item().is_finite() => match tape.backward(loss) {
            Ok(g) => g,
            Err(e) => return GradCheckReport::failed(e.to_string()),
        },
        Ok(loss) => return GradCheckReport::failed(format!("non-finite loss {}", loss.item())),
        Err(e) => return GradCheckReport::failed(e.to_string()),
    };

    let h = T::lit(cfg.step);
    let n_params = model.parameters().len();
    let mut checks = Vec::with_capacity(n_params);
    for pi in 0..n_params {
        let (id, name, len) = {
            let p = model.parameters()[pi];
            (p.id(), p.name.clone(), p.value.len())
        };
        let grad = analytic.get(id).map(|g| g.to_f64_vec()).unwrap_or_else(|| vec![0.0; len]);
        let mut check = ParamCheck {
            name,
            max_rel_error: 0.0,
            max_abs_analytic: 0.0,
            max_abs_numeric: 0.0,
            passed: true,
        };
        for k in 0..len {
            let orig = model.parameters()[pi].value.data()[k];
            model.parameters_mut()[pi].value.data_mut()[k] = orig + h;
            let plus = eval_loss(model, &loss_fn);
            model.parameters_mut()[pi].value.data_mut()[k] = orig - h;
            let minus = eval_loss(model, &loss_fn);
            model.parameters_mut()[pi].value.data_mut()[k] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p.as_f64(), m.as_f64()),
                _ => {
                    check.passed = false;
                    check.max_rel_error = f64::INFINITY;
                    continue;
                }
            };
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = grad[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.floor);
            check.max_rel_error = check.max_rel_error.max(rel);
            check.max_abs_analytic = check.max_abs_analytic.max(a.abs());
            check.max_abs_numeric = check.max_abs_numeric.max(numeric.abs());
        }
        check.passed &= check.max_rel_error <= cfg.tolerance;
        checks.push(check);
    }
    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        passed: checks.iter().all(|c| c.passed),
        params: checks,
        max_rel_error,
        failure: None,
    }
}
