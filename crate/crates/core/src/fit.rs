//! Small Levenberg–Marquardt solver for the fixed few-parameter models used in
//! `analysis`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct LmFit {
    pub params: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
}

/// Model evaluated at one abscissa: value and gradient with respect to the
/// parameters.
pub(crate) trait Model {
    fn eval(&self, x: f64, params: &[f64], grad: &mut [f64]) -> f64;
}

impl<F: Fn(f64, &[f64], &mut [f64]) -> f64> Model for F {
    fn eval(&self, x: f64, params: &[f64], grad: &mut [f64]) -> f64 {
        self(x, params, grad)
    }
}

fn residuals(
    model: &impl Model,
    xs: &[f64],
    ys: &[f64],
    weights: &[f64],
    params: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = xs.len();
    let np = params.len();
    let mut r = DVector::zeros(n);
    let mut jac = DMatrix::zeros(n, np);
    let mut grad = vec![0.0; np];
    for i in 0..n {
        let v = model.eval(xs[i], params.as_slice(), &mut grad);
        r[i] = (ys[i] - v) * weights[i];
        for j in 0..np {
            jac[(i, j)] = grad[j] * weights[i];
        }
    }
    (r, jac)
}

/// Weighted least squares. `sigmas`, when given, are 1σ errors of `ys`; the
/// covariance is then absolute, otherwise it is scaled by the reduced χ².
pub(crate) fn levenberg_marquardt(
    model: &impl Model,
    xs: &[f64],
    ys: &[f64],
    sigmas: Option<&[f64]>,
    p0: DVector<f64>,
) -> Result<LmFit> {
    let n = xs.len();
    let np = p0.len();
    if ys.len() != n || sigmas.is_some_and(|s| s.len() != n) {
        return Err(Error::Fit("mismatched data lengths".into()));
    }
    if n < np {
        return Err(Error::Fit(format!("{n} points cannot constrain {np} parameters")));
    }
    let weights: Vec<f64> = match sigmas {
        Some(s) => s.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect(),
        None => vec![1.0; n],
    };

    let mut params = p0;
    let (mut r, mut jac) = residuals(model, xs, ys, &weights, &params);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut damped = jtj.clone();
        for i in 0..np {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = damped.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let trial = &params + &step;
        let (tr, tj) = residuals(model, xs, ys, &weights, &trial);
        let trial_cost = tr.norm_squared();
        if trial_cost.is_finite() && trial_cost <= cost {
            let small_step = step.norm() <= 1e-14 * (params.norm() + 1e-14);
            let small_gain = cost - trial_cost <= 1e-15 * cost.max(f64::MIN_POSITIVE);
            params = trial;
            r = tr;
            jac = tj;
            cost = trial_cost;
            lambda = (lambda * 0.3).max(1e-12);
            if small_step || small_gain || cost == 0.0 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    if !params.iter().all(|v| v.is_finite()) {
        return Err(Error::Fit("parameters diverged".into()));
    }

    let jtj = jac.transpose() * &jac;
    let mut covariance = jtj.clone().try_inverse().unwrap_or_else(|| {
        jtj.pseudo_inverse(1e-12)
            .unwrap_or_else(|_| DMatrix::from_element(np, np, f64::NAN))
    });
    if sigmas.is_none() {
        let dof = n.saturating_sub(np).max(1) as f64;
        covariance *= cost / dof;
    }
    Ok(LmFit {
        params,
        covariance,
        chi2: cost,
    })
}
