//! Levenberg–Marquardt for small dense nonlinear least-squares problems.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Stop when the relative cost reduction falls below this.
    pub ftol: f64,
    /// Stop when the step is this small relative to the parameters.
    pub xtol: f64,
    /// Relative step for the forward-difference Jacobian.
    pub diff_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions { max_iter: 200, ftol: 1e-30, xtol: 1e-15, diff_step: 1e-7 }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    /// Singular values of the Jacobian at the solution, descending.
    pub jacobian_singular_values: Vec<f64>,
}

fn jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: &F, p: &[f64], r0: &[f64], step: f64) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(r0.len(), p.len());
    let mut q = p.to_vec();
    for k in 0..p.len() {
        let h = step * p[k].abs().max(1.0);
        q[k] = p[k] + h;
        let rp = f(&q);
        q[k] = p[k] - h;
        let rm = f(&q);
        q[k] = p[k];
        for i in 0..r0.len() {
            jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
        }
    }
    jac
}

fn sumsq(r: &[f64]) -> f64 {
    r.iter().map(|x| x * x).sum()
}

/// Minimizes `Σ r_i(p)²` starting from `p0`, with a central-difference Jacobian.
pub fn minimize<F: Fn(&[f64]) -> Vec<f64>>(f: F, p0: &[f64], opts: &LmOptions) -> LmResult {
    let mut p = p0.to_vec();
    let mut r = f(&p);
    let mut cost = sumsq(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut jac = jacobian(&f, &p, &r, opts.diff_step);
    while iterations < opts.max_iter && cost > 0.0 && cost.is_finite() {
        iterations += 1;
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let mut improved = false;
        let mut small_step = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..p.len() {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.clone().cholesky().map(|ch| ch.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = f(&trial);
            let ct = sumsq(&rt);
            if ct.is_finite() && ct < cost {
                let pnorm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                small_step = step.norm() <= opts.xtol * (pnorm + opts.xtol);
                let rel = (cost - ct) / cost;
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                if rel < opts.ftol {
                    small_step = true;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved || small_step {
            break;
        }
        jac = jacobian(&f, &p, &r, opts.diff_step);
    }
    let jac = jacobian(&f, &p, &r, opts.diff_step);
    let mut sv: Vec<f64> = jac.svd(false, false).singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    LmResult { params: p, cost, iterations, jacobian_singular_values: sv }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_converges() {
        let res = minimize(|p| vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]], &[-1.2, 1.0], &LmOptions::default());
        assert!((res.params[0] - 1.0).abs() < 1e-10 && (res.params[1] - 1.0).abs() < 1e-10, "{:?}", res);
        assert!(res.cost < 1e-20);
    }

    #[test]
    fn exponential_decay_fit() {
        let ts: Vec<f64> = (0..50).map(|k| k as f64 * 0.05).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.0 - 1.5 * (-3.0 * t).exp()).collect();
        let res = minimize(
            |p| ts.iter().zip(&ys).map(|(t, y)| p[0] + p[1] * (-p[2] * t).exp() - y).collect(),
            &[1.0, -1.0, 1.0],
            &LmOptions::default(),
        );
        assert!((res.params[2] - 3.0).abs() < 1e-9);
        assert_eq!(res.jacobian_singular_values.len(), 3);
    }
}
