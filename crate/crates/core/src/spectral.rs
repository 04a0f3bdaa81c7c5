//! Exponential-sum estimation from uniformly sampled curves.
//!
//! [`matrix_pencil`] recovers exponents and amplitudes of `Σ c_j e^{s_j t}`
//! from a Hankel-matrix pencil; [`polynomial_exponential_fit`] fits
//! `Σ c_{m,j} t^m e^{s_j t}` when the exponents are already known.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::grid_step;
use crate::linalg::{self, re, CMat, CVec, C64, COND_MAX};

/// Positive real parts up to this value (1/ms) are clamped to zero.
pub const TOL_POS: f64 = 1e-6;
/// Default singular-value ratio for noiseless input.
pub const SVD_THRESHOLD_EXACT: f64 = 1e-8;
/// Default singular-value ratio for Monte Carlo input.
pub const SVD_THRESHOLD_NOISY: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub amplitude: C64,
    pub exponent: C64,
    pub power: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentialSumFit {
    pub terms: Vec<ExpTerm>,
    /// Root-mean-square misfit on the input samples.
    pub residual: f64,
    pub model_order: usize,
    pub singular_values: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ExponentialSumFit {
    pub fn eval(&self, t: f64) -> C64 {
        self.terms
            .iter()
            .map(|term| term.amplitude * re(t.powi(term.power as i32)) * (term.exponent * t).exp())
            .sum()
    }

    pub fn exponents(&self) -> Vec<C64> {
        let mut out: Vec<C64> = Vec::new();
        for t in &self.terms {
            if !out.contains(&t.exponent) {
                out.push(t.exponent);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PencilOptions {
    /// Fixed model order; `None` selects it from the singular values.
    pub order: Option<usize>,
    pub svd_threshold: f64,
    /// Treat the samples as a real signal and enforce conjugate-closed exponents.
    pub real_signal: bool,
    /// Exponents closer than this (relative to the largest magnitude) are merged.
    pub merge_tol: f64,
}

impl Default for PencilOptions {
    fn default() -> Self {
        PencilOptions { order: None, svd_threshold: SVD_THRESHOLD_EXACT, real_signal: true, merge_tol: 1e-7 }
    }
}

/// Largest `k` with `σ_k / σ_1 > threshold`.
pub fn select_model_order(singular_values: &[f64], threshold: f64) -> usize {
    let Some(&s1) = singular_values.first() else { return 0 };
    if s1 <= 0.0 {
        return 0;
    }
    singular_values.iter().take_while(|&&s| s / s1 > threshold).count()
}

/// Matrix-pencil fit of a real, uniformly sampled series.
pub fn matrix_pencil(grid: &[f64], values: &[f64], opts: &PencilOptions) -> Result<ExponentialSumFit> {
    let y: Vec<C64> = values.iter().map(|&v| re(v)).collect();
    matrix_pencil_complex(grid, &y, opts)
}

pub fn matrix_pencil_complex(grid: &[f64], y: &[C64], opts: &PencilOptions) -> Result<ExponentialSumFit> {
    if grid.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} grid points, {} samples", grid.len(), y.len())));
    }
    let dt = grid_step(grid)?;
    let n = y.len();
    let l = n / 2;
    let rows = n - l;
    let h = CMat::from_fn(rows, l + 1, |i, j| y[i + j]);
    let (sv, v) = linalg::right_singular_subspace(&h, 1e-15);
    let auto = select_model_order(&sv, opts.svd_threshold);
    let order = match opts.order {
        Some(k) => {
            if n < 2 * k + 2 {
                return Err(Error::OrderTooHigh { order: k, reason: format!("{n} samples support at most order {}", (n - 2) / 2) });
            }
            if k > auto {
                return Err(Error::OrderTooHigh {
                    order: k,
                    reason: format!("only {auto} singular values exceed the threshold {:.1e}", opts.svd_threshold),
                });
            }
            k
        }
        None => auto.min((n - 2) / 2),
    };
    let mut warnings = Vec::new();
    if order == 0 {
        return Ok(ExponentialSumFit { terms: vec![], residual: rms(y), model_order: 0, singular_values: sv, warnings });
    }
    // signal subspace: conj(V) has the shift structure of the Vandermonde factor
    let w = CMat::from_fn(l + 1, order, |j, m| v[(j, m)].conj());
    let w1 = w.rows(0, l).into_owned();
    let w2 = w.rows(1, l).into_owned();
    let pencil = solve_ls_matrix(&w1, &w2)?;
    let poles = linalg::eig(&pencil)?.values;
    let mut exps: Vec<C64> = poles.iter().map(|z| z.ln() / dt).collect();
    for s in exps.iter_mut() {
        if s.re > TOL_POS {
            return Err(Error::GrowingExponent(s.re));
        }
        if s.re > 0.0 {
            s.re = 0.0;
        }
    }
    let scale = exps.iter().fold(0.0_f64, |m, s| m.max(s.norm())).max(f64::MIN_POSITIVE);
    if opts.real_signal {
        exps = symmetrize_conjugates(&exps, 1e-6 * scale);
    }
    exps = merge_close(exps, opts.merge_tol * scale, &mut warnings);
    let amps = fit_amplitudes(grid, y, &exps)?;
    let mut terms: Vec<ExpTerm> =
        exps.iter().zip(&amps).map(|(&e, &a)| ExpTerm { amplitude: a, exponent: e, power: 0 }).collect();
    sort_terms(&mut terms);
    let fit = ExponentialSumFit { model_order: terms.len(), terms, residual: 0.0, singular_values: sv, warnings };
    let residual = misfit(&fit, grid, y);
    Ok(ExponentialSumFit { residual, ..fit })
}

/// Solves `A X = B` in the least-squares sense column by column.
fn solve_ls_matrix(a: &CMat, b: &CMat) -> Result<CMat> {
    Ok(linalg::svd(a).solve(b, 1e-14))
}

fn rms(y: &[C64]) -> f64 {
    (y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len().max(1) as f64).sqrt()
}

fn misfit(fit: &ExponentialSumFit, grid: &[f64], y: &[C64]) -> f64 {
    let r: Vec<C64> = grid.iter().zip(y).map(|(&t, &v)| v - fit.eval(t)).collect();
    rms(&r)
}

fn sort_terms(terms: &mut [ExpTerm]) {
    terms.sort_by(|a, b| {
        b.exponent
            .re
            .partial_cmp(&a.exponent.re)
            .unwrap()
            .then(a.exponent.im.partial_cmp(&b.exponent.im).unwrap())
            .then(a.power.cmp(&b.power))
    });
}

/// Pairs each exponent with its nearest conjugate and replaces both by the
/// symmetric average; near-real exponents become exactly real.
pub fn symmetrize_conjugates(exps: &[C64], real_tol: f64) -> Vec<C64> {
    let mut out = exps.to_vec();
    let mut used = vec![false; exps.len()];
    for i in 0..exps.len() {
        if used[i] {
            continue;
        }
        if exps[i].im.abs() <= real_tol {
            out[i] = re(exps[i].re);
            used[i] = true;
            continue;
        }
        let target = exps[i].conj();
        let partner = (0..exps.len())
            .filter(|&j| j != i && !used[j])
            .min_by(|&a, &b| (exps[a] - target).norm().partial_cmp(&(exps[b] - target).norm()).unwrap());
        used[i] = true;
        if let Some(j) = partner {
            let avg = (exps[i] + exps[j].conj()) * 0.5;
            out[i] = avg;
            out[j] = avg.conj();
            used[j] = true;
        }
    }
    out
}

fn merge_close(exps: Vec<C64>, tol: f64, warnings: &mut Vec<String>) -> Vec<C64> {
    let mut out: Vec<C64> = Vec::with_capacity(exps.len());
    for e in exps {
        if let Some(prev) = out.iter_mut().find(|p| (**p - e).norm() < tol) {
            warnings.push(format!("merged nearly degenerate exponents {prev:.6e} and {e:.6e}"));
            *prev = (*prev + e) * 0.5;
        } else {
            out.push(e);
        }
    }
    out
}

fn fit_amplitudes(grid: &[f64], y: &[C64], exps: &[C64]) -> Result<Vec<C64>> {
    let a = CMat::from_fn(grid.len(), exps.len(), |i, j| (exps[j] * grid[i]).exp());
    let b = CVec::from_column_slice(y);
    Ok(linalg::lstsq(&a, &b)?.iter().cloned().collect())
}

/// Coefficients `c[m][j]` of `Σ_{m ≤ max_power} Σ_j c[m][j] t^m e^{s_j t}` in the
/// order of the given exponents, with the rms misfit.
pub fn exponential_basis_coefficients(
    grid: &[f64],
    values: &[C64],
    exponents: &[C64],
    max_power: u32,
) -> Result<(Vec<Vec<C64>>, f64)> {
    if grid.len() != values.len() {
        return Err(Error::DimensionMismatch(format!("{} grid points, {} samples", grid.len(), values.len())));
    }
    grid_step(grid)?;
    let nb = exponents.len() * (max_power as usize + 1);
    if nb > grid.len() {
        return Err(Error::OrderTooHigh { order: nb, reason: "more basis functions than samples".into() });
    }
    // column p * n + j holds t^p e^{s_j t}
    let n = exponents.len();
    let mut a = CMat::from_fn(grid.len(), nb, |i, col| {
        let (p, j) = (col / n, col % n);
        re(grid[i].powi(p as i32)) * (exponents[j] * grid[i]).exp()
    });
    let mut col_scale = vec![1.0; nb];
    for (j, cs) in col_scale.iter_mut().enumerate() {
        let nrm = a.column(j).norm();
        if nrm == 0.0 {
            return Err(Error::IllConditionedBasis(f64::INFINITY));
        }
        *cs = nrm;
        let col = a.column(j) / re(nrm);
        a.set_column(j, &col);
    }
    let cond = linalg::condition_number(&a);
    if !cond.is_finite() || cond > COND_MAX {
        return Err(Error::IllConditionedBasis(cond));
    }
    let y = CVec::from_column_slice(values);
    let sol = linalg::lstsq(&a, &y)?;
    let residual = (&a * &sol - &y).norm() / (grid.len() as f64).sqrt();
    let coeffs = (0..=max_power as usize)
        .map(|p| (0..n).map(|j| sol[p * n + j] / col_scale[p * n + j]).collect())
        .collect();
    Ok((coeffs, residual))
}

/// Linear least-squares fit of `Σ_{m ≤ max_power} Σ_j c_{m,j} t^m e^{s_j t}` with
/// the exponents `s_j` given.
pub fn polynomial_exponential_fit(
    grid: &[f64],
    values: &[C64],
    exponents: &[C64],
    max_power: u32,
) -> Result<ExponentialSumFit> {
    let (coeffs, residual) = exponential_basis_coefficients(grid, values, exponents, max_power)?;
    let mut terms: Vec<ExpTerm> = coeffs
        .iter()
        .enumerate()
        .flat_map(|(p, row)| {
            row.iter().zip(exponents).map(move |(&c, &s)| ExpTerm { amplitude: c, exponent: s, power: p as u32 })
        })
        .collect();
    sort_terms(&mut terms);
    Ok(ExponentialSumFit { model_order: exponents.len(), terms, residual, singular_values: vec![], warnings: vec![] })
}
