//! Correlation route: `(D, M)` of the measured channel from `C2` and `C3`.

use std::collections::BTreeMap;

use super::{ReconstructionResult, Route};
use crate::error::{Error, Result};
use crate::forward::{grid_step, CorrelationSeries, Normalization};
use crate::linalg::{self, re, CMat, C64};
use super::SVD_THRESHOLD_ROUTE;
use crate::spectral::{self, PencilOptions};

#[derive(Debug, Clone, Copy)]
pub struct CorrelationOptions {
    /// Relative singular-value cutoff for the `C2` model order.
    pub svd_threshold: f64,
    /// Amplitudes below this fraction of the largest one count as zero.
    pub tol_coeff: f64,
    /// Largest relative distance between a `C3` exponent and the `C2` set.
    pub exponent_match_tol: f64,
    /// Largest rms misfit of `C3` (relative to its peak) explained by the `C2` exponents.
    pub c3_misfit_tol: f64,
    /// Accept fewer than `d²` modes when `C2` does not resolve them all. The
    /// result then describes the observable subspace only.
    pub allow_reduced: bool,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        CorrelationOptions {
            svd_threshold: SVD_THRESHOLD_ROUTE,
            tol_coeff: 1e-8,
            exponent_match_tol: 1e-3,
            c3_misfit_tol: 1e-4,
            allow_reduced: true,
        }
    }
}

/// Splits a `C3` series into its axes and an `nx × ndx` value matrix.
fn rectangle(c3: &CorrelationSeries) -> Result<(Vec<f64>, Vec<f64>, CMat)> {
    if c3.grid.len() != c3.values.len() || c3.grid.iter().any(|g| g.len() != 2) {
        return Err(Error::InvalidInput("C3 grid must hold (x, dx) pairs".into()));
    }
    let x0 = c3.grid.first().ok_or_else(|| Error::InvalidInput("empty C3 surface".into()))?[0];
    let ndx = c3.grid.iter().take_while(|g| g[0] == x0).count();
    if ndx == 0 || !c3.grid.len().is_multiple_of(ndx) {
        return Err(Error::InvalidInput("C3 samples do not form a rectangle".into()));
    }
    let nx = c3.grid.len() / ndx;
    let xs: Vec<f64> = (0..nx).map(|a| c3.grid[a * ndx][0]).collect();
    let dxs: Vec<f64> = (0..ndx).map(|b| c3.grid[b][1]).collect();
    for a in 0..nx {
        for b in 0..ndx {
            let g = &c3.grid[a * ndx + b];
            if g[0] != xs[a] || g[1] != dxs[b] {
                return Err(Error::InvalidInput("C3 samples do not form a rectangle".into()));
            }
        }
    }
    let v = CMat::from_fn(nx, ndx, |a, b| re(c3.values[a * ndx + b]));
    Ok((xs, dxs, v))
}

/// Index of the conjugate partner of every exponent (itself when real).
fn conjugate_partners(lambda: &[C64]) -> Vec<usize> {
    (0..lambda.len())
        .map(|j| {
            (0..lambda.len())
                .min_by(|&a, &b| {
                    (lambda[a] - lambda[j].conj()).norm().partial_cmp(&(lambda[b] - lambda[j].conj()).norm()).unwrap()
                })
                .unwrap()
        })
        .collect()
}

/// Checks that every exponent in a pencil fit of `y` lies in `lambda`.
fn check_slice(grid: &[f64], y: &[f64], lambda: &[C64], opts: &CorrelationOptions, what: &str) -> Result<()> {
    let fit = spectral::matrix_pencil(
        grid,
        y,
        &PencilOptions { svd_threshold: 1e-7, ..Default::default() },
    )
    .map_err(|e| match e {
        Error::GrowingExponent(_) => Error::OrderMismatch(format!("{what} slice of C3 grows")),
        other => other,
    })?;
    let radius = lambda.iter().fold(0.0_f64, |m, l| m.max(l.norm()));
    for s in fit.exponents() {
        let dist = lambda.iter().map(|l| (l - s).norm()).fold(f64::INFINITY, f64::min);
        if dist > opts.exponent_match_tol * radius {
            return Err(Error::OrderMismatch(format!(
                "{what} slice of C3 has exponent {s:.6e}, {:.2e} away from the C2 spectrum",
                dist / radius
            )));
        }
    }
    if fit.model_order > lambda.len() {
        return Err(Error::OrderMismatch(format!(
            "{what} slice of C3 needs {} terms, C2 has {}",
            fit.model_order,
            lambda.len()
        )));
    }
    Ok(())
}

/// Recovers `λ` and `M` in the gauge `M_{1,j} = 1` (`j > 1`), `M_{1,1} = I`.
///
/// Both series must share one normalization; per-event curves are rescaled by
/// the current read off the constant term of `C2`.
pub fn reconstruct_from_correlations(
    c2: &CorrelationSeries,
    c3: &CorrelationSeries,
    d: usize,
    opts: &CorrelationOptions,
) -> Result<ReconstructionResult> {
    if c2.order != 2 || c3.order != 3 {
        return Err(Error::InvalidInput(format!(
            "correlation route needs C2 and C3, got orders {} and {}",
            c2.order, c3.order
        )));
    }
    if c2.normalization != c3.normalization {
        return Err(Error::InvalidInput("C2 and C3 use different normalizations".into()));
    }
    let taus = c2.taus();
    grid_step(&taus)?;
    let n = d * d;
    let mut warnings = Vec::new();

    // exponents and products M_1j M_j1
    let fit = spectral::matrix_pencil(
        &taus,
        &c2.values,
        &PencilOptions { svd_threshold: opts.svd_threshold, ..Default::default() },
    )?;
    warnings.extend(fit.warnings.iter().cloned());
    let r = fit.model_order;
    if r > n {
        return Err(Error::OrderTooHigh { order: r, reason: format!("C2 needs {r} terms but d² = {n}") });
    }
    if r < n {
        let sv = &fit.singular_values;
        let magnitude = sv.get(r).zip(sv.first()).map_or(0.0, |(a, b)| a / b);
        if !opts.allow_reduced || r == 0 {
            return Err(Error::ZeroCoefficient { index: r + 1, magnitude });
        }
        warnings.push(format!("C2 resolves {r} of {n} modes; reconstructing the observable subspace only"));
    }
    let mut lambda = fit.exponents();
    let radius = lambda.iter().fold(0.0_f64, |m, l| m.max(l.norm()));
    let zero = (0..r).min_by(|&a, &b| lambda[a].norm().partial_cmp(&lambda[b].norm()).unwrap()).unwrap();
    if lambda[zero].norm() > 1e-6 * radius {
        return Err(Error::NonGenericSpectrum("C2 has no constant term".into()));
    }
    lambda.swap(0, zero);
    lambda[0] = re(0.0);
    let rest = lambda[1..].to_vec();
    let order = linalg::spectral_order(&rest, 1e-10 * radius);
    for (k, &o) in order.iter().enumerate() {
        lambda[k + 1] = rest[o];
    }
    let c2_vals: Vec<C64> = c2.values.iter().map(|&v| re(v)).collect();
    let (coeffs, c2_rms) = spectral::exponential_basis_coefficients(&taus, &c2_vals, &lambda, 0)?;
    let mut amps = coeffs[0].clone();
    let partner = conjugate_partners(&lambda);
    for j in 0..r {
        let k = partner[j];
        if k > j {
            let avg = (amps[j] + amps[k].conj()) * 0.5;
            amps[j] = avg;
            amps[k] = avg.conj();
        } else if k == j {
            amps[j] = re(amps[j].re);
        }
    }
    let scale = match c2.normalization {
        Normalization::Raw => 1.0,
        Normalization::PerEvent => amps[0].re,
    };
    if !(scale > 0.0) || !(amps[0].re > 0.0) {
        return Err(Error::Normalization("C2 has no positive constant term".into()));
    }
    for a in amps.iter_mut() {
        *a *= scale;
    }
    let top = amps.iter().fold(0.0_f64, |m, a| m.max(a.norm()));
    if let Some(j) = (0..r).find(|&j| amps[j].norm() < opts.tol_coeff * top) {
        return Err(Error::ZeroCoefficient { index: j + 1, magnitude: amps[j].norm() / top });
    }

    // products M_1k M_kj M_j1 from the C3 rectangle with λ known
    let (xs, dxs, mut v) = rectangle(c3)?;
    grid_step(&xs)?;
    grid_step(&dxs)?;
    v *= re(scale);
    let ex = CMat::from_fn(xs.len(), r, |a, j| (lambda[j] * xs[a]).exp());
    let edx = CMat::from_fn(dxs.len(), r, |b, k| (lambda[k] * dxs[b]).exp());
    let rcond = 1e-13;
    let w = linalg::svd(&ex).solve(&v, rcond);
    let mut b = linalg::svd(&edx).solve(&w.transpose(), rcond);
    for k in 0..r {
        for j in 0..r {
            let (pk, pj) = (partner[k], partner[j]);
            if (pk, pj) > (k, j) {
                let avg = (b[(k, j)] + b[(pk, pj)].conj()) * 0.5;
                b[(k, j)] = avg;
                b[(pk, pj)] = avg.conj();
            } else if (pk, pj) == (k, j) {
                b[(k, j)] = re(b[(k, j)].re);
            }
        }
    }
    let v_fit = &ex * b.transpose() * edx.transpose();
    let v_peak = v.iter().fold(0.0_f64, |m, x| m.max(x.norm()));
    let c3_rms = (&v_fit - &v).norm() / ((v.len() as f64).sqrt() * v_peak.max(f64::MIN_POSITIVE));
    if c3_rms > opts.c3_misfit_tol {
        return Err(Error::OrderMismatch(format!(
            "C3 is not an exponential sum in the C2 exponents (relative rms misfit {c3_rms:.2e})"
        )));
    }
    let x_slice: Vec<f64> = (0..xs.len()).map(|a| v[(a, 0)].re).collect();
    let dx_slice: Vec<f64> = (0..dxs.len()).map(|b| v[(0, b)].re).collect();
    // independent pencil fits of the two edges; short slices of d > 2 models
    // resolve only part of the spectrum, so disagreement is only reported
    for (grid, slice, what) in [(&xs, &x_slice, "x"), (&dxs, &dx_slice, "dx")] {
        if let Err(e) = check_slice(grid, slice, &lambda, opts, what) {
            warnings.push(e.to_string());
        }
    }

    // gauge M_1j = 1 for j > 1, M_11 = current
    let i_cur = amps[0].re.sqrt();
    let mut m = CMat::zeros(r, r);
    m[(0, 0)] = re(i_cur);
    for j in 1..r {
        m[(0, j)] = re(1.0);
        m[(j, 0)] = amps[j];
    }
    for k in 1..r {
        for j in 1..r {
            m[(k, j)] = b[(k, j)] / amps[j];
        }
    }
    // the first row and column of B are redundant with C2; report their spread
    let mut gauge_consistency = (b[(0, 0)] - re(i_cur.powi(3))).norm() / i_cur.powi(3);
    for j in 1..r {
        gauge_consistency = gauge_consistency
            .max((b[(0, j)] / (amps[j] * i_cur) - re(1.0)).norm())
            .max((b[(j, 0)] / (amps[j] * i_cur) - re(1.0)).norm());
    }

    let mut residuals = BTreeMap::new();
    let c2_peak = c2.values.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    residuals.insert("c2_rms".into(), c2_rms / c2_peak.max(f64::MIN_POSITIVE));
    residuals.insert("c2_pencil_rms".into(), fit.residual / c2_peak.max(f64::MIN_POSITIVE));
    residuals.insert("c3_rms".into(), c3_rms);
    residuals.insert("gauge_consistency".into(), gauge_consistency);
    Ok(ReconstructionResult {
        route: Route::Correlation,
        d,
        d_rec: lambda,
        m_rec: m,
        z_border: None,
        r_rec: None,
        q_rec: None,
        k_rec: None,
        residuals,
        gauge_note: "T eigenbasis with zero mode first; M_1j = 1 for j > 1 and M_11 equal to the mean current".into(),
        warnings,
    })
}
