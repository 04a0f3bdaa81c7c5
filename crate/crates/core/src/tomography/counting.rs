//! Counting route: `(Q, R)` of a single-channel model from `P0` and `P1`.
//!
//! In the eigenbasis of `Q` the idle generator is the Kronecker sum
//! `D_Q* ⊕ D_Q` and the jump superoperator is `R̃* ⊗ R̃`. `P0` fixes the
//! spectrum and the products `ẑ_{1,J} z_{J,1}`; `P1` fixes the diagonal of
//! `𝓜` and its symmetrized off-diagonal combinations. Those combinations are
//! quadratic in `R̃` and are solved by multistart Levenberg–Marquardt in a
//! balanced diagonal-similarity gauge.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{hermitian_defect, SVD_THRESHOLD_ROUTE, kron_model_note, ReconstructionResult, Route, ZBorder};
use crate::error::{Error, Result};
use crate::forward::{self, diag, grid_step, CountingSeries};
use crate::linalg::{self, c, re, CMat, CVec, C64, I};
use crate::lindblad;
use crate::lm::{self, LmOptions};
use crate::spectral::{self, PencilOptions};

#[derive(Debug, Clone, Copy)]
pub struct CountingOptions {
    /// Relative singular-value cutoff for the `P0` model order.
    pub svd_threshold: f64,
    /// Relative tolerance of the Kronecker-sum factorization.
    pub factor_tol: f64,
    /// Amplitudes below this fraction of the largest one count as zero.
    pub tol_coeff: f64,
    /// Random starts beyond the structured ones.
    pub restarts: usize,
    pub seed: u64,
    /// Stop the multistart once the scaled cost falls below this.
    pub accept_cost: f64,
    /// Stop once this many starts reach the best cost within a factor of two,
    /// provided that cost is below `basin_cost`.
    pub basin_hits: usize,
    pub basin_cost: f64,
    /// Jacobian rank cutoff `σ_min/σ_max` for declaring the solve ambiguous.
    pub rank_tol: f64,
}

impl Default for CountingOptions {
    fn default() -> Self {
        CountingOptions {
            svd_threshold: SVD_THRESHOLD_ROUTE,
            factor_tol: 1e-6,
            tol_coeff: 1e-8,
            restarts: 200,
            seed: 7,
            accept_cost: 1e-16,
            basin_hits: 4,
            basin_cost: 1e-10,
            rank_tol: 1e-9,
        }
    }
}

/// Writes `μ` as the Kronecker sum `{q_k* + q_j}` of `d` values.
///
/// Returns `q` (with `Im q_1 = 0`) and, for each Kronecker index `J = j + d k`,
/// the position in `mu` of the matching exponent. The real exponents are
/// `2 Re q_j`, sorted so that `q_1` is the least damped; each `Im q_j` is read off
/// the complex pair whose real part is `Re q_1 + Re q_j`, with the sign of the
/// first one fixed by the conjugation symmetry of the data and the others
/// chosen by backtracking against the full multiset.
pub fn factor_kronecker_sum(mu: &[C64], d: usize, tol: f64) -> Result<(Vec<C64>, Vec<usize>)> {
    let n = d * d;
    if mu.len() != n {
        return Err(Error::FactorizationFailure(format!("{} exponents cannot form a {d}x{d} Kronecker sum", mu.len())));
    }
    let scale = mu.iter().fold(0.0_f64, |m, x| m.max(x.norm()));
    let atol = tol * scale;
    let mut real_parts: Vec<f64> = mu.iter().filter(|x| x.im.abs() <= atol).map(|x| x.re / 2.0).collect();
    if real_parts.len() != d {
        return Err(Error::FactorizationFailure(format!("expected {d} real exponents, found {}", real_parts.len())));
    }
    real_parts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut options: Vec<Vec<f64>> = Vec::with_capacity(d);
    options.push(vec![0.0]);
    for j in 1..d {
        let target = real_parts[0] + real_parts[j];
        let mut cands: Vec<f64> =
            mu.iter().filter(|x| x.im > atol && (x.re - target).abs() <= 10.0 * atol).map(|x| x.im).collect();
        cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if cands.is_empty() {
            return Err(Error::FactorizationFailure(format!("no complex exponent with real part {target:.6e}")));
        }
        let mut signed: Vec<f64> = cands.iter().map(|w| -w).collect();
        signed.extend(cands.iter().cloned());
        if j == 1 {
            signed.retain(|w| *w > 0.0);
        }
        options.push(signed);
    }
    let mut choice = vec![0usize; d];
    loop {
        let q: Vec<C64> = (0..d).map(|j| c(real_parts[j], options[j][choice[j]])).collect();
        let predicted: Vec<C64> = (0..n).map(|jj| q[jj / d].conj() + q[jj % d]).collect();
        if linalg::multiset_distance(&predicted, mu) <= 10.0 * atol {
            let mut used = vec![false; n];
            let mut perm = Vec::with_capacity(n);
            for p in &predicted {
                let k = (0..n)
                    .filter(|&k| !used[k])
                    .min_by(|&a, &b| (mu[a] - p).norm().partial_cmp(&(mu[b] - p).norm()).unwrap())
                    .unwrap();
                used[k] = true;
                perm.push(k);
            }
            return Ok((q, perm));
        }
        // odometer over the candidate lists
        let mut pos = d;
        loop {
            if pos == 0 {
                return Err(Error::FactorizationFailure("no sign assignment reproduces the exponent set".into()));
            }
            pos -= 1;
            choice[pos] += 1;
            if choice[pos] < options[pos].len() {
                break;
            }
            choice[pos] = 0;
        }
    }
}

/// Left and right null vectors of `T`, normalized so that `l · ρ = 1`.
fn fixed_points(t: &CMat) -> (CVec, CVec) {
    let f = linalg::svd(t);
    let k = t.ncols() - 1;
    let rho = f.v.column(k).into_owned();
    let left: CVec = f.u.column(k).map(|x| x.conj());
    let s = left.dot(&rho);
    (left / s, rho)
}

/// Curve coefficients of `P0` and `P1` predicted by `(D_Q, R̃)`.
struct Coefficients {
    a: Vec<C64>,
    c0: Vec<C64>,
    c1: Vec<C64>,
}

fn predict(r: &CMat, mu: &[C64]) -> (Coefficients, CVec, CVec) {
    let n = mu.len();
    let cal_m = lindblad::jump_superop(r);
    let t = diag(mu) + &cal_m;
    let (l, rho) = fixed_points(&t);
    let a: Vec<C64> = (0..n).map(|j| l[j] * rho[j]).collect();
    let c1: Vec<C64> = (0..n).map(|j| l[j] * cal_m[(j, j)] * rho[j]).collect();
    let c0: Vec<C64> = (0..n)
        .map(|j| {
            let mut s = C64::new(0.0, 0.0);
            for k in 0..n {
                if k != j {
                    s += (l[j] * cal_m[(j, k)] * rho[k] + l[k] * cal_m[(k, j)] * rho[j]) / (mu[j] - mu[k]);
                }
            }
            s
        })
        .collect();
    (Coefficients { a, c0, c1 }, l, rho)
}

/// Parameter layout: `r_11` (real), `r_jj` for `j > 1`, `s_j = r_1j = r_j1`
/// for `j > 1`, then the remaining off-diagonal entries row by row.
fn unpack(p: &[f64], d: usize) -> CMat {
    let mut r = CMat::zeros(d, d);
    r[(0, 0)] = re(p[0]);
    let mut k = 1;
    let take = |k: &mut usize| {
        let z = c(p[*k], p[*k + 1]);
        *k += 2;
        z
    };
    for j in 1..d {
        r[(j, j)] = take(&mut k);
    }
    for j in 1..d {
        let s = take(&mut k);
        r[(0, j)] = s;
        r[(j, 0)] = s;
    }
    for i in 1..d {
        for j in 1..d {
            if i != j {
                r[(i, j)] = take(&mut k);
            }
        }
    }
    r
}

fn pack(r: &CMat) -> Vec<f64> {
    let d = r.nrows();
    let mut p = vec![r[(0, 0)].re];
    for j in 1..d {
        p.extend([r[(j, j)].re, r[(j, j)].im]);
    }
    for j in 1..d {
        p.extend([r[(0, j)].re, r[(0, j)].im]);
    }
    for i in 1..d {
        for j in 1..d {
            if i != j {
                p.extend([r[(i, j)].re, r[(i, j)].im]);
            }
        }
    }
    p
}

fn max_norm(v: &[C64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.norm())).max(f64::MIN_POSITIVE)
}

/// Recovers a single-channel model from `P0` and `P1`.
///
/// All jump channels of the underlying system must be measured: the route
/// relies on the idle generator being the Kronecker sum of `Q` with itself.
pub fn reconstruct_from_counting(
    p0: &CountingSeries,
    p1: &CountingSeries,
    d: usize,
    opts: &CountingOptions,
) -> Result<ReconstructionResult> {
    if p0.n != 0 || p1.n != 1 {
        return Err(Error::InvalidInput(format!("counting route needs P0 and P1, got P{} and P{}", p0.n, p1.n)));
    }
    grid_step(&p0.grid)?;
    grid_step(&p1.grid)?;
    let n = d * d;
    let mut warnings = Vec::new();

    // stage 1: idle spectrum from P0
    let fit = spectral::matrix_pencil(
        &p0.grid,
        &p0.values,
        &PencilOptions { svd_threshold: opts.svd_threshold, ..Default::default() },
    )?;
    warnings.extend(fit.warnings.iter().cloned());
    let radius = fit.exponents().iter().fold(0.0_f64, |m, x| m.max(x.norm()));
    if fit.model_order == 0 || fit.exponents().iter().any(|x| x.re >= -1e-9 * radius) {
        return Err(Error::NonGenericSpectrum("P0 has a non-decaying component".into()));
    }
    let r_found = fit.model_order;
    if r_found > n {
        return Err(Error::OrderTooHigh { order: r_found, reason: format!("P0 needs {r_found} terms but d² = {n}") });
    }
    if r_found < n {
        let sv = &fit.singular_values;
        let magnitude = sv.get(r_found).zip(sv.first()).map_or(0.0, |(a, b)| a / b);
        return Err(Error::ZeroCoefficient { index: r_found + 1, magnitude });
    }

    // stage 2: Kronecker order
    let fitted = fit.exponents();
    let (q, perm) = factor_kronecker_sum(&fitted, d, opts.factor_tol)?;
    let mu: Vec<C64> = (0..n).map(|jj| q[jj / d].conj() + q[jj % d]).collect();
    let factor_err = (0..n).map(|jj| (mu[jj] - fitted[perm[jj]]).norm()).fold(0.0, f64::max) / radius;

    // stage 3: amplitudes with the symmetrized exponents
    let p0_vals: Vec<C64> = p0.values.iter().map(|&v| re(v)).collect();
    let (a_coef, p0_rms) = spectral::exponential_basis_coefficients(&p0.grid, &p0_vals, &mu, 0)?;
    let a = a_coef[0].clone();
    let a_top = max_norm(&a);
    if let Some(j) = (0..n).find(|&j| a[j].norm() < opts.tol_coeff * a_top) {
        return Err(Error::ZeroCoefficient { index: j + 1, magnitude: a[j].norm() / a_top });
    }

    // stage 4: diagonal and symmetrized off-diagonal coefficients from P1
    let p1_vals: Vec<C64> = p1.values.iter().map(|&v| re(v)).collect();
    let (pc, p1_rms) = spectral::exponential_basis_coefficients(&p1.grid, &p1_vals, &mu, 1)?;
    let data = Coefficients { a: a.clone(), c0: pc[0].clone(), c1: pc[1].clone() };
    let r11_sq = (data.c1[0] / data.a[0]).re;
    if !(r11_sq > 0.0) {
        return Err(Error::ZeroCoefficient { index: 1, magnitude: r11_sq.max(0.0) });
    }
    let r11 = r11_sq.sqrt();
    let diag_guess: Vec<C64> = (0..d).map(|j| if j == 0 { re(r11) } else { data.c1[j] / (data.a[j] * r11) }).collect();

    // stage 5: Kronecker structure solve
    let (wa, w0, w1) = (1.0 / max_norm(&data.a), 1.0 / max_norm(&data.c0), 1.0 / max_norm(&data.c1));
    let residual = |p: &[f64]| -> Vec<f64> {
        let r = unpack(p, d);
        let (pred, _, _) = predict(&r, &mu);
        let mut out = Vec::with_capacity(6 * n);
        for (pv, dv, w) in [(&pred.a, &data.a, wa), (&pred.c0, &data.c0, w0), (&pred.c1, &data.c1, w1)] {
            for j in 0..n {
                let e = (pv[j] - dv[j]) * w;
                out.push(e.re);
                out.push(e.im);
            }
        }
        out
    };
    let scale = diag_guess.iter().map(|x| x.norm()).sum::<f64>() / d as f64;
    let mut starts: Vec<CMat> = Vec::new();
    let base = {
        let mut r = CMat::zeros(d, d);
        for j in 0..d {
            r[(j, j)] = diag_guess[j];
        }
        r
    };
    for &mag in &[0.1, 0.3, 1.0, 3.0] {
        for k in 0..8 {
            let phase = std::f64::consts::PI * k as f64 / 8.0;
            let mut r = base.clone();
            for j in 1..d {
                let s = (I * phase).exp() * (mag * scale);
                r[(0, j)] = s;
                r[(j, 0)] = s;
            }
            starts.push(r);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts {
        let mut r = base.clone();
        for i in 0..d {
            for j in 0..d {
                if i != j && (i > 0 || j > 0) {
                    let mag = scale * 10f64.powf(rng.random_range(-1.5..1.0));
                    r[(i, j)] = (I * rng.random_range(0.0..std::f64::consts::TAU)).exp() * mag;
                }
            }
        }
        for j in 1..d {
            r[(j, 0)] = r[(0, j)];
        }
        starts.push(r);
    }
    let lm_opts = LmOptions { max_iter: 300, ..Default::default() };
    let mut best: Option<lm::LmResult> = None;
    let mut hits = 0;
    for start in &starts {
        let res = lm::minimize(residual, &pack(start), &lm_opts);
        match &best {
            Some(b) if res.cost < b.cost => {
                hits = if res.cost > 0.5 * b.cost { hits + 1 } else { 1 };
                best = Some(res);
            }
            Some(b) if res.cost < 2.0 * b.cost => hits += 1,
            Some(_) => {}
            None => {
                hits = 1;
                best = Some(res);
            }
        }
        // stop at the noise floor or once several starts agree on the best basin
        if best.as_ref().is_some_and(|b| b.cost < opts.accept_cost) || (hits >= opts.basin_hits && best.as_ref().is_some_and(|b| b.cost < opts.basin_cost)) {
            break;
        }
    }
    let best = best.expect("at least one start");
    let sv = &best.jacobian_singular_values;
    let rank_ratio = sv.last().unwrap_or(&0.0) / sv.first().unwrap_or(&1.0).max(f64::MIN_POSITIVE);
    if rank_ratio < opts.rank_tol {
        return Err(Error::SolveAmbiguous(format!(
            "Kronecker system is rank deficient (singular value ratio {rank_ratio:.2e})"
        )));
    }
    let r_kron = unpack(&best.params, d);
    let (_, left, rho) = predict(&r_kron, &mu);

    // stage 6: regauge with the left fixed point G = W†W
    let g_raw = lindblad::devectorize(&left)?.transpose();
    let phase = g_raw[(0, 0)] / g_raw[(0, 0)].norm();
    let g = (&g_raw / phase + (&g_raw / phase).adjoint()) * re(0.5);
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SolveAmbiguous("left fixed point is not positive definite".into()))?;
    let w = chol.l().adjoint();
    let w_inv = linalg::inverse(&w)?;
    let dq = diag(&q);
    let q_prime = &w * &dq * &w_inv;
    let mut r_prime = &w * &r_kron * &w_inv;
    let (imax, jmax) = (0..d * d)
        .map(|k| (k % d, k / d))
        .max_by(|a, b| r_prime[*a].norm().partial_cmp(&r_prime[*b].norm()).unwrap())
        .unwrap();
    let ph = r_prime[(imax, jmax)] / r_prime[(imax, jmax)].norm();
    r_prime /= ph;
    let k_raw = (&q_prime + r_prime.adjoint() * &r_prime * re(0.5)) * I;
    let herm_defect = hermitian_defect(&k_raw);
    let k_rec = (&k_raw + k_raw.adjoint()) * re(0.5);

    let mut residuals = BTreeMap::new();
    let p0_peak = p0.values.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    let p1_peak = p1.values.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    residuals.insert("factorization".into(), factor_err);
    residuals.insert("p0_rms".into(), p0_rms / p0_peak);
    residuals.insert("p1_rms".into(), p1_rms / p1_peak);
    residuals.insert("kronecker_solve".into(), best.cost.sqrt());
    residuals.insert("jacobian_rank_ratio".into(), rank_ratio);
    residuals.insert("hermitian_defect".into(), herm_defect);
    if let Ok(model) = lindblad::CmpsModel::new(k_rec.clone(), vec![r_prime.clone()], 1) {
        if let Ok(sd) = forward::SpectralData::from_model(&model) {
            if let (Ok(a), Ok(b)) = (forward::p0_curve(&sd, &p0.grid), forward::p1_curve(&sd, &p1.grid)) {
                residuals.insert("p0_prediction".into(), linalg::relative_sup_distance(&a.values, &p0.values));
                residuals.insert("p1_prediction".into(), linalg::relative_sup_distance(&b.values, &p1.values));
            }
        }
    }
    Ok(ReconstructionResult {
        route: Route::Counting,
        d,
        d_rec: mu,
        m_rec: lindblad::jump_superop(&r_kron),
        z_border: Some(ZBorder { z_inv_row: left.iter().cloned().collect(), z_col: rho.iter().cloned().collect() }),
        r_rec: Some(r_prime),
        q_rec: Some(dq),
        k_rec: Some(k_rec),
        residuals,
        gauge_note: kron_model_note(d),
        warnings,
    })
}
