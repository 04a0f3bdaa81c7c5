//! Observable curves predicted by a model: correlation functions, counting
//! probabilities, current, noise and the waiting-time distribution.
//!
//! Everything is evaluated from [`SpectralData`], which holds the measured
//! jump superoperator in the eigenbasis of `T` (`D`, `M`) and in the eigenbasis
//! of the idle generator `S` (`𝓓`, `𝓜`, `Z`). The same struct is produced by
//! the tomography routines, so forward predictions from a reconstruction go
//! through the identical code path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, re, CMat, CVec, C64, COND_MAX};
use crate::lindblad::{self, CmpsModel, DriftDecomposition, TransferDecomposition};

/// Imaginary parts of real observables must stay below this fraction of the
/// absolute sum of contributing terms.
pub const TOL_IMAG: f64 = 1e-10;
/// Relative spacing below which two idle exponents use the confluent form.
pub const TOL_DEGEN: f64 = 1e-8;
/// Slack for the nonnegativity checks on probabilities and densities.
pub const TOL_POS: f64 = 1e-6;

/// The measured channel expressed in the eigenbasis of the idle generator.
#[derive(Debug, Clone)]
pub struct IdleBasis {
    /// Eigenvalues of `S = T - R_β* ⊗ R_β`.
    pub mu: Vec<C64>,
    /// `Z M Z⁻¹`.
    pub cal_m: CMat,
    pub z: CMat,
    pub z_inv: CMat,
}

impl IdleBasis {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn cal_d_matrix(&self) -> CMat {
        diag(&self.mu)
    }

    /// Products `ẑ_{1,j} z_{j,1}`, the amplitudes of `P0`.
    pub fn p0_amplitudes(&self) -> Vec<C64> {
        (0..self.dim()).map(|j| self.z_inv[(0, j)] * self.z[(j, 0)]).collect()
    }
}

/// Spectral data of the measured channel in both eigenbases.
///
/// The idle basis is optional: models whose idle generator is defective or
/// undamped (for instance a symmetric dot at zero detuning, or a channel that
/// never clicks) still support current, correlation and noise predictions.
#[derive(Debug, Clone)]
pub struct SpectralData {
    /// Eigenvalues of `T`, zero mode first.
    pub lambda: Vec<C64>,
    /// `X⁻¹ (R_β* ⊗ R_β) X`.
    pub m: CMat,
    idle: std::result::Result<IdleBasis, String>,
}

impl SpectralData {
    pub fn from_model(model: &CmpsModel) -> Result<Self> {
        let tdec = TransferDecomposition::from_model(model)?;
        let j = lindblad::jump_superop(model.measured()?);
        let ddec = DriftDecomposition::from_model(model, &tdec);
        Ok(Self::assemble(&tdec, ddec, &j))
    }

    /// Same as [`SpectralData::from_model`] for generators that need not come
    /// with a Hermitian `K` (reconstructions in a non-unitary gauge).
    pub fn from_generators(q: &CMat, jumps: &[CMat], measured: usize) -> Result<Self> {
        let t = lindblad::transfer_matrix(q, jumps);
        let tdec = TransferDecomposition::from_matrix(t)?;
        let j = lindblad::jump_superop(&jumps[measured]);
        let ddec = DriftDecomposition::from_matrix(&tdec.t - &j, &tdec);
        Ok(Self::assemble(&tdec, ddec, &j))
    }

    fn assemble(tdec: &TransferDecomposition, ddec: Result<DriftDecomposition>, j: &CMat) -> Self {
        let m = &tdec.x_inv * j * &tdec.x;
        let idle = ddec
            .map(|dd| IdleBasis { mu: dd.mu, cal_m: &dd.z * &m * &dd.z_inv, z: dd.z, z_inv: dd.z_inv })
            .map_err(|e| e.to_string());
        SpectralData { lambda: tdec.lambda.clone(), m, idle }
    }

    /// Builds both bases from `(D, M)` alone.
    pub fn from_transfer(lambda: Vec<C64>, m: CMat) -> Result<Self> {
        let idle = drift_from_transfer(&lambda, &m)
            .and_then(|(mu, cal_m, z)| {
                let z_inv = linalg::inverse(&z)?;
                Ok(IdleBasis { mu, cal_m, z, z_inv })
            })
            .map_err(|e| e.to_string());
        Ok(SpectralData { lambda, m, idle })
    }

    /// Builds both bases from `(𝓓, 𝓜)` alone.
    pub fn from_drift(mu: Vec<C64>, cal_m: CMat) -> Result<Self> {
        let (lambda, m, z) = transfer_from_drift(&mu, &cal_m)?;
        let z_inv = linalg::inverse(&z)?;
        let idle = IdleBasis { mu, cal_m, z, z_inv };
        Ok(SpectralData { lambda, m, idle: Ok(idle) })
    }

    pub fn idle(&self) -> Result<&IdleBasis> {
        self.idle
            .as_ref()
            .map_err(|e| Error::NonGenericSpectrum(format!("idle generator unusable: {e}")))
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn d_matrix(&self) -> CMat {
        diag(&self.lambda)
    }

    /// Amplitudes `M_{1,j} M_{j,1}` of `C2`.
    pub fn c2_amplitudes(&self) -> Vec<C64> {
        (0..self.dim()).map(|j| self.m[(0, j)] * self.m[(j, 0)]).collect()
    }
}

pub fn diag(v: &[C64]) -> CMat {
    CMat::from_diagonal(&CVec::from_column_slice(v))
}

fn checked_real(value: C64, magnitude: f64) -> Result<f64> {
    if value.im.abs() > TOL_IMAG * magnitude.max(value.re.abs()).max(f64::MIN_POSITIVE) {
        return Err(Error::ComplexResult { real: value.re, imag: value.im });
    }
    Ok(value.re)
}

/// Maps `(D, M)` to `(𝓓, 𝓜, Z)` by diagonalizing `D - M`.
pub fn drift_from_transfer(lambda: &[C64], m: &CMat) -> Result<(Vec<C64>, CMat, CMat)> {
    let s = diag(lambda) - m;
    let e = linalg::eig(&s)?;
    let radius = e.values.iter().fold(0.0_f64, |a, v| a.max(v.norm()));
    let e = e.sorted(1e-10 * radius);
    let cond = linalg::condition_number(&e.vectors);
    if !cond.is_finite() || cond > COND_MAX {
        return Err(Error::DefectiveMatrix { cond, limit: COND_MAX });
    }
    let z = linalg::inverse(&e.vectors)?;
    let cal_m = &z * m * &e.vectors;
    Ok((e.values, cal_m, z))
}

/// Maps `(𝓓, 𝓜)` back to `(D, M, Z)` by diagonalizing `𝓓 + 𝓜`.
pub fn transfer_from_drift(mu: &[C64], cal_m: &CMat) -> Result<(Vec<C64>, CMat, CMat)> {
    let t = diag(mu) + cal_m;
    let (e, _) = linalg::eig_checked(&t, COND_MAX)?;
    let radius = e.values.iter().fold(0.0_f64, |a, v| a.max(v.norm()));
    let zero = (0..e.values.len())
        .min_by(|&a, &b| e.values[a].norm().partial_cmp(&e.values[b].norm()).unwrap())
        .ok_or_else(|| Error::NonGenericSpectrum("empty spectrum".into()))?;
    if e.values[zero].norm() > lindblad::TOL_ZERO * radius {
        return Err(Error::NonGenericSpectrum("no zero mode in D".into()));
    }
    let mut order = vec![zero];
    let rest: Vec<usize> = (0..e.values.len()).filter(|&i| i != zero).collect();
    let rest_vals: Vec<C64> = rest.iter().map(|&i| e.values[i]).collect();
    order.extend(linalg::spectral_order(&rest_vals, 1e-10 * radius).into_iter().map(|k| rest[k]));
    let n = e.values.len();
    let mut lambda: Vec<C64> = order.iter().map(|&k| e.values[k]).collect();
    lambda[0] = C64::new(0.0, 0.0);
    let z = CMat::from_fn(n, n, |i, j| e.vectors[(i, order[j])]);
    let z_inv = linalg::inverse(&z)?;
    let m = &z_inv * cal_m * &z;
    Ok((lambda, m, z))
}

/// How a correlation curve is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Joint click density, units of kHz^n.
    Raw,
    /// Raw value divided by the mean current: conditional click density
    /// given a click at the first point.
    PerEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSeries {
    pub order: usize,
    /// One tuple of time coordinates (ms) per value.
    pub grid: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub normalization: Normalization,
}

impl CorrelationSeries {
    /// The first coordinate of each grid tuple.
    pub fn taus(&self) -> Vec<f64> {
        self.grid.iter().map(|g| g[0]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingSeries {
    pub n: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wtd {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub mean_tau: f64,
    pub c: f64,
}

fn check_sorted(points: &[f64]) -> Result<()> {
    if points.windows(2).any(|w| !(w[1] >= w[0])) || points.iter().any(|x| !x.is_finite()) {
        return Err(Error::UnsortedPoints);
    }
    Ok(())
}

/// Mean click rate `M_{1,1}`.
pub fn steady_current(sd: &SpectralData) -> Result<f64> {
    checked_real(sd.m[(0, 0)], sd.m[(0, 0)].norm())
}

/// `C_n(x₁, …, x_n)` by the matrix product `e₁ᵀ M e^{DΔ} M … M e₁`.
pub fn correlation(sd: &SpectralData, points: &[f64]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InvalidInput("correlation needs at least one point".into()));
    }
    check_sorted(points)?;
    let n = sd.dim();
    let mut v = sd.m.column(0).into_owned();
    let mut mag = v.iter().map(|z| z.norm()).sum::<f64>();
    for w in points.windows(2) {
        let gap = w[1] - w[0];
        for i in 0..n {
            v[i] *= (sd.lambda[i] * gap).exp();
        }
        v = &sd.m * v;
        mag = mag.max(v.iter().map(|z| z.norm()).sum::<f64>());
    }
    checked_real(v[0], mag)
}

/// `C2(τ) = Σ_j M_{1,j} M_{j,1} e^{λ_j τ}`.
pub fn c2_curve(sd: &SpectralData, taus: &[f64], norm: Normalization) -> Result<CorrelationSeries> {
    check_sorted(taus)?;
    let amps = sd.c2_amplitudes();
    let scale = match norm {
        Normalization::Raw => 1.0,
        Normalization::PerEvent => {
            let i = steady_current(sd)?;
            if i <= 0.0 {
                return Err(Error::Normalization("mean current is not positive".into()));
            }
            1.0 / i
        }
    };
    let mut values = Vec::with_capacity(taus.len());
    for &t in taus {
        let (sum, mag) = exp_sum(&amps, &sd.lambda, t);
        values.push(checked_real(sum, mag)? * scale);
    }
    Ok(CorrelationSeries {
        order: 2,
        grid: taus.iter().map(|&t| vec![t]).collect(),
        values,
        normalization: norm,
    })
}

fn exp_sum(amps: &[C64], rates: &[C64], t: f64) -> (C64, f64) {
    let mut sum = C64::new(0.0, 0.0);
    let mut mag = 0.0;
    for (a, l) in amps.iter().zip(rates) {
        let term = a * (l * t).exp();
        sum += term;
        mag += term.norm();
    }
    (sum, mag)
}

/// `C3` on the rectangle of first gaps `xs` and second gaps `dxs`:
/// `Σ M_{1,k} M_{k,j} M_{j,1} e^{λ_j x} e^{λ_k Δx}`.
pub fn c3_surface(sd: &SpectralData, xs: &[f64], dxs: &[f64], norm: Normalization) -> Result<CorrelationSeries> {
    check_sorted(xs)?;
    check_sorted(dxs)?;
    let n = sd.dim();
    let scale = match norm {
        Normalization::Raw => 1.0,
        Normalization::PerEvent => 1.0 / steady_current(sd)?,
    };
    let b = c3_coefficients(sd);
    let mut grid = Vec::with_capacity(xs.len() * dxs.len());
    let mut values = Vec::with_capacity(grid.capacity());
    for &x in xs {
        let ex: Vec<C64> = sd.lambda.iter().map(|l| (l * x).exp()).collect();
        for &dx in dxs {
            let mut sum = C64::new(0.0, 0.0);
            let mut mag = 0.0;
            for k in 0..n {
                let ek = (sd.lambda[k] * dx).exp();
                for j in 0..n {
                    let term = b[(k, j)] * ex[j] * ek;
                    sum += term;
                    mag += term.norm();
                }
            }
            grid.push(vec![x, dx]);
            values.push(checked_real(sum, mag)? * scale);
        }
    }
    Ok(CorrelationSeries { order: 3, grid, values, normalization: norm })
}

/// Coefficients `B_{k,j} = M_{1,k} M_{k,j} M_{j,1}`.
pub fn c3_coefficients(sd: &SpectralData) -> CMat {
    let n = sd.dim();
    CMat::from_fn(n, n, |k, j| sd.m[(0, k)] * sd.m[(k, j)] * sd.m[(j, 0)])
}

/// `P0(τ) = Σ_j ẑ_{1,j} z_{j,1} e^{μ_j τ}`.
pub fn p0_curve(sd: &SpectralData, taus: &[f64]) -> Result<CountingSeries> {
    check_sorted(taus)?;
    let idle = sd.idle()?;
    let amps = idle.p0_amplitudes();
    let values = taus
        .iter()
        .map(|&t| {
            let (s, mag) = exp_sum(&amps, &idle.mu, t);
            checked_real(s, mag)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CountingSeries { n: 0, grid: taus.to_vec(), values })
}

/// `∫₀^τ e^{a(τ-t)} e^{b t} dt`, with the confluent limit for close exponents.
pub fn divided_exp(a: C64, b: C64, tau: f64, tol: f64) -> C64 {
    if (a - b).norm() < tol {
        let m = (a + b) * 0.5;
        re(tau) * (m * tau).exp()
    } else {
        ((a * tau).exp() - (b * tau).exp()) / (a - b)
    }
}

/// `P1(τ) = Σ_{j,k} ẑ_{1,j} 𝓜_{j,k} z_{k,1} ∫₀^τ e^{μ_j(τ-t)} e^{μ_k t} dt`.
pub fn p1_curve(sd: &SpectralData, taus: &[f64]) -> Result<CountingSeries> {
    check_sorted(taus)?;
    let n = sd.dim();
    let idle = sd.idle()?;
    let scale = idle.mu.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
    let tol = TOL_DEGEN * scale;
    let w = CMat::from_fn(n, n, |j, k| idle.z_inv[(0, j)] * idle.cal_m[(j, k)] * idle.z[(k, 0)]);
    let mut values = Vec::with_capacity(taus.len());
    for &t in taus {
        let mut sum = C64::new(0.0, 0.0);
        let mut mag = 0.0;
        for j in 0..n {
            for k in 0..n {
                let term = w[(j, k)] * divided_exp(idle.mu[j], idle.mu[k], t, tol);
                sum += term;
                mag += term.norm();
            }
        }
        values.push(checked_real(sum, mag)?);
    }
    Ok(CountingSeries { n: 1, grid: taus.to_vec(), values })
}

/// Noise spectral density `S(ω) = 2[I - 2 Re Σ_{j≥2} A_j/(λ_j + iω)]` with
/// `A_j = M_{1,j} M_{j,1}`, i.e. the exact transform of the connected
/// two-time current correlator including the shot-noise term.
pub fn noise_spectrum(sd: &SpectralData, omegas: &[f64]) -> Result<Vec<f64>> {
    let i = steady_current(sd)?;
    let amps = sd.c2_amplitudes();
    Ok(omegas
        .iter()
        .map(|&w| {
            let mut s = C64::new(0.0, 0.0);
            for j in 1..sd.dim() {
                s += amps[j] / (sd.lambda[j] + C64::new(0.0, w));
            }
            2.0 * (i - 2.0 * s.re)
        })
        .collect())
}

/// Closed-form noise spectrum of the single-level dot.
pub fn noise_spectrum_qd(gamma_l: f64, gamma_r: f64, omegas: &[f64]) -> Vec<f64> {
    let g = gamma_l + gamma_r;
    let i = if g > 0.0 { gamma_l * gamma_r / g } else { 0.0 };
    omegas
        .iter()
        .map(|w| 2.0 * i * (1.0 - 2.0 * gamma_l * gamma_r / (g * g + w * w)))
        .collect()
}

/// Zero-frequency noise over `2⟨I⟩`.
pub fn fano(sd: &SpectralData) -> Result<f64> {
    let i = steady_current(sd)?;
    if i <= 0.0 {
        return Err(Error::Normalization("Fano factor undefined for zero current".into()));
    }
    Ok(noise_spectrum(sd, &[0.0])?[0] / (2.0 * i))
}

/// Vector `G e^{𝓓τ} Z e₁` pieces for the waiting-time density:
/// returns the row `e₁ᵀ(D²Z⁻¹ - 2DZ⁻¹𝓓 + Z⁻¹𝓓²)` and the column `Z e₁`.
fn wtd_kernel(sd: &SpectralData) -> Result<(CVec, CVec, &IdleBasis)> {
    let idle = sd.idle()?;
    let d = sd.d_matrix();
    let dd = idle.cal_d_matrix();
    let g = &d * &d * &idle.z_inv - &d * &idle.z_inv * &dd * re(2.0) + &idle.z_inv * &dd * &dd;
    Ok((g.row(0).transpose(), idle.z.column(0).into_owned(), idle))
}

/// Normalization constant `c = -e₁ᵀ G 𝓓⁻¹ Z e₁` and mean waiting time
/// `e₁ᵀ G 𝓓⁻² Z e₁ / c`, both exact integrals of the exponential sum.
pub fn wtd_moments(sd: &SpectralData) -> Result<(f64, f64)> {
    let (row, col, idle) = wtd_kernel(sd)?;
    let mut c0 = C64::new(0.0, 0.0);
    let mut c1 = C64::new(0.0, 0.0);
    let mut mag = 0.0;
    for j in 0..sd.dim() {
        let w = row[j] * col[j];
        c0 -= w / idle.mu[j];
        c1 += w / (idle.mu[j] * idle.mu[j]);
        mag += (w / idle.mu[j]).norm();
    }
    let c = checked_real(c0, mag)?;
    if !(c > 0.0) {
        return Err(Error::Normalization(format!("WTD normalization constant {c:.3e} is not positive")));
    }
    let m1 = checked_real(c1, c1.norm())?;
    Ok((c, m1 / c))
}

/// Waiting-time density `(1/c) e₁ᵀ(D²Z⁻¹ - 2DZ⁻¹𝓓 + Z⁻¹𝓓²) e^{𝓓τ} Z e₁`.
pub fn wtd_from_matrices(sd: &SpectralData, taus: &[f64]) -> Result<Wtd> {
    check_sorted(taus)?;
    let (c, mean_tau) = wtd_moments(sd)?;
    let (row, col, idle) = wtd_kernel(sd)?;
    let amps: Vec<C64> = (0..sd.dim()).map(|j| row[j] * col[j] / c).collect();
    let mut density = Vec::with_capacity(taus.len());
    for &t in taus {
        let (s, mag) = exp_sum(&amps, &idle.mu, t);
        density.push(checked_real(s, mag)?);
    }
    let peak = density.iter().cloned().fold(0.0_f64, f64::max);
    if let Some((k, v)) = density.iter().enumerate().find(|(_, &v)| v < -TOL_POS * peak.max(1.0)) {
        return Err(Error::NegativeDensity { tau: taus[k], value: *v });
    }
    Ok(Wtd { grid: taus.to_vec(), density, mean_tau, c })
}

/// Cumulative waiting-time distribution `(1/c) e₁ᵀ G 𝓓⁻¹ (e^{𝓓τ} - 1) Z e₁`.
pub fn wtd_cdf(sd: &SpectralData, taus: &[f64]) -> Result<Vec<f64>> {
    let (c, _) = wtd_moments(sd)?;
    let (row, col, idle) = wtd_kernel(sd)?;
    taus.iter()
        .map(|&t| {
            let mut s = C64::new(0.0, 0.0);
            let mut mag = 0.0;
            for j in 0..sd.dim() {
                let term = row[j] * col[j] * ((idle.mu[j] * t).exp() - 1.0) / (idle.mu[j] * c);
                s += term;
                mag += term.norm();
            }
            checked_real(s, mag)
        })
        .collect()
}

/// Uniform grid on `[0, t_max]` where `t_max` doubles from the slowest idle
/// time scale until the density mass beyond it drops below `1e-6` of the total.
pub fn default_wtd_grid(sd: &SpectralData, points: usize) -> Result<Vec<f64>> {
    let slowest = sd.idle()?.mu.iter().map(|m| -m.re).fold(f64::INFINITY, f64::min);
    let mut t_max = 1.0 / slowest;
    for _ in 0..64 {
        let tail = 1.0 - wtd_cdf(sd, &[t_max])?[0];
        if tail.abs() < 1e-6 {
            break;
        }
        t_max *= 2.0;
    }
    Ok(uniform_grid(0.0, t_max / (points - 1) as f64, points))
}

pub fn uniform_grid(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| start + step * k as f64).collect()
}

/// Returns the step of a uniform grid or `NonUniformGrid`.
pub fn grid_step(grid: &[f64]) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::InvalidInput("grid needs at least two points".into()));
    }
    let h = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    if !(h > 0.0) {
        return Err(Error::UnsortedPoints);
    }
    for (k, &t) in grid.iter().enumerate() {
        if (t - (grid[0] + h * k as f64)).abs() > 1e-9 * h.max(t.abs()) {
            return Err(Error::NonUniformGrid);
        }
    }
    Ok(h)
}

/// Trapezoidal integral of sampled values.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    grid.windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Waiting-time density from a sampled `P0` by second differences.
///
/// The curvature is Richardson-extrapolated from steps `h` and `2h`; the mean
/// waiting time is `-1/P0'(0)` with a fourth-order one-sided difference. The
/// returned grid drops the two samples at each end.
pub fn wtd_from_p0(p0: &CountingSeries, rel_tol: f64) -> Result<Wtd> {
    let h = grid_step(&p0.grid)?;
    let f = &p0.values;
    let n = f.len();
    if n < 7 {
        return Err(Error::InvalidInput("need at least 7 samples of P0".into()));
    }
    let slope0 = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h);
    if !(slope0 < 0.0) || slope0.abs() < 1e-300 {
        return Err(Error::Normalization("P0 does not decay at the origin".into()));
    }
    let mean_tau = -1.0 / slope0;
    let mut grid = Vec::with_capacity(n - 4);
    let mut density = Vec::with_capacity(n - 4);
    let mut worst = 0.0_f64;
    let mut peak = 0.0_f64;
    for i in 2..n - 2 {
        let d1 = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / (h * h);
        let d2 = (f[i + 2] - 2.0 * f[i] + f[i - 2]) / (4.0 * h * h);
        let rich = (4.0 * d1 - d2) / 3.0;
        worst = worst.max((d1 - rich).abs());
        peak = peak.max(rich.abs());
        grid.push(p0.grid[i]);
        density.push(mean_tau * rich);
    }
    if peak == 0.0 {
        return Err(Error::Normalization("P0 has no curvature".into()));
    }
    if worst > rel_tol * peak {
        return Err(Error::GridTooCoarse { discrepancy: worst / peak });
    }
    Ok(Wtd { grid, density, mean_tau, c: 1.0 / mean_tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::random_model;
    use crate::linalg::c;
    use crate::quadrature::{correlation_direct, integrate, CountingOracle};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qd(gl: f64, gr: f64, eps: f64) -> CmpsModel {
        crate::qd::build_qd_model(&crate::qd::QdParams::new(gl, gr, eps).unwrap()).unwrap()
    }

    #[test]
    fn quantum_dot_current_and_c2() {
        let (gl, gr) = (13.23, 4.81);
        let sd = SpectralData::from_model(&qd(gl, gr, 1.0)).unwrap();
        let i = gl * gr / (gl + gr);
        assert!((steady_current(&sd).unwrap() - i).abs() < 1e-13);
        let taus = uniform_grid(0.0, 0.01, 50);
        let raw = c2_curve(&sd, &taus, Normalization::Raw).unwrap();
        let per = c2_curve(&sd, &taus, Normalization::PerEvent).unwrap();
        for (k, &t) in taus.iter().enumerate() {
            let expected = i * (1.0 - (-(gl + gr) * t).exp());
            assert!((per.values[k] - expected).abs() < 1e-12);
            assert!((raw.values[k] - i * expected).abs() < 1e-11);
        }
        assert!(raw.values[0].abs() < 1e-13);
    }

    #[test]
    fn zero_measured_operator_gives_zero_correlations() {
        let k = CMat::from_row_slice(2, 2, &[re(0.0), re(0.3), re(0.3), re(1.0)]);
        let r1 = CMat::from_row_slice(2, 2, &[re(0.0), re(1.0), re(0.5), re(0.0)]);
        let m = CmpsModel::new(k, vec![r1, CMat::zeros(2, 2)], 2).unwrap();
        let sd = SpectralData::from_model(&m).unwrap();
        assert_eq!(steady_current(&sd).unwrap(), 0.0);
        let c = correlation(&sd, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn eigen_sums_match_matrix_exponentials() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for d in [2, 3] {
            for _ in 0..5 {
                let m = random_model(d, 2, &mut rng);
                let sd = SpectralData::from_model(&m).unwrap();
                for pts in [vec![0.0, 0.3], vec![0.1, 0.2, 0.7], vec![0.0, 0.0, 0.4]] {
                    let a = correlation(&sd, &pts).unwrap();
                    let b = correlation_direct(&m, &pts).unwrap();
                    assert!((a - b).abs() < 1e-10 * b.abs().max(1.0), "{a} {b}");
                }
                let c2 = c2_curve(&sd, &[0.3], Normalization::Raw).unwrap();
                assert!((c2.values[0] - correlation(&sd, &[0.0, 0.3]).unwrap()).abs() < 1e-10);
                let c3 = c3_surface(&sd, &[0.1], &[0.6], Normalization::Raw).unwrap();
                let direct = correlation_direct(&m, &[0.0, 0.1, 0.7]).unwrap();
                assert!((c3.values[0] - direct).abs() < 1e-10 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn unsorted_points_are_rejected() {
        let sd = SpectralData::from_model(&qd(2.0, 1.0, 0.0)).unwrap();
        assert!(matches!(correlation(&sd, &[0.5, 0.1]), Err(Error::UnsortedPoints)));
        assert!(matches!(p0_curve(&sd, &[0.5, 0.1]), Err(Error::UnsortedPoints)));
    }

    #[test]
    fn counting_closed_forms_match_quadrature() {
        let m = qd(13.23, 4.81, 1.0);
        let sd = SpectralData::from_model(&m).unwrap();
        let oracle = CountingOracle::new(&m).unwrap();
        let taus = [0.0, 0.05, 0.2];
        let p0 = p0_curve(&sd, &taus).unwrap();
        let p1 = p1_curve(&sd, &taus).unwrap();
        assert!((p0.values[0] - 1.0).abs() < 1e-13);
        assert!(p1.values[0].abs() < 1e-13);
        for (k, &t) in taus.iter().enumerate() {
            assert!((p0.values[k] - oracle.pn(0, t).unwrap()).abs() < 1e-10);
            assert!((p1.values[k] - oracle.pn(1, t).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn confluent_limit_is_continuous() {
        let a = c(-2.0, 0.5);
        let near = divided_exp(a, a + c(1e-7, 0.0), 0.8, 0.0);
        let conf = divided_exp(a, a, 0.8, 1e-6);
        assert!((near - conf).norm() < 1e-6);
    }

    #[test]
    fn quantum_dot_noise_and_fano() {
        let (gl, gr) = (13.23, 4.81);
        let sd = SpectralData::from_model(&qd(gl, gr, 0.4)).unwrap();
        let omegas = [0.0, 1.0, 10.0, 100.0];
        let general = noise_spectrum(&sd, &omegas).unwrap();
        let closed = noise_spectrum_qd(gl, gr, &omegas);
        for (a, b) in general.iter().zip(&closed) {
            assert!((a - b).abs() < 1e-12);
        }
        let f = fano(&sd).unwrap();
        let expected = 1.0 - 2.0 * gl * gr / ((gl + gr) * (gl + gr));
        assert!((f - expected).abs() < 1e-12);
        assert!((f - 0.609).abs() < 5e-4);
        let sym = SpectralData::from_model(&qd(3.0, 3.0, 0.0)).unwrap();
        assert!((fano(&sym).unwrap() - 0.5).abs() < 1e-12);
        let far = noise_spectrum_qd(gl, gr, &[1e9])[0];
        assert!((far - 2.0 * gl * gr / (gl + gr)).abs() < 1e-6);
    }

    #[test]
    fn macdonald_transform_of_c2_reproduces_noise() {
        let (gl, gr) = (13.23, 4.81);
        let sd = SpectralData::from_model(&qd(gl, gr, 0.0)).unwrap();
        let i = steady_current(&sd).unwrap();
        for w in [0.0, 5.0, 30.0] {
            let connected = |t: f64| {
                let c2 = c2_curve(&sd, &[t], Normalization::Raw).unwrap().values[0];
                (c2 - i * i) * (w * t).cos()
            };
            let integral = integrate(connected, 0.0, 3.0, 1e-12).unwrap();
            let s = 2.0 * (i + 2.0 * integral);
            let expected = noise_spectrum_qd(gl, gr, &[w])[0];
            assert!((s - expected).abs() < 1e-9, "{s} vs {expected}");
        }
    }

    #[test]
    fn quantum_dot_wtd_closed_form() {
        let (gl, gr) = (13.23, 4.81);
        let sd = SpectralData::from_model(&qd(gl, gr, 1.0)).unwrap();
        let taus = uniform_grid(0.0, 0.01, 200);
        let w = wtd_from_matrices(&sd, &taus).unwrap();
        for (t, v) in taus.iter().zip(&w.density) {
            let expected = gl * gr * ((-gr * t).exp() - (-gl * t).exp()) / (gl - gr);
            assert!((v - expected).abs() < 1e-11);
        }
        assert!(w.density[0].abs() < 1e-12);
        assert!((w.mean_tau - (1.0 / gl + 1.0 / gr)).abs() < 1e-12);
        let grid = default_wtd_grid(&sd, 20001).unwrap();
        let full = wtd_from_matrices(&sd, &grid).unwrap();
        assert!((trapezoid(&full.grid, &full.density) - 1.0).abs() < 1e-3);
        let cdf = wtd_cdf(&sd, &[0.0, 1e3]).unwrap();
        assert!(cdf[0].abs() < 1e-14 && (cdf[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wtd_from_poisson_p0() {
        let g = 2.5;
        let grid = uniform_grid(0.0, 0.002, 800);
        let p0 = CountingSeries { n: 0, grid: grid.clone(), values: grid.iter().map(|t| (-g * t).exp()).collect() };
        let w = wtd_from_p0(&p0, 1e-3).unwrap();
        assert!((w.mean_tau - 1.0 / g).abs() < 1e-9);
        for (t, v) in w.grid.iter().zip(&w.density) {
            assert!((v - g * (-g * t).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn wtd_from_p0_errors() {
        let grid = uniform_grid(0.0, 0.1, 20);
        let flat = CountingSeries { n: 0, grid: grid.clone(), values: vec![1.0; 20] };
        assert!(matches!(wtd_from_p0(&flat, 1e-3), Err(Error::Normalization(_))));
        let coarse = CountingSeries { n: 0, grid: grid.clone(), values: grid.iter().map(|t| (-30.0 * t).exp()).collect() };
        assert!(matches!(wtd_from_p0(&coarse, 1e-3), Err(Error::GridTooCoarse { .. })));
        let mut bent = grid.clone();
        bent[3] += 0.01;
        let bad = CountingSeries { n: 0, grid: bent, values: vec![1.0; 20] };
        assert!(matches!(wtd_from_p0(&bad, 1e-3), Err(Error::NonUniformGrid)));
    }

    #[test]
    fn representation_round_trip_preserves_observables() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_model(2, 1, &mut rng);
        let sd = SpectralData::from_model(&m).unwrap();
        let (mu, cal_m, _) = drift_from_transfer(&sd.lambda, &sd.m).unwrap();
        assert!(linalg::multiset_distance(&mu, &sd.idle().unwrap().mu) < 1e-10);
        let (lambda, m2, _) = transfer_from_drift(&mu, &cal_m).unwrap();
        let back = SpectralData::from_transfer(lambda, m2).unwrap();
        let via_drift = SpectralData::from_drift(mu.clone(), cal_m.clone()).unwrap();
        let a = p0_curve(&sd, &[0.0, 0.4, 1.1]).unwrap().values;
        let b = p0_curve(&via_drift, &[0.0, 0.4, 1.1]).unwrap().values;
        assert!(linalg::relative_sup_distance(&a, &b) < 1e-10);
        let taus = uniform_grid(0.0, 0.1, 30);
        let a = c2_curve(&sd, &taus, Normalization::Raw).unwrap().values;
        let b = c2_curve(&back, &taus, Normalization::Raw).unwrap().values;
        assert!(linalg::relative_sup_distance(&a, &b) < 1e-10);
        let a = p1_curve(&sd, &taus).unwrap().values;
        let b = p1_curve(&back, &taus).unwrap().values;
        assert!(linalg::relative_sup_distance(&a, &b) < 1e-10);
    }
}
