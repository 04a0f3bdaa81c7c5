//! Single-level quantum dot: model, rate fitting from a spike train, and the
//! comparison of reconstructed and empirical waiting times.
//!
//! Basis order is (empty, occupied). Channel L fills the dot, channel R
//! empties it and is the one observed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{self, CorrelationSeries, Normalization, SpectralData, Wtd};
use crate::linalg::{re, CMat};
use crate::lindblad::CmpsModel;
use crate::stats;
use crate::trajectory::{self, SpikeTrain};

/// KS p-value above which empirical and reconstructed waiting times are
/// reported as matching.
pub const KS_MATCH_PVALUE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QdParams {
    /// Tunneling-in rate (kHz).
    pub gamma_l: f64,
    /// Tunneling-out rate (kHz).
    pub gamma_r: f64,
    /// Level energy (angular kHz).
    #[serde(default)]
    pub epsilon: f64,
}

impl QdParams {
    pub fn new(gamma_l: f64, gamma_r: f64, epsilon: f64) -> Result<Self> {
        let p = QdParams { gamma_l, gamma_r, epsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_l > 0.0 && self.gamma_r > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidModel(format!(
                "rates must be positive, got gamma_l = {}, gamma_r = {}",
                self.gamma_l, self.gamma_r
            )));
        }
        Ok(())
    }

    /// `Γ_L Γ_R / (Γ_L + Γ_R)`.
    pub fn current(&self) -> f64 {
        self.gamma_l * self.gamma_r / (self.gamma_l + self.gamma_r)
    }
}

/// `K = diag(0, ε)`, `R_L = √Γ_L |1⟩⟨0|`, `R_R = √Γ_R |0⟩⟨1|`, channel R measured.
pub fn build_qd_model(params: &QdParams) -> Result<CmpsModel> {
    params.validate()?;
    let k = CMat::from_row_slice(2, 2, &[re(0.0), re(0.0), re(0.0), re(params.epsilon)]);
    let rl = CMat::from_row_slice(2, 2, &[re(0.0), re(0.0), re(params.gamma_l.sqrt()), re(0.0)]);
    let rr = CMat::from_row_slice(2, 2, &[re(0.0), re(params.gamma_r.sqrt()), re(0.0), re(0.0)]);
    CmpsModel::with_labels(k, vec![rl, rr], vec!["L".into(), "R".into()], 2)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Autocorrelation bin width (ms); default `1/(50 Ī)`, never finer than the train's own bins.
    pub bin_width: Option<f64>,
    /// Longest lag (ms); default `2.5/Ī`, which spans at least ten decay times.
    pub max_lag: Option<f64>,
    /// Bins whose width exceeds `max_decay_per_bin / Γ` cannot resolve the decay.
    pub max_decay_per_bin: Option<f64>,
}

const DEFAULT_MAX_DECAY_PER_BIN: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub params: QdParams,
    /// Fitted decay rate `Γ_L + Γ_R` (kHz).
    pub gamma_sum: f64,
    /// Mean current used in the inversion (kHz).
    pub current: f64,
    /// Fitted `p + b e^{-Γτ}` plateau and amplitude.
    pub plateau: f64,
    pub amplitude: f64,
    /// Rms misfit relative to the plateau.
    pub fit_rms: f64,
    pub c2: CorrelationSeries,
    pub diagnostics: Vec<String>,
}

/// Best `(p, b)` for fixed `Γ` (and fixed `p` when given) and the resulting
/// sum of squares.
fn project(taus: &[f64], y: &[f64], gamma: f64, plateau: Option<f64>) -> (f64, f64, f64) {
    if let Some(p) = plateau {
        let (mut see, mut sye) = (0.0, 0.0);
        for (&t, &v) in taus.iter().zip(y) {
            let e = (-gamma * t).exp();
            see += e * e;
            sye += (v - p) * e;
        }
        let b = if see > 0.0 { sye / see } else { 0.0 };
        let cost = taus.iter().zip(y).map(|(&t, &v)| (p + b * (-gamma * t).exp() - v).powi(2)).sum();
        return (p, b, cost);
    }
    let (mut s11, mut s1e, mut see, mut sy, mut sye) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &v) in taus.iter().zip(y) {
        let e = (-gamma * t).exp();
        s11 += 1.0;
        s1e += e;
        see += e * e;
        sy += v;
        sye += v * e;
    }
    let det = s11 * see - s1e * s1e;
    if det.abs() < 1e-300 {
        return (sy / s11, 0.0, f64::INFINITY);
    }
    let p = (see * sy - s1e * sye) / det;
    let b = (s11 * sye - s1e * sy) / det;
    let cost = taus.iter().zip(y).map(|(&t, &v)| (p + b * (-gamma * t).exp() - v).powi(2)).sum();
    (p, b, cost)
}

/// Fits `p + b e^{-Γτ}` to the positive lags of `c2` by a log-spaced scan in
/// `Γ` refined with golden-section search; `(p, b)` enter linearly and `p`
/// may be pinned.
fn fit_decay(c2: &CorrelationSeries, plateau: Option<f64>) -> Result<(f64, f64, f64, f64)> {
    let taus: Vec<f64> = c2.taus();
    let keep: Vec<usize> = (0..taus.len()).filter(|&k| taus[k] > 0.0).collect();
    if keep.len() < 4 {
        return Err(Error::UnresolvableDecay("fewer than four positive lags".into()));
    }
    let t: Vec<f64> = keep.iter().map(|&k| taus[k]).collect();
    let y: Vec<f64> = keep.iter().map(|&k| c2.values[k]).collect();
    let h = t[0];
    let t_max = *t.last().unwrap();
    let (lo, hi) = ((0.1 / t_max).ln(), (20.0 / h).ln());
    let n = 400;
    let cost = |lg: f64| project(&t, &y, lg.exp(), plateau).2;
    let (mut best, mut best_cost) = (0, f64::INFINITY);
    for k in 0..=n {
        let c = cost(lo + (hi - lo) * k as f64 / n as f64);
        if c < best_cost {
            best = k;
            best_cost = c;
        }
    }
    if best == 0 || best == n {
        return Err(Error::UnresolvableDecay(format!(
            "no decay between {:.3e} and {:.3e} kHz fits the autocorrelation",
            lo.exp(),
            hi.exp()
        )));
    }
    let step = (hi - lo) / n as f64;
    let (mut a, mut b) = (lo + step * (best - 1) as f64, lo + step * (best + 1) as f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (cost(x1), cost(x2));
    while b - a > 1e-12 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = cost(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = cost(x2);
        }
    }
    let gamma = (0.5 * (a + b)).exp();
    let (p, amp, sq) = project(&t, &y, gamma, plateau);
    Ok((gamma, p, amp, (sq / t.len() as f64).sqrt() / p.abs().max(f64::MIN_POSITIVE)))
}

/// Inverts `Γ = Γ_L + Γ_R`, `I = Γ_L Γ_R / Γ` with `Γ_L ≥ Γ_R`.
fn invert_rates(gamma: f64, current: f64, diagnostics: &mut Vec<String>) -> (f64, f64) {
    let disc = gamma * gamma - 4.0 * current * gamma;
    if disc <= 0.0 {
        diagnostics.push(format!(
            "degenerate rates: (Γ_L - Γ_R)² = {disc:.3e} is not positive, returning Γ_L = Γ_R"
        ));
        return (gamma / 2.0, gamma / 2.0);
    }
    let root = disc.sqrt();
    if root < 0.05 * gamma {
        diagnostics.push("nearly degenerate rates: which one is Γ_L is a convention".into());
    }
    ((gamma + root) / 2.0, (gamma - root) / 2.0)
}

/// Fits the rates from an autocorrelation series. The current defaults to
/// the plateau of `c2` (per-event) or its square root (raw).
pub fn fit_rates_from_c2(c2: &CorrelationSeries, current: Option<f64>) -> Result<RateFit> {
    if c2.order != 2 {
        return Err(Error::InvalidInput(format!("expected a C2 series, got order {}", c2.order)));
    }
    // a known current fixes the plateau and leaves two free parameters
    let pinned = current.map(|i| match c2.normalization {
        Normalization::PerEvent => i,
        Normalization::Raw => i * i,
    });
    let (gamma, plateau, amplitude, fit_rms) = fit_decay(c2, pinned)?;
    if !(amplitude < 0.0) || !(plateau > 0.0) {
        return Err(Error::UnresolvableDecay("autocorrelation shows no antibunching dip".into()));
    }
    let current = current.unwrap_or(match c2.normalization {
        Normalization::PerEvent => plateau,
        Normalization::Raw => plateau.sqrt(),
    });
    let mut diagnostics = vec!["ε does not affect channel-R statistics; set to 0".into()];
    let (gamma_l, gamma_r) = invert_rates(gamma, current, &mut diagnostics);
    Ok(RateFit {
        params: QdParams { gamma_l, gamma_r, epsilon: 0.0 },
        gamma_sum: gamma,
        current,
        plateau,
        amplitude,
        fit_rms,
        c2: c2.clone(),
        diagnostics,
    })
}

/// Fits the rates from a train: `Γ` from the autocorrelation decay and `Ī`
/// from the click count.
pub fn fit_rates(train: &SpikeTrain, opts: &FitOptions) -> Result<RateFit> {
    if train.clicks.len() < 2 {
        return Err(Error::EmptyTrain(format!("{} clicks", train.clicks.len())));
    }
    let rate = train.rate();
    let mut bw = opts.bin_width.unwrap_or(1.0 / (50.0 * rate));
    if let Some(res) = train.bin_width {
        bw = (bw / res).round().max(1.0) * res;
    }
    let max_lag = opts.max_lag.unwrap_or(2.5 / rate).min(train.duration / 10.0 * (1.0 - 1e-12));
    let c2 = trajectory::estimate_c2(train, bw, max_lag)?;
    let fit = fit_rates_from_c2(&c2, Some(rate))?;
    let limit = opts.max_decay_per_bin.unwrap_or(DEFAULT_MAX_DECAY_PER_BIN);
    if fit.gamma_sum * bw > limit {
        return Err(Error::UnresolvableDecay(format!(
            "bin width {bw:.3e} ms exceeds {limit}/Γ with Γ ≈ {:.3e} kHz",
            fit.gamma_sum
        )));
    }
    Ok(fit)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub fit: FitOptions,
    /// Histogram bin width (ms) for the empirical density.
    pub wtd_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdReport {
    pub fit: RateFit,
    /// Model density at the histogram bin centres.
    pub reconstructed: Wtd,
    /// Model density averaged over each histogram bin.
    pub reconstructed_binned: Vec<f64>,
    pub empirical: Wtd,
    /// Sup distance between histogram and bin-averaged model density, relative to the model peak.
    pub sup_distance: f64,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
    pub n_waits: usize,
    pub matches: bool,
}

/// Fits rates, rebuilds the model and compares its waiting-time density with
/// the histogram of the same train.
pub fn qd_wtd_pipeline(train: &SpikeTrain, opts: &PipelineOptions) -> Result<QdReport> {
    train.validate()?;
    let fit = fit_rates(train, &opts.fit)?;
    let model = build_qd_model(&fit.params)?;
    let sd = SpectralData::from_model(&model)?;
    let empirical = trajectory::estimate_wtd(train, opts.wtd_width)?;
    let reconstructed = forward::wtd_from_matrices(&sd, &empirical.grid)?;
    let edges = trajectory::histogram_edges(&empirical);
    let cdf_edges = forward::wtd_cdf(&sd, &edges)?;
    let reconstructed_binned: Vec<f64> = cdf_edges
        .windows(2)
        .zip(edges.windows(2))
        .map(|(f, e)| (f[1] - f[0]) / (e[1] - e[0]))
        .collect();
    let peak = reconstructed_binned.iter().cloned().fold(0.0_f64, f64::max);
    let sup_distance = empirical
        .density
        .iter()
        .zip(&reconstructed_binned)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max)
        / peak.max(f64::MIN_POSITIVE);
    let mut waits = train.waiting_times();
    waits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let cdf = forward::wtd_cdf(&sd, &waits)?;
    let ks_statistic = stats::ks_statistic(&waits, &cdf);
    let ks_pvalue = stats::ks_pvalue(ks_statistic, waits.len());
    Ok(QdReport {
        fit,
        reconstructed,
        reconstructed_binned,
        empirical,
        sup_distance,
        ks_statistic,
        ks_pvalue,
        n_waits: waits.len(),
        matches: ks_pvalue > KS_MATCH_PVALUE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::uniform_grid;
    use crate::trajectory::simulate;

    #[test]
    fn model_structure() {
        let m = build_qd_model(&QdParams::new(13.23, 4.81, 0.7).unwrap()).unwrap();
        for r in &m.jump_ops {
            assert_eq!(r * r, CMat::zeros(2, 2));
        }
        assert_eq!(m.measured_channel, 2);
        assert!(QdParams::new(-1.0, 1.0, 0.0).is_err());
        let sd = SpectralData::from_model(&m).unwrap();
        let i = 13.23 * 4.81 / (13.23 + 4.81);
        assert!((forward::steady_current(&sd).unwrap() - i).abs() < 1e-12 * i);
    }

    #[test]
    fn symmetric_rates_give_half_fano() {
        let sd = SpectralData::from_model(&build_qd_model(&QdParams::new(3.0, 3.0, 1.3).unwrap()).unwrap()).unwrap();
        assert!((forward::fano(&sd).unwrap() - 0.5).abs() < 1e-12);
    }

    fn exact_c2(gl: f64, gr: f64, taus: &[f64]) -> CorrelationSeries {
        let i = gl * gr / (gl + gr);
        CorrelationSeries {
            order: 2,
            grid: taus.iter().map(|&t| vec![t]).collect(),
            values: taus.iter().map(|&t| i * (1.0 - (-(gl + gr) * t).exp())).collect(),
            normalization: Normalization::PerEvent,
        }
    }

    #[test]
    fn noiseless_fit_recovers_rates() {
        let c2 = exact_c2(13.23, 4.81, &uniform_grid(0.0, 0.005, 120));
        let fit = fit_rates_from_c2(&c2, None).unwrap();
        assert!((fit.params.gamma_l - 13.23).abs() < 1e-6, "{:?}", fit.params);
        assert!((fit.params.gamma_r - 4.81).abs() < 1e-6);
        assert_eq!(fit.params.epsilon, 0.0);
        assert!(!fit.diagnostics.is_empty());
    }

    #[test]
    fn symmetric_fit_returns_tie_with_warning() {
        let c2 = exact_c2(5.0, 5.0, &uniform_grid(0.0, 0.01, 150));
        let fit = fit_rates_from_c2(&c2, None).unwrap();
        assert!((fit.params.gamma_l - fit.params.gamma_r).abs() < 1e-3 * fit.gamma_sum);
        assert!(fit.diagnostics.iter().any(|d| d.contains("degenerate")));
    }

    #[test]
    fn flat_autocorrelation_is_unresolvable() {
        let taus = uniform_grid(0.0, 0.01, 100);
        let c2 = CorrelationSeries {
            order: 2,
            grid: taus.iter().map(|&t| vec![t]).collect(),
            values: vec![2.0; 100],
            normalization: Normalization::PerEvent,
        };
        assert!(matches!(fit_rates_from_c2(&c2, None), Err(Error::UnresolvableDecay(_))));
    }

    #[test]
    fn coarse_bins_are_unresolvable() {
        let model = build_qd_model(&QdParams::new(13.23, 4.81, 0.0).unwrap()).unwrap();
        let train = simulate(&model, 2000.0, 4).unwrap().remove(1).binned(0.5).unwrap();
        assert!(matches!(fit_rates(&train, &FitOptions::default()), Err(Error::UnresolvableDecay(_))));
    }

    #[test]
    fn epsilon_does_not_change_the_measured_train() {
        let a = build_qd_model(&QdParams::new(6.0, 2.0, 0.0).unwrap()).unwrap();
        let b = build_qd_model(&QdParams::new(6.0, 2.0, 40.0).unwrap()).unwrap();
        let ta = simulate(&a, 500.0, 8).unwrap().remove(1);
        let tb = simulate(&b, 500.0, 8).unwrap().remove(1);
        assert_eq!(ta.clicks.len(), tb.clicks.len());
        for (x, y) in ta.clicks.iter().zip(&tb.clicks) {
            assert!((x - y).abs() < 1e-6, "{x} {y}");
        }
    }

    #[test]
    fn empty_train_is_rejected() {
        let t = SpikeTrain { clicks: vec![], duration: 10.0, channel: 2, seed: 0, bin_width: None };
        assert!(matches!(qd_wtd_pipeline(&t, &PipelineOptions::default()), Err(Error::EmptyTrain(_))));
    }
}
