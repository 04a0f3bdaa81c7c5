//! Quantum-jump unraveling of a monitored model into detector spike trains,
//! and the empirical estimators applied to such trains.
//!
//! Random streams: trajectory `i` of a run with seed `s` draws from
//! `ChaCha8Rng::seed_from_u64(s)` on stream `i`, so batches are reproducible
//! independent of thread count and scheduling.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{CorrelationSeries, CountingSeries, Normalization, Wtd};
use crate::io::format_f64;
use crate::linalg::{self, re, CMat, CVec, C64};
use crate::lindblad::{self, CmpsModel};

/// Absolute tolerance of the jump-time bisection (ms).
pub const JUMP_TIME_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    /// Click times in ms, strictly increasing.
    pub clicks: Vec<f64>,
    /// Observation window `[0, duration]` in ms.
    pub duration: f64,
    /// 1-based jump channel that produced the clicks.
    pub channel: usize,
    pub seed: u64,
    /// Detector time resolution; clicks sit on multiples of it when set.
    pub bin_width: Option<f64>,
}

impl SpikeTrain {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::InvalidInput(format!("duration must be positive, got {}", self.duration)));
        }
        for w in self.clicks.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(format!("click times not strictly increasing at {}", w[1])));
            }
        }
        if let (Some(&first), Some(&last)) = (self.clicks.first(), self.clicks.last()) {
            if first < 0.0 || last > self.duration {
                return Err(Error::InvalidInput("click times outside [0, duration]".into()));
            }
        }
        if let Some(bw) = self.bin_width {
            if !(bw > 0.0) {
                return Err(Error::InvalidInput("bin width must be positive".into()));
            }
            if let Some(t) = self.clicks.iter().find(|&&t| ((t / bw).round() * bw - t).abs() > 1e-9 * bw.max(t)) {
                return Err(Error::InvalidInput(format!("click {t} is not a multiple of the bin width {bw}")));
            }
        }
        Ok(())
    }

    pub fn rate(&self) -> f64 {
        self.clicks.len() as f64 / self.duration
    }

    /// Snaps clicks down to multiples of `bin_width`; clicks sharing a bin
    /// become one, as for a detector that cannot resolve them.
    pub fn binned(&self, bin_width: f64) -> Result<SpikeTrain> {
        if !(bin_width > 0.0) {
            return Err(Error::InvalidInput("bin width must be positive".into()));
        }
        let mut clicks: Vec<f64> = Vec::with_capacity(self.clicks.len());
        let mut last_bin = None;
        for &t in &self.clicks {
            let k = (t / bin_width).floor() as i64;
            if last_bin != Some(k) {
                clicks.push(k as f64 * bin_width);
                last_bin = Some(k);
            }
        }
        Ok(SpikeTrain { clicks, bin_width: Some(bin_width), ..self.clone() })
    }

    /// Successive waiting times.
    pub fn waiting_times(&self) -> Vec<f64> {
        self.clicks.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.clicks.len() * 20 + 128);
        let _ = writeln!(out, "# duration={}", format_f64(self.duration));
        let _ = writeln!(out, "# channel={}", self.channel);
        let _ = writeln!(out, "# seed={}", self.seed);
        if let Some(bw) = self.bin_width {
            let _ = writeln!(out, "# bin_width={}", format_f64(bw));
        }
        for &t in &self.clicks {
            out.push_str(&format_f64(t));
            out.push('\n');
        }
        out
    }

    /// Parses the text format. Without a `duration` header the last click
    /// time is used.
    pub fn from_text(text: &str) -> Result<SpikeTrain> {
        let mut duration = None;
        let mut channel = 1;
        let mut seed = 0;
        let mut bin_width = None;
        let mut clicks = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once('=') {
                    let v = v.trim();
                    match k.trim() {
                        "duration" => duration = Some(v.parse().map_err(|_| bad("bad duration"))?),
                        "channel" => channel = v.parse().map_err(|_| bad("bad channel"))?,
                        "seed" => seed = v.parse().map_err(|_| bad("bad seed"))?,
                        "bin_width" => bin_width = Some(v.parse().map_err(|_| bad("bad bin width"))?),
                        _ => {}
                    }
                }
                continue;
            }
            let t: f64 = line.parse().map_err(|_| bad(&format!("'{line}' is not a time")))?;
            clicks.push(t);
        }
        let duration = match duration {
            Some(d) => d,
            None => *clicks.last().ok_or_else(|| Error::Parse("no duration header and no clicks".into()))?,
        };
        let train = SpikeTrain { clicks, duration, channel, seed, bin_width };
        train.validate()?;
        Ok(train)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<SpikeTrain> {
        let text = crate::error::read_text(path)?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// No-jump propagation `ψ(t) = e^{Qt} ψ₀`.
enum Propagator {
    Diagonal { v: CMat, q: Vec<C64>, v_inv: CMat },
    Dense { q: CMat },
}

impl Propagator {
    fn new(q: &CMat) -> Propagator {
        match linalg::eig_checked(q, 1e8) {
            Ok((e, v_inv)) => Propagator::Diagonal { v: e.vectors, q: e.values, v_inv },
            Err(_) => Propagator::Dense { q: q.clone() },
        }
    }

    /// Returns a closure-like state for evaluating `ψ(t)` from `ψ₀` cheaply.
    fn prepare(&self, psi: &CVec) -> CVec {
        match self {
            Propagator::Diagonal { v_inv, .. } => v_inv * psi,
            Propagator::Dense { .. } => psi.clone(),
        }
    }

    fn at(&self, prepared: &CVec, t: f64) -> CVec {
        match self {
            Propagator::Diagonal { v, q, .. } => {
                let coeffs = CVec::from_iterator(q.len(), q.iter().zip(prepared.iter()).map(|(qj, c)| c * (qj * t).exp()));
                v * coeffs
            }
            Propagator::Dense { q } => (q * re(t)).exp() * prepared,
        }
    }
}

/// Steps used to bracket the survival function: short against the fastest
/// no-jump time scale.
fn bracket_step(q: &CMat) -> f64 {
    let scale = linalg::max_abs(q) * q.nrows() as f64;
    if scale > 0.0 {
        0.5 / scale
    } else {
        f64::INFINITY
    }
}

/// Pure initial state drawn from the eigen-decomposition of the steady
/// state, or the first basis state when the steady state is not unique.
fn initial_state(model: &CmpsModel, rng: &mut ChaCha8Rng) -> Result<CVec> {
    let Ok(tdec) = lindblad::TransferDecomposition::from_model(model) else {
        return Ok(CVec::from_fn(model.d, |i, _| re(f64::from(i == 0))));
    };
    let rho = tdec.steady_state_matrix();
    let herm = (&rho + rho.adjoint()) * re(0.5);
    let eig = herm.symmetric_eigen();
    let weights: Vec<f64> = eig.eigenvalues.iter().map(|w| w.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut pick = weights.len() - 1;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            pick = k;
            break;
        }
        u -= w;
    }
    Ok(eig.eigenvectors.column(pick).into_owned())
}

/// One trajectory: clicks of every channel over `[0, duration]`.
fn run_trajectory(model: &CmpsModel, duration: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let q = lindblad::build_q(model);
    let prop = Propagator::new(&q);
    let h = bracket_step(&q);
    let mut clicks = vec![Vec::new(); model.jump_ops.len()];
    let mut psi = initial_state(model, rng)?;
    let mut t_now = 0.0;
    loop {
        // survival ‖ψ(s)‖² falls monotonically from 1; the jump happens where it hits r
        let r: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let prepared = prop.prepare(&psi);
        let survival = |s: f64| prop.at(&prepared, s).norm_squared();
        let horizon = duration - t_now;
        let mut lo = 0.0;
        let mut hi = h.min(horizon);
        while survival(hi) > r {
            if hi >= horizon {
                return Ok(clicks);
            }
            lo = hi;
            hi = (hi * 2.0).max(hi + h).min(horizon);
        }
        while hi - lo > JUMP_TIME_TOL {
            let mid = 0.5 * (lo + hi);
            if survival(mid) > r {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = hi;
        let phi = prop.at(&prepared, s);
        t_now += s;
        let weights: Vec<f64> = model.jump_ops.iter().map(|r| (r * &phi).norm_squared()).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Ok(clicks);
        }
        let mut u = rng.random::<f64>() * total;
        let mut channel = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                channel = k;
                break;
            }
            u -= w;
        }
        let jumped = &model.jump_ops[channel] * &phi;
        psi = &jumped / re(jumped.norm());
        if clicks[channel].last().is_none_or(|&last| t_now > last) {
            clicks[channel].push(t_now);
        }
    }
}

fn check_duration(duration: f64) -> Result<()> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::InvalidInput(format!("duration must be positive and finite, got {duration}")));
    }
    Ok(())
}

/// Simulates one trajectory (stream 0) and returns one train per channel.
pub fn simulate(model: &CmpsModel, duration: f64, seed: u64) -> Result<Vec<SpikeTrain>> {
    Ok(simulate_batch(model, duration, seed, 1)?.remove(0))
}

/// Simulates `trajectories` independent runs in parallel; run `i` uses stream `i`.
pub fn simulate_batch(model: &CmpsModel, duration: f64, seed: u64, trajectories: usize) -> Result<Vec<Vec<SpikeTrain>>> {
    check_duration(duration)?;
    model.validate()?;
    (0..trajectories as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            let clicks = run_trajectory(model, duration, &mut rng)?;
            Ok(clicks
                .into_iter()
                .enumerate()
                .map(|(k, c)| SpikeTrain { clicks: c, duration, channel: k + 1, seed, bin_width: None })
                .collect())
        })
        .collect()
}

fn require_clicks(train: &SpikeTrain, n: usize) -> Result<()> {
    if train.clicks.len() < n {
        return Err(Error::EmptyTrain(format!("{} clicks, need at least {n}", train.clicks.len())));
    }
    Ok(())
}

/// Binned autocorrelation normalized per event.
///
/// With `B` full bins of width `w`, counts `n_i` and mean rate `Ī = N/T`,
/// the value at lag `k w` is `Σ_i n_i n_{i+k} / ((B - k) w² Ī)` for `k ≥ 1` and
/// `Σ_i n_i (n_i - 1) / (B w² Ī)` at `k = 0`, which drops self-pairs. The
/// plateau estimates `⟨I⟩` and the curve is directly comparable to the
/// per-event `C2`.
pub fn estimate_c2(train: &SpikeTrain, bin_width: f64, max_lag: f64) -> Result<CorrelationSeries> {
    require_clicks(train, 1)?;
    if !(bin_width > 0.0) {
        return Err(Error::InvalidInput("bin width must be positive".into()));
    }
    if !(max_lag < train.duration / 10.0) {
        return Err(Error::InvalidInput(format!("max lag {max_lag} must stay below a tenth of the duration")));
    }
    let nbins = (train.duration / bin_width).floor() as usize;
    let kmax = (max_lag / bin_width).floor() as usize;
    let bins: Vec<usize> =
        train.clicks.iter().map(|t| (t / bin_width).floor() as usize).filter(|&b| b < nbins).collect();
    let mut pairs = vec![0u64; kmax + 1];
    for a in 0..bins.len() {
        for b in bins.iter().skip(a + 1) {
            let k = b - bins[a];
            if k > kmax {
                break;
            }
            pairs[k] += if k == 0 { 2 } else { 1 };
        }
    }
    let rate = train.rate();
    let grid = (0..=kmax).map(|k| vec![k as f64 * bin_width]).collect();
    let values = (0..=kmax)
        .map(|k| pairs[k] as f64 / ((nbins - k) as f64 * bin_width * bin_width * rate))
        .collect();
    Ok(CorrelationSeries { order: 2, grid, values, normalization: Normalization::PerEvent })
}

/// Histogram of waiting times normalized to unit area.
///
/// Bins are `width` wide starting at zero (default: enough bins that the
/// expected count per bin near the peak is large, rounded to a multiple of
/// the detector resolution when the train is binned). `mean_tau` is the
/// sample mean and `c` is 1.
pub fn estimate_wtd(train: &SpikeTrain, width: Option<f64>) -> Result<Wtd> {
    require_clicks(train, 2)?;
    let mut waits = train.waiting_times();
    waits.sort_by(|a, b| a.partial_cmp(b).unwrap());
    histogram_wtd(&waits, width, train.bin_width)
}

/// Histogram from already sorted waiting times; pooling several trains by
/// concatenating and sorting their waits makes the result order independent.
///
/// With a detector `resolution` the waits are multiples of it, so bin edges
/// are shifted by half a resolution to keep each multiple inside one bin.
pub fn histogram_wtd(sorted_waits: &[f64], width: Option<f64>, resolution: Option<f64>) -> Result<Wtd> {
    let n = sorted_waits.len();
    if n == 0 {
        return Err(Error::EmptyTrain("no waiting times".into()));
    }
    let upper = sorted_waits[((n as f64 * 0.999) as usize).min(n - 1)];
    let mean = sorted_waits.iter().sum::<f64>() / n as f64;
    let mut w = width.unwrap_or_else(|| {
        let bins = (n as f64).sqrt().clamp(10.0, 200.0);
        if upper > 0.0 {
            upper / bins
        } else {
            1.0
        }
    });
    if let Some(res) = resolution {
        w = (w / res).round().max(1.0) * res;
    }
    if !(w > 0.0) {
        return Err(Error::InvalidInput("histogram width must be positive".into()));
    }
    let offset = resolution.map_or(0.0, |r| 0.5 * r);
    let index = |t: f64| ((t + offset) / w).floor() as usize;
    let nb = index(sorted_waits[n - 1]) + 1;
    let mut counts = vec![0usize; nb];
    for &t in sorted_waits {
        counts[index(t).min(nb - 1)] += 1;
    }
    let grid = (0..nb).map(|k| (k as f64 + 0.5) * w - offset).collect();
    // the first bin is cut at zero when shifted
    let density = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 / (n as f64 * (w - if k == 0 { offset } else { 0.0 })))
        .collect();
    Ok(Wtd { grid, density, mean_tau: mean, c: 1.0 })
}

/// Bin edges of a histogram produced by [`histogram_wtd`].
pub fn histogram_edges(hist: &Wtd) -> Vec<f64> {
    let g = &hist.grid;
    let w = if g.len() > 1 { g[1] - g[0] } else { 2.0 * g[0] };
    let mut edges: Vec<f64> = g.iter().map(|c| (c - 0.5 * w).max(0.0)).collect();
    if let Some(last) = g.last() {
        edges.push(last + 0.5 * w);
    }
    edges
}

/// Empirical `P0(τ)` and `P1(τ)` from windows `[s, s + τ)` slid continuously
/// over `s ∈ [0, T - τ]`: the fraction of start positions whose window holds
/// exactly zero or one click.
pub fn estimate_counting(train: &SpikeTrain, taus: &[f64]) -> Result<(CountingSeries, CountingSeries)> {
    train.validate()?;
    let mut p0 = Vec::with_capacity(taus.len());
    let mut p1 = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau >= 0.0) || tau >= train.duration {
            return Err(Error::InvalidInput(format!("window {tau} must lie in [0, duration)")));
        }
        let span = train.duration - tau;
        // the count changes by +1 at s = t - τ and by -1 at s = t
        let mut events: Vec<(f64, i32)> = Vec::with_capacity(2 * train.clicks.len());
        for &t in &train.clicks {
            events.push((t - tau, 1));
            events.push((t, -1));
        }
        events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(b.1.cmp(&a.1)));
        let mut count: i32 = train.clicks.iter().filter(|&&t| t < tau).count() as i32;
        let mut s_prev = 0.0;
        let mut len = [0.0_f64; 2];
        for (s, delta) in events {
            // a window starting exactly at t - τ excludes t, at t includes it
            if s <= 0.0 {
                continue;
            }
            let s_clamped = s.min(span);
            if (0..2).contains(&count) {
                len[count as usize] += s_clamped - s_prev;
            }
            s_prev = s_clamped;
            if s >= span {
                break;
            }
            count += delta;
        }
        if s_prev < span && (0..2).contains(&count) {
            len[count as usize] += span - s_prev;
        }
        let norm = if span > 0.0 { span } else { 1.0 };
        p0.push(if span > 0.0 { len[0] / norm } else { f64::from(count == 0) });
        p1.push(if span > 0.0 { len[1] / norm } else { f64::from(count == 1) });
    }
    Ok((
        CountingSeries { n: 0, grid: taus.to_vec(), values: p0 },
        CountingSeries { n: 1, grid: taus.to_vec(), values: p1 },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    fn train(clicks: Vec<f64>, duration: f64) -> SpikeTrain {
        SpikeTrain { clicks, duration, channel: 1, seed: 0, bin_width: None }
    }

    fn poisson(rate: f64) -> CmpsModel {
        let r = CMat::identity(2, 2) * re(rate.sqrt());
        CmpsModel::new(CMat::zeros(2, 2), vec![r], 1).unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        let t = SpikeTrain { clicks: vec![0.1, 0.30000000000000004, 2.5], duration: 3.0, channel: 2, seed: 9, bin_width: None };
        assert_eq!(SpikeTrain::from_text(&t.to_text()).unwrap(), t);
        let b = t.binned(0.1).unwrap();
        assert_eq!(SpikeTrain::from_text(&b.to_text()).unwrap(), b);
    }

    #[test]
    fn malformed_train_reports_line() {
        let err = SpikeTrain::from_text("# duration=5\n1.0\nx\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(SpikeTrain::from_text("# duration=5\n2.0\n1.0\n").is_err());
    }

    #[test]
    fn binning_merges_clicks_in_one_bin() {
        let b = train(vec![0.11, 0.12, 0.35], 1.0).binned(0.1).unwrap();
        assert_eq!(b.clicks.len(), 2);
        assert!((b.clicks[1] - 0.3).abs() < 1e-15);
        b.validate().unwrap();
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let m = poisson(2.0);
        let a = simulate(&m, 50.0, 11).unwrap();
        let b = simulate(&m, 50.0, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate(&m, 50.0, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn batch_streams_do_not_depend_on_threads() {
        let m = poisson(3.0);
        let all = simulate_batch(&m, 20.0, 5, 4).unwrap();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let again = single.install(|| simulate_batch(&m, 20.0, 5, 4).unwrap());
        assert_eq!(all, again);
        assert_ne!(all[0], all[1]);
        assert_eq!(all[0], simulate(&m, 20.0, 5).unwrap());
    }

    #[test]
    fn no_outflow_gives_empty_train() {
        // only injection: once occupied the dot never emits
        let rl = CMat::from_row_slice(2, 2, &[re(0.0), re(0.0), re(2.0), re(0.0)]);
        let rr = CMat::zeros(2, 2);
        let m = CmpsModel::new(CMat::zeros(2, 2), vec![rl, rr], 2).unwrap();
        let trains = simulate(&m, 100.0, 1).unwrap();
        assert!(trains[1].clicks.is_empty());
        assert!(trains[0].clicks.len() <= 1);
    }

    #[test]
    fn zero_duration_is_rejected() {
        assert!(simulate(&poisson(1.0), 0.0, 1).is_err());
    }

    #[test]
    fn poisson_rate_and_flat_correlation() {
        let rate = 5.0;
        let t = simulate(&poisson(rate), 20_000.0, 3).unwrap().remove(0);
        let n = t.clicks.len() as f64;
        assert!((n - rate * t.duration).abs() < 4.0 * (rate * t.duration).sqrt());
        let c2 = estimate_c2(&t, 0.05, 1.0).unwrap();
        // per-event autocorrelation of a Poisson train equals the rate at every lag
        let mean = c2.values[1..].iter().sum::<f64>() / (c2.values.len() - 1) as f64;
        assert!((mean - rate).abs() < 0.05 * rate, "{mean}");
    }

    #[test]
    fn c2_estimator_counts_pairs_exactly() {
        let t = train(vec![0.05, 0.15, 0.16, 0.45], 10.0);
        let c2 = estimate_c2(&t, 0.1, 0.5).unwrap();
        // bins 0, 1, 1, 4: one same-bin pair (two ordered), lag 1: 2 pairs, lag 3: 2, lag 4: 1
        let norm = |k: usize| (100 - k) as f64 * 0.01 * 0.4;
        let expect = [2.0 / norm(0), 2.0 / norm(1), 0.0, 2.0 / norm(3), 1.0 / norm(4), 0.0];
        for (v, e) in c2.values.iter().zip(expect) {
            assert!((v - e).abs() < 1e-12, "{v} vs {e}");
        }
        assert!(matches!(estimate_c2(&train(vec![], 10.0), 0.1, 0.5), Err(Error::EmptyTrain(_))));
    }

    #[test]
    fn regular_train_has_delta_wtd() {
        let w = estimate_wtd(&train(vec![1.0, 2.0, 3.0, 4.0], 5.0), Some(0.25)).unwrap();
        assert_eq!(w.mean_tau, 1.0);
        let peak = w.density.iter().cloned().fold(0.0, f64::max);
        assert_eq!(w.density.iter().filter(|&&d| d > 0.0).count(), 1);
        assert!((peak * 0.25 - 1.0).abs() < 1e-12);
        assert!(matches!(estimate_wtd(&train(vec![1.0], 5.0), None), Err(Error::EmptyTrain(_))));
    }

    #[test]
    fn resolved_waits_land_in_their_own_bins() {
        let r = 0.05;
        let waits: Vec<f64> = [1, 1, 2, 3, 3, 3].iter().map(|&k| k as f64 * r * (1.0 + 1e-15)).collect();
        let h = histogram_wtd(&waits, Some(r), Some(r)).unwrap();
        let counts: Vec<f64> = h.density.iter().map(|d| (d * 6.0 * r).round()).collect();
        assert_eq!(&counts[1..], &[2.0, 1.0, 3.0]);
        assert!((h.grid[2] - 2.0 * r).abs() < 1e-15);
        let edges = histogram_edges(&h);
        assert_eq!(edges[0], 0.0);
        assert!((edges[1] - 0.5 * r).abs() < 1e-15);
    }

    #[test]
    fn sliding_windows_on_regular_train() {
        let delta = 1.0;
        let clicks: Vec<f64> = (1..1000).map(|k| k as f64 * delta).collect();
        let t = train(clicks, 1000.0);
        let (p0, p1) = estimate_counting(&t, &[0.0, 0.25, 0.6]).unwrap();
        assert!((p0.values[0] - 1.0).abs() < 1e-12 && p1.values[0].abs() < 1e-12);
        for (k, tau) in [0.25, 0.6].iter().enumerate() {
            assert!((p0.values[k + 1] - (1.0 - tau / delta)).abs() < 2e-3, "{}", p0.values[k + 1]);
            assert!((p1.values[k + 1] - tau / delta).abs() < 2e-3);
        }
        assert!(estimate_counting(&t, &[1000.0]).is_err());
    }

    #[test]
    fn dense_propagator_matches_diagonal() {
        let q = CMat::from_row_slice(2, 2, &[c(-1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]);
        let dense = Propagator::Dense { q: q.clone() };
        let psi = CVec::from_column_slice(&[re(0.3), re(0.7)]);
        let v = dense.at(&dense.prepare(&psi), 0.8);
        let exact = (&q * re(0.8)).exp() * &psi;
        assert!((v - exact).norm() < 1e-14);
    }
}
