//! One-sample Kolmogorov–Smirnov test.

/// Largest gap between the empirical CDF of `sorted` and `cdf`.
pub fn ks_statistic(sorted: &[f64], cdf: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    cdf.iter().enumerate().fold(0.0_f64, |d, (i, &f)| {
        let below = i as f64 / n;
        let above = (i + 1) as f64 / n;
        d.max((f - below).abs()).max((above - f).abs())
    })
}

/// Asymptotic Kolmogorov survival function `Q(λ) = 2 Σ (-1)^{j-1} e^{-2 j² λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // theta-function form converges fast for small λ
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let s: f64 = (0..6).map(|j| y.powi((2 * j + 1) * (2 * j + 1))).sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// p-value of statistic `d` for `n` samples, with the small-sample
/// correction `λ = (√n + 0.12 + 0.11/√n) d`.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn both_series_of_q_agree_at_the_switch() {
        let a = kolmogorov_q(1.18 - 1e-12);
        let b = kolmogorov_q(1.18 + 1e-12);
        assert!((a - b).abs() < 1e-10, "{a} {b}");
        // tabulated critical value: Q(1.3581) = 0.05
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn uniform_sample_passes_and_shifted_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut x: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let d = ks_statistic(&x, &x);
        assert!(ks_pvalue(d, x.len()) > 0.01);
        let shifted: Vec<f64> = x.iter().map(|v| (v - 0.02).max(0.0)).collect();
        let d = ks_statistic(&x, &shifted);
        assert!(ks_pvalue(d, x.len()) < 1e-6);
    }
}
