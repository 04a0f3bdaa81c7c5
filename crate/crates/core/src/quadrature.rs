//! Adaptive Gauss–Kronrod integration and a brute-force counting-probability
//! oracle that shares no code with the closed forms in [`crate::forward`].

use crate::error::{Error, Result};
use crate::linalg::{re, CMat, CVec};
use crate::lindblad::{self, CmpsModel};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const MAX_INTERVALS: usize = 400;

/// One G7/K15 panel; returns the Kronrod estimate and the Kronrod–Gauss difference norm.
fn panel<F: FnMut(f64) -> CVec>(f: &mut F, a: f64, b: f64) -> (CVec, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kron = &fc * re(WGK[7]);
    let mut gauss = &fc * re(WG[3]);
    for i in 0..7 {
        let dx = half * XGK[i];
        let s = f(mid - dx) + f(mid + dx);
        kron += &s * re(WGK[i]);
        if i % 2 == 1 {
            gauss += &s * re(WG[i / 2]);
        }
    }
    kron *= re(half);
    gauss *= re(half);
    let err = (&kron - &gauss).norm();
    (kron, err)
}

/// Integrates a vector-valued function over `[a, b]` to absolute tolerance `tol`
/// by bisecting the panel with the largest error estimate.
pub fn integrate_vec<F: FnMut(f64) -> CVec>(mut f: F, a: f64, b: f64, tol: f64) -> Result<CVec> {
    if b <= a {
        let n = f(a).len();
        return Ok(CVec::zeros(n));
    }
    let (v, e) = panel(&mut f, a, b);
    let mut panels = vec![(a, b, v, e)];
    loop {
        let total_err: f64 = panels.iter().map(|p| p.3).sum();
        if total_err <= tol {
            break;
        }
        if panels.len() >= MAX_INTERVALS {
            return Err(Error::QuadratureNonConvergence { achieved: total_err, requested: tol });
        }
        let worst = (0..panels.len())
            .max_by(|&i, &j| panels[i].3.partial_cmp(&panels[j].3).unwrap())
            .unwrap();
        let (lo, hi, _, _) = panels.swap_remove(worst);
        let m = 0.5 * (lo + hi);
        let (v1, e1) = panel(&mut f, lo, m);
        let (v2, e2) = panel(&mut f, m, hi);
        panels.push((lo, m, v1, e1));
        panels.push((m, hi, v2, e2));
    }
    let mut sum = panels[0].2.clone() * re(0.0);
    for p in &panels {
        sum += &p.2;
    }
    Ok(sum)
}

pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    let v = integrate_vec(|t| CVec::from_element(1, re(f(t))), a, b, tol)?;
    Ok(v[0].re)
}

/// Steady state from a direct null-space solve of `T v = 0` with the trace
/// condition replacing the first row.
pub fn steady_state_direct(model: &CmpsModel) -> Result<CVec> {
    let d = model.d;
    let q = lindblad::build_q(model);
    let mut t = lindblad::transfer_matrix(&q, &model.jump_ops);
    let id = lindblad::vec_identity(d);
    let mut rhs = CVec::zeros(d * d);
    for j in 0..d * d {
        t[(0, j)] = id[j];
    }
    rhs[0] = re(1.0);
    t.lu().solve(&rhs).ok_or_else(|| Error::NonGenericSpectrum("steady state is not unique".into()))
}

/// Counting-probability oracle by nested adaptive quadrature over the ordered
/// simplex `0 < t₁ < … < tₙ < τ`, using matrix exponentials of the raw
/// superoperators.
pub struct CountingOracle {
    s: CMat,
    j: CMat,
    rho: CVec,
    left: CVec,
    pub tol: f64,
}

impl CountingOracle {
    pub fn new(model: &CmpsModel) -> Result<Self> {
        let q = lindblad::build_q(model);
        let t = lindblad::transfer_matrix(&q, &model.jump_ops);
        let j = lindblad::jump_superop(model.measured()?);
        Ok(CountingOracle {
            s: t - &j,
            j,
            rho: steady_state_direct(model)?,
            left: lindblad::vec_identity(model.d),
            tol: 1e-11,
        })
    }

    fn propagate(&self, t: f64, v: &CVec) -> CVec {
        (&self.s * re(t)).exp() * v
    }

    /// `g_k(t)`: the unnormalized state after exactly `k` clicks in `[0, t]`.
    fn conditioned(&self, k: usize, t: f64) -> Result<CVec> {
        if k == 0 {
            return Ok(self.propagate(t, &self.rho));
        }
        let mut failure = None;
        let v = integrate_vec(
            |s| match self.conditioned(k - 1, s) {
                Ok(g) => self.propagate(t - s, &(&self.j * g)),
                Err(e) => {
                    failure.get_or_insert(e);
                    CVec::zeros(self.rho.len())
                }
            },
            0.0,
            t,
            self.tol,
        )?;
        match failure {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    /// Probability of exactly `n` clicks in a window of length `tau`; `n ≤ 3`.
    pub fn pn(&self, n: usize, tau: f64) -> Result<f64> {
        if n > 3 {
            return Err(Error::InvalidInput(format!("oracle supports n <= 3, got {n}")));
        }
        let v = self.conditioned(n, tau)?;
        Ok(self.left.dot(&v).re)
    }
}

/// Two-time correlation `⟨1| J e^{T x_n - x_{n-1}} J … J |ρ⟩` from matrix exponentials.
pub fn correlation_direct(model: &CmpsModel, points: &[f64]) -> Result<f64> {
    let q = lindblad::build_q(model);
    let t = lindblad::transfer_matrix(&q, &model.jump_ops);
    let j = lindblad::jump_superop(model.measured()?);
    let mut v = &j * steady_state_direct(model)?;
    for w in points.windows(2) {
        v = &j * ((&t * re(w[1] - w[0])).exp() * v);
    }
    Ok(lindblad::vec_identity(model.d).dot(&v).re)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_integrates_smooth_functions() {
        let v = integrate(|x| x.exp(), 0.0, 1.0, 1e-13).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-13);
        let v = integrate(|x| 1.0 / (1e-3 + x * x), -1.0, 1.0, 1e-10).unwrap();
        let exact = 2.0 * (1.0 / 1e-3f64.sqrt()) * (1.0 / 1e-3f64.sqrt()).atan();
        assert!((v - exact).abs() < 1e-8, "{v} vs {exact}");
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(integrate(|x| x, 1.0, 1.0, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn non_convergence_is_reported() {
        let err = integrate(|x| if x < 0.3 { 0.0 } else { 1.0 / (x - 0.3).sqrt().max(1e-300) }, 0.0, 1.0, 1e-15);
        assert!(matches!(err, Err(Error::QuadratureNonConvergence { .. })));
    }
}
