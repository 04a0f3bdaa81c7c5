//! Random model generation for tests, benchmarks and round-trip studies.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::forward::{uniform_grid, SpectralData};
use crate::linalg::{self, c, CMat, C64};
use crate::lindblad::CmpsModel;

/// Typical magnitude of the entries of generated jump operators.
pub const JUMP_SCALE: f64 = 1.5;

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Hermitian matrix with independent Gaussian entries.
pub fn random_hermitian(d: usize, scale: f64, rng: &mut impl Rng) -> CMat {
    let a = CMat::from_fn(d, d, |_, _| c(gaussian(rng), gaussian(rng)));
    (&a + a.adjoint()) * c(0.5 * scale, 0.0)
}

pub fn random_complex(d: usize, scale: f64, rng: &mut impl Rng) -> CMat {
    CMat::from_fn(d, d, |_, _| c(gaussian(rng), gaussian(rng)) * (scale / 2f64.sqrt()))
}

/// Model with Gaussian `K` and `channels` Gaussian jump operators; the first
/// channel is the measured one.
pub fn random_model(d: usize, channels: usize, rng: &mut impl Rng) -> CmpsModel {
    let k = random_hermitian(d, 1.0, rng);
    let jumps = (0..channels).map(|_| random_complex(d, JUMP_SCALE, rng)).collect();
    CmpsModel::new(k, jumps, if channels > 0 { 1 } else { 0 }).expect("generated model is valid")
}

/// Thresholds for [`genericity`].
#[derive(Debug, Clone, Copy)]
pub struct GenericityBounds {
    /// Smallest allowed `|A_j| / max |A|` for curve amplitudes.
    pub min_coefficient: f64,
    /// Smallest allowed eigenvalue spacing relative to the spectral radius.
    pub min_separation: f64,
    /// Largest allowed condition number of either eigenbasis.
    pub max_condition: f64,
}

impl Default for GenericityBounds {
    fn default() -> Self {
        GenericityBounds { min_coefficient: 1e-3, min_separation: 1e-2, max_condition: 1e6 }
    }
}

fn min_relative_amplitude(a: &[C64]) -> f64 {
    let top = a.iter().fold(0.0_f64, |m, x| m.max(x.norm()));
    a.iter().map(|x| x.norm() / top).fold(f64::INFINITY, f64::min)
}

fn min_relative_separation(v: &[C64]) -> f64 {
    let radius = v.iter().fold(0.0_f64, |m, x| m.max(x.norm()));
    let mut sep = f64::INFINITY;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            sep = sep.min((v[i] - v[j]).norm() / radius);
        }
    }
    sep
}

/// Checks that a model meets the assumptions of both tomography routes: every
/// `C2` and `P0` amplitude is nonzero and both spectra are well separated.
/// Returns a description of the first violated bound.
pub fn genericity(model: &CmpsModel, bounds: &GenericityBounds) -> Result<(), String> {
    let sd = SpectralData::from_model(model).map_err(|e| e.to_string())?;
    let idle = sd.idle().map_err(|e| e.to_string())?;
    let checks = [
        ("C2 amplitude", min_relative_amplitude(&sd.c2_amplitudes()), bounds.min_coefficient),
        ("P0 amplitude", min_relative_amplitude(&idle.p0_amplitudes()), bounds.min_coefficient),
        ("T eigenvalue spacing", min_relative_separation(&sd.lambda), bounds.min_separation),
        ("S eigenvalue spacing", min_relative_separation(&idle.mu), bounds.min_separation),
    ];
    for (what, value, bound) in checks {
        if !(value >= bound) {
            return Err(format!("{what} {value:.2e} below {bound:.0e}"));
        }
    }
    let cond = linalg::condition_number(&idle.z);
    if !(cond <= bounds.max_condition) {
        return Err(format!("idle eigenbasis condition number {cond:.2e}"));
    }
    Ok(())
}

/// Draws models until one passes [`genericity`] with default bounds.
pub fn random_generic_model(d: usize, channels: usize, rng: &mut impl Rng) -> CmpsModel {
    let bounds = GenericityBounds::default();
    loop {
        let m = random_model(d, channels, rng);
        if genericity(&m, &bounds).is_ok() {
            return m;
        }
    }
}

/// Step that resolves both the fastest decay and the fastest oscillation of a
/// spectrum: `min(1/max|s|, π/(2 max|Im s|))`.
pub fn resolving_step(spectrum: &[C64]) -> f64 {
    let fastest = spectrum.iter().fold(0.0_f64, |m, s| m.max(s.norm()));
    let osc = spectrum.iter().fold(0.0_f64, |m, s| m.max(s.im.abs()));
    let mut h = 1.0 / fastest;
    if osc > 0.0 {
        h = h.min(std::f64::consts::FRAC_PI_2 / osc);
    }
    h
}

/// Sampling grids used by the round-trip studies.
#[derive(Debug, Clone)]
pub struct SamplingPlan {
    pub c2: Vec<f64>,
    /// Shared axis for both `C3` coordinates.
    pub c3: Vec<f64>,
    pub counting: Vec<f64>,
}

impl SamplingPlan {
    pub const C2_POINTS: usize = 512;
    pub const C3_POINTS: usize = 64;
    pub const COUNTING_POINTS: usize = 512;

    pub fn for_model(sd: &SpectralData) -> crate::Result<Self> {
        let h = resolving_step(&sd.lambda);
        let hc = resolving_step(&sd.idle()?.mu);
        Ok(SamplingPlan {
            c2: uniform_grid(0.0, h, Self::C2_POINTS),
            c3: uniform_grid(0.0, h, Self::C3_POINTS),
            counting: uniform_grid(0.0, hc, Self::COUNTING_POINTS),
        })
    }
}
