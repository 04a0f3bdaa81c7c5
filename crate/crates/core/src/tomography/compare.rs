//! Gauge-invariant comparison through predicted curves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::error::Result;
use crate::forward::{self, uniform_grid, Normalization, SpectralData};
use crate::linalg::relative_sup_distance;

const POINTS: usize = 256;

/// Shared evaluation grids.
#[derive(Debug, Clone)]
pub struct CompareGrids {
    pub c2: Vec<f64>,
    /// Diagonal slice `x = Δx = t` of `C3`.
    pub c3: Vec<f64>,
    pub counting: Vec<f64>,
    pub wtd: Vec<f64>,
}

fn span(rates: impl Iterator<Item = f64>) -> f64 {
    let slowest = rates.filter(|r| *r > 0.0).fold(f64::INFINITY, f64::min);
    if slowest.is_finite() {
        5.0 / slowest
    } else {
        1.0
    }
}

impl CompareGrids {
    /// Grids spanning five of the slowest decay times of `sd`.
    pub fn for_data(sd: &SpectralData) -> Self {
        let t_c = span(sd.lambda.iter().skip(1).map(|l| -l.re));
        let step = t_c / (POINTS - 1) as f64;
        let c2 = uniform_grid(0.0, step, POINTS);
        let c3 = uniform_grid(0.0, step, POINTS / 4);
        let (counting, wtd) = match sd.idle() {
            Ok(idle) => {
                let t = span(idle.mu.iter().map(|m| -m.re));
                let counting = uniform_grid(0.0, t / (POINTS - 1) as f64, POINTS);
                let wtd = forward::default_wtd_grid(sd, POINTS).unwrap_or_else(|_| counting.clone());
                (counting, wtd)
            }
            Err(_) => (c2.clone(), c2.clone()),
        };
        CompareGrids { c2, c3, counting, wtd }
    }
}

/// Relative sup-norm distance per curve; curves that either side cannot
/// predict are listed in `skipped` with the reason.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CompareReport {
    pub distances: BTreeMap<String, f64>,
    pub skipped: BTreeMap<String, String>,
}

impl CompareReport {
    pub fn max_distance(&self) -> f64 {
        self.distances.values().cloned().fold(0.0, f64::max)
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.distances.get(key).copied()
    }
}

type Curve = fn(&SpectralData, &CompareGrids) -> Result<Vec<f64>>;

fn c2(sd: &SpectralData, g: &CompareGrids) -> Result<Vec<f64>> {
    Ok(forward::c2_curve(sd, &g.c2, Normalization::Raw)?.values)
}

fn c3_slice(sd: &SpectralData, g: &CompareGrids) -> Result<Vec<f64>> {
    g.c3.iter().map(|&t| forward::correlation(sd, &[0.0, t, 2.0 * t])).collect()
}

fn p0(sd: &SpectralData, g: &CompareGrids) -> Result<Vec<f64>> {
    Ok(forward::p0_curve(sd, &g.counting)?.values)
}

fn p1(sd: &SpectralData, g: &CompareGrids) -> Result<Vec<f64>> {
    Ok(forward::p1_curve(sd, &g.counting)?.values)
}

fn wtd(sd: &SpectralData, g: &CompareGrids) -> Result<Vec<f64>> {
    Ok(forward::wtd_from_matrices(sd, &g.wtd)?.density)
}

fn current(sd: &SpectralData, _: &CompareGrids) -> Result<Vec<f64>> {
    Ok(vec![forward::steady_current(sd)?])
}

fn fano(sd: &SpectralData, _: &CompareGrids) -> Result<Vec<f64>> {
    Ok(vec![forward::fano(sd)?])
}

/// Compares the curves and scalars predicted by `a` and `b` on shared grids
/// (derived from `a` unless given).
pub fn compare_models_gauge_invariant(
    a: &Predictor,
    b: &Predictor,
    grids: Option<&CompareGrids>,
) -> Result<CompareReport> {
    let sa = a.spectral_data()?;
    let sb = b.spectral_data()?;
    let own;
    let g = match grids {
        Some(g) => g,
        None => {
            own = CompareGrids::for_data(&sa);
            &own
        }
    };
    let curves: [(&str, Curve); 7] =
        [("c2", c2), ("c3_slice", c3_slice), ("p0", p0), ("p1", p1), ("wtd", wtd), ("current", current), ("fano", fano)];
    let mut report = CompareReport::default();
    for (name, f) in curves {
        match (f(&sa, g), f(&sb, g)) {
            (Ok(x), Ok(y)) => {
                report.distances.insert(name.into(), relative_sup_distance(&x, &y));
            }
            (Err(e), _) | (_, Err(e)) => {
                report.skipped.insert(name.into(), e.to_string());
            }
        }
    }
    Ok(report)
}
