//! Inverse problem: generator data from measured curves.
//!
//! Two routes are provided. [`reconstruct_from_correlations`] recovers the
//! measured channel in the eigenbasis of `T` from `C2` and `C3`;
//! [`reconstruct_from_counting`] recovers `(Q, R)` of a single-channel model
//! from `P0` and `P1` and regauges them to a trace-preserving form. Raw
//! matrices are gauge dependent, so results are compared through the curves
//! they predict ([`compare_models_gauge_invariant`]).

mod compare;
mod correlation;
mod counting;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::SpectralData;
use crate::io::{cmat_pairs, opt_cmat_pairs};
use crate::linalg::{CMat, C64};
use crate::lindblad::CmpsModel;

pub use compare::{compare_models_gauge_invariant, CompareGrids, CompareReport};
pub use correlation::{reconstruct_from_correlations, CorrelationOptions};
pub use counting::{factor_kronecker_sum, reconstruct_from_counting, CountingOptions};
pub use crate::forward::{drift_from_transfer, transfer_from_drift};

/// Default singular-value cutoff of both routes. Noiseless curves of a
/// `d = 3` model already carry Hankel singular values near `1e-12`, well
/// below the generic pencil default.
pub const SVD_THRESHOLD_ROUTE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Correlation,
    Counting,
}

/// Border of the idle eigenbasis change in the Kronecker gauge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZBorder {
    /// First row of `Z⁻¹`.
    pub z_inv_row: Vec<C64>,
    /// First column of `Z`.
    pub z_col: Vec<C64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub route: Route,
    /// Hilbert-space dimension.
    pub d: usize,
    /// Diagonal of `D_rec`: `λ` (correlation route) or `μ` in Kronecker order.
    pub d_rec: Vec<C64>,
    /// `M` or `𝓜` in the fixed gauge.
    #[serde(with = "cmat_pairs")]
    pub m_rec: CMat,
    pub z_border: Option<ZBorder>,
    /// Jump operator in the trace-preserving gauge.
    #[serde(with = "opt_cmat_pairs")]
    pub r_rec: Option<CMat>,
    /// `D_Q`, the diagonal no-jump generator in the Kronecker gauge.
    #[serde(with = "opt_cmat_pairs")]
    pub q_rec: Option<CMat>,
    /// Hamiltonian in the same frame as `r_rec`.
    #[serde(with = "opt_cmat_pairs")]
    pub k_rec: Option<CMat>,
    pub residuals: BTreeMap<String, f64>,
    pub gauge_note: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl ReconstructionResult {
    /// Spectral data from which every forward curve can be predicted.
    pub fn spectral_data(&self) -> Result<SpectralData> {
        match self.route {
            Route::Correlation => SpectralData::from_transfer(self.d_rec.clone(), self.m_rec.clone()),
            Route::Counting => SpectralData::from_model(&self.to_model()?),
        }
    }

    /// The reconstructed single-channel model (counting route only).
    pub fn to_model(&self) -> Result<CmpsModel> {
        match (&self.k_rec, &self.r_rec) {
            (Some(k), Some(r)) => CmpsModel::with_labels(k.clone(), vec![r.clone()], vec!["measured".into()], 1),
            _ => Err(Error::InvalidInput(
                "correlation-route results carry only the measured channel in the T eigenbasis".into(),
            )),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("reconstruction: {e}")))
    }
}

/// Anything that predicts curves: a model or a reconstruction.
pub enum Predictor<'a> {
    Model(&'a CmpsModel),
    Reconstruction(&'a ReconstructionResult),
}

impl Predictor<'_> {
    pub fn spectral_data(&self) -> Result<SpectralData> {
        match self {
            Predictor::Model(m) => SpectralData::from_model(m),
            Predictor::Reconstruction(r) => r.spectral_data(),
        }
    }
}

/// `(𝓜, 𝓓, Z)` from `(M, D)`; see [`drift_from_transfer`].
pub fn convert_representations(lambda: &[C64], m: &CMat) -> Result<(Vec<C64>, CMat, CMat)> {
    drift_from_transfer(lambda, m)
}

fn kron_model_note(d: usize) -> String {
    format!(
        "Q diagonal in the Kronecker gauge with r_1j = r_j1 for j > 1 and r_11 real; \
         regauged by the Cholesky factor of the left fixed point so that K is Hermitian \
         (d = {d}); global phase makes the largest entry of R real positive"
    )
}

/// Frame-independent check that `K` is Hermitian after regauging.
fn hermitian_defect(k: &CMat) -> f64 {
    (k - k.adjoint()).norm() / k.norm().max(f64::MIN_POSITIVE)
}
