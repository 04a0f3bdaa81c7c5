//! Model definition and the superoperator matrices built from it.
//!
//! Density matrices are vectorized by stacking columns, so entry `ρ[(j, k)]`
//! lands at index `j + d * k`. With this convention
//! `vec(A ρ B†) = (B* ⊗ A) vec(ρ)`, and the transfer matrix
//! `T = Q* ⊗ 1 + 1 ⊗ Q + Σ R* ⊗ R` acts on `vec(ρ)` as the Lindblad generator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, conj, dagger, kron, max_abs, re, CMat, CVec, Eigen, C64, COND_MAX};

/// Relative tolerance for the Hermiticity check on `K`.
pub const TOL_HERM: f64 = 1e-12;
/// Zero-eigenvalue threshold relative to the spectral radius of `T`.
pub const TOL_ZERO: f64 = 1e-9;

/// Generator data of a monitored open system.
#[derive(Debug, Clone, PartialEq)]
pub struct CmpsModel {
    pub d: usize,
    /// Hamiltonian in angular frequency units.
    pub k: CMat,
    pub jump_ops: Vec<CMat>,
    pub labels: Vec<String>,
    /// 1-based index of the monitored jump operator; 0 only when there are no jump operators.
    pub measured_channel: usize,
}

impl CmpsModel {
    pub fn new(k: CMat, jump_ops: Vec<CMat>, measured_channel: usize) -> Result<Self> {
        let labels = (1..=jump_ops.len()).map(|i| format!("R{i}")).collect();
        Self::with_labels(k, jump_ops, labels, measured_channel)
    }

    pub fn with_labels(
        k: CMat,
        jump_ops: Vec<CMat>,
        labels: Vec<String>,
        measured_channel: usize,
    ) -> Result<Self> {
        let d = k.nrows();
        let model = CmpsModel { d, k, jump_ops, labels, measured_channel };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d;
        if self.k.nrows() != d || self.k.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "K is {}x{}, expected {d}x{d}",
                self.k.nrows(),
                self.k.ncols()
            )));
        }
        if d < 2 {
            return Err(Error::InvalidModel(format!("bond dimension must be at least 2, got {d}")));
        }
        for (i, r) in self.jump_ops.iter().enumerate() {
            if r.nrows() != d || r.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "jump operator {} is {}x{}, expected {d}x{d}",
                    i + 1,
                    r.nrows(),
                    r.ncols()
                )));
            }
        }
        if self.labels.len() != self.jump_ops.len() {
            return Err(Error::InvalidModel("one label per jump operator required".into()));
        }
        let n = self.jump_ops.len();
        if n == 0 && self.measured_channel != 0 {
            return Err(Error::InvalidModel("measured channel set but no jump operators".into()));
        }
        if n > 0 && !(1..=n).contains(&self.measured_channel) {
            return Err(Error::InvalidModel(format!(
                "measured channel {} outside 1..={n}",
                self.measured_channel
            )));
        }
        let scale = max_abs(&self.k).max(1.0);
        let dev = max_abs(&(&self.k - dagger(&self.k)));
        if dev > TOL_HERM * scale {
            return Err(Error::InvalidModel(format!("K is not Hermitian (deviation {dev:.3e})")));
        }
        Ok(())
    }

    /// The monitored jump operator.
    pub fn measured(&self) -> Result<&CMat> {
        if self.measured_channel == 0 {
            return Err(Error::InvalidModel("model has no measured channel".into()));
        }
        Ok(&self.jump_ops[self.measured_channel - 1])
    }

    pub fn zero_measured(&self) -> CMat {
        CMat::zeros(self.d, self.d)
    }
}

/// `Q = -iK - ½ Σ R†R`.
pub fn build_q(model: &CmpsModel) -> CMat {
    build_q_from(&model.k, &model.jump_ops)
}

pub fn build_q_from(k: &CMat, jumps: &[CMat]) -> CMat {
    let mut q = k * c(0.0, -1.0);
    for r in jumps {
        q -= dagger(r) * r * re(0.5);
    }
    q
}

/// Superoperator of `ρ ↦ A ρ B†` in the column-stacking convention.
pub fn superop(a: &CMat, b: &CMat) -> CMat {
    kron(&conj(b), a)
}

/// Superoperator of `ρ ↦ R ρ R†`.
pub fn jump_superop(r: &CMat) -> CMat {
    superop(r, r)
}

/// `Q* ⊗ 1 + 1 ⊗ Q`.
pub fn kron_sum(q: &CMat) -> CMat {
    let d = q.nrows();
    let id = CMat::identity(d, d);
    kron(&conj(q), &id) + kron(&id, q)
}

pub fn transfer_matrix(q: &CMat, jumps: &[CMat]) -> CMat {
    let mut t = kron_sum(q);
    for r in jumps {
        t += jump_superop(r);
    }
    t
}

pub fn vectorize(rho: &CMat) -> CVec {
    CVec::from_column_slice(rho.as_slice())
}

pub fn devectorize(v: &CVec) -> Result<CMat> {
    let n = v.len();
    let d = (n as f64).sqrt().round() as usize;
    if d * d != n {
        return Err(Error::DimensionMismatch(format!("vector of length {n} is not a square")));
    }
    Ok(CMat::from_column_slice(d, d, v.as_slice()))
}

/// `vec(1)`, the left zero mode of every trace-preserving generator.
pub fn vec_identity(d: usize) -> CVec {
    vectorize(&CMat::identity(d, d))
}

/// Sorts eigenpairs so that a zero mode (if `zero` is given) comes first and
/// the rest follow by descending real part and ascending imaginary part.
fn order_eigen(e: Eigen, zero: Option<usize>, tol: f64) -> Eigen {
    let n = e.values.len();
    let rest: Vec<usize> = (0..n).filter(|&i| Some(i) != zero).collect();
    let rest_vals: Vec<C64> = rest.iter().map(|&i| e.values[i]).collect();
    let mut order: Vec<usize> = zero.into_iter().collect();
    order.extend(linalg::spectral_order(&rest_vals, tol).into_iter().map(|k| rest[k]));
    let values = order.iter().map(|&k| e.values[k]).collect();
    let vectors = CMat::from_fn(e.vectors.nrows(), n, |i, j| e.vectors[(i, order[j])]);
    Eigen { values, vectors }
}

/// Eigendecomposition of the transfer matrix `T = X D X⁻¹` with the zero mode first.
#[derive(Debug, Clone)]
pub struct TransferDecomposition {
    pub t: CMat,
    pub lambda: Vec<C64>,
    /// Eigenvectors as columns; the first column is the vectorized steady state with unit trace.
    pub x: CMat,
    pub x_inv: CMat,
}

impl TransferDecomposition {
    pub fn from_model(model: &CmpsModel) -> Result<Self> {
        model.validate()?;
        Self::from_matrix(transfer_matrix(&build_q(model), &model.jump_ops))
    }

    pub fn from_matrix(t: CMat) -> Result<Self> {
        let n = t.nrows();
        let d = (n as f64).sqrt().round() as usize;
        let e = linalg::eig(&t)?;
        let radius = e.values.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
        let tol = TOL_ZERO * radius.max(f64::MIN_POSITIVE);
        let zeros: Vec<usize> = (0..n).filter(|&i| e.values[i].norm() <= tol).collect();
        if zeros.len() != 1 {
            return Err(Error::NonGenericSpectrum(format!(
                "{} eigenvalues of T within {tol:.3e} of zero, expected exactly one",
                zeros.len()
            )));
        }
        let mut e = order_eigen(e, Some(zeros[0]), 1e-10 * radius);
        if let Some(v) = e.values[1..].iter().find(|v| v.re >= 0.0) {
            return Err(Error::NonGenericSpectrum(format!(
                "non-zero eigenvalue {v} of T is not strictly damped"
            )));
        }
        e.values[0] = C64::new(0.0, 0.0);
        let tr = vec_identity(d).dot(&e.vectors.column(0));
        if tr.norm() < 1e-14 {
            return Err(Error::NonGenericSpectrum("zero mode of T has vanishing trace".into()));
        }
        let mut x = e.vectors;
        let col = x.column(0) / tr;
        x.set_column(0, &col);
        let cond = linalg::condition_number(&x);
        if !cond.is_finite() || cond > COND_MAX {
            return Err(Error::DefectiveMatrix { cond, limit: COND_MAX });
        }
        let x_inv = linalg::inverse(&x)?;
        Ok(TransferDecomposition { t, lambda: e.values, x, x_inv })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    /// Vectorized steady state (unit trace).
    pub fn steady_state(&self) -> CVec {
        self.x.column(0).into_owned()
    }

    pub fn steady_state_matrix(&self) -> CMat {
        devectorize(&self.steady_state()).expect("square dimension")
    }

    pub fn d_matrix(&self) -> CMat {
        CMat::from_diagonal(&CVec::from_vec(self.lambda.clone()))
    }
}

/// `X e₁ e₁ᵀ X⁻¹`, the limit of `exp(T L)` for large `L`.
pub fn steady_state_projector(tdec: &TransferDecomposition) -> CMat {
    tdec.x.column(0) * tdec.x_inv.row(0)
}

/// Eigendecomposition of the idle generator `S = Y 𝓓 Y⁻¹` together with
/// `Z = Y⁻¹ X`.
///
/// `S` is `T` with the measured jump term removed, so `exp(S τ)` propagates
/// the unnormalized state conditioned on no detector click.
#[derive(Debug, Clone)]
pub struct DriftDecomposition {
    pub s: CMat,
    pub mu: Vec<C64>,
    pub y: CMat,
    pub z: CMat,
    pub z_inv: CMat,
}

impl DriftDecomposition {
    pub fn from_model(model: &CmpsModel, tdec: &TransferDecomposition) -> Result<Self> {
        let s = if model.jump_ops.is_empty() {
            tdec.t.clone()
        } else {
            &tdec.t - jump_superop(model.measured()?)
        };
        Self::from_matrix(s, tdec)
    }

    pub fn from_matrix(s: CMat, tdec: &TransferDecomposition) -> Result<Self> {
        let e = linalg::eig(&s)?;
        let radius = e.values.iter().fold(0.0_f64, |m, v| m.max(v.norm()));
        let e = order_eigen(e, None, 1e-10 * radius);
        if let Some(v) = e.values.iter().find(|v| v.re >= 0.0) {
            return Err(Error::NonGenericSpectrum(format!(
                "eigenvalue {v} of S is not strictly damped"
            )));
        }
        let y = e.vectors;
        let cond = linalg::condition_number(&y);
        if !cond.is_finite() || cond > COND_MAX {
            return Err(Error::DefectiveMatrix { cond, limit: COND_MAX });
        }
        let y_inv = linalg::inverse(&y)?;
        let z = &y_inv * &tdec.x;
        let z_inv = &tdec.x_inv * &y;
        Ok(DriftDecomposition { s, mu: e.values, y, z, z_inv })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// All pairwise sums `q_j* + q_k` of the eigenvalues of `Q`.
pub fn kron_sum_spectrum(q: &CMat) -> Result<Vec<C64>> {
    let qs = linalg::eig(q)?.values;
    let mut out = Vec::with_capacity(qs.len() * qs.len());
    for a in &qs {
        for b in &qs {
            out.push(a.conj() + b);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    d: usize,
    measured_channel: usize,
    #[serde(rename = "K")]
    k: Vec<[f64; 2]>,
    #[serde(default)]
    jump: Vec<JumpEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JumpEntry {
    label: String,
    matrix: Vec<[f64; 2]>,
}

fn matrix_from_pairs(d: usize, what: &str, pairs: &[[f64; 2]]) -> Result<CMat> {
    if pairs.len() != d * d {
        return Err(Error::DimensionMismatch(format!(
            "{what} has {} entries, expected {}",
            pairs.len(),
            d * d
        )));
    }
    Ok(CMat::from_row_iterator(d, d, pairs.iter().map(|p| c(p[0], p[1]))))
}

fn matrix_to_pairs(m: &CMat) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push([m[(i, j)].re, m[(i, j)].im]);
        }
    }
    out
}

/// Parses a model from its TOML text form. Matrices are row-major lists of
/// `[re, im]` pairs; `measured_channel` is 1-based.
pub fn model_from_toml(text: &str) -> Result<CmpsModel> {
    let raw: ModelFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let k = matrix_from_pairs(raw.d, "K", &raw.k)?;
    let mut jumps = Vec::new();
    let mut labels = Vec::new();
    for j in &raw.jump {
        jumps.push(matrix_from_pairs(raw.d, &format!("jump '{}'", j.label), &j.matrix)?);
        labels.push(j.label.clone());
    }
    CmpsModel::with_labels(k, jumps, labels, raw.measured_channel)
}

pub fn model_to_toml(model: &CmpsModel) -> String {
    let raw = ModelFile {
        d: model.d,
        measured_channel: model.measured_channel,
        k: matrix_to_pairs(&model.k),
        jump: model
            .jump_ops
            .iter()
            .zip(&model.labels)
            .map(|(m, l)| JumpEntry { label: l.clone(), matrix: matrix_to_pairs(m) })
            .collect(),
    };
    toml::to_string(&raw).expect("model serializes")
}

pub fn load_model(path: &std::path::Path) -> Result<CmpsModel> {
    let text = crate::error::read_text(path)?;
    model_from_toml(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::random_model;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qd(gl: f64, gr: f64, eps: f64) -> CmpsModel {
        crate::qd::build_qd_model(&crate::qd::QdParams::new(gl, gr, eps).unwrap()).unwrap()
    }

    #[test]
    fn q_of_quantum_dot_is_diagonal() {
        let m = qd(13.23, 4.81, 1.0);
        let q = build_q(&m);
        let expected = CMat::from_row_slice(2, 2, &[re(-13.23 / 2.0), re(0.0), re(0.0), c(-4.81 / 2.0, -1.0)]);
        assert!(max_abs(&(q - expected)) < 1e-15);
    }

    #[test]
    fn q_without_dissipation_is_anti_hermitian() {
        let k = CMat::from_row_slice(2, 2, &[re(1.0), c(0.5, 0.2), c(0.5, -0.2), re(-0.3)]);
        let q = build_q_from(&k, &[]);
        assert!(max_abs(&(&q + dagger(&q))) < 1e-15);
        assert!(max_abs(&build_q_from(&CMat::zeros(2, 2), &[])) == 0.0);
    }

    #[test]
    fn transfer_spectrum_of_quantum_dot() {
        let t = TransferDecomposition::from_model(&qd(13.23, 4.81, 1.0)).unwrap();
        let expected = [c(0.0, 0.0), c(-9.02, -1.0), c(-9.02, 1.0), c(-18.04, 0.0)];
        for (a, b) in t.lambda.iter().zip(expected) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn closed_system_has_imaginary_spectrum() {
        let k = CMat::from_row_slice(2, 2, &[re(0.0), re(0.0), re(0.0), re(1.0)]);
        let t = transfer_matrix(&build_q_from(&k, &[]), &[]);
        let e = linalg::eig(&t).unwrap();
        assert!(e.values.iter().all(|v| v.re.abs() < 1e-14));
        let m = CmpsModel::new(k, vec![], 0).unwrap();
        assert!(matches!(TransferDecomposition::from_model(&m), Err(Error::NonGenericSpectrum(_))));
    }

    #[test]
    fn steady_state_of_quantum_dot() {
        let (gl, gr) = (13.23, 4.81);
        let tdec = TransferDecomposition::from_model(&qd(gl, gr, 0.7)).unwrap();
        let p = steady_state_projector(&tdec);
        let rho0 = vectorize(&CMat::from_row_slice(2, 2, &[re(0.3), c(0.1, 0.2), c(0.1, -0.2), re(0.7)]));
        let rho = devectorize(&(&p * rho0)).unwrap();
        let expected = CMat::from_row_slice(2, 2, &[re(gr), re(0.0), re(0.0), re(gl)]) / re(gl + gr);
        assert!(max_abs(&(rho - expected)) < 1e-13);
    }

    #[test]
    fn drift_spectrum_of_quantum_dot() {
        let (gl, gr, eps) = (13.23, 4.81, 1.0);
        let m = qd(gl, gr, eps);
        let tdec = TransferDecomposition::from_model(&m).unwrap();
        let ddec = DriftDecomposition::from_model(&m, &tdec).unwrap();
        let expected = [c(-gr, 0.0), c(-(gl + gr) / 2.0, -eps), c(-(gl + gr) / 2.0, eps), c(-gl, 0.0)];
        assert!(linalg::multiset_distance(&ddec.mu, &expected) < 1e-12);
        let id = &ddec.z * &ddec.z_inv;
        assert!(max_abs(&(id - CMat::identity(4, 4))) < 1e-12);
    }

    #[test]
    fn vectorization_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand::Rng;
        let mut rm = |d| CMat::from_fn(d, d, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let (a, b, rho) = (rm(3), rm(3), rm(3));
        let lhs = vectorize(&(&a * &rho * dagger(&b)));
        let rhs = superop(&a, &b) * vectorize(&rho);
        assert!((lhs - rhs).norm() < 1e-13);
        // the adjoint-on-the-left form: A†ρB = A† ρ (B†)†
        let lhs = vectorize(&(dagger(&a) * &rho * &b));
        let rhs = kron(&b.transpose(), &dagger(&a)) * vectorize(&rho);
        assert!((lhs - rhs).norm() < 1e-13);
        assert_eq!(devectorize(&vectorize(&rho)).unwrap(), rho);
        let id = vec_identity(2);
        assert_eq!(id.as_slice(), &[re(1.0), re(0.0), re(0.0), re(1.0)]);
    }

    #[test]
    fn drift_without_jumps_equals_transfer() {
        let k = CMat::from_row_slice(2, 2, &[re(0.0), re(1.0), re(1.0), re(0.0)]);
        let t = transfer_matrix(&build_q_from(&k, &[]), &[]);
        assert_eq!(t, kron_sum(&build_q_from(&k, &[])));
    }

    #[test]
    fn toml_round_trip() {
        let m = qd(13.23, 4.81, 0.5);
        let text = model_to_toml(&m);
        let back = model_from_toml(&text).unwrap();
        assert_eq!(back.labels, m.labels);
        assert!(max_abs(&(&back.k - &m.k)) == 0.0);
        assert_eq!(back.measured_channel, 2);
    }

    #[test]
    fn toml_errors_carry_line_numbers() {
        let err = model_from_toml("d = 2\nmeasured_channel = \n").unwrap_err();
        assert!(matches!(err, Error::Parse(ref s) if s.contains("line 2")), "{err}");
        let err = model_from_toml("d = 2\nmeasured_channel = 1\nK = [[0.0, 0.0]]\n").unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn rejects_non_hermitian_k_and_bad_channel() {
        let k = CMat::from_row_slice(2, 2, &[re(0.0), re(1.0), re(0.0), re(0.0)]);
        assert!(matches!(CmpsModel::new(k, vec![], 0), Err(Error::InvalidModel(_))));
        let k = CMat::zeros(2, 2);
        assert!(matches!(CmpsModel::new(k.clone(), vec![k.clone()], 2), Err(Error::InvalidModel(_))));
        assert!(matches!(CmpsModel::new(k.clone(), vec![CMat::zeros(3, 3)], 1), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn random_models_satisfy_core_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [2, 3] {
            for _ in 0..10 {
                let m = random_model(d, 1, &mut rng);
                let tdec = TransferDecomposition::from_model(&m).unwrap();
                let left = vec_identity(d).transpose() * &tdec.t;
                assert!(left.norm() < 1e-12 * max_abs(&tdec.t));
                let p = steady_state_projector(&tdec);
                assert!(max_abs(&(&p * &p - &p)) < 1e-10);
                assert!(max_abs(&(&p * &tdec.t)) < 1e-10 * max_abs(&tdec.t));
                let ddec = DriftDecomposition::from_model(&m, &tdec).unwrap();
                let law = kron_sum_spectrum(&build_q(&m)).unwrap();
                assert!(linalg::multiset_distance(&ddec.mu, &law) < 1e-9 * max_abs(&tdec.t));
            }
        }
    }
}
