//! Dense complex linear algebra used throughout the crate.
//!
//! nalgebra supplies storage, LU, SVD and the matrix exponential. The
//! non-Hermitian eigendecomposition is done here: Householder reduction to
//! Hessenberg form, single-shift complex QR to a triangular Schur form, and
//! back-substitution for the eigenvectors.

use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Default upper bound on the eigenvector condition number.
pub const COND_MAX: f64 = 1e12;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Kronecker product with the left factor acting on the block (outer) index.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn conj(a: &CMat) -> CMat {
    a.map(|z| z.conj())
}

pub fn dagger(a: &CMat) -> CMat {
    a.adjoint()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

pub fn inverse(a: &CMat) -> Result<CMat> {
    a.clone()
        .try_inverse()
        .ok_or(Error::DefectiveMatrix { cond: f64::INFINITY, limit: COND_MAX })
}

/// Thin singular value decomposition `A = U diag(s) V†` with `s` descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v: CMat,
}

impl Svd {
    /// Pseudo-inverse solve, discarding singular values below `rcond * s[0]`.
    pub fn solve(&self, b: &CMat, rcond: f64) -> CMat {
        let cut = self.s.first().copied().unwrap_or(0.0) * rcond;
        let mut ub = self.u.adjoint() * b;
        for (i, &si) in self.s.iter().enumerate() {
            let f = if si > cut && si > 0.0 { 1.0 / si } else { 0.0 };
            for j in 0..ub.ncols() {
                ub[(i, j)] *= f;
            }
        }
        &self.v * ub
    }
}

/// Robust thin SVD.
///
/// nalgebra's bidiagonal SVD occasionally returns an inaccurate factorization
/// for wide matrices, so the tall orientation is always factored and the
/// result verified; on failure a one-sided Jacobi SVD is used instead.
pub fn svd(a: &CMat) -> Svd {
    if a.nrows() < a.ncols() {
        let t = svd(&a.adjoint());
        return Svd { u: t.v, s: t.s, v: t.u };
    }
    let scale = a.norm();
    if scale == 0.0 {
        let k = a.ncols();
        return Svd { u: CMat::identity(a.nrows(), k), s: vec![0.0; k], v: CMat::identity(k, k) };
    }
    let f = SVD::new(a.clone(), true, true);
    let (Some(u), Some(v_t)) = (f.u, f.v_t) else { return jacobi_svd(a) };
    let s: Vec<f64> = f.singular_values.iter().cloned().collect();
    let mut us = u.clone();
    for (j, &sj) in s.iter().enumerate() {
        let col = us.column(j) * re(sj);
        us.set_column(j, &col);
    }
    let err = (&us * &v_t - a).norm();
    let ortho = (u.adjoint() * &u - CMat::identity(s.len(), s.len())).norm();
    if !(err <= 1e-12 * scale * (a.ncols() as f64).sqrt()) || !(ortho <= 1e-10) {
        return jacobi_svd(a);
    }
    sort_svd(u, s, v_t.adjoint())
}

/// Singular values and right singular vectors of `a`, computed from the
/// leading rows of a column-pivoted QR factorization. Rows whose diagonal
/// falls below `floor` relative to the first are dropped, so the cost scales
/// with the numerical rank rather than the size of `a`.
pub fn right_singular_subspace(a: &CMat, floor: f64) -> (Vec<f64>, CMat) {
    let qr = a.clone().col_piv_qr();
    let mut r = qr.r();
    let r00 = r[(0, 0)].norm();
    let kmax = r.nrows().min(r.ncols());
    let keep = if r00 == 0.0 { kmax } else { (0..kmax).take_while(|&i| r[(i, i)].norm() > floor * r00).count().max(1) };
    qr.p().inv_permute_columns(&mut r);
    let f = svd(&r.rows(0, keep).into_owned());
    (f.s, f.v)
}

fn sort_svd(u: CMat, s: Vec<f64>, v: CMat) -> Svd {
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
    let u = CMat::from_fn(u.nrows(), idx.len(), |i, j| u[(i, idx[j])]);
    let v = CMat::from_fn(v.nrows(), idx.len(), |i, j| v[(i, idx[j])]);
    let s = idx.iter().map(|&i| s[i]).collect();
    Svd { u, s, v }
}

/// One-sided (Hestenes) Jacobi SVD of a tall matrix.
pub fn jacobi_svd(a: &CMat) -> Svd {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = CMat::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dotc(&w.column(q));
                let g = gamma.norm();
                if g <= f64::EPSILON * (alpha * beta).sqrt() || g == 0.0 {
                    continue;
                }
                rotated = true;
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..m {
                    let (x, y) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = x * cs - y * phase.conj() * sn;
                    w[(i, q)] = x * phase * sn + y * cs;
                }
                for i in 0..n {
                    let (x, y) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = x * cs - y * phase.conj() * sn;
                    v[(i, q)] = x * phase * sn + y * cs;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s = vec![0.0; n];
    let mut u = CMat::zeros(m, n);
    for j in 0..n {
        s[j] = w.column(j).norm();
        if s[j] > 0.0 {
            let col = w.column(j) / re(s[j]);
            u.set_column(j, &col);
        }
    }
    sort_svd(u, s, v)
}

/// 2-norm condition number from the singular values.
pub fn condition_number(a: &CMat) -> f64 {
    let s = svd(a).s;
    let max = s.first().copied().unwrap_or(0.0);
    let min = s.last().copied().unwrap_or(0.0);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Least-squares solution of `a x = b` via the SVD.
pub fn lstsq(a: &CMat, b: &CVec) -> Result<CVec> {
    let f = svd(a);
    let rcond = f64::EPSILON * (a.nrows().max(a.ncols()) as f64);
    let x = f.solve(&CMat::from_column_slice(b.len(), 1, b.as_slice()), rcond);
    Ok(x.column(0).into_owned())
}

/// Eigenvalues and right eigenvectors (unit-norm columns) of a square matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<C64>,
    pub vectors: CMat,
}

impl Eigen {
    /// Reorders eigenpairs by descending real part, then ascending imaginary
    /// part. Real parts within `tol` of each other count as ties.
    pub fn sorted(self, tol: f64) -> Eigen {
        let order = spectral_order(&self.values, tol);
        let values = order.iter().map(|&k| self.values[k]).collect();
        let vectors = CMat::from_fn(self.vectors.nrows(), order.len(), |i, j| {
            self.vectors[(i, order[j])]
        });
        Eigen { values, vectors }
    }
}

/// Permutation sorting by descending real part with ties (within `tol`)
/// broken by ascending imaginary part.
pub fn spectral_order(values: &[C64], tol: f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].re.partial_cmp(&values[a].re).unwrap());
    let mut out = Vec::with_capacity(idx.len());
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && (values[idx[start]].re - values[idx[end]].re).abs() <= tol {
            end += 1;
        }
        let mut group = idx[start..end].to_vec();
        group.sort_by(|&a, &b| values[a].im.partial_cmp(&values[b].im).unwrap());
        out.extend(group);
        start = end;
    }
    out
}

/// Full eigendecomposition of a general complex matrix.
pub fn eig(a: &CMat) -> Result<Eigen> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(format!("eig of {}x{} matrix", n, a.ncols())));
    }
    if n == 0 {
        return Ok(Eigen { values: vec![], vectors: CMat::zeros(0, 0) });
    }
    let scale = max_abs(a);
    if scale == 0.0 || n == 1 {
        return Ok(Eigen {
            values: (0..n).map(|i| a[(i, i)]).collect(),
            vectors: CMat::identity(n, n),
        });
    }
    let mut h = a / re(scale);
    let mut z = CMat::identity(n, n);
    hessenberg(&mut h, &mut z);
    schur_qr(&mut h, &mut z)?;
    let y = triangular_eigenvectors(&h);
    let mut vectors = &z * y;
    for mut col in vectors.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col /= re(nrm);
        }
    }
    let values = (0..n).map(|i| h[(i, i)] * scale).collect();
    Ok(Eigen { values, vectors })
}

/// Eigendecomposition that also checks the eigenvector basis is well conditioned.
pub fn eig_checked(a: &CMat, cond_max: f64) -> Result<(Eigen, CMat)> {
    let e = eig(a)?;
    let cond = condition_number(&e.vectors);
    if !cond.is_finite() || cond > cond_max {
        return Err(Error::DefectiveMatrix { cond, limit: cond_max });
    }
    let inv = inverse(&e.vectors)?;
    Ok((e, inv))
}

fn hessenberg(h: &mut CMat, z: &mut CMat) {
    let n = h.nrows();
    for k in 0..n.saturating_sub(2) {
        let mut v: Vec<C64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let alpha_norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let phase = if v[0].norm() > 0.0 { v[0] / v[0].norm() } else { re(1.0) };
        let alpha = -phase * alpha_norm;
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        for x in v.iter_mut() {
            *x /= vnorm;
        }
        // H <- P H P with P = I - 2 v v^H acting on indices k+1..n
        for j in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for (t, vi) in v.iter().enumerate() {
                s += vi.conj() * h[(k + 1 + t, j)];
            }
            for (t, vi) in v.iter().enumerate() {
                h[(k + 1 + t, j)] -= *vi * s * 2.0;
            }
        }
        for i in 0..n {
            let mut s = C64::new(0.0, 0.0);
            for (t, vi) in v.iter().enumerate() {
                s += h[(i, k + 1 + t)] * vi;
            }
            for (t, vi) in v.iter().enumerate() {
                h[(i, k + 1 + t)] -= s * vi.conj() * 2.0;
            }
            let mut s = C64::new(0.0, 0.0);
            for (t, vi) in v.iter().enumerate() {
                s += z[(i, k + 1 + t)] * vi;
            }
            for (t, vi) in v.iter().enumerate() {
                z[(i, k + 1 + t)] -= s * vi.conj() * 2.0;
            }
        }
        for i in k + 2..n {
            h[(i, k)] = C64::new(0.0, 0.0);
        }
    }
}

fn givens(a: C64, b: C64) -> (f64, C64) {
    let an = a.norm();
    let bn = b.norm();
    if bn == 0.0 {
        return (1.0, C64::new(0.0, 0.0));
    }
    if an == 0.0 {
        return (0.0, b.conj() / bn);
    }
    let nu = an.hypot(bn);
    (an / nu, (a / an) * b.conj() / nu)
}

fn wilkinson_shift(a: C64, b: C64, cc: C64, d: C64) -> C64 {
    let half = (a - d) * 0.5;
    let disc = (half * half + b * cc).sqrt();
    let mid = (a + d) * 0.5;
    let l1 = mid + disc;
    let l2 = mid - disc;
    if (l1 - d).norm() < (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

fn schur_qr(h: &mut CMat, z: &mut CMat) -> Result<()> {
    let n = h.nrows();
    let eps = f64::EPSILON;
    let norm = max_abs(h).max(f64::MIN_POSITIVE);
    let max_sweeps = 60 * n;
    let mut hi = n - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    while hi > 0 {
        let mut l = hi;
        while l > 0 {
            let mut s = h[(l - 1, l - 1)].norm() + h[(l, l)].norm();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].norm() <= eps * s {
                h[(l, l - 1)] = C64::new(0.0, 0.0);
                break;
            }
            l -= 1;
        }
        if l == hi {
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if total > max_sweeps {
            return Err(Error::NoConvergence(total));
        }
        let shift = if iter.is_multiple_of(10) {
            h[(hi, hi)] + re(h[(hi, hi - 1)].norm())
        } else {
            wilkinson_shift(h[(hi - 1, hi - 1)], h[(hi - 1, hi)], h[(hi, hi - 1)], h[(hi, hi)])
        };
        for i in l..=hi {
            h[(i, i)] -= shift;
        }
        let mut rots = Vec::with_capacity(hi - l);
        for k in l..hi {
            let (cs, sn) = givens(h[(k, k)], h[(k + 1, k)]);
            for j in k..n {
                let x = h[(k, j)];
                let y = h[(k + 1, j)];
                h[(k, j)] = x * cs + sn * y;
                h[(k + 1, j)] = -sn.conj() * x + y * cs;
            }
            rots.push((cs, sn));
        }
        for (t, k) in (l..hi).enumerate() {
            let (cs, sn) = rots[t];
            let top = (k + 2).min(hi);
            for i in 0..=top {
                let x = h[(i, k)];
                let y = h[(i, k + 1)];
                h[(i, k)] = x * cs + y * sn.conj();
                h[(i, k + 1)] = -x * sn + y * cs;
            }
            for i in 0..n {
                let x = z[(i, k)];
                let y = z[(i, k + 1)];
                z[(i, k)] = x * cs + y * sn.conj();
                z[(i, k + 1)] = -x * sn + y * cs;
            }
        }
        for i in l..=hi {
            h[(i, i)] += shift;
        }
    }
    Ok(())
}

fn triangular_eigenvectors(t: &CMat) -> CMat {
    let n = t.nrows();
    let small = max_abs(t).max(f64::MIN_POSITIVE) * f64::EPSILON;
    let mut y = CMat::zeros(n, n);
    for k in 0..n {
        y[(k, k)] = re(1.0);
        let tkk = t[(k, k)];
        for j in (0..k).rev() {
            let mut s = C64::new(0.0, 0.0);
            for m in j + 1..=k {
                s += t[(j, m)] * y[(m, k)];
            }
            let mut denom = t[(j, j)] - tkk;
            if denom.norm() < small {
                denom = re(small);
            }
            y[(j, k)] = -s / denom;
        }
    }
    y
}

/// Relative sup-norm distance between two sampled curves.
pub fn relative_sup_distance(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b.iter()).fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Greedy nearest matching of two multisets of complex numbers; returns the
/// largest pairing distance.
pub fn multiset_distance(a: &[C64], b: &[C64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0_f64;
    for x in a {
        let mut best = None;
        for (j, y) in b.iter().enumerate() {
            if used[j] {
                continue;
            }
            let dist = (x - y).norm();
            if best.is_none_or(|(_, bd)| dist < bd) {
                best = Some((j, dist));
            }
        }
        let (j, dist) = best.unwrap();
        used[j] = true;
        worst = worst.max(dist);
    }
    worst
}
