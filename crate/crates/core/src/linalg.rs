//! Dense complex-matrix substrate.
//!
//! Everything downstream works on `nalgebra` dense matrices over `Complex64`.
//! Composite (bipartite) indices follow the Kronecker convention
//! `i * dim_b + j`: the first factor is the major index.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Default absolute tolerance, applied against `max(1, ‖·‖_F)`.
pub const DEFAULT_TOL: f64 = 1e-10;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn real(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Tolerance scaled by the magnitude of the operand.
#[inline]
pub fn scaled_tol(tol: f64, m: &CMatrix) -> f64 {
    tol * m.norm().max(1.0)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn basis_vector(n: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(n);
    v[i] = ONE;
    v
}

/// `|u⟩⟨v|`
pub fn outer(u: &CVector, v: &CVector) -> CMatrix {
    u * v.adjoint()
}

/// `|v⟩⟨v|`
pub fn projector(v: &CVector) -> CMatrix {
    outer(v, v)
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().sum()
}

pub fn is_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// `‖m − m†‖_F`
pub fn hermitian_residual(m: &CMatrix) -> f64 {
    (m - m.adjoint()).norm()
}

/// `(m + m†) / 2`
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// `⟨a|b⟩`, conjugate-linear in the first argument.
pub fn inner(a: &CVector, b: &CVector) -> Complex64 {
    a.dotc(b)
}

/// Matrix units `E_ab = |a⟩⟨b|`, ordered row-major.
pub fn matrix_units(n: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let mut m = CMatrix::zeros(n, n);
            m[(a, b)] = ONE;
            out.push(m);
        }
    }
    out
}

/// Kronecker product `a ⊗ b`.
pub fn tensor_product(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let rows = a
        .nrows()
        .checked_mul(b.nrows())
        .ok_or(Error::DimensionOverflow(a.nrows(), b.nrows()))?;
    let cols = a
        .ncols()
        .checked_mul(b.ncols())
        .ok_or(Error::DimensionOverflow(a.ncols(), b.ncols()))?;
    rows.checked_mul(cols)
        .ok_or(Error::DimensionOverflow(rows, cols))?;
    Ok(a.kronecker(b))
}

pub fn tensor_vectors(a: &CVector, b: &CVector) -> CVector {
    a.kronecker(b)
}

/// Which factor of a bipartite operator survives a partial trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    A,
    B,
}

/// Partial trace of an operator on `ℂ^dim_a ⊗ ℂ^dim_b`.
pub fn partial_trace(m: &CMatrix, dim_a: usize, dim_b: usize, keep: Keep) -> Result<CMatrix> {
    let n = dim_a
        .checked_mul(dim_b)
        .ok_or(Error::DimensionOverflow(dim_a, dim_b))?;
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "partial trace expects {n}x{n} for {dim_a}x{dim_b} factors, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let out = match keep {
        Keep::A => CMatrix::from_fn(dim_a, dim_a, |i, k| {
            (0..dim_b).map(|j| m[(i * dim_b + j, k * dim_b + j)]).sum()
        }),
        Keep::B => CMatrix::from_fn(dim_b, dim_b, |j, l| {
            (0..dim_a).map(|i| m[(i * dim_b + j, i * dim_b + l)]).sum()
        }),
    };
    Ok(out)
}

/// Spectral decomposition of a Hermitian matrix.
///
/// Eigenvalues are sorted descending; column `j` of `vectors` belongs to
/// `values[j]`. Each eigenvector is rephased so that its first entry of
/// largest modulus is real and non-negative.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

impl HermitianEigen {
    pub fn vector(&self, j: usize) -> CVector {
        self.vectors.column(j).into_owned()
    }

    /// `V Λ V†`
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.vectors.nrows();
        let mut out = CMatrix::zeros(n, n);
        for (j, &lam) in self.values.iter().enumerate() {
            let v = self.vector(j);
            out += projector(&v).scale(lam);
        }
        out
    }

    pub fn max_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

pub fn hermitian_eig(a: &CMatrix, tol: f64) -> Result<HermitianEigen> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition of non-square {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if !is_finite(a) {
        return Err(Error::NonFinite);
    }
    let residual = hermitian_residual(a);
    if residual > scaled_tol(tol, a) {
        return Err(Error::NotHermitian { residual });
    }
    let n = a.nrows();
    let eig = hermitian_part(a).symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut vectors = CMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut v = eig.eigenvectors.column(src).into_owned();
        fix_phase(&mut v);
        vectors.set_column(dst, &v);
    }
    Ok(HermitianEigen { values, vectors })
}

/// Rotate `v` so that its first entry of largest modulus is real, non-negative.
fn fix_phase(v: &mut CVector) {
    let mut best = 0usize;
    let mut best_mod = -1.0f64;
    for (i, z) in v.iter().enumerate() {
        // ties within rounding keep the earlier index
        if z.norm() > best_mod * (1.0 + 1e-12) + 1e-300 {
            best = i;
            best_mod = z.norm();
        }
    }
    if best_mod > 0.0 {
        let phase = v[best].conj() / best_mod;
        v.iter_mut().for_each(|z| *z *= phase);
        v[best] = real(v[best].re);
    }
}

/// `‖V†V − I‖_F`
pub fn orthonormality_residual(v: &CMatrix) -> f64 {
    (v.adjoint() * v - identity(v.ncols())).norm()
}

/// Square unitary matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryOperator(CMatrix);

impl UnitaryOperator {
    pub fn new(m: CMatrix, tol: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "unitary must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let residual = orthonormality_residual(&m);
        if residual > scaled_tol(tol, &identity(m.nrows())) {
            return Err(Error::NotOrthonormal { residual });
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// Extends a matrix with orthonormal columns to a unitary.
///
/// The first `k` columns of the result equal `v`. The remaining columns come
/// from Gram–Schmidt (two passes) against the standard basis vectors in index
/// order; a candidate is kept when its residual norm exceeds `1e-3`.
pub fn complete_to_unitary(v: &CMatrix) -> Result<UnitaryOperator> {
    let (n, k) = v.shape();
    if k > n {
        return Err(Error::DimensionMismatch(format!(
            "cannot complete {k} columns in dimension {n}"
        )));
    }
    if !is_finite(v) {
        return Err(Error::NonFinite);
    }
    let residual = orthonormality_residual(v);
    if residual > DEFAULT_TOL * (k.max(1) as f64).sqrt().max(1.0) {
        return Err(Error::NotOrthonormal { residual });
    }

    let mut cols: Vec<CVector> = (0..k).map(|j| v.column(j).into_owned()).collect();
    for e in 0..n {
        if cols.len() == n {
            break;
        }
        let mut w = basis_vector(n, e);
        for _ in 0..2 {
            for q in &cols {
                let proj = inner(q, &w);
                w -= q * proj;
            }
        }
        let norm = w.norm();
        if norm > 1e-3 {
            cols.push(w.unscale(norm));
        }
    }
    if cols.len() != n {
        return Err(Error::NotOrthonormal {
            residual: (n - cols.len()) as f64,
        });
    }
    let u = CMatrix::from_columns(&cols);
    UnitaryOperator::new(u, DEFAULT_TOL)
}

/// A validated density operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator(CMatrix);

impl DensityOperator {
    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `|ψ⟩⟨ψ|/‖ψ‖²`
    pub fn pure(psi: &CVector) -> Result<Self> {
        let norm = psi.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::TraceNotOne { trace: norm * norm });
        }
        Ok(Self(projector(&psi.unscale(norm))))
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self(identity(n).unscale(n as f64))
    }

    /// Wraps a matrix already known to be a state (internal constructions).
    pub(crate) fn from_matrix_unchecked(m: CMatrix) -> Self {
        Self(m)
    }

    /// Largest eigenvalue; equals 1 exactly for pure states.
    pub fn purity_eigenvalue(&self) -> f64 {
        hermitian_eig(&self.0, 1e-8)
            .map(|e| e.max_value())
            .unwrap_or(f64::NAN)
    }

    /// `⟨ψ|ρ|ψ⟩` for a unit vector ψ.
    pub fn fidelity_with_pure(&self, psi: &CVector) -> f64 {
        (psi.adjoint() * &self.0 * psi)[(0, 0)].re
    }
}

/// Accepts a density matrix: Hermitian, spectrum ≥ −tol, unit trace.
pub fn validate_density(rho: &CMatrix, tol: f64) -> Result<DensityOperator> {
    if rho.nrows() != rho.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "density operator must be square, got {}x{}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    if !is_finite(rho) {
        return Err(Error::NonFinite);
    }
    let residual = hermitian_residual(rho);
    if residual > scaled_tol(tol, rho) {
        return Err(Error::NotHermitian { residual });
    }
    let eig = hermitian_eig(rho, tol)?;
    let min = eig.min_value();
    if min < -tol {
        return Err(Error::NotPositive {
            min_eigenvalue: min,
        });
    }
    let tr = trace(rho).re;
    if (tr - 1.0).abs() > tol {
        return Err(Error::TraceNotOne { trace: tr });
    }
    let m = if min < 0.0 {
        let clipped = HermitianEigen {
            values: eig.values.iter().map(|&l| l.max(0.0)).collect(),
            vectors: eig.vectors,
        };
        clipped.reconstruct()
    } else {
        hermitian_part(rho)
    };
    Ok(DensityOperator(m))
}

/// Trace distance `½‖a − b‖₁` between Hermitian operators.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    let diff = hermitian_part(&(a - b));
    match hermitian_eig(&diff, 1.0) {
        Ok(e) => 0.5 * e.values.iter().map(|l| l.abs()).sum::<f64>(),
        Err(_) => f64::NAN,
    }
}

/// Numerical rank: singular values above `rel_tol · σ_max`.
pub fn numerical_rank(m: &CMatrix, rel_tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag(entries: &[f64]) -> CMatrix {
        CMatrix::from_diagonal(&CVector::from_iterator(
            entries.len(),
            entries.iter().map(|&x| real(x)),
        ))
    }

    fn ket(entries: &[Complex64]) -> CVector {
        CVector::from_column_slice(entries)
    }

    #[test]
    fn tensor_of_identities() {
        let out = tensor_product(&identity(2), &identity(2)).unwrap();
        assert_eq!(out, identity(4));
    }

    #[test]
    fn tensor_of_diagonals() {
        let out = tensor_product(&diag(&[1.0, 0.0]), &diag(&[0.0, 1.0])).unwrap();
        assert_eq!(out, diag(&[0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn tensor_of_basis_projectors_lands_on_composite_index() {
        let p0 = projector(&basis_vector(2, 0));
        let p1 = projector(&basis_vector(2, 1));
        let out = tensor_product(&p0, &p1).unwrap();
        // composite index of (0, 1) is 0 * 2 + 1
        for r in 0..4 {
            for s in 0..4 {
                let expected = if r == 1 && s == 1 { ONE } else { ZERO };
                assert_eq!(out[(r, s)], expected);
            }
        }
    }

    #[test]
    fn partial_trace_of_product_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rho = random::density(&mut rng, 2);
        let sigma = random::density(&mut rng, 3);
        let joint = tensor_product(rho.matrix(), sigma.matrix()).unwrap();
        let a = partial_trace(&joint, 2, 3, Keep::A).unwrap();
        let b = partial_trace(&joint, 2, 3, Keep::B).unwrap();
        assert!((a - rho.matrix()).norm() < 1e-12);
        assert!((b - sigma.matrix()).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_of_maximally_mixed() {
        let m = identity(4).unscale(4.0);
        let out = partial_trace(&m, 2, 2, Keep::B).unwrap();
        assert!((out - identity(2).unscale(2.0)).norm() < 1e-15);
    }

    #[test]
    fn partial_trace_of_bell_state() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let bell = ket(&[real(s), ZERO, ZERO, real(s)]);
        let rho = projector(&bell);
        // explicit entries: ρ_00,00 = ρ_00,11 = ρ_11,00 = ρ_11,11 = 1/2
        // so (tr_B ρ)_00 = ρ_{00,00} + ρ_{01,01} = 1/2, (tr_B ρ)_01 = ρ_{00,10} + ρ_{01,11} = 0
        let out = partial_trace(&rho, 2, 2, Keep::A).unwrap();
        assert!((out - diag(&[0.5, 0.5])).norm() < 1e-15);
    }

    #[test]
    fn partial_trace_rejects_bad_dims() {
        let m = identity(4);
        assert!(matches!(
            partial_trace(&m, 2, 3, Keep::A),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn eig_of_diagonal() {
        let e = hermitian_eig(&diag(&[0.25, 0.75]), DEFAULT_TOL).unwrap();
        assert_eq!(e.values.len(), 2);
        assert!((e.values[0] - 0.75).abs() < 1e-15);
        assert!((e.values[1] - 0.25).abs() < 1e-15);
        assert!((e.vector(0) - basis_vector(2, 1)).norm() < 1e-15);
        assert!((e.vector(1) - basis_vector(2, 0)).norm() < 1e-15);
    }

    #[test]
    fn eig_of_plus_projector() {
        let a = CMatrix::from_element(2, 2, real(0.5));
        let e = hermitian_eig(&a, DEFAULT_TOL).unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!(e.values[1].abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.vector(0) - ket(&[real(s), real(s)])).norm() < 1e-14);
    }

    #[test]
    fn eig_phase_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random::hermitian(&mut rng, 4);
        let e = hermitian_eig(&a, DEFAULT_TOL).unwrap();
        for j in 0..4 {
            let v = e.vector(j);
            let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let first = v.iter().find(|z| z.norm() >= max * (1.0 - 1e-12)).unwrap();
            assert!(first.im.abs() < 1e-14 && first.re >= 0.0);
        }
    }

    #[test]
    fn eig_rejects_non_hermitian() {
        let mut a = identity(2);
        a[(0, 1)] = ONE;
        assert!(matches!(
            hermitian_eig(&a, DEFAULT_TOL),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn complete_square_input_is_unchanged() {
        let u = complete_to_unitary(&identity(3)).unwrap();
        assert_eq!(u.matrix(), &identity(3));
    }

    #[test]
    fn complete_single_basis_column() {
        let v = CMatrix::from_columns(&[basis_vector(2, 0)]);
        let u = complete_to_unitary(&v).unwrap();
        assert_eq!(u.matrix(), &identity(2));
    }

    #[test]
    fn complete_random_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random::isometry(&mut rng, 6, 2);
        let u = complete_to_unitary(&v).unwrap();
        assert!(orthonormality_residual(u.matrix()) < 1e-10);
        assert_eq!(u.matrix().columns(0, 2), v.columns(0, 2));
    }

    #[test]
    fn complete_rejects_non_orthonormal() {
        let v = CMatrix::from_columns(&[basis_vector(2, 0).scale(2.0)]);
        assert!(matches!(
            complete_to_unitary(&v),
            Err(Error::NotOrthonormal { .. })
        ));
    }

    #[test]
    fn density_validation() {
        assert!(validate_density(&identity(2).unscale(2.0), DEFAULT_TOL).is_ok());
        assert!(matches!(
            validate_density(&diag(&[1.5, -0.5]), DEFAULT_TOL),
            Err(Error::NotPositive { .. })
        ));
        assert!(matches!(
            validate_density(&diag(&[0.5, 0.25]), DEFAULT_TOL),
            Err(Error::TraceNotOne { .. })
        ));
        let mut skew = identity(2).unscale(2.0);
        skew[(0, 1)] = c(0.0, 0.3);
        assert!(matches!(
            validate_density(&skew, DEFAULT_TOL),
            Err(Error::NotHermitian { .. })
        ));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = validate_density(&projector(&ket(&[real(s), real(s)])), DEFAULT_TOL).unwrap();
        assert!((plus.purity_eigenvalue() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_distance_of_orthogonal_pure_states() {
        let a = projector(&basis_vector(2, 0));
        let b = projector(&basis_vector(2, 1));
        assert!((trace_distance(&a, &b) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_counts_nonzero_singular_values() {
        assert_eq!(numerical_rank(&diag(&[1.0, 1e-3, 0.0]), DEFAULT_TOL), 2);
        assert_eq!(numerical_rank(&CMatrix::zeros(3, 3), DEFAULT_TOL), 0);
    }
}
