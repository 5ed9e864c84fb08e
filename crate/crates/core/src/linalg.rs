//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// In-place `0.5 (S + Sᵀ)`; returns the largest absolute asymmetry seen before.
pub fn symmetrize(s: &mut DMatrix<f64>) -> f64 {
    let n = s.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = s[(i, j)];
            let b = s[(j, i)];
            worst = worst.max((a - b).abs());
            let m = 0.5 * (a + b);
            s[(i, j)] = m;
            s[(j, i)] = m;
        }
    }
    worst
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Solves `S X = rhs` for symmetric positive definite `S` via Cholesky.
/// Returns `None` when `S` is not numerically positive definite.
pub fn spd_solve(s: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = s.clone().cholesky()?;
    let x = chol.solve(rhs);
    is_finite(&x).then_some(x)
}

/// Eigenvalue ratio below which [`spd_solve_guarded`] truncates.
pub const SPD_RCOND: f64 = 1e-13;

/// Like [`spd_solve`], but when `S` is too ill-conditioned for the solution
/// to be meaningful (Cholesky pivot ratio below [`SPD_RCOND`]) it uses the
/// eigen-pseudo-inverse, dropping eigenvalues under `SPD_RCOND · λ_max`.
/// Without this, round-off in the near-null directions is amplified by the
/// inverse of the tiny eigenvalues and iterations built on the solve stop
/// settling.
pub fn spd_solve_guarded(s: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = s.clone().cholesky()?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if lo * lo >= SPD_RCOND * hi * hi {
        let x = chol.solve(rhs);
        return is_finite(&x).then_some(x);
    }
    let eig = s.clone().symmetric_eigen();
    let cutoff = SPD_RCOND * eig.eigenvalues.amax();
    let v = &eig.eigenvectors;
    let mut proj = v.transpose() * rhs;
    for (i, lambda) in eig.eigenvalues.iter().enumerate() {
        let inv = if *lambda > cutoff { 1.0 / lambda } else { 0.0 };
        proj.row_mut(i).scale_mut(inv);
    }
    let x = v * proj;
    is_finite(&x).then_some(x)
}

pub fn is_positive_definite(s: &DMatrix<f64>) -> bool {
    s.nrows() == s.ncols() && s.clone().cholesky().is_some()
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &DMatrix<f64>) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    let mut sym = s.clone();
    symmetrize(&mut sym);
    sym.symmetric_eigenvalues().min()
}

/// A square root factor `F` with `F Fᵀ = S` for a symmetric PSD matrix.
/// Negative eigenvalues from round-off are clipped to zero.
pub fn psd_sqrt_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut sym = s.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let mut f = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let scale = lambda.max(0.0).sqrt();
        f.column_mut(j).scale_mut(scale);
    }
    f
}

/// Maximum absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn outer(v: &DVector<f64>) -> DMatrix<f64> {
    v * v.transpose()
}

/// Relative Frobenius error `‖a − b‖ / max(‖b‖, tiny)`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm().max(1e-300);
    (a - b).norm() / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_reports_asymmetry() {
        let mut s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.5, 3.0]);
        let asym = symmetrize(&mut s);
        assert_eq!(asym, 0.5);
        assert_eq!(s[(0, 1)], 2.25);
        assert_eq!(s[(1, 0)], 2.25);
    }

    #[test]
    fn spd_solve_rejects_indefinite() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(spd_solve(&s, &DMatrix::identity(2, 2)).is_none());
    }

    #[test]
    fn sqrt_factor_reproduces_matrix() {
        let s = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 0.0]);
        let s = &s * s.transpose();
        let f = psd_sqrt_factor(&s);
        assert!((&f * f.transpose() - &s).norm() < 1e-10);
    }
}
