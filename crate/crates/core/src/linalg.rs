//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues in ascending order together with matching eigenvectors (columns).
pub(crate) fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `V f(D) Vᵀ` for a symmetric matrix.
pub(crate) fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
        vectors[(i, j)] * f(values[j])
    });
    symmetrize(&(scaled * vectors.transpose()))
}

pub(crate) fn cholesky_lower(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    nalgebra::Cholesky::new(symmetrize(m)).map(|c| c.l())
}

pub(crate) fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor with positive diagonal")
}

pub(crate) fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    l.solve_lower_triangular(b)
        .expect("triangular factor with positive diagonal")
}

pub(crate) fn solve_upper(u: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    u.solve_upper_triangular(b)
        .expect("triangular factor with positive diagonal")
}

/// Inverse of an SPD matrix given its lower Cholesky factor.
pub(crate) fn inverse_from_cholesky(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let linv = solve_lower(l, &DMatrix::identity(n, n));
    symmetrize(&(linv.transpose() * linv))
}

pub(crate) fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// `d − ln(1 + d)`, accurate for small `d`.
pub(crate) fn x_minus_ln1p(d: f64) -> f64 {
    if d.abs() < 1e-4 {
        d * d * (0.5 - d * (1.0 / 3.0 - d * (0.25 - d / 5.0)))
    } else {
        d - d.ln_1p()
    }
}

pub(crate) fn logsumexp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Pulls a linear functional `⟨A, dL⟩` on the Cholesky differential back to
/// the SPD matrix: returns symmetric `G` with `⟨G, dP⟩ = ⟨A, dL⟩` where
/// `P = L Lᵀ`.
pub(crate) fn cholesky_pullback(l: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut phi = l.transpose() * a;
    for i in 0..n {
        phi[(i, i)] *= 0.5;
        for j in (i + 1)..n {
            phi[(i, j)] = 0.0;
        }
    }
    // L⁻ᵀ Φ L⁻¹
    let lt = l.transpose();
    let y = solve_upper(&lt, &phi.transpose()); // L⁻ᵀ Φᵀ
    symmetrize(&solve_upper(&lt, &y.transpose()))
}
