//! Shared dense linear algebra.
//!
//! Eigen-computations use a dense symmetric (or Hermitian) decomposition
//! below [`DENSE_EIGEN_THRESHOLD`] vertices and a Lanczos iteration with
//! full reorthogonalization above it; linear systems go through Cholesky
//! with an LU fallback. Everything here is deterministic: the Lanczos start
//! vector is a fixed hash sequence, not a random draw.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Below this many rows, spectra are computed densely; above it, iterative
/// methods are used where available.
pub const DENSE_EIGEN_THRESHOLD: usize = 2000;

/// Default residual tolerance for iterative eigensolvers.
pub const EIGEN_TOLERANCE: f64 = 1e-10;

/// Eigendecomposition of a symmetric real matrix with eigenvalues sorted
/// ascending and eigenvector columns permuted to match.
pub fn sorted_symmetric_eigen(a: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = a.symmetric_eigen();
    sort_eigen_pairs(eig.eigenvalues, eig.eigenvectors)
}

/// Eigendecomposition of a Hermitian complex matrix; eigenvalues are real
/// and returned ascending.
pub fn sorted_hermitian_eigen(
    a: DMatrix<Complex<f64>>,
) -> (DVector<f64>, DMatrix<Complex<f64>>) {
    let eig = a.symmetric_eigen();
    sort_eigen_pairs(eig.eigenvalues, eig.eigenvectors)
}

fn sort_eigen_pairs<T: nalgebra::Scalar>(
    values: DVector<f64>,
    vectors: DMatrix<T>,
) -> (DVector<f64>, DMatrix<T>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let sorted_values = DVector::from_iterator(values.len(), order.iter().map(|&i| values[i]));
    let mut sorted_vectors = vectors.clone();
    for (dst, &src) in order.iter().enumerate() {
        sorted_vectors.set_column(dst, &vectors.column(src));
    }
    (sorted_values, sorted_vectors)
}

/// Solve `a x = b` for symmetric positive (semi)definite `a`, preferring
/// Cholesky and falling back to partial-pivot LU.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    Factorization::new(a)?.solve(b)
}

/// A reusable dense factorization: Cholesky when the matrix admits one,
/// partial-pivot LU otherwise. Lets iterative solvers factor once and
/// back-substitute per step.
pub(crate) enum Factorization {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Factorization {
    pub(crate) fn new(a: &DMatrix<f64>) -> Result<Self> {
        if let Some(chol) = a.clone().cholesky() {
            return Ok(Factorization::Cholesky(chol));
        }
        let lu = a.clone().lu();
        if lu.is_invertible() {
            Ok(Factorization::Lu(lu))
        } else {
            Err(Error::Singular(format!(
                "{}×{} system",
                a.nrows(),
                a.ncols()
            )))
        }
    }

    pub(crate) fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Factorization::Cholesky(chol) => Ok(chol.solve(b)),
            Factorization::Lu(lu) => lu
                .solve(b)
                .ok_or_else(|| Error::Singular(format!("{} unknowns", b.len()))),
        }
    }
}

/// Solve `a x = b` by LU with partial pivoting.
pub fn solve_lu(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{}×{} system", a.nrows(), a.ncols())))
}

/// Smallest eigenvalue of a symmetric operator restricted to the orthogonal
/// complement of `deflate`, by Lanczos iteration with full
/// reorthogonalization.
///
/// `deflate` must be orthonormal and span an invariant subspace (typically
/// the known kernel). The start vector is deterministic. Convergence is
/// declared when the Ritz residual estimate drops below `tolerance`
/// relative to the Ritz value.
pub fn lanczos_smallest(
    dim: usize,
    mut apply: impl FnMut(&DVector<f64>) -> DVector<f64>,
    deflate: &[DVector<f64>],
    tolerance: f64,
    max_iterations: usize,
) -> Result<f64> {
    assert!(dim > deflate.len(), "deflation space exhausts the operator");
    let reorthogonalize = |w: &mut DVector<f64>, basis: &[DVector<f64>]| {
        for _ in 0..2 {
            for u in deflate {
                let c = u.dot(w);
                w.axpy(-c, u, 1.0);
            }
            for u in basis {
                let c = u.dot(w);
                w.axpy(-c, u, 1.0);
            }
        }
    };

    // Deterministic pseudo-random start vector.
    let mut v = DVector::from_iterator(
        dim,
        (0..dim).map(|i| {
            let s = ((i as f64 + 1.0) * 12.9898).sin() * 43758.5453;
            s - s.floor() - 0.5
        }),
    );
    reorthogonalize(&mut v, &[]);
    let norm = v.norm();
    if norm < 1e-12 {
        return Err(Error::Singular(
            "Lanczos start vector lies in the deflation space".to_owned(),
        ));
    }
    v /= norm;

    let mut basis: Vec<DVector<f64>> = vec![v];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let limit = max_iterations.min(dim - deflate.len());

    let mut last_residual = f64::INFINITY;
    for step in 0..limit {
        let vj = basis[step].clone();
        let mut w = apply(&vj);
        let alpha = vj.dot(&w);
        alphas.push(alpha);
        reorthogonalize(&mut w, &basis);
        let beta = w.norm();

        // Ritz extraction from the tridiagonal section.
        let k = alphas.len();
        let mut t = DMatrix::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alphas[i];
            if i + 1 < k {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let (theta, s) = sorted_symmetric_eigen(t);
        let smallest = theta[0];
        let residual = beta * s[(k - 1, 0)].abs();
        last_residual = residual;
        if residual <= tolerance * smallest.abs().max(1.0) || beta < 1e-13 {
            return Ok(smallest);
        }
        betas.push(beta);
        basis.push(w / beta);
    }
    Err(Error::EigenNonConvergence {
        residual: last_residual,
        iterations: limit,
        tolerance,
    })
}

/// Modified Gram–Schmidt in an arbitrary inner product, with a second
/// orthogonalization pass for stability. Vectors whose remaining norm falls
/// below `drop_tolerance` times their initial norm are discarded; the
/// survivors are normalized.
pub fn modified_gram_schmidt(
    vectors: Vec<DVector<f64>>,
    inner: impl Fn(&DVector<f64>, &DVector<f64>) -> f64,
    drop_tolerance: f64,
) -> Vec<DVector<f64>> {
    let mut result: Vec<DVector<f64>> = Vec::new();
    for mut v in vectors {
        let initial = inner(&v, &v).max(0.0).sqrt();
        for _ in 0..2 {
            for b in &result {
                let c = inner(b, &v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = inner(&v, &v).max(0.0).sqrt();
        if norm > drop_tolerance * initial.max(1e-300) && norm > 0.0 {
            result.push(v / norm);
        }
    }
    result
}
