//! Small dense linear-algebra helpers shared across modules.

use nalgebra::DVector;
use num_complex::Complex;
use rand::Rng;

use crate::{C64, CMat, Error, Result};

/// Largest absolute deviation of `U†U` from the identity.
pub fn unitarity_deviation(u: &CMat) -> f64 {
    let n = u.ncols();
    let g = u.adjoint() * u;
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            dev = dev.max((g[(i, j)] - target).norm());
        }
    }
    dev
}

/// Checks `‖U†U − 1‖_max ≤ tol`, erroring otherwise.
pub fn require_unitary(u: &CMat, tol: f64) -> Result<()> {
    if u.nrows() != u.ncols() {
        return Err(Error::DimensionMismatch {
            context: "unitarity check",
            expected: u.nrows(),
            got: u.ncols(),
        });
    }
    let dev = unitarity_deviation(u);
    if dev > tol {
        return Err(Error::NotUnitary { dev, tol });
    }
    Ok(())
}

/// Largest absolute deviation of `M` from `M†`.
pub fn hermiticity_deviation(m: &CMat) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Max-norm distance between two matrices.
pub fn max_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut dev: f64 = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dev = dev.max((x - y).norm());
    }
    dev
}

/// Haar-ish random unitary from the QR of a complex Gaussian-like matrix.
///
/// Entries are uniform in the unit square; after QR with a phase fix on the
/// diagonal of R the distribution is rotation-covariant enough for tests and
/// for the re-representation retries of the Householder map.
pub fn random_unitary<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let m = CMat::from_fn(n, n, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let qr = m.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix the gauge so the factorisation is unique: make diag(R) positive.
    for j in 0..n {
        let d = r[(j, j)];
        if d.norm() > 1e-300 {
            let phase = d / d.norm();
            for i in 0..n {
                q[(i, j)] *= phase;
            }
        }
    }
    q
}

/// Random complex matrix with entries uniform in the unit square.
pub fn random_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
}

/// Random Hermitian matrix with entries of order one.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let m = random_matrix(rng, n, n);
    (&m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Thin SVD of a complex matrix, with a deterministic retry ladder for the
/// rare inputs on which the iteration stalls.
///
/// Returns `(u, sigma, v_adjoint)` with singular values sorted descending.
pub fn svd_thin(m: &CMat) -> (CMat, DVector<f64>, CMat) {
    let svd = m
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .unwrap_or_else(|| {
            m.clone()
                .try_svd(true, true, 1e-14, 100_000)
                .expect("SVD failed to converge")
        });
    let u = svd.u.expect("SVD requested with U");
    let vt = svd.v_t.expect("SVD requested with V^T");
    (u, svd.singular_values, vt)
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
///
/// Returns `(values, vectors)`; column `k` of `vectors` belongs to
/// `values[k]`.
pub fn eigh(m: &CMat) -> (DVector<f64>, CMat) {
    let n = m.nrows();
    let se = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let values = DVector::from_iterator(n, order.iter().map(|&k| se.eigenvalues[k]));
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Kronecker product in row-major index convention: the result acts on the
/// fused index `(i_a, i_b)` with `i_a` most significant.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMat::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let f = a[(i, j)];
            if f.norm() == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = f * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Complex scalar from a real value.
pub fn cr(x: f64) -> C64 {
    Complex::new(x, 0.0)
}

/// Options for the Davidson eigensolver.
#[derive(Clone, Copy, Debug)]
pub struct DavidsonOptions {
    /// Residual target: `‖Hx − θx‖ ≤ tol·max(1, |θ|)`.
    pub tol: f64,
    /// Cap on operator applications.
    pub max_iter: usize,
    /// Subspace size before a thick restart.
    pub max_subspace: usize,
}

impl Default for DavidsonOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 400, max_subspace: 24 }
    }
}

/// Davidson iteration for the smallest eigenpair of a Hermitian operator
/// given as an action, with a diagonal preconditioner.
///
/// Deterministic for fixed inputs. On stagnation or iteration exhaustion an
/// [`Error::EigensolverStalled`] carries the best Ritz pair found.
pub fn davidson_smallest(
    mut matvec: impl FnMut(&DVector<C64>) -> DVector<C64>,
    diag: &[f64],
    x0: &DVector<C64>,
    opts: &DavidsonOptions,
) -> crate::Result<(f64, DVector<C64>)> {
    let dim = diag.len();
    assert_eq!(x0.len(), dim);
    let mut start = x0.clone();
    if start.norm() < 1e-14 {
        let k = (0..dim).min_by(|&a, &b| diag[a].partial_cmp(&diag[b]).unwrap()).unwrap_or(0);
        start = DVector::zeros(dim);
        start[k] = cr(1.0);
    }
    start /= cr(start.norm());

    let mut basis: Vec<DVector<C64>> = vec![start];
    let mut images: Vec<DVector<C64>> = Vec::new();
    let mut best: Option<(f64, DVector<C64>, f64)> = None;
    let mut applied = 0usize;

    loop {
        while images.len() < basis.len() {
            images.push(matvec(&basis[images.len()]));
            applied += 1;
        }
        let k = basis.len();
        let mut t = CMat::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                t[(i, j)] = basis[i].dotc(&images[j]);
            }
        }
        // Symmetrise against rounding before the dense solve.
        let t = (&t + t.adjoint()) * cr(0.5);
        let (vals, vecs) = eigh(&t);
        let theta = vals[0];
        let mut x: DVector<C64> = DVector::zeros(dim);
        let mut hx: DVector<C64> = DVector::zeros(dim);
        for i in 0..k {
            let w = vecs[(i, 0)];
            x.axpy(w, &basis[i], cr(1.0));
            hx.axpy(w, &images[i], cr(1.0));
        }
        let mut resid = hx.clone();
        resid.axpy(cr(-theta), &x, cr(1.0));
        let rnorm = resid.norm();
        match &best {
            Some((_, _, r)) if *r <= rnorm => {}
            _ => best = Some((theta, x.clone(), rnorm)),
        }
        if rnorm <= opts.tol * theta.abs().max(1.0) || k >= dim {
            return Ok((theta, x));
        }
        if applied >= opts.max_iter {
            let (bt, bx, br) = best.unwrap();
            return Err(crate::Error::EigensolverStalled {
                iters: applied,
                residual: br,
                best: Box::new((bt, bx.iter().copied().collect())),
            });
        }
        if k >= opts.max_subspace {
            // Thick restart keeping the lowest Ritz vectors; keeping only
            // one degrades convergence to a steepest-descent rate.
            let keep = 8.min(k);
            let mut new_basis = Vec::with_capacity(keep);
            let mut new_images = Vec::with_capacity(keep);
            for col in 0..keep {
                let mut xb: DVector<C64> = DVector::zeros(dim);
                let mut hxb: DVector<C64> = DVector::zeros(dim);
                for i in 0..k {
                    let w = vecs[(i, col)];
                    xb.axpy(w, &basis[i], cr(1.0));
                    hxb.axpy(w, &images[i], cr(1.0));
                }
                new_basis.push(xb);
                new_images.push(hxb);
            }
            basis = new_basis;
            images = new_images;
        }
        // Jacobi-Davidson style diagonal preconditioning of the residual.
        let mut corr = resid;
        for i in 0..dim {
            let mut den = diag[i] - theta;
            if den.abs() < 1e-8 {
                den = if den < 0.0 { -1e-8 } else { 1e-8 };
            }
            corr[i] /= cr(den);
        }
        // Orthogonalise twice against the current basis.
        for _ in 0..2 {
            for b in &basis {
                let ov = b.dotc(&corr);
                corr.axpy(-ov, b, cr(1.0));
            }
        }
        let cn = corr.norm();
        if cn < 1e-12 {
            // Preconditioned direction collapsed; fall back to a unit
            // vector with the largest residual weight not yet in the span.
            let mut fallback: DVector<C64> = DVector::zeros(dim);
            let k = (0..dim)
                .max_by(|&a, &b| {
                    let ra = (diag[a] - theta).abs();
                    let rb = (diag[b] - theta).abs();
                    rb.partial_cmp(&ra).unwrap()
                })
                .unwrap_or(0);
            fallback[k] = cr(1.0);
            for b in &basis {
                let ov = b.dotc(&fallback);
                fallback.axpy(-ov, b, cr(1.0));
            }
            let fb = fallback.norm();
            if fb < 1e-12 {
                let (bt, bx, br) = best.unwrap();
                return Err(crate::Error::EigensolverStalled {
                    iters: applied,
                    residual: br,
                    best: Box::new((bt, bx.iter().copied().collect())),
                });
            }
            corr = fallback / cr(fb);
        } else {
            corr /= cr(cn);
        }
        basis.push(corr);
    }
}
