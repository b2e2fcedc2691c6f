//! Small dense symmetric eigenvalue routines.
//!
//! Matrices in this crate are Laplacians of at most a few hundred agents, so
//! the cyclic Jacobi method is used for its unconditional accuracy.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetry tolerance accepted by [`symmetric_eigenvalues`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Relative off-diagonal tolerance at which Jacobi sweeps stop.
pub const JACOBI_TOL: f64 = 1e-10;

/// Largest absolute difference between `m` and its transpose.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            what: "square matrix columns",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let asym = max_asymmetry(m);
    let scale = m.amax().max(1.0);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, ascending.
///
/// Cyclic Jacobi rotations with the classic threshold strategy, capped at
/// `100 n^2` rotations. Only the eigenvalues are accumulated.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    // symmetrize so that tiny asymmetries do not bias the rotations
    let mut a = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let frob = a.norm();
    if frob == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let max_rotations = 100 * n * n;
    let mut rotations = 0usize;

    loop {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= JACOBI_TOL * frob || rotations >= max_rotations {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    let new_rp = arp - s * (arq + tau * arp);
                    let new_rq = arq + s * (arp - tau * arq);
                    a[(r, p)] = new_rp;
                    a[(p, r)] = new_rp;
                    a[(r, q)] = new_rq;
                    a[(q, r)] = new_rq;
                }
                rotations += 1;
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    Ok(eig)
}

/// Second-smallest eigenvalue of a symmetric matrix (the algebraic
/// connectivity when `m` is a Laplacian). Zero for matrices smaller than 2x2.
pub fn fiedler(m: &DMatrix<f64>) -> Result<f64> {
    let eig = symmetric_eigenvalues(m)?;
    Ok(eig.get(1).copied().unwrap_or(0.0))
}

/// Spectral norm of a symmetric matrix.
pub fn symmetric_norm(m: &DMatrix<f64>) -> Result<f64> {
    let eig = symmetric_eigenvalues(m)?;
    Ok(eig
        .first()
        .map(|lo| lo.abs().max(eig[eig.len() - 1].abs()))
        .unwrap_or(0.0))
}

/// Fiedler value of a positive semidefinite Laplacian-like matrix through
/// its Rayleigh-quotient characterization: `min x^T L x / |x|^2` over
/// `x != 0, 1^T x = 0`.
///
/// Power iteration on `cI - L` restricted to the complement of the all-ones
/// vector, with `c` a Gershgorin bound. Intended as an independent check on
/// small instances; convergence slows when `lambda_2 ~ lambda_3`.
pub fn fiedler_rayleigh(m: &DMatrix<f64>, iterations: usize) -> Result<f64> {
    check_symmetric(m)?;
    let n = m.nrows();
    if n < 2 {
        return Ok(0.0);
    }
    let shift = (0..n)
        .map(|i| (0..n).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
        + 1.0;
    let project = |v: &mut DVector<f64>| {
        let mean = v.mean();
        v.add_scalar_mut(-mean);
    };
    // deterministic start with no component along 1
    let mut x = DVector::from_fn(n, |i, _| {
        ((i as f64 + 1.0) * 0.7548776662).sin() + 0.1 * i as f64
    });
    project(&mut x);
    let mut quotient = 0.0;
    for _ in 0..iterations {
        let norm = x.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        x /= norm;
        let lx = m * &x;
        quotient = x.dot(&lx);
        let mut next = &x * shift - lx;
        project(&mut next);
        x = next;
    }
    Ok(quotient)
}
