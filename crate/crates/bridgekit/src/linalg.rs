//! Dense linear-algebra primitives shared by the solvers: matrix exponential,
//! principal square root of symmetric positive-semidefinite matrices, composite
//! quadrature weights, and finite-difference stencil weights.

use nalgebra::{DMatrix, DVector};

use crate::error::{BridgeError, Result};

/// Relative eigenvalue clip threshold used by [`sqrt_spd`].
pub const SQRT_EIG_CLIP: f64 = 1e-12;

/// Relative symmetry tolerance accepted by [`sqrt_spd`].
pub const SQRT_SYMMETRY_TOL: f64 = 1e-9;

/// Return `(m + m') / 2`.
pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    s
}

/// Symmetrize in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Relative Frobenius deviation from symmetry, `||m - m'|| / ||m||`.
pub fn symmetry_deviation(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / norm
}

/// True when every entry is finite.
pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Matrix exponential by scaling-and-squaring with a degree-6 diagonal Padé
/// approximant. Accurate to machine precision for the small dense matrices
/// handled here; the scaling power keeps the Padé argument below 1/2 in the
/// infinity norm.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm expects a square matrix");

    // Infinity norm (max absolute row sum).
    let norm = (0..n)
        .map(|i| (0..n).map(|j| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);

    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let b = a / 2f64.powi(squarings as i32);

    // Diagonal Padé(6,6) coefficients.
    const C: [f64; 7] = [
        1.0,
        1.0 / 2.0,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15_840.0,
        1.0 / 665_280.0,
    ];

    let eye = DMatrix::<f64>::identity(n, n);
    let b2 = &b * &b;
    let b4 = &b2 * &b2;

    // Even part V and odd part U so that N = V + U, D = V - U.
    let v = &eye * C[0] + &b2 * C[2] + &b4 * C[4] + &b4 * &b2 * C[6];
    let u = &b * (&eye * C[1] + &b2 * C[3] + &b4 * C[5]);

    let numer = &v + &u;
    let denom = &v - &u;
    let mut f = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is singular; the scaling step should prevent this");

    for _ in 0..squarings {
        f = &f * &f;
    }
    f
}

/// Principal square root of a symmetric positive-semidefinite matrix via
/// eigendecomposition. Eigenvalues in `[-SQRT_EIG_CLIP * lambda_max, 0)` are
/// clipped to zero so that roundoff on valid inputs does not abort; anything
/// more negative is rejected.
pub fn sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let deviation = symmetry_deviation(m);
    if deviation > SQRT_SYMMETRY_TOL {
        return Err(BridgeError::NotSymmetric {
            deviation,
            tolerance: SQRT_SYMMETRY_TOL,
        });
    }
    let sym = symmetrized(m);
    let eig = sym.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(0.0_f64, |acc, &l| acc.max(l.abs()));
    let threshold = -SQRT_EIG_CLIP * lambda_max;

    let mut roots = DVector::<f64>::zeros(eig.eigenvalues.len());
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < threshold {
            return Err(BridgeError::NotPositiveSemidefinite {
                eigenvalue: lambda,
                threshold,
            });
        }
        roots[i] = lambda.max(0.0).sqrt();
    }

    let q = &eig.eigenvectors;
    let mut root = q * DMatrix::from_diagonal(&roots) * q.transpose();
    symmetrize(&mut root);
    Ok(root)
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    symmetrized(m)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(BridgeError::NotPositiveDefinite { context })
}

/// Composite Newton-Cotes weights of fourth-order accuracy over `panels`
/// uniform intervals of width `dt` (weights for the `panels + 1` nodes).
///
/// Even panel counts use composite Simpson; odd counts >= 3 use Simpson on the
/// leading panels and the 3/8 rule on the last three; a single panel falls
/// back to the trapezoid.
pub fn quad_weights(panels: usize, dt: f64) -> Vec<f64> {
    assert!(panels >= 1, "quadrature needs at least one panel");
    let mut w = vec![0.0; panels + 1];
    match panels {
        1 => {
            w[0] = 0.5 * dt;
            w[1] = 0.5 * dt;
        }
        p if p % 2 == 0 => {
            simpson_into(&mut w, 0, p, dt);
        }
        p => {
            // p odd, p >= 3: Simpson on [0, p-3], 3/8 on the trailing three panels.
            if p > 3 {
                simpson_into(&mut w, 0, p - 3, dt);
            }
            let c = 3.0 * dt / 8.0;
            w[p - 3] += c;
            w[p - 2] += 3.0 * c;
            w[p - 1] += 3.0 * c;
            w[p] += c;
        }
    }
    w
}

fn simpson_into(w: &mut [f64], start: usize, end: usize, dt: f64) {
    debug_assert!((end - start) % 2 == 0 && end > start);
    let c = dt / 3.0;
    let mut k = start;
    while k + 2 <= end {
        w[k] += c;
        w[k + 1] += 4.0 * c;
        w[k + 2] += c;
        k += 2;
    }
}

/// Running integrals `int_{x_0}^{x_j} f` over a uniform grid, one value per
/// node, using the same fourth-order panel rules as [`quad_weights`]: even
/// prefixes by the Simpson recurrence, odd prefixes as the even prefix three
/// panels back plus a 3/8 tail (trapezoid for the very first panel).
pub fn prefix_integrals(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 2, "prefix integration needs at least two nodes");
    let mut out = vec![0.0; n];
    for j in 1..n {
        out[j] = if j % 2 == 0 {
            out[j - 2] + dt / 3.0 * (values[j - 2] + 4.0 * values[j - 1] + values[j])
        } else if j == 1 {
            0.5 * dt * (values[0] + values[1])
        } else {
            out[j - 3]
                + 3.0 * dt / 8.0
                    * (values[j - 3] + 3.0 * values[j - 2] + 3.0 * values[j - 1] + values[j])
        };
    }
    out
}

/// First-derivative finite-difference weights on arbitrary nodes `xs`,
/// evaluated at `x0` (Fornberg's recurrence, restricted to derivative order 1).
pub fn derivative_weights(x0: f64, xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    assert!(n >= 2);
    // c[k][j]: weight of node j for derivative order k (k in {0, 1}).
    let mut c = vec![[0.0_f64; 2]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0_f64;
    for i in 1..n {
        let mut c2 = 1.0_f64;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                c[i][1] = c1 * (c[i - 1][0] - (xs[i - 1] - x0) * c[i - 1][1]) / c2;
                c[i][0] = -c1 * (xs[i - 1] - x0) * c[i - 1][0] / c2;
            }
            c[j][1] = ((xs[i] - x0) * c[j][1] - c[j][0]) / c3;
            c[j][0] = (xs[i] - x0) * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.iter().map(|pair| pair[1]).collect()
}
