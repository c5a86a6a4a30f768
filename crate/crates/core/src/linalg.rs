//! Small dense symmetric kernels: Cholesky factorization, SPD solves and
//! inversion, and Jacobi eigenvalues for modest matrices. Row-major storage.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// In-place lower Cholesky `A = L Lᵀ`. Only the lower triangle is read;
/// on return the lower triangle holds `L` (upper is left untouched).
pub fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Numeric(format!(
                "matrix not positive definite at pivot {j} (d = {d:.3e})"
            )));
        }
        let ljj = d.sqrt();
        a[j * n + j] = ljj;
        let (head, tail) = a.split_at_mut((j + 1) * n);
        let row_j = &head[j * n..j * n + j];
        let update = |row_i: &mut [f64]| {
            let mut s = row_i[j];
            for k in 0..j {
                s -= row_i[k] * row_j[k];
            }
            row_i[j] = s / ljj;
        };
        if n - j > 256 {
            tail.par_chunks_mut(n).for_each(update);
        } else {
            tail.chunks_mut(n).for_each(update);
        }
    }
    Ok(())
}

/// Solve `L Lᵀ x = b` in place given the Cholesky factor.
pub fn chol_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// `y = L ξ` (used to color white noise with a covariance factor).
pub fn lower_mul(l: &[f64], n: usize, xi: &[f64], y: &mut [f64]) {
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..=i {
            s += l[i * n + k] * xi[k];
        }
        y[i] = s;
    }
}

/// In-place SPD inverse via Cholesky. On return the full matrix holds `A⁻¹`
/// (symmetrized). Triangular inversion runs per column and the Gram product
/// per row, both in parallel.
pub fn spd_inverse(a: &mut [f64], n: usize) -> Result<()> {
    cholesky(a, n)?;
    let l = a.to_vec();
    // wt[j] holds column j of W = L⁻¹ (entries W[k][j] for k ≥ j).
    let mut wt = vec![0.0; n * n];
    wt.par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        col[j] = 1.0 / l[j * n + j];
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[i * n + k] * col[k];
            }
            col[i] = -s / l[i * n + i];
        }
    });
    // A⁻¹[i][j] = Σ_{k ≥ max(i,j)} W[k][i] W[k][j]; fill the lower triangle.
    a.par_chunks_mut(n).enumerate().for_each(|(i, arow)| {
        let wi = &wt[i * n..(i + 1) * n];
        for j in 0..=i {
            let wj = &wt[j * n..(j + 1) * n];
            let mut s = 0.0;
            for k in i..n {
                s += wi[k] * wj[k];
            }
            arow[j] = s;
        }
    });
    for i in 0..n {
        for j in i + 1..n {
            a[i * n + j] = a[j * n + i];
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations. Intended for
/// small matrices (spectral sanity checks).
pub fn sym_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frob(&m, n)) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

fn frob(a: &[f64], n: usize) -> f64 {
    a.iter().take(n * n).map(|v| v * v).sum::<f64>().sqrt()
}
