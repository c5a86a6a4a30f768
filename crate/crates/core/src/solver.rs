//! Solve `Δ_h² u = f` for clamped `u`, matrix-free via conjugate gradients,
//! with a dense factorization oracle for small grids.
//!
//! The operator is symmetric positive definite on the clamped space (testing
//! the equation with `u` gives the squared Hessian energy), so CG applies.
//! The reported residual is the unweighted ℓ² norm of the interior vector,
//! which differs from the `L²` residual only by the constant `h^{n/2}`.

use crate::error::{Error, Result};
use crate::lattice::{GridFunction, Idx, LatticeDomain, Region};
use crate::linalg;
use crate::operators::{bilaplacian_stencil, hessian};
use serde::Serialize;

/// Default cap on interior points for the dense oracle path.
pub const DENSE_CAP: usize = 5000;

/// Default relative residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MethodKind {
    Cg,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Preconditioner {
    /// Diagonal scaling. The bilaplacian diagonal is constant on the interior,
    /// so this reproduces plain CG exactly; kept as the cheap default.
    Jacobi,
    /// Two nested Dirichlet-Laplacian solves applied via sine transforms.
    /// An inexact inverse (clamped boundary conditions are not the square of
    /// Dirichlet ones) used purely for acceleration.
    NestedLaplacian,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolveOptions {
    pub tol: f64,
    /// Iteration cap; `None` means the default `50·M²`.
    pub max_iter: Option<usize>,
    pub precond: Preconditioner,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: None, precond: Preconditioner::Jacobi }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub method: MethodKind,
}

/// Apply the fused bilaplacian stencil to an interior vector with implicit
/// zeros outside the interior.
pub struct BilaplacianApply {
    domain: LatticeDomain,
    stencil: Vec<(Idx, f64)>,
    h4: f64,
}

impl BilaplacianApply {
    pub fn new(domain: LatticeDomain) -> Self {
        Self { domain, stencil: bilaplacian_stencil(domain.n()), h4: domain.h().powi(4) }
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let d = &self.domain;
        debug_assert_eq!(u.len(), d.interior_count());
        for (rank, k) in d.interior_points().enumerate() {
            let mut acc = 0.0;
            for (o, c) in &self.stencil {
                let mut kk = k;
                for dd in 0..d.n() {
                    kk[dd] += o[dd];
                }
                if d.is_interior(kk) {
                    acc += c * u[d.interior_rank(kk)];
                }
            }
            out[rank] = acc / self.h4;
        }
    }
}

/// Inverse of the squared Dirichlet Laplacian on the interior grid, applied
/// through dense sine transforms. Symmetric positive definite.
struct SinePrecond {
    m: usize,
    n: usize,
    /// `S[j][k] = sin(π (j+1)(k+1) / M)`, size `(M−1)²`.
    s: Vec<f64>,
    /// 1D Dirichlet-Laplacian eigenvalues `4 sin²(π (k+1) / 2M) / h²`.
    lam: Vec<f64>,
}

impl SinePrecond {
    fn new(domain: LatticeDomain) -> Self {
        let m = domain.m() as usize;
        let w = m - 1;
        let mut s = vec![0.0; w * w];
        for j in 0..w {
            for k in 0..w {
                s[j * w + k] =
                    (std::f64::consts::PI * (j + 1) as f64 * (k + 1) as f64 / m as f64).sin();
            }
        }
        let h = domain.h();
        let lam = (0..w)
            .map(|k| {
                let t = (std::f64::consts::PI * (k + 1) as f64 / (2.0 * m as f64)).sin();
                4.0 * t * t / (h * h)
            })
            .collect();
        Self { m, n: domain.n(), s, lam }
    }

    /// Sine-transform along every axis (S is its own inverse up to `M/2`).
    fn transform(&self, v: &mut [f64]) {
        let w = self.m - 1;
        let mut buf = vec![0.0; w];
        match self.n {
            2 => {
                for row in 0..w {
                    let base = row * w;
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b = (0..w).map(|j| self.s[k * w + j] * v[base + j]).sum();
                    }
                    v[base..base + w].copy_from_slice(&buf);
                }
                for col in 0..w {
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b = (0..w).map(|j| self.s[k * w + j] * v[j * w + col]).sum();
                    }
                    for k in 0..w {
                        v[k * w + col] = buf[k];
                    }
                }
            }
            3 => {
                for axis in 0..3 {
                    let (s0, s1) = match axis {
                        0 => (w * w, 1),
                        1 => (w, 1),
                        _ => (1, w),
                    };
                    // Iterate over all lines along `axis`.
                    for a in 0..w {
                        for b in 0..w {
                            let base = match axis {
                                0 => a * w + b,
                                1 => a * w * w + b,
                                _ => a * w * w + b * w,
                            };
                            let stride = match axis {
                                0 => s0,
                                1 => s1 * w,
                                _ => 1,
                            };
                            for (k, t) in buf.iter_mut().enumerate() {
                                *t = (0..w)
                                    .map(|j| self.s[k * w + j] * v[base + j * stride])
                                    .sum();
                            }
                            for k in 0..w {
                                v[base + k * stride] = buf[k];
                            }
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let w = self.m - 1;
        z.copy_from_slice(r);
        self.transform(z);
        match self.n {
            2 => {
                for i in 0..w {
                    for j in 0..w {
                        let mu = self.lam[i] + self.lam[j];
                        z[i * w + j] /= mu * mu;
                    }
                }
            }
            3 => {
                for i in 0..w {
                    for j in 0..w {
                        for k in 0..w {
                            let mu = self.lam[i] + self.lam[j] + self.lam[k];
                            z[(i * w + j) * w + k] /= mu * mu;
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
        self.transform(z);
        let norm = (2.0 / self.m as f64).powi(self.n as i32);
        for v in z.iter_mut() {
            *v *= norm;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Read the right-hand side at interior points into rank order.
fn rhs_vector(domain: LatticeDomain, f: &GridFunction) -> Vec<f64> {
    domain.interior_points().map(|k| f.get(k)).collect()
}

/// Solve `Δ_h² u = f` on the interior with clamped (zero-exterior) data.
pub fn solve_bilaplacian(
    domain: LatticeDomain,
    f: &GridFunction,
    opts: SolveOptions,
) -> Result<(GridFunction, SolveReport)> {
    if opts.tol <= 0.0 {
        return Err(Error::Parameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let b = rhs_vector(domain, f);
    let bnorm = norm2(&b);
    if bnorm == 0.0 {
        return Ok((
            GridFunction::phi_zero(domain),
            SolveReport { iterations: 0, residual: 0.0, method: MethodKind::Cg },
        ));
    }
    let cap = opts
        .max_iter
        .unwrap_or_else(|| 50 * (domain.m() as usize) * (domain.m() as usize));
    let apply = BilaplacianApply::new(domain);
    let precond = match opts.precond {
        Preconditioner::NestedLaplacian => Some(SinePrecond::new(domain)),
        Preconditioner::Jacobi => None,
    };
    let jacobi_diag = {
        let center = bilaplacian_stencil(domain.n())
            .iter()
            .find(|(o, _)| o.iter().all(|&c| c == 0))
            .map(|(_, c)| *c)
            .unwrap();
        center / domain.h().powi(4)
    };

    let p_apply = |r: &[f64], z: &mut [f64]| match &precond {
        Some(sp) => sp.apply(r, z),
        None => {
            for (zi, ri) in z.iter_mut().zip(r) {
                *zi = ri / jacobi_diag;
            }
        }
    };

    let len = b.len();
    let mut x = vec![0.0; len];
    let mut r = b.clone();
    let mut z = vec![0.0; len];
    p_apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; len];
    let mut iterations = 0;
    let mut residual = 1.0;
    for it in 1..=cap {
        apply.apply(&p, &mut q);
        let alpha = rz / dot(&p, &q);
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        iterations = it;
        residual = norm2(&r) / bnorm;
        if residual <= opts.tol {
            let u = GridFunction::phi_from_interior_values(domain, x);
            return Ok((u, SolveReport { iterations, residual, method: MethodKind::Cg }));
        }
        p_apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..len {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence {
        iterations,
        residual,
        best: Box::new(GridFunction::phi_from_interior_values(domain, x)),
    })
}

/// Dense bilaplacian on the interior: assembled matrix and its Cholesky
/// factor. The brute-force oracle behind the iterative path.
pub struct DenseBilaplacian {
    domain: LatticeDomain,
    factor: Vec<f64>,
}

impl DenseBilaplacian {
    pub fn assemble_matrix(domain: LatticeDomain) -> Vec<f64> {
        let p = domain.interior_count();
        let stencil = bilaplacian_stencil(domain.n());
        let h4 = domain.h().powi(4);
        let mut a = vec![0.0; p * p];
        for (i, k) in domain.interior_points().enumerate() {
            for (o, c) in &stencil {
                let mut kk = k;
                for dd in 0..domain.n() {
                    kk[dd] += o[dd];
                }
                if domain.is_interior(kk) {
                    a[i * p + domain.interior_rank(kk)] += c / h4;
                }
            }
        }
        a
    }

    pub fn new(domain: LatticeDomain) -> Result<Self> {
        Self::with_cap(domain, DENSE_CAP)
    }

    pub fn with_cap(domain: LatticeDomain, cap: usize) -> Result<Self> {
        let p = domain.interior_count();
        if p > cap {
            return Err(Error::SizeCap { points: p, cap });
        }
        let mut factor = Self::assemble_matrix(domain);
        linalg::cholesky(&mut factor, p)?;
        Ok(Self { domain, factor })
    }

    pub fn domain(&self) -> LatticeDomain {
        self.domain
    }

    pub fn solve_vec(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        linalg::chol_solve(&self.factor, self.domain.interior_count(), &mut x);
        x
    }

    pub fn solve(&self, f: &GridFunction) -> GridFunction {
        let b = rhs_vector(self.domain, f);
        GridFunction::phi_from_interior_values(self.domain, self.solve_vec(&b))
    }
}

/// One-shot dense solve under the default cap.
pub fn dense_solve(domain: LatticeDomain, f: &GridFunction) -> Result<GridFunction> {
    Ok(DenseBilaplacian::new(domain)?.solve(f))
}

/// Squared Hessian energy `‖∇_h² u‖²_{L²(ℝⁿ)}`, summed over every lattice
/// point where the Hessian is nonzero.
pub fn energy_norm(u: &GridFunction) -> f64 {
    hessian(u).l2_norm_sq(Region::Whole)
}
