//! The clamped-boundary Green's function: single columns, the full dense
//! Green matrix on small domains, and discrete derivative bundles in the
//! source and field variables.
//!
//! A column `G(·,y)` is the clamped solution of the bilaplacian equation with
//! a lattice delta at `y`; columns for non-interior sources are identically
//! zero by convention.

use crate::error::{Error, Result};
use crate::lattice::{GridFunction, Idx, LatticeDomain, MAX_DIM};
use crate::linalg;
use crate::operators::delta_function;
use crate::solver::{self, DenseBilaplacian, SolveOptions, SolveReport, DENSE_CAP};
use std::collections::HashMap;
use std::sync::Mutex;

#[derive(Clone, Debug)]
pub struct GreenColumn {
    pub source: Idx,
    pub values: GridFunction,
    pub report: SolveReport,
}

/// Solve one Green column with the matrix-free CG path.
pub fn green_column(domain: LatticeDomain, y: Idx, tol: f64) -> Result<GreenColumn> {
    green_column_with(domain, y, SolveOptions { tol, ..Default::default() })
}

pub fn green_column_with(
    domain: LatticeDomain,
    y: Idx,
    opts: SolveOptions,
) -> Result<GreenColumn> {
    let rhs = delta_function(domain, y)?;
    let (values, report) = solver::solve_bilaplacian(domain, &rhs, opts)?;
    Ok(GreenColumn { source: y, values, report })
}

/// Dense symmetric Green matrix on the interior points, with an optional
/// Cholesky factor reused by the membrane sampler.
pub struct GreenMatrix {
    domain: LatticeDomain,
    g: Vec<f64>,
    chol: Mutex<Option<Vec<f64>>>,
}

impl GreenMatrix {
    pub fn assemble(domain: LatticeDomain) -> Result<Self> {
        Self::assemble_with_cap(domain, DENSE_CAP)
    }

    pub fn assemble_with_cap(domain: LatticeDomain, cap: usize) -> Result<Self> {
        let p = domain.interior_count();
        if p > cap {
            return Err(Error::SizeCap { points: p, cap });
        }
        // G = (Δ_h²)⁻¹ / h^n: the delta right-hand side carries 1/h^n.
        let mut g = DenseBilaplacian::assemble_matrix(domain);
        linalg::spd_inverse(&mut g, p)?;
        let hn = domain.h().powi(domain.n() as i32);
        for v in g.iter_mut() {
            *v /= hn;
        }
        Ok(Self { domain, g, chol: Mutex::new(None) })
    }

    pub fn domain(&self) -> LatticeDomain {
        self.domain
    }

    /// `G(x,y)` with the zero conventions for non-interior arguments.
    pub fn value(&self, x: Idx, y: Idx) -> f64 {
        if !self.domain.is_interior(x) || !self.domain.is_interior(y) {
            return 0.0;
        }
        let p = self.domain.interior_count();
        self.g[self.domain.interior_rank(x) * p + self.domain.interior_rank(y)]
    }

    pub fn raw(&self) -> &[f64] {
        &self.g
    }

    pub fn max_abs(&self) -> f64 {
        self.g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Column `G(·,y)`; the zero function when `y` is not interior.
    pub fn column(&self, y: Idx) -> GridFunction {
        if !self.domain.is_interior(y) {
            return GridFunction::phi_zero(self.domain);
        }
        let p = self.domain.interior_count();
        let j = self.domain.interior_rank(y);
        let values = (0..p).map(|i| self.g[i * p + j]).collect();
        GridFunction::phi_from_interior_values(self.domain, values)
    }

    /// Lower Cholesky factor of the Green matrix itself (the covariance of
    /// the membrane field). Computed on first use.
    pub fn with_cholesky<T>(&self, f: impl FnOnce(&[f64]) -> T) -> Result<T> {
        let mut guard = self.chol.lock().unwrap();
        if guard.is_none() {
            let p = self.domain.interior_count();
            let mut l = self.g.clone();
            linalg::cholesky(&mut l, p).map_err(|e| {
                Error::Numeric(format!("green matrix is not numerically positive definite: {e}"))
            })?;
            *guard = Some(l);
        }
        Ok(f(guard.as_ref().unwrap()))
    }
}

/// Anything that can hand out Green columns (dense matrix, CG-with-cache).
pub trait ColumnSource: Sync {
    fn domain(&self) -> LatticeDomain;

    /// Column for `y`, zero for non-interior `y`.
    fn column(&self, y: Idx) -> Result<GridFunction>;
}

impl ColumnSource for GreenMatrix {
    fn domain(&self) -> LatticeDomain {
        GreenMatrix::domain(self)
    }

    fn column(&self, y: Idx) -> Result<GridFunction> {
        Ok(GreenMatrix::column(self, y))
    }
}

/// CG-backed column source with an in-memory cache, for domains above the
/// dense cap. Distinct sources may be solved concurrently.
pub struct CgColumns {
    domain: LatticeDomain,
    opts: SolveOptions,
    cache: Mutex<HashMap<Idx, GridFunction>>,
}

impl CgColumns {
    pub fn new(domain: LatticeDomain, opts: SolveOptions) -> Self {
        Self { domain, opts, cache: Mutex::new(HashMap::new()) }
    }
}

impl ColumnSource for CgColumns {
    fn domain(&self) -> LatticeDomain {
        self.domain
    }

    fn column(&self, y: Idx) -> Result<GridFunction> {
        if !self.domain.is_interior(y) {
            return Ok(GridFunction::phi_zero(self.domain));
        }
        if let Some(c) = self.cache.lock().unwrap().get(&y) {
            return Ok(c.clone());
        }
        let col = green_column_with(self.domain, y, self.opts)?.values;
        self.cache.lock().unwrap().insert(y, col.clone());
        Ok(col)
    }
}

/// `G(x,y)` through a column source, with the zero conventions.
pub fn green_value(source: &dyn ColumnSource, x: Idx, y: Idx) -> Result<f64> {
    if !source.domain().is_interior(y) {
        return Ok(0.0);
    }
    Ok(source.column(y)?.get(x))
}

/// Derivative bundle of `G(·,·)` at a fixed source `y`.
///
/// Field (`x`) derivatives difference the stored columns on demand; source
/// (`y`) derivatives are formed by differencing neighboring columns, so the
/// memory stays proportional to the columns actually used.
pub struct GreenDerivatives {
    domain: LatticeDomain,
    pub source: Idx,
    /// `G(·,y)`.
    pub base: GridFunction,
    /// `D^y_k G(·,y)`, forward, one per axis.
    pub grad_y: Vec<GridFunction>,
    /// `D^y_{−k} D^y_l G(·,y)`, row-major `(k,l)`.
    pub hess_y: Vec<GridFunction>,
}

impl GreenDerivatives {
    pub fn compute(source: &dyn ColumnSource, y: Idx) -> Result<Self> {
        let domain = source.domain();
        let n = domain.n();
        let h = domain.h();
        let col = |offset: Idx| -> Result<GridFunction> {
            let mut yy = y;
            for d in 0..n {
                yy[d] += offset[d];
            }
            source.column(yy)
        };
        let base = col([0; MAX_DIM])?;
        let mut grad_y = Vec::with_capacity(n);
        for k in 0..n {
            let mut e = [0i64; MAX_DIM];
            e[k] = 1;
            let fwd = col(e)?;
            grad_y.push(GridFunction::combine(&fwd, 1.0 / h, &base, -1.0 / h));
        }
        let mut hess_y = Vec::with_capacity(n * n);
        for k in 0..n {
            for l in 0..n {
                // D_{−k} D_l in y: offsets 0, +e_l, −e_k, −e_k+e_l.
                let mut el = [0i64; MAX_DIM];
                el[l] = 1;
                let mut mk = [0i64; MAX_DIM];
                mk[k] = -1;
                let mut mkl = mk;
                mkl[l] += 1;
                let a = col(el)?;
                let b = col(mk)?;
                let c = col(mkl)?;
                let h2 = h * h;
                let s1 = GridFunction::combine(&a, 1.0 / h2, &base, -1.0 / h2);
                let s2 = GridFunction::combine(&c, 1.0 / h2, &b, -1.0 / h2);
                hess_y.push(GridFunction::combine(&s1, 1.0, &s2, -1.0));
            }
        }
        Ok(Self { domain, source: y, base, grad_y, hess_y })
    }

    #[inline]
    fn fwd(col: &GridFunction, h: f64, x: Idx, j: usize) -> f64 {
        let mut xp = x;
        xp[j] += 1;
        (col.get(xp) - col.get(x)) / h
    }

    #[inline]
    fn hess_entry(col: &GridFunction, h: f64, x: Idx, i: usize, j: usize) -> f64 {
        let mut xj = x;
        xj[j] += 1;
        let mut xi = x;
        xi[i] -= 1;
        let mut xij = xi;
        xij[j] += 1;
        (col.get(xj) - col.get(x) - col.get(xij) + col.get(xi)) / (h * h)
    }

    pub fn value_at(&self, x: Idx) -> f64 {
        self.base.get(x)
    }

    /// `|∇_{h,x} G|` at `x`.
    pub fn grad_x_mag(&self, x: Idx) -> f64 {
        let n = self.domain.n();
        let h = self.domain.h();
        (0..n).map(|j| Self::fwd(&self.base, h, x, j).powi(2)).sum::<f64>().sqrt()
    }

    /// `|∇²_{h,x} G|` (Frobenius) at `x`.
    pub fn hess_x_mag(&self, x: Idx) -> f64 {
        let n = self.domain.n();
        let h = self.domain.h();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += Self::hess_entry(&self.base, h, x, i, j).powi(2);
            }
        }
        acc.sqrt()
    }

    /// Entry `(i,j)` of `∇_{h,x}∇_{h,y} G` at `x`.
    pub fn grad_x_grad_y_entry(&self, x: Idx, i: usize, j: usize) -> f64 {
        Self::fwd(&self.grad_y[j], self.domain.h(), x, i)
    }

    pub fn grad_x_grad_y_mag(&self, x: Idx) -> f64 {
        let n = self.domain.n();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.grad_x_grad_y_entry(x, i, j).powi(2);
            }
        }
        acc.sqrt()
    }

    /// `|∇²_{h,x}∇_{h,y} G|` at `x`.
    pub fn hess_x_grad_y_mag(&self, x: Idx) -> f64 {
        let n = self.domain.n();
        let h = self.domain.h();
        let mut acc = 0.0;
        for k in 0..n {
            let col = &self.grad_y[k];
            for i in 0..n {
                for j in 0..n {
                    acc += Self::hess_entry(col, h, x, i, j).powi(2);
                }
            }
        }
        acc.sqrt()
    }

    /// `|∇²_{h,x}∇²_{h,y} G|` at `x`.
    pub fn hess_x_hess_y_mag(&self, x: Idx) -> f64 {
        let n = self.domain.n();
        let h = self.domain.h();
        let mut acc = 0.0;
        for col in &self.hess_y {
            for i in 0..n {
                for j in 0..n {
                    acc += Self::hess_entry(col, h, x, i, j).powi(2);
                }
            }
        }
        acc.sqrt()
    }
}

/// Scale factor of the unit-lattice bridge: a mesh-`h` Green value becomes a
/// unit-lattice one after multiplying by `M^{4−n}` (with `M = 1/h = 2N+2`).
pub fn unit_scale_factor(domain: LatticeDomain) -> f64 {
    (domain.m() as f64).powi(4 - domain.n() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeDomain;
    use crate::solver::energy_norm;

    fn dom(n: usize, m: usize) -> LatticeDomain {
        LatticeDomain::new(n, m).unwrap()
    }

    #[test]
    fn single_point_green_value() {
        let d = dom(2, 2);
        let c = green_column(d, [1, 1, 0], 1e-12).unwrap();
        assert!((c.values.get([1, 1, 0]) - 1.0 / 80.0).abs() < 1e-14);
        let gm = GreenMatrix::assemble(d).unwrap();
        assert_eq!(gm.raw().len(), 1);
        assert!((gm.raw()[0] - 1.0 / 80.0).abs() < 1e-14);
    }

    #[test]
    fn cg_column_matches_dense_matrix() {
        let d = dom(2, 4);
        let gm = GreenMatrix::assemble(d).unwrap();
        for y in d.interior_points() {
            let c = green_column(d, y, 1e-12).unwrap();
            for x in d.interior_points() {
                assert!(
                    (c.values.get(x) - gm.value(x, y)).abs() <= 1e-8 * gm.max_abs(),
                    "mismatch at x={x:?}, y={y:?}"
                );
            }
        }
    }

    #[test]
    fn diag_nonnegative_and_column_errors() {
        let d = dom(2, 8);
        let gm = GreenMatrix::assemble(d).unwrap();
        for x in d.interior_points() {
            assert!(gm.value(x, x) >= 0.0);
        }
        assert!(green_column(d, [0, 3, 0], 1e-10).is_err());
    }

    #[test]
    fn green_value_zero_conventions() {
        let d = dom(2, 8);
        let gm = GreenMatrix::assemble(d).unwrap();
        assert_eq!(green_value(&gm, [3, 3, 0], [0, 5, 0]).unwrap(), 0.0);
        assert_eq!(green_value(&gm, [9, 9, 0], [4, 4, 0]).unwrap(), 0.0);
        let v = green_value(&gm, [3, 3, 0], [4, 4, 0]).unwrap();
        let w = green_value(&gm, [4, 4, 0], [3, 3, 0]).unwrap();
        assert!((v - w).abs() <= 1e-12 * gm.max_abs());
    }

    #[test]
    fn matrix_is_positive_definite() {
        let d = dom(2, 4);
        let gm = GreenMatrix::assemble(d).unwrap();
        let eig = crate::linalg::sym_eigenvalues(gm.raw(), d.interior_count());
        assert!(eig[0] > 0.0, "smallest eigenvalue {}", eig[0]);
    }

    #[test]
    fn diagonal_equals_column_energy() {
        let d = dom(2, 8);
        let gm = GreenMatrix::assemble(d).unwrap();
        for y in [[1, 1, 0], [4, 4, 0], [2, 6, 0]] {
            let col = gm.column(y);
            let e = energy_norm(&col);
            let g = gm.value(y, y);
            assert!((e - g).abs() <= 1e-10 * g, "energy {e} vs diag {g}");
        }
    }

    #[test]
    fn reproduction_inverse_property() {
        // Σ_y G(x,y) Δ²u(y) h^n = u(x) for clamped u.
        let d = dom(2, 6);
        let gm = GreenMatrix::assemble(d).unwrap();
        let u = GridFunction::phi_from_fn(d, |k| ((k[0] * 3 + k[1] * 7) % 5) as f64 - 2.0);
        let f = crate::operators::bilaplacian(&u);
        let hn = d.h().powi(2);
        for x in d.interior_points() {
            let mut acc = 0.0;
            for y in d.interior_points() {
                acc += gm.value(x, y) * f.get(y) * hn;
            }
            assert!((acc - u.get(x)).abs() <= 1e-7 * u.max_abs().max(1.0));
        }
    }

    #[test]
    fn derivative_bundle_matches_matrix_differencing() {
        let d = dom(2, 8);
        let h = d.h();
        let gm = GreenMatrix::assemble(d).unwrap();
        let y = [3, 4, 0];
        let der = GreenDerivatives::compute(&gm, y).unwrap();
        // Mixed first derivative against direct matrix differencing.
        for x in d.interior_points() {
            for i in 0..2 {
                for j in 0..2 {
                    let mut xp = x;
                    xp[i] += 1;
                    let mut yp = y;
                    yp[j] += 1;
                    let direct = (gm.value(xp, yp) - gm.value(x, yp) - gm.value(xp, y)
                        + gm.value(x, y))
                        / (h * h);
                    let bundled = der.grad_x_grad_y_entry(x, i, j);
                    assert!(
                        (bundled - direct).abs() <= 1e-8 * gm.max_abs() / (h * h),
                        "entry ({i},{j}) at {x:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn hess_x_hess_y_matches_brute_force_differencing() {
        // Entry ((i,j),(k,l)) of the fourth-order mixed bundle against
        // direct differencing of the dense matrix in both variables.
        let d = dom(2, 6);
        let h = d.h();
        let gm = GreenMatrix::assemble(d).unwrap();
        let y = [2, 3, 0];
        let der = GreenDerivatives::compute(&gm, y).unwrap();
        let gv = |x: Idx, y: Idx| gm.value(x, y);
        let hx = |f: &dyn Fn(Idx) -> f64, x: Idx, i: usize, j: usize| {
            let mut xj = x;
            xj[j] += 1;
            let mut xi = x;
            xi[i] -= 1;
            let mut xij = xi;
            xij[j] += 1;
            (f(xj) - f(x) - f(xij) + f(xi)) / (h * h)
        };
        for x in d.interior_points() {
            let mut acc = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        for l in 0..2 {
                            let f = |xx: Idx| {
                                let g = |yy: Idx| gv(xx, yy);
                                hx(&g, y, k, l)
                            };
                            let direct = hx(&f, x, i, j);
                            acc += direct * direct;
                        }
                    }
                }
            }
            let direct_mag = acc.sqrt();
            let bundled = der.hess_x_hess_y_mag(x);
            let scale = direct_mag.max(1.0);
            assert!(
                (bundled - direct_mag).abs() <= 1e-8 * scale,
                "at {x:?}: bundled {bundled} vs direct {direct_mag}"
            );
        }
    }

    #[test]
    fn mixed_bundle_swap_symmetry() {
        let d = dom(2, 8);
        let gm = GreenMatrix::assemble(d).unwrap();
        let y = [3, 5, 0];
        let x = [5, 2, 0];
        let der_y = GreenDerivatives::compute(&gm, y).unwrap();
        let der_x = GreenDerivatives::compute(&gm, x).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let a = der_y.grad_x_grad_y_entry(x, i, j);
                let b = der_x.grad_x_grad_y_entry(y, j, i);
                assert!((a - b).abs() <= 1e-8 * (a.abs() + b.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn boundary_source_gives_zero_bundle() {
        let d = dom(2, 8);
        let gm = GreenMatrix::assemble(d).unwrap();
        let der = GreenDerivatives::compute(&gm, [0, 4, 0]).unwrap();
        for x in d.lattice_points() {
            assert_eq!(der.value_at(x), 0.0);
            assert_eq!(der.grad_x_mag(x), 0.0);
        }
    }

    #[test]
    fn unit_lattice_rescaling_bridge() {
        // A mesh-h Green value times M^{4−n} solves the unit-lattice problem:
        // apply the unit-lattice bilaplacian to the rescaled column and
        // recover the unit delta.
        let big_n = 2usize;
        let m = 2 * big_n + 2;
        let d = dom(2, m);
        let gm = GreenMatrix::assemble(d).unwrap();
        let y = [3, 3, 0];
        let col = gm.column(y);
        let scale = unit_scale_factor(d);
        // Unit-lattice bilaplacian of k ↦ scale·G(k,y) at interior points.
        let stencil = crate::operators::bilaplacian_stencil(2);
        for x in d.interior_points() {
            let mut acc = 0.0;
            for (o, c) in &stencil {
                let mut kk = x;
                for dd in 0..2 {
                    kk[dd] += o[dd];
                }
                acc += c * scale * col.get(kk);
            }
            let want = if x == y { 1.0 } else { 0.0 };
            assert!((acc - want).abs() < 1e-9, "unit-lattice residual at {x:?}: {acc}");
        }
    }
}
