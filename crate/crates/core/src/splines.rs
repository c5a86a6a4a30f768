//! B-spline interpolation of lattice functions: the normalized splines `N^m`,
//! tensor splines on the mesh-`h` lattice, the smoothing interpolation
//! operator, piecewise-constant interpolation, and the exact commutation of
//! continuous derivatives with lattice differences.
//!
//! With the convention that `N^m` is supported on `[0, m]`, differentiating
//! the interpolant pairs with the *backward* lattice difference:
//! `D^α (J^μ_h u) = J^{μ−α}_h (D^α_{−h} u)` exactly, away from the knots.

use crate::error::{Error, Result};
use crate::lattice::{GridFunction, MAX_DIM};
use crate::operators::{backward_diff, diff, shift, DiffSign, MatrixField, MultiIndex};

fn binomial(m: usize, i: usize) -> f64 {
    let mut v = 1.0;
    for k in 0..i {
        v = v * (m - k) as f64 / (k + 1) as f64;
    }
    v
}

/// Truncated power `t₊^p` with `t₊⁰ = 1` for `t ≥ 0`.
fn trunc_pow(t: f64, p: usize) -> f64 {
    if t < 0.0 {
        0.0
    } else if p == 0 {
        1.0
    } else {
        t.powi(p as i32)
    }
}

/// The normalized B-spline `N^m`, piecewise polynomial of degree `m−1`
/// supported on `[0, m]`, evaluated from the truncated-power form.
pub fn bspline(m: usize, x: f64) -> Result<f64> {
    bspline_derivative(m, x, 0)
}

/// `k`-th classical derivative of `N^m` (one-sided at the knots).
pub fn bspline_derivative(m: usize, x: f64, k: usize) -> Result<f64> {
    if m < 1 {
        return Err(Error::Parameter("spline order must be at least 1".into()));
    }
    if k >= m {
        // Degree m−1 piecewise polynomial: derivatives of order ≥ m vanish a.e.
        return Ok(0.0);
    }
    if !(0.0..(m as f64 + 1.0)).contains(&x) && !(x >= 0.0 && x <= m as f64) {
        // Fast exit outside the support (the formula would telescope to zero).
        if x < 0.0 || x > m as f64 {
            return Ok(0.0);
        }
    }
    let mut falling = 1.0;
    for j in 0..k {
        falling *= (m - 1 - j) as f64;
    }
    let mut fact = 1.0;
    for j in 2..=m {
        fact *= j as f64;
    }
    let mut acc = 0.0;
    let mut sign = 1.0;
    for i in 0..=m {
        acc += sign * binomial(m, i) * trunc_pow(x - i as f64, m - 1 - k);
        sign = -sign;
    }
    Ok(m as f64 * falling * acc / fact)
}

/// Both sides of the derivative identity `∂N^m(x) = N^{m−1}(x) − N^{m−1}(x−1)`.
pub fn spline_derivative_identity(m: usize, x: f64) -> Result<(f64, f64)> {
    if m < 2 {
        return Err(Error::Parameter("derivative identity needs order m ≥ 2".into()));
    }
    let lhs = bspline_derivative(m, x, 1)?;
    let rhs = bspline(m - 1, x)? - bspline(m - 1, x - 1.0)?;
    Ok((lhs, rhs))
}

/// Tensor B-spline interpolation operator `J^μ_h` on the mesh-`h` lattice.
#[derive(Clone, Copy, Debug)]
pub struct SplineOperator {
    pub n: usize,
    pub mu: [usize; MAX_DIM],
    pub h: f64,
}

impl SplineOperator {
    pub fn new(n: usize, mu: [usize; MAX_DIM], h: f64) -> Result<Self> {
        if n < 2 || n > MAX_DIM {
            return Err(Error::Parameter(format!("dimension must be 2 or 3, got {n}")));
        }
        for d in 0..n {
            if mu[d] < 1 {
                return Err(Error::Parameter("spline orders must be at least 1".into()));
            }
        }
        if h <= 0.0 {
            return Err(Error::Parameter("mesh width must be positive".into()));
        }
        Ok(Self { n, mu, h })
    }

    /// The cubic-order operator `J_h = J^{(3,…,3)}_h`.
    pub fn cubic(n: usize, h: f64) -> Self {
        let mut mu = [0; MAX_DIM];
        for d in 0..n {
            mu[d] = 3;
        }
        Self::new(n, mu, h).expect("valid cubic operator")
    }

    /// `(J^μ_h u)(x)`; the compactly supported spline makes this a finite sum,
    /// and the zero extension of `u` supplies off-box values.
    pub fn interp(&self, u: &GridFunction, x: [f64; MAX_DIM]) -> f64 {
        self.interp_derivative(u, x, MultiIndex::zero())
    }

    /// Classical derivative `D^α (J^μ_h u)(x)` of the piecewise polynomial.
    pub fn interp_derivative(&self, u: &GridFunction, x: [f64; MAX_DIM], alpha: MultiIndex) -> f64 {
        let n = self.n;
        let h = self.h;
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for d in 0..n {
            let t = x[d] / h;
            lo[d] = (t - self.mu[d] as f64).ceil() as i64;
            hi[d] = t.floor() as i64;
        }
        let mut acc = 0.0;
        for k in crate::lattice::IdxBoxIter::new(n, lo, hi) {
            let uz = u.get(k);
            if uz == 0.0 {
                continue;
            }
            let mut w = uz;
            for d in 0..n {
                let t = x[d] / h - k[d] as f64;
                let a = alpha.0[d];
                let nd = bspline_derivative(self.mu[d], t, a).expect("order validated");
                w *= nd / h.powi(a as i32);
            }
            acc += w;
        }
        acc
    }
}

/// Both sides of the derivative/difference commutation at `x`:
/// the classical derivative of the interpolant, and the lower-order
/// interpolant of the backward difference.
pub fn commutation_check(
    op: &SplineOperator,
    alpha: MultiIndex,
    u: &GridFunction,
    x: [f64; MAX_DIM],
) -> Result<(f64, f64)> {
    for d in 0..op.n {
        if alpha.0[d] >= op.mu[d] {
            return Err(Error::Parameter(format!(
                "derivative order {} must stay below spline order {} on axis {d}",
                alpha.0[d], op.mu[d]
            )));
        }
    }
    let lhs = op.interp_derivative(u, x, alpha);
    let mut mu_low = op.mu;
    for d in 0..op.n {
        mu_low[d] -= alpha.0[d];
    }
    let low = SplineOperator::new(op.n, mu_low, op.h)?;
    let du = crate::operators::multi_diff(u, alpha, DiffSign::Backward)?;
    Ok((lhs, low.interp(&du, x)))
}

/// Piecewise-constant interpolation `I^pc_h u` at a real point: the value of
/// `u` at the lattice point whose half-open cell `k + [−h/2, h/2)^n`
/// contains `x`.
pub fn pc_interp(u: &GridFunction, x: [f64; MAX_DIM]) -> Result<f64> {
    let n = u.domain().n();
    let h = u.domain().h();
    let mut k = [0i64; MAX_DIM];
    for d in 0..n {
        k[d] = (x[d] / h + 0.5).floor() as i64;
    }
    let allowed = if u.is_phi() { u.domain().contains(k) } else { u.in_box(k) };
    if !allowed {
        return Err(Error::Domain(format!(
            "point {:?} lies outside the piecewise-constant interpolation region",
            &x[..n]
        )));
    }
    Ok(u.get(k))
}

/// Both sides of the Hessian bridge at `x`: the classical Hessian of the
/// cubic interpolant, and the matrix interpolation of the discrete Hessian
/// (entry `(i,j)` uses order `(3,…,3) − e_i − e_j` composed with the shift
/// `τ_{−he_j}`). Exact away from the knots.
pub fn hessian_bridge(u: &GridFunction, x: [f64; MAX_DIM]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = u.domain().n();
    let h = u.domain().h();
    let cubic = SplineOperator::cubic(n, h);
    let mut lhs = Vec::with_capacity(n * n);
    let mut rhs = Vec::with_capacity(n * n);
    for i in 0..n {
        let di = backward_diff(u, i)?;
        for j in 0..n {
            let mut alpha = MultiIndex::zero();
            alpha.0[i] += 1;
            alpha.0[j] += 1;
            lhs.push(cubic.interp_derivative(u, x, alpha));

            let hess_ij = diff(&di, j, DiffSign::Forward)?;
            let mut back = [0i64; MAX_DIM];
            back[j] = -1;
            let shifted = shift(&hess_ij, back);
            let mut mu = cubic.mu;
            mu[i] -= 1;
            mu[j] -= 1;
            let low = SplineOperator::new(n, mu, h)?;
            rhs.push(low.interp(&shifted, x));
        }
    }
    Ok((lhs, rhs))
}

/// `L²` norm of `D^α (J^μ_h u)` over the cube `x + [−s, s]^n`, integrated
/// exactly: the integrand is piecewise polynomial of per-axis degree
/// `2(μ_d − 1 − α_d)` on knot cells, so a 3-point Gauss rule per axis on each
/// knot segment suffices for the orders used here (`μ ≤ 3`).
pub fn interp_l2_norm(
    op: &SplineOperator,
    u: &GridFunction,
    alpha: MultiIndex,
    center: [f64; MAX_DIM],
    s: f64,
) -> f64 {
    let n = op.n;
    let h = op.h;
    // Gauss-Legendre 3-point rule on [-1, 1].
    let g = 0.7745966692414834f64;
    let nodes = [-g, 0.0, g];
    let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    // Per-axis segments: knot intervals clipped to the cube.
    let mut segs: Vec<Vec<(f64, f64)>> = Vec::with_capacity(n);
    for d in 0..n {
        let lo = center[d] - s;
        let hi = center[d] + s;
        let mut cuts = vec![lo];
        let mut k = (lo / h).floor() as i64 + 1;
        while (k as f64) * h < hi {
            if (k as f64) * h > lo {
                cuts.push(k as f64 * h);
            }
            k += 1;
        }
        cuts.push(hi);
        segs.push(cuts.windows(2).map(|w| (w[0], w[1])).collect());
    }
    // Tensor iteration over segments and Gauss points.
    let mut acc = 0.0;
    let seg_counts: Vec<usize> = segs.iter().map(|s| s.len()).collect();
    let total: usize = seg_counts.iter().product();
    for cell in 0..total {
        let mut rem = cell;
        let mut idx = [0usize; MAX_DIM];
        for d in (0..n).rev() {
            idx[d] = rem % seg_counts[d];
            rem /= seg_counts[d];
        }
        let pts = 3usize.pow(n as u32);
        for p in 0..pts {
            let mut rem = p;
            let mut x = [0.0; MAX_DIM];
            let mut w = 1.0;
            for d in 0..n {
                let (a, b) = segs[d][idx[d]];
                let q = rem % 3;
                rem /= 3;
                x[d] = 0.5 * (a + b) + 0.5 * (b - a) * nodes[q];
                w *= 0.5 * (b - a) * weights[q];
            }
            let v = op.interp_derivative(u, x, alpha);
            acc += w * v * v;
        }
    }
    acc.sqrt()
}

/// Matrix interpolation of a discrete Hessian field (the right-hand side of
/// the bridge as a standalone operator).
pub fn matrix_interp(hess: &MatrixField, h: f64, x: [f64; MAX_DIM]) -> Result<Vec<f64>> {
    let n = hess.n;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut back = [0i64; MAX_DIM];
            back[j] = -1;
            let shifted = shift(hess.entry(i, j), back);
            let mut mu = [0usize; MAX_DIM];
            for d in 0..n {
                mu[d] = 3;
            }
            mu[i] -= 1;
            mu[j] -= 1;
            let low = SplineOperator::new(n, mu, h)?;
            out.push(low.interp(&shifted, x));
        }
    }
    Ok(out)
}
