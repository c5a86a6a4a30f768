//! The discrete difference calculus: shifts, forward/backward differences,
//! gradient, the (non-symmetric) Hessian, Laplacian, bilaplacian and the
//! lattice delta function. All operators act with implicit zero extension and
//! never special-case the boundary.

use crate::error::{Error, Result};
use crate::lattice::{GridFunction, Idx, LatticeDomain, Lp, Region, MAX_DIM};

/// Direction of a first difference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffSign {
    Forward,
    Backward,
}

/// Multi-index of difference orders per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiIndex(pub [usize; MAX_DIM]);

impl MultiIndex {
    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn zero() -> Self {
        MultiIndex([0; MAX_DIM])
    }
}

fn check_axis(domain: &LatticeDomain, axis: usize) -> Result<()> {
    if axis >= domain.n() {
        return Err(Error::Parameter(format!(
            "axis {axis} out of range for dimension {}",
            domain.n()
        )));
    }
    Ok(())
}

/// `D^h_{±i} f`. Forward: `(f(x+he_i) − f(x))/h`; backward with `−he_i`.
pub fn diff(f: &GridFunction, axis: usize, sign: DiffSign) -> Result<GridFunction> {
    check_axis(&f.domain(), axis)?;
    let h = f.domain().h();
    let mut lo = f.box_lo();
    let mut hi = f.box_hi();
    match sign {
        DiffSign::Forward => lo[axis] -= 1,
        DiffSign::Backward => hi[axis] += 1,
    }
    let mut out = GridFunction::zero_on_box(f.domain(), lo, hi);
    for k in out.box_points() {
        let mut kk = k;
        let v = match sign {
            DiffSign::Forward => {
                kk[axis] += 1;
                (f.get(kk) - f.get(k)) / h
            }
            DiffSign::Backward => {
                kk[axis] -= 1;
                (f.get(k) - f.get(kk)) / h
            }
        };
        out.set(k, v);
    }
    Ok(out)
}

pub fn forward_diff(f: &GridFunction, axis: usize) -> Result<GridFunction> {
    diff(f, axis, DiffSign::Forward)
}

pub fn backward_diff(f: &GridFunction, axis: usize) -> Result<GridFunction> {
    diff(f, axis, DiffSign::Backward)
}

/// Shift `τ_a f = f(· + a·h)` for a step offset `a`.
pub fn shift(f: &GridFunction, a: Idx) -> GridFunction {
    let n = f.domain().n();
    let mut lo = f.box_lo();
    let mut hi = f.box_hi();
    for d in 0..n {
        lo[d] -= a[d];
        hi[d] -= a[d];
    }
    let mut out = GridFunction::zero_on_box(f.domain(), lo, hi);
    for k in out.box_points() {
        let mut kk = k;
        for d in 0..n {
            kk[d] += a[d];
        }
        let v = f.get(kk);
        out.set(k, v);
    }
    out
}

/// `D^α_{±h}` applied componentwise.
pub fn multi_diff(f: &GridFunction, alpha: MultiIndex, sign: DiffSign) -> Result<GridFunction> {
    let n = f.domain().n();
    for d in n..MAX_DIM {
        if alpha.0[d] != 0 {
            return Err(Error::Parameter(format!("multi-index uses axis {d} beyond dimension {n}")));
        }
    }
    let mut g = f.clone();
    for d in 0..n {
        for _ in 0..alpha.0[d] {
            g = diff(&g, d, sign)?;
        }
    }
    Ok(g)
}

/// Vector-valued lattice function (one component per axis).
#[derive(Clone, Debug)]
pub struct VectorField {
    pub components: Vec<GridFunction>,
}

impl VectorField {
    pub fn magnitude_at(&self, k: Idx) -> f64 {
        self.components.iter().map(|c| c.get(k).powi(2)).sum::<f64>().sqrt()
    }

    /// Discrete `L^p` norm, Euclidean across components.
    pub fn norm(&self, p: Lp, region: Region) -> Result<f64> {
        let mut acc = 0.0;
        for c in &self.components {
            acc += crate::lattice::discrete_norm(c, p, region)?.powi(2);
        }
        Ok(acc.sqrt())
    }
}

/// Matrix-valued lattice function, `n²` components in row-major entry order.
#[derive(Clone, Debug)]
pub struct MatrixField {
    pub n: usize,
    pub entries: Vec<GridFunction>,
}

impl MatrixField {
    pub fn entry(&self, i: usize, j: usize) -> &GridFunction {
        &self.entries[i * self.n + j]
    }

    /// Pointwise Frobenius magnitude.
    pub fn frobenius_at(&self, k: Idx) -> f64 {
        self.entries.iter().map(|e| e.get(k).powi(2)).sum::<f64>().sqrt()
    }

    pub fn norm(&self, p: Lp, region: Region) -> Result<f64> {
        let mut acc = 0.0;
        for e in &self.entries {
            acc += crate::lattice::discrete_norm(e, p, region)?.powi(2);
        }
        Ok(acc.sqrt())
    }

    /// Squared `L²` norm over a region (sum of squared entry norms).
    pub fn l2_norm_sq(&self, region: Region) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                crate::lattice::discrete_norm(e, Lp::P(2.0), region)
                    .expect("p=2 is valid")
                    .powi(2)
            })
            .sum()
    }
}

/// Forward gradient `∇_h f`.
pub fn gradient(f: &GridFunction) -> VectorField {
    let n = f.domain().n();
    let components = (0..n).map(|d| forward_diff(f, d).expect("axis in range")).collect();
    VectorField { components }
}

/// Discrete Hessian `(D^h_{−i} D^h_j f)_{ij}`. Not symmetric in general.
pub fn hessian(f: &GridFunction) -> MatrixField {
    let n = f.domain().n();
    let mut entries = Vec::with_capacity(n * n);
    for i in 0..n {
        let di = backward_diff(f, i).expect("axis in range");
        for j in 0..n {
            entries.push(forward_diff(&di, j).expect("axis in range"));
        }
    }
    // Entries were built as D_j D_{-i}; difference operators commute, so the
    // (i,j) slot already holds D_{-i} D_j.
    MatrixField { n, entries }
}

/// `Δ_h f` with the (2n+1)-point stencil.
pub fn laplacian(f: &GridFunction) -> GridFunction {
    let n = f.domain().n();
    let h2 = f.domain().h() * f.domain().h();
    let mut lo = f.box_lo();
    let mut hi = f.box_hi();
    for d in 0..n {
        lo[d] -= 1;
        hi[d] += 1;
    }
    let mut out = GridFunction::zero_on_box(f.domain(), lo, hi);
    for k in out.box_points() {
        let mut acc = -2.0 * n as f64 * f.get(k);
        for d in 0..n {
            let mut kp = k;
            kp[d] += 1;
            let mut km = k;
            km[d] -= 1;
            acc += f.get(kp) + f.get(km);
        }
        out.set(k, acc / h2);
    }
    out
}

/// Offsets and integer coefficients of the composed bilaplacian stencil;
/// the true coefficients are these divided by `h⁴`.
pub fn bilaplacian_stencil(n: usize) -> Vec<(Idx, f64)> {
    use std::collections::HashMap;
    let mut lap: HashMap<Idx, f64> = HashMap::new();
    lap.insert([0; MAX_DIM], -2.0 * n as f64);
    for d in 0..n {
        for s in [-1i64, 1] {
            let mut o = [0i64; MAX_DIM];
            o[d] = s;
            *lap.entry(o).or_insert(0.0) += 1.0;
        }
    }
    let mut sq: HashMap<Idx, f64> = HashMap::new();
    for (o1, c1) in &lap {
        for (o2, c2) in &lap {
            let mut o = [0i64; MAX_DIM];
            for d in 0..MAX_DIM {
                o[d] = o1[d] + o2[d];
            }
            *sq.entry(o).or_insert(0.0) += c1 * c2;
        }
    }
    let mut v: Vec<(Idx, f64)> = sq.into_iter().filter(|(_, c)| *c != 0.0).collect();
    v.sort_by_key(|(o, _)| *o);
    v
}

/// `Δ_h² f` via the fused (precomposed) stencil.
pub fn bilaplacian(f: &GridFunction) -> GridFunction {
    let n = f.domain().n();
    let h4 = f.domain().h().powi(4);
    let stencil = bilaplacian_stencil(n);
    let mut lo = f.box_lo();
    let mut hi = f.box_hi();
    for d in 0..n {
        lo[d] -= 2;
        hi[d] += 2;
    }
    let mut out = GridFunction::zero_on_box(f.domain(), lo, hi);
    for k in out.box_points() {
        let mut acc = 0.0;
        for (o, c) in &stencil {
            let mut kk = k;
            for d in 0..n {
                kk[d] += o[d];
            }
            acc += c * f.get(kk);
        }
        out.set(k, acc / h4);
    }
    out
}

/// `Δ_h(Δ_h f)` computed as an honest composition, as a cross-check for the
/// fused path.
pub fn bilaplacian_composed(f: &GridFunction) -> GridFunction {
    laplacian(&laplacian(f))
}

/// Lattice delta `δ_{h,y}`: value `1/h^n` at an interior point `y`.
pub fn delta_function(domain: LatticeDomain, y: Idx) -> Result<GridFunction> {
    if !domain.is_interior(y) {
        return Err(Error::Domain(format!(
            "delta source {:?} is not an interior point",
            &y[..domain.n()]
        )));
    }
    let scale = domain.h().powi(-(domain.n() as i32));
    Ok(GridFunction::phi_from_fn(domain, |k| if k == y { scale } else { 0.0 }))
}

/// Discrete `L²` inner product `h^n Σ f g`.
pub fn inner_product(f: &GridFunction, g: &GridFunction) -> f64 {
    assert_eq!(f.domain(), g.domain());
    let n = f.domain().n();
    let hn = f.domain().h().powi(n as i32);
    // Sum over the intersection of the stored boxes; elsewhere one factor is 0.
    let mut lo = [0i64; MAX_DIM];
    let mut hi = [0i64; MAX_DIM];
    for d in 0..n {
        lo[d] = f.box_lo()[d].max(g.box_lo()[d]);
        hi[d] = f.box_hi()[d].min(g.box_hi()[d]);
        if lo[d] > hi[d] {
            return 0.0;
        }
    }
    let mut acc = 0.0;
    for k in crate::lattice::IdxBoxIter::new(n, lo, hi) {
        acc += f.get(k) * g.get(k);
    }
    hn * acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{CubeRegion, LatticeDomain};

    fn dom(n: usize, m: usize) -> LatticeDomain {
        LatticeDomain::new(n, m).unwrap()
    }

    /// Fixture on a window large enough that stencils never see the window edge
    /// in the probed subregion.
    fn window_fn(d: LatticeDomain, f: impl Fn(Idx) -> f64) -> GridFunction {
        GridFunction::on_box(d, [-4, -4, -4], [12, 12, 12], f)
    }

    #[test]
    fn forward_diff_of_linear_is_constant() {
        let d = dom(2, 8);
        let h = d.h();
        let a = [1.5, -2.0];
        let f = window_fn(d, |k| a[0] * k[0] as f64 * h + a[1] * k[1] as f64 * h);
        for axis in 0..2 {
            let g = forward_diff(&f, axis).unwrap();
            for k in crate::lattice::IdxBoxIter::new(2, [0, 0, 0], [8, 8, 0]) {
                assert!((g.get(k) - a[axis]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diff_of_constant_is_zero() {
        let d = dom(2, 4);
        let f = window_fn(d, |_| 7.25);
        let g = forward_diff(&f, 0).unwrap();
        for k in crate::lattice::IdxBoxIter::new(2, [0, 0, 0], [4, 4, 0]) {
            assert_eq!(g.get(k), 0.0);
        }
    }

    #[test]
    fn diff_of_indicator() {
        let d = dom(2, 8);
        let h = d.h();
        let z = [4, 4, 0];
        let f = GridFunction::phi_from_fn(d, |k| if k == z { 1.0 } else { 0.0 });
        let g = forward_diff(&f, 0).unwrap();
        assert!((g.get(z) - (-1.0 / h)).abs() < 1e-12);
        assert!((g.get([3, 4, 0]) - 1.0 / h).abs() < 1e-12);
        assert_eq!(g.get([4, 5, 0]), 0.0);
        assert!(forward_diff(&f, 2).is_err());
    }

    #[test]
    fn product_rule_holds_exactly() {
        // D(fg) = (Df)g + τf·Dg with the shift on the first factor.
        let d = dom(2, 8);
        let f = window_fn(d, |k| ((k[0] * 7 + k[1] * 3) % 11) as f64 - 4.0);
        let g = window_fn(d, |k| ((k[0] * 2 + k[1] * 5) % 13) as f64 + 0.5);
        let fg = GridFunction::on_box(d, [-4, -4, 0], [12, 12, 0], |k| f.get(k) * g.get(k));
        for axis in 0..2 {
            let lhs = forward_diff(&fg, axis).unwrap();
            let df = forward_diff(&f, axis).unwrap();
            let dg = forward_diff(&g, axis).unwrap();
            let mut e = [0i64; MAX_DIM];
            e[axis] = 1;
            let tf = shift(&f, e);
            for k in crate::lattice::IdxBoxIter::new(2, [0, 0, 0], [8, 8, 0]) {
                let rhs = df.get(k) * g.get(k) + tf.get(k) * dg.get(k);
                assert!((lhs.get(k) - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
            }
        }
    }

    #[test]
    fn hessian_of_quadratics() {
        let d = dom(2, 8);
        let h = d.h();
        let f = window_fn(d, |k| (k[0] as f64 * h) * (k[1] as f64 * h));
        let hess = hessian(&f);
        for k in crate::lattice::IdxBoxIter::new(2, [1, 1, 0], [7, 7, 0]) {
            assert!((hess.entry(0, 1).get(k) - 1.0).abs() < 1e-10);
            assert!(hess.entry(0, 0).get(k).abs() < 1e-10);
        }
        let f2 = window_fn(d, |k| (k[0] as f64 * h).powi(2));
        let hess2 = hessian(&f2);
        for k in crate::lattice::IdxBoxIter::new(2, [1, 1, 0], [7, 7, 0]) {
            assert!((hess2.entry(0, 0).get(k) - 2.0).abs() < 1e-9);
        }
        let lin = window_fn(d, |k| 3.0 * k[0] as f64 * h - k[1] as f64 * h);
        let hl = hessian(&lin);
        for k in crate::lattice::IdxBoxIter::new(2, [1, 1, 0], [7, 7, 0]) {
            assert!(hl.frobenius_at(k) < 1e-9);
        }
    }

    #[test]
    fn laplacian_examples() {
        let d = dom(2, 8);
        let h = d.h();
        let f = window_fn(d, |k| (k[0] as f64 * h).powi(2) + (k[1] as f64 * h).powi(2));
        let lap = laplacian(&f);
        for k in crate::lattice::IdxBoxIter::new(2, [1, 1, 0], [7, 7, 0]) {
            assert!((lap.get(k) - 4.0).abs() < 1e-9);
        }
        let harm = window_fn(d, |k| (k[0] as f64 * h).powi(2) - (k[1] as f64 * h).powi(2));
        let lh = laplacian(&harm);
        for k in crate::lattice::IdxBoxIter::new(2, [1, 1, 0], [7, 7, 0]) {
            assert!(lh.get(k).abs() < 1e-9);
        }
        let z = [4, 4, 0];
        let ind = GridFunction::phi_from_fn(d, |k| if k == z { 1.0 } else { 0.0 });
        let li = laplacian(&ind);
        assert!((li.get(z) + 4.0 / (h * h)).abs() < 1e-9);
        assert!((li.get([5, 4, 0]) - 1.0 / (h * h)).abs() < 1e-9);
    }

    #[test]
    fn bilaplacian_center_coefficients() {
        for (n, m, expected) in [(2usize, 8usize, 20.0f64), (3, 6, 42.0)] {
            let d = dom(n, m);
            let h4 = d.h().powi(4);
            let mut center = [0i64; MAX_DIM];
            for dd in 0..n {
                center[dd] = (m / 2) as i64;
            }
            let ind = GridFunction::phi_from_fn(d, |k| if k == center { 1.0 } else { 0.0 });
            let b = bilaplacian(&ind);
            assert!((b.get(center) - expected / h4).abs() < 1e-6 / h4);
        }
    }

    #[test]
    fn bilaplacian_annihilates_cubics() {
        let d = dom(2, 8);
        let h = d.h();
        let f = window_fn(d, |k| {
            let x = k[0] as f64 * h;
            let y = k[1] as f64 * h;
            x.powi(3) - 2.0 * x * y * y + y.powi(3)
        });
        let b = bilaplacian(&f);
        for k in crate::lattice::IdxBoxIter::new(2, [2, 2, 0], [6, 6, 0]) {
            assert!(b.get(k).abs() < 1e-6, "bilaplacian of cubic = {}", b.get(k));
        }
    }

    #[test]
    fn fused_matches_composed() {
        for (n, m) in [(2usize, 6usize), (3, 4)] {
            let d = dom(n, m);
            let f = GridFunction::phi_from_fn(d, |k| {
                ((k[0] * 17 + k[1] * 5 + k[2] * 3) % 19) as f64 - 9.0
            });
            let a = bilaplacian(&f);
            let b = bilaplacian_composed(&f);
            let scale = a.max_abs();
            for k in b.box_points() {
                assert!((a.get(k) - b.get(k)).abs() <= 1e-13 * scale);
            }
        }
    }

    #[test]
    fn delta_function_examples() {
        let d = dom(2, 8);
        let y = [3, 6, 0];
        let del = delta_function(d, y).unwrap();
        assert_eq!(del.get(y), 64.0);
        let l1 = crate::lattice::discrete_norm(&del, Lp::P(1.0), Region::Whole).unwrap();
        assert!((l1 - 1.0).abs() < 1e-15);
        // (δ_y, f) = f(y).
        let f = GridFunction::phi_from_fn(d, |k| (k[0] * k[1]) as f64 * 0.1);
        assert!((inner_product(&del, &f) - f.get(y)).abs() < 1e-12);
        assert!(delta_function(d, [0, 4, 0]).is_err());
    }

    #[test]
    fn summation_by_parts_weak_form() {
        // (Δ²u, φ) = (∇²u, ∇²φ) for clamped u, φ.
        for m in [4usize, 8] {
            let d = dom(2, m);
            let u = GridFunction::phi_from_fn(d, |k| ((k[0] * 13 + k[1] * 7) % 17) as f64 - 8.0);
            let phi = GridFunction::phi_from_fn(d, |k| ((k[0] * 5 + k[1] * 11) % 23) as f64 - 11.0);
            let lhs = inner_product(&bilaplacian(&u), &phi);
            let hu = hessian(&u);
            let hphi = hessian(&phi);
            let mut rhs = 0.0;
            for (eu, ep) in hu.entries.iter().zip(&hphi.entries) {
                rhs += inner_product(eu, ep);
            }
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn hessian_support_stays_in_lattice_cube() {
        let d = dom(2, 6);
        let u = GridFunction::phi_from_fn(d, |k| (k[0] + 2 * k[1]) as f64);
        let hess = hessian(&u);
        for e in &hess.entries {
            for k in e.box_points() {
                if e.get(k) != 0.0 {
                    assert!(d.contains(k), "hessian nonzero outside Λ at {k:?}");
                }
            }
        }
    }

    #[test]
    fn region_norm_of_matrix_field() {
        let d = dom(2, 8);
        let u = GridFunction::phi_from_fn(d, |k| (k[0] - k[1]) as f64);
        let hess = hessian(&u);
        let whole = hess.l2_norm_sq(Region::Whole);
        let cube = hess.l2_norm_sq(Region::Cube(CubeRegion::new([4, 4, 0], 0.25)));
        assert!(cube <= whole + 1e-15);
    }
}
