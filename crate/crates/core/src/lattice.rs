//! Lattice domains, index geometry, discrete regions and discrete norms.
//!
//! The unit cube is discretized by the lattice of width `h = 1/M`. Points are
//! addressed by integer indices `k` with physical position `h·k`; the cube
//! itself is `0 ≤ k_i ≤ M`, its interior `1 ≤ k_i ≤ M−1`, and everything else
//! is exterior where clamped functions vanish identically.

use crate::error::{Error, Result};
use serde::Serialize;

/// Maximum spatial dimension handled by the index type.
pub const MAX_DIM: usize = 3;

/// Lattice index. For dimension `n < 3` trailing components are zero.
pub type Idx = [i64; MAX_DIM];

/// Guard used when converting real radii to integer step counts, so that
/// radii like `(2j+1)h/2` land on the intended side after rounding.
const STEP_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LatticeDomain {
    n: usize,
    m: i64,
}

impl LatticeDomain {
    /// A domain needs `n ∈ {2,3}` and `M ≥ 2` so the interior is nonempty.
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n < 2 || n > MAX_DIM {
            return Err(Error::Parameter(format!("dimension must be 2 or 3, got {n}")));
        }
        if m < 2 {
            return Err(Error::Parameter(format!("M must be at least 2, got {m}")));
        }
        Ok(Self { n, m: m as i64 })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> i64 {
        self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Number of points in the full lattice cube `Λ`.
    pub fn lattice_count(&self) -> usize {
        (self.m as usize + 1).pow(self.n as u32)
    }

    /// Number of interior points.
    pub fn interior_count(&self) -> usize {
        (self.m as usize - 1).pow(self.n as u32)
    }

    pub fn contains(&self, k: Idx) -> bool {
        (0..self.n).all(|d| k[d] >= 0 && k[d] <= self.m) && (self.n..MAX_DIM).all(|d| k[d] == 0)
    }

    pub fn is_interior(&self, k: Idx) -> bool {
        (0..self.n).all(|d| k[d] >= 1 && k[d] <= self.m - 1)
            && (self.n..MAX_DIM).all(|d| k[d] == 0)
    }

    pub fn is_boundary(&self, k: Idx) -> bool {
        self.contains(k) && !self.is_interior(k)
    }

    /// Physical coordinates `h·k`.
    pub fn position(&self, k: Idx) -> [f64; MAX_DIM] {
        let h = self.h();
        [k[0] as f64 * h, k[1] as f64 * h, k[2] as f64 * h]
    }

    pub fn lattice_points(&self) -> IdxBoxIter {
        IdxBoxIter::new(self.n, [0; MAX_DIM], self.lattice_hi())
    }

    pub fn interior_points(&self) -> IdxBoxIter {
        IdxBoxIter::new(self.n, self.interior_lo(), self.interior_hi())
    }

    pub fn boundary_points(&self) -> impl Iterator<Item = Idx> + '_ {
        let dom = *self;
        self.lattice_points().filter(move |&k| !dom.is_interior(k))
    }

    pub fn interior_lo(&self) -> Idx {
        let mut lo = [0; MAX_DIM];
        for d in 0..self.n {
            lo[d] = 1;
        }
        lo
    }

    pub fn interior_hi(&self) -> Idx {
        let mut hi = [0; MAX_DIM];
        for d in 0..self.n {
            hi[d] = self.m - 1;
        }
        hi
    }

    pub fn lattice_hi(&self) -> Idx {
        let mut hi = [0; MAX_DIM];
        for d in 0..self.n {
            hi[d] = self.m;
        }
        hi
    }

    /// Row-major rank of an interior point among interior points.
    pub fn interior_rank(&self, k: Idx) -> usize {
        debug_assert!(self.is_interior(k));
        let w = (self.m - 1) as usize;
        let mut r = 0usize;
        for d in 0..self.n {
            r = r * w + (k[d] - 1) as usize;
        }
        r
    }

    pub fn interior_from_rank(&self, mut rank: usize) -> Idx {
        let w = (self.m - 1) as usize;
        let mut k = [0i64; MAX_DIM];
        for d in (0..self.n).rev() {
            k[d] = (rank % w) as i64 + 1;
            rank /= w;
        }
        k
    }
}

/// Euclidean distance from `z ∈ Λ` to the nearest lattice point outside the
/// interior. Zero on the boundary set; a single-axis step is always nearest
/// because the exterior is the complement of a box.
pub fn boundary_distance(domain: &LatticeDomain, z: Idx) -> Result<f64> {
    if !domain.contains(z) {
        return Err(Error::Domain(format!(
            "point {:?} is not in the lattice cube (n={}, M={})",
            &z[..domain.n()],
            domain.n(),
            domain.m()
        )));
    }
    Ok(interior_distance(domain, z))
}

/// Total version of [`boundary_distance`]: zero for every point that is not
/// interior, including points outside `Λ`.
pub fn interior_distance(domain: &LatticeDomain, z: Idx) -> f64 {
    if !domain.is_interior(z) {
        return 0.0;
    }
    let mut steps = i64::MAX;
    for d in 0..domain.n() {
        steps = steps.min(z[d]).min(domain.m() - z[d]);
    }
    steps as f64 * domain.h()
}

/// Iterator over an inclusive index box, row-major.
#[derive(Clone, Debug)]
pub struct IdxBoxIter {
    n: usize,
    lo: Idx,
    hi: Idx,
    cur: Idx,
    done: bool,
}

impl IdxBoxIter {
    pub fn new(n: usize, lo: Idx, hi: Idx) -> Self {
        let done = (0..n).any(|d| lo[d] > hi[d]);
        Self { n, lo, hi, cur: lo, done }
    }
}

impl Iterator for IdxBoxIter {
    type Item = Idx;

    fn next(&mut self) -> Option<Idx> {
        if self.done {
            return None;
        }
        let out = self.cur;
        let mut d = self.n;
        loop {
            if d == 0 {
                self.done = true;
                break;
            }
            d -= 1;
            if self.cur[d] < self.hi[d] {
                self.cur[d] += 1;
                for e in d + 1..self.n {
                    self.cur[e] = self.lo[e];
                }
                break;
            }
        }
        Some(out)
    }
}

/// Real-valued lattice function with an explicit stored index box and
/// implicit zero extension to the rest of `(hZ)^n`.
///
/// Functions flagged `phi` are members of the clamped space: their box is
/// exactly the interior of the domain and they vanish everywhere else.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    domain: LatticeDomain,
    lo: Idx,
    hi: Idx,
    values: Vec<f64>,
    phi: bool,
}

impl GridFunction {
    pub fn phi_zero(domain: LatticeDomain) -> Self {
        let lo = domain.interior_lo();
        let hi = domain.interior_hi();
        let len = box_len(domain.n(), lo, hi);
        Self { domain, lo, hi, values: vec![0.0; len], phi: true }
    }

    pub fn phi_from_fn(domain: LatticeDomain, mut f: impl FnMut(Idx) -> f64) -> Self {
        let mut g = Self::phi_zero(domain);
        for k in g.box_points() {
            let v = f(k);
            g.set(k, v);
        }
        g
    }

    /// Clamped function from interior values in row-major interior rank order.
    pub fn phi_from_interior_values(domain: LatticeDomain, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), domain.interior_count());
        let lo = domain.interior_lo();
        let hi = domain.interior_hi();
        Self { domain, lo, hi, values, phi: true }
    }

    /// General index-box function (test fixtures, derivative outputs).
    pub fn on_box(domain: LatticeDomain, lo: Idx, hi: Idx, mut f: impl FnMut(Idx) -> f64) -> Self {
        let mut g = Self::zero_on_box(domain, lo, hi);
        for k in g.box_points() {
            let v = f(k);
            g.set(k, v);
        }
        g
    }

    pub fn zero_on_box(domain: LatticeDomain, lo: Idx, hi: Idx) -> Self {
        let n = domain.n();
        let mut lo2 = [0i64; MAX_DIM];
        let mut hi2 = [0i64; MAX_DIM];
        for d in 0..n {
            assert!(lo[d] <= hi[d], "empty index box");
            lo2[d] = lo[d];
            hi2[d] = hi[d];
        }
        let len = box_len(n, lo2, hi2);
        Self { domain, lo: lo2, hi: hi2, values: vec![0.0; len], phi: false }
    }

    pub fn domain(&self) -> LatticeDomain {
        self.domain
    }

    pub fn is_phi(&self) -> bool {
        self.phi
    }

    pub fn box_lo(&self) -> Idx {
        self.lo
    }

    pub fn box_hi(&self) -> Idx {
        self.hi
    }

    pub fn box_points(&self) -> IdxBoxIter {
        IdxBoxIter::new(self.domain.n(), self.lo, self.hi)
    }

    #[inline]
    pub fn in_box(&self, k: Idx) -> bool {
        let n = self.domain.n();
        (0..n).all(|d| k[d] >= self.lo[d] && k[d] <= self.hi[d])
            && (n..MAX_DIM).all(|d| k[d] == 0)
    }

    #[inline]
    fn offset(&self, k: Idx) -> usize {
        let n = self.domain.n();
        let mut off = 0usize;
        for d in 0..n {
            off = off * (self.hi[d] - self.lo[d] + 1) as usize + (k[d] - self.lo[d]) as usize;
        }
        off
    }

    /// Value at any lattice point; zero outside the stored box.
    #[inline]
    pub fn get(&self, k: Idx) -> f64 {
        if self.in_box(k) {
            self.values[self.offset(k)]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn set(&mut self, k: Idx, v: f64) {
        assert!(self.in_box(k), "set outside stored box");
        let off = self.offset(k);
        self.values[off] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// `ca·a + cb·b` on the union box. The result keeps the clamped flag only
    /// if both inputs carry it (then the boxes coincide).
    pub fn combine(a: &GridFunction, ca: f64, b: &GridFunction, cb: f64) -> GridFunction {
        assert_eq!(a.domain, b.domain);
        let n = a.domain.n();
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for d in 0..n {
            lo[d] = a.lo[d].min(b.lo[d]);
            hi[d] = a.hi[d].max(b.hi[d]);
        }
        let mut out = GridFunction::zero_on_box(a.domain, lo, hi);
        out.phi = a.phi && b.phi;
        for k in out.box_points() {
            let v = ca * a.get(k) + cb * b.get(k);
            out.set(k, v);
        }
        out
    }
}

/// Closed lattice cube `Q^h_r(x)`: all lattice points with `|y−x|_∞ ≤ r`.
///
/// The radius is physical. Whether a point belongs is an integer test on
/// `⌊r/h⌋` steps, so radii in `hN + h/2` reproduce the cell-aligned cubes
/// used by the estimates exactly.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CubeRegion {
    pub center: Idx,
    pub r: f64,
}

impl CubeRegion {
    pub fn new(center: Idx, r: f64) -> Self {
        assert!(r >= 0.0, "cube radius must be nonnegative");
        Self { center, r }
    }

    pub fn steps(&self, h: f64) -> i64 {
        (self.r / h + STEP_EPS).floor() as i64
    }

    #[inline]
    pub fn contains(&self, h: f64, n: usize, k: Idx) -> bool {
        let s = self.steps(h);
        (0..n).all(|d| (k[d] - self.center[d]).abs() <= s)
    }

    /// Points of the infinite lattice in the cube: `(2⌊r/h⌋ + 1)^n`.
    pub fn point_count(&self, h: f64, n: usize) -> usize {
        (2 * self.steps(h) as usize + 1).pow(n as u32)
    }
}

/// Region over which a discrete norm is taken.
#[derive(Clone, Copy, Debug)]
pub enum Region {
    Whole,
    Cube(CubeRegion),
    /// Complement of a cube (everything with `|y−x|_∞ > r`).
    Complement(CubeRegion),
    /// `outer \ inner`.
    Annulus { outer: CubeRegion, inner: CubeRegion },
}

impl Region {
    #[inline]
    pub fn contains(&self, h: f64, n: usize, k: Idx) -> bool {
        match self {
            Region::Whole => true,
            Region::Cube(c) => c.contains(h, n, k),
            Region::Complement(c) => !c.contains(h, n, k),
            Region::Annulus { outer, inner } => {
                outer.contains(h, n, k) && !inner.contains(h, n, k)
            }
        }
    }
}

/// Exponent for the discrete `L^p` norms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lp {
    P(f64),
    Inf,
}

/// Discrete `L^p` norm over a region: `(Σ h^n |f|^p)^{1/p}` for finite `p`,
/// the maximum of `|f|` for `p = ∞`. Cell membership is decided by the cell
/// center (the lattice point itself).
pub fn discrete_norm(f: &GridFunction, p: Lp, region: Region) -> Result<f64> {
    let n = f.domain().n();
    let h = f.domain().h();
    match p {
        Lp::P(p) if p < 1.0 => Err(Error::Parameter(format!("L^p norm needs p ≥ 1, got {p}"))),
        Lp::P(p) => {
            let hn = h.powi(n as i32);
            let mut acc = 0.0;
            for k in f.box_points() {
                if region.contains(h, n, k) {
                    acc += hn * f.get(k).abs().powf(p);
                }
            }
            Ok(acc.powf(1.0 / p))
        }
        Lp::Inf => {
            let mut m = 0.0f64;
            for k in f.box_points() {
                if region.contains(h, n, k) {
                    m = m.max(f.get(k).abs());
                }
            }
            Ok(m)
        }
    }
}

/// Discrete Hölder seminorm `sup |f(x)−f(y)|/|x−y|^α` over distinct lattice
/// pairs in the region. Clamped functions contribute their zero values on
/// the whole lattice cube; index-box fixtures are compared on their box.
pub fn holder_seminorm(f: &GridFunction, alpha: f64, region: Region) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("Hölder exponent must be in (0,1], got {alpha}")));
    }
    let n = f.domain().n();
    let h = f.domain().h();
    let (lo, hi) = if f.is_phi() {
        ([0i64; MAX_DIM], f.domain().lattice_hi())
    } else {
        (f.box_lo(), f.box_hi())
    };
    let pts: Vec<Idx> = IdxBoxIter::new(n, lo, hi)
        .filter(|&k| region.contains(h, n, k))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Parameter(
            "Hölder seminorm needs at least two lattice points in the region".into(),
        ));
    }
    let mut sup = 0.0f64;
    for i in 0..pts.len() {
        let fi = f.get(pts[i]);
        for j in i + 1..pts.len() {
            let d2: i64 = (0..n).map(|d| (pts[i][d] - pts[j][d]).pow(2)).sum();
            let dist = h * (d2 as f64).sqrt();
            let num = (fi - f.get(pts[j])).abs();
            sup = sup.max(num / dist.powf(alpha));
        }
    }
    Ok(sup)
}

pub(crate) fn box_len(n: usize, lo: Idx, hi: Idx) -> usize {
    (0..n).map(|d| (hi[d] - lo[d] + 1) as usize).product()
}

/// Euclidean distance between two lattice points in physical units.
pub fn point_distance(h: f64, n: usize, a: Idx, b: Idx) -> f64 {
    let d2: i64 = (0..n).map(|d| (a[d] - b[d]).pow(2)).sum();
    h * (d2 as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(n: usize, m: usize) -> LatticeDomain {
        LatticeDomain::new(n, m).unwrap()
    }

    #[test]
    fn counts_match_closed_forms() {
        let d = dom(2, 8);
        assert_eq!(d.lattice_count(), 81);
        assert_eq!(d.interior_count(), 49);
        assert_eq!(d.lattice_points().count(), 81);
        assert_eq!(d.interior_points().count(), 49);
        let d3 = dom(3, 4);
        assert_eq!(d3.lattice_count(), 125);
        assert_eq!(d3.interior_count(), 27);
    }

    #[test]
    fn rejects_degenerate_domains() {
        assert!(LatticeDomain::new(1, 8).is_err());
        assert!(LatticeDomain::new(4, 8).is_err());
        assert!(LatticeDomain::new(2, 1).is_err());
    }

    #[test]
    fn boundary_distance_examples() {
        let d = dom(2, 8);
        assert_eq!(boundary_distance(&d, [4, 4, 0]).unwrap(), 0.5);
        assert_eq!(boundary_distance(&d, [0, 3, 0]).unwrap(), 0.0);
        let d3 = dom(3, 6);
        assert!((boundary_distance(&d3, [1, 2, 3]).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!(boundary_distance(&d, [9, 0, 0]).is_err());
        assert!(boundary_distance(&d, [-1, 2, 0]).is_err());
    }

    #[test]
    fn distance_zero_iff_not_interior() {
        let d = dom(2, 8);
        for k in d.lattice_points() {
            let dist = boundary_distance(&d, k).unwrap();
            assert_eq!(dist == 0.0, !d.is_interior(k));
        }
    }

    #[test]
    fn interior_rank_roundtrip() {
        let d = dom(3, 5);
        for (i, k) in d.interior_points().enumerate() {
            assert_eq!(d.interior_rank(k), i);
            assert_eq!(d.interior_from_rank(i), k);
        }
    }

    #[test]
    fn norm_examples() {
        // f ≡ 1 on the interior of M=4: (9·(1/4)²)^{1/2} = 3/4.
        let d = dom(2, 4);
        let f = GridFunction::phi_from_fn(d, |_| 1.0);
        let v = discrete_norm(&f, Lp::P(2.0), Region::Whole).unwrap();
        assert!((v - 0.75).abs() < 1e-15);

        let z = GridFunction::phi_zero(d);
        for p in [Lp::P(1.0), Lp::P(2.0), Lp::Inf] {
            assert_eq!(discrete_norm(&z, p, Region::Whole).unwrap(), 0.0);
        }

        // Indicator of one interior point, M=8, p=1 → h² = 1/64.
        let d8 = dom(2, 8);
        let ind = GridFunction::phi_from_fn(d8, |k| if k == [3, 5, 0] { 1.0 } else { 0.0 });
        let v1 = discrete_norm(&ind, Lp::P(1.0), Region::Whole).unwrap();
        assert!((v1 - 1.0 / 64.0).abs() < 1e-16);

        assert!(discrete_norm(&ind, Lp::P(0.5), Region::Whole).is_err());
    }

    #[test]
    fn norm_region_monotone_and_homogeneous() {
        let d = dom(2, 8);
        let f = GridFunction::phi_from_fn(d, |k| (k[0] * 3 + k[1]) as f64 - 10.0);
        let small = Region::Cube(CubeRegion::new([4, 4, 0], 1.5 * d.h()));
        let big = Region::Cube(CubeRegion::new([4, 4, 0], 3.5 * d.h()));
        let ns = discrete_norm(&f, Lp::P(2.0), small).unwrap();
        let nb = discrete_norm(&f, Lp::P(2.0), big).unwrap();
        assert!(ns <= nb);
        let mut g = f.clone();
        g.scale(-2.5);
        let ng = discrete_norm(&g, Lp::P(2.0), big).unwrap();
        assert!((ng - 2.5 * nb).abs() <= 1e-12 * ng.abs().max(1.0));
    }

    #[test]
    fn cube_point_count() {
        let d = dom(2, 8);
        let c = CubeRegion::new([4, 4, 0], 2.5 * d.h());
        assert_eq!(c.point_count(d.h(), 2), 25);
        // A radius just below a step boundary keeps the same point set.
        let c2 = CubeRegion::new([4, 4, 0], 2.0 * d.h());
        assert_eq!(c2.point_count(d.h(), 2), 25);
    }

    #[test]
    fn holder_examples() {
        let d = dom(2, 4);
        // f(x) = x₁ over the whole cube has Lipschitz seminorm 1.
        let f = GridFunction::on_box(d, [0, 0, 0], [4, 4, 0], |k| k[0] as f64 * d.h());
        let s = holder_seminorm(&f, 1.0, Region::Whole).unwrap();
        assert!((s - 1.0).abs() < 1e-12);

        let c = GridFunction::on_box(d, [0, 0, 0], [4, 4, 0], |_| 3.3);
        assert_eq!(holder_seminorm(&c, 1.0, Region::Whole).unwrap(), 0.0);

        // Indicator at z over Q^h_h(z): ratio 1/h attained at a neighbor.
        let d8 = dom(2, 8);
        let ind = GridFunction::phi_from_fn(d8, |k| if k == [4, 4, 0] { 1.0 } else { 0.0 });
        let region = Region::Cube(CubeRegion::new([4, 4, 0], d8.h()));
        let s = holder_seminorm(&ind, 1.0, region).unwrap();
        assert!((s - 8.0).abs() < 1e-12);

        let tiny = Region::Cube(CubeRegion::new([4, 4, 0], 0.0));
        assert!(holder_seminorm(&ind, 1.0, tiny).is_err());
    }

    #[test]
    fn phi_zero_extension() {
        let d = dom(2, 4);
        let f = GridFunction::phi_from_fn(d, |k| (k[0] + k[1]) as f64);
        assert!(f.is_phi());
        assert_eq!(f.get([0, 2, 0]), 0.0);
        assert_eq!(f.get([4, 1, 0]), 0.0);
        assert_eq!(f.get([-3, 7, 0]), 0.0);
        assert_eq!(f.get([2, 2, 0]), 4.0);
    }
}
