//! The estimate-verification harness: empirical constants for the
//! Green's-function bounds, the Caccioppoli inequality, inner and outer decay
//! of discretely biharmonic functions, Poincaré/Sobolev inequalities, the
//! corner exponent, and grid-refinement convergence.
//!
//! Constants in the estimates are existential, so the harness reports the
//! measured supremum (or infimum, for lower bounds) of quantity/bound over
//! admissible points, and calls the result stable when the per-grid constants
//! agree up to a declared factor across mesh refinements.

use crate::error::{Error, Result};
use crate::green::{green_column_with, ColumnSource, GreenDerivatives, GreenMatrix};
use crate::lattice::{
    discrete_norm, interior_distance, point_distance, CubeRegion, GridFunction, Idx,
    LatticeDomain, Lp, Region, MAX_DIM,
};
use crate::operators::{gradient, hessian};
use crate::solver::{DenseBilaplacian, SolveOptions, DENSE_CAP};
use rayon::prelude::*;
use serde::Serialize;

/// Declared stability factor: per-grid constants may vary by at most this
/// much for a "stable" verdict.
pub const STABILITY_FACTOR: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Stable,
    Growing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundKind {
    /// Empirical constant is the supremum of quantity/bound.
    SupRatio,
    /// Lower-bound constant: the infimum of quantity/bound.
    InfRatio,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Witness {
    pub x: Idx,
    pub y: Idx,
    pub m: usize,
    pub quantity: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridStat {
    pub m: usize,
    pub constant: f64,
    pub samples: usize,
    pub excluded: usize,
    /// Ratios whose bound vanished but whose quantity did not (must be 0).
    pub exclusion_violations: usize,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub estimate_id: String,
    pub n: usize,
    pub kind: BoundKind,
    pub per_grid: Vec<GridStat>,
    pub global_constant: f64,
    pub witness: Option<Witness>,
    pub spread: f64,
    pub stability_factor: f64,
    pub verdict: Verdict,
    pub samples: usize,
    pub excluded: usize,
}

/// Assemble a report from per-grid statistics.
pub fn stability_report(id: &str, n: usize, kind: BoundKind, grids: Vec<GridStat>) -> EstimateReport {
    let consts: Vec<f64> = grids.iter().map(|g| g.constant).collect();
    let (mut cmin, mut cmax) = (f64::INFINITY, 0.0f64);
    for &c in &consts {
        cmin = cmin.min(c);
        cmax = cmax.max(c);
    }
    let spread = if cmin > 0.0 { cmax / cmin } else { f64::INFINITY };
    let global = match kind {
        BoundKind::SupRatio => cmax,
        BoundKind::InfRatio => cmin,
    };
    let witness = match kind {
        BoundKind::SupRatio => grids
            .iter()
            .filter_map(|g| g.witness)
            .max_by(|a, b| (a.quantity / a.bound).total_cmp(&(b.quantity / b.bound))),
        BoundKind::InfRatio => grids
            .iter()
            .filter_map(|g| g.witness)
            .min_by(|a, b| (a.quantity / a.bound).total_cmp(&(b.quantity / b.bound))),
    };
    let verdict = if spread <= STABILITY_FACTOR { Verdict::Stable } else { Verdict::Growing };
    EstimateReport {
        estimate_id: id.to_string(),
        n,
        kind,
        samples: grids.iter().map(|g| g.samples).sum(),
        excluded: grids.iter().map(|g| g.excluded).sum(),
        global_constant: global,
        witness,
        spread,
        stability_factor: STABILITY_FACTOR,
        verdict,
        per_grid: grids,
    }
}

/// One sampled ratio, for flat CSV output.
#[derive(Clone, Debug, Serialize)]
pub struct RatioRow {
    pub estimate_id: &'static str,
    pub m: usize,
    pub x: Idx,
    pub y: Idx,
    pub quantity: f64,
    pub bound: f64,
    pub ratio: f64,
}

// ---------------------------------------------------------------------------
// Green's-function bounds.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GreenEstimate {
    Value,
    GradX,
    HessX,
    GradXGradY,
    HessXGradY,
    HessXHessY,
}

pub const GREEN_ESTIMATES: [GreenEstimate; 6] = [
    GreenEstimate::Value,
    GreenEstimate::GradX,
    GreenEstimate::HessX,
    GreenEstimate::GradXGradY,
    GreenEstimate::HessXGradY,
    GreenEstimate::HessXHessY,
];

pub const GREEN_LOWER_ID: &str = "green-diag-lower";

impl GreenEstimate {
    pub fn id(&self) -> &'static str {
        match self {
            GreenEstimate::Value => "green-upper",
            GreenEstimate::GradX => "grad-x-upper",
            GreenEstimate::HessX => "hess-x-upper",
            GreenEstimate::GradXGradY => "grad-x-grad-y-upper",
            GreenEstimate::HessXGradY => "hess-x-grad-y-upper",
            GreenEstimate::HessXHessY => "hess-x-hess-y-upper",
        }
    }

    /// The bound expression, including the min branches and the logarithmic
    /// two-dimensional forms.
    pub fn bound(&self, n: usize, h: f64, dx: f64, dy: f64, dist: f64) -> f64 {
        let dh = dist + h;
        match self {
            GreenEstimate::Value => {
                let e = 2.0 - n as f64 / 2.0;
                (dx.powf(e) * dy.powf(e)).min(dx * dx * dy * dy / dh.powi(n as i32))
            }
            GreenEstimate::GradX => {
                let near = dy.powf(3.0 - n as f64);
                near.min((dx + h) * dy * dy / dh.powi(n as i32))
            }
            GreenEstimate::HessX => match n {
                2 => (1.0 + dy * dy / (dh * dh)).ln(),
                _ => (1.0 / dh).min(dy * dy / dh.powi(3)),
            },
            GreenEstimate::GradXGradY => match n {
                2 => (1.0 + (dx + h) * (dy + h) / (dh * dh)).ln(),
                _ => (1.0 / dh).min((dx + h) * (dy + h) / dh.powi(3)),
            },
            GreenEstimate::HessXGradY => {
                (1.0 / dh.powi(n as i32 - 1)).min((dy + h) / dh.powi(n as i32))
            }
            GreenEstimate::HessXHessY => 1.0 / dh.powi(n as i32),
        }
    }

    fn quantity(&self, der: &GreenDerivatives, x: Idx) -> f64 {
        match self {
            GreenEstimate::Value => der.value_at(x).abs(),
            GreenEstimate::GradX => der.grad_x_mag(x),
            GreenEstimate::HessX => der.hess_x_mag(x),
            GreenEstimate::GradXGradY => der.grad_x_grad_y_mag(x),
            GreenEstimate::HessXGradY => der.hess_x_grad_y_mag(x),
            GreenEstimate::HessXHessY => der.hess_x_hess_y_mag(x),
        }
    }
}

struct SweepAcc {
    best: [Option<Witness>; 6],
    samples: [usize; 6],
    excluded: [usize; 6],
    violations: [usize; 6],
    rows: Vec<RatioRow>,
}

impl SweepAcc {
    fn new() -> Self {
        Self {
            best: [None; 6],
            samples: [0; 6],
            excluded: [0; 6],
            violations: [0; 6],
            rows: Vec::new(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for i in 0..6 {
            self.samples[i] += other.samples[i];
            self.excluded[i] += other.excluded[i];
            self.violations[i] += other.violations[i];
            self.best[i] = match (self.best[i], other.best[i]) {
                (Some(a), Some(b)) => {
                    Some(if a.quantity / a.bound >= b.quantity / b.bound { a } else { b })
                }
                (a, None) => a,
                (None, b) => b,
            };
        }
        self.rows.extend(other.rows);
        self
    }
}

pub struct GreenBoundsOutput {
    pub reports: Vec<EstimateReport>,
    pub rows: Vec<RatioRow>,
}

/// Sweep all estimates of the Green's function over a list of grids.
/// `row_stride` of `Some(k)` collects every k-th sampled ratio for CSV
/// output (deterministically, in source order).
pub fn verify_green_bounds(
    n: usize,
    m_list: &[usize],
    row_stride: Option<usize>,
) -> Result<GreenBoundsOutput> {
    let mut per_estimate: Vec<Vec<GridStat>> = vec![Vec::new(); 6];
    let mut lower_grids: Vec<GridStat> = Vec::new();
    let mut rows_all: Vec<RatioRow> = Vec::new();
    for &m in m_list {
        let domain = LatticeDomain::new(n, m)?;
        let h = domain.h();
        let (gm, cg): (Option<GreenMatrix>, Option<crate::green::CgColumns>) =
            if domain.interior_count() <= DENSE_CAP {
                (Some(GreenMatrix::assemble(domain)?), None)
            } else {
                (None, Some(crate::green::CgColumns::new(domain, SolveOptions::default())))
            };
        let source: &dyn ColumnSource = match (&gm, &cg) {
            (Some(g), _) => g,
            (_, Some(c)) => c,
            _ => unreachable!(),
        };
        // Dense grids sweep every source; larger grids sample.
        let ys: Vec<Idx> = if gm.is_some() {
            domain.interior_points().collect()
        } else {
            sampled_sources(domain, 32)
        };
        let xs: Vec<Idx> = domain.lattice_points().collect();
        let qscale_guard = 1e-11;
        let acc = ys
            .par_iter()
            .map(|&y| {
                let der = GreenDerivatives::compute(source, y).expect("column solve");
                let dy = interior_distance(&domain, y);
                let mut acc = SweepAcc::new();
                let mut pair_counter = 0usize;
                for &x in &xs {
                    let dx = interior_distance(&domain, x);
                    let dist = point_distance(h, n, x, y);
                    for (ei, est) in GREEN_ESTIMATES.iter().enumerate() {
                        let q = est.quantity(&der, x);
                        let b = est.bound(n, h, dx, dy, dist);
                        if b <= 0.0 {
                            acc.excluded[ei] += 1;
                            if q.abs() > qscale_guard {
                                acc.violations[ei] += 1;
                            }
                            continue;
                        }
                        acc.samples[ei] += 1;
                        let w = Witness { x, y, m, quantity: q, bound: b };
                        acc.best[ei] = Some(match acc.best[ei] {
                            Some(prev) if prev.quantity / prev.bound >= q / b => prev,
                            _ => w,
                        });
                        if let Some(stride) = row_stride {
                            if pair_counter % stride == 0 {
                                acc.rows.push(RatioRow {
                                    estimate_id: est.id(),
                                    m,
                                    x,
                                    y,
                                    quantity: q,
                                    bound: b,
                                    ratio: q / b,
                                });
                            }
                        }
                        pair_counter += 1;
                    }
                }
                acc
            })
            .reduce(SweepAcc::new, SweepAcc::merge);

        for (ei, _est) in GREEN_ESTIMATES.iter().enumerate() {
            let w = acc.best[ei];
            per_estimate[ei].push(GridStat {
                m,
                constant: w.map(|w| w.quantity / w.bound).unwrap_or(0.0),
                samples: acc.samples[ei],
                excluded: acc.excluded[ei],
                exclusion_violations: acc.violations[ei],
                witness: w,
            });
        }
        rows_all.extend(acc.rows);

        // Lower bound on the diagonal.
        let mut low: Option<Witness> = None;
        let mut samples = 0usize;
        for x in domain.interior_points() {
            let d = interior_distance(&domain, x);
            let bound = d.powi(4 - n as i32);
            let q = match (&gm, &cg) {
                (Some(g), _) => g.value(x, x),
                (_, Some(c)) => c.column(x)?.get(x),
                _ => unreachable!(),
            };
            samples += 1;
            let w = Witness { x, y: x, m, quantity: q, bound };
            low = Some(match low {
                Some(prev) if prev.quantity / prev.bound <= q / bound => prev,
                _ => w,
            });
        }
        lower_grids.push(GridStat {
            m,
            constant: low.map(|w| w.quantity / w.bound).unwrap_or(0.0),
            samples,
            excluded: 0,
            exclusion_violations: 0,
            witness: low,
        });
    }

    let mut reports: Vec<EstimateReport> = GREEN_ESTIMATES
        .iter()
        .enumerate()
        .map(|(ei, est)| {
            stability_report(est.id(), n, BoundKind::SupRatio, per_estimate[ei].clone())
        })
        .collect();
    reports.push(stability_report(GREEN_LOWER_ID, n, BoundKind::InfRatio, lower_grids));
    Ok(GreenBoundsOutput { reports, rows: rows_all })
}

/// One Green column: dense for small grids, preconditioned CG otherwise.
fn single_column(n: usize, m: usize, y: Idx) -> Result<GridFunction> {
    let domain = LatticeDomain::new(n, m)?;
    if domain.interior_count() <= 1200 {
        Ok(GreenMatrix::assemble(domain)?.column(y))
    } else {
        Ok(green_column_with(
            domain,
            y,
            SolveOptions {
                tol: 1e-11,
                precond: crate::solver::Preconditioner::NestedLaplacian,
                ..Default::default()
            },
        )?
        .values)
    }
}

fn sampled_sources(domain: LatticeDomain, count: usize) -> Vec<Idx> {
    let pts: Vec<Idx> = domain.interior_points().collect();
    if pts.len() <= count {
        return pts;
    }
    let stride = pts.len() / count;
    pts.into_iter().step_by(stride.max(1)).take(count).collect()
}

// ---------------------------------------------------------------------------
// Trial machinery for the decay estimates.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct TrialConfig {
    pub trials: usize,
    pub seed: u64,
    /// Collect every sampled ratio for CSV output.
    pub collect_rows: bool,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self { trials: 60, seed: 1, collect_rows: false }
    }
}

#[inline]
fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn pick(seed: u64, ctr: u64, modu: usize) -> usize {
    (mix64(seed.wrapping_add(ctr.wrapping_mul(0x9e3779b97f4a7c15))) % modu as u64) as usize
}

fn pick_signed(seed: u64, ctr: u64) -> f64 {
    let u = mix64(seed.wrapping_add(ctr.wrapping_mul(0x9e3779b97f4a7c15)));
    ((u >> 11) as f64 / 4503599627370496.0) - 1.0
}

/// Cube-center placements exercising the interior, face, edge (n=3) and
/// corner regimes.
fn placements(domain: LatticeDomain) -> Vec<Idx> {
    let m = domain.m();
    let n = domain.n();
    let mut out: Vec<Idx> = Vec::new();
    let mut push = |coords: [i64; MAX_DIM]| {
        let mut k = [0i64; MAX_DIM];
        for d in 0..n {
            k[d] = coords[d].clamp(0, m);
        }
        out.push(k);
    };
    let mid = m / 2;
    if n == 2 {
        push([mid, mid, 0]);
        push([mid, 1, 0]);
        push([1, 1, 0]);
        push([0, mid, 0]);
        push([0, 0, 0]);
        push([m / 4, 3 * m / 4, 0]);
    } else {
        push([mid, mid, mid]);
        push([mid, mid, 1]);
        push([mid, 1, 1]);
        push([1, 1, 1]);
        push([0, mid, mid]);
        push([0, 0, mid]);
        push([0, 0, 0]);
    }
    out
}

/// Right-hand side of a few signed point masses at admissible interior
/// points; `None` when the admissible set is empty.
fn localized_rhs(
    domain: LatticeDomain,
    admissible: impl Fn(Idx) -> bool,
    seed: u64,
    trial: u64,
) -> Option<GridFunction> {
    let pts: Vec<Idx> = domain.interior_points().filter(|&k| admissible(k)).collect();
    if pts.is_empty() {
        return None;
    }
    let mut f = GridFunction::phi_zero(domain);
    let masses = 1 + pick(seed, trial * 11 + 1, 3);
    for j in 0..masses {
        let k = pts[pick(seed, trial * 11 + 2 + j as u64, pts.len())];
        let w = pick_signed(seed, trial * 11 + 7 + j as u64);
        let v = f.get(k) + (w + w.signum() * 0.25) / domain.h().powi(domain.n() as i32);
        f.set(k, v);
    }
    Some(f)
}

/// Cell-aligned radius `(steps + 1/2)·h`.
fn aligned_radius(steps: i64, h: f64) -> f64 {
    (steps as f64 + 0.5) * h
}

// ---------------------------------------------------------------------------
// Caccioppoli.
// ---------------------------------------------------------------------------

/// One grid of the reverse-Poincaré check: test functions discretely
/// biharmonic in `Q_{r−h}(x)` are built by solving with right-hand sides
/// supported outside `Q_r(x)`; the reported constant is the supremum of
/// interior Hessian energy over the scaled lower-order norms.
pub fn caccioppoli_grid(n: usize, m: usize, cfg: TrialConfig) -> Result<(GridStat, Vec<RatioRow>)> {
    let domain = LatticeDomain::new(n, m)?;
    let h = domain.h();
    if m < 8 {
        return Err(Error::Parameter(format!(
            "caccioppoli geometry needs M ≥ 8 so that r − 4h > 0 fits, got {m}"
        )));
    }
    let dense = DenseBilaplacian::new(domain)?;
    let centers = placements(domain);
    let mut best: Option<Witness> = None;
    let mut rows = Vec::new();
    let mut samples = 0usize;
    let mut skipped = 0usize;
    let min_steps = 5i64;
    let max_steps = (2 * m as i64 / 3).max(min_steps);
    for t in 0..cfg.trials as u64 {
        let x = centers[pick(cfg.seed, t * 5, centers.len())];
        let r_steps = min_steps + pick(cfg.seed, t * 5 + 1, (max_steps - min_steps + 1) as usize) as i64;
        let r = aligned_radius(r_steps, h);
        let cube_r = CubeRegion::new(x, r);
        let rhs = match localized_rhs(domain, |k| !cube_r.contains(h, n, k), cfg.seed, t) {
            Some(f) => f,
            None => {
                skipped += 1;
                continue;
            }
        };
        let u = dense.solve(&rhs);
        let hess = hessian(&u);
        let grad = gradient(&u);
        // Two separations: the hypothesis edge s = r − 4h and a mid value.
        for s_steps in [r_steps - 4, (r_steps - 4).min(r_steps / 2).max(1)] {
            if s_steps < 1 {
                continue;
            }
            let s = aligned_radius(s_steps - 1, h) + h / 2.0;
            let s = s.min(r - 4.0 * h);
            if s <= 0.0 {
                continue;
            }
            let cube_s = CubeRegion::new(x, s);
            let num = hess.l2_norm_sq(Region::Cube(cube_s));
            let u_l2 = discrete_norm(&u, Lp::P(2.0), Region::Cube(cube_r))?;
            let g_l2 = grad.norm(Lp::P(2.0), Region::Cube(cube_r))?;
            let gap = r - s;
            let den = u_l2 * u_l2 / gap.powi(4) + g_l2 * g_l2 / gap.powi(2);
            if den == 0.0 {
                debug_assert!(num <= 1e-20);
                skipped += 1;
                continue;
            }
            samples += 1;
            if cfg.collect_rows {
                rows.push(RatioRow {
                    estimate_id: "caccioppoli",
                    m,
                    x,
                    y: x,
                    quantity: num,
                    bound: den,
                    ratio: num / den,
                });
            }
            let w = Witness { x, y: x, m, quantity: num, bound: den };
            best = Some(match best {
                Some(prev) if prev.quantity / prev.bound >= num / den => prev,
                _ => w,
            });
        }
    }
    if samples == 0 {
        return Err(Error::Parameter(format!(
            "caccioppoli geometry infeasible on n={n}, M={m}: every trial degenerated"
        )));
    }
    Ok((
        GridStat {
            m,
            constant: best.map(|w| w.quantity / w.bound).unwrap_or(0.0),
            samples,
            excluded: skipped,
            exclusion_violations: 0,
            witness: best,
        },
        rows,
    ))
}

pub fn verify_caccioppoli(
    n: usize,
    m_list: &[usize],
    cfg: TrialConfig,
) -> Result<(EstimateReport, Vec<RatioRow>)> {
    let mut grids = Vec::new();
    let mut rows = Vec::new();
    for &m in m_list {
        let (g, r) = caccioppoli_grid(n, m, cfg)?;
        grids.push(g);
        rows.extend(r);
    }
    Ok((stability_report("caccioppoli", n, BoundKind::SupRatio, grids), rows))
}

// ---------------------------------------------------------------------------
// Inner decay.
// ---------------------------------------------------------------------------

/// Pointwise-over-L² decay for functions discretely biharmonic in a cube.
pub fn inner_decay_grid(n: usize, m: usize, cfg: TrialConfig) -> Result<(GridStat, Vec<RatioRow>)> {
    let domain = LatticeDomain::new(n, m)?;
    let h = domain.h();
    let dense = DenseBilaplacian::new(domain)?;
    let centers = placements(domain);
    let mut best: Option<Witness> = None;
    let mut rows = Vec::new();
    let mut samples = 0usize;
    let mut skipped = 0usize;
    let min_steps = 2i64;
    let max_steps = (m as i64 / 2).max(3);
    for t in 0..cfg.trials as u64 {
        let x = centers[pick(cfg.seed, t * 7, centers.len())];
        let r_steps =
            min_steps + pick(cfg.seed, t * 7 + 1, (max_steps - min_steps + 1) as usize) as i64;
        let r = aligned_radius(r_steps, h);
        let cube_r = CubeRegion::new(x, r);
        let rhs = match localized_rhs(domain, |k| !cube_r.contains(h, n, k), cfg.seed, t) {
            Some(f) => f,
            None => {
                skipped += 1;
                continue;
            }
        };
        let u = dense.solve(&rhs);
        let hess = hessian(&u);
        let den = hess.l2_norm_sq(Region::Cube(cube_r)).sqrt();
        if den == 0.0 {
            skipped += 1;
            continue;
        }
        let half = CubeRegion::new(x, r / 2.0);
        for z in domain.lattice_points() {
            if !half.contains(h, n, z) {
                continue;
            }
            let q = hess.frobenius_at(z) * r.powf(n as f64 / 2.0);
            samples += 1;
            if cfg.collect_rows {
                rows.push(RatioRow {
                    estimate_id: "inner-decay",
                    m,
                    x: z,
                    y: x,
                    quantity: q,
                    bound: den,
                    ratio: q / den,
                });
            }
            let w = Witness { x: z, y: x, m, quantity: q, bound: den };
            best = Some(match best {
                Some(prev) if prev.quantity / prev.bound >= q / den => prev,
                _ => w,
            });
        }
    }
    if samples == 0 {
        return Err(Error::Parameter(format!(
            "inner-decay trials all degenerated on n={n}, M={m}"
        )));
    }
    Ok((
        GridStat {
            m,
            constant: best.map(|w| w.quantity / w.bound).unwrap_or(0.0),
            samples,
            excluded: skipped,
            exclusion_violations: 0,
            witness: best,
        },
        rows,
    ))
}

pub fn verify_inner_decay(
    n: usize,
    m_list: &[usize],
    cfg: TrialConfig,
) -> Result<(EstimateReport, Vec<RatioRow>)> {
    let mut grids = Vec::new();
    let mut rows = Vec::new();
    for &m in m_list {
        let (g, r) = inner_decay_grid(n, m, cfg)?;
        grids.push(g);
        rows.extend(r);
    }
    Ok((stability_report("inner-decay", n, BoundKind::SupRatio, grids), rows))
}

// ---------------------------------------------------------------------------
// Outer decay.
// ---------------------------------------------------------------------------

/// Annulus and pointwise decay for functions discretely biharmonic outside a
/// cube (right-hand side supported inside `Q_r(x)`).
pub fn outer_decay_grid(
    n: usize,
    m: usize,
    cfg: TrialConfig,
) -> Result<(GridStat, GridStat, Vec<RatioRow>)> {
    let domain = LatticeDomain::new(n, m)?;
    let h = domain.h();
    let dense = DenseBilaplacian::new(domain)?;
    let centers = placements(domain);
    let mut best_ann: Option<Witness> = None;
    let mut best_pt: Option<Witness> = None;
    let mut rows = Vec::new();
    let mut samples_ann = 0usize;
    let mut samples_pt = 0usize;
    let mut skipped = 0usize;
    for t in 0..cfg.trials as u64 {
        let x = centers[pick(cfg.seed, t * 13, centers.len())];
        let dx = interior_distance(&domain, x);
        // Sample both regimes: r below and above the boundary distance.
        let r_steps = 1 + pick(cfg.seed, t * 13 + 1, (m / 3).max(2)) as i64;
        let r = aligned_radius(r_steps - 1, h);
        let cube_r = CubeRegion::new(x, r);
        let rhs = match localized_rhs(domain, |k| cube_r.contains(h, n, k), cfg.seed, t) {
            Some(f) => f,
            None => {
                skipped += 1;
                continue;
            }
        };
        let u = dense.solve(&rhs);
        let hess = hessian(&u);
        let den_r = hess.l2_norm_sq(Region::Complement(cube_r)).sqrt();
        if den_r == 0.0 {
            skipped += 1;
            continue;
        }
        // Annulus variant requires r ≥ d(x).
        if r >= dx {
            for mult in [2i64, 4, 8] {
                let s_steps = r_steps * mult;
                let s = aligned_radius(s_steps - 1, h);
                if s <= r || s > 1.5 {
                    continue;
                }
                let cube_s = CubeRegion::new(x, s);
                let num = hess.l2_norm_sq(Region::Complement(cube_s)).sqrt();
                let bound = (r / s).powf(n as f64 / 2.0) * den_r;
                samples_ann += 1;
                if cfg.collect_rows {
                    rows.push(RatioRow {
                        estimate_id: "outer-decay-annulus",
                        m,
                        x,
                        y: x,
                        quantity: num,
                        bound,
                        ratio: num / bound,
                    });
                }
                let w = Witness { x, y: x, m, quantity: num, bound };
                best_ann = Some(match best_ann {
                    Some(prev) if prev.quantity / prev.bound >= num / bound => prev,
                    _ => w,
                });
            }
        }
        // Pointwise variant at every y outside Q_{2r}(x).
        let cube_2r = CubeRegion::new(x, 2.0 * r);
        let prefactor = dx.max(r).powf(n as f64 / 2.0);
        for y in domain.lattice_points() {
            if cube_2r.contains(h, n, y) {
                continue;
            }
            let dist = point_distance(h, n, x, y);
            let q = hess.frobenius_at(y) * dist.powi(n as i32);
            let bound = prefactor * den_r;
            samples_pt += 1;
            if cfg.collect_rows {
                rows.push(RatioRow {
                    estimate_id: "outer-decay-pointwise",
                    m,
                    x,
                    y,
                    quantity: q,
                    bound,
                    ratio: q / bound,
                });
            }
            let w = Witness { x, y, m, quantity: q, bound };
            best_pt = Some(match best_pt {
                Some(prev) if prev.quantity / prev.bound >= q / bound => prev,
                _ => w,
            });
        }
    }
    if samples_pt == 0 {
        return Err(Error::Parameter(format!(
            "outer-decay trials all degenerated on n={n}, M={m}"
        )));
    }
    let mk = |best: Option<Witness>, samples: usize| GridStat {
        m,
        constant: best.map(|w| w.quantity / w.bound).unwrap_or(0.0),
        samples,
        excluded: skipped,
        exclusion_violations: 0,
        witness: best,
    };
    Ok((mk(best_ann, samples_ann), mk(best_pt, samples_pt), rows))
}

pub struct OuterDecayReports {
    pub annulus: EstimateReport,
    pub pointwise: EstimateReport,
}

pub fn verify_outer_decay(
    n: usize,
    m_list: &[usize],
    cfg: TrialConfig,
) -> Result<(OuterDecayReports, Vec<RatioRow>)> {
    let mut ann = Vec::new();
    let mut pt = Vec::new();
    let mut rows = Vec::new();
    for &m in m_list {
        let (a, p, r) = outer_decay_grid(n, m, cfg)?;
        ann.push(a);
        pt.push(p);
        rows.extend(r);
    }
    Ok((
        OuterDecayReports {
            annulus: stability_report("outer-decay-annulus", n, BoundKind::SupRatio, ann),
            pointwise: stability_report("outer-decay-pointwise", n, BoundKind::SupRatio, pt),
        },
        rows,
    ))
}

// ---------------------------------------------------------------------------
// Poincaré / Sobolev.
// ---------------------------------------------------------------------------

pub const POINCARE_IDS: [&str; 5] = [
    "poincare-cube-l2",
    "poincare-annulus-l2",
    "poincare-cube-sup",
    "sobolev-sup-hess",
    "holder-quarter-hess",
];

/// Empirical constants for the Poincaré and Sobolev–Poincaré inequalities on
/// cubes with zero data on at least one face.
pub fn poincare_grid(n: usize, m: usize, cfg: TrialConfig) -> Result<(Vec<GridStat>, Vec<RatioRow>)> {
    let domain = LatticeDomain::new(n, m)?;
    let h = domain.h();
    let mut best: [Option<Witness>; 5] = [None; 5];
    let mut rows = Vec::new();
    let mut samples = [0usize; 5];
    let max_steps = if n == 2 { (m as i64 / 2).max(2).min(8) } else { (m as i64 / 2).min(4) };
    for t in 0..cfg.trials as u64 {
        let steps = 2 + pick(cfg.seed, t * 17, (max_steps - 1).max(1) as usize) as i64;
        let r = aligned_radius(steps, h);
        // Center anywhere in Λ; the cube may poke outside.
        let mut x = [0i64; MAX_DIM];
        for d in 0..n {
            x[d] = pick(cfg.seed, t * 17 + 1 + d as u64, m as usize + 1) as i64;
        }
        let cube = CubeRegion::new(x, r);
        let axis = pick(cfg.seed, t * 17 + 5, n);
        let side = if pick(cfg.seed, t * 17 + 6, 2) == 0 { -1i64 } else { 1 };
        let face_coord = x[axis] + side * steps;
        // Random values on the cube, zero on the chosen face, zero outside.
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for d in 0..n {
            lo[d] = x[d] - steps;
            hi[d] = x[d] + steps;
        }
        let mut ctr = t * 1000;
        let u = GridFunction::on_box(domain, lo, hi, |k| {
            if k[axis] == face_coord {
                return 0.0;
            }
            ctr += 1;
            pick_signed(cfg.seed ^ 0xabcd, ctr)
        });
        let grad = gradient(&u);
        let cube_region = Region::Cube(cube);
        let u_l2 = discrete_norm(&u, Lp::P(2.0), cube_region)?;
        let g_l2 = grad.norm(Lp::P(2.0), cube_region)?;
        let u_sup = discrete_norm(&u, Lp::Inf, cube_region)?;
        let g_sup = grad.norm(Lp::Inf, cube_region)?;
        let push = |idx: usize,
                    q: f64,
                    b: f64,
                    best: &mut [Option<Witness>; 5],
                    samples: &mut [usize; 5],
                    rows: &mut Vec<RatioRow>| {
            if b <= 0.0 {
                return;
            }
            samples[idx] += 1;
            if cfg.collect_rows {
                rows.push(RatioRow {
                    estimate_id: POINCARE_IDS[idx],
                    m,
                    x,
                    y: x,
                    quantity: q,
                    bound: b,
                    ratio: q / b,
                });
            }
            let w = Witness { x, y: x, m, quantity: q, bound: b };
            best[idx] = Some(match best[idx] {
                Some(prev) if prev.quantity / prev.bound >= q / b => prev,
                _ => w,
            });
        };
        push(0, u_l2, r * g_l2, &mut best, &mut samples, &mut rows);
        push(2, u_sup, r * g_sup, &mut best, &mut samples, &mut rows);
        // Annulus with inner radius about half the outer.
        let inner = CubeRegion::new(x, aligned_radius(steps / 2, h));
        let ann = Region::Annulus { outer: cube, inner };
        let ua = discrete_norm(&u, Lp::P(2.0), ann)?;
        let ga = grad.norm(Lp::P(2.0), ann)?;
        push(1, ua, r * ga, &mut best, &mut samples, &mut rows);

        // Second-derivative forms need genuinely clamped test functions:
        // random clamped data restricted to a boundary-poking cube.
        let mut bx = [0i64; MAX_DIM];
        for d in 0..n {
            let anchor = pick(cfg.seed, t * 17 + 9 + d as u64, 3);
            bx[d] = match anchor {
                0 => 0,
                1 => m as i64 / 2,
                _ => m as i64,
            };
        }
        let bcube = CubeRegion::new(bx, r);
        let mut ctr2 = t * 1000;
        let v = GridFunction::phi_from_fn(domain, |k| {
            if bcube.contains(h, n, k) {
                ctr2 += 1;
                pick_signed(cfg.seed ^ 0x1234, ctr2)
            } else {
                0.0
            }
        });
        let hess = hessian(&v);
        let bregion = Region::Cube(bcube);
        let v_sup = discrete_norm(&v, Lp::Inf, bregion)?;
        let h_l2 = hess.l2_norm_sq(bregion).sqrt();
        push(3, v_sup, r.powf(2.0 - n as f64 / 2.0) * h_l2, &mut best, &mut samples, &mut rows);
        if v_sup > 0.0 {
            let holder = crate::lattice::holder_seminorm(&v, 0.25, bregion)?;
            push(4, holder, r.powf(1.75 - n as f64 / 2.0) * h_l2, &mut best, &mut samples, &mut rows);
        }
    }
    Ok((
        (0..5)
            .map(|i| GridStat {
                m,
                constant: best[i].map(|w| w.quantity / w.bound).unwrap_or(0.0),
                samples: samples[i],
                excluded: 0,
                exclusion_violations: 0,
                witness: best[i],
            })
            .collect(),
        rows,
    ))
}

pub fn verify_poincare_sobolev(
    n: usize,
    m_list: &[usize],
    cfg: TrialConfig,
) -> Result<(Vec<EstimateReport>, Vec<RatioRow>)> {
    let mut per_id: Vec<Vec<GridStat>> = vec![Vec::new(); 5];
    let mut rows = Vec::new();
    for &m in m_list {
        let (grids, r) = poincare_grid(n, m, cfg)?;
        for (i, g) in grids.into_iter().enumerate() {
            per_id[i].push(g);
        }
        rows.extend(r);
    }
    Ok((
        POINCARE_IDS
            .iter()
            .zip(per_id)
            .map(|(id, grids)| stability_report(id, n, BoundKind::SupRatio, grids))
            .collect(),
        rows,
    ))
}

// ---------------------------------------------------------------------------
// Corner exponent.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct CornerFit {
    pub m: usize,
    pub slope: f64,
    pub slope_se: f64,
    pub theta_hat: f64,
    pub theta_se: f64,
    pub r_squared: f64,
    /// `(log(|x|/|y|), log G(x,y))` fit points.
    pub points: Vec<(f64, f64)>,
    pub source: Idx,
}

/// Fit the corner decay exponent of `|G(x,y)|` along the diagonal toward the
/// corner, for a source placed on the diagonal with `d(y) ≍ |y|`.
///
/// Fit points start three steps from the corner: the first two diagonal
/// points sit at lattice scale where the clamped column is nearly flat and
/// no power law can hold, so they are outside the admissible range.
pub fn fit_corner_exponent(m_list: &[usize]) -> Result<Vec<CornerFit>> {
    let mut out = Vec::new();
    for &m in m_list {
        let domain = LatticeDomain::new(2, m)?;
        // Geometric points j = 3, 4, 6, 8, 12, ... up to M/8 on the diagonal,
        // keeping |x| ≤ |y|/4.
        let mut js = Vec::new();
        let mut a = 3i64;
        let mut b = 4i64;
        while a <= m as i64 / 8 {
            js.push(a);
            if b <= m as i64 / 8 {
                js.push(b);
            }
            a *= 2;
            b *= 2;
        }
        if js.len() < 3 {
            return Err(Error::Parameter(format!(
                "corner fit needs at least 3 points between the lattice scale and M/8;                  M = {m} is too small"
            )));
        }
        let y = [m as i64 / 2, m as i64 / 2, 0];
        let col = single_column(2, m, y)?;
        let ynorm = point_distance(domain.h(), 2, y, [0, 0, 0]);
        let mut points = Vec::new();
        for &j in &js {
            let x = [j, j, 0];
            let g = col.get(x).abs();
            if g <= 0.0 {
                continue;
            }
            let xnorm = point_distance(domain.h(), 2, x, [0, 0, 0]);
            points.push(((xnorm / ynorm).ln(), g.ln()));
        }
        if points.len() < 3 {
            return Err(Error::Numeric(format!(
                "corner fit on M = {m}: too few usable Green values"
            )));
        }
        let (slope, slope_se, r2) = linear_fit(&points);
        out.push(CornerFit {
            m,
            slope,
            slope_se,
            theta_hat: 2.0 * (slope - 2.0),
            theta_se: 2.0 * slope_se,
            r_squared: r2,
            points,
            source: y,
        });
    }
    Ok(out)
}

fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let se = if pts.len() > 2 { (ss_res / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (slope, se, r2)
}

// ---------------------------------------------------------------------------
// Convergence under refinement.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct RefinementTable {
    pub y: [f64; MAX_DIM],
    pub ms: Vec<usize>,
    /// `e_k`: sup-norm difference of the piecewise-constant interpolants of
    /// consecutive meshes.
    pub diffs: Vec<f64>,
    /// `e_{k+1} / e_k`.
    pub ratios: Vec<f64>,
}

/// Uniform Cauchy check of Green-column convergence under mesh doubling.
pub fn verify_convergence(
    n: usize,
    y: [f64; MAX_DIM],
    m0: usize,
    doublings: usize,
) -> Result<RefinementTable> {
    for d in 0..n {
        if !(y[d] > 0.0 && y[d] < 1.0) {
            return Err(Error::Domain(format!(
                "source point {:?} must lie strictly inside the unit cube",
                &y[..n]
            )));
        }
    }
    // `doublings` refinements: grids m0, 2·m0, ..., 2^doublings·m0.
    let ms: Vec<usize> = (0..=doublings).map(|k| m0 << k).collect();
    let mut cols = Vec::new();
    for &m in &ms {
        let domain = LatticeDomain::new(n, m)?;
        let h = domain.h();
        let mut yk = [0i64; MAX_DIM];
        for d in 0..n {
            yk[d] = (y[d] / h + 0.5).floor() as i64;
        }
        let col = single_column(n, m, yk)?;
        cols.push((domain, col));
    }
    let mut diffs = Vec::new();
    for w in cols.windows(2) {
        let (dc, coarse) = (&w[0].0, &w[0].1);
        let (df, fine) = (&w[1].0, &w[1].1);
        diffs.push(pc_sup_difference(dc, coarse, df, fine));
    }
    let ratios = diffs.windows(2).map(|p| p[1] / p[0]).collect();
    Ok(RefinementTable { y, ms, diffs, ratios })
}

/// Sup-norm over the continuum of the difference of the piecewise-constant
/// interpolants of a coarse (mesh M) and fine (mesh 2M) lattice function.
/// Fine cells with odd indices straddle two coarse cells per odd axis, so
/// both coarse neighbors are compared.
pub fn pc_sup_difference(
    dc: &LatticeDomain,
    coarse: &GridFunction,
    df: &LatticeDomain,
    fine: &GridFunction,
) -> f64 {
    assert_eq!(df.m(), 2 * dc.m());
    let n = dc.n();
    let mut sup = 0.0f64;
    for zf in df.lattice_points() {
        let vf = fine.get(zf);
        // Candidate coarse indices per axis.
        let mut cands: Vec<Vec<i64>> = Vec::with_capacity(n);
        for d in 0..n {
            let i = zf[d];
            if i % 2 == 0 {
                cands.push(vec![i / 2]);
            } else {
                cands.push(vec![(i - 1) / 2, (i + 1) / 2]);
            }
        }
        let mut stack = vec![[0i64; MAX_DIM]];
        for d in 0..n {
            let mut next = Vec::with_capacity(stack.len() * cands[d].len());
            for base in &stack {
                for &c in &cands[d] {
                    let mut b = *base;
                    b[d] = c;
                    next.push(b);
                }
            }
            stack = next;
        }
        for kc in stack {
            sup = sup.max((coarse.get(kc) - vf).abs());
        }
    }
    sup
}

// ---------------------------------------------------------------------------
// Full-space estimate stability (normalized Green's function derivatives).
// ---------------------------------------------------------------------------

/// Stability of the mixed-derivative bounds of the normalized full-space
/// Green's function over mesh refinements: third derivatives against
/// `(|x−y|+h)^{1−n}` and fourth against `(|x−y|+h)^{−n}`, for
/// `|x−y|_∞ ≤ r/2` with `r = 1/2`.
pub fn verify_fullspace_estimates(
    n: usize,
    h_list: &[f64],
    cache: &crate::fullspace::PatternCache,
) -> Result<Vec<EstimateReport>> {
    let r = 0.5f64;
    let mut grids3 = Vec::new();
    let mut grids4 = Vec::new();
    for &h in h_list {
        let m = (1.0 / h).round() as usize;
        let zmax = ((r / 2.0) / h).floor() as i64;
        let mut best3: Option<Witness> = None;
        let mut best4: Option<Witness> = None;
        let mut count = 0usize;
        let mut lo = [0i64; MAX_DIM];
        let mut hi = [0i64; MAX_DIM];
        for d in 0..n {
            lo[d] = 0;
            hi[d] = zmax;
        }
        // The derivative magnitudes are even in each component of z; the
        // nonnegative orthant covers every ratio.
        for z in crate::lattice::IdxBoxIter::new(n, lo, hi) {
            let dist = h * ((0..n).map(|d| (z[d] * z[d]) as f64).sum::<f64>()).sqrt();
            let q3 = crate::fullspace::tilde_hess_x_grad_y_mag(
                n,
                h,
                z,
                cache,
                crate::fullspace::DEFAULT_PATCH_RADIUS,
            )?;
            let b3 = 1.0 / (dist + h).powi(n as i32 - 1);
            let q4 = crate::fullspace::tilde_hess_x_hess_y_mag(
                n,
                h,
                z,
                cache,
                crate::fullspace::DEFAULT_PATCH_RADIUS,
            )?;
            let b4 = 1.0 / (dist + h).powi(n as i32);
            count += 1;
            let w3 = Witness { x: z, y: [0; MAX_DIM], m, quantity: q3, bound: b3 };
            best3 = Some(match best3 {
                Some(prev) if prev.quantity / prev.bound >= q3 / b3 => prev,
                _ => w3,
            });
            let w4 = Witness { x: z, y: [0; MAX_DIM], m, quantity: q4, bound: b4 };
            best4 = Some(match best4 {
                Some(prev) if prev.quantity / prev.bound >= q4 / b4 => prev,
                _ => w4,
            });
        }
        let mk = |best: Option<Witness>| GridStat {
            m,
            constant: best.map(|w| w.quantity / w.bound).unwrap_or(0.0),
            samples: count,
            excluded: 0,
            exclusion_violations: 0,
            witness: best,
        };
        grids3.push(mk(best3));
        grids4.push(mk(best4));
    }
    Ok(vec![
        stability_report("fullspace-hess-grad", n, BoundKind::SupRatio, grids3),
        stability_report("fullspace-hess-hess", n, BoundKind::SupRatio, grids4),
    ])
}

// ---------------------------------------------------------------------------
// Continuity of the membrane field.
// ---------------------------------------------------------------------------

pub fn verify_continuity(n: usize, n_list: &[usize]) -> Result<EstimateReport> {
    let mut grids = Vec::new();
    for &big_n in n_list {
        let model = crate::membrane::NScaleModel::new(n, big_n)?;
        let (ratio, a, b) = model.continuity_ratio_sup();
        grids.push(GridStat {
            m: big_n,
            constant: ratio,
            samples: model.domain().interior_count().pow(2),
            excluded: model.domain().interior_count(),
            exclusion_violations: 0,
            witness: Some(Witness { x: a, y: b, m: big_n, quantity: ratio, bound: 1.0 }),
        });
    }
    Ok(stability_report("continuity-increment", n, BoundKind::SupRatio, grids))
}
