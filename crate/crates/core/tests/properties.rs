//! Property tests for the discrete calculus, the solver, the Green's
//! function and the interpolation operators.

use bilap::green::GreenMatrix;
use bilap::lattice::{
    discrete_norm, interior_distance, CubeRegion, GridFunction, LatticeDomain, Lp, Region,
};
use bilap::operators::{
    backward_diff, bilaplacian, bilaplacian_composed, forward_diff, gradient, hessian,
    inner_product, MatrixField, MultiIndex,
};
use bilap::solver::{dense_solve, energy_norm, solve_bilaplacian, SolveOptions};
use bilap::splines::{interp_l2_norm, SplineOperator};
use proptest::prelude::*;

fn dom(n: usize, m: usize) -> LatticeDomain {
    LatticeDomain::new(n, m).unwrap()
}

fn phi_from_values(d: LatticeDomain, values: &[f64]) -> GridFunction {
    GridFunction::phi_from_interior_values(d, values.to_vec())
}

fn interior_values(m: usize, n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, (m - 1).pow(n as u32))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Weak form: (Δ²u, φ) = (∇²u, ∇²φ) to relative 1e−12.
    #[test]
    fn summation_by_parts(m in prop::sample::select(vec![4usize, 8, 16]),
                          seed in 0u64..1000) {
        let d = dom(2, m);
        let u = GridFunction::phi_from_fn(d, |k| {
            pseudo(seed, (k[0] * 131 + k[1]) as u64)
        });
        let phi = GridFunction::phi_from_fn(d, |k| {
            pseudo(seed ^ 0xdead, (k[0] * 131 + k[1]) as u64)
        });
        let lhs = inner_product(&bilaplacian(&u), &phi);
        let hu = hessian(&u);
        let hp = hessian(&phi);
        let mut rhs = 0.0;
        for (a, b) in hu.entries.iter().zip(&hp.entries) {
            rhs += inner_product(a, b);
        }
        let scale = lhs.abs().max(rhs.abs()).max(1e-30);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * scale);
    }

    /// Discrete product rule is exact for random data.
    #[test]
    fn product_rule(seed in 0u64..1000, axis in 0usize..2) {
        let d = dom(2, 8);
        let f = GridFunction::on_box(d, [-2, -2, 0], [10, 10, 0], |k| {
            pseudo(seed, (k[0] * 53 + k[1] + 7) as u64)
        });
        let g = GridFunction::on_box(d, [-2, -2, 0], [10, 10, 0], |k| {
            pseudo(seed ^ 0xbeef, (k[0] * 53 + k[1] + 7) as u64)
        });
        let fg = GridFunction::on_box(d, [-2, -2, 0], [10, 10, 0], |k| f.get(k) * g.get(k));
        let lhs = forward_diff(&fg, axis).unwrap();
        let df = forward_diff(&f, axis).unwrap();
        let dg = forward_diff(&g, axis).unwrap();
        for k in d.lattice_points() {
            let mut ke = k;
            ke[axis] += 1;
            let rhs = df.get(k) * g.get(k) + f.get(ke) * dg.get(k);
            prop_assert!((lhs.get(k) - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }

    /// Fused and composed bilaplacian agree to machine precision.
    #[test]
    fn bilaplacian_paths_agree(n in prop::sample::select(vec![2usize, 3]), seed in 0u64..1000) {
        let m = if n == 2 { 8 } else { 5 };
        let d = dom(n, m);
        let u = GridFunction::phi_from_fn(d, |k| {
            pseudo(seed, (k[0] * 511 + k[1] * 37 + k[2]) as u64)
        });
        let a = bilaplacian(&u);
        let b = bilaplacian_composed(&u);
        let scale = a.max_abs();
        for k in b.box_points() {
            prop_assert!((a.get(k) - b.get(k)).abs() <= 1e-13 * scale);
        }
    }

    /// The operator is positive definite on clamped functions.
    #[test]
    fn operator_positive_definite(values in interior_values(8, 2)) {
        let d = dom(2, 8);
        prop_assume!(values.iter().any(|v| v.abs() > 1e-6));
        let u = phi_from_values(d, &values);
        let q = inner_product(&bilaplacian(&u), &u);
        prop_assert!(q > 0.0);
    }

    /// Hölder relation on the finite lattice measure: for q ≤ p,
    /// ‖f‖_q ≤ (h^n·count)^{1/q−1/p} ‖f‖_p, with equality for constants.
    #[test]
    fn norm_counting_holder(values in interior_values(8, 2),
                            pq in prop::sample::select(vec![(1.0f64, 2.0f64), (2.0, 4.0), (1.0, 3.0)])) {
        let (q, p) = pq;
        let d = dom(2, 8);
        let f = phi_from_values(d, &values);
        let cube = CubeRegion::new([4, 4, 0], 2.5 * d.h());
        let count = cube.point_count(d.h(), 2) as f64;
        let mu = d.h().powi(2) * count;
        let nq = discrete_norm(&f, Lp::P(q), Region::Cube(cube)).unwrap();
        let np = discrete_norm(&f, Lp::P(p), Region::Cube(cube)).unwrap();
        prop_assert!(nq <= mu.powf(1.0 / q - 1.0 / p) * np * (1.0 + 1e-12));
    }

    /// CG matches the dense oracle on every grid under the cap.
    #[test]
    fn cg_matches_dense(values in interior_values(8, 2)) {
        let d = dom(2, 8);
        let f = phi_from_values(d, &values);
        prop_assume!(f.max_abs() > 1e-6);
        let (u, _) = solve_bilaplacian(d, &f, SolveOptions::default()).unwrap();
        let v = dense_solve(d, &f).unwrap();
        let scale = v.max_abs();
        for k in d.interior_points() {
            prop_assert!((u.get(k) - v.get(k)).abs() <= 1e-7 * scale);
        }
    }

    /// Energy estimate: for f in divergence form from a matrix field g
    /// supported in the interior, ‖∇²u‖ ≤ ‖g‖.
    #[test]
    fn energy_estimate(seed in 0u64..1000) {
        let d = dom(2, 8);
        let entries: Vec<GridFunction> = (0..4)
            .map(|e| {
                GridFunction::phi_from_fn(d, |k| {
                    pseudo(seed ^ (e as u64) << 8, (k[0] * 97 + k[1]) as u64)
                })
            })
            .collect();
        let g = MatrixField { n: 2, entries };
        // f = Σ_{ij} D_{−j} D_i g_{ij}, the divergence form paired with the
        // discrete Hessian in the weak formulation.
        let mut f = GridFunction::phi_zero(d);
        for i in 0..2 {
            for j in 0..2 {
                let di = forward_diff(g.entry(i, j), i).unwrap();
                let dji = backward_diff(&di, j).unwrap();
                for k in d.interior_points() {
                    let v = f.get(k) + dji.get(k);
                    f.set(k, v);
                }
            }
        }
        // Pairing sanity: (f, φ) = Σ (g_ij, D_{−i}D_j φ) for a random φ.
        let phi = GridFunction::phi_from_fn(d, |k| pseudo(seed ^ 0x77, (k[0] * 7 + k[1]) as u64));
        let lhs = inner_product(&f, &phi);
        let hp = hessian(&phi);
        let mut rhs = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                rhs += inner_product(g.entry(i, j), hp.entry(i, j));
            }
        }
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");

        let (u, _) = solve_bilaplacian(d, &f, SolveOptions::default()).unwrap();
        let energy = energy_norm(&u).sqrt();
        let gnorm = g.l2_norm_sq(Region::Whole).sqrt();
        prop_assert!(energy <= gnorm * (1.0 + 1e-10), "energy {energy} vs {gnorm}");
    }

    /// Green reproduction: Σ_y G(x,y) Δ²u(y) h^n = u(x).
    #[test]
    fn green_reproduction(values in interior_values(6, 2)) {
        let d = dom(2, 6);
        let gm = GreenMatrix::assemble(d).unwrap();
        let u = phi_from_values(d, &values);
        let f = bilaplacian(&u);
        let hn = d.h().powi(2);
        for x in d.interior_points() {
            let mut acc = 0.0;
            for y in d.interior_points() {
                acc += gm.value(x, y) * f.get(y) * hn;
            }
            prop_assert!((acc - u.get(x)).abs() <= 1e-7 * (1.0 + u.max_abs()));
        }
    }
}

fn pseudo(seed: u64, ctr: u64) -> f64 {
    let mut x = seed.wrapping_add(ctr.wrapping_mul(0x9e3779b97f4a7c15));
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^= x >> 31;
    ((x >> 11) as f64 / 4503599627370496.0) - 1.0
}

/// Discrete Poincaré on the clamped space with a calibrated constant:
/// ‖u‖ ≤ C_P r ‖∇u‖ on the cell-aligned full cube, C_P frozen at 0.35
/// (measured worst ratio 0.151 across M ∈ {8,16,32} and 100 draws).
#[test]
fn poincare_calibrated_constant() {
    const C_P: f64 = 0.35;
    for m in [8usize, 16, 32] {
        let d = dom(2, m);
        let h = d.h();
        let c = [m as i64 / 2, m as i64 / 2, 0];
        let r = 0.5 + h / 2.0;
        let cube = Region::Cube(CubeRegion::new(c, r));
        for trial in 0..100u64 {
            let u = GridFunction::phi_from_fn(d, |k| {
                pseudo(trial * 7919, (k[0] * 37 + k[1] * 17) as u64)
            });
            let un = discrete_norm(&u, Lp::P(2.0), cube).unwrap();
            let gn = gradient(&u).norm(Lp::P(2.0), cube).unwrap();
            assert!(un <= C_P * r * gn, "M={m}, trial {trial}: {un} vs {}", C_P * r * gn);
        }
    }
}

/// Lemma-style diagonal bound: the first-branch ratio |G|/(d(x)d(y))^{2−n/2}
/// stays within a factor 2 across refinements (n=2).
#[test]
fn green_first_branch_ratio_stable() {
    let mut consts = Vec::new();
    for m in [8usize, 16, 32] {
        let d = dom(2, m);
        let gm = GreenMatrix::assemble(d).unwrap();
        let mut sup = 0.0f64;
        for x in d.interior_points() {
            let dx = interior_distance(&d, x);
            for y in d.interior_points() {
                let dy = interior_distance(&d, y);
                sup = sup.max(gm.value(x, y).abs() / (dx * dy));
            }
        }
        consts.push(sup);
    }
    let (lo, hi) = (consts.iter().cloned().fold(f64::INFINITY, f64::min),
                    consts.iter().cloned().fold(0.0f64, f64::max));
    assert!(hi / lo <= 2.0, "first-branch constants {consts:?}");
    assert!(hi.is_finite());
}

/// Energy identity on the Green diagonal across meshes (n=2).
#[test]
fn green_energy_identity_small_grids() {
    for m in [4usize, 8, 16] {
        let d = dom(2, m);
        let gm = GreenMatrix::assemble(d).unwrap();
        for y in d.interior_points() {
            let col = gm.column(y);
            let e = energy_norm(&col);
            let g = gm.value(y, y);
            assert!((e - g).abs() <= 1e-8 * g, "M={m}, y={y:?}: {e} vs {g}");
        }
    }
}

/// Interpolation norm equivalence: both directions of the `L²` comparison
/// between `D^α J_h u` and the backward difference `D^α_{−h} u` hold with a
/// single constant across meshes, for α ∈ {0, e₁, e₁+e₂} and r = s + 4h.
#[test]
fn spline_norm_equivalence() {
    const C: f64 = 3.0;
    for m in [8usize, 16, 32] {
        let d = dom(2, m);
        let h = d.h();
        let op = SplineOperator::cubic(2, h);
        let center_idx = [m as i64 / 2, m as i64 / 2, 0];
        let center = [0.5, 0.5, 0.0];
        let s = 0.25;
        let r = s + 4.0 * h;
        for (trial, alpha) in [(0u64, [0usize, 0, 0]), (1, [1, 0, 0]), (2, [1, 1, 0])] {
            for t in 0..34u64 {
                let u = GridFunction::phi_from_fn(d, |k| {
                    pseudo(trial * 1000 + t, (k[0] * 61 + k[1] * 13) as u64)
                });
                let alpha = MultiIndex(alpha);
                let du = bilap::operators::multi_diff(&u, alpha, bilap::operators::DiffSign::Backward)
                    .unwrap();
                let cont_s = interp_l2_norm(&op, &u, alpha, center, s);
                let cont_r = interp_l2_norm(&op, &u, alpha, center, r);
                let disc_s =
                    discrete_norm(&du, Lp::P(2.0), Region::Cube(CubeRegion::new(center_idx, s)))
                        .unwrap();
                let disc_r =
                    discrete_norm(&du, Lp::P(2.0), Region::Cube(CubeRegion::new(center_idx, r)))
                        .unwrap();
                if disc_r > 0.0 {
                    assert!(
                        cont_s <= C * disc_r,
                        "M={m} α={alpha:?}: continuous {cont_s} vs discrete {disc_r}"
                    );
                }
                if cont_r > 0.0 {
                    assert!(
                        disc_s <= C * cont_r,
                        "M={m} α={alpha:?}: discrete {disc_s} vs continuous {cont_r}"
                    );
                }
            }
        }
    }
}

/// Mixed-derivative bounds of the normalized full-space Green's function:
/// a single constant covers both mesh widths (the ratios are exactly
/// scale-free, so the per-grid constants coincide).
#[test]
fn fullspace_estimate_stability() {
    let cache = bilap::fullspace::PatternCache::new(Default::default());
    let reports =
        bilap::verify::verify_fullspace_estimates(2, &[1.0 / 16.0, 1.0 / 32.0], &cache).unwrap();
    for r in &reports {
        assert!(r.global_constant.is_finite() && r.global_constant > 0.0);
        assert!(r.spread <= 2.0, "{}: spread {}", r.estimate_id, r.spread);
    }
}
