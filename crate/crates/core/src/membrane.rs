//! The membrane model: the Gaussian field whose covariance is the clamped
//! Green's function, its Hamiltonian, exact increment variances, continuity
//! statistics, and Monte Carlo entropic repulsion.
//!
//! Sampling draws `ψ = L ξ` with `L` the lower Cholesky factor of the Green
//! matrix and `ξ` standard normals from a counter-based generator, so a batch
//! is reproducible bit-for-bit regardless of thread scheduling.

use crate::error::Result;
use crate::green::{unit_scale_factor, GreenMatrix};
use crate::lattice::{GridFunction, Idx, LatticeDomain, MAX_DIM};
use crate::operators::laplacian;
use rayon::prelude::*;
use serde::Serialize;

/// `H(ψ) = ½ Σ |Δ_h ψ(x)|² h^n`, summed over every lattice point where the
/// Laplacian of the zero-extended field is nonzero. By summation by parts
/// this equals `½ (Δ_h² ψ, ψ)` for clamped ψ, the quadratic form whose
/// Gibbs measure has covariance exactly the Green matrix.
pub fn hamiltonian(psi: &GridFunction) -> f64 {
    let n = psi.domain().n();
    let hn = psi.domain().h().powi(n as i32);
    let lap = laplacian(psi);
    let mut acc = 0.0;
    for k in lap.box_points() {
        acc += lap.get(k) * lap.get(k);
    }
    0.5 * hn * acc
}

/// Splitmix-style finalizer.
#[inline]
fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Standard normal from `(seed, counter)` by Box–Muller on two mixed
/// uniforms. Pure function of its arguments.
#[inline]
pub fn counter_normal(seed: u64, counter: u64) -> f64 {
    const GOLDEN: u64 = 0x9e3779b97f4a7c15;
    let a = mix64(seed.wrapping_add((2 * counter + 1).wrapping_mul(GOLDEN)));
    let b = mix64(seed.wrapping_add((2 * counter + 2).wrapping_mul(GOLDEN)));
    let u1 = ((a >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0);
    let u2 = ((b >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One realization of the membrane field.
#[derive(Clone, Debug)]
pub struct FieldSample {
    pub seed: u64,
    pub index: u64,
    pub psi: GridFunction,
    pub hamiltonian: f64,
}

/// Seeded sampler over a Green matrix.
pub struct MembraneSampler {
    matrix: GreenMatrix,
    seed: u64,
    chol: Vec<f64>,
}

impl MembraneSampler {
    pub fn new(matrix: GreenMatrix, seed: u64) -> Result<Self> {
        let chol = matrix.with_cholesky(|l| l.to_vec())?;
        Ok(Self { matrix, seed, chol })
    }

    pub fn domain(&self) -> LatticeDomain {
        self.matrix.domain()
    }

    pub fn matrix(&self) -> &GreenMatrix {
        &self.matrix
    }

    /// Interior values of sample `index`, in interior rank order.
    pub fn sample_values(&self, index: u64) -> Vec<f64> {
        let p = self.domain().interior_count();
        let xi: Vec<f64> = (0..p)
            .map(|j| counter_normal(self.seed, index * p as u64 + j as u64))
            .collect();
        let mut out = vec![0.0; p];
        crate::linalg::lower_mul(&self.chol, p, &xi, &mut out);
        out
    }

    pub fn sample(&self, index: u64) -> FieldSample {
        let values = self.sample_values(index);
        let psi = GridFunction::phi_from_interior_values(self.domain(), values);
        let h = hamiltonian(&psi);
        FieldSample { seed: self.seed, index, psi, hamiltonian: h }
    }

    pub fn sample_batch(&self, start: u64, count: usize) -> Vec<FieldSample> {
        (0..count as u64).into_par_iter().map(|i| self.sample(start + i)).collect()
    }
}

/// Exact increment variance `E|ψ_x − ψ_y|²` from Green values.
pub fn increment_variance(gm: &GreenMatrix, x: Idx, y: Idx) -> f64 {
    gm.value(x, x) - 2.0 * gm.value(x, y) + gm.value(y, y)
}

/// The membrane model at field scale: the unit lattice box `[−N, N]^n` with
/// zero boundary data outside, realized through the mesh `h = 1/(2N+2)` and
/// the scale bridge for covariances.
pub struct NScaleModel {
    pub big_n: usize,
    domain: LatticeDomain,
    matrix: GreenMatrix,
    /// `M^{4−n}`: mesh Green values times this give unit-lattice covariances.
    scale: f64,
}

impl NScaleModel {
    pub fn new(n: usize, big_n: usize) -> Result<Self> {
        let domain = LatticeDomain::new(n, 2 * big_n + 2)?;
        let matrix = GreenMatrix::assemble(domain)?;
        let scale = unit_scale_factor(domain);
        Ok(Self { big_n, domain, matrix, scale })
    }

    pub fn domain(&self) -> LatticeDomain {
        self.domain
    }

    pub fn matrix(&self) -> &GreenMatrix {
        &self.matrix
    }

    /// Map a field-scale coordinate in `[−N, N]^n` to a mesh interior index.
    pub fn to_interior(&self, v: Idx) -> Idx {
        let shift = self.big_n as i64 + 1;
        let mut k = [0i64; MAX_DIM];
        for d in 0..self.domain.n() {
            k[d] = v[d] + shift;
        }
        k
    }

    /// Unit-lattice covariance `G_N(a, b)`.
    pub fn green_n(&self, a: Idx, b: Idx) -> f64 {
        self.scale * self.matrix.value(self.to_interior(a), self.to_interior(b))
    }

    pub fn increment_variance_n(&self, a: Idx, b: Idx) -> f64 {
        self.green_n(a, a) - 2.0 * self.green_n(a, b) + self.green_n(b, b)
    }

    /// Continuity-estimate bound at unit scale.
    pub fn continuity_bound(&self, a: Idx, b: Idx) -> f64 {
        let n = self.domain.n();
        let d2: i64 = (0..n).map(|d| (a[d] - b[d]).pow(2)).sum();
        let dist = (d2 as f64).sqrt();
        match n {
            2 => dist * dist * (2.0 + self.big_n as f64 / dist).ln(),
            _ => dist,
        }
    }

    /// Supremum over distinct pairs of increment variance over bound.
    pub fn continuity_ratio_sup(&self) -> (f64, Idx, Idx) {
        let pts: Vec<Idx> = self.domain.interior_points().collect();
        let shift = self.big_n as i64 + 1;
        let unit = |k: Idx| {
            let mut v = [0i64; MAX_DIM];
            for d in 0..self.domain.n() {
                v[d] = k[d] - shift;
            }
            v
        };
        pts.par_iter()
            .enumerate()
            .map(|(i, &ki)| {
                let a = unit(ki);
                let mut local = (0.0f64, a, a);
                for &kj in &pts[i + 1..] {
                    let b = unit(kj);
                    let ratio = self.increment_variance_n(a, b) / self.continuity_bound(a, b);
                    if ratio > local.0 {
                        local = (ratio, a, b);
                    }
                }
                local
            })
            .reduce(
                || (0.0, [0i64; MAX_DIM], [0i64; MAX_DIM]),
                |a, b| if a.0 >= b.0 { a } else { b },
            )
    }

    pub fn sampler(&self, seed: u64) -> Result<MembraneSampler> {
        // The sampler owns its matrix; reassemble (grids here are small).
        let gm = GreenMatrix::assemble(self.domain)?;
        MembraneSampler::new(gm, seed)
    }

    /// Factor turning a mesh-scale sample into a field-scale one.
    pub fn unit_field_factor(&self) -> f64 {
        self.scale.sqrt()
    }

    /// Hamiltonian of a field-scale sample `½ Σ |Δ_1 ψ|²` on the unit lattice.
    /// `values` are interior values in rank order at field scale.
    pub fn unit_hamiltonian(&self, values: &[f64]) -> f64 {
        let d = self.domain;
        let n = d.n();
        let get = |k: Idx| -> f64 {
            if d.is_interior(k) {
                values[d.interior_rank(k)]
            } else {
                0.0
            }
        };
        let mut acc = 0.0;
        for k in d.lattice_points() {
            let mut lap = -2.0 * n as f64 * get(k);
            for dd in 0..n {
                let mut kp = k;
                kp[dd] += 1;
                let mut km = k;
                km[dd] -= 1;
                lap += get(kp) + get(km);
            }
            acc += lap * lap;
        }
        0.5 * acc
    }

    /// Hölder statistic of the rescaled field `ψ'_{x'} = N^{−2+n/2} ψ_{Nx'}`:
    /// `sup_{|x−y|≥1} |ψ'_x − ψ'_y| / |x'−y'|^α`.
    pub fn holder_statistic(&self, values: &[f64], alpha: f64) -> f64 {
        let d = self.domain;
        let n = d.n();
        let nn = self.big_n.max(1) as f64;
        let prefactor = nn.powf(-2.0 + n as f64 / 2.0) * nn.powf(alpha);
        let pts: Vec<Idx> = d.interior_points().collect();
        let mut sup = 0.0f64;
        for i in 0..pts.len() {
            let vi = values[i];
            for j in i + 1..pts.len() {
                let d2: i64 = (0..n).map(|dd| (pts[i][dd] - pts[j][dd]).pow(2)).sum();
                let dist = (d2 as f64).sqrt();
                let r = (vi - values[j]).abs() / dist.powf(alpha);
                sup = sup.max(r);
            }
        }
        prefactor * sup
    }
}

/// One row of an entropic-repulsion Monte Carlo run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RepulsionRow {
    pub big_n: usize,
    pub samples: usize,
    pub hits: usize,
    pub p_hat: f64,
    /// `−log P̂`; absent when no positive sample was seen.
    pub neg_log_p: Option<f64>,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// Set when `hits = 0`: only a lower bound on `−log P` is available.
    pub lower_bound_only: bool,
}

/// Wilson score interval at `z = 1.96`.
pub fn wilson_interval(hits: usize, samples: usize) -> (f64, f64) {
    let z = 1.96f64;
    let n = samples as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Monte Carlo estimate of `P(ψ ≥ 0 everywhere)` over a list of field sizes.
pub fn entropic_repulsion_mc(
    n: usize,
    big_ns: &[usize],
    samples: usize,
    seed: u64,
) -> Result<Vec<RepulsionRow>> {
    let mut rows = Vec::with_capacity(big_ns.len());
    for &big_n in big_ns {
        let model = NScaleModel::new(n, big_n)?;
        let sampler = model.sampler(seed.wrapping_add(big_n as u64))?;
        let p = model.domain().interior_count();
        let chol = sampler.matrix().with_cholesky(|l| l.to_vec())?;
        let hits: usize = (0..samples as u64)
            .into_par_iter()
            .map(|idx| {
                let mut xi = vec![0.0; p];
                for (j, x) in xi.iter_mut().enumerate() {
                    *x = counter_normal(sampler.seed, idx * p as u64 + j as u64);
                }
                let mut psi = vec![0.0; p];
                crate::linalg::lower_mul(&chol, p, &xi, &mut psi);
                usize::from(psi.iter().all(|&v| v >= 0.0))
            })
            .sum();
        let p_hat = hits as f64 / samples as f64;
        let (lo, hi) = wilson_interval(hits, samples);
        rows.push(RepulsionRow {
            big_n,
            samples,
            hits,
            p_hat,
            neg_log_p: (hits > 0).then(|| -p_hat.ln()),
            wilson_lo: lo,
            wilson_hi: hi,
            lower_bound_only: hits == 0,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{bilaplacian, inner_product};

    fn model(n: usize, big_n: usize) -> NScaleModel {
        NScaleModel::new(n, big_n).unwrap()
    }

    #[test]
    fn hamiltonian_zero_and_homogeneous() {
        let d = LatticeDomain::new(2, 8).unwrap();
        assert_eq!(hamiltonian(&GridFunction::phi_zero(d)), 0.0);
        let psi = GridFunction::phi_from_fn(d, |k| ((k[0] * 3 + k[1]) % 5) as f64 - 2.0);
        let h1 = hamiltonian(&psi);
        let mut lam = psi.clone();
        lam.scale(3.0);
        assert!((hamiltonian(&lam) - 9.0 * h1).abs() <= 1e-12 * h1);
    }

    #[test]
    fn hamiltonian_is_half_the_quadratic_form() {
        for m in [4usize, 8] {
            let d = LatticeDomain::new(2, m).unwrap();
            let psi = GridFunction::phi_from_fn(d, |k| ((k[0] * 7 + k[1] * 11) % 13) as f64 - 6.0);
            let quad = 0.5 * inner_product(&bilaplacian(&psi), &psi);
            let h = hamiltonian(&psi);
            assert!((h - quad).abs() <= 1e-12 * quad.abs());
        }
    }

    #[test]
    fn counter_normal_is_reproducible_and_centered() {
        assert_eq!(counter_normal(7, 123), counter_normal(7, 123));
        assert_ne!(counter_normal(7, 123), counter_normal(8, 123));
        let n = 200_000;
        let mean: f64 = (0..n).map(|i| counter_normal(42, i)).sum::<f64>() / n as f64;
        let var: f64 =
            (0..n).map(|i| counter_normal(42, i).powi(2)).sum::<f64>() / n as f64 - mean * mean;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn seed_reproducibility_of_samples() {
        let m = model(2, 3);
        let s1 = m.sampler(99).unwrap();
        let s2 = m.sampler(99).unwrap();
        let a = s1.sample(5);
        let b = s2.sample(5);
        assert_eq!(a.psi.values(), b.psi.values());
        let c = s1.sample_batch(0, 8);
        assert_eq!(c[5].psi.values(), a.psi.values());
    }

    #[test]
    fn empirical_variance_tracks_green_diagonal() {
        let m = model(2, 3);
        let sampler = m.sampler(1234).unwrap();
        let d = sampler.domain();
        let x = [4, 4, 0];
        let rank = d.interior_rank(x);
        let samples = 20_000;
        let mut acc = 0.0;
        let mut acc2 = 0.0;
        for i in 0..samples {
            let v = sampler.sample_values(i)[rank];
            acc += v;
            acc2 += v * v;
        }
        let mean = acc / samples as f64;
        let var = acc2 / samples as f64 - mean * mean;
        let exact = sampler.matrix().value(x, x);
        assert!((var - exact).abs() <= 0.05 * exact, "var {var} vs {exact}");
        let sigma = (exact / samples as f64).sqrt();
        assert!(mean.abs() <= 4.0 * sigma, "mean {mean}");
    }

    #[test]
    fn increment_variance_basics() {
        let m = model(2, 4);
        let gm = m.matrix();
        let x = [3, 4, 0];
        let y = [6, 2, 0];
        assert_eq!(increment_variance(gm, x, x), 0.0);
        let a = increment_variance(gm, x, y);
        let b = increment_variance(gm, y, x);
        assert!((a - b).abs() <= 1e-14 * a.abs());
        assert!(a > 0.0);
    }

    #[test]
    fn gibbs_density_ratio_matches_gaussian_log_density() {
        let m = model(2, 2);
        let sampler = m.sampler(5).unwrap();
        let gm = sampler.matrix();
        let p = gm.domain().interior_count();
        let logdens = |values: &[f64]| -> f64 {
            // −½ ‖L⁻¹ψ‖² up to a constant.
            let mut y = values.to_vec();
            gm.with_cholesky(|l| {
                for i in 0..p {
                    let mut s = y[i];
                    for k in 0..i {
                        s -= l[i * p + k] * y[k];
                    }
                    y[i] = s / l[i * p + i];
                }
            })
            .unwrap();
            -0.5 * y.iter().map(|v| v * v).sum::<f64>()
        };
        let a = sampler.sample(0);
        let b = sampler.sample(1);
        let lhs = -(b.hamiltonian - a.hamiltonian);
        let rhs = logdens(b.psi.values()) - logdens(a.psi.values());
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn unit_hamiltonian_is_scale_invariant() {
        let m = model(2, 2);
        let sampler = m.sampler(17).unwrap();
        let s = sampler.sample(3);
        let mesh_h = s.hamiltonian;
        let factor = m.unit_field_factor();
        let unit_values: Vec<f64> = s.psi.values().iter().map(|v| v * factor).collect();
        let unit_h = m.unit_hamiltonian(&unit_values);
        assert!((mesh_h - unit_h).abs() <= 1e-10 * mesh_h, "{mesh_h} vs {unit_h}");
    }

    #[test]
    fn single_point_positivity_is_a_fair_coin() {
        let rows = entropic_repulsion_mc(2, &[0], 40_000, 7).unwrap();
        let p = rows[0].p_hat;
        let sigma = (0.25f64 / 40_000.0).sqrt();
        assert!((p - 0.5).abs() <= 3.0 * sigma, "p = {p}");
    }

    #[test]
    fn positivity_and_negativity_are_symmetric() {
        let m = model(2, 2);
        let sampler = m.sampler(31).unwrap();
        let samples = 30_000u64;
        let mut pos = 0usize;
        let mut neg = 0usize;
        for i in 0..samples {
            let v = sampler.sample_values(i);
            if v.iter().all(|&x| x >= 0.0) {
                pos += 1;
            }
            if v.iter().all(|&x| x <= 0.0) {
                neg += 1;
            }
        }
        let (p, q) = (pos as f64 / samples as f64, neg as f64 / samples as f64);
        let sigma = (p.max(q) / samples as f64).sqrt().max(1e-4);
        assert!((p - q).abs() <= 5.0 * sigma, "P(Ω₊)={p}, P(Ω₋)={q}");
    }

    #[test]
    fn sampler_covariance_matches_green_matrix() {
        // Entrywise covariance convergence plus the pair identity
        // E[ψ_x ψ_y] = G(x,y), at 1e5 samples on a small grid.
        let m = model(2, 2);
        let sampler = m.sampler(2024).unwrap();
        let d = sampler.domain();
        let p = d.interior_count();
        let samples = 100_000u64;
        let mut cov = vec![0.0f64; p * p];
        for s in 0..samples {
            let v = sampler.sample_values(s);
            for i in 0..p {
                for j in 0..=i {
                    cov[i * p + j] += v[i] * v[j];
                }
            }
        }
        let gm = sampler.matrix();
        let pts: Vec<_> = d.interior_points().collect();
        let mut worst = 0.0f64;
        for i in 0..p {
            for j in 0..=i {
                let emp = cov[i * p + j] / samples as f64;
                let exact = gm.value(pts[i], pts[j]);
                let tol = 15.0
                    * (gm.value(pts[i], pts[i]) * gm.value(pts[j], pts[j])
                        / samples as f64)
                        .sqrt();
                let dev = (emp - exact).abs();
                worst = worst.max(dev / tol);
                assert!(dev <= tol, "entry ({i},{j}): dev {dev:.2e} vs tol {tol:.2e}");
            }
        }
        // Empirical increment variance within 5% at a well-separated pair.
        let (a, b) = (pts[0], pts[p - 1]);
        let (ia, ib) = (d.interior_rank(a), d.interior_rank(b));
        let mut acc = 0.0;
        for s in 0..samples {
            let v = sampler.sample_values(s);
            acc += (v[ia] - v[ib]).powi(2);
        }
        let emp_inc = acc / samples as f64;
        let exact_inc = increment_variance(gm, a, b);
        assert!(
            (emp_inc - exact_inc).abs() <= 0.05 * exact_inc,
            "increment {emp_inc} vs {exact_inc}"
        );
    }

    #[test]
    fn holder_quantiles_do_not_grow_with_field_size() {
        // Medians of the rescaled-field Hölder statistic across N, allowing
        // generous Monte Carlo slack.
        let alpha = 0.5;
        let mut medians = Vec::new();
        for big_n in [2usize, 4] {
            let m = model(2, big_n);
            let sampler = m.sampler(99).unwrap();
            let mut stats: Vec<f64> = (0..300u64)
                .map(|i| m.holder_statistic(sampler.sample_values(i).as_slice(), alpha))
                .collect();
            stats.sort_by(|a, b| a.total_cmp(b));
            medians.push(stats[stats.len() / 2]);
        }
        assert!(
            medians[1] <= medians[0] * 1.3,
            "Hölder medians grew: {medians:?}"
        );
    }

    #[test]
    fn continuity_ratio_finite_and_positive() {
        let m = model(2, 4);
        let (ratio, a, b) = m.continuity_ratio_sup();
        assert!(ratio.is_finite() && ratio > 0.0);
        assert_ne!(a, b);
    }

    #[test]
    fn wilson_interval_behaves() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && 0.5 < hi);
        let (lo0, hi0) = wilson_interval(0, 1000);
        assert_eq!(lo0, 0.0);
        assert!(hi0 > 0.0 && hi0 < 0.01);
    }
}
