//! Batch front-end for the bilap laboratory.
//!
//! Exit codes: 0 success, 2 usage/validation error, 3 numeric failure
//! (non-convergence, factorization, quadrature accuracy).

mod cache;

use bilap::fullspace::{self, PatternCache, PatternSymbol, QuadratureSettings};
use bilap::green::{green_column_with, GreenDerivatives};
use bilap::lattice::{GridFunction, Idx, LatticeDomain, MAX_DIM};
use bilap::membrane::NScaleModel;
use bilap::solver::SolveOptions;
use bilap::verify::{self, RatioRow, TrialConfig};
use bilap::Error as BilapError;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "bilap", version, about = "Discrete bilaplacian laboratory")]
struct Cli {
    /// Worker threads for parallel sweeps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Compute one clamped Green column and write it as CSV.
    Green(GreenArgs),
    /// Run a verification sweep and write an EstimateReport JSON.
    Verify(VerifyArgs),
    /// Draw membrane-field samples and write them as CSV plus a summary JSON.
    Sample(SampleArgs),
}

#[derive(Args, Debug, serde::Serialize)]
struct GreenArgs {
    /// Dimension (2 or 3).
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Mesh count M (h = 1/M).
    #[arg(long = "M")]
    m: usize,
    /// Source lattice index, e.g. `8,8`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    y: Vec<i64>,
    /// Relative residual tolerance of the column solve.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Also emit derivative-magnitude columns.
    #[arg(long, default_value_t = false)]
    derivatives: bool,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Column cache directory (overrides the BILAP_CACHE_DIR environment
    /// variable).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
struct VerifyArgs {
    /// Estimate id: green-bounds, caccioppoli, inner-decay, outer-decay,
    /// corner, poincare, convergence, fullspace, continuity.
    #[arg(long)]
    id: String,
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Grid list, e.g. `8,16,32`. For `convergence` a doubling chain; for
    /// `continuity` the field sizes N.
    #[arg(long = "M", value_delimiter = ',', default_value = "8,16,32")]
    m: Vec<usize>,
    /// Trials per grid for the trial-based estimates.
    #[arg(long, default_value_t = 60)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Continuum source for `convergence`, e.g. `0.5,0.5`.
    #[arg(long, value_delimiter = ',')]
    source: Option<Vec<f64>>,
    /// Report JSON path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write every sampled ratio as flat CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Keep roughly this many CSV rows for the pair-sweep estimates.
    #[arg(long, default_value_t = 2_000_000)]
    max_csv_rows: usize,
}

#[derive(Args, Debug, serde::Serialize)]
struct SampleArgs {
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Field size N: the field lives on [−N, N]^n.
    #[arg(long = "N")]
    big_n: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Samples CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary JSON path.
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let code = match cli.cmd {
        Cmd::Green(a) => run_green(a),
        Cmd::Verify(a) => run_verify(a),
        Cmd::Sample(a) => run_sample(a),
    };
    std::process::exit(code);
}

fn fail(msg: &str, code: i32) -> i32 {
    eprintln!("error: {msg}");
    code
}

fn error_code(e: &BilapError) -> i32 {
    match e {
        BilapError::NonConvergence { .. }
        | BilapError::Numeric(_)
        | BilapError::QuadratureAccuracy { .. } => 3,
        _ => 2,
    }
}

/// Full round-trip precision (17 significant digits).
fn f17(v: f64) -> String {
    format!("{v:.16e}")
}

fn open_out(path: Option<&Path>) -> std::io::Result<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(std::io::BufWriter::new(std::io::stdout()))),
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            Ok(Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)))
        }
    }
}

fn idx_from(v: &[i64], n: usize) -> Idx {
    let mut k = [0i64; MAX_DIM];
    for d in 0..n {
        k[d] = v[d];
    }
    k
}

// ---------------------------------------------------------------------------
// green
// ---------------------------------------------------------------------------

fn run_green(a: GreenArgs) -> i32 {
    let domain = match LatticeDomain::new(a.n, a.m) {
        Ok(d) => d,
        Err(e) => return fail(&e.to_string(), 2),
    };
    if a.y.len() != a.n {
        return fail(&format!("--y needs {} comma-separated indices", a.n), 2);
    }
    let y = idx_from(&a.y, a.n);
    if !domain.contains(y) {
        return fail(
            &format!("source {:?} lies outside the lattice cube of M = {}", &a.y, a.m),
            2,
        );
    }
    // Boundary sources give the zero column by convention.
    let column = if !domain.is_interior(y) {
        GridFunction::phi_zero(domain)
    } else {
        match load_or_solve(domain, y, a.tol, cache_dir(a.cache_dir.as_deref())) {
            Ok(c) => c,
            Err(e) => return fail(&e.to_string(), error_code(&e)),
        }
    };

    let mut w = match open_out(a.out.as_deref()) {
        Ok(w) => w,
        Err(e) => return fail(&e.to_string(), 3),
    };
    let mut run = || -> std::io::Result<()> {
        let coords = ["ix", "iy", "iz"];
        let mut header: Vec<String> = coords[..a.n].iter().map(|s| s.to_string()).collect();
        header.push("value".into());
        if a.derivatives {
            for c in
                ["grad_x", "hess_x", "grad_x_grad_y", "hess_x_grad_y", "hess_x_hess_y"]
            {
                header.push(c.into());
            }
        }
        writeln!(w, "{}", header.join(","))?;
        let der = if a.derivatives {
            let source = bilap::green::CgColumns::new(
                domain,
                SolveOptions { tol: a.tol, ..Default::default() },
            );
            Some(GreenDerivatives::compute(&source, y).expect("derivative columns"))
        } else {
            None
        };
        for k in domain.lattice_points() {
            let mut fields: Vec<String> = (0..a.n).map(|d| k[d].to_string()).collect();
            fields.push(f17(column.get(k)));
            if let Some(der) = &der {
                fields.push(f17(der.grad_x_mag(k)));
                fields.push(f17(der.hess_x_mag(k)));
                fields.push(f17(der.grad_x_grad_y_mag(k)));
                fields.push(f17(der.hess_x_grad_y_mag(k)));
                fields.push(f17(der.hess_x_hess_y_mag(k)));
            }
            writeln!(w, "{}", fields.join(","))?;
        }
        w.flush()
    };
    match run() {
        Ok(()) => 0,
        Err(e) => fail(&e.to_string(), 3),
    }
}

fn cache_dir(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(PathBuf::from)
        .or_else(|| std::env::var_os("BILAP_CACHE_DIR").map(PathBuf::from))
}

fn load_or_solve(
    domain: LatticeDomain,
    y: Idx,
    tol: f64,
    dir: Option<PathBuf>,
) -> bilap::Result<GridFunction> {
    let m = domain.m() as usize;
    if let Some(dir) = &dir {
        let path = cache::column_path(dir, domain.n(), m, &y);
        if path.exists() {
            match cache::read_column(&path, domain.n(), m, &y) {
                Ok(values) => {
                    return Ok(GridFunction::phi_from_interior_values(domain, values));
                }
                Err(e) => eprintln!("warning: {e}; recomputing"),
            }
        }
    }
    let col = green_column_with(domain, y, SolveOptions { tol, ..Default::default() })?.values;
    if let Some(dir) = &dir {
        let path = cache::column_path(dir, domain.n(), m, &y);
        if let Err(e) = cache::write_column(&path, domain.n(), m, &y, col.values()) {
            eprintln!("warning: cache write failed: {e}");
        }
    }
    Ok(col)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

const VERIFY_IDS: [&str; 9] = [
    "green-bounds",
    "caccioppoli",
    "inner-decay",
    "outer-decay",
    "corner",
    "poincare",
    "convergence",
    "fullspace",
    "continuity",
];

fn run_verify(a: VerifyArgs) -> i32 {
    if !VERIFY_IDS.contains(&a.id.as_str()) {
        return fail(
            &format!("unknown estimate id `{}`; valid ids: {}", a.id, VERIFY_IDS.join(", ")),
            2,
        );
    }
    if a.m.is_empty() {
        return fail("--M needs at least one grid", 2);
    }
    let cfg = TrialConfig { trials: a.trials, seed: a.seed, collect_rows: a.csv.is_some() };
    let config_echo = json!({
        "id": a.id,
        "n": a.n,
        "M": a.m,
        "trials": a.trials,
        "seed": a.seed,
        "source": a.source,
        "csv": a.csv.as_ref().map(|p| p.display().to_string()),
        "max_csv_rows": a.max_csv_rows,
    });
    let result: bilap::Result<(serde_json::Value, Vec<RatioRow>)> = (|| {
        match a.id.as_str() {
            "green-bounds" => {
                let stride = if a.csv.is_some() {
                    let pairs: usize = a
                        .m
                        .iter()
                        .map(|&m| (m + 1).pow(a.n as u32) * (m - 1).pow(a.n as u32) * 6)
                        .sum();
                    Some((pairs / a.max_csv_rows.max(1)).max(1))
                } else {
                    None
                };
                let out = verify::verify_green_bounds(a.n, &a.m, stride)?;
                Ok((json!({ "reports": out.reports }), out.rows))
            }
            "caccioppoli" => {
                let (rep, rows) = verify::verify_caccioppoli(a.n, &a.m, cfg)?;
                Ok((json!({ "reports": [rep] }), rows))
            }
            "inner-decay" => {
                let (rep, rows) = verify::verify_inner_decay(a.n, &a.m, cfg)?;
                Ok((json!({ "reports": [rep] }), rows))
            }
            "outer-decay" => {
                let (reps, rows) = verify::verify_outer_decay(a.n, &a.m, cfg)?;
                Ok((json!({ "reports": [reps.annulus, reps.pointwise] }), rows))
            }
            "poincare" => {
                let (reps, rows) = verify::verify_poincare_sobolev(a.n, &a.m, cfg)?;
                Ok((json!({ "reports": reps }), rows))
            }
            "corner" => {
                if a.n != 2 {
                    return Err(BilapError::Parameter(
                        "the corner fit is a two-dimensional estimate".into(),
                    ));
                }
                let fits = verify::fit_corner_exponent(&a.m)?;
                let rows = fits
                    .iter()
                    .flat_map(|f| {
                        f.points.iter().map(move |&(lx, lg)| RatioRow {
                            estimate_id: "corner",
                            m: f.m,
                            x: [0; MAX_DIM],
                            y: f.source,
                            quantity: lg,
                            bound: lx,
                            ratio: lg / lx,
                        })
                    })
                    .collect();
                Ok((json!({ "fits": fits }), rows))
            }
            "convergence" => {
                for w in a.m.windows(2) {
                    if w[1] != 2 * w[0] {
                        return Err(BilapError::Parameter(format!(
                            "convergence needs a doubling chain of grids, got {:?}",
                            a.m
                        )));
                    }
                }
                if a.m.len() < 3 {
                    return Err(BilapError::Parameter(
                        "convergence needs at least three grids for one ratio".into(),
                    ));
                }
                let src = a.source.clone().unwrap_or_else(|| vec![0.5; a.n]);
                if src.len() != a.n {
                    return Err(BilapError::Parameter(format!(
                        "--source needs {} coordinates",
                        a.n
                    )));
                }
                let mut y = [0.0; MAX_DIM];
                for d in 0..a.n {
                    y[d] = src[d];
                }
                let table = verify::verify_convergence(a.n, y, a.m[0], a.m.len() - 1)?;
                Ok((json!({ "refinement": table }), Vec::new()))
            }
            "fullspace" => run_fullspace_checks(a.n, &a.m),
            "continuity" => {
                let rep = verify::verify_continuity(a.n, &a.m)?;
                Ok((json!({ "reports": [rep] }), Vec::new()))
            }
            _ => unreachable!(),
        }
    })();
    let (payload, rows) = match result {
        Ok(v) => v,
        Err(e) => return fail(&e.to_string(), error_code(&e)),
    };
    let doc = json!({ "config": config_echo, "result": payload });
    let mut w = match open_out(a.out.as_deref()) {
        Ok(w) => w,
        Err(e) => return fail(&e.to_string(), 3),
    };
    if let Err(e) = writeln!(w, "{}", serde_json::to_string_pretty(&doc).unwrap())
        .and_then(|_| w.flush())
    {
        return fail(&e.to_string(), 3);
    }
    if let Some(csv_path) = &a.csv {
        let mut cw = match open_out(Some(csv_path)) {
            Ok(w) => w,
            Err(e) => return fail(&e.to_string(), 3),
        };
        let mut write_rows = || -> std::io::Result<()> {
            writeln!(cw, "estimate,m,xi,xj,xk,yi,yj,yk,quantity,bound,ratio")?;
            for r in &rows {
                writeln!(
                    cw,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    r.estimate_id,
                    r.m,
                    r.x[0],
                    r.x[1],
                    r.x[2],
                    r.y[0],
                    r.y[1],
                    r.y[2],
                    f17(r.quantity),
                    f17(r.bound),
                    f17(r.ratio)
                )?;
            }
            cw.flush()
        };
        if let Err(e) = write_rows() {
            return fail(&e.to_string(), 3);
        }
    }
    0
}

/// Full-space validation: orthogonality of the oracle under the full symbol,
/// oracle-vs-expansion agreement, normalization-shift invariance, and
/// stability of the mixed-derivative bounds across mesh refinements.
fn run_fullspace_checks(
    n: usize,
    m_list: &[usize],
) -> bilap::Result<(serde_json::Value, Vec<RatioRow>)> {
    let settings = QuadratureSettings::default();
    let mut delta = Vec::new();
    for z in [[0i64, 0, 0], [2, 1, 0], [4, 0, 1]] {
        let z = if n == 2 { [z[0], z[1], 0] } else { z };
        let v = fullspace::fourth_difference_oracle(n, z, &PatternSymbol::Bilaplacian, &settings)?;
        delta.push(json!({ "z": &z[..n], "value": v }));
    }
    let points: Vec<Idx> = if n == 2 {
        vec![[20, 0, 0], [28, 0, 0], [0, 36, 0]]
    } else {
        vec![[16, 12, 0], [24, 12, 8], [20, 15, 6]]
    };
    let mut agreement = Vec::new();
    for z in points {
        let sym = if n == 2 && z[0] == 0 {
            PatternSymbol::fourth_axis(1)
        } else {
            PatternSymbol::fourth_axis(0)
        };
        let expansion = fullspace::expansion_pattern_value(n, &sym, z)?;
        let tuned = QuadratureSettings {
            abs_tol: (1e-3 * expansion.abs()).max(1e-12),
            ..settings
        };
        let oracle = fullspace::fourth_difference_oracle(n, z, &sym, &tuned)?;
        agreement.push(json!({
            "z": &z[..n],
            "oracle": oracle,
            "expansion": expansion,
            "rel_err": (oracle - expansion).abs() / oracle.abs(),
        }));
    }
    let mut shift_invariance = serde_json::Value::Null;
    if n == 2 {
        let h = 1.0 / 32.0;
        let g1 = fullspace::AsymptoticGreen::new(2, h, 0.25)?;
        let g2 = fullspace::AsymptoticGreen::new(2, h, 0.5)?;
        let stencil = PatternSymbol::fourth_axis(0).stencil(2);
        let base = [12i64, 5, 0];
        let mut a = 0.0;
        let mut b = 0.0;
        let mut scale = 0.0f64;
        for (o, c) in &stencil {
            let x = [base[0] + o[0], base[1] + o[1], 0];
            let va = g1.value(x, [0, 0, 0])?;
            a += c * va;
            b += c * g2.value(x, [0, 0, 0])?;
            scale = scale.max(va.abs());
        }
        shift_invariance = json!({ "difference": (a - b).abs(), "scale": scale });
    }
    let cache = PatternCache::new(settings);
    let h_list: Vec<f64> = m_list.iter().map(|&m| 1.0 / m as f64).collect();
    let reports = verify::verify_fullspace_estimates(n, &h_list, &cache)?;
    Ok((
        json!({
            "delta_reproduction": delta,
            "oracle_vs_expansion": agreement,
            "shift_invariance": shift_invariance,
            "reports": reports,
        }),
        Vec::new(),
    ))
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

fn run_sample(a: SampleArgs) -> i32 {
    let model = match NScaleModel::new(a.n, a.big_n) {
        Ok(m) => m,
        Err(e) => return fail(&e.to_string(), error_code(&e)),
    };
    let sampler = match model.sampler(a.seed) {
        Ok(s) => s,
        Err(e) => return fail(&e.to_string(), error_code(&e)),
    };
    let domain = model.domain();
    let factor = model.unit_field_factor();
    let shift = a.big_n as i64 + 1;
    let interior: Vec<Idx> = domain.interior_points().collect();

    let mut w = match open_out(a.out.as_deref()) {
        Ok(w) => w,
        Err(e) => return fail(&e.to_string(), 3),
    };
    let mut sums = vec![0.0f64; interior.len()];
    let mut sq_sums = vec![0.0f64; interior.len()];
    let mut positive = 0usize;
    let mut run = || -> std::io::Result<(Vec<f64>, Vec<f64>, usize)> {
        let coords = ["ix", "iy", "iz"];
        writeln!(w, "sample,{},value", coords[..a.n].join(","))?;
        for s in 0..a.samples as u64 {
            let values = sampler.sample_values(s);
            let mut all_nonneg = true;
            for (i, k) in interior.iter().enumerate() {
                let v = values[i] * factor;
                sums[i] += v;
                sq_sums[i] += v * v;
                all_nonneg &= v >= 0.0;
                let mut fields: Vec<String> =
                    (0..a.n).map(|d| (k[d] - shift).to_string()).collect();
                fields.insert(0, s.to_string());
                fields.push(f17(v));
                writeln!(w, "{}", fields.join(","))?;
            }
            positive += usize::from(all_nonneg);
        }
        w.flush()?;
        Ok((sums.clone(), sq_sums.clone(), positive))
    };
    let (sums, sq_sums, positive) = match run() {
        Ok(v) => v,
        Err(e) => return fail(&e.to_string(), 3),
    };
    let ns = a.samples as f64;
    let mut max_rel = 0.0f64;
    let variances: Vec<serde_json::Value> = interior
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let mean = sums[i] / ns;
            let var = sq_sums[i] / ns - mean * mean;
            let unit: Vec<i64> = (0..a.n).map(|d| k[d] - shift).collect();
            let exact = model.green_n(idx_from(&unit, a.n), idx_from(&unit, a.n));
            let rel = if exact > 0.0 { (var - exact).abs() / exact } else { 0.0 };
            max_rel = max_rel.max(rel);
            json!({ "x": unit, "empirical": var, "exact": exact, "rel_err": rel })
        })
        .collect();
    let summary = json!({
        "config": {
            "n": a.n, "N": a.big_n, "samples": a.samples, "seed": a.seed,
            "out": a.out.as_ref().map(|p| p.display().to_string()),
        },
        "positivity_fraction": positive as f64 / ns,
        "max_variance_rel_err": max_rel,
        "variances": variances,
    });
    match a.summary {
        Some(path) => match open_out(Some(&path)) {
            Ok(mut sw) => {
                if let Err(e) = writeln!(sw, "{}", serde_json::to_string_pretty(&summary).unwrap())
                    .and_then(|_| sw.flush())
                {
                    return fail(&e.to_string(), 3);
                }
                0
            }
            Err(e) => fail(&e.to_string(), 3),
        },
        None => {
            eprintln!("{}", serde_json::to_string_pretty(&summary).unwrap());
            0
        }
    }
}
