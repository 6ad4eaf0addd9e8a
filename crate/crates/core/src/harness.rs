//! Sweep orchestration: run the eps-sweep, fit log-log rates, monitor the
//! uniform-bound ratios, and emit CSV/JSON/SVG reports.

use crate::cell::{build_corrector_set, CorrectorSet};
use crate::config::{build_volume_data, SweepConfig};
use crate::error::{HomlabError, Result};
use crate::expansion::{build_phi, build_w, expansion_errors, PhiStrategy};
use crate::fields::{validate_coefficients, CoefficientSet};
use crate::grid::{GridFunction, Norm};
use crate::homog::HomogenizedSet;
use crate::solver::{
    solve_boundary_corrector, solve_homogenized_problem, solve_oscillating, ProblemData,
};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

pub use crate::config::SweepConfig as Config;

/// One converged row of the sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub eps: f64,
    pub l2_diff: f64,
    pub h1_w: f64,
    pub l2_w: f64,
    pub layer_energy: f64,
    pub h1_u_eps: f64,
    pub max_grad_u_eps: f64,
    pub psi_dev: f64,
    pub compat_resid: f64,
    pub wall_ms: f64,
}

/// Least-squares fit of log(error) against log(eps).
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% half-width of the slope from residual variance
    pub interval95: f64,
    /// true when fewer than 3 positive errors were available
    pub degenerate: bool,
    /// indices of excluded (nonpositive-error) points
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Slopes {
    pub l2_diff: RateFit,
    pub h1_w: RateFit,
    pub l2_w: RateFit,
}

/// Max/min ratios of the monitored norms across eps.
#[derive(Debug, Clone, Serialize)]
pub struct UniformityRatios {
    pub h1_u_eps: f64,
    pub max_grad_u_eps: f64,
    pub layer_energy: f64,
    /// ratio of psi_dev / (eps ln(1/eps + 2)), the Theorem 3.1 shape
    pub psi_dev_normalized: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub rows: Vec<SweepRow>,
    pub slopes: Option<Slopes>,
    pub ratios: UniformityRatios,
    pub hom: HomogenizedSet,
    pub partial: bool,
    pub failures: Vec<String>,
    pub config: SweepConfig,
    pub config_hash: String,
    pub cell_n: usize,
}

fn fnv_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Fit a power law err ~ C eps^slope by least squares on the logs.
pub fn fit_rate(points: &[(f64, f64)]) -> RateFit {
    let mut excluded = Vec::new();
    let mut logs = Vec::new();
    for (i, &(eps, err)) in points.iter().enumerate() {
        if err > 0.0 && eps > 0.0 {
            logs.push((eps.ln(), err.ln()));
        } else {
            excluded.push(i);
        }
    }
    let n = logs.len();
    if n < 3 {
        return RateFit {
            slope: 0.0,
            intercept: 0.0,
            interval95: 0.0,
            degenerate: true,
            excluded,
        };
    }
    let nf = n as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let (mx, my) = (sx / nf, sy / nf);
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = logs
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let interval95 = if n > 2 {
        1.96 * (ssr / (nf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    RateFit {
        slope,
        intercept,
        interval95,
        degenerate: false,
        excluded,
    }
}

fn max_min_ratio(vals: impl Iterator<Item = f64>) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= 1e-13 || !lo.is_finite() {
        1.0
    } else {
        hi / lo.max(1e-300)
    }
}

/// Sup-norm deviation of Psi from the identity matrix field.
pub fn psi_deviation(psi: &GridFunction, m: usize) -> f64 {
    let mut dev = 0.0f64;
    for alpha in 0..m {
        for gamma in 0..m {
            let delta = if alpha == gamma { 1.0 } else { 0.0 };
            for &v in psi.comp(alpha * m + gamma) {
                dev = dev.max((v - delta).abs());
            }
        }
    }
    dev
}

/// One eps row: oscillating, homogenized, and corrector solves plus the
/// expansion error norms.
pub fn run_row(
    cs: &CoefficientSet,
    correctors: &CorrectorSet,
    hom: &HomogenizedSet,
    cfg: &SweepConfig,
    eps: f64,
    verbose: bool,
) -> Result<SweepRow> {
    let n = cfg.grid_n(eps)?;
    let (m, d) = (cs.m, cs.d);
    let strategy: PhiStrategy = cfg.phi.parse()?;
    let big_f = build_volume_data(&cfg.data, d, n, m)?;
    let data = ProblemData {
        big_f: Some(big_f),
        ..Default::default()
    };
    let start = Instant::now();
    let res_eps = solve_oscillating(cs, eps, &data, n, false, cfg.solve_tol, verbose)?;
    let res_hom = solve_homogenized_problem(hom, &data, n, cfg.solve_tol, verbose)?;
    let psi = solve_boundary_corrector(cs, eps, hom, n, cfg.solve_tol, verbose)?;
    let phi = build_phi(&res_hom.u, eps, strategy)?;
    let w = build_w(&res_eps.u, &res_hom.u, &correctors.chi, &phi, eps)?;
    let errs = expansion_errors(&res_eps.u, &res_hom.u, &w, eps);
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(SweepRow {
        eps,
        l2_diff: errs.l2_diff,
        h1_w: errs.h1_w,
        l2_w: errs.l2_w,
        layer_energy: errs.layer_energy,
        h1_u_eps: res_eps.u.norm(Norm::H1),
        max_grad_u_eps: res_eps.u.norm(Norm::MaxGrad),
        psi_dev: psi_deviation(&psi.psi, m),
        compat_resid: res_eps
            .compatibility_residual
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v.abs())),
        wall_ms,
    })
}

/// Run the whole sweep: cell problems once, then one row per eps value
/// (concurrently up to `workers`), then rate fits and uniformity ratios.
pub fn run_convergence_sweep(cfg: &SweepConfig, verbose: bool) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let cs = cfg.coeff.build()?;
    let report = validate_coefficients(&cs);
    if !report.ok {
        return Err(HomlabError::CoefficientInvalid(format!(
            "validation margins: {report:?}"
        )));
    }
    let (correctors, hom) = build_corrector_set(&cs, cfg.cell_tol)?;

    let slots: Mutex<Vec<Option<std::result::Result<SweepRow, String>>>> =
        Mutex::new(vec![None; cfg.eps.len()]);
    let next: Mutex<usize> = Mutex::new(0);
    let workers = cfg.workers.min(cfg.eps.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = {
                    let mut guard = next.lock().unwrap();
                    if *guard >= cfg.eps.len() {
                        break;
                    }
                    let i = *guard;
                    *guard += 1;
                    i
                };
                let outcome = run_row(&cs, &correctors, &hom, cfg, cfg.eps[idx], verbose)
                    .map_err(|e| e.to_string());
                slots.lock().unwrap()[idx] = Some(outcome);
            });
        }
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, slot) in slots.into_inner().unwrap().into_iter().enumerate() {
        match slot {
            Some(Ok(row)) => rows.push(row),
            Some(Err(msg)) => failures.push(format!("eps = {}: {msg}", cfg.eps[i])),
            None => failures.push(format!("eps = {}: row not executed", cfg.eps[i])),
        }
    }
    let partial = !failures.is_empty();

    let slopes = if rows.len() >= 3 {
        Some(Slopes {
            l2_diff: fit_rate(&rows.iter().map(|r| (r.eps, r.l2_diff)).collect::<Vec<_>>()),
            h1_w: fit_rate(&rows.iter().map(|r| (r.eps, r.h1_w)).collect::<Vec<_>>()),
            l2_w: fit_rate(&rows.iter().map(|r| (r.eps, r.l2_w)).collect::<Vec<_>>()),
        })
    } else {
        None
    };

    let ratios = UniformityRatios {
        h1_u_eps: max_min_ratio(rows.iter().map(|r| r.h1_u_eps)),
        max_grad_u_eps: max_min_ratio(rows.iter().map(|r| r.max_grad_u_eps)),
        layer_energy: max_min_ratio(rows.iter().map(|r| r.layer_energy)),
        psi_dev_normalized: max_min_ratio(
            rows.iter()
                .map(|r| r.psi_dev / (r.eps * (1.0 / r.eps + 2.0).ln())),
        ),
    };

    let config_json = serde_json::to_string(cfg)?;
    Ok(ConvergenceReport {
        rows,
        slopes,
        ratios,
        hom,
        partial,
        failures,
        config: cfg.clone(),
        config_hash: fnv_hash(&config_json),
        cell_n: cs.n,
    })
}

pub const CSV_HEADER: &str =
    "eps,l2_diff,h1_w,l2_w,layer_energy,h1_u_eps,max_grad_u_eps,psi_dev,compat_resid,wall_ms";

/// Write the report in the requested formats; returns the written paths.
pub fn emit_report(report: &ConvergenceReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for fmt in &report.config.formats {
        let path = out_dir.join(format!("sweep.{fmt}"));
        match fmt.as_str() {
            "csv" => std::fs::write(&path, render_csv(report))?,
            "json" => std::fs::write(&path, serde_json::to_string_pretty(report)?)?,
            "svg" => std::fs::write(&path, render_svg(report))?,
            other => {
                return Err(HomlabError::InvalidConfig(format!("unknown format `{other}`")))
            }
        }
        written.push(path);
    }
    Ok(written)
}

fn render_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.3}\n",
            r.eps,
            r.l2_diff,
            r.h1_w,
            r.l2_w,
            r.layer_energy,
            r.h1_u_eps,
            r.max_grad_u_eps,
            r.psi_dev,
            r.compat_resid,
            r.wall_ms
        ));
    }
    out
}

/// Hand-rolled log-log SVG: one polyline per error series plus fitted lines.
fn render_svg(report: &ConvergenceReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 60.0;
    let series: [(&str, &str, Box<dyn Fn(&SweepRow) -> f64>); 3] = [
        ("l2_diff", "#1f77b4", Box::new(|r: &SweepRow| r.l2_diff)),
        ("h1_w", "#d62728", Box::new(|r: &SweepRow| r.h1_w)),
        ("l2_w", "#2ca02c", Box::new(|r: &SweepRow| r.l2_w)),
    ];
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for (_, _, get) in &series {
        for r in &report.rows {
            let v = get(r);
            if v > 0.0 {
                pts.push((r.eps.ln(), v.ln()));
            }
        }
    }
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if pts.is_empty() {
        svg.push_str("<text x=\"40\" y=\"40\">no positive error data</text>\n</svg>\n");
        return svg;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let (dx, dy) = ((x1 - x0).max(1e-12), (y1 - y0).max(1e-12));
    let sx = move |x: f64| PAD + (x - x0) / dx * (W - 2.0 * PAD);
    let sy = move |y: f64| H - PAD - (y - y0) / dy * (H - 2.0 * PAD);
    svg.push_str(&format!(
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">log eps</text>\n",
        W / 2.0 - 20.0,
        H - 20.0
    ));
    for (si, (name, color, get)) in series.iter().enumerate() {
        let line: Vec<String> = report
            .rows
            .iter()
            .filter(|r| get(r) > 0.0)
            .map(|r| format!("{:.2},{:.2}", sx(r.eps.ln()), sy(get(r).ln())))
            .collect();
        if line.is_empty() {
            continue;
        }
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            line.join(" ")
        ));
        // fitted dashed line across the eps range
        if let Some(slopes) = &report.slopes {
            let fit = match si {
                0 => &slopes.l2_diff,
                1 => &slopes.h1_w,
                _ => &slopes.l2_w,
            };
            if !fit.degenerate {
                let ya = fit.intercept + fit.slope * x0;
                let yb = fit.intercept + fit.slope * x1;
                svg.push_str(&format!(
                    "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-dasharray=\"4 3\" stroke-width=\"1\"/>\n",
                    sx(x0), sy(ya), sx(x1), sy(yb)
                ));
            }
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>\n",
            W - PAD + 4.0,
            PAD + 16.0 * si as f64 + 12.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Dump a grid function as CSV (coordinates then one column per component).
pub fn dump_grid_csv(path: &Path, g: &GridFunction) -> Result<()> {
    let mut out = String::new();
    let axes: Vec<String> = (0..g.d()).map(|i| format!("x{i}")).collect();
    let comps: Vec<String> = (0..g.m()).map(|c| format!("u{c}")).collect();
    out.push_str(&format!("{},{}\n", axes.join(","), comps.join(",")));
    for node in 0..g.num_nodes() {
        let x = g.node_coords(node);
        let coords: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
        let vals: Vec<String> = (0..g.m()).map(|c| format!("{:.12e}", g.comp(c)[node])).collect();
        out.push_str(&format!("{},{}\n", coords.join(","), vals.join(",")));
    }
    std::fs::write(path, out)?;
    Ok(())
}
