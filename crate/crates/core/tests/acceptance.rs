//! Acceptance gate: one pass/fail line per criterion, nonzero exit on failure.
//!
//! Criteria 6-9 share a single smooth2d sweep (the expensive part); everything
//! else runs its own small problem.

use homlab_core::cell::{build_corrector_set, flux_divergence_residual};
use homlab_core::expansion::{build_phi, build_w, expansion_errors, PhiStrategy};
use homlab_core::fields::{build_preset, CoefficientSet, Preset};
use homlab_core::grid::{GridFunction, Norm};
use homlab_core::harness::fit_rate;
use homlab_core::homog::{oracle_1d_homogenize, HomogenizedSet};
use homlab_core::smoothing::{smooth_seps, smooth_steklov};
use homlab_core::solver::{
    solve_boundary_corrector, solve_homogenized_problem, solve_oscillating, ProblemData,
};
use std::f64::consts::PI;
use std::time::Instant;

struct Gate {
    failures: usize,
}

impl Gate {
    fn report(&mut self, idx: usize, name: &str, outcome: Result<String, String>) {
        match outcome {
            Ok(detail) => println!("criterion {idx:2} {name}: PASS ({detail})"),
            Err(detail) => {
                self.failures += 1;
                println!("criterion {idx:2} {name}: FAIL ({detail})");
            }
        }
    }
}

fn check(cond: bool, detail: String) -> Result<String, String> {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn one_plus_cos(d: usize, n: usize) -> ProblemData {
    ProblemData {
        big_f: Some(GridFunction::from_fn(d, n, 1, |_, x| {
            1.0 + (2.0 * PI * x[0]).cos()
        })),
        ..Default::default()
    }
}

fn max_min_ratio(vals: &[f64]) -> f64 {
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(0.0f64, f64::max);
    hi / lo
}

// 1: 1D homogenized-coefficient oracle against the closed forms.
fn criterion_1() -> Result<String, String> {
    let start = Instant::now();
    let cs = build_preset(Preset::Scalar1d, &[2.0, 1.0], 1, 1, 64, 1.0).map_err(|e| e.to_string())?;
    let hom = oracle_1d_homogenize(&cs).map_err(|e| e.to_string())?;
    let a_err = (hom.a_hat(0, 0, 0, 0) - 3f64.sqrt()).abs();
    let cs_v =
        build_preset(Preset::Scalar1d, &[2.0, 1.0, 1.0, 0.0, 0.0], 1, 1, 64, 1.0).map_err(|e| e.to_string())?;
    let hom_v = oracle_1d_homogenize(&cs_v).map_err(|e| e.to_string())?;
    let v_err = (hom_v.v_hat(0, 0, 0) - (3f64.sqrt() - 2.0)).abs();
    let secs = start.elapsed().as_secs_f64();
    check(
        a_err <= 1e-8 && v_err <= 1e-8 && secs < 1.0,
        format!("|A-sqrt3| = {a_err:.2e}, |V-(sqrt3-2)| = {v_err:.2e}, {secs:.2}s"),
    )
}

// 2: layered 2D effective tensor diag(harmonic, arithmetic).
fn criterion_2() -> Result<String, String> {
    let start = Instant::now();
    let cs = build_preset(Preset::Layered, &[2.0, 1.0], 1, 2, 64, 1.0).map_err(|e| e.to_string())?;
    let (_, hom) = build_corrector_set(&cs, 1e-11).map_err(|e| e.to_string())?;
    let mut err = 0.0f64;
    let target = [[3f64.sqrt(), 0.0], [0.0, 2.0]];
    for i in 0..2 {
        for j in 0..2 {
            err = err.max((hom.a_hat(0, 0, i, j) - target[i][j]).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        err <= 1e-6 && secs < 5.0,
        format!("max entry error {err:.2e}, {secs:.2}s"),
    )
}

// 3: structural identities of the corrector machinery for every preset.
fn criterion_3() -> Result<String, String> {
    let presets: Vec<(&str, CoefficientSet)> = vec![
        (
            "identity",
            build_preset(Preset::Identity, &[], 1, 2, 32, 1.0).map_err(|e| e.to_string())?,
        ),
        (
            "scalar1d",
            build_preset(Preset::Scalar1d, &[2.0, 1.0, 1.0, 0.5, 0.5], 1, 1, 64, 1.0)
                .map_err(|e| e.to_string())?,
        ),
        (
            "layered",
            build_preset(Preset::Layered, &[2.0, 1.0], 1, 2, 64, 1.0).map_err(|e| e.to_string())?,
        ),
        (
            "smooth2d",
            build_preset(Preset::Smooth2d, &[2.0, 1.0], 1, 2, 64, 1.0).map_err(|e| e.to_string())?,
        ),
    ];
    let mut detail = Vec::new();
    for (name, cs) in &presets {
        let (set, _) = build_corrector_set(cs, 1e-11).map_err(|e| format!("{name}: {e}"))?;
        let mut chi_mean = 0.0f64;
        for field in &set.chi {
            for comp in 0..field.num_comps() {
                chi_mean = chi_mean.max(field.mean(comp).abs());
            }
        }
        if chi_mean > 1e-12 {
            return Err(format!("{name}: corrector mean {chi_mean:.2e}"));
        }
        let resid = set.residual_norms.iter().cloned().fold(0.0f64, f64::max);
        if resid > 1e-9 {
            return Err(format!("{name}: cell residual {resid:.2e}"));
        }
        let kmax = set.b[0].len();
        let mut b_mean = 0.0f64;
        let mut b_sup_k = vec![0.0f64; kmax];
        for per_k in &set.b {
            for (k, field) in per_k.iter().enumerate() {
                for comp in 0..field.num_comps() {
                    b_mean = b_mean.max(field.mean(comp).abs());
                    for &v in field.nodal(comp) {
                        b_sup_k[k] = b_sup_k[k].max(v.abs());
                    }
                }
            }
        }
        if b_mean > 1e-10 {
            return Err(format!("{name}: flux mean {b_mean:.2e}"));
        }
        // div b and div E - b are relative measures; a flux that vanishes
        // identically satisfies them trivially (the ratio is pure round-off)
        let div = flux_divergence_residual(&set.b);
        let mut any_flux = false;
        for k in 0..kmax {
            if b_sup_k[k] <= 1e-8 {
                continue;
            }
            any_flux = true;
            if div[k] > 1e-8 {
                return Err(format!("{name}: div b defect {:.2e} at k = {k}", div[k]));
            }
        }
        if any_flux && set.e_divergence_defect > 1e-8 {
            return Err(format!(
                "{name}: div E - b defect {:.2e}",
                set.e_divergence_defect
            ));
        }
        let d = cs.d;
        for k in 0..set.e[0][0].len() {
            for j in 0..d {
                for i in 0..d {
                    let ejik = &set.e[j][i][k];
                    let eijk = &set.e[i][j][k];
                    for comp in 0..ejik.num_comps() {
                        for (x, y) in ejik.nodal(comp).iter().zip(eijk.nodal(comp).iter()) {
                            if *x != -*y {
                                return Err(format!("{name}: E not exactly antisymmetric"));
                            }
                        }
                    }
                }
            }
        }
        detail.push(format!("{name} ok"));
    }
    Ok(detail.join(", "))
}

// 4: manufactured constant-coefficient Neumann solve, L2 order >= 1.9.
fn criterion_4() -> Result<String, String> {
    let start = Instant::now();
    let hom = HomogenizedSet {
        m: 1,
        d: 2,
        a: vec![1.0, 0.0, 0.0, 1.0],
        v: vec![0.0; 2],
        b: vec![0.0; 2],
        c: vec![0.0],
        lambda: 1.0,
    };
    let factor = 2.0 * PI * PI + 1.0;
    let mut points = Vec::new();
    for &n in &[32usize, 64, 128, 256] {
        let exact = GridFunction::from_fn(2, n, 1, |_, x| (PI * x[0]).cos() * (PI * x[1]).cos());
        let data = ProblemData {
            big_f: Some(GridFunction::from_fn(2, n, 1, |_, x| {
                factor * (PI * x[0]).cos() * (PI * x[1]).cos()
            })),
            ..Default::default()
        };
        let res = solve_homogenized_problem(&hom, &data, n, 1e-12, false).map_err(|e| e.to_string())?;
        points.push((1.0 / n as f64, res.u.sub(&exact).norm(Norm::L2)));
    }
    let fit = fit_rate(&points);
    let secs = start.elapsed().as_secs_f64();
    check(
        fit.slope >= 1.9 && secs < 120.0,
        format!("L2 order {:.3}, {secs:.1}s", fit.slope),
    )
}

// 5: Theorem 1.3(i) 1D rate: l2_diff slope >= 0.95.
fn criterion_5() -> Result<String, String> {
    let start = Instant::now();
    let cs = build_preset(Preset::Scalar1d, &[2.0, 1.0], 1, 1, 64, 1.0).map_err(|e| e.to_string())?;
    let (correctors, hom) = build_corrector_set(&cs, 1e-10).map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    for &eps in &[0.125f64, 0.0625, 0.03125, 0.015625] {
        let n = (32.0 / eps).round() as usize;
        let data = one_plus_cos(1, n);
        let u_eps = solve_oscillating(&cs, eps, &data, n, false, 1e-11, false)
            .map_err(|e| e.to_string())?
            .u;
        let u0 = solve_homogenized_problem(&hom, &data, n, 1e-11, false)
            .map_err(|e| e.to_string())?
            .u;
        let _ = &correctors;
        points.push((eps, u_eps.sub(&u0).norm(Norm::L2)));
    }
    let fit = fit_rate(&points);
    let secs = start.elapsed().as_secs_f64();
    check(
        fit.slope >= 0.95 && secs < 60.0,
        format!("l2_diff slope {:.3}, {secs:.1}s", fit.slope),
    )
}

struct Sweep2d {
    eps: Vec<f64>,
    l2_diff: Vec<f64>,
    h1_w_single: Vec<f64>,
    h1_w_double: Vec<f64>,
    layer: Vec<f64>,
    h1: Vec<f64>,
    max_grad: Vec<f64>,
    secs: f64,
}

// The shared smooth2d sweep behind criteria 6-9.
fn run_sweep_2d() -> Result<Sweep2d, String> {
    let start = Instant::now();
    let cs = build_preset(Preset::Smooth2d, &[2.0, 1.0], 1, 2, 64, 1.0).map_err(|e| e.to_string())?;
    let (correctors, hom) = build_corrector_set(&cs, 1e-9).map_err(|e| e.to_string())?;
    let mut out = Sweep2d {
        eps: vec![0.125, 0.0625, 0.03125],
        l2_diff: vec![],
        h1_w_single: vec![],
        h1_w_double: vec![],
        layer: vec![],
        h1: vec![],
        max_grad: vec![],
        secs: 0.0,
    };
    for &eps in &out.eps.clone() {
        let n = (32.0 / eps).round() as usize;
        let data = one_plus_cos(2, n);
        let u_eps = solve_oscillating(&cs, eps, &data, n, false, 1e-10, false)
            .map_err(|e| format!("eps = {eps}: {e}"))?
            .u;
        let u0 = solve_homogenized_problem(&hom, &data, n, 1e-10, false)
            .map_err(|e| format!("eps = {eps}: {e}"))?
            .u;
        out.l2_diff.push(u_eps.sub(&u0).norm(Norm::L2));
        for (strategy, dst) in [
            (PhiStrategy::SingleSmooth, &mut out.h1_w_single),
            (PhiStrategy::DoubleSmooth, &mut out.h1_w_double),
        ] {
            let phi = build_phi(&u0, eps, strategy).map_err(|e| e.to_string())?;
            let w = build_w(&u_eps, &u0, &correctors.chi, &phi, eps).map_err(|e| e.to_string())?;
            let errs = expansion_errors(&u_eps, &u0, &w, eps);
            dst.push(errs.h1_w);
        }
        out.layer.push(u_eps.layer_norm(eps, true) / eps.sqrt());
        out.h1.push(u_eps.norm(Norm::H1));
        out.max_grad.push(u_eps.norm(Norm::MaxGrad));
    }
    out.secs = start.elapsed().as_secs_f64();
    Ok(out)
}

fn criterion_6(sweep: &Sweep2d) -> Result<String, String> {
    let points: Vec<_> = sweep.eps.iter().cloned().zip(sweep.l2_diff.iter().cloned()).collect();
    let fit = fit_rate(&points);
    check(
        fit.slope >= 0.85 && sweep.secs < 900.0,
        format!("l2_diff slope {:.3}, sweep {:.0}s", fit.slope, sweep.secs),
    )
}

fn criterion_7(sweep: &Sweep2d) -> Result<String, String> {
    let single = fit_rate(
        &sweep.eps.iter().cloned().zip(sweep.h1_w_single.iter().cloned()).collect::<Vec<_>>(),
    );
    let double = fit_rate(
        &sweep.eps.iter().cloned().zip(sweep.h1_w_double.iter().cloned()).collect::<Vec<_>>(),
    );
    check(
        single.slope >= 0.4 && double.slope >= 0.4,
        format!(
            "h1_w slopes: single {:.3}, double {:.3}",
            single.slope, double.slope
        ),
    )
}

fn criterion_8(sweep: &Sweep2d) -> Result<String, String> {
    let ratio = max_min_ratio(&sweep.layer);
    check(ratio <= 3.0, format!("layer-energy max/min ratio {ratio:.3}"))
}

fn criterion_9(sweep: &Sweep2d) -> Result<String, String> {
    let h1 = max_min_ratio(&sweep.h1);
    let mg = max_min_ratio(&sweep.max_grad);
    check(
        h1 <= 2.0 && mg <= 3.0,
        format!("H1 ratio {h1:.3}, max_grad ratio {mg:.3}"),
    )
}

// 10: boundary corrector sup-norm follows the eps ln(1/eps) shape.
fn criterion_10() -> Result<String, String> {
    let cs = build_preset(Preset::Scalar1d, &[2.0, 1.0, 1.0, 0.0, 0.0], 1, 1, 64, 1.0)
        .map_err(|e| e.to_string())?;
    let (_, hom) = build_corrector_set(&cs, 1e-10).map_err(|e| e.to_string())?;
    let mut normalized = Vec::new();
    for &eps in &[0.125f64, 0.0625, 0.03125] {
        let n = (32.0 / eps).round() as usize;
        let sol = solve_boundary_corrector(&cs, eps, &hom, n, 1e-11, false).map_err(|e| e.to_string())?;
        let dev = sol
            .psi
            .comp(0)
            .iter()
            .fold(0.0f64, |acc, &v| acc.max((v - 1.0).abs()));
        normalized.push(dev / (eps * (1.0 / eps + 2.0).ln()));
    }
    let ratio = max_min_ratio(&normalized);
    check(ratio <= 3.0, format!("normalized psi-dev ratio {ratio:.3}"))
}

// 11: smoothing-operator properties (Lemma 6.2 shape, exactness).
fn criterion_11() -> Result<String, String> {
    let n = 128;
    let modes = [(1i32, 0i32), (0, 1), (1, 1), (2, 1), (2, 2), (3, 2), (4, 0), (4, 4)];
    let mut worst = 0.0f64;
    for &eps in &[0.125, 0.0625] {
        for &(k, l) in &modes {
            for phase in [0.0, 0.25] {
                let f = GridFunction::from_fn(2, n, 1, |_, x| {
                    (2.0 * PI * (k as f64 * x[0] + l as f64 * x[1]) + phase * PI).sin()
                });
                let s = smooth_seps(&f, eps).map_err(|e| e.to_string())?;
                let err = s.sub(&f).norm(Norm::L2);
                let l2 = f.norm(Norm::L2);
                let grad = (f.norm(Norm::H1).powi(2) - l2 * l2).sqrt();
                let margin = err / (eps * grad);
                worst = worst.max(margin);
                if margin > 1.0 {
                    return Err(format!("mode ({k},{l}) eps = {eps}: err/bound = {margin:.3}"));
                }
            }
        }
    }
    // exactness on constants and interior linears, both smoothers
    let eps = 1.0 / 16.0;
    let cnst = GridFunction::from_fn(2, n, 1, |_, _| 2.5);
    let lin = GridFunction::from_fn(2, n, 1, |_, x| 0.3 * x[0] + 0.7 * x[1]);
    for (label, smoothed, reference) in [
        ("seps const", smooth_seps(&cnst, eps), &cnst),
        ("seps linear", smooth_seps(&lin, eps), &lin),
        ("steklov const", smooth_steklov(&cnst, eps), &cnst),
        ("steklov linear", smooth_steklov(&lin, eps), &lin),
    ] {
        let s = smoothed.map_err(|e| e.to_string())?;
        let np = n + 1;
        for i0 in 0..np {
            for i1 in 0..np {
                let x = [i0 as f64 / n as f64, i1 as f64 / n as f64];
                if GridFunction::boundary_distance(&x) < eps / 2.0 + 1e-12 {
                    continue;
                }
                let node = i0 * np + i1;
                if (s.comp(0)[node] - reference.comp(0)[node]).abs() > 1e-12 {
                    return Err(format!("{label} not exact in the interior"));
                }
            }
        }
    }
    Ok(format!("max err / (eps |grad f|) = {worst:.3}, exactness ok"))
}

// 12: Green-identity duality through the adjoint solve.
fn criterion_12() -> Result<String, String> {
    use rand::{Rng, SeedableRng};
    // nonsymmetric lower-order terms; lambda above the coercivity threshold
    let cs = build_preset(Preset::Scalar1d, &[2.0, 1.0, 1.0, 0.5, 0.25], 1, 1, 64, 8.0)
        .map_err(|e| e.to_string())?;
    let n = 256;
    let eps = 0.125;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut randf = || {
        let mut g = GridFunction::zeros(1, n, 1);
        for v in g.comp_mut(0) {
            *v = rng.gen_range(-1.0..1.0);
        }
        g
    };
    let ff = randf();
    let hh = randf();
    let u = solve_oscillating(
        &cs,
        eps,
        &ProblemData { big_f: Some(ff.clone()), ..Default::default() },
        n,
        false,
        1e-13,
        false,
    )
    .map_err(|e| e.to_string())?
    .u;
    let v = solve_oscillating(
        &cs,
        eps,
        &ProblemData { big_f: Some(hh.clone()), ..Default::default() },
        n,
        true,
        1e-13,
        false,
    )
    .map_err(|e| e.to_string())?
    .u;
    let pair = |a: &GridFunction, b: &GridFunction| {
        let mut joint = GridFunction::zeros(1, n, 2);
        joint.comp_mut(0).copy_from_slice(a.comp(0));
        joint.comp_mut(1).copy_from_slice(b.comp(0));
        joint.integrate(|p| p[0] * p[1])
    };
    let gap = (pair(&u, &hh) - pair(&ff, &v)).abs();
    let scale = ff.norm(Norm::L2) * hh.norm(Norm::L2);
    check(
        gap <= 1e-8 * scale,
        format!("duality gap {:.2e} vs bound {:.2e}", gap, 1e-8 * scale),
    )
}

fn main() {
    let mut gate = Gate { failures: 0 };
    gate.report(1, "1d homogenization oracle", criterion_1());
    gate.report(2, "layered effective tensor", criterion_2());
    gate.report(3, "structural identities", criterion_3());
    gate.report(4, "manufactured neumann order", criterion_4());
    gate.report(5, "theorem 1.3(i) rate 1d", criterion_5());
    match run_sweep_2d() {
        Ok(sweep) => {
            gate.report(6, "theorem 1.3(i) rate 2d", criterion_6(&sweep));
            gate.report(7, "lemma 4.5/4.2 h1 rate", criterion_7(&sweep));
            gate.report(8, "theorem 4.1 layer bound", criterion_8(&sweep));
            gate.report(9, "uniform h1/lipschitz bounds", criterion_9(&sweep));
        }
        Err(msg) => {
            for (idx, name) in [
                (6, "theorem 1.3(i) rate 2d"),
                (7, "lemma 4.5/4.2 h1 rate"),
                (8, "theorem 4.1 layer bound"),
                (9, "uniform h1/lipschitz bounds"),
            ] {
                gate.report(idx, name, Err(format!("2d sweep failed: {msg}")));
            }
        }
    }
    gate.report(10, "theorem 3.1 psi bound", criterion_10());
    gate.report(11, "smoothing operator properties", criterion_11());
    gate.report(12, "adjoint duality", criterion_12());
    if gate.failures > 0 {
        eprintln!("{} acceptance criteria failed", gate.failures);
        std::process::exit(1);
    }
}
