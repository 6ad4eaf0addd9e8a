//! Q1 finite-element Neumann solver on the unit box for the oscillating
//! operator, the homogenized operator, and the boundary corrector.
//!
//! The stiffness matrix is assembled with 2^d-point Gauss quadrature per
//! cell; oscillating coefficients are sampled at x/eps by trigonometric
//! interpolation on a deduplicated tensor grid, so resonant meshes
//! (n * eps integer) touch only O(n * eps) distinct values per axis.
//! Krylov iterations are preconditioned by the exact constant-coefficient
//! Neumann operator, inverted through even extension and FFT diagonalization.

use crate::error::{HomlabError, Result};
use crate::fft;
use crate::fields::{probe_directions, CoefficientSet, PeriodicField};
use crate::grid::GridFunction;
use crate::homog::HomogenizedSet;
use crate::sparse::{bicgstab, pcg, Csr, KrylovResult};

pub const DEFAULT_SOLVE_TOL: f64 = 1e-10;
pub const SOLVE_ITERATION_CAP: usize = 10_000;

/// Minimum number of grid cells per oscillation period.
pub const MIN_CELLS_PER_EPS: f64 = 16.0;

/// Right-hand side data (f, F, g) of the Neumann problem.
#[derive(Debug, Clone, Default)]
pub struct ProblemData {
    /// Flux data f_i^alpha entering as -int f . grad(phi); component alpha*d+i.
    pub f: Option<GridFunction>,
    /// Volume data F^alpha entering as int F phi; m components.
    pub big_f: Option<GridFunction>,
    /// Boundary data g^alpha entering as the surface integral; m components
    /// (only boundary node values are read).
    pub g: Option<GridFunction>,
}

/// Outcome of a domain solve.
#[derive(Debug)]
pub struct SolveResult {
    pub u: GridFunction,
    pub iterations: usize,
    pub relative_residual: f64,
    /// Weak-form defect against phi = 1, one value per component.
    pub compatibility_residual: Vec<f64>,
}

/// Boundary corrector solve: Psi columns with mean(Psi - I) = 0.
#[derive(Debug)]
pub struct CorrectorSolve {
    /// Component alpha * m + gamma holds Psi^{alpha gamma}.
    pub psi: GridFunction,
    pub iterations: usize,
    pub relative_residual: f64,
    /// Max over components of the discrete compatibility defect.
    pub compatibility_defect: f64,
}

const GAUSS: [f64; 2] = [0.5 - 0.5 / 1.7320508075688772, 0.5 + 0.5 / 1.7320508075688772];

/// Coefficient values tabulated at the Gauss points of every cell, stored on
/// the deduplicated tensor grid of fractional coordinates.
struct GaussTables {
    d: usize,
    /// unique coordinate counts per axis
    u: [usize; 2],
    /// map[axis][cell * 2 + gauss] -> unique index
    map: [Vec<usize>; 2],
    a: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

impl GaussTables {
    #[inline]
    fn at(&self, table: &[f64], q0: usize, q1: usize) -> f64 {
        match self.d {
            1 => table[self.map[0][q0]],
            _ => table[self.map[0][q0] * self.u[1] + self.map[1][q1]],
        }
    }
}

fn dedup_coords(coords: &[f64]) -> (Vec<f64>, Vec<usize>) {
    use std::collections::BTreeMap;
    let mut seen: BTreeMap<i64, usize> = BTreeMap::new();
    let mut unique = Vec::new();
    let mut map = Vec::with_capacity(coords.len());
    for &c in coords {
        let y = c.rem_euclid(1.0);
        let key = (y * 1e12).round() as i64;
        let idx = *seen.entry(key).or_insert_with(|| {
            unique.push(y);
            unique.len() - 1
        });
        map.push(idx);
    }
    (unique, map)
}

fn eval_field(field: &PeriodicField, d: usize, ux: &[f64], uy: &[f64]) -> Vec<Vec<f64>> {
    (0..field.num_comps())
        .map(|c| match d {
            1 => field.eval_lattice(c, &[ux.to_vec()]),
            _ => field.eval_lattice(c, &[ux.to_vec(), uy.to_vec()]),
        })
        .collect()
}

/// Tabulate A, V, B, c at x_gauss / eps for every cell of the n-grid.
fn oscillating_tables(cs: &CoefficientSet, eps: f64, n: usize) -> GaussTables {
    let h = 1.0 / n as f64;
    let coords: Vec<f64> = (0..n)
        .flat_map(|c| GAUSS.iter().map(move |&g| (c as f64 + g) * h / eps))
        .collect();
    let (ux, map_x) = dedup_coords(&coords);
    let (uy, map_y) = if cs.d == 2 {
        let (u, m) = dedup_coords(&coords);
        (u, m)
    } else {
        (vec![0.0], Vec::new())
    };
    GaussTables {
        d: cs.d,
        u: [ux.len(), uy.len()],
        map: [map_x, map_y],
        a: eval_field(&cs.a, cs.d, &ux, &uy),
        v: eval_field(&cs.v, cs.d, &ux, &uy),
        b: eval_field(&cs.b, cs.d, &ux, &uy),
        c: eval_field(&cs.c, cs.d, &ux, &uy),
    }
}

/// Constant-coefficient tables from the homogenized tensors.
fn constant_tables(hom: &HomogenizedSet, n: usize) -> GaussTables {
    let map = vec![0usize; 2 * n];
    GaussTables {
        d: hom.d,
        u: [1, 1],
        map: [map.clone(), map],
        a: hom.a.iter().map(|&x| vec![x]).collect(),
        v: hom.v.iter().map(|&x| vec![x]).collect(),
        b: hom.b.iter().map(|&x| vec![x]).collect(),
        c: hom.c.iter().map(|&x| vec![x]).collect(),
    }
}

/// Sparsity pattern of the Q1 stencil: 3^d neighbor nodes times m components.
fn grid_pattern(d: usize, n: usize, m: usize) -> (Vec<usize>, Vec<usize>) {
    let np = n + 1;
    let mut row_ptr = vec![0usize];
    let mut cols = Vec::new();
    match d {
        1 => {
            for i in 0..np {
                for _alpha in 0..m {
                    let lo = i.saturating_sub(1);
                    let hi = (i + 1).min(np - 1);
                    for j in lo..=hi {
                        for beta in 0..m {
                            cols.push(j * m + beta);
                        }
                    }
                    row_ptr.push(cols.len());
                }
            }
        }
        _ => {
            for i0 in 0..np {
                for i1 in 0..np {
                    for _alpha in 0..m {
                        let lo0 = i0.saturating_sub(1);
                        let hi0 = (i0 + 1).min(np - 1);
                        let lo1 = i1.saturating_sub(1);
                        let hi1 = (i1 + 1).min(np - 1);
                        for j0 in lo0..=hi0 {
                            for j1 in lo1..=hi1 {
                                let node = j0 * np + j1;
                                for beta in 0..m {
                                    cols.push(node * m + beta);
                                }
                            }
                        }
                        row_ptr.push(cols.len());
                    }
                }
            }
        }
    }
    (row_ptr, cols)
}

/// Assemble the bilinear form; `second_order_only` keeps just the A term
/// (pure Neumann operator for the boundary corrector).
fn assemble(
    d: usize,
    n: usize,
    m: usize,
    tabs: &GaussTables,
    lambda: f64,
    second_order_only: bool,
) -> Csr {
    let np = n + 1;
    let h = 1.0 / n as f64;
    let ndof = np.pow(d as u32) * m;
    let (row_ptr, cols) = grid_pattern(d, n, m);
    let mut mat = Csr::with_pattern(ndof, row_ptr, cols);

    match d {
        1 => {
            // local nodes a in {0, 1}: N_a(s), dN_a = +-1/h
            for cell in 0..n {
                for (g, &s) in GAUSS.iter().enumerate() {
                    let q0 = cell * 2 + g;
                    let w = 0.5 * h;
                    let nval = [1.0 - s, s];
                    let dval = [-1.0 / h, 1.0 / h];
                    for a in 0..2 {
                        for b in 0..2 {
                            for alpha in 0..m {
                                for beta in 0..m {
                                    let mut val = tabs.at(
                                        &tabs.a[((alpha * m + beta) * 1) * 1],
                                        q0,
                                        0,
                                    ) * dval[a]
                                        * dval[b];
                                    if !second_order_only {
                                        val += tabs.at(&tabs.v[alpha * m + beta], q0, 0)
                                            * dval[a]
                                            * nval[b];
                                        val += tabs.at(&tabs.b[alpha * m + beta], q0, 0)
                                            * nval[a]
                                            * dval[b];
                                        let mut zc = tabs.at(&tabs.c[alpha * m + beta], q0, 0);
                                        if alpha == beta {
                                            zc += lambda;
                                        }
                                        val += zc * nval[a] * nval[b];
                                    }
                                    mat.add(
                                        (cell + a) * m + alpha,
                                        (cell + b) * m + beta,
                                        w * val,
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
        _ => {
            // basis values at the two Gauss abscissae per axis
            let lv = |loc: usize, g: usize| if loc == 0 { 1.0 - GAUSS[g] } else { GAUSS[g] };
            let dl = |loc: usize| if loc == 0 { -1.0 / h } else { 1.0 / h };
            for c0 in 0..n {
                for c1 in 0..n {
                    for g0 in 0..2 {
                        for g1 in 0..2 {
                            let (q0, q1) = (c0 * 2 + g0, c1 * 2 + g1);
                            let w = 0.25 * h * h;
                            // local node a = 2*da0 + da1
                            let mut nval = [0.0; 4];
                            let mut dx = [0.0; 4];
                            let mut dy = [0.0; 4];
                            for a in 0..4 {
                                let (da0, da1) = (a / 2, a % 2);
                                nval[a] = lv(da0, g0) * lv(da1, g1);
                                dx[a] = dl(da0) * lv(da1, g1);
                                dy[a] = lv(da0, g0) * dl(da1);
                            }
                            for alpha in 0..m {
                                for beta in 0..m {
                                    let ab = alpha * m + beta;
                                    let a00 = tabs.at(&tabs.a[(ab * 2) * 2], q0, q1);
                                    let a01 = tabs.at(&tabs.a[(ab * 2) * 2 + 1], q0, q1);
                                    let a10 = tabs.at(&tabs.a[(ab * 2 + 1) * 2], q0, q1);
                                    let a11 = tabs.at(&tabs.a[(ab * 2 + 1) * 2 + 1], q0, q1);
                                    let (v0, v1, b0, b1, cc) = if second_order_only {
                                        (0.0, 0.0, 0.0, 0.0, 0.0)
                                    } else {
                                        (
                                            tabs.at(&tabs.v[ab * 2], q0, q1),
                                            tabs.at(&tabs.v[ab * 2 + 1], q0, q1),
                                            tabs.at(&tabs.b[ab * 2], q0, q1),
                                            tabs.at(&tabs.b[ab * 2 + 1], q0, q1),
                                            tabs.at(&tabs.c[ab], q0, q1)
                                                + if alpha == beta { lambda } else { 0.0 },
                                        )
                                    };
                                    for a in 0..4 {
                                        let row =
                                            (((c0 + a / 2) * np) + (c1 + a % 2)) * m + alpha;
                                        for b in 0..4 {
                                            let col =
                                                (((c0 + b / 2) * np) + (c1 + b % 2)) * m + beta;
                                            let mut val = a00 * dx[a] * dx[b]
                                                + a01 * dx[a] * dy[b]
                                                + a10 * dy[a] * dx[b]
                                                + a11 * dy[a] * dy[b];
                                            if !second_order_only {
                                                val += (v0 * dx[a] + v1 * dy[a]) * nval[b]
                                                    + nval[a] * (b0 * dx[b] + b1 * dy[b])
                                                    + cc * nval[a] * nval[b];
                                            }
                                            mat.add(row, col, w * val);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    mat
}

/// Consistent load vector: -int f . grad(phi) + int F phi + surface term.
/// F enters through the exact consistent mass of its Q1 interpolant, so the
/// discrete adjoint duality holds to solver precision.
fn load_vector(d: usize, n: usize, m: usize, data: &ProblemData) -> Result<Vec<f64>> {
    let np = n + 1;
    let h = 1.0 / n as f64;
    let nodes = np.pow(d as u32);
    let mut rhs = vec![0.0; nodes * m];

    if let Some(ff) = &data.big_f {
        if ff.d() != d || ff.n() != n || ff.m() != m {
            return Err(HomlabError::ShapeMismatch("volume data F has the wrong layout".into()));
        }
        // 1D consistent mass h [1/3, 1/6; 1/6, 1/3], tensorized in 2D
        let mloc = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
        match d {
            1 => {
                for alpha in 0..m {
                    let vals = ff.comp(alpha);
                    for cell in 0..n {
                        for a in 0..2 {
                            let mut acc = 0.0;
                            for b in 0..2 {
                                acc += mloc[a][b] * vals[cell + b];
                            }
                            rhs[(cell + a) * m + alpha] += h * acc;
                        }
                    }
                }
            }
            _ => {
                for alpha in 0..m {
                    let vals = ff.comp(alpha);
                    for c0 in 0..n {
                        for c1 in 0..n {
                            for a in 0..4 {
                                let (a0, a1) = (a / 2, a % 2);
                                let mut acc = 0.0;
                                for b in 0..4 {
                                    let (b0, b1) = (b / 2, b % 2);
                                    acc += mloc[a0][b0]
                                        * mloc[a1][b1]
                                        * vals[(c0 + b0) * np + c1 + b1];
                                }
                                rhs[((c0 + a0) * np + c1 + a1) * m + alpha] += h * h * acc;
                            }
                        }
                    }
                }
            }
        }
    }

    if let Some(fl) = &data.f {
        if fl.d() != d || fl.n() != n || fl.m() != m * d {
            return Err(HomlabError::ShapeMismatch("flux data f has the wrong layout".into()));
        }
        match d {
            1 => {
                for alpha in 0..m {
                    let vals = fl.comp(alpha); // m * d with d = 1: comp alpha
                    for cell in 0..n {
                        for (g, &s) in GAUSS.iter().enumerate() {
                            let _ = g;
                            let w = 0.5 * h;
                            let fval = (1.0 - s) * vals[cell] + s * vals[cell + 1];
                            let dval = [-1.0 / h, 1.0 / h];
                            for a in 0..2 {
                                rhs[(cell + a) * m + alpha] -= w * fval * dval[a];
                            }
                        }
                    }
                }
            }
            _ => {
                let lv = |loc: usize, g: usize| if loc == 0 { 1.0 - GAUSS[g] } else { GAUSS[g] };
                let dl = |loc: usize| if loc == 0 { -1.0 / h } else { 1.0 / h };
                for alpha in 0..m {
                    let f0 = fl.comp(alpha * 2);
                    let f1 = fl.comp(alpha * 2 + 1);
                    for c0 in 0..n {
                        for c1 in 0..n {
                            let corners = [
                                c0 * np + c1,
                                c0 * np + c1 + 1,
                                (c0 + 1) * np + c1,
                                (c0 + 1) * np + c1 + 1,
                            ];
                            for g0 in 0..2 {
                                for g1 in 0..2 {
                                    let w = 0.25 * h * h;
                                    let mut fv0 = 0.0;
                                    let mut fv1 = 0.0;
                                    for b in 0..4 {
                                        let shape = lv(b / 2, g0) * lv(b % 2, g1);
                                        fv0 += shape * f0[corners[b]];
                                        fv1 += shape * f1[corners[b]];
                                    }
                                    for a in 0..4 {
                                        let gx = dl(a / 2) * lv(a % 2, g1);
                                        let gy = lv(a / 2, g0) * dl(a % 2);
                                        rhs[((c0 + a / 2) * np + c1 + a % 2) * m + alpha] -=
                                            w * (fv0 * gx + fv1 * gy);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if let Some(gb) = &data.g {
        if gb.d() != d || gb.n() != n || gb.m() != m {
            return Err(HomlabError::ShapeMismatch("boundary data g has the wrong layout".into()));
        }
        add_boundary_load(d, n, m, |alpha, node| gb.comp(alpha)[node], &mut rhs);
    }
    Ok(rhs)
}

/// Add the surface term int g phi using the 1D consistent mass along each
/// face (point evaluation in 1D). `gval(alpha, node)` reads the trace.
fn add_boundary_load<G>(d: usize, n: usize, m: usize, gval: G, rhs: &mut [f64])
where
    G: Fn(usize, usize) -> f64,
{
    let np = n + 1;
    let h = 1.0 / n as f64;
    match d {
        1 => {
            for alpha in 0..m {
                rhs[alpha] += gval(alpha, 0);
                rhs[n * m + alpha] += gval(alpha, n);
            }
        }
        _ => {
            let faces: [&dyn Fn(usize) -> usize; 4] = [
                &|t| t,                  // i0 = 0
                &|t| n * np + t,         // i0 = n
                &|t| t * np,             // i1 = 0
                &|t| t * np + n,         // i1 = n
            ];
            for face in faces {
                for alpha in 0..m {
                    for edge in 0..n {
                        let p = face(edge);
                        let q = face(edge + 1);
                        let gp = gval(alpha, p);
                        let gq = gval(alpha, q);
                        rhs[p * m + alpha] += h / 6.0 * (2.0 * gp + gq);
                        rhs[q * m + alpha] += h / 6.0 * (gp + 2.0 * gq);
                    }
                }
            }
        }
    }
}

/// Trapezoid rule of a scalar nodal trace over the box boundary.
fn boundary_integral(d: usize, n: usize, vals: &[f64]) -> f64 {
    let np = n + 1;
    let h = 1.0 / n as f64;
    match d {
        1 => vals[0] + vals[n],
        _ => {
            let mut acc = 0.0;
            let faces: [&dyn Fn(usize) -> usize; 4] = [
                &|t| t,
                &|t| n * np + t,
                &|t| t * np,
                &|t| t * np + n,
            ];
            for face in faces {
                for edge in 0..n {
                    acc += h * 0.5 * (vals[face(edge)] + vals[face(edge + 1)]);
                }
            }
            acc
        }
    }
}

// ---------------------------------------------------------------------------
// Constant-coefficient Neumann preconditioner
// ---------------------------------------------------------------------------

/// Exact inverse of the Q1 discretization of -div(Abar grad u) + lambda u
/// with natural boundary conditions, computed by even extension to the torus
/// of period 2 and FFT diagonalization. With lambda = 0 the constant mode is
/// projected out.
pub struct NeumannPreconditioner {
    d: usize,
    n: usize,
    m: usize,
    lambda: f64,
    /// abar[axis][alpha * m + beta]
    abar: Vec<Vec<f64>>,
    kap: Vec<f64>,
    mus: Vec<f64>,
}

impl NeumannPreconditioner {
    pub fn new(d: usize, n: usize, m: usize, abar: Vec<Vec<f64>>, lambda: f64) -> Self {
        let h = 1.0 / n as f64;
        let ext = 2 * n;
        let mut kap = vec![0.0; ext];
        let mut mus = vec![0.0; ext];
        for (k, (kv, mv)) in kap.iter_mut().zip(mus.iter_mut()).enumerate() {
            let theta = std::f64::consts::PI * k as f64 / n as f64;
            *kv = (2.0 / h) * (1.0 - theta.cos());
            *mv = (h / 3.0) * (2.0 + theta.cos());
        }
        NeumannPreconditioner {
            d,
            n,
            m,
            lambda,
            abar,
            kap,
            mus,
        }
    }

    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let np = n + 1;
        let ext = 2 * n;
        let ext_dims = vec![ext; self.d];
        let total_ext = ext.pow(self.d as u32);
        let fold = |e: usize| if e <= n { e } else { ext - e };
        let invw = |i: usize| if i == 0 || i == n { 2.0 } else { 1.0 };

        // hat[alpha] = FFT of the even extension of W^{-1} r
        let mut hat = Vec::with_capacity(m);
        for alpha in 0..m {
            let mut extv = vec![0.0; total_ext];
            match self.d {
                1 => {
                    for (e, slot) in extv.iter_mut().enumerate() {
                        let i = fold(e);
                        *slot = r[i * m + alpha] * invw(i);
                    }
                }
                _ => {
                    for e0 in 0..ext {
                        let i0 = fold(e0);
                        let w0 = invw(i0);
                        for e1 in 0..ext {
                            let i1 = fold(e1);
                            extv[e0 * ext + e1] = r[(i0 * np + i1) * m + alpha] * w0 * invw(i1);
                        }
                    }
                }
            }
            hat.push(fft::forward(&ext_dims, &extv));
        }

        // divide by the symbol, frequency by frequency
        let mut smat = vec![0.0; m * m];
        let mut re = vec![0.0; m];
        let mut im = vec![0.0; m];
        for idx in 0..total_ext {
            let (k0, k1) = match self.d {
                1 => (idx, 0),
                _ => (idx / ext, idx % ext),
            };
            let (kprod0, kprod1, mprod) = match self.d {
                1 => (self.kap[k0], 0.0, self.mus[k0]),
                _ => (
                    self.kap[k0] * self.mus[k1],
                    self.mus[k0] * self.kap[k1],
                    self.mus[k0] * self.mus[k1],
                ),
            };
            if kprod0 == 0.0 && kprod1 == 0.0 && self.lambda == 0.0 {
                for alpha in 0..m {
                    hat[alpha][idx] = num_complex::Complex::new(0.0, 0.0);
                }
                continue;
            }
            if m == 1 {
                let s = self.abar[0][0] * kprod0
                    + if self.d == 2 { self.abar[1][0] * kprod1 } else { 0.0 }
                    + self.lambda * mprod;
                hat[0][idx] /= s;
                continue;
            }
            for alpha in 0..m {
                for beta in 0..m {
                    let mut s = self.abar[0][alpha * m + beta] * kprod0;
                    if self.d == 2 {
                        s += self.abar[1][alpha * m + beta] * kprod1;
                    }
                    if alpha == beta {
                        s += self.lambda * mprod;
                    }
                    smat[alpha * m + beta] = s;
                }
                re[alpha] = hat[alpha][idx].re;
                im[alpha] = hat[alpha][idx].im;
            }
            solve_small(&mut smat.clone(), &mut re, &mut im, m);
            for alpha in 0..m {
                hat[alpha][idx] = num_complex::Complex::new(re[alpha], im[alpha]);
            }
        }

        // invert the transform and restrict
        let nodes = np.pow(self.d as u32);
        let mut out = vec![0.0; nodes * m];
        for (alpha, coeffs) in hat.iter().enumerate() {
            let extv = fft::inverse(&ext_dims, coeffs);
            match self.d {
                1 => {
                    for i in 0..np {
                        out[i * m + alpha] = extv[i];
                    }
                }
                _ => {
                    for i0 in 0..np {
                        for i1 in 0..np {
                            out[(i0 * np + i1) * m + alpha] = extv[i0 * ext + i1];
                        }
                    }
                }
            }
        }
        out
    }
}

/// Gaussian elimination with partial pivoting for a small real system with
/// separate real and imaginary right-hand sides.
fn solve_small(mat: &mut [f64], re: &mut [f64], im: &mut [f64], m: usize) {
    for col in 0..m {
        let mut piv = col;
        for r in col + 1..m {
            if mat[r * m + col].abs() > mat[piv * m + col].abs() {
                piv = r;
            }
        }
        if piv != col {
            for j in 0..m {
                mat.swap(col * m + j, piv * m + j);
            }
            re.swap(col, piv);
            im.swap(col, piv);
        }
        let diag = mat[col * m + col];
        for r in 0..m {
            if r == col || mat[r * m + col] == 0.0 {
                continue;
            }
            let factor = mat[r * m + col] / diag;
            for j in col..m {
                mat[r * m + j] -= factor * mat[col * m + j];
            }
            re[r] -= factor * re[col];
            im[r] -= factor * im[col];
        }
    }
    for k in 0..m {
        re[k] /= mat[k * m + k];
        im[k] /= mat[k * m + k];
    }
}

// ---------------------------------------------------------------------------
// Solves
// ---------------------------------------------------------------------------

/// Coercivity threshold lambda0 = kappa^2 m d / mu + 2 kappa m + 1.
pub fn lambda_threshold(kappa: f64, mu: f64, m: usize, d: usize) -> f64 {
    kappa * kappa * (m * d) as f64 / mu + 2.0 * kappa * m as f64 + 1.0
}

fn check_resolution(n: usize, eps: f64) -> Result<()> {
    if (n as f64) * eps < MIN_CELLS_PER_EPS - 1e-9 {
        return Err(HomlabError::UnderResolved(format!(
            "need n * eps >= {MIN_CELLS_PER_EPS}, got n = {n}, eps = {eps}"
        )));
    }
    Ok(())
}

fn run_krylov(
    mat: &Csr,
    prec: &NeumannPreconditioner,
    rhs: &[f64],
    symmetric: bool,
    project_constants: bool,
    m: usize,
    tol: f64,
    verbose: bool,
) -> Result<KrylovResult> {
    let project = |v: &mut [f64]| {
        if !project_constants {
            return;
        }
        let nodes = v.len() / m;
        for alpha in 0..m {
            let mean: f64 = (0..nodes).map(|i| v[i * m + alpha]).sum::<f64>() / nodes as f64;
            for i in 0..nodes {
                v[i * m + alpha] -= mean;
            }
        }
    };
    let op = |x: &[f64], y: &mut [f64]| mat.matvec(x, y);
    let pr = |r: &[f64]| prec.apply(r);
    if symmetric {
        pcg(op, pr, project, rhs, tol, SOLVE_ITERATION_CAP, verbose)
    } else {
        bicgstab(op, pr, project, rhs, tol, SOLVE_ITERATION_CAP, verbose)
    }
}

fn grid_from_dofs(d: usize, n: usize, m: usize, dofs: &[f64]) -> GridFunction {
    let nodes = (n + 1).pow(d as u32);
    let mut u = GridFunction::zeros(d, n, m);
    for alpha in 0..m {
        let comp = u.comp_mut(alpha);
        for node in 0..nodes {
            comp[node] = dofs[node * m + alpha];
        }
    }
    u
}

/// Nodal tables of B(x/eps) and c(x/eps) (transposed when `adjoint`, because
/// the adjoint problem swaps the roles of V and B).
fn lower_order_node_tables(
    cs: &CoefficientSet,
    eps: f64,
    n: usize,
    adjoint: bool,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (m, d) = (cs.m, cs.d);
    let nodes = (n + 1).pow(d as u32);
    if cs.lower_order_is_zero() {
        return (vec![vec![0.0; nodes]; m * m * d], vec![vec![0.0; nodes]; m * m]);
    }
    let h = 1.0 / n as f64;
    let coords: Vec<f64> = (0..=n).map(|i| i as f64 * h / eps).collect();
    let axes: Vec<Vec<f64>> = (0..d).map(|_| coords.clone()).collect();
    let mut b_tab = Vec::with_capacity(m * m * d);
    let mut c_tab = Vec::with_capacity(m * m);
    for alpha in 0..m {
        for beta in 0..m {
            for i in 0..d {
                let comp = if adjoint {
                    cs.v_comp(beta, alpha, i)
                } else {
                    cs.b_comp(alpha, beta, i)
                };
                let field = if adjoint { &cs.v } else { &cs.b };
                b_tab.push(field.eval_lattice(comp, &axes));
            }
            let comp = if adjoint {
                cs.c_comp(beta, alpha)
            } else {
                cs.c_comp(alpha, beta)
            };
            c_tab.push(cs.c.eval_lattice(comp, &axes));
        }
    }
    (b_tab, c_tab)
}

/// Weak-form defect against phi = 1, by quadrature independent of the
/// assembled system: int(B du + c u + lambda u) - int F - int_boundary g.
fn weak_compatibility(
    d: usize,
    n: usize,
    m: usize,
    lambda: f64,
    b_tab: &[Vec<f64>],
    c_tab: &[Vec<f64>],
    u: &GridFunction,
    data: &ProblemData,
) -> Vec<f64> {
    let nodes = (n + 1).pow(d as u32);
    let grads: Vec<Vec<f64>> = (0..m)
        .flat_map(|beta| (0..d).map(move |i| (beta, i)))
        .map(|(beta, i)| u.gradient(beta, i))
        .collect();
    let mut out = Vec::with_capacity(m);
    for alpha in 0..m {
        let mut nodal = vec![0.0; nodes];
        for (g, slot) in nodal.iter_mut().enumerate() {
            let mut acc = lambda * u.comp(alpha)[g];
            for beta in 0..m {
                for i in 0..d {
                    acc += b_tab[(alpha * m + beta) * d + i][g] * grads[beta * d + i][g];
                }
                acc += c_tab[alpha * m + beta][g] * u.comp(beta)[g];
            }
            *slot = acc;
        }
        let gf = GridFunction::from_nodal(d, n, nodal);
        let mut resid = gf.integrate(|v| v[0]);
        if let Some(ff) = &data.big_f {
            let gf = GridFunction::from_nodal(d, n, ff.comp(alpha).to_vec());
            resid -= gf.integrate(|v| v[0]);
        }
        if let Some(gb) = &data.g {
            resid -= boundary_integral(d, n, gb.comp(alpha));
        }
        out.push(resid);
    }
    out
}

/// The compatibility identity (C:1) evaluated for a given discrete solution
/// of the oscillating problem.
pub fn compatibility_residual(
    cs: &CoefficientSet,
    eps: f64,
    data: &ProblemData,
    u: &GridFunction,
) -> Vec<f64> {
    let (b_tab, c_tab) = lower_order_node_tables(cs, eps, u.n(), false);
    weak_compatibility(cs.d, u.n(), cs.m, cs.lambda, &b_tab, &c_tab, u, data)
}

fn mean_diag_abar(cs: &CoefficientSet, adjoint: bool) -> Vec<Vec<f64>> {
    let (m, d) = (cs.m, cs.d);
    (0..d)
        .map(|axis| {
            let mut row = vec![0.0; m * m];
            for alpha in 0..m {
                for beta in 0..m {
                    let comp = if adjoint {
                        cs.a_comp(beta, alpha, axis, axis)
                    } else {
                        cs.a_comp(alpha, beta, axis, axis)
                    };
                    // symmetrize so the preconditioner stays SPD
                    let comp_t = if adjoint {
                        cs.a_comp(alpha, beta, axis, axis)
                    } else {
                        cs.a_comp(beta, alpha, axis, axis)
                    };
                    row[alpha * m + beta] = 0.5 * (cs.a.mean(comp) + cs.a.mean(comp_t));
                }
            }
            row
        })
        .collect()
}

/// Solve the oscillating Neumann problem (or its adjoint) on an n-grid.
pub fn solve_oscillating(
    cs: &CoefficientSet,
    eps: f64,
    data: &ProblemData,
    n: usize,
    adjoint: bool,
    tol: f64,
    verbose: bool,
) -> Result<SolveResult> {
    check_resolution(n, eps)?;
    let lambda0 = lambda_threshold(cs.kappa, cs.mu, cs.m, cs.d);
    if cs.lambda < lambda0 - 1e-12 {
        return Err(HomlabError::CoercivityFailure {
            lambda: cs.lambda,
            lambda0,
        });
    }
    let (m, d) = (cs.m, cs.d);
    let tabs = oscillating_tables(cs, eps, n);
    let mut mat = assemble(d, n, m, &tabs, cs.lambda, false);
    if adjoint {
        mat = mat.transpose();
    }
    let rhs = load_vector(d, n, m, data)?;
    let symmetric = cs.symmetric_a && cs.lower_order_is_zero();
    let prec = NeumannPreconditioner::new(d, n, m, mean_diag_abar(cs, adjoint), cs.lambda);
    let kr = run_krylov(&mat, &prec, &rhs, symmetric, false, m, tol, verbose)?;
    let u = grid_from_dofs(d, n, m, &kr.x);
    let (b_tab, c_tab) = lower_order_node_tables(cs, eps, n, adjoint);
    let compat = weak_compatibility(d, n, m, cs.lambda, &b_tab, &c_tab, &u, data);
    Ok(SolveResult {
        u,
        iterations: kr.iterations,
        relative_residual: kr.relative_residual,
        compatibility_residual: compat,
    })
}

fn hom_mu_kappa(hom: &HomogenizedSet) -> (f64, f64) {
    let (m, d) = (hom.m, hom.d);
    let probes = probe_directions(m, d, 32);
    let mut mu = f64::INFINITY;
    for xi in &probes {
        let mut q = 0.0;
        for alpha in 0..m {
            for beta in 0..m {
                for i in 0..d {
                    for j in 0..d {
                        q += hom.a_hat(alpha, beta, i, j) * xi[alpha * d + i] * xi[beta * d + j];
                    }
                }
            }
        }
        let n2: f64 = xi.iter().map(|x| x * x).sum();
        mu = mu.min(q / n2);
    }
    let kappa = hom
        .v
        .iter()
        .chain(hom.b.iter())
        .chain(hom.c.iter())
        .fold(0.0f64, |acc, &x| acc.max(x.abs()));
    (mu, kappa)
}

/// Solve the constant-coefficient homogenized problem on an n-grid.
pub fn solve_homogenized_problem(
    hom: &HomogenizedSet,
    data: &ProblemData,
    n: usize,
    tol: f64,
    verbose: bool,
) -> Result<SolveResult> {
    let (m, d) = (hom.m, hom.d);
    let (mu, kappa) = hom_mu_kappa(hom);
    if mu <= 0.0 {
        return Err(HomlabError::CoercivityFailure {
            lambda: hom.lambda,
            lambda0: f64::INFINITY,
        });
    }
    let lambda0 = lambda_threshold(kappa, mu, m, d);
    if hom.lambda < lambda0 - 1e-12 {
        return Err(HomlabError::CoercivityFailure {
            lambda: hom.lambda,
            lambda0,
        });
    }
    let tabs = constant_tables(hom, n);
    let mat = assemble(d, n, m, &tabs, hom.lambda, false);
    let rhs = load_vector(d, n, m, data)?;
    let symmetric = kappa == 0.0
        && (0..m).all(|al| {
            (0..m).all(|be| {
                (0..d).all(|i| {
                    (0..d).all(|j| (hom.a_hat(al, be, i, j) - hom.a_hat(be, al, j, i)).abs() < 1e-12)
                })
            })
        });
    let abar: Vec<Vec<f64>> = (0..d)
        .map(|axis| {
            let mut row = vec![0.0; m * m];
            for alpha in 0..m {
                for beta in 0..m {
                    row[alpha * m + beta] = 0.5
                        * (hom.a_hat(alpha, beta, axis, axis) + hom.a_hat(beta, alpha, axis, axis));
                }
            }
            row
        })
        .collect();
    let prec = NeumannPreconditioner::new(d, n, m, abar, hom.lambda);
    let kr = run_krylov(&mat, &prec, &rhs, symmetric, false, m, tol, verbose)?;
    let u = grid_from_dofs(d, n, m, &kr.x);
    let nodes = (n + 1).pow(d as u32);
    let b_tab: Vec<Vec<f64>> = (0..m * m * d)
        .map(|k| {
            let (ab, i) = (k / d, k % d);
            vec![hom.b_hat(ab / m, ab % m, i); nodes]
        })
        .collect();
    let c_tab: Vec<Vec<f64>> = (0..m * m)
        .map(|ab| vec![hom.c_hat(ab / m, ab % m); nodes])
        .collect();
    let compat = weak_compatibility(d, n, m, hom.lambda, &b_tab, &c_tab, &u, data);
    Ok(SolveResult {
        u,
        iterations: kr.iterations,
        relative_residual: kr.relative_residual,
        compatibility_residual: compat,
    })
}

/// Solve the pure-Neumann boundary corrector Psi_{eps,0}: columns gamma of
/// L_eps(Psi) = div(V_eps), dPsi/dnu = n . (V_hat - V_eps), normalized so
/// the cell average of Psi - I vanishes.
pub fn solve_boundary_corrector(
    cs: &CoefficientSet,
    eps: f64,
    hom: &HomogenizedSet,
    n: usize,
    tol: f64,
    verbose: bool,
) -> Result<CorrectorSolve> {
    check_resolution(n, eps)?;
    let (m, d) = (cs.m, cs.d);
    let np = n + 1;
    let nodes = np.pow(d as u32);
    let h = 1.0 / n as f64;
    let tabs = oscillating_tables(cs, eps, n);
    let mat = assemble(d, n, m, &tabs, 0.0, true);
    let prec = NeumannPreconditioner::new(d, n, m, mean_diag_abar(cs, false), 0.0);

    // V_eps at the grid nodes, per column gamma
    let coords: Vec<f64> = (0..=n).map(|i| i as f64 * h / eps).collect();
    let axes: Vec<Vec<f64>> = (0..d).map(|_| coords.clone()).collect();

    let mut psi = GridFunction::zeros(d, n, m * m);
    let mut iterations = 0;
    let mut rel_res = 0.0f64;
    let mut defect = 0.0f64;
    for gamma in 0..m {
        // rhs = -int V_eps . grad(phi) + int_boundary (n . V_hat) phi
        let mut flux = GridFunction::zeros(d, n, m * d);
        for alpha in 0..m {
            for i in 0..d {
                let vals = cs.v.eval_lattice(cs.v_comp(alpha, gamma, i), &axes);
                flux.comp_mut(alpha * d + i).copy_from_slice(&vals);
            }
        }
        let data = ProblemData {
            f: Some(flux),
            big_f: None,
            g: None,
        };
        let mut rhs = load_vector(d, n, m, &data)?;
        // boundary term with face-constant g = +- V_hat_axis
        match d {
            1 => {
                for alpha in 0..m {
                    rhs[alpha] -= hom.v_hat(alpha, gamma, 0);
                    rhs[n * m + alpha] += hom.v_hat(alpha, gamma, 0);
                }
            }
            _ => {
                // faces: (axis 0, side 0/1), (axis 1, side 0/1)
                for (axis, side, start, stride) in [
                    (0usize, 0usize, 0usize, 1usize),
                    (0, 1, n * np, 1),
                    (1, 0, 0, np),
                    (1, 1, n, np),
                ] {
                    let sign = if side == 0 { -1.0 } else { 1.0 };
                    for alpha in 0..m {
                        let g = sign * hom.v_hat(alpha, gamma, axis);
                        for edge in 0..n {
                            let p = start + edge * stride;
                            let q = start + (edge + 1) * stride;
                            rhs[p * m + alpha] += h * 0.5 * g;
                            rhs[q * m + alpha] += h * 0.5 * g;
                        }
                    }
                }
            }
        }
        // discrete compatibility: the rhs must annihilate constants
        let scale = rhs.iter().fold(0.0f64, |acc, &v| acc.max(v.abs())).max(1.0);
        for alpha in 0..m {
            let sum: f64 = (0..nodes).map(|i| rhs[i * m + alpha]).sum();
            defect = defect.max(sum.abs());
            if sum.abs() > 1e-8 * scale {
                return Err(HomlabError::CompatibilityDefect(sum.abs()));
            }
        }
        let symmetric = cs.symmetric_a;
        let kr = run_krylov(&mat, &prec, &rhs, symmetric, true, m, tol, verbose)?;
        iterations += kr.iterations;
        rel_res = rel_res.max(kr.relative_residual);
        // Psi^{alpha gamma} = delta + w, with quadrature mean of w removed
        for alpha in 0..m {
            let mut nodal = vec![0.0; nodes];
            for node in 0..nodes {
                nodal[node] = kr.x[node * m + alpha];
            }
            let gf = GridFunction::from_nodal(d, n, nodal.clone());
            let mean = gf.integrate(|v| v[0]);
            let delta = if alpha == gamma { 1.0 } else { 0.0 };
            let comp = psi.comp_mut(alpha * m + gamma);
            for (slot, v) in comp.iter_mut().zip(nodal.iter()) {
                *slot = delta + v - mean;
            }
        }
    }
    Ok(CorrectorSolve {
        psi,
        iterations,
        relative_residual: rel_res,
        compatibility_defect: defect,
    })
}
