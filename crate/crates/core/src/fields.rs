//! Y-periodic coefficient fields of the oscillating operator.
//!
//! Fields are band-limited trigonometric polynomials stored both as nodal
//! samples on a uniform grid over the unit cell and as their discrete Fourier
//! coefficients; the two representations agree to machine precision.

use crate::error::{HomlabError, Result};
use crate::fft;
use num_complex::Complex;
use serde::Serialize;
use std::str::FromStr;

/// A periodic tensor-valued field on the unit cell Y = (0,1]^d.
#[derive(Debug, Clone)]
pub struct PeriodicField {
    d: usize,
    n: usize,
    shape: Vec<usize>,
    nodal: Vec<Vec<f64>>,
    spectral: Vec<Vec<Complex<f64>>>,
}

impl PeriodicField {
    pub fn dims(&self) -> Vec<usize> {
        vec![self.n; self.d]
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn num_comps(&self) -> usize {
        self.nodal.len()
    }

    /// Flatten a multi-index into the component list.
    pub fn comp_index(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len());
        let mut flat = 0;
        for (i, &k) in idx.iter().enumerate() {
            assert!(k < self.shape[i], "component index out of range");
            flat = flat * self.shape[i] + k;
        }
        flat
    }

    pub fn nodal(&self, comp: usize) -> &[f64] {
        &self.nodal[comp]
    }

    pub fn spectral(&self, comp: usize) -> &[Complex<f64>] {
        &self.spectral[comp]
    }

    pub fn mean(&self, comp: usize) -> f64 {
        self.spectral[comp][0].re
    }

    /// Sample the field from a closure evaluated at the grid nodes.
    pub fn from_fn<F>(d: usize, n: usize, shape: Vec<usize>, f: F) -> Self
    where
        F: Fn(&[usize], &[f64]) -> f64,
    {
        assert!(d == 1 || d == 2, "d must be 1 or 2");
        let comps: usize = shape.iter().product();
        let total = n.pow(d as u32);
        let dims = vec![n; d];
        let mut nodal = Vec::with_capacity(comps);
        let mut spectral = Vec::with_capacity(comps);
        let mut idx = vec![0usize; shape.len()];
        for c in 0..comps {
            // unflatten c into idx
            let mut rem = c;
            for i in (0..shape.len()).rev() {
                idx[i] = rem % shape[i];
                rem /= shape[i];
            }
            let mut vals = vec![0.0; total];
            let mut y = vec![0.0; d];
            for g in 0..total {
                if d == 1 {
                    y[0] = g as f64 / n as f64;
                } else {
                    y[0] = (g / n) as f64 / n as f64;
                    y[1] = (g % n) as f64 / n as f64;
                }
                vals[g] = f(&idx, &y);
            }
            spectral.push(fft::forward(&dims, &vals));
            nodal.push(vals);
        }
        PeriodicField {
            d,
            n,
            shape,
            nodal,
            spectral,
        }
    }

    /// Build a field directly from per-component spectral coefficients.
    pub fn from_spectral(d: usize, n: usize, shape: Vec<usize>, spectral: Vec<Vec<Complex<f64>>>) -> Self {
        let dims = vec![n; d];
        let nodal = spectral.iter().map(|c| fft::inverse(&dims, c)).collect();
        PeriodicField {
            d,
            n,
            shape,
            nodal,
            spectral,
        }
    }

    /// Build from per-component nodal values.
    pub fn from_nodal(d: usize, n: usize, shape: Vec<usize>, nodal: Vec<Vec<f64>>) -> Self {
        let dims = vec![n; d];
        let spectral = nodal.iter().map(|v| fft::forward(&dims, v)).collect();
        PeriodicField {
            d,
            n,
            shape,
            nodal,
            spectral,
        }
    }

    pub fn zeros(d: usize, n: usize, shape: Vec<usize>) -> Self {
        let comps: usize = shape.iter().product();
        let total = n.pow(d as u32);
        PeriodicField {
            d,
            n,
            shape,
            nodal: vec![vec![0.0; total]; comps],
            spectral: vec![vec![Complex::new(0.0, 0.0); total]; comps],
        }
    }

    /// Trigonometric interpolation at an arbitrary point, reduced mod 1 per axis.
    pub fn sample(&self, comp: usize, y: &[f64]) -> f64 {
        let coords: Vec<Vec<f64>> = y.iter().map(|&v| vec![v.rem_euclid(1.0)]).collect();
        fft::eval_tensor(&self.dims(), &self.spectral[comp], &coords)[0]
    }

    /// Evaluate one component on a tensor grid of points (coordinates reduced mod 1).
    pub fn eval_lattice(&self, comp: usize, axis_coords: &[Vec<f64>]) -> Vec<f64> {
        let reduced: Vec<Vec<f64>> = axis_coords
            .iter()
            .map(|cs| cs.iter().map(|&v| v.rem_euclid(1.0)).collect())
            .collect();
        fft::eval_tensor(&self.dims(), &self.spectral[comp], &reduced)
    }

    /// Spectral derivative of one component along an axis, as coefficients.
    pub fn deriv_spectral(&self, comp: usize, axis: usize) -> Vec<Complex<f64>> {
        fft::deriv(&self.dims(), &self.spectral[comp], axis)
    }

    /// Nodal values of the derivative of one component along an axis.
    pub fn deriv_nodal(&self, comp: usize, axis: usize) -> Vec<f64> {
        fft::inverse(&self.dims(), &self.deriv_spectral(comp, axis))
    }
}

/// Named coefficient presets; all are trigonometric polynomials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Preset {
    Identity,
    Scalar1d,
    Layered,
    Smooth2d,
}

impl FromStr for Preset {
    type Err = HomlabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Preset::Identity),
            "scalar1d" => Ok(Preset::Scalar1d),
            "layered" => Ok(Preset::Layered),
            "smooth2d" => Ok(Preset::Smooth2d),
            other => Err(HomlabError::UnknownPreset(other.to_string())),
        }
    }
}

/// The coefficient data (A, V, B, c, lambda) of the operator, with its
/// ellipticity and boundedness metadata.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub m: usize,
    pub d: usize,
    pub n: usize,
    /// a_{ij}^{ab}: component index [alpha, beta, i, j]
    pub a: PeriodicField,
    /// V_i^{ab}: component index [alpha, beta, i]
    pub v: PeriodicField,
    /// B_i^{ab}: component index [alpha, beta, i]
    pub b: PeriodicField,
    /// c^{ab}: component index [alpha, beta]
    pub c: PeriodicField,
    pub lambda: f64,
    pub mu: f64,
    pub kappa: f64,
    pub symmetric_a: bool,
}

impl CoefficientSet {
    pub fn a_comp(&self, alpha: usize, beta: usize, i: usize, j: usize) -> usize {
        self.a.comp_index(&[alpha, beta, i, j])
    }

    pub fn v_comp(&self, alpha: usize, beta: usize, i: usize) -> usize {
        self.v.comp_index(&[alpha, beta, i])
    }

    pub fn b_comp(&self, alpha: usize, beta: usize, i: usize) -> usize {
        self.b.comp_index(&[alpha, beta, i])
    }

    pub fn c_comp(&self, alpha: usize, beta: usize) -> usize {
        self.c.comp_index(&[alpha, beta])
    }

    /// True when all of V, B, c vanish identically.
    pub fn lower_order_is_zero(&self) -> bool {
        let zero = |f: &PeriodicField| {
            (0..f.num_comps()).all(|c| f.nodal(c).iter().all(|&v| v.abs() < 1e-300))
        };
        zero(&self.v) && zero(&self.b) && zero(&self.c)
    }
}

fn check_symmetric(a: &PeriodicField, m: usize, d: usize) -> bool {
    for alpha in 0..m {
        for beta in 0..m {
            for i in 0..d {
                for j in 0..d {
                    let c1 = a.comp_index(&[alpha, beta, i, j]);
                    let c2 = a.comp_index(&[beta, alpha, j, i]);
                    let x = a.nodal(c1);
                    let y = a.nodal(c2);
                    if x.iter().zip(y.iter()).any(|(u, v)| (u - v).abs() > 1e-13) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Construct a named coefficient preset.
///
/// Parameter conventions:
/// - `identity`: no parameters; A = I, V = B = c = 0.
/// - `scalar1d`: `[p, q]` plus optional `[v_amp, b_const, c_const]`;
///   a(y) = p + q cos(2 pi y), V = v_amp cos(2 pi y), B and c constant.
/// - `layered`: `[p, q]`; a(y1, y2) = (p + q cos(2 pi y1)) I in d = 2.
/// - `smooth2d`: `[p, q]`; a = (p + q cos(2 pi y1) cos(2 pi y2)) I in d = 2.
pub fn build_preset(
    preset: Preset,
    params: &[f64],
    m: usize,
    d: usize,
    n: usize,
    lambda: f64,
) -> Result<CoefficientSet> {
    if !(n >= 16 && n.is_power_of_two()) {
        return Err(HomlabError::InvalidPreset(format!(
            "N must be a power of two >= 16, got {n}"
        )));
    }
    if !(d == 1 || d == 2) {
        return Err(HomlabError::InvalidPreset(format!("d must be 1 or 2, got {d}")));
    }
    if m == 0 {
        return Err(HomlabError::InvalidPreset("m must be >= 1".into()));
    }
    if lambda < 0.0 {
        return Err(HomlabError::InvalidPreset("lambda must be nonnegative".into()));
    }

    let scalar_bounds = |p: f64, q: f64| -> Result<(f64, f64)> {
        let lo = p - q.abs();
        let hi = p + q.abs();
        if lo <= 0.0 {
            return Err(HomlabError::InvalidPreset(format!(
                "amplitude {q} >= mean {p}: coefficient loses ellipticity"
            )));
        }
        Ok((lo, hi))
    };

    match preset {
        Preset::Identity => {
            if !params.is_empty() {
                return Err(HomlabError::InvalidPreset("identity takes no parameters".into()));
            }
            let a = PeriodicField::from_fn(d, n, vec![m, m, d, d], |idx, _| {
                if idx[0] == idx[1] && idx[2] == idx[3] {
                    1.0
                } else {
                    0.0
                }
            });
            Ok(CoefficientSet {
                m,
                d,
                n,
                a,
                v: PeriodicField::zeros(d, n, vec![m, m, d]),
                b: PeriodicField::zeros(d, n, vec![m, m, d]),
                c: PeriodicField::zeros(d, n, vec![m, m]),
                lambda,
                mu: 1.0,
                kappa: 0.0,
                symmetric_a: true,
            })
        }
        Preset::Scalar1d => {
            if d != 1 || m != 1 {
                return Err(HomlabError::InvalidPreset("scalar1d requires m = 1, d = 1".into()));
            }
            if params.len() < 2 || params.len() > 5 {
                return Err(HomlabError::InvalidPreset(
                    "scalar1d takes [p, q] with optional [v_amp, b_const, c_const]".into(),
                ));
            }
            let (p, q) = (params[0], params[1]);
            let v_amp = params.get(2).copied().unwrap_or(0.0);
            let b_const = params.get(3).copied().unwrap_or(0.0);
            let c_const = params.get(4).copied().unwrap_or(0.0);
            let (lo, hi) = scalar_bounds(p, q)?;
            let a = PeriodicField::from_fn(1, n, vec![1, 1, 1, 1], |_, y| p + q * (TWO_PI * y[0]).cos());
            let v = PeriodicField::from_fn(1, n, vec![1, 1, 1], |_, y| v_amp * (TWO_PI * y[0]).cos());
            let b = PeriodicField::from_fn(1, n, vec![1, 1, 1], |_, _| b_const);
            let c = PeriodicField::from_fn(1, n, vec![1, 1], |_, _| c_const);
            Ok(CoefficientSet {
                m: 1,
                d: 1,
                n,
                a,
                v,
                b,
                c,
                lambda,
                mu: lo.min(1.0 / hi),
                kappa: v_amp.abs().max(b_const.abs()).max(c_const.abs()),
                symmetric_a: true,
            })
        }
        Preset::Layered => {
            if d != 2 || m != 1 {
                return Err(HomlabError::InvalidPreset("layered requires m = 1, d = 2".into()));
            }
            if params.len() != 2 {
                return Err(HomlabError::InvalidPreset("layered takes [p, q]".into()));
            }
            let (p, q) = (params[0], params[1]);
            let (lo, hi) = scalar_bounds(p, q)?;
            let a = PeriodicField::from_fn(2, n, vec![1, 1, 2, 2], |idx, y| {
                if idx[2] == idx[3] {
                    p + q * (TWO_PI * y[0]).cos()
                } else {
                    0.0
                }
            });
            Ok(CoefficientSet {
                m: 1,
                d: 2,
                n,
                a,
                v: PeriodicField::zeros(2, n, vec![1, 1, 2]),
                b: PeriodicField::zeros(2, n, vec![1, 1, 2]),
                c: PeriodicField::zeros(2, n, vec![1, 1]),
                lambda,
                mu: lo.min(1.0 / hi),
                kappa: 0.0,
                symmetric_a: true,
            })
        }
        Preset::Smooth2d => {
            if d != 2 || m != 1 {
                return Err(HomlabError::InvalidPreset("smooth2d requires m = 1, d = 2".into()));
            }
            if params.len() != 2 {
                return Err(HomlabError::InvalidPreset("smooth2d takes [p, q]".into()));
            }
            let (p, q) = (params[0], params[1]);
            let (lo, hi) = scalar_bounds(p, q)?;
            let a = PeriodicField::from_fn(2, n, vec![1, 1, 2, 2], |idx, y| {
                if idx[2] == idx[3] {
                    p + q * (TWO_PI * y[0]).cos() * (TWO_PI * y[1]).cos()
                } else {
                    0.0
                }
            });
            Ok(CoefficientSet {
                m: 1,
                d: 2,
                n,
                a,
                v: PeriodicField::zeros(2, n, vec![1, 1, 2]),
                b: PeriodicField::zeros(2, n, vec![1, 1, 2]),
                c: PeriodicField::zeros(2, n, vec![1, 1]),
                lambda,
                mu: lo.min(1.0 / hi),
                kappa: 0.0,
                symmetric_a: true,
            })
        }
    }
}

/// Margins reported by `validate_coefficients`; negative margins mean failure.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// min over nodes and probes of (quadratic form - mu |xi|^2)
    pub ellipticity_margin_lower: f64,
    /// min over nodes and probes of (mu^{-1} |xi|^2 - quadratic form)
    pub ellipticity_margin_upper: f64,
    pub sup_v: f64,
    pub sup_b: f64,
    pub sup_c: f64,
    /// kappa - max sup-norm of the lower-order coefficients
    pub kappa_margin: f64,
    /// finite-difference Holder(1/2) seminorm estimate of A
    pub holder_seminorm: f64,
    pub symmetric_a: bool,
    pub ok: bool,
}

/// Deterministic probe directions: unit vectors in R^{m x d}.
pub fn probe_directions(m: usize, d: usize, count: usize) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9e3779b9);
    let mut probes = Vec::with_capacity(count);
    // coordinate directions first, then random unit vectors
    for k in 0..(m * d).min(count) {
        let mut xi = vec![0.0; m * d];
        xi[k] = 1.0;
        probes.push(xi);
    }
    while probes.len() < count {
        let mut xi: Vec<f64> = (0..m * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-3 {
            continue;
        }
        for x in &mut xi {
            *x /= norm;
        }
        probes.push(xi);
    }
    probes
}

/// Check the ellipticity, boundedness and regularity margins on the grid.
pub fn validate_coefficients(cs: &CoefficientSet) -> ValidationReport {
    let (m, d) = (cs.m, cs.d);
    let total = cs.n.pow(d as u32);
    let probes = probe_directions(m, d, 32);

    let mut lower = f64::INFINITY;
    let mut upper = f64::INFINITY;
    for g in 0..total {
        for xi in &probes {
            // xi indexed as xi[alpha * d + i]
            let mut q = 0.0;
            for alpha in 0..m {
                for beta in 0..m {
                    for i in 0..d {
                        for j in 0..d {
                            q += cs.a.nodal(cs.a_comp(alpha, beta, i, j))[g]
                                * xi[alpha * d + i]
                                * xi[beta * d + j];
                        }
                    }
                }
            }
            let norm2: f64 = xi.iter().map(|x| x * x).sum();
            lower = lower.min(q - cs.mu * norm2);
            upper = upper.min(norm2 / cs.mu - q);
        }
    }

    let sup = |f: &PeriodicField| {
        (0..f.num_comps())
            .map(|c| f.nodal(c).iter().fold(0.0f64, |acc, &v| acc.max(v.abs())))
            .fold(0.0f64, f64::max)
    };
    let sup_v = sup(&cs.v);
    let sup_b = sup(&cs.b);
    let sup_c = sup(&cs.c);
    let kappa_margin = cs.kappa - sup_v.max(sup_b).max(sup_c);

    // Holder(1/2) seminorm estimate from adjacent-node differences of A
    let h = 1.0 / cs.n as f64;
    let mut holder = 0.0f64;
    for comp in 0..cs.a.num_comps() {
        let vals = cs.a.nodal(comp);
        for g in 0..total {
            for axis in 0..d {
                let gn = neighbor_periodic(g, axis, cs.n, d);
                holder = holder.max((vals[gn] - vals[g]).abs() / h.sqrt());
            }
        }
    }

    let symmetric_a = check_symmetric(&cs.a, m, d);
    ValidationReport {
        ellipticity_margin_lower: lower,
        ellipticity_margin_upper: upper,
        sup_v,
        sup_b,
        sup_c,
        kappa_margin,
        holder_seminorm: holder,
        symmetric_a,
        ok: lower >= -1e-12 && upper >= -1e-12 && kappa_margin >= -1e-12,
    }
}

fn neighbor_periodic(g: usize, axis: usize, n: usize, d: usize) -> usize {
    if d == 1 {
        (g + 1) % n
    } else if axis == 0 {
        let (i, j) = (g / n, g % n);
        ((i + 1) % n) * n + j
    } else {
        let (i, j) = (g / n, g % n);
        i * n + (j + 1) % n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_preset_is_exact() {
        let cs = build_preset(Preset::Identity, &[], 1, 2, 16, 1.0).unwrap();
        let report = validate_coefficients(&cs);
        assert!(report.ok);
        assert_relative_eq!(report.ellipticity_margin_lower, 0.0, epsilon = 1e-12);
        assert_relative_eq!(report.ellipticity_margin_upper, 0.0, epsilon = 1e-12);
        assert_eq!(report.sup_v, 0.0);
        assert_eq!(report.sup_c, 0.0);
        // constant field sampled anywhere is the identity
        let val = cs.a.sample(cs.a_comp(0, 0, 0, 0), &[0.37, 0.91]);
        assert_relative_eq!(val, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar1d_extremal_bounds() {
        let cs = build_preset(Preset::Scalar1d, &[2.0, 1.0], 1, 1, 64, 1.0).unwrap();
        assert_relative_eq!(cs.mu, 1.0 / 3.0, epsilon = 1e-12);
        let report = validate_coefficients(&cs);
        assert!(report.ok, "margins: {report:?}");
        // cos(pi) = -1 at y = 0.5
        assert_relative_eq!(cs.a.sample(0, &[0.5]), 1.0, epsilon = 1e-12);
        // periodic reduction: 1.25 -> 0.25, cos(pi/2) = 0
        assert_relative_eq!(cs.a.sample(0, &[1.25]), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_coefficient_rejected() {
        let err = build_preset(Preset::Scalar1d, &[1.0, 2.0], 1, 1, 64, 1.0);
        assert!(err.is_err());
    }

    #[test]
    fn unknown_preset_name() {
        assert!("voigt".parse::<Preset>().is_err());
    }

    #[test]
    fn layered_preset_shape() {
        let cs = build_preset(Preset::Layered, &[2.0, 1.0], 1, 2, 64, 1.0).unwrap();
        // y2-independent, diagonal
        let a00 = cs.a.sample(cs.a_comp(0, 0, 0, 0), &[0.25, 0.7]);
        assert_relative_eq!(a00, 2.0, epsilon = 1e-12);
        let a01 = cs.a.sample(cs.a_comp(0, 0, 0, 1), &[0.25, 0.7]);
        assert_relative_eq!(a01, 0.0, epsilon = 1e-12);
        assert!(validate_coefficients(&cs).ok);
    }

    #[test]
    fn periodicity_exact_on_shifts() {
        let cs = build_preset(Preset::Smooth2d, &[2.0, 1.0], 1, 2, 32, 1.0).unwrap();
        let comp = cs.a_comp(0, 0, 0, 0);
        for &(zx, zy) in &[(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
            for &(x, y) in &[(0.13, 0.77), (0.5, 0.25)] {
                let v0 = cs.a.sample(comp, &[x, y]);
                let v1 = cs.a.sample(comp, &[x + zx, y + zy]);
                assert_relative_eq!(v0, v1, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn nodal_spectral_round_trip() {
        let cs = build_preset(Preset::Smooth2d, &[2.0, 1.0], 1, 2, 32, 1.0).unwrap();
        let comp = cs.a_comp(0, 0, 1, 1);
        let coords: Vec<f64> = (0..32).map(|i| i as f64 / 32.0).collect();
        let vals = cs.a.eval_lattice(comp, &[coords.clone(), coords]);
        for (a, b) in vals.iter().zip(cs.a.nodal(comp).iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }
}
