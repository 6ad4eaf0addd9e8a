//! First-order corrector expansion w_eps = u_eps - u_0 - eps chi_k(x/eps) phi_k
//! under the three phi-strategies, and its error norms.

use crate::error::{HomlabError, Result};
use crate::fields::PeriodicField;
use crate::grid::{GridFunction, Norm};
use crate::smoothing::{boundary_cutoff, smooth_seps, smooth_steklov};
use std::str::FromStr;

/// How the slowly-varying factors phi_0, phi_k are built from u_0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiStrategy {
    /// phi_0 = S_eps(psi_{4 eps} u_0), phi_k = S_eps(psi_{4 eps} d_k u_0),
    /// where psi_s vanishes inside the s/2 boundary strip and is 1 outside s
    SingleSmooth,
    /// double mollification S_eps^2 with the tighter cutoff psi_{2 eps}
    DoubleSmooth,
    /// Steklov smoothing of the reflected extension, no cutoff
    Steklov,
}

impl FromStr for PhiStrategy {
    type Err = HomlabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "single_smooth" => Ok(PhiStrategy::SingleSmooth),
            "double" | "double_smooth" => Ok(PhiStrategy::DoubleSmooth),
            "steklov" => Ok(PhiStrategy::Steklov),
            other => Err(HomlabError::InvalidConfig(format!(
                "unknown phi strategy `{other}` (expected single|double|steklov)"
            ))),
        }
    }
}

impl PhiStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            PhiStrategy::SingleSmooth => "single_smooth",
            PhiStrategy::DoubleSmooth => "double_smooth",
            PhiStrategy::Steklov => "steklov",
        }
    }
}

/// Error norms of one expansion (f:4.13).
#[derive(Debug, Clone, serde::Serialize)]
pub struct ExpansionErrors {
    pub l2_diff: f64,
    pub h1_w: f64,
    pub l2_w: f64,
    /// eps^{-1/2} times the H1 norm of u_eps over the eps-boundary layer
    pub layer_energy: f64,
}

/// Build the phi fields: component k * m + gamma holds phi_k^gamma,
/// k = 0 for the zeroth corrector and k = 1..d for the gradient factors.
pub fn build_phi(u0: &GridFunction, eps: f64, strategy: PhiStrategy) -> Result<GridFunction> {
    let (d, n, m) = (u0.d(), u0.n(), u0.m());
    let mut raw = GridFunction::zeros(d, n, (d + 1) * m);
    for gamma in 0..m {
        raw.comp_mut(gamma).copy_from_slice(u0.comp(gamma));
        for k in 1..=d {
            let g = u0.gradient(gamma, k - 1);
            raw.comp_mut(k * m + gamma).copy_from_slice(&g);
        }
    }
    match strategy {
        // psi_{s} cuts the s-boundary layer: zero inside the s/2 strip,
        // one outside the s strip (boundary_cutoff(r) ramps on r..2r)
        PhiStrategy::SingleSmooth => {
            apply_cutoff(&mut raw, 2.0 * eps)?;
            smooth_seps(&raw, eps)
        }
        PhiStrategy::DoubleSmooth => {
            apply_cutoff(&mut raw, eps)?;
            smooth_seps(&smooth_seps(&raw, eps)?, eps)
        }
        PhiStrategy::Steklov => smooth_steklov(&raw, eps),
    }
}

fn apply_cutoff(f: &mut GridFunction, r: f64) -> Result<()> {
    let psi = boundary_cutoff(r, f.d(), f.n())?;
    let nodes = f.num_nodes();
    for c in 0..f.m() {
        let comp = f.comp_mut(c);
        for node in 0..nodes {
            comp[node] *= psi.comp(0)[node];
        }
    }
    Ok(())
}

/// w_eps^beta = u_eps^beta - u_0^beta
///            - eps sum_{k=0}^d chi_k^{beta gamma}(x/eps) phi_k^gamma.
pub fn build_w(
    u_eps: &GridFunction,
    u0: &GridFunction,
    chi: &[PeriodicField],
    phi: &GridFunction,
    eps: f64,
) -> Result<GridFunction> {
    let (d, n, m) = (u_eps.d(), u_eps.n(), u_eps.m());
    if !u_eps.same_layout(u0) {
        return Err(HomlabError::ShapeMismatch(
            "u_eps and u_0 live on different grids".into(),
        ));
    }
    if chi.len() != d + 1 {
        return Err(HomlabError::ShapeMismatch(format!(
            "expected {} corrector fields, got {}",
            d + 1,
            chi.len()
        )));
    }
    if phi.d() != d || phi.n() != n || phi.m() != (d + 1) * m {
        return Err(HomlabError::ShapeMismatch(
            "phi fields do not match the grid layout".into(),
        ));
    }
    let h = 1.0 / n as f64;
    let coords: Vec<f64> = (0..=n).map(|i| i as f64 * h / eps).collect();
    let axes: Vec<Vec<f64>> = (0..d).map(|_| coords.clone()).collect();
    let nodes = u_eps.num_nodes();

    let mut w = u_eps.sub(u0);
    for (k, chik) in chi.iter().enumerate() {
        if chik.shape() != [m, m] {
            return Err(HomlabError::ShapeMismatch("corrector field must be m x m".into()));
        }
        for beta in 0..m {
            for gamma in 0..m {
                let vals = chik.eval_lattice(chik.comp_index(&[beta, gamma]), &axes);
                let pk = phi.comp(k * m + gamma).to_vec();
                let comp = w.comp_mut(beta);
                for node in 0..nodes {
                    comp[node] -= eps * vals[node] * pk[node];
                }
            }
        }
    }
    Ok(w)
}

/// The four monitored norms of one expansion.
pub fn expansion_errors(
    u_eps: &GridFunction,
    u0: &GridFunction,
    w: &GridFunction,
    eps: f64,
) -> ExpansionErrors {
    ExpansionErrors {
        l2_diff: u_eps.sub(u0).norm(Norm::L2),
        h1_w: w.norm(Norm::H1),
        l2_w: w.norm(Norm::L2),
        layer_energy: u_eps.layer_norm(eps, true) / eps.sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn steklov_preserves_constants_and_linears() {
        let n = 128;
        let eps = 1.0 / 16.0;
        let c = GridFunction::from_fn(2, n, 1, |_, _| 4.5);
        let phi = build_phi(&c, eps, PhiStrategy::Steklov).unwrap();
        for &v in phi.comp(0) {
            assert_relative_eq!(v, 4.5, epsilon = 1e-12);
        }
        for k in 1..=2 {
            for &v in phi.comp(k) {
                assert_relative_eq!(v, 0.0, epsilon = 1e-12);
            }
        }
        let lin = GridFunction::from_fn(2, n, 1, |_, x| x[0]);
        let phi = build_phi(&lin, eps, PhiStrategy::Steklov).unwrap();
        let np = n + 1;
        for i0 in n / 4..3 * n / 4 {
            for i1 in n / 4..3 * n / 4 {
                let node = i0 * np + i1;
                assert_relative_eq!(phi.comp(0)[node], i0 as f64 / n as f64, epsilon = 1e-12);
                assert_relative_eq!(phi.comp(1)[node], 1.0, epsilon = 1e-12);
                assert_relative_eq!(phi.comp(2)[node], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_smooth_cuts_off_near_boundary() {
        let n = 256;
        let eps = 1.0 / 32.0;
        let c = GridFunction::from_fn(2, n, 1, |_, _| 1.0);
        let phi = build_phi(&c, eps, PhiStrategy::SingleSmooth).unwrap();
        let np = n + 1;
        // deep interior (dist > 9 eps): the constant survives
        let mid = (n / 2) * np + n / 2;
        assert_relative_eq!(phi.comp(0)[mid], 1.0, epsilon = 1e-12);
        // on the boundary the cutoff has killed everything within reach
        assert_relative_eq!(phi.comp(0)[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_phi_reduces_to_difference() {
        let n = 32;
        let u_eps = GridFunction::from_fn(2, n, 1, |_, x| x[0] * x[1]);
        let u0 = GridFunction::from_fn(2, n, 1, |_, x| x[0]);
        let chi: Vec<_> = (0..=2)
            .map(|_| PeriodicField::zeros(2, 32, vec![1, 1]))
            .collect();
        let phi = GridFunction::zeros(2, n, 3);
        let w = build_w(&u_eps, &u0, &chi, &phi, 0.125).unwrap();
        let diff = u_eps.sub(&u0);
        for (a, b) in w.comp(0).iter().zip(diff.comp(0).iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn trivial_expansion_errors() {
        let n = 32;
        let u = GridFunction::from_fn(2, n, 1, |_, x| x[0] + x[1]);
        let w = GridFunction::zeros(2, n, 1);
        let eps = 0.125;
        let e = expansion_errors(&u, &u, &w, eps);
        assert_eq!(e.l2_diff, 0.0);
        assert_eq!(e.h1_w, 0.0);
        assert_eq!(e.l2_w, 0.0);
        assert!(e.layer_energy > 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let u_eps = GridFunction::zeros(2, 32, 1);
        let u0 = GridFunction::zeros(2, 32, 1);
        let chi = vec![PeriodicField::zeros(2, 32, vec![1, 1])];
        let phi = GridFunction::zeros(2, 32, 3);
        assert!(build_w(&u_eps, &u0, &chi, &phi, 0.125).is_err());
    }
}
