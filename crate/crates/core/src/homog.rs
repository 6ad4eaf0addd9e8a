//! Constant homogenized coefficients and their independent 1D oracle.

use crate::error::{HomlabError, Result};
use crate::fields::{probe_directions, CoefficientSet, PeriodicField};
use crate::quad;
use serde::Serialize;

/// Constant tensors of the homogenized operator.
#[derive(Debug, Clone, Serialize)]
pub struct HomogenizedSet {
    pub m: usize,
    pub d: usize,
    /// a_hat[alpha][beta][i][j], flattened
    pub a: Vec<f64>,
    /// v_hat[alpha][beta][i]
    pub v: Vec<f64>,
    /// b_hat[alpha][beta][i]
    pub b: Vec<f64>,
    /// c_hat[alpha][beta]
    pub c: Vec<f64>,
    pub lambda: f64,
}

impl HomogenizedSet {
    pub fn a_hat(&self, alpha: usize, beta: usize, i: usize, j: usize) -> f64 {
        self.a[((alpha * self.m + beta) * self.d + i) * self.d + j]
    }

    pub fn v_hat(&self, alpha: usize, beta: usize, i: usize) -> f64 {
        self.v[(alpha * self.m + beta) * self.d + i]
    }

    pub fn b_hat(&self, alpha: usize, beta: usize, i: usize) -> f64 {
        self.b[(alpha * self.m + beta) * self.d + i]
    }

    pub fn c_hat(&self, alpha: usize, beta: usize) -> f64 {
        self.c[alpha * self.m + beta]
    }

    /// Probe ellipticity of A_hat against the bound mu (meaningful when A = A*).
    pub fn probe_ellipticity(&self, mu: f64) -> (f64, f64) {
        let probes = probe_directions(self.m, self.d, 32);
        let mut lower = f64::INFINITY;
        let mut upper = f64::INFINITY;
        for xi in &probes {
            let mut q = 0.0;
            for alpha in 0..self.m {
                for beta in 0..self.m {
                    for i in 0..self.d {
                        for j in 0..self.d {
                            q += self.a_hat(alpha, beta, i, j) * xi[alpha * self.d + i] * xi[beta * self.d + j];
                        }
                    }
                }
            }
            let n2: f64 = xi.iter().map(|x| x * x).sum();
            lower = lower.min(q - mu * n2);
            upper = upper.min(n2 / mu - q);
        }
        (lower, upper)
    }
}

/// Cell averages of coefficient-corrector products:
/// a_hat_ij = <a_ij + a_ik d_k chi_j>, V_hat_i = <V_i + a_ij d_j chi_0>,
/// B_hat_i = <B_i + B_j d_j chi_i>, c_hat = <c + B_i d_i chi_0>.
pub fn assemble_homogenized(cs: &CoefficientSet, chi: &[PeriodicField]) -> Result<HomogenizedSet> {
    let (m, d) = (cs.m, cs.d);
    if chi.len() != d + 1 {
        return Err(HomlabError::ShapeMismatch(format!(
            "expected {} corrector fields, got {}",
            d + 1,
            chi.len()
        )));
    }
    for field in chi {
        if field.shape() != [m, m] || field.n() != cs.n || field.d() != d {
            return Err(HomlabError::ShapeMismatch(
                "corrector field shape disagrees with the coefficient set".into(),
            ));
        }
    }
    let total = cs.n.pow(d as u32) as f64;
    let mean_product = |coef: &[f64], grad: &[f64]| -> f64 {
        coef.iter().zip(grad.iter()).map(|(x, y)| x * y).sum::<f64>() / total
    };

    let mut a_hat = vec![0.0; m * m * d * d];
    for alpha in 0..m {
        for beta in 0..m {
            for i in 0..d {
                for j in 0..d {
                    let mut val = cs.a.mean(cs.a_comp(alpha, beta, i, j));
                    for gamma in 0..m {
                        for k in 0..d {
                            let coef = cs.a.nodal(cs.a_comp(alpha, gamma, i, k));
                            let grad = chi[j + 1].deriv_nodal(chi[j + 1].comp_index(&[gamma, beta]), k);
                            val += mean_product(coef, &grad);
                        }
                    }
                    a_hat[((alpha * m + beta) * d + i) * d + j] = val;
                }
            }
        }
    }

    let mut v_hat = vec![0.0; m * m * d];
    for alpha in 0..m {
        for beta in 0..m {
            for i in 0..d {
                let mut val = cs.v.mean(cs.v_comp(alpha, beta, i));
                for gamma in 0..m {
                    for j in 0..d {
                        let coef = cs.a.nodal(cs.a_comp(alpha, gamma, i, j));
                        let grad = chi[0].deriv_nodal(chi[0].comp_index(&[gamma, beta]), j);
                        val += mean_product(coef, &grad);
                    }
                }
                v_hat[(alpha * m + beta) * d + i] = val;
            }
        }
    }

    let mut b_hat = vec![0.0; m * m * d];
    for alpha in 0..m {
        for beta in 0..m {
            for i in 0..d {
                let mut val = cs.b.mean(cs.b_comp(alpha, beta, i));
                for gamma in 0..m {
                    for j in 0..d {
                        let coef = cs.b.nodal(cs.b_comp(alpha, gamma, j));
                        let grad = chi[i + 1].deriv_nodal(chi[i + 1].comp_index(&[gamma, beta]), j);
                        val += mean_product(coef, &grad);
                    }
                }
                b_hat[(alpha * m + beta) * d + i] = val;
            }
        }
    }

    let mut c_hat = vec![0.0; m * m];
    for alpha in 0..m {
        for beta in 0..m {
            let mut val = cs.c.mean(cs.c_comp(alpha, beta));
            for gamma in 0..m {
                for i in 0..d {
                    let coef = cs.b.nodal(cs.b_comp(alpha, gamma, i));
                    let grad = chi[0].deriv_nodal(chi[0].comp_index(&[gamma, beta]), i);
                    val += mean_product(coef, &grad);
                }
            }
            c_hat[alpha * m + beta] = val;
        }
    }

    Ok(HomogenizedSet {
        m,
        d,
        a: a_hat,
        v: v_hat,
        b: b_hat,
        c: c_hat,
        lambda: cs.lambda,
    })
}

/// Independent oracle for scalar 1D coefficients by adaptive quadrature:
/// A_hat = (int 1/a)^{-1}, V_hat = A_hat int(V/a), B_hat = A_hat int(B/a),
/// c_hat = int c + V_hat int(B/a) - int(B V / a).
pub fn oracle_1d_homogenize(cs: &CoefficientSet) -> Result<HomogenizedSet> {
    if cs.d != 1 || cs.m != 1 {
        return Err(HomlabError::InvalidConfig(
            "the 1D oracle requires d = 1, m = 1".into(),
        ));
    }
    let tol = 1e-12;
    let a = |y: f64| cs.a.sample(0, &[y]);
    let v = |y: f64| cs.v.sample(0, &[y]);
    let b = |y: f64| cs.b.sample(0, &[y]);
    let c = |y: f64| cs.c.sample(0, &[y]);
    let inv_a = quad::integrate(|y| 1.0 / a(y), 0.0, 1.0, tol);
    let a_hat = 1.0 / inv_a;
    let v_over_a = quad::integrate(|y| v(y) / a(y), 0.0, 1.0, tol);
    let b_over_a = quad::integrate(|y| b(y) / a(y), 0.0, 1.0, tol);
    let c_int = quad::integrate(c, 0.0, 1.0, tol);
    let bv_over_a = quad::integrate(|y| b(y) * v(y) / a(y), 0.0, 1.0, tol);
    let v_hat = a_hat * v_over_a;
    Ok(HomogenizedSet {
        m: 1,
        d: 1,
        a: vec![a_hat],
        v: vec![v_hat],
        b: vec![a_hat * b_over_a],
        c: vec![c_int + v_hat * b_over_a - bv_over_a],
        lambda: cs.lambda,
    })
}
