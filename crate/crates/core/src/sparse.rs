//! Compressed sparse row matrices and the Krylov solvers used by the
//! domain solver: preconditioned CG for symmetric operators and BiCGStab
//! when lower-order terms break symmetry.

use crate::error::{HomlabError, Result};

#[derive(Debug, Clone)]
pub struct Csr {
    pub nrows: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Allocate a matrix with a fixed sparsity pattern (cols sorted per row).
    pub fn with_pattern(nrows: usize, row_ptr: Vec<usize>, cols: Vec<usize>) -> Self {
        let nnz = cols.len();
        Csr {
            nrows,
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
        }
    }

    /// Accumulate into an existing entry; the position must be in the pattern.
    pub fn add(&mut self, row: usize, col: usize, val: f64) {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        let slice = &self.cols[lo..hi];
        match slice.binary_search(&col) {
            Ok(pos) => self.vals[lo + pos] += val,
            Err(_) => panic!("entry ({row}, {col}) outside the sparsity pattern"),
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for row in 0..self.nrows {
            let mut acc = 0.0;
            for idx in self.row_ptr[row]..self.row_ptr[row + 1] {
                acc += self.vals[idx] * x[self.cols[idx]];
            }
            y[row] = acc;
        }
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.nrows + 1];
        for &c in &self.cols {
            counts[c + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut cols = vec![0usize; self.cols.len()];
        let mut vals = vec![0.0; self.vals.len()];
        let mut next = row_ptr.clone();
        for row in 0..self.nrows {
            for idx in self.row_ptr[row]..self.row_ptr[row + 1] {
                let c = self.cols[idx];
                let pos = next[c];
                cols[pos] = row;
                vals[pos] = self.vals[idx];
                next[c] += 1;
            }
        }
        Csr {
            nrows: self.nrows,
            row_ptr,
            cols,
            vals,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of a Krylov solve.
pub struct KrylovResult {
    pub x: Vec<f64>,
    pub relative_residual: f64,
    pub iterations: usize,
}

/// Preconditioned conjugate gradients. `project` is applied to right-hand
/// side and iterates to stay in the range of a singular consistent system.
pub fn pcg<Op, Pr, Pj>(
    op: Op,
    prec: Pr,
    project: Pj,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    verbose: bool,
) -> Result<KrylovResult>
where
    Op: Fn(&[f64], &mut [f64]),
    Pr: Fn(&[f64]) -> Vec<f64>,
    Pj: Fn(&mut [f64]),
{
    let nn = b.len();
    let mut rhs = b.to_vec();
    project(&mut rhs);
    let bnorm = norm(&rhs);
    let mut x = vec![0.0; nn];
    if bnorm == 0.0 {
        return Ok(KrylovResult {
            x,
            relative_residual: 0.0,
            iterations: 0,
        });
    }
    let mut r = rhs.clone();
    let mut z = prec(&r);
    project(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; nn];
    for it in 0..max_iter {
        op(&p, &mut ap);
        project(&mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(HomlabError::SolverStagnation {
                residual: norm(&r) / bnorm,
                iterations: it,
            });
        }
        let alpha = rz / pap;
        for i in 0..nn {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm(&r) / bnorm;
        if verbose {
            eprintln!("pcg iter {:4}  residual {rel:.3e}", it + 1);
        }
        if rel <= tol {
            project(&mut x);
            return Ok(KrylovResult {
                x,
                relative_residual: rel,
                iterations: it + 1,
            });
        }
        z = prec(&r);
        project(&mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..nn {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(HomlabError::SolverStagnation {
        residual: norm(&r) / bnorm,
        iterations: max_iter,
    })
}

/// Preconditioned BiCGStab for the nonsymmetric case.
pub fn bicgstab<Op, Pr, Pj>(
    op: Op,
    prec: Pr,
    project: Pj,
    b: &[f64],
    tol: f64,
    max_iter: usize,
    verbose: bool,
) -> Result<KrylovResult>
where
    Op: Fn(&[f64], &mut [f64]),
    Pr: Fn(&[f64]) -> Vec<f64>,
    Pj: Fn(&mut [f64]),
{
    let nn = b.len();
    let mut rhs = b.to_vec();
    project(&mut rhs);
    let bnorm = norm(&rhs);
    let mut x = vec![0.0; nn];
    if bnorm == 0.0 {
        return Ok(KrylovResult {
            x,
            relative_residual: 0.0,
            iterations: 0,
        });
    }
    let mut r = rhs.clone();
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; nn];
    let mut p = vec![0.0; nn];
    let mut t = vec![0.0; nn];
    for it in 0..max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            return Err(HomlabError::SolverStagnation {
                residual: norm(&r) / bnorm,
                iterations: it,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..nn {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let mut ph = prec(&p);
        project(&mut ph);
        op(&ph, &mut v);
        project(&mut v);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = (0..nn).map(|i| r[i] - alpha * v[i]).collect();
        if norm(&s) / bnorm <= tol {
            for i in 0..nn {
                x[i] += alpha * ph[i];
            }
            project(&mut x);
            return Ok(KrylovResult {
                x,
                relative_residual: norm(&s) / bnorm,
                iterations: it + 1,
            });
        }
        let mut sh = prec(&s);
        project(&mut sh);
        op(&sh, &mut t);
        project(&mut t);
        let tt = dot(&t, &t);
        if tt.abs() < 1e-300 {
            return Err(HomlabError::SolverStagnation {
                residual: norm(&s) / bnorm,
                iterations: it,
            });
        }
        omega = dot(&t, &s) / tt;
        for i in 0..nn {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        let rel = norm(&r) / bnorm;
        if verbose {
            eprintln!("bicgstab iter {:4}  residual {rel:.3e}", it + 1);
        }
        if rel <= tol {
            project(&mut x);
            return Ok(KrylovResult {
                x,
                relative_residual: rel,
                iterations: it + 1,
            });
        }
    }
    Err(HomlabError::SolverStagnation {
        residual: norm(&r) / bnorm,
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn laplacian_1d(n: usize) -> Csr {
        // tridiagonal [-1, 2, -1] plus identity
        let mut row_ptr = vec![0usize];
        let mut cols = Vec::new();
        for i in 0..n {
            if i > 0 {
                cols.push(i - 1);
            }
            cols.push(i);
            if i + 1 < n {
                cols.push(i + 1);
            }
            row_ptr.push(cols.len());
        }
        let mut mat = Csr::with_pattern(n, row_ptr, cols);
        for i in 0..n {
            mat.add(i, i, 3.0);
            if i > 0 {
                mat.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                mat.add(i, i + 1, -1.0);
            }
        }
        mat
    }

    #[test]
    fn cg_solves_spd_system() {
        let n = 50;
        let mat = laplacian_1d(n);
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.1).sin()).collect();
        let res = pcg(
            |x, y| mat.matvec(x, y),
            |r| r.to_vec(),
            |_| {},
            &b,
            1e-12,
            1000,
            false,
        )
        .unwrap();
        let mut ax = vec![0.0; n];
        mat.matvec(&res.x, &mut ax);
        for (a, b) in ax.iter().zip(b.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn bicgstab_matches_cg_on_spd() {
        let n = 40;
        let mat = laplacian_1d(n);
        let b: Vec<f64> = (0..n).map(|i| ((i * i) as f64 * 0.01).cos()).collect();
        let res = bicgstab(
            |x, y| mat.matvec(x, y),
            |r| r.to_vec(),
            |_| {},
            &b,
            1e-12,
            1000,
            false,
        )
        .unwrap();
        let mut ax = vec![0.0; n];
        mat.matvec(&res.x, &mut ax);
        for (a, b) in ax.iter().zip(b.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn transpose_round_trip() {
        let mat = laplacian_1d(10);
        let tt = mat.transpose().transpose();
        assert_eq!(mat.cols, tt.cols);
        for (a, b) in mat.vals.iter().zip(tt.vals.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }
}
