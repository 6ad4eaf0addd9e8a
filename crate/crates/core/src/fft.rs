//! Small multi-dimensional FFT layer over `rustfft` for d = 1, 2.
//!
//! Spectral data is stored as full complex coefficient arrays normalized so
//! that `coeffs[0]` is the mean and nodal values are recovered by the plain
//! inverse transform.

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry((len, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(len)
                } else {
                    planner.plan_fft_forward(len)
                }
            })
            .clone()
    })
}

fn transform_axis(dims: &[usize], data: &mut [Complex<f64>], axis: usize, inverse: bool) {
    let len = dims[axis];
    let fft = plan(len, inverse);
    match dims.len() {
        1 => fft.process(data),
        2 => {
            let (n0, n1) = (dims[0], dims[1]);
            if axis == 1 {
                for row in data.chunks_exact_mut(n1) {
                    fft.process(row);
                }
            } else {
                let mut col = vec![Complex::new(0.0, 0.0); n0];
                for j in 0..n1 {
                    for i in 0..n0 {
                        col[i] = data[i * n1 + j];
                    }
                    fft.process(&mut col);
                    for i in 0..n0 {
                        data[i * n1 + j] = col[i];
                    }
                }
            }
        }
        _ => panic!("only d in {{1,2}} supported"),
    }
}

/// Forward transform of real nodal data into normalized Fourier coefficients.
pub fn forward(dims: &[usize], nodal: &[f64]) -> Vec<Complex<f64>> {
    let total: usize = dims.iter().product();
    assert_eq!(nodal.len(), total);
    let mut data: Vec<Complex<f64>> = nodal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for axis in 0..dims.len() {
        transform_axis(dims, &mut data, axis, false);
    }
    let scale = 1.0 / total as f64;
    for c in &mut data {
        *c *= scale;
    }
    data
}

/// Inverse transform back to real nodal values.
pub fn inverse(dims: &[usize], coeffs: &[Complex<f64>]) -> Vec<f64> {
    let total: usize = dims.iter().product();
    assert_eq!(coeffs.len(), total);
    let mut data = coeffs.to_vec();
    for axis in 0..dims.len() {
        transform_axis(dims, &mut data, axis, true);
    }
    data.iter().map(|c| c.re).collect()
}

/// Signed integer frequency for index `k` on an `n`-grid; the Nyquist mode
/// maps to 0 so that spectral differentiation of real data stays real.
pub fn signed_freq(k: usize, n: usize) -> f64 {
    if 2 * k < n {
        k as f64
    } else if 2 * k == n {
        0.0
    } else {
        k as f64 - n as f64
    }
}

/// Spectral derivative along `axis`: multiply by 2*pi*i*freq.
pub fn deriv(dims: &[usize], coeffs: &[Complex<f64>], axis: usize) -> Vec<Complex<f64>> {
    let mut out = coeffs.to_vec();
    match dims.len() {
        1 => {
            let n = dims[0];
            for (k, c) in out.iter_mut().enumerate() {
                *c *= Complex::new(0.0, 2.0 * PI * signed_freq(k, n));
            }
        }
        2 => {
            let (n0, n1) = (dims[0], dims[1]);
            for i in 0..n0 {
                for j in 0..n1 {
                    let f = if axis == 0 {
                        signed_freq(i, n0)
                    } else {
                        signed_freq(j, n1)
                    };
                    out[i * n1 + j] *= Complex::new(0.0, 2.0 * PI * f);
                }
            }
        }
        _ => panic!("only d in {{1,2}} supported"),
    }
    out
}

fn axis_phase_table(n: usize, coords: &[f64]) -> Vec<Complex<f64>> {
    // table[s * n + k] = phase of mode k at coordinate coords[s]
    let mut table = vec![Complex::new(0.0, 0.0); coords.len() * n];
    for (s, &y) in coords.iter().enumerate() {
        for k in 0..n {
            table[s * n + k] = if 2 * k == n {
                // split Nyquist: real cosine keeps trigonometric interpolation real
                Complex::new((PI * n as f64 * y).cos(), 0.0)
            } else {
                let arg = 2.0 * PI * signed_freq(k, n) * y;
                Complex::new(arg.cos(), arg.sin())
            };
        }
    }
    table
}

/// Trigonometric interpolation of a spectral field at a tensor grid of points.
///
/// `axis_coords[a]` lists the coordinates along axis `a`; the result is
/// row-major over the tensor product of the coordinate lists.
pub fn eval_tensor(dims: &[usize], coeffs: &[Complex<f64>], axis_coords: &[Vec<f64>]) -> Vec<f64> {
    assert_eq!(dims.len(), axis_coords.len());
    match dims.len() {
        1 => {
            let n = dims[0];
            let table = axis_phase_table(n, &axis_coords[0]);
            axis_coords[0]
                .iter()
                .enumerate()
                .map(|(s, _)| {
                    let mut acc = Complex::new(0.0, 0.0);
                    for k in 0..n {
                        acc += coeffs[k] * table[s * n + k];
                    }
                    acc.re
                })
                .collect()
        }
        2 => {
            let (n0, n1) = (dims[0], dims[1]);
            let (p0, p1) = (axis_coords[0].len(), axis_coords[1].len());
            let t0 = axis_phase_table(n0, &axis_coords[0]);
            let t1 = axis_phase_table(n1, &axis_coords[1]);
            // partial sum over axis 1 first: tmp[k0 * p1 + t]
            let mut tmp = vec![Complex::new(0.0, 0.0); n0 * p1];
            for k0 in 0..n0 {
                for t in 0..p1 {
                    let mut acc = Complex::new(0.0, 0.0);
                    for k1 in 0..n1 {
                        acc += coeffs[k0 * n1 + k1] * t1[t * n1 + k1];
                    }
                    tmp[k0 * p1 + t] = acc;
                }
            }
            let mut out = vec![0.0; p0 * p1];
            for s in 0..p0 {
                for t in 0..p1 {
                    let mut acc = Complex::new(0.0, 0.0);
                    for k0 in 0..n0 {
                        acc += tmp[k0 * p1 + t] * t0[s * n0 + k0];
                    }
                    out[s * p1 + t] = acc.re;
                }
            }
            out
        }
        _ => panic!("only d in {{1,2}} supported"),
    }
}

/// L2 norm over the cell of a spectral field (Parseval).
pub fn spectral_l2(coeffs: &[Complex<f64>]) -> f64 {
    coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn round_trip_2d() {
        let dims = [8, 8];
        let nodal: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let coeffs = forward(&dims, &nodal);
        let back = inverse(&dims, &coeffs);
        for (a, b) in nodal.iter().zip(back.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn deriv_of_sine() {
        let n = 32;
        let nodal: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * i as f64 / n as f64).sin())
            .collect();
        let coeffs = forward(&[n], &nodal);
        let d = deriv(&[n], &coeffs, 0);
        let back = inverse(&[n], &d);
        for (i, v) in back.iter().enumerate() {
            let exact = 2.0 * PI * (2.0 * PI * i as f64 / n as f64).cos();
            assert_relative_eq!(v, &exact, epsilon = 1e-10);
        }
    }

    #[test]
    fn tensor_eval_matches_nodes() {
        let n = 16;
        let dims = [n, n];
        let nodal: Vec<f64> = (0..n * n)
            .map(|i| {
                let x = (i / n) as f64 / n as f64;
                let y = (i % n) as f64 / n as f64;
                (2.0 * PI * x).cos() * (2.0 * PI * y).sin() + 0.5
            })
            .collect();
        let coeffs = forward(&dims, &nodal);
        let coords: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let vals = eval_tensor(&dims, &coeffs, &[coords.clone(), coords]);
        for (a, b) in nodal.iter().zip(vals.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }
}
