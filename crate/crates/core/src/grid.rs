//! Nodal grid functions on the unit box and their quadrature-backed norms.

use serde::Serialize;

/// Norms computable on a grid function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Norm {
    L2,
    H1,
    Lp(f64),
    W1p(f64),
    MaxGrad,
}

/// Vector-valued nodal function on the uniform (n+1)^d grid over [0,1]^d.
#[derive(Debug, Clone)]
pub struct GridFunction {
    d: usize,
    n: usize,
    m: usize,
    /// component-major: values[c * nodes + node]
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(d: usize, n: usize, m: usize) -> Self {
        assert!(d == 1 || d == 2);
        assert!(n >= 8, "grid must have at least 8 cells per axis");
        let nodes = (n + 1).pow(d as u32);
        GridFunction {
            d,
            n,
            m,
            values: vec![0.0; m * nodes],
        }
    }

    pub fn from_fn<F>(d: usize, n: usize, m: usize, f: F) -> Self
    where
        F: Fn(usize, &[f64]) -> f64,
    {
        let mut g = Self::zeros(d, n, m);
        let np = n + 1;
        let h = 1.0 / n as f64;
        let nodes = np.pow(d as u32);
        let mut x = vec![0.0; d];
        for c in 0..m {
            for node in 0..nodes {
                if d == 1 {
                    x[0] = node as f64 * h;
                } else {
                    x[0] = (node / np) as f64 * h;
                    x[1] = (node % np) as f64 * h;
                }
                g.values[c * nodes + node] = f(c, &x);
            }
        }
        g
    }

    /// Wrap existing nodal data (component-major, m inferred from length).
    pub fn from_nodal(d: usize, n: usize, values: Vec<f64>) -> Self {
        let nodes = (n + 1).pow(d as u32);
        assert_eq!(values.len() % nodes, 0, "nodal data length mismatch");
        let m = values.len() / nodes;
        GridFunction { d, n, m, values }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n + 1
    }

    pub fn num_nodes(&self) -> usize {
        (self.n + 1).pow(self.d as u32)
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        let nodes = self.num_nodes();
        &self.values[c * nodes..(c + 1) * nodes]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let nodes = self.num_nodes();
        &mut self.values[c * nodes..(c + 1) * nodes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node_index(&self, i: &[usize]) -> usize {
        match self.d {
            1 => i[0],
            _ => i[0] * (self.n + 1) + i[1],
        }
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        let np = self.n + 1;
        let h = self.h();
        match self.d {
            1 => vec![node as f64 * h],
            _ => vec![(node / np) as f64 * h, (node % np) as f64 * h],
        }
    }

    /// Distance to the boundary of the unit box.
    pub fn boundary_distance(x: &[f64]) -> f64 {
        x.iter()
            .map(|&v| v.min(1.0 - v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn same_layout(&self, other: &GridFunction) -> bool {
        self.d == other.d && self.n == other.n && self.m == other.m
    }

    /// u - v
    pub fn sub(&self, other: &GridFunction) -> GridFunction {
        assert!(self.same_layout(other));
        let mut out = self.clone();
        for (a, b) in out.values.iter_mut().zip(other.values.iter()) {
            *a -= b;
        }
        out
    }

    /// Centered-difference gradient of component `c` along `axis`
    /// (one-sided at the boundary).
    pub fn gradient(&self, c: usize, axis: usize) -> Vec<f64> {
        let np = self.n + 1;
        let h = self.h();
        let vals = self.comp(c);
        let nodes = self.num_nodes();
        let mut out = vec![0.0; nodes];
        let diff_1d = |get: &dyn Fn(usize) -> f64, i: usize, len: usize| -> f64 {
            if i == 0 {
                (get(1) - get(0)) / h
            } else if i == len - 1 {
                (get(len - 1) - get(len - 2)) / h
            } else {
                (get(i + 1) - get(i - 1)) / (2.0 * h)
            }
        };
        match self.d {
            1 => {
                for i in 0..np {
                    out[i] = diff_1d(&|k| vals[k], i, np);
                }
            }
            _ => {
                for i0 in 0..np {
                    for i1 in 0..np {
                        let node = i0 * np + i1;
                        out[node] = if axis == 0 {
                            diff_1d(&|k| vals[k * np + i1], i0, np)
                        } else {
                            diff_1d(&|k| vals[i0 * np + k], i1, np)
                        };
                    }
                }
            }
        }
        out
    }

    /// Integrate `f(point_values)` over the box with the composite
    /// midpoint/trapezoid (Simpson-weight) tensor rule; the integrand sees
    /// the multilinear interpolant of the nodal data at each quadrature point.
    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        self.integrate_weighted(|_| 1.0, f)
    }

    /// Same rule, with a per-cell weight (used for boundary-layer fractions).
    pub fn integrate_weighted<W, F>(&self, cell_weight: W, f: F) -> f64
    where
        W: Fn(&[usize]) -> f64,
        F: Fn(&[f64]) -> f64,
    {
        let np = self.n + 1;
        let h = self.h();
        let m = self.m;
        let mut point = vec![0.0; m];
        let mut acc = 0.0;
        match self.d {
            1 => {
                let w = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0];
                for cell in 0..self.n {
                    let cw = cell_weight(&[cell]);
                    if cw == 0.0 {
                        continue;
                    }
                    let mut cell_acc = 0.0;
                    for (q, &wq) in w.iter().enumerate() {
                        for c in 0..m {
                            let vals = self.comp(c);
                            point[c] = match q {
                                0 => vals[cell],
                                1 => 0.5 * (vals[cell] + vals[cell + 1]),
                                _ => vals[cell + 1],
                            };
                        }
                        cell_acc += wq * f(&point);
                    }
                    acc += cw * h * cell_acc;
                }
            }
            _ => {
                let w = [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0];
                for c0 in 0..self.n {
                    for c1 in 0..self.n {
                        let cw = cell_weight(&[c0, c1]);
                        if cw == 0.0 {
                            continue;
                        }
                        let corners = [
                            c0 * np + c1,
                            c0 * np + c1 + 1,
                            (c0 + 1) * np + c1,
                            (c0 + 1) * np + c1 + 1,
                        ];
                        let mut cell_acc = 0.0;
                        for q0 in 0..3 {
                            for q1 in 0..3 {
                                let (s, t) = (q0 as f64 * 0.5, q1 as f64 * 0.5);
                                for c in 0..m {
                                    let vals = self.comp(c);
                                    let (v00, v01, v10, v11) = (
                                        vals[corners[0]],
                                        vals[corners[1]],
                                        vals[corners[2]],
                                        vals[corners[3]],
                                    );
                                    point[c] = v00 * (1.0 - s) * (1.0 - t)
                                        + v01 * (1.0 - s) * t
                                        + v10 * s * (1.0 - t)
                                        + v11 * s * t;
                                }
                                cell_acc += w[q0] * w[q1] * f(&point);
                            }
                        }
                        acc += cw * h * h * cell_acc;
                    }
                }
            }
        }
        acc
    }

    fn gradient_magnitude_sq(&self) -> Vec<f64> {
        let nodes = self.num_nodes();
        let mut g2 = vec![0.0; nodes];
        for c in 0..self.m {
            for axis in 0..self.d {
                let g = self.gradient(c, axis);
                for (acc, v) in g2.iter_mut().zip(g.iter()) {
                    *acc += v * v;
                }
            }
        }
        g2
    }

    fn as_scalar_grid(&self, nodal: Vec<f64>) -> GridFunction {
        GridFunction {
            d: self.d,
            n: self.n,
            m: 1,
            values: nodal,
        }
    }

    /// Requested norm of the function over the whole box.
    pub fn norm(&self, which: Norm) -> f64 {
        match which {
            Norm::L2 => self
                .integrate(|u| u.iter().map(|v| v * v).sum::<f64>())
                .sqrt(),
            Norm::Lp(p) => {
                assert!(p >= 1.0);
                self.integrate(|u| {
                    u.iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt()
                        .powf(p)
                })
                .powf(1.0 / p)
            }
            Norm::H1 => {
                let l2 = self.integrate(|u| u.iter().map(|v| v * v).sum::<f64>());
                let g2 = self.as_scalar_grid(self.gradient_magnitude_sq());
                let grad = g2.integrate(|u| u[0].max(0.0));
                (l2 + grad).sqrt()
            }
            Norm::W1p(p) => {
                assert!(p >= 1.0);
                let lp = self.norm(Norm::Lp(p));
                let g2 = self.as_scalar_grid(self.gradient_magnitude_sq());
                let gp = g2
                    .integrate(|u| u[0].max(0.0).sqrt().powf(p))
                    .powf(1.0 / p);
                (lp.powf(p) + gp.powf(p)).powf(1.0 / p)
            }
            Norm::MaxGrad => self
                .gradient_magnitude_sq()
                .iter()
                .fold(0.0f64, |acc, &v| acc.max(v))
                .sqrt(),
        }
    }

    /// Fraction of a grid cell covered by the boundary layer {dist <= r}.
    fn layer_fraction(&self, cell: &[usize], r: f64) -> f64 {
        let h = self.h();
        // overlap of the cell with the inner box [r, 1-r]^d, per axis
        let mut inner = 1.0;
        for &ci in cell.iter() {
            let lo = ci as f64 * h;
            let hi = lo + h;
            let ov = (hi.min(1.0 - r) - lo.max(r)).max(0.0);
            inner *= ov / h;
        }
        if 2.0 * r >= 1.0 {
            return 1.0;
        }
        1.0 - inner
    }

    /// Quadrature of |f|^2 (and |grad f|^2 for H1) over the boundary layer
    /// {dist(x, boundary) <= r}, returned as the square root.
    pub fn layer_norm(&self, r: f64, with_gradient: bool) -> f64 {
        let mut total = self.integrate_weighted(|cell| self.layer_fraction(cell, r), |u| {
            u.iter().map(|v| v * v).sum::<f64>()
        });
        if with_gradient {
            let g2 = self.as_scalar_grid(self.gradient_magnitude_sq());
            total += g2.integrate_weighted(|cell| self.layer_fraction(cell, r), |u| u[0].max(0.0));
        }
        total.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_norms() {
        let u = GridFunction::from_fn(2, 16, 1, |_, _| 1.0);
        assert_relative_eq!(u.norm(Norm::L2), 1.0, epsilon = 1e-13);
        assert_relative_eq!(u.norm(Norm::H1), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn linear_l2_exact() {
        let u = GridFunction::from_fn(2, 256, 1, |_, x| x[0]);
        assert_relative_eq!(u.norm(Norm::L2), (1.0f64 / 3.0).sqrt(), epsilon = 1e-9);
        assert_relative_eq!(u.norm(Norm::MaxGrad), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn layer_norm_frame_area() {
        let u = GridFunction::from_fn(2, 64, 1, |_, _| 1.0);
        // area of the frame of width 1/8: 1 - (3/4)^2 = 7/16
        assert_relative_eq!(u.layer_norm(0.125, false), (7.0f64 / 16.0).sqrt(), epsilon = 1e-12);
        // zero function
        let z = GridFunction::zeros(2, 64, 1);
        assert_eq!(z.layer_norm(0.125, false), 0.0);
        // layer covering everything
        assert_relative_eq!(u.layer_norm(0.5, false), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_of_linear() {
        let u = GridFunction::from_fn(2, 16, 1, |_, x| 2.0 * x[0] - x[1]);
        let g0 = u.gradient(0, 0);
        let g1 = u.gradient(0, 1);
        for v in g0 {
            assert_relative_eq!(v, 2.0, epsilon = 1e-12);
        }
        for v in g1 {
            assert_relative_eq!(v, -1.0, epsilon = 1e-12);
        }
    }
}
