//! Shared numerical kernels: uniform 1-D grids, classical RK4 in reverse
//! time, WENO derivative reconstruction and interpolation, and the Thomas
//! algorithm for tridiagonal systems.
//!
//! Boundary stencils for both WENO kernels are closed with linearly
//! extrapolated ghost values, which keeps linear data exact up to the edge.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};

/// Regularisation of the WENO smoothness indicators.
pub const WENO_EPS: f64 = 1e-6;

/// Relative pivot threshold below which a tridiagonal pivot counts as zero.
pub const PIVOT_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformGrid1D {
    lower: f64,
    upper: f64,
    n_nodes: usize,
}

impl UniformGrid1D {
    pub fn new(lower: f64, upper: f64, n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 {
            return config(format!("grid needs at least 2 nodes, got {n_nodes}"));
        }
        if !(lower.is_finite() && upper.is_finite() && upper > lower) {
            return config(format!("grid bounds [{lower}, {upper}] are not increasing"));
        }
        Ok(Self { lower, upper, n_nodes })
    }

    /// Unit interval with the given number of nodes.
    pub fn unit(n_nodes: usize) -> Result<Self> {
        Self::new(0.0, 1.0, n_nodes)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.n_nodes - 1) as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.n_nodes {
            self.upper
        } else {
            self.lower + k as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|k| self.node(k)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Cell index `j` (so that `x` lies in `[node(j), node(j+1)]`) and the
    /// fractional offset inside that cell.
    pub fn locate(&self, x: f64) -> Result<(usize, f64)> {
        if !self.contains(x) {
            return Err(Error::Domain { x, lower: self.lower, upper: self.upper });
        }
        let s = (x - self.lower) / self.spacing();
        let j = (s.floor() as usize).min(self.n_nodes - 2);
        Ok((j, s - j as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalSystem {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl TridiagonalSystem {
    pub fn new(sub: Vec<f64>, diag: Vec<f64>, sup: Vec<f64>, rhs: Vec<f64>) -> Result<Self> {
        let n = diag.len();
        if n == 0 || rhs.len() != n || sub.len() + 1 != n || sup.len() + 1 != n {
            return config(format!(
                "tridiagonal shapes: sub {}, diag {}, sup {}, rhs {}",
                sub.len(),
                n,
                sup.len(),
                rhs.len()
            ));
        }
        Ok(Self { sub, diag, sup, rhs })
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Strict row diagonal dominance `|diag_k| > |sub_{k-1}| + |sup_k|`.
    pub fn is_diagonally_dominant(&self) -> bool {
        let n = self.len();
        (0..n).all(|k| {
            let lo = if k > 0 { self.sub[k - 1].abs() } else { 0.0 };
            let hi = if k + 1 < n { self.sup[k].abs() } else { 0.0 };
            self.diag[k].abs() > lo + hi
        })
    }

    /// `A x` for the stored matrix.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|k| {
                let mut v = self.diag[k] * x[k];
                if k > 0 {
                    v += self.sub[k - 1] * x[k - 1];
                }
                if k + 1 < n {
                    v += self.sup[k] * x[k + 1];
                }
                v
            })
            .collect()
    }
}

/// Solves the system with the Thomas algorithm.
pub fn thomas_solve(system: &TridiagonalSystem) -> Result<Vec<f64>> {
    let n = system.len();
    let scale = system.diag.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let tiny = PIVOT_TOL * scale;
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];

    let mut pivot = system.diag[0];
    if pivot.abs() <= tiny {
        return Err(Error::Singular { row: 0, pivot });
    }
    if n > 1 {
        c[0] = system.sup[0] / pivot;
    }
    d[0] = system.rhs[0] / pivot;
    for k in 1..n {
        let a = system.sub[k - 1];
        pivot = system.diag[k] - a * c[k - 1];
        if pivot.abs() <= tiny {
            return Err(Error::Singular { row: k, pivot });
        }
        if k + 1 < n {
            c[k] = system.sup[k] / pivot;
        }
        d[k] = (system.rhs[k] - a * d[k - 1]) / pivot;
    }
    for k in (0..n - 1).rev() {
        d[k] -= c[k] * d[k + 1];
    }
    Ok(d)
}

/// Values sampled on a time mesh, stored in increasing time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Number of uniform steps covering `span` with steps no longer than `dt`.
pub fn step_count(span: f64, dt: f64) -> usize {
    ((span / dt) - 1e-9).ceil().max(1.0) as usize
}

/// One classical RK4 step of `dy/dt = rhs(t, y)` from `t` to `t + h`
/// (`h` may be negative).
pub fn rk4_step<F>(rhs: &mut F, t: f64, y: f64, h: f64) -> f64
where
    F: FnMut(f64, f64) -> f64,
{
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
    let k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
    let k4 = rhs(t + h, y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Integrates `dy/dt = rhs(t, y)` from the terminal condition at `t_end`
/// down to `t_start`. The mesh is uniform with step `(t_end - t_start) / n`
/// where `n` is the smallest count with step `<= dt`.
pub fn rk4_integrate_backward<F>(
    mut rhs: F,
    terminal_value: f64,
    t_end: f64,
    t_start: f64,
    dt: f64,
) -> Result<Trajectory>
where
    F: FnMut(f64, f64) -> f64,
{
    if !(dt > 0.0) || !(t_start < t_end) {
        return config(format!("need dt > 0 and t_start < t_end (dt = {dt}, [{t_start}, {t_end}])"));
    }
    let n = step_count(t_end - t_start, dt);
    let h = (t_end - t_start) / n as f64;
    let mut values = vec![0.0; n + 1];
    values[n] = terminal_value;
    let mut y = terminal_value;
    for step in (0..n).rev() {
        let t = t_start + (step + 1) as f64 * h;
        y = rk4_step(&mut rhs, t, y, -h);
        if !y.is_finite() {
            return Err(Error::NonFinite { step: n - step, t: t - h, y });
        }
        values[step] = y;
    }
    let times = (0..=n).map(|k| t_start + k as f64 * h).collect();
    Ok(Trajectory { times, values })
}

#[inline]
fn ghost(values: &[f64], j: isize) -> f64 {
    let n = values.len() as isize;
    if j < 0 {
        values[0] + j as f64 * (values[1] - values[0])
    } else if j >= n {
        let last = values[(n - 1) as usize];
        last + (j - n + 1) as f64 * (last - values[(n - 2) as usize])
    } else {
        values[j as usize]
    }
}

#[inline]
fn weno5_combine(v1: f64, v2: f64, v3: f64, v4: f64, v5: f64) -> f64 {
    let s1 = 13.0 / 12.0 * (v1 - 2.0 * v2 + v3).powi(2) + 0.25 * (v1 - 4.0 * v2 + 3.0 * v3).powi(2);
    let s2 = 13.0 / 12.0 * (v2 - 2.0 * v3 + v4).powi(2) + 0.25 * (v2 - v4).powi(2);
    let s3 = 13.0 / 12.0 * (v3 - 2.0 * v4 + v5).powi(2) + 0.25 * (3.0 * v3 - 4.0 * v4 + v5).powi(2);
    let a1 = 0.1 / (WENO_EPS + s1).powi(2);
    let a2 = 0.6 / (WENO_EPS + s2).powi(2);
    let a3 = 0.3 / (WENO_EPS + s3).powi(2);
    let sum = a1 + a2 + a3;
    let p1 = v1 / 3.0 - 7.0 / 6.0 * v2 + 11.0 / 6.0 * v3;
    let p2 = -v2 / 6.0 + 5.0 / 6.0 * v3 + v4 / 3.0;
    let p3 = v3 / 3.0 + 5.0 / 6.0 * v4 - v5 / 6.0;
    (a1 * p1 + a2 * p2 + a3 * p3) / sum
}

/// Left- and right-biased WENO5 derivatives at a single node `k`, reading
/// neighbours (and ghost values past the ends) straight from `values`.
pub fn weno5_node(values: &[f64], k: usize, h: f64) -> (f64, f64) {
    let k = k as isize;
    let f = |j: isize| ghost(values, j);
    let d = |j: isize| (f(j + 1) - f(j)) / h; // forward difference at j
    let left = weno5_combine(d(k - 3), d(k - 2), d(k - 1), d(k), d(k + 1));
    let right = weno5_combine(d(k + 2), d(k + 1), d(k), d(k - 1), d(k - 2));
    (left, right)
}

/// Upwind-biased WENO5 first derivatives (Hamilton–Jacobi flavour) at every
/// node of a uniform grid with spacing `h`.
pub fn weno5_derivatives(values: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() < 7 {
        return config(format!("WENO5 needs at least 7 nodes, got {}", values.len()));
    }
    Ok((0..values.len()).map(|k| weno5_node(values, k, h)).unzip())
}

/// Third-order WENO interpolation of nodal `values` at `x`.
///
/// Interior cells blend the two quadratic stencils with nonlinear weights;
/// the two edge cells use the single quadratic stencil that stays inside the
/// grid.
pub fn weno3_interpolate(grid: &UniformGrid1D, values: &[f64], x: f64) -> Result<f64> {
    let n = grid.n_nodes();
    if values.len() != n {
        return config(format!("{} values for a {}-node grid", values.len(), n));
    }
    let (j, theta) = grid.locate(x)?;
    if theta.abs() < 1e-12 {
        return Ok(values[j]);
    }
    if (1.0 - theta).abs() < 1e-12 {
        return Ok(values[j + 1]);
    }
    if n == 2 {
        return Ok(values[0] + theta * (values[1] - values[0]));
    }
    let fj = values[j];
    let d1 = values[j + 1] - fj;
    let base = fj + theta * d1;
    let curve = 0.5 * theta * (theta - 1.0);

    let left = (j > 0).then(|| values[j + 1] - 2.0 * fj + values[j - 1]);
    let right = (j + 2 < n).then(|| values[j + 2] - 2.0 * values[j + 1] + fj);
    let value = match (left, right) {
        (Some(dl), Some(dr)) => {
            let al = (2.0 - theta) / 3.0 / (WENO_EPS + dl * dl).powi(2);
            let ar = (1.0 + theta) / 3.0 / (WENO_EPS + dr * dr).powi(2);
            base + curve * (al * dl + ar * dr) / (al + ar)
        }
        (Some(dl), None) => base + curve * dl,
        (None, Some(dr)) => base + curve * dr,
        (None, None) => base,
    };
    Ok(value)
}
