//! Stationary algae-management problem with a discharge-dependent carrying
//! capacity `K(q) = K0 + K1 q`, solved by policy iteration on a monotone
//! upwind finite-difference scheme.
//!
//! Policy improvement minimises the *discrete* Hamiltonian at each node,
//! `b(z, q)⁺ D⁺Φ - b(z, q)⁻ D⁻Φ + (a/2)(q - q̂)² + z^m`, where the upwind
//! difference follows the sign of the drift `b`. On each sign region the
//! objective is smooth and its stationary points solve a cubic; region
//! boundaries are the roots of `b(z, q) = 0`. Policy evaluation then solves
//! a strictly diagonally dominant tridiagonal system.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::numerics::{thomas_solve, TridiagonalSystem, UniformGrid1D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgaeScheme {
    /// Full upwind discretisation of the drift.
    #[default]
    Upwind,
    /// The control-free growth `r z` is discretised exponentially,
    /// `r (Φ_{k+1} - Φ_k) / ln(z_{k+1} / z_k)`, and the remaining
    /// (nonpositive) controlled part by backward differences.
    ExponentialSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgaeParams {
    /// Intrinsic growth rate `r`.
    pub growth_rate: f64,
    pub k0: f64,
    pub k1: f64,
    /// Detachment coefficient `α`.
    pub detachment: f64,
    pub discount: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Target discharge `q̂`.
    pub q_hat: f64,
    /// Weight `a` of the discharge deviation.
    pub weight: f64,
    /// Exponent `m` of the algae disutility `z^m`.
    pub exponent: f64,
    pub scheme: AlgaeScheme,
}

impl Default for AlgaeParams {
    fn default() -> Self {
        Self {
            growth_rate: 1.0,
            k0: 0.4,
            k1: 0.3,
            detachment: 0.5,
            discount: 2.0,
            q_min: 0.1,
            q_max: 2.0,
            q_hat: 1.0,
            weight: 0.1,
            exponent: 0.5,
            scheme: AlgaeScheme::Upwind,
        }
    }
}

impl AlgaeParams {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("algae.growth_rate", self.growth_rate),
            ("algae.detachment", self.detachment),
            ("algae.discount", self.discount),
            ("algae.weight", self.weight),
            ("algae.exponent", self.exponent),
            ("algae.k0", self.k0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return config(format!("{key} must be > 0, got {v}"));
            }
        }
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return config(format!("algae.k1 must be >= 0, got {}", self.k1));
        }
        if !(0.0 < self.q_min && self.q_min < self.q_hat && self.q_hat < self.q_max) {
            return config(format!(
                "need 0 < algae.q_min < algae.q_hat < algae.q_max, got {}, {}, {}",
                self.q_min, self.q_hat, self.q_max
            ));
        }
        Ok(())
    }

    pub fn capacity(&self, q: f64) -> f64 {
        self.k0 + self.k1 * q
    }

    /// Upper end of the population range, `K0 + K1 q_max`.
    pub fn domain_upper(&self) -> f64 {
        self.capacity(self.q_max)
    }

    fn control_cost(&self, q: f64) -> f64 {
        0.5 * self.weight * (q - self.q_hat).powi(2)
    }
}

/// Population drift `r z (1 - z / K(q)) - α q z`.
pub fn drift(z: f64, q: f64, params: &AlgaeParams) -> f64 {
    params.growth_rate * z * (1.0 - z / params.capacity(q)) - params.detachment * q * z
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerMin {
    pub value: f64,
    pub q: f64,
    /// The cubic could not be solved and the minimum comes from sampling.
    pub fallback: bool,
}

/// Real roots of `c3 q³ + c2 q² + c1 q + c0`, or `None` when every
/// coefficient vanishes or one is not finite.
fn real_cubic_roots(c3: f64, c2: f64, c1: f64, c0: f64) -> Option<Vec<f64>> {
    let coeffs = [c3, c2, c1, c0];
    if coeffs.iter().any(|c| !c.is_finite()) {
        return None;
    }
    let scale = coeffs.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return None;
    }
    let tiny = 1e-14 * scale;
    let mut roots = Vec::with_capacity(3);
    if c3.abs() > tiny {
        let (a, b, c) = (c2 / c3, c1 / c3, c0 / c3);
        let shift = a / 3.0;
        let p = b - a * a / 3.0;
        let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
        let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
        if p.abs() < 1e-300 && q.abs() < 1e-300 {
            roots.push(-shift);
        } else if disc > 0.0 {
            let s = disc.sqrt();
            roots.push((-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt() - shift);
        } else {
            let r = (-p / 3.0).sqrt();
            let phi = (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0).acos();
            for k in 0..3 {
                roots.push(2.0 * r * ((phi - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() - shift);
            }
        }
        // Newton polish against cancellation in the closed forms.
        for x in roots.iter_mut() {
            for _ in 0..3 {
                let f = ((c3 * *x + c2) * *x + c1) * *x + c0;
                let df = (3.0 * c3 * *x + 2.0 * c2) * *x + c1;
                if df != 0.0 {
                    let step = f / df;
                    if step.is_finite() {
                        *x -= step;
                    }
                }
            }
        }
    } else if c2.abs() > tiny {
        let disc = c1 * c1 - 4.0 * c2 * c0;
        if disc >= 0.0 {
            let s = disc.sqrt();
            let t = -0.5 * (c1 + c1.signum() * s);
            if t != 0.0 {
                roots.push(t / c2);
                roots.push(c0 / t);
            } else {
                roots.push(0.0);
            }
        }
    } else if c1.abs() > tiny {
        roots.push(-c0 / c1);
    }
    Some(roots)
}

/// Stationary points in `[q_min, q_max]` of
/// `q ↦ drift(z, q) dphi + (a/2)(q - q̂)²`, or `None` if the cubic degenerates.
fn stationary_points(z: f64, dphi: f64, p: &AlgaeParams) -> Option<Vec<f64>> {
    let (k0, k1, a, qh) = (p.k0, p.k1, p.weight, p.q_hat);
    let (r, al) = (p.growth_rate, p.detachment);
    let c = dphi * z;
    let c3 = a * k1 * k1;
    let c2 = a * (2.0 * k0 * k1 - qh * k1 * k1) - c * al * k1 * k1;
    let c1 = a * (k0 * k0 - 2.0 * qh * k0 * k1) - 2.0 * c * al * k0 * k1;
    let c0 = -a * qh * k0 * k0 - c * al * k0 * k0 + c * r * k1 * z;
    let roots = real_cubic_roots(c3, c2, c1, c0)?;
    Some(roots.into_iter().filter(|q| q.is_finite() && *q >= p.q_min && *q <= p.q_max).collect())
}

/// Roots of `b(z, q) = 0` in `[q_min, q_max]` for `z > 0`:
/// `α K1 q² + (α K0 - r K1) q - r (K0 - z) = 0`.
fn drift_roots(z: f64, p: &AlgaeParams) -> Vec<f64> {
    if z <= 0.0 {
        return Vec::new();
    }
    let (r, al) = (p.growth_rate, p.detachment);
    real_cubic_roots(0.0, al * p.k1, al * p.k0 - r * p.k1, -r * (p.k0 - z))
        .unwrap_or_default()
        .into_iter()
        .filter(|q| *q >= p.q_min && *q <= p.q_max)
        .collect()
}

/// Picks the smallest objective value among `candidates`, ties toward `q̂`.
fn pick<F: Fn(f64) -> f64>(candidates: &[f64], objective: F, q_hat: f64) -> (f64, f64) {
    let values: Vec<f64> = candidates.iter().map(|&q| objective(q)).collect();
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-14 * (1.0 + best.abs());
    let mut choice = (f64::INFINITY, f64::NAN);
    for (&q, &v) in candidates.iter().zip(&values) {
        if v <= best + tol && (choice.1.is_nan() || (q - q_hat).abs() < (choice.1 - q_hat).abs()) {
            choice = (v, q);
        }
    }
    choice
}

fn sampled_min<F: Fn(f64) -> f64>(objective: F, p: &AlgaeParams, n: usize) -> (f64, f64) {
    let candidates: Vec<f64> =
        (0..n).map(|i| p.q_min + (p.q_max - p.q_min) * i as f64 / (n - 1) as f64).collect();
    pick(&candidates, objective, p.q_hat)
}

/// Minimises `drift(z, q) dphi + (a/2)(q - q̂)² + z^m` over the discharge
/// range.
pub fn inner_minimize(z: f64, dphi: f64, params: &AlgaeParams) -> InnerMin {
    let objective = |q: f64| drift(z, q, params) * dphi + params.control_cost(q) + z.powf(params.exponent);
    match stationary_points(z, dphi, params) {
        Some(mut cands) => {
            cands.extend([params.q_min, params.q_max]);
            let (value, q) = pick(&cands, objective, params.q_hat);
            InnerMin { value, q, fallback: false }
        }
        None => {
            let (value, q) = sampled_min(objective, params, 10_000);
            InnerMin { value, q, fallback: true }
        }
    }
}

/// Minimises the upwind discrete Hamiltonian at a node. `d_plus` is `None`
/// at the top node, where the drift is never positive.
fn discrete_minimize(z: f64, d_plus: Option<f64>, d_minus: f64, state_cost: f64, p: &AlgaeParams) -> (f64, f64, bool) {
    let mut fallback = false;
    match p.scheme {
        AlgaeScheme::Upwind => {
            let dp = d_plus.unwrap_or(0.0);
            let objective = |q: f64| {
                let b = drift(z, q, p);
                b.max(0.0) * dp + b.min(0.0) * d_minus + p.control_cost(q) + state_cost
            };
            let mut cands = vec![p.q_min, p.q_max];
            for (d, positive) in [(dp, true), (d_minus, false)] {
                match stationary_points(z, d, p) {
                    Some(roots) => {
                        cands.extend(roots.into_iter().filter(|&q| (drift(z, q, p) >= 0.0) == positive));
                    }
                    None => fallback = true,
                }
            }
            cands.extend(drift_roots(z, p));
            let (v, q) = if fallback { sampled_min(objective, p, 10_000) } else { pick(&cands, objective, p.q_hat) };
            (v, q, fallback)
        }
        AlgaeScheme::ExponentialSplit => {
            // Only the controlled part depends on q; it is nonpositive, so
            // its upwind difference is always the backward one.
            let objective = |q: f64| controlled_drift(z, q, p) * d_minus + p.control_cost(q) + state_cost;
            // `r z` does not depend on q, so the stationary points are those
            // of the full drift.
            let mut cands = vec![p.q_min, p.q_max];
            match stationary_points(z, d_minus, p) {
                Some(roots) => cands.extend(roots),
                None => fallback = true,
            }
            let (v, q) = if fallback { sampled_min(objective, p, 10_000) } else { pick(&cands, objective, p.q_hat) };
            (v, q, fallback)
        }
    }
}

/// Drift minus the control-free growth `r z`.
fn controlled_drift(z: f64, q: f64, p: &AlgaeParams) -> f64 {
    -p.growth_rate * z * z / p.capacity(q) - p.detachment * q * z
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgaePolicySolution {
    #[serde(skip)]
    pub grid: UniformGrid1D,
    pub z: Vec<f64>,
    pub value: Vec<f64>,
    pub policy: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm residual of the discrete HJB equation before each
    /// improvement step, and at the returned solution last.
    pub residuals: Vec<f64>,
    /// Some node fell back to dense sampling.
    pub sampling_fallback: bool,
}

struct Improvement {
    policy: Vec<f64>,
    residual: f64,
    fallback: bool,
}

fn improve<C: Fn(f64) -> f64>(grid: &UniformGrid1D, value: &[f64], p: &AlgaeParams, cost: &C) -> Improvement {
    let n = grid.n_nodes();
    let h = grid.spacing();
    let mut policy = vec![p.q_hat; n];
    let mut residual = 0.0_f64;
    let mut fallback = false;
    for k in 0..n {
        let z = grid.node(k);
        let d_plus = (k + 1 < n).then(|| (value[k + 1] - value[k]) / h);
        let d_minus = if k > 0 { (value[k] - value[k - 1]) / h } else { 0.0 };
        let (mut hmin, q, fb) = discrete_minimize(z, d_plus, d_minus, cost(z), p);
        if p.scheme == AlgaeScheme::ExponentialSplit && k > 0 {
            hmin += growth_term(grid, value, k, p);
        }
        policy[k] = q;
        fallback |= fb;
        residual = residual.max((p.discount * value[k] - hmin).abs());
    }
    Improvement { policy, residual, fallback }
}

/// Exponentially fitted `r z Φ'` at interior node `k`; at the top node it
/// joins the backward difference.
fn growth_term(grid: &UniformGrid1D, value: &[f64], k: usize, p: &AlgaeParams) -> f64 {
    let (coef, other) = growth_coefficient(grid, k, p);
    coef * (value[other] - value[k]) * if other > k { 1.0 } else { -1.0 }
}

/// Coefficient and neighbour index of the discretised `r z Φ'` term.
fn growth_coefficient(grid: &UniformGrid1D, k: usize, p: &AlgaeParams) -> (f64, usize) {
    let n = grid.n_nodes();
    let z = grid.node(k);
    if k + 1 < n {
        (p.growth_rate / (grid.node(k + 1) / z).ln(), k + 1)
    } else {
        (p.growth_rate * z / grid.spacing(), k - 1)
    }
}

fn evaluate<C: Fn(f64) -> f64>(grid: &UniformGrid1D, policy: &[f64], p: &AlgaeParams, cost: &C) -> Result<Vec<f64>> {
    let n = grid.n_nodes();
    let h = grid.spacing();
    let (mut sub, mut diag, mut sup, mut rhs) = (vec![0.0; n - 1], vec![0.0; n], vec![0.0; n - 1], vec![0.0; n]);
    for k in 0..n {
        let z = grid.node(k);
        let q = policy[k];
        rhs[k] = p.control_cost(q) + cost(z);
        let (mut forward, mut backward) = match p.scheme {
            AlgaeScheme::Upwind => {
                let b = drift(z, q, p);
                (b.max(0.0) / h, (-b).max(0.0) / h)
            }
            AlgaeScheme::ExponentialSplit => (0.0, -controlled_drift(z, q, p) / h),
        };
        if p.scheme == AlgaeScheme::ExponentialSplit && k > 0 {
            let (coef, other) = growth_coefficient(grid, k, p);
            if other > k {
                forward += coef;
            } else {
                backward -= coef;
            }
        }
        if k + 1 == n {
            forward = 0.0;
        }
        if k == 0 {
            backward = 0.0;
        }
        diag[k] = p.discount + forward + backward;
        if k + 1 < n {
            sup[k] = -forward;
        }
        if k > 0 {
            sub[k - 1] = -backward;
        }
    }
    let system = TridiagonalSystem::new(sub, diag, sup, rhs)?;
    if !system.is_diagonally_dominant() {
        return Err(Error::Validation {
            location: "algae policy evaluation".into(),
            message: "matrix is not strictly diagonally dominant".into(),
        });
    }
    thomas_solve(&system)
}

pub(crate) fn solve_with_cost<C: Fn(f64) -> f64>(
    params: &AlgaeParams,
    n_nodes: usize,
    tolerance: f64,
    max_iterations: usize,
    cost: C,
) -> Result<AlgaePolicySolution> {
    params.validate()?;
    if n_nodes < 3 {
        return config(format!("algae grid needs at least 3 nodes, got {n_nodes}"));
    }
    let grid = UniformGrid1D::new(0.0, params.domain_upper(), n_nodes)?;
    let mut value = vec![0.0; n_nodes];
    let mut residuals = Vec::new();
    let mut fallback = false;
    let mut iterations = 0;
    let mut converged = false;
    let mut policy = vec![params.q_hat; n_nodes];
    while iterations < max_iterations {
        let step = improve(&grid, &value, params, &cost);
        residuals.push(step.residual);
        fallback |= step.fallback;
        policy = step.policy;
        let next = evaluate(&grid, &policy, params, &cost)?;
        iterations += 1;
        let change = next.iter().zip(&value).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        value = next;
        if change <= tolerance {
            converged = true;
            break;
        }
    }
    let last = improve(&grid, &value, params, &cost);
    residuals.push(last.residual);
    Ok(AlgaePolicySolution {
        z: grid.nodes(),
        grid,
        value,
        policy,
        iterations,
        converged,
        residuals,
        sampling_fallback: fallback || last.fallback,
    })
}

/// Policy iteration from `Φ ≡ 0`. Stops when the sup-norm change of `Φ`
/// between consecutive evaluations is at most `tolerance`; `converged` is
/// false if `max_iterations` evaluations did not get there.
pub fn solve_policy_iteration(
    params: &AlgaeParams,
    n_nodes: usize,
    tolerance: f64,
    max_iterations: usize,
) -> Result<AlgaePolicySolution> {
    let m = params.exponent;
    solve_with_cost(params, n_nodes, tolerance, max_iterations, |z: f64| z.powf(m))
}

/// Largest jump of the policy between adjacent nodes, per solution.
pub fn policy_transition_metric(solutions: &[AlgaePolicySolution]) -> Vec<f64> {
    solutions
        .iter()
        .map(|s| s.policy.windows(2).fold(0.0_f64, |m, w| m.max((w[1] - w[0]).abs())))
        .collect()
}
