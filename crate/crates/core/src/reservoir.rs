//! Stationary reservoir operation under regime-switching inflow.
//!
//! Volumes are normalised by the capacity `Ȳ` and discharges by `Ȳ / 86 400`
//! (so they become fractions of the capacity per day). The HJB system
//!
//! ```text
//! δ Φ_i + Σ_{j≠i} s_ij (Φ_i - Φ_j) - H_i(y, Φ_i') = 0
//! H_i(y, p) = min_q { (Q_i - q) p + (q - Q_i)²/2 + a (q̂ - q)₊²/2 } + f(y)
//! ```
//!
//! is discretised with local Lax–Friedrichs on WENO5 (or first-order)
//! one-sided derivatives and solved by Gauss–Seidel sweeps in alternating
//! directions. The state constraint enters through the control set: at
//! `y = 0` only `q ≤ Q_i` is allowed and at `y = 1` only `q ≥ Q_i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::numerics::{weno5_node, UniformGrid1D};
use crate::regime::{next_regime, RegimeChain};
use crate::simulate::{exponential, monte_carlo, CostAccumulator, EstimateReport};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservoirScheme {
    #[default]
    Weno5,
    FirstOrder,
}

/// Choice of the Lax–Friedrichs coefficient at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dissipation {
    /// `max |Q_i - q|` over the admissible interval of the node.
    Global,
    /// `max |∂H/∂p|` over the derivatives `p⁻, p⁺` seen at the node.
    #[default]
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReservoirParams {
    /// Capacity `Ȳ` (m³).
    pub capacity: f64,
    /// Discharge bounds (m³/s).
    pub q_min: f64,
    pub q_max: f64,
    /// Discount rate (1/day).
    pub discount: f64,
    /// Environmental flow `q̂` (m³/s).
    pub environmental_flow: f64,
    /// Weight `a` of the environmental-flow shortfall.
    pub weight: f64,
    /// Volume penalty `C [(lower - y)₊² + (y - upper)₊²]` with
    /// `C = penalty_scale · 86 400 / Ȳ`.
    pub penalty_scale: f64,
    pub penalty_lower: f64,
    pub penalty_upper: f64,
    pub scheme: ReservoirScheme,
    pub dissipation: Dissipation,
}

impl Default for ReservoirParams {
    fn default() -> Self {
        Self {
            capacity: 6e7,
            q_min: 1.0,
            q_max: 200.0,
            discount: 0.01,
            environmental_flow: 10.0,
            weight: 0.2,
            penalty_scale: 5.0,
            penalty_lower: 0.2,
            penalty_upper: 0.8,
            scheme: ReservoirScheme::Weno5,
            dissipation: Dissipation::Local,
        }
    }
}

impl ReservoirParams {
    pub fn validate(&self, chain: &RegimeChain) -> Result<()> {
        for (key, v) in [("reservoir.capacity", self.capacity), ("reservoir.discount", self.discount)] {
            if !(v > 0.0 && v.is_finite()) {
                return config(format!("{key} must be > 0, got {v}"));
            }
        }
        for (key, v) in [
            ("reservoir.weight", self.weight),
            ("reservoir.penalty_scale", self.penalty_scale),
            ("reservoir.environmental_flow", self.environmental_flow),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return config(format!("{key} must be >= 0, got {v}"));
            }
        }
        let q = chain.discharges();
        let (lo, hi) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if !(self.q_min < lo && self.q_max > hi) {
            return config(format!(
                "need reservoir.q_min < min inflow < max inflow < reservoir.q_max, got {} < {lo} .. {hi} < {}",
                self.q_min, self.q_max
            ));
        }
        Ok(())
    }

    /// Discharge in m³/s to normalised units (capacity fraction per day).
    pub fn normalize(&self, q: f64) -> f64 {
        q * SECONDS_PER_DAY / self.capacity
    }

    pub fn denormalize(&self, q: f64) -> f64 {
        q * self.capacity / SECONDS_PER_DAY
    }

    /// Volume penalty `f(y)` at normalised volume `y`.
    pub fn volume_penalty(&self, y: f64) -> f64 {
        let c = self.penalty_scale * SECONDS_PER_DAY / self.capacity;
        c * ((self.penalty_lower - y).max(0.0).powi(2) + (y - self.penalty_upper).max(0.0).powi(2))
    }
}

/// Admissible discharges (m³/s) at normalised volume `y` for inflow `q_in`.
pub fn admissible_interval(y: f64, q_in: f64, params: &ReservoirParams) -> (f64, f64) {
    if y <= 0.0 {
        (params.q_min, q_in)
    } else if y >= 1.0 {
        (q_in, params.q_max)
    } else {
        (params.q_min, params.q_max)
    }
}

/// Minimises `(Q - q) p + (q - Q)²/2 + a (q̂ - q)₊²/2` over `[lo, hi]`.
/// The objective is convex; the candidates are the stationary points of
/// both branches, `q̂`, and the ends. Returns `(value, argmin)` with the
/// smallest minimiser on ties.
pub fn minimize_discharge_cost(lo: f64, hi: f64, q_in: f64, q_hat: f64, a: f64, p: f64) -> (f64, f64) {
    let g = |q: f64| (q_in - q) * p + 0.5 * (q - q_in).powi(2) + 0.5 * a * (q_hat - q).max(0.0).powi(2);
    let candidates = [q_in + p, (q_in + p + a * q_hat) / (1.0 + a), q_hat, lo, hi];
    let mut best = (f64::INFINITY, f64::INFINITY);
    for q in candidates.map(|q| q.clamp(lo, hi)) {
        let v = g(q);
        if v < best.0 || (v == best.0 && q < best.1) {
            best = (v, q);
        }
    }
    best
}

/// `min_q` of the bracket in the HJB equation at node `y`, regime `i`, in
/// normalised units. Returns `(value including f(y), q* normalised)`.
pub fn hamiltonian_min(y: f64, regime: usize, dphi: f64, params: &ReservoirParams, chain: &RegimeChain) -> (f64, f64) {
    let q_in = chain.discharge(regime);
    let (lo, hi) = admissible_interval(y, q_in, params);
    let (v, q) = minimize_discharge_cost(
        params.normalize(lo),
        params.normalize(hi),
        params.normalize(q_in),
        params.normalize(params.environmental_flow),
        params.weight,
        dphi,
    );
    (v + params.volume_penalty(y), q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryValue {
    #[serde(skip)]
    pub grid: UniformGrid1D,
    /// `values[i][k]`.
    pub values: Vec<Vec<f64>>,
    /// Optimal discharge in m³/s.
    pub discharge: Vec<Vec<f64>>,
    /// Optimal discharge divided by the regime inflow.
    pub policy: Vec<Vec<f64>>,
    /// Number of single-direction passes.
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm change after each pass.
    pub residual_history: Vec<f64>,
    /// Sup-norm over interior nodes of the discrete equation divided by its
    /// diagonal coefficient (the quantity the sweep tolerance bounds).
    pub interior_residual: f64,
}

impl StationaryValue {
    /// Linear interpolation of the discharge (m³/s) of regime `i` at `y`.
    pub fn discharge_at(&self, i: usize, y: f64) -> f64 {
        linear(&self.grid, &self.discharge[i], y)
    }

    pub fn value_at(&self, i: usize, y: f64) -> f64 {
        linear(&self.grid, &self.values[i], y)
    }
}

fn linear(grid: &UniformGrid1D, v: &[f64], y: f64) -> f64 {
    let (j, t) = grid.locate(y.clamp(0.0, 1.0)).expect("clamped into the grid");
    if j + 1 >= v.len() {
        v[v.len() - 1]
    } else {
        v[j] * (1.0 - t) + v[j + 1] * t
    }
}

/// Pieces of the nodal update shared by the solver and the tests.
struct Node {
    residual: f64,
    diag: f64,
    q: f64,
    alpha: f64,
}

fn one_sided(row: &[f64], k: usize, h: f64, scheme: ReservoirScheme) -> (f64, f64) {
    match scheme {
        ReservoirScheme::Weno5 => weno5_node(row, k, h),
        ReservoirScheme::FirstOrder => {
            let n = row.len();
            let minus = if k > 0 { (row[k] - row[k - 1]) / h } else { (row[1] - row[0]) / h };
            let plus = if k + 1 < n { (row[k + 1] - row[k]) / h } else { (row[n - 1] - row[n - 2]) / h };
            (minus, plus)
        }
    }
}

fn dissipation(y: f64, i: usize, pm: f64, pp: f64, params: &ReservoirParams, chain: &RegimeChain) -> f64 {
    let q_in = params.normalize(chain.discharge(i));
    match params.dissipation {
        Dissipation::Global => {
            let (lo, hi) = admissible_interval(y, chain.discharge(i), params);
            (q_in - params.normalize(lo)).abs().max((params.normalize(hi) - q_in).abs())
        }
        Dissipation::Local => {
            // ∂H/∂p = Q - q*(p), and q*(p) is nondecreasing in p, so the
            // extremes sit at the ends of [p⁻, p⁺].
            let a = hamiltonian_min(y, i, pm, params, chain).1;
            let b = hamiltonian_min(y, i, pp, params, chain).1;
            (q_in - a).abs().max((q_in - b).abs())
        }
    }
}

fn node_update(
    values: &[f64],
    n: usize,
    i: usize,
    k: usize,
    grid: &UniformGrid1D,
    params: &ReservoirParams,
    chain: &RegimeChain,
    alpha_floor: f64,
) -> Node {
    let h = grid.spacing();
    let y = grid.node(k);
    let row = &values[i * n..(i + 1) * n];
    let (pm, pp) = one_sided(row, k, h, params.scheme);
    let (hval, q) = hamiltonian_min(y, i, 0.5 * (pm + pp), params, chain);
    let alpha = dissipation(y, i, pm, pp, params, chain).max(alpha_floor);
    let mut coupling = 0.0;
    let mut out_rate = 0.0;
    for (j, s) in chain.neighbours(i) {
        coupling += s * (row[k] - values[j * n + k]);
        out_rate += s;
    }
    let residual = params.discount * row[k] + coupling - hval - 0.5 * alpha * (pp - pm);
    Node { residual, diag: params.discount + out_rate + alpha / h, q, alpha }
}

/// Fast-sweeping solve from `Φ ≡ 0`. A pass visits every node in one
/// direction (all regimes at each node, in index order); passes alternate
/// direction. Stops when a pass changes no value by more than `tolerance`.
pub fn solve_stationary(
    params: &ReservoirParams,
    chain: &RegimeChain,
    n_nodes: usize,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<StationaryValue> {
    params.validate(chain)?;
    if n_nodes < 7 {
        return config(format!("reservoir grid needs at least 7 nodes, got {n_nodes}"));
    }
    let grid = UniformGrid1D::unit(n_nodes)?;
    let regimes = chain.n_regimes();
    let n = n_nodes;
    let mut values = vec![0.0; regimes * n];
    let mut alpha = vec![0.0; regimes * n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut passes = 0;
    while passes < max_sweeps {
        let forward = passes % 2 == 0;
        let mut change = 0.0_f64;
        for step in 0..n {
            let k = if forward { step } else { n - 1 - step };
            for i in 0..regimes {
                let node = node_update(&values, n, i, k, &grid, params, chain, alpha[i * n + k]);
                alpha[i * n + k] = node.alpha;
                let delta = node.residual / node.diag;
                values[i * n + k] -= delta;
                change = change.max(delta.abs());
            }
        }
        passes += 1;
        history.push(change);
        if change <= tolerance {
            converged = true;
            break;
        }
    }

    let mut discharge = vec![vec![0.0; n]; regimes];
    let mut policy = vec![vec![0.0; n]; regimes];
    let mut interior = 0.0_f64;
    for i in 0..regimes {
        for k in 0..n {
            let node = node_update(&values, n, i, k, &grid, params, chain, alpha[i * n + k]);
            discharge[i][k] = params.denormalize(node.q);
            policy[i][k] = discharge[i][k] / chain.discharge(i);
            if k > 0 && k + 1 < n {
                interior = interior.max((node.residual / node.diag).abs());
            }
        }
    }
    Ok(StationaryValue {
        grid,
        values: values.chunks(n).map(<[f64]>::to_vec).collect(),
        discharge,
        policy,
        iterations: passes,
        converged,
        residual_history: history,
        interior_residual: interior,
    })
}

/// Value that one Gauss–Seidel visit assigns to node `(i, k)` given the
/// current `values` (flattened by regime). Exposed for monotonicity checks.
pub fn updated_node_value(
    values: &[f64],
    i: usize,
    k: usize,
    n_nodes: usize,
    params: &ReservoirParams,
    chain: &RegimeChain,
) -> Result<f64> {
    let grid = UniformGrid1D::unit(n_nodes)?;
    let node = node_update(values, n_nodes, i, k, &grid, params, chain, 0.0);
    Ok(values[i * n_nodes + k] - node.residual / node.diag)
}

/// Discounted cost of following the computed policy from `(y0, i0)` up to
/// `horizon`, by Monte Carlo. The volume is advanced with step `dt`; regime
/// switches are placed at their exact times.
#[allow(clippy::too_many_arguments)]
pub fn mc_verify_reservoir(
    params: &ReservoirParams,
    chain: &RegimeChain,
    result: &StationaryValue,
    y0: f64,
    i0: usize,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    rng_seed: u64,
) -> Result<EstimateReport> {
    if (-params.discount * horizon).exp() > 0.01 {
        return config(format!("horizon {horizon} too short: need exp(-discount * horizon) <= 0.01"));
    }
    let q_hat = params.normalize(params.environmental_flow);
    monte_carlo(n_paths, rng_seed, |rng| {
        let mut acc = CostAccumulator::new(params.discount);
        let (mut y, mut i) = (y0, i0);
        let mut next_switch = switch_time(chain, i, rng);
        while acc.time() < horizon {
            let step = dt.min(horizon - acc.time()).min(next_switch - acc.time()).max(1e-12);
            let q_in = chain.discharge(i);
            let (lo, hi) = admissible_interval(y, q_in, params);
            let q = result.discharge_at(i, y).clamp(lo, hi);
            let (qn, qin_n) = (params.normalize(q), params.normalize(q_in));
            let rate = 0.5 * (qn - qin_n).powi(2) + 0.5 * params.weight * (q_hat - qn).max(0.0).powi(2);
            let y_next = (y + (qin_n - qn) * step).clamp(0.0, 1.0);
            // Trapezoid on the volume penalty, exact on the discharge terms.
            let f = 0.5 * (params.volume_penalty(y) + params.volume_penalty(y_next));
            acc.discounted_segment(rate + f, step);
            y = y_next;
            if acc.time() >= next_switch {
                i = next_regime(chain, i, chain.exit_rate(i), rng);
                next_switch = acc.time() + switch_time(chain, i, rng);
            }
        }
        acc.total()
    })
}

fn switch_time<R: Rng + ?Sized>(chain: &RegimeChain, i: usize, rng: &mut R) -> f64 {
    let rate = chain.exit_rate(i);
    if rate > 0.0 {
        exponential(rng, rate)
    } else {
        f64::INFINITY
    }
}
