//! Finite-horizon control of a dam reservoir coupled with downstream
//! sediment storage and nuisance algae.
//!
//! The state is `(i, x1, x2, x3)`: inflow regime, reservoir volume, sediment
//! storage and algae population, each normalised to `[0, 1]`. The discharge
//! is chosen from the menu `{a_j Q_i}` and sediment can be refilled at the
//! jump times of a Poisson process. The value is marched backward from
//! `Φ(T) = 0` by a semi-Lagrangian scheme on a sparse grid: one explicit
//! Euler characteristic step per `Δt`, with regime switching and
//! intervention chances taken explicitly from the later time slice.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::regime::{next_regime, RegimeChain};
use crate::reservoir::SECONDS_PER_DAY;
use crate::simulate::{exponential, monte_carlo, CostAccumulator, EstimateReport};
use crate::sparse_grid::{Hierarchy, SparseGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoupledParams {
    /// Reservoir capacity (m³) used to normalise `x1`.
    pub reservoir_capacity: f64,
    /// Transport law `S(q) = A max{B q^0.6 - C, 0}^1.5 / capacity`.
    pub transport_a: f64,
    pub transport_b: f64,
    pub transport_c: f64,
    /// Sediment capacity (m³) used to normalise `x2`.
    pub sediment_capacity: f64,
    /// Detachment `α(x2) = α0 x2^m`, per unit discharge (s/m³/day).
    pub detachment_scale: f64,
    pub detachment_exponent: f64,
    pub growth_rate: f64,
    pub algae_capacity: f64,
    /// Safe-region bounds of the running cost.
    pub upper_x1: f64,
    pub lower_x1: f64,
    pub lower_x2: f64,
    pub upper_x3: f64,
    pub penalty_power: f64,
    /// Scales of the running cost and of `½(1 - q/Q)²`.
    pub penalty_weight: f64,
    pub deviation_weight: f64,
    /// Discharge multipliers `a_j`.
    pub multipliers: Vec<f64>,
    pub proportional_cost: f64,
    pub fixed_cost: f64,
    /// Intensity of intervention chances (1/day).
    pub intensity: f64,
    pub discount: f64,
    pub horizon: f64,
    pub dt: f64,
    pub level: u32,
    pub hierarchy: Hierarchy,
    /// Times at which values and policies are kept.
    pub output_times: Vec<f64>,
}

impl Default for CoupledParams {
    fn default() -> Self {
        Self {
            reservoir_capacity: 6e7,
            transport_a: 3.82e4,
            transport_b: 1.31e-2,
            transport_c: 4.7e-2,
            sediment_capacity: 200.0,
            detachment_scale: 0.1,
            detachment_exponent: 0.5,
            growth_rate: 0.5,
            algae_capacity: 1.0,
            upper_x1: 0.8,
            lower_x1: 0.2,
            lower_x2: 0.2,
            upper_x3: 0.8,
            penalty_power: 3.0,
            penalty_weight: 1.0,
            deviation_weight: 1.0,
            multipliers: vec![0.0, 0.5, 2.0, 1.0 / 3.0, 3.0],
            proportional_cost: 0.15,
            fixed_cost: 0.05,
            intensity: 0.1,
            discount: 0.0,
            horizon: 60.0,
            dt: 0.05,
            level: 7,
            hierarchy: Hierarchy::ClenshawCurtis,
            output_times: vec![0.0, 30.0, 60.0],
        }
    }
}

impl CoupledParams {
    pub fn validate(&self, chain: &RegimeChain) -> Result<()> {
        let positive = [
            ("coupled.reservoir_capacity", self.reservoir_capacity),
            ("coupled.sediment_capacity", self.sediment_capacity),
            ("coupled.algae_capacity", self.algae_capacity),
            ("coupled.horizon", self.horizon),
            ("coupled.dt", self.dt),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return config(format!("{key} must be > 0, got {v}"));
            }
        }
        let nonnegative = [
            ("coupled.transport_a", self.transport_a),
            ("coupled.transport_b", self.transport_b),
            ("coupled.transport_c", self.transport_c),
            ("coupled.detachment_scale", self.detachment_scale),
            ("coupled.detachment_exponent", self.detachment_exponent),
            ("coupled.growth_rate", self.growth_rate),
            ("coupled.penalty_weight", self.penalty_weight),
            ("coupled.deviation_weight", self.deviation_weight),
            ("coupled.proportional_cost", self.proportional_cost),
            ("coupled.fixed_cost", self.fixed_cost),
            ("coupled.intensity", self.intensity),
            ("coupled.discount", self.discount),
        ];
        for (key, v) in nonnegative {
            if !(v >= 0.0 && v.is_finite()) {
                return config(format!("{key} must be >= 0, got {v}"));
            }
        }
        if !(0.0 < self.lower_x1 && self.lower_x1 < self.upper_x1 && self.upper_x1 < 1.0) {
            return config("need 0 < coupled.lower_x1 < coupled.upper_x1 < 1");
        }
        if !(0.0 < self.lower_x2 && self.lower_x2 < 1.0 && 0.0 < self.upper_x3 && self.upper_x3 < 1.0) {
            return config("coupled.lower_x2 and coupled.upper_x3 must lie in (0, 1)");
        }
        if self.penalty_power < 3.0 {
            return config(format!("coupled.penalty_power must be >= 3, got {}", self.penalty_power));
        }
        if self.multipliers.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return config("coupled.multipliers must be finite and >= 0");
        }
        if !self.multipliers.contains(&0.0) {
            return config("coupled.multipliers must contain 0");
        }
        if !self.multipliers.iter().any(|&a| a <= 1.0) || !self.multipliers.iter().any(|&a| a >= 1.0) {
            return config("coupled.multipliers need entries on both sides of 1");
        }
        if chain.discharges().iter().any(|&q| q <= 0.0) {
            return config("coupled regimes need positive inflows");
        }
        let steps = self.steps();
        if ((steps as f64) * self.dt - self.horizon).abs() > 1e-9 * self.horizon || steps == 0 {
            return config(format!("coupled.horizon {} is not a multiple of coupled.dt {}", self.horizon, self.dt));
        }
        if self.dt * chain.max_exit_rate() > 1.0 {
            return config(format!(
                "coupled.dt {} too large for the regime rates: dt * max exit rate = {}",
                self.dt,
                self.dt * chain.max_exit_rate()
            ));
        }
        let guard = 1.0 - self.dt * (self.discount + self.intensity + chain.max_exit_rate());
        if guard < 0.0 {
            return config(format!("coupled.dt {} breaks the positivity guard (1 - dt(δ + λ + Σs) = {guard})", self.dt));
        }
        for &t in &self.output_times {
            self.step_of(t)?;
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    fn step_of(&self, t: f64) -> Result<usize> {
        let n = (t / self.dt).round();
        if !(0.0..=self.steps() as f64).contains(&n) || (n * self.dt - t).abs() > 1e-9 * self.horizon.max(1.0) {
            return config(format!("output time {t} is not on the time mesh"));
        }
        Ok(n as usize)
    }
}

/// Sediment transport rate (normalised storage per day) at discharge `q` m³/s.
pub fn transport_rate(q: f64, params: &CoupledParams) -> f64 {
    let excess = (params.transport_b * q.max(0.0).powf(0.6) - params.transport_c).max(0.0);
    params.transport_a / params.sediment_capacity * excess.powf(1.5)
}

pub fn detachment(x2: f64, params: &CoupledParams) -> f64 {
    params.detachment_scale * x2.max(0.0).powf(params.detachment_exponent)
}

/// Penalty for leaving the safe region; each term is 1 at the domain edge.
pub fn running_cost(x1: f64, x2: f64, x3: f64, params: &CoupledParams) -> f64 {
    let p = params.penalty_power;
    let term = |excess: f64, width: f64| (excess.max(0.0) / width).powf(p);
    term(x1 - params.upper_x1, 1.0 - params.upper_x1)
        + term(params.lower_x1 - x1, params.lower_x1)
        + term(params.lower_x2 - x2, params.lower_x2)
        + term(x3 - params.upper_x3, 1.0 - params.upper_x3)
}

/// Indices into `params.multipliers` allowed at volume `x1`.
pub fn admissible_multipliers(x1: f64, params: &CoupledParams) -> Vec<usize> {
    (0..params.multipliers.len())
        .filter(|&j| {
            let a = params.multipliers[j];
            if x1 <= 0.0 {
                a <= 1.0
            } else if x1 >= 1.0 {
                a >= 1.0
            } else {
                true
            }
        })
        .collect()
}

/// Admissible discharges (m³/s) at volume `x1` under inflow `q_in`.
pub fn admissible_discharges(x1: f64, q_in: f64, params: &CoupledParams) -> Vec<f64> {
    admissible_multipliers(x1, params).into_iter().map(|j| params.multipliers[j] * q_in).collect()
}

/// One explicit Euler step of the controlled dynamics, clamped to `[0, 1]³`.
pub fn foot_point(x: [f64; 3], q_in: f64, q: f64, dt: f64, params: &CoupledParams) -> [f64; 3] {
    let [x1, x2, x3] = x;
    let volume = x1 + (q_in - q) * SECONDS_PER_DAY / params.reservoir_capacity * dt;
    let sediment = if x2 > 0.0 { x2 - transport_rate(q, params) * dt } else { x2 };
    let algae = x3
        + (params.growth_rate * x3 * (1.0 - x3 / params.algae_capacity) - detachment(x2, params) * q * x3) * dt;
    [volume.clamp(0.0, 1.0), sediment.clamp(0.0, 1.0), algae.clamp(0.0, 1.0)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NodePolicy {
    /// Index into the multiplier menu.
    pub multiplier: usize,
    pub replenish: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Nodal values per regime.
    pub values: Vec<Vec<f64>>,
    pub surpluses: Vec<Vec<f64>>,
    pub policy: Vec<Vec<NodePolicy>>,
}

/// One backward step from the slice given by `next_values` and
/// `next_surpluses` (one vector per regime on `grid`).
pub fn step_backward(
    next_values: &[Vec<f64>],
    next_surpluses: &[Vec<f64>],
    params: &CoupledParams,
    chain: &RegimeChain,
    grid: &SparseGrid,
) -> Result<StepOutput> {
    let dt = params.dt;
    let regimes = chain.n_regimes();
    let per_regime: Vec<(Vec<f64>, Vec<NodePolicy>)> = (0..regimes)
        .into_par_iter()
        .map(|i| {
            let q_in = chain.discharge(i);
            let own = &next_surpluses[i];
            grid.points()
                .iter()
                .enumerate()
                .map(|(k, point)| {
                    let x = [point.coords[0], point.coords[1], point.coords[2]];
                    let here = next_values[i][k];
                    let running = params.penalty_weight * running_cost(x[0], x[1], x[2], params);
                    let mut best = (f64::INFINITY, 0);
                    for j in admissible_multipliers(x[0], params) {
                        let a = params.multipliers[j];
                        let foot = foot_point(x, q_in, a * q_in, dt, params);
                        let deviation = params.deviation_weight * 0.5 * (1.0 - a).powi(2);
                        let v = grid.evaluate(own, &foot) + dt * (running + deviation);
                        if v < best.0 {
                            best = (v, j);
                        }
                    }
                    let coupling: f64 = chain.neighbours(i).map(|(j, s)| s * dt * (next_values[j][k] - here)).sum();
                    let refill = params.proportional_cost * (1.0 - x[1])
                        + params.fixed_cost
                        + grid.evaluate(own, &[x[0], 1.0, x[2]]);
                    let replenish = refill < here;
                    let intervention = params.intensity * dt * (refill - here).min(0.0);
                    let value = (best.0 + coupling + intervention) / (1.0 + params.discount * dt);
                    (value, NodePolicy { multiplier: best.1, replenish })
                })
                .unzip()
        })
        .collect();
    let mut values = Vec::with_capacity(regimes);
    let mut policy = Vec::with_capacity(regimes);
    for (v, p) in per_regime {
        values.push(v);
        policy.push(p);
    }
    let surpluses = values.par_iter().map(|v| grid.hierarchize(v)).collect::<Result<Vec<_>>>()?;
    Ok(StepOutput { values, surpluses, policy })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSlice {
    pub t: f64,
    pub values: Vec<Vec<f64>>,
    pub surpluses: Vec<Vec<f64>>,
    /// Decision at this time. At `t = T` it is the decision taken just
    /// before the horizon.
    pub policy: Vec<Vec<NodePolicy>>,
}

#[derive(Debug, Clone)]
pub struct CoupledSolution {
    pub grid: SparseGrid,
    pub discharges: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    /// Stored slices in increasing time.
    pub slices: Vec<TimeSlice>,
    /// Smallest nodal value seen over all steps and regimes.
    pub min_value: f64,
    /// Largest `Φ(t + Δt) - Φ(t)` seen at a node (nonpositive when the
    /// value never decreases backward in time).
    pub max_backward_decrease: f64,
}

impl CoupledSolution {
    pub fn slice(&self, t: f64) -> Result<&TimeSlice> {
        self.slices
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * self.dt.max(1.0))
            .ok_or_else(|| Error::Lookup(format!("time {t} is not stored")))
    }

    fn nearest_slice(&self, t: f64) -> &TimeSlice {
        self.slices
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
            .expect("solution stores at least one slice")
    }

    /// Interpolated value at time slice `t`, regime `i`, state `x`.
    pub fn value_at(&self, t: f64, i: usize, x: [f64; 3]) -> Result<f64> {
        let s = self.slice(t)?;
        let surpluses = s.surpluses.get(i).ok_or_else(|| Error::Lookup(format!("regime {i} out of range")))?;
        Ok(self.grid.evaluate(surpluses, &x))
    }

    fn nearest_node(&self, x: [f64; 3]) -> usize {
        let dist = |c: &[f64]| c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let points = self.grid.points();
        (0..points.len()).min_by(|&a, &b| dist(&points[a].coords).total_cmp(&dist(&points[b].coords))).unwrap_or(0)
    }
}

/// Marches from `Φ(T) = 0` down to `t = 0`.
pub fn solve(params: &CoupledParams, chain: &RegimeChain) -> Result<CoupledSolution> {
    params.validate(chain)?;
    let grid = SparseGrid::build_with(3, params.level, params.hierarchy)?;
    let n = grid.len();
    let regimes = chain.n_regimes();
    let steps = params.steps();
    let wanted: Vec<usize> = params.output_times.iter().map(|&t| params.step_of(t)).collect::<Result<_>>()?;

    let mut values = vec![vec![0.0; n]; regimes];
    let mut surpluses = vec![vec![0.0; n]; regimes];
    let mut slices = Vec::new();
    let mut min_value = 0.0_f64;
    let mut max_decrease = f64::NEG_INFINITY;
    for m in (0..steps).rev() {
        let out = step_backward(&values, &surpluses, params, chain, &grid)?;
        if m + 1 == steps && wanted.contains(&steps) {
            slices.push(TimeSlice { t: params.horizon, values: values.clone(), surpluses: surpluses.clone(), policy: out.policy.clone() });
        }
        for (new, old) in out.values.iter().zip(&values) {
            for (a, b) in new.iter().zip(old) {
                if !a.is_finite() {
                    return Err(Error::NonFinite { step: m, t: m as f64 * params.dt, y: *a });
                }
                min_value = min_value.min(*a);
                max_decrease = max_decrease.max(b - a);
            }
        }
        values = out.values;
        surpluses = out.surpluses;
        if wanted.contains(&m) {
            slices.push(TimeSlice { t: m as f64 * params.dt, values: values.clone(), surpluses: surpluses.clone(), policy: out.policy });
        }
    }
    slices.sort_by(|a, b| a.t.total_cmp(&b.t));
    slices.dedup_by(|a, b| a.t == b.t);
    Ok(CoupledSolution {
        grid,
        discharges: chain.discharges().to_vec(),
        multipliers: params.multipliers.clone(),
        dt: params.dt,
        steps,
        slices,
        min_value,
        max_backward_decrease: max_decrease,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyRow {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub multiplier_index: usize,
    pub discharge: f64,
    pub replenish: bool,
}

/// Policy of regime `regime` (0-based) at stored time `t`, one row per grid point.
pub fn policy_slice(solution: &CoupledSolution, t: f64, regime: usize) -> Result<Vec<PolicyRow>> {
    let s = solution.slice(t)?;
    let policy = s
        .policy
        .get(regime)
        .ok_or_else(|| Error::Lookup(format!("regime {} out of range 1..={}", regime + 1, solution.discharges.len())))?;
    Ok(solution
        .grid
        .points()
        .iter()
        .zip(policy)
        .map(|(p, n)| PolicyRow {
            x1: p.coords[0],
            x2: p.coords[1],
            x3: p.coords[2],
            multiplier_index: n.multiplier,
            discharge: solution.multipliers[n.multiplier] * solution.discharges[regime],
            replenish: n.replenish,
        })
        .collect())
}

/// Monte Carlo cost of the stored policy from `(0, i0, x0)`. The policy is
/// read at the nearest stored time and the nearest grid point, so with few
/// stored slices the estimate sits above `Φ` by the cost of that
/// coarsening.
pub fn mc_verify_coupled(
    params: &CoupledParams,
    chain: &RegimeChain,
    solution: &CoupledSolution,
    x0: [f64; 3],
    i0: usize,
    n_paths: usize,
    rng_seed: u64,
) -> Result<EstimateReport> {
    params.validate(chain)?;
    if i0 >= chain.n_regimes() {
        return Err(Error::Lookup(format!("regime {} out of range 1..={}", i0 + 1, chain.n_regimes())));
    }
    let steps = params.steps();
    monte_carlo(n_paths, rng_seed, |rng| {
        let mut acc = CostAccumulator::new(params.discount);
        let (mut x, mut i) = (x0, i0);
        let mut next_switch = waiting_time(chain.exit_rate(i), rng);
        let mut next_chance = waiting_time(params.intensity, rng);
        for m in 0..steps {
            let t = m as f64 * params.dt;
            let slice = solution.nearest_slice(t);
            while next_chance <= t {
                let node = solution.nearest_node(x);
                if slice.policy[i][node].replenish {
                    acc.impulse(params.proportional_cost * (1.0 - x[1]) + params.fixed_cost);
                    x[1] = 1.0;
                }
                next_chance += waiting_time(params.intensity, rng);
            }
            let node = solution.nearest_node(x);
            let mut j = slice.policy[i][node].multiplier;
            if !admissible_multipliers(x[0], params).contains(&j) {
                j = nearest_admissible(x[0], params.multipliers[j], params);
            }
            let a = params.multipliers[j];
            let rate = params.penalty_weight * running_cost(x[0], x[1], x[2], params)
                + params.deviation_weight * 0.5 * (1.0 - a).powi(2);
            acc.discounted_segment(rate, params.dt);
            x = foot_point(x, chain.discharge(i), a * chain.discharge(i), params.dt, params);
            while next_switch <= acc.time() {
                i = next_regime(chain, i, chain.exit_rate(i), rng);
                next_switch += waiting_time(chain.exit_rate(i), rng);
            }
        }
        acc.total()
    })
}

fn nearest_admissible(x1: f64, a: f64, params: &CoupledParams) -> usize {
    admissible_multipliers(x1, params)
        .into_iter()
        .min_by(|&p, &q| (params.multipliers[p] - a).abs().total_cmp(&(params.multipliers[q] - a).abs()))
        .expect("menu has entries on both sides of 1")
}

fn waiting_time<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate > 0.0 {
        exponential(rng, rate)
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regime::synth_birth_death;
    use crate::simulate::path_rng;
    use approx::assert_abs_diff_eq;

    fn small() -> CoupledParams {
        CoupledParams { level: 5, dt: 0.1, horizon: 5.0, output_times: vec![0.0, 5.0], ..Default::default() }
    }

    #[test]
    fn transport_examples() {
        let p = CoupledParams::default();
        assert_eq!(transport_rate(0.0, &p), 0.0);
        assert_eq!(transport_rate(8.4, &p), 0.0);
        assert!(transport_rate(8.5, &p) > 0.0);
        let threshold = (p.transport_c / p.transport_b).powf(1.0 / 0.6);
        assert_abs_diff_eq!(threshold, 8.41, epsilon = 0.01);
        assert_abs_diff_eq!(transport_rate(50.0, &p), 5.156, epsilon = 2e-3);
    }

    #[test]
    fn detachment_and_running_cost() {
        let p = CoupledParams::default();
        assert_eq!(detachment(0.0, &p), 0.0);
        assert_abs_diff_eq!(detachment(1.0, &p), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(detachment(0.25, &p), 0.05, epsilon = 1e-15);
        assert_eq!(running_cost(0.5, 0.5, 0.5, &p), 0.0);
        assert_abs_diff_eq!(running_cost(1.0, 0.5, 0.5, &p), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(running_cost(0.0, 0.5, 0.5, &p), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(running_cost(0.9, 0.1, 0.9, &p), 0.375, epsilon = 1e-12);
    }

    #[test]
    fn discharge_menus() {
        let p = CoupledParams::default();
        let close = |a: Vec<f64>, b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(admissible_discharges(0.5, 10.0, &p), &[0.0, 5.0, 20.0, 10.0 / 3.0, 30.0]));
        assert!(close(admissible_discharges(0.0, 10.0, &p), &[0.0, 5.0, 10.0 / 3.0]));
        assert!(close(admissible_discharges(1.0, 10.0, &p), &[20.0, 30.0]));
    }

    #[test]
    fn logistic_foot_and_invariance() {
        let p = CoupledParams { detachment_scale: 0.0, transport_a: 0.0, ..Default::default() };
        // One Euler step against the logistic closed form: O(Δt²) per step.
        for dt in [0.1, 0.05] {
            let x3 = 0.3;
            let foot = foot_point([0.5, 0.5, x3], 10.0, 10.0, dt, &p)[2];
            let exact = 1.0 / (1.0 + (1.0 / x3 - 1.0) * (-p.growth_rate * dt).exp());
            assert!((foot - exact).abs() < 0.1 * dt * dt);
            assert_eq!(foot_point([0.5, 0.5, x3], 10.0, 10.0, dt, &p)[1], 0.5);
        }
        let q = CoupledParams::default();
        let mut rng = path_rng(3, 0);
        for _ in 0..1000 {
            let x = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let qq = rng.gen_range(0.0..300.0);
            let f = foot_point(x, 50.0, qq, 0.05, &q);
            assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
            // Without clamping the logistic part stays below K = 1.
            let raw = x[2] + q.growth_rate * x[2] * (1.0 - x[2]) * 0.05;
            assert!(raw <= 1.0);
        }
    }

    #[test]
    fn one_step_from_terminal() {
        let p = small();
        let chain = synth_birth_death(2, 0.5, 0.5, vec![12.5, 62.5]).unwrap();
        let grid = SparseGrid::build(3, p.level).unwrap();
        let zero = vec![vec![0.0; grid.len()]; 2];
        let out = step_backward(&zero, &zero, &p, &chain, &grid).unwrap();
        for (k, point) in grid.points().iter().enumerate() {
            let x = &point.coords;
            let menu_min = admissible_multipliers(x[0], &p).iter().map(|&j| 0.5 * (1.0 - p.multipliers[j]).powi(2)).fold(f64::INFINITY, f64::min);
            let expected = p.dt * (running_cost(x[0], x[1], x[2], &p) + menu_min);
            assert_abs_diff_eq!(out.values[0][k], expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn deviation_only_cost_is_closed_form() {
        let p = CoupledParams { penalty_weight: 0.0, intensity: 0.0, level: 7, ..small() };
        let chain = synth_birth_death(2, 0.5, 0.5, vec![12.5, 62.5]).unwrap();
        let s = solve(&p, &chain).unwrap();
        // Away from x1 = 1 the cheapest multiplier is 1/2 and costs 0.125/day.
        // The dearer menu at x1 = 1 leaks inward through the interpolant by
        // a few 1e-6 at this level.
        let v = s.value_at(0.0, 0, [0.3, 0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(v, 0.125 * p.horizon, epsilon = 1e-4);
        let rep = mc_verify_coupled(&p, &chain, &s, [0.3, 0.5, 0.5], 0, 50, 9).unwrap();
        assert!(rep.mean >= v - 1e-4);
    }

    #[test]
    fn zero_costs_give_zero() {
        let p = CoupledParams {
            penalty_weight: 0.0,
            deviation_weight: 0.0,
            proportional_cost: 0.0,
            fixed_cost: 0.0,
            ..small()
        };
        let chain = synth_birth_death(2, 0.5, 0.5, vec![12.5, 62.5]).unwrap();
        let s = solve(&p, &chain).unwrap();
        assert!(s.slices.iter().all(|sl| sl.values.iter().flatten().all(|&v| v == 0.0)));
        let rep = mc_verify_coupled(&p, &chain, &s, [0.5, 0.5, 0.5], 1, 20, 1).unwrap();
        assert_eq!(rep.mean, 0.0);
    }

    #[test]
    fn solution_invariants_and_lookup() {
        let p = CoupledParams { level: 8, ..small() };
        let chain = synth_birth_death(3, 0.5, 0.5, vec![12.5, 37.5, 62.5]).unwrap();
        let s = solve(&p, &chain).unwrap();
        assert!(s.slice(p.horizon).unwrap().values.iter().flatten().all(|&v| v == 0.0));
        assert!(s.min_value >= 0.0);
        assert!(s.max_backward_decrease <= 1e-12, "{}", s.max_backward_decrease);
        assert_eq!(policy_slice(&s, 0.0, 2).unwrap().len(), s.grid.len());
        assert!(matches!(policy_slice(&s, 1.0, 0), Err(Error::Lookup(_))));
        assert!(matches!(policy_slice(&s, 0.0, 3), Err(Error::Lookup(_))));
    }

    #[test]
    fn rejects_bad_time_steps() {
        let chain = synth_birth_death(3, 0.5, 0.5, vec![12.5, 37.5, 62.5]).unwrap();
        assert!(CoupledParams { dt: 1.5, ..small() }.validate(&chain).is_err());
        assert!(CoupledParams { dt: 0.07, ..small() }.validate(&chain).is_err());
        assert!(CoupledParams { output_times: vec![0.05], ..small() }.validate(&chain).is_err());
        assert!(CoupledParams { multipliers: vec![0.5, 2.0], ..small() }.validate(&chain).is_err());
    }
}
