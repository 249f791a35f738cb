//! Sediment replenishment with intervention chances at Poisson times.
//!
//! The storage `W ∈ [0, 1]` decays at rate `S (1 - χ_ε(W))`, where the
//! regularisation `χ_ε(w) = max(0, 1 - w/ε)` both penalises depletion and
//! slows the decay near empty storage. At each chance (rate `λ`) the manager
//! either waits or refills to full storage at cost `c (1 - w) + d`.
//!
//! The HJB equation is solved by semi-Lagrangian value iteration:
//!
//! ```text
//! Φ_new(w) = [Φ_old(foot) + Δt (χ_ε(w) + λ M Φ_old(w))] / (1 + (δ + λ) Δt)
//! ```
//!
//! with `foot = w - S (1 - χ_ε(w)) Δt` read by WENO3 interpolation and `M`
//! the intervention operator. The discount is implicit, so the map is a
//! sup-norm contraction for every `Δt`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::numerics::{weno3_interpolate, UniformGrid1D};
use crate::simulate::{exponential, monte_carlo, CostAccumulator, EstimateReport, PathRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SedimentParams {
    /// Transport rate `S` (normalised storage per unit time).
    pub transport: f64,
    /// Rate `λ` of intervention chances. Zero disables interventions.
    pub intensity: f64,
    pub proportional_cost: f64,
    pub fixed_cost: f64,
    pub discount: f64,
    /// Regularisation width `ε`.
    pub epsilon: f64,
}

impl Default for SedimentParams {
    fn default() -> Self {
        Self {
            transport: 0.1,
            intensity: 0.1,
            proportional_cost: 0.5,
            fixed_cost: 0.4,
            discount: 0.1,
            epsilon: 0.01,
        }
    }
}

impl SedimentParams {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("sediment.transport", self.transport),
            ("sediment.discount", self.discount),
            ("sediment.proportional_cost", self.proportional_cost),
            ("sediment.fixed_cost", self.fixed_cost),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return config(format!("{key} must be > 0, got {v}"));
            }
        }
        if !(self.intensity >= 0.0 && self.intensity.is_finite()) {
            return config(format!("sediment.intensity must be >= 0, got {}", self.intensity));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return config(format!("sediment.epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        Ok(())
    }

    /// Storage drift `-S (1 - χ_ε(w))`.
    pub fn drift(&self, w: f64) -> f64 {
        -self.transport * (1.0 - chi_eps(w, self.epsilon))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SedimentNumerics {
    pub n_nodes: usize,
    /// Time step; `None` means `30 Δx^1.5`.
    pub dt: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SedimentNumerics {
    fn default() -> Self {
        Self { n_nodes: 301, dt: None, tolerance: 1e-10, max_iterations: 500_000 }
    }
}

impl SedimentNumerics {
    pub fn time_step(&self) -> f64 {
        self.dt.unwrap_or_else(|| 30.0 * (1.0 / (self.n_nodes - 1) as f64).powf(1.5))
    }
}

/// Depletion indicator `max(0, 1 - w/ε)`.
pub fn chi_eps(w: f64, eps: f64) -> f64 {
    (1.0 - w / eps).max(0.0)
}

/// Best of waiting (`Φ(w)`) and refilling (`c (1 - w) + d + Φ(1)`).
/// Ties and `w = 1` resolve to waiting. Returns `(value, replenish)`.
pub fn intervention_value<F: Fn(f64) -> f64>(phi: F, w: f64, c: f64, d: f64) -> (f64, bool) {
    let wait = phi(w);
    if w >= 1.0 {
        return (wait, false);
    }
    let refill = c * (1.0 - w) + d + phi(1.0);
    if refill < wait {
        (refill, true)
    } else {
        (wait, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SedimentSolution {
    #[serde(skip)]
    pub grid: UniformGrid1D,
    pub params: SedimentParams,
    pub w: Vec<f64>,
    pub value: Vec<f64>,
    /// Replenish flag `ω` per node.
    pub omega: Vec<bool>,
    pub threshold: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub dt: f64,
}

impl SedimentSolution {
    /// WENO3 interpolant of the value at `w`.
    pub fn value_at(&self, w: f64) -> f64 {
        weno3_interpolate(&self.grid, &self.value, w.clamp(0.0, 1.0)).unwrap_or(f64::NAN)
    }

    /// Feedback decision at an intervention chance.
    pub fn replenish_at(&self, w: f64) -> bool {
        intervention_value(|x| self.value_at(x), w, self.params.proportional_cost, self.params.fixed_cost).1
    }
}

/// One application of the semi-Lagrangian operator. Returns the new values
/// and the replenish flags evaluated on `old`.
pub fn apply_operator(params: &SedimentParams, grid: &UniformGrid1D, dt: f64, old: &[f64]) -> Result<(Vec<f64>, Vec<bool>)> {
    let denom = 1.0 + (params.discount + params.intensity) * dt;
    let phi_full = old[old.len() - 1];
    let mut new = vec![0.0; old.len()];
    let mut omega = vec![false; old.len()];
    for k in 0..old.len() {
        let w = grid.node(k);
        let chi = chi_eps(w, params.epsilon);
        let foot = (w + params.drift(w) * dt).clamp(0.0, 1.0);
        let transported = weno3_interpolate(grid, old, foot)?;
        let (best, flag) = intervention_value(
            |x| if x >= 1.0 { phi_full } else { old[k] },
            w,
            params.proportional_cost,
            params.fixed_cost,
        );
        new[k] = (transported + dt * (chi + params.intensity * best)) / denom;
        omega[k] = flag;
    }
    Ok((new, omega))
}

/// Value iteration from `Φ ≡ 0` until the sup-norm change is at most
/// `numerics.tolerance`. Aborts if the change grows for 100 consecutive
/// iterations.
pub fn solve_value_iteration(params: &SedimentParams, numerics: &SedimentNumerics) -> Result<SedimentSolution> {
    params.validate()?;
    if numerics.n_nodes < 3 {
        return config(format!("sediment grid needs at least 3 nodes, got {}", numerics.n_nodes));
    }
    let dt = numerics.time_step();
    if !(dt > 0.0) {
        return config(format!("sediment time step must be > 0, got {dt}"));
    }
    let grid = UniformGrid1D::unit(numerics.n_nodes)?;
    let mut value = vec![0.0; numerics.n_nodes];
    let mut omega = vec![false; numerics.n_nodes];
    let mut previous_change = f64::INFINITY;
    let mut growth_streak = 0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < numerics.max_iterations {
        let (next, flags) = apply_operator(params, &grid, dt, &value)?;
        iterations += 1;
        let change = next.iter().zip(&value).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        value = next;
        omega = flags;
        if change <= numerics.tolerance {
            converged = true;
            break;
        }
        growth_streak = if change > previous_change { growth_streak + 1 } else { 0 };
        if growth_streak >= 100 || !change.is_finite() {
            return Err(Error::Diverged { iterations, change });
        }
        previous_change = change;
    }
    // Flags consistent with the returned values.
    let (_, final_omega) = apply_operator(params, &grid, dt, &value)?;
    if converged {
        omega = final_omega;
    }
    let threshold = extract_threshold_flags(&grid, &omega);
    Ok(SedimentSolution {
        w: grid.nodes(),
        grid,
        params: *params,
        value,
        omega,
        threshold,
        iterations,
        converged,
        dt,
    })
}

/// `ω` is one on an initial run of nodes and zero afterwards.
pub fn is_threshold_type(omega: &[bool]) -> bool {
    omega.windows(2).all(|w| w[0] || !w[1])
}

fn extract_threshold_flags(grid: &UniformGrid1D, omega: &[bool]) -> Option<f64> {
    if !is_threshold_type(omega) {
        return None;
    }
    omega.iter().rposition(|&f| f).map(|k| grid.node(k))
}

/// Largest node with `ω = 1`, provided `ω` is a single nonincreasing step;
/// `None` when no node replenishes or the structure is violated.
pub fn extract_threshold(solution: &SedimentSolution) -> Option<f64> {
    extract_threshold_flags(&solution.grid, &solution.omega)
}

#[derive(Debug, Clone)]
pub struct EpsilonSweep {
    pub epsilons: Vec<f64>,
    pub solutions: Vec<SedimentSolution>,
    /// `‖Φ_{ε_i} - Φ_{ε_{i+1}}‖∞` for consecutive entries.
    pub distances: Vec<f64>,
}

/// Solves every `ε` (in parallel) and measures consecutive distances.
pub fn epsilon_sweep(params: &SedimentParams, epsilons: &[f64], numerics: &SedimentNumerics) -> Result<EpsilonSweep> {
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return config("epsilon list must be strictly decreasing");
    }
    let solutions: Vec<SedimentSolution> = epsilons
        .par_iter()
        .map(|&epsilon| solve_value_iteration(&SedimentParams { epsilon, ..*params }, numerics))
        .collect::<Result<_>>()?;
    let distances = solutions.windows(2).map(|p| sup_distance(&p[0].value, &p[1].value)).collect();
    Ok(EpsilonSweep { epsilons: epsilons.to_vec(), solutions, distances })
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Discounted penalty (discounted to the segment start) and end state of
/// the free decay from `w` over `duration`.
fn decay_segment(params: &SedimentParams, w: f64, duration: f64) -> (f64, f64) {
    let (s, eps, delta) = (params.transport, params.epsilon, params.discount);
    let mut w = w;
    let mut elapsed = 0.0;
    if w > eps {
        let to_eps = (w - eps) / s;
        if to_eps >= duration {
            return (0.0, w - s * duration);
        }
        w = eps;
        elapsed = to_eps;
    }
    // Below ε: W(u) = w e^{-S u / ε} and χ_ε = 1 - W/ε.
    let tau = duration - elapsed;
    let k = delta + s / eps;
    let integral = -(-delta * tau).exp_m1() / delta - (w / eps) * (-(-k * tau).exp_m1()) / k;
    let end = w * (-s * tau / eps).exp();
    ((-delta * elapsed).exp() * integral, end)
}

/// Discounted cost of one path up to `horizon` under the feedback rule
/// `replenish(w)` applied at each intervention chance.
pub fn simulate_cost<F: Fn(f64) -> bool>(
    params: &SedimentParams,
    replenish: F,
    w0: f64,
    horizon: f64,
    rng: &mut PathRng,
) -> f64 {
    let mut acc = CostAccumulator::new(params.discount);
    let mut w = w0;
    loop {
        let gap = if params.intensity > 0.0 { exponential(rng, params.intensity) } else { f64::INFINITY };
        let duration = gap.min(horizon - acc.time());
        let (penalty, end) = decay_segment(params, w, duration);
        let amount = penalty * acc.discount_factor();
        acc.add_discounted(amount, duration);
        w = end;
        if acc.time() >= horizon {
            return acc.total();
        }
        if replenish(w) {
            acc.impulse(params.proportional_cost * (1.0 - w) + params.fixed_cost);
            w = 1.0;
        }
    }
}

/// Monte Carlo estimate of `Φ(w0)` under the feedback policy of `solution`.
pub fn mc_verify_sediment(
    params: &SedimentParams,
    solution: &SedimentSolution,
    w0: f64,
    horizon: f64,
    n_paths: usize,
    rng_seed: u64,
) -> Result<EstimateReport> {
    if (-params.discount * horizon).exp() > 0.01 {
        return config(format!("horizon {horizon} too short: need exp(-discount * horizon) <= 0.01"));
    }
    monte_carlo(n_paths, rng_seed, |rng| simulate_cost(params, |w| solution.replenish_at(w), w0, horizon, rng))
}

/// Discounted penalty of the free decay from full storage, in closed form:
/// linear decay to `ε`, then exponential approach to zero.
pub fn decay_path_cost(params: &SedimentParams) -> f64 {
    let (s, eps, delta) = (params.transport, params.epsilon, params.discount);
    let t_eps = (1.0 - eps) / s;
    (-delta * t_eps).exp() * (1.0 / delta - 1.0 / (delta + s / eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::path_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn quick() -> SedimentNumerics {
        SedimentNumerics { n_nodes: 101, ..Default::default() }
    }

    #[test]
    fn chi_values() {
        assert_eq!(chi_eps(0.0, 0.1), 1.0);
        assert_eq!(chi_eps(0.1, 0.1), 0.0);
        assert_abs_diff_eq!(chi_eps(0.05, 0.1), 0.5, epsilon = 1e-15);
        assert_eq!(chi_eps(0.7, 0.1), 0.0);
    }

    #[test]
    fn intervention_branches() {
        assert_eq!(intervention_value(|w| 2.0 * w, 1.0, 0.5, 0.4), (2.0, false));
        for w in [0.0, 0.3, 0.99] {
            assert_eq!(intervention_value(|_| 4.0, w, 0.5, 0.4), (4.0, false));
        }
        let (v, flag) = intervention_value(|w| 1.0 - w, 0.0, 0.5, 0.4);
        assert!(flag);
        assert_abs_diff_eq!(v, 0.9, epsilon = 1e-15);
    }

    /// Independent oracle: trapezoidal quadrature of the regularised decay
    /// path, integrated by explicit small steps.
    fn quadrature_oracle(p: &SedimentParams) -> f64 {
        let h = 1e-4;
        let (mut w, mut t, mut total) = (1.0_f64, 0.0_f64, 0.0);
        let f = |t: f64, w: f64| (-p.discount * t).exp() * chi_eps(w, p.epsilon);
        while t < 300.0 {
            let mut next = w;
            let rhs = |w: f64| p.drift(w);
            let k1 = rhs(next);
            let k2 = rhs(next + 0.5 * h * k1);
            let k3 = rhs(next + 0.5 * h * k2);
            let k4 = rhs(next + h * k3);
            next += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            total += 0.5 * h * (f(t, w) + f(t + h, next));
            w = next;
            t += h;
        }
        total
    }

    #[test]
    fn closed_form_decay_cost_matches_quadrature() {
        for eps in [0.1, 0.01] {
            let p = SedimentParams { epsilon: eps, intensity: 0.0, ..Default::default() };
            assert_abs_diff_eq!(decay_path_cost(&p), quadrature_oracle(&p), epsilon = 1e-5);
        }
    }

    #[test]
    fn no_chances_matches_decay_path() {
        let p = SedimentParams { intensity: 0.0, ..Default::default() };
        let s = solve_value_iteration(&p, &quick()).unwrap();
        assert!(s.converged);
        let dx = 1.0 / 100.0;
        assert!((s.value[100] - quadrature_oracle(&p)).abs() <= 2.0 * dx);
    }

    #[test]
    fn bounds_monotonicity_and_threshold() {
        let p = SedimentParams::default();
        let s = solve_value_iteration(&p, &quick()).unwrap();
        assert!(s.converged);
        assert!(s.value.iter().all(|&v| (0.0..=1.0 / p.discount).contains(&v)));
        assert!(s.value.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(is_threshold_type(&s.omega));
        let t = extract_threshold(&s).unwrap();
        assert!(t > 0.0 && t < 1.0);
    }

    #[test]
    fn expensive_refill_never_happens() {
        let p = SedimentParams { fixed_cost: 10.0, ..Default::default() };
        let s = solve_value_iteration(&p, &quick()).unwrap();
        assert!(s.omega.iter().all(|&f| !f));
        assert_eq!(s.threshold, None);
    }

    #[test]
    fn threshold_extraction_cases() {
        let grid = UniformGrid1D::unit(5).unwrap();
        assert_eq!(extract_threshold_flags(&grid, &[false; 5]), None);
        assert_eq!(extract_threshold_flags(&grid, &[true, true, true, true, false]), Some(0.75));
        assert_eq!(extract_threshold_flags(&grid, &[true, false, true, false, false]), None);
    }

    /// The bound holds for differences that are monotone in `w`. WENO3 is
    /// built on quadratic interpolation, whose Lebesgue constant exceeds one,
    /// so rough or oscillating differences can be amplified.
    #[test]
    fn operator_contracts_on_monotone_differences() {
        let p = SedimentParams::default();
        let n = quick();
        let grid = UniformGrid1D::unit(n.n_nodes).unwrap();
        let dt = n.time_step();
        let gamma = (1.0 + p.intensity * dt) / (1.0 + (p.discount + p.intensity) * dt);
        let mut rng = path_rng(31, 0);
        for _ in 0..200 {
            let coef: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a: Vec<f64> = grid
                .nodes()
                .iter()
                .map(|w| 5.0 + coef.iter().enumerate().map(|(m, c)| c * (m as f64 * std::f64::consts::PI * w).cos()).sum::<f64>())
                .collect();
            let (c, e) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.5..3.0));
            let b: Vec<f64> = a.iter().zip(grid.nodes()).map(|(x, w)| x + c * w.powf(e)).collect();
            let (ta, _) = apply_operator(&p, &grid, dt, &a).unwrap();
            let (tb, _) = apply_operator(&p, &grid, dt, &b).unwrap();
            let (da, db) = (sup_distance(&ta, &tb), sup_distance(&a, &b));
            assert!(da <= (gamma + 1e-6) * db, "{da} {db}");
        }
    }

    #[test]
    fn never_replenish_from_empty() {
        let p = SedimentParams::default();
        let rep = monte_carlo(1000, 3, |rng| simulate_cost(&p, |_| false, 0.0, 200.0, rng)).unwrap();
        assert_abs_diff_eq!(rep.mean, (1.0 - (-p.discount * 200.0_f64).exp()) / p.discount, epsilon = 1e-9);
    }

    #[test]
    fn decay_segments_compose() {
        let p = SedimentParams::default();
        let (whole, end) = decay_segment(&p, 0.5, 12.0);
        let (a, mid) = decay_segment(&p, 0.5, 7.0);
        let (b, end2) = decay_segment(&p, mid, 5.0);
        assert_abs_diff_eq!(whole, a + (-p.discount * 7.0_f64).exp() * b, epsilon = 1e-13);
        assert_abs_diff_eq!(end, end2, epsilon = 1e-15);
    }
}
