//! Fishery harvesting/protection problem.
//!
//! The value function is linear in the population, `Φ(t, x) = Ψ(t) x`, so the
//! HJB equation reduces to a scalar ODE for `Ψ`, integrated backward from
//! `Ψ(T) = -w3 U_T`:
//!
//! ```text
//! dΨ/dt = (R + p (1 - u) + h) Ψ + w1 h U_t - w2 p u U_t
//! ```
//!
//! with `(h, u)` the bang-bang minimisers of the Hamiltonian. Because the
//! right-hand side only has a kink where a control switches, each RK4 step
//! integrates with the controls frozen and, when a switch occurs inside the
//! step, locates it by bisection and restarts from there. This keeps the
//! fourth-order convergence of the smooth pieces.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::growth::GrowthCurve;
use crate::numerics::{rk4_step, step_count};
use crate::simulate::{exponential, path_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FisheryParams {
    /// Horizon `T` (day).
    pub horizon: f64,
    /// Net mortality `R` (1/day), catastrophic losses folded in.
    pub mortality: f64,
    /// Predation pressure `p` (1/day).
    pub predation: f64,
    /// Upper bound of the harvesting rate (1/day).
    pub h_max: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub growth: GrowthCurve,
    /// Time step of the backward integration (day).
    pub dt: f64,
}

impl Default for FisheryParams {
    fn default() -> Self {
        Self {
            horizon: 150.0,
            mortality: 0.01,
            predation: 0.01,
            h_max: 0.02,
            w1: 3.0,
            w2: 2.0,
            w3: 1.0,
            growth: GrowthCurve::default(),
            dt: 0.01,
        }
    }
}

impl FisheryParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fishery.horizon", self.horizon),
            ("fishery.mortality", self.mortality),
            ("fishery.predation", self.predation),
            ("fishery.h_max", self.h_max),
            ("fishery.w1", self.w1),
            ("fishery.w2", self.w2),
            ("fishery.w3", self.w3),
            ("fishery.dt", self.dt),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return config(format!("{key} must be > 0, got {v}"));
            }
        }
        if self.dt >= self.horizon {
            return config(format!("fishery.dt ({}) must be smaller than fishery.horizon ({})", self.dt, self.horizon));
        }
        self.growth.validate()
    }

    /// Minimised Hamiltonian per unit population at `(psi, U_t)`.
    fn hamiltonian(&self, psi: f64, weight: f64) -> f64 {
        let (h, u) = bang_bang_controls(psi, weight, self);
        self.frozen_hamiltonian(psi, weight, h, u)
    }

    fn frozen_hamiltonian(&self, psi: f64, weight: f64, h: f64, u: f64) -> f64 {
        -(self.mortality + self.predation * (1.0 - u) + h) * psi - self.w1 * h * weight
            + self.w2 * self.predation * u * weight
    }
}

/// Bang-bang minimisers `(h, u)`; ties go to the inactive control.
pub fn bang_bang_controls(psi: f64, weight: f64, params: &FisheryParams) -> (f64, f64) {
    let h = if -params.w1 * weight - psi < 0.0 { params.h_max } else { 0.0 };
    let u = if params.w2 * weight + psi < 0.0 { 1.0 } else { 0.0 };
    (h, u)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiSolution {
    pub times: Vec<f64>,
    pub psi: Vec<f64>,
    /// Body weight `U_t` on the same mesh.
    pub weight: Vec<f64>,
    pub h_star: Vec<f64>,
    pub u_star: Vec<f64>,
}

/// Backward step of length `dt` from `(t, psi)` with switch location.
fn step_with_switches(params: &FisheryParams, t: f64, psi: f64, dt: f64) -> f64 {
    let weight = |s: f64| params.growth.weight_at(s);
    let advance = |t0: f64, y0: f64, h: f64, u: f64, len: f64| {
        let mut rhs = |s: f64, y: f64| -params.frozen_hamiltonian(y, weight(s), h, u);
        rk4_step(&mut rhs, t0, y0, -len)
    };

    let (mut t_cur, mut y, mut remaining) = (t, psi, dt);
    let mut forced: Option<(f64, f64)> = None;
    for _ in 0..16 {
        let c0 = forced.take().unwrap_or_else(|| bang_bang_controls(y, weight(t_cur), params));
        let y_end = advance(t_cur, y, c0.0, c0.1, remaining);
        let c_end = bang_bang_controls(y_end, weight(t_cur - remaining), params);
        if c_end == c0 {
            return y_end;
        }
        // The frozen trajectory leaves the c0 region inside the step.
        let (mut lo, mut hi) = (0.0, remaining);
        let mut c_hi = c_end;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let y_mid = advance(t_cur, y, c0.0, c0.1, mid);
            let c_mid = bang_bang_controls(y_mid, weight(t_cur - mid), params);
            if c_mid == c0 {
                lo = mid;
            } else {
                hi = mid;
                c_hi = c_mid;
            }
        }
        if lo > 0.0 {
            y = advance(t_cur, y, c0.0, c0.1, lo);
        }
        t_cur -= lo;
        remaining -= lo;
        forced = Some(c_hi);
        if remaining <= 1e-14 * dt {
            return y;
        }
    }
    let c = forced.unwrap_or_else(|| bang_bang_controls(y, weight(t_cur), params));
    advance(t_cur, y, c.0, c.1, remaining)
}

/// Integrates `Ψ` backward from `T` to 0 and evaluates the feedback
/// schedules on the mesh.
pub fn solve_psi(params: &FisheryParams) -> Result<PsiSolution> {
    params.validate()?;
    let n = step_count(params.horizon, params.dt);
    let dt = params.horizon / n as f64;
    let times: Vec<f64> = (0..=n).map(|k| if k == n { params.horizon } else { k as f64 * dt }).collect();
    let weight: Vec<f64> = times.iter().map(|&t| params.growth.weight_at(t)).collect();

    let mut psi = vec![0.0; n + 1];
    psi[n] = -params.w3 * weight[n];
    for k in (0..n).rev() {
        let y = step_with_switches(params, times[k + 1], psi[k + 1], dt);
        if !y.is_finite() {
            return Err(Error::NonFinite { step: n - k, t: times[k], y });
        }
        psi[k] = y;
    }
    let (h_star, u_star) = psi.iter().zip(&weight).map(|(&p, &w)| bang_bang_controls(p, w, params)).unzip();
    Ok(PsiSolution { times, psi, weight, h_star, u_star })
}

/// Maximal time intervals on which `flags` is positive.
pub fn active_intervals(times: &[f64], flags: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (k, &f) in flags.iter().enumerate() {
        match (f > 0.0, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push((times[s], times[k - 1]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((times[s], times[times.len() - 1]));
    }
    out
}

/// Start time `T0` of harvesting when `h*` is zero up to `T0` and `h_max`
/// afterwards, with a single interior switch. The switch is placed at the
/// linearly interpolated root of the switching function.
pub fn detect_harvest_threshold(solution: &PsiSolution, params: &FisheryParams) -> Option<f64> {
    let first = solution.h_star.iter().position(|&h| h > 0.0)?;
    if first == 0 || solution.h_star[first..].iter().any(|&h| h <= 0.0) {
        return None;
    }
    let g = |k: usize| -params.w1 * solution.weight[k] - solution.psi[k];
    let (g0, g1) = (g(first - 1), g(first));
    let (t0, t1) = (solution.times[first - 1], solution.times[first]);
    let theta = if g0 != g1 { (g0 / (g0 - g1)).clamp(0.0, 1.0) } else { 1.0 };
    Some(t0 + theta * (t1 - t0))
}

/// Largest absolute residual of the population-scale HJB equation under
/// `Φ = Ψ x` over the mesh and the test populations. The time derivative is
/// a centred difference inside the mesh and a second-order one-sided
/// difference at the ends.
pub fn hjb_residual(solution: &PsiSolution, params: &FisheryParams, test_x: &[f64]) -> f64 {
    let psi = &solution.psi;
    let t = &solution.times;
    let n = psi.len();
    if n < 3 {
        return f64::NAN;
    }
    let mut worst = 0.0_f64;
    for k in 0..n {
        let dpsi = if k == 0 {
            let h = t[1] - t[0];
            (-3.0 * psi[0] + 4.0 * psi[1] - psi[2]) / (2.0 * h)
        } else if k + 1 == n {
            let h = t[n - 1] - t[n - 2];
            (3.0 * psi[n - 1] - 4.0 * psi[n - 2] + psi[n - 3]) / (2.0 * h)
        } else {
            (psi[k + 1] - psi[k - 1]) / (t[k + 1] - t[k - 1])
        };
        let per_unit = -dpsi - params.hamiltonian(psi[k], solution.weight[k]);
        for &x in test_x {
            worst = worst.max((x * per_unit).abs());
        }
    }
    worst
}

/// Size distribution of catastrophic losses (fraction of the population).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpSizes {
    Fixed { gamma: f64 },
    Uniform { low: f64, high: f64 },
}

impl JumpSizes {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpSizes::Fixed { gamma } => gamma,
            JumpSizes::Uniform { low, high } => low + (high - low) * rng.gen::<f64>(),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            JumpSizes::Fixed { gamma } => gamma,
            JumpSizes::Uniform { low, high } => 0.5 * (low + high),
        }
    }
}

/// Population path under the schedules of `solution`, with catastrophic
/// losses arriving at rate `intensity`. Controls are piecewise constant on
/// the mesh (value at the left end of each interval), so the population is
/// exactly exponential between mesh points and jump times. Returns the
/// population at every mesh time.
pub fn simulate_population(
    params: &FisheryParams,
    solution: &PsiSolution,
    intensity: f64,
    jumps: JumpSizes,
    x0: f64,
    rng_seed: u64,
) -> Vec<f64> {
    let mut rng = path_rng(rng_seed, 0);
    simulate_population_with(params, solution, intensity, jumps, x0, &mut rng)
}

pub fn simulate_population_with<R: Rng + ?Sized>(
    params: &FisheryParams,
    solution: &PsiSolution,
    intensity: f64,
    jumps: JumpSizes,
    x0: f64,
    rng: &mut R,
) -> Vec<f64> {
    let times = &solution.times;
    let mut out = Vec::with_capacity(times.len());
    let mut x = x0;
    out.push(x);
    let mut next_jump = if intensity > 0.0 { exponential(rng, intensity) } else { f64::INFINITY };
    for k in 0..times.len() - 1 {
        let rate = params.mortality + params.predation * (1.0 - solution.u_star[k]) + solution.h_star[k];
        let mut t = times[k];
        while next_jump <= times[k + 1] {
            x *= (-rate * (next_jump - t)).exp();
            x *= 1.0 - jumps.sample(rng);
            t = next_jump;
            next_jump += exponential(rng, intensity);
        }
        x *= (-rate * (times[k + 1] - t)).exp();
        out.push(x);
    }
    out
}
