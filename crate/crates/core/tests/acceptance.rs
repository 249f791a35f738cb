//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use riverdp_core::algae::{policy_transition_metric, solve_policy_iteration, AlgaeParams};
use riverdp_core::coupled::{self, policy_slice, CoupledParams};
use riverdp_core::fishery::{active_intervals, detect_harvest_threshold, hjb_residual, solve_psi, FisheryParams};
use riverdp_core::numerics::{rk4_integrate_backward, thomas_solve, weno3_interpolate, weno5_derivatives};
use riverdp_core::regime::{coupled_preset_discharges, reservoir_preset_discharges, synth_birth_death, RegimeChain};
use riverdp_core::reservoir::{admissible_interval, solve_stationary, updated_node_value, ReservoirParams};
use riverdp_core::sediment::{
    chi_eps, epsilon_sweep, is_threshold_type, mc_verify_sediment, solve_value_iteration, SedimentNumerics,
    SedimentParams,
};
use riverdp_core::sparse_grid::{count_points, SparseGrid};
use riverdp_core::{TridiagonalSystem, UniformGrid1D};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn fitted_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn fishery_structure() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for w3 in [1.0, 3.0, 10.0] {
        let p = FisheryParams { w3, ..Default::default() };
        let start = Instant::now();
        let s = solve_psi(&p).expect("fishery solve");
        let secs = start.elapsed().as_secs_f64();
        let u = active_intervals(&s.times, &s.u_star);
        let h = active_intervals(&s.times, &s.h_star);
        let t_end = p.horizon;
        let shape = match w3 {
            w if w == 1.0 => {
                let t0 = detect_harvest_threshold(&s, &p);
                let single_switch = h.len() == 1 && h[0].1 == t_end && t0.is_some_and(|t| t > 0.0 && t < t_end);
                let early = u.len() == 1 && u[0].0 == 0.0 && u[0].1 < t_end;
                notes.push(format!("w3=1 T0={:.3} u={u:?}", t0.unwrap_or(f64::NAN)));
                single_switch && early
            }
            w if w == 3.0 => {
                notes.push(format!("w3=3 u={u:?}"));
                u.len() == 2 && u[0].0 == 0.0 && u[1].1 == t_end
            }
            _ => {
                notes.push("w3=10 u≡1 h≡0".into());
                s.u_star.iter().all(|&v| v == 1.0) && s.h_star.iter().all(|&v| v == 0.0)
            }
        };
        ok &= shape && secs < 1.0;
    }
    outcome(ok, notes.join("; "))
}

fn fishery_residual() -> Outcome {
    let p = FisheryParams::default();
    let s = solve_psi(&p).expect("fishery solve");
    let xs = [0.1, 1.0, 10.0];
    let scale = s.psi.iter().fold(0.0_f64, |m, v| m.max(v.abs())) * 10.0;
    let scaled = hjb_residual(&s, &p, &xs) / scale;
    let psi0 = |w3: f64, dt: f64| solve_psi(&FisheryParams { w3, dt, ..Default::default() }).expect("fishery solve").psi[0];
    let mut ratios = Vec::new();
    for w3 in [1.0, 3.0] {
        let (a, b, c) = (psi0(w3, 0.4), psi0(w3, 0.2), psi0(w3, 0.1));
        ratios.push((a - b).abs() / (b - c).abs());
    }
    let ok = scaled <= 1e-5 && ratios.iter().all(|&r| r >= 12.0);
    outcome(ok, format!("scaled residual {scaled:.2e}, dt-halving ratios {ratios:.1?}"))
}

fn algae_policy_iteration() -> Outcome {
    let mut worst_it = 0;
    let mut worst_concavity = f64::NEG_INFINITY;
    let mut worst_time = 0.0_f64;
    let mut all_converged = true;
    for i in 1..=20 {
        let p = AlgaeParams { weight: 0.25 * i as f64, ..Default::default() };
        let start = Instant::now();
        let s = solve_policy_iteration(&p, 501, 1e-14, 50).expect("algae solve");
        worst_time = worst_time.max(start.elapsed().as_secs_f64());
        all_converged &= s.converged;
        worst_it = worst_it.max(s.iterations);
        let second = s.value.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).fold(f64::NEG_INFINITY, f64::max);
        worst_concavity = worst_concavity.max(second);
    }
    let ok = all_converged && worst_it <= 5 && worst_concavity <= 1e-8 && worst_time < 5.0;
    outcome(ok, format!("max iterations {worst_it}, max second difference {worst_concavity:.2e}, slowest {worst_time:.2}s"))
}

fn algae_transition() -> Outcome {
    let sweep = |k0: f64, k1: f64, weights: &[f64]| -> Vec<f64> {
        let sols: Vec<_> = weights
            .iter()
            .map(|&a| solve_policy_iteration(&AlgaeParams { weight: a, k0, k1, ..Default::default() }, 501, 1e-14, 50).expect("algae solve"))
            .collect();
        policy_transition_metric(&sols)
    };
    let low = [0.25, 0.5, 0.75];
    let high: Vec<f64> = (4..=20).map(|i| 0.25 * i as f64).collect();
    let all: Vec<f64> = (1..=20).map(|i| 0.25 * i as f64).collect();
    let jumps_low = sweep(0.4, 0.3, &low);
    let jumps_high = sweep(0.4, 0.3, &high);
    let jumps_flat = sweep(1.0, 0.0, &all);
    let max_high = jumps_high.iter().cloned().fold(0.0, f64::max);
    let max_flat = jumps_flat.iter().cloned().fold(0.0, f64::max);
    let ok = jumps_low.iter().all(|&j| j > 0.2) && max_high < 0.05 && max_flat < 0.05;
    outcome(
        ok,
        format!("jumps at a=0.25,0.5,0.75: {jumps_low:.3?} (need > 0.2); max for a>=1: {max_high:.3}; max with K1=0: {max_flat:.3}"),
    )
}

fn reservoir() -> Outcome {
    let params = ReservoirParams::default();
    let chain = synth_birth_death(61, 0.5, 0.5, reservoir_preset_discharges()).expect("chain");
    let start = Instant::now();
    let s = solve_stationary(&params, &chain, 401, 1e-12, 20_000).expect("reservoir solve");
    let secs = start.elapsed().as_secs_f64();
    let converged = s.converged && s.iterations <= 20_000;

    let mut feasible = true;
    for i in 0..chain.n_regimes() {
        for (k, &q) in s.discharge[i].iter().enumerate() {
            let (lo, hi) = admissible_interval(s.grid.node(k), chain.discharge(i), &params);
            feasible &= q >= lo - 1e-9 && q <= hi + 1e-9;
        }
    }

    let q = reservoir_preset_discharges();
    let joint = solve_stationary(&params, &RegimeChain::decoupled(q.clone()).expect("chain"), 401, 1e-13, 20_000).expect("solve");
    let mut gap = 0.0_f64;
    for (i, &qi) in q.iter().enumerate() {
        let single = solve_stationary(&params, &RegimeChain::decoupled(vec![qi]).expect("chain"), 401, 1e-13, 20_000).expect("solve");
        gap = gap.max(joint.values[i].iter().zip(&single.values[0]).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())));
    }

    // Monotone update, on the update the solver actually uses.
    let small = synth_birth_death(3, 0.5, 0.5, vec![5.0, 40.0, 120.0]).expect("chain");
    let n = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut violations = 0;
    for _ in 0..1000 {
        let values: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (i, k) = (rng.gen_range(0..3), rng.gen_range(0..n));
        let base = updated_node_value(&values, i, k, n, &params, &small).expect("update");
        let target = loop {
            let t = rng.gen_range(0..3 * n);
            if t != i * n + k {
                break t;
            }
        };
        let mut bumped = values.clone();
        bumped[target] += rng.gen_range(0.0..0.1);
        if updated_node_value(&bumped, i, k, n, &params, &small).expect("update") < base - 1e-15 {
            violations += 1;
        }
    }
    let ok = converged && feasible && gap <= 1e-10 && violations == 0;
    outcome(
        ok,
        format!(
            "sweeps {} (converged {}, {secs:.1}s), feasible {feasible}, decoupled gap {gap:.1e}, monotone violations {violations}/1000",
            s.iterations, s.converged
        ),
    )
}

/// Discounted regularised depletion cost of the free decay from `w0`, by
/// RK4 on the state and the trapezoid rule on the integrand.
fn decay_cost_quadrature(p: &SedimentParams, w0: f64) -> f64 {
    let h = 1e-3;
    let steps = (400.0 / h) as usize;
    let mut w = w0;
    let mut total = 0.0;
    let integrand = |t: f64, w: f64| (-p.discount * t).exp() * chi_eps(w, p.epsilon);
    for k in 0..steps {
        let t = k as f64 * h;
        let f = |w: f64| p.drift(w);
        let k1 = f(w);
        let k2 = f(w + 0.5 * h * k1);
        let k3 = f(w + 0.5 * h * k2);
        let k4 = f(w + h * k3);
        let next = w + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        total += 0.5 * h * (integrand(t, w) + integrand(t + h, next));
        w = next;
    }
    total
}

fn sediment_threshold() -> Outcome {
    let params = SedimentParams::default();
    let numerics = SedimentNumerics::default();
    let eps = [0.1, 0.05, 0.01, 0.005, 0.001];
    let start = Instant::now();
    let sweep = epsilon_sweep(&params, &eps, &numerics).expect("sweep");
    let secs = start.elapsed().as_secs_f64();
    let threshold = sweep.solutions.iter().all(|s| s.converged && is_threshold_type(&s.omega));
    let decreasing = sweep.distances.windows(2).all(|w| w[1] < w[0]);
    let ends = sweep.distances[3] < sweep.distances[0];
    let bounded = sweep.solutions.iter().flat_map(|s| &s.value).all(|&v| (0.0..=10.0).contains(&v));

    let no_chance = SedimentParams { intensity: 0.0, ..params };
    let s0 = solve_value_iteration(&no_chance, &numerics).expect("solve");
    let oracle = decay_cost_quadrature(&no_chance, 1.0);
    let gap = (s0.value.last().copied().unwrap_or(f64::NAN) - oracle).abs();
    let dx = 1.0 / (numerics.n_nodes - 1) as f64;

    let ok = threshold && decreasing && ends && bounded && gap <= 2.0 * dx && secs < 60.0;
    outcome(
        ok,
        format!(
            "threshold-type {threshold}, distances {:?}, 0<=Φ<=10 {bounded}, λ=0 gap {gap:.2e} (limit {:.2e}), sweep {secs:.1}s",
            sweep.distances.iter().map(|d| format!("{d:.2e}")).collect::<Vec<_>>(),
            2.0 * dx
        ),
    )
}

fn sediment_monte_carlo() -> Outcome {
    let params = SedimentParams::default();
    let s = solve_value_iteration(&params, &SedimentNumerics::default()).expect("solve");
    let mut ok = true;
    let mut notes = Vec::new();
    for (k, w0) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let rep = mc_verify_sediment(&params, &s, w0, 100.0, 10_000, 100 + k as u64).expect("mc");
        let phi = s.value_at(w0);
        let pass = (rep.mean - phi).abs() <= 3.0 * rep.std_error + 0.02;
        ok &= pass;
        notes.push(format!("w0={w0}: {:.4}±{:.4} vs Φ {:.4}", rep.mean, rep.std_error, phi));
    }
    outcome(ok, notes.join("; "))
}

fn sparse_grid() -> Outcome {
    let count = count_points(3, 11).expect("count");
    let grid = SparseGrid::build(3, 11).expect("grid");
    let spacing = grid.min_spacing();
    let f = |x: &[f64]| (1.3 * x[0]).sin() * (2.0 * x[1] + 0.5).cos() + x[2].powi(3);
    let values = grid.sample(f);
    let surpluses = grid.hierarchize(&values).expect("hierarchize");
    let nodal = grid
        .points()
        .iter()
        .zip(&values)
        .fold(0.0_f64, |m, (p, v)| m.max((grid.evaluate(&surpluses, &p.coords) - v).abs()));

    let target = |x: &[f64]| x.iter().map(|&t| (std::f64::consts::PI * t).sin()).product::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples: Vec<[f64; 3]> = (0..20_000).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let mut pts = Vec::new();
    for level in 5..=9 {
        let g = SparseGrid::build(3, level).expect("grid");
        let s = g.hierarchize(&g.sample(target)).expect("hierarchize");
        let mse = samples.iter().map(|x| (g.evaluate(&s, x) - target(x)).powi(2)).sum::<f64>() / samples.len() as f64;
        pts.push(((g.len() as f64).ln(), mse.sqrt().ln()));
    }
    let slope = -fitted_slope(&pts);
    let ok = count == 6017 && (spacing - 1.0 / 256.0).abs() < 1e-15 && nodal <= 1e-12 && slope >= 1.6;
    outcome(ok, format!("count {count}, min spacing 1/{:.0}, nodal error {nodal:.1e}, L2 slope {slope:.2} (need >= 1.6)", 1.0 / spacing))
}

fn coupled_desk_scale() -> Outcome {
    let all = coupled_preset_discharges();
    let q: Vec<f64> = [1usize, 3, 8, 13, 21].iter().map(|&i| all[i - 1]).collect();
    let chain = synth_birth_death(5, 0.5, 0.5, q).expect("chain");
    let params = CoupledParams::default();
    let guard = 1.0 - params.dt * (params.discount + params.intensity + chain.max_exit_rate());
    let start = Instant::now();
    let s = coupled::solve(&params, &chain).expect("coupled solve");
    let secs = start.elapsed().as_secs_f64();
    let terminal = s.slice(params.horizon).expect("terminal slice").values.iter().flatten().all(|&v| v == 0.0);
    let nonnegative = s.min_value >= 0.0;
    let monotone = s.max_backward_decrease <= 1e-12;
    // The full chain's low-flow regime i = 3 (Q = 12.5) is the second regime here.
    let rows = policy_slice(&s, 0.0, 1).expect("policy slice");
    let below: Vec<_> = rows.iter().filter(|r| r.x2 < 0.9).collect();
    let share = below.iter().filter(|r| r.replenish).count() as f64 / below.len() as f64;
    let ok = terminal && nonnegative && monotone && guard >= 0.0 && share > 0.5 && secs < 600.0;
    outcome(
        ok,
        format!(
            "Φ(T)=0 {terminal}, min Φ {:.3}, max backward decrease {:.3}, guard {guard:.3}, replenish share {share:.3}, {secs:.1}s",
            s.min_value, s.max_backward_decrease
        ),
    )
}

fn kernels() -> Outcome {
    let start = Instant::now();
    let weno5_err = |n: usize| {
        let g = UniformGrid1D::unit(n).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|x| x.sin()).collect();
        let (l, r) = weno5_derivatives(&v, g.spacing()).unwrap();
        (3..n - 3).map(|k| (l[k] - g.node(k).cos()).abs().max((r[k] - g.node(k).cos()).abs())).fold(0.0, f64::max)
    };
    let pts: Vec<(f64, f64)> = [41usize, 81, 161, 321].iter().map(|&n| (((n - 1) as f64).ln(), weno5_err(n).ln())).collect();
    let weno5_order = -fitted_slope(&pts);

    let weno3_err = |n: usize| {
        let g = UniformGrid1D::unit(n).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|&x| x.exp()).collect();
        (0..n - 1)
            .map(|j| {
                let x = g.node(j) + 0.5 * g.spacing();
                (weno3_interpolate(&g, &v, x).unwrap() - x.exp()).abs()
            })
            .fold(0.0, f64::max)
    };
    let weno3_order = [21usize, 41, 81, 161].iter().map(|&n| (weno3_err(n) / weno3_err(2 * n - 1)).log2()).fold(f64::INFINITY, f64::min);
    let g = UniformGrid1D::unit(11).unwrap();
    let v: Vec<f64> = g.nodes().iter().map(|x| (5.0 * x).sin()).collect();
    let weno3_nodal = (0..11).all(|k| weno3_interpolate(&g, &v, g.node(k)).unwrap() == v[k]);

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut thomas_gap = 0.0_f64;
    for _ in 0..100 {
        let n = 40;
        let sub: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sup: Vec<f64> = (0..n - 1).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let diag: Vec<f64> = (0..n).map(|_| rng.gen_range(2.5..4.0)).collect();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense = nalgebra::DMatrix::from_fn(n, n, |r, c| {
            if r == c {
                diag[r]
            } else if c + 1 == r {
                sub[c]
            } else if r + 1 == c {
                sup[r]
            } else {
                0.0
            }
        });
        let oracle = dense.lu().solve(&nalgebra::DVector::from_vec(rhs.clone())).expect("nonsingular");
        let x = thomas_solve(&TridiagonalSystem::new(sub, diag, sup, rhs).unwrap()).unwrap();
        thomas_gap = thomas_gap.max(x.iter().zip(oracle.iter()).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())));
    }

    let rk4_err = |dt: f64| (rk4_integrate_backward(|_, y| -y, 1.0, 1.0, 0.0, dt).unwrap().values[0] - std::f64::consts::E).abs();
    let rk4_order = [0.1, 0.05, 0.025].iter().map(|&dt| (rk4_err(dt) / rk4_err(dt / 2.0)).log2()).fold(f64::INFINITY, f64::min);
    let secs = start.elapsed().as_secs_f64();
    let ok = weno5_order >= 4.5 && weno3_order >= 2.5 && weno3_nodal && thomas_gap <= 1e-12 && rk4_order >= 3.9 && secs < 10.0;
    outcome(
        ok,
        format!(
            "WENO5 order {weno5_order:.2}, WENO3 order {weno3_order:.2} nodal {weno3_nodal}, Thomas gap {thomas_gap:.1e}, RK4 order {rk4_order:.2}, {secs:.2}s"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("fishery policy structure", fishery_structure),
        ("fishery HJB residual", fishery_residual),
        ("algae policy iteration", algae_policy_iteration),
        ("algae policy transition", algae_transition),
        ("reservoir solver", reservoir),
        ("sediment threshold and regularization", sediment_threshold),
        ("sediment Monte Carlo", sediment_monte_carlo),
        ("sparse grid", sparse_grid),
        ("coupled solver desk scale", coupled_desk_scale),
        ("kernel suite", kernels),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        if !r.pass {
            failed += 1;
        }
        println!("criterion {:>2} {}: {} ({})", k + 1, if r.pass { "PASS" } else { "FAIL" }, name, r.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
