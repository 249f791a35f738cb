//! Runs the selected solver and turns its result into tables and a summary.

use anyhow::Result;
use riverdp_core::algae::{policy_transition_metric, solve_policy_iteration};
use riverdp_core::coupled::{self, CoupledSolution};
use riverdp_core::fishery::{active_intervals, detect_harvest_threshold, hjb_residual, solve_psi};
use riverdp_core::reservoir::{solve_stationary, StationaryValue};
use riverdp_core::sediment::{solve_value_iteration, SedimentNumerics, SedimentSolution};
use riverdp_core::RegimeChain;
use serde_json::json;

use crate::config::{Loaded, Problem};
use crate::output::{flag, num, Table};

/// Result of one solver run, ready to be written.
pub struct Report {
    /// The first table is the primary one (used by sweeps).
    pub tables: Vec<Table>,
    pub summary: serde_json::Value,
    pub converged: bool,
    /// Nodal values, compared across sweep instances.
    pub values: Vec<f64>,
}

/// Solver output kept in memory for verification.
pub enum Solved {
    Fishery,
    Algae,
    Sediment(SedimentSolution),
    Reservoir(StationaryValue, RegimeChain),
    Coupled(Box<CoupledSolution>, RegimeChain),
}

pub fn run(loaded: &Loaded) -> Result<(Report, Solved)> {
    let cfg = &loaded.config;
    let numerics = cfg.numerics.resolved(cfg.problem)?;
    match cfg.problem {
        Problem::Fishery => {
            let p = &cfg.fishery;
            let s = solve_psi(p)?;
            let mut t = Table::new("fishery_schedule", &["t", "t_normalized", "psi", "weight_g", "h_star", "u_star"]);
            for k in 0..s.times.len() {
                t.push(vec![
                    num(s.times[k]),
                    num(s.times[k] / p.horizon),
                    num(s.psi[k]),
                    num(s.weight[k]),
                    num(s.h_star[k]),
                    num(s.u_star[k]),
                ]);
            }
            let summary = json!({
                "psi_at_0": s.psi[0],
                "harvest_start": detect_harvest_threshold(&s, p),
                "harvest_intervals": active_intervals(&s.times, &s.h_star),
                "protection_intervals": active_intervals(&s.times, &s.u_star),
                "hjb_residual": hjb_residual(&s, p, &[0.1, 1.0, 10.0]),
                "steps": s.times.len() - 1,
            });
            Ok((Report { tables: vec![t], summary, converged: true, values: s.psi.clone() }, Solved::Fishery))
        }
        Problem::Algae => {
            let p = &cfg.algae;
            let s = solve_policy_iteration(p, numerics.n_nodes, numerics.tolerance, numerics.max_iterations)?;
            let mut t = Table::new("algae_value", &["z", "z_normalized", "value", "q", "q_normalized"]);
            for k in 0..s.z.len() {
                t.push(vec![
                    num(s.z[k]),
                    num(s.z[k] / p.domain_upper()),
                    num(s.value[k]),
                    num(s.policy[k]),
                    num(s.policy[k] / p.q_hat),
                ]);
            }
            let summary = json!({
                "iterations": s.iterations,
                "residuals": s.residuals,
                "max_policy_jump": policy_transition_metric(std::slice::from_ref(&s))[0],
                "sampling_fallback": s.sampling_fallback,
                "numerics": numerics,
            });
            Ok((Report { tables: vec![t], summary, converged: s.converged, values: s.value.clone() }, Solved::Algae))
        }
        Problem::Sediment => {
            let n = SedimentNumerics {
                n_nodes: numerics.n_nodes,
                dt: numerics.dt,
                tolerance: numerics.tolerance,
                max_iterations: numerics.max_iterations,
            };
            let s = solve_value_iteration(&cfg.sediment, &n)?;
            let mut t = Table::new("sediment_value", &["w", "value", "replenish"]);
            for k in 0..s.w.len() {
                t.push(vec![num(s.w[k]), num(s.value[k]), flag(s.omega[k])]);
            }
            let summary = json!({
                "threshold": s.threshold,
                "iterations": s.iterations,
                "dt": s.dt,
                "value_at_1": s.value[s.value.len() - 1],
                "numerics": numerics,
            });
            let values = s.value.clone();
            Ok((Report { tables: vec![t], summary, converged: s.converged, values }, Solved::Sediment(s)))
        }
        Problem::Reservoir => {
            let p = &cfg.reservoir;
            let chain = loaded.chain()?;
            let s = solve_stationary(p, &chain, numerics.n_nodes, numerics.tolerance, numerics.max_iterations)?;
            let mut t = Table::new(
                "reservoir_value",
                &["regime", "inflow_m3s", "y", "volume_m3", "value", "discharge_m3s", "discharge_ratio"],
            );
            for i in 0..chain.n_regimes() {
                for k in 0..s.grid.n_nodes() {
                    let y = s.grid.node(k);
                    t.push(vec![
                        (i + 1).to_string(),
                        num(chain.discharge(i)),
                        num(y),
                        num(y * p.capacity),
                        num(s.values[i][k]),
                        num(s.discharge[i][k]),
                        num(s.policy[i][k]),
                    ]);
                }
            }
            let mut h = Table::new("reservoir_residuals", &["pass", "change"]);
            for (k, c) in s.residual_history.iter().enumerate() {
                h.push(vec![(k + 1).to_string(), num(*c)]);
            }
            let summary = json!({
                "regimes": chain.n_regimes(),
                "passes": s.iterations,
                "interior_residual": s.interior_residual,
                "final_change": s.residual_history.last(),
                "numerics": numerics,
            });
            let values = s.values.concat();
            Ok((Report { tables: vec![t, h], summary, converged: s.converged, values }, Solved::Reservoir(s, chain)))
        }
        Problem::Coupled => {
            let p = &cfg.coupled;
            let chain = loaded.chain()?;
            let s = coupled::solve(p, &chain)?;
            let (values, policy) = coupled_tables(&s);
            let summary = json!({
                "regimes": chain.n_regimes(),
                "discharges": chain.discharges(),
                "grid_points": s.grid.len(),
                "steps": s.steps,
                "stored_times": s.slices.iter().map(|x| x.t).collect::<Vec<_>>(),
                "min_value": s.min_value,
                "max_backward_decrease": s.max_backward_decrease,
            });
            let flat = s.slices.first().map(|x| x.values.concat()).unwrap_or_default();
            Ok((
                Report { tables: vec![values, policy], summary, converged: true, values: flat },
                Solved::Coupled(Box::new(s), chain),
            ))
        }
    }
}

fn coupled_tables(s: &CoupledSolution) -> (Table, Table) {
    let mut values = Table::new("coupled_value", &["t", "regime", "x1", "x2", "x3", "value"]);
    let mut policy = Table::new(
        "coupled_policy",
        &["t", "regime", "x1", "x2", "x3", "q_multiplier_index", "q_value_m3s", "replenish"],
    );
    for slice in &s.slices {
        for (i, q_in) in s.discharges.iter().enumerate() {
            for (k, point) in s.grid.points().iter().enumerate() {
                let x = &point.coords;
                let head = vec![num(slice.t), (i + 1).to_string(), num(x[0]), num(x[1]), num(x[2])];
                let mut row = head.clone();
                row.push(num(slice.values[i][k]));
                values.push(row);
                let node = slice.policy[i][k];
                let mut row = head;
                row.push((node.multiplier + 1).to_string());
                row.push(num(s.multipliers[node.multiplier] * q_in));
                row.push(flag(node.replenish));
                policy.push(row);
            }
        }
    }
    (values, policy)
}
