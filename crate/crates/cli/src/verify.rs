//! Monte Carlo verification of a value/policy pair, solved in-line or read
//! back from the files of an earlier `run`.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use riverdp_core::coupled::{mc_verify_coupled, CoupledSolution, NodePolicy, TimeSlice};
use riverdp_core::numerics::weno3_interpolate;
use riverdp_core::reservoir::{mc_verify_reservoir, StationaryValue};
use riverdp_core::sediment::simulate_cost;
use riverdp_core::simulate::{monte_carlo, EstimateReport};
use riverdp_core::sparse_grid::SparseGrid;
use riverdp_core::{RegimeChain, UniformGrid1D};
use serde::Serialize;

use crate::config::{Loaded, Problem};
use crate::output::CsvData;
use crate::solve::{self, Solved};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub state: Vec<f64>,
    pub regime: usize,
    pub predicted: f64,
    pub mean: f64,
    pub std_error: f64,
    pub gap: f64,
    pub allowance: f64,
    pub band: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub problem: &'static str,
    pub source: String,
    pub n_paths: usize,
    pub seed: u64,
    pub horizon: f64,
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// Value and nodal replenish flags of the sediment problem.
struct SedimentArtifact {
    grid: UniformGrid1D,
    value: Vec<f64>,
    replenish: Vec<bool>,
}

fn check(state: Vec<f64>, regime: usize, predicted: f64, rep: EstimateReport, allowance: f64, band: f64) -> Check {
    let lower = predicted - 3.0 * rep.std_error - allowance;
    let upper = predicted + 3.0 * rep.std_error + allowance + band;
    Check {
        state,
        regime,
        predicted,
        mean: rep.mean,
        std_error: rep.std_error,
        gap: rep.mean - predicted,
        allowance,
        band,
        lower,
        upper,
        pass: rep.mean >= lower && rep.mean <= upper,
    }
}

pub fn verify(loaded: &Loaded, solution_dir: Option<&Path>) -> Result<Verification> {
    let cfg = &loaded.config;
    let v = &cfg.verify;
    ensure!(v.n_paths >= 2, "verify.n_paths must be >= 2, got {}", v.n_paths);
    ensure!(v.regime >= 1, "verify.regime is 1-based, got 0");
    let source = solution_dir.map_or_else(|| "inline".to_string(), |d| d.display().to_string());
    let solved = match solution_dir {
        None => Some(solve::run(loaded)?.1),
        Some(_) => None,
    };
    let states = |default: Vec<Vec<f64>>, dim: usize| -> Result<Vec<Vec<f64>>> {
        let s = v.states.clone().unwrap_or(default);
        ensure!(!s.is_empty(), "verify.states must not be empty");
        for x in &s {
            ensure!(x.len() == dim, "verify.states entries need {dim} coordinates, got {x:?}");
            ensure!(x.iter().all(|c| (0.0..=1.0).contains(c)), "verify.states entries must lie in [0, 1], got {x:?}");
        }
        Ok(s)
    };
    let i0 = v.regime - 1;

    let (horizon, checks) = match cfg.problem {
        Problem::Fishery | Problem::Algae => {
            bail!("verify is available for the sediment, reservoir and coupled problems, not {}", cfg.problem.name())
        }
        Problem::Sediment => {
            let p = &cfg.sediment;
            let art = match (solved, solution_dir) {
                (Some(Solved::Sediment(s)), _) => SedimentArtifact { grid: s.grid.clone(), value: s.value, replenish: s.omega },
                (_, Some(dir)) => read_sediment(dir)?,
                _ => unreachable!("inline solve matches the problem"),
            };
            let horizon = loaded.verify_horizon(p.discount);
            let allowance = v.allowance.unwrap_or(0.02);
            let band = v.band.unwrap_or(0.0);
            let mut checks = Vec::new();
            for (k, x) in states(vec![vec![0.0], vec![0.5], vec![1.0]], 1)?.into_iter().enumerate() {
                let w0 = x[0];
                let predicted = weno3_interpolate(&art.grid, &art.value, w0)?;
                let h = art.grid.spacing();
                let policy = |w: f64| art.replenish[((w.clamp(0.0, 1.0) / h).round() as usize).min(art.replenish.len() - 1)];
                let rep = monte_carlo(v.n_paths, stream(cfg.seed, k), |rng| simulate_cost(p, policy, w0, horizon, rng))?;
                checks.push(check(x, 1, predicted, rep, allowance, band));
            }
            (horizon, checks)
        }
        Problem::Reservoir => {
            let p = &cfg.reservoir;
            let (s, chain) = match (solved, solution_dir) {
                (Some(Solved::Reservoir(s, chain)), _) => (s, chain),
                (_, Some(dir)) => {
                    let chain = loaded.chain()?;
                    (read_reservoir(dir, &chain)?, chain)
                }
                _ => unreachable!("inline solve matches the problem"),
            };
            ensure!(i0 < chain.n_regimes(), "verify.regime {} outside 1..={}", v.regime, chain.n_regimes());
            let horizon = loaded.verify_horizon(p.discount);
            // The unsimulated tail costs at most exp(-δT) max Φ; the
            // simulation step adds a relative error.
            let tail = (-p.discount * horizon).exp() * s.values.iter().flatten().cloned().fold(0.0, f64::max);
            let band = v.band.unwrap_or(0.0);
            let mut checks = Vec::new();
            for (k, x) in states(vec![vec![0.5]], 1)?.into_iter().enumerate() {
                let rep = mc_verify_reservoir(p, &chain, &s, x[0], i0, horizon, v.dt, v.n_paths, stream(cfg.seed, k))?;
                let predicted = s.value_at(i0, x[0]);
                let allowance = v.allowance.unwrap_or(tail + 5e-3 * predicted.abs());
                checks.push(check(x.clone(), v.regime, predicted, rep, allowance, band));
            }
            (horizon, checks)
        }
        Problem::Coupled => {
            let p = &cfg.coupled;
            let (s, chain) = match (solved, solution_dir) {
                (Some(Solved::Coupled(s, chain)), _) => (*s, chain),
                (_, Some(dir)) => {
                    let chain = loaded.chain()?;
                    (read_coupled(dir, loaded, &chain)?, chain)
                }
                _ => unreachable!("inline solve matches the problem"),
            };
            ensure!(i0 < chain.n_regimes(), "verify.regime {} outside 1..={}", v.regime, chain.n_regimes());
            let allowance = v.allowance.unwrap_or(0.05);
            let mut checks = Vec::new();
            for (k, x) in states(vec![vec![0.5, 0.5, 0.5]], 3)?.into_iter().enumerate() {
                let x0 = [x[0], x[1], x[2]];
                let predicted = s.value_at(0.0, i0, x0).context("the solution must store t = 0")?;
                let rep = mc_verify_coupled(p, &chain, &s, x0, i0, v.n_paths, stream(cfg.seed, k))?;
                // The stored policy is read at grid nodes, so its cost sits
                // above the value by a few percent on fine grids.
                let band = v.band.unwrap_or(0.1 * predicted.abs());
                checks.push(check(x, v.regime, predicted, rep, allowance, band));
            }
            (p.horizon, checks)
        }
    };
    let pass = checks.iter().all(|c| c.pass);
    Ok(Verification {
        problem: cfg.problem.name(),
        source,
        n_paths: v.n_paths,
        seed: cfg.seed,
        horizon,
        checks,
        pass,
    })
}

/// Distinct seed per start state, so states do not share paths.
fn stream(seed: u64, k: usize) -> u64 {
    seed.wrapping_add(k as u64)
}

fn uniform_grid(w: &[f64], what: &str) -> Result<UniformGrid1D> {
    let grid = UniformGrid1D::unit(w.len()).with_context(|| format!("{what}: too few nodes"))?;
    for (k, &x) in w.iter().enumerate() {
        ensure!((x - grid.node(k)).abs() <= 1e-12, "{what}: node {} at {x} is not on the uniform grid of [0, 1]", k + 1);
    }
    Ok(grid)
}

fn flags(values: Vec<usize>, what: &str) -> Result<Vec<bool>> {
    values
        .into_iter()
        .map(|f| match f {
            0 => Ok(false),
            1 => Ok(true),
            other => bail!("{what}: replenish flag must be 0 or 1, got {other}"),
        })
        .collect()
}

fn read_sediment(dir: &Path) -> Result<SedimentArtifact> {
    let data = CsvData::read(&dir.join("sediment_value.csv"))?;
    let grid = uniform_grid(&data.floats("w")?, "sediment_value.csv")?;
    Ok(SedimentArtifact { grid, value: data.floats("value")?, replenish: flags(data.integers("replenish")?, "sediment_value.csv")? })
}

fn read_reservoir(dir: &Path, chain: &RegimeChain) -> Result<StationaryValue> {
    let data = CsvData::read(&dir.join("reservoir_value.csv"))?;
    let regime = data.integers("regime")?;
    let inflow = data.floats("inflow_m3s")?;
    let y = data.floats("y")?;
    let value = data.floats("value")?;
    let discharge = data.floats("discharge_m3s")?;
    let regimes = chain.n_regimes();
    ensure!(!y.is_empty() && y.len() % regimes == 0, "reservoir_value.csv: {} rows for {regimes} regimes", y.len());
    let n = y.len() / regimes;
    let grid = uniform_grid(&y[..n], "reservoir_value.csv")?;
    for r in 0..y.len() {
        let (i, k) = (r / n, r % n);
        ensure!(regime[r] == i + 1 && y[r] == y[k], "reservoir_value.csv row {}: rows must be grouped by regime", r + 1);
        ensure!(
            inflow[r] == chain.discharge(i),
            "reservoir_value.csv row {}: inflow {} does not match regime {} of the configuration ({})",
            r + 1,
            inflow[r],
            i + 1,
            chain.discharge(i)
        );
    }
    let chunk = |v: &[f64]| v.chunks(n).map(<[f64]>::to_vec).collect::<Vec<_>>();
    let discharge = chunk(&discharge);
    let policy = discharge.iter().enumerate().map(|(i, d)| d.iter().map(|q| q / chain.discharge(i)).collect()).collect();
    Ok(StationaryValue {
        grid,
        values: chunk(&value),
        discharge,
        policy,
        iterations: 0,
        converged: true,
        residual_history: Vec::new(),
        interior_residual: f64::NAN,
    })
}

fn read_coupled(dir: &Path, loaded: &Loaded, chain: &RegimeChain) -> Result<CoupledSolution> {
    let p = &loaded.config.coupled;
    let grid = SparseGrid::build_with(3, p.level, p.hierarchy)?;
    let values = CsvData::read(&dir.join("coupled_value.csv"))?;
    let policy = CsvData::read(&dir.join("coupled_policy.csv"))?;
    let (n, regimes) = (grid.len(), chain.n_regimes());
    let per_slice = n * regimes;
    let t = values.floats("t")?;
    ensure!(
        !t.is_empty() && t.len() % per_slice == 0 && policy.rows.len() == t.len(),
        "coupled files hold {} value and {} policy rows, not a multiple of {n} points x {regimes} regimes",
        t.len(),
        policy.rows.len()
    );
    let coords = [values.floats("x1")?, values.floats("x2")?, values.floats("x3")?];
    let v = values.floats("value")?;
    let regime = values.integers("regime")?;
    let index = policy.integers("q_multiplier_index")?;
    let replenish = flags(policy.integers("replenish")?, "coupled_policy.csv")?;
    let t_policy = policy.floats("t")?;
    let mut slices = Vec::new();
    for block in 0..t.len() / per_slice {
        let start = block * per_slice;
        let mut slice_values = vec![vec![0.0; n]; regimes];
        let mut slice_policy = vec![vec![NodePolicy { multiplier: 0, replenish: false }; n]; regimes];
        for r in start..start + per_slice {
            let (i, k) = ((r - start) / n, (r - start) % n);
            let point = &grid.points()[k].coords;
            ensure!(
                t[r] == t[start] && t_policy[r] == t[start] && regime[r] == i + 1,
                "coupled files row {}: rows must be grouped by time, then regime",
                r + 1
            );
            ensure!(
                (0..3).all(|a| coords[a][r] == point[a]),
                "coupled_value.csv row {}: point does not match the level-{} grid",
                r + 1,
                p.level
            );
            ensure!(
                (1..=p.multipliers.len()).contains(&index[r]),
                "coupled_policy.csv row {}: q_multiplier_index {} outside 1..={}",
                r + 1,
                index[r],
                p.multipliers.len()
            );
            slice_values[i][k] = v[r];
            slice_policy[i][k] = NodePolicy { multiplier: index[r] - 1, replenish: replenish[r] };
        }
        let surpluses = slice_values.iter().map(|x| grid.hierarchize(x)).collect::<riverdp_core::Result<Vec<_>>>()?;
        slices.push(TimeSlice { t: t[start], values: slice_values, surpluses, policy: slice_policy });
    }
    Ok(CoupledSolution {
        grid,
        discharges: chain.discharges().to_vec(),
        multipliers: p.multipliers.clone(),
        dt: p.dt,
        steps: p.steps(),
        slices,
        min_value: f64::NAN,
        max_backward_decrease: f64::NAN,
    })
}
