//! Run configuration: a TOML file plus dotted `key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use riverdp_core::algae::AlgaeParams;
use riverdp_core::coupled::CoupledParams;
use riverdp_core::fishery::FisheryParams;
use riverdp_core::regime::{load_chain, coupled_preset_discharges, reservoir_preset_discharges, synth_birth_death};
use riverdp_core::reservoir::ReservoirParams;
use riverdp_core::sediment::{SedimentNumerics, SedimentParams};
use riverdp_core::RegimeChain;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Fishery,
    Reservoir,
    Algae,
    Sediment,
    Coupled,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::Fishery => "fishery",
            Problem::Reservoir => "reservoir",
            Problem::Algae => "algae",
            Problem::Sediment => "sediment",
            Problem::Coupled => "coupled",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub fishery: FisheryParams,
    #[serde(default)]
    pub reservoir: ReservoirParams,
    #[serde(default)]
    pub algae: AlgaeParams,
    #[serde(default)]
    pub sediment: SedimentParams,
    #[serde(default)]
    pub coupled: CoupledParams,
    #[serde(default)]
    pub regimes: RegimeConfig,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DischargePreset {
    /// `1.25 + 2.5 i`, `i = 1..=61`.
    Reservoir,
    /// `2.5 + 5 (i - 1)`, `i = 1..=21`.
    Coupled,
    /// Whatever the selected problem uses.
    #[default]
    Problem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    #[default]
    BirthDeath,
    Decoupled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeConfig {
    pub preset: DischargePreset,
    /// Explicit inflows (m³/s); replaces the preset.
    pub discharges: Option<Vec<f64>>,
    /// 1-based indices kept from the discharge list.
    pub subset: Option<Vec<usize>>,
    pub coupling: Coupling,
    /// Birth-death rates (1/day).
    pub up_rate: f64,
    pub down_rate: f64,
    /// Chain file, relative to the config file. Replaces everything above.
    pub file: Option<PathBuf>,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            preset: DischargePreset::Problem,
            discharges: None,
            subset: None,
            coupling: Coupling::BirthDeath,
            up_rate: 0.5,
            down_rate: 0.5,
            file: None,
        }
    }
}

/// Grid and iteration controls of the 1-D solvers. Unset entries take the
/// per-problem defaults of [`Numerics::resolved`].
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub n_nodes: Option<usize>,
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    /// Sediment time step; unset means `30 Δx^1.5`.
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedNumerics {
    pub n_nodes: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub dt: Option<f64>,
}

impl Numerics {
    pub fn resolved(&self, problem: Problem) -> Result<ResolvedNumerics> {
        let (n, tol, max) = match problem {
            Problem::Algae => (501, 1e-14, 50),
            Problem::Sediment => {
                let d = SedimentNumerics::default();
                (d.n_nodes, d.tolerance, d.max_iterations)
            }
            Problem::Reservoir => (401, 1e-12, 20_000),
            Problem::Fishery | Problem::Coupled => {
                let used = [
                    ("numerics.n_nodes", self.n_nodes.is_some()),
                    ("numerics.tolerance", self.tolerance.is_some()),
                    ("numerics.max_iterations", self.max_iterations.is_some()),
                    ("numerics.dt", self.dt.is_some()),
                ];
                if let Some((key, _)) = used.iter().find(|(_, set)| *set) {
                    bail!("{key} is not used by the {} problem (its step sizes live in [{}])", problem.name(), problem.name());
                }
                return Ok(ResolvedNumerics { n_nodes: 0, tolerance: 0.0, max_iterations: 0, dt: None });
            }
        };
        if self.dt.is_some() && problem != Problem::Sediment {
            bail!("numerics.dt is only used by the sediment problem");
        }
        let r = ResolvedNumerics {
            n_nodes: self.n_nodes.unwrap_or(n),
            tolerance: self.tolerance.unwrap_or(tol),
            max_iterations: self.max_iterations.unwrap_or(max),
            dt: self.dt,
        };
        if !(r.tolerance > 0.0) {
            bail!("numerics.tolerance must be > 0, got {}", r.tolerance);
        }
        if r.max_iterations == 0 {
            bail!("numerics.max_iterations must be >= 1");
        }
        if let Some(dt) = r.dt {
            if !(dt > 0.0) {
                bail!("numerics.dt must be > 0, got {dt}");
            }
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub n_paths: usize,
    /// Start states: `[w0]` (sediment), `[y0]` (reservoir) or
    /// `[x1, x2, x3]` (coupled).
    pub states: Option<Vec<Vec<f64>>>,
    /// 1-based start regime.
    pub regime: usize,
    /// Simulation horizon for the discounted problems; unset means the
    /// shortest horizon with `exp(-δ T) <= 0.01`, rounded up.
    pub horizon: Option<f64>,
    /// Reservoir simulation step (day).
    pub dt: f64,
    /// Discretisation allowance added to the 3σ band. Unset means 0.02
    /// (sediment), `exp(-δT) max Φ + 0.005 |Φ|` (reservoir) or 0.05 (coupled).
    pub allowance: Option<f64>,
    /// Extra room above the value for policies read at grid nodes; unset
    /// means 0, or 10% of the value for the coupled problem.
    pub band: Option<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { n_paths: 10_000, states: None, regime: 1, horizon: None, dt: 0.05, allowance: None, band: None }
    }
}

/// Parses a `key=value` override. The value is read as a TOML value, and
/// falls back to a bare string.
pub fn parse_override(item: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = item.split_once('=').ok_or_else(|| anyhow!("override {item:?} is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override {item:?} has an empty key segment");
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed table has the key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

pub fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields at least one part");
    let mut cur = table;
    for (depth, part) in parts.iter().enumerate() {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("cannot set {key}: {} is not a table", parts[..=depth].join(".")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// A parsed configuration together with the directory relative paths
/// resolve against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

pub fn load(path: &Path, overrides: &[String]) -> Result<Loaded> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    from_table(table, overrides, base_dir)
}

pub fn from_table(mut table: toml::Table, overrides: &[String], base_dir: PathBuf) -> Result<Loaded> {
    for item in overrides {
        let (key, value) = parse_override(item)?;
        apply_override(&mut table, &key, value)?;
    }
    let config: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
    Ok(Loaded { config, base_dir })
}

impl Loaded {
    /// Regime chain for the reservoir and coupled problems.
    pub fn chain(&self) -> Result<RegimeChain> {
        let r = &self.config.regimes;
        if let Some(file) = &r.file {
            let path = self.base_dir.join(file);
            return load_chain(&path).with_context(|| format!("regimes.file {}", path.display()));
        }
        let base = match (&r.discharges, r.preset) {
            (Some(q), DischargePreset::Problem) => q.clone(),
            (Some(_), _) => bail!("regimes.discharges and regimes.preset are mutually exclusive"),
            (None, DischargePreset::Reservoir) => reservoir_preset_discharges(),
            (None, DischargePreset::Coupled) => coupled_preset_discharges(),
            (None, DischargePreset::Problem) => match self.config.problem {
                Problem::Coupled => coupled_preset_discharges(),
                _ => reservoir_preset_discharges(),
            },
        };
        let q = match &r.subset {
            None => base,
            Some(idx) => {
                if idx.is_empty() {
                    bail!("regimes.subset must not be empty");
                }
                idx.iter()
                    .map(|&i| {
                        base.get(i.wrapping_sub(1))
                            .copied()
                            .ok_or_else(|| anyhow!("regimes.subset entry {i} outside 1..={}", base.len()))
                    })
                    .collect::<Result<_>>()?
            }
        };
        let chain = match r.coupling {
            Coupling::Decoupled => RegimeChain::decoupled(q),
            Coupling::BirthDeath => synth_birth_death(q.len(), r.up_rate, r.down_rate, q),
        };
        chain.context("regimes")
    }

    /// Verification horizon, the shortest multiple of 10 with
    /// `exp(-discount T) <= 0.01` unless configured.
    pub fn verify_horizon(&self, discount: f64) -> f64 {
        self.config.verify.horizon.unwrap_or_else(|| (100.0_f64.ln() / discount / 10.0).ceil() * 10.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> toml::Table {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn overrides_parse_numbers_lists_and_strings() {
        assert_eq!(parse_override("fishery.w3=3").unwrap(), ("fishery.w3".into(), toml::Value::Integer(3)));
        assert_eq!(parse_override("a.b = 0.25").unwrap().1, toml::Value::Float(0.25));
        assert_eq!(parse_override("problem=algae").unwrap().1, toml::Value::String("algae".into()));
        assert!(matches!(parse_override("x=[1, 2]").unwrap().1, toml::Value::Array(_)));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn integer_override_feeds_float_field() {
        let l = from_table(table("problem = \"fishery\""), &["fishery.w3=3".into()], PathBuf::new()).unwrap();
        assert_eq!(l.config.fishery.w3, 3.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = from_table(table("problem = \"algae\"\n[algae]\nwieght = 1.0"), &[], PathBuf::new()).unwrap_err();
        assert!(format!("{err:#}").contains("wieght"), "{err:#}");
        let err = from_table(table("problem = \"algae\""), &["numerics.nodes=3".into()], PathBuf::new()).unwrap_err();
        assert!(format!("{err:#}").contains("nodes"));
    }

    #[test]
    fn chain_from_subset_and_presets() {
        let l = from_table(table("problem = \"coupled\"\n[regimes]\nsubset = [1, 3, 8, 13, 21]"), &[], PathBuf::new()).unwrap();
        let c = l.chain().unwrap();
        assert_eq!(c.discharges(), &[2.5, 12.5, 37.5, 62.5, 102.5]);
        assert_eq!(c.rate(0, 1), 0.5);

        let l = from_table(table("problem = \"reservoir\"\n[regimes]\ncoupling = \"decoupled\""), &[], PathBuf::new()).unwrap();
        let c = l.chain().unwrap();
        assert_eq!(c.n_regimes(), 61);
        assert_eq!(c.max_exit_rate(), 0.0);

        let l = from_table(table("problem = \"reservoir\"\n[regimes]\nsubset = [62]"), &[], PathBuf::new()).unwrap();
        assert!(l.chain().is_err());
    }

    #[test]
    fn numerics_defaults_and_misuse() {
        let n = Numerics::default();
        assert_eq!(n.resolved(Problem::Algae).unwrap().n_nodes, 501);
        assert_eq!(n.resolved(Problem::Reservoir).unwrap().max_iterations, 20_000);
        let n = Numerics { dt: Some(0.1), ..Default::default() };
        assert!(n.resolved(Problem::Algae).is_err());
        assert!(n.resolved(Problem::Fishery).is_err());
        assert!(n.resolved(Problem::Sediment).is_ok());
    }

    fn reference(name: &str) -> Loaded {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        load(&path, &[]).unwrap_or_else(|e| panic!("{name}: {e:#}"))
    }

    #[test]
    fn reference_configs_match_the_acceptance_runs() {
        for name in ["fishery.toml", "algae.toml", "sediment.toml", "reservoir.toml", "reservoir_decoupled.toml"] {
            let l = reference(name);
            l.config.numerics.resolved(l.config.problem).unwrap();
        }
        let f = reference("fishery.toml").config.fishery;
        assert_eq!(f, FisheryParams::default());

        let a = reference("algae.toml").config;
        assert_eq!(a.algae, AlgaeParams::default());
        let n = a.numerics.resolved(Problem::Algae).unwrap();
        assert_eq!((n.n_nodes, n.tolerance, n.max_iterations), (501, 1e-14, 50));

        let s = reference("sediment.toml").config;
        assert_eq!(s.sediment, SedimentParams::default());
        assert_eq!(s.numerics.resolved(Problem::Sediment).unwrap().n_nodes, 301);
        assert_eq!((s.verify.n_paths, s.verify.horizon, s.verify.allowance), (10_000, Some(100.0), Some(0.02)));

        let r = reference("reservoir.toml");
        assert_eq!(r.config.reservoir, ReservoirParams::default());
        let n = r.config.numerics.resolved(Problem::Reservoir).unwrap();
        assert_eq!((n.n_nodes, n.tolerance, n.max_iterations), (401, 1e-12, 20_000));
        assert_eq!(r.chain().unwrap(), synth_birth_death(61, 0.5, 0.5, reservoir_preset_discharges()).unwrap());

        let c = reference("coupled.toml");
        assert_eq!(c.config.coupled, CoupledParams::default());
        assert_eq!(c.chain().unwrap().discharges(), &[2.5, 12.5, 37.5, 62.5, 102.5]);
        let chain = c.chain().unwrap();
        c.config.coupled.validate(&chain).unwrap();

        let long = reference("coupled_long.toml");
        let p = &long.config.coupled;
        assert_eq!((p.level, p.dt, p.horizon), (11, 0.005, 60.0));
        let chain = long.chain().unwrap();
        assert_eq!(chain.n_regimes(), 21);
        p.validate(&chain).unwrap();

        let v = reference("coupled_verify.toml");
        assert_eq!(v.config.coupled.level, 9);
        v.config.coupled.validate(&v.chain().unwrap()).unwrap();
    }

    #[test]
    fn verify_horizon_rounds_up() {
        let l = from_table(table("problem = \"sediment\""), &[], PathBuf::new()).unwrap();
        assert_eq!(l.verify_horizon(0.1), 50.0);
        assert_eq!(l.verify_horizon(0.01), 470.0);
    }
}
