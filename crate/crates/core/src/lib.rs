//! Dynamic-programming solvers for a family of river-management stochastic
//! control problems: fishery harvesting, reservoir release, benthic algae
//! control, sediment replenishment, and a coupled reservoir/sediment/algae
//! system on sparse grids. Each solver discretises its Hamilton–Jacobi–Bellman
//! equation, extracts the optimal policy, and can be cross-checked by Monte
//! Carlo simulation of the controlled dynamics.

pub mod algae;
pub mod coupled;
pub mod error;
pub mod fishery;
pub mod growth;
pub mod numerics;
pub mod regime;
pub mod reservoir;
pub mod sediment;
pub mod simulate;
pub mod sparse_grid;

pub use error::{Error, Result};
pub use growth::GrowthCurve;
pub use numerics::{TridiagonalSystem, UniformGrid1D};
pub use regime::RegimeChain;
pub use simulate::{CostAccumulator, EstimateReport};
