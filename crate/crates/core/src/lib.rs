//! Time-indexed pathway-DAGs for tracing volcanic aerosol impacts through a
//! simplified climate model.

pub mod config;
pub mod error;
pub mod export;
pub mod grid;
pub mod harness;
pub mod pathway;
pub mod qoi;
pub mod stats;
pub mod surrogate;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use grid::{build_grid, GridConfig, LevelRange, SphericalGrid, Zone, ZoneSpec};
pub use harness::{Experiment, ExperimentPlan, TracerThresholds};
pub use pathway::{base_dag_canonical, compute_pathway, BaseDag, BoundsTest, PathwayDag, PathwayTracker};
pub use qoi::{registry_canonical, Field, QoiSeries, QoiSpec, ReductionMode};
pub use stats::{Baseline, BaselineStats, EnsembleSummary};
pub use surrogate::{EruptionSpec, ModelParams, ModelState, RunSeed, Surrogate};
