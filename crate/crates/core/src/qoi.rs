//! Scalar quantities of interest: a pressure-weighted vertical reduction over
//! a level range followed by an area-weighted reduction over a latitude zone.

use std::collections::HashSet;
use std::fmt;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LevelRange, SphericalGrid, Zone, ZoneSpec};
use crate::surrogate::ModelState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Field {
    SO2,
    SUL,
    AOD,
    T,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::SO2, Field::SUL, Field::AOD, Field::T];

    pub fn name(self) -> &'static str {
        match self {
            Field::SO2 => "SO2",
            Field::SUL => "SUL",
            Field::AOD => "AOD",
            Field::T => "T",
        }
    }

    pub fn is_3d(self) -> bool {
        !matches!(self, Field::AOD)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean-valued reductions are the default; `Integral` drops both normalizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionMode {
    #[default]
    Mean,
    Integral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoiSpec {
    pub id: String,
    pub field: Field,
    pub zone: ZoneSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_range: Option<LevelRange>,
    #[serde(default)]
    pub reduction: ReductionMode,
}

impl QoiSpec {
    pub fn canonical(field: Field, zone: Zone) -> Self {
        QoiSpec {
            id: format!("{}({})", field.name(), zone.label()),
            field,
            zone: zone.spec(),
            level_range: field.is_3d().then_some(LevelRange::MID_STRATOSPHERE),
            reduction: ReductionMode::Mean,
        }
    }

    pub fn validate(&self, grid: &SphericalGrid) -> Result<()> {
        self.compile(grid).map(|_| ())
    }

    /// Resolves the zone rows and level weights once so evaluation can stream.
    pub fn compile(&self, grid: &SphericalGrid) -> Result<CompiledQoi> {
        self.zone.validate()?;
        let rows = grid.zone_rows(&self.zone);
        if rows.is_empty() {
            return Err(Error::config(format!("{}: zone has no cells on this grid", self.id)));
        }
        let levels = match (self.field.is_3d(), &self.level_range) {
            (true, Some(r)) => {
                r.validate()?;
                grid.levels_in(r)
                    .map_err(|e| Error::config(format!("{}: {e}", self.id)))?
                    .into_iter()
                    .map(|k| (k, grid.layer_thickness()[k]))
                    .collect()
            }
            (true, None) => {
                return Err(Error::config(format!("{}: 3D field needs a level_range", self.id)));
            }
            (false, Some(_)) => {
                return Err(Error::config(format!("{}: AOD is 2D and takes no level_range", self.id)));
            }
            (false, None) => Vec::new(),
        };
        let row_weights: Vec<(usize, f64)> = rows.iter().map(|&i| (i, grid.row_cell_weight(i))).collect();
        let zone_weight: f64 = row_weights.iter().map(|(_, w)| w).sum::<f64>() * grid.nlon() as f64;
        let level_weight: f64 = levels.iter().map(|(_, dp)| dp).sum();
        let (zone_norm, level_norm) = match self.reduction {
            ReductionMode::Mean => (zone_weight, level_weight),
            ReductionMode::Integral => (1.0, 1.0),
        };
        Ok(CompiledQoi {
            id: self.id.clone(),
            field: self.field,
            row_weights,
            levels,
            zone_norm,
            level_norm,
        })
    }
}

/// A QOI bound to a grid. Evaluation streams over the zone's columns without
/// allocating any grid-sized scratch.
#[derive(Debug, Clone)]
pub struct CompiledQoi {
    id: String,
    field: Field,
    row_weights: Vec<(usize, f64)>,
    levels: Vec<(usize, f64)>,
    zone_norm: f64,
    level_norm: f64,
}

impl CompiledQoi {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn value(&self, state: &ModelState) -> Result<f64> {
        let v = match self.field {
            Field::SO2 => self.reduce_3d(&state.so2),
            Field::SUL => self.reduce_3d(&state.so4),
            Field::T => self.reduce_3d(&state.temperature),
            Field::AOD => self.reduce_2d(&state.aod),
        };
        if !v.is_finite() {
            return Err(Error::NumericalFailure {
                step: state.step,
                what: format!("QOI {} evaluated to {v}", self.id),
            });
        }
        Ok(v)
    }

    pub fn sample(&self, state: &ModelState) -> Result<QoiSample> {
        Ok(QoiSample {
            qoi_id: self.id.clone(),
            step: state.step,
            time: state.time,
            value: self.value(state)?,
        })
    }

    fn reduce_3d(&self, f: &Array3<f64>) -> f64 {
        let mut acc = 0.0;
        for &(i, w) in &self.row_weights {
            let mut row = 0.0;
            for col in f.index_axis(ndarray::Axis(0), i).outer_iter() {
                let mut v = 0.0;
                for &(k, dp) in &self.levels {
                    v += col[k] * dp;
                }
                row += v;
            }
            acc += w * row / self.level_norm;
        }
        acc / self.zone_norm
    }

    fn reduce_2d(&self, f: &Array2<f64>) -> f64 {
        let mut acc = 0.0;
        for &(i, w) in &self.row_weights {
            acc += w * f.row(i).sum();
        }
        acc / self.zone_norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoiSample {
    pub qoi_id: String,
    pub step: usize,
    pub time: f64,
    pub value: f64,
}

/// Dense series for one QOI, indexed by step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoiSeries {
    pub qoi_id: String,
    pub values: Vec<f64>,
}

impl QoiSeries {
    pub fn new(qoi_id: impl Into<String>) -> Self {
        QoiSeries {
            qoi_id: qoi_id.into(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Pressure-weighted vertical mean over the levels in `range`.
pub fn vertical_reduce(field: &Array3<f64>, grid: &SphericalGrid, range: &LevelRange) -> Result<Array2<f64>> {
    vertical_reduce_mode(field, grid, range, ReductionMode::Mean)
}

pub fn vertical_reduce_mode(
    field: &Array3<f64>,
    grid: &SphericalGrid,
    range: &LevelRange,
    mode: ReductionMode,
) -> Result<Array2<f64>> {
    let levels = grid.levels_in(range)?;
    let dp = grid.layer_thickness();
    let norm = match mode {
        ReductionMode::Mean => levels.iter().map(|&k| dp[k]).sum(),
        ReductionMode::Integral => 1.0,
    };
    Ok(Array2::from_shape_fn((grid.nlat(), grid.nlon()), |(i, j)| {
        levels.iter().map(|&k| field[[i, j, k]] * dp[k]).sum::<f64>() / norm
    }))
}

/// Area-weighted mean of a 2D field over `zone`.
pub fn zonal_reduce(field: &Array2<f64>, grid: &SphericalGrid, zone: &ZoneSpec) -> Result<f64> {
    zonal_reduce_mode(field, grid, zone, ReductionMode::Mean)
}

pub fn zonal_reduce_mode(field: &Array2<f64>, grid: &SphericalGrid, zone: &ZoneSpec, mode: ReductionMode) -> Result<f64> {
    let w = grid.zone_weights(zone);
    let total = w.sum();
    if total == 0.0 {
        return Err(Error::config(format!("zone {} has no cells on this grid", zone.label)));
    }
    let acc = (&w * field).sum();
    Ok(match mode {
        ReductionMode::Mean => acc / total,
        ReductionMode::Integral => acc,
    })
}

/// Evaluates one QOI on a state.
pub fn evaluate(spec: &QoiSpec, state: &ModelState, grid: &SphericalGrid) -> Result<QoiSample> {
    spec.compile(grid)?.sample(state)
}

/// The 16 canonical QOIs, field-major ({SO2, SUL, AOD, T}) with zones in e, s, t, p order.
pub fn registry_canonical() -> Vec<QoiSpec> {
    Field::ALL
        .iter()
        .flat_map(|&f| Zone::ALL.iter().map(move |&z| QoiSpec::canonical(f, z)))
        .collect()
}

/// Checks id uniqueness and that every spec compiles against `grid`.
pub fn validate_registry(specs: &[QoiSpec], grid: &SphericalGrid) -> Result<Vec<CompiledQoi>> {
    let mut seen = HashSet::new();
    for s in specs {
        if !seen.insert(s.id.as_str()) {
            return Err(Error::config(format!("duplicate QOI id {}", s.id)));
        }
    }
    specs.iter().map(|s| s.compile(grid)).collect()
}
