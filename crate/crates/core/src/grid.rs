//! Regular latitude-longitude-pressure grid, latitude zones and pressure ranges.
//!
//! Cells are indexed `(lat, lon, level)` with level 0 at the model top.
//! Area weights are normalized so the whole sphere sums to one.

use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6.371e6;
pub const GRAVITY_M_S2: f64 = 9.80665;

/// Air mass in kg of a layer covering the whole sphere and 1 hPa thick.
///
/// Multiplying by a normalized area weight and a thickness in hPa gives the
/// air mass of a cell.
pub const COLUMN_AIR_MASS_KG_PER_HPA: f64 =
    4.0 * std::f64::consts::PI * EARTH_RADIUS_M * EARTH_RADIUS_M * 100.0 / GRAVITY_M_S2;

const MIN_NLAT: usize = 4;
const MIN_NLEV: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nlat: usize,
    pub nlon: usize,
    pub nlev: usize,
    pub p_top: f64,
    pub p_surface: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            nlat: 32,
            nlon: 64,
            nlev: 16,
            p_top: 1.0,
            p_surface: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphericalGrid {
    nlat: usize,
    nlon: usize,
    nlev: usize,
    lat_edges: Vec<f64>,
    lon_edges: Vec<f64>,
    lat_centers: Vec<f64>,
    area_weight: Array2<f64>,
    p_interface: Vec<f64>,
    layer_thickness: Vec<f64>,
}

/// Builds a uniform grid: equal latitude and longitude spacing, equal pressure
/// thickness per level.
pub fn build_grid(nlat: usize, nlon: usize, nlev: usize, p_top: f64, p_surface: f64) -> Result<SphericalGrid> {
    if nlat < MIN_NLAT {
        return Err(Error::config(format!("nlat must be at least {MIN_NLAT}, got {nlat}")));
    }
    if nlon < 1 {
        return Err(Error::config("nlon must be at least 1"));
    }
    if nlev < MIN_NLEV {
        return Err(Error::config(format!("nlev must be at least {MIN_NLEV}, got {nlev}")));
    }
    if !(p_top > 0.0 && p_top < p_surface && p_surface.is_finite()) {
        return Err(Error::config(format!(
            "pressures must satisfy 0 < p_top < p_surface, got p_top = {p_top}, p_surface = {p_surface}"
        )));
    }

    let dlat = 180.0 / nlat as f64;
    let dlon = 360.0 / nlon as f64;
    let lat_edges: Vec<f64> = (0..=nlat).map(|i| -90.0 + dlat * i as f64).collect();
    let lon_edges: Vec<f64> = (0..=nlon).map(|j| dlon * j as f64).collect();
    let lat_centers: Vec<f64> = lat_edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();

    let raw: Vec<f64> = lat_centers
        .iter()
        .map(|c| c.to_radians().cos() * dlat.to_radians() * dlon.to_radians())
        .collect();
    let total: f64 = raw.iter().sum::<f64>() * nlon as f64;
    let area_weight = Array2::from_shape_fn((nlat, nlon), |(i, _)| raw[i] / total);

    let dp = (p_surface - p_top) / nlev as f64;
    let mut p_interface: Vec<f64> = (0..=nlev).map(|k| p_top + dp * k as f64).collect();
    p_interface[nlev] = p_surface;
    let layer_thickness = p_interface.windows(2).map(|p| p[1] - p[0]).collect();

    Ok(SphericalGrid {
        nlat,
        nlon,
        nlev,
        lat_edges,
        lon_edges,
        lat_centers,
        area_weight,
        p_interface,
        layer_thickness,
    })
}

impl SphericalGrid {
    pub fn from_config(cfg: &GridConfig) -> Result<Self> {
        build_grid(cfg.nlat, cfg.nlon, cfg.nlev, cfg.p_top, cfg.p_surface)
    }

    /// Same horizontal grid with explicit pressure interfaces (top to surface).
    pub fn with_interfaces(&self, p_interface: Vec<f64>) -> Result<Self> {
        if p_interface.len() < MIN_NLEV + 1 {
            return Err(Error::config(format!("need at least {} interfaces", MIN_NLEV + 1)));
        }
        if p_interface[0] <= 0.0 || p_interface.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::config("pressure interfaces must be positive and strictly increasing"));
        }
        let layer_thickness = p_interface.windows(2).map(|p| p[1] - p[0]).collect();
        Ok(SphericalGrid {
            nlev: p_interface.len() - 1,
            p_interface,
            layer_thickness,
            ..self.clone()
        })
    }

    pub fn nlat(&self) -> usize {
        self.nlat
    }

    pub fn nlon(&self) -> usize {
        self.nlon
    }

    pub fn nlev(&self) -> usize {
        self.nlev
    }

    pub fn n_columns(&self) -> usize {
        self.nlat * self.nlon
    }

    pub fn n_cells(&self) -> usize {
        self.nlat * self.nlon * self.nlev
    }

    pub fn lat_edges(&self) -> &[f64] {
        &self.lat_edges
    }

    pub fn lon_edges(&self) -> &[f64] {
        &self.lon_edges
    }

    pub fn lat_centers(&self) -> &[f64] {
        &self.lat_centers
    }

    /// Latitude spacing in degrees.
    pub fn dlat(&self) -> f64 {
        self.lat_edges[1] - self.lat_edges[0]
    }

    pub fn area_weight(&self) -> &Array2<f64> {
        &self.area_weight
    }

    /// Normalized area of one cell in latitude row `i` (all cells in a row are equal).
    pub fn row_cell_weight(&self, i: usize) -> f64 {
        self.area_weight[[i, 0]]
    }

    pub fn p_interface(&self) -> &[f64] {
        &self.p_interface
    }

    pub fn layer_thickness(&self) -> &[f64] {
        &self.layer_thickness
    }

    pub fn mid_pressure(&self, k: usize) -> f64 {
        0.5 * (self.p_interface[k] + self.p_interface[k + 1])
    }

    /// Index of the latitude row whose half-open band `[edge_i, edge_i+1)` holds `lat`.
    pub fn lat_row(&self, lat: f64) -> Result<usize> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::config(format!("latitude {lat} outside [-90, 90]")));
        }
        let row = self.lat_edges[1..].iter().position(|&e| lat < e).unwrap_or(self.nlat - 1);
        Ok(row)
    }

    /// Per-cell weights for `zone`: the area weight where the cell center lies in the zone, zero elsewhere.
    pub fn zone_weights(&self, zone: &ZoneSpec) -> Array2<f64> {
        let mut w = self.area_weight.clone();
        for (i, &c) in self.lat_centers.iter().enumerate() {
            if !zone.contains(c) {
                w.row_mut(i).fill(0.0);
            }
        }
        w
    }

    /// Latitude rows whose centers fall in `zone`.
    pub fn zone_rows(&self, zone: &ZoneSpec) -> Vec<usize> {
        (0..self.nlat).filter(|&i| zone.contains(self.lat_centers[i])).collect()
    }

    pub fn level_mask(&self, range: &LevelRange) -> Vec<bool> {
        (0..self.nlev).map(|k| range.contains(self.mid_pressure(k))).collect()
    }

    /// Levels included by `range`; an empty selection is a configuration error.
    pub fn levels_in(&self, range: &LevelRange) -> Result<Vec<usize>> {
        let levels: Vec<usize> = (0..self.nlev).filter(|&k| range.contains(self.mid_pressure(k))).collect();
        if levels.is_empty() {
            return Err(Error::config(format!(
                "no model level has its mid pressure in [{}, {}] hPa",
                range.p_lo, range.p_hi
            )));
        }
        Ok(levels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zone {
    #[serde(rename = "e")]
    Equatorial,
    #[serde(rename = "s")]
    Subtropical,
    #[serde(rename = "t")]
    Temperate,
    #[serde(rename = "p")]
    Polar,
}

impl Zone {
    pub const ALL: [Zone; 4] = [Zone::Equatorial, Zone::Subtropical, Zone::Temperate, Zone::Polar];

    pub fn label(self) -> &'static str {
        match self {
            Zone::Equatorial => "e",
            Zone::Subtropical => "s",
            Zone::Temperate => "t",
            Zone::Polar => "p",
        }
    }

    pub fn spec(self) -> ZoneSpec {
        let (lat_min, lat_max) = match self {
            Zone::Equatorial => (-23.5, 23.5),
            Zone::Subtropical => (23.5, 35.0),
            Zone::Temperate => (35.0, 66.5),
            Zone::Polar => (66.5, 90.0),
        };
        ZoneSpec {
            label: self,
            lat_min,
            lat_max,
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A latitude band. Membership is half-open, `[lat_min, lat_max)`, except that a
/// band ending at the north pole also contains 90.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub label: Zone,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl ZoneSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lat_min < self.lat_max && self.lat_min >= -90.0 && self.lat_max <= 90.0) {
            return Err(Error::config(format!(
                "zone {} must satisfy -90 <= lat_min < lat_max <= 90, got [{}, {}]",
                self.label, self.lat_min, self.lat_max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, lat: f64) -> bool {
        (self.lat_min <= lat && lat < self.lat_max) || (self.lat_max == 90.0 && lat == 90.0)
    }
}

/// Pressure range in hPa; a level belongs to it when its mid pressure is in `[p_lo, p_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelRange {
    pub p_lo: f64,
    pub p_hi: f64,
}

impl LevelRange {
    pub const MID_STRATOSPHERE: LevelRange = LevelRange { p_lo: 25.0, p_hi: 75.0 };

    pub fn new(p_lo: f64, p_hi: f64) -> Result<Self> {
        let r = LevelRange { p_lo, p_hi };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_lo > 0.0 && self.p_lo < self.p_hi) {
            return Err(Error::config(format!(
                "level range must satisfy 0 < p_lo < p_hi, got [{}, {}]",
                self.p_lo, self.p_hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: f64) -> bool {
        self.p_lo <= p && p <= self.p_hi
    }
}
