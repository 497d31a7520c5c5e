//! Surrogate volcanic-eruption stratosphere.
//!
//! One step of the model applies, in order: SO2 injection, SO2 -> SO4
//! conversion with sulfate removal, conservative upwind poleward transport,
//! AOD diagnosis from the sulfate column, and a relaxed temperature response
//! with band-shared AR(1) variability.

use ndarray::{Array2, Array3, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LevelRange, SphericalGrid, Zone, COLUMN_AIR_MASS_KG_PER_HPA};

pub const PRESET_ID: &str = "hswv-surrogate-v1";

const KG_PER_TG: f64 = 1e9;
/// Relative amplitude of the per-cell initial temperature perturbation.
const INITIAL_PERTURBATION: f64 = 0.01;
/// Four canonical zones plus everything south of the equatorial zone.
const N_BANDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// SO2 -> SO4 e-folding time, days.
    pub tau_chem: f64,
    /// SO4 removal e-folding time, days. `inf` disables removal.
    pub tau_decay: f64,
    /// Poleward advection speed, degrees latitude per day.
    pub v_transport: f64,
    /// AOD per unit column sulfate burden, 1 / (kg/kg * hPa).
    pub k_aod: f64,
    /// Stratospheric heating, K/day per unit AOD.
    pub k_heat: f64,
    /// Newtonian relaxation time toward `t_eq`, days.
    pub tau_relax: f64,
    /// Equilibrium temperature, K.
    pub t_eq: f64,
    /// Variability innovation amplitude, K.
    pub noise_amp: f64,
    /// AR(1) coefficient of the variability process, per step.
    pub noise_memory: f64,
    /// Step length, days.
    pub dt: f64,
    pub n_steps: usize,
    /// Levels that carry transport and aerosol heating.
    pub stratosphere: LevelRange,
}

impl ModelParams {
    /// Frozen parameter set shipped as [`PRESET_ID`].
    pub fn preset() -> Self {
        ModelParams {
            tau_chem: 30.0,
            tau_decay: 360.0,
            v_transport: 0.25,
            k_aod: 7.8e4,
            k_heat: 0.3,
            tau_relax: 60.0,
            t_eq: 220.0,
            noise_amp: 0.0136,
            noise_memory: 0.9,
            dt: 0.25,
            n_steps: 4800,
            stratosphere: LevelRange { p_lo: 1.0, p_hi: 100.0 },
        }
    }

    pub fn run_length_days(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_chem", self.tau_chem),
            ("tau_decay", self.tau_decay),
            ("tau_relax", self.tau_relax),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !self.dt.is_finite() || !self.tau_relax.is_finite() {
            return Err(Error::config("dt and tau_relax must be finite"));
        }
        let nonneg = [
            ("v_transport", self.v_transport),
            ("k_aod", self.k_aod),
            ("k_heat", self.k_heat),
            ("noise_amp", self.noise_amp),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.t_eq > 0.0 && self.t_eq.is_finite()) {
            return Err(Error::config(format!("t_eq must be a positive temperature, got {}", self.t_eq)));
        }
        if !(0.0..1.0).contains(&self.noise_memory) {
            return Err(Error::config(format!(
                "noise_memory must be in [0, 1), got {}",
                self.noise_memory
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::config("n_steps must be at least 1"));
        }
        self.stratosphere.validate()
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::preset()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EruptionSpec {
    /// SO2 mass, Tg. Zero is the eruption-free case.
    pub mass: f64,
    /// Injection time, days.
    pub day: f64,
    pub lat: f64,
    pub injection_levels: LevelRange,
}

impl EruptionSpec {
    pub fn pinatubo(mass: f64) -> Self {
        EruptionSpec {
            mass,
            day: 90.0,
            lat: 15.0,
            injection_levels: LevelRange::MID_STRATOSPHERE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass >= 0.0 && self.mass.is_finite()) {
            return Err(Error::config(format!("eruption mass must be >= 0, got {}", self.mass)));
        }
        if !self.day.is_finite() {
            return Err(Error::config("eruption day must be finite"));
        }
        self.injection_levels.validate()
    }
}

impl Default for EruptionSpec {
    fn default() -> Self {
        Self::pinatubo(10.0)
    }
}

/// Identifies one member's pseudo-random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunSeed {
    pub seed: u64,
    pub member_index: usize,
}

impl RunSeed {
    pub fn new(seed: u64, member_index: usize) -> Self {
        RunSeed { seed, member_index }
    }

    /// 64-bit stream key; SplitMix64 finalizer applied to the seed and then the member index.
    pub fn stream_key(&self) -> u64 {
        mix64(mix64(self.seed) ^ (self.member_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

/// SplitMix64 finalizer. Stable across versions; used for all seed derivation.
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Model state at one step. 3D fields are indexed `(lat, lon, level)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub so2: Array3<f64>,
    pub so4: Array3<f64>,
    pub temperature: Array3<f64>,
    pub aod: Array2<f64>,
    pub step: usize,
    pub time: f64,
}

impl ModelState {
    pub fn zeros(grid: &SphericalGrid, t: f64) -> Self {
        let shape = (grid.nlat(), grid.nlon(), grid.nlev());
        ModelState {
            so2: Array3::zeros(shape),
            so4: Array3::zeros(shape),
            temperature: Array3::from_elem(shape, t),
            aod: Array2::zeros((grid.nlat(), grid.nlon())),
            step: 0,
            time: 0.0,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let fields = [
            ("so2", self.so2.iter().all(|v| v.is_finite())),
            ("so4", self.so4.iter().all(|v| v.is_finite())),
            ("aod", self.aod.iter().all(|v| v.is_finite())),
            ("temperature", self.temperature.iter().all(|&v| v.is_finite() && v > 0.0)),
        ];
        for (name, ok) in fields {
            if !ok {
                return Err(Error::NumericalFailure {
                    step: self.step,
                    what: format!("non-finite or out-of-range value in {name}"),
                });
            }
        }
        Ok(())
    }
}

/// Random stream and AR(1) variability state for one run.
#[derive(Debug, Clone)]
pub struct VariabilityStream {
    rng: ChaCha8Rng,
    eta: [f64; N_BANDS],
}

impl VariabilityStream {
    pub fn new(seed: RunSeed) -> Self {
        VariabilityStream {
            rng: ChaCha8Rng::seed_from_u64(seed.stream_key()),
            eta: [0.0; N_BANDS],
        }
    }

    fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    fn advance(&mut self, memory: f64, innovation: f64) {
        for b in 0..N_BANDS {
            let xi = self.normal();
            self.eta[b] = memory * self.eta[b] + innovation * xi;
        }
    }
}

/// Uniform mixing-ratio increment whose air-mass weighted integral over the
/// selected cells and levels equals `mass_tg`.
pub fn convert_mass_to_mixing_ratio(
    mass_tg: f64,
    grid: &SphericalGrid,
    cells: &[(usize, usize)],
    levels: &[usize],
) -> Result<f64> {
    if cells.is_empty() || levels.is_empty() {
        return Err(Error::config("injection selection has no cells or no levels"));
    }
    let area: f64 = cells.iter().map(|&(i, j)| grid.area_weight()[[i, j]]).sum();
    let dp: f64 = levels.iter().map(|&k| grid.layer_thickness()[k]).sum();
    Ok(mass_tg * KG_PER_TG / (COLUMN_AIR_MASS_KG_PER_HPA * area * dp))
}

/// Mass in Tg of a mixing-ratio field.
pub fn tracer_mass_tg(field: &Array3<f64>, grid: &SphericalGrid) -> f64 {
    let dp = grid.layer_thickness();
    let w = grid.area_weight();
    let mut total = 0.0;
    for ((i, j, k), &q) in field.indexed_iter() {
        total += q * w[[i, j]] * dp[k];
    }
    total * COLUMN_AIR_MASS_KG_PER_HPA / KG_PER_TG
}

/// Total sulfur-bearing tracer mass (SO2 + SO4) in Tg.
pub fn sulfur_mass_tg(state: &ModelState, grid: &SphericalGrid) -> f64 {
    tracer_mass_tg(&state.so2, grid) + tracer_mass_tg(&state.so4, grid)
}

/// A configured surrogate: parameters, eruption and grid plus derived geometry.
#[derive(Debug, Clone)]
pub struct Surrogate<'g> {
    params: ModelParams,
    eruption: EruptionSpec,
    grid: &'g SphericalGrid,
    eruption_row: usize,
    injection_levels: Vec<usize>,
    injection_increment: f64,
    strat_levels: Vec<usize>,
    in_stratosphere: Vec<bool>,
    /// Fraction of a row's tracer leaving northward (rows at or north of the eruption).
    north_frac: Vec<f64>,
    /// Fraction leaving southward (rows south of the eruption).
    south_frac: Vec<f64>,
    band: Vec<usize>,
}

impl<'g> Surrogate<'g> {
    pub fn new(params: ModelParams, eruption: EruptionSpec, grid: &'g SphericalGrid) -> Result<Self> {
        params.validate()?;
        eruption.validate()?;
        let eruption_row = grid.lat_row(eruption.lat)?;
        let injection_levels = grid.levels_in(&eruption.injection_levels)?;
        let cells: Vec<(usize, usize)> = (0..grid.nlon()).map(|j| (eruption_row, j)).collect();
        let injection_increment = convert_mass_to_mixing_ratio(eruption.mass, grid, &cells, &injection_levels)?;
        let strat_levels = grid.levels_in(&params.stratosphere)?;
        let in_stratosphere = grid.level_mask(&params.stratosphere);

        let nlat = grid.nlat();
        let edges = grid.lat_edges();
        let centers = grid.lat_centers();
        let courant = params.v_transport * params.dt / grid.dlat();
        // cos of the pole edges is forced to zero: no flux through the polar caps
        let edge_cos = |e: usize| if e == 0 || e == nlat { 0.0 } else { edges[e].to_radians().cos() };
        let mut north_frac = vec![0.0; nlat];
        let mut south_frac = vec![0.0; nlat];
        for i in 0..nlat {
            let c = centers[i].to_radians().cos();
            if i >= eruption_row {
                north_frac[i] = courant * edge_cos(i + 1) / c;
            } else {
                south_frac[i] = courant * edge_cos(i) / c;
            }
        }
        if let Some(f) = north_frac.iter().chain(&south_frac).find(|&&f| f > 1.0) {
            return Err(Error::config(format!(
                "transport CFL violated: a row would lose fraction {f} > 1 per step; reduce dt or v_transport"
            )));
        }

        let band = centers
            .iter()
            .map(|&c| {
                Zone::ALL
                    .iter()
                    .position(|z| z.spec().contains(c))
                    .unwrap_or(N_BANDS - 1)
            })
            .collect();

        Ok(Surrogate {
            params,
            eruption,
            grid,
            eruption_row,
            injection_levels,
            injection_increment,
            strat_levels,
            in_stratosphere,
            north_frac,
            south_frac,
            band,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn eruption(&self) -> &EruptionSpec {
        &self.eruption
    }

    pub fn grid(&self) -> &SphericalGrid {
        self.grid
    }

    pub fn eruption_row(&self) -> usize {
        self.eruption_row
    }

    /// Mixing-ratio increment deposited in each injection cell.
    pub fn injection_increment(&self) -> f64 {
        self.injection_increment
    }

    /// Initial state: no tracers, temperature at equilibrium plus a small seeded perturbation.
    pub fn initialize(&self, seed: RunSeed) -> (ModelState, VariabilityStream) {
        let mut stream = VariabilityStream::new(seed);
        let mut state = ModelState::zeros(self.grid, self.params.t_eq);
        let amp = self.params.noise_amp * INITIAL_PERTURBATION;
        if amp > 0.0 {
            for t in state.temperature.iter_mut() {
                *t += amp * stream.normal();
            }
        }
        (state, stream)
    }

    /// Advances `state` by one step.
    pub fn step(&self, state: &mut ModelState, stream: &mut VariabilityStream) -> Result<()> {
        let p = &self.params;
        let dt = p.dt;
        let t = state.time;

        if self.eruption.mass > 0.0 && t <= self.eruption.day && self.eruption.day < t + dt {
            let inc = self.injection_increment;
            for j in 0..self.grid.nlon() {
                for &k in &self.injection_levels {
                    state.so2[[self.eruption_row, j, k]] += inc;
                }
            }
        }

        let convert = 1.0 - (-dt / p.tau_chem).exp();
        let keep = (-dt / p.tau_decay).exp();
        Zip::from(&mut state.so2).and(&mut state.so4).for_each(|so2, so4| {
            let dq = *so2 * convert;
            *so2 -= dq;
            *so4 = (*so4 + dq) * keep;
        });

        if p.v_transport > 0.0 {
            self.transport(&mut state.so2);
            self.transport(&mut state.so4);
        }

        let dp = self.grid.layer_thickness();
        Zip::from(&mut state.aod)
            .and(state.so4.lanes(ndarray::Axis(2)))
            .for_each(|aod, col| {
                *aod = p.k_aod * col.iter().zip(dp).map(|(q, d)| q * d).sum::<f64>();
            });

        stream.advance(p.noise_memory, p.noise_amp * dt.sqrt());
        for (i, mut plane) in state.temperature.outer_iter_mut().enumerate() {
            let eta = stream.eta[self.band[i]];
            for (j, mut col) in plane.outer_iter_mut().enumerate() {
                let heat = p.k_heat * state.aod[[i, j]];
                for (k, temp) in col.iter_mut().enumerate() {
                    let heating = if self.in_stratosphere[k] { heat } else { 0.0 };
                    *temp += dt * (heating - (*temp - p.t_eq) / p.tau_relax) + eta;
                }
            }
        }

        state.step += 1;
        state.time = state.step as f64 * dt;
        state.check_finite()
    }

    /// Flux-form upwind meridional transport on the stratospheric levels.
    fn transport(&self, q: &mut Array3<f64>) {
        let nlat = self.grid.nlat();
        let w: Vec<f64> = (0..nlat).map(|i| self.grid.row_cell_weight(i)).collect();
        let mut north = vec![0.0; nlat];
        let mut south = vec![0.0; nlat];
        for j in 0..self.grid.nlon() {
            for &k in &self.strat_levels {
                // weight-scaled outgoing amounts, computed from the pre-step values
                for i in 0..nlat {
                    let qi = q[[i, j, k]];
                    north[i] = self.north_frac[i] * qi * w[i];
                    south[i] = self.south_frac[i] * qi * w[i];
                }
                for i in 0..nlat {
                    let mut inflow = 0.0;
                    if i > 0 {
                        inflow += north[i - 1];
                    }
                    if i + 1 < nlat {
                        inflow += south[i + 1];
                    }
                    q[[i, j, k]] += (inflow - north[i] - south[i]) / w[i];
                }
            }
        }
    }
}

/// Builds the initial state for one run.
pub fn initialize(params: &ModelParams, grid: &SphericalGrid, seed: RunSeed) -> Result<(ModelState, VariabilityStream)> {
    let s = Surrogate::new(*params, EruptionSpec::pinatubo(0.0), grid)?;
    Ok(s.initialize(seed))
}

/// Single step of the surrogate; see [`Surrogate::step`].
pub fn step(
    state: &mut ModelState,
    params: &ModelParams,
    eruption: &EruptionSpec,
    grid: &SphericalGrid,
    stream: &mut VariabilityStream,
) -> Result<()> {
    Surrogate::new(*params, *eruption, grid)?.step(state, stream)
}
