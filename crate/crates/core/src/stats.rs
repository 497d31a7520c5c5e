//! Baseline statistics, activation-time summaries and ensemble standard errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-pass mean and variance accumulator (Welford), mergeable with Chan's
/// formula. Deviations are accumulated relative to the first sample so a
/// large common offset does not erode the variance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunningStats {
    count: u64,
    shift: f64,
    mean_dev: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        if self.count == 0 {
            self.shift = x;
        }
        self.count += 1;
        let d = x - self.shift;
        let delta = d - self.mean_dev;
        self.mean_dev += delta / self.count as f64;
        self.m2 += delta * (d - self.mean_dev);
    }

    pub fn merge(&self, other: &RunningStats) -> RunningStats {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let n = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let other_dev = other.mean_dev + (other.shift - self.shift);
        let delta = other_dev - self.mean_dev;
        RunningStats {
            count: n,
            shift: self.shift,
            mean_dev: self.mean_dev + delta * nb / n as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / n as f64,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.shift + self.mean_dev
    }

    /// Sum of squared deviations from the mean.
    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Sample variance (divisor n - 1); `None` below two samples.
    pub fn sample_variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| (self.m2 / (self.count - 1) as f64).max(0.0))
    }

    pub fn sample_std(&self) -> Option<f64> {
        self.sample_variance().map(f64::sqrt)
    }
}

/// Per-step accumulators for one QOI across an eruption-free ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub qoi_id: String,
    pub steps: Vec<RunningStats>,
}

impl BaselineStats {
    pub fn new(qoi_id: impl Into<String>, n_steps: usize) -> Self {
        BaselineStats {
            qoi_id: qoi_id.into(),
            steps: vec![RunningStats::default(); n_steps],
        }
    }

    pub fn update(&mut self, m: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Data(format!("{} step {m}: non-finite value {value}", self.qoi_id)));
        }
        let len = self.steps.len();
        self.steps
            .get_mut(m)
            .ok_or_else(|| Error::Bounds(format!("{} step {m} outside 0..{len}", self.qoi_id)))?
            .push(value);
        Ok(())
    }

    pub fn merge(&self, other: &BaselineStats) -> Result<BaselineStats> {
        if self.qoi_id != other.qoi_id || self.steps.len() != other.steps.len() {
            return Err(Error::config(format!(
                "cannot merge baselines {} ({} steps) and {} ({} steps)",
                self.qoi_id,
                self.steps.len(),
                other.qoi_id,
                other.steps.len()
            )));
        }
        Ok(BaselineStats {
            qoi_id: self.qoi_id.clone(),
            steps: self.steps.iter().zip(&other.steps).map(|(a, b)| a.merge(b)).collect(),
        })
    }

    /// Member count, if every step saw the same number of values.
    pub fn members(&self) -> Option<u64> {
        let n = self.steps.first()?.count;
        self.steps.iter().all(|s| s.count == n).then_some(n)
    }

    pub fn finalize(&self) -> Result<Baseline> {
        let mut mean = Vec::with_capacity(self.steps.len());
        let mut std = Vec::with_capacity(self.steps.len());
        for (m, s) in self.steps.iter().enumerate() {
            let sd = s.sample_std().ok_or_else(|| {
                Error::Data(format!(
                    "{} step {m}: need at least 2 samples for a standard deviation, have {}",
                    self.qoi_id, s.count
                ))
            })?;
            mean.push(s.mean());
            std.push(sd);
        }
        Ok(Baseline {
            qoi_id: self.qoi_id.clone(),
            members: self.steps.first().map_or(0, |s| s.count),
            mean,
            std,
        })
    }
}

/// Finalized per-step mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub qoi_id: String,
    pub members: u64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Single-step Welford update; see [`BaselineStats::update`].
pub fn baseline_update(stats: &mut BaselineStats, m: usize, value: f64) -> Result<()> {
    stats.update(m, value)
}

pub fn baseline_merge(a: &BaselineStats, b: &BaselineStats) -> Result<BaselineStats> {
    a.merge(b)
}

/// Day of the first active step, or `never_active_day` if the series never activates.
pub fn first_activation(active: &[bool], dt: f64, never_active_day: f64) -> f64 {
    active
        .iter()
        .position(|&a| a)
        .map_or(never_active_day, |m| m as f64 * dt)
}

pub fn total_active(active: &[bool], dt: f64) -> f64 {
    active.iter().filter(|&&a| a).count() as f64 * dt
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationSummary {
    pub qoi_id: String,
    pub member_index: usize,
    pub first_active: f64,
    pub total_active: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub qoi_id: String,
    pub n_members: usize,
    pub mean_first: f64,
    pub se_first: f64,
    pub mean_total: f64,
    pub se_total: f64,
}

/// Mean and standard error (sample std / sqrt(n)).
pub fn mean_and_se(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::config(format!(
            "standard error needs at least 2 values, have {}",
            values.len()
        )));
    }
    let mut acc = RunningStats::default();
    values.iter().for_each(|&v| acc.push(v));
    let sd = acc.sample_std().unwrap_or(0.0);
    Ok((acc.mean(), sd / (values.len() as f64).sqrt()))
}

pub fn ensemble_summarize(summaries: &[ActivationSummary]) -> Result<EnsembleSummary> {
    let first = summaries
        .first()
        .ok_or_else(|| Error::config("cannot summarize an empty ensemble"))?;
    if let Some(other) = summaries.iter().find(|s| s.qoi_id != first.qoi_id) {
        return Err(Error::config(format!(
            "mixed QOIs in one ensemble summary: {} and {}",
            first.qoi_id, other.qoi_id
        )));
    }
    let firsts: Vec<f64> = summaries.iter().map(|s| s.first_active).collect();
    let totals: Vec<f64> = summaries.iter().map(|s| s.total_active).collect();
    let (mean_first, se_first) = mean_and_se(&firsts)?;
    let (mean_total, se_total) = mean_and_se(&totals)?;
    Ok(EnsembleSummary {
        qoi_id: first.qoi_id.clone(),
        n_members: summaries.len(),
        mean_first,
        se_first,
        mean_total,
        se_total,
    })
}
