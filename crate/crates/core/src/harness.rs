//! Experimental protocol: baseline ensembles, eruption ensembles across
//! masses and threshold settings, in-situ tracking and the overhead benchmark.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SphericalGrid;
use crate::pathway::{BaseDag, BoundsTest, PathwayDag, PathwayTracker};
use crate::qoi::{registry_canonical, validate_registry, CompiledQoi, Field, QoiSeries, QoiSpec};
use crate::stats::{ensemble_summarize, ActivationSummary, Baseline, BaselineStats, EnsembleSummary};
use crate::surrogate::{EruptionSpec, ModelParams, ModelState, RunSeed, Surrogate};

/// One threshold setting for the temperature z-score tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub label: String,
    pub lower: f64,
    pub upper: f64,
}

impl Experiment {
    pub fn new(label: impl Into<String>, lower: f64, upper: f64) -> Self {
        Experiment {
            label: label.into(),
            lower,
            upper,
        }
    }

    /// Ex1 to Ex4: lower bound 0.5, upper bounds 0.75, 1.0, 1.5 and 2.0.
    pub fn canonical() -> Vec<Experiment> {
        [("Ex1", 0.75), ("Ex2", 1.0), ("Ex3", 1.5), ("Ex4", 2.0)]
            .into_iter()
            .map(|(l, u)| Experiment::new(l, 0.5, u))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub masses: Vec<f64>,
    pub experiments: Vec<Experiment>,
    pub n_members: usize,
    pub baseline_members: usize,
    pub seed: u64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            masses: vec![5.0, 10.0, 20.0],
            experiments: Experiment::canonical(),
            n_members: 10,
            baseline_members: 10,
            seed: 1991,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_members < 2 {
            return Err(Error::config(format!("n_members must be at least 2, got {}", self.n_members)));
        }
        if self.baseline_members < 2 {
            return Err(Error::config(format!(
                "baseline_members must be at least 2, got {}",
                self.baseline_members
            )));
        }
        if let Some(m) = self.masses.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(Error::config(format!("eruption mass must be finite and >= 0, got {m}")));
        }
        let mut labels = std::collections::HashSet::new();
        for e in &self.experiments {
            if !labels.insert(e.label.as_str()) {
                return Err(Error::config(format!("duplicate experiment label {}", e.label)));
            }
            if !(e.lower <= e.upper && e.upper > 0.0) {
                return Err(Error::config(format!(
                    "experiment {} needs lower <= upper and upper > 0, got {} and {}",
                    e.label, e.lower, e.upper
                )));
            }
        }
        Ok(())
    }

    /// Keeps only the experiments whose labels are listed.
    pub fn select_experiments(&mut self, labels: &[String]) -> Result<()> {
        if let Some(l) = labels.iter().find(|l| !self.experiments.iter().any(|e| &e.label == *l)) {
            return Err(Error::config(format!("unknown experiment {l}")));
        }
        self.experiments.retain(|e| labels.contains(&e.label));
        Ok(())
    }
}

/// Absolute thresholds (lower, upper) for the tracer QOIs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TracerThresholds {
    pub so2: (f64, f64),
    pub sul: (f64, f64),
    pub aod: (f64, f64),
}

impl Default for TracerThresholds {
    fn default() -> Self {
        TracerThresholds {
            so2: (4e-10, 8e-10),
            sul: (4e-10, 8e-10),
            aod: (0.0075, 0.015),
        }
    }
}

impl TracerThresholds {
    pub fn for_field(&self, field: Field) -> Option<(f64, f64)> {
        match field {
            Field::SO2 => Some(self.so2),
            Field::SUL => Some(self.sul),
            Field::AOD => Some(self.aod),
            Field::T => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.so2, self.sul, self.aod] {
            BoundsTest::absolute(lo, hi)?;
        }
        Ok(())
    }
}

/// Finalized baselines keyed by QOI id.
pub type BaselineSet = HashMap<String, Arc<Baseline>>;

pub fn baseline_set(baselines: Vec<Baseline>) -> BaselineSet {
    baselines.into_iter().map(|b| (b.qoi_id.clone(), Arc::new(b))).collect()
}

/// Bounds tests for a registry: absolute tests on tracers, z-score tests on temperature.
pub fn build_tests(
    specs: &[QoiSpec],
    thresholds: &TracerThresholds,
    baselines: &BaselineSet,
    experiment: &Experiment,
) -> Result<Vec<BoundsTest>> {
    specs
        .iter()
        .map(|spec| match thresholds.for_field(spec.field) {
            Some((lo, hi)) => BoundsTest::absolute(lo, hi),
            None => {
                let baseline = baselines
                    .get(&spec.id)
                    .ok_or_else(|| Error::config(format!("no baseline for {}", spec.id)))?;
                BoundsTest::zscore(experiment.lower, experiment.upper, baseline.clone())
            }
        })
        .collect()
}

/// In-situ observer: evaluates the registry on each new state and feeds
/// one pathway tracker per threshold setting. Holds no model fields.
#[derive(Debug, Clone)]
pub struct TrackerHook {
    qois: Vec<CompiledQoi>,
    labels: Vec<String>,
    trackers: Vec<PathwayTracker>,
    series: Option<Vec<QoiSeries>>,
    values: Vec<f64>,
}

impl TrackerHook {
    /// `trackers` pairs a label with one bounds test per registry entry.
    /// The registry ids must equal the base vertices, in order.
    pub fn new(
        specs: &[QoiSpec],
        grid: &SphericalGrid,
        base: Arc<BaseDag>,
        trackers: Vec<(String, Vec<BoundsTest>)>,
        dt: f64,
        record_series: bool,
    ) -> Result<Self> {
        let qois = validate_registry(specs, grid)?;
        if qois.len() != base.len() || qois.iter().zip(base.vertices()).any(|(q, v)| q.id() != v) {
            return Err(Error::config("QOI registry does not match the base graph vertices"));
        }
        let mut labels = Vec::with_capacity(trackers.len());
        let mut built = Vec::with_capacity(trackers.len());
        for (label, tests) in trackers {
            built.push(PathwayTracker::new(base.clone(), tests, dt)?);
            labels.push(label);
        }
        let series = record_series.then(|| qois.iter().map(|q| QoiSeries::new(q.id())).collect());
        Ok(TrackerHook {
            values: vec![0.0; qois.len()],
            qois,
            labels,
            trackers: built,
            series,
        })
    }

    pub fn n_qois(&self) -> usize {
        self.qois.len()
    }

    /// Called once for the initial state and once after every step.
    pub fn observe(&mut self, state: &ModelState) -> Result<()> {
        for (v, q) in self.values.iter_mut().zip(&self.qois) {
            *v = q.value(state)?;
        }
        if let Some(series) = &mut self.series {
            for (s, &v) in series.iter_mut().zip(&self.values) {
                s.values.push(v);
            }
        }
        for t in &mut self.trackers {
            t.observe(state.step, &self.values)?;
        }
        Ok(())
    }

    pub fn finish(self) -> (Vec<QoiSeries>, Vec<(String, PathwayDag)>) {
        let pathways = self.labels.into_iter().zip(self.trackers.into_iter().map(PathwayTracker::finish)).collect();
        (self.series.unwrap_or_default(), pathways)
    }
}

/// Output of one tracked member run.
#[derive(Debug, Clone)]
pub struct MemberRun {
    pub series: Vec<QoiSeries>,
    /// Pathway per tracker label.
    pub pathways: Vec<(String, PathwayDag)>,
    /// Activation summaries per tracker label, in registry order.
    pub summaries: Vec<(String, Vec<ActivationSummary>)>,
}

/// Steps a surrogate from its initial state through `n_steps`, calling
/// `observe` on the initial state and after every step.
pub fn drive<F>(surrogate: &Surrogate, seed: RunSeed, mut observe: F) -> Result<()>
where
    F: FnMut(&ModelState) -> Result<()>,
{
    let (mut state, mut stream) = surrogate.initialize(seed);
    observe(&state)?;
    for _ in 0..surrogate.params().n_steps {
        surrogate.step(&mut state, &mut stream)?;
        observe(&state)?;
    }
    Ok(())
}

fn member_context(seed: RunSeed, mass: f64) -> impl FnOnce(Error) -> Error {
    move |e| Error::Member {
        member: seed.member_index,
        seed: seed.seed,
        mass,
        source: Box::new(e),
    }
}

/// Runs one member with the hook attached.
pub fn run_member(
    params: &ModelParams,
    eruption: &EruptionSpec,
    grid: &SphericalGrid,
    seed: RunSeed,
    mut hook: TrackerHook,
) -> Result<MemberRun> {
    let surrogate = Surrogate::new(*params, *eruption, grid)?;
    drive(&surrogate, seed, |s| hook.observe(s)).map_err(member_context(seed, eruption.mass))?;
    let (series, pathways) = hook.finish();
    let never = params.run_length_days();
    let summaries = pathways
        .iter()
        .map(|(label, p)| (label.clone(), p.summaries(seed.member_index, never)))
        .collect();
    Ok(MemberRun {
        series,
        pathways,
        summaries,
    })
}

/// Eruption-free ensemble statistics for every registry QOI, merged in member order.
pub fn run_baseline_ensemble(
    plan: &ExperimentPlan,
    params: &ModelParams,
    grid: &SphericalGrid,
    specs: &[QoiSpec],
) -> Result<Vec<BaselineStats>> {
    if plan.baseline_members < 2 {
        return Err(Error::config(format!(
            "baseline_members must be at least 2, got {}",
            plan.baseline_members
        )));
    }
    let qois = validate_registry(specs, grid)?;
    let surrogate = Surrogate::new(*params, EruptionSpec::pinatubo(0.0), grid)?;
    let n = params.n_steps + 1;
    let per_member: Vec<Vec<BaselineStats>> = (0..plan.baseline_members)
        .into_par_iter()
        .map(|i| {
            let seed = RunSeed::new(plan.seed, i);
            let mut stats: Vec<BaselineStats> = qois.iter().map(|q| BaselineStats::new(q.id(), n)).collect();
            drive(&surrogate, seed, |state| {
                for (q, s) in qois.iter().zip(stats.iter_mut()) {
                    s.update(state.step, q.value(state)?)?;
                }
                Ok(())
            })
            .map_err(member_context(seed, 0.0))?;
            Ok(stats)
        })
        .collect::<Result<_>>()?;
    let mut members = per_member.into_iter();
    let mut acc = members.next().expect("at least two members");
    for m in members {
        acc = acc.iter().zip(&m).map(|(a, b)| a.merge(b)).collect::<Result<_>>()?;
    }
    Ok(acc)
}

pub fn finalize_baselines(stats: &[BaselineStats]) -> Result<Vec<Baseline>> {
    stats.iter().map(BaselineStats::finalize).collect()
}

/// Per-member artifacts of the experiment grid. One simulation per
/// (mass, member) is classified under every experiment's thresholds.
#[derive(Debug, Clone)]
pub struct MemberArtifact {
    pub mass: f64,
    pub seed: RunSeed,
    pub run: MemberRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mass: f64,
    pub experiment: String,
    pub summary: EnsembleSummary,
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    /// Ordered by mass, then experiment, then registry order.
    pub rows: Vec<SummaryRow>,
    /// Ordered by mass, then member index.
    pub members: Vec<MemberArtifact>,
}

impl ExperimentResults {
    pub fn row(&self, qoi_id: &str, mass: f64, experiment: &str) -> Option<&EnsembleSummary> {
        self.rows
            .iter()
            .find(|r| r.mass == mass && r.experiment == experiment && r.summary.qoi_id == qoi_id)
            .map(|r| &r.summary)
    }

    /// Per-member summaries of one QOI for a (mass, experiment) cell, in member order.
    pub fn member_summaries(&self, qoi_id: &str, mass: f64, experiment: &str) -> Vec<&ActivationSummary> {
        self.members
            .iter()
            .filter(|a| a.mass == mass)
            .filter_map(|a| {
                a.run
                    .summaries
                    .iter()
                    .find(|(l, _)| l == experiment)
                    .and_then(|(_, s)| s.iter().find(|s| s.qoi_id == qoi_id))
            })
            .collect()
    }
}

/// Runs every (mass, member) of the plan, using `eruption` with each plan
/// mass substituted, and summarizes each (mass, experiment) cell.
/// A failed member aborts the grid with an error naming its seed and step.
pub fn run_experiment_grid(
    plan: &ExperimentPlan,
    params: &ModelParams,
    eruption: &EruptionSpec,
    grid: &SphericalGrid,
    thresholds: &TracerThresholds,
    baselines: &BaselineSet,
    record_series: bool,
) -> Result<ExperimentResults> {
    plan.validate()?;
    thresholds.validate()?;
    let specs = registry_canonical();
    let base = Arc::new(crate::pathway::base_dag_canonical());
    let trackers: Vec<(String, Vec<BoundsTest>)> = plan
        .experiments
        .iter()
        .map(|e| Ok((e.label.clone(), build_tests(&specs, thresholds, baselines, e)?)))
        .collect::<Result<_>>()?;

    let jobs: Vec<(f64, usize)> = plan
        .masses
        .iter()
        .flat_map(|&mass| (0..plan.n_members).map(move |i| (mass, i)))
        .collect();
    let members: Vec<MemberArtifact> = jobs
        .into_par_iter()
        .map(|(mass, i)| {
            let seed = RunSeed::new(plan.seed, i);
            let hook = TrackerHook::new(&specs, grid, base.clone(), trackers.clone(), params.dt, record_series)?;
            let eruption = EruptionSpec { mass, ..*eruption };
            let run = run_member(params, &eruption, grid, seed, hook)?;
            log::debug!("member {i} at {mass} Tg done");
            Ok(MemberArtifact { mass, seed, run })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(plan.masses.len() * plan.experiments.len() * specs.len());
    for &mass in &plan.masses {
        for (e, exp) in plan.experiments.iter().enumerate() {
            for (l, spec) in specs.iter().enumerate() {
                let cell: Vec<ActivationSummary> = members
                    .iter()
                    .filter(|a| a.mass == mass)
                    .map(|a| a.run.summaries[e].1[l].clone())
                    .collect();
                debug_assert!(cell.iter().all(|s| s.qoi_id == spec.id));
                rows.push(SummaryRow {
                    mass,
                    experiment: exp.label.clone(),
                    summary: ensemble_summarize(&cell)?,
                });
            }
        }
    }
    Ok(ExperimentResults { rows, members })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub qoi_count: usize,
    pub baseline_s_per_step: f64,
    pub tracked_s_per_step: f64,
    pub ratio: f64,
}

/// `count` QOIs cycling through the canonical 3D specs, ids suffixed `#k`.
pub fn synthetic_registry(count: usize) -> Vec<QoiSpec> {
    let pool: Vec<QoiSpec> = registry_canonical().into_iter().filter(|s| s.field.is_3d()).collect();
    (0..count)
        .map(|k| {
            let mut s = pool[k % pool.len()].clone();
            s.id = format!("{}#{k}", s.id);
            s
        })
        .collect()
}

fn synthetic_hook(count: usize, grid: &SphericalGrid, dt: f64) -> Result<TrackerHook> {
    let specs = synthetic_registry(count);
    let base = Arc::new(BaseDag::from_indices(specs.iter().map(|s| s.id.clone()).collect(), Vec::new())?);
    let tests = vec![BoundsTest::absolute(0.0, 1.0)?; count];
    TrackerHook::new(&specs, grid, base, vec![("bench".into(), tests)], dt, false)
}

/// Per-step cost of the tracking hook at each QOI count.
///
/// Each repetition runs the surrogate once without a hook and once per count
/// with one, alternating the count order between repetitions. Within a
/// tracked run the model step and the hook call are timed separately;
/// `ratio` is the mean over repetitions of (model + hook) / model, so slow
/// machine phases cancel out of the ratio. Count 0 means the hook is disabled.
pub fn bench_overhead(counts: &[usize], params: &ModelParams, grid: &SphericalGrid, repetitions: usize) -> Result<Vec<BenchRow>> {
    if repetitions == 0 {
        return Err(Error::config("bench needs at least one repetition"));
    }
    if params.n_steps == 0 {
        return Err(Error::config("bench needs at least one step"));
    }
    let surrogate = Surrogate::new(*params, EruptionSpec::pinatubo(10.0), grid)?;
    let seed = RunSeed::new(0, 0);
    let steps = params.n_steps as f64;

    let mut baseline_total = Duration::ZERO;
    let mut tracked_total = vec![Duration::ZERO; counts.len()];
    let mut ratio_sum = vec![0.0; counts.len()];
    for rep in 0..repetitions {
        let t0 = Instant::now();
        drive(&surrogate, seed, |_| Ok(()))?;
        baseline_total += t0.elapsed();

        let mut order: Vec<usize> = (0..counts.len()).collect();
        if rep % 2 == 1 {
            order.reverse();
        }
        for c in order {
            if counts[c] == 0 {
                ratio_sum[c] += 1.0;
                continue;
            }
            let mut hook = synthetic_hook(counts[c], grid, params.dt)?;
            let (mut state, mut stream) = surrogate.initialize(seed);
            let mut model = Duration::ZERO;
            let mut tracking = Duration::ZERO;
            let t0 = Instant::now();
            hook.observe(&state)?;
            tracking += t0.elapsed();
            for _ in 0..params.n_steps {
                let t0 = Instant::now();
                surrogate.step(&mut state, &mut stream)?;
                let t1 = Instant::now();
                hook.observe(&state)?;
                let t2 = Instant::now();
                model += t1 - t0;
                tracking += t2 - t1;
            }
            tracked_total[c] += model + tracking;
            ratio_sum[c] += (model + tracking).as_secs_f64() / model.as_secs_f64();
        }
    }
    let reps = repetitions as f64;
    let baseline_s_per_step = baseline_total.as_secs_f64() / reps / steps;
    Ok(counts
        .iter()
        .enumerate()
        .map(|(c, &qoi_count)| BenchRow {
            qoi_count,
            baseline_s_per_step,
            tracked_s_per_step: if qoi_count == 0 {
                baseline_s_per_step
            } else {
                tracked_total[c].as_secs_f64() / reps / steps
            },
            ratio: ratio_sum[c] / reps,
        })
        .collect())
}
