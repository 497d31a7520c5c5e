//! Acceptance criteria, run sequentially with one PASS/FAIL line each.
//! Exits non-zero if any criterion fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use volcpath::export::{export_dot, summary_csv, PathwayDocument, PathwayMeta};
use volcpath::harness::{
    baseline_set, bench_overhead, build_tests, finalize_baselines, run_baseline_ensemble, run_experiment_grid,
    run_member, BaselineSet, ExperimentResults, TrackerHook,
};
use volcpath::pathway::{compute_pathway, eval_bounds_test, TestState};
use volcpath::qoi::registry_canonical;
use volcpath::stats::{first_activation, mean_and_se, total_active, RunningStats};
use volcpath::surrogate::sulfur_mass_tg;
use volcpath::*;

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(limit: Duration, elapsed: Duration) -> Outcome {
    if elapsed <= limit {
        Ok(String::new())
    } else {
        Err(format!("took {elapsed:.1?}, limit {limit:?}"))
    }
}

// ---------------------------------------------------------------- 1

fn bounds_exactness() -> Outcome {
    let t0 = Instant::now();
    let mut cases = 0;
    // (value, previous, expected) for each absolute test
    for (lo, hi) in [(4e-10, 8e-10), (4e-10, 8e-10), (0.0075, 0.015)] {
        let test = BoundsTest::absolute(lo, hi).map_err(|e| e.to_string())?;
        let mid = 0.5 * (lo + hi);
        let table = [
            (0.0, true, false),
            (0.5 * lo, false, false),
            (lo, true, false),
            (lo, false, false),
            (mid, false, false),
            (mid, true, true),
            (hi, false, true),
            (hi, true, true),
            (2.0 * hi, false, true),
            (f64::from_bits(hi.to_bits() - 1), false, false),
            (f64::from_bits(lo.to_bits() + 1), true, true),
        ];
        for (v, prev, want) in table {
            let mut st = TestState::new("x");
            st.previous = prev;
            let got = eval_bounds_test(&test, &mut st, v, 7).map_err(|e| e.to_string())?;
            ensure!(got == want && st.previous == want, "absolute ({lo}, {hi}) v={v} prev={prev}: got {got}");
            cases += 1;
        }
    }
    for exp in Experiment::canonical() {
        let baseline = Arc::new(Baseline {
            qoi_id: "T(e)".into(),
            members: 10,
            mean: vec![220.0; 4],
            std: vec![2.0; 4],
        });
        let test = BoundsTest::zscore(exp.lower, exp.upper, baseline).map_err(|e| e.to_string())?;
        let value = |z: f64| 220.0 + 2.0 * z;
        let mid = 0.5 * (exp.lower + exp.upper);
        let table = [
            (0, 100.0, true, false),
            (0, exp.upper, false, false),
            (1, exp.lower - 1.0, true, false),
            (1, exp.lower, true, false),
            (1, mid, false, false),
            (1, mid, true, true),
            (1, exp.upper, false, true),
            (1, exp.upper + 3.0, false, true),
        ];
        for (m, z, prev, want) in table {
            let mut st = TestState::new("T(e)");
            st.previous = prev;
            let got = eval_bounds_test(&test, &mut st, value(z), m).map_err(|e| e.to_string())?;
            ensure!(got == want, "{} m={m} z={z} prev={prev}: got {got}", exp.label);
            cases += 1;
        }
    }
    // in-band sequences never flip
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (lo, hi) in [(4e-10, 8e-10), (0.0075, 0.015)] {
        let test = BoundsTest::absolute(lo, hi).map_err(|e| e.to_string())?;
        for start in [false, true] {
            let mut st = TestState::new("x");
            st.previous = start;
            for m in 0..200 {
                let v = lo + (hi - lo) * rng.random_range(0.001..0.999);
                let got = eval_bounds_test(&test, &mut st, v, m).map_err(|e| e.to_string())?;
                ensure!(got == start, "chatter at step {m} in band ({lo}, {hi})");
            }
        }
    }
    within(Duration::from_secs(1), t0.elapsed())?;
    Ok(format!("{cases} table cases, 4 hold sequences of 200 steps"))
}

// ---------------------------------------------------------------- 2

fn algorithm_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let instances = 500;
    let mut checked = 0usize;
    for inst in 0..instances {
        let r = rng.random_range(1..=20);
        let steps = rng.random_range(1..=60);
        let density: f64 = rng.random_range(0.0..0.6);
        // random topological order, edges only forward in it
        let mut order: Vec<usize> = (0..r).collect();
        for i in (1..r).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut edges = Vec::new();
        for a in 0..r {
            for b in a + 1..r {
                if rng.random_bool(density) {
                    edges.push((order[a], order[b]));
                }
            }
        }
        let names: Vec<String> = (0..r).map(|i| format!("q{i}")).collect();
        let base = Arc::new(BaseDag::from_indices(names.clone(), edges.clone()).map_err(|e| e.to_string())?);
        let p_active: f64 = rng.random_range(0.0..1.0);
        let active: Vec<Vec<bool>> = (0..steps).map(|_| (0..r).map(|_| rng.random_bool(p_active)).collect()).collect();
        // values well outside the hysteresis band reproduce the activation matrix
        let series: Vec<QoiSeries> = (0..r)
            .map(|l| QoiSeries {
                qoi_id: names[l].clone(),
                values: active
                    .iter()
                    .map(|row| if row[l] { rng.random_range(1.0..2.0) } else { rng.random_range(-1.0..0.0) })
                    .collect(),
            })
            .collect();
        let tests = vec![BoundsTest::absolute(0.0, 1.0).map_err(|e| e.to_string())?; r];
        let pathway = compute_pathway(base, &series, tests, 0.25).map_err(|e| e.to_string())?;
        ensure!(pathway.n_rows() == steps, "instance {inst}: {} rows", pathway.n_rows());
        for (m, row) in active.iter().enumerate() {
            let snap = pathway.materialize(m).map_err(|e| e.to_string())?;
            let want_v: Vec<usize> = (0..r).filter(|&v| row[v]).collect();
            let mut want_e = Vec::new();
            for &u in &want_v {
                for &v in &want_v {
                    if edges.contains(&(u, v)) {
                        want_e.push((u, v));
                    }
                }
            }
            let mut got_e = snap.edges.clone();
            got_e.sort();
            want_e.sort();
            ensure!(snap.vertices == want_v, "instance {inst} step {m}: vertex sets differ");
            ensure!(got_e == want_e, "instance {inst} step {m}: edge sets differ");
            checked += 1;
        }
    }
    within(Duration::from_secs(10), t0.elapsed())?;
    Ok(format!("{instances} instances, {checked} steps compared"))
}

// ---------------------------------------------------------------- 3

fn statistics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let rel = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() / a.abs().max(b.abs()) };
    for k in 0..100 {
        let n = 10_000;
        let offset = rng.random_range(-1e3..1e3);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let xs: Vec<f64> = (0..n).map(|_| offset + scale * rng.random_range(-1.0..1.0)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;

        let mut whole = RunningStats::default();
        xs.iter().for_each(|&x| whole.push(x));
        let i = rng.random_range(1..n - 1);
        let j = rng.random_range(i + 1..n);
        let (mut a, mut b, mut c) = (RunningStats::default(), RunningStats::default(), RunningStats::default());
        xs[..i].iter().for_each(|&x| a.push(x));
        xs[i..j].iter().for_each(|&x| b.push(x));
        xs[j..].iter().for_each(|&x| c.push(x));
        let left = a.merge(&b).merge(&c);
        let right = a.merge(&b.merge(&c));
        for s in [&whole, &left, &right] {
            let e = rel(s.mean(), mean).max(rel(s.sample_variance().unwrap().sqrt(), var.sqrt()));
            worst = worst.max(e);
        }
        ensure!(worst <= 1e-12, "series {k}: relative error {worst:e}");

        let p: f64 = rng.random_range(0.0..0.01);
        let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        let scan_first = bits.iter().position(|&x| x).map_or(1200.0, |i| i as f64 * 0.25);
        let scan_total = bits.iter().filter(|&&x| x).count() as f64 * 0.25;
        ensure!(first_activation(&bits, 0.25, 1200.0) == scan_first, "series {k}: first activation");
        ensure!(total_active(&bits, 0.25) == scan_total, "series {k}: total active");
    }
    Ok(format!("100 series of 10^4, worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 4

fn conservation() -> Outcome {
    let t0 = Instant::now();
    let grid = SphericalGrid::from_config(&GridConfig::default()).map_err(|e| e.to_string())?;
    let params = ModelParams {
        tau_decay: f64::INFINITY,
        ..ModelParams::preset()
    };
    let model = Surrogate::new(params, EruptionSpec::pinatubo(10.0), &grid).map_err(|e| e.to_string())?;
    let (mut state, mut stream) = model.initialize(RunSeed::new(1, 0));
    let mut reference = None;
    let mut worst: f64 = 0.0;
    for _ in 0..params.n_steps {
        model.step(&mut state, &mut stream).map_err(|e| e.to_string())?;
        let mass = sulfur_mass_tg(&state, &grid);
        if state.time > EruptionSpec::pinatubo(10.0).day {
            let r = *reference.get_or_insert(mass);
            worst = worst.max((mass - r).abs() / r);
        }
    }
    let r = reference.ok_or("no post-injection steps")?;
    ensure!(worst <= 1e-10, "relative drift {worst:e}");
    ensure!((r - 10.0).abs() / 10.0 <= 1e-10, "injected {r} Tg instead of 10");
    within(Duration::from_secs(30), t0.elapsed())?;
    Ok(format!("4800 steps, worst drift {worst:.1e}, injected {r:.12} Tg, {:.1?}", t0.elapsed()))
}

// ---------------------------------------------------------------- shared full runs

struct Protocol {
    grid: SphericalGrid,
    params: ModelParams,
    plan: ExperimentPlan,
    baselines: BaselineSet,
    results: ExperimentResults,
    elapsed: Duration,
}

fn run_protocol() -> volcpath::Result<Protocol> {
    let t0 = Instant::now();
    let grid = SphericalGrid::from_config(&GridConfig::default())?;
    let params = ModelParams::preset();
    let plan = ExperimentPlan::default();
    let stats = run_baseline_ensemble(&plan, &params, &grid, &registry_canonical())?;
    let baselines = baseline_set(finalize_baselines(&stats)?);
    let results = run_experiment_grid(
        &plan,
        &params,
        &EruptionSpec::default(),
        &grid,
        &TracerThresholds::default(),
        &baselines,
        false,
    )?;
    Ok(Protocol {
        grid,
        params,
        plan,
        baselines,
        results,
        elapsed: t0.elapsed(),
    })
}

// ---------------------------------------------------------------- 5

fn zero_tracer(p: &Protocol) -> Outcome {
    let specs = registry_canonical();
    let exp = &p.plan.experiments[1];
    let tests = build_tests(&specs, &TracerThresholds::default(), &p.baselines, exp).map_err(|e| e.to_string())?;
    let hook = TrackerHook::new(&specs, &p.grid, Arc::new(base_dag_canonical()), vec![(exp.label.clone(), tests)], p.params.dt, true)
        .map_err(|e| e.to_string())?;
    let run = run_member(&p.params, &EruptionSpec::pinatubo(0.0), &p.grid, RunSeed::new(p.plan.seed, 0), hook)
        .map_err(|e| e.to_string())?;
    let pathway = &run.pathways[0].1;
    let mut tracer_qois = 0;
    for (l, s) in run.series.iter().enumerate() {
        if s.qoi_id.starts_with("T(") {
            continue;
        }
        tracer_qois += 1;
        ensure!(s.values.iter().all(|&v| v == 0.0), "{} not identically 0", s.qoi_id);
        ensure!(pathway.column(l).iter().all(|&a| !a), "{} active", s.qoi_id);
    }
    Ok(format!("{tracer_qois} tracer QOIs zero and inactive over {} steps", pathway.n_rows()))
}

// ---------------------------------------------------------------- 6

fn mass_monotonicity(p: &Protocol) -> Outcome {
    let masses = &p.plan.masses;
    let mut notes = Vec::new();
    for q in ["SUL(e)", "AOD(e)", "T(e)"] {
        for w in masses.windows(2) {
            let (small, large) = (w[0], w[1]);
            let a = p.results.member_summaries(q, small, "Ex2");
            let b = p.results.member_summaries(q, large, "Ex2");
            ensure!(a.len() == b.len() && a.len() >= 2, "{q}: member counts");
            // members share seeds across masses, so differences are paired
            let d_first: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x.first_active - y.first_active).collect();
            let d_total: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y.total_active - x.total_active).collect();
            let (gf, sf) = mean_and_se(&d_first).map_err(|e| e.to_string())?;
            let (gt, st) = mean_and_se(&d_total).map_err(|e| e.to_string())?;
            ensure!(gf >= 0.0 && gf >= sf, "{q} {small}->{large} Tg: first-activation gap {gf:.3} vs paired SE {sf:.3}");
            ensure!(gt >= 0.0 && gt >= st, "{q} {small}->{large} Tg: total-active gap {gt:.3} vs paired SE {st:.3}");
            let ra = p.results.row(q, small, "Ex2").unwrap();
            let rb = p.results.row(q, large, "Ex2").unwrap();
            ensure!(ra.mean_first >= rb.mean_first && ra.mean_total <= rb.mean_total, "{q}: ensemble means out of order");
            notes.push(format!("{q} {small}->{large}: dfirst {gf:.2}±{sf:.2} dtotal {gt:.1}±{st:.1}"));
        }
    }
    within(Duration::from_secs(600), p.elapsed)?;
    Ok(format!("protocol {:.0?}; {}", p.elapsed, notes.join("; ")))
}

// ---------------------------------------------------------------- 7

fn threshold_sensitivity(p: &Protocol) -> Outcome {
    let never = p.params.run_length_days();
    let labels: Vec<&str> = p.plan.experiments.iter().map(|e| e.label.as_str()).collect();
    let mut zones = Vec::new();
    for z in Zone::ALL {
        let q = format!("T({})", z.label());
        let rows: Vec<&EnsembleSummary> = labels.iter().map(|l| p.results.row(&q, 10.0, l).unwrap()).collect();
        if rows.iter().all(|r| r.mean_first >= never) {
            continue;
        }
        for w in rows.windows(2) {
            ensure!(w[0].mean_first <= w[1].mean_first, "{q}: mean first activation decreases with T_u");
            ensure!(w[0].mean_total >= w[1].mean_total, "{q}: mean total active increases with T_u");
        }
        zones.push(q);
    }
    // pointwise dominance per member and step
    let mut compared = 0usize;
    for a in p.results.members.iter() {
        let base = a.run.pathways[0].1.base().clone();
        for l in (0..base.len()).filter(|&l| base.vertices()[l].starts_with("T(")) {
            let cols: Vec<Vec<bool>> = a.run.pathways.iter().map(|(_, pw)| pw.column(l)).collect();
            for w in cols.windows(2) {
                for (m, (lo, hi)) in w[0].iter().zip(&w[1]).enumerate() {
                    ensure!(*lo || !*hi, "dominance violated: {} member {} step {m}", base.vertices()[l], a.seed.member_index);
                    compared += 1;
                }
            }
        }
    }
    Ok(format!("orderings hold for {}; {compared} dominance comparisons", zones.join(", ")))
}

// ---------------------------------------------------------------- 8

fn activation_wave(p: &Protocol) -> Outcome {
    let never = p.params.run_length_days();
    let mut complete = 0;
    for f in ["SUL", "AOD"] {
        for i in 0..p.plan.n_members {
            let firsts: Vec<f64> = Zone::ALL
                .iter()
                .map(|z| p.results.member_summaries(&format!("{f}({})", z.label()), 10.0, "Ex2")[i].first_active)
                .collect();
            if firsts.iter().all(|&t| t < never) {
                complete += 1;
                ensure!(firsts.windows(2).all(|w| w[0] <= w[1]), "{f} member {i}: first activations {firsts:?}");
            }
        }
    }
    let member = p
        .results
        .members
        .iter()
        .find(|a| a.mass == 10.0 && a.seed.member_index == 0)
        .ok_or("missing 10 Tg member 0")?;
    let pathway = &member.run.pathways.iter().find(|(l, _)| l == "Ex2").ok_or("missing Ex2")?.1;
    let dot = |day: f64| export_dot(pathway, day, false).map_err(|e| e.to_string());

    let start = dot(0.0)?;
    ensure!(start.matches("fillcolor=orange").count() == 0, "day 0 has active vertices");
    ensure!(start.matches("style=solid").count() == 0, "day 0 has pathway edges");
    let pre = dot(89.0)?;
    for line in pre.lines().filter(|l| l.contains("fillcolor=orange")) {
        ensure!(line.trim_start().starts_with("\"T("), "pre-eruption active tracer: {line}");
    }
    for line in pre.lines().filter(|l| l.contains("style=solid")) {
        ensure!(line.matches("\"T(").count() == 2, "pre-eruption tracer edge: {line}");
    }
    let post = dot(100.0)?;
    for v in ["SO2(e)", "SUL(e)", "AOD(e)"] {
        ensure!(post.contains(&format!("\"{v}\" [fillcolor=orange];")), "day 100: {v} not active");
    }
    for (a, b) in [("SO2(e)", "SUL(e)"), ("SUL(e)", "AOD(e)")] {
        ensure!(
            post.contains(&format!("\"{a}\" -> \"{b}\" [style=solid, color=black];")),
            "day 100: {a} -> {b} not solid"
        );
    }
    Ok(format!(
        "{complete} complete SUL/AOD member sequences ordered; day 0 empty, day 89 tracer-free, day 100 equatorial chain"
    ))
}

// ---------------------------------------------------------------- 9

fn so2_polar_rarity(p: &Protocol) -> Outcome {
    let never = p.params.run_length_days();
    let members = p.results.member_summaries("SO2(p)", 10.0, "Ex2");
    let quiet = members.iter().filter(|s| s.first_active == never).count();
    ensure!(quiet >= 8, "SO2(p) never active in only {quiet}/{}", members.len());
    Ok(format!("SO2(p) never active in {quiet}/{} members", members.len()))
}

// ---------------------------------------------------------------- 10

fn overhead_shape() -> Outcome {
    let grid = SphericalGrid::from_config(&GridConfig::default()).map_err(|e| e.to_string())?;
    let params = ModelParams {
        n_steps: 480,
        ..ModelParams::preset()
    };
    let counts = [7, 35, 175, 875];
    let rows = bench_overhead(&counts, &params, &grid, 3).map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    ensure!(ratios.windows(2).all(|w| w[0] <= w[1]), "ratios not nondecreasing: {ratios:?}");
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let ys: Vec<f64> = ratios.iter().map(|r| r - 1.0).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    ensure!(slope >= 0.0, "negative incremental-cost slope {slope:e}");
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
    Ok(format!("ratios [{}], slope {slope:.2e} per QOI", shown.join(", ")))
}

// ---------------------------------------------------------------- 11

fn pathway_json(results: &ExperimentResults, never: f64) -> Vec<String> {
    results
        .members
        .iter()
        .flat_map(|a| {
            a.run.pathways.iter().map(move |(label, pw)| {
                PathwayDocument::new(
                    pw,
                    PathwayMeta {
                        config_digest: ExperimentConfig::default().digest(),
                        experiment: Some(label.clone()),
                        mass_tg: a.mass,
                        member_index: a.seed.member_index,
                        seed: a.seed.seed,
                        never_active_day: never,
                    },
                )
                .to_json()
            })
        })
        .collect()
}

fn determinism(p: &Protocol) -> Outcome {
    let again = run_protocol().map_err(|e| e.to_string())?;
    let (a, b) = (summary_csv(&p.results.rows), summary_csv(&again.results.rows));
    ensure!(a == b, "summary CSV differs between runs");
    let never = p.params.run_length_days();
    let (ja, jb) = (pathway_json(&p.results, never), pathway_json(&again.results, never));
    ensure!(ja.len() == jb.len(), "pathway document counts differ");
    let differing = ja.iter().zip(&jb).filter(|(x, y)| x != y).count();
    ensure!(differing == 0, "{differing} pathway JSON documents differ");
    Ok(format!(
        "{} summary rows ({} bytes) and {} pathway documents byte-identical",
        p.results.rows.len(),
        a.len(),
        ja.len()
    ))
}

// ----------------------------------------------------------------

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let outcome = f();
    let dt = t0.elapsed();
    match outcome {
        Ok(detail) => {
            println!("criterion {n:>2} PASS  {name} [{dt:.2?}]: {detail}");
            true
        }
        Err(why) => {
            println!("criterion {n:>2} FAIL  {name} [{dt:.2?}]: {why}");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= report(1, "bounds-test exactness", bounds_exactness);
    ok &= report(2, "pathway oracle equivalence", algorithm_oracle);
    ok &= report(3, "statistics oracle", statistics_oracle);
    ok &= report(4, "sulfur conservation", conservation);

    let protocol = run_protocol();
    match &protocol {
        Ok(p) => {
            ok &= report(5, "zero-tracer property", || zero_tracer(p));
            ok &= report(6, "eruption-mass monotonicity", || mass_monotonicity(p));
            ok &= report(7, "threshold sensitivity", || threshold_sensitivity(p));
            ok &= report(8, "activation wave", || activation_wave(p));
            ok &= report(9, "SO2 polar rarity", || so2_polar_rarity(p));
        }
        Err(e) => {
            for (n, name) in [(5, "zero-tracer property"), (6, "eruption-mass monotonicity"), (7, "threshold sensitivity"), (8, "activation wave"), (9, "SO2 polar rarity")] {
                println!("criterion {n:>2} FAIL  {name}: protocol run failed: {e}");
            }
            ok = false;
        }
    }
    ok &= report(10, "overhead scaling shape", overhead_shape);
    match &protocol {
        Ok(p) => ok &= report(11, "determinism", || determinism(p)),
        Err(e) => {
            println!("criterion 11 FAIL  determinism: protocol run failed: {e}");
            ok = false;
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
