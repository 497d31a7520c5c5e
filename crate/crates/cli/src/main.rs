use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::info;

use volcpath::export::{
    bench_csv, export_dot, series_csv, summary_csv, write_atomic, BaselineDocument, PathwayDocument, PathwayMeta,
    RunManifest,
};
use volcpath::harness::{
    baseline_set, bench_overhead, build_tests, finalize_baselines, run_baseline_ensemble, run_experiment_grid,
    run_member, BaselineSet, TrackerHook,
};
use volcpath::qoi::registry_canonical;
use volcpath::{base_dag_canonical, Error, ExperimentConfig, Result, RunSeed, SphericalGrid};

const LOG_ENV: &str = "VOLCPATH_LOG";

#[derive(Parser)]
#[command(name = "volcpath", version, about = "Source-impact pathway tracking for a volcanic-eruption surrogate model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML)
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory; overrides output.dir from the config
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one tracked ensemble member
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Eruption mass in Tg; defaults to eruption.mass from the config
        #[arg(long)]
        mass: Option<f64>,
        /// Seed; defaults to plan.seed from the config
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        member: usize,
        /// Threshold setting for the temperature tests; defaults to the first in the plan
        #[arg(long)]
        experiment: Option<String>,
        /// Baselines JSON from `volcpath baseline`; computed on the fly if absent
        #[arg(long)]
        baselines: Option<PathBuf>,
    },
    /// Run the eruption-free baseline ensemble
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Run the full mass by threshold experiment grid
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Comma-separated experiment labels to keep
        #[arg(long, value_delimiter = ',')]
        experiments: Option<Vec<String>>,
        #[arg(long)]
        baselines: Option<PathBuf>,
    },
    /// Render a stored pathway as DOT at a given day
    ExportDot {
        pathway: PathBuf,
        #[arg(long)]
        day: f64,
        /// Omit base edges that are not part of the pathway
        #[arg(long)]
        active_only: bool,
        /// Output file; stdout if absent
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Measure tracking overhead against QOI count
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [7, 35, 175, 875])]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        /// Steps per timed run; defaults to model.n_steps
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                msg.push_str(&format!("\n  caused by: {s}"));
                source = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            common,
            mass,
            seed,
            member,
            experiment,
            baselines,
        } => simulate(&common, mass, seed, member, experiment, baselines.as_deref()),
        Command::Baseline { common } => baseline(&common),
        Command::Experiment {
            common,
            experiments,
            baselines,
        } => experiment(&common, experiments, baselines.as_deref()),
        Command::ExportDot {
            pathway,
            day,
            active_only,
            out,
        } => {
            let text = std::fs::read_to_string(&pathway)
                .map_err(|e| Error::Config(format!("cannot read pathway {}: {e}", pathway.display())))?;
            let dot = export_dot(&PathwayDocument::from_json(&text)?.to_pathway()?, day, active_only)?;
            match out {
                Some(path) => write_atomic(&path, dot.as_bytes()),
                None => {
                    print!("{dot}");
                    Ok(())
                }
            }
        }
        Command::Bench {
            common,
            counts,
            repetitions,
            steps,
        } => bench(&common, &counts, repetitions, steps),
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, SphericalGrid, PathBuf)> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let grid = cfg.grid()?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    info!("config {} (digest {})", common.config.display(), &cfg.digest()[..12]);
    Ok((cfg, grid, out))
}

fn obtain_baselines(cfg: &ExperimentConfig, grid: &SphericalGrid, path: Option<&Path>) -> Result<(BaselineSet, Option<BaselineDocument>)> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read baselines {}: {e}", p.display())))?;
            let doc = BaselineDocument::from_json(&text)?;
            let expected = cfg.model.n_steps + 1;
            if let Some(b) = doc.baselines.iter().find(|b| b.mean.len() != expected) {
                return Err(Error::Config(format!(
                    "baseline {} in {} has {} steps, the configured run has {expected}",
                    b.qoi_id,
                    p.display(),
                    b.mean.len()
                )));
            }
            Ok((baseline_set(doc.baselines), None))
        }
        None => {
            info!("running {} baseline members", cfg.plan.baseline_members);
            let stats = run_baseline_ensemble(&cfg.plan, &cfg.model, grid, &registry_canonical())?;
            let baselines = finalize_baselines(&stats)?;
            let doc = BaselineDocument {
                config_digest: cfg.digest(),
                baselines: baselines.clone(),
            };
            Ok((baseline_set(baselines), Some(doc)))
        }
    }
}

fn member_seeds(seed: u64, members: impl Iterator<Item = usize>) -> Vec<u64> {
    members.map(|i| RunSeed::new(seed, i).stream_key()).collect()
}

fn finish_manifest(mut manifest: RunManifest, out: &Path, outputs: Vec<String>) -> Result<()> {
    manifest.outputs = outputs;
    manifest.finished_unix_s = volcpath::export::unix_now();
    write_atomic(&out.join("manifest.json"), manifest.to_json().as_bytes())
}

fn simulate(
    common: &Common,
    mass: Option<f64>,
    seed: Option<u64>,
    member: usize,
    experiment: Option<String>,
    baselines: Option<&Path>,
) -> Result<()> {
    let (mut cfg, grid, out) = load(common)?;
    if let Some(m) = mass {
        cfg.eruption.mass = m;
    }
    if let Some(s) = seed {
        cfg.plan.seed = s;
    }
    cfg.validate()?;
    let exp = match &experiment {
        Some(label) => cfg
            .plan
            .experiments
            .iter()
            .find(|e| &e.label == label)
            .ok_or_else(|| Error::Config(format!("unknown experiment {label}")))?,
        None => cfg
            .plan
            .experiments
            .first()
            .ok_or_else(|| Error::Config("the plan lists no experiments".into()))?,
    }
    .clone();
    let digest = cfg.digest();
    let manifest = RunManifest::new(
        "simulate",
        &digest,
        cfg.plan.seed,
        member_seeds(cfg.plan.seed, std::iter::once(member)),
        cfg.model.run_length_days(),
    );
    let (bl, _) = obtain_baselines(&cfg, &grid, baselines)?;
    let specs = registry_canonical();
    let tests = build_tests(&specs, &cfg.thresholds, &bl, &exp)?;
    let hook = TrackerHook::new(
        &specs,
        &grid,
        Arc::new(base_dag_canonical()),
        vec![(exp.label.clone(), tests)],
        cfg.model.dt,
        true,
    )?;
    let seed = RunSeed::new(cfg.plan.seed, member);
    info!("simulating member {member} at {} Tg, {}", cfg.eruption.mass, exp.label);
    let run = run_member(&cfg.model, &cfg.eruption, &grid, seed, hook)?;
    let (label, pathway) = &run.pathways[0];
    let doc = PathwayDocument::new(
        pathway,
        PathwayMeta {
            config_digest: digest,
            experiment: Some(label.clone()),
            mass_tg: cfg.eruption.mass,
            member_index: member,
            seed: cfg.plan.seed,
            never_active_day: cfg.model.run_length_days(),
        },
    );
    let csv = series_csv(&run.series, cfg.model.dt)?;
    write_atomic(&out.join("series.csv"), csv.as_bytes())?;
    write_atomic(&out.join("pathway.json"), doc.to_json().as_bytes())?;
    finish_manifest(manifest, &out, vec!["series.csv".into(), "pathway.json".into()])?;
    info!("wrote {}", out.display());
    Ok(())
}

fn baseline(common: &Common) -> Result<()> {
    let (cfg, grid, out) = load(common)?;
    let manifest = RunManifest::new(
        "baseline",
        &cfg.digest(),
        cfg.plan.seed,
        member_seeds(cfg.plan.seed, 0..cfg.plan.baseline_members),
        cfg.model.run_length_days(),
    );
    let (_, doc) = obtain_baselines(&cfg, &grid, None)?;
    let doc = doc.expect("computed baselines carry a document");
    write_atomic(&out.join("baselines.json"), doc.to_json().as_bytes())?;
    finish_manifest(manifest, &out, vec!["baselines.json".into()])?;
    info!("wrote {}", out.display());
    Ok(())
}

fn mass_tag(mass: f64) -> String {
    format!("{mass}").replace('.', "p")
}

fn experiment(common: &Common, experiments: Option<Vec<String>>, baselines: Option<&Path>) -> Result<()> {
    let (mut cfg, grid, out) = load(common)?;
    if let Some(labels) = experiments {
        cfg.plan.select_experiments(&labels)?;
    }
    let digest = cfg.digest();
    let manifest = RunManifest::new(
        "experiment",
        &digest,
        cfg.plan.seed,
        member_seeds(cfg.plan.seed, 0..cfg.plan.n_members.max(cfg.plan.baseline_members)),
        cfg.model.run_length_days(),
    );
    let (bl, bl_doc) = obtain_baselines(&cfg, &grid, baselines)?;
    info!(
        "running {} masses x {} members",
        cfg.plan.masses.len(),
        cfg.plan.n_members
    );
    let res = run_experiment_grid(&cfg.plan, &cfg.model, &cfg.eruption, &grid, &cfg.thresholds, &bl, true)?;

    let mut outputs = Vec::new();
    let mut emit = |name: String, bytes: &[u8]| -> Result<()> {
        write_atomic(&out.join(&name), bytes)?;
        outputs.push(name);
        Ok(())
    };
    emit("summary.csv".into(), summary_csv(&res.rows).as_bytes())?;
    if let Some(doc) = bl_doc {
        emit("baselines.json".into(), doc.to_json().as_bytes())?;
    }
    for a in &res.members {
        let tag = format!("mass{}_member{:02}", mass_tag(a.mass), a.seed.member_index);
        emit(format!("series/{tag}.csv"), series_csv(&a.run.series, cfg.model.dt)?.as_bytes())?;
        for (label, pathway) in &a.run.pathways {
            let doc = PathwayDocument::new(
                pathway,
                PathwayMeta {
                    config_digest: digest.clone(),
                    experiment: Some(label.clone()),
                    mass_tg: a.mass,
                    member_index: a.seed.member_index,
                    seed: a.seed.seed,
                    never_active_day: cfg.model.run_length_days(),
                },
            );
            emit(format!("pathways/{tag}_{label}.json"), doc.to_json().as_bytes())?;
            if a.seed.member_index == 0 {
                for &day in &cfg.output.dot_days {
                    let dot = export_dot(pathway, day, false)?;
                    emit(format!("dot/{tag}_{label}_day{}.dot", mass_tag(day)), dot.as_bytes())?;
                }
            }
        }
    }
    finish_manifest(manifest, &out, outputs)?;
    info!("wrote {} summary rows to {}", res.rows.len(), out.display());
    Ok(())
}

fn bench(common: &Common, counts: &[usize], repetitions: usize, steps: Option<usize>) -> Result<()> {
    let (mut cfg, grid, out) = load(common)?;
    if let Some(n) = steps {
        cfg.model.n_steps = n;
    }
    let manifest = RunManifest::new("bench", &cfg.digest(), 0, member_seeds(0, std::iter::once(0)), cfg.model.run_length_days());
    let rows = bench_overhead(counts, &cfg.model, &grid, repetitions)?;
    for r in &rows {
        info!("{} QOIs: ratio {:.4}", r.qoi_count, r.ratio);
    }
    write_atomic(&out.join("bench.csv"), bench_csv(&rows).as_bytes())?;
    finish_manifest(manifest, &out, vec!["bench.csv".into()])?;
    Ok(())
}
