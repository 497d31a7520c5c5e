//! Artifact serialization: series and summary CSV, pathway and baseline JSON,
//! DOT snapshots, bench CSV and the run manifest.
//!
//! Files are written to a temporary sibling and renamed into place, so an
//! error never leaves a partial output behind.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{BenchRow, SummaryRow};
use crate::pathway::{BaseDag, PathwayDag};
use crate::qoi::QoiSeries;
use crate::stats::Baseline;
use crate::surrogate::PRESET_ID;

pub const SERIES_CSV_PREFIX: [&str; 2] = ["step", "time_days"];
pub const SUMMARY_CSV_HEADER: &str = "qoi_id,mass_tg,experiment,n_members,mean_first,se_first,mean_total,se_total";
pub const BENCH_CSV_HEADER: &str = "qoi_count,baseline_s_per_step,tracked_s_per_step,ratio";

/// Writes `contents` to `path` via a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::config(format!("output path {} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let result = std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(contents)?;
            f.sync_all()
        })
        .and_then(|_| std::fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// Columns: step, time_days, then one column per QOI in the given order.
pub fn series_csv(series: &[QoiSeries], dt: f64) -> Result<String> {
    let n = series.first().map_or(0, QoiSeries::len);
    if let Some(s) = series.iter().find(|s| s.len() != n) {
        return Err(Error::Data(format!("series {} has {} values, expected {n}", s.qoi_id, s.len())));
    }
    let mut out = SERIES_CSV_PREFIX.join(",");
    for s in series {
        out.push(',');
        out.push_str(&s.qoi_id);
    }
    out.push('\n');
    for m in 0..n {
        write!(out, "{m},{}", m as f64 * dt).unwrap();
        for s in series {
            write!(out, ",{}", s.values[m]).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_series_csv(text: &str) -> Result<Vec<QoiSeries>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::Data("empty series CSV".into()))?.split(',').collect();
    if header.len() < 2 || header[..2] != SERIES_CSV_PREFIX {
        return Err(Error::Data("series CSV must start with step,time_days".into()));
    }
    let mut series: Vec<QoiSeries> = header[2..].iter().map(|id| QoiSeries::new(*id)).collect();
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Data(format!("series CSV row {} has {} cells", n + 1, cells.len())));
        }
        for (s, c) in series.iter_mut().zip(&cells[2..]) {
            let v = c
                .parse()
                .map_err(|_| Error::Data(format!("series CSV row {}: bad number {c:?}", n + 1)))?;
            s.values.push(v);
        }
    }
    Ok(series)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_CSV_HEADER}\n");
    for r in rows {
        let s = &r.summary;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            s.qoi_id, r.mass, r.experiment, s.n_members, s.mean_first, s.se_first, s.mean_total, s.se_total
        )
        .unwrap();
    }
    out
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        writeln!(out, "{},{:e},{:e},{}", r.qoi_count, r.baseline_s_per_step, r.tracked_s_per_step, r.ratio).unwrap();
    }
    out
}

/// Serialized pathway of one member: the base graph, one activation string
/// per step (`'1'` active, `'0'` inactive, in vertex order) and run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathwayDocument {
    pub config_digest: String,
    pub experiment: Option<String>,
    pub mass_tg: f64,
    pub member_index: usize,
    pub seed: u64,
    pub dt: f64,
    pub never_active_day: f64,
    pub base: BaseDag,
    pub activation: Vec<String>,
}

/// Run metadata carried alongside a pathway.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwayMeta {
    pub config_digest: String,
    pub experiment: Option<String>,
    pub mass_tg: f64,
    pub member_index: usize,
    pub seed: u64,
    pub never_active_day: f64,
}

impl PathwayDocument {
    pub fn new(pathway: &PathwayDag, meta: PathwayMeta) -> Self {
        let activation = pathway
            .rows()
            .map(|row| row.iter().map(|&a| if a { '1' } else { '0' }).collect())
            .collect();
        PathwayDocument {
            config_digest: meta.config_digest,
            experiment: meta.experiment,
            mass_tg: meta.mass_tg,
            member_index: meta.member_index,
            seed: meta.seed,
            dt: pathway.dt(),
            never_active_day: meta.never_active_day,
            base: (**pathway.base()).clone(),
            activation,
        }
    }

    pub fn to_pathway(&self) -> Result<PathwayDag> {
        let rows = self
            .activation
            .iter()
            .enumerate()
            .map(|(m, row)| {
                row.chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        other => Err(Error::Data(format!("activation row {m}: unexpected {other:?}"))),
                    })
                    .collect::<Result<Vec<bool>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        PathwayDag::from_rows(Arc::new(self.base.clone()), self.dt, rows)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("pathway document serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PathwayDocument = serde_json::from_str(text)?;
        doc.to_pathway()?;
        Ok(doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineDocument {
    pub config_digest: String,
    pub baselines: Vec<Baseline>,
}

impl BaselineDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("baselines serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BaselineDocument = serde_json::from_str(text)?;
        for b in &doc.baselines {
            if b.mean.len() != b.std.len() {
                return Err(Error::Data(format!("baseline {} has mismatched mean/std lengths", b.qoi_id)));
            }
        }
        Ok(doc)
    }
}

fn quote(id: &str) -> String {
    format!("\"{}\"", id.replace('\\', "\\\\").replace('"', "\\\""))
}

/// DOT rendering of the pathway graph at `day`: active vertices orange,
/// inactive gray, pathway edges solid, other base edges dashed gray unless
/// `active_only` is set. Vertices and edges follow base-graph order.
pub fn export_dot(pathway: &PathwayDag, day: f64, active_only: bool) -> Result<String> {
    let m = pathway.step_for_day(day)?;
    let row = pathway.row(m)?;
    let base = pathway.base();
    let mut out = String::from("digraph pathway {\n");
    writeln!(out, "  label={};", quote(&format!("day {day} (step {m})"))).unwrap();
    out.push_str("  node [shape=box, style=filled];\n");
    for (l, id) in base.vertices().iter().enumerate() {
        let color = if row[l] { "orange" } else { "gray" };
        writeln!(out, "  {} [fillcolor={color}];", quote(id)).unwrap();
    }
    for &(a, b) in base.edges() {
        let (va, vb) = (quote(&base.vertices()[a]), quote(&base.vertices()[b]));
        if row[a] && row[b] {
            writeln!(out, "  {va} -> {vb} [style=solid, color=black];").unwrap();
        } else if !active_only {
            writeln!(out, "  {va} -> {vb} [style=dashed, color=gray];").unwrap();
        }
    }
    out.push_str("}\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub never_active_day: f64,
    pub std_divisor: String,
    pub standard_error: String,
    pub tie_break: String,
    pub seed_derivation: String,
}

impl Conventions {
    pub fn new(never_active_day: f64) -> Self {
        Conventions {
            never_active_day,
            std_divisor: "n-1".into(),
            standard_error: "sample standard deviation / sqrt(n)".into(),
            tie_break: "value <= lower gives inactive before value >= upper gives active; otherwise hold".into(),
            seed_derivation: "member stream = ChaCha8(mix64(mix64(seed) ^ member_index * 0x9E3779B97F4A7C15)); shared across masses, experiments and the baseline".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_digest: String,
    pub preset_id: String,
    pub seed: u64,
    pub member_seeds: Vec<u64>,
    pub conventions: Conventions,
    pub outputs: Vec<String>,
    pub started_unix_s: u64,
    pub finished_unix_s: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, config_digest: &str, seed: u64, member_seeds: Vec<u64>, never_active_day: f64) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_digest: config_digest.to_string(),
            preset_id: PRESET_ID.to_string(),
            seed,
            member_seeds,
            conventions: Conventions::new(never_active_day),
            outputs: Vec::new(),
            started_unix_s: unix_now(),
            finished_unix_s: 0,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
