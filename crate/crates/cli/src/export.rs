//! Tables across runs and per-grid surface CSVs.
//!
//! Floats are written as `{:.16e}`: 17 significant digits, enough for every
//! `f64` to read back bit for bit.

use std::path::{Path, PathBuf};

use facesym_core::stats::SignificanceReport;
use facesym_core::EmotionLabel;
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_json, write_atomic, write_json};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::{verify_run, Run};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One finished run as seen by the exporter.
#[derive(Debug, Clone)]
pub struct ExportedRun {
    /// Column label: the run directory's name.
    pub label: String,
    pub dir: PathBuf,
    pub config: RunConfig,
    pub reports: Vec<SignificanceReport>,
}

/// Global scores and significant counts, one row per emotion and one
/// column per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tables {
    pub runs: Vec<String>,
    pub emotions: Vec<EmotionLabel>,
    /// `global_scores[row][col]`; `None` where a run did not score the emotion.
    pub global_scores: Vec<Vec<Option<f64>>>,
    pub significant_counts: Vec<Vec<Option<usize>>>,
    pub individuals: Vec<usize>,
}

fn label_of(dir: &Path) -> String {
    dir.canonicalize()
        .ok()
        .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| dir.display().to_string())
}

/// Load a run for export. Incomplete runs fail with the missing stages.
pub fn load_run(dir: &Path) -> CliResult<ExportedRun> {
    verify_run(dir)?;
    let config: RunConfig = read_json(&dir.join("config.json"))?;
    let mut reports = Vec::with_capacity(config.emotions.len());
    for e in &config.emotions {
        let path = dir.join(format!("reports/{e}.json"));
        let report = read_json(&path).map_err(|_| CliError::Incomplete {
            dir: dir.to_path_buf(),
            missing: vec![format!("sigtest ({e})")],
        })?;
        reports.push(report);
    }
    Ok(ExportedRun { label: label_of(dir), dir: dir.to_path_buf(), config, reports })
}

fn find(r: &ExportedRun, e: EmotionLabel) -> Option<&SignificanceReport> {
    r.reports.iter().find(|rep| rep.emotion == e)
}

/// Rows follow the emotion order of the first run, then any emotion only
/// later runs scored.
pub fn build_tables(runs: &[ExportedRun]) -> Tables {
    let mut emotions: Vec<EmotionLabel> = Vec::new();
    for r in runs {
        for e in &r.config.emotions {
            if !emotions.contains(e) {
                emotions.push(*e);
            }
        }
    }
    Tables {
        runs: runs.iter().map(|r| r.label.clone()).collect(),
        global_scores: emotions.iter().map(|&e| runs.iter().map(|r| find(r, e).map(|x| x.global_score)).collect()).collect(),
        significant_counts: emotions
            .iter()
            .map(|&e| runs.iter().map(|r| find(r, e).map(|x| x.significant_count)).collect())
            .collect(),
        individuals: runs.iter().map(|r| r.config.individuals).collect(),
        emotions,
    }
}

fn write_matrix<T>(path: &Path, tables: &Tables, rows: &[Vec<Option<T>>], cell: impl Fn(&T) -> String) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["emotion".to_string()];
    header.extend(tables.runs.iter().cloned());
    w.write_record(&header)?;
    for (e, row) in tables.emotions.iter().zip(rows) {
        let mut rec = vec![e.to_string()];
        rec.extend(row.iter().map(|v| v.as_ref().map(&cell).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Write `global_scores.csv`, `significant_counts.csv` and `tables.json`
/// into `out`, plus `surfaces/<run>/<emotion>/NNNN.csv` for every grid.
pub fn export(run_dirs: &[PathBuf], out: &Path) -> CliResult<Tables> {
    let runs = run_dirs.iter().map(|d| load_run(d)).collect::<CliResult<Vec<_>>>()?;
    let tables = build_tables(&runs);
    write_matrix(&out.join("global_scores.csv"), &tables, &tables.global_scores, |v| fmt_f64(*v))?;
    write_matrix(&out.join("significant_counts.csv"), &tables, &tables.significant_counts, |v| v.to_string())?;
    write_json(&out.join("tables.json"), &tables)?;
    for r in &runs {
        let mut config = r.config.clone();
        config.output = r.dir.clone();
        let run = Run::open(config)?;
        for e in &r.config.emotions {
            for i in 0..r.config.individuals {
                let grid = run.load_grid(*e, i)?;
                let path = out.join(format!("surfaces/{}/{e}/{i:04}.csv", r.label));
                write_surface(&path, &grid)?;
            }
        }
    }
    Ok(tables)
}

/// Long-format surface: one `s,t,activation` row per grid cell.
pub fn write_surface(path: &Path, grid: &facesym_core::probe::InterventionGrid) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["s", "t", "activation"])?;
    for (i, s) in grid.s_axis.iter().enumerate() {
        for (j, t) in grid.t_axis.iter().enumerate() {
            w.write_record([fmt_f64(*s), fmt_f64(*t), fmt_f64(grid.value(i, j))])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Emotion name and one cell per run.
pub type MatrixRow = (String, Vec<Option<f64>>);

/// Read a matrix written by [`export`] back: run labels and rows, empty
/// cells as `None`.
pub fn read_matrix(path: &Path) -> CliResult<(Vec<String>, Vec<MatrixRow>)> {
    let mut r = csv::Reader::from_path(path)?;
    let runs = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let cells = rec
            .iter()
            .skip(1)
            .map(|c| if c.is_empty() { Ok(None) } else { c.parse::<f64>().map(Some) })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| crate::error::config_error(format!("{}: {e}", path.display())))?;
        rows.push((rec.get(0).unwrap_or_default().to_string(), cells));
    }
    Ok((runs, rows))
}
