//! Run artifacts: results, tables, similarity matrix, embeddings, checkpoints.

use std::fs;
use std::path::Path;

use dggn_tape::Tensor;
use serde::{Deserialize, Serialize};

use super::evaluate::{round2, table_average};
use super::run::{Experiment, LossRecord, RunResult, RunState};
use crate::error::{io_err, DggnError, Result};

pub const RESULTS_FILE: &str = "results.json";
pub const TABLE_FILE: &str = "table.csv";
pub const CKA_FILE: &str = "cka.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const EMBEDDINGS_MANIFEST: &str = "embeddings.json";
pub const LOSS_TRACE_FILE: &str = "loss_trace.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

/// One table line: session accuracies in percent plus their average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    /// Two-decimal percentages.
    pub sessions: Vec<f64>,
    pub average: f64,
}

impl TableRow {
    pub fn new(method: impl Into<String>, percents: &[f64]) -> Self {
        let sessions: Vec<f64> = percents.iter().map(|v| round2(*v)).collect();
        let average = table_average(&sessions);
        Self {
            method: method.into(),
            sessions,
            average,
        }
    }

    /// Row of checkpoint-averaged accuracies.
    pub fn from_result(result: &RunResult) -> Self {
        let p: Vec<f64> = result
            .sessions
            .iter()
            .map(|s| s.checkpoint_averaged_accuracy * 100.0)
            .collect();
        Self::new(result.name.clone(), &p)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// `method,Session 1,..,Session n,Average` with two decimals.
pub fn render_table(rows: &[TableRow]) -> Result<String> {
    let n = rows
        .first()
        .map(|r| r.sessions.len())
        .ok_or_else(|| DggnError::Domain("table needs at least one row".into()))?;
    if let Some(r) = rows.iter().find(|r| r.sessions.len() != n) {
        return Err(DggnError::Domain(format!(
            "row {} has {} sessions, expected {n}",
            r.method,
            r.sessions.len()
        )));
    }
    let mut s = String::from("method");
    for i in 1..=n {
        s.push_str(&format!(",Session {i}"));
    }
    s.push_str(",Average\n");
    for r in rows {
        s.push_str(&csv_field(&r.method));
        for v in &r.sessions {
            s.push_str(&format!(",{v:.2}"));
        }
        s.push_str(&format!(",{:.2}\n", r.average));
    }
    Ok(s)
}

pub fn results_json(result: &RunResult) -> Result<String> {
    let mut s = serde_json::to_string_pretty(result)?;
    s.push('\n');
    Ok(s)
}

pub fn load_results(path: impl AsRef<Path>) -> Result<RunResult> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes `results.json`, `table.csv` and `cka.csv`; a pure function of `result`.
pub fn report_emit(result: &RunResult, out: impl AsRef<Path>) -> Result<()> {
    if result.sessions.is_empty() {
        return Err(DggnError::State("report needs at least one completed session".into()));
    }
    let out = out.as_ref();
    write(&out.join(RESULTS_FILE), &results_json(result)?)?;
    write(&out.join(TABLE_FILE), &render_table(&[TableRow::from_result(result)])?)?;
    write(&out.join(CKA_FILE), &result.cka.to_csv())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBlock {
    /// `cs` or `ca`.
    pub branch: String,
    pub session: usize,
    /// Row offset into the file.
    pub offset: usize,
    pub rows: usize,
}

/// Layout of `embeddings.bin`: row-major little-endian `f64`, blocks back to back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub file: String,
    pub dtype: String,
    pub dim: usize,
    pub rows: usize,
    pub blocks: Vec<EmbeddingBlock>,
    /// Class of each probe row, repeated in every block.
    pub labels: Vec<usize>,
    pub sample_ids: Vec<u64>,
}

pub fn export_embeddings(exp: &Experiment, state: &RunState, out: impl AsRef<Path>) -> Result<EmbeddingManifest> {
    let out = out.as_ref();
    let probe = exp.probe_samples();
    let mut bytes = Vec::new();
    let mut blocks = Vec::new();
    let mut rows = 0;
    let mut dim = 0;
    let branches: [(&str, &[Tensor]); 2] = [("cs", &state.probe_cs), ("ca", &state.probe_ca)];
    for (branch, reps) in branches {
        for (session, t) in reps.iter().enumerate() {
            dim = t.last_dim();
            blocks.push(EmbeddingBlock {
                branch: branch.into(),
                session,
                offset: rows,
                rows: t.rows(),
            });
            rows += t.rows();
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let manifest = EmbeddingManifest {
        file: EMBEDDINGS_FILE.into(),
        dtype: "f64-le".into(),
        dim,
        rows,
        blocks,
        labels: probe.iter().map(|s| s.label).collect(),
        sample_ids: probe.iter().map(|s| s.sample_id).collect(),
    };
    fs::create_dir_all(out).map_err(io_err(out))?;
    let path = out.join(EMBEDDINGS_FILE);
    fs::write(&path, bytes).map_err(io_err(&path))?;
    write(&out.join(EMBEDDINGS_MANIFEST), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn write_loss_trace(trace: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut s = String::new();
    for r in trace {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    write(path.as_ref(), &s)
}

/// Saves encoders, forest, memory and config under `dir`.
pub fn save_checkpoints(exp: &Experiment, state: &RunState, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    state.model.cs.save_json(dir.join("encoder_cs.json"))?;
    if let Some(ca) = &state.model.ca {
        ca.save_json(dir.join("encoder_ca.json"))?;
    }
    if let Some(f) = &state.forest {
        f.save_json(dir.join("forest.json"))?;
    }
    write(&dir.join("config.json"), &exp.cfg.to_json()?)?;
    state.memory.export(dir.join("memory"), exp.data.shape())
}

/// Everything a `train` run leaves behind.
pub fn write_run_artifacts(exp: &Experiment, state: &RunState, result: &RunResult, out: impl AsRef<Path>) -> Result<()> {
    let out = out.as_ref();
    report_emit(result, out)?;
    export_embeddings(exp, state, out)?;
    write_loss_trace(&state.trace, out.join(LOSS_TRACE_FILE))?;
    save_checkpoints(exp, state, out.join(CHECKPOINT_DIR))
}
