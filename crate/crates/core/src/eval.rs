//! Evaluation harness: runs query sets through each mode and reports bias
//! rate, retry rate and relevance / bias-confidence / latency statistics.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{parse_jsonl, read_corpus, CorpusRecord};
use crate::orchestrator::Engine;
use crate::state::{BiasLabel, Mode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub corpus: Vec<CorpusRecord>,
    pub queries: Vec<QueryRecord>,
}

pub fn read_queries(path: &Path) -> Result<Vec<QueryRecord>> {
    let queries: Vec<QueryRecord> = parse_jsonl(fs::File::open(path)?)?;
    if queries.is_empty() {
        log::warn!("query file {} contains no queries", path.display());
    }
    Ok(queries)
}

pub fn load_dataset(corpus_path: &Path, queries_path: &Path) -> Result<Dataset> {
    let corpus = read_corpus(corpus_path)?;
    let queries = read_queries(queries_path)?;
    log::info!("loaded {} documents and {} queries", corpus.len(), queries.len());
    Ok(Dataset { corpus, queries })
}

/// Percentage reduction of `treated` relative to `baseline`.
pub fn relative_reduction(baseline_rate: f64, treated_rate: f64) -> Result<f64> {
    if baseline_rate == 0.0 {
        return Err(Error::UndefinedReduction);
    }
    Ok(100.0 * (baseline_rate - treated_rate) / baseline_rate)
}

/// Min / max / mean / population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    /// Single pass (Welford). `None` for an empty input.
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut n = 0u64;
        let (mut mean, mut m2) = (0.0f64, 0.0f64);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for x in values {
            n += 1;
            let delta = x - mean;
            mean += delta / n as f64;
            m2 += delta * (x - mean);
            min = min.min(x);
            max = max.max(x);
        }
        (n > 0).then(|| Stats {
            min,
            max,
            // rounding can leave the running mean a hair outside [min, max]
            mean: mean.clamp(min, max),
            std: (m2 / n as f64).max(0.0).sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub mode: Mode,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_label: Option<BiasLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_label: Option<BiasLabel>,
    pub retries_used: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_secs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One report row: a (mode, backend) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: Mode,
    pub backend: String,
    pub n_queries: usize,
    pub n_failed: usize,
    /// Fraction of successful runs whose selected source was labeled biased
    /// by the pipeline's detector.
    pub bias_rate: Option<f64>,
    /// Same, judged against dataset gold labels where available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_bias_rate: Option<f64>,
    /// Fraction of successful runs that needed at least one retry.
    pub retry_rate: Option<f64>,
    pub relevance: Option<Stats>,
    pub bias_confidence: Option<Stats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<Stats>,
}

fn fraction(hits: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| hits as f64 / n as f64)
}

impl ModeReport {
    pub fn from_results(mode: Mode, backend: &str, results: &[QueryResult]) -> Self {
        let ok: Vec<&QueryResult> = results.iter().filter(|r| r.ok).collect();
        let biased = ok.iter().filter(|r| r.bias_label == Some(BiasLabel::Biased)).count();
        let retried = ok.iter().filter(|r| r.retries_used >= 1).count();
        let gold: Vec<BiasLabel> = ok.iter().filter_map(|r| r.gold_label).collect();
        let gold_biased = gold.iter().filter(|l| l.is_biased()).count();
        Self {
            mode,
            backend: backend.to_string(),
            n_queries: results.len(),
            n_failed: results.len() - ok.len(),
            bias_rate: fraction(biased, ok.len()),
            gold_bias_rate: fraction(gold_biased, gold.len()),
            retry_rate: fraction(retried, ok.len()),
            relevance: Stats::from_values(ok.iter().filter_map(|r| r.relevance)),
            bias_confidence: Stats::from_values(ok.iter().filter_map(|r| r.bias_confidence)),
            latency: Stats::from_values(ok.iter().filter_map(|r| r.latency_secs)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub mode: Mode,
    /// Percent reduction of the bias rate against no-selection.
    pub bias_rate_reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ModeReport>,
    pub reductions: Vec<Reduction>,
    pub queries: Vec<QueryResult>,
}

impl EvalReport {
    pub fn row(&self, mode: Mode) -> Option<&ModeReport> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Copy with all latency figures removed; the rest of a report over the
    /// deterministic stack is reproducible bit for bit.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        for row in &mut out.rows {
            row.latency = None;
        }
        for q in &mut out.queries {
            q.latency_secs = None;
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table with one row per (backend, mode).
    pub fn to_table(&self) -> String {
        fn stat_cols(s: &Option<Stats>, prec: usize) -> [String; 3] {
            match s {
                Some(s) => [
                    format!("{:.prec$}", s.min),
                    format!("{:.prec$}", s.max),
                    format!("{:.prec$} ± {:.prec$}", s.mean, s.std),
                ],
                None => ["-".into(), "-".into(), "-".into()],
            }
        }
        fn pct(x: Option<f64>) -> String {
            x.map_or("-".into(), |v| format!("{:.2}%", v * 100.0))
        }
        let header = [
            "Backend", "Mode", "Rel Min", "Rel Max", "Rel Mean ± Std", "Bias Min", "Bias Max",
            "Bias Mean ± Std", "Lat Min", "Lat Max", "Lat Mean ± Std", "Bias Rate", "Gold Bias Rate",
            "Retry Rate", "N", "Failed",
        ]
        .map(String::from)
        .to_vec();
        let mut rows = vec![header];
        for r in &self.rows {
            let mut row = vec![r.backend.clone(), r.mode.label().to_string()];
            row.extend(stat_cols(&r.relevance, 3));
            row.extend(stat_cols(&r.bias_confidence, 3));
            row.extend(stat_cols(&r.latency, 2));
            row.push(pct(r.bias_rate));
            row.push(pct(r.gold_bias_rate));
            row.push(pct(r.retry_rate));
            row.push(r.n_queries.to_string());
            row.push(r.n_failed.to_string());
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}", w = *w))
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        for red in &self.reductions {
            let _ = writeln!(
                out,
                "{} bias-rate reduction vs {}: {:.2}%",
                red.mode.label(),
                Mode::NoSourceSelection.label(),
                red.bias_rate_reduction_pct
            );
        }
        out
    }

    fn per_query_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "query_id", "mode", "ok", "selected_id", "relevance", "bias_label", "bias_confidence",
            "gold_label", "retries_used", "latency_secs", "error",
        ])
        .map_err(csv_err)?;
        let opt = |x: Option<String>| x.unwrap_or_default();
        for q in &self.queries {
            w.write_record([
                q.query_id.clone(),
                q.mode.to_string(),
                q.ok.to_string(),
                opt(q.selected_id.clone()),
                opt(q.relevance.map(|v| v.to_string())),
                opt(q.bias_label.map(|v| v.as_u8().to_string())),
                opt(q.bias_confidence.map(|v| v.to_string())),
                opt(q.gold_label.map(|v| v.as_u8().to_string())),
                q.retries_used.to_string(),
                opt(q.latency_secs.map(|v| v.to_string())),
                opt(q.error.clone()),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }

    fn rate_csv(&self, column: &str, rate: impl Fn(&ModeReport) -> Option<f64>) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["backend", "mode", column]).map_err(csv_err)?;
        for r in &self.rows {
            let v = rate(r).map_or(String::new(), |v| format!("{:.4}", v * 100.0));
            w.write_record([r.backend.as_str(), r.mode.as_str(), v.as_str()])
                .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes `report.json`, `report.txt`, `per_query.csv`, and the bar-chart
    /// data files `bias_rate.csv` and `retry_rate.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let files: Vec<(&str, Vec<u8>)> = vec![
            ("report.json", self.to_json().into_bytes()),
            ("report.txt", self.to_table().into_bytes()),
            ("per_query.csv", self.per_query_csv()?),
            ("bias_rate.csv", self.rate_csv("bias_rate_pct", |r| r.bias_rate)?),
            ("retry_rate.csv", self.rate_csv("retry_rate_pct", |r| r.retry_rate)?),
        ];
        let mut written = Vec::new();
        for (name, bytes) in files {
            let path = dir.join(name);
            fs::write(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn run_one(engine: &Engine, mode: Mode, q: &QueryRecord) -> QueryResult {
    match engine.run(&q.query, mode) {
        Ok(out) => QueryResult {
            query_id: q.id.clone(),
            mode,
            ok: true,
            gold_label: engine.index().get(&out.selected.id).and_then(|e| e.gold_label),
            selected_id: Some(out.selected.id.clone()),
            relevance: Some(out.selected.relevance),
            bias_label: out.selected.bias_label(),
            bias_confidence: out.selected.bias_confidence(),
            retries_used: out.retries_used,
            latency_secs: Some(out.wall_time_secs),
            error: None,
        },
        Err(fail) => QueryResult {
            query_id: q.id.clone(),
            mode,
            ok: false,
            selected_id: None,
            relevance: None,
            bias_label: None,
            bias_confidence: None,
            gold_label: None,
            retries_used: fail.retries_used,
            latency_secs: Some(fail.wall_time_secs),
            error: Some(fail.error.to_string()),
        },
    }
}

/// Runs every query under every mode on a pool of `workers` threads.
/// Results keep query order within each mode.
pub fn evaluate(
    engine: &Engine,
    modes: &[Mode],
    queries: &[QueryRecord],
    backend: &str,
    workers: usize,
) -> Result<EvalReport> {
    if queries.is_empty() {
        return Err(Error::InvalidConfig("evaluation needs at least one query".into()));
    }
    if modes.is_empty() {
        return Err(Error::InvalidConfig("evaluation needs at least one mode".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    let mut rows = Vec::with_capacity(modes.len());
    let mut all = Vec::with_capacity(modes.len() * queries.len());
    for &mode in modes {
        let results: Vec<QueryResult> =
            pool.install(|| queries.par_iter().map(|q| run_one(engine, mode, q)).collect());
        rows.push(ModeReport::from_results(mode, backend, &results));
        all.extend(results);
    }
    let baseline = rows
        .iter()
        .find(|r| r.mode == Mode::NoSourceSelection)
        .and_then(|r| r.bias_rate);
    let reductions = match baseline {
        Some(b) if b > 0.0 => rows
            .iter()
            .filter(|r| r.mode.selects_source())
            .filter_map(|r| {
                let pct = relative_reduction(b, r.bias_rate?).ok()?;
                Some(Reduction {
                    mode: r.mode,
                    bias_rate_reduction_pct: pct,
                })
            })
            .collect(),
        _ => Vec::new(),
    };
    Ok(EvalReport {
        rows,
        reductions,
        queries: all,
    })
}
