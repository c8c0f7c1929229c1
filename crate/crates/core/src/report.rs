//! Line-delimited result records and the comparison tables built from them.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HyperParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    /// One grid cell.
    Cell,
    /// The selected cell of a calibration, with its test score.
    Best,
    /// The selected cell of one cross-validation fold.
    Fold,
    /// Mean and standard deviation over folds.
    Cv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    F1,
    Mse,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::F1 => "F1",
            Metric::Mse => "MSE",
        }
    }
}

/// Run-dependent values kept apart so the rest of a record is reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: RecordKind,
    pub algorithm: String,
    pub dataset: String,
    pub metric: Metric,
    pub params: Option<HyperParams>,
    pub val_score: Option<f64>,
    pub test_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fold: Option<usize>,
    pub timeout: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub meta: RecordMeta,
}

impl RunRecord {
    pub fn new(kind: RecordKind, algorithm: &str, dataset: &str, metric: Metric) -> Self {
        RunRecord {
            kind,
            algorithm: algorithm.to_string(),
            dataset: dataset.to_string(),
            metric,
            params: None,
            val_score: None,
            test_score: None,
            std: None,
            fold: None,
            timeout: false,
            error: None,
            meta: RecordMeta::default(),
        }
    }

    /// The record with run-dependent metadata cleared.
    pub fn without_meta(&self) -> Self {
        RunRecord {
            meta: RecordMeta::default(),
            ..self.clone()
        }
    }
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[RunRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    let path = path.as_ref();
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

/// All records of every `*.jsonl` file under `dir` (recursively, in path
/// order).
pub fn read_dir(dir: impl AsRef<Path>) -> Result<Vec<RunRecord>> {
    fn walk(dir: &Path, files: &mut Vec<std::path::PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let p = entry?.path();
            if p.is_dir() {
                walk(&p, files)?;
            } else if p.extension().is_some_and(|e| e == "jsonl") {
                files.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir.as_ref(), &mut files)?;
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_jsonl(f)?);
    }
    Ok(out)
}

const HEADER: [&str; 11] = [
    "dataset",
    "algorithm",
    "C",
    "gamma_K",
    "gamma_S",
    "nK",
    "nS",
    "val",
    "test",
    "std",
    "time_s",
];

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn fmt_score(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

fn rows(records: &[RunRecord], metric: Metric) -> Vec<[String; 11]> {
    let mut sel: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.metric == metric && matches!(r.kind, RecordKind::Best | RecordKind::Cv))
        .collect();
    sel.sort_by(|a, b| {
        (&a.dataset, &a.algorithm, a.kind == RecordKind::Cv).cmp(&(
            &b.dataset,
            &b.algorithm,
            b.kind == RecordKind::Cv,
        ))
    });
    sel.into_iter()
        .map(|r| {
            let p = r.params.unwrap_or_default();
            [
                r.dataset.clone(),
                r.algorithm.clone(),
                fmt_opt(p.c),
                fmt_opt(p.gamma_k),
                fmt_opt(p.gamma_s),
                fmt_opt(p.n_k),
                fmt_opt(p.n_s),
                fmt_score(r.val_score),
                fmt_score(r.test_score),
                fmt_score(r.std),
                format!("{:.3}", r.meta.wall_ms as f64 / 1000.0),
            ]
        })
        .collect()
}

/// Metrics that have at least one reportable record.
pub fn metrics_present(records: &[RunRecord]) -> Vec<Metric> {
    let mut m: Vec<Metric> = records
        .iter()
        .filter(|r| matches!(r.kind, RecordKind::Best | RecordKind::Cv))
        .map(|r| r.metric)
        .collect();
    m.sort();
    m.dedup();
    m
}

/// Aligned text tables, one per metric, rows ordered by (dataset, algorithm).
pub fn render_text(records: &[RunRecord]) -> String {
    let mut out = String::new();
    for metric in metrics_present(records) {
        let body = rows(records, metric);
        let mut widths = HEADER.map(str::len);
        for r in &body {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        out.push_str(&format!("{} results\n", metric.label()));
        out.push_str(&line(&HEADER.map(String::from)));
        out.push('\n');
        out.push_str(&line(&widths.map(|w| "-".repeat(w))));
        out.push('\n');
        for r in &body {
            out.push_str(&line(r));
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// CSV table for one metric.
pub fn render_csv(records: &[RunRecord], metric: Metric) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in rows(records, metric) {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(ds: &str, algo: &str, metric: Metric, test: f64) -> RunRecord {
        let mut r = RunRecord::new(RecordKind::Best, algo, ds, metric);
        r.params = Some(HyperParams {
            c: Some(1.0),
            ..Default::default()
        });
        r.val_score = Some(0.5);
        r.test_score = Some(test);
        r
    }

    #[test]
    fn one_record_one_row() {
        let text = render_text(&[rec("a", "rts", Metric::F1, 0.9)]);
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("0.900000"));
        let csv = render_csv(&[rec("a", "rts", Metric::F1, 0.9)], Metric::F1).unwrap();
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn metrics_are_split_and_rows_sorted() {
        let recs = vec![
            rec("b", "s", Metric::F1, 0.1),
            rec("year", "gql-nn", Metric::Mse, 100.0),
            rec("a", "smos", Metric::F1, 0.2),
            rec("a", "rts", Metric::F1, 0.3),
        ];
        let text = render_text(&recs);
        assert!(text.contains("F1 results") && text.contains("MSE results"));
        let csv = render_csv(&recs, Metric::F1).unwrap();
        let order: Vec<&str> = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap())
            .collect();
        assert_eq!(order, vec!["rts", "smos", "s"]);
        assert_eq!(render_csv(&recs, Metric::Mse).unwrap().lines().count(), 2);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        let recs = vec![
            rec("a", "rts", Metric::F1, 0.3),
            rec("b", "s", Metric::F1, 1.0 / 3.0),
        ];
        write_jsonl(&p, &recs).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), recs);
        assert_eq!(read_dir(dir.path()).unwrap(), recs);
    }
}
