//! `results.tsv`: one row per (method, test show) plus one `MACRO` row per
//! method. Columns: show_id, method, precision, recall, f1.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::ScoreTable;

pub const HEADER: [&str; 5] = ["show_id", "method", "precision", "recall", "f1"];
pub const MACRO_ID: &str = "MACRO";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub show_id: String,
    pub method: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Checks the table shape: every method covers the same shows once, with
/// exactly one macro row whose values are the per-show means.
pub fn validate_rows(rows: &[ResultRow]) -> Result<()> {
    let mut by_method: BTreeMap<&str, (Vec<&str>, Vec<&ResultRow>)> = BTreeMap::new();
    for r in rows {
        for (name, v) in [("precision", r.precision), ("recall", r.recall), ("f1", r.f1)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::malformed(format!("{} / {}: {name} {v} outside [0, 1]", r.method, r.show_id)));
            }
        }
        if r.show_id.is_empty() || r.method.is_empty() || r.show_id.contains('\t') || r.method.contains('\t') {
            return Err(Error::malformed("empty or tab-containing identifier"));
        }
        let e = by_method.entry(r.method.as_str()).or_default();
        if r.show_id == MACRO_ID {
            e.1.push(r);
        } else {
            e.0.push(r.show_id.as_str());
        }
    }
    if by_method.is_empty() {
        return Err(Error::Empty("results table has no rows".into()));
    }
    let mut shows: Option<Vec<&str>> = None;
    for (method, (ids, macros)) in &by_method {
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::malformed(format!("{method}: repeated show id")));
        }
        if sorted.is_empty() {
            return Err(Error::malformed(format!("{method}: no per-show rows")));
        }
        match &shows {
            None => shows = Some(sorted),
            Some(s) if *s != sorted => {
                return Err(Error::malformed(format!("{method} covers different shows")));
            }
            Some(_) => {}
        }
        if macros.len() != 1 {
            return Err(Error::malformed(format!("{method}: {} macro rows", macros.len())));
        }
        let per: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.method == *method && r.show_id != MACRO_ID)
            .collect();
        let mean = |f: fn(&ResultRow) -> f64| per.iter().map(|r| f(r)).sum::<f64>() / per.len() as f64;
        let m = macros[0];
        for (name, want, got) in [
            ("precision", mean(|r| r.precision), m.precision),
            ("recall", mean(|r| r.recall), m.recall),
            ("f1", mean(|r| r.f1), m.f1),
        ] {
            if (want - got).abs() > 1e-9 {
                return Err(Error::malformed(format!("{method}: macro {name} {got} != mean {want}")));
            }
        }
    }
    Ok(())
}

pub fn format_results(rows: &[ResultRow]) -> Result<String> {
    validate_rows(rows)?;
    let mut out = HEADER.join("\t");
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.show_id, r.method, r.precision, r.recall, r.f1
        ));
    }
    Ok(out)
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let text = format_results(rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_results(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
    if header != HEADER {
        return Err(Error::malformed(format!("results header {header:?}, expected {HEADER:?}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != HEADER.len() {
            return Err(Error::malformed(format!("results line {}: {} columns", n + 2, f.len())));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::malformed(format!("results line {}: bad number `{s}`", n + 2)))
        };
        rows.push(ResultRow {
            show_id: f[0].to_string(),
            method: f[1].to_string(),
            precision: num(f[2])?,
            recall: num(f[3])?,
            f1: num(f[4])?,
        });
    }
    validate_rows(&rows)?;
    Ok(rows)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text)
}

/// Methods in first-appearance order.
pub fn methods_of(rows: &[ResultRow]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows {
        if !out.contains(&r.method) {
            out.push(r.method.clone());
        }
    }
    out
}

/// Per-show F1 scores as a blocks-by-methods table, blocks in the first
/// method's row order.
pub fn score_table(rows: &[ResultRow]) -> Result<ScoreTable> {
    validate_rows(rows)?;
    let methods = methods_of(rows);
    let blocks: Vec<String> = rows
        .iter()
        .filter(|r| r.method == methods[0] && r.show_id != MACRO_ID)
        .map(|r| r.show_id.clone())
        .collect();
    let lookup: BTreeMap<(&str, &str), f64> = rows
        .iter()
        .map(|r| ((r.method.as_str(), r.show_id.as_str()), r.f1))
        .collect();
    let scores = blocks
        .iter()
        .map(|b| methods.iter().map(|m| lookup[&(m.as_str(), b.as_str())]).collect())
        .collect();
    ScoreTable::new(methods, blocks, scores)
}

/// Adds the macro row for `method` after its per-show rows.
pub fn with_macro(method: &str, per_show: Vec<ResultRow>) -> Vec<ResultRow> {
    let n = per_show.len() as f64;
    let mean = |f: fn(&ResultRow) -> f64| per_show.iter().map(f).sum::<f64>() / n;
    let m = ResultRow {
        show_id: MACRO_ID.into(),
        method: method.into(),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
    };
    let mut rows = per_show;
    rows.push(m);
    rows
}
