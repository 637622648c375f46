//! Comparison tables: one row per configuration document, one column per
//! method, with the best cell of each row marked.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ConfigDocument, ExperimentSpec, Method};
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, MetricsReport};

/// A row to run: a label and one resolved spec per method.
#[derive(Debug, Clone)]
pub struct TableEntry {
    pub label: String,
    pub specs: Vec<ExperimentSpec>,
}

impl TableEntry {
    pub fn from_document(label: impl Into<String>, doc: &ConfigDocument) -> Result<Self> {
        let methods = doc.methods();
        if methods.is_empty() {
            return Err(HarnessError::Config("config has no method blocks".into()));
        }
        let specs = methods.into_iter().map(|m| doc.resolve(m)).collect::<Result<_>>()?;
        Ok(Self { label: doc.name.clone().unwrap_or_else(|| label.into()), specs })
    }
}

#[derive(Debug, Clone)]
pub enum Cell {
    Done(Box<MetricsReport>),
    Failed(String),
}

impl Cell {
    pub fn snr_db(&self) -> Option<f64> {
        match self {
            Cell::Done(r) => Some(r.snr_db),
            Cell::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TableRow {
    pub label: String,
    pub cells: Vec<(Method, Cell)>,
}

impl TableRow {
    pub fn cell(&self, method: Method) -> Option<&Cell> {
        self.cells.iter().find(|(m, _)| *m == method).map(|(_, c)| c)
    }

    /// Method with the highest SNR; the first one wins ties.
    pub fn best(&self) -> Option<Method> {
        let mut best: Option<(Method, f64)> = None;
        for (m, cell) in &self.cells {
            if let Some(snr) = cell.snr_db() {
                if best.is_none_or(|(_, b)| snr > b) {
                    best = Some((*m, snr));
                }
            }
        }
        best.map(|(m, _)| m)
    }
}

#[derive(Debug, Clone)]
pub struct TableReport {
    /// Column order: every method that appears in some row, canonical order.
    pub methods: Vec<Method>,
    pub rows: Vec<TableRow>,
}

impl TableReport {
    pub fn has_failures(&self) -> bool {
        self.rows.iter().flat_map(|r| &r.cells).any(|(_, c)| matches!(c, Cell::Failed(_)))
    }

    /// `experiment,<method>...` with SNR in dB; failed cells read `FAILED`,
    /// methods absent from a row are empty.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["experiment".to_string()];
        header.extend(self.methods.iter().map(|m| m.name().to_string()));
        w.write_record(&header).expect("in-memory write");
        for row in &self.rows {
            let mut record = vec![row.label.clone()];
            for &m in &self.methods {
                record.push(match row.cell(m) {
                    Some(Cell::Done(r)) => format!("{:.4}", r.snr_db),
                    Some(Cell::Failed(_)) => "FAILED".into(),
                    None => String::new(),
                });
            }
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    /// Fixed-width table in dB; the best entry of each row is wrapped in `*`.
    pub fn render(&self) -> String {
        let label_width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max("experiment".len());
        let col_width = self.methods.iter().map(|m| m.name().len()).max().unwrap_or(0).max(10);
        let mut out = String::new();
        let _ = write!(out, "{:<label_width$}", "experiment");
        for m in &self.methods {
            let _ = write!(out, "  {:>col_width$}", m.name());
        }
        out.push('\n');
        for row in &self.rows {
            let best = row.best();
            let _ = write!(out, "{:<label_width$}", row.label);
            for &m in &self.methods {
                let text = match row.cell(m) {
                    Some(Cell::Done(r)) if Some(m) == best => format!("*{:.2}*", r.snr_db),
                    Some(Cell::Done(r)) => format!("{:.2}", r.snr_db),
                    Some(Cell::Failed(_)) => "FAILED".into(),
                    None => "-".into(),
                };
                let _ = write!(out, "  {text:>col_width$}");
            }
            out.push('\n');
        }
        for row in &self.rows {
            for (m, cell) in &row.cells {
                if let Cell::Failed(msg) = cell {
                    let _ = writeln!(out, "{} / {m}: {msg}", row.label);
                }
            }
        }
        out
    }
}

/// Runs every cell; cells are independent and may run concurrently, the
/// report keeps input order.
pub fn run_table(entries: &[TableEntry]) -> TableReport {
    let jobs: Vec<(usize, &ExperimentSpec)> =
        entries.iter().enumerate().flat_map(|(i, e)| e.specs.iter().map(move |s| (i, s))).collect();
    let results: Vec<(usize, Method, Cell)> = jobs
        .par_iter()
        .map(|&(i, spec)| {
            let cell = match run_experiment(spec) {
                Ok(exp) => Cell::Done(Box::new(exp.report)),
                Err(e) => Cell::Failed(e.to_string()),
            };
            (i, spec.method, cell)
        })
        .collect();
    let mut rows: Vec<TableRow> =
        entries.iter().map(|e| TableRow { label: e.label.clone(), cells: Vec::new() }).collect();
    for (i, method, cell) in results {
        rows[i].cells.push((method, cell));
    }
    let mut methods: Vec<Method> = rows.iter().flat_map(|r| r.cells.iter().map(|(m, _)| *m)).collect();
    methods.sort();
    methods.dedup();
    TableReport { methods, rows }
}

/// Every `*.json` file of a directory, sorted by name, labelled by file stem.
pub fn load_table_dir(dir: impl AsRef<Path>) -> Result<Vec<TableEntry>> {
    let dir = dir.as_ref();
    let read = std::fs::read_dir(dir).map_err(|source| HarnessError::ConfigIo { path: dir.to_path_buf(), source })?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in read {
        let entry = entry.map_err(|source| HarnessError::ConfigIo { path: dir.to_path_buf(), source })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(HarnessError::Config(format!("no .json configs in {}", dir.display())));
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let doc = ConfigDocument::load(p)?;
            TableEntry::from_document(stem, &doc)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn done(method: Method, snr: f64) -> (Method, Cell) {
        let mut report = crate::experiment::tests_support::blank_report();
        report.method = method;
        report.snr_db = snr;
        (method, Cell::Done(Box::new(report)))
    }

    #[test]
    fn best_cell_is_highlighted() {
        let table = TableReport {
            methods: vec![Method::Tv, Method::NormalCs],
            rows: vec![
                TableRow { label: "a".into(), cells: vec![done(Method::Tv, 7.5), done(Method::NormalCs, 9.25)] },
                TableRow {
                    label: "b".into(),
                    cells: vec![done(Method::Tv, 3.0), (Method::NormalCs, Cell::Failed("boom".into()))],
                },
            ],
        };
        assert_eq!(table.rows[0].best(), Some(Method::NormalCs));
        assert_eq!(table.rows[1].best(), Some(Method::Tv));
        assert!(table.has_failures());
        let text = table.render();
        assert!(text.contains("*9.25*"));
        assert!(text.contains("*3.00*"));
        assert!(text.contains("FAILED"));
        assert!(text.contains("b / normal_cs: boom"));
        let csv = table.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "experiment,tv,normal_cs");
        assert_eq!(csv.lines().nth(1).unwrap(), "a,7.5000,9.2500");
        assert_eq!(csv.lines().nth(2).unwrap(), "b,3.0000,FAILED");
    }
}
