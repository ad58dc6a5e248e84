//! Per-output error rows and per-layer aggregates, with CSV/JSON output.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XbarError};
use crate::metrics::{output_range, relative_error, RelErrorStats};

pub const CSV_HEADER: &str = "layer,window,column,ideal,actual,rel_err";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub layer: String,
    pub window: usize,
    pub column: usize,
    pub ideal: f64,
    pub actual: f64,
    pub rel_err: f64,
}

impl ErrorRow {
    /// Rows for one layer's outputs laid out `window × cols`, normalized by
    /// the range of `ideal`.
    pub fn for_layer(layer: &str, actual: &[f64], ideal: &[f64], cols: usize) -> Result<Vec<ErrorRow>> {
        if actual.len() != ideal.len() || cols == 0 || ideal.len() % cols != 0 {
            return Err(XbarError::contract("error rows need equal-length outputs in whole windows"));
        }
        let range = output_range(ideal);
        actual
            .iter()
            .zip(ideal)
            .enumerate()
            .map(|(k, (&a, &i))| {
                Ok(ErrorRow {
                    layer: layer.to_string(),
                    window: k / cols,
                    column: k % cols,
                    ideal: i,
                    actual: a,
                    rel_err: relative_error(a, i, range)?,
                })
            })
            .collect()
    }
}

/// Aggregates for one tapped layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAggregate {
    pub layer: String,
    /// Against the exact product of the same (analog-produced) layer input.
    pub local: RelErrorStats,
    /// Against the fully digital network on the same image.
    pub end_to_end: RelErrorStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub image: usize,
    pub predicted: usize,
    pub software: usize,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Local-error rows.
    pub rows: Vec<ErrorRow>,
    pub layers: Vec<LayerAggregate>,
    pub classifications: Vec<Classification>,
}

impl ErrorReport {
    pub fn layer(&self, name: &str) -> Option<&LayerAggregate> {
        self.layers.iter().find(|l| l.layer == name)
    }

    /// Fraction of images whose analog class matches the digital one.
    pub fn agreement(&self) -> Option<f64> {
        if self.classifications.is_empty() {
            return None;
        }
        let same = self.classifications.iter().filter(|c| c.predicted == c.software).count();
        Some(same as f64 / self.classifications.len() as f64)
    }

    /// Fraction of labelled images classified correctly.
    pub fn accuracy(&self) -> Option<f64> {
        let labelled: Vec<_> = self.classifications.iter().filter_map(|c| c.label.map(|l| (c.predicted, l))).collect();
        if labelled.is_empty() {
            return None;
        }
        Some(labelled.iter().filter(|(p, l)| p == l).count() as f64 / labelled.len() as f64)
    }

    pub fn rows_for<'a>(&'a self, layer: &'a str) -> impl Iterator<Item = &'a ErrorRow> + 'a {
        self.rows.iter().filter(move |r| r.layer == layer)
    }

    pub fn to_csv(&self) -> String {
        csv_of(self.rows.iter())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            layers: &'a [LayerAggregate],
            classifications: &'a [Classification],
            agreement: Option<f64>,
            accuracy: Option<f64>,
        }
        let s = Summary {
            layers: &self.layers,
            classifications: &self.classifications,
            agreement: self.agreement(),
            accuracy: self.accuracy(),
        };
        let mut json = serde_json::to_string_pretty(&s)?;
        json.push('\n');
        write_file(path, json.as_bytes())
    }
}

pub fn csv_of<'a>(rows: impl Iterator<Item = &'a ErrorRow>) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.layer, r.window, r.column, r.ideal, r.actual, r.rel_err);
    }
    s
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}
