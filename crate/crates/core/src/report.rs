//! File exports: explanation reports (JSON, CSV), grayscale heatmaps (PGM),
//! and distance matrices (CSV).

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contribution::{Closeness, ContributionReport};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub index: usize,
    pub name: String,
    pub contribution: f64,
    pub closeness: Closeness,
    pub changed_trees: usize,
}

/// The JSON form of a [`ContributionReport`].
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ReportDocument {
    pub model_id: String,
    pub instance_id: String,
    pub predicted_class: usize,
    pub target_class: usize,
    pub votes: Vec<u32>,
    pub features: Vec<FeatureRecord>,
}

impl From<&ContributionReport> for ReportDocument {
    fn from(r: &ContributionReport) -> Self {
        ReportDocument {
            model_id: r.model_id.clone(),
            instance_id: r.instance_id.clone(),
            predicted_class: r.predicted_class,
            target_class: r.target_class,
            votes: r.votes.clone(),
            features: r
                .features
                .iter()
                .map(|f| FeatureRecord {
                    index: f.feature_index,
                    name: f.name.clone(),
                    contribution: f.contribution,
                    closeness: f.closeness,
                    changed_trees: f.changed_tree_count,
                })
                .collect(),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn report_json(report: &ContributionReport) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(&ReportDocument::from(report)).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

pub fn export_report_json(report: &ContributionReport, path: &Path) -> Result<()> {
    write_file(path, &report_json(report))
}

/// Fixed six-decimal formatting; values that round to zero print unsigned.
pub fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

pub const REPORT_CSV_COLUMNS: [&str; 7] = [
    "feature_index",
    "name",
    "contribution",
    "in_before",
    "out_before",
    "in_after",
    "out_after",
];

pub fn report_csv(report: &ContributionReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_CSV_COLUMNS)?;
    for f in &report.features {
        let c = &f.closeness;
        w.write_record([
            f.feature_index.to_string(),
            f.name.clone(),
            fixed6(f.contribution),
            fixed6(c.in_before),
            fixed6(c.out_before),
            fixed6(c.in_after),
            fixed6(c.out_after),
        ])?;
    }
    w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn export_report_csv(report: &ContributionReport, path: &Path) -> Result<()> {
    write_file(path, &report_csv(report)?)
}

/// Grid dimensions for rendering a per-feature map as an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(format!("grid {rows}x{cols} has an empty side")));
        }
        Ok(GridShape { rows, cols })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

/// Parses `RxC`, e.g. `28x28`.
impl FromStr for GridShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("grid {s:?} is not of the form RxC"));
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        GridShape::new(
            r.trim().parse().map_err(|_| bad())?,
            c.trim().parse().map_err(|_| bad())?,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeatmapScale {
    /// 0 → 128, +max|v| → 255, −max|v| → 0.
    #[default]
    Symmetric,
    /// min → 0, max → 255.
    MinMax,
}

impl FromStr for HeatmapScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(HeatmapScale::Symmetric),
            "minmax" => Ok(HeatmapScale::MinMax),
            other => Err(Error::InvalidInput(format!("unknown heatmap scale {other:?}"))),
        }
    }
}

/// 8-bit intensities for `values` under `scale`.
pub fn heatmap_pixels(values: &[f64], scale: HeatmapScale) -> Vec<u8> {
    match scale {
        HeatmapScale::Symmetric => {
            let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            values
                .iter()
                .map(|&v| {
                    if max == 0.0 || v == 0.0 {
                        128
                    } else if v > 0.0 {
                        128 + (127.0 * v / max).round() as u8
                    } else {
                        128 - (128.0 * -v / max).round() as u8
                    }
                })
                .collect()
        }
        HeatmapScale::MinMax => {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = max - min;
            values
                .iter()
                .map(|&v| {
                    if span > 0.0 {
                        (255.0 * (v - min) / span).round() as u8
                    } else {
                        128
                    }
                })
                .collect()
        }
    }
}

/// Binary PGM (P5, maxval 255) bytes.
pub fn heatmap_pgm(values: &[f64], shape: GridShape, scale: HeatmapScale) -> Result<Vec<u8>> {
    if values.len() != shape.cells() {
        return Err(Error::DimensionMismatch {
            what: "heatmap value count",
            expected: shape.cells(),
            actual: values.len(),
        });
    }
    let mut out = format!("P5\n{} {}\n255\n", shape.cols, shape.rows).into_bytes();
    out.extend(heatmap_pixels(values, scale));
    Ok(out)
}

pub fn export_heatmap_pgm(values: &[f64], shape: GridShape, scale: HeatmapScale, path: &Path) -> Result<()> {
    write_file(path, &heatmap_pgm(values, shape, scale)?)
}

/// Square distance matrix as CSV: a header of column indices, then one row
/// per instance, six decimals.
pub fn distance_matrix_csv(matrix: &[Vec<f64>]) -> Vec<u8> {
    let mut out = Vec::new();
    let header: Vec<String> = (0..matrix.len()).map(|i| i.to_string()).collect();
    writeln!(out, "{}", header.join(",")).unwrap();
    for row in matrix {
        let cells: Vec<String> = row.iter().map(|&v| fixed6(v)).collect();
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    out
}

pub fn export_distance_matrix_csv(matrix: &[Vec<f64>], path: &Path) -> Result<()> {
    write_file(path, &distance_matrix_csv(matrix))
}
