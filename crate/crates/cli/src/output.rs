//! CSV tables and the stored model. Numbers are written with 17
//! significant digits so that every table reads back bit-exactly.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use koopman_hjb::solver::IterationRecord;
use koopman_hjb::{BoxDomain, PolyField, SosValueModel, TensorSplineBasis};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_csv<I, R>(path: &Path, header: &[String], rows: I) -> std::io::Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()
}

/// Header cells `x1..xd` followed by `rest`.
pub fn coordinate_header(d: usize, rest: &[&str]) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).chain(rest.iter().map(|s| s.to_string())).collect()
}

/// Numeric table with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

pub fn read_table(path: &Path) -> Result<Table, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("{}: row {}: {e}", path.display(), line + 2))?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// trace.csv, flushed after every row so a failed run still leaves its history.
pub struct TraceWriter {
    file: File,
}

impl TraceWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let mut file = File::create(path)?;
        writeln!(file, "iteration,residual,change,abscissa,damping")?;
        file.flush()?;
        Ok(Self { file })
    }

    pub fn record(&mut self, r: &IterationRecord) -> std::io::Result<()> {
        writeln!(
            self.file,
            "{},{},{},{},{}",
            r.iteration,
            num(r.residual),
            num(r.change),
            num(r.abscissa),
            num(r.damping)
        )?;
        self.file.flush()
    }
}

/// model.json: the basis parameters together with `σ_i` and the spline
/// coefficients of each `p_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n_grid: usize,
    pub degree: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// One entry per mode, each of length `n_raw`.
    pub modes: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn from_model(model: &SosValueModel, n_grid: usize) -> Self {
        let basis = model.basis();
        Self {
            n_grid,
            degree: basis.degree(),
            lower: basis.domain().lower().to_vec(),
            upper: basis.domain().upper().to_vec(),
            sigmas: model.sigmas.clone(),
            modes: (0..model.n_modes())
                .map(|i| model.raw_coeffs.column(i).iter().copied().collect())
                .collect(),
        }
    }

    pub fn into_model(self, bfield: &PolyField) -> Result<SosValueModel, String> {
        let domain = BoxDomain::new(self.lower, self.upper).map_err(|e| e.to_string())?;
        let basis = TensorSplineBasis::uniform(domain, self.n_grid, self.degree).map_err(|e| e.to_string())?;
        let n_raw = basis.n_total();
        if self.modes.len() != self.sigmas.len() || self.modes.iter().any(|m| m.len() != n_raw) {
            return Err(format!("model has inconsistent mode data (expected {n_raw} coefficients per mode)"));
        }
        let flat: Vec<f64> = self.modes.concat();
        let raw = DMatrix::from_column_slice(n_raw, self.sigmas.len(), &flat);
        SosValueModel::from_raw_parts(basis, bfield.clone(), self.sigmas, raw).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string(self).expect("model serializes");
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

pub fn in_dir(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
