//! On-disk formats for fitted models and fit traces.
//!
//! A model file is JSON with explicit dimensions and row-major arrays:
//!
//! ```json
//! {
//!   "format": "sector-factor-model",
//!   "version": 1,
//!   "layout": "sector",
//!   "n_stocks": 2,
//!   "n_factors": 12,
//!   "stock_ids": ["A", "B"],
//!   "factor_labels": ["FINANCE", "...", "MKT1"],
//!   "lambda": [/* n_stocks * n_factors values, row-major */],
//!   "psi": [/* n_stocks values */],
//!   "mask": [/* n_stocks * n_factors 0/1 flags, row-major */]
//! }
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::em::FitTrace;
use crate::error::{Error, Result};
use crate::model::{FactorModel, LoadingMask, MaskLayout};

pub const MODEL_FORMAT: &str = "sector-factor-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub layout: MaskLayout,
    pub n_stocks: usize,
    pub n_factors: usize,
    pub stock_ids: Vec<String>,
    pub factor_labels: Vec<String>,
    pub lambda: Vec<f64>,
    pub psi: Vec<f64>,
    pub mask: Vec<u8>,
}

impl From<&FactorModel> for ModelFile {
    fn from(model: &FactorModel) -> Self {
        let (n, m) = model.lambda().shape();
        let row_major = |get: &dyn Fn(usize, usize) -> f64| {
            (0..n).flat_map(|j| (0..m).map(move |k| (j, k))).map(|(j, k)| get(j, k)).collect::<Vec<_>>()
        };
        let lambda = row_major(&|j, k| model.lambda()[(j, k)]);
        let mask = (0..n)
            .flat_map(|j| (0..m).map(move |k| (j, k)))
            .map(|(j, k)| u8::from(model.mask().allows(j, k)))
            .collect();
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            layout: model.mask().layout(),
            n_stocks: n,
            n_factors: m,
            stock_ids: model.stock_ids().to_vec(),
            factor_labels: model.factor_labels().to_vec(),
            lambda,
            psi: model.psi().iter().copied().collect(),
            mask,
        }
    }
}

impl TryFrom<ModelFile> for FactorModel {
    type Error = Error;

    fn try_from(file: ModelFile) -> Result<Self> {
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Invariant(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        let (n, m) = (file.n_stocks, file.n_factors);
        if file.lambda.len() != n * m || file.mask.len() != n * m || file.psi.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "model file declares {n}x{m} but has {} loadings, {} mask flags, {} psi",
                file.lambda.len(),
                file.mask.len(),
                file.psi.len()
            )));
        }
        if let Some(bad) = file.mask.iter().find(|&&b| b > 1) {
            return Err(Error::Invariant(format!("mask flag {bad} is not 0 or 1")));
        }
        let lambda = DMatrix::from_row_slice(n, m, &file.lambda);
        let pattern = DMatrix::from_row_iterator(n, m, file.mask.iter().map(|&b| b == 1));
        let mask = LoadingMask::from_pattern(pattern, file.layout)?;
        FactorModel::with_labels(
            file.stock_ids,
            lambda,
            DVector::from_vec(file.psi),
            mask,
            file.factor_labels,
        )
    }
}

pub fn write_model<W: Write>(writer: W, model: &FactorModel) -> Result<()> {
    let mut w = BufWriter::new(writer);
    serde_json::to_writer_pretty(&mut w, &ModelFile::from(model))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(reader: R) -> Result<FactorModel> {
    let file: ModelFile = serde_json::from_reader(reader)?;
    file.try_into()
}

pub fn save_model(path: &Path, model: &FactorModel) -> Result<()> {
    write_model(File::create(path)?, model)
}

pub fn load_model(path: &Path) -> Result<FactorModel> {
    read_model(File::open(path)?).map_err(|e| match e {
        Error::Json(j) => Error::parse(path, j.to_string()),
        other => other,
    })
}

/// `iteration,expected_loglik,marginal_loglik`, one row per iteration.
pub fn write_trace<W: Write>(writer: W, trace: &FitTrace) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "expected_loglik", "marginal_loglik"])?;
    for (i, (q, l)) in trace
        .loglik_per_iter
        .iter()
        .zip(&trace.marginal_loglik_per_iter)
        .enumerate()
    {
        w.write_record([(i + 1).to_string(), q.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
