//! Subject-by-region feature tables and their edge-level outer products.

use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::edges::{edge_count, NodeCount};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_csv_table, write_atomic};
use crate::likelihood::EdgeData;

/// `S x V` table of region measures with one named column per region.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    names: Vec<String>,
    values: DMatrix<f64>,
}

impl FeatureTable {
    pub fn new(names: Vec<String>, values: DMatrix<f64>) -> Result<Self> {
        if names.len() != values.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        if let Some(x) = values.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!("feature values must be finite, found {x}")));
        }
        Ok(Self { names, values })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn subjects(&self) -> usize {
        self.values.nrows()
    }

    pub fn regions(&self) -> usize {
        self.values.ncols()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.names.join(",");
        out.push('\n');
        for row in self.values.row_iter() {
            let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    /// Sample correlation matrix of the columns (`V x V`).
    pub fn correlation(&self) -> Result<DMatrix<f64>> {
        let z = standardize(self)?;
        let s = z.subjects() as f64;
        let mut c = z.values.transpose() * &z.values / (s - 1.0);
        for i in 0..c.nrows() {
            c[(i, i)] = 1.0;
        }
        Ok(c)
    }
}

/// Result of reading a feature table from disk.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub table: FeatureTable,
    /// Rows dropped because at least one cell was missing.
    pub dropped_rows: usize,
}

/// Reads a CSV feature table. Rows with an empty, `NA` or `NaN` cell are
/// dropped and counted.
pub fn read_feature_table(path: &Path) -> Result<Ingested> {
    let raw = read_csv_table(path)?;
    let v = raw.header.len();
    let mut kept = Vec::new();
    let mut dropped_rows = 0;
    for row in &raw.rows {
        match row.iter().copied().collect::<Option<Vec<f64>>>() {
            Some(cells) => kept.extend(cells),
            None => dropped_rows += 1,
        }
    }
    let s = kept.len() / v.max(1);
    if s < 2 {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            message: format!("{s} complete rows after dropping {dropped_rows} incomplete ones; need at least 2"),
        });
    }
    let table = FeatureTable::new(raw.header, DMatrix::from_row_slice(s, v, &kept))?;
    Ok(Ingested { table, dropped_rows })
}

/// Centers every column and scales it to unit sample standard deviation.
pub fn standardize(ft: &FeatureTable) -> Result<FeatureTable> {
    let s = ft.subjects();
    if s < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 subjects to standardize, got {s}")));
    }
    let mut out = ft.values.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let magnitude = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mean = col.iter().sum::<f64>() / s as f64;
        col.iter_mut().for_each(|x| *x -= mean);
        // A second centering pass removes the rounding left by the first.
        let resid = col.iter().sum::<f64>() / s as f64;
        col.iter_mut().for_each(|x| *x -= resid);
        let sd = (col.iter().map(|x| x * x).sum::<f64>() / (s - 1) as f64).sqrt();
        if !(sd > 1e-12 * magnitude) {
            return Err(Error::ConstantColumn(ft.names[j].clone()));
        }
        col.iter_mut().for_each(|x| *x /= sd);
    }
    FeatureTable::new(ft.names.clone(), out)
}

/// Upper-triangle outer products: row `s` holds `x_i * x_j` for `i < j` in
/// edge-index order.
pub fn edge_features(ft: &FeatureTable) -> Result<EdgeData> {
    let v = ft.regions();
    NodeCount::new(v)?;
    let e = edge_count(v)?;
    let s = ft.subjects();
    let mut r = DMatrix::zeros(s, e);
    for row in 0..s {
        let mut idx = 0;
        for i in 0..v {
            let xi = ft.values[(row, i)];
            for j in i + 1..v {
                r[(row, idx)] = xi * ft.values[(row, j)];
                idx += 1;
            }
        }
    }
    EdgeData::new(r)
}

/// Parameters of the planted-block synthetic feature generator.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedBlocks {
    pub names: Vec<String>,
    /// Block id of each column.
    pub block_of: Vec<usize>,
    pub subjects: usize,
    /// Target correlation between two columns of the same block.
    pub within: f64,
    /// Target correlation between columns of different blocks.
    pub between: f64,
    /// Location and scale applied after simulation, so the table looks like
    /// raw thickness values rather than z-scores.
    pub location: f64,
    pub scale: f64,
}

impl PlantedBlocks {
    /// Twenty regions in three blocks of 6, 5 and 9, modelled on a cortical
    /// thickness layout (sensorimotor, fronto-parietal, medial-lateral parietal).
    pub fn cortical_20() -> Self {
        let blocks: [(&str, usize); 20] = [
            ("Precentral_L", 0),
            ("SupFrontal_L", 1),
            ("Precuneus_L", 2),
            ("Precentral_R", 0),
            ("SupFrontal_R", 1),
            ("Precuneus_R", 2),
            ("Postcentral_L", 0),
            ("MeanFront_L", 1),
            ("Supramarg_L", 2),
            ("Postcentral_R", 0),
            ("MeanFront_R", 1),
            ("Supramarg_R", 2),
            ("MeanSensMotor_L", 0),
            ("SupParietal_L", 1),
            ("InfParietal_L", 2),
            ("MeanSensMotor_R", 0),
            ("InfParietal_R", 2),
            ("MeanPar_L", 2),
            ("MeanPar_R", 2),
            ("SupParietal_R", 2),
        ];
        Self {
            names: blocks.iter().map(|b| b.0.to_string()).collect(),
            block_of: blocks.iter().map(|b| b.1).collect(),
            subjects: 632,
            within: 0.85,
            between: 0.15,
            location: 2.5,
            scale: 0.15,
        }
    }

    /// Draws the table from a three-level factor model: a shared factor with
    /// loading `sqrt(between)`, one factor per block with loading
    /// `sqrt(within - between)`, and independent noise for the rest.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<FeatureTable> {
        if !(0.0 <= self.between && self.between <= self.within && self.within < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= between <= within < 1, got between = {} and within = {}",
                self.between, self.within
            )));
        }
        if self.names.len() != self.block_of.len() {
            return Err(Error::DimensionMismatch("one block id per column is required".into()));
        }
        let v = self.names.len();
        let nb = self.block_of.iter().max().map_or(0, |m| m + 1);
        let a = self.between.sqrt();
        let b = (self.within - self.between).sqrt();
        let c = (1.0 - self.within).sqrt();
        let mut values = DMatrix::zeros(self.subjects, v);
        for s in 0..self.subjects {
            let g: f64 = rng.sample(StandardNormal);
            let f: Vec<f64> = (0..nb).map(|_| rng.sample(StandardNormal)).collect();
            for j in 0..v {
                let e: f64 = rng.sample(StandardNormal);
                let z = a * g + b * f[self.block_of[j]] + c * e;
                values[(s, j)] = self.location + self.scale * z;
            }
        }
        FeatureTable::new(self.names.clone(), values)
    }
}
