//! Observation storage, CSV ingestion and K-fold splitting.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Covariates `x` (n×p), binary treatment `a` and outcome `y` for n units.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    x: DMatrix<f64>,
    a: Vec<bool>,
    y: Vec<f64>,
    covariate_names: Vec<String>,
}

impl ObservationSet {
    /// Builds a validated observation set. Covariate names default to
    /// `x1..xp` when `names` is `None`.
    pub fn new(x: DMatrix<f64>, a: Vec<bool>, y: Vec<f64>, names: Option<Vec<String>>) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::Validation(format!("need at least 2 units, got {n}")));
        }
        if a.len() != n || x.nrows() != n {
            return Err(Error::Validation(format!(
                "length mismatch: x has {} rows, a has {}, y has {}",
                x.nrows(),
                a.len(),
                n
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("outcome at row {i} is not finite")));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "covariate at row {}, column {} is not finite",
                k % n,
                k / n
            )));
        }
        let covariate_names = match names {
            Some(names) => {
                if names.len() != x.ncols() {
                    return Err(Error::Validation(format!(
                        "{} covariate names for {} columns",
                        names.len(),
                        x.ncols()
                    )));
                }
                names
            }
            None => (1..=x.ncols()).map(|j| format!("x{j}")).collect(),
        };
        Ok(Self {
            x,
            a,
            y,
            covariate_names,
        })
    }

    /// Convenience constructor from a 0/1 treatment vector.
    pub fn from_numeric(x: DMatrix<f64>, a: &[f64], y: Vec<f64>) -> Result<Self> {
        let a = a
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                parse_treatment_value(v)
                    .ok_or_else(|| Error::Validation(format!("treatment at row {i} is {v}, expected 0 or 1")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(x, a, y, None)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn treated(&self) -> &[bool] {
        &self.a
    }

    /// Treatment as 0.0/1.0.
    pub fn a(&self) -> Vec<f64> {
        self.a.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn n_treated(&self) -> usize {
        self.a.iter().filter(|&&t| t).count()
    }

    /// Rows selected by `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> ObservationSet {
        let x = self.x.select_rows(idx);
        ObservationSet {
            x,
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Same covariates and treatment with a replaced outcome vector.
    pub fn with_outcome(&self, y: Vec<f64>) -> Result<ObservationSet> {
        Self::new(self.x.clone(), self.a.clone(), y, Some(self.covariate_names.clone()))
    }

    /// Writes `y,a,<covariates>` with a header row. Values use the shortest
    /// representation that parses back to the identical `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string(), "a".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            record.clear();
            record.push(self.y[i].to_string());
            record.push(if self.a[i] { "1" } else { "0" }.to_string());
            for j in 0..self.p() {
                record.push(self.x[(i, j)].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

fn parse_treatment_value(v: f64) -> Option<bool> {
    if v == 0.0 {
        Some(false)
    } else if v == 1.0 {
        Some(true)
    } else {
        None
    }
}

/// Which covariate columns to take: explicit names, or prefix globs such as
/// `x*`. Entries are comma separated and may be mixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovariateSelector {
    patterns: Vec<String>,
}

impl CovariateSelector {
    pub fn parse(spec: &str) -> Result<Self> {
        let patterns: Vec<String> = spec
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if patterns.is_empty() {
            return Err(Error::Schema("empty covariate column list".into()));
        }
        for p in &patterns {
            if p.trim_end_matches('*').contains('*') {
                return Err(Error::Schema(format!(
                    "pattern '{p}': only a trailing '*' is supported"
                )));
            }
        }
        Ok(Self { patterns })
    }

    /// Resolves against a header, preserving header order for globs and
    /// listing order for explicit names. Columns in `exclude` never match a
    /// glob.
    fn resolve(&self, header: &[String], exclude: &[usize]) -> Result<Vec<usize>> {
        let mut cols = Vec::new();
        for p in &self.patterns {
            if let Some(prefix) = p.strip_suffix('*') {
                let before = cols.len();
                for (j, h) in header.iter().enumerate() {
                    if h.starts_with(prefix) && !exclude.contains(&j) && !cols.contains(&j) {
                        cols.push(j);
                    }
                }
                if cols.len() == before {
                    return Err(Error::Schema(format!("pattern '{p}' matches no column")));
                }
            } else {
                let j = header
                    .iter()
                    .position(|h| h == p)
                    .ok_or_else(|| Error::Schema(format!("missing covariate column '{p}'")))?;
                if !cols.contains(&j) {
                    cols.push(j);
                }
            }
        }
        Ok(cols)
    }
}

/// Maps CSV header names onto outcome, treatment and covariates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    pub outcome: String,
    pub treatment: String,
    pub covariates: CovariateSelector,
}

impl ColumnSchema {
    pub fn new(outcome: &str, treatment: &str, covariates: &str) -> Result<Self> {
        Ok(Self {
            outcome: outcome.to_string(),
            treatment: treatment.to_string(),
            covariates: CovariateSelector::parse(covariates)?,
        })
    }
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            outcome: "y".into(),
            treatment: "a".into(),
            covariates: CovariateSelector {
                patterns: vec!["x*".into()],
            },
        }
    }
}

pub fn load_observations(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<ObservationSet> {
    load_observations_from_reader(File::open(path)?, schema)
}

/// Parses comma-delimited UTF-8 with one header row. Row numbers in errors
/// count data rows from 1.
pub fn load_observations_from_reader<R: Read>(reader: R, schema: &ColumnSchema) -> Result<ObservationSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
    };
    let y_col = find(&schema.outcome)?;
    let a_col = find(&schema.treatment)?;
    let x_cols = schema.covariates.resolve(&header, &[y_col, a_col])?;
    if x_cols.contains(&y_col) || x_cols.contains(&a_col) {
        return Err(Error::Schema(
            "covariate list includes the outcome or treatment column".into(),
        ));
    }

    let mut y = Vec::new();
    let mut a = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let cell = |j: usize| -> Result<f64> {
            let raw = record.get(j).ok_or_else(|| Error::Parse {
                row,
                column: header[j].clone(),
                message: "missing cell".into(),
            })?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                row,
                column: header[j].clone(),
                message: format!("'{raw}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: header[j].clone(),
                    message: format!("'{raw}' is not finite"),
                });
            }
            Ok(v)
        };
        y.push(cell(y_col)?);
        let av = cell(a_col)?;
        a.push(parse_treatment_value(av).ok_or_else(|| {
            Error::Validation(format!(
                "treatment column '{}' has value {av} at row {row}; expected 0 or 1",
                header[a_col]
            ))
        })?);
        for &j in &x_cols {
            xs.push(cell(j)?);
        }
    }
    let n = y.len();
    let x = DMatrix::from_row_slice(n, x_cols.len(), &xs);
    let names = x_cols.iter().map(|&j| header[j].clone()).collect();
    ObservationSet::new(x, a, y, Some(names))
}

/// Assignment of each unit to one of K folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
    seed: u64,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    /// Unit indices in fold `k`, ascending.
    pub fn test_indices(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] == k).collect()
    }

    /// Unit indices outside fold `k`, ascending.
    pub fn train_indices(&self, k: usize) -> Vec<usize> {
        (0..self.fold_of.len()).filter(|&i| self.fold_of[i] != k).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded permutation of `0..n` cut into K contiguous blocks; the first
/// `n mod K` blocks get one extra unit.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 || k > n {
        return Err(Error::Argument(format!(
            "fold count must satisfy 2 <= K <= n (K={k}, n={n})"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from_seed(seed));
    let base = n / k;
    let extra = n % k;
    let mut fold_of = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &unit in &perm[pos..pos + size] {
            fold_of[unit] = fold;
        }
        pos += size;
    }
    Ok(FoldAssignment { fold_of, k, seed })
}
