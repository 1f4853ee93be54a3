//! Datasets and CSV interchange.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariates (row-major `n × d`) and a response vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Data("covariate dimension must be at least 1".into()));
        }
        if x.len() != y.len() * d {
            return Err(Error::Dimension {
                expected: y.len() * d,
                got: x.len(),
            });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite response in row {}", i + 1)));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite covariate in row {}, column {}",
                i / d + 1,
                i % d + 1
            )));
        }
        Ok(Self { n: y.len(), d, x, y })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    /// Same covariates with a replaced response.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Dataset::new(self.x.clone(), y, self.d)
    }

    /// Same covariates, response negated (upper-tail transform).
    pub fn negated(&self) -> Self {
        Self {
            n: self.n,
            d: self.d,
            x: self.x.clone(),
            y: self.y.iter().map(|v| -v).collect(),
        }
    }

    pub fn max_abs_response(&self) -> f64 {
        self.y.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut x = Vec::with_capacity(rows.len() * self.d);
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            x.extend_from_slice(self.row(r));
            y.push(self.y[r]);
        }
        Self {
            n: rows.len(),
            d: self.d,
            x,
            y,
        }
    }

    /// Copy with covariate column `j` reordered by `perm`.
    pub fn with_permuted_column(&self, j: usize, perm: &[usize]) -> Self {
        let mut out = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            out.x[i * self.d + j] = self.x[p * self.d + j];
        }
        out
    }

    /// Default column names `x1..xd`.
    pub fn default_names(&self) -> Vec<String> {
        (1..=self.d).map(|j| format!("x{j}")).collect()
    }

    /// Writes `x1..xd,y` (or the given feature names) with shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, out: W, names: Option<&[String]>) -> Result<()> {
        let names = match names {
            Some(n) if n.len() == self.d => n.to_vec(),
            Some(n) => {
                return Err(Error::Dimension {
                    expected: self.d,
                    got: n.len(),
                })
            }
            None => self.default_names(),
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = names;
        header.push("y".to_string());
        w.write_record(&header).map_err(csv_err)?;
        let mut rec = Vec::with_capacity(self.d + 1);
        for i in 0..self.n {
            rec.clear();
            rec.extend(self.row(i).iter().map(|v| format!("{v}")));
            rec.push(format!("{}", self.y[i]));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), None)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// A parsed CSV table: feature names plus the dataset (response column `y`).
#[derive(Debug, Clone)]
pub struct Table {
    pub feature_names: Vec<String>,
    pub data: Dataset,
    /// Features whose column is constant; kept, but worth a warning.
    pub constant_features: Vec<String>,
    /// False when the file had no `y` column (responses are then zero).
    pub has_response: bool,
}

/// Reads an RFC-4180 CSV with a header; the response column must be named `y`.
pub fn read_csv<R: Read>(input: R) -> Result<Table> {
    read_csv_opts(input, true)
}

/// Like [`read_csv`], but a missing `y` column is allowed when `require_response` is false.
pub fn read_csv_opts<R: Read>(input: R, require_response: bool) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let y_col = headers.iter().position(|h| h == "y");
    if y_col.is_none() && require_response {
        return Err(Error::Data(format!(
            "no response column `y`; available columns: {}",
            headers.join(", ")
        )));
    }
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| Some(c) != y_col).collect();
    if feature_cols.is_empty() {
        return Err(Error::Data("no feature columns besides `y`".into()));
    }
    let d = feature_cols.len();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2; // 1-based, after the header line
        let rec = rec.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(Error::Data(format!(
                "row {row}: expected {} fields, found {}",
                headers.len(),
                rec.len()
            )));
        }
        let parse = |c: usize| -> Result<f64> {
            let cell = rec[c].trim();
            let v: f64 = cell.parse().map_err(|_| {
                Error::Data(format!(
                    "row {row}, column `{}`: non-numeric value {cell:?}",
                    headers[c]
                ))
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Data(format!(
                    "row {row}, column `{}`: non-finite value",
                    headers[c]
                )))
            }
        };
        for &c in &feature_cols {
            x.push(parse(c)?);
        }
        y.push(match y_col {
            Some(c) => parse(c)?,
            None => 0.0,
        });
    }
    if y.is_empty() {
        return Err(Error::Data("CSV has a header but no data rows".into()));
    }
    let data = Dataset::new(x, y, d)?;
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let constant_features = (0..d)
        .filter(|&j| {
            let first = data.x[j];
            (0..data.n).all(|i| data.x[i * d + j] == first)
        })
        .map(|j| feature_names[j].clone())
        .collect();
    Ok(Table {
        feature_names,
        data,
        constant_features,
        has_response: y_col.is_some(),
    })
}

pub fn load_csv(path: &Path) -> Result<Table> {
    load_csv_opts(path, true)
}

pub fn load_csv_opts(path: &Path, require_response: bool) -> Result<Table> {
    let f = std::fs::File::open(path)?;
    read_csv_opts(std::io::BufReader::new(f), require_response)
}

/// Per-column min-max map onto `[0, 1]`. Constant columns map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(data: &Dataset) -> Self {
        let d = data.dim();
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for i in 0..data.len() {
            for (j, &v) in data.row(i).iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        Self { mins, maxs }
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for j in 0..row.len() {
            let span = self.maxs[j] - self.mins[j];
            out[j] = if span > 0.0 {
                (row[j] - self.mins[j]) / span
            } else {
                0.0
            };
        }
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        if data.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: data.dim(),
            });
        }
        let d = data.dim();
        let mut x = vec![0.0; data.x.len()];
        for i in 0..data.len() {
            self.transform_row(data.row(i), &mut x[i * d..(i + 1) * d]);
        }
        Dataset::new(x, data.y.clone(), d)
    }
}
