//! CSV ingestion and the affine scaling between raw and model units.
//!
//! Inputs are mapped column-wise onto `[0, 1]` by their training min and max.
//! The response is standardized by its mean and sample standard deviation.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Result, TgpError};
use crate::predict::ResponseScale;

/// Per-column ranges and response moments of a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleInfo {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub response: ResponseScale,
}

impl ScaleInfo {
    pub fn dim(&self) -> usize {
        self.x_min.len()
    }

    pub fn scale_x(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.x_min.iter().zip(&self.x_max))
            .map(|(&v, (&lo, &hi))| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn unscale_x(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.x_min.iter().zip(&self.x_max))
            .map(|(&u, (&lo, &hi))| lo + u * (hi - lo))
            .collect()
    }

    pub fn scale_z(&self, v: f64) -> f64 {
        (v - self.response.mean) / self.response.sd
    }

    pub fn unscale_z(&self, v: f64) -> f64 {
        self.response.unscale(v)
    }
}

/// A validated training set held in both raw and scaled units.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub source: PathBuf,
    pub input_names: Vec<String>,
    pub response_name: String,
    pub x_raw: Vec<Vec<f64>>,
    pub z_raw: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub scale: ScaleInfo,
}

impl Dataset {
    /// Scales raw columns. `source` labels error messages.
    pub fn new(
        source: impl Into<PathBuf>,
        input_names: Vec<String>,
        response_name: String,
        x_raw: Vec<Vec<f64>>,
        z_raw: Vec<f64>,
    ) -> Result<Self> {
        let source = source.into();
        let data_err = |row: usize, column: &str, message: String| TgpError::Data {
            path: source.clone(),
            row,
            column: column.to_string(),
            message,
        };
        let dim = input_names.len();
        if dim == 0 {
            return Err(data_err(0, "", "no input columns".into()));
        }
        if x_raw.len() != z_raw.len() {
            return Err(TgpError::DimensionMismatch {
                expected: x_raw.len(),
                found: z_raw.len(),
            });
        }
        if z_raw.len() < 2 {
            return Err(data_err(0, &response_name, "fewer than two rows".into()));
        }
        for (i, row) in x_raw.iter().enumerate() {
            if row.len() != dim {
                return Err(TgpError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(data_err(i + 1, &input_names[j], format!("non-finite value {v}")));
                }
            }
            if !z_raw[i].is_finite() {
                return Err(data_err(i + 1, &response_name, format!("non-finite value {}", z_raw[i])));
            }
        }
        let mut x_min = vec![f64::INFINITY; dim];
        let mut x_max = vec![f64::NEG_INFINITY; dim];
        for row in &x_raw {
            for j in 0..dim {
                x_min[j] = x_min[j].min(row[j]);
                x_max[j] = x_max[j].max(row[j]);
            }
        }
        for j in 0..dim {
            if x_max[j] <= x_min[j] {
                return Err(data_err(0, &input_names[j], "degenerate column: all values equal".into()));
            }
        }
        let n = z_raw.len() as f64;
        let mean = z_raw.iter().sum::<f64>() / n;
        let var = z_raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var <= 0.0 {
            return Err(data_err(0, &response_name, "degenerate column: all values equal".into()));
        }
        let scale = ScaleInfo {
            x_min,
            x_max,
            response: ResponseScale { mean, sd: var.sqrt() },
        };
        let x = x_raw.iter().map(|r| scale.scale_x(r)).collect();
        let z = z_raw.iter().map(|&v| scale.scale_z(v)).collect();
        Ok(Dataset {
            source,
            input_names,
            response_name,
            x_raw,
            z_raw,
            x,
            z,
            scale,
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.input_names.len()
    }

    /// The rows listed in `rows`, rescaled from their own ranges.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.source.clone(),
            self.input_names.clone(),
            self.response_name.clone(),
            rows.iter().map(|&i| self.x_raw[i].clone()).collect(),
            rows.iter().map(|&i| self.z_raw[i]).collect(),
        )
    }

    pub fn check_min_rows(&self, n_min: usize) -> Result<()> {
        if self.len() < n_min {
            return Err(TgpError::Data {
                path: self.source.clone(),
                row: self.len(),
                column: self.response_name.clone(),
                message: format!("{} rows, fewer than the minimum leaf size {n_min}", self.len()),
            });
        }
        Ok(())
    }

    /// Raw inputs and response with a header row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.input_names.clone();
        header.push(self.response_name.clone());
        w.write_record(&header).map_err(csv_err)?;
        for (row, z) in self.x_raw.iter().zip(&self.z_raw) {
            let rec: Vec<String> = row.iter().chain(std::iter::once(z)).map(|v| v.to_string()).collect();
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| TgpError::Parse(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> TgpError {
    TgpError::Parse(e.to_string())
}

/// A header plus numeric body. Rows are numbered from 1 after the header.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| TgpError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let data_err = |row: usize, column: &str, message: String| TgpError::Data {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        message,
    };
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| data_err(0, "", format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(data_err(0, "", "missing header row".into()));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| data_err(i + 1, "", e.to_string()))?;
        if record.len() != header.len() {
            return Err(data_err(
                i + 1,
                "",
                format!("{} fields, header has {}", record.len(), header.len()),
            ));
        }
        let row = record
            .iter()
            .zip(&header)
            .map(|(cell, name)| {
                if cell.is_empty() {
                    return Err(data_err(i + 1, name, "missing value".into()));
                }
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| data_err(i + 1, name, format!("not a finite number: `{cell}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

/// Reads a training set. The response defaults to the last column; every
/// other column is an input.
pub fn load_csv(path: &Path, response: Option<&str>, n_min: usize) -> Result<Dataset> {
    let table = read_table(path)?;
    let col = match response {
        Some(name) => table.header.iter().position(|h| h == name).ok_or_else(|| TgpError::Data {
            path: path.to_path_buf(),
            row: 0,
            column: name.to_string(),
            message: "no such column".into(),
        })?,
        None => table.header.len() - 1,
    };
    let input_names = table
        .header
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != col)
        .map(|(_, h)| h.clone())
        .collect();
    let mut x_raw = Vec::with_capacity(table.rows.len());
    let mut z_raw = Vec::with_capacity(table.rows.len());
    for row in table.rows {
        z_raw.push(row[col]);
        x_raw.push(row.iter().enumerate().filter(|&(j, _)| j != col).map(|(_, &v)| v).collect());
    }
    let data = Dataset::new(path, input_names, table.header[col].clone(), x_raw, z_raw)?;
    data.check_min_rows(n_min)?;
    Ok(data)
}

/// Reads query points in raw units. Columns are matched to `input_names`
/// by name when all names are present, otherwise by position.
pub fn load_queries(path: &Path, input_names: &[String]) -> Result<Vec<Vec<f64>>> {
    let table = read_table(path)?;
    let by_name: Option<Vec<usize>> = input_names
        .iter()
        .map(|n| table.header.iter().position(|h| h == n))
        .collect();
    let cols = match by_name {
        Some(cols) => cols,
        None if table.header.len() == input_names.len() => (0..input_names.len()).collect(),
        None => {
            return Err(TgpError::DimensionMismatch {
                expected: input_names.len(),
                found: table.header.len(),
            })
        }
    };
    Ok(table
        .rows
        .iter()
        .map(|r| cols.iter().map(|&j| r[j]).collect())
        .collect())
}
