//! CSV ingestion with ordered row filters.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::CliError;

/// One row filter, applied to the rows surviving the previous filters.
#[derive(Debug, Clone, PartialEq)]
pub enum Filter {
    /// `column==value`
    Equals { column: String, value: String },
    /// `column!=value`
    NotEquals { column: String, value: String },
    /// `row!=k`: drop the k-th (1-based) row of the current subset.
    DropRow(usize),
}

impl Filter {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = || CliError::Usage(format!("filter {text:?}: expected col==value, col!=value or row!=k"));
        if let Some((col, val)) = text.split_once("!=") {
            let (col, val) = (col.trim(), val.trim());
            if col == "row" {
                let k: usize = val.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                return Ok(Filter::DropRow(k));
            }
            return Ok(Filter::NotEquals {
                column: col.to_string(),
                value: val.to_string(),
            });
        }
        if let Some((col, val)) = text.split_once("==") {
            return Ok(Filter::Equals {
                column: col.trim().to_string(),
                value: val.trim().to_string(),
            });
        }
        Err(bad())
    }

    fn column(&self) -> Option<&str> {
        match self {
            Filter::Equals { column, .. } | Filter::NotEquals { column, .. } => Some(column),
            Filter::DropRow(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub predictor_names: Vec<String>,
    pub response_name: String,
    /// 1-based data-row number in the file for each retained row.
    pub source_rows: Vec<usize>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// The first `k` rows.
    pub fn head(&self, k: usize) -> Dataset {
        let k = k.min(self.n());
        Dataset {
            x: self.x.rows(0, k).into_owned(),
            y: self.y.rows(0, k).into_owned(),
            predictor_names: self.predictor_names.clone(),
            response_name: self.response_name.clone(),
            source_rows: self.source_rows[..k].to_vec(),
        }
    }
}

fn resolve(headers: &[String], key: &str) -> Result<usize, CliError> {
    if let Some(i) = headers.iter().position(|h| h == key) {
        return Ok(i);
    }
    match key.parse::<usize>() {
        Ok(i) if i < headers.len() => Ok(i),
        _ => Err(CliError::Usage(format!("no column {key:?} (by name or 0-based index)"))),
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan" | "?")
}

/// Reads a headed CSV (lines starting with `#` are skipped), applies `filters` in order and extracts the response
/// and predictor columns. Without explicit predictors every column other than
/// the response and the filtered columns is used.
pub fn parse_dataset(
    path: &Path,
    response: &str,
    predictors: Option<&[String]>,
    filters: &[Filter],
) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("row {}: {e}", k + 1)))?;
        rows.push((k + 1, rec));
    }

    for filter in filters {
        match filter {
            Filter::Equals { column, value } => {
                let c = resolve(&headers, column)?;
                rows.retain(|(_, r)| r.get(c) == Some(value.as_str()));
            }
            Filter::NotEquals { column, value } => {
                let c = resolve(&headers, column)?;
                rows.retain(|(_, r)| r.get(c) != Some(value.as_str()));
            }
            Filter::DropRow(k) => {
                if *k > rows.len() {
                    return Err(CliError::Usage(format!("row!={k}: only {} rows remain", rows.len())));
                }
                rows.remove(k - 1);
            }
        }
    }

    let ycol = resolve(&headers, response)?;
    let xcols: Vec<usize> = match predictors {
        Some(list) => list.iter().map(|p| resolve(&headers, p)).collect::<Result<_, _>>()?,
        None => {
            let filtered: Vec<usize> = filters
                .iter()
                .filter_map(Filter::column)
                .filter_map(|c| resolve(&headers, c).ok())
                .collect();
            (0..headers.len()).filter(|c| *c != ycol && !filtered.contains(c)).collect()
        }
    };
    if xcols.is_empty() {
        return Err(CliError::Usage("no predictor columns selected".into()));
    }
    if xcols.contains(&ycol) {
        return Err(CliError::Usage("the response is also listed as a predictor".into()));
    }

    let n = rows.len();
    let p = xcols.len();
    let cell = |row: usize, rec: &csv::StringRecord, c: usize| -> Result<f64, CliError> {
        let text = rec.get(c).unwrap_or("");
        if is_missing(text) {
            return Err(CliError::Data(format!(
                "missing value at row {row}, column {:?}",
                headers[c]
            )));
        }
        text.parse::<f64>().map_err(|_| {
            CliError::Data(format!(
                "non-numeric value {text:?} at row {row}, column {:?}",
                headers[c]
            ))
        })
    };
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for (i, (row, rec)) in rows.iter().enumerate() {
        y[i] = cell(*row, rec, ycol)?;
        for (j, &c) in xcols.iter().enumerate() {
            x[(i, j)] = cell(*row, rec, c)?;
        }
    }
    Ok(Dataset {
        x,
        y,
        predictor_names: xcols.iter().map(|&c| headers[c].clone()).collect(),
        response_name: headers[ycol].clone(),
        source_rows: rows.iter().map(|(r, _)| *r).collect(),
    })
}
