//! Dataset ingestion and result tables.
//!
//! Input files are delimited text with a header row. Missing cells are the
//! empty string, `NA` or `NaN` (any case). Covariates must be fully
//! observed; a covariate column with any non-numeric cell is treated as
//! categorical and expanded into `k - 1` indicators named `column=level`,
//! with the lexicographically first level as the reference.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::sim::MetricsRow;

pub fn is_na(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

/// Where the response indicator comes from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum ResponseSource {
    /// Observed exactly when the outcome cell is not missing.
    #[default]
    Auto,
    /// A 0/1 (or true/false) column; the outcome of rows marked 0 is ignored.
    Column(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalEncoding {
    pub column: String,
    pub reference: String,
    /// Levels with an indicator column, in column order.
    pub levels: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub data: Dataset,
    pub outcome: String,
    pub encodings: Vec<CategoricalEncoding>,
}

fn parse_flag(cell: &str, row: usize, column: &str) -> Result<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::Data(format!("row {row}, column `{column}`: response flag `{other}` is not 0/1"))),
    }
}

/// Reads a dataset from delimited text.
pub fn read_dataset<R: Read>(reader: R, outcome: &str, response: &ResponseSource) -> Result<LoadedDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("no column named `{name}` (columns: {})", header.join(", "))))
    };
    let y_col = find(outcome)?;
    let r_col = match response {
        ResponseSource::Auto => None,
        ResponseSource::Column(c) => Some(find(c)?),
    };
    let covariates: Vec<usize> = (0..header.len()).filter(|&j| j != y_col && Some(j) != r_col).collect();

    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    let n = records.len();
    let mut y = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    for (i, rec) in records.iter().enumerate() {
        let line = i + 2;
        let cell = &rec[y_col];
        let observed = match r_col {
            Some(j) => parse_flag(&rec[j], line, &header[j])?,
            None => !is_na(cell),
        };
        if observed {
            if is_na(cell) {
                return Err(Error::Data(format!("row {line}: outcome is missing but marked observed")));
            }
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("row {line}: outcome `{cell}` is not numeric")))?;
            y.push(v);
        } else {
            y.push(f64::NAN);
        }
        r.push(observed);
    }

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut encodings = Vec::new();
    for &j in &covariates {
        let cells: Vec<&str> = records.iter().map(|rec| rec[j].trim()).collect();
        if let Some(i) = cells.iter().position(|c| is_na(c)) {
            return Err(Error::Data(format!(
                "row {}: covariate `{}` is missing; covariates must be fully observed",
                i + 2,
                header[j]
            )));
        }
        let numeric: Option<Vec<f64>> = cells.iter().map(|c| c.parse::<f64>().ok()).collect();
        match numeric {
            Some(v) => {
                columns.push(v);
                names.push(header[j].clone());
            }
            None => {
                let mut levels: Vec<String> = cells.iter().map(|c| c.to_string()).collect();
                levels.sort();
                levels.dedup();
                let reference = levels.remove(0);
                for level in &levels {
                    columns.push(cells.iter().map(|c| if c == level { 1.0 } else { 0.0 }).collect());
                    names.push(format!("{}={level}", header[j]));
                }
                log::info!("`{}`: {} levels, reference `{reference}`", header[j], levels.len() + 1);
                encodings.push(CategoricalEncoding {
                    column: header[j].clone(),
                    reference,
                    levels,
                });
            }
        }
    }
    let x = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let data = Dataset::new(y, r, x, names).map_err(|e| Error::Data(e.to_string()))?;
    Ok(LoadedDataset {
        data,
        outcome: outcome.to_string(),
        encodings,
    })
}

pub fn load_dataset(path: &Path, outcome: &str, response: &ResponseSource) -> Result<LoadedDataset> {
    let file = fs::File::open(path)?;
    read_dataset(file, outcome, response)
}

/// Writes covariates then the outcome (`NA` where missing). Values use the
/// shortest representation that parses back to the same number.
pub fn write_dataset(path: &Path, data: &Dataset, outcome: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = data.names().iter().map(String::as_str).collect();
    header.push(outcome);
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec: Vec<String> = (0..data.x().ncols()).map(|j| data.x()[(i, j)].to_string()).collect();
        rec.push(if data.r()[i] { data.y()[i].to_string() } else { "NA".into() });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let p = digits.max(1);
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= p as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        trim(&format!("{:.*}", (p as i32 - 1 - exp) as usize, x))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Unknown {
                kind: "output format",
                name: s.into(),
            }),
        }
    }
}

/// One table cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Int(usize),
    /// Missing values print as `NA` in CSV and `null` in JSON.
    Num(Option<f64>),
}

/// A table with a fixed column order.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

pub const METRICS_HEADER: [&str; 10] =
    ["scenario", "regime", "method", "n", "replicates", "bias", "rmse", "coverage", "ail", "failures"];

impl Table {
    pub fn metrics(rows: &[MetricsRow]) -> Self {
        let num = |v: f64| Cell::Num(Some(v).filter(|v| v.is_finite()));
        Table {
            header: METRICS_HEADER.to_vec(),
            rows: rows
                .iter()
                .map(|r| {
                    vec![
                        Cell::Text(r.scenario.to_string()),
                        Cell::Text(r.regime.to_string()),
                        Cell::Text(r.method.clone()),
                        Cell::Int(r.n),
                        Cell::Int(r.replicates),
                        num(r.bias),
                        num(r.rmse),
                        Cell::Num(r.coverage),
                        Cell::Num(r.ail),
                        Cell::Int(r.failures),
                    ]
                })
                .collect(),
        }
    }

    fn csv_cell(c: &Cell) -> String {
        match c {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Num(Some(v)) => format_sig(*v, 6),
            Cell::Num(None) => "NA".into(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Self::csv_cell))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut out = String::from("[");
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(if i == 0 { "\n  {" } else { ",\n  {" });
            for (j, (key, cell)) in self.header.iter().zip(row).enumerate() {
                if j > 0 {
                    out.push_str(", ");
                }
                let value = match cell {
                    Cell::Text(s) => serde_json::to_string(s)?,
                    Cell::Int(v) => v.to_string(),
                    Cell::Num(Some(v)) if v.is_finite() => format_sig(*v, 6),
                    Cell::Num(_) => "null".into(),
                };
                write!(out, "{}: {value}", serde_json::to_string(key)?).expect("write to string");
            }
            out.push('}');
        }
        out.push_str(if self.rows.is_empty() { "]\n" } else { "\n]\n" });
        Ok(out)
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

/// Writes a table; `-` writes to standard output.
pub fn emit_table(table: &Table, format: Format, path: &Path) -> Result<()> {
    let text = table.render(format)?;
    if path.as_os_str() == "-" {
        print!("{text}");
        Ok(())
    } else {
        fs::write(path, text).map_err(Error::from)
    }
}

pub fn emit_results(rows: &[MetricsRow], format: Format, path: &Path) -> Result<()> {
    emit_table(&Table::metrics(rows), format, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(0.123456789, 6), "0.123457");
        assert_eq!(format_sig(10.0, 6), "10");
        assert_eq!(format_sig(-0.51, 6), "-0.51");
        assert_eq!(format_sig(123456789.0, 6), "1.23457e+08");
        assert_eq!(format_sig(999999.6, 6), "1e+06");
        assert_eq!(format_sig(0.0000123456, 6), "1.23456e-05");
        assert_eq!(format_sig(0.0001, 6), "0.0001");
        assert_eq!(format_sig(95.8, 6), "95.8");
        assert_eq!(format_sig(f64::NAN, 6), "NaN");
    }

    #[test]
    fn na_tokens() {
        for t in ["", " ", "NA", "na", "NaN", "nan", "NAN"] {
            assert!(is_na(t), "{t:?}");
        }
        assert!(!is_na("0"));
        assert!(!is_na("N/A"));
    }
}
