//! Reads a metrics table back and prints it grouped by scenario, n and regime.

use std::fmt::Write as _;
use std::path::Path;

use robsq::io::{self, format_sig, Format, Table, METRICS_HEADER};
use robsq::sim::MetricsRow;

pub enum ReportError {
    Usage(String),
    Input(String),
}

fn input(e: impl std::fmt::Display) -> ReportError {
    ReportError::Input(e.to_string())
}

fn parse_num(s: &str) -> Result<Option<f64>, String> {
    if io::is_na(s) || s == "null" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| format!("`{s}` is not a number"))
}

fn row_from_fields(get: impl Fn(&str) -> Result<String, String>) -> Result<MetricsRow, String> {
    let int = |k: &str| get(k)?.parse::<usize>().map_err(|_| format!("`{k}` is not an integer"));
    Ok(MetricsRow {
        scenario: get("scenario")?.parse().map_err(|e| format!("{e}"))?,
        regime: get("regime")?.parse().map_err(|e| format!("{e}"))?,
        method: get("method")?,
        n: int("n")?,
        replicates: int("replicates")?,
        bias: parse_num(&get("bias")?)?.unwrap_or(f64::NAN),
        rmse: parse_num(&get("rmse")?)?.unwrap_or(f64::NAN),
        coverage: parse_num(&get("coverage")?)?,
        ail: parse_num(&get("ail")?)?,
        failures: int("failures")?,
    })
}

fn read_rows(path: &Path) -> Result<Vec<MetricsRow>, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    if text.trim_start().starts_with('[') {
        let v: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_str(&text).map_err(input)?;
        v.iter()
            .map(|obj| {
                row_from_fields(|k| match obj.get(k) {
                    Some(serde_json::Value::String(s)) => Ok(s.clone()),
                    Some(other) => Ok(other.to_string()),
                    None => Err(format!("missing field `{k}`")),
                })
            })
            .collect::<Result<_, _>>()
            .map_err(input)
    } else {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers().map_err(input)?.iter().map(str::to_string).collect();
        if header != METRICS_HEADER {
            return Err(input(format!("unexpected columns: {}", header.join(","))));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(input)?;
            let row = row_from_fields(|k| {
                let j = header.iter().position(|h| h == k).expect("checked header");
                Ok(rec[j].to_string())
            })
            .map_err(input)?;
            rows.push(row);
        }
        Ok(rows)
    }
}

fn cell(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map_or("NA".into(), |x| format_sig(x, 4))
}

pub fn render_text(rows: &[MetricsRow]) -> String {
    let mut out = String::new();
    let mut last: Option<(String, usize, String)> = None;
    for r in rows {
        let head = (r.scenario.to_string(), r.n, r.regime.to_string());
        if last.as_ref().map(|l| (&l.0, l.1)) != Some((&head.0, head.1)) {
            let _ = writeln!(out, "{} scenario, n = {}", head.0, head.1);
        }
        if last.as_ref() != Some(&head) {
            let _ = writeln!(out, "  {}", head.2);
            let _ = writeln!(
                out,
                "    {:<12} {:>10} {:>10} {:>9} {:>10} {:>10} {:>9}",
                "method", "bias", "rmse", "coverage", "ail", "replicates", "failures"
            );
        }
        let _ = writeln!(
            out,
            "    {:<12} {:>10} {:>10} {:>9} {:>10} {:>10} {:>9}",
            r.method,
            cell(Some(r.bias)),
            cell(Some(r.rmse)),
            cell(r.coverage),
            cell(r.ail),
            r.replicates,
            r.failures
        );
        last = Some(head);
    }
    out
}

pub fn run(path: &Path, format: &str, output: &Path) -> Result<(), ReportError> {
    let rows = read_rows(path)?;
    let text = match format {
        "text" => render_text(&rows),
        "csv" => Table::metrics(&rows).render(Format::Csv).map_err(input)?,
        "json" => Table::metrics(&rows).render(Format::Json).map_err(input)?,
        other => return Err(ReportError::Usage(format!("unknown report format `{other}` (text, csv or json)"))),
    };
    if output.as_os_str() == "-" {
        print!("{text}");
        Ok(())
    } else {
        std::fs::write(output, text).map_err(input)
    }
}
