//! Dataset CSV: header `x1,...,xp,y[,r]`, missing responses as empty cells.

use std::path::Path;

use nalgebra::DMatrix;
use sma_core::{Dataset, Result, SmaError};

use crate::atomic_write;

/// Shortest-safe textual form: 17 significant digits round-trip every f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn header_error(msg: String) -> SmaError {
    SmaError::Parse { line: 1, msg }
}

/// Parses CSV text. Without an `r` column, `r` is 1 exactly where `y` is
/// present.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| header_error(e.to_string()))?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let has_r = cols.last() == Some(&"r");
    let p = cols.len().saturating_sub(if has_r { 2 } else { 1 });
    if p == 0 {
        return Err(header_error(format!("expected columns x1..xp, y[, r], found {cols:?}")));
    }
    for (j, c) in cols[..p].iter().enumerate() {
        if *c != format!("x{}", j + 1) {
            return Err(header_error(format!("column {} should be x{}, found {c:?}", j + 1, j + 1)));
        }
    }
    if cols[p] != "y" {
        return Err(header_error(format!("column {} should be y, found {:?}", p + 1, cols[p])));
    }

    let mut xs = Vec::new();
    let (mut y, mut r) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            SmaError::Parse { line, msg: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| SmaError::Parse { line, msg };
        if rec.len() != cols.len() {
            return Err(bad(format!("expected {} fields, found {}", cols.len(), rec.len())));
        }
        for j in 0..p {
            let v: f64 = rec[j].parse().map_err(|_| bad(format!("x{}: not a number: {:?}", j + 1, &rec[j])))?;
            if !v.is_finite() {
                return Err(bad(format!("x{} is not finite", j + 1)));
            }
            xs.push(v);
        }
        let yv = match &rec[p] {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad(format!("y: not a number: {s:?}")))?),
        };
        let ri = if has_r {
            match &rec[p + 1] {
                "1" => true,
                "0" => false,
                s => return Err(bad(format!("r must be 0 or 1, found {s:?}"))),
            }
        } else {
            yv.is_some()
        };
        if ri && yv.is_none() {
            return Err(bad("r = 1 but y is empty".into()));
        }
        y.push(yv.unwrap_or(f64::NAN));
        r.push(ri);
    }
    let n = y.len();
    if n == 0 {
        return Err(SmaError::Empty("CSV has no data rows"));
    }
    Dataset::new(DMatrix::from_row_slice(n, p, &xs), y, r)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    parse_csv(&std::fs::read_to_string(path)?)
}

/// CSV text with an explicit `r` column; nonrespondents get an empty `y`.
pub fn to_csv(data: &Dataset) -> String {
    let p = data.p();
    let mut out: String = (1..=p).map(|j| format!("x{j},")).collect();
    out.push_str("y,r\n");
    for i in 0..data.n() {
        for j in 0..p {
            out.push_str(&fmt_f64(data.x_at(i, j)));
            out.push(',');
        }
        if data.r()[i] {
            out.push_str(&fmt_f64(data.y()[i]));
            out.push_str(",1\n");
        } else {
            out.push_str(",0\n");
        }
    }
    out
}

pub fn save_csv(path: &Path, data: &Dataset) -> Result<()> {
    atomic_write(path, to_csv(data).as_bytes())
}
