//! JSON and CSV helpers shared by reports.

use serde_json::{Map, Value};

use crate::linalg::{CMat, C64};
pub use crate::problem::{cmatrix_to_json, parse_cmatrix};

/// Round to `digits` significant decimal digits.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x)
}

/// Recursively round every number in a JSON value to 12 significant digits.
/// Object keys are kept sorted by `serde_json`'s default map.
pub fn canonical(v: &Value) -> Value {
    match v {
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => {
                let r = round_sig(x, 12);
                serde_json::Number::from_f64(r).map(Value::Number).unwrap_or(Value::Null)
            }
            _ => v.clone(),
        },
        Value::Array(a) => Value::Array(a.iter().map(canonical).collect()),
        Value::Object(o) => {
            let mut m = Map::new();
            for (k, x) in o {
                m.insert(k.clone(), canonical(x));
            }
            Value::Object(m)
        }
        _ => v.clone(),
    }
}

pub fn to_canonical_string(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(&canonical(v)).expect("JSON values always serialize");
    s.push('\n');
    s
}

pub fn complex_to_json(z: C64) -> Value {
    serde_json::json!([z.re, z.im])
}

pub fn opt_matrix(m: Option<&CMat>) -> Value {
    m.map(cmatrix_to_json).unwrap_or(Value::Null)
}

/// CSV table with a header row; complex entries are split into `_re`/`_im`
/// columns by the caller.
pub fn csv_table(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|x| format!("{}", round_sig(*x, 12))).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Column names `{prefix}{i}{j}_re`, `{prefix}{i}{j}_im` for an `n x n` matrix
/// (one-based indices, row-major).
pub fn matrix_columns(prefix: &str, n: usize) -> Vec<String> {
    let mut cols = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            cols.push(format!("{prefix}{}{}_re", i + 1, j + 1));
            cols.push(format!("{prefix}{}{}_im", i + 1, j + 1));
        }
    }
    cols
}

pub fn matrix_row(m: &CMat) -> Vec<f64> {
    let mut r = Vec::with_capacity(2 * m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            r.push(m[(i, j)].re);
            r.push(m[(i, j)].im);
        }
    }
    r
}

/// Evenly spaced grid from a `min:max:count` description.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("grid '{s}' must have the form min:max:count"));
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| format!("bad grid minimum '{}'", parts[0]))?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| format!("bad grid maximum '{}'", parts[1]))?;
    let count: usize = parts[2].trim().parse().map_err(|_| format!("bad grid count '{}'", parts[2]))?;
    if count == 0 {
        return Err("grid count must be positive".into());
    }
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(format!("grid bounds must be finite with min <= max, got {lo}:{hi}"));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_stable() {
        assert_eq!(round_sig(0.1 + 0.2, 12), 0.3);
        assert_eq!(round_sig(-1234.56789012345, 6), -1234.57);
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("1:0:3").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }
}
