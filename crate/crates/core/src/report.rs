//! CSV flattening of JSON reports for external plotting.

use std::collections::HashMap;

use serde_json::Value;

use crate::error::{Error, Result};

fn escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(items) if items.iter().all(|i| !i.is_object() && !i.is_array()) => {
            items.iter().map(scalar).collect::<Vec<_>>().join(":")
        }
        other => other.to_string(),
    }
}

fn flatten_into(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, inner) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, inner, out);
            }
        }
        _ => out.push((prefix.to_string(), scalar(v))),
    }
}

/// Rows of objects as CSV; columns are the dotted leaf paths in first-seen
/// order, missing cells left empty. Scalar arrays are joined with `:`.
pub fn rows_to_csv(rows: &[Value]) -> String {
    let mut columns: Vec<String> = Vec::new();
    let mut flat = Vec::with_capacity(rows.len());
    for row in rows {
        let mut cells = Vec::new();
        flatten_into("", row, &mut cells);
        for (k, _) in &cells {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
        flat.push(cells.into_iter().collect::<HashMap<String, String>>());
    }
    let mut out = columns.iter().map(|c| escape(c)).collect::<Vec<_>>().join(",");
    out.push('\n');
    for cells in flat {
        let line: Vec<String> = columns.iter().map(|c| escape(cells.get(c).map_or("", String::as_str))).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Square-function report (`per_region`) as
/// `generation,index,kind,t_lo,t_hi,value`.
pub fn regions_to_csv(report: &Value) -> Result<String> {
    let rows =
        report["per_region"].as_array().ok_or_else(|| Error::InvalidInput("report has no per_region array".into()))?;
    let mut out = String::from("generation,index,kind,t_lo,t_hi,value\n");
    for r in rows {
        let line = ["generation", "index", "kind", "t_lo", "t_hi", "value"].map(|k| escape(&scalar(&r[k])));
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// CSV for any report this crate writes: square-function reports become one
/// row per region, experiment reports one row per trial.
pub fn to_csv(report: &Value) -> Result<String> {
    if report.get("per_region").is_some() {
        return regions_to_csv(report);
    }
    match report.get("trials").and_then(Value::as_array) {
        Some(trials) => Ok(rows_to_csv(trials)),
        None => Err(Error::InvalidInput("expected a report with \"trials\" or \"per_region\"".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn region_rows() {
        let rep = json!({"per_region": [
            {"generation": -1, "index": [2, -3], "kind": "whitney", "t_lo": 1.0, "t_hi": 2.0, "value": 0.5}
        ]});
        assert_eq!(to_csv(&rep).unwrap(), "generation,index,kind,t_lo,t_hi,value\n-1,2:-3,whitney,1.0,2.0,0.5\n");
    }

    #[test]
    fn trial_rows_flatten_and_fill_gaps() {
        let rep = json!({"trials": [
            {"a": 1, "b": {"c": "x,y"}},
            {"a": 2, "d": true}
        ]});
        assert_eq!(to_csv(&rep).unwrap(), "a,b.c,d\n1,\"x,y\",\n2,,true\n");
        assert!(to_csv(&json!({"x": 1})).is_err());
    }
}
