//! File formats: TOML for structured inputs, two-column CSV with a header row for
//! per-sensor and per-server values.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hall::{HallLayout, SensorRole, SensorVector};

pub const MEASUREMENTS_HEADER: &str = "sensor_id,temperature_c";
pub const FLOW_RATES_HEADER: &str = "server_id,flow_rate_cfm_per_w";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `body`, creating parent directories as needed.
pub fn write_text(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn from_toml_str<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
        Error::parse(path, line, e.message().to_string())
    })
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    from_toml_str(&read_text(path)?, path)
}

pub fn to_toml_string<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value)
        .map_err(|e| Error::InvalidInput(format!("cannot serialize to TOML: {e}")))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_toml_string(value)?)
}

/// Renders `id,value` records under `header`.
pub fn keyed_csv<'a>(
    header: &str,
    ids: impl IntoIterator<Item = &'a str>,
    values: &[f64],
) -> String {
    let mut out = format!("{header}\n");
    for (id, v) in ids.into_iter().zip(values) {
        let _ = writeln!(out, "{id},{v}");
    }
    out
}

/// Parses `id,value` records under `header` into the order of `ids`. Every id must appear
/// exactly once.
pub fn parse_keyed_csv(text: &str, path: &Path, header: &str, ids: &[&str]) -> Result<Vec<f64>> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(k, id)| (*id, k)).collect();
    let mut values = vec![None; ids.len()];
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != header {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected header `{header}`"),
                ));
            }
            saw_header = true;
            continue;
        }
        let (id, value) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path, line_no, "expected two comma-separated fields"))?;
        let (id, value) = (id.trim(), value.trim());
        let k = *index
            .get(id)
            .ok_or_else(|| Error::parse(path, line_no, format!("unknown id `{id}`")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("`{value}` is not a number")))?;
        if !v.is_finite() {
            return Err(Error::parse(
                path,
                line_no,
                format!("non-finite value for `{id}`"),
            ));
        }
        if values[k].replace(v).is_some() {
            return Err(Error::parse(path, line_no, format!("duplicate id `{id}`")));
        }
    }
    if !saw_header {
        return Err(Error::parse(path, 1, format!("expected header `{header}`")));
    }
    values
        .into_iter()
        .zip(ids)
        .map(|(v, id)| v.ok_or_else(|| Error::parse(path, 0, format!("missing value for `{id}`"))))
        .collect()
}

fn sensor_ids(layout: &HallLayout) -> Vec<&str> {
    layout.sensors.iter().map(|s| s.id.as_str()).collect()
}

fn server_ids(layout: &HallLayout) -> Vec<&str> {
    layout.servers.iter().map(|s| s.id.as_str()).collect()
}

pub fn measurements_csv(layout: &HallLayout, values: &SensorVector) -> String {
    keyed_csv(MEASUREMENTS_HEADER, sensor_ids(layout), &values.values)
}

/// Reads per-sensor temperatures, ordered as the layout's sensors.
pub fn read_measurements(path: &Path, layout: &HallLayout) -> Result<SensorVector> {
    let values = parse_keyed_csv(
        &read_text(path)?,
        path,
        MEASUREMENTS_HEADER,
        &sensor_ids(layout),
    )?;
    Ok(SensorVector::new(values, SensorRole::Measurement))
}

pub fn flow_rates_csv(layout: &HallLayout, alpha: &[f64]) -> String {
    keyed_csv(FLOW_RATES_HEADER, server_ids(layout), alpha)
}

/// Reads per-server flow rates, ordered as the layout's servers.
pub fn read_flow_rates(path: &Path, layout: &HallLayout) -> Result<Vec<f64>> {
    parse_keyed_csv(
        &read_text(path)?,
        path,
        FLOW_RATES_HEADER,
        &server_ids(layout),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDS: [&str; 3] = ["a", "b", "c"];

    #[test]
    fn keyed_round_trip_is_exact() {
        let values = [0.1 + 0.2, -1e-300, 123456.789012345];
        let text = keyed_csv("id,v", IDS, &values);
        let back = parse_keyed_csv(&text, Path::new("x.csv"), "id,v", &IDS).unwrap();
        assert_eq!(back, values);
    }

    #[test]
    fn order_follows_ids_not_file() {
        let text = "id,v\nc,3\na,1\nb,2\n";
        let back = parse_keyed_csv(text, Path::new("x.csv"), "id,v", &IDS).unwrap();
        assert_eq!(back, vec![1.0, 2.0, 3.0]);
    }

    fn line_of_error(text: &str) -> usize {
        match parse_keyed_csv(text, Path::new("x.csv"), "id,v", &IDS) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(line_of_error("id,v\na,1\nb,oops\nc,3\n"), 3);
        assert_eq!(line_of_error("id,v\na,1\nzz,2\n"), 3);
        assert_eq!(line_of_error("id,v\na,1\na,2\n"), 3);
        assert_eq!(line_of_error("id,v\na,1\nb 2\n"), 3);
        assert_eq!(line_of_error("wrong\na,1\n"), 1);
        assert_eq!(line_of_error("id,v\na,1\nb,inf\n"), 3);
        assert_eq!(line_of_error("id,v\na,1\nb,2\n"), 0);
    }

    #[test]
    fn toml_errors_carry_a_line() {
        #[derive(Debug, serde::Deserialize)]
        struct T {
            #[allow(dead_code)]
            x: f64,
        }
        let err = from_toml_str::<T>("\n\nx = \"nope\"\n", Path::new("t.toml")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }
}
