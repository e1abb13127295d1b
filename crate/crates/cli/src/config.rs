//! Layered settings: defaults, then the `--config` TOML file, then `--key value` flags.

use std::fs;
use std::path::Path;

use mtdnet::backtest::BacktestConfig;
use mtdnet::plot::{DEFAULT_GRID_POINTS, DEFAULT_SPAN};
use mtdnet::Error;
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub backtest: BacktestConfig,
    pub span: f64,
    pub grid_points: usize,
}

/// Backtest keys plus the loess keys `span` and `grid_points`.
fn defaults() -> Map<String, Value> {
    let mut map = match serde_json::to_value(BacktestConfig::default()) {
        Ok(Value::Object(map)) => map,
        _ => unreachable!("config serializes to an object"),
    };
    map.insert("span".into(), Value::from(DEFAULT_SPAN));
    map.insert("grid_points".into(), Value::from(DEFAULT_GRID_POINTS));
    map
}

/// Every overridable key, sorted.
pub fn keys() -> Vec<String> {
    defaults().keys().cloned().collect()
}

fn input(msg: impl Into<String>) -> Error {
    Error::Input(msg.into())
}

/// Parses a flag value using the type of the default as a guide.
fn parse_like(template: &Value, key: &str, raw: &str) -> Result<Value, Error> {
    let bad = || input(format!("--{key}: cannot parse {raw:?}"));
    Ok(match template {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => Value::from(raw.parse::<f64>().map_err(|_| bad())?),
        Value::Array(items) => {
            let elem = items
                .first()
                .cloned()
                .unwrap_or(Value::String(String::new()));
            let parts = raw.split(',').map(str::trim).filter(|s| !s.is_empty());
            Value::Array(
                parts
                    .map(|p| parse_like(&elem, key, p))
                    .collect::<Result<_, _>>()?,
            )
        }
        _ => Value::String(raw.to_string()),
    })
}

impl Settings {
    /// Builds settings from an optional TOML file and `(key, raw value)` overrides.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, Error> {
        let mut map = defaults();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|source| Error::Io {
                path: path.to_owned(),
                source,
            })?;
            let table: toml::Table =
                toml::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))?;
            for (key, value) in table {
                if !map.contains_key(&key) {
                    return Err(input(format!("{}: unknown key {key:?}", path.display())));
                }
                let value = serde_json::to_value(value)?;
                // A bare string is accepted where a list is expected.
                let value = match (&map[&key], value) {
                    (Value::Array(_), Value::String(s)) => parse_like(&map[&key], &key, &s)?,
                    (_, v) => v,
                };
                map.insert(key, value);
            }
        }
        for (key, raw) in overrides {
            let template = map
                .get(key)
                .ok_or_else(|| input(format!("unknown key {key:?}")))?;
            let value = parse_like(template, key, raw)?;
            map.insert(key.clone(), value);
        }
        let span = map.remove("span").and_then(|v| v.as_f64());
        let grid = map.remove("grid_points").and_then(|v| v.as_u64());
        let (Some(span), Some(grid_points)) = (span, grid) else {
            return Err(input(
                "span must be a number and grid_points a nonnegative integer",
            ));
        };
        let backtest: BacktestConfig = serde_json::from_value(Value::Object(map))
            .map_err(|e| input(format!("config: {e}")))?;
        Ok(Self {
            backtest,
            span,
            grid_points: grid_points as usize,
        })
    }
}
