//! Report serialisation helpers.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Error;

/// Rounds to `digits` significant digits.
pub fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let text = format!("{:.*e}", (digits - 1).max(0) as usize, x);
    text.parse().unwrap_or(x)
}

fn round_floats(v: &mut toml::Value) {
    match v {
        toml::Value::Float(x) => *x = round_sig(*x, 9),
        toml::Value::Array(items) => items.iter_mut().for_each(round_floats),
        toml::Value::Table(t) => t.iter_mut().for_each(|(_, x)| round_floats(x)),
        _ => {}
    }
}

/// Writes `value` as TOML with floats at nine significant digits.
pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut v = toml::Value::try_from(value).map_err(|e| Error::Output(e.to_string()))?;
    round_floats(&mut v);
    let text = toml::to_string_pretty(&v).map_err(|e| Error::Output(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// What a command ran with and what it wrote.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            ..Manifest::default()
        }
    }
}
