//! Flat `key = value` configuration with dotted section prefixes.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use sha2::{Digest, Sha256};
use toml::Value;

/// A configuration problem, tagged with the offending key.
#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config key `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

pub type CResult<T> = std::result::Result<T, ConfigError>;

pub fn err<T>(key: &str, message: impl Into<String>) -> CResult<T> {
    Err(ConfigError { key: key.to_string(), message: message.into() })
}

pub struct RawConfig {
    values: BTreeMap<String, Value>,
    used: RefCell<BTreeSet<String>>,
    pub hash: String,
    pub dir: PathBuf,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

impl RawConfig {
    pub fn parse(text: &str, dir: &Path) -> CResult<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let key = e.message().split('`').nth(1).unwrap_or("<syntax>").to_string();
            ConfigError { key, message: format!("parse error: {}", e.message()) }
        })?;
        let mut values = BTreeMap::new();
        flatten("", &table, &mut values);
        let hash = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(RawConfig { values, used: RefCell::new(BTreeSet::new()), hash, dir: dir.to_path_buf() })
    }

    fn get(&self, key: &str) -> Option<&Value> {
        self.used.borrow_mut().insert(key.to_string());
        self.values.get(key)
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Fails on any key that no accessor asked for.
    pub fn reject_unknown(&self) -> CResult<()> {
        let used = self.used.borrow();
        match self.values.keys().find(|k| !used.contains(*k)) {
            Some(k) => err(k, "unknown key for this command"),
            None => Ok(()),
        }
    }

    pub fn f64_opt(&self, key: &str) -> CResult<Option<f64>> {
        self.get(key).map(|v| num(key, v)).transpose()
    }

    pub fn f64(&self, key: &str) -> CResult<f64> {
        self.f64_opt(key)?.map_or_else(|| err(key, "missing"), Ok)
    }

    pub fn positive(&self, key: &str, default: Option<f64>) -> CResult<f64> {
        let v = match (self.f64_opt(key)?, default) {
            (Some(v), _) | (None, Some(v)) => v,
            (None, None) => return err(key, "missing"),
        };
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            err(key, format!("must be positive, got {v}"))
        }
    }

    pub fn usize_opt(&self, key: &str) -> CResult<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as usize)),
            Some(v) => err(key, format!("expected a nonnegative integer, got {v}")),
        }
    }

    pub fn usize(&self, key: &str, default: Option<usize>) -> CResult<usize> {
        match (self.usize_opt(key)?, default) {
            (Some(v), _) | (None, Some(v)) => Ok(v),
            (None, None) => err(key, "missing"),
        }
    }

    pub fn bool(&self, key: &str, default: bool) -> CResult<bool> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(v) => err(key, format!("expected true or false, got {v}")),
        }
    }

    pub fn string_opt(&self, key: &str) -> CResult<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => err(key, format!("expected a string, got {v}")),
        }
    }

    pub fn path_opt(&self, key: &str) -> CResult<Option<PathBuf>> {
        Ok(self.string_opt(key)?.map(|s| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                self.dir.join(p)
            }
        }))
    }

    /// A scalar or an array of numbers.
    pub fn f64_list(&self, key: &str) -> CResult<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a.iter().map(|v| num(key, v)).collect::<CResult<Vec<f64>>>().map(Some),
            Some(v) => Ok(Some(vec![num(key, v)?])),
        }
    }

    pub fn usize_list(&self, key: &str) -> CResult<Option<Vec<usize>>> {
        let as_usize = |v: &Value| match v {
            Value::Integer(i) if *i >= 0 => Ok(*i as usize),
            other => err(key, format!("expected nonnegative integers, got {other}")),
        };
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a.iter().map(as_usize).collect::<CResult<Vec<usize>>>().map(Some),
            Some(v) => Ok(Some(vec![as_usize(v)?])),
        }
    }

    /// Points as an array of coordinate arrays; a flat array is read as d = 1.
    pub fn points(&self, key: &str) -> CResult<Option<Vec<Vec<f64>>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Array(c) => c.iter().map(|x| num(key, x)).collect(),
                    x => Ok(vec![num(key, x)?]),
                })
                .collect::<CResult<Vec<Vec<f64>>>>()
                .map(Some),
            Some(v) => err(key, format!("expected an array of points, got {v}")),
        }
    }

    /// Complex numbers as reals or [re, im] pairs.
    pub fn complex_list(&self, key: &str) -> CResult<Option<Vec<Complex64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Array(c) if c.len() == 2 => Ok(Complex64::new(num(key, &c[0])?, num(key, &c[1])?)),
                    Value::Array(_) => err(key, "complex entries must be [re, im]"),
                    x => Ok(Complex64::new(num(key, x)?, 0.0)),
                })
                .collect::<CResult<Vec<Complex64>>>()
                .map(Some),
            Some(v) => err(key, format!("expected an array, got {v}")),
        }
    }

    pub fn matrix(&self, key: &str) -> CResult<Option<DMatrix<f64>>> {
        let rows = match self.points(key)? {
            None => return Ok(None),
            Some(r) => r,
        };
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return err(key, "expected a square matrix as an array of rows");
        }
        Ok(Some(DMatrix::from_fn(n, n, |i, j| rows[i][j])))
    }
}

fn num(key: &str, v: &Value) -> CResult<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        other => err(key, format!("expected a number, got {other}")),
    }
}
