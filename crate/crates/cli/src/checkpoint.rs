//! Plain-text checkpoints.
//!
//! ```text
//! asinfer-checkpoint
//! kind posterior
//! version 1
//! config_hash 3f2a...
//! fields 2
//! field mu f64 20
//! 0.0000000000000000e0
//! ...
//! field selector text
//! all
//! end
//! ```
//!
//! Reals are written with 17 significant digits so they reload bit-exactly.
//! Files are written to a temporary sibling and renamed into place.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

pub const MAGIC: &str = "asinfer-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Params,
    Subspace,
    Posterior,
    Ensemble,
    Dataset,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Params => "params",
            Kind::Subspace => "subspace",
            Kind::Posterior => "posterior",
            Kind::Ensemble => "ensemble",
            Kind::Dataset => "dataset",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "params" => Kind::Params,
            "subspace" => Kind::Subspace,
            "posterior" => Kind::Posterior,
            "ensemble" => Kind::Ensemble,
            "dataset" => Kind::Dataset,
            other => return Err(format!("unknown kind `{other}`")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Real { shape: Vec<usize>, data: Vec<f64> },
    Int { shape: Vec<usize>, data: Vec<i64> },
    Text(String),
}

impl Value {
    pub fn reals(data: Vec<f64>) -> Self {
        Value::Real {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn ints(data: Vec<i64>) -> Self {
        Value::Int {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn int(v: i64) -> Self {
        Value::ints(vec![v])
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint, field `{field}`: {detail}")]
    Corrupt { field: String, detail: String },
    #[error("checkpoint version {found} is not supported (expected {VERSION})")]
    Version { found: String },
    #[error("expected a {expected} checkpoint, found {found}")]
    WrongKind { expected: Kind, found: Kind },
    #[error("checkpoint was written under config {found}, current config is {expected}")]
    ConfigMismatch { expected: String, found: String },
}

fn corrupt(field: &str, detail: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt {
        field: field.to_string(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: Kind,
    pub version: u32,
    pub config_hash: String,
    pub fields: Vec<(String, Value)>,
}

impl Checkpoint {
    pub fn new(kind: Kind, config_hash: &str) -> Self {
        Self {
            kind,
            version: VERSION,
            config_hash: config_hash.to_string(),
            fields: Vec::new(),
        }
    }

    pub fn with(mut self, name: &str, value: Value) -> Self {
        self.fields.push((name.to_string(), value));
        self
    }

    pub fn get(&self, name: &str) -> Result<&Value, CheckpointError> {
        self.fields
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v)
            .ok_or_else(|| corrupt(name, "missing"))
    }

    /// Real array with the given shape; `None` entries in `shape` match any extent.
    pub fn reals(&self, name: &str, shape: &[Option<usize>]) -> Result<(&[usize], &[f64]), CheckpointError> {
        match self.get(name)? {
            Value::Real { shape: s, data } => {
                check_shape(name, s, shape)?;
                Ok((s, data))
            }
            _ => Err(corrupt(name, "expected f64 array")),
        }
    }

    pub fn ints(&self, name: &str, shape: &[Option<usize>]) -> Result<(&[usize], &[i64]), CheckpointError> {
        match self.get(name)? {
            Value::Int { shape: s, data } => {
                check_shape(name, s, shape)?;
                Ok((s, data))
            }
            _ => Err(corrupt(name, "expected i64 array")),
        }
    }

    pub fn real(&self, name: &str) -> Result<f64, CheckpointError> {
        Ok(self.reals(name, &[Some(1)])?.1[0])
    }

    pub fn int(&self, name: &str) -> Result<i64, CheckpointError> {
        Ok(self.ints(name, &[Some(1)])?.1[0])
    }

    pub fn count(&self, name: &str) -> Result<usize, CheckpointError> {
        let v = self.int(name)?;
        usize::try_from(v).map_err(|_| corrupt(name, format!("negative count {v}")))
    }

    pub fn text(&self, name: &str) -> Result<&str, CheckpointError> {
        match self.get(name)? {
            Value::Text(t) => Ok(t),
            _ => Err(corrupt(name, "expected text")),
        }
    }

    pub fn expect(&self, kind: Kind, config_hash: &str) -> Result<(), CheckpointError> {
        if self.kind != kind {
            return Err(CheckpointError::WrongKind {
                expected: kind,
                found: self.kind,
            });
        }
        if self.config_hash != config_hash {
            return Err(CheckpointError::ConfigMismatch {
                expected: config_hash.to_string(),
                found: self.config_hash.clone(),
            });
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "kind {}", self.kind).unwrap();
        writeln!(out, "version {}", self.version).unwrap();
        writeln!(out, "config_hash {}", self.config_hash).unwrap();
        writeln!(out, "fields {}", self.fields.len()).unwrap();
        for (name, value) in &self.fields {
            match value {
                Value::Real { shape, data } => {
                    writeln!(out, "field {name} f64 {}", join_shape(shape)).unwrap();
                    for v in data {
                        writeln!(out, "{v:.16e}").unwrap();
                    }
                }
                Value::Int { shape, data } => {
                    writeln!(out, "field {name} i64 {}", join_shape(shape)).unwrap();
                    for v in data {
                        writeln!(out, "{v}").unwrap();
                    }
                }
                Value::Text(t) => {
                    writeln!(out, "field {name} text").unwrap();
                    writeln!(out, "{}", escape(t)).unwrap();
                }
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut lines = text.lines();
        let mut next = |field: &str| lines.next().ok_or_else(|| corrupt(field, "unexpected end of file"));

        if next("header")? != MAGIC {
            return Err(corrupt("header", "not an asinfer checkpoint"));
        }
        let kind = keyed(next("kind")?, "kind")?
            .parse::<Kind>()
            .map_err(|e| corrupt("kind", e))?;
        let version = keyed(next("version")?, "version")?;
        if version != VERSION.to_string() {
            return Err(CheckpointError::Version {
                found: version.to_string(),
            });
        }
        let config_hash = keyed(next("config_hash")?, "config_hash")?.to_string();
        let count: usize = keyed(next("fields")?, "fields")?
            .parse()
            .map_err(|_| corrupt("fields", "bad field count"))?;

        let mut fields = Vec::with_capacity(count);
        for i in 0..count {
            let slot = format!("field #{i}");
            let header = next(&slot)?;
            let parts: Vec<&str> = header.split(' ').collect();
            if parts.len() < 3 || parts[0] != "field" {
                return Err(corrupt(&slot, format!("bad field header `{header}`")));
            }
            let name = parts[1].to_string();
            if fields.iter().any(|(n, _)| *n == name) {
                return Err(corrupt(&name, "duplicate field"));
            }
            let value = match parts[2] {
                "text" if parts.len() == 3 => Value::Text(unescape(next(&name)?)),
                "f64" | "i64" => {
                    let shape = parts[3..]
                        .iter()
                        .map(|d| d.parse::<usize>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| corrupt(&name, format!("bad shape in `{header}`")))?;
                    if shape.is_empty() {
                        return Err(corrupt(&name, "missing shape"));
                    }
                    let len = shape
                        .iter()
                        .try_fold(1usize, |a, &d| a.checked_mul(d))
                        .ok_or_else(|| corrupt(&name, "shape overflows"))?;
                    if parts[2] == "f64" {
                        let mut data = Vec::with_capacity(len.min(1 << 20));
                        for _ in 0..len {
                            let line = next(&name)?;
                            data.push(line.parse::<f64>().map_err(|_| corrupt(&name, format!("bad number `{line}`")))?);
                        }
                        Value::Real { shape, data }
                    } else {
                        let mut data = Vec::with_capacity(len.min(1 << 20));
                        for _ in 0..len {
                            let line = next(&name)?;
                            data.push(line.parse::<i64>().map_err(|_| corrupt(&name, format!("bad integer `{line}`")))?);
                        }
                        Value::Int { shape, data }
                    }
                }
                other => return Err(corrupt(&name, format!("unknown field type `{other}`"))),
            };
            fields.push((name, value));
        }
        if next("end")? != "end" {
            return Err(corrupt("end", "missing end marker (file has extra data or wrong shape)"));
        }
        if lines.next().is_some() {
            return Err(corrupt("end", "trailing data after end marker"));
        }
        Ok(Self {
            kind,
            version: VERSION,
            config_hash,
            fields,
        })
    }
}

fn keyed<'a>(line: &'a str, key: &str) -> Result<&'a str, CheckpointError> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| corrupt(key, format!("expected `{key} <value>`, got `{line}`")))
}

fn check_shape(name: &str, actual: &[usize], expected: &[Option<usize>]) -> Result<(), CheckpointError> {
    let ok = actual.len() == expected.len()
        && actual.iter().zip(expected).all(|(a, e)| e.is_none_or(|e| e == *a));
    if !ok {
        let want: Vec<String> = expected
            .iter()
            .map(|e| e.map_or("*".to_string(), |d| d.to_string()))
            .collect();
        return Err(corrupt(name, format!("shape {actual:?} does not match [{}]", want.join(", "))));
    }
    Ok(())
}

fn join_shape(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ")
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn save_checkpoint(c: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    write_atomic(path, c.render().as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::parse(&text)
}

/// Writes `bytes` to a temporary sibling, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}
