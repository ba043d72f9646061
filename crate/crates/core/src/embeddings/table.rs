use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token → vector map with a fixed dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f64>>,
}

impl TryFrom<RawTable> for EmbeddingTable {
    type Error = Error;

    fn try_from(raw: RawTable) -> Result<Self> {
        let mut t = EmbeddingTable::new(raw.dim);
        for (k, v) in raw.entries {
            t.insert(k, v)?;
        }
        Ok(t)
    }
}

impl From<EmbeddingTable> for RawTable {
    fn from(t: EmbeddingTable) -> Self {
        RawTable {
            dim: t.dim,
            entries: t.entries,
        }
    }
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Adds a vector; rejects empty or duplicate tokens and wrong lengths.
    pub fn insert(&mut self, token: impl Into<String>, vec: Vec<f64>) -> Result<()> {
        let token = token.into();
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(Error::contract(format!("invalid token {token:?}")));
        }
        if vec.len() != self.dim {
            return Err(Error::contract(format!(
                "vector for `{token}` has length {}, table dim is {}",
                vec.len(),
                self.dim
            )));
        }
        if self.entries.contains_key(&token) {
            return Err(Error::contract(format!("duplicate token `{token}`")));
        }
        self.entries.insert(token, vec);
        Ok(())
    }

    pub(crate) fn replace(&mut self, token: &str, vec: Vec<f64>) {
        debug_assert_eq!(vec.len(), self.dim);
        if let Some(slot) = self.entries.get_mut(token) {
            *slot = vec;
        }
    }

    /// Writes the whitespace-separated text format read by [`load_table`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "{} {}", self.len(), self.dim).expect("write to Vec");
        for (token, v) in &self.entries {
            write!(out, "{token}").expect("write to Vec");
            for x in v {
                write!(out, " {x}").expect("write to Vec");
            }
            writeln!(out).expect("write to Vec");
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads an embedding table.
///
/// Line 1 is `<count> <dim>`; each following line is `<token> <v1> ... <vdim>`.
/// Blank lines are ignored. Errors carry the offending 1-based line number.
pub fn load_table(path: &Path) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_table(&text)
}

pub fn parse_table(text: &str) -> Result<EmbeddingTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match fields.as_slice() {
        [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
            (Ok(c), Ok(d)) if d > 0 => (c, d),
            _ => return Err(Error::parse(hline, format!("malformed header `{header}`"))),
        },
        _ => return Err(Error::parse(hline, format!("malformed header `{header}`"))),
    };

    let mut table = EmbeddingTable::new(dim);
    let mut last_line = hline;
    for (lineno, line) in lines {
        last_line = lineno;
        let mut parts = line.split_whitespace();
        let token = parts.next().expect("non-empty line has a field");
        let values: Vec<&str> = parts.collect();
        if values.len() != dim {
            return Err(Error::parse(
                lineno,
                format!("expected {dim} values for `{token}`, found {}", values.len()),
            ));
        }
        let vec = values
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(lineno, format!("invalid number `{v}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if table.contains(token) {
            return Err(Error::parse(lineno, format!("duplicate token `{token}`")));
        }
        table.insert(token, vec).map_err(|e| Error::parse(lineno, e.to_string()))?;
    }
    if table.len() != count {
        return Err(Error::parse(
            last_line,
            format!("header declares {count} rows, found {}", table.len()),
        ));
    }
    Ok(table)
}

/// Object → compatible attributes.
pub type CompatMap = BTreeMap<String, BTreeSet<String>>;

/// Reads a compatibility table: one `<object>: <attr1>,<attr2>,...` line per object.
pub fn load_compat(path: &Path) -> Result<CompatMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_compat(&text)
}

pub fn parse_compat(text: &str) -> Result<CompatMap> {
    let mut map = CompatMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (object, attrs) = line
            .split_once(':')
            .ok_or_else(|| Error::parse(lineno, "expected `<object>: <attr>,...`"))?;
        let object = object.trim();
        if object.is_empty() {
            return Err(Error::parse(lineno, "empty object name"));
        }
        let set: BTreeSet<String> = attrs
            .split(',')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(str::to_owned)
            .collect();
        if map.insert(object.to_owned(), set).is_some() {
            return Err(Error::parse(lineno, format!("duplicate object `{object}`")));
        }
    }
    Ok(map)
}

pub fn write_compat(map: &CompatMap, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (obj, attrs) in map {
        out.push_str(obj);
        out.push_str(": ");
        out.push_str(&attrs.iter().map(String::as_str).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
