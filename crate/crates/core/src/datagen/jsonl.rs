use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::act::{validate_act, ReferenceAct};
use crate::error::{Error, Result};

/// Writes one JSON object per line.
pub fn write_jsonl_to<'a, W, I>(mut writer: W, acts: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a ReferenceAct>,
{
    for act in acts {
        serde_json::to_writer(&mut writer, act)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_jsonl<'a, I>(path: &Path, acts: I) -> Result<()>
where
    I: IntoIterator<Item = &'a ReferenceAct>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_jsonl_to(BufWriter::new(file), acts).map_err(|e| Error::io(path, e))
}

/// Parses acts, checking each record against the schema and the gold
/// consistency rules. Errors name the 1-based line. Blank lines are skipped.
pub fn read_jsonl_from<R: Read>(reader: R) -> Result<Vec<ReferenceAct>> {
    let mut acts = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let act: ReferenceAct =
            serde_json::from_str(&line).map_err(|e| Error::parse(lineno, e.to_string()))?;
        validate_act(&act, usize::MAX).map_err(|msg| Error::parse(lineno, msg))?;
        acts.push(act);
    }
    Ok(acts)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<ReferenceAct>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl_from(file)
}
