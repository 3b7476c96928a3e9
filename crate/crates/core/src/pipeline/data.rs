use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

/// One dataset line: a concept set, optional part-of-speech tags and an
/// optional reference sentence (or several).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub concepts: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pos: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
}

impl Record {
    /// `target` followed by `references`.
    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.target
            .iter()
            .chain(&self.references)
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub id: String,
    pub generation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedNeighbor {
    pub entity: String,
    pub score: f64,
}

/// Symbolic grounding of one concept set, by entity name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedRecord {
    pub id: String,
    pub concepts: Vec<String>,
    pub entities: Vec<Option<String>>,
    pub neighbors: Vec<Vec<NamedNeighbor>>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).at(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| Error::Data(format!("cannot serialize a record: {e}")))?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).at(path)?;
    f.write_all(&out).at(path)
}

/// Ids become file names, so they are restricted to a safe alphabet.
pub fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Data(format!(
            "record id {id:?} must be non-empty ASCII letters, digits, '-', '_' or '.'"
        )))
    }
}
