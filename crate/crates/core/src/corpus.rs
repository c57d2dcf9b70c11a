//! On-disk corpus format: UTF-8 JSON Lines, one record per line.
//!
//! `{"raw": "...", "tokens": [...], "tags": [...], "country": "XX"}`
//!
//! Tag names are the exact eight strings of [`Tag`](crate::domain::Tag),
//! case-sensitive. Invalid lines are reported with their 1-based line number.

use crate::domain::{DomainError, Tag, TaggedAddress};
use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct TagVisitor;
        impl Visitor<'_> for TagVisitor {
            type Value = Tag;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("one of the eight address tag names")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Tag, E> {
                Tag::from_data_str(v)
                    .ok_or_else(|| E::custom(format!("unknown tag {v:?}")))
            }
        }
        deserializer.deserialize_str(TagVisitor)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
}

impl CorpusError {
    fn schema(line: usize, message: impl fmt::Display) -> Self {
        CorpusError::Schema {
            line,
            message: message.to_string(),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    raw: String,
    tokens: Vec<String>,
    tags: Vec<String>,
    country: String,
}

fn record_from_raw(line_no: usize, rec: RawRecord) -> Result<TaggedAddress, CorpusError> {
    let mut tags = Vec::with_capacity(rec.tags.len());
    for name in &rec.tags {
        let tag = Tag::from_data_str(name)
            .ok_or_else(|| CorpusError::schema(line_no, format!("unknown tag {name:?}")))?;
        tags.push(tag);
    }
    TaggedAddress::new(rec.raw, rec.tokens, tags, rec.country)
        .map_err(|e: DomainError| CorpusError::schema(line_no, e))
}

/// Reads a JSON Lines corpus, validating every record. Blank lines are
/// ignored.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<TaggedAddress>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| CorpusError::schema(line_no, e))?;
        out.push(record_from_raw(line_no, raw)?);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<TaggedAddress>, CorpusError> {
    let file = File::open(path)?;
    read_corpus(BufReader::new(file))
}

pub fn write_corpus<W: Write>(
    mut writer: W,
    records: &[TaggedAddress],
) -> Result<(), CorpusError> {
    for rec in records {
        serde_json::to_writer(&mut writer, rec)
            .map_err(|e| CorpusError::schema(0, e))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_corpus(
    records: &[TaggedAddress],
    path: impl AsRef<Path>,
) -> Result<(), CorpusError> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    write_corpus(&mut writer, records)?;
    writer.flush()?;
    Ok(())
}
