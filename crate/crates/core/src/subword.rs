//! Subword machinery: byte-pair-encoding merge learning and segmentation,
//! digit normalization, and character n-gram extraction.
//!
//! Two independent word decompositions live here. The BPE path learns greedy
//! merges of the most frequent adjacent symbol pair over a training corpus and
//! segments words with them (digits normalized to `0` first). The n-gram path
//! slices a word into consecutive fixed-length character windows and is used
//! with a hashed, frozen embedding table.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

/// End-of-word marker appended to every symbol sequence before merging.
pub const EOW: &str = "</w>";
/// Printable name of the unknown-subword symbol.
pub const UNK_SYMBOL: &str = "<unk>";

/// Replaces every decimal digit with `'0'`; all other characters pass through.
/// Applied on the BPE path before learning and before segmentation.
pub fn normalize_digits(word: &str) -> String {
    word.chars()
        .map(|c| if c.is_ascii_digit() { '0' } else { c })
        .collect()
}

/// Character n-gram extraction parameters for the hashed embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NgramSpec {
    pub n: usize,
    pub hash_buckets: usize,
    pub seed: u64,
}

impl Default for NgramSpec {
    fn default() -> Self {
        NgramSpec {
            n: 2,
            hash_buckets: 4096,
            seed: 0x6e6772616d,
        }
    }
}

impl NgramSpec {
    /// Bucket index for a gram. FNV-1a over the UTF-8 bytes, mixed with the
    /// spec seed so different tables disagree on collisions.
    pub fn bucket(&self, gram: &str) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for b in gram.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x1_0000_0000_01b3);
        }
        (h % self.hash_buckets as u64) as usize
    }
}

/// All consecutive length-n character substrings of the word, spaces removed
/// first. Words shorter than n have no grams.
pub fn char_ngrams(word: &str, spec: &NgramSpec) -> Vec<String> {
    let chars: Vec<char> = word.chars().filter(|c| !c.is_whitespace()).collect();
    if chars.len() < spec.n {
        return Vec::new();
    }
    chars
        .windows(spec.n)
        .map(|w| w.iter().collect())
        .collect()
}

pub type SubwordId = u32;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("vocab file corrupt: {0}")]
    Corrupt(String),
    #[error("vocab format version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
}

const VOCAB_FORMAT_VERSION: u32 = 1;

/// Learned BPE vocabulary: the ordered merge list plus a dense symbol table.
///
/// Symbol ids: 0 is the unknown symbol, 1 is the end-of-word marker, then all
/// initial characters in sorted order, then one symbol per merge in learning
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct BpeVocab {
    merges: Vec<(String, String)>,
    symbols: Vec<String>,
    ids: HashMap<String, SubwordId>,
    requested_merges: usize,
}

impl BpeVocab {
    pub fn unk_id(&self) -> SubwordId {
        0
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn num_requested_merges(&self) -> usize {
        self.requested_merges
    }

    pub fn symbol(&self, id: SubwordId) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, symbol: &str) -> Option<SubwordId> {
        self.ids.get(symbol).copied()
    }

    /// Segments a word into subword symbol strings: normalize digits, split
    /// into characters plus the end-of-word marker, then apply every merge in
    /// learned order. Characters unknown to the table stay as single-character
    /// symbols, so concatenating the result (minus the marker) always
    /// reproduces the normalized word.
    pub fn segment_symbols(&self, word: &str) -> Vec<String> {
        let normalized = normalize_digits(word);
        let mut syms: Vec<String> = normalized.chars().map(String::from).collect();
        syms.push(EOW.to_string());
        for (a, b) in &self.merges {
            if syms.len() < 2 {
                break;
            }
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == *a && syms[i + 1] == *b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = merged;
        }
        syms
    }

    /// Segments a word into subword ids; symbols missing from the table map to
    /// the unknown id.
    pub fn segment(&self, word: &str) -> Vec<SubwordId> {
        self.segment_symbols(word)
            .iter()
            .map(|s| self.id_of(s).unwrap_or(0))
            .collect()
    }

    /// Versioned text serialization. Bit-exact round trip.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "bpevocab {} {} {}",
            VOCAB_FORMAT_VERSION, self.requested_merges, EOW
        );
        let _ = writeln!(out, "merges {}", self.merges.len());
        for (a, b) in &self.merges {
            let _ = writeln!(out, "{a} {b}");
        }
        let _ = writeln!(out, "symbols {}", self.symbols.len());
        for (i, s) in self.symbols.iter().enumerate() {
            let _ = writeln!(out, "{s} {i}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let corrupt = |m: &str| VocabError::Corrupt(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| corrupt("missing header"))?;
        let mut parts = header.split(' ');
        if parts.next() != Some("bpevocab") {
            return Err(corrupt("bad magic"));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("bad version field"))?;
        if version != VOCAB_FORMAT_VERSION {
            return Err(VocabError::Version {
                found: version,
                expected: VOCAB_FORMAT_VERSION,
            });
        }
        let requested_merges: usize = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("bad merge count field"))?;
        if parts.next() != Some(EOW) {
            return Err(corrupt("unexpected end-of-word marker"));
        }

        let merges_header = lines.next().ok_or_else(|| corrupt("missing merges header"))?;
        let n_merges: usize = merges_header
            .strip_prefix("merges ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("bad merges header"))?;
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let line = lines.next().ok_or_else(|| corrupt("truncated merge list"))?;
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| corrupt("malformed merge line"))?;
            merges.push((a.to_string(), b.to_string()));
        }

        let symbols_header = lines.next().ok_or_else(|| corrupt("missing symbols header"))?;
        let n_symbols: usize = symbols_header
            .strip_prefix("symbols ")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| corrupt("bad symbols header"))?;
        let mut symbols = Vec::with_capacity(n_symbols);
        for i in 0..n_symbols {
            let line = lines.next().ok_or_else(|| corrupt("truncated symbol table"))?;
            let (sym, id) = line
                .rsplit_once(' ')
                .ok_or_else(|| corrupt("malformed symbol line"))?;
            if id.parse::<usize>() != Ok(i) {
                return Err(corrupt("symbol ids out of order"));
            }
            symbols.push(sym.to_string());
        }
        if lines.next().is_some() {
            return Err(corrupt("trailing data"));
        }
        let ids = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as SubwordId))
            .collect();
        Ok(BpeVocab {
            merges,
            symbols,
            ids,
            requested_merges,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VocabError> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

/// Learns `num_merges` greedy merges over the corpus. Each word is split into
/// characters with an end-of-word marker appended; at every step the most
/// frequent adjacent symbol pair is merged, ties broken by the
/// lexicographically smallest pair. Stops early once no pair occurs twice.
pub fn learn_bpe<I, S>(words: I, num_merges: usize) -> BpeVocab
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    // Collapse the corpus to unique normalized words with counts, in sorted
    // order so iteration is deterministic.
    let mut word_counts: HashMap<String, u64> = HashMap::new();
    for w in words {
        let norm = normalize_digits(w.as_ref());
        if !norm.is_empty() {
            *word_counts.entry(norm).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(Vec<String>, u64)> = {
        let mut sorted: Vec<_> = word_counts.into_iter().collect();
        sorted.sort();
        sorted
            .into_iter()
            .map(|(w, c)| {
                let mut syms: Vec<String> = w.chars().map(String::from).collect();
                syms.push(EOW.to_string());
                (syms, c)
            })
            .collect()
    };

    let mut initial_symbols: Vec<String> = entries
        .iter()
        .flat_map(|(syms, _)| syms.iter().cloned())
        .collect();
    initial_symbols.sort();
    initial_symbols.dedup();

    let mut merges: Vec<(String, String)> = Vec::new();
    for _ in 0..num_merges {
        let mut pair_counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (syms, count) in &entries {
            for pair in syms.windows(2) {
                *pair_counts
                    .entry((pair[0].as_str(), pair[1].as_str()))
                    .or_insert(0) += count;
            }
        }
        let best = pair_counts
            .into_iter()
            .filter(|&(_, c)| c >= 2)
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        let Some(((a, b), _)) = best else { break };
        let (a, b) = (a.to_string(), b.to_string());
        let joined = format!("{a}{b}");
        for (syms, _) in &mut entries {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == a && syms[i + 1] == b {
                    syms[i] = joined.clone();
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        merges.push((a, b));
    }

    let mut symbols = Vec::with_capacity(2 + initial_symbols.len() + merges.len());
    symbols.push(UNK_SYMBOL.to_string());
    let eow_pos = initial_symbols.iter().position(|s| s == EOW);
    if let Some(pos) = eow_pos {
        initial_symbols.remove(pos);
    }
    symbols.push(EOW.to_string());
    symbols.extend(initial_symbols);
    symbols.extend(merges.iter().map(|(a, b)| format!("{a}{b}")));
    // A merge output can collide with a later one only if merges repeat, which
    // the greedy loop never does; initial chars are unique by construction.
    let ids: HashMap<String, SubwordId> = symbols
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i as SubwordId))
        .collect();

    BpeVocab {
        merges,
        symbols,
        ids,
        requested_merges: num_merges,
    }
}
