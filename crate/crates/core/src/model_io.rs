//! Versioned binary model container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   8 bytes  "ADLBMDL1"
//! version u32
//! variant u8       0 = fixed, 1 = composed
//! seed    u64
//! dims    4 x u32  d_word, d_sub, h_comp, hidden
//! tags    u32 count, then per tag: u32 length + UTF-8 name
//! embedder block
//!   fixed:    u32 n, u32 hash_buckets, u64 hash seed, then the frozen table
//!             as rows/cols/f64 data
//!   composed: u64 byte length + the BPE vocab in its text format
//! params  u32 count, then per parameter: name (u32 length + UTF-8),
//!         u32 rows, u32 cols, rows*cols f64 values in row-major order
//! ```
//!
//! Parameters appear in the model's canonical insertion order; loading
//! validates names and shapes against a freshly constructed skeleton, so a
//! reloaded model is bit-identical to the saved one.

use crate::domain::PREDICTABLE_TAGS;
use crate::embedding::{Embedder, FixedNgramTable};
use crate::subword::{BpeVocab, NgramSpec};
use crate::tagger::{ModelDims, ParserModel, Variant};
use ndarray::Array2;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"ADLBMDL1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("i/o error: {0}")]
    Io(io::Error),
    #[error("model file corrupt: {0}")]
    Corrupt(String),
    #[error("model format version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
}

impl From<io::Error> for ModelIoError {
    fn from(e: io::Error) -> Self {
        // A short read means the file was cut off, not an environment fault.
        if e.kind() == io::ErrorKind::UnexpectedEof {
            ModelIoError::Corrupt("unexpected end of file".into())
        } else {
            ModelIoError::Io(e)
        }
    }
}

fn corrupt(msg: impl Into<String>) -> ModelIoError {
    ModelIoError::Corrupt(msg.into())
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u8(&mut self) -> Result<u8, ModelIoError> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn u32(&mut self) -> Result<u32, ModelIoError> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> Result<u64, ModelIoError> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> Result<f64, ModelIoError> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn string(&mut self) -> Result<String, ModelIoError> {
        let len = self.u32()? as usize;
        if len > 1 << 24 {
            return Err(corrupt("unreasonable string length"));
        }
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| corrupt("invalid UTF-8"))
    }
    fn matrix(&mut self) -> Result<Array2<f64>, ModelIoError> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        if rows.saturating_mul(cols) > 1 << 28 {
            return Err(corrupt("unreasonable matrix size"));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()?);
        }
        Array2::from_shape_vec((rows, cols), data).map_err(|_| corrupt("bad matrix shape"))
    }
}

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.inner.write_all(&[v])
    }
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn string(&mut self, s: &str) -> io::Result<()> {
        self.u32(s.len() as u32)?;
        self.inner.write_all(s.as_bytes())
    }
    fn matrix(&mut self, m: &Array2<f64>) -> io::Result<()> {
        self.u32(m.nrows() as u32)?;
        self.u32(m.ncols() as u32)?;
        for &v in m.iter() {
            self.f64(v)?;
        }
        Ok(())
    }
}

pub fn save_model(model: &ParserModel, path: impl AsRef<Path>) -> Result<(), ModelIoError> {
    let file = File::create(path).map_err(ModelIoError::Io)?;
    let mut w = Writer {
        inner: BufWriter::new(file),
    };
    let mut run = || -> io::Result<()> {
        w.inner.write_all(MAGIC)?;
        w.u32(FORMAT_VERSION)?;
        w.u8(match model.variant() {
            Variant::Fixed => 0,
            Variant::Composed => 1,
        })?;
        w.u64(model.config().seed)?;
        let dims = model.dims();
        w.u32(dims.d_word as u32)?;
        w.u32(dims.d_sub as u32)?;
        w.u32(dims.h_comp as u32)?;
        w.u32(dims.hidden as u32)?;
        w.u32(PREDICTABLE_TAGS.len() as u32)?;
        for tag in PREDICTABLE_TAGS {
            w.string(tag.as_str())?;
        }
        match &model.embedder {
            Embedder::Fixed(table) => {
                let spec = table.spec();
                w.u32(spec.n as u32)?;
                w.u32(spec.hash_buckets as u32)?;
                w.u64(spec.seed)?;
                w.matrix(table.vectors())?;
            }
            Embedder::Composed(composer) => {
                let text = composer.vocab().to_text();
                w.u64(text.len() as u64)?;
                w.inner.write_all(text.as_bytes())?;
            }
        }
        w.u32(model.params.len() as u32)?;
        for id in model.params.ids() {
            w.string(model.params.name(id))?;
            w.matrix(model.params.value(id))?;
        }
        w.inner.flush()
    };
    run().map_err(ModelIoError::Io)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ParserModel, ModelIoError> {
    let file = File::open(path).map_err(ModelIoError::Io)?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };

    let mut magic = [0u8; 8];
    r.inner.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelIoError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let variant = match r.u8()? {
        0 => Variant::Fixed,
        1 => Variant::Composed,
        other => return Err(corrupt(format!("unknown variant byte {other}"))),
    };
    let seed = r.u64()?;
    let dims = ModelDims {
        d_word: r.u32()? as usize,
        d_sub: r.u32()? as usize,
        h_comp: r.u32()? as usize,
        hidden: r.u32()? as usize,
    };
    let tag_count = r.u32()? as usize;
    if tag_count != PREDICTABLE_TAGS.len() {
        return Err(corrupt(format!("expected 8 tags, found {tag_count}")));
    }
    for expected in PREDICTABLE_TAGS {
        let name = r.string()?;
        if name != expected.as_str() {
            return Err(corrupt(format!(
                "tag list mismatch: expected {expected}, found {name}"
            )));
        }
    }

    let mut model = match variant {
        Variant::Fixed => {
            let spec = NgramSpec {
                n: r.u32()? as usize,
                hash_buckets: r.u32()? as usize,
                seed: r.u64()?,
            };
            let table = r.matrix()?;
            if table.dim() != (spec.hash_buckets, dims.d_word) {
                return Err(corrupt("frozen table shape mismatch"));
            }
            let mut model = ParserModel::new_fixed(spec, dims, seed);
            model.embedder = Embedder::Fixed(FixedNgramTable::from_parts(spec, table));
            model
        }
        Variant::Composed => {
            let len = r.u64()? as usize;
            if len > 1 << 28 {
                return Err(corrupt("unreasonable vocab length"));
            }
            let mut buf = vec![0u8; len];
            r.inner.read_exact(&mut buf)?;
            let text = String::from_utf8(buf).map_err(|_| corrupt("vocab not UTF-8"))?;
            let vocab = BpeVocab::from_text(&text)
                .map_err(|e| corrupt(format!("embedded vocab: {e}")))?;
            ParserModel::new_composed(vocab, dims, seed)
        }
    };

    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(corrupt(format!(
            "expected {} parameter blocks, found {count}",
            model.params.len()
        )));
    }
    for id in model.params.ids() {
        let name = r.string()?;
        if name != model.params.name(id) {
            return Err(corrupt(format!(
                "parameter order mismatch: expected {}, found {name}",
                model.params.name(id)
            )));
        }
        let value = r.matrix()?;
        if value.raw_dim() != model.params.value(id).raw_dim() {
            return Err(corrupt(format!("parameter {name} shape mismatch")));
        }
        model.params.value_mut(id).assign(&value);
    }
    let mut trailing = [0u8; 1];
    match r.inner.read(&mut trailing) {
        Ok(0) => {}
        Ok(_) => return Err(corrupt("trailing bytes after parameter blocks")),
        Err(e) => return Err(ModelIoError::Io(e)),
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subword::learn_bpe;
    use std::fs;

    fn sample_composed() -> ParserModel {
        let vocab = learn_bpe(["rue", "des", "lilas", "000", "quebec"], 12);
        let dims = ModelDims {
            d_word: 6,
            d_sub: 4,
            h_comp: 6,
            hidden: 5,
        };
        ParserModel::new_composed(vocab, dims, 77)
    }

    #[test]
    fn save_load_round_trip_preserves_parse_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for model in [
            sample_composed(),
            ParserModel::new_fixed(
                NgramSpec {
                    n: 2,
                    hash_buckets: 32,
                    seed: 4,
                },
                ModelDims {
                    d_word: 6,
                    d_sub: 0,
                    h_comp: 0,
                    hidden: 5,
                },
                78,
            ),
        ] {
            let path = dir.path().join(format!("{}.model", model.variant().as_str()));
            save_model(&model, &path).unwrap();
            let loaded = load_model(&path).unwrap();
            assert_eq!(loaded.config(), model.config());
            let a = model.parse("350 rue des Lilas Ouest Quebec").unwrap();
            let b = loaded.parse("350 rue des Lilas Ouest Quebec").unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        save_model(&sample_composed(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_model(&path), Err(ModelIoError::Corrupt(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        save_model(&sample_composed(), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 9; // bump the version field
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model(&path),
            Err(ModelIoError::Version { found: 9, .. })
        ));
    }

    #[test]
    fn garbage_magic_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        fs::write(&path, b"garbage-not-a-model").unwrap();
        assert!(matches!(load_model(&path), Err(ModelIoError::Corrupt(_))));
    }
}
