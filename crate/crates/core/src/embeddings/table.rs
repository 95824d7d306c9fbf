use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::narrative::Vocabulary;

pub const MAGIC: &[u8; 4] = b"CLEM";
pub const FORMAT_VERSION: u32 = 1;

/// One input vector per vocabulary token, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f32>,
    vocab: Arc<Vocabulary>,
}

impl EmbeddingTable {
    pub fn new(vocab: Arc<Vocabulary>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() != vocab.len() * dim {
            return Err(Error::Dimension(format!(
                "{} values cannot form a {} x {dim} table",
                data.len(),
                vocab.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid("embedding table has non-finite entries".into()));
        }
        Ok(EmbeddingTable { dim, data, vocab })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn row(&self, id: u32) -> &[f32] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(self.vocab.len() as u32).to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8], vocab: Arc<Vocabulary>, origin: &Path) -> Result<Self> {
        let corrupt = |m: &str| Error::Corrupt {
            path: origin.to_path_buf(),
            message: m.to_string(),
        };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::Version(format!(
                "{}: not an embedding file (bad magic)",
                origin.display()
            )));
        }
        if bytes.len() < 16 {
            return Err(corrupt("header shorter than 16 bytes"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let version = word(4);
        if version != FORMAT_VERSION {
            return Err(Error::Version(format!(
                "{}: embedding format version {version}, expected {FORMAT_VERSION}",
                origin.display()
            )));
        }
        let (rows, dim) = (word(8) as usize, word(12) as usize);
        if rows != vocab.len() {
            return Err(Error::Dimension(format!(
                "{}: {rows} rows but the vocabulary has {} tokens",
                origin.display(),
                vocab.len()
            )));
        }
        let body = &bytes[16..];
        if body.len() != rows * dim * 4 {
            return Err(corrupt(&format!(
                "expected {} bytes of matrix data, found {}",
                rows * dim * 4,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Self::new(vocab, dim, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, vocab: Arc<Vocabulary>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, vocab, path)
    }
}

pub fn save_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    table.save(path)
}

pub fn load_embeddings(path: impl AsRef<Path>, vocab: Arc<Vocabulary>) -> Result<EmbeddingTable> {
    EmbeddingTable::load(path, vocab)
}
