//! Pretrained word vectors aligned to a [`Vocabulary`].

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::corpus::{TermId, Vocabulary};
use crate::error::{Error, Result};

const CACHE_MAGIC: &[u8; 8] = b"WGEMBED\0";
const CACHE_VERSION: u32 = 1;

/// Frozen embedding table indexed by vocabulary id. Ids without a vector are
/// flagged missing and compare as similarity 0 against anything.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    data: Vec<f64>,
    present: Vec<bool>,
    norms: Vec<f64>,
}

impl EmbeddingTable {
    /// Creates a table of `vocab_len` missing entries.
    pub fn empty(vocab_len: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; vocab_len * dim],
            present: vec![false; vocab_len],
            norms: vec![0.0; vocab_len],
        }
    }

    pub fn set(&mut self, id: TermId, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::LengthMismatch {
                left: vector.len(),
                right: self.dim,
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding for {id}")));
        }
        let i = id.index();
        self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(vector);
        self.present[i] = true;
        self.norms[i] = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.present.len()
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }

    pub fn vector(&self, id: TermId) -> Option<&[f64]> {
        let i = id.index();
        if *self.present.get(i)? {
            Some(&self.data[i * self.dim..(i + 1) * self.dim])
        } else {
            None
        }
    }

    pub fn is_missing(&self, id: TermId) -> bool {
        !self.present.get(id.index()).copied().unwrap_or(false)
    }

    /// Fraction of vocabulary ids with a loaded vector.
    pub fn coverage(&self) -> f64 {
        if self.present.is_empty() {
            return 0.0;
        }
        self.present.iter().filter(|&&p| p).count() as f64 / self.present.len() as f64
    }

    /// Cosine similarity between two vocabulary entries; 0 when either side is
    /// out of vocabulary, missing, or a zero vector.
    pub fn similarity(&self, a: Option<TermId>, b: Option<TermId>) -> f64 {
        let (Some(a), Some(b)) = (a, b) else {
            return 0.0;
        };
        let (Some(u), Some(v)) = (self.vector(a), self.vector(b)) else {
            return 0.0;
        };
        let (nu, nv) = (self.norms[a.index()], self.norms[b.index()]);
        if nu == 0.0 || nv == 0.0 {
            return 0.0;
        }
        dot(u, v) / (nu * nv)
    }

    /// Binary cache layout (little-endian): magic `WGEMBED\0`, u32 version,
    /// u64 vocabulary length, u64 dim, then per id one presence byte followed
    /// by `dim` f64 values when present.
    pub fn write_cache(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for i in 0..self.len() {
            w.write_all(&[self.present[i] as u8])?;
            if self.present[i] {
                for v in &self.data[i * self.dim..(i + 1) * self.dim] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_cache(mut r: impl Read, vocab: &Vocabulary) -> Result<Self> {
        let bad = |m: &str| Error::parse("embedding cache", 0, m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(read_array(&mut r).map_err(|_| bad("truncated header"))?);
        if version != CACHE_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(read_array(&mut r).map_err(|_| bad("truncated header"))?) as usize;
        let dim = u64::from_le_bytes(read_array(&mut r).map_err(|_| bad("truncated header"))?) as usize;
        if len != vocab.len() {
            return Err(bad(&format!(
                "cache has {len} entries but vocabulary has {}",
                vocab.len()
            )));
        }
        let mut table = Self::empty(len, dim);
        let mut buf = vec![0.0; dim];
        for i in 0..len {
            let [flag] = read_array::<1>(&mut r).map_err(|_| bad("truncated body"))?;
            if flag == 1 {
                for v in buf.iter_mut() {
                    *v = f64::from_le_bytes(read_array(&mut r).map_err(|_| bad("truncated body"))?);
                }
                table.set(TermId(i as u32), &buf)?;
            }
        }
        Ok(table)
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `dot(u, v) / (|u| |v|)`, or 0 when either norm is zero.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Loads word2vec text format: a `count dim` header line followed by
/// `token v1 .. v_dim` lines. Tokens outside the vocabulary are ignored; the
/// first vector seen for a token wins.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(std::io::BufReader::new(file), vocab, &path.display().to_string())
}

pub fn parse_embeddings(reader: impl BufRead, vocab: &Vocabulary, source: &str) -> Result<EmbeddingTable> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((i, line)) => {
                let line = line.map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
                if !line.trim().is_empty() {
                    break (i, line);
                }
            }
            None => return Err(Error::parse(source, 1, "missing `count dim` header")),
        }
    };
    let fields: Vec<&str> = header.1.split_whitespace().collect();
    let dim: usize = match fields.as_slice() {
        [_, dim] => dim
            .parse()
            .map_err(|_| Error::parse(source, header.0 + 1, "dimension is not an integer"))?,
        _ => return Err(Error::parse(source, header.0 + 1, "expected `count dim` header")),
    };
    if dim == 0 {
        return Err(Error::parse(source, header.0 + 1, "dimension must be positive"));
    }

    let mut table = EmbeddingTable::empty(vocab.len(), dim);
    let mut values = Vec::with_capacity(dim);
    for (i, line) in lines {
        let line = line.map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else {
            continue;
        };
        values.clear();
        for p in parts {
            let v: f64 = p
                .parse()
                .map_err(|_| Error::parse(source, i + 1, format!("bad number `{p}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(source, i + 1, "non-finite component"));
            }
            values.push(v);
        }
        if values.len() != dim {
            return Err(Error::parse(
                source,
                i + 1,
                format!("expected {dim} components, found {}", values.len()),
            ));
        }
        if let Some(id) = vocab.id(token) {
            if table.is_missing(id) {
                table.set(id, &values)?;
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, FreqMode};
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn vocab(words: &[&str]) -> Vocabulary {
        let doc: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        build_vocabulary([doc], &BTreeSet::new(), 1, FreqMode::Corpus).unwrap()
    }

    const FILE: &str = "2 3\na 1 0 0\nb 0 1 0\n";

    #[test]
    fn full_coverage() {
        let t = parse_embeddings(FILE.as_bytes(), &vocab(&["a", "b"]), "e").unwrap();
        assert_eq!(t.coverage(), 1.0);
        assert_eq!(t.dim(), 3);
    }

    #[test]
    fn partial_coverage_flags_missing() {
        let v = vocab(&["a", "b", "c"]);
        let t = parse_embeddings(FILE.as_bytes(), &v, "e").unwrap();
        assert!((t.coverage() - 2.0 / 3.0).abs() < 1e-15);
        let c = v.id("c").unwrap();
        assert!(t.is_missing(c));
        assert_eq!(t.similarity(Some(c), v.id("a")), 0.0);
        assert_eq!(t.similarity(v.id("a"), v.id("a")), 1.0);
        assert_eq!(t.similarity(None, v.id("a")), 0.0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_embeddings("2 3\na 1 0\n".as_bytes(), &vocab(&["a"]), "e").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_embeddings("2 3\na 1 0 0\nb 1 x 0\n".as_bytes(), &vocab(&["a"]), "e").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[2.0, 1.0]).unwrap(), 0.0);
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cache_round_trip() {
        let v = vocab(&["a", "b", "c"]);
        let t = parse_embeddings(FILE.as_bytes(), &v, "e").unwrap();
        let mut buf = Vec::new();
        t.write_cache(&mut buf).unwrap();
        let back = EmbeddingTable::read_cache(buf.as_slice(), &v).unwrap();
        assert_eq!(t, back);
        buf[8] = 9;
        assert!(EmbeddingTable::read_cache(buf.as_slice(), &v).is_err());
    }

    proptest! {
        #[test]
        fn cosine_properties(
            u in prop::collection::vec(-10.0f64..10.0, 5),
            v in prop::collection::vec(-10.0f64..10.0, 5),
            alpha in 0.01f64..100.0,
        ) {
            let c = cosine(&u, &v).unwrap();
            prop_assert!(c.abs() <= 1.0 + 1e-12);
            prop_assert_eq!(c, cosine(&v, &u).unwrap());
            let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
            prop_assert!((cosine(&scaled, &v).unwrap() - c).abs() < 1e-12);
        }
    }
}
