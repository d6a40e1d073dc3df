//! Pre-trained word vectors in GloVe text format and sentence encoding.
//!
//! Each line of an embedding file holds a token followed by `dim` decimal
//! numbers, separated by single spaces. There is no header. Tokens that are
//! missing from the table are encoded with the mean of every vector read from
//! the file.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::math::Vector;

/// Shared, immutable word vector. Encoded sentences hold these so that a
/// corpus does not copy one vector per token occurrence.
pub type WordVector = Arc<[f64]>;

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<WordVector>,
    oov: WordVector,
    rows_read: usize,
}

impl EmbeddingTable {
    /// Builds a table from in-memory entries. Later duplicates are ignored
    /// for lookup but still count towards the OOV mean.
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut builder = Builder::new(dim);
        for (i, (token, values)) in entries.into_iter().enumerate() {
            if values.len() != dim {
                return Err(Error::Format(format!(
                    "entry {} has {} components, expected {dim}",
                    i + 1,
                    values.len()
                )));
            }
            builder.add(token.into(), values, true);
        }
        builder.finish()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of distinct tokens stored.
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Number of rows parsed from the source, including rows not stored.
    pub fn rows_read(&self) -> usize {
        self.rows_read
    }

    pub fn oov_vector(&self) -> &[f64] {
        &self.oov
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| &*self.vectors[i])
    }

    fn shared(&self, token: &str) -> WordVector {
        match self.index.get(token) {
            Some(&i) => Arc::clone(&self.vectors[i]),
            None => Arc::clone(&self.oov),
        }
    }

    /// Encodes tokens as owned vectors, substituting the OOV vector.
    pub fn encode_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<Vector>> {
        Ok(self
            .encode(tokens)?
            .iter()
            .map(|v| Vector::from(v.to_vec()))
            .collect())
    }

    /// Encodes tokens as shared vectors.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<WordVector>> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("cannot encode an empty token list".into()));
        }
        Ok(tokens.iter().map(|t| self.shared(t.as_ref())).collect())
    }

    /// Iterates over stored `(token, vector)` pairs in file order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &[f64])> {
        let mut tokens: Vec<(&str, usize)> =
            self.index.iter().map(|(t, &i)| (t.as_str(), i)).collect();
        tokens.sort_by_key(|&(_, i)| i);
        tokens
            .into_iter()
            .map(move |(t, i)| (t, &*self.vectors[i]))
    }
}

struct Builder {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<WordVector>,
    sum: Vec<f64>,
    rows_read: usize,
}

impl Builder {
    fn new(dim: usize) -> Self {
        Builder {
            dim,
            index: HashMap::new(),
            vectors: Vec::new(),
            sum: vec![0.0; dim],
            rows_read: 0,
        }
    }

    fn add(&mut self, token: String, values: Vec<f64>, keep: bool) {
        for (s, v) in self.sum.iter_mut().zip(&values) {
            *s += v;
        }
        self.rows_read += 1;
        if keep && !self.index.contains_key(&token) {
            self.index.insert(token, self.vectors.len());
            self.vectors.push(values.into());
        }
    }

    fn finish(self) -> Result<EmbeddingTable> {
        if self.rows_read == 0 {
            return Err(Error::Format("no vectors to average".into()));
        }
        let n = self.rows_read as f64;
        let oov: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        Ok(EmbeddingTable {
            dim: self.dim,
            index: self.index,
            vectors: self.vectors,
            oov: oov.into(),
            rows_read: self.rows_read,
        })
    }
}

/// Loads every row of a GloVe-format text file.
pub fn load_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingTable> {
    load_embeddings_restricted(path, dim, None)
}

/// Loads a GloVe-format text file, storing only tokens in `vocab` when given.
/// The OOV vector is the mean over all rows in the file either way.
pub fn load_embeddings_restricted(
    path: impl AsRef<Path>,
    dim: usize,
    vocab: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), dim, vocab).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_embeddings<R: BufRead>(
    mut reader: R,
    dim: usize,
    vocab: Option<&HashSet<String>>,
) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    let mut builder = Builder::new(dim);
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io("<embeddings>", e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let line = String::from_utf8_lossy(&buf);
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        let (token, values) = parse_row(line, dim, line_no)?;
        let keep = vocab.is_none_or(|v| v.contains(&token));
        builder.add(token, values, keep);
    }
    builder.finish()
}

/// Splits a row into token and components. Tokens may contain spaces (some
/// GloVe releases have them) as long as the piece before the numeric tail is
/// not itself a number.
fn parse_row(line: &str, dim: usize, line_no: usize) -> Result<(String, Vec<f64>)> {
    let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
    if fields.len() < dim + 1 {
        return Err(Error::Format(format!(
            "line {line_no}: expected a token and {dim} components, found {} fields",
            fields.len()
        )));
    }
    let split = fields.len() - dim;
    if split > 1 && fields[split - 1].parse::<f64>().is_ok() {
        return Err(Error::Format(format!(
            "line {line_no}: expected {dim} components, found {}",
            fields.len() - 1
        )));
    }
    let mut values = Vec::with_capacity(dim);
    for f in &fields[split..] {
        let v: f64 = f.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("`{f}` is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("non-finite component `{f}`"),
            });
        }
        values.push(v);
    }
    Ok((fields[..split].join(" "), values))
}

/// Lowercases, splits on whitespace and strips ASCII punctuation from both
/// ends of each token. Empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}
