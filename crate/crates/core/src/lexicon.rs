//! Vocabularies and embedding tables.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

pub type TokenId = usize;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";

pub const BOS_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const UNK_ID: TokenId = 2;
pub const PAD_ID: TokenId = 3;

const RESERVED: [&str; 4] = [BOS, EOS, UNK, PAD];

pub const DEFAULT_INIT_SCALE: f64 = 0.1;

/// Bidirectional token/id map. Ids 0..4 are always `BOS`, `EOS`, `UNK`, `PAD`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Vocabulary holding only the reserved tokens.
    pub fn reserved() -> Self {
        Vocabulary::from_tokens(RESERVED.iter().map(|s| s.to_string()).collect())
            .expect("reserved tokens are distinct")
    }

    /// Rebuilds a vocabulary from its full id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens.iter().zip(RESERVED).any(|(t, r)| t != r) {
            return Err(Error::InvalidArgument(
                "vocabulary must start with the reserved tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Every token occurring at least `min_count` times, most frequent first,
    /// ties in lexicographic order.
    pub fn build<S, T>(sequences: &[S], min_count: usize) -> Result<Self>
    where
        S: AsRef<[T]>,
        T: AsRef<str>,
    {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be >= 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for seq in sequences {
            for tok in seq.as_ref() {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(tok, n)| *n >= min_count && !RESERVED.contains(tok))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
        Vocabulary::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Never true: the reserved tokens are always present.
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_reserved(id: TokenId) -> bool {
        id < RESERVED.len()
    }

    pub(crate) fn check(&self, id: TokenId) -> Result<()> {
        if id < self.len() {
            Ok(())
        } else {
            Err(Error::TokenOutOfRange {
                id,
                size: self.len(),
            })
        }
    }
}

/// Outcome of a pretrained-embedding import.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PretrainedReport {
    /// Distinct vocabulary rows overwritten.
    pub replaced: usize,
    /// Source lines whose token is not in the vocabulary.
    pub skipped: usize,
}

/// One `d`-dimensional row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    matrix: Matrix,
}

impl EmbeddingTable {
    pub fn new(vocab: Vocabulary, matrix: Matrix) -> Result<Self> {
        if matrix.rows() != vocab.len() {
            return Err(Error::DimensionMismatch {
                expected: vocab.len(),
                actual: matrix.rows(),
            });
        }
        if matrix.cols() == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be >= 1".into(),
            ));
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite("embedding table"));
        }
        Ok(EmbeddingTable { vocab, matrix })
    }

    pub fn zeros(vocab: Vocabulary, dim: usize) -> Result<Self> {
        let rows = vocab.len();
        EmbeddingTable::new(vocab, Matrix::zeros(rows, dim))
    }

    /// Entries i.i.d. uniform in `[-scale, scale]`.
    pub fn init(vocab: Vocabulary, dim: usize, scale: f64, rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be >= 1".into(),
            ));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "init scale must be > 0, got {scale}"
            )));
        }
        let data = (0..vocab.len() * dim)
            .map(|_| rng.uniform_in(-scale, scale))
            .collect();
        let rows = vocab.len();
        EmbeddingTable::new(vocab, Matrix::from_vec(rows, dim, data)?)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.matrix
    }

    pub fn lookup(&self, id: TokenId) -> Result<&[f64]> {
        self.vocab.check(id)?;
        Ok(self.matrix.row(id))
    }

    pub fn row(&self, id: TokenId) -> &[f64] {
        self.matrix.row(id)
    }

    pub fn row_mut(&mut self, id: TokenId) -> &mut [f64] {
        self.matrix.row_mut(id)
    }

    /// Overwrites rows from `token v1 .. vd` lines. The whole source is
    /// validated before any row is touched.
    pub fn load_pretrained<R: BufRead>(&mut self, source: R) -> Result<PretrainedReport> {
        let dim = self.dim();
        let mut updates: Vec<(TokenId, Vec<f64>)> = Vec::new();
        let mut skipped = 0;
        for (lineno, line) in source.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    what: "pretrained embedding",
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
            if values.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: values.len(),
                });
            }
            if !values.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("pretrained embedding"));
            }
            match self.vocab.id(token) {
                Some(id) => updates.push((id, values)),
                None => skipped += 1,
            }
        }
        let mut touched = HashSet::new();
        for (id, values) in updates {
            self.matrix.row_mut(id).copy_from_slice(&values);
            touched.insert(id);
        }
        Ok(PretrainedReport {
            replaced: touched.len(),
            skipped,
        })
    }

    pub fn load_pretrained_file(&mut self, path: &Path) -> Result<PretrainedReport> {
        let file = std::fs::File::open(path).map_err(Error::file(path))?;
        self.load_pretrained(std::io::BufReader::new(file))
    }
}
