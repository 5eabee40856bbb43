//! Versioned plain-text model archive.
//!
//! ```text
//! semparse-model 1
//! build 0.1.0
//! corpus_sha256 <hex>
//! config <k>
//! <k lines of key = value>
//! vocab question <n>
//! <n tokens, one per line>
//! vocab query <n>
//! ...
//! matrix <name> <rows> <cols>
//! <rows lines of space-separated decimals>
//! ...
//! end
//! ```
//!
//! Numbers use the shortest decimal form that parses back to the same `f64`,
//! so a save/load cycle is bit-exact. Nothing time-dependent is written.

use std::fmt::Write as _;
use std::path::Path;

use super::config::{RunConfig, MODEL_KEYS};
use crate::cnlm::CnlmParams;
use crate::composition::SequenceEncoder;
use crate::error::{Error, Result};
use crate::lexicon::{EmbeddingTable, Vocabulary};
use crate::numerics::Matrix;
use crate::pipeline::SemanticParser;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "semparse-model";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub build: String,
    pub corpus_sha256: String,
    /// Hyperparameters the model was trained with. Paths are not stored.
    pub config: RunConfig,
    pub parser: SemanticParser,
}

fn write_matrix(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "matrix {name} {} {}", m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        for (i, x) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{x}");
        }
        out.push('\n');
    }
}

fn write_vocab(out: &mut String, name: &str, v: &Vocabulary) {
    let _ = writeln!(out, "vocab {name} {}", v.len());
    for t in v.tokens() {
        out.push_str(t);
        out.push('\n');
    }
}

fn row_matrix(v: &[f64]) -> Matrix {
    Matrix::from_vec(1, v.len(), v.to_vec()).expect("finite parameters")
}

impl ModelArchive {
    pub fn new(
        parser: SemanticParser,
        config: &RunConfig,
        corpus_sha256: impl Into<String>,
    ) -> Self {
        let mut stored = RunConfig::default();
        for key in MODEL_KEYS {
            stored
                .set(key, &config.get(key).expect("known key"))
                .expect("values rendered by get parse back");
        }
        // structural fields always describe the parser actually stored
        let t = &mut stored.train;
        t.bicvm.dim = parser.dim();
        t.cnlm.dim = parser.dim();
        t.cnlm.context = parser.cnlm.order();
        t.question_mode = parser.question.mode();
        if let Some(q) = &parser.query {
            t.query_mode = q.mode();
        }
        t.decode = parser.decode;
        t.autoencoder = parser.autoencoder;
        ModelArchive {
            build: env!("CARGO_PKG_VERSION").to_string(),
            corpus_sha256: corpus_sha256.into(),
            config: stored,
            parser,
        }
    }

    pub fn to_text(&self) -> String {
        let p = &self.parser;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "build {}", self.build);
        let _ = writeln!(out, "corpus_sha256 {}", self.corpus_sha256);
        let _ = writeln!(out, "config {}", MODEL_KEYS.len());
        out.push_str(&self.config.render(MODEL_KEYS));
        write_vocab(&mut out, "question", p.question.table.vocab());
        write_vocab(&mut out, "query", p.cnlm.vocab());
        write_matrix(&mut out, "question_embeddings", p.question.table.matrix());
        if let Some(q) = &p.query {
            write_matrix(&mut out, "query_embeddings", q.table.matrix());
        }
        write_matrix(&mut out, "R", p.cnlm.table.matrix());
        for (i, c) in p.cnlm.context.iter().enumerate() {
            write_matrix(&mut out, &format!("C_{}", i + 1), c);
        }
        write_matrix(&mut out, "C_beta", &p.cnlm.cond);
        write_matrix(&mut out, "b_R", &row_matrix(&p.cnlm.bias));
        write_matrix(&mut out, "b_w", &row_matrix(&p.cnlm.word_bias));
        out.push_str("end\n");
        out
    }

    /// Writes the archive in one call, so a failed run leaves no partial model.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(Error::file(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
        ModelArchive::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader {
            lines: text.lines().enumerate().peekable(),
        };

        let (n, header) = r.next_line()?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| parse_err(n, "not a semparse model archive"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::Version {
                found: version.to_string(),
                expected: FORMAT_VERSION,
            });
        }
        let build = r.field("build")?.to_string();
        let corpus_sha256 = r.field("corpus_sha256")?.to_string();
        let config_lines: usize = r.count("config")?;
        let mut config = RunConfig::default();
        for _ in 0..config_lines {
            let (n, line) = r.next_line()?;
            config
                .apply_text(line)
                .map_err(|e| parse_err(n, &e.to_string()))?;
        }

        let question_vocab = r.vocab("question")?;
        let query_vocab = r.vocab("query")?;
        let d = config.train.bicvm.dim;
        let order = config.train.cnlm.context;
        let dq = r.matrix("question_embeddings", question_vocab.len(), d)?;
        let dr = if r.peek_is("matrix query_embeddings ") {
            Some(r.matrix("query_embeddings", query_vocab.len(), d)?)
        } else {
            None
        };
        let big_r = r.matrix("R", query_vocab.len(), d)?;
        let context = (1..order)
            .map(|i| r.matrix(&format!("C_{i}"), d, d))
            .collect::<Result<Vec<_>>>()?;
        let cond = r.matrix("C_beta", d, d)?;
        let bias = r.matrix("b_R", 1, d)?.as_slice().to_vec();
        let word_bias = r.matrix("b_w", 1, query_vocab.len())?.as_slice().to_vec();
        let (n, end) = r.next_line()?;
        if end != "end" {
            return Err(parse_err(n, "expected `end`"));
        }
        if let Some((n, _)) = r.lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(parse_err(n + 1, "trailing content after `end`"));
        }

        let t = &config.train;
        let question =
            SequenceEncoder::new(EmbeddingTable::new(question_vocab, dq)?, t.question_mode);
        let query = match dr {
            Some(m) => Some(SequenceEncoder::new(
                EmbeddingTable::new(query_vocab.clone(), m)?,
                t.query_mode,
            )),
            None => None,
        };
        let cnlm = CnlmParams::new(
            EmbeddingTable::new(query_vocab, big_r)?,
            context,
            cond,
            bias,
            word_bias,
        )?;
        let parser = SemanticParser::new(question, query, cnlm, t.decode, t.autoencoder)?;
        Ok(ModelArchive {
            build,
            corpus_sha256,
            config,
            parser,
        })
    }
}

fn parse_err(line: usize, message: &str) -> Error {
    Error::Parse {
        what: "model archive",
        line,
        message: message.to_string(),
    }
}

struct Reader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Reader<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        match self.lines.next() {
            Some((i, l)) => Ok((i + 1, l)),
            None => Err(Error::Parse {
                what: "model archive",
                line: 0,
                message: "unexpected end of file (truncated archive?)".into(),
            }),
        }
    }

    fn peek_is(&mut self, prefix: &str) -> bool {
        self.lines
            .peek()
            .is_some_and(|(_, l)| l.starts_with(prefix))
    }

    fn field(&mut self, name: &str) -> Result<&'a str> {
        let (n, line) = self.next_line()?;
        line.strip_prefix(name)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| parse_err(n, &format!("expected `{name}`")))
    }

    fn count(&mut self, name: &str) -> Result<usize> {
        let (n, line) = self.next_line()?;
        line.strip_prefix(name)
            .and_then(|rest| rest.strip_prefix(' '))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err(n, &format!("expected `{name} <count>`")))
    }

    fn vocab(&mut self, name: &str) -> Result<Vocabulary> {
        let len = self.count(&format!("vocab {name}"))?;
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            tokens.push(self.next_line()?.1.to_string());
        }
        Vocabulary::from_tokens(tokens)
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<Matrix> {
        let (n, header) = self.next_line()?;
        let dims: Vec<usize> = header
            .strip_prefix("matrix ")
            .and_then(|rest| rest.strip_prefix(name))
            .and_then(|rest| rest.strip_prefix(' '))
            .map(|rest| rest.split(' ').filter_map(|x| x.parse().ok()).collect())
            .ok_or_else(|| parse_err(n, &format!("expected `matrix {name} <rows> <cols>`")))?;
        match dims[..] {
            [r, _] if r != rows => {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    actual: r,
                })
            }
            [_, c] if c != cols => {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: c,
                })
            }
            [_, _] => {}
            _ => {
                return Err(parse_err(
                    n,
                    &format!("expected `matrix {name} <rows> <cols>`"),
                ))
            }
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = self.next_line()?;
            let before = data.len();
            for field in line.split(' ') {
                let x: f64 = field
                    .parse()
                    .map_err(|_| parse_err(n, &format!("bad number {field:?} in {name}")))?;
                data.push(x);
            }
            if data.len() - before != cols {
                return Err(parse_err(
                    n,
                    &format!(
                        "row of {name} has {} entries, expected {cols}",
                        data.len() - before
                    ),
                ));
            }
        }
        Matrix::from_vec(rows, cols, data)
    }
}
