//! Aligned question/query corpora: TSV loading, tokenization, splitting and
//! a synthetic generator.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lexicon::{TokenId, Vocabulary, UNK_ID};
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pair {
    pub question: Vec<String>,
    pub query: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pairs: Vec<Pair>,
    provenance: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

/// Non-fatal findings from [`ParallelCorpus::parse`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub malformed: Vec<LineIssue>,
    /// Lines whose query has unbalanced parentheses.
    pub unbalanced: Vec<usize>,
}

impl LoadReport {
    fn diagnostics(&self) -> String {
        let mut out = String::new();
        for issue in &self.malformed {
            let _ = writeln!(out, "  line {}: {}", issue.line, issue.message);
        }
        out
    }
}

/// Lowercases, splits on whitespace and strips ASCII punctuation (other than
/// apostrophes) from both ends of every token.
pub fn tokenize_question(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| {
            raw.trim_matches(|c: char| c.is_ascii_punctuation() && c != '\'')
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Splits on whitespace, with `(`, `)` and `,` always standalone tokens.
pub fn tokenize_query(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        for c in chunk.chars() {
            if matches!(c, '(' | ')' | ',') {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            } else {
                current.push(c);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

pub fn parens_balanced<S: AsRef<str>>(tokens: &[S]) -> bool {
    let mut depth: i64 = 0;
    for t in tokens {
        match t.as_ref() {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

/// Maps tokens to ids, substituting `UNK` for unknown tokens. Returns the ids
/// and the number of substitutions.
pub fn encode_tokens<S: AsRef<str>>(vocab: &Vocabulary, tokens: &[S]) -> (Vec<TokenId>, usize) {
    let mut unknown = 0;
    let ids = tokens
        .iter()
        .map(|t| {
            vocab.id(t.as_ref()).unwrap_or_else(|| {
                unknown += 1;
                UNK_ID
            })
        })
        .collect();
    (ids, unknown)
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<Pair>, provenance: impl Into<String>) -> Result<Self> {
        if let Some(i) = pairs
            .iter()
            .position(|p| p.question.is_empty() || p.query.is_empty())
        {
            return Err(Error::InvalidArgument(format!(
                "pair {i} has an empty side"
            )));
        }
        Ok(ParallelCorpus {
            pairs,
            provenance: provenance.into(),
        })
    }

    /// Parses TSV text: `question<TAB>query` per line, `#` comments and
    /// blank lines skipped.
    pub fn parse(text: &str, provenance: &str) -> Result<(Self, LoadReport)> {
        let mut pairs = Vec::new();
        let mut report = LoadReport::default();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut issue = |message: &str| {
                report.malformed.push(LineIssue {
                    line: lineno,
                    message: message.to_string(),
                })
            };
            let Some((q, r)) = line.split_once('\t') else {
                issue("no TAB separator");
                continue;
            };
            if r.contains('\t') {
                issue("more than one TAB");
                continue;
            }
            let question = tokenize_question(q);
            let query = tokenize_query(r);
            if question.is_empty() {
                issue("empty question");
                continue;
            }
            if query.is_empty() {
                issue("empty query");
                continue;
            }
            if !parens_balanced(&query) {
                log::warn!("{provenance}:{lineno}: unbalanced parentheses in query");
                report.unbalanced.push(lineno);
            }
            pairs.push(Pair { question, query });
        }
        if pairs.is_empty() {
            return Err(Error::NoValidPairs {
                path: provenance.to_string(),
                diagnostics: report.diagnostics(),
            });
        }
        Ok((ParallelCorpus::new(pairs, provenance)?, report))
    }

    pub fn load(path: &Path) -> Result<(Self, LoadReport)> {
        let bytes = std::fs::read(path).map_err(Error::file(path))?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
            what: "corpus (not UTF-8)",
            line: 0,
            message: e.to_string(),
        })?;
        ParallelCorpus::parse(&text, &path.display().to_string())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            let _ = writeln!(out, "{}\t{}", p.question.join(" "), p.query.join(" "));
        }
        out
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_tsv().as_bytes())?;
        Ok(())
    }

    pub fn pairs(&self) -> &[Pair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Hex SHA-256 of the canonical TSV rendering.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_tsv().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Question and query vocabularies.
    pub fn vocabularies(&self, min_count: usize) -> Result<(Vocabulary, Vocabulary)> {
        let questions: Vec<&[String]> = self.pairs.iter().map(|p| p.question.as_slice()).collect();
        let queries: Vec<&[String]> = self.pairs.iter().map(|p| p.query.as_slice()).collect();
        Ok((
            Vocabulary::build(&questions, min_count)?,
            Vocabulary::build(&queries, min_count)?,
        ))
    }

    pub fn encode(&self, questions: &Vocabulary, queries: &Vocabulary) -> EncodedCorpus {
        EncodedCorpus {
            pairs: self
                .pairs
                .iter()
                .map(|p| EncodedPair {
                    question: encode_tokens(questions, &p.question).0,
                    query: encode_tokens(queries, &p.query).0,
                })
                .collect(),
        }
    }

    /// Seeded shuffle, then contiguous train/dev/test cuts. Sizes are
    /// allocated by largest remainder so each is within one pair of its
    /// exact share.
    pub fn split(&self, ratios: [f64; 3], seed: u64) -> Result<[ParallelCorpus; 3]> {
        if ratios.iter().any(|r| r.is_nan() || *r <= 0.0)
            || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidArgument(format!(
                "split ratios must be positive and sum to 1, got {ratios:?}"
            )));
        }
        let n = self.len();
        let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
        let mut sizes: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut left = n - sizes.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            sizes[i] += 1;
            left -= 1;
        }
        if n >= 3 {
            for (size, name) in sizes.iter().zip(["train", "dev", "test"]) {
                if *size == 0 {
                    return Err(Error::EmptySplit(name));
                }
            }
        }
        let mut shuffled = self.pairs.clone();
        Rng::new(seed).shuffle(&mut shuffled);
        let dev_start = sizes[0];
        let test_start = sizes[0] + sizes[1];
        let test = shuffled.split_off(test_start);
        let dev = shuffled.split_off(dev_start);
        let provenance = |name: &str| format!("{}[{name} seed={seed}]", self.provenance);
        Ok([
            ParallelCorpus {
                pairs: shuffled,
                provenance: provenance("train"),
            },
            ParallelCorpus {
                pairs: dev,
                provenance: provenance("dev"),
            },
            ParallelCorpus {
                pairs: test,
                provenance: provenance("test"),
            },
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub question: Vec<TokenId>,
    pub query: Vec<TokenId>,
}

/// A corpus mapped onto vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCorpus {
    pub pairs: Vec<EncodedPair>,
}

impl EncodedCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word(rng: &mut Rng, syllables: usize) -> String {
    let mut w = String::with_capacity(syllables * 2);
    for _ in 0..syllables {
        w.push(CONSONANTS[rng.below(CONSONANTS.len())] as char);
        w.push(VOWELS[rng.below(VOWELS.len())] as char);
    }
    w
}

fn pseudo_words(rng: &mut Rng, count: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    let mut syllables = 2;
    let mut misses = 0;
    while out.len() < count {
        let w = pseudo_word(rng, syllables);
        if taken.insert(w.clone()) {
            out.push(w);
            misses = 0;
        } else {
            misses += 1;
            if misses > 64 {
                syllables += 1;
                misses = 0;
            }
        }
    }
    out
}

/// One pair per (relation, entity) combination:
///
/// | question                  | query                             |
/// |---------------------------|-----------------------------------|
/// | `what RELATION ENTITY`    | `answer ( RELATION ( ENTITY ) )`  |
/// | `who RELATION ENTITY`     | `answer ( RELATION ( ENTITY ) )`  |
///
/// The symbol inventories, the template of each pair and the pair order all
/// come from `seed`.
pub fn generate_toy_corpus(
    n_entities: usize,
    n_relations: usize,
    seed: u64,
) -> Result<ParallelCorpus> {
    if n_entities == 0 || n_relations == 0 {
        return Err(Error::InvalidArgument(
            "toy corpus needs at least one entity and one relation".into(),
        ));
    }
    let mut rng = Rng::new(seed);
    let mut taken: HashSet<String> = ["what", "who", "answer"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let entities = pseudo_words(&mut rng, n_entities, &mut taken);
    let relations = pseudo_words(&mut rng, n_relations, &mut taken);
    let mut pairs = Vec::with_capacity(n_entities * n_relations);
    for rel in &relations {
        for ent in &entities {
            let wh = if rng.below(2) == 0 { "what" } else { "who" };
            pairs.push(Pair {
                question: vec![wh.into(), rel.clone(), ent.clone()],
                query: tokenize_query(&format!("answer ( {rel} ( {ent} ) )")),
            });
        }
    }
    rng.shuffle(&mut pairs);
    ParallelCorpus::new(pairs, format!("synthetic({seed})"))
}
