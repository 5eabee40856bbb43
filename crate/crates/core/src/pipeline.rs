//! Two-stage training, question-to-query generation and evaluation.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::bicvm::{train_bicvm, BiCvmHyper, BiCvmParams};
use crate::cnlm::{train_cnlm, CnlmHyper, CnlmParams, Hypothesis};
use crate::composition::{CompositionMode, SequenceEncoder};
use crate::corpus::{encode_tokens, tokenize_question, EncodedCorpus, ParallelCorpus};
use crate::error::{ensure_dim, Error, Result};
use crate::lexicon::{PretrainedReport, TokenId};
use crate::numerics::{squared_euclidean, Rng, Vector};

/// Sub-streams of the master seed.
pub mod streams {
    pub const BICVM_INIT: u64 = 1;
    pub const CNLM_INIT: u64 = 2;
    pub const SPLIT: u64 = 3;
    /// Added to the round index.
    pub const BICVM_ROUND: u64 = 100;
    /// Added to the round index.
    pub const CNLM_ROUND: u64 = 200;
}

/// First draw of stream `stream` under `seed`.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    Rng::stream(seed, stream).next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentPair {
    pub latent: Vector,
    pub query: Vec<TokenId>,
}

/// Question latents paired with query token ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatentCorpus {
    pairs: Vec<LatentPair>,
}

impl LatentCorpus {
    pub fn new(pairs: Vec<LatentPair>) -> Result<Self> {
        if let Some(first) = pairs.first() {
            for p in &pairs {
                ensure_dim(first.latent.dim(), p.latent.dim())?;
                if p.query.is_empty() {
                    return Err(Error::Empty("latent corpus query"));
                }
            }
        }
        Ok(LatentCorpus { pairs })
    }

    pub fn pairs(&self) -> &[LatentPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `⟨g(Q), R⟩` for every pair, order preserved.
pub fn derive_latent_corpus(corpus: &EncodedCorpus, params: &BiCvmParams) -> Result<LatentCorpus> {
    let pairs = corpus
        .pairs
        .iter()
        .map(|p| {
            Ok(LatentPair {
                latent: params.question.encode(&p.question)?,
                query: p.query.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LatentCorpus::new(pairs)
}

/// `⟨g(Q) + h(R), R⟩`, the training-time conditioning of the autoencoder
/// variant.
pub fn derive_autoencoder_corpus(
    corpus: &EncodedCorpus,
    params: &BiCvmParams,
) -> Result<LatentCorpus> {
    let pairs = corpus
        .pairs
        .iter()
        .map(|p| {
            let g = params.question.encode(&p.question)?;
            let h = params.query.encode(&p.query)?;
            Ok(LatentPair {
                latent: g.add(&h)?,
                query: p.query.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LatentCorpus::new(pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStrategy {
    Greedy,
    Beam,
}

impl fmt::Display for DecodeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecodeStrategy::Greedy => "greedy",
            DecodeStrategy::Beam => "beam",
        })
    }
}

impl FromStr for DecodeStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(DecodeStrategy::Greedy),
            "beam" => Ok(DecodeStrategy::Beam),
            other => Err(Error::InvalidArgument(format!(
                "unknown decode strategy {other:?} (expected greedy or beam)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeConfig {
    pub strategy: DecodeStrategy,
    /// Ignored by greedy decoding.
    pub width: usize,
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: DecodeStrategy::Beam,
            width: 5,
            max_len: 40,
        }
    }
}

/// The inference network: question encoder `g` over `D_Q` feeding the
/// conditional language model. The query encoder is kept only for
/// diagnostics and is never used to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticParser {
    pub question: SequenceEncoder,
    pub query: Option<SequenceEncoder>,
    pub cnlm: CnlmParams,
    pub decode: DecodeConfig,
    /// Trained with `g(Q) + h(R)` conditioning.
    pub autoencoder: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub query: Vec<String>,
    pub log_prob: f64,
    /// Question tokens mapped to `UNK`.
    pub unknown: usize,
}

impl SemanticParser {
    pub fn new(
        question: SequenceEncoder,
        query: Option<SequenceEncoder>,
        cnlm: CnlmParams,
        decode: DecodeConfig,
        autoencoder: bool,
    ) -> Result<Self> {
        ensure_dim(question.dim(), cnlm.dim())?;
        if let Some(q) = &query {
            ensure_dim(question.dim(), q.dim())?;
            ensure_dim(cnlm.vocab_size(), q.table.vocab().len())?;
        }
        Ok(SemanticParser {
            question,
            query,
            cnlm,
            decode,
            autoencoder,
        })
    }

    pub fn dim(&self) -> usize {
        self.question.dim()
    }

    pub fn bicvm(&self) -> Option<BiCvmParams> {
        self.query.as_ref().map(|q| BiCvmParams {
            question: self.question.clone(),
            query: q.clone(),
        })
    }

    /// Drops `h` and `D_R`.
    pub fn without_query_side(mut self) -> Self {
        self.query = None;
        self
    }

    pub fn latent(&self, question: &[TokenId]) -> Result<Vector> {
        self.question.encode(question)
    }

    pub fn decode_latent(&self, latent: &[f64]) -> Result<Hypothesis> {
        match self.decode.strategy {
            DecodeStrategy::Greedy => self.cnlm.decode_greedy(Some(latent), self.decode.max_len),
            DecodeStrategy::Beam => {
                let mut beams =
                    self.cnlm
                        .decode_beam(Some(latent), self.decode.width, self.decode.max_len)?;
                // decode_beam never returns an empty list for width, max_len >= 1
                Ok(beams.swap_remove(0))
            }
        }
    }

    /// Generates a query for an already tokenized question.
    pub fn generate(&self, question: &[String]) -> Result<Generation> {
        if question.is_empty() {
            return Err(Error::Empty("question"));
        }
        let (ids, unknown) = encode_tokens(self.question.table.vocab(), question);
        if unknown == question.len() {
            log::warn!(
                "every token of question {:?} is out of vocabulary",
                question.join(" ")
            );
        }
        let latent = self.latent(&ids)?;
        let best = self.decode_latent(latent.as_slice())?;
        let vocab = self.cnlm.vocab();
        let query = best
            .tokens()
            .into_iter()
            .map(|id| vocab.token(id).unwrap_or_default().to_string())
            .collect();
        Ok(Generation {
            query,
            log_prob: best.log_prob,
            unknown,
        })
    }

    /// Tokenizes raw question text and generates.
    pub fn generate_text(&self, question: &str) -> Result<Generation> {
        self.generate(&tokenize_question(question))
    }
}

pub fn generate_query(question: &[String], parser: &SemanticParser) -> Result<Generation> {
    parser.generate(question)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub question: Vec<String>,
    pub gold: Vec<String>,
    pub predicted: Vec<String>,
    pub log_prob: f64,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactMatchReport {
    pub rate: f64,
    pub matches: usize,
    pub outcomes: Vec<PairOutcome>,
}

pub fn evaluate_exact_match(
    parser: &SemanticParser,
    test: &ParallelCorpus,
) -> Result<ExactMatchReport> {
    if test.is_empty() {
        return Err(Error::Empty("test corpus"));
    }
    let outcomes = test
        .pairs()
        .iter()
        .map(|pair| {
            let g = parser.generate(&pair.question)?;
            Ok(PairOutcome {
                matched: g.query == pair.query,
                question: pair.question.clone(),
                gold: pair.query.clone(),
                predicted: g.query,
                log_prob: g.log_prob,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let matches = outcomes.iter().filter(|o| o.matched).count();
    Ok(ExactMatchReport {
        rate: matches as f64 / outcomes.len() as f64,
        matches,
        outcomes,
    })
}

/// Fraction of questions whose own query is strictly closer to `g(Q)` than
/// every other distinct corpus query.
pub fn evaluate_retrieval(params: &BiCvmParams, corpus: &EncodedCorpus) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("retrieval corpus"));
    }
    let mut distinct: HashMap<&[TokenId], usize> = HashMap::new();
    let mut group = Vec::with_capacity(corpus.len());
    let mut latents = Vec::new();
    for p in &corpus.pairs {
        let next = distinct.len();
        let id = *distinct.entry(p.query.as_slice()).or_insert(next);
        if id == next {
            latents.push(params.query.encode(&p.query)?);
        }
        group.push(id);
    }
    let mut hits = 0;
    for (p, &own) in corpus.pairs.iter().zip(&group) {
        let a = params.question.encode(&p.question)?;
        let own_dist = squared_euclidean(a.as_slice(), latents[own].as_slice())?;
        let mut first = true;
        for (j, h) in latents.iter().enumerate() {
            if j != own && squared_euclidean(a.as_slice(), h.as_slice())? <= own_dist {
                first = false;
                break;
            }
        }
        hits += usize::from(first);
    }
    Ok(hits as f64 / corpus.len() as f64)
}

/// Everything [`train_full`] needs beyond the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// `seed` is overridden per round from [`TrainConfig::seed`].
    pub bicvm: BiCvmHyper,
    /// `seed` is overridden per round from [`TrainConfig::seed`].
    pub cnlm: CnlmHyper,
    pub question_mode: CompositionMode,
    pub query_mode: CompositionMode,
    pub rounds: usize,
    pub autoencoder: bool,
    /// Start `R` from the trained `D_R`.
    pub init_r_from_dr: bool,
    pub min_count: usize,
    pub decode: DecodeConfig,
    pub seed: u64,
    pub pretrained_question: Option<PathBuf>,
    pub pretrained_query: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bicvm: BiCvmHyper::default(),
            cnlm: CnlmHyper::default(),
            question_mode: CompositionMode::Additive,
            query_mode: CompositionMode::Bigram,
            rounds: 1,
            autoencoder: false,
            init_r_from_dr: true,
            min_count: 1,
            decode: DecodeConfig::default(),
            seed: 0,
            pretrained_question: None,
            pretrained_query: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.bicvm.validate()?;
        self.cnlm.validate()?;
        if self.bicvm.dim != self.cnlm.dim {
            return Err(Error::InvalidArgument(format!(
                "latent dimension {} differs from language model dimension {}",
                self.bicvm.dim, self.cnlm.dim
            )));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidArgument("rounds must be >= 1".into()));
        }
        if self.min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be >= 1".into()));
        }
        if self.decode.width == 0 || self.decode.max_len == 0 {
            return Err(Error::InvalidArgument(
                "beam width and max_len must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub bicvm_trace: Vec<f64>,
    pub cnlm_trace: Vec<f64>,
    /// `None` for single-pair corpora.
    pub retrieval_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub rounds: Vec<RoundReport>,
    pub pretrained_question: Option<PretrainedReport>,
    pub pretrained_query: Option<PretrainedReport>,
}

impl TrainReport {
    pub fn final_hinge(&self) -> Option<f64> {
        self.rounds
            .last()
            .and_then(|r| r.bicvm_trace.last().copied())
    }

    pub fn final_nll(&self) -> Option<f64> {
        self.rounds
            .last()
            .and_then(|r| r.cnlm_trace.last().copied())
    }

    pub fn final_retrieval(&self) -> Option<f64> {
        self.rounds.last().and_then(|r| r.retrieval_accuracy)
    }
}

/// Runs `rounds` × (stage one → latent corpus → stage two). Later rounds
/// warm-start both models from the previous round with fresh optimizer
/// state.
pub fn train_full(
    corpus: &ParallelCorpus,
    config: &TrainConfig,
) -> Result<(SemanticParser, TrainReport)> {
    config.validate()?;
    let (qv, rv) = corpus.vocabularies(config.min_count)?;
    let encoded = corpus.encode(&qv, &rv);
    let mut bicvm = BiCvmParams::init(
        qv,
        rv.clone(),
        config.question_mode,
        config.query_mode,
        &config.bicvm,
        &mut Rng::stream(config.seed, streams::BICVM_INIT),
    )?;
    let mut report = TrainReport::default();
    if let Some(path) = &config.pretrained_question {
        report.pretrained_question = Some(bicvm.question.table.load_pretrained_file(path)?);
    }
    if let Some(path) = &config.pretrained_query {
        report.pretrained_query = Some(bicvm.query.table.load_pretrained_file(path)?);
    }

    let mut cnlm: Option<CnlmParams> = None;
    for round in 0..config.rounds as u64 {
        let stage1 = BiCvmHyper {
            seed: sub_seed(config.seed, streams::BICVM_ROUND + round),
            ..config.bicvm.clone()
        };
        let trained = train_bicvm(&encoded, bicvm, &stage1)?;
        bicvm = trained.params;

        let latent = if config.autoencoder {
            derive_autoencoder_corpus(&encoded, &bicvm)?
        } else {
            derive_latent_corpus(&encoded, &bicvm)?
        };
        let start = match cnlm.take() {
            Some(p) => p,
            None => {
                let mut p = CnlmParams::init(
                    rv.clone(),
                    &config.cnlm,
                    &mut Rng::stream(config.seed, streams::CNLM_INIT),
                )?;
                if config.init_r_from_dr {
                    *p.table.matrix_mut() = bicvm.query.table.matrix().clone();
                }
                p
            }
        };
        let stage2 = CnlmHyper {
            seed: sub_seed(config.seed, streams::CNLM_ROUND + round),
            ..config.cnlm.clone()
        };
        let trained_lm = train_cnlm(&latent, start, &stage2)?;
        cnlm = Some(trained_lm.params);

        let retrieval_accuracy = if encoded.len() >= 2 {
            Some(evaluate_retrieval(&bicvm, &encoded)?)
        } else {
            None
        };
        log::info!(
            "round {}: hinge {:.4} -> {:.4}, nll {:.4} -> {:.4}, retrieval {:?}",
            round + 1,
            trained.trace.first().copied().unwrap_or(f64::NAN),
            trained.trace.last().copied().unwrap_or(f64::NAN),
            trained_lm.trace.first().copied().unwrap_or(f64::NAN),
            trained_lm.trace.last().copied().unwrap_or(f64::NAN),
            retrieval_accuracy,
        );
        report.rounds.push(RoundReport {
            bicvm_trace: trained.trace,
            cnlm_trace: trained_lm.trace,
            retrieval_accuracy,
        });
    }
    let parser = SemanticParser::new(
        bicvm.question,
        Some(bicvm.query),
        cnlm.expect("at least one round ran"),
        config.decode,
        config.autoencoder,
    )?;
    Ok((parser, report))
}

/// [`train_full`] with `g(Q) + h(R)` conditioning during stage two.
pub fn train_autoencoder_variant(
    corpus: &ParallelCorpus,
    config: &TrainConfig,
) -> Result<(SemanticParser, TrainReport)> {
    let config = TrainConfig {
        autoencoder: true,
        ..config.clone()
    };
    train_full(corpus, &config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, EncodedPair, Pair};
    use crate::lexicon::{EmbeddingTable, Vocabulary};

    fn small_config(epochs1: usize, epochs2: usize) -> TrainConfig {
        TrainConfig {
            bicvm: BiCvmHyper {
                dim: 4,
                epochs: epochs1,
                ..Default::default()
            },
            cnlm: CnlmHyper {
                dim: 4,
                epochs: epochs2,
                ..Default::default()
            },
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn latent_corpus_additive_by_hand() {
        let qv = Vocabulary::build(&[vec!["a", "b"]], 1).unwrap();
        let rv = Vocabulary::build(&[vec!["x"]], 1).unwrap();
        let mut dq = EmbeddingTable::zeros(qv, 2).unwrap();
        dq.row_mut(4).copy_from_slice(&[1.0, 2.0]);
        dq.row_mut(5).copy_from_slice(&[0.5, -1.0]);
        let dr = EmbeddingTable::zeros(rv, 2).unwrap();
        let params = BiCvmParams::new(
            SequenceEncoder::new(dq, CompositionMode::Additive),
            SequenceEncoder::new(dr, CompositionMode::Bigram),
        )
        .unwrap();
        let corpus = EncodedCorpus {
            pairs: vec![EncodedPair {
                question: vec![4, 5, 4],
                query: vec![4],
            }],
        };
        let latent = derive_latent_corpus(&corpus, &params).unwrap();
        assert_eq!(latent.len(), 1);
        assert_eq!(latent.pairs()[0].latent.as_slice(), &[2.5, 3.0]);
        assert_eq!(latent.pairs()[0].query, vec![4]);
        // zero D_R and bigram h give h(R) = 0
        assert_eq!(derive_autoencoder_corpus(&corpus, &params).unwrap(), latent);
        let empty = EncodedCorpus { pairs: vec![] };
        assert!(derive_latent_corpus(&empty, &params).unwrap().is_empty());
    }

    #[test]
    fn identical_questions_identical_latents() {
        let corpus = ParallelCorpus::new(
            vec![
                Pair {
                    question: vec!["a".into(), "b".into()],
                    query: vec!["x".into()],
                },
                Pair {
                    question: vec!["a".into(), "b".into()],
                    query: vec!["y".into()],
                },
            ],
            "t",
        )
        .unwrap();
        let (qv, rv) = corpus.vocabularies(1).unwrap();
        let params = BiCvmParams::init(
            qv.clone(),
            rv.clone(),
            CompositionMode::Bigram,
            CompositionMode::Bigram,
            &BiCvmHyper {
                dim: 3,
                ..Default::default()
            },
            &mut Rng::new(1),
        )
        .unwrap();
        let latent = derive_latent_corpus(&corpus.encode(&qv, &rv), &params).unwrap();
        assert_eq!(latent.pairs()[0].latent, latent.pairs()[1].latent);
    }

    #[test]
    fn zero_rate_rounds_are_equivalent() {
        let corpus = generate_toy_corpus(3, 2, 5).unwrap();
        let mut one = small_config(3, 3);
        one.bicvm.learning_rate = 0.0;
        one.cnlm.learning_rate = 0.0;
        let two = TrainConfig {
            rounds: 2,
            ..one.clone()
        };
        let (p1, r1) = train_full(&corpus, &one).unwrap();
        let (p2, r2) = train_full(&corpus, &two).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1.rounds.len(), 1);
        assert_eq!(r2.rounds.len(), 2);
    }

    #[test]
    fn train_full_is_reproducible() {
        let corpus = generate_toy_corpus(3, 2, 6).unwrap();
        let config = TrainConfig {
            rounds: 2,
            ..small_config(5, 5)
        };
        let (a, ra) = train_full(&corpus, &config).unwrap();
        let (b, rb) = train_full(&corpus, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn autoencoder_flag_is_set() {
        let corpus = generate_toy_corpus(2, 2, 1).unwrap();
        let (p, _) = train_autoencoder_variant(&corpus, &small_config(2, 2)).unwrap();
        assert!(p.autoencoder);
        let (p, _) = train_full(&corpus, &small_config(2, 2)).unwrap();
        assert!(!p.autoencoder);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let corpus = generate_toy_corpus(2, 2, 1).unwrap();
        let mut config = small_config(1, 1);
        config.cnlm.dim = 5;
        assert!(train_full(&corpus, &config).is_err());
        let config = TrainConfig {
            rounds: 0,
            ..small_config(1, 1)
        };
        assert!(train_full(&corpus, &config).is_err());
    }

    #[test]
    fn generation_contract() {
        let corpus = generate_toy_corpus(2, 2, 2).unwrap();
        let (parser, _) = train_full(&corpus, &small_config(5, 5)).unwrap();
        let q = &corpus.pairs()[0].question;
        assert_eq!(parser.generate(q).unwrap(), parser.generate(q).unwrap());
        assert!(matches!(parser.generate(&[]), Err(Error::Empty(_))));
        let oov = parser
            .generate(&["qqq".to_string(), "zzz".to_string()])
            .unwrap();
        assert_eq!(oov.unknown, 2);
        assert!(parser.generate_text("  ?? ").is_err());
    }

    #[test]
    fn exact_match_definition() {
        let corpus = generate_toy_corpus(3, 1, 4).unwrap();
        let (parser, _) = train_full(&corpus, &small_config(2, 2)).unwrap();
        let report = evaluate_exact_match(&parser, &corpus).unwrap();
        assert_eq!(report.outcomes.len(), 3);
        assert_eq!(report.rate, report.matches as f64 / 3.0);
        // gold queries the model cannot emit
        let impossible = ParallelCorpus::new(
            corpus
                .pairs()
                .iter()
                .map(|p| Pair {
                    question: p.question.clone(),
                    query: vec!["never".into()],
                })
                .collect(),
            "t",
        )
        .unwrap();
        assert_eq!(
            evaluate_exact_match(&parser, &impossible).unwrap().rate,
            0.0
        );
    }

    #[test]
    fn retrieval_single_pair_is_trivial() {
        let corpus = EncodedCorpus {
            pairs: vec![EncodedPair {
                question: vec![4],
                query: vec![4],
            }],
        };
        let qv = Vocabulary::build(&[vec!["a"]], 1).unwrap();
        let rv = Vocabulary::build(&[vec!["x"]], 1).unwrap();
        let params = BiCvmParams::init(
            qv,
            rv,
            CompositionMode::Additive,
            CompositionMode::Additive,
            &BiCvmHyper {
                dim: 2,
                ..Default::default()
            },
            &mut Rng::new(0),
        )
        .unwrap();
        assert_eq!(evaluate_retrieval(&params, &corpus).unwrap(), 1.0);
    }
}
