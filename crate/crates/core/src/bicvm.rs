//! Stage one: a bilingual compositional model aligning composed question and
//! query representations under a noise-contrastive hinge loss.

use std::collections::HashMap;
use std::hash::Hash;

use crate::composition::{CompositionMode, SequenceEncoder};
use crate::corpus::{EncodedCorpus, ParallelCorpus};
use crate::error::{ensure_dim, Error, Result};
use crate::lexicon::{EmbeddingTable, Vocabulary, DEFAULT_INIT_SCALE};
use crate::numerics::{axpy, squared_euclidean, Matrix, Rng};
use crate::optim::AdaGrad;

/// Stream id of the shuffle/noise generator used by [`train_bicvm`].
pub const TRAIN_STREAM: u64 = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct BiCvmHyper {
    pub margin: f64,
    pub noise_count: usize,
    pub l2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub dim: usize,
    pub init_scale: f64,
}

impl Default for BiCvmHyper {
    fn default() -> Self {
        BiCvmHyper {
            margin: 1.0,
            noise_count: 3,
            l2: 1e-4,
            learning_rate: 0.05,
            epochs: 50,
            seed: 0,
            dim: 64,
            init_scale: DEFAULT_INIT_SCALE,
        }
    }
}

impl BiCvmHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("bicvm: {what}")));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be > 0");
        }
        if self.noise_count == 0 {
            return bad("noise count must be >= 1");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be >= 0");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be >= 0");
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.init_scale.is_nan() || self.init_scale <= 0.0 {
            return bad("init scale must be > 0");
        }
        Ok(())
    }
}

/// `θ = {g, h, D_Q, D_R}`: question and query encoders sharing one latent
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct BiCvmParams {
    pub question: SequenceEncoder,
    pub query: SequenceEncoder,
}

impl BiCvmParams {
    pub fn new(question: SequenceEncoder, query: SequenceEncoder) -> Result<Self> {
        ensure_dim(question.dim(), query.dim())?;
        Ok(BiCvmParams { question, query })
    }

    pub fn init(
        question_vocab: Vocabulary,
        query_vocab: Vocabulary,
        g: CompositionMode,
        h: CompositionMode,
        hyper: &BiCvmHyper,
        rng: &mut Rng,
    ) -> Result<Self> {
        hyper.validate()?;
        let dq = EmbeddingTable::init(question_vocab, hyper.dim, hyper.init_scale, rng)?;
        let dr = EmbeddingTable::init(query_vocab, hyper.dim, hyper.init_scale, rng)?;
        BiCvmParams::new(SequenceEncoder::new(dq, g), SequenceEncoder::new(dr, h))
    }

    pub fn dim(&self) -> usize {
        self.question.dim()
    }

    /// `‖θ‖²` over both embedding tables.
    pub fn squared_norm(&self) -> f64 {
        self.question.table.matrix().squared_norm() + self.query.table.matrix().squared_norm()
    }
}

/// `‖g(a) − h(b)‖²` on precomposed latents.
pub fn bi_error(a_latent: &[f64], b_latent: &[f64]) -> Result<f64> {
    squared_euclidean(a_latent, b_latent)
}

/// `[m + E_bi(a, b) − E_bi(a, n)]₊`
pub fn hinge_loss(
    a_latent: &[f64],
    b_latent: &[f64],
    n_latent: &[f64],
    margin: f64,
) -> Result<f64> {
    let pos = bi_error(a_latent, b_latent)?;
    let neg = bi_error(a_latent, n_latent)?;
    Ok((margin + (pos - neg)).max(0.0))
}

/// Uniform sampling of corpus entries whose query differs from a given
/// entry's query.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    group: Vec<usize>,
}

impl NoiseSampler {
    pub fn new<S: AsRef<[T]>, T: Eq + Hash>(queries: &[S]) -> Result<Self> {
        let mut ids: HashMap<&[T], usize> = HashMap::new();
        let group: Vec<usize> = queries
            .iter()
            .map(|q| {
                let next = ids.len();
                *ids.entry(q.as_ref()).or_insert(next)
            })
            .collect();
        if ids.len() < 2 {
            return Err(Error::NoNoise(format!(
                "corpus of {} pairs has {} distinct queries; at least 2 are required",
                queries.len(),
                ids.len()
            )));
        }
        Ok(NoiseSampler { group })
    }

    pub fn from_corpus(corpus: &EncodedCorpus) -> Result<Self> {
        let queries: Vec<&[usize]> = corpus.pairs.iter().map(|p| p.query.as_slice()).collect();
        NoiseSampler::new(&queries)
    }

    /// `k` independent draws (with replacement) of corpus indices.
    pub fn sample(&self, true_index: usize, k: usize, rng: &mut Rng) -> Vec<usize> {
        let own = self.group[true_index];
        (0..k)
            .map(|_| loop {
                let j = rng.below(self.group.len());
                if self.group[j] != own {
                    break j;
                }
            })
            .collect()
    }
}

/// Draws `k` noise queries for pair `true_index`.
pub fn sample_noise(
    corpus: &ParallelCorpus,
    true_index: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<Vec<String>>> {
    if true_index >= corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "pair index {true_index} out of range for corpus of {}",
            corpus.len()
        )));
    }
    let queries: Vec<&[String]> = corpus.pairs().iter().map(|p| p.query.as_slice()).collect();
    let sampler = NoiseSampler::new(&queries)?;
    Ok(sampler
        .sample(true_index, k, rng)
        .into_iter()
        .map(|j| corpus.pairs()[j].query.clone())
        .collect())
}

/// Gradients shaped like the two embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct BiCvmGradients {
    pub question: Matrix,
    pub query: Matrix,
}

#[derive(Debug, Clone)]
pub struct ObjectiveValue {
    /// Sum of hinge terms.
    pub hinge: f64,
    /// `λ/2 · ‖θ‖²`
    pub regularizer: f64,
    pub grads: BiCvmGradients,
}

impl ObjectiveValue {
    pub fn total(&self) -> f64 {
        self.hinge + self.regularizer
    }
}

/// Objective and gradient for `batch` with explicit noise indices:
/// `noise[i]` lists the noise pairs for `batch[i]`.
pub fn objective_with_noise(
    corpus: &EncodedCorpus,
    batch: &[usize],
    noise: &[Vec<usize>],
    params: &BiCvmParams,
    hyper: &BiCvmHyper,
) -> Result<ObjectiveValue> {
    if batch.is_empty() {
        return Err(Error::Empty("objective batch"));
    }
    ensure_dim(batch.len(), noise.len())?;
    let d = params.dim();
    let mut grads = BiCvmGradients {
        question: Matrix::zeros(params.question.table.vocab().len(), d),
        query: Matrix::zeros(params.query.table.vocab().len(), d),
    };
    let mut hinge = 0.0;
    let mut grad_a = vec![0.0; d];
    let mut grad_b = vec![0.0; d];
    let mut grad_n = vec![0.0; d];
    for (&i, noise_i) in batch.iter().zip(noise) {
        let pair = corpus
            .pairs
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("pair index {i} out of range")))?;
        let a = params.question.encode(&pair.question)?;
        let b = params.query.encode(&pair.query)?;
        let (a, b) = (a.as_slice(), b.as_slice());
        let pos = bi_error(a, b)?;
        grad_a.fill(0.0);
        grad_b.fill(0.0);
        for &j in noise_i {
            let noise_query = &corpus
                .pairs
                .get(j)
                .ok_or_else(|| Error::InvalidArgument(format!("noise index {j} out of range")))?
                .query;
            let n = params.query.encode(noise_query)?;
            let n = n.as_slice();
            let x = hyper.margin + (pos - bi_error(a, n)?);
            if x <= 0.0 {
                continue;
            }
            hinge += x;
            for k in 0..d {
                grad_a[k] += 2.0 * (n[k] - b[k]);
                grad_b[k] -= 2.0 * (a[k] - b[k]);
                grad_n[k] = 2.0 * (a[k] - n[k]);
            }
            params
                .query
                .backward(noise_query, &grad_n, &mut grads.query)?;
        }
        params
            .question
            .backward(&pair.question, &grad_a, &mut grads.question)?;
        params
            .query
            .backward(&pair.query, &grad_b, &mut grads.query)?;
    }
    let regularizer = 0.5 * hyper.l2 * params.squared_norm();
    if hyper.l2 != 0.0 {
        axpy(
            hyper.l2,
            params.question.table.matrix().as_slice(),
            grads.question.as_mut_slice(),
        );
        axpy(
            hyper.l2,
            params.query.table.matrix().as_slice(),
            grads.query.as_mut_slice(),
        );
    }
    Ok(ObjectiveValue {
        hinge,
        regularizer,
        grads,
    })
}

/// `Σ_batch Σ_k E_hl + λ/2 ‖θ‖²` with freshly sampled noise.
pub fn objective(
    corpus: &EncodedCorpus,
    batch: &[usize],
    params: &BiCvmParams,
    hyper: &BiCvmHyper,
    sampler: &NoiseSampler,
    rng: &mut Rng,
) -> Result<ObjectiveValue> {
    let noise: Vec<Vec<usize>> = batch
        .iter()
        .map(|&i| sampler.sample(i, hyper.noise_count, rng))
        .collect();
    objective_with_noise(corpus, batch, &noise, params, hyper)
}

#[derive(Debug, Clone)]
pub struct BiCvmTrained {
    pub params: BiCvmParams,
    /// Mean hinge loss per pair, one entry per epoch.
    pub trace: Vec<f64>,
}

/// Per-pair AdaGrad descent on the objective, pairs reshuffled each epoch.
pub fn train_bicvm(
    corpus: &EncodedCorpus,
    mut params: BiCvmParams,
    hyper: &BiCvmHyper,
) -> Result<BiCvmTrained> {
    hyper.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("bicvm training corpus"));
    }
    let sampler = NoiseSampler::from_corpus(corpus)?;
    let mut rng = Rng::stream(hyper.seed, TRAIN_STREAM);
    let mut opt = AdaGrad::new(
        hyper.learning_rate,
        &[
            params.question.table.matrix().as_slice().len(),
            params.query.table.matrix().as_slice().len(),
        ],
    );
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut trace = Vec::with_capacity(hyper.epochs);
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        rng.shuffle(&mut order);
        let mut epoch_hinge = 0.0;
        for &i in &order {
            let value = objective(corpus, &[i], &params, hyper, &sampler, &mut rng)?;
            let loss = value.total();
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            epoch_hinge += value.hinge;
            opt.step(
                0,
                params.question.table.matrix_mut().as_mut_slice(),
                value.grads.question.as_slice(),
            );
            opt.step(
                1,
                params.query.table.matrix_mut().as_mut_slice(),
                value.grads.query.as_slice(),
            );
            step += 1;
        }
        let mean = epoch_hinge / corpus.len() as f64;
        log::debug!("bicvm epoch {epoch}: mean hinge {mean:.6}");
        trace.push(mean);
    }
    Ok(BiCvmTrained { params, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, EncodedPair, Pair};
    use crate::numerics::{finite_diff_grad, max_relative_error, FD_EPSILON};

    #[test]
    fn bi_error_examples() {
        assert_eq!(bi_error(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert_eq!(bi_error(&[0.4, 0.2], &[0.4, 0.2]).unwrap(), 0.0);
        assert_eq!(bi_error(&[2.0, 0.0], &[0.0, 0.0]).unwrap(), 4.0);
        assert!(bi_error(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn hinge_examples() {
        // E_bi(a,b) = 0.5, E_bi(a,n) = 2.0
        let a = [0.0, 0.0];
        let b = [0.5f64.sqrt(), 0.0];
        let n = [0.0, 2f64.sqrt()];
        assert_eq!(hinge_loss(&a, &b, &n, 1.0).unwrap(), 0.0);
        // E_bi(a,n) = 1.0
        let n = [0.0, 1.0];
        assert!((hinge_loss(&a, &b, &n, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let b = [0.3, -0.7];
        assert_eq!(hinge_loss(&[1.0, 2.0], &b, &b, 0.75).unwrap(), 0.75);
    }

    fn corpus_of(queries: &[&str]) -> ParallelCorpus {
        let pairs = queries
            .iter()
            .enumerate()
            .map(|(i, q)| Pair {
                question: vec![format!("q{i}")],
                query: q.split(' ').map(String::from).collect(),
            })
            .collect();
        ParallelCorpus::new(pairs, "test").unwrap()
    }

    #[test]
    fn noise_forced_and_deterministic() {
        let c = corpus_of(&["a b", "c"]);
        let noise = sample_noise(&c, 0, 3, &mut Rng::new(1)).unwrap();
        assert_eq!(noise, vec![vec!["c".to_string()]; 3]);
        let c = corpus_of(&["a", "b", "c", "d"]);
        let s1 = sample_noise(&c, 2, 10, &mut Rng::new(9)).unwrap();
        let s2 = sample_noise(&c, 2, 10, &mut Rng::new(9)).unwrap();
        assert_eq!(s1, s2);
        assert!(s1.iter().all(|q| q != &["c".to_string()]));
    }

    #[test]
    fn noise_requires_two_distinct_queries() {
        let c = corpus_of(&["a", "a", "a"]);
        let err = sample_noise(&c, 0, 1, &mut Rng::new(1)).unwrap_err();
        assert!(matches!(err, Error::NoNoise(_)));
        assert!(err.to_string().contains("1 distinct"));
    }

    #[test]
    fn noise_is_uniform() {
        let c = corpus_of(&["a", "b", "c", "d", "e"]);
        let queries: Vec<&[String]> = c.pairs().iter().map(|p| p.query.as_slice()).collect();
        let sampler = NoiseSampler::new(&queries).unwrap();
        let mut counts = [0usize; 5];
        for j in sampler.sample(0, 10_000, &mut Rng::new(77)) {
            counts[j] += 1;
        }
        assert_eq!(counts[0], 0);
        for &n in &counts[1..] {
            assert!((2350..=2650).contains(&n), "{counts:?}");
        }
        let expected = 2500.0;
        let chi2: f64 = counts[1..]
            .iter()
            .map(|&n| (n as f64 - expected).powi(2) / expected)
            .sum();
        // 3 degrees of freedom, p = 0.001
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    fn tiny_setup(d: usize, seed: u64) -> (EncodedCorpus, BiCvmParams) {
        let corpus = generate_toy_corpus(3, 1, seed).unwrap();
        let (qv, rv) = corpus.vocabularies(1).unwrap();
        let encoded = corpus.encode(&qv, &rv);
        let hyper = BiCvmHyper {
            dim: d,
            init_scale: 0.5,
            ..Default::default()
        };
        let params = BiCvmParams::init(
            qv,
            rv,
            CompositionMode::Additive,
            CompositionMode::Bigram,
            &hyper,
            &mut Rng::new(seed),
        )
        .unwrap();
        (encoded, params)
    }

    #[test]
    fn objective_hand_computed_d2() {
        let qv = Vocabulary::build(&[vec!["x", "y"]], 1).unwrap();
        let rv = Vocabulary::build(&[vec!["r", "s"]], 1).unwrap();
        let mut dq = EmbeddingTable::zeros(qv, 2).unwrap();
        dq.row_mut(4).copy_from_slice(&[0.5, 0.0]);
        dq.row_mut(5).copy_from_slice(&[0.0, 0.5]);
        let mut dr = EmbeddingTable::zeros(rv, 2).unwrap();
        dr.row_mut(4).copy_from_slice(&[0.25, 0.5]);
        dr.row_mut(5).copy_from_slice(&[0.5, 0.25]);
        let params = BiCvmParams::new(
            SequenceEncoder::new(dq, CompositionMode::Additive),
            SequenceEncoder::new(dr, CompositionMode::Additive),
        )
        .unwrap();
        let corpus = EncodedCorpus {
            pairs: vec![
                EncodedPair {
                    question: vec![4, 5],
                    query: vec![4],
                },
                EncodedPair {
                    question: vec![4],
                    query: vec![5],
                },
            ],
        };
        let hyper = BiCvmHyper {
            l2: 0.0,
            margin: 1.0,
            ..Default::default()
        };
        let v = objective_with_noise(&corpus, &[0], &[vec![1]], &params, &hyper).unwrap();
        // g(a) = [0.5, 0.5], h(b) = [0.25, 0.5], h(n) = [0.5, 0.25]
        // E(a,b) = 0.0625, E(a,n) = 0.0625 → hinge = 1
        assert!((v.hinge - 1.0).abs() < 1e-15);
        let by_hand = hinge_loss(&[0.5, 0.5], &[0.25, 0.5], &[0.5, 0.25], 1.0).unwrap();
        assert_eq!(v.total(), by_hand);
    }

    #[test]
    fn inactive_hinge_means_zero_gradient() {
        let qv = Vocabulary::build(&[vec!["x"]], 1).unwrap();
        let rv = Vocabulary::build(&[vec!["r", "s"]], 1).unwrap();
        let mut dq = EmbeddingTable::zeros(qv, 2).unwrap();
        dq.row_mut(4).copy_from_slice(&[0.1, 0.2]);
        let mut dr = EmbeddingTable::zeros(rv, 2).unwrap();
        dr.row_mut(4).copy_from_slice(&[0.1, 0.25]);
        dr.row_mut(5).copy_from_slice(&[5.0, 5.0]);
        let params = BiCvmParams::new(
            SequenceEncoder::new(dq, CompositionMode::Additive),
            SequenceEncoder::new(dr, CompositionMode::Bigram),
        )
        .unwrap();
        let corpus = EncodedCorpus {
            pairs: vec![
                EncodedPair {
                    question: vec![4],
                    query: vec![4],
                },
                EncodedPair {
                    question: vec![4],
                    query: vec![5, 5],
                },
            ],
        };
        let hyper = BiCvmHyper {
            l2: 0.0,
            margin: 1.0,
            ..Default::default()
        };
        let v = objective_with_noise(&corpus, &[0], &[vec![1, 1]], &params, &hyper).unwrap();
        assert_eq!(v.hinge, 0.0);
        assert!(v.grads.question.as_slice().iter().all(|&g| g == 0.0));
        assert!(v.grads.query.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn regularizer_strictly_positive() {
        let (corpus, params) = tiny_setup(2, 3);
        let noise = vec![vec![1]];
        let h0 = BiCvmHyper {
            l2: 0.0,
            ..Default::default()
        };
        let h1 = BiCvmHyper {
            l2: 1e-3,
            ..Default::default()
        };
        let a = objective_with_noise(&corpus, &[0], &noise, &params, &h0).unwrap();
        let b = objective_with_noise(&corpus, &[0], &noise, &params, &h1).unwrap();
        assert!(b.total() > a.total());
    }

    fn flatten(p: &BiCvmParams) -> Vec<f64> {
        [
            p.question.table.matrix().as_slice(),
            p.query.table.matrix().as_slice(),
        ]
        .concat()
    }

    fn unflatten(p: &mut BiCvmParams, theta: &[f64]) {
        let nq = p.question.table.matrix().as_slice().len();
        p.question
            .table
            .matrix_mut()
            .as_mut_slice()
            .copy_from_slice(&theta[..nq]);
        p.query
            .table
            .matrix_mut()
            .as_mut_slice()
            .copy_from_slice(&theta[nq..]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (corpus, params) = tiny_setup(4, 5);
        let hyper = BiCvmHyper {
            l2: 1e-2,
            margin: 3.0,
            noise_count: 2,
            ..Default::default()
        };
        let sampler = NoiseSampler::from_corpus(&corpus).unwrap();
        let mut rng = Rng::new(2);
        let batch = [0, 1, 2];
        let noise: Vec<Vec<usize>> = batch
            .iter()
            .map(|&i| sampler.sample(i, 2, &mut rng))
            .collect();
        let v = objective_with_noise(&corpus, &batch, &noise, &params, &hyper).unwrap();
        assert!(v.hinge > 0.0);
        let analytic = [v.grads.question.as_slice(), v.grads.query.as_slice()].concat();
        let mut probe = params.clone();
        let numeric = finite_diff_grad(
            |theta| {
                unflatten(&mut probe, theta);
                objective_with_noise(&corpus, &batch, &noise, &probe, &hyper)
                    .unwrap()
                    .total()
            },
            &flatten(&params),
            FD_EPSILON,
        )
        .unwrap();
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (corpus, params) = tiny_setup(4, 8);
        let hyper = BiCvmHyper {
            learning_rate: 0.0,
            epochs: 3,
            dim: 4,
            ..Default::default()
        };
        let out = train_bicvm(&corpus, params.clone(), &hyper).unwrap();
        assert_eq!(out.params, params);
        assert_eq!(out.trace.len(), 3);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let corpus = generate_toy_corpus(4, 2, 21).unwrap();
        let (qv, rv) = corpus.vocabularies(1).unwrap();
        let encoded = corpus.encode(&qv, &rv);
        let hyper = BiCvmHyper {
            dim: 4,
            epochs: 50,
            seed: 21,
            ..Default::default()
        };
        let init = || {
            BiCvmParams::init(
                qv.clone(),
                rv.clone(),
                CompositionMode::Additive,
                CompositionMode::Bigram,
                &hyper,
                &mut Rng::new(21),
            )
            .unwrap()
        };
        let a = train_bicvm(&encoded, init(), &hyper).unwrap();
        let b = train_bicvm(&encoded, init(), &hyper).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
        let first = a.trace[0];
        let last = *a.trace.last().unwrap();
        assert!(last < 0.1 * first, "trace {:?}", a.trace);
    }

    #[test]
    fn training_rejects_degenerate_corpus() {
        let c = corpus_of(&["a", "a"]);
        let (qv, rv) = c.vocabularies(1).unwrap();
        let hyper = BiCvmHyper {
            dim: 2,
            ..Default::default()
        };
        let params = BiCvmParams::init(
            qv.clone(),
            rv.clone(),
            CompositionMode::Additive,
            CompositionMode::Additive,
            &hyper,
            &mut Rng::new(0),
        )
        .unwrap();
        assert!(matches!(
            train_bicvm(&c.encode(&qv, &rv), params, &hyper),
            Err(Error::NoNoise(_))
        ));
    }

    #[test]
    fn training_reports_divergence() {
        let (corpus, mut params) = tiny_setup(2, 4);
        params.question.table.matrix_mut().as_mut_slice()[8] = 1e300;
        let hyper = BiCvmHyper {
            dim: 2,
            epochs: 1,
            ..Default::default()
        };
        assert!(matches!(
            train_bicvm(&corpus, params, &hyper),
            Err(Error::Diverged { step: 0, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
            (1usize..6).prop_flat_map(|d| {
                (
                    prop::collection::vec(-2f64..2.0, d),
                    prop::collection::vec(-2f64..2.0, d),
                    prop::collection::vec(-2f64..2.0, d),
                )
            })
        }

        proptest! {
            #[test]
            fn bi_error_nonnegative((a, b, _) in triple()) {
                let e = bi_error(&a, &b).unwrap();
                prop_assert!(e >= 0.0);
                prop_assert_eq!(e == 0.0, a == b);
            }

            #[test]
            fn hinge_with_noise_equal_to_target_is_exactly_margin((a, b, _) in triple(), m in 0.01f64..3.0) {
                prop_assert_eq!(hinge_loss(&a, &b, &b, m).unwrap(), m);
            }

            #[test]
            fn hinge_monotone((a, b, n) in triple(), m in 0.01f64..3.0, t in 0.0f64..1.0) {
                // move b towards a: E_bi(a,b) shrinks, loss must not grow
                let closer_b: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y + t * (x - y)).collect();
                let base = hinge_loss(&a, &b, &n, m).unwrap();
                prop_assert!(hinge_loss(&a, &closer_b, &n, m).unwrap() <= base + 1e-12);
                // move n towards a: E_bi(a,n) shrinks, loss must not drop
                let closer_n: Vec<f64> = a.iter().zip(&n).map(|(x, y)| y + t * (x - y)).collect();
                prop_assert!(hinge_loss(&a, &b, &closer_n, m).unwrap() >= base - 1e-12);
            }
        }
    }
}
