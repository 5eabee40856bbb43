//! Stage two: a conditional log-bilinear language model over query symbols.
//!
//! For a history `w₁ … wₙ₋₁` and optional conditioning vector `r_β` the
//! energy of candidate `w` is
//!
//! ```text
//! E(w) = −(Σᵢ R_{wᵢ}ᵀ Cᵢ + r_βᵀ C_β) R_w − b_Rᵀ R_w − b_w
//! ```
//!
//! and `p(w | history, β) ∝ exp(−E(w))`. Histories shorter than `n − 1` are
//! padded on the left with `PAD`; every training sequence is wrapped in
//! `BOS … EOS`.

use crate::error::{ensure_dim, Error, Result};
use crate::lexicon::{
    EmbeddingTable, TokenId, Vocabulary, BOS_ID, DEFAULT_INIT_SCALE, EOS_ID, PAD_ID,
};
use crate::numerics::{axpy, dot_unchecked, log_softmax_in_place, Matrix, Rng};
use crate::optim::AdaGrad;
use crate::pipeline::LatentCorpus;

/// Stream id of the shuffle generator used by [`train_cnlm`].
pub const TRAIN_STREAM: u64 = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct CnlmHyper {
    /// n-gram order: the history holds `context - 1` tokens.
    pub context: usize,
    pub dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for CnlmHyper {
    fn default() -> Self {
        CnlmHyper {
            context: 3,
            dim: 64,
            learning_rate: 0.05,
            epochs: 100,
            seed: 0,
            init_scale: DEFAULT_INIT_SCALE,
        }
    }
}

impl CnlmHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("cnlm: {what}")));
        if self.context < 2 {
            return bad("context size must be >= 2");
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be >= 0");
        }
        if self.init_scale.is_nan() || self.init_scale <= 0.0 {
            return bad("init scale must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnlmParams {
    /// `R`, one row per query symbol.
    pub table: EmbeddingTable,
    /// `C₁ … Cₙ₋₁`, `C₁` applying to the oldest history position.
    pub context: Vec<Matrix>,
    /// `C_β`
    pub cond: Matrix,
    /// `b_R`
    pub bias: Vec<f64>,
    /// `b_w`
    pub word_bias: Vec<f64>,
}

/// Gradients shaped like [`CnlmParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct CnlmGradients {
    pub table: Matrix,
    pub context: Vec<Matrix>,
    pub cond: Matrix,
    pub bias: Vec<f64>,
    pub word_bias: Vec<f64>,
}

impl CnlmGradients {
    fn zeros_like(p: &CnlmParams) -> Self {
        let d = p.dim();
        CnlmGradients {
            table: Matrix::zeros(p.vocab_size(), d),
            context: vec![Matrix::zeros(d, d); p.context.len()],
            cond: Matrix::zeros(d, d),
            bias: vec![0.0; d],
            word_bias: vec![0.0; p.vocab_size()],
        }
    }

    fn clear(&mut self) {
        self.table.as_mut_slice().fill(0.0);
        for c in &mut self.context {
            c.as_mut_slice().fill(0.0);
        }
        self.cond.as_mut_slice().fill(0.0);
        self.bias.fill(0.0);
        self.word_bias.fill(0.0);
    }
}

/// A decoded sequence. `generated` holds the raw tokens, including a final
/// `EOS` when the hypothesis terminated.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub generated: Vec<TokenId>,
    pub log_prob: f64,
}

impl Hypothesis {
    /// Generated tokens with `BOS`, `EOS` and `PAD` removed.
    pub fn tokens(&self) -> Vec<TokenId> {
        strip_specials(&self.generated)
    }

    pub fn is_complete(&self) -> bool {
        self.generated.last() == Some(&EOS_ID)
    }
}

pub fn strip_specials(ids: &[TokenId]) -> Vec<TokenId> {
    ids.iter()
        .copied()
        .filter(|&id| !matches!(id, BOS_ID | EOS_ID | PAD_ID))
        .collect()
}

/// `BOS ids… EOS`
pub fn wrap(ids: &[TokenId]) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(ids.len() + 2);
    out.push(BOS_ID);
    out.extend_from_slice(ids);
    out.push(EOS_ID);
    out
}

impl CnlmParams {
    pub fn new(
        table: EmbeddingTable,
        context: Vec<Matrix>,
        cond: Matrix,
        bias: Vec<f64>,
        word_bias: Vec<f64>,
    ) -> Result<Self> {
        let d = table.dim();
        if context.is_empty() {
            return Err(Error::InvalidArgument(
                "cnlm needs at least one context matrix".into(),
            ));
        }
        for m in context.iter().chain(std::iter::once(&cond)) {
            ensure_dim(d, m.rows())?;
            ensure_dim(d, m.cols())?;
            if !m.is_finite() {
                return Err(Error::NonFinite("cnlm matrix"));
            }
        }
        ensure_dim(d, bias.len())?;
        ensure_dim(table.vocab().len(), word_bias.len())?;
        if !bias.iter().chain(&word_bias).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("cnlm bias"));
        }
        Ok(CnlmParams {
            table,
            context,
            cond,
            bias,
            word_bias,
        })
    }

    pub fn zeros(vocab: Vocabulary, context: usize, dim: usize) -> Result<Self> {
        if context < 2 {
            return Err(Error::InvalidArgument("context size must be >= 2".into()));
        }
        let v = vocab.len();
        CnlmParams::new(
            EmbeddingTable::zeros(vocab, dim)?,
            vec![Matrix::zeros(dim, dim); context - 1],
            Matrix::zeros(dim, dim),
            vec![0.0; dim],
            vec![0.0; v],
        )
    }

    /// `R` and every `C` uniform in `[-scale, scale]`, biases zero.
    pub fn init(vocab: Vocabulary, hyper: &CnlmHyper, rng: &mut Rng) -> Result<Self> {
        hyper.validate()?;
        let d = hyper.dim;
        let table = EmbeddingTable::init(vocab, d, hyper.init_scale, rng)?;
        let mut random_matrix = || {
            let data = (0..d * d)
                .map(|_| rng.uniform_in(-hyper.init_scale, hyper.init_scale))
                .collect();
            Matrix::from_vec(d, d, data)
        };
        let context = (0..hyper.context - 1)
            .map(|_| random_matrix())
            .collect::<Result<Vec<_>>>()?;
        let cond = random_matrix()?;
        let v = table.vocab().len();
        CnlmParams::new(table, context, cond, vec![0.0; d], vec![0.0; v])
    }

    /// n-gram order.
    pub fn order(&self) -> usize {
        self.context.len() + 1
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn vocab(&self) -> &Vocabulary {
        self.table.vocab()
    }

    pub fn vocab_size(&self) -> usize {
        self.table.vocab().len()
    }

    fn check_history(&self, history: &[TokenId]) -> Result<()> {
        ensure_dim(self.context.len(), history.len())?;
        history.iter().try_for_each(|&id| self.vocab().check(id))
    }

    /// `Σᵢ Cᵢᵀ R_{hᵢ}`, plus `C_βᵀ r_β` as a separate addend when given.
    fn context_vector(&self, history: &[TokenId], r_beta: Option<&[f64]>) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        for (m, &h) in self.context.iter().zip(history) {
            m.tr_matvec_acc(self.table.row(h), &mut c);
        }
        if let Some(r) = r_beta {
            let mut extra = vec![0.0; self.dim()];
            self.cond.tr_matvec_acc(r, &mut extra);
            for (ci, e) in c.iter_mut().zip(&extra) {
                *ci += e;
            }
        }
        c
    }

    fn energy_with(&self, c: &[f64], target: TokenId) -> f64 {
        let rw = self.table.row(target);
        -dot_unchecked(c, rw) - dot_unchecked(&self.bias, rw) - self.word_bias[target]
    }

    /// Unconditional energy of `target` after `history` (`n − 1` ids).
    pub fn energy(&self, history: &[TokenId], target: TokenId) -> Result<f64> {
        self.check_history(history)?;
        self.vocab().check(target)?;
        Ok(self.energy_with(&self.context_vector(history, None), target))
    }

    pub fn conditional_energy(
        &self,
        history: &[TokenId],
        target: TokenId,
        r_beta: &[f64],
    ) -> Result<f64> {
        self.check_history(history)?;
        self.vocab().check(target)?;
        ensure_dim(self.dim(), r_beta.len())?;
        Ok(self.energy_with(&self.context_vector(history, Some(r_beta)), target))
    }

    /// `−E(w)` for every `w`, returning the context vector used.
    fn scores(&self, history: &[TokenId], r_beta: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let c = self.context_vector(history, r_beta);
        let scores = (0..self.vocab_size())
            .map(|w| -self.energy_with(&c, w))
            .collect();
        (scores, c)
    }

    fn check_beta(&self, r_beta: Option<&[f64]>) -> Result<()> {
        match r_beta {
            Some(r) => {
                ensure_dim(self.dim(), r.len())?;
                if r.iter().all(|x| x.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::NonFinite("conditioning vector"))
                }
            }
            None => Ok(()),
        }
    }

    /// Log-probabilities over the vocabulary.
    pub fn next_word_log_distribution(
        &self,
        history: &[TokenId],
        r_beta: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        self.check_history(history)?;
        self.check_beta(r_beta)?;
        let (mut s, _) = self.scores(history, r_beta);
        log_softmax_in_place(&mut s);
        Ok(s)
    }

    pub fn next_word_distribution(
        &self,
        history: &[TokenId],
        r_beta: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        Ok(self
            .next_word_log_distribution(history, r_beta)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    /// The `n − 1` ids preceding position `t` of `seq`, `PAD`-left.
    pub fn history_at(&self, seq: &[TokenId], t: usize) -> Vec<TokenId> {
        let width = self.context.len();
        let start = t.saturating_sub(width);
        let mut h = vec![PAD_ID; width - (t - start)];
        h.extend_from_slice(&seq[start..t]);
        h
    }

    fn check_wrapped(&self, wrapped: &[TokenId]) -> Result<()> {
        if wrapped.len() < 2 || wrapped[0] != BOS_ID || wrapped[wrapped.len() - 1] != EOS_ID {
            return Err(Error::InvalidArgument(
                "sequence must be wrapped in BOS ... EOS".into(),
            ));
        }
        wrapped.iter().try_for_each(|&id| self.vocab().check(id))
    }

    /// `Σₜ log p(wₜ | historyₜ, β)` over every position after `BOS`.
    pub fn sequence_log_prob(&self, wrapped: &[TokenId], r_beta: Option<&[f64]>) -> Result<f64> {
        self.check_wrapped(wrapped)?;
        self.check_beta(r_beta)?;
        let mut total = 0.0;
        for t in 1..wrapped.len() {
            let (mut s, _) = self.scores(&self.history_at(wrapped, t), r_beta);
            log_softmax_in_place(&mut s);
            total += s[wrapped[t]];
        }
        Ok(total)
    }

    /// Negative log-likelihood of `wrapped`; its gradient is added to `grads`.
    pub fn nll_backward(
        &self,
        wrapped: &[TokenId],
        r_beta: Option<&[f64]>,
        grads: &mut CnlmGradients,
    ) -> Result<f64> {
        self.check_wrapped(wrapped)?;
        self.check_beta(r_beta)?;
        let d = self.dim();
        let mut nll = 0.0;
        let mut gq = vec![0.0; d];
        let mut q = vec![0.0; d];
        for t in 1..wrapped.len() {
            let history = self.history_at(wrapped, t);
            let target = wrapped[t];
            let (mut s, c) = self.scores(&history, r_beta);
            log_softmax_in_place(&mut s);
            nll -= s[target];
            for ((qk, ck), bk) in q.iter_mut().zip(&c).zip(&self.bias) {
                *qk = ck + bk;
            }
            gq.fill(0.0);
            for (w, lp) in s.iter().enumerate() {
                let delta = lp.exp() - if w == target { 1.0 } else { 0.0 };
                grads.word_bias[w] += delta;
                axpy(delta, &q, grads.table.row_mut(w));
                axpy(delta, self.table.row(w), &mut gq);
            }
            axpy(1.0, &gq, &mut grads.bias);
            for (i, &h) in history.iter().enumerate() {
                grads.context[i].add_outer(1.0, self.table.row(h), &gq);
                self.context[i].matvec_acc(&gq, grads.table.row_mut(h));
            }
            if let Some(r) = r_beta {
                grads.cond.add_outer(1.0, r, &gq);
            }
        }
        Ok(nll)
    }

    pub fn gradients(
        &self,
        wrapped: &[TokenId],
        r_beta: Option<&[f64]>,
    ) -> Result<(f64, CnlmGradients)> {
        let mut grads = CnlmGradients::zeros_like(self);
        let nll = self.nll_backward(wrapped, r_beta, &mut grads)?;
        Ok((nll, grads))
    }

    /// Repeated argmax (lowest id on ties) from a `BOS` history until `EOS`
    /// or `max_len` generated tokens.
    pub fn decode_greedy(&self, r_beta: Option<&[f64]>, max_len: usize) -> Result<Hypothesis> {
        if max_len == 0 {
            return Err(Error::InvalidArgument("max_len must be >= 1".into()));
        }
        self.check_beta(r_beta)?;
        let mut seq = vec![BOS_ID];
        let mut log_prob = 0.0;
        while seq.len() <= max_len {
            let (mut s, _) = self.scores(&self.history_at(&seq, seq.len()), r_beta);
            log_softmax_in_place(&mut s);
            let mut best = 0;
            for (w, &lp) in s.iter().enumerate().skip(1) {
                if lp > s[best] {
                    best = w;
                }
            }
            log_prob += s[best];
            seq.push(best);
            if best == EOS_ID {
                break;
            }
        }
        Ok(Hypothesis {
            generated: seq[1..].to_vec(),
            log_prob,
        })
    }

    /// Beam search scored by total log probability. Up to `width`
    /// hypotheses are returned, best first; hypotheses still open at
    /// `max_len` are returned truncated.
    pub fn decode_beam(
        &self,
        r_beta: Option<&[f64]>,
        width: usize,
        max_len: usize,
    ) -> Result<Vec<Hypothesis>> {
        if width == 0 || max_len == 0 {
            return Err(Error::InvalidArgument(
                "beam width and max_len must be >= 1".into(),
            ));
        }
        self.check_beta(r_beta)?;
        let mut live: Vec<(Vec<TokenId>, f64)> = vec![(vec![BOS_ID], 0.0)];
        let mut finished: Vec<Hypothesis> = Vec::new();
        for step in 0..max_len {
            let mut candidates: Vec<(f64, usize, TokenId)> =
                Vec::with_capacity(live.len() * self.vocab_size());
            for (rank, (seq, score)) in live.iter().enumerate() {
                let (mut s, _) = self.scores(&self.history_at(seq, seq.len()), r_beta);
                log_softmax_in_place(&mut s);
                candidates.extend(s.iter().enumerate().map(|(w, lp)| (score + lp, rank, w)));
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let mut next = Vec::with_capacity(width);
            for (pos, &(score, rank, w)) in candidates.iter().enumerate() {
                if pos >= width && next.len() >= width {
                    break;
                }
                let extend = || {
                    let mut seq = live[rank].0.clone();
                    seq.push(w);
                    seq
                };
                if w == EOS_ID {
                    if pos < width {
                        finished.push(Hypothesis {
                            generated: extend()[1..].to_vec(),
                            log_prob: score,
                        });
                    }
                } else if next.len() < width {
                    next.push((extend(), score));
                }
            }
            if step + 1 == max_len {
                finished.extend(next.drain(..).map(|(seq, log_prob)| Hypothesis {
                    generated: seq[1..].to_vec(),
                    log_prob,
                }));
            }
            live = next;
            if live.is_empty() {
                break;
            }
            sort_hypotheses(&mut finished);
            if finished.len() >= width && finished[width - 1].log_prob >= live[0].1 {
                break;
            }
        }
        sort_hypotheses(&mut finished);
        finished.truncate(width);
        Ok(finished)
    }
}

fn sort_hypotheses(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| {
        b.log_prob
            .total_cmp(&a.log_prob)
            .then_with(|| a.generated.cmp(&b.generated))
    });
}

#[derive(Debug, Clone)]
pub struct CnlmTrained {
    pub params: CnlmParams,
    /// Mean negative log-likelihood per sequence, one entry per epoch.
    pub trace: Vec<f64>,
}

/// Per-sequence AdaGrad descent on the negative log-likelihood. The
/// conditioning latents are inputs and receive no updates.
pub fn train_cnlm(
    corpus: &LatentCorpus,
    mut params: CnlmParams,
    hyper: &CnlmHyper,
) -> Result<CnlmTrained> {
    hyper.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("cnlm training corpus"));
    }
    for pair in corpus.pairs() {
        ensure_dim(params.dim(), pair.latent.dim())?;
    }
    let wrapped: Vec<Vec<TokenId>> = corpus.pairs().iter().map(|p| wrap(&p.query)).collect();
    let mut shapes = vec![params.table.matrix().as_slice().len()];
    shapes.extend(params.context.iter().map(|m| m.as_slice().len()));
    shapes.extend([
        params.cond.as_slice().len(),
        params.bias.len(),
        params.word_bias.len(),
    ]);
    let mut opt = AdaGrad::new(hyper.learning_rate, &shapes);
    let mut grads = CnlmGradients::zeros_like(&params);
    let mut rng = Rng::stream(hyper.seed, TRAIN_STREAM);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut trace = Vec::with_capacity(hyper.epochs);
    let mut step = 0;
    for epoch in 0..hyper.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for &i in &order {
            grads.clear();
            let latent = corpus.pairs()[i].latent.as_slice();
            let nll = params.nll_backward(&wrapped[i], Some(latent), &mut grads)?;
            if !nll.is_finite() {
                return Err(Error::Diverged { step, loss: nll });
            }
            total += nll;
            apply(&mut opt, &mut params, &grads);
            step += 1;
        }
        let mean = total / corpus.len() as f64;
        log::debug!("cnlm epoch {epoch}: mean nll {mean:.6}");
        trace.push(mean);
    }
    Ok(CnlmTrained { params, trace })
}

fn apply(opt: &mut AdaGrad, params: &mut CnlmParams, grads: &CnlmGradients) {
    opt.step(
        0,
        params.table.matrix_mut().as_mut_slice(),
        grads.table.as_slice(),
    );
    let n = params.context.len();
    for (i, (m, g)) in params.context.iter_mut().zip(&grads.context).enumerate() {
        opt.step(1 + i, m.as_mut_slice(), g.as_slice());
    }
    opt.step(1 + n, params.cond.as_mut_slice(), grads.cond.as_slice());
    opt.step(2 + n, &mut params.bias, &grads.bias);
    opt.step(3 + n, &mut params.word_bias, &grads.word_bias);
}
