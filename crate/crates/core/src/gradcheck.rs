//! Finite-difference verification of every hand-derived gradient, grouped by
//! parameter class.

use std::fmt::Write as _;

use crate::bicvm::{bi_error, objective_with_noise, BiCvmHyper, BiCvmParams};
use crate::cnlm::{wrap, CnlmHyper, CnlmParams};
use crate::composition::{CompositionFn, CompositionMode, SequenceEncoder};
use crate::corpus::{EncodedCorpus, EncodedPair};
use crate::error::{Error, Result};
use crate::lexicon::{EmbeddingTable, TokenId, Vocabulary};
use crate::numerics::{dot_unchecked, finite_diff_grad, max_relative_error, Rng, FD_EPSILON};

pub const DEFAULT_THRESHOLD: f64 = 1e-4;

pub const CLASSES: &[&str] = &[
    "composition/additive",
    "composition/bigram",
    "bicvm/question-embeddings",
    "bicvm/query-embeddings",
    "cnlm/R",
    "cnlm/C_1",
    "cnlm/C_2",
    "cnlm/C_3",
    "cnlm/C_beta",
    "cnlm/b_R",
    "cnlm/b_w",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub instances: usize,
    pub seed: u64,
    pub max_dim: usize,
    /// Including the four reserved tokens.
    pub max_vocab: usize,
    pub epsilon: f64,
    pub threshold: f64,
    /// Perturbs the analytic gradient of one class, to exercise failure.
    pub corrupt: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            instances: 50,
            seed: 0,
            max_dim: 8,
            max_vocab: 12,
            epsilon: FD_EPSILON,
            threshold: DEFAULT_THRESHOLD,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub classes: Vec<ClassResult>,
    pub threshold: f64,
    pub instances: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.classes
            .iter()
            .all(|c| c.max_rel_error <= self.threshold)
    }

    pub fn worst(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| c.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "gradcheck: at least {} instances per class, threshold {:e}",
            self.instances, self.threshold
        );
        let _ = writeln!(
            out,
            "{:<28} {:>14} {:>12} {:>10}",
            "class", "max_rel_error", "coordinates", "status"
        );
        for c in &self.classes {
            let status = if c.max_rel_error <= self.threshold {
                "ok"
            } else {
                "FAIL"
            };
            let _ = writeln!(
                out,
                "{:<28} {:>14.3e} {:>12} {:>10}",
                c.name, c.max_rel_error, c.coordinates, status
            );
        }
        let _ = writeln!(out, "{}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

struct Tally {
    classes: Vec<ClassResult>,
    corrupt: Option<String>,
}

impl Tally {
    fn record(&mut self, name: &'static str, analytic: &[f64], numeric: &[f64]) {
        let mut analytic = analytic.to_vec();
        if self.corrupt.as_deref() == Some(name) {
            if let Some(first) = analytic.first_mut() {
                *first += 1.0;
            }
        }
        let err = max_relative_error(&analytic, numeric);
        let slot = self
            .classes
            .iter_mut()
            .find(|c| c.name == name)
            .expect("registered class");
        slot.max_rel_error = slot.max_rel_error.max(err);
        slot.coordinates += analytic.len();
        slot.instances += 1;
    }
}

fn random_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_in(-scale, scale)).collect()
}

fn random_vocab(rng: &mut Rng, max_vocab: usize) -> Vocabulary {
    let extra = 1 + rng.below(max_vocab.saturating_sub(4).max(1));
    let words: Vec<String> = (0..extra).map(|i| format!("w{i}")).collect();
    Vocabulary::build(&[words], 1).expect("non-empty min_count")
}

fn random_seq(rng: &mut Rng, vocab: usize, max_len: usize) -> Vec<TokenId> {
    let len = 1 + rng.below(max_len);
    (0..len).map(|_| 4 + rng.below(vocab - 4)).collect()
}

pub fn run(config: &GradCheckConfig) -> Result<GradCheckReport> {
    if config.instances == 0 || config.max_dim == 0 || config.max_vocab < 5 {
        return Err(Error::InvalidArgument(
            "gradcheck needs instances >= 1, max_dim >= 1 and max_vocab >= 5".into(),
        ));
    }
    if let Some(c) = &config.corrupt {
        if !CLASSES.contains(&c.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "unknown gradient class {c:?}"
            )));
        }
    }
    let mut tally = Tally {
        classes: CLASSES
            .iter()
            .map(|&name| ClassResult {
                name,
                max_rel_error: 0.0,
                coordinates: 0,
                instances: 0,
            })
            .collect(),
        corrupt: config.corrupt.clone(),
    };
    let mut rng = Rng::new(config.seed);
    for _ in 0..config.instances {
        check_composition(&mut rng, config, &mut tally)?;
        check_bicvm(&mut rng, config, &mut tally)?;
    }
    // orders 2, 3, 4 in turn, so even C_3 sees `instances` draws
    for i in 0..3 * config.instances {
        check_cnlm(&mut rng, config, 2 + i % 3, &mut tally)?;
    }
    Ok(GradCheckReport {
        classes: tally.classes,
        threshold: config.threshold,
        instances: config.instances,
    })
}

fn check_composition(rng: &mut Rng, config: &GradCheckConfig, tally: &mut Tally) -> Result<()> {
    let d = 1 + rng.below(config.max_dim);
    let len = 1 + rng.below(6);
    let xs: Vec<Vec<f64>> = (0..len).map(|_| random_vec(rng, d, 1.5)).collect();
    let upstream = random_vec(rng, d, 1.0);
    for (mode, name) in [
        (CompositionMode::Additive, "composition/additive"),
        (CompositionMode::Bigram, "composition/bigram"),
    ] {
        let f = CompositionFn::new(mode, d);
        let analytic: Vec<f64> = f
            .compose_backward(&xs, &upstream)?
            .into_iter()
            .flat_map(|v| v.into_inner())
            .collect();
        let numeric = finite_diff_grad(
            |theta| {
                let rows: Vec<&[f64]> = theta.chunks(d).collect();
                dot_unchecked(&f.compose_unchecked(&rows), &upstream)
            },
            &xs.concat(),
            config.epsilon,
        )?;
        tally.record(name, &analytic, &numeric);
    }
    Ok(())
}

/// Smallest `|m + E_bi(a,b) − E_bi(a,n)|` over the instance; tiny values sit
/// on the hinge kink where central differences are meaningless.
fn kink_distance(
    corpus: &EncodedCorpus,
    noise: &[Vec<usize>],
    params: &BiCvmParams,
    margin: f64,
) -> Result<f64> {
    let mut closest = f64::INFINITY;
    for (i, ns) in noise.iter().enumerate() {
        let a = params.question.encode(&corpus.pairs[i].question)?;
        let b = params.query.encode(&corpus.pairs[i].query)?;
        for &j in ns {
            let n = params.query.encode(&corpus.pairs[j].query)?;
            let raw = margin
                + (bi_error(a.as_slice(), b.as_slice())? - bi_error(a.as_slice(), n.as_slice())?);
            closest = closest.min(raw.abs());
        }
    }
    Ok(closest)
}

fn check_bicvm(rng: &mut Rng, config: &GradCheckConfig, tally: &mut Tally) -> Result<()> {
    loop {
        let d = 1 + rng.below(config.max_dim);
        let qv = random_vocab(rng, config.max_vocab);
        let rv = random_vocab(rng, config.max_vocab);
        let n_pairs = 3;
        let mut pairs = Vec::with_capacity(n_pairs);
        while pairs.len() < n_pairs {
            let query = random_seq(rng, rv.len(), 4);
            if pairs.iter().any(|p: &EncodedPair| p.query == query) {
                continue;
            }
            pairs.push(EncodedPair {
                question: random_seq(rng, qv.len(), 5),
                query,
            });
        }
        let corpus = EncodedCorpus { pairs };
        let modes = [CompositionMode::Additive, CompositionMode::Bigram];
        let g = modes[rng.below(2)];
        let h = modes[rng.below(2)];
        let dq = EmbeddingTable::init(qv, d, 0.8, rng)?;
        let dr = EmbeddingTable::init(rv, d, 0.8, rng)?;
        let params = BiCvmParams::new(SequenceEncoder::new(dq, g), SequenceEncoder::new(dr, h))?;
        let hyper = BiCvmHyper {
            margin: rng.uniform_in(0.5, 3.0),
            l2: rng.uniform_in(0.0, 0.05),
            noise_count: 2,
            dim: d,
            ..Default::default()
        };
        let noise: Vec<Vec<usize>> = (0..n_pairs)
            .map(|i| {
                (0..hyper.noise_count)
                    .map(|_| (i + 1 + rng.below(n_pairs - 1)) % n_pairs)
                    .collect()
            })
            .collect();
        if kink_distance(&corpus, &noise, &params, hyper.margin)? < 1e-3 {
            continue;
        }
        let batch: Vec<usize> = (0..n_pairs).collect();
        let value = objective_with_noise(&corpus, &batch, &noise, &params, &hyper)?;

        let nq = params.question.table.matrix().as_slice().len();
        let theta = [
            params.question.table.matrix().as_slice(),
            params.query.table.matrix().as_slice(),
        ]
        .concat();
        let mut probe = params.clone();
        let numeric = finite_diff_grad(
            |t| {
                probe
                    .question
                    .table
                    .matrix_mut()
                    .as_mut_slice()
                    .copy_from_slice(&t[..nq]);
                probe
                    .query
                    .table
                    .matrix_mut()
                    .as_mut_slice()
                    .copy_from_slice(&t[nq..]);
                objective_with_noise(&corpus, &batch, &noise, &probe, &hyper)
                    .map(|v| v.total())
                    .unwrap_or(f64::NAN)
            },
            &theta,
            config.epsilon,
        )?;
        tally.record(
            "bicvm/question-embeddings",
            value.grads.question.as_slice(),
            &numeric[..nq],
        );
        tally.record(
            "bicvm/query-embeddings",
            value.grads.query.as_slice(),
            &numeric[nq..],
        );
        return Ok(());
    }
}

/// Offsets of each parameter block inside the flattened vector.
struct Layout {
    table: std::ops::Range<usize>,
    context: Vec<std::ops::Range<usize>>,
    cond: std::ops::Range<usize>,
    bias: std::ops::Range<usize>,
    word_bias: std::ops::Range<usize>,
}

fn flatten(p: &CnlmParams) -> (Vec<f64>, Layout) {
    let mut out = Vec::new();
    let block = |out: &mut Vec<f64>, xs: &[f64]| {
        let start = out.len();
        out.extend_from_slice(xs);
        start..out.len()
    };
    let table = block(&mut out, p.table.matrix().as_slice());
    let context = p
        .context
        .iter()
        .map(|c| block(&mut out, c.as_slice()))
        .collect();
    let cond = block(&mut out, p.cond.as_slice());
    let bias = block(&mut out, &p.bias);
    let word_bias = block(&mut out, &p.word_bias);
    (
        out,
        Layout {
            table,
            context,
            cond,
            bias,
            word_bias,
        },
    )
}

fn unflatten(p: &mut CnlmParams, theta: &[f64], l: &Layout) {
    p.table
        .matrix_mut()
        .as_mut_slice()
        .copy_from_slice(&theta[l.table.clone()]);
    for (c, r) in p.context.iter_mut().zip(&l.context) {
        c.as_mut_slice().copy_from_slice(&theta[r.clone()]);
    }
    p.cond
        .as_mut_slice()
        .copy_from_slice(&theta[l.cond.clone()]);
    p.bias.copy_from_slice(&theta[l.bias.clone()]);
    p.word_bias.copy_from_slice(&theta[l.word_bias.clone()]);
}

const CONTEXT_CLASSES: [&str; 3] = ["cnlm/C_1", "cnlm/C_2", "cnlm/C_3"];

fn check_cnlm(
    rng: &mut Rng,
    config: &GradCheckConfig,
    order: usize,
    tally: &mut Tally,
) -> Result<()> {
    let d = 1 + rng.below(config.max_dim);
    let vocab = random_vocab(rng, config.max_vocab);
    let v = vocab.len();
    let hyper = CnlmHyper {
        context: order,
        dim: d,
        init_scale: 0.8,
        ..Default::default()
    };
    let mut params = CnlmParams::init(vocab, &hyper, rng)?;
    params.bias = random_vec(rng, d, 0.5);
    params.word_bias = random_vec(rng, v, 0.5);
    let seqs: Vec<Vec<TokenId>> = (0..2).map(|_| wrap(&random_seq(rng, v, 5))).collect();
    let beta = random_vec(rng, d, 1.0);

    let mut grads = None;
    for s in &seqs {
        match &mut grads {
            None => grads = Some(params.gradients(s, Some(&beta))?.1),
            Some(g) => {
                params.nll_backward(s, Some(&beta), g)?;
            }
        }
    }
    let grads = grads.expect("two sequences");
    let (theta, layout) = flatten(&params);
    let mut probe = params.clone();
    let numeric = finite_diff_grad(
        |t| {
            unflatten(&mut probe, t, &layout);
            seqs.iter()
                .map(|s| {
                    probe
                        .sequence_log_prob(s, Some(&beta))
                        .map(|lp| -lp)
                        .unwrap_or(f64::NAN)
                })
                .sum()
        },
        &theta,
        config.epsilon,
    )?;
    tally.record(
        "cnlm/R",
        grads.table.as_slice(),
        &numeric[layout.table.clone()],
    );
    for (i, (g, r)) in grads.context.iter().zip(&layout.context).enumerate() {
        tally.record(CONTEXT_CLASSES[i], g.as_slice(), &numeric[r.clone()]);
    }
    tally.record(
        "cnlm/C_beta",
        grads.cond.as_slice(),
        &numeric[layout.cond.clone()],
    );
    tally.record("cnlm/b_R", &grads.bias, &numeric[layout.bias.clone()]);
    tally.record(
        "cnlm/b_w",
        &grads.word_bias,
        &numeric[layout.word_bias.clone()],
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let report = run(&GradCheckConfig {
            instances: 6,
            ..Default::default()
        })
        .unwrap();
        assert!(report.passed(), "{}", report.render());
        assert!(report.classes.len() >= 6);
        assert!(report.classes.iter().all(|c| c.instances > 0));
    }

    #[test]
    fn corruption_is_detected() {
        let config = GradCheckConfig {
            instances: 3,
            corrupt: Some("cnlm/C_beta".into()),
            ..Default::default()
        };
        let report = run(&config).unwrap();
        assert!(!report.passed());
        let bad: Vec<&str> = report
            .classes
            .iter()
            .filter(|c| c.max_rel_error > report.threshold)
            .map(|c| c.name)
            .collect();
        assert_eq!(bad, vec!["cnlm/C_beta"]);
        assert!(report.render().contains("FAIL"));
    }

    #[test]
    fn unknown_class_rejected() {
        let config = GradCheckConfig {
            corrupt: Some("nope".into()),
            ..Default::default()
        };
        assert!(run(&config).is_err());
    }
}
