//! Greedy and beam-search decoding over a sliding token window.

use std::cmp::Ordering;

use crate::dsl::Vocabulary;
use crate::model::{Model, ModelError};
use crate::raster::GuiImage;
use crate::tensor::Real;
use crate::train::context_window;

pub const DEFAULT_MAX_LEN: usize = 512;

/// Anything that maps a token window to a next-token distribution.
pub trait NextToken {
    fn window(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn pad(&self) -> usize;
    fn start(&self) -> usize;
    fn end(&self) -> usize;
    fn distribution(&self, context: &[usize]) -> Result<Vec<f64>, ModelError>;
}

/// A model conditioned on one image (features computed once).
pub struct ImageConditioned<'m, T: Real> {
    model: &'m Model<T>,
    features: Vec<T>,
    pad: usize,
    start: usize,
    end: usize,
}

impl<'m, T: Real> ImageConditioned<'m, T> {
    pub fn new(
        model: &'m Model<T>,
        image: &GuiImage,
        vocab: &Vocabulary,
    ) -> Result<Self, ModelError> {
        Ok(Self {
            model,
            features: model.encode_image(image)?,
            pad: vocab.pad(),
            start: vocab.start(),
            end: vocab.end(),
        })
    }
}

impl<T: Real> NextToken for ImageConditioned<'_, T> {
    fn window(&self) -> usize {
        self.model.config().window
    }

    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn pad(&self) -> usize {
        self.pad
    }

    fn start(&self) -> usize {
        self.start
    }

    fn end(&self) -> usize {
        self.end
    }

    fn distribution(&self, context: &[usize]) -> Result<Vec<f64>, ModelError> {
        let y = self.model.next_distribution(&self.features, context)?;
        Ok(y.into_iter().map(Real::as_f64).collect())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(y: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in y.iter().enumerate() {
        if v > y[best] {
            best = i;
        }
    }
    best
}

fn context_after(src: &impl NextToken, tokens: &[usize]) -> Vec<usize> {
    let mut seq = Vec::with_capacity(tokens.len() + 1);
    seq.push(src.start());
    seq.extend_from_slice(tokens);
    context_window(&seq, seq.len(), src.window(), src.pad())
}

/// Greedy decoding. The result excludes START and includes END if it was
/// produced within `max_len` tokens.
pub fn sample_greedy(src: &impl NextToken, max_len: usize) -> Result<Vec<usize>, ModelError> {
    let mut out = Vec::new();
    while out.len() < max_len {
        let y = src.distribution(&context_after(src, &out))?;
        let t = argmax(&y);
        out.push(t);
        if t == src.end() {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamHypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

/// Beam search over cumulative log-probability without length
/// normalization. Hypotheses ending in END, or reaching `max_len`, are
/// retired; search stops once no live hypothesis can beat the best retired
/// one. Ties are broken by beam position, then token index.
pub fn sample_beam(
    src: &impl NextToken,
    width: usize,
    max_len: usize,
) -> Result<BeamHypothesis, ModelError> {
    let width = width.max(1);
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: max_len == 0,
    }];
    if max_len == 0 {
        return Ok(live.remove(0));
    }
    let mut pool: Vec<BeamHypothesis> = Vec::new();
    while !live.is_empty() {
        let best_done = pool
            .iter()
            .map(|h| h.log_prob)
            .fold(f64::NEG_INFINITY, f64::max);
        let best_live = live
            .iter()
            .map(|h| h.log_prob)
            .fold(f64::NEG_INFINITY, f64::max);
        if best_done >= best_live {
            break;
        }
        let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * src.vocab_size());
        for (b, h) in live.iter().enumerate() {
            let y = src.distribution(&context_after(src, &h.tokens))?;
            for (t, &p) in y.iter().enumerate() {
                cand.push((h.log_prob + p.ln(), b, t));
            }
        }
        cand.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(Ordering::Equal)
                .then((a.1, a.2).cmp(&(b.1, b.2)))
        });
        let mut next = Vec::with_capacity(width);
        for &(lp, b, t) in cand.iter().take(width) {
            let mut tokens = live[b].tokens.clone();
            tokens.push(t);
            let finished = t == src.end() || tokens.len() >= max_len;
            let h = BeamHypothesis {
                tokens,
                log_prob: lp,
                finished,
            };
            if finished {
                pool.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
    }
    let best = pool
        .into_iter()
        .chain(live)
        .reduce(|best, h| if h.log_prob > best.log_prob { h } else { best })
        .expect("at least one hypothesis");
    Ok(best)
}

/// Sum of per-step log-probabilities of `tokens`, replayed from scratch.
pub fn sequence_log_prob(src: &impl NextToken, tokens: &[usize]) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for i in 0..tokens.len() {
        let y = src.distribution(&context_after(src, &tokens[..i]))?;
        total += y[tokens[i]].ln();
    }
    Ok(total)
}
