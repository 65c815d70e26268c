//! Sliding-window samples and the mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::dataset::Example;
use crate::dsl::{Token, Vocabulary};
use crate::model::{Model, ModelError, Pass};
use crate::synth::item_seed;
use crate::tensor::{Grads, Real, RmsProp, RmsPropState, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("token `{0}` is not in the vocabulary")]
    UnknownToken(Token),
    #[error("window must be at least 2, got {0}")]
    WindowTooShort(usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error(
        "non-finite loss in epoch {epoch}, batch {batch} (loss {loss}, max |grad| {max_grad})"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        max_grad: f64,
    },
}

/// One prediction: `context` (left-padded to the window) followed by `target`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub image: usize,
    pub context: Vec<usize>,
    pub target: usize,
}

/// Token indices of `START · tokens · END`.
pub fn framed_indices(tokens: &[Token], vocab: &Vocabulary) -> Result<Vec<usize>, TrainError> {
    let mut seq = Vec::with_capacity(tokens.len() + 2);
    seq.push(vocab.start());
    for &t in tokens {
        seq.push(vocab.index_of(t).ok_or(TrainError::UnknownToken(t))?);
    }
    seq.push(vocab.end());
    Ok(seq)
}

/// The last `window` entries of `seq[..end]`, left-padded with `pad`.
pub fn context_window(seq: &[usize], end: usize, window: usize, pad: usize) -> Vec<usize> {
    let start = end.saturating_sub(window);
    let mut ctx = vec![pad; window - (end - start)];
    ctx.extend_from_slice(&seq[start..end]);
    ctx
}

/// One sample per predictable position of `START · tokens · END`: a file of
/// `N` tokens yields `N + 1` samples, all referring to `image`.
pub fn build_windows(
    tokens: &[Token],
    vocab: &Vocabulary,
    image: usize,
    window: usize,
) -> Result<Vec<TrainingSample>, TrainError> {
    if window < 2 {
        return Err(TrainError::WindowTooShort(window));
    }
    let seq = framed_indices(tokens, vocab)?;
    Ok((1..seq.len())
        .map(|j| TrainingSample {
            image,
            context: context_window(&seq, j, window, vocab.pad()),
            target: seq[j],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: RmsProp,
    /// Files per shuffling group. Samples are shuffled within a group, so a
    /// batch draws on few images and each image is encoded once per batch.
    pub shuffle_group: usize,
    /// Learning-rate multiplier applied after every epoch.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            optimizer: RmsProp::default(),
            shuffle_group: 4,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self, ConfigError> {
        let d = Self::default();
        let cfg = Self {
            epochs: kv.take("epochs")?.unwrap_or(d.epochs),
            batch_size: kv.take("batch_size")?.unwrap_or(d.batch_size),
            optimizer: RmsProp {
                learning_rate: kv
                    .take("learning_rate")?
                    .unwrap_or(d.optimizer.learning_rate),
                rho: kv.take("rho")?.unwrap_or(d.optimizer.rho),
                epsilon: kv.take("epsilon")?.unwrap_or(d.optimizer.epsilon),
                clip: kv.take("clip")?.unwrap_or(d.optimizer.clip),
            },
            shuffle_group: kv.take("shuffle_group")?.unwrap_or(d.shuffle_group),
            lr_decay: kv.take("lr_decay")?.unwrap_or(d.lr_decay),
        };
        if cfg.batch_size == 0 || cfg.shuffle_group == 0 {
            return Err(ConfigError::Invalid(
                "batch_size and shuffle_group must be positive".into(),
            ));
        }
        if !(cfg.optimizer.learning_rate >= 0.0 && cfg.optimizer.clip > 0.0) {
            return Err(ConfigError::Invalid(
                "learning_rate must be >= 0 and clip > 0".into(),
            ));
        }
        if !(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0) {
            return Err(ConfigError::Invalid("lr_decay must be in (0, 1]".into()));
        }
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        kv.insert("epochs", self.epochs);
        kv.insert("batch_size", self.batch_size);
        kv.insert("learning_rate", self.optimizer.learning_rate);
        kv.insert("rho", self.optimizer.rho);
        kv.insert("epsilon", self.optimizer.epsilon);
        kv.insert("clip", self.optimizer.clip);
        kv.insert("shuffle_group", self.shuffle_group);
        kv.insert("lr_decay", self.lr_decay);
    }
}

/// Mean training loss per epoch and per optimizer step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub epochs: Vec<f64>,
    pub steps: Vec<f64>,
}

impl LossTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (i, l) in self.epochs.iter().enumerate() {
            out.push_str(&format!("{},{l}\n", i + 1));
        }
        out
    }
}

/// Samples of one epoch in training order.
fn epoch_order(
    per_file: &[Vec<TrainingSample>],
    group: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, usize)> {
    let mut files: Vec<usize> = (0..per_file.len()).collect();
    files.shuffle(rng);
    let mut order = Vec::new();
    for chunk in files.chunks(group) {
        let start = order.len();
        for &f in chunk {
            order.extend((0..per_file[f].len()).map(|s| (f, s)));
        }
        order[start..].shuffle(rng);
    }
    order
}

/// Loss sum and gradients of `batch`, scaled by `1 / scale`. Work is split by
/// image; partial results are summed in a fixed order.
fn batch_gradients(
    model: &Model<f32>,
    examples: &[Example],
    per_file: &[Vec<TrainingSample>],
    batch: &[(usize, usize)],
    scale: f32,
    seed: u64,
) -> Result<(f64, Grads<f32>), ModelError> {
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for &(f, s) in batch {
        match groups.iter_mut().find(|(g, _)| *g == f) {
            Some((_, v)) => v.push(s),
            None => groups.push((f, vec![s])),
        }
    }
    let parts: Vec<Result<(f64, Grads<f32>), ModelError>> = groups
        .par_iter()
        .map(|(f, samples)| {
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, *f as u64));
            let mut pass = Pass::Train(&mut rng);
            let mut tape = Tape::new(model.params());
            let x = tape.input(model.image_tensor(&examples[*f].image)?);
            let p = model.vision_encode(&mut tape, x, &mut pass)?;
            let mut losses = Vec::with_capacity(samples.len());
            for &s in samples {
                let sample = &per_file[*f][s];
                losses.push(model.window_loss(
                    &mut tape,
                    p,
                    &sample.context,
                    sample.target,
                    &mut pass,
                )?);
            }
            let total = tape.weighted_sum(&losses, 1.0 / scale)?;
            let loss_sum = losses.iter().map(|&l| tape.scalar(l) as f64).sum();
            let mut grads = Grads::zeros_like(model.params());
            tape.backward(total, &mut grads)?;
            Ok((loss_sum, grads))
        })
        .collect();
    let mut grads = Grads::zeros_like(model.params());
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

/// Mean inference-mode loss over every window of `examples`.
pub fn mean_loss<T: Real>(
    model: &Model<T>,
    examples: &[Example],
    vocab: &Vocabulary,
) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let window = model.config().window;
    let parts = examples
        .par_iter()
        .map(|e| {
            let samples = build_windows(&e.tokens, vocab, e.id, window)?;
            let mut tape = Tape::new(model.params());
            let x = tape.input(model.image_tensor(&e.image)?);
            let p = model.vision_encode(&mut tape, x, &mut Pass::Infer)?;
            let mut sum = 0.0;
            for s in &samples {
                let l = model.window_loss(&mut tape, p, &s.context, s.target, &mut Pass::Infer)?;
                sum += tape.scalar(l).as_f64();
            }
            Ok((sum, samples.len()))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let (sum, n) = parts
        .iter()
        .fold((0.0, 0), |(a, b), &(s, n)| (a + s, b + n));
    Ok(sum / n as f64)
}

/// Epoch-by-epoch trainer. Optimizer state persists across epochs, so
/// calling [`Trainer::epoch`] repeatedly equals one [`train`] call.
pub struct Trainer<'a> {
    examples: &'a [Example],
    per_file: Vec<Vec<TrainingSample>>,
    total: usize,
    config: TrainConfig,
    state: RmsPropState<f32>,
    seed: u64,
    epochs_done: usize,
    trace: LossTrace,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &Model<f32>,
        examples: &'a [Example],
        vocab: &Vocabulary,
        config: &TrainConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        if examples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let window = model.config().window;
        let per_file = examples
            .iter()
            .enumerate()
            .map(|(i, e)| build_windows(&e.tokens, vocab, i, window))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            examples,
            total: per_file.iter().map(Vec::len).sum(),
            per_file,
            config: config.clone(),
            state: RmsPropState::zeros_like(model.params()),
            seed,
            epochs_done: 0,
            trace: LossTrace::default(),
        })
    }

    pub fn trace(&self) -> &LossTrace {
        &self.trace
    }

    pub fn into_trace(self) -> LossTrace {
        self.trace
    }

    /// Runs one epoch, calling `on_step` with the mean loss of each batch,
    /// and returns the epoch's mean loss.
    pub fn epoch(
        &mut self,
        model: &mut Model<f32>,
        mut on_step: impl FnMut(&Model<f32>, f64),
    ) -> Result<f64, TrainError> {
        let epoch = self.epochs_done;
        let epoch_seed = item_seed(self.seed, epoch as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        let order = epoch_order(&self.per_file, self.config.shuffle_group, &mut rng);
        let mut optimizer = self.config.optimizer;
        optimizer.learning_rate *= self.config.lr_decay.powi(epoch as i32);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let batch_seed = item_seed(epoch_seed, b as u64);
            let (loss, mut grads) = batch_gradients(
                model,
                self.examples,
                &self.per_file,
                batch,
                batch.len() as f32,
                batch_seed,
            )?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b,
                    loss,
                    max_grad: grads.max_abs() as f64,
                });
            }
            optimizer
                .step(model.params_mut(), &mut grads, &mut self.state)
                .map_err(ModelError::from)?;
            let step_loss = loss / batch.len() as f64;
            self.trace.steps.push(step_loss);
            on_step(model, step_loss);
            epoch_loss += loss;
        }
        let mean = epoch_loss / self.total as f64;
        self.trace.epochs.push(mean);
        self.epochs_done += 1;
        Ok(mean)
    }
}

/// Trains `model` in place for `config.epochs` epochs. Deterministic given
/// the model, data, config and seed; the thread count does not affect results.
pub fn train(
    model: &mut Model<f32>,
    examples: &[Example],
    vocab: &Vocabulary,
    config: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<LossTrace, TrainError> {
    let mut trainer = Trainer::new(model, examples, vocab, config, seed)?;
    for e in 0..config.epochs {
        let mean = trainer.epoch(model, |_, _| {})?;
        on_epoch(e + 1, mean);
    }
    Ok(trainer.into_trace())
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_str, to_tokens, Element};
    use crate::model::ModelConfig;
    use crate::raster::{rasterize, RenderTheme};

    fn tokens(text: &str) -> Vec<Token> {
        to_tokens(&parse_str(text).unwrap())
    }

    #[test]
    fn three_token_file_gives_four_samples() {
        let v = Vocabulary::standard();
        let toks = vec![Token::Element(Element::Row), Token::Open, Token::Close];
        let s = build_windows(&toks, &v, 0, 5).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s[0].context, vec![0, 0, 0, 0, v.start()]);
        assert_eq!(s[0].target, v.index_of(toks[0]).unwrap());
        assert_eq!(s[3].target, v.end());
        assert_eq!(
            s[3].context[1..],
            [v.start(), v.index_of(toks[0]).unwrap(), 3, 4]
        );
    }

    #[test]
    fn empty_file_gives_one_sample() {
        let v = Vocabulary::standard();
        let s = build_windows(&[], &v, 2, 4).unwrap();
        assert_eq!(
            s,
            vec![TrainingSample {
                image: 2,
                context: vec![0, 0, 0, v.start()],
                target: v.end()
            }]
        );
        assert!(matches!(
            build_windows(&[], &v, 0, 1),
            Err(TrainError::WindowTooShort(1))
        ));
    }

    #[test]
    fn long_files_slide() {
        let v = Vocabulary::standard();
        let t = tokens("header { btn-active , btn-inactive , btn-active } row { quadruple { text } quadruple { text } quadruple { text } quadruple { text } }");
        let s = build_windows(&t, &v, 0, 4).unwrap();
        assert_eq!(s.len(), t.len() + 1);
        for w in s.windows(2) {
            assert_eq!(w[0].context[1..], w[1].context[..3]);
            assert_eq!(w[1].context[3], w[0].target);
        }
    }

    #[test]
    fn epoch_order_keeps_groups_contiguous() {
        let per_file: Vec<Vec<TrainingSample>> = (0..5)
            .map(|f| {
                (0..3)
                    .map(|_| TrainingSample {
                        image: f,
                        context: vec![],
                        target: 0,
                    })
                    .collect()
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let order = epoch_order(&per_file, 2, &mut rng);
        assert_eq!(order.len(), 15);
        let mut seen: Vec<_> = order.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 15);
        for chunk in order.chunks(6).take(2) {
            let mut files: Vec<usize> = chunk.iter().map(|p| p.0).collect();
            files.sort();
            files.dedup();
            assert_eq!(files.len(), 2);
        }
    }

    fn micro_examples() -> Vec<Example> {
        let theme = RenderTheme::default();
        [
            "header { btn-active } row { single { text } }",
            "row { double { btn-red } double { text } }",
        ]
        .iter()
        .enumerate()
        .map(|(id, s)| {
            let ast = parse_str(s).unwrap();
            let image = rasterize(&ast, 64, 64, &theme)
                .unwrap()
                .resize(16, 16)
                .unwrap();
            Example {
                id,
                image,
                tokens: to_tokens(&ast),
            }
        })
        .collect()
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut model = Model::<f32>::new(ModelConfig::micro(), 0).unwrap();
        let before = model.params().clone();
        let mut cfg = TrainConfig {
            epochs: 3,
            batch_size: 5,
            ..Default::default()
        };
        cfg.optimizer.learning_rate = 0.0;
        let trace = train(
            &mut model,
            &micro_examples(),
            &Vocabulary::standard(),
            &cfg,
            1,
            |_, _| {},
        )
        .unwrap();
        assert_eq!(model.params(), &before);
        assert_eq!(trace.epochs.len(), 3);
        assert!(trace.epochs.iter().all(|&l| l.is_finite() && l > 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 7,
            ..Default::default()
        };
        let run = || {
            let mut model = Model::<f32>::new(ModelConfig::micro(), 4).unwrap();
            let trace = train(
                &mut model,
                &micro_examples(),
                &Vocabulary::standard(),
                &cfg,
                9,
                |_, _| {},
            )
            .unwrap();
            (trace, model.into_params())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_keys() {
        let mut kv = KeyValues::parse("epochs = 3\nlearning_rate = 0.001\n").unwrap();
        let cfg = TrainConfig::from_kv(&mut kv).unwrap();
        assert_eq!(
            (cfg.epochs, cfg.optimizer.learning_rate, cfg.batch_size),
            (3, 0.001, 64)
        );
        let mut out = KeyValues::new();
        cfg.write_kv(&mut out);
        let mut back = KeyValues::parse(&out.to_text()).unwrap();
        assert_eq!(TrainConfig::from_kv(&mut back).unwrap(), cfg);
        let mut bad = KeyValues::parse("batch_size = 0\n").unwrap();
        assert!(TrainConfig::from_kv(&mut bad).is_err());
    }
}
