//! The screenshot-to-code network.
//!
//! A convolutional encoder maps the image to a feature vector `p`; a stacked
//! LSTM encodes the token context into `q_1..q_T`; a second stacked LSTM
//! reads `concat(q_t, p)` for every step and its final output is projected
//! through a softmax layer onto the vocabulary.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::raster::GuiImage;
use crate::tensor::{
    Gate, LstmVars, Mode, ParamId, ParamStore, Real, Tape, Tensor, TensorError, Var,
};

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?}, config expects {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unexpected parameter `{0}`")]
    ExtraParam(String),
    #[error("token index {0} is outside the vocabulary")]
    TokenOutOfRange(usize),
    #[error("image is {width}x{height}, model expects {size}x{size}")]
    ImageSize {
        width: u32,
        height: u32,
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Convolution widths, consumed in pairs; each pair is followed by 2x2 pooling.
    pub conv_widths: Vec<usize>,
    pub fc_width: usize,
    pub language_layers: usize,
    pub language_cells: usize,
    pub decoder_layers: usize,
    pub decoder_cells: usize,
    pub vocab_size: usize,
    pub window: usize,
    pub conv_dropout: f64,
    pub fc_dropout: f64,
    pub lstm_dropout: f64,
}

impl ModelConfig {
    pub fn full() -> Self {
        Self {
            image_size: 256,
            conv_widths: vec![32, 32, 64, 64, 128, 128],
            fc_width: 1024,
            language_layers: 2,
            language_cells: 128,
            decoder_layers: 2,
            decoder_cells: 512,
            vocab_size: 18,
            window: 48,
            conv_dropout: 0.25,
            fc_dropout: 0.3,
            lstm_dropout: 0.1,
        }
    }

    pub fn desk() -> Self {
        Self {
            image_size: 64,
            conv_widths: vec![8, 8, 16, 16, 32, 32],
            fc_width: 128,
            language_cells: 32,
            decoder_cells: 64,
            window: 24,
            ..Self::full()
        }
    }

    /// Tiny network used for finite-difference checks.
    pub fn micro() -> Self {
        Self {
            image_size: 16,
            conv_widths: vec![2, 2, 3, 3, 4, 4],
            fc_width: 6,
            language_cells: 4,
            decoder_cells: 4,
            window: 8,
            ..Self::full()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "desk" => Some(Self::desk()),
            "micro" => Some(Self::micro()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.conv_widths.is_empty() || !self.conv_widths.len().is_multiple_of(2) {
            return bad("conv_widths must hold a non-zero even number of layers");
        }
        if self.conv_widths.contains(&0) {
            return bad("conv widths must be positive");
        }
        let scale = 1usize << self.pool_stages();
        if self.image_size == 0 || !self.image_size.is_multiple_of(scale) {
            return bad("image_size must be a positive multiple of 2^(pooling stages)");
        }
        if self.fc_width == 0 || self.language_cells == 0 || self.decoder_cells == 0 {
            return bad("layer widths must be positive");
        }
        if self.language_layers == 0 || self.decoder_layers == 0 {
            return bad("each LSTM stack needs at least one layer");
        }
        if self.vocab_size < 3 {
            return bad("vocab_size must cover PAD, START and END");
        }
        if self.window < 2 {
            return bad("window must be at least 2");
        }
        for r in [self.conv_dropout, self.fc_dropout, self.lstm_dropout] {
            if !(0.0..1.0).contains(&r) {
                return bad("dropout rates must lie in [0, 1)");
            }
        }
        Ok(())
    }

    pub fn pool_stages(&self) -> usize {
        self.conv_widths.len() / 2
    }

    pub fn flatten_len(&self) -> usize {
        let side = self.image_size >> self.pool_stages();
        side * side * self.conv_widths.last().copied().unwrap_or(0)
    }

    /// Reads the model keys from `kv`. A `preset` key selects the base
    /// values; individual keys override it.
    pub fn from_kv(kv: &mut KeyValues) -> Result<Self, ConfigError> {
        let base = match kv.take::<String>("preset")? {
            None => Self::desk(),
            Some(name) => Self::preset(&name).ok_or(ConfigError::BadValue {
                key: "preset".into(),
                value: name,
            })?,
        };
        let cfg = Self {
            image_size: kv.take("image_size")?.unwrap_or(base.image_size),
            conv_widths: kv.take_list("conv_widths")?.unwrap_or(base.conv_widths),
            fc_width: kv.take("fc_width")?.unwrap_or(base.fc_width),
            language_layers: kv.take("language_layers")?.unwrap_or(base.language_layers),
            language_cells: kv.take("language_cells")?.unwrap_or(base.language_cells),
            decoder_layers: kv.take("decoder_layers")?.unwrap_or(base.decoder_layers),
            decoder_cells: kv.take("decoder_cells")?.unwrap_or(base.decoder_cells),
            vocab_size: kv.take("vocab_size")?.unwrap_or(base.vocab_size),
            window: kv.take("window")?.unwrap_or(base.window),
            conv_dropout: kv.take("conv_dropout")?.unwrap_or(base.conv_dropout),
            fc_dropout: kv.take("fc_dropout")?.unwrap_or(base.fc_dropout),
            lstm_dropout: kv.take("lstm_dropout")?.unwrap_or(base.lstm_dropout),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn write_kv(&self, kv: &mut KeyValues) {
        let widths: Vec<String> = self.conv_widths.iter().map(usize::to_string).collect();
        kv.insert("image_size", self.image_size);
        kv.insert("conv_widths", widths.join(","));
        kv.insert("fc_width", self.fc_width);
        kv.insert("language_layers", self.language_layers);
        kv.insert("language_cells", self.language_cells);
        kv.insert("decoder_layers", self.decoder_layers);
        kv.insert("decoder_cells", self.decoder_cells);
        kv.insert("vocab_size", self.vocab_size);
        kv.insert("window", self.window);
        kv.insert("conv_dropout", self.conv_dropout);
        kv.insert("fc_dropout", self.fc_dropout);
        kv.insert("lstm_dropout", self.lstm_dropout);
    }

    /// Every parameter name and shape, in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut cin = IMAGE_CHANNELS;
        for (k, &w) in self.conv_widths.iter().enumerate() {
            out.push((format!("vision.conv{}.kernel", k + 1), vec![3, 3, cin, w]));
            out.push((format!("vision.conv{}.bias", k + 1), vec![w]));
            cin = w;
        }
        let mut n = self.flatten_len();
        for k in 1..=2 {
            out.push((format!("vision.fc{k}.weight"), vec![n, self.fc_width]));
            out.push((format!("vision.fc{k}.bias"), vec![self.fc_width]));
            n = self.fc_width;
        }
        let lstm = |out: &mut Vec<_>, stack: &str, layers: usize, first_in: usize, m: usize| {
            let mut n = first_in;
            for l in 1..=layers {
                for g in Gate::ALL {
                    out.push((format!("{stack}.lstm{l}.w_{}x", g.letter()), vec![n, m]));
                }
                for g in Gate::ALL {
                    out.push((format!("{stack}.lstm{l}.w_{}h", g.letter()), vec![m, m]));
                }
                for g in Gate::ALL {
                    out.push((format!("{stack}.lstm{l}.b_{}", g.letter()), vec![m]));
                }
                n = m;
            }
        };
        lstm(
            &mut out,
            "language",
            self.language_layers,
            self.vocab_size,
            self.language_cells,
        );
        let dec_in = self.language_cells + self.fc_width;
        lstm(
            &mut out,
            "decoder",
            self.decoder_layers,
            dec_in,
            self.decoder_cells,
        );
        out.push((
            "output.weight".into(),
            vec![self.decoder_cells, self.vocab_size],
        ));
        out.push(("output.bias".into(), vec![self.vocab_size]));
        out
    }

    /// Exact number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Forward-pass mode. Training carries the randomness used by dropout.
pub enum Pass<'a> {
    Infer,
    Train(&'a mut dyn RngCore),
}

#[derive(Debug, Clone, Copy)]
struct LstmIds {
    input: [ParamId; 4],
    recurrent: [ParamId; 4],
    bias: [ParamId; 4],
}

#[derive(Debug, Clone)]
struct Layout {
    convs: Vec<[ParamId; 2]>,
    fcs: [[ParamId; 2]; 2],
    language: Vec<LstmIds>,
    decoder: Vec<LstmIds>,
    output: [ParamId; 2],
}

impl Layout {
    fn resolve<T: Real>(config: &ModelConfig, params: &ParamStore<T>) -> Result<Self, ModelError> {
        let shapes = config.param_shapes();
        for (name, shape) in &shapes {
            let id = params
                .id(name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: params.get(id).shape().to_vec(),
                });
            }
        }
        if let Some((name, _)) = params
            .iter()
            .find(|(n, _)| !shapes.iter().any(|(s, _)| s == n))
        {
            return Err(ModelError::ExtraParam(name.to_string()));
        }
        let id = |name: String| params.id(&name).expect("checked above");
        let stack = |stack: &str, layers: usize| -> Vec<LstmIds> {
            (1..=layers)
                .map(|l| LstmIds {
                    input: Gate::ALL.map(|g| id(format!("{stack}.lstm{l}.w_{}x", g.letter()))),
                    recurrent: Gate::ALL.map(|g| id(format!("{stack}.lstm{l}.w_{}h", g.letter()))),
                    bias: Gate::ALL.map(|g| id(format!("{stack}.lstm{l}.b_{}", g.letter()))),
                })
                .collect()
        };
        Ok(Self {
            convs: (1..=config.conv_widths.len())
                .map(|k| {
                    [
                        id(format!("vision.conv{k}.kernel")),
                        id(format!("vision.conv{k}.bias")),
                    ]
                })
                .collect(),
            fcs: [1, 2].map(|k| {
                [
                    id(format!("vision.fc{k}.weight")),
                    id(format!("vision.fc{k}.bias")),
                ]
            }),
            language: stack("language", config.language_layers),
            decoder: stack("decoder", config.decoder_layers),
            output: [id("output.weight".into()), id("output.bias".into())],
        })
    }
}

/// Fan-in/fan-out of a parameter, or `None` for biases.
fn fans(shape: &[usize]) -> Option<(usize, usize)> {
    match *shape {
        [kh, kw, cin, cout] => Some((kh * kw * cin, kh * kw * cout)),
        [n, m] => Some((n, m)),
        _ => None,
    }
}

/// Network parameters together with their configuration.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> Model<T> {
    /// Weights are uniform ±√(6/(fan_in+fan_out)), recurrent LSTM matrices
    /// included. Biases are zero except the forget-gate biases, which start at 1.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in config.param_shapes() {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match fans(&shape) {
                Some((fi, fo)) => {
                    let a = (6.0 / (fi + fo) as f64).sqrt();
                    (0..n).map(|_| T::of(rng.gen_range(-a..a))).collect()
                }
                None if name.ends_with(".b_f") => vec![T::one(); n],
                None => vec![T::zero(); n],
            };
            params.add(name, Tensor::from_vec(&shape, data)?);
        }
        Self::from_params(config, params)
    }

    /// Wraps existing parameters, checking every name and shape against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// The image as an `H×W×3` tensor.
    pub fn image_tensor(&self, img: &GuiImage) -> Result<Tensor<T>, ModelError> {
        let size = self.config.image_size;
        if img.width() as usize != size || img.height() as usize != size {
            return Err(ModelError::ImageSize {
                width: img.width(),
                height: img.height(),
                size,
            });
        }
        let data = img.data().iter().map(|&v| T::of(v as f64)).collect();
        Ok(Tensor::from_vec(&[size, size, IMAGE_CHANNELS], data)?)
    }

    fn one_hot(&self, token: usize) -> Result<Tensor<T>, ModelError> {
        if token >= self.config.vocab_size {
            return Err(ModelError::TokenOutOfRange(token));
        }
        let mut v = vec![T::zero(); self.config.vocab_size];
        v[token] = T::one();
        Ok(Tensor::vector(v))
    }

    fn drop(
        tape: &mut Tape<'_, T>,
        v: Var,
        rate: f64,
        pass: &mut Pass<'_>,
    ) -> Result<Var, TensorError> {
        match pass {
            Pass::Infer => Ok(v),
            Pass::Train(rng) => tape.dropout(v, rate, Mode::Train, &mut **rng),
        }
    }

    fn lstm_vars(tape: &mut Tape<'_, T>, ids: &LstmIds) -> LstmVars {
        tape.lstm_vars(ids.input, ids.recurrent, ids.bias)
    }

    /// Feature vector `p` of length `fc_width` for an `H×W×3` image variable.
    pub fn vision_encode(
        &self,
        tape: &mut Tape<'_, T>,
        image: Var,
        pass: &mut Pass<'_>,
    ) -> Result<Var, ModelError> {
        let cfg = &self.config;
        let mut x = image;
        for pair in self.layout.convs.chunks(2) {
            for &[k, b] in pair {
                let (kv, bv) = (tape.param(k), tape.param(b));
                x = tape.conv2d(x, kv, bv)?;
                x = tape.relu(x)?;
            }
            x = tape.maxpool2d(x)?;
            x = Self::drop(tape, x, cfg.conv_dropout, pass)?;
        }
        x = tape.reshape(x, &[cfg.flatten_len()])?;
        for [w, b] in self.layout.fcs {
            let (wv, bv) = (tape.param(w), tape.param(b));
            x = tape.dense(x, wv, bv)?;
            x = tape.relu(x)?;
            x = Self::drop(tape, x, cfg.fc_dropout, pass)?;
        }
        Ok(x)
    }

    /// Per-step encodings `q_1..q_T` of a token context, from zero state.
    pub fn language_encode(
        &self,
        tape: &mut Tape<'_, T>,
        context: &[usize],
        pass: &mut Pass<'_>,
    ) -> Result<Vec<Var>, ModelError> {
        let mut xs = context
            .iter()
            .map(|&t| Ok(tape.input(self.one_hot(t)?)))
            .collect::<Result<Vec<Var>, ModelError>>()?;
        let m = self.config.language_cells;
        for ids in &self.layout.language {
            let w = Self::lstm_vars(tape, ids);
            let mut state = None;
            let mut hs = Vec::with_capacity(xs.len());
            for &x in &xs {
                let s = tape.lstm_step(&w, x, None, state)?;
                state = Some(s);
                let h = tape.slice(s, 0, m)?;
                hs.push(Self::drop(tape, h, self.config.lstm_dropout, pass)?);
            }
            xs = hs;
        }
        Ok(xs)
    }

    /// Unnormalized next-token scores from `p` and `q_1..q_T`.
    pub fn decoder_logits(
        &self,
        tape: &mut Tape<'_, T>,
        p: Var,
        qs: &[Var],
    ) -> Result<Var, ModelError> {
        let m = self.config.decoder_cells;
        let mut xs = qs.to_vec();
        for (l, ids) in self.layout.decoder.iter().enumerate() {
            let w = Self::lstm_vars(tape, ids);
            // The first layer reads concat(q_t, p); the constant p rows are projected once.
            let extra = if l == 0 {
                let parts = w
                    .input
                    .iter()
                    .map(|&wi| tape.dense_rows(p, wi, self.config.language_cells, None))
                    .collect::<Result<Vec<Var>, TensorError>>()?;
                Some(tape.concat(&parts))
            } else {
                None
            };
            let mut state = None;
            let mut hs = Vec::with_capacity(xs.len());
            for &x in &xs {
                let s = tape.lstm_step(&w, x, extra, state)?;
                state = Some(s);
                hs.push(tape.slice(s, 0, m)?);
            }
            xs = hs;
        }
        let last = *xs.last().ok_or(TensorError::ShapeMismatch {
            op: "decoder",
            expected: vec![self.config.window],
            found: vec![0],
        })?;
        let [w, b] = self.layout.output;
        let (wv, bv) = (tape.param(w), tape.param(b));
        Ok(tape.dense(last, wv, bv)?)
    }

    /// Next-token distribution for one window.
    pub fn decode_step(
        &self,
        tape: &mut Tape<'_, T>,
        p: Var,
        qs: &[Var],
    ) -> Result<Var, ModelError> {
        let logits = self.decoder_logits(tape, p, qs)?;
        Ok(tape.softmax(logits)?)
    }

    fn check_context(&self, context: &[usize]) -> Result<(), ModelError> {
        if context.len() != self.config.window {
            return Err(TensorError::ShapeMismatch {
                op: "context",
                expected: vec![self.config.window],
                found: vec![context.len()],
            }
            .into());
        }
        Ok(())
    }

    /// Cross-entropy of predicting `target` after `context`, given features `p`.
    pub fn window_loss(
        &self,
        tape: &mut Tape<'_, T>,
        p: Var,
        context: &[usize],
        target: usize,
        pass: &mut Pass<'_>,
    ) -> Result<Var, ModelError> {
        self.check_context(context)?;
        if target >= self.config.vocab_size {
            return Err(ModelError::TokenOutOfRange(target));
        }
        let qs = self.language_encode(tape, context, pass)?;
        let logits = self.decoder_logits(tape, p, &qs)?;
        Ok(tape.softmax_cross_entropy(logits, target)?)
    }

    /// Inference-mode image features.
    pub fn encode_image(&self, img: &GuiImage) -> Result<Vec<T>, ModelError> {
        let mut tape = Tape::new(&self.params);
        let x = tape.input(self.image_tensor(img)?);
        let p = self.vision_encode(&mut tape, x, &mut Pass::Infer)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Inference-mode next-token distribution from precomputed features.
    pub fn next_distribution(
        &self,
        features: &[T],
        context: &[usize],
    ) -> Result<Vec<T>, ModelError> {
        self.check_context(context)?;
        let mut tape = Tape::new(&self.params);
        let p = tape.input(Tensor::vector(features.to_vec()));
        let qs = self.language_encode(&mut tape, context, &mut Pass::Infer)?;
        let y = self.decode_step(&mut tape, p, &qs)?;
        Ok(tape.value(y).data().to_vec())
    }
}

/// `-ln y[target]`, with the probability clamped below at 1e-12.
pub fn cross_entropy<T: Real>(y: &[T], target: usize) -> T {
    -y[target].max(T::of(1e-12)).ln()
}
