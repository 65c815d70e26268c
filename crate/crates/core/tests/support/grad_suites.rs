//! Finite-difference gradient suites shared by the core tests and the
//! acceptance runner. Each suite sweeps `seeds` random instances and keeps
//! the worst relative error.

use guicode_core::model::{Model, ModelConfig, ModelError, Pass};
use guicode_core::raster::GuiImage;
use guicode_core::tensor::{grad_check, GradCheckReport, Mode, ParamStore, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
    pub kinks: usize,
    /// Largest per-instance share of kink-excluded elements.
    pub max_kink_share: f64,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        Self { name, max_rel_error: 0.0, checked: 0, kinks: 0, max_kink_share: 0.0 }
    }

    fn absorb(&mut self, r: &GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(r.max_rel_error);
        self.checked += r.checked;
        self.kinks += r.kinks;
        let total = (r.checked + r.kinks).max(1);
        self.max_kink_share = self.max_kink_share.max(r.kinks as f64 / total as f64);
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces a tensor to a scalar with fixed random weights so every output
/// element gets a distinct upstream gradient.
fn project(t: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var, TensorError> {
    let n = t.value(v).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let w = t.input(Tensor::vector((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()));
    let flat = t.reshape(v, &[n])?;
    let prod = t.mul(flat, w)?;
    Ok(t.sum(prod))
}

fn check(
    out: &mut SuiteResult,
    mut store: ParamStore<f64>,
    f: impl Fn(&mut Tape<f64>) -> Result<Var, TensorError>,
) {
    out.absorb(&grad_check(&mut store, f).unwrap());
}

pub fn conv2d(seeds: u64) -> SuiteResult {
    let mut out = SuiteResult::new("conv2d");
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let (ci, co) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let mut s = ParamStore::new();
        let x = s.add("x", random(&mut rng, &[h, w, ci]));
        let k = s.add("k", random(&mut rng, &[3, 3, ci, co]));
        let b = s.add("b", random(&mut rng, &[co]));
        check(&mut out, s, |t| {
            let (xv, kv, bv) = (t.param(x), t.param(k), t.param(b));
            let y = t.conv2d(xv, kv, bv)?;
            project(t, y, seed)
        });
    }
    out
}

pub fn maxpool(seeds: u64) -> SuiteResult {
    let mut out = SuiteResult::new("maxpool2d");
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, c) = (2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4), rng.gen_range(1..3));
        let mut s = ParamStore::new();
        let x = s.add("x", random(&mut rng, &[h, w, c]));
        check(&mut out, s, |t| {
            let xv = t.param(x);
            let y = t.maxpool2d(xv)?;
            project(t, y, seed)
        });
    }
    out
}

type Act = fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>;

pub fn dense_activations(seeds: u64) -> Vec<SuiteResult> {
    let acts: [(&'static str, Act); 4] = [
        ("dense+relu", |t, v| t.relu(v)),
        ("dense+sigmoid", |t, v| t.sigmoid(v)),
        ("dense+tanh", |t, v| t.tanh(v)),
        ("dense+softmax", |t, v| t.softmax(v)),
    ];
    acts.into_iter()
        .map(|(name, act)| {
            let mut out = SuiteResult::new(name);
            for seed in 0..seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (n, m) = (rng.gen_range(1..6), rng.gen_range(2..6));
                let mut s = ParamStore::new();
                let x = s.add("x", random(&mut rng, &[n]));
                let w = s.add("w", random(&mut rng, &[n, m]));
                let b = s.add("b", random(&mut rng, &[m]));
                check(&mut out, s, |t| {
                    let (xv, wv, bv) = (t.param(x), t.param(w), t.param(b));
                    let y = t.dense(xv, wv, bv)?;
                    let y = act(t, y)?;
                    project(t, y, seed)
                });
            }
            out
        })
        .collect()
}

pub fn dense_rows(seeds: u64) -> SuiteResult {
    let mut out = SuiteResult::new("dense_rows");
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, extra, m) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
        let mut s = ParamStore::new();
        let x = s.add("x", random(&mut rng, &[n]));
        let w = s.add("w", random(&mut rng, &[n + extra, m]));
        check(&mut out, s, |t| {
            let (xv, wv) = (t.param(x), t.param(w));
            let y = t.dense_rows(xv, wv, extra, None)?;
            project(t, y, seed)
        });
    }
    out
}

pub fn lstm(seeds: u64) -> SuiteResult {
    let mut out = SuiteResult::new("lstm_step");
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let mut s = ParamStore::new();
        let x = s.add("x", random(&mut rng, &[n]));
        let state = s.add("state", random(&mut rng, &[2 * m]));
        let ids: Vec<_> = (0..12)
            .map(|k| {
                let shape = match k / 4 {
                    0 => vec![n, m],
                    1 => vec![m, m],
                    _ => vec![m],
                };
                s.add(format!("g{k}"), random(&mut rng, &shape))
            })
            .collect();
        check(&mut out, s, |t| {
            let w = t.lstm_vars(
                [ids[0], ids[1], ids[2], ids[3]],
                [ids[4], ids[5], ids[6], ids[7]],
                [ids[8], ids[9], ids[10], ids[11]],
            );
            let (xv, sv) = (t.param(x), t.param(state));
            let s1 = t.lstm_step(&w, xv, None, Some(sv))?;
            let s2 = t.lstm_step(&w, xv, None, Some(s1))?;
            project(t, s2, seed)
        });
    }
    out
}

pub fn combinators(seeds: u64) -> SuiteResult {
    let mut out = SuiteResult::new("add/mul/concat/slice/dropout/cross-entropy");
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..6);
        let target = rng.gen_range(0..n);
        let mut s = ParamStore::new();
        let a = s.add("a", random(&mut rng, &[n]));
        let b = s.add("b", random(&mut rng, &[n]));
        check(&mut out, s, |t| {
            let (av, bv) = (t.param(a), t.param(b));
            let sum = t.add(av, bv)?;
            let prod = t.mul(sum, av)?;
            let cat = t.concat(&[prod, bv]);
            let sl = t.slice(cat, 1, n)?;
            let mut drng = ChaCha8Rng::seed_from_u64(seed);
            let d = t.dropout(sl, 0.3, Mode::Train, &mut drng)?;
            let ce = t.softmax_cross_entropy(d, target)?;
            let tot = t.sum(d);
            t.weighted_sum(&[ce, tot], 0.5)
        });
    }
    out
}

fn micro_loss(model: &Model<f64>, t: &mut Tape<f64>, img: &Tensor<f64>, seed: u64) -> Result<Var, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pass = Pass::Train(&mut rng);
    let x = t.input(img.clone());
    let p = model.vision_encode(t, x, &mut pass)?;
    let windows: [([usize; 8], usize); 3] = [
        ([0, 0, 0, 0, 0, 0, 0, 1], 6),
        ([0, 0, 0, 0, 0, 0, 1, 6], 3),
        ([0, 0, 0, 0, 0, 1, 6, 3], 12),
    ];
    let mut losses = Vec::new();
    for (ctx, target) in &windows {
        losses.push(model.window_loss(t, p, ctx, *target, &mut pass)?);
    }
    Ok(t.weighted_sum(&losses, 1.0 / 3.0)?)
}

/// Full micro model (16×16 image, window 8, vocabulary 18), mean loss of
/// three windows in train mode with fixed dropout masks.
pub fn micro_model(seeds: u64) -> SuiteResult {
    let mut out = SuiteResult::new("full micro model");
    for seed in 0..seeds {
        let model = Model::<f64>::new(ModelConfig::micro(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let data = (0..16 * 16 * 3).map(|_| rng.gen_range(0.0..1.0) as f32).collect();
        let img = GuiImage::new(16, 16, data).unwrap();
        let tensor = model.image_tensor(&img).unwrap();
        let mut params = model.params().clone();
        let r = grad_check(&mut params, |t| micro_loss(&model, t, &tensor, seed)).unwrap();
        out.absorb(&r);
    }
    out
}

/// Every layer primitive followed by the full model.
#[allow(dead_code)]
pub fn all(seeds: u64) -> Vec<SuiteResult> {
    let mut v = vec![conv2d(seeds), maxpool(seeds)];
    v.extend(dense_activations(seeds));
    v.extend([dense_rows(seeds), lstm(seeds), combinators(seeds), micro_model(seeds)]);
    v
}
