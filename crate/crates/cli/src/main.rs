use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use guicode_core::checkpoint::{load_checkpoint, save_checkpoint};
use guicode_core::config::KeyValues;
use guicode_core::dataset::{compile_dataset, load_examples, render_dataset, synth_dataset, Split};
use guicode_core::decode::{sample_beam, sample_greedy, ImageConditioned, DEFAULT_MAX_LEN};
use guicode_core::dsl::{join_tokens, parse, serialize, Token, Vocabulary};
use guicode_core::eval::{evaluate, roc_micro_average, teacher_forced};
use guicode_core::markup::{compile, Target};
use guicode_core::model::{Model, ModelConfig, ModelError};
use guicode_core::raster::{GuiImage, RenderTheme};
use guicode_core::synth::SynthParams;
use guicode_core::tensor::TensorError;
use guicode_core::train::{train, TrainConfig, TrainError};

/// Screenshot-to-code pipeline: synthesize GUIs, render and compile them,
/// train the model, and decode screenshots back to GUI code.
#[derive(Debug, Parser)]
#[command(name = "guicode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Generator {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write `count` random GUI files plus a manifest.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Number of trailing files held out as the test split.
        #[arg(long, default_value_t = 0)]
        test: usize,
        #[arg(long, value_enum, default_value = "desk")]
        generator: Generator,
    },
    /// Rasterize every GUI file of a dataset to PNG.
    Render {
        #[arg(long = "in")]
        dir: PathBuf,
        #[arg(long, default_value_t = 256)]
        size: u32,
        #[arg(long, default_value = "default")]
        theme: String,
    },
    /// Compile every GUI file of a dataset to target markup.
    Compile {
        #[arg(long = "in")]
        dir: PathBuf,
        #[arg(long)]
        target: Target,
    },
    /// Train a model on the training split and save a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// key = value file with model and training settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Loss trace CSV; defaults to the checkpoint path with `.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Decode one screenshot to GUI code.
    Sample {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
        max_len: usize,
        /// Also print the result compiled to this target.
        #[arg(long)]
        target: Option<Target>,
    },
    /// Decode a dataset split and report the token error.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
        max_len: usize,
        /// Per-file CSV report.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Micro-averaged ROC curve CSV over teacher-forced predictions.
        #[arg(long)]
        roc: Option<PathBuf>,
    },
}

/// Non-finite training values map to their own exit status.
fn is_numerical(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<TrainError>(),
            Some(TrainError::NonFiniteLoss { .. })
        ) || matches!(
            c.downcast_ref::<TensorError>(),
            Some(TensorError::NonFiniteGradient(_))
        ) || matches!(
            c.downcast_ref::<ModelError>(),
            Some(ModelError::Tensor(TensorError::NonFiniteGradient(_)))
        )
    })
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_config(path: Option<&Path>) -> anyhow::Result<(ModelConfig, TrainConfig)> {
    let text = match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    let mut kv = KeyValues::parse(&text)?;
    let model = ModelConfig::from_kv(&mut kv)?;
    let training = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;
    Ok((model, training))
}

fn decoded_text(indices: &[usize], vocab: &Vocabulary) -> String {
    let tokens: Vec<Token> = indices
        .iter()
        .filter(|&&i| i != vocab.end())
        .filter_map(|&i| vocab.token(i))
        .collect();
    match parse(&tokens) {
        Ok(ast) => serialize(&ast),
        Err(_) => join_tokens(&tokens),
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Synth {
            count,
            seed,
            out,
            test,
            generator,
        } => {
            if test > count {
                return Err(anyhow!("--test {test} exceeds --count {count}"));
            }
            let (params, name) = match generator {
                Generator::Desk => (SynthParams::desk(seed), "desk"),
                Generator::Full => (SynthParams::full(seed), "full"),
            };
            let m = synth_dataset(&out, &params, name, count - test, test)?;
            println!(
                "wrote {} GUI files ({} train, {} test) to {}",
                m.count,
                m.train,
                m.test(),
                out.display()
            );
        }
        Command::Render { dir, size, theme } => {
            let theme = RenderTheme::by_name(&theme)?;
            let m = render_dataset(&dir, size, &theme)?;
            println!(
                "rendered {} images at {size}x{size} ({})",
                m.count, theme.name
            );
        }
        Command::Compile { dir, target } => {
            let n = compile_dataset(&dir, target)?;
            println!("compiled {n} files to {}", target.as_str());
        }
        Command::Train {
            data,
            config,
            seed,
            out,
            epochs,
            loss_csv,
        } => {
            let (model_cfg, mut train_cfg) = read_config(config.as_deref())?;
            if let Some(e) = epochs {
                train_cfg.epochs = e;
            }
            let vocab = Vocabulary::standard();
            let examples = load_examples(&data, Split::Train, model_cfg.image_size as u32)?;
            let mut model = Model::<f32>::new(model_cfg, seed)?;
            let trace = train(&mut model, &examples, &vocab, &train_cfg, seed, |e, l| {
                eprintln!("epoch {e} mean_loss {l:.6}");
            })?;
            save_checkpoint(&model, &vocab, &out)?;
            let csv = loss_csv.unwrap_or_else(|| out.with_extension("loss.csv"));
            write(&csv, &trace.to_csv())?;
            println!(
                "saved {} ({} parameters), loss trace {}",
                out.display(),
                model.params().scalar_count(),
                csv.display()
            );
        }
        Command::Sample {
            image,
            ckpt,
            beam,
            max_len,
            target,
        } => {
            let (model, vocab) = load_checkpoint(&ckpt).and_then(|c| c.into_model())?;
            let size = model.config().image_size as u32;
            let mut img = GuiImage::load_png(&image)?;
            if img.width() != size || img.height() != size {
                img = img.resize(size, size)?;
            }
            let src = ImageConditioned::new(&model, &img, &vocab)?;
            let indices = match beam {
                Some(k) if k > 1 => sample_beam(&src, k, max_len)?.tokens,
                _ => sample_greedy(&src, max_len)?,
            };
            let text = decoded_text(&indices, &vocab);
            println!("{text}");
            if let Some(t) = target {
                let tokens: Vec<Token> = indices
                    .iter()
                    .filter_map(|&i| vocab.token(i))
                    .filter(|t| !t.is_control())
                    .collect();
                let ast = parse(&tokens).context("decoded tokens do not form a valid GUI")?;
                print!("{}", compile(&ast, t));
            }
        }
        Command::Eval {
            data,
            ckpt,
            beam,
            split,
            max_len,
            report,
            roc,
        } => {
            let (model, vocab) = load_checkpoint(&ckpt).and_then(|c| c.into_model())?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
                SplitArg::All => Split::All,
            };
            let examples = load_examples(&data, split, model.config().image_size as u32)?;
            if examples.is_empty() {
                return Err(anyhow!("the selected split of {} is empty", data.display()));
            }
            let r = evaluate(&model, &examples, &vocab, beam, max_len)?;
            if let Some(path) = report {
                write(&path, &format!("{}# {}\n", r.to_csv(), r.summary()))?;
            }
            let mut line = r.summary();
            if let Some(path) = roc {
                let (dists, targets) = teacher_forced(&model, &examples, &vocab)?;
                let curve = roc_micro_average(&dists, &targets)?;
                write(&path, &curve.to_csv())?;
                line.push_str(&format!(" roc_auc={:.6}", curve.area));
            }
            println!("{line}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = std::env::var("GUICODE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("warning: GUICODE_THREADS ignored: {e}");
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_numerical(&e) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
