//! On-disk datasets: paired `NNNN.gui` / `NNNN.png` files plus a
//! `manifest.txt` describing how they were generated.
//!
//! Ids below `train` form the training split; the rest form the test split.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::dsl::{parse_str, serialize, to_tokens, DslError, GuiAst, Token};
use crate::markup::{compile, Target};
use crate::raster::{rasterize, GuiImage, RenderError, RenderTheme, THEME_VERSION};
use crate::synth::{item_seed, synthesize_ast, SynthError, SynthParams};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot access {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid GUI file {path}")]
    Dsl { path: PathBuf, source: DslError },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("manifest: {0}")]
    Manifest(#[from] ConfigError),
    #[error("split sizes {train} + {test} exceed the {count} generated files")]
    BadSplit {
        count: usize,
        train: usize,
        test: usize,
    },
    #[error("{0}: missing image; run `render` first")]
    MissingImage(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    All,
}

/// Dataset description stored in `manifest.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub generator: String,
    pub count: usize,
    pub train: usize,
    pub theme: Option<String>,
    pub theme_version: u32,
    pub image_size: Option<u32>,
}

impl Manifest {
    pub fn test(&self) -> usize {
        self.count - self.train
    }

    pub fn ids(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train,
            Split::Test => self.train..self.count,
            Split::All => 0..self.count,
        }
    }

    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::new();
        kv.insert("seed", self.seed);
        kv.insert("generator", &self.generator);
        kv.insert("count", self.count);
        kv.insert("train", self.train);
        kv.insert("test", self.test());
        kv.insert("theme_version", self.theme_version);
        if let Some(t) = &self.theme {
            kv.insert("theme", t);
        }
        if let Some(s) = self.image_size {
            kv.insert("image_size", s);
        }
        kv.to_text()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv = KeyValues::parse(text)?;
        let need = |k: &str| ConfigError::Invalid(format!("missing `{k}`"));
        let m = Self {
            seed: kv.take("seed")?.ok_or_else(|| need("seed"))?,
            generator: kv.take("generator")?.ok_or_else(|| need("generator"))?,
            count: kv.take("count")?.ok_or_else(|| need("count"))?,
            train: kv.take("train")?.ok_or_else(|| need("train"))?,
            theme: kv.take("theme")?,
            theme_version: kv
                .take("theme_version")?
                .ok_or_else(|| need("theme_version"))?,
            image_size: kv.take("image_size")?,
        };
        let test: usize = kv.take("test")?.ok_or_else(|| need("test"))?;
        kv.finish()?;
        if m.train > m.count || m.train + test != m.count {
            return Err(ConfigError::Invalid("train + test must equal count".into()));
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(Self::parse(&text)?)
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        let path = dir.join(MANIFEST);
        fs::write(&path, self.to_text()).map_err(io_err(&path))
    }
}

pub fn file_stem(id: usize) -> String {
    format!("{id:04}")
}

pub fn gui_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("{}.gui", file_stem(id)))
}

pub fn png_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("{}.png", file_stem(id)))
}

/// Synthesizes `train + test` GUI files into `dir`. File `i` is drawn with
/// seed `item_seed(params.seed, i)`.
pub fn synth_dataset(
    dir: &Path,
    params: &SynthParams,
    generator: &str,
    train: usize,
    test: usize,
) -> Result<Manifest, DatasetError> {
    params.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let count = train + test;
    for id in 0..count {
        let ast = synthesize_ast(&params.with_seed(item_seed(params.seed, id as u64)))?;
        let path = gui_path(dir, id);
        fs::write(&path, serialize(&ast) + "\n").map_err(io_err(&path))?;
    }
    let manifest = Manifest {
        seed: params.seed,
        generator: generator.to_string(),
        count,
        train,
        theme: None,
        theme_version: THEME_VERSION,
        image_size: None,
    };
    manifest.save(dir)?;
    Ok(manifest)
}

pub fn read_gui(path: &Path) -> Result<GuiAst, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_str(&text).map_err(|source| DatasetError::Dsl {
        path: path.to_path_buf(),
        source,
    })
}

/// Renders every `.gui` of the dataset to a square `.png` of side `size`.
pub fn render_dataset(
    dir: &Path,
    size: u32,
    theme: &RenderTheme,
) -> Result<Manifest, DatasetError> {
    let mut manifest = Manifest::load(dir)?;
    for id in 0..manifest.count {
        let ast = read_gui(&gui_path(dir, id))?;
        rasterize(&ast, size, size, theme)?.save_png(png_path(dir, id))?;
    }
    manifest.theme = Some(theme.name.clone());
    manifest.image_size = Some(size);
    manifest.save(dir)?;
    Ok(manifest)
}

/// Compiles every `.gui` of the dataset to `target` markup next to it.
pub fn compile_dataset(dir: &Path, target: Target) -> Result<usize, DatasetError> {
    let manifest = Manifest::load(dir)?;
    for id in 0..manifest.count {
        let ast = read_gui(&gui_path(dir, id))?;
        let path = dir.join(format!("{}.{}", file_stem(id), target.extension()));
        fs::write(&path, compile(&ast, target)).map_err(io_err(&path))?;
    }
    Ok(manifest.count)
}

/// A screenshot with its token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: usize,
    pub image: GuiImage,
    pub tokens: Vec<Token>,
}

/// Loads one split, resizing images to `image_size` when they differ.
pub fn load_examples(
    dir: &Path,
    split: Split,
    image_size: u32,
) -> Result<Vec<Example>, DatasetError> {
    let manifest = Manifest::load(dir)?;
    manifest
        .ids(split)
        .map(|id| {
            let ast = read_gui(&gui_path(dir, id))?;
            let png = png_path(dir, id);
            if !png.exists() {
                return Err(DatasetError::MissingImage(png));
            }
            let mut image = GuiImage::load_png(&png)?;
            if image.width() != image_size || image.height() != image_size {
                image = image.resize(image_size, image_size)?;
            }
            Ok(Example {
                id,
                image,
                tokens: to_tokens(&ast),
            })
        })
        .collect()
}

/// Synthesizes and renders examples in memory, without touching disk.
pub fn synth_examples(
    params: &SynthParams,
    count: usize,
    size: u32,
    theme: &RenderTheme,
) -> Result<Vec<Example>, DatasetError> {
    (0..count)
        .map(|id| {
            let ast = synthesize_ast(&params.with_seed(item_seed(params.seed, id as u64)))?;
            let image = rasterize(&ast, size, size, theme)?;
            Ok(Example {
                id,
                image,
                tokens: to_tokens(&ast),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let m = Manifest {
            seed: 7,
            generator: "desk".into(),
            count: 250,
            train: 200,
            theme: Some("android".into()),
            theme_version: THEME_VERSION,
            image_size: Some(64),
        };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
        assert_eq!(m.ids(Split::Test), 200..250);
        assert!(Manifest::parse("seed = 1\n").is_err());
    }

    #[test]
    fn synth_render_load() {
        let dir = tempfile::tempdir().unwrap();
        let params = SynthParams::desk(3);
        synth_dataset(dir.path(), &params, "desk", 4, 2).unwrap();
        assert!(matches!(
            load_examples(dir.path(), Split::Train, 64),
            Err(DatasetError::MissingImage(_))
        ));
        let m = render_dataset(dir.path(), 64, &RenderTheme::default()).unwrap();
        assert_eq!(m.image_size, Some(64));
        let train = load_examples(dir.path(), Split::Train, 64).unwrap();
        let test = load_examples(dir.path(), Split::Test, 64).unwrap();
        assert_eq!((train.len(), test.len()), (4, 2));
        assert_eq!(test[0].id, 4);
        let mem = synth_examples(&params, 6, 64, &RenderTheme::default()).unwrap();
        assert_eq!(mem[5].tokens, test[1].tokens);
        assert_eq!(mem[5].image, test[1].image);
        let small = load_examples(dir.path(), Split::Test, 32).unwrap();
        assert_eq!(small[0].image.width(), 32);
        assert_eq!(compile_dataset(dir.path(), Target::Android).unwrap(), 6);
        assert!(dir.path().join("0005.axml").exists());
    }
}
