//! Deterministic GUI rasterizer and image normalization.
//!
//! All geometry is integer arithmetic on pixel centers, so output is
//! bit-identical across platforms. Theme geometry is expressed in pixels of a
//! 256-wide reference canvas and scaled to the target size.

use std::path::Path;

use image::{ImageBuffer, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsl::{Element, GuiAst, Node};
use crate::synth::item_seed;

pub const MIN_CANVAS: u32 = 64;
pub const THEME_VERSION: u32 = 1;
const REFERENCE: u32 = 256;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("canvas {width}x{height} is smaller than {MIN_CANVAS}x{MIN_CANVAS}")]
    CanvasTooSmall { width: u32, height: u32 },
    #[error("image has no pixels")]
    EmptyImage,
    #[error("unknown theme `{0}`")]
    UnknownTheme(String),
    #[error("pixel data length {found} does not match {width}x{height}x3")]
    BadDimensions {
        width: u32,
        height: u32,
        found: usize,
    },
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

/// RGB raster with channel values in `[0, 1]`, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct GuiImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl GuiImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self, RenderError> {
        if data.len() != (width as usize) * (height as usize) * 3 {
            return Err(RenderError::BadDimensions {
                width,
                height,
                found: data.len(),
            });
        }
        if width == 0 || height == 0 {
            return Err(RenderError::EmptyImage);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let data = (0..width as usize * height as usize)
            .flat_map(|_| rgb)
            .collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self, RenderError> {
        if img.width() == 0 || img.height() == 0 {
            return Err(RenderError::EmptyImage);
        }
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Ok(Self {
            width: img.width(),
            height: img.height(),
            data,
        })
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        ImageBuffer::from_raw(self.width, self.height, raw).expect("dimensions checked")
    }

    /// Nearest-neighbour resize; aspect ratio is not preserved.
    pub fn resize(&self, width: u32, height: u32) -> Result<Self, RenderError> {
        if width == 0 || height == 0 {
            return Err(RenderError::EmptyImage);
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let (sw, sh) = (self.width as u64, self.height as u64);
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height as u64 {
            // sample at the destination pixel center
            let sy = ((2 * y + 1) * sh / (2 * height as u64)).min(sh - 1);
            for x in 0..width as u64 {
                let sx = ((2 * x + 1) * sw / (2 * width as u64)).min(sw - 1);
                let i = ((sy * sw + sx) * 3) as usize;
                data.extend_from_slice(&self.data[i..i + 3]);
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self, RenderError> {
        let img = image::open(path)?.to_rgb8();
        Self::from_rgb8(&img)
    }
}

/// Converts an 8-bit raster of any size to a normalized square model input.
pub fn resize_normalize(img: &RgbImage, size: u32) -> Result<GuiImage, RenderError> {
    GuiImage::from_rgb8(img)?.resize(size, size)
}

pub type Color = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderTheme {
    pub name: String,
    pub version: u32,
    pub background: Color,
    pub header_bar: Color,
    pub cell_panel: Color,
    pub btn_active: Color,
    pub btn_inactive: Color,
    pub btn_green: Color,
    pub btn_orange: Color,
    pub btn_red: Color,
    pub text_bar: Color,
    pub title_bar: Color,
    /// Geometry below is in pixels of a 256-wide reference canvas.
    pub header_height: u32,
    pub margin: u32,
    pub padding: u32,
    pub radius: u32,
    pub bar_height: u32,
    pub title_height: u32,
    pub text_seed: u64,
}

impl Default for RenderTheme {
    fn default() -> Self {
        Self {
            name: "default".into(),
            version: THEME_VERSION,
            background: [255, 255, 255],
            header_bar: [222, 226, 230],
            cell_panel: [241, 243, 245],
            btn_active: [0, 123, 255],
            btn_inactive: [134, 142, 150],
            btn_green: [40, 167, 69],
            btn_orange: [253, 126, 20],
            btn_red: [220, 53, 69],
            text_bar: [173, 181, 189],
            title_bar: [33, 37, 41],
            header_height: 36,
            margin: 8,
            padding: 4,
            radius: 8,
            bar_height: 6,
            title_height: 12,
            text_seed: 0x5eed,
        }
    }
}

impl RenderTheme {
    pub fn android() -> Self {
        Self {
            name: "android".into(),
            background: [250, 250, 250],
            header_bar: [63, 81, 181],
            cell_panel: [255, 255, 255],
            btn_active: [255, 193, 7],
            btn_inactive: [159, 168, 218],
            btn_green: [76, 175, 80],
            btn_orange: [255, 152, 0],
            btn_red: [244, 67, 54],
            text_bar: [158, 158, 158],
            title_bar: [66, 66, 66],
            radius: 2,
            margin: 6,
            text_seed: 0xa11d,
            ..Self::default()
        }
    }

    pub fn ios() -> Self {
        Self {
            name: "ios".into(),
            background: [242, 242, 247],
            header_bar: [248, 248, 248],
            cell_panel: [255, 255, 255],
            btn_active: [0, 122, 255],
            btn_inactive: [199, 199, 204],
            btn_green: [52, 199, 89],
            btn_orange: [255, 149, 0],
            btn_red: [255, 59, 48],
            text_bar: [142, 142, 147],
            title_bar: [28, 28, 30],
            radius: 14,
            margin: 10,
            header_height: 40,
            text_seed: 0x1057,
            ..Self::default()
        }
    }

    pub fn by_name(name: &str) -> Result<Self, RenderError> {
        match name {
            "default" | "web" => Ok(Self::default()),
            "android" => Ok(Self::android()),
            "ios" => Ok(Self::ios()),
            other => Err(RenderError::UnknownTheme(other.to_string())),
        }
    }

    fn leaf_color(&self, kind: Element) -> Color {
        match kind {
            Element::BtnActive => self.btn_active,
            Element::BtnInactive => self.btn_inactive,
            Element::BtnGreen => self.btn_green,
            Element::BtnOrange => self.btn_orange,
            Element::BtnRed => self.btn_red,
            Element::SmallTitle => self.title_bar,
            _ => self.text_bar,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

impl Rect {
    fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    fn inset(self, d: i64) -> Self {
        Self::new(self.x0 + d, self.y0 + d, self.x1 - d, self.y1 - d)
    }

    fn width(self) -> i64 {
        self.x1 - self.x0
    }

    fn height(self) -> i64 {
        self.y1 - self.y0
    }

    fn is_empty(self) -> bool {
        self.width() <= 0 || self.height() <= 0
    }
}

struct Canvas {
    width: i64,
    height: i64,
    px: Vec<u8>,
}

impl Canvas {
    fn new(width: u32, height: u32, background: Color) -> Self {
        let px = (0..width as usize * height as usize)
            .flat_map(|_| background)
            .collect();
        Self {
            width: width as i64,
            height: height as i64,
            px,
        }
    }

    /// Fills pixels whose centers lie inside the rounded rectangle.
    fn fill_rounded(&mut self, r: Rect, radius: i64, color: Color) {
        if r.is_empty() {
            return;
        }
        let radius = radius.clamp(0, r.width().min(r.height()) / 2);
        // half-pixel units
        let (hx0, hy0, hx1, hy1) = (2 * r.x0, 2 * r.y0, 2 * r.x1, 2 * r.y1);
        let hr = 2 * radius;
        for y in r.y0.max(0)..r.y1.min(self.height) {
            let cy = 2 * y + 1;
            for x in r.x0.max(0)..r.x1.min(self.width) {
                let cx = 2 * x + 1;
                let ox = if cx < hx0 + hr {
                    hx0 + hr - cx
                } else if cx > hx1 - hr {
                    cx - (hx1 - hr)
                } else {
                    0
                };
                let oy = if cy < hy0 + hr {
                    hy0 + hr - cy
                } else if cy > hy1 - hr {
                    cy - (hy1 - hr)
                } else {
                    0
                };
                if ox > 0 && oy > 0 && ox * ox + oy * oy > hr * hr {
                    continue;
                }
                let i = ((y * self.width + x) * 3) as usize;
                self.px[i..i + 3].copy_from_slice(&color);
            }
        }
    }

    fn into_image(self) -> GuiImage {
        GuiImage {
            width: self.width as u32,
            height: self.height as u32,
            data: self.px.into_iter().map(|v| v as f32 / 255.0).collect(),
        }
    }
}

struct Painter<'a> {
    canvas: Canvas,
    theme: &'a RenderTheme,
    scale_num: i64,
    text_counter: u64,
}

impl Painter<'_> {
    fn px(&self, reference: u32) -> i64 {
        if reference == 0 {
            return 0;
        }
        ((reference as i64 * self.scale_num + REFERENCE as i64 / 2) / REFERENCE as i64).max(1)
    }

    fn header(&mut self, node: &Node, area: Rect) {
        let theme = self.theme;
        self.canvas.fill_rounded(area, 0, theme.header_bar);
        let m = self.px(theme.margin);
        let pad = self.px(theme.padding);
        let slots = node.children.len().max(5) as i64;
        let slot = (area.width() - 2 * m) / slots;
        let bh = (area.height() - 2 * pad) * 3 / 4;
        let by = area.y0 + (area.height() - bh) / 2;
        for (i, child) in node.children.iter().enumerate() {
            let x = area.x0 + m + i as i64 * slot;
            let r = Rect::new(x + pad, by, x + slot - pad, by + bh);
            self.leaf(child.kind, r);
        }
    }

    fn row(&mut self, node: &Node, area: Rect) {
        let m = self.px(self.theme.margin);
        let cols = node.children.len().max(1) as i64;
        let inner = Rect::new(area.x0 + m, area.y0, area.x1 - m, area.y1);
        let w = inner.width() / cols;
        for (j, cell) in node.children.iter().enumerate() {
            let x = inner.x0 + j as i64 * w;
            let half = m / 2;
            let r = Rect::new(x + half, inner.y0, x + w - (m - half), inner.y1);
            self.cell(cell, r);
        }
    }

    fn cell(&mut self, node: &Node, area: Rect) {
        let theme = self.theme;
        let radius = self.px(theme.radius);
        self.canvas.fill_rounded(area, radius, theme.cell_panel);
        let inner = area.inset(self.px(theme.padding));
        let n = node.children.len().max(1) as i64;
        let h = inner.height() / n;
        for (k, leaf) in node.children.iter().enumerate() {
            let y = inner.y0 + k as i64 * h;
            self.leaf(leaf.kind, Rect::new(inner.x0, y, inner.x1, y + h));
        }
    }

    fn leaf(&mut self, kind: Element, area: Rect) {
        if area.is_empty() {
            return;
        }
        let theme = self.theme;
        let color = theme.leaf_color(kind);
        match kind {
            Element::Text => {
                let bar = self.px(theme.bar_height);
                let mut rng = self.text_rng();
                let mut y = area.y0;
                while y + bar <= area.y1 {
                    let frac = rng.gen_range(40..=100);
                    let w = (area.width() * frac / 100).max(1);
                    self.canvas
                        .fill_rounded(Rect::new(area.x0, y, area.x0 + w, y + bar), 0, color);
                    y += 2 * bar;
                }
            }
            Element::SmallTitle => {
                let h = self.px(theme.title_height).min(area.height());
                let mut rng = self.text_rng();
                let frac = rng.gen_range(50..=90);
                let w = (area.width() * frac / 100).max(1);
                let y = area.y0 + (area.height() - h) / 2;
                self.canvas
                    .fill_rounded(Rect::new(area.x0, y, area.x0 + w, y + h), 0, color);
            }
            _ => {
                let h = (area.height() * 3 / 5).max(1);
                let y = area.y0 + (area.height() - h) / 2;
                let r = Rect::new(area.x0, y, area.x1, y + h);
                self.canvas.fill_rounded(r, self.px(theme.radius), color);
            }
        }
    }

    fn text_rng(&mut self) -> ChaCha8Rng {
        self.text_counter += 1;
        ChaCha8Rng::seed_from_u64(item_seed(self.theme.text_seed, self.text_counter))
    }
}

/// Draws the GUI: a full-width header bar with left-aligned buttons, then
/// rows sharing the remaining height, each split evenly among its columns.
pub fn rasterize(
    ast: &GuiAst,
    width: u32,
    height: u32,
    theme: &RenderTheme,
) -> Result<GuiImage, RenderError> {
    if width < MIN_CANVAS || height < MIN_CANVAS {
        return Err(RenderError::CanvasTooSmall { width, height });
    }
    let mut painter = Painter {
        canvas: Canvas::new(width, height, theme.background),
        theme,
        scale_num: width as i64,
        text_counter: 0,
    };
    let (w, h) = (width as i64, height as i64);
    let m = painter.px(theme.margin);

    let mut top = 0;
    if let Some(header) = ast.header() {
        let hh = (theme.header_height as i64 * h / REFERENCE as i64).max(1);
        painter.header(header, Rect::new(0, 0, w, hh));
        top = hh;
    }
    let rows: Vec<&Node> = ast.rows().collect();
    if !rows.is_empty() {
        let body = Rect::new(0, top + m, w, h - m);
        let rh = body.height() / rows.len() as i64;
        for (i, row) in rows.iter().enumerate() {
            let y = body.y0 + i as i64 * rh;
            painter.row(row, Rect::new(0, y, w, y + rh - m));
        }
    }
    Ok(painter.canvas.into_image())
}
