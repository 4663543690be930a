//! Randomized plate rendering and scene composition.
//!
//! A plate is laid out in three horizontal bands. The middle band, of height
//! `round(0.6·h)`, holds the main text; the top and bottom bands hold the
//! optional decorations, so `center_crop(img, 0.6)` of an untilted plate
//! keeps exactly the text band.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::font::{self, Bitmap, GLYPH_H, GLYPH_W};
use crate::image_ops::{self, Color, Image};

/// Fraction of the plate height kept by the text band.
pub const TEXT_BAND: f64 = 0.6;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid plate spec: {0}")]
    InvalidSpec(String),
    #[error("text of {len} glyphs does not fit a {width}x{height} plate")]
    TextTooLong { len: usize, width: u32, height: u32 },
    #[error("box {0:?} lies outside the {1}x{2} image")]
    BoxOutOfBounds(BoundingBox, u32, u32),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Pixel rectangle with a top-left origin; serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", try_from = "[u32; 4]")]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Option<Self> {
        (w > 0 && h > 0).then_some(Self { x, y, w, h })
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = String;

    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        BoundingBox::new(v[0], v[1], v[2], v[3]).ok_or_else(|| format!("degenerate box {v:?}"))
    }
}

/// Darkens every pixel right of `offset·width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shadow {
    pub offset: f64,
    pub opacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateSpec {
    pub text: String,
    /// `[width, height]` in pixels.
    pub plate_size: [u32; 2],
    pub bg_color: Color,
    pub text_color: Color,
    pub tilt_deg: f64,
    pub blur_sigma: f64,
    pub downscale_factor: f64,
    pub shadow: Option<Shadow>,
    pub top_text: Option<String>,
    pub bottom_text: Option<String>,
    pub icon: Option<usize>,
    pub seed: u64,
}

impl PlateSpec {
    /// A distortion-free spec with dark text on a light background.
    pub fn clean(text: &str, width: u32, height: u32) -> Self {
        Self {
            text: text.to_string(),
            plate_size: [width, height],
            bg_color: [235, 235, 235],
            text_color: [20, 20, 20],
            tilt_deg: 0.0,
            blur_sigma: 0.0,
            downscale_factor: 1.0,
            shadow: None,
            top_text: None,
            bottom_text: None,
            icon: None,
            seed: 0,
        }
    }

    pub fn width(&self) -> u32 {
        self.plate_size[0]
    }

    pub fn height(&self) -> u32 {
        self.plate_size[1]
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.text.is_empty() {
            return bad("empty text".into());
        }
        for t in [Some(&self.text), self.top_text.as_ref(), self.bottom_text.as_ref()]
            .into_iter()
            .flatten()
        {
            if let Some(c) = t.chars().find(|&c| font::glyph(c).is_none()) {
                return bad(format!("character {c:?} has no glyph"));
            }
        }
        if self.width() == 0 || self.height() == 0 {
            return bad("zero plate size".into());
        }
        if !(-15.0..=15.0).contains(&self.tilt_deg) {
            return bad(format!("tilt {} outside [-15, 15]", self.tilt_deg));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return bad("blur_sigma must be >= 0".into());
        }
        if !(self.downscale_factor > 0.0 && self.downscale_factor <= 1.0) {
            return bad("downscale_factor must be in (0, 1]".into());
        }
        if let Some(s) = self.shadow {
            if !(0.0..=1.0).contains(&s.offset) || !(0.0..=1.0).contains(&s.opacity) {
                return bad("shadow offset and opacity must be in [0, 1]".into());
            }
        }
        if let Some(i) = self.icon {
            if i >= font::ICON_COUNT {
                return bad(format!("icon {i} out of range"));
            }
        }
        Ok(())
    }
}

/// Distribution parameters for [`random_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateConfig {
    pub charset: String,
    pub min_len: usize,
    pub max_len: usize,
    pub min_height: u32,
    pub max_height: u32,
    /// Width / height ratio range.
    pub min_aspect: f64,
    pub max_aspect: f64,
    pub dark_text_weight: f64,
    pub p_blur: f64,
    pub max_blur_sigma: f64,
    pub p_tilt: f64,
    pub max_tilt_deg: f64,
    pub p_downscale: f64,
    pub min_downscale: f64,
    pub p_shadow: f64,
    pub p_top_text: f64,
    pub p_bottom_text: f64,
    pub p_icon: f64,
}

impl Default for PlateConfig {
    fn default() -> Self {
        Self {
            charset: font::CHARSET.to_string(),
            min_len: 5,
            max_len: 8,
            min_height: 40,
            max_height: 64,
            min_aspect: 3.5,
            max_aspect: 4.5,
            dark_text_weight: 0.7,
            p_blur: 0.5,
            max_blur_sigma: 2.0,
            p_tilt: 0.5,
            max_tilt_deg: 15.0,
            p_downscale: 0.3,
            min_downscale: 0.4,
            p_shadow: 0.3,
            p_top_text: 0.4,
            p_bottom_text: 0.4,
            p_icon: 0.3,
        }
    }
}

impl PlateConfig {
    /// Every distortion and decoration probability set to zero.
    pub fn clean() -> Self {
        Self {
            p_blur: 0.0,
            p_tilt: 0.0,
            p_downscale: 0.0,
            p_shadow: 0.0,
            p_top_text: 0.0,
            p_bottom_text: 0.0,
            p_icon: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.charset.is_empty() || self.charset.chars().any(|c| font::glyph(c).is_none()) {
            return bad("charset must be non-empty and renderable");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if self.min_height == 0 || self.min_height > self.max_height {
            return bad("need 1 <= min_height <= max_height");
        }
        if !(self.min_aspect > 0.0 && self.min_aspect <= self.max_aspect) {
            return bad("need 0 < min_aspect <= max_aspect");
        }
        let probs = [
            self.dark_text_weight,
            self.p_blur,
            self.p_tilt,
            self.p_downscale,
            self.p_shadow,
            self.p_top_text,
            self.p_bottom_text,
            self.p_icon,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must be in [0, 1]");
        }
        if !(0.0..=15.0).contains(&self.max_tilt_deg) {
            return bad("max_tilt_deg must be in [0, 15]");
        }
        if !(self.max_blur_sigma >= 0.0) || !(self.min_downscale > 0.0 && self.min_downscale <= 1.0) {
            return bad("blur and downscale ranges are invalid");
        }
        Ok(())
    }
}

fn random_text<R: Rng + ?Sized>(rng: &mut R, charset: &[char], min: usize, max: usize) -> String {
    let len = rng.random_range(min..=max);
    (0..len).map(|_| charset[rng.random_range(0..charset.len())]).collect()
}

fn random_color<R: Rng + ?Sized>(rng: &mut R, lo: u8, hi: u8) -> Color {
    [0; 3].map(|_| rng.random_range(lo..=hi))
}

/// Draws a spec; the `seed` field is left at 0 for the caller to fill.
pub fn random_spec<R: Rng + ?Sized>(rng: &mut R, cfg: &PlateConfig) -> PlateSpec {
    let charset: Vec<char> = cfg.charset.chars().collect();
    let text = random_text(rng, &charset, cfg.min_len, cfg.max_len);
    let height = rng.random_range(cfg.min_height..=cfg.max_height);
    let aspect = rng.random_range(cfg.min_aspect..=cfg.max_aspect);
    let width = (height as f64 * aspect).round() as u32;
    let (text_color, bg_color) = if rng.random_bool(cfg.dark_text_weight) {
        (random_color(rng, 0, 60), random_color(rng, 180, 255))
    } else {
        (random_color(rng, 200, 255), random_color(rng, 0, 70))
    };
    let tilt_deg = if rng.random_bool(cfg.p_tilt) && cfg.max_tilt_deg > 0.0 {
        rng.random_range(-cfg.max_tilt_deg..=cfg.max_tilt_deg)
    } else {
        0.0
    };
    let blur_sigma = if rng.random_bool(cfg.p_blur) && cfg.max_blur_sigma > 0.0 {
        rng.random_range(0.0..=cfg.max_blur_sigma)
    } else {
        0.0
    };
    let downscale_factor = if rng.random_bool(cfg.p_downscale) && cfg.min_downscale < 1.0 {
        rng.random_range(cfg.min_downscale..1.0)
    } else {
        1.0
    };
    let shadow = rng.random_bool(cfg.p_shadow).then(|| Shadow {
        offset: rng.random_range(0.2..0.8),
        opacity: rng.random_range(0.2..0.6),
    });
    let top_text = rng
        .random_bool(cfg.p_top_text)
        .then(|| random_text(rng, &charset, 4, 10));
    let bottom_text = rng
        .random_bool(cfg.p_bottom_text)
        .then(|| random_text(rng, &charset, 4, 10));
    let icon = rng
        .random_bool(cfg.p_icon)
        .then(|| rng.random_range(0..font::ICON_COUNT));
    PlateSpec {
        text,
        plate_size: [width, height],
        bg_color,
        text_color,
        tilt_deg,
        blur_sigma,
        downscale_factor,
        shadow,
        top_text,
        bottom_text,
        icon,
        seed: 0,
    }
}

/// Rows `[top, top + keep)` kept by a center crop of `fraction`.
pub fn crop_rows(height: u32, fraction: f64) -> (u32, u32) {
    let keep = ((fraction * height as f64).round() as u32).clamp(1, height);
    ((height - keep) / 2, keep)
}

/// Placement of the main text: glyph scale and top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextLayout {
    pub scale: u32,
    pub x: u32,
    pub y: u32,
}

impl TextLayout {
    /// Horizontal distance between consecutive glyph origins.
    pub fn pitch(&self) -> u32 {
        (GLYPH_W as u32 + 1) * self.scale
    }
}

pub fn text_layout(text_len: usize, width: u32, height: u32) -> Result<TextLayout, SynthError> {
    let (band_top, keep) = crop_rows(height, TEXT_BAND);
    let n = text_len as u32;
    let by_height = (keep as f64 * 0.8 / GLYPH_H as f64).floor() as u32;
    // n glyphs + (n-1) gaps + a one-glyph-gap margin on each side
    let by_width = width / ((GLYPH_W as u32 + 1) * n + 1);
    let scale = by_height.min(by_width);
    if scale == 0 {
        return Err(SynthError::TextTooLong {
            len: text_len,
            width,
            height,
        });
    }
    let text_w = (GLYPH_W as u32 + 1) * n * scale - scale;
    Ok(TextLayout {
        scale,
        x: (width - text_w) / 2,
        y: band_top + (keep - GLYPH_H as u32 * scale) / 2,
    })
}

/// Paints a bitmap at `(x, y)` scaled by `scale`, clipped to rows
/// `[row_lo, row_hi)` and the image.
fn paint(img: &mut Image, bitmap: &Bitmap, x: i64, y: i64, scale: u32, color: Color, rows: (u32, u32)) {
    let s = scale as i64;
    for (r, line) in bitmap.iter().enumerate() {
        for (c, &on) in line.iter().enumerate() {
            if !on {
                continue;
            }
            for py in y + r as i64 * s..y + (r as i64 + 1) * s {
                if py < rows.0 as i64 || py >= rows.1 as i64 || py >= img.height() as i64 {
                    continue;
                }
                for px in x + c as i64 * s..x + (c as i64 + 1) * s {
                    if px >= 0 && px < img.width() as i64 {
                        img.put_pixel(px as u32, py as u32, Rgb(color));
                    }
                }
            }
        }
    }
}

fn paint_text(img: &mut Image, text: &str, x: i64, y: i64, scale: u32, color: Color, rows: (u32, u32)) {
    let pitch = ((GLYPH_W as u32 + 1) * scale) as i64;
    for (i, ch) in text.chars().enumerate() {
        if let Some(g) = font::glyph(ch) {
            paint(img, &g, x + i as i64 * pitch, y, scale, color, rows);
        }
    }
}

/// Text (or icon) in a decoration band of `rows` pixel rows starting at `top`.
fn paint_decoration_text(img: &mut Image, text: &str, top: u32, rows: u32, color: Color) {
    if rows < GLYPH_H as u32 + 1 {
        return;
    }
    let scale = ((rows - 1) / GLYPH_H as u32).max(1);
    let pitch = (GLYPH_W as u32 + 1) * scale;
    let text_w = pitch as i64 * text.chars().count() as i64 - scale as i64;
    let x = (img.width() as i64 - text_w) / 2;
    let y = top + (rows - GLYPH_H as u32 * scale) / 2;
    paint_text(img, text, x, y as i64, scale, color, (top, top + rows));
}

/// Rasterizes the spec and applies tilt, blur, resolution drop and shadow,
/// in that order.
pub fn render(spec: &PlateSpec) -> Result<Image, SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width(), spec.height());
    let layout = text_layout(spec.text.chars().count(), w, h)?;
    let mut img = RgbImage::from_pixel(w, h, Rgb(spec.bg_color));

    let (band_top, keep) = crop_rows(h, TEXT_BAND);
    paint_text(
        &mut img,
        &spec.text,
        layout.x as i64,
        layout.y as i64,
        layout.scale,
        spec.text_color,
        (band_top, band_top + keep),
    );
    let bottom_top = band_top + keep;
    if let Some(t) = &spec.top_text {
        paint_decoration_text(&mut img, t, 0, band_top, spec.text_color);
    }
    if let Some(t) = &spec.bottom_text {
        paint_decoration_text(&mut img, t, bottom_top, h - bottom_top, spec.text_color);
    }
    if let Some(id) = spec.icon {
        if band_top > GLYPH_H as u32 {
            let scale = ((band_top - 1) / GLYPH_H as u32).max(1);
            let bitmap = font::icon(id).expect("validated");
            let y = (band_top - GLYPH_H as u32 * scale) / 2;
            paint(&mut img, &bitmap, scale as i64, y as i64, scale, spec.text_color, (0, band_top));
        }
    }

    let img = image_ops::rotate(&img, spec.tilt_deg, spec.bg_color);
    let img = image_ops::gaussian_blur(&img, spec.blur_sigma);
    let mut img = image_ops::degrade_resolution(&img, spec.downscale_factor);
    if let Some(shadow) = spec.shadow {
        let start = (shadow.offset * w as f64).round() as u32;
        let keep = 1.0 - shadow.opacity;
        for (x, _, p) in img.enumerate_pixels_mut() {
            if x >= start {
                for c in p.0.iter_mut() {
                    *c = (*c as f64 * keep).round() as u8;
                }
            }
        }
    }
    Ok(img)
}

/// Keeps the central band of `round(keep_fraction·h)` rows.
pub fn center_crop(img: &Image, keep_fraction: f64) -> Result<Image, SynthError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(SynthError::InvalidConfig(format!(
            "keep_fraction {keep_fraction} outside (0, 1]"
        )));
    }
    let (top, keep) = crop_rows(img.height(), keep_fraction);
    Ok(image::imageops::crop_imm(img, 0, top, img.width(), keep).to_image())
}

pub fn crop_box(img: &Image, b: &BoundingBox) -> Result<Image, SynthError> {
    if !b.fits(img.width(), img.height()) {
        return Err(SynthError::BoxOutOfBounds(*b, img.width(), img.height()));
    }
    Ok(image::imageops::crop_imm(img, b.x, b.y, b.w, b.h).to_image())
}

/// Resizes `plate` to the box and pastes it over `background`.
pub fn overlay(background: &Image, plate: &Image, b: &BoundingBox) -> Result<Image, SynthError> {
    if !b.fits(background.width(), background.height()) {
        return Err(SynthError::BoxOutOfBounds(*b, background.width(), background.height()));
    }
    let resized = image_ops::resize(plate, b.w, b.h);
    let mut out = background.clone();
    image::imageops::replace(&mut out, &resized, b.x as i64, b.y as i64);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub plate: PlateConfig,
    /// Range of box size relative to the rendered plate size.
    pub min_box_scale: f64,
    pub max_box_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            plate: PlateConfig::default(),
            min_box_scale: 0.8,
            max_box_scale: 1.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: Image,
    pub plate: PlateSpec,
    pub bbox: BoundingBox,
}

fn random_background<R: Rng + ?Sized>(rng: &mut R, w: u32, h: u32) -> Image {
    let base = random_color(rng, 40, 200).map(f64::from);
    let slope = [0; 3].map(|_| rng.random_range(-60.0..60.0));
    let mut img = RgbImage::new(w, h);
    for (x, y, p) in img.enumerate_pixels_mut() {
        let t = (x as f64 / w as f64 + y as f64 / h as f64) / 2.0;
        for c in 0..3 {
            let noise = rng.random_range(-15.0..15.0);
            p[c] = (base[c] + slope[c] * t + noise).round().clamp(0.0, 255.0) as u8;
        }
    }
    img
}

/// Renders a random plate and overlays it at a random position.
pub fn random_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &SceneConfig) -> Result<Scene, SynthError> {
    let plate = random_spec(rng, &cfg.plate);
    let plate_img = render(&plate)?;
    let scale = if cfg.max_box_scale > cfg.min_box_scale {
        rng.random_range(cfg.min_box_scale..=cfg.max_box_scale)
    } else {
        cfg.min_box_scale
    };
    let bw = ((plate.width() as f64 * scale).round() as u32).max(1);
    let bh = ((plate.height() as f64 * scale).round() as u32).max(1);
    let (w, h) = (cfg.width.max(bw), cfg.height.max(bh));
    let background = random_background(rng, w, h);
    let bbox = BoundingBox::new(rng.random_range(0..=w - bw), rng.random_range(0..=h - bh), bw, bh)
        .expect("positive size");
    let image = overlay(&background, &plate_img, &bbox)?;
    Ok(Scene { image, plate, bbox })
}

/// Seed of item `index` in a batch generated from `base` (SplitMix64).
pub fn item_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `n` plates, each drawn from its own seeded stream so any one can be
/// regenerated from its `spec.seed`.
pub fn generate_plates(cfg: &PlateConfig, n: usize, seed: u64) -> Result<Vec<(PlateSpec, Image)>, SynthError> {
    cfg.validate()?;
    (0..n as u64)
        .map(|i| {
            let s = item_seed(seed, i);
            let mut spec = random_spec(&mut ChaCha8Rng::seed_from_u64(s), cfg);
            spec.seed = s;
            let img = render(&spec)?;
            Ok((spec, img))
        })
        .collect()
}

pub fn generate_scenes(cfg: &SceneConfig, n: usize, seed: u64) -> Result<Vec<Scene>, SynthError> {
    cfg.plate.validate()?;
    if !(cfg.min_box_scale > 0.0 && cfg.min_box_scale <= cfg.max_box_scale) {
        return Err(SynthError::InvalidConfig("need 0 < min_box_scale <= max_box_scale".into()));
    }
    (0..n as u64)
        .map(|i| {
            let s = item_seed(seed, i);
            let mut scene = random_scene(&mut ChaCha8Rng::seed_from_u64(s), cfg)?;
            scene.plate.seed = s;
            Ok(scene)
        })
        .collect()
}

/// One manifest line. `file` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub file: String,
    pub text: String,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
    pub spec: PlateSpec,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

fn write_dataset<'a>(
    dir: &Path,
    prefix: &str,
    items: impl Iterator<Item = (&'a Image, &'a PlateSpec, Option<BoundingBox>)>,
) -> Result<PathBuf, SynthError> {
    fs::create_dir_all(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut manifest = BufWriter::new(fs::File::create(&manifest_path)?);
    for (i, (img, spec, bbox)) in items.enumerate() {
        let file = format!("{prefix}_{i:05}.ppm");
        image_ops::save_ppm(&dir.join(&file), img)?;
        let record = ManifestRecord {
            file,
            text: spec.text.clone(),
            bbox,
            spec: spec.clone(),
        };
        serde_json::to_writer(&mut manifest, &record)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    Ok(manifest_path)
}

pub fn write_plates(dir: &Path, plates: &[(PlateSpec, Image)]) -> Result<PathBuf, SynthError> {
    write_dataset(dir, "plate", plates.iter().map(|(s, i)| (i, s, None)))
}

pub fn write_scenes(dir: &Path, scenes: &[Scene]) -> Result<PathBuf, SynthError> {
    write_dataset(dir, "scene", scenes.iter().map(|s| (&s.image, &s.plate, Some(s.bbox))))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>, SynthError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_config_is_clean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s = random_spec(&mut rng, &PlateConfig::clean());
            assert_eq!(s.tilt_deg, 0.0);
            assert_eq!(s.blur_sigma, 0.0);
            assert_eq!(s.downscale_factor, 1.0);
            assert!(s.shadow.is_none() && s.top_text.is_none() && s.bottom_text.is_none() && s.icon.is_none());
            assert!((5..=8).contains(&s.text.len()));
        }
    }

    #[test]
    fn crop_rows_arithmetic() {
        assert_eq!(crop_rows(60, 0.6), (12, 36));
        assert_eq!(crop_rows(47, 0.6), (9, 28));
        assert_eq!(crop_rows(10, 1.0), (0, 10));
    }

    #[test]
    fn box_serializes_as_array() {
        let b = BoundingBox::new(1, 2, 3, 4).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1,2,3,4]");
        assert!(serde_json::from_str::<BoundingBox>("[0,0,0,4]").is_err());
    }

    #[test]
    fn text_too_long_is_rejected() {
        let spec = PlateSpec::clean("ABCDEFGH", 40, 40);
        assert!(matches!(render(&spec), Err(SynthError::TextTooLong { .. })));
    }

    #[test]
    fn overlay_rejects_out_of_bounds() {
        let bg = RgbImage::new(10, 10);
        let plate = RgbImage::new(4, 4);
        assert!(overlay(&bg, &plate, &BoundingBox::new(8, 0, 4, 4).unwrap()).is_err());
    }
}
