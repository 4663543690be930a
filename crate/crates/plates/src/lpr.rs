//! Detection and recognition metrics, reference detector/recognizer stages,
//! and the end-to-end plate pipeline harness.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::font::{self, Bitmap, GLYPH_H};
use crate::image_ops::{luminance, Image};
use crate::synth::{center_crop, crop_box, BoundingBox, SynthError, TEXT_BAND};

#[derive(Debug, Error)]
pub enum LprError {
    #[error("reference text is empty")]
    EmptyReference,
    #[error("no scenes to evaluate")]
    EmptyDataset,
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
    pub cer: f64,
}

impl CerBreakdown {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Character error rate `(S + D + I) / N` from a minimal unit-cost
/// alignment. Among equal-cost alignments the backtrace prefers a
/// substitution (or match), then a deletion, then an insertion.
pub fn cer(reference: &str, hypothesis: &str) -> Result<CerBreakdown, LprError> {
    let r: Vec<char> = reference.chars().collect();
    let h: Vec<char> = hypothesis.chars().collect();
    if r.is_empty() {
        return Err(LprError::EmptyReference);
    }
    let (n, m) = (r.len(), h.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let (mut s, mut del, mut ins) = (0, 0, 0);
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(r[i - 1] != h[j - 1]) {
            s += usize::from(r[i - 1] != h[j - 1]);
            i -= 1;
            j -= 1;
        } else if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            del += 1;
            i -= 1;
        } else {
            ins += 1;
            j -= 1;
        }
    }
    Ok(CerBreakdown {
        substitutions: s,
        deletions: del,
        insertions: ins,
        ref_len: n,
        cer: (s + del + ins) as f64 / n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub ds: f64,
    pub iou: f64,
}

/// Dice score and IoU over pixel areas.
pub fn box_overlap(a: &BoundingBox, b: &BoundingBox) -> Overlap {
    let ix = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x)) as u64;
    let iy = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y)) as u64;
    let inter = ix * iy;
    let sum = a.area() + b.area();
    let union = sum - inter;
    Overlap {
        ds: 2.0 * inter as f64 / sum as f64,
        iou: inter as f64 / union as f64,
    }
}

/// Ground truth with each edge moved uniformly by up to `jitter` times the
/// box dimension along its axis, clipped to the image and kept at least one
/// pixel wide and tall.
pub fn oracle_detector<R: Rng + ?Sized>(
    image_size: (u32, u32),
    truth: &BoundingBox,
    jitter: f64,
    rng: &mut R,
) -> BoundingBox {
    if jitter <= 0.0 {
        return *truth;
    }
    let (iw, ih) = (image_size.0 as f64, image_size.1 as f64);
    let mut edge = |v: f64, span: f64| v + rng.random_range(-jitter..=jitter) * span;
    let (w, h) = (truth.w as f64, truth.h as f64);
    let left = edge(truth.x as f64, w).round().clamp(0.0, iw - 1.0);
    let right = edge((truth.x + truth.w) as f64, w).round().clamp(0.0, iw);
    let top = edge(truth.y as f64, h).round().clamp(0.0, ih - 1.0);
    let bottom = edge((truth.y + truth.h) as f64, h).round().clamp(0.0, ih);
    let (x0, x1) = (left.min(right), left.max(right));
    let (y0, y1) = (top.min(bottom), top.max(bottom));
    let x = (x0 as u32).min(image_size.0 - 1);
    let y = (y0 as u32).min(image_size.1 - 1);
    let w = ((x1 - x0) as u32).clamp(1, image_size.0 - x);
    let h = ((y1 - y0) as u32).clamp(1, image_size.1 - y);
    BoundingBox { x, y, w, h }
}

/// Reads text by column-projection segmentation and nearest-template
/// matching against the embedded font.
#[derive(Debug, Clone)]
pub struct TemplateRecognizer {
    templates: Vec<Template>,
    /// Weight of the glyph-width mismatch, in glyph columns.
    pub aspect_penalty: f64,
    /// Minimum luminance range for an image to count as containing ink.
    pub min_contrast: f64,
}

#[derive(Debug, Clone)]
struct Template {
    ch: char,
    /// Ink columns only, `cells[row][col]`.
    cells: Vec<Vec<f64>>,
    width: usize,
}

impl Default for TemplateRecognizer {
    fn default() -> Self {
        Self::new(font::CHARSET)
    }
}

fn template(ch: char, g: &Bitmap) -> Template {
    let (a, b) = font::ink_columns(g);
    let cells = g
        .iter()
        .map(|row| row[a..=b].iter().map(|&on| f64::from(u8::from(on))).collect())
        .collect();
    Template {
        ch,
        cells,
        width: b - a + 1,
    }
}

impl TemplateRecognizer {
    /// Templates for the characters of `charset` that the font covers.
    pub fn new(charset: &str) -> Self {
        let templates = charset
            .chars()
            .filter_map(|c| font::glyph(c).map(|g| template(c, &g)))
            .collect();
        Self {
            templates,
            aspect_penalty: 0.1,
            min_contrast: 24.0,
        }
    }

    pub fn recognize(&self, img: &Image) -> String {
        let Some(mask) = ink_mask(img, self.min_contrast) else {
            return String::new();
        };
        let (w, h) = (img.width() as usize, img.height() as usize);
        let at = |x: usize, y: usize| mask[y * w + x];

        let row_mass: Vec<usize> = (0..h).map(|y| (0..w).filter(|&x| at(x, y)).count()).collect();
        let Some((y0, y1)) = heaviest_run(&row_mass) else {
            return String::new();
        };
        let scale = (y1 - y0 + 1) as f64 / GLYPH_H as f64;

        let col_mass: Vec<usize> = (0..w).map(|x| (y0..=y1).filter(|&y| at(x, y)).count()).collect();
        let segments = runs(&col_mass);
        if segments.is_empty() {
            return String::new();
        }
        let masses: Vec<usize> = segments
            .iter()
            .map(|&(a, b)| col_mass[a..=b].iter().sum())
            .collect();
        let mut sorted = masses.clone();
        sorted.sort_unstable();
        let median = sorted[sorted.len() / 2] as f64;
        // specks left by blur or background noise
        let segments: Vec<(usize, usize)> = segments
            .into_iter()
            .zip(&masses)
            .filter(|(_, &m)| m as f64 >= 0.15 * median)
            .map(|(s, _)| s)
            .collect();

        let pitch = (font::GLYPH_W + 1) as f64 * scale;
        let mut out = String::new();
        for (a, b) in segments {
            let width = (b - a + 1) as f64;
            let parts = ((width + scale) / pitch).round().max(1.0) as usize;
            let step = (width + scale) / parts as f64;
            for p in 0..parts {
                let lo = a + (p as f64 * step).round() as usize;
                let hi = (a + ((p + 1) as f64 * step - scale).round() as usize).min(b).max(lo);
                // trim empty columns left by the split
                let cols: Vec<usize> = (lo..=hi).filter(|&x| col_mass[x] > 0).collect();
                if let (Some(&c0), Some(&c1)) = (cols.first(), cols.last()) {
                    out.push(self.classify(&at, (c0, c1), (y0, y1), scale));
                }
            }
        }
        out
    }

    fn classify(
        &self,
        at: &impl Fn(usize, usize) -> bool,
        cols: (usize, usize),
        rows: (usize, usize),
        scale: f64,
    ) -> char {
        let width_units = (cols.1 - cols.0 + 1) as f64 / scale;
        let mut best = (f64::INFINITY, ' ');
        for t in &self.templates {
            let grid = sample_grid(at, cols, rows, t.width, GLYPH_H);
            let mut dist = 0.0;
            for (gr, tr) in grid.iter().zip(&t.cells) {
                for (g, v) in gr.iter().zip(tr) {
                    dist += (g - v) * (g - v);
                }
            }
            dist /= (t.width * GLYPH_H) as f64;
            dist += self.aspect_penalty * (width_units - t.width as f64).abs();
            if dist < best.0 {
                best = (dist, t.ch);
            }
        }
        best.1
    }
}

/// Foreground mask from an Otsu threshold on luminance; the minority side is
/// ink. `None` when the image has too little contrast.
fn ink_mask(img: &Image, min_contrast: f64) -> Option<Vec<bool>> {
    let lum: Vec<f64> = img.pixels().map(luminance).collect();
    if lum.is_empty() {
        return None;
    }
    let lo = lum.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = lum.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < min_contrast {
        return None;
    }
    let mut hist = [0usize; 256];
    for &l in &lum {
        hist[l.round().clamp(0.0, 255.0) as usize] += 1;
    }
    let t = otsu(&hist) as f64;
    let dark: Vec<bool> = lum.iter().map(|&l| l.round() <= t).collect();
    let n_dark = dark.iter().filter(|&&d| d).count();
    let ink_is_dark = 2 * n_dark <= dark.len();
    Some(dark.into_iter().map(|d| d == ink_is_dark).collect())
}

/// Threshold maximizing between-class variance; pixels `<= t` form the
/// dark class.
fn otsu(hist: &[usize; 256]) -> usize {
    let total: usize = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0usize, 0.0);
    let (mut best_t, mut best_var) = (0, -1.0);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let var = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }
    best_t
}

/// Maximal runs of non-zero entries, as inclusive index pairs.
fn runs(mass: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &m) in mass.iter().enumerate() {
        match (m > 0, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, mass.len() - 1));
    }
    out
}

fn heaviest_run(mass: &[usize]) -> Option<(usize, usize)> {
    runs(mass)
        .into_iter()
        .max_by_key(|&(a, b)| mass[a..=b].iter().sum::<usize>())
}

/// Mean ink over a `gw × gh` grid laid on the inclusive pixel rectangle.
fn sample_grid(
    at: &impl Fn(usize, usize) -> bool,
    cols: (usize, usize),
    rows: (usize, usize),
    gw: usize,
    gh: usize,
) -> Vec<Vec<f64>> {
    let pw = (cols.1 - cols.0 + 1) as f64;
    let ph = (rows.1 - rows.0 + 1) as f64;
    let bounds = |k: usize, n: usize, len: f64, origin: usize| {
        let lo = (k as f64 * len / n as f64).round() as usize;
        let hi = ((k + 1) as f64 * len / n as f64).round() as usize;
        // a cell narrower than a pixel samples its nearest pixel
        let hi = hi.max(lo + 1).min(len as usize);
        let lo = lo.min(hi - 1);
        (origin + lo, origin + hi)
    };
    (0..gh)
        .map(|r| {
            let (ya, yb) = bounds(r, gh, ph, rows.0);
            (0..gw)
                .map(|c| {
                    let (xa, xb) = bounds(c, gw, pw, cols.0);
                    let mut on = 0usize;
                    for y in ya..yb {
                        for x in xa..xb {
                            on += usize::from(at(x, y));
                        }
                    }
                    on as f64 / ((yb - ya) * (xb - xa)) as f64
                })
                .collect()
        })
        .collect()
}

/// What a pipeline stage may see about one scene. Ground truth is exposed
/// so oracle stages can be plugged in.
#[derive(Debug, Clone, Copy)]
pub struct SceneContext<'a> {
    pub image: &'a Image,
    pub truth_box: &'a BoundingBox,
    pub truth_text: &'a str,
}

pub trait Detector {
    fn detect(&mut self, scene: &SceneContext<'_>) -> BoundingBox;
}

pub trait Recognizer {
    /// `plate` is the detected crop after the center crop.
    fn recognize(&mut self, plate: &Image, scene: &SceneContext<'_>) -> String;
}

/// [`oracle_detector`] with its own rng.
pub struct OracleDetector<R> {
    pub jitter: f64,
    pub rng: R,
}

impl<R: Rng> Detector for OracleDetector<R> {
    fn detect(&mut self, scene: &SceneContext<'_>) -> BoundingBox {
        oracle_detector(scene.image.dimensions(), scene.truth_box, self.jitter, &mut self.rng)
    }
}

/// Returns the ground-truth text.
pub struct OracleRecognizer;

impl Recognizer for OracleRecognizer {
    fn recognize(&mut self, _plate: &Image, scene: &SceneContext<'_>) -> String {
        scene.truth_text.to_string()
    }
}

impl Recognizer for TemplateRecognizer {
    fn recognize(&mut self, plate: &Image, _scene: &SceneContext<'_>) -> String {
        TemplateRecognizer::recognize(self, plate)
    }
}

/// Per-scene outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub truth: String,
    pub predicted: String,
    #[serde(rename = "box")]
    pub detected: BoundingBox,
    pub ds: f64,
    pub iou: f64,
    pub cer: f64,
}

impl ItemResult {
    pub fn detected_ok(&self) -> bool {
        self.ds >= 0.5
    }

    pub fn exact(&self) -> bool {
        self.truth == self.predicted
    }
}

/// Pipeline aggregates. The `*_given_lpd` fields cover only items whose
/// detection reached DS ≥ 0.5 and are `None` when there are none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub scenes: usize,
    pub lpd_accuracy: f64,
    pub lpr_accuracy_given_lpd: Option<f64>,
    pub avg_cer_given_lpd: Option<f64>,
    pub lpr_accuracy: f64,
    pub avg_cer: f64,
}

impl PipelineReport {
    pub fn from_items(items: &[ItemResult]) -> Result<Self, LprError> {
        if items.is_empty() {
            return Err(LprError::EmptyDataset);
        }
        let n = items.len() as f64;
        let detected: Vec<&ItemResult> = items.iter().filter(|i| i.detected_ok()).collect();
        let nd = detected.len() as f64;
        let cond = |f: &dyn Fn(&ItemResult) -> f64| {
            (!detected.is_empty()).then(|| detected.iter().map(|i| f(i)).sum::<f64>() / nd)
        };
        Ok(Self {
            scenes: items.len(),
            lpd_accuracy: nd / n,
            lpr_accuracy_given_lpd: cond(&|i| f64::from(u8::from(i.exact()))),
            avg_cer_given_lpd: cond(&|i| i.cer),
            lpr_accuracy: items.iter().filter(|i| i.exact()).count() as f64 / n,
            avg_cer: items.iter().map(|i| i.cer).sum::<f64>() / n,
        })
    }

    /// `metric,value` rows; absent conditional metrics are written empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(out, "metric,value")?;
        writeln!(out, "scenes,{}", self.scenes)?;
        writeln!(out, "lpd_accuracy,{}", self.lpd_accuracy)?;
        writeln!(out, "lpr_accuracy_given_lpd,{}", opt(self.lpr_accuracy_given_lpd))?;
        writeln!(out, "avg_cer_given_lpd,{}", opt(self.avg_cer_given_lpd))?;
        writeln!(out, "lpr_accuracy,{}", self.lpr_accuracy)?;
        writeln!(out, "avg_cer,{}", self.avg_cer)?;
        Ok(())
    }
}

/// A scene to evaluate.
#[derive(Debug, Clone)]
pub struct LabeledScene {
    pub image: Image,
    pub text: String,
    pub bbox: BoundingBox,
}

/// Runs one scene through detect, crop, center crop, recognize and score.
pub fn evaluate_scene(
    scene: &LabeledScene,
    detector: &mut dyn Detector,
    recognizer: &mut dyn Recognizer,
) -> Result<ItemResult, LprError> {
    let ctx = SceneContext {
        image: &scene.image,
        truth_box: &scene.bbox,
        truth_text: &scene.text,
    };
    let detected = detector.detect(&ctx);
    let overlap = box_overlap(&detected, &scene.bbox);
    let crop = center_crop(&crop_box(&scene.image, &detected)?, TEXT_BAND)?;
    let predicted = recognizer.recognize(&crop, &ctx);
    let c = cer(&scene.text, &predicted)?;
    Ok(ItemResult {
        truth: scene.text.clone(),
        predicted,
        detected,
        ds: overlap.ds,
        iou: overlap.iou,
        cer: c.cer,
    })
}

pub fn evaluate_pipeline(
    scenes: &[LabeledScene],
    detector: &mut dyn Detector,
    recognizer: &mut dyn Recognizer,
) -> Result<(PipelineReport, Vec<ItemResult>), LprError> {
    let items = scenes
        .iter()
        .map(|s| evaluate_scene(s, detector, recognizer))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((PipelineReport::from_items(&items)?, items))
}
