//! Raster images, codecs, drawing primitives and the low-level analysis
//! operators (Otsu binarization, connected components) shared by the
//! generator and the detectors.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::glyphs;

/// 8-bit RGB triple.
pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image: {0}")]
    CorruptImage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("invalid bounding box [{0}, {1}, {2}, {3}]")]
    InvalidBox(u32, u32, u32, u32),
    #[error("primitive extends outside the {width}x{height} image")]
    OutOfBounds { width: u32, height: u32 },
    #[error("no glyph for character {0:?}")]
    UnsupportedGlyph(char),
}

/// ITU-R BT.601 luma, rounded half-up: round(0.299 R + 0.587 G + 0.114 B).
#[inline]
pub fn luminance(rgb: Rgb) -> u8 {
    let [r, g, b] = rgb;
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Owned row-major RGB image. Always at least 1x1.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RasterImage({}x{})", self.width, self.height)
    }
}

impl RasterImage {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidDimensions { width, height });
        }
        Ok(Self {
            width,
            height,
            pixels: vec![fill; width as usize * height as usize],
        })
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<Rgb>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 || pixels.len() != width as usize * height as usize {
            return Err(ImagingError::InvalidDimensions { width, height });
        }
        Ok(Self { width, height, pixels })
    }

    /// Builds an image from a per-pixel function.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> Rgb,
    ) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidDimensions { width, height });
        }
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn bounds(&self) -> BoundingBox {
        BoundingBox {
            x_min: 0,
            y_min: 0,
            x_max: self.width,
            y_max: self.height,
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: Rgb) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = rgb;
    }

    #[inline]
    pub fn luma(&self, x: u32, y: u32) -> u8 {
        luminance(self.get(x, y))
    }

    /// Luminance plane in row-major order.
    pub fn luma_plane(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| luminance(p)).collect()
    }

    pub fn crop(&self, region: BoundingBox) -> Result<RasterImage, ImagingError> {
        if !region.fits_within(self.width, self.height) {
            return Err(ImagingError::OutOfBounds {
                width: self.width,
                height: self.height,
            });
        }
        RasterImage::from_fn(region.width(), region.height(), |x, y| {
            self.get(region.x_min + x, region.y_min + y)
        })
    }
}

/// Axis-aligned pixel box, half-open on the max edges.
///
/// Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, ImagingError> {
        if x_min >= x_max || y_min >= y_max {
            return Err(ImagingError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(Self { x_min, y_min, x_max, y_max })
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min as f64 + self.x_max as f64) / 2.0,
            (self.y_min as f64 + self.y_max as f64) / 2.0,
        )
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.is_valid() && self.x_max <= width && self.y_max <= height
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let b = BoundingBox {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        };
        b.is_valid().then_some(b)
    }

    pub fn intersects(&self, other: &BoundingBox) -> bool {
        self.intersection(other).is_some()
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    /// Grows the box by `margin` on every side, clamped to the image.
    pub fn expand(&self, margin: u32, width: u32, height: u32) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.saturating_sub(margin),
            y_min: self.y_min.saturating_sub(margin),
            x_max: (self.x_max + margin).min(width),
            y_max: (self.y_max + margin).min(height),
        }
    }

    pub fn translate(&self, dx: u32, dy: u32) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn to_array(&self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    /// Accepts any four coordinates; validity is checked by whoever binds
    /// the box to an image, so a bad manifest can name the offending record.
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x_min, y_min, x_max, y_max] = <[u32; 4]>::deserialize(d)?;
        Ok(BoundingBox { x_min, y_min, x_max, y_max })
    }
}

/// Tight bbox of a set of pixel coordinates.
pub fn bbox_of_points<I: IntoIterator<Item = (u32, u32)>>(points: I) -> Option<BoundingBox> {
    let mut acc: Option<BoundingBox> = None;
    for (x, y) in points {
        let p = BoundingBox {
            x_min: x,
            y_min: y,
            x_max: x + 1,
            y_max: y + 1,
        };
        acc = Some(match acc {
            None => p,
            Some(b) => b.union(&p),
        });
    }
    acc
}

// ---------------------------------------------------------------------------
// Codecs

/// Decodes PNG or JPEG bytes. Grayscale and alpha sources are flattened to RGB.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage, ImagingError> {
    let format = image::guess_format(bytes)
        .map_err(|_| ImagingError::UnsupportedFormat("unrecognized signature".into()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(ImagingError::UnsupportedFormat(format!("{format:?}")));
    }
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| ImagingError::CorruptImage(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (width, height) = rgb.dimensions();
    let pixels = rgb.pixels().map(|p| p.0).collect();
    RasterImage::from_pixels(width, height, pixels)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage, ImagingError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ImagingError::FileNotFound(path.display().to_string()));
    }
    let bytes = std::fs::read(path)?;
    decode_image(&bytes)
}

/// Lossless PNG encoding. Output is deterministic for identical pixels.
pub fn encode_png(image: &RasterImage) -> Vec<u8> {
    let mut raw = Vec::with_capacity(image.pixels.len() * 3);
    for p in &image.pixels {
        raw.extend_from_slice(p);
    }
    let buffer = image::RgbImage::from_raw(image.width, image.height, raw)
        .expect("pixel buffer length matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buffer
        .write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

pub fn save_image(image: &RasterImage, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    std::fs::write(path, encode_png(image))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Binarization

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    /// Bright marks on a darker field: above-threshold pixels are foreground.
    LightOnDark,
    /// Dark marks on a brighter field: at-or-below-threshold pixels are foreground.
    DarkOnLight,
}

impl Polarity {
    pub const BOTH: [Polarity; 2] = [Polarity::LightOnDark, Polarity::DarkOnLight];
}

#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinaryMask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Foreground rendered white on black, mainly for debugging and tests.
    pub fn to_image(&self) -> RasterImage {
        RasterImage::from_fn(self.width, self.height, |x, y| {
            if self.get(x, y) {
                WHITE
            } else {
                BLACK
            }
        })
        .expect("mask dimensions are positive")
    }
}

#[derive(Debug, Clone)]
pub struct Binarization {
    pub mask: BinaryMask,
    /// Otsu threshold; pixels with luminance <= threshold form the low class.
    pub threshold: u8,
    /// Set when every pixel has the same luminance; the mask is then empty.
    pub degenerate: bool,
}

/// Otsu's threshold over a 256-bin histogram. `None` when fewer than two
/// distinct values are present.
pub fn otsu_threshold(histogram: &[u64; 256]) -> Option<u8> {
    let total: u64 = histogram.iter().sum();
    if histogram.iter().filter(|&&c| c > 0).count() < 2 {
        return None;
    }
    let sum_all: f64 = histogram
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();
    let mut weight_low = 0u64;
    let mut sum_low = 0f64;
    let mut best = (f64::MIN, 0u8);
    for (t, &count) in histogram.iter().enumerate().take(255) {
        weight_low += count;
        sum_low += t as f64 * count as f64;
        let weight_high = total - weight_low;
        if weight_low == 0 || weight_high == 0 {
            continue;
        }
        let mean_low = sum_low / weight_low as f64;
        let mean_high = (sum_all - sum_low) / weight_high as f64;
        let between = weight_low as f64 * weight_high as f64 * (mean_low - mean_high).powi(2);
        if between > best.0 {
            best = (between, t as u8);
        }
    }
    Some(best.1)
}

pub fn luminance_histogram(luma: &[u8]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in luma {
        hist[v as usize] += 1;
    }
    hist
}

/// Global Otsu binarization over BT.601 luminance.
pub fn binarize(image: &RasterImage, polarity: Polarity) -> Binarization {
    let luma = image.luma_plane();
    binarize_luma(&luma, image.width(), image.height(), polarity)
}

pub fn binarize_luma(luma: &[u8], width: u32, height: u32, polarity: Polarity) -> Binarization {
    let hist = luminance_histogram(luma);
    let Some(threshold) = otsu_threshold(&hist) else {
        return Binarization {
            mask: BinaryMask::new(width, height),
            threshold: luma.first().copied().unwrap_or(0),
            degenerate: true,
        };
    };
    let bits = luma
        .iter()
        .map(|&v| match polarity {
            Polarity::LightOnDark => v > threshold,
            Polarity::DarkOnLight => v <= threshold,
        })
        .collect();
    Binarization {
        mask: BinaryMask { width, height, bits },
        threshold,
        degenerate: false,
    }
}

// ---------------------------------------------------------------------------
// Connected components

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Component {
    pub label: u32,
    pub bbox: BoundingBox,
    pub pixel_count: u64,
}

impl Component {
    pub fn fill_ratio(&self) -> f64 {
        self.pixel_count as f64 / self.bbox.area() as f64
    }
}

/// Per-pixel labels (0 = background) plus per-component statistics.
/// `components[i]` describes label `i + 1`.
#[derive(Debug, Clone)]
pub struct ComponentMap {
    width: u32,
    height: u32,
    labels: Vec<u32>,
    components: Vec<Component>,
}

impl ComponentMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, label: u32) -> &Component {
        &self.components[label as usize - 1]
    }

    #[inline]
    pub fn label_at(&self, x: u32, y: u32) -> u32 {
        self.labels[y as usize * self.width as usize + x as usize]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }
}

/// 8-connected labeling. Labels are assigned in raster order of each
/// component's first pixel.
pub fn connected_components(mask: &BinaryMask) -> ComponentMap {
    let (w, h) = (mask.width as usize, mask.height as usize);
    let mut labels = vec![0u32; w * h];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        let label = components.len() as u32 + 1;
        labels[start] = label;
        stack.push(start);
        let (sx, sy) = ((start % w) as u32, (start / w) as u32);
        let mut bbox = BoundingBox {
            x_min: sx,
            y_min: sy,
            x_max: sx + 1,
            y_max: sy + 1,
        };
        let mut count = 0u64;
        while let Some(idx) = stack.pop() {
            count += 1;
            let (x, y) = (idx % w, idx / w);
            bbox.x_min = bbox.x_min.min(x as u32);
            bbox.x_max = bbox.x_max.max(x as u32 + 1);
            bbox.y_min = bbox.y_min.min(y as u32);
            bbox.y_max = bbox.y_max.max(y as u32 + 1);
            let x0 = x.saturating_sub(1);
            let x1 = (x + 1).min(w - 1);
            let y0 = y.saturating_sub(1);
            let y1 = (y + 1).min(h - 1);
            for ny in y0..=y1 {
                for nx in x0..=x1 {
                    let n = ny * w + nx;
                    if mask.bits[n] && labels[n] == 0 {
                        labels[n] = label;
                        stack.push(n);
                    }
                }
            }
        }
        components.push(Component {
            label,
            bbox,
            pixel_count: count,
        });
    }
    ComponentMap {
        width: mask.width,
        height: mask.height,
        labels,
        components,
    }
}

// ---------------------------------------------------------------------------
// Drawing

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive<'a> {
    /// Straight segment between two inclusive end points, drawn with a
    /// square brush of the style's thickness.
    Line { from: (u32, u32), to: (u32, u32) },
    FilledRect(BoundingBox),
    /// Text from the bundled glyph atlas. `origin` is the top-left corner of
    /// the glyph cells; `scale` is the integer magnification.
    GlyphRun { origin: (u32, u32), text: &'a str, scale: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Style {
    pub color: Rgb,
    pub thickness: u32,
}

impl Style {
    pub fn new(color: Rgb) -> Self {
        Self { color, thickness: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DrawReport {
    /// Tight box of every pixel the primitive wrote.
    pub written: Option<BoundingBox>,
    /// Tight box of the pixels whose value actually changed.
    pub changed: Option<BoundingBox>,
}

/// Pixel coordinates covered by a primitive, without drawing it.
/// Fails if any covered pixel lies outside a `width` x `height` canvas.
pub fn rasterize(
    primitive: &Primitive<'_>,
    thickness: u32,
    width: u32,
    height: u32,
) -> Result<Vec<(u32, u32)>, ImagingError> {
    let oob = ImagingError::OutOfBounds { width, height };
    let mut points: Vec<(i64, i64)> = Vec::new();
    match *primitive {
        Primitive::FilledRect(b) => {
            if !b.is_valid() {
                return Err(ImagingError::InvalidBox(b.x_min, b.y_min, b.x_max, b.y_max));
            }
            for y in b.y_min..b.y_max {
                for x in b.x_min..b.x_max {
                    points.push((x as i64, y as i64));
                }
            }
        }
        Primitive::Line { from, to } => {
            let t = thickness.max(1) as i64;
            let lo = -(t - 1) / 2;
            let hi = lo + t;
            let (mut x, mut y) = (from.0 as i64, from.1 as i64);
            let (x1, y1) = (to.0 as i64, to.1 as i64);
            let dx = (x1 - x).abs();
            let dy = -(y1 - y).abs();
            let sx = if x < x1 { 1 } else { -1 };
            let sy = if y < y1 { 1 } else { -1 };
            let mut err = dx + dy;
            loop {
                for oy in lo..hi {
                    for ox in lo..hi {
                        points.push((x + ox, y + oy));
                    }
                }
                if x == x1 && y == y1 {
                    break;
                }
                let e2 = 2 * err;
                if e2 >= dy {
                    err += dy;
                    x += sx;
                }
                if e2 <= dx {
                    err += dx;
                    y += sy;
                }
            }
            points.sort_unstable();
            points.dedup();
        }
        Primitive::GlyphRun { origin, text, scale } => {
            let bitmap = glyphs::render_text(text, scale.max(1))?;
            for (x, y) in bitmap.ink_points() {
                points.push((origin.0 as i64 + x as i64, origin.1 as i64 + y as i64));
            }
        }
    }
    points
        .into_iter()
        .map(|(x, y)| {
            if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                Err(ImagingError::OutOfBounds { width, height })
            } else {
                Ok((x as u32, y as u32))
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| oob)
}

/// Paints a primitive in place. Nothing is written if any part of the
/// primitive falls outside the image.
pub fn draw(
    image: &mut RasterImage,
    primitive: &Primitive<'_>,
    style: &Style,
) -> Result<DrawReport, ImagingError> {
    let points = rasterize(primitive, style.thickness, image.width, image.height)?;
    Ok(paint(image, &points, style.color))
}

/// Writes `color` at every listed pixel and reports what was touched.
pub fn paint(image: &mut RasterImage, points: &[(u32, u32)], color: Rgb) -> DrawReport {
    let mut changed = Vec::new();
    for &(x, y) in points {
        if image.get(x, y) != color {
            changed.push((x, y));
            image.put(x, y, color);
        }
    }
    DrawReport {
        written: bbox_of_points(points.iter().copied()),
        changed: bbox_of_points(changed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_tone(width: u32, height: u32, split_x: u32, lo: u8, hi: u8) -> RasterImage {
        RasterImage::from_fn(width, height, |x, _| if x < split_x { [lo; 3] } else { [hi; 3] })
            .unwrap()
    }

    #[test]
    fn zero_sized_images_are_rejected() {
        assert!(RasterImage::new(0, 5, BLACK).is_err());
        assert!(RasterImage::from_pixels(2, 2, vec![BLACK; 3]).is_err());
    }

    #[test]
    fn luminance_weights() {
        assert_eq!(luminance(WHITE), 255);
        assert_eq!(luminance(BLACK), 0);
        // 0.299*100 + 0.587*50 + 0.114*200 = 82.15
        assert_eq!(luminance([100, 50, 200]), 82);
        // exact .5 rounds up: 0.299*0 + 0.587*0 + 0.114*... pick r only: 0.299*5 = 1.495
        assert_eq!(luminance([5, 0, 0]), 1);
    }

    #[test]
    fn png_of_known_pixels_decodes_to_same_triples() {
        let pixels = vec![[1, 2, 3], [4, 5, 6], [7, 8, 9], [10, 11, 12], [13, 14, 15], [250, 251, 252]];
        let img = RasterImage::from_pixels(3, 2, pixels.clone()).unwrap();
        let decoded = decode_image(&encode_png(&img)).unwrap();
        assert_eq!(decoded.pixels(), &pixels[..]);
    }

    #[test]
    fn grayscale_png_expands_to_rgb() {
        let gray = image::GrayImage::from_raw(2, 1, vec![10, 200]).unwrap();
        let mut buf = Cursor::new(Vec::new());
        gray.write_to(&mut buf, image::ImageFormat::Png).unwrap();
        let img = decode_image(buf.get_ref()).unwrap();
        assert_eq!(img.pixels(), &[[10, 10, 10], [200, 200, 200]]);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        assert!(matches!(load_image(&missing), Err(ImagingError::FileNotFound(_))));
        let text = dir.path().join("notes.txt");
        std::fs::write(&text, "hello, not an image").unwrap();
        assert!(matches!(load_image(&text), Err(ImagingError::UnsupportedFormat(_))));
        let broken = dir.path().join("broken.png");
        let mut bytes = encode_png(&RasterImage::new(4, 4, WHITE).unwrap());
        bytes.truncate(30);
        std::fs::write(&broken, bytes).unwrap();
        assert!(matches!(load_image(&broken), Err(ImagingError::CorruptImage(_))));
    }

    #[test]
    fn save_load_round_trip_and_unwritable_dir() {
        let dir = tempfile::tempdir().unwrap();
        let img = RasterImage::from_fn(17, 9, |x, y| [x as u8 * 13, y as u8 * 29, (x ^ y) as u8]).unwrap();
        let path = dir.path().join("a.png");
        save_image(&img, &path).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
        assert_eq!(load_image(&path).unwrap(), img);
        let bad = dir.path().join("missing-dir").join("a.png");
        assert!(matches!(save_image(&img, bad), Err(ImagingError::Io(_))));
    }

    #[test]
    fn otsu_splits_two_modes_exactly() {
        let img = two_tone(10, 4, 5, 20, 235);
        let light = binarize(&img, Polarity::LightOnDark);
        assert!(!light.degenerate);
        for y in 0..4 {
            for x in 0..10 {
                assert_eq!(light.mask.get(x, y), x >= 5);
            }
        }
        let dark = binarize(&img, Polarity::DarkOnLight);
        assert_eq!(dark.mask.count(), 20);
        assert!(dark.mask.get(0, 0));
    }

    #[test]
    fn uniform_image_is_degenerate() {
        let img = RasterImage::new(8, 8, [128; 3]).unwrap();
        for p in Polarity::BOTH {
            let b = binarize(&img, p);
            assert!(b.degenerate);
            assert_eq!(b.mask.count(), 0);
        }
    }

    #[test]
    fn binarize_is_idempotent_on_binary_images() {
        let img = RasterImage::from_fn(12, 7, |x, y| if (x * 7 + y * 3) % 5 < 2 { WHITE } else { BLACK }).unwrap();
        let first = binarize(&img, Polarity::LightOnDark).mask;
        let second = binarize(&first.to_image(), Polarity::LightOnDark).mask;
        assert_eq!(first, second);
        for y in 0..7 {
            for x in 0..12 {
                assert_eq!(first.get(x, y), img.get(x, y) == WHITE);
            }
        }
    }

    #[test]
    fn components_on_empty_mask() {
        let cm = connected_components(&BinaryMask::new(5, 5));
        assert_eq!(cm.component_count(), 0);
    }

    #[test]
    fn two_rectangles_two_components() {
        let mut mask = BinaryMask::new(40, 20);
        let a = BoundingBox::new(2, 3, 10, 8).unwrap();
        let b = BoundingBox::new(20, 10, 35, 18).unwrap();
        for r in [a, b] {
            for y in r.y_min..r.y_max {
                for x in r.x_min..r.x_max {
                    mask.set(x, y, true);
                }
            }
        }
        let cm = connected_components(&mask);
        assert_eq!(cm.component_count(), 2);
        assert_eq!(cm.component(1).bbox, a);
        assert_eq!(cm.component(2).bbox, b);
        assert_eq!(cm.component(1).pixel_count, a.area());
    }

    #[test]
    fn diagonal_neighbors_join_under_8_connectivity() {
        let mut mask = BinaryMask::new(4, 4);
        mask.set(0, 0, true);
        mask.set(1, 1, true);
        mask.set(2, 2, true);
        let cm = connected_components(&mask);
        assert_eq!(cm.component_count(), 1);
        assert_eq!(cm.component(1).pixel_count, 3);
    }

    #[test]
    fn filled_rect_area() {
        let mut img = RasterImage::new(200, 100, BLACK).unwrap();
        let rect = BoundingBox::new(10, 10, 110, 18).unwrap();
        let report = draw(&mut img, &Primitive::FilledRect(rect), &Style::new(WHITE)).unwrap();
        assert_eq!(img.pixels().iter().filter(|&&p| p == WHITE).count(), 800);
        assert_eq!(report.written, Some(rect));
        assert_eq!(report.changed, Some(rect));
    }

    #[test]
    fn out_of_bounds_rect_leaves_image_untouched() {
        let mut img = RasterImage::new(50, 50, BLACK).unwrap();
        let before = img.clone();
        let rect = BoundingBox::new(40, 40, 60, 45).unwrap();
        assert!(matches!(
            draw(&mut img, &Primitive::FilledRect(rect), &Style::new(WHITE)),
            Err(ImagingError::OutOfBounds { .. })
        ));
        assert_eq!(img, before);
    }

    #[test]
    fn glyph_run_bbox_encloses_all_ink() {
        let mut img = RasterImage::new(120, 40, BLACK).unwrap();
        let report = draw(
            &mut img,
            &Primitive::GlyphRun { origin: (5, 6), text: "10 cm", scale: 2 },
            &Style::new(WHITE),
        )
        .unwrap();
        let scanned = bbox_of_points(
            (0..40).flat_map(|y| (0..120).map(move |x| (x, y))).filter(|&(x, y)| img.get(x, y) != BLACK),
        );
        assert_eq!(report.changed, scanned);
        assert_eq!(report.written, scanned);
    }

    #[test]
    fn thick_line_covers_brush() {
        let mut img = RasterImage::new(30, 30, BLACK).unwrap();
        let style = Style { color: WHITE, thickness: 3 };
        let r = draw(&mut img, &Primitive::Line { from: (5, 10), to: (20, 10) }, &style).unwrap();
        assert_eq!(r.written, Some(BoundingBox::new(4, 9, 22, 12).unwrap()));
        assert_eq!(img.pixels().iter().filter(|&&p| p == WHITE).count(), 18 * 3);
    }

    #[test]
    fn iou_helpers() {
        let a = BoundingBox::new(0, 0, 10, 10).unwrap();
        let b = BoundingBox::new(5, 0, 15, 10).unwrap();
        assert_eq!(a.intersection(&b).unwrap().area(), 50);
        assert_eq!(a.union(&b), BoundingBox::new(0, 0, 15, 10).unwrap());
        assert_eq!(a.center(), (5.0, 5.0));
        assert!(BoundingBox::new(3, 3, 3, 4).is_err());
    }
}
