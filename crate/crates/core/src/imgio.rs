//! Loading and saving of every external artifact: PNG images, binary feature
//! tensors, stroke documents, palette and edit-solution documents.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::editor::EditSolution;
use crate::features::FeaturePoint;
use crate::palette::{PaletteConfig, SemanticPalette};
use crate::{Error, Result};

/// Magic bytes opening a feature tensor file.
pub const TENSOR_MAGIC: &[u8; 4] = b"CPFT";
const TENSOR_HEADER_LEN: usize = 16;

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage);
        }
        if data.len() != width * height * 3 {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Parse(format!(
                "channel value {} at index {i} outside [0, 1]",
                data[i]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    ///
    /// Panics if a returned channel lies outside `[0, 1]` or the size is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data).expect("valid image")
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixel_at(y * self.width + x)
    }

    /// Pixel by linear (row-major) index.
    pub fn pixel_at(&self, index: usize) -> [f64; 3] {
        let p = &self.data[index * 3..index * 3 + 3];
        [p[0], p[1], p[2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        Self {
            width,
            height,
            data,
        }
    }

    /// The image as it would read back after an 8-bit save.
    pub fn quantize8(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|&c| f64::from(to_byte(c)) / 255.0)
            .collect();
        Self::from_raw_unchecked(self.width, self.height, data)
    }

    pub fn to_bytes8(&self) -> Vec<u8> {
        self.data.iter().map(|&c| to_byte(c)).collect()
    }
}

/// `round(255 c)` with halves rounded up.
pub fn to_byte(c: f64) -> u8 {
    (255.0 * c + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRgb> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes)
}

/// Decodes an 8- or 16-bit PNG; alpha is discarded.
pub fn decode_png(bytes: &[u8]) -> Result<ImageRgb> {
    match image::guess_format(bytes) {
        Ok(ImageFormat::Png) => {}
        Ok(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        Err(_) => return Err(Error::UnsupportedFormat("unrecognized data".into())),
    }
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|b| f64::from(b) / 255.0)
            .collect(),
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 65535.0)
            .collect(),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{:?} pixels",
                other.color()
            )))
        }
    };
    Ok(ImageRgb::from_raw_unchecked(width, height, data))
}

pub fn encode_png(img: &ImageRgb) -> Vec<u8> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.to_bytes8())
        .expect("buffer matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

/// Writes an 8-bit RGB PNG with `byte = round(255 c)`.
pub fn save_image(img: &ImageRgb, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_png(img)).map_err(|e| Error::io(path, e))
}

pub fn encode_gray8(width: usize, height: usize, values: Vec<u8>) -> Vec<u8> {
    let buf = image::GrayImage::from_raw(width as u32, height as u32, values)
        .expect("buffer matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn encode_gray16(width: usize, height: usize, values: Vec<u16>) -> Vec<u8> {
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(width as u32, height as u32, values)
        .expect("buffer matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Dense per-pixel feature vectors, `f32` row-major and channel-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatureTensor {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl RawFeatureTensor {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || dim == 0 {
            return Err(Error::Dimension(format!(
                "feature tensor {width}x{height}x{dim} is empty"
            )));
        }
        if data.len() != width * height * dim {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height}x{dim} tensor",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            width,
            height,
            dim,
            data,
        })
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(TENSOR_MAGIC);
        for v in [self.width, self.height, self.dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
            return Err(Error::TensorMagic);
        }
        if bytes.len() < TENSOR_HEADER_LEN {
            return Err(Error::TensorTruncated {
                expected: TENSOR_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let field = |i: usize| {
            let b = &bytes[4 + 4 * i..8 + 4 * i];
            u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize
        };
        let (width, height, dim) = (field(0), field(1), field(2));
        let count = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| Error::Dimension("tensor header overflows".into()))?;
        let expected = TENSOR_HEADER_LEN + count * 4;
        if bytes.len() < expected {
            return Err(Error::TensorTruncated {
                expected,
                found: bytes.len(),
            });
        }
        let data = bytes[TENSOR_HEADER_LEN..expected]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(width, height, dim, data)
    }
}

pub fn load_feature_tensor(path: impl AsRef<Path>) -> Result<RawFeatureTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RawFeatureTensor::from_bytes(&bytes)
}

pub fn save_feature_tensor(tensor: &RawFeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    write_file(path, &tensor.to_bytes())
}

/// One user stroke: covered pixels and the color they should become.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub pixels: Vec<[i64; 2]>,
    pub target: [f64; 3],
}

/// A stroke document, validated against its declared image size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeSet {
    pub image_width: usize,
    pub image_height: usize,
    pub strokes: Vec<Stroke>,
}

/// A deduplicated stroke pixel with its resolved target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokePixel {
    pub x: usize,
    pub y: usize,
    pub target: [f64; 3],
}

impl StrokeSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let set: StrokeSet = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stroke set serializes")
    }

    pub fn validate(&self) -> Result<()> {
        for (i, stroke) in self.strokes.iter().enumerate() {
            if stroke.pixels.is_empty() {
                return Err(Error::Strokes(format!("stroke {i} has no pixels")));
            }
            if stroke
                .target
                .iter()
                .any(|c| !c.is_finite() || !(0.0..=1.0).contains(c))
            {
                return Err(Error::Strokes(format!(
                    "stroke {i} target {:?} outside [0, 1]",
                    stroke.target
                )));
            }
            for &[x, y] in &stroke.pixels {
                if x < 0 || y < 0 || x as usize >= self.image_width || y as usize >= self.image_height
                {
                    return Err(Error::OutOfBounds {
                        x,
                        y,
                        width: self.image_width,
                        height: self.image_height,
                    });
                }
            }
        }
        Ok(())
    }

    /// The fidelity set: every stroked pixel once, later strokes overriding
    /// earlier targets, ordered by `(y, x)`.
    pub fn resolve(&self) -> Vec<StrokePixel> {
        let mut map = BTreeMap::new();
        for stroke in &self.strokes {
            for &[x, y] in &stroke.pixels {
                map.insert((y as usize, x as usize), stroke.target);
            }
        }
        map.into_iter()
            .map(|((y, x), target)| StrokePixel { x, y, target })
            .collect()
    }
}

pub fn load_strokes(path: impl AsRef<Path>) -> Result<StrokeSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    StrokeSet::from_json(&text)
}

/// Serialized palette entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub color: [f64; 3],
    pub semantic: [f64; 3],
}

impl From<FeaturePoint> for PaletteEntry {
    fn from(p: FeaturePoint) -> Self {
        Self {
            color: p.color,
            semantic: p.semantic,
        }
    }
}

impl From<PaletteEntry> for FeaturePoint {
    fn from(e: PaletteEntry) -> Self {
        FeaturePoint {
            color: e.color,
            semantic: e.semantic,
        }
    }
}

/// On-disk palette document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaletteDocument {
    pub config: PaletteConfig,
    pub entries: Vec<PaletteEntry>,
}

impl From<&SemanticPalette> for PaletteDocument {
    fn from(p: &SemanticPalette) -> Self {
        Self {
            config: p.config,
            entries: p.entries.iter().copied().map(Into::into).collect(),
        }
    }
}

impl PaletteDocument {
    pub fn into_palette(self) -> Result<SemanticPalette> {
        self.config.validate()?;
        let entries: Vec<FeaturePoint> = self.entries.into_iter().map(Into::into).collect();
        SemanticPalette::new(entries, self.config)
    }
}

pub fn palette_to_json(palette: &SemanticPalette) -> String {
    serde_json::to_string_pretty(&PaletteDocument::from(palette)).expect("palette serializes")
}

pub fn palette_from_json(text: &str) -> Result<SemanticPalette> {
    let doc: PaletteDocument = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    doc.into_palette()
}

pub fn save_palette(palette: &SemanticPalette, path: impl AsRef<Path>) -> Result<()> {
    write_file(path, palette_to_json(palette).as_bytes())
}

pub fn load_palette(path: impl AsRef<Path>) -> Result<SemanticPalette> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    palette_from_json(&text)
}

/// Palette document of the edited palette plus the delta block and energy terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub config: PaletteConfig,
    pub entries: Vec<PaletteEntry>,
    pub deltas: Vec<[f64; 3]>,
    pub energy: f64,
    pub fidelity: f64,
    pub propagation: f64,
}

impl From<&EditSolution> for SolutionDocument {
    fn from(s: &EditSolution) -> Self {
        let palette = PaletteDocument::from(&s.edited_palette);
        Self {
            config: palette.config,
            entries: palette.entries,
            deltas: s.deltas.clone(),
            energy: s.energy,
            fidelity: s.fidelity,
            propagation: s.propagation,
        }
    }
}

pub fn solution_to_json(solution: &EditSolution) -> String {
    serde_json::to_string_pretty(&SolutionDocument::from(solution)).expect("solution serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(dir: &Path, name: &str, img: DynamicImage) -> std::path::PathBuf {
        let path = dir.join(name);
        img.save_with_format(&path, ImageFormat::Png).unwrap();
        path
    }

    #[test]
    fn loads_single_red_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbImage::from_raw(1, 1, vec![255, 0, 0]).unwrap();
        let path = write_png(dir.path(), "red.png", DynamicImage::ImageRgb8(img));
        assert_eq!(load_image(path).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn loads_black_and_drops_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::RgbaImage::from_raw(2, 2, [0, 0, 0, 17].repeat(4)).unwrap();
        let path = write_png(dir.path(), "black.png", DynamicImage::ImageRgba8(img));
        let loaded = load_image(path).unwrap();
        assert_eq!((loaded.width(), loaded.height()), (2, 2));
        assert!(loaded.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loads_sixteen_bit() {
        let dir = tempfile::tempdir().unwrap();
        let img = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(1, 1, vec![65535u16, 0, 32768])
            .unwrap();
        let path = write_png(dir.path(), "deep.png", DynamicImage::ImageRgb16(img));
        let loaded = load_image(path).unwrap();
        assert_eq!(loaded.data(), &[1.0, 0.0, 32768.0 / 65535.0]);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
        let bogus = dir.path().join("bogus.png");
        fs::write(&bogus, b"definitely not an image").unwrap();
        assert!(matches!(load_image(&bogus), Err(Error::UnsupportedFormat(_))));
        let gif = dir.path().join("img.gif");
        fs::write(&gif, b"GIF89a\x01\x00\x01\x00\x00\x00\x00;").unwrap();
        assert!(matches!(load_image(&gif), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(ImageRgb::new(0, 3, vec![]), Err(Error::EmptyImage)));
    }

    #[test]
    fn byte_rounding() {
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(0.0), 0);
    }

    #[test]
    fn save_load_matches_direct_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageRgb::from_fn(7, 5, |x, y| {
            let t = (x * 5 + y) as f64 / 34.0;
            [t, 1.0 - t, (t * 7.3).fract()]
        });
        let path = dir.path().join("rt.png");
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        for (b, c) in back.data().iter().zip(img.data()) {
            let q = (255.0 * c).round() / 255.0;
            assert_eq!(*b, q);
        }
        assert_eq!(back, img.quantize8());
    }

    #[test]
    fn tensor_from_header_and_payload() {
        let mut bytes = TENSOR_MAGIC.to_vec();
        for v in [2u32, 1, 3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in [0.5f32, -1.0, 2.0, 3.25, 0.0, 1e-3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let t = RawFeatureTensor::from_bytes(&bytes).unwrap();
        assert_eq!((t.width, t.height, t.dim), (2, 1, 3));
        assert_eq!(t.pixel(1), &[3.25, 0.0, 1e-3]);
        assert_eq!(t.to_bytes(), bytes);

        assert!(matches!(
            RawFeatureTensor::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::TensorTruncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(RawFeatureTensor::from_bytes(&bad), Err(Error::TensorMagic)));
        let mut nan = bytes.clone();
        nan[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(RawFeatureTensor::from_bytes(&nan), Err(Error::NonFinite(0))));
    }

    #[test]
    fn strokes_parse_and_resolve() {
        let one = r#"{"image_width": 4, "image_height": 3,
            "strokes": [{"pixels": [[0,0],[1,0]], "target": [1,0,0]}]}"#;
        assert_eq!(StrokeSet::from_json(one).unwrap().resolve().len(), 2);

        let two = r#"{"image_width": 4, "image_height": 3, "strokes": [
            {"pixels": [[2,1],[0,0]], "target": [1,0,0]},
            {"pixels": [[0,0]], "target": [0,0,1]}]}"#;
        let h = StrokeSet::from_json(two).unwrap().resolve();
        assert_eq!(h.len(), 2);
        assert_eq!((h[0].x, h[0].y, h[0].target), (0, 0, [0.0, 0.0, 1.0]));
        assert_eq!((h[1].x, h[1].y), (2, 1));

        let neg = r#"{"image_width": 4, "image_height": 3,
            "strokes": [{"pixels": [[-1,0]], "target": [1,0,0]}]}"#;
        assert!(matches!(StrokeSet::from_json(neg), Err(Error::OutOfBounds { x: -1, .. })));
        let far = r#"{"image_width": 4, "image_height": 3,
            "strokes": [{"pixels": [[4,0]], "target": [1,0,0]}]}"#;
        assert!(matches!(StrokeSet::from_json(far), Err(Error::OutOfBounds { .. })));
        let empty = r#"{"image_width": 4, "image_height": 3,
            "strokes": [{"pixels": [], "target": [1,0,0]}]}"#;
        assert!(matches!(StrokeSet::from_json(empty), Err(Error::Strokes(_))));
        let hot = r#"{"image_width": 4, "image_height": 3,
            "strokes": [{"pixels": [[0,0]], "target": [1.5,0,0]}]}"#;
        assert!(matches!(StrokeSet::from_json(hot), Err(Error::Strokes(_))));
    }

    #[test]
    fn palette_document_round_trip() {
        let palette = SemanticPalette::new(
            vec![
                FeaturePoint::new([0.1, 0.2, 0.3], [0.0, 1.0, 0.5]),
                FeaturePoint::new([1.0 / 3.0, 0.7, 0.9], [0.25, 0.0, 0.1]),
            ],
            PaletteConfig::default(),
        )
        .unwrap();
        let back = palette_from_json(&palette_to_json(&palette)).unwrap();
        assert_eq!(back, palette);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tensor_round_trip_is_bit_exact(
                w in 1usize..5, h in 1usize..5, dim in 1usize..6,
                seed in proptest::collection::vec(-1e6f32..1e6, 100)
            ) {
                let data: Vec<f32> = (0..w * h * dim).map(|i| seed[i % seed.len()] * (i as f32 + 1.0).sqrt()).collect();
                let t = RawFeatureTensor::new(w, h, dim, data).unwrap();
                let back = RawFeatureTensor::from_bytes(&t.to_bytes()).unwrap();
                prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                                t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }

            #[test]
            fn png_round_trip_equals_quantize(vals in proptest::collection::vec(0.0f64..=1.0, 12)) {
                let img = ImageRgb::new(2, 2, vals).unwrap();
                let back = decode_png(&encode_png(&img)).unwrap();
                prop_assert_eq!(back, img.quantize8());
            }
        }
    }
}
