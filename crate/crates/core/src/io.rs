//! Image files, color conversion, run configuration files and the
//! synthetic two-modality dataset.

use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::imageops::FilterType;
use image::{DynamicImage, ImageEncoder};
pub use image::{GrayImage as Luma8, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{apply, parse_pairs, render, Section};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::ModelConfig;
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;

/// Decoded 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Image8 {
    Gray(Luma8),
    Rgb(RgbImage),
}

impl Image8 {
    pub fn dimensions(&self) -> (u32, u32) {
        match self {
            Image8::Gray(g) => g.dimensions(),
            Image8::Rgb(c) => c.dimensions(),
        }
    }

    /// Luminance plane: the image itself for gray, Y of YCbCr for color.
    pub fn luma(&self) -> Luma8 {
        match self {
            Image8::Gray(g) => g.clone(),
            Image8::Rgb(c) => split_ycbcr(c).0,
        }
    }

    pub fn resized(&self, width: u32, height: u32) -> Image8 {
        if self.dimensions() == (width, height) {
            return self.clone();
        }
        match self {
            Image8::Gray(g) => Image8::Gray(image::imageops::resize(
                g,
                width,
                height,
                FilterType::Triangle,
            )),
            Image8::Rgb(c) => Image8::Rgb(image::imageops::resize(
                c,
                width,
                height,
                FilterType::Triangle,
            )),
        }
    }
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Reads a PGM or PNG file. Color inputs are reduced to 8-bit RGB.
pub fn read_image(path: &Path) -> Result<Image8> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?;
    Ok(match img {
        DynamicImage::ImageLuma8(g) => Image8::Gray(g),
        DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => Image8::Gray(img.to_luma8()),
        other => Image8::Rgb(other.to_rgb8()),
    })
}

/// Writes by extension: `.pgm` as binary P5 (gray only), `.png` as gray or RGB.
pub fn write_image(path: &Path, img: &Image8) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let mut bytes = Vec::new();
    match (ext.as_str(), img) {
        ("pgm", Image8::Gray(g)) => {
            PnmEncoder::new(&mut bytes)
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
                .write_image(
                    g.as_raw(),
                    g.width(),
                    g.height(),
                    image::ExtendedColorType::L8,
                )
                .map_err(|e| image_err(path, e))?;
        }
        ("pgm", Image8::Rgb(_)) => {
            return Err(Error::Invalid(format!(
                "{}: PGM output cannot hold a color image",
                path.display()
            )))
        }
        ("png", Image8::Gray(g)) => {
            image::codecs::png::PngEncoder::new(&mut bytes)
                .write_image(
                    g.as_raw(),
                    g.width(),
                    g.height(),
                    image::ExtendedColorType::L8,
                )
                .map_err(|e| image_err(path, e))?;
        }
        ("png", Image8::Rgb(c)) => {
            image::codecs::png::PngEncoder::new(&mut bytes)
                .write_image(
                    c.as_raw(),
                    c.width(),
                    c.height(),
                    image::ExtendedColorType::Rgb8,
                )
                .map_err(|e| image_err(path, e))?;
        }
        _ => {
            return Err(Error::Invalid(format!(
                "{}: unsupported output extension",
                path.display()
            )))
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Full-range BT.601 forward transform.
pub fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 128.0 - 0.1687358916 * r - 0.3312641084 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.4186875892 * g - 0.0813124108 * b;
    (y, cb, cr)
}

/// Full-range BT.601 inverse transform.
pub fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> (f64, f64, f64) {
    let (cb, cr) = (cb - 128.0, cr - 128.0);
    (
        y + 1.402 * cr,
        y - 0.3441362862 * cb - 0.7141362862 * cr,
        y + 1.772 * cb,
    )
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Splits a color image into its Y, Cb and Cr planes.
pub fn split_ycbcr(img: &RgbImage) -> (Luma8, Luma8, Luma8) {
    let (w, h) = img.dimensions();
    let mut planes = [Luma8::new(w, h), Luma8::new(w, h), Luma8::new(w, h)];
    for (x, y, p) in img.enumerate_pixels() {
        let (yy, cb, cr) = rgb_to_ycbcr(p[0] as f64, p[1] as f64, p[2] as f64);
        planes[0].put_pixel(x, y, image::Luma([to_u8(yy)]));
        planes[1].put_pixel(x, y, image::Luma([to_u8(cb)]));
        planes[2].put_pixel(x, y, image::Luma([to_u8(cr)]));
    }
    let [a, b, c] = planes;
    (a, b, c)
}

/// Recombines a luminance plane with chroma planes.
pub fn merge_ycbcr(y: &Luma8, cb: &Luma8, cr: &Luma8) -> RgbImage {
    RgbImage::from_fn(y.width(), y.height(), |x, yy| {
        let (r, g, b) = ycbcr_to_rgb(
            y.get_pixel(x, yy)[0] as f64,
            cb.get_pixel(x, yy)[0] as f64,
            cr.get_pixel(x, yy)[0] as f64,
        );
        image::Rgb([to_u8(r), to_u8(g), to_u8(b)])
    })
}

/// `[1,1,H,W]` tensor with values divided by 255.
pub fn luma_to_tensor(img: &Luma8) -> Tensor {
    let (w, h) = img.dimensions();
    Tensor::new(
        &[1, 1, h as usize, w as usize],
        img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
    )
    .expect("extent matches pixel count")
}

/// Clamps to `[0,1]` and quantizes to 8 bits. Expects `[1,1,H,W]`.
pub fn tensor_to_luma(t: &Tensor) -> Result<Luma8> {
    let (n, c, h, w) = t.dims4()?;
    if n != 1 || c != 1 {
        return Err(Error::dim(format!(
            "expected one plane, got shape {:?}",
            t.shape()
        )));
    }
    let raw = t
        .data()
        .iter()
        .map(|v| to_u8(v.clamp(0.0, 1.0) * 255.0))
        .collect();
    Ok(Luma8::from_raw(w as u32, h as u32, raw).expect("extent matches pixel count"))
}

/// Model, training and loss settings read from one `key = value` file.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
}

impl RunConfig {
    /// Applies `key = value` text on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        apply(
            &parse_pairs(text)?,
            &mut [&mut self.model, &mut self.train, &mut self.loss],
        )
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, item: &str) -> Result<()> {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
        apply(
            &[(k.trim().into(), v.trim().into())],
            &mut [&mut self.model, &mut self.train, &mut self.loss],
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        render(&[&self.model as &dyn Section, &self.train, &self.loss])
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()
    }
}

/// Names of regular files in `dir`, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "pgm")) {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Visible and infrared subdirectories of a dataset root.
pub fn dataset_dirs(root: &Path) -> (PathBuf, PathBuf) {
    (root.join("visible"), root.join("infrared"))
}

/// Loads filename-matched pairs from `root/visible` and `root/infrared`,
/// resized to `size × size`, as luminance tensors on `[0,1]`.
pub fn load_dataset(root: &Path, size: usize) -> Result<Vec<(String, Tensor, Tensor)>> {
    let (vdir, idir) = dataset_dirs(root);
    let vnames = list_images(&vdir)?;
    let inames = list_images(&idir)?;
    if vnames != inames {
        let missing: Vec<_> = vnames
            .iter()
            .filter(|n| !inames.contains(n))
            .chain(inames.iter().filter(|n| !vnames.contains(n)))
            .cloned()
            .collect();
        return Err(Error::Invalid(format!(
            "unmatched file names: {}",
            missing.join(", ")
        )));
    }
    let s = size as u32;
    vnames
        .into_iter()
        .map(|name| {
            let v = read_image(&vdir.join(&name))?.resized(s, s).luma();
            let i = read_image(&idir.join(&name))?.resized(s, s).luma();
            Ok((name, luma_to_tensor(&v), luma_to_tensor(&i)))
        })
        .collect()
}

/// A synthetic registered pair: a textured "visible" scene and a "thermal"
/// image of warm blobs over a smooth background, sharing some geometry.
pub fn synthetic_pair(size: usize, seed: u64) -> (Luma8, Luma8) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.2..0.8) * s,
                rng.gen_range(0.2..0.8) * s,
                rng.gen_range(0.06..0.15) * s,
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();
    let (fx, fy) = (rng.gen_range(0.15..0.45), rng.gen_range(0.15..0.45));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let edge = rng.gen_range(0.3..0.7) * s;
    let warm = |x: f64, y: f64| -> f64 {
        blobs
            .iter()
            .map(|&(cx, cy, r, a)| {
                a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp()
            })
            .sum()
    };
    let n = size as u32;
    let visible = Luma8::from_fn(n, n, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let texture = 0.18 * (fx * x + phase).sin() * (fy * y).cos();
        let region = if x + 0.5 * y > edge { 0.62 } else { 0.38 };
        let shade = 0.15 * warm(x, y);
        image::Luma([to_u8(255.0 * (region + texture + shade).clamp(0.0, 1.0))])
    });
    let infrared = Luma8::from_fn(n, n, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let background = 0.15 + 0.1 * (y / s);
        image::Luma([to_u8(
            255.0 * (background + 0.7 * warm(x, y)).clamp(0.0, 1.0),
        )])
    });
    (visible, infrared)
}

/// Writes `count` synthetic pairs as `root/{visible,infrared}/pair_KKK.pgm`.
pub fn write_synthetic_dataset(
    root: &Path,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<String>> {
    let (vdir, idir) = dataset_dirs(root);
    fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
    fs::create_dir_all(&idir).map_err(|e| Error::io(&idir, e))?;
    (0..count)
        .map(|k| {
            let name = format!("pair_{k:03}.pgm");
            let (v, i) = synthetic_pair(size, seed.wrapping_add(k as u64));
            write_image(&vdir.join(&name), &Image8::Gray(v))?;
            write_image(&idir.join(&name), &Image8::Gray(i))?;
            Ok(name)
        })
        .collect()
}
