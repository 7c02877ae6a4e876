//! PNG, annotation and output-directory IO.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Rgba};
use serde::Serialize;

use crate::colorspace::LinearImage;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::naming::{srgb_decode, srgb_encode, ColorComposition, ColorTerm, PROTOTYPES_8BIT, TERM_COUNT};
use crate::scenes::SyntheticScene;
use crate::solver::{trace_csv, Decomposition, TraceRow};

/// Pixel transfer function of a PNG file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Transfer {
    Srgb,
    Linear,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn image_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Decodes a PNG from memory to linear RGB. Pixels with zero alpha are
/// outside the mask.
pub fn decode_image(bytes: &[u8], transfer: Transfer) -> Result<LinearImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::InvalidImage(e.to_string()))?;
    from_dynamic(img, transfer)
}

fn from_dynamic(img: DynamicImage, transfer: Transfer) -> Result<LinearImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let rgba = img.to_rgba16();
    let mut pixels = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for p in rgba.pixels() {
        let mut c = [0.0; 3];
        for d in 0..3 {
            let v = p.0[d] as f64 / 65535.0;
            c[d] = match transfer {
                Transfer::Srgb => srgb_decode(v),
                Transfer::Linear => v,
            };
        }
        pixels.push(c);
        mask.push(p.0[3] > 0);
    }
    LinearImage::new(w, h, pixels, mask)
}

/// Width and height from the image header, without decoding pixels.
pub fn image_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let reader = image::ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| Error::InvalidImage(e.to_string()))?;
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| Error::InvalidImage(e.to_string()))?;
    Ok((w as usize, h as usize))
}

/// Loads an 8- or 16-bit PNG as linear RGB.
pub fn load_image(path: &Path, transfer: Transfer) -> Result<LinearImage> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory(&bytes).map_err(image_err(path))?;
    from_dynamic(img, transfer)
}

/// Loads a mask PNG: any nonzero channel marks a foreground pixel.
pub fn load_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let img = image::load_from_memory(&bytes).map_err(image_err(path))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mask = img.to_rgba16().pixels().map(|p| p.0[..3].iter().any(|&c| c > 0)).collect();
    Ok((w, h, mask))
}

fn quantize(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

/// Encodes as 16-bit RGBA PNG; pixels outside the mask get zero alpha.
/// Values are clamped to [0, 1] after the transfer function.
pub fn encode_image(img: &LinearImage, transfer: Transfer) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Rgba<u16>, Vec<u16>> = ImageBuffer::from_fn(
        img.width() as u32,
        img.height() as u32,
        |x, y| {
            let i = y as usize * img.width() + x as usize;
            let p = img.pixels()[i];
            let enc = |v: f64| match transfer {
                Transfer::Srgb => quantize(srgb_encode(v.clamp(0.0, 1.0))),
                Transfer::Linear => quantize(v),
            };
            let a = if img.mask()[i] { u16::MAX } else { 0 };
            Rgba([enc(p[0]), enc(p[1]), enc(p[2]), a])
        },
    );
    let mut out = std::io::Cursor::new(Vec::new());
    DynamicImage::ImageRgba16(buf)
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| Error::InvalidImage(e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_image(path: &Path, img: &LinearImage, transfer: Transfer) -> Result<()> {
    let bytes = encode_image(img, transfer)?;
    fs::write(path, bytes).map_err(io_err(path))
}

/// Reads and validates an annotation JSON file.
pub fn load_annotation(path: &Path) -> Result<ColorComposition> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    ColorComposition::from_json_str(&text)
}

/// One case of the MIT intrinsic images layout:
/// `{dir}/{name}/{diffuse,reflectance,shading,mask}.png`.
#[derive(Debug, Clone)]
pub struct MitCase {
    pub name: String,
    pub image: LinearImage,
    pub reflectance: LinearImage,
    pub shading: LinearImage,
    pub mask: Vec<bool>,
}

pub fn load_mit_case(dir: &Path, name: &str, transfer: Transfer) -> Result<MitCase> {
    let base = dir.join(name);
    let (w, h, mask) = load_mask(&base.join("mask.png"))?;
    let load = |f: &str| -> Result<LinearImage> {
        let img = load_image(&base.join(f), transfer)?;
        if img.width() != w || img.height() != h {
            return Err(Error::InvalidImage(format!("{name}/{f} does not match mask size")));
        }
        img.with_mask(mask.clone())
    };
    Ok(MitCase {
        name: name.to_string(),
        image: load("diffuse.png")?,
        reflectance: load("reflectance.png")?,
        shading: load("shading.png")?,
        mask,
    })
}

/// Case names under a MIT-layout directory (subdirectories holding a
/// `diffuse.png`), sorted.
pub fn list_mit_cases(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if entry.path().join("diffuse.png").is_file() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort();
    Ok(out)
}

/// Artifact file names inside an output directory.
pub const ARTIFACTS: [&str; 7] = [
    "reflectance.png",
    "shading.png",
    "shading_gray.png",
    "names.png",
    "illuminant.json",
    "trace.csv",
    "report.json",
];

/// Palette-indexed PNG of per-pixel color terms; index 11 (transparent)
/// marks pixels outside the mask.
pub fn encode_names(width: usize, height: usize, names: &[Option<ColorTerm>]) -> Result<Vec<u8>> {
    let mut palette = Vec::with_capacity(3 * (TERM_COUNT + 1));
    for p in PROTOTYPES_8BIT {
        palette.extend_from_slice(&p);
    }
    palette.extend_from_slice(&[0, 0, 0]);
    let mut trns = vec![255u8; TERM_COUNT];
    trns.push(0);
    let data: Vec<u8> = names
        .iter()
        .map(|n| n.map(|t| t.index() as u8).unwrap_or(TERM_COUNT as u8))
        .collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), width as u32, height as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette);
        enc.set_trns(trns);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::InvalidImage(e.to_string()))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::InvalidImage(e.to_string()))?;
    }
    Ok(out)
}

/// Scales masked pixels so the largest channel is at most 1, returning the
/// divisor used (1 when no scaling was needed).
pub fn normalize_for_png(img: &LinearImage) -> Result<(LinearImage, f64)> {
    let max = img
        .pixels()
        .iter()
        .zip(img.mask())
        .filter(|(_, m)| **m)
        .flat_map(|(p, _)| p.iter().copied())
        .fold(0.0f64, f64::max);
    if max <= 1.0 {
        return Ok((img.clone(), 1.0));
    }
    let pixels: Vec<Vec3> = img.pixels().iter().map(|p| p.map(|c| c / max)).collect();
    Ok((LinearImage::new(img.width(), img.height(), pixels, img.mask().to_vec())?, max))
}

#[derive(Debug, Clone, Serialize)]
struct IlluminantFile {
    rgb: Vec3,
    uvb: Vec3,
    intensity: f64,
    brightening_direction: Vec3,
    reflectance_scale: f64,
    shading_scale: f64,
}

/// Encoded artifacts of a decomposition, keyed like [`ARTIFACTS`].
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub reflectance_png: Vec<u8>,
    pub shading_png: Vec<u8>,
    pub shading_gray_png: Vec<u8>,
    pub names_png: Vec<u8>,
    pub illuminant_json: String,
    pub trace_csv: String,
    pub report_json: String,
}

impl Artifacts {
    /// Linear 16-bit PNGs; rasters brighter than 1 are divided by their
    /// maximum and the divisor is recorded in `illuminant.json`.
    pub fn build(dec: &Decomposition, trace: &[TraceRow], report: &serde_json::Value) -> Result<Self> {
        let (refl, rscale) = normalize_for_png(&dec.reflectance)?;
        let (shade, sscale) = normalize_for_png(&dec.shading)?;
        let gray: Vec<Vec3> = shade.gray().iter().map(|g| [*g; 3]).collect();
        let gray = LinearImage::new(shade.width(), shade.height(), gray, shade.mask().to_vec())?;
        let ill = IlluminantFile {
            rgb: dec.illuminant.rgb,
            uvb: dec.illuminant.uvb,
            intensity: dec.illuminant.intensity(),
            brightening_direction: dec.basis.n,
            reflectance_scale: rscale,
            shading_scale: sscale,
        };
        Ok(Self {
            reflectance_png: encode_image(&refl, Transfer::Linear)?,
            shading_png: encode_image(&shade, Transfer::Linear)?,
            shading_gray_png: encode_image(&gray, Transfer::Linear)?,
            names_png: encode_names(dec.reflectance.width(), dec.reflectance.height(), &dec.names)?,
            illuminant_json: serde_json::to_string_pretty(&ill)?,
            trace_csv: trace_csv(trace),
            report_json: serde_json::to_string_pretty(report)?,
        })
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        Some(match name {
            "reflectance.png" => &self.reflectance_png,
            "shading.png" => &self.shading_png,
            "shading_gray.png" => &self.shading_gray_png,
            "names.png" => &self.names_png,
            "illuminant.json" => self.illuminant_json.as_bytes(),
            "trace.csv" => self.trace_csv.as_bytes(),
            "report.json" => self.report_json.as_bytes(),
            _ => return None,
        })
    }

    /// Writes every artifact into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut written = Vec::new();
        for name in ARTIFACTS {
            let path = dir.join(name);
            fs::write(&path, self.get(name).expect("known artifact")).map_err(io_err(&path))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Builds and writes all artifacts of a decomposition.
pub fn save_outputs(
    dir: &Path,
    dec: &Decomposition,
    trace: &[TraceRow],
    report: &serde_json::Value,
) -> Result<Vec<PathBuf>> {
    Artifacts::build(dec, trace, report)?.write(dir)
}

#[derive(Debug, Clone, Serialize)]
struct SceneTruth {
    seed: u64,
    illuminant: IlluminantTruth,
    patch_terms: Vec<ColorTerm>,
    ambient: f64,
    shadow_fraction: f64,
    direction: Vec3,
    /// `diffuse.png` holds the image divided by this value.
    image_scale: f64,
}

#[derive(Debug, Clone, Serialize)]
struct IlluminantTruth {
    rgb: Vec3,
    uvb: Vec3,
    grid_index: usize,
}

/// Writes a scene in the MIT layout (`diffuse.png`, `reflectance.png`,
/// `shading.png`, `mask.png`, all linear 16-bit) plus `annotation.json`
/// with the true composition and `truth.json` with the scene parameters.
pub fn save_scene(dir: &Path, scene: &SyntheticScene) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (image, scale) = normalize_for_png(&scene.image)?;
    let mask_pixels: Vec<Vec3> = scene.image.mask().iter().map(|&m| [if m { 1.0 } else { 0.0 }; 3]).collect();
    let mask = LinearImage::unmasked(scene.image.width(), scene.image.height(), mask_pixels)?;
    let mut written = Vec::new();
    for (name, img) in [
        ("diffuse.png", &image),
        ("reflectance.png", &scene.gt_reflectance),
        ("shading.png", &scene.gt_shading),
        ("mask.png", &mask),
    ] {
        let path = dir.join(name);
        save_image(&path, img, Transfer::Linear)?;
        written.push(path);
    }
    let truth = SceneTruth {
        seed: scene.seed,
        illuminant: IlluminantTruth {
            rgb: scene.gt_illuminant.rgb,
            uvb: scene.gt_illuminant.uvb,
            grid_index: scene.gt_illuminant_index,
        },
        patch_terms: scene.patch_terms.clone(),
        ambient: scene.ambient,
        shadow_fraction: scene.shadow_fraction(),
        direction: scene.direction,
        image_scale: scale,
    };
    for (name, text) in [
        ("annotation.json", serde_json::to_string_pretty(&scene.gt_composition)?),
        ("truth.json", serde_json::to_string_pretty(&truth)?),
    ] {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}
