//! Directory corpus ingestion and export.
//!
//! ```text
//! <root>/images/<id>.pgm   8-bit grayscale (color PNM is converted to gray)
//! <root>/masks/<id>.pgm    0 = background, 255 = foreground
//! <root>/manifest.txt      optional, one id per line
//! ```
//!
//! Without a manifest, ids are the image file stems sorted lexicographically.
//! Masks are optional per sample.

use std::fs;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::pool::Sample;
use crate::raster::{BinaryMask, ImageGrid, ProbMap};

fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).map_err(|e| {
        Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    })?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Ok((h as usize, w as usize, gray.into_raw()))
}

fn write_gray(path: &Path, height: usize, width: usize, data: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let enc = PnmEncoder::new(std::io::BufWriter::new(file))
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
    enc.write_image(data, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn list_ids(root: &Path) -> Result<Vec<String>> {
    let manifest = root.join("manifest.txt");
    if manifest.exists() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect());
    }
    let dir = root.join("images");
    let mut ids = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Reads one grayscale image, scaled to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<ImageGrid> {
    let (h, w, raw) = read_gray(path)?;
    ImageGrid::new(h, w, raw.iter().map(|&v| v as f64 / 255.0).collect())
}

/// Reads a probability map stored as an 8-bit grayscale image.
pub fn read_prob(path: &Path) -> Result<ProbMap> {
    let (h, w, raw) = read_gray(path)?;
    ProbMap::new(h, w, raw.iter().map(|&v| v as f64 / 255.0).collect())
}

/// Writes a mask as 0/255 grayscale.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    let raw: Vec<u8> = mask.values().iter().map(|&v| v * 255).collect();
    write_gray(path, mask.height(), mask.width(), &raw)
}

/// Writes a probability map as 8-bit grayscale.
pub fn write_prob(path: &Path, p: &ProbMap) -> Result<()> {
    let raw: Vec<u8> = p
        .values()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    write_gray(path, p.height(), p.width(), &raw)
}

/// Loads every sample under `root`.
pub fn load_dir(root: &Path) -> Result<Vec<Sample>> {
    let ids = list_ids(root)?;
    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let (h, w, raw) = read_gray(&root.join("images").join(format!("{id}.pgm")))?;
        let image = ImageGrid::new(h, w, raw.iter().map(|&v| v as f64 / 255.0).collect())?;
        let mask_path = root.join("masks").join(format!("{id}.pgm"));
        let ground_truth = if mask_path.exists() {
            let (mh, mw, raw) = read_gray(&mask_path)?;
            Some(BinaryMask::new(
                mh,
                mw,
                raw.iter().map(|&v| u8::from(v >= 128)).collect(),
            )?)
        } else {
            None
        };
        samples.push(Sample::new(id, image, ground_truth)?);
    }
    Ok(samples)
}

/// Writes samples in the layout read by [`load_dir`], including a manifest.
pub fn save_dir(samples: &[Sample], root: &Path) -> Result<()> {
    for sub in ["images", "masks"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut manifest = String::new();
    for s in samples {
        let (h, w) = s.image.dims();
        let raw: Vec<u8> = s
            .image
            .values()
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        write_gray(
            &root.join("images").join(format!("{}.pgm", s.id)),
            h,
            w,
            &raw,
        )?;
        if let Some(gt) = &s.ground_truth {
            write_mask(&root.join("masks").join(format!("{}.pgm", s.id)), gt)?;
        }
        manifest.push_str(&s.id);
        manifest.push('\n');
    }
    let path = root.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}
