//! Reproducible LR/HR patch-pair generation with a JSON manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{degrade, DegradationMode, DegradationSpec, SpecSampler};
use crate::error::{param_err, Error, Result};
use crate::image::Image;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub spec: DegradationSpec,
    /// Paths relative to the manifest's directory.
    pub hr_file: String,
    pub lr_file: String,
    pub noise_seed: u64,
}

impl ManifestEntry {
    pub fn load_hr(&self, dir: &Path) -> Result<Image> {
        Image::from_tensor(&Tensor::load(dir.join(&self.hr_file))?)
    }

    pub fn load_lr(&self, dir: &Path) -> Result<Image> {
        Image::from_tensor(&Tensor::load(dir.join(&self.lr_file))?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenOptions {
    pub count: usize,
    pub mode: DegradationMode,
    pub sigma_set: Option<Vec<f64>>,
    pub seed: u64,
    pub scale: usize,
    /// LR patch side; the HR crop is `lr_patch * scale`.
    pub lr_patch: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            count: 16,
            mode: DegradationMode::Isotropic,
            sigma_set: None,
            seed: 0,
            scale: 2,
            lr_patch: 32,
        }
    }
}

/// Sorted list of `.ppm` / `.pgm` / `.pnm` files in `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("ppm" | "pgm" | "pnm")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads every PPM/PGM image in `hr_dir` and generates `count` pairs into
/// `out_dir`.
pub fn gen_dataset(hr_dir: &Path, opts: &GenOptions, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let files = list_images(hr_dir)?;
    if files.is_empty() && opts.count > 0 {
        return Err(Error::io(
            hr_dir,
            io::Error::new(io::ErrorKind::NotFound, "no PPM/PGM images found"),
        ));
    }
    let images = files
        .iter()
        .map(|p| Image::read_pnm(p).map(|img| img.to_rgb()))
        .collect::<Result<Vec<_>>>()?;
    gen_dataset_from_images(&images, opts, out_dir)
}

pub fn gen_dataset_from_images(
    images: &[Image],
    opts: &GenOptions,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    if opts.count > 0 && images.is_empty() {
        return Err(param_err!("no source images"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let sampler = SpecSampler {
        mode: opts.mode,
        sigma_set: opts.sigma_set.clone(),
        scale: opts.scale,
    };
    let mut entries = Vec::with_capacity(opts.count);
    for id in 0..opts.count {
        let mut rng = rng::stream(opts.seed, &[id as u64]);
        let img = &images[rng.random_range(0..images.len())];
        let hr = random_crop(img, opts.lr_patch * opts.scale, opts.scale, &mut rng)?;
        let spec = sampler.sample(&mut rng);
        let noise_seed: u64 = rng.random();
        let lr = degrade(&hr, &spec, noise_seed)?;

        let hr_file = format!("hr_{id:05}.rdt");
        let lr_file = format!("lr_{id:05}.rdt");
        hr.to_tensor().save(out_dir.join(&hr_file))?;
        lr.to_tensor().save(out_dir.join(&lr_file))?;
        entries.push(ManifestEntry {
            id,
            spec,
            hr_file,
            lr_file,
            noise_seed,
        });
    }
    write_manifest(&out_dir.join("manifest.json"), &entries)?;
    Ok(entries)
}

/// Square crop of side `side`, shrunk to the largest multiple of `scale` that
/// fits when the image is smaller.
fn random_crop<R: Rng + ?Sized>(img: &Image, side: usize, scale: usize, rng: &mut R) -> Result<Image> {
    let fit = |n: usize| (n.min(side) / scale) * scale;
    let (ch, cw) = (fit(img.height), fit(img.width));
    if ch == 0 || cw == 0 {
        return Err(param_err!(
            "{}x{} image is smaller than the scale factor {scale}",
            img.height,
            img.width
        ));
    }
    let top = rng.random_range(0..=img.height - ch);
    let left = rng.random_range(0..=img.width - cw);
    img.crop(top, left, ch, cw)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let json = serde_json::to_string_pretty(entries)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Accepts the manifest file itself or the directory holding `manifest.json`.
pub fn read_manifest(path: &Path) -> Result<(PathBuf, Vec<ManifestEntry>)> {
    let file = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
    let entries = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", file.display())))?;
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((dir, entries))
}
