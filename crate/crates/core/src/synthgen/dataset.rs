//! On-disk dataset layout, generation and consistency verification.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{contrast, gen_sample, FmoSample, GenConfig, Split, TextureParams};
use crate::error::{Error, Result};
use crate::formation::{compose_from_matting, render_matting, MattingPair, ObjectModel};
use crate::imgcore::io::{read_fmoa, read_png, write_fmoa, write_png, BitDepth, FmoArray};
use crate::imgcore::RasterImage;
use crate::trajectory::{rasterize_kernel, tdf, Curve, TdfRaster};

pub const SAMPLE_FILES: [&str; 9] = [
    "frame.png",
    "bg.png",
    "tdf.fmoa",
    "hf.fmoa",
    "hm.fmoa",
    "f.fmoa",
    "m.fmoa",
    "curve.json",
    "meta.json",
];

/// Half a 16-bit quantization step.
const HALF_LSB: f64 = 0.5 / 65535.0;
/// Tolerance for arrays stored as `f32`.
const STORED_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub r: f64,
    pub b: bool,
    pub seed: u64,
    pub sigma: f64,
    pub split: Split,
    pub index: usize,
    /// TDF polyline sample count, needed to reproduce `tdf.fmoa`.
    pub tdf_samples: usize,
    pub contrast: f64,
    pub texture: Option<TextureParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub index: usize,
    /// Sample directory relative to the dataset root.
    pub dir: String,
    pub files: Vec<String>,
    pub r: f64,
    pub b: bool,
    pub seed: u64,
    pub sigma: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Manifest> {
        read_json(&root.as_ref().join("manifest.json"))
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn sample_dir(split: Split, index: usize) -> String {
    format!("{}/{index:05}", split.name())
}

pub(crate) fn tdf_samples(curve: &Curve) -> usize {
    ((2.0 * curve.arc_length()).ceil() as usize).max(64)
}

/// Writes one sample into `dir` (created if missing).
pub fn write_sample(dir: &Path, sample: &FmoSample, split: Split, index: usize) -> Result<SampleMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_png(dir.join("frame.png"), &sample.frame, BitDepth::Sixteen)?;
    write_png(dir.join("bg.png"), &sample.background, BitDepth::Sixteen)?;
    write_fmoa(dir.join("tdf.fmoa"), &FmoArray::from_plane(&sample.tdf.plane))?;
    write_fmoa(dir.join("hf.fmoa"), &FmoArray::from_image(&sample.matting.hf))?;
    write_fmoa(dir.join("hm.fmoa"), &FmoArray::from_image(&sample.matting.hm))?;
    write_fmoa(dir.join("f.fmoa"), &FmoArray::from_image(&sample.object.f))?;
    write_fmoa(dir.join("m.fmoa"), &FmoArray::from_image(&sample.object.m))?;
    write_json(&dir.join("curve.json"), &sample.curve)?;
    let meta = SampleMeta {
        r: sample.radius,
        b: sample.present,
        seed: sample.seed,
        sigma: sample.sigma,
        split,
        index,
        tdf_samples: tdf_samples(&sample.curve),
        contrast: contrast(
            &compose_from_matting(&sample.matting, &sample.background)?,
            &sample.background,
            &sample.matting.hm,
        ),
        texture: sample.texture,
    };
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(meta)
}

/// Loads a sample written by [`write_sample`].
pub fn read_sample(dir: &Path) -> Result<(FmoSample, SampleMeta)> {
    let meta: SampleMeta = read_json(&dir.join("meta.json"))?;
    let curve: Curve = read_json(&dir.join("curve.json"))?;
    let image = |name: &str| read_fmoa(dir.join(name))?.to_image();
    let object = ObjectModel::new(image("f.fmoa")?, image("m.fmoa")?, meta.r)?;
    let sample = FmoSample {
        frame: read_png(dir.join("frame.png"))?,
        background: read_png(dir.join("bg.png"))?,
        tdf: TdfRaster {
            plane: read_fmoa(dir.join("tdf.fmoa"))?.to_plane()?,
            radius: meta.r,
        },
        curve,
        matting: MattingPair {
            hf: image("hf.fmoa")?,
            hm: image("hm.fmoa")?,
        },
        object,
        present: meta.b,
        radius: meta.r,
        seed: meta.seed,
        sigma: meta.sigma,
        texture: meta.texture,
    };
    Ok((sample, meta))
}

/// Generates the train and validation splits under `root` in parallel.
/// The output is a pure function of `cfg`.
pub fn gen_dataset(cfg: &GenConfig, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let jobs: Vec<(Split, usize)> = (0..cfg.train_count)
        .map(|i| (Split::Train, i))
        .chain((0..cfg.val_count).map(|i| (Split::Val, i)))
        .collect();
    let samples = jobs
        .par_iter()
        .map(|&(split, index)| {
            let sample = gen_sample(cfg, split, index)?;
            let dir = sample_dir(split, index);
            let meta = write_sample(&root.join(&dir), &sample, split, index)?;
            Ok(ManifestEntry {
                split,
                index,
                files: SAMPLE_FILES.iter().map(|f| format!("{dir}/{f}")).collect(),
                dir,
                r: meta.r,
                b: meta.b,
                seed: meta.seed,
                sigma: meta.sigma,
                contrast: meta.contrast,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        config: cfg.clone(),
        samples,
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checked: usize,
    pub failures: Vec<SampleFailure>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(1) as f64;
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n).sqrt()
}

fn check_close(what: &str, got: &RasterImage, want: &RasterImage, tol: f64) -> std::result::Result<(), String> {
    if !got.same_shape(want) {
        return Err(format!("{what} has the wrong shape"));
    }
    let d = max_abs_diff(got.data(), want.data());
    if d > tol {
        return Err(format!("{what} deviates by {d:.3e} (tolerance {tol:.1e})"));
    }
    Ok(())
}

/// Re-derives every stored ground-truth array of one sample.
fn verify_sample(dir: &Path, cfg: &GenConfig) -> std::result::Result<(), String> {
    let (s, meta) = read_sample(dir).map_err(|e| e.to_string())?;
    let domain = cfg.domain();
    if s.frame.domain() != domain || s.background.domain() != domain {
        return Err("frame size differs from the manifest".into());
    }
    if s.present {
        let h = rasterize_kernel(&s.curve, domain, None).map_err(|e| e.to_string())?;
        let matting = render_matting(&s.object, &h).map_err(|e| e.to_string())?;
        check_close("hf", &s.matting.hf, &matting.hf, STORED_TOL)?;
        check_close("hm", &s.matting.hm, &matting.hm, STORED_TOL)?;
        let want = tdf(&s.curve, s.radius, domain, Some(meta.tdf_samples)).map_err(|e| e.to_string())?;
        check_close("tdf", &s.tdf.plane.to_image(), &want.plane.to_image(), STORED_TOL)?;
        let clean = compose_from_matting(&s.matting, &s.background).map_err(|e| e.to_string())?;
        let k = contrast(&clean, &s.background, &s.matting.hm);
        if k + STORED_TOL < cfg.contrast_floor {
            return Err(format!("contrast {k:.4} below floor {}", cfg.contrast_floor));
        }
    } else {
        let empty = |img: &RasterImage| img.data().iter().all(|v| *v == 0.0);
        if !empty(&s.matting.hf) || !empty(&s.matting.hm) || !s.tdf.plane.data().iter().all(|v| *v == 0.0) {
            return Err("negative sample carries ground truth".into());
        }
    }
    // I = Hf + (1 - Hm) B up to observation noise and 16-bit storage.
    let recon = compose_from_matting(&s.matting, &s.background).map_err(|e| e.to_string())?;
    let rms = rms_diff(s.frame.data(), recon.data());
    let rms_tol = 1.2 * s.sigma + HALF_LSB + STORED_TOL;
    if rms > rms_tol {
        return Err(format!("frame differs from the composed ground truth: rms {rms:.3e} > {rms_tol:.3e}"));
    }
    if s.sigma == 0.0 {
        check_close("frame", &s.frame, &recon, HALF_LSB + STORED_TOL)?;
    }
    Ok(())
}

/// Checks every sample listed in `<root>/manifest.json`.
pub fn verify_dataset(root: &Path) -> Result<VerifyReport> {
    let manifest = Manifest::load(root)?;
    let mut failures: Vec<SampleFailure> = manifest
        .samples
        .par_iter()
        .filter_map(|e| {
            let missing = e.files.iter().find(|f| !root.join(f).is_file());
            let result = match missing {
                Some(f) => Err(format!("missing file {f}")),
                None => verify_sample(&root.join(&e.dir), &manifest.config),
            };
            result.err().map(|reason| SampleFailure {
                sample: e.dir.clone(),
                reason,
            })
        })
        .collect();
    failures.sort_by(|a, b| a.sample.cmp(&b.sample));
    Ok(VerifyReport {
        checked: manifest.samples.len(),
        failures,
    })
}

/// Sample directories of a dataset, in manifest order.
pub fn sample_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    Ok(Manifest::load(root)?.samples.iter().map(|e| root.join(&e.dir)).collect())
}
