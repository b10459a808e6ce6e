//! End-to-end classical pipeline over a frame sequence: causal median
//! background, detection, skeleton-based curve fit and optional deblurring.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deblur::{solve, DeblurConfig};
use crate::detect::{binarize_and_split, delta_response, skeleton_polyline, Detection, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::evalkit::overlay_trajectories;
use crate::fitcurve::{fit_polyline, FitResult};
use crate::formation::MattingPair;
use crate::geom::BBox;
use crate::imgcore::io::{read_png, write_png, BitDepth};
use crate::imgcore::{convolve_plane, median_background, BinaryMask, Boundary, Plane, RasterImage};
use crate::synthgen::to_rgb;
use crate::trajectory::{rasterize_kernel, Curve, CurveClass};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub epsilon: f64,
    /// Run the deblurring solver on every detection.
    pub deblur: bool,
    /// Keep the blur kernel fixed during deblurring.
    pub fix_h: bool,
    pub iterations: usize,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    /// Recorded in the report; the pipeline itself draws no random numbers.
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            epsilon: DEFAULT_EPSILON,
            deblur: false,
            fix_h: false,
            iterations: DeblurConfig::default().iterations,
            jobs: 0,
            seed: 0,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("line {line}: bad value '{value}' for '{key}'")))
}

impl PipelineConfig {
    /// Applies `key = value` lines (`#` starts a comment). Unknown keys are errors.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidArgument(format!("line {}: expected key = value", n + 1)));
            };
            let (key, value) = (key.trim(), value.trim().trim_matches('"'));
            match key {
                "epsilon" => self.epsilon = parse_value(key, value, n + 1)?,
                "deblur" => self.deblur = parse_value(key, value, n + 1)?,
                "fix_h" | "fix-h" => self.fix_h = parse_value(key, value, n + 1)?,
                "iters" | "iterations" => self.iterations = parse_value(key, value, n + 1)?,
                "jobs" => self.jobs = parse_value(key, value, n + 1)?,
                "seed" => self.seed = parse_value(key, value, n + 1)?,
                other => return Err(Error::InvalidArgument(format!("line {}: unknown key '{other}'", n + 1))),
            }
        }
        Ok(())
    }

    pub fn from_kv_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = PipelineConfig::default();
        cfg.apply_kv(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if self.deblur && self.iterations == 0 {
            return Err(Error::InvalidArgument("deblurring needs at least one iteration".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeblurSummary {
    pub appearance: String,
    pub mask: String,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub bbox: BBox,
    pub radius: f64,
    pub area: usize,
    pub curve: Option<Curve>,
    pub class: Option<CurveClass>,
    pub residual: Option<f64>,
    pub deblur: Option<DeblurSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub name: String,
    pub overlay: String,
    pub detections: Vec<DetectionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config: PipelineConfig,
    pub frame_count: usize,
    pub frames: Vec<FrameReport>,
}

/// Fits a curve to a detection's skeleton, in frame coordinates.
pub fn fit_detection(det: &Detection) -> Result<FitResult> {
    let path = skeleton_polyline(det)?;
    let points: Vec<_> = path.into_iter().map(|p| det.to_frame(p)).collect();
    fit_polyline(&points)
}

/// Matting estimate for deblurring: the fitted kernel applied to a disc of
/// the estimated radius gives `Hm`; `Hf` is whatever of the frame the
/// background does not explain, restricted to `[0, Hm]`.
pub fn crude_matting(frame: &RasterImage, background: &RasterImage, curve: &Curve, radius: f64) -> Result<MattingPair> {
    let h = rasterize_kernel(curve, frame.domain(), None)?;
    let a = radius.ceil().max(1.0) as usize;
    let s = 2 * a + 1;
    let disc = Plane::from_fn(s, s, |y, x| {
        let d = (y as f64 - a as f64).hypot(x as f64 - a as f64);
        (radius + 0.5 - d).clamp(0.0, 1.0)
    });
    let d = frame.domain();
    let hm = convolve_plane(h.plane().data(), d.height, d.width, disc.data(), s, s, Boundary::ZeroPad);
    let hm_data: Vec<f64> = hm.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let c = frame.channels();
    let mut hf = Vec::with_capacity(frame.data().len());
    for (i, m) in hm_data.iter().enumerate() {
        for ch in 0..c {
            let k = i * c + ch;
            hf.push((frame.data()[k] - (1.0 - m) * background.data()[k]).clamp(0.0, *m));
        }
    }
    Ok(MattingPair {
        hf: RasterImage::new(frame.height(), frame.width(), c, hf)?,
        hm: RasterImage::new(frame.height(), frame.width(), 1, hm_data)?,
    })
}

struct DeblurOutput {
    f: RasterImage,
    m: RasterImage,
    objective: f64,
    iterations: usize,
    converged: bool,
}

fn deblur_detection(
    frame: &RasterImage,
    background: &RasterImage,
    fit: &FitResult,
    radius: f64,
    cfg: &PipelineConfig,
) -> Result<DeblurOutput> {
    let pair = crude_matting(frame, background, &fit.curve, radius)?;
    let h = rasterize_kernel(&fit.curve, frame.domain(), None)?;
    let a = radius.ceil().max(1.0) as usize;
    let dcfg = DeblurConfig {
        iterations: cfg.iterations,
        optimize_h: !cfg.fix_h,
        patch_size: 2 * a + 1,
        ..DeblurConfig::default()
    };
    let rep = solve(&pair.hf, &pair.hm, &h, &dcfg)?;
    Ok(DeblurOutput {
        objective: *rep.objective_trace.last().expect("trace is never empty"),
        iterations: rep.iterations,
        converged: rep.converged,
        f: rep.f,
        m: rep.m,
    })
}

/// Result of one frame: the report (with relative file names) and the images
/// to be written next to it.
pub struct FrameOutput {
    pub report: FrameReport,
    pub overlay: RasterImage,
    pub deblurred: Vec<(String, RasterImage)>,
}

/// Runs detection, fitting and optional deblurring on frame `t >= 2`.
pub fn process_frame(frames: &[RasterImage], names: &[String], t: usize, cfg: &PipelineConfig) -> Result<FrameOutput> {
    if t < 2 || t >= frames.len() {
        return Err(Error::InvalidArgument(format!("frame {t} has no causal background")));
    }
    let frame = &frames[t];
    let background = median_background(&[&frames[t - 2], &frames[t - 1], frame])?;
    let response = delta_response(frame, &background)?;
    let detections = binarize_and_split(&response, cfg.epsilon)?;
    let name = &names[t];
    let mut reports = Vec::with_capacity(detections.len());
    let mut curves = Vec::new();
    let mut deblurred = Vec::new();
    for (k, det) in detections.iter().enumerate() {
        let mut rep = DetectionReport {
            bbox: det.bbox,
            radius: det.radius,
            area: det.area,
            curve: None,
            class: None,
            residual: None,
            deblur: None,
            error: None,
        };
        match fit_detection(det) {
            Ok(fit) => {
                rep.curve = Some(fit.curve);
                rep.class = fit.class;
                rep.residual = Some(fit.residual);
                curves.push(fit.curve);
                if cfg.deblur {
                    match deblur_detection(frame, &background, &fit, det.radius, cfg) {
                        Ok(out) => {
                            let appearance = format!("{name}_det{k}_f.png");
                            let mask = format!("{name}_det{k}_m.png");
                            deblurred.push((appearance.clone(), out.f));
                            deblurred.push((mask.clone(), out.m));
                            rep.deblur = Some(DeblurSummary {
                                appearance,
                                mask,
                                objective: out.objective,
                                iterations: out.iterations,
                                converged: out.converged,
                            });
                        }
                        Err(e) => rep.error = Some(format!("deblur: {e}")),
                    }
                }
            }
            Err(e) => rep.error = Some(format!("fit: {e}")),
        }
        reports.push(rep);
    }
    Ok(FrameOutput {
        report: FrameReport {
            index: t,
            name: name.clone(),
            overlay: format!("{name}_traj.png"),
            detections: reports,
        },
        overlay: overlay_trajectories(frame, &curves),
        deblurred,
    })
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Runs the pipeline on in-memory frames. Frames before the third only
/// seed the background and produce no entry.
pub fn run_on_frames(frames: &[RasterImage], names: &[String], cfg: &PipelineConfig) -> Result<Vec<FrameOutput>> {
    cfg.validate()?;
    if frames.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "the pipeline needs at least 3 frames, got {}",
            frames.len()
        )));
    }
    if names.len() != frames.len() {
        return Err(Error::DimensionMismatch(format!("{} names for {} frames", names.len(), frames.len())));
    }
    if let Some(i) = frames.iter().position(|f| !f.same_shape(&frames[0])) {
        return Err(Error::DimensionMismatch(format!("frame {i} differs in shape from frame 0")));
    }
    with_pool(cfg.jobs, || {
        (2..frames.len())
            .into_par_iter()
            .map(|t| process_frame(frames, names, t, cfg))
            .collect::<Result<Vec<_>>>()
    })?
}

/// PNG inputs: the given files, or the sorted PNGs of a single directory.
pub fn collect_frames(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if let [dir] = inputs {
        if dir.is_dir() {
            return crate::synthgen::list_pngs(dir);
        }
    }
    Ok(inputs.to_vec())
}

fn frame_name(path: &Path, index: usize) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("frame{index:05}"))
}

/// Reads the frames, runs the pipeline and writes `report.json`, overlays
/// `<frame>_traj.png` and any deblurred crops into `out`.
pub fn run_pipeline(inputs: &[PathBuf], cfg: &PipelineConfig, out: &Path) -> Result<PipelineReport> {
    let paths = collect_frames(inputs)?;
    let frames = paths
        .iter()
        .map(|p| read_png(p).and_then(to_rgb))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = paths.iter().enumerate().map(|(i, p)| frame_name(p, i)).collect();
    let mut unique = names.clone();
    unique.sort();
    unique.dedup();
    if unique.len() != names.len() {
        return Err(Error::InvalidArgument("frame file names must be unique".into()));
    }
    let outputs = run_on_frames(&frames, &names, cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut reports = Vec::with_capacity(outputs.len());
    for o in outputs {
        write_png(out.join(&o.report.overlay), &o.overlay, BitDepth::Eight)?;
        for (name, img) in &o.deblurred {
            write_png(out.join(name), img, BitDepth::Eight)?;
        }
        reports.push(o.report);
    }
    let report = PipelineReport {
        config: cfg.clone(),
        frame_count: frames.len(),
        frames: reports,
    };
    crate::synthgen::write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// Curves of every detection in `frame` against a known background. Detections
/// whose skeleton cannot be fitted are dropped.
pub fn detect_curves(frame: &RasterImage, background: &RasterImage, epsilon: f64) -> Result<Vec<Curve>> {
    let response = delta_response(frame, background)?;
    Ok(binarize_and_split(&response, epsilon)?
        .iter()
        .filter_map(|d| fit_detection(d).ok())
        .map(|f| f.curve)
        .collect())
}

/// File holding the predicted curves of one sample.
pub const PREDICTION_FILE: &str = "curves.json";

/// Runs the detector on every sample of a dataset using its stored
/// background and writes `<out>/<sample dir>/curves.json`.
pub fn detect_dataset(root: &Path, out: &Path, epsilon: f64, jobs: usize) -> Result<usize> {
    let manifest = crate::synthgen::Manifest::load(root)?;
    with_pool(jobs, || {
        manifest
            .samples
            .par_iter()
            .map(|e| {
                let dir = root.join(&e.dir);
                let frame = read_png(dir.join("frame.png")).and_then(to_rgb)?;
                let background = read_png(dir.join("bg.png")).and_then(to_rgb)?;
                let curves = detect_curves(&frame, &background, epsilon)?;
                let target = out.join(&e.dir);
                fs::create_dir_all(&target).map_err(|err| Error::io(&target, err))?;
                crate::synthgen::write_json(&target.join(PREDICTION_FILE), &curves)
            })
            .collect::<Result<Vec<()>>>()
    })??;
    Ok(manifest.samples.len())
}

/// GT region used for matching detections: pixels with `Hm > 0.01`.
pub fn gt_region(hm: &RasterImage) -> BinaryMask {
    hm.channel(0).threshold(GT_HM_LEVEL)
}

pub const GT_HM_LEVEL: f64 = 0.01;
