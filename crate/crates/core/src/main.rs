use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fmo_core::deblur::{solve, DeblurConfig};
use fmo_core::detect::{self, binarize_and_split, delta_response, response_from_tdf, DEFAULT_EPSILON};
use fmo_core::evalkit::evaluate_dataset;
use fmo_core::fitcurve::{fit_curve, DEFAULT_MIN_MASS};
use fmo_core::imgcore::io::{read_fmoa, read_png, write_fmoa, FmoArray};
use fmo_core::imgcore::{BlurKernel, RasterImage};
use fmo_core::losses::{detection_loss, matting_fitting_loss, LossWeights, MattingPrediction, MattingTargets};
use fmo_core::pipeline::{self, PipelineConfig};
use fmo_core::synthgen::{
    gen_dataset, gen_sequence, read_sample, verify_dataset, BackgroundSource, GenConfig, TextureFamily,
};
use fmo_core::trajectory::{rasterize_kernel, Curve};

#[derive(Parser)]
#[command(name = "fmo", version, about = "Fast-moving-object synthesis, detection, fitting, deblurring and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (or a frame sequence with --sequence).
    Synth(SynthArgs),
    /// Detect objects in a frame against a background, or over a whole dataset.
    Detect(DetectArgs),
    /// Fit a trajectory curve to a blur kernel stored as FMOA.
    Fit(FitArgs),
    /// Recover sharp appearance and mask from a blurred matting pair.
    Deblur(DeblurArgs),
    /// Evaluate training losses of predictions against a dataset sample.
    Loss(LossArgs),
    /// Score predicted curves against a dataset.
    Eval(EvalArgs),
    /// Run background subtraction, detection, fitting and optional deblurring on frames.
    Pipeline(PipelineArgs),
    /// Re-check the ground-truth consistency of a dataset.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training samples.
    #[arg(long, default_value_t = 5000)]
    count: usize,
    /// Validation samples.
    #[arg(long, default_value_t = 0)]
    val: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 5.0)]
    r_min: f64,
    #[arg(long, default_value_t = 100.0)]
    r_max: f64,
    /// Arc length range in multiples of the radius.
    #[arg(long, default_value_t = 2.0)]
    speed_min: f64,
    #[arg(long, default_value_t = 6.0)]
    speed_max: f64,
    #[arg(long, default_value_t = 0.1)]
    contrast: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    negatives: f64,
    /// Directory of PNG backgrounds; procedural backgrounds when omitted.
    #[arg(long)]
    backgrounds: Option<PathBuf>,
    /// Comma-separated texture families.
    #[arg(long, value_delimiter = ',', default_values_t = TextureFamily::ALL.map(family_name))]
    textures: Vec<String>,
    /// Write a sequence of this many frames instead of a dataset.
    #[arg(long)]
    sequence: Option<usize>,
}

fn family_name(f: TextureFamily) -> String {
    serde_json::to_value(f).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long, conflicts_with = "dataset", requires = "background")]
    frame: Option<PathBuf>,
    #[arg(long)]
    background: Option<PathBuf>,
    /// Use this TDF raster as the response instead of background subtraction.
    #[arg(long)]
    inject_tdf: Option<PathBuf>,
    /// Run on every sample of a dataset, writing predictions for `eval`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    kernel: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_MASS)]
    min_mass: f64,
    /// Write the result here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DeblurArgs {
    /// Dataset sample directory supplying hf, hm and the curve.
    #[arg(long, conflicts_with_all = ["hf", "hm"])]
    sample: Option<PathBuf>,
    #[arg(long, requires = "hm")]
    hf: Option<PathBuf>,
    #[arg(long, requires = "hf")]
    hm: Option<PathBuf>,
    /// Initial kernel as a curve (JSON).
    #[arg(long, conflicts_with = "kernel")]
    curve: Option<PathBuf>,
    /// Initial kernel as an FMOA raster.
    #[arg(long)]
    kernel: Option<PathBuf>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    alpha_f: Option<f64>,
    #[arg(long)]
    alpha_m: Option<f64>,
    #[arg(long)]
    fix_h: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LossArgs {
    /// Dataset sample directory holding the targets.
    #[arg(long)]
    sample: PathBuf,
    /// Predicted TDF (FMOA) for the detection loss.
    #[arg(long)]
    tdf: Option<PathBuf>,
    #[arg(long, requires_all = ["hm", "curve"])]
    hf: Option<PathBuf>,
    #[arg(long)]
    hm: Option<PathBuf>,
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Predicted presence probability.
    #[arg(long, default_value_t = 1.0)]
    prob: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset root (containing manifest.json).
    #[arg(long)]
    dataset: PathBuf,
    /// Predictions directory as written by `detect --dataset`.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of trajectory overlays to draw.
    #[arg(long, default_value_t = 20)]
    overlays: usize,
}

#[derive(Args)]
struct PipelineArgs {
    /// Frame PNGs in temporal order, or one directory of them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// key = value settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    deblur: bool,
    #[arg(long)]
    fix_h: bool,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    root: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn rgb(path: &Path) -> Result<RasterImage> {
    let img = read_png(path)?;
    Ok(match img.channels() {
        3 => img,
        1 => {
            let p = img.channel(0);
            RasterImage::from_planes(&[p.clone(), p.clone(), p])?
        }
        _ => RasterImage::from_planes(&img.planes()[..3])?,
    })
}

fn synth(a: SynthArgs) -> Result<()> {
    let textures = a
        .textures
        .iter()
        .map(|t| t.parse::<TextureFamily>())
        .collect::<fmo_core::Result<Vec<_>>>()?;
    let cfg = GenConfig {
        seed: a.seed,
        height: a.height,
        width: a.width,
        radius: (a.r_min, a.r_max),
        // Sequences ignore the dataset counts.
        train_count: if a.sequence.is_some() { a.count.max(1) } else { a.count },
        val_count: a.val,
        background: a.backgrounds.map_or(BackgroundSource::Procedural, BackgroundSource::Directory),
        textures,
        contrast_floor: a.contrast,
        noise_sigma: a.noise,
        speed: (a.speed_min, a.speed_max),
        negative_fraction: a.negatives,
    };
    if let Some(n) = a.sequence {
        let seq = gen_sequence(&cfg, n, a.seed)?;
        create_dir(&a.out)?;
        for (i, f) in seq.frames.iter().enumerate() {
            fmo_core::imgcore::io::write_png(
                a.out.join(format!("frame_{i:04}.png")),
                &f.frame,
                fmo_core::imgcore::io::BitDepth::Eight,
            )?;
        }
        write_json(&a.out.join("truth.json"), &seq.truth())?;
        println!("wrote {n} frames to {}", a.out.display());
        return Ok(());
    }
    let manifest = gen_dataset(&cfg, &a.out)?;
    let positives = manifest.samples.iter().filter(|s| s.b).count();
    println!(
        "wrote {} samples ({positives} positive) to {}",
        manifest.samples.len(),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct DetectionOut {
    #[serde(flatten)]
    summary: detect::DetectionSummary,
    curve: Option<Curve>,
    tdf: Option<String>,
    error: Option<String>,
}

fn detect_cmd(a: DetectArgs) -> Result<()> {
    if let Some(root) = &a.dataset {
        let n = pipeline::detect_dataset(root, &a.out, a.epsilon, a.jobs)?;
        println!("wrote predictions for {n} samples to {}", a.out.display());
        return Ok(());
    }
    let (Some(frame_path), Some(bg_path)) = (&a.frame, &a.background) else {
        bail!("either --dataset or --frame with --background is required");
    };
    let frame = rgb(frame_path)?;
    let background = rgb(bg_path)?;
    let response = match &a.inject_tdf {
        Some(p) => response_from_tdf(&read_fmoa(p)?.to_plane()?)?,
        None => delta_response(&frame, &background)?,
    };
    if response.domain() != frame.domain() {
        bail!("response raster does not match the frame size");
    }
    create_dir(&a.out)?;
    let mut out = Vec::new();
    for (k, det) in binarize_and_split(&response, a.epsilon)?.into_iter().enumerate() {
        let det = det.with_images(&frame, &background)?;
        let mut entry = DetectionOut {
            summary: det.summary(),
            curve: None,
            tdf: None,
            error: None,
        };
        match detect::estimate_tdf_from_response(&det) {
            Ok(t) => {
                let name = format!("det{k}_tdf.fmoa");
                write_fmoa(a.out.join(&name), &FmoArray::from_plane(&t.plane))?;
                entry.tdf = Some(name);
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        match pipeline::fit_detection(&det) {
            Ok(fit) => entry.curve = Some(fit.curve),
            Err(e) => entry.error = Some(e.to_string()),
        }
        out.push(entry);
    }
    write_json(&a.out.join("detections.json"), &out)?;
    println!("{} detections", out.len());
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let h = BlurKernel::normalized(read_fmoa(&a.kernel)?.to_plane()?)?;
    let fit = fit_curve(&h, a.min_mass)?;
    match &a.out {
        Some(p) => write_json(p, &fit),
        None => {
            println!("{}", serde_json::to_string_pretty(&fit)?);
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct DeblurReportOut {
    patch_size: usize,
    iterations: usize,
    converged: bool,
    constraint_violation: f64,
    objective_trace: Vec<f64>,
    files: Vec<String>,
}

fn deblur_cmd(a: DeblurArgs) -> Result<()> {
    let image = |p: &Path| -> Result<RasterImage> { Ok(read_fmoa(p)?.to_image()?) };
    let (hf, hm, sample_curve) = match (&a.sample, &a.hf, &a.hm) {
        (Some(dir), _, _) => {
            let (s, _) = read_sample(dir)?;
            (s.matting.hf, s.matting.hm, Some(s.curve))
        }
        (None, Some(hf), Some(hm)) => (image(hf)?, image(hm)?, None),
        _ => bail!("either --sample or both --hf and --hm are required"),
    };
    let h = match (&a.curve, &a.kernel, sample_curve) {
        (Some(p), _, _) => rasterize_kernel(&read_json::<Curve>(p)?, hm.domain(), None)?,
        (None, Some(p), _) => BlurKernel::normalized(read_fmoa(p)?.to_plane()?)?,
        (None, None, Some(c)) => rasterize_kernel(&c, hm.domain(), None)?,
        (None, None, None) => bail!("an initial kernel is required (--curve or --kernel)"),
    };
    let defaults = DeblurConfig::default();
    let cfg = DeblurConfig {
        iterations: a.iters.unwrap_or(defaults.iterations),
        alpha_f: a.alpha_f.unwrap_or(defaults.alpha_f),
        alpha_m: a.alpha_m.unwrap_or(defaults.alpha_m),
        optimize_h: !a.fix_h,
        patch_size: a.patch_size.unwrap_or(0),
        ..defaults
    };
    let rep = solve(&hf, &hm, &h, &cfg)?;
    create_dir(&a.out)?;
    write_fmoa(a.out.join("f.fmoa"), &FmoArray::from_image(&rep.f))?;
    write_fmoa(a.out.join("m.fmoa"), &FmoArray::from_image(&rep.m))?;
    write_fmoa(a.out.join("h.fmoa"), &FmoArray::from_plane(rep.h.plane()))?;
    let out = DeblurReportOut {
        patch_size: rep.f.height(),
        iterations: rep.iterations,
        converged: rep.converged,
        constraint_violation: rep.constraint_violation,
        objective_trace: rep.objective_trace,
        files: ["f.fmoa", "m.fmoa", "h.fmoa"].map(String::from).to_vec(),
    };
    write_json(&a.out.join("report.json"), &out)?;
    println!(
        "{} iterations, objective {:.6e}",
        out.iterations,
        out.objective_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Serialize)]
struct LossOut {
    detection: Option<f64>,
    matting: Option<fmo_core::losses::LossBreakdown>,
}

fn loss_cmd(a: LossArgs) -> Result<()> {
    let (s, _) = read_sample(&a.sample)?;
    let detection = match &a.tdf {
        Some(p) => Some(detection_loss(&s.tdf.plane, &read_fmoa(p)?.to_plane()?)?),
        None => None,
    };
    let matting = match (&a.hf, &a.hm, &a.curve) {
        (Some(hf), Some(hm), Some(c)) => {
            let targets = MattingTargets {
                hf: s.matting.hf,
                hm: s.matting.hm,
                curve: s.curve,
                present: s.present,
            };
            let pred = MattingPrediction {
                hf: read_fmoa(hf)?.to_image()?,
                hm: read_fmoa(hm)?.to_image()?,
                curve: read_json(c)?,
                present_prob: a.prob,
            };
            Some(matting_fitting_loss(&targets, &pred, &LossWeights::default())?)
        }
        _ => None,
    };
    if detection.is_none() && matting.is_none() {
        bail!("nothing to evaluate: pass --tdf and/or --hf, --hm and --curve");
    }
    println!("{}", serde_json::to_string_pretty(&LossOut { detection, matting })?);
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let m = evaluate_dataset(&a.dataset, &a.predictions, &a.out, a.overlays)?;
    println!(
        "precision {:.3} recall {:.3} F {:.3} mean TIoU {:.3} over {} samples",
        m.scores.precision, m.scores.recall, m.scores.f_score, m.mean_tiou, m.samples
    );
    Ok(())
}

fn pipeline_cmd(a: PipelineArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::from_kv_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    cfg.deblur |= a.deblur;
    cfg.fix_h |= a.fix_h;
    if let Some(n) = a.iters {
        cfg.iterations = n;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let report = pipeline::run_pipeline(&a.inputs, &cfg, &a.out)?;
    let n: usize = report.frames.iter().map(|f| f.detections.len()).sum();
    println!("{} frames processed, {n} detections", report.frames.len());
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> Result<()> {
    let report = verify_dataset(&a.root)?;
    for f in &report.failures {
        eprintln!("{}: {}", f.sample, f.reason);
    }
    if !report.ok() {
        bail!("{} of {} samples failed verification", report.failures.len(), report.checked);
    }
    println!("{} samples verified", report.checked);
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => synth(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Deblur(a) => deblur_cmd(a),
        Command::Loss(a) => loss_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Pipeline(a) => pipeline_cmd(a),
        Command::Verify(a) => verify_cmd(a),
    }
}
