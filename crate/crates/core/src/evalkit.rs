//! Evaluation: trajectory IoU, detection precision/recall, dataset box
//! statistics, and the PNG figures that summarize them.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{BBox, Vec2};
use crate::imgcore::io::{write_png, BitDepth};
use crate::imgcore::{dilate_disc, BinaryMask, PixelDomain, RasterImage};
use crate::trajectory::Curve;

pub const DEFAULT_TIOU_SAMPLES: usize = 100;
/// Minimum fraction of a dilated trajectory inside a GT region for a match.
pub const TP_OVERLAP: f64 = 0.5;

/// Object footprint used by [`tiou`].
#[derive(Debug, Clone)]
pub enum Footprint {
    Disc(f64),
    Mask(BinaryMask),
}

impl Footprint {
    fn mask(&self) -> BinaryMask {
        match self {
            Footprint::Disc(r) => BinaryMask::disc(*r),
            Footprint::Mask(m) => m.clone(),
        }
    }
}

fn round_px(p: Vec2) -> (i64, i64) {
    ((p.x + 0.5).floor() as i64, (p.y + 0.5).floor() as i64)
}

/// IoU of a mask with itself shifted by integer offsets, memoized.
struct ShiftIou {
    pixels: Vec<(i64, i64)>,
    set: std::collections::HashSet<(i64, i64)>,
    cache: HashMap<(i64, i64), f64>,
}

impl ShiftIou {
    fn new(mask: &BinaryMask) -> Self {
        let pixels: Vec<(i64, i64)> = mask.pixels().map(|(x, y)| (x as i64, y as i64)).collect();
        let set = pixels.iter().copied().collect();
        ShiftIou { pixels, set, cache: HashMap::new() }
    }

    fn iou(&mut self, d: (i64, i64)) -> f64 {
        if let Some(v) = self.cache.get(&d) {
            return *v;
        }
        let inter = self
            .pixels
            .iter()
            .filter(|(x, y)| self.set.contains(&(x + d.0, y + d.1)))
            .count() as f64;
        let n = self.pixels.len() as f64;
        let v = inter / (2.0 * n - inter);
        self.cache.insert(d, v);
        v
    }
}

/// Trajectory IoU: the mean over `samples` uniform times of the IoU between
/// the footprint placed (at the nearest pixel) on `c(t)` and on `c_star(t)`,
/// maximized over the two time directions of `c`.
pub fn tiou(c: &Curve, c_star: &Curve, footprint: &Footprint, samples: usize) -> Result<f64> {
    if samples < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {samples}")));
    }
    let mask = footprint.mask();
    if mask.is_empty() {
        return Err(Error::InvalidArgument("empty footprint mask".into()));
    }
    let mut shift = ShiftIou::new(&mask);
    // Summing per distinct offset keeps constant-offset cases exact.
    let mut mean = |rev: bool| {
        let mut counts: BTreeMap<(i64, i64), usize> = BTreeMap::new();
        for i in 0..samples {
            let t = i as f64 / (samples - 1) as f64;
            let tc = if rev { 1.0 - t } else { t };
            let (a, b) = (round_px(c.at(tc)), round_px(c_star.at(t)));
            *counts.entry((a.0 - b.0, a.1 - b.1)).or_default() += 1;
        }
        counts
            .into_iter()
            .map(|(d, n)| shift.iou(d) * (n as f64 / samples as f64))
            .sum::<f64>()
    };
    let fwd = mean(false);
    let rev = mean(true);
    Ok(fwd.max(rev))
}

/// Pixels visited by the curve (nearest-pixel samples), clipped to `domain`.
pub fn trajectory_pixels(c: &Curve, domain: PixelDomain) -> BinaryMask {
    let mut m = BinaryMask::empty(domain.height, domain.width);
    for p in c.sample(c.default_samples()) {
        let (x, y) = round_px(p);
        if x >= 0 && y >= 0 && (x as usize) < domain.width && (y as usize) < domain.height {
            m.set(y as usize, x as usize, true);
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrScores {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Fraction of the dilated trajectory of `c` inside `region`.
pub fn trajectory_overlap(c: &Curve, region: &BinaryMask, r: f64) -> f64 {
    let traj = dilate_disc(&trajectory_pixels(c, region.domain()), r);
    let n = traj.count();
    if n == 0 {
        return 0.0;
    }
    traj.pixels().filter(|(x, y)| region.get(*y, *x)).count() as f64 / n as f64
}

/// Precision and recall over frames. A detection is a true positive when at
/// least half of its trajectory, dilated by `r`, lies inside a GT region;
/// each region matches at most one detection, greedily by overlap. With no
/// detections at all, precision is reported as 1.
pub fn precision_recall(detections: &[Vec<Curve>], gt: &[Vec<BinaryMask>], r: f64) -> Result<PrScores> {
    if detections.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} detection frames vs {} ground-truth frames",
            detections.len(),
            gt.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (dets, regions) in detections.iter().zip(gt) {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (i, d) in dets.iter().enumerate() {
            for (j, g) in regions.iter().enumerate() {
                let o = trajectory_overlap(d, g, r);
                if o >= TP_OVERLAP {
                    pairs.push((o, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_d = vec![false; dets.len()];
        let mut used_g = vec![false; regions.len()];
        let mut matched = 0;
        for (_, i, j) in pairs {
            if !used_d[i] && !used_g[j] {
                used_d[i] = true;
                used_g[j] = true;
                matched += 1;
            }
        }
        tp += matched;
        fp += dets.len() - matched;
        fn_ += regions.len() - matched;
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(PrScores { precision, recall, f_score, tp, fp, fn_ })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BboxStats {
    /// IoU of each consecutive pair of boxes.
    pub iou: Vec<f64>,
    /// Center displacement divided by the mean diagonal of the pair.
    pub speed: Vec<f64>,
}

pub fn bbox_stats(boxes: &[BBox]) -> Result<BboxStats> {
    if boxes.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 boxes".into()));
    }
    if let Some(i) = boxes.iter().position(|b| !(b.area() > 0.0)) {
        return Err(Error::InvalidArgument(format!("box {i} has zero area")));
    }
    let (iou, speed) = boxes
        .windows(2)
        .map(|w| {
            let diag = 0.5 * (w[0].diagonal() + w[1].diagonal());
            (w[0].iou(&w[1]), w[0].center().dist(w[1].center()) / diag)
        })
        .unzip();
    Ok(BboxStats { iou, speed })
}

/// Counts of `values` in `bins` equal-width bins over `[lo, hi]`; values
/// outside the range go to the edge bins.
pub fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for v in values {
        let k = ((v - lo) / (hi - lo) * bins as f64).floor();
        counts[(k.max(0.0) as usize).min(bins - 1)] += 1;
    }
    counts
}

/// Bar chart of histogram counts as an 8-bit PNG (white bars on black).
pub fn write_histogram_png(path: impl AsRef<Path>, counts: &[usize]) -> Result<()> {
    let (bar_w, height) = (12usize, 120usize);
    let width = bar_w * counts.len().max(1);
    let peak = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut img = RasterImage::zeros(height, width, 3);
    for (k, c) in counts.iter().enumerate() {
        let bar = ((*c as f64 / peak) * (height - 4) as f64).round() as usize;
        for y in (height - bar)..height {
            for x in (k * bar_w + 1)..((k + 1) * bar_w - 1) {
                for ch in 0..3 {
                    img.set(y, x, ch, 1.0);
                }
            }
        }
    }
    write_png(path, &img, BitDepth::Eight)
}

/// Draws each curve in red over a copy of `frame`.
pub fn overlay_trajectories(frame: &RasterImage, curves: &[Curve]) -> RasterImage {
    let mut out = frame.clone();
    let domain = frame.domain();
    let color = [1.0, 0.0, 0.0];
    for c in curves {
        for (x, y) in trajectory_pixels(c, domain).pixels() {
            for (ch, v) in color.iter().enumerate().take(frame.channels()) {
                out.set(y, x, ch, *v);
            }
        }
    }
    out
}

/// Dataset-level scores of a set of predicted curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub samples: usize,
    pub positives: usize,
    /// Mean over positive samples of the best TIoU among the predictions
    /// (0 when there is none).
    pub mean_tiou: f64,
    pub scores: PrScores,
    /// Ground-truth footprint IoU between exposure start and end.
    pub mean_consecutive_iou: f64,
    pub mean_normalized_speed: f64,
    pub tiou_histogram: Vec<usize>,
    pub consecutive_iou_histogram: Vec<usize>,
    /// Files written next to the metrics, relative to the output directory.
    pub files: Vec<String>,
}

pub const HISTOGRAM_BINS: usize = 10;

fn disc_box(p: Vec2, r: f64) -> BBox {
    BBox::new(p.x - r, p.y - r, p.x + r, p.y + r)
}

/// Scores the `curves.json` predictions under `predictions` (mirroring the
/// dataset layout; a missing file means no detections) against the dataset
/// at `root`. Writes `metrics.json`, histograms and the first `overlays`
/// trajectory overlays into `out`.
pub fn evaluate_dataset(root: &Path, predictions: &Path, out: &Path, overlays: usize) -> Result<DatasetMetrics> {
    use crate::pipeline::{gt_region, PREDICTION_FILE};
    use crate::synthgen::{read_sample, write_json, Manifest};

    let manifest = Manifest::load(root)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut tious = Vec::new();
    let (mut ious, mut speeds) = (Vec::new(), Vec::new());
    for (k, entry) in manifest.samples.iter().enumerate() {
        let (sample, meta) = read_sample(&root.join(&entry.dir))?;
        let pred_path = predictions.join(&entry.dir).join(PREDICTION_FILE);
        let preds: Vec<Curve> = if pred_path.is_file() {
            let text = std::fs::read_to_string(&pred_path).map_err(|e| Error::io(&pred_path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::json(&pred_path, e))?
        } else {
            Vec::new()
        };
        let regions = if meta.b { vec![gt_region(&sample.matting.hm)] } else { Vec::new() };
        let s = precision_recall(std::slice::from_ref(&preds), &[regions], meta.r)?;
        tp += s.tp;
        fp += s.fp;
        fn_ += s.fn_;
        if meta.b {
            let mut best: f64 = 0.0;
            for p in &preds {
                best = best.max(tiou(p, &sample.curve, &Footprint::Disc(meta.r), DEFAULT_TIOU_SAMPLES)?);
            }
            tious.push(best);
            let boxes = [disc_box(sample.curve.at(0.0), meta.r), disc_box(sample.curve.at(1.0), meta.r)];
            let st = bbox_stats(&boxes)?;
            ious.extend(st.iou);
            speeds.extend(st.speed);
        }
        if k < overlays {
            let name = format!("{}_{:05}_traj.png", entry.split.name(), entry.index);
            write_png(out.join(&name), &overlay_trajectories(&sample.frame, &preds), BitDepth::Eight)?;
            files.push(name);
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f_score = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let tiou_histogram = histogram(&tious, HISTOGRAM_BINS, 0.0, 1.0);
    let consecutive_iou_histogram = histogram(&ious, HISTOGRAM_BINS, 0.0, 1.0);
    write_histogram_png(out.join("tiou_hist.png"), &tiou_histogram)?;
    write_histogram_png(out.join("iou_hist.png"), &consecutive_iou_histogram)?;
    files.push("tiou_hist.png".into());
    files.push("iou_hist.png".into());
    files.push("metrics.json".into());
    let metrics = DatasetMetrics {
        samples: manifest.samples.len(),
        positives: tious.len(),
        mean_tiou: mean(&tious),
        scores: PrScores { precision, recall, f_score, tp, fp, fn_ },
        mean_consecutive_iou: mean(&ious),
        mean_normalized_speed: mean(&speeds),
        tiou_histogram,
        consecutive_iou_histogram,
        files,
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    Ok(metrics)
}
