//! Short frame sequences of one object over a static background, used to
//! exercise the background-subtraction pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{draw_background, draw_object, random_texture, speed_px, GenConfig, TextureParams, MAX_ATTEMPTS};
use crate::error::Error;
use crate::error::Result;
use crate::formation::{add_observation_noise, MattingPair};
use crate::imgcore::RasterImage;
use crate::trajectory::Curve;

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFrame {
    pub frame: RasterImage,
    pub curve: Curve,
    pub matting: MattingPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceTruth {
    pub radius: f64,
    pub curves: Vec<Curve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub background: RasterImage,
    pub radius: f64,
    pub frames: Vec<SequenceFrame>,
}

impl Sequence {
    pub fn truth(&self) -> SequenceTruth {
        SequenceTruth {
            radius: self.radius,
            curves: self.frames.iter().map(|f| f.curve).collect(),
        }
    }
}

/// Frames this many steps back must not overlap the current trajectory,
/// so a median over the last three frames recovers the background.
const CLEAR_FRAMES: usize = 2;

fn clear_of(a: &Curve, b: &Curve, gap: f64) -> bool {
    let pa = a.sample(64);
    let pb = b.sample(64);
    pa.iter().all(|p| pb.iter().all(|q| p.dist(*q) > gap))
}

/// Blurred objects keep roughly half their contrast in the `Hm > 0.5`
/// region, so the sharp disc needs a margin over the floor.
const SHARP_CONTRAST_MARGIN: f64 = 1.6;

/// A texture whose sharp disc contrasts with the mean background color.
fn pick_texture(cfg: &GenConfig, r: f64, background: &RasterImage, rng: &mut ChaCha8Rng) -> Result<TextureParams> {
    let n = background.domain().len() as f64;
    let mut mean = [0.0; 3];
    for px in background.data().chunks_exact(3) {
        for c in 0..3 {
            mean[c] += px[c] / n;
        }
    }
    for _ in 0..MAX_ATTEMPTS {
        let texture = random_texture(cfg, rng);
        let obj = texture.render(r)?;
        let (mut sum, mut count) = (0.0, 0usize);
        for (f, m) in obj.f.data().chunks_exact(3).zip(obj.m.data()) {
            if *m >= 1.0 {
                sum += (0..3).map(|c| (f[c] - mean[c]).abs()).sum::<f64>();
                count += 3;
            }
        }
        if sum / count.max(1) as f64 >= SHARP_CONTRAST_MARGIN * cfg.contrast_floor {
            return Ok(texture);
        }
    }
    Err(Error::Unsatisfiable {
        attempts: MAX_ATTEMPTS,
        what: format!("sequence texture with contrast {}", cfg.contrast_floor),
    })
}

/// `frames` frames of a single textured disc over one background. Each
/// frame draws an independent trajectory that keeps clear of the previous
/// two, so consecutive object footprints never overlap.
pub fn gen_sequence(cfg: &GenConfig, frames: usize, seed: u64) -> Result<Sequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 << 40);
    let domain = cfg.domain();
    let (rmin, rmax) = cfg.radius;
    let r = if rmax > rmin { rng.gen_range(rmin..=rmax) } else { rmin };
    let background = draw_background(&cfg.background, domain, &mut rng)?;
    let texture = pick_texture(cfg, r, &background, &mut rng)?;
    let mut out: Vec<SequenceFrame> = Vec::with_capacity(frames);
    for _ in 0..frames {
        let recent: Vec<Curve> = out.iter().rev().take(CLEAR_FRAMES).map(|f| f.curve).collect();
        let gap = 2.0 * r + 2.0;
        let mut accept = |c: &Curve| recent.iter().all(|p| clear_of(c, p, gap));
        let drawn = draw_object(cfg, r, &background, speed_px(cfg, r), Some(texture), &mut accept, &mut rng)?;
        let frame = add_observation_noise(&drawn.clean, cfg.noise_sigma, rng.gen())?;
        out.push(SequenceFrame {
            frame,
            curve: drawn.curve,
            matting: drawn.matting,
        });
    }
    Ok(Sequence {
        background,
        radius: r,
        frames: out,
    })
}
