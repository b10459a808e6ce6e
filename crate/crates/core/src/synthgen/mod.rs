//! Synthetic fast-moving-object data: textured discs on random trajectories
//! composed over backgrounds, with full ground truth.

mod dataset;
mod sequence;

use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formation::{add_observation_noise, compose_from_matting, render_matting, MattingPair, ObjectModel};
use crate::geom::Vec2;
use crate::imgcore::io::{quantize, read_png, BitDepth};
use crate::imgcore::{resize_bilinear, PixelDomain, Plane, RasterImage};
use crate::trajectory::{rasterize_kernel, tdf, Curve, TdfRaster};

pub use dataset::{
    gen_dataset, read_sample, sample_dirs, verify_dataset, write_sample, Manifest, ManifestEntry, SampleFailure,
    SampleMeta, VerifyReport, SAMPLE_FILES,
};
pub(crate) use dataset::write_json;
pub use sequence::{gen_sequence, Sequence, SequenceFrame, SequenceTruth};

/// Rejection-sampling budget for curves and contrast.
pub const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextureFamily {
    Stripes,
    Checker,
    Rings,
    Solid,
}

impl TextureFamily {
    pub const ALL: [TextureFamily; 4] = [
        TextureFamily::Stripes,
        TextureFamily::Checker,
        TextureFamily::Rings,
        TextureFamily::Solid,
    ];
}

impl FromStr for TextureFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stripes" => Ok(TextureFamily::Stripes),
            "checker" => Ok(TextureFamily::Checker),
            "rings" => Ok(TextureFamily::Rings),
            "solid" => Ok(TextureFamily::Solid),
            other => Err(Error::InvalidArgument(format!("unknown texture family '{other}'"))),
        }
    }
}

/// Procedural pattern: a smooth blend between two colors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    pub family: TextureFamily,
    pub colors: [[f64; 3]; 2],
    /// Pattern period in pixels.
    pub period: f64,
    /// Pattern orientation in radians.
    pub angle: f64,
}

impl TextureParams {
    pub fn random(family: TextureFamily, rng: &mut impl Rng) -> Self {
        let mut color = || [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let colors = [color(), color()];
        TextureParams {
            family,
            colors,
            period: rng.gen_range(6.0..16.0),
            angle: rng.gen_range(0.0..std::f64::consts::PI),
        }
    }

    /// Blend weight of the second color at patch offset `(dx, dy)`.
    fn mix(&self, dx: f64, dy: f64) -> f64 {
        use std::f64::consts::TAU;
        let (s, c) = self.angle.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        match self.family {
            TextureFamily::Solid => 0.0,
            TextureFamily::Stripes => 0.5 + 0.5 * (TAU * u / self.period).sin(),
            TextureFamily::Checker => 0.5 + 0.5 * (TAU * u / self.period).sin() * (TAU * v / self.period).sin(),
            TextureFamily::Rings => 0.5 + 0.5 * (TAU * dx.hypot(dy) / self.period).cos(),
        }
    }

    /// Disc of radius `r` on a `(2 ceil(r) + 1)` patch with a 1 px
    /// anti-aliased edge, `F = pattern * M`.
    pub fn render(&self, r: f64) -> Result<ObjectModel> {
        if !(r > 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
        }
        let a = r.ceil() as usize;
        let s = 2 * a + 1;
        let mut f = Vec::with_capacity(s * s * 3);
        let mut m = Vec::with_capacity(s * s);
        for y in 0..s {
            for x in 0..s {
                let (dx, dy) = (x as f64 - a as f64, y as f64 - a as f64);
                let mv = (r + 0.5 - dx.hypot(dy)).clamp(0.0, 1.0);
                let k = self.mix(dx, dy);
                for c in 0..3 {
                    f.push(mv * ((1.0 - k) * self.colors[0][c] + k * self.colors[1][c]));
                }
                m.push(mv);
            }
        }
        ObjectModel::new(RasterImage::new(s, s, 3, f)?, RasterImage::new(s, s, 1, m)?, r)
    }
}

pub fn gen_texture(family: TextureFamily, r: f64, seed: u64) -> Result<ObjectModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TextureParams::random(family, &mut rng).render(r)
}

fn within_margin(c: &Curve, domain: PixelDomain, r: f64) -> bool {
    (0..=100).all(|i| {
        let p = c.at(i as f64 / 100.0);
        p.x >= r && p.y >= r && p.x <= domain.width as f64 - 1.0 - r && p.y <= domain.height as f64 - 1.0 - r
    })
}

fn unit(angle: f64) -> Vec2 {
    Vec2::new(angle.cos(), angle.sin())
}

/// Largest turn between the two pieces of a bounce, in radians.
const MAX_TURN: f64 = 2.0 * std::f64::consts::FRAC_PI_3;

/// Draws the shape (`c1, c2, c3` with `c0 = 0`) of a curve of the given class
/// and arc length.
fn draw_shape(class: usize, length: f64, rng: &mut impl Rng) -> Curve {
    let dir = unit(rng.gen_range(0.0..std::f64::consts::TAU));
    match class {
        0 => Curve::new(Vec2::ZERO, dir * length, Vec2::ZERO, Vec2::ZERO),
        1 => {
            // Curvature: |c2| as a fraction of |c1|, bent to one side.
            let bend = rng.gen_range(0.15..0.5) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let shape = Curve::new(Vec2::ZERO, dir, dir.perp() * bend, Vec2::ZERO);
            let scale = length / shape.arc_length();
            Curve::new(Vec2::ZERO, dir * scale, dir.perp() * (bend * scale), Vec2::ZERO)
        }
        _ => {
            let split = rng.gen_range(0.3..0.7);
            let turn = rng.gen_range(std::f64::consts::FRAC_PI_6..MAX_TURN) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let (s, c) = turn.sin_cos();
            let dir2 = Vec2::new(c * dir.x - s * dir.y, s * dir.x + c * dir.y);
            Curve::new(Vec2::ZERO, dir * (split * length), Vec2::ZERO, dir2 * ((1.0 - split) * length))
        }
    }
}

pub(crate) fn gen_curve_rng(domain: PixelDomain, r: f64, speed: (f64, f64), rng: &mut impl Rng) -> Result<Curve> {
    let (lo, hi) = speed;
    if !(lo >= 0.0 && hi >= lo) {
        return Err(Error::InvalidArgument(format!("bad arc length range [{lo}, {hi}]")));
    }
    let (xmax, ymax) = (domain.width as f64 - 1.0 - r, domain.height as f64 - 1.0 - r);
    if xmax < r || ymax < r {
        return Err(Error::InvalidArgument(format!(
            "{}x{} domain too small for margin {r}",
            domain.height, domain.width
        )));
    }
    let class = rng.gen_range(0..3);
    for _ in 0..MAX_ATTEMPTS {
        let length = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let shape = if length > 0.0 { draw_shape(class, length, rng) } else { Curve::default() };
        let c0 = Vec2::new(rng.gen_range(r..=xmax), rng.gen_range(r..=ymax));
        let c = shape.translated(c0).normalized();
        if within_margin(&c, domain, r) {
            return Ok(c);
        }
    }
    Err(Error::Unsatisfiable {
        attempts: MAX_ATTEMPTS,
        what: format!("curve with arc length in [{lo}, {hi}] and margin {r}"),
    })
}

/// Random curve of a uniformly chosen class whose arc length lies in
/// `speed` and which stays at least `r` from the borders.
pub fn gen_curve(domain: PixelDomain, r: f64, speed: (f64, f64), seed: u64) -> Result<Curve> {
    gen_curve_rng(domain, r, speed, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundSource {
    /// Smooth random color fields.
    Procedural,
    /// PNG files in a directory, resized to the frame size.
    Directory(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub radius: (f64, f64),
    pub train_count: usize,
    pub val_count: usize,
    pub background: BackgroundSource,
    pub textures: Vec<TextureFamily>,
    /// Minimum mean `|I - B|` over the object region.
    pub contrast_floor: f64,
    pub noise_sigma: f64,
    /// Arc length range as multiples of the radius.
    pub speed: (f64, f64),
    pub negative_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            height: 256,
            width: 512,
            radius: (5.0, 100.0),
            train_count: 5000,
            val_count: 500,
            background: BackgroundSource::Procedural,
            textures: TextureFamily::ALL.to_vec(),
            contrast_floor: 0.1,
            noise_sigma: 0.0,
            speed: (2.0, 6.0),
            negative_fraction: 0.1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (rmin, rmax) = self.radius;
        if !(rmin > 0.0 && rmax >= rmin && rmax <= 100.0) {
            return bad(format!("radius range [{rmin}, {rmax}] must lie in (0, 100]"));
        }
        if 2.0 * rmax + 1.0 > self.height.min(self.width) as f64 {
            return bad(format!("radius {rmax} does not fit a {}x{} frame", self.height, self.width));
        }
        if self.train_count + self.val_count == 0 {
            return bad("counts must not both be zero".into());
        }
        if self.textures.is_empty() {
            return bad("no texture families".into());
        }
        if !(0.0..=1.0).contains(&self.contrast_floor) {
            return bad(format!("contrast floor {} outside [0, 1]", self.contrast_floor));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be >= 0".into());
        }
        if !(self.speed.0 >= 0.0 && self.speed.1 >= self.speed.0) {
            return bad(format!("bad speed range {:?}", self.speed));
        }
        if !(0.0..=1.0).contains(&self.negative_fraction) {
            return bad("negative fraction outside [0, 1]".into());
        }
        Ok(())
    }

    pub fn domain(&self) -> PixelDomain {
        PixelDomain::new(self.height, self.width)
    }
}

/// One generated frame with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct FmoSample {
    pub frame: RasterImage,
    pub background: RasterImage,
    pub tdf: TdfRaster,
    pub curve: Curve,
    pub matting: MattingPair,
    pub object: ObjectModel,
    pub present: bool,
    pub radius: f64,
    pub seed: u64,
    pub sigma: f64,
    pub texture: Option<TextureParams>,
}

/// Independent random stream per `(seed, split, index)`.
pub(crate) fn sample_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lane = match split {
        Split::Train => 0u64,
        Split::Val => 1u64,
    };
    rng.set_stream((lane << 40) | index as u64);
    rng
}

fn procedural_background(domain: PixelDomain, rng: &mut impl Rng) -> RasterImage {
    use std::f64::consts::TAU;
    let waves: Vec<([f64; 3], f64, f64, f64)> = (0..5)
        .map(|_| {
            let amp = [rng.gen_range(0.0..0.12), rng.gen_range(0.0..0.12), rng.gen_range(0.0..0.12)];
            (amp, rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(0.0..TAU))
        })
        .collect();
    let base = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
    let blocks: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            let x0 = rng.gen_range(0.0..domain.width as f64);
            let y0 = rng.gen_range(0.0..domain.height as f64);
            let w = rng.gen_range(10.0..domain.width as f64 / 3.0);
            let h = rng.gen_range(10.0..domain.height as f64 / 3.0);
            let shift = [rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)];
            (x0, y0, w, h, shift)
        })
        .collect();
    let (hh, ww) = (domain.height as f64, domain.width as f64);
    let mut data = Vec::with_capacity(domain.len() * 3);
    for y in 0..domain.height {
        for x in 0..domain.width {
            let (xf, yf) = (x as f64, y as f64);
            for c in 0..3 {
                let mut v = base[c];
                for (amp, fx, fy, ph) in &waves {
                    v += amp[c] * (TAU * (fx * xf / ww + fy * yf / hh) + ph).sin();
                }
                for (x0, y0, w, h, shift) in &blocks {
                    if xf >= *x0 && xf < x0 + w && yf >= *y0 && yf < y0 + h {
                        v += shift[c];
                    }
                }
                data.push(v.clamp(0.02, 0.98));
            }
        }
    }
    RasterImage::new(domain.height, domain.width, 3, data).expect("values clamped to [0, 1]")
}

pub(crate) fn to_rgb(img: RasterImage) -> Result<RasterImage> {
    match img.channels() {
        3 => Ok(img),
        1 => {
            let p = img.channel(0);
            RasterImage::from_planes(&[p.clone(), p.clone(), p])
        }
        4 => {
            let planes = img.planes();
            RasterImage::from_planes(&planes[..3])
        }
        c => Err(Error::InvalidArgument(format!("unsupported {c}-channel background"))),
    }
}

/// PNG files of a directory in sorted order.
pub(crate) fn list_pngs(dir: &std::path::Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no PNG files in {}", dir.display())));
    }
    Ok(files)
}

/// Background for one sample, quantized to the 16-bit storage grid.
pub(crate) fn draw_background(source: &BackgroundSource, domain: PixelDomain, rng: &mut impl Rng) -> Result<RasterImage> {
    let img = match source {
        BackgroundSource::Procedural => procedural_background(domain, rng),
        BackgroundSource::Directory(dir) => {
            let files = list_pngs(dir)?;
            let path = files.choose(rng).expect("nonempty list");
            let img = to_rgb(read_png(path)?)?;
            if img.height() == domain.height && img.width() == domain.width {
                img
            } else {
                resize_bilinear(&img, domain.height, domain.width)
            }
        }
    };
    let q = img.data().iter().map(|v| quantize(*v, BitDepth::Sixteen)).collect();
    RasterImage::new(domain.height, domain.width, 3, q)
}

/// Pixels where the object dominates: `Hm > 0.5`, or `Hm >= max(Hm) / 2`
/// when the blur is too long for any pixel to exceed 0.5.
pub fn object_region(hm: &RasterImage) -> Vec<usize> {
    let data = hm.data();
    let strong: Vec<usize> = (0..data.len()).filter(|i| data[*i] > 0.5).collect();
    if !strong.is_empty() {
        return strong;
    }
    let peak = data.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    (0..data.len()).filter(|i| data[*i] >= 0.5 * peak).collect()
}

/// Mean `|I - B|` over the object region, all channels.
pub fn contrast(frame: &RasterImage, background: &RasterImage, hm: &RasterImage) -> f64 {
    let region = object_region(hm);
    if region.is_empty() {
        return 0.0;
    }
    let c = frame.channels();
    let sum: f64 = region
        .iter()
        .flat_map(|i| (0..c).map(move |ch| i * c + ch))
        .map(|k| (frame.data()[k] - background.data()[k]).abs())
        .sum();
    sum / (region.len() * c) as f64
}

pub(crate) struct Drawn {
    pub object: ObjectModel,
    pub texture: TextureParams,
    pub curve: Curve,
    pub matting: MattingPair,
    pub clean: RasterImage,
}

pub(crate) fn random_texture(cfg: &GenConfig, rng: &mut impl Rng) -> TextureParams {
    let family = *cfg.textures.choose(rng).expect("validated nonempty");
    TextureParams::random(family, rng)
}

/// Draws texture (unless fixed) and trajectory until the composed object meets the
/// contrast floor against `background`.
pub(crate) fn draw_object(
    cfg: &GenConfig,
    r: f64,
    background: &RasterImage,
    speed: (f64, f64),
    fixed_texture: Option<TextureParams>,
    accept: &mut dyn FnMut(&Curve) -> bool,
    rng: &mut ChaCha8Rng,
) -> Result<Drawn> {
    let domain = background.domain();
    for _ in 0..MAX_ATTEMPTS {
        let texture = match fixed_texture {
            Some(t) => t,
            None => random_texture(cfg, rng),
        };
        let object = texture.render(r)?;
        let curve = gen_curve_rng(domain, r, speed, rng)?;
        if !accept(&curve) {
            continue;
        }
        let h = rasterize_kernel(&curve, domain, None)?;
        let matting = render_matting(&object, &h)?;
        let clean = compose_from_matting(&matting, background)?;
        if contrast(&clean, background, &matting.hm) >= cfg.contrast_floor {
            return Ok(Drawn { object, texture, curve, matting, clean });
        }
    }
    Err(Error::Unsatisfiable {
        attempts: MAX_ATTEMPTS,
        what: format!("contrast floor {} at radius {r}", cfg.contrast_floor),
    })
}

/// Arc length range in pixels for radius `r`, capped by what fits the frame.
pub(crate) fn speed_px(cfg: &GenConfig, r: f64) -> (f64, f64) {
    let span = (cfg.width as f64 - 1.0 - 2.0 * r).hypot(cfg.height as f64 - 1.0 - 2.0 * r) * 0.8;
    let hi = (cfg.speed.1 * r).min(span);
    ((cfg.speed.0 * r).min(hi), hi)
}

/// Generates sample `index` of `split`; a pure function of its arguments.
pub fn gen_sample(cfg: &GenConfig, split: Split, index: usize) -> Result<FmoSample> {
    cfg.validate()?;
    let mut rng = sample_rng(cfg.seed, split, index);
    let domain = cfg.domain();
    let present = rng.gen::<f64>() >= cfg.negative_fraction;
    let (rmin, rmax) = cfg.radius;
    let r = if rmax > rmin { rng.gen_range(rmin..=rmax) } else { rmin };
    let background = draw_background(&cfg.background, domain, &mut rng)?;
    let noise_seed = rng.gen::<u64>();
    if !present {
        let frame = add_observation_noise(&background, cfg.noise_sigma, noise_seed)?;
        let a = r.ceil() as usize;
        let s = 2 * a + 1;
        let object = ObjectModel::new(RasterImage::zeros(s, s, 3), RasterImage::zeros(s, s, 1), r)?;
        let center = Vec2::new((cfg.width / 2) as f64, (cfg.height / 2) as f64);
        return Ok(FmoSample {
            frame,
            tdf: TdfRaster {
                plane: Plane::zeros(cfg.height, cfg.width),
                radius: r,
            },
            curve: Curve::stationary(center),
            matting: MattingPair {
                hf: RasterImage::zeros(cfg.height, cfg.width, 3),
                hm: RasterImage::zeros(cfg.height, cfg.width, 1),
            },
            object,
            background,
            present,
            radius: r,
            seed: cfg.seed,
            sigma: cfg.noise_sigma,
            texture: None,
        });
    }
    let drawn = draw_object(cfg, r, &background, speed_px(cfg, r), None, &mut |_| true, &mut rng)?;
    let frame = add_observation_noise(&drawn.clean, cfg.noise_sigma, noise_seed)?;
    let tdf = tdf(&drawn.curve, r, domain, Some(dataset::tdf_samples(&drawn.curve)))?;
    Ok(FmoSample {
        frame,
        background,
        tdf,
        curve: drawn.curve,
        matting: drawn.matting,
        object: drawn.object,
        present,
        radius: r,
        seed: cfg.seed,
        sigma: cfg.noise_sigma,
        texture: Some(drawn.texture),
    })
}

#[cfg(test)]
mod tests;
