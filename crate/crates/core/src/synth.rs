//! Synthetic phantoms with ground-truth masks, and seeded noise injection.
//!
//! A phantom spec uses the `key = value` grammar of solver configs:
//!
//! ```text
//! width = 100
//! height = 100
//! background = 0.1
//! # nearest shape first
//! shape = disk 40 50 25 0.9
//! shape = disk 62 50 25 0.5 gap=150:60:8
//! shape = rect 10 10 30 20 0.7
//! shape = annulus 50 50 20 30 0.8 gap=0:20:100
//! ```
//!
//! A `gap=start:sweep:depth` token removes from the painted image the shape
//! pixels whose polar angle about the shape center lies in
//! `[start, start + sweep]` degrees and whose distance to the shape boundary
//! is at most `depth`; those pixels show whatever lies behind. Angles follow
//! image axes (x right, y down). Masks always hold the complete shape.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson, Weibull};

use crate::config::{parse_kv, read_text};
use crate::error::{Error, Result};
use crate::field::{BinaryMask, MultiChannelField, ScalarField};

/// Name of the generator behind every seeded draw.
pub const RNG_NAME: &str = "ChaCha8 (rand_chacha)";

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Geometry {
    Disk { cx: f64, cy: f64, r: f64 },
    /// Inclusive pixel bounds.
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Annulus { cx: f64, cy: f64, r_in: f64, r_out: f64 },
}

impl Geometry {
    fn center(&self) -> (f64, f64) {
        match *self {
            Geometry::Disk { cx, cy, .. } | Geometry::Annulus { cx, cy, .. } => (cx, cy),
            Geometry::Rect { x0, y0, x1, y1 } => ((x0 + x1) / 2.0, (y0 + y1) / 2.0),
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Geometry::Disk { cx, cy, r } | Geometry::Annulus { cx, cy, r_out: r, .. } => {
                (cx - r, cy - r, cx + r, cy + r)
            }
            Geometry::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Geometry::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Geometry::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Geometry::Annulus { cx, cy, r_in, r_out } => {
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                d2 >= r_in * r_in && d2 <= r_out * r_out
            }
        }
    }

    /// Distance from an interior point to the shape boundary.
    fn depth_of(&self, x: f64, y: f64) -> f64 {
        match *self {
            Geometry::Disk { cx, cy, r } => r - (x - cx).hypot(y - cy),
            Geometry::Rect { x0, y0, x1, y1 } => (x - x0).min(x1 - x).min(y - y0).min(y1 - y),
            Geometry::Annulus { cx, cy, r_in, r_out } => {
                let rho = (x - cx).hypot(y - cy);
                (r_out - rho).min(rho - r_in)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gap {
    pub start_deg: f64,
    pub sweep_deg: f64,
    pub depth: f64,
}

impl Gap {
    fn contains(&self, geometry: &Geometry, x: f64, y: f64) -> bool {
        let (cx, cy) = geometry.center();
        let angle = (y - cy).atan2(x - cx).to_degrees().rem_euclid(360.0);
        let offset = (angle - self.start_deg).rem_euclid(360.0);
        offset <= self.sweep_deg && geometry.depth_of(x, y) <= self.depth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shape {
    pub geometry: Geometry,
    pub level: f64,
    pub gaps: Vec<Gap>,
}

impl Shape {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.geometry.contains(x, y)
    }

    /// Shape pixel that is painted (not inside a gap).
    pub fn paints(&self, x: f64, y: f64) -> bool {
        self.contains(x, y) && !self.gaps.iter().any(|g| g.contains(&self.geometry, x, y))
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens: Vec<&str> = s.split_whitespace().collect();
        let bad = |reason: String| Error::param("shape", reason);
        let (kind, rest) = tokens.split_first().ok_or_else(|| bad("empty shape".into()))?;
        let arity = match *kind {
            "disk" => 3,
            "rect" | "annulus" => 4,
            other => return Err(bad(format!("unknown shape `{other}`"))),
        };
        let nums: Vec<&str> = rest.iter().take_while(|t| !t.starts_with("gap=")).copied().collect();
        if nums.len() != arity + 1 {
            return Err(bad(format!("`{kind}` takes {} numbers, got {}", arity + 1, nums.len())));
        }
        let num = |t: &str| -> Result<f64> {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("`{t}` is not a number")))
        };
        let v = nums.iter().map(|t| num(t)).collect::<Result<Vec<_>>>()?;
        let geometry = match *kind {
            "disk" => Geometry::Disk { cx: v[0], cy: v[1], r: v[2] },
            "rect" => Geometry::Rect { x0: v[0], y0: v[1], x1: v[2], y1: v[3] },
            _ => Geometry::Annulus { cx: v[0], cy: v[1], r_in: v[2], r_out: v[3] },
        };
        let level = v[arity];
        let mut gaps = Vec::new();
        for t in &rest[nums.len()..] {
            let body = t.strip_prefix("gap=").ok_or_else(|| bad(format!("unexpected token `{t}`")))?;
            let parts: Vec<&str> = body.split(':').collect();
            if parts.len() != 3 {
                return Err(bad(format!("gap `{body}` must be start:sweep:depth")));
            }
            let gap = Gap {
                start_deg: num(parts[0])?,
                sweep_deg: num(parts[1])?,
                depth: num(parts[2])?,
            };
            if !(gap.sweep_deg >= 0.0 && gap.depth >= 0.0) {
                return Err(bad("gap sweep and depth must be >= 0".into()));
            }
            gaps.push(gap);
        }
        Ok(Shape { geometry, level, gaps })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub background: f64,
    /// Nearest first.
    pub shapes: Vec<Shape>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("width/height", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::param("background", "must lie in [0, 1]"));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            let out = |reason: &str| Error::ShapeOutOfBounds {
                index: i + 1,
                reason: reason.to_string(),
            };
            if !(0.0..=1.0).contains(&s.level) {
                return Err(out("level must lie in [0, 1]"));
            }
            let (x0, y0, x1, y1) = s.geometry.bounds();
            if x0 > x1 || y0 > y1 {
                return Err(out("empty extent"));
            }
            if let Geometry::Annulus { r_in, r_out, .. } = s.geometry {
                if !(0.0 <= r_in && r_in < r_out) {
                    return Err(out("annulus needs 0 <= r_in < r_out"));
                }
            }
            if x0 < 0.0 || y0 < 0.0 || x1 > (self.width - 1) as f64 || y1 > (self.height - 1) as f64 {
                return Err(out("extends past the image"));
            }
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut width = None;
        let mut height = None;
        let mut background = 0.0;
        let mut shapes = Vec::new();
        for e in parse_kv(text)? {
            let err = |reason: String| Error::Config {
                line: e.line,
                key: e.key.clone(),
                reason,
            };
            match e.key.as_str() {
                "width" | "height" => {
                    let v: usize = e.value.parse().map_err(|_| err(format!("`{}` is not a size", e.value)))?;
                    if e.key == "width" {
                        width = Some(v);
                    } else {
                        height = Some(v);
                    }
                }
                "background" => {
                    background = e
                        .value
                        .parse()
                        .map_err(|_| err(format!("`{}` is not a number", e.value)))?
                }
                "shape" => shapes.push(e.value.parse::<Shape>().map_err(|x| err(x.to_string()))?),
                _ => return Err(err("unknown key".into())),
            }
        }
        let missing = |k: &str| Error::Config {
            line: 0,
            key: k.to_string(),
            reason: "required".into(),
        };
        let spec = PhantomSpec {
            width: width.ok_or_else(|| missing("width"))?,
            height: height.ok_or_else(|| missing("height"))?,
            background,
            shapes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_str(&read_text(path.as_ref())?)
    }
}

/// Painted single-channel image and one full-shape mask per shape.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(MultiChannelField, Vec<BinaryMask>)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut img = ScalarField::filled(w, h, spec.background);
    for shape in spec.shapes.iter().rev() {
        for y in 0..h {
            for x in 0..w {
                if shape.paints(x as f64, y as f64) {
                    img.set(x, y, shape.level);
                }
            }
        }
    }
    let masks = spec
        .shapes
        .iter()
        .map(|s| BinaryMask::from_fn(w, h, |x, y| s.contains(x as f64, y as f64)))
        .collect();
    Ok((MultiChannelField::single(img), masks))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseStep {
    /// Additive, standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Multiplicative factor `1 + scale (R − 1)` with `R` unit-mean Rayleigh.
    Rayleigh { scale: f64 },
    /// `sample(f · counts) / counts`.
    Poisson { counts: f64 },
    /// Multiplicative unit-mean Gamma factor of shape `k`; infinite `k` is
    /// the identity.
    Gamma { shape: f64 },
    /// Each pixel independently set to 0 or 1 with probability `fraction`.
    SaltPepper { fraction: f64 },
}

impl NoiseStep {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseStep::Gaussian { sigma } => sigma >= 0.0 && sigma.is_finite(),
            NoiseStep::Rayleigh { scale } => scale >= 0.0 && scale.is_finite(),
            NoiseStep::Poisson { counts } => counts > 0.0 && counts.is_finite(),
            NoiseStep::Gamma { shape } => shape > 0.0,
            NoiseStep::SaltPepper { fraction } => (0.0..=1.0).contains(&fraction),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param("noise", format!("invalid parameter in `{self}`")))
        }
    }
}

impl fmt::Display for NoiseStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NoiseStep::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            NoiseStep::Rayleigh { scale } => write!(f, "rayleigh:{scale}"),
            NoiseStep::Poisson { counts } => write!(f, "poisson:{counts}"),
            NoiseStep::Gamma { shape } => write!(f, "gamma:{shape}"),
            NoiseStep::SaltPepper { fraction } => write!(f, "saltpepper:{fraction}"),
        }
    }
}

impl FromStr for NoiseStep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, value) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| Error::param("noise", format!("`{s}` must be kind:parameter")))?;
        let p: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::param("noise", format!("bad parameter `{value}`")))?;
        let step = match name.trim().to_ascii_lowercase().as_str() {
            "gaussian" => NoiseStep::Gaussian { sigma: p },
            "rayleigh" => NoiseStep::Rayleigh { scale: p },
            "poisson" => NoiseStep::Poisson { counts: p },
            "gamma" => NoiseStep::Gamma { shape: p },
            "saltpepper" | "salt_pepper" | "sp" => NoiseStep::SaltPepper { fraction: p },
            other => return Err(Error::param("noise", format!("unknown noise kind `{other}`"))),
        };
        step.validate()?;
        Ok(step)
    }
}

/// Noise steps applied in order from one seeded stream.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseSpec(pub Vec<NoiseStep>);

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()
            .map(NoiseSpec)
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

fn apply_step(img: &MultiChannelField, step: &NoiseStep, rng: &mut ChaCha8Rng) -> Result<MultiChannelField> {
    step.validate()?;
    let bad = |e: String| Error::param("noise", e);
    let mut channels: Vec<ScalarField> = img.channels().to_vec();
    match *step {
        NoiseStep::Gaussian { sigma } => {
            if sigma > 0.0 {
                let d = Normal::new(0.0, sigma).map_err(|e| bad(e.to_string()))?;
                for c in channels.iter_mut() {
                    c.as_mut_slice().iter_mut().for_each(|v| *v += d.sample(rng));
                }
            }
        }
        NoiseStep::Rayleigh { scale } => {
            // unit mean: σ_R √(π/2) = 1
            let sigma_r = (2.0 / std::f64::consts::PI).sqrt();
            let d = Weibull::new(sigma_r * std::f64::consts::SQRT_2, 2.0).map_err(|e| bad(e.to_string()))?;
            for c in channels.iter_mut() {
                c.as_mut_slice()
                    .iter_mut()
                    .for_each(|v| *v *= 1.0 + scale * (d.sample(rng) - 1.0));
            }
        }
        NoiseStep::Poisson { counts } => {
            for c in channels.iter_mut() {
                for v in c.as_mut_slice() {
                    let rate = (*v * counts).max(0.0);
                    *v = if rate > 0.0 {
                        let d = Poisson::new(rate).map_err(|e| bad(e.to_string()))?;
                        d.sample(rng) / counts
                    } else {
                        0.0
                    };
                }
            }
        }
        NoiseStep::Gamma { shape } => {
            if shape.is_finite() {
                let d = Gamma::new(shape, 1.0 / shape).map_err(|e| bad(e.to_string()))?;
                for c in channels.iter_mut() {
                    c.as_mut_slice().iter_mut().for_each(|v| *v *= d.sample(rng));
                }
            }
        }
        NoiseStep::SaltPepper { fraction } => {
            let n = channels[0].len();
            for i in 0..n {
                if rng.random::<f64>() < fraction {
                    let value = if rng.random::<bool>() { 1.0 } else { 0.0 };
                    for c in channels.iter_mut() {
                        c.as_mut_slice()[i] = value;
                    }
                }
            }
        }
    }
    let clamped = channels.iter().map(|c| c.clamp(0.0, 1.0)).collect();
    MultiChannelField::new(clamped)
}

/// One noise step from a fresh stream seeded with `seed`.
pub fn add_noise(f: &MultiChannelField, step: &NoiseStep, seed: u64) -> Result<MultiChannelField> {
    apply_step(f, step, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// All steps in order from a single stream seeded with `seed`; every step
/// clamps to `[0, 1]`.
pub fn add_noise_chain(f: &MultiChannelField, spec: &NoiseSpec, seed: u64) -> Result<MultiChannelField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = f.clone();
    for step in &spec.0 {
        img = apply_step(&img, step, &mut rng)?;
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: f64, w: usize, h: usize) -> MultiChannelField {
        MultiChannelField::single(ScalarField::filled(w, h, v))
    }

    #[test]
    fn full_disk_mask_equals_painted_region() {
        let spec = PhantomSpec::parse_str("width = 40\nheight = 30\nbackground = 0.2\nshape = disk 20 15 8 0.8").unwrap();
        let (img, masks) = make_phantom(&spec).unwrap();
        let painted = BinaryMask::from_fn(40, 30, |x, y| img.channels()[0].get(x, y) == 0.8);
        assert_eq!(painted, masks[0]);
    }

    #[test]
    fn gap_is_painted_out_but_masked_in() {
        let spec = PhantomSpec::parse_str("width = 40\nheight = 40\nshape = disk 20 20 12 1.0 gap=-15:30:100").unwrap();
        let (img, masks) = make_phantom(&spec).unwrap();
        let f = &img.channels()[0];
        // on the +x axis inside the disk
        assert!(masks[0].get(30, 20) && f.get(30, 20) == 0.0);
        assert!(masks[0].get(10, 20) && f.get(10, 20) == 1.0);
    }

    #[test]
    fn occluded_disk_shows_only_visible_part() {
        let spec = PhantomSpec::parse_str("width = 60\nheight = 40\nshape = disk 25 20 10 0.9\nshape = disk 35 20 10 0.5").unwrap();
        let (img, masks) = make_phantom(&spec).unwrap();
        let f = &img.channels()[0];
        for y in 0..40 {
            for x in 0..60 {
                let (xf, yf) = (x as f64, y as f64);
                let in1 = (xf - 25.0).powi(2) + (yf - 20.0).powi(2) <= 100.0;
                let in2 = (xf - 35.0).powi(2) + (yf - 20.0).powi(2) <= 100.0;
                assert_eq!(masks[0].get(x, y), in1);
                assert_eq!(masks[1].get(x, y), in2);
                let expect = if in1 { 0.9 } else if in2 { 0.5 } else { 0.0 };
                assert_eq!(f.get(x, y), expect);
            }
        }
    }

    #[test]
    fn spec_errors() {
        assert!(matches!(
            PhantomSpec::parse_str("width = 10\nheight = 10\nshape = disk 5 5 8 0.5"),
            Err(Error::ShapeOutOfBounds { index: 1, .. })
        ));
        assert!(matches!(
            PhantomSpec::parse_str("width = 10\nheight = 10\nshape = blob 1 2"),
            Err(Error::Config { line: 3, .. })
        ));
        assert!(PhantomSpec::parse_str("height = 10").is_err());
        assert!(PhantomSpec::parse_str("width = 10\nheight = 10\ncolour = 2").is_err());
    }

    #[test]
    fn degenerate_noise_is_identity() {
        let f = MultiChannelField::single(ScalarField::from_fn(16, 8, |x, y| (x + y) as f64 / 22.0));
        for step in [
            NoiseStep::Gaussian { sigma: 0.0 },
            NoiseStep::Rayleigh { scale: 0.0 },
            NoiseStep::Gamma { shape: f64::INFINITY },
            NoiseStep::SaltPepper { fraction: 0.0 },
        ] {
            assert_eq!(add_noise(&f, &step, 7).unwrap(), f, "{step}");
        }
        let p = add_noise(&f, &NoiseStep::Poisson { counts: 1e9 }, 7).unwrap();
        assert!(p.channels()[0].max_abs_diff(&f.channels()[0]) < 1e-3);
    }

    #[test]
    fn same_seed_same_output() {
        let f = flat(0.5, 32, 32);
        let spec: NoiseSpec = "gaussian:0.1,rayleigh:0.3,poisson:50,gamma:10,saltpepper:0.05".parse().unwrap();
        let a = add_noise_chain(&f, &spec, 42).unwrap();
        assert_eq!(a, add_noise_chain(&f, &spec, 42).unwrap());
        assert_ne!(a, add_noise_chain(&f, &spec, 43).unwrap());
        assert_eq!(spec.to_string().parse::<NoiseSpec>().unwrap(), spec);
    }

    #[test]
    fn gaussian_sample_statistics() {
        let out = add_noise(&flat(0.5, 256, 256), &NoiseStep::Gaussian { sigma: 0.1 }, 1).unwrap();
        let v = out.channels()[0].as_slice();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((mean - 0.5).abs() < 0.002, "{mean}");
        assert!((sd - 0.1).abs() < 0.005, "{sd}");
    }

    #[test]
    fn multiplicative_noise_has_unit_mean() {
        for step in [NoiseStep::Rayleigh { scale: 0.5 }, NoiseStep::Gamma { shape: 20.0 }] {
            let out = add_noise(&flat(0.4, 256, 256), &step, 9).unwrap();
            let mean = out.channels()[0].sum() / 65536.0;
            assert!((mean - 0.4).abs() < 0.004, "{step}: {mean}");
        }
    }

    #[test]
    fn noise_spec_errors() {
        assert!("gaussian:-1".parse::<NoiseSpec>().is_err());
        assert!("speckle:0.2".parse::<NoiseSpec>().is_err());
        assert!("saltpepper:1.5".parse::<NoiseSpec>().is_err());
        assert!("gamma".parse::<NoiseSpec>().is_err());
    }
}
