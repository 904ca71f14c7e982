//! Noise-model potentials `Q(x, θ)` and their closed-form maximum-likelihood
//! parameter estimates.
//!
//! | kind     | potential                               | parameters          |
//! |----------|-----------------------------------------|---------------------|
//! | Gaussian | ½log2π + logσ + (f−μ)²/(2σ²)            | weighted mean, var  |
//! | Rayleigh | 2logσ − log f + f²/(2σ²)                | σ² = Σf²w / (2Σw)   |
//! | Poisson  | σ − f·logσ                              | σ = weighted mean   |
//! | Gamma    | f/μ + logμ                              | μ = weighted mean   |
//!
//! Region integrals are plain pixel sums with the region weight `w` (φ, 1−φ,
//! or a visibility function χ).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::{MultiChannelField, ScalarField};

/// Smallest denominator accepted for a region weight sum.
pub const MIN_REGION_WEIGHT: f64 = 1e-12;

/// Lower bound applied to every estimated scale parameter (σ, or μ for Gamma).
/// Keeps potentials finite once a region becomes perfectly homogeneous.
pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoiseKind {
    Gaussian,
    Rayleigh,
    Poisson,
    Gamma,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::Gaussian,
        NoiseKind::Rayleigh,
        NoiseKind::Poisson,
        NoiseKind::Gamma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Rayleigh => "rayleigh",
            NoiseKind::Poisson => "poisson",
            NoiseKind::Gamma => "gamma",
        }
    }

    /// Whether the potential or its estimator needs strictly positive data.
    pub fn needs_positive_data(self) -> bool {
        matches!(self, NoiseKind::Rayleigh | NoiseKind::Poisson)
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(NoiseKind::Gaussian),
            "rayleigh" => Ok(NoiseKind::Rayleigh),
            "poisson" => Ok(NoiseKind::Poisson),
            "gamma" => Ok(NoiseKind::Gamma),
            other => Err(Error::param("noise kind", format!("unknown kind `{other}`"))),
        }
    }
}

/// Distribution parameters of one region in one channel. Rayleigh and
/// Poisson read only `sigma`, Gamma reads only `mu`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaParams {
    pub mu: f64,
    pub sigma: f64,
}

impl ThetaParams {
    pub fn new(mu: f64, sigma: f64) -> Self {
        Self { mu, sigma }
    }

    fn validate(&self, kind: NoiseKind) -> Result<()> {
        if !self.mu.is_finite() || !self.sigma.is_finite() {
            return Err(Error::param("theta", "parameters must be finite"));
        }
        match kind {
            NoiseKind::Gamma if self.mu <= 0.0 => {
                Err(Error::param("mu", format!("gamma needs mu > 0, got {}", self.mu)))
            }
            NoiseKind::Gaussian | NoiseKind::Rayleigh | NoiseKind::Poisson if self.sigma <= 0.0 => {
                Err(Error::param("sigma", format!("{kind} needs sigma > 0, got {}", self.sigma)))
            }
            _ => Ok(()),
        }
    }
}

/// Candidate noise models with their probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    entries: Vec<(NoiseKind, f64)>,
}

impl ScenarioSet {
    pub fn new(entries: Vec<(NoiseKind, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::param("scenarios", "at least one scenario is required"));
        }
        for (i, &(kind, p)) in entries.iter().enumerate() {
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::param("scenarios", format!("probability of {kind} must be > 0")));
            }
            if entries[..i].iter().any(|&(k, _)| k == kind) {
                return Err(Error::param("scenarios", format!("{kind} listed twice")));
            }
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param(
                "scenarios",
                format!("probabilities sum to {total}, expected 1"),
            ));
        }
        Ok(Self { entries })
    }

    /// A one-scenario set with probability 1.
    pub fn single(kind: NoiseKind) -> Self {
        Self {
            entries: vec![(kind, 1.0)],
        }
    }

    /// Gaussian 0.4, Rayleigh 0.1, Poisson 0.3, Gamma 0.2.
    pub fn default_mixture() -> Self {
        Self::new(vec![
            (NoiseKind::Gaussian, 0.4),
            (NoiseKind::Rayleigh, 0.1),
            (NoiseKind::Poisson, 0.3),
            (NoiseKind::Gamma, 0.2),
        ])
        .expect("default mixture is valid")
    }

    pub fn entries(&self) -> &[(NoiseKind, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn needs_positive_data(&self) -> bool {
        self.entries.iter().any(|e| e.0.needs_positive_data())
    }
}

impl fmt::Display for ScenarioSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, p)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}:{p}")?;
        }
        Ok(())
    }
}

impl FromStr for ScenarioSet {
    type Err = Error;

    /// Parses `gaussian:0.4,rayleigh:0.1,...`.
    fn from_str(s: &str) -> Result<Self> {
        let entries = s
            .split(',')
            .map(|item| {
                let (kind, p) = item
                    .split_once(':')
                    .ok_or_else(|| Error::param("scenarios", format!("`{item}` is not kind:probability")))?;
                let p: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::param("scenarios", format!("bad probability `{p}`")))?;
                Ok((kind.parse()?, p))
            })
            .collect::<Result<Vec<_>>>()?;
        ScenarioSet::new(entries)
    }
}

#[inline]
fn q_value(kind: NoiseKind, f: f64, t: &ThetaParams) -> f64 {
    match kind {
        NoiseKind::Gaussian => {
            let r = f - t.mu;
            0.5 * (2.0 * std::f64::consts::PI).ln() + t.sigma.ln() + r * r / (2.0 * t.sigma * t.sigma)
        }
        NoiseKind::Rayleigh => 2.0 * t.sigma.ln() - f.ln() + f * f / (2.0 * t.sigma * t.sigma),
        NoiseKind::Poisson => t.sigma - f * t.sigma.ln(),
        NoiseKind::Gamma => f / t.mu + t.mu.ln(),
    }
}

/// Pointwise potential of a single channel.
pub fn potential(kind: NoiseKind, f: &ScalarField, theta: &ThetaParams) -> Result<ScalarField> {
    theta.validate(kind)?;
    let q = f.map(|v| q_value(kind, v, theta));
    if !q.all_finite() {
        return Err(Error::NonFinite("noise potential"));
    }
    Ok(q)
}

/// Sum of per-channel potentials, one θ per channel.
pub fn coupled_potential(
    kind: NoiseKind,
    f: &MultiChannelField,
    thetas: &[ThetaParams],
) -> Result<ScalarField> {
    if thetas.len() != f.channel_count() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} channel parameters", f.channel_count()),
            got: format!("{}", thetas.len()),
        });
    }
    let mut iter = f.channels().iter().zip(thetas);
    let (c0, t0) = iter.next().expect("at least one channel");
    let mut acc = potential(kind, c0, t0)?;
    for (c, t) in iter {
        let q = potential(kind, c, t)?;
        acc.as_mut_slice()
            .iter_mut()
            .zip(q.as_slice())
            .for_each(|(a, b)| *a += b);
    }
    Ok(acc)
}

/// Maximum-likelihood θ of one region given pointwise region weights.
/// `region` is the 1-based label reported on an empty region.
pub fn estimate_region(
    kind: NoiseKind,
    f: &ScalarField,
    weight: &ScalarField,
    region: usize,
) -> Result<ThetaParams> {
    f.check_same_dims(weight)?;
    let (fs, ws) = (f.as_slice(), weight.as_slice());
    let wsum: f64 = ws.iter().sum();
    if !(wsum > MIN_REGION_WEIGHT) {
        return Err(Error::EmptyRegion {
            region,
            weight: wsum,
        });
    }
    let mean = fs.iter().zip(ws).map(|(f, w)| f * w).sum::<f64>() / wsum;
    let theta = match kind {
        NoiseKind::Gaussian => {
            let var = fs
                .iter()
                .zip(ws)
                .map(|(f, w)| (f - mean) * (f - mean) * w)
                .sum::<f64>()
                / wsum;
            ThetaParams::new(mean, var.sqrt().max(SCALE_FLOOR))
        }
        NoiseKind::Rayleigh => {
            let s2 = fs.iter().zip(ws).map(|(f, w)| f * f * w).sum::<f64>() / (2.0 * wsum);
            ThetaParams::new(mean, s2.sqrt().max(SCALE_FLOOR))
        }
        NoiseKind::Poisson => ThetaParams::new(mean, mean.max(SCALE_FLOOR)),
        NoiseKind::Gamma => ThetaParams::new(mean.max(SCALE_FLOOR), 1.0),
    };
    Ok(theta)
}

/// Foreground (weight φ) and background (weight 1−φ) parameters.
pub fn estimate_two_phase(
    kind: NoiseKind,
    f: &ScalarField,
    phi: &ScalarField,
) -> Result<(ThetaParams, ThetaParams)> {
    let inside = estimate_region(kind, f, phi, 1)?;
    let outside = estimate_region(kind, f, &phi.map(|p| 1.0 - p), 2)?;
    Ok((inside, outside))
}

/// One θ per visibility function χ₁..χₙ₊₁.
pub fn estimate_depth(
    kind: NoiseKind,
    f: &ScalarField,
    chi: &[ScalarField],
) -> Result<Vec<ThetaParams>> {
    chi.iter()
        .enumerate()
        .map(|(h, c)| estimate_region(kind, f, c, h + 1))
        .collect()
}
