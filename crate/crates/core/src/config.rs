//! Solver parameters and the flat `key = value` file grammar shared by
//! solver configs and phantom specs.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Keys may repeat only where the consumer allows it (phantom `shape`).

use std::fmt::Write as _;
use std::path::Path;

use crate::convergence::Tolerances;
use crate::error::{Error, Result};
use crate::noise::ScenarioSet;

/// One parsed `key = value` line.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_kv(text: &str) -> Result<Vec<Entry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
            line: i + 1,
            key: line.to_string(),
            reason: "expected `key = value`".into(),
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::Config {
                line: i + 1,
                key: String::new(),
                reason: "empty key".into(),
            });
        }
        out.push(Entry {
            line: i + 1,
            key: key.to_string(),
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parameters shared by the two-phase and depth solvers.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    /// Length weight of the elastica edge weight `g = α + β|κ|`.
    pub alpha: f64,
    /// Curvature weight of `g`.
    pub beta: f64,
    /// Progressive-hedging proximal weight.
    pub tau: f64,
    /// ADMM penalty.
    pub mu: f64,
    /// Foreground / background data weights (two-phase).
    pub alpha1: f64,
    pub alpha2: f64,
    /// Data weight of every region in the depth model.
    pub data_weight: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub max_outer: usize,
    pub inner_sweeps: usize,
    pub tol: Tolerances,
    pub scenarios: ScenarioSet,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            beta: 25.0,
            tau: 5.0,
            mu: 20.0,
            alpha1: 10.0,
            alpha2: 10.0,
            data_weight: 1.0,
            epsilon: 1e-3,
            eta: 0.5,
            max_outer: 300,
            inner_sweeps: 1,
            tol: Tolerances::default(),
            scenarios: ScenarioSet::default_mixture(),
            seed: 0,
        }
    }
}

pub const CONFIG_KEYS: [&str; 17] = [
    "alpha",
    "beta",
    "tau",
    "mu",
    "alpha1",
    "alpha2",
    "data_weight",
    "epsilon",
    "eta",
    "max_outer",
    "inner_sweeps",
    "tol_tau",
    "tol_phi",
    "tol_w",
    "tol_e",
    "scenarios",
    "seed",
];

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("mu", self.mu),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("data_weight", self.data_weight),
            ("epsilon", self.epsilon),
            ("tol_tau", self.tol.tau),
            ("tol_phi", self.tol.phi),
            ("tol_w", self.tol.w),
            ("tol_e", self.tol.energy),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("must be a positive number, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("must be >= 0, got {v}")));
            }
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::param("eta", format!("must lie in (0, 1), got {}", self.eta)));
        }
        if self.max_outer < 1 {
            return Err(Error::param("max_outer", "must be >= 1"));
        }
        if self.inner_sweeps < 1 {
            return Err(Error::param("inner_sweeps", "must be >= 1"));
        }
        Ok(())
    }

    /// Applies config-file entries on top of the defaults.
    pub fn from_entries(entries: &[Entry]) -> Result<Self> {
        let mut cfg = SolverConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for e in entries {
            let err = |reason: String| Error::Config {
                line: e.line,
                key: e.key.clone(),
                reason,
            };
            if !CONFIG_KEYS.contains(&e.key.as_str()) {
                return Err(err("unknown key".into()));
            }
            if seen.contains(&e.key.as_str()) {
                return Err(err("key given twice".into()));
            }
            seen.push(&e.key);
            let real = || -> Result<f64> {
                e.value
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("`{}` is not a number", e.value)))
            };
            let count = || -> Result<usize> {
                e.value
                    .parse::<usize>()
                    .map_err(|_| err(format!("`{}` is not a non-negative integer", e.value)))
            };
            match e.key.as_str() {
                "alpha" => cfg.alpha = real()?,
                "beta" => cfg.beta = real()?,
                "tau" => cfg.tau = real()?,
                "mu" => cfg.mu = real()?,
                "alpha1" => cfg.alpha1 = real()?,
                "alpha2" => cfg.alpha2 = real()?,
                "data_weight" => cfg.data_weight = real()?,
                "epsilon" => cfg.epsilon = real()?,
                "eta" => cfg.eta = real()?,
                "max_outer" => cfg.max_outer = count()?,
                "inner_sweeps" => cfg.inner_sweeps = count()?,
                "tol_tau" => cfg.tol.tau = real()?,
                "tol_phi" => cfg.tol.phi = real()?,
                "tol_w" => cfg.tol.w = real()?,
                "tol_e" => cfg.tol.energy = real()?,
                "seed" => {
                    cfg.seed = e
                        .value
                        .parse()
                        .map_err(|_| err(format!("`{}` is not an unsigned integer", e.value)))?
                }
                "scenarios" => {
                    cfg.scenarios = e.value.parse().map_err(|x: Error| match x {
                        Error::InvalidParameter { reason, .. } => err(reason),
                        other => err(other.to_string()),
                    })?
                }
                _ => unreachable!(),
            }
        }
        cfg.validate().map_err(|x| match x {
            Error::InvalidParameter { name, reason } => {
                let line = entries.iter().find(|e| e.key == name).map_or(0, |e| e.line);
                Error::Config {
                    line,
                    key: name,
                    reason,
                }
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_entries(&parse_kv(text)?)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_str(&read_text(path.as_ref())?)
    }

    /// Every parameter in `key = value` form, in the order of [`CONFIG_KEYS`].
    /// Parsing the output reproduces `self` exactly.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "alpha = {:?}", self.alpha);
        let _ = writeln!(s, "beta = {:?}", self.beta);
        let _ = writeln!(s, "tau = {:?}", self.tau);
        let _ = writeln!(s, "mu = {:?}", self.mu);
        let _ = writeln!(s, "alpha1 = {:?}", self.alpha1);
        let _ = writeln!(s, "alpha2 = {:?}", self.alpha2);
        let _ = writeln!(s, "data_weight = {:?}", self.data_weight);
        let _ = writeln!(s, "epsilon = {:?}", self.epsilon);
        let _ = writeln!(s, "eta = {:?}", self.eta);
        let _ = writeln!(s, "max_outer = {}", self.max_outer);
        let _ = writeln!(s, "inner_sweeps = {}", self.inner_sweeps);
        let _ = writeln!(s, "tol_tau = {:?}", self.tol.tau);
        let _ = writeln!(s, "tol_phi = {:?}", self.tol.phi);
        let _ = writeln!(s, "tol_w = {:?}", self.tol.w);
        let _ = writeln!(s, "tol_e = {:?}", self.tol.energy);
        let _ = writeln!(s, "scenarios = {}", self.scenarios);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseKind;

    #[test]
    fn missing_keys_take_defaults() {
        let cfg = SolverConfig::parse_str("alpha = 2\n# comment\n\nbeta = 10 # trailing\n").unwrap();
        assert_eq!(cfg.alpha, 2.0);
        assert_eq!(cfg.beta, 10.0);
        assert_eq!(cfg.tau, 5.0);
        assert_eq!(cfg.mu, 20.0);
        assert_eq!(cfg.scenarios, ScenarioSet::default_mixture());
    }

    #[test]
    fn scenario_lines() {
        let cfg = SolverConfig::parse_str("scenarios = gaussian:1.0").unwrap();
        assert_eq!(cfg.scenarios, ScenarioSet::single(NoiseKind::Gaussian));
        let cfg = SolverConfig::parse_str("scenarios = gaussian:0.4,rayleigh:0.1,poisson:0.3,gamma:0.2").unwrap();
        assert_eq!(cfg.scenarios.probabilities(), vec![0.4, 0.1, 0.3, 0.2]);
        let err = SolverConfig::parse_str("tau = 5\nscenarios = gaussian:0.5,gamma:0.6").unwrap_err();
        match err {
            Error::Config { line, key, .. } => {
                assert_eq!(line, 2);
                assert_eq!(key, "scenarios");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        for (text, key) in [
            ("gamma = 1", "gamma"),
            ("tau = -1", "tau"),
            ("alpha = x", "alpha"),
            ("beta = -2", "beta"),
            ("eta = 1.0", "eta"),
            ("max_outer = 0", "max_outer"),
            ("mu = 1\nmu = 2", "mu"),
        ] {
            match SolverConfig::parse_str(text) {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(SolverConfig::parse_str("no equals sign"), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn kv_string_round_trips() {
        let mut cfg = SolverConfig::default();
        cfg.epsilon = 0.1 + 0.2;
        cfg.seed = 99;
        cfg.scenarios = ScenarioSet::single(NoiseKind::Gamma);
        assert_eq!(SolverConfig::parse_str(&cfg.to_kv_string()).unwrap(), cfg);
    }
}
