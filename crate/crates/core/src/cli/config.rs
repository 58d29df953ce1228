//! Flat `[section] key = value` experiment configs.
//!
//! ```text
//! # comments run to end of line
//! [meta]
//! k = 16
//! preset = orthonormal
//! [pool]
//! t_l1 = 2, 4, 8      # lists are comma-separated
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::datagen::GenPreset;
use crate::error::{Error, Result};
use crate::model::PoolSizes;

const SCHEMA: &[(&str, &[&str])] = &[
    ("meta", &["k", "d", "preset", "delta", "sigma"]),
    ("pool", &["n_l1", "t_l1", "n_h", "t_h", "n_l2", "t_l2"]),
    ("pipeline", &["L", "tau", "em_max_iters", "em_tol"]),
    ("bench", &["trials", "repeats", "confidence", "gamma2_grid"]),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetKind {
    Orthonormal,
    RandomUnit,
    LowerBound,
}

impl PresetKind {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "orthonormal" => Ok(Self::Orthonormal),
            "random-unit" => Ok(Self::RandomUnit),
            "lower-bound" => Ok(Self::LowerBound),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected orthonormal, random-unit or lower-bound)"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Orthonormal => "orthonormal",
            Self::RandomUnit => "random-unit",
            Self::LowerBound => "lower-bound",
        }
    }
}

/// Fully resolved experiment configuration.
///
/// Pool entries are lists so that benches can sweep them; single-run
/// commands require exactly one value.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub k: usize,
    pub d: usize,
    pub preset: PresetKind,
    pub delta: f64,
    pub sigma: f64,
    pub n_l1: Vec<usize>,
    pub t_l1: Vec<usize>,
    pub n_h: Vec<usize>,
    pub t_h: Vec<usize>,
    pub n_l2: Vec<usize>,
    pub t_l2: Vec<usize>,
    /// Median batches for clustering; 0 picks automatically.
    pub l: usize,
    pub tau: usize,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub trials: usize,
    pub repeats: usize,
    pub confidence: f64,
    pub gamma2_grid: Vec<f64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            k: 16,
            d: 128,
            preset: PresetKind::Orthonormal,
            delta: 1.0,
            sigma: 1.0,
            n_l1: vec![65536],
            t_l1: vec![8],
            n_h: vec![256],
            t_h: vec![80],
            n_l2: vec![512],
            t_l2: vec![40],
            l: 0,
            tau: 60,
            em_max_iters: 500,
            em_tol: 1e-7,
            trials: 10,
            repeats: 3,
            confidence: 0.9,
            gamma2_grid: vec![0.0, 0.5],
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses config text over the defaults. Unknown sections or keys,
    /// duplicates and malformed values are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section: Option<&str> = None;
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                let known = SCHEMA.iter().find(|(s, _)| *s == name).ok_or_else(|| at(format!("unknown section [{name}]")))?;
                section = Some(known.0);
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            let sec = section.ok_or_else(|| at(format!("key '{key}' outside any section")))?;
            let keys = SCHEMA.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
            if !keys.contains(&key) {
                return Err(at(format!("unknown key '{key}' in [{sec}]")));
            }
            if seen.insert(key.to_string(), lineno).is_some() {
                return Err(at(format!("duplicate key '{key}'")));
            }
            cfg.set(key, value).map_err(|e| at(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "k" => self.k = int(v)?,
            "d" => self.d = int(v)?,
            "preset" => self.preset = PresetKind::parse(v)?,
            "delta" => self.delta = float(v)?,
            "sigma" => self.sigma = float(v)?,
            "n_l1" => self.n_l1 = int_list(v)?,
            "t_l1" => self.t_l1 = int_list(v)?,
            "n_h" => self.n_h = int_list(v)?,
            "t_h" => self.t_h = int_list(v)?,
            "n_l2" => self.n_l2 = int_list(v)?,
            "t_l2" => self.t_l2 = int_list(v)?,
            "L" => self.l = int(v)?,
            "tau" => self.tau = int(v)?,
            "em_max_iters" => self.em_max_iters = int(v)?,
            "em_tol" => self.em_tol = float(v)?,
            "trials" => self.trials = int(v)?,
            "repeats" => self.repeats = int(v)?,
            "confidence" => self.confidence = float(v)?,
            "gamma2_grid" => self.gamma2_grid = list(v, float)?,
            _ => unreachable!("schema checked"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k == 0 || self.d < self.k {
            return bad(format!("need d >= k >= 1, got k={}, d={}", self.k, self.d));
        }
        if !(self.sigma > 0.0) || !(self.delta > 0.0) {
            return bad("sigma and delta must be positive".into());
        }
        if self.t_l1.iter().any(|&t| t < 2) {
            return bad("t_l1 must be at least 2".into());
        }
        for (name, v) in [
            ("n_l1", &self.n_l1),
            ("n_h", &self.n_h),
            ("t_h", &self.t_h),
            ("n_l2", &self.n_l2),
            ("t_l2", &self.t_l2),
        ] {
            if v.is_empty() || v.contains(&0) {
                return bad(format!("{name} values must be positive"));
            }
        }
        if self.tau == 0 || self.trials == 0 || self.repeats == 0 {
            return bad("tau, trials and repeats must be positive".into());
        }
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return bad(format!("confidence must lie in (0, 1], got {}", self.confidence));
        }
        if !(self.em_tol >= 0.0) || self.gamma2_grid.iter().any(|g| !(*g >= 0.0)) {
            return bad("em_tol and gamma2_grid entries must be non-negative".into());
        }
        Ok(())
    }

    /// The generator preset. The lower-bound layout is shrunk to unit scale
    /// when `delta` and `sigma` overshoot.
    pub fn gen_preset(&self) -> GenPreset {
        match self.preset {
            PresetKind::Orthonormal => GenPreset::Orthonormal { sigma: self.sigma },
            PresetKind::RandomUnit => GenPreset::RandomUnit { sigma: self.sigma },
            PresetKind::LowerBound => GenPreset::LowerBound {
                delta: self.delta,
                sigma: self.sigma,
                rescale: true,
            },
        }
    }

    /// Pool sizes for a single run; every pool key must hold one value.
    pub fn pool_sizes(&self) -> Result<PoolSizes> {
        let one = |name: &str, v: &[usize]| match v {
            [x] => Ok(*x),
            _ => Err(Error::Config(format!("{name} must be a single value here, got {v:?}"))),
        };
        Ok(PoolSizes {
            n_l1: one("n_l1", &self.n_l1)?,
            t_l1: one("t_l1", &self.t_l1)?,
            n_h: one("n_h", &self.n_h)?,
            t_h: one("t_h", &self.t_h)?,
            n_l2: one("n_l2", &self.n_l2)?,
            t_l2: one("t_l2", &self.t_l2)?,
        })
    }

    /// Canonical text: every key, schema order. Parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (section, keys) in SCHEMA {
            let _ = writeln!(out, "[{section}]");
            for key in *keys {
                let _ = writeln!(out, "{key} = {}", self.value(key));
            }
        }
        out
    }

    fn value(&self, key: &str) -> String {
        let ints = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
        match key {
            "k" => self.k.to_string(),
            "d" => self.d.to_string(),
            "preset" => self.preset.name().to_string(),
            "delta" => fmt_f64(self.delta),
            "sigma" => fmt_f64(self.sigma),
            "n_l1" => ints(&self.n_l1),
            "t_l1" => ints(&self.t_l1),
            "n_h" => ints(&self.n_h),
            "t_h" => ints(&self.t_h),
            "n_l2" => ints(&self.n_l2),
            "t_l2" => ints(&self.t_l2),
            "L" => self.l.to_string(),
            "tau" => self.tau.to_string(),
            "em_max_iters" => self.em_max_iters.to_string(),
            "em_tol" => fmt_f64(self.em_tol),
            "trials" => self.trials.to_string(),
            "repeats" => self.repeats.to_string(),
            "confidence" => fmt_f64(self.confidence),
            "gamma2_grid" => self.gamma2_grid.iter().map(|g| fmt_f64(*g)).collect::<Vec<_>>().join(", "),
            _ => unreachable!("schema key"),
        }
    }

    /// Every key with its resolved value, for reports.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        SCHEMA
            .iter()
            .flat_map(|(_, keys)| keys.iter())
            .map(|k| (k.to_string(), self.value(k)))
            .collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

// Shortest round-tripping representation.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn int(v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Config(format!("expected a non-negative integer, got '{v}'")))
}

fn float(v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Config(format!("expected a finite number, got '{v}'")))
}

fn list<X>(v: &str, f: fn(&str) -> Result<X>) -> Result<Vec<X>> {
    v.split(',').map(|s| f(s.trim())).collect()
}

fn int_list(v: &str) -> Result<Vec<usize>> {
    list(v, int)
}
