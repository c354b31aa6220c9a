use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How generated subjects are allocated to arms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    /// First `n_per_arm` subjects control, the rest experimental.
    #[default]
    Split,
    /// Independent fair coin per subject over `2 * n_per_arm` subjects.
    Coin,
}

impl FromStr for Assignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "split" => Ok(Assignment::Split),
            "coin" => Ok(Assignment::Coin),
            other => Err(Error::Config(format!("unknown assignment `{other}` (split|coin)"))),
        }
    }
}

impl Assignment {
    pub fn as_str(self) -> &'static str {
        match self {
            Assignment::Split => "split",
            Assignment::Coin => "coin",
        }
    }
}

/// Data-generating parameters of a simulated trial with one covariate.
///
/// Per-period arrays have length `K - 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingConfig {
    pub mu_x: f64,
    pub sigma_x: f64,
    pub alpha0: Vec<f64>,
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: Vec<f64>,
    pub sigma_eta: f64,
    pub sigma_eps: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma3: Vec<f64>,
    pub n_per_arm: usize,
    #[serde(default)]
    pub assignment: Assignment,
}

pub const PRESETS: [&str; 4] = ["setting1", "setting2", "setting1-null", "setting2-null"];

impl SettingConfig {
    pub fn setting1() -> Self {
        Self {
            mu_x: 8.0,
            sigma_x: 1.0,
            alpha0: vec![2.3; 3],
            alpha1: vec![-0.3; 3],
            alpha2: vec![-0.4, -0.9, -1.2],
            beta0: 0.2,
            beta1: -0.02,
            beta2: -0.2,
            beta3: vec![0.2, 0.4, 0.7],
            sigma_eta: 0.4,
            sigma_eps: 0.3,
            gamma0: 3.0,
            gamma1: -0.1,
            gamma3: vec![-1.0, -2.0, -2.5],
            n_per_arm: 150,
            assignment: Assignment::Split,
        }
    }

    /// Like [`SettingConfig::setting1`] with a stronger covariate effect on
    /// adherence.
    pub fn setting2() -> Self {
        Self {
            gamma1: -0.25,
            ..Self::setting1()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "setting1" => Ok(Self::setting1()),
            "setting2" => Ok(Self::setting2()),
            "setting1-null" => Ok(make_null(&Self::setting1())),
            "setting2-null" => Ok(make_null(&Self::setting2())),
            other => Err(Error::Config(format!(
                "unknown setting `{other}` (expected one of {})",
                PRESETS.join(", ")
            ))),
        }
    }

    /// Number of assessment periods `K`.
    pub fn k(&self) -> usize {
        self.alpha0.len() + 1
    }

    pub fn n_intermediate(&self) -> usize {
        self.alpha0.len()
    }

    pub fn is_null(&self) -> bool {
        self.beta2 == 0.0 && self.alpha2.iter().all(|a| *a == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.alpha0.len();
        if k == 0 {
            return Err(Error::Config("at least one intermediate period is required".into()));
        }
        for (name, v) in [
            ("alpha1", &self.alpha1),
            ("alpha2", &self.alpha2),
            ("beta3", &self.beta3),
            ("gamma3", &self.gamma3),
        ] {
            if v.len() != k {
                return Err(Error::Config(format!("{name} has {} entries, expected {k}", v.len())));
            }
        }
        for (name, v) in [("sigma_x", self.sigma_x), ("sigma_eta", self.sigma_eta), ("sigma_eps", self.sigma_eps)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and positive, got {v}")));
            }
        }
        let scalars = [self.mu_x, self.beta0, self.beta1, self.beta2, self.gamma0, self.gamma1];
        let arrays = [&self.alpha0, &self.alpha1, &self.alpha2, &self.beta3, &self.gamma3];
        if scalars.iter().chain(arrays.into_iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Config("all coefficients must be finite".into()));
        }
        if self.n_per_arm < 1 {
            return Err(Error::Config("n_per_arm must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses the flat `key = value` format. Arrays are comma separated,
    /// `#` starts a comment and an optional `preset` line seeds the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut base = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                if !entries.is_empty() || base.is_some() {
                    return Err(Error::Config(format!("line {}: preset must come first", i + 1)));
                }
                base = Some(Self::preset(value)?);
            } else {
                entries.push((i + 1, key.to_string(), value.to_string()));
            }
        }
        let has_base = base.is_some();
        let mut cfg = base.unwrap_or_else(Self::setting1);
        let mut seen = std::collections::BTreeSet::new();
        for (line, key, value) in entries {
            if !seen.insert(key.clone()) {
                return Err(Error::Config(format!("line {line}: duplicate key `{key}`")));
            }
            cfg.set(&key, &value)
                .map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        if !has_base {
            let missing: Vec<&str> = Self::KEYS
                .iter()
                .copied()
                .filter(|k| *k != "assignment" && !seen.contains(*k))
                .collect();
            if !missing.is_empty() {
                return Err(Error::Config(format!("missing keys: {}", missing.join(", "))));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    const KEYS: [&'static str; 16] = [
        "mu_x", "sigma_x", "alpha0", "alpha1", "alpha2", "beta0", "beta1", "beta2", "beta3",
        "sigma_eta", "sigma_eps", "gamma0", "gamma1", "gamma3", "n_per_arm", "assignment",
    ];

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let scalar = |v: &str| v.parse::<f64>().map_err(|_| format!("`{key}`: `{v}` is not a number"));
        let array = |v: &str| v.split(',').map(|s| scalar(s.trim())).collect::<std::result::Result<Vec<_>, _>>();
        match key {
            "mu_x" => self.mu_x = scalar(value)?,
            "sigma_x" => self.sigma_x = scalar(value)?,
            "alpha0" => self.alpha0 = array(value)?,
            "alpha1" => self.alpha1 = array(value)?,
            "alpha2" => self.alpha2 = array(value)?,
            "beta0" => self.beta0 = scalar(value)?,
            "beta1" => self.beta1 = scalar(value)?,
            "beta2" => self.beta2 = scalar(value)?,
            "beta3" => self.beta3 = array(value)?,
            "sigma_eta" => self.sigma_eta = scalar(value)?,
            "sigma_eps" => self.sigma_eps = scalar(value)?,
            "gamma0" => self.gamma0 = scalar(value)?,
            "gamma1" => self.gamma1 = scalar(value)?,
            "gamma3" => self.gamma3 = array(value)?,
            "n_per_arm" => {
                self.n_per_arm = value
                    .parse()
                    .map_err(|_| format!("`n_per_arm`: `{value}` is not a count"))?
            }
            "assignment" => self.assignment = value.parse().map_err(|e: Error| e.to_string())?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Serializes to the text format accepted by [`SettingConfig::parse`].
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "mu_x = {}", self.mu_x);
        let _ = writeln!(s, "sigma_x = {}", self.sigma_x);
        let _ = writeln!(s, "alpha0 = {}", join(&self.alpha0));
        let _ = writeln!(s, "alpha1 = {}", join(&self.alpha1));
        let _ = writeln!(s, "alpha2 = {}", join(&self.alpha2));
        let _ = writeln!(s, "beta0 = {}", self.beta0);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "beta3 = {}", join(&self.beta3));
        let _ = writeln!(s, "sigma_eta = {}", self.sigma_eta);
        let _ = writeln!(s, "sigma_eps = {}", self.sigma_eps);
        let _ = writeln!(s, "gamma0 = {}", self.gamma0);
        let _ = writeln!(s, "gamma1 = {}", self.gamma1);
        let _ = writeln!(s, "gamma3 = {}", join(&self.gamma3));
        let _ = writeln!(s, "n_per_arm = {}", self.n_per_arm);
        let _ = writeln!(s, "assignment = {}", self.assignment.as_str());
        s
    }
}

/// Removes the treatment effect on intermediates and outcome, leaving every
/// other coefficient unchanged.
pub fn make_null(cfg: &SettingConfig) -> SettingConfig {
    SettingConfig {
        alpha2: vec![0.0; cfg.alpha2.len()],
        beta2: 0.0,
        ..cfg.clone()
    }
}
