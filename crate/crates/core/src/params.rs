//! Model constants, their validation, and the derived symbols every formula uses.
//!
//! All rates are per week.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Model constants. Field names follow the config keys (see [`EpidemicParams::KEYS`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpidemicParams {
    /// Transmission rate.
    pub beta: f64,
    /// Death rate without treatment.
    pub mu0: f64,
    /// Death rate under treatment.
    pub mu1: f64,
    /// Recovery rate without treatment.
    pub k0: f64,
    /// Initial recovery rate under treatment.
    pub k1_0: f64,
    /// Long-run recovery rate under treatment.
    pub kbar1: f64,
    /// Volatility of the treatment outcome.
    pub sigma: f64,
    /// Volatility of changes in the treated recovery rate.
    pub sigma_k: f64,
    /// Mean-reversion speed of the treated recovery rate.
    pub lambda_k: f64,
    /// Transmission noise volatility. Zero is the low-infection setting.
    pub sigma_s: f64,
    /// Risk aversion, strictly negative.
    pub gamma: f64,
    /// Horizon in weeks.
    pub horizon: f64,
    /// Initial infected proportion I(0).
    pub epsilon: f64,
    /// Initial susceptible proportion S(0).
    pub s0: f64,
    /// Simulation step.
    pub dt: f64,
}

impl Default for EpidemicParams {
    fn default() -> Self {
        let epsilon = 0.01;
        EpidemicParams {
            beta: 0.025,
            mu0: 0.0575,
            mu1: 0.0575,
            k0: 0.2559,
            k1_0: 0.2559,
            kbar1: 0.4612,
            sigma: 0.4418,
            sigma_k: -1.1647,
            lambda_k: 0.7692,
            sigma_s: 0.0,
            gamma: -1.0,
            horizon: 21.0,
            epsilon,
            s0: 1.0 - epsilon,
            dt: 0.001,
        }
    }
}

/// Symbols derived from [`EpidemicParams`]; none depend on gamma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedParams {
    pub mu: f64,
    pub r: f64,
    pub b: f64,
    pub xbar: f64,
    pub sigma_x: f64,
    pub lambda_x: f64,
    pub theta_sharpe: f64,
    /// X(0) = (K0 + mu0 - mu1 - K1_0) / sigma.
    pub x0: f64,
    /// Copy of sigma, so kernels need only the derived set.
    pub sigma: f64,
}

impl EpidemicParams {
    /// Config keys, in the order they are written.
    pub const KEYS: [&'static str; 15] = [
        "beta", "mu0", "mu1", "K0", "K1_0", "kbar1", "sigma", "sigma_k", "lambda_k", "sigma_S",
        "gamma", "T", "epsilon", "S0", "dt",
    ];

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "beta" => &mut self.beta,
            "mu0" => &mut self.mu0,
            "mu1" => &mut self.mu1,
            "K0" => &mut self.k0,
            "K1_0" => &mut self.k1_0,
            "kbar1" => &mut self.kbar1,
            "sigma" => &mut self.sigma,
            "sigma_k" => &mut self.sigma_k,
            "lambda_k" => &mut self.lambda_k,
            "sigma_S" => &mut self.sigma_s,
            "gamma" => &mut self.gamma,
            "T" => &mut self.horizon,
            "epsilon" => &mut self.epsilon,
            "S0" => &mut self.s0,
            "dt" => &mut self.dt,
            _ => return None,
        })
    }

    fn values(&self) -> [f64; 15] {
        [
            self.beta,
            self.mu0,
            self.mu1,
            self.k0,
            self.k1_0,
            self.kbar1,
            self.sigma,
            self.sigma_k,
            self.lambda_k,
            self.sigma_s,
            self.gamma,
            self.horizon,
            self.epsilon,
            self.s0,
            self.dt,
        ]
    }

    /// Checks every field constraint and cross-field invariant.
    pub fn validate(&self) -> Result<()> {
        for (key, v) in Self::KEYS.iter().zip(self.values()) {
            if !v.is_finite() {
                return Err(Error::invalid(key, format!("must be finite, got {v}")));
            }
        }
        let nonneg = [
            ("beta", self.beta),
            ("mu0", self.mu0),
            ("mu1", self.mu1),
            ("K0", self.k0),
            ("sigma_S", self.sigma_s),
        ];
        for (key, v) in nonneg {
            if v < 0.0 {
                return Err(Error::invalid(key, format!("must be non-negative, got {v}")));
            }
        }
        if self.gamma >= 0.0 {
            return Err(Error::invalid("gamma", "gamma must be negative"));
        }
        if self.sigma == 0.0 {
            return Err(Error::invalid("sigma", "sigma must be non-zero"));
        }
        if self.lambda_k <= 0.0 {
            return Err(Error::invalid("lambda_k", "must be positive"));
        }
        if self.mu0 < self.mu1 {
            return Err(Error::invalid("mu0", "mu0 must be at least mu1"));
        }
        if self.horizon <= 0.0 {
            return Err(Error::invalid("T", "must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid("epsilon", "must lie in (0, 1)"));
        }
        if !(self.s0 > 0.0 && self.s0 <= 1.0) {
            return Err(Error::invalid("S0", "must lie in (0, 1]"));
        }
        if self.epsilon + self.s0 > 1.0 + 1e-12 {
            return Err(Error::invalid("S0", "epsilon + S0 must not exceed 1"));
        }
        if self.dt <= 0.0 || self.dt >= self.horizon {
            return Err(Error::invalid("dt", "must lie in (0, T)"));
        }
        if self.sigma < 0.0 {
            log::warn!("sigma = {} is negative; using it as given", self.sigma);
        }
        Ok(())
    }

    /// Parses `key=value` lines; '#' starts a comment. Unset keys keep their
    /// defaults, and S0 defaults to 1 - epsilon.
    pub fn from_config_str(text: &str, origin: &Path) -> Result<Self> {
        let mut p = EpidemicParams::default();
        let mut s0_set = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, got {line:?}")))?;
            let key = key.trim();
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("{key}: not a number: {:?}", value.trim())))?;
            s0_set |= key == "S0";
            let slot = p
                .slot(key)
                .ok_or_else(|| parse_err(format!("unknown key {key:?}")))?;
            *slot = value;
        }
        if !s0_set {
            p.s0 = 1.0 - p.epsilon;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        for (key, v) in Self::KEYS.iter().zip(self.values()) {
            let _ = writeln!(out, "{key}={v}");
        }
        out
    }

    /// Short digest of the canonical config text, for run metadata.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.to_config_text().as_bytes());
        hex::encode(&digest[..8])
    }

    /// Copy with gamma replaced.
    pub fn with_gamma(&self, gamma: f64) -> Self {
        EpidemicParams { gamma, ..*self }
    }
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<EpidemicParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    EpidemicParams::from_config_str(&text, path)
}

pub fn derive(p: &EpidemicParams) -> Result<DerivedParams> {
    if p.sigma == 0.0 || !p.sigma.is_finite() {
        return Err(Error::invalid("sigma", "sigma must be non-zero"));
    }
    let mu = p.k0 + p.mu0;
    let treated = p.mu1 + p.kbar1;
    let r = p.beta - mu;
    let b = p.beta - treated;
    Ok(DerivedParams {
        mu,
        r,
        b,
        xbar: (mu - treated) / p.sigma,
        sigma_x: p.sigma_k / p.sigma,
        lambda_x: p.lambda_k,
        theta_sharpe: (b - r) / p.sigma,
        x0: (mu - (p.mu1 + p.k1_0)) / p.sigma,
        sigma: p.sigma,
    })
}
