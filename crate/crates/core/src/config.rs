//! Flat `key = value` run configuration.
//!
//! ```text
//! # Burgers instance
//! model = burgers
//! L = 0.5
//! T = 0.35
//! n_x = 4
//! n_t = 8
//! nu = 0.07
//! x_p_index = 2
//! ```
//!
//! `model = scalar` describes `du/dt = f0 + a u + b u^2` with keys `a`, `b`, `f0`,
//! `u0`, `T`, `n_t`. Keys shared by both models: `level`, `scheme`, `eps`, `alpha`,
//! `nu_min`, `nu_max`, `nu_step`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linsys::Scheme;
use crate::polyode::{discretize_burgers, BurgersConfig, Forcing, QuadOde};
use crate::sparse::SparseMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarConfig {
    pub a: f64,
    pub b: f64,
    pub f0: f64,
    pub u0: f64,
    pub horizon: f64,
    pub n_t: usize,
}

impl Default for ScalarConfig {
    fn default() -> Self {
        Self {
            a: -1.0,
            b: 0.1,
            f0: 0.0,
            u0: 0.5,
            horizon: 1.0,
            n_t: 16,
        }
    }
}

impl ScalarConfig {
    pub fn ode(&self) -> Result<QuadOde> {
        let f0 = if self.f0 == 0.0 { Forcing::Zero } else { Forcing::Constant(vec![self.f0]) };
        QuadOde::new(
            f0,
            SparseMatrix::from_triplets(1, 1, [(0, 0, self.a)]),
            SparseMatrix::from_triplets(1, 1, [(0, 0, self.b)]),
            vec![self.u0],
        )
    }
}

#[derive(Clone, Debug)]
pub enum Model {
    Burgers(BurgersConfig),
    Scalar(ScalarConfig),
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::Burgers(_) => "burgers",
            Model::Scalar(_) => "scalar",
        }
    }

    pub fn ode(&self) -> Result<QuadOde> {
        match self {
            Model::Burgers(c) => discretize_burgers(c),
            Model::Scalar(c) => c.ode(),
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            Model::Burgers(c) => c.horizon,
            Model::Scalar(c) => c.horizon,
        }
    }

    pub fn n_t(&self) -> usize {
        match self {
            Model::Burgers(c) => c.n_t,
            Model::Scalar(c) => c.n_t,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: Model,
    pub level: usize,
    pub scheme: Scheme,
    pub eps: f64,
    pub alpha: f64,
    pub nu_min: f64,
    pub nu_max: f64,
    pub nu_step: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: Model::Burgers(BurgersConfig::default()),
            level: 1,
            scheme: Scheme::Backward,
            eps: 0.1,
            alpha: 2.0,
            nu_min: 0.01,
            nu_max: 0.15,
            nu_step: 0.01,
        }
    }
}

const SHARED_KEYS: &[&str] = &["model", "level", "scheme", "eps", "alpha", "nu_min", "nu_max", "nu_step"];
const BURGERS_KEYS: &[&str] = &["L", "T", "n_x", "n_t", "nu", "x_p_index"];
const SCALAR_KEYS: &[&str] = &["a", "b", "f0", "u0", "T", "n_t"];

struct Entries(BTreeMap<String, (usize, String)>);

impl Entries {
    fn take<T: FromStr>(&mut self, key: &str, target: &mut T) -> Result<()> {
        if let Some((line, raw)) = self.0.remove(key) {
            *target = raw.parse().map_err(|_| Error::Config {
                line,
                message: format!("cannot parse value {raw:?} for key {key}"),
            })?;
        }
        Ok(())
    }

    fn line_of(&self, key: &str) -> usize {
        self.0.get(key).map_or(0, |e| e.0)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                message: format!("expected `key = value`, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(Error::Config {
                    line,
                    message: "empty key or value".into(),
                });
            }
            if let Some((first, _)) = entries.insert(key.to_string(), (line, value.to_string())) {
                return Err(Error::Config {
                    line,
                    message: format!("duplicate key {key} (first set on line {first})"),
                });
            }
        }
        let mut entries = Entries(entries);
        let model_name = match entries.0.remove("model") {
            None => "burgers".to_string(),
            Some((line, m)) if m != "burgers" && m != "scalar" => {
                return Err(Error::Config {
                    line,
                    message: format!("unknown model {m:?} (expected burgers or scalar)"),
                })
            }
            Some((_, m)) => m,
        };
        let allowed = if model_name == "burgers" { BURGERS_KEYS } else { SCALAR_KEYS };
        if let Some((key, (line, _))) =
            entries.0.iter().find(|(k, _)| !SHARED_KEYS.contains(&k.as_str()) && !allowed.contains(&k.as_str()))
        {
            return Err(Error::Config {
                line: *line,
                message: format!("unknown key {key} for model {model_name}"),
            });
        }

        let mut cfg = RunConfig::default();
        let model = if model_name == "burgers" {
            let mut b = BurgersConfig::default();
            let line = entries.line_of("x_p_index").max(entries.line_of("n_x")).max(entries.line_of("T"));
            entries.take("L", &mut b.length)?;
            entries.take("T", &mut b.horizon)?;
            entries.take("n_x", &mut b.n_x)?;
            entries.take("n_t", &mut b.n_t)?;
            entries.take("nu", &mut b.nu)?;
            entries.take("x_p_index", &mut b.x_p_index)?;
            b.validate().map_err(|e| Error::Config {
                line,
                message: e.to_string(),
            })?;
            Model::Burgers(b)
        } else {
            let mut s = ScalarConfig::default();
            entries.take("a", &mut s.a)?;
            entries.take("b", &mut s.b)?;
            entries.take("f0", &mut s.f0)?;
            entries.take("u0", &mut s.u0)?;
            let line = entries.line_of("T").max(entries.line_of("n_t"));
            entries.take("T", &mut s.horizon)?;
            entries.take("n_t", &mut s.n_t)?;
            if !(s.horizon > 0.0) || s.n_t < 2 {
                return Err(Error::Config {
                    line,
                    message: "scalar model needs T > 0 and n_t >= 2".into(),
                });
            }
            Model::Scalar(s)
        };
        cfg.model = model;
        let level_line = entries.line_of("level");
        entries.take("level", &mut cfg.level)?;
        if cfg.level == 0 {
            return Err(Error::Config {
                line: level_line,
                message: "level must be at least 1".into(),
            });
        }
        entries.take("scheme", &mut cfg.scheme)?;
        entries.take("eps", &mut cfg.eps)?;
        entries.take("alpha", &mut cfg.alpha)?;
        let range_line = entries.line_of("nu_min").max(entries.line_of("nu_max")).max(entries.line_of("nu_step"));
        entries.take("nu_min", &mut cfg.nu_min)?;
        entries.take("nu_max", &mut cfg.nu_max)?;
        entries.take("nu_step", &mut cfg.nu_step)?;
        if !(cfg.nu_min < cfg.nu_max) || !(cfg.nu_step > 0.0) {
            return Err(Error::Config {
                line: range_line,
                message: "need nu_min < nu_max and nu_step > 0".into(),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn burgers(&self) -> Option<&BurgersConfig> {
        match &self.model {
            Model::Burgers(b) => Some(b),
            Model::Scalar(_) => None,
        }
    }
}
