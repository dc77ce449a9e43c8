//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Lists are comma separated and may be
//! empty. Any number may be written as a fraction such as `-1/3`.
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `strikes` (or `strike`) | strike list | required |
//! | `maturity`, `sigma`, `rate`, `alpha`, `spot` | model inputs | required |
//! | `x_max` | far-field cut in log-moneyness | 3 |
//! | `scheme` | `dcu` or `dcsl` | `dcsl` |
//! | `grid` | `uniform` or `refined`, must agree with the scheme | from scheme |
//! | `h` | coarse spacing | required except for `converge` |
//! | `refine_ratio`, `fine_intervals` | refined-grid fine spacing (fraction of `h`) and count | 0.25, 8 |
//! | `gamma` | four estimator offsets in multiples of `h` | (1,2,3,4) or (0.5,1,1.5,2) |
//! | `eps`, `rho`, `k0`, `f_min`, `f_max`, `k_min`, `k_max` | step controller | 1e-6, 0.9, 1e-6, 0.2, 5, 1e-12, T/10 |
//! | `max_stalled` | consecutive rejections at `k_min` before giving up | 20 |
//! | `h_list`, `k` | descending spacings and the fixed step for `converge` | -, 1e-5 |
//! | `eps_list`, `rho_list` | settings for `sweep` | empty |
//! | `timing` | add a wall-time column to `price` | false |
//! | `output` | output path, overridden by `--out` | stdout |

use std::collections::BTreeMap;
use std::path::PathBuf;

use cev_fb::grid::{GridMode, GridSpec};
use cev_fb::{ModelParams, Scheme, StepController};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}{}{message}", line.map(|l| format!("line {l}: ")).unwrap_or_default(), key.as_ref().map(|k| format!("key '{k}': ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, key: &str, message: impl Into<String>) -> Self {
        ConfigError { line: Some(line), key: Some(key.to_string()), message: message.into() }
    }

    fn key(key: &str, message: impl Into<String>) -> Self {
        ConfigError { line: None, key: Some(key.to_string()), message: message.into() }
    }
}

const KEYS: &[&str] = &[
    "strikes", "strike", "maturity", "sigma", "rate", "alpha", "spot", "x_max", "scheme", "grid",
    "h", "refine_ratio", "fine_intervals", "gamma", "eps", "rho", "k0", "f_min", "f_max", "k_min",
    "k_max", "max_stalled", "h_list", "k", "eps_list", "rho_list", "timing", "output",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Model inputs; `strike` is overwritten per strike.
    pub base: ModelParams,
    pub strikes: Vec<f64>,
    pub scheme: Scheme,
    /// Grid template; `h` is overwritten by the convergence ladder.
    pub grid: GridSpec,
    pub h: Option<f64>,
    pub controller: StepController,
    pub h_list: Vec<f64>,
    pub fixed_step: f64,
    pub eps_list: Vec<f64>,
    pub rho_list: Vec<f64>,
    pub timing: bool,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn params(&self, strike: f64) -> ModelParams {
        ModelParams { strike, ..self.base }
    }

    pub fn grid_at(&self, h: f64) -> GridSpec {
        GridSpec { h, ..self.grid }
    }

    pub fn require_h(&self) -> Result<f64, ConfigError> {
        self.h.ok_or_else(|| ConfigError::key("h", "missing required key"))
    }
}

/// Parse a number, accepting `a/b` fractions.
pub fn parse_number(text: &str) -> Option<f64> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((num, den)) => num.trim().parse::<f64>().ok()? / den.trim().parse::<f64>().ok()?,
        None => text.parse::<f64>().ok()?,
    };
    value.is_finite().then_some(value)
}

fn parse_list(line: usize, key: &str, text: &str) -> Result<Vec<f64>, ConfigError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|item| {
            parse_number(item)
                .ok_or_else(|| ConfigError::at(line, key, format!("'{}' is not a number", item.trim())))
        })
        .collect()
}

struct Entries(BTreeMap<String, (usize, String)>);

impl Entries {
    fn number(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.0.get(key) {
            None => Ok(None),
            Some((line, v)) => parse_number(v)
                .map(Some)
                .ok_or_else(|| ConfigError::at(*line, key, format!("'{v}' is not a number"))),
        }
    }

    fn required(&self, key: &str) -> Result<f64, ConfigError> {
        self.number(key)?.ok_or_else(|| ConfigError::key(key, "missing required key"))
    }

    fn count(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.0.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<usize>()
                .map(Some)
                .map_err(|_| ConfigError::at(*line, key, format!("'{v}' is not a non-negative integer"))),
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.0.get(key).map(|(line, v)| parse_list(*line, key, v)).transpose()
    }

    fn text(&self, key: &str) -> Option<(usize, &str)> {
        self.0.get(key).map(|(l, v)| (*l, v.as_str()))
    }
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let mut entries = BTreeMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError {
            line: Some(line),
            key: None,
            message: format!("expected 'key = value', got '{content}'"),
        })?;
        let key = key.trim().to_ascii_lowercase();
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::at(line, &key, "unknown key"));
        }
        if let Some((first, _)) = entries.get(&key) {
            return Err(ConfigError::at(line, &key, format!("duplicate key, first set on line {first}")));
        }
        entries.insert(key, (line, value.trim().to_string()));
    }
    let e = Entries(entries);

    let strikes = match (e.list("strikes")?, e.list("strike")?) {
        (Some(_), Some(_)) => return Err(ConfigError::key("strike", "give either 'strike' or 'strikes'")),
        (Some(s), None) | (None, Some(s)) => s,
        (None, None) => return Err(ConfigError::key("strikes", "missing required key")),
    };
    let base = ModelParams {
        strike: 1.0,
        maturity: e.required("maturity")?,
        sigma: e.required("sigma")?,
        rate: e.required("rate")?,
        alpha: e.required("alpha")?,
        spot: e.required("spot")?,
        x_max: e.number("x_max")?.unwrap_or(3.0),
    };
    base.validate().map_err(|err| ConfigError { line: None, key: None, message: err.to_string() })?;
    for (i, k) in strikes.iter().enumerate() {
        if !(*k > 0.0) {
            let line = e.text("strikes").or(e.text("strike")).map(|t| t.0);
            return Err(ConfigError {
                line,
                key: Some("strikes".into()),
                message: format!("strike #{} must be positive, got {k}", i + 1),
            });
        }
    }

    let scheme = match e.text("scheme") {
        None => Scheme::Dcsl,
        Some((line, v)) => v
            .parse::<Scheme>()
            .map_err(|_| ConfigError::at(line, "scheme", format!("expected 'dcu' or 'dcsl', got '{v}'")))?,
    };
    let mut grid = scheme.grid_spec(1.0, base.x_max);
    if let Some((line, v)) = e.text("grid") {
        let mode = match v.to_ascii_lowercase().as_str() {
            "uniform" => GridMode::Uniform,
            "refined" => GridMode::Refined,
            _ => return Err(ConfigError::at(line, "grid", format!("expected 'uniform' or 'refined', got '{v}'"))),
        };
        if mode != grid.mode {
            return Err(ConfigError::at(
                line,
                "grid",
                format!("scheme {} requires a {} grid", scheme.name(), grid.mode.name()),
            ));
        }
    }
    if let Some(ratio) = e.number("refine_ratio")? {
        if grid.mode == GridMode::Uniform {
            return Err(ConfigError::key("refine_ratio", "only applies to refined grids"));
        }
        grid.refine_ratio = ratio;
    }
    if let Some(n) = e.count("fine_intervals")? {
        if grid.mode == GridMode::Uniform {
            return Err(ConfigError::key("fine_intervals", "only applies to refined grids"));
        }
        grid.fine_intervals = n;
    }
    if let Some(gamma) = e.list("gamma")? {
        let line = e.text("gamma").map(|t| t.0).unwrap_or(0);
        let gamma: [f64; 4] = gamma
            .try_into()
            .map_err(|_| ConfigError::at(line, "gamma", "expected exactly four offsets"))?;
        if scheme == Scheme::Dcu
            && !gamma.iter().enumerate().all(|(i, g)| (g - (i + 1) as f64 * gamma[0]).abs() <= 1e-12 * gamma[0].abs())
        {
            return Err(ConfigError::at(line, "gamma", "the dcu scheme needs equally spaced offsets"));
        }
        grid.gamma = gamma;
    }
    let h = e.number("h")?;
    if let Some(h) = h {
        if !(h > 0.0) {
            return Err(ConfigError::key("h", format!("must be positive, got {h}")));
        }
    }

    let mut controller = StepController::for_horizon(base.maturity);
    let overrides: [(&str, &mut f64); 7] = [
        ("eps", &mut controller.eps),
        ("rho", &mut controller.rho),
        ("k0", &mut controller.k0),
        ("f_min", &mut controller.f_min),
        ("f_max", &mut controller.f_max),
        ("k_min", &mut controller.k_min),
        ("k_max", &mut controller.k_max),
    ];
    for (key, slot) in overrides {
        if let Some(v) = e.number(key)? {
            *slot = v;
        }
    }
    if let Some(n) = e.count("max_stalled")? {
        controller.max_stalled = n;
    }
    controller
        .validate()
        .map_err(|err| ConfigError { line: None, key: None, message: err.to_string() })?;

    let h_list = e.list("h_list")?.unwrap_or_default();
    if h_list.iter().any(|h| !(*h > 0.0)) {
        return Err(ConfigError::key("h_list", "spacings must be positive"));
    }
    if h_list.windows(2).any(|w| w[1] > w[0]) {
        return Err(ConfigError::key("h_list", "spacings must be descending"));
    }
    let fixed_step = e.number("k")?.unwrap_or(1e-5);
    if !(fixed_step > 0.0) {
        return Err(ConfigError::key("k", format!("must be positive, got {fixed_step}")));
    }
    let eps_list = e.list("eps_list")?.unwrap_or_default();
    if eps_list.iter().any(|v| !(*v > 0.0)) {
        return Err(ConfigError::key("eps_list", "tolerances must be positive"));
    }
    let rho_list = e.list("rho_list")?.unwrap_or_default();
    if rho_list.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
        return Err(ConfigError::key("rho_list", "safety factors must lie in (0, 1]"));
    }
    let timing = match e.text("timing") {
        None => false,
        Some((line, v)) => v
            .parse::<bool>()
            .map_err(|_| ConfigError::at(line, "timing", format!("expected true or false, got '{v}'")))?,
    };

    Ok(RunConfig {
        base,
        strikes,
        scheme,
        grid,
        h,
        controller,
        h_list,
        fixed_step,
        eps_list,
        rho_list,
        timing,
        output: e.text("output").map(|(_, v)| PathBuf::from(v)),
    })
}
