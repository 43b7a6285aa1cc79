//! Plain-text run configuration: `key = value` lines, `#` comments.
//!
//! Precedence is defaults, then the file, then command-line overrides.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Hyperparams, SceneSpec};
use crate::pipeline::FitConfig;

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub hyper: Hyperparams,
    pub fit: FitConfig,
}

/// Recognised keys with their one-line descriptions, in dump order.
pub const KEYS: &[(&str, &str)] = &[
    ("k", "number of classes"),
    ("mu0", "prior mean of the basis"),
    ("sigma0", "prior precision of the basis mean"),
    ("phi_rho", "rate of the basis-precision prior"),
    ("gamma_rho", "shape of the basis-precision prior"),
    ("phi_upsilon", "rate of the line-field prior"),
    ("gamma_upsilon", "shape of the line-field prior"),
    ("phi_omega", "rate of the boundary-field prior"),
    ("gamma_omega", "shape of the boundary-field prior"),
    ("alpha_pi", "first Beta parameter of the class probabilities"),
    ("beta_pi", "second Beta parameter of the class probabilities"),
    ("lambda", "weight of the variational loss"),
    ("max_sweeps", "sweep limit (at most 2000)"),
    ("grad_steps_per_sweep", "Adam steps per sweep"),
    ("learning_rate", "initial Adam step size"),
    ("lr_decay_every", "sweeps between step-size decays"),
    ("lr_decay_factor", "step-size decay factor"),
    ("convergence_tol", "relative change of the 5-sweep moving average that stops the fit"),
    ("seed", "base random seed"),
    ("exact_rho_expectation", "refresh the basis precision from the exact residual expectation"),
    ("mc_samples", "Monte-Carlo samples per loss evaluation"),
];

fn parse<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse {value:?} as {}", std::any::type_name::<T>()))
}

impl RunConfig {
    /// Sets one key. Errors are plain messages; callers attach location.
    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let (h, f) = (&mut self.hyper, &mut self.fit);
        match key {
            "k" => h.k = parse(value)?,
            "mu0" => h.mu0 = parse(value)?,
            "sigma0" => h.sigma0 = parse(value)?,
            "phi_rho" => h.phi_rho = parse(value)?,
            "gamma_rho" => h.gamma_rho = parse(value)?,
            "phi_upsilon" => h.phi_upsilon = parse(value)?,
            "gamma_upsilon" => h.gamma_upsilon = parse(value)?,
            "phi_omega" => h.phi_omega = parse(value)?,
            "gamma_omega" => h.gamma_omega = parse(value)?,
            "alpha_pi" => h.alpha_pi = parse(value)?,
            "beta_pi" => h.beta_pi = parse(value)?,
            "lambda" => h.lambda = parse(value)?,
            "max_sweeps" => f.max_sweeps = parse(value)?,
            "grad_steps_per_sweep" => f.grad_steps_per_sweep = parse(value)?,
            "learning_rate" => f.learning_rate = parse(value)?,
            "lr_decay_every" => f.lr_decay_every = parse(value)?,
            "lr_decay_factor" => f.lr_decay_factor = parse(value)?,
            "convergence_tol" => f.convergence_tol = parse(value)?,
            "seed" => f.seed = parse(value)?,
            "exact_rho_expectation" => f.exact_rho_expectation = parse(value)?,
            "mc_samples" => f.mc_samples = parse(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let (h, f) = (&self.hyper, &self.fit);
        match key {
            "k" => h.k.to_string(),
            "mu0" => h.mu0.to_string(),
            "sigma0" => h.sigma0.to_string(),
            "phi_rho" => h.phi_rho.to_string(),
            "gamma_rho" => h.gamma_rho.to_string(),
            "phi_upsilon" => h.phi_upsilon.to_string(),
            "gamma_upsilon" => h.gamma_upsilon.to_string(),
            "phi_omega" => h.phi_omega.to_string(),
            "gamma_omega" => h.gamma_omega.to_string(),
            "alpha_pi" => h.alpha_pi.to_string(),
            "beta_pi" => h.beta_pi.to_string(),
            "lambda" => h.lambda.to_string(),
            "max_sweeps" => f.max_sweeps.to_string(),
            "grad_steps_per_sweep" => f.grad_steps_per_sweep.to_string(),
            "learning_rate" => f.learning_rate.to_string(),
            "lr_decay_every" => f.lr_decay_every.to_string(),
            "lr_decay_factor" => f.lr_decay_factor.to_string(),
            "convergence_tol" => f.convergence_tol.to_string(),
            "seed" => f.seed.to_string(),
            "exact_rho_expectation" => f.exact_rho_expectation.to_string(),
            "mc_samples" => f.mc_samples.to_string(),
            _ => unreachable!("key table and accessors disagree"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.fit.validate()
    }

    /// The effective configuration in the file syntax.
    pub fn dump(&self) -> String {
        KEYS.iter()
            .map(|(k, _)| format!("{k} = {}\n", self.get(k)))
            .collect()
    }
}

/// Splits `key = value` lines. Returns `(line number, key, value)`.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigSyntax {
            line: i + 1,
            message: format!("expected `key = value`, found {line:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::ConfigSyntax {
                line: i + 1,
                message: "empty key or value".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn check_unknown<'a>(keys: impl Iterator<Item = &'a str>, known: &[&str]) -> Result<()> {
    let unknown: Vec<String> = keys
        .filter(|k| !known.contains(k))
        .map(str::to_string)
        .collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::UnknownKeys(unknown))
    }
}

/// Builds the effective configuration from file text and `key=value`
/// overrides, then checks every constraint.
pub fn parse_config(file: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
    let lines = parse_lines(file)?;
    let known: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
    check_unknown(
        lines.iter().map(|(_, k, _)| k.as_str()).chain(overrides.iter().map(|(k, _)| k.as_str())),
        &known,
    )?;
    let mut cfg = RunConfig::default();
    for (line, k, v) in &lines {
        cfg.set(k, v).map_err(|message| Error::ConfigSyntax {
            line: *line,
            message: format!("{k}: {message}"),
        })?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)
            .map_err(|message| Error::Invalid(format!("override {k}: {message}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Invalid(format!("override {s:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Scene description: a preset name (`standard` or `clean`) or file text
/// with the keys `preset`, `width`, `height`, `k`, `levels` (comma list),
/// `bias_amplitude` and `noise_sigma`. `k` applies when no file sets it.
pub fn parse_scene(source: &str, k: usize) -> Result<SceneSpec> {
    match source.trim() {
        "standard" => return Ok(SceneSpec::standard(k)),
        "clean" => return Ok(SceneSpec::clean(k)),
        _ => {}
    }
    let lines = parse_lines(source)?;
    let known = ["preset", "width", "height", "k", "levels", "bias_amplitude", "noise_sigma"];
    check_unknown(lines.iter().map(|(_, k, _)| k.as_str()), &known)?;
    let map: BTreeMap<&str, (usize, &str)> = lines
        .iter()
        .map(|(l, k, v)| (k.as_str(), (*l, v.as_str())))
        .collect();
    let field = |key: &str| map.get(key).copied();
    let err = |line: usize, key: &str, msg: String| Error::ConfigSyntax {
        line,
        message: format!("{key}: {msg}"),
    };
    let k = match field("k") {
        Some((l, v)) => parse::<usize>(v).map_err(|m| err(l, "k", m))?,
        None => k,
    };
    let mut spec = match field("preset") {
        None | Some((_, "standard")) => SceneSpec::standard(k),
        Some((_, "clean")) => SceneSpec::clean(k),
        Some((l, other)) => return Err(err(l, "preset", format!("unknown preset {other:?}"))),
    };
    if let Some((l, v)) = field("width") {
        spec.width = parse(v).map_err(|m| err(l, "width", m))?;
    }
    if let Some((l, v)) = field("height") {
        spec.height = parse(v).map_err(|m| err(l, "height", m))?;
    }
    if let Some((l, v)) = field("levels") {
        spec.levels = v
            .split(',')
            .map(|s| parse::<f64>(s.trim()))
            .collect::<std::result::Result<_, _>>()
            .map_err(|m| err(l, "levels", m))?;
    }
    if let Some((l, v)) = field("bias_amplitude") {
        spec.bias_amplitude = parse(v).map_err(|m| err(l, "bias_amplitude", m))?;
    }
    if let Some((l, v)) = field("noise_sigma") {
        spec.noise_sigma = parse(v).map_err(|m| err(l, "noise_sigma", m))?;
    }
    spec.validate()?;
    Ok(spec)
}
