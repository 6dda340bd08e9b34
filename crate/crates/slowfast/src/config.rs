//! Experiment configuration: TOML-style `key = value` text with sections.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slowfast_core::averaging::ErgodicConfig;
use slowfast_core::control::ControlSettings;
use slowfast_core::fkpde::{Boundary, PdeConfig};
use slowfast_core::model::{BistableExample, ModelParams, RunningCost};
use slowfast_core::simulate::{StepPolicy, StepRule};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("{origin}{}: `{key}` {reason}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Invalid {
        origin: String,
        key: String,
        reason: String,
        line: Option<usize>,
    },
    #[error("{0}: {1}")]
    Io(String, std::io::Error),
}

impl ConfigError {
    /// Parse errors map to exit code 2, validation errors to 3.
    pub fn is_parse(&self) -> bool {
        matches!(self, ConfigError::Parse { .. } | ConfigError::Io(..))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    Barrier,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingMethod {
    Analytic,
    Ergodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryKind {
    NoFlux,
    DirichletOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Fixed,
    EpsilonScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    StandardMc,
    ImportanceSampling,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Only `"bistable"` is built in.
    pub kind: String,
    pub cost: CostKind,
    /// Value of `h` when `cost = "constant"`.
    pub cost_value: f64,
    /// Barrier width `w` of the bistable cost.
    pub width: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub t0: f64,
    pub horizon: f64,
    pub x0: f64,
    pub y0: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: "bistable".into(),
            cost: CostKind::Barrier,
            cost_value: 0.0,
            width: 0.02,
            beta: 1.0,
            epsilon: 0.1,
            t0: 0.0,
            horizon: 1.0,
            x0: -1.0,
            y0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AveragingSection {
    pub method: AveragingMethod,
    /// Ergodic method only.
    pub samples: usize,
    pub dt_fast: f64,
    pub nodes: usize,
    pub a_floor: f64,
}

impl Default for AveragingSection {
    fn default() -> Self {
        Self {
            method: AveragingMethod::Analytic,
            samples: 20_000,
            dt_fast: 0.0,
            nodes: 201,
            a_floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeSection {
    pub n_x: usize,
    pub m: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub boundary: BoundaryKind,
}

impl Default for PdeSection {
    fn default() -> Self {
        let d = PdeConfig::bistable_default();
        Self {
            n_x: d.n_x,
            m: d.m,
            x_lo: d.x_lo,
            x_hi: d.x_hi,
            boundary: BoundaryKind::NoFlux,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub dt: f64,
    pub rule: RuleKind,
    pub eps_factor: f64,
}

impl Default for PolicySection {
    fn default() -> Self {
        let d = StepPolicy::default();
        Self {
            dt: d.dt_slow,
            rule: RuleKind::EpsilonScaled,
            eps_factor: d.eps_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub n: usize,
    pub seed: u64,
    pub mode: Mode,
    pub crossing_threshold: f64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            n: 10_000,
            seed: 1,
            mode: Mode::ImportanceSampling,
            crossing_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSection {
    pub u_cap: f64,
    /// `0` selects the automatic floor.
    pub phi_floor: f64,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            u_cap: ControlSettings::default().u_cap,
            phi_floor: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceSection {
    pub n_s: usize,
    pub n_x: usize,
    pub x_lo: f64,
    pub x_hi: f64,
}

impl Default for SurfaceSection {
    fn default() -> Self {
        Self {
            n_s: 21,
            n_x: 141,
            x_lo: -2.0,
            x_hi: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            epsilons: vec![0.1, 0.03, 0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    /// Coupled pairs per ε for the strong error.
    pub pairs: usize,
    pub epsilons: Vec<f64>,
    pub observations: usize,
    /// Paths for the averaged-dynamics Monte Carlo.
    pub duality_paths: usize,
    pub zero_variance_paths: usize,
}

impl Default for ValidateSection {
    fn default() -> Self {
        Self {
            pairs: 2000,
            epsilons: vec![0.1, 0.025],
            observations: 100,
            duality_paths: 100_000,
            zero_variance_paths: 64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Empty: standard output.
    pub path: String,
    /// Record wall-clock seconds; off keeps files byte-identical across runs.
    pub timing: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub averaging: AveragingSection,
    pub pde: PdeSection,
    pub policy: PolicySection,
    pub sampling: SamplingSection,
    pub control: ControlSection,
    pub surface: SurfaceSection,
    pub sweep: SweepSection,
    pub validate: ValidateSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(origin.clone(), e))?;
        Self::parse_named(&text, &origin)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_named(text, "<config>")
    }

    /// Parses config text, or the `#`-commented header of a CSV written by this crate.
    pub fn parse_named(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let text = if looks_like_csv_header(text) {
            extract_header_config(text)
        } else {
            text.to_owned()
        };
        let cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            origin: origin.into(),
            message: diagnose(&e, &text),
        })?;
        cfg.validate().map_err(|e| e.locate(origin, &text))?;
        Ok(cfg)
    }

    /// Resolved config as text; `parse(to_text())` returns an equal value.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    /// Applies a `section.key=value` override; the value uses config syntax.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let origin = format!("--set {assignment}");
        let (path, value) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse {
                origin: origin.clone(),
                message: "expected section.key=value".into(),
            })?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| ConfigError::Parse {
                origin: origin.clone(),
                message: "expected section.key=value".into(),
            })?;
        let mut doc: toml::Table = toml::from_str(&self.to_text()).expect("own output parses");
        let parsed = parse_value(value.trim());
        let table = doc
            .get_mut(section)
            .and_then(|s| s.as_table_mut())
            .ok_or_else(|| ConfigError::Parse {
                origin: origin.clone(),
                message: format!("unknown section `{section}`"),
            })?;
        table.insert(key.to_owned(), parsed);
        let text = toml::to_string(&doc).expect("table serialises");
        let cfg: Self = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            origin: origin.clone(),
            message: e.message().to_owned(),
        })?;
        cfg.validate().map_err(|e| e.locate(&origin, ""))?;
        *self = cfg;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), Invalid> {
        let m = &self.model;
        if m.kind != "bistable" {
            return Err(Invalid::new("model", "kind", "must be \"bistable\""));
        }
        positive("model", "beta", m.beta)?;
        positive("model", "epsilon", m.epsilon)?;
        positive("model", "horizon", m.horizon)?;
        positive("model", "width", m.width)?;
        finite("model", "t0", m.t0)?;
        finite("model", "x0", m.x0)?;
        finite("model", "y0", m.y0)?;
        finite("model", "cost_value", m.cost_value)?;
        let a = &self.averaging;
        if a.method == AveragingMethod::Ergodic {
            at_least("averaging", "samples", a.samples, 2)?;
            at_least("averaging", "nodes", a.nodes, 2)?;
            if !(a.dt_fast >= 0.0) {
                return Err(Invalid::new(
                    "averaging",
                    "dt_fast",
                    "must be ≥ 0 (0 picks ε/20)",
                ));
            }
        }
        nonnegative("averaging", "a_floor", a.a_floor)?;
        let p = &self.pde;
        at_least("pde", "n_x", p.n_x, 3)?;
        at_least("pde", "m", p.m, 1)?;
        if !(p.x_lo < p.x_hi) || !p.x_lo.is_finite() || !p.x_hi.is_finite() {
            return Err(Invalid::new("pde", "x_hi", "must exceed x_lo"));
        }
        if !(p.x_lo < m.x0 && m.x0 < p.x_hi) {
            return Err(Invalid::new(
                "model",
                "x0",
                "must lie inside the PDE domain",
            ));
        }
        positive("policy", "dt", self.policy.dt)?;
        positive("policy", "eps_factor", self.policy.eps_factor)?;
        at_least("sampling", "n", self.sampling.n, 2)?;
        finite(
            "sampling",
            "crossing_threshold",
            self.sampling.crossing_threshold,
        )?;
        positive("control", "u_cap", self.control.u_cap)?;
        nonnegative("control", "phi_floor", self.control.phi_floor)?;
        let s = &self.surface;
        at_least("surface", "n_s", s.n_s, 1)?;
        at_least("surface", "n_x", s.n_x, 1)?;
        if !(s.x_lo <= s.x_hi) {
            return Err(Invalid::new("surface", "x_hi", "must be ≥ x_lo"));
        }
        check_eps_list("sweep", "epsilons", &self.sweep.epsilons)?;
        let v = &self.validate;
        check_eps_list("validate", "epsilons", &v.epsilons)?;
        at_least("validate", "pairs", v.pairs, 2)?;
        at_least("validate", "observations", v.observations, 1)?;
        at_least("validate", "duality_paths", v.duality_paths, 2)?;
        at_least("validate", "zero_variance_paths", v.zero_variance_paths, 2)?;
        Ok(())
    }

    pub fn params(&self) -> ModelParams {
        let m = &self.model;
        ModelParams::new(m.beta, m.epsilon, m.t0, m.horizon, vec![m.x0], vec![m.y0])
            .expect("validated")
    }

    pub fn example(&self) -> BistableExample {
        let cost = match self.model.cost {
            CostKind::Barrier => RunningCost::Barrier,
            CostKind::Constant => RunningCost::Constant(self.model.cost_value),
        };
        BistableExample {
            w: self.model.width,
            cost,
        }
    }

    pub fn pde_config(&self) -> PdeConfig {
        let p = &self.pde;
        let boundary = match p.boundary {
            BoundaryKind::NoFlux => Boundary::NoFlux,
            BoundaryKind::DirichletOne => Boundary::DirichletOne,
        };
        PdeConfig {
            n_x: p.n_x,
            m: p.m,
            x_lo: p.x_lo,
            x_hi: p.x_hi,
            boundary,
        }
    }

    pub fn policy(&self) -> StepPolicy {
        let rule = match self.policy.rule {
            RuleKind::Fixed => StepRule::Fixed,
            RuleKind::EpsilonScaled => StepRule::EpsilonScaled,
        };
        StepPolicy {
            dt_slow: self.policy.dt,
            rule,
            eps_factor: self.policy.eps_factor,
        }
    }

    pub fn control_settings(&self) -> ControlSettings {
        let floor = self.control.phi_floor;
        ControlSettings {
            u_cap: self.control.u_cap,
            phi_floor: (floor > 0.0).then_some(floor),
        }
    }

    pub fn ergodic_config(&self) -> ErgodicConfig {
        let a = &self.averaging;
        let mut c = ErgodicConfig::for_epsilon(self.model.epsilon);
        c.samples = a.samples;
        c.a_floor = a.a_floor;
        if a.dt_fast > 0.0 {
            c.dt_fast = a.dt_fast;
        }
        c
    }
}

/// A failed validation rule, before it is tied to a source location.
#[derive(Debug, Clone, PartialEq)]
pub struct Invalid {
    pub section: &'static str,
    pub key: &'static str,
    pub reason: String,
}

impl Invalid {
    fn new(section: &'static str, key: &'static str, reason: impl Into<String>) -> Self {
        Self {
            section,
            key,
            reason: reason.into(),
        }
    }

    fn locate(self, origin: &str, text: &str) -> ConfigError {
        ConfigError::Invalid {
            origin: origin.into(),
            key: format!("{}.{}", self.section, self.key),
            reason: self.reason,
            line: find_key_line(text, self.section, self.key),
        }
    }
}

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}.{}` {}", self.section, self.key, self.reason)
    }
}

fn positive(section: &'static str, key: &'static str, v: f64) -> Result<(), Invalid> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Invalid::new(
            section,
            key,
            format!("must be positive and finite (got {v})"),
        ))
    }
}

fn nonnegative(section: &'static str, key: &'static str, v: f64) -> Result<(), Invalid> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Invalid::new(section, key, format!("must be ≥ 0 (got {v})")))
    }
}

fn finite(section: &'static str, key: &'static str, v: f64) -> Result<(), Invalid> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Invalid::new(section, key, "must be finite"))
    }
}

fn at_least(section: &'static str, key: &'static str, v: usize, min: usize) -> Result<(), Invalid> {
    if v >= min {
        Ok(())
    } else {
        Err(Invalid::new(
            section,
            key,
            format!("must be ≥ {min} (got {v})"),
        ))
    }
}

fn check_eps_list(section: &'static str, key: &'static str, eps: &[f64]) -> Result<(), Invalid> {
    if eps.is_empty() {
        return Err(Invalid::new(section, key, "must not be empty"));
    }
    if eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Invalid::new(
            section,
            key,
            "must be positive and strictly decreasing",
        ));
    }
    Ok(())
}

/// Unquoted words become strings so `--set sampling.mode=both` works.
fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

fn diagnose(err: &toml::de::Error, text: &str) -> String {
    match err.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {}", err.message())
        }
        None => err.message().to_owned(),
    }
}

fn find_key_line(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = "";
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim();
        } else if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

const HEADER_CONFIG_MARK: &str = "# --- config ---";
const HEADER_END_MARK: &str = "# --- end config ---";

fn looks_like_csv_header(text: &str) -> bool {
    text.lines().any(|l| l.trim_end() == HEADER_CONFIG_MARK)
}

fn extract_header_config(text: &str) -> String {
    text.lines()
        .skip_while(|l| l.trim_end() != HEADER_CONFIG_MARK)
        .skip(1)
        .take_while(|l| l.trim_end() != HEADER_END_MARK)
        .map(|l| {
            l.strip_prefix("# ")
                .or_else(|| l.strip_prefix('#'))
                .unwrap_or(l)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Comment block recording the version and resolved config.
pub fn header_block(cfg: &ExperimentConfig, command: &str) -> String {
    let mut out = format!(
        "# slowfast {} ({command})\n{HEADER_CONFIG_MARK}\n",
        crate::VERSION
    );
    // Where the output went does not affect it; leaving it out keeps reruns byte-identical.
    let mut recorded = cfg.clone();
    recorded.output.path.clear();
    for line in recorded.to_text().lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
    }
    out.push_str(HEADER_END_MARK);
    out.push('\n');
    out
}
