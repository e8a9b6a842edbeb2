//! Run configuration: TOML with one table per problem family.
//!
//! Every table is optional and filled with defaults. Unknown keys are rejected
//! with the closest known key as a suggestion.

use std::fmt;
use std::path::{Path, PathBuf};

use dualact::optcore::NewtonConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config syntax error: {0}")]
    Syntax(String),
    #[error("unknown key `{key}`{}", suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey { key: String, suggestion: Option<String> },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Algebraic,
    Ibvp,
    Disloc,
    Fdmpoint,
    Verify,
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Subcommand::Algebraic => "algebraic",
            Subcommand::Ibvp => "ibvp",
            Subcommand::Disloc => "disloc",
            Subcommand::Fdmpoint => "fdmpoint",
            Subcommand::Verify => "verify",
        };
        f.write_str(s)
    }
}

/// Overrides applied on top of each solver's own Newton defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOverrides {
    pub grad_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub linear_tol: Option<f64>,
}

impl SolverOverrides {
    pub fn apply(&self, mut cfg: NewtonConfig) -> NewtonConfig {
        if let Some(v) = self.grad_tol {
            cfg.grad_tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.linear_tol {
            cfg.linear_tol = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgebraicProblem {
    Linear,
    CircleLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgebraicConfig {
    pub problem: AlgebraicProblem,
    pub equations: usize,
    pub unknowns: usize,
    /// Right-hand side in the column space of the random matrix.
    pub consistent: bool,
    /// Size of the component of `b` orthogonal to the column space.
    pub perturbation: f64,
    /// Coefficient of `H = ½ c ‖x − x̄‖²`.
    pub c: f64,
    /// Second coefficient for the circle-line invariance check.
    pub c_alt: f64,
    /// Base point `x̄` for the circle-line problem.
    pub base: Vec<f64>,
}

impl Default for AlgebraicConfig {
    fn default() -> Self {
        Self {
            problem: AlgebraicProblem::Linear,
            equations: 10,
            unknowns: 20,
            consistent: true,
            perturbation: 1.0,
            c: 1.0,
            c_alt: 10.0,
            base: vec![1.0, 0.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IbvpProblemKind {
    Heat,
    Transport,
    Burgers,
    Manufactured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialShape {
    Sine,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IbvpConfig {
    pub problem: IbvpProblemKind,
    pub nx: usize,
    pub nt: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub t_final: f64,
    pub kappa: f64,
    pub c_adv: f64,
    /// Coefficient of the Burgers flux.
    pub strength: f64,
    pub ic: InitialShape,
    pub ic_amplitude: f64,
    pub ic_center: f64,
    pub ic_width: f64,
    pub c_u: f64,
    pub c_b: f64,
    pub c_c: f64,
}

impl Default for IbvpConfig {
    fn default() -> Self {
        Self {
            problem: IbvpProblemKind::Heat,
            nx: 64,
            nt: 64,
            x_min: 0.0,
            x_max: 1.0,
            t_final: 0.1,
            kappa: 1.0,
            c_adv: 1.0,
            strength: 1.0,
            ic: InitialShape::Sine,
            ic_amplitude: 1.0,
            ic_center: 0.3,
            ic_width: 0.08,
            c_u: 1.0,
            c_b: 1.0,
            c_c: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VelocityKind {
    Constant,
    Vortex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alpha0Kind {
    Gaussian,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DislocConfig {
    pub mu: f64,
    pub rho_m: f64,
    pub velocity: VelocityKind,
    /// Constant velocity.
    pub v: [f64; 2],
    pub omega: f64,
    pub vortex_center: [f64; 2],
    pub alpha0: Alpha0Kind,
    pub sigma: f64,
    pub center: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub t_final: f64,
    /// Coefficients of the quadratic `M` for `(v, U, α)`.
    pub m: [f64; 3],
    /// Compare α against the characteristic transport oracle.
    pub oracle: bool,
}

impl Default for DislocConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            rho_m: 1.0,
            velocity: VelocityKind::Constant,
            v: [1.0, 0.0],
            omega: 1.0,
            vortex_center: [0.5, 0.5],
            alpha0: Alpha0Kind::Gaussian,
            sigma: 0.07,
            center: [0.3, 0.5],
            nx: 32,
            ny: 32,
            nt: 16,
            t_final: 0.25,
            m: [1.0, 1.0, 0.01],
            oracle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdmpointConfig {
    /// Uniform H coefficients; the first is the reference solve, the list is the sweep.
    pub coeffs: Vec<f64>,
    pub n_samples: usize,
    /// Bound on the entries of the random dual data.
    pub cap: f64,
    pub rho_bar: f64,
    pub velocity: [f64; 3],
    pub tol: f64,
}

impl Default for FdmpointConfig {
    fn default() -> Self {
        Self { coeffs: vec![1e3, 1e4, 1e5], n_samples: 20, cap: 1.0, rho_bar: 1.0, velocity: [0.0; 3], tol: 1e-10 }
    }
}

/// Tolerances of the `verify` suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub fd_rel_tol: f64,
    pub fenchel_tol: f64,
    pub oracle_tol: f64,
    pub algebraic_tol: f64,
    pub residual_tol: f64,
    pub curl_tol: f64,
    pub drift_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            fd_rel_tol: 1e-6,
            fenchel_tol: 1e-12,
            oracle_tol: 5e-2,
            algebraic_tol: 1e-6,
            residual_tol: 1e-10,
            curl_tol: 1e-6,
            drift_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Optional; must agree with the command line when given.
    pub subcommand: Option<Subcommand>,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub solver: SolverOverrides,
    pub algebraic: AlgebraicConfig,
    pub ibvp: IbvpConfig,
    pub disloc: DislocConfig,
    pub fdmpoint: FdmpointConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: None,
            seed: 42,
            output: None,
            solver: SolverOverrides::default(),
            algebraic: AlgebraicConfig::default(),
            ibvp: IbvpConfig::default(),
            disloc: DislocConfig::default(),
            fdmpoint: FdmpointConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

/// Read and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| describe_toml_error(text, &e))?;
    cfg.validate()?;
    Ok(cfg)
}

fn describe_toml_error(text: &str, e: &toml::de::Error) -> ConfigError {
    let msg = e.message();
    let Some(rest) = msg.strip_prefix("unknown field `") else {
        return ConfigError::Syntax(e.to_string());
    };
    let name = rest.split('`').next().unwrap_or_default().to_string();
    // The message lists the accepted names as `a`, `b`, ...
    let expected: Vec<&str> = msg.split_once("expected").map(|(_, t)| t.split('`').skip(1).step_by(2).collect()).unwrap_or_default();
    let suggestion = expected
        .iter()
        .map(|k| (strsim::jaro_winkler(&name, k), *k))
        .filter(|(s, _)| *s > 0.8)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, k)| k.to_string());
    let section = e.span().and_then(|span| enclosing_table(text, span.start));
    let qualify = |k: String| match &section {
        Some(s) => format!("{s}.{k}"),
        None => k,
    };
    ConfigError::UnknownKey { key: qualify(name), suggestion: suggestion.map(qualify) }
}

/// Name of the last `[table]` header before byte offset `pos`.
fn enclosing_table(text: &str, pos: usize) -> Option<String> {
    text[..pos.min(text.len())]
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            l.strip_prefix('[').and_then(|r| r.strip_suffix(']')).map(|s| s.trim().to_string())
        })
        .last()
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, format!("must be positive and finite, got {v}")))
    }
}

fn finite(key: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, "must be finite"))
    }
}

fn at_least(key: &str, v: usize, min: usize) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(invalid(key, format!("must be at least {min}, got {v}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.solver;
        if let Some(v) = s.grad_tol {
            positive("solver.grad_tol", v)?;
        }
        if let Some(v) = s.linear_tol {
            if !(v > 0.0 && v < 1.0) {
                return Err(invalid("solver.linear_tol", "must lie in (0, 1)"));
            }
        }
        if let Some(v) = s.max_iter {
            at_least("solver.max_iter", v, 1)?;
        }

        let a = &self.algebraic;
        at_least("algebraic.equations", a.equations, 1)?;
        at_least("algebraic.unknowns", a.unknowns, 1)?;
        positive("algebraic.c", a.c)?;
        positive("algebraic.c_alt", a.c_alt)?;
        positive("algebraic.perturbation", a.perturbation)?;
        if !a.consistent && a.problem == AlgebraicProblem::Linear && a.equations <= a.unknowns {
            return Err(invalid(
                "algebraic.consistent",
                "an inconsistent right-hand side needs more equations than unknowns",
            ));
        }
        if a.base.len() != 2 || a.base.iter().any(|v| !v.is_finite()) {
            return Err(invalid("algebraic.base", "must hold two finite numbers"));
        }

        let i = &self.ibvp;
        at_least("ibvp.nx", i.nx, 3)?;
        at_least("ibvp.nt", i.nt, 3)?;
        finite("ibvp.x_min", i.x_min)?;
        finite("ibvp.x_max", i.x_max)?;
        if i.x_max <= i.x_min {
            return Err(invalid("ibvp.x_max", "must exceed x_min"));
        }
        positive("ibvp.t_final", i.t_final)?;
        positive("ibvp.kappa", i.kappa)?;
        finite("ibvp.c_adv", i.c_adv)?;
        if i.problem == IbvpProblemKind::Transport && i.c_adv == 0.0 {
            return Err(invalid("ibvp.c_adv", "transport needs a nonzero speed"));
        }
        finite("ibvp.strength", i.strength)?;
        finite("ibvp.ic_amplitude", i.ic_amplitude)?;
        finite("ibvp.ic_center", i.ic_center)?;
        positive("ibvp.ic_width", i.ic_width)?;
        positive("ibvp.c_u", i.c_u)?;
        positive("ibvp.c_b", i.c_b)?;
        positive("ibvp.c_c", i.c_c)?;

        let d = &self.disloc;
        positive("disloc.mu", d.mu)?;
        positive("disloc.rho_m", d.rho_m)?;
        for (k, v) in [("disloc.v", &d.v[..]), ("disloc.vortex_center", &d.vortex_center[..]), ("disloc.center", &d.center[..])] {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(k, "must be finite"));
            }
        }
        finite("disloc.omega", d.omega)?;
        positive("disloc.sigma", d.sigma)?;
        at_least("disloc.nx", d.nx, 3)?;
        at_least("disloc.ny", d.ny, 3)?;
        at_least("disloc.nt", d.nt, 3)?;
        positive("disloc.t_final", d.t_final)?;
        for (k, v) in ["disloc.m[0]", "disloc.m[1]", "disloc.m[2]"].iter().zip(d.m) {
            positive(k, v)?;
        }

        let f = &self.fdmpoint;
        if f.coeffs.is_empty() {
            return Err(invalid("fdmpoint.coeffs", "needs at least one coefficient"));
        }
        for c in &f.coeffs {
            positive("fdmpoint.coeffs", *c)?;
        }
        at_least("fdmpoint.n_samples", f.n_samples, 1)?;
        positive("fdmpoint.cap", f.cap)?;
        positive("fdmpoint.rho_bar", f.rho_bar)?;
        positive("fdmpoint.tol", f.tol)?;
        if f.velocity.iter().any(|x| !x.is_finite()) {
            return Err(invalid("fdmpoint.velocity", "must be finite"));
        }

        // Verify tolerances may be zero: that makes the corresponding checks fail.
        let v = &self.verify;
        for (k, x) in [
            ("verify.fd_rel_tol", v.fd_rel_tol),
            ("verify.fenchel_tol", v.fenchel_tol),
            ("verify.oracle_tol", v.oracle_tol),
            ("verify.algebraic_tol", v.algebraic_tol),
            ("verify.residual_tol", v.residual_tol),
            ("verify.curl_tol", v.curl_tol),
            ("verify.drift_tol", v.drift_tol),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(invalid(k, "must be non-negative and finite"));
            }
        }
        Ok(())
    }

    /// Fix the subcommand from the command line, rejecting a conflicting file value.
    pub fn for_subcommand(mut self, sub: Subcommand) -> Result<Self, ConfigError> {
        match self.subcommand {
            Some(s) if s != sub => Err(invalid("subcommand", format!("config is for `{s}` but `{sub}` was requested"))),
            _ => {
                self.subcommand = Some(sub);
                Ok(self)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_heat_config_fills_defaults() {
        let cfg = parse_config_str("[ibvp]\nproblem = \"heat\"\n").unwrap();
        assert_eq!(cfg.ibvp, IbvpConfig::default());
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn negative_kappa_is_named() {
        let err = parse_config_str("[ibvp]\nkappa = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("ibvp.kappa"), "{err}");
    }

    #[test]
    fn misspelled_key_gets_suggestion() {
        let err = parse_config_str("[ibvp]\nkapa = 1.0\n").unwrap_err();
        match err {
            ConfigError::UnknownKey { key, suggestion } => {
                assert_eq!(key, "ibvp.kapa");
                assert_eq!(suggestion.as_deref(), Some("ibvp.kappa"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_top_level_key() {
        let err = parse_config_str("sed = 3\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { ref suggestion, .. } if suggestion.as_deref() == Some("seed")), "{err}");
    }

    #[test]
    fn conflicting_subcommand_rejected() {
        let cfg = parse_config_str("subcommand = \"ibvp\"\n").unwrap();
        assert!(cfg.clone().for_subcommand(Subcommand::Ibvp).is_ok());
        assert!(cfg.for_subcommand(Subcommand::Disloc).is_err());
    }

    #[test]
    fn impossible_inconsistent_shape_rejected() {
        let err = parse_config_str("[algebraic]\nconsistent = false\n").unwrap_err();
        assert!(err.to_string().contains("algebraic.consistent"));
    }
}
