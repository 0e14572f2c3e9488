//! Run configuration (TOML).
//!
//! ```toml
//! config_version = 1
//! case = 2                  # built-in case, or an [inline_case] table
//! out = "run2"
//! shape_scale = 1.0         # defaults to the case's own scale
//!
//! [grid]
//! n_azimuth = 4
//! n_polar = 2
//! phi_p = 1.5707963267948966
//! theta_t = 0.7853981633974483
//!
//! [params]                  # any SolverParams field
//! eps = 2e-4
//!
//! [synthesis]
//! budget = 300
//! move_limit = 0.1
//! require_crisp = true
//! frozen_w = false
//!
//! [extract]
//! threshold = 0.5
//! ```

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::path::{Path, PathBuf};

use sbm_synth::cases::{case_study, default_shape_scale, MomentCase};
use sbm_synth::grid::{build_grid, SolverParams, SphericalGrid};
use sbm_synth::synthesis::SynthesisOptions;
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_azimuth: usize,
    pub n_polar: usize,
    pub phi_p: f64,
    pub theta_t: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_azimuth: 4, n_polar: 2, phi_p: FRAC_PI_2, theta_t: FRAC_PI_4 }
    }
}

impl GridConfig {
    pub fn build(&self) -> sbm_synth::Result<SphericalGrid> {
        build_grid(self.n_azimuth, self.n_polar, self.phi_p, self.theta_t)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    pub budget: Option<usize>,
    pub move_limit: Option<f64>,
    pub require_crisp: Option<bool>,
    pub frozen_w: Option<bool>,
    pub window: Option<usize>,
    pub zeta_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    pub case: Option<u32>,
    pub inline_case: Option<MomentCase>,
    pub out: Option<PathBuf>,
    pub shape_scale: Option<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub params: SolverParams,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            case: None,
            inline_case: None,
            out: None,
            shape_scale: None,
            grid: GridConfig::default(),
            params: SolverParams::default(),
            synthesis: SynthesisConfig::default(),
            extract: ExtractConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        if cfg.config_version != CONFIG_VERSION {
            return Err(ConfigError::Parse {
                path: path.into(),
                message: format!("config_version {} is not supported (expected {CONFIG_VERSION})", cfg.config_version),
            });
        }
        if cfg.case.is_some() && cfg.inline_case.is_some() {
            return Err(ConfigError::Parse { path: path.into(), message: "both `case` and `inline_case` are set".into() });
        }
        Ok(cfg)
    }
}

/// Everything a run needs, after flags have been applied over the file.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub case_id: Option<u32>,
    pub case: MomentCase,
    pub grid_config: GridConfig,
    pub grid: SphericalGrid,
    pub params: SolverParams,
    pub synthesis: SynthesisOptions,
    pub threshold: f64,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub case: Option<u32>,
    pub out: Option<PathBuf>,
    pub budget: Option<usize>,
    pub threshold: Option<f64>,
}

pub fn resolve(cfg: RunConfig, ov: &Overrides) -> Result<Resolved, ConfigError> {
    let invalid = |e: sbm_synth::Error| ConfigError::Invalid(e.to_string());
    let case_id = ov.case.or(if cfg.inline_case.is_some() { None } else { cfg.case });
    let case = match (case_id, cfg.inline_case) {
        (Some(id), _) => case_study(id).map_err(invalid)?,
        (None, Some(c)) => MomentCase::new(c.poses.clone(), c.kappa.clone())
            .map(|m| MomentCase { extension_positive: c.extension_positive, ..m })
            .map_err(invalid)?,
        (None, None) => return Err(ConfigError::Invalid("no case given (use --case or a config file)".into())),
    };
    let scale = cfg.shape_scale.unwrap_or_else(|| case_id.map_or(1.0, default_shape_scale));
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(ConfigError::Invalid(format!("shape_scale must be positive, got {scale}")));
    }
    let params = cfg.params.with_shape_scale(scale);
    let grid = cfg.grid.build().map_err(invalid)?;

    let mut synthesis = SynthesisOptions::default();
    let s = &cfg.synthesis;
    synthesis.budget = ov.budget.or(s.budget).unwrap_or(synthesis.budget);
    synthesis.mma.move_limit = s.move_limit.unwrap_or(synthesis.mma.move_limit);
    synthesis.require_crisp = s.require_crisp.unwrap_or(synthesis.require_crisp);
    synthesis.sensitivity.frozen_w = s.frozen_w.unwrap_or(synthesis.sensitivity.frozen_w);
    synthesis.window = s.window.unwrap_or(synthesis.window);
    synthesis.zeta_tol = s.zeta_tol.unwrap_or(synthesis.zeta_tol);
    if !(synthesis.mma.move_limit > 0.0 && synthesis.mma.move_limit <= 1.0) {
        return Err(ConfigError::Invalid(format!("synthesis.move_limit must lie in (0, 1], got {}", synthesis.mma.move_limit)));
    }

    let threshold = ov.threshold.or(cfg.extract.threshold).unwrap_or(0.5);
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(ConfigError::Invalid(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let out = ov.out.clone().or(cfg.out);
    Ok(Resolved { case_id, case, grid_config: cfg.grid, grid, params, synthesis, threshold, out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let e = toml::from_str::<RunConfig>("config_version = 1\ncase = 1\nbudgett = 3\n").unwrap_err();
        assert!(e.to_string().contains("budgett"));
        assert!(toml::from_str::<RunConfig>("config_version = 1\n[params]\nkmax = 1.0\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let cfg: RunConfig = toml::from_str("config_version = 1\ncase = 1\n[synthesis]\nbudget = 20\n").unwrap();
        let r = resolve(cfg.clone(), &Overrides::default()).unwrap();
        assert_eq!((r.case_id, r.synthesis.budget), (Some(1), 20));
        let r = resolve(cfg, &Overrides { case: Some(3), budget: Some(5), ..Default::default() }).unwrap();
        assert_eq!((r.case_id, r.synthesis.budget), (Some(3), 5));
        assert!((r.params.theta_max - 0.45 * std::f64::consts::FRAC_PI_8).abs() < 1e-15);
    }

    #[test]
    fn inline_case_is_accepted() {
        let text = "config_version = 1\n[inline_case]\nposes = [[0.0, 0.0, 0.1]]\nkappa = [[0.0, -1.0, 0.0]]\n";
        let r = resolve(toml::from_str(text).unwrap(), &Overrides::default()).unwrap();
        assert_eq!(r.case.steps(), 1);
        assert_eq!(r.case_id, None);
    }

    #[test]
    fn bad_threshold_is_a_config_error() {
        let cfg = RunConfig { case: Some(2), ..Default::default() };
        assert!(resolve(cfg, &Overrides { threshold: Some(1.5), ..Default::default() }).is_err());
    }
}
