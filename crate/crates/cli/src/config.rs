//! Experiment configuration files (TOML, strict schema).
//!
//! ```toml
//! name = "chain-g0.1"
//! seed = 7
//! output_dir = "chain"
//!
//! [experiment]
//! kind = "markov-evolve"
//! n_sites = [100]
//! coupling = [0.05, 0.1, 0.2]
//! steps = 3000
//! ```
//!
//! List-valued fields are sweep axes; the run covers their Cartesian product
//! in the order written.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use scramble_core::circuit::StepConvention;
use scramble_core::continuum::{Coefficients, DriftScheme};
use scramble_core::spin_chain::Boundary;

/// Environment variable that overrides the output root.
pub const OUTPUT_ROOT_ENV: &str = "SCRAMBLE_OUTPUT_ROOT";
/// Output root used when the variable is unset.
pub const DEFAULT_OUTPUT_ROOT: &str = "results";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Directory below the output root; defaults to `name`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Write the full state every this many recorded samples
    /// (`markov-evolve` and `fp-integrate` only).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    MarkovEvolve(MarkovEvolve),
    FpIntegrate(FpIntegrate),
    CircuitMc(CircuitMc),
    Otoc(Otoc),
    Entropy(Entropy),
    LevelStats(LevelStats),
    ClassicalGrowth(ClassicalGrowth),
    Validate(Validate),
}

fn half() -> f64 {
    0.5
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkovEvolve {
    pub n_sites: Vec<usize>,
    pub coupling: Vec<f64>,
    #[serde(default = "half")]
    pub coupling_exponent: f64,
    pub steps: usize,
    #[serde(default = "one_usize")]
    pub record_every: usize,
    /// Also report the sup-norm collapse deviation of `<w>/N` against `g^2 t`
    /// across couplings (per `N`).
    #[serde(default)]
    pub collapse: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FpDomain {
    /// `w in [0, N]`.
    #[default]
    Weight,
    /// `w in [1, N]`.
    Dynamical,
}

fn default_fp_points() -> usize {
    991
}
fn default_fp_record() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpIntegrate {
    pub n_sites: Vec<usize>,
    pub tau_final: f64,
    #[serde(default = "default_fp_points")]
    pub n_points: usize,
    #[serde(default)]
    pub coefficients: Coefficients,
    #[serde(default)]
    pub scheme: DriftScheme,
    #[serde(default)]
    pub domain: FpDomain,
    #[serde(default = "one")]
    pub initial_weight: f64,
    #[serde(default = "default_fp_record")]
    pub record_every: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircuitMc {
    pub n_sites: Vec<usize>,
    pub coupling: Vec<f64>,
    pub steps: usize,
    pub realizations: usize,
    #[serde(default)]
    pub convention: StepConvention,
    /// 1-based site of a `Y` probe for the direct squared commutator.
    #[serde(default)]
    pub probe_site: Option<usize>,
}

fn default_krylov_dim() -> usize {
    30
}
fn default_tolerance() -> f64 {
    1e-10
}
fn open() -> Boundary {
    Boundary::Open
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Otoc {
    pub n_sites: Vec<usize>,
    #[serde(default = "one")]
    pub ising_j: f64,
    pub field_x: Vec<f64>,
    #[serde(default)]
    pub field_z: f64,
    pub global_g: Vec<f64>,
    #[serde(default = "open")]
    pub boundary: Boundary,
    /// 1-based probe sites; defaults to the far end `r = N`.
    #[serde(default)]
    pub sites: Option<Vec<usize>>,
    pub t_max: f64,
    pub dt: f64,
    #[serde(default = "one_usize")]
    pub n_states: usize,
    #[serde(default = "default_krylov_dim")]
    pub krylov_dim: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Entropy {
    pub n_sites: Vec<usize>,
    #[serde(default = "one")]
    pub ising_j: f64,
    pub field_x: Vec<f64>,
    #[serde(default)]
    pub field_z: f64,
    pub global_g: Vec<f64>,
    #[serde(default = "open")]
    pub boundary: Boundary,
    pub t_max: f64,
    pub dt: f64,
    #[serde(default = "default_krylov_dim")]
    pub krylov_dim: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_min_sector() -> usize {
    50
}
fn default_bootstrap() -> usize {
    1000
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelStats {
    pub n_sites: Vec<usize>,
    #[serde(default = "one")]
    pub ising_j: f64,
    pub field_x: Vec<f64>,
    pub global_g: Vec<f64>,
    #[serde(default = "default_min_sector")]
    pub min_sector_dim: usize,
    #[serde(default = "yes")]
    pub exclude_reflection_symmetric: bool,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_resamples: usize,
}

fn default_ensemble() -> usize {
    4000
}
fn default_classical_record() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalGrowth {
    pub n_osc: Vec<usize>,
    #[serde(default = "one")]
    pub omega1: f64,
    #[serde(default = "one")]
    pub omega2: f64,
    pub omega3: Vec<f64>,
    pub epsilon: f64,
    pub t_final: f64,
    /// Upper bound on the step; defaults to the reference step.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_classical_record")]
    pub record_every: usize,
    #[serde(default = "default_ensemble")]
    pub n_ensemble: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Validate {
    /// Criterion ids to run; all when omitted.
    #[serde(default)]
    pub criteria: Option<Vec<u32>>,
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::MarkovEvolve(_) => "markov-evolve",
            Self::FpIntegrate(_) => "fp-integrate",
            Self::CircuitMc(_) => "circuit-mc",
            Self::Otoc(_) => "otoc",
            Self::Entropy(_) => "entropy",
            Self::LevelStats(_) => "level-stats",
            Self::ClassicalGrowth(_) => "classical-growth",
            Self::Validate(_) => "validate",
        }
    }
}

/// Kinds with a one-line description, for `list-experiments`.
pub const EXPERIMENT_KINDS: &[(&str, &str)] = &[
    (
        "markov-evolve",
        "weight master equation: <w>, <w>/N and <C> per step",
    ),
    (
        "fp-integrate",
        "Fokker-Planck density: <w>(tau) and distance to the stationary density",
    ),
    (
        "circuit-mc",
        "brute-force random circuits: binned h_t(w, w1) with error bars",
    ),
    ("otoc", "Ising chain OTOC F(r, t) from Haar-random states"),
    (
        "entropy",
        "half-chain entanglement entropy after a +y quench",
    ),
    (
        "level-stats",
        "mean adjacent-gap ratio in (k, prod X) sectors",
    ),
    (
        "classical-growth",
        "oscillator perturbation heatmap and Lyapunov fits",
    ),
    ("validate", "acceptance suite with a pass/fail table"),
];

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn output_subdir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(&self.name))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if let Some(dir) = &self.output_dir {
            if dir.is_absolute()
                || dir
                    .components()
                    .any(|c| c == std::path::Component::ParentDir)
            {
                return Err(invalid(
                    "output_dir",
                    "must be a relative path inside the output root",
                ));
            }
        }
        if let Some(k) = self.checkpoint_every {
            if k == 0 {
                return Err(invalid("checkpoint_every", "must be positive"));
            }
            if !matches!(
                self.experiment,
                Experiment::MarkovEvolve(_) | Experiment::FpIntegrate(_)
            ) {
                return Err(invalid(
                    "checkpoint_every",
                    format!("not supported by kind `{}`", self.experiment.kind()),
                ));
            }
        }
        match &self.experiment {
            Experiment::MarkovEvolve(e) => {
                axis("experiment.n_sites", &e.n_sites, |&n| n >= 2, ">= 2")?;
                axis(
                    "experiment.coupling",
                    &e.coupling,
                    |g| g.is_finite(),
                    "finite",
                )?;
                positive("experiment.record_every", e.record_every)?;
                if !(e.coupling_exponent >= 0.0) {
                    return Err(invalid("experiment.coupling_exponent", "must be >= 0"));
                }
                if e.collapse && e.coupling.len() < 2 {
                    return Err(invalid(
                        "experiment.collapse",
                        "needs at least two couplings",
                    ));
                }
            }
            Experiment::FpIntegrate(e) => {
                axis("experiment.n_sites", &e.n_sites, |&n| n >= 2, ">= 2")?;
                finite_positive("experiment.tau_final", e.tau_final)?;
                finite_positive("experiment.record_every", e.record_every)?;
                if e.n_points < scramble_core::continuum::MIN_GRID_POINTS {
                    return Err(invalid(
                        "experiment.n_points",
                        format!("must be >= {}", scramble_core::continuum::MIN_GRID_POINTS),
                    ));
                }
            }
            Experiment::CircuitMc(e) => {
                axis(
                    "experiment.n_sites",
                    &e.n_sites,
                    |&n| (2..=scramble_core::circuit::MAX_DENSE_SITES).contains(&n),
                    "in 2..=10",
                )?;
                axis(
                    "experiment.coupling",
                    &e.coupling,
                    |g| g.is_finite(),
                    "finite",
                )?;
                positive("experiment.realizations", e.realizations)?;
                if let Some(r) = e.probe_site {
                    if e.n_sites.iter().any(|&n| r < 1 || r > n) {
                        return Err(invalid(
                            "experiment.probe_site",
                            "must lie in 1..=N for every N",
                        ));
                    }
                }
            }
            Experiment::Otoc(e) => {
                chain_axes(&e.n_sites, &e.field_x, &e.global_g)?;
                time_grid(e.t_max, e.dt)?;
                positive("experiment.n_states", e.n_states)?;
                krylov(e.krylov_dim, e.tolerance)?;
                if let Some(sites) = &e.sites {
                    if sites.is_empty()
                        || e.n_sites
                            .iter()
                            .any(|&n| sites.iter().any(|&r| r < 1 || r > n))
                    {
                        return Err(invalid(
                            "experiment.sites",
                            "probe sites must lie in 1..=N for every N",
                        ));
                    }
                }
            }
            Experiment::Entropy(e) => {
                chain_axes(&e.n_sites, &e.field_x, &e.global_g)?;
                time_grid(e.t_max, e.dt)?;
                krylov(e.krylov_dim, e.tolerance)?;
            }
            Experiment::LevelStats(e) => {
                chain_axes(&e.n_sites, &e.field_x, &e.global_g)?;
                axis(
                    "experiment.n_sites",
                    &e.n_sites,
                    |&n| (3..=16).contains(&n),
                    "in 3..=16",
                )?;
                positive("experiment.bootstrap_resamples", e.bootstrap_resamples)?;
            }
            Experiment::ClassicalGrowth(e) => {
                axis("experiment.n_osc", &e.n_osc, |&n| n >= 2, ">= 2")?;
                axis(
                    "experiment.omega3",
                    &e.omega3,
                    |w| *w >= 0.0 && w.is_finite(),
                    "finite and >= 0",
                )?;
                for (f, v) in [
                    ("experiment.omega1", e.omega1),
                    ("experiment.omega2", e.omega2),
                ] {
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(invalid(f, "must be finite and >= 0"));
                    }
                }
                finite_positive("experiment.epsilon", e.epsilon)?;
                finite_positive("experiment.t_final", e.t_final)?;
                if let Some(dt) = e.dt {
                    finite_positive("experiment.dt", dt)?;
                }
                positive("experiment.record_every", e.record_every)?;
                positive("experiment.n_ensemble", e.n_ensemble)?;
            }
            Experiment::Validate(v) => {
                if let Some(ids) = &v.criteria {
                    let known = crate::acceptance::CRITERIA.len() as u32;
                    if ids.is_empty() || ids.iter().any(|&i| i < 1 || i > known) {
                        return Err(invalid(
                            "experiment.criteria",
                            format!("ids must lie in 1..={known}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

fn axis<T>(
    field: &str,
    values: &[T],
    ok: impl Fn(&T) -> bool,
    what: &str,
) -> Result<(), ConfigError> {
    if values.is_empty() {
        return Err(invalid(field, "sweep axis must not be empty"));
    }
    if !values.iter().all(ok) {
        return Err(invalid(field, format!("every entry must be {what}")));
    }
    Ok(())
}

fn positive(field: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        return Err(invalid(field, "must be positive"));
    }
    Ok(())
}

fn finite_positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(field, "must be finite and positive"));
    }
    Ok(())
}

fn chain_axes(n_sites: &[usize], field_x: &[f64], global_g: &[f64]) -> Result<(), ConfigError> {
    axis(
        "experiment.n_sites",
        n_sites,
        |&n| (2..=scramble_core::spin_chain::MAX_SITES).contains(&n),
        "in 2..=24",
    )?;
    axis("experiment.field_x", field_x, |x| x.is_finite(), "finite")?;
    axis("experiment.global_g", global_g, |x| x.is_finite(), "finite")
}

fn time_grid(t_max: f64, dt: f64) -> Result<(), ConfigError> {
    finite_positive("experiment.t_max", t_max)?;
    finite_positive("experiment.dt", dt)?;
    if dt > t_max {
        return Err(invalid("experiment.dt", "must not exceed t_max"));
    }
    Ok(())
}

fn krylov(dim: usize, tol: f64) -> Result<(), ConfigError> {
    if dim < 2 {
        return Err(invalid("experiment.krylov_dim", "must be >= 2"));
    }
    finite_positive("experiment.tolerance", tol)
}

/// Evenly spaced times `0, dt, ..., t_max` (the last point snapped to `t_max`).
pub fn time_points(t_max: f64, dt: f64) -> Vec<f64> {
    let n = (t_max / dt - 1e-9).ceil() as usize;
    (0..=n).map(|i| (i as f64 * dt).min(t_max)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::from_toml(text, Path::new("test.toml"))
    }

    const MARKOV: &str = r#"
name = "m"
[experiment]
kind = "markov-evolve"
n_sites = [100]
coupling = [0.1]
steps = 10
"#;

    #[test]
    fn parses_with_defaults() {
        let c = parse(MARKOV).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.output_subdir(), PathBuf::from("m"));
        let Experiment::MarkovEvolve(m) = &c.experiment else {
            panic!()
        };
        assert_eq!(m.coupling_exponent, 0.5);
        assert_eq!(m.record_every, 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let top = MARKOV.replace("name = \"m\"", "name = \"m\"\ncolour = 1");
        let err = parse(&top).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
        let inner = MARKOV.replace("steps = 10", "steps = 10\nstepz = 3");
        let err = parse(&inner).unwrap_err().to_string();
        assert!(err.contains("stepz"), "{err}");
        let kind = MARKOV.replace("markov-evolve", "markov-evolution");
        assert!(parse(&kind).is_err());
    }

    #[test]
    fn values_are_checked() {
        let err = parse(&MARKOV.replace("[100]", "[]"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("experiment.n_sites"), "{err}");
        let err = parse(&MARKOV.replace("name = \"m\"", "name = \"m\"\ncheckpoint_every = 0"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("checkpoint_every"));
        let err = parse(&MARKOV.replace("name = \"m\"", "name = \"m\"\noutput_dir = \"../x\""))
            .unwrap_err()
            .to_string();
        assert!(err.contains("output_dir"));
        let err = parse(&MARKOV.replace("steps = 10", "steps = 10\ncollapse = true"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("collapse"));
    }

    #[test]
    fn every_kind_parses() {
        let texts = [
            "kind = \"fp-integrate\"\nn_sites = [100]\ntau_final = 1.0\nscheme = \"exponential-fitting\"\ndomain = \"dynamical\"",
            "kind = \"circuit-mc\"\nn_sites = [4]\ncoupling = [0.4]\nsteps = 2\nrealizations = 10\nconvention = \"two-layer\"",
            "kind = \"otoc\"\nn_sites = [8]\nfield_x = [1.05]\nglobal_g = [-1.0]\nt_max = 1.0\ndt = 0.5",
            "kind = \"entropy\"\nn_sites = [8]\nfield_x = [1.05]\nfield_z = 0.5\nglobal_g = [0.0]\nt_max = 1.0\ndt = 0.5",
            "kind = \"level-stats\"\nn_sites = [8]\nfield_x = [1.05]\nglobal_g = [-1.0]",
            "kind = \"classical-growth\"\nn_osc = [10]\nomega3 = [2.0]\nepsilon = 1e-5\nt_final = 1.0",
            "kind = \"validate\"\ncriteria = [1, 4]",
        ];
        for t in texts {
            let c = parse(&format!("name = \"x\"\n[experiment]\n{t}\n")).unwrap();
            assert!(t.contains(c.experiment.kind()));
        }
    }

    #[test]
    fn time_grid_points() {
        assert_eq!(time_points(1.0, 0.25), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(time_points(1.0, 0.3).last(), Some(&1.0));
    }
}
