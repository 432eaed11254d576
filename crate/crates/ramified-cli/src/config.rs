//! Run configuration: a single TOML file drives every command.
//!
//! ```toml
//! seed = 7                      # optional, default 0
//! out_dir = "out"               # optional; the --out-dir flag overrides
//! level_cap = 6                 # optional safety cap, default 6
//!
//! [fractal]
//! builtin = "gasket"            # or: spec_file = "my-fractal.toml"
//! level = 2
//! measure = "self_similar"      # or "kusuoka"
//!
//! [tolerances]                  # optional
//! solver = 1e-10
//! verification = 1e-10
//! ```
//!
//! Command-specific sections (`[pde]`, `[neumann]`, `[ns_verify]`,
//! `[magnetic]`, `[dirac]`) are documented on their structs below. Vertex
//! data can come from a CSV file (`vertex_id,value`), a constant, or a
//! seeded random draw; edge data from a CSV file (`src,dst,value`), a
//! uniform value, or a seeded random draw. Relative input paths are
//! resolved against the config file's directory; `out_dir` is taken
//! relative to the working directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

use ramified_core::{
    build_level, energy, io, self_similar_measure, FractalSpec, LevelGraph, MeasureWeights,
    OneForm, ScalarField,
};

use crate::CliError;

fn default_level_cap() -> usize {
    6
}

fn default_solver_tol() -> f64 {
    1e-10
}

fn default_verification_tol() -> f64 {
    1e-10
}

fn default_rho() -> f64 {
    1.0
}

fn default_base() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub fractal: FractalSection,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_level_cap")]
    pub level_cap: usize,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub pde: Option<PdeSection>,
    pub neumann: Option<NeumannSection>,
    pub ns_verify: Option<NsVerifySection>,
    pub magnetic: Option<MagneticSection>,
    pub dirac: Option<DiracSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FractalSection {
    /// One of the built-in generators: `"gasket"` or `"interval"`.
    pub builtin: Option<String>,
    /// Path to a custom fractal description (same schema as the library's
    /// spec TOML). Exactly one of `builtin` / `spec_file` must be set.
    pub spec_file: Option<PathBuf>,
    pub level: usize,
    #[serde(default)]
    pub measure: MeasureChoice,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MeasureChoice {
    #[default]
    SelfSimilar,
    Kusuoka,
}

impl MeasureChoice {
    pub fn name(self) -> &'static str {
        match self {
            MeasureChoice::SelfSimilar => "self_similar",
            MeasureChoice::Kusuoka => "kusuoka",
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_solver_tol")]
    pub solver: f64,
    #[serde(default = "default_verification_tol")]
    pub verification: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { solver: default_solver_tol(), verification: default_verification_tol() }
    }
}

/// Section for `solve quasilinear` and `solve drift`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    /// `"identity"` or `"scaled_monotone"` (with `base`, `gain`).
    #[serde(default)]
    pub nonlinearity: NonlinearityChoice,
    #[serde(default = "default_base")]
    pub base: f64,
    #[serde(default)]
    pub gain: f64,
    /// Source term `f` for the quasilinear equation; must have zero mean
    /// against the reference measure (the `random_mean_zero` generator
    /// centers automatically).
    pub source: Option<FieldSource>,
    /// Zeroth-order weight for the drift equation.
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub drift: DriftChoice,
    /// The fixed form `w` appearing in the drift coefficient.
    pub drift_form: Option<FormSource>,
    /// Affine drift offset field.
    pub offset: Option<FieldSource>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityChoice {
    #[default]
    Identity,
    ScaledMonotone,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DriftChoice {
    #[default]
    Zero,
    FiberPairing,
    Affine,
}

/// Section for `solve neumann`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeumannSection {
    /// Vertices carrying the fluxes; defaults to the graph boundary.
    pub boundary: Option<Vec<usize>>,
    /// Prescribed fluxes, same length as the boundary; must sum to zero.
    pub fluxes: Vec<f64>,
}

/// Section for `solve ns-verify`. Without a `form`, every harmonic-basis
/// element is checked.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsVerifySection {
    pub form: Option<FormSource>,
}

/// Section for `spectrum magnetic`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagneticSection {
    #[serde(default)]
    pub convention: ConventionChoice,
    pub vector_potential: Option<FormSource>,
    pub electric_potential: Option<FieldSource>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ConventionChoice {
    Linear,
    #[default]
    Exponential,
}

/// Section for `spectrum dirac`; present for explicitness, no knobs yet.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiracSection {}

/// A vertex-indexed input: exactly one of the fields must be set.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSource {
    /// CSV file with `vertex_id,value` rows.
    pub file: Option<PathBuf>,
    pub constant: Option<f64>,
    /// Uniform draw from `[-amplitude, amplitude]`, centered to zero mean
    /// against the reference measure. Driven by the run seed.
    pub random_mean_zero: Option<f64>,
}

/// An edge-indexed input: exactly one of the fields must be set.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormSource {
    /// CSV file with `src,dst,value` rows (either orientation).
    pub file: Option<PathBuf>,
    /// The same value on every canonical edge.
    pub uniform: Option<f64>,
    /// Uniform draw from `[-amplitude, amplitude]` per canonical edge,
    /// driven by the run seed.
    pub random: Option<f64>,
}

impl FieldSource {
    pub fn resolve(
        &self,
        base_dir: &Path,
        graph: &Arc<LevelGraph>,
        m: &MeasureWeights,
        rng: &mut ChaCha20Rng,
    ) -> Result<ScalarField, CliError> {
        let picked =
            [self.file.is_some(), self.constant.is_some(), self.random_mean_zero.is_some()]
                .iter()
                .filter(|&&p| p)
                .count();
        if picked != 1 {
            return Err(CliError::usage(
                "field input needs exactly one of `file`, `constant`, `random_mean_zero`",
            ));
        }
        if let Some(file) = &self.file {
            return crate::input(io::read_field(graph, &base_dir.join(file)));
        }
        if let Some(value) = self.constant {
            return Ok(ScalarField::constant(graph, value));
        }
        let amplitude = self.random_mean_zero.expect("one source picked");
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(CliError::usage(format!(
                "random field amplitude must be positive, got {amplitude}"
            )));
        }
        let raw = ScalarField::from_fn(graph, |_| rng.gen_range(-amplitude..amplitude))
            .map_err(CliError::from)?;
        raw.center(m).map_err(CliError::from)
    }
}

impl FormSource {
    pub fn resolve(
        &self,
        base_dir: &Path,
        graph: &Arc<LevelGraph>,
        rng: &mut ChaCha20Rng,
    ) -> Result<OneForm, CliError> {
        let picked = [self.file.is_some(), self.uniform.is_some(), self.random.is_some()]
            .iter()
            .filter(|&&p| p)
            .count();
        if picked != 1 {
            return Err(CliError::usage(
                "form input needs exactly one of `file`, `uniform`, `random`",
            ));
        }
        if let Some(file) = &self.file {
            return crate::input(io::read_form(graph, &base_dir.join(file)));
        }
        if let Some(value) = self.uniform {
            return OneForm::from_fn(graph, |_| value).map_err(CliError::from);
        }
        let amplitude = self.random.expect("one source picked");
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(CliError::usage(format!(
                "random form amplitude must be positive, got {amplitude}"
            )));
        }
        OneForm::from_fn(graph, |_| rng.gen_range(-amplitude..amplitude))
            .map_err(CliError::from)
    }
}

impl RunConfig {
    /// Parse and validate; returns the config together with the directory
    /// used to resolve relative paths.
    pub fn load(path: &Path) -> Result<(RunConfig, PathBuf), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        let base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((config, base_dir))
    }

    fn validate(&self) -> Result<(), CliError> {
        let f = &self.fractal;
        match (&f.builtin, &f.spec_file) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(CliError::usage(
                    "[fractal] needs exactly one of `builtin` or `spec_file`",
                ));
            }
            (Some(name), None) if name != "gasket" && name != "interval" => {
                return Err(CliError::usage(format!(
                    "unknown builtin fractal `{name}` (available: gasket, interval)"
                )));
            }
            _ => {}
        }
        if f.level > self.level_cap {
            return Err(CliError::usage(format!(
                "level {} exceeds the cap of {} (raise `level_cap` deliberately if needed)",
                f.level, self.level_cap
            )));
        }
        for (name, value) in [
            ("solver", self.tolerances.solver),
            ("verification", self.tolerances.verification),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(CliError::usage(format!(
                    "tolerances.{name} must be positive, got {value}"
                )));
            }
        }
        if let Some(pde) = &self.pde {
            if !(pde.rho.is_finite() && pde.rho > 0.0) {
                return Err(CliError::usage(format!(
                    "pde.rho must be positive, got {}",
                    pde.rho
                )));
            }
        }
        Ok(())
    }

    /// Build the configured level graph and reference measure.
    pub fn build_graph(
        &self,
        base_dir: &Path,
    ) -> Result<(Arc<LevelGraph>, MeasureWeights), CliError> {
        let spec = match (&self.fractal.builtin, &self.fractal.spec_file) {
            (Some(name), None) => {
                if name == "gasket" {
                    FractalSpec::gasket()
                } else {
                    FractalSpec::interval()
                }
            }
            (None, Some(file)) => {
                let path = base_dir.join(file);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    CliError::usage(format!("cannot read fractal spec {}: {e}", path.display()))
                })?;
                crate::input(FractalSpec::from_toml_str(&text))?
            }
            _ => unreachable!("validated"),
        };
        let graph = build_level(&spec, self.fractal.level).map_err(CliError::from)?;
        let base = self_similar_measure(&graph).map_err(CliError::from)?;
        let measure = match self.fractal.measure {
            MeasureChoice::SelfSimilar => base,
            MeasureChoice::Kusuoka => {
                energy::kusuoka_measure(&base).map_err(CliError::from)?
            }
        };
        Ok((graph, measure))
    }
}
