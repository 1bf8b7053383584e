//! Run configuration file. Every field has a default, so `{}` is a valid
//! config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wordattr::faithfulness::{FractionGrid, Level, Removal};
use wordattr::highlight::{Grouping, NoiseMode};
use wordattr::model::Head;
use wordattr::oracle::ExternalConfig;
use wordattr::saliency::{Aggregation, Bin, NaMode};
use wordattr::train::TrainerConfig;
use wordattr::{ArchConfig, BaselineStrategy, Method, QuadratureKind, Target};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OracleSpec {
    Builtin {
        #[serde(default)]
        arch: ArchConfig,
        #[serde(default)]
        seed: u64,
        /// Saved parameters. Without it the model is initialized from
        /// `arch` and `seed` with a vocabulary built from the corpus.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        params: Option<PathBuf>,
    },
    External {
        /// Shell-style command line, split with POSIX quoting rules.
        command: String,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
}

fn default_timeout() -> u64 {
    ExternalConfig::default().timeout_ms
}

fn default_batch() -> usize {
    ExternalConfig::default().batch_size
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec::Builtin {
            arch: ArchConfig::default(),
            seed: 0,
            params: None,
        }
    }
}

impl OracleSpec {
    pub fn is_external(&self) -> bool {
        matches!(self, OracleSpec::External { .. })
    }

    pub fn external_config(&self) -> Result<Option<ExternalConfig>, CliError> {
        let OracleSpec::External {
            command,
            timeout_ms,
            batch_size,
        } = self
        else {
            return Ok(None);
        };
        let argv = shlex::split(command)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| CliError::Validation(format!("oracle command {command:?} is empty or badly quoted")))?;
        Ok(Some(ExternalConfig {
            command: argv,
            timeout_ms: *timeout_ms,
            batch_size: *batch_size,
        }))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkingMode {
    None,
    #[default]
    Heuristic,
    /// Uses per-word annotations when a record has them, the heuristic
    /// otherwise.
    Dependencies,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub linking: LinkingMode,
    /// `|F(x)|` at which colors reach full strength. Defaults to the
    /// largest `|F(x)|` in the corpus.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradShapOptions {
    pub samples: usize,
    /// Path noise standard deviation; `null` scales it to the input.
    pub noise_stdev: Option<f64>,
}

impl Default for GradShapOptions {
    fn default() -> Self {
        Self {
            samples: 50,
            noise_stdev: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractOptions {
    pub k: usize,
    pub aggregation: Aggregation,
    pub na: NaMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub binning: Option<Vec<Bin>>,
    pub trainer: TrainerConfig,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            k: 20,
            aggregation: Aggregation::Sum,
            na: NaMode::Exclude,
            binning: None,
            trainer: TrainerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HighlightOptions {
    pub noise: NoiseMode,
    pub grouping: Grouping,
}

/// Extra lists for the faithfulness sweep. Empty lists fall back to the
/// single `method`, `baseline` and `steps` values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub methods: Vec<Method>,
    pub baselines: Vec<BaselineStrategy>,
    pub steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub oracle: OracleSpec,
    pub method: Method,
    pub baseline: BaselineStrategy,
    #[serde(alias = "N", alias = "n")]
    pub steps: usize,
    /// `null` picks per subcommand: trapezoid for the metric runs
    /// (`faithfulness`, `highlights`), paper-eq6 otherwise.
    pub quadrature: Option<QuadratureKind>,
    pub grid: FractionGrid,
    pub seed: u64,
    pub output: PathBuf,
    pub level: Level,
    pub removal: Removal,
    pub target: Target,
    pub cleaning: wordattr::corpus::CleaningConfig,
    pub gradshap: GradShapOptions,
    pub render: RenderOptions,
    pub sweep: SweepOptions,
    pub extract: ExtractOptions,
    pub highlights: HighlightOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            oracle: OracleSpec::default(),
            method: Method::Ig,
            baseline: BaselineStrategy::Zero,
            steps: 300,
            quadrature: None,
            grid: FractionGrid::default(),
            seed: 0,
            output: PathBuf::from("wordattr-out"),
            level: Level::Token,
            removal: Removal::Delete,
            target: Target::Scalar,
            cleaning: Default::default(),
            gradshap: GradShapOptions::default(),
            render: RenderOptions::default(),
            sweep: SweepOptions::default(),
            extract: ExtractOptions::default(),
            highlights: HighlightOptions::default(),
        }
    }
}

/// Which subcommand a config is resolved for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Attribute,
    Faithfulness,
    Extract,
    Highlights,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    /// Fills in subcommand-dependent defaults and checks everything that
    /// can be checked without talking to the oracle.
    pub fn resolve(mut self, purpose: Purpose) -> Result<Self, CliError> {
        if self.quadrature.is_none() {
            self.quadrature = Some(match purpose {
                Purpose::Faithfulness | Purpose::Highlights => QuadratureKind::Trapezoid,
                Purpose::Attribute | Purpose::Extract => QuadratureKind::EqualWeights,
            });
        }
        if purpose == Purpose::Faithfulness {
            if self.sweep.methods.is_empty() {
                self.sweep.methods = vec![self.method];
            }
            if self.sweep.baselines.is_empty() {
                self.sweep.baselines = vec![self.baseline];
            }
            if self.sweep.steps.is_empty() {
                self.sweep.steps = vec![self.steps];
            }
        }
        self.validate(purpose)?;
        Ok(self)
    }

    fn validate(&self, purpose: Purpose) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        let methods: &[Method] = if purpose == Purpose::Faithfulness {
            &self.sweep.methods
        } else {
            std::slice::from_ref(&self.method)
        };
        let steps: &[usize] = if purpose == Purpose::Faithfulness {
            &self.sweep.steps
        } else {
            std::slice::from_ref(&self.steps)
        };
        if methods.iter().any(|m| matches!(m, Method::Ig | Method::Sig)) && steps.contains(&0) {
            return bad("steps (N) must be at least 1".into());
        }
        if self.oracle.is_external() && methods.contains(&Method::DeepLift) {
            return bad(
                "method deeplift needs the built-in model's layer internals and cannot run with an external oracle"
                    .into(),
            );
        }
        if methods.contains(&Method::GradShap) && self.gradshap.samples == 0 {
            return bad("gradshap.samples must be at least 1".into());
        }
        if let Some(s) = self.gradshap.noise_stdev {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!(
                    "gradshap.noise_stdev must be a finite non-negative number, got {s}"
                ));
            }
        }
        if let Some(s) = self.render.scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("render.scale must be positive, got {s}"));
            }
        }
        if let NoiseMode::MonteCarlo { draws: 0, .. } = self.highlights.noise {
            return bad("highlights.noise.draws must be at least 1".into());
        }
        match &self.oracle {
            OracleSpec::External { .. } => {
                self.oracle.external_config()?;
                if purpose == Purpose::Extract {
                    return bad("extract trains the built-in model; it cannot use an external oracle".into());
                }
            }
            OracleSpec::Builtin { arch, params, .. } => {
                arch.validate()
                    .map_err(|e| CliError::Validation(format!("oracle.arch: {e}")))?;
                if params.is_some() && purpose == Purpose::Extract {
                    return bad("extract trains its own model; remove oracle.params".into());
                }
                if params.is_none() && purpose != Purpose::Extract {
                    check_target(self.target, &arch.head)?;
                }
            }
        }
        if purpose == Purpose::Extract {
            if self.extract.k == 0 {
                return bad("extract.k must be at least 1".into());
            }
            if self.target != Target::Scalar {
                return bad("extract attributes each document to its own class; leave target unset".into());
            }
        }
        Ok(())
    }

    pub fn quadrature(&self) -> QuadratureKind {
        self.quadrature.unwrap_or(QuadratureKind::EqualWeights)
    }
}

/// The target has to exist on the model's head.
pub fn check_target(target: Target, head: &Head) -> Result<(), CliError> {
    match (target, head) {
        (Target::Scalar, Head::Scalar) => Ok(()),
        (Target::Class(k), Head::Classes(n)) if k < *n => Ok(()),
        (Target::Scalar, Head::Classes(n)) => Err(CliError::Validation(format!(
            "the model has a {n}-class head; set target to {{\"class\": k}}"
        ))),
        (Target::Class(k), Head::Classes(n)) => Err(CliError::Validation(format!(
            "target class {k} is out of range for a {n}-class head"
        ))),
        (Target::Class(_), Head::Scalar) => Err(CliError::Validation(
            "the model has a scalar head; target must be \"scalar\"".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gets_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        let a = c.clone().resolve(Purpose::Attribute).unwrap();
        assert_eq!(a.quadrature, Some(QuadratureKind::EqualWeights));
        let f = c.resolve(Purpose::Faithfulness).unwrap();
        assert_eq!(f.quadrature, Some(QuadratureKind::Trapezoid));
        assert_eq!(f.sweep.methods, vec![Method::Ig]);
        assert_eq!(f.sweep.steps, vec![300]);
    }

    #[test]
    fn deeplift_with_external_is_rejected() {
        let c: RunConfig =
            serde_json::from_str(r#"{"oracle": {"kind": "external", "command": "python m.py"}, "method": "deeplift"}"#)
                .unwrap();
        let err = c.resolve(Purpose::Attribute).unwrap_err().to_string();
        assert!(err.contains("deeplift"), "{err}");
    }

    #[test]
    fn other_rejections() {
        let cases = [
            (r#"{"steps": 0}"#, Purpose::Attribute, "at least 1"),
            (r#"{"N": 0}"#, Purpose::Attribute, "at least 1"),
            (
                r#"{"oracle": {"kind": "external", "command": "'unclosed"}}"#,
                Purpose::Attribute,
                "quoted",
            ),
            (
                r#"{"oracle": {"kind": "external", "command": "x"}}"#,
                Purpose::Extract,
                "extract",
            ),
            (r#"{"target": {"class": 1}}"#, Purpose::Attribute, "scalar head"),
            (r#"{"grid": [0.5, 0.2]}"#, Purpose::Attribute, "increasing"),
            (r#"{"methd": "ig"}"#, Purpose::Attribute, "unknown field"),
        ];
        for (json, purpose, want) in cases {
            let err = serde_json::from_str::<RunConfig>(json)
                .map_err(|e| e.to_string())
                .and_then(|c| c.resolve(purpose).map_err(|e| e.to_string()))
                .unwrap_err();
            assert!(err.contains(want), "{json}: {err}");
        }
    }

    #[test]
    fn external_command_is_split() {
        let spec = OracleSpec::External {
            command: "python3 'my model.py' --fast".into(),
            timeout_ms: 5,
            batch_size: 2,
        };
        let c = spec.external_config().unwrap().unwrap();
        assert_eq!(c.command, ["python3", "my model.py", "--fast"]);
        assert_eq!(c.timeout_ms, 5);
    }
}
