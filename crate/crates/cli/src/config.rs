//! JSON experiment configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use maxmargin::channel::{ChannelTransform, Codebook, NoiseModel, Preset};
use maxmargin::decoder::MixtureScaling;
use maxmargin::linalg::{Matrix, SymMatrix};
use maxmargin::solver::{Selection, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Additive,
    Nonlinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CodebookSpec {
    Preset { preset: String },
    Explicit { codewords: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    IsotropicGaussian {
        dim: usize,
        sigma: f64,
    },
    CorrelatedGaussian {
        covariance: Vec<Vec<f64>>,
    },
    UniformPlusGaussian {
        half_width: f64,
        sigma: f64,
        uniform_axes: Vec<bool>,
    },
    GaussianMixture {
        weights: Vec<f64>,
        covariances: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformSpec {
    Identity,
    Linear { matrix: Vec<Vec<f64>> },
    PolyFeatureLinear { matrix: Vec<Vec<f64>> },
}

/// A single `λ`, or the `(λ_H, λ_K)` pair of the non-linear model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Single(f64),
    Pair([f64; 2]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionSpec {
    Final,
    Holdout(f64),
    Kfold(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingSpec {
    #[default]
    Weighted,
    PerComponent,
}

/// Caps and constants for the `bounds` report that the experiment itself
/// does not determine.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSpec {
    /// Norm cap of the additive class.
    pub b: Option<f64>,
    pub b_h: Option<f64>,
    pub b_k: Option<f64>,
    /// Singular-value cap on `H` for the uniform bound.
    pub r_h: Option<f64>,
    /// Noise radius; defaults to `σ_W √d_y`.
    pub r_z: Option<f64>,
    /// Sub-Gaussian proxy; defaults to `√E‖Z‖²` or `σ_W`.
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    /// Training-set sizes to tabulate; defaults to `n_train`.
    pub n_grid: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub model: Model,
    pub codebook: CodebookSpec,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub transform: Option<TransformSpec>,
    pub n_train: usize,
    pub n_batch: usize,
    pub iterations: usize,
    pub n_test: usize,
    pub lambda: LambdaSpec,
    pub snr_train: f64,
    pub snr_test: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_selection")]
    pub selection: SelectionSpec,
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
    #[serde(default)]
    pub record_every: Option<usize>,
    #[serde(default)]
    pub mixture_scaling: ScalingSpec,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub bounds: Option<BoundsSpec>,
}

fn default_selection() -> SelectionSpec {
    SelectionSpec::Final
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn sym(field: &str, rows: &[Vec<f64>]) -> Result<SymMatrix, CliError> {
    SymMatrix::from_rows(rows).map_err(|e| invalid(field, e.to_string()))
}

fn positive(field: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = missing_or_unknown_field(&msg).unwrap_or_else(|| "config".to_string());
            CliError::Config { field, reason: msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cb = self.codebook()?;
        for (field, v) in [
            ("n_train", self.n_train),
            ("n_batch", self.n_batch),
            ("iterations", self.iterations),
            ("n_test", self.n_test),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be at least 1"));
            }
        }
        match (self.model, self.lambda) {
            (_, LambdaSpec::Single(l)) => positive("lambda", l)?,
            (Model::Nonlinear, LambdaSpec::Pair([h, k])) => {
                positive("lambda", h)?;
                positive("lambda", k)?;
            }
            (Model::Additive, LambdaSpec::Pair(_)) => {
                return Err(invalid("lambda", "the additive model takes a single value"))
            }
        }
        if !self.snr_train.is_finite() {
            return Err(invalid("snr_train", "must be finite"));
        }
        if self.snr_test.is_empty() {
            return Err(invalid("snr_test", "needs at least one SNR"));
        }
        if let Some(bad) = self.snr_test.iter().find(|s| !s.is_finite()) {
            return Err(invalid("snr_test", format!("non-finite entry {bad}")));
        }
        match self.model {
            Model::Additive => {
                if self.transform.is_some() {
                    return Err(invalid("transform", "only used by the nonlinear model"));
                }
                let noise = self.noise_model()?;
                if noise.dim() != cb.dim() {
                    return Err(invalid(
                        "noise",
                        format!("dimension {} differs from codebook dimension {}", noise.dim(), cb.dim()),
                    ));
                }
            }
            Model::Nonlinear => {
                if self.noise.is_some() {
                    return Err(invalid("noise", "the nonlinear model uses white Gaussian noise"));
                }
                self.transform_model()?
                    .output_dim(cb.dim())
                    .map_err(|e| invalid("transform", e.to_string()))?;
            }
        }
        self.solver_config().validate().map_err(core_to_config)?;
        if let Some(eta) = &self.eta {
            maxmargin::margin_additive::ProperPartition::build_completed(&cb)
                .with_eta(eta.clone())
                .map_err(|e| invalid("eta", e.to_string()))?;
        }
        Ok(())
    }

    pub fn codebook(&self) -> Result<Codebook, CliError> {
        match &self.codebook {
            CodebookSpec::Preset { preset } => Preset::from_str(preset)
                .map(Codebook::preset)
                .map_err(|e| invalid("codebook", e.to_string())),
            CodebookSpec::Explicit { codewords } => {
                Codebook::new(codewords.clone()).map_err(|e| invalid("codebook", e.to_string()))
            }
        }
    }

    pub fn noise_model(&self) -> Result<NoiseModel, CliError> {
        let spec = self
            .noise
            .as_ref()
            .ok_or_else(|| invalid("noise", "required for the additive model"))?;
        let model = match spec {
            NoiseSpec::IsotropicGaussian { dim, sigma } => NoiseModel::IsotropicGaussian {
                dim: *dim,
                sigma: *sigma,
            },
            NoiseSpec::CorrelatedGaussian { covariance } => NoiseModel::CorrelatedGaussian {
                covariance: sym("noise", covariance)?,
            },
            NoiseSpec::UniformPlusGaussian {
                half_width,
                sigma,
                uniform_axes,
            } => NoiseModel::UniformPlusGaussian {
                half_width: *half_width,
                sigma: *sigma,
                uniform_axes: uniform_axes.clone(),
            },
            NoiseSpec::GaussianMixture {
                weights,
                covariances,
            } => NoiseModel::GaussianMixture {
                weights: weights.clone(),
                covariances: covariances
                    .iter()
                    .map(|c| sym("noise", c))
                    .collect::<Result<_, _>>()?,
            },
        };
        model.validate().map_err(|e| invalid("noise", e.to_string()))?;
        Ok(model)
    }

    pub fn transform_model(&self) -> Result<ChannelTransform, CliError> {
        let spec = self
            .transform
            .as_ref()
            .ok_or_else(|| invalid("transform", "required for the nonlinear model"))?;
        let mat = |rows: &[Vec<f64>]| Matrix::from_rows(rows).map_err(|e| invalid("transform", e.to_string()));
        Ok(match spec {
            TransformSpec::Identity => ChannelTransform::Identity,
            TransformSpec::Linear { matrix } => ChannelTransform::Linear(mat(matrix)?),
            TransformSpec::PolyFeatureLinear { matrix } => {
                ChannelTransform::PolyFeatureLinear(mat(matrix)?)
            }
        })
    }

    pub fn mixture_scaling(&self) -> MixtureScaling {
        match self.mixture_scaling {
            ScalingSpec::Weighted => MixtureScaling::Weighted,
            ScalingSpec::PerComponent => MixtureScaling::PerComponent,
        }
    }

    /// Solver settings; the solver seed is derived from `seed`.
    pub fn solver_config(&self) -> SolverConfig {
        let (lambda, lambda_k) = match self.lambda {
            LambdaSpec::Single(l) => (l, None),
            LambdaSpec::Pair([h, k]) => (h, Some(k)),
        };
        let mut cfg = SolverConfig::new(
            lambda,
            self.iterations,
            self.n_batch,
            crate::experiment::seed_for(self.seed, crate::experiment::Role::Solver, 0),
        );
        cfg.lambda_k = lambda_k;
        cfg.eta = self.eta.clone();
        cfg.record_every = self.record_every;
        cfg.selection = match self.selection {
            SelectionSpec::Final => Selection::FinalIterate,
            SelectionSpec::Holdout(fraction) => Selection::Holdout { fraction },
            SelectionSpec::Kfold(k) => Selection::KFold { k },
        };
        cfg
    }
}

/// Maps a library parameter error onto the config field it came from.
pub(crate) fn core_to_config(e: maxmargin::Error) -> CliError {
    match e {
        maxmargin::Error::InvalidParameter { name, reason } => {
            let field = match name {
                "lambda_k" => "lambda",
                "batch" => "n_batch",
                other => other,
            };
            invalid(field, reason)
        }
        other => CliError::Core(other),
    }
}

fn missing_or_unknown_field(msg: &str) -> Option<String> {
    for marker in ["missing field `", "unknown field `"] {
        if let Some(start) = msg.find(marker) {
            let rest = &msg[start + marker.len()..];
            return rest.find('`').map(|end| rest[..end].to_string());
        }
    }
    None
}
