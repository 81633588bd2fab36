//! Tabulates the theoretical bounds for a configured experiment.

use maxmargin::channel::{gamma_for_snr_db, sigma_w_for_snr_db};
use maxmargin::linalg::norm;
use maxmargin::margin_additive::ProperPartition;
use maxmargin::solver::{theory_bounds, BoundInputs, BoundKind, BoundReport};
use serde::Serialize;

use crate::config::{core_to_config, BoundsSpec, ExperimentConfig, LambdaSpec, Model};
use crate::error::CliError;

const DEFAULT_DELTA: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundRow {
    pub kind: String,
    pub n: Option<usize>,
    pub lambda: Option<f64>,
    pub zeta: Option<f64>,
    pub gamma_lower: Option<f64>,
    pub optimal_lambda: Option<f64>,
    pub estimation_term: Option<f64>,
    pub value: f64,
}

fn row(kind: &str, n: Option<usize>, r: BoundReport) -> BoundRow {
    BoundRow {
        kind: kind.to_string(),
        n,
        lambda: r.lambda_used,
        zeta: r.zeta,
        gamma_lower: r.gamma_lower,
        optimal_lambda: r.optimal_lambda,
        estimation_term: r.estimation_term,
        value: r.value,
    }
}

fn require(field: &str, v: Option<f64>) -> Result<f64, CliError> {
    match v {
        Some(x) if x > 0.0 && x.is_finite() => Ok(x),
        Some(x) => Err(CliError::Config {
            field: field.to_string(),
            reason: format!("must be positive, got {x}"),
        }),
        None => Err(CliError::Config {
            field: field.to_string(),
            reason: "required by the bounds report".into(),
        }),
    }
}

fn optional_positive(field: &str, v: Option<f64>) -> Result<Option<f64>, CliError> {
    v.map(|x| require(field, Some(x))).transpose()
}

/// Generalization bounds per `n` in the grid, then the optimization rate at
/// the configured `λ` and `T`.
pub fn bounds_report(cfg: &ExperimentConfig) -> Result<Vec<BoundRow>, CliError> {
    cfg.validate()?;
    let spec = cfg.bounds.clone().unwrap_or_default();
    let BoundsSpec {
        b,
        b_h,
        b_k,
        r_h,
        r_z,
        sigma,
        delta,
        n_grid,
    } = spec;
    let delta = delta.unwrap_or(DEFAULT_DELTA);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CliError::Config {
            field: "delta".into(),
            reason: format!("must lie in (0, 1), got {delta}"),
        });
    }
    let sigma = optional_positive("sigma", sigma)?;
    let n_grid = n_grid.unwrap_or_else(|| vec![cfg.n_train]);
    if n_grid.iter().any(|&n| n < 2) {
        return Err(CliError::Config {
            field: "n_grid".into(),
            reason: "entries must be at least 2".into(),
        });
    }
    let cb = cfg.codebook()?;
    let eta_min = match &cfg.eta {
        Some(eta) => ProperPartition::build_completed(&cb).with_eta(eta.clone()),
        None => Ok(ProperPartition::build_completed(&cb)),
    }
    .map_err(core_to_config)?
    .eta_min();
    let mut rows = Vec::new();
    let eval = |kind, inputs: &BoundInputs| theory_bounds(kind, inputs).map_err(core_to_config);

    match cfg.model {
        Model::Additive => {
            let b = require("b", b)?;
            let noise = cfg.noise_model()?;
            let gamma = gamma_for_snr_db(&cb, &noise, cfg.snr_train)?;
            let lambda = match cfg.lambda {
                LambdaSpec::Single(l) => l,
                LambdaSpec::Pair([h, _]) => h,
            };
            for &n in &n_grid {
                let mut inputs = BoundInputs {
                    r_x: gamma * cb.max_norm(),
                    sigma: sigma.unwrap_or_else(|| noise.second_moment().sqrt()),
                    b: Some(b),
                    eta_min,
                    min_delta_sq: gamma * gamma * cb.min_delta_sq(),
                    m: cb.m(),
                    n,
                    d_x: cb.dim(),
                    d_y: cb.dim(),
                    delta,
                    ..BoundInputs::default()
                };
                rows.push(row("gen_additive", Some(n), eval(BoundKind::GenAdditive, &inputs)?));
                inputs.lambda = Some(lambda);
                rows.push(row("gen_additive", Some(n), eval(BoundKind::GenAdditive, &inputs)?));
            }
            rows.push(optimization_row(lambda, cfg.iterations, delta)?);
        }
        Model::Nonlinear => {
            let b_h = require("b_h", b_h)?;
            let b_k = require("b_k", b_k)?;
            let r_h = require("r_h", r_h)?;
            let f = cfg.transform_model()?;
            let sigma_w = sigma_w_for_snr_db(&cb, &f, cfg.snr_train)?;
            let d_y = f.output_dim(cb.dim())?;
            let big_r = cb
                .codewords()
                .iter()
                .map(|x| norm(&f.apply(x)))
                .fold(0.0, f64::max);
            let sigma = sigma.unwrap_or(sigma_w);
            let r_z = match optional_positive("r_z", r_z)? {
                Some(r) => r,
                None => sigma_w * (d_y as f64).sqrt(),
            };
            for &n in &n_grid {
                let inputs = BoundInputs {
                    r_x: cb.max_norm(),
                    big_r_x: big_r,
                    r_z,
                    r_h,
                    sigma,
                    b_h: Some(b_h),
                    b_k: Some(b_k),
                    eta_min,
                    min_delta_sq: cb.min_delta_sq(),
                    m: cb.m(),
                    n,
                    d_x: cb.dim(),
                    d_y,
                    delta,
                    ..BoundInputs::default()
                };
                rows.push(row("gen_nonlinear", Some(n), eval(BoundKind::GenNonlinear, &inputs)?));
                rows.push(row(
                    "uniform_nonlinear",
                    Some(n),
                    eval(BoundKind::UniformNonlinear, &inputs)?,
                ));
            }
            let lambda = match cfg.lambda {
                LambdaSpec::Single(l) => l,
                LambdaSpec::Pair([h, k]) => h.min(k),
            };
            rows.push(optimization_row(lambda, cfg.iterations, delta)?);
        }
    }
    Ok(rows)
}

fn optimization_row(lambda: f64, iterations: usize, delta: f64) -> Result<BoundRow, CliError> {
    let inputs = BoundInputs {
        lambda: Some(lambda),
        iterations: Some(iterations),
        delta,
        ..BoundInputs::default()
    };
    Ok(row(
        "optimization",
        None,
        theory_bounds(BoundKind::Optimization, &inputs).map_err(core_to_config)?,
    ))
}

pub fn to_csv(rows: &[BoundRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| CliError::io("bounds", std::io::Error::other(e)))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::io("bounds", std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
