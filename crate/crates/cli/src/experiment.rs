//! Train, sweep the test SNR grid against baselines, write artifacts.

use std::fs;
use std::path::Path;

use maxmargin::channel::{
    gamma_for_snr_db, sample_noise, sample_nonlinear_dataset, sigma_w_for_snr_db,
    synthesize_additive_dataset, NonlinearDataset,
};
use maxmargin::decoder::{
    class_mean_decoder, error_probability_mc, estimated_precision, true_precision,
    true_transform_decoder, write_matrix_csv, Decoder, NearestNeighbor, PrecisionDecoder,
    TestChannel,
};
use maxmargin::rng::{derive_seed, domain};
use maxmargin::solver::{run_sgd_additive, run_sgd_nonlinear, AdditiveRun, NonlinearRun, Trace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{core_to_config, ExperimentConfig, Model};
use crate::error::CliError;
use crate::plot;

pub const LEARNED: &str = "learned";
pub const SIGMA_INV: &str = "sigma_inv";
pub const SIGMA_HAT_INV: &str = "sigma_hat_inv";
pub const IDENTITY: &str = "identity";
pub const TRUE_ML: &str = "true_ml";
pub const CLASS_MEAN: &str = "class_mean";

pub const RESULTS_FILE: &str = "results.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const DECODER_FILE: &str = "decoder.csv";
pub const AUXILIARY_FILE: &str = "auxiliary.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const PLOT_FILE: &str = "plot.svg";

/// What a derived seed is used for.
#[derive(Clone, Copy, Debug)]
pub enum Role {
    Data = 1,
    Solver = 2,
    MonteCarlo = 3,
}

/// Independent seed for `role` (and grid index) from the experiment seed.
pub fn seed_for(seed: u64, role: Role, index: u64) -> u64 {
    derive_seed(derive_seed(seed, domain::EXPERIMENT), ((role as u64) << 32) | index)
}

/// One row of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub snr_db: f64,
    pub decoder: String,
    pub p_hat: f64,
    pub std_err: f64,
    pub n_test: usize,
}

pub enum Trained {
    Additive {
        gamma: f64,
        noise: Vec<Vec<f64>>,
        run: AdditiveRun,
    },
    Nonlinear {
        sigma_w: f64,
        data: NonlinearDataset,
        run: NonlinearRun,
    },
}

impl Trained {
    pub fn trace(&self) -> &Trace {
        match self {
            Trained::Additive { run, .. } => &run.trace,
            Trained::Nonlinear { run, .. } => &run.trace,
        }
    }

    /// `Γ` for the additive model, `σ_W` for the non-linear one.
    pub fn training_scale(&self) -> f64 {
        match self {
            Trained::Additive { gamma, .. } => *gamma,
            Trained::Nonlinear { sigma_w, .. } => *sigma_w,
        }
    }
}

pub struct ExperimentOutcome {
    pub trained: Trained,
    pub results: Vec<ResultRow>,
}

/// Synthesizes the training set at `snr_train` and runs the solver.
pub fn train(cfg: &ExperimentConfig) -> Result<Trained, CliError> {
    cfg.validate()?;
    let cb = cfg.codebook()?;
    let solver = cfg.solver_config();
    let data_seed = seed_for(cfg.seed, Role::Data, 0);
    match cfg.model {
        Model::Additive => {
            let noise_model = cfg.noise_model()?;
            let gamma = gamma_for_snr_db(&cb, &noise_model, cfg.snr_train).map_err(core_to_config)?;
            let noise = sample_noise(&noise_model, cfg.n_train, data_seed)?;
            let ds = synthesize_additive_dataset(&cb, &noise, gamma)?;
            let run = run_sgd_additive(&ds, &cb, gamma, &solver).map_err(core_to_config)?;
            Ok(Trained::Additive { gamma, noise, run })
        }
        Model::Nonlinear => {
            let f = cfg.transform_model()?;
            let sigma_w = sigma_w_for_snr_db(&cb, &f, cfg.snr_train).map_err(core_to_config)?;
            let data = sample_nonlinear_dataset(&cb, &f, sigma_w, cfg.n_train, data_seed)?;
            let run = run_sgd_nonlinear(&data, &cb, &solver).map_err(core_to_config)?;
            Ok(Trained::Nonlinear { sigma_w, data, run })
        }
    }
}

/// Error estimates for the learned decoder and the baselines at every test
/// SNR. All decoders at one SNR share the same Monte-Carlo draws.
pub fn evaluate(cfg: &ExperimentConfig, trained: &Trained) -> Result<Vec<ResultRow>, CliError> {
    let cb = cfg.codebook()?;
    let per_snr: Vec<Vec<ResultRow>> = cfg
        .snr_test
        .par_iter()
        .enumerate()
        .map(|(idx, &snr)| -> Result<Vec<ResultRow>, CliError> {
            let mc_seed = seed_for(cfg.seed, Role::MonteCarlo, idx as u64);
            let (channel, decoders): (TestChannel, Vec<(&str, NearestNeighbor)>) = match trained {
                Trained::Additive { noise, run, .. } => {
                    let noise_model = cfg.noise_model()?;
                    let gamma = gamma_for_snr_db(&cb, &noise_model, snr)?;
                    let sigma_inv = true_precision(&noise_model, cfg.mixture_scaling())?;
                    let sigma_hat_inv = estimated_precision(noise)?;
                    let decoders = vec![
                        (LEARNED, run.decoder.nearest_neighbor(&cb, gamma)?),
                        (SIGMA_INV, sigma_inv.nearest_neighbor(&cb, gamma)?),
                        (SIGMA_HAT_INV, sigma_hat_inv.nearest_neighbor(&cb, gamma)?),
                        (
                            IDENTITY,
                            PrecisionDecoder::identity(cb.dim()).nearest_neighbor(&cb, gamma)?,
                        ),
                    ];
                    let channel = TestChannel::Additive {
                        codebook: cb.clone(),
                        gamma,
                        noise: noise_model,
                    };
                    (channel, decoders)
                }
                Trained::Nonlinear { data, run, .. } => {
                    let f = cfg.transform_model()?;
                    let sigma_w = sigma_w_for_snr_db(&cb, &f, snr)?;
                    let decoders = vec![
                        (LEARNED, run.decoder.nearest_neighbor(&cb)?),
                        (TRUE_ML, true_transform_decoder(&cb, &f)?),
                        (CLASS_MEAN, class_mean_decoder(data)?),
                    ];
                    let channel = TestChannel::Nonlinear {
                        codebook: cb.clone(),
                        transform: f,
                        sigma_w,
                    };
                    (channel, decoders)
                }
            };
            decoders
                .iter()
                .map(|(name, dec)| {
                    let est = error_probability_mc(dec as &dyn Decoder, &channel, cfg.n_test, mc_seed)?;
                    Ok(ResultRow {
                        snr_db: snr,
                        decoder: name.to_string(),
                        p_hat: est.p_hat,
                        std_err: est.std_err,
                        n_test: est.n_trials,
                    })
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok(per_snr.into_iter().flatten().collect())
}

fn create_file(path: &Path) -> Result<fs::File, CliError> {
    fs::File::create(path).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes the config echo, the learned matrices and the trace.
pub fn write_training_artifacts(
    cfg: &ExperimentConfig,
    trained: &Trained,
    dir: &Path,
) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let echo = dir.join(CONFIG_FILE);
    fs::write(&echo, cfg.to_json()).map_err(|e| CliError::io(&echo, e))?;
    match trained {
        Trained::Additive { run, .. } => {
            run.decoder.write_csv(create_file(&dir.join(DECODER_FILE))?)?;
        }
        Trained::Nonlinear { run, .. } => {
            write_matrix_csv(create_file(&dir.join(DECODER_FILE))?, "kernel", &run.pair.h)?;
            write_matrix_csv(
                create_file(&dir.join(AUXILIARY_FILE))?,
                "auxiliary",
                run.pair.k.as_matrix(),
            )?;
        }
    }
    trained.trace().write_csv(create_file(&dir.join(TRACE_FILE))?)?;
    Ok(())
}

pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create_file(path)?);
    let err = |e: csv::Error| CliError::io(path, std::io::Error::other(e));
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Full run: training artifacts, `results.csv` and `plot.svg` under `dir`.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutcome, CliError> {
    let trained = train(cfg)?;
    write_training_artifacts(cfg, &trained, dir)?;
    let results = evaluate(cfg, &trained)?;
    write_results(&results, &dir.join(RESULTS_FILE))?;
    let title = cfg.name.clone().unwrap_or_else(|| "error probability".to_string());
    let svg = plot::render_svg(&results, &title)?;
    let plot_path = dir.join(PLOT_FILE);
    fs::write(&plot_path, svg).map_err(|e| CliError::io(&plot_path, e))?;
    Ok(ExperimentOutcome { trained, results })
}
