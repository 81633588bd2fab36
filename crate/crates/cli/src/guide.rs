//! Training-SNR recommendation over a dB grid.

use maxmargin::channel::gamma_for_snr_db;
use maxmargin::solver::{training_snr_guidance, SnrGuidance};

use crate::config::{core_to_config, ExperimentConfig, Model};
use crate::error::CliError;
use crate::experiment::{seed_for, Role};

/// Runs the guidance rule on `grid_db` (defaults to `snr_test`), sharing the
/// experiment's training noise draws across grid points.
pub fn snr_guide(cfg: &ExperimentConfig, grid_db: Option<&[f64]>) -> Result<SnrGuidance, CliError> {
    cfg.validate()?;
    if cfg.model != Model::Additive {
        return Err(CliError::Config {
            field: "model".into(),
            reason: "training-SNR guidance applies to the additive model".into(),
        });
    }
    let grid = grid_db.unwrap_or(&cfg.snr_test);
    if grid.is_empty() || grid.iter().any(|s| !s.is_finite()) {
        return Err(CliError::Config {
            field: "grid".into(),
            reason: "needs finite SNR values".into(),
        });
    }
    let cb = cfg.codebook()?;
    let noise = cfg.noise_model()?;
    let gammas = grid
        .iter()
        .map(|&s| gamma_for_snr_db(&cb, &noise, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut solver = cfg.solver_config();
    solver.seed = seed_for(cfg.seed, Role::Data, 0);
    training_snr_guidance(&cb, &noise, &solver, &gammas, cfg.n_train, None).map_err(core_to_config)
}

pub fn to_csv(g: &SnrGuidance) -> String {
    let mut s = String::from("gamma,snr_db,hinge,bound_term,recommended\n");
    for r in &g.rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.gamma,
            r.snr_db,
            r.hinge,
            r.bound_term,
            r.gamma == g.recommended_gamma
        ));
    }
    s
}
