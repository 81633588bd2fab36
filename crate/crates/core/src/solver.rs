//! Stochastic sub-gradient training for both channel models, hypothesis
//! selection, and evaluators for the generalization and optimization bounds.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{sample_noise, snr_db, AdditiveDataset, Codebook, NoiseModel, NonlinearDataset};
use crate::decoder::{empirical_error_rate, KernelDecoder, PrecisionDecoder};
use crate::error::{invalid_param, Error, Result};
use crate::linalg::{project_psd, SymMatrix};
use crate::margin_additive::{
    hinge_loss_additive, regularizer_additive, subgradient_additive, transform_samples,
    AdditiveObjectiveParams, ProperPartition, TransformedSamples,
};
use crate::margin_nonlinear::{
    hinge_loss_nonlinear, project_hk, regularizer_nonlinear, subgradient_nonlinear, KernelPair,
    NonlinearObjectiveParams,
};
use crate::rng::{domain, substream};

/// How the returned hypothesis is picked among the recorded iterates.
#[derive(Clone, Debug, PartialEq)]
pub enum Selection {
    FinalIterate,
    /// Train on `1 − fraction` of the data, pick the recorded iterate with the
    /// lowest error on the rest.
    Holdout { fraction: f64 },
    /// Sum validation errors over `k` folds per recorded step, then take that
    /// step from a run on the full data.
    KFold { k: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub lambda: f64,
    /// Weight of the `K` block in the non-linear model; defaults to `lambda`.
    pub lambda_k: Option<f64>,
    /// Partition weights; uniform when absent.
    pub eta: Option<Vec<f64>>,
    pub iterations: usize,
    pub batch: usize,
    pub seed: u64,
    pub selection: Selection,
    /// Trace stride; defaults to `max(1, T/200)`.
    pub record_every: Option<usize>,
}

impl SolverConfig {
    pub fn new(lambda: f64, iterations: usize, batch: usize, seed: u64) -> Self {
        SolverConfig {
            lambda,
            lambda_k: None,
            eta: None,
            iterations,
            batch,
            seed,
            selection: Selection::FinalIterate,
            record_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(invalid_param("lambda", format!("must be positive, got {}", self.lambda)));
        }
        if let Some(lk) = self.lambda_k {
            if !(lk > 0.0 && lk.is_finite()) {
                return Err(invalid_param("lambda_k", format!("must be positive, got {lk}")));
            }
        }
        if self.iterations == 0 {
            return Err(invalid_param("iterations", "must be at least 1"));
        }
        if self.batch == 0 {
            return Err(invalid_param("batch", "must be at least 1"));
        }
        if self.record_every == Some(0) {
            return Err(invalid_param("record_every", "must be at least 1"));
        }
        match self.selection {
            Selection::Holdout { fraction } if !(fraction > 0.0 && fraction < 1.0) => {
                Err(invalid_param("selection", format!("holdout fraction {fraction} not in (0, 1)")))
            }
            Selection::KFold { k } if k < 2 => Err(invalid_param("selection", "k-fold needs k ≥ 2")),
            _ => Ok(()),
        }
    }

    pub fn stride(&self) -> usize {
        self.record_every.unwrap_or((self.iterations / 200).max(1))
    }

    fn records(&self, t: usize) -> bool {
        t.is_multiple_of(self.stride()) || t == self.iterations
    }
}

/// One recorded iteration. `regularizer` already includes the `λ` weights,
/// so `objective = hinge + regularizer`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub t: usize,
    pub objective: f64,
    pub hinge: f64,
    pub regularizer: f64,
    pub norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub points: Vec<TracePoint>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lowest objective seen up to and including each recorded point.
    pub fn running_best(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.points
            .iter()
            .map(|p| {
                best = best.min(p.objective);
                best
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::InvalidInput(format!("writing trace: {e}"));
        wr.write_record(["t", "objective", "hinge", "regularizer", "norm"])
            .map_err(io)?;
        for p in &self.points {
            wr.write_record([
                p.t.to_string(),
                p.objective.to_string(),
                p.hinge.to_string(),
                p.regularizer.to_string(),
                p.norm.to_string(),
            ])
            .map_err(io)?;
        }
        wr.flush()
            .map_err(|e| Error::InvalidInput(format!("writing trace: {e}")))
    }
}

/// Output of [`run_sgd_additive`].
#[derive(Clone, Debug)]
pub struct AdditiveRun {
    pub decoder: PrecisionDecoder,
    pub trace: Trace,
    /// Iterate at every trace point.
    pub iterates: Vec<SymMatrix>,
    /// Index into `iterates` of the returned hypothesis.
    pub selected: usize,
    /// Per trace point validation error, when a validation rule was used.
    pub validation_errors: Option<Vec<f64>>,
}

/// Output of [`run_sgd_nonlinear`].
#[derive(Clone, Debug)]
pub struct NonlinearRun {
    pub decoder: KernelDecoder,
    pub pair: KernelPair,
    pub trace: Trace,
    pub iterates: Vec<KernelPair>,
    pub selected: usize,
    pub validation_errors: Option<Vec<f64>>,
}

/// Index of the chosen iterate: the last one for [`Selection::FinalIterate`],
/// otherwise the one with the lowest validation error, ties going to the latest.
pub fn select_hypothesis(validation_errors: &[f64], selection: &Selection) -> Result<usize> {
    if validation_errors.is_empty() {
        return Err(Error::InvalidInput("no recorded iterates to select from".into()));
    }
    if *selection == Selection::FinalIterate {
        return Ok(validation_errors.len() - 1);
    }
    let mut best = 0;
    for (i, &e) in validation_errors.iter().enumerate() {
        if e <= validation_errors[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Partition used by the solver. Codebooks whose differences do not span the
/// space get completion directions for the missing ones.
fn solver_partition(cb: &Codebook, eta: Option<&[f64]>) -> Result<ProperPartition> {
    let part = ProperPartition::build_completed(cb);
    match eta {
        Some(e) => part.with_eta(e.to_vec()),
        None => Ok(part),
    }
}

fn draw_batch(seed: u64, t: usize, len: usize, c: usize) -> Vec<usize> {
    let mut rng = substream(seed, domain::BATCH, t as u64);
    (0..c).map(|_| rng.gen_range(0..len)).collect()
}

/// Shuffled `0..n` from the split stream.
fn split_order(seed: u64, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, domain::SPLIT, 0));
    idx
}

/// `(train, validation)` index sets for a holdout split of `n` items.
fn holdout_split(seed: u64, n: usize, fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(invalid_param("selection", "holdout needs at least 2 samples"));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let order = split_order(seed, n);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// `(train, validation)` index sets for each of `k` folds.
fn kfold_splits(seed: u64, n: usize, k: usize) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k > n {
        return Err(invalid_param("selection", format!("{k} folds but only {n} samples")));
    }
    let order = split_order(seed, n);
    Ok((0..k)
        .map(|f| {
            let mut train = Vec::with_capacity(n);
            let mut val = Vec::with_capacity(n / k + 1);
            for (pos, &i) in order.iter().enumerate() {
                if pos % k == f {
                    val.push(i);
                } else {
                    train.push(i);
                }
            }
            train.sort_unstable();
            val.sort_unstable();
            (train, val)
        })
        .collect())
}

fn sum_columns(rows: Vec<Vec<f64>>) -> Vec<f64> {
    let mut total = vec![0.0; rows.first().map_or(0, Vec::len)];
    for r in rows {
        total.iter_mut().zip(r).for_each(|(a, b)| *a += b);
    }
    total
}

/// One projected sub-gradient step `Π_PSD(S − ∇/(λt))` on `batch`.
pub fn sgd_step_additive(
    s: &SymMatrix,
    ts: &TransformedSamples,
    batch: &[usize],
    params: &AdditiveObjectiveParams,
    t: usize,
) -> Result<SymMatrix> {
    let g = subgradient_additive(s, ts, batch, params)?;
    project_psd(&s.add_scaled(&g, -1.0 / (params.lambda * t as f64)))
}

/// Full training pass on one dataset, recording every `stride` steps.
fn train_additive(
    ds: &AdditiveDataset,
    cb: &Codebook,
    gamma: f64,
    cfg: &SolverConfig,
) -> Result<(Trace, Vec<SymMatrix>)> {
    let ts = transform_samples(ds, cb, gamma)?;
    let params = AdditiveObjectiveParams::new(cfg.lambda, solver_partition(cb, cfg.eta.as_deref())?)?;
    let mut s = SymMatrix::zeros(cb.dim());
    let mut trace = Trace::default();
    let mut iterates = Vec::new();
    for t in 1..=cfg.iterations {
        let batch = draw_batch(cfg.seed, t, ts.len(), cfg.batch);
        s = sgd_step_additive(&s, &ts, &batch, &params, t)?;
        if cfg.records(t) {
            let hinge = hinge_loss_additive(&s, &ts);
            let regularizer = cfg.lambda * regularizer_additive(&s, &ts, &params.partition);
            trace.points.push(TracePoint {
                t,
                objective: hinge + regularizer,
                hinge,
                regularizer,
                norm: s.frobenius_norm(),
            });
            iterates.push(s.clone());
        }
    }
    Ok((trace, iterates))
}

fn additive_validation_errors(
    iterates: &[SymMatrix],
    val: &AdditiveDataset,
    cb: &Codebook,
    gamma: f64,
) -> Result<Vec<f64>> {
    iterates
        .iter()
        .map(|s| {
            let nn = PrecisionDecoder::new(s.clone())?.nearest_neighbor(cb, gamma)?;
            empirical_error_rate(&nn, val.iter())
        })
        .collect()
}

/// Trains a precision-matrix decoder with projected stochastic sub-gradient
/// steps of size `1/(λt)` from `S = 0`. Validation rules split the noise draws,
/// so every held-out draw appears under every label.
pub fn run_sgd_additive(
    ds: &AdditiveDataset,
    cb: &Codebook,
    gamma: f64,
    cfg: &SolverConfig,
) -> Result<AdditiveRun> {
    cfg.validate()?;
    let (trace, iterates, validation_errors) = match cfg.selection {
        Selection::FinalIterate => {
            let (trace, iterates) = train_additive(ds, cb, gamma, cfg)?;
            (trace, iterates, None)
        }
        Selection::Holdout { fraction } => {
            let (train, val) = holdout_split(cfg.seed, ds.n(), fraction)?;
            let train_ds = ds.restrict(cb, &train)?;
            let val_ds = ds.restrict(cb, &val)?;
            let (trace, iterates) = train_additive(&train_ds, cb, gamma, cfg)?;
            let errors = additive_validation_errors(&iterates, &val_ds, cb, gamma)?;
            (trace, iterates, Some(errors))
        }
        Selection::KFold { k } => {
            let folds = kfold_splits(cfg.seed, ds.n(), k)?;
            let per_fold = folds
                .par_iter()
                .map(|(train, val)| {
                    let train_ds = ds.restrict(cb, train)?;
                    let val_ds = ds.restrict(cb, val)?;
                    let (_, iterates) = train_additive(&train_ds, cb, gamma, cfg)?;
                    additive_validation_errors(&iterates, &val_ds, cb, gamma)
                })
                .collect::<Result<Vec<_>>>()?;
            let (trace, iterates) = train_additive(ds, cb, gamma, cfg)?;
            (trace, iterates, Some(sum_columns(per_fold)))
        }
    };
    let selected = match &validation_errors {
        Some(e) => select_hypothesis(e, &cfg.selection)?,
        None => iterates.len().checked_sub(1).ok_or_else(|| {
            Error::InvalidInput("no recorded iterates to select from".into())
        })?,
    };
    Ok(AdditiveRun {
        decoder: PrecisionDecoder::new(iterates[selected].clone())?,
        trace,
        iterates,
        selected,
        validation_errors,
    })
}

fn nonlinear_params(cb: &Codebook, cfg: &SolverConfig) -> Result<NonlinearObjectiveParams> {
    NonlinearObjectiveParams::new(
        cfg.lambda,
        cfg.lambda_k.unwrap_or(cfg.lambda),
        solver_partition(cb, cfg.eta.as_deref())?,
    )
}

/// One step `H −= ∇_H/(λ_H t)`, `K −= ∇_K/(λ_K t)` followed by the projection
/// onto `{HᵀH ⪯ K}`.
pub fn sgd_step_nonlinear(
    pair: &KernelPair,
    ds: &NonlinearDataset,
    batch: &[usize],
    cb: &Codebook,
    params: &NonlinearObjectiveParams,
    t: usize,
) -> Result<KernelPair> {
    let (gh, gk) = subgradient_nonlinear(pair, ds, batch, cb, params)?;
    let t = t as f64;
    let h = pair.h.add_scaled(&gh, -1.0 / (params.lambda_h * t));
    let k = pair.k.add_scaled(&gk, -1.0 / (params.lambda_k * t));
    project_hk(&KernelPair::new(h, k)?)
}

fn train_nonlinear(
    ds: &NonlinearDataset,
    cb: &Codebook,
    cfg: &SolverConfig,
) -> Result<(Trace, Vec<KernelPair>)> {
    if ds.is_empty() {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    let params = nonlinear_params(cb, cfg)?;
    let mut pair = KernelPair::zeros(ds.dim(), cb.dim());
    let mut trace = Trace::default();
    let mut iterates = Vec::new();
    for t in 1..=cfg.iterations {
        let batch = draw_batch(cfg.seed, t, ds.len(), cfg.batch);
        pair = sgd_step_nonlinear(&pair, ds, &batch, cb, &params, t)?;
        if cfg.records(t) {
            let hinge = hinge_loss_nonlinear(&pair, ds, cb)?;
            let regularizer = regularizer_nonlinear(&pair, cb, &params);
            trace.points.push(TracePoint {
                t,
                objective: hinge + regularizer,
                hinge,
                regularizer,
                norm: pair.norm(),
            });
            iterates.push(pair.clone());
        }
    }
    Ok((trace, iterates))
}

fn nonlinear_validation_errors(
    iterates: &[KernelPair],
    val: &NonlinearDataset,
    cb: &Codebook,
) -> Result<Vec<f64>> {
    iterates
        .iter()
        .map(|p| {
            let nn = KernelDecoder::new(p.h.clone())?.nearest_neighbor(cb)?;
            empirical_error_rate(&nn, val.iter())
        })
        .collect()
}

/// Trains `(H, K)` jointly from zero; the decoder uses `H` alone.
pub fn run_sgd_nonlinear(
    ds: &NonlinearDataset,
    cb: &Codebook,
    cfg: &SolverConfig,
) -> Result<NonlinearRun> {
    cfg.validate()?;
    if ds.m() != cb.m() {
        return Err(Error::InvalidInput("dataset does not match the codebook".into()));
    }
    let (trace, iterates, validation_errors) = match cfg.selection {
        Selection::FinalIterate => {
            let (trace, iterates) = train_nonlinear(ds, cb, cfg)?;
            (trace, iterates, None)
        }
        Selection::Holdout { fraction } => {
            let (train, val) = holdout_split(cfg.seed, ds.len(), fraction)?;
            let (trace, iterates) = train_nonlinear(&ds.subset(&train), cb, cfg)?;
            let errors = nonlinear_validation_errors(&iterates, &ds.subset(&val), cb)?;
            (trace, iterates, Some(errors))
        }
        Selection::KFold { k } => {
            let folds = kfold_splits(cfg.seed, ds.len(), k)?;
            let per_fold = folds
                .par_iter()
                .map(|(train, val)| {
                    let (_, iterates) = train_nonlinear(&ds.subset(train), cb, cfg)?;
                    nonlinear_validation_errors(&iterates, &ds.subset(val), cb)
                })
                .collect::<Result<Vec<_>>>()?;
            let (trace, iterates) = train_nonlinear(ds, cb, cfg)?;
            (trace, iterates, Some(sum_columns(per_fold)))
        }
    };
    let selected = match &validation_errors {
        Some(e) => select_hypothesis(e, &cfg.selection)?,
        None => iterates.len().checked_sub(1).ok_or_else(|| {
            Error::InvalidInput("no recorded iterates to select from".into())
        })?,
    };
    let pair = iterates[selected].clone();
    Ok(NonlinearRun {
        decoder: KernelDecoder::new(pair.h.clone())?,
        pair,
        trace,
        iterates,
        selected,
        validation_errors,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    GenAdditive,
    GenNonlinear,
    UniformNonlinear,
    Optimization,
}

/// Constants entering the bound formulas. Each kind reads only the fields it
/// needs; see [`theory_bounds`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundInputs {
    /// `max‖x‖` over the codebook
    pub r_x: f64,
    /// `max‖f(x)‖`
    pub big_r_x: f64,
    /// noise radius surrogate
    pub r_z: f64,
    /// singular-value cap on `H`
    pub r_h: f64,
    /// sub-Gaussian variance proxy `σ_Z` or `σ_W`
    pub sigma: f64,
    /// norm cap `B` of the additive class
    pub b: Option<f64>,
    pub b_h: Option<f64>,
    pub b_k: Option<f64>,
    pub eta_min: f64,
    /// `min_{p<q}‖δ_pq‖²`
    pub min_delta_sq: f64,
    pub m: usize,
    pub n: usize,
    pub d_x: usize,
    pub d_y: usize,
    /// confidence parameter
    pub delta: f64,
    /// Evaluate at this `λ` instead of the optimal one.
    pub lambda: Option<f64>,
    /// Empirical (or minimal) hinge loss added to the bound; 0 when absent.
    pub hinge: Option<f64>,
    pub iterations: Option<usize>,
}

/// Result of [`theory_bounds`]. The generalization bounds describe the exact
/// regularized minimizer, not the approximate one returned by the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub kind: BoundKind,
    pub zeta: Option<f64>,
    /// `η_min · min‖δ‖²`
    pub gamma_lower: Option<f64>,
    pub optimal_lambda: Option<f64>,
    /// The `λ` at which `estimation_term` and `value` were evaluated.
    pub lambda_used: Option<f64>,
    /// `log(n) ζ / (λ n η_min min‖δ‖²)`
    pub estimation_term: Option<f64>,
    pub value: f64,
}

fn positive(name: &'static str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid_param(name, format!("must be positive, got {v}")))
    }
}

fn nonneg(name: &'static str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid_param(name, format!("must be non-negative, got {v}")))
    }
}

fn confidence(v: f64) -> Result<f64> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(invalid_param("delta", format!("must lie in (0, 1), got {v}")))
    }
}

/// `ζ` of the additive generalization bound.
pub fn zeta_additive(r_x: f64, sigma_z: f64) -> f64 {
    let s2 = sigma_z * sigma_z;
    let r2 = r_x * r_x;
    32.0 * r2 * (6.0 * (128.0 * r2 * s2 + 1024.0 * s2 * s2 + r2 * r2)).sqrt()
}

/// `ζ` of the non-linear generalization bound.
pub fn zeta_nonlinear(r_x: f64, big_r_x: f64, sigma_w: f64) -> f64 {
    24.0 * r_x * r_x
        * (25.0 * r_x.powi(4) + 16.0 * big_r_x.powi(4) + 64.0 * sigma_w.powi(4)).sqrt()
}

fn generalization(kind: BoundKind, zeta: f64, b: Option<f64>, inp: &BoundInputs) -> Result<BoundReport> {
    if inp.m < 2 {
        return Err(invalid_param("m", "need at least 2 codewords"));
    }
    if inp.n < 2 {
        return Err(invalid_param("n", "need at least 2 samples"));
    }
    let eta_min = positive("eta_min", inp.eta_min)?;
    let min_delta_sq = positive("min_delta_sq", inp.min_delta_sq)?;
    let hinge = nonneg("hinge", inp.hinge.unwrap_or(0.0))?;
    let n = inp.n as f64;
    let mm1 = (inp.m - 1) as f64;
    let gamma_lower = eta_min * min_delta_sq;
    let core = n.ln() * zeta / (n * gamma_lower);
    let optimal_lambda = match b {
        Some(b) => Some((core / (positive("B", b)?.powi(2))).sqrt()),
        None => None,
    };
    let lambda_used = match inp.lambda {
        Some(l) => positive("lambda", l)?,
        None => optimal_lambda
            .ok_or_else(|| invalid_param("B", "a norm cap or an explicit lambda is required"))?,
    };
    let estimation_term = core / lambda_used;
    let value = match (inp.lambda, b) {
        (None, Some(b)) => mm1 * hinge + mm1 * b * (4.0 * core).sqrt(),
        _ => mm1 * hinge + mm1 * estimation_term,
    };
    Ok(BoundReport {
        kind,
        zeta: Some(zeta),
        gamma_lower: Some(gamma_lower),
        optimal_lambda,
        lambda_used: Some(lambda_used),
        estimation_term: Some(estimation_term),
        value,
    })
}

/// Evaluates one of the bounds from `inputs`. Pure formula evaluation.
///
/// With a norm cap and no explicit `λ`, the generalization bounds are
/// evaluated at the optimal `λ`: `(m−1)·hinge + (m−1)·B·√(4 log(n) ζ / (n γ))`.
/// With an explicit `λ` they read `(m−1)·hinge + (m−1)·log(n) ζ / (λ n γ)`.
pub fn theory_bounds(kind: BoundKind, inputs: &BoundInputs) -> Result<BoundReport> {
    match kind {
        BoundKind::GenAdditive => {
            let zeta = zeta_additive(positive("r_x", inputs.r_x)?, nonneg("sigma", inputs.sigma)?);
            generalization(kind, zeta, inputs.b, inputs)
        }
        BoundKind::GenNonlinear => {
            let zeta = zeta_nonlinear(
                positive("r_x", inputs.r_x)?,
                positive("R_x", inputs.big_r_x)?,
                nonneg("sigma", inputs.sigma)?,
            );
            let b = match (inputs.b_h, inputs.b_k) {
                (Some(h), Some(k)) => Some(positive("B_H", h)? + positive("B_K", k)?),
                (None, None) => None,
                _ => return Err(invalid_param("B_H", "B_H and B_K must be given together")),
            };
            generalization(kind, zeta, b, inputs)
        }
        BoundKind::UniformNonlinear => uniform_nonlinear(inputs),
        BoundKind::Optimization => {
            let lambda = positive("lambda", inputs.lambda.unwrap_or(0.0))?;
            let t = inputs
                .iterations
                .filter(|&t| t >= 1)
                .ok_or_else(|| invalid_param("iterations", "must be at least 1"))?;
            let delta = confidence(inputs.delta)?;
            let t = t as f64;
            Ok(BoundReport {
                kind,
                zeta: None,
                gamma_lower: None,
                optimal_lambda: None,
                lambda_used: Some(lambda),
                estimation_term: None,
                value: t.ln().powi(3) * (1.0 / delta).ln() / (lambda * t),
            })
        }
    }
}

fn uniform_nonlinear(inp: &BoundInputs) -> Result<BoundReport> {
    let r_x = positive("r_x", inp.r_x)?;
    let big_r = positive("R_x", inp.big_r_x)?;
    let r_z = nonneg("r_z", inp.r_z)?;
    let r_h = positive("r_H", inp.r_h)?;
    let delta = confidence(inp.delta)?;
    if inp.d_x == 0 || inp.d_y == 0 {
        return Err(invalid_param("d_x", "dimensions must be positive"));
    }
    if inp.n == 0 {
        return Err(invalid_param("n", "must be positive"));
    }
    let (dx, dy) = (inp.d_x as f64, inp.d_y as f64);
    let dm = dx.min(dy);
    let n = inp.n as f64;
    let a = dx * dx + dy * dy + dm;
    let l = (12.0 * dm * r_h).ln();
    if l <= 0.0 {
        return Err(invalid_param("r_H", "need 12·min(d_x, d_y)·r_H > 1"));
    }
    let entropy = 24.0
        * (a / (n * l)).sqrt()
        * (2.0 * l + 1.0 - (2.0 * l - (2.0 / 3.0) * (n * l / a).sqrt()).exp());
    let range = 2.0 * (big_r + r_z) * r_h * r_x + r_x * r_x * r_h * r_h;
    let deviation = (2.0 * range * range * (2.0 / delta).ln() / n).sqrt();
    Ok(BoundReport {
        kind: BoundKind::UniformNonlinear,
        zeta: None,
        gamma_lower: None,
        optimal_lambda: None,
        lambda_used: None,
        estimation_term: None,
        value: entropy + deviation,
    })
}

/// One grid point of [`training_snr_guidance`].
#[derive(Clone, Debug, PartialEq)]
pub struct GuidanceRow {
    pub gamma: f64,
    pub snr_db: f64,
    /// Training hinge loss of the selected iterate.
    pub hinge: f64,
    /// Estimation term of the additive bound for the scaled codebook.
    pub bound_term: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnrGuidance {
    pub rows: Vec<GuidanceRow>,
    pub recommended_gamma: f64,
}

/// Trains once per `Γ` in `gammas` on the same `n` noise draws and returns
/// the `Γ` where the training hinge is closest to the estimation term
/// `log(n) ζ / (λ n η_min min‖Γδ‖²)` (ties go to the smaller index).
/// `sigma_z` defaults to `√E‖Z‖²`.
pub fn training_snr_guidance(
    cb: &Codebook,
    noise: &NoiseModel,
    cfg: &SolverConfig,
    gammas: &[f64],
    n: usize,
    sigma_z: Option<f64>,
) -> Result<SnrGuidance> {
    if gammas.is_empty() {
        return Err(invalid_param("gammas", "grid is empty"));
    }
    cfg.validate()?;
    let sigma_z = match sigma_z {
        Some(s) => nonneg("sigma_z", s)?,
        None => noise.second_moment().sqrt(),
    };
    let z = sample_noise(noise, n, cfg.seed)?;
    let eta_min = solver_partition(cb, cfg.eta.as_deref())?.eta_min();
    let rows = gammas
        .par_iter()
        .map(|&gamma| {
            let ds = crate::channel::synthesize_additive_dataset(cb, &z, gamma)?;
            let run = run_sgd_additive(&ds, cb, gamma, cfg)?;
            let ts = transform_samples(&ds, cb, gamma)?;
            let hinge = hinge_loss_additive(run.decoder.matrix(), &ts);
            let report = theory_bounds(
                BoundKind::GenAdditive,
                &BoundInputs {
                    r_x: gamma * cb.max_norm(),
                    sigma: sigma_z,
                    eta_min,
                    min_delta_sq: gamma * gamma * cb.min_delta_sq(),
                    m: cb.m(),
                    n: n.max(2),
                    lambda: Some(cfg.lambda),
                    ..BoundInputs::default()
                },
            )?;
            Ok(GuidanceRow {
                gamma,
                snr_db: snr_db(cb, gamma, noise)?,
                hinge,
                bound_term: report.estimation_term.unwrap_or(f64::NAN),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if (r.hinge - r.bound_term).abs() < (rows[best].hinge - rows[best].bound_term).abs() {
            best = i;
        }
    }
    Ok(SnrGuidance {
        recommended_gamma: rows[best].gamma,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize_additive_dataset, Preset};
    use crate::margin_additive::empirical_margin;

    fn antipodal() -> Codebook {
        Codebook::preset(Preset::Antipodal)
    }

    #[test]
    fn separable_toy_reaches_zero_hinge() {
        let cb = antipodal();
        let ds = synthesize_additive_dataset(&cb, &[vec![0.0, 0.0]], 1.0).unwrap();
        let cfg = SolverConfig::new(1e-3, 1000, 1, 7);
        let run = run_sgd_additive(&ds, &cb, 1.0, &cfg).unwrap();
        let ts = transform_samples(&ds, &cb, 1.0).unwrap();
        let s = run.decoder.matrix();
        assert_eq!(hinge_loss_additive(s, &ts), 0.0);
        assert!(empirical_margin(s, &ts).unwrap() >= 1.0);
    }

    #[test]
    fn zero_subgradient_step_stays_at_zero() {
        // with S = 0 the regularizer is flat; a sample with a = 0 has an active
        // hinge but contributes a zero outer product
        let cb = antipodal();
        let gamma = 1.0;
        let ds = synthesize_additive_dataset(&cb, &[vec![-1.0, -1.0]], gamma).unwrap();
        let ts = transform_samples(&ds, &cb, gamma).unwrap();
        assert!(ts.get(0).a.iter().all(|&v| v == 0.0));
        let params = AdditiveObjectiveParams::new(1.0, ProperPartition::build_completed(&cb)).unwrap();
        let s = sgd_step_additive(&SymMatrix::zeros(2), &ts, &[0], &params, 1).unwrap();
        assert_eq!(s, SymMatrix::zeros(2));
    }

    #[test]
    fn stride_and_final_point_recorded() {
        let cb = antipodal();
        let ds = synthesize_additive_dataset(&cb, &[vec![0.3, -0.2], vec![0.1, 0.5]], 1.0).unwrap();
        let mut cfg = SolverConfig::new(0.1, 7, 2, 1);
        cfg.record_every = Some(3);
        let run = run_sgd_additive(&ds, &cb, 1.0, &cfg).unwrap();
        let ts: Vec<usize> = run.trace.points.iter().map(|p| p.t).collect();
        assert_eq!(ts, vec![3, 6, 7]);
        assert_eq!(run.selected, 2);
        assert_eq!(SolverConfig::new(1.0, 1000, 1, 0).stride(), 5);
        assert_eq!(SolverConfig::new(1.0, 50, 1, 0).stride(), 1);
    }

    #[test]
    fn config_validation() {
        let ok = SolverConfig::new(1.0, 10, 1, 0);
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.lambda = 0.0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.iterations = 0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.batch = 0;
        assert!(c.validate().is_err());
        let mut c = ok.clone();
        c.selection = Selection::Holdout { fraction: 1.0 };
        assert!(c.validate().is_err());
        let mut c = ok;
        c.selection = Selection::KFold { k: 1 };
        assert!(c.validate().is_err());
    }

    #[test]
    fn selection_rules() {
        let improving = [0.5, 0.4, 0.3];
        assert_eq!(select_hypothesis(&improving, &Selection::FinalIterate).unwrap(), 2);
        let holdout = Selection::Holdout { fraction: 0.2 };
        assert_eq!(select_hypothesis(&improving, &holdout).unwrap(), 2);
        let noisy = [0.5, 0.1, 0.3, 0.2];
        assert_eq!(select_hypothesis(&noisy, &holdout).unwrap(), 1);
        assert_eq!(select_hypothesis(&[0.2, 0.1, 0.1], &holdout).unwrap(), 2);
        assert_eq!(select_hypothesis(&[0.7], &holdout).unwrap(), 0);
        assert!(select_hypothesis(&[], &holdout).is_err());
    }

    #[test]
    fn splits_partition_indices() {
        let (train, val) = holdout_split(3, 10, 0.3).unwrap();
        assert_eq!(val.len(), 3);
        let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let folds = kfold_splits(3, 10, 3).unwrap();
        let mut seen: Vec<usize> = folds.iter().flat_map(|(_, v)| v.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert!(kfold_splits(3, 2, 3).is_err());
    }

    #[test]
    fn validation_runs_select_recorded_iterate() {
        let cb = Codebook::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let noise = NoiseModel::IsotropicGaussian { dim: 2, sigma: 0.4 };
        let z = sample_noise(&noise, 40, 5).unwrap();
        let ds = synthesize_additive_dataset(&cb, &z, 1.0).unwrap();
        for selection in [Selection::Holdout { fraction: 0.25 }, Selection::KFold { k: 4 }] {
            let mut cfg = SolverConfig::new(0.05, 100, 4, 9);
            cfg.selection = selection;
            let run = run_sgd_additive(&ds, &cb, 1.0, &cfg).unwrap();
            let errs = run.validation_errors.as_ref().unwrap();
            assert_eq!(errs.len(), run.iterates.len());
            let best = errs.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(errs[run.selected], best);
            assert_eq!(run.decoder.matrix(), &run.iterates[run.selected]);
        }
    }

    #[test]
    fn nonlinear_single_step_is_feasible() {
        let cb = Codebook::preset(Preset::Psk8);
        // noiseless outputs at the codewords: batch hinge is active at H = 0
        let ds = NonlinearDataset::from_parts(8, vec![0], vec![cb.codeword(0).to_vec()]).unwrap();
        let cfg = SolverConfig::new(10.0, 1, 1, 0);
        let run = run_sgd_nonlinear(&ds, &cb, &cfg).unwrap();
        let f = crate::margin_nonlinear::schur_feasibility(&run.pair, 1e-8).unwrap();
        assert!(f.feasible);
        assert!(run.pair.h.frobenius_norm() < 1.0);
    }

    #[test]
    fn zeta_limits() {
        assert!((zeta_additive(1.0, 0.0) - 32.0 * 6f64.sqrt()).abs() < 1e-12);
        assert!((zeta_nonlinear(1.0, 1.0, 0.0) - 24.0 * 41f64.sqrt()).abs() < 1e-12);
    }

    fn additive_inputs(n: usize) -> BoundInputs {
        BoundInputs {
            r_x: 1.0,
            sigma: 0.5,
            b: Some(2.0),
            eta_min: 1.0 / 3.0,
            min_delta_sq: 2.0,
            m: 4,
            n,
            ..BoundInputs::default()
        }
    }

    #[test]
    fn optimal_lambda_scaling() {
        // λ* ∝ √(log n / n); removing the log leaves 1/√n
        let a = theory_bounds(BoundKind::GenAdditive, &additive_inputs(1000)).unwrap();
        let b = theory_bounds(BoundKind::GenAdditive, &additive_inputs(4000)).unwrap();
        let la = a.optimal_lambda.unwrap() / (1000f64.ln()).sqrt();
        let lb = b.optimal_lambda.unwrap() / (4000f64.ln()).sqrt();
        assert!((la / lb - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bound_at_optimal_lambda_balances_terms() {
        let inp = additive_inputs(500);
        let r = theory_bounds(BoundKind::GenAdditive, &inp).unwrap();
        let lam = r.optimal_lambda.unwrap();
        let b = inp.b.unwrap();
        // regularization and estimation contributions match at the optimum
        assert!((lam * b * b - r.estimation_term.unwrap()).abs() < 1e-9 * lam * b * b);
        let mut at = inp.clone();
        at.lambda = Some(lam);
        let explicit = theory_bounds(BoundKind::GenAdditive, &at).unwrap();
        assert!((r.value - 2.0 * explicit.value).abs() < 1e-9 * r.value);
    }

    #[test]
    fn bound_input_errors() {
        let mut inp = additive_inputs(100);
        inp.r_x = 0.0;
        assert!(theory_bounds(BoundKind::GenAdditive, &inp).is_err());
        let mut inp = additive_inputs(100);
        inp.b = None;
        assert!(theory_bounds(BoundKind::GenAdditive, &inp).is_err());
        let inp = BoundInputs {
            r_x: 1.0,
            big_r_x: 1.0,
            r_h: 0.01,
            d_x: 2,
            d_y: 2,
            n: 100,
            delta: 0.05,
            ..BoundInputs::default()
        };
        assert!(theory_bounds(BoundKind::UniformNonlinear, &inp).is_err());
        assert!(theory_bounds(BoundKind::Optimization, &BoundInputs::default()).is_err());
    }

    #[test]
    fn uniform_bound_decreases_with_n() {
        let mk = |n| BoundInputs {
            r_x: 1.0,
            big_r_x: 2.0,
            r_z: 1.0,
            r_h: 3.0,
            d_x: 2,
            d_y: 3,
            n,
            delta: 0.05,
            ..BoundInputs::default()
        };
        let a = theory_bounds(BoundKind::UniformNonlinear, &mk(1_000)).unwrap().value;
        let b = theory_bounds(BoundKind::UniformNonlinear, &mk(100_000)).unwrap().value;
        assert!(a.is_finite() && b < a);
    }

    #[test]
    fn optimization_rate() {
        let inp = BoundInputs {
            lambda: Some(0.5),
            iterations: Some(100),
            delta: 0.1,
            ..BoundInputs::default()
        };
        let r = theory_bounds(BoundKind::Optimization, &inp).unwrap();
        let expect = 100f64.ln().powi(3) * 10f64.ln() / 50.0;
        assert!((r.value - expect).abs() < 1e-12);
    }
}
