//! Max-margin objective for the additive-noise channel.
//!
//! Everything here works with the codebook scaled by the training factor
//! `Γ`, so a stored difference is `Γ(x_p − x_q)` and a transformed sample is
//! `a = ±(y − Γ(x_p + x_q)/2)`, positive for samples labeled `p`.

use crate::channel::{AdditiveDataset, Codebook};
use crate::error::{invalid_param, Error, Result};
use crate::linalg::{dot, dsym, norm, norm_sq, Matrix, SymMatrix};

pub use crate::partition::{strong_convexity_gamma, ProperPartition, StrongConvexity};

/// Proper partition of the pairs of `cb`. Scaling by `gamma` does not change it.
pub fn build_proper_partition(cb: &Codebook, gamma: f64) -> Result<ProperPartition> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid_param("gamma", format!("must be positive, got {gamma}")));
    }
    ProperPartition::build(cb)
}

/// All `2n` transformed samples of every codeword pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedSamples {
    dim: usize,
    n: usize,
    gamma: f64,
    pairs: Vec<(usize, usize)>,
    deltas: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
    // row-major: sample `s` of pair `k` lives at (k·2n + s)·dim
    a: Vec<f64>,
}

/// Borrowed view of one transformed sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformedSample<'a> {
    pub pair: usize,
    pub p: usize,
    pub q: usize,
    /// Index of the originating sample in the dataset.
    pub sample: usize,
    pub a: &'a [f64],
    pub delta: &'a [f64],
    /// The noise draw inside `y`, and the sign it enters `a` with.
    pub noise: &'a [f64],
    pub noise_sign: f64,
}

impl TransformedSamples {
    pub fn len(&self) -> usize {
        self.a.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn per_pair(&self) -> usize {
        2 * self.n
    }

    /// Scaled difference `Γ δ_k`.
    pub fn delta(&self, pair: usize) -> &[f64] {
        &self.deltas[pair]
    }

    pub fn get(&self, idx: usize) -> TransformedSample<'_> {
        let per = self.per_pair();
        let pair = idx / per;
        let s = idx % per;
        let (p, q) = self.pairs[pair];
        let (label, i, sign) = if s < self.n { (p, s, 1.0) } else { (q, s - self.n, -1.0) };
        TransformedSample {
            pair,
            p,
            q,
            sample: label * self.n + i,
            a: &self.a[idx * self.dim..(idx + 1) * self.dim],
            delta: &self.deltas[pair],
            noise: &self.noise[i],
            noise_sign: sign,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = TransformedSample<'_>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Samples of one pair, `p`-labeled first.
    pub fn pair_samples(&self, pair: usize) -> impl Iterator<Item = TransformedSample<'_>> + '_ {
        let per = self.per_pair();
        (pair * per..(pair + 1) * per).map(move |i| self.get(i))
    }

    /// `S Γδ_k` for every pair.
    fn pair_images(&self, s: &SymMatrix) -> Vec<Vec<f64>> {
        self.deltas.iter().map(|d| s.matvec(d)).collect()
    }
}

/// Builds the transformed samples of `ds`, which must come from `cb` scaled by `gamma`.
pub fn transform_samples(
    ds: &AdditiveDataset,
    cb: &Codebook,
    gamma: f64,
) -> Result<TransformedSamples> {
    if (ds.gamma() - gamma).abs() > 1e-12 * gamma.abs().max(1.0) {
        return Err(Error::InvalidInput(format!(
            "dataset was built with gamma {}, not {gamma}",
            ds.gamma()
        )));
    }
    if ds.m() != cb.m() || ds.dim() != cb.dim() {
        return Err(Error::InvalidInput("dataset does not match the codebook".into()));
    }
    let dim = cb.dim();
    let n = ds.n();
    let mut a = Vec::with_capacity(cb.num_pairs() * 2 * n * dim);
    let mut deltas = Vec::with_capacity(cb.num_pairs());
    for k in 0..cb.num_pairs() {
        let (p, q) = cb.pair(k);
        let mid: Vec<f64> = (0..dim)
            .map(|i| 0.5 * gamma * (cb.codeword(p)[i] + cb.codeword(q)[i]))
            .collect();
        for i in 0..n {
            let y = ds.sample(ds.index_of(p, i));
            a.extend(y.iter().zip(&mid).map(|(v, c)| v - c));
        }
        for i in 0..n {
            let y = ds.sample(ds.index_of(q, i));
            a.extend(y.iter().zip(&mid).map(|(v, c)| c - v));
        }
        deltas.push(cb.delta(k).iter().map(|v| gamma * v).collect());
    }
    Ok(TransformedSamples {
        dim,
        n,
        gamma,
        pairs: (0..cb.num_pairs()).map(|k| cb.pair(k)).collect(),
        deltas,
        noise: ds.noise_vectors().to_vec(),
        a,
    })
}

/// Weight `λ` and the partition of the regularizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveObjectiveParams {
    pub lambda: f64,
    pub partition: ProperPartition,
}

impl AdditiveObjectiveParams {
    pub fn new(lambda: f64, partition: ProperPartition) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(invalid_param("lambda", format!("must be ≥ 0, got {lambda}")));
        }
        Ok(AdditiveObjectiveParams { lambda, partition })
    }
}

/// Average of `max{0, 1 − aᵀSδ}` over all transformed samples. Every pair has
/// the same `2n` samples, so this equals the per-pair double average.
pub fn hinge_loss_additive(s: &SymMatrix, ts: &TransformedSamples) -> f64 {
    let images = ts.pair_images(s);
    let per = ts.per_pair();
    let mut total = 0.0;
    for (k, sd) in images.iter().enumerate() {
        let mut pair_sum = 0.0;
        for idx in k * per..(k + 1) * per {
            let a = &ts.a[idx * ts.dim..(idx + 1) * ts.dim];
            pair_sum += (1.0 - dot(a, sd)).max(0.0);
        }
        total += pair_sum / per as f64;
    }
    total / images.len() as f64
}

/// `Σ_i η_i max_{j∈P_i} ‖S Γδ_j‖²`
pub fn regularizer_additive(s: &SymMatrix, ts: &TransformedSamples, partition: &ProperPartition) -> f64 {
    partition.weighted_max(&ts.deltas, ts.gamma, |d| norm_sq(&s.matvec(d)))
}

pub fn objective_additive(
    s: &SymMatrix,
    ts: &TransformedSamples,
    params: &AdditiveObjectiveParams,
) -> f64 {
    hinge_loss_additive(s, ts) + params.lambda * regularizer_additive(s, ts, &params.partition)
}

/// Sub-gradient of the objective restricted to the samples in `batch`:
///
/// `λ Σ_k η_k dsym(2 S δ_k δ_kᵀ) − (1/|A|) Σ_{aᵀSδ<1} dsym(a δᵀ)`
///
/// where `δ_k` maximizes `‖Sδ‖²` within group `k`.
pub fn subgradient_additive(
    s: &SymMatrix,
    ts: &TransformedSamples,
    batch: &[usize],
    params: &AdditiveObjectiveParams,
) -> Result<SymMatrix> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let d = ts.dim;
    let mut g = Matrix::zeros(d, d);
    if params.lambda != 0.0 {
        let picks = params
            .partition
            .maximizers(&ts.deltas, ts.gamma, |d| norm_sq(&s.matvec(d)));
        for (eta, delta) in picks {
            let sd = s.matvec(&delta);
            let c = 2.0 * params.lambda * eta;
            for i in 0..d {
                for j in 0..d {
                    g[(i, j)] += c * sd[i] * delta[j];
                }
            }
        }
    }
    let w = 1.0 / batch.len() as f64;
    for &idx in batch {
        let t = ts.get(idx);
        let sd = s.matvec(t.delta);
        if dot(t.a, &sd) < 1.0 {
            for i in 0..d {
                for j in 0..d {
                    g[(i, j)] -= w * t.a[i] * t.delta[j];
                }
            }
        }
    }
    dsym(&g)
}

/// `min aᵀSδ / ‖Sδ‖` over all transformed samples.
pub fn empirical_margin(s: &SymMatrix, ts: &TransformedSamples) -> Result<f64> {
    let images = ts.pair_images(s);
    let scale = s.frobenius_norm();
    let mut margin = f64::INFINITY;
    for (k, sd) in images.iter().enumerate() {
        let len = norm(sd);
        if len == 0.0 || len <= 1e-14 * scale * norm(ts.delta(k)) {
            return Err(Error::DegenerateDecoder { pair: k });
        }
        for t in ts.pair_samples(k) {
            margin = margin.min(dot(t.a, sd) / len);
        }
    }
    Ok(margin)
}

/// Largest per-sample Lipschitz constant of the hinge term in `S`:
/// `max √(‖δ‖⁴ + 4|⟨z,δ⟩|‖δ‖² + 2⟨z,δ⟩² + 2‖z‖²‖δ‖²)`.
pub fn lipschitz_bound(ts: &TransformedSamples) -> f64 {
    let mut best: f64 = 0.0;
    for delta in &ts.deltas {
        let dd = norm_sq(delta);
        for z in &ts.noise {
            let zd = dot(z, delta).abs();
            let v = dd * dd + 4.0 * zd * dd + 2.0 * zd * zd + 2.0 * norm_sq(z) * dd;
            best = best.max(v);
        }
    }
    best.sqrt()
}
