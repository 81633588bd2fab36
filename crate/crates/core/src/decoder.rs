//! Nearest-neighbor decoding rules, baselines and error-rate estimation.

use std::io::Write;

use rayon::prelude::*;

use crate::channel::{io_err, ChannelTransform, Codebook, NoiseModel, NoiseSampler, NonlinearDataset};
use crate::error::{invalid_param, Error, Result};
use crate::linalg::{dot, sub_vec, Matrix, SymMatrix};
use crate::rng::{domain, substream};

/// Anything that maps a channel output to a codeword index.
pub trait Decoder: Sync {
    fn decode(&self, y: &[f64]) -> usize;
}

/// Nearest point under `‖y − c‖_S²` (Euclidean when no metric is set).
/// Ties go to the smallest index.
#[derive(Clone, Debug, PartialEq)]
pub struct NearestNeighbor {
    points: Vec<Vec<f64>>,
    metric: Option<SymMatrix>,
}

impl NearestNeighbor {
    pub fn euclidean(points: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(points, None)
    }

    pub fn with_metric(points: Vec<Vec<f64>>, metric: SymMatrix) -> Result<Self> {
        Self::build(points, Some(metric))
    }

    fn build(points: Vec<Vec<f64>>, metric: Option<SymMatrix>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("decoder needs at least one point".into()));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::InvalidInput("decoder points have mixed dimensions".into()));
        }
        if let Some(s) = &metric {
            if s.dim() != d {
                return Err(Error::InvalidInput(format!(
                    "metric is {}x{0}, points have dimension {d}",
                    s.dim()
                )));
            }
        }
        Ok(NearestNeighbor { points, metric })
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// Checked decode.
    pub fn try_decode(&self, y: &[f64]) -> Result<usize> {
        if y.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "output has dimension {}, decoder expects {}",
                y.len(),
                self.dim()
            )));
        }
        Ok(self.decode(y))
    }

    fn distance(&self, y: &[f64], c: &[f64]) -> f64 {
        let e = sub_vec(c, y);
        match &self.metric {
            Some(s) => s.quad_form(&e),
            None => dot(&e, &e),
        }
    }
}

impl Decoder for NearestNeighbor {
    fn decode(&self, y: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = self.distance(y, &self.points[0]);
        for (j, c) in self.points.iter().enumerate().skip(1) {
            let d = self.distance(y, c);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        best
    }
}

/// Mahalanobis rule parameterized by a PSD precision matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionDecoder {
    s: SymMatrix,
}

impl PrecisionDecoder {
    /// Accepts `λ_min(s) ≥ −1e-10·max(1, ‖s‖_F)`; the relative slack covers
    /// roundoff in large iterates.
    pub fn new(s: SymMatrix) -> Result<Self> {
        if s.lambda_min()? < -1e-10 * s.frobenius_norm().max(1.0) {
            return Err(invalid_param("s", "precision matrix is not PSD"));
        }
        Ok(PrecisionDecoder { s })
    }

    pub fn identity(dim: usize) -> Self {
        PrecisionDecoder {
            s: SymMatrix::identity(dim),
        }
    }

    pub fn matrix(&self) -> &SymMatrix {
        &self.s
    }

    pub fn dim(&self) -> usize {
        self.s.dim()
    }

    /// The rule against the codebook scaled by `gamma`.
    pub fn nearest_neighbor(&self, cb: &Codebook, gamma: f64) -> Result<NearestNeighbor> {
        if cb.dim() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "codebook dimension {} does not match precision matrix {}",
                cb.dim(),
                self.dim()
            )));
        }
        NearestNeighbor::with_metric(cb.scaled(gamma)?.codewords().to_vec(), self.s.clone())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_csv(w, "precision", self.s.as_matrix())
    }
}

/// `argmin_j (Γx_j − y)ᵀ S (Γx_j − y)`, smallest index on ties.
pub fn decode_mahalanobis(
    dec: &PrecisionDecoder,
    cb: &Codebook,
    gamma: f64,
    y: &[f64],
) -> Result<usize> {
    dec.nearest_neighbor(cb, gamma)?.try_decode(y)
}

/// Linear-kernel rule `argmin_j ‖y − H x_j‖`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDecoder {
    h: Matrix,
}

impl KernelDecoder {
    pub fn new(h: Matrix) -> Result<Self> {
        if !h.is_finite() {
            return Err(Error::InvalidInput("kernel matrix has non-finite entries".into()));
        }
        Ok(KernelDecoder { h })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.h
    }

    pub fn nearest_neighbor(&self, cb: &Codebook) -> Result<NearestNeighbor> {
        if cb.dim() != self.h.cols() {
            return Err(Error::InvalidInput(format!(
                "codebook dimension {} does not match kernel with {} columns",
                cb.dim(),
                self.h.cols()
            )));
        }
        NearestNeighbor::euclidean(cb.codewords().iter().map(|x| self.h.matvec(x)).collect())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_matrix_csv(w, "kernel", &self.h)
    }
}

pub fn decode_linear_kernel(dec: &KernelDecoder, cb: &Codebook, y: &[f64]) -> Result<usize> {
    dec.nearest_neighbor(cb)?.try_decode(y)
}

/// Header `kind,rows,cols` followed by one CSV row per matrix row.
pub fn write_matrix_csv<W: Write>(w: W, kind: &str, m: &Matrix) -> Result<()> {
    let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
    out.write_record([kind.to_string(), m.rows().to_string(), m.cols().to_string()])
        .map_err(io_err)?;
    for i in 0..m.rows() {
        out.write_record(m.row(i).iter().map(|v| format!("{v:e}")))
            .map_err(io_err)?;
    }
    out.flush()
        .map_err(|e| Error::InvalidInput(format!("write failed: {e}")))?;
    Ok(())
}

/// How the mixture covariance is normalized before inversion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum MixtureScaling {
    /// `Σ = Σ w_i K_i`
    #[default]
    Weighted,
    /// `Σ = (1/l) Σ w_i K_i`, with `l` the number of components.
    PerComponent,
}

/// Baseline `Σ⁻¹` from the true noise covariance.
pub fn true_precision(noise: &NoiseModel, scaling: MixtureScaling) -> Result<PrecisionDecoder> {
    noise.validate()?;
    let mut cov = noise.covariance();
    if let (MixtureScaling::PerComponent, NoiseModel::GaussianMixture { weights, .. }) =
        (scaling, noise)
    {
        cov = cov.scale(1.0 / weights.len() as f64);
    }
    PrecisionDecoder::new(cov.inverse_pd()?)
}

/// Baseline `Σ̂⁻¹` from noise samples, ridge `1e-9·tr(Σ̂)/d` added before inversion.
pub fn estimated_precision(noise: &[Vec<f64>]) -> Result<PrecisionDecoder> {
    let cov = sample_covariance(noise)?;
    let d = cov.dim();
    let ridge = (1e-9 * cov.trace() / d as f64).max(f64::MIN_POSITIVE);
    let reg = cov.add_scaled(&SymMatrix::identity(d), ridge);
    PrecisionDecoder::new(reg.inverse_pd()?)
}

/// Unbiased sample covariance (divides by `n − 1`, or `n` when `n = 1`).
pub fn sample_covariance(samples: &[Vec<f64>]) -> Result<SymMatrix> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::InvalidInput("no samples".into()));
    }
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    for z in samples {
        if z.len() != d {
            return Err(Error::InvalidInput("samples have mixed dimensions".into()));
        }
        for (m, v) in mean.iter_mut().zip(z) {
            *m += v / n as f64;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for z in samples {
        let c = sub_vec(z, &mean);
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    SymMatrix::from_matrix(&cov.scale(1.0 / denom))
}

/// Maximum-likelihood rule for white Gaussian noise: nearest `f(x_j)`.
pub fn true_transform_decoder(cb: &Codebook, f: &ChannelTransform) -> Result<NearestNeighbor> {
    f.output_dim(cb.dim())?;
    NearestNeighbor::euclidean(cb.codewords().iter().map(|x| f.apply(x)).collect())
}

/// Nearest per-codeword mean of the observed outputs.
pub fn class_mean_decoder(ds: &NonlinearDataset) -> Result<NearestNeighbor> {
    let d = ds.dim();
    let mut sums = vec![vec![0.0; d]; ds.m()];
    let mut counts = vec![0usize; ds.m()];
    for (y, j) in ds.iter() {
        counts[j] += 1;
        for (s, v) in sums[j].iter_mut().zip(y) {
            *s += v;
        }
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(j));
    }
    let means = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    NearestNeighbor::euclidean(means)
}

/// Monte-Carlo estimate of the average error probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorEstimate {
    pub p_hat: f64,
    pub n_trials: usize,
    pub std_err: f64,
}

impl ErrorEstimate {
    pub fn from_counts(errors: usize, n_trials: usize) -> Self {
        let p = errors as f64 / n_trials as f64;
        ErrorEstimate {
            p_hat: p,
            n_trials,
            std_err: (p * (1.0 - p) / n_trials as f64).sqrt(),
        }
    }

    /// `√(se₁² + se₂²)`
    pub fn joint_std_err(&self, other: &ErrorEstimate) -> f64 {
        self.std_err.hypot(other.std_err)
    }
}

/// A channel to simulate at test time.
#[derive(Clone, Debug)]
pub enum TestChannel {
    /// `y = Γ x_j + z`
    Additive {
        codebook: Codebook,
        gamma: f64,
        noise: NoiseModel,
    },
    /// `y = f(x_j) + w`, `w ~ N(0, σ_w² I)`
    Nonlinear {
        codebook: Codebook,
        transform: ChannelTransform,
        sigma_w: f64,
    },
}

enum Prepared {
    Additive {
        points: Vec<Vec<f64>>,
        noise: NoiseSampler,
    },
    Nonlinear {
        images: Vec<Vec<f64>>,
        d_y: usize,
        sigma_w: f64,
    },
}

impl TestChannel {
    fn prepare(&self) -> Result<Prepared> {
        match self {
            TestChannel::Additive {
                codebook,
                gamma,
                noise,
            } => {
                if noise.dim() != codebook.dim() {
                    return Err(Error::InvalidInput(
                        "noise and codebook dimensions differ".into(),
                    ));
                }
                Ok(Prepared::Additive {
                    points: codebook.scaled(*gamma)?.codewords().to_vec(),
                    noise: noise.sampler()?,
                })
            }
            TestChannel::Nonlinear {
                codebook,
                transform,
                sigma_w,
            } => {
                if !(*sigma_w >= 0.0) {
                    return Err(invalid_param("sigma_w", "must be ≥ 0"));
                }
                Ok(Prepared::Nonlinear {
                    images: codebook.codewords().iter().map(|x| transform.apply(x)).collect(),
                    d_y: transform.output_dim(codebook.dim())?,
                    sigma_w: *sigma_w,
                })
            }
        }
    }
}

/// Runs `n_test` independent trials, each with a uniformly drawn codeword.
///
/// Trial `k` uses its own sub-stream, so the estimate does not depend on
/// how the trials are scheduled across threads.
pub fn error_probability_mc(
    decoder: &dyn Decoder,
    channel: &TestChannel,
    n_test: usize,
    seed: u64,
) -> Result<ErrorEstimate> {
    if n_test == 0 {
        return Err(invalid_param("n_test", "must be at least 1"));
    }
    let prepared = channel.prepare()?;
    let errors: usize = (0..n_test as u64)
        .into_par_iter()
        .map(|k| {
            let (label, y) = match &prepared {
                Prepared::Additive { points, noise } => {
                    let mut rng = substream(seed, domain::MONTE_CARLO, k);
                    let j = rand::Rng::gen_range(&mut rng, 0..points.len());
                    let z = noise.draw(&mut rng);
                    (j, points[j].iter().zip(&z).map(|(a, b)| a + b).collect::<Vec<_>>())
                }
                Prepared::Nonlinear {
                    images,
                    d_y,
                    sigma_w,
                } => {
                    let (j, y, _) = crate::channel::nonlinear_draw(
                        images,
                        *d_y,
                        *sigma_w,
                        seed,
                        domain::MONTE_CARLO,
                        k,
                    );
                    (j, y)
                }
            };
            usize::from(decoder.decode(&y) != label)
        })
        .sum();
    Ok(ErrorEstimate::from_counts(errors, n_test))
}

/// Fraction of labeled samples decoded to the wrong codeword.
pub fn empirical_error_rate<'a>(
    decoder: &dyn Decoder,
    samples: impl IntoIterator<Item = (&'a [f64], usize)>,
) -> Result<f64> {
    let mut total = 0usize;
    let mut wrong = 0usize;
    for (y, label) in samples {
        total += 1;
        wrong += usize::from(decoder.decode(y) != label);
    }
    if total == 0 {
        return Err(Error::InvalidInput("empty dataset".into()));
    }
    Ok(wrong as f64 / total as f64)
}
