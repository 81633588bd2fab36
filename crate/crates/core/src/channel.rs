//! Codebooks, noise models, channel transforms and training-set synthesis.
//!
//! Codeword and pair indices are 0-based. Pairs `(p, q)` with `p < q` are
//! numbered in lexicographic order and carry `δ = x_p − x_q`.

use std::io::Write;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid_param, Error, Result};
use crate::linalg::{dot, norm_sq, Matrix, SymMatrix};
use crate::rng::{domain, fill_standard_normal, standard_normal, substream, uniform_symmetric};

/// Fixed transmit alphabet plus its pairwise differences.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    dim: usize,
    codewords: Vec<Vec<f64>>,
    pairs: Vec<(usize, usize)>,
    deltas: Vec<Vec<f64>>,
}

/// Built-in constellations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// 8×8 odd-integer grid at unit average energy.
    Qam64,
    /// 8 points on the unit circle.
    Psk8,
    /// `{(1,1), (−1,−1)}`
    Antipodal,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "qam64" | "64qam" | "qam-64" => Ok(Preset::Qam64),
            "psk8" | "8psk" | "psk-8" => Ok(Preset::Psk8),
            "antipodal" => Ok(Preset::Antipodal),
            other => Err(Error::InvalidCodebook(format!("unknown preset `{other}`"))),
        }
    }
}

impl Codebook {
    pub fn new(codewords: Vec<Vec<f64>>) -> Result<Self> {
        let m = codewords.len();
        if m < 2 {
            return Err(Error::InvalidCodebook(format!(
                "need at least 2 codewords, got {m}"
            )));
        }
        let dim = codewords[0].len();
        if dim == 0 {
            return Err(Error::InvalidCodebook("codewords are empty".into()));
        }
        for (j, x) in codewords.iter().enumerate() {
            if x.len() != dim {
                return Err(Error::InvalidCodebook(format!(
                    "codeword {j} has dimension {}, expected {dim}",
                    x.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidCodebook(format!("codeword {j} is not finite")));
            }
        }
        let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
        let mut deltas = Vec::with_capacity(m * (m - 1) / 2);
        for p in 0..m {
            for q in (p + 1)..m {
                let d: Vec<f64> = codewords[p]
                    .iter()
                    .zip(&codewords[q])
                    .map(|(a, b)| a - b)
                    .collect();
                if norm_sq(&d) == 0.0 {
                    return Err(Error::InvalidCodebook(format!(
                        "codewords {p} and {q} coincide"
                    )));
                }
                pairs.push((p, q));
                deltas.push(d);
            }
        }
        Ok(Codebook {
            dim,
            codewords,
            pairs,
            deltas,
        })
    }

    pub fn preset(preset: Preset) -> Self {
        let points = match preset {
            Preset::Qam64 => {
                let s = 1.0 / 42f64.sqrt();
                let levels: Vec<f64> = (0..8).map(|k| (2 * k - 7) as f64).collect();
                let mut pts = Vec::with_capacity(64);
                for &a in &levels {
                    for &b in &levels {
                        pts.push(vec![a * s, b * s]);
                    }
                }
                pts
            }
            Preset::Psk8 => (0..8)
                .map(|k| {
                    let t = std::f64::consts::TAU * k as f64 / 8.0;
                    vec![t.cos(), t.sin()]
                })
                .collect(),
            Preset::Antipodal => vec![vec![1.0, 1.0], vec![-1.0, -1.0]],
        };
        Codebook::new(points).expect("presets are valid")
    }

    pub fn m(&self) -> usize {
        self.codewords.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codeword(&self, j: usize) -> &[f64] {
        &self.codewords[j]
    }

    pub fn codewords(&self) -> &[Vec<f64>] {
        &self.codewords
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pair(&self, k: usize) -> (usize, usize) {
        self.pairs[k]
    }

    pub fn delta(&self, k: usize) -> &[f64] {
        &self.deltas[k]
    }

    pub fn deltas(&self) -> &[Vec<f64>] {
        &self.deltas
    }

    /// Pair number of `(p, q)`, `p < q`.
    pub fn pair_index(&self, p: usize, q: usize) -> usize {
        debug_assert!(p < q && q < self.m());
        let m = self.m();
        p * (2 * m - p - 1) / 2 + (q - p - 1)
    }

    /// Every codeword multiplied by `gamma`.
    pub fn scaled(&self, gamma: f64) -> Result<Codebook> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(invalid_param("gamma", format!("must be positive, got {gamma}")));
        }
        Codebook::new(
            self.codewords
                .iter()
                .map(|x| x.iter().map(|v| v * gamma).collect())
                .collect(),
        )
    }

    /// `(1/m) Σ ‖x_j‖²`
    pub fn mean_energy(&self) -> f64 {
        self.codewords.iter().map(|x| norm_sq(x)).sum::<f64>() / self.m() as f64
    }

    /// `max_j ‖x_j‖`
    pub fn max_norm(&self) -> f64 {
        self.codewords
            .iter()
            .map(|x| norm_sq(x).sqrt())
            .fold(0.0, f64::max)
    }

    /// `min_{p<q} ‖δ_pq‖²`
    pub fn min_delta_sq(&self) -> f64 {
        self.deltas
            .iter()
            .map(|d| norm_sq(d))
            .fold(f64::INFINITY, f64::min)
    }

    /// One row per codeword, label column last.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_labeled_rows(
            w,
            self.dim,
            self.codewords.iter().enumerate().map(|(j, x)| (x.as_slice(), j)),
        )
    }
}

pub(crate) fn write_labeled_rows<'a, W: Write>(
    w: W,
    dim: usize,
    rows: impl Iterator<Item = (&'a [f64], usize)>,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{}", i + 1)).collect();
    header.push("label".into());
    out.write_record(&header).map_err(io_err)?;
    for (x, label) in rows {
        let mut rec: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
        rec.push(label.to_string());
        out.write_record(&rec).map_err(io_err)?;
    }
    out.flush().map_err(|e| Error::InvalidInput(format!("write failed: {e}")))?;
    Ok(())
}

pub(crate) fn io_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("write failed: {e}"))
}

/// Zero-mean additive noise distributions.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseModel {
    IsotropicGaussian {
        dim: usize,
        sigma: f64,
    },
    CorrelatedGaussian {
        covariance: SymMatrix,
    },
    /// Independent axes: each is either uniform on `[−h, h]` or `N(0, σ²)`.
    UniformPlusGaussian {
        half_width: f64,
        sigma: f64,
        uniform_axes: Vec<bool>,
    },
    GaussianMixture {
        weights: Vec<f64>,
        covariances: Vec<SymMatrix>,
    },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let psd = |c: &SymMatrix, name: &'static str| -> Result<()> {
            if c.lambda_min()? < -1e-10 {
                return Err(invalid_param(name, "covariance is not PSD"));
            }
            Ok(())
        };
        match self {
            NoiseModel::IsotropicGaussian { dim, sigma } => {
                if *dim == 0 {
                    return Err(invalid_param("dim", "must be positive"));
                }
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(invalid_param("sigma", format!("must be ≥ 0, got {sigma}")));
                }
            }
            NoiseModel::CorrelatedGaussian { covariance } => psd(covariance, "covariance")?,
            NoiseModel::UniformPlusGaussian {
                half_width,
                sigma,
                uniform_axes,
            } => {
                if uniform_axes.is_empty() {
                    return Err(invalid_param("uniform_axes", "must not be empty"));
                }
                if !(*half_width >= 0.0 && half_width.is_finite()) {
                    return Err(invalid_param("half_width", "must be ≥ 0"));
                }
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    return Err(invalid_param("sigma", "must be ≥ 0"));
                }
            }
            NoiseModel::GaussianMixture {
                weights,
                covariances,
            } => {
                if weights.is_empty() || weights.len() != covariances.len() {
                    return Err(invalid_param(
                        "weights",
                        "need one positive weight per covariance",
                    ));
                }
                if weights.iter().any(|&w| !(w >= 0.0)) {
                    return Err(invalid_param("weights", "must be nonnegative"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(invalid_param("weights", format!("sum to {total}, not 1")));
                }
                let d = covariances[0].dim();
                for c in covariances {
                    if c.dim() != d {
                        return Err(invalid_param("covariances", "dimensions differ"));
                    }
                    psd(c, "covariances")?;
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseModel::IsotropicGaussian { dim, .. } => *dim,
            NoiseModel::CorrelatedGaussian { covariance } => covariance.dim(),
            NoiseModel::UniformPlusGaussian { uniform_axes, .. } => uniform_axes.len(),
            NoiseModel::GaussianMixture { covariances, .. } => covariances[0].dim(),
        }
    }

    /// Covariance of the noise vector. For a mixture this is `Σ w_i K_i`.
    pub fn covariance(&self) -> SymMatrix {
        match self {
            NoiseModel::IsotropicGaussian { dim, sigma } => SymMatrix::diag(&vec![sigma * sigma; *dim]),
            NoiseModel::CorrelatedGaussian { covariance } => covariance.clone(),
            NoiseModel::UniformPlusGaussian {
                half_width,
                sigma,
                uniform_axes,
            } => {
                let diag: Vec<f64> = uniform_axes
                    .iter()
                    .map(|&u| if u { half_width * half_width / 3.0 } else { sigma * sigma })
                    .collect();
                SymMatrix::diag(&diag)
            }
            NoiseModel::GaussianMixture {
                weights,
                covariances,
            } => {
                let mut acc = SymMatrix::zeros(covariances[0].dim());
                for (w, k) in weights.iter().zip(covariances) {
                    acc = acc.add_scaled(k, *w);
                }
                acc
            }
        }
    }

    /// `E‖Z‖²`
    pub fn second_moment(&self) -> f64 {
        self.covariance().trace()
    }

    /// Precomputes covariance factors for repeated draws.
    pub fn sampler(&self) -> Result<NoiseSampler> {
        self.validate()?;
        let kind = match self {
            NoiseModel::IsotropicGaussian { dim, sigma } => SamplerKind::Isotropic {
                dim: *dim,
                sigma: *sigma,
            },
            NoiseModel::CorrelatedGaussian { covariance } => {
                SamplerKind::Mixture(vec![(1.0, covariance.psd_sqrt_factor()?)])
            }
            NoiseModel::UniformPlusGaussian {
                half_width,
                sigma,
                uniform_axes,
            } => SamplerKind::UniformPlusGaussian {
                half_width: *half_width,
                sigma: *sigma,
                uniform_axes: uniform_axes.clone(),
            },
            NoiseModel::GaussianMixture {
                weights,
                covariances,
            } => SamplerKind::Mixture(
                weights
                    .iter()
                    .zip(covariances)
                    .map(|(&w, k)| Ok((w, k.psd_sqrt_factor()?)))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(NoiseSampler(kind))
    }
}

/// A validated noise model ready to draw from.
#[derive(Clone, Debug)]
pub struct NoiseSampler(SamplerKind);

#[derive(Clone, Debug)]
enum SamplerKind {
    Isotropic {
        dim: usize,
        sigma: f64,
    },
    UniformPlusGaussian {
        half_width: f64,
        sigma: f64,
        uniform_axes: Vec<bool>,
    },
    Mixture(Vec<(f64, Matrix)>),
}

impl NoiseSampler {
    /// Draws sample `index` of the noise stream keyed by `seed`.
    pub fn sample_at(&self, seed: u64, index: u64) -> Vec<f64> {
        let mut rng = substream(seed, domain::NOISE, index);
        self.draw(&mut rng)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.0 {
            SamplerKind::Isotropic { dim, sigma } => {
                let mut v = vec![0.0; *dim];
                fill_standard_normal(rng, &mut v);
                v.iter_mut().for_each(|x| *x *= sigma);
                v
            }
            SamplerKind::UniformPlusGaussian {
                half_width,
                sigma,
                uniform_axes,
            } => uniform_axes
                .iter()
                .map(|&u| {
                    if u {
                        uniform_symmetric(rng, *half_width)
                    } else {
                        sigma * standard_normal(rng)
                    }
                })
                .collect(),
            SamplerKind::Mixture(parts) => {
                let factor = if parts.len() == 1 {
                    &parts[0].1
                } else {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = parts.len() - 1;
                    for (i, (w, _)) in parts.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            pick = i;
                            break;
                        }
                    }
                    &parts[pick].1
                };
                let mut g = vec![0.0; factor.cols()];
                fill_standard_normal(rng, &mut g);
                factor.matvec(&g)
            }
        }
    }
}

/// `n` i.i.d. draws; draw `i` depends only on `(seed, i)`.
pub fn sample_noise(model: &NoiseModel, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sampler = model.sampler()?;
    if n == 0 {
        return Err(invalid_param("n", "must be at least 1"));
    }
    Ok((0..n as u64).map(|i| sampler.sample_at(seed, i)).collect())
}

/// Deterministic map `x ↦ f(x)` of the non-linear channel.
#[derive(Clone, Debug, PartialEq)]
pub enum ChannelTransform {
    Identity,
    Linear(Matrix),
    /// `M · (x₁, x₂, x₁x₂)` for 2-dimensional inputs.
    PolyFeatureLinear(Matrix),
}

impl ChannelTransform {
    /// Output dimension for inputs of dimension `d_x`.
    pub fn output_dim(&self, d_x: usize) -> Result<usize> {
        match self {
            ChannelTransform::Identity => Ok(d_x),
            ChannelTransform::Linear(m) => {
                if m.cols() != d_x {
                    return Err(invalid_param(
                        "transform",
                        format!("matrix has {} columns, inputs have dimension {d_x}", m.cols()),
                    ));
                }
                Ok(m.rows())
            }
            ChannelTransform::PolyFeatureLinear(m) => {
                if d_x != 2 || m.cols() != 3 {
                    return Err(invalid_param(
                        "transform",
                        "polynomial features need 2-dimensional inputs and a 3-column matrix",
                    ));
                }
                Ok(m.rows())
            }
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ChannelTransform::Identity => x.to_vec(),
            ChannelTransform::Linear(m) => m.matvec(x),
            ChannelTransform::PolyFeatureLinear(m) => m.matvec(&[x[0], x[1], x[0] * x[1]]),
        }
    }
}

/// Training set of the additive model: every scaled codeword perturbed by
/// each of the same `n` noise draws.
#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveDataset {
    m: usize,
    gamma: f64,
    noise: Vec<Vec<f64>>,
    samples: Vec<Vec<f64>>,
}

impl AdditiveDataset {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.noise.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn dim(&self) -> usize {
        self.noise[0].len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample `k` is label `k / n` perturbed by noise draw `k % n`.
    pub fn sample(&self, k: usize) -> &[f64] {
        &self.samples[k]
    }

    pub fn label(&self, k: usize) -> usize {
        k / self.n()
    }

    pub fn noise_index(&self, k: usize) -> usize {
        k % self.n()
    }

    /// Index of the sample with `label` and noise draw `i`.
    pub fn index_of(&self, label: usize, i: usize) -> usize {
        label * self.n() + i
    }

    pub fn noise(&self, i: usize) -> &[f64] {
        &self.noise[i]
    }

    pub fn noise_vectors(&self) -> &[Vec<f64>] {
        &self.noise
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.samples
            .iter()
            .enumerate()
            .map(move |(k, y)| (y.as_slice(), self.label(k)))
    }

    /// Dataset built from the subset of noise draws in `keep`.
    pub fn restrict(&self, cb: &Codebook, keep: &[usize]) -> Result<AdditiveDataset> {
        let noise: Vec<Vec<f64>> = keep.iter().map(|&i| self.noise[i].clone()).collect();
        synthesize_additive_dataset(cb, &noise, self.gamma)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_labeled_rows(w, self.dim(), self.iter())
    }
}

/// Builds `{(Γ x_j + z_i, j)}` for every codeword `j` and noise draw `i`.
pub fn synthesize_additive_dataset(
    cb: &Codebook,
    noise: &[Vec<f64>],
    gamma: f64,
) -> Result<AdditiveDataset> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid_param("gamma", format!("must be positive, got {gamma}")));
    }
    if noise.is_empty() {
        return Err(invalid_param("noise", "need at least one noise vector"));
    }
    if let Some(z) = noise.iter().find(|z| z.len() != cb.dim()) {
        return Err(Error::InvalidInput(format!(
            "noise has dimension {}, codebook has {}",
            z.len(),
            cb.dim()
        )));
    }
    let mut samples = Vec::with_capacity(cb.m() * noise.len());
    for x in cb.codewords() {
        for z in noise {
            samples.push(x.iter().zip(z).map(|(a, b)| gamma * a + b).collect());
        }
    }
    Ok(AdditiveDataset {
        m: cb.m(),
        gamma,
        noise: noise.to_vec(),
        samples,
    })
}

/// Input-output samples of the non-linear channel.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearDataset {
    m: usize,
    labels: Vec<usize>,
    outputs: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
}

impl NonlinearDataset {
    /// Assembles a dataset from given labels and outputs; noise is unknown and stored as zero.
    pub fn from_parts(m: usize, labels: Vec<usize>, outputs: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() || labels.len() != outputs.len() {
            return Err(Error::InvalidInput(
                "labels and outputs must be nonempty and equally long".into(),
            ));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= m) {
            return Err(Error::InvalidInput(format!("label {l} out of range for m={m}")));
        }
        let d = outputs[0].len();
        if outputs.iter().any(|y| y.len() != d) {
            return Err(Error::InvalidInput("outputs have mixed dimensions".into()));
        }
        let noise = vec![vec![0.0; d]; labels.len()];
        Ok(NonlinearDataset {
            m,
            labels,
            outputs,
            noise,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.outputs[0].len()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn output(&self, i: usize) -> &[f64] {
        &self.outputs[i]
    }

    /// The noise draw `w_i` that produced sample `i`.
    pub fn noise(&self, i: usize) -> &[f64] {
        &self.noise[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.outputs
            .iter()
            .zip(&self.labels)
            .map(|(y, &l)| (y.as_slice(), l))
    }

    pub fn subset(&self, keep: &[usize]) -> NonlinearDataset {
        NonlinearDataset {
            m: self.m,
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            outputs: keep.iter().map(|&i| self.outputs[i].clone()).collect(),
            noise: keep.iter().map(|&i| self.noise[i].clone()).collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_labeled_rows(w, self.dim(), self.iter())
    }
}

/// `n` samples `(j_i, f(x_{j_i}) + w_i)` with uniform labels and `w_i ~ N(0, σ_w² I)`.
pub fn sample_nonlinear_dataset(
    cb: &Codebook,
    f: &ChannelTransform,
    sigma_w: f64,
    n: usize,
    seed: u64,
) -> Result<NonlinearDataset> {
    if !(sigma_w >= 0.0 && sigma_w.is_finite()) {
        return Err(invalid_param("sigma_w", format!("must be ≥ 0, got {sigma_w}")));
    }
    if n == 0 {
        return Err(invalid_param("n", "must be at least 1"));
    }
    let d_y = f.output_dim(cb.dim())?;
    let images: Vec<Vec<f64>> = cb.codewords().iter().map(|x| f.apply(x)).collect();
    let mut labels = Vec::with_capacity(n);
    let mut outputs = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let (j, y, w) = nonlinear_draw(&images, d_y, sigma_w, seed, domain::NONLINEAR_DATA, i);
        labels.push(j);
        outputs.push(y);
        noise.push(w);
    }
    Ok(NonlinearDataset {
        m: cb.m(),
        labels,
        outputs,
        noise,
    })
}

pub(crate) fn nonlinear_draw(
    images: &[Vec<f64>],
    d_y: usize,
    sigma_w: f64,
    seed: u64,
    dom: u64,
    index: u64,
) -> (usize, Vec<f64>, Vec<f64>) {
    let mut rng = substream(seed, dom, index);
    let j = rng.gen_range(0..images.len());
    let mut w = vec![0.0; d_y];
    fill_standard_normal(&mut rng, &mut w);
    w.iter_mut().for_each(|v| *v *= sigma_w);
    let y = images[j].iter().zip(&w).map(|(a, b)| a + b).collect();
    (j, y, w)
}

/// `10·log10((1/m)Σ‖Γx_j‖² / E‖Z‖²)`
pub fn snr_db(cb: &Codebook, gamma: f64, noise: &NoiseModel) -> Result<f64> {
    let (energy, z) = snr_terms(cb, noise)?;
    Ok(10.0 * (gamma * gamma * energy / z).log10())
}

/// Codebook scale `Γ` achieving `snr` dB against `noise`.
pub fn gamma_for_snr_db(cb: &Codebook, noise: &NoiseModel, snr: f64) -> Result<f64> {
    let (energy, z) = snr_terms(cb, noise)?;
    Ok((10f64.powf(snr / 10.0) * z / energy).sqrt())
}

fn snr_terms(cb: &Codebook, noise: &NoiseModel) -> Result<(f64, f64)> {
    let energy = cb.mean_energy();
    if energy <= 0.0 {
        return Err(invalid_param("codebook", "zero average energy"));
    }
    let z = noise.second_moment();
    if !(z > 0.0 && z.is_finite()) {
        return Err(invalid_param("noise", "needs positive finite second moment"));
    }
    Ok((energy, z))
}

/// SNR of the non-linear channel: `(1/m)Σ‖f(x_j)‖² / (d_y σ_w²)` in dB.
pub fn nonlinear_snr_db(cb: &Codebook, f: &ChannelTransform, sigma_w: f64) -> Result<f64> {
    let (energy, d_y) = transformed_energy(cb, f)?;
    if !(sigma_w > 0.0) {
        return Err(invalid_param("sigma_w", "must be positive"));
    }
    Ok(10.0 * (energy / (d_y as f64 * sigma_w * sigma_w)).log10())
}

/// Noise level `σ_w` giving `snr` dB on the non-linear channel.
pub fn sigma_w_for_snr_db(cb: &Codebook, f: &ChannelTransform, snr: f64) -> Result<f64> {
    let (energy, d_y) = transformed_energy(cb, f)?;
    Ok((energy / (d_y as f64 * 10f64.powf(snr / 10.0))).sqrt())
}

fn transformed_energy(cb: &Codebook, f: &ChannelTransform) -> Result<(f64, usize)> {
    let d_y = f.output_dim(cb.dim())?;
    let energy = cb
        .codewords()
        .iter()
        .map(|x| {
            let y = f.apply(x);
            dot(&y, &y)
        })
        .sum::<f64>()
        / cb.m() as f64;
    if energy <= 0.0 {
        return Err(invalid_param("codebook", "zero average energy after the transform"));
    }
    Ok((energy, d_y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn antipodal() -> Codebook {
        Codebook::preset(Preset::Antipodal)
    }

    #[test]
    fn explicit_codebook_pairs() {
        let cb = Codebook::new(vec![vec![1.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        assert_eq!(cb.m(), 2);
        assert_eq!(cb.delta(0), &[2.0, 2.0]);
        assert!(matches!(
            Codebook::new(vec![vec![1.0, 1.0]]),
            Err(Error::InvalidCodebook(_))
        ));
        assert!(Codebook::new(vec![vec![1.0], vec![1.0]]).is_err());
    }

    #[test]
    fn pair_index_matches_enumeration() {
        let cb = Codebook::preset(Preset::Psk8);
        assert_eq!(cb.num_pairs(), 28);
        for k in 0..cb.num_pairs() {
            let (p, q) = cb.pair(k);
            assert_eq!(cb.pair_index(p, q), k);
        }
    }

    #[test]
    fn qam64_grid() {
        let cb = Codebook::preset(Preset::Qam64);
        assert_eq!(cb.m(), 64);
        assert!((cb.mean_energy() - 1.0).abs() < 1e-12);
        let s = 42f64.sqrt();
        let mut seen = std::collections::BTreeSet::new();
        for x in cb.codewords() {
            for v in x {
                let k = (v * s).round();
                assert!((v * s - k).abs() < 1e-12);
                assert!(k.abs() <= 7.0 && (k as i64).rem_euclid(2) == 1);
            }
            seen.insert(((x[0] * s).round() as i64, (x[1] * s).round() as i64));
        }
        assert_eq!(seen.len(), 64);
        let sum: Vec<f64> = (0..2).map(|i| cb.codewords().iter().map(|x| x[i]).sum()).collect();
        assert!(sum.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn isotropic_noise_variance() {
        let model = NoiseModel::IsotropicGaussian { dim: 2, sigma: 1.0 };
        let z = sample_noise(&model, 100_000, 9).unwrap();
        for axis in 0..2 {
            let var = z.iter().map(|v| v[axis] * v[axis]).sum::<f64>() / z.len() as f64;
            assert!((0.98..=1.02).contains(&var), "var {var}");
        }
        assert_eq!(z, sample_noise(&model, 100_000, 9).unwrap());
    }

    #[test]
    fn uniform_axis_is_bounded() {
        let h = 3f64.sqrt();
        let model = NoiseModel::UniformPlusGaussian {
            half_width: h,
            sigma: 1.0,
            uniform_axes: vec![true, false],
        };
        let z = sample_noise(&model, 20_000, 1).unwrap();
        assert!(z.iter().all(|v| v[0].abs() <= h));
        assert!(z.iter().any(|v| v[1].abs() > h));
        let cov = model.covariance();
        assert!((cov.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((cov.get(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_covariance_converges() {
        let k1 = SymMatrix::from_rows(&[vec![1.0, 0.3], vec![0.3, 0.5]]).unwrap();
        let k2 = k1.scale(4.0);
        let model = NoiseModel::GaussianMixture {
            weights: vec![0.7, 0.3],
            covariances: vec![k1, k2],
        };
        let n = 100_000;
        let z = sample_noise(&model, n, 5).unwrap();
        let want = model.covariance();
        for i in 0..2 {
            for j in 0..2 {
                let prods: Vec<f64> = z.iter().map(|v| v[i] * v[j]).collect();
                let mean = prods.iter().sum::<f64>() / n as f64;
                let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n as f64;
                let se = (var / n as f64).sqrt();
                assert!((mean - want.get(i, j)).abs() <= 3.0 * se, "({i},{j}) {mean}");
            }
        }
        let bad = NoiseModel::GaussianMixture {
            weights: vec![0.5, 0.4],
            covariances: vec![SymMatrix::identity(2), SymMatrix::identity(2)],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn additive_synthesis() {
        let cb = antipodal();
        let ds = synthesize_additive_dataset(&cb, &[vec![0.0, 0.0]], 1.0).unwrap();
        assert_eq!(ds.iter().collect::<Vec<_>>(), vec![
            (&[1.0, 1.0][..], 0),
            (&[-1.0, -1.0][..], 1)
        ]);

        let noise = vec![vec![0.1, 0.2], vec![-0.3, 0.0], vec![0.5, 0.5]];
        let ds = synthesize_additive_dataset(&cb, &noise, 1.0).unwrap();
        assert_eq!(ds.len(), 6);
        for label in 0..2 {
            assert_eq!((0..6).filter(|&k| ds.label(k) == label).count(), 3);
            for i in 0..3 {
                let k = ds.index_of(label, i);
                let y = ds.sample(k);
                let z = ds.noise(ds.noise_index(k));
                assert_eq!(z, &noise[i][..]);
                for a in 0..2 {
                    assert_eq!(y[a], cb.codeword(label)[a] + z[a]);
                }
            }
        }

        let ds2 = synthesize_additive_dataset(&cb, &noise, 2.0).unwrap();
        for k in 0..6 {
            let x = cb.codeword(ds.label(k));
            for a in 0..2 {
                let lhs = ds2.sample(k)[a] - ds.sample(k)[a];
                assert!((lhs - x[a]).abs() < 1e-15);
            }
        }
        assert!(synthesize_additive_dataset(&cb, &noise, 0.0).is_err());
    }

    #[test]
    fn nonlinear_samples() {
        let cb = Codebook::preset(Preset::Psk8);
        let ds = sample_nonlinear_dataset(&cb, &ChannelTransform::Identity, 0.0, 50, 3).unwrap();
        for (y, j) in ds.iter() {
            assert_eq!(y, cb.codeword(j));
        }

        let f = ChannelTransform::Linear(
            Matrix::from_rows(&[vec![1.04, 0.19], vec![0.19, 1.96]]).unwrap(),
        );
        assert_eq!(f.apply(&[1.0, 0.0]), vec![1.04, 0.19]);

        let m = Matrix::from_rows(&[vec![0.94, 0.07, 0.15], vec![0.46, 0.72, 0.4]]).unwrap();
        let g = ChannelTransform::PolyFeatureLinear(m.clone());
        assert_eq!(g.apply(&[1.0, 1.0]), m.matvec(&[1.0, 1.0, 1.0]));
        assert!(g.output_dim(3).is_err());
    }

    #[test]
    fn nonlinear_labels_are_uniform() {
        let cb = Codebook::preset(Preset::Psk8);
        let n = 40_000;
        let ds = sample_nonlinear_dataset(&cb, &ChannelTransform::Identity, 0.1, n, 8).unwrap();
        let mut counts = [0usize; 8];
        for i in 0..n {
            counts[ds.label(i)] += 1;
        }
        let expect = n as f64 / 8.0;
        let se = (n as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - expect).abs() < 4.0 * se));
    }

    #[test]
    fn snr_accounting() {
        let cb = antipodal();
        let noise = NoiseModel::IsotropicGaussian { dim: 2, sigma: 1.0 };
        assert!(snr_db(&cb, 1.0, &noise).unwrap().abs() < 1e-12);
        let gain = snr_db(&cb, 2.0, &noise).unwrap() - snr_db(&cb, 1.0, &noise).unwrap();
        assert!((gain - 6.020599913279624).abs() < 1e-9);
        for g in [0.1, 0.7, 3.3] {
            let s = snr_db(&cb, g, &noise).unwrap();
            assert!((gamma_for_snr_db(&cb, &noise, s).unwrap() - g).abs() < 1e-10);
        }
        let f = ChannelTransform::Identity;
        let s = nonlinear_snr_db(&cb, &f, 0.3).unwrap();
        assert!((sigma_w_for_snr_db(&cb, &f, s).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn csv_has_label_last() {
        let mut buf = Vec::new();
        antipodal().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x1,x2,label");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].ends_with(",1"));
    }
}
