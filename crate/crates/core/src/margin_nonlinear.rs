//! Max-margin objective for the non-linear channel, learned through a
//! linear kernel `H` and an auxiliary PSD matrix `K` with `HᵀH ⪯ K`.

use crate::channel::{Codebook, NonlinearDataset};
use crate::error::{invalid_param, Error, Result};
use crate::linalg::{dot, dsym, norm, norm_sq, project_psd, sym_eig, EigenDecomposition, Matrix, SymMatrix};
use crate::partition::ProperPartition;

const DYKSTRA_TOL: f64 = 1e-10;
const DYKSTRA_MAX_ITER: usize = 10_000;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 200;

/// Kernel `H` (`d_y × d_x`) together with its auxiliary `K` (`d_x × d_x`).
#[derive(Clone, Debug, PartialEq)]
pub struct KernelPair {
    pub h: Matrix,
    pub k: SymMatrix,
}

impl KernelPair {
    pub fn new(h: Matrix, k: SymMatrix) -> Result<Self> {
        if h.cols() != k.dim() {
            return Err(Error::InvalidInput(format!(
                "H has {} columns but K is {}x{1}",
                h.cols(),
                k.dim()
            )));
        }
        Ok(KernelPair { h, k })
    }

    pub fn zeros(d_y: usize, d_x: usize) -> Self {
        KernelPair {
            h: Matrix::zeros(d_y, d_x),
            k: SymMatrix::zeros(d_x),
        }
    }

    pub fn d_y(&self) -> usize {
        self.h.rows()
    }

    pub fn d_x(&self) -> usize {
        self.h.cols()
    }

    /// `[[I, H], [Hᵀ, K]]`
    pub fn lift(&self) -> SymMatrix {
        let (dy, dx) = (self.d_y(), self.d_x());
        let m = Matrix::from_fn(dy + dx, dy + dx, |i, j| match (i < dy, j < dy) {
            (true, true) => f64::from(u8::from(i == j)),
            (true, false) => self.h[(i, j - dy)],
            (false, true) => self.h[(j, i - dy)],
            (false, false) => self.k.get(i - dy, j - dy),
        });
        SymMatrix::from_matrix(&m).expect("square by construction")
    }

    /// `√(‖H‖_F² + ‖K‖_F²)`
    pub fn norm(&self) -> f64 {
        (self.h.frobenius_norm().powi(2) + self.k.frobenius_norm().powi(2)).sqrt()
    }

    /// `√(‖H₁−H₂‖_F² + ‖K₁−K₂‖_F²)`
    pub fn distance(&self, other: &KernelPair) -> f64 {
        (self.h.sub(&other.h).frobenius_norm().powi(2)
            + self.k.sub(&other.k).frobenius_norm().powi(2))
        .sqrt()
    }
}

/// Regularization weights for the `H` and `K` terms, and the partition.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearObjectiveParams {
    pub lambda_h: f64,
    pub lambda_k: f64,
    pub partition: ProperPartition,
}

impl NonlinearObjectiveParams {
    pub fn new(lambda_h: f64, lambda_k: f64, partition: ProperPartition) -> Result<Self> {
        for (name, v) in [("lambda_h", lambda_h), ("lambda_k", lambda_k)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid_param(name, format!("must be ≥ 0, got {v}")));
            }
        }
        Ok(NonlinearObjectiveParams {
            lambda_h,
            lambda_k,
            partition,
        })
    }

    /// Same weight on both terms.
    pub fn uniform(lambda: f64, partition: ProperPartition) -> Result<Self> {
        Self::new(lambda, lambda, partition)
    }
}

/// Per ordered pair `(j, j')`: `H δ_{jj'}` and the offset `½(x_j+x_j')ᵀ K δ_{jj'}`.
struct PairTerms {
    m: usize,
    h_delta: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl PairTerms {
    fn new(pair: &KernelPair, cb: &Codebook) -> Self {
        let m = cb.m();
        let quad: Vec<f64> = cb.codewords().iter().map(|x| pair.k.quad_form(x)).collect();
        let hx: Vec<Vec<f64>> = cb.codewords().iter().map(|x| pair.h.matvec(x)).collect();
        let mut h_delta = Vec::with_capacity(m * m);
        let mut offset = Vec::with_capacity(m * m);
        for j in 0..m {
            for jp in 0..m {
                h_delta.push(hx[j].iter().zip(&hx[jp]).map(|(a, b)| a - b).collect());
                // K symmetric: ½(x+x')ᵀK(x−x') = ½(xᵀKx − x'ᵀKx')
                offset.push(0.5 * (quad[j] - quad[jp]));
            }
        }
        PairTerms {
            m,
            h_delta,
            offset,
        }
    }

    fn score(&self, y: &[f64], j: usize, jp: usize) -> f64 {
        let idx = j * self.m + jp;
        dot(y, &self.h_delta[idx]) - self.offset[idx]
    }
}

fn check_dims(pair: &KernelPair, ds: &NonlinearDataset, cb: &Codebook) -> Result<()> {
    if pair.d_x() != cb.dim() || pair.d_y() != ds.dim() || ds.m() != cb.m() {
        return Err(Error::InvalidInput(format!(
            "kernel is {}x{}, codebook has dimension {} and outputs {}",
            pair.d_y(),
            pair.d_x(),
            cb.dim(),
            ds.dim()
        )));
    }
    Ok(())
}

fn sample_loss(terms: &PairTerms, y: &[f64], j: usize) -> f64 {
    let m = terms.m;
    let mut acc = 0.0;
    for jp in (0..m).filter(|&jp| jp != j) {
        acc += (1.0 - terms.score(y, j, jp)).max(0.0);
    }
    acc / (m - 1) as f64
}

/// `(1/n) Σ_i (1/(m−1)) Σ_{j'≠j_i} max{0, 1 − [y_iᵀHδ − ½(x_{j_i}+x_{j'})ᵀKδ]}`
pub fn hinge_loss_nonlinear(pair: &KernelPair, ds: &NonlinearDataset, cb: &Codebook) -> Result<f64> {
    check_dims(pair, ds, cb)?;
    let terms = PairTerms::new(pair, cb);
    let total: f64 = ds.iter().map(|(y, j)| sample_loss(&terms, y, j)).sum();
    Ok(total / ds.len() as f64)
}

/// Hinge loss of a single sample.
pub fn sample_hinge_nonlinear(pair: &KernelPair, cb: &Codebook, y: &[f64], label: usize) -> f64 {
    sample_loss(&PairTerms::new(pair, cb), y, label)
}

/// `λ_H Σ η max‖Hδ‖² + λ_K Σ η max‖Kδ‖²` over the raw codebook differences.
pub fn regularizer_nonlinear(pair: &KernelPair, cb: &Codebook, params: &NonlinearObjectiveParams) -> f64 {
    let part = &params.partition;
    params.lambda_h * part.weighted_max(cb.deltas(), 1.0, |d| norm_sq(&pair.h.matvec(d)))
        + params.lambda_k * part.weighted_max(cb.deltas(), 1.0, |d| norm_sq(&pair.k.matvec(d)))
}

pub fn objective_nonlinear(
    pair: &KernelPair,
    ds: &NonlinearDataset,
    cb: &Codebook,
    params: &NonlinearObjectiveParams,
) -> Result<f64> {
    Ok(hinge_loss_nonlinear(pair, ds, cb)? + regularizer_nonlinear(pair, cb, params))
}

/// Sub-gradients in `H` and `K` of the objective restricted to the samples in `batch`.
pub fn subgradient_nonlinear(
    pair: &KernelPair,
    ds: &NonlinearDataset,
    batch: &[usize],
    cb: &Codebook,
    params: &NonlinearObjectiveParams,
) -> Result<(Matrix, SymMatrix)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    check_dims(pair, ds, cb)?;
    let (dy, dx) = (pair.d_y(), pair.d_x());
    let m = cb.m();
    let mut gh = Matrix::zeros(dy, dx);
    let mut gk = Matrix::zeros(dx, dx);

    let part = &params.partition;
    if params.lambda_h != 0.0 {
        for (eta, delta) in part.maximizers(cb.deltas(), 1.0, |d| norm_sq(&pair.h.matvec(d))) {
            let c = 2.0 * params.lambda_h * eta;
            gh = gh.add_scaled(&Matrix::outer(&pair.h.matvec(&delta), &delta), c);
        }
    }
    if params.lambda_k != 0.0 {
        for (eta, delta) in part.maximizers(cb.deltas(), 1.0, |d| norm_sq(&pair.k.matvec(d))) {
            let c = 2.0 * params.lambda_k * eta;
            gk = gk.add_scaled(&Matrix::outer(&pair.k.matvec(&delta), &delta), c);
        }
    }

    let terms = PairTerms::new(pair, cb);
    let w = 1.0 / (batch.len() * (m - 1)) as f64;
    for &i in batch {
        let (y, j) = (ds.output(i), ds.label(i));
        let xj = cb.codeword(j);
        for jp in (0..m).filter(|&jp| jp != j) {
            if terms.score(y, j, jp) < 1.0 {
                let xp = cb.codeword(jp);
                let delta: Vec<f64> = xj.iter().zip(xp).map(|(a, b)| a - b).collect();
                let mid: Vec<f64> = xj.iter().zip(xp).map(|(a, b)| 0.5 * (a + b)).collect();
                gh = gh.add_scaled(&Matrix::outer(y, &delta), -w);
                gk = gk.add_scaled(&Matrix::outer(&mid, &delta), w);
            }
        }
    }
    Ok((gh, dsym(&gk)?))
}

/// Result of the Schur-complement test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// `max{0, −λ_min([[I, H], [Hᵀ, K]])}`
    pub violation: f64,
}

pub fn schur_feasibility(pair: &KernelPair, tol: f64) -> Result<Feasibility> {
    let violation = (-pair.lift().lambda_min()?).max(0.0);
    Ok(Feasibility {
        feasible: violation <= tol,
        violation,
    })
}

/// Projection onto `{HᵀH ⪯ K}` under the metric `2‖ΔH‖² + ‖ΔK‖²`.
///
/// This is the Frobenius projection of the lifted matrix onto the PSD
/// matrices whose top-left block is the identity. It is found by Newton's
/// method on the dual, whose only unknown is the `d_y × d_y` multiplier `Y`
/// of the identity block: the primal point is `Π_PSD(M₀ + [[Y, 0], [0, 0]])`.
/// A final diagonal shift of `K` removes any roundoff infeasibility.
pub fn project_hk(pair: &KernelPair) -> Result<KernelPair> {
    if schur_feasibility(pair, 0.0)?.feasible {
        return Ok(pair.clone());
    }
    let dy = pair.d_y();
    let m0 = pair.lift();
    let n = m0.dim();
    let tol = NEWTON_TOL * m0.frobenius_norm().max(1.0);
    let basis = sym_basis(dy);
    let ident = SymMatrix::identity(dy);
    // dual objective, up to a constant
    let dual = |proj: &SymMatrix, y: &SymMatrix| -0.5 * proj.frobenius_norm().powi(2) + y.trace();

    let mut y = SymMatrix::zeros(dy);
    let mut cur = PsdProjection::new(&m0)?;
    let mut grad = ident.sub(&top_left(&cur.proj, dy));
    for _ in 0..NEWTON_MAX_ITER {
        let res = grad.frobenius_norm();
        if res <= tol {
            return Ok(finish_projection(&cur.proj, dy));
        }
        // Newton system in an orthonormal basis of symmetric matrices
        let images: Vec<SymMatrix> = basis
            .iter()
            .map(|b| top_left(&cur.derivative(&embed(b, n)), dy))
            .collect();
        let jac = Matrix::from_fn(basis.len(), basis.len(), |k, l| basis[k].inner(&images[l]));
        let g: Vec<f64> = basis.iter().map(|b| b.inner(&grad)).collect();
        let newton = SymMatrix::from_matrix(&jac)
            .and_then(|j| j.inverse_pd())
            .ok()
            .map(|inv| {
                let c = inv.matvec(&g);
                basis
                    .iter()
                    .zip(&c)
                    .fold(SymMatrix::zeros(dy), |acc, (b, &ck)| acc.add_scaled(b, ck))
            });
        let phi = dual(&cur.proj, &y);
        // roundoff allowance on the dual value
        let slack = 1e-13 * (phi.abs() + 1.0);
        let mut accepted = None;
        if let Some(d) = newton.filter(|d| d.inner(&grad) > 0.0) {
            let slope = d.inner(&grad);
            let mut alpha = 1.0;
            while alpha >= 1e-4 {
                let trial = y.add_scaled(&d, alpha);
                let cand = PsdProjection::new(&m0.add(&embed(&trial, n)))?;
                if dual(&cand.proj, &trial) >= phi + 1e-4 * alpha * slope - slack {
                    accepted = Some((trial, cand));
                    break;
                }
                alpha *= 0.5;
            }
        }
        let (trial, cand) = match accepted {
            Some(step) => step,
            None => {
                // A unit gradient step always ascends since the dual gradient
                // is 1-Lipschitz. Where the dual is flat-curved (Jacobian
                // singular) keep doubling while it still ascends.
                let mut trial = y.add(&grad);
                let mut cand = PsdProjection::new(&m0.add(&embed(&trial, n)))?;
                let mut best = dual(&cand.proj, &trial);
                for _ in 0..60 {
                    let longer = trial.add(&trial.sub(&y));
                    let next = PsdProjection::new(&m0.add(&embed(&longer, n)))?;
                    let val = dual(&next.proj, &longer);
                    if val <= best {
                        break;
                    }
                    (trial, cand, best) = (longer, next, val);
                }
                (trial, cand)
            }
        };
        grad = ident.sub(&top_left(&cand.proj, dy));
        y = trial;
        cur = cand;
    }
    if grad.frobenius_norm() <= tol {
        return Ok(finish_projection(&cur.proj, dy));
    }
    Err(Error::NoConvergence {
        iterations: NEWTON_MAX_ITER,
        residual: grad.frobenius_norm(),
    })
}

/// The same projection by Dykstra's alternating projections between the PSD
/// cone and the affine set, stopping when an iterate moves by at most 1e-10.
/// Slow on large inputs; kept as an independent check of [`project_hk`].
pub fn project_hk_dykstra(pair: &KernelPair) -> Result<KernelPair> {
    if schur_feasibility(pair, 0.0)?.feasible {
        return Ok(pair.clone());
    }
    let dy = pair.d_y();
    let mut x = pair.lift();
    let n = x.dim();
    let mut p = SymMatrix::zeros(n);
    let mut q = SymMatrix::zeros(n);
    for _ in 0..DYKSTRA_MAX_ITER {
        let y = project_psd(&x.add(&p))?;
        p = x.add(&p).sub(&y);
        let next = fix_identity_block(&y.add(&q), dy);
        q = y.add(&q).sub(&next);
        let change = next.sub(&x).frobenius_norm();
        x = next;
        if change <= DYKSTRA_TOL {
            return Ok(finish_projection(&x, dy));
        }
    }
    Err(Error::NoConvergence {
        iterations: DYKSTRA_MAX_ITER,
        residual: x.sub(&project_psd(&x)?).frobenius_norm(),
    })
}

/// Splits the lifted matrix and shifts `K` by the most negative eigenvalue of
/// `K − HᵀH`, if any.
fn finish_projection(lifted: &SymMatrix, dy: usize) -> KernelPair {
    let (h, k) = split_lift(&fix_identity_block(lifted, dy), dy);
    let hth = SymMatrix::from_matrix(&h.transpose().matmul(&h)).expect("square");
    let gap = k.sub(&hth).lambda_min().unwrap_or(0.0);
    let k = if gap < 0.0 {
        k.add_scaled(&SymMatrix::identity(k.dim()), -gap)
    } else {
        k
    };
    KernelPair { h, k }
}

/// `Π_PSD(X)` together with the eigen-decomposition of `X`.
struct PsdProjection {
    eig: EigenDecomposition,
    proj: SymMatrix,
}

impl PsdProjection {
    fn new(x: &SymMatrix) -> Result<Self> {
        let eig = sym_eig(x)?;
        let proj = eig.recompose(|l| l.max(0.0));
        Ok(PsdProjection { eig, proj })
    }

    /// Derivative of `Π_PSD` at `X` along `d`: `V (Ω ∘ VᵀdV) Vᵀ` with the
    /// divided differences of `max(0, ·)` in `Ω`.
    fn derivative(&self, d: &SymMatrix) -> SymMatrix {
        let v = &self.eig.eigenvectors;
        let l = &self.eig.eigenvalues;
        let mut w = v.transpose().matmul(d.as_matrix()).matmul(v);
        let n = l.len();
        for i in 0..n {
            for j in 0..n {
                let omega = match (l[i] > 0.0, l[j] > 0.0) {
                    (true, true) => 1.0,
                    (false, false) => 0.0,
                    _ => (l[i].max(0.0) - l[j].max(0.0)) / (l[i] - l[j]),
                };
                w[(i, j)] *= omega;
            }
        }
        SymMatrix::from_matrix(&v.matmul(&w).matmul(&v.transpose())).expect("square")
    }
}

/// Orthonormal basis of the symmetric `n × n` matrices.
fn sym_basis(n: usize) -> Vec<SymMatrix> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let c = if i == j { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };
            let m = Matrix::from_fn(n, n, |a, b| {
                if (a, b) == (i, j) || (a, b) == (j, i) {
                    c
                } else {
                    0.0
                }
            });
            out.push(SymMatrix::from_matrix(&m).expect("square"));
        }
    }
    out
}

/// `y` in the top-left corner of an `n × n` zero matrix.
fn embed(y: &SymMatrix, n: usize) -> SymMatrix {
    let k = y.dim();
    let m = Matrix::from_fn(n, n, |i, j| if i < k && j < k { y.get(i, j) } else { 0.0 });
    SymMatrix::from_matrix(&m).expect("square")
}

fn top_left(a: &SymMatrix, k: usize) -> SymMatrix {
    SymMatrix::from_matrix(&Matrix::from_fn(k, k, |i, j| a.get(i, j))).expect("square")
}

fn fix_identity_block(a: &SymMatrix, dy: usize) -> SymMatrix {
    let n = a.dim();
    let m = Matrix::from_fn(n, n, |i, j| {
        if i < dy && j < dy {
            f64::from(u8::from(i == j))
        } else {
            a.get(i, j)
        }
    });
    SymMatrix::from_matrix(&m).expect("square")
}

fn split_lift(a: &SymMatrix, dy: usize) -> (Matrix, SymMatrix) {
    let n = a.dim();
    let dx = n - dy;
    let h = Matrix::from_fn(dy, dx, |i, j| a.get(i, dy + j));
    let k = Matrix::from_fn(dx, dx, |i, j| a.get(dy + i, dy + j));
    (h, SymMatrix::from_matrix(&k).expect("square"))
}

/// `√5 r_x² + 2 r_x (R_x + max‖w‖)`, with `r_x = max‖x‖` and `R_x` the
/// largest noiseless output norm seen in `ds`.
pub fn lipschitz_bound_nonlinear(cb: &Codebook, ds: &NonlinearDataset) -> f64 {
    let r_x = cb.max_norm();
    let mut big_r: f64 = 0.0;
    let mut w_max: f64 = 0.0;
    for i in 0..ds.len() {
        let w = ds.noise(i);
        let clean: Vec<f64> = ds.output(i).iter().zip(w).map(|(a, b)| a - b).collect();
        big_r = big_r.max(norm(&clean));
        w_max = w_max.max(norm(w));
    }
    5f64.sqrt() * r_x * r_x + 2.0 * r_x * (big_r + w_max)
}
