//! Proper partitions of the codeword-pair indices.

use crate::channel::Codebook;
use crate::error::{invalid_param, Error, Result};
use crate::linalg::{dot, norm_sq, SymMatrix};

const RANK_TOL: f64 = 1e-10;
const MAX_TUPLES: u128 = 1_000_000;

/// `d + 1` disjoint groups of pair indices such that any choice of one
/// representative per group spans `R^d`, with positive weights summing to 1.
///
/// A partition built with [`build_completed`](Self::build_completed) may also
/// hold fixed completion directions, each forming a group of its own; they
/// stand in for the missing differences when the codebook spans a subspace.
#[derive(Clone, Debug, PartialEq)]
pub struct ProperPartition {
    parts: Vec<Vec<usize>>,
    completion: Vec<Vec<f64>>,
    /// weights of `parts`, then of `completion`
    eta: Vec<f64>,
}

impl ProperPartition {
    /// The first `d` pairs (in lexicographic order) that extend a linearly
    /// independent set become singleton groups; the last group holds the rest.
    pub fn build(cb: &Codebook) -> Result<Self> {
        let part = Self::build_completed(cb);
        if !part.completion.is_empty() {
            return Err(Error::NotSpanning {
                dim: cb.dim(),
                rank: cb.dim() - part.completion.len(),
            });
        }
        Ok(part)
    }

    /// Same as [`build`](Self::build) on spanning codebooks. Otherwise the
    /// orthogonal complement of the differences gets an orthogonal basis of
    /// length `min‖δ‖`, one group per vector, so any representative system
    /// still spans `R^d`.
    pub fn build_completed(cb: &Codebook) -> Self {
        let d = cb.dim();
        let scale = cb
            .deltas()
            .iter()
            .map(|v| norm_sq(v).sqrt())
            .fold(0.0, f64::max);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
        let mut singles = Vec::with_capacity(d);
        let mut rest = Vec::new();
        for k in 0..cb.num_pairs() {
            if basis.len() == d {
                rest.push(k);
                continue;
            }
            match residual(cb.delta(k), &basis, RANK_TOL * scale) {
                Some(r) => {
                    basis.push(r);
                    singles.push(k);
                }
                None => rest.push(k),
            }
        }
        // pairs skipped before the basis was complete still belong to the last group
        rest.sort_unstable();

        let len = cb.min_delta_sq().sqrt();
        let mut completion = Vec::new();
        for i in 0..d {
            if basis.len() == d {
                break;
            }
            let e: Vec<f64> = (0..d).map(|j| f64::from(u8::from(i == j))).collect();
            if let Some(r) = residual(&e, &basis, 1e-6) {
                completion.push(r.iter().map(|v| v * len).collect());
                basis.push(r);
            }
        }

        let mut parts: Vec<Vec<usize>> = singles.into_iter().map(|k| vec![k]).collect();
        parts.push(rest);
        let eta = vec![1.0 / (d + 1) as f64; d + 1];
        ProperPartition {
            parts,
            completion,
            eta,
        }
    }

    /// Replaces the weights; they must be positive and sum to 1.
    pub fn with_eta(mut self, eta: Vec<f64>) -> Result<Self> {
        if eta.len() != self.eta.len() {
            return Err(invalid_param(
                "eta",
                format!("need {} weights, got {}", self.eta.len(), eta.len()),
            ));
        }
        if eta.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(invalid_param("eta", "weights must be positive"));
        }
        let total: f64 = eta.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid_param("eta", format!("weights sum to {total}, not 1")));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn parts(&self) -> &[Vec<usize>] {
        &self.parts
    }

    pub fn completion(&self) -> &[Vec<f64>] {
        &self.completion
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn eta_min(&self) -> f64 {
        self.eta.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Per group, the member maximizing `score`; ties go to the lowest pair index.
    /// Empty groups yield `None`.
    pub fn argmax_per_part(&self, mut score: impl FnMut(usize) -> f64) -> Vec<Option<usize>> {
        self.parts
            .iter()
            .map(|part| {
                let mut best: Option<(usize, f64)> = None;
                for &k in part {
                    let v = score(k);
                    match best {
                        Some((_, b)) if v <= b => {}
                        _ => best = Some((k, v)),
                    }
                }
                best.map(|(k, _)| k)
            })
            .collect()
    }

    /// Per nonempty group, its weight and the member maximizing `score`.
    /// Pair `k` is represented by `deltas[k]`; completion directions are
    /// multiplied by `scale`. Ties go to the lowest pair index.
    pub fn maximizers(
        &self,
        deltas: &[Vec<f64>],
        scale: f64,
        mut score: impl FnMut(&[f64]) -> f64,
    ) -> Vec<(f64, Vec<f64>)> {
        let scores: Vec<f64> = deltas.iter().map(|v| score(v)).collect();
        let mut out: Vec<(f64, Vec<f64>)> = self
            .argmax_per_part(|k| scores[k])
            .into_iter()
            .zip(&self.eta)
            .filter_map(|(pick, &e)| pick.map(|k| (e, deltas[k].clone())))
            .collect();
        for (u, &e) in self.completion.iter().zip(&self.eta[self.parts.len()..]) {
            out.push((e, u.iter().map(|v| v * scale).collect()));
        }
        out
    }

    /// `Σ_i η_i max_{δ∈P_i} value(δ)` over nonempty groups.
    pub fn weighted_max(
        &self,
        deltas: &[Vec<f64>],
        scale: f64,
        mut value: impl FnMut(&[f64]) -> f64,
    ) -> f64 {
        self.maximizers(deltas, scale, &mut value)
            .iter()
            .map(|(e, v)| e * value(v))
            .sum()
    }
}

/// Part of `v` orthogonal to the orthonormal `basis`, normalized, or `None`
/// when its length is at most `tol`.
fn residual(v: &[f64], basis: &[Vec<f64>], tol: f64) -> Option<Vec<f64>> {
    let mut r = v.to_vec();
    // two Gram–Schmidt passes keep the residual accurate
    for _ in 0..2 {
        for b in basis {
            let c = dot(&r, b);
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
    }
    let len = norm_sq(&r).sqrt();
    (len > tol).then(|| r.iter().map(|x| x / len).collect())
}

/// Strong-convexity constants of the partition regularizer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrongConvexity {
    /// `min` over representative tuples of `λ_min(Σ η_i δ δᵀ)`; `None` when
    /// the number of tuples exceeds the enumeration budget.
    pub gamma_exact: Option<f64>,
    /// `η_min · min_{p<q} ‖δ_pq‖²`
    pub gamma_lower: f64,
}

impl StrongConvexity {
    pub fn budget_exceeded(&self) -> bool {
        self.gamma_exact.is_none()
    }

    /// The exact constant when available, else the lower bound.
    pub fn best(&self) -> f64 {
        self.gamma_exact.unwrap_or(self.gamma_lower)
    }
}

/// Constants for the codebook scaled by `gamma`.
pub fn strong_convexity_gamma(
    partition: &ProperPartition,
    cb: &Codebook,
    gamma: f64,
) -> Result<StrongConvexity> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid_param("gamma", format!("must be positive, got {gamma}")));
    }
    let deltas: Vec<Vec<f64>> = cb
        .deltas()
        .iter()
        .map(|v| v.iter().map(|x| x * gamma).collect())
        .collect();
    let gamma_lower = partition.eta_min() * gamma * gamma * cb.min_delta_sq();

    let parts: Vec<(&Vec<usize>, f64)> = partition
        .parts()
        .iter()
        .zip(partition.eta())
        .filter(|(p, _)| !p.is_empty())
        .map(|(p, &e)| (p, e))
        .collect();
    let tuples = parts
        .iter()
        .fold(1u128, |acc, (p, _)| acc.saturating_mul(p.len() as u128));
    if tuples > MAX_TUPLES {
        return Ok(StrongConvexity {
            gamma_exact: None,
            gamma_lower,
        });
    }

    let d = cb.dim();
    let mut fixed = SymMatrix::zeros(d);
    for (u, &e) in partition
        .completion()
        .iter()
        .zip(&partition.eta()[partition.parts().len()..])
    {
        let v: Vec<f64> = u.iter().map(|x| x * gamma).collect();
        fixed = fixed.add_scaled(&SymMatrix::rank_one(&v), e);
    }
    let mut choice = vec![0usize; parts.len()];
    let mut best = f64::INFINITY;
    loop {
        let mut acc = fixed.clone();
        for ((p, e), &c) in parts.iter().zip(&choice) {
            acc = acc.add_scaled(&SymMatrix::rank_one(&deltas[p[c]]), *e);
        }
        best = best.min(acc.lambda_min()?);
        // odometer increment over the cartesian product
        let mut i = 0;
        loop {
            if i == parts.len() {
                return Ok(StrongConvexity {
                    gamma_exact: Some(best),
                    gamma_lower,
                });
            }
            choice[i] += 1;
            if choice[i] < parts[i].0.len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Preset;

    fn triangle() -> Codebook {
        Codebook::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn triangle_partition() {
        let p = ProperPartition::build(&triangle()).unwrap();
        assert_eq!(p.parts(), &[vec![0], vec![1], vec![2]]);
        assert!(p.eta().iter().all(|&e| (e - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn collinear_codebook_does_not_span() {
        let cb = Codebook::preset(Preset::Antipodal);
        assert_eq!(
            ProperPartition::build(&cb),
            Err(Error::NotSpanning { dim: 2, rank: 1 })
        );
    }

    #[test]
    fn completed_partition_of_collinear_codebook() {
        let cb = Codebook::preset(Preset::Antipodal);
        let p = ProperPartition::build_completed(&cb);
        assert_eq!(p.parts(), &[vec![0], vec![]]);
        assert_eq!(p.completion().len(), 1);
        let u = &p.completion()[0];
        // orthogonal to δ = (2, 2), with length ‖δ‖
        assert!(dot(u, cb.delta(0)).abs() < 1e-12);
        assert!((norm_sq(u) - 8.0).abs() < 1e-12);
        assert_eq!(p.eta().len(), 3);
        let sc = strong_convexity_gamma(&p, &cb, 1.0).unwrap();
        assert!((sc.gamma_exact.unwrap() - 8.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn completed_equals_strict_on_spanning_codebooks() {
        let cb = Codebook::preset(Preset::Psk8);
        assert_eq!(ProperPartition::build(&cb).unwrap(), ProperPartition::build_completed(&cb));
    }

    #[test]
    fn qam64_partition_sizes() {
        let cb = Codebook::preset(Preset::Qam64);
        let p = ProperPartition::build(&cb).unwrap();
        assert_eq!(p.parts().len(), 3);
        assert_eq!(p.parts()[0].len(), 1);
        assert_eq!(p.parts()[1].len(), 1);
        assert_eq!(p.parts()[2].len(), 64 * 63 / 2 - 2);
    }

    #[test]
    fn skipped_pairs_land_in_last_group() {
        // δ_12 and δ_13 are parallel, δ_14 completes the basis
        let cb = Codebook::new(vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![2.0, 0.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let p = ProperPartition::build(&cb).unwrap();
        assert_eq!(p.parts()[0], vec![0]);
        assert_eq!(p.parts()[1], vec![2]);
        assert_eq!(p.parts()[2], vec![1, 3, 4, 5]);
    }

    #[test]
    fn gamma_constants() {
        let cb = triangle();
        let p = ProperPartition::build(&cb).unwrap();
        let sc = strong_convexity_gamma(&p, &cb, 1.0).unwrap();
        assert!((sc.gamma_lower - 1.0 / 3.0).abs() < 1e-15);
        let exact = sc.gamma_exact.unwrap();
        assert!(exact >= sc.gamma_lower - 1e-10);

        // a single unit difference in R^1: the last group is empty
        let line = Codebook::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let p = ProperPartition::build(&line).unwrap();
        assert!(p.parts()[1].is_empty());
        let sc = strong_convexity_gamma(&p, &line, 1.0).unwrap();
        assert!((sc.gamma_exact.unwrap() - 0.5).abs() < 1e-15);

        let sc2 = strong_convexity_gamma(&p, &line, 2.0).unwrap();
        assert!((sc2.gamma_lower - 4.0 * sc.gamma_lower).abs() < 1e-12);
    }

    #[test]
    fn thin_triangle_falls_below_the_lower_bound() {
        // all three differences nearly parallel: λ_min is O(ε²), η_min·min‖δ‖² is not
        let eps = 1e-2;
        let cb = Codebook::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![2.0, eps]]).unwrap();
        let p = ProperPartition::build(&cb).unwrap();
        let sc = strong_convexity_gamma(&p, &cb, 1.0).unwrap();
        assert!(sc.gamma_exact.unwrap() < 1e-3);
        assert!(sc.gamma_lower > 0.3);
    }

    #[test]
    fn orthonormal_basis_gives_uniform_weight() {
        // three codewords whose first two differences are e1 and e2, last group holds δ_23 = e2 − e1
        let cb = Codebook::new(vec![vec![0.0, 0.0], vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let p = ProperPartition::build(&cb)
            .unwrap()
            .with_eta(vec![0.5, 0.5 - 1e-9, 1e-9])
            .unwrap();
        let sc = strong_convexity_gamma(&p, &cb, 1.0).unwrap();
        let g = sc.gamma_exact.unwrap();
        assert!(g > 0.5 - 1e-6 && g <= 0.5 + 1e-12, "{g}");
    }

    #[test]
    fn budget_flag() {
        let cb = Codebook::preset(Preset::Qam64);
        let p = ProperPartition::build(&cb).unwrap();
        let sc = strong_convexity_gamma(&p, &cb, 1.0).unwrap();
        assert!(!sc.budget_exceeded());
        assert!(sc.gamma_exact.unwrap() >= sc.gamma_lower - 1e-10);
    }

    #[test]
    fn eta_validation() {
        let p = ProperPartition::build(&triangle()).unwrap();
        assert!(p.clone().with_eta(vec![0.5, 0.5]).is_err());
        assert!(p.clone().with_eta(vec![0.5, 0.5, 0.0]).is_err());
        assert!(p.with_eta(vec![0.2, 0.3, 0.5]).is_ok());
    }
}
