use maxmargin::channel::{
    sample_noise, sample_nonlinear_dataset, synthesize_additive_dataset, ChannelTransform,
    Codebook, NoiseModel, NonlinearDataset, Preset,
};
use maxmargin::decoder::{empirical_error_rate, KernelDecoder, PrecisionDecoder};
use maxmargin::linalg::{dsym, project_psd, Matrix, SymMatrix};
use maxmargin::margin_additive::{
    hinge_loss_additive, lipschitz_bound, objective_additive, subgradient_additive,
    transform_samples, AdditiveObjectiveParams, ProperPartition, TransformedSamples,
};
use maxmargin::margin_nonlinear::{
    hinge_loss_nonlinear, objective_nonlinear, schur_feasibility, subgradient_nonlinear,
    KernelPair, NonlinearObjectiveParams,
};
use maxmargin::rng::{standard_normal, substream};
use maxmargin::solver::{run_sgd_additive, run_sgd_nonlinear, Selection, SolverConfig};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand_chacha::ChaCha8Rng;

fn config(cases: u32, seed: u64) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(seed),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

struct Gen(ChaCha8Rng);

impl Gen {
    fn new(seed: u64) -> Self {
        Gen(substream(seed, 0x7e57, 0))
    }

    fn normal(&mut self) -> f64 {
        standard_normal(&mut self.0)
    }

    fn matrix(&mut self, r: usize, c: usize, scale: f64) -> Matrix {
        Matrix::from_fn(r, c, |_, _| scale * self.normal())
    }

    fn sym(&mut self, n: usize, scale: f64) -> SymMatrix {
        SymMatrix::from_matrix(&self.matrix(n, n, scale)).unwrap()
    }

    fn codebook(&mut self, m: usize, d: usize) -> Codebook {
        Codebook::new((0..m).map(|_| (0..d).map(|_| self.normal()).collect()).collect()).unwrap()
    }
}

fn sym_strategy(n: usize) -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-3.0f64..3.0, n * n)
        .prop_map(move |v| SymMatrix::from_matrix(&Matrix::from_vec(n, n, v).unwrap()).unwrap())
}

/// `Σ_{i≤j} dsym(G)_ij D_ij`, the directional derivative along symmetric `D`.
fn upper_inner(g: &SymMatrix, d: &SymMatrix) -> f64 {
    let n = g.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in i..n {
            acc += g.get(i, j) * d.get(i, j);
        }
    }
    acc
}

fn close(fd: f64, an: f64) -> bool {
    (fd - an).abs() <= 1e-5 * fd.abs().max(an.abs()) + 1e-9
}

struct AdditiveInstance {
    cb: Codebook,
    ts: TransformedSamples,
    params: AdditiveObjectiveParams,
}

fn additive_instance(g: &mut Gen, seed: u64) -> AdditiveInstance {
    let cb = g.codebook(4, 2);
    let noise = NoiseModel::IsotropicGaussian { dim: 2, sigma: 0.6 };
    let z = sample_noise(&noise, 6, seed).unwrap();
    let ds = synthesize_additive_dataset(&cb, &z, 1.3).unwrap();
    let ts = transform_samples(&ds, &cb, 1.3).unwrap();
    let params = AdditiveObjectiveParams::new(0.3, ProperPartition::build(&cb).unwrap()).unwrap();
    AdditiveInstance { cb, ts, params }
}

/// Which hinge terms are active and which pair wins each group at `s`.
fn additive_pattern(s: &SymMatrix, inst: &AdditiveInstance) -> (Vec<bool>, Vec<Option<usize>>) {
    let active = inst
        .ts
        .iter()
        .map(|t| {
            let sd = s.matvec(t.delta);
            t.a.iter().zip(&sd).map(|(a, b)| a * b).sum::<f64>() < 1.0
        })
        .collect();
    let norms: Vec<f64> = (0..inst.cb.num_pairs())
        .map(|k| s.matvec(inst.ts.delta(k)).iter().map(|v| v * v).sum())
        .collect();
    (active, inst.params.partition.argmax_per_part(|k| norms[k]))
}

proptest! {
    #![proptest_config(config(64, 11))]

    #[test]
    fn psd_projection_is_psd_and_obtuse(a in sym_strategy(4), seed in any::<u64>()) {
        let p = project_psd(&a).unwrap();
        prop_assert!(p.lambda_min().unwrap() >= -1e-10);
        let mut g = Gen::new(seed);
        for _ in 0..5 {
            let h = g.matrix(4, 4, 1.0);
            let x = SymMatrix::from_matrix(&h.matmul(&h.transpose())).unwrap();
            prop_assert!(a.sub(&p).inner(&x.sub(&p)) <= 1e-8);
        }
        let again = project_psd(&p).unwrap();
        prop_assert!(again.sub(&p).frobenius_norm() <= 1e-10 * (1.0 + p.frobenius_norm()));
    }

    #[test]
    fn dsym_pairs_with_symmetric_directions(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let a = g.matrix(3, 3, 1.0);
        let d = g.sym(3, 1.0);
        let lhs = upper_inner(&dsym(&a).unwrap(), &d);
        prop_assert!((lhs - a.inner(d.as_matrix())).abs() < 1e-12);
    }

    #[test]
    fn additive_subgradient_matches_finite_differences(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let inst = additive_instance(&mut g, seed);
        let s = g.sym(2, 0.5);
        let all: Vec<usize> = (0..inst.ts.len()).collect();
        let grad = subgradient_additive(&s, &inst.ts, &all, &inst.params).unwrap();
        let eps = 1e-6;
        for _ in 0..5 {
            let d = g.sym(2, 1.0);
            let plus = s.add_scaled(&d, eps);
            let minus = s.add_scaled(&d, -eps);
            prop_assume!(additive_pattern(&plus, &inst) == additive_pattern(&minus, &inst));
            let fd = (objective_additive(&plus, &inst.ts, &inst.params)
                - objective_additive(&minus, &inst.ts, &inst.params)) / (2.0 * eps);
            let an = upper_inner(&grad, &d);
            prop_assert!(close(fd, an), "fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn additive_lipschitz(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let inst = additive_instance(&mut g, seed);
        let l = lipschitz_bound(&inst.ts);
        let s1 = g.sym(2, 1.0);
        let s2 = g.sym(2, 1.0);
        let lhs = (hinge_loss_additive(&s1, &inst.ts) - hinge_loss_additive(&s2, &inst.ts)).abs();
        prop_assert!(lhs <= l * s1.sub(&s2).frobenius_norm() + 1e-9);
    }

    #[test]
    fn additive_hinge_dominates_error(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let cb = g.codebook(3, 2);
        let z = sample_noise(&NoiseModel::IsotropicGaussian { dim: 2, sigma: 0.8 }, 10, seed).unwrap();
        let gamma = 1.0 + g.normal().abs();
        let ds = synthesize_additive_dataset(&cb, &z, gamma).unwrap();
        let ts = transform_samples(&ds, &cb, gamma).unwrap();
        let h = g.matrix(2, 2, 1.0);
        let s = SymMatrix::from_matrix(&h.matmul(&h.transpose())).unwrap();
        let nn = PrecisionDecoder::new(s.clone()).unwrap().nearest_neighbor(&cb, gamma).unwrap();
        let err = empirical_error_rate(&nn, ds.iter()).unwrap();
        prop_assert!(err <= (cb.m() - 1) as f64 * hinge_loss_additive(&s, &ts) + 1e-9);
    }
}

struct NonlinearInstance {
    cb: Codebook,
    ds: NonlinearDataset,
    params: NonlinearObjectiveParams,
}

fn nonlinear_instance(g: &mut Gen, seed: u64) -> NonlinearInstance {
    let cb = g.codebook(4, 2);
    let f = ChannelTransform::Linear(g.matrix(3, 2, 1.0));
    let ds = sample_nonlinear_dataset(&cb, &f, 0.4, 12, seed).unwrap();
    let params = NonlinearObjectiveParams::new(0.2, 0.1, ProperPartition::build(&cb).unwrap()).unwrap();
    NonlinearInstance { cb, ds, params }
}

type Pattern = (Vec<bool>, Vec<Option<usize>>, Vec<Option<usize>>);

fn nonlinear_pattern(p: &KernelPair, inst: &NonlinearInstance) -> Pattern {
    let cb = &inst.cb;
    let mut active = Vec::new();
    for (y, j) in inst.ds.iter() {
        for jp in (0..cb.m()).filter(|&jp| jp != j) {
            let (xj, xp) = (cb.codeword(j), cb.codeword(jp));
            let delta: Vec<f64> = xj.iter().zip(xp).map(|(a, b)| a - b).collect();
            let mid: Vec<f64> = xj.iter().zip(xp).map(|(a, b)| 0.5 * (a + b)).collect();
            let hd = p.h.matvec(&delta);
            let kd = p.k.matvec(&delta);
            let score: f64 = y.iter().zip(&hd).map(|(a, b)| a * b).sum::<f64>()
                - mid.iter().zip(&kd).map(|(a, b)| a * b).sum::<f64>();
            active.push(score < 1.0);
        }
    }
    let sq = |v: Vec<f64>| v.iter().map(|x| x * x).sum::<f64>();
    let hn: Vec<f64> = cb.deltas().iter().map(|d| sq(p.h.matvec(d))).collect();
    let kn: Vec<f64> = cb.deltas().iter().map(|d| sq(p.k.matvec(d))).collect();
    let part = &inst.params.partition;
    (active, part.argmax_per_part(|k| hn[k]), part.argmax_per_part(|k| kn[k]))
}

proptest! {
    #![proptest_config(config(64, 12))]

    #[test]
    fn nonlinear_subgradient_matches_finite_differences(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let inst = nonlinear_instance(&mut g, seed);
        let pair = KernelPair::new(g.matrix(3, 2, 0.5), g.sym(2, 0.5)).unwrap();
        let all: Vec<usize> = (0..inst.ds.len()).collect();
        let (gh, gk) = subgradient_nonlinear(&pair, &inst.ds, &all, &inst.cb, &inst.params).unwrap();
        let eps = 1e-6;
        for _ in 0..5 {
            let dh = g.matrix(3, 2, 1.0);
            let dk = g.sym(2, 1.0);
            let shift = |c: f64| {
                KernelPair::new(pair.h.add_scaled(&dh, c), pair.k.add_scaled(&dk, c)).unwrap()
            };
            let (plus, minus) = (shift(eps), shift(-eps));
            prop_assume!(nonlinear_pattern(&plus, &inst) == nonlinear_pattern(&minus, &inst));
            let f = |p: &KernelPair| objective_nonlinear(p, &inst.ds, &inst.cb, &inst.params).unwrap();
            let fd = (f(&plus) - f(&minus)) / (2.0 * eps);
            let an = gh.inner(&dh) + upper_inner(&gk, &dk);
            prop_assert!(close(fd, an), "fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn nonlinear_hinge_dominates_error(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let inst = nonlinear_instance(&mut g, seed);
        let h = g.matrix(3, 2, 1.0);
        let k = SymMatrix::from_matrix(&h.transpose().matmul(&h)).unwrap();
        let pair = KernelPair::new(h.clone(), k).unwrap();
        let nn = KernelDecoder::new(h).unwrap().nearest_neighbor(&inst.cb).unwrap();
        let err = empirical_error_rate(&nn, inst.ds.iter()).unwrap();
        let hinge = hinge_loss_nonlinear(&pair, &inst.ds, &inst.cb).unwrap();
        prop_assert!(err <= (inst.cb.m() - 1) as f64 * hinge + 1e-9);
    }
}

proptest! {
    #![proptest_config(config(8, 13))]

    #[test]
    fn additive_iterates_stay_psd(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let inst_cb = g.codebook(3, 2);
        let z = sample_noise(&NoiseModel::IsotropicGaussian { dim: 2, sigma: 0.5 }, 20, seed).unwrap();
        let ds = synthesize_additive_dataset(&inst_cb, &z, 1.0).unwrap();
        let mut cfg = SolverConfig::new(0.05, 200, 3, seed);
        cfg.record_every = Some(1);
        let run = run_sgd_additive(&ds, &inst_cb, 1.0, &cfg).unwrap();
        for s in &run.iterates {
            prop_assert!(s.lambda_min().unwrap() >= -1e-10);
        }
        let ts: Vec<usize> = run.trace.points.iter().map(|p| p.t).collect();
        prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn nonlinear_iterates_stay_feasible(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let inst = nonlinear_instance(&mut g, seed);
        let mut cfg = SolverConfig::new(0.2, 60, 4, seed);
        cfg.lambda_k = Some(0.1);
        cfg.record_every = Some(1);
        let run = run_sgd_nonlinear(&inst.ds, &inst.cb, &cfg).unwrap();
        for p in &run.iterates {
            prop_assert!(schur_feasibility(p, 1e-8).unwrap().feasible);
        }
    }
}

fn bits(run: &maxmargin::solver::Trace) -> Vec<[u64; 5]> {
    run.points
        .iter()
        .map(|p| {
            [
                p.t as u64,
                p.objective.to_bits(),
                p.hinge.to_bits(),
                p.regularizer.to_bits(),
                p.norm.to_bits(),
            ]
        })
        .collect()
}

#[test]
fn additive_runs_are_bitwise_reproducible() {
    let cb = Codebook::preset(Preset::Psk8);
    let noise = NoiseModel::CorrelatedGaussian {
        covariance: SymMatrix::from_rows(&[vec![0.3, 0.1], vec![0.1, 0.2]]).unwrap(),
    };
    let z = sample_noise(&noise, 30, 4).unwrap();
    let ds = synthesize_additive_dataset(&cb, &z, 1.5).unwrap();
    let mut cfg = SolverConfig::new(1e-2, 300, 5, 21);
    cfg.selection = Selection::KFold { k: 3 };
    let a = run_sgd_additive(&ds, &cb, 1.5, &cfg).unwrap();
    let b = run_sgd_additive(&ds, &cb, 1.5, &cfg).unwrap();
    assert_eq!(bits(&a.trace), bits(&b.trace));
    assert_eq!(a.selected, b.selected);
    assert_eq!(a.decoder.matrix(), b.decoder.matrix());

    cfg.seed = 22;
    let c = run_sgd_additive(&ds, &cb, 1.5, &cfg).unwrap();
    assert_ne!(bits(&a.trace), bits(&c.trace));
}

#[test]
fn nonlinear_runs_are_bitwise_reproducible() {
    let cb = Codebook::preset(Preset::Psk8);
    let f = ChannelTransform::Linear(Matrix::from_rows(&[vec![1.04, 0.19], vec![0.19, 1.96]]).unwrap());
    let ds = sample_nonlinear_dataset(&cb, &f, 0.3, 80, 3).unwrap();
    let mut cfg = SolverConfig::new(1e-2, 150, 4, 5);
    cfg.lambda_k = Some(1e-3);
    cfg.selection = Selection::Holdout { fraction: 0.25 };
    let a = run_sgd_nonlinear(&ds, &cb, &cfg).unwrap();
    let b = run_sgd_nonlinear(&ds, &cb, &cfg).unwrap();
    assert_eq!(bits(&a.trace), bits(&b.trace));
    assert_eq!(a.pair, b.pair);
}

#[test]
fn trace_csv_has_fixed_header() {
    let cb = Codebook::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let z = sample_noise(&NoiseModel::IsotropicGaussian { dim: 2, sigma: 0.3 }, 5, 1).unwrap();
    let ds = synthesize_additive_dataset(&cb, &z, 1.0).unwrap();
    let run = run_sgd_additive(&ds, &cb, 1.0, &SolverConfig::new(0.1, 10, 2, 1)).unwrap();
    let mut out = Vec::new();
    run.trace.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,objective,hinge,regularizer,norm"));
    assert_eq!(lines.count(), 10);
}

#[test]
fn solver_handles_collinear_codebook() {
    // differences span a single direction; training still runs on that span
    let cb = Codebook::preset(Preset::Antipodal);
    let z = sample_noise(&NoiseModel::IsotropicGaussian { dim: 2, sigma: 0.5 }, 20, 2).unwrap();
    let ds = synthesize_additive_dataset(&cb, &z, 2.0).unwrap();
    let run = run_sgd_additive(&ds, &cb, 2.0, &SolverConfig::new(1e-2, 100, 5, 3)).unwrap();
    assert!(run.decoder.matrix().lambda_min().unwrap() >= -1e-10);
    assert!(ProperPartition::build(&cb).is_err());
}
