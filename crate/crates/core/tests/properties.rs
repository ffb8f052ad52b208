use akrel::bench::rastrigin;
use akrel::bernoulli::{bvn_orthant, covariance_sums, rho_b, sigma_b2, DenseIndicatorCovariance, IndicatorCovariance, PairPassOptions};
use akrel::estimator::{pf_probabilistic, var_mc, var_mi};
use akrel::kriging::{DesignOfExperiment, JitterPolicy, KrigingModel, MarginalPrediction, PoolPosterior};
use akrel::learning::{score, score_opt_wco, ScoringInput, StrategyKind};
use akrel::normal::cdf;
use akrel::rv::{lhs_sample, RandomVariableSpec, SamplePool};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, ..ProptestConfig::default() }
}

/// Design with points on a jittered grid so the correlation matrix stays
/// well conditioned.
fn design(dim: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (3usize..12, any::<u64>()).prop_map(move |(m, seed)| {
        let mut s = seed | 1;
        let mut next = move || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        // coordinate k visits the m strata with a stride coprime to m
        let gcd = |mut a: usize, mut b: usize| {
            while b != 0 {
                (a, b) = (b, a % b);
            }
            a
        };
        let strides: Vec<usize> = (0..dim).map(|k| (1 + 2 * k..).find(|a| gcd(*a, m) == 1).unwrap()).collect();
        let pts: Vec<Vec<f64>> =
            (0..m).map(|i| strides.iter().map(|a| -2.0 + 4.0 * ((i * a) % m) as f64 / m as f64 + 0.1 * next()).collect()).collect();
        let ys = pts.iter().map(|p| p.iter().map(|x| (1.3 * x).sin()).sum::<f64>() + 0.2 * next()).collect();
        (pts, ys)
    })
}

fn fixed_model(pts: &[Vec<f64>], ys: &[f64], theta: f64) -> Option<KrigingModel> {
    let doe = DesignOfExperiment::new(pts, ys.to_vec()).ok()?;
    KrigingModel::with_theta(doe, vec![theta; pts[0].len()], &JitterPolicy::default()).ok()
}

fn preds_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<MarginalPrediction>> {
    prop::collection::vec((-5.0f64..5.0, 0.01f64..3.0), n).prop_map(|v| v.into_iter().map(|(m, s)| MarginalPrediction::new(m, s * s)).collect())
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn lhs_one_sample_per_stratum(n in 1usize..300, d in 1usize..4, seed in any::<u64>()) {
        let spec = RandomVariableSpec::standard_normal(d).unwrap();
        let pool = lhs_sample(&spec, n, seed).unwrap();
        for k in 0..d {
            let mut strata: Vec<usize> = pool.iter().map(|p| ((cdf(p[k]) * n as f64) as usize).min(n - 1)).collect();
            strata.sort_unstable();
            prop_assert_eq!(strata, (0..n).collect::<Vec<_>>());
        }
        let again = lhs_sample(&spec, n, seed).unwrap();
        prop_assert_eq!(again.as_flat(), pool.as_flat());
    }

    #[test]
    fn kriging_interpolates((pts, ys) in design(2), theta in 0.2f64..5.0) {
        let Some(model) = fixed_model(&pts, &ys, theta) else { return Ok(()) };
        for (p, y) in pts.iter().zip(&ys) {
            let pr = model.predict_point(p).unwrap();
            prop_assert!((pr.mean - y).abs() <= 1e-6 * (1.0 + y.abs()), "{} vs {}", pr.mean, y);
            prop_assert!(pr.variance <= 1e-6 * model.sigma2());
        }
    }

    #[test]
    fn joint_prediction_consistent_and_psd((pts, ys) in design(2), theta in 0.2f64..5.0, n in 2usize..50, seed in any::<u64>()) {
        let Some(model) = fixed_model(&pts, &ys, theta) else { return Ok(()) };
        let spec = RandomVariableSpec::standard_normal(2).unwrap();
        let pool = lhs_sample(&spec, n, seed).unwrap();
        let joint = model.predict_joint(&pool).unwrap();
        let marg = model.predict_marginal(&pool).unwrap();
        let post = PoolPosterior::new(&model, &pool).unwrap();
        let floor = 1e-12 * model.sigma2();
        for i in 0..n {
            prop_assert!((joint.cov(i, i) - marg[i].variance).abs() <= 1e-8 * marg[i].variance.max(floor));
            prop_assert!((post.predictions()[i].variance - marg[i].variance).abs() <= 1e-8 * marg[i].variance.max(floor));
            for j in 0..i {
                let c = post.pairwise_cov(i, j);
                prop_assert!((c - joint.cov(i, j)).abs() <= 1e-8 * model.sigma2());
            }
        }
        let cm = DMatrix::from_fn(n, n, |i, j| joint.cov(i, j));
        let trace: f64 = (0..n).map(|i| joint.cov(i, i)).sum();
        let min = cm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-8 * trace.max(floor), "{min} {trace}");
    }

    #[test]
    fn kriging_matches_literal_formulas((pts, ys) in design(1), theta in 0.2f64..5.0, xs in prop::collection::vec(-3.0f64..3.0, 1..10)) {
        let Some(model) = fixed_model(&pts, &ys, theta) else { return Ok(()) };
        let m = pts.len();
        let k = |a: f64, b: f64| (-theta * (a - b) * (a - b)).exp();
        let r = DMatrix::from_fn(m, m, |i, j| k(pts[i][0], pts[j][0]) + if i == j { model.jitter() } else { 0.0 });
        let sv = r.clone().singular_values();
        prop_assume!(sv.max() / sv.min() <= 1e7);
        let Some(ri) = r.try_inverse() else { return Ok(()) };
        let one = DVector::from_element(m, 1.0);
        let y = DVector::from_vec(ys.clone());
        let c = (one.transpose() * &ri * &one)[0];
        let beta = (one.transpose() * &ri * &y)[0] / c;
        let resid = &y - &one * beta;
        let sigma2 = (resid.transpose() * &ri * &resid)[0] / m as f64;
        prop_assert!((model.beta() - beta).abs() <= 1e-8 * (1.0 + beta.abs()));
        prop_assert!((model.sigma2() - sigma2).abs() <= 1e-8 * sigma2);
        let rows: Vec<[f64; 1]> = xs.iter().map(|x| [*x]).collect();
        let pool = SamplePool::from_rows(&rows).unwrap();
        let marg = model.predict_marginal(&pool).unwrap();
        let post = PoolPosterior::new(&model, &pool).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let rv = DVector::from_fn(m, |t, _| k(*x, pts[t][0]));
            let mu = beta + (rv.transpose() * &ri * &resid)[0];
            let u = (one.transpose() * &ri * &rv)[0] - 1.0;
            let var = sigma2 * (1.0 - (rv.transpose() * &ri * &rv)[0] + u * u / c);
            let scale = 1.0 + mu.abs() + sigma2.sqrt();
            for p in [model.predict_point(&[*x]).unwrap(), marg[i], post.predictions()[i]] {
                prop_assert!((p.mean - mu).abs() <= 1e-8 * scale, "{} vs {mu}", p.mean);
                prop_assert!((p.variance - var.max(0.0)).abs() <= 1e-8 * sigma2, "{} vs {var}", p.variance);
            }
        }
    }

    #[test]
    fn var_mi_bounded(preds in preds_strategy(1..200)) {
        let v = var_mi(&preds).unwrap();
        prop_assert!(v >= 0.0 && v <= 0.25 / preds.len() as f64);
    }

    #[test]
    fn var_mc_with_identity_equals_var_mi(preds in preds_strategy(1..60)) {
        let n = preds.len();
        let mean: Vec<f64> = preds.iter().map(|p| p.mean).collect();
        let sd: Vec<f64> = preds.iter().map(|p| p.std()).collect();
        let corr: Vec<f64> = (0..n * n).map(|t| if t / n == t % n { 1.0 } else { 0.0 }).collect();
        let dense = DenseIndicatorCovariance::from_gaussian(&mean, &sd, &corr).unwrap();
        let mc = var_mc(&dense, &PairPassOptions { prune_tol: 0.0 }).unwrap();
        let mi = var_mi(&preds).unwrap();
        prop_assert!((mc - mi).abs() <= 1e-14 * mi.max(1e-300), "{mc} {mi}");
    }

    #[test]
    fn pf_rescales_with_safe_points(preds in preds_strategy(1..100), extra in 1usize..50) {
        let n = preds.len();
        let base = pf_probabilistic(&preds).unwrap();
        let mut more = preds.clone();
        more.extend((0..extra).map(|i| MarginalPrediction::new(1.0 + i as f64, 0.0)));
        let scaled = pf_probabilistic(&more).unwrap();
        prop_assert!((scaled - base * n as f64 / (n + extra) as f64).abs() <= 1e-15 * base.max(1e-300));
    }

    #[test]
    fn orthant_symmetric_and_bounded(h in -6.0f64..6.0, k in -6.0f64..6.0, rho in -1.0f64..=1.0) {
        let a = bvn_orthant(h, k, rho).unwrap();
        prop_assert_eq!(a.to_bits(), bvn_orthant(k, h, rho).unwrap().to_bits());
        let (ph, pk) = (cdf(h), cdf(k));
        prop_assert!(a >= (ph + pk - 1.0).max(0.0) && a <= ph.min(pk));
        prop_assert!((bvn_orthant(h, k, 0.0).unwrap() - ph * pk).abs() <= 1e-12);
    }

    #[test]
    fn rho_b_nondecreasing_within_branches(mi in -2.5f64..2.5, mj in -2.5f64..2.5) {
        // the orthant approximation switches formula at |rho| = 0.8; within a
        // branch it may dip by up to twice its 1e-3 error before normalization
        let pi = MarginalPrediction::new(-mi, 1.0);
        let pj = MarginalPrediction::new(-mj, 1.0);
        let slack = 2e-3 / (sigma_b2(&pi) * sigma_b2(&pj)).sqrt();
        for (lo, hi) in [(-1.0, -0.8 - 1e-9), (-0.8, 0.8), (0.8 + 1e-9, 1.0)] {
            let mut last = f64::NEG_INFINITY;
            for t in 0..=100 {
                let rho: f64 = lo + (hi - lo) * t as f64 / 100.0;
                let v = rho_b(&pi, &pj, rho).unwrap();
                prop_assert!(v >= last - slack, "rho {rho}: {v} < {last}");
                last = v;
            }
        }
    }

    #[test]
    fn indicator_pair_psd(mi in -3.0f64..3.0, mj in -3.0f64..3.0, rho in -1.0f64..=1.0) {
        let pair = DenseIndicatorCovariance::from_gaussian(&[mi, mj], &[1.0, 1.0], &[1.0, rho, rho, 1.0]).unwrap();
        let (vi, vj, c) = (pair.diag(0), pair.diag(1), pair.entry(0, 1));
        prop_assert!(vi * vj - c * c >= -1e-9, "{vi} {vj} {c}");
    }

    #[test]
    fn u_and_nco_rank_alike(raw in prop::collection::vec((-5.0f64..5.0, 0.7f64..3.0), 2..80)) {
        // U below about 8, where the indicator variance is resolvable
        let preds: Vec<MarginalPrediction> = raw.iter().map(|(m, s)| MarginalPrediction::new(*m, s * s)).collect();
        let input = ScoringInput { preds: &preds, densities: None, dim: 2, indicator: None };
        let u = score(StrategyKind::U, &input).unwrap().scores;
        let nco = score(StrategyKind::OptNco, &input).unwrap().scores;
        let mut uo: Vec<usize> = (0..preds.len()).collect();
        uo.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
        prop_assume!(uo.windows(2).all(|w| u[w[0]] < u[w[1]] && nco[w[0]] > nco[w[1]]));
        let mut no: Vec<usize> = (0..preds.len()).collect();
        no.sort_by(|&a, &b| nco[b].total_cmp(&nco[a]));
        prop_assert_eq!(uo, no);
    }

    #[test]
    fn scores_finite(mu in -1e6f64..1e6, log_s in -12.0f64..6.0) {
        let s = 10f64.powf(log_s);
        let preds = [MarginalPrediction::new(mu, s * s), MarginalPrediction::new(-mu, s * s)];
        let dens = [0.1, 1e-30];
        let input = ScoringInput { preds: &preds, densities: Some(&dens), dim: 2, indicator: None };
        for kind in StrategyKind::ALL.into_iter().filter(|k| *k != StrategyKind::OptWco) {
            let v = score(kind, &input).unwrap();
            prop_assert!(v.scores.iter().all(|x| x.is_finite()), "{kind}: {:?}", v.scores);
        }
    }

    #[test]
    fn scores_permutation_invariant(preds in preds_strategy(2..40), seed in any::<u64>()) {
        let n = preds.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut s = seed | 1;
        for i in (1..n).rev() {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            perm.swap(i, (s % (i as u64 + 1)) as usize);
        }
        let permuted: Vec<MarginalPrediction> = perm.iter().map(|&i| preds[i]).collect();
        let dens: Vec<f64> = (0..n).map(|i| 0.01 * (i + 1) as f64).collect();
        let pdens: Vec<f64> = perm.iter().map(|&i| dens[i]).collect();
        let a = ScoringInput { preds: &preds, densities: Some(&dens), dim: 2, indicator: None };
        let b = ScoringInput { preds: &permuted, densities: Some(&pdens), dim: 2, indicator: None };
        for kind in StrategyKind::ALL.into_iter().filter(|k| *k != StrategyKind::OptWco) {
            let sa = score(kind, &a).unwrap().scores;
            let sb = score(kind, &b).unwrap().scores;
            for (k, &i) in perm.iter().enumerate() {
                prop_assert_eq!(sa[i].to_bits(), sb[k].to_bits());
            }
        }
        // correlated scores through a dense covariance
        let mean: Vec<f64> = preds.iter().map(|p| p.mean).collect();
        let sd: Vec<f64> = preds.iter().map(|p| p.std()).collect();
        let corr: Vec<f64> = (0..n * n).map(|t| {
            let d = (t / n) as f64 - (t % n) as f64;
            (-d * d / 8.0).exp()
        }).collect();
        let pc: Vec<f64> = (0..n * n).map(|t| corr[perm[t / n] * n + perm[t % n]]).collect();
        let pm: Vec<f64> = perm.iter().map(|&i| mean[i]).collect();
        let ps: Vec<f64> = perm.iter().map(|&i| sd[i]).collect();
        let opts = PairPassOptions { prune_tol: 0.0 };
        let wa = score_opt_wco(&DenseIndicatorCovariance::from_gaussian(&mean, &sd, &corr).unwrap(), &opts).scores;
        let wb = score_opt_wco(&DenseIndicatorCovariance::from_gaussian(&pm, &ps, &pc).unwrap(), &opts).scores;
        for (k, &i) in perm.iter().enumerate() {
            prop_assert!((wa[i] - wb[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn wco_reduces_to_nco_without_correlation(preds in preds_strategy(2..40)) {
        let n = preds.len();
        let mean: Vec<f64> = preds.iter().map(|p| p.mean).collect();
        let sd: Vec<f64> = preds.iter().map(|p| p.std()).collect();
        let corr: Vec<f64> = (0..n * n).map(|t| if t / n == t % n { 1.0 } else { 0.0 }).collect();
        let dense = DenseIndicatorCovariance::from_gaussian(&mean, &sd, &corr).unwrap();
        let w = score_opt_wco(&dense, &PairPassOptions { prune_tol: 0.0 }).scores;
        let input = ScoringInput { preds: &preds, densities: None, dim: 2, indicator: None };
        let nco = score(StrategyKind::OptNco, &input).unwrap().scores;
        for (a, b) in w.iter().zip(&nco) {
            prop_assert!((a - b).abs() <= 1e-15);
        }
        let sums = covariance_sums(&dense, &PairPassOptions { prune_tol: 0.0 });
        prop_assert!((sums.total - nco.iter().sum::<f64>()).abs() <= 1e-12);
    }

    #[test]
    fn rastrigin_is_even(x1 in -6.0f64..6.0, x2 in -6.0f64..6.0) {
        let g = rastrigin(&[x1, x2]).unwrap();
        prop_assert_eq!(g, rastrigin(&[-x1, x2]).unwrap());
        prop_assert_eq!(g, rastrigin(&[x1, -x2]).unwrap());
    }
}

#[test]
fn rho_b_nondecreasing_on_grid() {
    let grid = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let rhos = [-1.0, -0.95, -0.5, 0.0, 0.5, 0.95, 1.0];
    for mi in grid {
        for mj in grid {
            let pi = MarginalPrediction::new(-mi, 1.0);
            let pj = MarginalPrediction::new(-mj, 1.0);
            let v: Vec<f64> = rhos.iter().map(|r| rho_b(&pi, &pj, *r).unwrap()).collect();
            assert!(v.windows(2).all(|w| w[0] <= w[1]), "m = ({mi}, {mj}): {v:?}");
        }
    }
}
