use itemgauge_core::irt::FlagThresholds;
use itemgauge_core::screen::*;
use itemgauge_core::{AnalysisTuple, Domain, N_CRITERIA};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                num += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / pairs
}

#[test]
fn auc_matches_pairwise_oracle_on_100_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut done = 0;
    while done < 100 {
        let n = rng.random_range(2..60);
        let s: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
        let l: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
        let Ok(a) = auc(&s, &l) else { continue };
        assert_eq!(a, pairwise_auc(&s, &l));
        done += 1;
    }
}

#[test]
fn pr_curve_matches_confusion_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s: Vec<f64> = (0..200).map(|_| (rng.random_range(0..50) as f64) / 50.0).collect();
    let l: Vec<bool> = (0..200).map(|_| rng.random::<f64>() < 0.25).collect();
    let c = pr_curve(&s, &l).unwrap();
    let mut distinct = s.clone();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    assert_eq!(c.thresholds, distinct);
    let positives = l.iter().filter(|&&v| v).count() as f64;
    for (k, &t) in c.thresholds.iter().enumerate() {
        let tp = s.iter().zip(&l).filter(|(&x, &y)| x >= t && y).count() as f64;
        let pp = s.iter().filter(|&&x| x >= t).count() as f64;
        assert_eq!(c.precision[k], tp / pp);
        assert_eq!(c.recall[k], tp / positives);
    }
    for w in c.recall.windows(2) {
        assert!(w[0] <= w[1]);
    }
    let target = c.precision[c.len() / 2];
    let p = select_threshold(&c, target).unwrap();
    let k = c.thresholds.iter().position(|&t| t == p.threshold).unwrap();
    assert!(p.precision >= target);
    assert_eq!(p.recall, c.recall[k]);
    assert!(c.precision[k + 1..].iter().all(|&v| v < target));
}

fn random_design(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 })
}

#[test]
fn logistic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let x = random_design(&mut rng, 30, 4);
        let y: Vec<bool> = (0..30).map(|_| rng.random::<f64>() < 0.4).collect();
        let beta: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let g = logistic_gradient(&x, &y, 0.7, &beta);
        for k in 0..5 {
            let h = 1e-5;
            let (mut up, mut dn) = (beta.clone(), beta.clone());
            up[k] += h;
            dn[k] -= h;
            let fd = (logistic_loss(&x, &y, 0.7, &up) - logistic_loss(&x, &y, 0.7, &dn)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "{fd} vs {}", g[k]);
        }
    }
}

#[test]
fn logistic_optimum_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let x = random_design(&mut rng, 50, 3);
        let y: Vec<bool> = (0..50).map(|i| rng.random::<f64>() < 0.2 + 0.5 * x[(i, 0)]).collect();
        if y.iter().all(|&v| v) || !y.iter().any(|&v| v) {
            continue;
        }
        let m = fit_logistic(&x, &y, 0.5).unwrap();
        let mut beta = vec![m.intercept];
        beta.extend(&m.weights);
        let g = logistic_gradient(&x, &y, 0.5, &beta);
        assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
    }
}

#[test]
fn ridge_without_penalty_matches_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_design(&mut rng, 40, 4);
    let y: Vec<f64> = (0..40).map(|i| 0.3 + x[(i, 1)] - 2.0 * x[(i, 3)] + rng.random::<f64>()).collect();
    let m = fit_ridge(&x, &y, 0.0).unwrap();
    let xa = DMatrix::from_fn(40, 5, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let beta = (xa.transpose() * &xa).try_inverse().unwrap() * xa.transpose() * nalgebra::DVector::from_vec(y);
    assert!((m.intercept - beta[0]).abs() < 1e-8);
    for j in 0..4 {
        assert!((m.weights[j] - beta[j + 1]).abs() < 1e-8);
    }
}

#[test]
fn gbt_solves_xor_where_logistic_cannot() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let make = |rng: &mut ChaCha8Rng, n: usize| {
        let x = DMatrix::from_fn(n, 4, |_, _| f64::from(rng.random::<bool>()));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let xor = (x[(i, 0)] != x[(i, 1)]) as u8 as f64;
                if rng.random::<f64>() < 0.05 { 1.0 - xor } else { xor }
            })
            .collect();
        (x, y)
    };
    let (xt, yt) = make(&mut rng, 400);
    let (xv, yv) = make(&mut rng, 400);
    let lv: Vec<bool> = yv.iter().map(|&v| v > 0.5).collect();
    let gbt = fit_gbt(&xt, &yt, GbtParams { n_estimators: 100, learning_rate: 0.1, max_depth: 3, classification: true }, 1);
    assert!(auc(&gbt.predict(&xv), &lv).unwrap() > 0.9);
    let lt: Vec<bool> = yt.iter().map(|&v| v > 0.5).collect();
    let log = fit_logistic(&xt, &lt, 1.0).unwrap();
    let a = auc(&log.decision(&xv), &lv).unwrap();
    assert!((a - 0.5).abs() < 0.1, "logistic AUC {a}");
}

#[test]
fn more_trees_do_not_hurt_held_out_rmse() {
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut r50 = 0.0;
    let mut r200 = 0.0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = DMatrix::from_fn(400, 6, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..400)
            .map(|i| x[(i, 0)] + 2.0 * x[(i, 1)] * x[(i, 2)] + 0.5 * std.sample(&mut rng))
            .collect();
        let (xt, yt) = (x.rows(0, 300).into_owned(), y[..300].to_vec());
        let (xv, yv) = (x.rows(300, 100).into_owned(), &y[300..]);
        let fit = |k| fit_forest(&xt, &yt, ForestParams { n_estimators: k, max_depth: None, min_samples_split: 2, classification: false }, seed);
        r50 += rmse(yv, &fit(50).predict(&xv));
        r200 += rmse(yv, &fit(200).predict(&xv));
    }
    assert!(r200 <= r50, "{r200} > {r50}");
}

#[test]
fn irrelevant_constant_feature_does_not_change_forest() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_design(&mut rng, 80, 3);
    let y: Vec<f64> = (0..80).map(|i| x[(i, 0)] * 2.0 + rng.random::<f64>()).collect();
    let p = ForestParams { n_estimators: 20, max_depth: None, min_samples_split: 2, classification: false };
    let with = |c: f64| {
        let xc = DMatrix::from_fn(80, 4, |i, j| if j == 3 { c } else { x[(i, j)] });
        fit_forest(&xc, &y, p, 3).predict(&xc)
    };
    assert_eq!(with(0.0), with(5.0));
}

fn flaw_dataset(seed: u64, n: usize) -> Vec<AnalysisTuple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|k| {
            let mut flags = [false; N_CRITERIA];
            for f in flags.iter_mut() {
                *f = rng.random::<f64>() < 0.15;
            }
            let delta = -2.6 * f64::from(u8::from(flags[3])) + 0.5 * std.sample(&mut rng);
            AnalysisTuple {
                item_id: format!("i{k:05}"),
                domain: Domain::Physical,
                flags,
                alpha: 1.0 + 0.4 * f64::from(u8::from(flags[0])) + 0.2 * std.sample(&mut rng),
                delta,
            }
        })
        .collect()
}

#[test]
fn cv_holds_out_every_item_once_and_is_deterministic() {
    let data = flaw_dataset(9, 200);
    let th = FlagThresholds::default();
    let grid = grid(ModelFamily::LogisticL2, GridProfile::Small);
    let cfg = CvConfig::default();
    let a = cv_evaluate(&data, Target::LowDiff, &th, &grid, &cfg).unwrap();
    assert!(a.oof_predictions.iter().all(|p| p.is_finite()));
    assert_eq!(a.folds.iter().map(|f| f.n_test).sum::<usize>(), 200);
    let b = cv_evaluate(&data, Target::LowDiff, &th, &grid, &cfg).unwrap();
    assert_eq!(a, b);
    let MetricSet::Classification(m) = a.metrics else { panic!("classification metrics") };
    assert!(m.auc > 0.9);
}

#[test]
fn baseline_reproduces_majority_rows() {
    let data = flaw_dataset(10, 300);
    let th = FlagThresholds::default();
    let r = cv_evaluate(&data, Target::LowDiff, &th, &[ModelSpec::Baseline], &CvConfig::default()).unwrap();
    let MetricSet::Classification(m) = r.metrics else { panic!() };
    let labels = Target::LowDiff.values(&data, &th);
    let prevalence = labels.iter().sum::<f64>() / labels.len() as f64;
    assert!(prevalence < 0.5);
    assert!((m.accuracy - (1.0 - prevalence)).abs() < 0.02);
    assert_eq!(m.auc, 0.5);
    assert_eq!(m.f1, 0.0);
}

#[test]
fn too_few_positives_abort() {
    let mut data = flaw_dataset(11, 100);
    for (k, t) in data.iter_mut().enumerate() {
        t.delta = if k < 3 { 3.0 } else { 0.0 };
    }
    let r = cv_evaluate(&data, Target::HighDiff, &FlagThresholds::default(), &[ModelSpec::Baseline], &CvConfig::default());
    assert!(matches!(r, Err(ScreenError::InsufficientClass { positives: 3, .. })));
}
