use rand::Rng;
use tslab_core::bandit::{BanditConfig, GaussianPosterior, GaussianPrior};
use tslab_core::bounds::{theorem3_bound, DEFAULT_THEOREM3_C};
use tslab_core::logconcave::{
    empirical_subgaussian_check, lc_regret_curve, lc_thompson_episode, mala_sample, norm_tail_check, GaussianDensity, LcConfig, MalaSettings, NoiseModel,
    PosteriorDensity, PriorModel, SmoothedLaplaceDensity,
};
use tslab_core::parallel::Execution;
use tslab_core::regret_lab::bayes_regret_curve;
use tslab_core::rng::{stream, StreamRole};
use tslab_core::{DMatrix, DVector, SpdMatrix};

fn gaussian_lc(d: usize, sigma: f64) -> LcConfig {
    let g = GaussianDensity::new(DVector::zeros(d), &SpdMatrix::identity(d)).unwrap();
    LcConfig::new(1.0, PriorModel::Gaussian(g), NoiseModel::Gaussian { sigma }).unwrap()
}

#[test]
fn mala_endpoints_match_conjugate_posterior() {
    let cov = SpdMatrix::from_diagonal(&[1.0, 0.5]).unwrap();
    let prior = GaussianPrior::centered(cov.clone()).unwrap();
    let mut exact = GaussianPosterior::from_prior(&prior);
    let mut target = PosteriorDensity::new(
        PriorModel::Gaussian(GaussianDensity::new(DVector::zeros(2), &cov).unwrap()),
        NoiseModel::Gaussian { sigma: 1.0 },
    )
    .unwrap();
    let mut rng = stream(1, 0, StreamRole::Auxiliary);
    let theta = DVector::from_vec(vec![0.8, -0.4]);
    for _ in 0..20 {
        let a = DVector::from_fn(2, |_, _| rng.random_range(-0.7..0.7));
        let y = theta.dot(&a) + rng.random_range(-1.0..1.0);
        exact.update(&a, y, 1.0);
        target.observe(a, y).unwrap();
    }
    let h = 0.5 / exact.precision().max_eigenvalue();
    let n = 1000;
    let draws: Vec<DVector<f64>> = (0..n)
        .map(|rep| {
            mala_sample(&target, &DVector::zeros(2), 500, h, &mut stream(2, rep, StreamRole::Mcmc))
                .unwrap()
                .sample
        })
        .collect();
    let mean = draws.iter().fold(DVector::zeros(2), |acc, x| acc + x) / n as f64;
    let mut cov_hat = DMatrix::<f64>::zeros(2, 2);
    for x in &draws {
        let c = x - &mean;
        cov_hat += &c * c.transpose();
    }
    cov_hat /= (n - 1) as f64;
    let target_cov = exact.covariance();
    let scale = target_cov.max_eigenvalue();
    assert!((&mean - exact.mean()).amax() <= 0.1 * scale.sqrt(), "{mean} vs {}", exact.mean());
    assert!((cov_hat - target_cov.as_matrix()).amax() <= 0.1 * scale);
}

#[test]
fn gaussian_specialization_agrees_with_exact_sampling() {
    for d in [1usize, 2] {
        let lc = gaussian_lc(d, 1.0);
        let exact_cfg = BanditConfig::centered(1.0, 1.0, SpdMatrix::identity(d)).unwrap();
        let mala = lc_regret_curve(&lc, 64, MalaSettings::default(), 300, 4, Execution::default()).unwrap();
        let exact = bayes_regret_curve(&exact_cfg, 64, 300, 5).unwrap();
        for k in 0..mala.horizons.len() {
            let gap = (mala.mean_regret[k] - exact.mean_regret[k]).abs();
            assert!(gap <= mala.half_width[k] + exact.half_width[k], "d {d} T {}", mala.horizons[k]);
        }
    }
}

#[test]
fn lc_trajectory_has_requested_shape() {
    let tr = lc_thompson_episode(&gaussian_lc(3, 0.5), 20, MalaSettings::default(), 1, 0).unwrap();
    assert_eq!(tr.len(), 20);
    assert!(tr.steps.iter().all(|s| s.pseudo_regret >= -1e-12));
    let again = lc_thompson_episode(&gaussian_lc(3, 0.5), 20, MalaSettings::default(), 1, 0).unwrap();
    assert_eq!(tr.steps.last().unwrap().action, again.steps.last().unwrap().action);
}

#[test]
fn smoothed_laplace_noise_regret_below_calibrated_bound() {
    for d in [1usize, 2] {
        let g = GaussianDensity::new(DVector::zeros(d), &SpdMatrix::identity(d)).unwrap();
        let noise = NoiseModel::SmoothedLaplace {
            sigma: 1.0,
            weight: 1.0,
            eps: 0.1,
        };
        let cfg = LcConfig::new(1.0, PriorModel::Gaussian(g), noise).unwrap();
        let curve = lc_regret_curve(&cfg, 64, MalaSettings::default(), 100, 6, Execution::default()).unwrap();
        for (k, &h) in curve.horizons.iter().enumerate() {
            let bound = theorem3_bound(d, h, 1.0, 1.0, &SpdMatrix::identity(d), DEFAULT_THEOREM3_C).unwrap();
            assert!(curve.mean_regret[k] <= bound, "d {d} T {h}");
        }
    }
}

fn v_grid(lambda: &SpdMatrix) -> Vec<DVector<f64>> {
    // Directions of Λ^{1/2}-length up to 1.5.
    let root = lambda.power(0.5).unwrap();
    let d = lambda.dim();
    let mut grid = Vec::new();
    for i in 0..d {
        for len in [0.5, 1.0, 1.5] {
            let mut e = DVector::zeros(d);
            e[i] = len;
            grid.push(root.as_matrix() * &e);
        }
    }
    grid.push(root.as_matrix() * DVector::from_element(d, 1.0 / (d as f64).sqrt()));
    grid
}

#[test]
fn mgf_domination_on_shipped_targets() {
    let cov = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8])).unwrap();
    let lambda = cov.inverse().unwrap();
    let gauss = GaussianDensity::new(DVector::zeros(2), &cov).unwrap();
    let laplace = SmoothedLaplaceDensity::new(lambda.clone(), 1.0, 0.1).unwrap();
    let grid = v_grid(&lambda);
    let mut rng = stream(7, 0, StreamRole::Auxiliary);
    let g = empirical_subgaussian_check(|r| gauss.sample(r), &lambda, &grid, 100_000, &mut rng).unwrap();
    assert!(g.passes(3.0), "{g:?}");
    assert!(g.margins.iter().all(|m| m.margin < 0.0));
    let l = empirical_subgaussian_check(|r| laplace.sample(r), &lambda, &grid, 100_000, &mut rng).unwrap();
    assert!(l.passes(3.0), "{l:?}");

    // Control: claiming a hundredfold tighter certificate must fail.
    let tight = lambda.scale(100.0).unwrap();
    let bad = empirical_subgaussian_check(|r| laplace.sample(r), &tight, &v_grid(&lambda), 100_000, &mut rng).unwrap();
    assert!(!bad.passes(3.0));
}

#[test]
fn norm_tail_on_gaussian() {
    let cov = SpdMatrix::identity(4);
    let gauss = GaussianDensity::new(DVector::zeros(4), &cov).unwrap();
    let mut rng = stream(8, 0, StreamRole::Auxiliary);
    let checks = norm_tail_check(|r| gauss.sample(r), &cov, 2.0, &[0.5, 1.0, 1.5], 1_000_000, &mut rng).unwrap();
    assert!(checks.iter().all(|c| c.pass && c.exceedance < c.bound), "{checks:?}");
    let control = norm_tail_check(|r| gauss.sample(r), &cov, 0.01, &[0.5, 1.0, 1.5], 100_000, &mut rng).unwrap();
    assert!(control.iter().any(|c| !c.pass), "{control:?}");
}
