use rand::Rng;
use tslab_core::bandit::{max_covariance_eigenvalue, posterior_batch, run_episode, BanditConfig, Episode, GaussianPrior, Policy};
use tslab_core::bounds::{descending_eigenvalues, theorem1_bound, theorem2_bound};
use tslab_core::linalg::{random_rotation, spd_from_eigenvalues};
use tslab_core::rng::{stream, StreamRole};
use tslab_core::stats::{energy_test, MeanEstimate};
use tslab_core::{DVector, SpdMatrix};

fn rotated_config(d: usize, seed: u64) -> BanditConfig {
    let mut rng = stream(seed, 0, StreamRole::Instance);
    let evals: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..4.0)).collect();
    let cov = spd_from_eigenvalues(&evals, Some(&random_rotation(d, &mut rng))).unwrap();
    let mean = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
    BanditConfig::new(rng.random_range(0.5..2.0), rng.random_range(0.3..2.0), GaussianPrior::new(mean, cov).unwrap()).unwrap()
}

#[test]
fn final_posterior_matches_batch_recomputation() {
    for seed in 0..40u64 {
        let d = 1 + (seed as usize % 6);
        let cfg = rotated_config(d, seed);
        let tr = run_episode(&cfg, 120, seed).unwrap();
        let actions: Vec<_> = tr.steps.iter().map(|s| s.action.clone()).collect();
        let rewards: Vec<_> = tr.steps.iter().map(|s| s.reward).collect();
        let batch = posterior_batch(cfg.prior(), &actions, &rewards, cfg.sigma()).unwrap();

        let mut ep = Episode::new(&cfg, Policy::Thompson, seed, 0);
        for _ in 0..120 {
            ep.step().unwrap();
        }
        let post = ep.posterior();
        assert!((post.mean() - batch.mean()).amax() <= 1e-8, "seed {seed}");
        assert!((post.covariance().as_matrix() - batch.covariance().as_matrix()).amax() <= 1e-8, "seed {seed}");
        assert!((post.precision().as_matrix() - batch.precision().as_matrix()).amax() <= 1e-8, "seed {seed}");
    }
}

#[test]
fn pseudo_regret_is_nonnegative() {
    for seed in 0..100u64 {
        let cfg = rotated_config(1 + (seed as usize % 5), seed + 1000);
        let tr = run_episode(&cfg, 60, seed).unwrap();
        assert_eq!(tr.len(), 60);
        assert!(tr.steps.iter().all(|s| s.pseudo_regret >= -1e-12));
        assert!(tr.steps.iter().all(|s| s.action.norm() <= cfg.r() * (1.0 + 1e-12)));
    }
}

#[test]
fn posterior_contracts() {
    for seed in 0..20u64 {
        let cfg = rotated_config(1 + (seed as usize % 5), seed + 2000);
        let mut ep = Episode::new(&cfg, Policy::Thompson, seed, 0);
        let mut prev = max_covariance_eigenvalue(ep.posterior());
        for _ in 0..100 {
            ep.step().unwrap();
            let now = max_covariance_eigenvalue(ep.posterior());
            assert!(now <= prev * (1.0 + 1e-10), "seed {seed}: {now} > {prev}");
            prev = now;
        }
    }
}

#[test]
fn posterior_precision_inverts_covariance() {
    let cfg = rotated_config(8, 31);
    let mut ep = Episode::new(&cfg, Policy::Thompson, 3, 0);
    for _ in 0..500 {
        ep.step().unwrap();
        let post = ep.posterior();
        let prod = post.precision().as_matrix() * post.covariance().as_matrix();
        assert!((prod - tslab_core::DMatrix::<f64>::identity(8, 8)).amax() <= 1e-7);
    }
}

/// Conditioned on the history, `θ̂_t` and `θ*` have the same law, so pooled over episodes the two
/// samples are indistinguishable.
#[test]
fn sampled_parameter_is_exchangeable_with_truth() {
    let cfg = BanditConfig::centered(1.0, 1.0, SpdMatrix::from_diagonal(&[2.0, 0.5]).unwrap()).unwrap();
    let n = 5000;
    let mut truth = Vec::with_capacity(n);
    let mut sampled = Vec::with_capacity(n);
    for rep in 0..n as u64 {
        let mut ep = Episode::new(&cfg, Policy::Thompson, 77, rep);
        for _ in 0..5 {
            ep.step().unwrap();
        }
        let out = ep.step().unwrap();
        truth.push(ep.instance().theta_star().iter().copied().collect::<Vec<_>>());
        sampled.push(out.theta_hat.unwrap().iter().copied().collect::<Vec<_>>());
    }
    let (_, p) = energy_test(&truth, &sampled, 199, &mut stream(77, 0, StreamRole::Auxiliary));
    assert!(p > 0.01, "p = {p}");

    // Control: a posterior draw with inflated spread must be told apart.
    let inflated: Vec<Vec<f64>> = sampled.iter().map(|v| v.iter().map(|x| 1.3 * x).collect()).collect();
    let (_, p_bad) = energy_test(&truth, &inflated, 199, &mut stream(77, 1, StreamRole::Auxiliary));
    assert!(p_bad <= 0.01, "control p = {p_bad}");
}

#[test]
fn scalar_regret_lies_between_bounds() {
    let cfg = BanditConfig::centered(1.0, 1.0, SpdMatrix::identity(1)).unwrap();
    let totals: Vec<f64> = (0..2000u64).map(|s| run_episode(&cfg, 100, s).unwrap().total_pseudo_regret()).collect();
    let est = MeanEstimate::from_samples(&totals);
    let upper = theorem1_bound(1, 100, 1.0, 1.0, cfg.prior().cov()).unwrap();
    let lower = theorem2_bound(1.0, &descending_eigenvalues(cfg.prior().cov()), 100).unwrap();
    assert!(est.mean >= lower && est.mean <= upper, "{lower} <= {} <= {upper}", est.mean);
}

#[test]
fn episodes_are_reproducible() {
    let cfg = rotated_config(3, 5);
    let a = run_episode(&cfg, 50, 9).unwrap();
    let b = run_episode(&cfg, 50, 9).unwrap();
    assert_eq!(a.theta_star, b.theta_star);
    for (x, y) in a.steps.iter().zip(&b.steps) {
        assert_eq!(x.action, y.action);
        assert_eq!(x.reward, y.reward);
        assert_eq!(x.theta_hat, y.theta_hat);
    }
    let c = run_episode(&cfg, 50, 10).unwrap();
    assert_ne!(a.theta_star, c.theta_star);
}

#[test]
fn uniform_policy_regrets_more_than_thompson() {
    use tslab_core::parallel::Execution;
    use tslab_core::regret_lab::bayes_regret_curve_with;
    let cfg = BanditConfig::centered(1.0, 0.5, SpdMatrix::identity(3)).unwrap();
    let ts = bayes_regret_curve_with(&cfg, 128, 200, 1, Execution::default(), Policy::Thompson).unwrap();
    let uni = bayes_regret_curve_with(&cfg, 128, 200, 1, Execution::default(), Policy::UniformRandom).unwrap();
    assert!(uni.final_mean() > 2.0 * ts.final_mean());
}
