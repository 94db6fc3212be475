//! Thompson sampling with strongly log-concave prior and noise, driven by a MALA posterior sampler.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bandit::{optimal_action, StepRecord, Trajectory};
use crate::bounds::compute_beta;
use crate::linalg::{check_dim, quad_form, sample_with_factor, SpdMatrix};
use crate::parallel::{map_indexed, Execution};
use crate::regret_lab::{horizon_grid, sampled_cumulative, RegretCurve};
use crate::rng::{stream, StreamRng, StreamRole};
use crate::stats::{wilson_interval, Z_95};
use crate::{Error, Result};

/// Unnormalized log-density with gradient and a strong log-concavity certificate `Λ`:
/// `-log p(x) - ½ xᵀΛx` is convex.
pub trait LogDensity {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn strong_convexity(&self) -> SpdMatrix;
}

/// `N(mean, precision⁻¹)`.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    precision: SpdMatrix,
    cov_factor: DMatrix<f64>,
}

impl GaussianDensity {
    pub fn new(mean: DVector<f64>, cov: &SpdMatrix) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        Ok(GaussianDensity {
            mean,
            precision: cov.inverse()?,
            cov_factor: cov.cholesky_factor()?,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &SpdMatrix {
        &self.precision
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        sample_with_factor(&self.mean, &self.cov_factor, rng)
    }
}

impl LogDensity for GaussianDensity {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        -0.5 * quad_form(self.precision.as_matrix(), &(x - &self.mean))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        -(self.precision.as_matrix() * (x - &self.mean))
    }

    fn strong_convexity(&self) -> SpdMatrix {
        self.precision.clone()
    }
}

/// Pseudo-Huber penalty `√(x² + ε²) - ε`: convex, smooth, and `≈ |x|` away from zero.
fn pseudo_huber(x: f64, eps: f64) -> f64 {
    x.hypot(eps) - eps
}

fn pseudo_huber_grad(x: f64, eps: f64) -> f64 {
    x / x.hypot(eps)
}

/// `p(x) ∝ exp(-½ xᵀΛx - b Σ_i (√(x_i² + ε²) - ε))`, centered at zero.
///
/// The penalty is convex, so the density is `Λ`-strongly log-concave; it is sampled exactly by
/// rejection from `N(0, Λ⁻¹)`.
#[derive(Debug, Clone)]
pub struct SmoothedLaplaceDensity {
    lambda: SpdMatrix,
    weight: f64,
    eps: f64,
    cov_factor: DMatrix<f64>,
}

impl SmoothedLaplaceDensity {
    pub fn new(lambda: SpdMatrix, weight: f64, eps: f64) -> Result<Self> {
        if !(weight >= 0.0) {
            return Err(Error::param("weight", format!("must be nonnegative, got {weight}")));
        }
        if !(eps > 0.0) {
            return Err(Error::param("eps", format!("must be positive, got {eps}")));
        }
        let cov_factor = lambda.inverse()?.cholesky_factor()?;
        Ok(SmoothedLaplaceDensity {
            lambda,
            weight,
            eps,
            cov_factor,
        })
    }

    fn penalty(&self, x: &DVector<f64>) -> f64 {
        self.weight * x.iter().map(|&v| pseudo_huber(v, self.eps)).sum::<f64>()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let zero = DVector::zeros(self.lambda.dim());
        loop {
            let x = sample_with_factor(&zero, &self.cov_factor, rng);
            if rng.random::<f64>() < (-self.penalty(&x)).exp() {
                return x;
            }
        }
    }
}

impl LogDensity for SmoothedLaplaceDensity {
    fn dim(&self) -> usize {
        self.lambda.dim()
    }

    fn log_density(&self, x: &DVector<f64>) -> f64 {
        -0.5 * quad_form(self.lambda.as_matrix(), x) - self.penalty(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = -(self.lambda.as_matrix() * x);
        for (gi, &xi) in g.iter_mut().zip(x.iter()) {
            *gi -= self.weight * pseudo_huber_grad(xi, self.eps);
        }
        g
    }

    fn strong_convexity(&self) -> SpdMatrix {
        self.lambda.clone()
    }
}

/// Prior family for the log-concave bandit.
#[derive(Debug, Clone)]
pub enum PriorModel {
    Gaussian(GaussianDensity),
    SmoothedLaplace(SmoothedLaplaceDensity),
}

impl PriorModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            PriorModel::Gaussian(g) => g.sample(rng),
            PriorModel::SmoothedLaplace(s) => s.sample(rng),
        }
    }

    fn as_density(&self) -> &dyn LogDensity {
        match self {
            PriorModel::Gaussian(g) => g,
            PriorModel::SmoothedLaplace(s) => s,
        }
    }
}

/// Scalar noise law with `-log p_W` that is `σ⁻²`-strongly convex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum NoiseModel {
    Gaussian {
        sigma: f64,
    },
    /// `p(w) ∝ exp(-w²/(2σ²) - b (√(w² + ε²) - ε))`.
    SmoothedLaplace {
        sigma: f64,
        weight: f64,
        eps: f64,
    },
}

impl NoiseModel {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } | NoiseModel::SmoothedLaplace { sigma, .. } => sigma,
        }
    }

    /// `-log p_W(w)` up to a constant.
    pub fn neg_log(&self, w: f64) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => w * w / (2.0 * sigma * sigma),
            NoiseModel::SmoothedLaplace { sigma, weight, eps } => w * w / (2.0 * sigma * sigma) + weight * pseudo_huber(w, eps),
        }
    }

    /// `d/dw (-log p_W(w))`.
    pub fn neg_log_derivative(&self, w: f64) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => w / (sigma * sigma),
            NoiseModel::SmoothedLaplace { sigma, weight, eps } => w / (sigma * sigma) + weight * pseudo_huber_grad(w, eps),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            NoiseModel::SmoothedLaplace { sigma, weight, eps } => loop {
                let w = sigma * rng.sample::<f64, _>(StandardNormal);
                if rng.random::<f64>() < (-weight * pseudo_huber(w, eps)).exp() {
                    return w;
                }
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let sigma = self.sigma();
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::param("sigma", format!("noise scale must be positive, got {sigma}")));
        }
        if let NoiseModel::SmoothedLaplace { weight, eps, .. } = *self {
            if !(weight >= 0.0) || !(eps > 0.0) {
                return Err(Error::param("noise", "smoothed Laplace needs weight >= 0 and eps > 0"));
            }
        }
        Ok(())
    }
}

/// `log π_t(θ) = c + log π(θ) - Σ_s (-log p_W)(R_{s+1} - A_sᵀθ)`.
#[derive(Debug, Clone)]
pub struct PosteriorDensity {
    prior: PriorModel,
    noise: NoiseModel,
    actions: Vec<DVector<f64>>,
    rewards: Vec<f64>,
    gram: DMatrix<f64>,
    cross: DVector<f64>,
}

impl PosteriorDensity {
    pub fn new(prior: PriorModel, noise: NoiseModel) -> Result<Self> {
        noise.validate()?;
        let d = prior.as_density().dim();
        Ok(PosteriorDensity {
            prior,
            noise,
            actions: Vec::new(),
            rewards: Vec::new(),
            gram: DMatrix::zeros(d, d),
            cross: DVector::zeros(d),
        })
    }

    pub fn observe(&mut self, action: DVector<f64>, reward: f64) -> Result<()> {
        check_dim(self.dim(), action.len())?;
        self.gram.ger(1.0, &action, &action, 1.0);
        self.cross.axpy(reward, &action, 1.0);
        self.actions.push(action);
        self.rewards.push(reward);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    /// Log-density evaluated term by term over the history, without the Gaussian shortcut.
    pub fn log_density_direct(&self, theta: &DVector<f64>) -> f64 {
        let lik: f64 = self.actions.iter().zip(&self.rewards).map(|(a, &r)| self.noise.neg_log(r - a.dot(theta))).sum();
        self.prior.as_density().log_density(theta) - lik
    }
}

impl LogDensity for PosteriorDensity {
    fn dim(&self) -> usize {
        self.prior.as_density().dim()
    }

    fn log_density(&self, theta: &DVector<f64>) -> f64 {
        match self.noise {
            NoiseModel::Gaussian { sigma } => {
                // Σ (R - aᵀθ)² = θᵀGθ - 2θᵀc + const.
                let q = quad_form(&self.gram, theta) - 2.0 * theta.dot(&self.cross);
                self.prior.as_density().log_density(theta) - q / (2.0 * sigma * sigma)
            }
            NoiseModel::SmoothedLaplace { .. } => self.log_density_direct(theta),
        }
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut g = self.prior.as_density().gradient(theta);
        match self.noise {
            NoiseModel::Gaussian { sigma } => {
                let lik = (&self.cross - &self.gram * theta) / (sigma * sigma);
                g += lik;
            }
            NoiseModel::SmoothedLaplace { .. } => {
                for (a, &r) in self.actions.iter().zip(&self.rewards) {
                    let w = r - a.dot(theta);
                    g.axpy(self.noise.neg_log_derivative(w), a, 1.0);
                }
            }
        }
        g
    }

    /// `V_t = Λ_prior + σ⁻² Σ A_s A_sᵀ`.
    fn strong_convexity(&self) -> SpdMatrix {
        let s = self.noise.sigma();
        let m = self.prior.as_density().strong_convexity().into_matrix() + &self.gram / (s * s);
        SpdMatrix::from_symmetric(&m)
    }
}

/// Endpoint of a MALA chain and its acceptance rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MalaOutput {
    pub sample: DVector<f64>,
    pub acceptance_rate: f64,
}

fn log_proposal(to: &DVector<f64>, from: &DVector<f64>, grad_from: &DVector<f64>, h: f64) -> f64 {
    let diff = to - from - grad_from * h;
    -diff.norm_squared() / (4.0 * h)
}

/// Metropolis-adjusted Langevin chain `y = x + h ∇log π(x) + √(2h) z`, run for `n_steps`.
pub fn mala_sample<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    init: &DVector<f64>,
    n_steps: usize,
    step_size: f64,
    rng: &mut R,
) -> Result<MalaOutput> {
    check_dim(target.dim(), init.len())?;
    if !(step_size > 0.0) || !step_size.is_finite() {
        return Err(Error::param("step_size", format!("must be positive, got {step_size}")));
    }
    if n_steps == 0 {
        return Err(Error::param("n_steps", "must be at least 1"));
    }
    let mut x = init.clone();
    let mut lp = target.log_density(&x);
    if !lp.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInit);
    }
    let mut grad = target.gradient(&x);
    let noise_scale = (2.0 * step_size).sqrt();
    let mut accepted = 0usize;
    for _ in 0..n_steps {
        let z = DVector::from_fn(x.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &x + &grad * step_size + z * noise_scale;
        let lp_y = target.log_density(&y);
        let grad_y = target.gradient(&y);
        let log_ratio = lp_y - lp + log_proposal(&x, &y, &grad_y, step_size) - log_proposal(&y, &x, &grad, step_size);
        if lp_y.is_finite() && rng.random::<f64>().ln() < log_ratio {
            x = y;
            lp = lp_y;
            grad = grad_y;
            accepted += 1;
        }
    }
    Ok(MalaOutput {
        sample: x,
        acceptance_rate: accepted as f64 / n_steps as f64,
    })
}

/// Sampler settings per Thompson draw; `None` picks the defaults `50 d` steps and `0.5 / λ_max(V_t)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MalaSettings {
    pub n_steps: Option<usize>,
    pub step_size: Option<f64>,
}

impl MalaSettings {
    fn resolve(&self, d: usize, precision: &SpdMatrix) -> (usize, f64) {
        let steps = self.n_steps.unwrap_or(50 * d);
        let h = self.step_size.unwrap_or_else(|| 0.5 / precision.max_eigenvalue());
        (steps, h)
    }
}

/// Bandit with a log-concave prior and noise model.
#[derive(Debug, Clone)]
pub struct LcConfig {
    pub r: f64,
    pub prior: PriorModel,
    pub noise: NoiseModel,
}

impl LcConfig {
    pub fn new(r: f64, prior: PriorModel, noise: NoiseModel) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::param("r", format!("must be positive, got {r}")));
        }
        noise.validate()?;
        Ok(LcConfig { r, prior, noise })
    }

    pub fn d(&self) -> usize {
        self.prior.as_density().dim()
    }
}

/// Per-episode state of log-concave Thompson sampling.
struct LcEpisode<'a> {
    config: &'a LcConfig,
    settings: MalaSettings,
    theta_star: DVector<f64>,
    posterior: PosteriorDensity,
    chain: DVector<f64>,
    sampler_rng: StreamRng,
    mcmc_rng: StreamRng,
    noise_rng: StreamRng,
}

struct LcStep {
    action: DVector<f64>,
    reward: f64,
    theta_hat: DVector<f64>,
    pseudo_regret: f64,
    deviation_sq: f64,
    potential: f64,
}

impl<'a> LcEpisode<'a> {
    fn new(config: &'a LcConfig, settings: MalaSettings, seed: u64, replicate: u64) -> Result<Self> {
        let mut prior_rng = stream(seed, replicate, StreamRole::Prior);
        let theta_star = config.prior.sample(&mut prior_rng);
        Ok(LcEpisode {
            config,
            settings,
            theta_star,
            posterior: PosteriorDensity::new(config.prior.clone(), config.noise)?,
            chain: DVector::zeros(config.d()),
            sampler_rng: stream(seed, replicate, StreamRole::Sampler),
            mcmc_rng: stream(seed, replicate, StreamRole::Mcmc),
            noise_rng: stream(seed, replicate, StreamRole::Noise),
        })
    }

    fn step(&mut self) -> Result<LcStep> {
        let precision = self.posterior.strong_convexity();
        let (steps, h) = self.settings.resolve(self.config.d(), &precision);
        // Warm start from the previous endpoint; the first draw starts from an exact prior sample.
        if self.posterior.is_empty() {
            self.chain = self.config.prior.sample(&mut self.sampler_rng);
        }
        let out = mala_sample(&self.posterior, &self.chain, steps, h, &mut self.mcmc_rng)?;
        let theta_hat = out.sample;
        self.chain = theta_hat.clone();
        let action = optimal_action(&theta_hat, self.config.r);
        let reward = self.theta_star.dot(&action) + self.config.noise.sample(&mut self.noise_rng);
        let pseudo_regret = self.config.r * self.theta_star.norm() - self.theta_star.dot(&action);
        let deviation_sq = quad_form(precision.as_matrix(), &(&theta_hat - &self.theta_star));
        let potential = quad_form(precision.inverse()?.as_matrix(), &action).sqrt();
        self.posterior.observe(action.clone(), reward)?;
        Ok(LcStep {
            action,
            reward,
            theta_hat,
            pseudo_regret,
            deviation_sq,
            potential,
        })
    }
}

/// Thompson sampling with MALA posterior draws; same record layout as the exact sampler.
pub fn lc_thompson_episode(config: &LcConfig, horizon: usize, settings: MalaSettings, seed: u64, replicate: u64) -> Result<Trajectory> {
    let mut ep = LcEpisode::new(config, settings, seed, replicate)?;
    let beta = if horizon > 0 { Some(compute_beta(config.d(), horizon)?) } else { None };
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let s = ep.step()?;
        steps.push(StepRecord {
            within_beta: beta.is_some_and(|b| s.deviation_sq.sqrt() <= b),
            action: s.action,
            reward: s.reward,
            theta_hat: s.theta_hat,
            pseudo_regret: s.pseudo_regret,
            potential: s.potential,
        });
    }
    Ok(Trajectory {
        theta_star: ep.theta_star,
        beta,
        steps,
    })
}

/// Regret curve of MALA-driven Thompson sampling on [`horizon_grid`].
pub fn lc_regret_curve(
    config: &LcConfig,
    horizon: usize,
    settings: MalaSettings,
    n_replicates: usize,
    base_seed: u64,
    execution: Execution,
) -> Result<RegretCurve> {
    if n_replicates < 2 {
        return Err(Error::param("n_replicates", format!("need at least 2, got {n_replicates}")));
    }
    let horizons = horizon_grid(horizon);
    let runs = map_indexed(n_replicates, execution, |rep| {
        let mut ep = LcEpisode::new(config, settings, base_seed, rep as u64)?;
        sampled_cumulative(&horizons, || ep.step().map(|s| s.pseudo_regret))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let fingerprint = format!("lc-d{}-r{:e}-{:?}", config.d(), config.r, config.noise);
    Ok(RegretCurve::from_replicates(horizons, &runs, fingerprint))
}

/// Centered log-MGF excess `log E exp(vᵀ(X - EX)) - vᵀΛ⁻¹v` for one direction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MgfMargin {
    pub v: Vec<f64>,
    pub margin: f64,
    /// Delta-method standard error of the log-MGF estimate.
    pub mc_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubGaussianReport {
    pub n: usize,
    pub margins: Vec<MgfMargin>,
    pub worst_margin: f64,
    pub worst_mc_error: f64,
}

impl SubGaussianReport {
    /// Every direction stays below `k` standard errors.
    pub fn passes(&self, k: f64) -> bool {
        self.margins.iter().all(|m| m.margin <= k * m.mc_error)
    }
}

/// Empirical check that `X` is `2Λ⁻¹`-sub-Gaussian on the directions of `v_grid`.
pub fn empirical_subgaussian_check<F, R>(mut sampler: F, lambda: &SpdMatrix, v_grid: &[DVector<f64>], n: usize, rng: &mut R) -> Result<SubGaussianReport>
where
    F: FnMut(&mut R) -> DVector<f64>,
    R: Rng + ?Sized,
{
    if v_grid.is_empty() {
        return Err(Error::param("v_grid", "must be nonempty"));
    }
    if n < 2 {
        return Err(Error::param("n", "need at least 2 samples"));
    }
    let lambda_inv = lambda.inverse()?;
    let samples: Vec<DVector<f64>> = (0..n).map(|_| sampler(rng)).collect();
    let d = lambda.dim();
    for s in &samples {
        check_dim(d, s.len())?;
    }
    let mean = samples.iter().fold(DVector::zeros(d), |acc, x| acc + x) / n as f64;
    let mut margins = Vec::with_capacity(v_grid.len());
    for v in v_grid {
        check_dim(d, v.len())?;
        let vals: Vec<f64> = samples.iter().map(|x| v.dot(&(x - &mean)).exp()).collect();
        let m = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        margins.push(MgfMargin {
            v: v.iter().copied().collect(),
            margin: m.ln() - quad_form(lambda_inv.as_matrix(), v),
            mc_error: (var / n as f64).sqrt() / m,
        });
    }
    let worst = margins.iter().max_by(|a, b| a.margin.total_cmp(&b.margin)).expect("nonempty grid");
    Ok(SubGaussianReport {
        n,
        worst_margin: worst.margin,
        worst_mc_error: worst.mc_error,
        margins,
    })
}

/// Exceedance of `‖X‖_{Σ⁻¹} >= C(√d + t)` against `2 e^{-t²}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailCheck {
    pub t: f64,
    pub exceedance: f64,
    pub ci: (f64, f64),
    pub bound: f64,
    /// The Wilson interval does not lie entirely above the bound.
    pub pass: bool,
}

pub fn norm_tail_check<F, R>(mut sampler: F, sigma: &SpdMatrix, c: f64, t_grid: &[f64], n: usize, rng: &mut R) -> Result<Vec<TailCheck>>
where
    F: FnMut(&mut R) -> DVector<f64>,
    R: Rng + ?Sized,
{
    if !(c > 0.0) {
        return Err(Error::param("C", format!("must be positive, got {c}")));
    }
    let sigma_inv = sigma.inverse()?;
    let d = sigma.dim();
    let mut norms = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sampler(rng);
        check_dim(d, x.len())?;
        norms.push(quad_form(sigma_inv.as_matrix(), &x).max(0.0).sqrt());
    }
    let sqrt_d = (d as f64).sqrt();
    Ok(t_grid
        .iter()
        .map(|&t| {
            let level = c * (sqrt_d + t);
            let hits = norms.iter().filter(|&&x| x >= level).count() as u64;
            let ci = wilson_interval(hits, n as u64, Z_95);
            let bound = 2.0 * (-t * t).exp();
            TailCheck {
                t,
                exceedance: hits as f64 / n.max(1) as f64,
                ci,
                bound,
                pass: ci.0 <= bound,
            }
        })
        .collect())
}
