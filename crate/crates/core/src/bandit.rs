//! Linear-Gaussian bandit on the ball `{‖a‖ <= r}` with exact conjugate posterior updates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bounds::compute_beta;
use crate::linalg::{check_dim, sample_with_factor, InverseTracker, SpdMatrix};
use crate::rng::{stream, StreamRole};
use crate::{Error, Result};

/// Below this norm a parameter vector is treated as zero by [`optimal_action`].
const ZERO_NORM: f64 = 1e-14;
const ACTION_SLACK: f64 = 1e-12;

/// Gaussian prior `N(mean, cov)` with its precision and Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    cov: SpdMatrix,
    precision: SpdMatrix,
    factor: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, cov: SpdMatrix) -> Result<Self> {
        check_dim(cov.dim(), mean.len())?;
        let precision = cov.inverse()?;
        let factor = cov.cholesky_factor()?;
        Ok(GaussianPrior { mean, cov, precision, factor })
    }

    pub fn centered(cov: SpdMatrix) -> Result<Self> {
        let d = cov.dim();
        Self::new(DVector::zeros(d), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &SpdMatrix {
        &self.cov
    }

    pub fn precision(&self) -> &SpdMatrix {
        &self.precision
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        sample_with_factor(&self.mean, &self.factor, rng)
    }
}

/// Problem definition without the realized parameter.
#[derive(Debug, Clone)]
pub struct BanditConfig {
    r: f64,
    sigma: f64,
    prior: GaussianPrior,
}

impl BanditConfig {
    pub fn new(r: f64, sigma: f64, prior: GaussianPrior) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::param("r", format!("must be positive, got {r}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::param("sigma", format!("must be positive, got {sigma}")));
        }
        Ok(BanditConfig { r, sigma, prior })
    }

    /// Zero-mean prior with covariance `prior_cov`.
    pub fn centered(r: f64, sigma: f64, prior_cov: SpdMatrix) -> Result<Self> {
        Self::new(r, sigma, GaussianPrior::centered(prior_cov)?)
    }

    pub fn d(&self) -> usize {
        self.prior.dim()
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn prior(&self) -> &GaussianPrior {
        &self.prior
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.r, sigma, self.prior.clone())
    }

    pub fn with_prior_scale(&self, factor: f64) -> Result<Self> {
        let prior = GaussianPrior::new(self.prior.mean.clone(), self.prior.cov.scale(factor)?)?;
        Self::new(self.r, self.sigma, prior)
    }

    /// Stable 64-bit fingerprint of every parameter (FNV-1a over the IEEE bit patterns).
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(self.d() as u64);
        feed(self.r.to_bits());
        feed(self.sigma.to_bits());
        self.prior.mean.iter().for_each(|x| feed(x.to_bits()));
        self.prior.cov.as_matrix().iter().for_each(|x| feed(x.to_bits()));
        format!("{h:016x}")
    }
}

/// A configuration together with the realized `θ*`.
#[derive(Debug, Clone)]
pub struct BanditInstance {
    config: BanditConfig,
    theta_star: DVector<f64>,
}

impl BanditInstance {
    pub fn new(config: BanditConfig, theta_star: DVector<f64>) -> Result<Self> {
        check_dim(config.d(), theta_star.len())?;
        Ok(BanditInstance { config, theta_star })
    }

    /// Draws `θ* ~ N(μ0, Σ0)`.
    pub fn sample<R: Rng + ?Sized>(config: BanditConfig, rng: &mut R) -> Self {
        let theta_star = config.prior.sample(rng);
        BanditInstance { config, theta_star }
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    /// `θ*ᵀ A* = r ‖θ*‖`.
    pub fn optimal_reward(&self) -> f64 {
        self.config.r * self.theta_star.norm()
    }

    /// Noise-free regret `θ*ᵀ (A* - a)`.
    pub fn pseudo_regret(&self, action: &DVector<f64>) -> f64 {
        self.optimal_reward() - self.theta_star.dot(action)
    }

    /// Reward `θ*ᵀ a + σ z`.
    pub fn step<R: Rng + ?Sized>(&self, action: &DVector<f64>, rng: &mut R) -> Result<f64> {
        check_dim(self.config.d(), action.len())?;
        let norm = action.norm();
        if norm > self.config.r * (1.0 + ACTION_SLACK) {
            return Err(Error::ActionOutOfSet { norm, radius: self.config.r });
        }
        let z: f64 = rng.sample(StandardNormal);
        Ok(self.theta_star.dot(action) + self.config.sigma * z)
    }
}

/// `argmax_{‖a‖ <= r} θᵀa = r θ / ‖θ‖`, with `r e_1` when `θ` is (numerically) zero.
pub fn optimal_action(theta: &DVector<f64>, r: f64) -> DVector<f64> {
    let norm = theta.norm();
    if norm <= ZERO_NORM {
        let mut e1 = DVector::zeros(theta.len());
        if !theta.is_empty() {
            e1[0] = r;
        }
        e1
    } else {
        theta * (r / norm)
    }
}

/// Posterior `N(μ_t, Σ_t)` after `t` observations.
///
/// The precision `V_t = Σ0⁻¹ + σ⁻² Σ A_i A_iᵀ` and `Σ_t = V_t⁻¹` are tracked together with
/// Sherman-Morrison steps; `μ_t = Σ_t (Σ0⁻¹ μ0 + σ⁻² Σ A_i R_{i+1})`.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    t: usize,
    mean: DVector<f64>,
    information: DVector<f64>,
    tracker: InverseTracker,
}

impl GaussianPosterior {
    pub fn from_prior(prior: &GaussianPrior) -> Self {
        let tracker = InverseTracker::from_pair(&prior.precision, &prior.cov).expect("prior dimensions agree");
        let information = prior.precision.as_matrix() * &prior.mean;
        GaussianPosterior {
            t: 0,
            mean: prior.mean.clone(),
            information,
            tracker,
        }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> SpdMatrix {
        self.tracker.matrix()
    }

    pub fn covariance(&self) -> SpdMatrix {
        self.tracker.inverse()
    }

    /// `‖x‖²_{V_t}`.
    pub fn precision_norm_sq(&self, x: &DVector<f64>) -> f64 {
        self.tracker.quad(x)
    }

    /// `‖x‖²_{V_t⁻¹}`.
    pub fn covariance_norm_sq(&self, x: &DVector<f64>) -> f64 {
        self.tracker.inverse_quad(x)
    }

    /// Conditions on `(action, reward)` in place.
    pub fn update(&mut self, action: &DVector<f64>, reward: f64, sigma: f64) {
        let w = 1.0 / (sigma * sigma);
        self.tracker.add_rank_one(action, w);
        self.information.axpy(w * reward, action, 1.0);
        self.mean = self.tracker.raw_inverse() * &self.information;
        self.t += 1;
    }

    /// `θ̂ ~ N(μ_t, Σ_t)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let cov = self.tracker.inverse();
        let l = match cov.cholesky_factor() {
            Ok(l) => l,
            Err(_) => {
                let mut fresh = self.tracker.clone();
                fresh.refresh();
                fresh.inverse().cholesky_factor()?
            }
        };
        Ok(sample_with_factor(&self.mean, &l, rng))
    }
}

/// Functional form of [`GaussianPosterior::update`].
pub fn posterior_update(post: &GaussianPosterior, action: &DVector<f64>, reward: f64, sigma: f64) -> Result<GaussianPosterior> {
    check_dim(post.dim(), action.len())?;
    let mut next = post.clone();
    next.update(action, reward, sigma);
    Ok(next)
}

/// Posterior from the stacked history in one shot:
/// `Σ_t = (σ⁻² AᵀA + Σ0⁻¹)⁻¹`, `μ_t = Σ_t (σ⁻² AᵀR + Σ0⁻¹ μ0)`.
pub fn posterior_batch(prior: &GaussianPrior, actions: &[DVector<f64>], rewards: &[f64], sigma: f64) -> Result<GaussianPosterior> {
    if actions.len() != rewards.len() {
        return Err(Error::DimensionMismatch {
            expected: actions.len(),
            actual: rewards.len(),
        });
    }
    let d = prior.dim();
    for a in actions {
        check_dim(d, a.len())?;
    }
    if actions.is_empty() {
        return Ok(GaussianPosterior::from_prior(prior));
    }
    let stacked = DMatrix::from_fn(actions.len(), d, |i, j| actions[i][j]);
    let r = DVector::from_column_slice(rewards);
    let w = 1.0 / (sigma * sigma);
    let precision = SpdMatrix::from_symmetric(&(prior.precision.as_matrix() + stacked.transpose() * &stacked * w));
    let cov = precision.inverse()?;
    let information = prior.precision.as_matrix() * &prior.mean + stacked.transpose() * r * w;
    let mean = cov.as_matrix() * &information;
    Ok(GaussianPosterior {
        t: actions.len(),
        mean,
        information,
        tracker: InverseTracker::from_pair(&precision, &cov)?,
    })
}

/// Output of one Thompson sampling round.
#[derive(Debug, Clone)]
pub struct ThompsonDraw {
    pub action: DVector<f64>,
    pub reward: f64,
    pub theta_hat: DVector<f64>,
    pub posterior: GaussianPosterior,
}

/// Samples `θ̂`, plays `a*(θ̂)`, observes the reward and conditions on it.
pub fn thompson_step<R: Rng + ?Sized>(instance: &BanditInstance, post: &GaussianPosterior, rng: &mut R) -> Result<ThompsonDraw> {
    let theta_hat = post.sample(rng)?;
    let action = optimal_action(&theta_hat, instance.config.r);
    let reward = instance.step(&action, rng)?;
    let posterior = posterior_update(post, &action, reward, instance.config.sigma)?;
    Ok(ThompsonDraw {
        action,
        reward,
        theta_hat,
        posterior,
    })
}

/// Action-selection rule driven by [`Episode`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Policy {
    #[default]
    Thompson,
    /// Uniform on the sphere of radius `r`; a sanity baseline.
    UniformRandom,
}

/// What happened at step `t`, computed against the posterior given `H_t`.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub t: usize,
    pub action: DVector<f64>,
    pub reward: f64,
    /// `None` for policies that do not sample the posterior.
    pub theta_hat: Option<DVector<f64>>,
    pub pseudo_regret: f64,
    /// `‖θ̂_t - θ*‖²_{V_t}`.
    pub deviation_sq: Option<f64>,
    /// `‖A_t‖_{V_t⁻¹}`.
    pub potential: f64,
}

/// One replicate: its own `θ*`, posterior and RNG streams.
#[derive(Debug, Clone)]
pub struct Episode {
    instance: BanditInstance,
    posterior: GaussianPosterior,
    policy: Policy,
    sampler_rng: crate::rng::StreamRng,
    noise_rng: crate::rng::StreamRng,
}

impl Episode {
    /// Streams are addressed by `(seed, replicate)`; `θ*` comes from the prior stream.
    pub fn new(config: &BanditConfig, policy: Policy, seed: u64, replicate: u64) -> Self {
        let mut prior_rng = stream(seed, replicate, StreamRole::Prior);
        let instance = BanditInstance::sample(config.clone(), &mut prior_rng);
        Self::with_instance(instance, policy, seed, replicate)
    }

    pub fn with_instance(instance: BanditInstance, policy: Policy, seed: u64, replicate: u64) -> Self {
        let posterior = GaussianPosterior::from_prior(&instance.config.prior);
        Episode {
            instance,
            posterior,
            policy,
            sampler_rng: stream(seed, replicate, StreamRole::Sampler),
            noise_rng: stream(seed, replicate, StreamRole::Noise),
        }
    }

    pub fn instance(&self) -> &BanditInstance {
        &self.instance
    }

    pub fn posterior(&self) -> &GaussianPosterior {
        &self.posterior
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        let r = self.instance.config.r;
        let (action, theta_hat) = match self.policy {
            Policy::Thompson => {
                let theta_hat = self.posterior.sample(&mut self.sampler_rng)?;
                (optimal_action(&theta_hat, r), Some(theta_hat))
            }
            Policy::UniformRandom => {
                let g = DVector::from_fn(self.instance.config.d(), |_, _| self.sampler_rng.sample::<f64, _>(StandardNormal));
                (optimal_action(&g, r), None)
            }
        };
        let deviation_sq = theta_hat.as_ref().map(|th| self.posterior.precision_norm_sq(&(th - &self.instance.theta_star)));
        let potential = self.posterior.covariance_norm_sq(&action).sqrt();
        let reward = self.instance.step(&action, &mut self.noise_rng)?;
        let pseudo_regret = self.instance.pseudo_regret(&action);
        let t = self.posterior.t();
        self.posterior.update(&action, reward, self.instance.config.sigma);
        Ok(StepOutcome {
            t,
            action,
            reward,
            theta_hat,
            pseudo_regret,
            deviation_sq,
            potential,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub action: DVector<f64>,
    pub reward: f64,
    pub theta_hat: DVector<f64>,
    pub pseudo_regret: f64,
    /// `‖θ̂_t - θ*‖_{V_t} <= β`.
    pub within_beta: bool,
    pub potential: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub theta_star: DVector<f64>,
    /// `β` used for the event flags; `None` for an empty horizon.
    pub beta: Option<f64>,
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_pseudo_regret(&self) -> f64 {
        self.steps.iter().map(|s| s.pseudo_regret).sum()
    }

    /// Running sums of pseudo-regret, one per step.
    pub fn cumulative_regret(&self) -> Vec<f64> {
        self.steps
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s.pseudo_regret;
                Some(*acc)
            })
            .collect()
    }
}

/// Runs Thompson sampling for `horizon` steps with `θ*` drawn from the prior.
pub fn run_episode(config: &BanditConfig, horizon: usize, seed: u64) -> Result<Trajectory> {
    run_replicate(config, horizon, seed, 0)
}

pub fn run_replicate(config: &BanditConfig, horizon: usize, seed: u64, replicate: u64) -> Result<Trajectory> {
    let mut episode = Episode::new(config, Policy::Thompson, seed, replicate);
    let beta = if horizon > 0 { Some(compute_beta(config.d(), horizon)?) } else { None };
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let out = episode.step()?;
        let dev = out.deviation_sq.unwrap_or(f64::INFINITY);
        steps.push(StepRecord {
            within_beta: beta.is_some_and(|b| dev.sqrt() <= b),
            theta_hat: out.theta_hat.expect("Thompson sampling draws θ̂"),
            action: out.action,
            reward: out.reward,
            pseudo_regret: out.pseudo_regret,
            potential: out.potential,
        });
    }
    Ok(Trajectory {
        theta_star: episode.instance.theta_star.clone(),
        beta,
        steps,
    })
}

/// `λ_max` of the posterior covariance, used by the contraction property.
pub fn max_covariance_eigenvalue(post: &GaussianPosterior) -> f64 {
    post.covariance().max_eigenvalue()
}
