//! Monte Carlo estimates of Bayesian regret and of the event probabilities used in its analysis.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::bandit::{BanditConfig, Episode, Policy};
use crate::bounds::{descending_eigenvalues, theorem1_bound, theorem2_bound};
use crate::parallel::{map_indexed, Execution};
use crate::stats::{ks_critical_value, ks_statistic, ols_slope, wilson_interval, MeanEstimate, Z_95};
use crate::{Error, Result};

/// Significance level of the χ² goodness-of-fit gate.
pub const KS_ALPHA: f64 = 0.01;

/// Powers of two up to `horizon`, with `horizon` itself appended; `[0]` for an empty horizon.
pub fn horizon_grid(horizon: usize) -> Vec<usize> {
    if horizon == 0 {
        return vec![0];
    }
    let mut grid: Vec<usize> = std::iter::successors(Some(1usize), |h| h.checked_mul(2))
        .take_while(|&h| h <= horizon)
        .collect();
    if grid.last() != Some(&horizon) {
        grid.push(horizon);
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretCurve {
    pub horizons: Vec<usize>,
    pub mean_regret: Vec<f64>,
    pub half_width: Vec<f64>,
    pub n_replicates: usize,
    pub fingerprint: String,
}

impl RegretCurve {
    /// Aggregates per-replicate cumulative regret sampled at `horizons`.
    pub fn from_replicates(horizons: Vec<usize>, replicates: &[Vec<f64>], fingerprint: String) -> Self {
        let mut mean_regret = Vec::with_capacity(horizons.len());
        let mut half_width = Vec::with_capacity(horizons.len());
        let mut column = Vec::with_capacity(replicates.len());
        for k in 0..horizons.len() {
            column.clear();
            column.extend(replicates.iter().map(|r| r[k]));
            let est = MeanEstimate::with_z(&column, Z_95);
            mean_regret.push(est.mean);
            half_width.push(est.half_width);
        }
        RegretCurve {
            horizons,
            mean_regret,
            half_width,
            n_replicates: replicates.len(),
            fingerprint,
        }
    }

    pub fn final_mean(&self) -> f64 {
        self.mean_regret.last().copied().unwrap_or(0.0)
    }
}

/// Cumulative pseudo-regret of one episode read off at each point of `horizons` (ascending).
pub fn sampled_cumulative<F>(horizons: &[usize], mut step: F) -> Result<Vec<f64>>
where
    F: FnMut() -> Result<f64>,
{
    let mut out = Vec::with_capacity(horizons.len());
    let mut acc = 0.0;
    let mut t = 0usize;
    for &h in horizons {
        while t < h {
            acc += step()?;
            t += 1;
        }
        out.push(acc);
    }
    Ok(out)
}

fn require_replicates(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::param("n_replicates", format!("need at least 2, got {n}")));
    }
    Ok(())
}

/// Bayesian regret of Thompson sampling at every horizon of [`horizon_grid`].
pub fn bayes_regret_curve(config: &BanditConfig, horizon: usize, n_replicates: usize, base_seed: u64) -> Result<RegretCurve> {
    bayes_regret_curve_with(config, horizon, n_replicates, base_seed, Execution::default(), Policy::Thompson)
}

pub fn bayes_regret_curve_with(
    config: &BanditConfig,
    horizon: usize,
    n_replicates: usize,
    base_seed: u64,
    execution: Execution,
    policy: Policy,
) -> Result<RegretCurve> {
    require_replicates(n_replicates)?;
    let horizons = horizon_grid(horizon);
    let runs = map_indexed(n_replicates, execution, |rep| {
        let mut ep = Episode::new(config, policy, base_seed, rep as u64);
        sampled_cumulative(&horizons, || ep.step().map(|o| o.pseudo_regret))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(RegretCurve::from_replicates(horizons, &runs, config.fingerprint()))
}

/// Upper and lower bound at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundEnvelope {
    pub upper: f64,
    pub lower: f64,
}

/// Bound envelope at each horizon of `horizons`; both bounds assume a zero prior mean.
pub fn bound_envelope(config: &BanditConfig, horizons: &[usize]) -> Result<Vec<BoundEnvelope>> {
    let tau_sq = descending_eigenvalues(config.prior().cov());
    horizons
        .iter()
        .map(|&h| {
            if h == 0 {
                return Ok(BoundEnvelope { upper: 0.0, lower: 0.0 });
            }
            Ok(BoundEnvelope {
                upper: theorem1_bound(config.d(), h, config.sigma(), config.r(), config.prior().cov())?,
                lower: theorem2_bound(config.r(), &tau_sq, h)?,
            })
        })
        .collect()
}

/// Frequencies of `‖θ̂_t - θ*‖_{V_t} > β`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventReport {
    pub beta: f64,
    pub horizon: usize,
    pub n_replicates: usize,
    /// Per-step violation frequency.
    pub per_step: Vec<f64>,
    /// Number of replicates with at least one violation.
    pub union_count: u64,
    pub union_frequency: f64,
    /// 95% Wilson interval for the union frequency.
    pub union_ci: (f64, f64),
}

impl EventReport {
    /// Half-width of the Wilson interval.
    pub fn ci_half_width(&self) -> f64 {
        (self.union_ci.1 - self.union_ci.0) / 2.0
    }
}

pub fn event_violation_rate(
    config: &BanditConfig,
    beta: f64,
    horizon: usize,
    n_replicates: usize,
    base_seed: u64,
    execution: Execution,
) -> Result<EventReport> {
    if !(beta >= 0.0) {
        return Err(Error::param("beta", format!("must be nonnegative, got {beta}")));
    }
    let beta_sq = beta * beta;
    let runs = map_indexed(n_replicates, execution, |rep| -> Result<Vec<bool>> {
        let mut ep = Episode::new(config, Policy::Thompson, base_seed, rep as u64);
        (0..horizon)
            .map(|_| {
                let o = ep.step()?;
                Ok(o.deviation_sq.is_some_and(|dev| dev > beta_sq))
            })
            .collect()
    });
    let mut counts = vec![0u64; horizon];
    let mut union_count = 0u64;
    for run in runs {
        let run = run?;
        for (c, &v) in counts.iter_mut().zip(&run) {
            *c += u64::from(v);
        }
        union_count += u64::from(run.iter().any(|&v| v));
    }
    let n = n_replicates.max(1) as f64;
    Ok(EventReport {
        beta,
        horizon,
        n_replicates,
        per_step: counts.iter().map(|&c| c as f64 / n).collect(),
        union_count,
        union_frequency: union_count as f64 / n,
        union_ci: wilson_interval(union_count, n_replicates as u64, Z_95),
    })
}

/// Kolmogorov-Smirnov fit of `½ ‖θ̂_t - θ*‖²_{V_t}` to `χ²_d` at one checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareCheck {
    pub t: usize,
    pub ks_halved: f64,
    /// Same statistic without the factor ½, kept as a control that should be rejected.
    pub ks_unhalved: f64,
    pub critical: f64,
}

impl ChiSquareCheck {
    pub fn passes(&self) -> bool {
        self.ks_halved < self.critical
    }

    pub fn control_rejected(&self) -> bool {
        self.ks_unhalved >= self.critical
    }
}

pub fn chi_square_diagnostic(
    config: &BanditConfig,
    checkpoints: &[usize],
    n_replicates: usize,
    base_seed: u64,
    execution: Execution,
) -> Result<Vec<ChiSquareCheck>> {
    require_replicates(n_replicates)?;
    let last = match checkpoints.iter().max() {
        Some(&m) => m,
        None => return Ok(Vec::new()),
    };
    let runs = map_indexed(n_replicates, execution, |rep| -> Result<Vec<f64>> {
        let mut ep = Episode::new(config, Policy::Thompson, base_seed, rep as u64);
        let mut devs = Vec::with_capacity(checkpoints.len());
        let mut by_step = Vec::with_capacity(last + 1);
        for _ in 0..=last {
            by_step.push(ep.step()?.deviation_sq.unwrap_or(f64::NAN));
        }
        devs.extend(checkpoints.iter().map(|&c| by_step[c]));
        Ok(devs)
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let chi = ChiSquared::new(config.d() as f64).map_err(|e| Error::param("d", e.to_string()))?;
    let critical = ks_critical_value(n_replicates, KS_ALPHA);
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let halved: Vec<f64> = runs.iter().map(|r| 0.5 * r[k]).collect();
            let full: Vec<f64> = runs.iter().map(|r| r[k]).collect();
            ChiSquareCheck {
                t,
                ks_halved: ks_statistic(&halved, |x| chi.cdf(x)),
                ks_unhalved: ks_statistic(&full, |x| chi.cdf(x)),
                critical,
            }
        })
        .collect())
}

/// Regret split into a burn-in window `[0, d]` and a late window `[T/2, T]`, per prior scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecouplingReport {
    pub scales: Vec<f64>,
    pub tr_sigma0: Vec<f64>,
    pub horizon: usize,
    pub n_replicates: usize,
    /// `(R(T) - R(T/2)) / (√T - √(T/2))`.
    pub late_slope: Vec<f64>,
    pub late_slope_half_width: Vec<f64>,
    /// `R(d)`.
    pub early_regret: Vec<f64>,
    pub early_half_width: Vec<f64>,
    /// Least-squares slope of `log R(d)` against `log √tr Σ0`; `None` with fewer than two scales.
    pub early_exponent: Option<f64>,
}

/// Late-window slope and early regret for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowEstimate {
    pub late_slope: MeanEstimate,
    pub early_regret: MeanEstimate,
}

pub fn window_estimate(config: &BanditConfig, horizon: usize, n_replicates: usize, base_seed: u64, execution: Execution) -> Result<WindowEstimate> {
    require_replicates(n_replicates)?;
    let d = config.d();
    if horizon < 4 * d {
        return Err(Error::param("horizon", format!("need T >= 4d = {}, got {horizon}", 4 * d)));
    }
    let half = horizon / 2;
    let marks = [d, half, horizon];
    let runs = map_indexed(n_replicates, execution, |rep| {
        let mut ep = Episode::new(config, Policy::Thompson, base_seed, rep as u64);
        sampled_cumulative(&marks, || ep.step().map(|o| o.pseudo_regret))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let denom = (horizon as f64).sqrt() - (half as f64).sqrt();
    let slopes: Vec<f64> = runs.iter().map(|r| (r[2] - r[1]) / denom).collect();
    let early: Vec<f64> = runs.iter().map(|r| r[0]).collect();
    Ok(WindowEstimate {
        late_slope: MeanEstimate::from_samples(&slopes),
        early_regret: MeanEstimate::from_samples(&early),
    })
}

/// Rescales `Σ0` by each factor in `scales` and measures both windows.
pub fn decoupling_experiment(
    base: &BanditConfig,
    scales: &[f64],
    horizon: usize,
    n_replicates: usize,
    base_seed: u64,
    execution: Execution,
) -> Result<DecouplingReport> {
    let mut report = DecouplingReport {
        scales: scales.to_vec(),
        tr_sigma0: Vec::with_capacity(scales.len()),
        horizon,
        n_replicates,
        late_slope: Vec::with_capacity(scales.len()),
        late_slope_half_width: Vec::with_capacity(scales.len()),
        early_regret: Vec::with_capacity(scales.len()),
        early_half_width: Vec::with_capacity(scales.len()),
        early_exponent: None,
    };
    for &s in scales {
        let cfg = base.with_prior_scale(s)?;
        let est = window_estimate(&cfg, horizon, n_replicates, base_seed, execution)?;
        report.tr_sigma0.push(cfg.prior().cov().trace());
        report.late_slope.push(est.late_slope.mean);
        report.late_slope_half_width.push(est.late_slope.half_width);
        report.early_regret.push(est.early_regret.mean);
        report.early_half_width.push(est.early_regret.half_width);
    }
    if report.early_regret.iter().all(|&e| e > 0.0) {
        let x: Vec<f64> = report.tr_sigma0.iter().map(|t| 0.5 * t.ln()).collect();
        let y: Vec<f64> = report.early_regret.iter().map(|e| e.ln()).collect();
        report.early_exponent = ols_slope(&x, &y);
    }
    Ok(report)
}
