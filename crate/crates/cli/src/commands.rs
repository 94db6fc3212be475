//! One function per subcommand. Each writes `results.csv` and `report.json` (plus `plot.svg`
//! on request) and returns the named checks it evaluated.

use std::path::PathBuf;

use serde::Serialize;
use serde_json::{json, Value};
use tslab_core::bandit::Policy;
use tslab_core::bounds::{
    descending_eigenvalues, identity_corollary_bound, theorem2_bound, theorem2_bound_with, theorem3_bound, zhang_bound, BoundReport, LowerBoundRange,
};
use tslab_core::elliptical::fuzz_lemma;
use tslab_core::logconcave::{lc_regret_curve, GaussianDensity, LcConfig, MalaSettings, NoiseModel, PriorModel};
use tslab_core::parallel::Execution;
use tslab_core::regret_lab::{bayes_regret_curve_with, bound_envelope, decoupling_experiment, horizon_grid, RegretCurve};

use crate::config::{ExperimentConfig, NoiseKind};
use crate::output::{emit_csv, emit_json, render_svg, Cell, Series};
use crate::{CliError, PolicyArg};

/// Mean regret may exceed an upper bound or undershoot a lower bound by this many half-widths.
const CI_SLACK: f64 = 3.0;

pub struct Context {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub plot: bool,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<(String, bool)>,
}

impl Outcome {
    fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.push((name.into(), ok));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }

    fn to_json(&self) -> Value {
        Value::Object(self.checks.iter().map(|(k, v)| (k.clone(), Value::Bool(*v))).collect())
    }
}

const REGRET_SCHEMA: [&str; 10] = [
    "config_hash",
    "d",
    "r",
    "sigma",
    "tr_sigma0",
    "T",
    "mean_regret",
    "ci_half_width",
    "bound_upper",
    "bound_lower",
];

impl Context {
    fn write_report(&self, command: &str, results: impl Serialize, outcome: &Outcome, warnings: &[String]) -> Result<(), CliError> {
        let results = serde_json::to_value(results).map_err(|e| CliError::Schema(e.to_string()))?;
        let config = serde_json::to_value(&self.cfg).map_err(|e| CliError::Schema(e.to_string()))?;
        let report = json!({
            "command": command,
            "config_hash": self.cfg.config_hash(),
            "config": config,
            "results": results,
            "checks": outcome.to_json(),
            "passed": outcome.passed(),
            "warnings": warnings,
        });
        emit_json(&report, &self.out.join("report.json"))
    }

    fn write_csv(&self, schema: &[&str], rows: &[Vec<Cell>]) -> Result<(), CliError> {
        emit_csv(schema, rows, &self.out.join("results.csv"))
    }

    fn write_plot(&self, title: &str, series: &[Series<'_>]) -> Result<(), CliError> {
        if !self.plot {
            return Ok(());
        }
        let path = self.out.join("plot.svg");
        std::fs::write(&path, render_svg(title, series)).map_err(|e| CliError::io(&path, e))
    }

    fn prior_mean_warnings(&self) -> Vec<String> {
        if self.cfg.has_prior_mean() {
            let msg = "prior_mean is nonzero; the bounds assume a centered prior, so bound checks are skipped".to_owned();
            eprintln!("warning: {msg}");
            vec![msg]
        } else {
            Vec::new()
        }
    }

    fn regret_rows(&self, curve: &RegretCurve, tr_sigma0: f64, bounds: &[(f64, f64)]) -> Vec<Vec<Cell>> {
        let hash = self.cfg.config_hash();
        curve
            .horizons
            .iter()
            .enumerate()
            .map(|(k, &h)| {
                vec![
                    Cell::from(hash.as_str()),
                    self.cfg.d.into(),
                    self.cfg.r.into(),
                    self.cfg.sigma.into(),
                    tr_sigma0.into(),
                    h.into(),
                    curve.mean_regret[k].into(),
                    curve.half_width[k].into(),
                    bounds[k].0.into(),
                    bounds[k].1.into(),
                ]
            })
            .collect()
    }

    fn regret_plot(&self, title: &str, curve: &RegretCurve, bounds: &[(f64, f64)]) -> Result<(), CliError> {
        let xs = curve.horizons.iter().map(|&h| h as f64);
        self.write_plot(
            title,
            &[
                Series {
                    name: "mean regret",
                    color: "black",
                    points: xs.clone().zip(curve.mean_regret.iter().copied()).collect(),
                },
                Series {
                    name: "upper bound",
                    color: "firebrick",
                    points: xs.clone().zip(bounds.iter().map(|b| b.0)).collect(),
                },
                Series {
                    name: "lower bound",
                    color: "steelblue",
                    points: xs.zip(bounds.iter().map(|b| b.1)).collect(),
                },
            ],
        )
    }
}

/// Adds a per-horizon sandwich check `lower - 3 hw <= mean <= upper + 3 hw`.
fn sandwich_checks(outcome: &mut Outcome, curve: &RegretCurve, bounds: &[(f64, f64)]) {
    let mut upper_ok = true;
    let mut lower_ok = true;
    for (k, &(upper, lower)) in bounds.iter().enumerate() {
        let (m, hw) = (curve.mean_regret[k], curve.half_width[k]);
        upper_ok &= m - CI_SLACK * hw <= upper;
        lower_ok &= m + CI_SLACK * hw >= lower;
    }
    outcome.check("regret_below_upper_bound", upper_ok);
    outcome.check("regret_above_lower_bound", lower_ok);
}

pub fn simulate(ctx: &Context, policy: PolicyArg) -> Result<Outcome, CliError> {
    let cfg = &ctx.cfg;
    let bandit = cfg.bandit()?;
    let policy = match policy {
        PolicyArg::Thompson => Policy::Thompson,
        PolicyArg::Uniform => Policy::UniformRandom,
    };
    let curve = bayes_regret_curve_with(&bandit, cfg.horizon, cfg.replicates, cfg.seed, Execution::default(), policy)?;
    let bounds: Vec<(f64, f64)> = bound_envelope(&bandit, &curve.horizons)?.iter().map(|e| (e.upper, e.lower)).collect();
    let warnings = ctx.prior_mean_warnings();
    let mut outcome = Outcome::default();
    if warnings.is_empty() && policy == Policy::Thompson {
        sandwich_checks(&mut outcome, &curve, &bounds);
    }
    ctx.write_csv(&REGRET_SCHEMA, &ctx.regret_rows(&curve, bandit.prior().cov().trace(), &bounds))?;
    ctx.write_report("simulate", &curve, &outcome, &warnings)?;
    ctx.regret_plot("Bayesian regret", &curve, &bounds)?;
    Ok(outcome)
}

pub fn bounds(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.cfg;
    let sigma0 = cfg.prior_cov()?;
    let report = BoundReport::evaluate(cfg.d, cfg.horizon, cfg.sigma, cfg.r, &sigma0, Some(cfg.theorem3_c))?;
    let schema = [
        "config_hash",
        "d",
        "r",
        "sigma",
        "tr_sigma0",
        "T",
        "c1",
        "c2",
        "beta",
        "upper_theorem1",
        "lower_theorem2",
        "lower_theorem2_appendix",
        "upper_theorem3",
    ];
    let hash = cfg.config_hash();
    let mut rows = Vec::new();
    let mut ordered = true;
    for h in horizon_grid(cfg.horizon).into_iter().filter(|&h| h > 0) {
        let r = BoundReport::evaluate(cfg.d, h, cfg.sigma, cfg.r, &sigma0, Some(cfg.theorem3_c))?;
        ordered &= r.lower_theorem2 <= r.upper_theorem1;
        rows.push(vec![
            Cell::from(hash.as_str()),
            cfg.d.into(),
            cfg.r.into(),
            cfg.sigma.into(),
            r.tr_sigma0.into(),
            h.into(),
            r.c1.into(),
            r.c2.into(),
            r.beta.into(),
            r.upper_theorem1.into(),
            r.lower_theorem2.into(),
            r.lower_theorem2_appendix.into(),
            r.theorem3_terms.as_ref().map(|t| t.value).into(),
        ]);
    }
    let mut outcome = Outcome::default();
    outcome.check("lower_below_upper", ordered);
    let warnings = ctx.prior_mean_warnings();
    ctx.write_csv(&schema, &rows)?;
    ctx.write_report("bounds", &report, &outcome, &warnings)?;
    let pts = |col: usize| -> Vec<(f64, f64)> {
        rows.iter()
            .map(|row| match (&row[5], &row[col]) {
                (Cell::Int(h), Cell::Float(v)) => (*h as f64, *v),
                _ => (f64::NAN, f64::NAN),
            })
            .collect()
    };
    ctx.write_plot(
        "Regret bounds",
        &[
            Series {
                name: "upper",
                color: "firebrick",
                points: pts(9),
            },
            Series {
                name: "lower",
                color: "steelblue",
                points: pts(10),
            },
        ],
    )?;
    Ok(outcome)
}

pub fn elliptical_check(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.cfg;
    let report = fuzz_lemma(cfg.instances, cfg.seed, Execution::default())?;
    let schema = [
        "config_hash",
        "instances",
        "violations",
        "worst_margin",
        "worst_instance_seed",
        "classic_checked",
        "classic_violations",
    ];
    let rows: Vec<Vec<Cell>> = if report.instances > 0 {
        vec![vec![
            Cell::from(cfg.config_hash()),
            report.instances.into(),
            report.violations.into(),
            report.worst_margin.into(),
            report.worst_instance_seed.map_or(Cell::Empty, Cell::Int),
            report.classic_checked.into(),
            report.classic_violations.into(),
        ]]
    } else {
        Vec::new()
    };
    let mut outcome = Outcome::default();
    outcome.check("no_violations", report.violations == 0 && report.classic_violations == 0);
    ctx.write_csv(&schema, &rows)?;
    ctx.write_report("elliptical-check", &report, &outcome, &[])?;
    ctx.write_plot("Elliptical potential fuzz", &[])?;
    Ok(outcome)
}

pub fn lowerbound(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.cfg;
    let bandit = cfg.bandit()?;
    let sigma0 = bandit.prior().cov();
    let tau_sq = descending_eigenvalues(sigma0);
    let isotropic = (tau_sq[0] - tau_sq[tau_sq.len() - 1]).abs() <= 1e-12 * tau_sq[0];
    let curve = bayes_regret_curve_with(&bandit, cfg.horizon, cfg.replicates, cfg.seed, Execution::default(), Policy::Thompson)?;
    let schema = [
        "config_hash",
        "d",
        "r",
        "sigma",
        "tr_sigma0",
        "T",
        "mean_regret",
        "ci_half_width",
        "lower_theorem2",
        "lower_theorem2_appendix",
        "lower_corollary",
        "lower_zhang",
    ];
    let hash = cfg.config_hash();
    let warnings = ctx.prior_mean_warnings();
    let mut rows = Vec::new();
    let mut lower_ok = true;
    let mut bounds = Vec::new();
    for (k, &h) in curve.horizons.iter().enumerate() {
        let (t2, t2a) = if h == 0 {
            (0.0, 0.0)
        } else {
            (
                theorem2_bound(cfg.r, &tau_sq, h)?,
                theorem2_bound_with(cfg.r, &tau_sq, h, LowerBoundRange::Appendix)?,
            )
        };
        let corollary = isotropic.then(|| identity_corollary_bound(tau_sq[0].sqrt(), cfg.r, cfg.d, h, tslab_core::bounds::DEFAULT_COROLLARY_C));
        let zhang = if isotropic && cfg.r == 1.0 {
            Some(zhang_bound(sigma0.trace().sqrt(), cfg.d, h)?)
        } else {
            None
        };
        lower_ok &= curve.mean_regret[k] + CI_SLACK * curve.half_width[k] >= t2;
        bounds.push((f64::NAN, t2));
        rows.push(vec![
            Cell::from(hash.as_str()),
            cfg.d.into(),
            cfg.r.into(),
            cfg.sigma.into(),
            sigma0.trace().into(),
            h.into(),
            curve.mean_regret[k].into(),
            curve.half_width[k].into(),
            t2.into(),
            t2a.into(),
            corollary.into(),
            zhang.into(),
        ]);
    }
    let mut outcome = Outcome::default();
    if warnings.is_empty() {
        outcome.check("regret_above_lower_bound", lower_ok);
    }
    ctx.write_csv(&schema, &rows)?;
    ctx.write_report("lowerbound", &curve, &outcome, &warnings)?;
    ctx.regret_plot("Regret and lower bound", &curve, &bounds)?;
    Ok(outcome)
}

pub fn logconcave(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.cfg;
    let sigma0 = cfg.prior_cov()?;
    let prior = PriorModel::Gaussian(GaussianDensity::new(cfg.mean_vector()?, &sigma0)?);
    let noise = match cfg.noise {
        NoiseKind::Gauss => NoiseModel::Gaussian { sigma: cfg.sigma },
        NoiseKind::SmoothedLaplace => NoiseModel::SmoothedLaplace {
            sigma: cfg.sigma,
            weight: cfg.noise_weight,
            eps: cfg.noise_eps,
        },
    };
    let lc = LcConfig::new(cfg.r, prior, noise)?;
    let settings = MalaSettings {
        n_steps: cfg.mala_steps,
        step_size: cfg.mala_step_size,
    };
    let curve = lc_regret_curve(&lc, cfg.horizon, settings, cfg.replicates, cfg.seed, Execution::default())?;
    let tau_sq = descending_eigenvalues(&sigma0);
    let bounds: Vec<(f64, f64)> = curve
        .horizons
        .iter()
        .map(|&h| {
            if h == 0 {
                return Ok((0.0, 0.0));
            }
            Ok((
                theorem3_bound(cfg.d, h, cfg.sigma, cfg.r, &sigma0, cfg.theorem3_c)?,
                theorem2_bound(cfg.r, &tau_sq, h)?,
            ))
        })
        .collect::<Result<_, tslab_core::Error>>()?;
    let warnings = ctx.prior_mean_warnings();
    let mut outcome = Outcome::default();
    if warnings.is_empty() {
        let mut upper_ok = true;
        for (k, &(upper, _)) in bounds.iter().enumerate() {
            upper_ok &= curve.mean_regret[k] - CI_SLACK * curve.half_width[k] <= upper;
        }
        outcome.check("regret_below_calibrated_upper_bound", upper_ok);
    }
    ctx.write_csv(&REGRET_SCHEMA, &ctx.regret_rows(&curve, sigma0.trace(), &bounds))?;
    let results = json!({
        "curve": curve,
        "theorem3_c": cfg.theorem3_c,
        "theorem3_c_calibrated": true,
        "mala": settings,
        "noise": cfg.noise,
    });
    ctx.write_report("logconcave", &results, &outcome, &warnings)?;
    ctx.regret_plot("Regret under log-concave noise", &curve, &bounds)?;
    Ok(outcome)
}

pub fn decouple(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = &ctx.cfg;
    if cfg.scales.is_empty() {
        return Err(CliError::Config("scales must list at least one factor".into()));
    }
    let bandit = cfg.bandit()?;
    let report = decoupling_experiment(&bandit, &cfg.scales, cfg.horizon, cfg.replicates, cfg.seed, Execution::default())?;
    let schema = [
        "config_hash",
        "scale",
        "tr_sigma0",
        "T",
        "late_slope",
        "late_slope_ci",
        "early_regret",
        "early_regret_ci",
    ];
    let hash = cfg.config_hash();
    let rows: Vec<Vec<Cell>> = (0..report.scales.len())
        .map(|i| {
            vec![
                Cell::from(hash.as_str()),
                report.scales[i].into(),
                report.tr_sigma0[i].into(),
                report.horizon.into(),
                report.late_slope[i].into(),
                report.late_slope_half_width[i].into(),
                report.early_regret[i].into(),
                report.early_half_width[i].into(),
            ]
        })
        .collect();
    let mut outcome = Outcome::default();
    let (lo, hi) = extreme_indices(&report.scales);
    if report.scales[hi] >= 16.0 * report.scales[lo] {
        let slope_change = (report.late_slope[hi] - report.late_slope[lo]).abs() / report.late_slope[lo];
        let early_ratio = report.early_regret[hi] / report.early_regret[lo];
        outcome.check("late_slope_stable", slope_change < 0.25);
        outcome.check("early_regret_grows", (2.5..=6.5).contains(&early_ratio));
    }
    ctx.write_csv(&schema, &rows)?;
    ctx.write_report("decouple", &report, &outcome, &ctx.prior_mean_warnings())?;
    let xs: Vec<f64> = report.tr_sigma0.iter().map(|t| t.sqrt()).collect();
    ctx.write_plot(
        "Early regret and late slope against sqrt(tr Sigma0)",
        &[
            Series {
                name: "early regret",
                color: "firebrick",
                points: xs.iter().copied().zip(report.early_regret.iter().copied()).collect(),
            },
            Series {
                name: "late slope",
                color: "black",
                points: xs.iter().copied().zip(report.late_slope.iter().copied()).collect(),
            },
        ],
    )?;
    Ok(outcome)
}

fn extreme_indices(xs: &[f64]) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[lo] {
            lo = i;
        }
        if x > xs[hi] {
            hi = i;
        }
    }
    (lo, hi)
}
