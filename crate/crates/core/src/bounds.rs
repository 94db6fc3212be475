//! Closed-form regret bounds and the constants they depend on.
//!
//! All logarithms are natural. Horizons are step counts `T >= 1` unless stated otherwise.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

use crate::linalg::{fractional_power, SpdMatrix};
use crate::{Error, Result};

/// Default numerical constant for the strongly log-concave bound. Not a derived value.
pub const DEFAULT_THEOREM3_C: f64 = 3.0;

/// Default constant for the scaled-identity lower-bound corollary, the leading coefficient
/// of the exact lower-bound sum `Σ (i-1) = d(d-1)/2` divided by `π`.
pub const DEFAULT_COROLLARY_C: f64 = 1.0 / (2.0 * PI);

/// Smallest uniform constant for which the log-concave bound dominates the Gaussian upper
/// bound term by term: the ratio of the two `C1` definitions never exceeds `√24`, and the
/// burn-in term carries an extra factor 3.
pub const GAUSSIAN_EQUIVALENT_C: f64 = 14.696_938_456_699_067;

fn check_horizon(t: usize) -> Result<()> {
    if t == 0 {
        Err(Error::InvalidHorizon)
    } else {
        Ok(())
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 {
        Err(Error::param("d", "dimension must be positive"))
    } else {
        Ok(())
    }
}

fn check_scales(sigma: f64, r: f64) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param("sigma", format!("must be positive, got {sigma}")));
    }
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::param("r", format!("must be nonnegative, got {r}")));
    }
    Ok(())
}

fn check_cov(d: usize, sigma0: &SpdMatrix) -> Result<()> {
    if sigma0.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: sigma0.dim(),
        });
    }
    Ok(())
}

/// `C1(d, T) = sqrt(1 + max{24 log T / d, sqrt(24 log T / d)})`.
pub fn c1(d: usize, t: usize) -> Result<f64> {
    check_dim(d)?;
    check_horizon(t)?;
    let x = 24.0 * (t as f64).ln() / d as f64;
    Ok((1.0 + x.max(x.sqrt())).sqrt())
}

/// `C2 = C1 · sqrt(2 log(1 + r² ‖Σ0‖ T / (d σ²)))`.
pub fn c2(d: usize, t: usize, sigma: f64, r: f64, sigma0: &SpdMatrix) -> Result<f64> {
    check_scales(sigma, r)?;
    check_cov(d, sigma0)?;
    let inner = r * r * sigma0.max_eigenvalue() * t as f64 / (d as f64 * sigma * sigma);
    Ok(c1(d, t)? * (2.0 * inner.ln_1p()).sqrt())
}

/// Gaussian Thompson sampling upper bound:
/// `d σ √T C2 + 3 r √d tr(Σ0^{1/2}) C1 + sqrt(2 r² tr(Σ0))`.
pub fn theorem1_bound(d: usize, t: usize, sigma: f64, r: f64, sigma0: &SpdMatrix) -> Result<f64> {
    let c1v = c1(d, t)?;
    let c2v = c2(d, t, sigma, r, sigma0)?;
    let df = d as f64;
    let sqrt_trace = fractional_power(sigma0, 0.5)?.trace();
    Ok(df * sigma * (t as f64).sqrt() * c2v + 3.0 * r * df.sqrt() * sqrt_trace * c1v + (2.0 * r * r * sigma0.trace()).sqrt())
}

/// Deviation `s = max{24 log T, sqrt(24 d log T)}` used for `β`.
pub fn beta_deviation(d: usize, t: usize) -> Result<f64> {
    check_dim(d)?;
    check_horizon(t)?;
    let l = 24.0 * (t as f64).ln();
    Ok(l.max((l * d as f64).sqrt()))
}

/// `β = sqrt(d + max{24 log T, sqrt(24 d log T)})`.
pub fn compute_beta(d: usize, t: usize) -> Result<f64> {
    Ok((d as f64 + beta_deviation(d, t)?).sqrt())
}

/// Chi-square upper-tail bound `P[χ²_d - d >= s] <= max{exp(-s²/(8d)), exp(-s/8)}`.
pub fn chi_sq_tail(d: usize, s: f64) -> Result<f64> {
    check_dim(d)?;
    if !(s >= 0.0) {
        return Err(Error::param("s", format!("must be nonnegative, got {s}")));
    }
    Ok((-s * s / (8.0 * d as f64)).exp().max((-s / 8.0).exp()))
}

/// Upper summation index of the lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum LowerBoundRange {
    /// Sum to `min{T, d}`.
    #[default]
    Statement,
    /// Sum to `min{T, d - 1}`, the value reached at the end of the appendix derivation.
    Appendix,
}

/// Any-policy lower bound `(r / (π ‖τ‖₂)) Σ_{i=2}^{min{T,d}} (i-1) τ_i²` with
/// `τ²` the prior eigenvalues in descending order.
pub fn theorem2_bound(r: f64, tau_sq: &[f64], t: usize) -> Result<f64> {
    theorem2_bound_with(r, tau_sq, t, LowerBoundRange::Statement)
}

pub fn theorem2_bound_with(r: f64, tau_sq: &[f64], t: usize, range: LowerBoundRange) -> Result<f64> {
    if tau_sq.is_empty() {
        return Err(Error::param("tau_sq", "must be nonempty"));
    }
    if tau_sq.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::param("tau_sq", "entries must be nonnegative"));
    }
    if tau_sq.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::param("tau_sq", "must be sorted in descending order"));
    }
    let d = tau_sq.len();
    let top = match range {
        LowerBoundRange::Statement => t.min(d),
        LowerBoundRange::Appendix => t.min(d - 1),
    };
    let norm = tau_sq.iter().sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = (2..=top).map(|i| (i - 1) as f64 * tau_sq[i - 1]).sum();
    Ok(r / (PI * norm) * sum)
}

/// Prior eigenvalues in descending order, as the lower bound expects.
pub fn descending_eigenvalues(sigma0: &SpdMatrix) -> Vec<f64> {
    sigma0.spectral().eigenvalues.iter().map(|x| x.max(0.0)).collect()
}

/// `c · S r d^{-1/2} min{T, d}²` for `Σ0 = S² I_d`.
pub fn identity_corollary_bound(s: f64, r: f64, d: usize, t: usize, c: f64) -> f64 {
    let m = t.min(d) as f64;
    c * s * r * m * m / (d as f64).sqrt()
}

/// Eigenvalues `i^{2α}` for `i = 1..=d`, descending. The index starts at 1 so the
/// smallest eigenvalue is 1 and the prior stays nonsingular.
pub fn polynomial_eigenvalues(d: usize, alpha: f64) -> Vec<f64> {
    (1..=d).rev().map(|i| (i as f64).powf(2.0 * alpha)).collect()
}

/// `c · (r / sqrt(tr Σ0)) · d · tr Σ0` for polynomially scaling priors and `T >= d`.
pub fn polynomial_corollary_bound(r: f64, sigma0: &SpdMatrix, c: f64) -> f64 {
    let tr = sigma0.trace();
    c * r / tr.sqrt() * sigma0.dim() as f64 * tr
}

/// `E‖Z‖` for `Z ~ N(0, I_d)`: `sqrt(2) Γ((d+1)/2) / Γ(d/2)`.
pub fn expected_gaussian_norm(d: usize) -> f64 {
    let d = d as f64;
    2f64.sqrt() * (ln_gamma((d + 1.0) / 2.0) - ln_gamma(d / 2.0)).exp()
}

/// Zero-noise comparison bound `(S/√d) Σ_{t=1}^{T} (E‖Z‖ - sqrt(t-1))_+`.
pub fn zhang_bound(s: f64, d: usize, t: usize) -> Result<f64> {
    check_dim(d)?;
    if !(s >= 0.0) {
        return Err(Error::param("S", format!("must be nonnegative, got {s}")));
    }
    let mean_norm = expected_gaussian_norm(d);
    let sum: f64 = (1..=t).map(|k| (mean_norm - ((k - 1) as f64).sqrt()).max(0.0)).sum();
    Ok(s / (d as f64).sqrt() * sum)
}

/// `C1(d, T) = sqrt(1 + log T / d)` of the strongly log-concave bound.
pub fn c1_log_concave(d: usize, t: usize) -> Result<f64> {
    check_dim(d)?;
    check_horizon(t)?;
    Ok((1.0 + (t as f64).ln() / d as f64).sqrt())
}

/// `C2 = C1 · sqrt(log(1 + T r² ‖Σ0‖ / (d σ²)))` of the strongly log-concave bound.
pub fn c2_log_concave(d: usize, t: usize, sigma: f64, r: f64, sigma0: &SpdMatrix) -> Result<f64> {
    check_scales(sigma, r)?;
    check_cov(d, sigma0)?;
    let inner = t as f64 * r * r * sigma0.max_eigenvalue() / (d as f64 * sigma * sigma);
    Ok(c1_log_concave(d, t)? * inner.ln_1p().sqrt())
}

/// `C · [d σ √T C2 + r √d tr(Σ0^{1/2}) C1 + sqrt(tr Σ0) r]` with caller-supplied `C`.
pub fn theorem3_bound(d: usize, t: usize, sigma: f64, r: f64, sigma0: &SpdMatrix, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::param("C", format!("must be positive, got {c}")));
    }
    let c1v = c1_log_concave(d, t)?;
    let c2v = c2_log_concave(d, t, sigma, r, sigma0)?;
    let df = d as f64;
    let sqrt_trace = fractional_power(sigma0, 0.5)?.trace();
    Ok(c * (df * sigma * (t as f64).sqrt() * c2v + r * df.sqrt() * sqrt_trace * c1v + sigma0.trace().sqrt() * r))
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Theorem3Terms {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub value: f64,
}

/// All bound values for one configuration.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BoundReport {
    pub d: usize,
    pub horizon: usize,
    pub sigma: f64,
    pub r: f64,
    pub tr_sigma0: f64,
    pub c1: f64,
    pub c2: f64,
    pub beta: f64,
    pub upper_theorem1: f64,
    pub lower_theorem2: f64,
    pub lower_theorem2_appendix: f64,
    pub lower_zhang: Option<f64>,
    pub theorem3_terms: Option<Theorem3Terms>,
}

impl BoundReport {
    /// `theorem3_c` adds the log-concave bound when given. The zero-noise comparison bound
    /// is filled in only for `Σ0 ∝ I` and `r = 1`, the setting where it applies.
    pub fn evaluate(d: usize, t: usize, sigma: f64, r: f64, sigma0: &SpdMatrix, theorem3_c: Option<f64>) -> Result<Self> {
        let tau_sq = descending_eigenvalues(sigma0);
        let isotropic = tau_sq.first().zip(tau_sq.last()).is_some_and(|(a, b)| (a - b).abs() <= 1e-12 * a.abs());
        let lower_zhang = if isotropic && r == 1.0 {
            Some(zhang_bound(sigma0.trace().sqrt(), d, t)?)
        } else {
            None
        };
        let theorem3_terms = match theorem3_c {
            Some(c) => Some(Theorem3Terms {
                c,
                c1: c1_log_concave(d, t)?,
                c2: c2_log_concave(d, t, sigma, r, sigma0)?,
                value: theorem3_bound(d, t, sigma, r, sigma0, c)?,
            }),
            None => None,
        };
        Ok(BoundReport {
            d,
            horizon: t,
            sigma,
            r,
            tr_sigma0: sigma0.trace(),
            c1: c1(d, t)?,
            c2: c2(d, t, sigma, r, sigma0)?,
            beta: compute_beta(d, t)?,
            upper_theorem1: theorem1_bound(d, t, sigma, r, sigma0)?,
            lower_theorem2: theorem2_bound(r, &tau_sq, t)?,
            lower_theorem2_appendix: theorem2_bound_with(r, &tau_sq, t, LowerBoundRange::Appendix)?,
            lower_zhang,
            theorem3_terms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_rotation, spd_from_eigenvalues};
    use crate::rng::{stream, StreamRole};
    use approx::assert_relative_eq;
    use rand::Rng;
    use std::f64::consts::E;

    // log T = 1 needs a non-integer horizon, so this evaluates the formula at a given log.
    fn c1_at_log(d: f64, log_t: f64) -> f64 {
        let x = 24.0 * log_t / d;
        (1.0 + x.max(x.sqrt())).sqrt()
    }

    #[test]
    fn c1_examples() {
        assert_eq!(c1(5, 1).unwrap(), 1.0);
        assert_relative_eq!(c1_at_log(24.0, E.ln()), 2f64.sqrt(), epsilon = 1e-14);
        assert!(matches!(c1(3, 0), Err(Error::InvalidHorizon)));
        for d in [1, 2, 5, 10, 64] {
            let vals: Vec<f64> = (1..=4096).map(|t| c1(d, t).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn c2_examples() {
        let one = SpdMatrix::identity(1);
        assert_eq!(c2(1, 10, 1.0, 0.0, &one).unwrap(), 0.0);
        assert_relative_eq!(c2(1, 1, 1.0, 1.0, &one).unwrap(), 1.177_410_022_515_474_7, epsilon = 1e-12);
        assert!(c2(1, 1, 0.0, 1.0, &one).is_err());
        // exp((C2/C1)²/2) - 1 is linear in the prior scale.
        let (d, t, s, r) = (3, 50, 0.7, 1.3);
        let base = SpdMatrix::from_diagonal(&[2.0, 1.0, 0.5]).unwrap();
        let inner = |m: &SpdMatrix| ((c2(d, t, s, r, m).unwrap() / c1(d, t).unwrap()).powi(2) / 2.0).exp_m1();
        for c in [0.1, 3.0, 17.0] {
            assert_relative_eq!(inner(&base.scale(c).unwrap()), c * inner(&base), max_relative = 1e-10);
        }
    }

    #[test]
    fn theorem1_examples() {
        let one = SpdMatrix::identity(1);
        assert_eq!(theorem1_bound(1, 7, 1.0, 0.0, &one).unwrap(), 0.0);
        let expected = (2.0 * 2f64.ln()).sqrt() + 3.0 + 2f64.sqrt();
        assert_relative_eq!(theorem1_bound(1, 1, 1.0, 1.0, &one).unwrap(), expected, epsilon = 1e-12);
        assert_relative_eq!(expected, 5.591_62, epsilon = 1e-5);
    }

    #[test]
    fn trace_cauchy_schwarz_on_random_priors() {
        let mut rng = stream(21, 0, StreamRole::Auxiliary);
        for _ in 0..1000 {
            let d = rng.random_range(1..=10);
            let evals: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
            let q = random_rotation(d, &mut rng);
            let m = spd_from_eigenvalues(&evals, Some(&q)).unwrap();
            let lhs = fractional_power(&m, 0.5).unwrap().trace();
            assert!(lhs <= (d as f64 * m.trace()).sqrt() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn beta_examples_and_tail_grid() {
        assert_relative_eq!(compute_beta(7, 1).unwrap(), 7f64.sqrt());
        // d = 4, log T = 1: sqrt(4 + max{24, sqrt(96)}) = sqrt(28)
        let s = 24f64.max((24.0 * 4.0f64).sqrt());
        assert_relative_eq!((4.0 + s).sqrt(), 28f64.sqrt());
        assert_relative_eq!(28f64.sqrt(), 5.291_50, epsilon = 1e-5);
        for d in 1..=64 {
            for t in [1, 2, 3, 5, 10, 32, 100, 1000, 2048, 10_000] {
                let tail = chi_sq_tail(d, beta_deviation(d, t).unwrap()).unwrap();
                assert!(tail <= (t as f64).powi(-3) * (1.0 + 1e-12), "d={d} t={t}");
            }
        }
    }

    #[test]
    fn chi_sq_tail_examples() {
        assert_eq!(chi_sq_tail(3, 0.0).unwrap(), 1.0);
        assert_relative_eq!(chi_sq_tail(2, 8.0).unwrap(), (-1f64).exp(), epsilon = 1e-15);
        assert!(chi_sq_tail(2, -1.0).is_err());
    }

    #[test]
    fn chi_sq_tail_dominates_exact_tail() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for d in 1..=64 {
            let chi = ChiSquared::new(d as f64).unwrap();
            for s in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0] {
                let exact = chi.sf(d as f64 + s);
                assert!(chi_sq_tail(d, s).unwrap() >= exact, "d={d} s={s}");
            }
        }
    }

    #[test]
    fn theorem2_examples() {
        assert_eq!(theorem2_bound(1.0, &[1.0, 1.0, 1.0], 1).unwrap(), 0.0);
        for t in [3, 4, 100] {
            assert_relative_eq!(theorem2_bound(1.0, &[1.0, 1.0, 1.0], t).unwrap(), 3f64.sqrt() / PI, epsilon = 1e-12);
        }
        assert_relative_eq!(
            theorem2_bound_with(1.0, &[1.0, 1.0, 1.0], 3, LowerBoundRange::Appendix).unwrap(),
            1.0 / (PI * 3f64.sqrt()),
            epsilon = 1e-12
        );
        assert!(theorem2_bound(1.0, &[], 3).is_err());
        assert!(theorem2_bound(1.0, &[1.0, 2.0], 3).is_err());
        // Σ0 = S² I, T >= d: r S d(d-1) / (2π √d)
        let (s, r) = (1.7, 0.8);
        for d in [2usize, 5, 10, 40] {
            let got = theorem2_bound(r, &vec![s * s; d], d + 3).unwrap();
            let df = d as f64;
            assert_relative_eq!(got, r * s * df * (df - 1.0) / (2.0 * PI * df.sqrt()), max_relative = 1e-12);
            assert!(got <= identity_corollary_bound(s, r, d, d + 3, DEFAULT_COROLLARY_C));
        }
    }

    #[test]
    fn gaussian_norm_mean() {
        assert_relative_eq!(expected_gaussian_norm(1), (2.0 / PI).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(expected_gaussian_norm(2), (PI / 2.0).sqrt(), epsilon = 1e-13);
        for d in 1..=128 {
            let m = expected_gaussian_norm(d);
            // Equality at d = 1, so allow one rounding step.
            assert!(m >= (2.0 * d as f64 / PI).sqrt() * (1.0 - 1e-14));
            assert!(m <= (d as f64).sqrt());
        }
    }

    #[test]
    fn zhang_examples() {
        assert_relative_eq!(zhang_bound(1.0, 1, 1).unwrap(), (2.0 / PI).sqrt(), epsilon = 1e-14);
        assert_eq!(zhang_bound(0.0, 5, 10).unwrap(), 0.0);
    }

    #[test]
    fn theorem3_examples() {
        let one = SpdMatrix::identity(1);
        assert_eq!(theorem3_bound(1, 9, 1.0, 0.0, &one, 3.0).unwrap(), 0.0);
        assert_eq!(c1_log_concave(1, 1).unwrap(), 1.0);
        assert!(theorem3_bound(1, 9, 1.0, 1.0, &one, 0.0).is_err());
    }

    #[test]
    fn theorem3_with_gaussian_constant_dominates_theorem1() {
        assert_relative_eq!(GAUSSIAN_EQUIVALENT_C, 3.0 * 24f64.sqrt(), epsilon = 1e-12);
        for d in [1, 2, 5, 10, 32] {
            for t in [1, 2, 10, 100, 2048, 100_000] {
                for sigma in [0.1, 0.5, 1.0, 4.0] {
                    for r in [0.5, 1.0, 3.0] {
                        for scale in [0.01, 1.0, 16.0] {
                            let m = SpdMatrix::scaled_identity(d, scale).unwrap();
                            let t1 = theorem1_bound(d, t, sigma, r, &m).unwrap();
                            let t3 = theorem3_bound(d, t, sigma, r, &m, GAUSSIAN_EQUIVALENT_C).unwrap();
                            assert!(t3 >= t1 / 2f64.sqrt(), "d={d} t={t}");
                            assert!(t3 >= t1 * (1.0 - 1e-12));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn monotonicity_on_grid() {
        for d in [1, 3, 8] {
            let m = SpdMatrix::from_diagonal(&polynomial_eigenvalues(d, 1.0)).unwrap();
            let mut prev = (0.0, 0.0, 0.0);
            for t in 1..=512 {
                let cur = (c1(d, t).unwrap(), c2(d, t, 1.0, 1.0, &m).unwrap(), compute_beta(d, t).unwrap());
                assert!(cur.0 >= prev.0 && cur.1 >= prev.1 && cur.2 >= prev.2);
                prev = cur;
            }
            let base = theorem1_bound(d, 100, 1.0, 1.0, &m).unwrap();
            assert!(theorem1_bound(d, 100, 1.5, 1.0, &m).unwrap() >= base);
            assert!(theorem1_bound(d, 100, 1.0, 1.5, &m).unwrap() >= base);
            for i in 0..d {
                let mut ev = polynomial_eigenvalues(d, 1.0);
                ev[i] *= 1.5;
                let bumped = SpdMatrix::from_diagonal(&ev).unwrap();
                assert!(theorem1_bound(d, 100, 1.0, 1.0, &bumped).unwrap() >= base);
            }
        }
    }

    #[test]
    fn polynomial_eigenvalues_start_at_one() {
        assert_eq!(polynomial_eigenvalues(3, 1.0), vec![9.0, 4.0, 1.0]);
        assert_eq!(polynomial_eigenvalues(4, 0.0), vec![1.0; 4]);
    }

    #[test]
    fn report_is_consistent() {
        let m = SpdMatrix::identity(3);
        let rep = BoundReport::evaluate(3, 64, 1.0, 1.0, &m, Some(DEFAULT_THEOREM3_C)).unwrap();
        assert!(rep.c1 >= 1.0);
        assert!(rep.lower_theorem2 <= rep.upper_theorem1);
        assert!(rep.lower_theorem2_appendix <= rep.lower_theorem2);
        assert!(rep.lower_zhang.is_some());
        assert!(rep.theorem3_terms.is_some());
    }
}
