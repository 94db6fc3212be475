//! Elliptical potential sums `Σ ‖u_t‖^{2p}_{V_t⁻¹}` and their upper bounds.
//!
//! For `V_{t+1} = V_t + u_t u_tᵀ`, `‖u_t‖ <= 1` and `p ∈ (0, 1]`:
//!
//! ```text
//! Σ_t ‖u_t‖^{2p}_{V_t⁻¹} <= 2^p T^{1-p} (log det V_T / det V_0)^p + (3 / 2p) (tr V_0^{-p} - tr V_T^{-p})
//! ```
//!
//! with the `p = 0` case read as `log det V_T / det V_0`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::linalg::{check_dim, log_det_ratio, quad_form, random_rotation, spd_from_eigenvalues, InverseTracker, SpdMatrix, SpectralDecomposition};
use crate::parallel::{map_indexed, Execution};
use crate::rng::{stream, StreamRole};
use crate::{Error, Result};

const NORM_SLACK: f64 = 1e-12;

/// Relative tolerance used when counting fuzz violations.
pub const FUZZ_RTOL: f64 = 1e-8;

/// Exponents exercised by [`fuzz_lemma`].
pub const FUZZ_EXPONENTS: [f64; 6] = [0.05, 0.1, 0.25, 0.5, 0.75, 1.0];

/// `V_0` and the rank-one increments `u_0, ..., u_{T-1}`.
#[derive(Debug, Clone)]
pub struct PotentialSequence {
    v0: SpdMatrix,
    vectors: Vec<DVector<f64>>,
}

impl PotentialSequence {
    pub fn new(v0: SpdMatrix, vectors: Vec<DVector<f64>>) -> Result<Self> {
        let mut seq = PotentialSequence {
            v0,
            vectors: Vec::with_capacity(vectors.len()),
        };
        for u in vectors {
            seq.push(u)?;
        }
        Ok(seq)
    }

    pub fn push(&mut self, u: DVector<f64>) -> Result<()> {
        check_dim(self.v0.dim(), u.len())?;
        let norm = u.norm();
        if norm > 1.0 + NORM_SLACK {
            return Err(Error::PreconditionViolated(format!("increment norm {norm} exceeds 1")));
        }
        self.vectors.push(u);
        Ok(())
    }

    pub fn v0(&self) -> &SpdMatrix {
        &self.v0
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.v0.dim()
    }

    /// `Σ u_t u_tᵀ`.
    pub fn increment(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut acc = DMatrix::zeros(d, d);
        for u in &self.vectors {
            acc.ger(1.0, u, u, 1.0);
        }
        acc
    }

    /// `V_T = V_0 + Σ u_t u_tᵀ`.
    pub fn final_matrix(&self) -> SpdMatrix {
        SpdMatrix::from_symmetric(&(self.v0.as_matrix() + self.increment()))
    }

    /// `‖u_t‖²_{V_t⁻¹}` for every `t`.
    pub fn potentials(&self) -> Result<Vec<f64>> {
        ensure_definite(&self.v0)?;
        let mut tracker = InverseTracker::new(&self.v0)?;
        Ok(self.vectors.iter().map(|u| tracker.add_rank_one(u, 1.0)).collect())
    }

    /// `log det V_T - log det V_0`.
    pub fn log_det_ratio(&self) -> Result<f64> {
        ensure_definite(&self.v0)?;
        log_det_ratio(&self.v0, &self.increment())
    }
}

fn ensure_definite(m: &SpdMatrix) -> Result<()> {
    let min = m.min_eigenvalue();
    if min <= 0.0 {
        return Err(Error::SingularMatrix(format!("V0 has minimum eigenvalue {min:e}")));
    }
    Ok(())
}

fn check_exponent(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param("p", format!("must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn sum_powers(potentials: &[f64], p: f64) -> f64 {
    if p == 0.0 {
        potentials.len() as f64
    } else {
        potentials.iter().map(|q| q.max(0.0).powf(p)).sum()
    }
}

/// `Σ_t ‖u_t‖^{2p}_{V_t⁻¹}`.
pub fn lhs_potential(seq: &PotentialSequence, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(sum_powers(&seq.potentials()?, p))
}

/// The two terms of the generalized bound, kept apart so callers can see which one dominates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneralizedTerms {
    /// `2^p T^{1-p} (log det V_T / det V_0)^p`, or the log-det ratio itself at `p = 0`.
    pub log_det_term: f64,
    /// `(3 / 2p) (tr V_0^{-p} - tr V_T^{-p})`; zero at `p = 0`.
    pub trace_term: f64,
}

impl GeneralizedTerms {
    pub fn total(&self) -> f64 {
        self.log_det_term + self.trace_term
    }
}

/// `λ^{-p} - (λ + δ)^{-p}` without cancellation.
fn power_drop(lambda: f64, delta: f64, p: f64) -> f64 {
    -lambda.powf(-p) * (-p * (delta / lambda).ln_1p()).exp_m1()
}

/// `tr V^{-p} - tr (V + uuᵀ)^{-p}` for each exponent, from the rank-one eigenvalue shifts.
fn step_trace_drops(v: &DMatrix<f64>, u: &DVector<f64>, ps: &[f64]) -> Vec<f64> {
    let shifts = SpectralDecomposition::of(v).rank_one_shifts(u);
    ps.iter().map(|&p| shifts.iter().map(|&(l, delta)| power_drop(l, delta, p)).sum()).collect()
}

/// `tr V_0^{-p} - tr V_T^{-p}` for each exponent, accumulated step by step.
fn trace_drops(seq: &PotentialSequence, ps: &[f64]) -> Vec<f64> {
    let mut v = seq.v0.as_matrix().clone();
    let mut total = vec![0.0; ps.len()];
    for u in &seq.vectors {
        for (acc, drop) in total.iter_mut().zip(step_trace_drops(&v, u, ps)) {
            *acc += drop;
        }
        v += u * u.transpose();
    }
    total
}

fn generalized_terms(seq: &PotentialSequence, log_ratio: f64, trace_drop: f64, p: f64) -> GeneralizedTerms {
    if p == 0.0 {
        return GeneralizedTerms {
            log_det_term: log_ratio,
            trace_term: 0.0,
        };
    }
    let t = seq.len() as f64;
    let log_det_term = if seq.is_empty() {
        0.0
    } else {
        2f64.powf(p) * t.powf(1.0 - p) * log_ratio.max(0.0).powf(p)
    };
    GeneralizedTerms {
        log_det_term,
        trace_term: 1.5 / p * trace_drop,
    }
}

/// Both terms of the generalized bound.
pub fn rhs_generalized_terms(seq: &PotentialSequence, p: f64) -> Result<GeneralizedTerms> {
    check_exponent(p)?;
    let log_ratio = seq.log_det_ratio()?;
    let drop = if p == 0.0 { 0.0 } else { trace_drops(seq, &[p])[0] };
    Ok(generalized_terms(seq, log_ratio, drop, p))
}

/// Right-hand side of the generalized elliptical potential bound.
pub fn rhs_generalized(seq: &PotentialSequence, p: f64) -> Result<f64> {
    Ok(rhs_generalized_terms(seq, p)?.total())
}

/// `2 log det V_T / det V_0`, valid only when `V_0 ⪰ I`.
pub fn rhs_classic(seq: &PotentialSequence) -> Result<f64> {
    let min = seq.v0.min_eigenvalue();
    if min < 1.0 - NORM_SLACK {
        return Err(Error::HypothesisViolated(format!("classic bound needs V0 ⪰ I, λ_min = {min}")));
    }
    Ok(2.0 * seq.log_det_ratio()?)
}

/// Which side of the `‖u‖²_{V⁻¹} <= 2` split a single step falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// `‖u‖²_{V⁻¹} <= 2`: compared against `(2 log det(V + uuᵀ)/det V)^p`.
    Small,
    /// `‖u‖²_{V⁻¹} > 2`: compared against `(3/2p)(tr V^{-p} - tr (V + uuᵀ)^{-p})`.
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepCheck {
    pub branch: Branch,
    pub potential: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl StepCheck {
    pub fn holds(&self, rtol: f64) -> bool {
        self.lhs <= self.rhs + rtol * self.rhs.abs()
    }

    pub fn margin(&self) -> f64 {
        self.rhs - self.lhs
    }
}

/// Checks one step of the case split for `V` and the increment `u`.
pub fn per_step_case_check(v: &SpdMatrix, u: &DVector<f64>, p: f64) -> Result<StepCheck> {
    check_exponent(p)?;
    check_dim(v.dim(), u.len())?;
    ensure_definite(v)?;
    let vinv = v.inverse()?;
    let potential = quad_form(vinv.as_matrix(), u).max(0.0);
    let lhs = if p == 0.0 { 1.0 } else { potential.powf(p) };
    let increment = u * u.transpose();
    let log_ratio = log_det_ratio(v, &increment)?;
    if potential <= 2.0 {
        let rhs = if p == 0.0 { 1.0 } else { (2.0 * log_ratio).powf(p) };
        return Ok(StepCheck {
            branch: Branch::Small,
            potential,
            lhs,
            rhs,
        });
    }
    let rhs = if p == 0.0 {
        1.5 * log_ratio
    } else {
        1.5 / p * step_trace_drops(v.as_matrix(), u, &[p])[0]
    };
    Ok(StepCheck {
        branch: Branch::Large,
        potential,
        lhs,
        rhs,
    })
}

/// Returns `((2/3) ‖u‖^{2p}_{V⁻¹}, ‖u‖²_{V^{-1-p}} / (1 + ‖u‖²_{V⁻¹}))`; the first should not exceed the second.
pub fn holder_lemma_check(v: &SpdMatrix, u: &DVector<f64>, p: f64) -> Result<(f64, f64)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param("p", format!("must lie in (0, 1], got {p}")));
    }
    check_dim(v.dim(), u.len())?;
    ensure_definite(v)?;
    let norm = u.norm();
    if norm > 1.0 + NORM_SLACK {
        return Err(Error::PreconditionViolated(format!("‖u‖ = {norm} exceeds 1")));
    }
    let q = quad_form(v.inverse()?.as_matrix(), u);
    if q < 2.0 {
        return Err(Error::PreconditionViolated(format!("‖u‖²_(V⁻¹) = {q} is below 2")));
    }
    let q_shift = quad_form(v.power(-1.0 - p)?.as_matrix(), u);
    Ok((2.0 / 3.0 * q.powf(p), q_shift / (1.0 + q)))
}

/// `V_0 = diag(λ)`, `u_t = e_t`; the potential sum equals `tr V_0^{-p}` exactly.
pub fn tightness_instance(lams: &[f64]) -> Result<PotentialSequence> {
    let v0 = SpdMatrix::from_diagonal(lams)?;
    if let Some((i, &l)) = lams.iter().enumerate().find(|(_, &l)| !(l > 0.0)) {
        return Err(Error::InvalidEigenvalue { index: i, value: l });
    }
    let d = lams.len();
    let vectors = (0..d)
        .map(|t| {
            let mut e = DVector::zeros(d);
            e[t] = 1.0;
            e
        })
        .collect();
    PotentialSequence::new(v0, vectors)
}

/// Random instance used by [`fuzz_lemma`], reproducible from `(seed, index)`.
pub fn fuzz_instance(seed: u64, index: u64) -> PotentialSequence {
    let mut rng = stream(seed, index, StreamRole::Instance);
    let d = rng.random_range(1..=8usize);
    let t = rng.random_range(1..=200usize);
    let log_kappa = rng.random_range(0.0..=8.0);
    let offset = if rng.random_bool(0.25) { 0.0 } else { rng.random_range(-6.0..2.0) };
    let evals: Vec<f64> = (0..d)
        .map(|i| {
            let frac = match (i, d) {
                (_, 1) => 0.0,
                (0, _) => 1.0,
                (i, d) if i == d - 1 => 0.0,
                _ => rng.random_range(0.0..1.0),
            };
            10f64.powf(offset + log_kappa * frac)
        })
        .collect();
    let rotation = random_rotation(d, &mut rng);
    let v0 = spd_from_eigenvalues(&evals, Some(&rotation)).expect("positive eigenvalues");
    let weakest = rotation
        .column(evals.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(i, _)| i))
        .into_owned();
    let vectors = (0..t)
        .map(|_| {
            let dir = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let dir = dir.normalize();
            match rng.random_range(0..5u8) {
                0 => dir,
                1 => dir * rng.random_range(0.0..1e-6),
                2 => {
                    let v = &weakest + dir * 1e-3;
                    let n = v.norm();
                    v / n
                }
                _ => dir * rng.random_range(0.0f64..1.0).powf(1.0 / d as f64),
            }
        })
        .collect();
    PotentialSequence::new(v0, vectors).expect("vectors are in the unit ball")
}

/// Summary of a fuzzing campaign over [`fuzz_instance`] draws and every exponent in [`FUZZ_EXPONENTS`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzReport {
    pub instances: usize,
    pub violations: usize,
    /// Smallest relative slack `(rhs - lhs) / |rhs|`; `None` without instances.
    pub worst_margin: Option<f64>,
    /// Index of the instance attaining `worst_margin`.
    pub worst_instance_seed: Option<u64>,
    /// Instances with `V_0 ⪰ I`, where the classic bound was also checked.
    pub classic_checked: usize,
    pub classic_violations: usize,
}

struct InstanceOutcome {
    violated: bool,
    margin: f64,
    classic: Option<bool>,
}

fn relative_margin(lhs: f64, rhs: f64) -> f64 {
    let scale = rhs.abs().max(f64::MIN_POSITIVE);
    (rhs - lhs) / scale
}

fn check_instance(seq: &PotentialSequence) -> Result<InstanceOutcome> {
    let potentials = seq.potentials()?;
    let log_ratio = seq.log_det_ratio()?;
    let drops = trace_drops(seq, &FUZZ_EXPONENTS);
    let mut violated = false;
    let mut margin = f64::INFINITY;
    for (p, drop) in FUZZ_EXPONENTS.into_iter().zip(drops) {
        let lhs = sum_powers(&potentials, p);
        let rhs = generalized_terms(seq, log_ratio, drop, p).total();
        violated |= lhs > rhs + FUZZ_RTOL * rhs.abs();
        margin = margin.min(relative_margin(lhs, rhs));
    }
    let classic = if seq.v0.min_eigenvalue() >= 1.0 - NORM_SLACK {
        let lhs = sum_powers(&potentials, 1.0);
        let rhs = 2.0 * log_ratio;
        Some(lhs <= rhs + FUZZ_RTOL * rhs.abs())
    } else {
        None
    };
    Ok(InstanceOutcome { violated, margin, classic })
}

/// Checks the generalized bound on `instances` random sequences.
pub fn fuzz_lemma(instances: usize, seed: u64, execution: Execution) -> Result<FuzzReport> {
    let outcomes = map_indexed(instances, execution, |i| check_instance(&fuzz_instance(seed, i as u64)));
    let mut report = FuzzReport {
        instances,
        violations: 0,
        worst_margin: None,
        worst_instance_seed: None,
        classic_checked: 0,
        classic_violations: 0,
    };
    for (i, outcome) in outcomes.into_iter().enumerate() {
        let o = outcome?;
        report.violations += usize::from(o.violated);
        if report.worst_margin.is_none_or(|w| o.margin < w) {
            report.worst_margin = Some(o.margin);
            report.worst_instance_seed = Some(i as u64);
        }
        if let Some(ok) = o.classic {
            report.classic_checked += 1;
            report.classic_violations += usize::from(!ok);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_unit() -> PotentialSequence {
        PotentialSequence::new(SpdMatrix::identity(1), vec![DVector::from_vec(vec![1.0])]).unwrap()
    }

    #[test]
    fn scalar_lhs() {
        assert_relative_eq!(lhs_potential(&scalar_unit(), 1.0).unwrap(), 1.0);
        assert_eq!(lhs_potential(&scalar_unit(), 0.0).unwrap(), 1.0);
    }

    #[test]
    fn scalar_rhs() {
        let seq = scalar_unit();
        let ln2 = std::f64::consts::LN_2;
        assert_relative_eq!(rhs_generalized(&seq, 1.0).unwrap(), 2.0 * ln2 + 0.75, epsilon = 1e-12);
        assert_relative_eq!(rhs_generalized(&seq, 1.0).unwrap(), 2.136_294_361_119_891, epsilon = 1e-12);
        let half = (2.0 * ln2).sqrt() + 3.0 * (1.0 - 0.5f64.sqrt());
        assert_relative_eq!(rhs_generalized(&seq, 0.5).unwrap(), half, epsilon = 1e-12);
        assert_relative_eq!(half, 2.056_09, epsilon = 1e-5);
        assert_relative_eq!(rhs_generalized(&seq, 0.0).unwrap(), ln2, epsilon = 1e-15);
    }

    #[test]
    fn p_zero_counts_steps() {
        let seq = fuzz_instance(3, 0);
        assert_eq!(lhs_potential(&seq, 0.0).unwrap(), seq.len() as f64);
    }

    #[test]
    fn classic_bound() {
        let seq = PotentialSequence::new(SpdMatrix::identity(2), vec![DVector::from_vec(vec![1.0, 0.0])]).unwrap();
        let rhs = rhs_classic(&seq).unwrap();
        assert_relative_eq!(rhs, 2.0 * std::f64::consts::LN_2, epsilon = 1e-15);
        assert!(rhs >= lhs_potential(&seq, 1.0).unwrap());

        let weak = PotentialSequence::new(SpdMatrix::scaled_identity(2, 0.5).unwrap(), vec![]).unwrap();
        assert!(matches!(rhs_classic(&weak), Err(Error::HypothesisViolated(_))));

        let empty = PotentialSequence::new(SpdMatrix::identity(3), vec![]).unwrap();
        assert_eq!(rhs_classic(&empty).unwrap(), 0.0);
        assert_eq!(lhs_potential(&empty, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn sequence_rejects_long_vectors() {
        let r = PotentialSequence::new(SpdMatrix::identity(2), vec![DVector::from_vec(vec![1.0, 0.1])]);
        assert!(r.is_err());
    }

    #[test]
    fn tightness_examples() {
        let seq = tightness_instance(&[4.0, 9.0]).unwrap();
        assert_relative_eq!(lhs_potential(&seq, 0.5).unwrap(), 5.0 / 6.0, epsilon = 1e-14);
        let ones = tightness_instance(&[1.0; 5]).unwrap();
        assert_relative_eq!(lhs_potential(&ones, 1.0).unwrap(), 5.0, epsilon = 1e-14);
        assert!(tightness_instance(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn case_check_examples() {
        let v = SpdMatrix::from_diagonal(&[0.1]).unwrap();
        let c = per_step_case_check(&v, &DVector::from_vec(vec![1.0]), 1.0).unwrap();
        assert_eq!(c.branch, Branch::Large);
        assert_relative_eq!(c.lhs, 10.0, epsilon = 1e-12);
        assert_relative_eq!(c.rhs, 1.5 * (10.0 - 1.0 / 1.1), epsilon = 1e-12);
        assert!(c.holds(0.0));

        let z = per_step_case_check(&SpdMatrix::identity(3), &DVector::zeros(3), 0.5).unwrap();
        assert_eq!(z.branch, Branch::Small);
        assert_eq!(z.lhs, 0.0);
        assert_eq!(z.rhs, 0.0);
    }

    #[test]
    fn holder_scalar_example() {
        let (lhs, rhs) = holder_lemma_check(&SpdMatrix::from_diagonal(&[0.25]).unwrap(), &DVector::from_vec(vec![1.0]), 1.0).unwrap();
        assert_relative_eq!(lhs, 8.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(rhs, 16.0 / 5.0, epsilon = 1e-12);
        assert!(lhs <= rhs);
        let gate = holder_lemma_check(&SpdMatrix::identity(2), &DVector::from_vec(vec![0.6, 0.8]), 0.5);
        assert!(matches!(gate, Err(Error::PreconditionViolated(_))));
    }

    #[test]
    fn holder_scalar_grid() {
        // Scalar reduction: V = v, u = a with a <= 1 and a²/v >= 2.
        for i in 1..=200 {
            let a = i as f64 / 200.0;
            for j in 1..200 {
                let v = a * a / 2.0 * (j as f64 / 200.0);
                for k in 1..=20 {
                    let p = k as f64 / 20.0;
                    let q = a * a / v;
                    let lhs = 2.0 / 3.0 * q.powf(p);
                    let rhs = a * a * v.powf(-1.0 - p) / (1.0 + q);
                    assert!(lhs <= rhs * (1.0 + 1e-12), "a={a} v={v} p={p}");
                    let (ml, mr) = holder_lemma_check(&SpdMatrix::from_diagonal(&[v]).unwrap(), &DVector::from_vec(vec![a]), p).unwrap();
                    assert_relative_eq!(ml, lhs, max_relative = 1e-10);
                    assert_relative_eq!(mr, rhs, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn singular_v0_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let v0 = SpdMatrix::new(m).unwrap();
        let seq = PotentialSequence::new(v0, vec![DVector::from_vec(vec![0.5, 0.5])]).unwrap();
        assert!(matches!(lhs_potential(&seq, 0.5), Err(Error::SingularMatrix(_))));
        assert!(matches!(rhs_generalized(&seq, 0.5), Err(Error::SingularMatrix(_))));
    }

    #[test]
    fn exponent_range() {
        assert!(lhs_potential(&scalar_unit(), 1.5).is_err());
        assert!(rhs_generalized(&scalar_unit(), -0.1).is_err());
    }

    #[test]
    fn fuzz_instances_are_reproducible() {
        let a = fuzz_instance(11, 4);
        let b = fuzz_instance(11, 4);
        assert_eq!(a.v0(), b.v0());
        assert_eq!(a.vectors(), b.vectors());
        assert!(a.vectors().iter().all(|u| u.norm() <= 1.0 + 1e-12));
    }

    #[test]
    fn empty_fuzz_report() {
        let r = fuzz_lemma(0, 1, Execution::Sequential).unwrap();
        assert_eq!(r.instances, 0);
        assert_eq!(r.violations, 0);
        assert!(r.worst_margin.is_none());
    }
}
