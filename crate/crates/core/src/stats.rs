//! Small statistical helpers used by the Monte Carlo diagnostics.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

/// Normal quantile for a two-sided 95% interval.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Mean with a normal-approximation confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_dev: f64,
    pub half_width: f64,
    pub n: usize,
}

impl MeanEstimate {
    /// 95% interval; `half_width` is zero for fewer than two samples.
    pub fn from_samples(xs: &[f64]) -> Self {
        Self::with_z(xs, Z_95)
    }

    pub fn with_z(xs: &[f64], z: f64) -> Self {
        let n = xs.len();
        if n == 0 {
            return MeanEstimate {
                mean: 0.0,
                std_dev: 0.0,
                half_width: 0.0,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return MeanEstimate {
                mean,
                std_dev: 0.0,
                half_width: 0.0,
                n,
            };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let std_dev = var.sqrt();
        MeanEstimate {
            mean,
            std_dev,
            half_width: z * std_dev / (n as f64).sqrt(),
            n,
        }
    }

    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Wilson score interval for `successes / trials`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - spread).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + spread).min(1.0) };
    (lo, hi)
}

/// One-sample Kolmogorov-Smirnov statistic `sup |F_n - F|`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value `sqrt(-ln(α/2)/2) / sqrt(n)`.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Condensed upper-triangular distance matrix, stored in `f32` to halve memory.
fn pairwise_distances(points: &[&[f64]]) -> Vec<f32> {
    let n = points.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(euclid(points[i], points[j]) as f32);
        }
    }
    out
}

/// `Σ a_i b_i` with eight independent lanes so the loop vectorizes.
fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0.0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            lanes[k] += x[k] * y[k];
        }
    }
    lanes.iter().map(|&v| f64::from(v)).sum::<f64>() + f64::from(tail)
}

/// Two-sample energy statistic given the condensed distances, the total distance and group labels.
fn energy_statistic(dist: &[f32], total: f64, labels: &[bool]) -> f64 {
    let n = labels.len();
    let in_x: Vec<f32> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let in_y: Vec<f32> = in_x.iter().map(|w| 1.0 - w).collect();
    let nx = in_x.iter().map(|&w| f64::from(w)).sum::<f64>();
    let ny = n as f64 - nx;
    let (mut xx, mut yy) = (0.0f64, 0.0f64);
    let mut k = 0;
    for i in 0..n {
        let row = &dist[k..k + (n - i - 1)];
        k += n - i - 1;
        if labels[i] {
            xx += dot_f32(row, &in_x[i + 1..]);
        } else {
            yy += dot_f32(row, &in_y[i + 1..]);
        }
    }
    let xy = total - xx - yy;
    2.0 * xy / (nx * ny) - 2.0 * xx / (nx * nx) - 2.0 * yy / (ny * ny)
}

/// Permutation p-value of the energy-distance two-sample test.
pub fn energy_test<R: Rng + ?Sized>(x: &[Vec<f64>], y: &[Vec<f64>], permutations: usize, rng: &mut R) -> (f64, f64) {
    let points: Vec<&[f64]> = x.iter().chain(y).map(Vec::as_slice).collect();
    let dist = pairwise_distances(&points);
    let mut labels: Vec<bool> = std::iter::repeat_n(true, x.len()).chain(std::iter::repeat_n(false, y.len())).collect();
    let total: f64 = dist.iter().map(|&v| f64::from(v)).sum();
    let observed = energy_statistic(&dist, total, &labels);
    let mut at_least = 1usize;
    for _ in 0..permutations {
        labels.shuffle(rng);
        if energy_statistic(&dist, total, &labels) >= observed {
            at_least += 1;
        }
    }
    (observed, at_least as f64 / (permutations + 1) as f64)
}

/// Least-squares slope of `y` on `x`; `None` with fewer than two distinct abscissae.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}
