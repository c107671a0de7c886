//! Summary statistics and the Kolmogorov–Smirnov test used by the Monte Carlo checks.

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `sup |F_n − F|` of the sample against a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov tail `P(K > λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// p-value of a one-sample KS statistic, with Stephens' small-sample correction.
pub fn ks_pvalue(n: usize, stat: f64) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_tail((sn + 0.12 + 0.11 / sn) * stat)
}

/// Smallest sample size for which KS results are reported.
pub const KS_MIN_SAMPLE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// KS test against `N(0, 1)`.
pub fn ks_standard_normal(sample: &[f64]) -> Option<KsResult> {
    if sample.len() < KS_MIN_SAMPLE {
        return None;
    }
    let statistic = ks_statistic(sample, normal_cdf);
    Some(KsResult { statistic, p_value: ks_pvalue(sample.len(), statistic) })
}

/// KS test against the normal law with the sample's own mean and standard deviation.
pub fn ks_normal_fit(sample: &[f64]) -> Option<KsResult> {
    if sample.len() < KS_MIN_SAMPLE {
        return None;
    }
    let mu = mean(sample);
    let sd = variance(sample).sqrt();
    if !(sd > 0.0) {
        return Some(KsResult { statistic: 1.0, p_value: 0.0 });
    }
    let statistic = ks_statistic(sample, |x| normal_cdf((x - mu) / sd));
    Some(KsResult { statistic, p_value: ks_pvalue(sample.len(), statistic) })
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Linear-interpolation quantile (type 7).
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Sample mean and unbiased covariance of the rows in `samples`.
pub fn mean_and_covariance(samples: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let p = samples[0].len();
    let k = samples.len() as f64;
    let mu = samples.iter().fold(DVector::zeros(p), |acc, s| acc + s) / k;
    let mut cov = DMatrix::zeros(p, p);
    for s in samples {
        let c = s - &mu;
        cov.ger(1.0, &c, &c, 1.0);
    }
    let denom = (samples.len().max(2) - 1) as f64;
    (mu, cov / denom)
}

pub fn correlation_from_covariance(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sd: Vec<f64> = (0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect();
    DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| {
        if sd[i] > 0.0 && sd[j] > 0.0 {
            cov[(i, j)] / (sd[i] * sd[j])
        } else {
            0.0
        }
    })
}
