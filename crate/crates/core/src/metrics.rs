//! One-dimensional sample distances and bootstrap standard errors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{path_rng, BOOTSTRAP_DOMAIN};

fn sorted(a: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Picks `m` order statistics of a sorted sample at the mid-quantiles
/// `(i + 1/2) / m`.
fn thin_sorted(s: &[f64], m: usize) -> Vec<f64> {
    let n = s.len();
    (0..m).map(|i| s[(((2 * i + 1) * n) / (2 * m)).min(n - 1)]).collect()
}

/// Wasserstein-1 distance of two empirical laws on the line: the mean
/// absolute difference of the sorted samples. A larger sample is first
/// reduced to the size of the smaller one by taking its mid-quantile order
/// statistics, so the result does not depend on any random draw.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let (mut sa, mut sb) = (sorted(a), sorted(b));
    if sa.len() > sb.len() {
        sa = thin_sorted(&sa, sb.len());
    } else if sb.len() > sa.len() {
        sb = thin_sorted(&sb, sa.len());
    }
    Ok(sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / sa.len() as f64)
}

/// Kolmogorov's limiting survival function
/// `Q(l) = 2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 l^2)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov statistic `D = sup |F_a - F_b|` and its
/// asymptotic p-value `Q((sqrt(n_e) + 0.12 + 0.11 / sqrt(n_e)) D)` with
/// `n_e = n m / (n + m)`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let (sa, sb) = (sorted(a), sorted(b));
    let (n, m) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let ne = (n * m / (n + m)).sqrt();
    Ok((d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d)))
}

/// One-sample statistic against a continuous CDF, with the matching
/// asymptotic p-value.
pub fn ks_one_sample<F: Fn(f64) -> f64>(a: &[f64], cdf: F) -> Result<(f64, f64)> {
    if a.is_empty() {
        return Err(Error::EmptySample);
    }
    let s = sorted(a);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    Ok((d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)))
}

pub fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len() as f64
}

/// Unbiased sample variance (0 for fewer than two points).
pub fn variance(a: &[f64]) -> f64 {
    if a.len() < 2 {
        return 0.0;
    }
    let m = mean(a);
    a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (a.len() - 1) as f64
}

/// Empirical `P(X > c)`.
pub fn tail(a: &[f64], c: f64) -> f64 {
    a.iter().filter(|&&x| x > c).count() as f64 / a.len() as f64
}

/// Empirical quantile by the nearest-rank rule.
pub fn quantile(a: &[f64], p: f64) -> f64 {
    let s = sorted(a);
    let k = ((p * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[k - 1]
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Standard deviation of `stat(a*, b*)` over `resamples` independent
/// with-replacement resamples of both inputs. The streams derive from
/// `(seed, BOOTSTRAP_DOMAIN, stream)`.
pub fn bootstrap_se<F>(a: &[f64], b: &[f64], stat: F, resamples: usize, seed: u64, stream: u64) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> Result<f64>,
{
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut rng = path_rng(seed, BOOTSTRAP_DOMAIN, stream);
    let mut ra = vec![0.0; a.len()];
    let mut rb = vec![0.0; b.len()];
    let mut values = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        ra.iter_mut().for_each(|v| *v = a[rng.random_range(0..a.len())]);
        rb.iter_mut().for_each(|v| *v = b[rng.random_range(0..b.len())]);
        values.push(stat(&ra, &rb)?);
    }
    Ok(variance(&values).sqrt())
}
