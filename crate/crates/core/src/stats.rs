//! Small statistics toolbox shared by the estimators.
//!
//! All reductions go through [`pairwise_sum`] over data in a fixed order, so
//! a result depends only on the values, never on how they were produced.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SheError};
use crate::rng::KeyedStream;

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&dev) / (n - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    MeanSe {
        mean: mean(xs),
        se: if n > 1 { (variance(xs) / n as f64).sqrt() } else { 0.0 },
        n,
    }
}

/// Delete-one jackknife standard error of `stat` over `xs`.
pub fn jackknife_se<F>(xs: &[f64], stat: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mut buf = Vec::with_capacity(n - 1);
    let leave_out: Vec<f64> = (0..n)
        .map(|i| {
            buf.clear();
            buf.extend_from_slice(&xs[..i]);
            buf.extend_from_slice(&xs[i + 1..]);
            stat(&buf)
        })
        .collect();
    let m = mean(&leave_out);
    let dev: Vec<f64> = leave_out.iter().map(|v| (v - m) * (v - m)).collect();
    ((n - 1) as f64 / n as f64 * pairwise_sum(&dev)).sqrt()
}

/// Jackknife SE of a sample mean in closed form (equals s/sqrt(n)).
pub fn jackknife_mean_se(xs: &[f64]) -> f64 {
    mean_se(xs).se
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Classical standard error of the slope (0 for exact fits).
    pub slope_se: f64,
}

/// Ordinary least squares `y = a + b x`.
pub fn least_squares(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(SheError::invalid("least squares needs two or more paired points"));
    }
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx = pairwise_sum(&x.iter().map(|v| (v - mx) * (v - mx)).collect::<Vec<_>>());
    if sxx <= 0.0 {
        return Err(SheError::invalid("degenerate abscissae"));
    }
    let sxy = pairwise_sum(
        &x.iter()
            .zip(y)
            .map(|(a, b)| (a - mx) * (b - my))
            .collect::<Vec<_>>(),
    );
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if x.len() > 2 {
        let rss = pairwise_sum(
            &x.iter()
                .zip(y)
                .map(|(a, b)| {
                    let r = b - intercept - slope * a;
                    r * r
                })
                .collect::<Vec<_>>(),
        );
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
    })
}

/// Empirical quantile with linear interpolation; `xs` need not be sorted.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// One-sample Kolmogorov–Smirnov statistic `sup |F_n - F|`.
pub fn ks_statistic<F>(sample: &[f64], cdf: F) -> f64
where
    F: Fn(f64) -> f64,
{
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic two-sided critical value at level 5%.
pub fn ks_critical_5pct(n: usize) -> f64 {
    1.36 / (n as f64).sqrt()
}

/// Sample Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let cov = pairwise_sum(&a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect::<Vec<_>>());
    let va = pairwise_sum(&a.iter().map(|x| (x - ma) * (x - ma)).collect::<Vec<_>>());
    let vb = pairwise_sum(&b.iter().map(|y| (y - mb) * (y - mb)).collect::<Vec<_>>());
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Percentile bootstrap interval of `stat` over resamples drawn by
/// `resample`, with a deterministic stream.
pub fn bootstrap_interval<R>(seed: u64, replicates: usize, level: f64, mut resample: R) -> (f64, f64)
where
    R: FnMut(&mut KeyedStream) -> f64,
{
    let mut stream = KeyedStream::aux(seed, 0xB007);
    let draws: Vec<f64> = (0..replicates).map(|_| resample(&mut stream)).collect();
    let alpha = (1.0 - level) / 2.0;
    (quantile(&draws, alpha), quantile(&draws, 1.0 - alpha))
}
