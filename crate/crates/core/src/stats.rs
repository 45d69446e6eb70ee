//! Fitting and summary statistics used by the experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordinary least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Fit(format!("need at least 2 points, got {n}")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        n_points: n,
    })
}

/// Mean and standard error of the mean.
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (ties get average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    let fit = linear_fit(&ranks(x), &ranks(y))?;
    Ok(fit.r_squared.sqrt() * fit.slope.signum())
}

/// Adjacent-gap ratios `min(d_n, d_{n-1}) / max(d_n, d_{n-1})` of a sorted
/// spectrum. Pairs of exactly degenerate gaps are skipped.
pub fn gap_ratios(sorted_levels: &[f64]) -> Vec<f64> {
    let gaps: Vec<f64> = sorted_levels.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.windows(2)
        .filter_map(|g| {
            let (a, b) = (g[0].max(0.0), g[1].max(0.0));
            let hi = a.max(b);
            (hi > 0.0).then(|| a.min(b) / hi)
        })
        .collect()
}

/// Bootstrap standard error of the mean with a seeded resampler.
pub fn bootstrap_sem(xs: &[f64], resamples: usize, seed: u64) -> f64 {
    if xs.len() < 2 || resamples < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let (m, _) = mean_sem(&means);
    (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}

/// Linear interpolation of a sampled curve `(xs, ys)` at `x`; `xs` ascending.
/// Returns `None` outside the sampled range.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    if xs.is_empty() || x < xs[0] || x > *xs.last()? {
        return None;
    }
    let i = xs.partition_point(|&v| v < x);
    if i == 0 {
        return Some(ys[0]);
    }
    let (x0, x1, y0, y1) = (xs[i - 1], xs[i], ys[i - 1], ys[i]);
    Some(if x1 == x0 {
        y1
    } else {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    })
}

/// First crossing of `level` by a sampled curve, interpolated linearly.
/// `rising` selects upward (`y >= level`) or downward (`y <= level`) crossings.
pub fn first_crossing(ts: &[f64], ys: &[f64], level: f64, rising: bool) -> Option<f64> {
    let hit = |y: f64| if rising { y >= level } else { y <= level };
    let i = ys.iter().position(|&y| hit(y))?;
    if i == 0 {
        return Some(ts[0]);
    }
    let (t0, t1, y0, y1) = (ts[i - 1], ts[i], ys[i - 1], ys[i]);
    Some(t0 + (level - y0) * (t1 - t0) / (y1 - y0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!((f.intercept + 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn spearman_monotone() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 8.0, 27.0, 64.0];
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let z = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&x, &z).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratios_skip_degenerate() {
        let r = gap_ratios(&[0.0, 1.0, 3.0, 3.0, 3.0, 4.0]);
        assert_eq!(r, vec![0.5, 0.0, 0.0]);
    }

    #[test]
    fn crossing_interpolates() {
        let t = [0.0, 1.0, 2.0];
        let y = [0.0, 0.4, 0.8];
        assert!((first_crossing(&t, &y, 0.6, true).unwrap() - 1.5).abs() < 1e-12);
        assert!(first_crossing(&t, &y, 0.9, true).is_none());
        assert_eq!(interpolate(&t, &y, 0.5), Some(0.2));
        assert_eq!(interpolate(&t, &y, 3.0), None);
    }
}
