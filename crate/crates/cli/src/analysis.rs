//! Cross-point post-processing.

use scramble_core::stats::interpolate;
use scramble_core::{Error, Result};

/// Number of points in the common grid used by [`collapse_check`].
pub const COLLAPSE_GRID: usize = 1001;

/// One curve `<w>/N` against `g^2 t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseCurve {
    pub coupling: f64,
    /// Ascending `g^2 t`.
    pub scaled_time: Vec<f64>,
    pub weight_fraction: Vec<f64>,
}

/// Largest pairwise sup-norm difference between the curves after
/// interpolating all of them onto a shared `g^2 t` grid spanning the range
/// they have in common.
pub fn collapse_check(curves: &[CollapseCurve]) -> Result<f64> {
    if curves.len() < 2 {
        return Err(Error::InvalidArgument(
            "collapse needs curves for at least two couplings".into(),
        ));
    }
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for c in curves {
        if c.scaled_time.len() < 2 || c.scaled_time.len() != c.weight_fraction.len() {
            return Err(Error::InvalidArgument(format!(
                "curve for g = {} needs matching time and value columns of length >= 2",
                c.coupling
            )));
        }
        lo = lo.max(c.scaled_time[0]);
        hi = hi.min(*c.scaled_time.last().unwrap());
    }
    if !(hi > lo) {
        return Err(Error::InvalidArgument("curves share no g^2 t range".into()));
    }
    let grid: Vec<f64> = (0..COLLAPSE_GRID)
        .map(|i| lo + (hi - lo) * i as f64 / (COLLAPSE_GRID - 1) as f64)
        .collect();
    let resampled: Vec<Vec<f64>> = curves
        .iter()
        .map(|c| {
            grid.iter()
                .map(|&x| {
                    interpolate(&c.scaled_time, &c.weight_fraction, x).expect("x inside range")
                })
                .collect()
        })
        .collect();
    let mut worst = 0.0_f64;
    for (i, a) in resampled.iter().enumerate() {
        for b in &resampled[i + 1..] {
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(g: f64, f: impl Fn(f64) -> f64, t_max: f64, n: usize) -> CollapseCurve {
        let ts: Vec<f64> = (0..=n).map(|i| t_max * i as f64 / n as f64).collect();
        CollapseCurve {
            coupling: g,
            weight_fraction: ts.iter().map(|&t| f(t)).collect(),
            scaled_time: ts,
        }
    }

    #[test]
    fn identical_curves_collapse() {
        let f = |t: f64| 0.75 * (1.0 - (-t).exp());
        let d = collapse_check(&[curve(0.1, f, 30.0, 300), curve(0.2, f, 20.0, 400)]).unwrap();
        assert!(d < 1e-3, "{d}");
    }

    #[test]
    fn offset_is_measured() {
        let a = curve(0.1, |t| t / 10.0, 10.0, 10);
        let b = curve(0.2, |t| t / 10.0 + 0.05, 5.0, 10);
        let d = collapse_check(&[a, b]).unwrap();
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn single_curve_is_an_error() {
        assert!(collapse_check(&[curve(0.1, |t| t, 1.0, 4)]).is_err());
    }
}
