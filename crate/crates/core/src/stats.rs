//! Small distribution and summary helpers shared by the fitting and simulation code.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Upper tail probability of a chi-square variate with `df` degrees of freedom.
pub fn chi_square_sf(statistic: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    if statistic <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("df > 0");
    dist.sf(statistic).clamp(0.0, 1.0)
}

/// Two-sided normal p-value for a z statistic.
pub fn normal_two_sided(z: f64) -> f64 {
    if !z.is_finite() {
        return if z.is_nan() { 1.0 } else { 0.0 };
    }
    let dist = Normal::standard();
    (2.0 * dist.sf(z.abs())).clamp(0.0, 1.0)
}

/// Kolmogorov-Smirnov distance between the empirical distribution of `values`
/// and the uniform distribution on [0, 1].
pub fn ks_distance_uniform(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = v.clamp(0.0, 1.0);
            let above = (i as f64 + 1.0) / n - v;
            let below = v - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with the n-1 denominator.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)
}

/// Pearson correlation. Returns 0 when either input has zero variance.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let ma = mean(a);
    let mb = mean(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Fraction of p-values at or below `alpha`.
pub fn rejection_rate(p_values: &[f64], alpha: f64) -> f64 {
    if p_values.is_empty() {
        return 0.0;
    }
    p_values.iter().filter(|&&p| p <= alpha).count() as f64 / p_values.len() as f64
}

/// Logistic inverse link.
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}
