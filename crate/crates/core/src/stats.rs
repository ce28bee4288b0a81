//! Small summation and batch-statistics helpers shared by the estimators.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub(crate) fn sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    sum(values.iter().copied()) / values.len() as f64
}

/// Mean and batch-means standard error, splitting `values` (in order) into
/// `batches` contiguous groups whose sizes differ by at most one.
pub(crate) fn batch_means(values: &[f64], batches: usize) -> (f64, f64, Vec<f64>) {
    let n = values.len();
    let overall = mean(values);
    let b = batches.min(n).max(1);
    let mut means = Vec::with_capacity(b);
    let base = n / b;
    let extra = n % b;
    let mut start = 0;
    for i in 0..b {
        let len = base + usize::from(i < extra);
        means.push(mean(&values[start..start + len]));
        start += len;
    }
    if b < 2 {
        return (overall, 0.0, means);
    }
    let bm = mean(&means);
    let ss = sum(means.iter().map(|m| (m - bm) * (m - bm)));
    let var_of_mean = ss / ((b - 1) as f64) / b as f64;
    (overall, var_of_mean.max(0.0).sqrt(), means)
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Two-sided 95% Student-t quantile.
pub(crate) fn t975(dof: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    match dof {
        0 => f64::INFINITY,
        d if d <= 30 => TABLE[d - 1],
        _ => 1.959964,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut values = alloc::vec![1e16, 1.0, -1e16];
        values.extend(core::iter::repeat_n(1e-3, 1000));
        assert!((sum(values) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn batch_means_of_constant_has_zero_error() {
        let (m, se, means) = batch_means(&[3.0; 100], 30);
        assert_eq!(m, 3.0);
        assert_eq!(se, 0.0);
        assert_eq!(means.len(), 30);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
