//! Order-fixed summation helpers.
//!
//! Every Monte Carlo aggregate goes through [`pairwise_sum`] over a slice
//! whose order depends only on path indices, so results do not depend on
//! how many worker threads produced the slice.

const BLOCK: usize = 16;

/// Pairwise (cascade) summation with a fixed split rule.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
        }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n == 1 {
            return Self { mean, stderr: 0.0 };
        }
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        Self {
            mean,
            stderr: (var / n as f64).sqrt(),
        }
    }

    /// Combine batch totals `sums[b]` over `counts[b]` paths into an
    /// estimate of the per-path mean, with a batch-means standard error.
    pub fn from_batches(sums: &[f64], counts: &[usize]) -> Self {
        debug_assert_eq!(sums.len(), counts.len());
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
            };
        }
        let p = total as f64;
        let mean = pairwise_sum(sums) / p;
        let live: Vec<(f64, usize)> = sums
            .iter()
            .zip(counts)
            .filter(|(_, &c)| c > 0)
            .map(|(&s, &c)| (s, c))
            .collect();
        let b = live.len();
        if b < 2 {
            return Self { mean, stderr: 0.0 };
        }
        let terms: Vec<f64> = live
            .iter()
            .map(|&(s, c)| {
                let w = c as f64 / p;
                let dev = s / c as f64 - mean;
                w * w * dev * dev
            })
            .collect();
        let var = pairwise_sum(&terms) * b as f64 / (b - 1) as f64;
        Self {
            mean,
            stderr: var.sqrt(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500500.0);
    }

    #[test]
    fn estimate_of_constant_has_zero_stderr() {
        let e = Estimate::from_samples(&[2.0; 10]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn batch_estimate_matches_sample_estimate_for_equal_batches() {
        // 4 batches of 1 path each reduces to the sample formula.
        let xs = [1.0, 2.0, 4.0, 7.0];
        let a = Estimate::from_samples(&xs);
        let b = Estimate::from_batches(&xs, &[1, 1, 1, 1]);
        assert!((a.mean - b.mean).abs() < 1e-15);
        assert!((a.stderr - b.stderr).abs() < 1e-15);
    }
}
