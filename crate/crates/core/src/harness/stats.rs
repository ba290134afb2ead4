//! Sample statistics over repetitions.

/// Two-sided 90% normal quantile.
pub const Z_90: f64 = 1.6449;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); zero when n < 2.
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Summary {
    pub fn half_width(&self) -> f64 {
        (self.ci_high - self.ci_low) / 2.0
    }

    /// True when the intervals share an interior point; touching ends do not count.
    pub fn overlaps(&self, other: &Summary) -> bool {
        self.ci_low < other.ci_high && other.ci_low < self.ci_high
    }
}

/// Mean, sample standard deviation and 90% normal confidence interval.
/// Non-finite samples are skipped.
pub fn summarize(samples: &[f64]) -> Summary {
    let xs: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    let n = xs.len();
    if n == 0 {
        return Summary { n, mean: f64::NAN, sd: f64::NAN, ci_low: f64::NAN, ci_high: f64::NAN };
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    let half = Z_90 * sd / (n as f64).sqrt();
    Summary { n, mean, sd, ci_low: mean - half, ci_high: mean + half }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_sample() {
        // 2, 4, 4, 4, 5, 5, 7, 9: mean 5, sum of squares 32, sd sqrt(32/7).
        let s = summarize(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        let sd = (32.0f64 / 7.0).sqrt();
        assert_eq!(s.n, 8);
        assert!((s.mean - 5.0).abs() < 1e-12);
        assert!((s.sd - sd).abs() < 1e-12);
        assert!((s.half_width() - 1.6449 * sd / 8.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_samples() {
        let one = summarize(&[3.0]);
        assert_eq!((one.n, one.mean, one.sd, one.ci_low, one.ci_high), (1, 3.0, 0.0, 3.0, 3.0));
        assert!(summarize(&[]).mean.is_nan());
        assert_eq!(summarize(&[1.0, f64::NAN, 3.0]).n, 2);
    }

    #[test]
    fn touching_intervals_do_not_overlap() {
        let a = Summary { n: 2, mean: 1.0, sd: 0.0, ci_low: 0.0, ci_high: 2.0 };
        let b = Summary { n: 2, mean: 3.0, sd: 0.0, ci_low: 2.0, ci_high: 4.0 };
        assert!(!a.overlaps(&b) && !b.overlaps(&a));
        let c = Summary { ci_low: 1.9, ..b };
        assert!(a.overlaps(&c));
    }

    proptest! {
        #[test]
        fn interval_brackets_mean(xs in proptest::collection::vec(-1e6f64..1e6, 1..50)) {
            let s = summarize(&xs);
            prop_assert!(s.ci_low <= s.mean && s.mean <= s.ci_high);
            prop_assert!(s.sd >= 0.0);
            let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(s.mean >= lo - 1e-6 && s.mean <= hi + 1e-6);
        }

        #[test]
        fn shift_invariant_spread(xs in proptest::collection::vec(-1e3f64..1e3, 2..30), c in -1e3f64..1e3) {
            let a = summarize(&xs);
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let b = summarize(&shifted);
            prop_assert!((a.sd - b.sd).abs() < 1e-6);
            prop_assert!((a.mean + c - b.mean).abs() < 1e-6);
        }
    }
}
