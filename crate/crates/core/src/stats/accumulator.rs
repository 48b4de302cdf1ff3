use serde::{Deserialize, Serialize};

/// One-pass count, mean and sum of squared deviations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
    }

    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        self.mean += delta * nb / n;
        self.m2 += other.m2 + delta * delta * na * nb / n;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Zero for an empty accumulator.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Unbiased sample variance; `None` below two values.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2 / (self.count - 1) as f64)
    }

    pub fn std_dev(&self) -> Option<f64> {
        self.variance().map(f64::sqrt)
    }

    /// Standard error of the mean.
    pub fn standard_error(&self) -> Option<f64> {
        self.variance().map(|v| (v / self.count as f64).sqrt())
    }
}

impl FromIterator<f64> for MomentAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MomentAccumulator::new();
        for v in iter {
            acc.accumulate(v);
        }
        acc
    }
}

impl Extend<f64> for MomentAccumulator {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.accumulate(v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn two_pass(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn merge_matches_single_pass() {
        let mut a: MomentAccumulator = [1.0, 2.0].into_iter().collect();
        let b: MomentAccumulator = [3.0].into_iter().collect();
        a.merge(&b);
        let all: MomentAccumulator = [1.0, 2.0, 3.0].into_iter().collect();
        assert!((a.mean() - all.mean()).abs() < 1e-12);
        assert!((a.variance().unwrap() - all.variance().unwrap()).abs() < 1e-12);
        assert_eq!(a.count(), 3);
    }

    #[test]
    fn variance_absent_below_two() {
        let mut acc = MomentAccumulator::new();
        assert_eq!(acc.variance(), None);
        acc.accumulate(4.0);
        assert_eq!(acc.variance(), None);
        assert_eq!(acc.standard_error(), None);
        assert_eq!(acc.mean(), 4.0);
    }

    #[test]
    fn merge_with_empty() {
        let a: MomentAccumulator = [1.0, 5.0].into_iter().collect();
        let mut e = MomentAccumulator::new();
        e.merge(&a);
        assert_eq!(e, a);
        let mut b = a;
        b.merge(&MomentAccumulator::new());
        assert_eq!(b, a);
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = derive_stream(2024, 0);
        let acc: MomentAccumulator = (0..1_000_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        // 5 sigma: 0.005 for the mean and 0.0071 for the variance
        assert!(acc.mean().abs() < 0.01);
        assert!((acc.variance().unwrap() - 1.0).abs() < 0.01);
    }

    #[test]
    fn large_offset_is_stable() {
        let xs: Vec<f64> = (0..1000).map(|i| 1e9 + (i % 7) as f64).collect();
        let acc: MomentAccumulator = xs.iter().copied().collect();
        let (m, v) = two_pass(&xs);
        assert!((acc.mean() - m).abs() < 1e-6);
        assert!((acc.variance().unwrap() - v).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn merge_any_partition(
            xs in prop::collection::vec(-1e3f64..1e3, 2..200),
            cuts in prop::collection::vec(0usize..200, 0..6),
        ) {
            let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c % xs.len()).collect();
            cuts.push(0);
            cuts.push(xs.len());
            cuts.sort_unstable();
            let parts: Vec<MomentAccumulator> = cuts
                .windows(2)
                .map(|w| xs[w[0]..w[1]].iter().copied().collect())
                .collect();
            let mut fwd = MomentAccumulator::new();
            for p in &parts {
                fwd.merge(p);
            }
            let mut rev = MomentAccumulator::new();
            for p in parts.iter().rev() {
                rev.merge(p);
            }
            let (m, v) = two_pass(&xs);
            let scale = 1.0 + v.abs();
            for acc in [fwd, rev] {
                prop_assert_eq!(acc.count(), xs.len() as u64);
                prop_assert!((acc.mean() - m).abs() < 1e-12 * 1e3);
                prop_assert!((acc.variance().unwrap() - v).abs() < 1e-12 * scale * 1e3);
            }
        }
    }
}
