use serde::{Deserialize, Serialize};

use super::MomentAccumulator;
use crate::error::{Error, Result};

/// A point estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Estimate { value, stderr }
    }

    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }

    /// Sample mean and its standard error.
    pub fn mean_of(acc: &MomentAccumulator) -> Result<Self> {
        let se = acc
            .standard_error()
            .ok_or_else(|| Error::InsufficientData(format!("{} values, need at least 2", acc.count())))?;
        Ok(Estimate::new(acc.mean(), se))
    }
}

/// A statistic evaluated on the full sample and on contiguous batches of it.
///
/// The standard error of any functional `f` is the standard deviation of `f`
/// over the batches divided by `sqrt(B)`, which keeps correlations between
/// quantities computed from the same replicas.
#[derive(Clone, Debug, PartialEq)]
pub struct Batched<T> {
    pub full: T,
    pub batches: Vec<T>,
}

impl<T> Batched<T> {
    pub fn new(full: T, batches: Vec<T>) -> Result<Self> {
        if batches.len() < 2 {
            return Err(Error::InsufficientData(format!("{} batches, need at least 2", batches.len())));
        }
        Ok(Batched { full, batches })
    }

    /// Splits `records` into `n_batches` contiguous, nearly equal batches.
    pub fn from_records<R>(records: &[R], n_batches: usize, build: impl Fn(&[R]) -> Result<T>) -> Result<Self> {
        if n_batches < 2 || records.len() < n_batches {
            return Err(Error::InsufficientData(format!(
                "{} records cannot fill {n_batches} batches",
                records.len()
            )));
        }
        let n = records.len();
        let batches = (0..n_batches)
            .map(|b| build(&records[b * n / n_batches..(b + 1) * n / n_batches]))
            .collect::<Result<Vec<_>>>()?;
        Batched::new(build(records)?, batches)
    }

    pub fn n_batches(&self) -> usize {
        self.batches.len()
    }

    pub fn estimate(&self, f: impl Fn(&T) -> f64) -> Estimate {
        let spread: MomentAccumulator = self.batches.iter().map(&f).collect();
        let sd = spread.std_dev().unwrap_or(0.0);
        Estimate::new(f(&self.full), sd / (self.batches.len() as f64).sqrt())
    }

    pub fn try_estimate(&self, f: impl Fn(&T) -> Result<f64>) -> Result<Estimate> {
        let full = f(&self.full)?;
        let mut spread = MomentAccumulator::new();
        for b in &self.batches {
            spread.accumulate(f(b)?);
        }
        let sd = spread.std_dev().unwrap_or(0.0);
        Ok(Estimate::new(full, sd / (self.batches.len() as f64).sqrt()))
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Batched<U> {
        Batched {
            full: f(&self.full),
            batches: self.batches.iter().map(f).collect(),
        }
    }

    pub fn try_map<U>(&self, f: impl Fn(&T) -> Result<U>) -> Result<Batched<U>> {
        Ok(Batched {
            full: f(&self.full)?,
            batches: self.batches.iter().map(f).collect::<Result<_>>()?,
        })
    }
}

/// Pairs two batched statistics built from the same replica batches.
pub fn zip<A: Clone, B: Clone>(a: &Batched<A>, b: &Batched<B>) -> Result<Batched<(A, B)>> {
    if a.batches.len() != b.batches.len() {
        return Err(Error::GridMismatch(format!(
            "{} vs {} batches",
            a.batches.len(),
            b.batches.len()
        )));
    }
    Ok(Batched {
        full: (a.full.clone(), b.full.clone()),
        batches: a.batches.iter().cloned().zip(b.batches.iter().cloned()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use rand_distr::{Distribution, StandardNormal};

    fn mean(xs: &[f64]) -> Result<f64> {
        Ok(xs.iter().sum::<f64>() / xs.len() as f64)
    }

    #[test]
    fn batch_layout() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let b = Batched::from_records(&xs, 3, |r| Ok(r.len())).unwrap();
        assert_eq!(b.full, 10);
        assert_eq!(b.batches, vec![3, 3, 4]);
        assert!(Batched::from_records(&xs, 11, |r| Ok(r.len())).is_err());
        assert!(Batched::from_records(&xs, 1, |r| Ok(r.len())).is_err());
    }

    #[test]
    fn batched_mean_error_matches_classical() {
        let mut rng = derive_stream(31, 0);
        let xs: Vec<f64> = (0..60_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b = Batched::from_records(&xs, 40, mean).unwrap();
        let e = b.estimate(|m| *m);
        let classical = 1.0 / (xs.len() as f64).sqrt();
        // the batch standard error has relative spread about 1/sqrt(2 * 39)
        assert!((e.stderr / classical - 1.0).abs() < 0.5, "{} vs {classical}", e.stderr);
        assert_eq!(e.value, mean(&xs).unwrap());
    }

    #[test]
    fn constant_batches_have_zero_error() {
        let xs = vec![2.0; 100];
        let b = Batched::from_records(&xs, 30, mean).unwrap();
        assert_eq!(b.estimate(|m| *m), Estimate::exact(2.0));
    }

    #[test]
    fn zip_requires_equal_batches() {
        let xs = vec![1.0; 100];
        let a = Batched::from_records(&xs, 30, mean).unwrap();
        let b = Batched::from_records(&xs, 31, mean).unwrap();
        assert!(zip(&a, &b).is_err());
        let z = zip(&a, &a).unwrap();
        assert_eq!(z.estimate(|(x, y)| x - y), Estimate::exact(0.0));
    }
}
