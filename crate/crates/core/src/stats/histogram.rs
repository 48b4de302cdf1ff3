use std::io::Write;

use rand::Rng;

use crate::error::{Error, Result};

/// Weights on the lattice `width * Z`; bin `k` is centred on `width * k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    width: f64,
    first: i64,
    weights: Vec<f64>,
    total: f64,
    counted: bool,
}

impl Histogram {
    /// Counts of integer bin indices.
    pub fn from_indices(width: f64, indices: impl IntoIterator<Item = i64>) -> Result<Self> {
        check_width(width)?;
        let indices: Vec<i64> = indices.into_iter().collect();
        let (lo, hi) = match (indices.iter().min(), indices.iter().max()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => return Err(Error::EmptyInput("histogram samples")),
        };
        let mut weights = vec![0.0; (hi - lo + 1) as usize];
        for k in &indices {
            weights[(k - lo) as usize] += 1.0;
        }
        Ok(Histogram {
            width,
            first: lo,
            weights,
            total: indices.len() as f64,
            counted: true,
        })
    }

    /// Probability masses of bins `first, first + 1, ...`.
    pub fn from_masses(width: f64, first: i64, masses: Vec<f64>) -> Result<Self> {
        check_width(width)?;
        if masses.is_empty() {
            return Err(Error::EmptyInput("histogram masses"));
        }
        if let Some(m) = masses.iter().find(|m| !(**m >= 0.0)) {
            return Err(Error::invalid(format!("negative or undefined mass {m}")));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Unnormalized(total));
        }
        Ok(Histogram {
            width,
            first,
            weights: masses,
            total,
            counted: false,
        })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Smallest and largest bin index with storage.
    pub fn index_range(&self) -> (i64, i64) {
        (self.first, self.first + self.weights.len() as i64 - 1)
    }

    /// Sample count, or 1 for a histogram built from masses.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn count(&self, k: i64) -> f64 {
        let i = k - self.first;
        if i < 0 || i >= self.weights.len() as i64 {
            0.0
        } else {
            self.weights[i as usize]
        }
    }

    pub fn mass(&self, k: i64) -> f64 {
        self.count(k) / self.total
    }

    pub fn density(&self, k: i64) -> f64 {
        self.mass(k) / self.width
    }

    /// `(k, centre, mass)` for every stored bin.
    pub fn bins(&self) -> impl Iterator<Item = (i64, f64, f64)> + '_ {
        self.weights.iter().enumerate().map(move |(i, w)| {
            let k = self.first + i as i64;
            (k, k as f64 * self.width, w / self.total)
        })
    }

    /// Riemann sum of the density.
    pub fn integral(&self) -> f64 {
        self.bins().map(|(_, _, m)| m / self.width * self.width).sum()
    }

    /// The histogram of the negated samples.
    pub fn reflect(&self) -> Histogram {
        let mut weights = self.weights.clone();
        weights.reverse();
        Histogram {
            width: self.width,
            first: -self.index_range().1,
            weights,
            total: self.total,
            counted: self.counted,
        }
    }

    /// Symmetrised masses `(m(k) + m(-k)) / 2`.
    pub fn symmetrize(&self) -> Histogram {
        let hi = self.index_range().1.max(-self.first);
        let masses = (-hi..=hi).map(|k| 0.5 * (self.mass(k) + self.mass(-k))).collect();
        Histogram {
            width: self.width,
            first: -hi,
            weights: masses,
            total: 1.0,
            counted: false,
        }
    }

    pub fn tv_distance(&self, other: &Histogram) -> Result<f64> {
        if self.width != other.width {
            return Err(Error::GridMismatch(format!("bin widths {} and {}", self.width, other.width)));
        }
        let lo = self.first.min(other.first);
        let hi = self.index_range().1.max(other.index_range().1);
        Ok(0.5 * (lo..=hi).map(|k| (self.mass(k) - other.mass(k)).abs()).sum::<f64>())
    }

    /// A multinomial resample with the same number of samples.
    pub fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Histogram> {
        let n = self.total;
        if !self.counted {
            return Err(Error::invalid("only count histograms can be resampled"));
        }
        let mut cumulative = Vec::with_capacity(self.weights.len());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cumulative.push(acc);
        }
        let mut weights = vec![0.0; self.weights.len()];
        for _ in 0..n as u64 {
            let u = rng.random::<f64>() * acc;
            let i = cumulative.partition_point(|&c| c <= u).min(weights.len() - 1);
            weights[i] += 1.0;
        }
        Ok(Histogram {
            width: self.width,
            first: self.first,
            weights,
            total: self.total,
            counted: true,
        })
    }

    /// Mean total-variation distance between bootstrap resamples and the
    /// histogram itself.
    pub fn bootstrap_tv_error<R: Rng + ?Sized>(&self, resamples: usize, rng: &mut R) -> Result<f64> {
        if resamples == 0 {
            return Err(Error::invalid("need at least one bootstrap resample"));
        }
        let mut sum = 0.0;
        for _ in 0..resamples {
            sum += self.resample(rng)?.tv_distance(self)?;
        }
        Ok(sum / resamples as f64)
    }

    /// Columns `bin_center_macro,density,count`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin_center_macro,density,count")?;
        for (k, centre, _) in self.bins() {
            writeln!(out, "{},{},{}", centre, self.density(k), self.count(k))?;
        }
        Ok(())
    }
}

fn check_width(width: f64) -> Result<()> {
    if width > 0.0 && width.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("bin width must be positive, got {width}")))
    }
}
