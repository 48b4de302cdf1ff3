use serde::Serialize;

use super::{Batched, CheckRecord, Histogram};
use crate::error::{Error, Result};
use crate::wasep::{discrete_abs, discrete_laplacian};

/// `Var(h_eps(t, eps k))` for `k` in `first..first + var.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct VarProfile {
    eps: f64,
    first: i64,
    var: Vec<f64>,
    edge_tolerance: f64,
}

impl VarProfile {
    pub fn new(eps: f64, first: i64, var: Vec<f64>) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {eps}")));
        }
        if var.is_empty() {
            return Err(Error::EmptyInput("variance profile"));
        }
        Ok(VarProfile {
            eps,
            first,
            var,
            edge_tolerance: 1e-9,
        })
    }

    /// Largest `|Var - |x|_eps|` accepted at the two ends of the window.
    pub fn with_edge_tolerance(mut self, tol: f64) -> Self {
        self.edge_tolerance = tol;
        self
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn index_range(&self) -> (i64, i64) {
        (self.first, self.first + self.var.len() as i64 - 1)
    }

    pub fn var(&self, k: i64) -> Option<f64> {
        let i = k - self.first;
        (i >= 0).then(|| self.var.get(i as usize).copied()).flatten()
    }

    /// `Var(h_eps(t, eps k)) - |eps k|`.
    pub fn excess(&self, k: i64) -> Option<f64> {
        self.var(k).map(|v| v - self.eps * k.abs() as f64)
    }

    pub fn is_decayed(&self) -> bool {
        let (lo, hi) = self.index_range();
        [lo, hi]
            .iter()
            .all(|&k| self.excess(k).is_some_and(|g| g.abs() <= self.edge_tolerance))
    }

    /// The profile `x -> |x| + 2 sum_{z > x} (z - x) m(z)` of a histogram,
    /// sampled on `[-half, half]`.
    pub fn from_histogram(h: &Histogram, half: i64) -> Result<Self> {
        let eps = h.width();
        let var = (-half..=half)
            .map(|k| reconstruct_var_from_s(eps * k as f64, h))
            .collect::<Result<Vec<_>>>()?;
        VarProfile::new(eps, -half, var)
    }
}

fn check_grid(width: f64, eps: f64) -> Result<()> {
    if (width - eps).abs() > 1e-12 * eps {
        return Err(Error::GridMismatch(format!("bin width {width} but eps = {eps}")));
    }
    Ok(())
}

fn check_normalized(h: &Histogram) -> Result<()> {
    let total: f64 = h.bins().map(|(_, _, m)| m).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Unnormalized(total));
    }
    Ok(())
}

/// `sum_k |eps k|_eps^m m(k)`.
pub fn moment_of_histogram(h: &Histogram, m: f64, eps: f64) -> Result<f64> {
    if !(m >= 0.0) {
        return Err(Error::invalid(format!("moment order must be nonnegative, got {m}")));
    }
    check_grid(h.width(), eps)?;
    check_normalized(h)?;
    Ok(h.bins().map(|(_, x, mass)| discrete_abs(x, eps).powf(m) * mass).sum())
}

/// `D(t) = t^{-1} sum x^2 m(x)`.
pub fn diffusivity(t: f64, h: &Histogram) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("diffusivity needs t > 0, got {t}")));
    }
    Ok(moment_of_histogram(h, 2.0, h.width())? / t)
}

/// `|x|_eps + 2 sum_{z > |x|_eps} (z - |x|_eps) m(z)`, with `m` the
/// symmetrised masses of `h`.
pub fn reconstruct_var_from_s(x: f64, h: &Histogram) -> Result<f64> {
    check_normalized(h)?;
    let eps = h.width();
    let x = discrete_abs(x, eps);
    let tail: f64 = h
        .bins()
        .map(|(_, z, m)| (z.abs() - x).max(0.0) * m)
        .sum();
    Ok(x + tail)
}

/// `sum_k eps Delta_eps(|.|_eps^m)(eps k) [Var - |x|_eps](eps k)`, with the
/// excess taken as zero outside the profile window.
pub fn weighted_var_integral(profile: &VarProfile, m: f64, eps: f64) -> Result<f64> {
    if !(m >= 1.0) {
        return Err(Error::invalid(format!("weight exponent must be >= 1, got {m}")));
    }
    check_grid(profile.eps, eps)?;
    if !profile.is_decayed() {
        let (lo, hi) = profile.index_range();
        return Err(Error::NotDecayed(format!(
            "Var - |x| is {} and {} at the window edges, tolerance {}",
            profile.excess(lo).unwrap_or(f64::NAN),
            profile.excess(hi).unwrap_or(f64::NAN),
            profile.edge_tolerance
        )));
    }
    let weight = |x: f64| discrete_abs(x, eps).powf(m);
    let (lo, hi) = profile.index_range();
    Ok((lo..=hi)
        .map(|k| {
            let x = eps * k as f64;
            eps * discrete_laplacian(weight, x, eps) * profile.excess(k).unwrap_or(0.0)
        })
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LaplacianReport {
    /// Histogram mass of each block against the same mass read off the
    /// variance profile.
    pub blocks: Vec<CheckRecord>,
    /// `Var - |x|_eps >= 0` on the coarse grid.
    pub nonnegative: Vec<CheckRecord>,
    /// `Var - |x|_eps` nonincreasing in `|x|` along the coarse grid.
    pub monotone: Vec<CheckRecord>,
}

impl LaplacianReport {
    pub fn records(&self) -> impl Iterator<Item = &CheckRecord> {
        self.blocks.iter().chain(&self.nonnegative).chain(&self.monotone)
    }

    pub fn all_pass(&self) -> bool {
        self.records().all(|r| r.pass)
    }
}

/// Mass the profile assigns to bins `a..=b`:
/// `(1 / 2 eps) [(V(b+1) - V(b)) - (V(a) - V(a-1))]`.
fn block_mass(v: &VarProfile, a: i64, b: i64) -> f64 {
    let at = |k| v.var(k).unwrap_or(f64::NAN);
    0.5 / v.eps * ((at(b + 1) - at(b)) - (at(a) - at(a - 1)))
}

/// Compares `S_eps = Delta_eps Var(h_eps)` on blocks of `block` bins, and
/// checks sign and monotonicity of `Var - |x|_eps` on every `block`-th site.
///
/// The variance profile and the histogram must come from independent
/// replica sets. Each uses its own batches for its error bar.
pub fn identity_laplacian(
    var: &Batched<VarProfile>,
    s: &Batched<Histogram>,
    eps: f64,
    block: usize,
    k: f64,
) -> Result<LaplacianReport> {
    check_grid(var.full.eps, eps)?;
    check_grid(s.full.width(), eps)?;
    let (lo, hi) = var.full.index_range();
    if lo != -hi || hi < 1 {
        return Err(Error::GridMismatch(format!(
            "variance profile must cover a symmetric window, got [{lo}, {hi}]"
        )));
    }
    if var.batches.iter().any(|b| b.index_range() != (lo, hi)) {
        return Err(Error::GridMismatch("batch profiles use different windows".into()));
    }
    if block == 0 {
        return Err(Error::invalid("block size must be positive"));
    }
    let b = block as i64;
    let mut blocks = Vec::new();
    // blocks tile [-(hi-1), hi-1] symmetrically, one of them centred on 0
    let half = (b - 1) / 2;
    let mut a = -half - b * ((hi - 1 - half) / b);
    while a < hi {
        let end = (a + b - 1).min(hi - 1);
        let start = a.max(-(hi - 1));
        let lhs = s.estimate(|h| (start..=end).map(|j| h.mass(j)).sum());
        let rhs = var.estimate(|v| block_mass(v, start, end));
        blocks.push(CheckRecord::independent(
            format!("laplacian_block[{},{}]", eps * start as f64, eps * end as f64),
            lhs,
            rhs,
            k,
        ));
        a += b;
    }
    let grid: Vec<i64> = (0..=hi).step_by(block).collect();
    let sym = |v: &VarProfile, j: i64| 0.5 * (v.excess(j).unwrap() + v.excess(-j).unwrap());
    let nonnegative = grid
        .iter()
        .map(|&j| {
            let g = var.estimate(|v| sym(v, j));
            CheckRecord::at_most(
                format!("var_excess_nonnegative[x={}]", eps * j as f64),
                0.0,
                g.value,
                g.stderr,
                k,
            )
        })
        .collect();
    let monotone = grid
        .windows(2)
        .map(|w| {
            let (near, far) = (w[0], w[1]);
            let diff = var.estimate(|v| sym(v, far) - sym(v, near));
            let near_v = var.estimate(|v| sym(v, near)).value;
            CheckRecord::at_most(
                format!("var_excess_monotone[x={}->{}]", eps * near as f64, eps * far as f64),
                near_v + diff.value,
                near_v,
                diff.stderr,
                k,
            )
        })
        .collect();
    Ok(LaplacianReport {
        blocks,
        nonnegative,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn two_point(eps: f64, a: i64) -> Histogram {
        Histogram::from_indices(eps, [-a, a]).unwrap()
    }

    fn exact<T: Clone>(x: T) -> Batched<T> {
        Batched::new(x.clone(), vec![x.clone(), x]).unwrap()
    }

    #[test]
    fn moments_of_simple_histograms() {
        let point = Histogram::from_indices(0.1, [0, 0]).unwrap();
        for m in [1.0, 2.0, 2.5] {
            assert_eq!(moment_of_histogram(&point, m, 0.1).unwrap(), 0.0);
        }
        let h = Histogram::from_masses(1.0, -1, vec![0.25, 0.5, 0.25]).unwrap();
        assert!((moment_of_histogram(&h, 2.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(moment_of_histogram(&h, -1.0, 1.0).is_err());
        assert!(matches!(moment_of_histogram(&h, 2.0, 0.5), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn gaussian_second_moment_and_diffusivity() {
        let eps = 0.05;
        let t: f64 = 3.0;
        let normal = Normal::new(0.0, t.sqrt()).unwrap();
        let mut rng = derive_stream(17, 0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let h = Histogram::from_indices(eps, xs.iter().map(|x| (x / eps + 0.5).floor() as i64)).unwrap();
        // binning adds eps^2 / 12 in expectation; var of x^2 is 2 t^2
        let truth = t + eps * eps / 12.0;
        let se = (2.0 * t * t / n as f64).sqrt();
        let m2 = moment_of_histogram(&h, 2.0, eps).unwrap();
        assert!((m2 - truth).abs() < 4.0 * se, "{m2} vs {truth}");
        let d = diffusivity(t, &h).unwrap();
        assert!((d - truth / t).abs() < 4.0 * se / t);
        assert!(diffusivity(0.0, &h).is_err());
        assert_eq!(diffusivity(2.0, &Histogram::from_indices(eps, [0]).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn diffusivity_of_known_second_moment() {
        // masses 1/2 at +-2 give a second moment of 4
        let h = Histogram::from_masses(1.0, -2, vec![0.5, 0.0, 0.0, 0.0, 0.5]).unwrap();
        assert!((diffusivity(2.0, &h).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn reconstruction_of_two_point_law() {
        let eps = 0.1;
        let h = two_point(eps, 7);
        let a = 0.7;
        assert!((reconstruct_var_from_s(0.0, &h).unwrap() - a).abs() < 1e-12);
        for x in [0.7, 0.9, 3.0] {
            assert!((reconstruct_var_from_s(x, &h).unwrap() - x).abs() < 1e-12);
            assert!((reconstruct_var_from_s(-x, &h).unwrap() - x).abs() < 1e-12);
        }
        // v0 identity: Var(0) is the first absolute moment
        assert!(
            (reconstruct_var_from_s(0.0, &h).unwrap() - moment_of_histogram(&h, 1.0, eps).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn abs_profile_has_all_mass_at_centre() {
        let eps = 0.25;
        let half = 12;
        let var: Vec<f64> = (-half..=half).map(|k| eps * (k as f64).abs()).collect();
        let v = VarProfile::new(eps, -half, var).unwrap();
        for m in [1.0, 1.5, 2.0, 2.9] {
            assert_eq!(weighted_var_integral(&v, m, eps).unwrap(), 0.0);
        }
        let point = Histogram::from_indices(eps, [0; 4]).unwrap();
        let rep = identity_laplacian(&exact(v.clone()), &exact(point), eps, 1, 3.0).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        let centre = rep.blocks.iter().find(|r| r.check_name == "laplacian_block[0,0]").unwrap();
        assert!((centre.rhs - 1.0).abs() < 1e-12);
        for r in rep.blocks.iter().filter(|r| r.check_name != "laplacian_block[0,0]") {
            assert!(r.rhs.abs() < 1e-12);
        }
    }

    #[test]
    fn undecayed_profile_rejected() {
        let v = VarProfile::new(0.1, -2, vec![1.0; 5]).unwrap();
        assert!(matches!(weighted_var_integral(&v, 2.0, 0.1), Err(Error::NotDecayed(_))));
        assert!(weighted_var_integral(&v, 0.5, 0.1).is_err());
    }

    #[test]
    fn laplacian_grid_errors() {
        let v = VarProfile::new(0.1, -2, vec![0.2, 0.1, 0.0, 0.1, 0.2]).unwrap();
        let h = Histogram::from_indices(0.2, [0]).unwrap();
        assert!(matches!(
            identity_laplacian(&exact(v.clone()), &exact(h), 0.1, 1, 3.0),
            Err(Error::GridMismatch(_))
        ));
        let lopsided = VarProfile::new(0.1, -1, vec![0.1, 0.0, 0.1, 0.2]).unwrap();
        let h = Histogram::from_indices(0.1, [0]).unwrap();
        assert!(identity_laplacian(&exact(lopsided), &exact(h), 0.1, 1, 3.0).is_err());
    }

    /// Integer support in `[-r, r]` with random counts, symmetrised.
    fn symmetric_law(counts: &[u32]) -> Histogram {
        let r = counts.len() as i64 - 1;
        let idx: Vec<i64> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| {
                let k = i as i64;
                std::iter::repeat_n(k, c as usize).chain(std::iter::repeat_n(-k, c as usize))
            })
            .collect();
        let h = Histogram::from_indices(0.1, idx).unwrap();
        assert!(h.index_range().1 <= r);
        h
    }

    proptest! {
        #[test]
        fn double_tail_sum_inverts_laplacian(
            counts in prop::collection::vec(0u32..20, 1..12),
            block in 1usize..5,
        ) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let h = symmetric_law(&counts);
            let half = counts.len() as i64 + 3;
            let v = VarProfile::from_histogram(&h, half).unwrap();
            for k in -half + 1..half {
                let lap = block_mass(&v, k, k);
                prop_assert!((lap - h.mass(k)).abs() < 1e-12);
            }
            let rep = identity_laplacian(&exact(v), &exact(h), 0.1, block, 3.0).unwrap();
            prop_assert!(rep.all_pass());
            let total: f64 = rep.blocks.iter().map(|r| r.rhs).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn weighted_integral_matches_moment(
            counts in prop::collection::vec(0u32..20, 1..12),
            m in 1.0f64..3.0,
        ) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let h = symmetric_law(&counts);
            let v = VarProfile::from_histogram(&h, counts.len() as i64 + 2).unwrap();
            let lhs = weighted_var_integral(&v, m, 0.1).unwrap();
            let rhs = moment_of_histogram(&h, m, 0.1).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs), "{} vs {}", lhs, rhs);
        }
    }
}
