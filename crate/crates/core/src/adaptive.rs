//! Lepski selection of the resolution level and the adaptive estimator.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::{SphericalSample, TestDensity};
use crate::error::{Error, Result};
use crate::estimator::{
    simulate_levels, split_level_contributions, EstimatorConfig, TruncatedEstimate, MEAN_TERM,
};
use crate::needlets::NeedletFrame;

/// Safety factor applied to the calibrated fluctuation constant: roughly a
/// two-sided 1% quantile per comparison, inflated by the ≈1.15 ratio between
/// the sd of a multi-level difference and that of its top level.
pub const KAPPA: f64 = 3.0;

/// Minimum number of pilot replicates for [`calibrate_c0`].
pub const MIN_CALIBRATION_REPLICATES: usize = 50;

/// Admissible levels `J_min..=J_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionGrid {
    pub j_min: usize,
    pub j_max: usize,
    pub b: f64,
}

impl ResolutionGrid {
    pub fn new(j_min: usize, j_max: usize, b: f64) -> Result<Self> {
        if j_min > j_max {
            return Err(Error::InvalidArgument(format!(
                "J_min = {j_min} exceeds J_max = {j_max}"
            )));
        }
        if !(b > 1.0) || !b.is_finite() {
            return Err(Error::InvalidBandRatio(b));
        }
        Ok(Self { j_min, j_max, b })
    }

    /// `⌊ln n / ((d + 4r) ln B)⌋`, the largest level whose variance term
    /// `B^{J(d+4r)}/n` stays of order one.
    pub fn default_j_max(n: usize, r: f64, d: usize, b: f64) -> usize {
        let v = (n.max(1) as f64).ln() / ((d as f64 + 4.0 * r) * b.ln());
        (v + 1e-12).floor().max(0.0) as usize
    }

    /// `0..=default_j_max(n, r, d, b)`.
    pub fn for_sample_size(n: usize, r: f64, d: usize, b: f64) -> Result<Self> {
        Self::new(0, Self::default_j_max(n, r, d, b), b)
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<usize> {
        self.j_min..=self.j_max
    }

    pub fn len(&self) -> usize {
        self.j_max - self.j_min + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LepskiConfig {
    pub c0: f64,
    pub grid: ResolutionGrid,
    pub r: f64,
    pub d: usize,
}

impl LepskiConfig {
    pub fn new(c0: f64, grid: ResolutionGrid, r: f64, d: usize) -> Result<Self> {
        if !(c0 > 0.0) || !c0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "C0 must be positive, got {c0}"
            )));
        }
        Ok(Self { c0, grid, r, d })
    }

    fn exponent(&self) -> f64 {
        self.d as f64 / 2.0 + 2.0 * self.r
    }
}

/// `ω(J) = C₀ n^{−1/2} B^{J(d/2 + 2r)}`.
pub fn omega(j: usize, n: usize, cfg: &LepskiConfig) -> f64 {
    cfg.c0 / (n as f64).sqrt() * cfg.grid.b.powf(j as f64 * cfg.exponent())
}

/// Lepski rule on estimates `values[i] = T̂^{(J_min + i)}`.
pub fn select_j_values(values: &[f64], cfg: &LepskiConfig, n: usize) -> Result<usize> {
    if values.len() != cfg.grid.len() {
        return Err(Error::GridMismatch(format!(
            "{} estimates for a grid of {} levels",
            values.len(),
            cfg.grid.len()
        )));
    }
    let thresholds: Vec<f64> = cfg.grid.levels().map(|j| omega(j, n, cfg)).collect();
    let admissible =
        |i: usize| (i + 1..values.len()).all(|k| (values[i] - values[k]).abs() <= thresholds[k]);
    let first = (0..values.len()).find(|&i| admissible(i));
    // The last level is vacuously admissible, so this always finds one.
    Ok(cfg.grid.j_min + first.unwrap_or(values.len() - 1))
}

/// `Ĵ = min{J : |T̂^{(J)} − T̂^{(J')}| ≤ ω(J') for all J' > J}`, falling back to
/// `J_max`.
pub fn select_j(
    estimates: &BTreeMap<usize, TruncatedEstimate>,
    cfg: &LepskiConfig,
    n: usize,
) -> Result<usize> {
    let keys: Vec<usize> = estimates.keys().copied().collect();
    let expected: Vec<usize> = cfg.grid.levels().collect();
    if keys != expected {
        return Err(Error::GridMismatch(format!(
            "estimates at levels {keys:?}, grid {expected:?}"
        )));
    }
    let values: Vec<f64> = estimates.values().map(|e| e.value).collect();
    select_j_values(&values, cfg, n)
}

/// `T̂^{(J)}` for every `J` in the grid, from per-level contributions
/// starting at level 0.
pub fn grid_estimates(levels: &[f64], grid: &ResolutionGrid, r: f64) -> Result<Vec<f64>> {
    if levels.len() <= grid.j_max {
        return Err(Error::GridMismatch(format!(
            "{} level contributions for J_max = {}",
            levels.len(),
            grid.j_max
        )));
    }
    let mean = if r == 0.0 { MEAN_TERM } else { 0.0 };
    let mut acc = mean;
    let mut out = Vec::with_capacity(grid.len());
    for (j, v) in levels[..=grid.j_max].iter().enumerate() {
        acc += v;
        if j >= grid.j_min {
            out.push(acc);
        }
    }
    Ok(out)
}

/// Adaptive estimate `T̃_r = T̂^{(Ĵ)}` with the quantities behind the choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveEstimate {
    pub value: f64,
    pub j_hat: usize,
    pub c0: f64,
    pub levels: Vec<usize>,
    pub per_level_estimates: Vec<f64>,
    pub thresholds: Vec<f64>,
}

/// Selection from precomputed level contributions (one split of one sample).
pub fn adaptive_from_levels(
    levels: &[f64],
    cfg: &LepskiConfig,
    n: usize,
) -> Result<AdaptiveEstimate> {
    let values = grid_estimates(levels, &cfg.grid, cfg.r)?;
    let j_hat = select_j_values(&values, cfg, n)?;
    Ok(AdaptiveEstimate {
        value: values[j_hat - cfg.grid.j_min],
        j_hat,
        c0: cfg.c0,
        levels: cfg.grid.levels().collect(),
        thresholds: cfg.grid.levels().map(|j| omega(j, n, cfg)).collect(),
        per_level_estimates: values,
    })
}

/// Computes every `T̂^{(J)}` on the grid from a single split and applies the
/// Lepski rule.
pub fn adaptive_estimate(
    sample: &SphericalSample,
    frame: &NeedletFrame,
    cfg: &LepskiConfig,
    split_seed: u64,
) -> Result<AdaptiveEstimate> {
    let levels = split_level_contributions(sample, frame, cfg.r, cfg.grid.j_max, split_seed)?;
    adaptive_from_levels(&levels, cfg, sample.len())
}

/// Builds the `TruncatedEstimate` map consumed by [`select_j`].
pub fn estimates_by_level(
    levels: &[f64],
    grid: &ResolutionGrid,
    r: f64,
    n: usize,
    split_seed: u64,
) -> Result<BTreeMap<usize, TruncatedEstimate>> {
    grid.levels()
        .map(|j| {
            let e =
                TruncatedEstimate::from_levels(levels, n, EstimatorConfig::new(r, j, split_seed))?;
            Ok((j, e))
        })
        .collect()
}

/// `κ · max_J sd(T̂^{(J)} − T̂^{(J+1)}) √n B^{−(J+1)(d/2+2r)}` from replicated
/// level contributions (`replicates[i][j]`, levels from 0).
pub fn calibrate_from_levels(
    replicates: &[Vec<f64>],
    grid: &ResolutionGrid,
    n: usize,
    r: f64,
    d: usize,
    kappa: f64,
) -> Result<f64> {
    if replicates.len() < 2 {
        return Err(Error::DegenerateCalibration(format!(
            "{} pilot replicates",
            replicates.len()
        )));
    }
    if grid.len() < 2 {
        return Err(Error::DegenerateCalibration(
            "grid has a single level; no adjacent pairs".into(),
        ));
    }
    if replicates.iter().any(|v| v.len() <= grid.j_max) {
        return Err(Error::GridMismatch(
            "pilot contributions shorter than grid".into(),
        ));
    }
    let exponent = d as f64 / 2.0 + 2.0 * r;
    let reps = replicates.len() as f64;
    let mut best: f64 = 0.0;
    for j in grid.j_min..grid.j_max {
        // T̂^{(J)} − T̂^{(J+1)} is minus the level-(J+1) contribution.
        let col: Vec<f64> = replicates.iter().map(|v| v[j + 1]).collect();
        if col.iter().all(|&x| x == col[0]) {
            continue;
        }
        let m = col.iter().sum::<f64>() / reps;
        let sd = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps - 1.0)).sqrt();
        best = best.max(sd * (n as f64).sqrt() * grid.b.powf(-((j + 1) as f64) * exponent));
    }
    let c0 = kappa * best;
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(Error::DegenerateCalibration(format!(
            "calibrated C0 = {c0}; pilot differences have no spread"
        )));
    }
    Ok(c0)
}

/// Pilot replicates of level contributions up to `grid.j_max`.
pub fn pilot_levels(
    pilot: &TestDensity,
    frame: &NeedletFrame,
    grid: &ResolutionGrid,
    r: f64,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..replicates as u64)
        .into_par_iter()
        .map(|i| simulate_levels(pilot, frame, r, grid.j_max, n, seed, i))
        .collect()
}

/// Calibrates `C₀` by simulation under `pilot` (usually the uniform density)
/// with safety factor `kappa`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_c0_with(
    pilot: &TestDensity,
    frame: &NeedletFrame,
    grid: &ResolutionGrid,
    r: f64,
    n: usize,
    replicates: usize,
    seed: u64,
    kappa: f64,
) -> Result<f64> {
    if replicates < MIN_CALIBRATION_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "calibration needs at least {MIN_CALIBRATION_REPLICATES} replicates, got {replicates}"
        )));
    }
    let levels = pilot_levels(pilot, frame, grid, r, n, replicates, seed)?;
    calibrate_from_levels(&levels, grid, n, r, 2, kappa)
}

/// [`calibrate_c0_with`] at the default safety factor [`KAPPA`].
pub fn calibrate_c0(
    pilot: &TestDensity,
    frame: &NeedletFrame,
    grid: &ResolutionGrid,
    r: f64,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<f64> {
    calibrate_c0_with(pilot, frame, grid, r, n, replicates, seed, KAPPA)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::densities::{make_zonal_density, sample};
    use crate::estimator::estimate_truncated;
    use crate::harmonics::UnitVector;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn cfg(c0: f64, j_min: usize, j_max: usize) -> LepskiConfig {
        LepskiConfig::new(c0, ResolutionGrid::new(j_min, j_max, 2.0).unwrap(), 0.0, 2).unwrap()
    }

    #[test]
    fn grid_defaults() {
        assert_eq!(ResolutionGrid::default_j_max(2000, 0.0, 2, 2.0), 5);
        assert_eq!(ResolutionGrid::default_j_max(8000, 0.0, 2, 2.0), 6);
        assert_eq!(ResolutionGrid::default_j_max(32000, 0.0, 2, 2.0), 7);
        assert_eq!(ResolutionGrid::default_j_max(4096, 1.0, 2, 2.0), 2);
        assert_eq!(ResolutionGrid::default_j_max(1, 0.0, 2, 2.0), 0);
        assert!(ResolutionGrid::new(3, 2, 2.0).is_err());
        assert!(ResolutionGrid::new(0, 2, 1.0).is_err());
        assert!(LepskiConfig::new(0.0, ResolutionGrid::new(0, 2, 2.0).unwrap(), 0.0, 2).is_err());
    }

    #[test]
    fn omega_examples() {
        let c = cfg(1.0, 0, 4);
        assert_abs_diff_eq!(omega(0, 1000, &c), 1.0 / 1000f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(omega(2, 1000, &c), 0.126491, epsilon = 1e-6);
        let mut c1 = c;
        c1.r = 0.5;
        assert_relative_eq!(
            omega(3, 50, &c1) / omega(2, 50, &c1),
            2f64.powf(2.0),
            max_relative = 1e-12
        );
    }

    #[test]
    fn select_walkthrough() {
        let c = cfg(1.0, 0, 4);
        let n = 100;
        assert_eq!(select_j_values(&[0.3; 5], &c, n).unwrap(), 0);
        // J=0 differs from J'=2 by more than ω(2) = 0.4, but every
        // difference from J=1 is admissible.
        let v = [0.0, 0.45, 0.5, 0.55, 0.6];
        assert!(v[0] - v[2] < -omega(2, n, &c));
        assert_eq!(select_j_values(&v, &c, n).unwrap(), 1);
        // Wild jumps at every level fall back to J_max.
        let w = [0.0, 10.0, -10.0, 20.0, -20.0];
        assert_eq!(select_j_values(&w, &c, n).unwrap(), 4);
        assert!(select_j_values(&[0.0; 3], &c, n).is_err());
        let single = cfg(1.0, 2, 2);
        assert_eq!(select_j_values(&[5.0], &single, n).unwrap(), 2);
    }

    #[test]
    fn select_on_estimate_map() {
        let grid = ResolutionGrid::new(1, 3, 2.0).unwrap();
        let c = LepskiConfig::new(1.0, grid, 0.0, 2).unwrap();
        let levels = [0.01, 0.02, 0.0, 0.0];
        let map = estimates_by_level(&levels, &grid, 0.0, 100, 0).unwrap();
        assert_eq!(select_j(&map, &c, 100).unwrap(), 1);
        let mut partial = map.clone();
        partial.remove(&2);
        assert!(matches!(
            select_j(&partial, &c, 100),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn single_level_grid_matches_truncated_estimate() {
        let frame = NeedletFrame::new(2.0, 3).unwrap();
        let f = make_zonal_density(2, 0.1, UnitVector::NORTH).unwrap();
        let s = sample(&f, 300, 4).unwrap();
        let c = LepskiConfig::new(0.5, ResolutionGrid::new(2, 2, 2.0).unwrap(), 1.0, 2).unwrap();
        let a = adaptive_estimate(&s, &frame, &c, 9).unwrap();
        let t = estimate_truncated(&s, &frame, &EstimatorConfig::new(1.0, 2, 9)).unwrap();
        assert_eq!(a.j_hat, 2);
        assert_eq!(a.value, t.value);
        assert_eq!(a.thresholds.len(), 1);
    }

    #[test]
    fn thresholds_increase_with_level() {
        let frame = NeedletFrame::new(2.0, 4).unwrap();
        let s = sample(&TestDensity::uniform(), 200, 1).unwrap();
        let c = cfg(0.3, 0, 4);
        let a = adaptive_estimate(&s, &frame, &c, 2).unwrap();
        assert!(a.thresholds.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(a.per_level_estimates.len(), 5);
        assert_eq!(a.value, a.per_level_estimates[a.j_hat]);
    }

    #[test]
    fn uniform_adaptive_estimate_is_centered() {
        let frame = NeedletFrame::new(2.0, 4).unwrap();
        let n = 1000;
        let grid = ResolutionGrid::for_sample_size(n, 1.0, 2, 2.0).unwrap();
        let c = LepskiConfig::new(0.5, grid, 1.0, 2).unwrap();
        let reps = 200;
        let vals: Vec<f64> = (0..reps)
            .map(|i| {
                let levels =
                    simulate_levels(&TestDensity::uniform(), &frame, 1.0, grid.j_max, n, 3, i)
                        .unwrap();
                adaptive_from_levels(&levels, &c, n).unwrap().value
            })
            .collect();
        let m = vals.iter().sum::<f64>() / reps as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
        assert!(m.abs() <= 4.0 * sd / (reps as f64).sqrt());
    }

    #[test]
    fn degenerate_calibration_is_rejected() {
        let grid = ResolutionGrid::new(0, 3, 2.0).unwrap();
        let same = vec![vec![0.1, 0.2, 0.3, 0.4]; 60];
        assert!(matches!(
            calibrate_from_levels(&same, &grid, 1000, 0.0, 2, KAPPA),
            Err(Error::DegenerateCalibration(_))
        ));
        let frame = NeedletFrame::new(2.0, 3).unwrap();
        assert!(calibrate_c0(&TestDensity::uniform(), &frame, &grid, 0.0, 100, 10, 1).is_err());
    }

    #[test]
    fn calibration_is_stable_and_scales() {
        let n = 10_000;
        let grid = ResolutionGrid::for_sample_size(n, 0.0, 2, 2.0).unwrap();
        let frame = NeedletFrame::new(2.0, grid.j_max).unwrap();
        let u = TestDensity::uniform();
        let a = calibrate_c0(&u, &frame, &grid, 0.0, n, 60, 1).unwrap();
        let b = calibrate_c0(&u, &frame, &grid, 0.0, n, 60, 2).unwrap();
        assert!(a.is_finite() && a > 0.0);
        assert!((a / b - 1.0).abs() <= 0.2, "{a} vs {b}");
        // Under the uniform pilot the level differences are purely
        // quadratic, with sd ∝ B^{J}/n, so C₀ itself scales like n^{-1/2}.
        let small = 2500;
        let g2 = ResolutionGrid::new(0, grid.j_max, 2.0).unwrap();
        let c = calibrate_c0(&u, &frame, &g2, 0.0, small, 60, 1).unwrap();
        let ratio = a / c;
        assert!((ratio / 0.5 - 1.0).abs() <= 0.3, "ratio {ratio}");
    }

    proptest! {
        #[test]
        fn larger_c0_never_increases_j_hat(
            values in proptest::collection::vec(-1.0f64..1.0, 6),
            c_small in 0.01f64..5.0,
            factor in 1.0f64..10.0,
        ) {
            let lo = cfg(c_small, 0, 5);
            let hi = cfg(c_small * factor, 0, 5);
            let a = select_j_values(&values, &lo, 50).unwrap();
            let b = select_j_values(&values, &hi, 50).unwrap();
            prop_assert!(b <= a);
        }
    }
}
