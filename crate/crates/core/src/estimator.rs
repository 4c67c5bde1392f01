//! Split-sample needlet estimator of truncated Sobolev functionals.

use std::f64::consts::PI;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::densities::{derive_seed, exact_t, sample, SphericalSample, TestDensity};
use crate::error::{Error, Result};
use crate::harmonics::{harmonic_count, harmonic_sums, UnitVector};
use crate::needlets::{frame_energy, NeedletCoefficients, NeedletFrame};

/// Stream tags for [`derive_seed`].
pub const TAG_SAMPLE: u64 = 1;
pub const TAG_SPLIT: u64 = 2;

/// `a_{0,0}² = 1/(4π)`, the known mean term of any density.
pub const MEAN_TERM: f64 = 1.0 / (4.0 * PI);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub r: f64,
    pub j: usize,
    pub split_seed: u64,
    pub include_mean_term: bool,
}

impl EstimatorConfig {
    /// The mean term is included exactly when `r = 0`.
    pub fn new(r: f64, j: usize, split_seed: u64) -> Self {
        Self {
            r,
            j,
            split_seed,
            include_mean_term: r == 0.0,
        }
    }
}

/// `T̂_r^{(J)}` with its per-level cross products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedEstimate {
    pub value: f64,
    pub per_level: Vec<f64>,
    pub n: usize,
    pub config: EstimatorConfig,
}

impl TruncatedEstimate {
    /// Builds `T̂^{(J)}` from the first `J+1` level contributions.
    pub fn from_levels(levels: &[f64], n: usize, config: EstimatorConfig) -> Result<Self> {
        if config.j >= levels.len() {
            return Err(Error::GridMismatch(format!(
                "level {} requested from {} contributions",
                config.j,
                levels.len()
            )));
        }
        let per_level = levels[..=config.j].to_vec();
        let mean = if config.include_mean_term {
            MEAN_TERM
        } else {
            0.0
        };
        let value = mean + per_level.iter().sum::<f64>();
        Ok(Self {
            value,
            per_level,
            n,
            config,
        })
    }
}

/// Seeded random split of `0..n` into halves of sizes `⌈n/2⌉` and `⌊n/2⌋`.
pub fn split_halves(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let second = idx.split_off(n.div_ceil(2));
    (idx, second)
}

fn gather(points: &[UnitVector], idx: &[usize]) -> Vec<UnitVector> {
    idx.iter().map(|&i| points[i]).collect()
}

/// `β̂^{(r)}_{j,k} = |D|⁻¹ Σ_{X_i ∈ D} ψ^{(r)}_{j,k}(X_i)` for `j ≤ J`,
/// evaluated atom by atom.
pub fn empirical_coefficients(
    frame: &NeedletFrame,
    half: &[UnitVector],
    r: f64,
    j_max: usize,
) -> Result<NeedletCoefficients> {
    if half.is_empty() {
        return Err(Error::SampleTooSmall { needed: 1, got: 0 });
    }
    frame.level(j_max)?;
    let inv = 1.0 / half.len() as f64;
    let levels = (0..=j_max)
        .map(|j| {
            let level = frame.level(j)?;
            (0..level.len())
                .into_par_iter()
                .map(|k| {
                    let xi = level.rule().nodes()[k];
                    let scale = level.rule().weights()[k].sqrt();
                    let mut s = 0.0;
                    for x in half {
                        s += frame.atom_profile(j, r, xi.dot(x))?;
                    }
                    Ok(scale * s * inv)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NeedletCoefficients { r, levels })
}

/// Same coefficients as [`empirical_coefficients`], obtained by synthesizing
/// the empirical harmonic means `â_{ℓ,m}` at each node.
pub fn empirical_coefficients_spectral(
    frame: &NeedletFrame,
    half: &[UnitVector],
    r: f64,
    j_max: usize,
) -> Result<NeedletCoefficients> {
    if half.is_empty() {
        return Err(Error::SampleTooSmall { needed: 1, got: 0 });
    }
    let lmax = frame.max_degree(j_max)?;
    let means = harmonic_means(half, lmax)?;
    let levels = frame.levels()[..=j_max]
        .iter()
        .map(|level| frame.analyze_level(level, &means, lmax, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(NeedletCoefficients { r, levels })
}

fn harmonic_means(points: &[UnitVector], lmax: usize) -> Result<Vec<f64>> {
    let inv = 1.0 / points.len() as f64;
    let mut s = harmonic_sums(points, lmax)?;
    s.iter_mut().for_each(|v| *v *= inv);
    Ok(s)
}

/// Per-level cross products `Σ_k β̂_{j,k;(1)} β̂_{j,k;(2)}` for `j ≤ J`.
///
/// With exact cubature at each level the node sum collapses to
/// `Σ_{ℓ∈Λ_j} b²(ℓ/B^j) e_ℓ^r Σ_m â_{ℓ,m;(1)} â_{ℓ,m;(2)}`, which is what is
/// computed here.
pub fn level_contributions(
    frame: &NeedletFrame,
    first: &[UnitVector],
    second: &[UnitVector],
    r: f64,
    j_max: usize,
) -> Result<Vec<f64>> {
    if first.is_empty() || second.is_empty() {
        return Err(Error::SampleTooSmall {
            needed: 2,
            got: first.len() + second.len(),
        });
    }
    let lmax = frame.max_degree(j_max)?;
    let (a, b) = rayon::join(
        || harmonic_means(first, lmax),
        || harmonic_means(second, lmax),
    );
    let (a, b) = (a?, b?);
    debug_assert_eq!(a.len(), harmonic_count(lmax));
    let cross: Vec<f64> = (0..=lmax)
        .map(|l| {
            let range = l * l..(l + 1) * (l + 1);
            a[range.clone()]
                .iter()
                .zip(&b[range])
                .map(|(x, y)| x * y)
                .sum()
        })
        .collect();
    Ok(frame.levels()[..=j_max]
        .iter()
        .map(|level| {
            let (lo, hi) = level.band();
            (lo..=hi)
                .map(|l| level.sobolev_multiplier(l, r).powi(2) * cross[l])
                .sum()
        })
        .collect())
}

/// Splits the sample and returns the level contributions for `j ≤ j_max`.
pub fn split_level_contributions(
    sample: &SphericalSample,
    frame: &NeedletFrame,
    r: f64,
    j_max: usize,
    split_seed: u64,
) -> Result<Vec<f64>> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::SampleTooSmall { needed: 2, got: n });
    }
    frame.level(j_max)?;
    let (i1, i2) = split_halves(n, split_seed);
    let first = gather(sample.points(), &i1);
    let second = gather(sample.points(), &i2);
    level_contributions(frame, &first, &second, r, j_max)
}

/// `T̂_r^{(J)} = Σ_{j≤J} Σ_k β̂_{j,k;(1)} β̂_{j,k;(2)}`, plus `1/(4π)` when
/// the mean term is included.
pub fn estimate_truncated(
    sample: &SphericalSample,
    frame: &NeedletFrame,
    cfg: &EstimatorConfig,
) -> Result<TruncatedEstimate> {
    let levels = split_level_contributions(sample, frame, cfg.r, cfg.j, cfg.split_seed)?;
    TruncatedEstimate::from_levels(&levels, sample.len(), *cfg)
}

/// `T_r^{(J)}(f) = Σ_{j≤J} Σ_k (β^{(r)}_{j,k})²`, plus the mean term at
/// `r = 0`.
pub fn truncated_exact(f: &TestDensity, frame: &NeedletFrame, r: f64, j: usize) -> Result<f64> {
    let coeffs = frame.analyze(f.expansion(), r, j)?;
    let mean = if r == 0.0 { MEAN_TERM } else { 0.0 };
    Ok(mean + frame_energy(&coeffs, j)?)
}

/// Level contributions of replicate `index` for a given master seed.
pub fn simulate_levels(
    f: &TestDensity,
    frame: &NeedletFrame,
    r: f64,
    j_max: usize,
    n: usize,
    seed: u64,
    index: u64,
) -> Result<Vec<f64>> {
    let s = sample(f, n, derive_seed(seed, TAG_SAMPLE, index))?;
    split_level_contributions(&s, frame, r, j_max, derive_seed(seed, TAG_SPLIT, index))
}

/// Monte Carlo bias, variance and MSE of `T̂_r^{(J)}` against `T_r(f)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub n: usize,
    pub r: f64,
    pub j: usize,
    pub replicates: usize,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub se_bias: f64,
    pub se_variance: f64,
    pub se_mse: f64,
    #[serde(skip)]
    pub estimates: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Leave-one-out jackknife standard error of `stat`.
pub fn jackknife_se<F>(values: &[f64], stat: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    let n = values.len();
    if n < 3 {
        return f64::NAN;
    }
    let mut buf = Vec::with_capacity(n - 1);
    let loo: Vec<f64> = (0..n)
        .map(|i| {
            buf.clear();
            buf.extend(values[..i].iter().chain(&values[i + 1..]));
            stat(&buf)
        })
        .collect();
    let m = mean(&loo);
    let ss: f64 = loo.iter().map(|x| (x - m).powi(2)).sum();
    (ss * (n - 1) as f64 / n as f64).sqrt()
}

impl RiskReport {
    pub fn from_estimates(estimates: Vec<f64>, truth: f64, n: usize, r: f64, j: usize) -> Self {
        let m = mean(&estimates);
        let sq: Vec<f64> = estimates.iter().map(|x| (x - truth).powi(2)).collect();
        let reps = estimates.len();
        Self {
            n,
            r,
            j,
            replicates: reps,
            truth,
            mean: m,
            bias: m - truth,
            variance: sample_variance(&estimates),
            mse: mean(&sq),
            se_bias: (sample_variance(&estimates) / reps as f64).sqrt(),
            se_variance: jackknife_se(&estimates, sample_variance),
            se_mse: (sample_variance(&sq) / reps as f64).sqrt(),
            estimates,
        }
    }

    pub const CSV_HEADER: [&'static str; 7] = ["n", "r", "J", "bias", "var", "mse", "se"];

    /// Writes reports as CSV rows `n,r,J,bias,var,mse,se` (`se` is the
    /// standard error of the MSE).
    pub fn write_csv<W: Write>(reports: &[RiskReport], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in reports {
            w.write_record([
                r.n.to_string(),
                r.r.to_string(),
                r.j.to_string(),
                r.bias.to_string(),
                r.variance.to_string(),
                r.mse.to_string(),
                r.se_mse.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Replicated risk of `T̂_r^{(J)}`: samples use streams derived from `seed`,
/// splits use streams derived from `cfg.split_seed`.
pub fn mc_risk(
    f: &TestDensity,
    frame: &NeedletFrame,
    cfg: &EstimatorConfig,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<RiskReport> {
    if replicates < 2 {
        return Err(Error::InvalidArgument(format!(
            "mc_risk needs at least 2 replicates, got {replicates}"
        )));
    }
    frame.level(cfg.j)?;
    let estimates = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let s = sample(f, n, derive_seed(seed, TAG_SAMPLE, i))?;
            let levels = split_level_contributions(
                &s,
                frame,
                cfg.r,
                cfg.j,
                derive_seed(cfg.split_seed, TAG_SPLIT, i),
            )?;
            Ok(TruncatedEstimate::from_levels(&levels, n, *cfg)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(RiskReport::from_estimates(
        estimates,
        exact_t(f, cfg.r),
        n,
        cfg.r,
        cfg.j,
    ))
}
