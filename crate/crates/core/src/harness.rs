//! Monte Carlo risk studies comparing the oracle-level and adaptive
//! estimators.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{
    adaptive_from_levels, calibrate_from_levels, pilot_levels, LepskiConfig, ResolutionGrid, KAPPA,
};
use crate::densities::{derive_seed, exact_t, DensityDescriptor};
use crate::error::{Error, Result};
use crate::estimator::{simulate_levels, truncated_exact, MEAN_TERM};
use crate::needlets::{FrameSummary, NeedletFrame, DEFAULT_B};
use crate::theory::argmin_first;

const TAG_REPLICATES: u64 = 11;
const TAG_PILOT: u64 = 12;
const DIM: usize = 2;

fn default_b() -> f64 {
    DEFAULT_B
}

fn default_pilot() -> DensityDescriptor {
    DensityDescriptor::Uniform {}
}

fn default_pilot_replicates() -> usize {
    100
}

fn default_kappa() -> f64 {
    KAPPA
}

/// How the Lepski constant `C₀` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum C0Policy {
    Fixed {
        value: f64,
    },
    Calibrated {
        #[serde(default = "default_pilot_replicates")]
        replicates: usize,
        #[serde(default = "default_kappa")]
        kappa: f64,
        #[serde(default = "default_pilot")]
        pilot: DensityDescriptor,
    },
}

impl Default for C0Policy {
    fn default() -> Self {
        C0Policy::Calibrated {
            replicates: default_pilot_replicates(),
            kappa: KAPPA,
            pilot: default_pilot(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub density: DensityDescriptor,
    pub r: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default)]
    pub j_min: usize,
    /// Defaults to `⌊ln n / ((d+4r) ln B)⌋` per sample size.
    #[serde(default)]
    pub j_max: Option<usize>,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub c0: C0Policy,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::InvalidArgument(format!(
                "replicates must be >= 2, got {}",
                self.replicates
            )));
        }
        if self.sample_sizes.is_empty() {
            return Err(Error::InvalidArgument("no sample sizes given".into()));
        }
        if self.sample_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "sample sizes must be strictly ascending".into(),
            ));
        }
        if self.sample_sizes[0] < 2 {
            return Err(Error::SampleTooSmall {
                needed: 2,
                got: self.sample_sizes[0],
            });
        }
        if !(self.r >= 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "r must be >= 0, got {}",
                self.r
            )));
        }
        if !(self.b > 1.0) || !self.b.is_finite() {
            return Err(Error::InvalidBandRatio(self.b));
        }
        match &self.c0 {
            C0Policy::Fixed { value } if !(*value > 0.0) => {
                return Err(Error::InvalidArgument(format!(
                    "C0 must be positive, got {value}"
                )))
            }
            C0Policy::Calibrated {
                replicates, kappa, ..
            } if *replicates < 2 || !(*kappa > 0.0) => {
                return Err(Error::InvalidArgument(
                    "calibration needs >= 2 replicates and kappa > 0".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn grid_for(&self, n: usize) -> Result<ResolutionGrid> {
        let j_max = self
            .j_max
            .unwrap_or_else(|| ResolutionGrid::default_j_max(n, self.r, DIM, self.b))
            .max(self.j_min);
        ResolutionGrid::new(self.j_min, j_max, self.b)
    }
}

/// Results at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPoint {
    pub n: usize,
    pub oracle_risk: f64,
    pub adaptive_risk: f64,
    pub mean_j_hat: f64,
    pub freq_oversmooth: f64,
    pub se_oracle: f64,
    pub se_adaptive: f64,
    pub j_star: usize,
    pub c0: f64,
    pub c_var: f64,
    pub grid: ResolutionGrid,
    pub j_hat_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub spec: ExperimentSpec,
    pub truth: f64,
    pub frame: FrameSummary,
    pub points: Vec<RiskPoint>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Oracle level from exact squared truncation bias and a calibrated
/// variance curve `c_var B^{J(d+4r)}/n`; ties go to the smaller level.
pub fn oracle_level(bias2: &[f64], c_var: f64, grid: &ResolutionGrid, r: f64, n: usize) -> usize {
    let mse: Vec<f64> = grid
        .levels()
        .zip(bias2)
        .map(|(j, b2)| b2 + c_var * grid.b.powf(j as f64 * (DIM as f64 + 4.0 * r)) / n as f64)
        .collect();
    grid.j_min + argmin_first(&mse).unwrap_or(0)
}

/// `c_var = max_J Var(T̂^{(J)}) n / B^{J(d+4r)}` over pilot replicates.
pub fn calibrate_variance(pilot: &[Vec<f64>], grid: &ResolutionGrid, r: f64, n: usize) -> f64 {
    grid.levels()
        .map(|j| {
            let vals: Vec<f64> = pilot.iter().map(|v| v[..=j].iter().sum()).collect();
            sd(&vals).powi(2) * n as f64 / grid.b.powf(j as f64 * (DIM as f64 + 4.0 * r))
        })
        .fold(0.0, f64::max)
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<RiskCurve> {
    spec.validate()?;
    let f = spec.density.build()?;
    let truth = exact_t(&f, spec.r);
    let top = spec
        .sample_sizes
        .iter()
        .map(|&n| spec.grid_for(n).map(|g| g.j_max))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(0);
    let frame = NeedletFrame::new(spec.b, top)?;
    let mut points = Vec::with_capacity(spec.sample_sizes.len());
    for &n in &spec.sample_sizes {
        let grid = spec.grid_for(n)?;
        let bias2 = grid
            .levels()
            .map(|j| Ok((truth - truncated_exact(&f, &frame, spec.r, j)?).powi(2)))
            .collect::<Result<Vec<f64>>>()?;

        let (c0, c_var) = match &spec.c0 {
            C0Policy::Fixed { value } => {
                let pilot = pilot_levels(
                    &f,
                    &frame,
                    &grid,
                    spec.r,
                    n,
                    default_pilot_replicates(),
                    derive_seed(spec.seed, TAG_PILOT, n as u64),
                )?;
                (*value, calibrate_variance(&pilot, &grid, spec.r, n))
            }
            C0Policy::Calibrated {
                replicates,
                kappa,
                pilot,
            } => {
                let pilot_density = pilot.build()?;
                let levels = pilot_levels(
                    &pilot_density,
                    &frame,
                    &grid,
                    spec.r,
                    n,
                    *replicates,
                    derive_seed(spec.seed, TAG_PILOT, n as u64),
                )?;
                let c0 = if grid.len() > 1 {
                    calibrate_from_levels(&levels, &grid, n, spec.r, DIM, *kappa)?
                } else {
                    1.0
                };
                (c0, calibrate_variance(&levels, &grid, spec.r, n))
            }
        };
        let j_star = oracle_level(&bias2, c_var, &grid, spec.r, n);
        let lepski = LepskiConfig::new(c0, grid, spec.r, DIM)?;
        let rep_seed = derive_seed(spec.seed, TAG_REPLICATES, n as u64);
        let outcomes = (0..spec.replicates as u64)
            .into_par_iter()
            .map(|i| {
                let levels = simulate_levels(&f, &frame, spec.r, grid.j_max, n, rep_seed, i)?;
                let mean_term = if spec.r == 0.0 { MEAN_TERM } else { 0.0 };
                let oracle = mean_term + levels[..=j_star].iter().sum::<f64>();
                let adaptive = adaptive_from_levels(&levels, &lepski, n)?;
                Ok((oracle, adaptive.value, adaptive.j_hat))
            })
            .collect::<Result<Vec<_>>>()?;
        let reps = outcomes.len() as f64;
        let oracle_sq: Vec<f64> = outcomes.iter().map(|o| (o.0 - truth).powi(2)).collect();
        let adaptive_sq: Vec<f64> = outcomes.iter().map(|o| (o.1 - truth).powi(2)).collect();
        let mut counts = vec![0usize; grid.j_max + 1];
        for o in &outcomes {
            counts[o.2] += 1;
        }
        points.push(RiskPoint {
            n,
            oracle_risk: mean(&oracle_sq),
            adaptive_risk: mean(&adaptive_sq),
            mean_j_hat: outcomes.iter().map(|o| o.2 as f64).sum::<f64>() / reps,
            freq_oversmooth: outcomes.iter().filter(|o| o.2 > j_star).count() as f64 / reps,
            se_oracle: sd(&oracle_sq) / reps.sqrt(),
            se_adaptive: sd(&adaptive_sq) / reps.sqrt(),
            j_star,
            c0,
            c_var,
            grid,
            j_hat_counts: counts,
        });
    }
    Ok(RiskCurve {
        spec: spec.clone(),
        truth,
        frame: frame.summary(),
        points,
    })
}

pub const CSV_HEADER: [&str; 7] = [
    "n",
    "oracle_risk",
    "adaptive_risk",
    "mean_J_hat",
    "freq_oversmooth",
    "se_oracle",
    "se_adaptive",
];

/// Writes `risk_curve.csv` and `risk_curve.json` into `dir` and returns their
/// paths.
pub fn export_results(curve: &RiskCurve, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("risk_curve.csv");
    let json_path = dir.join("risk_curve.json");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(CSV_HEADER)?;
    for p in &curve.points {
        w.write_record([
            p.n.to_string(),
            p.oracle_risk.to_string(),
            p.adaptive_risk.to_string(),
            p.mean_j_hat.to_string(),
            p.freq_oversmooth.to_string(),
            p.se_oracle.to_string(),
            p.se_adaptive.to_string(),
        ])?;
    }
    w.flush()?;
    fs::write(&json_path, serde_json::to_string_pretty(curve)? + "\n")?;
    Ok(vec![csv_path, json_path])
}

/// Reads back a curve written by [`export_results`].
pub fn load_results(json_path: &Path) -> Result<RiskCurve> {
    Ok(serde_json::from_str(&fs::read_to_string(json_path)?)?)
}
