//! Needlet window, frame construction, atoms and exact analysis of
//! bandlimited expansions.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::{
    addition_kernel, harmonic_count, legendre_table, real_harmonics, sobolev_weight,
    HarmonicExpansion, UnitVector, DEGREE_CAP,
};
use crate::quadrature::{gauss_legendre, sphere_cubature, CubatureRule};

/// Default band ratio.
pub const DEFAULT_B: f64 = 2.0;

const WINDOW_GL_POINTS: usize = 64;
const BAND_EPS: f64 = 1e-9;

fn bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Littlewood–Paley window built from the `exp(−1/(1−t²))` bump.
///
/// `phi` equals one on `[0, 1/B]`, zero on `[1, ∞)`, and `b²(t) = phi(t/B) −
/// phi(t)` telescopes to one over dyadic (B-adic) dilations.
#[derive(Debug, Clone)]
pub struct NeedletWindow {
    b: f64,
    gl_nodes: Vec<f64>,
    gl_weights: Vec<f64>,
    norm: f64,
}

impl NeedletWindow {
    pub fn new(b: f64) -> Result<Self> {
        if !(b > 1.0) || !b.is_finite() {
            return Err(Error::InvalidBandRatio(b));
        }
        let (gl_nodes, gl_weights) = gauss_legendre(WINDOW_GL_POINTS)?;
        let mut window = Self {
            b,
            gl_nodes,
            gl_weights,
            norm: 1.0,
        };
        window.norm = window.panel(-1.0, 0.0) + window.panel(0.0, 1.0);
        Ok(window)
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `∫_a^b g` by Gauss–Legendre.
    fn panel(&self, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        half * self
            .gl_nodes
            .iter()
            .zip(&self.gl_weights)
            .map(|(x, w)| w * bump(mid + half * x))
            .sum::<f64>()
    }

    /// `∫_u^1 g / ∫_{-1}^1 g`, splitting at the origin.
    fn upper_mass(&self, u: f64) -> f64 {
        let m = if u >= 0.0 {
            self.panel(u, 1.0)
        } else {
            self.panel(u, 0.0) + self.panel(0.0, 1.0)
        };
        (m / self.norm).clamp(0.0, 1.0)
    }

    /// Smooth transition: 1 for `t ≤ 1/B`, 0 for `t ≥ 1`.
    pub fn phi(&self, t: f64) -> f64 {
        let lo = 1.0 / self.b;
        if t <= lo {
            1.0
        } else if t >= 1.0 {
            0.0
        } else {
            let u = -1.0 + 2.0 * (t - lo) / (1.0 - lo);
            self.upper_mass(u)
        }
    }

    /// `b²(t) = phi(t/B) − phi(t)`.
    pub fn b_squared(&self, t: f64) -> f64 {
        (self.phi(t / self.b) - self.phi(t)).max(0.0)
    }

    /// Window value `b(t)`, supported on `[1/B, B]`.
    pub fn b_value(&self, t: f64) -> f64 {
        self.b_squared(t).sqrt()
    }
}

/// Build the window for band ratio `b`.
pub fn build_window(b: f64) -> Result<NeedletWindow> {
    NeedletWindow::new(b)
}

/// One resolution level of the frame.
#[derive(Debug, Clone)]
pub struct FrameLevel {
    level: usize,
    band_lo: usize,
    band_hi: usize,
    /// `b(ℓ/B^j)` for `ℓ ∈ band_lo..=band_hi`.
    band_weights: Vec<f64>,
    rule: CubatureRule,
}

impl FrameLevel {
    pub fn level(&self) -> usize {
        self.level
    }

    /// Inclusive degree range `⌈B^{j−1}⌉..=⌊B^{j+1}⌋` (starting at 1).
    pub fn band(&self) -> (usize, usize) {
        (self.band_lo, self.band_hi)
    }

    pub fn rule(&self) -> &CubatureRule {
        &self.rule
    }

    /// Number of atoms `K_j`.
    pub fn len(&self) -> usize {
        self.rule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rule.is_empty()
    }

    /// `b(ℓ/B^j)`, zero outside the band.
    pub fn weight(&self, degree: usize) -> f64 {
        if degree < self.band_lo || degree > self.band_hi {
            0.0
        } else {
            self.band_weights[degree - self.band_lo]
        }
    }

    /// Spectral multiplier of `ψ^{(r)}_{j,k}` at degree `ℓ`:
    /// `e_ℓ^{r/2} b(ℓ/B^j)`.
    pub fn sobolev_multiplier(&self, degree: usize, r: f64) -> f64 {
        self.weight(degree) * sobolev_weight(degree, r / 2.0)
    }
}

/// Spherical needlet frame on S² for levels `0..=j_cap`.
#[derive(Debug, Clone)]
pub struct NeedletFrame {
    window: NeedletWindow,
    levels: Vec<FrameLevel>,
}

/// JSON summary of the frame geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSummary {
    pub b: f64,
    pub levels: Vec<LevelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub band: [usize; 2],
    pub nodes: usize,
    pub exactness_degree: usize,
}

impl NeedletFrame {
    pub fn new(b: f64, j_cap: usize) -> Result<Self> {
        let window = NeedletWindow::new(b)?;
        let mut levels = Vec::with_capacity(j_cap + 1);
        for j in 0..=j_cap {
            let scale = b.powi(j as i32);
            let band_lo = ((scale / b - BAND_EPS).ceil() as usize).max(1);
            let band_hi = (scale * b + BAND_EPS).floor() as usize;
            let exactness = 2 * (scale * b - BAND_EPS).ceil() as usize;
            if exactness > 2 * DEGREE_CAP {
                return Err(Error::DegreeTooLarge {
                    degree: band_hi,
                    cap: DEGREE_CAP,
                });
            }
            let band_weights = (band_lo..=band_hi)
                .map(|l| window.b_value(l as f64 / scale))
                .collect();
            levels.push(FrameLevel {
                level: j,
                band_lo,
                band_hi,
                band_weights,
                rule: sphere_cubature(exactness)?,
            });
        }
        Ok(Self { window, levels })
    }

    pub fn window(&self) -> &NeedletWindow {
        &self.window
    }

    pub fn b(&self) -> f64 {
        self.window.b
    }

    pub fn j_cap(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[FrameLevel] {
        &self.levels
    }

    pub fn level(&self, j: usize) -> Result<&FrameLevel> {
        self.levels.get(j).ok_or(Error::LevelAboveCap {
            level: j,
            cap: self.j_cap(),
        })
    }

    /// Highest degree touched by levels `0..=j`.
    pub fn max_degree(&self, j: usize) -> Result<usize> {
        Ok(self.level(j)?.band_hi)
    }

    /// Smallest level whose truncation captures all degrees `1..=degree`
    /// exactly, i.e. `Σ_{j ≤ J} b²(ℓ/B^j) = 1` for every such `ℓ`.
    pub fn covering_level(&self, degree: usize) -> Option<usize> {
        self.levels.iter().position(|lvl| {
            (1..=degree).all(|l| {
                let s: f64 = self.levels[..=lvl.level]
                    .iter()
                    .map(|x| x.weight(l).powi(2))
                    .sum();
                (s - 1.0).abs() < 1e-12
            })
        })
    }

    pub fn summary(&self) -> FrameSummary {
        FrameSummary {
            b: self.b(),
            levels: self
                .levels
                .iter()
                .map(|l| LevelSummary {
                    level: l.level,
                    band: [l.band_lo, l.band_hi],
                    nodes: l.len(),
                    exactness_degree: l.rule.exactness_degree(),
                })
                .collect(),
        }
    }

    /// Zonal profile of `ψ^{(r)}_{j,k}` as a function of `t = ⟨ξ_{j,k}, x⟩`,
    /// without the `√λ_{j,k}` factor.
    pub fn atom_profile(&self, j: usize, r: f64, t: f64) -> Result<f64> {
        let level = self.level(j)?;
        let mut p = vec![0.0; level.band_hi + 1];
        legendre_table(t.clamp(-1.0, 1.0), &mut p);
        Ok((level.band_lo..=level.band_hi)
            .map(|l| level.sobolev_multiplier(l, r) * (2 * l + 1) as f64 / (4.0 * PI) * p[l])
            .sum())
    }

    /// `ψ^{(r)}_{j,k}(x) = √λ_{j,k} Σ_{ℓ∈Λ_j} e_ℓ^{r/2} b(ℓ/B^j) K_ℓ(⟨ξ_{j,k}, x⟩)`.
    pub fn eval_atom(&self, j: usize, k: usize, r: f64, x: &UnitVector) -> Result<f64> {
        let level = self.level(j)?;
        if k >= level.len() {
            return Err(Error::IndexOutOfRange { level: j, node: k });
        }
        let xi = &level.rule.nodes()[k];
        let lambda = level.rule.weights()[k];
        Ok(lambda.sqrt() * self.atom_profile(j, r, xi.dot(x))?)
    }

    /// Reference evaluation of an atom directly from the addition kernel,
    /// one degree at a time.
    pub fn eval_atom_direct(&self, j: usize, k: usize, r: f64, x: &UnitVector) -> Result<f64> {
        let level = self.level(j)?;
        if k >= level.len() {
            return Err(Error::IndexOutOfRange { level: j, node: k });
        }
        let t = level.rule.nodes()[k].dot(x);
        let s: f64 = (level.band_lo..=level.band_hi)
            .map(|l| level.sobolev_multiplier(l, r) * addition_kernel(l, t))
            .sum();
        Ok(level.rule.weights()[k].sqrt() * s)
    }

    /// Exact coefficients `β^{(r)}_{j,k} = ⟨f^{(r)}, ψ_{j,k}⟩` for `j ≤ J`,
    /// from the closed-form spectral sum
    /// `√λ_{j,k} Σ_{ℓ∈Λ_j} e_ℓ^{r/2} b(ℓ/B^j) Σ_m a_{ℓ,m} Y_{ℓ,m}(ξ_{j,k})`.
    pub fn analyze(
        &self,
        f: &HarmonicExpansion,
        r: f64,
        j_max: usize,
    ) -> Result<NeedletCoefficients> {
        self.level(j_max)?;
        let levels = self.levels[..=j_max]
            .iter()
            .map(|level| self.analyze_level(level, f.coeffs(), f.max_degree(), r))
            .collect::<Result<Vec<_>>>()?;
        Ok(NeedletCoefficients { r, levels })
    }

    /// Same closed form as [`analyze`](Self::analyze) for arbitrary flat
    /// coefficient vectors (e.g. empirical harmonic moments).
    pub(crate) fn analyze_level(
        &self,
        level: &FrameLevel,
        coeffs: &[f64],
        max_degree: usize,
        r: f64,
    ) -> Result<Vec<f64>> {
        let top = level.band_hi.min(max_degree);
        if top < level.band_lo {
            return Ok(vec![0.0; level.len()]);
        }
        // Fold the spectral multipliers into the coefficients once.
        let mut weighted = vec![0.0; harmonic_count(top)];
        for l in level.band_lo..=top {
            let w = level.sobolev_multiplier(l, r);
            for i in l * l..(l + 1) * (l + 1) {
                weighted[i] = w * coeffs[i];
            }
        }
        let lo = level.band_lo * level.band_lo;
        level
            .rule
            .nodes()
            .par_iter()
            .zip(level.rule.weights().par_iter())
            .map_init(
                || vec![0.0; harmonic_count(top)],
                |y, (xi, lambda)| {
                    real_harmonics(xi, top, y)?;
                    let s: f64 = weighted[lo..]
                        .iter()
                        .zip(&y[lo..])
                        .map(|(a, v)| a * v)
                        .sum();
                    Ok(lambda.sqrt() * s)
                },
            )
            .collect()
    }
}

/// Needlet coefficients `β^{(r)}_{j,k}` for levels `0..=J`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeedletCoefficients {
    pub r: f64,
    pub levels: Vec<Vec<f64>>,
}

impl NeedletCoefficients {
    pub fn j_max(&self) -> usize {
        self.levels.len().saturating_sub(1)
    }

    /// `Σ_k β_{j,k}²` at level `j`.
    pub fn level_energy(&self, j: usize) -> f64 {
        self.levels
            .get(j)
            .map(|c| c.iter().map(|b| b * b).sum())
            .unwrap_or(0.0)
    }
}

/// Truncated quadratic energy `Σ_{j≤J} Σ_k (β^{(r)}_{j,k})²`.
pub fn frame_energy(coeffs: &NeedletCoefficients, j: usize) -> Result<f64> {
    if j >= coeffs.levels.len() {
        return Err(Error::LevelAboveCap {
            level: j,
            cap: coeffs.j_max(),
        });
    }
    Ok((0..=j).map(|l| coeffs.level_energy(l)).sum())
}

/// `L¹`, `L²` and sup norms of a zonal atom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomNorms {
    pub l1: f64,
    pub l2: f64,
    pub sup: f64,
}

impl NeedletFrame {
    /// Norms of `ψ^{(r)}_{j,k}`. The atom is zonal about `ξ_{j,k}`, so the
    /// integrals use a product rule with `ξ_{j,k}` as its pole; the sup norm
    /// is taken over a fine grid in geodesic distance.
    pub fn atom_norms(&self, j: usize, k: usize, r: f64) -> Result<AtomNorms> {
        let level = self.level(j)?;
        if k >= level.len() {
            return Err(Error::IndexOutOfRange { level: j, node: k });
        }
        let scale = level.rule.weights()[k].sqrt();
        let npts = 8 * level.band_hi + 64;
        let (z, w) = gauss_legendre(npts)?;
        let mut p = vec![0.0; level.band_hi + 1];
        let coef: Vec<f64> = (0..=level.band_hi)
            .map(|l| level.sobolev_multiplier(l, r) * (2 * l + 1) as f64 / (4.0 * PI))
            .collect();
        let mut profile = |t: f64| {
            legendre_table(t, &mut p);
            scale * coef.iter().zip(&p).map(|(c, v)| c * v).sum::<f64>()
        };
        let (mut l1, mut l2) = (0.0, 0.0);
        for (t, wt) in z.iter().zip(&w) {
            let v = profile(*t);
            l1 += 2.0 * PI * wt * v.abs();
            l2 += 2.0 * PI * wt * v * v;
        }
        let grid = 40 * level.band_hi + 200;
        let mut sup: f64 = 0.0;
        for i in 0..=grid {
            let theta = PI * i as f64 / grid as f64;
            sup = sup.max(profile(theta.cos()).abs());
        }
        Ok(AtomNorms {
            l1,
            l2: l2.sqrt(),
            sup,
        })
    }
}

/// Outcome of one frame diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub name: String,
    pub passed: bool,
    pub error: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Diagnostic {
    fn check(name: &str, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: error.is_finite() && error <= tolerance,
            error,
            tolerance,
            note: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: FrameSummary,
    pub diagnostics: Vec<Diagnostic>,
    pub passed: bool,
}

/// Highest degree used by the exactness diagnostic at any level.
const EXACTNESS_CHECK_DEGREE: usize = 48;

/// Partition of unity, cubature exactness, tight-frame energy and `L^p`
/// scaling checks for the frame with ratio `b` and levels `0..=j_max`.
pub fn frame_diagnostics(b: f64, j_max: usize, seed: u64) -> Result<FrameReport> {
    use rand::{Rng, SeedableRng};

    let frame = NeedletFrame::new(b, j_max)?;
    let window = frame.window();
    let mut diagnostics = Vec::new();

    // Telescoping sum over every level touching degree ℓ.
    let top = frame.max_degree(j_max)?;
    let depth = ((top as f64).ln() / b.ln()).ceil() as i32 + 3;
    let pou = (1..=top)
        .map(|l| {
            let s: f64 = (0..=depth)
                .map(|j| window.b_squared(l as f64 / b.powi(j)))
                .sum();
            (s - 1.0).abs()
        })
        .fold(0.0, f64::max);
    diagnostics.push(Diagnostic::check("partition_of_unity", pou, 1e-12));

    let mut exact_err: f64 = 0.0;
    for level in frame.levels() {
        let deg = level.rule().exactness_degree().min(EXACTNESS_CHECK_DEGREE);
        let mut sums = vec![0.0; harmonic_count(deg)];
        let mut y = vec![0.0; harmonic_count(deg)];
        for (x, w) in level.rule().nodes().iter().zip(level.rule().weights()) {
            real_harmonics(x, deg, &mut y)?;
            for (s, v) in sums.iter_mut().zip(&y) {
                *s += w * v;
            }
        }
        sums[0] -= (4.0 * PI).sqrt();
        exact_err = sums.iter().fold(exact_err, |m, v| m.max(v.abs()));
    }
    diagnostics.push(Diagnostic::check("cubature_exactness", exact_err, 1e-10));

    // Zero-mean random expansion covered by the frame.
    let lmax = (b.powi(j_max as i32) + BAND_EPS).floor().max(1.0) as usize;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs: Vec<f64> = (0..harmonic_count(lmax))
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    coeffs[0] = 0.0;
    let g = HarmonicExpansion::from_coefficients(lmax, coeffs)?;
    let energy = frame_energy(&frame.analyze(&g, 0.0, j_max)?, j_max)?;
    let norm = g.sobolev_energy(0.0);
    diagnostics.push(Diagnostic::check(
        "tight_frame_energy",
        (energy - norm).abs() / norm,
        1e-9,
    ));

    let lo = (1..=j_max)
        .find(|&j| b.powi(j as i32) >= 4.0)
        .unwrap_or(j_max)
        .max(j_max.saturating_sub(3));
    if j_max > lo && b.powi((j_max - lo) as i32) >= 4.0 {
        let equatorial = |j: usize| -> Result<usize> {
            let nodes = frame.level(j)?.rule().nodes();
            Ok((0..nodes.len())
                .min_by(|&a, &c| nodes[a].z().abs().total_cmp(&nodes[c].z().abs()))
                .unwrap_or(0))
        };
        let first = frame.atom_norms(lo, equatorial(lo)?, 0.0)?;
        let last = frame.atom_norms(j_max, equatorial(j_max)?, 0.0)?;
        let span = (j_max - lo) as f64 * b.ln();
        let slopes = [
            ((last.l1 / first.l1).ln() / span, -1.0),
            ((last.l2 / first.l2).ln() / span, 0.0),
            ((last.sup / first.sup).ln() / span, 1.0),
        ];
        let err = slopes
            .iter()
            .map(|(s, e)| (s - e).abs())
            .fold(0.0, f64::max);
        diagnostics.push(Diagnostic::check("lp_scaling", err, 0.3));
    } else {
        diagnostics.push(Diagnostic {
            note: Some("levels with B^j >= 4 span less than a factor 4; skipped".into()),
            ..Diagnostic::check("lp_scaling", 0.0, 0.3)
        });
    }

    let passed = diagnostics.iter().all(|d| d.passed);
    Ok(FrameReport {
        frame: frame.summary(),
        diagnostics,
        passed,
    })
}
