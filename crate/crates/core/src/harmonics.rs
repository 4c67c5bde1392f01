//! Real spherical harmonics on S², Laplace–Beltrami spectral data and the
//! Legendre addition kernel.
//!
//! Real harmonics are fully normalized (orthonormal in L²(S²)) and carry no
//! Condon–Shortley phase:
//!
//! * `Y_{ℓ,0}  = P̄_ℓ^0(cos θ)`
//! * `Y_{ℓ,m}  = √2 P̄_ℓ^m(cos θ) cos(mφ)` for `m > 0`
//! * `Y_{ℓ,-m} = √2 P̄_ℓ^m(cos θ) sin(mφ)` for `m > 0`
//!
//! where `P̄_ℓ^m` are the associated Legendre functions scaled so that
//! `P̄_0^0 = 1/√(4π)`. Values are produced with the standard upward recurrence
//! in `ℓ` at fixed `m`, which stays stable well beyond [`DEGREE_CAP`].

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest degree supported by the associated Legendre tables.
pub const DEGREE_CAP: usize = 512;

const UNIT_TOLERANCE: f64 = 1e-12;

/// Sectoral seeds below this magnitude are flushed to zero. Every value they
/// would generate below the degree cap is far under double precision noise,
/// and flushing keeps the hot loop out of subnormal arithmetic.
const SECTORAL_FLUSH: f64 = 1e-280;

/// A point on S² ⊂ R³.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVector([f64; 3]);

impl UnitVector {
    pub const NORTH: UnitVector = UnitVector([0.0, 0.0, 1.0]);

    /// Validates that `(x, y, z)` has unit norm within `1e-12`.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotUnitVector { norm });
        }
        Ok(Self([x, y, z]))
    }

    /// Rescales a nonzero vector onto the sphere.
    pub fn normalized(x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = (x * x + y * y + z * z).sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::NotUnitVector { norm });
        }
        Ok(Self([x / norm, y / norm, z / norm]))
    }

    pub fn from_spherical(colatitude: f64, longitude: f64) -> Self {
        let (st, ct) = colatitude.sin_cos();
        let (sp, cp) = longitude.sin_cos();
        Self([st * cp, st * sp, ct])
    }

    pub fn x(&self) -> f64 {
        self.0[0]
    }

    pub fn y(&self) -> f64 {
        self.0[1]
    }

    pub fn z(&self) -> f64 {
        self.0[2]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    /// Inner product, clamped to `[-1, 1]`.
    pub fn dot(&self, other: &UnitVector) -> f64 {
        let v = self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2];
        v.clamp(-1.0, 1.0)
    }

    pub fn norm(&self) -> f64 {
        (self.0[0] * self.0[0] + self.0[1] * self.0[1] + self.0[2] * self.0[2]).sqrt()
    }

    /// Geodesic distance in radians.
    pub fn distance(&self, other: &UnitVector) -> f64 {
        self.dot(other).acos()
    }
}

impl TryFrom<[f64; 3]> for UnitVector {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        UnitVector::new(v[0], v[1], v[2])
    }
}

impl From<UnitVector> for [f64; 3] {
    fn from(v: UnitVector) -> Self {
        v.0
    }
}

/// Laplace–Beltrami eigenvalue `ℓ(ℓ+d−1)` on S^d.
pub fn eigenvalue(degree: usize, dim: usize) -> f64 {
    let l = degree as f64;
    l * (l + dim as f64 - 1.0)
}

/// Spectral weight `e_{ℓ,2}^r` on S². The constant mode is annihilated for
/// `r > 0` and kept with weight one at `r = 0`.
pub fn sobolev_weight(degree: usize, r: f64) -> f64 {
    if r == 0.0 {
        1.0
    } else if degree == 0 {
        0.0
    } else {
        eigenvalue(degree, 2).powf(r)
    }
}

/// Dimension of the degree-`ℓ` eigenspace on S^d:
/// `(2ℓ+d−1)(ℓ+d−2)! / (ℓ!(d−1)!)`.
pub fn multiplicity(degree: usize, dim: usize) -> Result<u64> {
    let overflow = || Error::MultiplicityOverflow { degree, dim };
    if dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "multiplicity needs dimension >= 2, got {dim}"
        )));
    }
    // C(ℓ+d−2, d−2) by multiplicative accumulation; each partial product is
    // itself a binomial coefficient, so the division is exact.
    let k = (dim - 2) as u128;
    let top = (degree + dim - 2) as u128;
    let mut binom: u128 = 1;
    for i in 1..=k {
        binom = binom.checked_mul(top - k + i).ok_or_else(overflow)? / i;
    }
    let numer = binom
        .checked_mul((2 * degree + dim - 1) as u128)
        .ok_or_else(overflow)?;
    u64::try_from(numer / (dim as u128 - 1)).map_err(|_| overflow())
}

/// Index of a real harmonic: degree `ℓ` and order `1..=2ℓ+1`.
///
/// Order `o` corresponds to the signed order `m = o − ℓ − 1`, so `o = ℓ+1`
/// is the zonal harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HarmonicIndex {
    degree: usize,
    order: usize,
}

impl HarmonicIndex {
    pub fn new(degree: usize, order: usize) -> Result<Self> {
        if order == 0 || order > 2 * degree + 1 {
            return Err(Error::InvalidArgument(format!(
                "order {order} outside 1..={} at degree {degree}",
                2 * degree + 1
            )));
        }
        Ok(Self { degree, order })
    }

    pub fn from_signed(degree: usize, m: i64) -> Result<Self> {
        let order = m + degree as i64 + 1;
        if order < 1 {
            return Err(Error::InvalidArgument(format!(
                "signed order {m} outside -{degree}..={degree}"
            )));
        }
        Self::new(degree, order as usize)
    }

    pub fn zonal(degree: usize) -> Self {
        Self {
            degree,
            order: degree + 1,
        }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn signed_order(&self) -> i64 {
        self.order as i64 - self.degree as i64 - 1
    }

    /// Position in the flat `(ℓ, m)` layout used by [`HarmonicExpansion`].
    pub fn flat_index(&self) -> usize {
        self.degree * self.degree + self.order - 1
    }
}

/// Number of real harmonics of degree at most `max_degree`.
pub fn harmonic_count(max_degree: usize) -> usize {
    (max_degree + 1) * (max_degree + 1)
}

#[inline]
fn flat(degree: usize, m: i64) -> usize {
    ((degree * degree + degree) as i64 + m) as usize
}

/// Finite real harmonic expansion `Σ a_{ℓ,m} Y_{ℓ,m}` on S².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicExpansion {
    max_degree: usize,
    coeffs: Vec<f64>,
    density: bool,
}

impl HarmonicExpansion {
    pub fn zeros(max_degree: usize) -> Self {
        Self {
            max_degree,
            coeffs: vec![0.0; harmonic_count(max_degree)],
            density: false,
        }
    }

    /// The uniform density `1/(4π)`, flagged as a density.
    pub fn uniform_density(max_degree: usize) -> Self {
        let mut f = Self::zeros(max_degree);
        f.coeffs[0] = 1.0 / (4.0 * PI).sqrt();
        f.density = true;
        f
    }

    /// Wraps coefficients stored in the flat `(ℓ, m)` layout.
    pub fn from_coefficients(max_degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != harmonic_count(max_degree) {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients for degree {max_degree}, got {}",
                harmonic_count(max_degree),
                coeffs.len()
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "coefficient {i} is not finite"
            )));
        }
        Ok(Self {
            max_degree,
            coeffs,
            density: false,
        })
    }

    /// Flags the expansion as a probability density; requires
    /// `a_{0,0} = 1/√(4π)`.
    pub fn into_density(mut self) -> Result<Self> {
        let target = 1.0 / (4.0 * PI).sqrt();
        if (self.coeffs[0] - target).abs() > 1e-12 {
            return Err(Error::InvalidDensity(format!(
                "mean coefficient {} differs from 1/sqrt(4 pi)",
                self.coeffs[0]
            )));
        }
        self.density = true;
        Ok(self)
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn is_density(&self) -> bool {
        self.density
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn get(&self, idx: HarmonicIndex) -> f64 {
        self.coeffs.get(idx.flat_index()).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, idx: HarmonicIndex, value: f64) -> Result<()> {
        if idx.degree() > self.max_degree {
            return Err(Error::DegreeTooLarge {
                degree: idx.degree(),
                cap: self.max_degree,
            });
        }
        self.coeffs[idx.flat_index()] = value;
        Ok(())
    }

    /// Coefficients of degree `ℓ`, ordered by signed order `−ℓ..=ℓ`.
    pub fn degree_coeffs(&self, degree: usize) -> &[f64] {
        let start = degree * degree;
        &self.coeffs[start..start + 2 * degree + 1]
    }

    /// `Σ_m a_{ℓ,m}²`.
    pub fn degree_energy(&self, degree: usize) -> f64 {
        if degree > self.max_degree {
            return 0.0;
        }
        self.degree_coeffs(degree).iter().map(|a| a * a).sum()
    }

    /// `Σ_{ℓ,m} e_{ℓ,2}^r a_{ℓ,m}²`; the constant mode contributes only at
    /// `r = 0`.
    pub fn sobolev_energy(&self, r: f64) -> f64 {
        (0..=self.max_degree)
            .map(|l| sobolev_weight(l, r) * self.degree_energy(l))
            .sum()
    }
}

struct RecurrenceTable {
    /// `sqrt((2m+1)/(2m))` for the sectoral step, indexed by `m`.
    sectoral: Vec<f64>,
    /// Start of the run for order `m` in `alpha`/`beta`.
    offsets: Vec<usize>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl RecurrenceTable {
    fn build(cap: usize) -> Self {
        let mut sectoral = vec![0.0; cap + 1];
        for (m, v) in sectoral.iter_mut().enumerate().skip(1) {
            let m = m as f64;
            *v = ((2.0 * m + 1.0) / (2.0 * m)).sqrt();
        }
        let mut offsets = Vec::with_capacity(cap + 1);
        let mut alpha = Vec::new();
        let mut beta = Vec::new();
        for m in 0..=cap {
            offsets.push(alpha.len());
            let mf = m as f64;
            for l in m + 1..=cap {
                let lf = l as f64;
                alpha.push(((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt());
                let lm1 = lf - 1.0;
                beta.push(((lm1 * lm1 - mf * mf) / (4.0 * lm1 * lm1 - 1.0)).sqrt());
            }
        }
        Self {
            sectoral,
            offsets,
            alpha,
            beta,
        }
    }

    /// Recurrence coefficients `(α, β)` for `P̄_ℓ^m = α (t P̄_{ℓ−1}^m − β P̄_{ℓ−2}^m)`.
    #[inline]
    fn run(&self, m: usize, top: usize) -> (&[f64], &[f64]) {
        let start = self.offsets[m];
        let len = top.saturating_sub(m);
        (
            &self.alpha[start..start + len],
            &self.beta[start..start + len],
        )
    }
}

fn table() -> &'static RecurrenceTable {
    static TABLE: OnceLock<RecurrenceTable> = OnceLock::new();
    TABLE.get_or_init(|| RecurrenceTable::build(DEGREE_CAP))
}

fn check_degree(degree: usize) -> Result<()> {
    if degree > DEGREE_CAP {
        return Err(Error::DegreeTooLarge {
            degree,
            cap: DEGREE_CAP,
        });
    }
    Ok(())
}

#[inline]
fn polar_parts(p: &UnitVector) -> (f64, f64, f64, f64) {
    let t = p.z();
    let s = (p.x() * p.x() + p.y() * p.y()).sqrt();
    if s > 0.0 {
        (t, s, p.x() / s, p.y() / s)
    } else {
        (t, 0.0, 1.0, 0.0)
    }
}

/// Legendre polynomial `P_ℓ(t)` by the three-term recurrence.
pub fn legendre(degree: usize, t: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, t);
    if degree == 0 {
        return p0;
    }
    for k in 1..degree {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * t * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Fills `out[ℓ] = P_ℓ(t)` for `ℓ = 0..out.len()`.
pub fn legendre_table(t: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = t;
    }
    for k in 1..out.len().saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0) * t * out[k] - kf * out[k - 1]) / (kf + 1.0);
    }
}

/// Zonal reproducing kernel `Σ_m Y_{ℓ,m}(x) Y_{ℓ,m}(y) = (2ℓ+1)/(4π) P_ℓ(⟨x,y⟩)`.
pub fn addition_kernel(degree: usize, t: f64) -> f64 {
    debug_assert!(
        t.abs() <= 1.0 + 1e-12,
        "kernel argument {t} outside [-1, 1]"
    );
    let t = t.clamp(-1.0, 1.0);
    (2 * degree + 1) as f64 / (4.0 * PI) * legendre(degree, t)
}

/// Value of a single real harmonic `Y_{ℓ,m}` at `point`.
pub fn eval_harmonic(idx: HarmonicIndex, point: &UnitVector) -> Result<f64> {
    let degree = idx.degree();
    check_degree(degree)?;
    let m = idx.signed_order();
    let ma = m.unsigned_abs() as usize;
    let (t, s, cphi, sphi) = polar_parts(point);
    let tab = table();

    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    for k in 1..=ma {
        pmm *= tab.sectoral[k] * s;
    }
    let mut p = pmm;
    if degree > ma {
        let (alpha, beta) = tab.run(ma, degree);
        let (mut p2, mut p1) = (0.0, pmm);
        for (a, b) in alpha.iter().zip(beta) {
            p = a * (t * p1 - b * p2);
            p2 = p1;
            p1 = p;
        }
    }
    if m == 0 {
        return Ok(p);
    }
    let phi = sphi.atan2(cphi);
    let angle = ma as f64 * phi;
    let trig = if m > 0 { angle.cos() } else { angle.sin() };
    Ok(SQRT_2 * p * trig)
}

/// Writes every real harmonic of degree `≤ max_degree` at `point` into
/// `out` (flat `(ℓ, m)` layout, length at least `(max_degree+1)²`).
pub fn real_harmonics(point: &UnitVector, max_degree: usize, out: &mut [f64]) -> Result<()> {
    check_degree(max_degree)?;
    let count = harmonic_count(max_degree);
    if out.len() < count {
        return Err(Error::InvalidArgument(format!(
            "output buffer holds {} values, need {count}",
            out.len()
        )));
    }
    let (t, s, cphi, sphi) = polar_parts(point);
    let tab = table();
    let out = &mut out[..count];
    out.fill(0.0);

    let mut pmm = 1.0 / (4.0 * PI).sqrt();
    let (mut cm, mut sm) = (1.0, 0.0);
    for m in 0..=max_degree {
        if m > 0 {
            pmm *= tab.sectoral[m] * s;
            if pmm.abs() < SECTORAL_FLUSH {
                break;
            }
            let c = cm * cphi - sm * sphi;
            sm = sm * cphi + cm * sphi;
            cm = c;
        }
        let mi = m as i64;
        let mut emit = |l: usize, p: f64| {
            if m == 0 {
                out[flat(l, 0)] = p;
            } else {
                out[flat(l, mi)] = SQRT_2 * p * cm;
                out[flat(l, -mi)] = SQRT_2 * p * sm;
            }
        };
        emit(m, pmm);
        let (alpha, beta) = tab.run(m, max_degree);
        let (mut p2, mut p1) = (0.0, pmm);
        for (k, (a, b)) in alpha.iter().zip(beta).enumerate() {
            let p = a * (t * p1 - b * p2);
            emit(m + 1 + k, p);
            p2 = p1;
            p1 = p;
        }
    }
    Ok(())
}

const BLOCK: usize = 64;
const LANES: usize = 4;

/// `Σ_i Y_{ℓ,m}(x_i)` for every harmonic of degree `≤ max_degree`.
///
/// Points are processed in fixed blocks with a fixed reduction order, so the
/// result is bit-for-bit reproducible for a given input order.
pub fn harmonic_sums(points: &[UnitVector], max_degree: usize) -> Result<Vec<f64>> {
    check_degree(max_degree)?;
    let mut sums = vec![0.0; harmonic_count(max_degree)];
    for block in points.chunks(BLOCK) {
        accumulate_block(block, max_degree, &mut sums);
    }
    Ok(sums)
}

fn accumulate_block(block: &[UnitVector], max_degree: usize, sums: &mut [f64]) {
    let tab = table();
    let mut t = [0.0; BLOCK];
    let mut s = [0.0; BLOCK];
    let mut cphi = [0.0; BLOCK];
    let mut sphi = [0.0; BLOCK];
    let mut cm = [0.0; BLOCK];
    let mut sm = [0.0; BLOCK];
    let mut pmm = [0.0; BLOCK];
    for (i, p) in block.iter().enumerate() {
        let (ti, si, ci, ni) = polar_parts(p);
        t[i] = ti;
        s[i] = si;
        cphi[i] = ci;
        sphi[i] = ni;
        cm[i] = 1.0;
        pmm[i] = 1.0 / (4.0 * PI).sqrt();
    }

    for m in 0..=max_degree {
        if m > 0 {
            let f = tab.sectoral[m];
            let mut alive = false;
            for i in 0..BLOCK {
                let v = pmm[i] * f * s[i];
                pmm[i] = if v.abs() < SECTORAL_FLUSH { 0.0 } else { v };
                alive |= pmm[i] != 0.0;
                let c = cm[i] * cphi[i] - sm[i] * sphi[i];
                sm[i] = sm[i] * cphi[i] + cm[i] * sphi[i];
                cm[i] = c;
            }
            if !alive {
                break;
            }
        }
        let mi = m as i64;
        let (sc, ss) = lane_dot(&pmm, &cm, &sm);
        record(sums, m, mi, sc, ss);

        let mut p1 = pmm;
        let mut p2 = [0.0; BLOCK];
        let (alpha, beta) = tab.run(m, max_degree);
        for (k, (&a, &b)) in alpha.iter().zip(beta).enumerate() {
            let mut acc_c = [0.0; LANES];
            let mut acc_s = [0.0; LANES];
            for base in (0..BLOCK).step_by(LANES) {
                for lane in 0..LANES {
                    let i = base + lane;
                    let p = a * (t[i] * p1[i] - b * p2[i]);
                    p2[i] = p1[i];
                    p1[i] = p;
                    acc_c[lane] += p * cm[i];
                    acc_s[lane] += p * sm[i];
                }
            }
            let sc = (acc_c[0] + acc_c[1]) + (acc_c[2] + acc_c[3]);
            let ss = (acc_s[0] + acc_s[1]) + (acc_s[2] + acc_s[3]);
            record(sums, m + 1 + k, mi, sc, ss);
        }
    }
}

#[inline]
fn lane_dot(p: &[f64; BLOCK], c: &[f64; BLOCK], s: &[f64; BLOCK]) -> (f64, f64) {
    let mut acc_c = [0.0; LANES];
    let mut acc_s = [0.0; LANES];
    for base in (0..BLOCK).step_by(LANES) {
        for lane in 0..LANES {
            let i = base + lane;
            acc_c[lane] += p[i] * c[i];
            acc_s[lane] += p[i] * s[i];
        }
    }
    (
        (acc_c[0] + acc_c[1]) + (acc_c[2] + acc_c[3]),
        (acc_s[0] + acc_s[1]) + (acc_s[2] + acc_s[3]),
    )
}

#[inline]
fn record(sums: &mut [f64], degree: usize, m: i64, sc: f64, ss: f64) {
    if m == 0 {
        sums[flat(degree, 0)] += sc;
    } else {
        sums[flat(degree, m)] += SQRT_2 * sc;
        sums[flat(degree, -m)] += SQRT_2 * ss;
    }
}

/// Pointwise value of the spectral derivative
/// `f^{(r)}(x) = Σ e_{ℓ,2}^{r/2} a_{ℓ,m} Y_{ℓ,m}(x)`; the constant mode is
/// dropped for `r > 0`.
pub fn evaluate_expansion(f: &HarmonicExpansion, point: &UnitVector, r: f64) -> Result<f64> {
    let mut y = vec![0.0; harmonic_count(f.max_degree())];
    real_harmonics(point, f.max_degree(), &mut y)?;
    let mut total = 0.0;
    for l in 0..=f.max_degree() {
        let w = sobolev_weight(l, r / 2.0);
        if w == 0.0 {
            continue;
        }
        let start = l * l;
        let partial: f64 = f
            .degree_coeffs(l)
            .iter()
            .zip(&y[start..start + 2 * l + 1])
            .map(|(a, v)| a * v)
            .sum();
        total += w * partial;
    }
    Ok(total)
}
