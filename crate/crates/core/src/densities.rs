//! Bandlimited test densities with exact Sobolev functionals, and
//! reproducible i.i.d. sampling.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::{
    evaluate_expansion, harmonic_count, real_harmonics, HarmonicExpansion, UnitVector,
};

/// Minimum acceptance rate tolerated by [`sample`].
pub const MIN_ACCEPTANCE: f64 = 1e-3;

const BOUND_SLACK: f64 = 1e-12;
const ACCEPTANCE_PROBE: usize = 10_000;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for `(master, tag, index)`.
///
/// Tags separate the purposes a master seed feeds (sampling, splitting,
/// calibration); indices enumerate replicates.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ index)
}

fn default_axis() -> UnitVector {
    UnitVector::NORTH
}

/// Construction parameters of a test density, as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityDescriptor {
    Uniform {},
    Zonal {
        degree: usize,
        alpha: f64,
        #[serde(default = "default_axis")]
        axis: UnitVector,
    },
    Multiband {
        #[serde(with = "degree_keys")]
        amplitudes: BTreeMap<usize, f64>,
        #[serde(default = "default_axis")]
        axis: UnitVector,
    },
}

/// JSON object keys are strings; degrees are parsed from them explicitly.
mod degree_keys {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<usize, f64>, s: S) -> Result<S::Ok, S::Error> {
        map.iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect::<BTreeMap<String, f64>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                k.parse::<usize>()
                    .map(|k| (k, v))
                    .map_err(|_| D::Error::custom(format!("degree key {k:?} is not an integer")))
            })
            .collect()
    }
}

impl DensityDescriptor {
    pub fn build(&self) -> Result<TestDensity> {
        match self {
            DensityDescriptor::Uniform {} => Ok(TestDensity::uniform()),
            DensityDescriptor::Zonal {
                degree,
                alpha,
                axis,
            } => make_zonal_density(*degree, *alpha, *axis),
            DensityDescriptor::Multiband { amplitudes, axis } => {
                make_multiband_density(amplitudes, *axis)
            }
        }
    }
}

/// A bandlimited density together with an upper bound on its values.
#[derive(Debug, Clone, PartialEq)]
pub struct TestDensity {
    expansion: HarmonicExpansion,
    sup_bound: f64,
    descriptor: DensityDescriptor,
}

impl TestDensity {
    pub fn uniform() -> Self {
        Self {
            expansion: HarmonicExpansion::uniform_density(0),
            sup_bound: 1.0 / (4.0 * PI),
            descriptor: DensityDescriptor::Uniform {},
        }
    }

    pub fn expansion(&self) -> &HarmonicExpansion {
        &self.expansion
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn descriptor(&self) -> &DensityDescriptor {
        &self.descriptor
    }

    pub fn max_degree(&self) -> usize {
        self.expansion.max_degree()
    }

    /// Density value `f(x)`.
    pub fn value(&self, x: &UnitVector) -> Result<f64> {
        evaluate_expansion(&self.expansion, x, 0.0)
    }

    /// Smallest value of `f` over a Fibonacci grid of `npoints` points.
    pub fn grid_minimum(&self, npoints: usize) -> Result<f64> {
        let mut y = vec![0.0; harmonic_count(self.max_degree())];
        let mut min = f64::INFINITY;
        for x in fibonacci_grid(npoints) {
            real_harmonics(&x, self.max_degree(), &mut y)?;
            let v: f64 = self
                .expansion
                .coeffs()
                .iter()
                .zip(&y)
                .map(|(a, b)| a * b)
                .sum();
            min = min.min(v);
        }
        Ok(min)
    }
}

/// Near-uniform point set on S² (golden-angle spiral).
pub fn fibonacci_grid(npoints: usize) -> Vec<UnitVector> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..npoints)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / npoints as f64;
            UnitVector::from_spherical(z.clamp(-1.0, 1.0).acos(), golden * i as f64)
        })
        .collect()
}

/// `f = 1/(4π) + α K_ℓ(⟨x, axis⟩)`, i.e. `a_{ℓ,m} = α Y_{ℓ,m}(axis)`.
pub fn make_zonal_density(degree: usize, alpha: f64, axis: UnitVector) -> Result<TestDensity> {
    if degree == 0 {
        return Err(Error::InvalidDensity(
            "zonal component needs degree >= 1".into(),
        ));
    }
    let mut amplitudes = BTreeMap::new();
    amplitudes.insert(degree, alpha);
    let mut f = make_multiband_density(&amplitudes, axis)?;
    f.descriptor = DensityDescriptor::Zonal {
        degree,
        alpha,
        axis,
    };
    Ok(f)
}

/// Superposition of zonal components `Σ_ℓ α_ℓ K_ℓ(⟨x, axis⟩)` on top of the
/// uniform density; requires `Σ |α_ℓ|(2ℓ+1) ≤ 1`.
pub fn make_multiband_density(
    amplitudes: &BTreeMap<usize, f64>,
    axis: UnitVector,
) -> Result<TestDensity> {
    let mut load = 0.0;
    for (&l, &a) in amplitudes {
        if l == 0 {
            return Err(Error::InvalidDensity(
                "amplitudes must use degrees >= 1".into(),
            ));
        }
        if !a.is_finite() {
            return Err(Error::InvalidDensity(format!(
                "amplitude at degree {l} is not finite"
            )));
        }
        load += a.abs() * (2 * l + 1) as f64;
    }
    if load > 1.0 + BOUND_SLACK {
        return Err(Error::InvalidDensity(format!(
            "sum |alpha_l|(2l+1) = {load} exceeds 1; density may be negative"
        )));
    }
    let max_degree = amplitudes.keys().copied().max().unwrap_or(0);
    let mut coeffs = vec![0.0; harmonic_count(max_degree)];
    coeffs[0] = 1.0 / (4.0 * PI).sqrt();
    let mut y = vec![0.0; harmonic_count(max_degree)];
    real_harmonics(&axis, max_degree, &mut y)?;
    for (&l, &a) in amplitudes {
        for i in l * l..(l + 1) * (l + 1) {
            coeffs[i] = a * y[i];
        }
    }
    let expansion = HarmonicExpansion::from_coefficients(max_degree, coeffs)?.into_density()?;
    Ok(TestDensity {
        expansion,
        sup_bound: (1.0 + load) / (4.0 * PI),
        descriptor: DensityDescriptor::Multiband {
            amplitudes: amplitudes.clone(),
            axis,
        },
    })
}

/// `T_r(f) = Σ e_{ℓ,2}^r a_{ℓ,m}²`, with the constant mode only at `r = 0`.
pub fn exact_t(f: &TestDensity, r: f64) -> f64 {
    f.expansion.sobolev_energy(r)
}

/// `n` points on S² with the seed that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SphericalSample {
    points: Vec<UnitVector>,
    seed: u64,
    proposals: usize,
}

impl SphericalSample {
    pub fn from_points(points: Vec<UnitVector>, seed: u64) -> Self {
        let proposals = points.len();
        Self {
            points,
            seed,
            proposals,
        }
    }

    pub fn points(&self) -> &[UnitVector] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform proposals consumed by the rejection sampler.
    pub fn proposals(&self) -> usize {
        self.proposals
    }
}

fn uniform_point(rng: &mut ChaCha8Rng) -> UnitVector {
    let z: f64 = 1.0 - 2.0 * rng.random::<f64>();
    let phi: f64 = 2.0 * PI * rng.random::<f64>();
    UnitVector::from_spherical(z.clamp(-1.0, 1.0).acos(), phi)
}

/// `n` i.i.d. draws from `f` by rejection from the uniform distribution.
pub fn sample(f: &TestDensity, n: usize, seed: u64) -> Result<SphericalSample> {
    if n == 0 {
        return Err(Error::SampleTooSmall { needed: 1, got: 0 });
    }
    let expected = 1.0 / (4.0 * PI * f.sup_bound);
    if expected < MIN_ACCEPTANCE {
        return Err(Error::LowAcceptance { rate: expected });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = f.max_degree() == 0;
    let lmax = f.max_degree();
    let mut y = vec![0.0; harmonic_count(lmax)];
    let mut points = Vec::with_capacity(n);
    let mut proposals = 0usize;
    while points.len() < n {
        let x = uniform_point(&mut rng);
        proposals += 1;
        if uniform {
            points.push(x);
            continue;
        }
        real_harmonics(&x, lmax, &mut y)?;
        let fx: f64 = f
            .expansion
            .coeffs()
            .iter()
            .zip(&y)
            .map(|(a, b)| a * b)
            .sum();
        if rng.random::<f64>() * f.sup_bound < fx {
            points.push(x);
        }
        if proposals >= ACCEPTANCE_PROBE {
            let rate = points.len() as f64 / proposals as f64;
            if rate < MIN_ACCEPTANCE {
                return Err(Error::LowAcceptance { rate });
            }
        }
    }
    Ok(SphericalSample {
        points,
        seed,
        proposals,
    })
}
