//! Gauss–Legendre rules and exact product cubature on S².

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::harmonics::UnitVector;

const NEWTON_TOLERANCE: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

/// Gauss–Legendre nodes (ascending) and weights on `[-1, 1]`, exact for
/// polynomials of degree `≤ 2n − 1`.
pub fn gauss_legendre(npoints: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if npoints == 0 {
        return Err(Error::InvalidArgument(
            "Gauss-Legendre rule needs at least one point".into(),
        ));
    }
    let n = npoints;
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // Roots are symmetric; solve for the upper half.
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut converged = false;
        let mut dp = 0.0;
        for _ in 0..NEWTON_MAX_ITER {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= NEWTON_TOLERANCE {
                converged = true;
                dp = legendre_with_derivative(n, x).1;
                break;
            }
        }
        if !converged {
            return Err(Error::QuadratureNoConvergence(n));
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Positive-weight cubature on S² exact for spherical polynomials up to
/// `exactness_degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubatureRule {
    exactness_degree: usize,
    nodes: Vec<UnitVector>,
    weights: Vec<f64>,
}

impl CubatureRule {
    pub fn exactness_degree(&self) -> usize {
        self.exactness_degree
    }

    pub fn nodes(&self) -> &[UnitVector] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ_k λ_k f(ξ_k)`.
    pub fn integrate<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&UnitVector) -> f64,
    {
        let mut total = 0.0;
        for (k, (node, w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let v = f(node);
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand(k));
            }
            total += w * v;
        }
        Ok(total)
    }
}

/// Product rule: Gauss–Legendre in `cos θ` with `⌈(D+1)/2⌉` nodes times
/// `D+1` equispaced longitudes.
pub fn sphere_cubature(degree: usize) -> Result<CubatureRule> {
    let n_lat = (degree + 2) / 2;
    let n_lon = degree + 1;
    let (z, w) = gauss_legendre(n_lat)?;
    let dphi = 2.0 * PI / n_lon as f64;
    let mut nodes = Vec::with_capacity(n_lat * n_lon);
    let mut weights = Vec::with_capacity(n_lat * n_lon);
    for (zi, wi) in z.iter().zip(&w) {
        let s = (1.0 - zi * zi).max(0.0).sqrt();
        for k in 0..n_lon {
            let (sp, cp) = (k as f64 * dphi).sin_cos();
            nodes.push(UnitVector::normalized(s * cp, s * sp, *zi)?);
            weights.push(wi * dphi);
        }
    }
    Ok(CubatureRule {
        exactness_degree: degree,
        nodes,
        weights,
    })
}

/// Convenience wrapper for [`CubatureRule::integrate`].
pub fn integrate<F>(rule: &CubatureRule, f: F) -> Result<f64>
where
    F: Fn(&UnitVector) -> f64,
{
    rule.integrate(f)
}
