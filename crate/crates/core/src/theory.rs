//! Asymptotic bias–variance model, oracle levels and rate exponents.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::adaptive::ResolutionGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub d: usize,
    pub r: f64,
    pub s: f64,
    pub b: f64,
    pub n: usize,
    pub c_bias: f64,
    pub c_var: f64,
}

impl RateModel {
    /// Model with unit constants.
    pub fn new(d: usize, r: f64, s: f64, b: f64, n: usize) -> Result<Self> {
        Self::with_constants(d, r, s, b, n, 1.0, 1.0)
    }

    pub fn with_constants(
        d: usize,
        r: f64,
        s: f64,
        b: f64,
        n: usize,
        c_bias: f64,
        c_var: f64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        if !(r >= 0.0) {
            return Err(Error::InvalidArgument(format!("r must be >= 0, got {r}")));
        }
        if !(s > r) {
            return Err(Error::InvalidArgument(format!(
                "smoothness s = {s} must exceed r = {r}"
            )));
        }
        if !(b > 1.0) || !b.is_finite() {
            return Err(Error::InvalidBandRatio(b));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        if !(c_bias > 0.0 && c_var > 0.0) {
            return Err(Error::InvalidArgument(
                "model constants must be positive".into(),
            ));
        }
        Ok(Self {
            d,
            r,
            s,
            b,
            n,
            c_bias,
            c_var,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMse {
    pub bias2: f64,
    pub var: f64,
    pub mse: f64,
}

/// `bias² = c_bias B^{−4J(s−r)}`, `var = c_var B^{J(d+4r)}/n`.
pub fn model_mse(model: &RateModel, j: usize) -> ModelMse {
    let jf = j as f64;
    let bias2 = model.c_bias * model.b.powf(-4.0 * jf * (model.s - model.r));
    let var = model.c_var * model.b.powf(jf * (model.d as f64 + 4.0 * model.r)) / model.n as f64;
    ModelMse {
        bias2,
        var,
        mse: bias2 + var,
    }
}

/// Index of the smallest value; ties go to the earliest entry.
pub fn argmin_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Grid minimizer of the model MSE, ties toward smaller `J`.
pub fn oracle_j(model: &RateModel, grid: &ResolutionGrid) -> usize {
    let mse: Vec<f64> = grid.levels().map(|j| model_mse(model, j).mse).collect();
    grid.j_min + argmin_first(&mse).unwrap_or(0)
}

/// Adjacent-level rule: the smallest `J` with `bias²(J) ≤ var(J+1)`, or
/// `J_max` when no level qualifies.
pub fn model_adaptive_j(model: &RateModel, grid: &ResolutionGrid) -> Result<usize> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument(
            "adjacent-level rule needs at least two levels".into(),
        ));
    }
    Ok((grid.j_min..grid.j_max)
        .find(|&j| model_mse(model, j).bias2 <= model_mse(model, j + 1).var)
        .unwrap_or(grid.j_max))
}

/// `−4(s−r)/(2s+d+4r)`.
pub fn rate_exponent(s: f64, r: f64, d: usize) -> Result<f64> {
    if !(s > r) {
        return Err(Error::InvalidArgument(format!(
            "rate exponent needs s > r, got s = {s}, r = {r}"
        )));
    }
    Ok(-4.0 * (s - r) / (2.0 * s + d as f64 + 4.0 * r))
}

/// Level grid `0..=⌊log_B n⌋` used for model tables.
pub fn table_grid(n: usize, b: f64) -> Result<ResolutionGrid> {
    let top = ((n.max(1) as f64).ln() / b.ln() + 1e-12).floor() as usize;
    ResolutionGrid::new(0, top, b)
}

/// Model parameters shared by every row of an oracle table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableDefaults {
    pub d: usize,
    pub r: f64,
    pub b: f64,
    pub c_bias: f64,
    pub c_var: f64,
}

impl Default for TableDefaults {
    fn default() -> Self {
        Self {
            d: 2,
            r: 1.0,
            b: 2.0,
            c_bias: 1.0,
            c_var: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub s: f64,
    pub n: usize,
    pub j_star: usize,
    pub j_hat: usize,
    pub oracle_mse: f64,
    pub adaptive_mse: f64,
}

/// One row per `(s, n)`: oracle level, adjacent-rule level and model risks.
pub fn oracle_table(rows: &[(f64, usize)], defaults: &TableDefaults) -> Result<Vec<OracleRow>> {
    rows.iter()
        .map(|&(s, n)| {
            let model = RateModel::with_constants(
                defaults.d,
                defaults.r,
                s,
                defaults.b,
                n,
                defaults.c_bias,
                defaults.c_var,
            )?;
            let grid = table_grid(n, defaults.b)?;
            let j_star = oracle_j(&model, &grid);
            let j_hat = model_adaptive_j(&model, &grid)?;
            Ok(OracleRow {
                s,
                n,
                j_star,
                j_hat,
                oracle_mse: model_mse(&model, j_star).mse,
                adaptive_mse: model_mse(&model, j_hat).mse,
            })
        })
        .collect()
}

/// Writes the table with the model constants repeated on each row.
pub fn write_table_csv<W: Write>(
    rows: &[OracleRow],
    defaults: &TableDefaults,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "s",
        "n",
        "J_star",
        "J_hat",
        "oracle_risk",
        "adaptive_risk",
        "d",
        "r",
        "B",
        "c_bias",
        "c_var",
    ])?;
    for row in rows {
        w.write_record([
            row.s.to_string(),
            row.n.to_string(),
            row.j_star.to_string(),
            row.j_hat.to_string(),
            format!("{:.6e}", row.oracle_mse),
            format!("{:.6e}", row.adaptive_mse),
            defaults.d.to_string(),
            defaults.r.to_string(),
            defaults.b.to_string(),
            defaults.c_bias.to_string(),
            defaults.c_var.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Least-squares slope of `ln risk` on `ln n`. Degenerate abscissae give 0.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    if let Some(&(n, risk)) = points.iter().find(|(n, r)| !(*n > 0.0 && *r > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs positive inputs, got ({n}, {risk})"
        )));
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= f64::EPSILON * (1.0 + mx * mx) * k {
        return Ok(0.0);
    }
    Ok(sxy / sxx)
}

/// The twelve `(s, n)` rows of the reference oracle table.
pub fn reference_rows() -> Vec<(f64, usize)> {
    let mut rows = Vec::new();
    for s in [2.2, 2.6, 3.0] {
        for n in [1000, 3000, 8000, 20000] {
            rows.push((s, n));
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn model_examples() {
        let m = RateModel::new(2, 1.0, 2.5, 2.0, 4000).unwrap();
        let z = model_mse(&m, 0);
        assert_eq!(z.bias2, 1.0);
        assert_abs_diff_eq!(z.var, 1.0 / 4000.0, epsilon = 1e-18);
        let two = model_mse(&m, 2);
        assert_abs_diff_eq!(two.bias2, 2f64.powi(-12), epsilon = 1e-18);
        assert_abs_diff_eq!(two.bias2, 2.441e-4, epsilon = 1e-7);
        assert_abs_diff_eq!(two.var, 1.024, epsilon = 1e-12);
        assert!(RateModel::new(2, 1.0, 1.0, 2.0, 10).is_err());
        assert!(RateModel::new(2, 1.0, 2.0, 1.0, 10).is_err());
    }

    #[test]
    fn rate_exponent_examples() {
        assert_abs_diff_eq!(
            rate_exponent(2.5, 1.0, 2).unwrap(),
            -6.0 / 11.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            rate_exponent(2.5, 1.0, 2).unwrap(),
            -0.545455,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(rate_exponent(1e9, 1.0, 2).unwrap(), -2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(
            rate_exponent(1.0 + 1e-9, 1.0, 2).unwrap(),
            0.0,
            epsilon = 1e-8
        );
        assert!(rate_exponent(1.0, 1.0, 2).is_err());
    }

    #[test]
    fn oracle_example_row() {
        let m = RateModel::new(2, 1.0, 2.2, 2.0, 8000).unwrap();
        let cont = 8000f64.ln() / (10.8 * 2f64.ln());
        assert_abs_diff_eq!(cont, 1.20, epsilon = 0.005);
        let grid = table_grid(8000, 2.0).unwrap();
        let j = oracle_j(&m, &grid);
        let m1 = model_mse(&m, 1).mse;
        let m2 = model_mse(&m, 2).mse;
        assert_eq!(j, if m2 < m1 { 2 } else { 1 });
    }

    #[test]
    fn oracle_ties_go_to_smaller_level() {
        assert_eq!(argmin_first(&[2.0, 1.0, 1.0, 3.0]), Some(1));
        assert_eq!(argmin_first(&[]), None);
    }

    #[test]
    fn adaptive_rule_examples() {
        let grid = ResolutionGrid::new(0, 6, 2.0).unwrap();
        let huge = RateModel::with_constants(2, 1.0, 2.5, 2.0, 1000, 1e30, 1.0).unwrap();
        assert_eq!(model_adaptive_j(&huge, &grid).unwrap(), 6);
        let m = RateModel::new(2, 1.0, 3.0, 2.0, 20000).unwrap();
        let g = table_grid(20000, 2.0).unwrap();
        let a = model_adaptive_j(&m, &g).unwrap() as i64;
        let o = oracle_j(&m, &g) as i64;
        assert!((a - o).abs() <= 1);
        assert!(model_adaptive_j(&m, &ResolutionGrid::new(2, 2, 2.0).unwrap()).is_err());
    }

    #[test]
    fn fit_rate_examples() {
        let pts: Vec<(f64, f64)> = [1e3f64, 1e4, 1e5, 1e6]
            .iter()
            .map(|&n| (n, n.powf(-0.5)))
            .collect();
        assert_abs_diff_eq!(fit_rate(&pts).unwrap(), -0.5, epsilon = 1e-12);
        assert_eq!(fit_rate(&[(100.0, 0.3), (100.0, 0.3)]).unwrap(), 0.0);
        assert!(fit_rate(&[(100.0, 0.3)]).is_err());
        assert!(fit_rate(&[(100.0, 0.3), (200.0, 0.0)]).is_err());
        assert!(fit_rate(&[(0.0, 0.3), (200.0, 0.1)]).is_err());
    }

    #[test]
    fn table_structure() {
        let rows = oracle_table(&reference_rows(), &TableDefaults::default()).unwrap();
        assert_eq!(rows.len(), 12);
        for chunk in rows.chunks(4) {
            for w in chunk.windows(2) {
                assert!(w[1].oracle_mse < w[0].oracle_mse);
                assert!(w[1].j_star >= w[0].j_star);
            }
        }
        for row in &rows {
            assert!(row.adaptive_mse >= row.oracle_mse);
        }
        let mut buf = Vec::new();
        write_table_csv(&rows, &TableDefaults::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("s,n,J_star,J_hat,oracle_risk,adaptive_risk,d,r,B,c_bias,c_var\n"));
        assert_eq!(text.lines().count(), 13);
        assert!(oracle_table(&[(0.5, 1000)], &TableDefaults::default()).is_err());
    }

    #[test]
    fn continuous_and_discrete_levels_agree() {
        for s in [1.5, 2.2, 2.6, 3.0, 4.0] {
            for n in [1000usize, 3000, 10_000, 100_000, 1_000_000] {
                let m = RateModel::new(2, 1.0, s, 2.0, n).unwrap();
                let j = oracle_j(&m, &table_grid(n, 2.0).unwrap()) as f64;
                let cont = (n as f64).ln() / ((2.0 * s + 2.0 + 4.0) * 2f64.ln());
                assert!((j - cont).abs() <= 1.0, "s={s} n={n}: {j} vs {cont}");
            }
        }
    }

    proptest! {
        #[test]
        fn tradeoff_is_monotone(
            s_gap in 0.05f64..4.0,
            r in 0.0f64..2.0,
            d in 1usize..4,
            b in 1.1f64..4.0,
            n in 1usize..1_000_000,
            j in 0usize..12,
        ) {
            let m = RateModel::new(d, r, r + s_gap, b, n).unwrap();
            let a = model_mse(&m, j);
            let c = model_mse(&m, j + 1);
            prop_assert!(c.bias2 < a.bias2);
            prop_assert!(c.var > a.var);
        }

        #[test]
        fn oracle_is_locally_optimal(
            s in 1.2f64..4.0,
            n in 10usize..1_000_000,
        ) {
            let m = RateModel::new(2, 1.0, s, 2.0, n).unwrap();
            let grid = table_grid(n, 2.0).unwrap();
            let j = oracle_j(&m, &grid);
            let here = model_mse(&m, j).mse;
            if j > grid.j_min {
                prop_assert!(model_mse(&m, j - 1).mse >= here);
            }
            if j < grid.j_max {
                prop_assert!(model_mse(&m, j + 1).mse >= here);
            }
        }

        #[test]
        fn oracle_level_grows_with_n(s in 1.2f64..4.0, n in 10usize..100_000) {
            let a = RateModel::new(2, 1.0, s, 2.0, n).unwrap();
            let b = RateModel::new(2, 1.0, s, 2.0, 4 * n).unwrap();
            let grid = ResolutionGrid::new(0, 40, 2.0).unwrap();
            prop_assert!(oracle_j(&b, &grid) >= oracle_j(&a, &grid));
        }
    }
}
