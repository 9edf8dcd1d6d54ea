//! Nelson-Siegel factor loadings.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::market_data::MaturityGrid;

/// Decay rate per month used throughout unless configured otherwise.
pub const DEFAULT_LAMBDA: f64 = 0.0609;

/// Level, slope and curvature loadings at maturity `tau` (months).
pub fn loading_row(tau: f64, lambda: f64) -> Result<[f64; 3]> {
    if !(tau > 0.0) || !tau.is_finite() {
        return invalid(format!("maturity must be positive, got {tau}"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return invalid(format!("decay rate must be positive, got {lambda}"));
    }
    let x = lambda * tau;
    let decay = (-x).exp();
    // -expm1 keeps precision for tiny x where 1 - e^{-x} cancels.
    let slope = -(-x).exp_m1() / x;
    Ok([1.0, slope, slope - decay])
}

/// N x 3 loading matrix over a maturity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsLoadingMatrix {
    pub matrix: DMatrix<f64>,
    pub lambda: f64,
    pub grid: MaturityGrid,
}

impl NsLoadingMatrix {
    pub fn n_tenors(&self) -> usize {
        self.matrix.nrows()
    }
}

pub fn loading_matrix(grid: &MaturityGrid, lambda: f64) -> Result<NsLoadingMatrix> {
    let n = grid.len();
    let mut matrix = DMatrix::zeros(n, 3);
    for (i, &tau) in grid.tenors().iter().enumerate() {
        let row = loading_row(tau, lambda)?;
        for (j, v) in row.into_iter().enumerate() {
            matrix[(i, j)] = v;
        }
    }
    Ok(NsLoadingMatrix {
        matrix,
        lambda,
        grid: grid.clone(),
    })
}

/// Yield at `tau` implied by factors `(level, slope, curvature)`.
pub fn ns_yield(factors: &[f64; 3], tau: f64, lambda: f64) -> Result<f64> {
    let row = loading_row(tau, lambda)?;
    Ok(row[0] * factors[0] + row[1] * factors[1] + row[2] * factors[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn short_maturity_limit() {
        let r = loading_row(1e-9, DEFAULT_LAMBDA).unwrap();
        assert_abs_diff_eq!(r[0], 1.0);
        assert_abs_diff_eq!(r[1], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r[2], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn one_month_values() {
        // closed forms evaluated independently
        let x: f64 = 0.0609;
        let slope = (1.0 - (-x).exp()) / x;
        let curv = slope - (-x).exp();
        let r = loading_row(1.0, 0.0609).unwrap();
        assert_abs_diff_eq!(r[1], slope, epsilon = 1e-14);
        assert_abs_diff_eq!(r[2], curv, epsilon = 1e-14);
        assert_abs_diff_eq!(r[1], 0.970_158_837_368, epsilon = 1e-11);
        assert_abs_diff_eq!(r[2], 0.029_241_510_564, epsilon = 1e-11);
    }

    #[test]
    fn long_maturity_limit() {
        let r = loading_row(1e9, DEFAULT_LAMBDA).unwrap();
        assert!(r[1] < 1e-6 && r[2] < 1e-6);
    }

    #[test]
    fn rejects_non_positive_inputs() {
        assert!(loading_row(0.0, 0.06).is_err());
        assert!(loading_row(-1.0, 0.06).is_err());
        assert!(loading_row(1.0, 0.0).is_err());
        assert!(loading_row(f64::NAN, 0.06).is_err());
    }

    #[test]
    fn canonical_matrix_structure() {
        let m = loading_matrix(&MaturityGrid::canonical(), DEFAULT_LAMBDA).unwrap();
        assert_eq!(m.matrix.shape(), (12, 3));
        for i in 0..12 {
            assert_eq!(m.matrix[(i, 0)], 1.0);
            assert!(m.matrix[(i, 1)] > 0.0 && m.matrix[(i, 1)] <= 1.0);
            assert!(m.matrix[(i, 2)] >= 0.0);
            if i > 0 {
                assert!(m.matrix[(i, 1)] < m.matrix[(i - 1, 1)]);
            }
        }
    }

    #[test]
    fn rows_follow_grid_order() {
        let a = MaturityGrid::new(vec![3.0, 12.0, 60.0, 120.0]).unwrap();
        let b = MaturityGrid::new(vec![6.0, 24.0, 36.0, 360.0]).unwrap();
        let ma = loading_matrix(&a, 0.05).unwrap();
        let mb = loading_matrix(&b, 0.05).unwrap();
        for (i, &t) in a.tenors().iter().enumerate() {
            let row = loading_row(t, 0.05).unwrap();
            for j in 0..3 {
                assert_eq!(ma.matrix[(i, j)], row[j]);
            }
        }
        assert_eq!(mb.matrix.nrows(), 4);
    }

    #[test]
    fn curvature_hump_location() {
        // dense-grid argmax of the curvature loading
        let mut best = (0.0, f64::MIN);
        let mut tau = 0.01;
        while tau < 120.0 {
            let c = loading_row(tau, 0.0609).unwrap()[2];
            if c > best.1 {
                best = (tau, c);
            }
            tau += 0.01;
        }
        assert!((best.0 - 29.5).abs() < 0.1, "argmax at {}", best.0);
    }

    #[test]
    fn curvature_is_slope_minus_decay() {
        for k in 1..400 {
            let tau = k as f64 * 0.9;
            let r = loading_row(tau, 0.0609).unwrap();
            assert_abs_diff_eq!(r[2], r[1] - (-0.0609 * tau).exp(), epsilon = 1e-15);
        }
    }

    #[test]
    fn loadings_are_continuous() {
        for &tau in &[0.5, 1.0, 7.3, 30.0, 200.0] {
            let base = loading_row(tau, 0.0609).unwrap();
            let mut prev_gap = f64::INFINITY;
            for e in 1..8 {
                let h = 10f64.powi(-e);
                let r = loading_row(tau + h, 0.0609).unwrap();
                let gap = (0..3).map(|j| (r[j] - base[j]).abs()).fold(0.0, f64::max);
                assert!(gap <= prev_gap + 1e-15);
                prev_gap = gap;
            }
            assert!(prev_gap < 1e-7);
        }
    }

    #[test]
    fn slope_monotone_on_grid() {
        let mut prev = f64::INFINITY;
        for k in 1..2000 {
            let s = loading_row(k as f64 * 0.25, 0.0609).unwrap()[1];
            assert!(s < prev);
            prev = s;
        }
    }
}
