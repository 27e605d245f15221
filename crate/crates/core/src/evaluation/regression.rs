use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EvaluationError;

pub const SIGNIFICANCE_ALPHA: f64 = 0.01;

/// Least-squares fit of `y = a n^2 + b n + c` with two-sided t-test p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub se_c: f64,
    pub p_a: f64,
    pub p_b: f64,
    pub p_c: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub df: usize,
}

impl QuadraticFit {
    pub fn predict(&self, n: f64) -> f64 {
        self.a * n * n + self.b * n + self.c
    }

    /// The quadratic term is positive and significant at `alpha`.
    pub fn quadratic_significant(&self, alpha: f64) -> bool {
        self.a > 0.0 && self.p_a < alpha
    }
}

fn two_sided_p(coef: f64, se: f64, dist: &StudentsT) -> f64 {
    if se == 0.0 {
        return if coef == 0.0 { 1.0 } else { 0.0 };
    }
    let t = (coef / se).abs();
    (2.0 * dist.sf(t)).min(1.0)
}

/// Fits `(n, y)` points. The `n` column is scaled by its maximum before the
/// solve so the design matrix stays well conditioned for suites of thousands
/// of tests; coefficients and standard errors are mapped back afterwards.
pub fn fit_quadratic(points: &[(f64, f64)]) -> Result<QuadraticFit, EvaluationError> {
    if points.len() < 4 {
        return Err(EvaluationError::InsufficientData {
            needed: 4,
            got: points.len(),
        });
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(EvaluationError::RankDeficient {
            distinct: distinct.len(),
        });
    }

    let m = points.len();
    let scale = points.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let x = DMatrix::from_fn(m, 3, |r, col| {
        let n = points[r].0 / scale;
        match col {
            0 => n * n,
            1 => n,
            _ => 1.0,
        }
    });
    let y = DVector::from_iterator(m, points.iter().map(|p| p.1));

    let svd = x.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = sigma_max * f64::EPSILON * m as f64;
    if svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(EvaluationError::RankDeficient {
            distinct: distinct.len(),
        });
    }
    let beta = svd
        .solve(&y, tol)
        .map_err(|_| EvaluationError::RankDeficient {
            distinct: distinct.len(),
        })?;

    let residuals = &y - &x * &beta;
    let rss = residuals.norm_squared();
    let df = m - 3;
    let sigma2 = rss / df as f64;

    // (X^T X)^-1 = V diag(1/s^2) V^T
    let v = svd.v_t.as_ref().expect("v_t computed").transpose();
    let inv_s2 = DMatrix::from_diagonal(&svd.singular_values.map(|s| 1.0 / (s * s)));
    let cov = &v * inv_s2 * v.transpose() * sigma2;

    let a = beta[0] / (scale * scale);
    let b = beta[1] / scale;
    let c = beta[2];
    let se_a = cov[(0, 0)].max(0.0).sqrt() / (scale * scale);
    let se_b = cov[(1, 1)].max(0.0).sqrt() / scale;
    let se_c = cov[(2, 2)].max(0.0).sqrt();

    let mean_y = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };

    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    Ok(QuadraticFit {
        a,
        b,
        c,
        se_a,
        se_b,
        se_c,
        p_a: two_sided_p(a, se_a, &dist),
        p_b: two_sided_p(b, se_b, &dist),
        p_c: two_sided_p(c, se_c, &dist),
        r_squared,
        n_points: m,
        df,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn recovers_noiseless_coefficients() {
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|n| {
                let n = n as f64;
                (n, 2.0 * n * n - 3.0 * n + 7.0)
            })
            .collect();
        let fit = fit_quadratic(&pts).unwrap();
        assert!((fit.a - 2.0).abs() < 1e-9, "{fit:?}");
        assert!((fit.b + 3.0).abs() < 1e-9, "{fit:?}");
        assert!((fit.c - 7.0).abs() < 1e-9, "{fit:?}");
        assert!(fit.r_squared > 1.0 - 1e-12);
        assert!(fit.quadratic_significant(SIGNIFICANCE_ALPHA));
    }

    #[test]
    fn constant_times_fit_flat() {
        let pts: Vec<(f64, f64)> = (1..=8).map(|n| (n as f64 * 10.0, 3.5)).collect();
        let fit = fit_quadratic(&pts).unwrap();
        assert!(fit.a.abs() < 1e-12 && fit.b.abs() < 1e-10);
        assert!((fit.c - 3.5).abs() < 1e-9);
    }

    #[test]
    fn recovers_noisy_quadratic_term() {
        let a = 4.598e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let pts: Vec<(f64, f64)> = (1..=40)
            .map(|i| {
                let n = 100.0 * i as f64;
                (n, a * n * n * (1.0 + noise.sample(&mut rng)))
            })
            .collect();
        let fit = fit_quadratic(&pts).unwrap();
        assert!(((fit.a - a) / a).abs() < 0.10, "{fit:?}");
        assert!(fit.p_a < SIGNIFICANCE_ALPHA);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert_eq!(
            fit_quadratic(&[(1.0, 1.0), (2.0, 2.0)]),
            Err(EvaluationError::InsufficientData { needed: 4, got: 2 })
        );
        let two_sizes = [(5.0, 1.0), (5.0, 1.1), (9.0, 2.0), (9.0, 2.1)];
        assert_eq!(
            fit_quadratic(&two_sizes),
            Err(EvaluationError::RankDeficient { distinct: 2 })
        );
    }

    #[test]
    fn linear_data_has_insignificant_quadratic_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let pts: Vec<(f64, f64)> = (1..=60)
            .map(|n| (n as f64, 5.0 * n as f64 + noise.sample(&mut rng)))
            .collect();
        let fit = fit_quadratic(&pts).unwrap();
        assert!(fit.p_b < 1e-6);
        assert!(fit.a.abs() < 0.01);
    }

    proptest! {
        /// Least-squares residuals are orthogonal to every design column.
        #[test]
        fn residuals_orthogonal_to_design(seed in any::<u64>(), m in 5usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 10.0).unwrap();
            let pts: Vec<(f64, f64)> = (0..m)
                .map(|i| {
                    let n = 10.0 + 37.0 * i as f64;
                    (n, 0.003 * n * n + n + noise.sample(&mut rng))
                })
                .collect();
            let fit = fit_quadratic(&pts).unwrap();
            let max_n = pts.iter().map(|p| p.0).fold(0.0, f64::max);
            let mut dots = [0.0f64; 3];
            let mut norms = [0.0f64; 3];
            for &(n, y) in &pts {
                let r = y - fit.predict(n);
                let s = n / max_n;
                for (k, col) in [s * s, s, 1.0].into_iter().enumerate() {
                    dots[k] += col * r;
                    norms[k] += col * col;
                }
            }
            let rss: f64 = pts.iter().map(|&(n, y)| (y - fit.predict(n)).powi(2)).sum();
            for k in 0..3 {
                let bound = 1e-8 * (norms[k] * rss).sqrt().max(1.0);
                prop_assert!(dots[k].abs() < bound, "column {k}: {} vs {bound}", dots[k]);
            }
            prop_assert!((0.0..=1.0).contains(&fit.p_a));
        }
    }
}
