use rand::Rng;

use super::standard_normal_grid;
use crate::error::{Error, Result};
use crate::grid::{ImageGrid, StencilOperator};

/// Largest grid side for which exact prior sampling is offered.
pub const SAR_EXACT_MAX_SIDE: usize = 16;

/// Exact draw from the SAR prior `N(0, [Dᵀ diag(w) D]⁻¹)` by solving
/// `D x = diag(w)^{-1/2} ε` with a dense LU factorisation.
pub fn sample_sar_prior<R: Rng + ?Sized>(
    op: &StencilOperator,
    weights: &ImageGrid,
    rng: &mut R,
) -> Result<ImageGrid> {
    let (w, h) = (op.width(), op.height());
    if w > SAR_EXACT_MAX_SIDE || h > SAR_EXACT_MAX_SIDE {
        return Err(Error::Invalid(format!(
            "exact SAR sampling is limited to {SAR_EXACT_MAX_SIDE}x{SAR_EXACT_MAX_SIDE} grids"
        )));
    }
    if weights.width() != w || weights.height() != h {
        return Err(Error::Dimension {
            expected: format!("{w}x{h}"),
            actual: format!("{}x{}", weights.width(), weights.height()),
        });
    }
    if let Some(&bad) = weights.data().iter().find(|&&v| v.is_nan() || v <= 0.0) {
        return Err(Error::Domain {
            name: "SAR weight",
            constraint: "> 0",
            value: bad,
        });
    }
    let eps = standard_normal_grid(w, h, rng);
    let rhs: Vec<f64> = eps
        .data()
        .iter()
        .zip(weights.data())
        .map(|(e, wt)| e / wt.sqrt())
        .collect();
    let x = solve_dense(op.to_dense(), rhs)?;
    ImageGrid::new(w, h, x)
}

/// Gaussian elimination with partial pivoting.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        if a[pivot][col].abs() < 1e-300 {
            return Err(Error::Invalid("singular system".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for j in col..n {
                    a[row][j] -= f * a[col][j];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|j| a[row][j] * x[j]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{stream_rng, Stream};

    #[test]
    fn solve_recovers_known_solution() {
        let op = StencilOperator::new(3, 3);
        let x: Vec<f64> = (0..9).map(|i| i as f64 * 0.5 - 1.0).collect();
        let g = ImageGrid::new(3, 3, x.clone()).unwrap();
        let b = op.apply(&g).unwrap().into_data();
        let solved = solve_dense(op.to_dense(), b).unwrap();
        for (a, e) in solved.iter().zip(&x) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_covariance_matches_prior_precision() {
        // 2x2 grid: empirical covariance of x against [Dᵀ W D]⁻¹ via E[D x xᵀ Dᵀ] = W⁻¹.
        let op = StencilOperator::new(2, 2);
        let weights = ImageGrid::new(2, 2, vec![1.0, 2.0, 0.5, 4.0]).unwrap();
        let mut rng = stream_rng(17, Stream::Instance, 0, 0, 0);
        let n = 40_000;
        let mut second = [[0.0f64; 4]; 4];
        for _ in 0..n {
            let x = sample_sar_prior(&op, &weights, &mut rng).unwrap();
            let dx = op.apply(&x).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    second[i][j] += dx.data()[i] * dx.data()[j] / n as f64;
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 / weights.data()[i] } else { 0.0 };
                assert!((second[i][j] - want).abs() < 0.05, "[{i}][{j}] {}", second[i][j]);
            }
        }
    }

    #[test]
    fn large_grids_rejected() {
        let op = StencilOperator::new(17, 4);
        let w = ImageGrid::filled(17, 4, 1.0);
        let mut rng = stream_rng(1, Stream::Instance, 0, 0, 0);
        assert!(sample_sar_prior(&op, &w, &mut rng).is_err());
    }
}
