//! Closed-form ridge regression from audio features to lower AUs, used as
//! the oracle bound on what the audio-to-AU mapping can reach.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cmdm::LOWER_SLOTS;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Regularization strengths tried on the validation split.
pub const LAMBDA_GRID: [f64; 9] = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0];

/// A fitted linear map `y = (x - x_mean) W + y_mean`.
#[derive(Clone, Debug)]
pub struct RidgeModel {
    x_mean: DVector<f64>,
    y_mean: DVector<f64>,
    weights: DMatrix<f64>,
}

impl RidgeModel {
    /// Fits with the dual (kernel) form, which is cheaper when rows < cols.
    pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        let n = x.nrows();
        if n == 0 || y.nrows() != n {
            return Err(Error::Data(format!("ridge fit on {} / {} rows", n, y.nrows())));
        }
        let x_mean = x.row_mean().transpose();
        let y_mean = y.row_mean().transpose();
        let xc = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] - x_mean[j]);
        let yc = DMatrix::from_fn(n, y.ncols(), |i, j| y[(i, j)] - y_mean[j]);
        let k = &xc * xc.transpose() + DMatrix::identity(n, n) * lambda;
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::NonFinite("ridge kernel matrix is not positive definite".into()))?;
        let dual = chol.solve(&yc);
        Ok(Self { x_mean, y_mean, weights: xc.transpose() * dual })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let xc = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - self.x_mean[j]);
        let mut y = xc * &self.weights;
        for mut row in y.row_iter_mut() {
            row += self.y_mean.transpose();
        }
        y
    }
}

fn mae(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().sum() / a.len() as f64
}

/// Outcome of the audio-to-lower-AU oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RidgeReport {
    pub lambda: f64,
    pub validation_mae: f64,
    /// Mean absolute error on the held-out frames, in AU units.
    pub test_mae: f64,
    pub train_frames: usize,
    pub test_frames: usize,
}

/// Picks lambda on the last fifth of the training frames, refits on all of
/// them and reports the error on frames `train_end..`.
pub fn ridge_oracle(audio: &Tensor, au: &Tensor, train_end: usize) -> Result<RidgeReport> {
    let t = audio.rows();
    if au.rows() != t || train_end < 10 || train_end >= t {
        return Err(Error::Data(format!(
            "ridge oracle needs 10 <= train_end < T (train_end {train_end}, T {t}, AU rows {})",
            au.rows()
        )));
    }
    let x = DMatrix::from_row_slice(t, audio.cols(), audio.data());
    let y = DMatrix::from_fn(t, LOWER_SLOTS.len(), |i, k| au.row_slice(i)[LOWER_SLOTS[k]]);
    let fit_end = train_end * 4 / 5;
    let rows = |m: &DMatrix<f64>, a: usize, b: usize| m.rows(a, b - a).into_owned();
    let mut best = (f64::INFINITY, LAMBDA_GRID[0]);
    for &lambda in &LAMBDA_GRID {
        let m = RidgeModel::fit(&rows(&x, 0, fit_end), &rows(&y, 0, fit_end), lambda)?;
        let err = mae(&m.predict(&rows(&x, fit_end, train_end)), &rows(&y, fit_end, train_end));
        if err < best.0 {
            best = (err, lambda);
        }
    }
    let m = RidgeModel::fit(&rows(&x, 0, train_end), &rows(&y, 0, train_end), best.1)?;
    let test_mae = mae(&m.predict(&rows(&x, train_end, t)), &rows(&y, train_end, t));
    Ok(RidgeReport {
        lambda: best.1,
        validation_mae: best.0,
        test_mae,
        train_frames: train_end,
        test_frames: t - train_end,
    })
}
