//! Constant-velocity Kalman filter over `(cx, cy, aspect, h)` and velocities.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::types::BBox;

pub type StateVec = SVector<f64, 8>;
pub type StateCov = SMatrix<f64, 8, 8>;
pub type MeasVec = SVector<f64, 4>;
pub type MeasCov = SMatrix<f64, 4, 4>;

/// 0.95 quantile of the chi-square distribution with 4 degrees of freedom.
pub const CHI2_95_4DOF: f64 = 9.4877;

const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVec,
    pub covariance: StateCov,
}

fn measurement(b: &BBox) -> MeasVec {
    let (cx, cy) = b.center();
    MeasVec::new(cx, cy, b.width / b.height, b.height)
}

fn transition() -> StateCov {
    let mut f = StateCov::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn diag8(std: [f64; 8]) -> StateCov {
    StateCov::from_diagonal(&StateVec::from_iterator(std.iter().map(|s| s * s)))
}

fn symmetrize(m: &StateCov) -> StateCov {
    (m + m.transpose()) * 0.5
}

impl KalmanState {
    pub fn init(b: &BBox) -> Self {
        let z = measurement(b);
        let h = b.height;
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let (p, v) = (STD_WEIGHT_POSITION, STD_WEIGHT_VELOCITY);
        let covariance = diag8([
            2.0 * p * h,
            2.0 * p * h,
            1e-2,
            2.0 * p * h,
            10.0 * v * h,
            10.0 * v * h,
            1e-5,
            10.0 * v * h,
        ]);
        KalmanState { mean, covariance }
    }

    pub fn predict(&self) -> Self {
        let h = self.mean[3];
        let (p, v) = (STD_WEIGHT_POSITION, STD_WEIGHT_VELOCITY);
        let q = diag8([p * h, p * h, 1e-2, p * h, v * h, v * h, 1e-5, v * h]);
        let f = transition();
        KalmanState {
            mean: f * self.mean,
            covariance: symmetrize(&(f * self.covariance * f.transpose() + q)),
        }
    }

    /// Predicted measurement and its covariance (state uncertainty plus
    /// measurement noise).
    pub fn project(&self) -> (MeasVec, MeasCov) {
        let h = self.mean[3];
        let p = STD_WEIGHT_POSITION;
        let r = MeasCov::from_diagonal(&MeasVec::new((p * h).powi(2), (p * h).powi(2), 1e-2, (p * h).powi(2)));
        let mean = self.mean.fixed_rows::<4>(0).into_owned();
        let cov = self.covariance.fixed_view::<4, 4>(0, 0).into_owned() + r;
        (mean, cov)
    }

    pub fn update(&self, b: &BBox) -> Result<Self> {
        let (proj_mean, proj_cov) = self.project();
        let chol = proj_cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?;
        // K = P H^T S^-1, with H selecting the first four state components
        let pht: SMatrix<f64, 8, 4> = self.covariance.fixed_view::<8, 4>(0, 0).into_owned();
        let gain: SMatrix<f64, 8, 4> = chol.solve(&pht.transpose()).transpose();
        let innovation = measurement(b) - proj_mean;
        let mean = self.mean + gain * innovation;
        let covariance = symmetrize(&(self.covariance - gain * proj_cov * gain.transpose()));
        Ok(KalmanState { mean, covariance })
    }

    /// Squared Mahalanobis distance of `b` under the projected distribution.
    pub fn gating_distance(&self, b: &BBox) -> Result<f64> {
        let (mean, cov) = self.project();
        mahalanobis_sq(&cov, &(measurement(b) - mean))
    }

    pub fn to_bbox(&self) -> BBox {
        let (cx, cy, a, h) = (self.mean[0], self.mean[1], self.mean[2], self.mean[3]);
        let w = a * h;
        BBox { left: cx - w / 2.0, top: cy - h / 2.0, width: w, height: h }
    }

    pub fn is_positive_definite(&self) -> bool {
        self.covariance.cholesky().is_some()
    }
}

/// `d^T S^-1 d` via Cholesky.
pub fn mahalanobis_sq(cov: &MeasCov, offset: &MeasVec) -> Result<f64> {
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(offset)
        .ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
    Ok(y.norm_squared())
}
