use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::profile::KalmanParams;
use crate::bbox::BBox;

type Vec7 = SVector<f64, 7>;
type Mat7 = SMatrix<f64, 7, 7>;
type Mat4x7 = SMatrix<f64, 4, 7>;
type Mat4 = SMatrix<f64, 4, 4>;

const MIN_AREA: f64 = 1.0;
const MIN_ASPECT: f64 = 1e-3;

/// Constant-velocity Kalman filter over (cx, cy, area, aspect, v_cx, v_cy, v_area),
/// with velocities in units per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanBoxFilter {
    pub x: Vec7,
    pub p: Mat7,
}

fn measurement(b: &BBox) -> SVector<f64, 4> {
    SVector::<f64, 4>::new(b.cx, b.cy, b.w * b.h, b.w / b.h)
}

fn h_matrix() -> Mat4x7 {
    let mut h = Mat4x7::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

impl KalmanBoxFilter {
    pub fn new(b: &BBox, params: &KalmanParams) -> Self {
        let z = measurement(b);
        let mut x = Vec7::zeros();
        x.fixed_rows_mut::<4>(0).copy_from(&z);
        KalmanBoxFilter {
            x,
            p: Mat7::from_diagonal(&Vec7::from_column_slice(&params.initial_covariance)),
        }
    }

    /// Advances the state by `dt` frames.
    pub fn predict(&mut self, dt: f64, params: &KalmanParams) {
        if self.x[2] + self.x[6] * dt <= 0.0 {
            self.x[6] = 0.0;
        }
        let mut f = Mat7::identity();
        f[(0, 4)] = dt;
        f[(1, 5)] = dt;
        f[(2, 6)] = dt;
        let q = Mat7::from_diagonal(&Vec7::from_column_slice(&params.process_noise)) * dt;
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + q;
        self.clamp();
    }

    pub fn update(&mut self, b: &BBox, params: &KalmanParams) {
        let h = h_matrix();
        let r = Mat4::from_diagonal(&SVector::<f64, 4>::from_column_slice(&params.measurement_noise));
        let y = measurement(b) - h * self.x;
        let s = h * self.p * h.transpose() + r;
        let Some(s_inv) = s.try_inverse() else {
            return;
        };
        let k = self.p * h.transpose() * s_inv;
        self.x += k * y;
        self.p = (Mat7::identity() - k * h) * self.p;
        self.clamp();
    }

    fn clamp(&mut self) {
        self.x[2] = self.x[2].max(MIN_AREA);
        self.x[3] = self.x[3].max(MIN_ASPECT);
    }

    pub fn bbox(&self) -> BBox {
        let s = self.x[2];
        let r = self.x[3];
        let w = (s * r).sqrt();
        BBox::new(self.x[0], self.x[1], w, s / w)
    }
}
