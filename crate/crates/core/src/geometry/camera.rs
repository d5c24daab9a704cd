//! Pinhole camera with Brown-Conrady lens distortion.
//!
//! ```text
//! a = (x/z, y/z)                 normalized coordinates
//! r² = a·a
//! radial = 1 + k1·r² + k2·r⁴ + k3·r⁶
//! dx = 2·p1·ax·ay + p2·(r² + 2·ax²)
//! dy = p1·(r² + 2·ay²) + 2·p2·ax·ay
//! u = fx·(radial·ax + dx) + cx
//! v = fy·(radial·ay + dy) + cy
//! ```
//!
//! Pixel `(i, j)` covers `[i, i+1) × [j, j+1)`; its center is `(i + 0.5, j + 0.5)`.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

/// Default cap on undistortion iterations.
pub const UNDISTORT_MAX_ITERATIONS: usize = 50;

/// Residual (pixels) below which the undistortion is accepted.
pub const UNDISTORT_TOLERANCE_PX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    /// Distortion-free camera.
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            p1: 0.0,
            p2: 0.0,
            width,
            height,
        }
    }

    pub fn with_distortion(mut self, k1: f64, k2: f64, k3: f64, p1: f64, p2: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self.k3 = k3;
        self.p1 = p1;
        self.p2 = p2;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.fx, self.fy, self.cx, self.cy, self.k1, self.k2, self.k3, self.p1, self.p2,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument(
                "camera parameters must be finite".into(),
            ));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image size must be positive ({}x{})",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn has_distortion(&self) -> bool {
        self.k1 != 0.0 || self.k2 != 0.0 || self.k3 != 0.0 || self.p1 != 0.0 || self.p2 != 0.0
    }

    /// Same lens, image resampled by `scale`. Pixel coordinates scale linearly.
    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            fx: self.fx * scale,
            fy: self.fy * scale,
            cx: self.cx * scale,
            cy: self.cy * scale,
            width: scaled_dim(self.width, scale),
            height: scaled_dim(self.height, scale),
            ..*self
        }
    }

    /// Copy with all distortion coefficients zeroed.
    pub fn without_distortion(&self) -> Self {
        Self {
            k1: 0.0,
            k2: 0.0,
            k3: 0.0,
            p1: 0.0,
            p2: 0.0,
            ..*self
        }
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Applies the distortion model to normalized coordinates.
    pub fn distort_normalized(&self, a: Vector2<f64>) -> Vector2<f64> {
        let (x, y) = (a.x, a.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        Vector2::new(radial * x + dx, radial * y + dy)
    }

    /// Distortion and its Jacobian with respect to the normalized coordinates.
    pub fn distort_normalized_with_jacobian(
        &self,
        a: Vector2<f64>,
    ) -> (Vector2<f64>, Matrix2<f64>) {
        let (x, y) = (a.x, a.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        // d(radial)/d(r2)
        let dradial = self.k1 + r2 * (2.0 * self.k2 + 3.0 * self.k3 * r2);
        let dx = 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x);
        let dy = self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y;
        let value = Vector2::new(radial * x + dx, radial * y + dy);

        let jxx = radial + 2.0 * x * x * dradial + 2.0 * self.p1 * y + 6.0 * self.p2 * x;
        let jxy = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y;
        let jyx = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y;
        let jyy = radial + 2.0 * y * y * dradial + 6.0 * self.p1 * y + 2.0 * self.p2 * x;
        (value, Matrix2::new(jxx, jxy, jyx, jyy))
    }

    /// Pixel position of normalized coordinates after distortion.
    pub fn distort(&self, a: Vector2<f64>) -> Point2 {
        let d = self.distort_normalized(a);
        Point2::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy)
    }

    /// Maps an ideal (undistorted) pixel to the pixel the real lens records.
    pub fn distort_pixel(&self, u: &Point2) -> Point2 {
        self.distort(self.pixel_to_normalized(u))
    }

    pub fn pixel_to_normalized(&self, u: &Point2) -> Vector2<f64> {
        Vector2::new((u.x - self.cx) / self.fx, (u.y - self.cy) / self.fy)
    }

    pub fn normalized_to_pixel(&self, a: Vector2<f64>) -> Point2 {
        Point2::new(self.fx * a.x + self.cx, self.fy * a.y + self.cy)
    }

    /// Projects a camera-frame point to distorted pixel coordinates.
    pub fn project_camera_point(&self, x: &Vector3<f64>) -> Result<Point2> {
        if !(x.z > 0.0) {
            return Err(Error::NonPositiveDepth(x.z));
        }
        Ok(self.distort(Vector2::new(x.x / x.z, x.y / x.z)))
    }

    /// Projection together with `d(pixel)/d(camera point)`.
    pub fn project_camera_point_with_jacobian(
        &self,
        x: &Vector3<f64>,
    ) -> Result<(Point2, Matrix2x3<f64>)> {
        if !(x.z > 0.0) {
            return Err(Error::NonPositiveDepth(x.z));
        }
        let iz = 1.0 / x.z;
        let a = Vector2::new(x.x * iz, x.y * iz);
        let (d, jd) = self.distort_normalized_with_jacobian(a);
        let ja = Matrix2x3::new(iz, 0.0, -a.x * iz, 0.0, iz, -a.y * iz);
        let k = Matrix2::new(self.fx, 0.0, 0.0, self.fy);
        let pixel = Point2::new(self.fx * d.x + self.cx, self.fy * d.y + self.cy);
        Ok((pixel, k * jd * ja))
    }

    /// Inverts the distortion: returns the ideal pinhole pixel whose distorted image is `u`.
    pub fn undistort(&self, u: &Point2) -> Result<Point2> {
        self.undistort_with_cap(u, UNDISTORT_MAX_ITERATIONS)
    }

    pub fn undistort_with_cap(&self, u: &Point2, max_iterations: usize) -> Result<Point2> {
        if !(u.x.is_finite() && u.y.is_finite()) {
            return Err(Error::InvalidArgument("non-finite pixel".into()));
        }
        if !self.has_distortion() {
            return Ok(*u);
        }
        let target = self.pixel_to_normalized(u);
        let scale = Vector2::new(self.fx, self.fy);
        let pixel_residual = |a: Vector2<f64>| -> (Vector2<f64>, f64) {
            let r = self.distort_normalized(a) - target;
            (r, r.component_mul(&scale).norm())
        };

        let mut a = target;
        let (mut r, mut err) = pixel_residual(a);
        for _ in 0..max_iterations {
            if err < UNDISTORT_TOLERANCE_PX {
                return Ok(self.normalized_to_pixel(a));
            }
            let (_, j) = self.distort_normalized_with_jacobian(a);
            let Some(step) = j.lu().solve(&r) else {
                break;
            };
            // Damped Newton: halve until the residual decreases.
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let candidate = a - step * lambda;
                let (rc, ec) = pixel_residual(candidate);
                if ec.is_finite() && ec < err {
                    a = candidate;
                    r = rc;
                    err = ec;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if err < UNDISTORT_TOLERANCE_PX {
            Ok(self.normalized_to_pixel(a))
        } else {
            Err(Error::NoConvergence {
                iterations: max_iterations,
                residual: err,
            })
        }
    }
}

fn scaled_dim(dim: u32, scale: f64) -> u32 {
    ((dim as f64 * scale).round() as u32).max(1)
}
