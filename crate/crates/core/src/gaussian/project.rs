use nalgebra::{Matrix2, Matrix2x3, Matrix3, Point2, Vector3};

use super::Splat;
use crate::camera::CameraView;

/// Screen-space blur added to every projected covariance (px²).
pub const BLUR: f64 = 0.3;
/// Per-splat opacity clamp.
pub const ALPHA_MAX: f64 = 0.999;
/// Contributions below this opacity are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;

/// A splat linearized into the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedSplat {
    pub mean2d: Point2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    /// Camera-space depth of the mean.
    pub depth: f64,
    pub cam_point: Vector3<f64>,
    pub jacobian: Matrix2x3<f64>,
    /// Covariance rotated into the camera frame, `W Σ Wᵀ`.
    pub cov_cam: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    /// Inclusive pixel range `(x0, y0, x1, y1)` outside of which the
    /// opacity is always below [`ALPHA_MIN`]; `None` when no pixel can be hit.
    pub bbox: Option<(usize, usize, usize, usize)>,
}

/// Perspective projection with the local affine (EWA) approximation.
/// Returns `None` when the mean is at or behind the near plane.
pub fn project_splat(splat: &Splat, cam: &CameraView, near: f64) -> Option<ProjectedSplat> {
    let t = cam.world_to_camera(&splat.mean);
    if !(t.z > near) {
        return None;
    }
    let (fx, fy) = (cam.fx, cam.fy);
    let jacobian = Matrix2x3::new(
        fx / t.z,
        0.0,
        -fx * t.x / (t.z * t.z),
        0.0,
        fy / t.z,
        -fy * t.y / (t.z * t.z),
    );
    let rotation = splat.rotation();
    let scale = splat.scale();
    let m = rotation * Matrix3::from_diagonal(&scale);
    let sigma = m * m.transpose();
    let w = cam.rotation;
    let cov_cam = w * sigma * w.transpose();
    let mut cov2d = jacobian * cov_cam * jacobian.transpose();
    cov2d[(0, 1)] = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(1, 0)] = cov2d[(0, 1)];
    cov2d[(0, 0)] += BLUR;
    cov2d[(1, 1)] += BLUR;
    let conic = cov2d.try_inverse()?;
    if !conic.iter().all(|v| v.is_finite()) {
        return None;
    }
    let mean2d = cam.project_camera(&t);
    let opacity = splat.opacity();
    let bbox = footprint(&mean2d, &cov2d, opacity, cam);
    Some(ProjectedSplat {
        mean2d,
        cov2d,
        conic,
        depth: t.z,
        cam_point: t,
        jacobian,
        cov_cam,
        rotation,
        scale,
        opacity,
        bbox,
    })
}

/// Exact axis-aligned bound of the ellipse where `opacity·g ≥ ALPHA_MIN`.
fn footprint(
    mean: &Point2<f64>,
    cov2d: &Matrix2<f64>,
    opacity: f64,
    cam: &CameraView,
) -> Option<(usize, usize, usize, usize)> {
    let level = opacity / ALPHA_MIN;
    if !(level >= 1.0) {
        return None;
    }
    let r2 = 2.0 * level.ln();
    let ex = (r2 * cov2d[(0, 0)]).sqrt() + 1e-9;
    let ey = (r2 * cov2d[(1, 1)]).sqrt() + 1e-9;
    let x0 = (mean.x - ex).ceil().max(0.0);
    let y0 = (mean.y - ey).ceil().max(0.0);
    let x1 = (mean.x + ex).floor().min(cam.width as f64 - 1.0);
    let y1 = (mean.y + ey).floor().min(cam.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}
