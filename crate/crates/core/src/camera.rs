//! Pinhole camera with a rigid world-to-camera pose.
//!
//! Pixel `(x, y)` has its center at the integer coordinate `(x, y)`, so the
//! principal point `(cx, cy)` sits on a pixel center when it is integral.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Point2, Vector3};
use thiserror::Error;

use crate::error::IoError;

const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    Focal { fx: f64, fy: f64 },
    #[error("image size must be at least 1x1 (got {width}x{height})")]
    Size { width: usize, height: usize },
    #[error("rotation is not orthonormal with determinant +1")]
    Rotation,
    #[error("non-finite camera parameter")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraView {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation: `p_cam = rotation * p_world + translation`.
    pub translation: Vector3<f64>,
}

impl CameraView {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, CameraError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at the world origin looking down +z.
    pub fn identity(f: f64, width: usize, height: usize) -> Self {
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .expect("identity camera is valid")
    }

    /// Builds a camera at `eye` looking at `target`, with image-down along
    /// the projection of `-up`.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        f: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, CameraError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let rotation =
            Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            rotation,
            translation,
        )
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite());
        if !finite {
            return Err(CameraError::NonFinite);
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Focal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        if self.width < 1 || self.height < 1 {
            return Err(CameraError::Size {
                width: self.width,
                height: self.height,
            });
        }
        let ortho = (self.rotation * self.rotation.transpose() - Matrix3::identity()).amax();
        if ortho > ROTATION_TOL || (self.rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(CameraError::Rotation);
        }
        Ok(())
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn camera_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Continuous pixel coordinate of a camera-frame point (no z check).
    #[inline]
    pub fn project_camera(&self, p: &Vector3<f64>) -> Point2<f64> {
        Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Projects a world point; `None` when it is not in front of the camera.
    /// Returns the continuous pixel coordinate and camera-space depth.
    #[inline]
    pub fn project(&self, p_world: &Vector3<f64>) -> Option<(Point2<f64>, f64)> {
        let pc = self.world_to_camera(p_world);
        if pc.z <= 0.0 {
            return None;
        }
        Some((self.project_camera(&pc), pc.z))
    }

    /// Nearest pixel for a continuous coordinate, if inside the image.
    #[inline]
    pub fn pixel_of(&self, uv: &Point2<f64>) -> Option<(usize, usize)> {
        let x = (uv.x + 0.5).floor();
        let y = (uv.y + 0.5).floor();
        if x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64 {
            Some((x as usize, y as usize))
        } else {
            None
        }
    }

    /// World point seen at pixel coordinate `(u, v)` with camera-space depth `d`.
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> Vector3<f64> {
        let pc = Vector3::new((u - self.cx) / self.fx * d, (v - self.cy) / self.fy * d, d);
        self.camera_to_world(&pc)
    }

    /// Offset from `reference` as (translation distance, rotation angle in radians).
    pub fn offset_from(&self, reference: &CameraView) -> (f64, f64) {
        let dist = (self.center() - reference.center()).norm();
        let rel = self.rotation * reference.rotation.transpose();
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        (dist, cos.acos())
    }
}

/// Sorts view indices by increasing offset from `reference`: translation
/// distance first, rotation angle as tie-break, index last.
pub fn order_by_offset(views: &[CameraView], reference: &CameraView) -> Vec<usize> {
    let mut keyed: Vec<(f64, f64, usize)> = views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (d, a) = v.offset_from(reference);
            (d, a, i)
        })
        .collect();
    keyed.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    keyed.into_iter().map(|k| k.2).collect()
}

/// Trajectory line: `fx fy cx cy w h r00..r22 t0 t1 t2`.
pub fn format_trajectory(views: &[CameraView]) -> String {
    let mut out = String::new();
    for v in views {
        write!(
            out,
            "{} {} {} {} {} {}",
            v.fx, v.fy, v.cx, v.cy, v.width, v.height
        )
        .unwrap();
        for r in 0..3 {
            for c in 0..3 {
                write!(out, " {}", v.rotation[(r, c)]).unwrap();
            }
        }
        for i in 0..3 {
            write!(out, " {}", v.translation[i]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<CameraView>, IoError> {
    let mut views = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 18 {
            return Err(IoError::parse(
                path,
                lineno + 1,
                format!("expected 18 fields, found {}", fields.len()),
            ));
        }
        let num = |i: usize| -> Result<f64, IoError> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| IoError::parse(path, lineno + 1, format!("field {}: {e}", i + 1)))
        };
        let size = |i: usize| -> Result<usize, IoError> {
            fields[i]
                .parse::<usize>()
                .map_err(|e| IoError::parse(path, lineno + 1, format!("field {}: {e}", i + 1)))
        };
        let mut rot = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                rot[(r, c)] = num(6 + r * 3 + c)?;
            }
        }
        let t = Vector3::new(num(15)?, num(16)?, num(17)?);
        let cam = CameraView::new(
            num(0)?,
            num(1)?,
            num(2)?,
            num(3)?,
            size(4)?,
            size(5)?,
            rot,
            t,
        )
        .map_err(|e| IoError::parse(path, lineno + 1, e.to_string()))?;
        views.push(cam);
    }
    Ok(views)
}

pub fn load_trajectory(path: &Path) -> Result<Vec<CameraView>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_trajectory(&text, path)
}

pub fn save_trajectory(path: &Path, views: &[CameraView]) -> Result<(), IoError> {
    std::fs::write(path, format_trajectory(views)).map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn rejects_invalid_parameters() {
        let r = Matrix3::identity();
        let t = Vector3::zeros();
        assert!(matches!(
            CameraView::new(0.0, 1.0, 0.0, 0.0, 4, 4, r, t),
            Err(CameraError::Focal { .. })
        ));
        assert!(matches!(
            CameraView::new(1.0, 1.0, 0.0, 0.0, 0, 4, r, t),
            Err(CameraError::Size { .. })
        ));
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert_eq!(
            CameraView::new(1.0, 1.0, 0.0, 0.0, 4, 4, reflect, t),
            Err(CameraError::Rotation)
        );
    }

    #[test]
    fn principal_point_ray() {
        let cam = CameraView::new(
            100.0,
            100.0,
            32.0,
            32.0,
            64,
            64,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap();
        assert_eq!(cam.unproject(32.0, 32.0, 2.0), Vector3::new(0.0, 0.0, 2.0));
        assert_eq!(cam.unproject(42.0, 32.0, 5.0), Vector3::new(0.5, 0.0, 5.0));
    }

    #[test]
    fn look_at_centers_target() {
        let eye = Vector3::new(1.0, -0.5, -3.0);
        let cam = CameraView::look_at(
            eye,
            Vector3::zeros(),
            Vector3::new(0.0, -1.0, 0.0),
            50.0,
            33,
            21,
        )
        .unwrap();
        let (uv, z) = cam.project(&Vector3::zeros()).unwrap();
        assert!((uv.x - cam.cx).abs() < 1e-9 && (uv.y - cam.cy).abs() < 1e-9);
        assert!((z - eye.norm()).abs() < 1e-9);
        assert!((cam.center() - eye).norm() < 1e-12);
    }

    #[test]
    fn trajectory_text_round_trip() {
        let rot = Rotation3::from_euler_angles(0.1, -0.2, 0.3).into_inner();
        let a = CameraView::new(
            60.0,
            61.0,
            31.5,
            30.0,
            64,
            48,
            rot,
            Vector3::new(0.1, 0.2, 0.3),
        )
        .unwrap();
        let b = CameraView::identity(40.0, 16, 16);
        let text = format_trajectory(&[a.clone(), b.clone()]);
        let back = parse_trajectory(&text, Path::new("traj.txt")).unwrap();
        assert_eq!(back, vec![a, b]);
        assert_eq!(format_trajectory(&back), text);
    }

    #[test]
    fn trajectory_parse_error_names_line() {
        let err = parse_trajectory("# header\n1 2 3\n", Path::new("t.txt")).unwrap_err();
        assert!(err.to_string().contains("t.txt:2"), "{err}");
    }

    #[test]
    fn offset_ordering_uses_rotation_as_tiebreak() {
        let reference = CameraView::identity(50.0, 8, 8);
        let turned = CameraView::new(
            50.0,
            50.0,
            3.5,
            3.5,
            8,
            8,
            Rotation3::from_euler_angles(0.0, 0.3, 0.0).into_inner(),
            Vector3::zeros(),
        )
        .unwrap();
        let moved = CameraView::new(
            50.0,
            50.0,
            3.5,
            3.5,
            8,
            8,
            Matrix3::identity(),
            Vector3::new(0.5, 0.0, 0.0),
        )
        .unwrap();
        let order = order_by_offset(&[moved, turned, reference.clone()], &reference);
        assert_eq!(order, vec![2, 1, 0]);
    }
}
