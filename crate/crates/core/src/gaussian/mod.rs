//! Anisotropic 3D Gaussian splats and their CPU rasterizer.
//!
//! Parameters are stored unconstrained: log-scales, an opacity logit and a
//! raw quaternion that is normalized before use. Any plain gradient step
//! therefore keeps scales positive and opacity inside `(0, 1)`.

mod density;
mod project;
mod raster;

use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::Path;

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::IoError;

pub use density::{density_control, DensityConfig, DensityOutcome, GradStats, SplatOrigin};
pub use project::{project_splat, ProjectedSplat, ALPHA_MAX, ALPHA_MIN, BLUR};
pub use raster::{
    rasterize, rasterize_backward, Contribution, ContributionRecords, FieldGrads, RasterError,
    RasterSettings, RenderGrads, RenderOutput, SplatGrad, TILE,
};

/// Number of scalar parameters per splat.
pub const PARAMS_PER_SPLAT: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct Splat {
    pub mean: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// `(w, x, y, z)`; renormalized after every update.
    pub quat: Vector4<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

impl Splat {
    pub fn new(mean: Vector3<f64>, scale: Vector3<f64>, opacity: f64, color: Vector3<f64>) -> Self {
        Self {
            mean,
            log_scale: scale.map(f64::ln),
            quat: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_from_quat(&self.quat)
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance(&self.log_scale, &self.quat)
    }

    pub fn normalize_quat(&mut self) {
        let n = self.quat.norm();
        if n > 0.0 && n.is_finite() {
            self.quat /= n;
        } else {
            self.quat = Vector4::new(1.0, 0.0, 0.0, 0.0);
        }
    }

    /// Flat parameter vector in the order mean, log-scale, quat, opacity, color.
    pub fn params(&self) -> [f64; PARAMS_PER_SPLAT] {
        let mut p = [0.0; PARAMS_PER_SPLAT];
        p[0..3].copy_from_slice(self.mean.as_slice());
        p[3..6].copy_from_slice(self.log_scale.as_slice());
        p[6..10].copy_from_slice(self.quat.as_slice());
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(self.color.as_slice());
        p
    }

    pub fn set_params(&mut self, p: &[f64; PARAMS_PER_SPLAT]) {
        self.mean = Vector3::from_column_slice(&p[0..3]);
        self.log_scale = Vector3::from_column_slice(&p[3..6]);
        self.quat = Vector4::from_column_slice(&p[6..10]);
        self.opacity_logit = p[10];
        self.color = Vector3::from_column_slice(&p[11..14]);
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplatField {
    pub splats: Vec<Splat>,
    pub background: Vector3<f64>,
}

impl SplatField {
    pub fn new(splats: Vec<Splat>, background: Vector3<f64>) -> Self {
        Self { splats, background }
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    /// Stable hash of every parameter bit; ties a forward record to the
    /// field snapshot it was computed from.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.splats.len().hash(&mut h);
        for v in self.background.iter() {
            v.to_bits().hash(&mut h);
        }
        for s in &self.splats {
            for v in s.params() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Header `count r g b`, then one line per splat:
    /// `mu(3) log_scale(3) quat(4) opacity_logit color(3)`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{} {} {} {}",
            self.splats.len(),
            self.background.x,
            self.background.y,
            self.background.z
        )
        .unwrap();
        for s in &self.splats {
            let p = s.params();
            let line: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<SplatField, IoError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (hline, header) = lines
            .next()
            .ok_or_else(|| IoError::parse(path, 1, "missing header"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(IoError::parse(
                path,
                hline + 1,
                "header must be `count r g b`",
            ));
        }
        let count: usize = h[0]
            .parse()
            .map_err(|e| IoError::parse(path, hline + 1, format!("count: {e}")))?;
        let mut bg = [0.0; 3];
        for (k, slot) in bg.iter_mut().enumerate() {
            *slot = h[k + 1]
                .parse()
                .map_err(|e| IoError::parse(path, hline + 1, format!("background: {e}")))?;
        }
        let mut splats = Vec::with_capacity(count);
        for (i, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != PARAMS_PER_SPLAT {
                return Err(IoError::parse(
                    path,
                    i + 1,
                    format!("expected {PARAMS_PER_SPLAT} fields, found {}", f.len()),
                ));
            }
            let mut p = [0.0f64; PARAMS_PER_SPLAT];
            for (k, slot) in p.iter_mut().enumerate() {
                *slot = f[k]
                    .parse()
                    .map_err(|e| IoError::parse(path, i + 1, format!("field {}: {e}", k + 1)))?;
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(IoError::parse(path, i + 1, "non-finite parameter"));
            }
            let mut s = Splat::new(
                Vector3::zeros(),
                Vector3::repeat(1.0),
                0.5,
                Vector3::zeros(),
            );
            s.set_params(&p);
            splats.push(s);
        }
        if splats.len() != count {
            return Err(IoError::parse(
                path,
                1,
                format!("header declares {count} splats, found {}", splats.len()),
            ));
        }
        Ok(SplatField::new(splats, Vector3::from(bg)))
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        std::fs::write(path, self.to_text()).map_err(|e| IoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SplatField, IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn rotation_from_quat(q: &Vector4<f64>) -> Matrix3<f64> {
    let q = q / q.norm();
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `dL/dR` back to the raw (unnormalized) quaternion.
pub fn rotation_grad_to_quat(q: &Vector4<f64>, g: &Matrix3<f64>) -> Vector4<f64> {
    let norm = q.norm();
    let qn = q / norm;
    let (w, x, y, z) = (qn[0], qn[1], qn[2], qn[3]);
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gn = Vector4::new(gw, gx, gy, gz);
    (gn - qn * qn.dot(&gn)) / norm
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance(log_scale: &Vector3<f64>, quat: &Vector4<f64>) -> Matrix3<f64> {
    let m = rotation_from_quat(quat) * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    let sigma = m * m.transpose();
    (sigma + sigma.transpose()) * 0.5
}
