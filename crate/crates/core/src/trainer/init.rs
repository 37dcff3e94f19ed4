use nalgebra::Vector3;
use rayon::prelude::*;

use crate::camera::CameraView;
use crate::gaussian::{Splat, SplatField};
use crate::geometry::PointCloud;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitConfig {
    pub max_splats: usize,
    pub opacity: f64,
    /// Neighbours averaged for the initial isotropic scale.
    pub neighbours: usize,
    pub min_scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            max_splats: 3000,
            opacity: 0.5,
            neighbours: 3,
            min_scale: 1e-3,
        }
    }
}

/// One isotropic splat per point (strided down to `max_splats`), scaled by
/// the mean distance to its nearest neighbours.
pub fn field_from_cloud(
    cloud: &PointCloud,
    background: Vector3<f64>,
    cfg: &InitConfig,
) -> SplatField {
    let stride = cloud.len().div_ceil(cfg.max_splats.max(1)).max(1);
    let pts: Vec<_> = cloud.points.iter().step_by(stride).collect();
    let k = cfg.neighbours.max(1);
    let splats = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut nearest = vec![f64::INFINITY; k];
            for (j, q) in pts.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p.position - q.position).norm();
                if d < nearest[k - 1] {
                    nearest[k - 1] = d;
                    nearest.sort_by(f64::total_cmp);
                }
            }
            let finite: Vec<f64> = nearest.into_iter().filter(|d| d.is_finite()).collect();
            let scale = if finite.is_empty() {
                cfg.min_scale
            } else {
                (finite.iter().sum::<f64>() / finite.len() as f64).max(cfg.min_scale)
            };
            Splat::new(
                p.position,
                Vector3::repeat(scale),
                cfg.opacity,
                Vector3::from(p.color),
            )
        })
        .collect();
    SplatField::new(splats, background)
}

/// Radius of the camera centres around their mean, inflated by 10%; 1 for a
/// single camera.
pub fn scene_extent(cams: &[CameraView]) -> f64 {
    if cams.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vector3<f64>> = cams.iter().map(CameraView::center).collect();
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let r = centers
        .iter()
        .map(|c| (c - mean).norm())
        .fold(0.0, f64::max);
    if r > 1e-9 {
        1.1 * r
    } else {
        1.0
    }
}
