//! Tile-based front-to-back alpha compositing and its reverse-mode pass.
//!
//! Splats are sorted once by the camera-space depth of their mean and
//! binned into 16×16 pixel tiles. Each tile composites independently, and
//! the backward pass reduces per-tile gradient buffers in tile order, so
//! both passes are bit-identical regardless of thread scheduling.

use std::cmp::Ordering;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;
use thiserror::Error;

use super::project::{project_splat, ProjectedSplat, ALPHA_MAX, ALPHA_MIN};
use super::{rotation_grad_to_quat, SplatField, PARAMS_PER_SPLAT};
use crate::camera::CameraView;
use crate::image::{DepthMap, Grid, RgbImage, ScalarMap};

pub const TILE: usize = 16;
/// Compositing stops once the remaining transmittance drops below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("forward record was computed for a different {0}")]
    RecordMismatch(&'static str),
    #[error("upstream gradient is {got:?}, render is {expected:?}")]
    UpstreamDims {
        got: (usize, usize),
        expected: (usize, usize),
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterSettings {
    pub near: f64,
    /// Depth composited behind the last splat.
    pub background_depth: f64,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            near: 0.01,
            background_depth: 100.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub splat: u32,
    pub alpha: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
}

/// Per-pixel contribution lists in compositing order (CSR layout).
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionRecords {
    pub width: usize,
    pub height: usize,
    pub field_fingerprint: u64,
    pub splat_count: usize,
    pub offsets: Vec<usize>,
    pub entries: Vec<Contribution>,
    pub projections: Vec<Option<ProjectedSplat>>,
    /// Splat indices binned to each tile, in compositing order.
    pub tiles: Vec<Vec<u32>>,
    pub settings: RasterSettings,
}

impl ContributionRecords {
    pub fn pixel(&self, x: usize, y: usize) -> &[Contribution] {
        let i = y * self.width + x;
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: RgbImage,
    /// Alpha-weighted expected depth, background depth behind.
    pub depth: DepthMap,
    /// Accumulated opacity `Σ αᵢ Tᵢ`.
    pub alpha: ScalarMap,
    /// Transmittance left after the last splat.
    pub transmittance: ScalarMap,
    pub records: ContributionRecords,
}

/// Upstream gradients of a scalar loss with respect to the render outputs.
#[derive(Clone, Debug)]
pub struct RenderGrads {
    pub color: RgbImage,
    pub depth: ScalarMap,
    pub alpha: ScalarMap,
}

impl RenderGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            color: Grid::filled(width, height, [0.0; 3]),
            depth: Grid::filled(width, height, 0.0),
            alpha: Grid::filled(width, height, 0.0),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub mean: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub quat: Vector4<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
    /// Norm of the gradient with respect to the projected mean (px).
    pub mean2d_norm: f64,
}

impl SplatGrad {
    pub fn params(&self) -> [f64; PARAMS_PER_SPLAT] {
        let mut p = [0.0; PARAMS_PER_SPLAT];
        p[0..3].copy_from_slice(self.mean.as_slice());
        p[3..6].copy_from_slice(self.log_scale.as_slice());
        p[6..10].copy_from_slice(self.quat.as_slice());
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(self.color.as_slice());
        p
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldGrads {
    pub splats: Vec<SplatGrad>,
}

fn sort_key_cmp(
    field: &SplatField,
    proj: &[Option<ProjectedSplat>],
    a: usize,
    b: usize,
) -> Ordering {
    let da = proj[a].as_ref().map_or(f64::INFINITY, |p| p.depth);
    let db = proj[b].as_ref().map_or(f64::INFINITY, |p| p.depth);
    da.total_cmp(&db).then_with(|| {
        let pa = field.splats[a].params();
        let pb = field.splats[b].params();
        pa.iter()
            .zip(pb.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn tile_grid(cam: &CameraView) -> (usize, usize) {
    (cam.width.div_ceil(TILE), cam.height.div_ceil(TILE))
}

/// Splat indices per tile, each list in compositing order.
fn bin_tiles(order: &[usize], proj: &[Option<ProjectedSplat>], cam: &CameraView) -> Vec<Vec<u32>> {
    let (tw, th) = tile_grid(cam);
    let mut tiles = vec![Vec::new(); tw * th];
    for &i in order {
        let Some((x0, y0, x1, y1)) = proj[i].as_ref().and_then(|p| p.bbox) else {
            continue;
        };
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                tiles[ty * tw + tx].push(i as u32);
            }
        }
    }
    tiles
}

/// Side of the sub-tile blocks a tile's list is split into; purely a
/// culling aid, compositing order is unaffected.
const BLOCK: usize = 4;

/// Splits one tile's list into per-block lists, preserving order.
fn bin_blocks(
    list: &[u32],
    proj: &[Option<ProjectedSplat>],
    x_origin: usize,
    y_origin: usize,
) -> Vec<Vec<u32>> {
    const N: usize = TILE / BLOCK;
    let mut blocks = vec![Vec::new(); N * N];
    for &si in list {
        let Some((x0, y0, x1, y1)) = proj[si as usize].as_ref().and_then(|p| p.bbox) else {
            continue;
        };
        let bx0 = x0.saturating_sub(x_origin) / BLOCK;
        let by0 = y0.saturating_sub(y_origin) / BLOCK;
        let bx1 = ((x1.saturating_sub(x_origin)) / BLOCK).min(N - 1);
        let by1 = ((y1.saturating_sub(y_origin)) / BLOCK).min(N - 1);
        if x1 < x_origin || y1 < y_origin {
            continue;
        }
        for by in by0..=by1 {
            for bx in bx0..=bx1 {
                blocks[by * N + bx].push(si);
            }
        }
    }
    blocks
}

/// Opacity of `p` at pixel center `(x, y)`, before clamping, with the
/// offset from the projected mean.
#[inline]
fn raw_alpha(p: &ProjectedSplat, x: usize, y: usize) -> (f64, f64, Vector2<f64>) {
    let d = Vector2::new(x as f64 - p.mean2d.x, y as f64 - p.mean2d.y);
    let g = (-0.5 * d.dot(&(p.conic * d))).exp();
    (p.opacity * g, g, d)
}

struct PixelOut {
    index: usize,
    color: [f64; 3],
    depth: f64,
    alpha: f64,
    transmittance: f64,
    /// End of this pixel's run in the tile's entry buffer.
    end: usize,
}

#[derive(Default)]
struct TileOut {
    pixels: Vec<PixelOut>,
    entries: Vec<Contribution>,
}

/// The fields compositing reads, packed for cache locality.
struct Compact {
    mean: [f64; 2],
    conic: [f64; 4],
    opacity: f64,
    /// `½ dᵀQd` above which the opacity is certainly below [`ALPHA_MIN`].
    cutoff: f64,
    depth: f64,
    color: [f64; 3],
    bbox: [usize; 4],
}

impl Compact {
    fn new(p: Option<&ProjectedSplat>, color: &Vector3<f64>) -> Self {
        match p {
            Some(p) => {
                let b = p.bbox.unwrap_or((1, 1, 0, 0));
                Self {
                    mean: [p.mean2d.x, p.mean2d.y],
                    conic: [
                        p.conic[(0, 0)],
                        p.conic[(0, 1)],
                        p.conic[(1, 0)],
                        p.conic[(1, 1)],
                    ],
                    opacity: p.opacity,
                    cutoff: (p.opacity / ALPHA_MIN).ln() + 1e-6,
                    depth: p.depth,
                    color: [color.x, color.y, color.z],
                    bbox: [b.0, b.1, b.2, b.3],
                }
            }
            None => Self {
                mean: [0.0; 2],
                conic: [0.0; 4],
                opacity: 0.0,
                cutoff: f64::NEG_INFINITY,
                depth: 0.0,
                color: [0.0; 3],
                bbox: [1, 1, 0, 0],
            },
        }
    }
}

/// Renders color, expected depth and accumulated opacity.
pub fn rasterize(field: &SplatField, cam: &CameraView, settings: &RasterSettings) -> RenderOutput {
    let (w, h) = (cam.width, cam.height);
    let proj: Vec<Option<ProjectedSplat>> = field
        .splats
        .par_iter()
        .map(|s| project_splat(s, cam, settings.near))
        .collect();
    let mut order: Vec<usize> = (0..field.len()).filter(|&i| proj[i].is_some()).collect();
    order.sort_by(|&a, &b| sort_key_cmp(field, &proj, a, b));
    let tiles = bin_tiles(&order, &proj, cam);
    let (tw, _) = tile_grid(cam);
    let bg = field.background;

    let compact: Vec<Compact> = proj
        .iter()
        .enumerate()
        .map(|(i, p)| Compact::new(p.as_ref(), &field.splats[i].color))
        .collect();

    let tile_pixels: Vec<TileOut> = tiles
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let (tx, ty) = (t % tw, t / tw);
            let blocks = bin_blocks(list, &proj, tx * TILE, ty * TILE);
            let mut out = TileOut::default();
            for y in ty * TILE..((ty + 1) * TILE).min(h) {
                for x in tx * TILE..((tx + 1) * TILE).min(w) {
                    let list = &blocks
                        [((y - ty * TILE) / BLOCK) * (TILE / BLOCK) + (x - tx * TILE) / BLOCK];
                    let (xf, yf) = (x as f64, y as f64);
                    let mut trans = 1.0;
                    let mut color = [0.0; 3];
                    let mut depth = 0.0;
                    let mut alpha = 0.0;
                    for &si in list {
                        let p = &compact[si as usize];
                        if x < p.bbox[0] || x > p.bbox[2] || y < p.bbox[1] || y > p.bbox[3] {
                            continue;
                        }
                        let (dx, dy) = (xf - p.mean[0], yf - p.mean[1]);
                        let q = p.conic[0] * dx * dx
                            + (p.conic[1] + p.conic[2]) * dx * dy
                            + p.conic[3] * dy * dy;
                        if 0.5 * q > p.cutoff {
                            continue;
                        }
                        let a = (p.opacity * (-0.5 * q).exp()).min(ALPHA_MAX);
                        if a < ALPHA_MIN {
                            continue;
                        }
                        let wgt = a * trans;
                        for k in 0..3 {
                            color[k] += wgt * p.color[k];
                        }
                        depth += wgt * p.depth;
                        alpha += wgt;
                        out.entries.push(Contribution {
                            splat: si,
                            alpha: a,
                            transmittance: trans,
                        });
                        trans *= 1.0 - a;
                        if trans < TRANSMITTANCE_MIN {
                            break;
                        }
                    }
                    for k in 0..3 {
                        color[k] += trans * bg[k];
                    }
                    depth += trans * settings.background_depth;
                    out.pixels.push(PixelOut {
                        index: y * w + x,
                        color,
                        depth,
                        alpha,
                        transmittance: trans,
                        end: out.entries.len(),
                    });
                }
            }
            out
        })
        .collect();

    let mut pixel_at: Vec<(usize, usize)> = vec![(usize::MAX, 0); w * h];
    for (t, tile) in tile_pixels.iter().enumerate() {
        for (k, px) in tile.pixels.iter().enumerate() {
            pixel_at[px.index] = (t, k);
        }
    }
    let mut color = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let mut alpha = Vec::with_capacity(w * h);
    let mut transmittance = Vec::with_capacity(w * h);
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut entries = Vec::with_capacity(tile_pixels.iter().map(|t| t.entries.len()).sum());
    offsets.push(0);
    for &(t, k) in &pixel_at {
        let tile = &tile_pixels[t];
        let px = &tile.pixels[k];
        let begin = if k == 0 { 0 } else { tile.pixels[k - 1].end };
        color.push(px.color);
        depth.push(px.depth);
        alpha.push(px.alpha);
        transmittance.push(px.transmittance);
        entries.extend_from_slice(&tile.entries[begin..px.end]);
        offsets.push(entries.len());
    }
    RenderOutput {
        color: Grid::from_vec(w, h, color),
        depth: Grid::from_vec(w, h, depth),
        alpha: Grid::from_vec(w, h, alpha),
        transmittance: Grid::from_vec(w, h, transmittance),
        records: ContributionRecords {
            width: w,
            height: h,
            field_fingerprint: field.fingerprint(),
            splat_count: field.len(),
            offsets,
            entries,
            projections: proj,
            tiles,
            settings: *settings,
        },
    }
}

/// Gradients in image space, accumulated per splat before the chain rule
/// through the projection.
#[derive(Clone, Default)]
struct ScreenGrad {
    mean2d: Vector2<f64>,
    conic: Matrix2<f64>,
    opacity: f64,
    color: Vector3<f64>,
    depth: f64,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        self.mean2d += o.mean2d;
        self.conic += o.conic;
        self.opacity += o.opacity;
        self.color += o.color;
        self.depth += o.depth;
    }
}

/// Reverse-mode pass for [`rasterize`]. Culled splats get zero gradients.
pub fn rasterize_backward(
    field: &SplatField,
    cam: &CameraView,
    forward: &RenderOutput,
    upstream: &RenderGrads,
) -> Result<FieldGrads, RasterError> {
    let rec = &forward.records;
    if rec.splat_count != field.len() || rec.field_fingerprint != field.fingerprint() {
        return Err(RasterError::RecordMismatch("field"));
    }
    if (rec.width, rec.height) != (cam.width, cam.height) {
        return Err(RasterError::RecordMismatch("camera"));
    }
    for dims in [
        upstream.color.dims(),
        upstream.depth.dims(),
        upstream.alpha.dims(),
    ] {
        if dims != (rec.width, rec.height) {
            return Err(RasterError::UpstreamDims {
                got: dims,
                expected: (rec.width, rec.height),
            });
        }
    }
    let (w, h) = (rec.width, rec.height);
    let (tw, th) = tile_grid(cam);
    let n = field.len();
    let bg = field.background;
    let bg_depth = rec.settings.background_depth;

    let partials: Vec<Vec<(u32, ScreenGrad)>> = (0..tw * th)
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % tw, t / tw);
            // Dense per-tile accumulators, slots handed out in tile-list order.
            let list = &rec.tiles[t];
            let mut slot = vec![u32::MAX; n];
            for (k, &si) in list.iter().enumerate() {
                slot[si as usize] = k as u32;
            }
            let mut local = vec![ScreenGrad::default(); list.len()];
            let mut touched = vec![false; list.len()];
            for y in ty * TILE..((ty + 1) * TILE).min(h) {
                for x in tx * TILE..((tx + 1) * TILE).min(w) {
                    let list = rec.pixel(x, y);
                    if list.is_empty() {
                        continue;
                    }
                    let g_color = Vector3::from(*upstream.color.get(x, y));
                    let g_depth = *upstream.depth.get(x, y);
                    let g_alpha = *upstream.alpha.get(x, y);
                    let mut behind_color = bg;
                    let mut behind_depth = bg_depth;
                    let mut behind_alpha = 0.0;
                    for c in list.iter().rev() {
                        let p = rec.projections[c.splat as usize]
                            .as_ref()
                            .expect("contributing splat is projected");
                        let color = field.splats[c.splat as usize].color;
                        let (a, t) = (c.alpha, c.transmittance);
                        let wgt = a * t;
                        let d_alpha = t
                            * (g_color.dot(&(color - behind_color))
                                + g_depth * (p.depth - behind_depth)
                                + g_alpha * (1.0 - behind_alpha));
                        let k = slot[c.splat as usize] as usize;
                        touched[k] = true;
                        let entry = &mut local[k];
                        entry.color += g_color * wgt;
                        entry.depth += g_depth * wgt;
                        let (raw, g, d) = raw_alpha(p, x, y);
                        if raw < ALPHA_MAX {
                            // α = σ·g with g = exp(−½ dᵀ Q d), d = pixel − mean2d.
                            entry.opacity += d_alpha * g;
                            let qd = p.conic * d;
                            entry.mean2d += qd * (d_alpha * a);
                            entry.conic += (d * d.transpose()) * (-0.5 * d_alpha * a);
                        }
                        behind_color = color * a + behind_color * (1.0 - a);
                        behind_depth = a * p.depth + (1.0 - a) * behind_depth;
                        behind_alpha = a + (1.0 - a) * behind_alpha;
                    }
                }
            }
            list.iter()
                .zip(local)
                .zip(touched)
                .filter(|(_, t)| *t)
                .map(|((&si, g), _)| (si, g))
                .collect::<Vec<_>>()
        })
        .collect();

    let mut screen = vec![ScreenGrad::default(); n];
    for tile in &partials {
        for (i, g) in tile {
            screen[*i as usize].add(g);
        }
    }

    let splats = screen
        .par_iter()
        .enumerate()
        .map(|(i, sg)| match &rec.projections[i] {
            None => SplatGrad::default(),
            Some(p) => chain_to_params(field, cam, i, p, sg),
        })
        .collect();
    Ok(FieldGrads { splats })
}

fn chain_to_params(
    field: &SplatField,
    cam: &CameraView,
    i: usize,
    p: &ProjectedSplat,
    sg: &ScreenGrad,
) -> SplatGrad {
    let splat = &field.splats[i];
    let sigma_o = p.opacity;

    // Q = cov2d⁻¹  ⇒  dL/dcov2d = −Q (dL/dQ) Q.
    let g_cov2d = -(p.conic * sg.conic * p.conic);
    // cov2d = J Σc Jᵀ + blur·I.
    let j = &p.jacobian;
    let g_cov_cam = j.transpose() * g_cov2d * j;
    let g_j = (g_cov2d + g_cov2d.transpose()) * j * p.cov_cam;
    // Σc = W Σ Wᵀ.
    let wrot = &cam.rotation;
    let g_sigma = wrot.transpose() * g_cov_cam * wrot;
    // Σ = M Mᵀ with M = R S.
    let m = p.rotation * Matrix3::from_diagonal(&p.scale);
    let g_m = (g_sigma + g_sigma.transpose()) * m;
    let mut g_log_scale = Vector3::zeros();
    for k in 0..3 {
        let ds = (0..3)
            .map(|r| g_m[(r, k)] * p.rotation[(r, k)])
            .sum::<f64>();
        g_log_scale[k] = ds * p.scale[k];
    }
    let g_rot = g_m * Matrix3::from_diagonal(&p.scale);
    let g_quat = rotation_grad_to_quat(&splat.quat, &g_rot);

    // Mean: mean2d = π(t), J = ∂π/∂t, depth = t.z.
    let t = &p.cam_point;
    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = t.z * t.z;
    let z3 = z2 * t.z;
    let mut g_t = j.transpose() * sg.mean2d;
    g_t.x += g_j[(0, 2)] * (-fx / z2);
    g_t.y += g_j[(1, 2)] * (-fy / z2);
    g_t.z += g_j[(0, 0)] * (-fx / z2)
        + g_j[(0, 2)] * (2.0 * fx * t.x / z3)
        + g_j[(1, 1)] * (-fy / z2)
        + g_j[(1, 2)] * (2.0 * fy * t.y / z3);
    g_t.z += sg.depth;
    let g_mean = wrot.transpose() * g_t;

    SplatGrad {
        mean: g_mean,
        log_scale: g_log_scale,
        quat: g_quat,
        opacity_logit: sg.opacity * sigma_o * (1.0 - sigma_o),
        color: sg.color,
        mean2d_norm: sg.mean2d.norm(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Splat;
    use nalgebra::Vector3;

    fn cam(w: usize, h: usize) -> CameraView {
        CameraView::new(
            40.0,
            40.0,
            8.0,
            8.0,
            w,
            h,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap()
    }

    /// Splat whose projected center lands on pixel (8, 8) with a sharp
    /// footprint so the exponent vanishes there.
    fn centered(z: f64, opacity: f64, color: Vector3<f64>) -> Splat {
        Splat::new(
            Vector3::new(0.0, 0.0, z),
            Vector3::repeat(0.002),
            opacity,
            color,
        )
    }

    #[test]
    fn zero_splats_render_background() {
        let bg = Vector3::new(0.2, 0.4, 0.6);
        let field = SplatField::new(vec![], bg);
        let out = rasterize(&field, &cam(20, 18), &RasterSettings::default());
        assert!(out.color.data().iter().all(|c| *c == [0.2, 0.4, 0.6]));
        assert!(out.alpha.data().iter().all(|&a| a == 0.0));
        assert!(out.depth.data().iter().all(|&d| d == 100.0));
    }

    #[test]
    fn opaque_centered_splat_shows_its_color() {
        let field = SplatField::new(
            vec![centered(2.0, 0.999_999, Vector3::new(0.9, 0.3, 0.1))],
            Vector3::zeros(),
        );
        let out = rasterize(&field, &cam(16, 16), &RasterSettings::default());
        let c = out.color.get(8, 8);
        assert!((c[0] - 0.9 * ALPHA_MAX).abs() < 1e-9);
        assert!((*out.alpha.get(8, 8) - ALPHA_MAX).abs() < 1e-9);
    }

    #[test]
    fn two_layer_compositing() {
        // Front red at α = 0.5, back blue at α clamped to 0.999 ≈ 1.
        let front = centered(2.0, 0.5, Vector3::new(1.0, 0.0, 0.0));
        let back = centered(3.0, 1.0 - 1e-12, Vector3::new(0.0, 0.0, 1.0));
        let field = SplatField::new(vec![back, front], Vector3::zeros());
        let out = rasterize(&field, &cam(16, 16), &RasterSettings::default());
        let c = out.color.get(8, 8);
        assert!((c[0] - 0.5).abs() < 1e-9);
        assert!(c[1].abs() < 1e-12);
        assert!((c[2] - 0.5 * ALPHA_MAX).abs() < 1e-9);
        let list = out.records.pixel(8, 8);
        assert_eq!(list.len(), 2);
        assert_eq!(list[0].splat, 1);
    }

    #[test]
    fn conservation_alpha_plus_transmittance() {
        let splats = (0..6)
            .map(|k| {
                Splat::new(
                    Vector3::new(
                        0.02 * k as f64 - 0.05,
                        0.01 * k as f64,
                        1.5 + 0.1 * k as f64,
                    ),
                    Vector3::new(0.05, 0.03, 0.04),
                    0.3 + 0.1 * k as f64,
                    Vector3::new(0.5, 0.2, 0.1),
                )
            })
            .collect();
        let field = SplatField::new(splats, Vector3::new(0.1, 0.1, 0.1));
        let out = rasterize(&field, &cam(17, 19), &RasterSettings::default());
        for (a, t) in out.alpha.data().iter().zip(out.transmittance.data()) {
            assert!((a + t - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(a));
        }
    }

    #[test]
    fn single_splat_color_gradient_equals_alpha() {
        let field = SplatField::new(
            vec![centered(2.0, 0.6, Vector3::new(0.3, 0.3, 0.3))],
            Vector3::zeros(),
        );
        let c = cam(16, 16);
        let out = rasterize(&field, &c, &RasterSettings::default());
        let mut up = RenderGrads::zeros(16, 16);
        up.color.set(8, 8, [1.0, 0.0, 0.0]);
        let g = rasterize_backward(&field, &c, &out, &up).unwrap();
        let alpha = *out.alpha.get(8, 8);
        assert!((g.splats[0].color.x - alpha).abs() < 1e-15);
        assert_eq!(g.splats[0].color.y, 0.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let field = SplatField::new(
            vec![centered(2.0, 0.6, Vector3::new(0.3, 0.3, 0.3))],
            Vector3::zeros(),
        );
        let c = cam(16, 16);
        let out = rasterize(&field, &c, &RasterSettings::default());
        let g = rasterize_backward(&field, &c, &out, &RenderGrads::zeros(16, 16)).unwrap();
        assert!(g.splats[0].params().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn culled_splat_gets_zero_gradient_and_mismatch_is_rejected() {
        let mut field = SplatField::new(
            vec![
                centered(2.0, 0.6, Vector3::new(0.3, 0.3, 0.3)),
                centered(-2.0, 0.6, Vector3::new(0.3, 0.3, 0.3)),
            ],
            Vector3::zeros(),
        );
        let c = cam(16, 16);
        let out = rasterize(&field, &c, &RasterSettings::default());
        let mut up = RenderGrads::zeros(16, 16);
        up.alpha = Grid::filled(16, 16, 1.0);
        let g = rasterize_backward(&field, &c, &out, &up).unwrap();
        assert!(g.splats[1].params().iter().all(|&v| v == 0.0));
        assert!(g.splats[0].opacity_logit != 0.0);

        field.splats[0].color.x = 0.31;
        assert_eq!(
            rasterize_backward(&field, &c, &out, &up).unwrap_err(),
            RasterError::RecordMismatch("field")
        );
        assert!(matches!(
            rasterize_backward(&field, &c, &out, &RenderGrads::zeros(15, 16)),
            Err(RasterError::RecordMismatch("field"))
        ));
        let field = SplatField::new(field.splats[..1].to_vec(), Vector3::zeros());
        assert!(matches!(
            rasterize_backward(&field, &c, &out, &up),
            Err(RasterError::RecordMismatch("field"))
        ));
    }
}
