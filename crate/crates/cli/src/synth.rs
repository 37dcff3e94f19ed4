//! Seeded toy scenes: colored blobs on two walls and a floor, an arc of
//! look-at cameras, and rectangle corruptions of chosen views.
//!
//! World axes: `+y` points down, cameras look toward `+z`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use iasplat::gaussian::{rasterize, RasterSettings, Splat, SplatField};
use iasplat::image::{DepthMap, Grid, Mask, RgbImage};
use iasplat::oracle::surface_depth;
use iasplat::CameraView;
use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::CliError;
use crate::layout::DataLayout;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptionMode {
    /// Fill the rectangle with one seeded color.
    Recolor,
    /// Permute the rectangle's 4×4 blocks.
    Shuffle,
}

impl fmt::Display for CorruptionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorruptionMode::Recolor => "recolor",
            CorruptionMode::Shuffle => "shuffle",
        })
    }
}

impl FromStr for CorruptionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "recolor" => Ok(CorruptionMode::Recolor),
            "shuffle" => Ok(CorruptionMode::Shuffle),
            other => Err(format!(
                "unknown corruption mode '{other}' (recolor|shuffle)"
            )),
        }
    }
}

/// Pixel rectangle `[x, x + w) × [y, y + h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn mask(&self, width: usize, height: usize) -> Mask {
        Grid::from_fn(width, height, |x, y| self.contains(x, y))
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x, self.y, self.w, self.h)
    }
}

impl FromStr for Rect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|e| format!("rect '{s}': {e}"))
            })
            .collect::<Result<_, _>>()?;
        match v[..] {
            [x, y, w, h] => Ok(Rect { x, y, w, h }),
            _ => Err(format!("rect '{s}': expected x,y,w,h")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length as a fraction of the image width.
    pub focal_factor: f64,
    /// Approximate splat count.
    pub splats: usize,
    pub arc_radius: f64,
    /// Total angular span of the arc, degrees.
    pub arc_span_deg: f64,
    pub corrupt_views: Vec<usize>,
    /// Area of each corruption rectangle as a fraction of the frame.
    pub corrupt_fraction: f64,
    /// Explicit rectangles, one per corrupted view; overrides the fraction.
    pub corrupt_rects: Vec<Rect>,
    pub corruption_mode: CorruptionMode,
    pub background: [f64; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            views: 12,
            width: 64,
            height: 64,
            focal_factor: 0.9,
            splats: 200,
            arc_radius: 3.5,
            arc_span_deg: 40.0,
            corrupt_views: vec![2, 5, 9],
            corrupt_fraction: 0.1,
            corrupt_rects: Vec::new(),
            corruption_mode: CorruptionMode::Recolor,
            background: [0.5, 0.5, 0.5],
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Spec(m));
        if self.views < 2 {
            return bad(format!("need at least 2 views, got {}", self.views));
        }
        if self.width < 8 || self.height < 8 {
            return bad(format!(
                "frames must be at least 8×8, got {}×{}",
                self.width, self.height
            ));
        }
        if !(50..=500).contains(&self.splats) {
            return bad(format!("splats must be in 50..=500, got {}", self.splats));
        }
        if !(self.focal_factor > 0.0 && self.arc_radius > 0.0) {
            return bad("focal_factor and arc_radius must be positive".into());
        }
        if !(0.0..180.0).contains(&self.arc_span_deg) {
            return bad(format!(
                "arc span {} must be in [0, 180)",
                self.arc_span_deg
            ));
        }
        if !(0.0..1.0).contains(&self.corrupt_fraction) {
            return bad(format!(
                "corrupt_fraction {} must be in [0, 1)",
                self.corrupt_fraction
            ));
        }
        if self.corrupt_views.len() >= self.views {
            return bad(format!(
                "{} corrupted views out of {}: at least one view must stay clean",
                self.corrupt_views.len(),
                self.views
            ));
        }
        let mut seen = vec![false; self.views];
        for &v in &self.corrupt_views {
            if v >= self.views {
                return bad(format!("corrupted view {v} out of range 0..{}", self.views));
            }
            if std::mem::replace(&mut seen[v], true) {
                return bad(format!("corrupted view {v} listed twice"));
            }
        }
        if !self.corrupt_rects.is_empty() {
            if self.corrupt_rects.len() != self.corrupt_views.len() {
                return bad(format!(
                    "{} rectangles for {} corrupted views",
                    self.corrupt_rects.len(),
                    self.corrupt_views.len()
                ));
            }
            for r in &self.corrupt_rects {
                if !r.fits(self.width, self.height) {
                    return bad(format!(
                        "rectangle {r} exceeds the {}×{} frame",
                        self.width, self.height
                    ));
                }
            }
        }
        Ok(())
    }

    /// Side of the square corruption rectangle implied by the fraction.
    pub fn square_side(&self) -> usize {
        let side = (self.corrupt_fraction * (self.width * self.height) as f64)
            .sqrt()
            .round() as usize;
        side.min(self.width).min(self.height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corruption {
    pub view: usize,
    pub rect: Rect,
    pub mode: CorruptionMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub field: SplatField,
    pub cameras: Vec<CameraView>,
    pub gt_color: Vec<RgbImage>,
    pub gt_depth: Vec<DepthMap>,
    pub observed: Vec<RgbImage>,
    pub corruptions: Vec<Corruption>,
}

impl SyntheticScene {
    /// Per-view corruption masks (empty for clean views).
    pub fn corruption_masks(&self) -> Vec<Mask> {
        corruption_masks(&self.corruptions, &self.cameras)
    }
}

pub fn corruption_masks(corruptions: &[Corruption], cameras: &[CameraView]) -> Vec<Mask> {
    cameras
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut m = Grid::filled(c.width, c.height, false);
            for k in corruptions.iter().filter(|k| k.view == i) {
                m = m.union(&k.rect.mask(c.width, c.height));
            }
            m
        })
        .collect()
}

struct Plane {
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    /// Axis (0, 1, 2) of the plane normal.
    normal_axis: usize,
}

fn planes() -> [Plane; 3] {
    [
        // Back wall.
        Plane {
            origin: Vector3::new(-2.6, -3.0, 4.5),
            u: Vector3::new(6.8, 0.0, 0.0),
            v: Vector3::new(0.0, 4.4, 0.0),
            normal_axis: 2,
        },
        // Left wall.
        Plane {
            origin: Vector3::new(-2.6, -3.0, 1.5),
            u: Vector3::new(0.0, 0.0, 3.0),
            v: Vector3::new(0.0, 4.4, 0.0),
            normal_axis: 0,
        },
        // Floor.
        Plane {
            origin: Vector3::new(-2.6, 1.4, 1.0),
            u: Vector3::new(6.8, 0.0, 0.0),
            v: Vector3::new(0.0, 0.0, 3.5),
            normal_axis: 1,
        },
    ]
}

/// Blobs on a jittered grid over each plane, about `n` in total.
pub fn toy_field(n: usize, background: [f64; 3], rng: &mut ChaCha8Rng) -> SplatField {
    let planes = planes();
    let area: f64 = planes.iter().map(|p| p.u.norm() * p.v.norm()).sum();
    let spacing = (area / n as f64).sqrt();
    let mut splats = Vec::new();
    for p in &planes {
        let nu = (p.u.norm() / spacing).round().max(1.0) as usize;
        let nv = (p.v.norm() / spacing).round().max(1.0) as usize;
        for j in 0..nv {
            for i in 0..nu {
                let a = (i as f64 + 0.5 + rng.random_range(-0.25..0.25)) / nu as f64;
                let b = (j as f64 + 0.5 + rng.random_range(-0.25..0.25)) / nv as f64;
                let mean = p.origin + p.u * a + p.v * b;
                let mut scale = Vector3::from_fn(|_, _| spacing * rng.random_range(0.55..0.75));
                scale[p.normal_axis] = 0.02;
                let color = Vector3::from_fn(|_, _| rng.random_range(0.05..0.95));
                splats.push(Splat::new(mean, scale, 0.95, color));
            }
        }
    }
    SplatField::new(splats, Vector3::from(background))
}

/// Look-at cameras on a horizontal arc around the scene center.
pub fn arc_trajectory(spec: &SynthSpec) -> Result<Vec<CameraView>, CliError> {
    let target = Vector3::new(0.3, 0.0, 3.5);
    let span = spec.arc_span_deg.to_radians();
    let f = spec.focal_factor * spec.width as f64;
    (0..spec.views)
        .map(|k| {
            let t = if spec.views == 1 {
                0.5
            } else {
                k as f64 / (spec.views - 1) as f64
            };
            let theta = -span / 2.0 + span * t;
            let eye = target
                + Vector3::new(theta.sin(), -0.2 / spec.arc_radius, -theta.cos()) * spec.arc_radius;
            CameraView::look_at(
                eye,
                target,
                Vector3::new(0.0, -1.0, 0.0),
                f,
                spec.width,
                spec.height,
            )
            .map_err(|e| CliError::Spec(format!("camera {k}: {e}")))
        })
        .collect()
}

fn corrupt(frame: &mut RgbImage, rect: &Rect, mode: CorruptionMode, rng: &mut ChaCha8Rng) {
    match mode {
        CorruptionMode::Recolor => {
            // The cube corner farthest from the region's mean color, so the
            // recolor is never close to what it replaces.
            let mut mean = [0.0; 3];
            for y in rect.y..rect.y + rect.h {
                for x in rect.x..rect.x + rect.w {
                    for (m, c) in mean.iter_mut().zip(frame.get(x, y)) {
                        *m += c / rect.area() as f64;
                    }
                }
            }
            let color = mean.map(|m| if m < 0.5 { 1.0 } else { 0.0 });
            for y in rect.y..rect.y + rect.h {
                for x in rect.x..rect.x + rect.w {
                    frame.set(x, y, color);
                }
            }
        }
        CorruptionMode::Shuffle => {
            const B: usize = 4;
            let (bw, bh) = (rect.w / B, rect.h / B);
            let mut order: Vec<usize> = (0..bw * bh).collect();
            order.shuffle(rng);
            let src = frame.clone();
            for (dst, &from) in order.iter().enumerate() {
                let (dx, dy) = (rect.x + (dst % bw) * B, rect.y + (dst / bw) * B);
                let (sx, sy) = (rect.x + (from % bw) * B, rect.y + (from / bw) * B);
                for j in 0..B {
                    for i in 0..B {
                        frame.set(dx + i, dy + j, *src.get(sx + i, sy + j));
                    }
                }
            }
        }
    }
}

/// Offset of a `side`-long span kept inside the central 60% of `extent`
/// when it fits there, so the region lies on geometry the reference view
/// also sees.
fn central_offset(extent: usize, side: usize, rng: &mut ChaCha8Rng) -> usize {
    let margin = extent / 5;
    if extent >= 2 * margin + side {
        rng.random_range(margin..=extent - margin - side)
    } else {
        rng.random_range(0..=extent - side)
    }
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SyntheticScene, CliError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = toy_field(spec.splats, spec.background, &mut rng);
    let cameras = arc_trajectory(spec)?;
    let settings = RasterSettings::default();
    let renders: Vec<_> = cameras
        .iter()
        .map(|c| rasterize(&field, c, &settings))
        .collect();
    let gt_color: Vec<RgbImage> = renders.iter().map(|r| r.color.clone()).collect();
    let gt_depth = renders
        .iter()
        .map(|r| surface_depth(r, &settings))
        .collect();
    let mut observed = gt_color.clone();
    let mut corruptions = Vec::new();
    let side = spec.square_side();
    for (k, &view) in spec.corrupt_views.iter().enumerate() {
        let rect = match spec.corrupt_rects.get(k) {
            Some(r) => *r,
            None => Rect {
                x: central_offset(spec.width, side, &mut rng),
                y: central_offset(spec.height, side, &mut rng),
                w: side,
                h: side,
            },
        };
        corrupt(&mut observed[view], &rect, spec.corruption_mode, &mut rng);
        corruptions.push(Corruption {
            view,
            rect,
            mode: spec.corruption_mode,
        });
    }
    Ok(SyntheticScene {
        field,
        cameras,
        gt_color,
        gt_depth,
        observed,
        corruptions,
    })
}

pub fn format_corruptions(list: &[Corruption]) -> String {
    let mut s = String::from("# view x y w h mode\n");
    for c in list {
        s.push_str(&format!(
            "{} {} {} {} {} {}\n",
            c.view, c.rect.x, c.rect.y, c.rect.w, c.rect.h, c.mode
        ));
    }
    s
}

pub fn parse_corruptions(text: &str, path: &Path) -> Result<Vec<Corruption>, CliError> {
    let err =
        |line: usize, message: String| CliError::Io(iasplat::IoError::parse(path, line, message));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(err(i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let n = |k: usize| {
            f[k].parse::<usize>()
                .map_err(|e| err(i + 1, format!("field {}: {e}", k + 1)))
        };
        out.push(Corruption {
            view: n(0)?,
            rect: Rect {
                x: n(1)?,
                y: n(2)?,
                w: n(3)?,
                h: n(4)?,
            },
            mode: f[5].parse().map_err(|e| err(i + 1, e))?,
        });
    }
    Ok(out)
}

/// Writes the dataset under `layout`'s data directory.
pub fn write_scene(scene: &SyntheticScene, layout: &DataLayout) -> Result<(), CliError> {
    layout.create()?;
    scene.field.save(&layout.gt_field())?;
    iasplat::camera::save_trajectory(&layout.trajectory(), &scene.cameras)?;
    for (i, mask) in scene.corruption_masks().iter().enumerate() {
        scene.gt_color[i].save_png(&layout.gt_frame(i))?;
        scene.gt_depth[i].save_depth_png(&layout.gt_depth(i), crate::layout::DEPTH_SCALE)?;
        scene.observed[i].save_png(&layout.observed(i))?;
        mask.save_png(&layout.corruption_mask(i))?;
    }
    let p = layout.corruptions();
    std::fs::write(&p, format_corruptions(&scene.corruptions))
        .map_err(|e| iasplat::IoError::io(&p, e))?;
    Ok(())
}
