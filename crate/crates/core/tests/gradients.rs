//! Analytic rasterizer gradients against central finite differences.

use iasplat::gaussian::{
    rasterize, rasterize_backward, RasterSettings, RenderGrads, RenderOutput, Splat, SplatField,
    ALPHA_MAX, PARAMS_PER_SPLAT,
};
use iasplat::image::Grid;
use iasplat::CameraView;
use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 24;
const H: f64 = 1e-4;
const REL_TOL: f64 = 1e-3;
const ABS_FLOOR: f64 = 1e-5;

fn camera(rng: &mut ChaCha8Rng) -> CameraView {
    let eye = Vector3::new(
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        0.0,
    );
    CameraView::look_at(
        eye,
        Vector3::new(0.0, 0.0, 3.0),
        Vector3::new(0.0, -1.0, 0.0),
        24.0,
        SIZE,
        SIZE,
    )
    .unwrap()
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> SplatField {
    let splats = (0..n)
        .map(|_| {
            let z = rng.random_range(2.0..4.0);
            let mean = Vector3::new(
                rng.random_range(-0.4..0.4) * z,
                rng.random_range(-0.4..0.4) * z,
                z,
            );
            let mut s = Splat::new(
                mean,
                Vector3::from_fn(|_, _| rng.random_range(0.06..0.35)),
                rng.random_range(0.1..0.95),
                Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)),
            );
            s.quat = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            s.normalize_quat();
            s
        })
        .collect();
    SplatField::new(splats, Vector3::new(0.1, 0.2, 0.3))
}

fn upstream(rng: &mut ChaCha8Rng) -> RenderGrads {
    RenderGrads {
        color: Grid::from_fn(SIZE, SIZE, |_, _| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        }),
        depth: Grid::from_fn(SIZE, SIZE, |_, _| rng.random_range(-0.1..0.1)),
        alpha: Grid::from_fn(SIZE, SIZE, |_, _| rng.random_range(-1.0..1.0)),
    }
}

fn objective(out: &RenderOutput, up: &RenderGrads) -> f64 {
    let mut l = 0.0;
    for i in 0..out.color.len() {
        let (c, g) = (out.color.data()[i], up.color.data()[i]);
        l += c[0] * g[0] + c[1] * g[1] + c[2] * g[2];
        l += out.depth.data()[i] * up.depth.data()[i];
        l += out.alpha.data()[i] * up.alpha.data()[i];
    }
    l
}

/// Which splats blend at each pixel, in which order, and whether their
/// alpha sits on the clamp. Finite differences are only meaningful while
/// this stays fixed.
fn signature(out: &RenderOutput) -> Vec<(u32, bool)> {
    let mut sig = out
        .records
        .entries
        .iter()
        .map(|c| (c.splat, c.alpha >= ALPHA_MAX))
        .collect::<Vec<_>>();
    sig.extend(out.records.offsets.iter().map(|&o| (o as u32, false)));
    sig
}

fn perturbed(field: &SplatField, i: usize, k: usize, delta: f64) -> SplatField {
    let mut f = field.clone();
    let mut p = f.splats[i].params();
    p[k] += delta;
    f.splats[i].set_params(&p);
    f
}

/// Central difference with the largest step `≤ H` whose stencil keeps the
/// blending structure of the base render.
fn central_difference(
    field: &SplatField,
    cam: &CameraView,
    up: &RenderGrads,
    base_sig: &[(u32, bool)],
    i: usize,
    k: usize,
) -> Option<(f64, f64)> {
    let settings = RasterSettings::default();
    let mut h = H;
    while h >= 1e-8 {
        let plus = rasterize(&perturbed(field, i, k, h), cam, &settings);
        let minus = rasterize(&perturbed(field, i, k, -h), cam, &settings);
        if signature(&plus) == base_sig && signature(&minus) == base_sig {
            return Some((
                (objective(&plus, up) - objective(&minus, up)) / (2.0 * h),
                h,
            ));
        }
        h /= 2.0;
    }
    None
}

struct Report {
    checked: usize,
    reduced_step: usize,
    worst: f64,
}

fn check_seed(seed: u64) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(4..=32);
    let cam = camera(&mut rng);
    let field = random_field(&mut rng, n);
    let up = upstream(&mut rng);
    let settings = RasterSettings::default();
    let out = rasterize(&field, &cam, &settings);
    let base = signature(&out);
    let grads = rasterize_backward(&field, &cam, &out, &up).unwrap();
    let mut report = Report {
        checked: 0,
        reduced_step: 0,
        worst: 0.0,
    };
    for i in 0..field.len() {
        let analytic = grads.splats[i].params();
        for k in 0..PARAMS_PER_SPLAT {
            let (numeric, h) =
                central_difference(&field, &cam, &up, &base, i, k).unwrap_or_else(|| {
                    panic!("seed {seed}: splat {i} param {k} sits on a blending discontinuity")
                });
            if h < H {
                report.reduced_step += 1;
            }
            let a = analytic[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
            assert!(
                err < REL_TOL,
                "seed {seed}: splat {i} param {k}: analytic {a:e}, numeric {numeric:e} (h={h:e}), rel err {err:e}"
            );
            report.worst = report.worst.max(err);
            report.checked += 1;
        }
    }
    report
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut total = 0;
    let mut reduced = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..24 {
        let r = check_seed(seed);
        total += r.checked;
        reduced += r.reduced_step;
        worst = worst.max(r.worst);
    }
    assert!(total > 24 * 4 * PARAMS_PER_SPLAT);
    eprintln!(
        "{total} parameters checked, {reduced} with a reduced step, worst relative error {worst:e}"
    );
}

#[test]
fn culled_splats_receive_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cam = camera(&mut rng);
    let mut field = random_field(&mut rng, 6);
    field.splats[2].mean = Vector3::new(0.0, 0.0, -5.0);
    let up = upstream(&mut rng);
    let out = rasterize(&field, &cam, &RasterSettings::default());
    let g = rasterize_backward(&field, &cam, &out, &up).unwrap();
    assert!(g.splats[2].params().iter().all(|&v| v == 0.0));
}
