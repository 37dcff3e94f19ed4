//! The `synth → init → train → eval/render` commands.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use iasplat::camera::{load_trajectory, order_by_offset};
use iasplat::gaussian::{rasterize, SplatField};
use iasplat::geometry::{progressive_view_expansion, PointCloud};
use iasplat::handles::{DepthEstimator, ImageInpainter, RefinerInpainter};
use iasplat::image::{DepthMap, Mask, RgbImage};
use iasplat::oracle::{surface_depth, FieldDepthOracle, FieldInpainter};
use iasplat::refine::{FileExchangeRefiner, OracleRefiner, Refiner};
use iasplat::trainer::{
    field_from_cloud, pearson, pooled_iou, pooled_psnr, train, EvalTargets, InitConfig, TrainState,
    ViewState, DEPTH_VALID_ALPHA,
};
use iasplat::{CameraView, IoError};
use nalgebra::Vector3;

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::layout::{DataLayout, RunLayout, DEPTH_SCALE};
use crate::synth::{
    corruption_masks, generate, parse_corruptions, write_scene, Corruption, SyntheticScene,
};

/// Independent stream seeds derived from the single pipeline seed.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_INIT_DEPTH: u64 = 1;
const STREAM_TRAIN_DEPTH: u64 = 2;
const STREAM_REFINER: u64 = 3;

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| IoError::io(path, e).into())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e).into())
}

pub fn cmd_synth(cfg: &PipelineConfig) -> Result<SyntheticScene, CliError> {
    let scene = generate(&cfg.synth, cfg.seed)?;
    write_scene(&scene, &DataLayout::new(&cfg.data_dir))?;
    Ok(scene)
}

/// Inputs shared by every command after `synth`.
pub struct Dataset {
    pub cameras: Vec<CameraView>,
    pub observed: Vec<RgbImage>,
    pub gt_field: Option<SplatField>,
    pub corruptions: Option<Vec<Corruption>>,
}

impl Dataset {
    pub fn load(cfg: &PipelineConfig) -> Result<Self, CliError> {
        let data = DataLayout::new(&cfg.data_dir);
        let cameras = load_trajectory(&cfg.trajectory_path())?;
        if cameras.is_empty() {
            return Err(CliError::Precondition(format!(
                "trajectory {} has no views",
                cfg.trajectory_path().display()
            )));
        }
        let observed = (0..cameras.len())
            .map(|i| RgbImage::load_png(&data.observed(i)))
            .collect::<Result<Vec<_>, _>>()?;
        for (i, (c, f)) in cameras.iter().zip(&observed).enumerate() {
            if f.dims() != (c.width, c.height) {
                return Err(CliError::Precondition(format!(
                    "observed frame {i} is {:?}, camera is {:?}",
                    f.dims(),
                    (c.width, c.height)
                )));
            }
        }
        let gt_field = if data.gt_field().exists() {
            Some(SplatField::load(&data.gt_field())?)
        } else {
            None
        };
        let corruptions = if data.corruptions().exists() {
            Some(parse_corruptions(
                &read_text(&data.corruptions())?,
                &data.corruptions(),
            )?)
        } else {
            None
        };
        Ok(Self {
            cameras,
            observed,
            gt_field,
            corruptions,
        })
    }

    fn require_gt(&self, cfg: &PipelineConfig, what: &str) -> Result<&SplatField, CliError> {
        self.gt_field.as_ref().ok_or_else(|| {
            CliError::Precondition(format!(
                "{what} needs the ground-truth field {}",
                DataLayout::new(&cfg.data_dir).gt_field().display()
            ))
        })
    }

    pub fn gt_renders(&self, cfg: &PipelineConfig) -> Option<Vec<RgbImage>> {
        let gt = self.gt_field.as_ref()?;
        Some(
            self.cameras
                .iter()
                .map(|c| rasterize(gt, c, &cfg.train.raster).color)
                .collect(),
        )
    }

    pub fn gt_depths(&self, cfg: &PipelineConfig) -> Option<Vec<DepthMap>> {
        let gt = self.gt_field.as_ref()?;
        Some(
            self.cameras
                .iter()
                .map(|c| surface_depth(&rasterize(gt, c, &cfg.train.raster), &cfg.train.raster))
                .collect(),
        )
    }

    pub fn corruption_masks(&self) -> Option<Vec<Mask>> {
        self.corruptions
            .as_ref()
            .map(|c| corruption_masks(c, &self.cameras))
    }
}

fn exchange_refiner(cfg: &PipelineConfig, dir: &Path) -> FileExchangeRefiner {
    FileExchangeRefiner {
        timeout: Duration::from_secs_f64(cfg.refiner_timeout_s),
        depth_scale: DEPTH_SCALE,
        ..FileExchangeRefiner::new(dir)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitSummary {
    pub reference_points: usize,
    /// `(view index, points added)` in processing order.
    pub added: Vec<(usize, usize)>,
    pub total_points: usize,
}

pub fn cmd_init(cfg: &PipelineConfig) -> Result<InitSummary, CliError> {
    cfg.validate()?;
    let ds = Dataset::load(cfg)?;
    if cfg.reference_view >= ds.cameras.len() {
        return Err(CliError::Config(format!(
            "reference_view {} out of range for {} views",
            cfg.reference_view,
            ds.cameras.len()
        )));
    }
    let gt = ds.require_gt(cfg, "the depth oracle")?.clone();
    let cam_ref = &ds.cameras[cfg.reference_view];
    let ref_image = RgbImage::load_png(&cfg.reference_image_path())?;
    let mut depth = FieldDepthOracle::new(
        gt.clone(),
        cfg.depth_noise,
        sub_seed(cfg.seed, STREAM_INIT_DEPTH),
    );
    let ref_depth = depth
        .estimate(cam_ref, &ref_image)
        .map_err(|e| CliError::Precondition(format!("reference depth: {e}")))?;
    let order: Vec<usize> = order_by_offset(&ds.cameras, cam_ref)
        .into_iter()
        .filter(|&i| i != cfg.reference_view)
        .take(cfg.aux_views)
        .collect();
    let aux: Vec<CameraView> = order.iter().map(|&i| ds.cameras[i].clone()).collect();

    let mut exchange;
    let mut field_inpainter;
    let mut refiner_inpainter;
    let inpainter: &mut dyn ImageInpainter = match &cfg.refiner_dir {
        Some(dir) => {
            exchange = exchange_refiner(cfg, dir);
            refiner_inpainter = RefinerInpainter {
                refiner: &mut exchange,
                text_prompt: cfg.train.text_prompt.clone(),
                total_steps: cfg.train.diffusion_steps,
            };
            &mut refiner_inpainter
        }
        None => {
            field_inpainter = FieldInpainter::new(gt);
            &mut field_inpainter
        }
    };
    let out = progressive_view_expansion(
        &ref_image,
        &ref_depth,
        cam_ref,
        &aux,
        &ds.cameras,
        inpainter,
        &mut depth,
        &cfg.geometry,
    )
    .map_err(|e| match e {
        iasplat::geometry::GeometryError::Handle { view, source } => {
            iasplat::geometry::GeometryError::Handle {
                view: order[view],
                source,
            }
        }
        other => other,
    })?;

    let run = RunLayout::new(&cfg.out_dir);
    std::fs::create_dir_all(run.init_dir()).map_err(|e| IoError::io(&run.init_dir(), e))?;
    out.cloud.save(&run.cloud())?;
    for (i, v) in out.views.iter().enumerate() {
        v.render.color.save_png(&run.point_render(i))?;
        v.render.pix_mask.save_png(&run.pix_mask(i))?;
        v.occ_mask.save_png(&run.occ_mask(i))?;
        v.refine_mask.save_png(&run.refine_mask(i))?;
        ds.observed[i].save_png(&run.init_frame(i))?;
    }
    let added: Vec<(usize, usize)> = order
        .iter()
        .copied()
        .zip(out.added.iter().copied())
        .collect();
    let mut report = format!(
        "reference_view {}\nreference_points {}\nskipped_pixels {}\n",
        cfg.reference_view, out.reference_report.lifted, out.reference_report.skipped
    );
    for (v, n) in &added {
        writeln!(report, "added view {v} points {n}").unwrap();
    }
    writeln!(report, "total_points {}", out.cloud.len()).unwrap();
    write_text(&run.init_report(), &report)?;
    Ok(InitSummary {
        reference_points: out.reference_report.lifted,
        added,
        total_points: out.cloud.len(),
    })
}

/// Builds the training state from the dataset and the `init` outputs.
pub fn initial_state(cfg: &PipelineConfig, ds: &Dataset) -> Result<TrainState, CliError> {
    let run = RunLayout::new(&cfg.out_dir);
    let missing = |e: IoError| match e {
        IoError::Missing(p) => CliError::Precondition(format!(
            "init output {} is missing; run `init` first",
            p.display()
        )),
        other => other.into(),
    };
    let cloud = PointCloud::load(&run.cloud()).map_err(missing)?;
    let field = field_from_cloud(
        &cloud,
        Vector3::from(cfg.synth.background),
        &InitConfig {
            max_splats: cfg.init_max_splats,
            opacity: cfg.init_opacity,
            ..InitConfig::default()
        },
    );
    let mut views = Vec::with_capacity(ds.cameras.len());
    for (i, cam) in ds.cameras.iter().enumerate() {
        let initial = RgbImage::load_png(&run.init_frame(i)).map_err(missing)?;
        let refine = Mask::load_png(&run.refine_mask(i)).map_err(missing)?;
        let occ = Mask::load_png(&run.occ_mask(i)).map_err(missing)?;
        views.push(ViewState::new(cam.clone(), initial, refine, occ));
    }
    let mut state = TrainState::new(field, views, cfg.seed);
    if let (Some(gt), Some(regions)) = (ds.gt_renders(cfg), ds.corruption_masks()) {
        state.eval = Some(EvalTargets {
            ground_truth: gt,
            regions,
        });
    }
    Ok(state)
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainState, CliError> {
    cfg.validate()?;
    let ds = Dataset::load(cfg)?;
    let mut state = initial_state(cfg, &ds)?;
    let gt = ds.require_gt(cfg, "the depth oracle")?.clone();
    let run = RunLayout::new(&cfg.out_dir);
    let mut train_cfg = cfg.train_config();
    train_cfg.checkpoint_dir = Some(run.checkpoint_dir());

    let mut depth =
        FieldDepthOracle::new(gt, cfg.depth_noise, sub_seed(cfg.seed, STREAM_TRAIN_DEPTH));
    let mut oracle;
    let mut exchange;
    let refiner: &mut dyn Refiner = match &cfg.refiner_dir {
        Some(dir) => {
            exchange = exchange_refiner(cfg, dir);
            &mut exchange
        }
        None => {
            let truth = ds.gt_renders(cfg).expect("ground truth checked above");
            oracle = OracleRefiner {
                noise_scale: cfg.refiner_noise,
                ..OracleRefiner::new(truth, sub_seed(cfg.seed, STREAM_REFINER))
            };
            &mut oracle
        }
    };
    train(&mut state, &train_cfg, refiner, &mut depth)?;
    write_train_outputs(&run, &state, cfg, ds.corruption_masks().as_deref())?;
    Ok(state)
}

fn write_train_outputs(
    run: &RunLayout,
    state: &TrainState,
    cfg: &PipelineConfig,
    regions: Option<&[Mask]>,
) -> Result<(), CliError> {
    let renders = state.render_all(&cfg.train.raster);
    for (i, r) in renders.iter().enumerate() {
        r.color.save_png(&run.trained_frame(i))?;
        surface_depth(r, &cfg.train.raster).save_depth_png(&run.trained_depth(i), DEPTH_SCALE)?;
    }
    if let Some(last) = state.rounds.last() {
        for (i, m) in last.mlp_masks.iter().enumerate() {
            m.save_png(&run.mlp_mask(i))?;
        }
    }
    let mut csv = String::from("round,iteration,s,reset_seed,masked_psnr,mlp_pixels,mlp_iou\n");
    for r in &state.rounds {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.round,
            r.iteration,
            r.s,
            r.reset_seed,
            r.masked_psnr.map_or(String::new(), |p| p.to_string()),
            r.mlp_masks.iter().map(Mask::count).sum::<usize>(),
            regions
                .and_then(|m| pooled_iou(&r.mlp_masks, m))
                .map_or(String::new(), |v| v.to_string())
        )
        .unwrap();
    }
    write_text(&run.rounds(), &csv)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPearson {
    pub value: f64,
    pub zero_variance: bool,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_view: Vec<ViewPearson>,
    pub mean_pearson: f64,
    pub psnr: Option<f64>,
    pub masked_psnr: Option<f64>,
    pub iou: Option<f64>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
        let mut s = format!(
            "mean_depth_pearson = {}\npsnr = {}\nmasked_psnr = {}\niou = {}\n",
            self.mean_pearson,
            opt(self.psnr),
            opt(self.masked_psnr),
            opt(self.iou)
        );
        for (i, p) in self.per_view.iter().enumerate() {
            writeln!(
                s,
                "view {i} depth_pearson {} zero_variance {} samples {}",
                p.value,
                u8::from(p.zero_variance),
                p.samples
            )
            .unwrap();
        }
        s
    }
}

/// Per-view Pearson correlation between rendered and reference depth over
/// pixels where both are defined.
pub fn depth_pearson(
    rendered: &DepthMap,
    alpha: &iasplat::image::ScalarMap,
    reference: &DepthMap,
) -> ViewPearson {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for ((&d, &a), &r) in rendered
        .data()
        .iter()
        .zip(alpha.data())
        .zip(reference.data())
    {
        if a >= DEPTH_VALID_ALPHA && d.is_finite() && r.is_finite() {
            x.push(r);
            y.push(d);
        }
    }
    match pearson(&x, &y) {
        Ok(p) => ViewPearson {
            value: p.value,
            zero_variance: p.zero_variance,
            samples: x.len(),
        },
        Err(_) => ViewPearson {
            value: 0.0,
            zero_variance: true,
            samples: x.len(),
        },
    }
}

/// Scores `field` against the dataset; `mlp` are predicted inconsistency
/// masks to compare with the corruption regions.
pub fn evaluate(
    field: &SplatField,
    ds: &Dataset,
    cfg: &PipelineConfig,
    mlp: Option<&[Mask]>,
) -> Result<EvalReport, CliError> {
    let data = DataLayout::new(&cfg.data_dir);
    let renders: Vec<_> = ds
        .cameras
        .iter()
        .map(|c| rasterize(field, c, &cfg.train.raster))
        .collect();
    let ref_depth = match ds.gt_depths(cfg) {
        Some(d) => d,
        None => (0..ds.cameras.len())
            .map(|i| DepthMap::load_depth_png(&data.gt_depth(i), DEPTH_SCALE))
            .collect::<Result<_, _>>()?,
    };
    let per_view: Vec<ViewPearson> = renders
        .iter()
        .zip(&ref_depth)
        .map(|(r, d)| depth_pearson(&surface_depth(r, &cfg.train.raster), &r.alpha, d))
        .collect();
    let mean_pearson = per_view.iter().map(|p| p.value).sum::<f64>() / per_view.len() as f64;
    let truth = match ds.gt_renders(cfg) {
        Some(t) => Some(t),
        None if data.gt_frame(0).exists() => Some(
            (0..ds.cameras.len())
                .map(|i| RgbImage::load_png(&data.gt_frame(i)))
                .collect::<Result<_, _>>()?,
        ),
        None => None,
    };
    let colors: Vec<RgbImage> = renders.iter().map(|r| r.color.clone()).collect();
    let regions = ds.corruption_masks();
    let psnr = truth.as_ref().and_then(|t| pooled_psnr(&colors, t, None));
    let masked_psnr = match (&truth, &regions) {
        (Some(t), Some(m)) => pooled_psnr(&colors, t, Some(m)),
        _ => None,
    };
    let iou = match (mlp, &regions) {
        (Some(p), Some(m)) => pooled_iou(p, m),
        _ => None,
    };
    Ok(EvalReport {
        per_view,
        mean_pearson,
        psnr,
        masked_psnr,
        iou,
    })
}

pub fn cmd_eval(cfg: &PipelineConfig) -> Result<EvalReport, CliError> {
    let ds = Dataset::load(cfg)?;
    let run = RunLayout::new(&cfg.out_dir);
    let field = SplatField::load(&run.checkpoint_dir().join("field.txt"))?;
    let mlp = if run.mlp_mask(0).exists() {
        Some(
            (0..ds.cameras.len())
                .map(|i| Mask::load_png(&run.mlp_mask(i)))
                .collect::<Result<Vec<_>, _>>()?,
        )
    } else {
        None
    };
    let report = evaluate(&field, &ds, cfg, mlp.as_deref())?;
    write_text(&run.eval_report(), &report.to_text())?;
    Ok(report)
}

/// Renders the trained field along the trajectory.
pub fn cmd_render(cfg: &PipelineConfig) -> Result<usize, CliError> {
    let run = RunLayout::new(&cfg.out_dir);
    let field = SplatField::load(&run.checkpoint_dir().join("field.txt"))?;
    let cameras = load_trajectory(&cfg.trajectory_path())?;
    std::fs::create_dir_all(run.render_dir()).map_err(|e| IoError::io(&run.render_dir(), e))?;
    for (i, c) in cameras.iter().enumerate() {
        let r = rasterize(&field, c, &cfg.train.raster);
        r.color.save_png(&run.rendered_frame(i))?;
        surface_depth(&r, &cfg.train.raster).save_depth_png(&run.rendered_depth(i), DEPTH_SCALE)?;
    }
    Ok(cameras.len())
}
