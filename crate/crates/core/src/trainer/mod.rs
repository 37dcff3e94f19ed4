//! Outer optimization loop.
//!
//! Each iteration renders one trajectory view (round-robin), steps the
//! inconsistency head on its bounded residual supervision, then steps the
//! splat field on the masked composite objective. Every `refine_interval`
//! iterations all views are rendered, change maps are built from the
//! predicted masks, the refiner replaces the working video and the head is
//! reset.

mod init;
mod loss;
mod metrics;
mod optim;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::camera::CameraView;
use crate::error::IoError;
use crate::gaussian::{
    density_control, rasterize, rasterize_backward, DensityConfig, GradStats, RasterError,
    RasterSettings, RenderGrads, RenderOutput, SplatField,
};
use crate::handles::{DepthEstimator, HandleError};
use crate::image::{DepthMap, Grid, Mask, RgbImage};
use crate::predictor::{
    anneal_linear, compute_bounds, mask_loss, mask_loss_grad_h, mlp_mask, normalize_residual,
    predict, predictor_grad, reset, residual_map, FeatureMap, MaskBounds, MaskLossInputs,
    MaskLossWeights, PredictorParams, FEATURE_CHANNELS, TAU_HIGH, TAU_LOW_END, TAU_LOW_START,
};
use crate::refine::{change_map, refine, RefineError, RefineRequest, Refiner, TierWeights};

pub use init::{field_from_cloud, scene_extent, InitConfig};
pub use loss::{
    gs_loss, pearson, pearson_with_grad, GsLoss, GsLossInputs, GsLossWeights, LossError, Pearson,
};
pub use metrics::{pooled_iou, pooled_psnr, psnr_from, squared_error, PSNR_CAP};
pub use optim::{Adam, LearningRates, SplatAdam};

/// Rendered accumulated opacity at or above which a pixel's depth counts.
pub const DEPTH_VALID_ALPHA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid training state: {0}")]
    State(String),
    #[error("refinement round {round} at iteration {iteration}: {source}")]
    Refine {
        round: usize,
        iteration: u64,
        #[source]
        source: RefineError,
        checkpoint: Option<PathBuf>,
    },
    #[error("depth estimate for view {view}: {source}")]
    Depth {
        view: usize,
        #[source]
        source: HandleError,
    },
    #[error("rasterizer: {0}")]
    Raster(#[from] RasterError),
    #[error("field became non-finite at iteration {0}")]
    Diverged(u64),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl TrainError {
    pub fn category(&self) -> &'static str {
        match self {
            TrainError::Config(_) => "config",
            TrainError::State(_) => "precondition",
            TrainError::Refine { source, .. } => source.category(),
            TrainError::Depth { .. } => "depth-estimator",
            TrainError::Raster(_) => "internal",
            TrainError::Diverged(_) => "diverged",
            TrainError::Io(_) => "io",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub total_iterations: u64,
    pub refine_interval: u64,
    pub s_start: f64,
    pub s_end: f64,
    pub tau_low_start: f64,
    pub tau_low_end: f64,
    pub tau_high: f64,
    pub rates: LearningRates,
    pub mask_weights: MaskLossWeights,
    pub loss_weights: GsLossWeights,
    pub tiers: TierWeights,
    /// Disables the inconsistency head's influence: `M^mlp` is always empty.
    pub ia_gs: bool,
    pub densify_from: u64,
    /// Densification stops after this fraction of the run.
    pub densify_until_fraction: f64,
    pub densify_interval: u64,
    /// Projected-mean gradient threshold in normalized device units.
    pub densify_grad: f64,
    /// "Small splat" scale as a fraction of the scene extent.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    pub max_splats: usize,
    pub text_prompt: String,
    pub diffusion_steps: u32,
    pub log_interval: u64,
    pub raster: RasterSettings,
    pub seed: u64,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iterations: 15_000,
            refine_interval: 2_000,
            s_start: 0.6,
            s_end: 0.3,
            tau_low_start: TAU_LOW_START,
            tau_low_end: TAU_LOW_END,
            tau_high: TAU_HIGH,
            rates: LearningRates::default(),
            mask_weights: MaskLossWeights::default(),
            loss_weights: GsLossWeights::default(),
            tiers: TierWeights::default(),
            ia_gs: true,
            densify_from: 500,
            densify_until_fraction: 0.5,
            densify_interval: 100,
            densify_grad: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            max_splats: 5_000,
            text_prompt: String::new(),
            diffusion_steps: 50,
            log_interval: 100,
            raster: RasterSettings::default(),
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.refine_interval == 0 || self.refine_interval > self.total_iterations {
            return bad(format!(
                "refine_interval {} must be in 1..={}",
                self.refine_interval, self.total_iterations
            ));
        }
        if !(0.0 < self.s_end && self.s_end <= self.s_start && self.s_start <= 1.0) {
            return bad(format!(
                "need 0 < s_end ≤ s_start ≤ 1, got {} and {}",
                self.s_end, self.s_start
            ));
        }
        for (name, t) in [
            ("tau_low_start", self.tau_low_start),
            ("tau_low_end", self.tau_low_end),
        ] {
            if !(0.0 < t && t < self.tau_high && self.tau_high < 1.0) {
                return bad(format!(
                    "need 0 < {name} < tau_high < 1, got {t} and {}",
                    self.tau_high
                ));
            }
        }
        if self.log_interval == 0 || self.densify_interval == 0 {
            return bad("log and densify intervals must be positive".into());
        }
        if self.diffusion_steps == 0 {
            return bad("diffusion_steps must be at least 1".into());
        }
        if self.max_splats == 0 {
            return bad("max_splats must be positive".into());
        }
        Ok(())
    }

    pub fn s_at(&self, iteration: u64) -> f64 {
        anneal_linear(self.s_start, self.s_end, iteration, self.total_iterations)
    }

    pub fn tau_low_at(&self, iteration: u64) -> f64 {
        anneal_linear(
            self.tau_low_start,
            self.tau_low_end,
            iteration,
            self.total_iterations,
        )
    }

    /// Iterations at which a refinement round runs: `k · interval` for
    /// `k = 1 ..= total / interval`.
    pub fn refinement_iterations(&self) -> Vec<u64> {
        if self.refine_interval == 0 {
            return Vec::new();
        }
        (1..=self.total_iterations / self.refine_interval)
            .map(|k| k * self.refine_interval)
            .collect()
    }

    fn densify_until(&self) -> u64 {
        (self.total_iterations as f64 * self.densify_until_fraction) as u64
    }
}

/// Seed of the head's initializer for round `round` (0 = initial state).
pub fn predictor_seed(seed: u64, round: usize) -> u64 {
    seed ^ 0x5EED_0F_1EAD ^ (round as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewState {
    pub camera: CameraView,
    /// Coarse frame `I^init`.
    pub initial: RgbImage,
    /// Working video frame `Ĩ`.
    pub current: RgbImage,
    pub refine_mask: Mask,
    /// Occlusion-aware mask; its complement is the reliability prior.
    pub occ_mask: Mask,
    /// Depth estimated on the working frame.
    pub cond_depth: Option<DepthMap>,
}

impl ViewState {
    pub fn new(camera: CameraView, initial: RgbImage, refine_mask: Mask, occ_mask: Mask) -> Self {
        Self {
            camera,
            current: initial.clone(),
            initial,
            refine_mask,
            occ_mask,
            cond_depth: None,
        }
    }

    /// Per-pixel image the composite loss compares against before the
    /// inconsistency mask is applied: `Ĩ` on `M^refine`, `I^init` elsewhere.
    /// The inconsistency head scores residuals against this target.
    pub fn supervision_target(&self) -> RgbImage {
        Grid::from_fn(self.current.width(), self.current.height(), |x, y| {
            if *self.refine_mask.get(x, y) {
                *self.current.get(x, y)
            } else {
                *self.initial.get(x, y)
            }
        })
    }
}

/// Ground truth for masked-region PSNR logging.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTargets {
    pub ground_truth: Vec<RgbImage>,
    pub regions: Vec<Mask>,
}

impl EvalTargets {
    fn masked_psnr(
        &self,
        field: &SplatField,
        views: &[ViewState],
        settings: &RasterSettings,
    ) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0;
        for (i, region) in self.regions.iter().enumerate() {
            if region.count() == 0 {
                continue;
            }
            let render = rasterize(field, &views[i].camera, settings);
            let (s, k) = squared_error(&render.color, &self.ground_truth[i], Some(region));
            sum += s;
            n += k;
        }
        psnr_from(sum, n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iteration: u64,
    pub view: usize,
    pub l2: f64,
    pub l1: f64,
    pub pearson: f64,
    pub zero_variance: bool,
    pub mask_loss: f64,
    pub total: f64,
    pub splats: usize,
    pub masked_psnr: Option<f64>,
}

pub const METRICS_HEADER: &str =
    "iteration,view,l2,l1,pearson,zero_variance,mask_loss,total,splats,masked_psnr";

impl MetricRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.view,
            self.l2,
            self.l1,
            self.pearson,
            u8::from(self.zero_variance),
            self.mask_loss,
            self.total,
            self.splats,
            self.masked_psnr.map_or(String::new(), |p| p.to_string())
        )
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{}", r.to_csv()).unwrap();
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    pub iteration: u64,
    pub s: f64,
    /// Predicted inconsistency masks of this round, before refinement.
    pub mlp_masks: Vec<Mask>,
    /// Masked-region PSNR of the renders sent to the refiner.
    pub masked_psnr: Option<f64>,
    /// Seed the head was reset to after the video was replaced.
    pub reset_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub field: SplatField,
    pub phi: PredictorParams,
    pub views: Vec<ViewState>,
    /// Completed iterations.
    pub iteration: u64,
    pub log: Vec<MetricRow>,
    pub rounds: Vec<RoundRecord>,
    pub eval: Option<EvalTargets>,
}

impl TrainState {
    pub fn new(field: SplatField, views: Vec<ViewState>, seed: u64) -> Self {
        Self {
            field,
            phi: PredictorParams::initialized(FEATURE_CHANNELS, predictor_seed(seed, 0)),
            views,
            iteration: 0,
            log: Vec::new(),
            rounds: Vec::new(),
            eval: None,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::State(m));
        if self.views.is_empty() {
            return bad("no training views".into());
        }
        for (i, v) in self.views.iter().enumerate() {
            let dims = (v.camera.width, v.camera.height);
            let ok = v.initial.dims() == dims
                && v.current.dims() == dims
                && v.refine_mask.dims() == dims
                && v.occ_mask.dims() == dims
                && v.cond_depth.as_ref().is_none_or(|d| d.dims() == dims);
            if !ok {
                return bad(format!(
                    "view {i}: frame or mask size differs from camera {dims:?}"
                ));
            }
        }
        if self.phi.weights.len() != FEATURE_CHANNELS {
            return bad(format!(
                "predictor has {} weights, expected {FEATURE_CHANNELS}",
                self.phi.weights.len()
            ));
        }
        if let Some(e) = &self.eval {
            if e.ground_truth.len() != self.views.len() || e.regions.len() != self.views.len() {
                return bad("evaluation targets do not cover every view".into());
            }
        }
        Ok(())
    }

    /// Renders every view with the current field.
    pub fn render_all(&self, settings: &RasterSettings) -> Vec<RenderOutput> {
        self.views
            .iter()
            .map(|v| rasterize(&self.field, &v.camera, settings))
            .collect()
    }

    /// Current head's inconsistency masks for the given renders.
    pub fn predicted_masks(&self, renders: &[RenderOutput]) -> Vec<Mask> {
        renders
            .iter()
            .zip(&self.views)
            .map(|(r, v)| {
                mlp_mask(&predict(
                    &FeatureMap::from_images(&r.color, &v.supervision_target()),
                    &self.phi,
                ))
            })
            .collect()
    }
}

/// Writes `field.txt`, `predictor.txt`, `metrics.csv` and `state.txt`.
pub fn write_checkpoint(dir: &Path, state: &TrainState) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    state.field.save(&dir.join("field.txt"))?;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| IoError::io(&p, e))
    };
    write("predictor.txt", state.phi.to_text())?;
    write("metrics.csv", metrics_csv(&state.log))?;
    let mut s = format!(
        "iteration {}\nrounds {}\n",
        state.iteration,
        state.rounds.len()
    );
    for r in &state.rounds {
        writeln!(
            s,
            "round {} iteration {} s {} reset_seed {} masked_psnr {}",
            r.round,
            r.iteration,
            r.s,
            r.reset_seed,
            r.masked_psnr.map_or("-".to_string(), |p| p.to_string())
        )
        .unwrap();
    }
    write("state.txt", s)
}

fn estimate_depths(
    views: &[ViewState],
    frames: &[&RgbImage],
    depth: &mut dyn DepthEstimator,
) -> Result<Vec<DepthMap>, TrainError> {
    views
        .iter()
        .zip(frames)
        .enumerate()
        .map(|(i, (v, f))| {
            depth
                .estimate(&v.camera, f)
                .map_err(|source| TrainError::Depth { view: i, source })
        })
        .collect()
}

/// One refinement round at `iteration`. The state is untouched when the
/// refiner or the depth estimator fails.
fn refinement_round(
    state: &mut TrainState,
    cfg: &TrainConfig,
    refiner: &mut dyn Refiner,
    depth: &mut dyn DepthEstimator,
    iteration: u64,
) -> Result<(), TrainError> {
    let round = state.rounds.len() + 1;
    let s = cfg.s_at(iteration);
    let renders = state.render_all(&cfg.raster);
    let mlp_masks = if cfg.ia_gs {
        state.predicted_masks(&renders)
    } else {
        renders
            .iter()
            .map(|r| Grid::filled(r.color.width(), r.color.height(), false))
            .collect()
    };
    let masked_psnr = state.eval.as_ref().and_then(|e| {
        let mut sum = 0.0;
        let mut n = 0;
        for (i, region) in e.regions.iter().enumerate() {
            let (a, k) = squared_error(&renders[i].color, &e.ground_truth[i], Some(region));
            sum += a;
            n += k;
        }
        psnr_from(sum, n)
    });
    let request = RefineRequest {
        frames: renders.iter().map(|r| r.color.clone()).collect(),
        change_maps: mlp_masks
            .iter()
            .zip(&state.views)
            .map(|(m, v)| change_map(m, &v.refine_mask, s, &cfg.tiers))
            .collect(),
        depth_maps: state
            .views
            .iter()
            .map(|v| {
                v.cond_depth
                    .clone()
                    .expect("conditioned depth set before training")
            })
            .collect(),
        text_prompt: cfg.text_prompt.clone(),
        noise_level: s,
        total_steps: cfg.diffusion_steps,
    };
    let response = match refine(&request, refiner) {
        Ok(r) => r,
        Err(source) => {
            let checkpoint = match &cfg.checkpoint_dir {
                Some(dir) => {
                    write_checkpoint(dir, state)?;
                    Some(dir.clone())
                }
                None => None,
            };
            return Err(TrainError::Refine {
                round,
                iteration,
                source,
                checkpoint,
            });
        }
    };
    let frames: Vec<&RgbImage> = response.frames.iter().collect();
    let depths = estimate_depths(&state.views, &frames, depth)?;
    for ((v, f), d) in state.views.iter_mut().zip(response.frames).zip(depths) {
        v.current = f;
        v.cond_depth = Some(d);
    }
    let reset_seed = predictor_seed(cfg.seed, round);
    state.phi = reset(&state.phi, reset_seed);
    state.rounds.push(RoundRecord {
        round,
        iteration,
        s,
        mlp_masks,
        masked_psnr,
        reset_seed,
    });
    if let Some(dir) = &cfg.checkpoint_dir {
        write_checkpoint(dir, state)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    it: u64,
    extent: f64,
    field_opt: &mut SplatAdam,
    phi_opt: &mut Adam,
    stats: &mut GradStats,
) -> Result<MetricRow, TrainError> {
    let vi = (it % state.views.len() as u64) as usize;
    let render = rasterize(&state.field, &state.views[vi].camera, &cfg.raster);
    let view = &state.views[vi];

    // Inconsistency head; the field is detached here.
    let target = view.supervision_target();
    let features = FeatureMap::from_images(&render.color, &target);
    let h = predict(&features, &state.phi);
    let residual = residual_map(&render.color, &target);
    let (upper, lower) = compute_bounds(
        &residual,
        &MaskBounds {
            tau_low: cfg.tau_low_at(it),
            tau_high: cfg.tau_high,
        },
    );
    let prior = view.occ_mask.complement();
    let r_norm = normalize_residual(&residual);
    let inputs = MaskLossInputs {
        upper: &upper,
        lower: &lower,
        prior: &prior,
        residual: &r_norm,
    };
    let m_loss = mask_loss(&h, &inputs, &cfg.mask_weights);
    let grad_h = mask_loss_grad_h(&h, &inputs, &cfg.mask_weights);
    let g_phi = predictor_grad(&features, &h, &grad_h);
    let mlp = if cfg.ia_gs {
        mlp_mask(&h)
    } else {
        Grid::filled(h.width(), h.height(), false)
    };

    // Splat field.
    let depth_valid = render.alpha.map(|&a| a >= DEPTH_VALID_ALPHA);
    let cond = view
        .cond_depth
        .as_ref()
        .expect("conditioned depth set before training");
    let loss = gs_loss(
        &GsLossInputs {
            render: &render.color,
            refined: &view.current,
            initial: &view.initial,
            mlp: &mlp,
            refine: &view.refine_mask,
            rendered_depth: &render.depth,
            conditioned_depth: cond,
            depth_valid: &depth_valid,
        },
        &cfg.loss_weights,
    );
    let (w, hgt) = render.color.dims();
    let upstream = RenderGrads {
        color: loss.grad_color.clone(),
        depth: loss.grad_depth.clone(),
        alpha: Grid::filled(w, hgt, 0.0),
    };
    let grads = rasterize_backward(&state.field, &view.camera, &render, &upstream)?;

    let mut phi_flat = state.phi.as_flat();
    phi_opt.step(&mut phi_flat, &g_phi.as_flat(), cfg.rates.predictor);
    state.phi.set_flat(&phi_flat);
    let mean_lr = cfg.rates.mean_at(it, cfg.total_iterations, extent);
    field_opt.step(&mut state.field, &grads, &cfg.rates, mean_lr);
    stats.accumulate(&grads);

    if !state.field.splats.iter().all(|s| s.is_finite()) {
        return Err(TrainError::Diverged(it));
    }

    Ok(MetricRow {
        iteration: it,
        view: vi,
        l2: loss.l2,
        l1: loss.l1,
        pearson: loss.pearson.value,
        zero_variance: loss.pearson.zero_variance,
        mask_loss: m_loss,
        total: loss.total,
        splats: state.field.len(),
        masked_psnr: None,
    })
}

/// Runs the loop from `state.iteration` to `cfg.total_iterations`.
///
/// On a refiner failure the state is left as it was before the failing
/// round (and checkpointed when a directory is configured).
pub fn train(
    state: &mut TrainState,
    cfg: &TrainConfig,
    refiner: &mut dyn Refiner,
    depth: &mut dyn DepthEstimator,
) -> Result<(), TrainError> {
    cfg.validate()?;
    state.validate()?;
    if state.iteration > cfg.total_iterations {
        return Err(TrainError::State(format!(
            "state is at iteration {}, beyond the configured {}",
            state.iteration, cfg.total_iterations
        )));
    }
    if state.views.iter().any(|v| v.cond_depth.is_none()) {
        let frames: Vec<&RgbImage> = state.views.iter().map(|v| &v.current).collect();
        let depths = estimate_depths(&state.views, &frames, depth)?;
        for (v, d) in state.views.iter_mut().zip(depths) {
            v.cond_depth = Some(d);
        }
    }

    let cams: Vec<CameraView> = state.views.iter().map(|v| v.camera.clone()).collect();
    let extent = scene_extent(&cams);
    let max_dim = cams
        .iter()
        .map(|c| c.width.max(c.height))
        .max()
        .unwrap_or(1) as f64;
    let density_cfg = DensityConfig {
        prune_opacity: cfg.prune_opacity,
        grad_threshold: cfg.densify_grad * 2.0 / max_dim,
        dense_scale: cfg.percent_dense * extent,
        split_shrink: 1.6,
        max_splats: cfg.max_splats,
        seed: cfg.seed,
    };
    let mut field_opt = SplatAdam::new(state.field.len());
    let mut phi_opt = Adam::new(FEATURE_CHANNELS + 1);
    let mut stats = GradStats::new(state.field.len());
    let densify_until = cfg.densify_until();

    let mut it = state.iteration;
    loop {
        if it > 0
            && it % cfg.refine_interval == 0
            && !state.rounds.iter().any(|r| r.iteration == it)
        {
            refinement_round(state, cfg, refiner, depth, it)?;
            phi_opt = Adam::new(FEATURE_CHANNELS + 1);
        }
        if it >= cfg.total_iterations {
            break;
        }
        let mut row = train_step(
            state,
            cfg,
            it,
            extent,
            &mut field_opt,
            &mut phi_opt,
            &mut stats,
        )?;
        if it % cfg.log_interval == 0 || it + 1 == cfg.total_iterations {
            row.masked_psnr = state
                .eval
                .as_ref()
                .and_then(|e| e.masked_psnr(&state.field, &state.views, &cfg.raster));
            state.log.push(row);
        }
        it += 1;
        state.iteration = it;

        if it >= cfg.densify_from && it < densify_until && it % cfg.densify_interval == 0 {
            let outcome = density_control(&state.field, &stats, it, &density_cfg);
            field_opt.remap(&outcome.origins);
            state.field = outcome.field;
            stats = GradStats::new(state.field.len());
        }
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        write_checkpoint(dir, state)?;
    }
    Ok(())
}
