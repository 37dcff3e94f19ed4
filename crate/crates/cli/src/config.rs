//! Line-oriented `key = value` pipeline configuration.
//!
//! A profile supplies every default; a config file overrides individual
//! keys. `#` starts a comment. Serialization writes every key in a fixed
//! order, so `serialize(parse(text))` is a fixed point.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use iasplat::geometry::ExpansionConfig;
use iasplat::trainer::TrainConfig;

use crate::error::CliError;
use crate::synth::SynthSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Minutes-scale sanity run.
    Smoke,
    /// The desk-scale benchmark with the full training schedule.
    Desk,
    /// Full schedule at a larger resolution and view count.
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Smoke => "smoke",
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "smoke" => Ok(Profile::Smoke),
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile '{other}' (smoke|desk|paper)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub profile: Profile,
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to the dataset's `trajectory.txt`.
    pub trajectory: Option<PathBuf>,
    /// Defaults to the dataset's observed frame of `reference_view`.
    pub reference_image: Option<PathBuf>,
    /// Exchange directory of an external refiner; the ground-truth oracle
    /// is used when unset.
    pub refiner_dir: Option<PathBuf>,
    pub refiner_timeout_s: f64,
    pub reference_view: usize,
    /// Auxiliary views used for expansion, nearest first.
    pub aux_views: usize,
    pub geometry: ExpansionConfig,
    pub init_max_splats: usize,
    pub init_opacity: f64,
    /// Standard deviation of the depth oracle, meters.
    pub depth_noise: f64,
    /// Noise scale of the oracle refiner (0 = noiseless).
    pub refiner_noise: f64,
    pub synth: SynthSpec,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn profile(profile: Profile) -> Self {
        let base = PipelineConfig {
            profile,
            seed: 0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
            trajectory: None,
            reference_image: None,
            refiner_dir: None,
            refiner_timeout_s: iasplat::refine::DEFAULT_TIMEOUT.as_secs_f64(),
            reference_view: 6,
            aux_views: 11,
            geometry: ExpansionConfig {
                voxel_resolution: 64,
                ..ExpansionConfig::default()
            },
            init_max_splats: 3000,
            init_opacity: 0.5,
            depth_noise: 0.0,
            refiner_noise: 0.0,
            synth: SynthSpec::default(),
            train: TrainConfig::default(),
        };
        match profile {
            // Sized so an IA-GS run and its ablation fit in 15 minutes on
            // one core.
            Profile::Desk => PipelineConfig {
                init_max_splats: 1000,
                train: TrainConfig {
                    max_splats: 1200,
                    log_interval: 500,
                    ..TrainConfig::default()
                },
                ..base
            },
            Profile::Smoke => PipelineConfig {
                reference_view: 4,
                aux_views: 7,
                geometry: ExpansionConfig {
                    voxel_resolution: 48,
                    ..ExpansionConfig::default()
                },
                init_max_splats: 1500,
                synth: SynthSpec {
                    views: 8,
                    corrupt_views: vec![1, 6],
                    ..SynthSpec::default()
                },
                train: TrainConfig {
                    total_iterations: 500,
                    refine_interval: 100,
                    densify_from: 100,
                    densify_interval: 50,
                    log_interval: 25,
                    ..TrainConfig::default()
                },
                ..base
            },
            Profile::Paper => PipelineConfig {
                reference_view: 12,
                aux_views: 23,
                geometry: ExpansionConfig::default(),
                init_max_splats: 5000,
                synth: SynthSpec {
                    views: 24,
                    width: 128,
                    height: 128,
                    splats: 500,
                    corrupt_views: vec![3, 9, 17, 21],
                    ..SynthSpec::default()
                },
                ..base
            },
        }
    }

    pub fn trajectory_path(&self) -> PathBuf {
        self.trajectory
            .clone()
            .unwrap_or_else(|| crate::layout::DataLayout::new(&self.data_dir).trajectory())
    }

    pub fn reference_image_path(&self) -> PathBuf {
        self.reference_image.clone().unwrap_or_else(|| {
            crate::layout::DataLayout::new(&self.data_dir).observed(self.reference_view)
        })
    }

    /// Training config with the pipeline seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.synth.validate()?;
        if self.reference_view >= self.synth.views {
            return bad(format!(
                "reference_view {} out of range 0..{}",
                self.reference_view, self.synth.views
            ));
        }
        if self.synth.corrupt_views.contains(&self.reference_view) {
            return bad(format!(
                "reference_view {} is corrupted",
                self.reference_view
            ));
        }
        for (name, eps) in [
            ("eps_occ", self.geometry.eps_occ),
            ("eps_add", self.geometry.eps_add),
        ] {
            if eps.is_some_and(|e| !(e >= 0.0 && e.is_finite())) {
                return bad(format!("{name} must be a non-negative number or 'auto'"));
            }
        }
        if self.geometry.voxel_resolution == 0 || !(self.geometry.bounds_inflation >= 0.0) {
            return bad(
                "voxel_resolution must be positive and bounds_inflation non-negative".into(),
            );
        }
        let t = &self.train.tiers;
        for (name, w) in [("w_max", t.max), ("w_mid", t.mid), ("w_min", t.min)] {
            if !(0.0..=1.0).contains(&w) {
                return bad(format!("{name} = {w} must be in [0, 1]"));
            }
        }
        if self.init_max_splats == 0 || !(self.init_opacity > 0.0 && self.init_opacity < 1.0) {
            return bad("init_max_splats must be positive and init_opacity in (0, 1)".into());
        }
        if !(self.depth_noise >= 0.0 && self.refiner_noise >= 0.0 && self.refiner_timeout_s > 0.0) {
            return bad(
                "depth_noise and refiner_noise must be non-negative, refiner_timeout_s positive"
                    .into(),
            );
        }
        Ok(())
    }

    /// Every key with its current value, in serialization order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or(String::new(), |p| p.display().to_string())
        };
        let eps = |e: Option<f64>| e.map_or("auto".to_string(), |v| v.to_string());
        let t = &self.train;
        let s = &self.synth;
        vec![
            ("profile", self.profile.to_string()),
            ("seed", self.seed.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("trajectory", path(&self.trajectory)),
            ("reference_image", path(&self.reference_image)),
            ("refiner_dir", path(&self.refiner_dir)),
            ("refiner_timeout_s", self.refiner_timeout_s.to_string()),
            ("reference_view", self.reference_view.to_string()),
            ("aux_views", self.aux_views.to_string()),
            ("eps_occ", eps(self.geometry.eps_occ)),
            ("eps_add", eps(self.geometry.eps_add)),
            (
                "voxel_resolution",
                self.geometry.voxel_resolution.to_string(),
            ),
            (
                "bounds_inflation",
                self.geometry.bounds_inflation.to_string(),
            ),
            ("init_max_splats", self.init_max_splats.to_string()),
            ("init_opacity", self.init_opacity.to_string()),
            ("depth_noise", self.depth_noise.to_string()),
            ("refiner_noise", self.refiner_noise.to_string()),
            ("views", s.views.to_string()),
            ("width", s.width.to_string()),
            ("height", s.height.to_string()),
            ("focal_factor", s.focal_factor.to_string()),
            ("splats", s.splats.to_string()),
            ("arc_radius", s.arc_radius.to_string()),
            ("arc_span_deg", s.arc_span_deg.to_string()),
            ("corrupt_views", join(&s.corrupt_views, ",")),
            ("corrupt_fraction", s.corrupt_fraction.to_string()),
            ("corrupt_rects", join(&s.corrupt_rects, ";")),
            ("corruption_mode", s.corruption_mode.to_string()),
            ("background", join(&s.background, ",")),
            ("total_iterations", t.total_iterations.to_string()),
            ("refine_interval", t.refine_interval.to_string()),
            ("s_start", t.s_start.to_string()),
            ("s_end", t.s_end.to_string()),
            ("tau_low_start", t.tau_low_start.to_string()),
            ("tau_low_end", t.tau_low_end.to_string()),
            ("tau_high", t.tau_high.to_string()),
            ("lr_mean", t.rates.mean.to_string()),
            ("lr_mean_final", t.rates.mean_final.to_string()),
            ("lr_color", t.rates.color.to_string()),
            ("lr_opacity", t.rates.opacity.to_string()),
            ("lr_scale", t.rates.scale.to_string()),
            ("lr_quat", t.rates.quat.to_string()),
            ("lr_predictor", t.rates.predictor.to_string()),
            ("lambda_prior", t.mask_weights.prior.to_string()),
            ("lambda_discard", t.mask_weights.discard.to_string()),
            ("weight_l2", t.loss_weights.l2.to_string()),
            ("weight_l1", t.loss_weights.l1.to_string()),
            ("weight_pearson", t.loss_weights.pearson.to_string()),
            ("w_max", t.tiers.max.to_string()),
            ("w_mid", t.tiers.mid.to_string()),
            ("w_min", t.tiers.min.to_string()),
            ("ia_gs", t.ia_gs.to_string()),
            ("densify_from", t.densify_from.to_string()),
            (
                "densify_until_fraction",
                t.densify_until_fraction.to_string(),
            ),
            ("densify_interval", t.densify_interval.to_string()),
            ("densify_grad", t.densify_grad.to_string()),
            ("percent_dense", t.percent_dense.to_string()),
            ("prune_opacity", t.prune_opacity.to_string()),
            ("max_splats", t.max_splats.to_string()),
            ("text_prompt", t.text_prompt.clone()),
            ("diffusion_steps", t.diffusion_steps.to_string()),
            ("log_interval", t.log_interval.to_string()),
            ("background_depth", t.raster.background_depth.to_string()),
        ]
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("'{v}': {e}"))
        }
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        let eps = |v: &str| -> Result<Option<f64>, String> {
            if v == "auto" {
                Ok(None)
            } else {
                num(v).map(Some)
            }
        };
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "profile" => self.profile = v(value)?,
            "seed" => self.seed = num(value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "trajectory" => self.trajectory = opt_path(value),
            "reference_image" => self.reference_image = opt_path(value),
            "refiner_dir" => self.refiner_dir = opt_path(value),
            "refiner_timeout_s" => self.refiner_timeout_s = num(value)?,
            "reference_view" => self.reference_view = num(value)?,
            "aux_views" => self.aux_views = num(value)?,
            "eps_occ" => self.geometry.eps_occ = eps(value)?,
            "eps_add" => self.geometry.eps_add = eps(value)?,
            "voxel_resolution" => self.geometry.voxel_resolution = num(value)?,
            "bounds_inflation" => self.geometry.bounds_inflation = num(value)?,
            "init_max_splats" => self.init_max_splats = num(value)?,
            "init_opacity" => self.init_opacity = num(value)?,
            "depth_noise" => self.depth_noise = num(value)?,
            "refiner_noise" => self.refiner_noise = num(value)?,
            "views" => s.views = num(value)?,
            "width" => s.width = num(value)?,
            "height" => s.height = num(value)?,
            "focal_factor" => s.focal_factor = num(value)?,
            "splats" => s.splats = num(value)?,
            "arc_radius" => s.arc_radius = num(value)?,
            "arc_span_deg" => s.arc_span_deg = num(value)?,
            "corrupt_views" => s.corrupt_views = list(value, ',')?,
            "corrupt_fraction" => s.corrupt_fraction = num(value)?,
            "corrupt_rects" => s.corrupt_rects = list(value, ';')?,
            "corruption_mode" => s.corruption_mode = v(value)?,
            "background" => {
                let b: Vec<f64> = list(value, ',')?;
                s.background = b
                    .try_into()
                    .map_err(|b: Vec<f64>| format!("background needs 3 values, got {}", b.len()))?;
            }
            "total_iterations" => t.total_iterations = num(value)?,
            "refine_interval" => t.refine_interval = num(value)?,
            "s_start" => t.s_start = num(value)?,
            "s_end" => t.s_end = num(value)?,
            "tau_low_start" => t.tau_low_start = num(value)?,
            "tau_low_end" => t.tau_low_end = num(value)?,
            "tau_high" => t.tau_high = num(value)?,
            "lr_mean" => t.rates.mean = num(value)?,
            "lr_mean_final" => t.rates.mean_final = num(value)?,
            "lr_color" => t.rates.color = num(value)?,
            "lr_opacity" => t.rates.opacity = num(value)?,
            "lr_scale" => t.rates.scale = num(value)?,
            "lr_quat" => t.rates.quat = num(value)?,
            "lr_predictor" => t.rates.predictor = num(value)?,
            "lambda_prior" => t.mask_weights.prior = num(value)?,
            "lambda_discard" => t.mask_weights.discard = num(value)?,
            "weight_l2" => t.loss_weights.l2 = num(value)?,
            "weight_l1" => t.loss_weights.l1 = num(value)?,
            "weight_pearson" => t.loss_weights.pearson = num(value)?,
            "w_max" => t.tiers.max = num(value)?,
            "w_mid" => t.tiers.mid = num(value)?,
            "w_min" => t.tiers.min = num(value)?,
            "ia_gs" => t.ia_gs = num(value)?,
            "densify_from" => t.densify_from = num(value)?,
            "densify_until_fraction" => t.densify_until_fraction = num(value)?,
            "densify_interval" => t.densify_interval = num(value)?,
            "densify_grad" => t.densify_grad = num(value)?,
            "percent_dense" => t.percent_dense = num(value)?,
            "prune_opacity" => t.prune_opacity = num(value)?,
            "max_splats" => t.max_splats = num(value)?,
            "text_prompt" => t.text_prompt = value.to_string(),
            "diffusion_steps" => t.diffusion_steps = num(value)?,
            "log_interval" => t.log_interval = num(value)?,
            "background_depth" => t.raster.background_depth = num(value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// Applies the keys of `text` on top of `self`. A `profile` key, if
    /// present, must come first and resets every other key to that
    /// profile's defaults.
    pub fn apply(&mut self, text: &str, path: &Path) -> Result<(), CliError> {
        let err = |line: usize, message: String| CliError::ConfigParse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut seen_other = false;
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, format!("expected 'key = value', found '{line}'")))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "profile" {
                if seen_other {
                    return Err(err(i + 1, "'profile' must precede every other key".into()));
                }
                let p: Profile = value.parse().map_err(|e| err(i + 1, e))?;
                let seed = self.seed;
                *self = PipelineConfig::profile(p);
                self.seed = seed;
                continue;
            }
            seen_other = true;
            self.set(key, value)
                .map_err(|e| err(i + 1, format!("{key}: {e}")))?;
        }
        Ok(())
    }

    pub fn parse(text: &str, path: &Path, base: Profile) -> Result<Self, CliError> {
        let mut cfg = PipelineConfig::profile(base);
        cfg.apply(text, path)?;
        Ok(cfg)
    }

    pub fn load(path: &Path, base: Profile) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| iasplat::IoError::io(path, e))?;
        Self::parse(&text, path, base)
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a)
}

fn v<T: FromStr<Err = String>>(value: &str) -> Result<T, String> {
    value.parse()
}

fn list<T: FromStr>(value: &str, sep: char) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(sep)
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("'{p}': {e}")))
        .collect()
}

fn join<T: fmt::Display>(items: &[T], sep: &str) -> String {
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}
