use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{FieldGrads, SplatField};

/// Running mean of the projected-mean gradient norm per splat.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStats {
    pub sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl GradStats {
    pub fn new(n: usize) -> Self {
        Self {
            sum: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Adds one step; splats with no contribution this step are not counted.
    pub fn accumulate(&mut self, grads: &FieldGrads) {
        for (i, g) in grads.splats.iter().enumerate() {
            if g.mean2d_norm > 0.0 {
                self.sum[i] += g.mean2d_norm;
                self.count[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.sum[i] / f64::from(self.count[i])
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityConfig {
    /// Splats below this opacity are removed.
    pub prune_opacity: f64,
    /// Mean projected-gradient norm above which a splat is densified.
    pub grad_threshold: f64,
    /// Largest world-space scale still treated as "small" (clone, not split).
    pub dense_scale: f64,
    pub split_shrink: f64,
    pub max_splats: usize,
    pub seed: u64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            prune_opacity: 0.005,
            grad_threshold: 2e-4,
            dense_scale: 0.01,
            split_shrink: 1.6,
            max_splats: 5000,
            seed: 0,
        }
    }
}

/// Where each splat of the updated field came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplatOrigin {
    Kept(usize),
    Cloned(usize),
    Split(usize),
}

#[derive(Clone, Debug)]
pub struct DensityOutcome {
    pub field: SplatField,
    pub origins: Vec<SplatOrigin>,
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
}

/// Prunes transparent splats, clones small high-gradient splats in place and
/// splits large ones into two samples drawn from their own Gaussian.
/// Deterministic for a given `cfg.seed` and `iteration`.
pub fn density_control(
    field: &SplatField,
    stats: &GradStats,
    iteration: u64,
    cfg: &DensityConfig,
) -> DensityOutcome {
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.seed ^ iteration.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut splats = Vec::with_capacity(field.len());
    let mut origins = Vec::with_capacity(field.len());
    let mut extra = Vec::new();
    let (mut pruned, mut cloned, mut split) = (0, 0, 0);
    let mut budget = cfg.max_splats.saturating_sub(field.len());

    for (i, s) in field.splats.iter().enumerate() {
        if s.opacity() < cfg.prune_opacity {
            pruned += 1;
            continue;
        }
        let hot = stats.mean(i) > cfg.grad_threshold;
        let large = s.scale().max() > cfg.dense_scale;
        if hot && large && budget >= 1 {
            budget -= 1;
            split += 1;
            let rot = s.rotation();
            let scale = s.scale();
            for _ in 0..2 {
                let z = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
                let mut child = s.clone();
                child.mean = s.mean + rot * scale.component_mul(&z);
                child.log_scale = s.log_scale.map(|l| l - cfg.split_shrink.ln());
                extra.push((child, SplatOrigin::Split(i)));
            }
            continue;
        }
        splats.push(s.clone());
        origins.push(SplatOrigin::Kept(i));
        if hot && !large && budget >= 1 {
            budget -= 1;
            cloned += 1;
            extra.push((s.clone(), SplatOrigin::Cloned(i)));
        }
    }
    for (s, o) in extra {
        splats.push(s);
        origins.push(o);
    }
    DensityOutcome {
        field: SplatField::new(splats, field.background),
        origins,
        pruned,
        cloned,
        split,
    }
}
