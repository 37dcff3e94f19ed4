use crate::gaussian::{FieldGrads, SplatField, SplatOrigin, PARAMS_PER_SPLAT};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRates {
    /// Initial mean rate, scaled by the scene extent.
    pub mean: f64,
    /// Mean rate reached at the last iteration.
    pub mean_final: f64,
    pub color: f64,
    pub opacity: f64,
    pub scale: f64,
    pub quat: f64,
    pub predictor: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1.6e-4,
            mean_final: 1.6e-6,
            color: 2.5e-3,
            opacity: 5e-2,
            scale: 5e-3,
            quat: 1e-3,
            predictor: 1e-2,
        }
    }
}

impl LearningRates {
    /// Mean rate with log-linear decay over the run.
    pub fn mean_at(&self, iteration: u64, total: u64, extent: f64) -> f64 {
        let f = if total == 0 {
            1.0
        } else {
            (iteration as f64 / total as f64).min(1.0)
        };
        extent * (self.mean.ln() * (1.0 - f) + self.mean_final.ln() * f).exp()
    }

    fn per_param(&self, mean_lr: f64) -> [f64; PARAMS_PER_SPLAT] {
        let mut lr = [0.0; PARAMS_PER_SPLAT];
        lr[0..3].fill(mean_lr);
        lr[3..6].fill(self.scale);
        lr[6..10].fill(self.quat);
        lr[10] = self.opacity;
        lr[11..14].fill(self.color);
        lr
    }
}

/// Plain Adam over a flat parameter vector.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grads[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + EPS);
        }
    }
}

/// Adam over every splat parameter with per-group rates. Splats that
/// received no gradient this step keep their moments untouched.
#[derive(Clone, Debug, Default)]
pub struct SplatAdam {
    m: Vec<[f64; PARAMS_PER_SPLAT]>,
    v: Vec<[f64; PARAMS_PER_SPLAT]>,
    steps: Vec<u32>,
}

impl SplatAdam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![[0.0; PARAMS_PER_SPLAT]; n],
            v: vec![[0.0; PARAMS_PER_SPLAT]; n],
            steps: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(
        &mut self,
        field: &mut SplatField,
        grads: &FieldGrads,
        rates: &LearningRates,
        mean_lr: f64,
    ) {
        assert_eq!(
            field.len(),
            self.m.len(),
            "optimizer state out of sync with field"
        );
        let lr = rates.per_param(mean_lr);
        for (i, (splat, g)) in field.splats.iter_mut().zip(&grads.splats).enumerate() {
            let g = g.params();
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let bc1 = 1.0 - BETA1.powi(t);
            let bc2 = 1.0 - BETA2.powi(t);
            let mut p = splat.params();
            for k in 0..PARAMS_PER_SPLAT {
                self.m[i][k] = BETA1 * self.m[i][k] + (1.0 - BETA1) * g[k];
                self.v[i][k] = BETA2 * self.v[i][k] + (1.0 - BETA2) * g[k] * g[k];
                p[k] -= lr[k] * (self.m[i][k] / bc1) / ((self.v[i][k] / bc2).sqrt() + EPS);
            }
            for c in &mut p[11..14] {
                *c = c.clamp(0.0, 1.0);
            }
            splat.set_params(&p);
            splat.normalize_quat();
        }
    }

    /// Rebuilds state after density control: kept splats keep their
    /// moments, new splats start fresh.
    pub fn remap(&mut self, origins: &[SplatOrigin]) {
        let mut m = Vec::with_capacity(origins.len());
        let mut v = Vec::with_capacity(origins.len());
        let mut steps = Vec::with_capacity(origins.len());
        for o in origins {
            match *o {
                SplatOrigin::Kept(i) => {
                    m.push(self.m[i]);
                    v.push(self.v[i]);
                    steps.push(self.steps[i]);
                }
                SplatOrigin::Cloned(_) | SplatOrigin::Split(_) => {
                    m.push([0.0; PARAMS_PER_SPLAT]);
                    v.push([0.0; PARAMS_PER_SPLAT]);
                    steps.push(0);
                }
            }
        }
        self.m = m;
        self.v = v;
        self.steps = steps;
    }
}
