//! Self-supervised inlier/outlier head.
//!
//! A per-pixel linear classifier over hand-built features predicts the
//! probability `H` that a pixel is geometrically consistent. It is supervised
//! by residual-quantile bounds and by the prior that reference-derived
//! pixels are reliable.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::IoError;
use crate::gaussian::sigmoid;
use crate::image::{Grid, Mask, RgbImage, ScalarMap};

/// Feature channels: rendered RGB, target RGB, |residual| RGB.
pub const FEATURE_CHANNELS: usize = 9;
/// Standard deviation of freshly initialized weights.
pub const INIT_STD: f64 = 0.01;
/// `H` below this marks an inconsistent pixel.
pub const MLP_THRESHOLD: f64 = 0.5;

pub const TAU_LOW_START: f64 = 0.7;
pub const TAU_LOW_END: f64 = 0.85;
pub const TAU_HIGH: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Pixel-major: `data[(y * width + x) * channels + k]`.
    pub data: Vec<f64>,
}

impl FeatureMap {
    /// Builds the nine standardized channels from a render and its target.
    pub fn from_images(rendered: &RgbImage, target: &RgbImage) -> FeatureMap {
        assert!(rendered.same_dims(target), "feature inputs differ in size");
        let n = rendered.len();
        let mut data = vec![0.0; n * FEATURE_CHANNELS];
        for (p, (r, t)) in rendered.data().iter().zip(target.data()).enumerate() {
            for c in 0..3 {
                data[p * FEATURE_CHANNELS + c] = r[c];
                data[p * FEATURE_CHANNELS + 3 + c] = t[c];
                data[p * FEATURE_CHANNELS + 6 + c] = (r[c] - t[c]).abs();
            }
        }
        let mut map = FeatureMap {
            width: rendered.width(),
            height: rendered.height(),
            channels: FEATURE_CHANNELS,
            data,
        };
        map.standardize();
        map
    }

    /// Zero mean, unit variance per channel; constant channels become 0.
    pub fn standardize(&mut self) {
        let n = self.width * self.height;
        if n == 0 {
            return;
        }
        for k in 0..self.channels {
            let mean = (0..n)
                .map(|p| self.data[p * self.channels + k])
                .sum::<f64>()
                / n as f64;
            let var = (0..n)
                .map(|p| (self.data[p * self.channels + k] - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            let std = var.sqrt();
            for p in 0..n {
                let v = &mut self.data[p * self.channels + k];
                *v = if std > 1e-12 { (*v - mean) / std } else { 0.0 };
            }
        }
    }

    #[inline]
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }
}

/// Weights and bias of the per-pixel linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl PredictorParams {
    /// Weights drawn from `N(0, INIT_STD²)` with a fixed seed, zero bias.
    pub fn initialized(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        Self {
            weights: (0..channels).map(|_| normal.sample(&mut rng)).collect(),
            bias: 0.0,
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            weights: vec![0.0; channels],
            bias: 0.0,
        }
    }

    pub fn as_flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        let k = self.weights.len();
        self.weights.copy_from_slice(&v[..k]);
        self.bias = v[k];
    }

    /// Whitespace-separated weights followed by the bias, one line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for w in &self.weights {
            write!(s, "{w} ").unwrap();
        }
        writeln!(s, "{}", self.bias).unwrap();
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, IoError> {
        let vals: Result<Vec<f64>, _> = text.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|e| IoError::parse(path, 1, e.to_string()))?;
        if vals.len() < 2 {
            return Err(IoError::parse(
                path,
                1,
                "expected at least one weight and a bias",
            ));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(IoError::parse(path, 1, "non-finite predictor parameter"));
        }
        let (w, b) = vals.split_at(vals.len() - 1);
        Ok(Self {
            weights: w.to_vec(),
            bias: b[0],
        })
    }
}

/// Re-draws the head from its seeded initializer.
pub fn reset(phi: &PredictorParams, seed: u64) -> PredictorParams {
    PredictorParams::initialized(phi.weights.len(), seed)
}

/// The value ρ with a fraction `tau` of `values` at or below it.
pub fn quantile_threshold(values: &[f64], tau: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty map");
    assert!(tau > 0.0 && tau < 1.0, "quantile level must be in (0, 1)");
    let n = values.len();
    let rank = ((tau * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[rank - 1]
}

/// Pixels strictly above the `tau`-quantile, before dilation.
pub fn raw_outlier_mask(residual: &ScalarMap, tau: f64) -> Mask {
    let rho = quantile_threshold(residual.data(), tau);
    residual.map(|&r| r > rho)
}

/// Binary dilation by a 3×3 box: a pixel is set when any neighbor
/// (clipped at the border) is set.
pub fn dilate3x3(mask: &Mask) -> Mask {
    let (w, h) = mask.dims();
    Grid::from_fn(w, h, |x, y| {
        let mut sum = 0u32;
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                sum += u32::from(*mask.get(xx, yy));
            }
        }
        f64::from(sum) > 0.5
    })
}

/// Dilated outlier mask of the residual at quantile level `tau`.
pub fn residual_mask(residual: &ScalarMap, tau: f64) -> Mask {
    dilate3x3(&raw_outlier_mask(residual, tau))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskBounds {
    pub tau_low: f64,
    pub tau_high: f64,
}

impl Default for MaskBounds {
    fn default() -> Self {
        Self {
            tau_low: TAU_LOW_START,
            tau_high: TAU_HIGH,
        }
    }
}

/// Floor `U` (1 on confident inliers) and ceiling `L` (0 on confident
/// outliers). `U ≤ L` holds pointwise because the outlier set at `tau_high`
/// is nested inside the one at `tau_low`.
pub fn compute_bounds(residual: &ScalarMap, bounds: &MaskBounds) -> (ScalarMap, ScalarMap) {
    assert!(
        bounds.tau_low < bounds.tau_high,
        "tau_low must be below tau_high"
    );
    let low = residual_mask(residual, bounds.tau_low);
    let high = residual_mask(residual, bounds.tau_high);
    let u = low.map(|&m| if m { 0.0 } else { 1.0 });
    let l = high.map(|&m| if m { 0.0 } else { 1.0 });
    (u, l)
}

/// Inlier probability per pixel, `sigmoid(wᵀf + b)`.
pub fn predict(features: &FeatureMap, phi: &PredictorParams) -> ScalarMap {
    assert_eq!(
        features.channels,
        phi.weights.len(),
        "feature/weight channel mismatch"
    );
    let n = features.width * features.height;
    let data = (0..n)
        .map(|p| {
            let z = features
                .pixel(p)
                .iter()
                .zip(&phi.weights)
                .map(|(f, w)| f * w)
                .sum::<f64>()
                + phi.bias;
            sigmoid(z)
        })
        .collect();
    Grid::from_vec(features.width, features.height, data)
}

/// Inconsistent pixels: `H < 0.5`.
pub fn mlp_mask(h: &ScalarMap) -> Mask {
    h.map(|&v| v < MLP_THRESHOLD)
}

pub fn supervision_loss(h: &ScalarMap, u: &ScalarMap, l: &ScalarMap) -> f64 {
    assert!(h.same_dims(u) && h.same_dims(l));
    let n = h.len() as f64;
    h.data()
        .iter()
        .zip(u.data())
        .zip(l.data())
        .map(|((&h, &u), &l)| (u - h).max(0.0) + (h - l).max(0.0))
        .sum::<f64>()
        / n
}

pub fn prior_loss(h: &ScalarMap, prior: &Mask) -> f64 {
    assert!(h.same_dims(prior));
    let n = h.len() as f64;
    h.data()
        .iter()
        .zip(prior.data())
        .map(|(&h, &m)| (f64::from(u8::from(m)) - h).max(0.0))
        .sum::<f64>()
        / n
}

/// `residual` is expected normalized to `[0, 1]` (see [`normalize_residual`]).
pub fn discard_loss(h: &ScalarMap, prior: &Mask, residual: &ScalarMap) -> f64 {
    assert!(h.same_dims(prior) && h.same_dims(residual));
    let n = h.len() as f64;
    -h.data()
        .iter()
        .zip(prior.data())
        .zip(residual.data())
        .map(|((&h, &m), &r)| if m { (1.0 - h) * r } else { 0.0 })
        .sum::<f64>()
        / n
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskLossWeights {
    pub prior: f64,
    pub discard: f64,
}

impl Default for MaskLossWeights {
    fn default() -> Self {
        Self {
            prior: 1.0,
            discard: 0.1,
        }
    }
}

/// Inputs of the combined predictor loss for one view.
pub struct MaskLossInputs<'a> {
    pub upper: &'a ScalarMap,
    pub lower: &'a ScalarMap,
    pub prior: &'a Mask,
    pub residual: &'a ScalarMap,
}

pub fn mask_loss(h: &ScalarMap, inputs: &MaskLossInputs<'_>, weights: &MaskLossWeights) -> f64 {
    supervision_loss(h, inputs.upper, inputs.lower)
        + weights.prior * prior_loss(h, inputs.prior)
        + weights.discard * discard_loss(h, inputs.prior, inputs.residual)
}

/// `dL/dH` of [`mask_loss`], using the one-sided derivative 0 at hinge kinks.
pub fn mask_loss_grad_h(
    h: &ScalarMap,
    inputs: &MaskLossInputs<'_>,
    weights: &MaskLossWeights,
) -> ScalarMap {
    let n = h.len() as f64;
    Grid::from_fn(h.width(), h.height(), |x, y| {
        let hv = *h.get(x, y);
        let u = *inputs.upper.get(x, y);
        let l = *inputs.lower.get(x, y);
        let m = f64::from(u8::from(*inputs.prior.get(x, y)));
        let r = *inputs.residual.get(x, y);
        let mut g = 0.0;
        if u - hv > 0.0 {
            g -= 1.0;
        }
        if hv - l > 0.0 {
            g += 1.0;
        }
        if m - hv > 0.0 {
            g -= weights.prior;
        }
        g += weights.discard * m * r;
        g / n
    })
}

/// Chains `dL/dH` through the sigmoid and the linear head.
pub fn predictor_grad(features: &FeatureMap, h: &ScalarMap, grad_h: &ScalarMap) -> PredictorParams {
    let mut g = PredictorParams::zeros(features.channels);
    for p in 0..h.len() {
        let hv = h.data()[p];
        let dz = grad_h.data()[p] * hv * (1.0 - hv);
        for (gw, f) in g.weights.iter_mut().zip(features.pixel(p)) {
            *gw += dz * f;
        }
        g.bias += dz;
    }
    g
}

/// Mean absolute color error per pixel.
pub fn residual_map(rendered: &RgbImage, target: &RgbImage) -> ScalarMap {
    rendered.mean_abs_diff(target)
}

/// Scales a residual map by its maximum; an all-zero map stays zero.
pub fn normalize_residual(r: &ScalarMap) -> ScalarMap {
    let max = r.data().iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        r.map(|&v| v / max)
    } else {
        r.clone()
    }
}

/// Linear schedule of the lower quantile level from 0.7 to 0.85.
pub fn anneal_tau_low(iteration: u64, total: u64) -> f64 {
    anneal_linear(TAU_LOW_START, TAU_LOW_END, iteration, total)
}

pub fn anneal_linear(start: f64, end: f64, iteration: u64, total: u64) -> f64 {
    if total == 0 || iteration >= total {
        return if total == 0 { start } else { end };
    }
    let f = iteration as f64 / total as f64;
    start + (end - start) * f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> ScalarMap {
        Grid::from_fn(w, h, |x, y| (y * w + x) as f64)
    }

    #[test]
    fn constant_residual_gives_empty_mask() {
        let r = Grid::filled(8, 8, 0.3);
        assert_eq!(residual_mask(&r, 0.7).count(), 0);
        let (u, l) = compute_bounds(&r, &MaskBounds::default());
        assert!(u.data().iter().all(|&v| v == 1.0));
        assert!(l.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn ramp_quantile_flags_top_thirty() {
        let r = ramp(10, 10);
        let raw = raw_outlier_mask(&r, 0.7);
        assert_eq!(raw.count(), 30);
        assert!(r
            .data()
            .iter()
            .zip(raw.data())
            .all(|(&v, &m)| m == (v >= 70.0)));
        assert_eq!(raw_outlier_mask(&r, 0.95).count(), 5);
    }

    #[test]
    fn single_pixel_dilates_to_neighborhood() {
        let mut m = Grid::filled(5, 5, false);
        m.set(2, 2, true);
        let d = dilate3x3(&m);
        assert_eq!(d.count(), 9);
        for y in 1..=3 {
            for x in 1..=3 {
                assert!(*d.get(x, y));
            }
        }
        let mut corner = Grid::filled(5, 5, false);
        corner.set(0, 0, true);
        assert_eq!(dilate3x3(&corner).count(), 4);
    }

    #[test]
    fn predict_examples() {
        let f = FeatureMap {
            width: 2,
            height: 1,
            channels: 3,
            data: vec![0.5, -1.0, 2.0, 1.5, 0.0, -0.5],
        };
        let h = predict(&f, &PredictorParams::zeros(3));
        assert!(h.data().iter().all(|&v| v == 0.5));
        let big = PredictorParams {
            weights: vec![0.0; 3],
            bias: 40.0,
        };
        assert_eq!(mlp_mask(&predict(&f, &big)).count(), 0);
        let phi = PredictorParams {
            weights: vec![0.3, -0.2, 0.1],
            bias: -0.05,
        };
        let h = predict(&f, &phi);
        let z0: f64 = 0.5 * 0.3 + -1.0 * -0.2 + 2.0 * 0.1 - 0.05;
        assert!((h.data()[0] - 1.0 / (1.0 + (-z0).exp())).abs() < 1e-15);
    }

    #[test]
    fn loss_examples() {
        let u = Grid::from_vec(2, 2, vec![1.0, 1.0, 0.0, 0.0]);
        let l = Grid::from_vec(2, 2, vec![1.0, 1.0, 1.0, 0.0]);
        let inside = Grid::from_vec(2, 2, vec![1.0, 1.0, 0.5, 0.0]);
        assert_eq!(supervision_loss(&inside, &u, &l), 0.0);
        let below = Grid::from_vec(2, 2, vec![0.75, 1.0, 0.5, 0.0]);
        assert!((supervision_loss(&below, &u, &l) - 0.25 / 4.0).abs() < 1e-15);

        let prior = Grid::from_vec(2, 2, vec![true, true, false, false]);
        assert_eq!(prior_loss(&Grid::filled(2, 2, 1.0), &prior), 0.0);
        assert_eq!(prior_loss(&Grid::filled(2, 2, 0.0), &prior), 0.5);

        let r = Grid::filled(2, 2, 1.0);
        assert_eq!(discard_loss(&Grid::filled(2, 2, 1.0), &prior, &r), 0.0);
        assert_eq!(discard_loss(&Grid::filled(2, 2, 0.0), &prior, &r), -0.5);

        let inputs = MaskLossInputs {
            upper: &u,
            lower: &l,
            prior: &prior,
            residual: &r,
        };
        let none = MaskLossWeights {
            prior: 0.0,
            discard: 0.0,
        };
        assert_eq!(
            mask_loss(&below, &inputs, &none),
            supervision_loss(&below, &u, &l)
        );
    }

    #[test]
    fn reset_is_deterministic_and_near_half() {
        let phi = PredictorParams::zeros(FEATURE_CHANNELS);
        let a = reset(&phi, 42);
        assert_eq!(a, reset(&phi, 42));
        assert_ne!(a, reset(&phi, 43));
        assert_eq!(a.bias, 0.0);
        let rendered = Grid::from_fn(16, 16, |x, y| [x as f64 / 15.0, y as f64 / 15.0, 0.5]);
        let target = Grid::from_fn(16, 16, |x, y| [y as f64 / 15.0, 0.2, x as f64 / 15.0]);
        let f = FeatureMap::from_images(&rendered, &target);
        let h = predict(&f, &a);
        assert!(h.data().iter().all(|&v| (v - 0.5).abs() < 0.05));
    }

    #[test]
    fn tau_low_schedule() {
        assert_eq!(anneal_tau_low(0, 15000), 0.7);
        assert_eq!(anneal_tau_low(15000, 15000), 0.85);
        assert!((anneal_tau_low(7500, 15000) - 0.775).abs() < 1e-12);
    }

    #[test]
    fn predictor_text_round_trip() {
        let phi = PredictorParams::initialized(9, 7);
        let back = PredictorParams::parse(&phi.to_text(), Path::new("phi.txt")).unwrap();
        assert_eq!(back, phi);
        assert!(PredictorParams::parse("1.0", Path::new("phi.txt")).is_err());
    }
}
