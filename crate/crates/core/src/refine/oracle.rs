use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{RefineError, RefineRequest, RefineResponse, Refiner};
use crate::image::{Grid, RgbImage};

/// Noise standard deviation at full change weight.
pub const ORACLE_NOISE: f64 = 0.02;

/// Synthetic stand-in for the video model: pulls each pixel toward ground
/// truth by its change weight, plus seeded noise of scale `noise_scale · w`.
///
/// `out = w·GT + (1 − w)·in + η`, clamped to `[0, 1]`.
pub fn oracle_refine(
    request: &RefineRequest,
    ground_truth: &[RgbImage],
    seed: u64,
    noise_scale: f64,
) -> Result<RefineResponse, RefineError> {
    if ground_truth.len() != request.frame_count() {
        return Err(RefineError::Failed(format!(
            "oracle holds {} ground-truth frames, request has {}",
            ground_truth.len(),
            request.frame_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(request.frame_count());
    for (i, ((frame, change), gt)) in request
        .frames
        .iter()
        .zip(&request.change_maps)
        .zip(ground_truth)
        .enumerate()
    {
        if gt.dims() != frame.dims() {
            return Err(RefineError::Dimensions {
                frame: i,
                expected: frame.dims(),
                got: gt.dims(),
            });
        }
        let mut out = Vec::with_capacity(frame.len());
        for ((input, target), &w) in frame.data().iter().zip(gt.data()).zip(change.0.data()) {
            let mut px = [0.0; 3];
            for c in 0..3 {
                let z: f64 = StandardNormal.sample(&mut rng);
                let eta = noise_scale * w * z;
                px[c] = (w * target[c] + (1.0 - w) * input[c] + eta).clamp(0.0, 1.0);
            }
            out.push(px);
        }
        frames.push(Grid::from_vec(frame.width(), frame.height(), out));
    }
    Ok(RefineResponse { frames })
}

/// In-process oracle handle. Each call draws a fresh, seed-derived noise
/// stream so repeated rounds differ but whole runs replay exactly.
#[derive(Clone, Debug)]
pub struct OracleRefiner {
    pub ground_truth: Vec<RgbImage>,
    pub seed: u64,
    pub noise_scale: f64,
    pub calls: u64,
}

impl OracleRefiner {
    pub fn new(ground_truth: Vec<RgbImage>, seed: u64) -> Self {
        Self {
            ground_truth,
            seed,
            noise_scale: ORACLE_NOISE,
            calls: 0,
        }
    }

    pub fn noiseless(ground_truth: Vec<RgbImage>) -> Self {
        Self {
            noise_scale: 0.0,
            ..Self::new(ground_truth, 0)
        }
    }
}

impl Refiner for OracleRefiner {
    fn refine(&mut self, request: &RefineRequest) -> Result<RefineResponse, RefineError> {
        let seed = self
            .seed
            .wrapping_add(self.calls.wrapping_mul(0xA076_1D64_78BD_642F));
        self.calls += 1;
        oracle_refine(request, &self.ground_truth, seed, self.noise_scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::{refine, ChangeMap};

    fn request(input: [f64; 3], w: f64) -> RefineRequest {
        RefineRequest {
            frames: vec![Grid::filled(5, 4, input); 2],
            change_maps: vec![ChangeMap(Grid::filled(5, 4, w)); 2],
            depth_maps: vec![Grid::filled(5, 4, 1.0); 2],
            text_prompt: String::new(),
            noise_level: 0.5,
            total_steps: 10,
        }
    }

    fn gt() -> Vec<RgbImage> {
        vec![Grid::filled(5, 4, [0.9, 0.1, 0.6]); 2]
    }

    #[test]
    fn zero_weight_returns_input_exactly() {
        let req = request([0.3, 0.4, 0.5], 0.0);
        let out = oracle_refine(&req, &gt(), 11, ORACLE_NOISE).unwrap();
        assert_eq!(out.frames, req.frames);
    }

    #[test]
    fn full_weight_is_reproducible() {
        let req = request([0.3, 0.4, 0.5], 1.0);
        let a = oracle_refine(&req, &gt(), 11, ORACLE_NOISE).unwrap();
        let b = oracle_refine(&req, &gt(), 11, ORACLE_NOISE).unwrap();
        assert_eq!(a, b);
        let c = oracle_refine(&req, &gt(), 12, ORACLE_NOISE).unwrap();
        assert_ne!(a, c);
        let noiseless = oracle_refine(&req, &gt(), 11, 0.0).unwrap();
        assert_eq!(noiseless.frames, gt());
    }

    #[test]
    fn half_weight_blends() {
        let req = request([0.3, 0.4, 0.5], 0.5);
        let out = oracle_refine(&req, &gt(), 3, 0.0).unwrap();
        for px in out.frames[1].data() {
            assert!((px[0] - 0.6).abs() < 1e-15);
            assert!((px[1] - 0.25).abs() < 1e-15);
            assert!((px[2] - 0.55).abs() < 1e-15);
        }
    }

    #[test]
    fn noiseless_full_weight_is_idempotent() {
        let mut oracle = OracleRefiner::noiseless(gt());
        let req = request([0.3, 0.4, 0.5], 1.0);
        let once = refine(&req, &mut oracle).unwrap();
        let mut again = req.clone();
        again.frames = once.frames.clone();
        assert_eq!(refine(&again, &mut oracle).unwrap(), once);
    }
}
