//! Video refinement scheduling.
//!
//! Builds per-pixel change maps from the predictor and refine masks, decides
//! when a denoising step keeps the original content, and drives an external
//! refiner through a synchronous request/response contract. Frames travel in
//! pixel space: the refiner's latent codec is treated as the identity.

mod exchange;
mod oracle;

use thiserror::Error;

use crate::image::{DepthMap, Grid, Mask, RgbImage, ScalarMap};

pub use exchange::{ExchangeManifest, FileExchangeRefiner, DEFAULT_TIMEOUT};
pub use oracle::{oracle_refine, OracleRefiner, ORACLE_NOISE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("refiner did not answer within {seconds} s")]
    Timeout { seconds: f64 },
    #[error("exchange I/O: {0}")]
    Io(String),
    #[error("expected {expected} refined frames, got {actual}")]
    FrameCount { expected: usize, actual: usize },
    #[error("frame {frame}: expected {expected:?}, got {got:?}")]
    Dimensions {
        frame: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("frame {frame}: {reason}")]
    Malformed { frame: usize, reason: String },
    #[error("refiner failed: {0}")]
    Failed(String),
}

impl RefineError {
    /// Short machine-readable category.
    pub fn category(&self) -> &'static str {
        match self {
            RefineError::InvalidRequest(_) => "invalid-request",
            RefineError::Timeout { .. } => "timeout",
            RefineError::Io(_) => "protocol-io",
            RefineError::FrameCount { .. } => "frame-count",
            RefineError::Dimensions { .. } => "frame-dimensions",
            RefineError::Malformed { .. } => "malformed-response",
            RefineError::Failed(_) => "refiner-failed",
        }
    }
}

/// Per-pixel edit strength in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeMap(pub ScalarMap);

impl ChangeMap {
    pub fn from_mask(mask: &Mask) -> Self {
        ChangeMap(mask.to_scalar())
    }

    pub fn weights(&self) -> &ScalarMap {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    /// Sorted distinct weight values.
    pub fn levels(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.0.data().to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// Tier weights applied to the current noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TierWeights {
    /// Inconsistent pixels.
    pub max: f64,
    /// Consistent but generated pixels.
    pub mid: f64,
    /// Validated visible pixels.
    pub min: f64,
}

impl Default for TierWeights {
    fn default() -> Self {
        Self {
            max: 1.0,
            mid: 0.6,
            min: 0.15,
        }
    }
}

/// `w = max·s` on inconsistent pixels, `mid·s` on the remaining refine-mask
/// pixels and `min·s` elsewhere.
pub fn change_map(mlp: &Mask, refine: &Mask, s: f64, tiers: &TierWeights) -> ChangeMap {
    assert!(mlp.same_dims(refine), "mask dimension mismatch");
    ChangeMap(mlp.zip_map(refine, |&m, &r| {
        let w = if m {
            tiers.max
        } else if r {
            tiers.mid
        } else {
            tiers.min
        };
        (w * s).clamp(0.0, 1.0)
    }))
}

/// Whether denoising step `t` of `total` keeps the noised original at a
/// pixel with change weight `w`: `(T − t)/T < 1 − w`.
///
/// Rearranged to `T·w < t` and evaluated exactly on the binary expansion of
/// `w`, so no rounding can flip a boundary case.
pub fn should_substitute(t: u32, total: u32, w: f64) -> bool {
    assert!(total >= 1 && t <= total, "timestep outside [0, T]");
    assert!(
        w.is_finite() && w >= 0.0,
        "change weight must be finite and non-negative"
    );
    if w == 0.0 {
        return t > 0;
    }
    let bits = w.to_bits();
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    // w = mantissa · 2^exp exactly.
    let (mantissa, exp) = if exp_bits == 0 {
        (frac, -1074i64)
    } else {
        (frac | (1u64 << 52), exp_bits - 1075)
    };
    let lhs = u128::from(total) * u128::from(mantissa);
    if exp >= 0 {
        // w ≥ 2^52 here; T·w can never be below a u32 t.
        return false;
    }
    let shift = (-exp) as u32;
    // lhs · 2^-shift < t  ⇔  floor(lhs / 2^shift) < t, since t·2^shift is a multiple of 2^shift.
    let floor = if shift >= 128 { 0 } else { lhs >> shift };
    floor < u128::from(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineRequest {
    pub frames: Vec<RgbImage>,
    pub change_maps: Vec<ChangeMap>,
    /// Conditioning depth, forwarded verbatim.
    pub depth_maps: Vec<DepthMap>,
    pub text_prompt: String,
    /// Noise level `s ∈ [0, 1]`.
    pub noise_level: f64,
    pub total_steps: u32,
}

impl RefineRequest {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames.first().map_or((0, 0), |f| f.dims())
    }

    pub fn validate(&self) -> Result<(), RefineError> {
        let bad = |m: String| Err(RefineError::InvalidRequest(m));
        if self.frames.is_empty() {
            return bad("no frames".into());
        }
        if self.change_maps.len() != self.frames.len() || self.depth_maps.len() != self.frames.len()
        {
            return bad(format!(
                "{} frames, {} change maps, {} depth maps",
                self.frames.len(),
                self.change_maps.len(),
                self.depth_maps.len()
            ));
        }
        let dims = self.dims();
        for (i, ((f, c), d)) in self
            .frames
            .iter()
            .zip(&self.change_maps)
            .zip(&self.depth_maps)
            .enumerate()
        {
            if f.dims() != dims || c.dims() != dims || d.dims() != dims {
                return bad(format!("frame {i}: inconsistent dimensions"));
            }
            if c.0.data().iter().any(|w| !(0.0..=1.0).contains(w)) {
                return bad(format!("frame {i}: change weight outside [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return bad(format!("noise level {} outside [0, 1]", self.noise_level));
        }
        if self.total_steps < 1 {
            return bad("total steps must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineResponse {
    pub frames: Vec<RgbImage>,
}

/// An external video refiner.
pub trait Refiner {
    fn refine(&mut self, request: &RefineRequest) -> Result<RefineResponse, RefineError>;
}

/// Sends `request` to `refiner` and checks the answer: frame count and
/// dimensions must match and every value must be finite. Values are clamped
/// to `[0, 1]`.
pub fn refine(
    request: &RefineRequest,
    refiner: &mut dyn Refiner,
) -> Result<RefineResponse, RefineError> {
    request.validate()?;
    let response = refiner.refine(request)?;
    if response.frames.len() != request.frame_count() {
        return Err(RefineError::FrameCount {
            expected: request.frame_count(),
            actual: response.frames.len(),
        });
    }
    let dims = request.dims();
    let mut frames = Vec::with_capacity(response.frames.len());
    for (i, f) in response.frames.into_iter().enumerate() {
        if f.dims() != dims {
            return Err(RefineError::Dimensions {
                frame: i,
                expected: dims,
                got: f.dims(),
            });
        }
        if f.data().iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(RefineError::Malformed {
                frame: i,
                reason: "non-finite value".into(),
            });
        }
        frames.push(f.map(|c| {
            [
                c[0].clamp(0.0, 1.0),
                c[1].clamp(0.0, 1.0),
                c[2].clamp(0.0, 1.0),
            ]
        }));
    }
    Ok(RefineResponse { frames })
}

/// Blend helper shared by the oracle and tests: `w·a + (1 − w)·b`.
pub fn blend(a: &RgbImage, b: &RgbImage, w: &ScalarMap) -> RgbImage {
    Grid::from_fn(a.width(), a.height(), |x, y| {
        let wv = *w.get(x, y);
        let (pa, pb) = (a.get(x, y), b.get(x, y));
        [
            wv * pa[0] + (1.0 - wv) * pb[0],
            wv * pa[1] + (1.0 - wv) * pb[1],
            wv * pa[2] + (1.0 - wv) * pb[2],
        ]
    })
}
