//! Inconsistency-aware Gaussian splatting.
//!
//! - [`geometry`]: depth lifting, point rendering, occlusion volume and the
//!   per-view masks used to initialize a scene from one reference image.
//! - [`gaussian`]: the splat field, its differentiable tile rasterizer and
//!   density control.
//! - [`predictor`]: the per-pixel inconsistency head and its bounded,
//!   prior-aware supervision.
//! - [`refine`]: change maps, the latent substitution rule and the external
//!   refiner contract (file exchange or in-process oracle).
//! - [`trainer`]: the co-training loop tying everything together.

pub mod camera;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod handles;
pub mod image;
pub mod oracle;
pub mod predictor;
pub mod refine;
pub mod trainer;

pub use camera::CameraView;
pub use error::IoError;
pub use gaussian::{Splat, SplatField};
