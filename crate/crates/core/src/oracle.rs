//! Ground-truth-backed stand-ins for the inpainting and depth handles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::CameraView;
use crate::gaussian::{rasterize, RasterSettings, RenderOutput, SplatField};
use crate::handles::{DepthEstimator, HandleError, ImageInpainter};
use crate::image::{DepthMap, Grid, Mask, RgbImage, DEPTH_SENTINEL};
use crate::trainer::DEPTH_VALID_ALPHA;

/// Fills masked pixels with the ground-truth field's render.
#[derive(Clone, Debug)]
pub struct FieldInpainter {
    pub field: SplatField,
    pub settings: RasterSettings,
}

impl FieldInpainter {
    pub fn new(field: SplatField) -> Self {
        Self {
            field,
            settings: RasterSettings::default(),
        }
    }
}

impl ImageInpainter for FieldInpainter {
    fn inpaint(
        &mut self,
        cam: &CameraView,
        image: &RgbImage,
        mask: &Mask,
    ) -> Result<RgbImage, HandleError> {
        if !image.same_dims(mask) || image.dims() != (cam.width, cam.height) {
            return Err(HandleError::Failed(format!(
                "inpaint: image {:?}, mask {:?}, camera {:?}",
                image.dims(),
                mask.dims(),
                (cam.width, cam.height)
            )));
        }
        let gt = rasterize(&self.field, cam, &self.settings).color;
        Ok(Grid::from_fn(image.width(), image.height(), |x, y| {
            if *mask.get(x, y) {
                *gt.get(x, y)
            } else {
                *image.get(x, y)
            }
        }))
    }
}

/// Depth of the rendered surface with the background contribution removed:
/// `(D − T·d_bg) / α` where `α ≥ DEPTH_VALID_ALPHA`, the sentinel elsewhere.
pub fn surface_depth(render: &RenderOutput, settings: &RasterSettings) -> DepthMap {
    Grid::from_fn(render.depth.width(), render.depth.height(), |x, y| {
        let a = *render.alpha.get(x, y);
        if a < DEPTH_VALID_ALPHA {
            return DEPTH_SENTINEL;
        }
        (render.depth.get(x, y) - render.transmittance.get(x, y) * settings.background_depth) / a
    })
}

/// Returns the ground-truth field's [`surface_depth`] plus seeded Gaussian
/// noise of standard deviation `noise_std` (meters). The image is ignored.
#[derive(Clone, Debug)]
pub struct FieldDepthOracle {
    pub field: SplatField,
    pub settings: RasterSettings,
    pub noise_std: f64,
    pub seed: u64,
    pub calls: u64,
}

impl FieldDepthOracle {
    pub fn new(field: SplatField, noise_std: f64, seed: u64) -> Self {
        Self {
            field,
            settings: RasterSettings::default(),
            noise_std,
            seed,
            calls: 0,
        }
    }
}

impl DepthEstimator for FieldDepthOracle {
    fn estimate(&mut self, cam: &CameraView, image: &RgbImage) -> Result<DepthMap, HandleError> {
        if image.dims() != (cam.width, cam.height) {
            return Err(HandleError::Failed(format!(
                "depth: image {:?} does not match camera {:?}",
                image.dims(),
                (cam.width, cam.height)
            )));
        }
        let seed = self
            .seed
            .wrapping_add(self.calls.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.calls += 1;
        let mut depth = surface_depth(&rasterize(&self.field, cam, &self.settings), &self.settings);
        if self.noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for d in depth.data_mut().iter_mut().filter(|d| d.is_finite()) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *d = (*d + self.noise_std * z).max(1e-6);
            }
        }
        Ok(depth)
    }
}
