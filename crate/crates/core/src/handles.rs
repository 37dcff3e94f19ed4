//! External image-inpainting and depth-estimation handles.
//!
//! Real deployments back these with generative and monocular-depth models;
//! tests use the synthetic oracles in [`crate::oracle`].

use thiserror::Error;

use crate::camera::CameraView;
use crate::image::{DepthMap, Mask, RgbImage};
use crate::refine::{ChangeMap, RefineError, RefineRequest, Refiner};

#[derive(Debug, Error)]
pub enum HandleError {
    #[error("refiner: {0}")]
    Refine(#[from] RefineError),
    #[error("{0}")]
    Failed(String),
}

pub trait ImageInpainter {
    /// Returns `image` with the pixels under `mask` filled in.
    fn inpaint(
        &mut self,
        cam: &CameraView,
        image: &RgbImage,
        mask: &Mask,
    ) -> Result<RgbImage, HandleError>;
}

pub trait DepthEstimator {
    /// Camera-space depth for every pixel of `image` seen from `cam`.
    fn estimate(&mut self, cam: &CameraView, image: &RgbImage) -> Result<DepthMap, HandleError>;
}

/// Drives any [`Refiner`] as a single-frame inpainter: the mask becomes a
/// binary change map and the remaining pixels are kept verbatim.
pub struct RefinerInpainter<'a> {
    pub refiner: &'a mut dyn Refiner,
    pub text_prompt: String,
    pub total_steps: u32,
}

impl ImageInpainter for RefinerInpainter<'_> {
    fn inpaint(
        &mut self,
        cam: &CameraView,
        image: &RgbImage,
        mask: &Mask,
    ) -> Result<RgbImage, HandleError> {
        let request = RefineRequest {
            frames: vec![image.clone()],
            change_maps: vec![ChangeMap::from_mask(mask)],
            depth_maps: vec![DepthMap::filled(
                cam.width,
                cam.height,
                crate::image::DEPTH_SENTINEL,
            )],
            text_prompt: self.text_prompt.clone(),
            noise_level: 1.0,
            total_steps: self.total_steps,
        };
        let mut response = crate::refine::refine(&request, self.refiner)?;
        let refined = response.frames.pop().expect("validated frame count");
        Ok(crate::image::Grid::from_fn(
            image.width(),
            image.height(),
            |x, y| {
                if *mask.get(x, y) {
                    *refined.get(x, y)
                } else {
                    *image.get(x, y)
                }
            },
        ))
    }
}
