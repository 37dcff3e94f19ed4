use crate::image::{Mask, RgbImage};

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 100.0;

/// Squared color error summed over `region` (all pixels when `None`) and
/// the number of channel samples it covers.
pub fn squared_error(a: &RgbImage, b: &RgbImage, region: Option<&Mask>) -> (f64, usize) {
    assert!(a.same_dims(b), "images differ in size");
    let mut sum = 0.0;
    let mut n = 0;
    for (i, (p, q)) in a.data().iter().zip(b.data()).enumerate() {
        if region.is_some_and(|m| !m.data()[i]) {
            continue;
        }
        for c in 0..3 {
            sum += (p[c] - q[c]).powi(2);
        }
        n += 3;
    }
    (sum, n)
}

/// PSNR for unit-range images from a summed squared error; `None` for an
/// empty region, [`PSNR_CAP`] for an exact match.
pub fn psnr_from(sum: f64, n: usize) -> Option<f64> {
    if n == 0 {
        return None;
    }
    let mse = sum / n as f64;
    Some(if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    })
}

/// PSNR pooled over all frames, restricted to `regions` when given.
pub fn pooled_psnr(
    renders: &[RgbImage],
    truth: &[RgbImage],
    regions: Option<&[Mask]>,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, (r, t)) in renders.iter().zip(truth).enumerate() {
        let (s, k) = squared_error(r, t, regions.map(|m| &m[i]));
        sum += s;
        n += k;
    }
    psnr_from(sum, n)
}

/// Intersection over union pooled over frames; `None` when both are empty.
pub fn pooled_iou(predicted: &[Mask], truth: &[Mask]) -> Option<f64> {
    let mut inter = 0usize;
    let mut union = 0usize;
    for (p, t) in predicted.iter().zip(truth) {
        inter += p.intersection(t).count();
        union += p.union(t).count();
    }
    (union > 0).then(|| inter as f64 / union as f64)
}
