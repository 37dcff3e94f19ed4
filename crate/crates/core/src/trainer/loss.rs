//! Composite field objective and the Pearson depth correlation.

use thiserror::Error;

use crate::image::{DepthMap, Grid, Mask, RgbImage, ScalarMap};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("pearson: sequences have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("pearson: need at least 2 samples, got {0}")]
    TooShort(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pearson {
    pub value: f64,
    /// Set when either input has zero variance; `value` is then 0.
    pub zero_variance: bool,
}

fn centered(v: &[f64]) -> (Vec<f64>, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    (c, norm)
}

/// Sample correlation coefficient, clamped to `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Pearson, LossError> {
    if x.len() != y.len() {
        return Err(LossError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(LossError::TooShort(x.len()));
    }
    let (a, na) = centered(x);
    let (b, nb) = centered(y);
    if na == 0.0 || nb == 0.0 {
        return Ok(Pearson {
            value: 0.0,
            zero_variance: true,
        });
    }
    let dot: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
    Ok(Pearson {
        value: (dot / (na * nb)).clamp(-1.0, 1.0),
        zero_variance: false,
    })
}

/// Correlation and its gradient with respect to `y`; zero gradient in the
/// zero-variance case.
pub fn pearson_with_grad(x: &[f64], y: &[f64]) -> Result<(Pearson, Vec<f64>), LossError> {
    let p = pearson(x, y)?;
    if p.zero_variance {
        return Ok((p, vec![0.0; y.len()]));
    }
    let (a, na) = centered(x);
    let (b, nb) = centered(y);
    let rho = a.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>() / (na * nb);
    let grad = a
        .iter()
        .zip(&b)
        .map(|(ai, bi)| ai / (na * nb) - rho * bi / (nb * nb))
        .collect();
    Ok((p, grad))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GsLossWeights {
    pub l2: f64,
    pub l1: f64,
    pub pearson: f64,
}

impl Default for GsLossWeights {
    fn default() -> Self {
        Self {
            l2: 1.0,
            l1: 1.0,
            pearson: 1.0,
        }
    }
}

#[derive(Clone, Copy)]
pub struct GsLossInputs<'a> {
    /// Current render.
    pub render: &'a RgbImage,
    /// Refined frame.
    pub refined: &'a RgbImage,
    /// Initial coarse frame.
    pub initial: &'a RgbImage,
    pub mlp: &'a Mask,
    pub refine: &'a Mask,
    pub rendered_depth: &'a DepthMap,
    pub conditioned_depth: &'a DepthMap,
    /// Pixels that take part in the depth correlation.
    pub depth_valid: &'a Mask,
}

#[derive(Clone, Debug)]
pub struct GsLoss {
    pub total: f64,
    pub l2: f64,
    pub l1: f64,
    pub pearson: Pearson,
    pub grad_color: RgbImage,
    pub grad_depth: ScalarMap,
}

/// Squared error toward the refined frame on `mlp ∪ refine`, absolute error
/// toward the initial frame elsewhere, minus the depth correlation. Color
/// terms average over all pixels and channels.
pub fn gs_loss(inp: &GsLossInputs<'_>, weights: &GsLossWeights) -> GsLoss {
    let (w, h) = inp.render.dims();
    for dims in [
        inp.refined.dims(),
        inp.initial.dims(),
        inp.mlp.dims(),
        inp.refine.dims(),
        inp.rendered_depth.dims(),
        inp.conditioned_depth.dims(),
        inp.depth_valid.dims(),
    ] {
        assert_eq!(dims, (w, h), "loss inputs differ in size");
    }
    let norm = 3.0 * (w * h) as f64;
    let mut l2 = 0.0;
    let mut l1 = 0.0;
    let mut grad_color = Grid::filled(w, h, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let r = inp.render.get(x, y);
            let g = grad_color.get_mut(x, y);
            if *inp.mlp.get(x, y) || *inp.refine.get(x, y) {
                let t = inp.refined.get(x, y);
                for c in 0..3 {
                    let d = r[c] - t[c];
                    l2 += d * d;
                    g[c] = weights.l2 * 2.0 * d / norm;
                }
            } else {
                let t = inp.initial.get(x, y);
                for c in 0..3 {
                    let d = r[c] - t[c];
                    l1 += d.abs();
                    g[c] = weights.l1
                        * if d > 0.0 {
                            1.0
                        } else if d < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                        / norm;
                }
            }
        }
    }
    l2 /= norm;
    l1 /= norm;

    let mut idx = Vec::new();
    let mut cond = Vec::new();
    let mut rend = Vec::new();
    for (i, ((&valid, &d), &dh)) in inp
        .depth_valid
        .data()
        .iter()
        .zip(inp.conditioned_depth.data())
        .zip(inp.rendered_depth.data())
        .enumerate()
    {
        if valid && d.is_finite() && dh.is_finite() {
            idx.push(i);
            cond.push(d);
            rend.push(dh);
        }
    }
    let mut grad_depth = Grid::filled(w, h, 0.0);
    let pearson = match pearson_with_grad(&cond, &rend) {
        Ok((p, g)) => {
            for (&i, gi) in idx.iter().zip(g) {
                grad_depth.data_mut()[i] = -weights.pearson * gi;
            }
            p
        }
        Err(_) => Pearson {
            value: 0.0,
            zero_variance: true,
        },
    };
    GsLoss {
        total: weights.l2 * l2 + weights.l1 * l1 - weights.pearson * pearson.value,
        l2,
        l1,
        pearson,
        grad_color,
        grad_depth,
    }
}
