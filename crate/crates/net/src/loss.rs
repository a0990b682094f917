//! Charbonnier, perceptual and combined losses over two-channel tensors
//! `[images·H·W, 2]`.

use imt_autograd::{Eager, Graph, Real, Tensor};
use imt_core::{ComplexImageStack, ImtError, Result};
use serde::{Deserialize, Serialize};

use crate::features::FeatureExtractor;
use crate::model::stacks_to_tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CharbonnierReduction {
    /// `(1/N)·Σ_i sqrt(|Δ_i|² + ε²)`
    #[default]
    PerElementMean,
    /// `sqrt(Σ_i |Δ_i|² + ε²)`
    PaperLiteralGlobal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub epsilon: f64,
    pub perceptual_weight: f64,
    pub charbonnier_reduction: CharbonnierReduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            perceptual_weight: 0.1,
            charbonnier_reduction: CharbonnierReduction::PerElementMean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ImtError::InvalidInput(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.perceptual_weight >= 0.0 && self.perceptual_weight.is_finite()) {
            return Err(ImtError::InvalidInput(format!(
                "perceptual_weight must be non-negative, got {}",
                self.perceptual_weight
            )));
        }
        Ok(())
    }
}

/// Spatial layout of the rows of a loss input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageDims {
    pub images: usize,
    pub height: usize,
    pub width: usize,
}

pub struct LossTerms<V> {
    pub charbonnier: V,
    pub perceptual: Option<V>,
    pub total: V,
}

pub fn charbonnier<R: Real, G: Graph<R>>(g: &mut G, pred: &G::Var, target: &G::Var, cfg: &LossConfig) -> G::Var {
    let e = R::of(cfg.epsilon);
    // ε² rounded in the working precision, so sqrt(ε²) returns ε exactly.
    let e2 = (e * e).f64();
    let d = g.sub(pred, target);
    let sq = g.square(&d);
    let r2 = g.sum_last(&sq);
    match cfg.charbonnier_reduction {
        CharbonnierReduction::PerElementMean => {
            // ε + mean(sqrt(r² + ε²) − ε): zero residual gives ε exactly for any N.
            let s = g.add_scalar(&r2, e2);
            let s = g.sqrt(&s);
            let s = g.add_scalar(&s, -e.f64());
            let m = g.mean(&s);
            g.add_scalar(&m, e.f64())
        }
        CharbonnierReduction::PaperLiteralGlobal => {
            let total = g.sum(&r2);
            let s = g.add_scalar(&total, e2);
            g.sqrt(&s)
        }
    }
}

/// `1/(C_j·H_j·W_j)·‖φ(|pred|) − φ(|target|)‖²`, averaged over images.
pub fn perceptual<R: Real, G: Graph<R>>(
    g: &mut G,
    pred: &G::Var,
    target: &G::Var,
    dims: ImageDims,
    fe: &FeatureExtractor,
) -> G::Var {
    let mp = g.magnitude(pred);
    let mt = g.magnitude(target);
    let fp = fe.apply(g, &mp, dims.images, dims.height, dims.width);
    let ft = fe.apply(g, &mt, dims.images, dims.height, dims.width);
    let d = g.sub(&fp, &ft);
    let sq = g.square(&d);
    let s = g.sum(&sq);
    let fd = fe.dims(dims.height, dims.width);
    let norm = (fd.channels * fd.height * fd.width * dims.images) as f64;
    g.scale(&s, 1.0 / norm)
}

/// `ℓ_c + w·ℓ_p`; the perceptual branch is skipped when `w = 0`.
pub fn combined<R: Real, G: Graph<R>>(
    g: &mut G,
    pred: &G::Var,
    target: &G::Var,
    dims: ImageDims,
    cfg: &LossConfig,
    fe: &FeatureExtractor,
) -> LossTerms<G::Var> {
    let c = charbonnier(g, pred, target, cfg);
    if cfg.perceptual_weight == 0.0 {
        return LossTerms {
            total: c.clone(),
            charbonnier: c,
            perceptual: None,
        };
    }
    let p = perceptual(g, pred, target, dims, fe);
    let wp = g.scale(&p, cfg.perceptual_weight);
    let total = g.add(&c, &wp);
    LossTerms {
        charbonnier: c,
        perceptual: Some(p),
        total,
    }
}

fn pair_tensors(pred: &ComplexImageStack, target: &ComplexImageStack) -> Result<(Tensor<f64>, Tensor<f64>, ImageDims)> {
    if !pred.same_shape(target) {
        return Err(ImtError::InvalidInput(format!(
            "loss inputs differ in shape: {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let (s, h, w) = pred.dims();
    let flat = |st: &ComplexImageStack| -> Result<Tensor<f64>> {
        Ok(stacks_to_tensor::<f64>(std::slice::from_ref(st))?.reshaped(vec![s * h * w, 2]))
    };
    Ok((
        flat(pred)?,
        flat(target)?,
        ImageDims {
            images: s,
            height: h,
            width: w,
        },
    ))
}

pub fn charbonnier_value(pred: &ComplexImageStack, target: &ComplexImageStack, cfg: &LossConfig) -> Result<f64> {
    let (p, t, _) = pair_tensors(pred, target)?;
    let mut g = Eager;
    let (p, t) = (g.constant(p), g.constant(t));
    let l = charbonnier::<f64, _>(&mut g, &p, &t, cfg);
    Ok(l.item())
}

pub fn perceptual_value(pred: &ComplexImageStack, target: &ComplexImageStack, fe: &FeatureExtractor) -> Result<f64> {
    let (p, t, dims) = pair_tensors(pred, target)?;
    let mut g = Eager;
    let (p, t) = (g.constant(p), g.constant(t));
    let l = perceptual::<f64, _>(&mut g, &p, &t, dims, fe);
    Ok(l.item())
}

pub fn combined_value(pred: &ComplexImageStack, target: &ComplexImageStack, cfg: &LossConfig, fe: &FeatureExtractor) -> Result<f64> {
    let (p, t, dims) = pair_tensors(pred, target)?;
    let mut g = Eager;
    let (p, t) = (g.constant(p), g.constant(t));
    let l = combined::<f64, _>(&mut g, &p, &t, dims, cfg, fe);
    Ok(l.total.item())
}
