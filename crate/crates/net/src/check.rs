//! Finite-difference verification of the full model and loss in 64-bit.

use imt_autograd::{finite_difference_check, sample_coords, Eager, Graph, Tape, Tensor};
use imt_core::noise::{make_gmap, make_training_pair};
use imt_core::phantom::phantom;
use imt_core::{GmapModel, ImtError, NoiseSpec, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::features::FeatureExtractor;
use crate::loss::{combined, ImageDims, LossConfig};
use crate::model::{forward, stacks_to_tensor, Bound, Mode};
use crate::params::{ParameterSet, Weights};
use crate::train::normalize_pair;

/// A model, a batch and a loss whose parameter gradient can be checked.
pub struct GradientProblem {
    pub config: ModelConfig,
    pub params: ParameterSet,
    pub input: Tensor<f64>,
    pub target: Tensor<f64>,
    pub dims: ImageDims,
    pub loss: LossConfig,
    pub features: FeatureExtractor,
    pub mode: Mode,
}

impl GradientProblem {
    /// One phantom of `slices×size×size` at σ = 4 with every trainable
    /// tensor (the head included) randomized so no gradient is trivially zero.
    pub fn phantom(config: ModelConfig, slices: usize, size: usize, seed: u64) -> Result<Self> {
        let mut params = ParameterSet::init(&config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
        for name in params.trainable_names() {
            let t = params.get_mut(&name).expect("trainable tensor");
            let jitter = if name.ends_with(".w") { 0.0 } else { 0.2 };
            for v in t.data_mut() {
                *v = if name.starts_with("head.") {
                    rng.random_range(-0.2..0.2)
                } else {
                    *v + rng.random_range(-jitter..=jitter) as f32
                };
            }
        }
        let clean = phantom(slices, size, size, seed, 0)?;
        let gmap = make_gmap(&GmapModel::Uniform, size, size)?;
        let (noisy, clean) = make_training_pair(&clean, &NoiseSpec::new(4.0, seed), &gmap)?;
        let sample = normalize_pair(&noisy, &clean)?;
        let input = stacks_to_tensor::<f64>(std::slice::from_ref(&sample.input))?;
        let rows = slices * size * size;
        let target = stacks_to_tensor::<f64>(std::slice::from_ref(&sample.target))?.reshaped(vec![rows, 2]);
        Ok(Self {
            config,
            params,
            input,
            target,
            dims: ImageDims {
                images: slices,
                height: size,
                width: size,
            },
            loss: LossConfig::default(),
            features: FeatureExtractor::fixed_random(seed),
            mode: Mode::Train,
        })
    }

    fn trainable(&self) -> Vec<String> {
        self.params.trainable_names()
    }

    /// Trainable values concatenated in name order.
    pub fn point(&self) -> Vec<f64> {
        let w = self.params.weights::<f64>();
        self.trainable().iter().flat_map(|n| w[n].data().to_vec()).collect()
    }

    fn weights_at(&self, point: &[f64]) -> Weights<f64> {
        let mut w = self.params.weights::<f64>();
        let mut offset = 0;
        for n in self.trainable() {
            let t = w.get_mut(&n).expect("trainable tensor");
            let len = t.len();
            t.data_mut().copy_from_slice(&point[offset..offset + len]);
            offset += len;
        }
        w
    }

    fn loss_on<G: Graph<f64>>(&self, g: &mut G, w: &Weights<f64>) -> Result<G::Var> {
        let bound = Bound::new(g, &self.config, w);
        let out = forward(g, &self.config, w, &bound, &self.input, self.mode)?;
        let target = g.constant(self.target.clone());
        Ok(combined(g, &out.output, &target, self.dims, &self.loss, &self.features).total)
    }

    pub fn value(&self, point: &[f64]) -> Result<f64> {
        let mut g = Eager;
        Ok(self.loss_on(&mut g, &self.weights_at(point))?.item())
    }

    /// Reverse-mode gradient in the layout of [`Self::point`].
    pub fn gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        let w = self.weights_at(point);
        let mut tape = Tape::<f64>::new();
        let loss = self.loss_on(&mut tape, &w)?;
        let grads = tape
            .backward(loss)
            .map_err(|e| ImtError::Numerical(e.to_string()))?;
        let ids: Vec<_> = tape.params().map(|(n, id)| (n.to_string(), id)).collect();
        let mut out = Vec::with_capacity(point.len());
        for n in self.trainable() {
            let id = ids
                .iter()
                .find(|(k, _)| *k == n)
                .map(|(_, id)| *id)
                .expect("bound parameter");
            out.extend_from_slice(grads.get_or_zeros(&tape, id).data());
        }
        Ok(out)
    }

    /// Max relative error of the analytic gradient against central
    /// differences over `samples` random coordinates.
    pub fn max_relative_error(&self, samples: usize, h: f64, seed: u64) -> Result<f64> {
        let point = self.point();
        let analytic = self.gradient(&point)?;
        let coords = sample_coords(point.len(), samples, seed);
        let mut failure = None;
        let err = finite_difference_check(
            |x| match self.value(x) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            &point,
            &analytic,
            &coords,
            h,
        );
        match failure {
            Some(e) => Err(e),
            None => Ok(err),
        }
    }
}
