//! Fixed convolutional feature map used by the perceptual loss.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use imt_autograd::{Graph, Real, Tensor, ZERO_ROW};
use imt_core::{ImtError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Container, StoredTensor};

pub const KIND: &str = "feature-extractor";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    FixedRandom,
    ExternalWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerShapes {
    channels: Vec<usize>,
    strides: Vec<usize>,
}

/// One 3×3 convolution, zero padded by one pixel. `w` is `[9·cin, cout]`
/// with rows ordered `(ky, kx, cin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub w: Tensor<f32>,
    pub b: Tensor<f32>,
    pub stride: usize,
}

impl ConvLayer {
    pub fn in_channels(&self) -> usize {
        self.w.shape()[0] / 9
    }

    pub fn out_channels(&self) -> usize {
        self.w.shape()[1]
    }
}

/// Output side length of a 3×3, pad-1 convolution.
pub fn conv_out(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

/// im2col rows for a 3×3 pad-1 convolution over `images` maps of `h×w`.
pub fn im2col_index(images: usize, h: usize, w: usize, stride: usize) -> Arc<[u32]> {
    let (ho, wo) = (conv_out(h, stride), conv_out(w, stride));
    let mut idx = Vec::with_capacity(images * ho * wo * 9);
    for img in 0..images {
        for oy in 0..ho {
            for ox in 0..wo {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        let ix = (ox * stride + kx) as isize - 1;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            idx.push(ZERO_ROW);
                        } else {
                            idx.push(((img * h + iy as usize) * w + ix as usize) as u32);
                        }
                    }
                }
            }
        }
    }
    idx.into()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub kind: FeatureKind,
    pub seed: u64,
    pub layers: Vec<ConvLayer>,
}

/// Feature-map dims `(C_j, H_j, W_j)` of the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FeatureExtractor {
    pub const CHANNELS: [usize; 5] = [1, 16, 16, 32, 32];
    pub const STRIDES: [usize; 4] = [1, 2, 1, 2];

    /// Four random 3×3 layers with GELU between them.
    pub fn fixed_random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = Self::STRIDES
            .iter()
            .enumerate()
            .map(|(i, &stride)| {
                let (cin, cout) = (Self::CHANNELS[i], Self::CHANNELS[i + 1]);
                let a = (6.0 / (9 * cin) as f64).sqrt();
                let w = (0..9 * cin * cout).map(|_| rng.random_range(-a..a) as f32).collect();
                let b = (0..cout).map(|_| rng.random_range(-0.1..0.1) as f32).collect();
                ConvLayer {
                    w: Tensor::new(vec![9 * cin, cout], w),
                    b: Tensor::new(vec![cout], b),
                    stride,
                }
            })
            .collect();
        Self {
            kind: FeatureKind::FixedRandom,
            seed,
            layers,
        }
    }

    pub fn dims(&self, height: usize, width: usize) -> FeatureDims {
        let (mut h, mut w) = (height, width);
        for l in &self.layers {
            h = conv_out(h, l.stride);
            w = conv_out(w, l.stride);
        }
        FeatureDims {
            channels: self.layers.last().map_or(1, |l| l.out_channels()),
            height: h,
            width: w,
        }
    }

    /// Features of `images` magnitude maps given as `[images·h·w]` (or
    /// `[images·h·w, 1]`); returns `[images·H_j·W_j, C_j]`.
    pub fn apply<R: Real, G: Graph<R>>(&self, g: &mut G, magnitude: &G::Var, images: usize, height: usize, width: usize) -> G::Var {
        let mut x = g.reshape(magnitude, vec![images * height * width, 1]);
        let (mut h, mut w) = (height, width);
        for (i, l) in self.layers.iter().enumerate() {
            let (ho, wo) = (conv_out(h, l.stride), conv_out(w, l.stride));
            let cols = g.gather(&x, im2col_index(images, h, w, l.stride));
            let cols = g.reshape(&cols, vec![images * ho * wo, 9 * l.in_channels()]);
            let wv = g.constant(l.w.cast());
            let bv = g.constant(l.b.cast());
            x = g.linear(&cols, &wv, &bv);
            if i + 1 < self.layers.len() {
                x = g.gelu(&x);
            }
            (h, w) = (ho, wo);
        }
        x
    }

    pub fn to_container(&self) -> Container {
        let shapes = LayerShapes {
            channels: std::iter::once(self.layers.first().map_or(1, |l| l.in_channels()))
                .chain(self.layers.iter().map(|l| l.out_channels()))
                .collect(),
            strides: self.layers.iter().map(|l| l.stride).collect(),
        };
        let mut tensors = BTreeMap::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (suffix, t) in [("w", &l.w), ("b", &l.b)] {
                tensors.insert(
                    format!("conv{i}.{suffix}"),
                    StoredTensor {
                        tensor: t.clone(),
                        trainable: false,
                    },
                );
            }
        }
        Container {
            kind: KIND.into(),
            config: serde_json::to_value(shapes).expect("shapes serialize"),
            init_seed: self.seed,
            tensors,
        }
    }

    /// Loads external weights; the container must describe a 1-channel input.
    pub fn from_container(c: Container) -> Result<Self> {
        let mismatch = |m: String| ImtError::CheckpointMismatch(m);
        if c.kind != KIND {
            return Err(mismatch(format!("expected a '{KIND}' file, found '{}'", c.kind)));
        }
        let shapes: LayerShapes =
            serde_json::from_value(c.config).map_err(|e| mismatch(format!("feature config: {e}")))?;
        if shapes.channels.len() != shapes.strides.len() + 1 || shapes.channels.first() != Some(&1) {
            return Err(mismatch(format!("feature layers {:?} must start from one channel", shapes.channels)));
        }
        if shapes.strides.iter().any(|&s| s == 0) || shapes.channels.iter().any(|&ch| ch == 0) {
            return Err(mismatch("feature layer sizes must be positive".into()));
        }
        if c.tensors.len() != 2 * shapes.strides.len() {
            return Err(mismatch(format!(
                "expected {} feature tensors, found {}",
                2 * shapes.strides.len(),
                c.tensors.len()
            )));
        }
        let mut layers = Vec::new();
        for (i, &stride) in shapes.strides.iter().enumerate() {
            let (cin, cout) = (shapes.channels[i], shapes.channels[i + 1]);
            let take = |suffix: &str, shape: Vec<usize>| -> Result<Tensor<f32>> {
                let name = format!("conv{i}.{suffix}");
                let t = c
                    .tensors
                    .get(&name)
                    .ok_or_else(|| mismatch(format!("missing tensor '{name}'")))?;
                if t.tensor.shape() != shape.as_slice() {
                    return Err(mismatch(format!("tensor '{name}' has shape {:?}, expected {shape:?}", t.tensor.shape())));
                }
                Ok(t.tensor.clone())
            };
            layers.push(ConvLayer {
                w: take("w", vec![9 * cin, cout])?,
                b: take("b", vec![cout])?,
                stride,
            });
        }
        Ok(Self {
            kind: FeatureKind::ExternalWeights,
            seed: c.init_seed,
            layers,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }
}
