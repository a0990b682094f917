use std::collections::BTreeMap;
use std::path::Path;

use imt_autograd::{Real, Tensor};
use imt_core::{ImtError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Container, StoredTensor};
use crate::config::ModelConfig;

pub const KIND: &str = "imt-net";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight,
    Bias,
    Gamma,
    Beta,
    Position,
    RunningMean,
    RunningVar,
}

impl Role {
    pub fn trainable(self) -> bool {
        !matches!(self, Role::RunningMean | Role::RunningVar)
    }

    /// Decoupled weight decay is applied to projection matrices only.
    pub fn decays(self) -> bool {
        self == Role::Weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub shape: Vec<usize>,
    pub role: Role,
}

pub const UNITS: [&str; 3] = ["t", "l", "g"];
pub const BLOCKS: [&str; 3] = ["stage1", "stage2.high", "stage2.low"];

/// Name → shape/role of every tensor, derived from the config alone.
pub fn param_specs(cfg: &ModelConfig) -> BTreeMap<String, ParamSpec> {
    let c = cfg.channels;
    let mut m = BTreeMap::new();
    let mut add = |name: String, shape: Vec<usize>, role: Role| {
        m.insert(name, ParamSpec { shape, role });
    };
    let linear = |add: &mut dyn FnMut(String, Vec<usize>, Role), name: &str, i: usize, o: usize| {
        add(format!("{name}.w"), vec![i, o], Role::Weight);
        add(format!("{name}.b"), vec![o], Role::Bias);
    };
    linear(&mut add, "embed", cfg.patch_features(), c);
    add("embed.pos".into(), vec![cfg.window * cfg.window, c], Role::Position);
    for block in BLOCKS {
        for cell in 0..cfg.cells_per_block {
            for unit in UNITS {
                let p = format!("{block}.cell{cell}.{unit}");
                add(format!("{p}.bn.gamma"), vec![c], Role::Gamma);
                add(format!("{p}.bn.beta"), vec![c], Role::Beta);
                add(format!("{p}.bn.running_mean"), vec![c], Role::RunningMean);
                add(format!("{p}.bn.running_var"), vec![c], Role::RunningVar);
                linear(&mut add, &format!("{p}.attn.qkv"), c, 3 * c);
                linear(&mut add, &format!("{p}.attn.proj"), c, c);
                linear(&mut add, &format!("{p}.mix.fc1"), c, 2 * c);
                linear(&mut add, &format!("{p}.mix.fc2"), 2 * c, c);
            }
        }
    }
    linear(&mut add, "stage2.down", c, c);
    linear(&mut add, "stage2.up", c, c);
    linear(&mut add, "head", c, cfg.patch_features());
    m
}

pub type Weights<R> = BTreeMap<String, Tensor<R>>;

/// Model tensors in 32-bit storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub config: ModelConfig,
    pub init_seed: u64,
    tensors: BTreeMap<String, Tensor<f32>>,
}

impl ParameterSet {
    /// Fresh parameters. The head starts at zero, so the network begins as
    /// the identity map.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, spec) in param_specs(config) {
            let n: usize = spec.shape.iter().product();
            let data: Vec<f32> = match spec.role {
                Role::Weight if name.starts_with("head.") => vec![0.0; n],
                Role::Weight => {
                    let fan_in = spec.shape[0] as f64;
                    let gain = if name.ends_with("proj.w") || name.ends_with("fc2.w") { 0.5 } else { 1.0 };
                    let a = gain * (3.0 / fan_in).sqrt();
                    (0..n).map(|_| rng.random_range(-a..a) as f32).collect()
                }
                Role::Gamma | Role::RunningVar => vec![1.0; n],
                Role::Bias | Role::Beta | Role::Position | Role::RunningMean => vec![0.0; n],
            };
            tensors.insert(name, Tensor::new(spec.shape, data));
        }
        Ok(Self {
            config: config.clone(),
            init_seed: seed,
            tensors,
        })
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<f32>> {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<f32>> {
        self.tensors.get_mut(name)
    }

    pub fn weights<R: Real>(&self) -> Weights<R> {
        self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
    }

    /// Replaces values from higher-precision weights (names must match).
    pub fn set_from<R: Real>(&mut self, weights: &Weights<R>) {
        for (name, t) in weights {
            if let Some(dst) = self.tensors.get_mut(name) {
                *dst = t.cast();
            }
        }
    }

    pub fn role(&self, name: &str) -> Option<Role> {
        param_specs(&self.config).get(name).map(|s| s.role)
    }

    pub fn trainable_names(&self) -> Vec<String> {
        param_specs(&self.config)
            .into_iter()
            .filter(|(_, s)| s.role.trainable())
            .map(|(n, _)| n)
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable_names().iter().map(|n| self.tensors[n].len()).sum()
    }

    pub fn zero_head(&mut self) {
        for name in ["head.w", "head.b"] {
            if let Some(t) = self.tensors.get_mut(name) {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    pub fn to_container(&self) -> Container {
        let specs = param_specs(&self.config);
        Container {
            kind: KIND.into(),
            config: serde_json::to_value(&self.config).expect("config serializes"),
            init_seed: self.init_seed,
            tensors: self
                .tensors
                .iter()
                .map(|(k, t)| {
                    let trainable = specs.get(k).map(|s| s.role.trainable()).unwrap_or(false);
                    (k.clone(), StoredTensor { tensor: t.clone(), trainable })
                })
                .collect(),
        }
    }

    /// Validates the container against the shapes its own config implies.
    pub fn from_container(c: Container) -> Result<Self> {
        let mismatch = |m: String| Err(ImtError::CheckpointMismatch(m));
        if c.kind != KIND {
            return mismatch(format!("expected a '{KIND}' checkpoint, found '{}'", c.kind));
        }
        let config: ModelConfig = serde_json::from_value(c.config)
            .map_err(|e| ImtError::CheckpointMismatch(format!("model config: {e}")))?;
        config
            .validate()
            .map_err(|e| ImtError::CheckpointMismatch(e.to_string()))?;
        let specs = param_specs(&config);
        for name in c.tensors.keys() {
            if !specs.contains_key(name) {
                return mismatch(format!("unexpected tensor '{name}'"));
            }
        }
        let mut tensors = BTreeMap::new();
        for (name, spec) in specs {
            let Some(stored) = c.tensors.get(&name) else {
                return mismatch(format!("missing tensor '{name}'"));
            };
            if stored.tensor.shape() != spec.shape.as_slice() {
                return mismatch(format!(
                    "tensor '{name}' has shape {:?}, config implies {:?}",
                    stored.tensor.shape(),
                    spec.shape
                ));
            }
            tensors.insert(name, stored.tensor.clone());
        }
        Ok(Self {
            config,
            init_seed: c.init_seed,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::load(path)?)
    }
}
