//! Forward pass, written once against [`Graph`] so the same code records a
//! tape for training and runs eagerly for inference.

use std::collections::BTreeMap;

use imt_autograd::{Eager, Graph, Real, Tensor};
use imt_core::{Complex32, ComplexImageStack, ImtError, Result};

use crate::config::ModelConfig;
use crate::layout::{patch_index, position_index, subsample_index, unpatch_index, Grid, Grouping};
use crate::params::{param_specs, ParameterSet, Weights};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Running statistics; a pure function of input and parameters.
    Eval,
}

/// Graph variables for every model tensor. Trainable tensors become
/// differentiable leaves, running statistics become constants.
#[derive(Debug, Clone)]
pub struct Bound<V> {
    vars: BTreeMap<String, V>,
}

impl<V: Clone> Bound<V> {
    pub fn new<R: Real, G: Graph<R, Var = V>>(g: &mut G, cfg: &ModelConfig, weights: &Weights<R>) -> Self {
        let specs = param_specs(cfg);
        let vars = weights
            .iter()
            .map(|(name, t)| {
                let trainable = specs.get(name).map(|s| s.role.trainable()).unwrap_or(false);
                let v = if trainable { g.param(name, t) } else { g.constant(t.clone()) };
                (name.clone(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> &V {
        self.vars
            .get(name)
            .unwrap_or_else(|| panic!("model tensor '{name}' not bound"))
    }

    pub fn vars(&self) -> &BTreeMap<String, V> {
        &self.vars
    }
}

/// Batch statistics observed by one normalization layer in training mode.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    /// Layer prefix, e.g. `stage1.cell0.t.bn`.
    pub layer: String,
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    pub count: usize,
}

/// Token groupings for the three attention units of a cell.
#[derive(Debug, Clone)]
pub struct CellGroups {
    pub slice: Grouping,
    pub local: Grouping,
    pub global: Grouping,
}

impl CellGroups {
    pub fn new(grid: Grid, window: usize) -> Self {
        Self {
            slice: Grouping::slice(grid),
            local: Grouping::local(grid, window),
            global: Grouping::global(grid, window),
        }
    }
}

/// Layer builders over one graph.
pub struct Layers<'a, R: Real, G: Graph<R>> {
    pub g: &'a mut G,
    pub weights: &'a Weights<R>,
    pub bound: &'a Bound<G::Var>,
    pub cfg: &'a ModelConfig,
    pub mode: Mode,
    pub stats: Vec<BatchStats>,
}

fn column_stats<R: Real>(t: &Tensor<R>) -> (Vec<f64>, Vec<f64>) {
    let cols = t.cols();
    let n = t.rows() as f64;
    let mut mean = vec![0.0; cols];
    for row in t.data().chunks(cols) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v.f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; cols];
    for row in t.data().chunks(cols) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v.f64() - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

impl<'a, R: Real, G: Graph<R>> Layers<'a, R, G> {
    pub fn new(g: &'a mut G, weights: &'a Weights<R>, bound: &'a Bound<G::Var>, cfg: &'a ModelConfig, mode: Mode) -> Self {
        Self {
            g,
            weights,
            bound,
            cfg,
            mode,
            stats: Vec::new(),
        }
    }

    pub fn linear(&mut self, name: &str, x: &G::Var) -> G::Var {
        let w = self.bound.get(&format!("{name}.w"));
        let b = self.bound.get(&format!("{name}.b"));
        self.g.linear(x, w, b)
    }

    /// Per-channel normalization over all tokens, then learned scale and shift.
    pub fn batch_norm(&mut self, prefix: &str, x: &G::Var) -> G::Var {
        let xhat = match self.mode {
            Mode::Train => {
                let (mean, var) = column_stats(self.g.value(x));
                self.stats.push(BatchStats {
                    layer: prefix.to_string(),
                    mean,
                    var,
                    count: self.g.value(x).rows(),
                });
                self.g.batch_norm(x, BN_EPS)
            }
            Mode::Eval => {
                let rm = &self.weights[&format!("{prefix}.running_mean")];
                let rv = &self.weights[&format!("{prefix}.running_var")];
                let scale: Vec<R> = rv.data().iter().map(|v| R::of(1.0 / (v.f64() + BN_EPS).sqrt())).collect();
                let shift: Vec<R> = rm.data().iter().zip(&scale).map(|(&m, &s)| -m * s).collect();
                let n = scale.len();
                let s = self.g.constant(Tensor::new(vec![n], scale));
                let t = self.g.constant(Tensor::new(vec![n], shift));
                let y = self.g.mul_row(x, &s);
                self.g.add_row(&y, &t)
            }
        };
        let gamma = self.bound.get(&format!("{prefix}.gamma"));
        let beta = self.bound.get(&format!("{prefix}.beta"));
        let y = self.g.mul_row(&xhat, gamma);
        self.g.add_row(&y, beta)
    }

    /// Multi-head self-attention within each group of `grouping`; output in
    /// canonical token order.
    pub fn attention(&mut self, prefix: &str, x: &G::Var, grouping: &Grouping) -> G::Var {
        let xg = self.g.gather(x, grouping.perm.clone());
        let qkv = self.linear(&format!("{prefix}.qkv"), &xg);
        let a = self.g.attention(&qkv, self.cfg.heads, grouping.len);
        let o = self.linear(&format!("{prefix}.proj"), &a);
        self.g.gather(&o, grouping.inverse.clone())
    }

    /// Two-layer pointwise channel MLP with 2× expansion.
    pub fn mixer(&mut self, prefix: &str, x: &G::Var) -> G::Var {
        let h = self.linear(&format!("{prefix}.fc1"), x);
        let h = self.g.gelu(&h);
        self.linear(&format!("{prefix}.fc2"), &h)
    }

    /// `y = x + Σ_u mixer_u(attn_u(bn_u(x)))` over slice, local and global units.
    pub fn cell(&mut self, prefix: &str, x: &G::Var, groups: &CellGroups) -> Result<G::Var> {
        let mut acc = x.clone();
        for (unit, grouping) in [("t", &groups.slice), ("l", &groups.local), ("g", &groups.global)] {
            let p = format!("{prefix}.{unit}");
            let h = self.batch_norm(&format!("{p}.bn"), x);
            let a = self.attention(&format!("{p}.attn"), &h, grouping);
            let m = self.mixer(&format!("{p}.mix"), &a);
            acc = self.g.add(&acc, &m);
        }
        if !self.g.value(&acc).is_finite() {
            return Err(ImtError::Numerical(format!("non-finite activations after {prefix}")));
        }
        Ok(acc)
    }

    pub fn block(&mut self, prefix: &str, x: &G::Var, groups: &CellGroups) -> Result<G::Var> {
        let mut y = x.clone();
        for i in 0..self.cfg.cells_per_block {
            y = self.cell(&format!("{prefix}.cell{i}"), &y, groups)?;
        }
        Ok(y)
    }

    /// Patches of the two-channel input projected to `C` channels, plus the
    /// intra-window positional bias.
    pub fn embed(&mut self, input: &G::Var, dims: &InputDims) -> G::Var {
        let p = self.cfg.patch;
        let idx = patch_index(dims.images(), dims.height, dims.width, dims.padded_h, dims.padded_w, p);
        let px = self.g.gather(input, idx);
        let grid = dims.grid(self.cfg);
        let tokens = self.g.reshape(&px, vec![grid.tokens(), self.cfg.patch_features()]);
        let e = self.linear("embed", &tokens);
        let pos = self.g.gather(self.bound.get("embed.pos"), position_index(grid, self.cfg.window));
        self.g.add(&e, &pos)
    }

    /// Two-channel input `[B·T·H·W, 2]` to two-channel output of the same shape.
    pub fn network(&mut self, input: &G::Var, dims: &InputDims) -> Result<G::Var> {
        let grid = dims.grid(self.cfg);
        let x = self.embed(input, dims);
        let full = CellGroups::new(grid, self.cfg.window);
        let half = CellGroups::new(grid.half(), self.cfg.window);

        let x1 = self.block("stage1", &x, &full)?;
        let high = self.block("stage2.high", &x1, &full)?;
        let sub = self.g.gather(&x1, subsample_index(grid));
        let low_in = self.linear("stage2.down", &sub);
        let low = self.block("stage2.low", &low_in, &half)?;
        let low_up = self.linear("stage2.up", &low);
        let h = grid.half();
        let up = self.g.upsample2x(&low_up, h.images(), h.height, h.width);
        let fused = self.g.add(&high, &up);

        let head = self.linear("head", &fused);
        let p = self.cfg.patch;
        let flat = self.g.reshape(&head, vec![grid.tokens() * p * p, 2]);
        let idx = unpatch_index(dims.images(), dims.height, dims.width, dims.padded_h, dims.padded_w, p);
        let residual = self.g.gather(&flat, idx);
        let out = self.g.add(&residual, input);
        if !self.g.value(&out).is_finite() {
            return Err(ImtError::Numerical("non-finite activations after head".into()));
        }
        Ok(out)
    }
}

/// Shape bookkeeping for a `[B, T, H, W, 2]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputDims {
    pub batch: usize,
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    pub padded_h: usize,
    pub padded_w: usize,
}

impl InputDims {
    pub fn new(cfg: &ModelConfig, batch: usize, slices: usize, height: usize, width: usize) -> Result<Self> {
        if batch == 0 || slices == 0 || height == 0 || width == 0 {
            return Err(ImtError::InvalidInput(format!(
                "empty input {batch}×{slices}×{height}×{width}"
            )));
        }
        let (padded_h, padded_w) = (cfg.padded(height), cfg.padded(width));
        let rows = [batch, slices, padded_h, padded_w]
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n < u32::MAX as usize);
        if rows.is_none() {
            return Err(ImtError::InvalidInput(format!(
                "input {batch}×{slices}×{height}×{width} overflows after padding to {padded_h}×{padded_w}"
            )));
        }
        Ok(Self {
            batch,
            slices,
            height,
            width,
            padded_h,
            padded_w,
        })
    }

    pub fn images(&self) -> usize {
        self.batch * self.slices
    }

    pub fn pixels(&self) -> usize {
        self.images() * self.height * self.width
    }

    pub fn grid(&self, cfg: &ModelConfig) -> Grid {
        Grid {
            batch: self.batch,
            slices: self.slices,
            height: self.padded_h / cfg.patch,
            width: self.padded_w / cfg.patch,
        }
    }
}

/// Result of [`forward`].
pub struct Forward<V> {
    /// `[B·T·H·W, 2]`.
    pub output: V,
    pub input: V,
    pub stats: Vec<BatchStats>,
}

/// Runs the network on `input` of shape `[B, T, H, W, 2]`.
pub fn forward<R: Real, G: Graph<R>>(
    g: &mut G,
    cfg: &ModelConfig,
    weights: &Weights<R>,
    bound: &Bound<G::Var>,
    input: &Tensor<R>,
    mode: Mode,
) -> Result<Forward<G::Var>> {
    let shape = input.shape();
    if shape.len() != 5 || shape[4] != 2 {
        return Err(ImtError::InvalidInput(format!("expected [B, T, H, W, 2] input, got {shape:?}")));
    }
    let dims = InputDims::new(cfg, shape[0], shape[1], shape[2], shape[3])?;
    let x = g.constant(input.clone().reshaped(vec![dims.pixels(), 2]));
    let mut layers = Layers::new(g, weights, bound, cfg, mode);
    let output = layers.network(&x, &dims)?;
    let stats = std::mem::take(&mut layers.stats);
    Ok(Forward { output, input: x, stats })
}

/// Packs equally sized stacks as a `[B, T, H, W, 2]` tensor.
pub fn stacks_to_tensor<R: Real>(stacks: &[ComplexImageStack]) -> Result<Tensor<R>> {
    let first = stacks
        .first()
        .ok_or_else(|| ImtError::InvalidInput("empty batch".into()))?;
    let (s, h, w) = first.dims();
    let mut data = Vec::with_capacity(stacks.len() * first.len() * 2);
    for st in stacks {
        if st.dims() != (s, h, w) {
            return Err(ImtError::InvalidInput(format!(
                "batch mixes shapes {:?} and {:?}",
                first.dims(),
                st.dims()
            )));
        }
        for z in st.data() {
            data.push(R::of(z.re as f64));
            data.push(R::of(z.im as f64));
        }
    }
    Ok(Tensor::new(vec![stacks.len(), s, h, w, 2], data))
}

/// Inverse of [`stacks_to_tensor`] for an output with the given dims.
pub fn tensor_to_stacks<R: Real>(t: &Tensor<R>, batch: usize, slices: usize, height: usize, width: usize) -> Result<Vec<ComplexImageStack>> {
    let per = slices * height * width;
    if t.len() != batch * per * 2 {
        return Err(ImtError::InvalidInput(format!(
            "tensor of {} values does not hold {batch}×{slices}×{height}×{width} complex voxels",
            t.len()
        )));
    }
    t.data()
        .chunks(per * 2)
        .map(|c| {
            let data = c
                .chunks(2)
                .map(|p| Complex32::new(p[0].f64() as f32, p[1].f64() as f32))
                .collect();
            ComplexImageStack::new(slices, height, width, data)
        })
        .collect()
}

/// Eval-mode forward of one chunk (no PowerNorm; the caller handles scaling).
pub fn forward_stack(params: &ParameterSet, chunk: &ComplexImageStack) -> Result<ComplexImageStack> {
    let weights = params.weights::<f32>();
    let mut g = Eager;
    let bound = Bound::new(&mut g, &params.config, &weights);
    let input = stacks_to_tensor::<f32>(std::slice::from_ref(chunk))?;
    let fwd = forward(&mut g, &params.config, &weights, &bound, &input, Mode::Eval)?;
    let (s, h, w) = chunk.dims();
    Ok(tensor_to_stacks(Graph::<f32>::value(&g, &fwd.output), 1, s, h, w)?.remove(0))
}

/// Folds training-mode batch statistics into the running estimates.
pub fn update_running_stats(params: &mut ParameterSet, stats: &[BatchStats], momentum: f64) {
    for s in stats {
        let unbiased = if s.count > 1 { s.count as f64 / (s.count - 1) as f64 } else { 1.0 };
        if let Some(rm) = params.get_mut(&format!("{}.running_mean", s.layer)) {
            for (r, m) in rm.data_mut().iter_mut().zip(&s.mean) {
                *r = ((1.0 - momentum) * *r as f64 + momentum * m) as f32;
            }
        }
        if let Some(rv) = params.get_mut(&format!("{}.running_var", s.layer)) {
            for (r, v) in rv.data_mut().iter_mut().zip(&s.var) {
                *r = ((1.0 - momentum) * *r as f64 + momentum * v * unbiased) as f32;
            }
        }
    }
}
