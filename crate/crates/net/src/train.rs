//! Training loop: on-the-fly noisy/clean pair synthesis, augmentation,
//! multi-size patches, combined loss, Sophia, best-checkpoint selection.

use std::path::PathBuf;
use std::time::Instant;

use imt_autograd::{Graph, Tape, Tensor};
use imt_core::kspace::KspaceFilterSpec;
use imt_core::noise::{make_gmap, make_training_pair};
use imt_core::stack::power_normalize;
use imt_core::{ComplexImageStack, GmapModel, ImtError, NoiseSpec, Result};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_pair, AugmentDraws, FilterAugment};
use crate::config::ModelConfig;
use crate::features::FeatureExtractor;
use crate::loss::{combined, ImageDims, LossConfig};
use crate::model::{forward, stacks_to_tensor, update_running_stats, BatchStats, Bound, Mode, BN_MOMENTUM};
use crate::optim::{hutchinson_estimate, Sophia, SophiaConfig};
use crate::params::{ParameterSet, Weights};

pub const TARGET_POWER: f64 = imt_core::stack::DEFAULT_TARGET_POWER;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub rho: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Square patch edges in pixels; one is drawn per step.
    pub patch_sizes: Vec<usize>,
    pub hessian_update_every: usize,
    /// Step `δ` of the gradient difference in the Hessian-vector product.
    pub hessian_fd_step: f64,
    /// Fraction of stacks held out for validation (at least one).
    pub val_fraction: f64,
    pub seed: u64,
    /// Stop early once this many optimizer steps ran.
    pub max_steps: Option<usize>,
    /// Stop early at the end of the first epoch past this wall time.
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.1,
            rho: 0.04,
            epochs: 1,
            batch: 1,
            patch_sizes: vec![32, 64],
            hessian_update_every: 10,
            hessian_fd_step: 1e-3,
            val_fraction: 0.2,
            seed: 0,
            max_steps: None,
            time_budget_secs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ImtError::InvalidInput(m));
        for (name, v) in [
            ("lr", self.lr),
            ("rho", self.rho),
            ("hessian_fd_step", self.hessian_fd_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs == 0 || self.batch == 0 || self.hessian_update_every == 0 {
            return bad("epochs, batch and hessian_update_every must be positive".into());
        }
        if self.patch_sizes.is_empty() || self.patch_sizes.iter().any(|&p| p < 4) {
            return bad(format!("patch sizes must be at least 4, got {:?}", self.patch_sizes));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    pub fn sophia(&self) -> SophiaConfig {
        SophiaConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            rho: self.rho,
        }
    }
}

/// Noise drawn for each training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Radial g-factor ramps `1 + alpha·r` with `alpha ~ U[0, gmap_alpha_max]`.
    pub gmap_alpha_max: f64,
    /// Random k-space filtering of training noise; `null` keeps it white.
    pub filter_augment: Option<FilterAugment>,
    /// Noise level of the validation pairs (white noise, uniform g-factor).
    pub val_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_min: 1.0,
            sigma_max: 10.0,
            gmap_alpha_max: 1.0,
            filter_augment: Some(FilterAugment::default()),
            val_sigma: 4.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max.is_finite()) {
            return Err(ImtError::InvalidInput(format!(
                "noise range [{}, {}] is invalid",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.gmap_alpha_max >= 0.0 && self.gmap_alpha_max.is_finite()) {
            return Err(ImtError::InvalidInput(format!("gmap_alpha_max must be >= 0, got {}", self.gmap_alpha_max)));
        }
        if !(self.val_sigma > 0.0 && self.val_sigma.is_finite()) {
            return Err(ImtError::InvalidInput(format!("val_sigma must be positive, got {}", self.val_sigma)));
        }
        self.filter_augment.as_ref().map_or(Ok(()), FilterAugment::validate)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

/// Receives log rows and every new best checkpoint as training runs.
pub trait TrainSink {
    fn log(&mut self, row: &LogRow) -> Result<()>;
    fn best(&mut self, params: &ParameterSet, row: &LogRow) -> Result<()>;
}

/// Keeps rows in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub rows: Vec<LogRow>,
    pub best_updates: usize,
}

impl TrainSink for MemorySink {
    fn log(&mut self, row: &LogRow) -> Result<()> {
        self.rows.push(row.clone());
        Ok(())
    }

    fn best(&mut self, _params: &ParameterSet, _row: &LogRow) -> Result<()> {
        self.best_updates += 1;
        Ok(())
    }
}

/// Writes the CSV log and the best checkpoint after every improvement.
pub struct FileSink {
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
    rows: Vec<LogRow>,
}

impl FileSink {
    pub fn new(log_path: impl Into<PathBuf>, checkpoint_path: impl Into<PathBuf>) -> Self {
        Self {
            log_path: log_path.into(),
            checkpoint_path: checkpoint_path.into(),
            rows: Vec::new(),
        }
    }
}

pub fn encode_log(rows: &[LogRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| ImtError::InvalidState(format!("training log: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| ImtError::InvalidState(format!("training log: {e}")))
}

impl TrainSink for FileSink {
    fn log(&mut self, row: &LogRow) -> Result<()> {
        self.rows.push(row.clone());
        imt_core::io::write_atomic(&self.log_path, &encode_log(&self.rows)?)
    }

    fn best(&mut self, params: &ParameterSet, _row: &LogRow) -> Result<()> {
        params.save(&self.checkpoint_path)
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub best: ParameterSet,
    pub last: ParameterSet,
    pub best_val_loss: f64,
    /// Validation loss of the identity map (the freshly initialized net).
    pub identity_val_loss: f64,
    pub steps: usize,
    pub rows: Vec<LogRow>,
}

/// Normalized network input and its matching target.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: ComplexImageStack,
    pub target: ComplexImageStack,
}

/// PowerNorm scaled from the noisy input; the same factor scales the target.
pub fn normalize_pair(noisy: &ComplexImageStack, clean: &ComplexImageStack) -> Result<Sample> {
    let (input, state) = power_normalize(noisy, TARGET_POWER)?;
    let target = clean.scaled(state.k)?;
    Ok(Sample { input, target })
}

fn stream_rng(seed: u64, domain: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

fn random_gmap(noise: &NoiseConfig, rng: &mut impl Rng, h: usize, w: usize) -> Result<imt_core::GFactorMap> {
    let alpha = if noise.gmap_alpha_max > 0.0 {
        rng.random_range(0.0..=noise.gmap_alpha_max)
    } else {
        0.0
    };
    make_gmap(&GmapModel::RadialRamp { alpha }, h, w)
}

/// One augmented, cropped, normalized training sample drawn from `clean`.
pub fn draw_sample(
    clean: &ComplexImageStack,
    depth: usize,
    patch: usize,
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<Sample> {
    let start = rng.random_range(0..=clean.slices() - depth);
    let chunk = clean.sub_stack(start, depth)?;
    let (h, w) = (chunk.height(), chunk.width());
    let sigma = rng.random_range(noise.sigma_min..=noise.sigma_max);
    let gmap = random_gmap(noise, rng, h, w)?;
    let filter = match &noise.filter_augment {
        Some(f) => f.sample(rng),
        None => KspaceFilterSpec::all_pass(),
    };
    let spec = NoiseSpec {
        sigma,
        filter,
        seed: rng.next_u64(),
    };
    let (noisy, clean) = make_training_pair(&chunk, &spec, &gmap)?;
    let draws = AugmentDraws::sample(rng);
    let (clean, noisy) = augment_pair(&clean, &noisy, &draws, patch)?;
    let r0 = rng.random_range(0..=clean.height() - patch);
    let c0 = rng.random_range(0..=clean.width() - patch);
    let clean = clean.crop(r0, c0, patch, patch)?;
    let noisy = noisy.crop(r0, c0, patch, patch)?;
    normalize_pair(&noisy, &clean)
}

/// Fixed validation pair for one held-out stack: the first `depth` slices
/// at `val_sigma` with a uniform g-factor.
pub fn validation_sample(clean: &ComplexImageStack, depth: usize, noise: &NoiseConfig, seed: u64) -> Result<Sample> {
    let chunk = clean.sub_stack(0, depth)?;
    let gmap = make_gmap(&GmapModel::Uniform, chunk.height(), chunk.width())?;
    let spec = NoiseSpec::new(noise.val_sigma, seed);
    let (noisy, clean) = make_training_pair(&chunk, &spec, &gmap)?;
    normalize_pair(&noisy, &clean)
}

/// Everything needed to evaluate the loss of a batch.
pub struct Objective<'a> {
    pub model: &'a ModelConfig,
    pub loss: &'a LossConfig,
    pub features: &'a FeatureExtractor,
}

pub struct StepOutput {
    pub loss: f64,
    pub grads: Weights<f32>,
    pub stats: Vec<BatchStats>,
}

fn batch_tensors(samples: &[Sample]) -> Result<(Tensor<f32>, Tensor<f32>, ImageDims)> {
    let inputs: Vec<_> = samples.iter().map(|s| s.input.clone()).collect();
    let targets: Vec<_> = samples.iter().map(|s| s.target.clone()).collect();
    let x = stacks_to_tensor::<f32>(&inputs)?;
    let (s, h, w) = samples[0].input.dims();
    let rows = samples.len() * s * h * w;
    let y = stacks_to_tensor::<f32>(&targets)?.reshaped(vec![rows, 2]);
    Ok((
        x,
        y,
        ImageDims {
            images: samples.len() * s,
            height: h,
            width: w,
        },
    ))
}

impl Objective<'_> {
    /// Train-mode loss and gradients of the trainable tensors.
    pub fn loss_and_grads(&self, trainable: &Weights<f32>, frozen: &Weights<f32>, samples: &[Sample]) -> Result<StepOutput> {
        let (x, y, dims) = batch_tensors(samples)?;
        let mut all = frozen.clone();
        all.extend(trainable.iter().map(|(k, v)| (k.clone(), v.clone())));
        let mut g = Tape::<f32>::new();
        let bound = Bound::new(&mut g, self.model, &all);
        let fwd = forward(&mut g, self.model, &all, &bound, &x, Mode::Train)?;
        let target = g.constant(y);
        let terms = combined(&mut g, &fwd.output, &target, dims, self.loss, self.features);
        let loss = g.value(&terms.total).item() as f64;
        if !loss.is_finite() {
            return Err(ImtError::Diverged(format!("loss is {loss}")));
        }
        let grads = g.backward(terms.total).map_err(|e| ImtError::Diverged(e.to_string()))?;
        let grads = trainable
            .keys()
            .map(|k| (k.clone(), grads.get_or_zeros(&g, *bound.get(k))))
            .collect();
        Ok(StepOutput {
            loss,
            grads,
            stats: fwd.stats,
        })
    }

    /// Eval-mode loss of one sample, in 32-bit like inference.
    pub fn eval_loss(&self, weights: &Weights<f32>, sample: &Sample) -> Result<f64> {
        let (x, y, dims) = batch_tensors(std::slice::from_ref(sample))?;
        let mut g = imt_autograd::Eager;
        let bound = Bound::new(&mut g, self.model, weights);
        let fwd = forward(&mut g, self.model, weights, &bound, &x, Mode::Eval)?;
        let target = g.constant(y);
        let terms = combined(&mut g, &fwd.output, &target, dims, self.loss, self.features);
        Ok(terms.total.item() as f64)
    }

    /// Loss of the identity map (input returned unchanged).
    pub fn identity_loss(&self, sample: &Sample) -> Result<f64> {
        let (x, y, dims) = batch_tensors(std::slice::from_ref(sample))?;
        let rows = y.rows();
        let mut g = imt_autograd::Eager;
        let xv = g.constant(x.reshaped(vec![rows, 2]));
        let target = g.constant(y);
        let terms = combined(&mut g, &xv, &target, dims, self.loss, self.features);
        Ok(terms.total.item() as f64)
    }
}

/// Numerical failures inside the loop mean the run diverged.
fn diverged(e: ImtError) -> ImtError {
    match e {
        ImtError::Numerical(m) => ImtError::Diverged(m),
        e => e,
    }
}

fn mean_or_nan(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trains from `init` on `stacks`; the last `ceil(val_fraction·n)` stacks
/// (at least one) are held out for validation.
#[allow(clippy::too_many_arguments)]
pub fn train(
    stacks: &[ComplexImageStack],
    init: ParameterSet,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    noise: &NoiseConfig,
    features: &FeatureExtractor,
    sink: &mut dyn TrainSink,
) -> Result<TrainReport> {
    train_cfg.validate()?;
    loss_cfg.validate()?;
    noise.validate()?;
    let model = init.config.clone();
    let depth = model.slice_depth;
    if stacks.len() < 2 {
        return Err(ImtError::InvalidInput(format!("need at least 2 stacks to split train/val, got {}", stacks.len())));
    }
    if let Some(s) = stacks.iter().find(|s| s.slices() < depth) {
        return Err(ImtError::InvalidInput(format!(
            "stack with {} slices is shallower than slice_depth {depth}",
            s.slices()
        )));
    }
    let n_val = ((stacks.len() as f64 * train_cfg.val_fraction).ceil() as usize).clamp(1, stacks.len() - 1);
    let (train_set, val_set) = stacks.split_at(stacks.len() - n_val);
    let min_edge = train_set
        .iter()
        .map(|s| s.height().min(s.width()))
        .min()
        .expect("non-empty");
    let patch_sizes: Vec<usize> = train_cfg.patch_sizes.iter().map(|&p| p.min(min_edge)).collect();

    let objective = Objective {
        model: &model,
        loss: loss_cfg,
        features,
    };
    let val_samples = val_set
        .iter()
        .enumerate()
        .map(|(i, s)| validation_sample(s, depth, noise, stream_rng(train_cfg.seed, 1, i as u64).next_u64()))
        .collect::<Result<Vec<_>>>()?;
    let identity_val_loss = mean_or_nan(
        &val_samples
            .iter()
            .map(|s| objective.identity_loss(s))
            .collect::<Result<Vec<_>>>()?,
    );
    log::info!("identity validation loss {identity_val_loss:.6}");

    let trainable_names = init.trainable_names();
    let all = init.weights::<f32>();
    let (mut trainable, mut frozen): (Weights<f32>, Weights<f32>) =
        all.into_iter().partition(|(k, _)| trainable_names.contains(k));
    let mut current = init.clone();
    let mut best = init.clone();
    let mut best_val = f64::INFINITY;
    let mut sophia = Sophia::new(train_cfg.sophia());
    let mut rows = Vec::new();
    let start = Instant::now();
    let mut step = 0usize;
    let decays = |name: &str| init.role(name).is_some_and(|r| r.decays());

    'epochs: for epoch in 0..train_cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut stream_rng(train_cfg.seed, 2, epoch as u64));
        let mut losses = Vec::new();
        for batch in order.chunks(train_cfg.batch) {
            if train_cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let mut step_rng = stream_rng(train_cfg.seed, 3, step as u64);
            let patch = *patch_sizes.choose(&mut step_rng).expect("non-empty");
            let samples = batch
                .iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut rng = stream_rng(train_cfg.seed, 4, ((step as u64) << 16) | j as u64);
                    draw_sample(&train_set[i], depth, patch, noise, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let out = objective.loss_and_grads(&trainable, &frozen, &samples).map_err(diverged)?;
            let hessian = if step % train_cfg.hessian_update_every == 0 {
                let mut rng = stream_rng(train_cfg.seed, 5, step as u64);
                let est = hutchinson_estimate(
                    &trainable,
                    |p| objective.loss_and_grads(p, &frozen, &samples).map(|o| o.grads),
                    train_cfg.hessian_fd_step,
                    &mut rng,
                )
                .map_err(diverged)?;
                Some(est)
            } else {
                None
            };
            sophia
                .step(&mut trainable, &out.grads, hessian.as_ref(), decays)
                .map_err(|e| ImtError::Diverged(e.to_string()))?;
            current.set_from(&trainable);
            update_running_stats(&mut current, &out.stats, BN_MOMENTUM);
            for (k, v) in frozen.iter_mut() {
                *v = current.get(k).expect("frozen tensor").clone();
            }
            losses.push(out.loss);
            step += 1;
        }
        let val_loss = mean_or_nan(
            &val_samples
                .iter()
                .map(|s| objective.eval_loss(&current.weights::<f32>(), s))
                .collect::<Result<Vec<_>>>()
                .map_err(diverged)?,
        );
        let row = LogRow {
            step,
            epoch,
            train_loss: mean_or_nan(&losses),
            val_loss,
            lr: train_cfg.lr,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch} step {step} train {:.6} val {:.6}",
            row.train_loss,
            row.val_loss
        );
        sink.log(&row)?;
        if !val_loss.is_finite() {
            return Err(ImtError::Diverged(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        if val_loss < best_val {
            best_val = val_loss;
            best = current.clone();
            sink.best(&best, &row)?;
        }
        rows.push(row);
        let out_of_time = train_cfg
            .time_budget_secs
            .is_some_and(|b| start.elapsed().as_secs_f64() >= b);
        if out_of_time || train_cfg.max_steps.is_some_and(|m| step >= m) {
            break 'epochs;
        }
    }
    Ok(TrainReport {
        best,
        last: current,
        best_val_loss: best_val,
        identity_val_loss,
        steps: step,
        rows,
    })
}
