//! g-factor weighted noise synthesis and clean/noisy pair generation.
//!
//! Noise for slice `i` is drawn from ChaCha20 seeded with `NoiseSpec::seed`
//! on stream `i`, so slices can be generated in any order or in parallel
//! and still agree bit for bit.

use std::path::PathBuf;

use num_complex::Complex32;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ImtError, Result};
use crate::kspace::{filter_with, Fft2, KspaceFilterSpec};
use crate::stack::{mean_signal_power, ComplexImageStack, GFactorMap, DEFAULT_TARGET_POWER};

/// Noise level range used for training.
pub const SIGMA_RANGE: (f64, f64) = (1.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-component std of the base complex Gaussian at mean power 1600.
    pub sigma: f64,
    #[serde(default)]
    pub filter: KspaceFilterSpec,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            filter: KspaceFilterSpec::all_pass(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(ImtError::invalid(format!("sigma {} must be finite and >= 0", self.sigma)));
        }
        if !(SIGMA_RANGE.0..=SIGMA_RANGE.1).contains(&self.sigma) {
            log::warn!(
                "sigma {} is outside the training range [{}, {}]",
                self.sigma,
                SIGMA_RANGE.0,
                SIGMA_RANGE.1
            );
        }
        self.filter.validate()
    }
}

/// Synthetic g-factor map models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GmapModel {
    Uniform,
    /// `1 + alpha·r`, `r` the distance from the center over the half-diagonal.
    RadialRamp { alpha: f64 },
    File { path: PathBuf },
}

pub fn make_gmap(model: &GmapModel, height: usize, width: usize) -> Result<GFactorMap> {
    match model {
        GmapModel::Uniform => GFactorMap::uniform(height, width),
        GmapModel::RadialRamp { alpha } => {
            if !(*alpha >= 0.0 && alpha.is_finite()) {
                return Err(ImtError::invalid(format!("ramp alpha {alpha} must be >= 0")));
            }
            let cy = (height as f64 - 1.0) / 2.0;
            let cx = (width as f64 - 1.0) / 2.0;
            let half_diag = cy.hypot(cx);
            let values = (0..height)
                .flat_map(|r| {
                    (0..width).map(move |c| {
                        let radius = if half_diag > 0.0 {
                            ((r as f64 - cy).hypot(c as f64 - cx) / half_diag).min(1.0)
                        } else {
                            0.0
                        };
                        (1.0 + alpha * radius) as f32
                    })
                })
                .collect();
            GFactorMap::new(height, width, values)
        }
        GmapModel::File { path } => {
            let gmap = crate::io::load_gmap(path)?;
            if (gmap.height(), gmap.width()) != (height, width) {
                return Err(ImtError::invalid(format!(
                    "g-factor file {} is {}x{}, expected {height}x{width}",
                    path.display(),
                    gmap.height(),
                    gmap.width()
                )));
            }
            Ok(gmap)
        }
    }
}

/// Generator for slice `index` of a stack synthesized with `seed`.
pub fn slice_rng(seed: u64, index: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Complex Gaussian noise, k-space filtered, renormalized to `sigma` and
/// weighted by the g-factor map.
pub fn synth_noise(
    slices: usize,
    height: usize,
    width: usize,
    spec: &NoiseSpec,
    gmap: &GFactorMap,
) -> Result<ComplexImageStack> {
    spec.validate()?;
    if (gmap.height(), gmap.width()) != (height, width) {
        return Err(ImtError::invalid(format!(
            "g-factor map {}x{} does not match {height}x{width}",
            gmap.height(),
            gmap.width()
        )));
    }
    let filter = if spec.filter.is_all_pass() {
        None
    } else {
        let mask = spec.filter.mask(height, width)?;
        // white noise through a real mask keeps variance sigma²·mean(mask²)
        let gain = (mask.iter().map(|m| m * m).sum::<f64>() / mask.len() as f64).sqrt();
        if gain == 0.0 {
            return Err(ImtError::invalid("k-space filter removes every coefficient"));
        }
        Some((Fft2::new(height, width), mask, 1.0 / gain))
    };
    let sigma = spec.sigma;
    let noise: Vec<Vec<Complex32>> = (0..slices)
        .into_par_iter()
        .map(|index| {
            let mut rng = slice_rng(spec.seed, index);
            let mut slice: Vec<Complex32> = (0..height * width)
                .map(|_| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex32::new((re * sigma) as f32, (im * sigma) as f32)
                })
                .collect();
            if let Some((plan, mask, renorm)) = &filter {
                slice = filter_with(plan, mask, &slice);
                for z in slice.iter_mut() {
                    *z *= *renorm as f32;
                }
            }
            for (z, g) in slice.iter_mut().zip(gmap.values()) {
                *z *= *g;
            }
            slice
        })
        .collect();
    ComplexImageStack::from_slices(height, width, noise)
}

/// Adds noise drawn at the normalized power scale: `noisy = clean + noise/k`.
pub fn make_training_pair(
    clean: &ComplexImageStack,
    spec: &NoiseSpec,
    gmap: &GFactorMap,
) -> Result<(ComplexImageStack, ComplexImageStack)> {
    let power = mean_signal_power(clean)?;
    if power <= 0.0 {
        return Err(ImtError::Degenerate(
            "clean stack has zero power; PowerNorm is undefined".into(),
        ));
    }
    let k = (DEFAULT_TARGET_POWER / power).sqrt();
    let (s, h, w) = clean.dims();
    let noise = synth_noise(s, h, w, spec, gmap)?;
    let inv_k = 1.0 / k;
    let noisy = clean.zip_map(&noise, |x, n| {
        Complex32::new(
            (x.re as f64 + n.re as f64 * inv_k) as f32,
            (x.im as f64 + n.im as f64 * inv_k) as f32,
        )
    })?;
    Ok((noisy, clean.clone()))
}

/// `20·log10(√1600 / sigma)`.
pub fn relative_snr_db(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(ImtError::invalid(format!("sigma {sigma} must be positive")));
    }
    Ok(20.0 * (DEFAULT_TARGET_POWER.sqrt() / sigma).log10())
}
