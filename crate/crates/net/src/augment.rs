//! Paired augmentation (flips, intensity scaling, k-space resizing) and
//! random k-space filters for the synthesized noise.

use imt_core::kspace::{resize_to, KspaceFilterSpec, PhaseAxis};
use imt_core::{Complex32, ComplexImageStack, ImtError, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const INTENSITY_RANGE: (f64, f64) = (0.3, 3.0);
pub const RESIZE_RANGE: (f64, f64) = (0.5, 1.5);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraws {
    pub flip_h: bool,
    pub flip_v: bool,
    pub intensity: f64,
    pub resize_ratio: f64,
}

impl AugmentDraws {
    pub fn identity() -> Self {
        Self {
            flip_h: false,
            flip_v: false,
            intensity: 1.0,
            resize_ratio: 1.0,
        }
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            flip_h: rng.random_bool(0.5),
            flip_v: rng.random_bool(0.5),
            intensity: rng.random_range(INTENSITY_RANGE.0..=INTENSITY_RANGE.1),
            resize_ratio: rng.random_range(RESIZE_RANGE.0..=RESIZE_RANGE.1),
        }
    }
}

/// Ranges of the k-space filters applied to training noise. Each filter is
/// switched on independently with `probability`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterAugment {
    pub probability: f64,
    pub keep: (f64, f64),
    pub partial_fourier: (f64, f64),
    pub gaussian_width: (f64, f64),
}

impl Default for FilterAugment {
    fn default() -> Self {
        Self {
            probability: 0.5,
            keep: (0.6, 1.0),
            partial_fourier: (0.75, 1.0),
            gaussian_width: (0.25, 1.0),
        }
    }
}

impl FilterAugment {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(ImtError::invalid(format!("filter probability {} outside [0, 1]", self.probability)));
        }
        for (name, (lo, hi)) in [
            ("keep", self.keep),
            ("partial_fourier", self.partial_fourier),
            ("gaussian_width", self.gaussian_width),
        ] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(ImtError::invalid(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        // both ends must be valid filters
        for pick in [|r: (f64, f64)| r.0, |r: (f64, f64)| r.1] {
            KspaceFilterSpec {
                resolution_reduction_keep: pick(self.keep),
                partial_fourier_fraction: pick(self.partial_fourier),
                gaussian_width_phase: Some(pick(self.gaussian_width)),
                gaussian_width_read: Some(pick(self.gaussian_width)),
                axis_phase: PhaseAxis::Rows,
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> KspaceFilterSpec {
        let mut draw = |(lo, hi): (f64, f64), off: f64| {
            if rng.random_bool(self.probability) {
                rng.random_range(lo..=hi)
            } else {
                off
            }
        };
        let keep = draw(self.keep, 1.0);
        let pf = draw(self.partial_fourier, 1.0);
        let phase = draw(self.gaussian_width, f64::INFINITY);
        let read = draw(self.gaussian_width, f64::INFINITY);
        KspaceFilterSpec {
            resolution_reduction_keep: keep,
            partial_fourier_fraction: pf,
            gaussian_width_phase: phase.is_finite().then_some(phase),
            gaussian_width_read: read.is_finite().then_some(read),
            axis_phase: if rng.random_bool(0.5) { PhaseAxis::Rows } else { PhaseAxis::Cols },
        }
    }
}

/// Mirrors columns (`horizontal`) and/or rows (`vertical`) of every slice.
pub fn flip(stack: &ComplexImageStack, horizontal: bool, vertical: bool) -> Result<ComplexImageStack> {
    if !horizontal && !vertical {
        return Ok(stack.clone());
    }
    let (s, h, w) = stack.dims();
    ComplexImageStack::from_fn(s, h, w, |t, r, c| {
        let r = if vertical { h - 1 - r } else { r };
        let c = if horizontal { w - 1 - c } else { c };
        stack.get(t, r, c)
    })
}

/// Output size for a resize ratio, never below `min_size` on either axis.
pub fn resized_dims(height: usize, width: usize, ratio: f64, min_size: usize) -> (usize, usize) {
    let f = |n: usize| ((ratio * n as f64).round() as usize).max(min_size);
    (f(height), f(width))
}

fn transform(stack: &ComplexImageStack, d: &AugmentDraws, dims: (usize, usize)) -> Result<ComplexImageStack> {
    let mut out = flip(stack, d.flip_h, d.flip_v)?;
    if d.intensity != 1.0 {
        let u = d.intensity as f32;
        out = out.map(|z| Complex32::new(z.re * u, z.im * u))?;
    }
    if dims != (out.height(), out.width()) {
        out = resize_to(&out, dims.0, dims.1)?;
    }
    Ok(out)
}

/// Applies the same transform to both members of a pair. The resized
/// matrix is kept at least `min_size` pixels on each axis; if resizing is
/// impossible it is skipped for this sample.
pub fn augment_pair(
    clean: &ComplexImageStack,
    noisy: &ComplexImageStack,
    draws: &AugmentDraws,
    min_size: usize,
) -> Result<(ComplexImageStack, ComplexImageStack)> {
    let (h, w) = (clean.height(), clean.width());
    let mut dims = resized_dims(h, w, draws.resize_ratio, min_size);
    if dims.0 < 4 || dims.1 < 4 {
        log::debug!("skipping resize to {}x{}", dims.0, dims.1);
        dims = (h, w);
    }
    Ok((transform(clean, draws, dims)?, transform(noisy, draws, dims)?))
}
