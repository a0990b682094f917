//! Whole-stack inference: PowerNorm, overlapping slice chunks, averaging.

use imt_core::stack::{power_denormalize, power_normalize};
use imt_core::{Complex32, ComplexImageStack, ImtError, Result};
use rayon::prelude::*;

use crate::model::forward_stack;
use crate::params::ParameterSet;
use crate::train::TARGET_POWER;

/// Chunk start slices covering `slices` with windows of `depth` and 50% overlap.
pub fn chunk_starts(slices: usize, depth: usize) -> Vec<usize> {
    if slices <= depth {
        return vec![0];
    }
    let hop = (depth / 2).max(1);
    let mut starts: Vec<usize> = (0..=slices - depth).step_by(hop).collect();
    if *starts.last().expect("non-empty") != slices - depth {
        starts.push(slices - depth);
    }
    starts
}

/// Runs the network over a power-normalized stack; overlapping chunk
/// outputs are averaged per slice.
pub fn denoise_normalized(params: &ParameterSet, stack: &ComplexImageStack) -> Result<ComplexImageStack> {
    let (s, h, w) = stack.dims();
    let depth = params.config.slice_depth.min(s);
    let starts = chunk_starts(s, depth);
    let outputs = starts
        .par_iter()
        .map(|&start| forward_stack(params, &stack.sub_stack(start, depth)?))
        .collect::<Result<Vec<_>>>()?;
    let plane = h * w;
    let mut sum = vec![[0f64; 2]; s * plane];
    let mut count = vec![0u32; s];
    for (&start, out) in starts.iter().zip(&outputs) {
        for t in 0..depth {
            count[start + t] += 1;
            for (acc, z) in sum[(start + t) * plane..(start + t + 1) * plane].iter_mut().zip(out.slice(t)) {
                acc[0] += z.re as f64;
                acc[1] += z.im as f64;
            }
        }
    }
    let data = sum
        .chunks(plane)
        .zip(&count)
        .flat_map(|(sl, &n)| sl.iter().map(move |a| Complex32::new((a[0] / n as f64) as f32, (a[1] / n as f64) as f32)))
        .collect();
    ComplexImageStack::new(s, h, w, data)
}

/// `power_normalize → network → power_denormalize`.
pub fn denoise(params: &ParameterSet, stack: &ComplexImageStack) -> Result<ComplexImageStack> {
    let (x, state) = power_normalize(stack, TARGET_POWER)?;
    let y = denoise_normalized(params, &x)?;
    if y.data().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(ImtError::Numerical("non-finite network output".into()));
    }
    power_denormalize(&y, &state)
}
