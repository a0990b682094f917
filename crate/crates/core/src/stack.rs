//! Complex image stacks and the stack-level operations: PowerNorm, coil
//! combination, repetition averaging and 16-bit export.

use num_complex::Complex32;

use crate::error::{ImtError, Result};

/// Target mean signal power used by PowerNorm.
pub const DEFAULT_TARGET_POWER: f64 = 1600.0;

/// Upper end of the 16-bit export range.
pub const EXPORT_MAX: u16 = 8192;

/// An `S×H×W` complex volume, slice-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImageStack {
    slices: usize,
    height: usize,
    width: usize,
    data: Vec<Complex32>,
}

impl ComplexImageStack {
    /// Builds a stack, rejecting mismatched lengths and non-finite samples.
    pub fn new(slices: usize, height: usize, width: usize, data: Vec<Complex32>) -> Result<Self> {
        if slices == 0 || height == 0 || width == 0 {
            return Err(ImtError::invalid(format!(
                "stack dimensions must be positive, got {slices}x{height}x{width}"
            )));
        }
        let n = voxel_count(slices, height, width)?;
        if data.len() != n {
            return Err(ImtError::invalid(format!(
                "data length {} does not match {slices}x{height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(ImtError::invalid(format!("non-finite sample at voxel {i}")));
        }
        Ok(Self {
            slices,
            height,
            width,
            data,
        })
    }

    pub fn zeros(slices: usize, height: usize, width: usize) -> Result<Self> {
        let n = voxel_count(slices, height, width)?;
        Self::new(slices, height, width, vec![Complex32::new(0.0, 0.0); n])
    }

    /// Fills a stack from `f(slice, row, col)`.
    pub fn from_fn(
        slices: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(voxel_count(slices, height, width)?);
        for s in 0..slices {
            for r in 0..height {
                for c in 0..width {
                    data.push(f(s, r, c));
                }
            }
        }
        Self::new(slices, height, width, data)
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.slices, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<Complex32> {
        self.data
    }

    pub fn slice(&self, index: usize) -> &[Complex32] {
        let n = self.height * self.width;
        &self.data[index * n..(index + 1) * n]
    }

    pub fn get(&self, slice: usize, row: usize, col: usize) -> Complex32 {
        self.data[(slice * self.height + row) * self.width + col]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    /// Builds a stack from per-slice buffers of equal size.
    pub fn from_slices(height: usize, width: usize, slices: Vec<Vec<Complex32>>) -> Result<Self> {
        let s = slices.len();
        let data: Vec<Complex32> = slices.into_iter().flatten().collect();
        Self::new(s, height, width, data)
    }

    /// Multiplies every voxel by a real factor.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        self.map(|z| {
            Complex32::new((z.re as f64 * factor) as f32, (z.im as f64 * factor) as f32)
        })
    }

    /// Applies `f` voxelwise and re-validates finiteness.
    pub fn map(&self, f: impl Fn(Complex32) -> Complex32) -> Result<Self> {
        let data = self.data.iter().map(|&z| f(z)).collect();
        Self::new(self.slices, self.height, self.width, data)
    }

    /// Voxelwise combination of two equally shaped stacks.
    pub fn zip_map(
        &self,
        other: &Self,
        f: impl Fn(Complex32, Complex32) -> Complex32,
    ) -> Result<Self> {
        if !self.same_shape(other) {
            return Err(shape_mismatch(self, other));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.slices, self.height, self.width, data)
    }

    /// Copies slices `start..start + count`.
    pub fn sub_stack(&self, start: usize, count: usize) -> Result<Self> {
        if count == 0 || start + count > self.slices {
            return Err(ImtError::invalid(format!(
                "slice range {start}..{} outside 0..{}",
                start + count,
                self.slices
            )));
        }
        let n = self.height * self.width;
        let data = self.data[start * n..(start + count) * n].to_vec();
        Self::new(count, self.height, self.width, data)
    }

    /// Copies the spatial window `rows × cols` starting at `(row0, col0)` from every slice.
    pub fn crop(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || row0 + rows > self.height || col0 + cols > self.width {
            return Err(ImtError::invalid(format!(
                "crop {rows}x{cols}+{row0}+{col0} outside {}x{}",
                self.height, self.width
            )));
        }
        Self::from_fn(self.slices, rows, cols, |s, r, c| {
            self.get(s, row0 + r, col0 + c)
        })
    }

    /// Magnitudes `|x_i|` in double precision, same layout as the stack.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|z| (z.re as f64).hypot(z.im as f64))
            .collect()
    }
}

fn voxel_count(slices: usize, height: usize, width: usize) -> Result<usize> {
    slices
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| ImtError::invalid("stack dimensions overflow"))
}

pub(crate) fn shape_mismatch(a: &ComplexImageStack, b: &ComplexImageStack) -> ImtError {
    ImtError::invalid(format!(
        "shape mismatch: {:?} vs {:?}",
        a.dims(),
        b.dims()
    ))
}

/// Spatially varying noise amplification, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct GFactorMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl GFactorMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(ImtError::invalid(format!(
                "g-factor map of {} values does not fit {height}x{width}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ImtError::invalid(format!(
                "g-factor value {} at {i} is not strictly positive",
                values[i]
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn uniform(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![1.0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }
}

/// Scaling recorded by [`power_normalize`], needed to undo it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerNormState {
    /// `sqrt(target_power / mean_power)`.
    pub k: f64,
    pub mean_power: f64,
    pub target_power: f64,
}

impl PowerNormState {
    pub fn new(mean_power: f64, target_power: f64) -> Result<Self> {
        if !(mean_power > 0.0 && mean_power.is_finite()) {
            return Err(ImtError::Degenerate(format!(
                "mean signal power {mean_power} leaves the scaling factor undefined"
            )));
        }
        if !(target_power > 0.0 && target_power.is_finite()) {
            return Err(ImtError::invalid(format!(
                "target power must be positive, got {target_power}"
            )));
        }
        Ok(Self {
            k: (target_power / mean_power).sqrt(),
            mean_power,
            target_power,
        })
    }
}

/// `(1/N)·Σ|x_i|²`, accumulated in double precision.
pub fn mean_signal_power(stack: &ComplexImageStack) -> Result<f64> {
    if stack.is_empty() {
        return Err(ImtError::invalid("empty stack"));
    }
    let sum: f64 = stack
        .data()
        .iter()
        .map(|z| {
            let (re, im) = (z.re as f64, z.im as f64);
            re * re + im * im
        })
        .sum();
    Ok(sum / stack.len() as f64)
}

/// Scales `stack` to mean power `target_power` (PowerNorm).
pub fn power_normalize(
    stack: &ComplexImageStack,
    target_power: f64,
) -> Result<(ComplexImageStack, PowerNormState)> {
    let state = PowerNormState::new(mean_signal_power(stack)?, target_power)?;
    let scaled = stack
        .scaled(state.k)
        .map_err(|_| ImtError::Numerical("power_normalize overflowed f32".into()))?;
    Ok((scaled, state))
}

/// Undoes [`power_normalize`]: multiplies every voxel by `1/k`.
pub fn power_denormalize(
    stack: &ComplexImageStack,
    state: &PowerNormState,
) -> Result<ComplexImageStack> {
    if !(state.k > 0.0 && state.k.is_finite()) {
        return Err(ImtError::InvalidState(format!(
            "scaling factor must be positive, got {}",
            state.k
        )));
    }
    stack
        .scaled(1.0 / state.k)
        .map_err(|_| ImtError::Numerical("power_denormalize overflowed f32".into()))
}

fn check_same_shapes(stacks: &[ComplexImageStack], what: &str) -> Result<()> {
    let first = stacks
        .first()
        .ok_or_else(|| ImtError::invalid(format!("{what}: need at least one stack")))?;
    for other in &stacks[1..] {
        if !first.same_shape(other) {
            return Err(shape_mismatch(first, other));
        }
    }
    Ok(())
}

/// Root-sum-of-squares coil combination, applied to the real and the
/// imaginary parts separately.
pub fn coil_combine_rss(coils: &[ComplexImageStack]) -> Result<ComplexImageStack> {
    check_same_shapes(coils, "coil_combine_rss")?;
    let first = &coils[0];
    let data = (0..first.len())
        .map(|i| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for coil in coils {
                let z = coil.data[i];
                re += (z.re as f64).powi(2);
                im += (z.im as f64).powi(2);
            }
            Complex32::new(re.sqrt() as f32, im.sqrt() as f32)
        })
        .collect();
    ComplexImageStack::new(first.slices, first.height, first.width, data)
}

/// Voxelwise complex mean of repeated acquisitions.
pub fn average_repetitions(reps: &[ComplexImageStack]) -> Result<ComplexImageStack> {
    check_same_shapes(reps, "average_repetitions")?;
    let first = &reps[0];
    let n = reps.len() as f64;
    let data = (0..first.len())
        .map(|i| {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for rep in reps {
                re += rep.data[i].re as f64;
                im += rep.data[i].im as f64;
            }
            Complex32::new((re / n) as f32, (im / n) as f32)
        })
        .collect();
    ComplexImageStack::new(first.slices, first.height, first.width, data)
}

/// Magnitude images quantized to `0..=8192`, one buffer per stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct U16Stack {
    pub slices: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u16>,
}

impl U16Stack {
    pub fn slice(&self, index: usize) -> &[u16] {
        let n = self.height * self.width;
        &self.data[index * n..(index + 1) * n]
    }
}

/// Maps magnitudes linearly so the stack-wide maximum lands on 8192,
/// rounding half-up.
pub fn export_u16(stack: &ComplexImageStack) -> U16Stack {
    let mags = stack.magnitudes();
    let max = mags.iter().copied().fold(0.0f64, f64::max);
    let data = if max > 0.0 {
        let scale = EXPORT_MAX as f64 / max;
        mags.iter()
            .map(|&m| ((m * scale + 0.5).floor()).min(EXPORT_MAX as f64) as u16)
            .collect()
    } else {
        vec![0; mags.len()]
    };
    U16Stack {
        slices: stack.slices,
        height: stack.height,
        width: stack.width,
        data,
    }
}
