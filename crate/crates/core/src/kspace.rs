//! Centered, unitary 2D Fourier transforms and the k-space filters used by
//! noise synthesis and augmentation.
//!
//! Convention: DC sits at index `⌊n/2⌋` along each axis, both in image
//! space (image origin) and in k-space, and both directions carry a
//! `1/√(HW)` factor so energy is preserved.

use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ImtError, Result};
use crate::stack::ComplexImageStack;

/// A reusable forward/inverse plan for one `H×W` slice shape.
#[derive(Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "fft2 needs a non-empty slice");
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Image → centered k-space.
    pub fn forward(&self, slice: &[Complex32]) -> Vec<Complex32> {
        self.run(slice, true)
    }

    /// Centered k-space → image.
    pub fn inverse(&self, kspace: &[Complex32]) -> Vec<Complex32> {
        self.run(kspace, false)
    }

    pub fn forward64(&self, buf: &mut [Complex64]) {
        self.transform(buf, true);
    }

    pub fn inverse64(&self, buf: &mut [Complex64]) {
        self.transform(buf, false);
    }

    fn run(&self, input: &[Complex32], forward: bool) -> Vec<Complex32> {
        assert_eq!(input.len(), self.height * self.width, "slice size mismatch");
        let mut buf: Vec<Complex64> = input
            .iter()
            .map(|z| Complex64::new(z.re as f64, z.im as f64))
            .collect();
        self.transform(&mut buf, forward);
        buf.iter()
            .map(|z| Complex32::new(z.re as f32, z.im as f32))
            .collect()
    }

    fn transform(&self, buf: &mut [Complex64], forward: bool) {
        let (h, w) = (self.height, self.width);
        // ifftshift on input, transform, fftshift on output
        shift2(buf, h, w, false);
        let (rows, cols) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        rows.process(buf);
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = buf[r * w + c];
            }
            cols.process(&mut column);
            for r in 0..h {
                buf[r * w + c] = column[r];
            }
        }
        shift2(buf, h, w, true);
        let scale = 1.0 / ((h * w) as f64).sqrt();
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }
}

/// `fftshift` (`forward = true`) or `ifftshift` along both axes.
fn shift2(buf: &mut [Complex64], h: usize, w: usize, forward: bool) {
    let (sr, sc) = if forward { (h / 2, w / 2) } else { (h - h / 2, w - w / 2) };
    if sr == 0 && sc == 0 {
        return;
    }
    let src = buf.to_vec();
    for r in 0..h {
        let nr = (r + sr) % h;
        for c in 0..w {
            buf[nr * w + (c + sc) % w] = src[r * w + c];
        }
    }
}

pub fn fft2(slice: &[Complex32], height: usize, width: usize) -> Vec<Complex32> {
    Fft2::new(height, width).forward(slice)
}

pub fn ifft2(kspace: &[Complex32], height: usize, width: usize) -> Vec<Complex32> {
    Fft2::new(height, width).inverse(kspace)
}

/// Which image axis is the phase-encoding direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseAxis {
    /// Phase encoding runs along rows (the `H` axis).
    #[default]
    Rows,
    Cols,
}

/// Separable k-space filter parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KspaceFilterSpec {
    /// Fraction of central k-space kept per axis, in `(0, 1]`.
    pub resolution_reduction_keep: f64,
    /// Fraction of phase-encoding lines kept, in `(0.5, 1]`; the high-index side is zeroed.
    pub partial_fourier_fraction: f64,
    /// Gaussian apodization std along the phase axis, in normalized frequency units.
    pub gaussian_width_phase: Option<f64>,
    pub gaussian_width_read: Option<f64>,
    pub axis_phase: PhaseAxis,
}

impl Default for KspaceFilterSpec {
    fn default() -> Self {
        Self::all_pass()
    }
}

impl KspaceFilterSpec {
    pub fn all_pass() -> Self {
        Self {
            resolution_reduction_keep: 1.0,
            partial_fourier_fraction: 1.0,
            gaussian_width_phase: None,
            gaussian_width_read: None,
            axis_phase: PhaseAxis::Rows,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let keep = self.resolution_reduction_keep;
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(ImtError::invalid(format!(
                "resolution_reduction_keep {keep} outside (0, 1]"
            )));
        }
        let pf = self.partial_fourier_fraction;
        if !(pf > 0.5 && pf <= 1.0) {
            return Err(ImtError::invalid(format!(
                "partial_fourier_fraction {pf} outside (0.5, 1]"
            )));
        }
        for (name, width) in [
            ("gaussian_width_phase", self.gaussian_width_phase),
            ("gaussian_width_read", self.gaussian_width_read),
        ] {
            if let Some(w) = width {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(ImtError::invalid(format!("{name} must be positive, got {w}")));
                }
            }
        }
        Ok(())
    }

    pub fn is_all_pass(&self) -> bool {
        self.resolution_reduction_keep == 1.0
            && self.partial_fourier_fraction == 1.0
            && self.gaussian_width_phase.is_none()
            && self.gaussian_width_read.is_none()
    }

    fn axis_profile(&self, n: usize, phase: bool) -> Vec<f64> {
        let center = n / 2;
        let mut profile = vec![1.0; n];

        let kept = ((self.resolution_reduction_keep * n as f64).round() as usize).clamp(1, n);
        let start = center - kept / 2;
        for (i, v) in profile.iter_mut().enumerate() {
            if i < start || i >= start + kept {
                *v = 0.0;
            }
        }

        if phase {
            let zeroed = ((1.0 - self.partial_fourier_fraction) * n as f64 + 1e-9).floor() as usize;
            for v in profile.iter_mut().skip(n - zeroed.min(n)) {
                *v = 0.0;
            }
        }

        let width = if phase {
            self.gaussian_width_phase
        } else {
            self.gaussian_width_read
        };
        if let Some(sd) = width {
            for (i, v) in profile.iter_mut().enumerate() {
                let f = (i as f64 - center as f64) / n as f64;
                *v *= (-0.5 * (f / sd).powi(2)).exp();
            }
        }
        profile
    }

    /// The real, separable `H×W` mask in centered k-space.
    pub fn mask(&self, height: usize, width: usize) -> Result<Vec<f64>> {
        self.validate()?;
        let rows = self.axis_profile(height, self.axis_phase == PhaseAxis::Rows);
        let cols = self.axis_profile(width, self.axis_phase == PhaseAxis::Cols);
        Ok(rows
            .iter()
            .flat_map(|r| cols.iter().map(move |c| r * c))
            .collect())
    }
}

/// `ifft2(mask ⊙ fft2(slice))`.
pub fn apply_kspace_filters(
    slice: &[Complex32],
    height: usize,
    width: usize,
    spec: &KspaceFilterSpec,
) -> Result<Vec<Complex32>> {
    if slice.len() != height * width {
        return Err(ImtError::invalid("slice size does not match dimensions"));
    }
    let mask = spec.mask(height, width)?;
    let plan = Fft2::new(height, width);
    Ok(filter_with(&plan, &mask, slice))
}

pub(crate) fn filter_with(plan: &Fft2, mask: &[f64], slice: &[Complex32]) -> Vec<Complex32> {
    let mut buf: Vec<Complex64> = slice
        .iter()
        .map(|z| Complex64::new(z.re as f64, z.im as f64))
        .collect();
    plan.forward64(&mut buf);
    for (z, m) in buf.iter_mut().zip(mask) {
        *z *= *m;
    }
    plan.inverse64(&mut buf);
    buf.iter()
        .map(|z| Complex32::new(z.re as f32, z.im as f32))
        .collect()
}

/// Resizes every slice by cropping or zero-padding centered k-space to
/// `round(ratio·H) × round(ratio·W)`.
pub fn kspace_resize(stack: &ComplexImageStack, ratio: f64) -> Result<ComplexImageStack> {
    if !(0.5..=1.5).contains(&ratio) {
        return Err(ImtError::invalid(format!("resize ratio {ratio} outside [0.5, 1.5]")));
    }
    let (s, h, w) = stack.dims();
    let nh = (ratio * h as f64).round() as usize;
    let nw = (ratio * w as f64).round() as usize;
    resize_to(stack, nh, nw).map(|out| {
        debug_assert_eq!(out.slices(), s);
        out
    })
}

/// Centered k-space crop/pad to an explicit output size.
pub fn resize_to(stack: &ComplexImageStack, new_h: usize, new_w: usize) -> Result<ComplexImageStack> {
    if new_h < 4 || new_w < 4 {
        return Err(ImtError::invalid(format!(
            "resized matrix {new_h}x{new_w} is smaller than 4x4"
        )));
    }
    let (s, h, w) = stack.dims();
    if (new_h, new_w) == (h, w) {
        return Ok(stack.clone());
    }
    let src_plan = Fft2::new(h, w);
    let dst_plan = Fft2::new(new_h, new_w);
    let slices: Vec<Vec<Complex32>> = (0..s)
        .into_par_iter()
        .map(|i| {
            let k = src_plan.forward(stack.slice(i));
            let mut out = vec![Complex32::new(0.0, 0.0); new_h * new_w];
            let (ch, cw, nch, ncw) = (h / 2, w / 2, new_h / 2, new_w / 2);
            for r in 0..new_h {
                let src_r = r as isize - nch as isize + ch as isize;
                if src_r < 0 || src_r >= h as isize {
                    continue;
                }
                for c in 0..new_w {
                    let src_c = c as isize - ncw as isize + cw as isize;
                    if src_c < 0 || src_c >= w as isize {
                        continue;
                    }
                    out[r * new_w + c] = k[src_r as usize * w + src_c as usize];
                }
            }
            dst_plan.inverse(&out)
        })
        .collect();
    ComplexImageStack::from_slices(new_h, new_w, slices)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_slice_concentrates_in_centered_dc() {
        let (h, w) = (6, 5);
        let c = Complex32::new(2.0, -1.0);
        let k = fft2(&vec![c; h * w], h, w);
        let dc = k[(h / 2) * w + w / 2];
        let expected = c * ((h * w) as f32).sqrt();
        assert!((dc - expected).norm() < 1e-5);
        for (i, z) in k.iter().enumerate() {
            if i != (h / 2) * w + w / 2 {
                assert!(z.norm() < 1e-5, "leak at {i}: {z}");
            }
        }
    }

    #[test]
    fn all_pass_mask_is_ones() {
        let mask = KspaceFilterSpec::all_pass().mask(7, 8).unwrap();
        assert!(mask.iter().all(|&m| m == 1.0));
    }

    #[test]
    fn partial_fourier_zeroes_high_rows() {
        let spec = KspaceFilterSpec {
            partial_fourier_fraction: 0.75,
            ..KspaceFilterSpec::all_pass()
        };
        let (h, w) = (64, 10);
        let mask = spec.mask(h, w).unwrap();
        let zero_rows: Vec<usize> = (0..h)
            .filter(|r| mask[r * w..(r + 1) * w].iter().all(|&m| m == 0.0))
            .collect();
        assert_eq!(zero_rows.len(), 16);
        assert_eq!(zero_rows, (48..64).collect::<Vec<_>>());
        // columns untouched
        assert!((0..48).all(|r| mask[r * w..(r + 1) * w].iter().all(|&m| m == 1.0)));
    }

    #[test]
    fn partial_fourier_on_columns() {
        let spec = KspaceFilterSpec {
            partial_fourier_fraction: 0.75,
            axis_phase: PhaseAxis::Cols,
            ..KspaceFilterSpec::all_pass()
        };
        let mask = spec.mask(4, 10).unwrap();
        // floor(0.25 * 10) = 2 zeroed columns
        for r in 0..4 {
            assert_eq!(&mask[r * 10 + 8..r * 10 + 10], &[0.0, 0.0]);
            assert_eq!(mask[r * 10 + 7], 1.0);
        }
    }

    #[test]
    fn resolution_box_is_centered() {
        let spec = KspaceFilterSpec {
            resolution_reduction_keep: 0.5,
            ..KspaceFilterSpec::all_pass()
        };
        let profile = spec.axis_profile(8, false);
        assert_eq!(profile, vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn gaussian_peaks_at_dc() {
        let spec = KspaceFilterSpec {
            gaussian_width_read: Some(0.25),
            ..KspaceFilterSpec::all_pass()
        };
        let profile = spec.axis_profile(9, false);
        assert_eq!(profile[4], 1.0);
        assert!(profile[0] < profile[2] && profile[2] < profile[4]);
        assert!((profile[3] - profile[5]).abs() < 1e-15);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = KspaceFilterSpec::all_pass();
        for bad in [
            KspaceFilterSpec { resolution_reduction_keep: 0.0, ..base },
            KspaceFilterSpec { resolution_reduction_keep: 1.2, ..base },
            KspaceFilterSpec { partial_fourier_fraction: 0.5, ..base },
            KspaceFilterSpec { gaussian_width_phase: Some(-1.0), ..base },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
            assert!(apply_kspace_filters(&[Complex32::new(0.0, 0.0); 4], 2, 2, &bad).is_err());
        }
    }

    #[test]
    fn resize_shape_and_underflow() {
        let stack = ComplexImageStack::zeros(2, 32, 32).unwrap();
        assert_eq!(kspace_resize(&stack, 0.5).unwrap().dims(), (2, 16, 16));
        assert_eq!(kspace_resize(&stack, 1.5).unwrap().dims(), (2, 48, 48));
        let small = ComplexImageStack::zeros(1, 6, 6).unwrap();
        assert!(kspace_resize(&small, 0.5).is_err());
        assert!(kspace_resize(&stack, 0.4).is_err());
        assert!(kspace_resize(&stack, 1.6).is_err());
    }
}
