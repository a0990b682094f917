//! Wavelet MAD noise estimation with the middle-slice 1.15 adjustment, and a
//! Haar soft-threshold denoiser used as the classical baseline.

use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use num_complex::Complex32;
use rayon::prelude::*;

use crate::error::{ImtError, Result};
use crate::io::{load_stack, save_stack};
use crate::stack::ComplexImageStack;

/// Median absolute deviation of a standard normal.
pub const MAD_NORMAL: f64 = 0.6745;

/// Factor applied to the middle-slice estimate.
pub const SIGMA_ADJUSTMENT: f64 = 1.15;

pub const SHRINK_LEVELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimate {
    /// Raw estimate per slice (magnitude images).
    pub per_slice: Vec<f64>,
    pub middle_slice: usize,
    /// `SIGMA_ADJUSTMENT ×` the raw estimate of the middle slice.
    pub adjusted: f64,
}

/// `median(|HH|) / 0.6745` from a single-level orthonormal Haar transform.
/// Odd trailing rows/columns are ignored.
pub fn wavelet_sigma_estimate(slice: &[f64], height: usize, width: usize) -> Result<f64> {
    if height < 2 || width < 2 {
        return Err(ImtError::invalid(format!(
            "sigma estimation needs at least 2x2, got {height}x{width}"
        )));
    }
    if slice.len() != height * width {
        return Err(ImtError::invalid("slice size does not match dimensions"));
    }
    let mut detail: Vec<f64> = Vec::with_capacity((height / 2) * (width / 2));
    for r in (0..height - 1).step_by(2) {
        for c in (0..width - 1).step_by(2) {
            let a = slice[r * width + c];
            let b = slice[r * width + c + 1];
            let d = slice[(r + 1) * width + c];
            let e = slice[(r + 1) * width + c + 1];
            detail.push(((a - b - d + e) * 0.5).abs());
        }
    }
    Ok(median(&mut detail) / MAD_NORMAL)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Estimates on the magnitude images; the adjusted value uses slice `⌊S/2⌋`.
pub fn adjusted_sigma(stack: &ComplexImageStack) -> Result<SigmaEstimate> {
    let (s, h, w) = stack.dims();
    let mags = stack.magnitudes();
    let per_slice = (0..s)
        .map(|i| wavelet_sigma_estimate(&mags[i * h * w..(i + 1) * h * w], h, w))
        .collect::<Result<Vec<_>>>()?;
    let middle_slice = s / 2;
    Ok(SigmaEstimate {
        adjusted: SIGMA_ADJUSTMENT * per_slice[middle_slice],
        per_slice,
        middle_slice,
    })
}

/// A denoiser that takes an explicit noise level.
pub trait Denoiser {
    fn denoise(&self, stack: &ComplexImageStack, sigma: f64) -> Result<ComplexImageStack>;
}

/// Three-level Haar soft thresholding at the universal threshold.
#[derive(Debug, Clone, Copy, Default)]
pub struct WaveletShrink;

impl Denoiser for WaveletShrink {
    fn denoise(&self, stack: &ComplexImageStack, sigma: f64) -> Result<ComplexImageStack> {
        wavelet_shrink_denoise(stack, sigma)
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Real and imaginary channels are shrunk independently with threshold
/// `sigma·√(2·ln(H·W))`.
pub fn wavelet_shrink_denoise(stack: &ComplexImageStack, sigma: f64) -> Result<ComplexImageStack> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(ImtError::invalid(format!("sigma {sigma} must be >= 0")));
    }
    let (s, h, w) = stack.dims();
    let threshold = sigma * (2.0 * ((h * w) as f64).ln()).max(0.0).sqrt();
    let slices: Vec<Vec<Complex32>> = (0..s)
        .into_par_iter()
        .map(|i| {
            let src = stack.slice(i);
            let re: Vec<f64> = src.iter().map(|z| z.re as f64).collect();
            let im: Vec<f64> = src.iter().map(|z| z.im as f64).collect();
            let re = shrink_channel(&re, h, w, threshold);
            let im = shrink_channel(&im, h, w, threshold);
            re.iter()
                .zip(&im)
                .map(|(&a, &b)| Complex32::new(a as f32, b as f32))
                .collect()
        })
        .collect();
    ComplexImageStack::from_slices(h, w, slices)
}

fn shrink_channel(channel: &[f64], h: usize, w: usize, threshold: f64) -> Vec<f64> {
    let block = 1usize << SHRINK_LEVELS;
    let ph = h.div_ceil(block) * block;
    let pw = w.div_ceil(block) * block;
    let mut buf = vec![0.0; ph * pw];
    for r in 0..ph {
        let sr = mirror(r, h);
        for c in 0..pw {
            buf[r * pw + c] = channel[sr * w + mirror(c, w)];
        }
    }
    let mut coeffs = HaarPyramid::forward(buf, ph, pw, SHRINK_LEVELS);
    coeffs.map_details(|x| soft_threshold(x, threshold));
    let rec = coeffs.inverse();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        out.extend_from_slice(&rec[r * pw..r * pw + w]);
    }
    out
}

/// Symmetric (half-sample) reflection of `i` into `0..n`.
fn mirror(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let m = i % period;
    if m < n {
        m
    } else {
        period - 1 - m
    }
}

/// In-place multi-level orthonormal 2D Haar decomposition.
///
/// After `levels` steps the top-left `(h >> levels) × (w >> levels)` block
/// holds the approximation; everything else is detail.
#[derive(Debug, Clone)]
pub struct HaarPyramid {
    pub data: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub levels: usize,
}

impl HaarPyramid {
    /// `height` and `width` must be divisible by `2^levels`.
    pub fn forward(mut data: Vec<f64>, height: usize, width: usize, levels: usize) -> Self {
        assert!(height % (1 << levels) == 0 && width % (1 << levels) == 0);
        let (mut h, mut w) = (height, width);
        let mut tmp = vec![0.0; height.max(width)];
        for _ in 0..levels {
            for r in 0..h {
                let row = &mut data[r * width..r * width + w];
                haar_step(row, &mut tmp[..w]);
            }
            let mut col = vec![0.0; h];
            for c in 0..w {
                for r in 0..h {
                    col[r] = data[r * width + c];
                }
                haar_step(&mut col, &mut tmp[..h]);
                for r in 0..h {
                    data[r * width + c] = col[r];
                }
            }
            h /= 2;
            w /= 2;
        }
        Self {
            data,
            height,
            width,
            levels,
        }
    }

    pub fn map_details(&mut self, f: impl Fn(f64) -> f64) {
        let ah = self.height >> self.levels;
        let aw = self.width >> self.levels;
        for r in 0..self.height {
            for c in 0..self.width {
                if r >= ah || c >= aw {
                    let v = &mut self.data[r * self.width + c];
                    *v = f(*v);
                }
            }
        }
    }

    pub fn inverse(mut self) -> Vec<f64> {
        let width = self.width;
        let mut tmp = vec![0.0; self.height.max(self.width)];
        for level in (0..self.levels).rev() {
            let h = self.height >> level;
            let w = self.width >> level;
            let mut col = vec![0.0; h];
            for c in 0..w {
                for r in 0..h {
                    col[r] = self.data[r * width + c];
                }
                haar_step_inv(&mut col, &mut tmp[..h]);
                for r in 0..h {
                    self.data[r * width + c] = col[r];
                }
            }
            for r in 0..h {
                haar_step_inv(&mut self.data[r * width..r * width + w], &mut tmp[..w]);
            }
        }
        self.data
    }
}

fn haar_step(x: &mut [f64], tmp: &mut [f64]) {
    let half = x.len() / 2;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..half {
        tmp[i] = (x[2 * i] + x[2 * i + 1]) * s;
        tmp[half + i] = (x[2 * i] - x[2 * i + 1]) * s;
    }
    x.copy_from_slice(&tmp[..x.len()]);
}

fn haar_step_inv(x: &mut [f64], tmp: &mut [f64]) {
    let half = x.len() / 2;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..half {
        tmp[2 * i] = (x[i] + x[half + i]) * s;
        tmp[2 * i + 1] = (x[i] - x[half + i]) * s;
    }
    x.copy_from_slice(&tmp[..x.len()]);
}

/// Runs an external denoiser as `<program> [args..] <in.imts> <out.imts> --sigma <value>`.
#[derive(Debug, Clone)]
pub struct ExternalBaseline {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub timeout: Duration,
}

impl Denoiser for ExternalBaseline {
    fn denoise(&self, stack: &ComplexImageStack, sigma: f64) -> Result<ComplexImageStack> {
        static RUN: AtomicU64 = AtomicU64::new(0);
        let dir = std::env::temp_dir().join(format!(
            "imt-baseline-{}-{}",
            std::process::id(),
            RUN.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&dir).map_err(|e| ImtError::io(&dir, e))?;
        let result = self.run_in(&dir, stack, sigma);
        let _ = std::fs::remove_dir_all(&dir);
        result
    }
}

impl ExternalBaseline {
    fn run_in(&self, dir: &std::path::Path, stack: &ComplexImageStack, sigma: f64) -> Result<ComplexImageStack> {
        let input = dir.join("in.imts");
        let output = dir.join("out.imts");
        save_stack(stack, &input)?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .arg("--sigma")
            .arg(format!("{sigma}"))
            .stdin(Stdio::null())
            .spawn()
            .map_err(|e| {
                ImtError::Baseline(format!("cannot start {}: {e}", self.program.display()))
            })?;
        let start = Instant::now();
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if start.elapsed() >= self.timeout => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(ImtError::Baseline(format!(
                        "{} timed out after {:?}",
                        self.program.display(),
                        self.timeout
                    )));
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => return Err(ImtError::Baseline(format!("wait failed: {e}"))),
            }
        };
        if !status.success() {
            return Err(ImtError::Baseline(format!(
                "{} exited with {status}",
                self.program.display()
            )));
        }
        let out = load_stack(&output)
            .map_err(|e| ImtError::Baseline(format!("unreadable baseline output: {e}")))?;
        if !out.same_shape(stack) {
            return Err(ImtError::Baseline(format!(
                "baseline output {:?} does not match input {:?}",
                out.dims(),
                stack.dims()
            )));
        }
        Ok(out)
    }
}
