//! PSNR, SSIM and NRMSE on magnitude images, and the per-case report.
//!
//! The dynamic range of a pair is `max − min` over both magnitude stacks.
//! PSNR and SSIM are computed per slice and averaged over slices.

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{ImtError, Result};
use crate::stack::{shape_mismatch, ComplexImageStack};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(test: &ComplexImageStack, reference: &ComplexImageStack) -> Result<()> {
    if test.same_shape(reference) {
        Ok(())
    } else {
        Err(shape_mismatch(test, reference))
    }
}

fn pair_range(a: &[f64], b: &[f64]) -> f64 {
    let (lo, hi) = a
        .iter()
        .chain(b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Mean over slices of `10·log10(range² / MSE)`; `+∞` when any slice is exact.
pub fn psnr(test: &ComplexImageStack, reference: &ComplexImageStack) -> Result<f64> {
    check_pair(test, reference)?;
    let (s, h, w) = test.dims();
    let (a, b) = (test.magnitudes(), reference.magnitudes());
    let range = pair_range(&a, &b);
    let n = h * w;
    let mut total = 0.0;
    for i in 0..s {
        let mse = a[i * n..(i + 1) * n]
            .iter()
            .zip(&b[i * n..(i + 1) * n])
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / n as f64;
        if mse == 0.0 {
            return Ok(f64::INFINITY);
        }
        total += 10.0 * (range * range / mse).log10();
    }
    Ok(total / s as f64)
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering of an `h×w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = kernel.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|j| kernel[j] * img[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|j| kernel[j] * rows[(r + j) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Window edge used for an `h×w` slice: 11, or the largest odd size that fits.
pub fn ssim_window_size(h: usize, w: usize) -> usize {
    let limit = h.min(w);
    if limit >= SSIM_WINDOW {
        SSIM_WINDOW
    } else if limit % 2 == 1 {
        limit
    } else {
        limit - 1
    }
}

fn ssim_slice(x: &[f64], y: &[f64], h: usize, w: usize, range: f64) -> f64 {
    let size = ssim_window_size(h, w);
    let kernel = gaussian_window(size, SSIM_SIGMA);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, _, _) = filter_valid(x, h, w, &kernel);
    let (my, _, _) = filter_valid(y, h, w, &kernel);
    let (exx, _, _) = filter_valid(&xx, h, w, &kernel);
    let (eyy, _, _) = filter_valid(&yy, h, w, &kernel);
    let (exy, _, _) = filter_valid(&xy, h, w, &kernel);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = exx[i] - ux * ux;
        let vy = eyy[i] - uy * uy;
        let cov = exy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
            / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    total / n as f64
}

/// Gaussian-window SSIM (11×11, σ = 1.5, K1 = 0.01, K2 = 0.03).
pub fn ssim(test: &ComplexImageStack, reference: &ComplexImageStack) -> Result<f64> {
    check_pair(test, reference)?;
    let (s, h, w) = test.dims();
    let (a, b) = (test.magnitudes(), reference.magnitudes());
    let range = pair_range(&a, &b);
    if range == 0.0 {
        // both stacks are the same constant
        return Ok(1.0);
    }
    if h.min(w) < SSIM_WINDOW {
        log::info!(
            "slice {h}x{w} is smaller than the SSIM window; using {}",
            ssim_window_size(h, w)
        );
    }
    let n = h * w;
    let total: f64 = (0..s)
        .map(|i| ssim_slice(&a[i * n..(i + 1) * n], &b[i * n..(i + 1) * n], h, w, range))
        .sum();
    Ok(total / s as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NrmseMode {
    /// `‖test − ref‖₂ / ‖ref‖₂`
    #[default]
    SignalNorm,
    /// `RMSE / range`
    Range,
}

pub fn nrmse(test: &ComplexImageStack, reference: &ComplexImageStack, mode: NrmseMode) -> Result<f64> {
    check_pair(test, reference)?;
    let (a, b) = (test.magnitudes(), reference.magnitudes());
    let err2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
    match mode {
        NrmseMode::SignalNorm => {
            let ref2: f64 = b.iter().map(|v| v * v).sum();
            if ref2 == 0.0 {
                return Err(ImtError::invalid("reference has zero norm"));
            }
            Ok((err2 / ref2).sqrt())
        }
        NrmseMode::Range => {
            let range = pair_range(&a, &b);
            let rmse = (err2 / a.len() as f64).sqrt();
            if range == 0.0 {
                Ok(0.0)
            } else {
                Ok(rmse / range)
            }
        }
    }
}

/// Metric value that serializes `+∞` as `"inf"` and NaN as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(from = "MetricRepr")]
pub struct Metric(pub f64);

#[derive(Deserialize)]
#[serde(untagged)]
enum MetricRepr {
    Number(f64),
    Text(String),
    Null(()),
}

impl From<MetricRepr> for Metric {
    fn from(repr: MetricRepr) -> Self {
        Metric(match repr {
            MetricRepr::Number(v) => v,
            MetricRepr::Text(t) if t == "inf" => f64::INFINITY,
            MetricRepr::Text(t) if t == "-inf" => f64::NEG_INFINITY,
            _ => f64::NAN,
        })
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_none()
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub id: String,
    pub psnr: Metric,
    pub ssim: Metric,
    pub nrmse: Metric,
}

impl CaseMetrics {
    pub fn compute(id: impl Into<String>, test: &ComplexImageStack, reference: &ComplexImageStack) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            psnr: Metric(psnr(test, reference)?),
            ssim: Metric(ssim(test, reference)?),
            nrmse: Metric(nrmse(test, reference, NrmseMode::SignalNorm)?),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Metric,
    pub std: Metric,
}

impl Summary {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: Metric(f64::NAN), std: Metric(f64::NAN) };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else if !mean.is_finite() {
            f64::NAN
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean: Metric(mean), std: Metric(std) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub cases: Vec<CaseMetrics>,
}

impl MetricsReport {
    pub fn aggregate(&self) -> [(&'static str, Summary); 3] {
        let col = |f: fn(&CaseMetrics) -> f64| -> Vec<f64> { self.cases.iter().map(f).collect() };
        [
            ("psnr", Summary::of(&col(|c| c.psnr.0))),
            ("ssim", Summary::of(&col(|c| c.ssim.0))),
            ("nrmse", Summary::of(&col(|c| c.nrmse.0))),
        ]
    }
}

struct Aggregate<'a>(&'a MetricsReport);

impl Serialize for Aggregate<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let agg = self.0.aggregate();
        let mut map = s.serialize_map(Some(agg.len()))?;
        for (name, summary) in &agg {
            map.serialize_entry(name, summary)?;
        }
        map.end()
    }
}

impl Serialize for MetricsReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(2))?;
        map.serialize_entry("cases", &self.cases)?;
        map.serialize_entry("aggregate", &Aggregate(self))?;
        map.end()
    }
}
