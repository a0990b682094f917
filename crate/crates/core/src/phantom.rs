//! Complex ellipse phantoms for desk-scale experiments.

use std::f64::consts::PI;

use num_complex::Complex32;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{ImtError, Result};
use crate::stack::ComplexImageStack;

#[derive(Debug, Clone)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    value: f64,
    // per-slice drift of center and radii
    drift: [f64; 4],
    wobble: f64,
}

/// Generates phantom `index` of a set sharing `seed`.
///
/// Magnitude: an outer support ellipse plus 3–8 inner ellipses with distinct
/// levels, modulated by a smooth bias field. Phase: a random polynomial of
/// degree two. Ellipse geometry drifts smoothly from slice to slice.
pub fn phantom(slices: usize, height: usize, width: usize, seed: u64, index: u64) -> Result<ComplexImageStack> {
    if slices == 0 || height < 4 || width < 4 {
        return Err(ImtError::invalid(format!(
            "phantom needs at least 1x4x4, got {slices}x{height}x{width}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);

    let count = rng.random_range(3..=8usize);
    let mut levels: Vec<f64> = (1..=12).map(|i| 0.15 + 0.07 * i as f64).collect();
    levels.shuffle(&mut rng);

    let outer = Ellipse {
        cy: rng.random_range(-0.05..0.05),
        cx: rng.random_range(-0.05..0.05),
        ry: rng.random_range(0.8..0.92),
        rx: rng.random_range(0.7..0.9),
        angle: rng.random_range(-0.3..0.3),
        value: 0.35,
        drift: [0.0, 0.0, rng.random_range(-0.01..0.01), rng.random_range(-0.01..0.01)],
        wobble: 0.0,
    };
    let inner: Vec<Ellipse> = (0..count)
        .map(|i| Ellipse {
            cy: rng.random_range(-0.5..0.5),
            cx: rng.random_range(-0.5..0.5),
            ry: rng.random_range(0.08..0.35),
            rx: rng.random_range(0.08..0.35),
            angle: rng.random_range(0.0..PI),
            value: levels[i],
            drift: [
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
            ],
            wobble: rng.random_range(0.0..2.0 * PI),
        })
        .collect();

    let phase: [f64; 6] = std::array::from_fn(|i| {
        let scale = if i == 0 { PI } else { 0.8 };
        rng.random_range(-scale..scale)
    });
    let bias: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.15..0.15));
    let amplitude = rng.random_range(50.0..200.0);

    let centre = (slices as f64 - 1.0) / 2.0;
    ComplexImageStack::from_fn(slices, height, width, |s, r, c| {
        let t = s as f64 - centre;
        let y = 2.0 * (r as f64 + 0.5) / height as f64 - 1.0;
        let x = 2.0 * (c as f64 + 0.5) / width as f64 - 1.0;
        let mut mag = 0.0;
        for e in std::iter::once(&outer).chain(&inner) {
            if e.contains(y, x, t) {
                mag = e.value;
            }
        }
        mag *= 1.0 + bias[0] * x + bias[1] * y + bias[2] * x * y;
        let theta = phase[0]
            + phase[1] * x
            + phase[2] * y
            + phase[3] * x * y
            + phase[4] * x * x
            + phase[5] * y * y;
        let v = amplitude * mag;
        Complex32::new((v * theta.cos()) as f32, (v * theta.sin()) as f32)
    })
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64, t: f64) -> bool {
        let wob = 0.01 * (0.5 * t + self.wobble).sin();
        let cy = self.cy + self.drift[0] * t + wob;
        let cx = self.cx + self.drift[1] * t;
        let ry = (self.ry + self.drift[2] * t).max(0.02);
        let rx = (self.rx + self.drift[3] * t).max(0.02);
        let (sin, cos) = self.angle.sin_cos();
        let (dy, dx) = (y - cy, x - cx);
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
    }
}
