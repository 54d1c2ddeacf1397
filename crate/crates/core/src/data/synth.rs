//! Desk-scale synthetic segmentation data: smooth noisy backgrounds with
//! one to three soft-edged elliptical blobs whose interiors form the mask.

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nn::upsample::resize_planes;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const COVERAGE_RANGE: (f64, f64) = (0.01, 0.60);

const NOISE_CELLS: usize = 6;
const NOISE_AMPLITUDE: f64 = 0.12;
const GRAIN: f64 = 0.03;
/// Edge softness in units of the normalized elliptical radius.
const EDGE: f64 = 0.08;

struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
    offset: [f64; 3],
}

impl Ellipse {
    fn draw(size: f64, rng: &mut SeededRng) -> Self {
        let angle = rng.uniform_range(0.0, std::f64::consts::PI);
        let strength = rng.uniform_range(0.2, 0.35);
        Self {
            cy: rng.uniform_range(0.2, 0.8) * size,
            cx: rng.uniform_range(0.2, 0.8) * size,
            ry: rng.uniform_range(0.07, 0.25) * size,
            rx: rng.uniform_range(0.07, 0.25) * size,
            cos: angle.cos(),
            sin: angle.sin(),
            offset: [strength, 0.5 * strength, 0.25 * strength],
        }
    }

    /// Normalized radius at a pixel center; `< 1` is inside.
    fn radius(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y + 0.5 - self.cy, x + 0.5 - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        ((u / self.rx).powi(2) + (v / self.ry).powi(2)).sqrt()
    }
}

fn smooth_noise(size: usize, rng: &mut SeededRng) -> Vec<f64> {
    let cells = NOISE_CELLS;
    let coarse: Vec<f64> = (0..3 * cells * cells).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    resize_planes(&coarse, 3, cells, cells, size, size)
}

fn attempt(size: usize, rng: &mut SeededRng) -> Sample {
    let plane = size * size;
    let base: Vec<f64> = (0..3).map(|_| rng.uniform_range(0.3, 0.5)).collect();
    let noise = smooth_noise(size, rng);
    let blobs: Vec<Ellipse> = (0..1 + rng.below(3)).map(|_| Ellipse::draw(size as f64, rng)).collect();
    let mut image = vec![0f32; 3 * plane];
    let mut mask = vec![0f32; plane];
    for y in 0..size {
        for x in 0..size {
            let i = y * size + x;
            let mut shift = [0.0; 3];
            for b in &blobs {
                let r = b.radius(y as f64, x as f64);
                if r < 1.0 {
                    mask[i] = 1.0;
                }
                let alpha = ((1.0 - r) / EDGE + 0.5).clamp(0.0, 1.0);
                for c in 0..3 {
                    shift[c] = f64::max(shift[c], alpha * b.offset[c]);
                }
            }
            for c in 0..3 {
                let v = base[c] + NOISE_AMPLITUDE * noise[c * plane + i] + shift[c] + GRAIN * rng.uniform_range(-1.0, 1.0);
                image[c * plane + i] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Sample {
        image: Tensor::from_vec(&[3, size, size], image).expect("sized by construction"),
        mask: Tensor::from_vec(&[1, size, size], mask).expect("sized by construction"),
        id: String::new(),
    }
}

/// One sample from `rng`, redrawn until mask coverage lies in
/// [`COVERAGE_RANGE`].
pub fn synth_sample(size: usize, rng: &mut SeededRng) -> Result<Sample> {
    if size == 0 || !size.is_multiple_of(32) {
        return Err(Error::InvalidShape(format!("synthetic size {size} is not a positive multiple of 32")));
    }
    loop {
        let s = attempt(size, rng);
        let coverage = s.mask.data().iter().map(|&v| v as f64).sum::<f64>() / (size * size) as f64;
        if (COVERAGE_RANGE.0..=COVERAGE_RANGE.1).contains(&coverage) {
            return Ok(s);
        }
    }
}

/// `n` samples; sample `i` uses substream `i` of `seed`, so datasets with
/// different seeds share no random draws.
pub fn synth_dataset(n: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::InvalidShape("synthetic dataset needs n >= 1".into()));
    }
    (0..n)
        .map(|i| {
            let mut s = synth_sample(size, &mut SeededRng::substream(seed, i as u64))?;
            s.id = format!("synth{i:05}");
            Ok(s)
        })
        .collect()
}
