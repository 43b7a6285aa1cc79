use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{standard_normal_grid, stream_rng, Stream};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;

/// Shape of the region occupied by one foreground class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SceneShape {
    Disk,
    Square,
}

/// Parameters of a synthetic piecewise-constant scene with a smooth bias.
///
/// Class 0 is the background. Class `k ≥ 1` is a centred region nested inside
/// class `k − 1`: odd classes are disks, even classes are squares, and the
/// size shrinks linearly with `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    /// Intensity of each class, length `k`.
    pub levels: Vec<f64>,
    pub bias_amplitude: f64,
    pub noise_sigma: f64,
}

impl SceneSpec {
    /// 32×32, levels evenly spread over [0.2, 0.8], bias 0.5, noise 0.05.
    pub fn standard(k: usize) -> Self {
        let levels = if k == 1 {
            vec![0.5]
        } else {
            (0..k).map(|i| 0.2 + 0.6 * i as f64 / (k - 1) as f64).collect()
        };
        Self {
            width: 32,
            height: 32,
            k,
            levels,
            bias_amplitude: 0.5,
            noise_sigma: 0.05,
        }
    }

    pub fn clean(k: usize) -> Self {
        Self {
            bias_amplitude: 0.0,
            noise_sigma: 0.0,
            ..Self::standard(k)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("scene dimensions must be positive".into()));
        }
        if self.k == 0 || self.k > 256 {
            return Err(Error::Invalid(format!("scene k must be in 1..=256, got {}", self.k)));
        }
        if self.levels.len() != self.k {
            return Err(Error::Invalid(format!(
                "scene needs {} levels, got {}",
                self.k,
                self.levels.len()
            )));
        }
        if self.levels.iter().any(|l| !l.is_finite()) || !self.bias_amplitude.is_finite() {
            return Err(Error::Invalid("scene levels and bias must be finite".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Invalid(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    /// Size parameter of class `k`'s region: disk radius or square half-side.
    pub fn region_radius(&self, class: usize) -> f64 {
        let r0 = 0.3 * self.width.min(self.height) as f64;
        if self.k <= 1 {
            return r0;
        }
        r0 * (self.k - class) as f64 / (self.k - 1) as f64
    }

    pub fn region_shape(class: usize) -> SceneShape {
        if class % 2 == 1 {
            SceneShape::Disk
        } else {
            SceneShape::Square
        }
    }

    fn label_at(&self, row: usize, col: usize) -> usize {
        let dx = col as f64 - (self.width / 2) as f64;
        let dy = row as f64 - (self.height / 2) as f64;
        let mut label = 0;
        for class in 1..self.k {
            let r = self.region_radius(class);
            let inside = match Self::region_shape(class) {
                SceneShape::Disk => dx * dx + dy * dy <= r * r,
                SceneShape::Square => dx.abs() <= r && dy.abs() <= r,
            };
            if inside {
                label = class;
            } else {
                break;
            }
        }
        label
    }
}

/// A rendered synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub y: ImageGrid,
    /// Class id per pixel, stored as `f64`.
    pub gt_label: ImageGrid,
    /// Low-frequency bias plus the global mean intensity.
    pub gt_basis: ImageGrid,
    /// Zero-mean piecewise-constant intensity of the partition.
    pub gt_contour: ImageGrid,
}

/// Renders `y = contour + basis + noise` for `spec`.
pub fn synthesize(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let gt_label = ImageGrid::from_fn(w, h, |r, c| spec.label_at(r, c) as f64);
    let intensity = gt_label.map(|l| spec.levels[l as usize]);
    let mean = intensity.mean();
    let gt_contour = intensity.map(|v| v - mean);
    let a = spec.bias_amplitude;
    let gt_basis = ImageGrid::from_fn(w, h, |r, c| {
        let u = PI * (c as f64 + 0.5) / w as f64;
        let v = PI * (r as f64 + 0.5) / h as f64;
        mean + a * 0.5 * (u.cos() + v.cos())
    });
    let mut rng = stream_rng(seed, Stream::Scene, 0, 0, 0);
    let noise = standard_normal_grid(w, h, &mut rng);
    let sigma = spec.noise_sigma;
    let data = gt_contour
        .data()
        .iter()
        .zip(gt_basis.data())
        .zip(noise.data())
        .map(|((&x, &n), &e)| x + n + sigma * e)
        .collect();
    let y = ImageGrid::new(w, h, data)?;
    Ok(Scene {
        y,
        gt_label,
        gt_basis,
        gt_contour,
    })
}
