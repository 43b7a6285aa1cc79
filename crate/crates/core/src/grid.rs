//! Scalar image fields and the 4-neighbour difference operator `D = I − B`.
//!
//! `B` averages the four axis-aligned neighbours with weight ¼ each. Pixels
//! outside the grid contribute zero, which keeps `D` non-singular.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;

/// Row-major scalar field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Dimension {
                expected: format!("{} values for {width}x{height}", width * height),
                actual: format!("{} values", data.len()),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid value at pixel {i} = {}", data[i])));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_shape(&self, other: &ImageGrid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: format!("{}x{}", self.width, self.height),
                actual: format!("{}x{}", other.width, other.height),
            })
        }
    }

    /// Elementwise map into a new grid of the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        ImageGrid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ImageGrid, f: impl Fn(f64, f64) -> f64) -> Result<ImageGrid> {
        self.ensure_shape(other)?;
        Ok(ImageGrid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dot(&self, other: &ImageGrid) -> Result<f64> {
        self.ensure_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc + a * b))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Out-of-grid neighbour handling. Only zero padding is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    ZeroPad,
}

/// The operator `D = I − B` on a fixed grid shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilOperator {
    width: usize,
    height: usize,
    boundary: Boundary,
}

impl StencilOperator {
    /// Weight of each of the four neighbours in `B`.
    pub const NEIGHBOR_WEIGHT: f64 = 0.25;

    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            boundary: Boundary::ZeroPad,
        }
    }

    pub fn for_grid(grid: &ImageGrid) -> Self {
        Self::new(grid.width, grid.height)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    fn check(&self, f: &ImageGrid) -> Result<()> {
        if f.width == self.width && f.height == self.height {
            Ok(())
        } else {
            Err(Error::Dimension {
                expected: format!("{}x{}", self.width, self.height),
                actual: format!("{}x{}", f.width, f.height),
            })
        }
    }

    /// `out[i] = f[i] − ¼ Σ_{j ∈ N4(i)} f[j]`.
    pub fn apply(&self, f: &ImageGrid) -> Result<ImageGrid> {
        self.check(f)?;
        Ok(self.neighbor_combine(f, 1.0, -Self::NEIGHBOR_WEIGHT))
    }

    /// Adjoint of [`apply`](Self::apply). The 4-neighbour stencil with zero
    /// padding is symmetric, so `Dᵀ = D` as matrices.
    pub fn apply_transpose(&self, f: &ImageGrid) -> Result<ImageGrid> {
        self.check(f)?;
        Ok(self.neighbor_combine(f, 1.0, -Self::NEIGHBOR_WEIGHT))
    }

    /// `out[i] = Σ_j D[i,j]² v[j]`, the per-pixel variance of `(D x)_i` when
    /// `x` has independent entries with variances `v`.
    pub fn row_squared_apply(&self, v: &ImageGrid) -> Result<ImageGrid> {
        self.check(v)?;
        if let Some(i) = v.data.iter().position(|&x| x < 0.0) {
            return Err(Error::Domain {
                name: "variance field",
                constraint: ">= 0",
                value: v.data[i],
            });
        }
        let w = Self::NEIGHBOR_WEIGHT;
        Ok(self.neighbor_combine(v, 1.0, w * w))
    }

    /// `center * f[i] + neighbor * Σ_{N4(i)} f[j]`.
    fn neighbor_combine(&self, f: &ImageGrid, center: f64, neighbor: f64) -> ImageGrid {
        let (w, h) = (self.width, self.height);
        let src = &f.data;
        let mut out = vec![0.0; w * h];
        exec::for_each_row(&mut out, w, |r, row| {
            let base = r * w;
            for (c, o) in row.iter_mut().enumerate() {
                let i = base + c;
                let mut s = 0.0;
                if r > 0 {
                    s += src[i - w];
                }
                if r + 1 < h {
                    s += src[i + w];
                }
                if c > 0 {
                    s += src[i - 1];
                }
                if c + 1 < w {
                    s += src[i + 1];
                }
                *o = center * src[i] + neighbor * s;
            }
        });
        ImageGrid {
            width: w,
            height: h,
            data: out,
        }
    }

    /// Dense row-major `d × d` matrix of `D`, for small-grid checks.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let (w, h) = (self.width, self.height);
        let n = w * h;
        let mut m = vec![vec![0.0; n]; n];
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                m[i][i] = 1.0;
                let mut link = |j: usize| m[i][j] = -Self::NEIGHBOR_WEIGHT;
                if r > 0 {
                    link(i - w);
                }
                if r + 1 < h {
                    link(i + w);
                }
                if c > 0 {
                    link(i - 1);
                }
                if c + 1 < w {
                    link(i + 1);
                }
            }
        }
        m
    }
}
