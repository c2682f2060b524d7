#[allow(unused_imports)]
use num_traits::Float;
use core::f64::consts::PI;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};

/// Sinusoidal 3D encoding: for each band `b` and axis `a`, the pair
/// `cos(2^b π x_a / scale), sin(2^b π x_a / scale)`, padded with ones or
/// truncated to `dim` components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncoding {
    pub bands: usize,
    pub dim: usize,
    /// Length mapped to one half-period of the lowest band.
    pub scale: f64,
}

impl PositionalEncoding {
    pub fn new(bands: usize, dim: usize, scale: f64) -> Result<Self> {
        if dim == 0 || !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "positional_encoding",
                reason: "dim must be >= 1 and scale positive",
            });
        }
        Ok(Self { bands, dim, scale })
    }

    pub fn encode_into(&self, p: &Vec3, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 1.0);
        let mut k = 0;
        'bands: for b in 0..self.bands {
            let freq = (1u64 << b.min(52)) as f64 * PI / self.scale;
            for a in 0..3 {
                let (s, c) = (freq * p[a]).sin_cos();
                for v in [c, s] {
                    if k == out.len() {
                        break 'bands;
                    }
                    out[k] = v;
                    k += 1;
                }
            }
        }
    }

    /// One encoded row per point.
    pub fn encode(&self, cloud: &PointCloud) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(cloud.len(), self.dim);
        let mut row = alloc::vec![0.0; self.dim];
        for (i, p) in cloud.points().iter().enumerate() {
            self.encode_into(p, &mut row);
            for (c, v) in row.iter().enumerate() {
                m[(i, c)] = *v;
            }
        }
        m
    }
}
