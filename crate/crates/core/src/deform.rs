//! Surface normals, the distance-decaying weight, and the resulting
//! displacement ("adaptive deformation map").

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, StacError};
use crate::grid::{Geometry, ScalarVolume, VectorField};

/// Hyperparameters of the deformation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AugmentParams {
    /// Peak displacement in millimeters, reached on the surface.
    pub alpha: f64,
    /// Decay rate per millimeter of distance from the surface; must be ≤ 0.
    pub beta: f64,
    /// `true` grows the object (content is pulled outward), `false` shrinks
    /// it, which is also the sign obtained by adding the raw gradient to the
    /// sampling position.
    pub enlarge: bool,
    /// Gradients shorter than this are treated as degenerate.
    pub epsilon: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            alpha: 1.0,
            beta: -1.0,
            enlarge: true,
            epsilon: 1e-8,
        }
    }
}

impl AugmentParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let params = AugmentParams {
            alpha,
            beta,
            ..Default::default()
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_enlarge(self, enlarge: bool) -> Self {
        AugmentParams { enlarge, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(StacError::InvalidParams(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta <= 0.0) {
            return Err(StacError::InvalidParams(format!(
                "beta must be finite and <= 0, got {}",
                self.beta
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(StacError::InvalidParams(format!(
                "epsilon must be finite and > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// `alpha * exp(beta * |distance|)`.
    #[inline]
    pub fn weight(&self, distance: f64) -> f64 {
        self.alpha * (self.beta * distance.abs()).exp()
    }

    /// Sign applied to the normalized gradient.
    fn direction(&self) -> f64 {
        if self.enlarge {
            -1.0
        } else {
            1.0
        }
    }
}

fn ensure_thick(geometry: &Geometry) -> Result<()> {
    match geometry.dims().iter().position(|&n| n < 2) {
        Some(axis) => Err(StacError::TooThin {
            axis,
            len: geometry.dims()[axis],
        }),
        None => Ok(()),
    }
}

/// Physical-unit gradient at voxel `c`: central differences inside, one-sided
/// on the faces.
#[inline]
fn gradient_at(values: &[f32], geometry: &Geometry, c: [usize; 3]) -> [f64; 3] {
    let dims = geometry.dims();
    let spacing = geometry.spacing();
    let mut g = [0.0; 3];
    for axis in 0..3 {
        let at = |pos: usize| {
            let mut q = c;
            q[axis] = pos;
            f64::from(values[geometry.index(q[0], q[1], q[2])])
        };
        let i = c[axis];
        let n = dims[axis];
        let h = spacing[axis];
        g[axis] = if i == 0 {
            (at(1) - at(0)) / h
        } else if i == n - 1 {
            (at(i) - at(i - 1)) / h
        } else {
            (at(i + 1) - at(i - 1)) / (2.0 * h)
        };
    }
    g
}

/// `∇φ` in physical units.
pub fn gradient_field(phi: &ScalarVolume) -> Result<VectorField> {
    let geometry = *phi.geometry();
    ensure_thick(&geometry)?;
    let values = phi.data();
    let data = (0..geometry.len())
        .into_par_iter()
        .map(|idx| gradient_at(values, &geometry, geometry.coords(idx)).map(|c| c as f32))
        .collect();
    VectorField::new(geometry, data)
}

/// Pointwise weight `alpha * exp(beta * |φ|)`.
pub fn weight_field(phi: &ScalarVolume, params: &AugmentParams) -> Result<ScalarVolume> {
    params.validate()?;
    let data = phi
        .data()
        .par_iter()
        .map(|&v| params.weight(f64::from(v)) as f32)
        .collect();
    ScalarVolume::new(*phi.geometry(), data)
}

/// Displacement `s * W * ∇φ / ‖∇φ‖` with `s = -1` when enlarging.
///
/// Voxels whose gradient is shorter than `epsilon` (plateaus, medial ridges)
/// get a zero displacement.
pub fn deformation_map(phi: &ScalarVolume, params: &AugmentParams) -> Result<VectorField> {
    params.validate()?;
    let geometry = *phi.geometry();
    ensure_thick(&geometry)?;
    let values = phi.data();
    let sign = params.direction();
    let data = (0..geometry.len())
        .into_par_iter()
        .map(|idx| {
            let g = gradient_at(values, &geometry, geometry.coords(idx));
            let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if norm < params.epsilon {
                return [0.0; 3];
            }
            let scale = sign * params.weight(f64::from(values[idx])) / norm.max(params.epsilon);
            g.map(|c| (scale * c) as f32)
        })
        .collect();
    VectorField::new(geometry, data)
}
