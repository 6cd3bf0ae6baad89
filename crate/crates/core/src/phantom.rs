//! Synthetic image/label volumes with analytically known geometry.
//!
//! Shapes are described in voxel-index units (centers, radii, semi-axes,
//! half-extents), and the analytic signed distances returned by
//! [`Phantom::analytic_sdf`] are in the same units.
//!
//! Image noise is additive and uniform in `[-noise, noise]`. The value for
//! voxel `idx` is derived from `splitmix64(seed + (idx + 1) * 0x9E3779B97F4A7C15)`:
//! the top 53 bits give `u` in `[0, 1)`, and the noise is `noise * (2u - 1)`.
//! This is a pure function of `(seed, idx)` and therefore identical on every
//! platform and thread count.

use serde::Serialize;

use crate::error::{Result, StacError};
use crate::grid::{Geometry, GridPoint, LabelVolume, ScalarVolume};

/// Minimum gap, in voxels, between any shape and the volume border.
pub const MARGIN: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Sphere,
    Ellipsoid,
    Box,
    MultiOrgan,
}

impl std::str::FromStr for Preset {
    type Err = StacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Preset::Sphere),
            "ellipsoid" => Ok(Preset::Ellipsoid),
            "box" => Ok(Preset::Box),
            "multi_organ" => Ok(Preset::MultiOrgan),
            other => Err(StacError::SpecInvalid(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Ellipsoid {
        center: [f64; 3],
        semi_axes: [f64; 3],
    },
    Box {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
}

impl Shape {
    pub fn center(&self) -> [f64; 3] {
        match *self {
            Shape::Sphere { center, .. }
            | Shape::Ellipsoid { center, .. }
            | Shape::Box { center, .. } => center,
        }
    }

    /// Half size of the axis-aligned bounding box.
    pub fn half_extent(&self) -> [f64; 3] {
        match *self {
            Shape::Sphere { radius, .. } => [radius; 3],
            Shape::Ellipsoid { semi_axes, .. } => semi_axes,
            Shape::Box { half_extents, .. } => half_extents,
        }
    }

    /// Analytic volume in voxels³.
    pub fn volume(&self) -> f64 {
        use std::f64::consts::PI;
        match *self {
            Shape::Sphere { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
            Shape::Ellipsoid {
                semi_axes: [a, b, c],
                ..
            } => 4.0 / 3.0 * PI * a * b * c,
            Shape::Box {
                half_extents: [a, b, c],
                ..
            } => 8.0 * a * b * c,
        }
    }

    /// Exact signed distance from `p`, negative inside.
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        let c = self.center();
        let q: [f64; 3] = std::array::from_fn(|a| p[a] - c[a]);
        match *self {
            Shape::Sphere { radius, .. } => norm(q) - radius,
            Shape::Box { half_extents, .. } => {
                let d: [f64; 3] = std::array::from_fn(|a| q[a].abs() - half_extents[a]);
                let outside = norm(d.map(|v| v.max(0.0)));
                let inside = d[0].max(d[1]).max(d[2]).min(0.0);
                outside + inside
            }
            Shape::Ellipsoid { semi_axes, .. } => ellipsoid_signed_distance(semi_axes, q),
        }
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        match *self {
            // direct membership tests avoid distance round-off at the surface
            Shape::Sphere { radius, .. } => {
                let c = self.center();
                (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>() < radius * radius
            }
            Shape::Ellipsoid { center, semi_axes } => {
                (0..3)
                    .map(|a| ((p[a] - center[a]) / semi_axes[a]).powi(2))
                    .sum::<f64>()
                    < 1.0
            }
            Shape::Box {
                center,
                half_extents,
            } => (0..3).all(|a| (p[a] - center[a]).abs() < half_extents[a]),
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = self.half_extent().iter().all(|&v| v.is_finite() && v > 0.0);
        let finite = self.center().iter().all(|v| v.is_finite());
        if positive && finite {
            Ok(())
        } else {
            Err(StacError::SpecInvalid(format!("degenerate shape {self:?}")))
        }
    }
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Signed distance to an axis-aligned ellipsoid centered at the origin.
fn ellipsoid_signed_distance(semi_axes: [f64; 3], q: [f64; 3]) -> f64 {
    // Reduce to the first octant with axes sorted in decreasing length.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| semi_axes[b].total_cmp(&semi_axes[a]));
    let e = order.map(|a| semi_axes[a]);
    let y = order.map(|a| q[a].abs());
    let dist = distance_point_ellipsoid(e, y);
    let inside = (0..3).map(|a| (y[a] / e[a]).powi(2)).sum::<f64>() < 1.0;
    if inside {
        -dist
    } else {
        dist
    }
}

const ROOT_ITERATIONS: usize = 200;

fn robust_length(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * v.iter().map(|x| (x / m).powi(2)).sum::<f64>().sqrt()
}

/// Bisection for the root of `Σ (r_i z_i / (s + r_i))² - 1`.
fn bisect_root(ratios: &[f64], z: &[f64], g: f64) -> f64 {
    let n = z.len();
    let scaled: Vec<f64> = (0..n).map(|i| ratios[i] * z[i]).collect();
    let mut s0 = z[n - 1] - 1.0;
    let mut s1 = if g < 0.0 {
        0.0
    } else {
        robust_length(&scaled) - 1.0
    };
    let mut s = 0.0;
    for _ in 0..ROOT_ITERATIONS {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let value: f64 = (0..n)
            .map(|i| (scaled[i] / (s + ratios[i])).powi(2))
            .sum::<f64>()
            - 1.0;
        if value > 0.0 {
            s0 = s;
        } else if value < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Distance from `(y0, y1)` (first quadrant) to the ellipse with `e0 >= e1`.
fn distance_point_ellipse(e: [f64; 2], y: [f64; 2]) -> f64 {
    let [e0, e1] = e;
    let [y0, y1] = y;
    if y1 > 0.0 {
        if y0 > 0.0 {
            let z = [y0 / e0, y1 / e1];
            let g = z[0] * z[0] + z[1] * z[1] - 1.0;
            if g == 0.0 {
                return 0.0;
            }
            let r0 = (e0 / e1).powi(2);
            let s = bisect_root(&[r0, 1.0], &z, g);
            let x0 = r0 * y0 / (s + r0);
            let x1 = y1 / (s + 1.0);
            ((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt()
        } else {
            (y1 - e1).abs()
        }
    } else {
        let numer = e0 * y0;
        let denom = e0 * e0 - e1 * e1;
        if numer < denom {
            let xde = numer / denom;
            let x0 = e0 * xde;
            let x1 = e1 * (1.0 - xde * xde).sqrt();
            ((x0 - y0).powi(2) + x1 * x1).sqrt()
        } else {
            (y0 - e0).abs()
        }
    }
}

/// Distance from `y` (first octant) to the ellipsoid with `e0 >= e1 >= e2`.
fn distance_point_ellipsoid(e: [f64; 3], y: [f64; 3]) -> f64 {
    let [e0, e1, e2] = e;
    let [y0, y1, y2] = y;
    if y2 > 0.0 {
        if y1 > 0.0 {
            if y0 > 0.0 {
                let z = [y0 / e0, y1 / e1, y2 / e2];
                let g = z.iter().map(|v| v * v).sum::<f64>() - 1.0;
                if g == 0.0 {
                    return 0.0;
                }
                let r = [(e0 / e2).powi(2), (e1 / e2).powi(2), 1.0];
                let s = bisect_root(&r, &z, g);
                let x: [f64; 3] = std::array::from_fn(|i| r[i] * y[i] / (s + r[i]));
                norm(std::array::from_fn(|i| x[i] - y[i]))
            } else {
                distance_point_ellipse([e1, e2], [y1, y2])
            }
        } else if y0 > 0.0 {
            distance_point_ellipse([e0, e2], [y0, y2])
        } else {
            (y2 - e2).abs()
        }
    } else {
        let denom = [e0 * e0 - e2 * e2, e1 * e1 - e2 * e2];
        let numer = [e0 * y0, e1 * y1];
        if numer[0] < denom[0] && numer[1] < denom[1] {
            let xde = [numer[0] / denom[0], numer[1] / denom[1]];
            let discr = 1.0 - xde[0] * xde[0] - xde[1] * xde[1];
            if discr > 0.0 {
                let x = [e0 * xde[0], e1 * xde[1], e2 * discr.sqrt()];
                return norm([x[0] - y0, x[1] - y1, x[2]]);
            }
        }
        distance_point_ellipse([e0, e1], [y0, y1])
    }
}

/// A labeled structure and its mean image intensity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Organ {
    pub class_id: u8,
    pub shape: Shape,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhantomSpec {
    pub preset: Preset,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub organs: Vec<Organ>,
    pub background_mean: f64,
    /// Half-width of the uniform noise.
    pub noise: f64,
    pub seed: u64,
}

fn grid_center(dims: [usize; 3]) -> [f64; 3] {
    dims.map(|n| (n as f64 - 1.0) / 2.0)
}

impl PhantomSpec {
    fn single(preset: Preset, dims: [usize; 3], shape: Shape) -> Self {
        PhantomSpec {
            preset,
            dims,
            spacing: [1.0; 3],
            organs: vec![Organ {
                class_id: 1,
                shape,
                mean: 100.0,
            }],
            background_mean: 0.0,
            noise: 5.0,
            seed: 0,
        }
    }

    /// One sphere (class 1) centered in the grid.
    pub fn sphere(dims: [usize; 3], radius: f64) -> Self {
        let center = grid_center(dims);
        Self::single(Preset::Sphere, dims, Shape::Sphere { center, radius })
    }

    pub fn ellipsoid(dims: [usize; 3], semi_axes: [f64; 3]) -> Self {
        let center = grid_center(dims);
        Self::single(
            Preset::Ellipsoid,
            dims,
            Shape::Ellipsoid { center, semi_axes },
        )
    }

    pub fn cuboid(dims: [usize; 3], half_extents: [f64; 3]) -> Self {
        let center = grid_center(dims);
        Self::single(
            Preset::Box,
            dims,
            Shape::Box {
                center,
                half_extents,
            },
        )
    }

    /// A large class-1 sphere (radius 24) and a small class-2 sphere
    /// (radius 6) placed in opposite corners of the grid.
    pub fn multi_organ(dims: [usize; 3]) -> Self {
        Self::multi_organ_with(dims, 24.0, 6.0)
    }

    pub fn multi_organ_with(dims: [usize; 3], major_radius: f64, minor_radius: f64) -> Self {
        let [nx, ny, nz] = dims.map(|n| n as f64);
        let major = [
            major_radius + MARGIN,
            (ny / 2.0).floor(),
            (nz / 2.0).floor(),
        ];
        let minor_offset = minor_radius + MARGIN + 2.0;
        let minor = [nx - minor_offset, ny - minor_offset, (nz / 2.0).floor()];
        PhantomSpec {
            preset: Preset::MultiOrgan,
            dims,
            spacing: [1.0; 3],
            organs: vec![
                Organ {
                    class_id: 1,
                    shape: Shape::Sphere {
                        center: major,
                        radius: major_radius,
                    },
                    mean: 100.0,
                },
                Organ {
                    class_id: 2,
                    shape: Shape::Sphere {
                        center: minor,
                        radius: minor_radius,
                    },
                    mean: 200.0,
                },
            ],
            background_mean: 0.0,
            noise: 5.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn geometry(&self) -> Result<Geometry> {
        Geometry::new(self.dims, self.spacing).map_err(|e| StacError::SpecInvalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry()?;
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(StacError::SpecInvalid(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        if !self.background_mean.is_finite() {
            return Err(StacError::SpecInvalid(
                "background mean must be finite".into(),
            ));
        }
        for organ in &self.organs {
            organ.shape.validate()?;
            if organ.class_id == 0 {
                return Err(StacError::SpecInvalid(
                    "class 0 is reserved for background".into(),
                ));
            }
            if !organ.mean.is_finite() {
                return Err(StacError::SpecInvalid("organ mean must be finite".into()));
            }
            let c = organ.shape.center();
            let h = organ.shape.half_extent();
            for axis in 0..3 {
                let upper = self.dims[axis] as f64 - 1.0 - MARGIN;
                if c[axis] - h[axis] < MARGIN || c[axis] + h[axis] > upper {
                    return Err(StacError::SpecInvalid(format!(
                        "class {} shape leaves the {MARGIN}-voxel margin on axis {axis}",
                        organ.class_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Phantom> {
        self.validate()?;
        let geometry = self.geometry()?;

        let mut labels = vec![0u8; geometry.len()];
        for (idx, slot) in labels.iter_mut().enumerate() {
            let p = GridPoint::from_index(geometry.coords(idx)).as_array();
            for organ in &self.organs {
                if !organ.shape.contains(p) {
                    continue;
                }
                if *slot != 0 && *slot != organ.class_id {
                    return Err(StacError::SpecInvalid(format!(
                        "classes {} and {} overlap at voxel {:?}",
                        slot,
                        organ.class_id,
                        geometry.coords(idx)
                    )));
                }
                *slot = organ.class_id;
            }
        }

        let mut means = [self.background_mean; 256];
        for organ in &self.organs {
            means[organ.class_id as usize] = organ.mean;
        }
        let image: Vec<f32> = labels
            .iter()
            .enumerate()
            .map(|(idx, &c)| {
                (means[c as usize] + uniform_noise(self.seed, idx as u64, self.noise)) as f32
            })
            .collect();

        Ok(Phantom {
            spec: self.clone(),
            image: ScalarVolume::new(geometry, image)?,
            label: LabelVolume::new(geometry, labels)?,
        })
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Counter-based uniform sample in `[0, 1)`.
pub fn unit_sample(seed: u64, counter: u64) -> f64 {
    let h =
        splitmix64(seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform_noise(seed: u64, counter: u64, amplitude: f64) -> f64 {
    if amplitude == 0.0 {
        return 0.0;
    }
    amplitude * (2.0 * unit_sample(seed, counter) - 1.0)
}

/// A generated phantom.
#[derive(Clone, Debug)]
pub struct Phantom {
    pub spec: PhantomSpec,
    pub image: ScalarVolume,
    pub label: LabelVolume,
}

impl Phantom {
    /// Analytic signed distance (voxel units) of the union of all shapes of
    /// `class`, or `None` when the class is not part of the phantom.
    pub fn analytic_sdf(&self, class: u8) -> Option<impl Fn(GridPoint) -> f64 + '_> {
        let shapes: Vec<Shape> = self
            .spec
            .organs
            .iter()
            .filter(|o| o.class_id == class)
            .map(|o| o.shape)
            .collect();
        if shapes.is_empty() {
            return None;
        }
        Some(move |p: GridPoint| {
            shapes
                .iter()
                .map(|s| s.signed_distance(p.as_array()))
                .fold(f64::INFINITY, f64::min)
        })
    }

    /// Samples [`Phantom::analytic_sdf`] on the grid.
    pub fn analytic_sdf_volume(&self, class: u8) -> Option<ScalarVolume> {
        let f = self.analytic_sdf(class)?;
        ScalarVolume::from_fn(*self.image.geometry(), |c| f(GridPoint::from_index(c))).ok()
    }
}
