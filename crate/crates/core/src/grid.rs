//! Volume containers and samplers.
//!
//! All volumes store voxels in x-fastest order: the linear index of voxel
//! `(i, j, k)` is `i + nx * (j + ny * k)`. Voxel centers sit at integer
//! coordinates; continuous positions are expressed in voxel-index units as a
//! [`GridPoint`]. Physical quantities (distances, displacements) are in
//! millimeters and are converted to index units by dividing by the per-axis
//! spacing.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{Result, StacError};

/// Dimensions and voxel spacing shared by every volume type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(StacError::InvalidVolume(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        if dims
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .is_none()
        {
            return Err(StacError::InvalidVolume(format!(
                "dimensions {dims:?} overflow the address space"
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(StacError::InvalidVolume(format!(
                "spacing must be finite and positive, got {spacing:?}"
            )));
        }
        Ok(Geometry { dims, spacing })
    }

    /// Unit-spacing geometry.
    pub fn isotropic(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Total number of voxels.
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// Fails with `ShapeMismatch` unless both geometries are identical.
    pub fn ensure_same(&self, other: &Geometry, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(StacError::ShapeMismatch(format!(
                "{what}: {:?} @ {:?} vs {:?} @ {:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

/// A continuous position in voxel-index units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GridPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        GridPoint { x, y, z }
    }

    pub fn from_index([i, j, k]: [usize; 3]) -> Self {
        GridPoint::new(i as f64, j as f64, k as f64)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Real-valued volume (images, distance fields, weights).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    geometry: Geometry,
    data: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(geometry: Geometry, data: Vec<f32>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(StacError::InvalidVolume(format!(
                "expected {} values, got {}",
                geometry.len(),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(StacError::InvalidVolume(format!(
                "non-finite value {} at index {pos}",
                data[pos]
            )));
        }
        Ok(ScalarVolume { geometry, data })
    }

    pub fn filled(geometry: Geometry, value: f32) -> Result<Self> {
        Self::new(geometry, vec![value; geometry.len()])
    }

    /// Builds a volume by evaluating `f` at every voxel index.
    pub fn from_fn<F>(geometry: Geometry, f: F) -> Result<Self>
    where
        F: Fn([usize; 3]) -> f64 + Sync,
    {
        let data = (0..geometry.len())
            .into_par_iter()
            .map(|idx| f(geometry.coords(idx)) as f32)
            .collect();
        Self::new(geometry, data)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.geometry.index(i, j, k)]
    }

    /// `(min, max)` over all voxels.
    pub fn range(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Trilinear interpolation at `p` with clamp-to-edge outside the grid.
    pub fn sample_trilinear(&self, p: GridPoint) -> f64 {
        let [nx, ny, nz] = self.geometry.dims;
        let (x0, x1, tx) = axis_cell(p.x, nx);
        let (y0, y1, ty) = axis_cell(p.y, ny);
        let (z0, z1, tz) = axis_cell(p.z, nz);
        let v = |i, j, k| f64::from(self.get(i, j, k));

        let plane = |z| {
            let row0 = lerp(v(x0, y0, z), v(x1, y0, z), tx);
            if ty == 0.0 {
                return row0;
            }
            let row1 = lerp(v(x0, y1, z), v(x1, y1, z), tx);
            lerp(row0, row1, ty)
        };
        let lower = plane(z0);
        if tz == 0.0 {
            return lower;
        }
        lerp(lower, plane(z1), tz)
    }
}

/// Sub-voxel lookup along one axis: lower index, upper index, fraction.
#[inline]
fn axis_cell(coord: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let c = coord.clamp(0.0, max);
    let lo = c.floor();
    let i0 = lo as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - lo)
}

/// Exact at `t == 0`, so integer sample positions reproduce stored values bit-for-bit.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

/// Nearest voxel index along one axis; ties resolve toward the smaller index.
#[inline]
fn nearest_index(coord: f64, n: usize) -> usize {
    let c = coord.clamp(0.0, (n - 1) as f64);
    (c - 0.5).ceil().max(0.0) as usize
}

/// Class-ID volume; class 0 is background.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    geometry: Geometry,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(StacError::InvalidVolume(format!(
                "expected {} labels, got {}",
                geometry.len(),
                data.len()
            )));
        }
        Ok(LabelVolume { geometry, data })
    }

    pub fn filled(geometry: Geometry, class: u8) -> Self {
        LabelVolume {
            geometry,
            data: vec![class; geometry.len()],
        }
    }

    pub fn from_fn<F>(geometry: Geometry, f: F) -> Self
    where
        F: Fn([usize; 3]) -> u8 + Sync,
    {
        let data = (0..geometry.len())
            .into_par_iter()
            .map(|idx| f(geometry.coords(idx)))
            .collect();
        LabelVolume { geometry, data }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.data[self.geometry.index(i, j, k)]
    }

    /// Distinct class IDs present, background included.
    pub fn classes(&self) -> BTreeSet<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..=255u8).filter(|&c| seen[c as usize]).collect()
    }

    /// Number of voxels carrying `class`.
    pub fn count(&self, class: u8) -> usize {
        self.data.iter().filter(|&&v| v == class).count()
    }

    /// Real-valued copy of the labels.
    pub fn to_scalar(&self) -> ScalarVolume {
        ScalarVolume {
            geometry: self.geometry,
            data: self.data.iter().map(|&v| f32::from(v)).collect(),
        }
    }

    /// Nearest-neighbor lookup with clamp-to-edge.
    pub fn sample_nearest(&self, p: GridPoint) -> u8 {
        let [nx, ny, nz] = self.geometry.dims;
        self.get(
            nearest_index(p.x, nx),
            nearest_index(p.y, ny),
            nearest_index(p.z, nz),
        )
    }
}

/// Three-component vector per voxel, in physical (millimeter) units.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    geometry: Geometry,
    data: Vec<[f32; 3]>,
}

impl VectorField {
    pub fn new(geometry: Geometry, data: Vec<[f32; 3]>) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(StacError::InvalidVolume(format!(
                "expected {} vectors, got {}",
                geometry.len(),
                data.len()
            )));
        }
        if data.iter().flatten().any(|c| !c.is_finite()) {
            return Err(StacError::InvalidVolume(
                "vector field has non-finite components".into(),
            ));
        }
        Ok(VectorField { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        VectorField {
            geometry,
            data: vec![[0.0; 3]; geometry.len()],
        }
    }

    /// Same vector at every voxel.
    pub fn constant(geometry: Geometry, v: [f32; 3]) -> Result<Self> {
        Self::new(geometry, vec![v; geometry.len()])
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geometry.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn data(&self) -> &[[f32; 3]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> [f32; 3] {
        self.data[self.geometry.index(i, j, k)]
    }

    /// Euclidean length of the vector at each voxel.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.data
            .iter()
            .map(|v| {
                v.iter()
                    .map(|&c| f64::from(c) * f64::from(c))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Position sampled by backward warping for voxel `index`: the voxel
    /// center plus the displacement converted to index units.
    #[inline]
    pub(crate) fn source_point(&self, index: usize) -> GridPoint {
        let [i, j, k] = self.geometry.coords(index);
        let d = self.data[index];
        let s = self.geometry.spacing;
        GridPoint::new(
            i as f64 + f64::from(d[0]) / s[0],
            j as f64 + f64::from(d[1]) / s[1],
            k as f64 + f64::from(d[2]) / s[2],
        )
    }
}

/// A set of class IDs, e.g. the minority classes selected for enlargement.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(transparent)]
pub struct ClassSet(BTreeSet<u8>);

impl ClassSet {
    pub fn new() -> Self {
        ClassSet(BTreeSet::new())
    }

    pub fn contains(&self, class: u8) -> bool {
        self.0.contains(&class)
    }

    pub fn insert(&mut self, class: u8) -> bool {
        self.0.insert(class)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Ascending class IDs.
    pub fn iter(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.iter().collect()
    }

    /// 256-entry membership table for hot loops.
    pub(crate) fn lookup(&self) -> [bool; 256] {
        let mut table = [false; 256];
        for c in self.iter() {
            table[c as usize] = true;
        }
        table
    }
}

impl FromIterator<u8> for ClassSet {
    fn from_iter<I: IntoIterator<Item = u8>>(iter: I) -> Self {
        ClassSet(iter.into_iter().collect())
    }
}

impl<const N: usize> From<[u8; N]> for ClassSet {
    fn from(classes: [u8; N]) -> Self {
        classes.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(dims: [usize; 3]) -> Geometry {
        Geometry::isotropic(dims).unwrap()
    }

    fn ramp(dims: [usize; 3]) -> ScalarVolume {
        ScalarVolume::from_fn(geom(dims), |[i, j, k]| {
            (i * 7 + j * 13 + k * 31) as f64 * 0.5
        })
        .unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Geometry::new([0, 1, 1], [1.0; 3]).is_err());
        assert!(Geometry::new([1, 1, 1], [1.0, 0.0, 1.0]).is_err());
        assert!(Geometry::new([1, 1, 1], [1.0, f64::NAN, 1.0]).is_err());
        let g = geom([2, 2, 2]);
        assert!(ScalarVolume::new(g, vec![0.0; 7]).is_err());
        let mut data = vec![0.0; 8];
        data[3] = f32::NAN;
        assert!(ScalarVolume::new(g, data).is_err());
        assert!(LabelVolume::new(g, vec![0; 9]).is_err());
        assert!(VectorField::new(g, vec![[0.0, f32::INFINITY, 0.0]; 8]).is_err());
    }

    #[test]
    fn index_and_coords_are_inverse() {
        let g = geom([3, 4, 5]);
        for idx in 0..g.len() {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
    }

    #[test]
    fn trilinear_constant_field() {
        let vol = ScalarVolume::filled(geom([4, 5, 6]), 5.0).unwrap();
        for p in [
            GridPoint::new(0.3, 2.7, 4.1),
            GridPoint::new(-10.0, 100.0, 2.5),
            GridPoint::new(3.0, 4.0, 5.0),
        ] {
            assert_eq!(vol.sample_trilinear(p), 5.0);
        }
    }

    #[test]
    fn trilinear_at_voxel_center() {
        let vol = ramp([5, 6, 7]);
        let p = GridPoint::new(2.0, 3.0, 4.0);
        assert_eq!(vol.sample_trilinear(p), f64::from(vol.get(2, 3, 4)));
    }

    #[test]
    fn trilinear_two_voxel_line() {
        let vol = ScalarVolume::new(geom([2, 1, 1]), vec![0.0, 10.0]).unwrap();
        assert_eq!(vol.sample_trilinear(GridPoint::new(0.25, 0.0, 0.0)), 2.5);
        // clamp-to-edge on both sides
        assert_eq!(vol.sample_trilinear(GridPoint::new(-4.0, 0.0, 0.0)), 0.0);
        assert_eq!(vol.sample_trilinear(GridPoint::new(7.0, 0.0, 0.0)), 10.0);
    }

    #[test]
    fn trilinear_keeps_negative_zero() {
        let vol = ScalarVolume::new(geom([2, 1, 1]), vec![-0.0, 3.0]).unwrap();
        let v = vol.sample_trilinear(GridPoint::new(0.0, 0.0, 0.0));
        assert_eq!(v.to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn nearest_examples() {
        let labels = LabelVolume::new(geom([2, 1, 1]), vec![1, 2]).unwrap();
        assert_eq!(labels.sample_nearest(GridPoint::new(0.0, 0.0, 0.0)), 1);
        assert_eq!(labels.sample_nearest(GridPoint::new(1.0, 0.0, 0.0)), 2);
        assert_eq!(labels.sample_nearest(GridPoint::new(0.49, 0.0, 0.0)), 1);
        assert_eq!(labels.sample_nearest(GridPoint::new(0.5, 0.0, 0.0)), 1);
        assert_eq!(labels.sample_nearest(GridPoint::new(0.51, 0.0, 0.0)), 2);
        assert_eq!(labels.sample_nearest(GridPoint::new(-3.0, 0.0, 0.0)), 1);
        assert_eq!(labels.sample_nearest(GridPoint::new(9.0, 0.0, 0.0)), 2);
    }

    #[test]
    fn classes_and_counts() {
        let labels = LabelVolume::new(geom([2, 2, 1]), vec![0, 3, 3, 7]).unwrap();
        assert_eq!(labels.classes().into_iter().collect::<Vec<_>>(), [0, 3, 7]);
        assert_eq!(labels.count(3), 2);
        assert_eq!(labels.count(9), 0);
    }

    proptest! {
        #[test]
        fn trilinear_reproduces_grid_values(i in 0usize..5, j in 0usize..6, k in 0usize..7) {
            let vol = ramp([5, 6, 7]);
            let v = vol.sample_trilinear(GridPoint::from_index([i, j, k]));
            prop_assert_eq!(v.to_bits(), f64::from(vol.get(i, j, k)).to_bits());
        }

        #[test]
        fn trilinear_bounded_by_neighbors(
            data in proptest::collection::vec(-100.0f32..100.0, 27),
            x in -1.0f64..3.0, y in -1.0f64..3.0, z in -1.0f64..3.0,
        ) {
            let vol = ScalarVolume::new(geom([3, 3, 3]), data).unwrap();
            let p = GridPoint::new(x, y, z);
            let v = vol.sample_trilinear(p);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let c = |q: f64, d: usize| ((q.clamp(0.0, 2.0).floor() as usize) + d).min(2);
                        let n = f64::from(vol.get(c(x, dx), c(y, dy), c(z, dz)));
                        lo = lo.min(n);
                        hi = hi.max(n);
                    }
                }
            }
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }

        #[test]
        fn nearest_returns_present_value(
            data in proptest::collection::vec(0u8..6, 24),
            x in -5.0f64..8.0, y in -5.0f64..8.0, z in -5.0f64..8.0,
        ) {
            let labels = LabelVolume::new(geom([2, 3, 4]), data).unwrap();
            let v = labels.sample_nearest(GridPoint::new(x, y, z));
            prop_assert!(labels.data().contains(&v));
        }
    }
}
