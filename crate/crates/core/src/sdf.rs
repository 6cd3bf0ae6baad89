//! Exact Euclidean distance transforms and signed distance fields.
//!
//! The squared transform is computed with the separable lower-envelope
//! algorithm of Felzenszwalb and Huttenlocher: one linear-time pass of 1D
//! parabola envelopes per axis, each pass weighted by the squared spacing
//! of that axis so anisotropic grids stay exact.
//!
//! Signed fields follow the two-sided convention: a voxel inside the object
//! gets minus the distance to the nearest outside voxel center, a voxel
//! outside gets the distance to the nearest inside voxel center. No voxel is
//! exactly zero and every magnitude is at least the smallest spacing.

use std::ops::Deref;

use rayon::prelude::*;

use crate::error::{Result, StacError};
use crate::grid::{ClassSet, Geometry, LabelVolume, ScalarVolume};

/// Largest voxel count accepted by the brute-force oracles (32³).
pub const BRUTE_FORCE_LIMIT: usize = 32 * 32 * 32;

/// Signed physical distances; negative inside the object.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfVolume(ScalarVolume);

impl SdfVolume {
    /// Wraps an externally produced field (e.g. a predicted SDF). Values are
    /// taken as physical distances; no sign-partition check is made.
    pub fn from_volume(volume: ScalarVolume) -> Self {
        SdfVolume(volume)
    }

    pub fn volume(&self) -> &ScalarVolume {
        &self.0
    }

    pub fn into_volume(self) -> ScalarVolume {
        self.0
    }
}

impl Deref for SdfVolume {
    type Target = ScalarVolume;

    fn deref(&self) -> &ScalarVolume {
        &self.0
    }
}

/// Squared distance (mm²) from each voxel center to the nearest nonzero
/// voxel center of `mask`.
pub fn edt_squared(mask: &LabelVolume) -> Result<ScalarVolume> {
    let geometry = *mask.geometry();
    let data = mask.data();
    if !data.iter().any(|&v| v != 0) {
        return Err(StacError::EmptyMask);
    }
    let squared = squared_distances(&geometry, |idx| data[idx] != 0);
    ScalarVolume::new(geometry, squared.into_iter().map(|d| d as f32).collect())
}

/// Full-precision squared transform over an arbitrary predicate. Voxels are
/// infinite when no voxel satisfies `is_site`.
pub(crate) fn squared_distances<F>(geometry: &Geometry, is_site: F) -> Vec<f64>
where
    F: Fn(usize) -> bool + Sync,
{
    let mut field: Vec<f64> = (0..geometry.len())
        .into_par_iter()
        .map(|idx| if is_site(idx) { 0.0 } else { f64::INFINITY })
        .collect();
    for axis in 0..3 {
        transform_axis(&mut field, geometry, axis);
    }
    field
}

/// One separable pass along `axis`, in place.
fn transform_axis(field: &mut [f64], geometry: &Geometry, axis: usize) {
    let [nx, ny, nz] = geometry.dims();
    let s = geometry.spacing()[axis];
    let weight = s * s;

    match axis {
        0 => field.par_chunks_mut(nx).for_each_init(
            || Envelope::with_len(nx),
            |env, row| {
                env.transform(row, weight);
            },
        ),
        1 => field.par_chunks_mut(nx * ny).for_each_init(
            || (Envelope::with_len(ny), vec![0.0; ny]),
            |(env, line), slab| {
                for i in 0..nx {
                    for (j, v) in line.iter_mut().enumerate() {
                        *v = slab[i + nx * j];
                    }
                    env.transform(line, weight);
                    for (j, v) in line.iter().enumerate() {
                        slab[i + nx * j] = *v;
                    }
                }
            },
        ),
        _ => {
            // Lines along z are strided across slabs: gather into a
            // line-major scratch buffer, transform, scatter back.
            let plane = nx * ny;
            let mut scratch = vec![0.0; field.len()];
            {
                let source: &[f64] = field;
                scratch.par_chunks_mut(nz).enumerate().for_each_init(
                    || Envelope::with_len(nz),
                    |env, (line_idx, line)| {
                        for (k, v) in line.iter_mut().enumerate() {
                            *v = source[line_idx + plane * k];
                        }
                        env.transform(line, weight);
                    },
                );
            }
            field
                .par_chunks_mut(plane)
                .enumerate()
                .for_each(|(k, slab)| {
                    for (line_idx, v) in slab.iter_mut().enumerate() {
                        *v = scratch[line_idx * nz + k];
                    }
                });
        }
    }
}

/// Scratch space for the 1D lower envelope of parabolas.
struct Envelope {
    // Centers of the parabolas forming the envelope.
    centers: Vec<usize>,
    // Parabola `centers[i]` is lowest on [bounds[i], bounds[i + 1]).
    bounds: Vec<f64>,
    input: Vec<f64>,
}

impl Envelope {
    fn with_len(n: usize) -> Self {
        Envelope {
            centers: vec![0; n],
            bounds: vec![0.0; n + 1],
            input: vec![0.0; n],
        }
    }

    /// Replaces `line[q]` with `min_p weight * (q - p)^2 + line[p]`.
    fn transform(&mut self, line: &mut [f64], weight: f64) {
        self.input.clear();
        self.input.extend_from_slice(line);
        let f = &self.input;

        let Some(first) = f.iter().position(|v| v.is_finite()) else {
            return;
        };
        let key = |p: usize| f[p] + weight * (p * p) as f64;

        let mut k = 0;
        self.centers[0] = first;
        self.bounds[0] = f64::NEG_INFINITY;
        self.bounds[1] = f64::INFINITY;
        for (q, fq) in f.iter().enumerate().skip(first + 1) {
            if !fq.is_finite() {
                continue;
            }
            let intersect = |p: usize| (key(q) - key(p)) / (2.0 * weight * (q - p) as f64);
            // bounds[0] is -inf, so this stops at k == 0 at the latest
            let mut s = intersect(self.centers[k]);
            while s <= self.bounds[k] {
                k -= 1;
                s = intersect(self.centers[k]);
            }
            k += 1;
            self.centers[k] = q;
            self.bounds[k] = s;
            self.bounds[k + 1] = f64::INFINITY;
        }

        let mut k = 0;
        for (q, out) in line.iter_mut().enumerate() {
            while self.bounds[k + 1] < q as f64 {
                k += 1;
            }
            let p = self.centers[k];
            let d = q.abs_diff(p) as f64;
            *out = weight * d * d + f[p];
        }
    }
}

/// Membership mask of the object `{p | label(p) ∈ minority}` plus its size.
fn object_mask(label: &LabelVolume, minority: &ClassSet) -> (Vec<bool>, usize) {
    let table = minority.lookup();
    let inside: Vec<bool> = label.data().iter().map(|&v| table[v as usize]).collect();
    let count = inside.iter().filter(|&&b| b).count();
    (inside, count)
}

fn check_partition(count: usize, total: usize) -> Result<()> {
    if count == 0 {
        Err(StacError::EmptyMask)
    } else if count == total {
        Err(StacError::FullMask)
    } else {
        Ok(())
    }
}

/// Two-sided signed distance of the object formed by the `minority` classes.
pub fn signed_distance(label: &LabelVolume, minority: &ClassSet) -> Result<SdfVolume> {
    let geometry = *label.geometry();
    let (inside, count) = object_mask(label, minority);
    check_partition(count, inside.len())?;

    let to_object = squared_distances(&geometry, |idx| inside[idx]);
    let to_complement = squared_distances(&geometry, |idx| !inside[idx]);
    let data = inside
        .par_iter()
        .zip(to_object.par_iter().zip(to_complement.par_iter()))
        .map(|(&is_in, (&d_out, &d_in))| {
            if is_in {
                -(d_in.sqrt()) as f32
            } else {
                d_out.sqrt() as f32
            }
        })
        .collect();
    Ok(SdfVolume(ScalarVolume::new(geometry, data)?))
}

/// Signed distance with the zero level set moved midway between adjacent
/// inside and outside voxel centers: the two-sided field pulled toward zero
/// by half the smallest spacing.
///
/// This is the field the augmentation pipeline deforms with. Under the
/// two-sided convention every voxel sits at least one voxel from the
/// surface, so an exponential weight never reaches the half-voxel offset
/// that nearest-neighbor label resampling needs to move the boundary.
pub fn centered_signed_distance(label: &LabelVolume, minority: &ClassSet) -> Result<SdfVolume> {
    let two_sided = signed_distance(label, minority)?;
    let half = 0.5 * two_sided.geometry().min_spacing();
    let geometry = *two_sided.geometry();
    let data = two_sided
        .data()
        .iter()
        .map(|&v| {
            let v = f64::from(v);
            (v - v.signum() * half) as f32
        })
        .collect();
    Ok(SdfVolume(ScalarVolume::new(geometry, data)?))
}

fn physical_offsets(geometry: &Geometry, sites: impl Iterator<Item = usize>) -> Vec<[f64; 3]> {
    let s = geometry.spacing();
    sites
        .map(|idx| {
            let [i, j, k] = geometry.coords(idx);
            [i as f64 * s[0], j as f64 * s[1], k as f64 * s[2]]
        })
        .collect()
}

fn nearest_squared(p: [f64; 3], sites: &[[f64; 3]]) -> f64 {
    sites
        .iter()
        .map(|q| {
            let dx = p[0] - q[0];
            let dy = p[1] - q[1];
            let dz = p[2] - q[2];
            dx * dx + dy * dy + dz * dz
        })
        .fold(f64::INFINITY, f64::min)
}

fn guard_size(geometry: &Geometry) -> Result<()> {
    if geometry.len() > BRUTE_FORCE_LIMIT {
        Err(StacError::TooLarge {
            voxels: geometry.len(),
            limit: BRUTE_FORCE_LIMIT,
        })
    } else {
        Ok(())
    }
}

/// All-pairs squared distance transform. Quadratic; for verification only.
pub fn brute_force_edt_squared(mask: &LabelVolume) -> Result<ScalarVolume> {
    let geometry = *mask.geometry();
    guard_size(&geometry)?;
    let data = mask.data();
    let sites = physical_offsets(&geometry, (0..data.len()).filter(|&i| data[i] != 0));
    if sites.is_empty() {
        return Err(StacError::EmptyMask);
    }
    let all = physical_offsets(&geometry, 0..data.len());
    let out = all
        .par_iter()
        .map(|&p| nearest_squared(p, &sites) as f32)
        .collect();
    ScalarVolume::new(geometry, out)
}

/// Exhaustive-search counterpart of [`signed_distance`]. For verification only.
pub fn brute_force_sdf(label: &LabelVolume, minority: &ClassSet) -> Result<SdfVolume> {
    let geometry = *label.geometry();
    guard_size(&geometry)?;
    let (inside, count) = object_mask(label, minority);
    check_partition(count, inside.len())?;

    let inner = physical_offsets(&geometry, (0..inside.len()).filter(|&i| inside[i]));
    let outer = physical_offsets(&geometry, (0..inside.len()).filter(|&i| !inside[i]));
    let all = physical_offsets(&geometry, 0..inside.len());
    let data = all
        .par_iter()
        .zip(inside.par_iter())
        .map(|(&p, &is_in)| {
            if is_in {
                -(nearest_squared(p, &outer).sqrt()) as f32
            } else {
                nearest_squared(p, &inner).sqrt() as f32
            }
        })
        .collect();
    Ok(SdfVolume(ScalarVolume::new(geometry, data)?))
}

/// One explicit Euler step of `∂φ/∂t = V‖∇φ‖`.
///
/// The gradient magnitude uses Godunov upwinding: backward-biased
/// differences where `V > 0`, forward-biased where `V < 0`. On a boundary
/// face the missing one-sided difference is replaced by the available one.
/// Requires `dt * max|V| <= 0.5 * min(spacing)`.
pub fn evolve_level_set_step(
    phi: &ScalarVolume,
    speed: &ScalarVolume,
    dt: f64,
) -> Result<ScalarVolume> {
    let geometry = *phi.geometry();
    geometry.ensure_same(speed.geometry(), "level set and speed")?;
    if !(dt.is_finite() && dt >= 0.0) {
        return Err(StacError::InvalidParams(format!(
            "time step must be finite and non-negative, got {dt}"
        )));
    }
    let max_speed = speed
        .data()
        .iter()
        .fold(0.0f64, |m, &v| m.max(f64::from(v).abs()));
    let step = dt * max_speed;
    let limit = 0.5 * geometry.min_spacing();
    if step > limit {
        return Err(StacError::CflViolation { step, limit });
    }

    let dims = geometry.dims();
    let spacing = geometry.spacing();
    let values = phi.data();
    let data = (0..geometry.len())
        .into_par_iter()
        .map(|idx| {
            let current = values[idx];
            let v = f64::from(speed.data()[idx]);
            if v == 0.0 {
                return current;
            }
            let c = geometry.coords(idx);
            let mut sum = 0.0;
            for (axis, &h) in spacing.iter().enumerate() {
                let (back, fwd) = one_sided(values, &geometry, dims, c, axis, h);
                sum += if v > 0.0 {
                    back.min(0.0).powi(2) + fwd.max(0.0).powi(2)
                } else {
                    back.max(0.0).powi(2) + fwd.min(0.0).powi(2)
                };
            }
            (f64::from(current) + dt * v * sum.sqrt()) as f32
        })
        .collect();
    ScalarVolume::new(geometry, data)
}

/// Backward and forward differences of `values` at `c` along `axis`.
fn one_sided(
    values: &[f32],
    geometry: &Geometry,
    dims: [usize; 3],
    c: [usize; 3],
    axis: usize,
    h: f64,
) -> (f64, f64) {
    let n = dims[axis];
    if n < 2 {
        return (0.0, 0.0);
    }
    let at = |offset: isize| {
        let mut q = c;
        q[axis] = (q[axis] as isize + offset) as usize;
        f64::from(values[geometry.index(q[0], q[1], q[2])])
    };
    let here = at(0);
    let back = (c[axis] > 0).then(|| (here - at(-1)) / h);
    let fwd = (c[axis] + 1 < n).then(|| (at(1) - here) / h);
    match (back, fwd) {
        (Some(b), Some(f)) => (b, f),
        (Some(b), None) => (b, b),
        (None, Some(f)) => (f, f),
        (None, None) => (0.0, 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(dims: [usize; 3], spacing: [f64; 3], data: Vec<u8>) -> LabelVolume {
        LabelVolume::new(Geometry::new(dims, spacing).unwrap(), data).unwrap()
    }

    #[test]
    fn edt_line_example() {
        let mask = labels([5, 1, 1], [1.0; 3], vec![0, 0, 1, 0, 0]);
        let d = edt_squared(&mask).unwrap();
        assert_eq!(d.data(), &[4.0, 1.0, 0.0, 1.0, 4.0]);
    }

    #[test]
    fn edt_all_foreground_is_zero() {
        let mask = labels([3, 4, 2], [1.0; 3], vec![1; 24]);
        assert!(edt_squared(&mask).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edt_empty_mask_errors() {
        let mask = labels([3, 3, 3], [1.0; 3], vec![0; 27]);
        assert!(matches!(edt_squared(&mask), Err(StacError::EmptyMask)));
    }

    #[test]
    fn edt_anisotropic_line() {
        let mask = labels([1, 1, 4], [1.0, 1.0, 2.5], vec![1, 0, 0, 0]);
        let d = edt_squared(&mask).unwrap();
        assert_eq!(d.data(), &[0.0, 6.25, 25.0, 56.25]);
    }

    #[test]
    fn single_voxel_sdf() {
        let mut data = vec![0u8; 27];
        data[0] = 1;
        let label = labels([3, 3, 3], [1.0; 3], data);
        let phi = signed_distance(&label, &ClassSet::from([1])).unwrap();
        assert_eq!(phi.get(0, 0, 0), -1.0);
        assert_eq!(phi.get(1, 0, 0), 1.0);
        assert_eq!(phi.get(0, 1, 0), 1.0);
        assert_eq!(phi.get(0, 0, 1), 1.0);
        assert_eq!(phi.get(1, 1, 1), 3f32.sqrt());
        let oracle = brute_force_sdf(&label, &ClassSet::from([1])).unwrap();
        assert_eq!(phi, oracle);
    }

    #[test]
    fn anisotropic_slab() {
        // 3x3x3 with the middle z-plane as the object, spacing 2 along z.
        let g = Geometry::new([3, 3, 3], [1.0, 1.0, 2.0]).unwrap();
        let label = LabelVolume::from_fn(g, |[_, _, k]| u8::from(k == 1));
        let phi = signed_distance(&label, &ClassSet::from([1])).unwrap();
        assert_eq!(phi.get(1, 1, 0), 2.0);
        assert_eq!(phi.get(1, 1, 2), 2.0);
        assert_eq!(phi.get(1, 1, 1), -2.0);
    }

    #[test]
    fn partition_errors() {
        let label = labels([2, 2, 2], [1.0; 3], vec![1; 8]);
        let m = ClassSet::from([1]);
        assert!(matches!(
            signed_distance(&label, &m),
            Err(StacError::FullMask)
        ));
        assert!(matches!(
            brute_force_sdf(&label, &m),
            Err(StacError::FullMask)
        ));
        let other = ClassSet::from([4]);
        assert!(matches!(
            signed_distance(&label, &other),
            Err(StacError::EmptyMask)
        ));
        assert!(matches!(
            signed_distance(&label, &ClassSet::new()),
            Err(StacError::EmptyMask)
        ));
    }

    #[test]
    fn brute_force_size_guard() {
        let label = labels([33, 32, 32], [1.0; 3], vec![0; 33 * 32 * 32]);
        assert!(matches!(
            brute_force_sdf(&label, &ClassSet::from([1])),
            Err(StacError::TooLarge { .. })
        ));
    }

    #[test]
    fn centered_field_shifts_by_half_voxel() {
        let label = labels([5, 1, 1], [1.0; 3], vec![1, 1, 0, 0, 0]);
        let phi = centered_signed_distance(&label, &ClassSet::from([1])).unwrap();
        assert_eq!(phi.data(), &[-1.5, -0.5, 0.5, 1.5, 2.5]);
    }

    #[test]
    fn level_set_zero_speed_is_identity() {
        let g = Geometry::isotropic([6, 5, 4]).unwrap();
        let phi = ScalarVolume::from_fn(g, |[i, j, k]| (i as f64 - 2.3).hypot(j as f64 - k as f64))
            .unwrap();
        let v = ScalarVolume::filled(g, 0.0).unwrap();
        assert_eq!(evolve_level_set_step(&phi, &v, 0.4).unwrap(), phi);
    }

    #[test]
    fn level_set_ramp_moves_pointwise() {
        let g = Geometry::isotropic([8, 3, 3]).unwrap();
        let phi = ScalarVolume::from_fn(g, |[i, _, _]| i as f64 - 3.5).unwrap();
        for speed in [1.0f32, -1.0] {
            let v = ScalarVolume::filled(g, speed).unwrap();
            let out = evolve_level_set_step(&phi, &v, 0.25).unwrap();
            for (a, b) in out.data().iter().zip(phi.data()) {
                assert!((f64::from(*a) - (f64::from(*b) + 0.25 * f64::from(speed))).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn level_set_cfl_violation() {
        let g = Geometry::new([4, 4, 4], [1.0, 1.0, 0.5]).unwrap();
        let phi = ScalarVolume::filled(g, 1.0).unwrap();
        let v = ScalarVolume::filled(g, 2.0).unwrap();
        // limit is 0.25; 0.2 * 2 = 0.4
        assert!(matches!(
            evolve_level_set_step(&phi, &v, 0.2),
            Err(StacError::CflViolation { .. })
        ));
        assert!(evolve_level_set_step(&phi, &v, 0.125).is_ok());
    }

    fn random_mask(dims: [usize; 3], bits: &[bool]) -> LabelVolume {
        let g = Geometry::isotropic(dims).unwrap();
        LabelVolume::new(g, bits.iter().map(|&b| u8::from(b)).collect()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn edt_matches_brute_force(bits in proptest::collection::vec(proptest::bool::weighted(0.1), 6 * 5 * 7)) {
            prop_assume!(bits.iter().any(|&b| b));
            let mask = random_mask([6, 5, 7], &bits);
            prop_assert_eq!(edt_squared(&mask).unwrap(), brute_force_edt_squared(&mask).unwrap());
        }

        #[test]
        fn edt_matches_brute_force_anisotropic(
            bits in proptest::collection::vec(proptest::bool::weighted(0.15), 5 * 6 * 4),
            sx in 0.5f64..3.0, sy in 0.5f64..3.0, sz in 0.5f64..3.0,
        ) {
            prop_assume!(bits.iter().any(|&b| b));
            let g = Geometry::new([5, 6, 4], [sx, sy, sz]).unwrap();
            let mask = LabelVolume::new(g, bits.iter().map(|&b| u8::from(b)).collect()).unwrap();
            let fast = edt_squared(&mask).unwrap();
            let slow = brute_force_edt_squared(&mask).unwrap();
            for (a, b) in fast.data().iter().zip(slow.data()) {
                prop_assert!((a - b).abs() <= 1e-5 * b.max(1.0));
            }
        }

        #[test]
        fn sdf_sign_partition_and_symmetry(bits in proptest::collection::vec(proptest::bool::weighted(0.3), 5 * 5 * 5)) {
            prop_assume!(bits.iter().any(|&b| b) && bits.iter().any(|&b| !b));
            let label = random_mask([5, 5, 5], &bits);
            let phi = signed_distance(&label, &ClassSet::from([1])).unwrap();
            let flipped = signed_distance(&label, &ClassSet::from([0])).unwrap();
            for ((&v, &w), &inside) in phi.data().iter().zip(flipped.data()).zip(&bits) {
                prop_assert_eq!(v < 0.0, inside);
                prop_assert!(v.abs() >= 1.0);
                prop_assert_eq!(v, -w);
            }
        }
    }
}
