//! Backward warping and the end-to-end augmentation pipelines.
//!
//! Each output voxel `p` pulls its value from `p + D(p)/spacing`: trilinear
//! interpolation for images, nearest neighbor for labels, both clamped to
//! the volume edge. Image and label are resampled with one shared field.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::deform::{deformation_map, AugmentParams};
use crate::error::{Result, StacError};
use crate::grid::{ClassSet, LabelVolume, ScalarVolume, VectorField};
use crate::sdf::{centered_signed_distance, SdfVolume};

pub fn warp_scalar(x: &ScalarVolume, d: &VectorField) -> Result<ScalarVolume> {
    x.geometry()
        .ensure_same(d.geometry(), "image and displacement")?;
    let data = (0..x.data().len())
        .into_par_iter()
        .map(|idx| x.sample_trilinear(d.source_point(idx)) as f32)
        .collect();
    ScalarVolume::new(*x.geometry(), data)
}

pub fn warp_label(y: &LabelVolume, d: &VectorField) -> Result<LabelVolume> {
    y.geometry()
        .ensure_same(d.geometry(), "label and displacement")?;
    let data = (0..y.data().len())
        .into_par_iter()
        .map(|idx| y.sample_nearest(d.source_point(idx)))
        .collect();
    LabelVolume::new(*y.geometry(), data)
}

/// Where the signed distance driving an augmentation came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SdfSource {
    /// Computed from the label's minority classes.
    Label,
    /// Passed in by the caller, e.g. predicted by a network.
    Supplied,
}

/// Bookkeeping attached to every augmented pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub params: AugmentParams,
    /// `"enlarge"` or `"shrink"`.
    pub direction: String,
    pub minority: Vec<u8>,
    pub sdf_source: SdfSource,
    /// Free-form identifiers of the inputs (file names, hashes, policies).
    pub sources: BTreeMap<String, String>,
}

impl Provenance {
    fn new(params: &AugmentParams, minority: Vec<u8>, sdf_source: SdfSource) -> Self {
        Provenance {
            tool: "stac".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            params: *params,
            direction: if params.enlarge { "enlarge" } else { "shrink" }.into(),
            minority,
            sdf_source,
            sources: BTreeMap::new(),
        }
    }

    pub fn with_source(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.sources.insert(key.into(), value.into());
        self
    }
}

#[derive(Clone, Debug)]
pub struct AugmentedPair {
    pub image: ScalarVolume,
    pub label: LabelVolume,
    pub provenance: Provenance,
}

fn warp_pair(
    x: &ScalarVolume,
    y: &LabelVolume,
    phi: &ScalarVolume,
    params: &AugmentParams,
) -> Result<(ScalarVolume, LabelVolume)> {
    x.geometry().ensure_same(y.geometry(), "image and label")?;
    x.geometry()
        .ensure_same(phi.geometry(), "image and signed distance")?;
    let d = deformation_map(phi, params)?;
    Ok((warp_scalar(x, &d)?, warp_label(y, &d)?))
}

/// Enlarges (or shrinks) the `minority` classes of an image/label pair.
///
/// The driving field is [`centered_signed_distance`] of the minority union.
pub fn augment_pair(
    x: &ScalarVolume,
    y: &LabelVolume,
    minority: &ClassSet,
    params: &AugmentParams,
) -> Result<AugmentedPair> {
    params.validate()?;
    x.geometry().ensure_same(y.geometry(), "image and label")?;
    let table = minority.lookup();
    if !y.data().iter().any(|&v| table[v as usize]) {
        return Err(StacError::MinorityAbsent(minority.to_vec()));
    }
    let phi = centered_signed_distance(y, minority)?;
    let (image, label) = warp_pair(x, y, &phi, params)?;
    Ok(AugmentedPair {
        image,
        label,
        provenance: Provenance::new(params, minority.to_vec(), SdfSource::Label),
    })
}

/// Same as [`augment_pair`] but driven by a caller-supplied signed distance,
/// such as one predicted for an unlabeled image with a pseudo label.
pub fn augment_with_sdf(
    x: &ScalarVolume,
    y_pseudo: &LabelVolume,
    phi_pre: &SdfVolume,
    params: &AugmentParams,
) -> Result<AugmentedPair> {
    params.validate()?;
    let (image, label) = warp_pair(x, y_pseudo, phi_pre, params)?;
    Ok(AugmentedPair {
        image,
        label,
        provenance: Provenance::new(params, Vec::new(), SdfSource::Supplied),
    })
}
