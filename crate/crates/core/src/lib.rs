//! Shape transformation driven by active-contour evolution.
//!
//! Enlarges selected label classes of a 3D image/label pair by resampling
//! both volumes along the steepest-descent direction of the classes' signed
//! distance field. The displacement decays exponentially with distance from
//! the surface, so voxels away from the enlarged structures are untouched.
//!
//! ```no_run
//! use stac_core::{augment_pair, phantom::PhantomSpec, AugmentParams, ClassSet};
//!
//! let phantom = PhantomSpec::multi_organ([64, 64, 64]).generate()?;
//! let pair = augment_pair(
//!     &phantom.image,
//!     &phantom.label,
//!     &ClassSet::from([2]),
//!     &AugmentParams::default(),
//! )?;
//! assert!(pair.label.count(2) > phantom.label.count(2));
//! # Ok::<(), stac_core::StacError>(())
//! ```

pub mod deform;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod sdf;
pub mod verify;
pub mod warp;

pub use deform::{deformation_map, gradient_field, weight_field, AugmentParams};
pub use error::{Result, StacError};
pub use grid::{ClassSet, Geometry, GridPoint, LabelVolume, ScalarVolume, VectorField};
pub use metrics::{
    average_surface_distance, class_histogram, dice, select_minority, ClassStats, MinorityPolicy,
};
pub use sdf::{
    brute_force_sdf, centered_signed_distance, edt_squared, evolve_level_set_step, signed_distance,
    SdfVolume,
};
pub use warp::{
    augment_pair, augment_with_sdf, warp_label, warp_scalar, AugmentedPair, Provenance, SdfSource,
};
