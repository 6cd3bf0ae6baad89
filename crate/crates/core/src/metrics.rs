//! Class-imbalance statistics, minority selection and overlap metrics.

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, StacError};
use crate::grid::{ClassSet, Geometry, LabelVolume};
use crate::sdf::squared_distances;

/// Voxel statistics of a label volume. Serializes with keys in field order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassStats {
    pub counts: BTreeMap<u8, u64>,
    pub fractions: BTreeMap<u8, f64>,
    /// Largest over smallest foreground count; `None` without foreground.
    pub imbalance_ratio: Option<f64>,
    pub minority: Vec<u8>,
}

impl ClassStats {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    /// Foreground classes sorted by ascending count, ties by ascending ID.
    fn foreground_by_size(&self) -> Vec<(u8, u64)> {
        let mut fg: Vec<(u8, u64)> = self
            .counts
            .iter()
            .filter(|(&c, &n)| c != 0 && n > 0)
            .map(|(&c, &n)| (c, n))
            .collect();
        fg.sort_by_key(|&(c, n)| (n, c));
        fg
    }

    pub fn with_minority(mut self, minority: &ClassSet) -> Self {
        self.minority = minority.to_vec();
        self
    }
}

pub fn class_histogram(label: &LabelVolume) -> ClassStats {
    let mut bins = [0u64; 256];
    for &v in label.data() {
        bins[v as usize] += 1;
    }
    let total = label.data().len() as f64;
    let counts: BTreeMap<u8, u64> = bins
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(c, &n)| (c as u8, n))
        .collect();
    let fractions = counts
        .iter()
        .map(|(&c, &n)| (c, n as f64 / total))
        .collect();
    let fg: Vec<u64> = counts
        .iter()
        .filter(|(&c, _)| c != 0)
        .map(|(_, &n)| n)
        .collect();
    let imbalance_ratio = match (fg.iter().max(), fg.iter().min()) {
        (Some(&max), Some(&min)) => Some(max as f64 / min as f64),
        _ => None,
    };
    ClassStats {
        counts,
        fractions,
        imbalance_ratio,
        minority: Vec::new(),
    }
}

/// Rule for choosing which foreground classes to enlarge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MinorityPolicy {
    /// Every foreground class whose fraction is below the threshold.
    Fraction(f64),
    /// The `k` smallest foreground classes.
    Bottom(usize),
}

impl FromStr for MinorityPolicy {
    type Err = StacError;

    /// Parses `fraction:T` or `bottom:K`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || StacError::InvalidParams(format!("bad minority policy {s:?}"));
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "fraction" => {
                let t: f64 = value.parse().map_err(|_| bad())?;
                if !(t.is_finite() && t > 0.0) {
                    return Err(bad());
                }
                Ok(MinorityPolicy::Fraction(t))
            }
            "bottom" => {
                let k: usize = value.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(bad());
                }
                Ok(MinorityPolicy::Bottom(k))
            }
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for MinorityPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MinorityPolicy::Fraction(t) => write!(f, "fraction:{t}"),
            MinorityPolicy::Bottom(k) => write!(f, "bottom:{k}"),
        }
    }
}

pub fn select_minority(stats: &ClassStats, policy: MinorityPolicy) -> Result<ClassSet> {
    let fg = stats.foreground_by_size();
    if fg.is_empty() {
        return Err(StacError::NoForeground);
    }
    let total = stats.total() as f64;
    Ok(match policy {
        MinorityPolicy::Fraction(t) => fg
            .iter()
            .filter(|&&(_, n)| (n as f64 / total) < t)
            .map(|&(c, _)| c)
            .collect(),
        MinorityPolicy::Bottom(k) => fg.iter().take(k).map(|&(c, _)| c).collect(),
    })
}

/// Dice overlap of the class-`class` masks; 1.0 when both are empty.
pub fn dice(a: &LabelVolume, b: &LabelVolume, class: u8) -> Result<f64> {
    a.geometry().ensure_same(b.geometry(), "dice operands")?;
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (ia, ib) = (x == class, y == class);
        na += u64::from(ia);
        nb += u64::from(ib);
        both += u64::from(ia && ib);
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Foreground voxels with at least one face neighbor outside the mask.
/// Neighbors beyond the volume border count as outside.
pub(crate) fn surface_mask(label: &LabelVolume, class: u8) -> Vec<bool> {
    let g = label.geometry();
    let [nx, ny, nz] = g.dims();
    let data = label.data();
    (0..data.len())
        .into_par_iter()
        .map(|idx| {
            if data[idx] != class {
                return false;
            }
            let [i, j, k] = g.coords(idx);
            let on_border = i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz;
            on_border
                || data[idx - 1] != class
                || data[idx + 1] != class
                || data[idx - nx] != class
                || data[idx + nx] != class
                || data[idx - nx * ny] != class
                || data[idx + nx * ny] != class
        })
        .collect()
}

fn mean_directed(geometry: &Geometry, from: &[bool], to: &[bool]) -> f64 {
    let squared = squared_distances(geometry, |idx| to[idx]);
    let (sum, n) = from
        .iter()
        .zip(&squared)
        .filter(|(&s, _)| s)
        .fold((0.0, 0usize), |(sum, n), (_, &d)| (sum + d.sqrt(), n + 1));
    sum / n as f64
}

/// Symmetric average surface distance (mm) between the class-`class`
/// surfaces of `a` and `b`.
pub fn average_surface_distance(a: &LabelVolume, b: &LabelVolume, class: u8) -> Result<f64> {
    a.geometry()
        .ensure_same(b.geometry(), "surface distance operands")?;
    if a.count(class) == 0 || b.count(class) == 0 {
        return Err(StacError::EmptySurface(class));
    }
    let geometry = *a.geometry();
    let sa = surface_mask(a, class);
    let sb = surface_mask(b, class);
    Ok(0.5 * (mean_directed(&geometry, &sa, &sb) + mean_directed(&geometry, &sb, &sa)))
}
