//! Self-checks that compare the library against independent oracles.

use std::f64::consts::PI;

use serde::Serialize;

use crate::deform::AugmentParams;
use crate::grid::{ClassSet, Geometry, GridPoint, LabelVolume};
use crate::phantom::{unit_sample, PhantomSpec};
use crate::sdf::{brute_force_edt_squared, edt_squared, signed_distance};
use crate::warp::augment_pair;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Root of `t = alpha * exp(beta * t)` by bisection on `[0, alpha]`.
pub fn surface_fixed_point(alpha: f64, beta: f64) -> f64 {
    let f = |t: f64| t - alpha * (beta * t).exp();
    let (mut lo, mut hi) = (0.0, alpha);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Radius of the sphere with the given volume.
pub fn equivalent_radius(volume: f64) -> f64 {
    (3.0 * volume / (4.0 * PI)).cbrt()
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
}

fn edt_brute_force() -> Check {
    let g = Geometry::isotropic([12, 12, 12]).unwrap();
    let mut mismatches = 0usize;
    let trials = 10u64;
    for trial in 0..trials {
        let density = 0.01 + 0.1 * trial as f64 / trials as f64;
        let mask = LabelVolume::from_fn(g, |c| {
            u8::from(unit_sample(trial, g.index(c[0], c[1], c[2]) as u64) < density)
        });
        if mask.count(1) == 0 {
            continue;
        }
        let (Ok(fast), Ok(slow)) = (edt_squared(&mask), brute_force_edt_squared(&mask)) else {
            mismatches += 1;
            continue;
        };
        if fast != slow {
            mismatches += 1;
        }
    }
    check(
        "edt matches brute force",
        mismatches == 0,
        format!("{trials} random 12^3 masks, {mismatches} mismatching"),
    )
}

fn sphere_sdf() -> Check {
    let run = || -> crate::Result<f64> {
        let p = PhantomSpec::sphere([64, 64, 64], 20.0).generate()?;
        let phi = signed_distance(&p.label, &ClassSet::from([1]))?;
        let analytic = p.analytic_sdf(1).expect("class 1 present");
        let g = *phi.geometry();
        Ok((0..g.len())
            .map(|idx| {
                let exact = analytic(GridPoint::from_index(g.coords(idx)));
                (f64::from(phi.data()[idx]) - exact).abs()
            })
            .fold(0.0, f64::max))
    };
    match run() {
        Ok(err) => check(
            "sphere signed distance",
            err <= 1.0,
            format!("R=20 in 64^3, max |error| = {err:.4} (limit 1.0)"),
        ),
        Err(e) => check("sphere signed distance", false, e.to_string()),
    }
}

fn identity_warp() -> Check {
    let run = || -> crate::Result<bool> {
        let p = PhantomSpec::multi_organ_with([48, 48, 48], 16.0, 4.0)
            .with_seed(3)
            .generate()?;
        let params = AugmentParams::new(0.0, -1.0)?;
        let pair = augment_pair(&p.image, &p.label, &ClassSet::from([2]), &params)?;
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        Ok(pair.label == p.label && bits(pair.image.data()) == bits(p.image.data()))
    };
    match run() {
        Ok(same) => check(
            "identity warp",
            same,
            "alpha = 0 reproduces the input bit for bit".into(),
        ),
        Err(e) => check("identity warp", false, e.to_string()),
    }
}

fn enlargement() -> Check {
    let run = || -> crate::Result<(f64, f64, usize, usize)> {
        let spec = PhantomSpec::sphere([64, 64, 64], 20.0).with_seed(42);
        let p = spec.generate()?;
        let pair = augment_pair(
            &p.image,
            &p.label,
            &ClassSet::from([1]),
            &AugmentParams::default(),
        )?;
        let (bg, fg) = (spec.background_mean, spec.organs[0].mean);
        let soft = |v: &[f32]| {
            v.iter()
                .map(|&x| (f64::from(x) - bg) / (fg - bg))
                .sum::<f64>()
        };
        let growth =
            equivalent_radius(soft(pair.image.data())) - equivalent_radius(soft(p.image.data()));
        Ok((
            growth,
            surface_fixed_point(1.0, -1.0),
            p.label.count(1),
            pair.label.count(1),
        ))
    };
    match run() {
        Ok((growth, expected, before, after)) => check(
            "enlargement magnitude",
            (growth - expected).abs() <= 0.15 && after > before,
            format!(
                "R=20 sphere radius grew by {growth:.4} (expected {expected:.4} +/- 0.15), label voxels {before} -> {after}"
            ),
        ),
        Err(e) => check("enlargement magnitude", false, e.to_string()),
    }
}

/// Runs every check; the suite passes when all of them do.
pub fn run_suite() -> Vec<Check> {
    vec![
        edt_brute_force(),
        sphere_sdf(),
        identity_warp(),
        enlargement(),
    ]
}
