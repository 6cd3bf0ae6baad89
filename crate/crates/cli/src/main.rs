//! `stac`: phantoms, signed distances, augmentation, statistics and
//! self-verification from the command line.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use stac_core::io::{self, Volume};
use stac_core::phantom::{PhantomSpec, Preset, Shape};
use stac_core::{
    augment_pair, augment_with_sdf, average_surface_distance, centered_signed_distance,
    class_histogram, dice, select_minority, signed_distance, verify, AugmentParams, ClassSet,
    MinorityPolicy, SdfVolume, StacError,
};

const EXIT_USAGE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_DOMAIN: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(
    name = "stac",
    version,
    about = "Shape transformation augmentation for 3D image/label volumes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic image/label pair.
    Phantom(PhantomArgs),
    /// Signed distance of a set of classes.
    Sdf(SdfArgs),
    /// Enlarge (or shrink) minority classes of an image/label pair.
    Augment(AugmentArgs),
    /// Per-class voxel statistics as JSON.
    Stats(StatsArgs),
    /// Dice and average surface distance between two label volumes.
    Metrics(MetricsArgs),
    /// Run the built-in oracle checks.
    Verify,
}

#[derive(Args)]
struct PhantomArgs {
    /// sphere, ellipsoid, box or multi_organ
    #[arg(long)]
    preset: String,
    #[arg(long, value_parser = parse_usize_triple)]
    dims: [usize; 3],
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_image: PathBuf,
    #[arg(long)]
    out_label: PathBuf,
    #[arg(long, value_parser = parse_f64_triple, default_value = "1,1,1")]
    spacing: [f64; 3],
    /// Sphere radius, or the large organ's radius for multi_organ.
    #[arg(long)]
    radius: Option<f64>,
    /// Small organ radius for multi_organ.
    #[arg(long)]
    minor_radius: Option<f64>,
    /// Ellipsoid semi-axes or box half-extents, in voxels.
    #[arg(long, value_parser = parse_f64_triple)]
    axes: Option<[f64; 3]>,
    /// Shape center in voxel coordinates (single-shape presets).
    #[arg(long, value_parser = parse_f64_triple)]
    center: Option<[f64; 3]>,
    /// Half-width of the uniform intensity noise.
    #[arg(long, default_value_t = 5.0)]
    noise: f64,
}

#[derive(Args)]
struct SdfArgs {
    #[arg(long)]
    label: PathBuf,
    /// Comma-separated class IDs forming the object.
    #[arg(long, value_parser = parse_class_list)]
    classes: ClassSet,
    #[arg(long)]
    out: PathBuf,
    /// Move the zero level midway between inside and outside voxel centers.
    #[arg(long)]
    centered: bool,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    label: PathBuf,
    /// `auto:fraction:T`, `auto:bottom:K` or a comma-separated class list.
    #[arg(long)]
    minority: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    beta: f64,
    /// Shrink the classes instead of enlarging them.
    #[arg(long)]
    shrink: bool,
    /// Add the raw gradient to the sampling position; same as --shrink.
    #[arg(long)]
    literal_eq4_sign: bool,
    #[arg(long)]
    out_image: PathBuf,
    #[arg(long)]
    out_label: PathBuf,
    /// Use this signed distance (MET_FLOAT) instead of computing one.
    #[arg(long)]
    sdf_in: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    label: PathBuf,
    #[arg(long)]
    json: PathBuf,
    /// Selection rule reported under "minority".
    #[arg(long, default_value = "auto:bottom:1")]
    minority: String,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, value_parser = parse_class_list)]
    classes: ClassSet,
    #[arg(long)]
    json: PathBuf,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let values = parts
        .iter()
        .map(|p| p.parse::<T>().map_err(|_| format!("bad value {p:?}")))
        .collect::<Result<Vec<T>, String>>()?;
    values
        .try_into()
        .map_err(|_| "expected three values".to_string())
}

fn parse_usize_triple(s: &str) -> Result<[usize; 3], String> {
    parse_triple(s)
}

fn parse_f64_triple(s: &str) -> Result<[f64; 3], String> {
    parse_triple(s)
}

fn parse_class_list(s: &str) -> Result<ClassSet, String> {
    let set = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<u8>()
                .map_err(|_| format!("bad class ID {p:?}"))
        })
        .collect::<Result<ClassSet, String>>()?;
    if set.is_empty() {
        return Err("empty class list".into());
    }
    Ok(set)
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<StacError> for Failure {
    fn from(e: StacError) -> Self {
        let code = match e {
            StacError::Io { .. }
            | StacError::Parse { .. }
            | StacError::SizeMismatch { .. }
            | StacError::Unsupported { .. } => EXIT_IO,
            _ => EXIT_DOMAIN,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn domain(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_DOMAIN,
        message: message.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| domain(e.to_string()))?;
    text.push('\n');
    io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| StacError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash of a header and its payload, so the digest covers the voxel data.
fn volume_digest(header: &Path) -> CliResult<String> {
    let parsed = io::read_header(header)?;
    let raw = header
        .parent()
        .unwrap_or(Path::new(""))
        .join(&parsed.data_file);
    let mut hasher = Sha256::new();
    hasher.update(sha256_file(header)?.as_bytes());
    hasher.update(sha256_file(&raw)?.as_bytes());
    Ok(hex::encode(hasher.finalize()))
}

fn sidecar_path(out_label: &Path) -> PathBuf {
    let mut name = out_label.file_stem().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    out_label.with_file_name(name)
}

fn phantom(args: PhantomArgs) -> CliResult {
    let preset: Preset = args
        .preset
        .parse()
        .map_err(|e: StacError| usage(e.to_string()))?;
    let center = args
        .center
        .unwrap_or(args.dims.map(|n| (n as f64 - 1.0) / 2.0));
    let mut spec = match preset {
        Preset::Sphere => PhantomSpec::sphere(args.dims, args.radius.unwrap_or(20.0)),
        Preset::Ellipsoid => {
            PhantomSpec::ellipsoid(args.dims, args.axes.unwrap_or([20.0, 15.0, 10.0]))
        }
        Preset::Box => PhantomSpec::cuboid(args.dims, args.axes.unwrap_or([15.0, 10.0, 8.0])),
        Preset::MultiOrgan => PhantomSpec::multi_organ_with(
            args.dims,
            args.radius.unwrap_or(24.0),
            args.minor_radius.unwrap_or(6.0),
        ),
    };
    if preset != Preset::MultiOrgan {
        let organ = &mut spec.organs[0];
        organ.shape = match organ.shape {
            Shape::Sphere { radius, .. } => Shape::Sphere { center, radius },
            Shape::Ellipsoid { semi_axes, .. } => Shape::Ellipsoid { center, semi_axes },
            Shape::Box { half_extents, .. } => Shape::Box {
                center,
                half_extents,
            },
        };
    }
    let spec = spec
        .with_seed(args.seed)
        .with_noise(args.noise)
        .with_spacing(args.spacing);
    let p = spec.generate()?;
    let image: Volume = p.image.into();
    let label: Volume = p.label.into();
    io::write_volumes(&[(&image, &args.out_image), (&label, &args.out_label)])?;
    Ok(())
}

fn sdf(args: SdfArgs) -> CliResult {
    let label = io::read_label(&args.label)?;
    let phi = if args.centered {
        centered_signed_distance(&label, &args.classes)?
    } else {
        signed_distance(&label, &args.classes)?
    };
    io::write_volume(&phi.into_volume().into(), &args.out)?;
    Ok(())
}

/// Resolves `auto:fraction:T`, `auto:bottom:K` or an explicit class list.
fn resolve_minority(spec: &str, label: &stac_core::LabelVolume) -> CliResult<ClassSet> {
    match spec.strip_prefix("auto:") {
        Some(policy) => {
            let policy: MinorityPolicy = policy
                .parse()
                .map_err(|e: StacError| usage(e.to_string()))?;
            Ok(select_minority(&class_histogram(label), policy)?)
        }
        None => parse_class_list(spec).map_err(usage),
    }
}

fn augment(args: AugmentArgs) -> CliResult {
    let params = AugmentParams::new(args.alpha, args.beta)?
        .with_enlarge(!(args.shrink || args.literal_eq4_sign));
    let image = io::read_scalar(&args.image)?;
    let label = io::read_label(&args.label)?;

    let mut sources = BTreeMap::new();
    sources.insert("image".to_string(), args.image.display().to_string());
    sources.insert("image_sha256".to_string(), volume_digest(&args.image)?);
    sources.insert("label".to_string(), args.label.display().to_string());
    sources.insert("label_sha256".to_string(), volume_digest(&args.label)?);

    let pair = match (&args.sdf_in, &args.minority) {
        (Some(sdf_path), minority) => {
            let phi = SdfVolume::from_volume(io::read_scalar(sdf_path)?);
            sources.insert("sdf".to_string(), sdf_path.display().to_string());
            sources.insert("sdf_sha256".to_string(), volume_digest(sdf_path)?);
            let mut pair = augment_with_sdf(&image, &label, &phi, &params)?;
            if let Some(m) = minority {
                pair.provenance.minority = resolve_minority(m, &label)?.to_vec();
                sources.insert("minority_rule".to_string(), m.clone());
            }
            pair
        }
        (None, Some(m)) => {
            let minority = resolve_minority(m, &label)?;
            sources.insert("minority_rule".to_string(), m.clone());
            augment_pair(&image, &label, &minority, &params)?
        }
        (None, None) => return Err(usage("--minority is required unless --sdf-in is given")),
    };

    let mut provenance = pair.provenance;
    provenance.sources.extend(sources);
    let out_image: Volume = pair.image.into();
    let out_label: Volume = pair.label.into();
    io::write_volumes(&[(&out_image, &args.out_image), (&out_label, &args.out_label)])?;
    write_json(&sidecar_path(&args.out_label), &provenance)?;
    Ok(())
}

fn stats(args: StatsArgs) -> CliResult {
    let label = io::read_label(&args.label)?;
    let stats = class_histogram(&label);
    let minority = match resolve_minority(&args.minority, &label) {
        Ok(m) => m,
        Err(f) if f.code == EXIT_DOMAIN && stats.imbalance_ratio.is_none() => ClassSet::new(),
        Err(f) => return Err(f),
    };
    write_json(&args.json, &stats.with_minority(&minority))
}

#[derive(Serialize)]
struct MetricsReport {
    dice: BTreeMap<u8, f64>,
    /// `None` when the class is missing from either volume.
    asd_mm: BTreeMap<u8, Option<f64>>,
}

fn metrics(args: MetricsArgs) -> CliResult {
    let pred = io::read_label(&args.pred)?;
    let reference = io::read_label(&args.reference)?;
    let mut report = MetricsReport {
        dice: BTreeMap::new(),
        asd_mm: BTreeMap::new(),
    };
    for class in args.classes.iter() {
        report.dice.insert(class, dice(&pred, &reference, class)?);
        let asd = match average_surface_distance(&pred, &reference, class) {
            Ok(v) => Some(v),
            Err(StacError::EmptySurface(_)) => None,
            Err(e) => return Err(e.into()),
        };
        report.asd_mm.insert(class, asd);
    }
    write_json(&args.json, &report)
}

fn run_verify() -> CliResult {
    let checks = verify::run_suite();
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!(
        "{} of {} checks passed",
        checks.len() - failed,
        checks.len()
    );
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY,
            message: format!("{failed} check(s) failed"),
        })
    }
}

fn configure_threads() -> CliResult {
    let Ok(value) = std::env::var("STAC_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().map_err(|_| {
        usage(format!(
            "STAC_THREADS must be a non-negative integer, got {value:?}"
        ))
    })?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| domain(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Sdf(a) => sdf(a),
        Command::Augment(a) => augment(a),
        Command::Stats(a) => stats(a),
        Command::Metrics(a) => metrics(a),
        Command::Verify => run_verify(),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("stac: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
