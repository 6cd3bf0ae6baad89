//! MetaImage (`.mhd` header + `.raw` payload) reading and writing.
//!
//! Only uncompressed, little-endian, single-channel 3D volumes are handled:
//! `MET_UCHAR` payloads become [`LabelVolume`]s and `MET_FLOAT` payloads
//! become [`ScalarVolume`]s. Writes go through temporary files in the
//! destination directory and are renamed into place, so a failure never
//! leaves a truncated volume behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

use crate::error::{Result, StacError};
use crate::grid::{Geometry, LabelVolume, ScalarVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    UChar,
    Float,
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::UChar => 1,
            ElementType::Float => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementType::UChar => "MET_UCHAR",
            ElementType::Float => "MET_FLOAT",
        }
    }
}

/// Parsed header fields.
#[derive(Clone, Debug, PartialEq)]
pub struct MhdHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub element_type: ElementType,
    /// Payload path as written in the header.
    pub data_file: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    Label(LabelVolume),
}

impl Volume {
    pub fn geometry(&self) -> &Geometry {
        match self {
            Volume::Scalar(v) => v.geometry(),
            Volume::Label(v) => v.geometry(),
        }
    }

    pub fn element_type(&self) -> ElementType {
        match self {
            Volume::Scalar(_) => ElementType::Float,
            Volume::Label(_) => ElementType::UChar,
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            Volume::Scalar(v) => v.data().iter().flat_map(|x| x.to_le_bytes()).collect(),
            Volume::Label(v) => v.data().to_vec(),
        }
    }
}

impl From<ScalarVolume> for Volume {
    fn from(v: ScalarVolume) -> Self {
        Volume::Scalar(v)
    }
}

impl From<LabelVolume> for Volume {
    fn from(v: LabelVolume) -> Self {
        Volume::Label(v)
    }
}

fn parse_err(path: &Path, reason: impl Into<String>) -> StacError {
    StacError::Parse {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn unsupported(path: &Path, reason: impl Into<String>) -> StacError {
    StacError::Unsupported {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn parse_triple<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<[T; 3]> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(parse_err(
            path,
            format!("{key} needs 3 values, got {value:?}"),
        ));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(
            p.parse::<T>()
                .map_err(|_| parse_err(path, format!("bad {key} entry {p:?}")))?,
        );
    }
    out.try_into()
        .map_err(|_| parse_err(path, format!("bad {key}")))
}

fn parse_bool(path: &Path, key: &str, value: &str) -> Result<bool> {
    match value {
        "True" | "true" | "1" => Ok(true),
        "False" | "false" | "0" => Ok(false),
        _ => Err(parse_err(
            path,
            format!("{key} must be True or False, got {value:?}"),
        )),
    }
}

/// Parses header text. Keys are case-sensitive, one `Key = Value` per line.
pub fn parse_header(path: &Path, text: &str) -> Result<MhdHeader> {
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, format!("expected `Key = Value`, got {line:?}")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(parse_err(path, format!("empty key in {line:?}")));
        }
        if fields.insert(key, value.trim()).is_some() {
            return Err(parse_err(path, format!("duplicate key {key}")));
        }
    }
    let require = |key: &str| {
        fields
            .get(key)
            .copied()
            .ok_or_else(|| parse_err(path, format!("missing {key}")))
    };

    let object_type = require("ObjectType")?;
    if object_type != "Image" {
        return Err(unsupported(path, format!("ObjectType {object_type}")));
    }
    let ndims: usize = require("NDims")?
        .parse()
        .map_err(|_| parse_err(path, "NDims is not an integer"))?;
    if ndims != 3 {
        return Err(unsupported(
            path,
            format!("NDims = {ndims}, only 3 is supported"),
        ));
    }
    let dims: [usize; 3] = parse_triple(path, "DimSize", require("DimSize")?)?;
    if dims.contains(&0) {
        return Err(parse_err(path, "DimSize entries must be positive"));
    }
    let spacing: [f64; 3] = match fields.get("ElementSpacing") {
        Some(v) => parse_triple(path, "ElementSpacing", v)?,
        None => [1.0; 3],
    };
    if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(parse_err(path, "ElementSpacing entries must be positive"));
    }
    let element_type = match require("ElementType")? {
        "MET_UCHAR" => ElementType::UChar,
        "MET_FLOAT" => ElementType::Float,
        other => return Err(unsupported(path, format!("ElementType {other}"))),
    };
    for key in ["ElementByteOrderMSB", "BinaryDataByteOrderMSB"] {
        if let Some(v) = fields.get(key) {
            if parse_bool(path, key, v)? {
                return Err(unsupported(path, "big-endian payload"));
            }
        }
    }
    if let Some(v) = fields.get("CompressedData") {
        if parse_bool(path, "CompressedData", v)? {
            return Err(unsupported(path, "compressed payload"));
        }
    }
    if let Some(v) = fields.get("BinaryData") {
        if !parse_bool(path, "BinaryData", v)? {
            return Err(unsupported(path, "ASCII payload"));
        }
    }
    if let Some(v) = fields.get("ElementNumberOfChannels") {
        if *v != "1" {
            return Err(unsupported(path, format!("{v} channels")));
        }
    }
    if let Some(v) = fields.get("HeaderSize") {
        if *v != "0" {
            return Err(unsupported(path, format!("HeaderSize {v}")));
        }
    }
    let data_file = require("ElementDataFile")?;
    if data_file == "LOCAL" || data_file.starts_with("LIST") || data_file.contains('%') {
        return Err(unsupported(path, format!("ElementDataFile {data_file}")));
    }
    Ok(MhdHeader {
        dims,
        spacing,
        element_type,
        data_file: data_file.to_string(),
    })
}

pub fn read_header(path: &Path) -> Result<MhdHeader> {
    let text = fs::read_to_string(path).map_err(|e| StacError::io(path, e))?;
    parse_header(path, &text)
}

fn payload_path(header_path: &Path, data_file: &str) -> PathBuf {
    match header_path.parent() {
        Some(dir) => dir.join(data_file),
        None => PathBuf::from(data_file),
    }
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    let header = read_header(path)?;
    let geometry =
        Geometry::new(header.dims, header.spacing).map_err(|e| parse_err(path, e.to_string()))?;
    let raw_path = payload_path(path, &header.data_file);
    let bytes = fs::read(&raw_path).map_err(|e| StacError::io(&raw_path, e))?;
    let expected = geometry.len() as u64 * header.element_type.size() as u64;
    if bytes.len() as u64 != expected {
        return Err(StacError::SizeMismatch {
            path: raw_path,
            expected,
            actual: bytes.len() as u64,
        });
    }
    Ok(match header.element_type {
        ElementType::UChar => Volume::Label(LabelVolume::new(geometry, bytes)?),
        ElementType::Float => {
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Volume::Scalar(ScalarVolume::new(geometry, data)?)
        }
    })
}

pub fn read_scalar(path: &Path) -> Result<ScalarVolume> {
    match read_volume(path)? {
        Volume::Scalar(v) => Ok(v),
        Volume::Label(_) => Err(unsupported(
            path,
            "expected MET_FLOAT image, found MET_UCHAR",
        )),
    }
}

pub fn read_label(path: &Path) -> Result<LabelVolume> {
    match read_volume(path)? {
        Volume::Label(v) => Ok(v),
        Volume::Scalar(_) => Err(unsupported(
            path,
            "expected MET_UCHAR label, found MET_FLOAT",
        )),
    }
}

/// Header text for `volume` with the given payload file name.
pub fn header_text(volume: &Volume, data_file: &str) -> String {
    let g = volume.geometry();
    let [nx, ny, nz] = g.dims();
    let [sx, sy, sz] = g.spacing();
    format!(
        "ObjectType = Image\n\
         NDims = 3\n\
         BinaryData = True\n\
         ElementByteOrderMSB = False\n\
         CompressedData = False\n\
         DimSize = {nx} {ny} {nz}\n\
         ElementSpacing = {sx} {sy} {sz}\n\
         ElementType = {}\n\
         ElementDataFile = {data_file}\n",
        volume.element_type().as_str()
    )
}

/// Payload path for a header: same stem, `.raw` extension.
pub fn raw_path_for(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn staged(target: &Path, bytes: &[u8]) -> Result<NamedTempFile> {
    let dir = match target.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| StacError::io(target, e))?;
    tmp.write_all(bytes).map_err(|e| StacError::io(target, e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| StacError::io(target, e))?;
    Ok(tmp)
}

/// Writes bytes to `path` via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    staged(path, bytes)?
        .persist(path)
        .map_err(|e| StacError::io(path, e.error))?;
    Ok(())
}

/// Writes several volumes so that either all header/payload pairs land or,
/// if staging fails, none of the targets is touched.
pub fn write_volumes(items: &[(&Volume, &Path)]) -> Result<()> {
    let mut pending = Vec::with_capacity(items.len() * 2);
    for (volume, header_path) in items {
        let raw = raw_path_for(header_path);
        let data_file = raw
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| parse_err(header_path, "payload file name is not valid UTF-8"))?
            .to_string();
        pending.push((staged(&raw, &volume.payload())?, raw));
        let text = header_text(volume, &data_file);
        pending.push((
            staged(header_path, text.as_bytes())?,
            header_path.to_path_buf(),
        ));
    }
    for (tmp, target) in pending {
        tmp.persist(&target)
            .map_err(|e| StacError::io(&target, e.error))?;
    }
    Ok(())
}

/// Writes `<path>` (header) and `<path stem>.raw` (payload).
pub fn write_volume(volume: &Volume, path: &Path) -> Result<()> {
    write_volumes(&[(volume, path)])
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementType = MET_UCHAR\nElementDataFile = v.raw\n";

    fn write_pair(dir: &Path, header: &str, payload: &[u8]) -> PathBuf {
        fs::write(dir.join("v.raw"), payload).unwrap();
        let p = dir.join("v.mhd");
        fs::write(&p, header).unwrap();
        p
    }

    #[test]
    fn short_payload_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_pair(dir.path(), HEADER, &[0; 7]);
        assert!(matches!(
            read_volume(&p),
            Err(StacError::SizeMismatch {
                expected: 8,
                actual: 7,
                ..
            })
        ));
    }

    #[test]
    fn unsupported_headers() {
        let dir = tempfile::tempdir().unwrap();
        for header in [
            HEADER.replace("MET_UCHAR", "MET_DOUBLE"),
            HEADER.replace("NDims = 3", "NDims = 2"),
            format!("{HEADER}ElementByteOrderMSB = True\n"),
            format!("{HEADER}BinaryDataByteOrderMSB = True\n"),
            format!("{HEADER}CompressedData = True\n"),
            HEADER.replace("v.raw", "LOCAL"),
        ] {
            let p = write_pair(dir.path(), &header, &[0; 8]);
            assert!(
                matches!(read_volume(&p), Err(StacError::Unsupported { .. })),
                "{header}"
            );
        }
    }

    #[test]
    fn malformed_headers() {
        let dir = tempfile::tempdir().unwrap();
        for header in [
            HEADER.replace("DimSize = 2 2 2", "DimSize = 2 2"),
            HEADER.replace("DimSize = 2 2 2", "DimSize = 2 x 2"),
            HEADER.replace("NDims = 3", "NDims 3"),
            HEADER.replace("ObjectType", "objecttype"),
            format!("{HEADER}NDims = 3\n"),
            format!("{HEADER}ElementSpacing = 1 0 1\n"),
        ] {
            let p = write_pair(dir.path(), &header, &[0; 8]);
            assert!(
                matches!(read_volume(&p), Err(StacError::Parse { .. })),
                "{header}"
            );
        }
    }

    #[test]
    fn accepts_optional_keys() {
        let dir = tempfile::tempdir().unwrap();
        let header = format!(
            "{HEADER}ElementSpacing = 0.5 1 2.25\nBinaryDataByteOrderMSB = False\nOffset = 0 0 0\n"
        );
        let p = write_pair(dir.path(), &header, &[1, 2, 3, 4, 5, 6, 7, 8]);
        let Volume::Label(v) = read_volume(&p).unwrap() else {
            panic!("expected labels")
        };
        assert_eq!(v.spacing(), [0.5, 1.0, 2.25]);
        assert_eq!(v.get(1, 1, 1), 8);
    }

    #[test]
    fn round_trip_and_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([3, 2, 2], [1.0, 1.0, 2.0]).unwrap();
        let img = ScalarVolume::new(g, (0..12).map(|i| i as f32 * -0.1 + 1e-30).collect()).unwrap();
        let path = dir.path().join("img.mhd");
        write_volume(&img.clone().into(), &path).unwrap();
        assert_eq!(read_scalar(&path).unwrap(), img);
        assert!(read_label(&path).is_err());

        let small = ScalarVolume::filled(Geometry::isotropic([1, 1, 2]).unwrap(), 3.0).unwrap();
        write_volume(&small.clone().into(), &path).unwrap();
        assert_eq!(read_scalar(&path).unwrap(), small);
        assert_eq!(fs::metadata(dir.path().join("img.raw")).unwrap().len(), 8);
    }

    #[test]
    fn header_layout() {
        let g = Geometry::new([4, 5, 6], [0.7, 1.0, 2.5]).unwrap();
        let v: Volume = LabelVolume::filled(g, 0).into();
        let text = header_text(&v, "x.raw");
        assert!(text.contains("DimSize = 4 5 6\n"));
        assert!(text.contains("ElementSpacing = 0.7 1 2.5\n"));
        assert!(text.contains("ElementType = MET_UCHAR\n"));
        assert!(text.ends_with("ElementDataFile = x.raw\n"));
    }

    #[test]
    fn failed_staging_leaves_targets_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("a.mhd");
        let bad = dir.path().join("missing").join("b.mhd");
        let v: Volume = LabelVolume::filled(Geometry::isotropic([2, 2, 2]).unwrap(), 1).into();
        assert!(write_volumes(&[(&v, &good), (&v, &bad)]).is_err());
        assert!(!good.exists());
        assert!(!dir.path().join("a.raw").exists());
    }
}
