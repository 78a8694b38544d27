//! MetaImage-style volume files with the pixel payload appended after the
//! header:
//!
//! ```text
//! NDims = 4
//! DimSize = 16 16 8 20
//! ElementSpacing = 1.5 1.5 8 1
//! ElementType = FLOAT32
//! ElementDataFile = LOCAL
//!
//! <little-endian payload, x fastest>
//! ```

use std::fs;
use std::path::Path;

use super::{LabelSchema, LabelVolume, ScalarVolume};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    Float32,
    Uint8,
}

impl ElementType {
    fn tag(self) -> &'static str {
        match self {
            ElementType::Float32 => "FLOAT32",
            ElementType::Uint8 => "UINT8",
        }
    }

    fn width(self) -> usize {
        match self {
            ElementType::Float32 => 4,
            ElementType::Uint8 => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VolumeKind {
    Scalar,
    Label,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    Label(LabelVolume),
}

struct Header {
    ndims: u8,
    dims: [usize; 4],
    spacing: [f64; 4],
    element: ElementType,
}

const KEYS: [&str; 5] = ["NDims", "DimSize", "ElementSpacing", "ElementType", "ElementDataFile"];

fn format_err(key: &str, message: impl Into<String>) -> Error {
    Error::Format {
        key: key.to_string(),
        message: message.into(),
    }
}

fn write_header(ndims: u8, dims: [usize; 4], spacing: [f64; 4], element: ElementType) -> Vec<u8> {
    let n = ndims as usize;
    let join_dims = dims[..n].iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" ");
    let join_sp = spacing[..n].iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
    format!(
        "NDims = {ndims}\nDimSize = {join_dims}\nElementSpacing = {join_sp}\nElementType = {}\nElementDataFile = LOCAL\n\n",
        element.tag()
    )
    .into_bytes()
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize)> {
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| format_err("header", "no blank line terminating the header"))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| format_err("header", "header is not ASCII"))?;
    let lines: Vec<&str> = text.split('\n').collect();
    if lines.len() != KEYS.len() {
        return Err(format_err(
            "header",
            format!("expected {} header lines, found {}", KEYS.len(), lines.len()),
        ));
    }
    let mut values = Vec::with_capacity(KEYS.len());
    for (line, key) in lines.iter().zip(KEYS) {
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| format_err(key, format!("expected `{key} = <value>`, got `{line}`")))?;
        if k != key {
            return Err(format_err(key, format!("expected key `{key}`, found `{k}`")));
        }
        values.push(v.trim());
    }

    let ndims: u8 = values[0]
        .parse()
        .map_err(|_| format_err("NDims", format!("not an integer: `{}`", values[0])))?;
    if ndims != 3 && ndims != 4 {
        return Err(format_err("NDims", format!("must be 3 or 4, got {ndims}")));
    }
    let n = ndims as usize;

    let dim_list: Vec<usize> = values[1]
        .split_whitespace()
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format_err("DimSize", format!("not a list of integers: `{}`", values[1])))?;
    if dim_list.len() != n || dim_list.contains(&0) {
        return Err(format_err(
            "DimSize",
            format!("need {n} positive integers, got `{}`", values[1]),
        ));
    }
    let sp_list: Vec<f64> = values[2]
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format_err("ElementSpacing", format!("not a list of reals: `{}`", values[2])))?;
    if sp_list.len() != n || sp_list.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(format_err(
            "ElementSpacing",
            format!("need {n} positive reals, got `{}`", values[2]),
        ));
    }
    let element = match values[3] {
        "FLOAT32" => ElementType::Float32,
        "UINT8" => ElementType::Uint8,
        other => return Err(format_err("ElementType", format!("unsupported `{other}`"))),
    };
    if values[4] != "LOCAL" {
        return Err(format_err(
            "ElementDataFile",
            format!("only LOCAL is supported, got `{}`", values[4]),
        ));
    }

    let mut dims = [1usize; 4];
    let mut spacing = [1.0f64; 4];
    dims[..n].copy_from_slice(&dim_list);
    spacing[..n].copy_from_slice(&sp_list);
    Ok((
        Header {
            ndims,
            dims,
            spacing,
            element,
        },
        end + 2,
    ))
}

pub fn encode_scalar(v: &ScalarVolume) -> Vec<u8> {
    let mut out = write_header(v.ndims(), v.dims(), v.spacing(), ElementType::Float32);
    out.reserve(v.data().len() * 4);
    for &x in v.data() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn encode_labels(v: &LabelVolume) -> Vec<u8> {
    let mut out = write_header(v.ndims(), v.dims(), v.spacing(), ElementType::Uint8);
    out.extend_from_slice(v.labels());
    out
}

/// Parse an in-memory file image.
pub fn decode_volume(bytes: &[u8], kind: VolumeKind, schema: &LabelSchema) -> Result<Volume> {
    let (h, offset) = parse_header(bytes)?;
    let count: usize = h.dims.iter().product();
    let expected = count * h.element.width();
    let payload = &bytes[offset..];
    if payload.len() != expected {
        return Err(Error::Size {
            expected,
            actual: payload.len(),
        });
    }
    match kind {
        VolumeKind::Scalar => {
            let data: Vec<f64> = match h.element {
                ElementType::Float32 => payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect(),
                ElementType::Uint8 => payload.iter().map(|&b| b as f64).collect(),
            };
            if let Some(i) = data.iter().position(|x| !x.is_finite()) {
                return Err(format_err("ElementData", format!("non-finite value at voxel {i}")));
            }
            let mut v = ScalarVolume::new(h.dims, h.spacing, data)?;
            v.ndims = h.ndims;
            Ok(Volume::Scalar(v))
        }
        VolumeKind::Label => {
            if h.element != ElementType::Uint8 {
                return Err(format_err("ElementType", "label volumes must be UINT8"));
            }
            if let Some(bad) = payload.iter().find(|&&l| !schema.contains(l)) {
                return Err(format_err("ElementData", format!("label {bad} is not in the schema")));
            }
            let mut v = LabelVolume::new(h.dims, h.spacing, payload.to_vec(), schema.clone())?;
            v.ndims = h.ndims;
            Ok(Volume::Label(v))
        }
    }
}

pub fn load_volume(path: impl AsRef<Path>, kind: VolumeKind) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes, kind, &LabelSchema::default())
}

pub fn load_scalar(path: impl AsRef<Path>) -> Result<ScalarVolume> {
    match load_volume(path, VolumeKind::Scalar)? {
        Volume::Scalar(v) => Ok(v),
        Volume::Label(_) => unreachable!("scalar kind requested"),
    }
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    match load_volume(path, VolumeKind::Label)? {
        Volume::Label(v) => Ok(v),
        Volume::Scalar(_) => unreachable!("label kind requested"),
    }
}

pub fn save_scalar(path: impl AsRef<Path>, v: &ScalarVolume) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_scalar(v)).map_err(|e| Error::io(path, e))
}

pub fn save_labels(path: impl AsRef<Path>, v: &LabelVolume) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_labels(v)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn header_layout_is_exact() {
        let v = ScalarVolume::new([2, 2, 1, 1], [1.5, 1.5, 8.0, 1.0], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_scalar(&v);
        let header = "NDims = 4\nDimSize = 2 2 1 1\nElementSpacing = 1.5 1.5 8 1\nElementType = FLOAT32\nElementDataFile = LOCAL\n\n";
        assert_eq!(&bytes[..header.len()], header.as_bytes());
        assert_eq!(bytes.len(), header.len() + 16);
        assert_eq!(&bytes[header.len() + 4..header.len() + 8], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[header.len() + 12..], &3.0f32.to_le_bytes());
    }

    #[test]
    fn small_float_file_loads_in_x_fastest_order() {
        let mut bytes = b"NDims = 4\nDimSize = 2 2 1 1\nElementSpacing = 1 1 1 1\nElementType = FLOAT32\nElementDataFile = LOCAL\n\n".to_vec();
        for x in [0.0f32, 1.0, 2.0, 3.0] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let Volume::Scalar(v) = decode_volume(&bytes, VolumeKind::Scalar, &LabelSchema::default()).unwrap() else {
            panic!("expected scalar");
        };
        assert_eq!(v.data(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(v.get(1, 0, 0, 0), 1.0);
        assert_eq!(v.get(0, 1, 0, 0), 2.0);
    }

    #[test]
    fn short_payload_reports_byte_counts() {
        let mut bytes = b"NDims = 4\nDimSize = 4 3 2 5\nElementSpacing = 1 1 1 1\nElementType = FLOAT32\nElementDataFile = LOCAL\n\n".to_vec();
        bytes.extend(std::iter::repeat_n(0u8, 100 * 4));
        match decode_volume(&bytes, VolumeKind::Scalar, &LabelSchema::default()) {
            Err(Error::Size { expected, actual }) => {
                assert_eq!(expected, 120 * 4);
                assert_eq!(actual, 100 * 4);
            }
            other => panic!("expected size error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_names_key() {
        let cases: [(&[u8], &str); 5] = [
            (b"NDims = 5\nDimSize = 1 1 1 1 1\nElementSpacing = 1 1 1 1 1\nElementType = UINT8\nElementDataFile = LOCAL\n\n", "NDims"),
            (b"NDims = 3\nDimSize = 1 x 1\nElementSpacing = 1 1 1\nElementType = UINT8\nElementDataFile = LOCAL\n\n", "DimSize"),
            (b"NDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 -1 1\nElementType = UINT8\nElementDataFile = LOCAL\n\n", "ElementSpacing"),
            (b"NDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 1 1\nElementType = INT16\nElementDataFile = LOCAL\n\n", "ElementType"),
            (b"NDims = 3\nDimSize = 1 1 1\nSpacing = 1 1 1\nElementType = UINT8\nElementDataFile = LOCAL\n\n", "ElementSpacing"),
        ];
        for (bytes, key) in cases {
            match decode_volume(bytes, VolumeKind::Label, &LabelSchema::default()) {
                Err(Error::Format { key: k, .. }) => assert_eq!(k, key),
                other => panic!("expected format error on {key}, got {other:?}"),
            }
        }
    }

    #[test]
    fn label_out_of_schema_rejected() {
        let mut bytes =
            b"NDims = 3\nDimSize = 2 1 1\nElementSpacing = 1 1 1\nElementType = UINT8\nElementDataFile = LOCAL\n\n"
                .to_vec();
        bytes.extend_from_slice(&[0, 7]);
        assert!(decode_volume(&bytes, VolumeKind::Label, &LabelSchema::default()).is_err());
    }

    #[test]
    fn random_volume_round_trips_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 16 * 16 * 8 * 20;
        let data: Vec<f64> = (0..n).map(|_| (rng.random::<f32>() * 1000.0 - 500.0) as f64).collect();
        let v = ScalarVolume::new([16, 16, 8, 20], [1.37, 1.37, 10.0, 33.3], data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cine.vol");
        save_scalar(&path, &v).unwrap();
        let back = load_scalar(&path).unwrap();
        assert_eq!(back, v);
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(encode_scalar(&back), bytes);
    }

    #[test]
    fn label_3d_round_trip_keeps_ndims() {
        let v = LabelVolume::new_3d([3, 2, 2], [1.5, 1.5, 10.0], vec![0, 1, 2, 3, 0, 1, 2, 3, 0, 0, 0, 3]).unwrap();
        let bytes = encode_labels(&v);
        assert!(bytes.starts_with(b"NDims = 3\n"));
        let Volume::Label(back) = decode_volume(&bytes, VolumeKind::Label, &LabelSchema::default()).unwrap() else {
            panic!("expected labels");
        };
        assert_eq!(back, v);
    }
}
