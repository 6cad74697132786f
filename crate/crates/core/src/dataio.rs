//! Self-describing binary volumes and raster export.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes | field |
//! |---|---|
//! | 8 | magic `MIMOVOL\0` |
//! | 4 | format version (`u32`, currently 1) |
//! | 1 | element type: 1 = complex64, 2 = complex128 |
//! | 1 | tensor kind: 1 = echo, 2 = image |
//! | 2 | rank (`u16`) |
//! | 40 per axis | extent `u64`, start `f64`, step `f64`, unit (16 bytes, NUL padded ASCII) |
//! | 4 | metadata length `u32` |
//! | n | UTF-8 JSON metadata |
//! | rest | interleaved `(re, im)` payload in row-major order |
//!
//! Axes with irregular sample positions (an explicit transmitter list, say)
//! record `step = 0` and list the positions in the metadata.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array3, Array4, ArrayD, IxDyn};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::{max_projection, section_db, ImageAxis};
use crate::operators::ImageVolume;
use crate::scene::ValidatedScene;
use crate::simulator::EchoTensor;
use crate::{Error, Result};

pub const MAGIC: [u8; 8] = *b"MIMOVOL\0";
pub const FORMAT_VERSION: u32 = 1;
const UNIT_BYTES: usize = 16;
const AXIS_BYTES: usize = 8 + 8 + 8 + UNIT_BYTES;
const FIXED_BYTES: usize = 8 + 4 + 1 + 1 + 2;

#[derive(Debug, Error)]
pub enum DataIoError {
    #[error("I/O failure on {path}: {message}")]
    Io { path: String, message: String },
    #[error("not a volume file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("unsupported element type code {0}")]
    UnsupportedElementType(u8),
    #[error("payload is {actual} bytes, header declares {expected}")]
    PayloadSizeMismatch { expected: u64, actual: u64 },
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("expected a {expected} file, found {found}")]
    KindMismatch { expected: TensorKind, found: TensorKind },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataIoError + '_ {
    move |e| DataIoError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    Complex64,
    Complex128,
}

impl ElementType {
    pub fn code(self) -> u8 {
        match self {
            ElementType::Complex64 => 1,
            ElementType::Complex128 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, DataIoError> {
        match code {
            1 => Ok(ElementType::Complex64),
            2 => Ok(ElementType::Complex128),
            other => Err(DataIoError::UnsupportedElementType(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            ElementType::Complex64 => 8,
            ElementType::Complex128 => 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Echo,
    Image,
}

impl std::fmt::Display for TensorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TensorKind::Echo => "echo",
            TensorKind::Image => "image",
        })
    }
}

impl TensorKind {
    fn code(self) -> u8 {
        match self {
            TensorKind::Echo => 1,
            TensorKind::Image => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self, DataIoError> {
        match code {
            1 => Ok(TensorKind::Echo),
            2 => Ok(TensorKind::Image),
            other => Err(DataIoError::BadHeader(format!("unknown tensor kind {other}"))),
        }
    }

    fn rank(self) -> usize {
        match self {
            TensorKind::Echo => 4,
            TensorKind::Image => 3,
        }
    }

    pub fn default_element(self) -> ElementType {
        match self {
            TensorKind::Echo => ElementType::Complex64,
            TensorKind::Image => ElementType::Complex128,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisCoord {
    pub extent: usize,
    pub start: f64,
    pub step: f64,
    pub unit: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default)]
    pub provenance: String,
    #[serde(default)]
    pub scene_hash: Option<String>,
    #[serde(default)]
    pub axis_names: Vec<String>,
    /// Explicit sample positions for axes that are not uniform.
    #[serde(default)]
    pub positions: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFileHeader {
    pub version: u32,
    pub element: ElementType,
    pub kind: TensorKind,
    pub axes: Vec<AxisCoord>,
    pub metadata: Metadata,
    /// Byte offset of the payload.
    pub payload_offset: u64,
}

impl VolumeFileHeader {
    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.extent).collect()
    }

    pub fn payload_len(&self) -> u64 {
        self.axes.iter().map(|a| a.extent as u64).product::<u64>() * self.element.size() as u64
    }

    /// Physical sample positions of axis `i`.
    pub fn coordinates(&self, i: usize) -> Vec<f64> {
        let a = &self.axes[i];
        if let Some(p) = self.metadata.axis_names.get(i).and_then(|n| self.metadata.positions.get(n)) {
            return p.clone();
        }
        (0..a.extent).map(|n| a.start + n as f64 * a.step).collect()
    }
}

/// Either kind of tensor, as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Echo(EchoTensor),
    Image(ImageVolume),
}

impl Tensor {
    pub fn kind(&self) -> TensorKind {
        match self {
            Tensor::Echo(_) => TensorKind::Echo,
            Tensor::Image(_) => TensorKind::Image,
        }
    }

    pub fn into_echo(self) -> Result<EchoTensor> {
        match self {
            Tensor::Echo(e) => Ok(e),
            Tensor::Image(_) => Err(DataIoError::KindMismatch {
                expected: TensorKind::Echo,
                found: TensorKind::Image,
            }
            .into()),
        }
    }

    pub fn into_image(self) -> Result<ImageVolume> {
        match self {
            Tensor::Image(i) => Ok(i),
            Tensor::Echo(_) => Err(DataIoError::KindMismatch {
                expected: TensorKind::Image,
                found: TensorKind::Echo,
            }
            .into()),
        }
    }
}

/// Borrowed tensor for writing.
#[derive(Debug, Clone, Copy)]
pub enum TensorRef<'a> {
    Echo(&'a EchoTensor),
    Image(&'a ImageVolume),
}

impl TensorRef<'_> {
    fn kind(&self) -> TensorKind {
        match self {
            TensorRef::Echo(_) => TensorKind::Echo,
            TensorRef::Image(_) => TensorKind::Image,
        }
    }

    fn dims(&self) -> Vec<usize> {
        match self {
            TensorRef::Echo(e) => e.dims().to_vec(),
            TensorRef::Image(i) => i.dims().to_vec(),
        }
    }

    fn provenance(&self) -> &str {
        match self {
            TensorRef::Echo(e) => &e.provenance,
            TensorRef::Image(i) => &i.provenance,
        }
    }

    fn values(&self) -> Box<dyn Iterator<Item = &Complex64> + '_> {
        match self {
            TensorRef::Echo(e) => Box::new(e.data().iter()),
            TensorRef::Image(i) => Box::new(i.data().iter()),
        }
    }
}

impl<'a> From<&'a EchoTensor> for TensorRef<'a> {
    fn from(e: &'a EchoTensor) -> Self {
        TensorRef::Echo(e)
    }
}

impl<'a> From<&'a ImageVolume> for TensorRef<'a> {
    fn from(i: &'a ImageVolume) -> Self {
        TensorRef::Image(i)
    }
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable fingerprint of a scene's canonical configuration text.
pub fn scene_hash(scene: &ValidatedScene) -> String {
    sha256_hex(scene.config().to_toml_string().as_bytes())
}

fn uniform_axis(values: &[f64], unit: &str) -> (AxisCoord, Option<Vec<f64>>) {
    let n = values.len();
    let start = values.first().copied().unwrap_or(0.0);
    let step = if n > 1 { (values[n - 1] - start) / (n - 1) as f64 } else { 0.0 };
    let uniform = values
        .iter()
        .enumerate()
        .all(|(i, v)| (start + i as f64 * step - v).abs() <= 1e-9 * step.abs().max(1e-12));
    let coord = AxisCoord {
        extent: n,
        start,
        step: if uniform { step } else { 0.0 },
        unit: unit.into(),
    };
    (coord, (!uniform).then(|| values.to_vec()))
}

fn index_axes(dims: &[usize]) -> Vec<AxisCoord> {
    dims.iter()
        .map(|&extent| AxisCoord {
            extent,
            start: 0.0,
            step: 1.0,
            unit: "index".into(),
        })
        .collect()
}

/// Header describing `tensor`, with physical axes taken from `scene` when it
/// is given and its shape matches.
pub fn describe(tensor: TensorRef<'_>, element: ElementType, scene: Option<&ValidatedScene>) -> VolumeFileHeader {
    let kind = tensor.kind();
    let dims = tensor.dims();
    let mut metadata = Metadata {
        provenance: tensor.provenance().to_string(),
        ..Default::default()
    };
    let physical: Option<Vec<(&str, Vec<f64>, &str)>> = scene.and_then(|s| match kind {
        TensorKind::Echo if dims == s.echo_dims() => Some(vec![
            ("tx_x", s.tx_x().to_vec(), "m"),
            ("rx_x", s.rx_x().to_vec(), "m"),
            ("scan_z", s.scan_z().to_vec(), "m"),
            ("frequency", s.frequencies().to_vec(), "Hz"),
        ]),
        TensorKind::Image if dims == s.grid_dims() => Some(vec![
            ("x", s.grid().x.clone(), "m"),
            ("y", s.grid().y.clone(), "m"),
            ("z", s.grid().z.clone(), "m"),
        ]),
        _ => None,
    });
    let axes = match physical {
        Some(list) => {
            metadata.scene_hash = scene.map(scene_hash);
            list.into_iter()
                .map(|(name, values, unit)| {
                    let (coord, explicit) = uniform_axis(&values, unit);
                    metadata.axis_names.push(name.to_string());
                    if let Some(p) = explicit {
                        metadata.positions.insert(name.to_string(), p);
                    }
                    coord
                })
                .collect()
        }
        None => {
            metadata.axis_names = match kind {
                TensorKind::Echo => vec!["tx", "rx", "scan", "freq"],
                TensorKind::Image => vec!["x", "y", "z"],
            }
            .into_iter()
            .map(String::from)
            .collect();
            index_axes(&dims)
        }
    };
    VolumeFileHeader {
        version: FORMAT_VERSION,
        element,
        kind,
        axes,
        metadata,
        payload_offset: 0,
    }
}

fn encode_header(header: &VolumeFileHeader) -> Result<Vec<u8>, DataIoError> {
    let meta = serde_json::to_vec(&header.metadata).map_err(|e| DataIoError::BadHeader(e.to_string()))?;
    let mut out = Vec::with_capacity(FIXED_BYTES + AXIS_BYTES * header.axes.len() + 4 + meta.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    out.push(header.element.code());
    out.push(header.kind.code());
    out.extend_from_slice(&(header.axes.len() as u16).to_le_bytes());
    for a in &header.axes {
        out.extend_from_slice(&(a.extent as u64).to_le_bytes());
        out.extend_from_slice(&a.start.to_le_bytes());
        out.extend_from_slice(&a.step.to_le_bytes());
        let mut unit = [0u8; UNIT_BYTES];
        let bytes = a.unit.as_bytes();
        if bytes.len() > UNIT_BYTES || !a.unit.is_ascii() {
            return Err(DataIoError::BadHeader(format!("unit `{}` is not short ASCII", a.unit)));
        }
        unit[..bytes.len()].copy_from_slice(bytes);
        out.extend_from_slice(&unit);
    }
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    Ok(out)
}

/// Writes `tensor` with an explicit element type and optional scene axes.
pub fn write_tensor_with<'a>(
    path: impl AsRef<Path>,
    tensor: impl Into<TensorRef<'a>>,
    element: ElementType,
    scene: Option<&ValidatedScene>,
) -> Result<()> {
    let path = path.as_ref();
    let tensor = tensor.into();
    let header = describe(tensor, element, scene);
    let head = encode_header(&header)?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&head).map_err(io_err(path))?;
    let mut buf = Vec::with_capacity(1 << 16);
    for v in tensor.values() {
        match element {
            ElementType::Complex64 => {
                buf.extend_from_slice(&(v.re as f32).to_le_bytes());
                buf.extend_from_slice(&(v.im as f32).to_le_bytes());
            }
            ElementType::Complex128 => {
                buf.extend_from_slice(&v.re.to_le_bytes());
                buf.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        if buf.len() >= 1 << 16 {
            w.write_all(&buf).map_err(io_err(path))?;
            buf.clear();
        }
    }
    w.write_all(&buf).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes `tensor` using the default element type of its kind (complex64
/// for echoes, complex128 for images).
pub fn write_tensor<'a>(path: impl AsRef<Path>, tensor: impl Into<TensorRef<'a>>) -> Result<()> {
    let tensor = tensor.into();
    write_tensor_with(path, tensor, tensor.kind().default_element(), None)
}

fn take<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u8; N], DataIoError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            DataIoError::BadHeader("file ends inside the header".into())
        } else {
            io_err(path)(e)
        }
    })?;
    Ok(b)
}

fn parse_header(r: &mut impl Read, path: &Path) -> Result<VolumeFileHeader, DataIoError> {
    if take::<8>(r, path)? != MAGIC {
        return Err(DataIoError::BadMagic);
    }
    let version = u32::from_le_bytes(take(r, path)?);
    if version != FORMAT_VERSION {
        return Err(DataIoError::VersionUnsupported(version));
    }
    let [element, kind] = take::<2>(r, path)?;
    let element = ElementType::from_code(element)?;
    let kind = TensorKind::from_code(kind)?;
    let rank = u16::from_le_bytes(take(r, path)?) as usize;
    if rank != kind.rank() {
        return Err(DataIoError::BadHeader(format!("{kind} tensor with rank {rank}")));
    }
    let mut axes = Vec::with_capacity(rank);
    for _ in 0..rank {
        let extent = u64::from_le_bytes(take(r, path)?);
        let start = f64::from_le_bytes(take(r, path)?);
        let step = f64::from_le_bytes(take(r, path)?);
        let unit = take::<UNIT_BYTES>(r, path)?;
        let end = unit.iter().position(|b| *b == 0).unwrap_or(UNIT_BYTES);
        let unit = std::str::from_utf8(&unit[..end])
            .map_err(|_| DataIoError::BadHeader("unit is not UTF-8".into()))?
            .to_string();
        let extent = usize::try_from(extent).map_err(|_| DataIoError::BadHeader("extent overflows".into()))?;
        axes.push(AxisCoord {
            extent,
            start,
            step,
            unit,
        });
    }
    let meta_len = u32::from_le_bytes(take(r, path)?) as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)
        .map_err(|_| DataIoError::BadHeader("file ends inside the metadata".into()))?;
    let metadata: Metadata =
        serde_json::from_slice(&meta).map_err(|e| DataIoError::BadHeader(format!("metadata: {e}")))?;
    Ok(VolumeFileHeader {
        version,
        element,
        kind,
        axes,
        metadata,
        payload_offset: (FIXED_BYTES + AXIS_BYTES * rank + 4 + meta_len) as u64,
    })
}

/// Reads and validates only the header.
pub fn read_header(path: impl AsRef<Path>) -> Result<VolumeFileHeader> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    Ok(parse_header(&mut r, path)?)
}

/// Reads a tensor written by [`write_tensor`], checking that the payload
/// length matches the header exactly.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let (header, tensor) = read_tensor_with_header(path)?;
    drop(header);
    Ok(tensor)
}

pub fn read_tensor_with_header(path: impl AsRef<Path>) -> Result<(VolumeFileHeader, Tensor)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let file_len = file.metadata().map_err(io_err(path))?.len();
    let mut r = BufReader::new(file);
    let header = parse_header(&mut r, path)?;
    let expected = header.payload_len();
    let actual = file_len.saturating_sub(header.payload_offset);
    if actual != expected {
        return Err(DataIoError::PayloadSizeMismatch { expected, actual }.into());
    }
    let mut payload = Vec::with_capacity(expected as usize);
    r.read_to_end(&mut payload).map_err(io_err(path))?;

    let values: Vec<Complex64> = match header.element {
        ElementType::Complex64 => payload
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes(c[0..4].try_into().expect("4 bytes"));
                let im = f32::from_le_bytes(c[4..8].try_into().expect("4 bytes"));
                Complex64::new(re as f64, im as f64)
            })
            .collect(),
        ElementType::Complex128 => payload
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[0..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..16].try_into().expect("8 bytes"));
                Complex64::new(re, im)
            })
            .collect(),
    };
    let dims = header.dims();
    let data = ArrayD::from_shape_vec(IxDyn(&dims), values)
        .map_err(|e| DataIoError::BadHeader(e.to_string()))?;
    let provenance = header.metadata.provenance.clone();
    let tensor = match header.kind {
        TensorKind::Echo => {
            let data: Array4<Complex64> = data.into_dimensionality().map_err(|e| DataIoError::BadHeader(e.to_string()))?;
            Tensor::Echo(EchoTensor::new(data, provenance)?)
        }
        TensorKind::Image => {
            let data: Array3<Complex64> = data.into_dimensionality().map_err(|e| DataIoError::BadHeader(e.to_string()))?;
            Tensor::Image(ImageVolume::new(data, provenance)?)
        }
    };
    Ok((header, tensor))
}

/// What to rasterise from an image volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceSelection {
    /// One section at `index` along `axis`.
    Section(ImageAxis, usize),
    /// Maximum projection along `axis`.
    Projection(ImageAxis),
}

/// Grey levels for a dB map: the clip floor maps to 0 and the peak to 255.
pub fn db_to_gray(map: &ndarray::Array2<f64>, dynamic_range_db: f64) -> Vec<u8> {
    map.iter()
        .map(|v| (255.0 * (v + dynamic_range_db) / dynamic_range_db).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Writes a greyscale PNG of a section or projection. Rows follow the first
/// remaining image axis and columns the second.
pub fn export_slice_image(
    image: &ImageVolume,
    selection: SliceSelection,
    dynamic_range_db: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    if !(dynamic_range_db > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dynamic range must be positive, got {dynamic_range_db}"
        )));
    }
    let map = match selection {
        SliceSelection::Section(axis, index) => section_db(image, axis, index, dynamic_range_db)?,
        SliceSelection::Projection(axis) => max_projection(image, axis, dynamic_range_db)?,
    };
    let (rows, cols) = map.dim();
    let pixels = db_to_gray(&map, dynamic_range_db);
    let path = path.as_ref();
    let raster = image::GrayImage::from_raw(cols as u32, rows as u32, pixels)
        .ok_or_else(|| Error::InvalidArgument("raster size overflow".into()))?;
    raster
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| DataIoError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    Ok(())
}
