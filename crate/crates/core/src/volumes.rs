//! Dense ZYX(C) volumes and the `meta.json` + `data.raw` directory format.
//!
//! A volume directory holds a JSON header and a single little-endian raw
//! payload in C order, X fastest, with channels innermost: `[Z][Y][X][C]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.json";
pub const DATA_FILE: &str = "data.raw";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U16,
    U32,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::U32 | Dtype::F32 => 4,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, Dtype::F32)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::U8 => "u8",
            Dtype::U16 => "u16",
            Dtype::U32 => "u32",
            Dtype::F32 => "f32",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(Dtype::U8),
            "u16" => Ok(Dtype::U16),
            "u32" => Ok(Dtype::U32),
            "f32" => Ok(Dtype::F32),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }
}

/// Header shared by every volume kind.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeMeta {
    /// (Z, Y, X) in voxels.
    pub shape: [usize; 3],
    /// 0 for scalar volumes, n for per-ray distance volumes.
    pub channels: usize,
    pub dtype: Dtype,
    /// Physical size per voxel in (sz, sy, sx) order.
    pub voxel_size: Option<[f64; 3]>,
}

impl VolumeMeta {
    pub fn new(shape: [usize; 3], channels: usize, dtype: Dtype) -> Self {
        Self {
            shape,
            channels,
            dtype,
            voxel_size: None,
        }
    }

    pub fn axes(&self) -> &'static str {
        if self.channels == 0 {
            "ZYX"
        } else {
            "ZYXC"
        }
    }

    pub fn n_voxels(&self) -> usize {
        self.shape.iter().product()
    }

    /// Values stored per voxel (`max(channels, 1)`).
    pub fn stride(&self) -> usize {
        self.channels.max(1)
    }

    pub fn byte_len(&self) -> usize {
        self.n_voxels() * self.stride() * self.dtype.size()
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&s| s == 0) {
            return Err(Error::EmptyShape(self.shape));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MetaJson {
    shape: Vec<usize>,
    channels: usize,
    dtype: String,
    axes: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    voxel_size: Option<Vec<f64>>,
}

/// Dense volume with values of type `T`, laid out `[Z][Y][X][C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    pub meta: VolumeMeta,
    pub data: Vec<T>,
}

/// Instance labels; 0 is background.
pub type LabelVolume = Volume<u32>;
/// Single-channel real field, e.g. object probability.
pub type ScalarVolume = Volume<f32>;
/// Per-voxel radial distances, one channel per ray.
pub type DistVolume = Volume<f32>;

impl<T: Copy + Default> Volume<T> {
    pub fn zeros(meta: VolumeMeta) -> Result<Self> {
        meta.validate()?;
        let len = meta.n_voxels() * meta.stride();
        Ok(Self {
            meta,
            data: vec![T::default(); len],
        })
    }
}

impl<T> Volume<T> {
    pub fn from_data(meta: VolumeMeta, data: Vec<T>) -> Result<Self> {
        meta.validate()?;
        let expected = meta.n_voxels() * meta.stride();
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "data has {} values, shape {:?} x {} channels needs {expected}",
                data.len(),
                meta.shape,
                meta.stride()
            )));
        }
        Ok(Self { meta, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.meta.shape
    }

    pub fn channels(&self) -> usize {
        self.meta.channels
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        let [_, ny, nx] = self.meta.shape;
        (z * ny + y) * nx + x
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [_, ny, nx] = self.meta.shape;
        [index / (ny * nx), (index / nx) % ny, index % nx]
    }

    #[inline]
    pub fn contains_signed(&self, z: i64, y: i64, x: i64) -> bool {
        let [nz, ny, nx] = self.meta.shape;
        z >= 0 && y >= 0 && x >= 0 && (z as usize) < nz && (y as usize) < ny && (x as usize) < nx
    }
}

impl<T: Copy> Volume<T> {
    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> T {
        self.data[self.index(z, y, x)]
    }

    #[inline]
    pub fn set(&mut self, z: usize, y: usize, x: usize, value: T) {
        let i = self.index(z, y, x);
        self.data[i] = value;
    }

    /// All channel values at one voxel.
    #[inline]
    pub fn voxel(&self, z: usize, y: usize, x: usize) -> &[T] {
        let s = self.meta.stride();
        let i = self.index(z, y, x) * s;
        &self.data[i..i + s]
    }
}

/// A volume of any kind as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Label(LabelVolume),
    Scalar(ScalarVolume),
    Dist(DistVolume),
}

impl AnyVolume {
    pub fn meta(&self) -> &VolumeMeta {
        match self {
            AnyVolume::Label(v) => &v.meta,
            AnyVolume::Scalar(v) | AnyVolume::Dist(v) => &v.meta,
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume> {
        match self {
            AnyVolume::Label(v) => Ok(v),
            _ => Err(Error::InvalidArgument(
                "expected an integer label volume".into(),
            )),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarVolume> {
        match self {
            AnyVolume::Scalar(v) => Ok(v),
            _ => Err(Error::InvalidArgument(
                "expected a single-channel f32 volume".into(),
            )),
        }
    }

    pub fn into_dist(self) -> Result<DistVolume> {
        match self {
            AnyVolume::Dist(v) => Ok(v),
            _ => Err(Error::InvalidArgument(
                "expected a multi-channel f32 volume".into(),
            )),
        }
    }
}

fn read_meta(dir: &Path) -> Result<VolumeMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let raw: MetaJson = serde_json::from_str(&text)?;
    let shape: [usize; 3] = raw
        .shape
        .as_slice()
        .try_into()
        .map_err(|_| Error::Meta(format!("shape must have 3 entries, got {:?}", raw.shape)))?;
    let dtype = Dtype::parse(&raw.dtype)?;
    let voxel_size = match raw.voxel_size {
        None => None,
        Some(v) => Some(
            v.as_slice()
                .try_into()
                .map_err(|_| Error::Meta("voxel_size must have 3 entries".into()))?,
        ),
    };
    let meta = VolumeMeta {
        shape,
        channels: raw.channels,
        dtype,
        voxel_size,
    };
    meta.validate()?;
    let expected_axes = meta.axes();
    if raw.axes != expected_axes {
        return Err(Error::Meta(format!(
            "axes {:?} inconsistent with channels={} (expected {expected_axes:?})",
            raw.axes, meta.channels
        )));
    }
    if dtype.is_integer() && meta.channels != 0 {
        return Err(Error::Meta("integer volumes must have channels = 0".into()));
    }
    Ok(meta)
}

/// Reads a volume directory (`meta.json` + `data.raw`).
pub fn read_volume(dir: impl AsRef<Path>) -> Result<AnyVolume> {
    let dir = dir.as_ref();
    let meta = read_meta(dir)?;
    let path = dir.join(DATA_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = meta.byte_len();
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: bytes.len(),
        });
    }
    Ok(match meta.dtype {
        Dtype::U8 => AnyVolume::Label(Volume {
            data: bytes.iter().map(|&b| b as u32).collect(),
            meta,
        }),
        Dtype::U16 => AnyVolume::Label(Volume {
            data: bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as u32)
                .collect(),
            meta,
        }),
        Dtype::U32 => AnyVolume::Label(Volume {
            data: bytes
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            meta,
        }),
        Dtype::F32 => {
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if meta.channels == 0 {
                AnyVolume::Scalar(Volume { meta, data })
            } else {
                AnyVolume::Dist(Volume { meta, data })
            }
        }
    })
}

fn write_parts(dir: &Path, meta: &VolumeMeta, bytes: &[u8]) -> Result<()> {
    meta.validate()?;
    debug_assert_eq!(bytes.len(), meta.byte_len());
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = MetaJson {
        shape: meta.shape.to_vec(),
        channels: meta.channels,
        dtype: meta.dtype.as_str().to_string(),
        axes: meta.axes().to_string(),
        voxel_size: meta.voxel_size.map(|v| v.to_vec()),
    };
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, serde_json::to_string_pretty(&header)?)
        .map_err(|e| Error::io(&meta_path, e))?;
    let data_path = dir.join(DATA_FILE);
    fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))
}

/// Writes a label volume using the integer dtype recorded in its meta.
pub fn write_labels(vol: &LabelVolume, dir: impl AsRef<Path>) -> Result<()> {
    let meta = &vol.meta;
    meta.validate()?;
    if meta.channels != 0 {
        return Err(Error::Meta("label volumes must have channels = 0".into()));
    }
    let limit = match meta.dtype {
        Dtype::U8 => u8::MAX as u32,
        Dtype::U16 => u16::MAX as u32,
        Dtype::U32 => u32::MAX,
        Dtype::F32 => return Err(Error::Meta("label volume declared as f32".into())),
    };
    if let Some(&bad) = vol.data.iter().find(|&&v| v > limit) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} does not fit dtype {}",
            meta.dtype.as_str()
        )));
    }
    let mut bytes = Vec::with_capacity(meta.byte_len());
    match meta.dtype {
        Dtype::U8 => bytes.extend(vol.data.iter().map(|&v| v as u8)),
        Dtype::U16 => vol
            .data
            .iter()
            .for_each(|&v| bytes.extend_from_slice(&(v as u16).to_le_bytes())),
        _ => vol
            .data
            .iter()
            .for_each(|&v| bytes.extend_from_slice(&v.to_le_bytes())),
    }
    write_parts(dir.as_ref(), meta, &bytes)
}

/// Writes a scalar or distance volume (`f32`).
pub fn write_field(vol: &Volume<f32>, dir: impl AsRef<Path>) -> Result<()> {
    if vol.meta.dtype != Dtype::F32 {
        return Err(Error::Meta("real-valued volumes must be f32".into()));
    }
    let mut bytes = Vec::with_capacity(vol.meta.byte_len());
    vol.data
        .iter()
        .for_each(|v| bytes.extend_from_slice(&v.to_le_bytes()));
    write_parts(dir.as_ref(), &vol.meta, &bytes)
}

pub fn write_volume(vol: &AnyVolume, dir: impl AsRef<Path>) -> Result<()> {
    match vol {
        AnyVolume::Label(v) => write_labels(v, dir),
        AnyVolume::Scalar(v) | AnyVolume::Dist(v) => write_field(v, dir),
    }
}

/// Picks the narrowest integer dtype able to hold `max_label`.
pub fn label_dtype_for(max_label: u32) -> Dtype {
    if max_label <= u8::MAX as u32 {
        Dtype::U8
    } else if max_label <= u16::MAX as u32 {
        Dtype::U16
    } else {
        Dtype::U32
    }
}
