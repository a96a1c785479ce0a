//! Persistence: the single-array container, dataset directories and
//! convergence CSV files.
//!
//! Container layout (all multi-byte fields little-endian):
//!
//! ```text
//! 0      8 bytes  magic "HOLOFRG1"
//! 8      u32      ndim
//! 12     u32 × ndim  dims
//! ..     u32      dtype (0 = f32, 1 = f64, 2 = complex f32, 3 = complex f64)
//! ..     f64      pixel or voxel size in meters
//! ..     payload, row-major; complex samples are (re, im) pairs
//! ```
//!
//! A dataset is a directory with `manifest.txt` (one `key = value` per line)
//! naming the container files of frames, reference, angles and shifts.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use num_complex::Complex32;

use crate::forward::{derive_geometry, Frame, ProjectionDataset, ScanShifts};
use crate::solver::History;
use crate::wavefield::{ComplexField, ShiftVector};
use crate::{HoloError, Result, C64};

pub const MAGIC: &[u8; 8] = b"HOLOFRG1";

/// Structured container parse errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContainerError {
    BadMagic([u8; 8]),
    /// Bytes `start..end` were needed for `field` but the input ends at `len`.
    Truncated {
        field: &'static str,
        start: usize,
        end: usize,
        len: usize,
    },
    UnknownDtype(u32),
    TrailingBytes {
        expected: usize,
        found: usize,
    },
    TooLarge,
    WrongDtype {
        expected: &'static str,
        found: &'static str,
    },
}

impl fmt::Display for ContainerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContainerError::BadMagic(m) => write!(f, "bad magic {m:?}"),
            ContainerError::Truncated { field, start, end, len } => {
                write!(f, "truncated container: {field} needs bytes {start}..{end} but input has {len}")
            }
            ContainerError::UnknownDtype(c) => write!(f, "unknown dtype code {c}"),
            ContainerError::TrailingBytes { expected, found } => {
                write!(f, "container has {found} bytes, expected {expected}")
            }
            ContainerError::TooLarge => write!(f, "container dimensions overflow"),
            ContainerError::WrongDtype { expected, found } => write!(f, "expected {expected} payload, found {found}"),
        }
    }
}

impl std::error::Error for ContainerError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    C64,
    C128,
}

impl Dtype {
    pub fn code(self) -> u32 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::C64 => 2,
            Dtype::C128 => 3,
        }
    }
    pub fn from_code(c: u32) -> std::result::Result<Self, ContainerError> {
        Ok(match c {
            0 => Dtype::F32,
            1 => Dtype::F64,
            2 => Dtype::C64,
            3 => Dtype::C128,
            _ => return Err(ContainerError::UnknownDtype(c)),
        })
    }
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::C64 => 8,
            Dtype::C128 => 16,
        }
    }
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
            Dtype::C64 => "c64",
            Dtype::C128 => "c128",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
    C64(ArrayD<Complex32>),
    C128(ArrayD<C64>),
}

impl ArrayData {
    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
            ArrayData::C64(_) => Dtype::C64,
            ArrayData::C128(_) => Dtype::C128,
        }
    }
    pub fn shape(&self) -> &[usize] {
        match self {
            ArrayData::F32(a) => a.shape(),
            ArrayData::F64(a) => a.shape(),
            ArrayData::C64(a) => a.shape(),
            ArrayData::C128(a) => a.shape(),
        }
    }
}

/// One array with its sample spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrayContainer {
    pub data: ArrayData,
    pub pixel_size: f64,
}

impl ArrayContainer {
    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.data.shape();
        let count: usize = shape.iter().product();
        let mut out = Vec::with_capacity(24 + 4 * shape.len() + count * self.data.dtype().size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.data.dtype().code().to_le_bytes());
        out.extend_from_slice(&self.pixel_size.to_le_bytes());
        match &self.data {
            ArrayData::F32(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            ArrayData::F64(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            ArrayData::C64(a) => a.iter().for_each(|v| {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }),
            ArrayData::C128(a) => a.iter().for_each(|v| {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> std::result::Result<Self, ContainerError> {
        let mut r = Reader { b, pos: 0 };
        let magic: [u8; 8] = r.take("magic", 8)?.try_into().unwrap();
        if &magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        let ndim = r.u32("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(r.u32("dims")? as usize);
        }
        let dtype = Dtype::from_code(r.u32("dtype")?)?;
        let pixel_size = f64::from_le_bytes(r.take("pixel size", 8)?.try_into().unwrap());
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(ContainerError::TooLarge)?;
        let bytes = count.checked_mul(dtype.size()).ok_or(ContainerError::TooLarge)?;
        let payload = r.take("payload", bytes)?;
        if r.pos != b.len() {
            return Err(ContainerError::TrailingBytes {
                expected: r.pos,
                found: b.len(),
            });
        }
        let dim = IxDyn(&shape);
        let f32s = || payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let f64s = || payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let data = match dtype {
            Dtype::F32 => ArrayData::F32(ArrayD::from_shape_vec(dim, f32s().collect()).unwrap()),
            Dtype::F64 => ArrayData::F64(ArrayD::from_shape_vec(dim, f64s().collect()).unwrap()),
            Dtype::C64 => {
                let v: Vec<f32> = f32s().collect();
                ArrayData::C64(ArrayD::from_shape_vec(dim, v.chunks_exact(2).map(|c| Complex32::new(c[0], c[1])).collect()).unwrap())
            }
            Dtype::C128 => {
                let v: Vec<f64> = f64s().collect();
                ArrayData::C128(ArrayD::from_shape_vec(dim, v.chunks_exact(2).map(|c| C64::new(c[0], c[1])).collect()).unwrap())
            }
        };
        Ok(Self { data, pixel_size })
    }

    pub fn into_f64(self) -> Result<ArrayD<f64>> {
        match self.data {
            ArrayData::F64(a) => Ok(a),
            ArrayData::F32(a) => Ok(a.mapv(f64::from)),
            other => Err(ContainerError::WrongDtype {
                expected: "real",
                found: other.dtype().name(),
            }
            .into()),
        }
    }

    pub fn into_c128(self) -> Result<ArrayD<C64>> {
        match self.data {
            ArrayData::C128(a) => Ok(a),
            ArrayData::C64(a) => Ok(a.mapv(|v| C64::new(v.re.into(), v.im.into()))),
            other => Err(ContainerError::WrongDtype {
                expected: "complex",
                found: other.dtype().name(),
            }
            .into()),
        }
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, field: &'static str, n: usize) -> std::result::Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).ok_or(ContainerError::TooLarge)?;
        if end > self.b.len() {
            return Err(ContainerError::Truncated {
                field,
                start: self.pos,
                end,
                len: self.b.len(),
            });
        }
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self, field: &'static str) -> std::result::Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(field, 4)?.try_into().unwrap()))
    }
}

pub fn write_container(path: &Path, c: &ArrayContainer) -> Result<()> {
    fs::write(path, c.to_bytes())?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<ArrayContainer> {
    let bytes = fs::read(path).map_err(|e| missing_or_io(path, e))?;
    Ok(ArrayContainer::from_bytes(&bytes)?)
}

fn missing_or_io(path: &Path, e: std::io::Error) -> HoloError {
    if e.kind() == std::io::ErrorKind::NotFound {
        HoloError::MissingInput(path.display().to_string())
    } else {
        HoloError::Io(e)
    }
}

pub fn write_real(path: &Path, a: ArrayD<f64>, pixel_size: f64) -> Result<()> {
    write_container(
        path,
        &ArrayContainer {
            data: ArrayData::F64(a),
            pixel_size,
        },
    )
}

pub fn write_complex(path: &Path, a: ArrayD<C64>, pixel_size: f64) -> Result<()> {
    write_container(
        path,
        &ArrayContainer {
            data: ArrayData::C128(a),
            pixel_size,
        },
    )
}

/// Stack of equally sized complex fields as one `[k, n, n]` container.
pub fn write_fields(path: &Path, fields: &[ComplexField]) -> Result<()> {
    let first = fields.first().ok_or_else(|| HoloError::invalid("no fields to write"))?;
    let n = first.n();
    let mut a = Array3::<C64>::zeros((fields.len(), n, n));
    for (mut dst, f) in a.outer_iter_mut().zip(fields) {
        dst.assign(f.data());
    }
    write_complex(path, a.into_dyn(), first.pixel_size())
}

pub fn read_fields(path: &Path, wavelength: f64) -> Result<Vec<ComplexField>> {
    let c = read_container(path)?;
    let pixel = c.pixel_size;
    let a = c.into_c128()?;
    let a = match a.ndim() {
        2 => a.insert_axis(ndarray::Axis(0)),
        3 => a,
        _ => return Err(HoloError::invalid(format!("{} is not a field stack", path.display()))),
    };
    a.outer_iter()
        .map(|f| ComplexField::new(f.to_owned().into_dimensionality().unwrap(), pixel, wavelength))
        .collect()
}

pub fn read_volume(path: &Path) -> Result<(Array3<f64>, f64)> {
    let c = read_container(path)?;
    let pixel = c.pixel_size;
    let a = c
        .into_f64()?
        .into_dimensionality()
        .map_err(|_| HoloError::invalid(format!("{} is not a volume", path.display())))?;
    Ok((a, pixel))
}

pub fn write_history_csv(path: &Path, h: &History) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    h.write_csv(&mut f)?;
    Ok(())
}

const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "holotomo-dataset-1";

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

/// Write a dataset directory (created if needed).
pub fn write_dataset(dir: &Path, ds: &ProjectionDataset) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let (na, nz, n) = (ds.n_angles(), ds.n_planes(), ds.n());
    let mut frames = ndarray::Array4::<f64>::zeros((na, nz, n, n));
    for (k, row) in ds.frames.iter().enumerate() {
        for (j, f) in row.iter().enumerate() {
            frames.slice_mut(ndarray::s![k, j, .., ..]).assign(f);
        }
    }
    write_real(&dir.join("frames.hfr"), frames.into_dyn(), ds.detector_pixel)?;
    write_real(&dir.join("reference.hfr"), ds.reference.clone().into_dyn(), ds.detector_pixel)?;
    write_real(&dir.join("angles.hfr"), ndarray::Array1::from(ds.angles.clone()).into_dyn(), 1.0)?;
    let mut shifts = Array3::<f64>::zeros((na, nz, 4));
    for k in 0..na {
        for j in 0..nz {
            let (s, p) = (ds.shifts.sample[k][j], ds.shifts.probe[k][j]);
            shifts
                .slice_mut(ndarray::s![k, j, ..])
                .assign(&ndarray::arr1(&[s.sx, s.sy, p.sx, p.sy]));
        }
    }
    write_real(&dir.join("shifts.hfr"), shifts.into_dyn(), 1.0)?;
    let g = &ds.geometry;
    let mut m = format!(
        "format = {FORMAT}\nn = {n}\nn_angles = {na}\nn_planes = {nz}\nz_total = {:?}\nz1 = {}\nwavelength = {:?}\ndetector_pixel = {:?}\nframes = frames.hfr\nreference = reference.hfr\nangles = angles.hfr\nshifts = shifts.hfr\n",
        g.z_total(),
        join_floats(g.z1()),
        g.wavelength(),
        ds.detector_pixel
    );
    if let Some(r) = &ds.shifts.reference {
        let a = Array2::from_shape_fn((nz, 2), |(j, c)| if c == 0 { r[j].sx } else { r[j].sy });
        write_real(&dir.join("reference_shifts.hfr"), a.into_dyn(), 1.0)?;
        m.push_str("reference_shifts = reference_shifts.hfr\n");
    }
    fs::write(dir.join(MANIFEST), m)?;
    Ok(())
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HoloError::invalid(format!("manifest line {}: expected key = value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_dataset(dir: &Path) -> Result<ProjectionDataset> {
    let text = fs::read_to_string(dir.join(MANIFEST)).map_err(|e| missing_or_io(&dir.join(MANIFEST), e))?;
    let m = parse_manifest(&text)?;
    let get = |k: &str| m.get(k).ok_or_else(|| HoloError::invalid(format!("manifest lacks `{k}`")));
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| HoloError::invalid(format!("manifest `{k}` is not a number")))
    };
    if get("format")? != FORMAT {
        return Err(HoloError::invalid("unsupported dataset format"));
    }
    let z1 = get("z1")?
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| HoloError::invalid("manifest `z1` is not a number list"))?;
    let geometry = derive_geometry(num("z_total")?, &z1, num("wavelength")?)?;
    let file = |k: &str| -> Result<ArrayD<f64>> { read_container(&dir.join(get(k)?))?.into_f64() };
    let frames = file("frames")?;
    let reference = file("reference")?;
    let angles = file("angles")?;
    let shifts = file("shifts")?;
    let fs_ = frames.shape().to_vec();
    if fs_.len() != 4 || fs_[1] != geometry.n_planes() {
        return Err(HoloError::invalid("frames container must be [angles, planes, n, n]"));
    }
    let (na, nz) = (fs_[0], fs_[1]);
    if shifts.shape() != [na, nz, 4] || angles.len() != na {
        return Err(HoloError::invalid("shift or angle containers do not match the frames"));
    }
    let frame = |k: usize, j: usize| -> Frame {
        frames
            .slice(ndarray::s![k, j, .., ..])
            .to_owned()
            .into_dimensionality()
            .unwrap()
    };
    let sv = |k: usize, j: usize, c: usize| ShiftVector {
        sx: shifts[[k, j, c]],
        sy: shifts[[k, j, c + 1]],
    };
    let reference_shifts = match m.get("reference_shifts") {
        Some(f) => {
            let a = read_container(&dir.join(f))?.into_f64()?;
            if a.shape() != [nz, 2] {
                return Err(HoloError::invalid("reference shifts must be [planes, 2]"));
            }
            Some((0..nz).map(|j| ShiftVector { sx: a[[j, 0]], sy: a[[j, 1]] }).collect())
        }
        None => None,
    };
    let ds = ProjectionDataset {
        frames: (0..na).map(|k| (0..nz).map(|j| frame(k, j)).collect()).collect(),
        reference: reference
            .into_dimensionality()
            .map_err(|_| HoloError::invalid("reference must be 2-D"))?,
        angles: angles.iter().copied().collect(),
        shifts: ScanShifts {
            sample: (0..na).map(|k| (0..nz).map(|j| sv(k, j, 0)).collect()).collect(),
            probe: (0..na).map(|k| (0..nz).map(|j| sv(k, j, 2)).collect()).collect(),
            reference: reference_shifts,
        },
        geometry,
        detector_pixel: num("detector_pixel")?,
    };
    ds.validate()?;
    Ok(ds)
}
