//! Single-file NIfTI-1 reader and writer (`.nii`, `.nii.gz`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{Affine, IntensityUnit, Mask, Sample, Volume, VoxelGrid};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const UNIT_TAG_PREFIX: &str = "aerotree:unit=";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NiftiDatatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl NiftiDatatype {
    pub fn code(self) -> i16 {
        match self {
            NiftiDatatype::Uint8 => 2,
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Int32 => 8,
            NiftiDatatype::Float32 => 16,
            NiftiDatatype::Float64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => NiftiDatatype::Uint8,
            4 => NiftiDatatype::Int16,
            8 => NiftiDatatype::Int32,
            16 => NiftiDatatype::Float32,
            64 => NiftiDatatype::Float64,
            _ => return None,
        })
    }

    pub fn byte_size(self) -> usize {
        match self {
            NiftiDatatype::Uint8 => 1,
            NiftiDatatype::Int16 => 2,
            NiftiDatatype::Int32 | NiftiDatatype::Float32 => 4,
            NiftiDatatype::Float64 => 8,
        }
    }
}

/// Fixed-offset view over a header buffer in a given byte order.
struct HeaderView<'a> {
    buf: &'a [u8],
    big_endian: bool,
}

impl HeaderView<'_> {
    fn bytes<const N: usize>(&self, off: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[off..off + N]);
        if self.big_endian {
            b.reverse();
        }
        b
    }

    fn i16(&self, off: usize) -> i16 {
        i16::from_le_bytes(self.bytes(off))
    }

    fn f32(&self, off: usize) -> f32 {
        f32::from_le_bytes(self.bytes(off))
    }

    fn text(&self, off: usize, len: usize) -> String {
        let raw = &self.buf[off..off + len];
        let end = raw.iter().position(|&b| b == 0).unwrap_or(len);
        String::from_utf8_lossy(&raw[..end]).into_owned()
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: corrupt gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Reads a 3D NIfTI-1 volume as `f32` samples with scaling applied.
///
/// The affine comes from the sform when `sform_code > 0`, otherwise the
/// qform, otherwise a diagonal built from `pixdim`. The unit tag is restored
/// from the description field when the file was written by this crate;
/// otherwise `uint8` files holding only 0/1 are tagged binary and anything
/// else is tagged HU.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    parse(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Unsupported(m) => Error::Unsupported(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Reads a NIfTI file and validates it as a binary mask.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    read_nifti(path)?.to_mask()
}

fn parse(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!("{} bytes is shorter than a header", bytes.len())));
    }
    let magic = &bytes[344..348];
    if magic == b"ni1\0" {
        return Err(Error::Unsupported("two-file (.hdr/.img) NIfTI pairs".into()));
    }
    if magic != b"n+1\0" {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let size_le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let big_endian = match size_le {
        348 => false,
        _ if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == 348 => true,
        other => return Err(Error::Format(format!("sizeof_hdr = {other}"))),
    };
    let h = HeaderView { buf: bytes, big_endian };

    let dim: Vec<i16> = (0..8).map(|i| h.i16(40 + 2 * i)).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim}")));
    }
    let dim_at = |i: usize| if i as i16 <= ndim { dim[i] } else { 1 };
    for i in 4..=7 {
        if dim_at(i) > 1 {
            return Err(Error::Unsupported(format!("{ndim}-D volume with dim = {dim:?}")));
        }
    }
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let d = dim_at(a + 1);
        if d < 1 {
            return Err(Error::Format(format!("non-positive dim[{}] = {d}", a + 1)));
        }
        dims[a] = d as usize;
    }

    let code = h.i16(70);
    let dtype = NiftiDatatype::from_code(code)
        .ok_or_else(|| Error::Unsupported(format!("datatype code {code}")))?;

    let pixdim: Vec<f32> = (0..8).map(|i| h.f32(76 + 4 * i)).collect();
    let spacing = [1, 2, 3].map(|i| {
        let p = (pixdim[i] as f64).abs();
        if p > 0.0 && p.is_finite() {
            p
        } else {
            1.0
        }
    });

    let vox_offset = h.f32(108).max(HEADER_SIZE as f32) as usize;
    let slope = h.f32(112);
    let inter = h.f32(116);
    let scaled = slope != 0.0 && slope.is_finite() && !(slope == 1.0 && inter == 0.0);

    let qform_code = h.i16(252);
    let sform_code = h.i16(254);
    let affine = if sform_code > 0 {
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..4 {
                m[r][c] = h.f32(280 + 16 * r + 4 * c) as f64;
            }
        }
        m[3][3] = 1.0;
        Affine(m)
    } else if qform_code > 0 {
        qform_affine(&h, &pixdim, spacing)
    } else {
        Affine::from_spacing(spacing)
    };
    // Trust the affine for geometry; pixdim may be stale in sform-only files.
    let norms = affine.column_norms();
    let spacing = if (0..3).all(|a| norms[a] > 0.0) && (0..3).any(|a| (norms[a] - spacing[a]).abs() > super::SPACING_TOLERANCE_MM) {
        norms
    } else {
        spacing
    };

    let n = dims[0] * dims[1] * dims[2];
    let need = vox_offset + n * dtype.byte_size();
    if bytes.len() < need {
        return Err(Error::Format(format!("truncated data: {} of {need} bytes", bytes.len())));
    }
    let raw = &bytes[vox_offset..need];
    let mut data = decode_samples(raw, dtype, big_endian);
    if scaled {
        let (s, b) = (slope as f64, inter as f64);
        for v in &mut data {
            *v = (*v as f64 * s + b) as f32;
        }
    }

    let descrip = h.text(148, 80);
    let tagged = descrip
        .strip_prefix(UNIT_TAG_PREFIX)
        .and_then(IntensityUnit::parse);
    let unit = match tagged {
        Some(u) => u,
        None if dtype == NiftiDatatype::Uint8 && !scaled && data.iter().all(|&v| v == 0.0 || v == 1.0) => {
            IntensityUnit::Binary
        }
        None => IntensityUnit::Hu,
    };
    VoxelGrid::new(dims, spacing, affine, unit, data)
}

fn decode_samples(raw: &[u8], dtype: NiftiDatatype, big_endian: bool) -> Vec<f32> {
    macro_rules! decode {
        ($t:ty, $n:expr) => {
            raw.chunks_exact($n)
                .map(|c| {
                    let mut b = [0u8; $n];
                    b.copy_from_slice(c);
                    if big_endian {
                        b.reverse();
                    }
                    <$t>::from_le_bytes(b) as f32
                })
                .collect()
        };
    }
    match dtype {
        NiftiDatatype::Uint8 => raw.iter().map(|&b| b as f32).collect(),
        NiftiDatatype::Int16 => decode!(i16, 2),
        NiftiDatatype::Int32 => decode!(i32, 4),
        NiftiDatatype::Float32 => decode!(f32, 4),
        NiftiDatatype::Float64 => decode!(f64, 8),
    }
}

fn qform_affine(h: &HeaderView<'_>, pixdim: &[f32], spacing: [f64; 3]) -> Affine {
    let (b, c, d) = (h.f32(256) as f64, h.f32(260) as f64, h.f32(264) as f64);
    let a = (1.0 - (b * b + c * c + d * d)).max(0.0).sqrt();
    let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
    let r = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - b * b - c * c],
    ];
    let scale = [spacing[0], spacing[1], spacing[2] * qfac];
    let offs = [h.f32(268) as f64, h.f32(272) as f64, h.f32(276) as f64];
    let mut m = [[0.0; 4]; 4];
    for row in 0..3 {
        for col in 0..3 {
            m[row][col] = r[row][col] * scale[col];
        }
        m[row][3] = offs[row];
    }
    m[3][3] = 1.0;
    Affine(m)
}

fn build_header<T: Sample>(grid: &VoxelGrid<T>, dtype: NiftiDatatype) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put = |h: &mut Vec<u8>, off: usize, b: &[u8]| h[off..off + b.len()].copy_from_slice(b);
    put(&mut h, 0, &(HEADER_SIZE as i32).to_le_bytes());
    h[38] = b'r';
    let dims = grid.dims();
    let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dim.iter().enumerate() {
        put(&mut h, 40 + 2 * i, &d.to_le_bytes());
    }
    put(&mut h, 70, &dtype.code().to_le_bytes());
    put(&mut h, 72, &((dtype.byte_size() * 8) as i16).to_le_bytes());
    let sp = grid.spacing();
    let pixdim: [f32; 8] = [1.0, sp[0] as f32, sp[1] as f32, sp[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.iter().enumerate() {
        put(&mut h, 76 + 4 * i, &p.to_le_bytes());
    }
    put(&mut h, 108, &(VOX_OFFSET as f32).to_le_bytes());
    put(&mut h, 112, &1.0f32.to_le_bytes());
    put(&mut h, 116, &0.0f32.to_le_bytes());
    // mm + sec
    h[123] = 2 | 8;
    let tag = format!("{UNIT_TAG_PREFIX}{}", grid.unit().as_str());
    put(&mut h, 148, tag.as_bytes());
    put(&mut h, 252, &0i16.to_le_bytes());
    put(&mut h, 254, &1i16.to_le_bytes());
    let m = &grid.affine().0;
    for r in 0..3 {
        for c in 0..4 {
            put(&mut h, 280 + 16 * r + 4 * c, &(m[r][c] as f32).to_le_bytes());
        }
    }
    put(&mut h, 344, b"n+1\0");
    h
}

/// Writes `grid` as NIfTI-1: `uint8` for binary grids, `float32` otherwise.
/// A path ending in `.gz` is gzip-compressed.
pub fn write_nifti<T: Sample>(grid: &VoxelGrid<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if grid.dims().iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Unsupported(format!("dims {:?} exceed NIfTI-1 limits", grid.dims())));
    }
    let dtype = match grid.unit() {
        IntensityUnit::Binary => NiftiDatatype::Uint8,
        _ => NiftiDatatype::Float32,
    };
    let mut bytes = build_header(grid, dtype);
    bytes.reserve(grid.len() * dtype.byte_size());
    match dtype {
        NiftiDatatype::Uint8 => bytes.extend(grid.data().iter().map(|v| v.to_f32() as u8)),
        _ => {
            for v in grid.data() {
                bytes.extend_from_slice(&v.to_f32().to_le_bytes());
            }
        }
    }
    let gz = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("gz"))
        .unwrap_or(false);
    let write = || -> std::io::Result<()> {
        let file = BufWriter::new(File::create(path)?);
        if gz {
            let mut enc = GzEncoder::new(file, Compression::fast());
            enc.write_all(&bytes)?;
            enc.finish()?.flush()
        } else {
            let mut file = file;
            file.write_all(&bytes)?;
            file.flush()
        }
    };
    write().map_err(|e| Error::io(path, e))
}
