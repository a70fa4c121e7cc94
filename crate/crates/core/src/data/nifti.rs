//! Single-file NIfTI-1 (`n+1`) reader and writer.

use std::io::{Read, Write};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{Dims, Geometry, Volume};

pub const NIFTI_HEADER_SIZE: i32 = 348;
/// Header plus the 4-byte extension flag.
pub const NIFTI_VOX_OFFSET: usize = 352;

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endianness {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NiftiDatatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl NiftiDatatype {
    pub fn code(self) -> i16 {
        match self {
            NiftiDatatype::U8 => 2,
            NiftiDatatype::I16 => 4,
            NiftiDatatype::I32 => 8,
            NiftiDatatype::F32 => 16,
            NiftiDatatype::F64 => 64,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => NiftiDatatype::U8,
            4 => NiftiDatatype::I16,
            8 => NiftiDatatype::I32,
            16 => NiftiDatatype::F32,
            64 => NiftiDatatype::F64,
            c => return Err(Error::Nifti(format!("unsupported datatype code {c}"))),
        })
    }

    pub fn bytes(self) -> usize {
        match self {
            NiftiDatatype::U8 => 1,
            NiftiDatatype::I16 => 2,
            NiftiDatatype::I32 | NiftiDatatype::F32 => 4,
            NiftiDatatype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiftiMeta {
    /// Extents of the first four dimensions; the fourth must be 1.
    pub dims: [usize; 4],
    pub datatype: NiftiDatatype,
    pub spacing_mm: [f64; 3],
    pub scl_slope: f64,
    pub scl_inter: f64,
    pub endianness: Endianness,
    pub magic: String,
    /// Whether the bytes were (or should be) wrapped in a gzip container.
    pub gzip: bool,
}

impl NiftiMeta {
    /// Writer defaults for `geom`: little-endian float32, uncompressed.
    pub fn for_geometry(geom: &Geometry) -> Self {
        Self {
            dims: [geom.dims.nx, geom.dims.ny, geom.dims.nz, 1],
            datatype: NiftiDatatype::F32,
            spacing_mm: geom.spacing_mm,
            scl_slope: 1.0,
            scl_inter: 0.0,
            endianness: Endianness::Little,
            magic: "n+1".into(),
            gzip: false,
        }
    }
}

fn err(msg: impl Into<String>) -> Error {
    Error::Nifti(msg.into())
}

struct Fields<'a> {
    b: &'a [u8],
    e: Endianness,
}

impl Fields<'_> {
    fn raw<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut a: [u8; N] = self.b[at..at + N].try_into().unwrap();
        if self.e == Endianness::Big {
            a.reverse();
        }
        a
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.raw(at))
    }
    fn i32(&self, at: usize) -> i32 {
        i32::from_le_bytes(self.raw(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.raw(at))
    }
    fn f64(&self, at: usize) -> f64 {
        f64::from_le_bytes(self.raw(at))
    }
}

/// Parses a NIfTI-1 single file, gzip-wrapped or not.
///
/// Voxel values are widened to `f64`, scaled by `scl_slope`/`scl_inter` when
/// the slope is nonzero, and returned in file (x fastest) order.
pub fn nifti_read<T: Real>(bytes: &[u8]) -> Result<(Volume<T>, NiftiMeta)> {
    let gzip = bytes.starts_with(&GZIP_MAGIC);
    let inflated;
    let b: &[u8] = if gzip {
        let mut out = Vec::new();
        MultiGzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| err(format!("gzip: {e}")))?;
        inflated = out;
        &inflated
    } else {
        bytes
    };
    if b.len() < NIFTI_HEADER_SIZE as usize {
        return Err(err("truncated header"));
    }
    let size = [b[0], b[1], b[2], b[3]];
    let e = if i32::from_le_bytes(size) == NIFTI_HEADER_SIZE {
        Endianness::Little
    } else if i32::from_be_bytes(size) == NIFTI_HEADER_SIZE {
        Endianness::Big
    } else {
        return Err(err("header size field is not 348"));
    };
    let f = Fields { b, e };

    let magic = &b[344..348];
    match magic {
        b"n+1\0" => {}
        b"ni1\0" => return Err(err("header/image pairs (ni1) are not supported")),
        _ => return Err(err(format!("bad magic {:?}", String::from_utf8_lossy(magic)))),
    }

    let ndim = f.i16(40);
    if !(1..=7).contains(&ndim) {
        return Err(err(format!("dim[0] = {ndim} out of range")));
    }
    let mut dims = [1usize; 7];
    for (k, d) in dims.iter_mut().enumerate().take(ndim as usize) {
        let v = f.i16(42 + 2 * k);
        if v < 1 {
            return Err(err(format!("dim[{}] = {v} is not positive", k + 1)));
        }
        *d = v as usize;
    }
    if dims[3..].iter().any(|&d| d != 1) {
        return Err(err(format!("only 3D images are supported, got dims {:?}", &dims[..ndim as usize])));
    }

    let datatype = NiftiDatatype::from_code(f.i16(70))?;
    let bitpix = f.i16(72);
    if bitpix as usize != 8 * datatype.bytes() {
        return Err(err(format!("bitpix {bitpix} does not match {datatype:?}")));
    }
    let mut spacing = [0.0; 3];
    for (k, s) in spacing.iter_mut().enumerate() {
        *s = (f.f32(80 + 4 * k) as f64).abs();
    }
    let vox_offset = f.f32(108);
    if !(vox_offset >= NIFTI_VOX_OFFSET as f32) || vox_offset.fract() != 0.0 {
        return Err(err(format!("vox_offset {vox_offset} is invalid")));
    }
    let vox_offset = vox_offset as usize;
    let scl_slope = f.f32(112) as f64;
    let scl_inter = f.f32(116) as f64;

    let geom = Geometry::new(Dims::new(dims[0], dims[1], dims[2]), spacing).map_err(|e| err(e.to_string()))?;
    let n = geom.len();
    let w = datatype.bytes();
    let end = vox_offset + n * w;
    if b.len() < end {
        return Err(err(format!("truncated data: need {end} bytes, have {}", b.len())));
    }
    let raw = &b[vox_offset..end];
    let d = Fields { b: raw, e };
    let scale = scl_slope != 0.0 && scl_slope.is_finite();
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let at = i * w;
        let v = match datatype {
            NiftiDatatype::U8 => raw[at] as f64,
            NiftiDatatype::I16 => d.i16(at) as f64,
            NiftiDatatype::I32 => d.i32(at) as f64,
            NiftiDatatype::F32 => d.f32(at) as f64,
            NiftiDatatype::F64 => d.f64(at),
        };
        values.push(T::cast(if scale { v * scl_slope + scl_inter } else { v }));
    }
    let vol = Volume::new(geom, values).map_err(|e| err(e.to_string()))?;
    let meta = NiftiMeta {
        dims: [dims[0], dims[1], dims[2], dims[3]],
        datatype,
        spacing_mm: spacing,
        scl_slope,
        scl_inter,
        endianness: e,
        magic: "n+1".into(),
        gzip,
    };
    Ok((vol, meta))
}

/// Serializes `v` as a single-file NIfTI-1 image.
///
/// Datatype, byte order and gzip wrapping come from `meta`; dims and spacing
/// come from `v`. Scaling is written as slope 1, intercept 0. Integer datatypes
/// require integral values within range.
pub fn nifti_write<T: Real>(v: &Volume<T>, meta: &NiftiMeta) -> Result<Vec<u8>> {
    let dims = v.dims();
    let mut dim = [0i16; 8];
    dim[0] = 3;
    for (k, n) in [dims.nx, dims.ny, dims.nz].into_iter().enumerate() {
        dim[k + 1] = i16::try_from(n).map_err(|_| err(format!("extent {n} exceeds the 16-bit header field")))?;
    }
    dim[4..].fill(1);

    let e = meta.endianness;
    let put = |out: &mut Vec<u8>, mut bytes: Vec<u8>| {
        if e == Endianness::Big {
            bytes.reverse();
        }
        out.extend_from_slice(&bytes);
    };

    let mut h: Vec<u8> = Vec::with_capacity(NIFTI_VOX_OFFSET + v.len() * meta.datatype.bytes());
    put(&mut h, NIFTI_HEADER_SIZE.to_le_bytes().to_vec());
    h.resize(38, 0);
    h.push(b'r');
    h.push(0);
    for d in dim {
        put(&mut h, d.to_le_bytes().to_vec());
    }
    h.resize(70, 0);
    put(&mut h, meta.datatype.code().to_le_bytes().to_vec());
    put(&mut h, (8 * meta.datatype.bytes() as i16).to_le_bytes().to_vec());
    h.resize(76, 0);
    let sp = v.geometry().spacing_mm;
    let pixdim = [1.0f32, sp[0] as f32, sp[1] as f32, sp[2] as f32, 1.0, 1.0, 1.0, 1.0];
    for p in pixdim {
        put(&mut h, p.to_le_bytes().to_vec());
    }
    put(&mut h, (NIFTI_VOX_OFFSET as f32).to_le_bytes().to_vec());
    put(&mut h, 1.0f32.to_le_bytes().to_vec());
    put(&mut h, 0.0f32.to_le_bytes().to_vec());
    h.resize(123, 0);
    // xyzt_units: millimetres
    h.push(2);
    h.resize(254, 0);
    // sform_code 1 with a diagonal scaling matrix
    put(&mut h, 1i16.to_le_bytes().to_vec());
    h.resize(280, 0);
    for row in 0..3 {
        for col in 0..4 {
            let val = if row == col { sp[row] as f32 } else { 0.0 };
            put(&mut h, val.to_le_bytes().to_vec());
        }
    }
    h.resize(344, 0);
    h.extend_from_slice(b"n+1\0");
    h.extend_from_slice(&[0; 4]);
    debug_assert_eq!(h.len(), NIFTI_VOX_OFFSET);

    for &x in v.data() {
        let x = x.as_f64();
        let int = |lo: f64, hi: f64| -> Result<f64> {
            if x.fract() != 0.0 || x < lo || x > hi {
                return Err(err(format!("value {x} is not representable as {:?}", meta.datatype)));
            }
            Ok(x)
        };
        let bytes = match meta.datatype {
            NiftiDatatype::U8 => vec![int(0.0, 255.0)? as u8],
            NiftiDatatype::I16 => (int(i16::MIN as f64, i16::MAX as f64)? as i16).to_le_bytes().to_vec(),
            NiftiDatatype::I32 => (int(i32::MIN as f64, i32::MAX as f64)? as i32).to_le_bytes().to_vec(),
            NiftiDatatype::F32 => (x as f32).to_le_bytes().to_vec(),
            NiftiDatatype::F64 => x.to_le_bytes().to_vec(),
        };
        put(&mut h, bytes);
    }

    if meta.gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&h)?;
        return Ok(enc.finish()?);
    }
    Ok(h)
}
