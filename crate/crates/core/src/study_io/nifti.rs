//! Single-file NIfTI-1 (`.nii`, `.nii.gz`) reader and writer.
//!
//! Only the three sample types needed for cine MR and label volumes are
//! accepted: `uint8`, `int16` and `float32`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::{CineStudy, LabelMap, StudyDims, VoxelSpacing};
use crate::error::{Error, Result};

pub const NIFTI1_HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
const DEFAULT_VOX_OFFSET: usize = 352;

const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
const MAGIC_PAIR: [u8; 4] = *b"ni1\0";
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endianness {
    Little,
    Big,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NiftiDatatype {
    Uint8,
    Int16,
    Float32,
}

impl NiftiDatatype {
    pub fn code(self) -> i16 {
        match self {
            NiftiDatatype::Uint8 => 2,
            NiftiDatatype::Int16 => 4,
            NiftiDatatype::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(NiftiDatatype::Uint8),
            4 => Ok(NiftiDatatype::Int16),
            16 => Ok(NiftiDatatype::Float32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn bitpix(self) -> i16 {
        match self {
            NiftiDatatype::Uint8 => 8,
            NiftiDatatype::Int16 => 16,
            NiftiDatatype::Float32 => 32,
        }
    }

    pub fn byte_size(self) -> usize {
        self.bitpix() as usize / 8
    }
}

/// Every field of the 348-byte NIfTI-1 header.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub sizeof_hdr: i32,
    pub data_type: [u8; 10],
    pub db_name: [u8; 18],
    pub extents: i32,
    pub session_error: i16,
    pub regular: u8,
    pub dim_info: u8,
    pub dim: [i16; 8],
    pub intent_p1: f32,
    pub intent_p2: f32,
    pub intent_p3: f32,
    pub intent_code: i16,
    pub datatype: i16,
    pub bitpix: i16,
    pub slice_start: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub slice_end: i16,
    pub slice_code: u8,
    pub xyzt_units: u8,
    pub cal_max: f32,
    pub cal_min: f32,
    pub slice_duration: f32,
    pub toffset: f32,
    pub glmax: i32,
    pub glmin: i32,
    pub descrip: [u8; 80],
    pub aux_file: [u8; 24],
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern_b: f32,
    pub quatern_c: f32,
    pub quatern_d: f32,
    pub qoffset_x: f32,
    pub qoffset_y: f32,
    pub qoffset_z: f32,
    pub srow_x: [f32; 4],
    pub srow_y: [f32; 4],
    pub srow_z: [f32; 4],
    pub intent_name: [u8; 16],
    pub magic: [u8; 4],
}

impl Default for NiftiHeader {
    fn default() -> Self {
        NiftiHeader {
            sizeof_hdr: NIFTI1_HEADER_SIZE as i32,
            data_type: [0; 10],
            db_name: [0; 18],
            extents: 0,
            session_error: 0,
            regular: b'r',
            dim_info: 0,
            dim: [1, 1, 1, 1, 1, 1, 1, 1],
            intent_p1: 0.0,
            intent_p2: 0.0,
            intent_p3: 0.0,
            intent_code: 0,
            datatype: NiftiDatatype::Float32.code(),
            bitpix: NiftiDatatype::Float32.bitpix(),
            slice_start: 0,
            pixdim: [1.0; 8],
            vox_offset: DEFAULT_VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            slice_end: 0,
            slice_code: 0,
            // mm + ms
            xyzt_units: 2 | 16,
            cal_max: 0.0,
            cal_min: 0.0,
            slice_duration: 0.0,
            toffset: 0.0,
            glmax: 0,
            glmin: 0,
            descrip: [0; 80],
            aux_file: [0; 24],
            qform_code: 0,
            sform_code: 0,
            quatern_b: 0.0,
            quatern_c: 0.0,
            quatern_d: 0.0,
            qoffset_x: 0.0,
            qoffset_y: 0.0,
            qoffset_z: 0.0,
            srow_x: [0.0; 4],
            srow_y: [0.0; 4],
            srow_z: [0.0; 4],
            intent_name: [0; 16],
            magic: MAGIC_SINGLE,
        }
    }
}

impl NiftiHeader {
    /// Header for a `(cols, rows, slices, frames)` volume.
    pub fn for_volume(
        extents: [usize; 4],
        spacing: VoxelSpacing,
        datatype: NiftiDatatype,
    ) -> Result<Self> {
        let mut h = NiftiHeader::default();
        let rank = if extents[3] > 1 {
            4
        } else if extents[2] > 1 {
            3
        } else {
            2
        };
        h.dim[0] = rank;
        for (i, &e) in extents.iter().enumerate() {
            h.dim[i + 1] = i16::try_from(e)
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| Error::Validation(format!("extent {e} does not fit a NIfTI-1 dim")))?;
        }
        h.pixdim = [
            1.0,
            spacing.dx as f32,
            spacing.dy as f32,
            spacing.dz as f32,
            spacing.dt as f32,
            1.0,
            1.0,
            1.0,
        ];
        h.datatype = datatype.code();
        h.bitpix = datatype.bitpix();
        Ok(h)
    }

    pub fn sample_type(&self) -> Result<NiftiDatatype> {
        let dt = NiftiDatatype::from_code(self.datatype)?;
        if self.bitpix != dt.bitpix() {
            return Err(Error::Format(format!(
                "bitpix {} does not match datatype {}",
                self.bitpix, self.datatype
            )));
        }
        Ok(dt)
    }

    /// `(cols, rows, slices, frames)`; trailing unused dims are 1.
    pub fn extents(&self) -> Result<[usize; 4]> {
        let rank = self.dim[0];
        if !(1..=7).contains(&rank) {
            return Err(Error::Format(format!("dim[0] = {rank} is not a valid rank")));
        }
        let rank = rank as usize;
        let mut out = [1usize; 4];
        for i in 1..=rank {
            let d = self.dim[i];
            if d < 1 {
                return Err(Error::Format(format!("dim[{i}] = {d} must be >= 1")));
            }
            if i <= 4 {
                out[i - 1] = d as usize;
            } else if d != 1 {
                return Err(Error::Format(format!("dim[{i}] = {d}: only 4-D volumes are supported")));
            }
        }
        Ok(out)
    }

    pub fn sample_count(&self) -> Result<usize> {
        Ok(self.extents()?.iter().product())
    }

    /// Scale factors actually applied to stored samples; slope 0 means identity.
    pub fn scaling(&self) -> (f64, f64) {
        let slope = if self.scl_slope == 0.0 || !self.scl_slope.is_finite() {
            1.0
        } else {
            self.scl_slope as f64
        };
        let inter = if self.scl_inter.is_finite() {
            self.scl_inter as f64
        } else {
            0.0
        };
        (slope, inter)
    }

    /// Voxel spacing in mm / ms, honouring `xyzt_units`.
    pub fn spacing(&self) -> Result<VoxelSpacing> {
        let spatial = match self.xyzt_units & 0x07 {
            1 => 1000.0,
            3 => 0.001,
            _ => 1.0,
        };
        let temporal = match self.xyzt_units & 0x38 {
            8 => 1000.0,
            24 => 0.001,
            _ => 1.0,
        };
        let rank = self.dim[0].max(1) as usize;
        let axis = |i: usize| -> f64 {
            let v = self.pixdim[i] as f64;
            // A missing slice axis (2-D image) has no meaningful pitch.
            if i > rank && !(v > 0.0) {
                1.0
            } else {
                v
            }
        };
        let dt = self.pixdim[4] as f64 * temporal;
        VoxelSpacing::new(
            axis(1) * spatial,
            axis(2) * spatial,
            axis(3) * spatial,
            if dt.is_finite() && dt > 0.0 { dt } else { 0.0 },
        )
    }

    fn decode(buf: &[u8], endian: Endianness) -> Self {
        let r = FieldReader { buf, endian };
        NiftiHeader {
            sizeof_hdr: r.i32(0),
            data_type: r.bytes(4),
            db_name: r.bytes(14),
            extents: r.i32(32),
            session_error: r.i16(36),
            regular: buf[38],
            dim_info: buf[39],
            dim: std::array::from_fn(|i| r.i16(40 + 2 * i)),
            intent_p1: r.f32(56),
            intent_p2: r.f32(60),
            intent_p3: r.f32(64),
            intent_code: r.i16(68),
            datatype: r.i16(70),
            bitpix: r.i16(72),
            slice_start: r.i16(74),
            pixdim: std::array::from_fn(|i| r.f32(76 + 4 * i)),
            vox_offset: r.f32(108),
            scl_slope: r.f32(112),
            scl_inter: r.f32(116),
            slice_end: r.i16(120),
            slice_code: buf[122],
            xyzt_units: buf[123],
            cal_max: r.f32(124),
            cal_min: r.f32(128),
            slice_duration: r.f32(132),
            toffset: r.f32(136),
            glmax: r.i32(140),
            glmin: r.i32(144),
            descrip: r.bytes(148),
            aux_file: r.bytes(228),
            qform_code: r.i16(252),
            sform_code: r.i16(254),
            quatern_b: r.f32(256),
            quatern_c: r.f32(260),
            quatern_d: r.f32(264),
            qoffset_x: r.f32(268),
            qoffset_y: r.f32(272),
            qoffset_z: r.f32(276),
            srow_x: std::array::from_fn(|i| r.f32(280 + 4 * i)),
            srow_y: std::array::from_fn(|i| r.f32(296 + 4 * i)),
            srow_z: std::array::from_fn(|i| r.f32(312 + 4 * i)),
            intent_name: r.bytes(328),
            magic: r.bytes(344),
        }
    }

    fn encode(&self, endian: Endianness) -> [u8; NIFTI1_HEADER_SIZE] {
        let mut w = FieldWriter {
            buf: [0; NIFTI1_HEADER_SIZE],
            endian,
        };
        w.i32(0, self.sizeof_hdr);
        w.bytes(4, &self.data_type);
        w.bytes(14, &self.db_name);
        w.i32(32, self.extents);
        w.i16(36, self.session_error);
        w.buf[38] = self.regular;
        w.buf[39] = self.dim_info;
        for (i, &d) in self.dim.iter().enumerate() {
            w.i16(40 + 2 * i, d);
        }
        w.f32(56, self.intent_p1);
        w.f32(60, self.intent_p2);
        w.f32(64, self.intent_p3);
        w.i16(68, self.intent_code);
        w.i16(70, self.datatype);
        w.i16(72, self.bitpix);
        w.i16(74, self.slice_start);
        for (i, &p) in self.pixdim.iter().enumerate() {
            w.f32(76 + 4 * i, p);
        }
        w.f32(108, self.vox_offset);
        w.f32(112, self.scl_slope);
        w.f32(116, self.scl_inter);
        w.i16(120, self.slice_end);
        w.buf[122] = self.slice_code;
        w.buf[123] = self.xyzt_units;
        w.f32(124, self.cal_max);
        w.f32(128, self.cal_min);
        w.f32(132, self.slice_duration);
        w.f32(136, self.toffset);
        w.i32(140, self.glmax);
        w.i32(144, self.glmin);
        w.bytes(148, &self.descrip);
        w.bytes(228, &self.aux_file);
        w.i16(252, self.qform_code);
        w.i16(254, self.sform_code);
        w.f32(256, self.quatern_b);
        w.f32(260, self.quatern_c);
        w.f32(264, self.quatern_d);
        w.f32(268, self.qoffset_x);
        w.f32(272, self.qoffset_y);
        w.f32(276, self.qoffset_z);
        for i in 0..4 {
            w.f32(280 + 4 * i, self.srow_x[i]);
            w.f32(296 + 4 * i, self.srow_y[i]);
            w.f32(312 + 4 * i, self.srow_z[i]);
        }
        w.bytes(328, &self.intent_name);
        w.bytes(344, &self.magic);
        w.buf
    }
}

struct FieldReader<'a> {
    buf: &'a [u8],
    endian: Endianness,
}

impl FieldReader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        self.buf[at..at + N].try_into().expect("header slice")
    }

    fn i16(&self, at: usize) -> i16 {
        let b = self.bytes::<2>(at);
        match self.endian {
            Endianness::Little => i16::from_le_bytes(b),
            Endianness::Big => i16::from_be_bytes(b),
        }
    }

    fn i32(&self, at: usize) -> i32 {
        let b = self.bytes::<4>(at);
        match self.endian {
            Endianness::Little => i32::from_le_bytes(b),
            Endianness::Big => i32::from_be_bytes(b),
        }
    }

    fn f32(&self, at: usize) -> f32 {
        let b = self.bytes::<4>(at);
        match self.endian {
            Endianness::Little => f32::from_le_bytes(b),
            Endianness::Big => f32::from_be_bytes(b),
        }
    }
}

struct FieldWriter {
    buf: [u8; NIFTI1_HEADER_SIZE],
    endian: Endianness,
}

impl FieldWriter {
    fn bytes(&mut self, at: usize, v: &[u8]) {
        self.buf[at..at + v.len()].copy_from_slice(v);
    }

    fn i16(&mut self, at: usize, v: i16) {
        let b = match self.endian {
            Endianness::Little => v.to_le_bytes(),
            Endianness::Big => v.to_be_bytes(),
        };
        self.bytes(at, &b);
    }

    fn i32(&mut self, at: usize, v: i32) {
        let b = match self.endian {
            Endianness::Little => v.to_le_bytes(),
            Endianness::Big => v.to_be_bytes(),
        };
        self.bytes(at, &b);
    }

    fn f32(&mut self, at: usize, v: f32) {
        let b = match self.endian {
            Endianness::Little => v.to_le_bytes(),
            Endianness::Big => v.to_be_bytes(),
        };
        self.bytes(at, &b);
    }
}

/// A decoded volume: header plus samples with `scl_slope`/`scl_inter` applied.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiVolume {
    pub header: NiftiHeader,
    pub endianness: Endianness,
    pub data: Vec<f64>,
}

impl NiftiVolume {
    pub fn extents(&self) -> [usize; 4] {
        self.header.extents().expect("validated on parse")
    }

    pub fn spacing(&self) -> Result<VoxelSpacing> {
        self.header.spacing()
    }

    pub fn into_study(self, case_id: impl Into<String>) -> Result<CineStudy> {
        let [cols, rows, slices, frames] = self.extents();
        let spacing = self.spacing()?;
        CineStudy::new(
            case_id,
            StudyDims {
                frames,
                slices,
                rows,
                cols,
            },
            self.data,
            spacing,
        )
    }

    /// Interprets a single-frame volume as class ids.
    pub fn into_label_map(self, frame_index: usize) -> Result<LabelMap> {
        let [cols, rows, slices, frames] = self.extents();
        if frames != 1 {
            return Err(Error::Consistency(format!(
                "label volume has {frames} frames, expected 1"
            )));
        }
        let spacing = self.spacing()?;
        let labels = self
            .data
            .iter()
            .map(|&v| {
                if v.fract() == 0.0 && (0.0..4.0).contains(&v) {
                    Ok(v as u8)
                } else {
                    Err(Error::Validation(format!("label value {v} is not a class id")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        LabelMap::new((slices, rows, cols), labels, spacing, frame_index)
    }
}

fn gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(bytes.len() * 4);
    MultiGzDecoder::new(bytes).read_to_end(&mut out)?;
    Ok(out)
}

fn detect_endianness(buf: &[u8]) -> Result<Endianness> {
    let raw: [u8; 4] = buf[0..4].try_into().expect("4 bytes");
    if i32::from_le_bytes(raw) == NIFTI1_HEADER_SIZE as i32 {
        Ok(Endianness::Little)
    } else if i32::from_be_bytes(raw) == NIFTI1_HEADER_SIZE as i32 {
        Ok(Endianness::Big)
    } else {
        Err(Error::Format(format!(
            "sizeof_hdr is {} in either byte order, expected 348",
            i32::from_le_bytes(raw)
        )))
    }
}

/// Decodes a raw or gzip-compressed single-file NIfTI-1 image.
pub fn parse_nifti1(bytes: &[u8]) -> Result<NiftiVolume> {
    let inflated;
    let buf = if bytes.starts_with(&GZIP_MAGIC) {
        inflated = gunzip(bytes)?;
        &inflated[..]
    } else {
        bytes
    };
    if buf.len() < NIFTI1_HEADER_SIZE {
        return Err(Error::Truncated {
            expected: NIFTI1_HEADER_SIZE,
            actual: buf.len(),
        });
    }
    let magic: [u8; 4] = buf[344..348].try_into().expect("4 bytes");
    if magic == MAGIC_PAIR {
        return Err(Error::Format(
            "detached header/image pairs (ni1) are not supported".into(),
        ));
    }
    if magic != MAGIC_SINGLE {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let endianness = detect_endianness(buf)?;
    let header = NiftiHeader::decode(&buf[..NIFTI1_HEADER_SIZE], endianness);
    let dtype = header.sample_type()?;
    let n = header.sample_count()?;
    let offset = header.vox_offset;
    if !(offset.is_finite() && offset >= NIFTI1_HEADER_SIZE as f32) || offset.fract() != 0.0 {
        return Err(Error::Format(format!("vox_offset {offset} is not usable")));
    }
    let start = offset as usize;
    let end = start + n * dtype.byte_size();
    if buf.len() < end {
        return Err(Error::Truncated {
            expected: end,
            actual: buf.len(),
        });
    }
    let (slope, inter) = header.scaling();
    let payload = &buf[start..end];
    let data: Vec<f64> = match dtype {
        NiftiDatatype::Uint8 => payload.iter().map(|&b| b as f64).collect(),
        NiftiDatatype::Int16 => payload
            .chunks_exact(2)
            .map(|c| {
                let b = [c[0], c[1]];
                let v = match endianness {
                    Endianness::Little => i16::from_le_bytes(b),
                    Endianness::Big => i16::from_be_bytes(b),
                };
                v as f64
            })
            .collect(),
        NiftiDatatype::Float32 => payload
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                let v = match endianness {
                    Endianness::Little => f32::from_le_bytes(b),
                    Endianness::Big => f32::from_be_bytes(b),
                };
                v as f64
            })
            .collect(),
    };
    let data = if slope == 1.0 && inter == 0.0 {
        data
    } else {
        data.into_iter().map(|v| v * slope + inter).collect()
    };
    Ok(NiftiVolume {
        header,
        endianness,
        data,
    })
}

/// Encodes `values` (already scaled, as returned by [`parse_nifti1`]) under
/// `header`. Integer types are rounded after undoing the scaling and must fit
/// the stored range.
pub fn encode_nifti1(
    header: &NiftiHeader,
    values: &[f64],
    endianness: Endianness,
    gzip: bool,
) -> Result<Vec<u8>> {
    let dtype = header.sample_type()?;
    let n = header.sample_count()?;
    if values.len() != n {
        return Err(Error::Consistency(format!(
            "{} values for a header describing {n} samples",
            values.len()
        )));
    }
    let mut header = header.clone();
    header.sizeof_hdr = NIFTI1_HEADER_SIZE as i32;
    header.magic = MAGIC_SINGLE;
    if !(header.vox_offset >= DEFAULT_VOX_OFFSET as f32) || header.vox_offset.fract() != 0.0 {
        header.vox_offset = DEFAULT_VOX_OFFSET as f32;
    }
    let start = header.vox_offset as usize;
    let mut out = Vec::with_capacity(start + n * dtype.byte_size());
    out.extend_from_slice(&header.encode(endianness));
    out.resize(start, 0);
    let (slope, inter) = header.scaling();
    let stored = |v: f64| (v - inter) / slope;
    let out_of_range = |v: f64| Error::Validation(format!("value {v} does not fit the stored datatype"));
    for &v in values {
        match dtype {
            NiftiDatatype::Uint8 => {
                let s = stored(v).round();
                if !(0.0..=255.0).contains(&s) {
                    return Err(out_of_range(v));
                }
                out.push(s as u8);
            }
            NiftiDatatype::Int16 => {
                let s = stored(v).round();
                if !(i16::MIN as f64..=i16::MAX as f64).contains(&s) {
                    return Err(out_of_range(v));
                }
                let s = s as i16;
                out.extend_from_slice(&match endianness {
                    Endianness::Little => s.to_le_bytes(),
                    Endianness::Big => s.to_be_bytes(),
                });
            }
            NiftiDatatype::Float32 => {
                let s = stored(v) as f32;
                out.extend_from_slice(&match endianness {
                    Endianness::Little => s.to_le_bytes(),
                    Endianness::Big => s.to_be_bytes(),
                });
            }
        }
    }
    if gzip {
        let mut enc = GzEncoder::new(Vec::new(), Compression::fast());
        enc.write_all(&out)?;
        out = enc.finish()?;
    }
    Ok(out)
}

fn is_gz_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Reads a `.nii` or `.nii.gz` file.
pub fn read_nifti1(path: &Path) -> Result<NiftiVolume> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_nifti1(&bytes)
}

/// Writes little-endian NIfTI-1, gzip-compressed when the path ends in `.gz`.
pub fn write_nifti1(path: &Path, header: &NiftiHeader, values: &[f64]) -> Result<()> {
    let bytes = encode_nifti1(header, values, Endianness::Little, is_gz_path(path))?;
    fs::write(path, bytes)?;
    Ok(())
}

impl CineStudy {
    /// Encodes the study as a 4-D float32 volume.
    pub fn to_nifti(&self) -> Result<(NiftiHeader, Vec<f64>)> {
        let d = self.dims();
        let header = NiftiHeader::for_volume(
            [d.cols, d.rows, d.slices, d.frames],
            self.spacing,
            NiftiDatatype::Float32,
        )?;
        Ok((header, self.intensities().to_vec()))
    }
}

impl LabelMap {
    /// Encodes the map as a 3-D uint8 volume.
    pub fn to_nifti(&self) -> Result<(NiftiHeader, Vec<f64>)> {
        let (s, r, c) = self.dims();
        let mut spacing = self.spacing;
        spacing.dt = 0.0;
        let header = NiftiHeader::for_volume([c, r, s, 1], spacing, NiftiDatatype::Uint8)?;
        Ok((header, self.labels().iter().map(|&l| l as f64).collect()))
    }
}
