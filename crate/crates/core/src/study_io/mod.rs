//! Volume and case-directory I/O.
//!
//! Cine studies and label maps are held in memory as flat row-major buffers
//! indexed `[frame][slice][row][col]` (column fastest), which is also the
//! NIfTI-1 on-disk order, so decoding never reorders samples.

mod acdc;
mod nifti;
mod report;

pub use acdc::{
    load_acdc_case, parse_info_cfg, write_acdc_case, AcdcCase, CaseInfo, FrameNumbering,
};
pub use nifti::{
    encode_nifti1, parse_nifti1, read_nifti1, write_nifti1, Endianness, NiftiDatatype,
    NiftiHeader, NiftiVolume, NIFTI1_HEADER_SIZE,
};
pub use report::{
    format_bland_altman, metrics_sidecar_path, parse_bland_altman, read_concordance_csv,
    read_metrics_csv, read_paired_series_csv, write_metrics_csv, write_report, ReportFormat,
    UNITS_NOTE,
};

use crate::error::{Error, Result};

/// Physical sample pitch of a study, in millimetres and milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VoxelSpacing {
    /// mm per column.
    pub dx: f64,
    /// mm per row.
    pub dy: f64,
    /// mm per slice, inter-slice gap included.
    pub dz: f64,
    /// ms per frame, 0 when unknown.
    pub dt: f64,
}

impl VoxelSpacing {
    pub fn new(dx: f64, dy: f64, dz: f64, dt: f64) -> Result<Self> {
        let s = VoxelSpacing { dx, dy, dz, dt };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let spatial_ok = [self.dx, self.dy, self.dz]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !spatial_ok || !(self.dt.is_finite() && self.dt >= 0.0) {
            return Err(Error::Validation(format!("invalid voxel spacing {self:?}")));
        }
        Ok(())
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume_mm3(&self) -> f64 {
        self.dx * self.dy * self.dz
    }

    /// Same spacing with every spatial pitch multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        VoxelSpacing {
            dx: self.dx * factor,
            dy: self.dy * factor,
            dz: self.dz * factor,
            dt: self.dt,
        }
    }
}

/// Extents of a 4-D cine study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StudyDims {
    pub frames: usize,
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
}

impl StudyDims {
    pub fn slice_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn frame_len(&self) -> usize {
        self.slices * self.slice_len()
    }

    pub fn len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A short-axis cine acquisition with its metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct CineStudy {
    dims: StudyDims,
    intensities: Vec<f64>,
    pub spacing: VoxelSpacing,
    pub case_id: String,
    pub height_m: Option<f64>,
    pub weight_kg: Option<f64>,
    ed_frame: Option<usize>,
    es_frame: Option<usize>,
}

impl CineStudy {
    pub fn new(
        case_id: impl Into<String>,
        dims: StudyDims,
        intensities: Vec<f64>,
        spacing: VoxelSpacing,
    ) -> Result<Self> {
        if dims.frames == 0 || dims.slices == 0 || dims.rows == 0 || dims.cols == 0 {
            return Err(Error::Validation(format!("study dimensions must be >= 1: {dims:?}")));
        }
        if intensities.len() != dims.len() {
            return Err(Error::Consistency(format!(
                "{} samples for dimensions {dims:?}",
                intensities.len()
            )));
        }
        if intensities.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("study intensities".into()));
        }
        spacing.validate()?;
        Ok(CineStudy {
            dims,
            intensities,
            spacing,
            case_id: case_id.into(),
            height_m: None,
            weight_kg: None,
            ed_frame: None,
            es_frame: None,
        })
    }

    pub fn dims(&self) -> StudyDims {
        self.dims
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    /// One 2-D image, `rows × cols`, column fastest.
    pub fn image(&self, frame: usize, slice: usize) -> &[f64] {
        let start = frame * self.dims.frame_len() + slice * self.dims.slice_len();
        &self.intensities[start..start + self.dims.slice_len()]
    }

    pub fn ed_frame(&self) -> Option<usize> {
        self.ed_frame
    }

    pub fn es_frame(&self) -> Option<usize> {
        self.es_frame
    }

    pub fn set_phases(&mut self, ed: Option<usize>, es: Option<usize>) -> Result<()> {
        for f in [ed, es].into_iter().flatten() {
            if f >= self.dims.frames {
                return Err(Error::Validation(format!(
                    "phase frame {f} out of range for {} frames",
                    self.dims.frames
                )));
            }
        }
        self.ed_frame = ed;
        self.es_frame = es;
        Ok(())
    }

    /// Body mass index in kg/m², when height and weight are both known.
    pub fn bmi(&self) -> Option<f64> {
        match (self.height_m, self.weight_kg) {
            (Some(h), Some(w)) if h > 0.0 => Some(w / (h * h)),
            _ => None,
        }
    }
}

/// ACDC class ids.
pub mod class {
    pub const BACKGROUND: u8 = 0;
    pub const RV_CAVITY: u8 = 1;
    pub const LV_MYOCARDIUM: u8 = 2;
    pub const LV_CAVITY: u8 = 3;
    pub const COUNT: usize = 4;
}

/// Per-voxel class map of one frame, `[slice][row][col]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    slices: usize,
    rows: usize,
    cols: usize,
    labels: Vec<u8>,
    pub spacing: VoxelSpacing,
    pub frame_index: usize,
}

impl LabelMap {
    pub fn new(
        (slices, rows, cols): (usize, usize, usize),
        labels: Vec<u8>,
        spacing: VoxelSpacing,
        frame_index: usize,
    ) -> Result<Self> {
        if slices == 0 || rows == 0 || cols == 0 {
            return Err(Error::Validation("label map dimensions must be >= 1".into()));
        }
        if labels.len() != slices * rows * cols {
            return Err(Error::Consistency(format!(
                "{} labels for a {slices}x{rows}x{cols} grid",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= class::COUNT) {
            return Err(Error::Validation(format!("class id {bad} outside 0..=3")));
        }
        spacing.validate()?;
        Ok(LabelMap {
            slices,
            rows,
            cols,
            labels,
            spacing,
            frame_index,
        })
    }

    /// All-background map.
    pub fn empty(dims: (usize, usize, usize), spacing: VoxelSpacing, frame_index: usize) -> Self {
        let n = dims.0 * dims.1 * dims.2;
        LabelMap::new(dims, vec![0; n], spacing, frame_index).expect("valid empty label map")
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.slices, self.rows, self.cols)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn slice(&self, s: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.labels[s * n..(s + 1) * n]
    }

    /// Replaces one slice; every value must be a valid class id.
    pub fn set_slice(&mut self, s: usize, values: &[u8]) -> Result<()> {
        let n = self.rows * self.cols;
        if values.len() != n {
            return Err(Error::Consistency(format!("slice has {} labels, need {n}", values.len())));
        }
        if values.iter().any(|&l| l as usize >= class::COUNT) {
            return Err(Error::Validation("class id outside 0..=3".into()));
        }
        self.labels[s * n..(s + 1) * n].copy_from_slice(values);
        Ok(())
    }

    pub fn count(&self, class_id: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class_id).count()
    }
}
