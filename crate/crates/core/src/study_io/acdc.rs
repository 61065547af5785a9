//! ACDC-style case directories:
//!
//! ```text
//! <case>/<case>_4d.nii.gz
//! <case>/<case>_frameNN.nii.gz
//! <case>/<case>_frameNN_gt.nii.gz
//! <case>/Info.cfg
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::nifti::{read_nifti1, write_nifti1};
use super::{CineStudy, LabelMap};
use crate::error::{Error, Result};

/// How frame numbers in `Info.cfg` and `_frameNN` file names map to
/// indices into the 4-D volume. Both always share one numbering.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FrameNumbering {
    /// `frame00` is the first volume (files written by this crate).
    #[default]
    ZeroBased,
    /// `frame01` is the first volume (the public ACDC release).
    OneBased,
}

impl FrameNumbering {
    fn base(self) -> usize {
        match self {
            FrameNumbering::ZeroBased => 0,
            FrameNumbering::OneBased => 1,
        }
    }

    fn to_index(self, number: usize) -> Option<usize> {
        number.checked_sub(self.base())
    }

    fn to_number(self, index: usize) -> usize {
        index + self.base()
    }
}

/// Contents of `Info.cfg`, frame values as written in the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CaseInfo {
    pub ed: Option<usize>,
    pub es: Option<usize>,
    /// Metres (the file stores centimetres).
    pub height_m: Option<f64>,
    pub weight_kg: Option<f64>,
    pub group: Option<String>,
    pub nb_frame: Option<usize>,
}

/// Parses `Key: value` lines. Blank lines are skipped, unknown keys ignored.
pub fn parse_info_cfg(text: &str, file: &Path) -> Result<CaseInfo> {
    let mut info = CaseInfo::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = || Error::Parse {
            file: file.to_path_buf(),
            line: i + 1,
            content: raw.to_string(),
        };
        let (key, value) = line.split_once(':').ok_or_else(err)?;
        let value = value.trim();
        let int = || value.parse::<usize>().map_err(|_| err());
        let real = || {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(err)
        };
        match key.trim() {
            "ED" => info.ed = Some(int()?),
            "ES" => info.es = Some(int()?),
            "NbFrame" => info.nb_frame = Some(int()?),
            "Height" => info.height_m = Some(real()? / 100.0),
            "Weight" => info.weight_kg = Some(real()?),
            "Group" => info.group = Some(value.to_string()),
            _ => {}
        }
    }
    Ok(info)
}

/// A loaded case: the cine study plus whatever ground truth is present.
#[derive(Clone, Debug)]
pub struct AcdcCase {
    pub study: CineStudy,
    /// `(frame_index, labels)`, sorted by frame index.
    pub ground_truth: Vec<(usize, LabelMap)>,
    pub info: CaseInfo,
}

fn case_id_of(dir: &Path) -> Result<String> {
    dir.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Validation(format!("{} has no usable case name", dir.display())))
}

fn first_existing(candidates: &[PathBuf]) -> Option<&PathBuf> {
    candidates.iter().find(|p| p.is_file())
}

/// Frame number of a `<case>_frameNN_gt.nii[.gz]` file name.
fn gt_frame_number(case_id: &str, file_name: &str) -> Option<usize> {
    let rest = file_name.strip_prefix(case_id)?.strip_prefix("_frame")?;
    let digits = rest
        .strip_suffix("_gt.nii.gz")
        .or_else(|| rest.strip_suffix("_gt.nii"))?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn load_acdc_case(dir: &Path, numbering: FrameNumbering) -> Result<AcdcCase> {
    let case_id = case_id_of(dir)?;
    let cine_candidates = [
        dir.join(format!("{case_id}_4d.nii.gz")),
        dir.join(format!("{case_id}_4d.nii")),
    ];
    let cine_path = first_existing(&cine_candidates)
        .ok_or_else(|| Error::NotFound(cine_candidates[0].clone()))?;
    let mut study = read_nifti1(cine_path)?.into_study(case_id.clone())?;

    let info_path = dir.join("Info.cfg");
    let info = match fs::read_to_string(&info_path) {
        Ok(text) => parse_info_cfg(&text, &info_path)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => CaseInfo::default(),
        Err(e) => return Err(e.into()),
    };
    let to_index = |n: Option<usize>| -> Result<Option<usize>> {
        n.map(|n| {
            numbering.to_index(n).ok_or_else(|| {
                Error::Consistency(format!("frame number {n} is below the numbering base"))
            })
        })
        .transpose()
    };
    study.set_phases(to_index(info.ed)?, to_index(info.es)?)?;
    study.height_m = info.height_m;
    study.weight_kg = info.weight_kg;

    let dims = study.dims();
    let mut ground_truth = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        let Some(number) = name.to_str().and_then(|n| gt_frame_number(&case_id, n)) else {
            continue;
        };
        let frame = numbering.to_index(number).ok_or_else(|| {
            Error::Consistency(format!("{name:?}: frame number below the numbering base"))
        })?;
        if frame >= dims.frames {
            return Err(Error::Consistency(format!(
                "{name:?}: frame {frame} beyond the {} frames of the cine",
                dims.frames
            )));
        }
        let labels = read_nifti1(&entry.path())?.into_label_map(frame)?;
        if labels.dims() != (dims.slices, dims.rows, dims.cols) {
            return Err(Error::Consistency(format!(
                "{name:?}: label grid {:?} does not match image grid {:?}",
                labels.dims(),
                (dims.slices, dims.rows, dims.cols)
            )));
        }
        ground_truth.push((frame, labels));
    }
    ground_truth.sort_by_key(|(f, _)| *f);
    Ok(AcdcCase {
        study,
        ground_truth,
        info,
    })
}

/// Writes `study` and `ground_truth` as `<root>/<case_id>/...`, returning the
/// case directory.
pub fn write_acdc_case(
    root: &Path,
    study: &CineStudy,
    ground_truth: &[(usize, LabelMap)],
    group: &str,
    numbering: FrameNumbering,
) -> Result<PathBuf> {
    let id = &study.case_id;
    let dir = root.join(id);
    fs::create_dir_all(&dir)?;
    let (header, values) = study.to_nifti()?;
    write_nifti1(&dir.join(format!("{id}_4d.nii.gz")), &header, &values)?;
    for (frame, labels) in ground_truth {
        let n = numbering.to_number(*frame);
        let (h, v) = labels.to_nifti()?;
        write_nifti1(&dir.join(format!("{id}_frame{n:02}_gt.nii.gz")), &h, &v)?;
    }
    let mut cfg = String::new();
    if let Some(ed) = study.ed_frame() {
        cfg.push_str(&format!("ED: {}\n", numbering.to_number(ed)));
    }
    if let Some(es) = study.es_frame() {
        cfg.push_str(&format!("ES: {}\n", numbering.to_number(es)));
    }
    cfg.push_str(&format!("Group: {group}\n"));
    if let Some(h) = study.height_m {
        cfg.push_str(&format!("Height: {:.1}\n", h * 100.0));
    }
    cfg.push_str(&format!("NbFrame: {}\n", study.dims().frames));
    if let Some(w) = study.weight_kg {
        cfg.push_str(&format!("Weight: {w:.1}\n"));
    }
    fs::write(dir.join("Info.cfg"), cfg)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn info_cfg_keys() {
        let text = "ED: 0\nES: 11\nGroup: DCM\nHeight: 184.0\nNbFrame: 30\nWeight: 95.0\n";
        let info = parse_info_cfg(text, Path::new("Info.cfg")).unwrap();
        assert_eq!(info.ed, Some(0));
        assert_eq!(info.es, Some(11));
        assert!((info.height_m.unwrap() - 1.84).abs() < 1e-12);
        assert_eq!(info.weight_kg, Some(95.0));
        assert_eq!(info.group.as_deref(), Some("DCM"));
        assert_eq!(info.nb_frame, Some(30));
    }

    #[test]
    fn malformed_line_is_named() {
        let text = "ED: 0\n\nthis line is wrong\n";
        match parse_info_cfg(text, Path::new("x/Info.cfg")) {
            Err(Error::Parse { line, content, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(content, "this line is wrong");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_info_cfg("ES: twelve", Path::new("Info.cfg")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn gt_file_names() {
        assert_eq!(gt_frame_number("p1", "p1_frame07_gt.nii.gz"), Some(7));
        assert_eq!(gt_frame_number("p1", "p1_frame12_gt.nii"), Some(12));
        assert_eq!(gt_frame_number("p1", "p1_frame07.nii.gz"), None);
        assert_eq!(gt_frame_number("p1", "p10_frame07_gt.nii.gz"), None);
        assert_eq!(gt_frame_number("p1", "p1_4d.nii.gz"), None);
    }
}
