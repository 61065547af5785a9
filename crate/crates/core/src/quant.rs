//! Clinical quantification from label maps: ventricular volumes, ejection
//! fractions, LV mass and BMI-indexed values, plus Dice overlap for
//! evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::study_io::{class, LabelMap};

/// Myocardial tissue density, g/mL.
pub const MYOCARDIAL_DENSITY: f64 = 1.05;

/// The seven quantities reported per study, in table order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    LvEdv,
    LvEsv,
    RvEdv,
    RvEsv,
    Lvef,
    Rvef,
    LvMass,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::LvEdv,
        Metric::LvEsv,
        Metric::RvEdv,
        Metric::RvEsv,
        Metric::Lvef,
        Metric::Rvef,
        Metric::LvMass,
    ];

    /// Row label used in concordance tables.
    pub fn label(self) -> &'static str {
        match self {
            Metric::LvEdv => "LV EDV [mL]",
            Metric::LvEsv => "LV ESV [mL]",
            Metric::RvEdv => "RV EDV [mL]",
            Metric::RvEsv => "RV ESV [mL]",
            Metric::Lvef => "LVEF [%]",
            Metric::Rvef => "RVEF [%]",
            Metric::LvMass => "LV Mass [g]",
        }
    }

    /// Machine-friendly key (CSV columns, paired-series files).
    pub fn key(self) -> &'static str {
        match self {
            Metric::LvEdv => "lv_edv",
            Metric::LvEsv => "lv_esv",
            Metric::RvEdv => "rv_edv",
            Metric::RvEsv => "rv_esv",
            Metric::Lvef => "lvef",
            Metric::Rvef => "rvef",
            Metric::LvMass => "lv_mass",
        }
    }

    /// Accepts either the key or the table label (case-insensitive, with or
    /// without the unit suffix).
    pub fn parse(s: &str) -> Option<Metric> {
        let norm = |t: &str| {
            t.split('[')
                .next()
                .unwrap_or("")
                .trim()
                .to_ascii_lowercase()
                .replace([' ', '_'], "")
        };
        let wanted = norm(s);
        Metric::ALL
            .into_iter()
            .find(|m| norm(m.key()) == wanted || norm(m.label()) == wanted)
    }
}

/// Volumes and mass divided by BMI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexedMetrics {
    pub lv_edv: f64,
    pub lv_esv: f64,
    pub rv_edv: f64,
    pub rv_esv: f64,
    pub lv_mass: f64,
}

/// Per-study clinical summary. Volumes in mL, EF in percent, mass in g.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalMetrics {
    pub case_id: String,
    pub ed_frame: usize,
    pub es_frame: usize,
    pub lv_edv: f64,
    pub lv_esv: f64,
    pub rv_edv: f64,
    pub rv_esv: f64,
    pub lvef: Option<f64>,
    pub rvef: Option<f64>,
    pub lv_mass: f64,
    pub bmi: Option<f64>,
    pub indexed: Option<IndexedMetrics>,
}

impl ClinicalMetrics {
    pub fn value(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::LvEdv => Some(self.lv_edv),
            Metric::LvEsv => Some(self.lv_esv),
            Metric::RvEdv => Some(self.rv_edv),
            Metric::RvEsv => Some(self.rv_esv),
            Metric::Lvef => self.lvef,
            Metric::Rvef => self.rvef,
            Metric::LvMass => Some(self.lv_mass),
        }
    }
}

/// Volume in mL of the voxels carrying `class_id` (background allowed).
pub fn class_volume_ml(map: &LabelMap, class_id: u8) -> f64 {
    map.count(class_id) as f64 * map.spacing.voxel_volume_mm3() / 1000.0
}

/// Volume in mL of one foreground structure.
pub fn label_volume(map: &LabelMap, class_id: u8) -> Result<f64> {
    if !(1..=3).contains(&class_id) {
        return Err(Error::Validation(format!(
            "class id {class_id} is not a foreground structure"
        )));
    }
    Ok(class_volume_ml(map, class_id))
}

/// `100·(EDV−ESV)/EDV`, absent when EDV is zero.
pub fn ejection_fraction(edv: f64, esv: f64) -> Option<f64> {
    (edv > 0.0).then(|| 100.0 * (edv - esv) / edv)
}

/// ED = largest LV cavity volume, ES = smallest; ties go to the earliest
/// frame. Indices given in `provided` win unconditionally.
pub fn select_ed_es(per_frame_lv_volumes: &[f64], provided: Option<(usize, usize)>) -> Result<(usize, usize)> {
    let n = per_frame_lv_volumes.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if let Some((ed, es)) = provided {
        return Ok((ed, es));
    }
    if per_frame_lv_volumes.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateStudy);
    }
    let mut ed = 0;
    let mut es = 0;
    for (i, &v) in per_frame_lv_volumes.iter().enumerate() {
        if v > per_frame_lv_volumes[ed] {
            ed = i;
        }
        if v < per_frame_lv_volumes[es] {
            es = i;
        }
    }
    Ok((ed, es))
}

pub fn compute_metrics(
    ed_map: &LabelMap,
    es_map: &LabelMap,
    height_m: Option<f64>,
    weight_kg: Option<f64>,
) -> Result<ClinicalMetrics> {
    if ed_map.spacing != es_map.spacing {
        return Err(Error::Consistency(format!(
            "ED spacing {:?} differs from ES spacing {:?}",
            ed_map.spacing, es_map.spacing
        )));
    }
    if ed_map.dims() != es_map.dims() {
        return Err(Error::Consistency("ED and ES label maps differ in size".into()));
    }
    let lv_edv = label_volume(ed_map, class::LV_CAVITY)?;
    let lv_esv = label_volume(es_map, class::LV_CAVITY)?;
    let rv_edv = label_volume(ed_map, class::RV_CAVITY)?;
    let rv_esv = label_volume(es_map, class::RV_CAVITY)?;
    let lv_mass = label_volume(ed_map, class::LV_MYOCARDIUM)? * MYOCARDIAL_DENSITY;
    let bmi = match (height_m, weight_kg) {
        (Some(h), Some(w)) if h > 0.0 && w > 0.0 => Some(w / (h * h)),
        _ => None,
    };
    let indexed = bmi.map(|b| IndexedMetrics {
        lv_edv: lv_edv / b,
        lv_esv: lv_esv / b,
        rv_edv: rv_edv / b,
        rv_esv: rv_esv / b,
        lv_mass: lv_mass / b,
    });
    Ok(ClinicalMetrics {
        case_id: String::new(),
        ed_frame: ed_map.frame_index,
        es_frame: es_map.frame_index,
        lv_edv,
        lv_esv,
        rv_edv,
        rv_esv,
        lvef: ejection_fraction(lv_edv, lv_esv),
        rvef: ejection_fraction(rv_edv, rv_esv),
        lv_mass,
        bmi,
        indexed,
    })
}

/// Quantifies a study from label maps covering some or all frames.
///
/// With `provided` phases the maps for those frames must be present;
/// otherwise ED/ES are picked from the LV cavity volume curve over the
/// supplied maps.
pub fn quantify_frames(
    case_id: &str,
    maps: &[LabelMap],
    provided: Option<(usize, usize)>,
    height_m: Option<f64>,
    weight_kg: Option<f64>,
) -> Result<ClinicalMetrics> {
    let find = |frame: usize| {
        maps.iter()
            .find(|m| m.frame_index == frame)
            .ok_or_else(|| Error::Consistency(format!("{case_id}: no label map for frame {frame}")))
    };
    let (ed_map, es_map) = match provided {
        Some((ed, es)) => (find(ed)?, find(es)?),
        None => {
            let volumes: Vec<f64> = maps
                .iter()
                .map(|m| class_volume_ml(m, class::LV_CAVITY))
                .collect();
            let (ed, es) = select_ed_es(&volumes, None)?;
            (&maps[ed], &maps[es])
        }
    };
    let mut metrics = compute_metrics(ed_map, es_map, height_m, weight_kg)?;
    metrics.case_id = case_id.to_string();
    Ok(metrics)
}

pub fn dice_score(pred: &LabelMap, truth: &LabelMap, class_id: u8) -> Result<f64> {
    if pred.dims() != truth.dims() {
        return Err(Error::Consistency(format!(
            "prediction grid {:?} vs truth grid {:?}",
            pred.dims(),
            truth.dims()
        )));
    }
    Ok(dice_labels(pred.labels(), truth.labels(), class_id))
}

/// Dice on raw label buffers of equal length; 1.0 when both sets are empty.
pub fn dice_labels(pred: &[u8], truth: &[u8], class_id: u8) -> f64 {
    debug_assert_eq!(pred.len(), truth.len());
    let (mut both, mut p, mut t) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(truth) {
        let (ia, ib) = (a == class_id, b == class_id);
        p += ia as usize;
        t += ib as usize;
        both += (ia && ib) as usize;
    }
    if p + t == 0 {
        1.0
    } else {
        2.0 * both as f64 / (p + t) as f64
    }
}
