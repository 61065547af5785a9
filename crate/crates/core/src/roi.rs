//! Heart localisation and the fixed 90 mm × 90 mm region of interest.
//!
//! Native pixel `(r, c)` sits at physical position `(r·dy, c·dx)` mm. The
//! region of interest is a 128 × 128 grid of pitch 90/128 mm whose pixel
//! `(i, j)` lies at `center + ((i − 64)·pitch, (j − 64)·pitch)`, so a
//! centre on a native pixel at matched resolution samples native pixels
//! exactly.

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::segnet::{self, NetworkParams};
use crate::study_io::{CineStudy, LabelMap, VoxelSpacing};

pub const ROI_EXTENT_MM: f64 = 90.0;
pub const ROI_GRID: usize = 128;
/// Output pixel pitch, 90/128 mm.
pub const ROI_PITCH_MM: f64 = ROI_EXTENT_MM / ROI_GRID as f64;
/// Side of the downsampled frame seen by the localisation network.
pub const LOCALIZER_GRID: usize = 64;

const HALF: f64 = (ROI_GRID / 2) as f64;

/// Region of interest centred on a native-grid position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoIBox {
    pub center_row: f64,
    pub center_col: f64,
}

impl RoIBox {
    pub fn new(center_row: f64, center_col: f64) -> Result<Self> {
        if !center_row.is_finite() || !center_col.is_finite() {
            return Err(Error::Validation("RoI centre must be finite".into()));
        }
        Ok(RoIBox {
            center_row,
            center_col,
        })
    }

    /// Voxel spacing of the RoI grid for a study with `native` spacing.
    pub fn grid_spacing(native: &VoxelSpacing) -> VoxelSpacing {
        VoxelSpacing {
            dx: ROI_PITCH_MM,
            dy: ROI_PITCH_MM,
            ..*native
        }
    }

    pub fn extent_mm(&self) -> (f64, f64) {
        (ROI_EXTENT_MM, ROI_EXTENT_MM)
    }

    pub fn grid(&self) -> (usize, usize) {
        (ROI_GRID, ROI_GRID)
    }

    /// Native (fractional) pixel position of RoI pixel `(i, j)`.
    pub fn native_position(&self, spacing: &VoxelSpacing, i: usize, j: usize) -> (f64, f64) {
        (
            self.center_row + (i as f64 - HALF) * ROI_PITCH_MM / spacing.dy,
            self.center_col + (j as f64 - HALF) * ROI_PITCH_MM / spacing.dx,
        )
    }
}

/// Why a located box deserves a second look.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocateFlag {
    /// No temporal variation: the image centre was returned.
    DegenerateInput,
    /// The learned localiser found no foreground; the heuristic was used.
    LearnedFallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocateMode {
    Heuristic,
    Learned,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Located {
    pub roi: RoIBox,
    pub flag: Option<LocateFlag>,
}

/// Bilinear sample at fractional native position; neighbours outside the
/// grid contribute 0.
pub fn bilinear_sample(image: &[f64], rows: usize, cols: usize, r: f64, c: f64) -> f64 {
    let r0 = r.floor();
    let c0 = c.floor();
    let fr = r - r0;
    let fc = c - c0;
    let at = |rr: f64, cc: f64| -> f64 {
        if rr < 0.0 || cc < 0.0 || rr >= rows as f64 || cc >= cols as f64 {
            0.0
        } else {
            image[rr as usize * cols + cc as usize]
        }
    };
    let mut v = 0.0;
    // skip zero-weight taps so exact grid hits never read past the edge
    for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
        if wr == 0.0 {
            continue;
        }
        for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
            if wc == 0.0 {
                continue;
            }
            v += wr * wc * at(r0 + dr, c0 + dc);
        }
    }
    v
}

/// Crops one `rows × cols` image to the 128 × 128 RoI grid (bilinear).
pub fn crop_resample(
    image: &[f64],
    (rows, cols): (usize, usize),
    spacing: &VoxelSpacing,
    roi: &RoIBox,
) -> Vec<f64> {
    debug_assert_eq!(image.len(), rows * cols);
    let mut out = Vec::with_capacity(ROI_GRID * ROI_GRID);
    for i in 0..ROI_GRID {
        for j in 0..ROI_GRID {
            let (r, c) = roi.native_position(spacing, i, j);
            out.push(bilinear_sample(image, rows, cols, r, c));
        }
    }
    out
}

fn nearest(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Crops a native label slice to the RoI grid (nearest neighbour).
pub fn crop_labels(
    labels: &[u8],
    (rows, cols): (usize, usize),
    spacing: &VoxelSpacing,
    roi: &RoIBox,
) -> Vec<u8> {
    let mut out = Vec::with_capacity(ROI_GRID * ROI_GRID);
    for i in 0..ROI_GRID {
        for j in 0..ROI_GRID {
            let (r, c) = roi.native_position(spacing, i, j);
            let (r, c) = (nearest(r), nearest(c));
            let inside = r >= 0.0 && c >= 0.0 && r < rows as f64 && c < cols as f64;
            out.push(if inside { labels[r as usize * cols + c as usize] } else { 0 });
        }
    }
    out
}

/// Maps a 128 × 128 RoI label slice back onto the native grid (nearest
/// neighbour); native pixels outside the RoI get background.
pub fn paste_back(
    predicted: &[u8],
    spacing: &VoxelSpacing,
    roi: &RoIBox,
    (rows, cols): (usize, usize),
) -> Result<Vec<u8>> {
    if predicted.len() != ROI_GRID * ROI_GRID {
        return Err(Error::Validation(format!(
            "RoI label slice has {} values, expected {}",
            predicted.len(),
            ROI_GRID * ROI_GRID
        )));
    }
    let mut out = vec![0u8; rows * cols];
    let grid = ROI_GRID as f64;
    for r in 0..rows {
        let i = nearest((r as f64 - roi.center_row) * spacing.dy / ROI_PITCH_MM + HALF);
        if i < 0.0 || i >= grid {
            continue;
        }
        for c in 0..cols {
            let j = nearest((c as f64 - roi.center_col) * spacing.dx / ROI_PITCH_MM + HALF);
            if j >= 0.0 && j < grid {
                out[r * cols + c] = predicted[i as usize * ROI_GRID + j as usize];
            }
        }
    }
    Ok(out)
}

/// Per-pixel temporal variance summed over slices, `rows × cols`.
pub fn variance_map(study: &CineStudy) -> Vec<f64> {
    let d = study.dims();
    let n = d.slice_len();
    let t = d.frames as f64;
    let mut acc = vec![0.0; n];
    for s in 0..d.slices {
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        for f in 0..d.frames {
            for (i, v) in study.image(f, s).iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..n {
            let mean = sum[i] / t;
            acc[i] += (sq[i] / t - mean * mean).max(0.0);
        }
    }
    acc
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Consistency constant turning a median absolute deviation into a
/// normal-noise standard deviation.
const MAD_TO_SD: f64 = 1.4826;
/// How many noise deviations above the median a pixel must vary to count.
const NOISE_FLOOR_SDS: f64 = 3.0;

/// Weighted centre of the most dynamic pixels of a `rows × cols` map.
///
/// The noise floor (median plus three robust deviations) is subtracted and
/// negative weights dropped; `None` when nothing remains.
pub fn dynamic_centroid(map: &[f64], cols: usize) -> Option<(f64, f64)> {
    let mut sorted = map.to_vec();
    let med = median(&mut sorted);
    let mut dev: Vec<f64> = map.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev);
    let floor = med + NOISE_FLOOR_SDS * MAD_TO_SD * mad;
    let (mut w, mut wr, mut wc) = (0.0, 0.0, 0.0);
    for (i, &v) in map.iter().enumerate() {
        let x = v - floor;
        if x > 0.0 {
            w += x;
            wr += x * (i / cols) as f64;
            wc += x * (i % cols) as f64;
        }
    }
    (w > 0.0).then(|| (wr / w, wc / w))
}

fn image_center(study: &CineStudy) -> RoIBox {
    let d = study.dims();
    RoIBox {
        center_row: (d.rows / 2) as f64,
        center_col: (d.cols / 2) as f64,
    }
}

/// Variance-based localisation: the heart is the most dynamic region.
pub fn locate_heuristic(study: &CineStudy) -> Result<Located> {
    let d = study.dims();
    if d.frames < 2 {
        return Err(Error::InsufficientFrames(d.frames));
    }
    let map = variance_map(study);
    Ok(match dynamic_centroid(&map, d.cols) {
        Some((r, c)) => Located {
            roi: RoIBox::new(r, c)?,
            flag: None,
        },
        None => Located {
            roi: image_center(study),
            flag: Some(LocateFlag::DegenerateInput),
        },
    })
}

/// Frame resampled over its whole field of view to the localiser grid.
pub fn localizer_input(image: &[f64], (rows, cols): (usize, usize)) -> Vec<f64> {
    let g = LOCALIZER_GRID as f64;
    let (sr, sc) = (rows as f64 / g, cols as f64 / g);
    let mut out = Vec::with_capacity(LOCALIZER_GRID * LOCALIZER_GRID);
    for i in 0..LOCALIZER_GRID {
        for j in 0..LOCALIZER_GRID {
            // cell centres, clamped so the border repeats rather than fades
            let r = ((i as f64 + 0.5) * sr - 0.5).clamp(0.0, (rows - 1) as f64);
            let c = ((j as f64 + 0.5) * sc - 0.5).clamp(0.0, (cols - 1) as f64);
            out.push(bilinear_sample(image, rows, cols, r, c));
        }
    }
    out
}

/// Labels resampled to the localiser grid (nearest neighbour).
pub fn localizer_labels(labels: &[u8], (rows, cols): (usize, usize)) -> Vec<u8> {
    let g = LOCALIZER_GRID as f64;
    let (sr, sc) = (rows as f64 / g, cols as f64 / g);
    let mut out = Vec::with_capacity(LOCALIZER_GRID * LOCALIZER_GRID);
    for i in 0..LOCALIZER_GRID {
        for j in 0..LOCALIZER_GRID {
            let r = (((i as f64 + 0.5) * sr - 0.5).round().max(0.0) as usize).min(rows - 1);
            let c = (((j as f64 + 0.5) * sc - 0.5).round().max(0.0) as usize).min(cols - 1);
            out.push(labels[r * cols + c]);
        }
    }
    out
}

/// Runs the stage-1 network on every slice of the first frame and returns
/// the native-grid centroid of predicted foreground.
fn locate_learned(study: &CineStudy, localizer: &segnet::UNet, exec: Execution) -> Result<Option<(f64, f64)>> {
    let d = study.dims();
    let g = LOCALIZER_GRID;
    let net = localizer.compile::<f32>();
    let masks = par::map_range(exec, d.slices, |s| {
        let input: Vec<f32> = segnet::standardize(&localizer_input(study.image(0, s), (d.rows, d.cols)))
            .into_iter()
            .map(|v| v as f32)
            .collect();
        net.forward(&input, g, g)
            .map(|logits| segnet::argmax_classes(&logits, net.classes()))
    });
    let (sr, sc) = (d.rows as f64 / g as f64, d.cols as f64 / g as f64);
    let (mut n, mut wr, mut wc) = (0.0, 0.0, 0.0);
    for mask in masks {
        for (idx, &l) in mask?.iter().enumerate() {
            if l != 0 {
                n += 1.0;
                wr += ((idx / g) as f64 + 0.5) * sr - 0.5;
                wc += ((idx % g) as f64 + 0.5) * sc - 0.5;
            }
        }
    }
    Ok((n > 0.0).then(|| (wr / n, wc / n)))
}

/// One RoI per study, shared by every frame and slice.
pub fn locate_heart(
    study: &CineStudy,
    mode: LocateMode,
    params: Option<&NetworkParams>,
    exec: Execution,
) -> Result<Located> {
    match mode {
        LocateMode::Heuristic => locate_heuristic(study),
        LocateMode::Learned => {
            let localizer = params.and_then(|p| p.roi.as_ref()).ok_or_else(|| {
                Error::Validation("learned localisation needs a stage-1 network".into())
            })?;
            match locate_learned(study, localizer, exec)? {
                Some((r, c)) => Ok(Located {
                    roi: RoIBox::new(r, c)?,
                    flag: None,
                }),
                None => {
                    let mut fallback = locate_heuristic(study)?;
                    fallback.flag = Some(LocateFlag::LearnedFallback);
                    Ok(fallback)
                }
            }
        }
    }
}

/// Cropped `(image, labels)` training pairs for the chosen
/// `(frame, slice)` positions. `maps` holds one label map per frame index it
/// covers.
pub fn crop_pairs(
    study: &CineStudy,
    maps: &[LabelMap],
    roi: &RoIBox,
    picks: &[(usize, usize)],
) -> Result<Vec<(segnet::Tensor, LabelMap)>> {
    let d = study.dims();
    let spacing = RoIBox::grid_spacing(&study.spacing);
    picks
        .iter()
        .map(|&(f, s)| {
            let map = maps
                .iter()
                .find(|m| m.frame_index == f)
                .ok_or_else(|| Error::Consistency(format!("no labels for frame {f}")))?;
            if map.dims() != (d.slices, d.rows, d.cols) || s >= d.slices {
                return Err(Error::Consistency(format!(
                    "labels for frame {f} do not cover slice {s} of the study grid"
                )));
            }
            let image = crop_resample(study.image(f, s), (d.rows, d.cols), &study.spacing, roi);
            let labels = crop_labels(map.slice(s), (d.rows, d.cols), &study.spacing, roi);
            Ok((
                segnet::Tensor::new(vec![ROI_GRID, ROI_GRID], image)?,
                LabelMap::new((1, ROI_GRID, ROI_GRID), labels, spacing, f)?,
            ))
        })
        .collect()
}
