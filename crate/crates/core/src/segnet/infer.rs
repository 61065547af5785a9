use super::layers::{softmax_channels, Real};
use super::model::NetworkParams;
use super::prior::{PriorTerms, ShapePrior};
use super::tensor::Tensor;
use super::train::{image_extent, standardize};
use super::unet::InferenceNet;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::roi::{self, RoIBox, ROI_GRID};
use crate::study_io::{class, CineStudy, LabelMap, VoxelSpacing};

/// Class logits `[4, 128, 128]` of the segmentation network for a
/// 128×128 crop used as-is.
pub fn unet_forward(params: &NetworkParams, image: &Tensor) -> Result<Tensor> {
    let (rows, cols) = image_extent(image)?;
    if (rows, cols) != (ROI_GRID, ROI_GRID) {
        return Err(Error::Validation(format!(
            "network input must be {ROI_GRID}×{ROI_GRID}, got {rows}×{cols}"
        )));
    }
    let logits = params.unet.forward(image.values(), rows, cols)?;
    Ok(Tensor::from_parts(vec![params.unet.classes(), rows, cols], logits))
}

/// Class probabilities from `[classes, …]` logits.
pub fn softmax(logits: &Tensor) -> Tensor {
    let classes = logits.dims()[0];
    Tensor::from_parts(logits.dims().to_vec(), softmax_channels(logits.values(), classes))
}

/// Prior reconstruction and KL terms for `[4, rows, cols]` probabilities.
pub fn shape_prior_terms(vae: &ShapePrior, mask_probs: &Tensor, seed: u64) -> Result<PriorTerms> {
    let (rows, cols) = match mask_probs.dims() {
        [c, r, w] if *c == class::COUNT => (*r, *w),
        d => {
            return Err(Error::Validation(format!(
                "mask probabilities must be [4, rows, cols], got {d:?}"
            )))
        }
    };
    let eps = vae.sample_noise(seed, 0);
    vae.forward_tape(mask_probs.values(), rows, cols, eps).map(|(t, _)| t)
}

/// Per-pixel argmax over `[classes][pixels]`; ties go to the lower class.
pub fn argmax_classes<T: Real>(logits: &[T], classes: usize) -> Vec<u8> {
    let n = logits.len() / classes;
    (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..classes {
                if logits[c * n + i] > logits[best * n + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Labels on the 128 × 128 RoI grid for one cropped image.
pub fn segment_crop<T: Real>(net: &InferenceNet<T>, crop: &[f64]) -> Result<Vec<u8>> {
    let input: Vec<T> = standardize(crop).into_iter().map(T::from_f64).collect();
    let logits = net.forward(&input, ROI_GRID, ROI_GRID)?;
    Ok(argmax_classes(&logits, net.classes()))
}

/// Labels for one native slice: crop, standardise, segment, paste back.
pub fn segment_slice<T: Real>(
    net: &InferenceNet<T>,
    image: &[f64],
    native: (usize, usize),
    spacing: &VoxelSpacing,
    roi_box: &RoIBox,
) -> Result<Vec<u8>> {
    let crop = roi::crop_resample(image, native, spacing, roi_box);
    let labels = segment_crop(net, &crop)?;
    roi::paste_back(&labels, spacing, roi_box, native)
}

/// Segments every frame of a study inside one shared region of interest,
/// running the network in single precision.
pub fn segment_study(
    params: &NetworkParams,
    study: &CineStudy,
    roi_box: &RoIBox,
    exec: Execution,
) -> Result<Vec<LabelMap>> {
    let net = params.unet.compile::<f32>();
    let d = study.dims();
    let native = (d.rows, d.cols);
    let slices = par::map_range(exec, d.frames * d.slices, |k| {
        let (f, s) = (k / d.slices, k % d.slices);
        segment_slice(&net, study.image(f, s), native, &study.spacing, roi_box)
    });
    let mut slices = slices.into_iter();
    let mut maps = Vec::with_capacity(d.frames);
    for f in 0..d.frames {
        let mut labels = Vec::with_capacity(d.frame_len());
        for _ in 0..d.slices {
            labels.extend(slices.next().expect("one result per slice")?);
        }
        maps.push(LabelMap::new((d.slices, d.rows, d.cols), labels, study.spacing, f)?);
    }
    Ok(maps)
}
