//! Oracles shared by several test targets.
#![allow(dead_code)]

use cardiaq::phantom::{analytic_metrics, frame_labels, PhantomSpec};
use cardiaq::quant::quantify_frames;
use cardiaq::segnet::{sample_gradient, Architecture, NetworkParams, TrainConfig};
use cardiaq::LabelMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// W=2, D=2 network on an 8×8 image with random labels.
pub fn tiny_case(seed: u64, lambda: f64) -> (NetworkParams, Vec<f64>, Vec<u8>, TrainConfig) {
    let arch = Architecture {
        depth: 2,
        width: 2,
        latent: 3,
        prior_hidden: 5,
        prior_grid: 4,
    };
    let config = TrainConfig {
        lambda_prior: lambda,
        seed,
        ..TrainConfig::default()
    };
    let mut params = NetworkParams::init(arch, &config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    // give the norm affines and the head bias non-trivial values
    for t in params.unet.tensors_mut() {
        if t.dims().len() == 1 {
            for v in t.values_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
    }
    let image: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<u8> = (0..64).map(|_| rng.random_range(0..4u8)).collect();
    (params, image, labels, config)
}

/// ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Per-tensor relative error of the analytic gradient against central
/// differences, U-Net tensors first.
pub fn finite_difference_errors(seed: u64, lambda: f64) -> Vec<(Vec<usize>, f64)> {
    let (params, image, labels, config) = tiny_case(seed, lambda);
    let loss_at = |p: &NetworkParams| sample_gradient(p, &image, (8, 8), &labels, &config, 0).unwrap().0;
    let (_, grads) = sample_gradient(&params, &image, (8, 8), &labels, &config, 0).unwrap();
    let n_unet = params.unet.tensors().len();
    let mut out = Vec::new();
    for (ti, g) in grads.iter().enumerate() {
        let mut numeric = vec![0.0; g.len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let mut p = params.clone();
            let bump = |p: &mut NetworkParams, d: f64| {
                let t = if ti < n_unet {
                    &mut p.unet.tensors_mut()[ti]
                } else {
                    &mut p.vae.tensors_mut()[ti - n_unet]
                };
                t.values_mut()[k] += d;
            };
            bump(&mut p, FD_STEP);
            let up = loss_at(&p);
            bump(&mut p, -2.0 * FD_STEP);
            let down = loss_at(&p);
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        out.push((g.dims().to_vec(), relative_error(g.values(), &numeric)));
    }
    out
}

/// Noise-free ED and ES label maps of a two-frame version of `spec`.
pub fn phase_maps(spec: &PhantomSpec) -> Vec<LabelMap> {
    let n = spec.grid_size();
    [0, spec.es_frame()]
        .iter()
        .map(|&f| LabelMap::new((spec.slices, n, n), frame_labels(spec, f), spec.spacing(), f).unwrap())
        .collect()
}

/// Relative errors of LV EDV, LV ESV, RV EDV, RV ESV and LV mass, then
/// absolute LVEF and RVEF errors in EF points.
pub fn quantification_errors(spec: &PhantomSpec) -> [f64; 7] {
    let truth = analytic_metrics(spec, "", None, None);
    let maps = phase_maps(spec);
    let m = quantify_frames("", &maps, Some((0, spec.es_frame())), None, None).unwrap();
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    [
        rel(m.lv_edv, truth.lv_edv),
        rel(m.lv_esv, truth.lv_esv),
        rel(m.rv_edv, truth.rv_edv),
        rel(m.rv_esv, truth.rv_esv),
        rel(m.lv_mass, truth.lv_mass),
        (m.lvef.unwrap() - truth.lvef.unwrap()).abs(),
        (m.rvef.unwrap() - truth.rvef.unwrap()).abs(),
    ]
}

/// 4-connected components of `class` in one row-major slice.
pub fn connected_components(labels: &[u8], rows: usize, cols: usize, class: u8) -> usize {
    let mut seen = vec![false; labels.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..labels.len() {
        if labels[start] != class || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if labels[j] == class && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
    }
    count
}

pub mod nifti {
    use cardiaq::study_io::{encode_nifti1, parse_nifti1, Endianness, NiftiDatatype, NiftiHeader};
    use cardiaq::{Error, VoxelSpacing};
    use rand::{Rng, RngCore};

    pub const DATATYPES: [NiftiDatatype; 3] = [NiftiDatatype::Uint8, NiftiDatatype::Int16, NiftiDatatype::Float32];
    pub const ENDIANNESS: [Endianness; 2] = [Endianness::Little, Endianness::Big];

    /// Random volume whose decoded values are exactly representable.
    pub fn random_volume(rng: &mut impl RngCore, dtype: NiftiDatatype) -> (NiftiHeader, Vec<f64>) {
        let extents = [rng.random_range(1..7), rng.random_range(1..7), rng.random_range(1..4), rng.random_range(1..4)];
        let spacing = VoxelSpacing::new(
            rng.random_range(1..16) as f64 * 0.125,
            rng.random_range(1..16) as f64 * 0.125,
            rng.random_range(1..80) as f64 * 0.25,
            rng.random_range(0..64) as f64,
        )
        .unwrap();
        let mut h = NiftiHeader::for_volume(extents, spacing, dtype).unwrap();
        // power-of-two scaling keeps integer decoding exact
        if dtype != NiftiDatatype::Float32 && rng.random_bool(0.5) {
            h.scl_slope = [0.25f32, 0.5, 2.0][rng.random_range(0..3)];
            h.scl_inter = rng.random_range(-8..8) as f32;
        }
        let (slope, inter) = (h.scl_slope as f64, h.scl_inter as f64);
        let n: usize = extents.iter().product();
        let values = (0..n)
            .map(|_| match dtype {
                NiftiDatatype::Uint8 => rng.random_range(0..=255u8) as f64 * slope + inter,
                NiftiDatatype::Int16 => rng.random_range(i16::MIN..=i16::MAX) as f64 * slope + inter,
                NiftiDatatype::Float32 => f32::from_bits(rng.random::<u32>() & 0xbfff_ffff) as f64,
            })
            .collect();
        (h, values)
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    /// Encode, parse, re-encode: header, values and stored bytes must all
    /// survive, and every storage variant must decode identically.
    pub fn check_roundtrip(header: &NiftiHeader, values: &[f64]) -> std::result::Result<(), String> {
        let mut decoded = Vec::new();
        for e in ENDIANNESS {
            for gz in [false, true] {
                let bytes = encode_nifti1(header, values, e, gz).map_err(|x| x.to_string())?;
                let vol = parse_nifti1(&bytes).map_err(|x| x.to_string())?;
                if vol.endianness != e {
                    return Err(format!("{e:?}: parsed as {:?}", vol.endianness));
                }
                if vol.header != *header {
                    return Err(format!("{e:?} gzip={gz}: header changed"));
                }
                if bits(&vol.data) != bits(values) {
                    return Err(format!("{e:?} gzip={gz}: values changed"));
                }
                let again = encode_nifti1(&vol.header, &vol.data, e, gz).map_err(|x| x.to_string())?;
                if !gz && again != bytes {
                    return Err(format!("{e:?}: re-encoded bytes differ"));
                }
                decoded.push(vol.data);
            }
        }
        if decoded.windows(2).any(|w| bits(&w[0]) != bits(&w[1])) {
            return Err("storage variants decode differently".into());
        }
        Ok(())
    }

    /// Malformed magic, unsupported datatype and a short payload, each
    /// with its specific error.
    pub fn check_rejections() -> std::result::Result<(), String> {
        let h = NiftiHeader::for_volume([4, 4, 2, 1], VoxelSpacing::new(1.0, 1.0, 1.0, 0.0).unwrap(), NiftiDatatype::Int16)
            .unwrap();
        let good = encode_nifti1(&h, &[3.0; 32], Endianness::Little, false).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[344..348].copy_from_slice(b"abcd");
        if !matches!(parse_nifti1(&bad_magic), Err(Error::Format(_))) {
            return Err("bad magic not rejected as a format error".into());
        }
        let mut float64 = good.clone();
        float64[70..72].copy_from_slice(&64i16.to_le_bytes());
        float64[72..74].copy_from_slice(&64i16.to_le_bytes());
        if !matches!(parse_nifti1(&float64), Err(Error::UnsupportedDatatype(64))) {
            return Err("datatype 64 not rejected as unsupported".into());
        }
        let short = &good[..good.len() - 5];
        if !matches!(parse_nifti1(short), Err(Error::Truncated { .. })) {
            return Err("short payload not rejected as truncated".into());
        }
        Ok(())
    }
}

pub mod stats_oracle {
    use cardiaq::quant::Metric;
    use cardiaq::stats::{bland_altman, paired_t_test, pearson_r, special, PairedSeries};
    use rand::{Rng, RngCore};

    /// ∫ₐᵇ cos^(ν−1) θ dθ by composite Simpson.
    fn cos_power_integral(nu: f64, a: f64, b: f64) -> f64 {
        const PANELS: usize = 20_000;
        let h = (b - a) / PANELS as f64;
        let f = |x: f64| x.cos().max(0.0).powf(nu - 1.0);
        let mut sum = f(a) + f(b);
        for i in 1..PANELS {
            sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        sum * h / 3.0
    }

    /// Two-sided Student-t p by direct integration of the density after
    /// x = √ν·tan θ, which maps the density to cos^(ν−1) θ on (−π/2, π/2).
    pub fn two_sided_p(t: f64, df: f64) -> f64 {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let phi = (t.abs() / df.sqrt()).atan();
        cos_power_integral(df, phi, half_pi) / cos_power_integral(df, 0.0, half_pi)
    }

    fn sd(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
    }

    /// One randomized case of every statistics property.
    pub fn check_case(rng: &mut impl RngCore) -> Result<(), String> {
        let n = rng.random_range(3..=10);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..150.0)).collect();
        let noise = rng.random_range(0.1..20.0);
        let y: Vec<f64> = x.iter().map(|v| 0.8 * v + rng.random_range(-noise..noise)).collect();
        let series = PairedSeries::new(Metric::LvEdv, x.iter().copied().zip(y.iter().copied()).collect()).unwrap();
        let r = pearson_r(&series).map_err(|e| e.to_string())?;

        let (a, b) = (rng.random_range(0.01..100.0), rng.random_range(-1e3..1e3));
        let moved = PairedSeries::new(series.metric, series.pairs.iter().map(|&(m, u)| (a * m + b, u)).collect()).unwrap();
        let r_moved = pearson_r(&moved).unwrap();
        if (r_moved - r).abs() > 1e-10 {
            return Err(format!("pearson affine: {r} vs {r_moved}"));
        }
        let negated = PairedSeries::new(series.metric, series.pairs.iter().map(|&(m, u)| (-m, u)).collect()).unwrap();
        if (pearson_r(&negated).unwrap() + r).abs() > 1e-12 {
            return Err("pearson negation".into());
        }

        let (bias, lo, hi) = bland_altman(&series).unwrap();
        let (sb, slo, shi) = bland_altman(&series.swapped()).unwrap();
        if !(close(sb, -bias, 1e-12) && close(slo, -hi, 1e-12) && close(shi, -lo, 1e-12)) {
            return Err(format!("swap antisymmetry: {:?} vs {:?}", (bias, lo, hi), (sb, slo, shi)));
        }
        let d: Vec<f64> = series.pairs.iter().map(|(m, u)| u - m).collect();
        if !close(hi - lo, 2.0 * 1.96 * sd(&d), 1e-12) {
            return Err(format!("loa width {} vs {}", hi - lo, 2.0 * 1.96 * sd(&d)));
        }

        let test = paired_t_test(&series).unwrap();
        let nf = n as f64;
        let (s1, s2) = (d.iter().sum::<f64>(), d.iter().map(|v| v * v).sum::<f64>());
        let t_raw = (s1 / nf) * nf.sqrt() / ((s2 - s1 * s1 / nf) / (nf - 1.0)).sqrt();
        if !close(test.t, t_raw, 1e-12) || test.df != n - 1 {
            return Err(format!("t statistic {} vs {t_raw}", test.t));
        }

        let t = rng.random_range(-10.0..10.0);
        let df = rng.random_range(1..=200) as f64;
        let (p, oracle) = (special::student_t_two_sided_p(t, df), two_sided_p(t, df));
        if (p - oracle).abs() > 1e-8 {
            return Err(format!("p(t={t}, df={df}) = {p}, oracle {oracle}"));
        }
        let cdf_oracle = if t >= 0.0 { 1.0 - oracle / 2.0 } else { oracle / 2.0 };
        if (special::student_t_cdf(t, df) - cdf_oracle).abs() > 1e-8 {
            return Err(format!("cdf(t={t}, df={df})"));
        }
        Ok(())
    }
}
