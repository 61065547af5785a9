//! One pass/fail line per acceptance criterion, run in sequence so the
//! single-threaded latency measurement has the machine to itself.

mod common;

use std::time::{Duration, Instant};

use cardiaq::phantom::{phantom_suite, PhantomCase, PhantomSpec};
use cardiaq::quant::{dice_score, quantify_frames, Metric};
use cardiaq::roi::{crop_pairs, locate_heuristic};
use cardiaq::segnet::{segment_study, train, Architecture, NetworkParams, TrainConfig};
use cardiaq::stats::{bland_altman, mean_difference_ci, PairedSeries};
use cardiaq::study_io::format_bland_altman;
use cardiaq::{Execution, LabelMap, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LOA_TOLERANCE: f64 = 0.02;
const CI_TOLERANCE_S: f64 = 1.0;
const VOLUME_TOLERANCE: f64 = 0.02;
const EF_TOLERANCE: f64 = 2.0;
const FD_TOLERANCE: f64 = 1e-4;
const DICE_TARGET: f64 = 0.95;
const MAX_EPOCHS: usize = 500;
/// Epochs actually run for the overfit check.
const TRAIN_EPOCHS: usize = 30;
const LATENCY_BUDGET_S: f64 = 5.0;
const RANDOM_CASES: usize = 1000;

/// Lines are collected and printed in criterion order at the end.
struct Report {
    failures: usize,
    lines: Vec<(String, String)>,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, what: &str, detail: String, took: Duration) {
        if !pass {
            self.failures += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        eprintln!("criterion {id} done");
        self.lines.push((id.to_string(), format!("[{tag}] {id}. {what}: {detail} ({:.2} s)", took.as_secs_f64())));
    }
}

/// Values with exactly the requested sample mean and sd.
fn exact_series(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = z.iter().sum::<f64>() / n as f64;
    let s = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    z.iter().map(|v| mean + sd * (v - m) / s).collect()
}

fn limits_of_agreement(r: &mut Report) {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (mean, sd, want) in [(-0.60, 4.77, (-9.94, 8.75)), (-0.89, 4.55, (-9.82, 8.04))] {
        let d = exact_series(60, mean, sd, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs = d.iter().map(|&x| {
            let manual = rng.random_range(40.0..70.0);
            (manual, manual + x)
        });
        let series = PairedSeries::new(Metric::Lvef, pairs.collect()).unwrap();
        let (bias, lo, hi) = bland_altman(&series).unwrap();
        ok &= (lo - want.0).abs() <= LOA_TOLERANCE && (hi - want.1).abs() <= LOA_TOLERANCE;
        parts.push(format!("{} vs ({}, {})", format_bland_altman(bias, lo, hi), want.0, want.1));
    }
    let took = t.elapsed();
    ok &= took < Duration::from_secs(1);
    r.line("1", ok, "Bland-Altman limits", format!("{}; tolerance ±{LOA_TOLERANCE}", parts.join("; ")), took);
}

fn timing_interval(r: &mut Report) {
    let t = Instant::now();
    let d = exact_series(89, 447.7, 191.9, 3);
    let zeros = vec![0.0; d.len()];
    let (m, lo, hi) = mean_difference_ci(&d, &zeros, 0.95).unwrap();
    let ok = (lo - 407.6).abs() <= CI_TOLERANCE_S && (hi - 487.8).abs() <= CI_TOLERANCE_S;
    r.line(
        "2",
        ok,
        "timing 95% CI",
        format!("{m:.1} ({lo:.2}, {hi:.2}) vs (407.6, 487.8); tolerance ±{CI_TOLERANCE_S} s"),
        t.elapsed(),
    );
}

fn phantom_oracle(r: &mut Report) {
    let t = Instant::now();
    let cases = phantom_suite(10, 7).unwrap();
    let errors = |res: f64| -> Vec<[f64; 7]> {
        cases
            .iter()
            .map(|c| common::quantification_errors(&PhantomSpec { in_plane_resolution: res, frames: 2, noise_sd: 0.0, ..c.spec }))
            .collect()
    };
    let (coarse, fine) = (errors(1.0), errors(0.5));
    let worst_volume = coarse.iter().flat_map(|e| e[..5].iter().copied()).fold(0.0, f64::max);
    let worst_ef = coarse.iter().flat_map(|e| e[5..].iter().copied()).fold(0.0, f64::max);
    let mut aggregate_ok = true;
    for m in 0..7 {
        let max = |e: &[[f64; 7]]| e.iter().map(|v| v[m]).fold(0.0, f64::max);
        let mean = |e: &[[f64; 7]]| e.iter().map(|v| v[m]).sum::<f64>() / e.len() as f64;
        aggregate_ok &= max(&fine) <= max(&coarse) && mean(&fine) <= mean(&coarse);
    }
    let rises = (0..cases.len()).map(|i| (0..7).filter(|&m| fine[i][m] > coarse[i][m]).count()).sum::<usize>();
    let took = t.elapsed();
    let ok = worst_volume <= VOLUME_TOLERANCE && worst_ef <= EF_TOLERANCE && aggregate_ok && took < Duration::from_secs(120);
    r.line(
        "3",
        ok,
        "phantom quantification",
        format!(
            "{} phantoms at 1 mm: worst volume error {:.2}% (≤ {}%), worst EF error {worst_ef:.2} points (≤ {EF_TOLERANCE}); \
             max and mean error per metric at 0.5 mm ≤ 1 mm: {aggregate_ok}; individual increases {rises}/{}",
            cases.len(),
            100.0 * worst_volume,
            100.0 * VOLUME_TOLERANCE,
            7 * cases.len()
        ),
        took,
    );
}

fn gradient_check(r: &mut Report) {
    let t = Instant::now();
    let errors = common::finite_difference_errors(11, 0.1);
    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let took = t.elapsed();
    let ok = worst <= FD_TOLERANCE && took < Duration::from_secs(300);
    r.line(
        "4",
        ok,
        "finite-difference gradients",
        format!("{} tensors of a W=2/D=2 net, worst relative error {worst:.2e} (≤ {FD_TOLERANCE:e})", errors.len()),
        took,
    );
}

fn two_phase(case: &PhantomCase) -> PhantomCase {
    PhantomCase { spec: PhantomSpec { frames: 2, ..case.spec }, ..case.clone() }
}

/// Trains on ED and ES of every slice of ten phantoms and scores the
/// full-volume segmentation of those same studies.
fn overfit(r: &mut Report) -> NetworkParams {
    let t = Instant::now();
    let phantoms: Vec<_> = phantom_suite(10, 7).unwrap().iter().map(|c| two_phase(c).generate().unwrap()).collect();
    let mut data: Vec<(Tensor, LabelMap)> = Vec::new();
    let mut rois = Vec::new();
    for p in &phantoms {
        let roi = locate_heuristic(&p.study).unwrap().roi;
        let picks: Vec<(usize, usize)> = (0..2).flat_map(|f| (0..p.study.dims().slices).map(move |s| (f, s))).collect();
        data.extend(crop_pairs(&p.study, &p.labels, &roi, &picks).unwrap());
        rois.push(roi);
    }
    let config = TrainConfig { epochs: TRAIN_EPOCHS, seed: 1, ..TrainConfig::default() };
    let outcome = train(&data, Architecture::default(), &config, Execution::Parallel).unwrap();
    let train_time = t.elapsed();

    let mut class_dice = [0.0; 3];
    for (p, roi) in phantoms.iter().zip(&rois) {
        let maps = segment_study(&outcome.params, &p.study, roi, Execution::Parallel).unwrap();
        for (pred, truth) in maps.iter().zip(&p.labels) {
            for c in 0..3 {
                class_dice[c] += dice_score(pred, truth, c as u8 + 1).unwrap();
            }
        }
    }
    let volumes = (2 * phantoms.len()) as f64;
    class_dice.iter_mut().for_each(|d| *d /= volumes);
    let mean_dice = class_dice.iter().sum::<f64>() / 3.0;

    let finite = outcome.loss_history.iter().all(|l| l.is_finite());
    let short = TrainConfig { epochs: 3, ..config };
    let rerun = train(&data, Architecture::default(), &short, Execution::Sequential).unwrap();
    let reproducible = rerun
        .loss_history
        .iter()
        .zip(&outcome.loss_history)
        .all(|(a, b)| a.to_bits() == b.to_bits());

    let ok = mean_dice >= DICE_TARGET
        && TRAIN_EPOCHS <= MAX_EPOCHS
        && train_time < Duration::from_secs(30 * 60)
        && finite
        && reproducible;
    let h = &outcome.loss_history;
    r.line(
        "5",
        ok,
        "toy overfit",
        format!(
            "{} slices, {TRAIN_EPOCHS} epochs in {:.0} s, loss {:.3} → {:.4}; mean foreground Dice {mean_dice:.4} (≥ {DICE_TARGET}), \
             per class RV/myo/LV {:.3}/{:.3}/{:.3}; finite {finite}; first 3 epochs bit-identical on rerun {reproducible}",
            data.len(),
            train_time.as_secs_f64(),
            h[0],
            h[h.len() - 1],
            class_dice[0],
            class_dice[1],
            class_dice[2]
        ),
        t.elapsed(),
    );
    outcome.params
}

fn latency(r: &mut Report, params: &NetworkParams) {
    let t = Instant::now();
    let case = &phantom_suite(1, 99).unwrap()[0];
    let spec = PhantomSpec { frames: 25, ..case.spec };
    let phantom = PhantomCase { spec, ..case.clone() }.generate().unwrap();
    let study = &phantom.study;
    let mut runs = Vec::new();
    for _ in 0..3 {
        let start = Instant::now();
        let roi = locate_heuristic(study).unwrap().roi;
        let maps = segment_study(params, study, &roi, Execution::Sequential).unwrap();
        let m = quantify_frames(&study.case_id, &maps, None, study.height_m, study.weight_kg).unwrap();
        runs.push(start.elapsed().as_secs_f64());
        assert!(m.lvef.is_some());
    }
    let worst = runs.iter().cloned().fold(0.0, f64::max);
    let d = study.dims();
    r.line(
        "6",
        worst <= LATENCY_BUDGET_S,
        "single-threaded latency",
        format!(
            "{}×{} study of {}×{} px: worst of 3 runs {worst:.2} s (≤ {LATENCY_BUDGET_S} s), runs {runs:.2?}",
            d.frames, d.slices, d.rows, d.cols
        ),
        t.elapsed(),
    );
}

fn statistics(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let failures: Vec<String> = (0..RANDOM_CASES).filter_map(|_| common::stats_oracle::check_case(&mut rng).err()).collect();
    r.line(
        "7",
        failures.is_empty(),
        "statistics properties",
        format!(
            "{RANDOM_CASES} random series: affine r, swap antisymmetry, LoA width, t vs raw sums, |Δp| ≤ 1e-8 vs quadrature; {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
        t.elapsed(),
    );
}

fn parser(r: &mut Report) {
    use common::nifti::{check_rejections, check_roundtrip, random_volume, DATATYPES};
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();
    for dtype in DATATYPES {
        for _ in 0..100 {
            let (h, v) = random_volume(&mut rng, dtype);
            if let Err(e) = check_roundtrip(&h, &v) {
                failures.push(format!("{dtype:?}: {e}"));
            }
        }
    }
    if let Err(e) = check_rejections() {
        failures.push(e);
    }
    r.line(
        "8",
        failures.is_empty(),
        "NIfTI-1 parser",
        format!(
            "300 volumes × 3 datatypes × 2 byte orders × raw/gzip bit-exact, bad magic / datatype / truncation rejected; {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
        t.elapsed(),
    );
}

fn main() {
    let mut r = Report { failures: 0, lines: Vec::new() };
    limits_of_agreement(&mut r);
    timing_interval(&mut r);
    phantom_oracle(&mut r);
    gradient_check(&mut r);
    statistics(&mut r);
    parser(&mut r);
    let params = overfit(&mut r);
    latency(&mut r, &params);
    r.lines.sort();
    for (_, line) in &r.lines {
        println!("{line}");
    }
    println!(
        "[N/A ] 9. clinical concordance (r = 0.98/0.92/0.96/0.8, interobserver-level EF errors): not reproducible here; \
         needs the private clinical cohort and full challenge-scale training, criteria 1-8 stand in"
    );
    println!("{} of 8 criteria failed", r.failures);
    if r.failures > 0 {
        std::process::exit(1);
    }
}
