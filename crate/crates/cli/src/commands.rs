use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cardiaq::phantom::{self, PhantomCase};
use cardiaq::quant::{self, ClinicalMetrics};
use cardiaq::roi::{self, LocateMode, Located, LOCALIZER_GRID};
use cardiaq::segnet::{self, Architecture, NetworkParams, Tensor, TrainConfig};
use cardiaq::stats;
use cardiaq::study_io::{
    self, load_acdc_case, read_nifti1, write_nifti1, write_report, AcdcCase, FrameNumbering, LabelMap,
    ReportFormat,
};
use cardiaq::{Error, Execution, Result};

use crate::args::{BenchArgs, EvaluateArgs, Localize, PhantomArgs, QuantifyArgs, SegmentArgs, TrainArgs};

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::NotFound(path.to_path_buf()))
    }
}

fn require_dir(path: &Path) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::NotFound(path.to_path_buf()))
    }
}

/// Creates the parent directory of an output file.
fn prepare_output_file(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => Ok(fs::create_dir_all(p)?),
        _ => Ok(()),
    }
}

fn is_case_dir(dir: &Path) -> bool {
    let Some(id) = dir.file_name().and_then(|n| n.to_str()) else {
        return false;
    };
    dir.join(format!("{id}_4d.nii.gz")).is_file() || dir.join(format!("{id}_4d.nii")).is_file()
}

/// `path` itself when it is a case directory, otherwise its case
/// subdirectories in name order.
pub fn case_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    require_dir(path)?;
    if is_case_dir(path) {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && is_case_dir(p))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Validation(format!("no case directories under {}", path.display())));
    }
    Ok(dirs)
}

fn load_cases(path: &Path, numbering: FrameNumbering) -> Result<Vec<AcdcCase>> {
    case_dirs(path)?
        .iter()
        .map(|d| load_acdc_case(d, numbering))
        .collect()
}

pub fn phantom(args: &PhantomArgs) -> Result<String> {
    fs::create_dir_all(&args.out)?;
    let mut cases: Vec<PhantomCase> = phantom::phantom_suite(args.n, args.seed)?;
    for case in &mut cases {
        if let Some(r) = args.resolution {
            case.spec.in_plane_resolution = r;
        }
        if let Some(f) = args.frames {
            case.spec.frames = f;
        }
        case.spec.validate()?;
    }
    let mut truth = Vec::with_capacity(cases.len());
    for case in &cases {
        let p = case.generate()?;
        phantom::write_phantom_case(&args.out, &p, args.numbering.into())?;
        truth.push(p.truth);
    }
    let truth_path = args.out.join("analytic_metrics.csv");
    study_io::write_metrics_csv(&truth, &truth_path)?;
    Ok(format!(
        "wrote {} cases to {} (analytic metrics in {})",
        cases.len(),
        args.out.display(),
        truth_path.display()
    ))
}

fn train_config(args: &TrainArgs, epochs: usize, lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        beta1: args.beta1,
        beta2: args.beta2,
        lambda_prior: lambda,
        seed: args.seed,
        w_ce: args.w_ce,
        w_dice: args.w_dice,
    }
}

pub fn train(args: &TrainArgs) -> Result<String> {
    let dirs = case_dirs(&args.cases)?;
    prepare_output_file(&args.out)?;
    let config = train_config(args, args.epochs, args.lambda_prior);
    config.validate()?;
    let mut data = Vec::new();
    let mut localizer_data = Vec::new();
    for dir in &dirs {
        let case = load_acdc_case(dir, args.numbering.into())?;
        if case.ground_truth.is_empty() {
            return Err(Error::Validation(format!("{}: no ground-truth masks", dir.display())));
        }
        let study = &case.study;
        let d = study.dims();
        let located = roi::locate_heuristic(study)?;
        let maps: Vec<LabelMap> = case.ground_truth.iter().map(|(_, m)| m.clone()).collect();
        let picks: Vec<(usize, usize)> = case
            .ground_truth
            .iter()
            .flat_map(|(f, _)| (0..d.slices).map(move |s| (*f, s)))
            .collect();
        data.extend(roi::crop_pairs(study, &maps, &located.roi, &picks)?);
        if args.localizer_epochs > 0 {
            for (f, map) in &case.ground_truth {
                for s in 0..d.slices {
                    let g = LOCALIZER_GRID;
                    let image = roi::localizer_input(study.image(*f, s), (d.rows, d.cols));
                    let labels = roi::localizer_labels(map.slice(s), (d.rows, d.cols));
                    localizer_data.push((
                        Tensor::new(vec![g, g], image)?,
                        LabelMap::new((1, g, g), labels, map.spacing, *f)?,
                    ));
                }
            }
        }
    }
    let arch = Architecture {
        depth: args.depth,
        width: args.width,
        latent: args.latent,
        ..Architecture::default()
    };
    let outcome = segnet::train(&data, arch, &config, Execution::Parallel)?;
    let mut params = outcome.params;
    if args.localizer_epochs > 0 {
        let loc_arch = Architecture {
            width: (args.width / 2).max(1),
            prior_grid: 4,
            ..arch
        };
        let loc_config = train_config(args, args.localizer_epochs, 0.0);
        let loc = segnet::train(&localizer_data, loc_arch, &loc_config, Execution::Parallel)?;
        params.roi = Some(loc.params.unet);
    }
    segnet::save_params(&args.out, &params)?;
    if let Some(h) = &args.history {
        prepare_output_file(h)?;
        let mut f = fs::File::create(h)?;
        writeln!(f, "epoch,loss")?;
        for (i, l) in outcome.loss_history.iter().enumerate() {
            writeln!(f, "{},{l}", i + 1)?;
        }
    }
    let last = outcome.loss_history.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "trained on {} slices from {} cases for {} epochs (final loss {last:.4}); wrote {}",
        data.len(),
        dirs.len(),
        config.epochs,
        args.out.display()
    ))
}

fn locate(study: &cardiaq::CineStudy, mode: Localize, params: &NetworkParams, exec: Execution) -> Result<Located> {
    let mode = match mode {
        Localize::Heuristic => LocateMode::Heuristic,
        Localize::Learned => LocateMode::Learned,
    };
    roi::locate_heart(study, mode, Some(params), exec)
}

fn pred_path(root: &Path, case_id: &str, number: usize) -> PathBuf {
    root.join(case_id).join(format!("{case_id}_frame{number:02}_pred.nii.gz"))
}

pub fn segment(args: &SegmentArgs) -> Result<String> {
    require_file(&args.model)?;
    let dirs = case_dirs(&args.cases)?;
    let params = segnet::load_params(&args.model)?;
    let numbering: FrameNumbering = args.numbering.into();
    let mut notes = Vec::new();
    for dir in &dirs {
        let case = load_acdc_case(dir, numbering)?;
        let study = &case.study;
        let located = locate(study, args.localize, &params, Execution::Parallel)?;
        if let Some(flag) = located.flag {
            notes.push(format!("{}: localisation flagged {flag:?}", study.case_id));
        }
        let maps = segnet::segment_study(&params, study, &located.roi, Execution::Parallel)?;
        fs::create_dir_all(args.out.join(&study.case_id))?;
        for map in &maps {
            let (header, values) = map.to_nifti()?;
            write_nifti1(
                &pred_path(&args.out, &study.case_id, frame_number(numbering, map.frame_index)),
                &header,
                &values,
            )?;
        }
    }
    let mut msg = format!("segmented {} cases into {}", dirs.len(), args.out.display());
    for n in notes {
        msg.push('\n');
        msg.push_str(&n);
    }
    Ok(msg)
}

fn frame_number(numbering: FrameNumbering, index: usize) -> usize {
    match numbering {
        FrameNumbering::ZeroBased => index,
        FrameNumbering::OneBased => index + 1,
    }
}

fn study_phases(case: &AcdcCase) -> Option<(usize, usize)> {
    case.study.ed_frame().zip(case.study.es_frame())
}

fn metrics_from_maps(case: &AcdcCase, maps: &[LabelMap]) -> Result<ClinicalMetrics> {
    let covered = |f: usize| maps.iter().any(|m| m.frame_index == f);
    let phases = study_phases(case).filter(|&(ed, es)| covered(ed) && covered(es));
    quant::quantify_frames(
        &case.study.case_id,
        maps,
        phases,
        case.study.height_m,
        case.study.weight_kg,
    )
}

fn load_predictions(root: &Path, case: &AcdcCase, numbering: FrameNumbering) -> Result<Vec<LabelMap>> {
    let d = case.study.dims();
    let mut maps = Vec::new();
    for f in 0..d.frames {
        let path = pred_path(root, &case.study.case_id, frame_number(numbering, f));
        if !path.is_file() {
            continue;
        }
        let map = read_nifti1(&path)?.into_label_map(f)?;
        if map.dims() != (d.slices, d.rows, d.cols) {
            return Err(Error::Consistency(format!(
                "{}: predicted grid {:?} does not match the study",
                path.display(),
                map.dims()
            )));
        }
        maps.push(map);
    }
    if maps.is_empty() {
        return Err(Error::NotFound(pred_path(root, &case.study.case_id, frame_number(numbering, 0))));
    }
    Ok(maps)
}

pub fn quantify(args: &QuantifyArgs) -> Result<String> {
    if let Some(p) = &args.pred {
        require_dir(p)?;
    }
    let numbering: FrameNumbering = args.numbering.into();
    let cases = load_cases(&args.cases, numbering)?;
    prepare_output_file(&args.out)?;
    let mut metrics = Vec::with_capacity(cases.len());
    for case in &cases {
        let maps = match &args.pred {
            Some(root) => load_predictions(root, case, numbering)?,
            None => case.ground_truth.iter().map(|(_, m)| m.clone()).collect(),
        };
        if maps.is_empty() {
            return Err(Error::Validation(format!("{}: no masks to quantify", case.study.case_id)));
        }
        metrics.push(metrics_from_maps(case, &maps)?);
    }
    write_report(&metrics, &[], &args.out, ReportFormat::from_path(&args.out))?;
    Ok(format!("quantified {} cases into {}", metrics.len(), args.out.display()))
}

pub fn evaluate(args: &EvaluateArgs) -> Result<String> {
    require_file(&args.pred)?;
    require_file(&args.truth)?;
    prepare_output_file(&args.out)?;
    let auto = study_io::read_metrics_csv(&args.pred)?;
    let manual = study_io::read_metrics_csv(&args.truth)?;
    let series = stats::pair_metrics(&manual, &auto);
    let table = stats::concordance_table(&series);
    write_report(&[], &table, &args.out, ReportFormat::from_path(&args.out))?;
    let n = series.first().map_or(0, |s| s.pairs.len());
    Ok(format!(
        "{}-row concordance table over {n} paired cases written to {}",
        table.len(),
        args.out.display()
    ))
}

fn read_manual_times(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Format(format!("{}: missing column {name}", path.display())))
    };
    let (id_col, s_col) = (col("case_id")?, col("seconds")?);
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let parse_err = || Error::Parse {
            file: path.to_path_buf(),
            line: i + 2,
            content: rec.iter().collect::<Vec<_>>().join(","),
        };
        let id = rec.get(id_col).ok_or_else(parse_err)?.to_string();
        let secs: f64 = rec
            .get(s_col)
            .and_then(|s| s.parse().ok())
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(parse_err)?;
        out.push((id, secs));
    }
    Ok(out)
}

/// Wall-clock of one study through localisation, segmentation and
/// quantification on a single thread.
pub fn time_study(params: &NetworkParams, case: &AcdcCase, mode: Localize) -> Result<(f64, ClinicalMetrics)> {
    let start = Instant::now();
    let located = locate(&case.study, mode, params, Execution::Sequential)?;
    let maps = segnet::segment_study(params, &case.study, &located.roi, Execution::Sequential)?;
    let metrics = metrics_from_maps(case, &maps)?;
    Ok((start.elapsed().as_secs_f64(), metrics))
}

#[derive(serde::Serialize)]
struct BenchStudy {
    case_id: String,
    seconds: Vec<f64>,
    mean: f64,
    sd: Option<f64>,
}

#[derive(serde::Serialize)]
struct BenchReport {
    repetitions: usize,
    studies: Vec<BenchStudy>,
    mean_seconds: f64,
    manual_minus_auto: Option<(f64, f64, f64)>,
    matched_cases: usize,
}

pub fn bench(args: &BenchArgs) -> Result<String> {
    require_file(&args.model)?;
    require_file(&args.manual_times)?;
    if args.repetitions == 0 {
        return Err(Error::Validation("repetitions must be ≥ 1".into()));
    }
    if let Some(o) = &args.out {
        prepare_output_file(o)?;
    }
    let params = segnet::load_params(&args.model)?;
    let manual = read_manual_times(&args.manual_times)?;
    let cases = load_cases(&args.cases, args.numbering.into())?;
    let mut studies = Vec::with_capacity(cases.len());
    for case in &cases {
        let mut seconds = Vec::with_capacity(args.repetitions);
        for _ in 0..args.repetitions {
            seconds.push(time_study(&params, case, args.localize)?.0);
        }
        let (mean, sd) = match stats::mean_sd(&seconds) {
            Ok((m, s)) => (m, Some(s)),
            Err(_) => (seconds[0], None),
        };
        studies.push(BenchStudy {
            case_id: case.study.case_id.clone(),
            seconds,
            mean,
            sd,
        });
    }
    let mean_seconds = studies.iter().map(|s| s.mean).sum::<f64>() / studies.len() as f64;
    let (mut man, mut auto) = (Vec::new(), Vec::new());
    for s in &studies {
        if let Some((_, t)) = manual.iter().find(|(id, _)| *id == s.case_id) {
            man.push(*t);
            auto.push(s.mean);
        }
    }
    let ci = stats::mean_difference_ci(&man, &auto, 0.95).ok();
    let mut lines = Vec::new();
    for s in &studies {
        let sd = s.sd.map_or("NA".to_string(), |v| format!("{v:.3}"));
        lines.push(format!("{}: {:.3} ± {sd} s over {} runs", s.case_id, s.mean, s.seconds.len()));
    }
    lines.push(format!("mean per study: {mean_seconds:.3} s"));
    lines.push(match ci {
        Some((m, lo, hi)) => format!(
            "manual − automatic over {} cases: {m:.1} s (95% CI {lo:.1} – {hi:.1})",
            man.len()
        ),
        None => format!("manual − automatic: NA ({} matched cases)", man.len()),
    });
    if let Some(o) = &args.out {
        let report = BenchReport {
            repetitions: args.repetitions,
            mean_seconds,
            manual_minus_auto: ci,
            matched_cases: man.len(),
            studies,
        };
        let mut f = fs::File::create(o)?;
        serde_json::to_writer_pretty(&mut f, &report)?;
        f.write_all(b"\n")?;
    }
    Ok(lines.join("\n"))
}
