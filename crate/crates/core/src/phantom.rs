//! Synthetic short-axis cine studies with analytically known volumes.
//!
//! The LV cavity is a half-ellipsoid with its base on the top slice and the
//! apex pointing down the stack. The myocardium is the shell between that
//! surface and an outer one grown by the wall thickness. The RV is the part
//! of a disc beside the septum that lies outside the epicardium, restricted
//! to an angular sector around the LV axis. All LV axes scale by
//! `s(f) = 1 − cf·(1 − cos 2πf/T)/2`, so frame 0 is end-diastole and frame
//! `⌊T/2⌋` is end-systole.
//!
//! Each slice shows the slab average of the solid: an ellipsoid cut by a
//! slab becomes an ellipse whose area equals the slab-mean cross-section.
//! Summing slice areas times thickness therefore gives the continuous
//! volume exactly, and voxelisation error comes from in-plane sampling
//! alone. Pixel labels are taken at pixel centres.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::quant::{ejection_fraction, ClinicalMetrics, IndexedMetrics, MYOCARDIAL_DENSITY};
use crate::study_io::{class, write_acdc_case, CineStudy, FrameNumbering, LabelMap, StudyDims, VoxelSpacing};

/// Side of the square field of view.
pub const FIELD_OF_VIEW_MM: f64 = 160.0;
/// Composite Simpson panels used for the RV cross-section area.
pub const RV_QUADRATURE_PANELS: usize = 2048;
/// Cardiac cycle length written to the temporal spacing.
pub const CYCLE_MS: f64 = 800.0;

/// Mean intensity per class id.
pub const CLASS_MEANS: [f64; class::COUNT] = [40.0, 120.0, 90.0, 200.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RvCrescent {
    /// Disc radius at end-diastole, mm.
    pub outer_radius: f64,
    /// Full opening of the sector around the LV axis, radians.
    pub angular_extent: f64,
    /// Distance of the disc centre from the LV axis towards the RV, mm.
    pub offset: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomSpec {
    /// End-diastolic cavity semi-axes: in-plane `a` (columns), `b` (rows)
    /// and long-axis `c`, mm.
    pub lv_endo_radii: (f64, f64, f64),
    pub wall_thickness: f64,
    pub rv_crescent: RvCrescent,
    pub contraction_fraction: f64,
    pub frames: usize,
    pub slices: usize,
    pub in_plane_resolution: f64,
    pub slice_thickness: f64,
    pub noise_sd: f64,
    /// LV axis position relative to the image centre, `(x, y)` mm with `x`
    /// along columns and `y` along rows.
    pub center_offset: (f64, f64),
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            lv_endo_radii: (24.0, 24.0, 55.0),
            wall_thickness: 8.0,
            rv_crescent: RvCrescent {
                outer_radius: 29.0,
                angular_extent: 2.3,
                offset: 14.0,
            },
            contraction_fraction: 0.2,
            frames: 20,
            slices: 10,
            in_plane_resolution: 1.0,
            slice_thickness: 8.0,
            noise_sd: 10.0,
            center_offset: (0.0, 0.0),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.lv_endo_radii;
        let t = self.wall_thickness;
        let bad = |m: &str| Err(Error::Validation(format!("phantom spec: {m}")));
        let finite = [a, b, c, t, self.contraction_fraction, self.in_plane_resolution]
            .into_iter()
            .chain([self.slice_thickness, self.noise_sd, self.center_offset.0, self.center_offset.1])
            .chain([
                self.rv_crescent.outer_radius,
                self.rv_crescent.angular_extent,
                self.rv_crescent.offset,
            ])
            .all(f64::is_finite);
        if !finite {
            return bad("non-finite parameter");
        }
        if !(t > 0.0 && a > t && b > t && c > t) {
            return bad("radii must exceed the wall thickness, which must be > 0");
        }
        if !(self.contraction_fraction > 0.0 && self.contraction_fraction < 1.0) {
            return bad("contraction fraction must lie in (0, 1)");
        }
        if self.frames < 2 {
            return bad("at least 2 frames");
        }
        if self.slices < 3 {
            return bad("at least 3 slices");
        }
        if self.in_plane_resolution <= 0.0 || self.slice_thickness <= 0.0 {
            return bad("resolution and slice thickness must be > 0");
        }
        if self.noise_sd < 0.0 {
            return bad("noise sd must be ≥ 0");
        }
        let rv = &self.rv_crescent;
        if rv.outer_radius <= 0.0 || rv.offset < 0.0 || !(rv.angular_extent > 0.0 && rv.angular_extent <= 2.0 * PI) {
            return bad("RV radius > 0, offset ≥ 0 and extent in (0, 2π] required");
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        ((FIELD_OF_VIEW_MM / self.in_plane_resolution).round() as usize).max(1)
    }

    pub fn spacing(&self) -> VoxelSpacing {
        VoxelSpacing {
            dx: self.in_plane_resolution,
            dy: self.in_plane_resolution,
            dz: self.slice_thickness,
            dt: CYCLE_MS / self.frames as f64,
        }
    }

    /// Size scale of the LV at `frame`.
    pub fn scale(&self, frame: usize) -> f64 {
        let phase = 2.0 * PI * frame as f64 / self.frames as f64;
        1.0 - self.contraction_fraction * (1.0 - phase.cos()) / 2.0
    }

    pub fn es_frame(&self) -> usize {
        self.frames / 2
    }

    /// LV axis position on the native grid, `(row, col)` in pixels.
    pub fn lv_center_px(&self) -> (f64, f64) {
        let h = FIELD_OF_VIEW_MM / 2.0;
        (
            (h + self.center_offset.1) / self.in_plane_resolution,
            (h + self.center_offset.0) / self.in_plane_resolution,
        )
    }

    fn stack_depth(&self) -> f64 {
        self.slices as f64 * self.slice_thickness
    }
}

/// Mean of `(1 − z²/C²)₊` over slab `k`, i.e. over depths
/// `[k·dz, (k+1)·dz]` below the base.
pub fn slab_mean_factor(k: usize, dz: f64, c: f64) -> f64 {
    let z0 = k as f64 * dz;
    let z1 = ((k + 1) as f64 * dz).min(c);
    if z1 <= z0 {
        return 0.0;
    }
    let prim = |z: f64| z - z * z * z / (3.0 * c * c);
    (prim(z1) - prim(z0)) / dz
}

/// Volume of the half-ellipsoid with semi-axes `(a, b, c)` down to depth
/// `h`: `πab(h − h³/3c²)` for `h ≤ c`.
pub fn truncated_half_ellipsoid_mm3(a: f64, b: f64, c: f64, depth: f64) -> f64 {
    let h = depth.min(c);
    PI * a * b * (h - h * h * h / (3.0 * c * c))
}

/// In-plane geometry of one slab at one frame; lengths in mm relative to
/// the LV axis.
#[derive(Clone, Copy, Debug)]
struct SlabShape {
    endo: (f64, f64),
    epi: (f64, f64),
    rv_center_x: f64,
    rv_radius: f64,
    half_extent: f64,
}

impl SlabShape {
    fn new(spec: &PhantomSpec, frame: usize, k: usize) -> Self {
        let s = spec.scale(frame);
        let (a, b, c) = spec.lv_endo_radii;
        let t = spec.wall_thickness;
        let dz = spec.slice_thickness;
        let g_endo = slab_mean_factor(k, dz, s * c).sqrt();
        let g_epi = slab_mean_factor(k, dz, s * c + t).sqrt();
        let rv = &spec.rv_crescent;
        SlabShape {
            endo: (s * a * g_endo, s * b * g_endo),
            epi: ((s * a + t) * g_epi, (s * b + t) * g_epi),
            rv_center_x: -rv.offset * s * g_epi,
            rv_radius: rv.outer_radius * s * g_epi,
            half_extent: rv.angular_extent / 2.0,
        }
    }

    fn inside(axes: (f64, f64), x: f64, y: f64) -> bool {
        axes.0 > 0.0 && axes.1 > 0.0 && (x / axes.0).powi(2) + (y / axes.1).powi(2) <= 1.0
    }

    fn in_sector(&self, x: f64, y: f64) -> bool {
        // angle measured from the −x direction (towards the RV)
        let dev = y.atan2(-x).abs();
        dev <= self.half_extent
    }

    fn classify(&self, x: f64, y: f64) -> u8 {
        if Self::inside(self.endo, x, y) {
            class::LV_CAVITY
        } else if Self::inside(self.epi, x, y) {
            class::LV_MYOCARDIUM
        } else if self.rv_radius > 0.0
            && (x - self.rv_center_x).powi(2) + y * y <= self.rv_radius * self.rv_radius
            && self.in_sector(x, y)
        {
            class::RV_CAVITY
        } else {
            class::BACKGROUND
        }
    }

    /// Area of the RV region by quadrature in polar coordinates about the
    /// LV axis.
    fn rv_area(&self) -> f64 {
        if self.rv_radius <= 0.0 {
            return 0.0;
        }
        let (ex, ey) = self.epi;
        let cx = self.rv_center_x;
        let rho = self.rv_radius;
        let integrand = |theta: f64| -> f64 {
            let (ux, uy) = (theta.cos(), theta.sin());
            let uc = ux * cx;
            let disc = uc * uc - cx * cx + rho * rho;
            if disc < 0.0 {
                return 0.0;
            }
            let root = disc.sqrt();
            let exit = uc + root;
            if exit <= 0.0 {
                return 0.0;
            }
            let enter = (uc - root).max(0.0);
            let r_epi = if ex > 0.0 && ey > 0.0 {
                1.0 / ((ux / ex).powi(2) + (uy / ey).powi(2)).sqrt()
            } else {
                0.0
            };
            let lo = enter.max(r_epi);
            if exit > lo {
                0.5 * (exit * exit - lo * lo)
            } else {
                0.0
            }
        };
        let (t0, t1) = (PI - self.half_extent, PI + self.half_extent);
        let n = RV_QUADRATURE_PANELS;
        let h = (t1 - t0) / n as f64;
        let mut sum = integrand(t0) + integrand(t1);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * integrand(t0 + i as f64 * h);
        }
        sum * h / 3.0
    }
}

/// Continuous-geometry volumes in mL at one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticVolumes {
    pub lv_cavity: f64,
    pub lv_myocardium: f64,
    pub rv_cavity: f64,
}

pub fn analytic_volumes(spec: &PhantomSpec, frame: usize) -> AnalyticVolumes {
    let s = spec.scale(frame);
    let (a, b, c) = spec.lv_endo_radii;
    let t = spec.wall_thickness;
    let depth = spec.stack_depth();
    let endo = truncated_half_ellipsoid_mm3(s * a, s * b, s * c, depth);
    let epi = truncated_half_ellipsoid_mm3(s * a + t, s * b + t, s * c + t, depth);
    let rv: f64 = (0..spec.slices)
        .map(|k| SlabShape::new(spec, frame, k).rv_area() * spec.slice_thickness)
        .sum();
    AnalyticVolumes {
        lv_cavity: endo / 1000.0,
        lv_myocardium: (epi - endo) / 1000.0,
        rv_cavity: rv / 1000.0,
    }
}

/// Analytic clinical metrics at ED (frame 0) and ES (frame `⌊T/2⌋`).
pub fn analytic_metrics(spec: &PhantomSpec, case_id: &str, height_m: Option<f64>, weight_kg: Option<f64>) -> ClinicalMetrics {
    let ed = analytic_volumes(spec, 0);
    let es = analytic_volumes(spec, spec.es_frame());
    let lv_mass = ed.lv_myocardium * MYOCARDIAL_DENSITY;
    let bmi = match (height_m, weight_kg) {
        (Some(h), Some(w)) if h > 0.0 && w > 0.0 => Some(w / (h * h)),
        _ => None,
    };
    ClinicalMetrics {
        case_id: case_id.to_string(),
        ed_frame: 0,
        es_frame: spec.es_frame(),
        lv_edv: ed.lv_cavity,
        lv_esv: es.lv_cavity,
        rv_edv: ed.rv_cavity,
        rv_esv: es.rv_cavity,
        lvef: ejection_fraction(ed.lv_cavity, es.lv_cavity),
        rvef: ejection_fraction(ed.rv_cavity, es.rv_cavity),
        lv_mass,
        bmi,
        indexed: bmi.map(|b| IndexedMetrics {
            lv_edv: ed.lv_cavity / b,
            lv_esv: es.lv_cavity / b,
            rv_edv: ed.rv_cavity / b,
            rv_esv: es.rv_cavity / b,
            lv_mass: lv_mass / b,
        }),
    }
}

/// Labels of one frame, `[slice][row][col]`.
pub fn frame_labels(spec: &PhantomSpec, frame: usize) -> Vec<u8> {
    let n = spec.grid_size();
    let res = spec.in_plane_resolution;
    let (cr, cc) = spec.lv_center_px();
    let mut labels = Vec::with_capacity(spec.slices * n * n);
    for k in 0..spec.slices {
        let shape = SlabShape::new(spec, frame, k);
        for r in 0..n {
            let y = (r as f64 - cr) * res;
            for c in 0..n {
                let x = (c as f64 - cc) * res;
                labels.push(shape.classify(x, y));
            }
        }
    }
    labels
}

/// A generated case: images, per-frame labels and the analytic truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub study: CineStudy,
    pub labels: Vec<LabelMap>,
    pub truth: ClinicalMetrics,
}

/// Deterministic in `(spec, seed)`; frames may be rendered in parallel.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    generate_phantom_with(spec, seed, "phantom", None, None, Execution::default())
}

pub fn generate_phantom_with(
    spec: &PhantomSpec,
    seed: u64,
    case_id: &str,
    height_m: Option<f64>,
    weight_kg: Option<f64>,
    exec: Execution,
) -> Result<Phantom> {
    spec.validate()?;
    let n = spec.grid_size();
    let spacing = spec.spacing();
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::Validation(e.to_string()))?;
    let frames = par::map_range(exec, spec.frames, |f| {
        let labels = frame_labels(spec, f);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(f as u64);
        let image: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let mean = CLASS_MEANS[l as usize];
                if spec.noise_sd > 0.0 {
                    mean + noise.sample(&mut rng)
                } else {
                    mean
                }
            })
            .collect();
        (labels, image)
    });
    let dims = StudyDims {
        frames: spec.frames,
        slices: spec.slices,
        rows: n,
        cols: n,
    };
    let mut intensities = Vec::with_capacity(dims.len());
    let mut maps = Vec::with_capacity(spec.frames);
    for (f, (labels, image)) in frames.into_iter().enumerate() {
        intensities.extend(image);
        maps.push(LabelMap::new((spec.slices, n, n), labels, spacing, f)?);
    }
    let mut study = CineStudy::new(case_id, dims, intensities, spacing)?;
    study.height_m = height_m;
    study.weight_kg = weight_kg;
    study.set_phases(Some(0), Some(spec.es_frame()))?;
    Ok(Phantom {
        study,
        labels: maps,
        truth: analytic_metrics(spec, case_id, height_m, weight_kg),
    })
}

/// One member of a phantom suite.
#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub case_id: String,
    pub spec: PhantomSpec,
    pub seed: u64,
    pub height_m: f64,
    pub weight_kg: f64,
}

impl PhantomCase {
    pub fn generate(&self) -> Result<Phantom> {
        self.generate_with(Execution::default())
    }

    pub fn generate_with(&self, exec: Execution) -> Result<Phantom> {
        generate_phantom_with(
            &self.spec,
            self.seed,
            &self.case_id,
            Some(self.height_m),
            Some(self.weight_kg),
            exec,
        )
    }

    pub fn truth(&self) -> ClinicalMetrics {
        analytic_metrics(&self.spec, &self.case_id, Some(self.height_m), Some(self.weight_kg))
    }
}

/// Uniform sampling ranges of [`phantom_suite`].
pub mod ranges {
    pub const ENDO_RADIUS_MM: (f64, f64) = (20.0, 26.0);
    pub const LONG_AXIS_MM: (f64, f64) = (50.0, 64.0);
    pub const WALL_MM: (f64, f64) = (6.0, 9.0);
    pub const RV_RADIUS_MM: (f64, f64) = (26.0, 32.0);
    pub const RV_EXTENT_RAD: (f64, f64) = (2.0, 2.6);
    pub const RV_OFFSET_MM: (f64, f64) = (12.0, 16.0);
    pub const CONTRACTION: (f64, f64) = (0.12, 0.33);
    pub const CENTER_OFFSET_MM: (f64, f64) = (-10.0, 10.0);
    pub const HEIGHT_M: (f64, f64) = (1.55, 1.90);
    pub const WEIGHT_KG: (f64, f64) = (55.0, 95.0);
    /// Accepted ejection fractions, percent, for both ventricles.
    pub const EF_PERCENT: (f64, f64) = (30.0, 70.0);
}

/// `n` cases drawn from [`ranges`]; cases whose LV or RV EF falls outside
/// 30–70 % are redrawn. Studies use 20 frames, 10 slices of 8 mm, 1 mm
/// pixels and noise sd 10.
pub fn phantom_suite(n: usize, seed: u64) -> Result<Vec<PhantomCase>> {
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |r: (f64, f64)| rng.random_range(r.0..r.1);
    let mut cases = Vec::with_capacity(n);
    while cases.len() < n {
        let spec = PhantomSpec {
            lv_endo_radii: (
                u(ranges::ENDO_RADIUS_MM),
                u(ranges::ENDO_RADIUS_MM),
                u(ranges::LONG_AXIS_MM),
            ),
            wall_thickness: u(ranges::WALL_MM),
            rv_crescent: RvCrescent {
                outer_radius: u(ranges::RV_RADIUS_MM),
                angular_extent: u(ranges::RV_EXTENT_RAD),
                offset: u(ranges::RV_OFFSET_MM),
            },
            contraction_fraction: u(ranges::CONTRACTION),
            center_offset: (u(ranges::CENTER_OFFSET_MM), u(ranges::CENTER_OFFSET_MM)),
            ..PhantomSpec::default()
        };
        let height_m = u(ranges::HEIGHT_M);
        let weight_kg = u(ranges::WEIGHT_KG);
        let case_seed = (u((0.0, 1.0)) * u32::MAX as f64) as u64;
        let truth = analytic_metrics(&spec, "", None, None);
        let ok = |ef: Option<f64>| ef.is_some_and(|e| (ranges::EF_PERCENT.0..=ranges::EF_PERCENT.1).contains(&e));
        if ok(truth.lvef) && ok(truth.rvef) {
            cases.push(PhantomCase {
                case_id: format!("phantom{:03}", cases.len() + 1),
                spec,
                seed: case_seed,
                height_m,
                weight_kg,
            });
        }
    }
    Ok(cases)
}

/// Writes a phantom in the ACDC layout with ground truth for the ED and
/// ES frames; returns the case directory.
pub fn write_phantom_case(root: &Path, phantom: &Phantom, numbering: FrameNumbering) -> Result<PathBuf> {
    let ed = phantom.truth.ed_frame;
    let es = phantom.truth.es_frame;
    let gt = vec![(ed, phantom.labels[ed].clone()), (es, phantom.labels[es].clone())];
    write_acdc_case(root, &phantom.study, &gt, "PHANTOM", numbering)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slab_factors_integrate_to_half_ellipsoid() {
        let (c, dz) = (55.0, 8.0);
        let total: f64 = (0..10).map(|k| slab_mean_factor(k, dz, c) * dz).sum();
        assert!((total - 2.0 * c / 3.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = PhantomSpec::default();
        s.wall_thickness = 30.0;
        assert!(s.validate().is_err());
        let mut s = PhantomSpec::default();
        s.contraction_fraction = 1.0;
        assert!(s.validate().is_err());
        let mut s = PhantomSpec::default();
        s.frames = 1;
        assert!(s.validate().is_err());
        let mut s = PhantomSpec::default();
        s.slices = 2;
        assert!(s.validate().is_err());
    }
}
