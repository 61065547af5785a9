//! Manual-versus-automatic agreement statistics.
//!
//! Everything uses the sample (n − 1) standard deviation. Limits of
//! agreement are `bias ± 1.96·sd`, and the confidence interval of a mean
//! difference is normal-theory (`z`) based.

pub mod special;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{ClinicalMetrics, Metric};

/// Multiplier for Bland-Altman limits of agreement.
pub const LOA_Z: f64 = 1.96;
/// Two-sided 95% normal quantile used for mean-difference intervals.
pub const CI95_Z: f64 = 1.96;

/// Manual and automatic measurements of one metric, one pair per case.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSeries {
    pub metric: Metric,
    /// `(manual, auto)`
    pub pairs: Vec<(f64, f64)>,
}

impl PairedSeries {
    pub fn new(metric: Metric, pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::Numeric(format!("{} series", metric.key())));
        }
        Ok(PairedSeries { metric, pairs })
    }

    pub fn manual(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn auto(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.1).collect()
    }

    /// `auto − manual` per case.
    pub fn differences(&self) -> Vec<f64> {
        self.pairs.iter().map(|(m, a)| a - m).collect()
    }

    /// Pairs with manual and automatic swapped.
    pub fn swapped(&self) -> Self {
        PairedSeries {
            metric: self.metric,
            pairs: self.pairs.iter().map(|&(m, a)| (a, m)).collect(),
        }
    }
}

/// One table row: summary of manual vs automatic agreement for a metric.
/// Cells whose statistic is undefined for the data are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceRow {
    pub metric: Metric,
    pub n: usize,
    pub manual_mean: Option<f64>,
    pub manual_sd: Option<f64>,
    pub auto_mean: Option<f64>,
    pub auto_sd: Option<f64>,
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub bias: Option<f64>,
    pub loa_low: Option<f64>,
    pub loa_high: Option<f64>,
}

fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Ok((m, (ss / (values.len() - 1) as f64).sqrt()))
}

pub fn pearson_r(series: &PairedSeries) -> Result<f64> {
    let n = series.pairs.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mx = mean(&series.manual())?;
    let my = mean(&series.auto())?;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &series.pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// `(bias, loa_low, loa_high)` of `auto − manual`.
pub fn bland_altman(series: &PairedSeries) -> Result<(f64, f64, f64)> {
    let (bias, sd) = mean_sd(&series.differences())?;
    let half = LOA_Z * sd;
    Ok((bias, bias - half, bias + half))
}

/// Result of a paired Student's t-test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p_two_sided: f64,
}

pub fn paired_t_test(series: &PairedSeries) -> Result<TTest> {
    let d = series.differences();
    let (m, sd) = mean_sd(&d)?;
    if sd == 0.0 {
        return Err(Error::DegenerateTest);
    }
    let n = d.len();
    let t = m * (n as f64).sqrt() / sd;
    let df = n - 1;
    Ok(TTest {
        t,
        df,
        p_two_sided: special::student_t_two_sided_p(t, df as f64),
    })
}

fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Validation(format!("confidence level {level} not in (0, 1)")));
    }
    if (level - 0.95).abs() < 1e-12 {
        Ok(CI95_Z)
    } else {
        Ok(special::normal_quantile(0.5 + level / 2.0))
    }
}

/// `(mean_diff, ci_low, ci_high)` of the paired difference `a − b`.
pub fn mean_difference_ci(a: &[f64], b: &[f64], level: f64) -> Result<(f64, f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Validation(format!(
            "paired lists differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, sd) = mean_sd(&d)?;
    let half = z_for_level(level)? * sd / (d.len() as f64).sqrt();
    Ok((m, m - half, m + half))
}

/// One row per metric, in table order. Statistics that cannot be computed
/// for a metric leave their cells empty.
pub fn concordance_table(metric_series: &[PairedSeries]) -> Vec<ConcordanceRow> {
    let mut series: Vec<&PairedSeries> = metric_series.iter().collect();
    series.sort_by_key(|s| s.metric);
    series
        .into_iter()
        .map(|s| {
            let manual = mean_sd(&s.manual()).ok();
            let auto = mean_sd(&s.auto()).ok();
            let ba = bland_altman(s).ok();
            ConcordanceRow {
                metric: s.metric,
                n: s.pairs.len(),
                manual_mean: manual.map(|v| v.0),
                manual_sd: manual.map(|v| v.1),
                auto_mean: auto.map(|v| v.0),
                auto_sd: auto.map(|v| v.1),
                p: paired_t_test(s).ok().map(|t| t.p_two_sided),
                r: pearson_r(s).ok(),
                bias: ba.map(|v| v.0),
                loa_low: ba.map(|v| v.1),
                loa_high: ba.map(|v| v.2),
            }
        })
        .collect()
}

/// Joins per-case metrics by `case_id` into one paired series per metric.
/// Cases missing on either side, or lacking a value, are skipped.
pub fn pair_metrics(manual: &[ClinicalMetrics], auto: &[ClinicalMetrics]) -> Vec<PairedSeries> {
    Metric::ALL
        .into_iter()
        .map(|metric| {
            let pairs = manual
                .iter()
                .filter_map(|m| {
                    let a = auto.iter().find(|a| a.case_id == m.case_id)?;
                    Some((m.value(metric)?, a.value(metric)?))
                })
                .collect();
            PairedSeries { metric, pairs }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(pairs: &[(f64, f64)]) -> PairedSeries {
        PairedSeries::new(Metric::Lvef, pairs.to_vec()).unwrap()
    }

    fn from_diffs(d: &[f64]) -> PairedSeries {
        series(&d.iter().enumerate().map(|(i, &d)| (i as f64 * 3.0, i as f64 * 3.0 + d)).collect::<Vec<_>>())
    }

    #[test]
    fn mean_sd_cases() {
        assert_eq!(mean_sd(&[3.0, 3.0, 3.0]).unwrap(), (3.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
        // sum of squared deviations is 32, so sd = sqrt(32/7)
        let (m, s) = mean_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-14);
        assert!((s - 2.1381).abs() < 5e-5);
        assert!(matches!(mean_sd(&[1.0]), Err(Error::InsufficientData { needed: 2, got: 1 })));
    }

    #[test]
    fn pearson_cases() {
        let xs = [1.0, 2.0, 5.0, 7.5];
        let up: Vec<_> = xs.iter().map(|&x| (x, 2.0 * x)).collect();
        assert!((pearson_r(&series(&up)).unwrap() - 1.0).abs() < 1e-15);
        let down: Vec<_> = xs.iter().map(|&x| (x, -2.0 * x + 7.0)).collect();
        assert!((pearson_r(&series(&down)).unwrap() + 1.0).abs() < 1e-15);
        let r = pearson_r(&series(&[(1.0, 1.0), (2.0, 3.0), (3.0, 2.0), (4.0, 4.0)])).unwrap();
        assert!((r - 0.8).abs() < 1e-14);
        assert!(matches!(
            pearson_r(&series(&[(1.0, 5.0), (2.0, 5.0)])),
            Err(Error::UndefinedCorrelation)
        ));
    }

    #[test]
    fn bland_altman_cases() {
        let same = series(&[(1.0, 1.0), (4.0, 4.0), (9.0, 9.0)]);
        assert_eq!(bland_altman(&same).unwrap(), (0.0, 0.0, 0.0));
        let (b, lo, hi) = bland_altman(&from_diffs(&[1.0, 3.0])).unwrap();
        assert_eq!(b, 2.0);
        assert!((lo - (2.0 - 1.96 * 2f64.sqrt())).abs() < 1e-12);
        assert!((lo + 0.77).abs() < 5e-3 && (hi - 4.77).abs() < 5e-3);
    }

    #[test]
    fn t_test_cases() {
        let t = paired_t_test(&from_diffs(&[1.0, -1.0, 1.0, -1.0])).unwrap();
        assert_eq!(t.t, 0.0);
        assert!((t.p_two_sided - 1.0).abs() < 1e-12);
        let t = paired_t_test(&from_diffs(&[2.0, 0.0, 2.0, 0.0])).unwrap();
        assert!((t.t - 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(t.df, 3);
        // Closed form for df = 3: P(|T|>t) = 1 - (2/pi)(atan(u) + u/(1+u^2)), u = t/sqrt(3).
        let u = t.t / 3f64.sqrt();
        let exact = 1.0 - 2.0 / std::f64::consts::PI * (u.atan() + u / (1.0 + u * u));
        assert!((t.p_two_sided - exact).abs() < 1e-12);
        assert!((t.p_two_sided - 0.1817).abs() < 5e-5);
        assert!(matches!(
            paired_t_test(&from_diffs(&[1.5, 1.5, 1.5])),
            Err(Error::DegenerateTest)
        ));
    }

    #[test]
    fn t_test_p_is_scale_invariant() {
        let d = [0.4, -1.2, 2.5, 0.9, 1.1];
        let p1 = paired_t_test(&from_diffs(&d)).unwrap().p_two_sided;
        let scaled: Vec<f64> = d.iter().map(|x| x * 37.5).collect();
        let p2 = paired_t_test(&from_diffs(&scaled)).unwrap().p_two_sided;
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn mean_difference_ci_cases() {
        let a = [3.0, 5.0, 8.0];
        assert_eq!(mean_difference_ci(&a, &a, 0.95).unwrap(), (0.0, 0.0, 0.0));
        assert!(mean_difference_ci(&a, &a[..2], 0.95).is_err());
        let b = [1.0, 4.5, 2.0, 7.0];
        let c = [0.0, 1.0, 1.5, 2.0];
        let (_, lo95, hi95) = mean_difference_ci(&b, &c, 0.95).unwrap();
        let (_, lo99, hi99) = mean_difference_ci(&b, &c, 0.99).unwrap();
        assert!(lo99 < lo95 && hi99 > hi95);
        assert!(mean_difference_ci(&b, &c, 1.0).is_err());
    }

    #[test]
    fn identical_series_gives_absent_cells() {
        let s = PairedSeries::new(Metric::LvEdv, vec![(10.0, 10.0), (20.0, 20.0), (30.0, 30.0)]).unwrap();
        let rows = concordance_table(&[s]);
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row.bias, Some(0.0));
        assert_eq!((row.loa_low, row.loa_high), (Some(0.0), Some(0.0)));
        // r = 1 is defined here: both sides vary. p is undefined.
        assert!(row.p.is_none());
        let flat = PairedSeries::new(Metric::LvEdv, vec![(10.0, 10.0), (10.0, 10.0)]).unwrap();
        let row = &concordance_table(&[flat])[0];
        assert!(row.r.is_none() && row.p.is_none());
    }

    #[test]
    fn table_rows_follow_metric_order() {
        let mut input: Vec<PairedSeries> = Metric::ALL
            .iter()
            .map(|&m| PairedSeries::new(m, vec![(1.0, 1.5), (2.0, 1.0), (4.0, 4.5)]).unwrap())
            .collect();
        input.reverse();
        let rows = concordance_table(&input);
        let order: Vec<Metric> = rows.iter().map(|r| r.metric).collect();
        assert_eq!(order, Metric::ALL.to_vec());
    }
}
