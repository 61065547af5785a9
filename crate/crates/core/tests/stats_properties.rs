//! Statistics invariants over randomized paired series.

mod common;

use cardiaq::quant::Metric;
use cardiaq::stats::{bland_altman, mean_difference_ci, paired_t_test, PairedSeries};
use common::stats_oracle::{check_case, two_sided_p};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn invariants_hold_on_random_series(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(check_case(&mut rng), Ok(()));
    }

    #[test]
    fn p_is_invariant_to_scaling_the_differences(
        d in prop::collection::vec(-20.0f64..20.0, 3..10),
        k in 0.01f64..100.0,
    ) {
        let series = |scale: f64| {
            PairedSeries::new(Metric::Lvef, d.iter().map(|v| (0.0, v * scale)).collect()).unwrap()
        };
        if let (Ok(a), Ok(b)) = (paired_t_test(&series(1.0)), paired_t_test(&series(k))) {
            prop_assert!((a.p_two_sided - b.p_two_sided).abs() < 1e-12);
        }
    }
}

#[test]
fn oracle_reproduces_known_t3_value() {
    // d = [2, 0, 2, 0]: t = √3, df = 3
    let series = PairedSeries::new(Metric::Lvef, vec![(0.0, 2.0), (0.0, 0.0), (0.0, 2.0), (0.0, 0.0)]).unwrap();
    let t = paired_t_test(&series).unwrap();
    assert!((t.t - 3f64.sqrt()).abs() < 1e-12);
    assert!((t.p_two_sided - two_sided_p(t.t, 3.0)).abs() < 1e-10);
    assert!((t.p_two_sided - 0.1817).abs() < 5e-5);
}

#[test]
fn cauchy_case_has_closed_form() {
    // df = 1: p = 1 − 2·atan(|t|)/π
    for t in [0.1, 1.0, 3.0, 9.5] {
        let exact = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
        assert!((two_sided_p(t, 1.0) - exact).abs() < 1e-12);
        assert!((cardiaq::stats::special::student_t_two_sided_p(t, 1.0) - exact).abs() < 1e-10);
    }
}

#[test]
fn bland_altman_on_two_differences() {
    let series = PairedSeries::new(Metric::LvEdv, vec![(0.0, 1.0), (0.0, 3.0)]).unwrap();
    let (bias, lo, hi) = bland_altman(&series).unwrap();
    assert_eq!(bias, 2.0);
    assert!((lo - (2.0 - 1.96 * 2f64.sqrt())).abs() < 1e-12);
    assert!((hi - (2.0 + 1.96 * 2f64.sqrt())).abs() < 1e-12);
}

#[test]
fn wider_level_gives_wider_interval() {
    let a = [5.0, 7.0, 3.0, 9.0, 6.0];
    let b = [1.0; 5];
    let (_, lo95, hi95) = mean_difference_ci(&a, &b, 0.95).unwrap();
    let (_, lo99, hi99) = mean_difference_ci(&a, &b, 0.99).unwrap();
    assert!(lo99 < lo95 && hi99 > hi95);
    assert_eq!(mean_difference_ci(&a, &a, 0.95).unwrap(), (0.0, 0.0, 0.0));
}
