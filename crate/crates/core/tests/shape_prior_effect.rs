//! Statistical effect of the shape prior on topological plausibility.

mod common;

use cardiaq::phantom::{phantom_suite, PhantomCase, PhantomSpec};
use cardiaq::roi::{crop_pairs, locate_heuristic};
use cardiaq::segnet::{segment_study, train, Architecture, NetworkParams, TrainConfig};
use cardiaq::{Execution, LabelMap, Tensor};
use common::connected_components;

const TRAIN_CASES: usize = 5;
const TEST_CASES: usize = 20;
const EPOCHS: usize = 8;

fn two_phase(case: &PhantomCase) -> PhantomCase {
    PhantomCase { spec: PhantomSpec { frames: 2, ..case.spec }, ..case.clone() }
}

fn training_set() -> Vec<(Tensor, LabelMap)> {
    let mut data = Vec::new();
    for case in phantom_suite(TRAIN_CASES, 7).unwrap() {
        let p = two_phase(&case).generate().unwrap();
        let roi = locate_heuristic(&p.study).unwrap().roi;
        let picks: Vec<(usize, usize)> = (0..2).flat_map(|f| (0..case.spec.slices).map(move |s| (f, s))).collect();
        data.extend(crop_pairs(&p.study, &p.labels, &roi, &picks).unwrap());
    }
    data
}

/// Mean number of 4-connected components per (slice, class) over the
/// held-out phantoms, counting only slices where the class is present.
fn mean_components(params: &NetworkParams, cases: &[PhantomCase]) -> [f64; 3] {
    let (mut total, mut count) = ([0usize; 3], [0usize; 3]);
    for case in cases {
        let p = two_phase(case).generate().unwrap();
        let roi = locate_heuristic(&p.study).unwrap().roi;
        let maps = segment_study(params, &p.study, &roi, Execution::Parallel).unwrap();
        let d = p.study.dims();
        for map in &maps {
            for s in 0..d.slices {
                for class in 1..=3u8 {
                    let k = connected_components(map.slice(s), d.rows, d.cols, class);
                    if k > 0 {
                        total[class as usize - 1] += k;
                        count[class as usize - 1] += 1;
                    }
                }
            }
        }
    }
    std::array::from_fn(|i| total[i] as f64 / count[i].max(1) as f64)
}

#[test]
fn prior_does_not_fragment_predictions() {
    let data = training_set();
    let held_out = phantom_suite(TEST_CASES, 1234).unwrap();
    let run = |lambda: f64| {
        let config = TrainConfig { epochs: EPOCHS, lambda_prior: lambda, seed: 1, ..TrainConfig::default() };
        let params = train(&data, Architecture::default(), &config, Execution::Parallel).unwrap().params;
        mean_components(&params, &held_out)
    };
    let (with, without) = (run(0.1), run(0.0));
    eprintln!("components per class with prior {with:?}, without {without:?}");
    for c in 0..3 {
        assert!(with[c] <= without[c], "class {}: with prior {with:?} vs without {without:?}", c + 1);
    }
}
