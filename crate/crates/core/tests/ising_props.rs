mod common;

use std::collections::BTreeMap;

use exact_abc::ising::{bond_count, conditional_probs, gibbs_sweeps, IsingParams};
use exact_abc::rng::stream;
use exact_abc::{
    exact_enumeration, gibbs_simulate, suff_stat, IsingModel, Lattice, SimulatorModel, TruncationSchedule,
};
use proptest::prelude::*;

use common::{gof_p_value, homogeneity_p_value};

#[test]
fn statistic_is_bounded_by_bond_count() {
    let mut rng = stream(1, "bounds", 0);
    for i in 0..10_000 {
        let rows = 1 + i % 8;
        let cols = 1 + (i / 8) % 8;
        let lat = Lattice::random(rows, cols, &mut rng).unwrap();
        let s = suff_stat(&lat);
        assert!(s.abs() <= bond_count(rows, cols), "{rows}x{cols}: S = {s}");
        assert_eq!(s, suff_stat(&lat.flipped()));
    }
    for (r, c) in [(1, 1), (3, 5), (8, 8)] {
        assert_eq!(suff_stat(&Lattice::filled(r, c, 1).unwrap()), bond_count(r, c));
    }
}

#[test]
fn conditionals_satisfy_detailed_balance() {
    for theta in [0.0, 0.1, 0.44, 1.0, 2.5] {
        for m in -4..=4 {
            let (plus, minus) = conditional_probs(theta, m);
            assert!((plus + minus - 1.0).abs() <= 4.0 * f64::EPSILON);
            let expected = (2.0 * theta * m as f64).exp();
            assert!((plus / minus - expected).abs() <= 1e-12 * expected);
        }
    }
}

#[test]
fn gibbs_matches_enumeration_on_two_by_two() {
    let theta = 0.5;
    let draws = 20_000u64;
    let params = IsingParams { theta, sweeps: 200 };
    let mut counts = BTreeMap::new();
    for i in 0..draws {
        let mut rng = stream(2, "gate", i);
        let lat = gibbs_simulate(&params, 2, 2, &mut rng).unwrap();
        *counts.entry(suff_stat(&lat)).or_insert(0u64) += 1;
    }
    let exact = exact_enumeration(2, 2, theta).unwrap();
    let p = gof_p_value(&counts, &exact.stat_pmf, draws);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn statistic_law_is_flip_symmetric() {
    let theta = 0.4;
    let draws = 20_000u64;
    let mut tables = Vec::new();
    for (start, tag) in [(1i8, "up"), (-1i8, "down")] {
        let mut counts = BTreeMap::new();
        for i in 0..draws {
            let mut rng = stream(3, tag, i);
            let mut lat = Lattice::filled(3, 3, start).unwrap();
            gibbs_sweeps(&mut lat, theta, 50, &mut rng);
            *counts.entry(suff_stat(&lat)).or_insert(0u64) += 1;
        }
        tables.push(counts);
    }
    let p = homogeneity_p_value(&tables[0], &tables[1]);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn pipeline_sees_a_one_dimensional_summary() {
    let model = IsingModel::simulated(4, 4, 50, 0.5, 7).unwrap();
    assert_eq!(model.summary_dim(), 1);
    assert_eq!(model.observed().values(), &[model.observed_stat() as f64]);
    let sched = TruncationSchedule::new(0.4, 0.2, model.summary_dim()).unwrap();
    for k in 0..4u32 {
        let expected = sched.base().powf(-(k as f64 + 1.0) * 1.25).ceil() as u64;
        assert_eq!(sched.n(k), expected);
    }
    // The simulated summary lands within one unit of an attainable statistic.
    let mut rng = stream(4, "summary", 0);
    for _ in 0..100 {
        let s = model.simulate_summary(&[0.3], &mut rng).unwrap().values()[0];
        let nearest = (s / 2.0).round() * 2.0;
        assert!((s - nearest).abs() <= 1.0);
        assert!(s.abs() <= bond_count(4, 4) as f64 + 1.0);
    }
}

proptest! {
    #[test]
    fn lattice_text_round_trips(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let mut rng = stream(seed, "text", 0);
        let lat = Lattice::random(rows, cols, &mut rng).unwrap();
        let back: Lattice = lat.to_string().parse().unwrap();
        prop_assert_eq!(back, lat);
    }

    #[test]
    fn enumeration_pmf_is_normalized(rows in 1usize..4, cols in 1usize..4, theta in -1.0f64..1.0) {
        let e = exact_enumeration(rows, cols, theta).unwrap();
        let total: f64 = e.stat_pmf.values().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(e.stat_pmf.keys().all(|s| s.abs() <= bond_count(rows, cols)));
    }
}
