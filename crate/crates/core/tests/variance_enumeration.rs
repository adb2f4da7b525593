//! Design expectations of the variance estimators, computed by averaging
//! over every assignment and compared with the exact design variance.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use trialkit::design::{all_complete, all_stratified};
use trialkit::model::{PotentialPopulation, PotentialUnit};
use trialkit::oracle::{enumerate_complete, enumerate_stratified};
use trialkit::rng;
use trialkit::variance::{design_based_strat_variance, finite_pop_bound};

fn population(seed: u64, n: usize, effect_sd: f64) -> PotentialPopulation {
    let mut r = rng::from_seed(seed);
    PotentialPopulation::new(
        (0..n)
            .map(|i| {
                let y0: f64 = r.sample::<f64, _>(StandardNormal) + (i % 2) as f64 * 3.0;
                let tau = 1.0 + effect_sd * r.sample::<f64, _>(StandardNormal);
                let mut u = PotentialUnit::new(y0 + tau, y0);
                u.stratum = Some(if i % 2 == 0 { "a".into() } else { "b".into() });
                u
            })
            .collect(),
    )
}

fn mean_bound(pop: &PotentialPopulation, improved: bool) -> f64 {
    let assignments = all_complete(pop.size(), pop.size() / 2).unwrap();
    let total: f64 = assignments
        .iter()
        .map(|d| finite_pop_bound(&pop.observe(d), pop.size(), improved).unwrap())
        .sum();
    total / assignments.len() as f64
}

#[test]
fn neyman_bound_is_unbiased_under_constant_effects() {
    for seed in 0..5 {
        let pop = population(seed, 10, 0.0);
        let exact = enumerate_complete(&pop, 5).unwrap().dim.variance;
        let expected = mean_bound(&pop, false);
        assert!(
            (expected - exact).abs() <= 1e-12 * exact.max(1.0),
            "{expected} vs {exact}"
        );
    }
}

#[test]
fn neyman_bound_is_conservative_with_heterogeneous_effects() {
    for seed in 10..15 {
        let pop = population(seed, 10, 1.5);
        let exact = enumerate_complete(&pop, 5).unwrap().dim.variance;
        let expected = mean_bound(&pop, false);
        // E[bound] − Var = S²_Δ/N exactly.
        assert!((expected - exact - pop.s2_effect() / 10.0).abs() <= 1e-12 * expected);
        assert!(mean_bound(&pop, true) <= expected);
    }
}

#[test]
fn stratified_within_term_bounds_the_saturated_variance() {
    let pis: BTreeMap<String, f64> = [("a".to_string(), 0.5), ("b".to_string(), 0.5)].into();
    for seed in 20..25 {
        let pop = population(seed, 12, 1.0);
        let exact = enumerate_stratified(&pop, &pis)
            .unwrap()
            .sat
            .unwrap()
            .variance;
        let labels: Vec<String> = pop
            .units()
            .iter()
            .map(|u| u.stratum.clone().unwrap())
            .collect();
        let assignments = all_stratified(&labels, &pis).unwrap();
        let expected = assignments
            .iter()
            .map(|d| design_based_strat_variance(&pop.observe(d), &pis).unwrap())
            .sum::<f64>()
            / assignments.len() as f64;
        assert!(expected >= exact - 1e-12, "{expected} < {exact}");
    }
}
