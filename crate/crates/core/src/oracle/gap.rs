//! Gap between super-population and finite-population variances.
//!
//! Sampling n units from a population of N drawn from a law, then assigning
//! treatment by complete randomization, gives
//! n·Var[Δ̂] = n·E[Var[Δ̂ | W_N]] + n·Var[Δ_N], and the last term tends to
//! λ·Var[Y(1) − Y(0)] with λ = lim n/N.

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use super::dgp::Dgp;
use super::theory::moments;
use crate::design::assign_complete;
use crate::error::{Error, Result};
use crate::model::PotentialPopulation;
use crate::rng;
use crate::stats::{mean, sample_variance};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub n: usize,
    pub population: usize,
    pub lambda: f64,
    pub replications: usize,
    /// Var[Y(1) − Y(0)] under the law.
    pub var_effect: f64,
    /// λ·Var[Y(1) − Y(0)].
    pub expected_gap: f64,
    /// Mean over replicates of n[(Δ̂ − Δ)² − V_fp], with Δ̂ from a realized
    /// assignment and V_fp = S²_1/n_1 + S²_0/n_0 − S²_Δ/N the exact design
    /// variance given the population.
    pub gap: f64,
    pub gap_mcse: f64,
    /// Mean of n(Δ_N − Δ)², the same quantity with the assignment integrated
    /// out exactly; it is 0 whenever every unit has the same effect.
    pub gap_conditional: f64,
    pub gap_conditional_mcse: f64,
    /// n times the mean squared error of Δ̂ around Δ.
    pub n_var_super: f64,
    /// n times the mean exact design variance.
    pub n_var_fp: f64,
}

/// Estimates n·Var_super − n·Var_fp for samples of `n` out of populations of
/// `population` units drawn from `dgp`, with complete randomization at `pi`
/// inside the sample. Replicate r uses `rng::stream(seed, r)`.
pub fn finite_pop_gap(
    dgp: &Dgp,
    n: usize,
    population: usize,
    pi: f64,
    replications: usize,
    seed: u64,
) -> Result<GapReport> {
    if n > population {
        return Err(Error::InvalidInput(format!(
            "sample size {n} exceeds the population size {population}"
        )));
    }
    if replications < 2 {
        return Err(Error::InvalidInput("need at least 2 replications".into()));
    }
    let m = moments(dgp)?;
    let ate = m.mean[1] - m.mean[0];
    let var_effect = m.var[1] + m.var[0] - 2.0 * m.cov01;

    let rows = (0..replications as u64)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64, f64, f64)> {
            let mut rng = rng::stream(seed, r);
            let pop = PotentialPopulation::new(dgp.draw_units(population, &mut rng)?);
            let picked = index::sample(&mut rng, population, n).into_vec();
            let sample_pop =
                PotentialPopulation::new(picked.iter().map(|&i| pop.units()[i].clone()).collect());
            let a = assign_complete(n, pi, &mut rng)?;
            let est = crate::estimate::diff_in_means(&sample_pop.observe(&a.d))?;
            let n1 = a.n_treated() as f64;
            let n0 = n as f64 - n1;
            let v_fp = pop.s2(1) / n1 + pop.s2(0) / n0 - pop.s2_effect() / population as f64;
            let nf = n as f64;
            let delta_n = pop.ate();
            Ok((
                nf * ((est - ate).powi(2) - v_fp),
                nf * (delta_n - ate).powi(2),
                nf * (est - ate).powi(2),
                nf * v_fp,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let col = |f: fn(&(f64, f64, f64, f64)) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let (g, gc, sup, fp) = (col(|r| r.0), col(|r| r.1), col(|r| r.2), col(|r| r.3));
    let mcse = |v: &[f64]| (sample_variance(v) / v.len() as f64).sqrt();
    let lambda = n as f64 / population as f64;
    Ok(GapReport {
        n,
        population,
        lambda,
        replications,
        var_effect,
        expected_gap: lambda * var_effect,
        gap: mean(&g),
        gap_mcse: mcse(&g),
        gap_conditional: mean(&gc),
        gap_conditional_mcse: mcse(&gc),
        n_var_super: mean(&sup),
        n_var_fp: mean(&fp),
    })
}
