//! Variance estimators matched to each design and estimator, and normal
//! confidence intervals.
//!
//! Every function returns the variance of the point estimator itself (not of
//! its √n-scaled version). Sample variances use divisor count − 1.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::estimate::{
    fitted_arms, require_arms, saturated_estimate, stratum_effects, WorkingModel,
};
use crate::model::{ClusterSample, Sample};
use crate::stats::{mean, sample_variance, sum, z_critical};

fn arm_variances(treated: &[f64], control: &[f64], context: &str) -> Result<(f64, f64)> {
    if treated.len() < 2 || control.len() < 2 {
        return Err(Error::TooFew(format!(
            "{context}: need at least 2 treated and 2 control units, have {} and {}",
            treated.len(),
            control.len()
        )));
    }
    Ok((sample_variance(treated), sample_variance(control)))
}

/// s²_1/n_1 + s²_0/n_0.
pub fn arm_robust_variance(sample: &Sample) -> Result<f64> {
    let (t, c) = (sample.arm(1), sample.arm(0));
    let (v1, v0) = arm_variances(&t, &c, "arm-robust variance")?;
    Ok(v1 / t.len() as f64 + v0 / c.len() as f64)
}

/// Upper bound on the finite-population variance of the difference in means
/// for a population of size `population`. The improved form subtracts
/// (s_1 − s_0)²/N, which is still conservative because S²_Δ ≥ (S_1 − S_0)².
pub fn finite_pop_bound(sample: &Sample, population: usize, improved: bool) -> Result<f64> {
    if population < sample.len() {
        return Err(Error::InvalidInput(format!(
            "population size {population} is smaller than the sample size {}",
            sample.len()
        )));
    }
    let (t, c) = (sample.arm(1), sample.arm(0));
    let (v1, v0) = arm_variances(&t, &c, "finite-population bound")?;
    let plain = v1 / t.len() as f64 + v0 / c.len() as f64;
    if !improved {
        return Ok(plain);
    }
    let gap = v1.sqrt() - v0.sqrt();
    Ok((plain - gap * gap / population as f64).max(0.0))
}

struct StratumTerms {
    within: f64,
    between: f64,
}

fn strat_terms(sample: &Sample, pi_by_stratum: &BTreeMap<String, f64>) -> Result<StratumTerms> {
    let parts = stratum_effects(sample)?;
    let n = sample.len() as f64;
    let sat = saturated_estimate(sample)?;
    let mut within = Vec::with_capacity(parts.len());
    let mut between = Vec::with_capacity(parts.len());
    for p in &parts {
        let pi = *pi_by_stratum.get(&p.label).ok_or_else(|| {
            Error::InvalidInput(format!(
                "no assignment probability for stratum `{}`",
                p.label
            ))
        })?;
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::InvalidInput(format!(
                "π = {pi} for stratum `{}` is not inside (0, 1)",
                p.label
            )));
        }
        let (v1, v0) = arm_variances(&p.treated, &p.control, &format!("stratum `{}`", p.label))?;
        let share = p.n as f64 / n;
        within.push(share * (v1 / pi + v0 / (1.0 - pi)));
        between.push(share * (p.effect - sat).powi(2));
    }
    Ok(StratumTerms {
        within: sum(&within),
        between: sum(&between),
    })
}

/// Consistent variance of the saturated (or, under constant-π block
/// randomization, difference-in-means) estimator:
/// (1/n)[Σ p̂(x)(s²_1(x)/π(x) + s²_0(x)/(1 − π(x))) + Σ p̂(x)(Δ̂(x) − Δ̂)²].
pub fn sbr_variance(sample: &Sample, pi_by_stratum: &BTreeMap<String, f64>) -> Result<f64> {
    let t = strat_terms(sample, pi_by_stratum)?;
    Ok((t.within + t.between) / sample.len() as f64)
}

/// Design-based (finite-population) analogue of `sbr_variance`: the
/// within-stratum term only.
pub fn design_based_strat_variance(
    sample: &Sample,
    pi_by_stratum: &BTreeMap<String, f64>,
) -> Result<f64> {
    let t = strat_terms(sample, pi_by_stratum)?;
    Ok(t.within / sample.len() as f64)
}

/// λ̂: mean product of pair sums over consecutive pairs of pairs
/// (1,2), (3,4), …; an odd last pair is left out.
pub fn pairs_of_pairs_product(pair_sums: &[f64]) -> f64 {
    let products: Vec<f64> = pair_sums.chunks_exact(2).map(|c| c[0] * c[1]).collect();
    sum(&products) / products.len() as f64
}

/// Collapsed-strata variance for matched pairs:
/// (1/n)[2 s²_1 + 2 s²_0 − max(0, λ̂ − m̂²)], where m̂ = (2/n) Σ Y estimates
/// E[Y(1) + Y(0)] and λ̂ (see `pairs_of_pairs_product`) estimates
/// E[E[Y(1) + Y(0) | X]²]. `pairs` must be ordered so that consecutive pairs
/// have similar covariates.
pub fn matched_pairs_variance(sample: &Sample, pairs: &[(usize, usize)]) -> Result<f64> {
    let k = pairs.len();
    if k < 4 {
        return Err(Error::TooFew(format!(
            "too few pairs: {k} (need at least 4)"
        )));
    }
    if 2 * k != sample.len() {
        return Err(Error::InvalidInput(format!(
            "{k} pairs do not cover {} units",
            sample.len()
        )));
    }
    let units = sample.units();
    let mut pair_sums = Vec::with_capacity(k);
    for (j, &(a, b)) in pairs.iter().enumerate() {
        if units[a].treatment + units[b].treatment != 1 {
            return Err(Error::InvalidInput(format!(
                "pair {j} (units {a}, {b}) does not have exactly one treated unit"
            )));
        }
        pair_sums.push(units[a].outcome + units[b].outcome);
    }
    let n = sample.len() as f64;
    let (v1, v0) = arm_variances(&sample.arm(1), &sample.arm(0), "matched pairs")?;
    let m = mean(&pair_sums);
    let lambda = pairs_of_pairs_product(&pair_sums);
    let correction = (lambda - m * m).max(0.0);
    Ok(((2.0 * v1 + 2.0 * v0 - correction) / n).max(0.0))
}

/// Arm-robust variance with cluster averages as outcomes.
pub fn cluster_eq_variance(clusters: &ClusterSample) -> Result<f64> {
    arm_robust_variance(&clusters.cluster_level())
}

/// Ŷ_g = (N_g/N̄)(Ȳ_g − size-weighted mean of Ȳ in g's arm), N̄ the overall
/// mean cluster size.
pub fn size_weighted_residuals(clusters: &ClusterSample) -> Result<Vec<f64>> {
    let sizes = clusters.sizes()?;
    let nbar = mean(&sizes);
    let mut arm_mean = [0.0; 2];
    for d in 0..2u8 {
        let mut num = crate::stats::CompensatedSum::default();
        let mut den = crate::stats::CompensatedSum::default();
        for (c, n) in clusters.clusters().iter().zip(&sizes) {
            if c.treatment == d {
                num.add(c.mean() * n);
                den.add(*n);
            }
        }
        arm_mean[d as usize] = num.value() / den.value();
    }
    Ok(clusters
        .clusters()
        .iter()
        .zip(&sizes)
        .map(|(c, n)| n / nbar * (c.mean() - arm_mean[c.treatment as usize]))
        .collect())
}

/// Variance of the size-weighted cluster estimator: arm-robust variance of
/// Ŷ_g. With `strata` (cluster-level stratified assignment at a common π),
/// subtracts π(1 − π) Σ p̂(x)(m̂(x) − m̄)²/G, where
/// m̂(x) = Ŷ̄_1(x)/π + Ŷ̄_0(x)/(1 − π) and m̄ is its p̂-weighted mean.
pub fn cluster_size_variance(
    clusters: &ClusterSample,
    strata: Option<&BTreeMap<String, f64>>,
) -> Result<f64> {
    let resid = size_weighted_residuals(clusters)?;
    let d: Vec<u8> = clusters.clusters().iter().map(|c| c.treatment).collect();
    let base = arm_robust_variance(&Sample::from_arms(&resid, &d))?;
    let Some(pi_by_stratum) = strata else {
        return Ok(base);
    };

    let g = clusters.len() as f64;
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, c) in clusters.clusters().iter().enumerate() {
        let label = c
            .stratum
            .clone()
            .ok_or_else(|| Error::Incompatible(format!("cluster {} has no stratum label", c.id)))?;
        groups.entry(label).or_default().push(i);
    }
    let mut pi_common: Option<f64> = None;
    let mut shares = Vec::new();
    let mut m = Vec::new();
    for (label, idx) in &groups {
        let pi = *pi_by_stratum.get(label).ok_or_else(|| {
            Error::InvalidInput(format!("no assignment probability for stratum `{label}`"))
        })?;
        match pi_common {
            None => pi_common = Some(pi),
            Some(p) if (p - pi).abs() > 1e-12 => {
                return Err(Error::Incompatible(
                    "stratified size-weighted variance needs a common π across strata".into(),
                ))
            }
            _ => {}
        }
        let arm = |a: u8| -> Vec<f64> {
            idx.iter()
                .filter(|&&i| d[i] == a)
                .map(|&i| resid[i])
                .collect()
        };
        let (t, c) = (arm(1), arm(0));
        if t.is_empty() || c.is_empty() {
            return Err(Error::EmptyArm(format!(
                "stratum `{label}` lacks a treated or control cluster"
            )));
        }
        shares.push(idx.len() as f64 / g);
        m.push(mean(&t) / pi + mean(&c) / (1.0 - pi));
    }
    let pi = pi_common.unwrap_or(0.5);
    let mbar = sum(&shares
        .iter()
        .zip(&m)
        .map(|(p, v)| p * v)
        .collect::<Vec<_>>());
    let between = sum(&shares
        .iter()
        .zip(&m)
        .map(|(p, v)| p * (v - mbar).powi(2))
        .collect::<Vec<_>>());
    Ok((base - pi * (1.0 - pi) * between / g).max(0.0))
}

/// Influence-function variance for the doubly robust estimator:
/// (1/n)[s²(Y − μ̂_1 | D=1)/π + s²(Y − μ̂_0 | D=0)/(1 − π) + s²(μ̂_1 − μ̂_0)].
/// The last term estimates the variance of the fitted effect across units;
/// the interacted regression's own sandwich is not used because it ignores
/// sampling variation in the covariate mean.
pub fn aipw_variance(sample: &Sample, pi: f64, model: &dyn WorkingModel) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::InvalidInput(format!(
            "π = {pi} is not inside (0, 1)"
        )));
    }
    require_arms(sample, "AIPW variance")?;
    let (mu1, mu0) = fitted_arms(sample, model)?;
    let units = sample.units();
    let mut r1 = Vec::new();
    let mut r0 = Vec::new();
    for (i, u) in units.iter().enumerate() {
        if u.is_treated() {
            r1.push(u.outcome - mu1[i]);
        } else {
            r0.push(u.outcome - mu0[i]);
        }
    }
    let (v1, v0) = arm_variances(&r1, &r0, "AIPW variance")?;
    let tau: Vec<f64> = mu1.iter().zip(&mu0).map(|(a, b)| a - b).collect();
    let vt = sample_variance(&tau);
    Ok((v1 / pi + v0 / (1.0 - pi) + vt) / sample.len() as f64)
}

/// point ± z_{(1+level)/2} · sqrt(variance).
pub fn confidence_interval(point: f64, variance: f64, level: f64) -> Result<[f64; 2]> {
    if !(variance >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "variance {variance} is negative or undefined"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level {level} is not inside (0, 1)"
        )));
    }
    let half = z_critical(level) * variance.sqrt();
    Ok([point - half, point + half])
}
