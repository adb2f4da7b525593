//! Exact moments by iterating over every assignment a design can produce.
//!
//! Two settings are covered. With a `PotentialPopulation` the outcomes are
//! fixed and the only randomness is the assignment (finite-population
//! moments). With a `LabelLaw` the covariate labels are fixed and outcomes are
//! random given the label, which gives the moments conditional on X, the
//! ex-post bias and the imbalance of each assignment.

use std::collections::BTreeMap;

use serde::Serialize;

use super::dgp::Dgp;
use crate::design::{all_complete, all_pairs, all_stratified, match_pairs, treated_count};
use crate::error::{Error, Result};
use crate::model::{DesignKind, PotentialPopulation};
use crate::stats::CompensatedSum;

/// Mean and variance of a statistic over equally likely assignments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssignmentMoments {
    pub mean: f64,
    pub variance: f64,
}

impl AssignmentMoments {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = crate::stats::sum(values) / n;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
        AssignmentMoments {
            mean,
            variance: crate::stats::sum(&dev) / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompleteEnumeration {
    pub assignments: usize,
    /// Δ^fp: the population average effect.
    pub ate: f64,
    pub dim: AssignmentMoments,
    /// S²_1/n_1 + S²_0/n_0 − S²_Δ/N.
    pub closed_form_variance: f64,
}

fn dim_of(y1: &[f64], y0: &[f64], d: &[u8]) -> f64 {
    let (mut s1, mut s0) = (CompensatedSum::default(), CompensatedSum::default());
    let (mut n1, mut n0) = (0usize, 0usize);
    for ((a, b), &di) in y1.iter().zip(y0).zip(d) {
        if di == 1 {
            s1.add(*a);
            n1 += 1;
        } else {
            s0.add(*b);
            n0 += 1;
        }
    }
    s1.value() / n1 as f64 - s0.value() / n0 as f64
}

/// Exact distribution of the difference in means over all C(N, n_1)
/// assignments of the whole population.
pub fn enumerate_complete(
    population: &PotentialPopulation,
    n1: usize,
) -> Result<CompleteEnumeration> {
    let n = population.size();
    if n1 == 0 || n1 >= n {
        return Err(Error::DegenerateDesign(format!(
            "n_1 = {n1} with N = {n} leaves an arm empty"
        )));
    }
    let (y1, y0) = (population.potential(1), population.potential(0));
    let values: Vec<f64> = all_complete(n, n1)?
        .iter()
        .map(|d| dim_of(&y1, &y0, d))
        .collect();
    let n0 = n - n1;
    Ok(CompleteEnumeration {
        assignments: values.len(),
        ate: population.ate(),
        dim: AssignmentMoments::of(&values),
        closed_form_variance: population.s2(1) / n1 as f64 + population.s2(0) / n0 as f64
            - population.s2_effect() / n as f64,
    })
}

fn labels_of(population: &PotentialPopulation) -> Result<Vec<String>> {
    population
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            u.stratum
                .clone()
                .ok_or_else(|| Error::Incompatible(format!("unit {i} has no stratum label")))
        })
        .collect()
}

/// Every assignment of `kind` on units with the given labels/covariates.
fn design_assignments(
    kind: &DesignKind,
    n: usize,
    labels: Option<&[String]>,
    covariates: &[Vec<f64>],
) -> Result<Vec<Vec<u8>>> {
    match kind {
        DesignKind::Complete { pi } => all_complete(n, treated_count(*pi, n)),
        DesignKind::StratifiedBlock { pi_by_stratum } => {
            let labels = labels
                .ok_or_else(|| Error::Incompatible("stratified design needs labels".into()))?;
            all_stratified(labels, pi_by_stratum)
        }
        DesignKind::MatchedPairs => all_pairs(&match_pairs(covariates)?),
        other => Err(Error::Incompatible(format!(
            "enumeration supports complete, sbr and pairs designs, not `{}`",
            other.name()
        ))),
    }
}

fn imbalance_distribution(
    assignments: &[Vec<u8>],
    labels: &[String],
) -> BTreeMap<String, BTreeMap<i64, usize>> {
    let mut out: BTreeMap<String, BTreeMap<i64, usize>> = BTreeMap::new();
    for d in assignments {
        for (label, imb) in crate::design::imbalance(d, labels) {
            *out.entry(label).or_default().entry(imb).or_insert(0) += 1;
        }
    }
    out
}

/// Saturated estimate for fixed assignment; `None` when a stratum lacks an
/// arm.
fn sat_of(y1: &[f64], y0: &[f64], d: &[u8], groups: &BTreeMap<String, Vec<usize>>) -> Option<f64> {
    let n = d.len() as f64;
    let mut total = CompensatedSum::default();
    for members in groups.values() {
        let pick = |v: &[f64]| members.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let dd: Vec<u8> = members.iter().map(|&i| d[i]).collect();
        let n1 = dd.iter().filter(|&&x| x == 1).count();
        if n1 == 0 || n1 == dd.len() {
            return None;
        }
        total.add(members.len() as f64 / n * dim_of(&pick(y1), &pick(y0), &dd));
    }
    Some(total.value())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratifiedEnumeration {
    pub assignments: usize,
    pub ate: f64,
    pub dim: AssignmentMoments,
    /// Saturated estimator; `None` when some assignment leaves a stratum
    /// without one arm (possible under complete randomization).
    pub sat: Option<AssignmentMoments>,
    /// For each label, how many assignments produce each value of Imb(x).
    pub imbalance: BTreeMap<String, BTreeMap<i64, usize>>,
}

/// Finite-population moments of the difference in means and of the
/// saturated estimator under `kind`, for a population whose units carry
/// stratum labels.
pub fn enumerate_design(
    population: &PotentialPopulation,
    kind: &DesignKind,
) -> Result<StratifiedEnumeration> {
    let labels = labels_of(population)?;
    let covs: Vec<Vec<f64>> = population
        .units()
        .iter()
        .map(|u| u.covariates.clone())
        .collect();
    let assignments = design_assignments(kind, population.size(), Some(&labels), &covs)?;
    let (y1, y0) = (population.potential(1), population.potential(0));
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.clone()).or_default().push(i);
    }
    let dims: Vec<f64> = assignments.iter().map(|d| dim_of(&y1, &y0, d)).collect();
    let sats: Option<Vec<f64>> = assignments
        .iter()
        .map(|d| sat_of(&y1, &y0, d, &groups))
        .collect();
    Ok(StratifiedEnumeration {
        assignments: assignments.len(),
        ate: population.ate(),
        dim: AssignmentMoments::of(&dims),
        sat: sats.map(|s| AssignmentMoments::of(&s)),
        imbalance: imbalance_distribution(&assignments, &labels),
    })
}

/// Stratified block randomization over the population's labels.
pub fn enumerate_stratified(
    population: &PotentialPopulation,
    pi_by_stratum: &BTreeMap<String, f64>,
) -> Result<StratifiedEnumeration> {
    enumerate_design(
        population,
        &DesignKind::StratifiedBlock {
            pi_by_stratum: pi_by_stratum.clone(),
        },
    )
}

/// Conditional means and variances of Y(1), Y(0) at one covariate label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelLaw {
    pub m1: f64,
    pub m0: f64,
    pub v1: f64,
    pub v0: f64,
}

impl LabelLaw {
    /// Per-label law of a discrete `Dgp` whose support labels are distinct.
    pub fn from_dgp(dgp: &Dgp) -> Result<BTreeMap<String, LabelLaw>> {
        let Dgp::Discrete { support, .. } = dgp else {
            return Err(Error::Incompatible(
                "conditional enumeration needs a discrete law".into(),
            ));
        };
        let mut out = BTreeMap::new();
        for s in support {
            let law = LabelLaw {
                m1: s.y1.mean,
                m0: s.y0.mean,
                v1: s.y1.sd * s.y1.sd,
                v0: s.y0.sd * s.y0.sd,
            };
            if out.insert(s.label.clone(), law).is_some() {
                return Err(Error::InvalidInput(format!(
                    "support label `{}` is repeated",
                    s.label
                )));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalEnumeration {
    pub assignments: usize,
    /// Δ_n(X) = (1/n) Σ [m_1(X_i) − m_0(X_i)].
    pub conditional_ate: f64,
    /// E[Δ̂ | X], averaging over assignments.
    pub mean: f64,
    /// Var[Δ̂ | X], from E[Δ̂² | X] − E[Δ̂ | X]².
    pub variance: f64,
    /// E[Var[Δ̂ | X, D] | X].
    pub expected_conditional_variance: f64,
    /// (2/n²) Σ (v_1(X_i) + v_0(X_i)); valid when every unit is treated with
    /// probability 1/2 and arms have n/2 units.
    pub balanced_closed_form: Option<f64>,
    /// E[Bias^post(X, D)² | X].
    pub bias_second_moment: f64,
    pub max_abs_bias: f64,
    /// Bias^post of each assignment, in enumeration order.
    pub bias_post: Vec<f64>,
    pub imbalance: BTreeMap<String, BTreeMap<i64, usize>>,
}

/// Moments of the difference in means conditional on the labels `labels`,
/// with outcomes independent across units given their labels.
pub fn conditional_enumeration(
    labels: &[String],
    law: &BTreeMap<String, LabelLaw>,
    kind: &DesignKind,
) -> Result<ConditionalEnumeration> {
    let n = labels.len();
    let unit_law: Vec<LabelLaw> = labels
        .iter()
        .map(|l| {
            law.get(l)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("no conditional law for label `{l}`")))
        })
        .collect::<Result<_>>()?;
    let covs: Vec<Vec<f64>> = vec![Vec::new(); n];
    let assignments = design_assignments(kind, n, Some(labels), &covs)?;
    let conditional_ate = unit_law.iter().map(|u| u.m1 - u.m0).sum::<f64>() / n as f64;

    let mut first = CompensatedSum::default();
    let mut second = CompensatedSum::default();
    let mut cond_var = CompensatedSum::default();
    let mut bias_sq = CompensatedSum::default();
    let mut biases = Vec::with_capacity(assignments.len());
    for d in &assignments {
        let n1 = d.iter().filter(|&&v| v == 1).count() as f64;
        let n0 = n as f64 - n1;
        // Δ̂ = Σ c_i Y_i with c_i = D_i/n_1 − (1 − D_i)/n_0.
        let c: Vec<f64> = d
            .iter()
            .map(|&v| if v == 1 { 1.0 / n1 } else { -1.0 / n0 })
            .collect();
        let m: Vec<f64> = d
            .iter()
            .zip(&unit_law)
            .map(|(&v, u)| if v == 1 { u.m1 } else { u.m0 })
            .collect();
        let v: Vec<f64> = d
            .iter()
            .zip(&unit_law)
            .map(|(&v, u)| if v == 1 { u.v1 } else { u.v0 })
            .collect();
        let mean_d: f64 = c.iter().zip(&m).map(|(a, b)| a * b).sum();
        let var_d: f64 = c.iter().zip(&v).map(|(a, b)| a * a * b).sum();
        // E[Δ̂² | X, D] = Σ_i Σ_j c_i c_j (m_i m_j + 1{i = j} v_i).
        let mut sq = 0.0;
        for i in 0..n {
            for j in 0..n {
                sq += c[i] * c[j] * (m[i] * m[j] + if i == j { v[i] } else { 0.0 });
            }
        }
        first.add(mean_d);
        second.add(sq);
        cond_var.add(var_d);
        let bias = mean_d - conditional_ate;
        bias_sq.add(bias * bias);
        biases.push(bias);
    }
    let count = assignments.len() as f64;
    let mean = first.value() / count;
    let half = assignments
        .iter()
        .all(|d| 2 * d.iter().filter(|&&v| v == 1).count() == n);
    let every_half = match kind {
        DesignKind::StratifiedBlock { pi_by_stratum } => pi_by_stratum.values().all(|&p| p == 0.5),
        DesignKind::Complete { pi } => *pi == 0.5,
        DesignKind::MatchedPairs => true,
        _ => false,
    };
    let balanced_closed_form = (half && every_half)
        .then(|| 2.0 / (n * n) as f64 * unit_law.iter().map(|u| u.v1 + u.v0).sum::<f64>());
    Ok(ConditionalEnumeration {
        assignments: assignments.len(),
        conditional_ate,
        mean,
        variance: second.value() / count - mean * mean,
        expected_conditional_variance: cond_var.value() / count,
        balanced_closed_form,
        bias_second_moment: bias_sq.value() / count,
        max_abs_bias: biases.iter().fold(0.0, |a, b| a.max(b.abs())),
        bias_post: biases,
        imbalance: imbalance_distribution(&assignments, labels),
    })
}
