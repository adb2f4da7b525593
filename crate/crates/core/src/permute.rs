//! Randomization tests of the sharp null Y_i(1) = Y_i(0) for all i.
//!
//! Under the sharp null every outcome is known under every assignment, so the
//! reference distribution of a statistic is obtained by redrawing the
//! treatment vector from the design and recomputing the statistic on the
//! unchanged outcomes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{self, all_complete, all_pairs, all_stratified};
use crate::error::{Error, Result};
use crate::estimate::diff_in_means;
use crate::model::{DesignKind, DesignSpec, Sample};
use crate::rng;
use crate::variance::arm_robust_variance;

/// Smallest number of resampled assignments accepted by `permutation_test`.
pub const MIN_DRAWS: usize = 99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Statistic {
    /// |difference in means|.
    #[default]
    #[serde(rename = "dim")]
    Dim,
    /// |difference in means| / arm-robust standard error.
    #[serde(rename = "dim-studentized")]
    DimStudentized,
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Statistic::Dim => "dim",
            Statistic::DimStudentized => "dim-studentized",
        }
    }

    pub fn compute(self, sample: &Sample) -> Result<f64> {
        let dim = diff_in_means(sample)?;
        match self {
            Statistic::Dim => Ok(dim.abs()),
            Statistic::DimStudentized => {
                let v = arm_robust_variance(sample)?;
                // Constant outcomes give 0/0; define the statistic as 0 so
                // that every assignment ties.
                Ok(if v > 0.0 {
                    dim.abs() / v.sqrt()
                } else if dim == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                })
            }
        }
    }

    /// Slack used when counting resampled values "at least as large" as the
    /// observed one, so that ties broken by rounding still count as ties.
    fn tolerance(self, observed: f64, sample: &Sample) -> f64 {
        let scale = match self {
            Statistic::Dim => sample
                .units()
                .iter()
                .fold(observed.abs(), |m, u| m.max(u.outcome.abs())),
            Statistic::DimStudentized => observed.abs(),
        };
        1e-9 * scale.max(1e-300)
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dim" => Ok(Statistic::Dim),
            "dim-studentized" => Ok(Statistic::DimStudentized),
            other => Err(Error::InvalidInput(format!(
                "unknown test statistic `{other}` (expected dim or dim-studentized)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationResult {
    pub statistic: Statistic,
    pub observed: f64,
    pub p_value: f64,
    /// Resampled statistics in ascending order. In exhaustive mode this is
    /// the statistic under every assignment the design can produce.
    pub reference: Vec<f64>,
    pub exhaustive: bool,
}

/// How the observed treatment vector may be redrawn under the design.
enum Resampler {
    Complete,
    Stratified(Vec<Vec<usize>>),
    Pairs(Vec<(usize, usize)>),
}

impl Resampler {
    fn new(sample: &Sample, kind: &DesignKind) -> Result<Self> {
        let d = sample.treatments();
        match kind {
            DesignKind::Complete { pi } => {
                let expected = design::treated_count(*pi, sample.len());
                if sample.n_treated() != expected {
                    return Err(Error::Incompatible(format!(
                        "{} treated units, but complete randomization with π = {pi} treats {expected}",
                        sample.n_treated()
                    )));
                }
                Ok(Resampler::Complete)
            }
            DesignKind::StratifiedBlock { pi_by_stratum } => {
                let strata = sample.strata()?;
                for (label, members) in &strata {
                    let pi = pi_by_stratum.get(label).ok_or_else(|| {
                        Error::Incompatible(format!(
                            "no assignment probability for stratum `{label}`"
                        ))
                    })?;
                    let expected = design::treated_count(*pi, members.len());
                    let got = members.iter().filter(|&&i| d[i] == 1).count();
                    if got != expected {
                        return Err(Error::Incompatible(format!(
                            "stratum `{label}` has {got} treated, but the design treats {expected}"
                        )));
                    }
                }
                Ok(Resampler::Stratified(strata.into_values().collect()))
            }
            DesignKind::MatchedPairs => {
                let pairs = if sample.has_pairs() {
                    sample.pairs()?
                } else {
                    let covs: Vec<Vec<f64>> = sample
                        .units()
                        .iter()
                        .map(|u| u.covariates.clone())
                        .collect();
                    design::match_pairs(&covs)?
                };
                if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| d[a] + d[b] != 1) {
                    return Err(Error::Incompatible(format!(
                        "units {a} and {b} form a pair but are not split one treated, one control"
                    )));
                }
                Ok(Resampler::Pairs(pairs))
            }
            DesignKind::ClusterComplete { .. } | DesignKind::ClusterStratifiedBlock { .. } => {
                Err(Error::Incompatible(
                    "randomization tests support complete, sbr and pairs designs".into(),
                ))
            }
        }
    }

    /// A fresh assignment with the same counting invariants as `observed`.
    fn draw<R: Rng + ?Sized>(&self, observed: &[u8], rng: &mut R) -> Vec<u8> {
        let mut d = observed.to_vec();
        match self {
            Resampler::Complete => d.shuffle(rng),
            Resampler::Stratified(groups) => {
                for members in groups {
                    let mut block: Vec<u8> = members.iter().map(|&i| observed[i]).collect();
                    block.shuffle(rng);
                    for (&i, v) in members.iter().zip(block) {
                        d[i] = v;
                    }
                }
            }
            Resampler::Pairs(pairs) => {
                for &(a, b) in pairs {
                    let first = u8::from(rng.random_bool(0.5));
                    d[a] = first;
                    d[b] = 1 - first;
                }
            }
        }
        d
    }

    fn all(&self, sample: &Sample) -> Result<Vec<Vec<u8>>> {
        match self {
            Resampler::Complete => all_complete(sample.len(), sample.n_treated()),
            Resampler::Stratified(groups) => {
                let mut labels = vec![String::new(); sample.len()];
                let mut pis = BTreeMap::new();
                for (g, members) in groups.iter().enumerate() {
                    let key = format!("{g:08}");
                    for &i in members {
                        labels[i] = key.clone();
                    }
                    let n1 = members
                        .iter()
                        .filter(|&&i| sample.units()[i].treatment == 1)
                        .count();
                    // Any π with ⌊π n_x⌋ = n1 reproduces the observed count.
                    pis.insert(key, (n1 as f64 + 0.5) / members.len() as f64);
                }
                all_stratified(&labels, &pis)
            }
            Resampler::Pairs(pairs) => all_pairs(pairs),
        }
    }
}

fn p_count(reference: &[f64], observed: f64, tol: f64) -> usize {
    // `reference` is sorted ascending.
    let threshold = observed - tol;
    reference.len() - reference.partition_point(|&s| s < threshold)
}

/// Monte Carlo randomization test with `b` redrawn assignments.
///
/// Draw j uses `rng::stream(design.seed, j)`, so the result does not depend
/// on thread scheduling. The p-value is (1 + #{T_j ≥ T_obs}) / (b + 1).
pub fn permutation_test(
    sample: &Sample,
    design: &DesignSpec,
    statistic: Statistic,
    b: usize,
) -> Result<PermutationResult> {
    if b < MIN_DRAWS {
        return Err(Error::InvalidInput(format!(
            "B = {b} resampled assignments is too few (need at least {MIN_DRAWS})"
        )));
    }
    let resampler = Resampler::new(sample, &design.kind)?;
    let observed = statistic.compute(sample)?;
    let d_obs = sample.treatments();
    let mut reference = (0..b as u64)
        .into_par_iter()
        .map(|j| {
            let d = resampler.draw(&d_obs, &mut rng::stream(design.seed, j));
            statistic.compute(&sample.with_treatments(&d))
        })
        .collect::<Result<Vec<f64>>>()?;
    reference.sort_by(f64::total_cmp);
    let hits = p_count(&reference, observed, statistic.tolerance(observed, sample));
    Ok(PermutationResult {
        statistic,
        observed,
        p_value: (1 + hits) as f64 / (b + 1) as f64,
        reference,
        exhaustive: false,
    })
}

/// Exact randomization test over every assignment the design can produce.
/// Seed-independent; refuses when there are more than
/// `design::ENUMERATION_CAP` assignments.
pub fn exhaustive_test(
    sample: &Sample,
    kind: &DesignKind,
    statistic: Statistic,
) -> Result<PermutationResult> {
    let resampler = Resampler::new(sample, kind)?;
    let observed = statistic.compute(sample)?;
    let mut reference = resampler
        .all(sample)?
        .into_par_iter()
        .map(|d| statistic.compute(&sample.with_treatments(&d)))
        .collect::<Result<Vec<f64>>>()?;
    reference.sort_by(f64::total_cmp);
    let hits = p_count(&reference, observed, statistic.tolerance(observed, sample));
    Ok(PermutationResult {
        statistic,
        observed,
        p_value: hits as f64 / reference.len() as f64,
        reference,
        exhaustive: true,
    })
}
