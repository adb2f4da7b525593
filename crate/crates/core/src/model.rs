//! Domain types shared across the crate and input validation.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One experimental unit as observed by the analyst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub outcome: f64,
    pub treatment: u8,
    pub covariates: Vec<f64>,
    pub stratum: Option<String>,
    pub pair_id: Option<i64>,
    pub cluster_id: Option<i64>,
}

impl Unit {
    pub fn new(outcome: f64, treatment: u8) -> Self {
        Unit {
            outcome,
            treatment,
            covariates: Vec::new(),
            stratum: None,
            pair_id: None,
            cluster_id: None,
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn with_stratum(mut self, stratum: impl Into<String>) -> Self {
        self.stratum = Some(stratum.into());
        self
    }

    pub fn with_pair(mut self, pair_id: i64) -> Self {
        self.pair_id = Some(pair_id);
        self
    }

    pub fn is_treated(&self) -> bool {
        self.treatment == 1
    }
}

/// Observed experimental data: outcomes, binary treatment, covariates and
/// optional stratum / pair / cluster labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    units: Vec<Unit>,
}

/// A broken `Sample` invariant. `unit` is `None` for sample-level rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub unit: Option<usize>,
    pub rule: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.unit {
            Some(i) => write!(f, "unit {i}: {}", self.rule),
            None => write!(f, "sample: {}", self.rule),
        }
    }
}

impl Sample {
    /// Wraps the units without checking invariants; see [`validate`].
    pub fn new(units: Vec<Unit>) -> Self {
        Sample { units }
    }

    /// Builds a sample and rejects it if any invariant fails.
    pub fn try_new(units: Vec<Unit>) -> Result<Self> {
        let sample = Sample { units };
        let violations = validate(&sample);
        if let Some(v) = violations.first() {
            return Err(Error::InvalidInput(format!(
                "{v} ({} violation(s) in total)",
                violations.len()
            )));
        }
        Ok(sample)
    }

    /// Outcome/treatment-only sample.
    pub fn from_arms(outcomes: &[f64], treatments: &[u8]) -> Self {
        assert_eq!(outcomes.len(), treatments.len());
        Sample::new(
            outcomes
                .iter()
                .zip(treatments)
                .map(|(&y, &d)| Unit::new(y, d))
                .collect(),
        )
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn into_units(self) -> Vec<Unit> {
        self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn n_treated(&self) -> usize {
        self.units.iter().filter(|u| u.is_treated()).count()
    }

    pub fn n_control(&self) -> usize {
        self.len() - self.n_treated()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.outcome).collect()
    }

    pub fn treatments(&self) -> Vec<u8> {
        self.units.iter().map(|u| u.treatment).collect()
    }

    /// Covariate dimension k (taken from the first unit).
    pub fn covariate_dim(&self) -> usize {
        self.units.first().map_or(0, |u| u.covariates.len())
    }

    pub fn has_strata(&self) -> bool {
        !self.units.is_empty() && self.units.iter().all(|u| u.stratum.is_some())
    }

    pub fn has_pairs(&self) -> bool {
        !self.units.is_empty() && self.units.iter().all(|u| u.pair_id.is_some())
    }

    /// Outcomes in arm `d` (0 or 1).
    pub fn arm(&self, d: u8) -> Vec<f64> {
        self.units
            .iter()
            .filter(|u| u.treatment == d)
            .map(|u| u.outcome)
            .collect()
    }

    /// Unit indices grouped by stratum label, labels in lexicographic order.
    pub fn strata(&self) -> Result<BTreeMap<String, Vec<usize>>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, u) in self.units.iter().enumerate() {
            let label = u
                .stratum
                .as_ref()
                .ok_or_else(|| Error::Incompatible(format!("unit {i} has no stratum label")))?;
            out.entry(label.clone()).or_default().push(i);
        }
        Ok(out)
    }

    /// The sub-sample made of the given unit indices.
    pub fn subset(&self, indices: &[usize]) -> Sample {
        Sample::new(indices.iter().map(|&i| self.units[i].clone()).collect())
    }

    /// Same units with a new treatment vector.
    pub fn with_treatments(&self, d: &[u8]) -> Sample {
        assert_eq!(d.len(), self.len());
        Sample::new(
            self.units
                .iter()
                .zip(d)
                .map(|(u, &di)| Unit {
                    treatment: di,
                    ..u.clone()
                })
                .collect(),
        )
    }

    /// Pairs as (first, second) unit indices, ordered by pair id.
    pub fn pairs(&self) -> Result<Vec<(usize, usize)>> {
        let mut by_id: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, u) in self.units.iter().enumerate() {
            let id = u
                .pair_id
                .ok_or_else(|| Error::Incompatible(format!("unit {i} has no pair id")))?;
            by_id.entry(id).or_default().push(i);
        }
        by_id
            .into_iter()
            .map(|(id, members)| match members.as_slice() {
                [a, b] => Ok((*a, *b)),
                _ => Err(Error::InvalidInput(format!(
                    "pair {id} has {} unit(s), expected 2",
                    members.len()
                ))),
            })
            .collect()
    }
}

/// Checks every `Sample` invariant and reports each failure. Never errors.
pub fn validate(sample: &Sample) -> Vec<Violation> {
    let mut out = Vec::new();
    let units = sample.units();
    let k = sample.covariate_dim();
    let any_stratum = units.iter().any(|u| u.stratum.is_some());
    for (i, u) in units.iter().enumerate() {
        if u.treatment > 1 {
            out.push(Violation {
                unit: Some(i),
                rule: "treatment not binary".into(),
            });
        }
        if !u.outcome.is_finite() {
            out.push(Violation {
                unit: Some(i),
                rule: "outcome missing or not finite".into(),
            });
        }
        if u.covariates.len() != k {
            out.push(Violation {
                unit: Some(i),
                rule: format!(
                    "covariate dimension {} differs from {k}",
                    u.covariates.len()
                ),
            });
        }
        if u.covariates.iter().any(|x| !x.is_finite()) {
            out.push(Violation {
                unit: Some(i),
                rule: "covariate missing or not finite".into(),
            });
        }
        if any_stratum && u.stratum.is_none() {
            out.push(Violation {
                unit: Some(i),
                rule: "missing stratum label".into(),
            });
        }
    }

    if !units.is_empty() {
        if !units.iter().any(|u| u.treatment == 1) {
            out.push(Violation {
                unit: None,
                rule: "no treated unit".into(),
            });
        }
        if !units.iter().any(|u| u.treatment == 0) {
            out.push(Violation {
                unit: None,
                rule: "no control unit".into(),
            });
        }
    }

    let mut pairs: HashMap<i64, Vec<usize>> = HashMap::new();
    for (i, u) in units.iter().enumerate() {
        if let Some(p) = u.pair_id {
            pairs.entry(p).or_default().push(i);
        }
    }
    let mut pair_ids: Vec<_> = pairs.keys().copied().collect();
    pair_ids.sort_unstable();
    for id in pair_ids {
        let members = &pairs[&id];
        match members.as_slice() {
            [only] => out.push(Violation {
                unit: Some(*only),
                rule: format!("incomplete pair {id}"),
            }),
            [a, b] => {
                if units[*a].treatment + units[*b].treatment != 1 {
                    out.push(Violation {
                        unit: Some(*a),
                        rule: format!("pair {id} does not have exactly one treated unit"),
                    });
                }
            }
            _ => out.push(Violation {
                unit: Some(members[2]),
                rule: format!("pair {id} has {} units", members.len()),
            }),
        }
    }
    out
}

/// Both potential outcomes of one unit (simulation and oracle side).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialUnit {
    pub y1: f64,
    pub y0: f64,
    pub covariates: Vec<f64>,
    pub stratum: Option<String>,
}

impl PotentialUnit {
    pub fn new(y1: f64, y0: f64) -> Self {
        PotentialUnit {
            y1,
            y0,
            covariates: Vec::new(),
            stratum: None,
        }
    }

    pub fn observe(&self, d: u8) -> Unit {
        Unit {
            outcome: if d == 1 { self.y1 } else { self.y0 },
            treatment: d,
            covariates: self.covariates.clone(),
            stratum: self.stratum.clone(),
            pair_id: None,
            cluster_id: None,
        }
    }
}

/// A finite population with both potential outcomes known for every unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPopulation {
    units: Vec<PotentialUnit>,
}

impl PotentialPopulation {
    pub fn new(units: Vec<PotentialUnit>) -> Self {
        PotentialPopulation { units }
    }

    pub fn from_outcomes(y1: &[f64], y0: &[f64]) -> Self {
        assert_eq!(y1.len(), y0.len());
        PotentialPopulation::new(
            y1.iter()
                .zip(y0)
                .map(|(&a, &b)| PotentialUnit::new(a, b))
                .collect(),
        )
    }

    pub fn units(&self) -> &[PotentialUnit] {
        &self.units
    }

    /// Population size N.
    pub fn size(&self) -> usize {
        self.units.len()
    }

    /// Mean of the potential outcome under arm `d`.
    pub fn mean(&self, d: u8) -> f64 {
        crate::stats::mean(self.potential(d).as_slice())
    }

    pub fn potential(&self, d: u8) -> Vec<f64> {
        self.units
            .iter()
            .map(|u| if d == 1 { u.y1 } else { u.y0 })
            .collect()
    }

    pub fn effects(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.y1 - u.y0).collect()
    }

    /// Finite-population average treatment effect.
    pub fn ate(&self) -> f64 {
        crate::stats::mean(&self.effects())
    }

    /// S²_d: variance of the arm-d potential outcomes, divisor N − 1.
    pub fn s2(&self, d: u8) -> f64 {
        crate::stats::sample_variance(&self.potential(d))
    }

    /// S²_Δ: variance of the unit-level effects, divisor N − 1.
    pub fn s2_effect(&self) -> f64 {
        crate::stats::sample_variance(&self.effects())
    }

    /// The observed sample produced by assignment `d`.
    pub fn observe(&self, d: &[u8]) -> Sample {
        assert_eq!(d.len(), self.size());
        Sample::new(
            self.units
                .iter()
                .zip(d)
                .map(|(u, &di)| u.observe(di))
                .collect(),
        )
    }
}

/// Randomization scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignKind {
    Complete {
        pi: f64,
    },
    StratifiedBlock {
        pi_by_stratum: BTreeMap<String, f64>,
    },
    MatchedPairs,
    ClusterComplete {
        pi: f64,
    },
    ClusterStratifiedBlock {
        pi_by_stratum: BTreeMap<String, f64>,
    },
}

impl DesignKind {
    /// Stratified block randomization with the same π in every listed stratum.
    pub fn stratified_constant<I, S>(pi: f64, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        DesignKind::StratifiedBlock {
            pi_by_stratum: labels.into_iter().map(|l| (l.into(), pi)).collect(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DesignKind::Complete { .. } => "complete",
            DesignKind::StratifiedBlock { .. } => "sbr",
            DesignKind::MatchedPairs => "pairs",
            DesignKind::ClusterComplete { .. } => "cluster",
            DesignKind::ClusterStratifiedBlock { .. } => "cluster-sbr",
        }
    }

    pub fn is_cluster(&self) -> bool {
        matches!(
            self,
            DesignKind::ClusterComplete { .. } | DesignKind::ClusterStratifiedBlock { .. }
        )
    }

    /// Checks that every assignment probability lies strictly inside (0, 1).
    pub fn check(&self) -> Result<()> {
        let bad = |pi: f64| !(pi > 0.0 && pi < 1.0);
        match self {
            DesignKind::Complete { pi } | DesignKind::ClusterComplete { pi } => {
                if bad(*pi) {
                    return Err(Error::InvalidInput(format!(
                        "π = {pi} is not inside (0, 1)"
                    )));
                }
            }
            DesignKind::StratifiedBlock { pi_by_stratum }
            | DesignKind::ClusterStratifiedBlock { pi_by_stratum } => {
                for (label, &pi) in pi_by_stratum {
                    if bad(pi) {
                        return Err(Error::InvalidInput(format!(
                            "π = {pi} for stratum `{label}` is not inside (0, 1)"
                        )));
                    }
                }
            }
            DesignKind::MatchedPairs => {}
        }
        Ok(())
    }
}

/// A randomization scheme plus the seed that drives it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub seed: u64,
}

/// One realized 0/1 assignment vector with its design metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub d: Vec<u8>,
    pub design: DesignKind,
    pub pairing: Option<Vec<(usize, usize)>>,
}

impl Assignment {
    pub fn n_treated(&self) -> usize {
        self.d.iter().filter(|&&d| d == 1).count()
    }
}

/// One cluster: true size N_g, sampled member outcomes, shared treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: i64,
    pub size: Option<usize>,
    pub members: Vec<f64>,
    pub treatment: u8,
    pub stratum: Option<String>,
}

impl Cluster {
    /// Sampled-member mean Ȳ_g.
    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.members)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSample {
    clusters: Vec<Cluster>,
}

impl ClusterSample {
    pub fn new(clusters: Vec<Cluster>) -> Self {
        ClusterSample { clusters }
    }

    pub fn try_new(clusters: Vec<Cluster>) -> Result<Self> {
        let s = ClusterSample { clusters };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<()> {
        for c in &self.clusters {
            if c.members.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "cluster {} has no sampled members",
                    c.id
                )));
            }
            if let Some(n) = c.size {
                if c.members.len() > n {
                    return Err(Error::InvalidInput(format!(
                        "cluster {} has {} sampled members but size {n}",
                        c.id,
                        c.members.len()
                    )));
                }
            }
            if c.treatment > 1 {
                return Err(Error::InvalidInput(format!(
                    "cluster {} has non-binary treatment {}",
                    c.id, c.treatment
                )));
            }
            if c.members.iter().any(|y| !y.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "cluster {} has a missing or non-finite outcome",
                    c.id
                )));
            }
        }
        Ok(())
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// Number of clusters G.
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn has_strata(&self) -> bool {
        !self.clusters.is_empty() && self.clusters.iter().all(|c| c.stratum.is_some())
    }

    pub fn n_treated(&self) -> usize {
        self.clusters.iter().filter(|c| c.treatment == 1).count()
    }

    /// Same clusters with a new cluster-level treatment vector.
    pub fn with_treatments(&self, d: &[u8]) -> ClusterSample {
        assert_eq!(d.len(), self.len());
        ClusterSample::new(
            self.clusters
                .iter()
                .zip(d)
                .map(|(c, &dg)| Cluster {
                    treatment: dg,
                    ..c.clone()
                })
                .collect(),
        )
    }

    /// Cluster means as a unit-level sample (one row per cluster).
    pub fn cluster_level(&self) -> Sample {
        Sample::new(
            self.clusters
                .iter()
                .map(|c| Unit {
                    outcome: c.mean(),
                    treatment: c.treatment,
                    covariates: Vec::new(),
                    stratum: c.stratum.clone(),
                    pair_id: None,
                    cluster_id: Some(c.id),
                })
                .collect(),
        )
    }

    /// Every sampled member as its own row.
    pub fn individual_level(&self) -> Sample {
        Sample::new(
            self.clusters
                .iter()
                .flat_map(|c| {
                    c.members.iter().map(move |&y| Unit {
                        outcome: y,
                        treatment: c.treatment,
                        covariates: Vec::new(),
                        stratum: c.stratum.clone(),
                        pair_id: None,
                        cluster_id: Some(c.id),
                    })
                })
                .collect(),
        )
    }

    /// True sizes N_g, failing if any is unknown.
    pub fn sizes(&self) -> Result<Vec<f64>> {
        self.clusters
            .iter()
            .map(|c| {
                c.size.map(|n| n as f64).ok_or_else(|| {
                    Error::Incompatible(format!("cluster {} has no known size N_g", c.id))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimand {
    #[serde(rename = "ATE")]
    Ate,
    #[serde(rename = "Delta_eq")]
    DeltaEq,
    #[serde(rename = "Delta_size")]
    DeltaSize,
    /// Sample-weighted cluster effect targeted by the individual-level
    /// difference in means on clustered data.
    #[serde(rename = "theta")]
    Theta,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_treated: usize,
    pub n_control: usize,
    /// Every variance estimate computed, keyed by method name.
    pub variance_estimates: BTreeMap<String, f64>,
    /// Treated-minus-control counts per stratum, when strata are present.
    pub imbalance: BTreeMap<String, i64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

/// Result of one analysis. Serializes to the fixed report key set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimand: Estimand,
    pub point: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub level: f64,
    pub n: usize,
    pub method: String,
    pub variance_method: String,
    pub diagnostics: Diagnostics,
    pub warnings: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four() -> Vec<Unit> {
        vec![
            Unit::new(3.0, 1),
            Unit::new(1.0, 0),
            Unit::new(2.0, 1),
            Unit::new(5.0, 0),
        ]
    }

    #[test]
    fn valid_sample_has_no_violations() {
        assert!(validate(&Sample::new(four())).is_empty());
    }

    #[test]
    fn non_binary_treatment_is_named() {
        let mut units = four();
        units[2].treatment = 2;
        let v = validate(&Sample::new(units));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].unit, Some(2));
        assert_eq!(v[0].rule, "treatment not binary");
    }

    #[test]
    fn incomplete_pair_is_reported() {
        let units = vec![
            Unit::new(1.0, 1).with_pair(0),
            Unit::new(0.0, 0).with_pair(0),
            Unit::new(2.0, 1).with_pair(1),
            Unit::new(2.0, 0),
        ];
        let v = validate(&Sample::new(units));
        assert!(v
            .iter()
            .any(|v| v.rule.starts_with("incomplete pair") && v.unit == Some(2)));
    }

    #[test]
    fn pair_with_two_treated_is_reported() {
        let units = vec![
            Unit::new(1.0, 1).with_pair(4),
            Unit::new(0.0, 1).with_pair(4),
        ];
        let v = validate(&Sample::new(units));
        assert!(v.iter().any(|v| v.rule.contains("exactly one treated")));
    }

    #[test]
    fn covariate_dimension_and_strata_checked() {
        let units = vec![
            Unit::new(1.0, 1)
                .with_covariates(vec![1.0])
                .with_stratum("a"),
            Unit::new(0.0, 0).with_covariates(vec![1.0, 2.0]),
        ];
        let v = validate(&Sample::new(units));
        assert!(v
            .iter()
            .any(|v| v.unit == Some(1) && v.rule.contains("dimension")));
        assert!(v
            .iter()
            .any(|v| v.unit == Some(1) && v.rule == "missing stratum label"));
    }

    #[test]
    fn missing_outcome_is_a_violation() {
        let mut units = four();
        units[0].outcome = f64::NAN;
        assert!(Sample::try_new(units).is_err());
    }

    #[test]
    fn population_summaries() {
        let pop = PotentialPopulation::from_outcomes(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]);
        assert_eq!(pop.ate(), 2.5);
        assert_eq!(pop.s2(0), 0.0);
        assert!((pop.s2(1) - 5.0 / 3.0).abs() < 1e-15);
        assert!((pop.mean(1) - pop.mean(0) - pop.ate()).abs() < 1e-15);
    }
}
