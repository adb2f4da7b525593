//! One-call analysis: estimator plus design-matched variance, confidence
//! interval, diagnostics and warnings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::design::{imbalance, match_pairs, stratum_labels};
use crate::error::{Error, Result};
use crate::estimate::{
    aipw, cluster_eq, cluster_size, diff_in_means, lin_interacted, pi_mismatch_warning,
    pooled_adjusted, pooled_regressors, saturated_estimate, ArmMeanModel, DemeanedLinearModel,
    WorkingModel, ZeroModel,
};
use crate::lsq::{least_squares, robust_covariance, Regressors, Robust};
use crate::model::{ClusterSample, DesignKind, Diagnostics, Estimand, EstimateReport, Sample};
use crate::variance::{
    aipw_variance, arm_robust_variance, cluster_eq_variance, cluster_size_variance,
    confidence_interval, design_based_strat_variance, finite_pop_bound, matched_pairs_variance,
    sbr_variance,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Dim,
    Sat,
    Pooled,
    Lin,
    Aipw,
    ClusterEq,
    ClusterSize,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Dim => "dim",
            EstimatorKind::Sat => "sat",
            EstimatorKind::Pooled => "pooled",
            EstimatorKind::Lin => "lin",
            EstimatorKind::Aipw => "aipw",
            EstimatorKind::ClusterEq => "cluster-eq",
            EstimatorKind::ClusterSize => "cluster-size",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dim" => EstimatorKind::Dim,
            "sat" => EstimatorKind::Sat,
            "pooled" => EstimatorKind::Pooled,
            "lin" => EstimatorKind::Lin,
            "aipw" => EstimatorKind::Aipw,
            "cluster-eq" => EstimatorKind::ClusterEq,
            "cluster-size" => EstimatorKind::ClusterSize,
            other => return Err(Error::InvalidInput(format!("unknown estimator `{other}`"))),
        })
    }
}

/// Variance method. `Auto` resolves to the most specific valid method for
/// the declared design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceMethod {
    #[default]
    Auto,
    Robust,
    Sbr,
    StratFp,
    Pairs,
    ClusterEq,
    ClusterSize,
    /// Finite-population bound for a population of `population` units
    /// (the sample size when absent).
    FinitePop {
        population: Option<usize>,
        improved: bool,
    },
}

impl fmt::Display for VarianceMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarianceMethod::Auto => f.write_str("auto"),
            VarianceMethod::Robust => f.write_str("robust"),
            VarianceMethod::Sbr => f.write_str("sbr"),
            VarianceMethod::StratFp => f.write_str("strat-fp"),
            VarianceMethod::Pairs => f.write_str("pairs"),
            VarianceMethod::ClusterEq => f.write_str("cluster-eq"),
            VarianceMethod::ClusterSize => f.write_str("cluster-size"),
            VarianceMethod::FinitePop {
                population,
                improved,
            } => {
                f.write_str("finite-pop")?;
                if let Some(n) = population {
                    write!(f, ":{n}")?;
                }
                if *improved {
                    f.write_str(",improved")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for VarianceMethod {
    type Err = Error;

    /// Accepts the names printed by `Display`, including
    /// `finite-pop[:N][,improved]`.
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "auto" => VarianceMethod::Auto,
            "robust" => VarianceMethod::Robust,
            "sbr" => VarianceMethod::Sbr,
            "strat-fp" => VarianceMethod::StratFp,
            "pairs" => VarianceMethod::Pairs,
            "cluster-eq" => VarianceMethod::ClusterEq,
            "cluster-size" => VarianceMethod::ClusterSize,
            other => {
                let rest = other.strip_prefix("finite-pop").ok_or_else(|| {
                    Error::InvalidInput(format!("unknown variance method `{other}`"))
                })?;
                let (rest, improved) = match rest.strip_suffix(",improved") {
                    Some(r) => (r, true),
                    None => (rest, false),
                };
                let population = match rest {
                    "" => None,
                    r => Some(
                        r.strip_prefix(':')
                            .and_then(|n| n.parse::<usize>().ok())
                            .ok_or_else(|| {
                                Error::InvalidInput(format!(
                                    "cannot read population size in `{other}`"
                                ))
                            })?,
                    ),
                };
                VarianceMethod::FinitePop {
                    population,
                    improved,
                }
            }
        })
    }
}

impl Serialize for VarianceMethod {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VarianceMethod {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Working model for the doubly robust estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Zero,
    ArmMean,
    #[default]
    DemeanedLinear,
}

impl ModelKind {
    pub fn model(self) -> &'static dyn WorkingModel {
        match self {
            ModelKind::Zero => &ZeroModel,
            ModelKind::ArmMean => &ArmMeanModel,
            ModelKind::DemeanedLinear => &DemeanedLinearModel,
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "zero" => ModelKind::Zero,
            "arm-mean" => ModelKind::ArmMean,
            "demeaned-linear" => ModelKind::DemeanedLinear,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown working model `{other}`"
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    Units(Sample),
    Clusters(ClusterSample),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRequest {
    pub estimator: EstimatorKind,
    pub variance: VarianceMethod,
    pub level: f64,
    /// Declared design; drives `Auto`, π for the doubly robust estimator and
    /// π(x) for the stratified variances.
    pub design: Option<DesignKind>,
    /// Assignment probability when no design carries one.
    pub pi: Option<f64>,
    pub model: ModelKind,
}

impl AnalysisRequest {
    pub fn new(estimator: EstimatorKind, variance: VarianceMethod) -> Self {
        AnalysisRequest {
            estimator,
            variance,
            level: 0.95,
            design: None,
            pi: None,
            model: ModelKind::default(),
        }
    }

    pub fn with_design(mut self, design: DesignKind) -> Self {
        self.design = Some(design);
        self
    }
}

/// Point estimate and variance without the report decoration.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub estimand: Estimand,
    pub point: f64,
    pub variance: f64,
    /// Resolved variance method name as it appears in reports.
    pub variance_method: String,
    pub warnings: Vec<String>,
}

fn incompatible(msg: impl Into<String>) -> Error {
    Error::Incompatible(msg.into())
}

/// Resolves `Auto` for unit-level data.
fn resolve_units(req: &AnalysisRequest, sample: &Sample) -> VarianceMethod {
    if req.variance != VarianceMethod::Auto {
        return req.variance;
    }
    match req.estimator {
        EstimatorKind::Sat => VarianceMethod::Sbr,
        EstimatorKind::Pooled | EstimatorKind::Lin | EstimatorKind::Aipw => VarianceMethod::Robust,
        _ => match &req.design {
            Some(DesignKind::MatchedPairs) => VarianceMethod::Pairs,
            Some(DesignKind::StratifiedBlock { .. }) => VarianceMethod::Sbr,
            Some(_) => VarianceMethod::Robust,
            None if sample.has_pairs() => VarianceMethod::Pairs,
            None if sample.has_strata() => VarianceMethod::Sbr,
            None => VarianceMethod::Robust,
        },
    }
}

/// π(x) for the stratified variances: the declared design, then a common
/// `pi`, then the realized share in each stratum (with a warning).
fn stratum_pis(
    req: &AnalysisRequest,
    sample: &Sample,
    warnings: &mut Vec<String>,
) -> Result<BTreeMap<String, f64>> {
    if let Some(DesignKind::StratifiedBlock { pi_by_stratum }) = &req.design {
        return Ok(pi_by_stratum.clone());
    }
    let strata = sample.strata()?;
    if let Some(pi) = req.pi {
        return Ok(strata.into_keys().map(|l| (l, pi)).collect());
    }
    warnings.push(
        "no assignment probabilities given; using the realized treated share in each stratum"
            .into(),
    );
    Ok(strata
        .into_iter()
        .map(|(l, idx)| {
            let n1 = idx
                .iter()
                .filter(|&&i| sample.units()[i].is_treated())
                .count();
            (l, n1 as f64 / idx.len() as f64)
        })
        .collect())
}

/// Design π for the doubly robust estimator.
fn design_pi(req: &AnalysisRequest, sample: &Sample, warnings: &mut Vec<String>) -> Result<f64> {
    if let Some(pi) = req.pi {
        return Ok(pi);
    }
    match &req.design {
        Some(DesignKind::Complete { pi }) => return Ok(*pi),
        Some(DesignKind::MatchedPairs) => return Ok(0.5),
        Some(DesignKind::StratifiedBlock { pi_by_stratum }) => {
            let mut values = pi_by_stratum.values();
            if let Some(&first) = values.next() {
                if values.all(|&p| (p - first).abs() < 1e-12) {
                    return Ok(first);
                }
            }
            return Err(incompatible(
                "the doubly robust estimator needs a single π; the design varies π across strata",
            ));
        }
        _ => {}
    }
    let share = sample.n_treated() as f64 / sample.len() as f64;
    warnings.push(format!(
        "no assignment probability given; using the realized treated share {share:.6}"
    ));
    Ok(share)
}

fn pairs_of(sample: &Sample) -> Result<Vec<(usize, usize)>> {
    if sample.has_pairs() {
        return sample.pairs();
    }
    let covs: Vec<Vec<f64>> = sample
        .units()
        .iter()
        .map(|u| u.covariates.clone())
        .collect();
    match_pairs(&covs).map_err(|e| {
        incompatible(format!(
            "matched-pairs variance needs pair ids or covariates: {e}"
        ))
    })
}

/// Variance of the difference in means (or the saturated estimator, which
/// shares the stratified formulas) under `method`.
fn dim_variance(
    method: VarianceMethod,
    req: &AnalysisRequest,
    sample: &Sample,
    warnings: &mut Vec<String>,
) -> Result<f64> {
    match method {
        VarianceMethod::Robust => arm_robust_variance(sample),
        VarianceMethod::Sbr => sbr_variance(sample, &stratum_pis(req, sample, warnings)?),
        VarianceMethod::StratFp => {
            design_based_strat_variance(sample, &stratum_pis(req, sample, warnings)?)
        }
        VarianceMethod::Pairs => matched_pairs_variance(sample, &pairs_of(sample)?),
        VarianceMethod::FinitePop {
            population,
            improved,
        } => finite_pop_bound(sample, population.unwrap_or(sample.len()), improved),
        VarianceMethod::ClusterEq | VarianceMethod::ClusterSize => Err(incompatible(format!(
            "variance `{method}` needs cluster data"
        ))),
        VarianceMethod::Auto => unreachable!("resolved before use"),
    }
}

fn pooled_hc2_variance(sample: &Sample) -> Result<f64> {
    let x = pooled_regressors(sample);
    let fit = least_squares(&sample.outcomes(), &x, None)?;
    Ok(robust_covariance(&x, &fit, Robust::Hc2)?[1][1])
}

fn units_estimate(req: &AnalysisRequest, sample: &Sample) -> Result<Estimate> {
    let mut warnings = Vec::new();
    let method = resolve_units(req, sample);
    let (point, variance, method_name) = match req.estimator {
        EstimatorKind::Dim => {
            let v = dim_variance(method, req, sample, &mut warnings)?;
            if method == VarianceMethod::Robust {
                match &req.design {
                    Some(DesignKind::StratifiedBlock { .. }) => warnings.push(
                        "arm-robust variance is conservative under stratified block randomization; `sbr` matches the design"
                            .into(),
                    ),
                    Some(DesignKind::MatchedPairs) => warnings.push(
                        "arm-robust variance is conservative under matched pairs; `pairs` matches the design".into(),
                    ),
                    _ => {}
                }
            }
            (diff_in_means(sample)?, v, method.to_string())
        }
        EstimatorKind::Sat => {
            if !matches!(method, VarianceMethod::Sbr | VarianceMethod::StratFp) {
                return Err(incompatible(format!(
                    "the saturated estimator supports the `sbr` and `strat-fp` variances, not `{method}`"
                )));
            }
            let v = dim_variance(method, req, sample, &mut warnings)?;
            (saturated_estimate(sample)?, v, method.to_string())
        }
        EstimatorKind::Pooled => {
            if method != VarianceMethod::Robust {
                return Err(incompatible(format!(
                    "the pooled adjustment supports only the `robust` variance, not `{method}`"
                )));
            }
            (
                pooled_adjusted(sample)?,
                pooled_hc2_variance(sample)?,
                "robust-hc2".to_string(),
            )
        }
        EstimatorKind::Lin => {
            if method != VarianceMethod::Robust {
                return Err(incompatible(format!(
                    "the interacted adjustment supports only the `robust` variance, not `{method}`"
                )));
            }
            let share = sample.n_treated() as f64 / sample.len() as f64;
            let v = aipw_variance(sample, share, &DemeanedLinearModel)?;
            (lin_interacted(sample)?, v, "influence".to_string())
        }
        EstimatorKind::Aipw => {
            if method != VarianceMethod::Robust {
                return Err(incompatible(format!(
                    "the doubly robust estimator supports only the `robust` variance, not `{method}`"
                )));
            }
            if req.model == ModelKind::DemeanedLinear && sample.covariate_dim() == 0 {
                return Err(incompatible(
                    "aipw with the demeaned-linear working model needs covariate columns x1..xk",
                ));
            }
            let pi = design_pi(req, sample, &mut warnings)?;
            warnings.extend(pi_mismatch_warning(sample, pi));
            let model = req.model.model();
            (
                aipw(sample, pi, model)?,
                aipw_variance(sample, pi, model)?,
                "influence".to_string(),
            )
        }
        EstimatorKind::ClusterEq | EstimatorKind::ClusterSize => {
            return Err(incompatible(format!(
                "estimator `{}` needs cluster data (a `cluster` column)",
                req.estimator
            )))
        }
    };
    Ok(Estimate {
        estimand: Estimand::Ate,
        point,
        variance,
        variance_method: method_name,
        warnings,
    })
}

fn cluster_strata<'a>(req: &'a AnalysisRequest) -> Option<&'a BTreeMap<String, f64>> {
    match &req.design {
        Some(DesignKind::ClusterStratifiedBlock { pi_by_stratum })
        | Some(DesignKind::StratifiedBlock { pi_by_stratum }) => Some(pi_by_stratum),
        _ => None,
    }
}

/// Cluster-robust (CR0) variance of the individual-level difference in means.
fn individual_cluster_robust(clusters: &ClusterSample) -> Result<f64> {
    let rows = clusters.individual_level();
    let ids: Vec<i64> = rows
        .units()
        .iter()
        .map(|u| u.cluster_id.unwrap_or_default())
        .collect();
    let mut x = Regressors::with_constant(rows.len());
    x.push(
        "D",
        rows.units()
            .iter()
            .map(|u| f64::from(u.treatment))
            .collect(),
    );
    let fit = least_squares(&rows.outcomes(), &x, None)?;
    Ok(robust_covariance(&x, &fit, Robust::Cluster(&ids))?[1][1])
}

fn clusters_estimate(req: &AnalysisRequest, clusters: &ClusterSample) -> Result<Estimate> {
    clusters.check()?;
    let method = req.variance;
    let mismatch = |expected: &str| {
        incompatible(format!(
            "estimator `{}` on cluster data supports the `{expected}` variance, not `{method}`",
            req.estimator
        ))
    };
    let (estimand, point, variance, name) = match req.estimator {
        EstimatorKind::ClusterEq => {
            if !matches!(method, VarianceMethod::Auto | VarianceMethod::ClusterEq | VarianceMethod::Robust) {
                return Err(mismatch("cluster-eq"));
            }
            (Estimand::DeltaEq, cluster_eq(clusters)?, cluster_eq_variance(clusters)?, "cluster-eq")
        }
        EstimatorKind::ClusterSize => {
            if !matches!(method, VarianceMethod::Auto | VarianceMethod::ClusterSize | VarianceMethod::Robust) {
                return Err(mismatch("cluster-size"));
            }
            let v = cluster_size_variance(clusters, cluster_strata(req))?;
            (Estimand::DeltaSize, cluster_size(clusters)?, v, "cluster-size")
        }
        EstimatorKind::Dim => {
            if !matches!(method, VarianceMethod::Auto | VarianceMethod::Robust) {
                return Err(mismatch("robust"));
            }
            let rows = clusters.individual_level();
            (Estimand::Theta, diff_in_means(&rows)?, individual_cluster_robust(clusters)?, "cluster-robust")
        }
        other => {
            return Err(incompatible(format!(
                "estimator `{other}` is not available for cluster data; use cluster-eq, cluster-size or dim"
            )))
        }
    };
    Ok(Estimate {
        estimand,
        point,
        variance,
        variance_method: name.to_string(),
        warnings: Vec::new(),
    })
}

fn check_design_fits(req: &AnalysisRequest, data: &Data) -> Result<()> {
    if let Some(design) = &req.design {
        design.check()?;
        match (data, design.is_cluster()) {
            (Data::Units(_), true) => {
                return Err(incompatible(format!(
                    "design `{}` assigns clusters but the data has no `cluster` column",
                    design.name()
                )))
            }
            (Data::Clusters(_), false) => {
                return Err(incompatible(format!(
                    "design `{}` assigns units but the data is clustered",
                    design.name()
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Point estimate and variance only. Used by the Monte Carlo engine, where
/// diagnostics would be wasted work.
pub fn estimate(data: &Data, req: &AnalysisRequest) -> Result<Estimate> {
    check_design_fits(req, data)?;
    match data {
        Data::Units(sample) => units_estimate(req, sample),
        Data::Clusters(clusters) => clusters_estimate(req, clusters),
    }
}

/// Full analysis report. `n` counts analysis units: clusters for the
/// cluster-level estimators, rows otherwise.
pub fn analyze(data: &Data, req: &AnalysisRequest) -> Result<EstimateReport> {
    let est = estimate(data, req)?;
    let ci = confidence_interval(est.point, est.variance, req.level)?;
    let mut diagnostics = Diagnostics::default();
    diagnostics
        .variance_estimates
        .insert(est.variance_method.clone(), est.variance);
    let n = match data {
        Data::Units(sample) => {
            diagnostics.n_treated = sample.n_treated();
            diagnostics.n_control = sample.n_control();
            if sample.has_strata() {
                diagnostics.imbalance = imbalance(&sample.treatments(), &stratum_labels(sample)?);
            }
            if matches!(req.estimator, EstimatorKind::Dim | EstimatorKind::Sat) {
                // Alternative variances for comparison; methods that do not
                // apply to this data are skipped.
                let mut scratch = Vec::new();
                let mut candidates = vec![VarianceMethod::Robust];
                if sample.has_strata() {
                    candidates.extend([VarianceMethod::Sbr, VarianceMethod::StratFp]);
                }
                if sample.has_pairs() {
                    candidates.push(VarianceMethod::Pairs);
                }
                for m in candidates {
                    if let Ok(v) = dim_variance(m, req, sample, &mut scratch) {
                        diagnostics
                            .variance_estimates
                            .entry(m.to_string())
                            .or_insert(v);
                    }
                }
            }
            if req.estimator == EstimatorKind::Aipw {
                let mut scratch = Vec::new();
                if let Ok(pi) = design_pi(req, sample, &mut scratch) {
                    diagnostics.extra.insert("pi".into(), pi);
                }
            }
            sample.len()
        }
        Data::Clusters(clusters) => {
            diagnostics.n_treated = clusters.n_treated();
            diagnostics.n_control = clusters.len() - clusters.n_treated();
            if clusters.has_strata() {
                let labels: Vec<String> = clusters
                    .clusters()
                    .iter()
                    .filter_map(|c| c.stratum.clone())
                    .collect();
                let d: Vec<u8> = clusters.clusters().iter().map(|c| c.treatment).collect();
                diagnostics.imbalance = imbalance(&d, &labels);
            }
            if let Ok(v) = cluster_eq_variance(clusters) {
                diagnostics
                    .variance_estimates
                    .entry("cluster-eq".into())
                    .or_insert(v);
            }
            if let Ok(v) = cluster_size_variance(clusters, cluster_strata(req)) {
                diagnostics
                    .variance_estimates
                    .entry("cluster-size".into())
                    .or_insert(v);
            }
            if req.estimator == EstimatorKind::Dim {
                clusters.clusters().iter().map(|c| c.members.len()).sum()
            } else {
                clusters.len()
            }
        }
    };
    let method = match req.estimator {
        EstimatorKind::Aipw => format!("aipw({})", req.model.model().name()),
        e => e.name().to_string(),
    };
    Ok(EstimateReport {
        estimand: est.estimand,
        point: est.point,
        se: est.variance.sqrt(),
        ci,
        level: req.level,
        n,
        method,
        variance_method: est.variance_method,
        diagnostics,
        warnings: est.warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cluster, Unit};

    fn four() -> Data {
        Data::Units(Sample::from_arms(&[1.0, 0.0, 3.0, 5.0], &[1, 0, 1, 0]))
    }

    #[test]
    fn variance_names_round_trip() {
        for s in [
            "auto",
            "robust",
            "sbr",
            "strat-fp",
            "pairs",
            "cluster-eq",
            "cluster-size",
            "finite-pop",
            "finite-pop:500",
            "finite-pop,improved",
            "finite-pop:80,improved",
        ] {
            assert_eq!(s.parse::<VarianceMethod>().unwrap().to_string(), s);
        }
        assert!("finite-pop:x".parse::<VarianceMethod>().is_err());
        assert!("hc3".parse::<VarianceMethod>().is_err());
    }

    #[test]
    fn dim_report() {
        let req = AnalysisRequest::new(EstimatorKind::Dim, VarianceMethod::Robust);
        let r = analyze(&four(), &req).unwrap();
        assert!((r.point + 0.5).abs() < 1e-12);
        assert_eq!(r.estimand, Estimand::Ate);
        assert_eq!(r.variance_method, "robust");
        // s²_1 = 2, s²_0 = 12.5 → 2/2 + 12.5/2.
        assert!((r.se * r.se - 7.25).abs() < 1e-12);
        assert_eq!(r.n, 4);
    }

    #[test]
    fn aipw_without_covariates_is_incompatible() {
        let req = AnalysisRequest::new(EstimatorKind::Aipw, VarianceMethod::Auto);
        assert!(matches!(
            analyze(&four(), &req),
            Err(Error::Incompatible(_))
        ));
        let req = AnalysisRequest::new(EstimatorKind::ClusterEq, VarianceMethod::Auto);
        assert!(matches!(
            analyze(&four(), &req),
            Err(Error::Incompatible(_))
        ));
    }

    fn stratified() -> Sample {
        let mut units = Vec::new();
        for (label, shift) in [("a", 0.0), ("b", 10.0)] {
            for i in 0..6 {
                units.push(
                    Unit::new(shift + i as f64 * 0.7 + (i % 2) as f64, (i % 2) as u8)
                        .with_stratum(label),
                );
            }
        }
        Sample::new(units)
    }

    #[test]
    fn auto_follows_design_and_warns_on_robust() {
        let s = Data::Units(stratified());
        let kind = DesignKind::stratified_constant(0.5, ["a", "b"]);
        let req = AnalysisRequest::new(EstimatorKind::Dim, VarianceMethod::Auto)
            .with_design(kind.clone());
        let r = analyze(&s, &req).unwrap();
        assert_eq!(r.variance_method, "sbr");
        assert!(r.warnings.is_empty());
        assert!(r.diagnostics.variance_estimates.contains_key("robust"));
        assert_eq!(r.diagnostics.imbalance["a"], 0);

        let req =
            AnalysisRequest::new(EstimatorKind::Dim, VarianceMethod::Robust).with_design(kind);
        let r = analyze(&s, &req).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("conservative"));
    }

    #[test]
    fn realized_share_warning() {
        let units: Vec<Unit> = (0..10)
            .map(|i| {
                Unit::new(i as f64 * 0.3 + (i % 3) as f64, u8::from(i < 4))
                    .with_covariates(vec![i as f64])
            })
            .collect();
        let data = Data::Units(Sample::new(units));
        let req = AnalysisRequest::new(EstimatorKind::Aipw, VarianceMethod::Auto);
        let r = analyze(&data, &req).unwrap();
        assert!(r
            .warnings
            .iter()
            .any(|w| w.contains("realized treated share")));
        assert_eq!(r.method, "aipw(demeaned-linear)");
        assert!((r.diagnostics.extra["pi"] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn cluster_estimands() {
        let clusters = ClusterSample::new(
            (0..8)
                .map(|g| Cluster {
                    id: g,
                    size: Some(if g < 4 { 2 } else { 4 }),
                    members: vec![g as f64, g as f64 + 1.0],
                    treatment: (g % 2) as u8,
                    stratum: None,
                })
                .collect(),
        );
        let data = Data::Clusters(clusters);
        for (e, want) in [
            (EstimatorKind::ClusterEq, Estimand::DeltaEq),
            (EstimatorKind::ClusterSize, Estimand::DeltaSize),
            (EstimatorKind::Dim, Estimand::Theta),
        ] {
            let r = analyze(&data, &AnalysisRequest::new(e, VarianceMethod::Auto)).unwrap();
            assert_eq!(r.estimand, want);
            assert!(r.se > 0.0);
        }
        let bad = AnalysisRequest::new(EstimatorKind::Pooled, VarianceMethod::Auto);
        assert!(matches!(analyze(&data, &bad), Err(Error::Incompatible(_))));
    }

    #[test]
    fn design_data_mismatch() {
        let req = AnalysisRequest::new(EstimatorKind::Dim, VarianceMethod::Auto)
            .with_design(DesignKind::ClusterComplete { pi: 0.5 });
        assert!(matches!(
            analyze(&four(), &req),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn report_key_set_is_fixed() {
        let r = analyze(
            &four(),
            &AnalysisRequest::new(EstimatorKind::Dim, VarianceMethod::Robust),
        )
        .unwrap();
        let v = serde_json::to_value(&r).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        let mut want = vec![
            "estimand",
            "point",
            "se",
            "ci",
            "level",
            "n",
            "method",
            "variance_method",
            "diagnostics",
            "warnings",
        ];
        want.sort();
        let mut got = keys.clone();
        got.sort();
        assert_eq!(got, want);
    }
}
