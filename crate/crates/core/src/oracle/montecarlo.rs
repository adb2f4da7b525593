//! Monte Carlo replication engine.
//!
//! Replicate r draws its data and its assignment from `rng::stream(seed, r)`,
//! so results are identical however replicates are scheduled across threads.
//! Summaries are reduced in replicate order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::Dgp;
use super::theory::{theoretical_variances, TheoreticalVariances};
use crate::analysis::{
    estimate, AnalysisRequest, Data, Estimate, EstimatorKind, ModelKind, VarianceMethod,
};
use crate::design::{assign_clusters, assign_sample};
use crate::error::{Error, Result};
use crate::model::{DesignKind, Estimand, PotentialPopulation, Sample, Unit};
use crate::rng;
use crate::stats::{mean, sample_variance, z_critical};

/// Smallest replication count accepted by `monte_carlo`.
pub const MIN_REPLICATIONS: usize = 100;

/// One estimator/variance pair evaluated in every replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub variance: VarianceMethod,
    #[serde(default)]
    pub model: ModelKind,
}

impl MethodSpec {
    pub fn new(estimator: EstimatorKind, variance: VarianceMethod) -> Self {
        MethodSpec {
            estimator,
            variance,
            model: ModelKind::default(),
        }
    }
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub dgp: Dgp,
    pub design: DesignKind,
    pub methods: Vec<MethodSpec>,
    /// Units per replicate, or clusters G for a cluster law.
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodReport {
    pub estimator: EstimatorKind,
    pub variance: String,
    pub estimand: Estimand,
    /// True value of the estimand under the law.
    pub target: f64,
    pub mean_point: f64,
    pub bias: f64,
    pub bias_mcse: f64,
    pub emp_var: f64,
    pub emp_var_mcse: f64,
    pub mean_var_est: f64,
    pub mean_var_est_mcse: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    /// Closed-form asymptotic variance divided by n, when one applies.
    pub theory_var: Option<f64>,
    /// Replicates in which this method failed (e.g. an empty stratum arm).
    pub failures: usize,
    /// Point estimates of the successful replicates, in replicate order.
    #[serde(skip)]
    pub points: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub design: String,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub theory: TheoreticalVariances,
    pub methods: Vec<MethodReport>,
}

/// Overall assignment probability of a design, used for theory values.
pub fn design_pi(design: &DesignKind) -> Result<f64> {
    match design {
        DesignKind::Complete { pi } | DesignKind::ClusterComplete { pi } => Ok(*pi),
        DesignKind::MatchedPairs => Ok(0.5),
        DesignKind::StratifiedBlock { pi_by_stratum }
        | DesignKind::ClusterStratifiedBlock { pi_by_stratum } => {
            let mut values = pi_by_stratum.values();
            let first = *values
                .next()
                .ok_or_else(|| Error::InvalidInput("stratified design lists no strata".into()))?;
            if values.any(|&p| (p - first).abs() > 1e-12) {
                return Err(Error::Incompatible(
                    "Monte Carlo theory values need a common π across strata".into(),
                ));
            }
            Ok(first)
        }
    }
}

/// Asymptotic variance of √n(estimator − target) for a method under a design,
/// when the closed forms cover that combination.
pub fn theory_variance(
    t: &TheoreticalVariances,
    design: &DesignKind,
    m: &MethodSpec,
) -> Option<f64> {
    use EstimatorKind as E;
    match (m.estimator, design) {
        (E::Dim, DesignKind::Complete { .. }) => Some(t.v_cr),
        (E::Dim | E::Sat, DesignKind::StratifiedBlock { .. }) => Some(t.v_sbr),
        (E::Dim, DesignKind::MatchedPairs) => Some(t.v_star),
        (E::Pooled, DesignKind::Complete { .. }) => Some(t.v_pool),
        (E::Lin, DesignKind::Complete { .. }) => Some(t.v_sat),
        (E::Aipw, DesignKind::Complete { .. }) => match m.model {
            ModelKind::DemeanedLinear => Some(t.v_sat),
            ModelKind::ArmMean => Some(t.v_cr),
            ModelKind::Zero => None,
        },
        (E::ClusterEq, DesignKind::ClusterComplete { .. }) => t.v_eq,
        (E::ClusterSize, DesignKind::ClusterComplete { .. }) => t.v_size,
        _ => None,
    }
}

fn target_of(t: &TheoreticalVariances, estimand: Estimand) -> f64 {
    match estimand {
        Estimand::Ate | Estimand::DeltaEq => t.ate,
        Estimand::DeltaSize => t.delta_size.unwrap_or(f64::NAN),
        Estimand::Theta => t.theta.unwrap_or(f64::NAN),
    }
}

/// Data and assignment of replicate `r`.
pub fn draw_replicate(scenario: &Scenario, r: u64) -> Result<Data> {
    let mut rng = rng::stream(scenario.seed, r);
    if scenario.dgp.is_cluster() {
        let pc = scenario.dgp.draw_clusters(scenario.n, &mut rng)?;
        let a = assign_clusters(&pc.skeleton(), &scenario.design, &mut rng)?;
        return Ok(Data::Clusters(pc.observe(&a.d)));
    }
    let pop = PotentialPopulation::new(scenario.dgp.draw_units(scenario.n, &mut rng)?);
    let skeleton = pop.observe(&vec![0; pop.size()]);
    let a = assign_sample(&skeleton, &scenario.design, &mut rng)?;
    let mut sample = pop.observe(&a.d);
    if let Some(pairing) = &a.pairing {
        // Pair ids follow the matching order, which keeps neighboring pairs
        // adjacent for the pairs-of-pairs variance.
        let mut units: Vec<Unit> = sample.into_units();
        for (j, &(i, k)) in pairing.iter().enumerate() {
            units[i].pair_id = Some(j as i64);
            units[k].pair_id = Some(j as i64);
        }
        sample = Sample::new(units);
    }
    Ok(Data::Units(sample))
}

fn request(scenario: &Scenario, m: &MethodSpec) -> AnalysisRequest {
    AnalysisRequest {
        estimator: m.estimator,
        variance: m.variance,
        level: scenario.level,
        design: Some(scenario.design.clone()),
        pi: None,
        model: m.model,
    }
}

fn mcse_of_mean(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return f64::NAN;
    }
    (sample_variance(values) / values.len() as f64).sqrt()
}

/// Runs `scenario` and summarizes each method.
pub fn monte_carlo(scenario: &Scenario) -> Result<ScenarioReport> {
    if scenario.replications < MIN_REPLICATIONS {
        return Err(Error::InvalidInput(format!(
            "{} replications is too few (need at least {MIN_REPLICATIONS})",
            scenario.replications
        )));
    }
    if scenario.methods.is_empty() {
        return Err(Error::InvalidInput(format!(
            "scenario `{}` lists no methods",
            scenario.name
        )));
    }
    scenario.design.check()?;
    let pi = design_pi(&scenario.design)?;
    let theory = theoretical_variances(&scenario.dgp, pi, None)?;

    // Incompatible estimator/design combinations fail on every replicate;
    // surface them once instead of counting failures.
    let probe = draw_replicate(scenario, 0)?;
    for m in &scenario.methods {
        if let Err(e @ Error::Incompatible(_)) = estimate(&probe, &request(scenario, m)) {
            return Err(e);
        }
    }

    let results: Vec<Vec<Option<Estimate>>> = (0..scenario.replications as u64)
        .into_par_iter()
        .map(|r| match draw_replicate(scenario, r) {
            Ok(data) => scenario
                .methods
                .iter()
                .map(|m| estimate(&data, &request(scenario, m)).ok())
                .collect(),
            Err(_) => vec![None; scenario.methods.len()],
        })
        .collect();

    let z = z_critical(scenario.level);
    let methods = scenario
        .methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let ok: Vec<&Estimate> = results.iter().filter_map(|row| row[k].as_ref()).collect();
            let failures = results.len() - ok.len();
            if ok.len() < 2 {
                return Err(Error::TooFew(format!(
                    "method {} failed in {failures} of {} replicates",
                    m.estimator,
                    results.len()
                )));
            }
            let estimand = ok[0].estimand;
            let target = target_of(&theory, estimand);
            let points: Vec<f64> = ok.iter().map(|e| e.point).collect();
            let errors: Vec<f64> = points.iter().map(|p| p - target).collect();
            let center = mean(&points);
            let sq_dev: Vec<f64> = points.iter().map(|p| (p - center).powi(2)).collect();
            let vars: Vec<f64> = ok.iter().map(|e| e.variance).collect();
            let covered: Vec<f64> = ok
                .iter()
                .map(|e| f64::from(u8::from((e.point - target).abs() <= z * e.variance.sqrt())))
                .collect();
            let coverage = mean(&covered);
            let r = ok.len() as f64;
            Ok(MethodReport {
                estimator: m.estimator,
                variance: ok[0].variance_method.clone(),
                estimand,
                target,
                mean_point: center,
                bias: mean(&errors),
                bias_mcse: mcse_of_mean(&errors),
                emp_var: sample_variance(&points),
                emp_var_mcse: mcse_of_mean(&sq_dev),
                mean_var_est: mean(&vars),
                mean_var_est_mcse: mcse_of_mean(&vars),
                coverage,
                coverage_mcse: (coverage * (1.0 - coverage) / r).sqrt(),
                theory_var: theory_variance(&theory, &scenario.design, m)
                    .map(|v| v / scenario.n as f64),
                failures,
                points,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ScenarioReport {
        name: scenario.name.clone(),
        design: scenario.design.name().to_string(),
        n: scenario.n,
        replications: scenario.replications,
        seed: scenario.seed,
        theory,
        methods,
    })
}

/// Difference of the empirical variances of two estimators computed on the
/// same replicates, with its Monte Carlo standard error.
pub fn paired_variance_difference(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidInput(
            "paired comparison needs two equally long series of at least 2 replicates".into(),
        ));
    }
    let (ma, mb) = (mean(a), mean(b));
    let z: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma).powi(2) - (y - mb).powi(2))
        .collect();
    let r = a.len() as f64;
    Ok((mean(&z) * r / (r - 1.0), mcse_of_mean(&z)))
}
