//! Data-generating processes with known conditional moments.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cluster, ClusterSample, PotentialUnit};

/// Conditional mean and standard deviation of one potential outcome at a
/// support point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conditional {
    pub mean: f64,
    pub sd: f64,
}

/// One point of a discrete covariate law. Units drawn at this point carry
/// `label` as their stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub label: String,
    #[serde(default)]
    pub x: Vec<f64>,
    pub p: f64,
    pub y0: Conditional,
    pub y1: Conditional,
}

/// m(x) = intercept + Σ linear_j x_j + Σ quadratic_j x_j², with constant
/// noise standard deviation `sd`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub intercept: f64,
    #[serde(default)]
    pub linear: Vec<f64>,
    #[serde(default)]
    pub quadratic: Vec<f64>,
    pub sd: f64,
}

impl ArmModel {
    pub fn mean_at(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(b, v)| b * v).sum();
        let quad: f64 = self.quadratic.iter().zip(x).map(|(c, v)| c * v * v).sum();
        self.intercept + lin + quad
    }
}

/// Outcome model of cluster members: Y_ig(d) = alpha + beta·N_g + u_g + e_ig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterArm {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePoint {
    pub size: usize,
    pub p: f64,
    #[serde(default)]
    pub stratum: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLaw {
    pub sizes: Vec<SizePoint>,
    /// Members sampled per cluster, capped at N_g; `None` samples everyone.
    #[serde(default)]
    pub sampled: Option<usize>,
    pub y0: ClusterArm,
    pub y1: ClusterArm,
    /// Standard deviation of the cluster effect u_g (shared by both arms).
    pub sd_cluster: f64,
    /// Standard deviation of the member noise e_ig (shared by both arms).
    pub sd_unit: f64,
}

impl ClusterLaw {
    /// |M_g| for a cluster of size `n`.
    pub fn sampled_count(&self, n: usize) -> usize {
        self.sampled.map_or(n, |m| m.min(n))
    }
}

/// A super-population law for (Y(1), Y(0), X).
///
/// Noise terms of the two potential outcomes are jointly normal with
/// correlation `noise_correlation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dgp {
    Discrete {
        support: Vec<SupportPoint>,
        #[serde(default)]
        noise_correlation: f64,
    },
    /// Independent uniform covariates on [lower_j, upper_j].
    Uniform {
        lower: Vec<f64>,
        upper: Vec<f64>,
        y0: ArmModel,
        y1: ArmModel,
        #[serde(default)]
        noise_correlation: f64,
    },
    Cluster(ClusterLaw),
}

fn check_probabilities(ps: impl Iterator<Item = f64>) -> Result<()> {
    let ps: Vec<f64> = ps.collect();
    if ps.is_empty() {
        return Err(Error::InvalidInput("empty support".into()));
    }
    if ps.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidInput(
            "negative probability in support".into(),
        ));
    }
    let total: f64 = ps.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!(
            "support probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "noise correlation {rho} is outside [-1, 1]"
        )))
    }
}

fn correlated_normals<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> (f64, f64) {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    (z1, rho * z1 + (1.0 - rho * rho).max(0.0).sqrt() * z2)
}

impl Dgp {
    pub fn validate(&self) -> Result<()> {
        match self {
            Dgp::Discrete {
                support,
                noise_correlation,
            } => {
                check_probabilities(support.iter().map(|s| s.p))?;
                check_rho(*noise_correlation)?;
                let k = support[0].x.len();
                for s in support {
                    if s.x.len() != k {
                        return Err(Error::InvalidInput(format!(
                            "support point `{}` has covariate dimension {}, expected {k}",
                            s.label,
                            s.x.len()
                        )));
                    }
                    if s.y0.sd < 0.0 || s.y1.sd < 0.0 {
                        return Err(Error::InvalidInput(format!(
                            "negative noise scale at support point `{}`",
                            s.label
                        )));
                    }
                }
                Ok(())
            }
            Dgp::Uniform {
                lower,
                upper,
                y0,
                y1,
                noise_correlation,
            } => {
                check_rho(*noise_correlation)?;
                let k = lower.len();
                if upper.len() != k {
                    return Err(Error::InvalidInput(
                        "uniform bounds differ in length".into(),
                    ));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                    return Err(Error::InvalidInput(
                        "uniform bounds need lower < upper".into(),
                    ));
                }
                for arm in [y0, y1] {
                    if arm.linear.len() > k || arm.quadratic.len() > k {
                        return Err(Error::InvalidInput(
                            "more slope coefficients than covariates".into(),
                        ));
                    }
                    if arm.sd < 0.0 {
                        return Err(Error::InvalidInput("negative noise scale".into()));
                    }
                }
                Ok(())
            }
            Dgp::Cluster(law) => {
                check_probabilities(law.sizes.iter().map(|s| s.p))?;
                if law.sizes.iter().any(|s| s.size == 0) {
                    return Err(Error::InvalidInput("cluster size 0 in support".into()));
                }
                if law.sampled == Some(0) {
                    return Err(Error::InvalidInput(
                        "clusters must sample at least one member".into(),
                    ));
                }
                if law.sd_cluster < 0.0 || law.sd_unit < 0.0 {
                    return Err(Error::InvalidInput("negative noise scale".into()));
                }
                Ok(())
            }
        }
    }

    pub fn is_cluster(&self) -> bool {
        matches!(self, Dgp::Cluster(_))
    }

    /// Covariate dimension k.
    pub fn covariate_dim(&self) -> usize {
        match self {
            Dgp::Discrete { support, .. } => support.first().map_or(0, |s| s.x.len()),
            Dgp::Uniform { lower, .. } => lower.len(),
            Dgp::Cluster(_) => 0,
        }
    }

    /// Stratum labels a stratified design on this law would use.
    pub fn stratum_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = match self {
            Dgp::Discrete { support, .. } => support.iter().map(|s| s.label.clone()).collect(),
            Dgp::Uniform { .. } => Vec::new(),
            Dgp::Cluster(law) => law.sizes.iter().filter_map(|s| s.stratum.clone()).collect(),
        };
        labels.sort();
        labels.dedup();
        labels
    }

    /// `n` i.i.d. units with both potential outcomes.
    pub fn draw_units<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<PotentialUnit>> {
        match self {
            Dgp::Discrete {
                support,
                noise_correlation,
            } => {
                let index = WeightedIndex::new(support.iter().map(|s| s.p))
                    .map_err(|e| Error::InvalidInput(format!("support probabilities: {e}")))?;
                Ok((0..n)
                    .map(|_| {
                        let s = &support[index.sample(rng)];
                        let (e1, e0) = correlated_normals(*noise_correlation, rng);
                        PotentialUnit {
                            y1: s.y1.mean + s.y1.sd * e1,
                            y0: s.y0.mean + s.y0.sd * e0,
                            covariates: s.x.clone(),
                            stratum: Some(s.label.clone()),
                        }
                    })
                    .collect())
            }
            Dgp::Uniform {
                lower,
                upper,
                y0,
                y1,
                noise_correlation,
            } => Ok((0..n)
                .map(|_| {
                    let x: Vec<f64> = lower
                        .iter()
                        .zip(upper)
                        .map(|(l, u)| l + (u - l) * rng.random::<f64>())
                        .collect();
                    let (e1, e0) = correlated_normals(*noise_correlation, rng);
                    PotentialUnit {
                        y1: y1.mean_at(&x) + y1.sd * e1,
                        y0: y0.mean_at(&x) + y0.sd * e0,
                        covariates: x,
                        stratum: None,
                    }
                })
                .collect()),
            Dgp::Cluster(_) => Err(Error::Incompatible(
                "a cluster law draws clusters, not units".into(),
            )),
        }
    }

    /// `g` i.i.d. clusters with both potential outcomes of every sampled
    /// member.
    pub fn draw_clusters<R: Rng + ?Sized>(
        &self,
        g: usize,
        rng: &mut R,
    ) -> Result<PotentialClusters> {
        let Dgp::Cluster(law) = self else {
            return Err(Error::Incompatible(
                "only a cluster law draws clusters".into(),
            ));
        };
        let index = WeightedIndex::new(law.sizes.iter().map(|s| s.p))
            .map_err(|e| Error::InvalidInput(format!("size probabilities: {e}")))?;
        let clusters = (0..g)
            .map(|id| {
                let point = &law.sizes[index.sample(rng)];
                let n = point.size as f64;
                let u: f64 = law.sd_cluster * rng.sample::<f64, _>(StandardNormal);
                let m = law.sampled_count(point.size);
                let mut y0 = Vec::with_capacity(m);
                let mut y1 = Vec::with_capacity(m);
                for _ in 0..m {
                    let e: f64 = law.sd_unit * rng.sample::<f64, _>(StandardNormal);
                    y0.push(law.y0.alpha + law.y0.beta * n + u + e);
                    y1.push(law.y1.alpha + law.y1.beta * n + u + e);
                }
                PotentialCluster {
                    id: id as i64,
                    size: point.size,
                    y0,
                    y1,
                    stratum: point.stratum.clone(),
                }
            })
            .collect();
        Ok(PotentialClusters { clusters })
    }
}

/// Sampled members of one cluster under both arms.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialCluster {
    pub id: i64,
    pub size: usize,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub stratum: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialClusters {
    pub clusters: Vec<PotentialCluster>,
}

impl PotentialClusters {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Treatment-free cluster sample (all D_g = 0), used only to run the
    /// assignment routines.
    pub fn skeleton(&self) -> ClusterSample {
        self.observe(&vec![0; self.len()])
    }

    pub fn observe(&self, d: &[u8]) -> ClusterSample {
        assert_eq!(d.len(), self.len());
        ClusterSample::new(
            self.clusters
                .iter()
                .zip(d)
                .map(|(c, &dg)| Cluster {
                    id: c.id,
                    size: Some(c.size),
                    members: if dg == 1 { c.y1.clone() } else { c.y0.clone() },
                    treatment: dg,
                    stratum: c.stratum.clone(),
                })
                .collect(),
        )
    }
}
