//! Closed-form asymptotic variances of √n(estimator − Δ) for a known law.
//!
//! All quantities are exact: discrete laws are summed over their support,
//! and uniform laws with polynomial conditional means use the analytic
//! moments E[X^k] = (u^{k+1} − l^{k+1}) / ((k + 1)(u − l)).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::dgp::{ArmModel, ClusterLaw, Dgp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoreticalVariances {
    /// Δ = E[Y(1) − Y(0)]; for a cluster law, the equally weighted Δ^eq.
    pub ate: f64,
    pub v_cr: f64,
    pub v_sbr: f64,
    pub v_pool: f64,
    pub v_sat: f64,
    /// Efficiency bound E[σ²_1(X)]/π + E[σ²_0(X)]/(1 − π) + Var[τ(X)].
    pub v_star: f64,
    pub v_eq: Option<f64>,
    pub v_size: Option<f64>,
    pub delta_size: Option<f64>,
    /// E[|M_g| τ_g] / E[|M_g|], the target of the individual-level
    /// difference in means on clustered data.
    pub theta: Option<f64>,
    /// Pooled-regression slope π γ(1) + (1 − π) γ(0).
    pub gamma: Vec<f64>,
    /// [γ(0), γ(1)]: population slopes of Y(d) on (1, X).
    pub gamma_arm: [Vec<f64>; 2],
    pub sigma_x: Vec<Vec<f64>>,
}

/// Second-order summary of a law, enough for every variance formula.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    /// E[Y(0)], E[Y(1)].
    pub mean: [f64; 2],
    /// Var Y(0), Var Y(1); `cov01` = Cov(Y(0), Y(1)).
    pub var: [f64; 2],
    pub cov01: f64,
    /// E[σ²_d(X)].
    pub noise: [f64; 2],
    /// Var[m_1(X) − m_0(X)].
    pub var_tau: f64,
    pub sigma_x: DMatrix<f64>,
    /// Cov(X, Y(d)) for d = 0, 1.
    pub cov_xy: [DVector<f64>; 2],
    /// Per-label (share, means, variances) for stratification; `None` when
    /// strata are the covariate itself at its finest (continuous X).
    pub strata: Option<Vec<StratumMoments>>,
}

#[derive(Debug, Clone)]
pub(crate) struct StratumMoments {
    pub label: String,
    pub p: f64,
    pub mean: [f64; 2],
    pub var: [f64; 2],
}

fn discrete_moments(dgp: &Dgp) -> Moments {
    let Dgp::Discrete {
        support,
        noise_correlation: rho,
    } = dgp
    else {
        unreachable!()
    };
    let k = support[0].x.len();
    let e = |f: &dyn Fn(usize) -> f64| -> f64 {
        support.iter().enumerate().map(|(i, s)| s.p * f(i)).sum()
    };
    let m = |i: usize, d: usize| {
        if d == 1 {
            support[i].y1.mean
        } else {
            support[i].y0.mean
        }
    };
    let sd = |i: usize, d: usize| {
        if d == 1 {
            support[i].y1.sd
        } else {
            support[i].y0.sd
        }
    };

    let mean = [e(&|i| m(i, 0)), e(&|i| m(i, 1))];
    let noise = [e(&|i| sd(i, 0).powi(2)), e(&|i| sd(i, 1).powi(2))];
    let var = [
        e(&|i| (m(i, 0) - mean[0]).powi(2)) + noise[0],
        e(&|i| (m(i, 1) - mean[1]).powi(2)) + noise[1],
    ];
    let cov01 = e(&|i| (m(i, 0) - mean[0]) * (m(i, 1) - mean[1]) + rho * sd(i, 0) * sd(i, 1));
    let ate = mean[1] - mean[0];
    let var_tau = e(&|i| (m(i, 1) - m(i, 0) - ate).powi(2));

    let mean_x: Vec<f64> = (0..k).map(|j| e(&|i| support[i].x[j])).collect();
    let sigma_x = DMatrix::from_fn(k, k, |a, b| {
        e(&|i| (support[i].x[a] - mean_x[a]) * (support[i].x[b] - mean_x[b]))
    });
    let cov_xy = [0, 1].map(|d| {
        DVector::from_fn(k, |j, _| {
            e(&|i| (support[i].x[j] - mean_x[j]) * (m(i, d) - mean[d]))
        })
    });

    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in support.iter().enumerate() {
        by_label.entry(&s.label).or_default().push(i);
    }
    let strata = by_label
        .into_iter()
        .map(|(label, idx)| {
            let p: f64 = idx.iter().map(|&i| support[i].p).sum();
            let cond = |f: &dyn Fn(usize) -> f64| {
                idx.iter().map(|&i| support[i].p * f(i)).sum::<f64>() / p
            };
            let mean = [cond(&|i| m(i, 0)), cond(&|i| m(i, 1))];
            let var = [0, 1].map(|d| cond(&|i| (m(i, d) - mean[d]).powi(2) + sd(i, d).powi(2)));
            StratumMoments {
                label: label.to_string(),
                p,
                mean,
                var,
            }
        })
        .collect();

    Moments {
        mean,
        var,
        cov01,
        noise,
        var_tau,
        sigma_x,
        cov_xy,
        strata: Some(strata),
    }
}

/// Raw moments E[X^0..=4] of U[l, u].
fn uniform_raw_moments(l: f64, u: f64) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (k, slot) in out.iter_mut().enumerate() {
        let p = k as i32 + 1;
        *slot = (u.powi(p) - l.powi(p)) / (p as f64 * (u - l));
    }
    out
}

/// Coefficients (b, c) of the coordinate-j part b·x + c·x² of an arm model.
fn coord(arm: &ArmModel, j: usize) -> (f64, f64) {
    (
        arm.linear.get(j).copied().unwrap_or(0.0),
        arm.quadratic.get(j).copied().unwrap_or(0.0),
    )
}

/// Cov(b1 x + c1 x², b2 x + c2 x²) for x with raw moments `mu`.
fn quad_cov(mu: &[f64; 5], (b1, c1): (f64, f64), (b2, c2): (f64, f64)) -> f64 {
    let e_fg = b1 * b2 * mu[2] + (b1 * c2 + c1 * b2) * mu[3] + c1 * c2 * mu[4];
    let e_f = b1 * mu[1] + c1 * mu[2];
    let e_g = b2 * mu[1] + c2 * mu[2];
    e_fg - e_f * e_g
}

fn uniform_moments(dgp: &Dgp) -> Moments {
    let Dgp::Uniform {
        lower,
        upper,
        y0,
        y1,
        noise_correlation: rho,
    } = dgp
    else {
        unreachable!()
    };
    let k = lower.len();
    let mu: Vec<[f64; 5]> = lower
        .iter()
        .zip(upper)
        .map(|(&l, &u)| uniform_raw_moments(l, u))
        .collect();
    let arms = [y0, y1];
    let mean = arms.map(|a| {
        a.intercept
            + (0..k)
                .map(|j| {
                    let (b, c) = coord(a, j);
                    b * mu[j][1] + c * mu[j][2]
                })
                .sum::<f64>()
    });
    // Coordinates are independent, so covariances of the conditional means
    // add up across coordinates.
    let cov_m = |a: &ArmModel, b: &ArmModel| -> f64 {
        (0..k)
            .map(|j| quad_cov(&mu[j], coord(a, j), coord(b, j)))
            .sum()
    };
    let noise = arms.map(|a| a.sd * a.sd);
    let var = [cov_m(y0, y0) + noise[0], cov_m(y1, y1) + noise[1]];
    let cov01 = cov_m(y0, y1) + rho * y0.sd * y1.sd;
    let var_tau = cov_m(y1, y1) + cov_m(y0, y0) - 2.0 * cov_m(y0, y1);
    let sigma_x = DMatrix::from_fn(k, k, |a, b| {
        if a == b {
            mu[a][2] - mu[a][1].powi(2)
        } else {
            0.0
        }
    });
    let cov_xy =
        arms.map(|a| DVector::from_fn(k, |j, _| quad_cov(&mu[j], (1.0, 0.0), coord(a, j))));
    Moments {
        mean,
        var,
        cov01,
        noise,
        var_tau,
        sigma_x,
        cov_xy,
        strata: None,
    }
}

/// A cluster law seen at the cluster level: support points are the sizes,
/// Ȳ_g(d) has mean α_d + β_d N and variance σ²_u + σ²_e/|M|, and the two
/// arms share their noise.
fn cluster_as_discrete(law: &ClusterLaw) -> Dgp {
    use super::dgp::{Conditional, SupportPoint};
    let support = law
        .sizes
        .iter()
        .map(|s| {
            let n = s.size as f64;
            let sd = (law.sd_cluster.powi(2)
                + law.sd_unit.powi(2) / law.sampled_count(s.size) as f64)
                .sqrt();
            SupportPoint {
                label: s.stratum.clone().unwrap_or_else(|| "all".into()),
                x: Vec::new(),
                p: s.p,
                y0: Conditional {
                    mean: law.y0.alpha + law.y0.beta * n,
                    sd,
                },
                y1: Conditional {
                    mean: law.y1.alpha + law.y1.beta * n,
                    sd,
                },
            }
        })
        .collect();
    Dgp::Discrete {
        support,
        noise_correlation: 1.0,
    }
}

pub(crate) fn moments(dgp: &Dgp) -> Result<Moments> {
    dgp.validate()?;
    Ok(match dgp {
        Dgp::Discrete { .. } => discrete_moments(dgp),
        Dgp::Uniform { .. } => uniform_moments(dgp),
        Dgp::Cluster(law) => discrete_moments(&cluster_as_discrete(law)),
    })
}

/// Σ_X⁺ Cov(X, Y(d)); the pseudo-inverse keeps γ'Σγ well defined when a
/// covariate is degenerate.
fn slopes(m: &Moments) -> Result<[DVector<f64>; 2]> {
    let k = m.sigma_x.nrows();
    if k == 0 {
        return Ok([DVector::zeros(0), DVector::zeros(0)]);
    }
    let inv = m
        .sigma_x
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidInput(format!("covariate covariance: {e}")))?;
    Ok([&inv * &m.cov_xy[0], &inv * &m.cov_xy[1]])
}

fn size_weighted(law: &ClusterLaw, pi: f64) -> (f64, f64, f64, f64) {
    let e = |f: &dyn Fn(f64, f64) -> f64| -> f64 {
        law.sizes
            .iter()
            .map(|s| s.p * f(s.size as f64, law.sampled_count(s.size) as f64))
            .sum()
    };
    let en = e(&|n, _| n);
    let em = e(&|_, m| m);
    let tau = |n: f64| law.y1.alpha - law.y0.alpha + (law.y1.beta - law.y0.beta) * n;
    let delta_size = e(&|n, _| n * tau(n)) / en;
    let theta = e(&|n, m| m * tau(n)) / em;
    let arms = [law.y0, law.y1];
    let c = arms.map(|a| e(&|n, _| n * (a.alpha + a.beta * n)) / en);
    let spread = [0, 1].map(|d| {
        let a = arms[d];
        e(&|n, m| {
            n * n
                * ((a.alpha + a.beta * n - c[d]).powi(2)
                    + law.sd_cluster.powi(2)
                    + law.sd_unit.powi(2) / m)
        })
    });
    let v_size = (spread[1] / pi + spread[0] / (1.0 - pi)) / (en * en);
    (v_size, delta_size, theta, en)
}

/// Asymptotic variances for `dgp` under assignment probability `pi`.
///
/// V^sbr stratifies on the support labels at `pi_by_stratum` (constant `pi`
/// when `None`). For a uniform law there are no labels and V^sbr is the
/// finely stratified limit, which equals V*. For a cluster law the unit-level
/// fields treat cluster means as units with no covariates, so V^cr = V^eq.
pub fn theoretical_variances(
    dgp: &Dgp,
    pi: f64,
    pi_by_stratum: Option<&BTreeMap<String, f64>>,
) -> Result<TheoreticalVariances> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::InvalidInput(format!(
            "π = {pi} is not inside (0, 1)"
        )));
    }
    let m = moments(dgp)?;
    let q = 1.0 - pi;
    let ate = m.mean[1] - m.mean[0];
    let v_cr = m.var[1] / pi + m.var[0] / q;
    let v_star = m.noise[1] / pi + m.noise[0] / q + m.var_tau;

    let v_sbr = match &m.strata {
        None => v_star,
        Some(strata) => {
            let mut total = 0.0;
            for s in strata {
                let p_x = match pi_by_stratum {
                    Some(map) => *map.get(&s.label).ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "no assignment probability for stratum `{}`",
                            s.label
                        ))
                    })?,
                    None => pi,
                };
                let tau_x = s.mean[1] - s.mean[0];
                total += s.p * (s.var[1] / p_x + s.var[0] / (1.0 - p_x) + (tau_x - ate).powi(2));
            }
            total
        }
    };

    let [g0, g1] = slopes(&m)?;
    let gamma = &g1 * pi + &g0 * q;
    let sig = &m.sigma_x;
    let quad = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * sig * b)[(0, 0)];
    let (v_pool, v_sat) = if sig.nrows() == 0 {
        (v_cr, v_cr)
    } else {
        let v_pool = v_cr - quad(&gamma, &gamma) / (pi * q)
            + 2.0 * (2.0 * pi - 1.0) / (pi * q) * quad(&gamma, &(&g1 - &g0));
        let h = &g1 / pi + &g0 / q;
        (v_pool, v_cr - pi * q * quad(&h, &h))
    };

    let (v_eq, v_size, delta_size, theta) = match dgp {
        Dgp::Cluster(law) => {
            let (v_size, delta_size, theta, _) = size_weighted(law, pi);
            (Some(v_cr), Some(v_size), Some(delta_size), Some(theta))
        }
        _ => (None, None, None, None),
    };

    let to_vec = |v: &DVector<f64>| v.iter().copied().collect::<Vec<f64>>();
    Ok(TheoreticalVariances {
        ate,
        v_cr,
        v_sbr,
        v_pool,
        v_sat,
        v_star,
        v_eq,
        v_size,
        delta_size,
        theta,
        gamma: to_vec(&gamma),
        gamma_arm: [to_vec(&g0), to_vec(&g1)],
        sigma_x: (0..sig.nrows())
            .map(|i| sig.row(i).iter().copied().collect())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::dgp::{ClusterArm, Conditional, SizePoint, SupportPoint};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    fn point(label: &str, x: Vec<f64>, p: f64, m0: f64, s0: f64, m1: f64, s1: f64) -> SupportPoint {
        SupportPoint {
            label: label.into(),
            x,
            p,
            y0: Conditional { mean: m0, sd: s0 },
            y1: Conditional { mean: m1, sd: s1 },
        }
    }

    /// Variance of the influence function of an adjusted estimator with a
    /// fixed linear working model μ_d(x) = E[Y(d)] + (x − E[X])'b_d, summed
    /// directly over the support:
    /// Var[Y(1) − Y(0)] + π(1 − π) E[(a/π + b/(1 − π))²].
    fn influence_variance(support: &[SupportPoint], rho: f64, pi: f64, b: [&[f64]; 2]) -> f64 {
        let q = 1.0 - pi;
        let e = |f: &dyn Fn(&SupportPoint) -> f64| support.iter().map(|s| s.p * f(s)).sum::<f64>();
        let k = support[0].x.len();
        let mx: Vec<f64> = (0..k).map(|j| e(&|s| s.x[j])).collect();
        let my = [e(&|s| s.y0.mean), e(&|s| s.y1.mean)];
        let lin = |s: &SupportPoint, d: usize| -> f64 {
            (0..k).map(|j| (s.x[j] - mx[j]) * b[d][j]).sum()
        };
        let ate = my[1] - my[0];
        let var_diff = e(&|s| {
            (s.y1.mean - s.y0.mean - ate).powi(2) + s.y1.sd.powi(2) + s.y0.sd.powi(2)
                - 2.0 * rho * s.y1.sd * s.y0.sd
        });
        let second = e(&|s| {
            let a = s.y1.mean - my[1] - lin(s, 1);
            let bb = s.y0.mean - my[0] - lin(s, 0);
            (a / pi + bb / q).powi(2)
                + s.y1.sd.powi(2) / (pi * pi)
                + s.y0.sd.powi(2) / (q * q)
                + 2.0 * rho * s.y1.sd * s.y0.sd / (pi * q)
        });
        var_diff + pi * q * second
    }

    fn three_point(rho: f64) -> (Vec<SupportPoint>, Dgp) {
        let support = vec![
            point("a", vec![-1.0, 0.5], 0.3, 0.0, 1.0, 2.0, 1.5),
            point("b", vec![0.0, 2.0], 0.5, 1.0, 0.5, 0.5, 1.0),
            point("c", vec![2.0, -1.0], 0.2, 3.0, 2.0, 7.0, 0.7),
        ];
        let dgp = Dgp::Discrete {
            support: support.clone(),
            noise_correlation: rho,
        };
        (support, dgp)
    }

    #[test]
    fn matches_influence_route() {
        for (pi, rho) in [(0.5, 0.0), (0.3, 0.4), (0.8, -0.6)] {
            let (support, dgp) = three_point(rho);
            let t = theoretical_variances(&dgp, pi, None).unwrap();
            let zero = [0.0, 0.0];
            assert!(close(
                t.v_cr,
                influence_variance(&support, rho, pi, [&zero, &zero]),
                1e-12
            ));
            assert!(close(
                t.v_pool,
                influence_variance(&support, rho, pi, [&t.gamma, &t.gamma]),
                1e-10
            ));
            assert!(close(
                t.v_sat,
                influence_variance(&support, rho, pi, [&t.gamma_arm[0], &t.gamma_arm[1]]),
                1e-10
            ));
        }
    }

    #[test]
    fn fully_stratified_sbr_is_efficient() {
        let (_, dgp) = three_point(0.2);
        let t = theoretical_variances(&dgp, 0.4, None).unwrap();
        assert!(close(t.v_sbr, t.v_star, 1e-12));
    }

    #[test]
    fn irrelevant_covariate() {
        let dgp = Dgp::Discrete {
            support: vec![
                point("a", vec![0.0], 0.5, 1.0, 1.0, 2.0, 1.0),
                point("b", vec![1.0], 0.5, 1.0, 1.0, 2.0, 1.0),
            ],
            noise_correlation: 0.0,
        };
        let t = theoretical_variances(&dgp, 0.3, None).unwrap();
        assert!(close(t.v_sbr, t.v_cr, 1e-12));
        assert!(close(t.v_pool, t.v_cr, 1e-12));
    }

    #[test]
    fn pool_equals_sat_at_half_or_equal_slopes() {
        let (_, dgp) = three_point(0.0);
        let t = theoretical_variances(&dgp, 0.5, None).unwrap();
        assert!(close(t.v_pool, t.v_sat, 1e-12));

        // Constant effect → γ(1) = γ(0) at any π.
        let dgp = Dgp::Uniform {
            lower: vec![0.0],
            upper: vec![2.0],
            y0: ArmModel {
                intercept: 0.0,
                linear: vec![1.5],
                quadratic: vec![0.5],
                sd: 1.0,
            },
            y1: ArmModel {
                intercept: 1.0,
                linear: vec![1.5],
                quadratic: vec![0.5],
                sd: 1.0,
            },
            noise_correlation: 0.0,
        };
        let t = theoretical_variances(&dgp, 0.8, None).unwrap();
        assert!(close(t.gamma_arm[0][0], t.gamma_arm[1][0], 1e-12));
        assert!(close(t.v_pool, t.v_sat, 1e-12));
    }

    #[test]
    fn pooled_worse_than_dim_with_opposite_slopes() {
        let s3 = 3f64.sqrt();
        let dgp = Dgp::Uniform {
            lower: vec![-s3],
            upper: vec![s3],
            y0: ArmModel {
                intercept: 0.0,
                linear: vec![-1.0],
                quadratic: vec![],
                sd: 1.0,
            },
            y1: ArmModel {
                intercept: 0.0,
                linear: vec![1.0],
                quadratic: vec![],
                sd: 1.0,
            },
            noise_correlation: 0.0,
        };
        let t = theoretical_variances(&dgp, 0.8, None).unwrap();
        // Var X = 1: V^cr = 2/0.8 + 2/0.2, γ = 0.6, γ(1) − γ(0) = 2.
        assert!(close(t.v_cr, 12.5, 1e-12));
        assert!(close(
            t.v_pool,
            12.5 - 0.36 / 0.16 + 2.0 * 0.6 / 0.16 * 0.6 * 2.0,
            1e-12
        ));
        assert!(close(
            t.v_sat,
            12.5 - 0.16 * (1.0 / 0.8 - 1.0 / 0.2f64).powi(2),
            1e-12
        ));
        assert!(t.v_pool > t.v_cr && t.v_sat < t.v_cr);
    }

    #[test]
    fn uniform_moments_against_quadrature() {
        // Quadratic means make Var m_d depend on E[X^4]; a midpoint rule with
        // many nodes on [l, u] checks the analytic moments.
        let (l, u) = (-0.5, 1.5);
        let arm = ArmModel {
            intercept: 0.2,
            linear: vec![1.0],
            quadratic: vec![-2.0],
            sd: 0.0,
        };
        let nodes = 200_000;
        let xs: Vec<f64> = (0..nodes)
            .map(|i| l + (u - l) * (i as f64 + 0.5) / nodes as f64)
            .collect();
        let m: Vec<f64> = xs.iter().map(|&x| arm.mean_at(&[x])).collect();
        let mm = m.iter().sum::<f64>() / nodes as f64;
        let var = m.iter().map(|v| (v - mm).powi(2)).sum::<f64>() / nodes as f64;
        let dgp = Dgp::Uniform {
            lower: vec![l],
            upper: vec![u],
            y0: arm.clone(),
            y1: arm,
            noise_correlation: 0.0,
        };
        let mo = moments(&dgp).unwrap();
        assert!(close(mo.mean[0], mm, 1e-9));
        assert!(close(mo.var[0], var, 1e-8));
    }

    #[test]
    fn cluster_law_values() {
        let law = ClusterLaw {
            sizes: vec![
                SizePoint {
                    size: 1,
                    p: 0.5,
                    stratum: None,
                },
                SizePoint {
                    size: 9,
                    p: 0.5,
                    stratum: None,
                },
            ],
            sampled: Some(1),
            y0: ClusterArm {
                alpha: 0.0,
                beta: 0.0,
            },
            y1: ClusterArm {
                alpha: 0.0,
                beta: 1.0,
            },
            sd_cluster: 1.0,
            sd_unit: 1.0,
        };
        let t = theoretical_variances(&Dgp::Cluster(law), 0.5, None).unwrap();
        assert!(close(t.ate, 5.0, 1e-12));
        assert!(close(t.delta_size.unwrap(), 8.2, 1e-12));
        assert!(close(t.theta.unwrap(), 5.0, 1e-12));
        // Var Ȳ(1) = Var N + 2 = 18, Var Ȳ(0) = 2.
        assert!(close(t.v_eq.unwrap(), 18.0 / 0.5 + 2.0 / 0.5, 1e-12));
        // c_1 = 8.2, c_0 = 0; E[N²((N − 8.2)² + 2)] = 0.5(1·(51.84 + 2) + 81·(0.64 + 2)).
        let s1 = 0.5 * (53.84 + 81.0 * 2.64);
        let s0 = 0.5 * (2.0 + 81.0 * 2.0);
        assert!(close(
            t.v_size.unwrap(),
            (s1 / 0.5 + s0 / 0.5) / 25.0,
            1e-12
        ));
    }

    fn arb_discrete() -> impl Strategy<Value = Dgp> {
        (
            proptest::collection::vec(
                (
                    0.05f64..1.0,
                    -3.0f64..3.0,
                    -3.0f64..3.0,
                    0.0f64..2.0,
                    0.0f64..2.0,
                    -2.0f64..2.0,
                ),
                2..6,
            ),
            -1.0f64..1.0,
            1usize..3,
        )
            .prop_map(|(points, rho, labels)| {
                let total: f64 = points.iter().map(|p| p.0).sum();
                let support = points
                    .iter()
                    .enumerate()
                    .map(|(i, &(w, m0, m1, s0, s1, x))| {
                        let label = format!("s{}", i % labels.max(1).min(points.len()));
                        point(&label, vec![x], w / total, m0, s0, m1, s1)
                    })
                    .collect();
                Dgp::Discrete {
                    support,
                    noise_correlation: rho,
                }
            })
    }

    proptest! {
        #[test]
        fn ordering_invariants(dgp in arb_discrete(), pi in 0.1f64..0.9) {
            let t = theoretical_variances(&dgp, pi, None).unwrap();
            let eps = 1e-9 * t.v_cr.abs().max(1.0);
            prop_assert!(t.v_star <= t.v_sbr + eps);
            prop_assert!(t.v_sbr <= t.v_cr + eps);
            prop_assert!(t.v_sat <= t.v_cr + eps);
        }
    }
}
