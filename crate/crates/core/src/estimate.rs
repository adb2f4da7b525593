//! Point estimators of the average treatment effect and of the cluster-level
//! effects.

use crate::error::{Error, Result};
use crate::lsq::{least_squares, Regressors};
use crate::model::{ClusterSample, Sample};
use crate::stats::{mean, sum};

pub(crate) fn require_arms(sample: &Sample, what: &str) -> Result<()> {
    if sample.n_treated() == 0 {
        return Err(Error::EmptyArm(format!("{what}: no treated unit")));
    }
    if sample.n_control() == 0 {
        return Err(Error::EmptyArm(format!("{what}: no control unit")));
    }
    Ok(())
}

pub(crate) fn require_covariates(sample: &Sample, what: &str) -> Result<usize> {
    let k = sample.covariate_dim();
    if k == 0 {
        return Err(Error::Incompatible(format!(
            "{what} needs at least one covariate column"
        )));
    }
    Ok(k)
}

/// Mean outcome among treated minus mean outcome among controls.
pub fn diff_in_means(sample: &Sample) -> Result<f64> {
    require_arms(sample, "difference in means")?;
    Ok(mean(&sample.arm(1)) - mean(&sample.arm(0)))
}

/// Stratum-specific differences in means weighted by stratum shares n(x)/n.
pub fn saturated_estimate(sample: &Sample) -> Result<f64> {
    let parts = stratum_effects(sample)?;
    let n = sample.len() as f64;
    Ok(sum(&parts
        .iter()
        .map(|p| p.n as f64 / n * p.effect)
        .collect::<Vec<_>>()))
}

/// Per-stratum summary used by the saturated estimator and its variances.
#[derive(Debug, Clone)]
pub(crate) struct StratumEffect {
    pub label: String,
    pub n: usize,
    pub effect: f64,
    pub treated: Vec<f64>,
    pub control: Vec<f64>,
}

pub(crate) fn stratum_effects(sample: &Sample) -> Result<Vec<StratumEffect>> {
    let strata = sample.strata()?;
    strata
        .into_iter()
        .map(|(label, idx)| {
            let sub = sample.subset(&idx);
            let treated = sub.arm(1);
            let control = sub.arm(0);
            if treated.is_empty() || control.is_empty() {
                return Err(Error::EmptyArm(format!(
                    "stratum `{label}` has {} treated and {} control units",
                    treated.len(),
                    control.len()
                )));
            }
            Ok(StratumEffect {
                n: idx.len(),
                effect: mean(&treated) - mean(&control),
                label,
                treated,
                control,
            })
        })
        .collect()
}

fn covariate_column(sample: &Sample, j: usize) -> Vec<f64> {
    sample.units().iter().map(|u| u.covariates[j]).collect()
}

fn treatment_column(sample: &Sample) -> Vec<f64> {
    sample
        .units()
        .iter()
        .map(|u| f64::from(u.treatment))
        .collect()
}

pub(crate) fn covariate_means(sample: &Sample) -> Vec<f64> {
    (0..sample.covariate_dim())
        .map(|j| mean(&covariate_column(sample, j)))
        .collect()
}

/// Regressors (1, D, X) for the pooled adjustment.
pub(crate) fn pooled_regressors(sample: &Sample) -> Regressors {
    let mut r = Regressors::with_constant(sample.len());
    r.push("D", treatment_column(sample));
    for j in 0..sample.covariate_dim() {
        r.push(format!("x{}", j + 1), covariate_column(sample, j));
    }
    r
}

/// Coefficient on D from regressing Y on (1, D, X).
pub fn pooled_adjusted(sample: &Sample) -> Result<f64> {
    require_covariates(sample, "pooled regression adjustment")?;
    require_arms(sample, "pooled regression adjustment")?;
    let fit = least_squares(&sample.outcomes(), &pooled_regressors(sample), None)?;
    Ok(fit.coefficients[1])
}

/// Regressors (1, D, X, D·(X − X̄)) for the interacted adjustment, with X̄ the
/// full-sample covariate mean.
pub(crate) fn interacted_regressors(sample: &Sample) -> Regressors {
    let mut r = pooled_regressors(sample);
    let d = treatment_column(sample);
    for (j, xbar) in covariate_means(sample).into_iter().enumerate() {
        let col = covariate_column(sample, j)
            .iter()
            .zip(&d)
            .map(|(x, di)| di * (x - xbar))
            .collect();
        r.push(format!("D:x{}", j + 1), col);
    }
    r
}

/// Coefficient on D from regressing Y on (1, D, X, D·(X − X̄)).
pub fn lin_interacted(sample: &Sample) -> Result<f64> {
    require_covariates(sample, "interacted regression adjustment")?;
    require_arms(sample, "interacted regression adjustment")?;
    let fit = least_squares(&sample.outcomes(), &interacted_regressors(sample), None)?;
    Ok(fit.coefficients[1])
}

/// Fitted conditional-mean function for one arm.
pub type Predictor = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A working model for E[Y(d) | X]. The doubly robust estimator is
/// consistent whatever the model, so these only affect precision.
pub trait WorkingModel: Send + Sync {
    fn name(&self) -> &str;

    /// Fits the arm-`arm` predictor. `sample` is the full sample so models may
    /// use full-sample quantities such as the covariate mean.
    fn fit(&self, sample: &Sample, arm: u8) -> Result<Predictor>;
}

/// μ̂_d ≡ 0, giving the Horvitz–Thompson estimator.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroModel;

impl WorkingModel for ZeroModel {
    fn name(&self) -> &str {
        "zero"
    }

    fn fit(&self, _sample: &Sample, _arm: u8) -> Result<Predictor> {
        Ok(Box::new(|_| 0.0))
    }
}

/// μ̂_d ≡ arm mean of Y.
#[derive(Debug, Clone, Copy, Default)]
pub struct ArmMeanModel;

impl WorkingModel for ArmMeanModel {
    fn name(&self) -> &str {
        "arm-mean"
    }

    fn fit(&self, sample: &Sample, arm: u8) -> Result<Predictor> {
        let ys = sample.arm(arm);
        if ys.is_empty() {
            return Err(Error::EmptyArm(format!("arm {arm} is empty")));
        }
        let m = mean(&ys);
        Ok(Box::new(move |_| m))
    }
}

/// μ̂_d(x) = (x − X̄)'γ̂(d), where γ̂(d) is the slope from regressing Y on
/// (1, X) within arm d and X̄ is the full-sample covariate mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct DemeanedLinearModel;

impl WorkingModel for DemeanedLinearModel {
    fn name(&self) -> &str {
        "demeaned-linear"
    }

    fn fit(&self, sample: &Sample, arm: u8) -> Result<Predictor> {
        let k = require_covariates(sample, "the demeaned linear working model")?;
        let xbar = covariate_means(sample);
        let idx: Vec<usize> = (0..sample.len())
            .filter(|&i| sample.units()[i].treatment == arm)
            .collect();
        let sub = sample.subset(&idx);
        let mut r = Regressors::with_constant(sub.len());
        for j in 0..k {
            r.push(format!("x{}", j + 1), covariate_column(&sub, j));
        }
        let fit = least_squares(&sub.outcomes(), &r, None)?;
        let slopes = fit.coefficients[1..].to_vec();
        Ok(Box::new(move |x: &[f64]| {
            x.iter()
                .zip(&xbar)
                .zip(&slopes)
                .map(|((xi, m), g)| (xi - m) * g)
                .sum()
        }))
    }
}

/// Fitted values μ̂_1(X_i), μ̂_0(X_i) at every unit.
pub(crate) fn fitted_arms(
    sample: &Sample,
    model: &dyn WorkingModel,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m1 = model.fit(sample, 1)?;
    let m0 = model.fit(sample, 0)?;
    let units = sample.units();
    Ok((
        units.iter().map(|u| m1(&u.covariates)).collect(),
        units.iter().map(|u| m0(&u.covariates)).collect(),
    ))
}

/// Augmented inverse-propensity weighted estimator with the design π:
/// (1/n) Σ [D(Y − μ̂_1)/π − (1 − D)(Y − μ̂_0)/(1 − π) + μ̂_1 − μ̂_0].
pub fn aipw(sample: &Sample, pi: f64, model: &dyn WorkingModel) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::InvalidInput(format!(
            "π = {pi} is not inside (0, 1)"
        )));
    }
    require_arms(sample, "AIPW")?;
    let (mu1, mu0) = fitted_arms(sample, model)?;
    let terms: Vec<f64> = sample
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let ipw = if u.is_treated() {
                (u.outcome - mu1[i]) / pi
            } else {
                -(u.outcome - mu0[i]) / (1.0 - pi)
            };
            ipw + mu1[i] - mu0[i]
        })
        .collect();
    Ok(mean(&terms))
}

/// Warning text when the supplied π differs from the realized treated share
/// by more than 1/n; `None` otherwise.
pub fn pi_mismatch_warning(sample: &Sample, pi: f64) -> Option<String> {
    let n = sample.len() as f64;
    let share = sample.n_treated() as f64 / n;
    ((share - pi).abs() > 1.0 / n).then(|| {
        format!("assignment probability {pi} differs from the realized treated share {share:.6} by more than 1/n")
    })
}

fn require_cluster_arms(clusters: &ClusterSample) -> Result<()> {
    let g1 = clusters.n_treated();
    if g1 == 0 {
        return Err(Error::EmptyArm("no treated cluster".into()));
    }
    if g1 == clusters.len() {
        return Err(Error::EmptyArm("no control cluster".into()));
    }
    Ok(())
}

/// Difference in means of the cluster averages Ȳ_g: targets the equally
/// weighted cluster effect.
pub fn cluster_eq(clusters: &ClusterSample) -> Result<f64> {
    require_cluster_arms(clusters)?;
    diff_in_means(&clusters.cluster_level())
}

/// Size-weighted difference in cluster averages: targets the effect weighted
/// by true cluster size N_g.
pub fn cluster_size(clusters: &ClusterSample) -> Result<f64> {
    require_cluster_arms(clusters)?;
    let sizes = clusters.sizes()?;
    let arm = |d: u8| {
        let mut num = crate::stats::CompensatedSum::default();
        let mut den = crate::stats::CompensatedSum::default();
        for (c, n) in clusters.clusters().iter().zip(&sizes) {
            if c.treatment == d {
                num.add(c.mean() * n);
                den.add(*n);
            }
        }
        num.value() / den.value()
    };
    Ok(arm(1) - arm(0))
}

/// Individual rows with weights N_g / |M_g|, plus their cluster ids, for the
/// weighted-regression form of the size-weighted estimator.
pub fn size_weighted_rows(
    clusters: &ClusterSample,
) -> Result<(Vec<f64>, Regressors, Vec<f64>, Vec<i64>)> {
    let sizes = clusters.sizes()?;
    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut w = Vec::new();
    let mut ids = Vec::new();
    for (c, n) in clusters.clusters().iter().zip(&sizes) {
        let m = c.members.len() as f64;
        for &yi in &c.members {
            y.push(yi);
            d.push(f64::from(c.treatment));
            w.push(n / m);
            ids.push(c.id);
        }
    }
    let mut r = Regressors::with_constant(y.len());
    r.push("D", d);
    Ok((y, r, w, ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cluster, Unit};
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    fn covariate_sample(ys: &[f64], ds: &[u8], xs: &[f64]) -> Sample {
        Sample::new(
            ys.iter()
                .zip(ds)
                .zip(xs)
                .map(|((&y, &d), &x)| Unit::new(y, d).with_covariates(vec![x]))
                .collect(),
        )
    }

    fn eight() -> Sample {
        covariate_sample(
            &[1.3, -0.2, 2.9, 4.1, 0.7, 3.3, 2.2, 5.0],
            &[1, 0, 1, 1, 0, 0, 1, 0],
            &[0.5, -1.0, 1.5, 2.0, 0.1, 1.2, -0.3, 2.5],
        )
    }

    #[test]
    fn dim_arithmetic() {
        let s = Sample::from_arms(&[3.0, 1.0, 2.0, 5.0], &[1, 0, 1, 0]);
        assert_eq!(diff_in_means(&s).unwrap(), -0.5);
        let s = Sample::from_arms(&[4.0; 4], &[1, 0, 1, 0]);
        assert_eq!(diff_in_means(&s).unwrap(), 0.0);
        let s = Sample::from_arms(&[4.0; 3], &[1, 1, 1]);
        assert!(matches!(diff_in_means(&s), Err(Error::EmptyArm(_))));
    }

    #[test]
    fn dim_is_regression_coefficient() {
        let s = eight();
        let mut r = Regressors::with_constant(8);
        r.push("D", treatment_column(&s));
        let fit = least_squares(&s.outcomes(), &r, None).unwrap();
        assert!(close(
            fit.coefficients[1],
            diff_in_means(&s).unwrap(),
            1e-10
        ));
    }

    fn stratified(groups: &[(&str, &[f64], &[u8])]) -> Sample {
        Sample::new(
            groups
                .iter()
                .flat_map(|(l, ys, ds)| {
                    ys.iter()
                        .zip(ds.iter())
                        .map(move |(&y, &d)| Unit::new(y, d).with_stratum(*l))
                })
                .collect(),
        )
    }

    #[test]
    fn saturated_weights_by_share() {
        // Stratum a: effect 1 on 30 units; stratum b: effect 3 on 10 units.
        let a_y: Vec<f64> = (0..30).map(|i| if i < 15 { 1.0 } else { 0.0 }).collect();
        let a_d: Vec<u8> = (0..30).map(|i| u8::from(i < 15)).collect();
        let b_y: Vec<f64> = (0..10).map(|i| if i < 5 { 3.0 } else { 0.0 }).collect();
        let b_d: Vec<u8> = (0..10).map(|i| u8::from(i < 5)).collect();
        let s = stratified(&[("a", &a_y, &a_d), ("b", &b_y, &b_d)]);
        assert!(close(saturated_estimate(&s).unwrap(), 1.5, 1e-14));
    }

    #[test]
    fn saturated_collapses() {
        let s = stratified(&[("only", &[3.0, 1.0, 2.0, 5.0], &[1, 0, 1, 0])]);
        assert_eq!(saturated_estimate(&s).unwrap(), diff_in_means(&s).unwrap());
        let s = stratified(&[
            ("a", &[3.0, 1.0, 2.0, 5.0], &[1, 0, 1, 0]),
            ("b", &[7.0, 1.5, 0.0, 2.0, 9.0, 4.0], &[0, 1, 1, 0, 1, 0]),
        ]);
        assert!(close(
            saturated_estimate(&s).unwrap(),
            diff_in_means(&s).unwrap(),
            1e-12
        ));
        let bad = stratified(&[("a", &[3.0, 1.0], &[1, 0]), ("b", &[7.0, 1.5], &[1, 1])]);
        match saturated_estimate(&bad) {
            Err(Error::EmptyArm(m)) => assert!(m.contains("`b`")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pooled_with_orthogonal_covariate_is_dim() {
        // x sums to zero in each arm and is orthogonal to y.
        let s = covariate_sample(
            &[1.0, 1.0, 3.0, 3.0, 0.0, 0.0, 2.0, 2.0],
            &[1, 1, 1, 1, 0, 0, 0, 0],
            &[1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0],
        );
        assert!(close(
            pooled_adjusted(&s).unwrap(),
            diff_in_means(&s).unwrap(),
            1e-10
        ));
    }

    #[test]
    fn lin_equals_arm_intercept_difference() {
        let s = eight();
        let xbar = covariate_means(&s)[0];
        let at_mean = |d: u8| {
            let idx: Vec<usize> = (0..8).filter(|&i| s.units()[i].treatment == d).collect();
            let sub = s.subset(&idx);
            let mut r = Regressors::with_constant(sub.len());
            r.push(
                "x",
                covariate_column(&sub, 0).iter().map(|x| x - xbar).collect(),
            );
            least_squares(&sub.outcomes(), &r, None)
                .unwrap()
                .coefficients[0]
        };
        assert!(close(
            lin_interacted(&s).unwrap(),
            at_mean(1) - at_mean(0),
            1e-10
        ));
    }

    #[test]
    fn lin_rejects_constant_covariate() {
        let s = covariate_sample(&[1.0, 2.0, 3.0, 4.0], &[1, 0, 1, 0], &[2.0; 4]);
        assert!(matches!(
            lin_interacted(&s),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn lin_equals_pooled_under_equal_slopes() {
        // y = 2 + 0.5 d + 1.5 x exactly, so both arm slopes equal 1.5.
        let xs = [0.5, -1.0, 1.5, 2.0, 0.1, 1.2, -0.3, 2.5];
        let ds = [1u8, 0, 1, 1, 0, 0, 1, 0];
        let ys: Vec<f64> = xs
            .iter()
            .zip(&ds)
            .map(|(x, &d)| 2.0 + 0.5 * f64::from(d) + 1.5 * x)
            .collect();
        let s = covariate_sample(&ys, &ds, &xs);
        assert!(close(
            lin_interacted(&s).unwrap(),
            pooled_adjusted(&s).unwrap(),
            1e-10
        ));
    }

    #[test]
    fn aipw_special_cases() {
        let s = eight();
        let pi = 0.5;
        assert!(close(
            aipw(&s, pi, &ArmMeanModel).unwrap(),
            diff_in_means(&s).unwrap(),
            1e-12
        ));
        assert!(close(
            aipw(&s, pi, &DemeanedLinearModel).unwrap(),
            lin_interacted(&s).unwrap(),
            1e-10
        ));
        let ht = s
            .units()
            .iter()
            .map(|u| {
                if u.is_treated() {
                    u.outcome / pi
                } else {
                    -u.outcome / (1.0 - pi)
                }
            })
            .sum::<f64>()
            / 8.0;
        assert!(close(aipw(&s, pi, &ZeroModel).unwrap(), ht, 1e-12));
    }

    #[test]
    fn pi_warning_threshold() {
        let s = eight();
        assert!(pi_mismatch_warning(&s, 0.5).is_none());
        assert!(pi_mismatch_warning(&s, 0.7).is_some());
    }

    fn clusters(spec: &[(f64, usize, u8)]) -> ClusterSample {
        ClusterSample::new(
            spec.iter()
                .enumerate()
                .map(|(g, &(m, n, d))| Cluster {
                    id: g as i64,
                    size: Some(n),
                    members: vec![m],
                    treatment: d,
                    stratum: None,
                })
                .collect(),
        )
    }

    #[test]
    fn cluster_arithmetic() {
        let c = clusters(&[(2.0, 10, 1), (4.0, 30, 1), (1.0, 10, 0), (1.0, 30, 0)]);
        assert_eq!(cluster_eq(&c).unwrap(), 2.0);
        assert!(close(cluster_size(&c).unwrap(), 2.5, 1e-14));
    }

    #[test]
    fn cluster_size_is_weighted_regression() {
        let c = ClusterSample::new(vec![
            Cluster {
                id: 1,
                size: Some(5),
                members: vec![1.0, 2.0],
                treatment: 1,
                stratum: None,
            },
            Cluster {
                id: 2,
                size: Some(9),
                members: vec![4.0, 0.5, 3.0],
                treatment: 1,
                stratum: None,
            },
            Cluster {
                id: 3,
                size: Some(2),
                members: vec![1.5],
                treatment: 0,
                stratum: None,
            },
            Cluster {
                id: 4,
                size: Some(7),
                members: vec![0.2, 0.9, 1.1, 2.0],
                treatment: 0,
                stratum: None,
            },
        ]);
        let (y, r, w, _) = size_weighted_rows(&c).unwrap();
        let fit = least_squares(&y, &r, Some(&w)).unwrap();
        assert!(close(fit.coefficients[1], cluster_size(&c).unwrap(), 1e-10));
    }

    #[test]
    fn singleton_clusters_reduce_to_individuals() {
        let c = clusters(&[(2.0, 1, 1), (4.0, 1, 1), (1.0, 1, 0), (0.0, 1, 0)]);
        assert_eq!(
            cluster_eq(&c).unwrap(),
            diff_in_means(&c.individual_level()).unwrap()
        );
    }

    fn sample_strategy() -> impl Strategy<Value = Sample> {
        (6usize..20).prop_flat_map(|n| {
            (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(0.0f64..0.5, n),
                Just(n),
            )
                .prop_map(|(ys, jitter, n)| {
                    // Distinct, spread covariates keep every regression full rank.
                    let xs: Vec<f64> = jitter
                        .iter()
                        .enumerate()
                        .map(|(i, u)| i as f64 * 0.4 - 2.0 + u)
                        .collect();
                    let ds: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
                    covariate_sample(&ys, &ds, &xs)
                })
        })
    }

    fn all_estimates(s: &Sample) -> Vec<f64> {
        vec![
            diff_in_means(s).unwrap(),
            pooled_adjusted(s).unwrap(),
            lin_interacted(s).unwrap(),
            // Shift invariance of AIPW needs π equal to the realized share.
            aipw(
                s,
                s.n_treated() as f64 / s.len() as f64,
                &DemeanedLinearModel,
            )
            .unwrap(),
        ]
    }

    fn transform(s: &Sample, f: impl Fn(f64) -> f64) -> Sample {
        Sample::new(
            s.units()
                .iter()
                .map(|u| Unit {
                    outcome: f(u.outcome),
                    ..u.clone()
                })
                .collect(),
        )
    }

    proptest! {
        #[test]
        fn location_and_scale_equivariance(s in sample_strategy(), c in -5.0f64..5.0, k in 0.1f64..4.0) {
            let base = all_estimates(&s);
            let shifted = all_estimates(&transform(&s, |y| y + c));
            let scaled = all_estimates(&transform(&s, |y| k * y));
            for i in 0..base.len() {
                prop_assert!((shifted[i] - base[i]).abs() < 1e-8);
                prop_assert!((scaled[i] - k * base[i]).abs() < 1e-8 * k.max(1.0) * base[i].abs().max(1.0));
            }
        }

        #[test]
        fn permutation_invariance(s in sample_strategy(), rot in 0usize..20) {
            let mut units = s.units().to_vec();
            let r = rot % units.len();
            units.rotate_left(r);
            units.reverse();
            let p = Sample::new(units);
            for (a, b) in all_estimates(&s).iter().zip(all_estimates(&p)) {
                prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
            }
        }
    }
}
