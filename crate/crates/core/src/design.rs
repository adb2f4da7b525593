//! Treatment assignment under each randomization scheme.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{Assignment, ClusterSample, DesignKind, Sample};

/// ⌊πn⌋. The small offset keeps products such as 0.29 · 100 from landing
/// one below the intended integer.
pub fn treated_count(pi: f64, n: usize) -> usize {
    (pi * n as f64 + 1e-9).floor() as usize
}

/// Uniformly random 0/1 vector of length `n` with exactly `n1` ones.
fn fixed_count_vector<R: Rng + ?Sized>(n: usize, n1: usize, rng: &mut R) -> Vec<u8> {
    let mut d: Vec<u8> = (0..n).map(|i| u8::from(i < n1)).collect();
    d.shuffle(rng);
    d
}

fn check_pi(pi: f64) -> Result<()> {
    if pi > 0.0 && pi < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "π = {pi} is not inside (0, 1)"
        )))
    }
}

/// Complete randomization: exactly ⌊πn⌋ treated, all such vectors equally
/// likely.
pub fn assign_complete<R: Rng + ?Sized>(n: usize, pi: f64, rng: &mut R) -> Result<Assignment> {
    check_pi(pi)?;
    if n < 2 {
        return Err(Error::TooFew(format!(
            "complete randomization needs n ≥ 2, got {n}"
        )));
    }
    let n1 = treated_count(pi, n);
    if n1 == 0 || n1 == n {
        return Err(Error::DegenerateDesign(format!(
            "⌊πn⌋ = {n1} with n = {n} and π = {pi} leaves an arm empty"
        )));
    }
    Ok(Assignment {
        d: fixed_count_vector(n, n1, rng),
        design: DesignKind::Complete { pi },
        pairing: None,
    })
}

/// Complete randomization run independently inside each stratum at that
/// stratum's π. Strata are processed in lexicographic label order.
pub fn assign_stratified_block<R: Rng + ?Sized>(
    strata: &[String],
    pi_by_stratum: &BTreeMap<String, f64>,
    rng: &mut R,
) -> Result<Assignment> {
    let groups = group_labels(strata);
    let mut d = vec![0u8; strata.len()];
    for (label, members) in &groups {
        let pi = *pi_by_stratum.get(label).ok_or_else(|| {
            Error::InvalidInput(format!("no assignment probability for stratum `{label}`"))
        })?;
        check_pi(pi)?;
        let nx = members.len();
        let n1 = treated_count(pi, nx);
        if nx < 2 || n1 == 0 || n1 == nx {
            return Err(Error::DegenerateDesign(format!(
                "stratum `{label}`: ⌊π·n⌋ = {n1} with n = {nx} and π = {pi} leaves an arm empty"
            )));
        }
        for (&i, di) in members.iter().zip(fixed_count_vector(nx, n1, rng)) {
            d[i] = di;
        }
    }
    Ok(Assignment {
        d,
        design: DesignKind::StratifiedBlock {
            pi_by_stratum: pi_by_stratum.clone(),
        },
        pairing: None,
    })
}

fn group_labels(labels: &[String]) -> BTreeMap<String, Vec<usize>> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.clone()).or_default().push(i);
    }
    groups
}

/// Pairs units by sorting on a scalar score and pairing neighbors.
///
/// With one covariate the score is the covariate itself; with several it is
/// the projection on the first principal direction of the sample covariance
/// (sign fixed so that its largest-magnitude loading is positive). The sort
/// is stable, so ties keep their original order. Consecutive pairs in the
/// output are neighbors in score, which the pairs-of-pairs variance
/// estimator relies on. The rule is deterministic and needs no random
/// stream.
pub fn match_pairs(covariates: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let n = covariates.len();
    if n % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "cannot pair an odd number of units ({n})"
        )));
    }
    if n == 0 {
        return Err(Error::TooFew("no units to pair".into()));
    }
    let k = covariates[0].len();
    if k == 0 {
        return Err(Error::Incompatible(
            "matching needs at least one covariate".into(),
        ));
    }
    if let Some(i) = covariates.iter().position(|c| c.len() != k) {
        return Err(Error::InvalidInput(format!(
            "unit {i} has a covariate vector of the wrong length"
        )));
    }
    if let Some(i) = covariates
        .iter()
        .position(|c| c.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidInput(format!(
            "unit {i} has a non-finite covariate"
        )));
    }

    let scores: Vec<f64> = if k == 1 {
        covariates.iter().map(|c| c[0]).collect()
    } else {
        let direction = principal_direction(covariates);
        covariates
            .iter()
            .map(|c| c.iter().zip(&direction).map(|(a, b)| a * b).sum())
            .collect()
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    Ok(order.chunks_exact(2).map(|p| (p[0], p[1])).collect())
}

fn principal_direction(covariates: &[Vec<f64>]) -> Vec<f64> {
    let n = covariates.len() as f64;
    let k = covariates[0].len();
    let means: Vec<f64> = (0..k)
        .map(|j| covariates.iter().map(|c| c[j]).sum::<f64>() / n)
        .collect();
    let cov = DMatrix::from_fn(k, k, |a, b| {
        covariates
            .iter()
            .map(|c| (c[a] - means[a]) * (c[b] - means[b]))
            .sum::<f64>()
            / n
    });
    let eig = SymmetricEigen::new(cov);
    let top = (0..k)
        .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .unwrap_or(0);
    let mut v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let lead = (0..k)
        .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()))
        .unwrap_or(0);
    if v[lead] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// One unit of each pair treated with probability 1/2, independently.
pub fn assign_matched_pairs<R: Rng + ?Sized>(
    pairing: &[(usize, usize)],
    rng: &mut R,
) -> Result<Assignment> {
    let n = 2 * pairing.len();
    if n == 0 {
        return Err(Error::TooFew("no pairs".into()));
    }
    let mut seen = vec![false; n];
    for &(a, b) in pairing {
        for i in [a, b] {
            if i >= n || seen[i] {
                return Err(Error::InvalidInput(format!(
                    "pairing is not a perfect matching of 0..{n} (unit {i})"
                )));
            }
            seen[i] = true;
        }
    }
    let mut d = vec![0u8; n];
    for &(a, b) in pairing {
        if rng.random_bool(0.5) {
            d[a] = 1;
        } else {
            d[b] = 1;
        }
    }
    Ok(Assignment {
        d,
        design: DesignKind::MatchedPairs,
        pairing: Some(pairing.to_vec()),
    })
}

/// Cluster-level assignment: complete or stratified-block randomization with
/// clusters as the units. `d[g]` is the treatment of cluster `g`.
pub fn assign_clusters<R: Rng + ?Sized>(
    clusters: &ClusterSample,
    kind: &DesignKind,
    rng: &mut R,
) -> Result<Assignment> {
    let mut a = match kind {
        DesignKind::ClusterComplete { pi } | DesignKind::Complete { pi } => {
            assign_complete(clusters.len(), *pi, rng)?
        }
        DesignKind::ClusterStratifiedBlock { pi_by_stratum }
        | DesignKind::StratifiedBlock { pi_by_stratum } => {
            let labels = clusters
                .clusters()
                .iter()
                .map(|c| {
                    c.stratum.clone().ok_or_else(|| {
                        Error::Incompatible(format!("cluster {} has no stratum label", c.id))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            assign_stratified_block(&labels, pi_by_stratum, rng)?
        }
        DesignKind::MatchedPairs => {
            return Err(Error::Incompatible(
                "matched pairs of clusters are not supported".into(),
            ))
        }
    };
    a.design = match kind {
        DesignKind::Complete { pi } => DesignKind::ClusterComplete { pi: *pi },
        DesignKind::StratifiedBlock { pi_by_stratum } => DesignKind::ClusterStratifiedBlock {
            pi_by_stratum: pi_by_stratum.clone(),
        },
        other => other.clone(),
    };
    Ok(a)
}

/// Assignment for a unit-level sample under `kind`, reading strata or
/// covariates from the sample as the design requires.
pub fn assign_sample<R: Rng + ?Sized>(
    sample: &Sample,
    kind: &DesignKind,
    rng: &mut R,
) -> Result<Assignment> {
    match kind {
        DesignKind::Complete { pi } => assign_complete(sample.len(), *pi, rng),
        DesignKind::StratifiedBlock { pi_by_stratum } => {
            let labels = stratum_labels(sample)?;
            assign_stratified_block(&labels, pi_by_stratum, rng)
        }
        DesignKind::MatchedPairs => {
            let covs: Vec<Vec<f64>> = sample
                .units()
                .iter()
                .map(|u| u.covariates.clone())
                .collect();
            let pairing = match_pairs(&covs)?;
            assign_matched_pairs(&pairing, rng)
        }
        DesignKind::ClusterComplete { .. } | DesignKind::ClusterStratifiedBlock { .. } => Err(
            Error::Incompatible("cluster designs need cluster-level data".into()),
        ),
    }
}

pub(crate) fn stratum_labels(sample: &Sample) -> Result<Vec<String>> {
    sample
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

/// Imb(x): treated minus control count in each stratum present in `strata`.
pub fn imbalance(d: &[u8], strata: &[String]) -> BTreeMap<String, i64> {
    let mut out = BTreeMap::new();
    for (di, label) in d.iter().zip(strata) {
        *out.entry(label.clone()).or_insert(0) += if *di == 1 { 1 } else { -1 };
    }
    out
}

/// Imb(x) for every label in `labels`; labels without units report 0.
pub fn imbalance_with_labels<'a, I>(d: &[u8], strata: &[String], labels: I) -> BTreeMap<String, i64>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = imbalance(d, strata);
    for l in labels {
        out.entry(l.to_string()).or_insert(0);
    }
    out
}

/// Refusal threshold for exhaustive enumeration of assignment vectors.
pub const ENUMERATION_CAP: u128 = 1_000_000;

/// C(n, k) in 128-bit arithmetic, saturating on overflow.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u128;
    let mut out: u128 = 1;
    for i in 0..k {
        out = match out.checked_mul(n as u128 - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    out
}

fn check_cap(count: u128) -> Result<()> {
    if count > ENUMERATION_CAP {
        Err(Error::EnumerationTooLarge {
            count,
            cap: ENUMERATION_CAP,
        })
    } else {
        Ok(())
    }
}

/// Every 0/1 vector of length `n` with exactly `n1` ones, in lexicographic
/// order of the treated index sets.
pub fn all_complete(n: usize, n1: usize) -> Result<Vec<Vec<u8>>> {
    check_cap(binomial(n, n1))?;
    Ok(itertools::Itertools::combinations(0..n, n1)
        .map(|treated| {
            let mut d = vec![0u8; n];
            treated.into_iter().for_each(|i| d[i] = 1);
            d
        })
        .collect())
}

/// Every assignment a stratified block design can produce: the product over
/// strata of all ⌊π_x n_x⌋-subsets.
pub fn all_stratified(
    strata: &[String],
    pi_by_stratum: &BTreeMap<String, f64>,
) -> Result<Vec<Vec<u8>>> {
    use itertools::Itertools;
    let groups = group_labels(strata);
    let mut count: u128 = 1;
    let mut per_stratum = Vec::with_capacity(groups.len());
    for (label, members) in &groups {
        let pi = *pi_by_stratum.get(label).ok_or_else(|| {
            Error::InvalidInput(format!("no assignment probability for stratum `{label}`"))
        })?;
        let n1 = treated_count(pi, members.len());
        count = count.saturating_mul(binomial(members.len(), n1));
        per_stratum.push((members, n1));
    }
    check_cap(count)?;
    let choices: Vec<Vec<Vec<usize>>> = per_stratum
        .iter()
        .map(|(members, n1)| members.iter().copied().combinations(*n1).collect())
        .collect();
    Ok(choices
        .into_iter()
        .multi_cartesian_product()
        .map(|pick| {
            let mut d = vec![0u8; strata.len()];
            pick.into_iter().flatten().for_each(|i| d[i] = 1);
            d
        })
        .collect())
}

/// All 2^K assignments of a matched-pair design.
pub fn all_pairs(pairing: &[(usize, usize)]) -> Result<Vec<Vec<u8>>> {
    let k = pairing.len();
    let count = if k >= 127 { u128::MAX } else { 1u128 << k };
    check_cap(count)?;
    let n = 2 * k;
    Ok((0..count as u64)
        .map(|mask| {
            let mut d = vec![0u8; n];
            for (j, &(a, b)) in pairing.iter().enumerate() {
                if mask >> j & 1 == 1 {
                    d[a] = 1;
                } else {
                    d[b] = 1;
                }
            }
            d
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn labels(spec: &[(&str, usize)]) -> Vec<String> {
        spec.iter()
            .flat_map(|(l, n)| std::iter::repeat(l.to_string()).take(*n))
            .collect()
    }

    #[test]
    fn complete_counts() {
        let mut r = rng::from_seed(1);
        assert_eq!(assign_complete(100, 0.5, &mut r).unwrap().n_treated(), 50);
        assert_eq!(assign_complete(5, 0.5, &mut r).unwrap().n_treated(), 2);
        assert_eq!(assign_complete(100, 0.29, &mut r).unwrap().n_treated(), 29);
    }

    #[test]
    fn complete_degenerate() {
        let mut r = rng::from_seed(1);
        assert!(matches!(
            assign_complete(3, 0.2, &mut r),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn two_units_split_evenly_over_seeds() {
        let first = (0..2000)
            .filter(|&s| assign_complete(2, 0.5, &mut rng::from_seed(s)).unwrap().d[0] == 1)
            .count();
        // Binomial(2000, 1/2) has standard deviation ≈ 22.4.
        assert!((first as i64 - 1000).abs() < 100, "{first}");
    }

    #[test]
    fn stratified_counts() {
        let s = labels(&[("0", 40), ("1", 60)]);
        let pis = BTreeMap::from([("0".to_string(), 0.5), ("1".to_string(), 0.5)]);
        let a = assign_stratified_block(&s, &pis, &mut rng::from_seed(3)).unwrap();
        let imb = imbalance(&a.d, &s);
        assert_eq!(imb["0"], 0);
        assert_eq!(imb["1"], 0);
        assert_eq!(a.d[..40].iter().filter(|&&x| x == 1).count(), 20);

        let s = labels(&[("0", 8), ("1", 4)]);
        let pis = BTreeMap::from([("0".to_string(), 0.25), ("1".to_string(), 0.5)]);
        let a = assign_stratified_block(&s, &pis, &mut rng::from_seed(3)).unwrap();
        assert_eq!(a.d[..8].iter().filter(|&&x| x == 1).count(), 2);
        assert_eq!(a.d[8..].iter().filter(|&&x| x == 1).count(), 2);
    }

    #[test]
    fn single_stratum_matches_complete() {
        // Same stream, same shuffle: identical output.
        let s = labels(&[("a", 10)]);
        let pis = BTreeMap::from([("a".to_string(), 0.5)]);
        let a = assign_stratified_block(&s, &pis, &mut rng::from_seed(9)).unwrap();
        let b = assign_complete(10, 0.5, &mut rng::from_seed(9)).unwrap();
        assert_eq!(a.d, b.d);
    }

    #[test]
    fn degenerate_stratum_is_named() {
        let s = labels(&[("big", 10), ("tiny", 1)]);
        let pis = BTreeMap::from([("big".to_string(), 0.5), ("tiny".to_string(), 0.5)]);
        match assign_stratified_block(&s, &pis, &mut rng::from_seed(0)) {
            Err(Error::DegenerateDesign(m)) => assert!(m.contains("tiny")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pairing_by_sorted_covariate() {
        let p = match_pairs(&[vec![3.0], vec![1.0], vec![2.0], vec![4.0]]).unwrap();
        assert_eq!(p, vec![(1, 2), (0, 3)]);
        let p = match_pairs(&vec![vec![5.0]; 6]).unwrap();
        assert_eq!(p, vec![(0, 1), (2, 3), (4, 5)]);
        assert!(match_pairs(&vec![vec![1.0]; 3]).is_err());
    }

    /// Minimum total Euclidean distance over all perfect matchings.
    fn min_matching_cost(points: &[Vec<f64>], remaining: Vec<usize>) -> f64 {
        if remaining.is_empty() {
            return 0.0;
        }
        let first = remaining[0];
        let mut best = f64::INFINITY;
        for j in 1..remaining.len() {
            let other = remaining[j];
            let rest: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| i != first && i != other)
                .collect();
            let d = dist(&points[first], &points[other]);
            best = best.min(d + min_matching_cost(points, rest));
        }
        best
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn pairing_on_a_line() {
        let xs = [0.7, -1.2, 3.4, 0.1, 2.2, -0.4, 5.0, 1.5];
        let pts: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, x]).collect();
        let p2 = match_pairs(&pts).unwrap();
        let p1 = match_pairs(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap();
        assert_eq!(p1, p2);
        let cost: f64 = p2.iter().map(|&(a, b)| dist(&pts[a], &pts[b])).sum();
        let best = min_matching_cost(&pts, (0..8).collect());
        assert!((cost - best).abs() < 1e-12, "{cost} vs {best}");
    }

    #[test]
    fn matched_pairs_treat_one_per_pair() {
        let pairing = vec![(0, 3), (1, 2), (4, 5)];
        let a = assign_matched_pairs(&pairing, &mut rng::from_seed(4)).unwrap();
        assert_eq!(a.n_treated(), 3);
        for (i, j) in pairing {
            assert_eq!(a.d[i] + a.d[j], 1);
        }
    }

    #[test]
    fn matched_pairs_marginal_share() {
        let pairing = vec![(0, 1), (2, 3)];
        let hits = (0..10_000)
            .filter(|&s| {
                assign_matched_pairs(&pairing, &mut rng::from_seed(s))
                    .unwrap()
                    .d[2]
                    == 1
            })
            .count();
        let share = hits as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&share), "{share}");
    }

    #[test]
    fn cluster_assignment() {
        use crate::model::Cluster;
        let clusters: Vec<Cluster> = (0..10)
            .map(|g| Cluster {
                id: g,
                size: Some(3),
                members: vec![1.0, 2.0],
                treatment: 0,
                stratum: Some("s".into()),
            })
            .collect();
        let cs = ClusterSample::new(clusters);
        let a = assign_clusters(
            &cs,
            &DesignKind::ClusterComplete { pi: 0.5 },
            &mut rng::from_seed(2),
        )
        .unwrap();
        assert_eq!(a.n_treated(), 5);
        let b = assign_clusters(
            &cs,
            &DesignKind::ClusterStratifiedBlock {
                pi_by_stratum: BTreeMap::from([("s".to_string(), 0.5)]),
            },
            &mut rng::from_seed(2),
        )
        .unwrap();
        assert_eq!(a.d, b.d);
        let members = cs.with_treatments(&a.d).individual_level();
        for u in members.units() {
            let g = u.cluster_id.unwrap() as usize;
            assert_eq!(u.treatment, a.d[g]);
        }
    }

    #[test]
    fn imbalance_counts() {
        let s = labels(&[("0", 40), ("1", 60)]);
        let mut d = vec![0u8; 100];
        d[..30].iter_mut().for_each(|x| *x = 1);
        d[40..60].iter_mut().for_each(|x| *x = 1);
        let imb = imbalance(&d, &s);
        assert_eq!(imb["0"], 20);
        assert_eq!(imb["1"], -20);
        let imb = imbalance_with_labels(&d, &s, ["2"]);
        assert_eq!(imb["2"], 0);
    }

    #[test]
    fn same_seed_same_assignment() {
        let a = assign_complete(50, 0.3, &mut rng::from_seed(11)).unwrap();
        let b = assign_complete(50, 0.3, &mut rng::from_seed(11)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn sbr_balances_even_strata(sizes in prop::collection::vec(1usize..20, 1..5), seed in any::<u64>()) {
            let spec: Vec<(String, usize)> = sizes.iter().enumerate().map(|(i, &s)| (format!("s{i}"), 2 * s)).collect();
            let s: Vec<String> = spec.iter().flat_map(|(l, n)| std::iter::repeat(l.clone()).take(*n)).collect();
            let pis = spec.iter().map(|(l, _)| (l.clone(), 0.5)).collect();
            let a = assign_stratified_block(&s, &pis, &mut rng::from_seed(seed)).unwrap();
            prop_assert!(imbalance(&a.d, &s).values().all(|&v| v == 0));
        }

        #[test]
        fn pairs_sum_to_k(k in 1usize..40, seed in any::<u64>()) {
            let covs: Vec<Vec<f64>> = (0..2 * k).map(|i| vec![((i * 7919) % 101) as f64]).collect();
            let pairing = match_pairs(&covs).unwrap();
            let a = assign_matched_pairs(&pairing, &mut rng::from_seed(seed)).unwrap();
            prop_assert_eq!(a.n_treated(), k);
        }
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(6, 3), 20);
        assert_eq!(binomial(10, 0), 1);
        assert_eq!(binomial(4, 5), 0);
        assert_eq!(binomial(60, 30), 118_264_581_564_861_424);
    }

    #[test]
    fn exhaustive_complete() {
        let all = all_complete(6, 3).unwrap();
        assert_eq!(all.len(), 20);
        let distinct: std::collections::BTreeSet<_> = all.iter().cloned().collect();
        assert_eq!(distinct.len(), 20);
        assert!(all
            .iter()
            .all(|d| d.iter().filter(|&&v| v == 1).count() == 3));
        assert!(matches!(
            all_complete(40, 20),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn exhaustive_stratified_and_pairs() {
        let strata = labels(&[("a", 4), ("b", 4)]);
        let pis = BTreeMap::from([("a".to_string(), 0.5), ("b".to_string(), 0.5)]);
        let all = all_stratified(&strata, &pis).unwrap();
        assert_eq!(all.len(), 36);
        for d in &all {
            assert!(imbalance(d, &strata).values().all(|&v| v == 0));
        }
        let pairs = all_pairs(&[(0, 3), (1, 2)]).unwrap();
        assert_eq!(pairs.len(), 4);
        assert!(pairs.iter().all(|d| d[0] + d[3] == 1 && d[1] + d[2] == 1));
    }
}
