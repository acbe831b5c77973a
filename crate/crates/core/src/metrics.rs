//! Evaluation metrics, always computed over a full evaluation set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictions at or above this are classified positive.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn threshold_predictions(yhat: &[f64], threshold: f64) -> Vec<bool> {
    yhat.iter().map(|&p| p >= threshold).collect()
}

/// Fraction of rows where `(yhat >= threshold) == y`.
pub fn accuracy(yhat: &[f64], y: &[f64], threshold: f64) -> Result<f64> {
    if yhat.len() != y.len() {
        return Err(Error::Contract(format!(
            "{} predictions but {} labels",
            yhat.len(),
            y.len()
        )));
    }
    if yhat.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = yhat
        .iter()
        .zip(y)
        .filter(|(&p, &t)| (p >= threshold) == (t >= 0.5))
        .count();
    Ok(hits as f64 / y.len() as f64)
}

/// Positive-prediction rate of each group.
pub fn positive_rates(pred: &[bool], groups: &[usize], k: usize) -> Result<Vec<f64>> {
    if pred.len() != groups.len() {
        return Err(Error::Contract("predictions and groups differ in length".into()));
    }
    let mut pos = vec![0usize; k];
    let mut tot = vec![0usize; k];
    for (&p, &g) in pred.iter().zip(groups) {
        if g >= k {
            return Err(Error::Contract(format!("group {g} outside [0, {k})")));
        }
        tot[g] += 1;
        pos[g] += usize::from(p);
    }
    if let Some(g) = tot.iter().position(|&t| t == 0) {
        return Err(Error::UndefinedMetric(format!("group {g} is empty")));
    }
    Ok(pos.iter().zip(&tot).map(|(&p, &t)| p as f64 / t as f64).collect())
}

/// Largest gap in positive-prediction rate over all pairs of groups.
pub fn dp_difference(pred: &[bool], groups: &[usize], k: usize) -> Result<f64> {
    let rates = positive_rates(pred, groups, k)?;
    let max = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// True-positive rate of each of two groups.
pub fn true_positive_rates(pred: &[bool], y: &[f64], groups: &[usize]) -> Result<[f64; 2]> {
    if pred.len() != y.len() || pred.len() != groups.len() {
        return Err(Error::Contract("eo inputs differ in length".into()));
    }
    let mut hit = [0usize; 2];
    let mut tot = [0usize; 2];
    for ((&p, &t), &g) in pred.iter().zip(y).zip(groups) {
        if g > 1 {
            return Err(Error::Contract(
                "equalized odds needs a binary sensitive attribute".into(),
            ));
        }
        if t >= 0.5 {
            tot[g] += 1;
            hit[g] += usize::from(p);
        }
    }
    if let Some(g) = tot.iter().position(|&t| t == 0) {
        return Err(Error::UndefinedMetric(format!("group {g} has no positive labels")));
    }
    Ok([hit[0] as f64 / tot[0] as f64, hit[1] as f64 / tot[1] as f64])
}

/// `|TPR_0 - TPR_1|`.
pub fn eo_difference(pred: &[bool], y: &[f64], groups: &[usize]) -> Result<f64> {
    let [a, b] = true_positive_rates(pred, y, groups)?;
    Ok((a - b).abs())
}

/// Step-wise average precision: mean over positives of the precision at
/// that positive's rank. Rows are ranked by descending score; equal scores
/// keep their original order.
pub fn average_precision(yhat: &[f64], y: &[f64]) -> Result<f64> {
    if yhat.len() != y.len() {
        return Err(Error::Contract("scores and labels differ in length".into()));
    }
    let positives = y.iter().filter(|&&t| t >= 0.5).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..yhat.len()).collect();
    order.sort_by(|&a, &b| yhat[b].total_cmp(&yhat[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if y[i] >= 0.5 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / positives as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub dp_diff: f64,
    /// `None` when the attribute is not binary or a group lacks positives.
    pub eo_diff: Option<f64>,
    pub avg_precision: Option<f64>,
    pub positive_rates: Vec<f64>,
    pub true_positive_rates: Option<Vec<f64>>,
    pub threshold: f64,
}

pub fn evaluate(yhat: &[f64], y: &[f64], groups: &[usize], k: usize) -> Result<EvalReport> {
    let pred = threshold_predictions(yhat, DEFAULT_THRESHOLD);
    let tprs = if k == 2 {
        true_positive_rates(&pred, y, groups).ok()
    } else {
        None
    };
    Ok(EvalReport {
        n: y.len(),
        accuracy: accuracy(yhat, y, DEFAULT_THRESHOLD)?,
        dp_diff: dp_difference(&pred, groups, k)?,
        eo_diff: tprs.map(|[a, b]| (a - b).abs()),
        avg_precision: average_precision(yhat, y).ok(),
        positive_rates: positive_rates(&pred, groups, k)?,
        true_positive_rates: tprs.map(|t| t.to_vec()),
        threshold: DEFAULT_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.9, 0.1], &[1.0, 0.0], 0.5).unwrap(), 1.0);
        // all 0.5 -> all positive -> base rate
        assert_eq!(accuracy(&[0.5; 4], &[1.0, 0.0, 0.0, 1.0], 0.5).unwrap(), 0.5);
        assert!(matches!(accuracy(&[], &[], 0.5), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn accuracy_matches_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let yhat: Vec<f64> = (0..20).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..20).map(|_| f64::from(rng.gen::<bool>())).collect();
        let mut correct = 0;
        for i in 0..20 {
            let p = if yhat[i] >= 0.5 { 1.0 } else { 0.0 };
            if p == y[i] {
                correct += 1;
            }
        }
        assert_eq!(accuracy(&yhat, &y, 0.5).unwrap(), correct as f64 / 20.0);
    }

    #[test]
    fn dp_examples() {
        let pred = [true, false, true, false];
        assert_eq!(dp_difference(&pred, &[0, 0, 1, 1], 2).unwrap(), 0.0);
        // rates 0.9, 0.4, 0.6 over groups of size 10, 5, 5
        let mut pred = vec![];
        let mut groups = vec![];
        for (g, (n, pos)) in [(10, 9), (5, 2), (5, 3)].into_iter().enumerate() {
            for i in 0..n {
                pred.push(i < pos);
                groups.push(g);
            }
        }
        assert!((dp_difference(&pred, &groups, 3).unwrap() - 0.5).abs() < 1e-12);
        assert!(dp_difference(&[true], &[0], 2).is_err());
    }

    #[test]
    fn dp_matches_pairwise_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let k = 4;
        let pred: Vec<bool> = (0..30).map(|_| rng.gen()).collect();
        let mut groups: Vec<usize> = (0..30).map(|_| rng.gen_range(0..k)).collect();
        groups[..k].copy_from_slice(&[0, 1, 2, 3]);
        let rate = |g: usize| {
            let idx: Vec<usize> = (0..30).filter(|&i| groups[i] == g).collect();
            idx.iter().filter(|&&i| pred[i]).count() as f64 / idx.len() as f64
        };
        let mut best: f64 = 0.0;
        for i in 0..k {
            for j in 0..k {
                best = best.max((rate(i) - rate(j)).abs());
            }
        }
        assert!((dp_difference(&pred, &groups, k).unwrap() - best).abs() < 1e-15);
    }

    #[test]
    fn eo_examples() {
        let y = [1.0, 1.0, 1.0, 1.0];
        let groups = [0, 0, 1, 1];
        assert_eq!(eo_difference(&[true, false, true, false], &y, &groups).unwrap(), 0.0);
        assert_eq!(eo_difference(&[true, true, true, false], &y, &groups).unwrap(), 0.5);
        assert!(eo_difference(&[true, true], &[1.0, 0.0], &[0, 1]).is_err());
    }

    #[test]
    fn eo_matches_cell_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 40;
        let pred: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let mut y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen::<bool>())).collect();
        let mut g: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        y[..2].copy_from_slice(&[1.0, 1.0]);
        g[..2].copy_from_slice(&[0, 1]);
        let tpr = |grp: usize| {
            let pos: Vec<usize> = (0..n).filter(|&i| g[i] == grp && y[i] == 1.0).collect();
            pos.iter().filter(|&&i| pred[i]).count() as f64 / pos.len() as f64
        };
        let expect = (tpr(0) - tpr(1)).abs();
        assert!((eo_difference(&pred, &y, &g).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[1.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.9, 0.2], &[0.0, 1.0]).unwrap(), 0.5);
        assert!(average_precision(&[0.3], &[0.0]).is_err());
    }

    /// Precision at rank r counts, among all rows ranked at or above r,
    /// those that are positive. Ranking: higher score first, then lower
    /// index first.
    fn ap_brute(s: &[f64], y: &[f64]) -> f64 {
        let n = s.len();
        let above = |i: usize, j: usize| s[j] > s[i] || (s[j] == s[i] && j < i);
        let mut total = 0.0;
        let mut npos = 0;
        for i in 0..n {
            if y[i] != 1.0 {
                continue;
            }
            npos += 1;
            let rank = 1 + (0..n).filter(|&j| above(i, j)).count();
            let pos_at_or_above = 1 + (0..n).filter(|&j| above(i, j) && y[j] == 1.0).count();
            total += pos_at_or_above as f64 / rank as f64;
        }
        total / npos as f64
    }

    #[test]
    fn ap_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            // coarse scores create ties
            let s: Vec<f64> = (0..15).map(|_| f64::from(rng.gen_range(0..6u8)) / 5.0).collect();
            let mut y: Vec<f64> = (0..15).map(|_| f64::from(rng.gen::<bool>())).collect();
            y[0] = 1.0;
            assert!((average_precision(&s, &y).unwrap() - ap_brute(&s, &y)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn metrics_permutation_and_relabel_invariant(
            rows in prop::collection::vec((0.0f64..1.0, 0u8..2, 0usize..3), 10..50),
            shift in 1usize..3,
        ) {
            let mut rows = rows;
            rows.extend([(0.7, 1, 0), (0.2, 1, 1), (0.6, 1, 2)]);
            let split = |r: &[(f64, u8, usize)]| -> (Vec<f64>, Vec<f64>, Vec<usize>) {
                (r.iter().map(|t| t.0).collect(), r.iter().map(|t| f64::from(t.1)).collect(), r.iter().map(|t| t.2).collect())
            };
            let (s, y, g) = split(&rows);
            let pred = threshold_predictions(&s, 0.5);
            let dp = dp_difference(&pred, &g, 3).unwrap();
            let acc = accuracy(&s, &y, 0.5).unwrap();

            let mut rev = rows.clone();
            rev.reverse();
            let (s2, y2, g2) = split(&rev);
            let pred2 = threshold_predictions(&s2, 0.5);
            prop_assert!((dp_difference(&pred2, &g2, 3).unwrap() - dp).abs() < 1e-15);
            prop_assert!((accuracy(&s2, &y2, 0.5).unwrap() - acc).abs() < 1e-15);

            // relabel groups by a cyclic bijection
            let g3: Vec<usize> = g.iter().map(|&x| (x + shift) % 3).collect();
            prop_assert!((dp_difference(&pred, &g3, 3).unwrap() - dp).abs() < 1e-15);

            // k = 2 agrees with the single-pair formula
            let two: Vec<usize> = g.iter().map(|&x| x.min(1)).collect();
            let rates = positive_rates(&pred, &two, 2).unwrap();
            prop_assert!((dp_difference(&pred, &two, 2).unwrap() - (rates[0] - rates[1]).abs()).abs() < 1e-15);
        }
    }
}
