//! Accuracy and fairness losses, each returning its value together with
//! the gradient with respect to the predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictions are clamped this far from 0 and 1 before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// dL/dyhat, one entry per row.
    pub grad: Vec<f64>,
}

/// Predictions tagged with their sensitive group (and label, for EO).
#[derive(Clone, Copy, Debug)]
pub struct GroupedPredictions<'a> {
    yhat: &'a [f64],
    groups: &'a [usize],
    labels: Option<&'a [f64]>,
    k: usize,
}

impl<'a> GroupedPredictions<'a> {
    pub fn new(yhat: &'a [f64], groups: &'a [usize], k: usize) -> Result<Self> {
        if yhat.len() != groups.len() {
            return Err(Error::Contract(format!(
                "{} predictions but {} group labels",
                yhat.len(),
                groups.len()
            )));
        }
        if k < 2 {
            return Err(Error::Contract(format!("need at least 2 groups, got {k}")));
        }
        if let Some(&g) = groups.iter().find(|&&g| g >= k) {
            return Err(Error::Contract(format!("group label {g} outside [0, {k})")));
        }
        Ok(Self {
            yhat,
            groups,
            labels: None,
            k,
        })
    }

    pub fn with_labels(mut self, labels: &'a [f64]) -> Result<Self> {
        if labels.len() != self.yhat.len() {
            return Err(Error::Contract(format!(
                "{} predictions but {} labels",
                self.yhat.len(),
                labels.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.yhat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.yhat.is_empty()
    }

    pub fn group_count(&self) -> usize {
        self.k
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FairnessLoss {
    /// Demographic parity gap (max over group pairs).
    #[default]
    Dp,
    /// Equalized odds: max of the TPR and FPR gaps.
    Eo,
}

impl FairnessLoss {
    pub fn eval(&self, gp: &GroupedPredictions<'_>) -> Result<LossEval> {
        match self {
            FairnessLoss::Dp => dp_loss(gp),
            FairnessLoss::Eo => eo_loss(gp),
        }
    }
}

/// Mean binary cross-entropy.
pub fn bce_loss(yhat: &[f64], y: &[f64]) -> Result<LossEval> {
    if yhat.len() != y.len() {
        return Err(Error::Contract(format!(
            "{} predictions but {} labels",
            yhat.len(),
            y.len()
        )));
    }
    if yhat.is_empty() {
        return Err(Error::Contract("bce of an empty batch".into()));
    }
    let n = yhat.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(yhat.len());
    for (&p, &t) in yhat.iter().zip(y) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        grad.push((p - t) / (p * (1.0 - p) * n));
    }
    Ok(LossEval {
        value: total / n,
        grad,
    })
}

struct CellMeans {
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl CellMeans {
    fn mean(&self, c: usize) -> f64 {
        self.sums[c] / self.counts[c] as f64
    }
}

fn group_means(gp: &GroupedPredictions<'_>) -> Result<CellMeans> {
    let mut sums = vec![0.0; gp.k];
    let mut counts = vec![0usize; gp.k];
    for (&p, &g) in gp.yhat.iter().zip(gp.groups) {
        sums[g] += p;
        counts[g] += 1;
    }
    if let Some(group) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroupInBatch { group });
    }
    Ok(CellMeans { sums, counts })
}

/// Demographic parity gap: the largest difference between two group means
/// of the predictions.
///
/// The gradient flows through the attaining pair only. When the maximum is
/// attained by more than one pair, or every mean is equal, the gradient is
/// zero.
pub fn dp_loss(gp: &GroupedPredictions<'_>) -> Result<LossEval> {
    let cells = group_means(gp)?;
    let means: Vec<f64> = (0..gp.k).map(|g| cells.mean(g)).collect();

    let hi = argmax(&means);
    let lo = argmin(&means);
    let value = means[hi] - means[lo];

    let mut grad = vec![0.0; gp.len()];
    let unique_hi = means.iter().filter(|&&m| m == means[hi]).count() == 1;
    let unique_lo = means.iter().filter(|&&m| m == means[lo]).count() == 1;
    if value > 0.0 && unique_hi && unique_lo {
        let up = 1.0 / cells.counts[hi] as f64;
        let down = 1.0 / cells.counts[lo] as f64;
        for (d, &g) in grad.iter_mut().zip(gp.groups) {
            if g == hi {
                *d = up;
            } else if g == lo {
                *d = -down;
            }
        }
    }
    Ok(LossEval { value, grad })
}

/// Equalized-odds gap for a binary sensitive attribute: the larger of the
/// gap in mean prediction among positives (TPR side) and among negatives
/// (FPR side).
pub fn eo_loss(gp: &GroupedPredictions<'_>) -> Result<LossEval> {
    let labels = gp
        .labels
        .ok_or_else(|| Error::Contract("equalized odds needs labels".into()))?;
    if gp.k != 2 {
        return Err(Error::Contract(format!(
            "equalized odds needs a binary sensitive attribute, got {} groups",
            gp.k
        )));
    }
    // cell = 2 * label + group
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    let cell_of = |y: f64, g: usize| 2 * usize::from(y >= 0.5) + g;
    for ((&p, &g), &y) in gp.yhat.iter().zip(gp.groups).zip(labels) {
        let c = cell_of(y, g);
        sums[c] += p;
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyGroupInBatch { group: c % 2 });
    }
    let mean = |c: usize| sums[c] / counts[c] as f64;
    let tpr_diff = mean(3) - mean(2);
    let fpr_diff = mean(1) - mean(0);
    let value = tpr_diff.abs().max(fpr_diff.abs());

    let mut grad = vec![0.0; gp.len()];
    if tpr_diff.abs() != fpr_diff.abs() {
        let (label, diff) = if tpr_diff.abs() > fpr_diff.abs() {
            (1.0, tpr_diff)
        } else {
            (0.0, fpr_diff)
        };
        if diff != 0.0 {
            let s = diff.signum();
            let c1 = cell_of(label, 1);
            let c0 = cell_of(label, 0);
            for ((d, &g), &y) in grad.iter_mut().zip(gp.groups).zip(labels) {
                let c = cell_of(y, g);
                if c == c1 {
                    *d = s / counts[c1] as f64;
                } else if c == c0 {
                    *d = -s / counts[c0] as f64;
                }
            }
        }
    }
    Ok(LossEval { value, grad })
}

/// `bce + lambda * fairness`, with the gradient summed the same way.
pub fn lagrangian_loss(
    yhat: &[f64],
    y: &[f64],
    gp: &GroupedPredictions<'_>,
    lambda: f64,
    fairness: FairnessLoss,
) -> Result<LossEval> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Precondition(format!(
            "lambda must be a finite non-negative number, got {lambda}"
        )));
    }
    let acc = bce_loss(yhat, y)?;
    let fair = fairness.eval(gp)?;
    if fair.grad.len() != acc.grad.len() {
        return Err(Error::Contract(
            "fairness and accuracy batches differ in length".into(),
        ));
    }
    Ok(LossEval {
        value: acc.value + lambda * fair.value,
        grad: acc
            .grad
            .iter()
            .zip(&fair.grad)
            .map(|(a, f)| a + lambda * f)
            .collect(),
    })
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::central_difference;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn bce_examples() {
        let l = bce_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!(close(l.value, std::f64::consts::LN_2, 1e-12));
        let l = bce_loss(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
        assert!(l.value < 1e-11);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn dp_examples() {
        // means 0.6 and 0.4
        let yhat = [0.7, 0.5, 0.3, 0.5];
        let groups = [0, 0, 1, 1];
        let gp = GroupedPredictions::new(&yhat, &groups, 2).unwrap();
        assert!(close(dp_loss(&gp).unwrap().value, 0.2, 1e-12));

        let yhat = [0.3, 0.8, 0.3, 0.8];
        let gp = GroupedPredictions::new(&yhat, &groups, 2).unwrap();
        let l = dp_loss(&gp).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.iter().all(|&g| g == 0.0));

        let yhat = [0.2, 0.5, 0.9];
        let groups = [0, 1, 2];
        let gp = GroupedPredictions::new(&yhat, &groups, 3).unwrap();
        let l = dp_loss(&gp).unwrap();
        assert!(close(l.value, 0.7, 1e-12));
        assert_eq!(l.grad, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn dp_empty_group() {
        let gp = GroupedPredictions::new(&[0.1, 0.2], &[0, 0], 2).unwrap();
        assert!(matches!(dp_loss(&gp), Err(Error::EmptyGroupInBatch { group: 1 })));
    }

    #[test]
    fn dp_tie_at_max_pair_has_zero_grad() {
        // groups 0 and 1 both attain the max mean
        let gp = GroupedPredictions::new(&[0.9, 0.9, 0.1], &[0, 1, 2], 3).unwrap();
        let l = dp_loss(&gp).unwrap();
        assert!(close(l.value, 0.8, 1e-12));
        assert!(l.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn eo_examples() {
        // cells: (y=1,a=0) mean 0.8, (y=1,a=1) mean 0.5 -> tpr gap 0.3
        //        (y=0,a=0) mean 0.3, (y=0,a=1) mean 0.2 -> fpr gap 0.1
        let yhat = [0.9, 0.7, 0.6, 0.4, 0.4, 0.2, 0.1, 0.3];
        let groups = [0, 0, 1, 1, 0, 0, 1, 1];
        let labels = [1., 1., 1., 1., 0., 0., 0., 0.];
        let gp = GroupedPredictions::new(&yhat, &groups, 2)
            .unwrap()
            .with_labels(&labels)
            .unwrap();
        let l = eo_loss(&gp).unwrap();
        assert!(close(l.value, 0.3, 1e-12));
        // by enumeration of the four cells
        let cell_mean = |y: f64, a: usize| {
            let v: Vec<f64> = (0..8)
                .filter(|&i| labels[i] == y && groups[i] == a)
                .map(|i| yhat[i])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let brute = (cell_mean(1.0, 0) - cell_mean(1.0, 1))
            .abs()
            .max((cell_mean(0.0, 0) - cell_mean(0.0, 1)).abs());
        assert!(close(l.value, brute, 1e-15));
        // gradient lives on the positive rows only
        assert!(l.grad[4..].iter().all(|&g| g == 0.0));
        assert_eq!(l.grad[..4], [0.5, 0.5, -0.5, -0.5]);
    }

    #[test]
    fn eo_independent_of_group_within_label() {
        let yhat = [0.9, 0.2, 0.9, 0.2];
        let groups = [0, 0, 1, 1];
        let labels = [1., 0., 1., 0.];
        let gp = GroupedPredictions::new(&yhat, &groups, 2)
            .unwrap()
            .with_labels(&labels)
            .unwrap();
        assert_eq!(eo_loss(&gp).unwrap().value, 0.0);
    }

    #[test]
    fn eo_empty_cell() {
        let gp = GroupedPredictions::new(&[0.1, 0.2, 0.3], &[0, 1, 0], 2)
            .unwrap()
            .with_labels(&[1., 1., 0.])
            .unwrap();
        assert!(matches!(eo_loss(&gp), Err(Error::EmptyGroupInBatch { .. })));
    }

    #[test]
    fn lagrangian_examples() {
        let yhat = [0.7, 0.5, 0.3, 0.5];
        let y = [1., 0., 1., 0.];
        let groups = [0, 0, 1, 1];
        let gp = GroupedPredictions::new(&yhat, &groups, 2).unwrap();
        let bce = bce_loss(&yhat, &y).unwrap();
        let l0 = lagrangian_loss(&yhat, &y, &gp, 0.0, FairnessLoss::Dp).unwrap();
        assert_eq!(l0, bce);
        let l1 = lagrangian_loss(&yhat, &y, &gp, 1.0, FairnessLoss::Dp).unwrap();
        assert!(close(l1.value, bce.value + 0.2, 1e-12));
        assert!(lagrangian_loss(&yhat, &y, &gp, -1.0, FairnessLoss::Dp).is_err());
    }

    fn fd_check(f: impl Fn(&[f64]) -> LossEval, y0: &[f64]) {
        let an = f(y0).grad;
        let fd = central_difference(|t| Ok(f(t).value), y0, 1e-5).unwrap();
        for (a, n) in an.iter().zip(&fd) {
            assert!((a - n).abs() <= 1e-5 * a.abs().max(n.abs()).max(1e-3), "{a} vs {n}");
        }
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(
            yhat in prop::collection::vec(0.05f64..0.95, 12),
            labels in prop::collection::vec(0u8..2, 12),
            lambda in 0.0f64..3.0,
        ) {
            let groups: Vec<usize> = (0..12).map(|i| i % 3).collect();
            let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
            fd_check(|p| bce_loss(p, &y).unwrap(), &yhat);
            let dp = |p: &[f64]| dp_loss(&GroupedPredictions::new(p, &groups, 3).unwrap()).unwrap();
            // skip draws near a max-pair switch
            let means: Vec<f64> = (0..3)
                .map(|g| (0..12).filter(|i| i % 3 == g).map(|i| yhat[i]).sum::<f64>() / 4.0)
                .collect();
            let mut sorted = means.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assume!(sorted[1] - sorted[0] > 1e-3 && sorted[2] - sorted[1] > 1e-3);
            fd_check(dp, &yhat);
            fd_check(
                |p| lagrangian_loss(p, &y, &GroupedPredictions::new(p, &groups, 3).unwrap(), lambda, FairnessLoss::Dp).unwrap(),
                &yhat,
            );
        }

        #[test]
        fn dp_in_unit_interval_and_permutation_invariant(
            rows in prop::collection::vec((0.0f64..1.0, 0usize..3, 0u8..2), 6..40),
            rot in 0usize..40,
        ) {
            let mut rows = rows;
            rows.extend([(0.5, 0, 0), (0.5, 1, 1), (0.5, 2, 0)]);
            let (yhat, groups): (Vec<f64>, Vec<usize>) = rows.iter().map(|r| (r.0, r.1)).unzip();
            let y: Vec<f64> = rows.iter().map(|r| f64::from(r.2)).collect();
            let gp = GroupedPredictions::new(&yhat, &groups, 3).unwrap();
            let v = dp_loss(&gp).unwrap().value;
            prop_assert!((0.0..=1.0).contains(&v));

            let mut perm = rows.clone();
            let r = rot % perm.len();
            perm.rotate_left(r);
            perm.reverse();
            let (py, pg): (Vec<f64>, Vec<usize>) = perm.iter().map(|r| (r.0, r.1)).unzip();
            let plabels: Vec<f64> = perm.iter().map(|r| f64::from(r.2)).collect();
            let pgp = GroupedPredictions::new(&py, &pg, 3).unwrap();
            prop_assert!((dp_loss(&pgp).unwrap().value - v).abs() < 1e-12);
            let b1 = bce_loss(&yhat, &y).unwrap().value;
            let b2 = bce_loss(&py, &plabels).unwrap().value;
            prop_assert!((b1 - b2).abs() < 1e-12);
        }

        #[test]
        fn dp_is_two_lipschitz_in_sup_norm(
            a in prop::collection::vec(0.0f64..1.0, 16),
            b in prop::collection::vec(0.0f64..1.0, 16),
            k in 2usize..5,
        ) {
            let groups: Vec<usize> = (0..16).map(|i| i % k).collect();
            let da = dp_loss(&GroupedPredictions::new(&a, &groups, k).unwrap()).unwrap().value;
            let db = dp_loss(&GroupedPredictions::new(&b, &groups, k).unwrap()).unwrap().value;
            let sup = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!((da - db).abs() <= 2.0 * sup + 1e-12);
        }

        #[test]
        fn dp_grad_only_on_attaining_pair(
            yhat in prop::collection::vec(0.0f64..1.0, 20),
        ) {
            let groups: Vec<usize> = (0..20).map(|i| i % 4).collect();
            let gp = GroupedPredictions::new(&yhat, &groups, 4).unwrap();
            let l = dp_loss(&gp).unwrap();
            let touched: std::collections::BTreeSet<usize> =
                (0..20).filter(|&i| l.grad[i] != 0.0).map(|i| groups[i]).collect();
            prop_assert!(touched.is_empty() || touched.len() == 2);
        }
    }
}
