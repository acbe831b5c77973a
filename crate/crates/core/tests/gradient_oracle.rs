//! Analytic gradients of every loss against central differences on random
//! small networks.

use fairbinn::losses::{bce_loss, lagrangian_loss, FairnessLoss, GroupedPredictions, LossEval};
use fairbinn::ndcore::{backward, finite_diff_grad, forward, predict, Activation, Dense, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Loss<'a> = Box<dyn Fn(&[f64]) -> LossEval + 'a>;

const SMOOTH: [Activation; 4] = [
    Activation::Sigmoid,
    Activation::Tanh,
    Activation::Softplus,
    Activation::Identity,
];

fn random_layers(rng: &mut ChaCha8Rng) -> Vec<Dense> {
    let depth = rng.gen_range(1..=3);
    let mut widths = vec![rng.gen_range(1..=8)];
    for _ in 0..depth {
        widths.push(rng.gen_range(1..=8));
    }
    widths.push(1);
    widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let act = if i + 2 == widths.len() {
                Activation::Sigmoid
            } else {
                SMOOTH[rng.gen_range(0..SMOOTH.len())]
            };
            let m = Matrix::new(w[0], w[1], (0..w[0] * w[1]).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let b = (0..w[1]).map(|_| rng.gen_range(-0.5..0.5)).collect();
            Dense::new(m, b, act).unwrap()
        })
        .collect()
}

/// Group means at least this far apart keep DP/EO away from their kinks.
fn well_separated(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).all(|w| w[1] - w[0] > 1e-3)
}

fn group_means(yhat: &[f64], groups: &[usize], mask: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut sum = [0.0; 2];
    let mut n = [0.0; 2];
    for (i, (&p, &g)) in yhat.iter().zip(groups).enumerate() {
        if mask(i) {
            sum[g] += p;
            n[g] += 1.0;
        }
    }
    vec![sum[0] / n[0], sum[1] / n[1]]
}

#[test]
fn fifty_random_networks_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 50 {
        let layers = random_layers(&mut rng);
        let n = rng.gen_range(4..=16);
        let d = layers[0].in_width();
        let x = Matrix::new(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        // both groups and both labels in each group
        let groups: Vec<usize> = (0..n).map(|i| (i / 2) % 2).collect();
        let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let (out, tape) = forward(&layers, &x).unwrap();
        let yhat = out.data().to_vec();
        let dp_gap = group_means(&yhat, &groups, |_| true);
        let tpr = group_means(&yhat, &groups, |i| y[i] == 1.0);
        let fpr = group_means(&yhat, &groups, |i| y[i] == 0.0);
        let eo_terms = [(tpr[0] - tpr[1]).abs(), (fpr[0] - fpr[1]).abs()];
        if !well_separated(&dp_gap) || !well_separated(&tpr) || !well_separated(&fpr) || (eo_terms[0] - eo_terms[1]).abs() < 1e-3 {
            continue;
        }
        let lambda = rng.gen_range(0.0..2.0);
        let losses: [Loss; 4] = [
            Box::new(|p| bce_loss(p, &y).unwrap()),
            Box::new(|p| FairnessLoss::Dp.eval(&GroupedPredictions::new(p, &groups, 2).unwrap()).unwrap()),
            Box::new(|p| {
                let gp = GroupedPredictions::new(p, &groups, 2).unwrap().with_labels(&y).unwrap();
                FairnessLoss::Eo.eval(&gp).unwrap()
            }),
            Box::new(|p| {
                let gp = GroupedPredictions::new(p, &groups, 2).unwrap();
                lagrangian_loss(p, &y, &gp, lambda, FairnessLoss::Dp).unwrap()
            }),
        ];
        for (li, loss) in losses.iter().enumerate() {
            let g = loss(&yhat).grad;
            let analytic = backward(&layers, &tape, &Matrix::column(g).unwrap()).unwrap().flatten(&layers);
            let numeric = finite_diff_grad(|l: &[Dense]| Ok(loss(predict(l, &x)?.data()).value), &layers, 1e-5)
                .unwrap()
                .flatten(&layers);
            for (j, (a, b)) in analytic.iter().zip(&numeric).enumerate() {
                let scale = a.abs().max(b.abs()).max(1e-6);
                assert!(
                    (a - b).abs() <= 1e-4 * scale + 1e-9,
                    "case {checked} loss {li} param {j}: analytic {a} vs numeric {b}"
                );
            }
        }
        checked += 1;
    }
}
