//! Backprop against central differences for BCE, DP and the Lagrangian
//! loss on a small random network.

use fairbinn::losses::{bce_loss, lagrangian_loss, FairnessLoss, GroupedPredictions, LossEval};
use fairbinn::model::{build_network, NetworkSpec};
use fairbinn::ndcore::{backward, finite_diff_grad, forward, predict, Activation, Dense, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type NamedLoss<'a> = (&'a str, Box<dyn Fn(&[f64]) -> fairbinn::Result<LossEval> + 'a>);

fn main() -> fairbinn::Result<()> {
    let spec = NetworkSpec {
        input_width: 4,
        layer_widths: vec![6, 5, 3],
        activations: vec![Activation::Tanh, Activation::Sigmoid, Activation::Softplus],
        fairness_span: 1..2,
    };
    let params = build_network(&spec, 7)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 12;
    let x = Matrix::new(n, 4, (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let y: Vec<f64> = (0..n).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let groups: Vec<usize> = (0..n).map(|i| i % 2).collect();

    let losses: [NamedLoss; 3] = [
        ("bce", Box::new(|p| bce_loss(p, &y))),
        ("dp", Box::new(|p| FairnessLoss::Dp.eval(&GroupedPredictions::new(p, &groups, 2)?))),
        (
            "lagrangian",
            Box::new(|p| lagrangian_loss(p, &y, &GroupedPredictions::new(p, &groups, 2)?, 0.5, FairnessLoss::Dp)),
        ),
    ];
    for (name, loss) in &losses {
        let layers = params.layers();
        let (out, tape) = forward(layers, &x)?;
        let eval = loss(out.data())?;
        let analytic = backward(layers, &tape, &Matrix::column(eval.grad)?)?.flatten(layers);
        let numeric = finite_diff_grad(
            |l: &[Dense]| Ok(loss(predict(l, &x)?.data())?.value),
            layers,
            1e-5,
        )?
        .flatten(layers);
        let worst = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8))
            .fold(0.0, f64::max);
        println!("{name:<11} {} params, worst relative error {worst:.2e}", analytic.len());
    }
    Ok(())
}
