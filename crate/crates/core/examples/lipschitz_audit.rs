//! Lipschitz report of a bounded-activation network: per-layer constants,
//! the certified bound and an empirical estimate below it.

use fairbinn::lipschitz::{dp_sup_norm_pair, lip_report, structural_bound};
use fairbinn::model::{build_network, NetworkSpec};
use fairbinn::ndcore::{predict, Activation, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fairbinn::Result<()> {
    let spec = NetworkSpec {
        input_width: 8,
        layer_widths: vec![16, 16, 8],
        activations: vec![Activation::Tanh, Activation::Sigmoid, Activation::Relu6],
        fairness_span: 1..2,
    };
    let params = build_network(&spec, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let report = lip_report(&spec, &params, 2000, &mut rng)?;
    for l in &report.layers {
        println!(
            "layer {} {:<8} {:?}  L={}  bound={:?}  |W|<={:.3}",
            l.index, l.activation, l.partition, l.lipschitz_constant, l.output_bound, l.weight_norm_bound
        );
    }
    println!("structural closed form {:?}", structural_bound(&spec).value());
    println!("certified bound        {:?}", report.network_bound);
    println!("dp bound               {:?}", report.dp_bound);
    println!("empirical max ratio    {:?}", report.empirical.map(|e| e.max_ratio));

    // dp gap between two nearby networks stays under twice their sup gap
    let mut other = params.clone();
    for layer in other.layers_mut() {
        for w in layer.weights.data_mut() {
            *w += rng.gen_range(-0.05..0.05);
        }
    }
    let x = Matrix::new(500, 8, (0..4000).map(|_| rng.gen_range(-0.3..0.3)).collect())?;
    let groups: Vec<usize> = (0..500).map(|i| i % 2).collect();
    let f1 = predict(params.layers(), &x)?;
    let f2 = predict(other.layers(), &x)?;
    let (gap, bound) = dp_sup_norm_pair(f1.data(), f2.data(), &groups, 2)?;
    println!("|dp(f1) - dp(f2)| = {gap:.4} <= 2 sup|f1 - f2| = {bound:.4}");
    Ok(())
}
