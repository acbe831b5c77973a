//! Evaluation metrics and fairness losses on a hand-made batch.

use fairbinn::losses::{dp_loss, eo_loss, GroupedPredictions};
use fairbinn::metrics::evaluate;

fn main() -> fairbinn::Result<()> {
    let yhat = [0.9, 0.7, 0.4, 0.8, 0.3, 0.2, 0.6, 0.1];
    let y = [1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    let groups = [0, 0, 0, 0, 1, 1, 1, 1];

    let report = evaluate(&yhat, &y, &groups, 2)?;
    println!("accuracy          {:.3}", report.accuracy);
    println!("positive rates    {:?}", report.positive_rates);
    println!("dp difference     {:.3}", report.dp_diff);
    println!("eo (tpr) diff     {:?}", report.eo_diff);
    println!("average precision {:?}", report.avg_precision);

    let gp = GroupedPredictions::new(&yhat, &groups, 2)?;
    let dp = dp_loss(&gp)?;
    println!("dp loss {:.4}, d/dyhat {:?}", dp.value, dp.grad);
    let eo = eo_loss(&gp.with_labels(&y)?)?;
    println!("eo loss {:.4}, d/dyhat {:?}", eo.value, eo.grad);
    Ok(())
}
