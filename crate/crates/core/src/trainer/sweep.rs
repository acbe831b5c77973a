//! η sweeps over several seeds and the Pareto front of their results.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{evaluate_params, train, TrainConfig, TrainTrace};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::NetworkSpec;

/// Outcome of one trained cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub report: EvalReport,
    pub trace: TrainTrace,
}

impl RunSummary {
    pub fn accuracy(&self) -> f64 {
        self.report.accuracy
    }

    pub fn dp(&self) -> f64 {
        self.report.dp_diff
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    /// `Err` holds the failure message; the sweep carries on.
    pub outcome: std::result::Result<RunSummary, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    /// Mean test accuracy over the successful seeds.
    pub mean_accuracy: f64,
    /// Worst-case test DP over the successful seeds.
    pub max_dp: f64,
    pub mean_dp: f64,
    /// Number of successful seeds.
    pub n_seeds: usize,
    pub runs: Vec<SeedRun>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str = "eta,mean_acc,max_dp,n_seeds,mean_dp";
pub const FRONT_HEADER: &str = "eta,mean_acc,max_dp";

impl SweepResult {
    pub fn row(&self, eta: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.eta == eta)
    }

    pub fn succeeded(&self) -> usize {
        self.rows.iter().map(|r| r.n_seeds).sum()
    }

    pub fn failures(&self) -> Vec<(f64, u64, &str)> {
        self.rows
            .iter()
            .flat_map(|r| {
                r.runs.iter().filter_map(move |s| match &s.outcome {
                    Err(e) => Some((r.eta, s.seed, e.as_str())),
                    Ok(_) => None,
                })
            })
            .collect()
    }

    /// Rows with at least one successful seed.
    pub fn aggregated(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.n_seeds > 0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        for r in self.aggregated() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.eta, r.mean_accuracy, r.max_dp, r.n_seeds, r.mean_dp
            ));
        }
        out
    }

    /// Non-dominated rows under (higher mean accuracy, lower max DP).
    pub fn front(&self) -> Vec<&SweepRow> {
        let rows: Vec<&SweepRow> = self.aggregated().collect();
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.mean_accuracy, r.max_dp)).collect();
        pareto_indices(&pts).into_iter().map(|i| rows[i]).collect()
    }

    pub fn front_csv(&self) -> String {
        let mut out = format!("{FRONT_HEADER}\n");
        for r in self.front() {
            out.push_str(&format!("{},{},{}\n", r.eta, r.mean_accuracy, r.max_dp));
        }
        out
    }
}

/// Trains one configuration and evaluates it on `test`.
pub fn run_once(spec: &NetworkSpec, train_ds: &Dataset, test: &Dataset, cfg: &TrainConfig) -> Result<RunSummary> {
    let (params, trace) = train(spec, train_ds, test, cfg)?;
    let report = evaluate_params(&params, test)?;
    Ok(RunSummary { report, trace })
}

fn aggregate(eta: f64, runs: Vec<SeedRun>) -> SweepRow {
    let ok: Vec<&RunSummary> = runs.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let n = ok.len();
    let (mean_accuracy, mean_dp, max_dp) = if n == 0 {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            ok.iter().map(|r| r.accuracy()).sum::<f64>() / n as f64,
            ok.iter().map(|r| r.dp()).sum::<f64>() / n as f64,
            ok.iter().map(|r| r.dp()).fold(f64::NEG_INFINITY, f64::max),
        )
    };
    SweepRow {
        eta,
        mean_accuracy,
        max_dp,
        mean_dp,
        n_seeds: n,
        runs,
    }
}

/// Trains every `(η, seed)` cell with `base` otherwise unchanged.
///
/// Cells run on a pool of `jobs` threads; results are merged by position,
/// so the output does not depend on scheduling. A failing cell is recorded
/// and the rest continue.
pub fn pareto_sweep(
    spec: &NetworkSpec,
    train_ds: &Dataset,
    test: &Dataset,
    base: &TrainConfig,
    etas: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<SweepResult> {
    if etas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one eta and one seed".into()));
    }
    base.validate()?;
    for &eta in etas {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::Config(format!("eta must be finite and non-negative, got {eta}")));
        }
    }
    let cells: Vec<(usize, u64)> = (0..etas.len())
        .flat_map(|e| seeds.iter().map(move |&s| (e, s)))
        .collect();
    let run_cell = |&(e, seed): &(usize, u64)| {
        let mut cfg = base.clone();
        cfg.eta = etas[e];
        cfg.seed = seed;
        SeedRun {
            seed,
            outcome: run_once(spec, train_ds, test, &cfg).map_err(|err| err.to_string()),
        }
    };
    let runs: Vec<SeedRun> = if jobs <= 1 {
        cells.iter().map(run_cell).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run_cell).collect())
    };
    let mut runs = runs.into_iter();
    let rows = etas
        .iter()
        .map(|&eta| aggregate(eta, runs.by_ref().take(seeds.len()).collect()))
        .collect();
    Ok(SweepResult { rows })
}

/// Indices of the non-dominated `(accuracy, dp)` points, in input order.
/// A point is dominated when another is at least as accurate and at least
/// as fair, and strictly better in one of the two.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    // sort by accuracy desc, dp asc; a point survives if its dp beats every
    // strictly more accurate point's dp
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        points[b]
            .0
            .total_cmp(&points[a].0)
            .then(points[a].1.total_cmp(&points[b].1))
    });
    let mut keep = vec![false; points.len()];
    let mut best_dp = f64::INFINITY;
    let mut i = 0;
    while i < order.len() {
        // block of equal accuracy
        let acc = points[order[i]].0;
        let mut j = i;
        while j < order.len() && points[order[j]].0 == acc {
            j += 1;
        }
        let block_min = points[order[i]].1;
        for &idx in &order[i..j] {
            let dp = points[idx].1;
            keep[idx] = dp == block_min && dp < best_dp;
        }
        best_dp = best_dp.min(block_min);
        i = j;
    }
    (0..points.len()).filter(|&i| keep[i]).collect()
}

pub fn pareto_filter(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    pareto_indices(points).into_iter().map(|i| points[i]).collect()
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
