//! CSV and SVG outputs derived from the result documents.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::manifest::{write_json, write_text, CompareDoc, SweepDoc, TrainResult};
use super::svg::{line_chart, scatter_front, Series};
use crate::error::Result;
use crate::trainer::{Mode, RunSummary};

pub const RUNS_HEADER: &str = "eta,seed,status,acc_test,dp_test,final_bce_train,error";
pub const CURVES_HEADER: &str = "epoch,bce_bilevel,bce_lagrangian,bce_none";
pub const COMPARE_TIMING_HEADER: &str = "epoch,seconds_bilevel,seconds_lagrangian,seconds_none";
pub const SUMMARY_HEADER: &str = "mode,final_bce_train,acc_test,dp_test,mean_epoch_seconds,n_seeds";

pub type Outputs = BTreeMap<String, String>;

fn put(dir: &Path, outputs: &mut Outputs, key: &str, file: &str, text: &str) -> Result<()> {
    write_text(&dir.join(file), text)?;
    outputs.insert(key.into(), file.into());
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn render_train(dir: &Path, doc: &TrainResult) -> Result<Outputs> {
    let mut out = Outputs::new();
    let trace = &doc.summary.trace;
    put(dir, &mut out, "trace", "trace.csv", &trace.to_csv())?;
    put(dir, &mut out, "timing", "timing.csv", &trace.timing_csv())?;
    write_json(&dir.join("eval.json"), &doc.summary.report)?;
    out.insert("eval".into(), "eval.json".into());
    let pts = |f: fn(&crate::trainer::EpochRecord) -> f64| -> Vec<(f64, f64)> {
        trace.records.iter().map(|r| (r.epoch as f64, f(r))).collect()
    };
    let series = [
        Series { label: "bce_train".into(), points: pts(|r| r.bce_train) },
        Series { label: "bce_test".into(), points: pts(|r| r.bce_test) },
        Series { label: "dp_test".into(), points: pts(|r| r.dp_test) },
    ];
    let svg = line_chart(&format!("training trace (seed {})", doc.seed), &series, "epoch", "value");
    put(dir, &mut out, "trace_plot", "trace.svg", &svg)?;
    Ok(out)
}

pub fn runs_csv(doc: &SweepDoc) -> String {
    let mut s = format!("{RUNS_HEADER}\n");
    for row in &doc.sweep.rows {
        for run in &row.runs {
            let _ = match &run.outcome {
                Ok(r) => writeln!(
                    s,
                    "{},{},ok,{},{},{},",
                    row.eta,
                    run.seed,
                    r.accuracy(),
                    r.dp(),
                    opt(r.trace.last().map(|l| l.bce_train))
                ),
                Err(e) => writeln!(s, "{},{},failed,,,,{}", row.eta, run.seed, csv_field(e)),
            };
        }
    }
    s
}

pub fn render_sweep(dir: &Path, doc: &SweepDoc) -> Result<Outputs> {
    let mut out = Outputs::new();
    put(dir, &mut out, "sweep", "sweep.csv", &doc.sweep.to_csv())?;
    put(dir, &mut out, "front", "front.csv", &doc.sweep.front_csv())?;
    put(dir, &mut out, "runs", "runs.csv", &runs_csv(doc))?;
    let rows: Vec<_> = doc.sweep.aggregated().collect();
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.max_dp, r.mean_accuracy)).collect();
    let labels: Vec<String> = rows.iter().map(|r| format!("eta={}", r.eta)).collect();
    let front: Vec<(f64, f64)> = doc.sweep.front().iter().map(|r| (r.max_dp, r.mean_accuracy)).collect();
    let svg = scatter_front(
        "accuracy vs demographic parity",
        &pts,
        &labels,
        &front,
        "max DP difference over seeds",
        "mean test accuracy",
    );
    put(dir, &mut out, "scatter", "sweep.svg", &svg)?;
    Ok(out)
}

/// Per-mode numbers averaged over the successful seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSummary {
    pub mode: Mode,
    pub final_bce_train: f64,
    pub acc_test: f64,
    pub dp_test: f64,
    pub mean_epoch_seconds: f64,
    pub n_seeds: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl CompareDoc {
    fn ok_runs(&self, mode: Mode) -> Vec<&RunSummary> {
        self.modes
            .iter()
            .filter(|m| m.mode == mode)
            .flat_map(|m| m.runs.iter().filter_map(|r| r.outcome.as_ref().ok()))
            .collect()
    }

    fn mean_per_epoch(&self, mode: Mode, f: fn(&crate::trainer::EpochRecord) -> f64) -> Vec<f64> {
        let runs = self.ok_runs(mode);
        let epochs = runs.iter().map(|r| r.trace.len()).min().unwrap_or(0);
        (0..epochs)
            .map(|e| mean(runs.iter().map(|r| f(&r.trace.records[e]))))
            .collect()
    }

    /// Mean training BCE per epoch over seeds.
    pub fn mean_curve(&self, mode: Mode) -> Vec<f64> {
        self.mean_per_epoch(mode, |r| r.bce_train)
    }

    pub fn mean_seconds(&self, mode: Mode) -> Vec<f64> {
        self.mean_per_epoch(mode, |r| r.epoch_seconds)
    }

    pub fn summary(&self, mode: Mode) -> ModeSummary {
        let runs = self.ok_runs(mode);
        ModeSummary {
            mode,
            final_bce_train: mean(runs.iter().filter_map(|r| r.trace.last()).map(|l| l.bce_train)),
            acc_test: mean(runs.iter().map(|r| r.accuracy())),
            dp_test: mean(runs.iter().map(|r| r.dp())),
            mean_epoch_seconds: mean(runs.iter().filter_map(|r| r.trace.mean_epoch_seconds(self.warmup))),
            n_seeds: runs.len(),
        }
    }
}

const MODES: [Mode; 3] = [Mode::Bilevel, Mode::Lagrangian, Mode::None];

fn per_epoch_csv(header: &str, cols: &[Vec<f64>]) -> String {
    let mut s = format!("{header}\n");
    let n = cols.iter().map(Vec::len).max().unwrap_or(0);
    for e in 0..n {
        let cells: Vec<String> = cols.iter().map(|c| opt(c.get(e).copied())).collect();
        let _ = writeln!(s, "{},{}", e + 1, cells.join(","));
    }
    s
}

pub fn curves_csv(doc: &CompareDoc) -> String {
    let cols: Vec<Vec<f64>> = MODES.iter().map(|&m| doc.mean_curve(m)).collect();
    per_epoch_csv(CURVES_HEADER, &cols)
}

pub fn summary_csv(doc: &CompareDoc) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for m in MODES {
        let r = doc.summary(m);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            m, r.final_bce_train, r.acc_test, r.dp_test, r.mean_epoch_seconds, r.n_seeds
        );
    }
    s
}

pub fn render_compare(dir: &Path, doc: &CompareDoc) -> Result<Outputs> {
    let mut out = Outputs::new();
    put(dir, &mut out, "curves", "curves.csv", &curves_csv(doc))?;
    let secs: Vec<Vec<f64>> = MODES.iter().map(|&m| doc.mean_seconds(m)).collect();
    put(dir, &mut out, "timing", "timing.csv", &per_epoch_csv(COMPARE_TIMING_HEADER, &secs))?;
    put(dir, &mut out, "summary", "summary.csv", &summary_csv(doc))?;
    let series: Vec<Series> = MODES
        .iter()
        .map(|&m| Series {
            label: m.to_string(),
            points: doc
                .mean_curve(m)
                .iter()
                .enumerate()
                .map(|(e, &v)| ((e + 1) as f64, v))
                .collect(),
        })
        .collect();
    let svg = line_chart("training BCE by mode", &series, "epoch", "mean training BCE");
    put(dir, &mut out, "curves_plot", "compare.svg", &svg)?;
    Ok(out)
}
