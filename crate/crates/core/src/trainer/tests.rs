use super::*;
use crate::model::NetworkSpec;
use crate::ndcore::{Activation, Dense};
use crate::optim::OptimizerKind;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

/// Two features plus noise; the label leans on the group through `bias`.
fn toy(n: usize, seed: u64, bias: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(3 * n);
    let mut y = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for _ in 0..n {
        let a = usize::from(rng.gen_bool(0.5));
        let x0: f64 = rng.gen();
        let x1: f64 = rng.gen();
        let proxy = if a == 1 { 0.8 } else { 0.2 } + rng.gen_range(-0.1..0.1);
        let score = x0 + 0.3 * x1 + bias * a as f64 + rng.gen_range(-0.2..0.2);
        x.extend_from_slice(&[x0, x1, proxy]);
        y.push(if score > 0.65 + bias / 2.0 { 1.0 } else { 0.0 });
        g.push(a);
    }
    Dataset::new(Matrix::new(n, 3, x).unwrap(), y, g, 2).unwrap()
}

fn small_spec() -> NetworkSpec {
    NetworkSpec {
        input_width: 3,
        layer_widths: vec![6, 6, 4],
        activations: vec![Activation::Relu; 3],
        fairness_span: 1..2,
    }
}

fn cfg(mode: Mode) -> TrainConfig {
    TrainConfig {
        epochs: 3,
        batch_size: 16,
        lr_accuracy: 1e-2,
        lr_fairness: 1e-3,
        eta: 10.0,
        lambda: 1e-2,
        seed: 5,
        mode,
        ..TrainConfig::default()
    }
}

#[test]
fn default_config_matches_adult_table() {
    let c = TrainConfig::default();
    assert_eq!((c.epochs, c.batch_size), (50, 100));
    assert_eq!((c.lr_accuracy, c.lr_fairness, c.eta), (1e-3, 1e-5, 100.0));
    assert!((c.fairness_rate() - 1e-3).abs() < 1e-18);
    assert_eq!(c.matched(Mode::Lagrangian).lambda, c.fairness_rate());
}

#[test]
fn invalid_configs_rejected() {
    for bad in [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { lr_accuracy: 0.0, ..TrainConfig::default() },
        TrainConfig { eta: -1.0, ..TrainConfig::default() },
        TrainConfig { lambda: f64::NAN, ..TrainConfig::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
    assert!(TrainConfig { eta: 0.0, lr_fairness: 0.0, ..TrainConfig::default() }
        .validate()
        .is_ok());
}

#[test]
fn mode_round_trips() {
    for m in [Mode::Bilevel, Mode::Lagrangian, Mode::None] {
        assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
    }
    assert!("joint".parse::<Mode>().is_err());
}

#[test]
fn zero_epochs_return_initialization() {
    let ds = toy(40, 1, 0.0);
    let spec = small_spec();
    let c = TrainConfig { epochs: 0, ..cfg(Mode::Bilevel) };
    let (params, trace) = train(&spec, &ds, &ds, &c).unwrap();
    assert_eq!(params, build_network(&spec, c.seed).unwrap());
    assert!(trace.is_empty());
}

#[test]
fn width_mismatch_is_config_error() {
    let ds = toy(40, 1, 0.0);
    let mut spec = small_spec();
    spec.input_width = 4;
    assert!(matches!(
        train(&spec, &ds, &ds, &cfg(Mode::Bilevel)),
        Err(Error::Config(_))
    ));
}

#[test]
fn eo_needs_binary_groups() {
    let mut ds = toy(40, 1, 0.0);
    ds.k = 3;
    ds.groups[0] = 2;
    let c = TrainConfig { fairness_loss: FairnessLoss::Eo, ..cfg(Mode::Bilevel) };
    assert!(matches!(
        Trainer::new(&small_spec(), &c).unwrap().run_epoch(&ds),
        Err(Error::Config(_))
    ));
}

#[test]
fn runs_are_deterministic() {
    let ds = toy(80, 2, 0.3);
    let test = toy(40, 3, 0.3);
    for mode in [Mode::Bilevel, Mode::Lagrangian, Mode::None] {
        let (p1, t1) = train(&small_spec(), &ds, &test, &cfg(mode)).unwrap();
        let (p2, t2) = train(&small_spec(), &ds, &test, &cfg(mode)).unwrap();
        assert_eq!(p1.to_bytes(), p2.to_bytes());
        assert_eq!(t1.to_csv(), t2.to_csv());
        assert_eq!(t1.len(), 3);
    }
}

#[test]
fn frozen_follower_leaves_fairness_layers_alone() {
    let ds = toy(64, 4, 0.3);
    let spec = small_spec();
    for c in [
        TrainConfig { eta: 0.0, ..cfg(Mode::Bilevel) },
        TrainConfig { lr_fairness: 0.0, ..cfg(Mode::Bilevel) },
    ] {
        let init = build_network(&spec, c.seed).unwrap();
        let (params, _) = train(&spec, &ds, &ds, &c).unwrap();
        assert_eq!(params.checksum(Partition::Fairness), init.checksum(Partition::Fairness));
        assert_ne!(params.checksum(Partition::Accuracy), init.checksum(Partition::Accuracy));
    }
}

/// With the follower frozen, the accuracy player follows plain BCE steps
/// on its own shuffle, replicated here by hand.
#[test]
fn frozen_follower_matches_accuracy_only_replay() {
    let ds = toy(50, 6, 0.2);
    let spec = small_spec();
    let c = TrainConfig { eta: 0.0, ..cfg(Mode::Bilevel) };
    let mut trainer = Trainer::new(&spec, &c).unwrap();
    for _ in 0..c.epochs {
        trainer.run_epoch(&ds).unwrap();
    }

    let mut params = build_network(&spec, c.seed).unwrap();
    let mut opt =
        LayerOptimizer::for_partition(c.optimizer, c.lr_accuracy, &params, Partition::Accuracy).unwrap();
    let mask = params.mask(Partition::Accuracy);
    let mut rng = EpochRngs::new(c.seed).accuracy;
    for _ in 0..c.epochs {
        for b in minibatch_indices(ds.len(), c.batch_size, &mut rng).unwrap() {
            let (x, y, _) = ds.batch(&b);
            let (out, tape) = ndcore::forward(params.layers(), &x).unwrap();
            let l = bce_loss(out.data(), &y).unwrap();
            let all = ndcore::backward(params.layers(), &tape, &Matrix::column(l.grad).unwrap()).unwrap();
            let entries: Vec<_> = all
                .layers
                .into_iter()
                .enumerate()
                .filter(|(i, _)| mask[*i])
                .map(|(i, g)| (i, g.unwrap()))
                .collect();
            opt.step(&mut params, &entries).unwrap();
        }
    }
    assert_eq!(trainer.params().to_bytes(), params.to_bytes());
}

#[test]
fn zero_lambda_lagrangian_equals_unconstrained() {
    let ds = toy(70, 7, 0.4);
    let a = train(&small_spec(), &ds, &ds, &TrainConfig { lambda: 0.0, ..cfg(Mode::Lagrangian) }).unwrap();
    let b = train(&small_spec(), &ds, &ds, &cfg(Mode::None)).unwrap();
    assert_eq!(a.0.to_bytes(), b.0.to_bytes());
    assert_eq!(a.1.to_csv(), b.1.to_csv());
}

#[test]
fn large_lambda_shrinks_dp() {
    let ds = toy(400, 8, 0.5);
    let base = TrainConfig { epochs: 30, batch_size: 50, ..cfg(Mode::Lagrangian) };
    let dp = |lambda: f64| {
        let (p, _) = train(&small_spec(), &ds, &ds, &TrainConfig { lambda, ..base.clone() }).unwrap();
        evaluate_params(&p, &ds).unwrap().dp_diff
    };
    let free = dp(0.0);
    let fair = dp(20.0);
    assert!(fair < free, "{fair} vs {free}");
}

#[test]
fn unconstrained_fits_separable_data() {
    let n = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut g = Vec::new();
    for i in 0..n {
        let v: f64 = rng.gen_range(-1.0..1.0);
        let v = if v.abs() < 0.2 { v.signum() * 0.2 + v } else { v };
        x.extend_from_slice(&[v, rng.gen_range(-1.0..1.0)]);
        y.push(if v > 0.0 { 1.0 } else { 0.0 });
        g.push(i % 2);
    }
    let ds = Dataset::new(Matrix::new(n, 2, x).unwrap(), y, g, 2).unwrap();
    let spec = NetworkSpec {
        input_width: 2,
        layer_widths: vec![8, 8],
        activations: vec![Activation::Tanh; 2],
        fairness_span: 1..2,
    };
    let c = TrainConfig { epochs: 60, batch_size: 20, lr_accuracy: 2e-2, ..cfg(Mode::None) };
    let (p, _) = train(&spec, &ds, &ds, &c).unwrap();
    assert_eq!(evaluate_params(&p, &ds).unwrap().accuracy, 1.0);
}

#[test]
fn players_never_touch_each_other() {
    let ds = toy(120, 10, 0.3);
    let mut trainer = Trainer::new(&small_spec(), &cfg(Mode::Bilevel)).unwrap();
    let mut audit = IsolationAudit::default();
    for _ in 0..2 {
        trainer.run_epoch_audited(&ds, Some(&mut audit)).unwrap();
    }
    assert_eq!(audit.steps, 2 * 120usize.div_ceil(16));
    assert_eq!(audit.violations(), 0);
}

#[test]
fn empty_group_batches_are_skipped_and_counted() {
    // one member of group 1 among 30 rows, batches of 3
    let mut ds = toy(30, 11, 0.0);
    for g in ds.groups.iter_mut() {
        *g = 0;
    }
    ds.groups[7] = 1;
    let c = TrainConfig { batch_size: 3, epochs: 1, ..cfg(Mode::Bilevel) };
    let mut trainer = Trainer::new(&small_spec(), &c).unwrap();
    let stats = trainer.run_epoch(&ds).unwrap();
    assert_eq!(stats.steps, 10);
    assert_eq!(stats.skipped_batches, 9);

    let mut lag = Trainer::new(&small_spec(), &TrainConfig { mode: Mode::Lagrangian, ..c }).unwrap();
    assert_eq!(lag.run_epoch(&ds).unwrap().skipped_batches, 9);
}

/// One input, a single identity fairness unit, then the sigmoid output:
/// `ŷ = σ(w_a (w_f x + b_f) + b_a)`. Plain SGD, one full batch.
#[test]
fn one_step_matches_hand_gradients() {
    let spec = NetworkSpec {
        input_width: 1,
        layer_widths: vec![1],
        activations: vec![Activation::Identity],
        fairness_span: 0..1,
    };
    let (w_f, b_f, w_a, b_a) = (0.7, -0.1, 1.3, 0.2);
    let layers = vec![
        Dense::new(Matrix::new(1, 1, vec![w_f]).unwrap(), vec![b_f], Activation::Identity).unwrap(),
        Dense::new(Matrix::new(1, 1, vec![w_a]).unwrap(), vec![b_a], Activation::Sigmoid).unwrap(),
    ];
    let params = PartitionedParams::new(layers, spec.partition()).unwrap();
    let xs = [0.5, -1.0, 2.0, 0.25];
    let ys = [1.0, 0.0, 1.0, 0.0];
    let gs = [0usize, 0, 1, 1];
    let ds = Dataset::new(Matrix::new(4, 1, xs.to_vec()).unwrap(), ys.to_vec(), gs.to_vec(), 2).unwrap();
    let c = TrainConfig {
        epochs: 1,
        batch_size: 4,
        lr_accuracy: 0.1,
        lr_fairness: 0.05,
        eta: 2.0,
        optimizer: OptimizerKind::Sgd,
        mode: Mode::Bilevel,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::with_params(&spec, &c, params).unwrap();
    trainer.run_epoch(&ds).unwrap();

    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    // accuracy: dBCE/dz = (p - y)/n
    let h: Vec<f64> = xs.iter().map(|x| w_f * x + b_f).collect();
    let p: Vec<f64> = h.iter().map(|h| sig(w_a * h + b_a)).collect();
    let gw_a: f64 = (0..4).map(|i| (p[i] - ys[i]) * h[i]).sum::<f64>() / 4.0;
    let gb_a: f64 = (0..4).map(|i| p[i] - ys[i]).sum::<f64>() / 4.0;
    let w_a1 = w_a - 0.1 * gw_a;
    let b_a1 = b_a - 0.1 * gb_a;
    // fairness: DP = mean_hi p - mean_lo p at the updated θ_a
    let p1: Vec<f64> = h.iter().map(|h| sig(w_a1 * h + b_a1)).collect();
    let m0 = (p1[0] + p1[1]) / 2.0;
    let m1 = (p1[2] + p1[3]) / 2.0;
    let s: Vec<f64> = (0..4)
        .map(|i| {
            let sign = if (gs[i] == 1) == (m1 > m0) { 1.0 } else { -1.0 };
            sign / 2.0
        })
        .collect();
    let dz: Vec<f64> = (0..4).map(|i| s[i] * p1[i] * (1.0 - p1[i]) * w_a1).collect();
    let gw_f: f64 = (0..4).map(|i| dz[i] * xs[i]).sum();
    let gb_f: f64 = dz.iter().sum();
    let w_f1 = w_f - 0.1 * gw_f;
    let b_f1 = b_f - 0.1 * gb_f;

    let got = trainer.params().flatten();
    let want = [w_f1, b_f1, w_a1, b_a1];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn trace_csv_layout() {
    let ds = toy(40, 12, 0.2);
    let (_, t) = train(&small_spec(), &ds, &ds, &TrainConfig { epochs: 2, ..cfg(Mode::Bilevel) }).unwrap();
    let csv = t.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], TRACE_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    assert_eq!(t.timing_csv().lines().next().unwrap(), TIMING_HEADER);
    assert!(t.records.iter().all(|r| r.epoch_seconds >= 0.0));
    assert!(t.mean_epoch_seconds(1).is_some());
    assert!(t.mean_epoch_seconds(2).is_none());
}

#[test]
fn pareto_examples() {
    assert_eq!(pareto_filter(&[(0.8, 0.1), (0.7, 0.2)]), vec![(0.8, 0.1)]);
    assert_eq!(pareto_filter(&[(0.8, 0.1), (0.85, 0.2)]), vec![(0.8, 0.1), (0.85, 0.2)]);
    assert_eq!(pareto_filter(&[(0.8, 0.1), (0.8, 0.1)]).len(), 2);
    assert!(pareto_filter(&[]).is_empty());
}

fn brute_front(points: &[(f64, f64)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points.iter().any(|q| {
                q.0 >= points[i].0 && q.1 <= points[i].1 && (q.0 > points[i].0 || q.1 < points[i].1)
            })
        })
        .collect()
}

proptest! {
    #[test]
    fn pareto_matches_brute_force(pts in prop::collection::vec((0u8..20, 0u8..20), 0..100)) {
        let pts: Vec<(f64, f64)> = pts.into_iter().map(|(a, d)| (a as f64 / 20.0, d as f64 / 20.0)).collect();
        prop_assert_eq!(pareto_indices(&pts), brute_front(&pts));
    }
}

#[test]
fn spearman_examples() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 300.0]), Some(1.0));
    assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
    // ties get average ranks: x ranks 1, 2.5, 2.5, 4
    let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
    let expect = 4.5 / (4.5f64 * 5.0).sqrt();
    assert!((r - expect).abs() < 1e-12);
}

#[test]
fn sweep_aggregates_and_ignores_scheduling() {
    let ds = toy(60, 13, 0.3);
    let test = toy(60, 14, 0.3);
    let base = TrainConfig { epochs: 2, ..cfg(Mode::Bilevel) };
    let seeds = [1, 2, 3];
    let serial = pareto_sweep(&small_spec(), &ds, &test, &base, &[0.0, 50.0], &seeds, 1).unwrap();
    let parallel = pareto_sweep(&small_spec(), &ds, &test, &base, &[0.0, 50.0], &seeds, 3).unwrap();
    let fingerprint = |r: &SweepResult| {
        r.rows
            .iter()
            .flat_map(|row| &row.runs)
            .map(|run| {
                let ok = run.outcome.as_ref().unwrap();
                (run.seed, ok.report.clone(), ok.trace.to_csv())
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(fingerprint(&serial), fingerprint(&parallel));
    assert_eq!(serial.to_csv(), parallel.to_csv());
    for row in &serial.rows {
        let ok: Vec<&RunSummary> = row.runs.iter().map(|r| r.outcome.as_ref().unwrap()).collect();
        let mean = ok.iter().map(|r| r.accuracy()).sum::<f64>() / 3.0;
        let max = ok.iter().map(|r| r.dp()).fold(0.0, f64::max);
        assert_eq!(row.n_seeds, 3);
        assert!((row.mean_accuracy - mean).abs() < 1e-15);
        assert_eq!(row.max_dp, max);
    }
    let csv = serial.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "eta,mean_acc,max_dp,n_seeds,mean_dp");
    assert_eq!(csv.lines().count(), 3);
    assert!(!serial.front().is_empty());
}

#[test]
fn eta_zero_sweep_matches_frozen_run() {
    let ds = toy(60, 15, 0.3);
    let base = TrainConfig { epochs: 2, ..cfg(Mode::Bilevel) };
    let sweep = pareto_sweep(&small_spec(), &ds, &ds, &base, &[0.0], &[4], 1).unwrap();
    let frozen = run_once(&small_spec(), &ds, &ds, &TrainConfig { eta: 0.0, seed: 4, ..base }).unwrap();
    assert_eq!(sweep.rows[0].max_dp, frozen.dp());
}

#[test]
fn failing_cells_are_recorded() {
    let ds = toy(60, 16, 0.3);
    let base = TrainConfig { epochs: 1, ..cfg(Mode::Bilevel) };
    // group 2 never appears in the test set, so its DP is undefined
    let mut broken = toy(10, 17, 0.3);
    broken.k = 3;
    let res = pareto_sweep(&small_spec(), &ds, &broken, &base, &[1.0], &[1, 2], 1).unwrap();
    assert_eq!(res.rows[0].n_seeds, 0);
    assert_eq!(res.failures().len(), 2);
    assert!(res.to_csv().lines().count() == 1);
    assert!(pareto_sweep(&small_spec(), &ds, &ds, &base, &[], &[1], 1).is_err());
}
