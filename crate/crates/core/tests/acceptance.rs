//! Acceptance criteria. Each criterion prints one PASS/FAIL line (WARN or
//! SKIP where a criterion is advisory or needs external data); the test
//! fails if any required criterion fails.

use std::io::Write;
use std::time::{Duration, Instant};

use hsicgru::dataset::{
    benchmark_splits, load_many, split_leave_one_battery_out, PaddedBatch, Sequence, SynthConfig,
};
use hsicgru::hsic::{hsic_biased, BandwidthPolicy, SampleSet};
use hsicgru::metrics::eval_metrics;
use hsicgru::numerics::Rng;
use hsicgru::recurrent::{CellKind, Network};
use hsicgru::training::{
    builtin_preset, central_differences, composite_loss, evaluate, info_plane_trace, train,
    EpochLog, TrainConfig,
};

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn line(&mut self, id: u32, status: &str, detail: &str) {
        // written to the raw handle so the line shows up without --nocapture
        let _ = writeln!(std::io::stderr(), "criterion {id}: {status} - {detail}");
        if status == "FAIL" {
            self.failures.push(format!("criterion {id}: {detail}"));
        }
    }

    fn check(&mut self, id: u32, ok: bool, detail: &str) {
        self.line(id, if ok { "PASS" } else { "FAIL" }, detail);
    }
}

/// `tr(K H L H) / (n - 1)^2` with every matrix built and multiplied by explicit loops.
fn naive_hsic(x: &[Vec<f64>], y: &[Vec<f64>], sx: f64, sy: f64) -> f64 {
    let n = x.len();
    let kernel = |a: &[f64], b: &[f64], s: f64| {
        let mut d = 0.0;
        for k in 0..a.len() {
            d += (a[k] - b[k]) * (a[k] - b[k]);
        }
        (-d / (2.0 * s * s)).exp()
    };
    let mut kx = vec![vec![0.0; n]; n];
    let mut ly = vec![vec![0.0; n]; n];
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            kx[i][j] = kernel(&x[i], &x[j], sx);
            ly[i][j] = kernel(&y[i], &y[j], sy);
            h[i][j] = if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64;
        }
    }
    let mul = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| {
        let mut c = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    };
    let prod = mul(&mul(&mul(&kx, &h), &ly), &h);
    let mut trace = 0.0;
    for (i, row) in prod.iter().enumerate() {
        trace += row[i];
    }
    trace / ((n - 1) as f64 * (n - 1) as f64)
}

fn criterion_1(r: &mut Report) {
    let start = Instant::now();
    let mut rng = Rng::new(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let draw = |rng: &mut Rng| -> Vec<Vec<f64>> {
            (0..10).map(|_| (0..3).map(|_| rng.normal()).collect()).collect()
        };
        let x = draw(&mut rng);
        let y = draw(&mut rng);
        let sx = rng.uniform(0.5, 2.0);
        let sy = rng.uniform(0.5, 2.0);
        let got = hsic_biased(
            &SampleSet::from_rows(&x).unwrap(),
            &SampleSet::from_rows(&y).unwrap(),
            sx,
            sy,
        )
        .unwrap();
        let want = naive_hsic(&x, &y, sx, sy);
        worst = worst.max((got - want).abs() / want.abs());
    }
    let elapsed = start.elapsed();
    r.check(
        1,
        worst <= 1e-12 && elapsed < Duration::from_secs(1),
        &format!("HSIC vs naive oracle, worst relative error {worst:.2e} (<= 1e-12), {elapsed:.2?} (< 1 s)"),
    );
}

fn criterion_2(r: &mut Report) {
    let x = SampleSet::from_rows(&[[0.0], [1.0]]).unwrap();
    let got = hsic_biased(&x, &x, 1.0, 1.0).unwrap();
    let want = (1.0 - (-0.5f64).exp()).powi(2);
    let err = (got - want).abs();
    r.check(
        2,
        err <= 1e-12 && (want - 0.154818).abs() < 1e-6,
        &format!("two-point HSIC {got:.12} vs (1 - e^-1/2)^2 = {want:.12}, error {err:.1e} (<= 1e-12)"),
    );
}

fn random_batch(rng: &mut Rng, lengths: &[usize], dim: usize) -> PaddedBatch {
    let seqs: Vec<Sequence> = lengths
        .iter()
        .enumerate()
        .map(|(i, &len)| Sequence {
            cycle_index: i + 1,
            dim,
            values: (0..len * dim).map(|_| rng.uniform(0.0, 1.0)).collect(),
            label: rng.uniform(0.8, 1.1),
        })
        .collect();
    let refs: Vec<&Sequence> = seqs.iter().collect();
    PaddedBatch::from_sequences(&refs).unwrap()
}

/// `|a - n| / max(|a|, |n|)`, with an absolute floor of 1e-8 on the denominator.
fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn criterion_3(r: &mut Report) {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut where_worst = String::new();
    let mut rng = Rng::new(3);
    for kind in CellKind::ALL {
        for beta in [0.0, 0.001, 2.0] {
            let net = Network::init(kind, 3, 2, 3, &mut rng).unwrap();
            let batch = random_batch(&mut rng, &[4, 9, 6, 2, 7, 5], 3);
            let policy = BandwidthPolicy::MedianHeuristic;
            let analytic = composite_loss(&net, &batch, Some(beta), policy)
                .unwrap()
                .grads
                .flat_params();
            let numeric = central_differences(&net.flat_params(), 1e-5, |p| {
                let mut probe = net.clone();
                probe.set_flat_params(p).unwrap();
                composite_loss(&probe, &batch, Some(beta), policy).unwrap().loss
            });
            for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                let e = relative_error(*a, *n);
                if e > worst {
                    worst = e;
                    where_worst = format!("{kind} beta {beta} param {i}");
                }
            }
        }
    }
    let elapsed = start.elapsed();
    r.check(
        3,
        worst <= 1e-4 && elapsed < Duration::from_secs(30),
        &format!(
            "full-objective gradient check, worst relative error {worst:.2e} at {where_worst} (<= 1e-4), {elapsed:.2?} (< 30 s)"
        ),
    );
}

fn criterion_4(r: &mut Report) {
    let mut worst: f64 = 0.0;
    let mut rng = Rng::new(4);
    for kind in CellKind::ALL {
        let net = Network::init(kind, 3, 2, 3, &mut rng).unwrap();
        let batch = random_batch(&mut rng, &[4, 9, 6, 2, 7, 5], 3);
        let policy = BandwidthPolicy::MedianHeuristic;
        let base = composite_loss(&net, &batch, Some(0.001), policy).unwrap();
        let base_grads = base.grads.flat_params();
        for extra in 1..=10 {
            let padded = batch.with_extra_padding(extra);
            let out = composite_loss(&net, &padded, Some(0.001), policy).unwrap();
            for (a, b) in base.predictions.iter().zip(&out.predictions) {
                worst = worst.max((a - b).abs());
            }
            for (a, b) in base_grads.iter().zip(out.grads.flat_params()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    r.check(
        4,
        worst < 1e-10,
        &format!("1..=10 extra pad steps, max change in predictions and gradients {worst:.1e} (< 1e-10)"),
    );
}

fn criterion_5(r: &mut Report) {
    let m = eval_metrics(&[2.0, 4.0], &[1.0, 5.0]).unwrap();
    let smape = 100.0 * (2.0 / 3.0 + 2.0 / 9.0) / 2.0;
    let mut ok = m.mae == 1.0
        && m.mse == 1.0
        && m.rmse == 1.0
        && (m.mape - 37.5).abs() <= 1e-12
        && (m.smape - smape).abs() <= 1e-12;
    let mut rng = Rng::new(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 1 + rng.below(60);
        let y: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 1.2)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 1.2)).collect();
        let e = eval_metrics(&y, &p).unwrap();
        let mean_rel = e.relative_errors.iter().sum::<f64>() / n as f64;
        worst = worst.max((e.rmse * e.rmse - e.mse).abs()).max((mean_rel - e.mae).abs());
    }
    ok &= worst <= 1e-12;
    r.check(
        5,
        ok,
        &format!(
            "MAE {} RMSE {} MAPE {} SMAPE {:.6}; identities on 100 random series, worst {worst:.1e} (<= 1e-12)",
            m.mae, m.rmse, m.mape, m.smape
        ),
    );
}

const SEEDS: u64 = 5;
const BENCH_STRIDE: usize = 3;

/// GRU from the CS preset on the synthetic benchmark; only the stride is
/// raised to keep the runs short.
fn bench_config(seed: u64, beta: Option<f64>) -> TrainConfig {
    let preset = builtin_preset("cs").unwrap();
    TrainConfig {
        seed,
        beta,
        stride: BENCH_STRIDE,
        channels: Vec::new(),
        ..preset.model("gru").unwrap().clone()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

struct BenchRun {
    test_mae: f64,
    logs: Vec<EpochLog>,
}

fn bench_run(seed: u64, beta: Option<f64>) -> BenchRun {
    let splits = benchmark_splits(&SynthConfig::default(), 100 + seed).unwrap();
    let out = train(&bench_config(seed, beta), &splits).unwrap();
    let (report, _) = evaluate(&out.model, std::slice::from_ref(&splits.test)).unwrap();
    BenchRun {
        test_mae: report.mae,
        logs: out.logs,
    }
}

fn criterion_6(r: &mut Report) -> Vec<BenchRun> {
    let start = Instant::now();
    let mut plain = Vec::new();
    let mut hsic = Vec::new();
    for seed in 0..SEEDS {
        plain.push(bench_run(seed, Some(0.0)));
        hsic.push(bench_run(seed, Some(0.001)));
    }
    let elapsed = start.elapsed();
    let final_hsic = |runs: &[BenchRun]| runs.iter().map(|b| b.logs.last().unwrap().hsic_xh).collect::<Vec<_>>();
    let mae = |runs: &[BenchRun]| runs.iter().map(|b| b.test_mae).collect::<Vec<_>>();
    let (mae0, mae1) = (median(mae(&plain)), median(mae(&hsic)));
    let (h0, h1) = (median(final_hsic(&plain)), median(final_hsic(&hsic)));
    let reduction = 1.0 - h1 / h0;
    for seed in 0..SEEDS as usize {
        let _ = writeln!(
            std::io::stderr(),
            "  seed {seed}: test MAE {:.5} / {:.5}, final HSIC(X;H) {:.5} / {:.5} (beta 0 / 0.001)",
            plain[seed].test_mae,
            hsic[seed].test_mae,
            plain[seed].logs.last().unwrap().hsic_xh,
            hsic[seed].logs.last().unwrap().hsic_xh
        );
    }
    r.check(
        6,
        mae1 <= 1.05 * mae0 && reduction >= 0.2 && elapsed < Duration::from_secs(300),
        &format!(
            "median test MAE {mae1:.5} vs {mae0:.5} (ratio {:.3} <= 1.05), median final HSIC {h1:.5} vs {h0:.5} ({:.1}% lower, >= 20%), {elapsed:.1?} (< 300 s)",
            mae1 / mae0,
            100.0 * reduction
        ),
    );
    plain
}

fn criterion_7(r: &mut Report, plain: &[BenchRun]) {
    let mut peaks = Vec::new();
    let mut shaped = 0;
    for run in plain {
        let trace = info_plane_trace(&run.logs).unwrap();
        let last = run.logs.last().unwrap().epoch;
        if trace.turning_point > 5 && trace.turning_point < last {
            shaped += 1;
        }
        peaks.push(trace.turning_point);
    }
    let detail = format!(
        "smoothed HSIC(X;H) peaks at epochs {peaks:?}; rise-then-fall in {shaped} of {} seeds",
        plain.len()
    );
    r.line(7, if shaped == plain.len() { "PASS" } else { "WARN" }, &detail);
}

fn criterion_8(r: &mut Report, plain: &[BenchRun]) {
    let without_term = bench_run(0, None);
    let identical = without_term.logs == plain[0].logs
        && without_term.test_mae.to_bits() == plain[0].test_mae.to_bits();
    r.check(
        8,
        identical,
        &format!(
            "beta = 0 with the HSIC path vs plain GRU, seed 0, {} epochs: logs bit-identical = {identical}",
            plain[0].logs.len()
        ),
    );
}

/// Needs `HSICGRU_CS_DATA` pointing at canonical CSV files holding CS2_35..CS2_38.
fn criterion_9(r: &mut Report) {
    let Ok(paths) = std::env::var("HSICGRU_CS_DATA") else {
        r.line(9, "SKIP", "set HSICGRU_CS_DATA to canonical CS2 CSV files to run");
        return;
    };
    let files: Vec<&str> = paths.split(':').filter(|p| !p.is_empty()).collect();
    let data = match load_many(&files) {
        Ok(d) => d,
        Err(e) => return r.check(9, false, &format!("cannot load CS data: {e}")),
    };
    let splits = match split_leave_one_battery_out(&data, "CS2_35", "CS2_36") {
        Ok(s) => s,
        Err(e) => return r.check(9, false, &format!("cannot split CS data: {e}")),
    };
    let preset = builtin_preset("cs").unwrap();
    let mut mae = Vec::new();
    for model in ["gru", "gru-hsic"] {
        let out = train(preset.model(model).unwrap(), &splits).unwrap();
        mae.push(evaluate(&out.model, std::slice::from_ref(&splits.test)).unwrap().0.mae);
    }
    r.check(
        9,
        mae[1] < mae[0] && mae[1] < 0.02,
        &format!("CS2_35: GRU-HSIC MAE {:.6} vs GRU MAE {:.6} (ordering, and < 0.02)", mae[1], mae[0]),
    );
}

#[test]
fn acceptance_criteria() {
    let mut r = Report { failures: Vec::new() };
    criterion_1(&mut r);
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    criterion_5(&mut r);
    let plain = criterion_6(&mut r);
    criterion_7(&mut r, &plain);
    criterion_8(&mut r, &plain);
    criterion_9(&mut r);
    assert!(r.failures.is_empty(), "failed: {:#?}", r.failures);
}
