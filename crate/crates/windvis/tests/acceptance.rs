//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal};
use windvis::cli::parse_speeds;
use windvis::dataset::synthesize_samples;
use windvis_core::eval::{binned_report, compare_to_turbulence, rmse, EvalRecord};
use windvis_core::features::subtract_temporal_mean;
use windvis_core::flagsim::DatasetPlan;
use windvis_core::lstm::{backward, cell_step, forward, predict, LayerParams, LayerState};
use windvis_core::physics::{measurable_range, sigma_u_band, Bounds, TurbulenceWindows};
use windvis_core::train::{balance_dataset, evaluate, fit, mse_loss, split_indices};
use windvis_core::types::ManifestRecord;
use windvis_core::{
    DatasetManifest, ExtractorSpec, FeatureSequence, LstmConfig, LstmNetwork, PhysicalSetup, Rng,
    Sample, SourceTag, TrainConfig, Variant, WindSeries,
};

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    let line = format!(
        "criterion {n:>2} {}: {name}: {detail}\n",
        if ok { "PASS" } else { "FAIL" }
    );
    // Bypasses the harness's output capture so the verdict is always shown.
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(ok, "criterion {n} failed: {detail}");
}

// --- 1 ---------------------------------------------------------------------

#[test]
fn c01_measurable_range() {
    let setup = PhysicalSetup {
        flag_length_m: 1.5,
        frame_rate_hz: 15.0,
        clip_duration_s: 2.0,
        ..PhysicalSetup::default()
    };
    let start = Instant::now();
    let r = measurable_range(&setup).unwrap();
    let elapsed = start.elapsed();
    let ok = r.u_low_mps == 0.75
        && r.u_high_mps == 11.25
        && r.f_nyquist_hz == 7.5
        && Bounds::FIELD.low == 0.75
        && Bounds::FIELD.high == 11.0
        && elapsed < Duration::from_millis(1);
    verdict(
        1,
        "measurable range",
        ok,
        &format!(
            "{} .. {} m/s, nyquist {} Hz in {elapsed:?}",
            r.u_low_mps, r.u_high_mps, r.f_nyquist_hz
        ),
    );
}

// --- 2 ---------------------------------------------------------------------

fn grad_net(seed: u64) -> (LstmNetwork, FeatureSequence) {
    let config = LstmConfig {
        input_size: 3,
        hidden_size: 4,
        num_layers: 2,
        use_bias: true,
    };
    let mut rng = Rng::new(seed);
    let net = LstmNetwork::new(config, &mut rng).unwrap();
    let values = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
    (net, FeatureSequence::new(3, 5, values).unwrap())
}

#[test]
fn c02_gradient_check() {
    let eps = 1e-5;
    let start = Instant::now();
    let mut worst = (0.0f64, 0u64, 0usize, 0.0f64, 0.0f64);
    let mut worst_norm = 0.0f64;
    for seed in 0..10 {
        let (net, seq) = grad_net(seed);
        let (_, cache) = forward(&net, &seq).unwrap();
        let analytic = backward(&net, &cache, 1.0).unwrap().0;
        let mut probe = net.clone();
        let (mut diff_sq, mut a_sq) = (0.0, 0.0);
        for (i, &a) in analytic.iter().enumerate() {
            let p0 = net.params()[i];
            probe.params_mut()[i] = p0 + eps;
            let up = predict(&probe, &seq).unwrap();
            probe.params_mut()[i] = p0 - eps;
            let down = predict(&probe, &seq).unwrap();
            probe.params_mut()[i] = p0;
            let fd = (up - down) / (2.0 * eps);
            let rel = (a - fd).abs() / (a.abs() + fd.abs() + 1e-12);
            if rel > worst.0 {
                worst = (rel, seed, i, a, fd);
            }
            diff_sq += (a - fd) * (a - fd);
            a_sq += a * a;
        }
        worst_norm = worst_norm.max((diff_sq / a_sq).sqrt());
    }
    let elapsed = start.elapsed();
    let (rel, seed, i, a, fd) = worst;
    verdict(
        2,
        "gradient check",
        rel < 1e-6 && elapsed < Duration::from_secs(10),
        &format!(
            "max per-parameter relative error {rel:.2e} (seed {seed}, param {i}: bptt {a:.3e}, fd {fd:.3e}); \
             max norm-wise {worst_norm:.2e}; {elapsed:?}"
        ),
    );
}

// --- 3 ---------------------------------------------------------------------

#[test]
fn c03_cell_fixed_points() {
    let mut rng = Rng::new(3);
    let cfg = LstmConfig {
        input_size: 5,
        hidden_size: 6,
        num_layers: 2,
        use_bias: true,
    };
    let zero = LstmNetwork::zeros(cfg).unwrap();
    let mut zero_ok = true;
    for _ in 0..10 {
        let t = rng.random_range(1..40);
        let values = (0..5 * t).map(|_| rng.random_range(-10.0..10.0)).collect();
        let (_, cache) = forward(&zero, &FeatureSequence::new(5, t, values).unwrap()).unwrap();
        for layer in 0..2 {
            zero_ok &= cache.hidden(layer).len() == 6 * t;
            zero_ok &= cache.hidden(layer).iter().all(|&h| h == 0.0);
        }
    }

    // Input gate pinned shut, forget gate pinned open, everything else random.
    let (hs, d) = (6, 3);
    let mut w: Vec<f64> = (0..4 * hs * (hs + d))
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let mut b: Vec<f64> = (0..4 * hs).map(|_| rng.random_range(-2.0..2.0)).collect();
    w[..2 * hs * (hs + d)].fill(0.0);
    b[..hs].fill(-800.0);
    b[hs..2 * hs].fill(800.0);
    let p = LayerParams {
        hidden_size: hs,
        input_size: d,
        w: &w,
        b: Some(&b),
    };
    let c0: Vec<f64> = (0..hs).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut state = LayerState {
        h: (0..hs).map(|_| rng.random_range(-1.0..1.0)).collect(),
        c: c0.clone(),
    };
    let mut carry_ok = true;
    for _ in 0..100 {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        state = cell_step(&p, &state, &x).unwrap();
        carry_ok &= state.c == c0;
    }
    verdict(
        3,
        "cell fixed points",
        zero_ok && carry_ok,
        &format!("zero weights give h = 0: {zero_ok}; saturated forget carries c exactly over 100 steps: {carry_ok}"),
    );
}

// --- 4 ---------------------------------------------------------------------

/// Features as they come back from a feature file: rounded to `f32`.
fn stored(seq: &FeatureSequence) -> FeatureSequence {
    let values = seq.values().iter().map(|&v| f64::from(v as f32)).collect();
    FeatureSequence::new(seq.num_features(), seq.num_frames(), values).unwrap()
}

#[test]
fn c04_nm_background_invariance() {
    let plan = DatasetPlan::new(vec![2.0, 5.0, 8.0], 4);
    let (raw, _) = synthesize_samples(&plan, 21, &ExtractorSpec::default(), Variant::Raw).unwrap();
    let d = raw[0].features.num_features();
    let net = LstmNetwork::new(LstmConfig::desk(d), &mut Rng::new(4)).unwrap();
    let mut rng = Rng::new(44);

    let (mut exact_offsets, mut inputs_same, mut preds_same, mut loss_same) =
        (true, true, true, true);
    let mut raw_changed = 0usize;
    let mut cases = 0usize;
    for s in &raw {
        let base = stored(&s.features);
        for _ in 0..4 {
            let k = rng.random_range(0..d);
            // Offsets on a 1/8 grid add to f32-valued features without rounding.
            let c = f64::from(rng.random_range(-400i32..=400)) / 8.0;
            let shifted = base.offset_feature(k, c).unwrap();
            exact_offsets &=
                (0..base.num_frames()).all(|t| shifted.get(k, t) - c == base.get(k, t));
            let (a, b) = (
                subtract_temporal_mean(&base).unwrap(),
                subtract_temporal_mean(&shifted).unwrap(),
            );
            inputs_same &= a
                .values()
                .iter()
                .zip(b.values())
                .all(|(x, y)| x.to_bits() == y.to_bits());
            let (pa, pb) = (predict(&net, &a).unwrap(), predict(&net, &b).unwrap());
            preds_same &= pa.to_bits() == pb.to_bits();
            let la = mse_loss(&[(s.label_mps, pa)]).unwrap();
            let lb = mse_loss(&[(s.label_mps, pb)]).unwrap();
            loss_same &= la.to_bits() == lb.to_bits();
            if c != 0.0 && predict(&net, &base).unwrap() != predict(&net, &shifted).unwrap() {
                raw_changed += 1;
            }
            cases += 1;
        }
    }
    verdict(
        4,
        "NM background invariance",
        exact_offsets && inputs_same && preds_same && loss_same && raw_changed > 0,
        &format!(
            "{cases} offset cases (exact additions: {exact_offsets}): NM inputs/predictions/losses bit-identical {}/{}/{}; raw prediction changed in {raw_changed}",
            inputs_same, preds_same, loss_same
        ),
    );
}

// --- shared synthetic experiment --------------------------------------------

const DATA_SEED: u64 = 7;
const TRAIN_SEED: u64 = 3;

fn synthetic_plan(speeds: Vec<f64>, clips: usize, drift: f64) -> DatasetPlan {
    let mut plan = DatasetPlan::new(speeds, clips);
    plan.turbulence.intensity = 0.15;
    plan.setup.flag_length_m = 1.5;
    plan.setup.frame_rate_hz = 15.0;
    plan.setup.clip_duration_s = 2.0;
    plan.render.background_drift_per_s = drift;
    plan
}

fn train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        momentum: 0.9,
        batch_size: 32,
        max_epochs: 20,
        early_stop_patience: 20,
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    }
}

struct Trained {
    network: LstmNetwork,
    val: Vec<Sample>,
    seconds: f64,
}

fn train_variant(variant: Variant) -> Trained {
    let start = Instant::now();
    let speeds = parse_speeds("uniform:1:10:60", &mut Rng::new(DATA_SEED)).unwrap();
    let plan = synthetic_plan(speeds, 10, 0.0);
    let (samples, _) =
        synthesize_samples(&plan, DATA_SEED, &ExtractorSpec::default(), variant).unwrap();
    assert_eq!(samples.len(), 600);
    let cfg = train_config();
    let (tr, va) = split_indices(samples.len(), cfg.train_fraction, &mut cfg.split_rng()).unwrap();
    let train: Vec<Sample> = tr.iter().map(|&i| samples[i].clone()).collect();
    let val: Vec<Sample> = va.iter().map(|&i| samples[i].clone()).collect();
    let d = train[0].features.num_features();
    let net = LstmNetwork::new(LstmConfig::desk(d), &mut cfg.init_rng()).unwrap();
    let outcome = fit(&net, &train, &val, &cfg).unwrap();
    Trained {
        network: outcome.network,
        val,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn nm_model() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| train_variant(Variant::Nm))
}

fn raw_model() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| train_variant(Variant::Raw))
}

fn synthetic_series() -> Vec<WindSeries> {
    let speeds = parse_speeds("uniform:1:10:60", &mut Rng::new(DATA_SEED)).unwrap();
    let plan = synthetic_plan(speeds, 10, 0.0);
    windvis_core::flagsim::plan_dataset(&plan, &Rng::new(DATA_SEED))
        .unwrap()
        .into_iter()
        .map(|p| p.series)
        .collect()
}

// --- 5 ---------------------------------------------------------------------

#[test]
fn c05_synthetic_end_to_end() {
    let m = nm_model();
    let records = evaluate(&m.network, &m.val).unwrap();
    let summary = rmse(&records, Some(Bounds::FIELD)).unwrap();
    let report = binned_report(&records, 1.0).unwrap();
    let monotone = report.is_monotone_within(Bounds::FIELD);
    let means: Vec<String> = report
        .bin_center_mps
        .iter()
        .zip(&report.mean_prediction_mps)
        .map(|(c, p)| format!("{c}:{p:.2}"))
        .collect();
    verdict(
        5,
        "synthetic end-to-end",
        summary.measurable_rmse_mps <= 1.0 && monotone && m.seconds < 600.0,
        &format!(
            "measurable-range val RMSE {:.3} m/s (n {}), binned means monotone {monotone} [{}], {:.0} s",
            summary.measurable_rmse_mps,
            summary.n_measurable,
            means.join(" "),
            m.seconds
        ),
    );
}

// --- 6 ---------------------------------------------------------------------

#[test]
fn c06_aliasing_degradation() {
    let m = nm_model();
    let plan = synthetic_plan(vec![12.0, 14.0], 10, 0.0);
    let (samples, _) = synthesize_samples(
        &plan,
        DATA_SEED + 100,
        &ExtractorSpec::default(),
        Variant::Nm,
    )
    .unwrap();
    let records = evaluate(&m.network, &samples).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, speed) in [12.0, 14.0].into_iter().enumerate() {
        let group: Vec<&EvalRecord> = records
            .iter()
            .filter(|r| r.clip_id.starts_with(&format!("s{k:03}_")))
            .collect();
        let n = group.len() as f64;
        let label = group.iter().map(|r| r.y).sum::<f64>() / n;
        let pred = group.iter().map(|r| r.y_hat).sum::<f64>() / n;
        ok &= group.len() == 10 && label - pred >= 1.0;
        parts.push(format!(
            "U {speed}: label {label:.2}, mean prediction {pred:.2}"
        ));
    }
    verdict(6, "aliasing degradation", ok, &parts.join("; "));
}

// --- 7 ---------------------------------------------------------------------

/// Independent σ_u: one pass per series over 60 s blocks and 2 s windows.
fn sigma_oracle(series: &[WindSeries], bin: f64) -> BTreeMap<i64, (f64, usize)> {
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for s in series {
        let x = &s.instantaneous_mps;
        let (short, long) = (30usize, 900usize);
        let mut start = 0;
        while start + long <= x.len() {
            let mut block = 0.0;
            for v in &x[start..start + long] {
                block += v;
            }
            block /= long as f64;
            let mut w = start;
            while w + short <= start + long {
                let mut m = 0.0;
                for v in &x[w..w + short] {
                    m += v;
                }
                m /= short as f64;
                let e = acc.entry((block / bin).floor() as i64).or_insert((0.0, 0));
                e.0 += (m - block) * (m - block);
                e.1 += 1;
                w += short;
            }
            start += long;
        }
    }
    acc
}

#[test]
fn c07_turbulence_baseline() {
    let series = synthetic_series();
    let stats = sigma_u_band(&series, 0.5, TurbulenceWindows::default()).unwrap();
    let oracle = sigma_oracle(&series, 0.5);
    let exact = oracle.len() == stats.bin_centers_mps.len()
        && oracle.iter().enumerate().all(|(i, (&k, &(sum, n)))| {
            stats.bin_centers_mps[i].to_bits() == ((k as f64 + 0.5) * 0.5).to_bits()
                && stats.counts[i] == n
                && stats.sigma_u_mps[i].to_bits() == (sum / n as f64).sqrt().to_bits()
        });

    let m = nm_model();
    let records = evaluate(&m.network, &m.val).unwrap();
    let report = binned_report(&records, 1.0).unwrap();
    let cmp = compare_to_turbulence(&report, &stats).unwrap();
    let median = cmp.median_ratio().unwrap_or(f64::NAN);
    verdict(
        7,
        "turbulence baseline",
        exact && (0.8..=2.5).contains(&median),
        &format!(
            "sigma_u matches oracle bit-exactly in {} bins: {exact}; median std_pred/sigma_u {median:.3} over {} bins",
            oracle.len(),
            cmp.ratio.len()
        ),
    );
}

// --- 8 ---------------------------------------------------------------------

#[test]
fn c08_balancer_contract() {
    let mut rng = Rng::new(8);
    let dist = LogNormal::new(1.0, 0.6).unwrap();
    let records: Vec<ManifestRecord> = (0..10_000)
        .map(|i| ManifestRecord {
            clip_id: format!("c{i:05}"),
            path: format!("{i}.wanf"),
            label_mps: dist.sample(&mut rng),
            timestamp_s: 0.0,
            source_tag: SourceTag::Synthetic,
        })
        .collect();
    let manifest = DatasetManifest::new(records).unwrap();

    let mut hist: BTreeMap<i64, usize> = BTreeMap::new();
    for r in manifest.records() {
        *hist.entry((r.label_mps * 4.0).floor() as i64).or_default() += 1;
    }
    let by_id: std::collections::HashMap<&str, &ManifestRecord> = manifest
        .records()
        .iter()
        .map(|r| (r.clip_id.as_str(), r))
        .collect();
    let mut all_ok = true;
    let mut detail = Vec::new();
    for cap in [1usize, 25, 120, 10_000] {
        let kept = balance_dataset(&manifest, 0.25, cap, &mut Rng::new(cap as u64)).unwrap();
        let mut got: BTreeMap<i64, usize> = BTreeMap::new();
        let mut ids = HashSet::new();
        for r in kept.records() {
            *got.entry((r.label_mps * 4.0).floor() as i64).or_default() += 1;
            ids.insert(r.clip_id.clone());
        }
        let expected: BTreeMap<i64, usize> = hist.iter().map(|(&k, &n)| (k, n.min(cap))).collect();
        let ok = got == expected
            && got.values().all(|&n| n <= cap)
            && ids.len() == kept.len()
            && kept
                .records()
                .iter()
                .all(|r| by_id.get(r.clip_id.as_str()) == Some(&r));
        all_ok &= ok;
        detail.push(format!(
            "cap {cap}: kept {} in {} bins",
            kept.len(),
            got.len()
        ));
    }
    verdict(8, "balancer contract", all_ok, &detail.join("; "));
}

// --- 9 ---------------------------------------------------------------------

fn run(args: &[&str], cwd: &Path) {
    let o = Command::new(env!("CARGO_BIN_EXE_windvis"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    assert!(
        o.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn pipeline(root: &Path, threads: &str) {
    fs::create_dir_all(root).unwrap();
    run(
        &[
            "--threads",
            threads,
            "gen",
            "--speeds",
            "uniform:1:10:6",
            "--clips-per-speed",
            "5",
            "--seed",
            "9",
            "--out",
            "data",
        ],
        root,
    );
    run(
        &[
            "--threads",
            threads,
            "train",
            "--manifest",
            "data/manifest.csv",
            "--out",
            "model",
            "--seed",
            "9",
            "--hidden",
            "12",
            "--epochs",
            "4",
            "--batch",
            "8",
            "--lr",
            "0.05",
        ],
        root,
    );
    run(
        &[
            "--threads",
            threads,
            "eval",
            "--manifest",
            "data/manifest.csv",
            "--checkpoint",
            "model/model.wanw",
            "--out",
            "eval",
            "--series",
            "data/series.csv",
        ],
        root,
    );
}

#[test]
fn c09_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a, "1");
    pipeline(&b, "2");
    let files = [
        "data/manifest.csv",
        "data/series.csv",
        "model/model.wanw",
        "model/split.csv",
        "eval/summary.csv",
        "eval/report.csv",
        "eval/predictions.csv",
        "eval/sigma.csv",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap())
        .collect();
    let features_same = fs::read_dir(a.join("data/features")).unwrap().all(|e| {
        let name = e.unwrap().file_name();
        fs::read(a.join("data/features").join(&name)).unwrap()
            == fs::read(b.join("data/features").join(&name)).unwrap()
    });
    verdict(
        9,
        "determinism",
        differing.is_empty() && features_same,
        &format!(
            "{} artifacts compared across two runs (1 and 2 threads); differing: {differing:?}; feature files identical: {features_same}",
            files.len()
        ),
    );
}

// --- 10 --------------------------------------------------------------------

#[test]
fn c10_generalization_probe() {
    let (drift_a, drift_b) = (0.0, 0.005);
    let speeds = parse_speeds("uniform:1:10:30", &mut Rng::new(DATA_SEED + 200)).unwrap();
    let measure = |m: &Trained, variant: Variant, drift: f64| {
        let plan = synthetic_plan(speeds.clone(), 8, drift);
        let (samples, _) =
            synthesize_samples(&plan, DATA_SEED + 200, &ExtractorSpec::default(), variant).unwrap();
        rmse(
            &evaluate(&m.network, &samples).unwrap(),
            Some(Bounds::FIELD),
        )
        .unwrap()
        .measurable_rmse_mps
    };
    let (nm, raw) = (nm_model(), raw_model());
    let (nm_a, nm_b) = (
        measure(nm, Variant::Nm, drift_a),
        measure(nm, Variant::Nm, drift_b),
    );
    let (raw_a, raw_b) = (
        measure(raw, Variant::Raw, drift_a),
        measure(raw, Variant::Raw, drift_b),
    );
    let nm_deg = nm_b / nm_a - 1.0;
    let raw_deg = raw_b / raw_a - 1.0;
    verdict(
        10,
        "generalization probe",
        nm_deg < 0.5 && raw_deg > nm_deg,
        &format!(
            "drift {drift_a} -> {drift_b}/s: NM {nm_a:.3} -> {nm_b:.3} m/s ({:+.1}%), raw {raw_a:.3} -> {raw_b:.3} m/s ({:+.1}%)",
            100.0 * nm_deg,
            100.0 * raw_deg
        ),
    );
}
