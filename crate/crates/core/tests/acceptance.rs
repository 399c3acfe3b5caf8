//! Acceptance suite: one test per release criterion, each printing a single
//! PASS or FAIL line. The heavy fixtures (five seeded corpora with trained
//! models) build once under the cargo tmp dir and are reused across runs;
//! a fingerprint file invalidates them when the recipe changes.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use entsel::config::ExperimentConfig;
use entsel::corpus::container::{load_checkpoint, load_features, save_checkpoint, save_features};
use entsel::corpus::synth::{add_noise, apply_reverb};
use entsel::corpus::wav::read_wav;
use entsel::corpus::{load_utterances, Manifest, Utterance};
use entsel::data::{frameset, stack_for_net};
use entsel::entropy::{binned_entropy, entropy_profile, nrse, EntropyParams};
use entsel::features::gfb_extract;
use entsel::net::{
    forward_with_taps, gradients, init_network, train, ActivationTrace, ConvSpec, Head,
    NetworkSpec, Parameters, TrainConfig,
};
use entsel::pipeline::run_command;
use entsel::report::{build_report, history_to_pass_rows, pearson_r, ReportInputs};
use entsel::selection::{run_loop, score_utterances, LoopData, LoopHistory, ScoreTable};
use entsel::Error;

const SEEDS: [u64; 5] = [1000, 1001, 1002, 1003, 1004];
/// Bump when fixture-affecting code changes so stale cached corpora rebuild.
const FIXTURE_STAMP: &str = "fixture-v1";
/// One-sided 95% Student t critical value at 4 degrees of freedom.
const T_95_DF4: f64 = 2.1318;

fn verdict(name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {name} failed: {detail}");
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn refs(utts: &[Utterance]) -> Vec<&Utterance> {
    utts.iter().collect()
}

struct Fixture {
    seed: u64,
    cfg: ExperimentConfig,
    model_path: PathBuf,
    spec: NetworkSpec,
    params: Parameters<f32>,
    train: Vec<Utterance>,
    cv: Vec<Utterance>,
    pool: Vec<Utterance>,
    eval_matched: Vec<Utterance>,
    eval_mismatched: Vec<Utterance>,
}

impl Fixture {
    fn loop_data(&self) -> LoopData<'_> {
        LoopData {
            train: &self.train,
            cv: &self.cv,
            pool: &self.pool,
            eval_matched: &self.eval_matched,
            eval_mismatched: &self.eval_mismatched,
        }
    }
}

fn fixture_toml(workdir: &Path, seed: u64) -> String {
    format!(
        r#"config_version = 1

[paths]
workdir = "{}"

[train]
lr0 = 0.5
constant_epochs = 8
minibatch = 128
max_epochs = 40
seed = 11

[adapt]
lr0 = 0.04
minibatch = 128
max_epochs = 8
seed = 12

[pass]
k0 = 20
delta_k = 5
num_passes = 3

[synth]
num_classes = 8
train_utts = 48
cv_utts = 12
eval_matched_utts = 100
pool_utts = 60
eval_mismatched_utts = 100
min_duration = 1.5
max_duration = 3.0
seed = {seed}
"#,
        workdir.display()
    )
}

fn load_split(cfg: &ExperimentConfig, split: &str) -> Vec<Utterance> {
    let manifest = Manifest::load(&cfg.manifest_path(split)).unwrap();
    load_utterances(&manifest, &cfg.gfb).unwrap()
}

fn build_fixture(seed: u64) -> Fixture {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("accept_{seed}"));
    fs::create_dir_all(&root).unwrap();
    let workdir = root.join("work");
    let toml = fixture_toml(&workdir, seed);
    let stamp_path = root.join("fingerprint");
    let stamp = format!("{FIXTURE_STAMP}\n{toml}");
    let cfg = ExperimentConfig::from_toml_str(&toml, "acceptance", &[]).unwrap();
    let model_path = cfg.workpath(&cfg.paths.model);
    let cached = fs::read_to_string(&stamp_path)
        .map(|s| s == stamp)
        .unwrap_or(false)
        && model_path.is_file();
    if !cached {
        let _ = fs::remove_dir_all(&workdir);
        run_command("synth", &cfg).unwrap();
        run_command("extract", &cfg).unwrap();
        run_command("train", &cfg).unwrap();
        fs::write(&stamp_path, &stamp).unwrap();
    }
    let ckpt = load_checkpoint(&model_path).unwrap();
    Fixture {
        seed,
        model_path,
        spec: ckpt.spec,
        params: ckpt.params,
        train: load_split(&cfg, "train"),
        cv: load_split(&cfg, "cv"),
        pool: load_split(&cfg, "pool"),
        eval_matched: load_split(&cfg, "eval_matched"),
        eval_mismatched: load_split(&cfg, "eval_mismatched"),
        cfg,
    }
}

fn fixtures() -> &'static [Fixture] {
    static FIXTURES: OnceLock<Vec<Fixture>> = OnceLock::new();
    FIXTURES.get_or_init(|| SEEDS.iter().map(|&s| build_fixture(s)).collect())
}

/// Per seed: score tables of (eval_matched, eval_mismatched) under the
/// unadapted model at the default layer-3 tap.
fn eval_tables() -> &'static [(ScoreTable, ScoreTable)] {
    static TABLES: OnceLock<Vec<(ScoreTable, ScoreTable)>> = OnceLock::new();
    TABLES.get_or_init(|| {
        fixtures()
            .iter()
            .map(|f| {
                let m =
                    score_utterances(&f.spec, &f.params, &refs(&f.eval_matched), &f.cfg.entropy)
                        .unwrap();
                let mm = score_utterances(
                    &f.spec,
                    &f.params,
                    &refs(&f.eval_mismatched),
                    &f.cfg.entropy,
                )
                .unwrap();
                (m, mm)
            })
            .collect()
    })
}

/// Per seed: the three-pass loop (k = 20, 25, 30) without artifact output.
fn loop_histories() -> &'static [LoopHistory] {
    static LOOPS: OnceLock<Vec<LoopHistory>> = OnceLock::new();
    LOOPS.get_or_init(|| {
        fixtures()
            .iter()
            .map(|f| {
                run_loop(
                    &f.spec,
                    &f.params,
                    &f.loop_data(),
                    &f.cfg.pass_config(),
                    None,
                )
                .unwrap()
                .1
            })
            .collect()
    })
}

fn mean_nrse(table: &ScoreTable) -> f64 {
    mean(&table.rows().iter().map(|r| r.nrse).collect::<Vec<_>>())
}

#[test]
fn c01_entropy_unit_suite() {
    let t0 = Instant::now();
    let ln_b = 32f64.ln();

    let constant = binned_entropy(&vec![0.37; 91], 32, 0.0, 1.0);

    let mut split_vals = vec![0.1; 45];
    split_vals.extend(std::iter::repeat(0.9).take(46));
    let split = binned_entropy(&split_vals, 32, 0.0, 1.0) / ln_b;
    let (p, q) = (45.0f64 / 91.0, 46.0f64 / 91.0);
    let closed_form = (-p * p.ln() - q * q.ln()) / ln_b;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let uniform: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
    let uniform_h = binned_entropy(&uniform, 32, 0.0, 1.0) / ln_b;

    let mut fuzz_in_range = true;
    for _ in 0..10_000 {
        let len = rng.random_range(1..=300);
        let bins = rng.random_range(2..=64usize);
        let window: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
        let h = binned_entropy(&window, bins, 0.0, 1.0) / (bins as f64).ln();
        if !(0.0..=1.0).contains(&h) {
            fuzz_in_range = false;
        }
    }

    let trace = ActivationTrace {
        utterance_id: "const".to_string(),
        layer_index: 1,
        values: Array2::from_elem((120, 4), 0.5f32),
    };
    let profile = entropy_profile(&trace, &EntropyParams::default()).unwrap();
    let constant_nrse = nrse(&profile, 0.70).unwrap();

    let elapsed = t0.elapsed().as_secs_f64();
    let ok = constant == 0.0
        && (split - closed_form).abs() < 1e-12
        && (split - 0.2000).abs() <= 1e-4
        && uniform_h >= 0.995
        && fuzz_in_range
        && constant_nrse == 0.0
        && elapsed < 10.0;
    verdict(
        "01 entropy unit suite",
        ok,
        &format!("split={split:.6} uniform={uniform_h:.6} elapsed={elapsed:.1}s"),
    );
}

fn random_tiny_spec(rng: &mut ChaCha8Rng, with_head: bool) -> NetworkSpec {
    let input_frames = [3usize, 5, 7][rng.random_range(0..3)];
    let input_bands = rng.random_range(5..=8);
    let head = if with_head {
        Head::TimeFreq {
            time: ConvSpec {
                num_filters: rng.random_range(2..=3),
                kernel_width: 2,
                pool_width: rng.random_range(1..=2),
            },
            freq: ConvSpec {
                num_filters: rng.random_range(2..=3),
                kernel_width: rng.random_range(2..=3),
                pool_width: rng.random_range(1..=2),
            },
        }
    } else {
        Head::None
    };
    let hidden = (0..rng.random_range(1..=2))
        .map(|_| rng.random_range(3..=6))
        .collect();
    NetworkSpec {
        input_frames,
        input_bands,
        head,
        hidden,
        num_classes: rng.random_range(3..=5),
    }
}

#[test]
fn c02_gradient_check() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;

    for net_index in 0..50u64 {
        let spec = random_tiny_spec(&mut rng, net_index >= 25);
        spec.validate().unwrap();
        let params = init_network::<f64>(&spec, 900 + net_index).unwrap();
        let rows = 4;
        let inputs =
            Array2::from_shape_fn((rows, spec.input_dim()), |_| rng.random_range(-1.5..1.5));
        let labels: Vec<u32> = (0..rows)
            .map(|_| rng.random_range(0..spec.num_classes as u32))
            .collect();

        let (_, analytic) = gradients(&spec, &params, &inputs.view(), &labels).unwrap();
        let analytic = analytic.flatten();
        let mut flat = params.flatten();
        let mut probe = params.clone();
        let loss_with = |flat: &mut Vec<f64>, j: usize, v: f64, probe: &mut Parameters<f64>| {
            let old = flat[j];
            flat[j] = v;
            probe.assign_flat(flat).unwrap();
            flat[j] = old;
            gradients(&spec, probe, &inputs.view(), &labels).unwrap().0
        };

        for j in 0..flat.len() {
            let theta = flat[j];
            let h = 2e-5 * theta.abs().max(1.0);
            let coarse = (loss_with(&mut flat, j, theta + h, &mut probe)
                - loss_with(&mut flat, j, theta - h, &mut probe))
                / (2.0 * h);
            let fine = (loss_with(&mut flat, j, theta + h / 2.0, &mut probe)
                - loss_with(&mut flat, j, theta - h / 2.0, &mut probe))
                / h;
            // Max pooling makes the loss piecewise; where the two step sizes
            // disagree the parameter straddles a pool-argmax switch and the
            // numeric estimate is meaningless, so it is skipped.
            if (coarse - fine).abs() > 1e-3 * coarse.abs().max(fine.abs()).max(1e-3) {
                skipped += 1;
                continue;
            }
            let rel = (analytic[j] - fine).abs() / analytic[j].abs().max(fine.abs()).max(1e-5);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }

    let elapsed = t0.elapsed().as_secs_f64();
    let skip_share = skipped as f64 / (checked + skipped) as f64;
    let ok = max_rel < 1e-4 && skip_share < 0.01 && elapsed < 60.0;
    verdict(
        "02 gradient check",
        ok,
        &format!(
            "max_rel={max_rel:.2e} over {checked} params, skipped {skipped}, elapsed={elapsed:.1}s"
        ),
    );
}

#[test]
fn c03_mismatch_raises_nrse() {
    let fx = fixtures();
    let tables = eval_tables();
    let mut deltas = Vec::new();
    let mut detail = String::new();
    for (f, (matched_table, _)) in fx.iter().zip(tables) {
        let clean_mean = mean_nrse(matched_table);
        let manifest = Manifest::load(&f.cfg.manifest_path("eval_matched")).unwrap();
        let corrupted: Vec<Utterance> = manifest
            .entries
            .iter()
            .enumerate()
            .map(|(i, entry)| {
                let mut audio =
                    read_wav(&manifest.resolve(entry.audio_path.as_ref().unwrap())).unwrap();
                audio.utterance_id = entry.utterance_id.clone();
                let wet = apply_reverb(&audio, 0.5, f.seed * 1_000_000 + 2 * i as u64).unwrap();
                let noisy = add_noise(&wet, 0.0, f.seed * 1_000_000 + 2 * i as u64 + 1).unwrap();
                Utterance {
                    utterance_id: entry.utterance_id.clone(),
                    features: gfb_extract(&noisy, &f.cfg.gfb).unwrap(),
                    labels: None,
                    condition: "corrupted".to_string(),
                }
            })
            .collect();
        let corrupted_table =
            score_utterances(&f.spec, &f.params, &refs(&corrupted), &f.cfg.entropy).unwrap();
        let corrupted_mean = mean_nrse(&corrupted_table);
        deltas.push(corrupted_mean - clean_mean);
        detail.push_str(&format!("{:.3}/{:.3} ", clean_mean, corrupted_mean));
    }
    let t = mean(&deltas) / (sample_sd(&deltas) / (deltas.len() as f64).sqrt());
    let ok = t > T_95_DF4;
    verdict(
        "03 mismatch raises NRSE",
        ok,
        &format!("clean/corrupted means {detail}paired t={t:.1} vs {T_95_DF4}"),
    );
}

#[test]
fn c04_nrse_tracks_frame_error() {
    fixtures();
    let t0 = Instant::now();
    let mut hits = 0;
    let mut rs = Vec::new();
    for (matched, mismatched) in eval_tables() {
        let rows: Vec<_> = matched.rows().iter().chain(mismatched.rows()).collect();
        let xs: Vec<f64> = rows.iter().map(|r| r.nrse).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.frame_error.unwrap()).collect();
        assert_eq!(xs.len(), 200);
        let r = pearson_r(&xs, &ys).unwrap();
        if r >= 0.2 {
            hits += 1;
        }
        rs.push(format!("{r:.3}"));
    }
    let elapsed = t0.elapsed().as_secs_f64();
    let ok = hits >= 4 && elapsed < 600.0;
    verdict(
        "04 NRSE tracks frame error",
        ok,
        &format!(
            "r per seed [{}], {hits}/5 >= 0.2, elapsed={elapsed:.1}s",
            rs.join(", ")
        ),
    );
}

#[test]
fn c05_selection_beats_all_data() {
    let fx = fixtures();
    let mut selection_no_worse = 0;
    let mut both_improve = 0;
    let mut detail = String::new();
    for f in fx {
        let mut cfg = f.cfg.pass_config();
        cfg.num_passes = 1;
        cfg.k0 = f.pool.len() / 2;
        let (_, half) = run_loop(&f.spec, &f.params, &f.loop_data(), &cfg, None).unwrap();
        cfg.k0 = f.pool.len();
        let (_, all) = run_loop(&f.spec, &f.params, &f.loop_data(), &cfg, None).unwrap();
        let baseline = half.baseline_mismatched.frame_error_rate;
        let half_fer = half.passes[0].eval_mismatched.frame_error_rate;
        let all_fer = all.passes[0].eval_mismatched.frame_error_rate;
        if half_fer <= all_fer {
            selection_no_worse += 1;
        }
        if half_fer < baseline && all_fer < baseline {
            both_improve += 1;
        }
        detail.push_str(&format!("{baseline:.3}>{half_fer:.3}/{all_fer:.3} "));
    }
    let ok = selection_no_worse >= 3 && both_improve == 5;
    verdict(
        "05 selection beats all-data",
        ok,
        &format!("base>half/all {detail}k/2<=k {selection_no_worse}/5, improved {both_improve}/5"),
    );
}

#[test]
fn c06_iteration_helps() {
    let mut hits = 0;
    let mut detail = String::new();
    for history in loop_histories() {
        let p0 = history.passes[0].eval_mismatched.frame_error_rate;
        let p2 = history.passes[2].eval_mismatched.frame_error_rate;
        if p2 <= p0 {
            hits += 1;
        }
        detail.push_str(&format!("{p0:.3}->{p2:.3} "));
    }
    let ok = hits >= 4;
    verdict(
        "06 iteration helps",
        ok,
        &format!("pass0->pass2 {detail}{hits}/5"),
    );
}

#[test]
fn c07_matched_retention() {
    let mut ok = true;
    let mut detail = String::new();
    for history in loop_histories() {
        let baseline = history.baseline_matched.frame_error_rate;
        let after = history.passes.last().unwrap().eval_matched.frame_error_rate;
        if after > 1.1 * baseline {
            ok = false;
        }
        detail.push_str(&format!("{baseline:.3}->{after:.3} "));
    }
    verdict(
        "07 matched retention",
        ok,
        &format!("matched FER {detail}limit 1.1x"),
    );
}

#[test]
fn c08_layer_sweep_report() {
    let f = &fixtures()[0];
    let spec = NetworkSpec {
        input_frames: 17,
        input_bands: 40,
        head: Head::None,
        hidden: vec![96; 5],
        num_classes: 8,
    };
    let init = init_network::<f32>(&spec, 501).unwrap();
    let train_set = frameset(&refs(&f.train), &spec).unwrap();
    let cv_set = frameset(&refs(&f.cv), &spec).unwrap();
    let train_cfg = TrainConfig {
        lr0: 0.5,
        constant_epochs: 4,
        minibatch: 128,
        l2: 0.0,
        max_epochs: 8,
        seed: 21,
    };
    let (params, _) = train(&spec, &init, &train_set, &cv_set, &train_cfg).unwrap();

    let mixed: Vec<&Utterance> = f
        .eval_matched
        .iter()
        .chain(f.eval_mismatched.iter())
        .collect();
    let mut tables = Vec::new();
    for layer in 2..=5usize {
        let entropy = EntropyParams {
            layer_index: layer,
            ..f.cfg.entropy.clone()
        };
        tables.push((
            layer,
            score_utterances(&spec, &params, &mixed, &entropy).unwrap(),
        ));
    }

    let history = &loop_histories()[0];
    let passes = history_to_pass_rows(history);
    let trace = |utt: &Utterance, label: &str| {
        let stacked = stack_for_net(&utt.features, &spec).unwrap();
        forward_with_taps(&spec, &params, &stacked.view(), 3, label)
            .unwrap()
            .1
    };
    let matched_trace = trace(&f.eval_matched[0], "matched");
    let mismatched_trace = trace(&f.eval_mismatched[0], "mismatched");

    let out = TempDir::new().unwrap();
    let report = build_report(
        &ReportInputs {
            tables: &tables,
            passes: &passes,
            baseline: Some((
                history.baseline_matched.frame_error_rate,
                history.baseline_mismatched.frame_error_rate,
            )),
            matched_trace: &matched_trace,
            mismatched_trace: &mismatched_trace,
        },
        out.path(),
    )
    .unwrap();

    let text = fs::read_to_string(out.path().join("correlations.csv")).unwrap();
    let mut layers_seen = Vec::new();
    let mut rs_in_range = true;
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        layers_seen.push(fields[0].parse::<usize>().unwrap());
        let r: f64 = fields[1].parse().unwrap();
        if !(-1.0..=1.0).contains(&r) {
            rs_in_range = false;
        }
        assert_eq!(fields[2].parse::<usize>().unwrap(), 200);
    }
    let ok = layers_seen == vec![2, 3, 4, 5] && rs_in_range && report.correlations.len() == 4;
    verdict(
        "08 layer sweep report",
        ok,
        &format!(
            "layers {layers_seen:?}, r values [{}]",
            report
                .correlations
                .iter()
                .map(|c| format!("{:.3}", c.r))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

#[test]
fn c09_loop_determinism() {
    let f = &fixtures()[0];
    let run = |dir: &Path| {
        run_loop(
            &f.spec,
            &f.params,
            &f.loop_data(),
            &f.cfg.pass_config(),
            Some(dir),
        )
        .unwrap();
    };
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    run(a.path());
    run(b.path());

    let mut names = vec!["metrics.csv".to_string()];
    for pass in 0..3 {
        names.push(format!("scores_pass{pass}.csv"));
        names.push(format!("selected_pass{pass}.txt"));
        names.push(format!("model_pass{pass}.ckpt"));
    }
    let mut identical = true;
    for name in &names {
        let bytes_a = fs::read(a.path().join(name)).unwrap();
        let bytes_b = fs::read(b.path().join(name)).unwrap();
        if bytes_a != bytes_b {
            identical = false;
        }
    }
    verdict(
        "09 loop determinism",
        identical,
        &format!("{} artifacts byte-compared", names.len()),
    );
}

#[test]
fn c10_formats() {
    let f = &fixtures()[0];
    let dir = TempDir::new().unwrap();

    // Feature container: value-level and byte-level round trip.
    let original = &f.eval_matched[0].features;
    let feat_a = dir.path().join("a.feat");
    let feat_b = dir.path().join("b.feat");
    save_features(&feat_a, original).unwrap();
    let reloaded = load_features(&feat_a).unwrap();
    let features_bitexact = reloaded.utterance_id == original.utterance_id
        && reloaded.frame_period.to_bits() == original.frame_period.to_bits()
        && reloaded.frames.shape() == original.frames.shape()
        && reloaded
            .frames
            .iter()
            .zip(original.frames.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    save_features(&feat_b, &reloaded).unwrap();
    let features_bytes_stable = fs::read(&feat_a).unwrap() == fs::read(&feat_b).unwrap();

    // Checkpoint: value-level and byte-level round trip.
    let ckpt = load_checkpoint(&f.model_path).unwrap();
    let ckpt_a = dir.path().join("a.ckpt");
    let ckpt_b = dir.path().join("b.ckpt");
    save_checkpoint(&ckpt_a, &ckpt).unwrap();
    let reloaded = load_checkpoint(&ckpt_a).unwrap();
    let ckpt_bitexact = reloaded.spec == ckpt.spec
        && reloaded.summary.stage == ckpt.summary.stage
        && reloaded
            .params
            .flatten()
            .iter()
            .zip(ckpt.params.flatten().iter())
            .all(|(x, y)| x.to_bits() == y.to_bits());
    save_checkpoint(&ckpt_b, &reloaded).unwrap();
    let ckpt_bytes_stable = fs::read(&ckpt_a).unwrap() == fs::read(&ckpt_b).unwrap();

    // Malformed inputs: each loader reports an input error.
    let bad_wav = dir.path().join("bad.wav");
    fs::write(&bad_wav, b"RIFF\x10\x00\x00\x00WAVEjunk").unwrap();
    let wav_err = matches!(read_wav(&bad_wav), Err(Error::Input(_)));

    let bad_manifest = dir.path().join("bad.jsonl");
    fs::write(&bad_manifest, "not json\n").unwrap();
    let manifest_err = matches!(Manifest::load(&bad_manifest), Err(Error::Input(_)));
    let dangling = dir.path().join("dangling.jsonl");
    fs::write(
        &dangling,
        "{\"utterance_id\":\"x\",\"audio_path\":\"missing.wav\",\"condition\":\"clean\"}\n",
    )
    .unwrap();
    let dangling_err = matches!(Manifest::load(&dangling), Err(Error::Input(_)));

    let valid_bytes = fs::read(&ckpt_a).unwrap();
    let truncated = dir.path().join("trunc.ckpt");
    fs::write(&truncated, &valid_bytes[..valid_bytes.len() / 2]).unwrap();
    let truncated_err = matches!(load_checkpoint(&truncated), Err(Error::Input(_)));
    let mut flipped = valid_bytes.clone();
    flipped[0] ^= 0xff;
    let bad_magic = dir.path().join("magic.ckpt");
    fs::write(&bad_magic, &flipped).unwrap();
    let magic_err = matches!(load_checkpoint(&bad_magic), Err(Error::Input(_)));

    // A malformed WAV aborts extraction without leaving partial output.
    let tiny_root = TempDir::new().unwrap();
    let tiny_toml = format!(
        r#"config_version = 1

[paths]
workdir = "{}"

[synth]
num_classes = 3
train_utts = 2
cv_utts = 1
eval_matched_utts = 1
pool_utts = 2
eval_mismatched_utts = 1
min_duration = 0.4
max_duration = 0.6
seed = 9
"#,
        tiny_root.path().join("work").display()
    );
    let tiny_cfg = ExperimentConfig::from_toml_str(&tiny_toml, "tiny", &[]).unwrap();
    run_command("synth", &tiny_cfg).unwrap();
    let corrupt_wav = tiny_cfg.workpath("corpus/audio/train_0000.wav");
    fs::write(&corrupt_wav, b"garbage").unwrap();
    let manifest_before = fs::read(tiny_cfg.manifest_path("train")).unwrap();
    let extract_err = run_command("extract", &tiny_cfg).unwrap_err();
    let extract_aborts = extract_err.exit_code() == 1
        && !tiny_cfg
            .workpath("corpus/features/train_0000.feat")
            .exists()
        && fs::read(tiny_cfg.manifest_path("train")).unwrap() == manifest_before;

    let ok = features_bitexact
        && features_bytes_stable
        && ckpt_bitexact
        && ckpt_bytes_stable
        && wav_err
        && manifest_err
        && dangling_err
        && truncated_err
        && magic_err
        && extract_aborts;
    verdict(
        "10 formats",
        ok,
        &format!(
            "round trips bit-exact={}, malformed inputs rejected={}",
            features_bitexact && features_bytes_stable && ckpt_bitexact && ckpt_bytes_stable,
            wav_err && manifest_err && dangling_err && truncated_err && magic_err && extract_aborts
        ),
    );
}
